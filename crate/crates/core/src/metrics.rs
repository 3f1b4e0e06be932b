//! Rate objective, coherent bound, water-filling, quantization, efficiency
//! and residual Doppler.

use ndarray::Array2;
use num_complex::Complex;

use crate::channel::{ChannelRealization, FrequencyView, Twiddles};
use crate::config::RisConfiguration;
use crate::error::{Error, Result};
use crate::scalar::{wrap_phase, Real};
use crate::scene::Scenario;

/// Per-block, per-subcarrier transmit powers (`U × K`, W).
#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation<T> {
    pub powers: Array2<T>,
}

impl<T: Real> PowerAllocation<T> {
    /// `P/K` on every subcarrier of every block.
    pub fn uniform(n_blocks: usize, n_subcarriers: usize, total_power: T) -> Self {
        let p = total_power / T::count(n_subcarriers);
        Self {
            powers: Array2::from_elem((n_blocks, n_subcarriers), p),
        }
    }

    pub fn from_blocks(blocks: &[Vec<T>]) -> Result<Self> {
        let k = blocks.first().map_or(0, Vec::len);
        if blocks.iter().any(|b| b.len() != k) {
            return Err(Error::Contract("ragged power allocation".into()));
        }
        let flat: Vec<T> = blocks.iter().flatten().copied().collect();
        Ok(Self {
            powers: Array2::from_shape_vec((blocks.len(), k), flat).expect("shape"),
        })
    }

    pub fn n_blocks(&self) -> usize {
        self.powers.nrows()
    }

    pub fn block(&self, u: usize) -> &[T] {
        self.powers
            .row(u)
            .to_slice()
            .expect("row-major allocation")
    }

    /// Non-negative powers with each block within `budget` (+1e-9 relative slack).
    pub fn validate(&self, budget: T) -> Result<()> {
        for (u, row) in self.powers.rows().into_iter().enumerate() {
            if row.iter().any(|&p| !(p.is_finite() && p >= T::zero())) {
                return Err(Error::Contract(format!("negative or non-finite power in block {u}")));
            }
            let total: T = row.iter().copied().sum();
            if total > budget + T::lit(1e-9) * budget.max(T::one()) {
                return Err(Error::Contract(format!(
                    "block {u} allocates {total} W over a {budget} W budget"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport<T> {
    pub rate_bit_s: T,
    pub coherent_bit_s: T,
    /// `p_i |H_i|² / (B N0)`, block-major (`U·K` entries).
    pub per_subcarrier_snr: Vec<T>,
    /// Cyclic-prefix factor `ξ = K + M − 1`.
    pub xi: usize,
}

/// `ξ = K + M − 1`.
pub fn cyclic_prefix_factor(n_subcarriers: usize, n_taps: usize) -> usize {
    n_subcarriers + n_taps - 1
}

/// `Σ_i log2(1 + p_i |H_i|² / noise_floor)` for one block.
pub fn block_spectral_sum<T: Real>(combined: &[Complex<T>], powers: &[T], noise_floor: T) -> T {
    combined
        .iter()
        .zip(powers)
        .map(|(h, &p)| (T::one() + p * h.norm_sqr() / noise_floor).log2())
        .sum()
}

fn check_dims<T: Real>(
    chan: &ChannelRealization<T>,
    config: Option<&RisConfiguration<T>>,
    alloc: &PowerAllocation<T>,
    scenario: &Scenario<T>,
) -> Result<()> {
    let k = scenario.n_subcarriers;
    chan.validate_for(k)?;
    let u = chan.n_blocks();
    if alloc.powers.dim() != (u, k) {
        return Err(Error::Contract(format!(
            "allocation {:?} does not match {u} blocks x {k} subcarriers",
            alloc.powers.dim()
        )));
    }
    if let Some(cfg) = config {
        if cfg.thetas.dim() != (u, chan.n_reflectors()) {
            return Err(Error::Contract(format!(
                "configuration {:?} does not match {u} blocks x {} reflectors",
                cfg.thetas.dim(),
                chan.n_reflectors()
            )));
        }
    }
    Ok(())
}

/// Achievable rate of `config` under `alloc`, with the coherent bound for
/// the same allocation.
pub fn achievable_rate<T: Real>(
    chan: &ChannelRealization<T>,
    config: &RisConfiguration<T>,
    alloc: &PowerAllocation<T>,
    scenario: &Scenario<T>,
) -> Result<RateReport<T>> {
    check_dims(chan, Some(config), alloc, scenario)?;
    let k = scenario.n_subcarriers;
    let tw = Twiddles::new(k);
    let noise_floor = scenario.bandwidth_hz * scenario.noise_density;
    let xi = cyclic_prefix_factor(k, chan.n_taps);
    let scale = scenario.bandwidth_hz / T::count(xi);

    let mut rate = T::zero();
    let mut coherent = T::zero();
    let mut snr = Vec::with_capacity(k * chan.n_blocks());
    for u in 0..chan.n_blocks() {
        let view = chan.frequency_view_with(u, &tw);
        let powers = alloc.block(u);
        let h = view.combined(&config.omega(u));
        for (hi, &p) in h.iter().zip(powers) {
            let s = p * hi.norm_sqr() / noise_floor;
            snr.push(s);
            rate += (T::one() + s).log2();
        }
        coherent += coherent_spectral_sum(&view, powers, noise_floor);
    }
    Ok(RateReport {
        rate_bit_s: scale * rate,
        coherent_bit_s: scale * coherent,
        per_subcarrier_snr: snr,
        xi,
    })
}

/// Per-subcarrier aligned magnitude `|f_iᴴ h̄| + Σ_n |f_iᴴ [V]_n|`.
pub fn coherent_magnitudes<T: Real>(view: &FrequencyView<T>) -> Vec<T> {
    let mut mags: Vec<T> = view.direct.iter().map(|d| d.norm()).collect();
    for row in view.reflectors.rows() {
        for (m, g) in mags.iter_mut().zip(row) {
            *m += g.norm();
        }
    }
    mags
}

fn coherent_spectral_sum<T: Real>(view: &FrequencyView<T>, powers: &[T], noise_floor: T) -> T {
    coherent_magnitudes(view)
        .iter()
        .zip(powers)
        .map(|(&a, &p)| (T::one() + p * a * a / noise_floor).log2())
        .sum()
}

/// Rate with every reflector and the direct path phase-aligned on every
/// subcarrier; an upper bound on [`achievable_rate`] for the same powers.
pub fn coherent_rate<T: Real>(
    chan: &ChannelRealization<T>,
    alloc: &PowerAllocation<T>,
    scenario: &Scenario<T>,
) -> Result<T> {
    check_dims(chan, None, alloc, scenario)?;
    let k = scenario.n_subcarriers;
    let tw = Twiddles::new(k);
    let noise_floor = scenario.bandwidth_hz * scenario.noise_density;
    let total: T = (0..chan.n_blocks())
        .map(|u| coherent_spectral_sum(&chan.frequency_view_with(u, &tw), alloc.block(u), noise_floor))
        .sum();
    Ok(scenario.bandwidth_hz / T::count(cyclic_prefix_factor(k, chan.n_taps)) * total)
}

/// Coherent bound with water-filled powers on the aligned gains; dominates
/// the rate of every configuration under every allocation within the budget.
pub fn coherent_rate_waterfilled<T: Real>(chan: &ChannelRealization<T>, scenario: &Scenario<T>) -> Result<T> {
    let k = scenario.n_subcarriers;
    chan.validate_for(k)?;
    let tw = Twiddles::new(k);
    let noise_floor = scenario.bandwidth_hz * scenario.noise_density;
    let mut total = T::zero();
    for u in 0..chan.n_blocks() {
        let gains: Vec<T> = coherent_magnitudes(&chan.frequency_view_with(u, &tw))
            .iter()
            .map(|&a| a * a)
            .collect();
        let powers = waterfill(&gains, scenario.power_budget, noise_floor)?.powers;
        total += gains
            .iter()
            .zip(&powers)
            .map(|(&g, &p)| (T::one() + p * g / noise_floor).log2())
            .sum::<T>();
    }
    Ok(scenario.bandwidth_hz / T::count(cyclic_prefix_factor(k, chan.n_taps)) * total)
}

/// Water-filled allocation for `config`, block by block.
pub fn waterfill_for<T: Real>(
    chan: &ChannelRealization<T>,
    config: &RisConfiguration<T>,
    scenario: &Scenario<T>,
) -> Result<PowerAllocation<T>> {
    let k = scenario.n_subcarriers;
    chan.validate_for(k)?;
    if config.n_blocks() != chan.n_blocks() {
        return Err(Error::Contract("configuration blocks do not match the channel".into()));
    }
    let tw = Twiddles::new(k);
    let noise_floor = scenario.bandwidth_hz * scenario.noise_density;
    let rows = (0..chan.n_blocks())
        .map(|u| {
            let gains: Vec<T> = chan
                .frequency_view_with(u, &tw)
                .combined(&config.omega(u))
                .iter()
                .map(|h| h.norm_sqr())
                .collect();
            waterfill(&gains, scenario.power_budget, noise_floor).map(|w| w.powers)
        })
        .collect::<Result<Vec<_>>>()?;
    PowerAllocation::from_blocks(&rows)
}

/// Water-filling solution for one block.
#[derive(Debug, Clone, PartialEq)]
pub struct WaterFill<T> {
    pub powers: Vec<T>,
    /// Water level `μ`; zero when no subcarrier has positive gain.
    pub level: T,
}

/// `p_i = max(0, μ − noise_floor/g_i)` with `Σ p_i = P`.
///
/// The level is found exactly from the sorted floors rather than by bisection.
pub fn waterfill<T: Real>(gains: &[T], total_power: T, noise_floor: T) -> Result<WaterFill<T>> {
    if !(total_power > T::zero()) || !(noise_floor > T::zero()) {
        return Err(Error::InvalidArgument(format!(
            "water-filling needs P > 0 and a positive noise floor, got P={total_power}, floor={noise_floor}"
        )));
    }
    if gains.iter().any(|g| !(g.is_finite() && *g >= T::zero())) {
        return Err(Error::InvalidArgument("gains must be finite and non-negative".into()));
    }
    let mut floors: Vec<(usize, T)> = gains
        .iter()
        .enumerate()
        .filter(|(_, g)| **g > T::zero())
        .map(|(i, &g)| (i, noise_floor / g))
        .filter(|(_, f)| f.is_finite())
        .collect();
    if floors.is_empty() {
        log::warn!("water-filling over {} all-zero gains; allocating nothing", gains.len());
        return Ok(WaterFill {
            powers: vec![T::zero(); gains.len()],
            level: T::zero(),
        });
    }
    floors.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("finite floors"));

    let mut prefix = T::zero();
    let mut level = T::zero();
    for (k, &(_, f)) in floors.iter().enumerate() {
        prefix += f;
        let candidate = (total_power + prefix) / T::count(k + 1);
        // the next floor must lie above the level for it to stay dry
        let next_dry = floors.get(k + 1).is_none_or(|&(_, nf)| candidate <= nf);
        if candidate > f && next_dry {
            level = candidate;
            break;
        }
    }

    let mut powers = vec![T::zero(); gains.len()];
    for &(i, f) in &floors {
        powers[i] = (level - f).max(T::zero());
    }
    Ok(WaterFill { powers, level })
}

/// `θ^q = round(θ/Δ)·Δ` with `Δ = π/2^{b−1}`, ties away from zero.
pub fn quantize<T: Real>(theta: &[T], bits: u32) -> Result<Vec<T>> {
    let delta = quantization_step::<T>(bits)?;
    Ok(theta.iter().map(|&t| (t / delta).round() * delta).collect())
}

pub fn quantization_step<T: Real>(bits: u32) -> Result<T> {
    if bits == 0 || bits > 30 {
        return Err(Error::InvalidArgument(format!("quantization needs 1..=30 bits, got {bits}")));
    }
    Ok(T::PI() / T::count(1usize << (bits - 1)))
}

/// Quantizes every row of a configuration.
pub fn quantize_config<T: Real>(config: &RisConfiguration<T>, bits: u32) -> Result<RisConfiguration<T>> {
    let delta = quantization_step::<T>(bits)?;
    Ok(RisConfiguration {
        thetas: config.thetas.mapv(|t| (t / delta).round() * delta),
        time_invariant: config.time_invariant,
    })
}

/// Percentage of reflector-steps whose quantized phase did not change between
/// adjacent rows of the `T × N` sequence. Levels are compared after wrapping
/// to `[-π, π)`, so `π` and `−π` are the same level.
pub fn efficiency_rate<T: Real>(sequence: &Array2<T>) -> Result<T> {
    let (steps, n) = sequence.dim();
    if steps < 2 {
        return Err(Error::UndefinedMetric(format!(
            "efficiency needs at least 2 realizations, got {steps}"
        )));
    }
    if n == 0 {
        return Err(Error::UndefinedMetric("efficiency needs at least one reflector".into()));
    }
    let wrapped = sequence.mapv(wrap_phase);
    let changes = wrapped
        .rows()
        .into_iter()
        .zip(wrapped.rows().into_iter().skip(1))
        .map(|(prev, next)| prev.iter().zip(next).filter(|(a, b)| a != b).count())
        .sum::<usize>();
    let total = n * (steps - 1);
    Ok(T::lit(100.0) * (T::one() - T::count(changes) / T::count(total)))
}

/// Phase-drift slope of the strongest combined tap across blocks, in Hz.
///
/// The tap is the one with the largest combined energy over the frame; its
/// unwrapped phase is fitted by least squares against the block index.
pub fn residual_doppler<T: Real>(chan: &ChannelRealization<T>, config: &RisConfiguration<T>) -> Result<T> {
    let u_count = chan.n_blocks();
    if u_count < 2 {
        return Err(Error::UndefinedMetric(format!(
            "residual Doppler needs at least 2 blocks, got {u_count}"
        )));
    }
    if config.thetas.dim() != (u_count, chan.n_reflectors()) {
        return Err(Error::Contract(format!(
            "configuration {:?} does not match channel ({u_count}, {})",
            config.thetas.dim(),
            chan.n_reflectors()
        )));
    }
    let taps: Vec<Vec<Complex<T>>> = (0..u_count)
        .map(|u| chan.combined_taps(u, &config.omega(u)))
        .collect();
    let (m_star, _) = (0..chan.n_taps)
        .map(|m| (m, taps.iter().map(|t| t[m].norm_sqr()).sum::<T>()))
        .fold((0, T::neg_infinity()), |best, cur| if cur.1 > best.1 { cur } else { best });
    let weakest = taps.iter().map(|t| t[m_star].norm()).fold(T::infinity(), T::min);
    if !(weakest >= T::lit(1e-12)) {
        return Err(Error::Unmeasurable(weakest.to_f64_lossy()));
    }
    let phases = unwrap(taps.iter().map(|t| t[m_star].arg()));
    let slope = least_squares_slope(&phases);
    Ok(slope / (T::TAU() * chan.block_duration_s))
}

fn unwrap<T: Real>(phases: impl Iterator<Item = T>) -> Vec<T> {
    let mut out: Vec<T> = Vec::new();
    for p in phases {
        match out.last() {
            None => out.push(p),
            Some(&prev) => out.push(prev + wrap_phase(p - prev)),
        }
    }
    out
}

fn least_squares_slope<T: Real>(y: &[T]) -> T {
    let n = T::count(y.len());
    let mean_x = (n - T::one()) / T::lit(2.0);
    let mean_y = y.iter().copied().sum::<T>() / n;
    let (mut sxy, mut sxx) = (T::zero(), T::zero());
    for (i, &v) in y.iter().enumerate() {
        let dx = T::count(i) - mean_x;
        sxy += dx * (v - mean_y);
        sxx += dx * dx;
    }
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::tv_stm;
    use crate::scene::{ApRisPath, PathAngles, PathSet, RisGrid, RisUePath};
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array3};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    type C = Complex<f64>;

    fn one_tap_channel(h: C, v: &[C]) -> ChannelRealization<f64> {
        ChannelRealization {
            n_taps: 1,
            eta: 0.0,
            block_duration_s: 1e-3,
            direct: Array2::from_elem((1, 1), h),
            composite: Array3::from_shape_vec((1, v.len(), 1), v.to_vec()).unwrap(),
        }
    }

    fn unit_scenario(k: usize, n: usize) -> Scenario<f64> {
        Scenario {
            bandwidth_hz: 1.0,
            noise_density: 1.0,
            n_subcarriers: k,
            grid: RisGrid::new(1, n.max(1), 0.05, 0.05).unwrap(),
            ..Scenario::default()
        }
    }

    fn random_channel(rng: &mut ChaCha8Rng, u: usize, n: usize, m: usize) -> ChannelRealization<f64> {
        let mut c = || C::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        ChannelRealization {
            n_taps: m,
            eta: 0.0,
            block_duration_s: 1e-4,
            direct: Array2::from_shape_fn((u, m), |_| c()),
            composite: Array3::from_shape_fn((u, n, m), |_| c()),
        }
    }

    fn random_config(rng: &mut ChaCha8Rng, u: usize, n: usize) -> RisConfiguration<f64> {
        RisConfiguration::new(Array2::from_shape_fn((u, n), |_| rng.random_range(-PI..PI)), false)
    }

    #[test]
    fn zero_channel_has_zero_rate() {
        let s = unit_scenario(4, 2);
        let chan = ChannelRealization {
            n_taps: 2,
            eta: 0.0,
            block_duration_s: 1e-3,
            direct: Array2::zeros((1, 2)),
            composite: Array3::zeros((1, 2, 2)),
        };
        let cfg = RisConfiguration::zeros(1, 2);
        let alloc = PowerAllocation::uniform(1, 4, 1.0);
        let r = achievable_rate(&chan, &cfg, &alloc, &s).unwrap();
        assert_eq!(r.rate_bit_s, 0.0);
        assert_eq!(r.coherent_bit_s, 0.0);
        assert_eq!(r.xi, 5);
    }

    #[test]
    fn single_carrier_closed_form() {
        let s = unit_scenario(1, 1);
        let chan = one_tap_channel(C::new(1.0, 0.0), &[C::new(0.0, 0.0)]);
        let cfg = RisConfiguration::zeros(1, 1);
        let alloc = PowerAllocation::uniform(1, 1, 1.0);
        let r = achievable_rate(&chan, &cfg, &alloc, &s).unwrap();
        assert_eq!(r.xi, 1);
        assert_abs_diff_eq!(r.rate_bit_s, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.per_subcarrier_snr[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn coherent_uses_aligned_magnitudes() {
        let s = unit_scenario(1, 1);
        let chan = one_tap_channel(C::new(1.0, 0.0), &[C::new(0.0, 1.0)]);
        let alloc = PowerAllocation::uniform(1, 1, 1.0);
        let c = coherent_rate(&chan, &alloc, &s).unwrap();
        assert_abs_diff_eq!(c, 5f64.log2(), epsilon = 1e-14);
    }

    #[test]
    fn coherent_equals_rate_without_reflector_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = unit_scenario(8, 3);
        let mut chan = random_channel(&mut rng, 1, 3, 4);
        chan.composite.fill(C::new(0.0, 0.0));
        let alloc = PowerAllocation::uniform(1, 8, 2.0);
        for _ in 0..5 {
            let cfg = random_config(&mut rng, 1, 3);
            let r = achievable_rate(&chan, &cfg, &alloc, &s).unwrap();
            assert_abs_diff_eq!(r.rate_bit_s, r.coherent_bit_s, epsilon = 1e-12);
        }
    }

    #[test]
    fn coherent_bounds_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for trial in 0..1000 {
            let u = 1 + trial % 3;
            let s = unit_scenario(8, 3);
            let chan = random_channel(&mut rng, u, 3, 3);
            let cfg = random_config(&mut rng, u, 3);
            let alloc = PowerAllocation::uniform(u, 8, rng.random_range(0.1..10.0));
            let r = achievable_rate(&chan, &cfg, &alloc, &s).unwrap();
            assert!(r.rate_bit_s <= r.coherent_bit_s * (1.0 + 1e-9));
            assert!(r.rate_bit_s >= 0.0);
        }
    }

    #[test]
    fn rate_monotone_in_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = unit_scenario(8, 2);
        let chan = random_channel(&mut rng, 2, 2, 3);
        let cfg = random_config(&mut rng, 2, 2);
        let base = PowerAllocation::uniform(2, 8, 1.0);
        let r0 = achievable_rate(&chan, &cfg, &base, &s).unwrap().rate_bit_s;
        for c in [1.5, 2.0, 10.0] {
            let scaled = PowerAllocation { powers: base.powers.mapv(|p| p * c) };
            let r = achievable_rate(&chan, &cfg, &scaled, &s).unwrap().rate_bit_s;
            assert!(r >= r0);
        }
    }

    #[test]
    fn dimension_mismatch_is_contract_error() {
        let s = unit_scenario(4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let chan = random_channel(&mut rng, 1, 2, 2);
        let alloc = PowerAllocation::uniform(1, 4, 1.0);
        let wrong = RisConfiguration::zeros(1, 3);
        assert!(matches!(achievable_rate(&chan, &wrong, &alloc, &s), Err(Error::Contract(_))));
        let wrong_alloc = PowerAllocation::uniform(2, 4, 1.0);
        let cfg = RisConfiguration::zeros(1, 2);
        assert!(matches!(achievable_rate(&chan, &cfg, &wrong_alloc, &s), Err(Error::Contract(_))));
    }

    #[test]
    fn waterfilled_coherent_dominates_every_allocation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let s = Scenario { power_budget: 2.0, ..unit_scenario(8, 3) };
            let chan = random_channel(&mut rng, 2, 3, 3);
            let bound = coherent_rate_waterfilled(&chan, &s).unwrap();
            let cfg = random_config(&mut rng, 2, 3);
            let wf = waterfill_for(&chan, &cfg, &s).unwrap();
            wf.validate(2.0).unwrap();
            let r_wf = achievable_rate(&chan, &cfg, &wf, &s).unwrap().rate_bit_s;
            let r_u = achievable_rate(&chan, &cfg, &PowerAllocation::uniform(2, 8, 2.0), &s).unwrap().rate_bit_s;
            assert!(r_wf >= r_u * (1.0 - 1e-12));
            assert!(bound >= r_wf * (1.0 - 1e-12));
            assert!(bound >= coherent_rate(&chan, &PowerAllocation::uniform(2, 8, 2.0), &s).unwrap() * (1.0 - 1e-12));
        }
    }

    #[test]
    fn waterfill_examples() {
        let w = waterfill(&[3.0, 3.0, 3.0, 3.0], 2.0, 1.0).unwrap();
        for p in &w.powers {
            assert_abs_diff_eq!(*p, 0.5, epsilon = 1e-15);
        }
        let w = waterfill(&[1e9, 1e-9], 1e-3, 1.0).unwrap();
        assert_abs_diff_eq!(w.powers[0], 1e-3, epsilon = 1e-15);
        assert_eq!(w.powers[1], 0.0);
        let w = waterfill(&[2.0, 1.0], 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(w.level, 1.25, epsilon = 1e-15);
        assert_abs_diff_eq!(w.powers[0], 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(w.powers[1], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn waterfill_zero_gains() {
        let w = waterfill(&[0.0, 0.0, 0.0], 1.0, 1.0).unwrap();
        assert!(w.powers.iter().all(|&p| p == 0.0));
        let w = waterfill(&[0.0, 2.0], 1.0, 1.0).unwrap();
        assert_eq!(w.powers, vec![0.0, 1.0]);
        assert!(waterfill(&[1.0], 0.0, 1.0).is_err());
        assert!(waterfill(&[-1.0], 1.0, 1.0).is_err());
    }

    #[test]
    fn quantize_examples() {
        for b in 1..6 {
            assert_eq!(quantize(&[0.0f64], b).unwrap(), vec![0.0]);
        }
        assert_eq!(quantize(&[0.4 * PI], 1).unwrap(), vec![0.0]);
        assert_abs_diff_eq!(quantize(&[PI / 5.0], 4).unwrap()[0], PI / 4.0, epsilon = 1e-15);
        // half away from zero
        let d = PI / 2.0;
        assert_eq!(quantize(&[d / 2.0, -d / 2.0], 2).unwrap(), vec![d, -d]);
        assert!(quantize(&[1.0f64], 0).is_err());
    }

    #[test]
    fn efficiency_examples() {
        let constant = Array2::from_elem((5, 4), 0.5f64);
        assert_eq!(efficiency_rate(&constant).unwrap(), 100.0);
        let alternating = Array2::from_shape_fn((4, 3), |(t, _)| if t % 2 == 0 { 0.0 } else { 1.0f64 });
        assert_eq!(efficiency_rate(&alternating).unwrap(), 0.0);
        let one_change = array![[0.0f64, 1.0], [0.0, 1.0], [0.5, 1.0]];
        assert_eq!(efficiency_rate(&one_change).unwrap(), 75.0);
        assert!(matches!(efficiency_rate(&Array2::<f64>::zeros((1, 3))), Err(Error::UndefinedMetric(_))));
        let wrap = array![[PI], [-PI]];
        assert_eq!(efficiency_rate(&wrap).unwrap(), 100.0);
    }

    fn doppler_channel(fd: f64, u: usize) -> (ChannelRealization<f64>, Scenario<f64>) {
        let s = Scenario {
            grid: RisGrid::square(2, 0.05).unwrap(),
            n_blocks: u,
            block_duration_s: 1e-4,
            n_subcarriers: 16,
            ue_speed: 1.0,
            ..Scenario::default()
        };
        let paths = PathSet {
            ap_ris: vec![ApRisPath { delay_s: 50e-9, gain: 1.0, angles: PathAngles::new(0.3, 0.1).unwrap(), los: true }],
            ris_ue: vec![RisUePath {
                delay_s: 20e-9,
                gain: 1.0,
                angles: PathAngles::new(-0.5, 0.0).unwrap(),
                doppler_hz: fd,
                los: true,
            }],
            direct: vec![],
        };
        (ChannelRealization::mobile(&paths, &s).unwrap(), s)
    }

    #[test]
    fn residual_doppler_stationary_is_zero() {
        let (chan, _) = doppler_channel(0.0, 6);
        let cfg = RisConfiguration::zeros(6, 4);
        assert_abs_diff_eq!(residual_doppler(&chan, &cfg).unwrap(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn residual_doppler_tracks_cascade_doppler_under_fixed_config() {
        let (chan, _) = doppler_channel(200.0, 10);
        let cfg = RisConfiguration::new(Array2::from_shape_fn((10, 4), |(_, n)| 0.3 * n as f64), true);
        let f = residual_doppler(&chan, &cfg).unwrap();
        assert_abs_diff_eq!(f, 200.0, epsilon = 1e-6);
    }

    #[test]
    fn residual_doppler_removed_by_per_block_realignment() {
        let (chan, _) = doppler_channel(200.0, 10);
        let cfg = tv_stm(&chan);
        assert!(residual_doppler(&chan, &cfg).unwrap().abs() < 1e-6);
    }

    #[test]
    fn residual_doppler_errors() {
        let (chan, _) = doppler_channel(200.0, 1);
        assert!(matches!(
            residual_doppler(&chan, &RisConfiguration::zeros(1, 4)),
            Err(Error::UndefinedMetric(_))
        ));
        let mut dead = doppler_channel(0.0, 3).0;
        dead.composite.fill(C::new(0.0, 0.0));
        assert!(matches!(
            residual_doppler(&dead, &RisConfiguration::zeros(3, 4)),
            Err(Error::Unmeasurable(_))
        ));
    }

    proptest! {
        #[test]
        fn quantize_is_idempotent_and_on_grid(
            theta in proptest::collection::vec(-4.0f64..4.0, 1..20), bits in 1u32..6,
        ) {
            let q = quantize(&theta, bits).unwrap();
            prop_assert_eq!(quantize(&q, bits).unwrap(), q.clone());
            let d = quantization_step::<f64>(bits).unwrap();
            for (x, y) in theta.iter().zip(&q) {
                prop_assert!((y / d - (y / d).round()).abs() < 1e-9);
                prop_assert!((x - y).abs() <= d / 2.0 + 1e-12);
            }
        }

        #[test]
        fn waterfill_kkt(
            gains in proptest::collection::vec(0.0f64..10.0, 1..12),
            budget in 0.01f64..10.0, floor in 0.01f64..5.0,
        ) {
            prop_assume!(gains.iter().any(|&g| g > 0.0));
            let w = waterfill(&gains, budget, floor).unwrap();
            let total: f64 = w.powers.iter().sum();
            prop_assert!((total - budget).abs() <= 1e-12 * budget.max(1.0) * 10.0);
            for (&g, &p) in gains.iter().zip(&w.powers) {
                prop_assert!(p >= 0.0);
                if p > 0.0 {
                    prop_assert!((w.level - floor / g - p).abs() <= 1e-9 * w.level.max(1.0));
                } else if g > 0.0 {
                    prop_assert!(w.level <= floor / g * (1.0 + 1e-12));
                }
            }
        }

        #[test]
        fn efficiency_invariant_under_relabeling(
            seed in 0u64..500, steps in 2usize..6, n in 1usize..8,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let seq = Array2::from_shape_fn((steps, n), |_| (rng.random_range(0..4) as f64) * PI / 2.0 - PI);
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let relabeled = Array2::from_shape_fn((steps, n), |(t, j)| seq[[t, perm[j]]]);
            prop_assert_eq!(efficiency_rate(&seq).unwrap(), efficiency_rate(&relabeled).unwrap());
        }
    }
}
