//! RIS configurators: strongest-tap alignment (time-varying and
//! time-invariant) and alternating optimization with a successive convex
//! approximation of the magnitude terms.

use ndarray::{Array2, Axis};
use num_complex::Complex;

use crate::channel::{ChannelRealization, FrequencyView, Twiddles};
use crate::error::{Error, Result};
use crate::metrics::{block_spectral_sum, waterfill, PowerAllocation};
use crate::scalar::{arg_or_zero, wrap_phase, Real};
use crate::scene::Scenario;

/// Per-block reflector phases (`U × N`, radians in `[-π, π)`).
#[derive(Debug, Clone, PartialEq)]
pub struct RisConfiguration<T> {
    pub thetas: Array2<T>,
    pub time_invariant: bool,
}

impl<T: Real> RisConfiguration<T> {
    pub fn new(thetas: Array2<T>, time_invariant: bool) -> Self {
        Self { thetas, time_invariant }
    }

    pub fn zeros(n_blocks: usize, n_reflectors: usize) -> Self {
        Self::new(Array2::zeros((n_blocks, n_reflectors)), false)
    }

    /// One row repeated over `n_blocks`, flagged time-invariant.
    pub fn replicated(row: &[T], n_blocks: usize) -> Self {
        let thetas = Array2::from_shape_fn((n_blocks, row.len()), |(_, n)| row[n]);
        Self::new(thetas, true)
    }

    /// Builds a configuration from per-block rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Contract("ragged configuration rows".into()));
        }
        let flat = rows.iter().flatten().copied().collect();
        Ok(Self::new(Array2::from_shape_vec((rows.len(), n), flat).expect("shape"), false))
    }

    pub fn n_blocks(&self) -> usize {
        self.thetas.nrows()
    }

    pub fn n_reflectors(&self) -> usize {
        self.thetas.ncols()
    }

    pub fn row(&self, u: usize) -> Vec<T> {
        self.thetas.row(u).to_vec()
    }

    /// `ω_u = e^{jθ_u}`.
    pub fn omega(&self, u: usize) -> Vec<Complex<T>> {
        self.thetas
            .row(u)
            .iter()
            .map(|&t| Complex::from_polar(T::one(), t))
            .collect()
    }

    /// Phases finite and wrapped; time-invariant rows identical.
    pub fn validate(&self) -> Result<()> {
        let lo = -T::PI();
        if self.thetas.iter().any(|&t| !(t >= lo && t < T::PI())) {
            return Err(Error::Contract("configuration phase outside [-pi, pi)".into()));
        }
        if self.time_invariant {
            if let Some(first) = self.thetas.axis_iter(Axis(0)).next() {
                if self.thetas.axis_iter(Axis(0)).any(|r| r != first) {
                    return Err(Error::Contract("time-invariant configuration has differing rows".into()));
                }
            }
        }
        Ok(())
    }
}

/// Phases that align every reflector at tap `m` of block `u` with the direct tap.
pub fn stm_candidate<T: Real>(chan: &ChannelRealization<T>, u: usize, m: usize) -> Result<Vec<T>> {
    if u >= chan.n_blocks() || m >= chan.n_taps {
        return Err(Error::InvalidArgument(format!(
            "block {u}, tap {m} out of range ({} blocks, {} taps)",
            chan.n_blocks(),
            chan.n_taps
        )));
    }
    Ok(candidate_unchecked(chan, u, m))
}

fn candidate_unchecked<T: Real>(chan: &ChannelRealization<T>, u: usize, m: usize) -> Vec<T> {
    let reference = arg_or_zero(chan.direct[[u, m]]);
    (0..chan.n_reflectors())
        .map(|n| wrap_phase(reference - arg_or_zero(chan.composite[[u, n, m]])))
        .collect()
}

/// `|h̄_u[m] + [V_u]_mᵀ e^{jθ}|²`.
fn tap_energy<T: Real>(chan: &ChannelRealization<T>, u: usize, m: usize, theta: &[T]) -> T {
    let mut acc = chan.direct[[u, m]];
    for (n, &t) in theta.iter().enumerate() {
        acc += chan.composite[[u, n, m]] * Complex::from_polar(T::one(), t);
    }
    acc.norm_sqr()
}

/// First index of the strict maximum, so ties go to the smaller index.
fn first_argmax<T: Real>(values: impl Iterator<Item = T>) -> usize {
    let mut best = 0;
    let mut best_val = T::neg_infinity();
    for (i, v) in values.enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

/// Tap index selected by the time-varying rule for block `u`.
pub fn strongest_tap<T: Real>(chan: &ChannelRealization<T>, u: usize) -> usize {
    first_argmax((0..chan.n_taps).map(|m| tap_energy(chan, u, m, &candidate_unchecked(chan, u, m))))
}

/// Re-aligns the strongest tap in every block.
pub fn tv_stm<T: Real>(chan: &ChannelRealization<T>) -> RisConfiguration<T> {
    let rows: Vec<Vec<T>> = (0..chan.n_blocks())
        .map(|u| candidate_unchecked(chan, u, strongest_tap(chan, u)))
        .collect();
    RisConfiguration::from_rows(&rows).expect("uniform rows")
}

/// One configuration for the whole frame, aligned on block `reference`
/// (0-based). The tap is chosen by the aligned tap energy summed over all
/// blocks.
pub fn ti_stm<T: Real>(chan: &ChannelRealization<T>, reference: usize) -> Result<RisConfiguration<T>> {
    let u_count = chan.n_blocks();
    if reference >= u_count {
        return Err(Error::InvalidArgument(format!(
            "reference block {reference} outside 0..{u_count}"
        )));
    }
    let candidates: Vec<Vec<T>> = (0..chan.n_taps)
        .map(|m| candidate_unchecked(chan, reference, m))
        .collect();
    let m_star = first_argmax(
        candidates
            .iter()
            .enumerate()
            .map(|(m, c)| (0..u_count).map(|u| tap_energy(chan, u, m, c)).sum::<T>()),
    );
    Ok(RisConfiguration::replicated(&candidates[m_star], u_count))
}

/// Linearized `a² + b²` about `(ã, b̃)`.
pub fn sca_surrogate<T: Real>(a: T, b: T, anchor_a: T, anchor_b: T) -> T {
    anchor_a * anchor_a + anchor_b * anchor_b
        + T::lit(2.0) * anchor_a * (a - anchor_a)
        + T::lit(2.0) * anchor_b * (b - anchor_b)
}

/// Iterate of the successive convex approximation for one block.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaState<T> {
    pub anchor_a: Vec<T>,
    pub anchor_b: Vec<T>,
    pub current_omega: Vec<Complex<T>>,
    pub iteration: usize,
}

impl<T: Real> ScaState<T> {
    /// Anchors taken from the combined response at `omega`.
    pub fn anchored(view: &FrequencyView<T>, omega: Vec<Complex<T>>) -> Self {
        let h = view.combined(&omega);
        Self {
            anchor_a: h.iter().map(|c| c.re).collect(),
            anchor_b: h.iter().map(|c| c.im).collect(),
            current_omega: omega,
            iteration: 0,
        }
    }

    fn reanchor(&mut self, view: &FrequencyView<T>) {
        let h = view.combined(&self.current_omega);
        for ((a, b), c) in self.anchor_a.iter_mut().zip(&mut self.anchor_b).zip(h) {
            *a = c.re;
            *b = c.im;
        }
    }
}

/// Stopping rules for the inner and outer loops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AoSettings {
    pub inner_tol: f64,
    pub inner_max_steps: usize,
    pub outer_tol: f64,
    pub max_outer: usize,
}

impl Default for AoSettings {
    fn default() -> Self {
        Self {
            inner_tol: 1e-7,
            inner_max_steps: 500,
            outer_tol: 1e-5,
            max_outer: 30,
        }
    }
}

struct Surrogate<'a, T> {
    view: &'a FrequencyView<T>,
    powers: &'a [T],
    noise_floor: T,
    anchor: Vec<Complex<T>>,
}

impl<T: Real> Surrogate<'_, T> {
    /// `Σ log2(1 + p f(H)/BN0)`, or `None` outside the log domain.
    fn value(&self, h: &[Complex<T>]) -> Option<T> {
        let mut total = T::zero();
        for ((hi, ai), &p) in h.iter().zip(&self.anchor).zip(self.powers) {
            let f = sca_surrogate(hi.re, hi.im, ai.re, ai.im);
            let arg = T::one() + p * f / self.noise_floor;
            if !(arg > T::zero()) {
                return None;
            }
            total += arg.log2();
        }
        Some(total)
    }

    /// Ascent direction on ω: `Σ_i w_i 2 H̃_i conj(G_{n,i})`.
    fn gradient(&self, h: &[Complex<T>]) -> Vec<Complex<T>> {
        let ln2 = T::LN_2();
        let weights: Vec<Complex<T>> = h
            .iter()
            .zip(&self.anchor)
            .zip(self.powers)
            .map(|((hi, ai), &p)| {
                let f = sca_surrogate(hi.re, hi.im, ai.re, ai.im);
                let w = p / (self.noise_floor * ln2 * (T::one() + p * f / self.noise_floor));
                *ai * (T::lit(2.0) * w)
            })
            .collect();
        self.view
            .reflectors
            .rows()
            .into_iter()
            .map(|g| {
                g.iter()
                    .zip(&weights)
                    .fold(Complex::new(T::zero(), T::zero()), |acc, (gi, wi)| acc + *wi * gi.conj())
            })
            .collect()
    }
}

fn project_unit_disk<T: Real>(z: Complex<T>) -> Complex<T> {
    let r = z.norm();
    if r > T::one() {
        z / r
    } else {
        z
    }
}

/// Projected gradient ascent on the surrogate rate of one block with the
/// anchors held fixed; re-anchors at the final iterate.
pub fn sca_inner_solve_view<T: Real>(
    view: &FrequencyView<T>,
    powers: &[T],
    noise_floor: T,
    mut state: ScaState<T>,
    settings: &AoSettings,
) -> Result<ScaState<T>> {
    if powers.len() != view.n_subcarriers() || state.current_omega.len() != view.n_reflectors() {
        return Err(Error::Contract("inner solve dimensions disagree".into()));
    }
    let anchor: Vec<Complex<T>> = state
        .anchor_a
        .iter()
        .zip(&state.anchor_b)
        .map(|(&a, &b)| Complex::new(a, b))
        .collect();
    let sur = Surrogate {
        view,
        powers,
        noise_floor,
        anchor,
    };
    let mut omega: Vec<Complex<T>> = state.current_omega.iter().map(|&w| project_unit_disk(w)).collect();
    let mut h = view.combined(&omega);
    let mut value = sur
        .value(&h)
        .ok_or_else(|| Error::NonFinite("surrogate undefined at the starting point".into()))?;
    let tol = T::lit(settings.inner_tol);
    let min_step = T::lit(1e-12);

    for _ in 0..settings.inner_max_steps {
        let grad = sur.gradient(&h);
        if grad.iter().any(|g| !(g.re.is_finite() && g.im.is_finite())) {
            return Err(Error::NonFinite(format!(
                "surrogate gradient at inner step {}",
                state.iteration
            )));
        }
        let scale = grad.iter().map(|g| g.norm()).fold(T::zero(), T::max);
        if scale == T::zero() {
            break;
        }
        let mut step = T::one();
        let mut accepted = None;
        while step >= min_step {
            let trial: Vec<Complex<T>> = omega
                .iter()
                .zip(&grad)
                .map(|(&w, &g)| project_unit_disk(w + g * (step / scale)))
                .collect();
            let h_trial = view.combined(&trial);
            if let Some(v) = sur.value(&h_trial) {
                if v >= value {
                    accepted = Some((trial, h_trial, v));
                    break;
                }
            }
            step = step / T::lit(2.0);
        }
        let Some((trial, h_trial, v)) = accepted else { break };
        let gain = v - value;
        omega = trial;
        h = h_trial;
        value = v;
        state.iteration += 1;
        if gain <= tol * value.abs().max(T::min_positive_value()) {
            break;
        }
    }
    state.current_omega = omega;
    state.reanchor(view);
    Ok(state)
}

/// Inner solve for block `u` of `chan` under `alloc`.
pub fn sca_inner_solve<T: Real>(
    chan: &ChannelRealization<T>,
    u: usize,
    alloc: &PowerAllocation<T>,
    scenario: &Scenario<T>,
    state: ScaState<T>,
    settings: &AoSettings,
) -> Result<ScaState<T>> {
    if u >= chan.n_blocks() || u >= alloc.n_blocks() {
        return Err(Error::InvalidArgument(format!("block {u} out of range")));
    }
    let view = chan.frequency_view(u, scenario.n_subcarriers);
    sca_inner_solve_view(
        &view,
        alloc.block(u),
        scenario.bandwidth_hz * scenario.noise_density,
        state,
        settings,
    )
}

/// Result of [`ao_optimize`].
#[derive(Debug, Clone, PartialEq)]
pub struct AoOutcome<T> {
    pub config: RisConfiguration<T>,
    pub allocation: PowerAllocation<T>,
    /// Per block: spectral sum `Σ_i log2(1 + SNR_i)` after the warm start and
    /// after each outer round.
    pub traces: Vec<Vec<T>>,
}

fn gains<T: Real>(view: &FrequencyView<T>, omega: &[Complex<T>]) -> Vec<T> {
    view.combined(omega).iter().map(|h| h.norm_sqr()).collect()
}

/// Alternates water-filling and the SCA phase update independently per block,
/// warm-started from [`tv_stm`]. Final weights are snapped to unit modulus;
/// the warm start is returned instead if the snapped result is worse.
pub fn ao_optimize<T: Real>(
    chan: &ChannelRealization<T>,
    scenario: &Scenario<T>,
    settings: &AoSettings,
) -> Result<AoOutcome<T>> {
    let k = scenario.n_subcarriers;
    chan.validate_for(k)?;
    let tw = Twiddles::new(k);
    let noise_floor = scenario.bandwidth_hz * scenario.noise_density;
    let budget = scenario.power_budget;
    let warm = tv_stm(chan);
    let outer_tol = T::lit(settings.outer_tol);

    let mut rows = Vec::with_capacity(chan.n_blocks());
    let mut power_rows = Vec::with_capacity(chan.n_blocks());
    let mut traces = Vec::with_capacity(chan.n_blocks());
    for u in 0..chan.n_blocks() {
        let view = chan.frequency_view_with(u, &tw);
        let warm_omega = warm.omega(u);
        let uniform = vec![budget / T::count(k); k];
        let mut rate = block_spectral_sum(&view.combined(&warm_omega), &uniform, noise_floor);
        let mut trace = vec![rate];
        let mut state = ScaState::anchored(&view, warm_omega.clone());

        for _ in 0..settings.max_outer {
            let powers = waterfill(&gains(&view, &state.current_omega), budget, noise_floor)?.powers;
            state = sca_inner_solve_view(&view, &powers, noise_floor, state, settings)?;
            let next = block_spectral_sum(&view.combined(&state.current_omega), &powers, noise_floor);
            trace.push(next);
            let improvement = next - rate;
            rate = next;
            if improvement <= outer_tol * rate.abs().max(T::min_positive_value()) {
                break;
            }
        }

        let snapped: Vec<T> = state
            .current_omega
            .iter()
            .map(|w| wrap_phase(arg_or_zero(*w)))
            .collect();
        let snapped_omega: Vec<Complex<T>> = snapped.iter().map(|&t| Complex::from_polar(T::one(), t)).collect();
        let snapped_powers = waterfill(&gains(&view, &snapped_omega), budget, noise_floor)?.powers;
        let snapped_rate = block_spectral_sum(&view.combined(&snapped_omega), &snapped_powers, noise_floor);

        let warm_powers = waterfill(&gains(&view, &warm_omega), budget, noise_floor)?.powers;
        let warm_rate = block_spectral_sum(&view.combined(&warm_omega), &warm_powers, noise_floor);

        if snapped_rate >= warm_rate {
            rows.push(snapped);
            power_rows.push(snapped_powers);
        } else {
            rows.push(warm.row(u));
            power_rows.push(warm_powers);
        }
        traces.push(trace);
    }
    Ok(AoOutcome {
        config: RisConfiguration::from_rows(&rows)?,
        allocation: PowerAllocation::from_blocks(&power_rows)?,
        traces,
    })
}
