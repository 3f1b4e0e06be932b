//! Tap-domain channel synthesis and frequency-domain views.
//!
//! The composite channel is stored as a per-reflector tap matrix `V_u` so that
//! the cascade taps for any phase vector are `V_uᵀ ω`. Block indices are
//! 0-based in the API; the Doppler phasor of block `u` advances by
//! `(u + 1)·T_b`, matching the 1-based block numbering of the model.

use ndarray::{Array2, Array3, ArrayView1, ArrayView2};
use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::{phasor_cycles, sinc, Real};
use crate::scene::{array_response, wavelength, PathSet, Scenario};

/// Per-block direct taps and per-reflector composite taps.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization<T> {
    pub n_taps: usize,
    /// Causality reference `η` (s).
    pub eta: T,
    pub block_duration_s: T,
    /// `U × M`.
    pub direct: Array2<Complex<T>>,
    /// `U × N × M`.
    pub composite: Array3<Complex<T>>,
}

impl<T: Real> ChannelRealization<T> {
    /// Channel of a fixed UE: one block, no Doppler phasors.
    pub fn stationary(paths: &PathSet<T>, scenario: &Scenario<T>) -> Result<Self> {
        let (eta, m) = Self::tap_layout(paths, scenario)?;
        let n = scenario.n_reflectors();
        let direct_row = taps_for_block(paths, scenario, eta, m, None);
        let comp = cascade_for_block(paths, scenario, eta, m, None)?;
        let direct = Array2::from_shape_vec((1, m), direct_row).expect("shape");
        let composite = comp.into_shape_with_order((1, n, m)).expect("shape");
        Ok(Self {
            n_taps: m,
            eta,
            block_duration_s: scenario.block_duration_s,
            direct,
            composite,
        })
    }

    /// Block-indexed channel of a moving UE; the path set is shared by every
    /// block and only the Doppler phasors advance.
    pub fn mobile(paths: &PathSet<T>, scenario: &Scenario<T>) -> Result<Self> {
        let (eta, m) = Self::tap_layout(paths, scenario)?;
        let n = scenario.n_reflectors();
        let u_count = scenario.n_blocks;
        let mut direct = Array2::zeros((u_count, m));
        let mut composite = Array3::zeros((u_count, n, m));
        for u in 0..u_count {
            direct
                .row_mut(u)
                .assign(&ArrayView1::from(&direct_taps(paths, scenario, eta, m, u)));
            composite
                .index_axis_mut(ndarray::Axis(0), u)
                .assign(&composite_matrix(paths, scenario, eta, m, u)?);
        }
        Ok(Self {
            n_taps: m,
            eta,
            block_duration_s: scenario.block_duration_s,
            direct,
            composite,
        })
    }

    fn tap_layout(paths: &PathSet<T>, scenario: &Scenario<T>) -> Result<(T, usize)> {
        scenario.validate()?;
        paths.validate()?;
        let eta = delay_reference(paths)?;
        let m = n_taps(paths, scenario, eta)?;
        Ok((eta, m))
    }

    pub fn n_blocks(&self) -> usize {
        self.direct.nrows()
    }

    pub fn n_reflectors(&self) -> usize {
        self.composite.shape()[1]
    }

    pub fn direct_block(&self, u: usize) -> ArrayView1<'_, Complex<T>> {
        self.direct.row(u)
    }

    /// `V_u` as an `N × M` view.
    pub fn composite_block(&self, u: usize) -> ArrayView2<'_, Complex<T>> {
        self.composite.index_axis(ndarray::Axis(0), u)
    }

    /// Cascade taps `V_uᵀ ω`.
    pub fn cascade_taps(&self, u: usize, omega: &[Complex<T>]) -> Vec<Complex<T>> {
        let v = self.composite_block(u);
        (0..self.n_taps)
            .map(|m| {
                v.column(m)
                    .iter()
                    .zip(omega)
                    .fold(Complex::new(T::zero(), T::zero()), |acc, (a, w)| acc + a * w)
            })
            .collect()
    }

    /// Direct plus cascade taps for phase vector `ω`.
    pub fn combined_taps(&self, u: usize, omega: &[Complex<T>]) -> Vec<Complex<T>> {
        self.cascade_taps(u, omega)
            .into_iter()
            .zip(self.direct_block(u))
            .map(|(c, d)| c + d)
            .collect()
    }

    pub fn validate_for(&self, n_subcarriers: usize) -> Result<()> {
        if self.n_taps == 0 || self.n_taps > n_subcarriers {
            return Err(Error::Contract(format!(
                "{} taps do not fit {} subcarriers",
                self.n_taps, n_subcarriers
            )));
        }
        let (u, n, m) = self.composite.dim();
        if self.direct.dim() != (u, m) || m != self.n_taps || n == 0 {
            return Err(Error::Contract(format!(
                "direct taps {:?} inconsistent with composite {:?}",
                self.direct.dim(),
                (u, n, m)
            )));
        }
        Ok(())
    }

    /// Frequency-domain view of block `u` over `K` subcarriers.
    pub fn frequency_view(&self, u: usize, n_subcarriers: usize) -> FrequencyView<T> {
        let tw = Twiddles::new(n_subcarriers);
        self.frequency_view_with(u, &tw)
    }

    pub fn frequency_view_with(&self, u: usize, tw: &Twiddles<T>) -> FrequencyView<T> {
        let direct = tw.spectrum(self.direct_block(u).as_slice().expect("contiguous row"));
        let v = self.composite_block(u);
        let n = v.nrows();
        let k = tw.len();
        let mut reflectors = Array2::zeros((n, k));
        for (mut out, row) in reflectors.rows_mut().into_iter().zip(v.rows()) {
            let row: Vec<_> = row.iter().copied().collect();
            for (o, s) in out.iter_mut().zip(tw.spectrum(&row)) {
                *o = s;
            }
        }
        FrequencyView { direct, reflectors }
    }
}

/// Per-subcarrier responses `f_iᴴ h̄_u` and `f_iᴴ [V_u]_n` of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyView<T> {
    /// `K` direct responses.
    pub direct: Vec<Complex<T>>,
    /// `N × K` reflector responses.
    pub reflectors: Array2<Complex<T>>,
}

impl<T: Real> FrequencyView<T> {
    pub fn n_subcarriers(&self) -> usize {
        self.direct.len()
    }

    pub fn n_reflectors(&self) -> usize {
        self.reflectors.nrows()
    }

    /// Combined response `H_i(ω)` on every subcarrier.
    pub fn combined(&self, omega: &[Complex<T>]) -> Vec<Complex<T>> {
        let mut out = self.direct.clone();
        for (row, w) in self.reflectors.rows().into_iter().zip(omega) {
            for (o, g) in out.iter_mut().zip(row) {
                *o += g * w;
            }
        }
        out
    }
}

/// Table of `e^{+j2πq/K}`, indexed by `q = (i·j) mod K`.
#[derive(Debug, Clone)]
pub struct Twiddles<T> {
    table: Vec<Complex<T>>,
}

impl<T: Real> Twiddles<T> {
    pub fn new(n_subcarriers: usize) -> Self {
        let k = T::count(n_subcarriers);
        let table = (0..n_subcarriers)
            .map(|q| Complex::from_polar(T::one(), T::TAU() * T::count(q) / k))
            .collect();
        Self { table }
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// `f_iᴴ x` for every `i`, with `x` implicitly zero-padded to `K`.
    pub fn spectrum(&self, taps: &[Complex<T>]) -> Vec<Complex<T>> {
        let k = self.table.len();
        (0..k)
            .map(|i| {
                taps.iter().enumerate().fold(Complex::new(T::zero(), T::zero()), |acc, (j, x)| {
                    acc + self.table[(i * j) % k] * x
                })
            })
            .collect()
    }
}

/// `η`: the earliest direct-path delay, or the earliest cascade delay when
/// the direct link is blocked.
pub fn delay_reference<T: Real>(paths: &PathSet<T>) -> Result<T> {
    let min = |it: &mut dyn Iterator<Item = T>| it.fold(None, |m: Option<T>, d| Some(m.map_or(d, |m| m.min(d))));
    if let Some(eta) = min(&mut paths.direct.iter().map(|p| p.delay_s)) {
        return Ok(eta);
    }
    min(&mut paths.cascade_delays()).ok_or(Error::EmptyPathSet)
}

/// Tap count `M = ⌈B·(τ_max + 1/(2f_c) − η)⌉ + G`, rejected when `M > K`.
pub fn n_taps<T: Real>(paths: &PathSet<T>, scenario: &Scenario<T>, eta: T) -> Result<usize> {
    let max_direct = paths.direct.iter().map(|p| p.delay_s);
    let max_delay = max_direct
        .chain(paths.cascade_delays())
        .fold(None, |m: Option<T>, d| Some(m.map_or(d, |m| m.max(d))))
        .ok_or(Error::EmptyPathSet)?;
    let ris_delay = T::one() / (T::lit(2.0) * scenario.carrier_hz);
    let span = (scenario.bandwidth_hz * (max_delay + ris_delay - eta)).ceil();
    let span = span
        .to_usize()
        .ok_or_else(|| Error::Infeasible(format!("tap span {span} not representable")))?;
    let m = span.max(1) + scenario.guard_taps;
    if m > scenario.n_subcarriers {
        return Err(Error::Infeasible(format!(
            "{m} channel taps exceed {} subcarriers; cyclic prefix would exceed the symbol",
            scenario.n_subcarriers
        )));
    }
    Ok(m)
}

/// Direct taps `h̄_u[m]` of block `u` (0-based).
pub fn direct_taps<T: Real>(
    paths: &PathSet<T>,
    scenario: &Scenario<T>,
    eta: T,
    n_taps: usize,
    block: usize,
) -> Vec<Complex<T>> {
    let elapsed = T::count(block + 1) * scenario.block_duration_s;
    taps_for_block(paths, scenario, eta, n_taps, Some(elapsed))
}

/// Composite matrix `V_u` (`N × M`) of block `u` (0-based). Row `n` holds the
/// cascade taps of reflector `n` with its own phase weight factored out.
pub fn composite_matrix<T: Real>(
    paths: &PathSet<T>,
    scenario: &Scenario<T>,
    eta: T,
    n_taps: usize,
    block: usize,
) -> Result<Array2<Complex<T>>> {
    let elapsed = T::count(block + 1) * scenario.block_duration_s;
    cascade_for_block(paths, scenario, eta, n_taps, Some(elapsed))
}

/// `elapsed = None` evaluates the fixed-UE model, which carries no Doppler
/// term at all; `Some(u·T_b)` evaluates the block-indexed model.
fn taps_for_block<T: Real>(
    paths: &PathSet<T>,
    scenario: &Scenario<T>,
    eta: T,
    n_taps: usize,
    elapsed: Option<T>,
) -> Vec<Complex<T>> {
    let b = scenario.bandwidth_hz;
    let mut taps = vec![Complex::new(T::zero(), T::zero()); n_taps];
    for p in &paths.direct {
        let cycles = match elapsed {
            None => scenario.carrier_hz * p.delay_s,
            Some(t) => scenario.carrier_hz * p.delay_s - p.doppler_hz * t,
        };
        let phasor = phasor_cycles(-cycles) * p.gain.sqrt();
        for (m, tap) in taps.iter_mut().enumerate() {
            *tap += phasor * sinc(T::count(m) + b * (eta - p.delay_s));
        }
    }
    taps
}

fn cascade_for_block<T: Real>(
    paths: &PathSet<T>,
    scenario: &Scenario<T>,
    eta: T,
    n_taps: usize,
    elapsed: Option<T>,
) -> Result<Array2<Complex<T>>> {
    let lambda = wavelength(scenario)?;
    let grid = &scenario.grid;
    let b = scenario.bandwidth_hz;
    let resp_a: Vec<Vec<Complex<T>>> = paths
        .ap_ris
        .iter()
        .map(|p| array_response(grid, &p.angles, lambda))
        .collect();
    let resp_b: Vec<Vec<Complex<T>>> = paths
        .ris_ue
        .iter()
        .map(|p| array_response(grid, &p.angles, lambda))
        .collect();

    let mut v = Array2::zeros((grid.len(), n_taps));
    for (pa, ra) in paths.ap_ris.iter().zip(&resp_a) {
        for (pb, rb) in paths.ris_ue.iter().zip(&resp_b) {
            let delay = pa.delay_s + pb.delay_s;
            let cycles = match elapsed {
                None => scenario.carrier_hz * delay,
                Some(t) => scenario.carrier_hz * delay - pb.doppler_hz * t,
            };
            let phasor = phasor_cycles(-cycles) * (pa.gain * pb.gain).sqrt();
            let pulse: Vec<T> = (0..n_taps)
                .map(|m| sinc(T::count(m) + b * (eta - delay)))
                .collect();
            for (n, mut row) in v.rows_mut().into_iter().enumerate() {
                let coeff = phasor * ra[n] * rb[n];
                for (tap, &s) in row.iter_mut().zip(&pulse) {
                    *tap += coeff * s;
                }
            }
        }
    }
    Ok(v)
}

/// `f_iᴴ x = Σ_j e^{+j2πij/K} x[j]` for one subcarrier of a `K`-padded vector.
pub fn freq_response<T: Real>(taps: &[Complex<T>], n_subcarriers: usize, i: usize) -> Result<Complex<T>> {
    if i >= n_subcarriers {
        return Err(Error::InvalidArgument(format!(
            "subcarrier {i} out of range for K = {n_subcarriers}"
        )));
    }
    if taps.len() > n_subcarriers {
        return Err(Error::Contract(format!(
            "{} taps exceed K = {n_subcarriers}",
            taps.len()
        )));
    }
    let k = T::count(n_subcarriers);
    Ok(taps.iter().enumerate().fold(Complex::new(T::zero(), T::zero()), |acc, (j, x)| {
        let q = (i * j) % n_subcarriers;
        acc + Complex::from_polar(T::one(), T::TAU() * T::count(q) / k) * x
    }))
}

/// All `K` responses of a `K`-padded vector.
pub fn spectrum<T: Real>(taps: &[Complex<T>], n_subcarriers: usize) -> Result<Vec<Complex<T>>> {
    if taps.len() > n_subcarriers {
        return Err(Error::Contract(format!(
            "{} taps exceed K = {n_subcarriers}",
            taps.len()
        )));
    }
    Ok(Twiddles::new(n_subcarriers).spectrum(taps))
}
