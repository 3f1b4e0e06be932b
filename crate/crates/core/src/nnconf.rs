//! Neural RIS configurator.
//!
//! The input layer maps the per-subcarrier phase-alignment features
//! `Θ ∈ R^{N×K}` to `θ_0 = ReLU(Σ_c [Θ W_0]_{·,c}) + b_0`; each further layer
//! is elementwise, `θ_ℓ = ReLU(θ_{ℓ−1} ⊙ w_ℓ) + b_ℓ`. Gradients of the
//! negative rate are derived by hand.

use ndarray::Array2;
use num_complex::Complex;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::channel::{ChannelRealization, FrequencyView, Twiddles};
use crate::config::RisConfiguration;
use crate::error::{Error, Result};
use crate::metrics::{cyclic_prefix_factor, PowerAllocation};
use crate::scalar::{arg_or_zero, wrap_phase, Real};
use crate::scene::Scenario;

#[derive(Debug, Clone, PartialEq)]
pub struct NnParameters<T> {
    /// `K × N`.
    pub w0: Array2<T>,
    pub b0: Vec<T>,
    pub layer_weights: Vec<Vec<T>>,
    pub layer_biases: Vec<Vec<T>>,
}

impl<T: Real> NnParameters<T> {
    /// `W_0 ~ N(0, 1/√K)`, biases zero, layer weights one.
    pub fn init<R: Rng + ?Sized>(n_subcarriers: usize, n_reflectors: usize, depth: usize, rng: &mut R) -> Result<Self> {
        Self::init_with_std(n_subcarriers, n_reflectors, depth, 1.0 / (n_subcarriers as f64).sqrt(), rng)
    }

    /// As [`init`](Self::init) with an explicit deviation for `W_0`.
    pub fn init_with_std<R: Rng + ?Sized>(
        n_subcarriers: usize,
        n_reflectors: usize,
        depth: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if n_subcarriers == 0 || n_reflectors == 0 || depth == 0 {
            return Err(Error::InvalidArgument(format!(
                "network needs K, N, L >= 1, got K={n_subcarriers}, N={n_reflectors}, L={depth}"
            )));
        }
        let normal = Normal::new(0.0, std)
            .map_err(|_| Error::InvalidArgument(format!("W0 deviation must be finite and >= 0, got {std}")))?;
        let w0 = Array2::from_shape_simple_fn((n_subcarriers, n_reflectors), || T::lit(normal.sample(rng)));
        Ok(Self {
            w0,
            b0: vec![T::zero(); n_reflectors],
            layer_weights: vec![vec![T::one(); n_reflectors]; depth],
            layer_biases: vec![vec![T::zero(); n_reflectors]; depth],
        })
    }

    /// All-zero parameters with the given shapes.
    pub fn zeros(n_subcarriers: usize, n_reflectors: usize, depth: usize) -> Self {
        Self {
            w0: Array2::zeros((n_subcarriers, n_reflectors)),
            b0: vec![T::zero(); n_reflectors],
            layer_weights: vec![vec![T::zero(); n_reflectors]; depth],
            layer_biases: vec![vec![T::zero(); n_reflectors]; depth],
        }
    }

    pub fn depth(&self) -> usize {
        self.layer_weights.len()
    }

    pub fn n_subcarriers(&self) -> usize {
        self.w0.nrows()
    }

    pub fn n_reflectors(&self) -> usize {
        self.w0.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_reflectors();
        let shapes_ok = self.depth() >= 1
            && self.b0.len() == n
            && self.layer_biases.len() == self.depth()
            && self.layer_weights.iter().chain(&self.layer_biases).all(|v| v.len() == n);
        if !shapes_ok {
            return Err(Error::Contract("network parameter shapes disagree".into()));
        }
        if self.to_flat().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network parameter".into()));
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.w0.len() + self.n_reflectors() * (1 + 2 * self.depth())
    }

    /// `W_0` row-major, `b_0`, then `(w_ℓ, b_ℓ)` for each layer.
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.n_params());
        out.extend(self.w0.iter().copied());
        out.extend_from_slice(&self.b0);
        for (w, b) in self.layer_weights.iter().zip(&self.layer_biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    /// Inverse of [`to_flat`](Self::to_flat) with `self` supplying the shapes.
    pub fn set_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::Contract(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                flat.len()
            )));
        }
        let (w0, mut rest) = flat.split_at(self.w0.len());
        self.w0.iter_mut().zip(w0).for_each(|(d, s)| *d = *s);
        let n = self.n_reflectors();
        let mut take = |dst: &mut Vec<T>| {
            let (head, tail) = rest.split_at(n);
            dst.copy_from_slice(head);
            rest = tail;
        };
        take(&mut self.b0);
        for l in 0..self.layer_weights.len() {
            take(&mut self.layer_weights[l]);
            take(&mut self.layer_biases[l]);
        }
        Ok(())
    }

    fn scaled_add(&mut self, other: &Self, c: T) {
        self.w0.zip_mut_with(&other.w0, |a, &b| *a += c * b);
        let pairs = std::iter::once((&mut self.b0, &other.b0))
            .chain(self.layer_weights.iter_mut().zip(&other.layer_weights))
            .chain(self.layer_biases.iter_mut().zip(&other.layer_biases));
        for (a, b) in pairs {
            a.iter_mut().zip(b).for_each(|(x, &y)| *x += c * y);
        }
    }
}

/// `Θ[n, i] = wrap(arg(f_iᴴ h̄) − arg(f_iᴴ [V]_n))`, `N × K`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T> {
    pub theta_features: Array2<T>,
}

pub fn features_from_view<T: Real>(view: &FrequencyView<T>) -> FeatureMatrix<T> {
    let direct: Vec<T> = view.direct.iter().map(|&d| arg_or_zero(d)).collect();
    let theta_features = Array2::from_shape_fn(view.reflectors.dim(), |(n, i)| {
        let d = view.direct[i];
        let g = view.reflectors[[n, i]];
        if d == Complex::new(T::zero(), T::zero()) || g == Complex::new(T::zero(), T::zero()) {
            T::zero()
        } else {
            wrap_phase(direct[i] - g.arg())
        }
    });
    FeatureMatrix { theta_features }
}

/// Features of block `u` over `n_subcarriers` subcarriers.
pub fn build_features<T: Real>(chan: &ChannelRealization<T>, u: usize, n_subcarriers: usize) -> Result<FeatureMatrix<T>> {
    chan.validate_for(n_subcarriers)?;
    if u >= chan.n_blocks() {
        return Err(Error::InvalidArgument(format!("block {u} out of range")));
    }
    Ok(features_from_view(&chan.frequency_view(u, n_subcarriers)))
}

pub fn relu<T: Real>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| v.max(T::zero())).collect()
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache<T> {
    /// Row sums of `W_0`.
    pub column_sums: Vec<T>,
    /// Pre-activations `z_0 … z_L`.
    pub pre: Vec<Vec<T>>,
    /// Layer outputs `θ_0 … θ_L`.
    pub outputs: Vec<Vec<T>>,
}

pub fn forward<T: Real>(params: &NnParameters<T>, features: &FeatureMatrix<T>) -> Result<(Vec<T>, ForwardCache<T>)> {
    let theta = &features.theta_features;
    let (n, k) = theta.dim();
    if params.w0.dim() != (k, n) {
        return Err(Error::Contract(format!(
            "features are {n}x{k} but W0 is {:?}",
            params.w0.dim()
        )));
    }
    params.validate_shapes()?;
    let column_sums: Vec<T> = params.w0.rows().into_iter().map(|r| r.sum()).collect();
    let z0: Vec<T> = theta
        .rows()
        .into_iter()
        .map(|row| row.iter().zip(&column_sums).map(|(&t, &s)| t * s).sum())
        .collect();
    let mut current: Vec<T> = relu(&z0).iter().zip(&params.b0).map(|(&r, &b)| r + b).collect();
    let mut pre = vec![z0];
    let mut outputs = vec![current.clone()];
    for (w, b) in params.layer_weights.iter().zip(&params.layer_biases) {
        let z: Vec<T> = current.iter().zip(w).map(|(&x, &wv)| x * wv).collect();
        current = relu(&z).iter().zip(b).map(|(&r, &bv)| r + bv).collect();
        pre.push(z);
        outputs.push(current.clone());
    }
    Ok((current, ForwardCache { column_sums, pre, outputs }))
}

impl<T: Real> NnParameters<T> {
    fn validate_shapes(&self) -> Result<()> {
        let n = self.n_reflectors();
        if self.b0.len() != n
            || self.layer_weights.len() != self.layer_biases.len()
            || self.layer_weights.iter().chain(&self.layer_biases).any(|v| v.len() != n)
        {
            return Err(Error::Contract("network parameter shapes disagree".into()));
        }
        Ok(())
    }
}

fn step_derivative<T: Real>(z: T) -> T {
    if z > T::zero() {
        T::one()
    } else {
        T::zero()
    }
}

/// Accumulates parameter gradients for one block given `dL/dθ_L`.
fn backward<T: Real>(
    params: &NnParameters<T>,
    features: &FeatureMatrix<T>,
    cache: &ForwardCache<T>,
    upstream: Vec<T>,
    grads: &mut NnParameters<T>,
) {
    let mut g = upstream;
    for l in (0..params.depth()).rev() {
        let z = &cache.pre[l + 1];
        let prev = &cache.outputs[l];
        for r in 0..g.len() {
            grads.layer_biases[l][r] += g[r];
            let dz = g[r] * step_derivative(z[r]);
            grads.layer_weights[l][r] += dz * prev[r];
            g[r] = dz * params.layer_weights[l][r];
        }
    }
    let mut dz0 = vec![T::zero(); g.len()];
    for r in 0..g.len() {
        grads.b0[r] += g[r];
        dz0[r] = g[r] * step_derivative(cache.pre[0][r]);
    }
    let k = features.theta_features.ncols();
    for i in 0..k {
        let ds: T = (0..dz0.len()).map(|r| dz0[r] * features.theta_features[[r, i]]).sum();
        if ds != T::zero() {
            grads.w0.row_mut(i).iter_mut().for_each(|v| *v += ds);
        }
    }
}

/// Combined response and `dR_block/dθ` for one block, with `R_block` in the
/// units of `scale · Σ_i log2(1 + SNR_i)`.
fn block_rate_and_grad<T: Real>(
    view: &FrequencyView<T>,
    theta: &[T],
    powers: &[T],
    noise_floor: T,
    scale: T,
) -> (T, Vec<T>) {
    let omega: Vec<Complex<T>> = theta.iter().map(|&t| Complex::from_polar(T::one(), t)).collect();
    let h = view.combined(&omega);
    let mut rate = T::zero();
    let mut weights = Vec::with_capacity(h.len());
    for (hi, &p) in h.iter().zip(powers) {
        let snr = p * hi.norm_sqr() / noise_floor;
        rate += (T::one() + snr).log2();
        weights.push(scale * p / (noise_floor * T::LN_2() * (T::one() + snr)));
    }
    let grad = view
        .reflectors
        .rows()
        .into_iter()
        .zip(&omega)
        .map(|(g, &w)| {
            // d|H_i|²/dθ_r = −2 Im(conj(H_i) G_{r,i} e^{jθ_r})
            let s: T = g
                .iter()
                .zip(&h)
                .zip(&weights)
                .map(|((gi, hi), &wi)| wi * (hi.conj() * *gi * w).im)
                .sum();
            -T::lit(2.0) * s
        })
        .collect();
    (scale * rate, grad)
}

/// Precomputed per-realization inputs.
#[derive(Debug, Clone)]
pub struct Sample<T> {
    pub views: Vec<FrequencyView<T>>,
    pub features: Vec<FeatureMatrix<T>>,
    pub xi: usize,
}

impl<T: Real> Sample<T> {
    pub fn new(chan: &ChannelRealization<T>, tw: &Twiddles<T>) -> Result<Self> {
        chan.validate_for(tw.len())?;
        let views: Vec<FrequencyView<T>> = (0..chan.n_blocks()).map(|u| chan.frequency_view_with(u, tw)).collect();
        let features = views.iter().map(features_from_view).collect();
        Ok(Self {
            views,
            features,
            xi: cyclic_prefix_factor(tw.len(), chan.n_taps),
        })
    }
}

fn sample_loss_and_gradients<T: Real>(
    params: &NnParameters<T>,
    sample: &Sample<T>,
    alloc: &PowerAllocation<T>,
    scenario: &Scenario<T>,
) -> Result<(T, NnParameters<T>)> {
    if alloc.n_blocks() != sample.views.len() {
        return Err(Error::Contract("allocation blocks do not match the channel".into()));
    }
    let noise_floor = scenario.bandwidth_hz * scenario.noise_density;
    let scale = scenario.bandwidth_hz / T::count(sample.xi);
    let mut grads = NnParameters::zeros(params.n_subcarriers(), params.n_reflectors(), params.depth());
    let mut rate = T::zero();
    for (u, (view, feats)) in sample.views.iter().zip(&sample.features).enumerate() {
        let (theta, cache) = forward(params, feats)?;
        let (r, d_rate) = block_rate_and_grad(view, &theta, alloc.block(u), noise_floor, scale);
        rate += r;
        backward(params, feats, &cache, d_rate.into_iter().map(|d| -d).collect(), &mut grads);
    }
    let loss = -rate;
    if !loss.is_finite() {
        return Err(Error::NonFinite("network loss".into()));
    }
    Ok((loss, grads))
}

/// `−R` at `ω = e^{jθ_L}` under `alloc`, with gradients for every parameter.
pub fn loss_and_gradients<T: Real>(
    params: &NnParameters<T>,
    chan: &ChannelRealization<T>,
    alloc: &PowerAllocation<T>,
    scenario: &Scenario<T>,
) -> Result<(T, NnParameters<T>)> {
    let sample = Sample::new(chan, &Twiddles::new(scenario.n_subcarriers))?;
    sample_loss_and_gradients(params, &sample, alloc, scenario)
}

/// Mean achievable rate of the network over `samples` with uniform power.
pub fn mean_rate<T: Real>(params: &NnParameters<T>, samples: &[Sample<T>], scenario: &Scenario<T>) -> Result<T> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let noise_floor = scenario.bandwidth_hz * scenario.noise_density;
    let k = scenario.n_subcarriers;
    let uniform = vec![scenario.power_budget / T::count(k); k];
    let mut total = T::zero();
    for s in samples {
        let scale = scenario.bandwidth_hz / T::count(s.xi);
        for (view, feats) in s.views.iter().zip(&s.features) {
            let (theta, _) = forward(params, feats)?;
            let omega: Vec<Complex<T>> = theta.iter().map(|&t| Complex::from_polar(T::one(), t)).collect();
            total += scale * crate::metrics::block_spectral_sum(&view.combined(&omega), &uniform, noise_floor);
        }
    }
    Ok(total / T::count(samples.len()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub depth: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub validation_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Deviation of the `W_0` entries; `None` uses `1/√K`.
    pub w0_init_std: Option<f64>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            depth: 2,
            learning_rate: 0.1,
            batch_size: 16,
            epochs: 200,
            validation_fraction: 0.2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            w0_init_std: None,
        }
    }
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        let ok = self.depth >= 1
            && self.learning_rate > 0.0
            && self.batch_size >= 1
            && (0.0..1.0).contains(&self.validation_fraction)
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid training settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_rate: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub params: NnParameters<T>,
    /// Entry 0 is the initialization.
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
}

struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Real> Adam<T> {
    fn new(n: usize) -> Self {
        Self {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [T], grads: &[T], s: &TrainSettings) {
        self.t += 1;
        let (b1, b2) = (T::lit(s.beta1), T::lit(s.beta2));
        let lr = T::lit(s.learning_rate);
        let eps = T::lit(s.epsilon);
        let c1 = T::one() - b1.powi(self.t);
        let c2 = T::one() - b2.powi(self.t);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
}

/// Mini-batch Adam on `−R` with uniform power. Returns the parameters with
/// the best mean validation rate (the initialization included).
pub fn train<T: Real, R: Rng + ?Sized>(
    dataset: &[ChannelRealization<T>],
    scenario: &Scenario<T>,
    settings: &TrainSettings,
    rng: &mut R,
) -> Result<TrainOutcome<T>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    settings.validate()?;
    let k = scenario.n_subcarriers;
    let tw = Twiddles::new(k);
    let samples: Vec<Sample<T>> = dataset
        .par_iter()
        .map(|c| Sample::new(c, &tw))
        .collect::<Result<_>>()?;
    let n = dataset[0].n_reflectors();
    if samples.iter().zip(dataset).any(|(_, c)| c.n_reflectors() != n) {
        return Err(Error::Contract("dataset mixes reflector counts".into()));
    }

    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(rng);
    let n_val = (settings.validation_fraction * samples.len() as f64).floor() as usize;
    let (val_idx, train_idx) = order.split_at(n_val);
    let train_set: Vec<&Sample<T>> = train_idx.iter().map(|&i| &samples[i]).collect();
    let val_set: Vec<Sample<T>> = if val_idx.is_empty() {
        train_idx.iter().map(|&i| samples[i].clone()).collect()
    } else {
        val_idx.iter().map(|&i| samples[i].clone()).collect()
    };

    let std = settings.w0_init_std.unwrap_or(1.0 / (k as f64).sqrt());
    let mut params = NnParameters::init_with_std(k, n, settings.depth, std, rng)?;
    let mut best = params.clone();
    let mut best_rate = mean_rate(&params, &val_set, scenario)?;
    let mut best_epoch = 0;
    let mut history = vec![EpochLog {
        epoch: 0,
        train_loss: f64::NAN,
        validation_rate: best_rate.to_f64_lossy(),
    }];

    let mut adam = Adam::new(params.n_params());
    let mut flat = params.to_flat();
    let mut batch_order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=settings.epochs {
        batch_order.shuffle(rng);
        let mut epoch_loss = T::zero();
        for batch in batch_order.chunks(settings.batch_size) {
            let results: Vec<(T, NnParameters<T>)> = batch
                .par_iter()
                .map(|&i| {
                    let s = train_set[i];
                    let alloc = PowerAllocation::uniform(s.views.len(), k, scenario.power_budget);
                    sample_loss_and_gradients(&params, s, &alloc, scenario)
                })
                .collect::<Result<_>>()?;
            let mut grads = NnParameters::zeros(k, n, settings.depth);
            let inv = T::one() / T::count(batch.len());
            for (loss, g) in &results {
                epoch_loss += *loss;
                grads.scaled_add(g, inv);
            }
            adam.step(&mut flat, &grads.to_flat(), settings);
            params.set_flat(&flat)?;
        }
        let val_rate = mean_rate(&params, &val_set, scenario)?;
        let train_loss = epoch_loss / T::count(train_set.len());
        if !train_loss.is_finite() || !val_rate.is_finite() {
            return Err(Error::NonFinite(format!("training diverged at epoch {epoch}")));
        }
        log::debug!("epoch {epoch}: loss {train_loss:e}, validation rate {val_rate:e}");
        history.push(EpochLog {
            epoch,
            train_loss: train_loss.to_f64_lossy(),
            validation_rate: val_rate.to_f64_lossy(),
        });
        if val_rate > best_rate {
            best_rate = val_rate;
            best = params.clone();
            best_epoch = epoch;
        }
    }
    Ok(TrainOutcome {
        params: best,
        history,
        best_epoch,
    })
}

/// Network output for every block, wrapped to `[-π, π)`. With
/// `time_invariant`, block 0 is configured and replicated.
pub fn infer_config<T: Real>(
    params: &NnParameters<T>,
    chan: &ChannelRealization<T>,
    n_subcarriers: usize,
    time_invariant: bool,
) -> Result<RisConfiguration<T>> {
    let tw = Twiddles::new(n_subcarriers);
    chan.validate_for(n_subcarriers)?;
    let row = |u: usize| -> Result<Vec<T>> {
        let feats = features_from_view(&chan.frequency_view_with(u, &tw));
        Ok(forward(params, &feats)?.0.into_iter().map(wrap_phase).collect())
    };
    if time_invariant {
        Ok(RisConfiguration::replicated(&row(0)?, chan.n_blocks()))
    } else {
        let rows = (0..chan.n_blocks()).map(row).collect::<Result<Vec<_>>>()?;
        RisConfiguration::from_rows(&rows)
    }
}
