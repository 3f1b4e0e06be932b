//! Monte-Carlo experiments, the exhaustive configuration oracle and result
//! files.
//!
//! Every trial draws its own seed from the experiment seed and the cell it
//! belongs to, trials run in parallel, and results are merged in trial order,
//! so output bytes do not depend on the thread count.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channel::{ChannelRealization, Twiddles};
use crate::config::{ao_optimize, ti_stm, tv_stm, AoSettings, RisConfiguration};
use crate::error::{Error, Result};
use crate::metrics::{
    achievable_rate, block_spectral_sum, coherent_rate_waterfilled, efficiency_rate, quantization_step,
    quantize_config, residual_doppler, waterfill_for, PowerAllocation,
};
use crate::nnconf::{infer_config, train, NnParameters, TrainOutcome, TrainSettings};
use crate::scalar::wrap_phase;
use crate::scene::{PathSet, RisGrid, Scenario};

/// Largest search space the exhaustive oracle accepts (`4^8`).
pub const ORACLE_CAP: u128 = 65_536;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    RateVsBandwidth,
    EfficiencyTable,
    DopplerTable,
    OracleSuite,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::RateVsBandwidth => "rate_vs_bandwidth",
            Self::EfficiencyTable => "efficiency_table",
            Self::DopplerTable => "doppler_table",
            Self::OracleSuite => "oracle_suite",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rate_vs_bandwidth" => Ok(Self::RateVsBandwidth),
            "efficiency_table" => Ok(Self::EfficiencyTable),
            "doppler_table" => Ok(Self::DopplerTable),
            "oracle_suite" => Ok(Self::OracleSuite),
            other => Err(Error::InvalidArgument(format!("unknown experiment kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Ao,
    Coherent,
    Nn,
    Oracle,
    Stm,
    TiStm,
    TvStm,
    Uncompensated,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ao => "ao",
            Self::Coherent => "coherent",
            Self::Nn => "nn",
            Self::Oracle => "oracle",
            Self::Stm => "stm",
            Self::TiStm => "ti_stm",
            Self::TvStm => "tv_stm",
            Self::Uncompensated => "uncompensated",
        }
    }

    /// Methods an experiment reports when none are selected.
    pub fn defaults_for(kind: ExperimentKind) -> Vec<Method> {
        match kind {
            ExperimentKind::RateVsBandwidth => vec![Self::Ao, Self::Coherent, Self::Nn, Self::Stm],
            ExperimentKind::EfficiencyTable => vec![Self::Ao, Self::Nn, Self::Stm],
            ExperimentKind::DopplerTable => vec![Self::Coherent, Self::TiStm, Self::TvStm, Self::Uncompensated],
            ExperimentKind::OracleSuite => vec![Self::Ao, Self::Nn, Self::Oracle, Self::Stm],
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ao" => Ok(Self::Ao),
            "coherent" => Ok(Self::Coherent),
            "nn" => Ok(Self::Nn),
            "oracle" => Ok(Self::Oracle),
            "stm" => Ok(Self::Stm),
            "ti_stm" => Ok(Self::TiStm),
            "tv_stm" => Ok(Self::TvStm),
            "uncompensated" => Ok(Self::Uncompensated),
            other => Err(Error::InvalidArgument(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    /// Base scenario; sweeps override its band, grid and speed.
    pub scenario: Scenario<f64>,
    pub bandwidths_hz: Vec<f64>,
    pub reflector_counts: Vec<usize>,
    pub speeds_mps: Vec<f64>,
    pub bits: Vec<u32>,
    pub trials: usize,
    pub seed: u64,
    /// Empty selects [`Method::defaults_for`].
    pub methods: Vec<Method>,
    /// Correlated realizations per efficiency trial.
    pub sequence_length: usize,
    /// Realizations drawn to train each network.
    pub train_size: usize,
    pub train: TrainSettings,
    pub ao: AoSettings,
    /// Subcarriers of the oracle-suite instances.
    pub oracle_subcarriers: usize,
    pub oracle_max_reflectors: usize,
    /// Record wall-clock times; off by default so output bytes are reproducible.
    pub timing: bool,
    pub out: Option<PathBuf>,
}

impl ExperimentSpec {
    /// Desk-scale defaults for `kind`.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let mut scenario = Scenario::default();
        let mut reflector_counts = vec![25, 64, 100];
        let mut speeds_mps = vec![0.0];
        let mut bits = vec![4];
        match kind {
            ExperimentKind::RateVsBandwidth => reflector_counts = vec![100],
            ExperimentKind::EfficiencyTable => {}
            ExperimentKind::DopplerTable => {
                scenario.n_blocks = 14;
                speeds_mps = vec![20.0];
            }
            ExperimentKind::OracleSuite => {
                reflector_counts = vec![2, 3, 4, 5, 6];
                bits = vec![2];
            }
        }
        Self {
            kind,
            scenario,
            bandwidths_hz: vec![2.1e6, 4.2e6, 6.3e6, 8.4e6, 10.5e6],
            reflector_counts,
            speeds_mps,
            bits,
            trials: 50,
            seed: 1,
            methods: Vec::new(),
            sequence_length: 10,
            train_size: 200,
            train: TrainSettings::default(),
            ao: AoSettings::default(),
            oracle_subcarriers: 16,
            oracle_max_reflectors: 6,
            timing: false,
            out: None,
        }
    }

    /// Larger reflector sweeps for full-size tables.
    pub fn full_scale(&mut self) {
        self.reflector_counts = match self.kind {
            ExperimentKind::EfficiencyTable => vec![100, 196, 324],
            ExperimentKind::DopplerTable => vec![25, 100, 400],
            ExperimentKind::RateVsBandwidth => vec![100],
            ExperimentKind::OracleSuite => self.reflector_counts.clone(),
        };
    }

    pub fn methods(&self) -> Vec<Method> {
        if self.methods.is_empty() {
            Method::defaults_for(self.kind)
        } else {
            let mut m = self.methods.clone();
            m.sort();
            m.dedup();
            m
        }
    }

    pub fn validate(&self) -> Result<()> {
        let empty = |name: &str, len: usize| {
            if len == 0 {
                Err(Error::InvalidArgument(format!("{name} sweep is empty")))
            } else {
                Ok(())
            }
        };
        empty("bandwidth", self.bandwidths_hz.len())?;
        empty("reflector", self.reflector_counts.len())?;
        empty("speed", self.speeds_mps.len())?;
        empty("bits", self.bits.len())?;
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be at least 1".into()));
        }
        if self.reflector_counts.contains(&0) {
            return Err(Error::InvalidArgument("reflector counts must be positive".into()));
        }
        if self.bandwidths_hz.iter().any(|&b| !(b > 0.0 && b.is_finite())) {
            return Err(Error::InvalidArgument("bandwidths must be positive".into()));
        }
        if self.speeds_mps.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument("speeds must be non-negative".into()));
        }
        for &b in &self.bits {
            quantization_step::<f64>(b)?;
        }
        if self.kind == ExperimentKind::EfficiencyTable && self.sequence_length < 2 {
            return Err(Error::InvalidArgument("efficiency needs sequences of at least 2".into()));
        }
        if self.kind == ExperimentKind::DopplerTable && self.scenario.n_blocks < 2 {
            return Err(Error::InvalidArgument("the Doppler table needs at least 2 blocks".into()));
        }
        if self.methods().contains(&Method::Nn) && self.train_size == 0 {
            return Err(Error::InvalidArgument("train_size must be positive when nn is selected".into()));
        }
        self.train.validate()?;
        self.scenario.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: String,
    pub n_reflectors: usize,
    pub bandwidth_hz: f64,
    pub speed_mps: f64,
    pub b_bits: Option<u32>,
    pub trials: usize,
    /// Mean rate under the method's own allocation (uniform unless noted).
    pub rate_bit_s: Option<f64>,
    pub rate_std_err: Option<f64>,
    /// Mean rate with powers water-filled for the method's configuration.
    pub rate_waterfill_bit_s: Option<f64>,
    /// Mean water-filled coherent bound.
    pub coherent_bit_s: Option<f64>,
    pub efficiency_pct: Option<f64>,
    /// Mean magnitude of the measured residual Doppler.
    pub residual_doppler_hz: Option<f64>,
    /// `ok`, `infeasible`, or `violated` when an oracle bound fails.
    pub status: String,
    pub wall_time_s: f64,
}

pub const RESULT_HEADER: [&str; 14] = [
    "method",
    "n_reflectors",
    "bandwidth_hz",
    "speed_mps",
    "b_bits",
    "trials",
    "rate_bit_s",
    "rate_std_err",
    "rate_waterfill_bit_s",
    "coherent_bit_s",
    "efficiency_pct",
    "residual_doppler_hz",
    "status",
    "wall_time_s",
];

impl ResultRow {
    fn empty(method: Method, n: usize, bandwidth_hz: f64, speed_mps: f64, trials: usize) -> Self {
        Self {
            method: method.as_str().to_string(),
            n_reflectors: n,
            bandwidth_hz,
            speed_mps,
            b_bits: None,
            trials,
            rate_bit_s: None,
            rate_std_err: None,
            rate_waterfill_bit_s: None,
            coherent_bit_s: None,
            efficiency_pct: None,
            residual_doppler_hz: None,
            status: "ok".into(),
            wall_time_s: 0.0,
        }
    }

    fn infeasible(method: Method, n: usize, bandwidth_hz: f64, speed_mps: f64, trials: usize) -> Self {
        Self {
            status: "infeasible".into(),
            ..Self::empty(method, n, bandwidth_hz, speed_mps, trials)
        }
    }
}

/// SplitMix64 over the tags, for independent per-cell, per-trial seeds.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut x = base;
    for &t in tags {
        x ^= t.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(x << 6).wrapping_add(x >> 2);
        x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        x = z ^ (z >> 31);
    }
    x
}

const TAG_TRIAL: u64 = 1;
const TAG_TRAIN_DATA: u64 = 2;
const TAG_TRAIN_RNG: u64 = 3;
const TAG_SEQUENCE: u64 = 4;
const TAG_RANDOM_PHASES: u64 = 5;

/// Most square `rows × cols = n` grid with the base scenario's spacing.
pub fn grid_for(n: usize, base: &RisGrid<f64>) -> Result<RisGrid<f64>> {
    let rows = (1..=n).take_while(|r| r * r <= n).filter(|r| n.is_multiple_of(*r)).last().unwrap_or(1);
    RisGrid::new(rows, n / rows, base.d_h, base.d_v)
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    sum / n as f64
}

fn uniform_rate(chan: &ChannelRealization<f64>, cfg: &RisConfiguration<f64>, s: &Scenario<f64>) -> Result<f64> {
    let alloc = PowerAllocation::uniform(chan.n_blocks(), s.n_subcarriers, s.power_budget);
    Ok(achievable_rate(chan, cfg, &alloc, s)?.rate_bit_s)
}

fn waterfilled_rate(chan: &ChannelRealization<f64>, cfg: &RisConfiguration<f64>, s: &Scenario<f64>) -> Result<f64> {
    let alloc = waterfill_for(chan, cfg, s)?;
    Ok(achievable_rate(chan, cfg, &alloc, s)?.rate_bit_s)
}

/// Path set and channel of `s` drawn with `seed`.
pub fn realization(s: &Scenario<f64>, seed: u64) -> Result<(PathSet<f64>, ChannelRealization<f64>)> {
    let mut sc = s.clone();
    sc.rng_seed = seed;
    let paths = sc.path_set()?;
    let chan = if sc.ue_speed == 0.0 && sc.n_blocks == 1 {
        ChannelRealization::stationary(&paths, &sc)?
    } else {
        ChannelRealization::mobile(&paths, &sc)?
    };
    Ok((paths, chan))
}

/// Trains a network on realizations of `s` drawn with seeds tagged by `tags`.
pub fn train_network(spec: &ExperimentSpec, s: &Scenario<f64>, tags: &[u64]) -> Result<TrainOutcome<f64>> {
    let data_tags: Vec<u64> = std::iter::once(TAG_TRAIN_DATA).chain(tags.iter().copied()).collect();
    let dataset = (0..spec.train_size)
        .into_par_iter()
        .map(|i| {
            let mut t = data_tags.clone();
            t.push(i as u64);
            realization(s, derive_seed(spec.seed, &t)).map(|(_, c)| c)
        })
        .collect::<Result<Vec<_>>>()?;
    let rng_tags: Vec<u64> = std::iter::once(TAG_TRAIN_RNG).chain(tags.iter().copied()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &rng_tags));
    let outcome = train(&dataset, s, &spec.train, &mut rng)?;
    log::info!(
        "trained network for N={} B={} Hz: best epoch {} of {}",
        s.n_reflectors(),
        s.bandwidth_hz,
        outcome.best_epoch,
        spec.train.epochs
    );
    Ok(outcome)
}

/// Runs `f` over the trials of one cell; an infeasible tap count in any
/// trial marks the whole cell infeasible.
fn run_trials<R: Send>(trials: usize, f: impl Fn(usize) -> Result<R> + Sync + Send) -> Result<Option<Vec<R>>> {
    match (0..trials).into_par_iter().map(&f).collect::<Result<Vec<R>>>() {
        Ok(v) => Ok(Some(v)),
        Err(Error::Infeasible(msg)) => {
            log::warn!("cell skipped: {msg}");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, Default)]
struct MethodSample {
    rate: f64,
    rate_wf: f64,
    seconds: f64,
}

fn timed<R>(f: impl FnOnce() -> Result<R>) -> Result<(R, f64)> {
    let t = Instant::now();
    let r = f()?;
    Ok((r, t.elapsed().as_secs_f64()))
}

fn finish_rows(
    spec: &ExperimentSpec,
    methods: &[Method],
    samples: &[(Vec<MethodSample>, f64)],
    mut base: impl FnMut(Method) -> ResultRow,
) -> Vec<ResultRow> {
    let bound = mean(samples.iter().map(|(_, c)| *c));
    methods
        .iter()
        .enumerate()
        .map(|(j, &m)| {
            let rates: Vec<f64> = samples.iter().map(|(v, _)| v[j].rate).collect();
            let (mu, se) = mean_and_stderr(&rates);
            let mut row = base(m);
            row.rate_bit_s = Some(mu);
            row.rate_std_err = Some(se);
            row.rate_waterfill_bit_s = Some(mean(samples.iter().map(|(v, _)| v[j].rate_wf)));
            row.coherent_bit_s = Some(bound);
            if spec.timing {
                row.wall_time_s = samples.iter().map(|(v, _)| v[j].seconds).sum();
            }
            row
        })
        .collect()
}

/// Stationary rate of every method across the bandwidth sweep.
pub fn run_rate_vs_bandwidth(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    let methods = spec.methods();
    let mut rows = Vec::new();
    for &n in &spec.reflector_counts {
        for &bw in &spec.bandwidths_hz {
            let mut s = spec.scenario.clone();
            s.grid = grid_for(n, &spec.scenario.grid)?;
            s.bandwidth_hz = bw;
            s.ue_speed = 0.0;
            s.n_blocks = 1;
            let net = if methods.contains(&Method::Nn) {
                match train_network(spec, &s, &[n as u64, bw.to_bits()]) {
                    Ok(o) => Some(o.params),
                    Err(Error::Infeasible(_)) => None,
                    Err(e) => return Err(e),
                }
            } else {
                None
            };
            let cell = run_trials(spec.trials, |t| {
                let (_, chan) = realization(&s, derive_seed(spec.seed, &[TAG_TRIAL, n as u64, t as u64]))?;
                let mut out = Vec::with_capacity(methods.len());
                let bound = coherent_rate_waterfilled(&chan, &s)?;
                for &m in &methods {
                    let (sample, secs) = timed(|| -> Result<(f64, f64)> {
                        Ok(match m {
                            Method::Coherent => (bound, bound),
                            Method::Ao => {
                                let ao = ao_optimize(&chan, &s, &spec.ao)?;
                                let r = achievable_rate(&chan, &ao.config, &ao.allocation, &s)?.rate_bit_s;
                                (r, r)
                            }
                            _ => {
                                let cfg = configure(m, &chan, &s, net.as_ref(), spec, t)?;
                                (uniform_rate(&chan, &cfg, &s)?, waterfilled_rate(&chan, &cfg, &s)?)
                            }
                        })
                    })?;
                    out.push(MethodSample {
                        rate: sample.0,
                        rate_wf: sample.1,
                        seconds: secs,
                    });
                }
                Ok((out, bound))
            })?;
            let base = |m| ResultRow::empty(m, n, bw, 0.0, spec.trials);
            match cell {
                Some(samples) if net.is_some() || !methods.contains(&Method::Nn) => {
                    rows.extend(finish_rows(spec, &methods, &samples, base))
                }
                _ => rows.extend(methods.iter().map(|&m| ResultRow::infeasible(m, n, bw, 0.0, spec.trials))),
            }
        }
    }
    rows.sort_by(|a, b| {
        a.n_reflectors
            .cmp(&b.n_reflectors)
            .then(a.bandwidth_hz.total_cmp(&b.bandwidth_hz))
            .then_with(|| a.method.cmp(&b.method))
    });
    Ok(rows)
}

/// Configuration chosen by `m` for `chan`; `trial` seeds the random phases
/// of the uncompensated baseline.
pub fn configure(
    m: Method,
    chan: &ChannelRealization<f64>,
    s: &Scenario<f64>,
    net: Option<&NnParameters<f64>>,
    spec: &ExperimentSpec,
    trial: usize,
) -> Result<RisConfiguration<f64>> {
    match m {
        Method::Stm | Method::TvStm => Ok(tv_stm(chan)),
        Method::TiStm => ti_stm(chan, 0),
        Method::Ao => Ok(ao_optimize(chan, s, &spec.ao)?.config),
        Method::Nn => {
            let net = net.ok_or_else(|| Error::Contract("network requested but not trained".into()))?;
            infer_config(net, chan, s.n_subcarriers, false)
        }
        Method::Uncompensated => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                spec.seed,
                &[TAG_RANDOM_PHASES, chan.n_reflectors() as u64, trial as u64],
            ));
            let row: Vec<f64> = (0..chan.n_reflectors())
                .map(|_| wrap_phase(rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)))
                .collect();
            Ok(RisConfiguration::replicated(&row, chan.n_blocks()))
        }
        Method::Coherent | Method::Oracle => Err(Error::InvalidArgument(format!(
            "{m} does not produce a configuration here"
        ))),
    }
}

/// Quantized-configuration efficiency over correlated realization sequences.
pub fn run_efficiency_table(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    let methods: Vec<Method> = spec
        .methods()
        .into_iter()
        .filter(|m| matches!(m, Method::Stm | Method::TvStm | Method::TiStm | Method::Ao | Method::Nn))
        .collect();
    let bw = spec.scenario.bandwidth_hz;
    let jitter = spec.scenario.profile.sequence_jitter_s;
    let mut rows = Vec::new();
    for &n in &spec.reflector_counts {
        let mut s = spec.scenario.clone();
        s.grid = grid_for(n, &spec.scenario.grid)?;
        s.ue_speed = 0.0;
        s.n_blocks = 1;
        let net = if methods.contains(&Method::Nn) {
            Some(train_network(spec, &s, &[n as u64, bw.to_bits()])?.params)
        } else {
            None
        };
        // per trial, per method: continuous configs and rates over the sequence
        type TrialOut = (Vec<(Vec<RisConfiguration<f64>>, f64)>, Vec<ChannelRealization<f64>>, f64);
        let cell = run_trials(spec.trials, |t| -> Result<TrialOut> {
            let (base_paths, _) = realization(&s, derive_seed(spec.seed, &[TAG_TRIAL, n as u64, t as u64]))?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[TAG_SEQUENCE, n as u64, t as u64]));
            let chans = (0..spec.sequence_length)
                .map(|_| ChannelRealization::stationary(&base_paths.perturbed(jitter, &mut rng), &s))
                .collect::<Result<Vec<_>>>()?;
            let bound = mean(
                chans
                    .iter()
                    .map(|c| coherent_rate_waterfilled(c, &s))
                    .collect::<Result<Vec<_>>>()?
                    .into_iter(),
            );
            let mut per_method = Vec::with_capacity(methods.len());
            for &m in &methods {
                let t0 = Instant::now();
                let cfgs = chans
                    .iter()
                    .map(|c| configure(m, c, &s, net.as_ref(), spec, t))
                    .collect::<Result<Vec<_>>>()?;
                per_method.push((cfgs, t0.elapsed().as_secs_f64()));
            }
            Ok((per_method, chans, bound))
        })?;
        let Some(samples) = cell else {
            for &b in &spec.bits {
                for &m in &methods {
                    let mut row = ResultRow::infeasible(m, n, bw, 0.0, spec.trials);
                    row.b_bits = Some(b);
                    rows.push(row);
                }
            }
            continue;
        };
        for &b in &spec.bits {
            for (j, &m) in methods.iter().enumerate() {
                let mut effs = Vec::with_capacity(samples.len());
                let mut rates = Vec::with_capacity(samples.len());
                let mut rates_wf = Vec::with_capacity(samples.len());
                let mut secs = 0.0;
                for (per_method, chans, _) in &samples {
                    let (cfgs, t) = &per_method[j];
                    secs += t;
                    let quantized = cfgs.iter().map(|c| quantize_config(c, b)).collect::<Result<Vec<_>>>()?;
                    let seq = ndarray::Array2::from_shape_fn((quantized.len(), n), |(i, r)| quantized[i].thetas[[0, r]]);
                    effs.push(efficiency_rate(&seq)?);
                    let mut r = Vec::with_capacity(chans.len());
                    let mut rw = Vec::with_capacity(chans.len());
                    for (c, q) in chans.iter().zip(&quantized) {
                        r.push(uniform_rate(c, q, &s)?);
                        rw.push(waterfilled_rate(c, q, &s)?);
                    }
                    rates.push(mean(r.into_iter()));
                    rates_wf.push(mean(rw.into_iter()));
                }
                let (mu, se) = mean_and_stderr(&rates);
                let mut row = ResultRow::empty(m, n, bw, 0.0, spec.trials);
                row.b_bits = Some(b);
                row.rate_bit_s = Some(mu);
                row.rate_std_err = Some(se);
                row.rate_waterfill_bit_s = Some(mean(rates_wf.into_iter()));
                row.coherent_bit_s = Some(mean(samples.iter().map(|(_, _, c)| *c)));
                row.efficiency_pct = Some(mean(effs.into_iter()));
                if spec.timing {
                    row.wall_time_s = secs;
                }
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

/// Mobile rates and residual Doppler of the strongest-tap variants.
pub fn run_doppler_table(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    let methods = spec.methods();
    let mut rows = Vec::new();
    for &v in &spec.speeds_mps {
        for &n in &spec.reflector_counts {
            let mut s = spec.scenario.clone();
            s.grid = grid_for(n, &spec.scenario.grid)?;
            s.ue_speed = v;
            let cell = run_trials(spec.trials, |t| {
                let (_, chan) = realization(&s, derive_seed(spec.seed, &[TAG_TRIAL, n as u64, t as u64]))?;
                let bound = coherent_rate_waterfilled(&chan, &s)?;
                let mut out = Vec::with_capacity(methods.len());
                for &m in &methods {
                    let t0 = Instant::now();
                    let sample = match m {
                        Method::Coherent => (bound, bound, None),
                        Method::Ao => {
                            let ao = ao_optimize(&chan, &s, &spec.ao)?;
                            let r = achievable_rate(&chan, &ao.config, &ao.allocation, &s)?.rate_bit_s;
                            (r, r, Some(residual_doppler(&chan, &ao.config)?))
                        }
                        _ => {
                            let cfg = configure(m, &chan, &s, None, spec, t)?;
                            (
                                uniform_rate(&chan, &cfg, &s)?,
                                waterfilled_rate(&chan, &cfg, &s)?,
                                Some(residual_doppler(&chan, &cfg)?),
                            )
                        }
                    };
                    out.push((sample, t0.elapsed().as_secs_f64()));
                }
                Ok((out, bound))
            })?;
            let Some(samples) = cell else {
                rows.extend(methods.iter().map(|&m| ResultRow::infeasible(m, n, s.bandwidth_hz, v, spec.trials)));
                continue;
            };
            for (j, &m) in methods.iter().enumerate() {
                let rates: Vec<f64> = samples.iter().map(|(o, _)| o[j].0 .0).collect();
                let (mu, se) = mean_and_stderr(&rates);
                let mut row = ResultRow::empty(m, n, s.bandwidth_hz, v, spec.trials);
                row.rate_bit_s = Some(mu);
                row.rate_std_err = Some(se);
                row.rate_waterfill_bit_s = Some(mean(samples.iter().map(|(o, _)| o[j].0 .1)));
                row.coherent_bit_s = Some(mean(samples.iter().map(|(_, c)| *c)));
                if samples[0].0[j].0 .2.is_some() {
                    row.residual_doppler_hz =
                        Some(mean(samples.iter().map(|(o, _)| o[j].0 .2.unwrap_or(f64::NAN).abs())));
                }
                if spec.timing {
                    row.wall_time_s = samples.iter().map(|(o, _)| o[j].1).sum();
                }
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

/// Exhaustive search over every `b`-bit configuration, block by block.
/// Returns the best configuration and its rate under `alloc`.
pub fn brute_force_config_oracle(
    chan: &ChannelRealization<f64>,
    bits: u32,
    alloc: &PowerAllocation<f64>,
    scenario: &Scenario<f64>,
) -> Result<(RisConfiguration<f64>, f64)> {
    let n = chan.n_reflectors();
    let delta = quantization_step::<f64>(bits)?;
    let levels_per = 1u128 << bits;
    let configs = levels_per.checked_pow(n as u32).unwrap_or(u128::MAX);
    if bits > 2 || n > 8 || configs > ORACLE_CAP {
        return Err(Error::SearchSpaceTooLarge {
            configs,
            cap: ORACLE_CAP,
        });
    }
    let k = scenario.n_subcarriers;
    chan.validate_for(k)?;
    if alloc.powers.dim() != (chan.n_blocks(), k) {
        return Err(Error::Contract("allocation does not match the channel".into()));
    }
    let half = 1i64 << (bits - 1);
    let levels: Vec<f64> = (-half..half).map(|q| q as f64 * delta).collect();
    let phasors: Vec<Complex<f64>> = levels.iter().map(|&t| Complex::from_polar(1.0, t)).collect();
    let tw = Twiddles::new(k);
    let noise_floor = scenario.bandwidth_hz * scenario.noise_density;
    let scale = scenario.bandwidth_hz / crate::metrics::cyclic_prefix_factor(k, chan.n_taps) as f64;

    let mut rows = Vec::with_capacity(chan.n_blocks());
    let mut total = 0.0;
    for u in 0..chan.n_blocks() {
        let view = chan.frequency_view_with(u, &tw);
        let powers = alloc.block(u);
        let mut digits = vec![0usize; n];
        let mut best = (f64::NEG_INFINITY, digits.clone());
        loop {
            let omega: Vec<Complex<f64>> = digits.iter().map(|&d| phasors[d]).collect();
            let r = block_spectral_sum(&view.combined(&omega), powers, noise_floor);
            if r > best.0 {
                best = (r, digits.clone());
            }
            // odometer increment
            let mut i = 0;
            while i < n {
                digits[i] += 1;
                if digits[i] < levels.len() {
                    break;
                }
                digits[i] = 0;
                i += 1;
            }
            if i == n {
                break;
            }
        }
        total += best.0;
        rows.push(best.1.iter().map(|&d| levels[d]).collect::<Vec<f64>>());
    }
    Ok((RisConfiguration::from_rows(&rows)?, scale * total))
}

/// Per-instance record of the oracle sandwich.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleCheck {
    pub n_reflectors: usize,
    pub bits: u32,
    pub oracle_rate: f64,
    pub ao_rate: f64,
    pub stm_quantized_rate: f64,
    pub nn_quantized_rate: Option<f64>,
}

impl OracleCheck {
    /// AO at or above the oracle and the quantized methods at or below it,
    /// with `slack` relative tolerance.
    pub fn holds(&self, slack: f64) -> bool {
        let top = self.oracle_rate * (1.0 + slack);
        let bottom = self.oracle_rate * (1.0 - slack);
        self.ao_rate >= bottom && self.stm_quantized_rate <= top && self.nn_quantized_rate.is_none_or(|r| r <= top)
    }
}

/// Scenario of one tiny oracle instance.
pub fn oracle_scenario(spec: &ExperimentSpec, n: usize) -> Result<Scenario<f64>> {
    let mut s = spec.scenario.clone();
    s.grid = grid_for(n, &spec.scenario.grid)?;
    s.n_subcarriers = spec.oracle_subcarriers;
    s.ue_speed = 0.0;
    s.n_blocks = 1;
    Ok(s)
}

/// Runs the oracle sandwich on `spec.trials` tiny instances.
pub fn oracle_checks(spec: &ExperimentSpec) -> Result<Vec<OracleCheck>> {
    spec.validate()?;
    let counts: Vec<usize> = spec
        .reflector_counts
        .iter()
        .copied()
        .filter(|&n| n <= spec.oracle_max_reflectors)
        .collect();
    if counts.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no reflector count within the oracle limit of {}",
            spec.oracle_max_reflectors
        )));
    }
    let with_nn = spec.methods().contains(&Method::Nn);
    let mut nets = Vec::with_capacity(counts.len());
    for &n in &counts {
        let s = oracle_scenario(spec, n)?;
        nets.push(if with_nn {
            Some(train_network(spec, &s, &[n as u64, s.bandwidth_hz.to_bits(), s.n_subcarriers as u64])?.params)
        } else {
            None
        });
    }
    (0..spec.trials)
        .into_par_iter()
        .map(|t| {
            let idx = t % counts.len();
            let n = counts[idx];
            let bits = spec.bits[(t / counts.len()) % spec.bits.len()];
            let s = oracle_scenario(spec, n)?;
            let (_, chan) = realization(&s, derive_seed(spec.seed, &[TAG_TRIAL, n as u64, t as u64]))?;
            let uniform = PowerAllocation::uniform(1, s.n_subcarriers, s.power_budget);
            let (_, oracle_rate) = brute_force_config_oracle(&chan, bits, &uniform, &s)?;
            let ao = ao_optimize(&chan, &s, &spec.ao)?;
            let ao_rate = achievable_rate(&chan, &ao.config, &ao.allocation, &s)?.rate_bit_s;
            let stm_q = quantize_config(&tv_stm(&chan), bits)?;
            let stm_quantized_rate = uniform_rate(&chan, &stm_q, &s)?;
            let nn_quantized_rate = match &nets[idx] {
                Some(p) => Some(uniform_rate(&chan, &quantize_config(&infer_config(p, &chan, s.n_subcarriers, false)?, bits)?, &s)?),
                None => None,
            };
            Ok(OracleCheck {
                n_reflectors: n,
                bits,
                oracle_rate,
                ao_rate,
                stm_quantized_rate,
                nn_quantized_rate,
            })
        })
        .collect()
}

/// Oracle sandwich summarized per reflector count and method.
pub fn run_oracle_suite(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    let checks = oracle_checks(spec)?;
    let mut counts: Vec<(usize, u32)> = checks.iter().map(|c| (c.n_reflectors, c.bits)).collect();
    counts.sort_unstable();
    counts.dedup();
    let mut rows = Vec::new();
    for (n, b) in counts {
        let group: Vec<&OracleCheck> = checks.iter().filter(|c| c.n_reflectors == n && c.bits == b).collect();
        let oracle: Vec<f64> = group.iter().map(|c| c.oracle_rate).collect();
        let series: Vec<(Method, Vec<f64>, bool)> = {
            let mut v = vec![
                (Method::Ao, group.iter().map(|c| c.ao_rate).collect(), false),
                (Method::Oracle, oracle.clone(), false),
                (Method::Stm, group.iter().map(|c| c.stm_quantized_rate).collect(), true),
            ];
            if group.iter().all(|c| c.nn_quantized_rate.is_some()) {
                v.push((Method::Nn, group.iter().filter_map(|c| c.nn_quantized_rate).collect(), true));
            }
            v.sort_by_key(|e| e.0);
            v
        };
        for (m, rates, quantized) in series {
            let (mu, se) = mean_and_stderr(&rates);
            let mut row = ResultRow::empty(m, n, spec.scenario.bandwidth_hz, 0.0, group.len());
            row.b_bits = Some(b);
            row.rate_bit_s = Some(mu);
            row.rate_std_err = Some(se);
            let violated = rates.iter().zip(&oracle).any(|(&r, &o)| {
                if m == Method::Ao {
                    r < o * (1.0 - 1e-9)
                } else if quantized {
                    r > o * (1.0 + 1e-9)
                } else {
                    false
                }
            });
            if violated {
                row.status = "violated".into();
            }
            rows.push(row);
        }
    }
    Ok(rows)
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    match spec.kind {
        ExperimentKind::RateVsBandwidth => run_rate_vs_bandwidth(spec),
        ExperimentKind::EfficiencyTable => run_efficiency_table(spec),
        ExperimentKind::DopplerTable => run_doppler_table(spec),
        ExperimentKind::OracleSuite => run_oracle_suite(spec),
    }
}

/// Coefficient of determination of the least-squares line through `(x, y)`.
pub fn linear_fit_r2(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    if syy == 0.0 {
        return 1.0;
    }
    sxy * sxy / (sxx * syy)
}

fn opt_f64(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Path of the plot-data companion of `path` (`x.csv` → `x.plot.csv`).
pub fn plot_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.plot.csv"))
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes the result CSV and its `(x, series, y)` plot companion, with `x`
/// the bandwidth and one series per method and reflector count.
pub fn emit_results(rows: &[ResultRow], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(csv_err(path))?;
    w.write_record(RESULT_HEADER).map_err(csv_err(path))?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.n_reflectors.to_string(),
            r.bandwidth_hz.to_string(),
            r.speed_mps.to_string(),
            r.b_bits.map(|b| b.to_string()).unwrap_or_default(),
            r.trials.to_string(),
            opt_f64(r.rate_bit_s),
            opt_f64(r.rate_std_err),
            opt_f64(r.rate_waterfill_bit_s),
            opt_f64(r.coherent_bit_s),
            opt_f64(r.efficiency_pct),
            opt_f64(r.residual_doppler_hz),
            r.status.clone(),
            r.wall_time_s.to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;

    let plot = plot_path(path);
    let mut p = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(&plot)
        .map_err(csv_err(&plot))?;
    p.write_record(["x", "series", "y"]).map_err(csv_err(&plot))?;
    for r in rows {
        if let Some(y) = r.rate_bit_s {
            let series = match r.b_bits {
                Some(b) => format!("{} N={} b={}", r.method, r.n_reflectors, b),
                None => format!("{} N={}", r.method, r.n_reflectors),
            };
            p.write_record([r.bandwidth_hz.to_string(), series, y.to_string()])
                .map_err(csv_err(&plot))?;
        }
    }
    p.flush().map_err(|source| Error::Io { path: plot, source })
}

/// Parses a file written by [`emit_results`].
pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::ReaderBuilder::new().from_path(path).map_err(csv_err(path))?;
    let headers = r.headers().map_err(csv_err(path))?.clone();
    if headers.iter().ne(RESULT_HEADER.iter().copied()) {
        return Err(Error::Parse {
            source_name: path.display().to_string(),
            line: 1,
            message: "unexpected header".into(),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let line = i + 2;
        let bad = |field: &str| Error::Parse {
            source_name: path.display().to_string(),
            line,
            message: format!("bad {field}"),
        };
        let f = |idx: usize| -> Result<f64> { rec[idx].parse().map_err(|_| bad(RESULT_HEADER[idx])) };
        let of = |idx: usize| -> Result<Option<f64>> {
            if rec[idx].is_empty() {
                Ok(None)
            } else {
                f(idx).map(Some)
            }
        };
        rows.push(ResultRow {
            method: rec[0].to_string(),
            n_reflectors: rec[1].parse().map_err(|_| bad("n_reflectors"))?,
            bandwidth_hz: f(2)?,
            speed_mps: f(3)?,
            b_bits: if rec[4].is_empty() {
                None
            } else {
                Some(rec[4].parse().map_err(|_| bad("b_bits"))?)
            },
            trials: rec[5].parse().map_err(|_| bad("trials"))?,
            rate_bit_s: of(6)?,
            rate_std_err: of(7)?,
            rate_waterfill_bit_s: of(8)?,
            coherent_bit_s: of(9)?,
            efficiency_pct: of(10)?,
            residual_doppler_hz: of(11)?,
            status: rec[12].to_string(),
            wall_time_s: f(13)?,
        });
    }
    Ok(rows)
}
