//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the verdict lines are always
//! printed; exits nonzero when any criterion fails.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::Array2;
use num_complex::Complex64 as C;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ris_core::config::{ao_optimize, ti_stm, tv_stm, AoSettings, RisConfiguration};
use ris_core::harness::{
    linear_fit_r2, oracle_checks, run_doppler_table, run_efficiency_table, run_rate_vs_bandwidth, ExperimentKind,
    ExperimentSpec, ResultRow,
};
use ris_core::metrics::{achievable_rate, quantize_config, PowerAllocation};
use ris_core::nnconf::{infer_config, loss_and_gradients, NnParameters};
use ris_core::scene::{PathSet, RisGrid, Scenario};
use ris_core::{ChannelRealization, SPEED_OF_LIGHT};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

// ---------------------------------------------------------------- oracles

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Element phase `e^{jΦᵀψ_n}` from the angles, element by element.
fn element_phase(az: f64, el: f64, lambda: f64, grid: &RisGrid<f64>, n: usize) -> C {
    let dir = [az.cos() * el.cos(), az.sin() * el.cos(), el.sin()];
    let pos = [0.0, grid.d_h * (n % grid.n_rows) as f64, grid.d_v * (n / grid.n_rows) as f64];
    let proj = dir[0] * pos[0] + dir[1] * pos[1] + dir[2] * pos[2];
    C::from_polar(1.0, -2.0 * PI / lambda * proj)
}

/// Cascade taps by direct summation over reflectors, path pairs and taps.
fn naive_cascade(paths: &PathSet<f64>, s: &Scenario<f64>, eta: f64, m_taps: usize, t: f64, omega: &[C]) -> Vec<C> {
    let lambda = SPEED_OF_LIGHT / s.carrier_hz;
    let mut out = vec![C::new(0.0, 0.0); m_taps];
    for (m, tap) in out.iter_mut().enumerate() {
        for (n, w) in omega.iter().enumerate() {
            for a in &paths.ap_ris {
                for b in &paths.ris_ue {
                    let tau = a.delay_s + b.delay_s;
                    let amp = (a.gain * b.gain).sqrt();
                    let sa = element_phase(a.angles.azimuth, a.angles.elevation, lambda, &s.grid, n);
                    let sb = element_phase(b.angles.azimuth, b.angles.elevation, lambda, &s.grid, n);
                    let ph = C::from_polar(1.0, -2.0 * PI * (s.carrier_hz * tau - b.doppler_hz * t));
                    *tap += w * sa * sb * ph * amp * sinc(m as f64 + s.bandwidth_hz * (eta - tau));
                }
            }
        }
    }
    out
}

fn naive_direct(paths: &PathSet<f64>, s: &Scenario<f64>, eta: f64, m_taps: usize, t: f64) -> Vec<C> {
    (0..m_taps)
        .map(|m| {
            paths
                .direct
                .iter()
                .map(|d| {
                    let ph = C::from_polar(1.0, -2.0 * PI * (s.carrier_hz * d.delay_s - d.doppler_hz * t));
                    ph * d.gain.sqrt() * sinc(m as f64 + s.bandwidth_hz * (eta - d.delay_s))
                })
                .sum()
        })
        .collect()
}

fn rel_err(a: &[C], b: &[C]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum::<f64>().sqrt();
    num / den
}

fn random_small_scenario(rng: &mut ChaCha8Rng, max_n: usize, k_range: (usize, usize)) -> Scenario<f64> {
    let rows = rng.random_range(1..=2usize);
    let cols = rng.random_range(1..=max_n / rows);
    let mobile = rng.random_bool(0.5);
    Scenario {
        bandwidth_hz: rng.random_range(0.5e6..4.0e6),
        n_subcarriers: rng.random_range(k_range.0..=k_range.1),
        grid: RisGrid::new(rows, cols, rng.random_range(0.01..0.08), rng.random_range(0.01..0.08)).unwrap(),
        ue_pos: [rng.random_range(2.0..8.0), rng.random_range(1.0..6.0), 1.5],
        ue_speed: if mobile { rng.random_range(0.0..30.0) } else { 0.0 },
        n_blocks: if mobile { rng.random_range(1..=3) } else { 1 },
        rng_seed: rng.random(),
        ..Scenario::default()
    }
}

fn build(s: &Scenario<f64>) -> ris_core::Result<(PathSet<f64>, ChannelRealization)> {
    let paths = s.path_set()?;
    let chan = if s.ue_speed == 0.0 && s.n_blocks == 1 {
        ChannelRealization::stationary(&paths, s)?
    } else {
        ChannelRealization::mobile(&paths, s)?
    };
    Ok((paths, chan))
}

fn random_omega(rng: &mut ChaCha8Rng, n: usize) -> Vec<C> {
    (0..n).map(|_| C::from_polar(1.0, rng.random_range(-PI..PI))).collect()
}

// ---------------------------------------------------------------- criteria

fn c1_channel_oracle() -> Verdict {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut worst, mut done) = (0.0f64, 0);
    while done < 200 {
        let s = random_small_scenario(&mut rng, 8, (16, 32));
        let Ok((paths, chan)) = build(&s) else { continue };
        let eta = paths.direct.iter().map(|d| d.delay_s).fold(f64::INFINITY, f64::min);
        assert_eq!(chan.eta, eta);
        let omega = random_omega(&mut rng, s.n_reflectors());
        for u in 0..chan.n_blocks() {
            let t = if s.ue_speed == 0.0 && s.n_blocks == 1 {
                0.0
            } else {
                (u + 1) as f64 * s.block_duration_s
            };
            let cascade = naive_cascade(&paths, &s, eta, chan.n_taps, t, &omega);
            worst = worst.max(rel_err(&chan.cascade_taps(u, &omega), &cascade));
            let direct = naive_direct(&paths, &s, eta, chan.n_taps, t);
            worst = worst.max(rel_err(&chan.direct_block(u).to_vec(), &direct));
        }
        done += 1;
    }
    let el = t0.elapsed();
    verdict(
        worst <= 1e-10 && within(el, 10.0),
        format!("200 instances, worst rel err {worst:.2e} (limit 1e-10), {:.2}s (limit 10s)", el.as_secs_f64()),
    )
}

/// Rate by explicit DFT of the combined taps, subcarrier by subcarrier.
fn naive_rate(
    chan: &ChannelRealization,
    cfg: &RisConfiguration<f64>,
    alloc: &PowerAllocation<f64>,
    s: &Scenario<f64>,
) -> f64 {
    let k = s.n_subcarriers;
    let xi = (k + chan.n_taps - 1) as f64;
    let mut total = 0.0f64;
    for u in 0..chan.n_blocks() {
        let omega: Vec<C> = cfg.thetas.row(u).iter().map(|&t| C::from_polar(1.0, t)).collect();
        for i in 0..k {
            let mut h = C::new(0.0, 0.0);
            for m in 0..chan.n_taps {
                let mut tap = chan.direct[[u, m]];
                for (n, w) in omega.iter().enumerate() {
                    tap += w * chan.composite[[u, n, m]];
                }
                h += tap * C::from_polar(1.0, 2.0 * PI * (i * m) as f64 / k as f64);
            }
            let snr = alloc.powers[[u, i]] * h.norm_sqr() / (s.bandwidth_hz * s.noise_density);
            total += (1.0 + snr).log2();
        }
    }
    s.bandwidth_hz / xi * total
}

fn c2_rate_oracle() -> Verdict {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut worst, mut done) = (0.0f64, 0);
    while done < 100 {
        let mut s = random_small_scenario(&mut rng, 8, (16, 64));
        s.noise_density = 10f64.powf(rng.random_range(-21.0..-17.0));
        let Ok((_, chan)) = build(&s) else { continue };
        let u_count = chan.n_blocks();
        let thetas = Array2::from_shape_fn((u_count, s.n_reflectors()), |_| rng.random_range(-PI..PI));
        let cfg = RisConfiguration::new(thetas, false);
        let raw: Vec<Vec<f64>> = (0..u_count)
            .map(|_| (0..s.n_subcarriers).map(|_| rng.random_range(0.0..1.0f64)).collect())
            .collect();
        let rows: Vec<Vec<f64>> = raw
            .iter()
            .map(|r| {
                let sum: f64 = r.iter().sum();
                r.iter().map(|p| p * s.power_budget / sum).collect()
            })
            .collect();
        let alloc = PowerAllocation::from_blocks(&rows).unwrap();
        let got = achievable_rate(&chan, &cfg, &alloc, &s).unwrap().rate_bit_s;
        let want = naive_rate(&chan, &cfg, &alloc, &s);
        worst = worst.max((got - want).abs() / want.abs());
        done += 1;
    }
    let el = t0.elapsed();
    verdict(
        worst <= 1e-9 && within(el, 5.0),
        format!("100 instances, worst rel err {worst:.2e} (limit 1e-9), {:.2}s (limit 5s)", el.as_secs_f64()),
    )
}

fn c3_brute_force() -> Verdict {
    let t0 = Instant::now();
    let mut spec = ExperimentSpec::defaults(ExperimentKind::OracleSuite);
    spec.reflector_counts = vec![2, 3, 4, 5, 6];
    spec.bits = vec![1, 2];
    spec.trials = 50;
    spec.seed = 303;
    let checks = oracle_checks(&spec).unwrap();
    let failures: Vec<_> = checks.iter().filter(|c| !c.holds(1e-9)).collect();
    let min_ao = checks.iter().map(|c| c.ao_rate / c.oracle_rate).fold(f64::INFINITY, f64::min);
    let max_stm = checks.iter().map(|c| c.stm_quantized_rate / c.oracle_rate).fold(0.0, f64::max);
    let max_nn = checks
        .iter()
        .filter_map(|c| c.nn_quantized_rate.map(|r| r / c.oracle_rate))
        .fold(0.0, f64::max);
    let with_nn = checks.iter().all(|c| c.nn_quantized_rate.is_some());
    let el = t0.elapsed();
    verdict(
        checks.len() == 50 && failures.is_empty() && with_nn && within(el, 60.0),
        format!(
            "{} instances, {} violations; min AO/oracle {min_ao:.4}, max STM/oracle {max_stm:.4}, max NN/oracle {max_nn:.4}, {:.1}s (limit 60s)",
            checks.len(),
            failures.len(),
            el.as_secs_f64()
        ),
    )
}

fn rows_for<'a>(rows: &'a [ResultRow], method: &str) -> Vec<&'a ResultRow> {
    rows.iter().filter(|r| r.method == method).collect()
}

fn c4_rate_vs_bandwidth() -> Verdict {
    let t0 = Instant::now();
    let spec = ExperimentSpec::defaults(ExperimentKind::RateVsBandwidth);
    assert_eq!(spec.reflector_counts, [100]);
    let rows = run_rate_vs_bandwidth(&spec).unwrap();
    let mut ok = rows.iter().all(|r| r.status == "ok");
    let mut lines = Vec::new();
    for &b in &spec.bandwidths_hz {
        let at: Vec<&ResultRow> = rows.iter().filter(|r| r.bandwidth_hz == b).collect();
        let coh = at.iter().find(|r| r.method == "coherent").and_then(|r| r.rate_bit_s).unwrap_or(f64::NAN);
        let mut parts = vec![format!("B={:.1}MHz coh={:.1}Mbit/s", b / 1e6, coh / 1e6)];
        for m in ["stm", "ao", "nn"] {
            let r = at.iter().find(|r| r.method == m).and_then(|r| r.rate_bit_s).unwrap_or(f64::NAN);
            ok &= r >= 0.85 * coh;
            parts.push(format!("{m}={:.3}", r / coh));
        }
        lines.push(parts.join(" "));
    }
    let coh = rows_for(&rows, "coherent");
    let x: Vec<f64> = coh.iter().map(|r| r.bandwidth_hz).collect();
    let y: Vec<f64> = coh.iter().map(|r| r.rate_bit_s.unwrap_or(f64::NAN)).collect();
    let r2 = linear_fit_r2(&x, &y);
    let el = t0.elapsed();
    ok &= r2 >= 0.99 && within(el, 600.0);
    verdict(
        ok,
        format!(
            "N=100, {} trials; {}; coherent R^2 {r2:.5} (limit 0.99); {:.0}s (limit 600s)",
            spec.trials,
            lines.join("; "),
            el.as_secs_f64()
        ),
    )
}

fn c5_doppler_table() -> Verdict {
    let t0 = Instant::now();
    let spec = ExperimentSpec::defaults(ExperimentKind::DopplerTable);
    assert_eq!(spec.reflector_counts, [25, 64, 100]);
    assert!(spec.trials >= 50);
    let rows = run_doppler_table(&spec).unwrap();
    let get = |m: &str, n: usize| rows.iter().find(|r| r.method == m && r.n_reflectors == n).unwrap();
    let mut ordering = true;
    let mut doppler = true;
    let (mut drops_tv, mut drops_ti) = (Vec::new(), Vec::new());
    let mut lines = Vec::new();
    for &n in &spec.reflector_counts {
        let coh = get("coherent", n).rate_bit_s.unwrap();
        let tv = get("tv_stm", n);
        let ti = get("ti_stm", n);
        let un = get("uncompensated", n);
        let (tv_r, ti_r) = (tv.rate_bit_s.unwrap(), ti.rate_bit_s.unwrap());
        ordering &= ti_r <= tv_r * (1.0 + 1e-6) && tv_r <= coh * (1.0 + 1e-6);
        drops_tv.push(1.0 - tv_r / coh);
        drops_ti.push(1.0 - ti_r / coh);
        let (ti_d, tv_d, un_d) = (
            ti.residual_doppler_hz.unwrap(),
            tv.residual_doppler_hz.unwrap(),
            un.residual_doppler_hz.unwrap(),
        );
        doppler &= ti_d <= 0.01 * un_d;
        lines.push(format!(
            "N={n}: coh {:.1} tv {:.1} ti {:.1} Mbit/s, drop tv {:.1}% ti {:.1}%, |fD| ti {ti_d:.1} tv {tv_d:.1} uncomp {un_d:.1} Hz",
            coh / 1e6,
            tv_r / 1e6,
            ti_r / 1e6,
            100.0 * drops_tv.last().unwrap(),
            100.0 * drops_ti.last().unwrap()
        ));
    }
    let decreasing = |d: &[f64]| d.windows(2).all(|w| w[1] < w[0]);
    let trend = decreasing(&drops_tv) && decreasing(&drops_ti);
    let el = t0.elapsed();
    verdict(
        ordering && trend && doppler && within(el, 300.0),
        format!(
            "{} trials; ordering {}, drop trend {}, ti residual <= 1% uncompensated {}; {}; {:.0}s (limit 300s)",
            spec.trials,
            ordering,
            trend,
            doppler,
            lines.join("; "),
            el.as_secs_f64()
        ),
    )
}

fn c6_efficiency_table() -> Verdict {
    let t0 = Instant::now();
    let spec = ExperimentSpec::defaults(ExperimentKind::EfficiencyTable);
    assert_eq!(spec.bits, [4]);
    let rows = run_efficiency_table(&spec).unwrap();
    let mut ok = rows.iter().all(|r| r.status == "ok");
    let mut lines = Vec::new();
    for &n in &spec.reflector_counts {
        let eff = |m: &str| {
            rows.iter()
                .find(|r| r.method == m && r.n_reflectors == n)
                .and_then(|r| r.efficiency_pct)
                .unwrap_or(f64::NAN)
        };
        let (nn, ao, stm) = (eff("nn"), eff("ao"), eff("stm"));
        ok &= nn > ao && ao > 0.0 && nn >= 4.0 * stm;
        lines.push(format!("N={n}: nn {nn:.1}% ao {ao:.1}% stm {stm:.1}%"));
    }
    let el = t0.elapsed();
    ok &= within(el, 900.0);
    verdict(
        ok,
        format!("4-bit, {} trials; {}; {:.0}s (limit 900s)", spec.trials, lines.join("; "), el.as_secs_f64()),
    )
}

fn c7_quantization() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let (mut worst, mut done) = (f64::INFINITY, 0);
    while done < 100 {
        let side = [5usize, 8, 10][done % 3];
        let s = Scenario {
            grid: RisGrid::square(side, 0.0428).unwrap(),
            bandwidth_hz: [2.1e6, 6.3e6, 10.5e6][rng.random_range(0..3)],
            rng_seed: rng.random(),
            ..Scenario::default()
        };
        let Ok((_, chan)) = build(&s) else { continue };
        let alloc = PowerAllocation::uniform(1, s.n_subcarriers, s.power_budget);
        let cfg = tv_stm(&chan);
        let r = achievable_rate(&chan, &cfg, &alloc, &s).unwrap().rate_bit_s;
        let rq = achievable_rate(&chan, &quantize_config(&cfg, 4).unwrap(), &alloc, &s)
            .unwrap()
            .rate_bit_s;
        worst = worst.min(rq / r);
        done += 1;
    }
    verdict(
        worst >= 0.98,
        format!("100 instances, worst R(q4)/R {worst:.5} (limit 0.98)"),
    )
}

fn c8_gradient_check() -> Verdict {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let s = Scenario {
        n_subcarriers: 8,
        bandwidth_hz: 1.0e6,
        grid: RisGrid::new(2, 2, 0.0428, 0.0428).unwrap(),
        ..Scenario::default()
    };
    let chan = {
        let s = Scenario { rng_seed: 8, ..s.clone() };
        build(&s).unwrap().1
    };
    let alloc = PowerAllocation::uniform(1, 8, s.power_budget);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let p = NnParameters::<f64>::init(8, 4, 2, &mut rng).unwrap();
        let mut flat = p.to_flat();
        for v in flat.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
        let mut p = p;
        p.set_flat(&flat).unwrap();
        let (_, grads) = loss_and_gradients(&p, &chan, &alloc, &s).unwrap();
        let g = grads.to_flat();
        let scale = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for idx in 0..flat.len() {
            let eval = |delta: f64| {
                let mut f = flat.clone();
                f[idx] += delta;
                let mut q = p.clone();
                q.set_flat(&f).unwrap();
                loss_and_gradients(&q, &chan, &alloc, &s).unwrap().0
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let denom = g[idx].abs().max(fd.abs()).max(1e-6 * scale);
            if denom > 0.0 {
                worst = worst.max((g[idx] - fd).abs() / denom);
            }
        }
    }
    let el = t0.elapsed();
    verdict(
        worst <= 1e-4 && within(el, 5.0),
        format!("K=8 N=4 L=2, 20 points, worst rel err {worst:.2e} (limit 1e-4), {:.2}s (limit 5s)", el.as_secs_f64()),
    )
}

fn run_cli(args: &[&str], threads: &str) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_risim"))
        .args(args)
        .env("RAYON_NUM_THREADS", threads)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&out.stderr).into_owned())
    }
}

fn c9_determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let small = ["--set", "trials=3", "--set", "n_subcarriers=64", "--set", "train_size=12", "--set", "epochs=4"];
    let cases: Vec<(&str, Vec<&str>)> = vec![
        ("rate", vec!["sweep", "--kind", "rate_vs_bandwidth", "--set", "reflector_counts=16"]),
        ("eff", vec!["sweep", "--kind", "efficiency_table", "--set", "reflector_counts=9,16", "--set", "sequence_length=3"]),
        ("dop", vec!["sweep", "--kind", "doppler_table", "--set", "reflector_counts=9,16", "--set", "n_blocks=4"]),
        ("ora", vec!["oracle", "--set", "reflector_counts=2,3", "--set", "oracle_subcarriers=16"]),
        ("sim", vec!["simulate", "--method", "ao", "--set", "n_rows=3", "--set", "n_cols=3"]),
        ("nn", vec!["train-nn", "--set", "n_rows=2", "--set", "n_cols=2"]),
    ];
    let mut mismatched = Vec::new();
    for (name, args) in &cases {
        let mut outputs = Vec::new();
        for (run, threads) in [(0, "4"), (1, "1")] {
            let out = dir.path().join(format!("{name}{run}.csv"));
            let mut full: Vec<&str> = args.clone();
            full.extend_from_slice(&small);
            let out_s = out.to_str().unwrap().to_string();
            full.extend(["--seed", "9", "--out", &out_s]);
            if let Err(e) = run_cli(&full, threads) {
                return verdict(false, format!("{name}: CLI failed: {e}"));
            }
            outputs.push(std::fs::read(&out).unwrap());
        }
        if outputs[0] != outputs[1] || outputs[0].is_empty() {
            mismatched.push(*name);
        }
    }
    verdict(
        mismatched.is_empty(),
        format!(
            "{} CLI experiments run twice (4 and 1 threads), byte-identical: {}",
            cases.len(),
            if mismatched.is_empty() { "all".to_string() } else { format!("not {mismatched:?}") }
        ),
    )
}

fn bits_equal(a: impl IntoIterator<Item = f64>, b: impl IntoIterator<Item = f64>) -> bool {
    a.into_iter().map(f64::to_bits).eq(b.into_iter().map(f64::to_bits))
}

fn complex_bits(a: &[C]) -> Vec<f64> {
    a.iter().flat_map(|z| [z.re, z.im]).collect()
}

fn c10_specialization() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let ao = AoSettings::default();
    let mut failures = Vec::new();
    for seed in 0..20u64 {
        let s = Scenario {
            grid: RisGrid::square([3usize, 5, 8][seed as usize % 3], 0.0428).unwrap(),
            rng_seed: seed,
            ..Scenario::default()
        };
        let paths = s.path_set().unwrap();
        let fixed = ChannelRealization::stationary(&paths, &s).unwrap();
        let sm = Scenario {
            ue_speed: 0.0,
            n_blocks: 1,
            ue_heading: [1.0, 0.0, 0.0],
            ..s.clone()
        };
        let moving = ChannelRealization::mobile(&sm.path_set().unwrap(), &sm).unwrap();
        let same_chan = fixed.n_taps == moving.n_taps
            && fixed.eta.to_bits() == moving.eta.to_bits()
            && bits_equal(
                complex_bits(fixed.direct.as_slice().unwrap()),
                complex_bits(moving.direct.as_slice().unwrap()),
            )
            && bits_equal(
                complex_bits(fixed.composite.as_slice().unwrap()),
                complex_bits(moving.composite.as_slice().unwrap()),
            );
        let net = NnParameters::<f64>::init(s.n_subcarriers, s.n_reflectors(), 2, &mut rng).unwrap();
        let configs = |c: &ChannelRealization| {
            let a = ao_optimize(c, &s, &ao).unwrap();
            vec![
                (tv_stm(c), PowerAllocation::uniform(1, s.n_subcarriers, s.power_budget)),
                (ti_stm(c, 0).unwrap(), PowerAllocation::uniform(1, s.n_subcarriers, s.power_budget)),
                (
                    infer_config(&net, c, s.n_subcarriers, false).unwrap(),
                    PowerAllocation::uniform(1, s.n_subcarriers, s.power_budget),
                ),
                (a.config, a.allocation),
            ]
        };
        let (cf, cm) = (configs(&fixed), configs(&moving));
        let same_cfg = cf.iter().zip(&cm).all(|((a, pa), (b, pb))| {
            bits_equal(a.thetas.iter().copied(), b.thetas.iter().copied())
                && bits_equal(pa.powers.iter().copied(), pb.powers.iter().copied())
        });
        let same_rate = cf.iter().zip(&cm).all(|((a, pa), (b, pb))| {
            let ra = achievable_rate(&fixed, a, pa, &s).unwrap();
            let rb = achievable_rate(&moving, b, pb, &sm).unwrap();
            ra.rate_bit_s.to_bits() == rb.rate_bit_s.to_bits() && bits_equal(ra.per_subcarrier_snr, rb.per_subcarrier_snr)
        });
        if !(same_chan && same_cfg && same_rate) {
            failures.push((seed, same_chan, same_cfg, same_rate));
        }
    }
    verdict(
        failures.is_empty(),
        format!(
            "20 seeds, channels/configs (tv, ti, nn, ao)/rates bit-identical; failures {failures:?}"
        ),
    )
}

fn main() {
    // `cargo test -- --list` and filters from the default harness
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let filter = args.iter().find(|a| !a.starts_with('-')).cloned();
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("channel synthesis oracle", c1_channel_oracle),
        ("rate oracle", c2_rate_oracle),
        ("brute-force dominance", c3_brute_force),
        ("rate vs bandwidth", c4_rate_vs_bandwidth),
        ("Doppler table", c5_doppler_table),
        ("efficiency table", c6_efficiency_table),
        ("4-bit quantization", c7_quantization),
        ("network gradient check", c8_gradient_check),
        ("CLI determinism", c9_determinism),
        ("stationary specialization", c10_specialization),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = format!("criterion {}", i + 1);
        if filter.as_ref().is_some_and(|f| !id.ends_with(f.as_str()) && !name.contains(f.as_str())) {
            continue;
        }
        let v = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        if !v.pass {
            failed += 1;
        }
        println!("{id} ({name}): {} - {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
