//! Plain-text file formats for channels, configurations, rate reports and
//! network parameters.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so every
//! reader reproduces the written values bit for bit.
//!
//! | file | header |
//! |---|---|
//! | channel | `# eta_s=<s> block_duration_s=<s>` then `block,tap,reflector,re,im`; the direct tap has an empty `reflector` |
//! | configuration | `# time_invariant=<bool>` then `block,reflector,theta_radians` |
//! | rate report | `rate_bps,coherent_bps,xi,b_bits,efficiency_pct,residual_doppler_hz` |
//! | network | `n_subcarriers,n_reflectors,depth` line, then one value per line: `W0` row-major, `b0`, then `w_l`, `b_l` per layer |

use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::{Array2, Array3};
use num_complex::Complex;

use crate::channel::ChannelRealization;
use crate::config::RisConfiguration;
use crate::error::{Error, Result};
use crate::metrics::RateReport;
use crate::nnconf::NnParameters;

pub const CHANNEL_HEADER: [&str; 5] = ["block", "tap", "reflector", "re", "im"];
pub const CONFIG_HEADER: [&str; 3] = ["block", "reflector", "theta_radians"];
pub const REPORT_HEADER: [&str; 6] = [
    "rate_bps",
    "coherent_bps",
    "xi",
    "b_bits",
    "efficiency_pct",
    "residual_doppler_hz",
];

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        source_name: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn num<F: std::str::FromStr>(path: &Path, line: usize, field: &str, s: &str) -> Result<F> {
    s.trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("bad {field} '{s}'")))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(text.as_bytes()).map_err(io_err(path))
}

/// Data lines after the `#` preamble, with 1-based line numbers; the header
/// line is checked against `header`.
fn table<'a>(path: &Path, text: &'a str, header: &[&str]) -> Result<(Vec<&'a str>, Vec<(usize, Vec<&'a str>)>)> {
    let mut preamble = Vec::new();
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let header_line = loop {
        match lines.next() {
            Some((_, l)) if l.starts_with('#') => preamble.push(l.trim_start_matches('#').trim()),
            Some(h) => break h,
            None => return Err(parse_err(path, 1, "missing header")),
        }
    };
    if header_line.1.split(',').map(str::trim).ne(header.iter().copied()) {
        return Err(parse_err(path, header_line.0, format!("expected header '{}'", header.join(","))));
    }
    let rows = lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let fields: Vec<&str> = l.split(',').collect();
            if fields.len() != header.len() {
                Err(parse_err(path, i, format!("expected {} fields", header.len())))
            } else {
                Ok((i, fields))
            }
        })
        .collect::<Result<_>>()?;
    Ok((preamble, rows))
}

/// `key=value` pairs from preamble lines.
fn preamble_value<'a>(preamble: &[&'a str], key: &str) -> Option<&'a str> {
    preamble
        .iter()
        .flat_map(|l| l.split_whitespace())
        .find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
}

pub fn write_channel(chan: &ChannelRealization<f64>, path: &Path) -> Result<()> {
    let mut out = format!(
        "# eta_s={} block_duration_s={}\n{}\n",
        chan.eta,
        chan.block_duration_s,
        CHANNEL_HEADER.join(",")
    );
    for u in 0..chan.n_blocks() {
        for (m, h) in chan.direct.row(u).iter().enumerate() {
            out.push_str(&format!("{u},{m},,{},{}\n", h.re, h.im));
        }
        for n in 0..chan.n_reflectors() {
            for m in 0..chan.n_taps {
                let v = chan.composite[[u, n, m]];
                out.push_str(&format!("{u},{m},{n},{},{}\n", v.re, v.im));
            }
        }
    }
    write_text(path, &out)
}

pub fn read_channel(path: &Path) -> Result<ChannelRealization<f64>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let (preamble, rows) = table(path, &text, &CHANNEL_HEADER)?;
    let meta = |key: &str| -> Result<f64> {
        let v = preamble_value(&preamble, key).ok_or_else(|| parse_err(path, 1, format!("missing {key}")))?;
        num(path, 1, key, v)
    };
    let eta = meta("eta_s")?;
    let block_duration_s = meta("block_duration_s")?;

    let mut entries = Vec::with_capacity(rows.len());
    let (mut u_max, mut m_max, mut n_count) = (0usize, 0usize, 0usize);
    for (line, f) in &rows {
        let u: usize = num(path, *line, "block", f[0])?;
        let m: usize = num(path, *line, "tap", f[1])?;
        let n: Option<usize> = if f[2].trim().is_empty() {
            None
        } else {
            Some(num(path, *line, "reflector", f[2])?)
        };
        let z = Complex::new(num(path, *line, "re", f[3])?, num(path, *line, "im", f[4])?);
        u_max = u_max.max(u + 1);
        m_max = m_max.max(m + 1);
        if let Some(n) = n {
            n_count = n_count.max(n + 1);
        }
        entries.push((*line, u, m, n, z));
    }
    if entries.is_empty() {
        return Err(parse_err(path, 2, "no taps"));
    }
    let mut direct = Array2::zeros((u_max, m_max));
    let mut composite = Array3::zeros((u_max, n_count, m_max));
    let mut seen = vec![false; u_max * (n_count + 1) * m_max];
    for (line, u, m, n, z) in entries {
        let slot = (u * (n_count + 1) + n.map_or(0, |n| n + 1)) * m_max + m;
        if std::mem::replace(&mut seen[slot], true) {
            return Err(parse_err(path, line, "duplicate entry"));
        }
        match n {
            None => direct[[u, m]] = z,
            Some(n) => composite[[u, n, m]] = z,
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(parse_err(path, rows.len() + 2, "incomplete tap table"));
    }
    Ok(ChannelRealization {
        n_taps: m_max,
        eta,
        block_duration_s,
        direct,
        composite,
    })
}

pub fn write_config(config: &RisConfiguration<f64>, path: &Path) -> Result<()> {
    let mut out = format!("# time_invariant={}\n{}\n", config.time_invariant, CONFIG_HEADER.join(","));
    for ((u, n), t) in config.thetas.indexed_iter() {
        out.push_str(&format!("{u},{n},{t}\n"));
    }
    write_text(path, &out)
}

pub fn read_config(path: &Path) -> Result<RisConfiguration<f64>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let (preamble, rows) = table(path, &text, &CONFIG_HEADER)?;
    let time_invariant = match preamble_value(&preamble, "time_invariant") {
        Some(v) => num(path, 1, "time_invariant", v)?,
        None => false,
    };
    let mut entries = Vec::with_capacity(rows.len());
    let (mut u_count, mut n_count) = (0, 0);
    for (line, f) in &rows {
        let u: usize = num(path, *line, "block", f[0])?;
        let n: usize = num(path, *line, "reflector", f[1])?;
        let t: f64 = num(path, *line, "theta_radians", f[2])?;
        u_count = u_count.max(u + 1);
        n_count = n_count.max(n + 1);
        entries.push((u, n, t));
    }
    if entries.len() != u_count * n_count {
        return Err(parse_err(path, rows.len() + 1, "configuration table is not a full grid"));
    }
    let mut thetas = Array2::from_elem((u_count, n_count), f64::NAN);
    for (u, n, t) in entries {
        thetas[[u, n]] = t;
    }
    if thetas.iter().any(|t| t.is_nan()) {
        return Err(parse_err(path, rows.len() + 1, "duplicate configuration entry"));
    }
    let cfg = RisConfiguration::new(thetas, time_invariant);
    cfg.validate()?;
    Ok(cfg)
}

/// One row of the rate-report file.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRecord {
    pub rate_bps: f64,
    pub coherent_bps: f64,
    pub xi: usize,
    pub b_bits: Option<u32>,
    pub efficiency_pct: Option<f64>,
    pub residual_doppler_hz: Option<f64>,
}

impl ReportRecord {
    pub fn from_report(report: &RateReport<f64>) -> Self {
        Self {
            rate_bps: report.rate_bit_s,
            coherent_bps: report.coherent_bit_s,
            xi: report.xi,
            b_bits: None,
            efficiency_pct: None,
            residual_doppler_hz: None,
        }
    }

    pub fn csv_line(&self) -> String {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{}",
            self.rate_bps,
            self.coherent_bps,
            self.xi,
            self.b_bits.map(|b| b.to_string()).unwrap_or_default(),
            opt(self.efficiency_pct),
            opt(self.residual_doppler_hz)
        )
    }
}

pub fn write_reports(records: &[ReportRecord], path: &Path) -> Result<()> {
    let mut out = REPORT_HEADER.join(",") + "\n";
    for r in records {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn read_reports(path: &Path) -> Result<Vec<ReportRecord>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let (_, rows) = table(path, &text, &REPORT_HEADER)?;
    rows.iter()
        .map(|(line, f)| {
            let opt = |i: usize| -> Result<Option<f64>> {
                if f[i].trim().is_empty() {
                    Ok(None)
                } else {
                    num(path, *line, REPORT_HEADER[i], f[i]).map(Some)
                }
            };
            Ok(ReportRecord {
                rate_bps: num(path, *line, "rate_bps", f[0])?,
                coherent_bps: num(path, *line, "coherent_bps", f[1])?,
                xi: num(path, *line, "xi", f[2])?,
                b_bits: if f[3].trim().is_empty() {
                    None
                } else {
                    Some(num(path, *line, "b_bits", f[3])?)
                },
                efficiency_pct: opt(4)?,
                residual_doppler_hz: opt(5)?,
            })
        })
        .collect()
}

pub fn write_params(params: &NnParameters<f64>, path: &Path) -> Result<()> {
    let mut out = format!(
        "n_subcarriers,n_reflectors,depth\n{},{},{}\n",
        params.n_subcarriers(),
        params.n_reflectors(),
        params.depth()
    );
    for v in params.to_flat() {
        out.push_str(&v.to_string());
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn read_params(path: &Path) -> Result<NnParameters<f64>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, "n_subcarriers,n_reflectors,depth")) => {}
        _ => return Err(parse_err(path, 1, "expected header 'n_subcarriers,n_reflectors,depth'")),
    }
    let (line, shape) = lines.next().ok_or_else(|| parse_err(path, 2, "missing shape line"))?;
    let dims: Vec<usize> = shape
        .split(',')
        .map(|s| num(path, line, "shape", s))
        .collect::<Result<_>>()?;
    let [k, n, depth] = dims[..] else {
        return Err(parse_err(path, line, "shape needs three fields"));
    };
    let mut params = NnParameters::zeros(k, n, depth);
    let values: Vec<f64> = lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| num(path, i, "value", l))
        .collect::<Result<_>>()?;
    if values.len() != params.n_params() {
        return Err(parse_err(
            path,
            line,
            format!("expected {} values, found {}", params.n_params(), values.len()),
        ));
    }
    params.set_flat(&values)?;
    params.validate()?;
    Ok(params)
}
