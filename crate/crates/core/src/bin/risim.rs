use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use ris_core::config::ao_optimize;
use ris_core::harness::{
    brute_force_config_oracle, configure, emit_results, realization, run_experiment, train_network, ExperimentKind,
    ExperimentSpec, Method,
};
use ris_core::io::{read_params, write_channel, write_config, write_params, write_reports, ReportRecord};
use ris_core::metrics::{achievable_rate, coherent_rate_waterfilled, quantize_config, residual_doppler, PowerAllocation};
use ris_core::settings::{apply_to_spec, parse_override, read_to_string, spec_from_str};
use ris_core::{Error, Result};

#[derive(Parser)]
#[command(name = "risim", version, about = "RIS-aided OFDM link simulator")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Configure one realization and report its rate.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Network parameters for `--method nn`; trained on the fly when absent.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Quantize the configuration to this many bits.
        #[arg(long)]
        bits: Option<u32>,
        /// Also write the channel taps here.
        #[arg(long)]
        channel_out: Option<PathBuf>,
        /// Also write the configuration here.
        #[arg(long)]
        config_out: Option<PathBuf>,
    },
    /// Run a Monte-Carlo experiment and write result and plot CSVs.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// rate_vs_bandwidth, efficiency_table or doppler_table.
        #[arg(long, default_value = "rate_vs_bandwidth")]
        kind: String,
    },
    /// Check configurators against exhaustive search on tiny instances.
    Oracle {
        #[command(flatten)]
        common: Common,
    },
    /// Train the neural configurator and write its parameters.
    TrainNn {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated methods.
    #[arg(long, value_delimiter = ',')]
    method: Vec<String>,
    /// Override a configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Use the larger reflector sweeps.
    #[arg(long)]
    full_scale: bool,
    /// Record wall-clock times in the output.
    #[arg(long)]
    timing: bool,
}

impl Common {
    fn spec(&self, kind: ExperimentKind) -> Result<ExperimentSpec> {
        let mut spec = match &self.config {
            Some(path) => spec_from_str(&read_to_string(path)?, &path.display().to_string(), kind)?,
            None => ExperimentSpec::defaults(kind),
        };
        if self.full_scale {
            spec.full_scale();
        }
        let overrides = self.overrides.iter().map(|o| parse_override(o)).collect::<Result<Vec<_>>>()?;
        apply_to_spec(&mut spec, &overrides, "command line")?;
        if let Some(seed) = self.seed {
            spec.seed = seed;
            spec.scenario.rng_seed = seed;
        }
        if !self.method.is_empty() {
            spec.methods = self.method.iter().map(|m| Method::from_str(m.trim())).collect::<Result<_>>()?;
        }
        if let Some(out) = &self.out {
            spec.out = Some(out.clone());
        }
        spec.timing |= self.timing;
        Ok(spec)
    }
}

fn output_path(spec: &ExperimentSpec, fallback: &str) -> PathBuf {
    spec.out.clone().unwrap_or_else(|| PathBuf::from(fallback))
}

fn simulate(
    common: &Common,
    params: Option<&Path>,
    bits: Option<u32>,
    channel_out: Option<&Path>,
    config_out: Option<&Path>,
) -> Result<()> {
    let spec = common.spec(ExperimentKind::RateVsBandwidth)?;
    let s = &spec.scenario;
    s.validate()?;
    let method = match spec.methods.as_slice() {
        [] => Method::Stm,
        [m] => *m,
        _ => return Err(Error::InvalidArgument("simulate takes a single method".into())),
    };
    let (_, chan) = realization(s, s.rng_seed)?;
    if let Some(p) = channel_out {
        write_channel(&chan, p)?;
    }
    let uniform = PowerAllocation::uniform(chan.n_blocks(), s.n_subcarriers, s.power_budget);
    let (config, alloc) = match method {
        Method::Coherent => {
            let bound = coherent_rate_waterfilled(&chan, s)?;
            let xi = ris_core::metrics::cyclic_prefix_factor(s.n_subcarriers, chan.n_taps);
            let record = ReportRecord {
                rate_bps: bound,
                coherent_bps: bound,
                xi,
                b_bits: None,
                efficiency_pct: None,
                residual_doppler_hz: None,
            };
            return emit_report(&record, spec.out.as_deref());
        }
        Method::Ao => {
            let ao = ao_optimize(&chan, s, &spec.ao)?;
            (ao.config, ao.allocation)
        }
        Method::Oracle => {
            let (cfg, _) = brute_force_config_oracle(&chan, bits.unwrap_or(2), &uniform, s)?;
            (cfg, uniform)
        }
        Method::Nn => {
            let net = match params {
                Some(p) => read_params(p)?,
                None => train_network(&spec, s, &[])?.params,
            };
            (ris_core::nnconf::infer_config(&net, &chan, s.n_subcarriers, false)?, uniform)
        }
        m => (configure(m, &chan, s, None, &spec, 0)?, uniform),
    };
    let config = match bits {
        Some(b) if method != Method::Oracle => quantize_config(&config, b)?,
        _ => config,
    };
    if let Some(p) = config_out {
        write_config(&config, p)?;
    }
    let report = achievable_rate(&chan, &config, &alloc, s)?;
    let mut record = ReportRecord::from_report(&report);
    record.coherent_bps = coherent_rate_waterfilled(&chan, s)?;
    record.b_bits = bits;
    if chan.n_blocks() >= 2 {
        record.residual_doppler_hz = residual_doppler(&chan, &config).ok();
    }
    emit_report(&record, spec.out.as_deref())
}

fn emit_report(record: &ReportRecord, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => write_reports(std::slice::from_ref(record), p),
        None => {
            println!("{}", ris_core::io::REPORT_HEADER.join(","));
            println!("{}", record.csv_line());
            Ok(())
        }
    }
}

fn sweep(common: &Common, kind: &str) -> Result<()> {
    let kind = ExperimentKind::from_str(kind)?;
    if kind == ExperimentKind::OracleSuite {
        return Err(Error::InvalidArgument("use the oracle verb for the oracle suite".into()));
    }
    let spec = common.spec(kind)?;
    let rows = run_experiment(&spec)?;
    let out = output_path(&spec, &format!("{kind}.csv"));
    emit_results(&rows, &out)?;
    log::info!("wrote {} rows to {}", rows.len(), out.display());
    Ok(())
}

fn oracle(common: &Common) -> Result<()> {
    let spec = common.spec(ExperimentKind::OracleSuite)?;
    let rows = run_experiment(&spec)?;
    let out = output_path(&spec, "oracle_suite.csv");
    emit_results(&rows, &out)?;
    let violated = rows.iter().filter(|r| r.status == "violated").count();
    if violated > 0 {
        return Err(Error::Contract(format!("{violated} oracle rows violated, see {}", out.display())));
    }
    Ok(())
}

fn train_nn(common: &Common) -> Result<()> {
    let spec = common.spec(ExperimentKind::RateVsBandwidth)?;
    spec.validate()?;
    let outcome = train_network(&spec, &spec.scenario, &[])?;
    let out = output_path(&spec, "nn_params.txt");
    write_params(&outcome.params, &out)?;
    let history = out.with_extension("history.csv");
    let mut text = String::from("epoch,train_loss,validation_rate\n");
    for e in &outcome.history {
        text.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, e.validation_rate));
    }
    std::fs::write(&history, text).map_err(|source| Error::Io { path: history, source })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::Simulate {
            common,
            params,
            bits,
            channel_out,
            config_out,
        } => simulate(common, params.as_deref(), *bits, channel_out.as_deref(), config_out.as_deref()),
        Command::Sweep { common, kind } => sweep(common, kind),
        Command::Oracle { common } => oracle(common),
        Command::TrainNn { common } => train_nn(common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
