//! `lorasync`: air-time calculator and synchronization simulator.
//!
//! Exit codes: 0 on success, 1 for usage or configuration errors, 2 for
//! runtime and I/O failures.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use lorasync_core::airtime::{
    guard_headroom_ms, remaining_time_bit_width, symbol_duration_us, AirTime,
};
use lorasync_core::report::write_trace_csv;
use lorasync_core::{
    run, time_on_air, Comparison, RadioParams, RunSummary, Scenario, ScenarioError, SyncStrategy,
    NS_PER_S,
};
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(
    name = "lorasync",
    version,
    about = "LoRaWAN slot synchronization toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Packet air-time for one set of radio parameters.
    Airtime(AirtimeArgs),
    /// Run one scenario and write its per-frame trace.
    Simulate(SimulateArgs),
    /// Run a scenario adaptively and with fixed-rate rounds on identical clocks.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
struct AirtimeArgs {
    /// Spreading factor, 5..=12.
    #[arg(long, required_unless_present = "max")]
    sf: Option<u8>,
    /// Bandwidth in kHz: 125, 250 or 500.
    #[arg(long, default_value_t = 125)]
    bw: u32,
    /// Coding rate index, 1..=4 for 4/5..4/8.
    #[arg(long, default_value_t = 1)]
    cr: u8,
    /// Payload length in bytes.
    #[arg(long, required_unless_present = "max")]
    pl: Option<u16>,
    #[arg(long, default_value_t = 8)]
    preamble: u16,
    /// Payload CRC present.
    #[arg(long, action = ArgAction::Set, num_args = 0..=1, default_value_t = true, default_missing_value = "true")]
    crc: bool,
    /// Implicit header mode.
    #[arg(long, action = ArgAction::Set, num_args = 0..=1, default_value_t = false, default_missing_value = "true")]
    ih: bool,
    /// Low data rate optimisation.
    #[arg(long, action = ArgAction::Set, num_args = 0..=1, default_value_t = false, default_missing_value = "true")]
    de: bool,
    /// Longest possible LoRaWAN uplink (SF12, 125 kHz, CR 4/8, 255 bytes).
    #[arg(long, conflicts_with_all = ["sf", "pl"])]
    max: bool,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    config: PathBuf,
    /// Trace CSV destination.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the seed in the config file.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    config: PathBuf,
    /// Fixed-rate round lengths in seconds.
    #[arg(long, value_delimiter = ',')]
    rounds: Vec<u64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Config {
        path: PathBuf,
        source: ScenarioError,
    },
    #[error(transparent)]
    Radio(#[from] lorasync_core::ParamError),
    #[error("{0}")]
    Usage(String),
    #[error("simulation failed: {0}")]
    Run(ScenarioError),
    #[error("{path}: {source}")]
    Write { path: PathBuf, source: io::Error },
    #[error("writing output: {0}")]
    Stdout(#[from] io::Error),
    #[error("worker thread panicked")]
    Worker,
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Read { .. }
            | CliError::Config { .. }
            | CliError::Radio(_)
            | CliError::Usage(_) => 1,
            CliError::Run(_) | CliError::Write { .. } | CliError::Stdout(_) | CliError::Worker => 2,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let result = match cli.command {
        Command::Airtime(a) => cmd_airtime(&a, &mut out),
        Command::Simulate(a) => cmd_simulate(&a, &mut out),
        Command::Compare(a) => cmd_compare(&a, &mut out),
    };
    match result.and_then(|()| out.flush().map_err(CliError::from)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn fmt_us(us: u64) -> String {
    format!("{}.{:03}", us / 1000, us % 1000)
}

fn cmd_airtime(a: &AirtimeArgs, out: &mut impl Write) -> Result<(), CliError> {
    let p = if a.max {
        RadioParams::longest_airtime()
    } else {
        let bw_hz =
            a.bw.checked_mul(1000)
                .ok_or_else(|| CliError::Usage(format!("bandwidth {} kHz out of range", a.bw)))?;
        let p = RadioParams {
            sf: a.sf.expect("required by clap"),
            bw_hz,
            cr: a.cr,
            n_preamble: a.preamble,
            pl_bytes: a.pl.expect("required by clap"),
            crc_on: a.crc,
            implicit_header: a.ih,
            low_datarate_opt: a.de,
        };
        p.validate()?;
        p
    };
    let at: AirTime = time_on_air(&p)?;
    let ts = symbol_duration_us(&p)?;
    writeln!(
        out,
        "SF{} BW{} kHz CR4/{} PL{} preamble {} crc {} ih {} de {}",
        p.sf,
        p.bw_hz / 1000,
        p.cr + 4,
        p.pl_bytes,
        p.n_preamble,
        p.crc_on,
        p.implicit_header,
        p.low_datarate_opt
    )?;
    writeln!(out, "symbol    {:>12} ms", fmt_us(ts))?;
    writeln!(out, "preamble  {:>12} ms", fmt_us(at.t_preamble_us))?;
    writeln!(
        out,
        "payload   {:>12} ms  ({} symbols)",
        fmt_us(at.t_payload_us),
        at.n_payload_symbols
    )?;
    writeln!(out, "total     {:>12} ms", fmt_us(at.t_packet_us))?;
    writeln!(out, "rounded   {:>12} ms", at.t_packet_ms_rounded())?;
    if a.max {
        let ms = at.t_packet_ms_rounded() as u32;
        writeln!(out, "remaining-time bits {}", remaining_time_bit_width(ms))?;
        if let Some(h) = guard_headroom_ms(ms) {
            writeln!(out, "guard headroom {h} ms")?;
        }
    }
    Ok(())
}

fn load(path: &Path, seed: Option<u64>) -> Result<Scenario, CliError> {
    let src = std::fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_owned(),
        source,
    })?;
    let mut sc = Scenario::from_toml_str(&src).map_err(|source| CliError::Config {
        path: path.to_owned(),
        source,
    })?;
    if let Some(seed) = seed {
        sc.seed = seed;
    }
    Ok(sc)
}

fn cmd_simulate(a: &SimulateArgs, out: &mut impl Write) -> Result<(), CliError> {
    let sc = load(&a.config, a.seed)?;
    let (metrics, trace) = run(&sc).map_err(CliError::Run)?;
    if let Some(path) = &a.out {
        let write_err = |source| CliError::Write {
            path: path.clone(),
            source,
        };
        let file = File::create(path).map_err(write_err)?;
        write_trace_csv(&trace, BufWriter::new(file))
            .map_err(|e| write_err(io::Error::other(e)))?;
    }
    let summary = RunSummary::new(&sc, &metrics);
    writeln!(out, "{summary}")?;
    writeln!(out)?;
    writeln!(out, "seed={}", sc.seed)?;
    for (k, v) in summary.key_values() {
        writeln!(out, "{k}={v}")?;
    }
    Ok(())
}

fn cmd_compare(a: &CompareArgs, out: &mut impl Write) -> Result<(), CliError> {
    let sc = load(&a.config, a.seed)?;
    let mut strategies = vec![SyncStrategy::Adaptive];
    for &r in &a.rounds {
        let round_ns = i64::try_from(r)
            .ok()
            .filter(|&r| r > 0)
            .and_then(|r| r.checked_mul(NS_PER_S))
            .ok_or_else(|| CliError::Usage(format!("invalid round length {r} s")))?;
        strategies.push(SyncStrategy::FixedRate { round_ns });
    }
    let scenarios: Vec<Scenario> = strategies.iter().map(|&s| sc.with_strategy(s)).collect();
    let results = std::thread::scope(|scope| {
        let handles: Vec<_> = scenarios
            .iter()
            .map(|s| scope.spawn(move || run(s).map(|(m, _)| RunSummary::new(s, &m))))
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .map_err(|_| CliError::Worker)?
                    .map_err(CliError::Run)
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    let mut runs = results.into_iter();
    let cmp = Comparison {
        adaptive: runs.next().expect("adaptive run is always present"),
        fixed: runs.collect(),
    };
    writeln!(out, "{cmp}")?;
    writeln!(out, "seed={}", sc.seed)?;
    writeln!(out, "adaptive.total_resyncs={}", cmp.adaptive.total_resyncs)?;
    writeln!(
        out,
        "adaptive.sync_overhead_bytes={}",
        cmp.adaptive.sync_overhead_bytes
    )?;
    for f in &cmp.fixed {
        writeln!(out, "{}.total_resyncs={}", f.strategy, f.total_resyncs)?;
        writeln!(
            out,
            "{}.sync_overhead_bytes={}",
            f.strategy, f.sync_overhead_bytes
        )?;
        if let Some(r) = cmp.resync_ratio(f) {
            writeln!(out, "{}.resync_ratio={r:.3}", f.strategy)?;
        }
        if let Some(r) = cmp.overhead_ratio(f) {
            writeln!(out, "{}.overhead_ratio={r:.3}", f.strategy)?;
        }
    }
    Ok(())
}
