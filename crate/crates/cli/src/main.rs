//! `qmerkle`: experiment runner for the quantum Merkle tree simulator.

mod commands;
mod output;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qmerkle_core::OracleKind;
use serde::Serialize;

use crate::output::Format;

#[derive(Debug, Parser)]
#[command(name = "qmerkle", version, about = "Quantum Merkle tree and succinct argument experiments")]
pub(crate) struct Cli {
    #[command(subcommand)]
    pub(crate) command: Command,

    #[command(flatten)]
    pub(crate) common: Common,
}

#[derive(Debug, Args, Serialize)]
pub(crate) struct Common {
    /// Master seed; every trial's randomness is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub(crate) seed: u64,

    /// Output file; standard output when omitted.
    #[arg(long, short, global = true)]
    pub(crate) output: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub(crate) format: Format,

    /// Largest entangled block the simulator may hold.
    #[arg(long, global = true, env = "QMT_MAX_QUBITS", default_value_t = qmerkle_core::qstate::DEFAULT_QUBIT_CAP)]
    pub(crate) max_qubits: usize,
}

fn oracle_kind(s: &str) -> Result<OracleKind, String> {
    s.parse().map_err(|e: qmerkle_core::Error| e.to_string())
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be positive".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(e.to_string()),
    }
}

fn display<T: std::fmt::Display, S: serde::Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(v)
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub(crate) enum Command {
    /// Commit random payloads and open every leaf.
    Roundtrip(RoundtripArgs),
    /// Run the three-message protocol and estimate acceptance.
    RunProtocol(ProtocolArgs),
    /// Sequential repetition with the midpoint threshold.
    Repeat(RepeatArgs),
    /// Phase attack on the depth-one commitment.
    AttackPhase(PhaseArgs),
    /// Purification-switch attack on the depth-one commitment.
    AttackHjw(HjwArgs),
    /// Moment statistics of an oracle ensemble.
    HaarStats(HaarArgs),
    /// Ground energy and classification of an instance.
    SolveInstance(InstanceArgs),
    /// Check an instance file against the schema.
    ValidateInstance(InstanceArgs),
}

#[derive(Debug, Args, Serialize)]
pub(crate) struct RoundtripArgs {
    #[arg(long, default_value_t = 2, value_parser = positive)]
    pub(crate) b: usize,
    #[arg(long, default_value_t = 4, value_parser = positive)]
    pub(crate) ell: usize,
    #[arg(long, default_value = "haar", value_parser = oracle_kind)]
    #[serde(serialize_with = "display")]
    pub(crate) oracle: OracleKind,
    #[arg(long, default_value_t = 50, value_parser = positive)]
    pub(crate) trials: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub(crate) enum StrategyArg {
    Honest,
    SemiHonestGround,
    SemiHonestRandom,
    PhaseFlip,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub(crate) enum ModeArg {
    Povm,
    Circuit,
}

#[derive(Debug, Args, Serialize)]
pub(crate) struct ProtocolArgs {
    #[arg(long)]
    pub(crate) instance: PathBuf,
    #[arg(long, value_enum, default_value_t = StrategyArg::Honest)]
    pub(crate) strategy: StrategyArg,
    #[arg(long, default_value = "haar", value_parser = oracle_kind)]
    #[serde(serialize_with = "display")]
    pub(crate) oracle: OracleKind,
    #[arg(long, default_value_t = 2, value_parser = positive)]
    pub(crate) b: usize,
    /// Leaf count; the smallest covering tree when omitted.
    #[arg(long, value_parser = positive)]
    pub(crate) ell: Option<usize>,
    #[arg(long, default_value_t = 100, value_parser = positive)]
    pub(crate) trials: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Povm)]
    pub(crate) mode: ModeArg,
    /// Use this one oracle for every trial instead of a fresh draw per trial.
    #[arg(long)]
    pub(crate) fixed_oracle_seed: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
pub(crate) struct RepeatArgs {
    #[arg(long)]
    pub(crate) instance: PathBuf,
    #[arg(long, value_enum, default_value_t = StrategyArg::Honest)]
    pub(crate) strategy: StrategyArg,
    #[arg(long, default_value = "haar", value_parser = oracle_kind)]
    #[serde(serialize_with = "display")]
    pub(crate) oracle: OracleKind,
    #[arg(long, default_value_t = 2, value_parser = positive)]
    pub(crate) b: usize,
    #[arg(long, value_parser = positive)]
    pub(crate) ell: Option<usize>,
    #[arg(long, default_value_t = 25, value_parser = positive)]
    pub(crate) repetitions: usize,
    #[arg(long, default_value_t = 100, value_parser = positive)]
    pub(crate) meta_trials: usize,
    /// One oracle for all repetitions of a meta-trial.
    #[arg(long)]
    pub(crate) share_oracle: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub(crate) enum PhaseFnArg {
    Parity,
    Zero,
    Random,
}

#[derive(Debug, Args, Serialize)]
pub(crate) struct PhaseArgs {
    #[arg(long, default_value_t = 2, value_parser = positive)]
    pub(crate) b: usize,
    #[arg(long, default_value = "oh", value_parser = oracle_kind)]
    #[serde(serialize_with = "display")]
    pub(crate) oracle: OracleKind,
    #[arg(long, default_value_t = 500, value_parser = positive)]
    pub(crate) trials: usize,
    #[arg(long, value_enum, default_value_t = PhaseFnArg::Parity)]
    pub(crate) function: PhaseFnArg,
}

#[derive(Debug, Args, Serialize)]
pub(crate) struct HjwArgs {
    #[arg(long, default_value_t = 2, value_parser = positive)]
    pub(crate) b: usize,
    #[arg(long, default_value = "haar", value_parser = oracle_kind)]
    #[serde(serialize_with = "display")]
    pub(crate) oracle: OracleKind,
    #[arg(long, default_value_t = 100, value_parser = positive)]
    pub(crate) trials: usize,
}

#[derive(Debug, Args, Serialize)]
pub(crate) struct HaarArgs {
    #[arg(long, default_value = "haar", value_parser = oracle_kind)]
    #[serde(serialize_with = "display")]
    pub(crate) oracle: OracleKind,
    #[arg(long, default_value_t = 2, value_parser = positive)]
    pub(crate) qubits: usize,
    #[arg(long, default_value_t = 10_000)]
    pub(crate) samples: usize,
}

#[derive(Debug, Args, Serialize)]
pub(crate) struct InstanceArgs {
    #[arg(long)]
    pub(crate) instance: PathBuf,
}

/// Exit status for failures caused by the caller's input.
const EXIT_INPUT: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.common.output {
        Some(path) => File::create(path)
            .map_err(|e| commands::Failure::internal(format!("cannot create {}: {e}", path.display())))
            .and_then(|f| run(&cli, &mut BufWriter::new(f))),
        None => run(&cli, &mut io::stdout().lock()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            if f.input {
                ExitCode::from(EXIT_INPUT)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn run<W: Write>(cli: &Cli, out: &mut W) -> Result<(), commands::Failure> {
    let mut config = serde_json::to_value(&cli.command).map_err(commands::Failure::from)?;
    if let (Some(map), Ok(serde_json::Value::Object(common))) =
        (config.as_object_mut(), serde_json::to_value(&cli.common))
    {
        map.extend(common);
    }
    let ctx = commands::Context { common: &cli.common, config };
    match &cli.command {
        Command::Roundtrip(a) => commands::roundtrip(&ctx, a, out),
        Command::RunProtocol(a) => commands::run_protocol(&ctx, a, out),
        Command::Repeat(a) => commands::repeat(&ctx, a, out),
        Command::AttackPhase(a) => commands::attack_phase(&ctx, a, out),
        Command::AttackHjw(a) => commands::attack_hjw(&ctx, a, out),
        Command::HaarStats(a) => commands::haar_stats(&ctx, a, out),
        Command::SolveInstance(a) => commands::solve_instance(&ctx, a, out),
        Command::ValidateInstance(a) => commands::validate_instance(&ctx, a, out),
    }
}
