use std::io::Write;
use std::sync::Arc;

use qmerkle_core::adversary::{self, PhaseFlip, PhaseFunction};
use qmerkle_core::hamiltonian::LocalHamiltonian;
use qmerkle_core::merkle::{self, DecommitOutcome};
use qmerkle_core::oracle::{self, sample_haar_isometry};
use qmerkle_core::protocol::{
    binomial_tail, OracleSchedule, Protocol, ProtocolConfig, RepetitionOutcome, TranscriptRecord, VerifierMode,
};
use qmerkle_core::seeds::{self, Stream};
use qmerkle_core::{linalg, CMatrix, Error, OracleHandle, OracleKind, Party, ProverStrategy, QuantumSystem};
use serde::Serialize;
use serde_json::{json, Value};

use crate::output::{emit_records, Record};
use crate::{Common, HaarArgs, HjwArgs, InstanceArgs, ModeArg, PhaseArgs, PhaseFnArg, ProtocolArgs, RepeatArgs, RoundtripArgs, StrategyArg};

pub struct Failure {
    pub message: String,
    pub input: bool,
}

impl Failure {
    pub fn internal(message: String) -> Self {
        Failure { message, input: false }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure { input: e.is_input_error(), message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::internal(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::internal(e.to_string())
    }
}

pub struct Context<'a> {
    pub common: &'a Common,
    pub config: Value,
}

impl Context<'_> {
    fn emit<W: Write, R: Record>(&self, out: &mut W, records: &[R], summary: Value) -> Result<(), Failure> {
        emit_records(out, self.common.format, &self.config, records, Some(&summary))?;
        Ok(())
    }
}

fn load(path: &std::path::Path) -> Result<LocalHamiltonian, Failure> {
    LocalHamiltonian::load(path).map_err(|e| match e {
        Error::Io(io) => Failure { input: true, message: format!("{}: {io}", path.display()) },
        other => Failure { input: true, message: format!("{}: {other}", path.display()) },
    })
}

#[derive(Serialize)]
struct RoundtripRow {
    trial: u64,
    oracle_seed: u64,
    fidelity: Option<f64>,
    bot: bool,
    fail_node: Option<usize>,
    forward_queries: u64,
    inverse_queries: u64,
}

impl Record for RoundtripRow {
    const COLUMNS: &'static [&'static str] =
        &["trial", "oracle_seed", "fidelity", "bot", "fail_node", "forward_queries", "inverse_queries"];
}

pub fn roundtrip<W: Write>(ctx: &Context, a: &RoundtripArgs, out: &mut W) -> Result<(), Failure> {
    let shape = merkle::TreeShape::new(a.b, a.ell)?;
    let seed = ctx.common.seed;
    let mut rows = Vec::with_capacity(a.trials);
    for trial in 0..a.trials as u64 {
        let oracle_seed = seeds::derive(seed, trial, Stream::Oracle);
        let mut g = OracleHandle::build(a.oracle, a.b, oracle_seed)?;
        let psi = linalg::random_state(1 << shape.payload_qubits(), &mut seeds::rng_for(seed, trial, Stream::Payload));
        let mut sys = QuantumSystem::with_cap(ctx.common.max_qubits);
        let payload = sys.prepare_register(&psi, Party::Prover)?;
        let layout = merkle::commit(&mut sys, &mut g, &payload, a.b)?.layout;
        let mut rng = seeds::rng_for(seed, trial, Stream::Verifier);
        let opened = merkle::decommit(&mut sys, &mut g, shape, layout.registers(), &shape.leaf_nodes(), &mut rng)?;
        let (fidelity, fail_node) = match opened {
            DecommitOutcome::Opened(_) => {
                let got = sys.state_vector(&layout.payload_labels())?;
                (Some(linalg::inner(&psi, &got).norm_sqr()), None)
            }
            DecommitOutcome::Rejected { node, .. } => (None, Some(node)),
        };
        rows.push(RoundtripRow {
            trial,
            oracle_seed,
            fidelity,
            bot: fail_node.is_some(),
            fail_node,
            forward_queries: g.counts().forward,
            inverse_queries: g.counts().inverse,
        });
    }
    let bots = rows.iter().filter(|r| r.bot).count();
    let min_fidelity = rows.iter().filter_map(|r| r.fidelity).fold(f64::INFINITY, f64::min);
    let summary = json!({
        "oracle": a.oracle.to_string(),
        "b": a.b,
        "ell": a.ell,
        "trials": a.trials,
        "bot_events": bots,
        "min_fidelity": if bots == a.trials { Value::Null } else { json!(min_fidelity) },
        "all_pass": bots == 0 && min_fidelity >= 1.0 - qmerkle_core::EXACT_TOL,
    });
    eprintln!("roundtrip: {} trials, {bots} BOT, min fidelity {min_fidelity:.12}", a.trials);
    ctx.emit(out, &rows, summary)
}

impl Record for TranscriptRecord {
    const COLUMNS: &'static [&'static str] = &[
        "seed",
        "trial",
        "i",
        "decommit_pass",
        "fail_node",
        "accepted",
        "qubits_sent",
        "prover_G",
        "prover_Ginv",
        "verifier_Ginv",
    ];
}

/// Builds the prover strategy and, where it is known in closed form, the
/// per-round acceptance probability.
fn strategy(inst: &LocalHamiltonian, which: StrategyArg, seed: u64) -> Result<(ProverStrategy, Option<f64>), Failure> {
    Ok(match which {
        StrategyArg::Honest => {
            let g = inst.ground_energy()?;
            (ProverStrategy::Honest, Some(1.0 - g.energy / inst.num_terms() as f64))
        }
        StrategyArg::SemiHonestGround => {
            let g = inst.ground_energy()?;
            let p = inst.expected_acceptance(&g.state)?;
            (ProverStrategy::SemiHonest(g.state), Some(p))
        }
        StrategyArg::SemiHonestRandom => {
            let psi = linalg::random_state(1 << inst.n_qubits(), &mut seeds::rng_for(seed, 0, Stream::Payload));
            let p = inst.expected_acceptance(&psi)?;
            (ProverStrategy::SemiHonest(psi), Some(p))
        }
        StrategyArg::PhaseFlip => (ProverStrategy::Adversary(Arc::new(PhaseFlip)), None),
    })
}

fn protocol_for(
    ctx: &Context,
    inst: LocalHamiltonian,
    which: StrategyArg,
    b: usize,
    ell: Option<usize>,
    mode: ModeArg,
) -> Result<(Protocol, Option<f64>), Failure> {
    let (strategy, analytic) = strategy(&inst, which, ctx.common.seed)?;
    let honest_abort = which == StrategyArg::Honest
        && match inst.label() {
            qmerkle_core::InstanceLabel::Yes => false,
            qmerkle_core::InstanceLabel::No => true,
            qmerkle_core::InstanceLabel::Unknown => inst.classify()? != qmerkle_core::Classification::Yes,
        };
    let mut config = ProtocolConfig::new(b).with_max_qubits(ctx.common.max_qubits).with_mode(match mode {
        ModeArg::Povm => VerifierMode::Povm,
        ModeArg::Circuit => VerifierMode::Circuit,
    });
    if let Some(l) = ell {
        config = config.with_ell(l);
    }
    let p = Protocol::new(Arc::new(inst), config, strategy)?;
    Ok((p, if honest_abort { Some(0.0) } else { analytic }))
}

pub fn run_protocol<W: Write>(ctx: &Context, a: &ProtocolArgs, out: &mut W) -> Result<(), Failure> {
    let inst = load(&a.instance)?;
    let (p, analytic) = protocol_for(ctx, inst, a.strategy, a.b, a.ell, a.mode)?;
    let schedule = match a.fixed_oracle_seed {
        Some(s) => OracleSchedule::Fixed(s),
        None => OracleSchedule::Fresh,
    };
    let report = p.estimate_acceptance(a.oracle, schedule, a.trials, ctx.common.seed)?;
    let rows: Vec<TranscriptRecord> = report.transcripts.iter().map(|t| t.record()).collect();
    let mut summary = serde_json::to_value(&report)?;
    if let Value::Object(m) = &mut summary {
        m.insert("oracle".into(), json!(a.oracle.to_string()));
        m.insert("b".into(), json!(p.shape().block_size()));
        m.insert("ell".into(), json!(p.shape().leaves()));
        m.insert("strategy".into(), json!(p.strategy().name()));
        m.insert("oracle_schedule".into(), serde_json::to_value(schedule)?);
        m.insert("analytic_rate".into(), json!(analytic));
        m.insert("classical_bits".into(), json!(p.classical_bits()));
    }
    eprintln!(
        "run-protocol: acceptance {:.4} ± {:.4} over {} trials (analytic {})",
        report.rate,
        report.stderr,
        report.trials,
        analytic.map_or("n/a".to_string(), |x| format!("{x:.4}"))
    );
    ctx.emit(out, &rows, summary)
}

impl Record for RepetitionOutcome {
    const COLUMNS: &'static [&'static str] =
        &["meta_trial", "repetitions", "accepted_rounds", "threshold", "accepted", "shared_oracle"];
}

pub fn repeat<W: Write>(ctx: &Context, a: &RepeatArgs, out: &mut W) -> Result<(), Failure> {
    let inst = load(&a.instance)?;
    let (p, analytic) = protocol_for(ctx, inst, a.strategy, a.b, a.ell, ModeArg::Povm)?;
    let rows = p.repeat_many(a.oracle, a.repetitions, a.meta_trials, ctx.common.seed, a.share_oracle)?;
    let accepted = rows.iter().filter(|r| r.accepted).count();
    let threshold = p.repetition_threshold();
    let needed = (threshold * a.repetitions as f64 - 1e-12).ceil() as usize;
    let rounds: usize = rows.iter().map(|r| r.accepted_rounds).sum();
    let summary = json!({
        "oracle": a.oracle.to_string(),
        "b": p.shape().block_size(),
        "ell": p.shape().leaves(),
        "strategy": p.strategy().name(),
        "repetitions": a.repetitions,
        "meta_trials": a.meta_trials,
        "threshold": threshold,
        "rounds_needed": needed,
        "accepted_meta_trials": accepted,
        "acceptance_rate": accepted as f64 / a.meta_trials as f64,
        "per_round_rate": rounds as f64 / (a.meta_trials * a.repetitions) as f64,
        "analytic_per_round": analytic,
        "predicted_acceptance": analytic.map(|q| binomial_tail(a.repetitions, q, needed)),
        "shared_oracle": a.share_oracle,
    });
    eprintln!("repeat: {accepted}/{} meta-trials accepted (τ = {threshold})", a.meta_trials);
    ctx.emit(out, &rows, summary)
}

#[derive(Serialize)]
struct PhaseRow {
    trial: u64,
    oracle_seed: u64,
    accepted: bool,
    trace_distance: Option<f64>,
}

impl Record for PhaseRow {
    const COLUMNS: &'static [&'static str] = &["trial", "oracle_seed", "accepted", "trace_distance"];
}

pub fn attack_phase<W: Write>(ctx: &Context, a: &PhaseArgs, out: &mut W) -> Result<(), Failure> {
    let seed = ctx.common.seed;
    let psi = adversary::plus_state(2 * a.b);
    let mut rows = Vec::with_capacity(a.trials);
    for trial in 0..a.trials as u64 {
        let oracle_seed = seeds::derive(seed, trial, Stream::Oracle);
        let mut g = OracleHandle::build(a.oracle, a.b, oracle_seed)?;
        let f = match a.function {
            PhaseFnArg::Parity => PhaseFunction::parity(a.b),
            PhaseFnArg::Zero => PhaseFunction::zero(a.b),
            PhaseFnArg::Random => PhaseFunction::random(a.b, &mut seeds::rng_for(seed, trial, Stream::Strategy)),
        };
        let mut rng = seeds::rng_for(seed, trial, Stream::Verifier);
        let o = adversary::phase_attack_round(&mut g, &psi, &f, &mut rng)?;
        rows.push(PhaseRow { trial, oracle_seed, accepted: o.accepted, trace_distance: o.trace_distance });
    }
    let n = rows.len() as f64;
    let accepted = rows.iter().filter(|r| r.accepted).count();
    let rate = accepted as f64 / n;
    let tds: Vec<f64> = rows.iter().filter_map(|r| r.trace_distance).collect();
    let summary = json!({
        "oracle": a.oracle.to_string(),
        "b": a.b,
        "ell": 2,
        "trials": a.trials,
        "accepted": accepted,
        "rate": rate,
        "stderr": (rate * (1.0 - rate) / n).sqrt(),
        "mean_trace_distance": if tds.is_empty() { Value::Null } else { json!(tds.iter().sum::<f64>() / tds.len() as f64) },
        "min_trace_distance": tds.iter().copied().reduce(f64::min),
    });
    eprintln!("attack-phase: {accepted}/{} accepted", a.trials);
    ctx.emit(out, &rows, summary)
}

#[derive(Serialize)]
struct HjwRow {
    trial: u64,
    oracle_seed: u64,
    predicted_overlap: f64,
    achieved_fidelity: f64,
    check_pass_probability: f64,
    check_pass: bool,
    conditional_fidelity: Option<f64>,
}

impl Record for HjwRow {
    const COLUMNS: &'static [&'static str] = &[
        "trial",
        "oracle_seed",
        "predicted_overlap",
        "achieved_fidelity",
        "check_pass_probability",
        "check_pass",
        "conditional_fidelity",
    ];
}

/// Largest block size for which a Haar oracle is sampled as a full unitary;
/// above it only the committing columns are drawn.
const HJW_FULL_HAAR_MAX_B: usize = 3;

/// The oracle as a dense matrix, or for large Haar oracles the isometry of
/// its committing columns.
pub fn hjw_oracle(kind: OracleKind, b: usize, seed: u64) -> Result<CMatrix, Error> {
    match kind {
        OracleKind::Haar if b > HJW_FULL_HAAR_MAX_B => {
            sample_haar_isometry(1 << (3 * b), 1 << (2 * b), &mut seeds::rng_from(seed))
        }
        _ => OracleHandle::build(kind, b, seed)?.dense_matrix(),
    }
}

pub fn attack_hjw<W: Write>(ctx: &Context, a: &HjwArgs, out: &mut W) -> Result<(), Failure> {
    let seed = ctx.common.seed;
    let mut rows = Vec::with_capacity(a.trials);
    let mut worst_identity_gap = 0.0f64;
    for trial in 0..a.trials as u64 {
        let oracle_seed = seeds::derive(seed, trial, Stream::Oracle);
        let g = hjw_oracle(a.oracle, a.b, oracle_seed)?;
        let (psi, phi) = adversary::orthogonal_pair(2 * a.b, &mut seeds::rng_for(seed, trial, Stream::Payload));
        let s = adversary::hjw_switch_operator(&g, &psi, &phi)?;
        worst_identity_gap = worst_identity_gap.max((s.achieved_fidelity - s.predicted_overlap.powi(2)).abs());
        let r = adversary::hjw_attack_round(&g, &s, &psi, &phi, &mut seeds::rng_for(seed, trial, Stream::Verifier))?;
        rows.push(HjwRow {
            trial,
            oracle_seed,
            predicted_overlap: s.predicted_overlap,
            achieved_fidelity: s.achieved_fidelity,
            check_pass_probability: s.check_pass_probability,
            check_pass: r.check_pass,
            conditional_fidelity: r.conditional_fidelity,
        });
    }
    let n = rows.len() as f64;
    let mean = |f: &dyn Fn(&HjwRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let summary = json!({
        "oracle": a.oracle.to_string(),
        "b": a.b,
        "ell": 2,
        "trials": a.trials,
        "access": "unbounded",
        "mean_achieved_fidelity": mean(&|r| r.achieved_fidelity),
        "mean_check_pass_probability": mean(&|r| r.check_pass_probability),
        "empirical_check_pass_rate": mean(&|r| r.check_pass as u8 as f64),
        "max_fidelity_identity_gap": worst_identity_gap,
    });
    eprintln!("attack-hjw: mean achieved fidelity {:.6}", mean(&|r| r.achieved_fidelity));
    ctx.emit(out, &rows, summary)
}

#[derive(Serialize)]
struct HaarRow {
    oracle: String,
    qubits: usize,
    samples: usize,
    abs_sq_mean: f64,
    abs_sq_stderr: f64,
    abs_fourth_mean: f64,
    abs_fourth_stderr: f64,
    frame_potential_mean: Option<f64>,
    frame_potential_stderr: Option<f64>,
    max_unitarity_defect: f64,
    haar_abs_sq: f64,
    haar_abs_fourth: f64,
    haar_frame_potential: f64,
}

impl Record for HaarRow {
    const COLUMNS: &'static [&'static str] = &[
        "oracle",
        "qubits",
        "samples",
        "abs_sq_mean",
        "abs_sq_stderr",
        "abs_fourth_mean",
        "abs_fourth_stderr",
        "frame_potential_mean",
        "frame_potential_stderr",
        "max_unitarity_defect",
        "haar_abs_sq",
        "haar_abs_fourth",
        "haar_frame_potential",
    ];
}

pub fn haar_stats<W: Write>(ctx: &Context, a: &HaarArgs, out: &mut W) -> Result<(), Failure> {
    let s = oracle::haar_statistics(a.oracle, a.qubits, a.samples, ctx.common.seed)?;
    let row = HaarRow {
        oracle: s.kind.to_string(),
        qubits: s.qubits,
        samples: s.samples,
        abs_sq_mean: s.abs_sq.mean,
        abs_sq_stderr: s.abs_sq.stderr,
        abs_fourth_mean: s.abs_fourth.mean,
        abs_fourth_stderr: s.abs_fourth.stderr,
        frame_potential_mean: s.frame_potential.as_ref().map(|e| e.mean),
        frame_potential_stderr: s.frame_potential.as_ref().map(|e| e.stderr),
        max_unitarity_defect: s.max_unitarity_defect,
        haar_abs_sq: s.haar_abs_sq,
        haar_abs_fourth: s.haar_abs_fourth,
        haar_frame_potential: s.haar_frame_potential,
    };
    let z = (s.abs_sq.mean - s.haar_abs_sq) / s.abs_sq.stderr.max(f64::MIN_POSITIVE);
    let summary = json!({
        "oracle": s.kind.to_string(),
        "qubits": s.qubits,
        "samples": s.samples,
        "abs_sq_z_score": z,
        "max_unitarity_defect": s.max_unitarity_defect,
    });
    eprintln!("haar-stats: E|U00|^2 = {:.6} ± {:.6} (Haar {:.6})", s.abs_sq.mean, s.abs_sq.stderr, s.haar_abs_sq);
    ctx.emit(out, &[row], summary)
}

#[derive(Serialize)]
struct SolveRow {
    instance: String,
    n_qubits: usize,
    terms: usize,
    lambda_min: f64,
    lambda_per_term: f64,
    alpha: f64,
    beta: f64,
    classification: String,
    label: String,
    residual: f64,
}

impl Record for SolveRow {
    const COLUMNS: &'static [&'static str] = &[
        "instance",
        "n_qubits",
        "terms",
        "lambda_min",
        "lambda_per_term",
        "alpha",
        "beta",
        "classification",
        "label",
        "residual",
    ];
}

pub fn solve_instance<W: Write>(ctx: &Context, a: &InstanceArgs, out: &mut W) -> Result<(), Failure> {
    let inst = load(&a.instance)?;
    let g = inst.ground_energy()?;
    let class = inst.classify_energy(g.energy);
    let m = inst.num_terms();
    let row = SolveRow {
        instance: a.instance.display().to_string(),
        n_qubits: inst.n_qubits(),
        terms: m,
        lambda_min: g.energy,
        lambda_per_term: g.energy / m as f64,
        alpha: inst.alpha(),
        beta: inst.beta(),
        classification: class.to_string(),
        label: inst.label().to_string(),
        residual: g.residual,
    };
    eprintln!("lambda_min = {:.12}  classification = {class}  label = {}", g.energy, inst.label());
    let summary = serde_json::to_value(&row)?;
    ctx.emit(out, &[row], summary)
}

#[derive(Serialize)]
struct ValidateRow {
    instance: String,
    valid: bool,
    n_qubits: usize,
    terms: usize,
    k: usize,
    label: String,
}

impl Record for ValidateRow {
    const COLUMNS: &'static [&'static str] = &["instance", "valid", "n_qubits", "terms", "k", "label"];
}

pub fn validate_instance<W: Write>(ctx: &Context, a: &InstanceArgs, out: &mut W) -> Result<(), Failure> {
    let inst = load(&a.instance)?;
    let row = ValidateRow {
        instance: a.instance.display().to_string(),
        valid: true,
        n_qubits: inst.n_qubits(),
        terms: inst.num_terms(),
        k: inst.locality(),
        label: inst.label().to_string(),
    };
    eprintln!("{}: valid", a.instance.display());
    let summary = serde_json::to_value(&row)?;
    ctx.emit(out, &[row], summary)
}
