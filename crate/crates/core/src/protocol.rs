//! The three-message succinct argument for the gap local Hamiltonian problem.
//!
//! 1. The prover commits to a payload with the Merkle tree and sends the root.
//! 2. The verifier draws a term index `i` and sends it.
//! 3. The prover sends the registers of `R_{W_i}` other than the root, where
//!    `W_i` are the leaves holding the qubits of `S_i`. The verifier opens
//!    `W_i`, rejecting on any failed check, then measures `{H_i, I − H_i}` on
//!    the qubits of `S_i` (or runs the term's Clifford+T circuit).
//!
//! One round runs in one [`QuantumSystem`]; trials are independent and run
//! in parallel, merged in trial order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hamiltonian::{self, Classification, InstanceLabel, LocalHamiltonian, VerifierTerm};
use crate::linalg::{self, C64};
use crate::merkle::{self, DecommitOutcome, MerkleLayout, Node, TreeShape};
use crate::oracle::{OracleHandle, OracleKind, QueryCounts};
use crate::qstate::{self, Party, QuantumSystem};
use crate::seeds::{self, Stream};

/// Mutable view handed to adversary hooks. Everything the prover holds is
/// reachable from here; the verifier's registers are too, but sending a
/// register the prover no longer owns is a protocol violation.
pub struct AdversaryContext<'a> {
    pub sys: &'a mut QuantumSystem,
    pub oracle: &'a mut OracleHandle,
    pub layout: &'a mut MerkleLayout,
    pub rng: &'a mut ChaCha8Rng,
}

/// A prover that deviates from the protocol. The payload is committed
/// honestly; the hooks may then rewrite registers, query the oracle, or swap
/// which registers get sent.
pub trait Adversary: Send + Sync {
    fn name(&self) -> String;

    /// Amplitudes of the `N`-qubit payload to commit. Defaults to `|0^N⟩`.
    fn payload(&self, instance: &LocalHamiltonian, _rng: &mut ChaCha8Rng) -> Result<Vec<C64>> {
        let mut v = vec![linalg::ZERO; 1 << instance.n_qubits()];
        v[0] = linalg::ONE;
        Ok(v)
    }

    /// Runs after commit, before the root register is sent.
    fn before_root(&self, _ctx: &mut AdversaryContext<'_>) -> Result<()> {
        Ok(())
    }

    /// Runs after the verifier's challenge, before the opening registers are sent.
    fn before_opening(
        &self,
        _ctx: &mut AdversaryContext<'_>,
        _term: &VerifierTerm,
        _leaves: &BTreeSet<Node>,
    ) -> Result<()> {
        Ok(())
    }
}

#[derive(Clone)]
pub enum ProverStrategy {
    /// Commits the exact ground state; aborts unless the instance is a yes instance.
    Honest,
    /// Commits the given `N`-qubit state and otherwise follows the protocol.
    SemiHonest(Vec<C64>),
    Adversary(Arc<dyn Adversary>),
}

impl ProverStrategy {
    /// Semi-honest prover committing the instance's exact ground state.
    pub fn semi_honest_ground(instance: &LocalHamiltonian) -> Result<Self> {
        Ok(ProverStrategy::SemiHonest(instance.ground_energy()?.state))
    }

    pub fn name(&self) -> String {
        match self {
            ProverStrategy::Honest => "honest".into(),
            ProverStrategy::SemiHonest(_) => "semi-honest".into(),
            ProverStrategy::Adversary(a) => format!("adversary:{}", a.name()),
        }
    }
}

impl fmt::Debug for ProverStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum VerifierMode {
    #[default]
    Povm,
    Circuit,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ProtocolConfig {
    pub b: usize,
    /// Leaf count; the smallest tree covering the instance when absent.
    pub ell: Option<usize>,
    pub mode: VerifierMode,
    pub max_qubits: usize,
}

impl ProtocolConfig {
    pub fn new(b: usize) -> Self {
        ProtocolConfig { b, ell: None, mode: VerifierMode::Povm, max_qubits: qstate::DEFAULT_QUBIT_CAP }
    }

    pub fn with_ell(mut self, ell: usize) -> Self {
        self.ell = Some(ell);
        self
    }

    pub fn with_mode(mut self, mode: VerifierMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_max_qubits(mut self, cap: usize) -> Self {
        self.max_qubits = cap;
        self
    }
}

/// Per-round seeds for the three independent randomness sources.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct RoundSeeds {
    pub oracle: u64,
    pub verifier: u64,
    pub strategy: u64,
}

impl RoundSeeds {
    pub fn for_trial(master: u64, trial: u64) -> Self {
        RoundSeeds {
            oracle: seeds::derive(master, trial, Stream::Oracle),
            verifier: seeds::derive(master, trial, Stream::Verifier),
            strategy: seeds::derive(master, trial, Stream::Strategy),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RoundOutcome {
    Accepted,
    /// The final measurement returned the reject effect.
    RejectedMeasurement,
    /// The opening check at `node` read `outcome ≠ 0^b`.
    RejectedDecommit { node: Node, outcome: String },
    /// The prover gave up before the first message.
    Aborted,
    Violation { reason: String },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct QueryTally {
    pub prover_g: u64,
    pub prover_ginv: u64,
    pub verifier_g: u64,
    pub verifier_ginv: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Transcript {
    pub trial: u64,
    pub seeds: RoundSeeds,
    pub b: usize,
    pub ell: usize,
    /// Labels of the root register (first message).
    pub message1: Vec<u32>,
    pub chosen_i: Option<usize>,
    pub opened_leaves: Vec<Node>,
    /// Nodes whose registers were sent in the third message.
    pub message3_nodes: Vec<Node>,
    pub message3: Vec<u32>,
    /// Labels the verifier holds right after the third message.
    pub verifier_holdings: Vec<u32>,
    pub final_measurement: Option<bool>,
    pub outcome: RoundOutcome,
    pub queries: QueryTally,
    pub qubits_sent: usize,
    pub classical_bits: usize,
}

impl Transcript {
    fn new(trial: u64, seeds: RoundSeeds, shape: TreeShape) -> Self {
        Transcript {
            trial,
            seeds,
            b: shape.block_size(),
            ell: shape.leaves(),
            message1: Vec::new(),
            chosen_i: None,
            opened_leaves: Vec::new(),
            message3_nodes: Vec::new(),
            message3: Vec::new(),
            verifier_holdings: Vec::new(),
            final_measurement: None,
            outcome: RoundOutcome::Aborted,
            queries: QueryTally::default(),
            qubits_sent: 0,
            classical_bits: 0,
        }
    }

    pub fn accepted(&self) -> bool {
        self.outcome == RoundOutcome::Accepted
    }

    /// `None` when the opening was never attempted.
    pub fn decommit_pass(&self) -> Option<bool> {
        match self.outcome {
            RoundOutcome::Accepted | RoundOutcome::RejectedMeasurement => Some(true),
            RoundOutcome::RejectedDecommit { .. } => Some(false),
            RoundOutcome::Aborted | RoundOutcome::Violation { .. } => None,
        }
    }

    pub fn fail_node(&self) -> Option<Node> {
        match self.outcome {
            RoundOutcome::RejectedDecommit { node, .. } => Some(node),
            _ => None,
        }
    }

    pub fn record(&self) -> TranscriptRecord {
        TranscriptRecord {
            seed: self.seeds.oracle,
            trial: self.trial,
            i: self.chosen_i,
            decommit_pass: self.decommit_pass().unwrap_or(false),
            fail_node: self.fail_node(),
            accepted: self.accepted(),
            qubits_sent: self.qubits_sent,
            prover_g: self.queries.prover_g,
            prover_ginv: self.queries.prover_ginv,
            verifier_ginv: self.queries.verifier_ginv,
        }
    }
}

/// One line per round in the machine-readable output.
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct TranscriptRecord {
    pub seed: u64,
    pub trial: u64,
    pub i: Option<usize>,
    pub decommit_pass: bool,
    pub fail_node: Option<usize>,
    pub accepted: bool,
    pub qubits_sent: usize,
    #[serde(rename = "prover_G")]
    pub prover_g: u64,
    #[serde(rename = "prover_Ginv")]
    pub prover_ginv: u64,
    #[serde(rename = "verifier_Ginv")]
    pub verifier_ginv: u64,
}

/// Where each trial's oracle comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleSchedule {
    /// A fresh draw per trial from the trial's oracle stream.
    Fresh,
    /// The same oracle, drawn from this seed, for every trial.
    Fixed(u64),
}

#[derive(Clone, Debug, Serialize)]
pub struct AcceptanceReport {
    pub trials: usize,
    pub accepted: usize,
    pub rate: f64,
    pub stderr: f64,
    pub mean_prover_g: f64,
    pub mean_prover_ginv: f64,
    pub mean_verifier_g: f64,
    pub mean_verifier_ginv: f64,
    pub mean_qubits_sent: f64,
    #[serde(skip)]
    pub transcripts: Vec<Transcript>,
}

impl AcceptanceReport {
    pub fn from_transcripts(transcripts: Vec<Transcript>) -> Result<Self> {
        if transcripts.is_empty() {
            return Err(Error::Usage("at least one trial is required".into()));
        }
        let n = transcripts.len() as f64;
        let accepted = transcripts.iter().filter(|t| t.accepted()).count();
        let rate = accepted as f64 / n;
        let mean = |f: &dyn Fn(&Transcript) -> f64| transcripts.iter().map(f).sum::<f64>() / n;
        Ok(AcceptanceReport {
            trials: transcripts.len(),
            accepted,
            rate,
            stderr: (rate * (1.0 - rate) / n).sqrt(),
            mean_prover_g: mean(&|t| t.queries.prover_g as f64),
            mean_prover_ginv: mean(&|t| t.queries.prover_ginv as f64),
            mean_verifier_g: mean(&|t| t.queries.verifier_g as f64),
            mean_verifier_ginv: mean(&|t| t.queries.verifier_ginv as f64),
            mean_qubits_sent: mean(&|t| t.qubits_sent as f64),
            transcripts,
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RepetitionOutcome {
    pub meta_trial: u64,
    pub repetitions: usize,
    pub accepted_rounds: usize,
    pub threshold: f64,
    pub accepted: bool,
    pub shared_oracle: bool,
}

#[derive(Clone)]
enum Resolved {
    Abort,
    Commit(Vec<C64>),
    Adversary(Arc<dyn Adversary>),
}

/// An instance, tree geometry and prover strategy, ready to run rounds.
#[derive(Clone)]
pub struct Protocol {
    instance: Arc<LocalHamiltonian>,
    config: ProtocolConfig,
    shape: TreeShape,
    strategy: ProverStrategy,
    resolved: Resolved,
}

impl Protocol {
    pub fn new(instance: Arc<LocalHamiltonian>, config: ProtocolConfig, strategy: ProverStrategy) -> Result<Self> {
        let n = instance.n_qubits();
        let shape = match config.ell {
            Some(ell) => {
                let shape = TreeShape::new(config.b, ell)?;
                if shape.payload_qubits() < n {
                    return Err(Error::Usage(format!(
                        "tree with b = {} and ℓ = {ell} holds {} qubits, instance needs {n}",
                        config.b,
                        shape.payload_qubits()
                    )));
                }
                shape
            }
            None => TreeShape::covering(config.b, n)?,
        };
        if config.mode == VerifierMode::Circuit {
            if let Some(i) = instance.terms().iter().position(|t| t.circuit.is_none()) {
                return Err(Error::Usage(format!("circuit mode needs a verifier circuit on every term; term {} has none", i + 1)));
            }
        }
        let resolved = match &strategy {
            ProverStrategy::Honest => {
                let yes = match instance.label() {
                    InstanceLabel::Yes => true,
                    InstanceLabel::No => false,
                    InstanceLabel::Unknown => instance.classify()? == Classification::Yes,
                };
                if yes {
                    Resolved::Commit(instance.ground_energy()?.state)
                } else {
                    Resolved::Abort
                }
            }
            ProverStrategy::SemiHonest(state) => {
                if state.len() != 1 << n {
                    return Err(Error::Usage(format!(
                        "committed state has {} amplitudes, instance needs 2^{n}",
                        state.len()
                    )));
                }
                if (linalg::norm_sqr(state) - 1.0).abs() > crate::EXACT_TOL {
                    return Err(Error::Validation("committed state is not normalized".into()));
                }
                Resolved::Commit(state.clone())
            }
            ProverStrategy::Adversary(a) => Resolved::Adversary(a.clone()),
        };
        Ok(Protocol { instance, config, shape, strategy, resolved })
    }

    pub fn shape(&self) -> TreeShape {
        self.shape
    }

    pub fn config(&self) -> ProtocolConfig {
        self.config
    }

    pub fn instance(&self) -> &LocalHamiltonian {
        &self.instance
    }

    pub fn strategy(&self) -> &ProverStrategy {
        &self.strategy
    }

    /// `⌈log₂ m⌉`, the size of the verifier's challenge.
    pub fn classical_bits(&self) -> usize {
        let m = self.instance.num_terms();
        (usize::BITS - (m - 1).leading_zeros()) as usize
    }

    /// `τ = 1 − (α + β)/2`.
    pub fn repetition_threshold(&self) -> f64 {
        1.0 - (self.instance.alpha() + self.instance.beta()) / 2.0
    }

    pub fn build_oracle(&self, kind: OracleKind, seed: u64) -> Result<OracleHandle> {
        OracleHandle::build(kind, self.shape.block_size(), seed)
    }

    /// Runs one round against `oracle`. Protocol violations by the prover end
    /// the round as a rejection rather than an error.
    pub fn run_round(&self, oracle: &mut OracleHandle, seeds: RoundSeeds, trial: u64) -> Result<Transcript> {
        if oracle.qubits() != self.shape.oracle_qubits() {
            return Err(Error::Usage(format!(
                "oracle acts on {} qubits, protocol needs {}",
                oracle.qubits(),
                self.shape.oracle_qubits()
            )));
        }
        let mut t = Transcript::new(trial, seeds, self.shape);
        match self.play(oracle, &mut t) {
            Ok(()) => Ok(t),
            Err(Error::ProtocolViolation(reason)) => {
                t.outcome = RoundOutcome::Violation { reason };
                Ok(t)
            }
            Err(e) => Err(e),
        }
    }

    fn play(&self, oracle: &mut OracleHandle, t: &mut Transcript) -> Result<()> {
        let b = self.shape.block_size();
        let ell = self.shape.leaves();
        let mut v_rng = seeds::rng_from(t.seeds.verifier);
        let mut s_rng = seeds::rng_from(t.seeds.strategy);
        let start = oracle.counts();

        let (amplitudes, adversary) = match &self.resolved {
            Resolved::Abort => {
                t.outcome = RoundOutcome::Aborted;
                return Ok(());
            }
            Resolved::Commit(v) => (v.clone(), None),
            Resolved::Adversary(a) => (a.payload(&self.instance, &mut s_rng)?, Some(a.clone())),
        };
        if amplitudes.len() != 1 << self.instance.n_qubits() {
            return Err(Error::Usage("adversary payload has the wrong dimension".into()));
        }

        let mut sys = QuantumSystem::with_cap(self.config.max_qubits);
        let mut payload = sys.prepare_register(&amplitudes, Party::Prover)?;
        let padding = self.shape.payload_qubits() - self.instance.n_qubits();
        if padding > 0 {
            payload.extend(sys.alloc_zeros(padding, Party::Prover)?);
        }
        let mut layout = merkle::commit(&mut sys, oracle, &payload, b)?.layout;

        if let Some(a) = &adversary {
            let mut ctx = AdversaryContext { sys: &mut sys, oracle, layout: &mut layout, rng: &mut s_rng };
            a.before_root(&mut ctx)?;
        }
        let root = layout
            .register(1)
            .ok_or_else(|| Error::ProtocolViolation("no root register to send".into()))?
            .to_vec();
        sys.transfer_ownership(&root, Party::Prover, Party::Verifier)?;
        t.message1 = root.iter().map(|l| l.id()).collect();
        t.qubits_sent += b;

        let term = self.instance.sample_term(&mut v_rng);
        t.chosen_i = Some(term.index);
        t.classical_bits = self.classical_bits();
        let leaves = merkle::leaves_for_qubits(&term.qubits, b, ell)?;
        t.opened_leaves = leaves.iter().copied().collect();

        if let Some(a) = &adversary {
            let mut ctx = AdversaryContext { sys: &mut sys, oracle, layout: &mut layout, rng: &mut s_rng };
            a.before_opening(&mut ctx, &term, &leaves)?;
        }
        let mut received: BTreeMap<Node, Vec<_>> = BTreeMap::new();
        received.insert(1, root);
        for u in merkle::frontier(&leaves, ell)? {
            if u == 1 {
                continue;
            }
            let reg = layout
                .register(u)
                .ok_or_else(|| Error::ProtocolViolation(format!("no register for node {u} to send")))?
                .to_vec();
            sys.transfer_ownership(&reg, Party::Prover, Party::Verifier)?;
            t.message3_nodes.push(u);
            t.message3.extend(reg.iter().map(|l| l.id()));
            t.qubits_sent += reg.len();
            received.insert(u, reg);
        }
        t.verifier_holdings = sys.owned_by(Party::Verifier).iter().map(|l| l.id()).collect();

        let after_prover = oracle.counts();
        let prover = after_prover.since(start);
        let outcome = merkle::decommit(&mut sys, oracle, self.shape, &received, &leaves, &mut v_rng)?;
        let verifier: QueryCounts = oracle.counts().since(after_prover);
        t.queries = QueryTally {
            prover_g: prover.forward,
            prover_ginv: prover.inverse,
            verifier_g: verifier.forward,
            verifier_ginv: verifier.inverse,
        };

        let regs = match outcome {
            DecommitOutcome::Rejected { node, outcome } => {
                let bits = outcome.iter().map(|&x| if x { '1' } else { '0' }).collect();
                t.outcome = RoundOutcome::RejectedDecommit { node, outcome: bits };
                return Ok(());
            }
            DecommitOutcome::Opened(regs) => regs,
        };
        let mut labels = Vec::with_capacity(term.qubits.len());
        for &q in &term.qubits {
            let (leaf, offset) = self.shape.locate_qubit(q)?;
            labels.push(regs[&leaf][offset]);
        }
        let accept = match self.config.mode {
            VerifierMode::Povm => sys.measure_povm_accept(&labels, &term.reject_effect(), &mut v_rng)?,
            VerifierMode::Circuit => hamiltonian::apply_verifier_circuit(&mut sys, &term, &labels, &mut v_rng)?,
        };
        t.final_measurement = Some(accept);
        t.outcome = if accept { RoundOutcome::Accepted } else { RoundOutcome::RejectedMeasurement };
        Ok(())
    }

    /// Runs `trials` independent rounds seeded from `master` and summarizes them.
    pub fn estimate_acceptance(
        &self,
        kind: OracleKind,
        schedule: OracleSchedule,
        trials: usize,
        master: u64,
    ) -> Result<AcceptanceReport> {
        if trials == 0 {
            return Err(Error::Usage("at least one trial is required".into()));
        }
        let fixed = match schedule {
            OracleSchedule::Fixed(seed) => Some(self.build_oracle(kind, seed)?),
            OracleSchedule::Fresh => None,
        };
        let transcripts = (0..trials as u64)
            .into_par_iter()
            .map(|trial| {
                let seeds = RoundSeeds::for_trial(master, trial);
                let mut oracle = match &fixed {
                    Some(g) => g.clone(),
                    None => self.build_oracle(kind, seeds.oracle)?,
                };
                let mut t = self.run_round(&mut oracle, seeds, trial)?;
                t.seeds.oracle = oracle.seed();
                Ok(t)
            })
            .collect::<Result<Vec<_>>>()?;
        AcceptanceReport::from_transcripts(transcripts)
    }

    /// `r` sequential rounds; accepts iff at least `τ·r` rounds accept.
    /// With `share_oracle` one oracle serves every round, otherwise each
    /// round draws its own.
    pub fn sequential_repeat(
        &self,
        kind: OracleKind,
        repetitions: usize,
        master: u64,
        meta_trial: u64,
        share_oracle: bool,
    ) -> Result<RepetitionOutcome> {
        if repetitions == 0 {
            return Err(Error::Usage("at least one repetition is required".into()));
        }
        let sub = seeds::derive(master, meta_trial, Stream::Repetition);
        let mut shared = if share_oracle {
            Some(self.build_oracle(kind, seeds::derive(sub, 0, Stream::Oracle))?)
        } else {
            None
        };
        let mut accepted_rounds = 0;
        for j in 0..repetitions as u64 {
            let seeds = RoundSeeds::for_trial(sub, j);
            let t = match shared.as_mut() {
                Some(g) => self.run_round(g, seeds, j)?,
                None => self.run_round(&mut self.build_oracle(kind, seeds.oracle)?, seeds, j)?,
            };
            accepted_rounds += t.accepted() as usize;
        }
        let threshold = self.repetition_threshold();
        Ok(RepetitionOutcome {
            meta_trial,
            repetitions,
            accepted_rounds,
            threshold,
            accepted: accepted_rounds as f64 >= threshold * repetitions as f64 - 1e-12,
            shared_oracle: share_oracle,
        })
    }

    /// Independent meta-trials of [`Protocol::sequential_repeat`], in order.
    pub fn repeat_many(
        &self,
        kind: OracleKind,
        repetitions: usize,
        meta_trials: usize,
        master: u64,
        share_oracle: bool,
    ) -> Result<Vec<RepetitionOutcome>> {
        if meta_trials == 0 {
            return Err(Error::Usage("at least one meta-trial is required".into()));
        }
        (0..meta_trials as u64)
            .into_par_iter()
            .map(|m| self.sequential_repeat(kind, repetitions, master, m, share_oracle))
            .collect()
    }
}

/// `P[X ≥ k]` for `X ~ Binomial(n, p)`.
pub fn binomial_tail(n: usize, p: f64, k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }
    let ln_choose = |j: usize| -> f64 {
        (1..=j).map(|x| ((n - j + x) as f64 / x as f64).ln()).sum()
    };
    (k..=n)
        .map(|j| {
            let mut log = ln_choose(j);
            log += if j > 0 { j as f64 * p.ln() } else { 0.0 };
            log += if n > j { (n - j) as f64 * (1.0 - p).ln() } else { 0.0 };
            log.exp()
        })
        .sum::<f64>()
        .min(1.0)
}
