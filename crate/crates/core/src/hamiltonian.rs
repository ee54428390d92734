//! k-local Hamiltonian instances and the local verifier.
//!
//! Payload qubits are 1-indexed; in every dense operator qubit 1 is the most
//! significant bit. A term's matrix acts on its qubit list in the listed order.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, gates, CMatrix, C64, ONE, ZERO};
use crate::qstate::{DensityMatrix, QuantumSystem, QubitLabel};

/// Largest payload for which the full operator is diagonalized.
pub const MAX_DENSE_QUBITS: usize = 12;

const RANGE_TOL: f64 = 1e-9;
const CROSS_CHECK_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InstanceLabel {
    Yes,
    No,
    #[default]
    Unknown,
}

impl fmt::Display for InstanceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InstanceLabel::Yes => "yes",
            InstanceLabel::No => "no",
            InstanceLabel::Unknown => "unknown",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Yes,
    No,
    OutsidePromise,
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Classification::Yes => "yes",
            Classification::No => "no",
            Classification::OutsidePromise => "outside_promise",
        })
    }
}

/// A gate of the local verifier circuit. Wires index the term's qubits first
/// (in listed order), then the ancillas.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    H(usize),
    S(usize),
    T(usize),
    Cnot { control: usize, target: usize },
}

impl Gate {
    fn wires(&self) -> Vec<usize> {
        match *self {
            Gate::H(w) | Gate::S(w) | Gate::T(w) => vec![w],
            Gate::Cnot { control, target } => vec![control, target],
        }
    }

    fn matrix(&self) -> CMatrix {
        match self {
            Gate::H(_) => gates::hadamard(),
            Gate::S(_) => gates::phase_s(),
            Gate::T(_) => gates::phase_t(),
            Gate::Cnot { .. } => gates::cnot(),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Gate::H(_) => "h",
            Gate::S(_) => "s",
            Gate::T(_) => "t",
            Gate::Cnot { .. } => "cnot",
        }
    }
}

/// Clifford+T circuit on the term's qubits plus `ancillas` fresh qubits.
/// The first ancilla is the output; outcome 1 accepts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VerifierCircuit {
    pub ancillas: usize,
    pub gates: Vec<Gate>,
}

impl VerifierCircuit {
    /// Index of the output wire for a term on `k` qubits.
    pub fn output_wire(&self, k: usize) -> usize {
        k
    }
}

#[derive(Clone, Debug)]
pub struct LocalTerm {
    pub qubits: Vec<usize>,
    pub matrix: CMatrix,
    pub circuit: Option<VerifierCircuit>,
}

impl LocalTerm {
    pub fn new(qubits: Vec<usize>, matrix: CMatrix) -> Self {
        LocalTerm { qubits, matrix, circuit: None }
    }

    pub fn with_circuit(mut self, circuit: VerifierCircuit) -> Self {
        self.circuit = Some(circuit);
        self
    }
}

/// What the verifier checks once term `index` has been drawn.
#[derive(Clone, Debug)]
pub struct VerifierTerm {
    /// 1-based term index.
    pub index: usize,
    pub qubits: Vec<usize>,
    /// `I − H_i`.
    pub accept_effect: CMatrix,
    pub circuit: Option<VerifierCircuit>,
}

impl VerifierTerm {
    /// The reject effect `H_i`.
    pub fn reject_effect(&self) -> CMatrix {
        CMatrix::identity(self.accept_effect.nrows(), self.accept_effect.ncols()) - &self.accept_effect
    }
}

#[derive(Clone, Debug)]
pub struct LocalHamiltonian {
    n_qubits: usize,
    alpha: f64,
    beta: f64,
    k: usize,
    terms: Vec<LocalTerm>,
    label: InstanceLabel,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct GateDoc {
    gate: String,
    wires: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CircuitDoc {
    ancillas: usize,
    gates: Vec<GateDoc>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TermDoc {
    qubits: Vec<usize>,
    matrix: Vec<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    circuit: Option<CircuitDoc>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct InstanceDoc {
    n_qubits: usize,
    alpha: f64,
    beta: f64,
    k: usize,
    terms: Vec<TermDoc>,
    #[serde(default)]
    label: InstanceLabel,
}

fn term_err(i: usize, msg: impl fmt::Display) -> Error {
    Error::Validation(format!("term {}: {msg}", i + 1))
}

fn parse_circuit(i: usize, doc: &CircuitDoc, k: usize) -> Result<VerifierCircuit> {
    if doc.ancillas == 0 {
        return Err(term_err(i, "verifier circuit needs at least one ancilla"));
    }
    let wires = k + doc.ancillas;
    let mut gates = Vec::with_capacity(doc.gates.len());
    for g in &doc.gates {
        let arity = |n: usize| -> Result<()> {
            if g.wires.len() != n {
                return Err(term_err(i, format!("gate {} takes {n} wire(s)", g.gate)));
            }
            Ok(())
        };
        let gate = match g.gate.to_ascii_lowercase().as_str() {
            "h" => {
                arity(1)?;
                Gate::H(g.wires[0])
            }
            "s" => {
                arity(1)?;
                Gate::S(g.wires[0])
            }
            "t" => {
                arity(1)?;
                Gate::T(g.wires[0])
            }
            "cnot" | "cx" => {
                arity(2)?;
                Gate::Cnot { control: g.wires[0], target: g.wires[1] }
            }
            other => return Err(term_err(i, format!("gate '{other}' is not in the Clifford+T set {{h, s, t, cnot}}"))),
        };
        let ws = gate.wires();
        if ws.iter().any(|&w| w >= wires) {
            return Err(term_err(i, format!("gate {} touches a wire outside [0, {wires})", gate.name())));
        }
        if ws.len() == 2 && ws[0] == ws[1] {
            return Err(term_err(i, "cnot control and target coincide"));
        }
        gates.push(gate);
    }
    Ok(VerifierCircuit { ancillas: doc.ancillas, gates })
}

fn circuit_doc(c: &VerifierCircuit) -> CircuitDoc {
    CircuitDoc {
        ancillas: c.ancillas,
        gates: c
            .gates
            .iter()
            .map(|g| GateDoc { gate: g.name().into(), wires: g.wires() })
            .collect(),
    }
}

impl LocalHamiltonian {
    /// Builds and validates an instance.
    pub fn new(
        n_qubits: usize,
        alpha: f64,
        beta: f64,
        k: usize,
        terms: Vec<LocalTerm>,
        label: InstanceLabel,
    ) -> Result<Self> {
        if n_qubits == 0 {
            return Err(Error::Validation("instance needs at least one qubit".into()));
        }
        if !(alpha > 0.0 && alpha < beta && beta <= 1.0) {
            return Err(Error::Validation(format!(
                "thresholds must satisfy 0 < alpha < beta <= 1, got alpha={alpha}, beta={beta}"
            )));
        }
        if terms.is_empty() {
            return Err(Error::Validation("instance has no terms".into()));
        }
        for (i, t) in terms.iter().enumerate() {
            let kk = t.qubits.len();
            if kk == 0 || kk > k {
                return Err(term_err(i, format!("acts on {kk} qubits, locality bound is {k}")));
            }
            for (a, &q) in t.qubits.iter().enumerate() {
                if q == 0 || q > n_qubits {
                    return Err(term_err(i, format!("qubit index {q} outside [1, {n_qubits}]")));
                }
                if t.qubits[..a].contains(&q) {
                    return Err(term_err(i, format!("qubit {q} listed twice")));
                }
            }
            let dim = 1usize << kk;
            if t.matrix.shape() != (dim, dim) {
                return Err(term_err(i, format!("matrix must be {dim}x{dim}")));
            }
            if linalg::hermiticity_defect(&t.matrix) > RANGE_TOL {
                return Err(term_err(i, "matrix is not Hermitian"));
            }
            let eig = linalg::hermitian_eigenvalues(&t.matrix);
            let (lo, hi) = (eig[0], eig[eig.len() - 1]);
            if lo < -RANGE_TOL || hi > 1.0 + RANGE_TOL {
                return Err(term_err(i, format!("eigenvalues span [{lo:.6}, {hi:.6}], outside [0, 1]")));
            }
            if let Some(c) = &t.circuit {
                parse_circuit(i, &circuit_doc(c), kk)?;
            }
        }
        Ok(LocalHamiltonian { n_qubits, alpha, beta, k, terms, label })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn locality(&self) -> usize {
        self.k
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> &[LocalTerm] {
        &self.terms
    }

    pub fn label(&self) -> InstanceLabel {
        self.label
    }

    pub fn with_label(mut self, label: InstanceLabel) -> Self {
        self.label = label;
        self
    }

    /// Appends a term, revalidating the instance.
    pub fn push_term(self, term: LocalTerm) -> Result<Self> {
        let mut terms = self.terms;
        terms.push(term);
        Self::new(self.n_qubits, self.alpha, self.beta, self.k, terms, self.label)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: InstanceDoc = serde_json::from_str(text)?;
        let mut terms = Vec::with_capacity(doc.terms.len());
        for (i, t) in doc.terms.iter().enumerate() {
            let rows = t.matrix.len();
            if rows == 0 || t.matrix.iter().any(|r| r.len() != rows) {
                return Err(term_err(i, "matrix must be square and non-empty"));
            }
            let matrix = CMatrix::from_fn(rows, rows, |r, c| C64::new(t.matrix[r][c][0], t.matrix[r][c][1]));
            let circuit = t.circuit.as_ref().map(|c| parse_circuit(i, c, t.qubits.len())).transpose()?;
            terms.push(LocalTerm { qubits: t.qubits.clone(), matrix, circuit });
        }
        Self::new(doc.n_qubits, doc.alpha, doc.beta, doc.k, terms, doc.label)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = InstanceDoc {
            n_qubits: self.n_qubits,
            alpha: self.alpha,
            beta: self.beta,
            k: self.k,
            terms: self
                .terms
                .iter()
                .map(|t| TermDoc {
                    qubits: t.qubits.clone(),
                    matrix: (0..t.matrix.nrows())
                        .map(|r| (0..t.matrix.ncols()).map(|c| [t.matrix[(r, c)].re, t.matrix[(r, c)].im]).collect())
                        .collect(),
                    circuit: t.circuit.as_ref().map(circuit_doc),
                })
                .collect(),
            label: self.label,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    /// The full operator `Σ_i H_i` on `2^N` dimensions.
    pub fn assemble(&self) -> Result<CMatrix> {
        if self.n_qubits > MAX_DENSE_QUBITS {
            return Err(Error::Resource(format!(
                "dense assembly limited to {MAX_DENSE_QUBITS} qubits, instance has {}",
                self.n_qubits
            )));
        }
        let n = self.n_qubits;
        let dim = 1usize << n;
        let mut h = CMatrix::zeros(dim, dim);
        for t in &self.terms {
            let bits: Vec<usize> = t.qubits.iter().map(|q| n - q).collect();
            let mask: usize = bits.iter().map(|b| 1usize << b).sum();
            let local = |idx: usize| bits.iter().fold(0usize, |acc, &b| (acc << 1) | ((idx >> b) & 1));
            let scatter = |base: usize, loc: usize| {
                let kk = bits.len();
                bits.iter().enumerate().fold(base, |acc, (p, &b)| acc | (((loc >> (kk - 1 - p)) & 1) << b))
            };
            for r in 0..dim {
                let lr = local(r);
                let base = r & !mask;
                for lc in 0..t.matrix.ncols() {
                    let v = t.matrix[(lr, lc)];
                    if v != ZERO {
                        h[(r, scatter(base, lc))] += v;
                    }
                }
            }
        }
        Ok(h)
    }

    /// `λ_min` and a ground state, cross-checked against inverse iteration.
    pub fn ground_energy(&self) -> Result<GroundState> {
        let h = self.assemble()?;
        let (vals, vecs) = linalg::hermitian_eigen(&h);
        let energy = vals[0];
        let state: Vec<C64> = vecs.column(0).iter().copied().collect();
        let iterated = inverse_iteration(&h)?;
        if (iterated - energy).abs() > CROSS_CHECK_TOL {
            return Err(Error::Numerical(format!(
                "eigensolver ({energy:.12}) and inverse iteration ({iterated:.12}) disagree"
            )));
        }
        let residual = {
            let hv = linalg::mat_vec(&h, &state);
            hv.iter().zip(&state).map(|(a, v)| (a - v * energy).norm_sqr()).sum::<f64>().sqrt()
        };
        Ok(GroundState { energy, state, residual, gap: vals.get(1).map(|v| v - energy) })
    }

    /// `λ_min` by shifted inverse iteration alone.
    pub fn iterated_ground_energy(&self) -> Result<f64> {
        inverse_iteration(&self.assemble()?)
    }

    /// Decides the promise problem for this instance.
    pub fn classify(&self) -> Result<Classification> {
        Ok(self.classify_energy(self.ground_energy()?.energy))
    }

    pub fn classify_energy(&self, lambda_min: f64) -> Classification {
        let m = self.num_terms() as f64;
        if lambda_min <= self.alpha * m + RANGE_TOL {
            Classification::Yes
        } else if lambda_min >= self.beta * m - RANGE_TOL {
            Classification::No
        } else {
            Classification::OutsidePromise
        }
    }

    /// Term `index` (1-based) as seen by the verifier.
    pub fn verifier_term(&self, index: usize) -> Result<VerifierTerm> {
        let t = self.term(index)?;
        Ok(VerifierTerm {
            index,
            qubits: t.qubits.clone(),
            accept_effect: CMatrix::identity(t.matrix.nrows(), t.matrix.ncols()) - &t.matrix,
            circuit: t.circuit.clone(),
        })
    }

    /// Draws `i` uniformly from `[m]`.
    pub fn sample_term<R: Rng + ?Sized>(&self, rng: &mut R) -> VerifierTerm {
        let i = rng.random_range(1..=self.num_terms());
        self.verifier_term(i).expect("index in range")
    }

    /// `1 − Tr(H_i ρ)` for a state on the qubits of term `index`.
    pub fn accept_probability(&self, index: usize, rho: &DensityMatrix) -> Result<f64> {
        let t = self.term(index)?;
        if rho.qubits() != t.qubits.len() {
            return Err(Error::Usage(format!(
                "term {index} acts on {} qubits, state has {}",
                t.qubits.len(),
                rho.qubits()
            )));
        }
        Ok(1.0 - rho.expectation(&t.matrix)?.re)
    }

    /// Average of `accept_probability` over a uniform term, evaluated on the
    /// reduced states of the full payload `state`.
    pub fn expected_acceptance(&self, state: &[C64]) -> Result<f64> {
        let h = self.assemble()?;
        if state.len() != h.nrows() {
            return Err(Error::Usage("state dimension does not match the instance".into()));
        }
        let v = DVector::from_column_slice(state);
        let energy = (v.adjoint() * &h * &v)[(0, 0)].re;
        Ok(1.0 - energy / self.num_terms() as f64)
    }

    fn term(&self, index: usize) -> Result<&LocalTerm> {
        index
            .checked_sub(1)
            .and_then(|i| self.terms.get(i))
            .ok_or_else(|| Error::Usage(format!("term index {index} outside [1, {}]", self.num_terms())))
    }
}

impl FromStr for LocalHamiltonian {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_json(s)
    }
}

#[derive(Clone, Debug)]
pub struct GroundState {
    pub energy: f64,
    pub state: Vec<C64>,
    /// `‖Hv − λ_min v‖₂`.
    pub residual: f64,
    /// Distance to the next eigenvalue, counting multiplicity.
    pub gap: Option<f64>,
}

/// Smallest eigenvalue by inverse iteration shifted below the Gershgorin bound.
fn inverse_iteration(h: &CMatrix) -> Result<f64> {
    let dim = h.nrows();
    let lower = (0..dim)
        .map(|r| {
            let off: f64 = (0..dim).filter(|&c| c != r).map(|c| h[(r, c)].norm()).sum();
            h[(r, r)].re - off
        })
        .fold(f64::INFINITY, f64::min);
    let shift = lower - 1.0;
    let shifted = h - CMatrix::identity(dim, dim) * C64::new(shift, 0.0);
    let lu = shifted.lu();
    let mut v = DVector::from_fn(dim, |i, _| C64::new(1.0 + (i as f64 * 0.618).sin() * 0.5, (i as f64 * 0.414).cos() * 0.25));
    v /= C64::new(v.norm(), 0.0);
    let mut rq = f64::INFINITY;
    for _ in 0..20_000 {
        let mut w = lu
            .solve(&v)
            .ok_or_else(|| Error::Numerical("shifted operator is singular".into()))?;
        w /= C64::new(w.norm(), 0.0);
        let hw = h * &w;
        let next = w.dotc(&hw).re;
        let residual = (&hw - &w * C64::new(next, 0.0)).norm();
        v = w;
        if residual < 1e-11 || (next - rq).abs() < 1e-15 {
            return Ok(next);
        }
        rq = next;
    }
    Ok(rq)
}

/// Runs the term's verifier circuit on `labels` (the term's qubits in listed
/// order) with fresh ancillas owned by the current owner of `labels[0]`.
/// Returns `true` when the output ancilla reads 1.
pub fn apply_verifier_circuit<R: Rng + ?Sized>(
    sys: &mut QuantumSystem,
    term: &VerifierTerm,
    labels: &[QubitLabel],
    rng: &mut R,
) -> Result<bool> {
    let circuit = term
        .circuit
        .as_ref()
        .ok_or_else(|| Error::Usage(format!("term {} has no verifier circuit", term.index)))?;
    if labels.len() != term.qubits.len() {
        return Err(Error::Usage(format!(
            "term {} acts on {} qubits, got {} labels",
            term.index,
            term.qubits.len(),
            labels.len()
        )));
    }
    let owner = sys.owner(labels[0])?;
    let ancillas = sys.alloc_zeros(circuit.ancillas, owner)?;
    let wires: Vec<QubitLabel> = labels.iter().chain(&ancillas).copied().collect();
    for g in &circuit.gates {
        let on: Vec<QubitLabel> = g.wires().iter().map(|&w| wires[w]).collect();
        sys.apply_unitary(&on, &g.matrix(), false)?;
    }
    let out = wires[circuit.output_wire(labels.len())];
    Ok(sys.measure_computational(&[out], rng)?[0])
}

/// `|b⟩⟨b|` on one qubit.
pub fn basis_projector(bit: bool) -> CMatrix {
    let mut m = CMatrix::zeros(2, 2);
    let i = bit as usize;
    m[(i, i)] = ONE;
    m
}
