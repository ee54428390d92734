//! The λ-qubit oracle `G` and its inverse, with per-direction query counters.
//!
//! Backends: an exact Haar-random dense unitary, a brickwork random circuit of
//! Haar two-qubit gates, the XOR oracle `O_h |x⟩|y⟩ = |x⟩|y ⊕ h(x)⟩` for a
//! random function table `h`, and the identity.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, C64};
use crate::qstate::{QuantumSystem, QubitLabel};
use crate::seeds::{self, Stream};

/// Largest qubit count for which a dense `2^λ × 2^λ` oracle is materialized.
pub const MAX_DENSE_QUBITS: usize = 12;

/// Largest block size for the XOR oracle (its table has `2^(2b)` entries).
pub const MAX_TABLE_BLOCK: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    Haar,
    RandomCircuit { depth: usize },
    Oh,
    Identity,
}

impl fmt::Display for OracleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleKind::Haar => write!(f, "haar"),
            OracleKind::RandomCircuit { depth } => write!(f, "circuit:{depth}"),
            OracleKind::Oh => write!(f, "oh"),
            OracleKind::Identity => write!(f, "identity"),
        }
    }
}

impl FromStr for OracleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "haar" => Ok(OracleKind::Haar),
            "oh" => Ok(OracleKind::Oh),
            "identity" => Ok(OracleKind::Identity),
            _ => {
                let depth = s
                    .strip_prefix("circuit:")
                    .and_then(|d| d.parse::<usize>().ok())
                    .filter(|&d| d > 0)
                    .ok_or_else(|| {
                        Error::Usage(format!(
                            "unknown oracle `{s}` (expected haar, circuit:<depth>, oh or identity)"
                        ))
                    })?;
                Ok(OracleKind::RandomCircuit { depth })
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Inverse,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct QueryCounts {
    pub forward: u64,
    pub inverse: u64,
}

impl QueryCounts {
    pub fn total(&self) -> u64 {
        self.forward + self.inverse
    }

    /// Queries made since an earlier snapshot.
    pub fn since(&self, earlier: QueryCounts) -> QueryCounts {
        QueryCounts {
            forward: self.forward - earlier.forward,
            inverse: self.inverse - earlier.inverse,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueryRecord {
    pub direction: Direction,
    pub labels: Vec<QubitLabel>,
}

#[derive(Clone, Debug)]
struct BrickGate {
    first: usize,
    second: usize,
    matrix: CMatrix,
}

#[derive(Clone, Debug)]
enum Representation {
    Dense { forward: CMatrix, inverse: CMatrix },
    Circuit(Vec<BrickGate>),
    /// `h(x)` for every `x ∈ {0,1}^{2b}`.
    XorTable(Vec<usize>),
    Identity,
}

/// One sampled oracle with its query counters.
#[derive(Clone, Debug)]
pub struct OracleHandle {
    kind: OracleKind,
    qubits: usize,
    seed: u64,
    repr: Representation,
    counts: QueryCounts,
    log: Vec<QueryRecord>,
}

/// Ginibre matrix orthonormalized by QR, with each column rotated so that the
/// matching diagonal entry of `R` is positive real. Returns the first `cols`
/// columns of a Haar-random `rows × rows` unitary.
pub fn sample_haar_isometry<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Result<CMatrix> {
    if cols == 0 || cols > rows {
        return Err(Error::Usage(format!("cannot sample a {rows}x{cols} isometry")));
    }
    let ginibre = CMatrix::from_fn(rows, cols, |_, _| linalg::complex_gaussian(rng));
    let qr = ginibre.qr();
    let mut q = qr.q();
    let r = qr.r();
    for c in 0..cols {
        let d = r[(c, c)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { linalg::ONE };
        q.column_mut(c).iter_mut().for_each(|z| *z *= phase);
    }
    Ok(q)
}

/// Haar-random unitary of dimension `dim` (a power of two up to `2^MAX_DENSE_QUBITS`).
pub fn sample_haar_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<CMatrix> {
    if !linalg::is_power_of_two(dim) {
        return Err(Error::Usage(format!("dimension {dim} is not a power of two")));
    }
    if dim > 1 << MAX_DENSE_QUBITS {
        return Err(Error::Resource(format!(
            "dense unitary of dimension {dim} exceeds 2^{MAX_DENSE_QUBITS}"
        )));
    }
    sample_haar_isometry(dim, dim, rng)
}

fn brickwork<R: Rng + ?Sized>(qubits: usize, depth: usize, rng: &mut R) -> Result<Vec<BrickGate>> {
    let mut gates = Vec::new();
    for layer in 0..depth {
        let mut first = layer % 2;
        while first + 1 < qubits {
            gates.push(BrickGate { first, second: first + 1, matrix: sample_haar_unitary(4, rng)? });
            first += 2;
        }
    }
    Ok(gates)
}

impl OracleHandle {
    /// Samples the oracle for block size `b` (arity `λ = 3b`) from `seed`.
    pub fn build(kind: OracleKind, b: usize, seed: u64) -> Result<Self> {
        if b == 0 {
            return Err(Error::Usage("block size must be positive".into()));
        }
        Self::with_qubits(kind, 3 * b, seed)
    }

    /// Samples an oracle on an arbitrary qubit count. The XOR oracle needs a
    /// multiple of three.
    pub fn with_qubits(kind: OracleKind, qubits: usize, seed: u64) -> Result<Self> {
        if qubits == 0 {
            return Err(Error::Usage("oracle must act on at least one qubit".into()));
        }
        let mut rng = seeds::rng_from(seed);
        let repr = match kind {
            OracleKind::Haar => {
                if qubits > MAX_DENSE_QUBITS {
                    return Err(Error::Resource(format!(
                        "Haar oracle on {qubits} qubits exceeds the dense cap {MAX_DENSE_QUBITS}"
                    )));
                }
                let forward = sample_haar_unitary(1 << qubits, &mut rng)?;
                let inverse = forward.adjoint();
                Representation::Dense { forward, inverse }
            }
            OracleKind::RandomCircuit { depth } => {
                if depth == 0 {
                    return Err(Error::Usage("circuit depth must be positive".into()));
                }
                if qubits < 2 {
                    return Err(Error::Usage("random circuits need at least two qubits".into()));
                }
                Representation::Circuit(brickwork(qubits, depth, &mut rng)?)
            }
            OracleKind::Oh => {
                if qubits % 3 != 0 {
                    return Err(Error::Usage("XOR oracle needs λ = 3b".into()));
                }
                let b = qubits / 3;
                if b > MAX_TABLE_BLOCK {
                    return Err(Error::Resource(format!(
                        "XOR table for b = {b} exceeds the cap b ≤ {MAX_TABLE_BLOCK}"
                    )));
                }
                Representation::XorTable((0..1usize << (2 * b)).map(|_| rng.random_range(0..1usize << b)).collect())
            }
            OracleKind::Identity => Representation::Identity,
        };
        Ok(OracleHandle { kind, qubits, seed, repr, counts: QueryCounts::default(), log: Vec::new() })
    }

    pub fn kind(&self) -> OracleKind {
        self.kind
    }

    /// Arity λ.
    pub fn qubits(&self) -> usize {
        self.qubits
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counts(&self) -> QueryCounts {
        self.counts
    }

    /// Every query made so far, in order.
    pub fn log(&self) -> &[QueryRecord] {
        &self.log
    }

    /// The XOR table `h`, when this is an `O_h` oracle.
    pub fn xor_table(&self) -> Option<&[usize]> {
        match &self.repr {
            Representation::XorTable(t) => Some(t),
            _ => None,
        }
    }

    fn xor_permutation(&self, table: &[usize]) -> Vec<usize> {
        let b = self.qubits / 3;
        let low = (1usize << b) - 1;
        (0..1usize << self.qubits)
            .map(|r| {
                let (x, y) = (r >> b, r & low);
                (x << b) | (y ^ table[x])
            })
            .collect()
    }

    /// Applies `G` or `G†` to exactly λ labels and bumps the matching counter.
    pub fn query(&mut self, sys: &mut QuantumSystem, labels: &[QubitLabel], direction: Direction) -> Result<()> {
        if labels.len() != self.qubits {
            return Err(Error::Usage(format!(
                "oracle acts on {} qubits, got {} labels",
                self.qubits,
                labels.len()
            )));
        }
        match (&self.repr, direction) {
            (Representation::Dense { forward, .. }, Direction::Forward) => {
                sys.apply_matrix_unchecked(labels, forward)?
            }
            (Representation::Dense { inverse, .. }, Direction::Inverse) => {
                sys.apply_matrix_unchecked(labels, inverse)?
            }
            (Representation::Circuit(gates), Direction::Forward) => {
                for g in gates {
                    sys.apply_matrix_unchecked(&[labels[g.first], labels[g.second]], &g.matrix)?;
                }
            }
            (Representation::Circuit(gates), Direction::Inverse) => {
                for g in gates.iter().rev() {
                    sys.apply_matrix_unchecked(&[labels[g.first], labels[g.second]], &g.matrix.adjoint())?;
                }
            }
            // O_h is an involution
            (Representation::XorTable(table), _) => {
                let perm = self.xor_permutation(table);
                sys.apply_permutation(labels, &perm)?
            }
            (Representation::Identity, _) => sys.check_labels(labels)?,
        }
        match direction {
            Direction::Forward => self.counts.forward += 1,
            Direction::Inverse => self.counts.inverse += 1,
        }
        self.log.push(QueryRecord { direction, labels: labels.to_vec() });
        Ok(())
    }

    /// The oracle as a dense `2^λ × 2^λ` unitary (first label most significant).
    pub fn dense_matrix(&self) -> Result<CMatrix> {
        let dim = 1usize << self.qubits;
        if self.qubits > MAX_DENSE_QUBITS {
            return Err(Error::Resource(format!(
                "cannot expand a {}-qubit oracle densely",
                self.qubits
            )));
        }
        Ok(match &self.repr {
            Representation::Dense { forward, .. } => forward.clone(),
            Representation::Identity => CMatrix::identity(dim, dim),
            Representation::XorTable(table) => {
                let perm = self.xor_permutation(table);
                let mut m = CMatrix::zeros(dim, dim);
                for (r, &p) in perm.iter().enumerate() {
                    m[(p, r)] = linalg::ONE;
                }
                m
            }
            Representation::Circuit(gates) => {
                let mut m = CMatrix::identity(dim, dim);
                for g in gates {
                    let shift_a = self.qubits - 1 - g.first;
                    let shift_b = self.qubits - 1 - g.second;
                    let mask = (1usize << shift_a) | (1usize << shift_b);
                    let idx = |base: usize, k: usize| base | (((k >> 1) & 1) << shift_a) | ((k & 1) << shift_b);
                    for col in 0..dim {
                        for base in 0..dim {
                            if base & mask != 0 {
                                continue;
                            }
                            let v: Vec<C64> = (0..4).map(|k| m[(idx(base, k), col)]).collect();
                            let w = linalg::mat_vec(&g.matrix, &v);
                            for (k, x) in w.into_iter().enumerate() {
                                m[(idx(base, k), col)] = x;
                            }
                        }
                    }
                }
                m
            }
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Estimate { mean, stderr: (var / n).sqrt() }
    }
}

/// Monte Carlo moments of an oracle ensemble, with the Haar reference values.
#[derive(Clone, Debug, Serialize)]
pub struct HaarStatistics {
    pub kind: OracleKind,
    pub qubits: usize,
    pub samples: usize,
    /// `|U_00|²`; Haar value `1/d`.
    pub abs_sq: Estimate,
    /// `|U_00|⁴`; Haar value `2/(d(d+1))`.
    pub abs_fourth: Estimate,
    pub max_unitarity_defect: f64,
    /// `|Tr(U†V)|⁴` over independent pairs; Haar value 2.
    pub frame_potential: Option<Estimate>,
    pub haar_abs_sq: f64,
    pub haar_abs_fourth: f64,
    pub haar_frame_potential: f64,
}

/// Samples `samples` oracles of `kind` on `qubits` qubits and reports moment estimates.
pub fn haar_statistics(kind: OracleKind, qubits: usize, samples: usize, seed: u64) -> Result<HaarStatistics> {
    if samples < 100 {
        return Err(Error::Usage(format!("haar statistics need at least 100 samples, got {samples}")));
    }
    let mut abs_sq = Vec::with_capacity(samples);
    let mut abs4 = Vec::with_capacity(samples);
    let mut defect = 0.0f64;
    let mut frame = Vec::with_capacity(samples / 2);
    let mut previous: Option<CMatrix> = None;
    for s in 0..samples as u64 {
        let u = OracleHandle::with_qubits(kind, qubits, seeds::derive(seed, s, Stream::Oracle))?.dense_matrix()?;
        let p = u[(0, 0)].norm_sqr();
        abs_sq.push(p);
        abs4.push(p * p);
        defect = defect.max(linalg::unitarity_defect(&u));
        match previous.take() {
            None => previous = Some(u),
            Some(v) => frame.push(linalg::trace(&(v.adjoint() * &u)).norm().powi(4)),
        }
    }
    let d = (1usize << qubits) as f64;
    Ok(HaarStatistics {
        kind,
        qubits,
        samples,
        abs_sq: Estimate::from_samples(&abs_sq),
        abs_fourth: Estimate::from_samples(&abs4),
        max_unitarity_defect: defect,
        frame_potential: (frame.len() > 1).then(|| Estimate::from_samples(&frame)),
        haar_abs_sq: 1.0 / d,
        haar_abs_fourth: 2.0 / (d * (d + 1.0)),
        haar_frame_potential: 2.0,
    })
}
