//! Statevector engine over dynamically allocated, labeled qubits.
//!
//! All parties' registers live in one [`QuantumSystem`]; "sending" a register
//! only changes its owner. Internally the state is kept as a tensor product of
//! entangled blocks. A gate that spans several blocks merges them first, and
//! any qubit left in an exact computational basis state (for example after a
//! measurement) is split back out into its own block. The qubit cap bounds the
//! size of the largest entangled block, which is what bounds memory.
//!
//! Matrix convention: for a label list `[l0, l1, ..., l(t-1)]`, `l0` is the
//! most significant bit of the row/column index.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, C64, ONE, ZERO};
use crate::EXACT_TOL;

pub const DEFAULT_QUBIT_CAP: usize = 20;

/// Opaque handle to one live qubit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct QubitLabel(u32);

impl QubitLabel {
    pub fn id(self) -> u32 {
        self.0
    }
}

impl std::fmt::Display for QubitLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "q{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Party {
    Prover,
    Verifier,
}

#[derive(Clone, Debug)]
struct Block {
    /// `labels[p]` is bit `p` (least significant first) of an amplitude index.
    labels: Vec<QubitLabel>,
    amps: Vec<C64>,
}

impl Block {
    fn basis(label: QubitLabel, one: bool) -> Self {
        let amps = if one { vec![ZERO, ONE] } else { vec![ONE, ZERO] };
        Block { labels: vec![label], amps }
    }

    fn position(&self, label: QubitLabel) -> usize {
        self.labels
            .iter()
            .position(|&l| l == label)
            .expect("label registered in this block")
    }

    fn positions(&self, labels: &[QubitLabel]) -> Vec<usize> {
        labels.iter().map(|&l| self.position(l)).collect()
    }

    fn norm_sqr(&self) -> f64 {
        linalg::norm_sqr(&self.amps)
    }

    /// `self` occupies the low bits, `other` the high bits.
    fn tensor(&self, other: &Block) -> Block {
        let mut amps = Vec::with_capacity(self.amps.len() * other.amps.len());
        for &hi in &other.amps {
            for &lo in &self.amps {
                amps.push(lo * hi);
            }
        }
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Block { labels, amps }
    }
}

/// Index offsets of the `2^t` gate basis states for target bit positions
/// `pos` (first position is the most significant gate bit).
fn gate_offsets(pos: &[usize]) -> Vec<usize> {
    let t = pos.len();
    (0..1usize << t)
        .map(|r| {
            (0..t)
                .filter(|&j| (r >> (t - 1 - j)) & 1 == 1)
                .map(|j| 1usize << pos[j])
                .sum()
        })
        .collect()
}

/// `amps ← (M ⊗ I) amps` with `M` acting on bit positions `pos`.
fn apply_dense(amps: &mut [C64], pos: &[usize], m: &CMatrix) {
    let offsets = gate_offsets(pos);
    let dim = offsets.len();
    let mask = offsets[dim - 1];
    let data = m.as_slice();
    let mut input = vec![ZERO; dim];
    let mut output = vec![ZERO; dim];
    for base in 0..amps.len() {
        if base & mask != 0 {
            continue;
        }
        for (x, &off) in input.iter_mut().zip(&offsets) {
            *x = amps[base | off];
        }
        output.iter_mut().for_each(|o| *o = ZERO);
        for (c, &x) in input.iter().enumerate() {
            if x == ZERO {
                continue;
            }
            let col = &data[c * dim..(c + 1) * dim];
            for (o, &u) in output.iter_mut().zip(col) {
                *o += u * x;
            }
        }
        for (&y, &off) in output.iter().zip(&offsets) {
            amps[base | off] = y;
        }
    }
}

/// Gate-local index of the bits at `pos` within a full block index.
fn local_key(idx: usize, pos: &[usize]) -> usize {
    let t = pos.len();
    pos.iter()
        .enumerate()
        .fold(0, |acc, (j, &p)| acc | (((idx >> p) & 1) << (t - 1 - j)))
}

#[derive(Clone, Debug)]
struct QubitInfo {
    owner: Party,
    block: u64,
}

/// The joint state of every register in one protocol execution.
#[derive(Clone, Debug)]
pub struct QuantumSystem {
    cap: usize,
    next_label: u32,
    next_block: u64,
    order: Vec<QubitLabel>,
    qubits: BTreeMap<QubitLabel, QubitInfo>,
    blocks: BTreeMap<u64, Block>,
}

impl Default for QuantumSystem {
    fn default() -> Self {
        Self::new()
    }
}

impl QuantumSystem {
    pub fn new() -> Self {
        Self::with_cap(DEFAULT_QUBIT_CAP)
    }

    /// A system whose entangled blocks may hold at most `cap` qubits.
    pub fn with_cap(cap: usize) -> Self {
        QuantumSystem {
            cap,
            next_label: 0,
            next_block: 0,
            order: Vec::new(),
            qubits: BTreeMap::new(),
            blocks: BTreeMap::new(),
        }
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn num_qubits(&self) -> usize {
        self.order.len()
    }

    /// Live labels in allocation order.
    pub fn labels(&self) -> &[QubitLabel] {
        &self.order
    }

    pub fn owner(&self, label: QubitLabel) -> Result<Party> {
        self.qubits
            .get(&label)
            .map(|q| q.owner)
            .ok_or_else(|| Error::Usage(format!("{label} is not a live qubit")))
    }

    pub fn owned_by(&self, party: Party) -> BTreeSet<QubitLabel> {
        self.qubits
            .iter()
            .filter(|(_, q)| q.owner == party)
            .map(|(&l, _)| l)
            .collect()
    }

    /// Qubit counts of the entangled blocks, largest first.
    pub fn block_sizes(&self) -> Vec<usize> {
        let mut sizes: Vec<usize> = self.blocks.values().map(|b| b.labels.len()).collect();
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        sizes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.blocks.values().map(Block::norm_sqr).product()
    }

    fn fresh_label(&mut self, owner: Party) -> QubitLabel {
        let label = QubitLabel(self.next_label);
        self.next_label += 1;
        self.order.push(label);
        self.qubits.insert(label, QubitInfo { owner, block: u64::MAX });
        label
    }

    fn insert_block(&mut self, block: Block) -> u64 {
        let id = self.next_block;
        self.next_block += 1;
        for l in &block.labels {
            self.qubits.get_mut(l).expect("live label").block = id;
        }
        self.blocks.insert(id, block);
        id
    }

    /// Allocates `basis_init.len()` fresh qubits in the basis state `|basis_init⟩`.
    pub fn alloc_register(&mut self, basis_init: &[bool], owner: Party) -> Result<Vec<QubitLabel>> {
        let count = basis_init.len();
        if count == 0 {
            return Err(Error::Usage("cannot allocate an empty register".into()));
        }
        if count > self.cap {
            return Err(Error::Resource(format!(
                "register of {count} qubits exceeds the qubit cap {}",
                self.cap
            )));
        }
        let labels: Vec<_> = basis_init
            .iter()
            .map(|&bit| {
                let l = self.fresh_label(owner);
                self.insert_block(Block::basis(l, bit));
                l
            })
            .collect();
        Ok(labels)
    }

    pub fn alloc_zeros(&mut self, count: usize, owner: Party) -> Result<Vec<QubitLabel>> {
        self.alloc_register(&vec![false; count], owner)
    }

    /// Allocates a register holding the given unit-norm state vector.
    pub fn prepare_register(&mut self, amplitudes: &[C64], owner: Party) -> Result<Vec<QubitLabel>> {
        if !linalg::is_power_of_two(amplitudes.len()) || amplitudes.len() < 2 {
            return Err(Error::Usage(format!(
                "state vector length {} is not a power of two ≥ 2",
                amplitudes.len()
            )));
        }
        let count = amplitudes.len().trailing_zeros() as usize;
        if count > self.cap {
            return Err(Error::Resource(format!(
                "register of {count} qubits exceeds the qubit cap {}",
                self.cap
            )));
        }
        let n = linalg::norm_sqr(amplitudes);
        if (n - 1.0).abs() > EXACT_TOL {
            return Err(Error::Validation(format!("state has squared norm {n}, expected 1")));
        }
        let labels: Vec<_> = (0..count).map(|_| self.fresh_label(owner)).collect();
        // labels[0] is the most significant bit of the caller's vector.
        let block = Block {
            labels: labels.iter().rev().copied().collect(),
            amps: amplitudes.to_vec(),
        };
        let id = self.insert_block(block);
        self.split_basis_qubits(id);
        Ok(labels)
    }

    pub(crate) fn check_labels(&self, labels: &[QubitLabel]) -> Result<()> {
        if labels.is_empty() {
            return Err(Error::Usage("empty label list".into()));
        }
        let mut seen = BTreeSet::new();
        for &l in labels {
            if !self.qubits.contains_key(&l) {
                return Err(Error::Usage(format!("{l} is not a live qubit")));
            }
            if !seen.insert(l) {
                return Err(Error::Usage(format!("duplicate label {l}")));
            }
        }
        Ok(())
    }

    fn blocks_of(&self, labels: &[QubitLabel]) -> Vec<u64> {
        let mut ids = Vec::new();
        for l in labels {
            let b = self.qubits[l].block;
            if !ids.contains(&b) {
                ids.push(b);
            }
        }
        ids
    }

    /// Merges every block touched by `labels` into one and returns its id.
    fn merge_for(&mut self, labels: &[QubitLabel]) -> Result<u64> {
        let ids = self.blocks_of(labels);
        if ids.len() == 1 {
            return Ok(ids[0]);
        }
        let total: usize = ids.iter().map(|id| self.blocks[id].labels.len()).sum();
        if total > self.cap {
            return Err(Error::Resource(format!(
                "operation would entangle {total} qubits, above the qubit cap {}",
                self.cap
            )));
        }
        let mut merged = self.blocks.remove(&ids[0]).expect("block");
        for id in &ids[1..] {
            let next = self.blocks.remove(id).expect("block");
            merged = merged.tensor(&next);
        }
        Ok(self.insert_block(merged))
    }

    /// Temporary merged copy of the blocks touched by `labels`, without
    /// modifying the system.
    fn merged_copy(&self, labels: &[QubitLabel]) -> Block {
        let ids = self.blocks_of(labels);
        let mut merged = self.blocks[&ids[0]].clone();
        for id in &ids[1..] {
            merged = merged.tensor(&self.blocks[id]);
        }
        merged
    }

    /// Splits every qubit of a block that sits in an exact computational
    /// basis state into its own block.
    fn split_basis_qubits(&mut self, id: u64) {
        let mut block = match self.blocks.remove(&id) {
            Some(b) => b,
            None => return,
        };
        let mut split_off = Vec::new();
        let mut p = 0;
        while p < block.labels.len() && block.labels.len() > 1 {
            let bit = 1usize << p;
            let ones_zero = block.amps.iter().enumerate().all(|(i, a)| i & bit == 0 || *a == ZERO);
            let zeros_zero = block.amps.iter().enumerate().all(|(i, a)| i & bit != 0 || *a == ZERO);
            if ones_zero || zeros_zero {
                let keep = if ones_zero { 0 } else { bit };
                let amps: Vec<C64> = block
                    .amps
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| i & bit == keep)
                    .map(|(_, &a)| a)
                    .collect();
                let label = block.labels.remove(p);
                block.amps = amps;
                split_off.push(Block::basis(label, keep != 0));
            } else {
                p += 1;
            }
        }
        self.insert_block(block);
        for b in split_off {
            self.insert_block(b);
        }
    }

    /// Applies `U` (or `U†`) to the named qubits, in the given order.
    pub fn apply_unitary(&mut self, labels: &[QubitLabel], u: &CMatrix, dagger: bool) -> Result<()> {
        self.check_labels(labels)?;
        let dim = 1usize << labels.len();
        if u.shape() != (dim, dim) {
            return Err(Error::Usage(format!(
                "{}x{} matrix applied to {} qubits",
                u.nrows(),
                u.ncols(),
                labels.len()
            )));
        }
        let defect = linalg::unitarity_defect(u);
        if defect > EXACT_TOL {
            return Err(Error::Validation(format!("matrix is not unitary (defect {defect:.3e})")));
        }
        if dagger {
            self.apply_matrix_unchecked(labels, &u.adjoint())
        } else {
            self.apply_matrix_unchecked(labels, u)
        }
    }

    /// Applies a matrix known to be unitary; labels must already be valid.
    pub(crate) fn apply_matrix_unchecked(&mut self, labels: &[QubitLabel], m: &CMatrix) -> Result<()> {
        self.check_labels(labels)?;
        let id = self.merge_for(labels)?;
        let block = self.blocks.get_mut(&id).expect("block");
        let pos = block.positions(labels);
        apply_dense(&mut block.amps, &pos, m);
        self.split_basis_qubits(id);
        Ok(())
    }

    /// Applies the basis permutation `|r⟩ ↦ |perm[r]⟩` on the named qubits.
    pub fn apply_permutation(&mut self, labels: &[QubitLabel], perm: &[usize]) -> Result<()> {
        self.check_labels(labels)?;
        let dim = 1usize << labels.len();
        if perm.len() != dim {
            return Err(Error::Usage(format!("permutation of length {} on {} qubits", perm.len(), labels.len())));
        }
        let mut seen = vec![false; dim];
        for &p in perm {
            if p >= dim || std::mem::replace(&mut seen[p], true) {
                return Err(Error::Validation("table is not a permutation".into()));
            }
        }
        let id = self.merge_for(labels)?;
        let block = self.blocks.get_mut(&id).expect("block");
        let pos = block.positions(labels);
        let offsets = gate_offsets(&pos);
        let mask = offsets[dim - 1];
        let mut buf = vec![ZERO; dim];
        for base in 0..block.amps.len() {
            if base & mask != 0 {
                continue;
            }
            for (r, &off) in offsets.iter().enumerate() {
                buf[perm[r]] = block.amps[base | off];
            }
            for (&x, &off) in buf.iter().zip(&offsets) {
                block.amps[base | off] = x;
            }
        }
        self.split_basis_qubits(id);
        Ok(())
    }

    /// Applies the diagonal unitary `|r⟩ ↦ phases[r] |r⟩`.
    pub fn apply_diagonal(&mut self, labels: &[QubitLabel], phases: &[C64]) -> Result<()> {
        self.check_labels(labels)?;
        if phases.len() != 1usize << labels.len() {
            return Err(Error::Usage("diagonal length does not match qubit count".into()));
        }
        if phases.iter().any(|p| (p.norm() - 1.0).abs() > EXACT_TOL) {
            return Err(Error::Validation("diagonal entries must have unit modulus".into()));
        }
        let id = self.merge_for(labels)?;
        let block = self.blocks.get_mut(&id).expect("block");
        let pos = block.positions(labels);
        for (idx, a) in block.amps.iter_mut().enumerate() {
            *a *= phases[local_key(idx, &pos)];
        }
        Ok(())
    }

    /// Measures the named qubits in the computational basis. Bits are
    /// returned in label order; the qubits stay allocated in the collapsed state.
    pub fn measure_computational<R: Rng + ?Sized>(
        &mut self,
        labels: &[QubitLabel],
        rng: &mut R,
    ) -> Result<Vec<bool>> {
        self.check_labels(labels)?;
        let mut outcome: BTreeMap<QubitLabel, bool> = BTreeMap::new();
        for id in self.blocks_of(labels) {
            let block = self.blocks.get_mut(&id).expect("block");
            let mine: Vec<QubitLabel> = labels
                .iter()
                .copied()
                .filter(|l| block.labels.contains(l))
                .collect();
            let pos = block.positions(&mine);
            let mut probs = vec![0.0f64; 1 << mine.len()];
            for (idx, a) in block.amps.iter().enumerate() {
                probs[local_key(idx, &pos)] += a.norm_sqr();
            }
            let total: f64 = probs.iter().sum();
            let mut r = rng.random::<f64>() * total;
            let mut chosen = probs.len() - 1;
            for (k, &p) in probs.iter().enumerate() {
                if r < p {
                    chosen = k;
                    break;
                }
                r -= p;
            }
            // never select an outcome of probability zero through round-off
            if probs[chosen] == 0.0 {
                chosen = probs
                    .iter()
                    .enumerate()
                    .rev()
                    .find(|(_, &p)| p > 0.0)
                    .map(|(k, _)| k)
                    .expect("normalized block");
            }
            let scale = probs[chosen].sqrt();
            for (idx, a) in block.amps.iter_mut().enumerate() {
                if local_key(idx, &pos) == chosen {
                    *a /= scale;
                } else {
                    *a = ZERO;
                }
            }
            let t = mine.len();
            for (j, l) in mine.iter().enumerate() {
                outcome.insert(*l, (chosen >> (t - 1 - j)) & 1 == 1);
            }
            self.split_basis_qubits(id);
        }
        Ok(labels.iter().map(|l| outcome[l]).collect())
    }

    /// Reject probability `Tr(E ρ)` of the two-outcome POVM `{E, I − E}`.
    pub fn effect_probability(&self, labels: &[QubitLabel], effect: &CMatrix) -> Result<f64> {
        self.check_labels(labels)?;
        validate_effect(effect, labels.len())?;
        let block = self.merged_copy(labels);
        let pos = block.positions(labels);
        Ok(expectation(&block.amps, &pos, effect))
    }

    /// Measures `{E, I − E}` on the named qubits; returns `true` for the
    /// accept outcome `I − E`. The post-measurement state is
    /// `√F ρ √F / Tr(F ρ)` for the observed effect `F`.
    pub fn measure_povm_accept<R: Rng + ?Sized>(
        &mut self,
        labels: &[QubitLabel],
        effect: &CMatrix,
        rng: &mut R,
    ) -> Result<bool> {
        self.check_labels(labels)?;
        validate_effect(effect, labels.len())?;
        let id = self.merge_for(labels)?;
        let block = self.blocks.get_mut(&id).expect("block");
        let pos = block.positions(labels);
        let p_reject = expectation(&block.amps, &pos, effect).clamp(0.0, 1.0);
        let reject = rng.random::<f64>() < p_reject;
        let observed = if reject {
            effect.clone()
        } else {
            CMatrix::identity(effect.nrows(), effect.ncols()) - effect
        };
        apply_dense(&mut block.amps, &pos, &linalg::psd_sqrt(&observed));
        linalg::normalize(&mut block.amps);
        self.split_basis_qubits(id);
        Ok(!reject)
    }

    /// Probability that measuring `labels` yields `bits`.
    pub fn probability_of(&self, labels: &[QubitLabel], bits: &[bool]) -> Result<f64> {
        self.check_labels(labels)?;
        if bits.len() != labels.len() {
            return Err(Error::Usage("bit string length does not match labels".into()));
        }
        let target = bits.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize);
        let block = self.merged_copy(labels);
        let pos = block.positions(labels);
        Ok(block
            .amps
            .iter()
            .enumerate()
            .filter(|(i, _)| local_key(*i, &pos) == target)
            .map(|(_, a)| a.norm_sqr())
            .sum())
    }

    /// Partial trace onto `labels` (first label most significant).
    pub fn reduced_density(&self, labels: &[QubitLabel]) -> Result<DensityMatrix> {
        self.check_labels(labels)?;
        let block = self.merged_copy(labels);
        let pos = block.positions(labels);
        let offsets = gate_offsets(&pos);
        let dim = offsets.len();
        let mask = offsets[dim - 1];
        let mut rho = CMatrix::zeros(dim, dim);
        let mut v = vec![ZERO; dim];
        for base in 0..block.amps.len() {
            if base & mask != 0 {
                continue;
            }
            for (x, &off) in v.iter_mut().zip(&offsets) {
                *x = block.amps[base | off];
            }
            for c in 0..dim {
                let vc = v[c].conj();
                if vc == ZERO {
                    continue;
                }
                for r in 0..dim {
                    rho[(r, c)] += v[r] * vc;
                }
            }
        }
        Ok(DensityMatrix { matrix: rho, qubits: labels.len() })
    }

    /// The pure state of exactly the given labels, which must form a union
    /// of entangled blocks (first label most significant).
    pub fn state_vector(&self, labels: &[QubitLabel]) -> Result<Vec<C64>> {
        self.check_labels(labels)?;
        let block = self.merged_copy(labels);
        if block.labels.len() != labels.len() {
            return Err(Error::Usage(
                "labels are entangled with qubits outside the requested set".into(),
            ));
        }
        let pos = block.positions(labels);
        let mut out = vec![ZERO; block.amps.len()];
        for (idx, &a) in block.amps.iter().enumerate() {
            out[local_key(idx, &pos)] = a;
        }
        Ok(out)
    }

    /// Full state over all live labels in allocation order.
    pub fn amplitudes(&self) -> Result<Vec<C64>> {
        if self.order.len() > self.cap.max(24) {
            return Err(Error::Resource(format!(
                "materializing {} qubits exceeds the dense limit",
                self.order.len()
            )));
        }
        let labels = self.order.clone();
        self.state_vector(&labels)
    }

    /// Reassigns ownership of `labels` from `from` to `to`.
    pub fn transfer_ownership(&mut self, labels: &[QubitLabel], from: Party, to: Party) -> Result<()> {
        self.check_labels(labels)?;
        if let Some(l) = labels.iter().find(|l| self.qubits[*l].owner != from) {
            return Err(Error::ProtocolViolation(format!(
                "{from:?} tried to send {l}, which it does not hold"
            )));
        }
        for l in labels {
            self.qubits.get_mut(l).expect("live").owner = to;
        }
        Ok(())
    }
}

fn validate_effect(effect: &CMatrix, qubits: usize) -> Result<()> {
    let dim = 1usize << qubits;
    if effect.shape() != (dim, dim) {
        return Err(Error::Usage(format!("effect of shape {:?} on {qubits} qubits", effect.shape())));
    }
    if linalg::hermiticity_defect(effect) > EXACT_TOL {
        return Err(Error::Validation("POVM effect is not Hermitian".into()));
    }
    let eig = linalg::hermitian_eigenvalues(effect);
    let (lo, hi) = (eig[0], eig[eig.len() - 1]);
    if lo < -EXACT_TOL || hi > 1.0 + EXACT_TOL {
        return Err(Error::Validation(format!(
            "POVM effect eigenvalues [{lo}, {hi}] outside [0, 1]"
        )));
    }
    Ok(())
}

fn expectation(amps: &[C64], pos: &[usize], op: &CMatrix) -> f64 {
    let mut applied = amps.to_vec();
    apply_dense(&mut applied, pos, op);
    linalg::inner(amps, &applied).re
}

/// A mixed state on `qubits` qubits.
#[derive(Clone, Debug)]
pub struct DensityMatrix {
    matrix: CMatrix,
    qubits: usize,
}

impl DensityMatrix {
    /// Validates Hermiticity, unit trace and positivity within tolerance.
    pub fn new(matrix: CMatrix) -> Result<Self> {
        if !matrix.is_square() || !linalg::is_power_of_two(matrix.nrows()) {
            return Err(Error::Usage("density matrix must be 2^r x 2^r".into()));
        }
        if linalg::hermiticity_defect(&matrix) > EXACT_TOL {
            return Err(Error::Validation("density matrix is not Hermitian".into()));
        }
        let tr = linalg::trace(&matrix);
        if (tr - ONE).norm() > EXACT_TOL {
            return Err(Error::Validation(format!("density matrix has trace {tr}")));
        }
        if linalg::hermitian_eigenvalues(&matrix)[0] < -EXACT_TOL {
            return Err(Error::Validation("density matrix is not positive semidefinite".into()));
        }
        let qubits = matrix.nrows().trailing_zeros() as usize;
        Ok(DensityMatrix { matrix, qubits })
    }

    pub fn from_pure(state: &[C64]) -> Result<Self> {
        Self::new(linalg::outer(state))
    }

    pub fn maximally_mixed(qubits: usize) -> Self {
        let dim = 1usize << qubits;
        DensityMatrix {
            matrix: CMatrix::identity(dim, dim).map(|z| z / dim as f64),
            qubits,
        }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn qubits(&self) -> usize {
        self.qubits
    }

    pub fn purity(&self) -> f64 {
        linalg::trace(&(&self.matrix * &self.matrix)).re
    }

    /// `Tr(O ρ)` for an operator on the same qubits.
    pub fn expectation(&self, op: &CMatrix) -> Result<C64> {
        if op.shape() != self.matrix.shape() {
            return Err(Error::Usage("operator dimension mismatch".into()));
        }
        Ok(linalg::trace(&(op * &self.matrix)))
    }

    /// Traces out the qubit at `position` (0 is the most significant).
    pub fn partial_trace_qubit(&self, position: usize) -> Result<DensityMatrix> {
        if position >= self.qubits || self.qubits == 1 {
            return Err(Error::Usage(format!("cannot trace qubit {position} of {}", self.qubits)));
        }
        let shift = self.qubits - 1 - position;
        let low = (1usize << shift) - 1;
        let dim = 1usize << (self.qubits - 1);
        let expand = |k: usize, bit: usize| ((k & !low) << 1) | (bit << shift) | (k & low);
        let m = CMatrix::from_fn(dim, dim, |r, c| {
            (0..2).map(|b| self.matrix[(expand(r, b), expand(c, b))]).sum()
        });
        Ok(DensityMatrix { matrix: m, qubits: self.qubits - 1 })
    }
}

/// Uhlmann fidelity `(Tr √(√ρ σ √ρ))²`, clamped to `[0, 1]`.
pub fn fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    if rho.qubits != sigma.qubits {
        return Err(Error::Usage("fidelity of states with different dimensions".into()));
    }
    let s = linalg::psd_sqrt(&rho.matrix);
    let inner = &s * &sigma.matrix * &s;
    let root: f64 = linalg::hermitian_eigenvalues(&inner)
        .into_iter()
        .map(|x| x.max(0.0).sqrt())
        .sum();
    Ok((root * root).clamp(0.0, 1.0))
}

/// Trace distance `½‖ρ − σ‖₁`, clamped to `[0, 1]`.
pub fn trace_distance(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    if rho.qubits != sigma.qubits {
        return Err(Error::Usage("trace distance of states with different dimensions".into()));
    }
    let diff = &rho.matrix - &sigma.matrix;
    let total: f64 = linalg::hermitian_eigenvalues(&diff).into_iter().map(f64::abs).sum();
    Ok((0.5 * total).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use crate::linalg::gates;
    use crate::oracle::sample_haar_unitary;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const H: f64 = std::f64::consts::FRAC_1_SQRT_2;

    fn plus() -> Vec<C64> {
        vec![C64::new(H, 0.0), C64::new(H, 0.0)]
    }

    fn bell() -> Vec<C64> {
        vec![C64::new(H, 0.0), ZERO, ZERO, C64::new(H, 0.0)]
    }

    #[test]
    fn alloc_basis_state() {
        let mut sys = QuantumSystem::new();
        let l = sys.alloc_register(&[false, false], Party::Prover).unwrap();
        assert_eq!(l.len(), 2);
        let amps = sys.amplitudes().unwrap();
        assert_eq!(amps[0], ONE);
        assert!((sys.norm_sqr() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn alloc_next_to_existing_state() {
        let mut sys = QuantumSystem::new();
        let a = sys.prepare_register(&plus(), Party::Prover).unwrap();
        let before = sys.reduced_density(&a).unwrap();
        sys.alloc_zeros(1, Party::Prover).unwrap();
        let after = sys.reduced_density(&a).unwrap();
        assert!(trace_distance(&before, &after).unwrap() < 1e-12);
        let amps = sys.amplitudes().unwrap();
        assert!((amps[0].re - H).abs() < 1e-12 && (amps[2].re - H).abs() < 1e-12);
    }

    #[test]
    fn alloc_beyond_cap_is_resource_error() {
        let mut sys = QuantumSystem::new();
        let err = sys.alloc_zeros(21, Party::Prover).unwrap_err();
        assert!(matches!(err, Error::Resource(_)));
    }

    #[test]
    fn merging_beyond_cap_is_resource_error() {
        let mut sys = QuantumSystem::with_cap(3);
        let a = sys.alloc_zeros(2, Party::Prover).unwrap();
        let b = sys.alloc_zeros(2, Party::Prover).unwrap();
        let h = gates::hadamard();
        sys.apply_unitary(&a[..1], &h, false).unwrap();
        sys.apply_unitary(&[a[0], a[1]], &gates::cnot(), false).unwrap();
        sys.apply_unitary(&[b[0]], &h, false).unwrap();
        sys.apply_unitary(&[b[0], b[1]], &gates::cnot(), false).unwrap();
        assert_eq!(sys.block_sizes().iter().max(), Some(&2));
        let err = sys.apply_unitary(&[a[1], b[0]], &gates::cnot(), false).unwrap_err();
        assert!(matches!(err, Error::Resource(_)));
    }

    #[test]
    fn identity_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut sys = QuantumSystem::new();
        let l = sys.prepare_register(&linalg::random_state(8, &mut rng), Party::Prover).unwrap();
        let before = sys.amplitudes().unwrap();
        sys.apply_unitary(&l, &CMatrix::identity(8, 8), false).unwrap();
        assert_eq!(before, sys.amplitudes().unwrap());
    }

    #[test]
    fn swap_moves_excitation() {
        let mut sys = QuantumSystem::new();
        let l = sys.alloc_register(&[false, true], Party::Prover).unwrap();
        sys.apply_unitary(&l, &gates::swap(), false).unwrap();
        assert_eq!(sys.probability_of(&l, &[true, false]).unwrap(), 1.0);
    }

    #[test]
    fn rejects_bad_gates() {
        let mut sys = QuantumSystem::new();
        let l = sys.alloc_zeros(2, Party::Prover).unwrap();
        let bad = CMatrix::identity(2, 2).map(|z| z * 2.0);
        assert!(matches!(sys.apply_unitary(&l[..1], &bad, false), Err(Error::Validation(_))));
        assert!(matches!(
            sys.apply_unitary(&[l[0], l[0]], &gates::cnot(), false),
            Err(Error::Usage(_))
        ));
        assert!(matches!(
            sys.apply_unitary(&[QubitLabel(99)], &gates::hadamard(), false),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn measure_basis_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut sys = QuantumSystem::new();
        let l = sys.alloc_zeros(3, Party::Prover).unwrap();
        assert_eq!(sys.measure_computational(&l, &mut rng).unwrap(), vec![false; 3]);
    }

    #[test]
    fn born_rule_on_plus() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let trials = 10_000;
        let mut ones = 0;
        for _ in 0..trials {
            let mut sys = QuantumSystem::new();
            let l = sys.prepare_register(&plus(), Party::Prover).unwrap();
            ones += sys.measure_computational(&l, &mut rng).unwrap()[0] as usize;
        }
        let p = ones as f64 / trials as f64;
        let se = (0.25f64 / trials as f64).sqrt();
        assert!((p - 0.5).abs() <= 3.0 * se, "p = {p}");
    }

    #[test]
    fn bell_pair_is_perfectly_correlated() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let mut sys = QuantumSystem::new();
            let l = sys.prepare_register(&bell(), Party::Prover).unwrap();
            let a = sys.measure_computational(&l[..1], &mut rng).unwrap();
            let b = sys.measure_computational(&l[1..], &mut rng).unwrap();
            assert_eq!(a, b);
            assert_eq!(sys.block_sizes(), vec![1, 1]);
        }
    }

    #[test]
    fn povm_orthogonal_effect_accepts() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut sys = QuantumSystem::new();
        let l = sys.alloc_zeros(1, Party::Verifier).unwrap();
        let e = linalg::outer(&[ZERO, ONE]);
        for _ in 0..100 {
            assert!(sys.measure_povm_accept(&l, &e, &mut rng).unwrap());
        }
    }

    #[test]
    fn povm_on_plus_is_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let e = linalg::outer(&[ZERO, ONE]);
        let trials = 10_000;
        let mut acc = 0;
        for _ in 0..trials {
            let mut sys = QuantumSystem::new();
            let l = sys.prepare_register(&plus(), Party::Verifier).unwrap();
            acc += sys.measure_povm_accept(&l, &e, &mut rng).unwrap() as usize;
        }
        let p = acc as f64 / trials as f64;
        assert!((p - 0.5).abs() <= 3.0 * (0.25f64 / trials as f64).sqrt(), "p = {p}");
    }

    #[test]
    fn povm_rate_matches_dense_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        // random effect 0 ≤ E ≤ I: E = V diag(u) V† with u uniform in [0,1]
        let v = sample_haar_unitary(4, &mut rng).unwrap();
        let d: Vec<C64> = (0..4).map(|_| C64::new(rng.random::<f64>(), 0.0)).collect();
        let e = &v * CMatrix::from_diagonal(&nalgebra::DVector::from_vec(d)) * v.adjoint();
        // random mixed state on 2 qubits: reduced state of a 3-qubit pure state
        let psi = linalg::random_state(8, &mut rng);
        let mut probe = QuantumSystem::new();
        let l = probe.prepare_register(&psi, Party::Verifier).unwrap();
        let rho = probe.reduced_density(&l[..2]).unwrap();
        let expected_accept = 1.0 - linalg::trace(&(&e * rho.matrix())).re;
        let trials = 10_000;
        let mut acc = 0;
        for _ in 0..trials {
            let mut sys = QuantumSystem::new();
            let l = sys.prepare_register(&psi, Party::Verifier).unwrap();
            acc += sys.measure_povm_accept(&l[..2], &e, &mut rng).unwrap() as usize;
        }
        let p = acc as f64 / trials as f64;
        let se = (expected_accept * (1.0 - expected_accept) / trials as f64).sqrt();
        assert!((p - expected_accept).abs() <= 4.0 * se, "{p} vs {expected_accept}");
    }

    #[test]
    fn povm_rejects_out_of_range_effect() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut sys = QuantumSystem::new();
        let l = sys.alloc_zeros(1, Party::Verifier).unwrap();
        let e = CMatrix::identity(2, 2).map(|z| z * 1.5);
        assert!(matches!(sys.measure_povm_accept(&l, &e, &mut rng), Err(Error::Validation(_))));
    }

    #[test]
    fn bell_reduced_states_are_maximally_mixed() {
        let mut sys = QuantumSystem::new();
        let l = sys.prepare_register(&bell(), Party::Prover).unwrap();
        let mixed = DensityMatrix::maximally_mixed(1);
        for q in &l {
            let rho = sys.reduced_density(&[*q]).unwrap();
            assert!(trace_distance(&rho, &mixed).unwrap() < 1e-9);
        }
    }

    #[test]
    fn product_reduced_state_is_pure() {
        let mut sys = QuantumSystem::new();
        let mut state = plus();
        state.extend(plus());
        let s: Vec<C64> = (0..4).map(|i| state[i >> 1] * state[2 + (i & 1)]).collect();
        let l = sys.prepare_register(&s, Party::Prover).unwrap();
        let rho = sys.reduced_density(&l[..1]).unwrap();
        assert!((rho.purity() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sequential_partial_trace_matches_joint() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut sys = QuantumSystem::new();
        let l = sys.prepare_register(&linalg::random_state(8, &mut rng), Party::Prover).unwrap();
        let full = sys.reduced_density(&l).unwrap();
        let two_steps = full.partial_trace_qubit(2).unwrap().partial_trace_qubit(1).unwrap();
        let direct = sys.reduced_density(&l[..1]).unwrap();
        assert!((two_steps.matrix() - direct.matrix()).iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn fidelity_and_distance_examples() {
        let zero = DensityMatrix::from_pure(&[ONE, ZERO]).unwrap();
        let one = DensityMatrix::from_pure(&[ZERO, ONE]).unwrap();
        let p = DensityMatrix::from_pure(&plus()).unwrap();
        assert!((fidelity(&zero, &zero).unwrap() - 1.0).abs() < 1e-9);
        assert!(trace_distance(&zero, &zero).unwrap() < 1e-12);
        assert!(fidelity(&zero, &one).unwrap() < 1e-12);
        assert!((trace_distance(&zero, &one).unwrap() - 1.0).abs() < 1e-12);
        // 2x2 analytic: F = |⟨0|+⟩|² = 1/2, T = √(1 − F) for pure states
        assert!((fidelity(&zero, &p).unwrap() - 0.5).abs() < 1e-9);
        assert!((trace_distance(&zero, &p).unwrap() - 0.5f64.sqrt()).abs() < 1e-9);
        let two = DensityMatrix::maximally_mixed(2);
        assert!(fidelity(&zero, &two).is_err());
    }

    #[test]
    fn ownership_transfers_once() {
        let mut sys = QuantumSystem::new();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let l = sys.prepare_register(&linalg::random_state(4, &mut rng), Party::Prover).unwrap();
        let before = sys.amplitudes().unwrap();
        sys.transfer_ownership(&l, Party::Prover, Party::Verifier).unwrap();
        assert_eq!(before, sys.amplitudes().unwrap());
        assert_eq!(sys.owned_by(Party::Verifier).len(), 2);
        let err = sys.transfer_ownership(&l, Party::Prover, Party::Verifier).unwrap_err();
        assert!(matches!(err, Error::ProtocolViolation(_)));
    }

    #[test]
    fn density_matrix_validation() {
        let bad = CMatrix::identity(2, 2);
        assert!(matches!(DensityMatrix::new(bad), Err(Error::Validation(_))));
    }

    fn arb_state(qubits: usize) -> impl Strategy<Value = Vec<C64>> {
        any::<u64>().prop_map(move |s| linalg::random_state(1 << qubits, &mut ChaCha8Rng::seed_from_u64(s)))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn unitary_then_dagger_restores(state in arb_state(5), seed in any::<u64>(), t in 1usize..=5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut sys = QuantumSystem::new();
            let l = sys.prepare_register(&state, Party::Prover).unwrap();
            let u = sample_haar_unitary(1 << t, &mut rng).unwrap();
            let targets: Vec<_> = l.iter().rev().take(t).copied().collect();
            sys.apply_unitary(&targets, &u, false).unwrap();
            prop_assert!((sys.norm_sqr() - 1.0).abs() < 1e-9);
            sys.apply_unitary(&targets, &u, true).unwrap();
            let after = sys.state_vector(&l).unwrap();
            for (a, b) in after.iter().zip(&state) {
                prop_assert!((a - b).norm() < 1e-9);
            }
        }

        #[test]
        fn partial_traces_compose(state in arb_state(4), first in 0usize..4, second in 0usize..3) {
            let mut sys = QuantumSystem::new();
            let l = sys.prepare_register(&state, Party::Prover).unwrap();
            let full = sys.reduced_density(&l).unwrap();
            let stepwise = full.partial_trace_qubit(first).unwrap().partial_trace_qubit(second).unwrap();
            let mut kept: Vec<QubitLabel> = l.clone();
            kept.remove(first);
            kept.remove(second);
            let direct = sys.reduced_density(&kept).unwrap();
            for (a, b) in stepwise.matrix().iter().zip(direct.matrix().iter()) {
                prop_assert!((a - b).norm() < 1e-9);
            }
            let rho = DensityMatrix::new(direct.matrix().clone());
            prop_assert!(rho.is_ok());
        }

        #[test]
        fn born_frequencies_follow_reduced_state(state in arb_state(3), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut probe = QuantumSystem::new();
            let l = probe.prepare_register(&state, Party::Prover).unwrap();
            let p1 = probe.reduced_density(&l[1..2]).unwrap().matrix()[(1, 1)].re;
            let trials = 2_000;
            let mut ones = 0;
            for _ in 0..trials {
                let mut sys = QuantumSystem::new();
                let l = sys.prepare_register(&state, Party::Prover).unwrap();
                ones += sys.measure_computational(&l[1..2], &mut rng).unwrap()[0] as usize;
            }
            let se = (p1 * (1.0 - p1) / trials as f64).sqrt().max(1e-3);
            prop_assert!((ones as f64 / trials as f64 - p1).abs() <= 4.0 * se + 1e-3);
        }
    }
}
