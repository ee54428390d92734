//! The quantum Merkle tree.
//!
//! Nodes of the perfect binary tree with `ℓ = 2^d` leaves are numbered from
//! the root (`1`) breadth first, so `parent(u) = ⌊u/2⌋` and the children of an
//! internal node `u < ℓ` are `2u` and `2u + 1`. Leaves are `ℓ..=2ℓ-1`, and
//! block `j` of the payload (qubits `(j-1)b+1 ..= jb`) sits on leaf `ℓ+j-1`.
//!
//! Committing walks the internal nodes from `ℓ-1` down to the root, allocating
//! a fresh `|0^b⟩` register at each and querying `G` on
//! (left child, right child, node). Opening a node set `S` undoes exactly the
//! gates on the internal ancestors of `S`, root first, checking each freshly
//! uncomputed register against `0^b`.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::oracle::{Direction, OracleHandle};
use crate::qstate::{QuantumSystem, QubitLabel};

pub type Node = usize;

/// Geometry of the tree: block size `b` and leaf count `ℓ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TreeShape {
    b: usize,
    ell: usize,
}

impl TreeShape {
    pub fn new(b: usize, ell: usize) -> Result<Self> {
        if b == 0 {
            return Err(Error::Usage("block size must be positive".into()));
        }
        if ell < 2 || !linalg::is_power_of_two(ell) {
            return Err(Error::Usage(format!("leaf count {ell} must be a power of two ≥ 2")));
        }
        Ok(TreeShape { b, ell })
    }

    /// Smallest tree holding `payload_qubits` qubits in blocks of `b`.
    pub fn covering(b: usize, payload_qubits: usize) -> Result<Self> {
        if b == 0 {
            return Err(Error::Usage("block size must be positive".into()));
        }
        let blocks = payload_qubits.div_ceil(b).max(2);
        Self::new(b, blocks.next_power_of_two())
    }

    pub fn block_size(&self) -> usize {
        self.b
    }

    pub fn leaves(&self) -> usize {
        self.ell
    }

    pub fn depth(&self) -> usize {
        self.ell.trailing_zeros() as usize
    }

    pub fn payload_qubits(&self) -> usize {
        self.b * self.ell
    }

    pub fn node_count(&self) -> usize {
        2 * self.ell - 1
    }

    pub fn oracle_qubits(&self) -> usize {
        3 * self.b
    }

    pub fn is_leaf(&self, u: Node) -> bool {
        u >= self.ell && u < 2 * self.ell
    }

    pub fn leaf_nodes(&self) -> BTreeSet<Node> {
        (self.ell..2 * self.ell).collect()
    }

    /// Leaf holding payload qubit `q` (1-indexed) and its offset in the block.
    pub fn locate_qubit(&self, q: usize) -> Result<(Node, usize)> {
        if q == 0 || q > self.payload_qubits() {
            return Err(Error::Usage(format!(
                "qubit index {q} outside [1, {}]",
                self.payload_qubits()
            )));
        }
        Ok((self.ell + (q - 1) / self.b, (q - 1) % self.b))
    }
}

fn check_node(u: Node, ell: usize) -> Result<()> {
    if !linalg::is_power_of_two(ell) {
        return Err(Error::Usage(format!("leaf count {ell} is not a power of two")));
    }
    if u == 0 || u >= 2 * ell {
        return Err(Error::Usage(format!("node {u} outside [1, {}]", 2 * ell - 1)));
    }
    Ok(())
}

/// `P_u`: the node itself and all of its ancestors.
pub fn ancestors(u: Node, ell: usize) -> Result<BTreeSet<Node>> {
    check_node(u, ell)?;
    let mut out = BTreeSet::new();
    let mut v = u;
    while v >= 1 {
        out.insert(v);
        v /= 2;
    }
    Ok(out)
}

/// `R_S`: every node on a root path of `S`, plus every child of such a node.
pub fn frontier(nodes: &BTreeSet<Node>, ell: usize) -> Result<BTreeSet<Node>> {
    if nodes.is_empty() {
        return Err(Error::Usage("frontier of an empty node set".into()));
    }
    let mut paths = BTreeSet::new();
    for &u in nodes {
        paths.extend(ancestors(u, ell)?);
    }
    Ok((1..2 * ell).filter(|v| paths.contains(v) || (*v > 1 && paths.contains(&(v / 2)))).collect())
}

/// Internal nodes on the root paths of `S`; these are the gates undone on opening.
pub fn internal_ancestors(nodes: &BTreeSet<Node>, ell: usize) -> Result<BTreeSet<Node>> {
    let mut out = BTreeSet::new();
    for &u in nodes {
        out.extend(ancestors(u, ell)?.into_iter().filter(|&v| v < ell));
    }
    Ok(out)
}

/// `W`: the leaves holding the given 1-indexed payload qubits.
pub fn leaves_for_qubits(qubits: &[usize], b: usize, ell: usize) -> Result<BTreeSet<Node>> {
    let shape = TreeShape::new(b, ell)?;
    qubits.iter().map(|&q| shape.locate_qubit(q).map(|(leaf, _)| leaf)).collect()
}

/// Tree geometry together with the qubit register assigned to each node.
#[derive(Clone, Debug)]
pub struct MerkleLayout {
    shape: TreeShape,
    registers: BTreeMap<Node, Vec<QubitLabel>>,
}

impl MerkleLayout {
    pub fn shape(&self) -> TreeShape {
        self.shape
    }

    pub fn register(&self, u: Node) -> Option<&[QubitLabel]> {
        self.registers.get(&u).map(Vec::as_slice)
    }

    pub fn registers(&self) -> &BTreeMap<Node, Vec<QubitLabel>> {
        &self.registers
    }

    /// Node-to-register map restricted to `nodes`; missing nodes are skipped.
    pub fn restrict(&self, nodes: &BTreeSet<Node>) -> BTreeMap<Node, Vec<QubitLabel>> {
        nodes
            .iter()
            .filter_map(|u| self.registers.get(u).map(|r| (*u, r.clone())))
            .collect()
    }

    /// Concatenated labels of `nodes` in increasing node order.
    pub fn labels_of(&self, nodes: &BTreeSet<Node>) -> Vec<QubitLabel> {
        nodes.iter().filter_map(|u| self.registers.get(u)).flatten().copied().collect()
    }

    /// Payload labels in qubit order (leaf `ℓ` first).
    pub fn payload_labels(&self) -> Vec<QubitLabel> {
        self.labels_of(&self.shape.leaf_nodes())
    }

    /// Swaps the register stored at `u`, returning the previous one. Used by
    /// adversarial provers that send something other than what they committed.
    pub fn replace_register(&mut self, u: Node, labels: Vec<QubitLabel>) -> Result<Option<Vec<QubitLabel>>> {
        check_node(u, self.shape.ell)?;
        if labels.len() != self.shape.b {
            return Err(Error::Usage(format!("register for node {u} must hold {} qubits", self.shape.b)));
        }
        Ok(self.registers.insert(u, labels))
    }

    fn gate_labels(registers: &BTreeMap<Node, Vec<QubitLabel>>, u: Node) -> Result<Vec<QubitLabel>> {
        let mut labels = Vec::new();
        for v in [2 * u, 2 * u + 1, u] {
            let reg = registers
                .get(&v)
                .ok_or_else(|| Error::ProtocolViolation(format!("register for node {v} was not received")))?;
            labels.extend_from_slice(reg);
        }
        Ok(labels)
    }
}

#[derive(Clone, Debug)]
pub struct CommitOutput {
    pub layout: MerkleLayout,
}

impl CommitOutput {
    pub const ROOT: Node = 1;

    pub fn root_register(&self) -> &[QubitLabel] {
        self.layout.register(Self::ROOT).expect("root is always committed")
    }
}

/// Commits the payload held in `payload` (N = b·ℓ labels, qubit 1 first).
/// Fresh internal registers belong to the payload's owner.
pub fn commit(
    sys: &mut QuantumSystem,
    oracle: &mut OracleHandle,
    payload: &[QubitLabel],
    b: usize,
) -> Result<CommitOutput> {
    if b == 0 || payload.len() % b != 0 {
        return Err(Error::Usage(format!(
            "payload of {} qubits is not a whole number of {b}-qubit blocks; pad it first",
            payload.len()
        )));
    }
    let shape = TreeShape::new(b, payload.len() / b)?;
    if oracle.qubits() != shape.oracle_qubits() {
        return Err(Error::Usage(format!(
            "oracle acts on {} qubits but the tree needs λ = 3b = {}",
            oracle.qubits(),
            shape.oracle_qubits()
        )));
    }
    let owner = sys.owner(payload[0])?;
    let ell = shape.leaves();
    let mut registers: BTreeMap<Node, Vec<QubitLabel>> = payload
        .chunks(b)
        .enumerate()
        .map(|(j, block)| (ell + j, block.to_vec()))
        .collect();
    for u in (1..ell).rev() {
        let fresh = sys.alloc_zeros(b, owner)?;
        registers.insert(u, fresh);
        let labels = MerkleLayout::gate_labels(&registers, u)?;
        oracle.query(sys, &labels, Direction::Forward)?;
    }
    Ok(CommitOutput { layout: MerkleLayout { shape, registers } })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DecommitOutcome {
    /// Every check passed; the registers of the requested nodes.
    Opened(BTreeMap<Node, Vec<QubitLabel>>),
    /// The check at `node` measured `outcome ≠ 0^b`.
    Rejected { node: Node, outcome: Vec<bool> },
}

impl DecommitOutcome {
    pub fn is_opened(&self) -> bool {
        matches!(self, DecommitOutcome::Opened(_))
    }
}

/// Opens the node set `nodes` from the registers in `received`, which must
/// cover `R_S`. Undoes `G` on each internal ancestor in increasing node order
/// and measures the uncomputed register; the first nonzero outcome rejects.
pub fn decommit<R: Rng + ?Sized>(
    sys: &mut QuantumSystem,
    oracle: &mut OracleHandle,
    shape: TreeShape,
    received: &BTreeMap<Node, Vec<QubitLabel>>,
    nodes: &BTreeSet<Node>,
    rng: &mut R,
) -> Result<DecommitOutcome> {
    let needed = frontier(nodes, shape.leaves())?;
    for v in &needed {
        match received.get(v) {
            Some(reg) if reg.len() == shape.block_size() => {}
            Some(_) => {
                return Err(Error::ProtocolViolation(format!("register for node {v} has the wrong size")))
            }
            None => return Err(Error::ProtocolViolation(format!("register for node {v} was not received"))),
        }
    }
    for u in internal_ancestors(nodes, shape.leaves())? {
        let labels = MerkleLayout::gate_labels(received, u)?;
        oracle.query(sys, &labels, Direction::Inverse)?;
        let outcome = sys.measure_computational(&received[&u], rng)?;
        if outcome.iter().any(|&bit| bit) {
            return Ok(DecommitOutcome::Rejected { node: u, outcome });
        }
    }
    Ok(DecommitOutcome::Opened(
        nodes.iter().map(|u| (*u, received[u].clone())).collect(),
    ))
}
