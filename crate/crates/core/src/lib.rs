//! Classical simulation of the quantum Merkle tree commitment and the
//! three-message succinct argument for the gap local Hamiltonian problem
//! built on top of it.
//!
//! The crate is organised bottom-up:
//!
//! - [`qstate`]: a statevector engine over labeled qubits shared by every party.
//! - [`oracle`]: the λ-qubit oracle `G` (Haar, random circuit, XOR-function, identity).
//! - [`merkle`]: tree geometry, node-set combinatorics, commit and local decommit.
//! - [`hamiltonian`]: k-local Hamiltonian instances and the local verifier.
//! - [`protocol`]: prover strategies, the verifier state machine and transcripts.
//! - [`adversary`]: the phase attack and the purification-switch attack.

pub mod adversary;
pub mod error;
pub mod hamiltonian;
pub mod library;
pub mod linalg;
pub mod merkle;
pub mod oracle;
pub mod protocol;
pub mod qstate;
pub mod seeds;

pub use error::{Error, Result};
pub use hamiltonian::{Classification, InstanceLabel, LocalHamiltonian, LocalTerm, VerifierTerm};
pub use linalg::{CMatrix, C64};
pub use merkle::{CommitOutput, DecommitOutcome, MerkleLayout, TreeShape};
pub use oracle::{Direction, OracleHandle, OracleKind};
pub use protocol::{ProverStrategy, RoundOutcome, Transcript};
pub use qstate::{DensityMatrix, Party, QuantumSystem, QubitLabel};

/// Absolute tolerance for identities that hold exactly in exact arithmetic.
pub const EXACT_TOL: f64 = 1e-9;
