//! Generators for the shipped instance files.

use std::path::Path;

use rand::Rng;

use crate::error::Result;
use crate::hamiltonian::{basis_projector, Classification, InstanceLabel, LocalHamiltonian, LocalTerm};
use crate::linalg::{self, CMatrix, C64};
use crate::seeds;

pub const ALPHA: f64 = 0.1;
pub const BETA: f64 = 0.9;

/// `Σ_j |1⟩⟨1|_j`; ground state `|0^n⟩`, `λ_min = 0`.
pub fn pinning(n: usize) -> Result<LocalHamiltonian> {
    let terms = (1..=n).map(|j| LocalTerm::new(vec![j], basis_projector(true))).collect();
    LocalHamiltonian::new(n, ALPHA, BETA, 1, terms, InstanceLabel::Yes)
}

/// `Σ_j (|0⟩⟨0|_j + |1⟩⟨1|_j)`; every state has energy `m/2`.
pub fn frustrated(n: usize) -> Result<LocalHamiltonian> {
    let terms = (1..=n)
        .flat_map(|j| [LocalTerm::new(vec![j], basis_projector(false)), LocalTerm::new(vec![j], basis_projector(true))])
        .collect();
    LocalHamiltonian::new(n, ALPHA, BETA, 1, terms, InstanceLabel::No)
}

/// `Σ_j (0.9·I + 0.1·|1⟩⟨1|_j)`; `λ_min/m = 0.9`, so every state is accepted
/// with probability at most 0.1 per round.
pub fn calibrated_no(n: usize) -> Result<LocalHamiltonian> {
    let h = CMatrix::identity(2, 2) * C64::new(BETA, 0.0) + basis_projector(true) * C64::new(1.0 - BETA, 0.0);
    let terms = (1..=n).map(|j| LocalTerm::new(vec![j], h.clone())).collect();
    LocalHamiltonian::new(n, ALPHA, BETA, 1, terms, InstanceLabel::No)
}

/// `m` rank-one projectors onto Haar-random two-qubit states, each on a
/// uniformly random ordered pair of distinct qubits. The label is filled in
/// from the exact ground energy.
pub fn random_two_local(n: usize, m: usize, seed: u64) -> Result<LocalHamiltonian> {
    let mut rng = seeds::rng_for(seed, 0, seeds::Stream::Payload);
    let mut terms = Vec::with_capacity(m);
    for _ in 0..m {
        let a = rng.random_range(1..=n);
        let mut b = rng.random_range(1..n);
        if b >= a {
            b += 1;
        }
        terms.push(LocalTerm::new(vec![a, b], linalg::outer(&linalg::random_state(4, &mut rng))));
    }
    let inst = LocalHamiltonian::new(n, ALPHA, BETA, 2, terms, InstanceLabel::Unknown)?;
    let label = match inst.classify()? {
        Classification::Yes => InstanceLabel::Yes,
        Classification::No => InstanceLabel::No,
        Classification::OutsidePromise => InstanceLabel::Unknown,
    };
    Ok(inst.with_label(label))
}

/// Every shipped instance with its file stem.
pub fn shipped() -> Result<Vec<(String, LocalHamiltonian)>> {
    let mut out = vec![
        ("pinning_4q".to_string(), pinning(4)?),
        ("frustrated_4q".to_string(), frustrated(4)?),
        ("calibrated_no_4q".to_string(), calibrated_no(4)?),
    ];
    for s in 1..=10 {
        out.push((format!("random2local_6q_s{s}"), random_two_local(6, 8, s)?));
    }
    Ok(out)
}

/// Writes every shipped instance as `<stem>.json` under `dir`.
pub fn write_all(dir: &Path) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    let mut names = Vec::new();
    for (stem, inst) in shipped()? {
        let name = format!("{stem}.json");
        std::fs::write(dir.join(&name), inst.to_json()? + "\n")?;
        names.push(name);
    }
    Ok(names)
}
