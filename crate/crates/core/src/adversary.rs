//! Attacks on the depth-one commitment and a pluggable protocol adversary.
//!
//! The depth-one scheme commits a `2b`-qubit state `ψ` by appending `|0^b⟩`
//! and applying `G`; the last `b` qubits are the commitment. To open, the
//! verifier applies `G†` and checks that the commitment reads `0^b`.

use std::collections::BTreeSet;

use nalgebra::DVector;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hamiltonian::VerifierTerm;
use crate::linalg::{self, CMatrix, C64, ONE};
use crate::merkle::{self, DecommitOutcome, Node};
use crate::oracle::OracleHandle;
use crate::protocol::{Adversary, AdversaryContext};
use crate::qstate::{trace_distance, DensityMatrix, Party, QuantumSystem};

/// A Boolean function on `2b`-bit strings, inducing `|z⟩ ↦ (−1)^{f(z)}|z⟩`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhaseFunction {
    b: usize,
    table: Vec<bool>,
}

impl PhaseFunction {
    pub fn new(b: usize, table: Vec<bool>) -> Result<Self> {
        if b == 0 || table.len() != 1 << (2 * b) {
            return Err(Error::Usage(format!(
                "phase table for b = {b} must have 2^{} entries, got {}",
                2 * b,
                table.len()
            )));
        }
        Ok(PhaseFunction { b, table })
    }

    pub fn parity(b: usize) -> Self {
        let table = (0..1usize << (2 * b)).map(|z| z.count_ones() % 2 == 1).collect();
        PhaseFunction { b, table }
    }

    pub fn zero(b: usize) -> Self {
        PhaseFunction { b, table: vec![false; 1 << (2 * b)] }
    }

    pub fn random<R: Rng + ?Sized>(b: usize, rng: &mut R) -> Self {
        PhaseFunction { b, table: (0..1usize << (2 * b)).map(|_| rng.random()).collect() }
    }

    pub fn block_size(&self) -> usize {
        self.b
    }

    pub fn table(&self) -> &[bool] {
        &self.table
    }

    pub fn phases(&self) -> Vec<C64> {
        self.table.iter().map(|&f| if f { -ONE } else { ONE }).collect()
    }
}

/// `|+⟩^{⊗n}` as amplitudes.
pub fn plus_state(n: usize) -> Vec<C64> {
    let a = C64::new((1.0 / (1u64 << n) as f64).sqrt(), 0.0);
    vec![a; 1 << n]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PhaseAttackOutcome {
    pub accepted: bool,
    /// Trace distance between the opened state and the committed `ψ`; absent
    /// when the verifier rejects.
    pub trace_distance: Option<f64>,
}

/// Commits `psi` with `oracle`, applies the phase unitary to the retained
/// data after sending the commitment, and runs the opening check.
pub fn phase_attack_round<R: Rng + ?Sized>(
    oracle: &mut OracleHandle,
    psi: &[C64],
    f: &PhaseFunction,
    rng: &mut R,
) -> Result<PhaseAttackOutcome> {
    let b = f.block_size();
    if psi.len() != 1 << (2 * b) {
        return Err(Error::Usage(format!("committed state must be on 2b = {} qubits", 2 * b)));
    }
    let mut sys = QuantumSystem::new();
    let data = sys.prepare_register(psi, Party::Prover)?;
    let layout = merkle::commit(&mut sys, oracle, &data, b)?.layout;
    let shape = layout.shape();
    let com = layout.register(1).expect("root").to_vec();
    sys.transfer_ownership(&com, Party::Prover, Party::Verifier)?;

    sys.apply_diagonal(&data, &f.phases())?;
    sys.transfer_ownership(&data, Party::Prover, Party::Verifier)?;

    let opened = merkle::decommit(&mut sys, oracle, shape, layout.registers(), &shape.leaf_nodes(), rng)?;
    match opened {
        DecommitOutcome::Rejected { .. } => Ok(PhaseAttackOutcome { accepted: false, trace_distance: None }),
        DecommitOutcome::Opened(_) => {
            let revealed = sys.reduced_density(&data)?;
            let committed = DensityMatrix::from_pure(psi)?;
            Ok(PhaseAttackOutcome { accepted: true, trace_distance: Some(trace_distance(&revealed, &committed)?) })
        }
    }
}

/// Outcome of the purification-switch construction.
#[derive(Clone, Debug)]
pub struct SwitchResult {
    /// Unitary on the first `2b` qubits.
    pub w: CMatrix,
    pub singular_values: Vec<f64>,
    /// Nuclear norm of the cross operator `M`.
    pub predicted_overlap: f64,
    /// `|⟨φ⊗0^b| G†(W⊗I)G |ψ⊗0^b⟩|²`.
    pub achieved_fidelity: f64,
    /// `‖(I⊗⟨0^b|) G†(W⊗I)G |ψ⊗0^b⟩‖²`.
    pub check_pass_probability: f64,
}

fn block_of(psi: &[C64]) -> Result<usize> {
    if !linalg::is_power_of_two(psi.len()) || psi.len().trailing_zeros() % 2 != 0 || psi.len() < 4 {
        return Err(Error::Usage(format!("a 2b-qubit state has 4^b amplitudes, got {}", psi.len())));
    }
    Ok(psi.len().trailing_zeros() as usize / 2)
}

/// Columns `G|z⟩|0^b⟩` of the oracle, from either the full `2^{3b}` unitary
/// or the `2^{3b} × 2^{2b}` isometry of exactly those columns.
fn committing_isometry(g: &CMatrix, b: usize) -> Result<CMatrix> {
    let rows = 1usize << (3 * b);
    let cols = 1usize << (2 * b);
    if g.nrows() != rows {
        return Err(Error::Usage(format!("oracle must have 2^{} rows for b = {b}", 3 * b)));
    }
    let v = if g.ncols() == rows {
        CMatrix::from_fn(rows, cols, |r, z| g[(r, z << b)])
    } else if g.ncols() == cols {
        g.clone()
    } else {
        return Err(Error::Usage(format!("oracle has {} columns, expected 2^{} or 2^{}", g.ncols(), 3 * b, 2 * b)));
    };
    if linalg::isometry_probe_defect(&v) > crate::EXACT_TOL {
        return Err(Error::Validation("oracle columns are not orthonormal".into()));
    }
    Ok(v)
}

/// Reshapes a `3b`-qubit vector into a `2^{2b} × 2^b` matrix (row = first `2b` qubits).
fn split_rows(v: &DVector<C64>, b: usize) -> CMatrix {
    let cols = 1usize << b;
    CMatrix::from_fn(v.len() / cols, cols, |x, y| v[x * cols + y])
}

fn flatten(m: &CMatrix) -> DVector<C64> {
    DVector::from_fn(m.nrows() * m.ncols(), |i, _| m[(i / m.ncols(), i % m.ncols())])
}

/// The unitary `W` on the first `2b` qubits maximizing
/// `|⟨φ⊗0^b| G†(W⊗I)G |ψ⊗0^b⟩|`, from the SVD of the cross operator.
pub fn hjw_switch_operator(g: &CMatrix, psi: &[C64], phi: &[C64]) -> Result<SwitchResult> {
    let b = block_of(psi)?;
    if phi.len() != psi.len() {
        return Err(Error::Usage("ψ and φ must have the same dimension".into()));
    }
    let v = committing_isometry(g, b)?;
    let a = &v * DVector::from_column_slice(psi);
    let bb = &v * DVector::from_column_slice(phi);
    let (a_mat, b_mat) = (split_rows(&a, b), split_rows(&bb, b));
    let m = &a_mat * b_mat.adjoint();
    let (w, singular_values) = linalg::polar_factor(&m);
    let predicted_overlap = singular_values.iter().sum();

    let switched = flatten(&(&w * &a_mat));
    let achieved_fidelity = bb.dotc(&switched).norm_sqr();
    let check_pass_probability = (v.adjoint() * &switched).norm_squared();
    Ok(SwitchResult { w, singular_values, predicted_overlap, achieved_fidelity, check_pass_probability })
}

/// Fidelity between the reduced states of `G|ψ0⟩` and `G|φ0⟩` on the last
/// `b` qubits, which bounds how well any switch on the first `2b` can do.
pub fn commitment_fidelity(g: &CMatrix, psi: &[C64], phi: &[C64]) -> Result<f64> {
    let b = block_of(psi)?;
    let v = committing_isometry(g, b)?;
    let reduce = |s: &[C64]| -> Result<DensityMatrix> {
        let m = split_rows(&(&v * DVector::from_column_slice(s)), b);
        DensityMatrix::new(m.transpose() * m.conjugate())
    };
    crate::qstate::fidelity(&reduce(psi)?, &reduce(phi)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HjwRoundOutcome {
    pub check_pass: bool,
    /// Fidelity of the opened state with `φ`, given that the check passed.
    pub conditional_fidelity: Option<f64>,
}

/// Commits `ψ`, applies the switch `W⊗I` to the prover-held data, then runs
/// the opening check. With a full unitary the round runs on a
/// [`QuantumSystem`]; with an isometry it is evaluated directly.
pub fn hjw_attack_round<R: Rng + ?Sized>(
    g: &CMatrix,
    switch: &SwitchResult,
    psi: &[C64],
    phi: &[C64],
    rng: &mut R,
) -> Result<HjwRoundOutcome> {
    let b = block_of(psi)?;
    let full = 1usize << (3 * b);
    if g.ncols() == full && g.nrows() == full {
        let mut sys = QuantumSystem::with_cap(3 * b);
        let data = sys.prepare_register(psi, Party::Prover)?;
        let com = sys.alloc_zeros(b, Party::Prover)?;
        let all: Vec<_> = data.iter().chain(&com).copied().collect();
        sys.apply_unitary(&all, g, false)?;
        sys.transfer_ownership(&com, Party::Prover, Party::Verifier)?;
        sys.apply_unitary(&data, &switch.w, false)?;
        sys.transfer_ownership(&data, Party::Prover, Party::Verifier)?;
        sys.apply_unitary(&all, g, true)?;
        let outcome = sys.measure_computational(&com, rng)?;
        if outcome.iter().any(|&x| x) {
            return Ok(HjwRoundOutcome { check_pass: false, conditional_fidelity: None });
        }
        let opened = sys.state_vector(&data)?;
        let f = linalg::inner(phi, &opened).norm_sqr();
        return Ok(HjwRoundOutcome { check_pass: true, conditional_fidelity: Some(f) });
    }
    let v = committing_isometry(g, b)?;
    let a = &v * DVector::from_column_slice(psi);
    let switched = flatten(&(&switch.w * split_rows(&a, b)));
    let opened = v.adjoint() * switched;
    let p = opened.norm_squared();
    if rng.random::<f64>() >= p {
        return Ok(HjwRoundOutcome { check_pass: false, conditional_fidelity: None });
    }
    let f = DVector::from_column_slice(phi).dotc(&opened).norm_sqr() / p;
    Ok(HjwRoundOutcome { check_pass: true, conditional_fidelity: Some(f) })
}

/// Random orthogonal pair of `n`-qubit pure states.
pub fn orthogonal_pair<R: Rng + ?Sized>(n: usize, rng: &mut R) -> (Vec<C64>, Vec<C64>) {
    let psi = linalg::random_state(1 << n, rng);
    let mut phi = linalg::random_state(1 << n, rng);
    let overlap = linalg::inner(&psi, &phi);
    for (p, s) in phi.iter_mut().zip(&psi) {
        *p -= s * overlap;
    }
    linalg::normalize(&mut phi);
    (psi, phi)
}

/// Applies `Z^{⊗b}` to every opened leaf before sending it: the phase attack
/// lifted to the full protocol.
#[derive(Clone, Copy, Debug, Default)]
pub struct PhaseFlip;

impl Adversary for PhaseFlip {
    fn name(&self) -> String {
        "phase-flip".into()
    }

    fn before_opening(
        &self,
        ctx: &mut AdversaryContext<'_>,
        _term: &VerifierTerm,
        leaves: &BTreeSet<Node>,
    ) -> Result<()> {
        for &leaf in leaves {
            let reg = ctx.layout.register(leaf).expect("committed leaf").to_vec();
            let phases: Vec<C64> =
                (0..1usize << reg.len()).map(|z| if z.count_ones() % 2 == 1 { -ONE } else { ONE }).collect();
            ctx.sys.apply_diagonal(&reg, &phases)?;
        }
        Ok(())
    }
}
