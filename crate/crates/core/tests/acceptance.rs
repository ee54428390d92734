//! Acceptance suite: one PASS/FAIL line per criterion.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Instant;

use qmerkle_core::adversary::{self, PhaseFunction};
use qmerkle_core::library;
use qmerkle_core::merkle::{self, DecommitOutcome, TreeShape};
use qmerkle_core::oracle::{self, sample_haar_isometry};
use qmerkle_core::protocol::{binomial_tail, OracleSchedule, Protocol, ProtocolConfig, RoundOutcome, Transcript};
use qmerkle_core::seeds::{self, Stream};
use qmerkle_core::{linalg, CMatrix, LocalHamiltonian, OracleHandle, OracleKind, Party, ProverStrategy, QuantumSystem};

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    format!("error: {e}")
}

fn protocol(inst: LocalHamiltonian, config: ProtocolConfig, strategy: ProverStrategy) -> Result<Protocol, String> {
    Protocol::new(Arc::new(inst), config, strategy).map_err(fail)
}

fn roundtrip() -> Check {
    let (b, ell, trials) = (2, 4, 50u64);
    let shape = TreeShape::new(b, ell).map_err(fail)?;
    let mut bots = 0;
    let mut min_fidelity = f64::INFINITY;
    for trial in 0..trials {
        let mut g = OracleHandle::build(OracleKind::Haar, b, seeds::derive(1, trial, Stream::Oracle)).map_err(fail)?;
        let psi = linalg::random_state(1 << shape.payload_qubits(), &mut seeds::rng_for(1, trial, Stream::Payload));
        let mut sys = QuantumSystem::new();
        let payload = sys.prepare_register(&psi, Party::Prover).map_err(fail)?;
        let layout = merkle::commit(&mut sys, &mut g, &payload, b).map_err(fail)?.layout;
        let mut rng = seeds::rng_for(1, trial, Stream::Verifier);
        match merkle::decommit(&mut sys, &mut g, shape, layout.registers(), &shape.leaf_nodes(), &mut rng)
            .map_err(fail)?
        {
            DecommitOutcome::Opened(_) => {
                let got = sys.state_vector(&layout.payload_labels()).map_err(fail)?;
                min_fidelity = min_fidelity.min(linalg::inner(&psi, &got).norm_sqr());
            }
            DecommitOutcome::Rejected { .. } => bots += 1,
        }
    }
    ensure(
        bots == 0 && min_fidelity >= 1.0 - 1e-9,
        format!("b=2 ℓ=4 haar, {trials} payloads: {bots} BOT, min fidelity {min_fidelity:.12}"),
    )
}

fn completeness() -> Check {
    let frustrated = library::frustrated(4).map_err(fail)?;
    let ground = frustrated.ground_energy().map_err(fail)?;
    let target = 1.0 - ground.energy / frustrated.num_terms() as f64;
    let p = protocol(frustrated, ProtocolConfig::new(2), ProverStrategy::SemiHonest(ground.state)).map_err(fail)?;
    let r = p.estimate_acceptance(OracleKind::Haar, OracleSchedule::Fresh, 2000, 2).map_err(fail)?;
    let frustrated_ok = (target - 0.5).abs() < 1e-9 && (r.rate - target).abs() <= 3.0 * r.stderr;
    let pinning = protocol(library::pinning(4).map_err(fail)?, ProtocolConfig::new(2), ProverStrategy::Honest)?;
    let q = pinning.estimate_acceptance(OracleKind::Haar, OracleSchedule::Fresh, 2000, 3).map_err(fail)?;
    ensure(
        frustrated_ok && q.accepted == q.trials,
        format!(
            "frustrated: {:.4} ± {:.4} vs analytic {target:.4}; pinning: {}/{}",
            r.rate, r.stderr, q.accepted, q.trials
        ),
    )
}

fn semi_honest_soundness() -> Check {
    let inst = library::calibrated_no(4).map_err(fail)?;
    let ground = inst.ground_energy().map_err(fail)?;
    let ratio = ground.energy / inst.num_terms() as f64;
    let p = protocol(inst, ProtocolConfig::new(2), ProverStrategy::SemiHonest(ground.state)).map_err(fail)?;
    let r = p.estimate_acceptance(OracleKind::Haar, OracleSchedule::Fresh, 2000, 4).map_err(fail)?;
    ensure(
        ratio >= 0.9 - 1e-12 && r.rate <= 0.1 + 3.0 * r.stderr,
        format!("λ_min/m = {ratio:.4}, best semi-honest acceptance {:.4} ± {:.4}", r.rate, r.stderr),
    )
}

fn oracle_independence() -> Check {
    let p = protocol(library::pinning(4).map_err(fail)?, ProtocolConfig::new(2), ProverStrategy::Honest)?;
    let mut worst = 1.0f64;
    for s in 0..20u64 {
        let r = p
            .estimate_acceptance(OracleKind::Haar, OracleSchedule::Fixed(seeds::derive(5, s, Stream::Oracle)), 500, 5 + s)
            .map_err(fail)?;
        worst = worst.min(r.rate);
    }
    ensure(worst == 1.0, format!("20 haar oracles × 500 rounds, lowest acceptance {worst}"))
}

/// Leaves `W`, their root paths `P_W`, and `R_W` (path nodes plus their
/// children), computed from the tree layout alone.
fn expected_lightcone(inst: &LocalHamiltonian, t: &Transcript) -> Option<(BTreeSet<usize>, BTreeSet<usize>, BTreeSet<usize>)> {
    let i = t.chosen_i?;
    let term = &inst.terms()[i - 1];
    let leaves: BTreeSet<usize> = term.qubits.iter().map(|&q| t.ell + (q - 1) / t.b).collect();
    let mut paths = BTreeSet::new();
    for &leaf in &leaves {
        let mut u = leaf;
        while u >= 1 {
            paths.insert(u);
            u /= 2;
        }
    }
    let frontier = (1..2 * t.ell).filter(|&v| paths.contains(&v) || paths.contains(&(v / 2))).collect();
    Some((leaves, paths, frontier))
}

fn succinctness() -> Check {
    let inst = library::random_two_local(6, 8, 11).map_err(fail)?;
    let runs = [
        (2, 4, OracleKind::Haar, 40),
        (2, 4, OracleKind::Oh, 40),
        (2, 8, OracleKind::Oh, 40),
        (2, 8, OracleKind::Identity, 40),
        (3, 4, OracleKind::Haar, 4),
        (3, 4, OracleKind::Oh, 40),
    ];
    let mut checked = 0;
    let mut bad = Vec::new();
    for (b, ell, kind, trials) in runs {
        let config = ProtocolConfig::new(b).with_ell(ell).with_max_qubits(b * (2 * ell - 1) + 1);
        let strategy = ProverStrategy::semi_honest_ground(&inst).map_err(fail)?;
        let p = protocol(inst.clone(), config, strategy)?;
        let r = p.estimate_acceptance(kind, OracleSchedule::Fresh, trials, 6).map_err(fail)?;
        for t in &r.transcripts {
            let Some((leaves, paths, closure)) = expected_lightcone(&inst, t) else {
                bad.push(format!("({b},{ell},{kind}) trial {}: no term sampled", t.trial));
                continue;
            };
            let internal = paths.iter().filter(|&&u| u < ell).count() as u64;
            let sent: Vec<usize> = closure.iter().copied().filter(|&u| u != 1).collect();
            let ok = t.opened_leaves.iter().copied().collect::<BTreeSet<_>>() == leaves
                && t.message3_nodes.iter().copied().collect::<BTreeSet<_>>() == sent.iter().copied().collect()
                && t.qubits_sent == b * closure.len()
                && t.queries.prover_g == (ell - 1) as u64
                && t.queries.prover_ginv == 0
                && t.queries.verifier_ginv == internal
                && t.queries.verifier_g == 0
                && !matches!(t.outcome, RoundOutcome::Violation { .. } | RoundOutcome::Aborted);
            if !ok {
                bad.push(format!(
                    "({b},{ell},{kind}) trial {}: sent {} vs {}, G {} vs {}, G† {} vs {internal}",
                    t.trial,
                    t.qubits_sent,
                    b * closure.len(),
                    t.queries.prover_g,
                    ell - 1,
                    t.queries.verifier_ginv
                ));
            }
            checked += 1;
        }
    }
    ensure(
        bad.is_empty(),
        if bad.is_empty() {
            format!("{checked} transcripts over (2,4), (2,8), (3,4): qubits and queries exact")
        } else {
            bad.join("; ")
        },
    )
}

fn phase_attack() -> Check {
    let b = 2;
    let psi = adversary::plus_state(2 * b);
    let parity = PhaseFunction::parity(b);
    let mut oh_accepted = 0;
    let mut worst_td = 0.0f64;
    for trial in 0..500u64 {
        let mut g = OracleHandle::build(OracleKind::Oh, b, seeds::derive(7, trial, Stream::Oracle)).map_err(fail)?;
        let o = adversary::phase_attack_round(&mut g, &psi, &parity, &mut seeds::rng_for(7, trial, Stream::Verifier))
            .map_err(fail)?;
        if o.accepted {
            oh_accepted += 1;
            worst_td = worst_td.max((o.trace_distance.unwrap_or(f64::INFINITY) - 1.0).abs());
        }
    }
    let mut haar_accepted = 0;
    let draws = 200u64;
    for trial in 0..draws {
        let mut g = OracleHandle::build(OracleKind::Haar, b, seeds::derive(8, trial, Stream::Oracle)).map_err(fail)?;
        let o = adversary::phase_attack_round(&mut g, &psi, &parity, &mut seeds::rng_for(8, trial, Stream::Verifier))
            .map_err(fail)?;
        haar_accepted += o.accepted as usize;
    }
    let haar_rate = haar_accepted as f64 / draws as f64;
    ensure(
        oh_accepted == 500 && worst_td <= 1e-9 && haar_rate < 0.5,
        format!(
            "oh: {oh_accepted}/500 accepted, |TD − 1| ≤ {worst_td:.2e}; haar: {haar_accepted}/{draws} accepted (rate {haar_rate:.3})"
        ),
    )
}

fn haar_oracle(b: usize, seed: u64) -> Result<CMatrix, String> {
    if b <= 3 {
        OracleHandle::build(OracleKind::Haar, b, seed).and_then(|g| g.dense_matrix()).map_err(fail)
    } else {
        sample_haar_isometry(1 << (3 * b), 1 << (2 * b), &mut seeds::rng_from(seed)).map_err(fail)
    }
}

fn hjw_switch() -> Check {
    let mut rng = seeds::rng_from(9);
    let (psi, phi) = adversary::orthogonal_pair(4, &mut rng);
    let id = OracleHandle::build(OracleKind::Identity, 2, 0).and_then(|g| g.dense_matrix()).map_err(fail)?;
    let identity_fidelity = adversary::hjw_switch_operator(&id, &psi, &phi).map_err(fail)?.achieved_fidelity;
    let mut means = Vec::new();
    let mut worst_gap = 0.0f64;
    let mut worst_uhlmann = 0.0f64;
    for b in [2usize, 3, 4] {
        let draws = 100u64;
        let mut total = 0.0;
        for d in 0..draws {
            let g = haar_oracle(b, seeds::derive(10 + b as u64, d, Stream::Oracle))?;
            let (psi, phi) = adversary::orthogonal_pair(2 * b, &mut seeds::rng_for(10 + b as u64, d, Stream::Payload));
            let s = adversary::hjw_switch_operator(&g, &psi, &phi).map_err(fail)?;
            let nuclear: f64 = {
                let a = split(&g, &psi, b);
                let c = split(&g, &phi, b);
                (a * c.adjoint()).svd(false, false).singular_values.iter().sum()
            };
            worst_gap = worst_gap.max((s.achieved_fidelity - nuclear * nuclear).abs());
            if d < 10 {
                let u = adversary::commitment_fidelity(&g, &psi, &phi).map_err(fail)?;
                worst_uhlmann = worst_uhlmann.max((u - s.achieved_fidelity).abs());
            }
            total += s.achieved_fidelity;
        }
        means.push(total / draws as f64);
    }
    let monotone = means.windows(2).all(|w| w[1] >= w[0]);
    ensure(
        (identity_fidelity - 1.0).abs() <= 1e-9 && worst_gap <= 1e-9 && worst_uhlmann <= 1e-8 && monotone,
        format!(
            "identity fidelity {identity_fidelity:.12}; max |F − (Σσ)²| {worst_gap:.2e}; max |F − Uhlmann| {worst_uhlmann:.2e}; mean F for b=2,3,4: {:.4}, {:.4}, {:.4}",
            means[0], means[1], means[2]
        ),
    )
}

/// The `2^{2b} × 2^b` matrix of amplitudes of `G|ψ, 0^b⟩`, split into the
/// prover-held and root registers.
fn split(g: &CMatrix, psi: &[qmerkle_core::C64], b: usize) -> CMatrix {
    let rows = 1usize << (3 * b);
    let state: Vec<_> = (0..rows)
        .map(|r| (0..psi.len()).map(|z| g[(r, if g.ncols() == rows { z << b } else { z })] * psi[z]).sum())
        .collect();
    CMatrix::from_fn(1 << (2 * b), 1 << b, |x, y| state[(x << b) | y])
}

fn haar_sampler() -> Check {
    let s = oracle::haar_statistics(OracleKind::Haar, 2, 10_000, 12).map_err(fail)?;
    ensure(
        (s.abs_sq.mean - 0.25).abs() <= 3.0 * s.abs_sq.stderr && s.max_unitarity_defect <= 1e-12,
        format!(
            "E|U00|² = {:.5} ± {:.5}; max unitarity defect {:.2e}",
            s.abs_sq.mean, s.abs_sq.stderr, s.max_unitarity_defect
        ),
    )
}

fn eigensolver() -> Check {
    let mut worst = 0.0f64;
    for seed in 1..=10 {
        let inst = library::random_two_local(6, 8, seed).map_err(fail)?;
        let dense = linalg::hermitian_eigenvalues(&inst.assemble().map_err(fail)?)[0];
        let iterated = inst.iterated_ground_energy().map_err(fail)?;
        worst = worst.max((dense - iterated).abs());
    }
    ensure(worst <= 1e-8, format!("10 six-qubit 2-local instances, max |dense − iterated| {worst:.2e}"))
}

fn repetition() -> Check {
    let (r, meta) = (25, 100);
    let mut lines = Vec::new();
    let mut ok = true;
    let cases = [
        ("pinning", library::pinning(4).map_err(fail)?, true),
        ("frustrated", library::frustrated(4).map_err(fail)?, false),
        ("calibrated", library::calibrated_no(4).map_err(fail)?, false),
    ];
    for (idx, (name, inst, honest)) in cases.into_iter().enumerate() {
        let ground = inst.ground_energy().map_err(fail)?;
        let per_round = 1.0 - ground.energy / inst.num_terms() as f64;
        let strategy = if honest { ProverStrategy::Honest } else { ProverStrategy::SemiHonest(ground.state) };
        let p = protocol(inst, ProtocolConfig::new(2), strategy)?;
        let tau = p.repetition_threshold();
        let needed = (tau * r as f64 - 1e-12).ceil() as usize;
        let outcomes = p.repeat_many(OracleKind::Haar, r, meta, 13 + idx as u64, false).map_err(fail)?;
        let accepted = outcomes.iter().filter(|o| o.accepted).count();
        let tail = binomial_tail(r, per_round, needed);
        let expected = meta as f64 * tail;
        let spread = 3.0 * (meta as f64 * tail * (1.0 - tail)).sqrt() + 1.0;
        let consistent = (accepted as f64 - expected).abs() <= spread;
        let verdict = match name {
            "pinning" => accepted >= 99,
            "calibrated" => meta - accepted >= 99,
            _ => true,
        };
        ok &= consistent && verdict && (tau - 0.5).abs() < 1e-12;
        lines.push(format!("{name}: {accepted}/{meta} accepted (binomial expectation {expected:.2})"));
    }
    ensure(ok, format!("r=25 τ=0.5; {}", lines.join("; ")))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("commit-decommit roundtrip", roundtrip),
        ("completeness identity", completeness),
        ("semi-honest soundness", semi_honest_soundness),
        ("oracle independence", oracle_independence),
        ("succinctness and query accounting", succinctness),
        ("phase attack", phase_attack),
        ("HJW switch", hjw_switch),
        ("Haar sampler", haar_sampler),
        ("eigensolver cross-check", eigensolver),
        ("sequential repetition", repetition),
    ];
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (n, (name, run)) in criteria.iter().enumerate() {
        let id = n + 1;
        if let Some(f) = &filter {
            if f.parse::<usize>().map_or(!name.contains(f.as_str()), |k| k != id) {
                continue;
            }
        }
        let start = Instant::now();
        let result = run();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {id:>2} {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {id:>2} {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
