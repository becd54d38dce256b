use dpngs::fpgm::FpgmConfig;
use dpngs::graph::{decrement, dpngs_solve_monitored, primal_direction, solve_dual_subproblem, sparsify};
use dpngs::linalg::{smallest_eigenvalue_probe, PrecisionIterate, SymmetricMatrix};
use dpngs::scframework::{damped_contraction_bound, omega, SIGMA_BAR};
use dpngs::{default_theta0, DpngsOptions, DpngsTermination, DualIterate, GraphProblem};
use dpngs_diagnostics::IterateRecorder;
use dpngs_oracles::{compare, gradient_reference, local_norm, dual_local_norm, primal_pg_reference, random_instance};

fn tight(eps: f64) -> DpngsOptions {
    DpngsOptions {
        inner: FpgmConfig { inner_eps: eps, k_max: 200_000, ..FpgmConfig::exact() },
        record_objective: true,
        ..DpngsOptions::default()
    }
}

fn run(prob: &GraphProblem, opts: &DpngsOptions) -> (dpngs::DpngsOutcome, Vec<SymmetricMatrix>) {
    let mut rec = IterateRecorder::new(prob);
    let out = dpngs_solve_monitored(prob, default_theta0(prob), opts, &mut rec).unwrap();
    (out, rec.iterates)
}

#[test]
fn matches_reference_on_p8() {
    let prob = random_instance(100, 8, 24, 0.1);
    let (out, _) = run(&prob, &tight(1e-8));
    assert_eq!(out.termination, DpngsTermination::Converged);
    let reference = primal_pg_reference(&prob, 1e-8).unwrap();
    let report = compare(&out.theta, &reference, &prob, 5e-5).unwrap();
    assert!(report.objective_gap <= 1e-4, "{report:?}");
    assert!(report.support_agreement >= 0.95, "{report:?}");

    let sparse = PrecisionIterate::new(sparsify(&out.theta, 5e-5));
    let report = compare(&sparse, &reference, &prob, 5e-5).unwrap();
    assert!(report.support_agreement >= 0.95, "{report:?}");
}

#[test]
fn objective_decreases_by_omega_and_iterates_stay_pd() {
    for (k, &p) in [4usize, 8, 16].iter().enumerate() {
        for (r, &rho) in [0.05, 0.1, 0.25].iter().enumerate() {
            let prob = random_instance(200 + (3 * k + r) as u64, p, 3 * p, rho);
            let (out, iterates) = run(&prob, &tight(1e-8));
            assert_eq!(out.termination, DpngsTermination::Converged);
            for th in &iterates {
                assert!(smallest_eigenvalue_probe(th).value > 0.0);
            }
            for w in out.trace.windows(2) {
                let (f0, f1) = (w[0].objective.unwrap(), w[1].objective.unwrap());
                let bound = f0 - omega(w[0].lambda).unwrap() + 1e-6 * (1.0 + f0.abs());
                assert!(f1 <= bound, "p={p} rho={rho} iter {}: {f1} > {bound}", w[0].iter);
            }
        }
    }
}

#[test]
fn quadratic_tail_on_p8() {
    let prob = random_instance(100, 8, 24, 0.1);
    let (out, _) = run(&prob, &tight(1e-10));
    for w in out.trace.windows(2) {
        if w[0].lambda <= SIGMA_BAR {
            let bound = damped_contraction_bound(w[0].lambda).unwrap() + 1e-6;
            assert!(w[1].lambda <= bound, "{} -> {} (bound {bound})", w[0].lambda, w[1].lambda);
        }
    }
}

#[test]
fn decrement_equals_kronecker_local_norm() {
    for seed in 0..10u64 {
        let p = 2 + (seed as usize % 5);
        let prob = random_instance(300 + seed, p, 3 * p, 0.1);
        let theta = default_theta0(&prob);
        let cfg = FpgmConfig { inner_eps: 1e-10, k_max: 100_000, ..FpgmConfig::exact() };
        let res = solve_dual_subproblem(&theta, &prob, &cfg, &DualIterate::zeros(p)).unwrap();
        let lam = decrement(&theta, &res.u_star, &prob).unwrap().value;
        let delta = primal_direction(&theta, &res.u_star, &prob).unwrap();
        let via_delta = local_norm(&theta, &delta).unwrap();
        let g = gradient_reference(&theta, &prob).unwrap().linear_combination(1.0, res.u_star.matrix(), prob.rho()).unwrap();
        let via_dual = dual_local_norm(&theta, &g).unwrap();
        assert!((lam - via_delta).abs() <= 1e-8 * lam.max(1.0), "{lam} vs {via_delta}");
        assert!((lam - via_dual).abs() <= 1e-8 * lam.max(1.0), "{lam} vs {via_dual}");
    }
}

#[test]
fn full_step_phase_reaches_the_same_solution() {
    use dpngs::graph::{DualNewtonSubproblem, L1Penalty, PowerSettings};
    use dpngs::scframework::{run_two_phase, Phase, PhaseConfig};
    use dpngs_oracles::LogDetLikelihood;

    let prob = random_instance(101, 6, 18, 0.1);
    let damped = dpngs::dpngs_solve(&prob, default_theta0(&prob), 1e-9, 200, FpgmConfig::exact()).unwrap();

    let opts = DpngsOptions { outer_eps: 1e-9, full_step_phase: true, ..DpngsOptions::default() };
    let (full, _) = run(&prob, &opts);
    assert_eq!(full.termination, DpngsTermination::Converged);
    assert!(full.trace.iter().any(|r| r.phase == Phase::Full && r.alpha == 1.0));

    // The same subproblem through the generic engine, with a dense value oracle.
    let mut sub = DualNewtonSubproblem::new(&prob, FpgmConfig::exact(), PowerSettings::default());
    let cfg = PhaseConfig { eps: 1e-9, record_objective: true, ..PhaseConfig::default() };
    let generic = run_two_phase(&LogDetLikelihood { prob: &prob }, &L1Penalty { rho: prob.rho() }, &mut sub, default_theta0(&prob).theta, &cfg).unwrap();

    for theta in [&full.theta.theta, &generic.solution] {
        let gap = theta.linear_combination(1.0, &damped.theta.theta, -1.0).unwrap().frobenius_norm();
        assert!(gap < 1e-6, "{gap:e}");
    }
}
