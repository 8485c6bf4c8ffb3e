use nalgebra::SymmetricEigen;
use precond_ope::algorithms::{
    affine_map, pfqi_step_closed, pfqi_step_literal, preconditioner, run, td_step, AlgorithmConfig, AlgorithmKind,
    RunOptions, RunStatus,
};
use precond_ope::analyzer::{predict_td, td_epsilon, td_stability, Prediction};
use precond_ope::harness::{
    gaussian_vector, generate, generate_one, oracle_fixed_point, run_campaign, satisfies, GeneratorSpec, Regime,
    Theorem,
};
use precond_ope::matrix::{max_abs, null_space, rank, spectral_report, Mat, Vector};
use precond_ope::mdp::is_on_policy;
use precond_ope::systems::{check_consistency, LinearSystem, Problem, Role};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn regime() -> impl Strategy<Value = Regime> {
    prop::sample::select(Regime::ALL.to_vec())
}

fn problem(regime: Regime, seed: u64) -> Problem {
    generate_one(regime, None, None, seed).unwrap().problem().unwrap()
}

fn cov_max(p: &Problem) -> f64 {
    SymmetricEigen::new(p.moments.sigma_cov.clone()).eigenvalues.max()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn pfqi_single_inner_step_is_td(regime in regime(), seed in any::<u64>(), scale in 0.1f64..1.9) {
        let p = problem(regime, seed);
        let alpha = scale / cov_max(&p);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = gaussian_vector(p.d(), &mut rng);
        let td = td_step(&p.moments, p.gamma(), alpha, &theta);
        let pfqi = pfqi_step_literal(&p.moments, p.gamma(), alpha, 1, &theta);
        prop_assert!((&td - &pfqi).amax() <= 1e-12 * td.amax().max(1.0));
        let pre = preconditioner(AlgorithmKind::Pfqi, &p.moments, alpha, 1);
        prop_assert!(max_abs(&(pre - Mat::identity(p.d(), p.d()) * alpha)) <= 1e-15 * alpha);
    }

    #[test]
    fn pfqi_literal_matches_closed_form(regime in regime(), seed in any::<u64>(), scale in 0.1f64..1.9, t in 1usize..40) {
        let p = problem(regime, seed);
        let alpha = scale / cov_max(&p);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = gaussian_vector(p.d(), &mut rng);
        let literal = pfqi_step_literal(&p.moments, p.gamma(), alpha, t, &theta);
        let closed = pfqi_step_closed(&p.moments, p.gamma(), alpha, t, &theta).unwrap();
        prop_assert!((&literal - &closed).amax() <= 1e-9 * literal.amax().max(1.0));
    }

    #[test]
    fn pfqi_map_is_preconditioned_target(regime in regime(), seed in any::<u64>(), scale in 0.1f64..1.9, t in 1usize..200) {
        let p = problem(regime, seed);
        let alpha = scale / cov_max(&p);
        let d = p.d();
        let m = preconditioner(AlgorithmKind::Pfqi, &p.moments, alpha, t);
        let map = affine_map(AlgorithmKind::Pfqi, &p.moments, p.gamma(), alpha, t).unwrap();
        let expected_h = Mat::identity(d, d) - &m * &p.target.a;
        prop_assert!(max_abs(&(&map.h - expected_h)) <= 1e-9 * max_abs(&map.h).max(1.0));
        prop_assert!((&map.c - &m * &p.target.b).amax() <= 1e-9 * map.c.amax().max(1.0));
    }

    #[test]
    fn fqi_preconditioner_is_covariance_pseudoinverse(regime in regime(), seed in any::<u64>()) {
        let p = problem(regime, seed);
        let m = preconditioner(AlgorithmKind::Fqi, &p.moments, 0.0, 0);
        let cov = &p.moments.sigma_cov;
        prop_assert!(max_abs(&(cov * &m * cov - cov)) <= 1e-9 * max_abs(cov).max(1.0));
    }

    #[test]
    fn generated_instances_satisfy_their_regime(regime in regime(), seed in any::<u64>()) {
        let inst = generate_one(regime, None, None, seed).unwrap();
        prop_assert!(satisfies(regime, &inst.mdp, &inst.features).unwrap());
        if regime == Regime::OnPolicy {
            prop_assert!(is_on_policy(&inst.mdp));
        }
        if regime == Regime::Tabular {
            prop_assert_eq!(inst.features.phi(), &Mat::identity(inst.mdp.h(), inst.mdp.h()));
        }
    }
}

#[test]
fn oracle_matches_long_td_runs_on_singular_systems() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut checked = 0;
    for seed in 0..2000u64 {
        if checked == 25 {
            break;
        }
        let p = problem(Regime::OnPolicy, seed);
        let a = &p.target.a;
        if rank(a) == p.d() || !check_consistency(&p.target) {
            continue;
        }
        let report = spectral_report(a).unwrap();
        let alpha = 0.2 * td_epsilon(&report);
        assert_eq!(predict_td(&p.target, alpha).unwrap().prediction, Prediction::ConvergesForAllTheta0);
        let theta0 = gaussian_vector(p.d(), &mut rng);
        let opts = RunOptions {
            max_iters: Some(5_000_000),
            tol: 1e-14,
            record_every: 5_000_000,
            ..RunOptions::default()
        };
        let trace = run(&p.moments, p.gamma(), &AlgorithmConfig::td(alpha, theta0.clone()), &opts).unwrap();
        assert_eq!(trace.status, RunStatus::Converged, "seed {seed}");
        let expected = oracle_fixed_point(&p.target, &theta0).unwrap();
        assert!((&trace.last - &expected).norm() <= 1e-6 * expected.norm().max(1.0), "seed {seed}");
        // Kernel directions pass straight through.
        let v = null_space(a).column(0).into_owned();
        let moved = oracle_fixed_point(&p.target, &(&theta0 + &v)).unwrap();
        assert!((moved - &expected - v).norm() < 1e-8);
        checked += 1;
    }
    assert_eq!(checked, 25);
}

#[test]
fn oracle_fixed_point_small_examples() {
    let diag = LinearSystem::new(
        Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
        Vector::from_vec(vec![1.0, 0.0]),
        Role::Target,
    )
    .unwrap();
    let got = oracle_fixed_point(&diag, &Vector::from_vec(vec![5.0, 7.0])).unwrap();
    assert_eq!(got, Vector::from_vec(vec![1.0, 7.0]));
    let inconsistent = LinearSystem::new(diag.a.clone(), Vector::from_vec(vec![1.0, 1.0]), Role::Target).unwrap();
    assert!(oracle_fixed_point(&inconsistent, &Vector::zeros(2)).is_none());
}

#[test]
fn td_stability_of_on_policy_instances() {
    for inst in generate(&GeneratorSpec::new(Regime::OnPolicy, 99, 60)).unwrap() {
        let p = inst.problem().unwrap();
        assert!(td_stability(&p.target).unwrap().stable, "seed {}", inst.seed);
    }
}

#[test]
fn pfqi_preconditioner_tends_to_covariance_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for inst in generate(&GeneratorSpec::new(Regime::FullColumnRank, 5, 40)).unwrap() {
        let p = inst.problem().unwrap();
        let eig = SymmetricEigen::new(p.moments.sigma_cov.clone()).eigenvalues;
        if eig.max() / eig.min() > 500.0 {
            continue;
        }
        let alpha = rng.random_range(0.75..1.0) * 2.0 / (eig.min() + eig.max());
        let m = preconditioner(AlgorithmKind::Pfqi, &p.moments, alpha, 10_000);
        let inv = p.moments.sigma_cov.clone().try_inverse().unwrap();
        assert!((m - inv).norm() < 1e-6, "seed {}", inst.seed);
    }
}

#[test]
fn campaigns_are_deterministic() {
    let specs: Vec<GeneratorSpec> = Regime::ALL.iter().map(|r| GeneratorSpec::new(*r, 31, 6)).collect();
    let first = run_campaign(&specs, &Theorem::ALL, None).unwrap();
    let second = run_campaign(&specs, &Theorem::ALL, None).unwrap();
    let a = precond_ope::json::to_string_pretty(&first).unwrap();
    let b = precond_ope::json::to_string_pretty(&second).unwrap();
    assert_eq!(a, b);
    assert_eq!(first.overall().non_marginal_failures(), 0);
}

#[test]
fn campaign_rejects_empty_specs() {
    assert!(run_campaign(&[], &Theorem::ALL, None).is_err());
}

#[test]
fn reproducers_are_written_per_failure() {
    let dir = tempfile::tempdir().unwrap();
    let specs = [GeneratorSpec::new(Regime::Tabular, 3, 4)];
    let result = run_campaign(&specs, &Theorem::ALL, Some(dir.path())).unwrap();
    let written = result.write_reproducers(dir.path()).unwrap();
    assert_eq!(written.len(), result.failures().count());
}
