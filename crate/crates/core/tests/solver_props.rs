use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sl0lab::ensembles::{make_instance, Suite};
use sl0lab::linalg::{factorize, least_norm_solution, FactorMode, ProjectionForm};
use sl0lab::solvers::{
    combined_update, descent_direction, sl0_solve, smoothed_zero_count, split_update, SigmaInit,
    SolverSchedule, UpdateRule,
};

fn uniform_vector(len: usize, scale: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.random_range(-scale..scale))
}

fn uniform_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Central differences of `N − g`, scaled by σ² so they should equal `d`.
fn finite_difference_direction(x: &DVector<f64>, sigma: f64) -> DVector<f64> {
    let big_n = x.len() as f64;
    let h_of = |v: &DVector<f64>| big_n - smoothed_zero_count(v, sigma);
    DVector::from_fn(x.len(), |i, _| {
        let h = 1e-6 * (1.0 + x[i].abs());
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus[i] += h;
        minus[i] -= h;
        sigma * sigma * (h_of(&plus) - h_of(&minus)) / (2.0 * h)
    })
}

#[test]
fn descent_direction_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for point in 0..20 {
        let x = uniform_vector(12, 2.0, &mut rng);
        let sigma = rng.random_range(0.5..2.0);
        let d = descent_direction(&x, sigma);
        let fd = finite_difference_direction(&x, sigma);
        let err = (&d - &fd).norm() / d.norm();
        assert!(err <= 1e-6, "point {point}: relative error {err:e}");
    }
}

#[test]
fn descent_direction_is_odd() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let x = uniform_vector(9, 3.0, &mut rng);
        let sigma = rng.random_range(0.05..3.0);
        assert_eq!(descent_direction(&(-&x), sigma), -descent_direction(&x, sigma));
    }
}

#[test]
fn small_projected_step_does_not_increase_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let a = uniform_matrix(10, 30, &mut rng);
    let f = factorize(&a, FactorMode::Reduced).unwrap();
    for _ in 0..100 {
        let x0 = uniform_vector(30, 1.5, &mut rng);
        let y = &a * &x0;
        let sigma = rng.random_range(0.1..2.0);
        let d = descent_direction(&x0, sigma);
        let next = split_update(&f, &x0, &d, 1e-3, &y);
        let before = 30.0 - smoothed_zero_count(&x0, sigma);
        let after = 30.0 - smoothed_zero_count(&next, sigma);
        assert!(after <= before + 1e-12, "{after} > {before}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn split_step_equals_combined_update(
        seed in any::<u64>(),
        n in 2usize..12,
        extra in 1usize..12,
        mu in 1e-3f64..2.0,
        sigma in 0.05f64..2.0,
    ) {
        let big_n = n + extra;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = uniform_matrix(n, big_n, &mut rng);
        let f = factorize(&a, FactorMode::Full).unwrap();
        // A feasible point: least-norm solution plus a null-space component.
        let y = uniform_vector(n, 1.0, &mut rng);
        let z = uniform_vector(big_n, 1.0, &mut rng);
        let x = least_norm_solution(&f, &y)
            + sl0lab::linalg::project_null_space(&f, &z, ProjectionForm::ViaQ1).unwrap();
        let d = descent_direction(&x, sigma);
        let split = split_update(&f, &x, &d, mu, &y);
        for form in [ProjectionForm::ViaPseudoInverse, ProjectionForm::ViaQ1, ProjectionForm::ViaQ2Split] {
            let combined = combined_update(&f, &x, &d, mu, form).unwrap();
            prop_assert!((&split - &combined).norm() <= 1e-10 * combined.norm().max(1e-300));
        }
    }

    #[test]
    fn sigma_sequence_is_geometric(
        sigma0 in 1e-3f64..50.0,
        sigma_up in 0.1f64..0.95,
        sigma_min in 1e-3f64..0.5,
    ) {
        let schedule = SolverSchedule { sigma_up, sigma_min, ..SolverSchedule::standard() };
        let seq = schedule.sigma_sequence(sigma0);
        if sigma0 <= sigma_min {
            prop_assert!(seq.is_empty());
        } else {
            let steps = (sigma_min / sigma0).ln() / sigma_up.ln();
            // Skip draws that land on the boundary to rounding precision.
            prop_assume!((steps - steps.round()).abs() > 1e-9);
            prop_assert_eq!(seq.len(), steps.ceil() as usize);
            prop_assert_eq!(seq[0], sigma0);
            for w in seq.windows(2) {
                prop_assert!(w[1] < w[0]);
                prop_assert!((w[1] / w[0] - sigma_up).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn square_systems_are_solved_for_any_schedule(
        seed in any::<u64>(),
        n in 2usize..10,
        sigma_up in 0.2f64..0.9,
        mu in 0.01f64..2.0,
        l_init in 1.0f64..5.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = uniform_matrix(n, n, &mut rng) + DMatrix::identity(n, n) * 3.0;
        let x = uniform_vector(n, 1.0, &mut rng);
        let y = &a * &x;
        let f = factorize(&a, FactorMode::Full).unwrap();
        let schedule = SolverSchedule {
            sigma_up,
            mu_sequence: vec![mu],
            l_init,
            ..SolverSchedule::standard()
        };
        for rule in [UpdateRule::SplitReproject, UpdateRule::Q2Split] {
            let res = sl0_solve(&f, &y, &schedule, 1.0, rule).unwrap();
            prop_assert!((&res.x_hat - &x).norm() <= 1e-8 * x.norm());
        }
    }

    #[test]
    fn iterates_stay_feasible(seed in any::<u64>(), rho in 0.05f64..0.9, delta in 0.2f64..0.9) {
        let inst = make_instance(60, delta, rho, Suite::UseGaussian, seed).unwrap();
        let f = factorize(&inst.a, FactorMode::Full).unwrap();
        let schedules = [
            (SolverSchedule::standard(), UpdateRule::SplitReproject),
            (SolverSchedule::min(), UpdateRule::SplitReproject),
            (SolverSchedule::mss(), UpdateRule::SplitReproject),
            (SolverSchedule::mss(), UpdateRule::Q2Split),
        ];
        for (schedule, rule) in schedules {
            let res = sl0_solve(&f, &inst.y, &schedule, delta, rule).unwrap();
            prop_assert!(res.residual_feasibility <= 1e-6);
            prop_assert!(res.x_hat.iter().all(|v| v.is_finite()));
        }
    }
}

#[test]
fn mss_initial_sigma_uses_delta() {
    let s = SolverSchedule::mss();
    assert_eq!(s.sigma_init, SigmaInit::InverseDelta(2.75));
    assert!((s.initial_sigma(1.1, 0.5) - 0.8).abs() < 1e-15);
    assert_eq!(SolverSchedule::standard().initial_sigma(1.5, 0.5), 3.0);
}
