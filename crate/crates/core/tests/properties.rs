//! Property tests for the structural invariants.

use measure_mirror::divergences::{bregman, kl, BregmanPotential, Functional, Objective};
use measure_mirror::em::{e_step, femk, rl_step, LatentProblem};
use measure_mirror::measures::{compose, disintegrate, marginal_x, marginal_y, tv_norm, ConditionalKernel, Coupling};
use measure_mirror::mirror_descent::{md_step, rate_bound, three_point_residual, Constraint, MdConfig};
use measure_mirror::sinkhorn::{contraction_check, sinkhorn_iteration, step_cols};
use measure_mirror::{DiscreteMeasure, Matrix};
use proptest::prelude::*;

fn weights(n: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<f64>> {
    n.prop_flat_map(|n| prop::collection::vec(0.01f64..1.0, n))
}

fn probability(n: usize) -> impl Strategy<Value = DiscreteMeasure> {
    prop::collection::vec(0.01f64..1.0, n).prop_map(|w| DiscreteMeasure::normalized(w).unwrap())
}

fn pair(n: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = (DiscreteMeasure, DiscreteMeasure)> {
    n.prop_flat_map(|n| (probability(n), probability(n)))
}

fn coupling(rows: usize, cols: usize) -> impl Strategy<Value = Coupling> {
    probability(rows * cols).prop_map(move |m| Coupling::from_measure(rows, cols, m).unwrap())
}

fn kernel(rows: usize, cols: usize) -> impl Strategy<Value = ConditionalKernel> {
    prop::collection::vec(prop::collection::vec(0.01f64..1.0, cols), rows)
        .prop_map(|r| ConditionalKernel::row_normalized(Matrix::from_rows(r).unwrap()).unwrap())
}

fn shape() -> impl Strategy<Value = (usize, usize)> {
    (2usize..7, 2usize..7)
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn kl_is_nonnegative_and_dominates_tv((mu, nu) in pair(1..=12)) {
        let d = kl(&mu, &nu).unwrap().finite().unwrap();
        let tv = tv_norm(&mu, &nu).unwrap();
        prop_assert!(d >= -1e-15);
        prop_assert!(tv * tv <= 2.0 * d + 1e-12);
    }

    #[test]
    fn kl_vanishes_on_the_diagonal(w in weights(1..=12)) {
        let mu = DiscreteMeasure::new(w).unwrap();
        prop_assert!(kl(&mu, &mu).unwrap().finite().unwrap().abs() < 1e-14);
    }

    #[test]
    fn compose_then_disintegrate_round_trips(
        (mu, k) in shape().prop_flat_map(|(n, m)| (probability(n), kernel(n, m)))
    ) {
        let pi = compose(&mu, &k).unwrap();
        let (mu2, k2) = disintegrate(&pi).unwrap();
        for (a, b) in mu.weights().iter().zip(mu2.weights()) {
            prop_assert!((a - b).abs() < 1e-15);
        }
        for i in 0..k.rows() {
            for j in 0..k.cols() {
                prop_assert!((k.get(i, j) - k2.get(i, j)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn marginals_carry_the_mass(pi in shape().prop_flat_map(|(n, m)| coupling(n, m))) {
        prop_assert!(close(marginal_x(&pi).mass(), pi.mass(), 1e-14));
        prop_assert!(close(marginal_y(&pi).mass(), pi.mass(), 1e-14));
        prop_assert_eq!(marginal_x(&pi.transpose()), marginal_y(&pi));
    }

    #[test]
    fn bregman_divergences_are_nonnegative((mu, nu) in pair(1..=12)) {
        for phi in [BregmanPotential::entropy(mu.len()), BregmanPotential::SquaredNorm] {
            let d = bregman(&phi, nu.weights(), mu.weights()).unwrap().finite().unwrap();
            prop_assert!(d >= -1e-14);
        }
    }

    #[test]
    fn entropy_steps_stay_on_the_simplex(
        (mu, g) in (1usize..12).prop_flat_map(|n| (probability(n), prop::collection::vec(-5.0f64..5.0, n))),
        big_l in 0.5f64..4.0,
    ) {
        let f = Objective::Linear { coefficients: g };
        let cfg = MdConfig::new(big_l, 0.0, 1, Constraint::Simplex).unwrap();
        let next = md_step(&f, &BregmanPotential::entropy(mu.len()), &mu, &cfg).unwrap();
        prop_assert!(next.is_probability());
        prop_assert!(next.is_strictly_positive());
    }

    #[test]
    fn three_point_inequality_holds(
        (mu, nu, g) in (1usize..12).prop_flat_map(|n| (probability(n), probability(n), prop::collection::vec(-5.0f64..5.0, n))),
    ) {
        let f = Objective::Linear { coefficients: g };
        let phi = BregmanPotential::entropy(mu.len());
        let cfg = MdConfig::new(1.0, 0.0, 1, Constraint::Simplex).unwrap();
        let nu_bar = md_step(&f, &phi, &mu, &cfg).unwrap();
        let r = three_point_residual(&f, &phi, mu.weights(), nu.weights(), nu_bar.weights()).unwrap();
        prop_assert!(r >= -1e-9);
    }

    #[test]
    fn rate_bound_decreases_in_n(l in 0.0f64..1.0, big_l in 1.0f64..4.0, d0 in 0.0f64..10.0, n in 1usize..200) {
        let a = rate_bound(l, big_l, d0, n).unwrap();
        let b = rate_bound(l, big_l, d0, n + 1).unwrap();
        prop_assert!(a >= 0.0);
        prop_assert!(b <= a * (1.0 + 1e-12));
        prop_assert!(a <= big_l * d0 / n as f64 * (1.0 + 1e-12));
    }

    #[test]
    fn sinkhorn_iteration_fixes_the_second_marginal(
        (pi, nu) in shape().prop_flat_map(|(n, m)| (coupling(n, m), probability(m))),
    ) {
        let mu = DiscreteMeasure::uniform(pi.rows()).unwrap();
        let start = step_cols(&pi, &nu).unwrap();
        let next = sinkhorn_iteration(&start, &mu, &nu).unwrap();
        for (a, b) in marginal_y(&next).weights().iter().zip(nu.weights()) {
            prop_assert!((a - b).abs() < 1e-15);
        }
        let before = kl(&marginal_x(&start), &mu).unwrap().finite().unwrap();
        let after = kl(&marginal_x(&next), &mu).unwrap().finite().unwrap();
        prop_assert!(after <= before + 1e-14, "{after:e} > {before:e}");
    }

    #[test]
    fn soft_c_transform_contracts(
        (f, f_tilde, mu, cost) in shape().prop_flat_map(|(n, m)| (
            prop::collection::vec(-3.0f64..3.0, n),
            prop::collection::vec(-3.0f64..3.0, n),
            probability(n),
            prop::collection::vec(prop::collection::vec(0.0f64..1.0, m), n),
        )),
        eps in 0.1f64..10.0,
    ) {
        let cost = Matrix::from_rows(cost).unwrap();
        let r = contraction_check(&f, &f_tilde, &mu, &cost, eps).unwrap();
        prop_assert!(r.ok, "{} > {}", r.lhs, r.rhs);
    }

    #[test]
    fn richardson_lucy_conserves_mass_and_descends(
        (k, nu, mu) in shape().prop_flat_map(|(n, m)| (kernel(n, m), probability(m), probability(n))),
    ) {
        let p = LatentProblem::new(k, nu, mu.clone()).unwrap();
        let next = rl_step(&mu, &p).unwrap();
        prop_assert!((next.mass() - 1.0).abs() < 1e-14);
        prop_assert!(p.objective(&next).unwrap() <= p.objective(&mu).unwrap() + 1e-14);
    }

    #[test]
    fn e_step_matches_observations_and_zeroes_nothing(
        (k, nu, mu) in shape().prop_flat_map(|(n, m)| (kernel(n, m), probability(m), probability(n))),
    ) {
        let p = LatentProblem::new(k.clone(), nu.clone(), mu.clone()).unwrap();
        let pi = e_step(&mu, &p).unwrap();
        for (a, b) in marginal_y(&pi).weights().iter().zip(nu.weights()) {
            prop_assert!((a - b).abs() < 1e-15);
        }
        prop_assert!(femk(&pi, &k).unwrap() >= -1e-14);
        let grad = Objective::Femk { kernel: k }.first_variation(pi.as_slice()).unwrap();
        prop_assert!(grad.iter().all(|v| v.is_finite()));
    }
}
