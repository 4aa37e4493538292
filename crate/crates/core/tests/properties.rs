mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use watermark_core::lqg::{kalman_steady, loop_cost, lqg_gain, ClosedLoopDesign, CostWeights};
use watermark_core::numerics::{
    chi2_cdf, chi2_quantile, dare_residual, generalized_symmetric_eig_max, inf_norm, mat_exp, solve_dare, solve_dlyap,
    spectral_radius, zoh_pair, zoh_process_noise, Matrix,
};
use watermark_core::plant::DiscretePlant;
use watermark_core::watermark::{
    cost_increase, expected_shift, objective_matrices, optimize_watermark_fixed_period, steady_watermark_cov,
};

fn rel(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// Midpoint rule with `steps` panels on `∫₀ᵀ e^{Aτ} B dτ` and `∫₀ᵀ e^{Aτ} Q e^{Aᵀτ} dτ`.
fn quadrature_zoh(a: &Matrix, b: &Matrix, q: &Matrix, period: f64, steps: usize) -> (Matrix, Matrix) {
    let h = period / steps as f64;
    let step = mat_exp(a, h).unwrap();
    let mut e = mat_exp(a, 0.5 * h).unwrap();
    let n = a.nrows();
    let mut integral = Matrix::zeros(n, n);
    let mut noise = Matrix::zeros(n, n);
    for _ in 0..steps {
        integral += &e;
        noise += &e * q * e.transpose();
        e = &step * e;
    }
    (integral * h * b, noise * h)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn exponential_semigroup(seed in any::<u64>(), n in 1usize..=8, s in 0.01f64..2.0, t in 0.01f64..2.0) {
        let mut r = rng(seed);
        let g = gaussian(&mut r, n, n);
        // Shifted left of the imaginary axis.
        let m = &g - Matrix::identity(n, n) * (inf_norm(&g) + 0.1);
        let lhs = mat_exp(&m, s).unwrap() * mat_exp(&m, t).unwrap();
        let rhs = mat_exp(&m, s + t).unwrap();
        prop_assert!(rel(&lhs, &rhs) < 1e-10, "relative error {}", rel(&lhs, &rhs));
    }

    #[test]
    fn discretization_matches_quadrature(seed in any::<u64>(), n in 1usize..=6, p in 1usize..=3, period in 0.01f64..0.5) {
        let mut r = rng(seed);
        let a = gaussian(&mut r, n, n);
        let b = gaussian(&mut r, n, p);
        let q = spd(&mut r, n, 0.05);
        let (ad, bd) = zoh_pair(&a, &b, period).unwrap();
        let qd = zoh_process_noise(&a, &q, period).unwrap();
        let (bq, qq) = quadrature_zoh(&a, &b, &q, period, 100_000);
        prop_assert!(rel(&ad, &mat_exp(&a, period).unwrap()) < 1e-12);
        prop_assert!(rel(&bd, &bq) < 1e-8, "B_d error {}", rel(&bd, &bq));
        prop_assert!(rel(&qd, &qq) < 1e-8, "Q_d error {}", rel(&qd, &qq));
    }

    #[test]
    fn dare_residual_and_stability(seed in any::<u64>(), n in 1usize..=6, p in 1usize..=3, radius in 0.2f64..1.6) {
        let mut r = rng(seed);
        let a = with_radius(gaussian(&mut r, n, n), radius);
        let b = gaussian(&mut r, n, p);
        let w = spd(&mut r, n, 0.1);
        let u = spd(&mut r, p, 0.1);
        let s = solve_dare(&a, &b, &w, &u).unwrap();
        let res = dare_residual(&a, &b, &w, &u, &s);
        prop_assert!(res <= 1e-10 * (1.0 + inf_norm(&s)), "residual {res}");
        let bts = b.transpose() * &s;
        let gain = (&u + &bts * &b).try_inverse().unwrap() * bts * &a;
        prop_assert!(spectral_radius(&(&a - &b * gain)) < 1.0);
    }

    #[test]
    fn dlyap_matches_truncated_series(seed in any::<u64>(), n in 1usize..=6, radius in 0.0f64..0.9) {
        let mut r = rng(seed);
        let m = with_radius(gaussian(&mut r, n, n), radius);
        let q = spd(&mut r, n, 0.0);
        let x = solve_dlyap(&m, &q).unwrap();
        let mut series = Matrix::zeros(n, n);
        let mut power = Matrix::identity(n, n);
        for _ in 0..=200 {
            series += &power * &q * power.transpose();
            power = &m * power;
        }
        prop_assert!(rel(&x, &series) < 1e-8, "relative error {}", rel(&x, &series));
        prop_assert!(inf_norm(&(&m * &x * m.transpose() + &q - &x)) <= 1e-10 * (1.0 + inf_norm(&x)));
    }

    #[test]
    fn generalized_eig_dominates_rayleigh_quotients(seed in any::<u64>(), n in 1usize..=6) {
        let mut r = rng(seed);
        let g = gaussian(&mut r, n, n);
        let m = &g * g.transpose();
        let nn = spd(&mut r, n, 0.2);
        let e = generalized_symmetric_eig_max(&m, &nn).unwrap();
        prop_assert!((&m * &e.vector - e.value * (&nn * &e.vector)).norm() < 1e-9 * (1.0 + e.value));
        for _ in 0..1000 {
            let u = gaussian(&mut r, n, 1);
            let ratio = (u.transpose() * &m * &u)[(0, 0)] / (u.transpose() * &nn * &u)[(0, 0)];
            prop_assert!(ratio <= e.value * (1.0 + 1e-12) + 1e-12);
        }
    }

    #[test]
    fn sampled_noise_scales_exactly(seed in any::<u64>(), m in 1usize..=4, period in 1e-4f64..1.0) {
        let mut r = rng(seed);
        let rr = spd(&mut r, m, 0.1);
        let cont = watermark_core::plant::ContinuousPlant::new(
            Matrix::zeros(1, 1), Matrix::zeros(1, 1), Matrix::zeros(m, 1), Matrix::zeros(1, 1), rr.clone(),
        ).unwrap();
        let d = cont.discretize(period).unwrap();
        prop_assert!(rel(&(d.r() * period), &rr) < 1e-15);
    }

    #[test]
    fn synthesized_loops_are_stable(seed in any::<u64>(), n in 1usize..=6, p in 1usize..=3, m in 1usize..=3, radius in 0.2f64..1.5) {
        let plant = random_plant(seed, n, p, m, radius);
        let weights = random_weights(seed, n, p);
        let k = kalman_steady(&plant).unwrap();
        let l = lqg_gain(&plant, &weights).unwrap();
        let gate = Matrix::identity(n, n) - &k.gain * plant.c();
        prop_assert!(spectral_radius(&(plant.a() + plant.b() * &l.gain)) < 1.0);
        prop_assert!(spectral_radius(&(gate * plant.a())) < 1.0);
    }

    #[test]
    fn cost_is_coordinate_free(seed in any::<u64>(), n in 1usize..=6, p in 1usize..=3, m in 1usize..=3) {
        let plant = random_plant(seed, n, p, m, 1.1);
        let weights = random_weights(seed, n, p);
        let mut r = rng(seed.wrapping_add(17));
        let o = orthogonal(&mut r, n);
        let ot = o.transpose();
        let moved = DiscretePlant::new(
            &ot * plant.a() * &o, &ot * plant.b(), plant.c() * &o, &ot * plant.q() * &o, plant.r().clone(), 0.1,
        ).unwrap();
        let moved_weights = CostWeights::new(&ot * weights.w() * &o, weights.u().clone()).unwrap();
        let j = ClosedLoopDesign::synthesize(&plant, &weights).unwrap().nominal_cost;
        let j2 = ClosedLoopDesign::synthesize(&moved, &moved_weights).unwrap().nominal_cost;
        prop_assert!((j - j2).abs() <= 1e-9 * j.abs().max(1.0), "{j} vs {j2}");
    }

    #[test]
    fn watermark_optimizer_properties(seed in any::<u64>(), n in 1usize..=6, p in 1usize..=3, m in 1usize..=3, budget in 0.1f64..10.0) {
        let plant = random_plant(seed, n, p, m, 1.0);
        let weights = random_weights(seed, n, p);
        let design = ClosedLoopDesign::synthesize(&plant, &weights).unwrap();
        prop_assume!(design.stability().stable);
        let wm = optimize_watermark_fixed_period(&plant, &design, &weights, budget, 10).unwrap();

        // Budget feasibility.
        prop_assert!(wm.cost_increase <= budget * (1.0 + 1e-9));

        // Rank one.
        let mut eig: Vec<f64> = wm.cov_q.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
        eig.sort_by(|a, b| b.total_cmp(a));
        if eig.len() > 1 {
            prop_assert!(eig[1].abs() < 1e-9 * eig[0]);
        }

        // 𝒰 against its defining series.
        let a_cl = &design.closed_loop;
        let forcing = plant.b() * &wm.cov_q * plant.b().transpose();
        let mut series = Matrix::zeros(n, n);
        let mut power = Matrix::identity(n, n);
        for _ in 0..5000 {
            series += &power * &forcing * power.transpose();
            power = a_cl * power;
            if power.norm() < 1e-12 { break; }
        }
        prop_assert!(rel(&wm.steady_u, &series) < 1e-8, "𝒰 error {}", rel(&wm.steady_u, &series));

        // Trace duality on an arbitrary 𝒬.
        let (mm, _) = objective_matrices(&plant, &design, &weights).unwrap();
        let mut r = rng(seed ^ 99);
        let g = gaussian(&mut r, p, p);
        let q = &g * g.transpose();
        let u = steady_watermark_cov(&plant, &design, &q).unwrap();
        let direct = expected_shift(&design, &u, 1).unwrap() / 2.0;
        let dual = (&mm * &q).trace();
        prop_assert!((direct - dual).abs() <= 1e-9 * dual.abs().max(1e-300), "{direct} vs {dual}");

        // Linearity in the budget.
        let doubled = optimize_watermark_fixed_period(&plant, &design, &weights, 2.0 * budget, 10).unwrap();
        prop_assert!(rel(&doubled.cov_q, &(&wm.cov_q * 2.0)) < 1e-9);
        prop_assert!((doubled.expected_shift - 2.0 * wm.expected_shift).abs() <= 1e-9 * wm.expected_shift);
    }

    #[test]
    fn watermark_cost_increase_identity(seed in any::<u64>(), n in 1usize..=6, p in 1usize..=3, m in 1usize..=3) {
        let plant = random_plant(seed, n, p, m, 1.1);
        let weights = random_weights(seed, n, p);
        let design = ClosedLoopDesign::synthesize(&plant, &weights).unwrap();
        let mut r = rng(seed ^ 3);
        let g = gaussian(&mut r, p, p);
        let q = &g * g.transpose();
        let marked = loop_cost(&plant, &design, &weights, &q).unwrap();
        let predicted = cost_increase(&plant, &design.riccati, &weights, &q).unwrap();
        let err = (marked - design.nominal_cost - predicted).abs();
        prop_assert!(err <= 1e-8 * marked.abs().max(1.0), "{marked} − {} vs {predicted}", design.nominal_cost);
    }

    #[test]
    fn optimizer_dominates_random_feasible_points(seed in any::<u64>(), n in 1usize..=6, p in 1usize..=3, m in 1usize..=3) {
        let plant = random_plant(seed, n, p, m, 1.0);
        let weights = random_weights(seed, n, p);
        let design = ClosedLoopDesign::synthesize(&plant, &weights).unwrap();
        prop_assume!(design.stability().stable);
        let best = optimize_watermark_fixed_period(&plant, &design, &weights, 1.0, 10).unwrap();
        let (mm, _) = objective_matrices(&plant, &design, &weights).unwrap();
        let mut r = rng(seed ^ 7);
        for _ in 0..500 {
            let rank = r.random_range(1..=p);
            let g = gaussian(&mut r, p, rank);
            let q = &g * g.transpose();
            let scale = cost_increase(&plant, &design.riccati, &weights, &q).unwrap();
            let q = q / scale;
            let shift = 2.0 * (&mm * &q).trace() * 10.0;
            prop_assert!(shift <= best.expected_shift * (1.0 + 1e-9), "{shift} > {}", best.expected_shift);
        }
    }
}

#[test]
fn chi2_quantile_inverts_cdf() {
    for dof in 1..=64 {
        for i in 1..=99 {
            let p = i as f64 / 100.0;
            let x = chi2_quantile(dof, p).unwrap();
            let back = chi2_cdf(dof, x).unwrap();
            assert!((back - p).abs() < 1e-6, "dof {dof} p {p}: {back}");
        }
    }
}

#[test]
fn shift_vanishes_as_period_shrinks() {
    let shifts: Vec<f64> = [1e-1, 1e-2, 1e-3, 1e-4]
        .iter()
        .map(|t| quadrotor_at(*t).2.expected_shift)
        .collect();
    assert!(shifts.windows(2).all(|w| w[1] < w[0]), "{shifts:?}");
    assert!(shifts[3] < 1e-3);
}

#[test]
fn small_period_limits_of_discretization() {
    let cont = quadrotor();
    let n = cont.states();
    for t in [1e-3, 1e-4] {
        let d = cont.discretize(t).unwrap();
        let drift = (d.a() - Matrix::identity(n, n)).norm() / t;
        assert!(drift < 2.0 * cont.a().norm(), "‖A_d − I‖/T = {drift}");
        assert!(d.b().norm() / t < 1.01 * cont.b().norm());
        let ratio = d.q().norm() / t / cont.q().norm();
        assert!((ratio - 1.0).abs() < 10.0 * t, "‖Q_d‖/(T‖Q‖) = {ratio}");
    }
}
