use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use supermarket_core::catalog;
use supermarket_core::fixedpoint::{solve_pi, SolveOptions};
use supermarket_core::linalg::kron_product;
use supermarket_core::meanfield::{
    integrate, jacobian, jacobian_norm, lipschitz_bound, metric, random_state, rhs,
    FractionVector, IntegrateOptions,
};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn boundary_derivative_vanishes_at_omega() {
    let model = catalog::example4_model(0.5, 1.0, 2);
    let mut u = random_state(2, 1, 4, &mut rng(1));
    u.u0 = model.map.stationary().iter().copied().collect();
    let du = rhs(&u, &model).unwrap();
    assert!(du.u0.iter().all(|v| v.abs() < 1e-15));
}

#[test]
fn scalar_reduction_d1() {
    let (lambda, mu) = (0.7, 1.3);
    let model = catalog::poisson_exponential(lambda, mu, 1);
    let tails = [0.6, 0.35, 0.1, 0.02];
    let u = FractionVector::new(1, 1, vec![1.0], tails.iter().map(|t| vec![*t]).collect()).unwrap();
    let du = rhs(&u, &model).unwrap();
    for k in 0..tails.len() {
        let prev = if k == 0 { 1.0 } else { tails[k - 1] };
        let next = tails.get(k + 1).copied().unwrap_or(0.0);
        let want = lambda * (prev - tails[k]) - mu * (tails[k] - next);
        assert!((du.levels[k][0] - want).abs() < 1e-14);
    }
}

#[test]
fn rhs_rejects_wrong_dims() {
    let model = catalog::example4_model(0.5, 1.0, 2);
    let u = FractionVector::new(1, 1, vec![1.0], vec![]).unwrap();
    assert!(rhs(&u, &model).is_err());
}

#[test]
fn fixed_point_is_invariant_under_flow() {
    let model = catalog::poisson_ph(1.0, catalog::example2_ph(), 2);
    let sol = solve_pi(&model, &SolveOptions::default()).unwrap();
    let pi = sol.as_fraction(1, 2);
    let traj = integrate(&model, &pi, 20.0, &IntegrateOptions::default()).unwrap();
    for s in &traj.states {
        assert!(metric(s, &pi).unwrap() < 1e-6);
    }
}

#[test]
fn boundary_solution_matches_two_state_closed_form() {
    // C + D = [[-5, 5], [7, -7]]: p(t) = ω + (p0 − ω)e^{−12t}
    let model = catalog::example4_model(0.5, 1.0, 2);
    let g = FractionVector::new(2, 1, vec![1.0, 0.0], vec![]).unwrap();
    let traj = integrate(&model, &g, 2.0, &IntegrateOptions::default()).unwrap();
    for (t, s) in traj.times.iter().zip(&traj.states) {
        let p1 = 7.0 / 12.0 + 5.0 / 12.0 * (-12.0 * t).exp();
        assert!((s.u0[0] - p1).abs() < 1e-7, "t={t}");
        assert!((s.u0.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn poisson_exponential_converges_to_double_exponential_tail() {
    let model = catalog::poisson_exponential(0.5, 1.0, 2);
    let g = FractionVector::full(&model, 8);
    let traj = integrate(&model, &g, 200.0, &IntegrateOptions::default()).unwrap();
    let last = traj.last().tails();
    for k in 1..=5 {
        let want = 0.5f64.powi((1 << k) - 1);
        assert!((last[k - 1] - want).abs() < 1e-8, "k={k}: {} vs {want}", last[k - 1]);
    }
    assert_eq!(traj.stats.monotone_violations, 0);
    assert!(traj.stats.max_u0_drift < 1e-9);
}

#[test]
fn truncation_grows_for_slow_tails() {
    let model = catalog::poisson_exponential(0.8, 1.0, 1);
    let g = FractionVector::empty(&model);
    let traj = integrate(&model, &g, 100.0, &IntegrateOptions::default()).unwrap();
    assert!(traj.stats.final_levels > 20);
    let tails = traj.last().tails();
    assert!(*tails.last().unwrap() < 1e-12 || tails.len() < traj.stats.final_levels);
}

fn fd_check(model: &supermarket_core::ModelSpec, u: &FractionVector, seed: u64) -> f64 {
    let jb = jacobian(u, model).unwrap();
    let mut r = rng(seed);
    let dir = random_state(u.m_a, u.m_b, u.k(), &mut r);
    let h = 1e-6;
    let shift = |s: f64| {
        let mut v = u.clone();
        for (lv, dv) in v.levels.iter_mut().zip(&dir.levels) {
            for (x, dx) in lv.iter_mut().zip(dv) {
                *x += s * dx;
            }
        }
        rhs(&v, model).unwrap()
    };
    let (fp, fm) = (shift(h), shift(-h));
    let jv = jb.apply(&dir.levels);
    let mut num: f64 = 0.0;
    let mut den: f64 = 0.0;
    for k in 0..u.k() {
        for i in 0..u.block() {
            let fd = (fp.levels[k][i] - fm.levels[k][i]) / (2.0 * h);
            num = num.max((fd - jv[k][i]).abs());
            den = den.max(jv[k][i].abs());
        }
    }
    num / den
}

#[test]
fn jacobian_matches_finite_differences() {
    let mut r = rng(11);
    for d in 1..=4 {
        for named in catalog::test_models(d) {
            let m = &named.model;
            let u = random_state(m.m_a(), m.m_b(), 6, &mut r);
            let rel = fd_check(m, &u, d as u64);
            assert!(rel < 1e-6, "{} d={d}: {rel:e}", named.name);
        }
    }
}

#[test]
fn jacobian_structure() {
    let model = catalog::example4_model(0.5, 1.0, 1);
    let u = random_state(2, 1, 5, &mut rng(3));
    let v = random_state(2, 1, 5, &mut rng(4));
    let (ju, jv) = (jacobian(&u, &model).unwrap(), jacobian(&v, &model).unwrap());
    for k in 0..5 {
        assert_eq!(ju.a[k], jv.a[k]);
    }
    for k in 0..4 {
        assert_eq!(ju.b[k], jv.b[k]);
    }
    let ph_model = catalog::poisson_ph(1.0, catalog::example2_ph(), 3);
    let w = random_state(1, 2, 4, &mut rng(5));
    let jw = jacobian(&w, &ph_model).unwrap();
    let down = kron_product(&nalgebra::DMatrix::identity(1, 1), &ph_model.ph.restart());
    for c in &jw.c {
        assert_eq!(c, &down);
    }
}

#[test]
fn lipschitz_examples() {
    let model = catalog::poisson_exponential(1.0, 2.0, 2);
    assert!((lipschitz_bound(&model) - 8.0).abs() < 1e-14);
    let m1 = catalog::poisson_exponential(1.0, 2.0, 1);
    // bracket is 2 at d = 1
    assert!((lipschitz_bound(&m1) - (2.0 + 2.0 + 2.0)).abs() < 1e-14);
}

#[test]
fn sampled_jacobian_norm_within_bound() {
    let mut r = rng(21);
    for d in 1..=4 {
        for named in catalog::test_models(d) {
            let m = &named.model;
            let bound = lipschitz_bound(m);
            for _ in 0..40 {
                let u = random_state(m.m_a(), m.m_b(), 5, &mut r);
                let nj = jacobian_norm(&jacobian(&u, m).unwrap());
                assert!(nj <= bound * (1.0 + 1e-12), "{} d={d}: {nj} > {bound}", named.name);
            }
        }
    }
}

proptest! {
    #[test]
    fn metric_is_a_metric(seed in any::<u64>(), k in 1usize..6) {
        let mut r = rng(seed);
        let a = random_state(2, 2, k, &mut r);
        let b = random_state(2, 2, k + 1, &mut r);
        let c = random_state(2, 2, 3, &mut r);
        let ab = metric(&a, &b).unwrap();
        prop_assert_eq!(ab, metric(&b, &a).unwrap());
        prop_assert!(metric(&a, &c).unwrap() <= ab + metric(&b, &c).unwrap() + 1e-15);
        prop_assert_eq!(metric(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn conservation_along_trajectories(seed in any::<u64>()) {
        let model = catalog::example4_model(0.5, 1.0, 2);
        let g = random_state(2, 1, 4, &mut rng(seed));
        let opts = IntegrateOptions { samples: Some(vec![0.0, 1.0, 2.0]), ..Default::default() };
        let traj = integrate(&model, &g, 2.0, &opts).unwrap();
        prop_assert!(traj.stats.max_u0_drift < 1e-9);
        prop_assert_eq!(traj.stats.monotone_violations, 0);
    }
}
