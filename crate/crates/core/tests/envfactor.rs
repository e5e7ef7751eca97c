use proptest::prelude::*;

use supermarket_core::envfactor::{
    check_invariance, env_factor_closed, env_factor_combinatorial, LevelPair,
};

fn pair_strategy(n: usize) -> impl Strategy<Value = LevelPair> {
    (
        prop::collection::vec(0.0f64..1.0, n),
        prop::collection::vec(0.0f64..=1.0, n),
        0.0f64..=1.0,
    )
        .prop_map(|(raw, frac, mass)| {
            let s: f64 = raw.iter().sum::<f64>().max(1e-12);
            let prev: Vec<f64> = raw.iter().map(|v| v * mass / s).collect();
            let cur = prev.iter().zip(&frac).map(|(p, f)| p * f).collect();
            LevelPair::new(prev, cur).unwrap()
        })
}

/// Direct Σ_{j} a^j b^{d-1-j}.
fn geometric_sum(a: f64, b: f64, d: usize) -> f64 {
    (0..d).map(|j| a.powi(j as i32) * b.powi((d - 1 - j) as i32)).sum()
}

#[test]
fn rejects_bad_pairs() {
    assert!(LevelPair::new(vec![0.2, 0.3], vec![0.3, 0.1]).is_err());
    assert!(LevelPair::new(vec![0.2], vec![0.1, 0.0]).is_err());
    assert!(LevelPair::new(vec![0.7, 0.6], vec![0.0, 0.0]).is_err());
    assert!(LevelPair::new(vec![-0.1, 0.2], vec![-0.1, 0.0]).is_err());
}

#[test]
fn combinatorial_checks_phase_and_dims() {
    let p = LevelPair::new(vec![0.2, 0.1, 0.1, 0.2], vec![0.1, 0.0, 0.05, 0.1]).unwrap();
    assert!(env_factor_combinatorial(&p, 2, 3, 2, 2).is_err());
    assert!(env_factor_combinatorial(&p, 0, 3, 3, 2).is_err());
    assert!(env_factor_combinatorial(&p, 0, 0, 2, 2).is_err());
}

#[test]
fn single_phase_parts_reduce_to_binomial() {
    // m_A = 1: Part III is empty and the sum is Σ C(d,m) X^{m-1} Y^{d-m}.
    let p = LevelPair::new(vec![0.6], vec![0.25]).unwrap();
    for d in 1..6 {
        let x = 0.35f64;
        let y = 0.25f64;
        let want: f64 = (1..=d)
            .map(|m| {
                let c = (1..=m).fold(1.0, |acc, i| acc * (d - m + i) as f64 / i as f64);
                c * x.powi(m as i32 - 1) * y.powi((d - m) as i32)
            })
            .sum();
        let got = env_factor_combinatorial(&p, 0, d, 1, 1).unwrap();
        assert!((got - want).abs() < 1e-14, "d={d}");
    }
}

#[test]
fn limit_branch_is_continuous() {
    for d in 2..6 {
        let a = 0.4;
        let lim = env_factor_closed(a, a, d).unwrap();
        let near = env_factor_closed(a, a * (1.0 - 1e-9), d).unwrap();
        assert!((lim - d as f64 * a.powi(d as i32 - 1)).abs() < 1e-15);
        assert!((lim - near).abs() < 1e-8 * lim);
    }
}

proptest! {
    #[test]
    fn phase_choice_does_not_matter(
        (m_a, m_b, pair) in (1usize..4, 1usize..3)
            .prop_flat_map(|(a, b)| (Just(a), Just(b), pair_strategy(a * b))),
        d in 1usize..6,
    ) {
        let (ok, dev) = check_invariance(&pair, d, m_a, m_b, 1e-10).unwrap();
        prop_assert!(ok, "deviation {dev}");
    }

    #[test]
    fn closed_form_is_geometric_sum(b in 0.0f64..1.0, gap in 0.0f64..1.0, d in 1usize..9) {
        let a = b + gap * (1.0 - b);
        let l = env_factor_closed(a, b, d).unwrap();
        let g = geometric_sum(a, b, d);
        prop_assert!((l - g).abs() <= 1e-12 * g.max(1e-300));
    }

    #[test]
    fn bounded_by_d(b in 0.0f64..1.0, gap in 0.0f64..1.0, d in 1usize..9) {
        let a = b + gap * (1.0 - b);
        let l = env_factor_closed(a, b, d).unwrap();
        prop_assert!(l >= 0.0 && l <= d as f64 + 1e-12);
    }

    #[test]
    fn at_least_one_at_level_one(b in 0.0f64..=1.0, d in 1usize..9) {
        let l = env_factor_closed(1.0, b, d).unwrap();
        prop_assert!(l >= 1.0 - 1e-15);
    }

    #[test]
    fn monotone_in_both_levels(b in 0.0f64..0.9, gap in 0.0f64..0.5, d in 2usize..7) {
        let a = b + gap * (1.0 - b);
        let l = env_factor_closed(a, b, d).unwrap();
        prop_assert!(env_factor_closed((a + 0.05).min(1.0), b, d).unwrap() >= l);
        prop_assert!(env_factor_closed(a, (b + 0.01).min(a), d).unwrap() >= l);
    }
}
