use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use supermarket_core::catalog;
use supermarket_core::meanfield::{integrate, FractionVector, IntegrateOptions};
use supermarket_core::par::Exec;
use supermarket_core::simulator::{
    coupled_run, meanfield_gap, run, run_with, Sampling, SimConfig,
};
use supermarket_core::stochkit::{map_rate, scaled_map};
use supermarket_core::{Error, MapDescriptor, ModelSpec, PhDistribution};

fn within(est: &supermarket_core::simulator::Estimate, want: f64, k: f64) -> bool {
    let se = est.std_err.expect("several replications");
    (est.mean - want).abs() <= k * se + 1e-3
}

#[test]
fn d1_poisson_servers_are_mm1() {
    let mut cfg = SimConfig::new(catalog::poisson_exponential(0.5, 1.0, 1), 200, 1500.0, 11);
    cfg.warmup = 100.0;
    cfg.replications = 4;
    let r = run(&cfg).unwrap();
    assert!(within(&r.tails[0], 0.5, 4.0), "{:?}", r.tails[0]);
    assert!(within(&r.tails[1], 0.25, 4.0), "{:?}", r.tails[1]);
    assert!(within(&r.arrival_rate, 100.0, 4.0), "{:?}", r.arrival_rate);
}

#[test]
fn example4_phase_occupancy_matches_stationary_vector() {
    let mut cfg = SimConfig::new(catalog::example4_model(0.5, 1.0, 2), 50, 3000.0, 12);
    cfg.warmup = 50.0;
    cfg.replications = 4;
    let r = run(&cfg).unwrap();
    assert!(within(&r.u0[0], 7.0 / 12.0, 4.0), "{:?}", r.u0);
    assert!(within(&r.arrival_rate, 25.0, 4.0), "{:?}", r.arrival_rate);
    // Work conservation: busy fraction equals rho.
    assert!(within(&r.tails[0], 0.5, 4.0), "{:?}", r.tails[0]);
}

fn random_map(rng: &mut ChaCha8Rng, n: usize) -> MapDescriptor {
    let mut c = DMatrix::from_fn(n, n, |_, _| rng.random_range(0.1..2.0));
    let d = DMatrix::from_fn(n, n, |_, _| rng.random_range(0.0..1.0));
    for i in 0..n {
        c[(i, i)] = 0.0;
        let s: f64 = c.row(i).sum() + d.row(i).sum();
        c[(i, i)] = -s;
    }
    MapDescriptor::new(c, d).unwrap()
}

#[test]
fn random_map_rate_matches_simulated_arrivals() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let map = random_map(&mut rng, 3);
    // The N-scaled MAP keeps rate N·λ only when D is diagonal.
    let scaled = map_rate(&scaled_map(&map, 20));
    assert!(scaled < 20.0 * map_rate(&map));
    let mu = 4.0 * map_rate(&map);
    let model = ModelSpec::new(map, PhDistribution::exponential(mu).unwrap(), 2).unwrap();
    let mut cfg = SimConfig::new(model, 20, 2000.0, 5);
    cfg.replications = 4;
    let r = run(&cfg).unwrap();
    assert!(within(&r.arrival_rate, scaled, 4.0), "{:?} vs {scaled}", r.arrival_rate);
}

#[test]
fn audited_run_keeps_counters_consistent() {
    for model in [
        catalog::example4_model(0.8, 1.0, 3),
        catalog::poisson_ph(1.0, catalog::example2_ph(), 2),
    ] {
        let mut cfg = SimConfig::new(model, 7, 100.0, 21);
        cfg.audit = true;
        cfg.replications = 2;
        cfg.initial = None;
        let r = run(&cfg).unwrap();
        for rep in &r.replications {
            let c = &rep.counts;
            assert_eq!(c.departures + c.in_system, c.arrivals + c.initial_customers);
            assert!(c.arrivals > 0 && c.departures > 0);
        }
    }
}

#[test]
fn initial_profile_is_realized() {
    let model = catalog::poisson_ph(1.0, catalog::example2_ph(), 2);
    let mut cfg = SimConfig::new(model.clone(), 40, 5.0, 1);
    cfg.initial = Some(FractionVector::full(&model, 3));
    cfg.sample_times = vec![0.0, 5.0];
    cfg.audit = true;
    let r = run(&cfg).unwrap();
    let rep = &r.replications[0];
    assert_eq!(rep.counts.initial_customers, 120);
    assert_eq!(&rep.samples[0].tails[..3], &[1.0, 1.0, 1.0]);
    assert_eq!(rep.samples.len(), 2);
}

#[test]
fn seeded_runs_are_reproducible() {
    let mut cfg = SimConfig::new(catalog::example4_model(0.5, 1.0, 2), 30, 50.0, 99);
    cfg.replications = 3;
    cfg.sample_times = vec![0.0, 10.0, 20.0];
    let a = run_with(&cfg, Exec::Sequential).unwrap();
    let b = run_with(&cfg, Exec::Sequential).unwrap();
    assert_eq!(a, b);
    #[cfg(feature = "parallel")]
    assert_eq!(a, run_with(&cfg, Exec::Parallel).unwrap());
    cfg.seed = 100;
    assert_ne!(a, run(&cfg).unwrap());
}

#[test]
fn replications_use_distinct_streams() {
    let mut cfg = SimConfig::new(catalog::poisson_exponential(0.5, 1.0, 2), 10, 50.0, 7);
    cfg.replications = 3;
    let r = run(&cfg).unwrap();
    let keys: Vec<u64> = r.replications.iter().map(|x| x.key).collect();
    assert!(keys[0] != keys[1] && keys[1] != keys[2]);
    assert_ne!(r.replications[0].time_avg, r.replications[1].time_avg);
}

#[test]
fn bad_configs_are_rejected() {
    let model = catalog::poisson_exponential(0.5, 1.0, 2);
    let base = SimConfig::new(model.clone(), 10, 10.0, 1);
    let mut cases = Vec::new();
    let mut c = base.clone();
    c.n = 0;
    cases.push(c);
    let mut c = base.clone();
    c.horizon = 0.0;
    cases.push(c);
    let mut c = base.clone();
    c.warmup = 10.0;
    cases.push(c);
    let mut c = base.clone();
    c.replications = 0;
    cases.push(c);
    let mut c = base.clone();
    c.sample_times = vec![2.0, 1.0];
    cases.push(c);
    let mut c = base.clone();
    c.initial = Some(FractionVector::empty(&catalog::example4_model(0.5, 1.0, 2)));
    cases.push(c);
    for c in cases {
        assert!(matches!(run(&c), Err(Error::Validation(_))));
    }
}

#[test]
fn coupling_requires_increasing_d_from_one() {
    let cfg = SimConfig::new(catalog::poisson_exponential(0.5, 1.0, 1), 10, 20.0, 1);
    assert!(coupled_run(&cfg, &[2, 5]).is_err());
    assert!(coupled_run(&cfg, &[1, 1]).is_err());
    assert!(coupled_run(&cfg, &[]).is_err());
    let r = coupled_run(&cfg, &[1, 2]).unwrap();
    assert_eq!(r.totals.len(), 1);
    assert_eq!(r.violations.len(), 1);
}

#[test]
fn coupled_totals_decrease_with_d() {
    let mut cfg = SimConfig::new(catalog::poisson_ph(1.0, catalog::example2_ph(), 1), 50, 100.0, 4);
    cfg.warmup = 10.0;
    cfg.replications = 6;
    let r = coupled_run(&cfg, &[1, 2, 3]).unwrap();
    assert!(r.monotone_everywhere(), "{:?}", r.totals);
    assert!(r.mean[0] > r.mean[1] && r.mean[1] > r.mean[2]);
}

#[test]
fn gap_needs_matching_model() {
    let m = catalog::poisson_exponential(0.5, 1.0, 2);
    let opts = IntegrateOptions {
        samples: Some(vec![0.0, 1.0, 2.0]),
        ..Default::default()
    };
    let traj = integrate(&m, &FractionVector::empty(&m), 2.0, &opts).unwrap();
    let other = SimConfig::new(m.with_d(3).unwrap(), 50, 2.0, 1);
    assert!(matches!(meanfield_gap(&other, &traj), Err(Error::Validation(_))));
    let mut cfg = SimConfig::new(m, 50, 2.0, 1);
    cfg.replications = 2;
    let g = meanfield_gap(&cfg, &traj).unwrap();
    assert_eq!(g.per_replication.len(), 2);
    assert!(g.mean >= 0.0 && g.mean < 1.0);
}

#[test]
fn full_choice_without_replacement_beats_sampling_with_replacement() {
    let model = catalog::poisson_exponential(0.9, 1.0, 4);
    let mut with = SimConfig::new(model, 4, 400.0, 8);
    with.warmup = 20.0;
    with.replications = 10;
    let mut without = with.clone();
    without.sampling = Sampling::WithoutReplacement;
    let a = run(&with).unwrap().total.mean;
    let b = run(&without).unwrap().total.mean;
    assert!(b < a, "without {b} vs with {a}");
}
