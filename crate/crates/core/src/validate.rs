//! Acceptance suite shared by the `validate` subcommand and the test target.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::catalog::{self, Named};
use crate::envfactor::{check_invariance, LevelPair};
use crate::fixedpoint::{poisson_explicit, rg_reassembly_error, solve_pi, tail, SolveOptions};
use crate::meanfield::{
    integrate, jacobian, jacobian_norm, lipschitz_bound, metric, random_state, rhs, FractionVector,
    IntegrateOptions,
};
use crate::par::{map_range, map_slice, Exec};
use crate::perf::{self, Grid, TableRow, DEFAULT_EPS};
use crate::simulator::{coupled_run_with, meanfield_gap_with, SimConfig};
use crate::stochkit::{map_rate, ph_mean, traffic_intensity, ModelSpec, PhDistribution};

/// Result of one check.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub id: String,
    pub name: String,
    pub passed: bool,
    /// Informational checks never affect the exit status.
    pub gating: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl Outcome {
    pub fn line(&self) -> String {
        let tag = match (self.gating, self.passed) {
            (false, _) => "INFO",
            (true, true) => "PASS",
            (true, false) => "FAIL",
        };
        format!(
            "{tag} [{}] {} ({:.2}s): {}",
            self.id,
            self.name,
            self.elapsed.as_secs_f64(),
            self.detail
        )
    }
}

fn timed(id: &str, name: &str, f: impl FnOnce() -> (bool, String)) -> Outcome {
    let t0 = Instant::now();
    let (passed, detail) = f();
    Outcome {
        id: id.into(),
        name: name.into(),
        passed,
        gating: true,
        detail,
        elapsed: t0.elapsed(),
    }
}

fn random_pair(rng: &mut ChaCha8Rng, n: usize) -> LevelPair {
    let mut prev: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let s: f64 = prev.iter().sum();
    let mass: f64 = rng.random();
    prev.iter_mut().for_each(|v| *v *= mass / s);
    let cur = match rng.random_range(0..10) {
        0 => prev.clone(),
        1 => vec![0.0; n],
        _ => prev.iter().map(|p| p * rng.random::<f64>()).collect(),
    };
    LevelPair::new(prev, cur).expect("monotone by construction")
}

/// 1. Phase independence of the environment factor.
pub fn criterion_1(exec: Exec) -> Outcome {
    timed("1", "environment-factor invariance", || {
        let t0 = Instant::now();
        let devs = map_range(exec, 1000, |i| {
            let mut rng = ChaCha8Rng::seed_from_u64(0xE1 + i as u64);
            let m_a = rng.random_range(1..=3);
            let m_b = rng.random_range(1..=3);
            let d = rng.random_range(1..=4);
            let pair = random_pair(&mut rng, m_a * m_b);
            check_invariance(&pair, d, m_a, m_b, 1e-10).map(|r| r.1).unwrap_or(f64::INFINITY)
        });
        let worst = devs.iter().copied().fold(0.0, f64::max);
        let bad = devs.iter().filter(|d| !(**d <= 1e-10)).count();
        let secs = t0.elapsed().as_secs_f64();
        (
            bad == 0 && secs <= 30.0,
            format!("1000 pairs, {bad} above 1e-10, max rel dev {worst:.2e}, {secs:.2}s"),
        )
    })
}

/// 2. Values printed in the examples.
pub fn criterion_2() -> Outcome {
    timed("2", "printed example values", || {
        let mut notes = Vec::new();
        let mut ok = true;
        let mu = 1.0 / ph_mean(&catalog::example2_ph()).unwrap();
        ok &= (mu - 3.4118).abs() <= 1e-4;
        notes.push(format!("mu={mu:.5}"));
        for (i, want) in [(1, 0.2931), (2, 0.3636), (3, 0.4250)] {
            let m = catalog::poisson_ph(1.0, catalog::example3_ph(i), 2);
            let rho = traffic_intensity(&m).0;
            ok &= (rho - want).abs() <= 1e-4;
            notes.push(format!("rho({i})={rho:.5}"));
        }
        for lambda in [1.0, 0.5, 0.9] {
            let map = catalog::example4_map(lambda);
            let w = map.stationary();
            let werr = (w[0] - 7.0 / 12.0).abs().max((w[1] - 5.0 / 12.0).abs());
            let lerr = (map_rate(&map) - lambda).abs();
            ok &= werr <= 1e-12 && lerr <= 1e-12;
            notes.push(format!("ex4 lambda={lambda}: |w err|={werr:.1e}, |lambda err|={lerr:.1e}"));
        }
        (ok, notes.join(", "))
    })
}

fn model_matrix() -> Vec<(usize, Named)> {
    (1..=3)
        .flat_map(|d| catalog::test_models(d).into_iter().map(move |m| (d, m)))
        .collect()
}

/// 3. Doubly exponential tail of the fixed point.
pub fn criterion_3(exec: Exec) -> Outcome {
    timed("3", "doubly exponential tail", || {
        let rows = map_slice(exec, &model_matrix(), |(d, named)| {
            let t0 = Instant::now();
            let res = solve_pi(&named.model, &SolveOptions::default());
            let secs = t0.elapsed().as_secs_f64();
            match res {
                Ok(sol) => (
                    sol.tail_deviation <= 1e-6 && secs <= 10.0,
                    format!("{} d={d}: max rel dev {:.2e} ({secs:.2}s)", named.name, sol.tail_deviation),
                ),
                Err(e) => (false, format!("{} d={d}: {e}", named.name)),
            }
        });
        let ok = rows.iter().all(|r| r.0);
        let failing: Vec<String> = rows.iter().filter(|r| !r.0).map(|r| r.1.clone()).collect();
        let detail = if ok {
            format!("{} models within 1e-6", rows.len())
        } else {
            format!("{}/{} fail: {}", failing.len(), rows.len(), failing.join("; "))
        };
        (ok, detail)
    })
}

/// 4. Matrix-analytic π against the Poisson recursion.
pub fn criterion_4(exec: Exec) -> Outcome {
    timed("4", "Poisson oracle equivalence", || {
        let mut cases = Vec::new();
        for d in 1..=3 {
            cases.push(catalog::poisson_exponential(0.5, 1.0, d));
            cases.push(catalog::poisson_ph(1.0, catalog::example2_ph(), d));
            for i in 1..=3 {
                cases.push(catalog::poisson_ph(1.0, catalog::example3_ph(i), d));
            }
        }
        let devs = map_slice(exec, &cases, |m| {
            let sol = match solve_pi(m, &SolveOptions::default()) {
                Ok(s) => s,
                Err(_) => return f64::INFINITY,
            };
            let lambda = m.lambda();
            let oracle = match poisson_explicit(&m.ph, lambda, m.d, sol.k()) {
                Ok(o) => o,
                Err(_) => return f64::INFINITY,
            };
            sol.pi
                .iter()
                .zip(&oracle)
                .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
                .fold(0.0, f64::max)
        });
        let worst = devs.iter().copied().fold(0.0, f64::max);
        (
            worst <= 1e-8,
            format!("{} single-phase-arrival models, max |diff| {worst:.2e}", cases.len()),
        )
    })
}

/// 5. Residual of π and exactness of the UL factorization.
pub fn criterion_5(exec: Exec) -> Outcome {
    timed("5", "fixed-point residual and RG factorization", || {
        let rows = map_slice(exec, &model_matrix(), |(_, named)| {
            match solve_pi(&named.model, &SolveOptions::default()) {
                Ok(sol) => (sol.residual, rg_reassembly_error(&sol.measures)),
                Err(_) => (f64::INFINITY, f64::INFINITY),
            }
        });
        let res = rows.iter().map(|r| r.0).fold(0.0, f64::max);
        let rg = rows.iter().map(|r| r.1).fold(0.0, f64::max);
        (
            res <= 1e-8 && rg <= 1e-8,
            format!("{} models, max residual {res:.2e}, max reassembly error {rg:.2e}", rows.len()),
        )
    })
}

fn initial_conditions(model: &ModelSpec, seed: u64) -> Vec<(&'static str, FractionVector)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vec![
        ("empty", FractionVector::empty(model)),
        ("full5", FractionVector::full(model, 5)),
        ("random", random_state(model.m_a(), model.m_b(), 6, &mut rng)),
    ]
}

/// Integrate from three starts to 200/μ and compare with π.
fn ode_to_fixed_point(model: &ModelSpec, seed: u64) -> (f64, f64, usize, String) {
    let sol = match solve_pi(model, &SolveOptions::default()) {
        Ok(s) => s,
        Err(e) => return (f64::INFINITY, f64::INFINITY, 0, e.to_string()),
    };
    let pi = sol.as_fraction(model.m_a(), model.m_b());
    let t_end = 200.0 * model.mean_service();
    let opts = IntegrateOptions {
        samples: Some((0..=10).map(|i| t_end * i as f64 / 10.0).collect()),
        ..Default::default()
    };
    let mut worst: f64 = 0.0;
    let mut drift: f64 = 0.0;
    let mut mono = 0;
    for (label, g) in initial_conditions(model, seed) {
        match integrate(model, &g, t_end, &opts) {
            Ok(tr) => {
                worst = worst.max(metric(tr.last(), &pi).unwrap_or(f64::INFINITY));
                drift = drift.max(tr.stats.max_u0_drift);
                mono += tr.stats.monotone_violations;
            }
            Err(e) => return (f64::INFINITY, drift, mono, format!("{label}: {e}")),
        }
    }
    (worst, drift, mono, String::new())
}

/// 6. ODE trajectories settle on the fixed point.
pub fn criterion_6(exec: Exec) -> Outcome {
    timed("6", "ODE converges to fixed point", || {
        let rows = map_slice(exec, &model_matrix(), |(d, named)| {
            let (m, drift, mono, err) = ode_to_fixed_point(&named.model, 60 + *d as u64);
            (format!("{} d={d}", named.name), m, drift, mono, err)
        });
        let worst = rows.iter().map(|r| r.1).fold(0.0, f64::max);
        let drift = rows.iter().map(|r| r.2).fold(0.0, f64::max);
        let mono: usize = rows.iter().map(|r| r.3).sum();
        let errs: Vec<String> = rows
            .iter()
            .filter(|r| !r.4.is_empty())
            .map(|r| format!("{}: {}", r.0, r.4))
            .collect();
        (
            worst <= 1e-5 && drift <= 1e-9 && errs.is_empty(),
            format!(
                "{} models x 3 starts, max metric {worst:.2e}, max u0 drift {drift:.1e}, monotonicity violations {mono}{}",
                rows.len(),
                if errs.is_empty() { String::new() } else { format!(", errors: {}", errs.join("; ")) }
            ),
        )
    })
}

fn fd_relative(model: &ModelSpec, u: &FractionVector, dir: &FractionVector) -> f64 {
    let jb = match jacobian(u, model) {
        Ok(j) => j,
        Err(_) => return f64::INFINITY,
    };
    let h = 1e-6;
    let shifted = |s: f64| {
        let mut v = u.clone();
        for (lv, dv) in v.levels.iter_mut().zip(&dir.levels) {
            for (x, dx) in lv.iter_mut().zip(dv) {
                *x += s * dx;
            }
        }
        rhs(&v, model).expect("dims match")
    };
    let (fp, fm) = (shifted(h), shifted(-h));
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
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

fn models_d1_to_4() -> Vec<ModelSpec> {
    (1..=4)
        .flat_map(|d| catalog::test_models(d).into_iter().map(|n| n.model))
        .collect()
}

/// 7. Jacobian against finite differences, and the Lipschitz bound.
pub fn criterion_7(exec: Exec) -> Outcome {
    timed("7", "Jacobian and Lipschitz bound", || {
        let models = models_d1_to_4();
        let fd = map_range(exec, 100, |i| {
            let m = &models[i % models.len()];
            let mut rng = ChaCha8Rng::seed_from_u64(0x7A + i as u64);
            let k = rng.random_range(1..=8);
            let u = random_state(m.m_a(), m.m_b(), k, &mut rng);
            let dir = random_state(m.m_a(), m.m_b(), k, &mut rng);
            fd_relative(m, &u, &dir)
        });
        let worst_fd = fd.iter().copied().fold(0.0, f64::max);
        let norms = map_range(exec, 500, |i| {
            let m = &models[i % models.len()];
            let mut rng = ChaCha8Rng::seed_from_u64(0x7B + i as u64);
            let k = rng.random_range(1..=8);
            let u = random_state(m.m_a(), m.m_b(), k, &mut rng);
            let nj = jacobian(&u, m).map(|j| jacobian_norm(&j)).unwrap_or(f64::INFINITY);
            nj / lipschitz_bound(m)
        });
        let violations = norms.iter().filter(|r| **r > 1.0 + 1e-12).count();
        let worst_ratio = norms.iter().copied().fold(0.0, f64::max);
        (
            worst_fd <= 1e-6 && violations == 0,
            format!(
                "100 states max FD rel err {worst_fd:.2e}; 500 states, {violations} bound violations, max |DF|/M {worst_ratio:.4}"
            ),
        )
    })
}

/// Sample grid and model used for the simulation gap check.
pub fn gap_setup(model: &ModelSpec) -> crate::Result<crate::meanfield::Trajectory> {
    let opts = IntegrateOptions {
        samples: Some((0..=40).map(|i| 0.5 * i as f64).collect()),
        ..Default::default()
    };
    integrate(model, &FractionVector::empty(model), 20.0, &opts)
}

/// 8. Simulation tracks the ODE at desk scale.
pub fn criterion_8(exec: Exec) -> Outcome {
    timed("8", "simulation vs mean field", || {
        let t0 = Instant::now();
        let mut ok = true;
        let mut notes = Vec::new();
        for (name, model) in [
            ("poisson-exp d=2", catalog::poisson_exponential(0.5, 1.0, 2)),
            ("map-ex4-exp d=2", catalog::example4_model(0.5, 1.0, 2)),
        ] {
            let traj = match gap_setup(&model) {
                Ok(t) => t,
                Err(e) => return (false, format!("{name}: {e}")),
            };
            let mut cfg = SimConfig::new(model.clone(), 1000, 20.0, 0x8A);
            cfg.replications = 10;
            let big = meanfield_gap_with(&cfg, &traj, exec);
            let mut small_cfg = SimConfig::new(model.clone(), 100, 20.0, 0x8B);
            small_cfg.replications = 20;
            let mut large_cfg = small_cfg.clone();
            large_cfg.n = 1000;
            let pair = meanfield_gap_with(&small_cfg, &traj, exec)
                .and_then(|a| meanfield_gap_with(&large_cfg, &traj, exec).map(|b| (a, b)));
            match (big, pair) {
                (Ok(g), Ok((a, b))) => {
                    let dec = a
                        .per_replication
                        .iter()
                        .zip(&b.per_replication)
                        .filter(|(x, y)| y < x)
                        .count();
                    let pass = g.mean <= 0.05 && dec >= 18;
                    ok &= pass;
                    notes.push(format!(
                        "{name}: mean gap at N=1000 {:.4}, paired decreases {dec}/20",
                        g.mean
                    ));
                }
                (Err(e), _) | (_, Err(e)) => {
                    ok = false;
                    notes.push(format!("{name}: {e}"));
                }
            }
        }
        let secs = t0.elapsed().as_secs_f64();
        (ok && secs <= 300.0, format!("{} ({secs:.1}s)", notes.join("; ")))
    })
}

/// 9. Coupled systems: more choices never hold more customers.
pub fn criterion_9(exec: Exec) -> Outcome {
    timed("9", "coupling dominance", || {
        let mut ok = true;
        let mut notes = Vec::new();
        for (name, model) in [
            ("poisson-exp", catalog::poisson_exponential(0.5, 1.0, 1)),
            ("map-ex4-exp", catalog::example4_model(0.5, 1.0, 1)),
        ] {
            let mut cfg = SimConfig::new(model, 100, 200.0, 0x9A);
            cfg.warmup = 20.0;
            cfg.replications = 30;
            match coupled_run_with(&cfg, &[1, 2, 5, 10], exec) {
                Ok(r) => {
                    ok &= r.monotone_everywhere();
                    let means: Vec<String> = r.mean.iter().map(|m| format!("{m:.2}")).collect();
                    notes.push(format!(
                        "{name}: means [{}], violations {:?}",
                        means.join(", "),
                        r.violations
                    ));
                }
                Err(e) => {
                    ok = false;
                    notes.push(format!("{name}: {e}"));
                }
            }
        }
        (ok, notes.join("; "))
    })
}

fn strictly(xs: &[f64], increasing: bool) -> bool {
    xs.windows(2).all(|w| if increasing { w[1] > w[0] } else { w[1] < w[0] })
}

fn series<'a>(rows: &'a [TableRow], label: &str) -> Vec<&'a TableRow> {
    rows.iter().filter(|r| r.series == label).collect()
}

/// Trend checks over all four example tables; returns failure notes.
pub fn table_trends(grid: &Grid) -> Vec<String> {
    let mut bad = Vec::new();
    let mut check = |cond: bool, what: String| {
        if !cond {
            bad.push(what);
        }
    };
    let t1 = perf::example_tables(1, grid).unwrap_or_default();
    check(t1.iter().all(|r| r.stable), "example 1 has unstable rows".into());
    for &(m, d) in &grid.erlang_pairs {
        let s = series(&t1, &format!("m={m},d={d}"));
        let eq: Vec<f64> = s.iter().map(|r| r.eq).collect();
        check(strictly(&eq, false), format!("example 1 m={m},d={d}: EQ not decreasing in eta"));
    }
    for i in 0..grid.eta.len() {
        let at = |m: usize, d: usize| {
            series(&t1, &format!("m={m},d={d}")).get(i).map_or(f64::NAN, |r| r.eq)
        };
        check(at(2, 2) < at(3, 2) && at(3, 2) < at(4, 2), format!("example 1: EQ not increasing in m at eta index {i}"));
        check(at(2, 10) < at(2, 2), format!("example 1: EQ not decreasing in d at eta index {i}"));
    }
    let t2 = perf::example_tables(2, grid).unwrap_or_default();
    for law in ["exponential", "ph"] {
        for d in [1, 2] {
            let s = series(&t2, &format!("{law},d={d}"));
            let eq: Vec<f64> = s.iter().map(|r| r.eq).collect();
            let et: Vec<f64> = s.iter().map(|r| r.et).collect();
            check(strictly(&eq, true) && strictly(&et, true), format!("example 2 {law},d={d}: not increasing in lambda"));
        }
        let s1 = series(&t2, &format!("{law},d=1"));
        let s2 = series(&t2, &format!("{law},d=2"));
        for (a, b) in s1.iter().zip(&s2) {
            check(b.eq < a.eq && b.et < a.et, format!("example 2 {law}: d=2 not below d=1 at lambda {}", a.value));
        }
    }
    let t3 = perf::example_tables(3, grid).unwrap_or_default();
    for i in 1..=3 {
        let s = series(&t3, &format!("T({i})"));
        let et: Vec<f64> = s.iter().map(|r| r.et).collect();
        check(strictly(&et, false), format!("example 3 T({i}): ET not decreasing in d"));
    }
    for j in 0..grid.d3.len() {
        let at = |i: usize| series(&t3, &format!("T({i})")).get(j).map_or(f64::NAN, |r| r.et);
        check(at(1) < at(2) && at(2) < at(3), format!("example 3: ET(1)<ET(2)<ET(3) fails at d={}", grid.d3[j]));
    }
    let t4 = perf::example_tables(4, grid).unwrap_or_default();
    for &d in &grid.d4 {
        let s = series(&t4, &format!("d={d}"));
        let eq: Vec<f64> = s.iter().map(|r| r.eq).collect();
        let et: Vec<f64> = s.iter().map(|r| r.et).collect();
        check(strictly(&eq, true) && strictly(&et, true), format!("example 4 d={d}: not increasing in lambda"));
        check(s.iter().all(|r| (r.rho - r.value).abs() < 1e-12), format!("example 4 d={d}: rho != lambda"));
    }
    for w in grid.d4.windows(2) {
        let a = series(&t4, &format!("d={}", w[0]));
        let b = series(&t4, &format!("d={}", w[1]));
        for (x, y) in a.iter().zip(&b) {
            check(y.eq < x.eq && y.et < x.et, format!("example 4: d={} not below d={} at lambda {}", w[1], w[0], x.value));
        }
    }
    bad
}

/// 10. Closed-form performance measures and figure trends.
pub fn criterion_10() -> Outcome {
    timed("10", "performance formulas and example trends", || {
        let eq = perf::mean_queue_length(0.5, 1, DEFAULT_EPS).unwrap_or(f64::NAN);
        let exp = PhDistribution::exponential(1.0).unwrap();
        let et = perf::mean_sojourn(&exp, 0.5, 1, DEFAULT_EPS).unwrap_or(f64::NAN);
        let little = (et - eq / 0.5).abs();
        let bad = table_trends(&Grid::default());
        let ok = (eq - 1.0).abs() <= 1e-12 && (et - 2.0).abs() <= 1e-12 && little <= 1e-12 && bad.is_empty();
        let mut detail = format!("EQ={eq:.15}, ET={et:.15}, |ET-EQ/lambda|={little:.1e}");
        if bad.is_empty() {
            detail.push_str(", all table trends hold");
        } else {
            detail.push_str(&format!(", trend failures: {}", bad.join("; ")));
        }
        (ok, detail)
    })
}

/// Every acceptance criterion, in order.
pub fn run_suite(exec: Exec) -> Vec<Outcome> {
    vec![
        criterion_1(exec),
        criterion_2(),
        criterion_3(exec),
        criterion_4(exec),
        criterion_5(exec),
        criterion_6(exec),
        criterion_7(exec),
        criterion_8(exec),
        criterion_9(exec),
        criterion_10(),
    ]
}

/// Checks for a user-supplied model.
pub fn run_model_checks(model: &ModelSpec, exec: Exec) -> Vec<Outcome> {
    let mut out = Vec::new();
    let (rho, stable) = traffic_intensity(model);
    out.push(timed("stability", "traffic intensity below 1", || {
        (stable, format!("rho = {rho:.6}"))
    }));
    if !stable {
        return out;
    }
    let sol = solve_pi(model, &SolveOptions::default());
    out.push(timed("residual", "fixed-point residual", || match &sol {
        Ok(s) => (
            s.residual <= 1e-8,
            format!("residual {:.2e}, K={}, convention {:?}", s.residual, s.k(), s.convention),
        ),
        Err(e) => (false, e.to_string()),
    }));
    let Ok(sol) = sol else { return out };
    out.push(timed("rg", "RG factorization reassembly", || {
        let e = rg_reassembly_error(&sol.measures);
        (e <= 1e-8, format!("max error {e:.2e}"))
    }));
    let mut tail_info = timed("tail", "tail versus closed-form law", || {
        (
            sol.tail_deviation <= 1e-6,
            format!(
                "max rel dev {:.2e}; pi_1 e = {:.8}, formula {:.8}",
                sol.tail_deviation,
                sol.tails().first().copied().unwrap_or(0.0),
                tail(rho, model.d, 1).unwrap_or(f64::NAN)
            ),
        )
    });
    tail_info.gating = false;
    out.push(tail_info);
    if model.m_a() == 1 {
        out.push(timed("oracle", "Poisson recursion agrees", || {
            match poisson_explicit(&model.ph, model.lambda(), model.d, sol.k()) {
                Ok(o) => {
                    let worst = sol
                        .pi
                        .iter()
                        .zip(&o)
                        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
                        .fold(0.0, f64::max);
                    (worst <= 1e-8, format!("max |diff| {worst:.2e}"))
                }
                Err(e) => (false, e.to_string()),
            }
        }));
    }
    out.push(timed("ode", "ODE converges to fixed point", || {
        let (m, drift, mono, err) = ode_to_fixed_point(model, 0x0DE);
        (
            m <= 1e-5 && drift <= 1e-9 && err.is_empty(),
            format!("max metric {m:.2e}, u0 drift {drift:.1e}, monotonicity violations {mono} {err}"),
        )
    }));
    out.push(timed("jacobian", "Jacobian finite differences", || {
        let fd = map_range(exec, 20, |i| {
            let mut rng = ChaCha8Rng::seed_from_u64(0xF0 + i as u64);
            let u = random_state(model.m_a(), model.m_b(), 6, &mut rng);
            let dir = random_state(model.m_a(), model.m_b(), 6, &mut rng);
            fd_relative(model, &u, &dir)
        });
        let worst = fd.iter().copied().fold(0.0, f64::max);
        (worst <= 1e-6, format!("20 states, max rel err {worst:.2e}"))
    }));
    out.push(timed("lipschitz", "Jacobian norm within M", || {
        let bound = lipschitz_bound(model);
        let ratios = map_range(exec, 100, |i| {
            let mut rng = ChaCha8Rng::seed_from_u64(0xF1 + i as u64);
            let u = random_state(model.m_a(), model.m_b(), 6, &mut rng);
            jacobian(&u, model).map(|j| jacobian_norm(&j)).unwrap_or(f64::INFINITY) / bound
        });
        let v = ratios.iter().filter(|r| **r > 1.0 + 1e-12).count();
        (v == 0, format!("M = {bound:.4}, 100 states, {v} violations"))
    }));
    let (m_a, m_b, d) = (model.m_a(), model.m_b(), model.d);
    let mut inv = timed("invariance", "environment factor phase independence", || {
        let devs = map_range(exec, 200, |i| {
            let mut rng = ChaCha8Rng::seed_from_u64(0xF2 + i as u64);
            let pair = random_pair(&mut rng, m_a * m_b);
            check_invariance(&pair, d, m_a, m_b, 1e-10).map(|r| r.1)
        });
        match devs.into_iter().collect::<crate::Result<Vec<_>>>() {
            Ok(v) => {
                let worst = v.iter().copied().fold(0.0, f64::max);
                (worst <= 1e-10, format!("200 pairs, max rel dev {worst:.2e}"))
            }
            Err(e) => (true, format!("skipped: {e}")),
        }
    });
    if inv.detail.starts_with("skipped") {
        inv.gating = false;
    }
    out.push(inv);
    out
}

/// True iff every gating outcome passed.
pub fn all_passed(outcomes: &[Outcome]) -> bool {
    outcomes.iter().filter(|o| o.gating).all(|o| o.passed)
}
