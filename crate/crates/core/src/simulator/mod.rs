//! Discrete-event simulation of N servers fed by one global MAP with
//! JSQ(d) routing and per-server PH service.

mod engine;
mod streams;

use serde::Serialize;

use crate::meanfield::{metric, FractionVector, Trajectory};
use crate::par::{map_range, Exec};
use crate::stochkit::ModelSpec;
use crate::{Error, Result};
use streams::Streams;

/// How the d candidate servers are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize)]
pub enum Sampling {
    #[default]
    WithReplacement,
    WithoutReplacement,
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub model: ModelSpec,
    pub n: usize,
    pub horizon: f64,
    pub warmup: f64,
    pub seed: u64,
    pub sample_times: Vec<f64>,
    pub replications: usize,
    pub sampling: Sampling,
    /// Initial fraction profile; `None` starts empty with the MAP phase ~ ω.
    pub initial: Option<FractionVector>,
    /// Check counters against the server array after every event (slow).
    pub audit: bool,
}

impl SimConfig {
    pub fn new(model: ModelSpec, n: usize, horizon: f64, seed: u64) -> Self {
        SimConfig {
            model,
            n,
            horizon,
            warmup: 0.0,
            seed,
            sample_times: Vec::new(),
            replications: 1,
            sampling: Sampling::default(),
            initial: None,
            audit: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Validation("N must be at least 1".into()));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::Validation(format!("horizon must be positive, got {}", self.horizon)));
        }
        if !(self.warmup >= 0.0 && self.warmup < self.horizon) {
            return Err(Error::Validation(format!(
                "need 0 <= warmup < horizon, got warmup {}",
                self.warmup
            )));
        }
        if self.replications == 0 {
            return Err(Error::Validation("replications must be at least 1".into()));
        }
        if self.sample_times.windows(2).any(|w| w[1] < w[0])
            || self.sample_times.iter().any(|t| !(*t >= 0.0))
        {
            return Err(Error::Validation("sample times must be sorted and non-negative".into()));
        }
        if let Some(g) = &self.initial {
            if g.m_a != self.model.m_a() || g.m_b != self.model.m_b() {
                return Err(Error::Validation("initial profile does not match the model".into()));
            }
        }
        Ok(())
    }
}

/// State observed at a sample time.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Sample {
    pub t: f64,
    pub total: u64,
    pub map_phase: usize,
    /// Fraction of servers with at least k customers, k = 1..
    pub tails: Vec<f64>,
    /// Empirical U_{k;i,j}.
    pub fraction: FractionVector,
}

/// Post-warmup time averages.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimeAverages {
    /// P(length ≥ k) per server, k = 1..
    pub tails: Vec<f64>,
    /// Fraction of time in each MAP phase.
    pub u0: Vec<f64>,
    /// Customers in the whole system.
    pub total: f64,
    pub arrival_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct EventCounts {
    pub arrivals: u64,
    pub departures: u64,
    pub map_events: u64,
    pub initial_customers: u64,
    pub in_system: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplicationResult {
    pub replication: usize,
    /// Derived stream key of this replication.
    pub key: u64,
    pub samples: Vec<Sample>,
    pub time_avg: TimeAverages,
    pub counts: EventCounts,
}

/// Across-replication mean and 95% half-width (None with one replication).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub half_width: Option<f64>,
    pub std_err: Option<f64>,
}

pub fn estimate(xs: &[f64]) -> Estimate {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return Estimate {
            mean,
            half_width: None,
            std_err: None,
        };
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    Estimate {
        mean,
        half_width: Some(1.96 * se),
        std_err: Some(se),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimResult {
    pub replications: Vec<ReplicationResult>,
    /// P(length ≥ k), k = 1..
    pub tails: Vec<Estimate>,
    pub u0: Vec<Estimate>,
    pub total: Estimate,
    pub arrival_rate: Estimate,
}

fn summarize(reps: Vec<ReplicationResult>) -> SimResult {
    let kmax = reps.iter().map(|r| r.time_avg.tails.len()).max().unwrap_or(0);
    let col = |f: &dyn Fn(&ReplicationResult) -> f64| -> Estimate {
        estimate(&reps.iter().map(f).collect::<Vec<_>>())
    };
    let tails = (0..kmax)
        .map(|k| col(&|r| r.time_avg.tails.get(k).copied().unwrap_or(0.0)))
        .collect();
    let m_a = reps.first().map_or(0, |r| r.time_avg.u0.len());
    let u0 = (0..m_a).map(|i| col(&|r| r.time_avg.u0[i])).collect();
    let total = col(&|r| r.time_avg.total);
    let arrival_rate = col(&|r| r.time_avg.arrival_rate);
    SimResult {
        replications: reps,
        tails,
        u0,
        total,
        arrival_rate,
    }
}

fn run_one(cfg: &SimConfig, rep: usize) -> Result<ReplicationResult> {
    engine::Engine::new(cfg, Streams::for_replication(cfg.seed, rep)).run(rep)
}

/// Run all replications with the default execution policy.
pub fn run(cfg: &SimConfig) -> Result<SimResult> {
    run_with(cfg, Exec::default())
}

pub fn run_with(cfg: &SimConfig, exec: Exec) -> Result<SimResult> {
    cfg.validate()?;
    let reps = map_range(exec, cfg.replications, |r| run_one(cfg, r))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(reps))
}

/// Per-replication sup-time distance between simulated and ODE tails.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GapReport {
    pub per_replication: Vec<f64>,
    pub mean: f64,
}

/// Simulate from the trajectory's initial state at its sample times and
/// measure sup_t metric(phase-aggregated empirical, phase-aggregated ODE).
pub fn meanfield_gap(cfg: &SimConfig, traj: &Trajectory) -> Result<GapReport> {
    meanfield_gap_with(cfg, traj, Exec::default())
}

pub fn meanfield_gap_with(cfg: &SimConfig, traj: &Trajectory, exec: Exec) -> Result<GapReport> {
    if traj.model_hash != cfg.model.hash() {
        return Err(Error::Validation(
            "trajectory was integrated for a different model".into(),
        ));
    }
    let horizon = traj.times.last().copied().unwrap_or(0.0);
    let mut sim = cfg.clone();
    sim.sample_times = traj.times.clone();
    sim.initial = traj.states.first().cloned();
    if sim.horizon < horizon {
        sim.horizon = horizon;
    }
    sim.warmup = 0.0;
    let result = run_with(&sim, exec)?;
    let ode: Vec<FractionVector> = traj.states.iter().map(|s| s.phase_aggregated()).collect();
    let mut per = Vec::with_capacity(result.replications.len());
    for rep in &result.replications {
        let mut worst: f64 = 0.0;
        for (s, o) in rep.samples.iter().zip(&ode) {
            worst = worst.max(metric(&s.fraction.phase_aggregated(), o)?);
        }
        per.push(worst);
    }
    let mean = per.iter().sum::<f64>() / per.len() as f64;
    Ok(GapReport {
        per_replication: per,
        mean,
    })
}

/// Time-averaged totals of systems that differ only in d, driven by common
/// random numbers (same MAP path, same per-arrival choice uniforms, same
/// per-customer service requirements).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CouplingReport {
    pub d_list: Vec<usize>,
    /// totals[r][i] for replication r and d_list[i]
    pub totals: Vec<Vec<f64>>,
    pub keys: Vec<u64>,
    pub mean: Vec<f64>,
    /// replications where the total increased from d_list[i] to d_list[i+1]
    pub violations: Vec<usize>,
    /// paired t statistic of total(d_i) − total(d_{i+1})
    pub t_stat: Vec<f64>,
}

impl CouplingReport {
    pub fn monotone_everywhere(&self) -> bool {
        self.violations.iter().all(|v| *v == 0)
    }
}

pub fn coupled_run(cfg: &SimConfig, d_list: &[usize]) -> Result<CouplingReport> {
    coupled_run_with(cfg, d_list, Exec::default())
}

pub fn coupled_run_with(cfg: &SimConfig, d_list: &[usize], exec: Exec) -> Result<CouplingReport> {
    cfg.validate()?;
    if d_list.is_empty() || d_list[0] != 1 || d_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Validation(
            "d list must be strictly increasing and start at 1".into(),
        ));
    }
    let models = d_list
        .iter()
        .map(|d| cfg.model.with_d(*d))
        .collect::<Result<Vec<_>>>()?;
    let per_rep = map_range(exec, cfg.replications, |r| -> Result<(u64, Vec<f64>)> {
        let mut totals = Vec::with_capacity(models.len());
        let mut key = 0;
        for m in &models {
            let mut c = cfg.clone();
            c.model = m.clone();
            c.sample_times.clear();
            let res = run_one(&c, r)?;
            key = res.key;
            totals.push(res.time_avg.total);
        }
        Ok((key, totals))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let keys = per_rep.iter().map(|p| p.0).collect();
    let totals: Vec<Vec<f64>> = per_rep.into_iter().map(|p| p.1).collect();
    let nd = d_list.len();
    let mean = (0..nd)
        .map(|i| totals.iter().map(|t| t[i]).sum::<f64>() / totals.len() as f64)
        .collect();
    let mut violations = Vec::new();
    let mut t_stat = Vec::new();
    for i in 0..nd.saturating_sub(1) {
        let diffs: Vec<f64> = totals.iter().map(|t| t[i] - t[i + 1]).collect();
        violations.push(diffs.iter().filter(|x| **x < 0.0).count());
        let e = estimate(&diffs);
        t_stat.push(match e.std_err {
            Some(se) if se > 0.0 => e.mean / se,
            _ => f64::INFINITY,
        });
    }
    Ok(CouplingReport {
        d_list: d_list.to_vec(),
        totals,
        keys,
        mean,
        violations,
        t_stat,
    })
}
