use super::{Dynamics, FractionVector};
use crate::stochkit::{traffic_intensity, ModelSpec};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct IntegrateOptions {
    /// Per-step relative error tolerance.
    pub tol: f64,
    /// Absolute floor of the error scale, as a fraction of `tol`.
    pub atol_ratio: f64,
    /// Extend the truncation while u_K·e exceeds this.
    pub trunc_eps: f64,
    pub max_step: f64,
    pub initial_step: f64,
    /// Output times; `None` means 101 equally spaced points on [0, t_end].
    pub samples: Option<Vec<f64>>,
    pub max_steps: usize,
    pub max_levels: usize,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        IntegrateOptions {
            tol: 1e-8,
            atol_ratio: 1e-6,
            trunc_eps: 1e-12,
            max_step: 1.0,
            initial_step: 1e-3,
            samples: None,
            max_steps: 5_000_000,
            max_levels: 5_000,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IntegrationStats {
    pub accepted: usize,
    pub rejected: usize,
    /// Roundoff negatives set to zero.
    pub clamped: usize,
    /// Sampled entries breaking monotonicity by more than 1e−8.
    pub monotone_violations: usize,
    pub max_u0_drift: f64,
    pub final_levels: usize,
    /// ρ ≥ 1: the run is allowed but no steady state exists.
    pub unstable: bool,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    /// Hash of the model that produced this trajectory.
    pub model_hash: String,
    pub times: Vec<f64>,
    pub states: Vec<FractionVector>,
    pub stats: IntegrationStats,
}

impl Trajectory {
    pub fn last(&self) -> &FractionVector {
        self.states.last().expect("non-empty trajectory")
    }
}

const NEG_CLAMP: f64 = 1e-12;
const MONO_TOL: f64 = 1e-8;

// Dormand–Prince 5(4); the system is autonomous so the nodes are not needed.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

fn initial_levels(g: &FractionVector, eps: f64) -> usize {
    let tails = g.tails();
    let first_small = tails.iter().position(|t| *t < eps).map_or(tails.len() + 1, |p| p + 1);
    first_small.max(20).max(g.k())
}

/// Integrate the mean-field system from `g` to `t_end`.
pub fn integrate(
    model: &ModelSpec,
    g: &FractionVector,
    t_end: f64,
    opts: &IntegrateOptions,
) -> Result<Trajectory> {
    if g.m_a != model.m_a() || g.m_b != model.m_b() {
        return Err(Error::Validation("initial state does not match model dimensions".into()));
    }
    if !(t_end > 0.0) {
        return Err(Error::Validation(format!("t_end must be positive, got {t_end}")));
    }
    let samples = match &opts.samples {
        Some(s) => {
            if s.windows(2).any(|w| w[1] < w[0]) || s.iter().any(|t| *t < 0.0 || *t > t_end) {
                return Err(Error::Validation("sample times must be sorted in [0, t_end]".into()));
            }
            s.clone()
        }
        None => (0..=100).map(|i| t_end * i as f64 / 100.0).collect(),
    };
    let dy = Dynamics::new(model);
    let (m_a, m_b, n) = (dy.m_a, dy.m_b, dy.block());
    let mut stats = IntegrationStats {
        unstable: !traffic_intensity(model).1,
        ..Default::default()
    };
    let mut y = g.to_flat(initial_levels(g, opts.trunc_eps));
    let mut times = Vec::with_capacity(samples.len());
    let mut states = Vec::with_capacity(samples.len());
    let mut record = |t: f64, y: &[f64], stats: &mut IntegrationStats| {
        let s = FractionVector::from_flat(m_a, m_b, y);
        stats.max_u0_drift = stats.max_u0_drift.max((s.u0.iter().sum::<f64>() - 1.0).abs());
        stats.monotone_violations += s.invariant_violations(MONO_TOL);
        times.push(t);
        states.push(s);
    };

    let mut t = 0.0;
    let mut next_sample = 0;
    while next_sample < samples.len() && samples[next_sample] <= 0.0 {
        record(0.0, &y, &mut stats);
        next_sample += 1;
    }
    let mut h = opts.initial_step.min(opts.max_step);
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; y.len()]; 7];
    let mut fsal_valid = false;
    let mut tmp = vec![0.0; y.len()];
    let mut y_new = vec![0.0; y.len()];
    let mut steps = 0usize;

    while next_sample < samples.len() {
        let target = samples[next_sample];
        if steps >= opts.max_steps {
            return Err(Error::Integration {
                t,
                reason: format!("step budget {} exhausted", opts.max_steps),
                last_state: Box::new(FractionVector::from_flat(m_a, m_b, &y)),
            });
        }
        steps += 1;
        if !fsal_valid {
            dy.rhs_flat(&y, &mut k[0]);
            fsal_valid = true;
        }
        let mut land = false;
        let mut hs = h.min(opts.max_step);
        if t + hs >= target {
            hs = target - t;
            land = true;
        }
        for s in 1..7 {
            for i in 0..y.len() {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc += A[s][j] * kj[i];
                }
                tmp[i] = y[i] + hs * acc;
            }
            dy.rhs_flat(&tmp, &mut k[s]);
            if s == 6 {
                y_new.copy_from_slice(&tmp);
            }
        }
        let atol = opts.tol * opts.atol_ratio;
        let mut err: f64 = 0.0;
        for i in 0..y.len() {
            let mut e = 0.0;
            for (j, kj) in k.iter().enumerate() {
                e += E[j] * kj[i];
            }
            let sc = atol + opts.tol * y[i].abs().max(y_new[i].abs());
            err = err.max((hs * e).abs() / sc);
        }
        if !err.is_finite() || err > 1.0 {
            stats.rejected += 1;
            let f = if err.is_finite() { (0.9 * err.powf(-0.2)).max(0.2) } else { 0.2 };
            h = hs * f;
            if h < 1e-14 * t.max(1.0) {
                return Err(Error::Integration {
                    t,
                    reason: format!("step size underflow (h = {h:e})"),
                    last_state: Box::new(FractionVector::from_flat(m_a, m_b, &y)),
                });
            }
            continue;
        }
        stats.accepted += 1;
        t = if land { target } else { t + hs };
        std::mem::swap(&mut y, &mut y_new);
        k.swap(0, 6);
        let grow = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        if !land {
            h = hs * grow;
        } else {
            h = h.max(hs * grow);
        }

        for v in y.iter_mut() {
            if *v < 0.0 {
                if *v > -NEG_CLAMP {
                    *v = 0.0;
                    stats.clamped += 1;
                    fsal_valid = false;
                } else {
                    let bad = *v;
                    return Err(Error::Integration {
                        t,
                        reason: format!("negative fraction {bad:e}"),
                        last_state: Box::new(FractionVector::from_flat(m_a, m_b, &y)),
                    });
                }
            }
        }
        let levels = dy.levels_in(y.len());
        let last_tail: f64 = y[m_a + (levels - 1) * n..].iter().sum();
        if last_tail > opts.trunc_eps {
            if levels + 10 > opts.max_levels {
                return Err(Error::Resource(format!(
                    "truncation would exceed {} levels",
                    opts.max_levels
                )));
            }
            y.resize(y.len() + 10 * n, 0.0);
            tmp.resize(y.len(), 0.0);
            y_new.resize(y.len(), 0.0);
            for kk in k.iter_mut() {
                kk.resize(y.len(), 0.0);
            }
            fsal_valid = false;
        }
        if land {
            while next_sample < samples.len() && samples[next_sample] <= t {
                record(t, &y, &mut stats);
                next_sample += 1;
            }
        }
    }
    stats.final_levels = dy.levels_in(y.len());
    Ok(Trajectory {
        model_hash: model.hash(),
        times,
        states,
        stats,
    })
}
