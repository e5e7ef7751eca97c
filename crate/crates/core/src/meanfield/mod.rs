//! Expected fraction vectors, the mean-field ODE, its Jacobian and integrator.

mod dynamics;
mod integrate;

pub use dynamics::{jacobian, jacobian_norm, lipschitz_bound, rhs, Dynamics, JacobianBlocks};
pub use integrate::{integrate, IntegrateOptions, IntegrationStats, Trajectory};

use serde::Serialize;

use crate::stochkit::ModelSpec;
use crate::{Error, Result};

/// Truncated state (u₀, u₁, …, u_K); level entries are indexed (i, j) with
/// MAP phase i major and service phase j minor.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FractionVector {
    pub m_a: usize,
    pub m_b: usize,
    pub u0: Vec<f64>,
    pub levels: Vec<Vec<f64>>,
}

impl FractionVector {
    pub fn new(m_a: usize, m_b: usize, u0: Vec<f64>, levels: Vec<Vec<f64>>) -> Result<Self> {
        if u0.len() != m_a {
            return Err(Error::Validation(format!(
                "u0 has length {} but m_A = {m_a}",
                u0.len()
            )));
        }
        if let Some((k, l)) = levels.iter().enumerate().find(|(_, l)| l.len() != m_a * m_b) {
            return Err(Error::Validation(format!(
                "level {} has length {} but m_A*m_B = {}",
                k + 1,
                l.len(),
                m_a * m_b
            )));
        }
        Ok(FractionVector { m_a, m_b, u0, levels })
    }

    /// No customers anywhere; MAP phase distributed as `u0`.
    pub fn empty(model: &ModelSpec) -> Self {
        let w = model.map.stationary();
        FractionVector {
            m_a: model.m_a(),
            m_b: model.m_b(),
            u0: w.iter().copied().collect(),
            levels: Vec::new(),
        }
    }

    /// Every server holds exactly `depth` customers, service phase ~ α.
    pub fn full(model: &ModelSpec, depth: usize) -> Self {
        let w = model.map.stationary();
        let lvl = kron_row(w.as_slice(), model.ph.alpha().as_slice());
        FractionVector {
            m_a: model.m_a(),
            m_b: model.m_b(),
            u0: w.iter().copied().collect(),
            levels: vec![lvl; depth],
        }
    }

    pub fn k(&self) -> usize {
        self.levels.len()
    }

    pub fn block(&self) -> usize {
        self.m_a * self.m_b
    }

    /// u_k·e for k = 1..K.
    pub fn tails(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.iter().sum()).collect()
    }

    pub fn level(&self, k: usize) -> Option<&[f64]> {
        if k == 0 {
            None
        } else {
            self.levels.get(k - 1).map(|v| v.as_slice())
        }
    }

    /// Sum over MAP phases (and service phases): u₀ → u₀·e, u_k → u_k·e.
    pub fn phase_aggregated(&self) -> FractionVector {
        FractionVector {
            m_a: 1,
            m_b: 1,
            u0: vec![self.u0.iter().sum()],
            levels: self.tails().into_iter().map(|t| vec![t]).collect(),
        }
    }

    /// Drop trailing all-zero levels.
    pub fn trimmed(mut self) -> Self {
        while self.levels.last().is_some_and(|l| l.iter().all(|v| *v == 0.0)) {
            self.levels.pop();
        }
        self
    }

    /// Pad or cut to exactly `k` levels.
    pub fn with_levels(mut self, k: usize) -> Self {
        let n = self.block();
        self.levels.resize(k, vec![0.0; n]);
        self
    }

    /// Number of entries violating the state-space constraints by more than `tol`.
    pub fn invariant_violations(&self, tol: f64) -> usize {
        let mut bad = 0;
        if self.u0.iter().any(|v| *v < -tol) || (self.u0.iter().sum::<f64>() - 1.0).abs() > tol {
            bad += 1;
        }
        let tails = self.tails();
        let mut prev_tail = 1.0;
        for (k, lvl) in self.levels.iter().enumerate() {
            bad += lvl.iter().filter(|v| **v < -tol).count();
            if k > 0 {
                bad += lvl
                    .iter()
                    .zip(&self.levels[k - 1])
                    .filter(|(c, p)| **c > **p + tol)
                    .count();
            }
            if tails[k] > prev_tail + tol {
                bad += 1;
            }
            prev_tail = tails[k];
        }
        bad
    }

    pub(crate) fn to_flat(&self, k: usize) -> Vec<f64> {
        let n = self.block();
        let mut out = Vec::with_capacity(self.m_a + k * n);
        out.extend_from_slice(&self.u0);
        for i in 0..k {
            match self.levels.get(i) {
                Some(l) => out.extend_from_slice(l),
                None => out.extend(std::iter::repeat_n(0.0, n)),
            }
        }
        out
    }

    pub(crate) fn from_flat(m_a: usize, m_b: usize, flat: &[f64]) -> Self {
        let n = m_a * m_b;
        let u0 = flat[..m_a].to_vec();
        let levels = flat[m_a..].chunks(n).map(|c| c.to_vec()).collect();
        FractionVector { m_a, m_b, u0, levels }
    }
}

/// Random state satisfying the monotonicity constraints, with `k` levels.
pub fn random_state<R: rand::Rng + ?Sized>(m_a: usize, m_b: usize, k: usize, rng: &mut R) -> FractionVector {
    let n = m_a * m_b;
    let mut u0: Vec<f64> = (0..m_a).map(|_| rng.random::<f64>() + 1e-3).collect();
    let s: f64 = u0.iter().sum();
    u0.iter_mut().for_each(|v| *v /= s);
    let mut first: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let s: f64 = first.iter().sum();
    let mass = rng.random::<f64>();
    first.iter_mut().for_each(|v| *v *= mass / s);
    let mut levels = vec![first];
    for _ in 1..k {
        let prev = levels.last().expect("non-empty");
        let next = prev.iter().map(|p| p * rng.random::<f64>()).collect();
        levels.push(next);
    }
    FractionVector { m_a, m_b, u0, levels }
}

pub(crate) fn kron_row(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().flat_map(|x| b.iter().map(move |y| x * y)).collect()
}

/// max(max_i |u₀ᵢ − v₀ᵢ|, sup_{k,i,j} |u_{k;i,j} − v_{k;i,j}|/(k+1)); the
/// shorter truncation is padded with zeros.
pub fn metric(u: &FractionVector, v: &FractionVector) -> Result<f64> {
    if u.m_a != v.m_a || u.m_b != v.m_b {
        return Err(Error::Validation(format!(
            "metric dimension mismatch: ({}, {}) vs ({}, {})",
            u.m_a, u.m_b, v.m_a, v.m_b
        )));
    }
    let mut m = u
        .u0
        .iter()
        .zip(&v.u0)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let n = u.block();
    let zero = vec![0.0; n];
    for k in 0..u.k().max(v.k()) {
        let a = u.levels.get(k).unwrap_or(&zero);
        let b = v.levels.get(k).unwrap_or(&zero);
        let w = (k + 2) as f64;
        for (x, y) in a.iter().zip(b) {
            m = m.max((x - y).abs() / w);
        }
    }
    Ok(m)
}
