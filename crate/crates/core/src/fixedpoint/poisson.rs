use nalgebra::{DMatrix, RowDVector};

use crate::envfactor::quotient;
use crate::linalg::inverse;
use crate::stochkit::{ph_mean, PhDistribution};
use crate::{Error, Result};

/// Fixed point for Poisson(λ) input by forward recursion over levels.
///
/// Level k balances as π_k(λζ_k I − T) = λ(ζ_k π_{k−1} + η_k^d α), with
/// π₀ replaced by α, η_k = π_k e and ζ_k = (η_{k−1}^d − η_k^d)/(η_{k−1} − η_k).
/// Each level is a scalar equation e·π_k(η) = η, solved by bisection on
/// (0, η_{k−1}).
pub fn poisson_explicit(ph: &PhDistribution, lambda: f64, d: usize, k_max: usize) -> Result<Vec<Vec<f64>>> {
    let rho = lambda * ph_mean(ph)?;
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::Domain(format!("need 0 < rho < 1, got {rho}")));
    }
    let m = ph.order();
    let t = ph.t();
    let alpha = ph.alpha();
    let id = DMatrix::<f64>::identity(m, m);
    let level = |prev: &RowDVector<f64>, eta_prev: f64, eta: f64| -> Result<RowDVector<f64>> {
        let z = quotient(eta_prev, eta, d);
        let lhs = &id * (lambda * z) - t;
        let inv = inverse(&lhs, "lambda*zeta*I - T")?;
        Ok((prev * (lambda * z) + alpha * (lambda * eta.powi(d as i32))) * inv)
    };
    let mut out = Vec::with_capacity(k_max);
    let mut prev = alpha.clone();
    let mut eta_prev = 1.0f64;
    for _ in 0..k_max {
        if eta_prev < 1e-300 {
            out.push(vec![0.0; m]);
            continue;
        }
        let f = |eta: f64| -> Result<f64> { Ok(level(&prev, eta_prev, eta)?.sum() - eta) };
        let (mut lo, mut hi) = (0.0f64, eta_prev);
        if f(lo)? < 0.0 || f(hi)? > 0.0 {
            return Err(Error::Numerical("level equation has no bracketed root".into()));
        }
        for _ in 0..2000 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if f(mid)? > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let eta = if f(lo)?.abs() <= f(hi)?.abs() { lo } else { hi };
        let cur = level(&prev, eta_prev, eta)?;
        out.push(cur.iter().copied().collect());
        prev = cur;
        eta_prev = eta;
    }
    Ok(out)
}
