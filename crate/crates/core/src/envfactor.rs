//! Environment factor L = (a^d − b^d)/(a − b) and its combinatorial form.

use crate::{Error, Result};

/// Relative gap |a−b| < LIMIT_SWITCH·a below which the limit d·a^{d−1} is used.
pub const LIMIT_SWITCH: f64 = 1e-12;

/// Cap on the number of enumerated multinomial terms.
pub const ENUM_CAP: usize = 5_000_000;

/// Fractions at two adjacent levels (prev is u₀⊗α at level 1).
#[derive(Clone, Debug, PartialEq)]
pub struct LevelPair {
    pub prev: Vec<f64>,
    pub cur: Vec<f64>,
}

impl LevelPair {
    pub fn new(prev: Vec<f64>, cur: Vec<f64>) -> Result<Self> {
        if prev.len() != cur.len() {
            return Err(Error::Validation(format!(
                "level pair lengths differ: {} vs {}",
                prev.len(),
                cur.len()
            )));
        }
        for (i, (p, c)) in prev.iter().zip(&cur).enumerate() {
            if !(*c >= 0.0) || c > p {
                return Err(Error::Domain(format!(
                    "level pair entry {i}: need 0 <= cur <= prev, got cur={c}, prev={p}"
                )));
            }
        }
        let a: f64 = prev.iter().sum();
        if a > 1.0 + 1e-12 {
            return Err(Error::Domain(format!("level pair prev mass {a} exceeds 1")));
        }
        Ok(LevelPair { prev, cur })
    }

    pub fn a(&self) -> f64 {
        self.prev.iter().sum()
    }

    pub fn b(&self) -> f64 {
        self.cur.iter().sum()
    }
}

/// Σ_{j<d} a^j b^{d−1−j}; symmetric in (a, b), no domain checks.
pub(crate) fn quotient(a: f64, b: f64, d: usize) -> f64 {
    if d == 1 {
        return 1.0;
    }
    if (a - b).abs() <= LIMIT_SWITCH * a.abs() {
        return d as f64 * a.powi(d as i32 - 1);
    }
    // Expanded sum: every term is non-negative, so no cancellation.
    (0..d)
        .map(|j| a.powi(j as i32) * b.powi((d - 1 - j) as i32))
        .sum()
}

/// (L, ∂L/∂a, ∂L/∂b) at (a, b).
pub(crate) fn quotient_partials(a: f64, b: f64, d: usize) -> (f64, f64, f64) {
    let l = quotient(a, b, d);
    let mut da = 0.0;
    let mut db = 0.0;
    for j in 0..d {
        let jb = d - 1 - j;
        if j >= 1 {
            da += j as f64 * a.powi(j as i32 - 1) * b.powi(jb as i32);
        }
        if jb >= 1 {
            db += jb as f64 * a.powi(j as i32) * b.powi(jb as i32 - 1);
        }
    }
    (l, da, db)
}

/// Closed form of the environment factor for scalar tails a = prev·e ≥ b = cur·e.
pub fn env_factor_closed(a: f64, b: f64, d: usize) -> Result<f64> {
    if d == 0 {
        return Err(Error::Domain("d must be at least 1".into()));
    }
    if !(b >= 0.0) || a < b {
        return Err(Error::Domain(format!("need 0 <= b <= a, got a={a}, b={b}")));
    }
    Ok(quotient(a, b, d))
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, i| acc * i as f64)
}

/// Σ over compositions r of `total` into the slots `phases`, of
/// multinomial(total; r) · Π w_i^{r_i}, optionally requiring mass outside `l`.
fn multinomial_sum(
    w: &[f64],
    phases: &[usize],
    total: usize,
    need_outside: Option<usize>,
    budget: &mut usize,
) -> Result<f64> {
    fn rec(
        w: &[f64],
        phases: &[usize],
        pos: usize,
        left: usize,
        outside: usize,
        need_outside: Option<usize>,
        coef: f64,
        prod: f64,
        budget: &mut usize,
    ) -> Result<f64> {
        if pos == phases.len() {
            if left != 0 {
                return Ok(0.0);
            }
            if need_outside.is_some() && outside == 0 {
                return Ok(0.0);
            }
            if *budget == 0 {
                return Err(Error::Resource("multinomial enumeration cap exceeded".into()));
            }
            *budget -= 1;
            return Ok(coef * prod);
        }
        let i = phases[pos];
        let mut s = 0.0;
        let mut p = 1.0;
        for r in 0..=left {
            if r > 0 && w[i] == 0.0 {
                break;
            }
            let out = if need_outside == Some(i) { outside } else { outside + r };
            s += rec(
                w,
                phases,
                pos + 1,
                left - r,
                out,
                need_outside,
                coef / factorial(r),
                prod * p,
                budget,
            )?;
            p *= w[i];
        }
        Ok(s)
    }
    rec(w, phases, 0, total, 0, need_outside, factorial(total), 1.0, budget)
}

/// Parts I–III of the selection-probability expansion for MAP phase `l`
/// (0-based), enumerated term by term.
///
/// In Part III the multinomial over the other minimal servers ranges over
/// phases i ≠ l only; the m₁ servers in phase l are counted separately.
pub fn env_factor_combinatorial(
    pair: &LevelPair,
    l: usize,
    d: usize,
    m_a: usize,
    m_b: usize,
) -> Result<f64> {
    if pair.prev.len() != m_a * m_b {
        return Err(Error::Validation(format!(
            "pair length {} != m_A*m_B = {}",
            pair.prev.len(),
            m_a * m_b
        )));
    }
    if l >= m_a || d == 0 {
        return Err(Error::Domain(format!("phase {l} or d={d} out of range")));
    }
    let mut x = vec![0.0; m_a];
    let mut y = vec![0.0; m_a];
    for i in 0..m_a {
        for j in 0..m_b {
            let p = pair.prev[i * m_b + j];
            let c = pair.cur[i * m_b + j];
            x[i] += p - c;
            y[i] += c;
        }
    }
    let all: Vec<usize> = (0..m_a).collect();
    let others: Vec<usize> = (0..m_a).filter(|&i| i != l).collect();
    let mut budget = ENUM_CAP;

    let mut part1 = 0.0;
    for m in 1..=d {
        part1 += binom(d, m) * x[l].powi(m as i32 - 1) * y[l].powi((d - m) as i32);
    }

    let mut part2 = 0.0;
    for m in 1..d {
        let inner = multinomial_sum(&y, &all, d - m, Some(l), &mut budget)?;
        part2 += binom(d, m) * x[l].powi(m as i32 - 1) * inner;
    }

    let mut part3 = 0.0;
    for m in 2..=d {
        let ysum = multinomial_sum(&y, &all, d - m, None, &mut budget)?;
        if ysum == 0.0 {
            continue;
        }
        let mut acc = 0.0;
        for m1 in 1..m {
            let xsum = multinomial_sum(&x, &others, m - m1, None, &mut budget)?;
            acc += m1 as f64 / m as f64 * binom(m, m1) * x[l].powi(m1 as i32 - 1) * xsum;
        }
        part3 += binom(d, m) * acc * ysum;
    }
    Ok(part1 + part2 + part3)
}

/// Maximum relative deviation of the per-phase combinatorial value from the
/// closed form, and whether it is within `tol`.
pub fn check_invariance(
    pair: &LevelPair,
    d: usize,
    m_a: usize,
    m_b: usize,
    tol: f64,
) -> Result<(bool, f64)> {
    let closed = env_factor_closed(pair.a(), pair.b(), d)?;
    let scale = closed.abs().max(f64::MIN_POSITIVE);
    let mut worst: f64 = 0.0;
    for l in 0..m_a {
        let c = env_factor_combinatorial(pair, l, d, m_a, m_b)?;
        worst = worst.max((c - closed).abs() / scale);
    }
    Ok((worst <= tol, worst))
}
