//! Closed-form mean queue length and sojourn time, and the example tables.

use serde::Serialize;

use crate::catalog;
use crate::fixedpoint::tail;
use crate::par::{map_slice, Exec};
use crate::stochkit::{ph_mean, ph_residual, PhDistribution};
use crate::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-14;

/// Σ_{k≥from} ρ^{(d^k−1)/(d−1)} until a term drops below `eps`; returns the
/// sum, the number of terms and the first omitted term.
fn tail_series(rho: f64, d: usize, from: usize, eps: f64) -> Result<(f64, usize, f64)> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::Domain(format!("need 0 < rho < 1, got {rho}")));
    }
    let mut s = 0.0;
    let mut k = from;
    loop {
        let t = tail(rho, d, k)?;
        if t < eps {
            return Ok((s, k - from, t));
        }
        s += t;
        k += 1;
        if k > 10_000_000 {
            return Err(Error::Resource("series did not reach eps".into()));
        }
    }
}

/// E[Q_d] = Σ_{k≥1} ρ^{(d^k−1)/(d−1)}.
pub fn mean_queue_length(rho: f64, d: usize, eps: f64) -> Result<f64> {
    Ok(tail_series(rho, d, 1, eps)?.0)
}

/// E[T_d] = E[X] + ρE[X_R] + E[X]·Σ_{k≥2} ρ^{(d^k−1)/(d−1)}.
pub fn mean_sojourn(ph: &PhDistribution, lambda: f64, d: usize, eps: f64) -> Result<f64> {
    Ok(perf_report(ph, lambda, d, eps)?.et)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PerfReport {
    pub rho: f64,
    pub d: usize,
    pub eq: f64,
    pub et: f64,
    pub ex: f64,
    pub exr: f64,
    pub terms: usize,
    /// Bound on the omitted part of the series.
    pub truncation_bound: f64,
}

pub fn perf_report(ph: &PhDistribution, lambda: f64, d: usize, eps: f64) -> Result<PerfReport> {
    let ex = ph_mean(ph)?;
    let (_, exr) = ph_residual(ph)?;
    let rho = lambda * ex;
    let (eq, terms, next) = tail_series(rho, d, 1, eps)?;
    let tail_sum = eq - rho;
    let bound = if d >= 2 { 2.0 * next } else { next / (1.0 - rho) };
    Ok(PerfReport {
        rho,
        d,
        eq,
        et: ex + rho * exr + ex * tail_sum,
        ex,
        exr,
        terms,
        truncation_bound: bound,
    })
}

/// One row of an example table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TableRow {
    pub example: u8,
    /// Series label, e.g. "m=2,d=2" or "T(1)".
    pub series: String,
    /// Swept parameter name and value (η, λ or d).
    pub param: &'static str,
    pub value: f64,
    pub d: usize,
    pub rho: f64,
    pub eq: f64,
    pub et: f64,
    pub stable: bool,
}

#[derive(Clone, Debug)]
struct Point {
    series: String,
    param: &'static str,
    value: f64,
    d: usize,
    ph: PhDistribution,
    lambda: f64,
}

fn evaluate(example: u8, p: &Point) -> TableRow {
    let ex = ph_mean(&p.ph).unwrap_or(f64::NAN);
    let rho = p.lambda * ex;
    let stable = rho > 0.0 && rho < 1.0;
    let (eq, et) = if stable {
        match perf_report(&p.ph, p.lambda, p.d, DEFAULT_EPS) {
            Ok(r) => (r.eq, r.et),
            Err(_) => (f64::NAN, f64::NAN),
        }
    } else {
        (f64::NAN, f64::NAN)
    };
    TableRow {
        example,
        series: p.series.clone(),
        param: p.param,
        value: p.value,
        d: p.d,
        rho,
        eq,
        et,
        stable: stable && eq.is_finite(),
    }
}

/// Parameter grids for the four examples.
#[derive(Clone, Debug)]
pub struct Grid {
    /// Example 1: Erlang rates η.
    pub eta: Vec<f64>,
    /// Example 1: (m, d) pairs.
    pub erlang_pairs: Vec<(usize, usize)>,
    /// Example 2: arrival rates.
    pub lambda2: Vec<f64>,
    /// Example 3: choice counts.
    pub d3: Vec<usize>,
    /// Example 4: arrival rates.
    pub lambda4: Vec<f64>,
    pub d4: Vec<usize>,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            eta: (0..=40).map(|i| 4.5 + 0.5 * i as f64).collect(),
            erlang_pairs: vec![(2, 2), (3, 2), (4, 2), (2, 10)],
            lambda2: (0..=20).map(|i| 1.0 + 0.1 * i as f64).collect(),
            d3: (1..=10).collect(),
            lambda4: (1..=19).map(|i| 0.05 * i as f64).collect(),
            d4: vec![1, 2, 5, 10],
        }
    }
}

fn points(which: u8, grid: &Grid) -> Result<Vec<Point>> {
    let mut pts = Vec::new();
    match which {
        1 => {
            for &(m, d) in &grid.erlang_pairs {
                for &eta in &grid.eta {
                    pts.push(Point {
                        series: format!("m={m},d={d}"),
                        param: "eta",
                        value: eta,
                        d,
                        ph: PhDistribution::erlang(m, eta)?,
                        lambda: 1.0,
                    });
                }
            }
        }
        2 => {
            let ph = catalog::example2_ph();
            let mu = 1.0 / ph_mean(&ph)?;
            let exp = PhDistribution::exponential(mu)?;
            for d in [1, 2] {
                for (label, law) in [("exponential", &exp), ("ph", &ph)] {
                    for &lambda in &grid.lambda2 {
                        pts.push(Point {
                            series: format!("{label},d={d}"),
                            param: "lambda",
                            value: lambda,
                            d,
                            ph: law.clone(),
                            lambda,
                        });
                    }
                }
            }
        }
        3 => {
            for i in 1..=3 {
                for &d in &grid.d3 {
                    pts.push(Point {
                        series: format!("T({i})"),
                        param: "d",
                        value: d as f64,
                        d,
                        ph: catalog::example3_ph(i),
                        lambda: 1.0,
                    });
                }
            }
        }
        4 => {
            let ph = PhDistribution::exponential(1.0)?;
            for &d in &grid.d4 {
                for &lambda in &grid.lambda4 {
                    let map = catalog::example4_map(lambda);
                    let rate = crate::stochkit::map_rate(&map);
                    pts.push(Point {
                        series: format!("d={d}"),
                        param: "lambda",
                        value: lambda,
                        d,
                        ph: ph.clone(),
                        lambda: rate,
                    });
                }
            }
        }
        _ => return Err(Error::Validation(format!("no example {which}; choose 1..4"))),
    }
    Ok(pts)
}

/// Data behind the example figures; unstable grid points are flagged.
pub fn example_tables(which: u8, grid: &Grid) -> Result<Vec<TableRow>> {
    example_tables_with(which, grid, Exec::default())
}

pub fn example_tables_with(which: u8, grid: &Grid, exec: Exec) -> Result<Vec<TableRow>> {
    let pts = points(which, grid)?;
    Ok(map_slice(exec, &pts, |p| evaluate(which, p)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn queue_length_values() {
        assert!((mean_queue_length(0.5, 1, DEFAULT_EPS).unwrap() - 1.0).abs() < 1e-12);
        let want = 0.5 + 0.125 + 0.0078125 + 0.5f64.powi(15) + 0.5f64.powi(31);
        assert!((mean_queue_length(0.5, 2, DEFAULT_EPS).unwrap() - want).abs() < 1e-12);
        assert!(mean_queue_length(1.0, 2, DEFAULT_EPS).is_err());
        assert!(mean_queue_length(1e-9, 2, DEFAULT_EPS).unwrap() < 2e-9);
    }

    #[test]
    fn sojourn_mm1() {
        let ph = PhDistribution::exponential(1.0).unwrap();
        let et = mean_sojourn(&ph, 0.5, 1, DEFAULT_EPS).unwrap();
        assert!((et - 2.0).abs() < 1e-12);
        let small = mean_sojourn(&ph, 1e-9, 3, DEFAULT_EPS).unwrap();
        assert!((small - 1.0).abs() < 1e-8);
    }

    #[test]
    fn unstable_points_are_flagged() {
        let grid = Grid {
            eta: vec![1.5, 5.0],
            erlang_pairs: vec![(2, 2)],
            ..Grid::default()
        };
        let rows = example_tables(1, &grid).unwrap();
        assert!(!rows[0].stable);
        assert!(rows[1].stable);
        assert!(example_tables(7, &grid).is_err());
    }
}
