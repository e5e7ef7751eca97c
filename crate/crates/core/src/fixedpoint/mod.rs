//! Fixed point of the mean-field equations through its level-dependent QBD.

mod poisson;

pub use poisson::poisson_explicit;

use nalgebra::{DMatrix, RowDVector};
use serde::Serialize;

use crate::envfactor::quotient;
use crate::linalg::{inverse, kron_product, kron_sum};
use crate::meanfield::{metric, Dynamics, FractionVector};
use crate::stochkit::{traffic_intensity, ModelSpec};
use crate::{Error, Result};

fn check_rho(rho: f64) -> Result<()> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::Domain(format!("need 0 < rho < 1, got {rho}")));
    }
    Ok(())
}

/// ρ^{(d^k−1)/(d−1)}, or ρ^k for d = 1.
pub fn tail(rho: f64, d: usize, k: usize) -> Result<f64> {
    check_rho(rho)?;
    if d == 0 {
        return Err(Error::Domain("d must be at least 1".into()));
    }
    let mut expo = 0.0;
    let mut p = 1.0;
    for _ in 0..k {
        expo += p;
        p *= d as f64;
        if expo > 1e300 {
            return Ok(0.0);
        }
    }
    Ok(rho.powf(expo))
}

/// ζ_k = (η_{k−1}^d − η_k^d)/(η_{k−1} − η_k) with η the formula tails.
pub fn zeta(rho: f64, d: usize, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Domain("zeta is defined for k >= 1".into()));
    }
    Ok(quotient(tail(rho, d, k - 1)?, tail(rho, d, k)?, d))
}

/// One block row of the QBD generator.
#[derive(Clone, Debug)]
pub struct QbdBlockRow {
    pub level: usize,
    pub zeta: f64,
    pub zeta_next: f64,
    /// B_k = [C + (1−ζ_k)diag(De)] ⊕ T
    pub diag: DMatrix<f64>,
    /// ζ_{k+1}(D⊗I)
    pub upper: DMatrix<f64>,
    /// I⊗(T⁰α)
    pub lower: DMatrix<f64>,
}

fn blocks_from_zeta(model: &ModelSpec, zetas: &[f64]) -> Vec<QbdBlockRow> {
    let dy = Dynamics::new(model);
    let k_max = zetas.len() - 1;
    let dg = model.map.diag_de();
    (1..=k_max)
        .map(|k| {
            let z = zetas[k - 1];
            let zn = zetas[k];
            let cc = model.map.c() + &dg * (1.0 - z);
            QbdBlockRow {
                level: k,
                zeta: z,
                zeta_next: zn,
                diag: kron_sum(&cc, model.ph.t()).expect("square"),
                upper: &dy.d_i * zn,
                lower: dy.down.clone(),
            }
        })
        .collect()
}

/// Block rows 1..K built from the closed-form ζ.
pub fn qbd_blocks(model: &ModelSpec, k_max: usize) -> Result<Vec<QbdBlockRow>> {
    let (rho, _) = traffic_intensity(model);
    check_rho(rho)?;
    let zetas = (1..=k_max + 1)
        .map(|k| zeta(rho, model.d, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(blocks_from_zeta(model, &zetas))
}

/// R-, U- and G-measures of the truncated QBD (level-indexed).
#[derive(Clone, Debug)]
pub struct Measures {
    /// ζ_1..ζ_{K+1}
    pub zeta: Vec<f64>,
    pub blocks: Vec<QbdBlockRow>,
    /// U_1..U_K
    pub u: Vec<DMatrix<f64>>,
    /// R_k = ζ_{k+1}(D⊗I)(−U_{k+1})⁻¹ for k = 1..K−1 (maps level k to k+1)
    pub r: Vec<DMatrix<f64>>,
    /// G_k = (−U_k)⁻¹(I⊗T⁰α) for k = 2..K
    pub g: Vec<DMatrix<f64>>,
    /// (−U_k)⁻¹ for k = 1..K
    pub neg_u_inv: Vec<DMatrix<f64>>,
    /// max-norm change of R_1 when K grows by 10 (0 if not measured)
    pub refinement_delta: f64,
}

impl Measures {
    pub fn k(&self) -> usize {
        self.u.len()
    }
}

/// Backward recursion seeded with R ≡ 0 at the frontier.
fn backward(model: &ModelSpec, zetas: &[f64]) -> Result<Measures> {
    let blocks = blocks_from_zeta(model, zetas);
    let k_max = blocks.len();
    let mut u = vec![DMatrix::zeros(0, 0); k_max];
    let mut inv = vec![DMatrix::zeros(0, 0); k_max];
    u[k_max - 1] = blocks[k_max - 1].diag.clone();
    inv[k_max - 1] = inverse(&(-&u[k_max - 1]), &format!("U_{k_max}"))?;
    for k in (1..k_max).rev() {
        let row = &blocks[k - 1];
        u[k - 1] = &row.diag + &row.upper * &inv[k] * &row.lower;
        inv[k - 1] = inverse(&(-&u[k - 1]), &format!("U_{k}"))?;
    }
    let r = (1..k_max).map(|k| &blocks[k - 1].upper * &inv[k]).collect();
    let g = (2..=k_max).map(|k| &inv[k - 1] * &blocks[k - 1].lower).collect();
    Ok(Measures {
        zeta: zetas.to_vec(),
        blocks,
        u,
        r,
        g,
        neg_u_inv: inv,
        refinement_delta: 0.0,
    })
}

fn formula_zetas(model: &ModelSpec, k_max: usize) -> Result<Vec<f64>> {
    let (rho, _) = traffic_intensity(model);
    (1..=k_max + 1).map(|k| zeta(rho, model.d, k)).collect()
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

/// Measures under the closed-form ζ, with K grown in steps of 10 until R_1
/// moves by less than `tol`.
pub fn solve_measures(model: &ModelSpec, k_max: usize, tol: f64) -> Result<Measures> {
    let (rho, _) = traffic_intensity(model);
    check_rho(rho)?;
    let mut k = k_max.max(2);
    let mut cur = backward(model, &formula_zetas(model, k)?)?;
    loop {
        let next = backward(model, &formula_zetas(model, k + 10)?)?;
        let delta = max_abs(&(&cur.r[0] - &next.r[0]));
        if delta < tol {
            let mut out = next;
            out.refinement_delta = delta;
            return Ok(out);
        }
        k += 10;
        if k > MAX_LEVELS {
            return Err(Error::Resource(format!(
                "R-measure not converged at K = {k} (change {delta:e})"
            )));
        }
        cur = next;
    }
}

/// Max abs entry of ζ_{k+1}(D⊗I) + R_k B_{k+1} + R_k R_{k+1}(I⊗T⁰α) over k.
pub fn measure_equation_residual(m: &Measures) -> f64 {
    let k_max = m.k();
    let mut worst: f64 = 0.0;
    for k in 1..k_max {
        let rk = &m.r[k - 1];
        let next = &m.blocks[k];
        let mut e = &m.blocks[k - 1].upper + rk * &next.diag;
        if k + 1 < k_max {
            e += rk * &m.r[k] * &next.lower;
        }
        worst = worst.max(max_abs(&e));
    }
    worst
}

/// Assemble the truncated QBD generator on levels 1..K.
pub fn assemble_generator(m: &Measures) -> DMatrix<f64> {
    let k_max = m.k();
    let n = m.u[0].nrows();
    let mut q = DMatrix::zeros(k_max * n, k_max * n);
    for (i, row) in m.blocks.iter().enumerate() {
        q.view_mut((i * n, i * n), (n, n)).copy_from(&row.diag);
        if i + 1 < k_max {
            q.view_mut((i * n, (i + 1) * n), (n, n)).copy_from(&row.upper);
            q.view_mut(((i + 1) * n, i * n), (n, n)).copy_from(&row.lower);
        }
    }
    q
}

/// max abs entry of (I − R_U) U_D (I − G_L) − Q.
pub fn rg_reassembly_error(m: &Measures) -> f64 {
    let k_max = m.k();
    let n = m.u[0].nrows();
    let dim = k_max * n;
    let mut ru = DMatrix::zeros(dim, dim);
    let mut ud = DMatrix::zeros(dim, dim);
    let mut gl = DMatrix::zeros(dim, dim);
    for k in 0..k_max {
        ud.view_mut((k * n, k * n), (n, n)).copy_from(&m.u[k]);
        if k + 1 < k_max {
            ru.view_mut((k * n, (k + 1) * n), (n, n)).copy_from(&m.r[k]);
            gl.view_mut(((k + 1) * n, k * n), (n, n)).copy_from(&m.g[k]);
        }
    }
    let id = DMatrix::<f64>::identity(dim, dim);
    let prod = (&id - ru) * ud * (&id - gl);
    max_abs(&(prod - assemble_generator(m)))
}

/// How the R-measures are chained into π.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Convention {
    /// π_{k+1} = π_k ζ_{k+1}(D⊗I)(−U_{k+1})⁻¹
    LevelConsistent,
    /// π_{k+1} = π_k ζ_k(D⊗I)(−U_{k+1})⁻¹, the shifted reading
    Shifted,
}

fn chain_pi(model: &ModelSpec, m: &Measures, conv: Convention) -> Vec<RowDVector<f64>> {
    let dy = Dynamics::new(model);
    let w = model.map.stationary();
    let wa = kron_product(
        &DMatrix::from_row_slice(1, w.len(), w.as_slice()),
        &DMatrix::from_row_slice(1, dy.m_b, &dy.alpha),
    );
    let first = (&wa * &dy.d_i * &m.neg_u_inv[0]) * m.zeta[0];
    let mut pi = vec![RowDVector::from_iterator(first.ncols(), first.iter().copied())];
    for k in 1..m.k() {
        let step = match conv {
            Convention::LevelConsistent => m.r[k - 1].clone(),
            Convention::Shifted => &dy.d_i * &m.neg_u_inv[k] * m.zeta[k - 1],
        };
        let next = &pi[k - 1] * step;
        pi.push(next);
    }
    pi
}

fn to_fraction(model: &ModelSpec, pi: &[RowDVector<f64>]) -> FractionVector {
    let w = model.map.stationary();
    FractionVector {
        m_a: model.m_a(),
        m_b: model.m_b(),
        u0: w.iter().copied().collect(),
        levels: pi.iter().map(|r| r.iter().copied().collect()).collect(),
    }
}

/// Max norm of the stationary mean-field equations at `pi`.
pub fn residual(pi: &FractionVector, model: &ModelSpec) -> Result<f64> {
    let d = crate::meanfield::rhs(pi, model)?;
    let mut worst = d.u0.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for l in &d.levels {
        worst = l.iter().fold(worst, |a, v| a.max(v.abs()));
    }
    Ok(worst)
}

/// ζ_k = L(π_{k−1}e, π_k e), k = 1..K+1, with π₀e = 1 and π_{K+1} = 0.
fn zetas_from_tails(tails: &[f64], d: usize) -> Vec<f64> {
    let mut z = Vec::with_capacity(tails.len() + 1);
    let mut prev = 1.0;
    for &t in tails.iter().chain(std::iter::once(&0.0)) {
        z.push(quotient(prev, t.max(0.0), d));
        prev = t.max(0.0);
    }
    z
}

pub const MAX_LEVELS: usize = 4000;
/// The truncation grows until π_K·e falls below this.
pub const TAIL_EPS: f64 = 1e-20;
const MAX_SWEEPS: usize = 20_000;

/// Solver settings.
#[derive(Clone, Debug)]
pub struct SolveOptions {
    /// Initial truncation; grown in steps of 10 until the solution settles.
    pub k: usize,
    pub tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { k: 40, tol: 1e-8 }
    }
}

#[derive(Clone, Debug)]
pub struct FixedPointSolution {
    pub pi0: Vec<f64>,
    /// π_1..π_K
    pub pi: Vec<Vec<f64>>,
    /// ζ_1..ζ_{K+1} consistent with the tails of π
    pub zeta: Vec<f64>,
    pub measures: Measures,
    pub residual: f64,
    pub convention: Convention,
    /// residual of the other convention on the same ζ
    pub alternate_residual: f64,
    /// max relative gap |π_k e − ρ^{(d^k−1)/(d−1)}|/tail over tails > 1e−12
    pub tail_deviation: f64,
    pub sweeps: usize,
    pub rho: f64,
}

impl FixedPointSolution {
    pub fn k(&self) -> usize {
        self.pi.len()
    }

    pub fn tails(&self) -> Vec<f64> {
        self.pi.iter().map(|l| l.iter().sum()).collect()
    }

    pub fn as_fraction(&self, m_a: usize, m_b: usize) -> FractionVector {
        FractionVector {
            m_a,
            m_b,
            u0: self.pi0.clone(),
            levels: self.pi.clone(),
        }
    }

    /// U at the first level.
    pub fn u0(&self) -> &DMatrix<f64> {
        &self.measures.u[0]
    }

    pub fn r(&self) -> &[DMatrix<f64>] {
        &self.measures.r
    }
}

fn bare(e: &Error) -> String {
    match e {
        Error::Solver(m) => m.clone(),
        other => other.to_string(),
    }
}

fn tail_deviation(tails: &[f64], rho: f64, d: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, t) in tails.iter().enumerate() {
        let f = tail(rho, d, i + 1).unwrap_or(0.0);
        if f > 1e-12 {
            worst = worst.max((t - f).abs() / f);
        }
    }
    worst
}

struct Sweep {
    pi: Vec<RowDVector<f64>>,
    measures: Measures,
    sweeps: usize,
}

/// Alternate QBD solve and ζ update until ζ stops moving. The update is
/// under-relaxed when the plain iteration leaves the unit interval.
fn self_consistent(model: &ModelSpec, k_max: usize, conv: Convention) -> Result<Sweep> {
    let mut last_err = None;
    for relax in [1.0, 0.5, 0.25, 0.1] {
        match relaxed_sweep(model, k_max, conv, relax) {
            Ok(s) => return Ok(s),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.expect("at least one attempt"))
}

fn relaxed_sweep(model: &ModelSpec, k_max: usize, conv: Convention, relax: f64) -> Result<Sweep> {
    let mut zetas = formula_zetas(model, k_max)?;
    for sweep in 1..=MAX_SWEEPS {
        let measures = backward(model, &zetas)?;
        let pi = chain_pi(model, &measures, conv);
        let tails: Vec<f64> = pi.iter().map(|r| r.sum()).collect();
        if tails.iter().any(|t| !t.is_finite() || *t < -1e-12 || *t > 1.0 + 1e-9) {
            return Err(Error::Solver(format!(
                "tails left [0, 1] at sweep {sweep} (relaxation {relax}): level-1 tail {:e}",
                tails.first().copied().unwrap_or(f64::NAN)
            )));
        }
        let next = zetas_from_tails(&tails, model.d);
        let change = next
            .iter()
            .zip(&zetas)
            .filter(|(a, _)| **a > 1e-280)
            .map(|(a, b)| (a - b).abs() / a)
            .fold(0.0, f64::max);
        if change < 1e-13 {
            zetas = next;
            let measures = backward(model, &zetas)?;
            let pi = chain_pi(model, &measures, conv);
            return Ok(Sweep {
                pi,
                measures,
                sweeps: sweep,
            });
        }
        zetas = zetas
            .iter()
            .zip(&next)
            .map(|(z, n)| (1.0 - relax) * z + relax * n)
            .collect();
    }
    Err(Error::Solver(format!(
        "zeta sweep did not settle in {MAX_SWEEPS} iterations (relaxation {relax})"
    )))
}

fn attempt(model: &ModelSpec, k_max: usize, conv: Convention) -> Result<(Sweep, f64)> {
    let s = self_consistent(model, k_max, conv)?;
    let res = residual(&to_fraction(model, &s.pi), model)?;
    Ok((s, res))
}

/// Fixed point π with π₀ = ω, built from the matrix-product form.
///
/// The ζ_k inside the QBD are made consistent with the tails of π itself,
/// so the result solves the stationary mean-field equations rather than
/// only the tail-formula QBD. The truncation grows until π and R_1 settle.
pub fn solve_pi(model: &ModelSpec, opts: &SolveOptions) -> Result<FixedPointSolution> {
    let (rho, stable) = traffic_intensity(model);
    if !stable {
        return Err(Error::Domain(format!("unstable model: rho = {rho} >= 1")));
    }
    let tol = opts.tol;
    let mut diagnostics = Vec::new();
    for conv in [Convention::LevelConsistent, Convention::Shifted] {
        let mut k = opts.k.max(2);
        let mut cur = match attempt(model, k, conv) {
            Ok(c) => c,
            Err(e) => {
                diagnostics.push(format!("{conv:?}: {}", bare(&e)));
                continue;
            }
        };
        let outcome = loop {
            let next = match attempt(model, k + 10, conv) {
                Ok(n) => n,
                Err(e) => break Err(e),
            };
            let dr = if cur.0.measures.r.is_empty() || next.0.measures.r.is_empty() {
                0.0
            } else {
                max_abs(&(&cur.0.measures.r[0] - &next.0.measures.r[0]))
            };
            let dp = metric(&to_fraction(model, &cur.0.pi), &to_fraction(model, &next.0.pi))?;
            let delta = dr.max(dp);
            let last = next.0.pi.last().map_or(0.0, |r| r.sum());
            if delta < tol && last < TAIL_EPS {
                let mut n = next;
                n.0.measures.refinement_delta = delta;
                break Ok(n);
            }
            k += 10;
            if k > MAX_LEVELS {
                break Err(Error::Resource(format!(
                    "fixed point not settled at K = {k} (change {delta:e})"
                )));
            }
            cur = next;
        };
        let (sweep, res) = match outcome {
            Ok(o) => o,
            Err(e) => {
                diagnostics.push(format!("{conv:?}: {}", bare(&e)));
                continue;
            }
        };
        if res > tol {
            diagnostics.push(format!("{conv:?}: residual {res:e} > {tol:e}"));
            continue;
        }
        let other = match conv {
            Convention::LevelConsistent => Convention::Shifted,
            Convention::Shifted => Convention::LevelConsistent,
        };
        let alt = chain_pi(model, &sweep.measures, other);
        let alternate_residual = residual(&to_fraction(model, &alt), model)?;
        let fv = to_fraction(model, &sweep.pi);
        let tails = fv.tails();
        return Ok(FixedPointSolution {
            pi0: fv.u0.clone(),
            tail_deviation: tail_deviation(&tails, rho, model.d),
            pi: fv.levels,
            zeta: sweep.measures.zeta.clone(),
            measures: sweep.measures,
            residual: res,
            convention: conv,
            alternate_residual,
            sweeps: sweep.sweeps,
            rho,
        });
    }
    Err(Error::Solver(diagnostics.join("; ")))
}

/// π_k·e versus the closed-form tail, per level.
pub fn tail_table(sol: &FixedPointSolution, d: usize) -> Vec<(usize, f64, f64)> {
    sol.tails()
        .into_iter()
        .enumerate()
        .map(|(i, t)| (i + 1, t, tail(sol.rho, d, i + 1).unwrap_or(0.0)))
        .collect()
}
