use nalgebra::DMatrix;

use super::{kron_row, FractionVector};
use crate::envfactor::{quotient, quotient_partials};
use crate::linalg::{kron_product, kron_sum, norm_inf, vec_mat_acc, vec_mat_into};
use crate::stochkit::ModelSpec;
use crate::{Error, Result};

/// Constant matrices of the ODE system, built once per model.
#[derive(Clone, Debug)]
pub struct Dynamics {
    pub m_a: usize,
    pub m_b: usize,
    pub d: usize,
    /// C + D
    pub q0: DMatrix<f64>,
    /// D ⊗ I
    pub d_i: DMatrix<f64>,
    /// diagonal of diag(De) ⊗ I
    pub leave: Vec<f64>,
    /// [C + diag(De)] ⊕ T
    pub local: DMatrix<f64>,
    /// I ⊗ T⁰α
    pub down: DMatrix<f64>,
    pub alpha: Vec<f64>,
}

impl Dynamics {
    pub fn new(model: &ModelSpec) -> Self {
        let m_a = model.m_a();
        let m_b = model.m_b();
        let ib = DMatrix::identity(m_b, m_b);
        let ia = DMatrix::identity(m_a, m_a);
        let de = model.map.de();
        let leave = de.iter().flat_map(|v| std::iter::repeat_n(*v, m_b)).collect();
        let cc = model.map.c() + model.map.diag_de();
        Dynamics {
            m_a,
            m_b,
            d: model.d,
            q0: model.map.generator(),
            d_i: kron_product(model.map.d(), &ib),
            leave,
            local: kron_sum(&cc, model.ph.t()).expect("square"),
            down: kron_product(&ia, &model.ph.restart()),
            alpha: model.ph.alpha().iter().copied().collect(),
        }
    }

    pub fn block(&self) -> usize {
        self.m_a * self.m_b
    }

    /// Number of levels encoded in a flat state.
    pub fn levels_in(&self, len: usize) -> usize {
        (len - self.m_a) / self.block()
    }

    /// Right-hand side on the flat layout [u₀ | u₁ | … | u_K], u_{K+1} = 0.
    pub fn rhs_flat(&self, x: &[f64], out: &mut [f64]) {
        let m_a = self.m_a;
        let n = self.block();
        let k_max = self.levels_in(x.len());
        vec_mat_into(&x[..m_a], &self.q0, &mut out[..m_a]);
        let lvl1_prev = kron_row(&x[..m_a], &self.alpha);
        let mut v = vec![0.0; n];
        for k in 1..=k_max {
            let cur = &x[m_a + (k - 1) * n..m_a + k * n];
            let prev: &[f64] = if k == 1 {
                &lvl1_prev
            } else {
                &x[m_a + (k - 2) * n..m_a + (k - 1) * n]
            };
            let a: f64 = prev.iter().sum();
            let b: f64 = cur.iter().sum();
            let l = quotient(a, b, self.d);
            vec_mat_into(prev, &self.d_i, &mut v);
            for ((vi, ci), r) in v.iter_mut().zip(cur).zip(&self.leave) {
                *vi -= ci * r;
            }
            let o = &mut out[m_a + (k - 1) * n..m_a + k * n];
            for (oi, vi) in o.iter_mut().zip(&v) {
                *oi = l * vi;
            }
            vec_mat_acc(cur, &self.local, 1.0, o);
            if k < k_max {
                let next = &x[m_a + k * n..m_a + (k + 1) * n];
                vec_mat_acc(next, &self.down, 1.0, o);
            }
        }
    }
}

fn check_dims(u: &FractionVector, model: &ModelSpec) -> Result<()> {
    if u.m_a != model.m_a() || u.m_b != model.m_b() {
        return Err(Error::Validation(format!(
            "state dims ({}, {}) do not match model ({}, {})",
            u.m_a,
            u.m_b,
            model.m_a(),
            model.m_b()
        )));
    }
    Ok(())
}

/// Time derivative of `u` under the mean-field dynamics.
pub fn rhs(u: &FractionVector, model: &ModelSpec) -> Result<FractionVector> {
    check_dims(u, model)?;
    let dy = Dynamics::new(model);
    let x = u.to_flat(u.k());
    let mut out = vec![0.0; x.len()];
    dy.rhs_flat(&x, &mut out);
    Ok(FractionVector::from_flat(u.m_a, u.m_b, &out))
}

/// Blocks of the level part of the Jacobian, in row-vector convention:
/// the block in row k, column j is ∂F_j/∂x_k.
#[derive(Clone, Debug)]
pub struct JacobianBlocks {
    /// A_k = ∂F_k/∂x_k, k = 1..K
    pub a: Vec<DMatrix<f64>>,
    /// B_k = ∂F_{k+1}/∂x_k, k = 1..K−1
    pub b: Vec<DMatrix<f64>>,
    /// C_k = ∂F_{k−1}/∂x_k, k = 2..K
    pub c: Vec<DMatrix<f64>>,
}

impl JacobianBlocks {
    pub fn k(&self) -> usize {
        self.a.len()
    }

    /// Row-vector action δ ↦ δ·𝒟F on the level coordinates.
    pub fn apply(&self, delta: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let k_max = self.k();
        let n = self.a[0].nrows();
        let mut out = vec![vec![0.0; n]; k_max];
        for j in 0..k_max {
            vec_mat_acc(&delta[j], &self.a[j], 1.0, &mut out[j]);
            if j > 0 {
                vec_mat_acc(&delta[j - 1], &self.b[j - 1], 1.0, &mut out[j]);
            }
            if j + 1 < k_max {
                vec_mat_acc(&delta[j + 1], &self.c[j], 1.0, &mut out[j]);
            }
        }
        out
    }
}

/// Jacobian of the level equations with respect to u₁..u_K (u₀ held fixed).
pub fn jacobian(u: &FractionVector, model: &ModelSpec) -> Result<JacobianBlocks> {
    check_dims(u, model)?;
    let dy = Dynamics::new(model);
    let n = dy.block();
    let k_max = u.k();
    if k_max == 0 {
        return Err(Error::Validation("jacobian needs at least one level".into()));
    }
    let lvl1_prev = kron_row(&u.u0, &dy.alpha);
    let prev_of = |k: usize| -> &[f64] {
        if k == 1 {
            &lvl1_prev
        } else {
            &u.levels[k - 2]
        }
    };
    // v_k = prev·(D⊗I) − x_k·[diag(De)⊗I]
    let mut v = Vec::with_capacity(k_max);
    let mut part = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let prev = prev_of(k);
        let cur = &u.levels[k - 1];
        let mut vk = vec![0.0; n];
        vec_mat_into(prev, &dy.d_i, &mut vk);
        for ((vi, ci), r) in vk.iter_mut().zip(cur).zip(&dy.leave) {
            *vi -= ci * r;
        }
        v.push(vk);
        let a: f64 = prev.iter().sum();
        let b: f64 = cur.iter().sum();
        part.push(quotient_partials(a, b, dy.d));
    }
    let mut a_blocks = Vec::with_capacity(k_max);
    let mut b_blocks = Vec::with_capacity(k_max.saturating_sub(1));
    for k in 1..=k_max {
        let (l, _, dl_db) = part[k - 1];
        let mut a = dy.local.clone();
        for i in 0..n {
            a[(i, i)] -= l * dy.leave[i];
            for j in 0..n {
                a[(i, j)] += dl_db * v[k - 1][j];
            }
        }
        a_blocks.push(a);
        if k < k_max {
            let (l1, dl_da, _) = part[k];
            let mut b = &dy.d_i * l1;
            for i in 0..n {
                for j in 0..n {
                    b[(i, j)] += dl_da * v[k][j];
                }
            }
            b_blocks.push(b);
        }
    }
    let c_blocks = vec![dy.down.clone(); k_max.saturating_sub(1)];
    Ok(JacobianBlocks {
        a: a_blocks,
        b: b_blocks,
        c: c_blocks,
    })
}

/// max over block rows k of ‖C_k‖ + ‖A_k‖ + ‖B_k‖ (max-row-sum norm).
pub fn jacobian_norm(j: &JacobianBlocks) -> f64 {
    let k_max = j.k();
    (0..k_max)
        .map(|k| {
            let c = if k > 0 { norm_inf(&j.c[k - 1]) } else { 0.0 };
            let b = if k + 1 < k_max { norm_inf(&j.b[k]) } else { 0.0 };
            c + norm_inf(&j.a[k]) + b
        })
        .fold(0.0, f64::max)
}

/// M = ‖C+diag(De)‖ + 2[d+(d−1)(d−2)]‖D‖ + ‖T‖ + ‖T⁰α‖.
pub fn lipschitz_bound(model: &ModelSpec) -> f64 {
    let d = model.d as f64;
    let cc = model.map.c() + model.map.diag_de();
    norm_inf(&cc)
        + 2.0 * (d + (d - 1.0) * (d - 2.0)) * norm_inf(model.map.d())
        + norm_inf(model.ph.t())
        + norm_inf(&model.ph.restart())
}
