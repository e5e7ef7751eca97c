//! MAP and PH primitives, traffic intensity and the model description.

use nalgebra::{DMatrix, RowDVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use crate::linalg::{kron_product, kron_sum, stationary_vector};
use crate::linalg::{self, from_rows, inverse, ones_col, to_rows, ROW_SUM_TOL};
use crate::{Error, Result};

/// Markovian arrival process with descriptor (C, D).
#[derive(Clone, Debug, PartialEq)]
pub struct MapDescriptor {
    c: DMatrix<f64>,
    d: DMatrix<f64>,
}

impl MapDescriptor {
    pub fn new(c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        Self::with_tol(c, d, ROW_SUM_TOL)
    }

    pub fn with_tol(c: DMatrix<f64>, d: DMatrix<f64>, tol: f64) -> Result<Self> {
        let m = c.nrows();
        if m == 0 || !c.is_square() {
            return Err(Error::Validation(format!(
                "map.C must be square and non-empty, got {}x{}",
                c.nrows(),
                c.ncols()
            )));
        }
        if d.shape() != c.shape() {
            return Err(Error::Validation(format!(
                "map.D is {}x{} but map.C is {m}x{m}",
                d.nrows(),
                d.ncols()
            )));
        }
        for i in 0..m {
            for j in 0..m {
                let v = c[(i, j)];
                if !v.is_finite() || !d[(i, j)].is_finite() {
                    return Err(Error::Validation(format!("map row {i}: non-finite entry")));
                }
                if i == j && v >= 0.0 {
                    return Err(Error::Validation(format!(
                        "map.C row {i}: diagonal entry {v} must be < 0"
                    )));
                }
                if i != j && v < 0.0 {
                    return Err(Error::Validation(format!(
                        "map.C row {i}: off-diagonal entry {v} at column {j} is negative"
                    )));
                }
                if d[(i, j)] < 0.0 {
                    return Err(Error::Validation(format!(
                        "map.D row {i}: entry {} at column {j} is negative",
                        d[(i, j)]
                    )));
                }
            }
        }
        if d.iter().all(|v| *v == 0.0) {
            return Err(Error::Validation("map.D is the zero matrix".into()));
        }
        let q = &c + &d;
        if let Some((i, s)) = linalg::bad_row_sum(&q, tol) {
            return Err(Error::Validation(format!(
                "map row {i}: C+D row sums to {s:e}, not 0"
            )));
        }
        if !linalg::is_irreducible(&q) {
            return Err(Error::Structural("map: C+D is reducible".into()));
        }
        Ok(MapDescriptor { c, d })
    }

    /// Poisson process of rate `lambda`.
    pub fn poisson(lambda: f64) -> Result<Self> {
        Self::new(
            DMatrix::from_element(1, 1, -lambda),
            DMatrix::from_element(1, 1, lambda),
        )
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn order(&self) -> usize {
        self.c.nrows()
    }

    pub fn generator(&self) -> DMatrix<f64> {
        &self.c + &self.d
    }

    /// Column vector De.
    pub fn de(&self) -> nalgebra::DVector<f64> {
        linalg::row_sums(&self.d)
    }

    /// diag(De).
    pub fn diag_de(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.de())
    }

    pub fn stationary(&self) -> RowDVector<f64> {
        stationary_vector(&self.generator()).expect("validated MAP")
    }
}

/// λ = ωDe.
pub fn map_rate(map: &MapDescriptor) -> f64 {
    let w = map.stationary();
    (&w * map.d() * ones_col(map.order()))[0]
}

/// C(N) = C + diag(De) − N·diag(De), D(N) = N·D.
pub fn scaled_map(map: &MapDescriptor, n: usize) -> MapDescriptor {
    let nf = n as f64;
    let dg = map.diag_de();
    let c = map.c() + &dg - &dg * nf;
    let d = map.d() * nf;
    MapDescriptor { c, d }
}

/// Phase-type distribution with representation (α, T).
#[derive(Clone, Debug, PartialEq)]
pub struct PhDistribution {
    alpha: RowDVector<f64>,
    t: DMatrix<f64>,
}

impl PhDistribution {
    pub fn new(alpha: RowDVector<f64>, t: DMatrix<f64>) -> Result<Self> {
        let m = t.nrows();
        if m == 0 || !t.is_square() {
            return Err(Error::Validation(format!(
                "ph.T must be square and non-empty, got {}x{}",
                t.nrows(),
                t.ncols()
            )));
        }
        if alpha.len() != m {
            return Err(Error::Validation(format!(
                "ph.alpha has length {} but ph.T is {m}x{m}",
                alpha.len()
            )));
        }
        if let Some((j, v)) = alpha.iter().enumerate().find(|(_, v)| **v < 0.0 || !v.is_finite()) {
            return Err(Error::Validation(format!("ph.alpha entry {j} = {v} is invalid")));
        }
        let s = alpha.sum();
        if (s - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::Validation(format!("ph.alpha sums to {s}, not 1")));
        }
        for i in 0..m {
            for j in 0..m {
                let v = t[(i, j)];
                if !v.is_finite() {
                    return Err(Error::Validation(format!("ph.T row {i}: non-finite entry")));
                }
                if i == j && v >= 0.0 {
                    return Err(Error::Validation(format!(
                        "ph.T row {i}: diagonal entry {v} must be < 0"
                    )));
                }
                if i != j && v < 0.0 {
                    return Err(Error::Validation(format!(
                        "ph.T row {i}: off-diagonal entry {v} at column {j} is negative"
                    )));
                }
            }
        }
        let exit = -linalg::row_sums(&t);
        if let Some((i, v)) = exit.iter().enumerate().find(|(_, v)| **v < -ROW_SUM_TOL) {
            return Err(Error::Validation(format!(
                "ph.T row {i}: exit rate {v} is negative (row sum positive)"
            )));
        }
        if exit.iter().all(|v| *v <= ROW_SUM_TOL) {
            return Err(Error::Validation("ph: exit vector T0 is zero".into()));
        }
        if t.clone().lu().try_inverse().is_none() {
            return Err(Error::Validation("ph.T is singular".into()));
        }
        Ok(PhDistribution { alpha, t })
    }

    pub fn exponential(mu: f64) -> Result<Self> {
        Self::new(RowDVector::from_element(1, 1.0), DMatrix::from_element(1, 1, -mu))
    }

    /// Erlang with `m` stages of rate `eta`.
    pub fn erlang(m: usize, eta: f64) -> Result<Self> {
        let mut t = DMatrix::zeros(m, m);
        for i in 0..m {
            t[(i, i)] = -eta;
            if i + 1 < m {
                t[(i, i + 1)] = eta;
            }
        }
        let mut alpha = RowDVector::zeros(m);
        alpha[0] = 1.0;
        Self::new(alpha, t)
    }

    pub fn alpha(&self) -> &RowDVector<f64> {
        &self.alpha
    }

    pub fn t(&self) -> &DMatrix<f64> {
        &self.t
    }

    pub fn order(&self) -> usize {
        self.t.nrows()
    }

    /// T⁰ = −Te, with roundoff negatives clipped.
    pub fn exit(&self) -> nalgebra::DVector<f64> {
        (-linalg::row_sums(&self.t)).map(|v| v.max(0.0))
    }

    /// T⁰α.
    pub fn restart(&self) -> DMatrix<f64> {
        self.exit() * &self.alpha
    }
}

/// E[X] = α(−T)⁻¹e.
pub fn ph_mean(ph: &PhDistribution) -> Result<f64> {
    let inv = inverse(&(-ph.t()), "ph.T")?;
    Ok((ph.alpha() * inv * ones_col(ph.order()))[0])
}

/// θ stationary for T + T⁰α, and E[X_R] = θ(−T)⁻¹e.
pub fn ph_residual(ph: &PhDistribution) -> Result<(RowDVector<f64>, f64)> {
    let q = ph.t() + ph.restart();
    let theta = stationary_vector(&q)?;
    let inv = inverse(&(-ph.t()), "ph.T")?;
    let mean = (&theta * inv * ones_col(ph.order()))[0];
    Ok((theta, mean))
}

/// Arrival process, service law and choice count.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub map: MapDescriptor,
    pub ph: PhDistribution,
    pub d: usize,
}

impl ModelSpec {
    pub fn new(map: MapDescriptor, ph: PhDistribution, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::Validation("d must be at least 1".into()));
        }
        let mean = ph_mean(&ph)?;
        if !(mean.is_finite() && mean > 0.0) {
            return Err(Error::Validation(format!("service mean {mean} is not positive")));
        }
        Ok(ModelSpec { map, ph, d })
    }

    pub fn with_d(&self, d: usize) -> Result<Self> {
        Self::new(self.map.clone(), self.ph.clone(), d)
    }

    pub fn m_a(&self) -> usize {
        self.map.order()
    }

    pub fn m_b(&self) -> usize {
        self.ph.order()
    }

    /// Block size m_A·m_B.
    pub fn block(&self) -> usize {
        self.m_a() * self.m_b()
    }

    pub fn lambda(&self) -> f64 {
        map_rate(&self.map)
    }

    pub fn mean_service(&self) -> f64 {
        ph_mean(&self.ph).expect("validated PH")
    }

    pub fn rho(&self) -> f64 {
        traffic_intensity(self).0
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)
            .map_err(|e| Error::Validation(format!("model JSON: {e}")))?;
        file.into_model()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelFile::from(self)).expect("serializable")
    }

    /// Short content hash of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(&ModelFile::from(self)).expect("serializable");
        let digest = Sha256::digest(canon.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// ρ = λ·E[X] and whether ρ < 1.
pub fn traffic_intensity(model: &ModelSpec) -> (f64, bool) {
    let rho = model.lambda() * model.mean_service();
    (rho, rho < 1.0)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MapFile {
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    d: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PhFile {
    alpha: Vec<f64>,
    #[serde(rename = "T")]
    t: Vec<Vec<f64>>,
}

/// On-disk model schema.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    map: MapFile,
    ph: PhFile,
    d: usize,
}

fn check_rect(rows: &[Vec<f64>], what: &str) -> Result<()> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::Validation(format!("{what} is empty")));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.len() != n {
            return Err(Error::Validation(format!(
                "{what} row {i} has {} entries, expected {n}",
                r.len()
            )));
        }
    }
    Ok(())
}

impl ModelFile {
    fn into_model(self) -> Result<ModelSpec> {
        check_rect(&self.map.c, "map.C")?;
        check_rect(&self.map.d, "map.D")?;
        check_rect(&self.ph.t, "ph.T")?;
        let map = MapDescriptor::new(from_rows(&self.map.c), from_rows(&self.map.d))?;
        let ph = PhDistribution::new(RowDVector::from_vec(self.ph.alpha), from_rows(&self.ph.t))?;
        ModelSpec::new(map, ph, self.d)
    }
}

impl From<&ModelSpec> for ModelFile {
    fn from(m: &ModelSpec) -> Self {
        ModelFile {
            map: MapFile {
                c: to_rows(m.map.c()),
                d: to_rows(m.map.d()),
            },
            ph: PhFile {
                alpha: m.ph.alpha().iter().copied().collect(),
                t: to_rows(m.ph.t()),
            },
            d: m.d,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex2_ph() -> PhDistribution {
        PhDistribution::new(
            RowDVector::from_row_slice(&[0.5, 0.5]),
            DMatrix::from_row_slice(2, 2, &[-5.0, 3.0, 2.0, -7.0]),
        )
        .unwrap()
    }

    #[test]
    fn ex2_mean_and_residual() {
        let ph = ex2_ph();
        assert!((ph_mean(&ph).unwrap() - 8.5 / 29.0).abs() < 1e-14);
        let (theta, xr) = ph_residual(&ph).unwrap();
        assert!((theta[0] - 9.0 / 17.0).abs() < 1e-14);
        assert!((theta[1] - 8.0 / 17.0).abs() < 1e-14);
        assert!((xr - 146.0 / 493.0).abs() < 1e-14);
    }

    #[test]
    fn exponential_residual_is_mean() {
        let ph = PhDistribution::exponential(2.5).unwrap();
        let (theta, xr) = ph_residual(&ph).unwrap();
        assert_eq!(theta[0], 1.0);
        assert_eq!(xr, ph_mean(&ph).unwrap());
    }

    #[test]
    fn erlang_mean() {
        let ph = PhDistribution::erlang(3, 6.0).unwrap();
        assert!((ph_mean(&ph).unwrap() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn poisson_rate_and_scaling() {
        let m = MapDescriptor::poisson(2.0).unwrap();
        assert!((map_rate(&m) - 2.0).abs() < 1e-15);
        let s = scaled_map(&m, 7);
        assert_eq!(s.c()[(0, 0)], -14.0);
        assert_eq!(s.d()[(0, 0)], 14.0);
        assert_eq!(scaled_map(&m, 1), m);
    }

    #[test]
    fn rejects_bad_maps() {
        let c = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -2.0]);
        let d = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.5, 0.0]);
        let e = MapDescriptor::new(c.clone(), d).unwrap_err();
        assert!(e.to_string().contains("row 1"), "{e}");
        let d = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.5, -0.5]);
        let e = MapDescriptor::new(c, d).unwrap_err();
        assert!(e.to_string().contains("map.D row 1"), "{e}");
    }

    #[test]
    fn json_round_trip() {
        let model = ModelSpec::new(MapDescriptor::poisson(1.0).unwrap(), ex2_ph(), 2).unwrap();
        let back = ModelSpec::from_json(&model.to_json()).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.hash(), model.hash());
    }
}
