//! Point reconciliation: oblique projections onto the coherent subspace,
//! bottom-up and partly bottom-up composites, and the non-negativity heuristic.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{shrunk_covariance, CovarianceMatrix, CovarianceSpec};
use crate::error::{Error, Result};
use crate::hierarchy::CrossTemporalStructure;
use crate::linalg::{full_column_pinv, SpdFactor};
use crate::residuals::OneStepResiduals;

/// Linear reconciliation `x̃ = M x̂` with `M = S_ct G`.
///
/// Build once per (structure, covariance) and apply to any number of vectors.
#[derive(Debug, Clone)]
pub struct ReconciliationMap {
    m: DMatrix<f64>,
    g: DMatrix<f64>,
    omega: Option<CovarianceMatrix>,
    structure: CrossTemporalStructure,
}

impl ReconciliationMap {
    /// `M = I − Ω C'(C Ω C')⁻¹ C`.
    ///
    /// Factored covariances (`Ω = J Q J'`, always singular) are reconciled
    /// with the generalised structural form `G = (K'Q⁻¹K)⁻¹K'Q⁻¹J⁺`, `K = J⁺S`.
    pub fn projection(structure: &CrossTemporalStructure, omega: &CovarianceMatrix) -> Result<Self> {
        check_omega(structure, omega)?;
        if let Some(f) = omega.factor() {
            let jp = full_column_pinv(&f.j, "covariance expansion matrix")?;
            let k = &jp * structure.summation();
            let q = SpdFactor::new(&f.q, &format!("{} reduced covariance", omega.kind()))?;
            let qk = q.solve(&k);
            let normal = k.transpose() * &qk;
            let nf = SpdFactor::new(&normal, &format!("{} structural normal matrix", omega.kind()))?;
            let g = nf.solve(&(qk.transpose() * jp));
            return Ok(Self::from_g(structure, g, Some(omega.clone())));
        }
        let c = structure.constraints();
        let wc = omega.values() * c.transpose();
        let cwc = c * &wc;
        let factor = SpdFactor::new(&cwc, &format!("C Ω C' for {}", omega.kind()))?;
        let m = DMatrix::identity(structure.dim(), structure.dim()) - &wc * factor.solve(c);
        let g = m.select_rows(&structure.bottom_hf_indices());
        Ok(Self {
            m,
            g,
            omega: Some(omega.clone()),
            structure: structure.clone(),
        })
    }

    /// `G = (S'Ω⁻¹S)⁻¹S'Ω⁻¹` for positive definite `Ω`.
    pub fn structural(structure: &CrossTemporalStructure, omega: &CovarianceMatrix) -> Result<Self> {
        check_omega(structure, omega)?;
        let w = SpdFactor::new(omega.values(), &format!("{} covariance", omega.kind()))?;
        let s = structure.summation();
        let ws = w.solve(s);
        let normal = s.transpose() * &ws;
        let nf = SpdFactor::new(&normal, "S' Ω⁻¹ S")?;
        let g = nf.solve(&ws.transpose());
        Ok(Self::from_g(structure, g, Some(omega.clone())))
    }

    /// Cross-temporal bottom-up: keeps the high-frequency bottom forecasts.
    pub fn bottom_up(structure: &CrossTemporalStructure) -> Self {
        let mut g = DMatrix::zeros(structure.bottom_dim(), structure.dim());
        for (r, &c) in structure.bottom_hf_indices().iter().enumerate() {
            g[(r, c)] = 1.0;
        }
        Self::from_g(structure, g, None)
    }

    /// One-dimensional reconciliation followed by bottom-up in the other dimension.
    pub fn partly_bottom_up(structure: &CrossTemporalStructure, inner: &InnerWeights) -> Result<Self> {
        let te = structure.te();
        let cs = structure.cs();
        let (m, na, nb) = (te.m(), cs.n_upper(), cs.n_bottom());
        let mut g = DMatrix::zeros(structure.bottom_dim(), structure.dim());
        match inner {
            InnerWeights::CrossSectional(w) => {
                if w.shape() != (cs.n(), cs.n()) {
                    return Err(Error::dims("cross-sectional weights", cs.n(), w.nrows()));
                }
                let gcs = bottom_rows_of_projection(cs.constraints(), w, na, "cross-sectional C W C'")?;
                for b in 0..nb {
                    for j in 0..m {
                        for i in 0..cs.n() {
                            g[(b * m + j, structure.index(i, 1, j))] = gcs[(b, i)];
                        }
                    }
                }
            }
            InnerWeights::Temporal(ws) => {
                if ws.len() != nb {
                    return Err(Error::dims("temporal weights", nb, ws.len()));
                }
                let width = te.width();
                for (b, w) in ws.iter().enumerate() {
                    if w.shape() != (width, width) {
                        return Err(Error::dims("temporal weights", width, w.nrows()));
                    }
                    let gte = bottom_rows_of_projection(te.constraints(), w, te.k_star(), "temporal C W C'")?;
                    let base = structure.index(na + b, te.m(), 0);
                    for j in 0..m {
                        for pos in 0..width {
                            g[(b * m + j, base + pos)] = gte[(j, pos)];
                        }
                    }
                }
            }
        }
        Ok(Self::from_g(structure, g, None))
    }

    fn from_g(structure: &CrossTemporalStructure, g: DMatrix<f64>, omega: Option<CovarianceMatrix>) -> Self {
        Self {
            m: structure.summation() * &g,
            g,
            omega,
            structure: structure.clone(),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn omega(&self) -> Option<&CovarianceMatrix> {
        self.omega.as_ref()
    }

    pub fn structure(&self) -> &CrossTemporalStructure {
        &self.structure
    }

    pub fn reconcile(&self, xhat: &DVector<f64>) -> Result<DVector<f64>> {
        if xhat.len() != self.m.ncols() {
            return Err(Error::dims("base forecast", self.m.ncols(), xhat.len()));
        }
        if xhat.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("base forecast has non-finite entries"));
        }
        Ok(&self.m * xhat)
    }

    /// Reconciles every row of `rows` (one stacked vector per row).
    pub fn reconcile_rows(&self, rows: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if rows.ncols() != self.m.ncols() {
            return Err(Error::dims("forecast rows", self.m.ncols(), rows.ncols()));
        }
        Ok(rows * self.m.transpose())
    }
}

fn check_omega(structure: &CrossTemporalStructure, omega: &CovarianceMatrix) -> Result<()> {
    if omega.dim() != structure.dim() {
        return Err(Error::dims("covariance", structure.dim(), omega.dim()));
    }
    Ok(())
}

/// Rows of `I − W C'(C W C')⁻¹C` for the trailing (bottom) coordinates.
fn bottom_rows_of_projection(c: &DMatrix<f64>, w: &DMatrix<f64>, upper: usize, context: &str) -> Result<DMatrix<f64>> {
    let dim = w.nrows();
    if c.nrows() == 0 {
        return Ok(DMatrix::identity(dim, dim));
    }
    let wc = w * c.transpose();
    let f = SpdFactor::new(&(c * &wc), context)?;
    let m = DMatrix::identity(dim, dim) - &wc * f.solve(c);
    Ok(m.rows(upper, dim - upper).into_owned())
}

/// Weights of the one-dimensional step of a partly bottom-up reconciliation.
#[derive(Debug, Clone, PartialEq)]
pub enum InnerWeights {
    /// `n × n` cross-sectional covariance used on the high-frequency columns.
    CrossSectional(DMatrix<f64>),
    /// One `(m+k*) × (m+k*)` temporal covariance per bottom series.
    Temporal(Vec<DMatrix<f64>>),
}

impl InnerWeights {
    /// Shrunk cross-sectional covariance of the high-frequency one-step residuals.
    pub fn cs_shrinkage(
        structure: &CrossTemporalStructure,
        residuals: &OneStepResiduals,
        spec: &CovarianceSpec,
    ) -> Result<Self> {
        let q = structure.te().order_index(1)?;
        let (w, _) = shrunk_covariance(&residuals.order_matrix(q), spec)?;
        Ok(Self::CrossSectional(w))
    }

    /// Diagonal temporal weights from each bottom series' one-step residual variances.
    pub fn te_wlsv(structure: &CrossTemporalStructure, residuals: &OneStepResiduals, center: bool) -> Result<Self> {
        let te = structure.te();
        let na = structure.cs().n_upper();
        let weights = (0..structure.cs().n_bottom())
            .map(|b| {
                let diag: Vec<f64> = te
                    .factors()
                    .iter()
                    .enumerate()
                    .flat_map(|(q, &k)| std::iter::repeat_n(residuals.variance(na + b, q, center), te.periods(k)))
                    .collect();
                if diag.iter().any(|v| !(*v > 0.0)) {
                    return Err(Error::Singular {
                        context: "temporal wlsv".into(),
                        detail: format!("zero residual variance for bottom series {b}"),
                    });
                }
                Ok(DMatrix::from_diagonal(&DVector::from_vec(diag)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::Temporal(weights))
    }
}

/// Reconciliation procedures exposed to the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Cross-temporal bottom-up.
    CtBu,
    /// Cross-sectional reconciliation then temporal bottom-up.
    CtCsBuTe,
    /// Temporal reconciliation then cross-sectional bottom-up.
    CtTeBuCs,
    /// Optimal cross-temporal projection.
    Oct,
}

/// Clamps negative high-frequency bottom values to zero and rebuilds the
/// full vector bottom-up.
pub fn set_negative_to_zero(structure: &CrossTemporalStructure, x: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() != structure.dim() {
        return Err(Error::dims("forecast vector", structure.dim(), x.len()));
    }
    let b = DVector::from_iterator(
        structure.bottom_dim(),
        structure.bottom_hf_indices().into_iter().map(|i| x[i].max(0.0)),
    );
    structure.aggregate_bottom(&b)
}

/// Row-wise [`set_negative_to_zero`].
pub fn set_negative_to_zero_rows(structure: &CrossTemporalStructure, rows: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if rows.ncols() != structure.dim() {
        return Err(Error::dims("forecast rows", structure.dim(), rows.ncols()));
    }
    let idx = structure.bottom_hf_indices();
    let b = rows.select_columns(&idx).map(|v| v.max(0.0));
    Ok(b * structure.summation().transpose())
}

/// Builds the map for `method`; `omega` is required for [`Method::Oct`] and
/// `inner` for the partly bottom-up methods.
pub fn build_map(
    structure: &CrossTemporalStructure,
    method: Method,
    omega: Option<&CovarianceMatrix>,
    inner: Option<&InnerWeights>,
) -> Result<ReconciliationMap> {
    match method {
        Method::CtBu => Ok(ReconciliationMap::bottom_up(structure)),
        Method::Oct => {
            let omega = omega.ok_or_else(|| Error::invalid("oct reconciliation needs a covariance"))?;
            ReconciliationMap::projection(structure, omega)
        }
        Method::CtCsBuTe | Method::CtTeBuCs => {
            let inner = inner.ok_or_else(|| Error::invalid("partly bottom-up needs inner weights"))?;
            let ok = matches!(
                (method, inner),
                (Method::CtCsBuTe, InnerWeights::CrossSectional(_)) | (Method::CtTeBuCs, InnerWeights::Temporal(_))
            );
            if !ok {
                return Err(Error::invalid("inner weights do not match the partly bottom-up direction"));
            }
            ReconciliationMap::partly_bottom_up(structure, inner)
        }
    }
}

/// Reconciles many base vectors in parallel (rows of the result follow `xs`).
pub fn reconcile_many(map: &ReconciliationMap, xs: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    xs.par_iter().map(|x| map.reconcile(x)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{build_omega, CovarianceKind, ResidualInput};
    use crate::residuals::{ResidualKind, ResidualSet};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn toy(m: usize) -> CrossTemporalStructure {
        CrossTemporalStructure::from_parts(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), m).unwrap()
    }

    fn random(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    fn random_spd(dim: usize, seed: u64) -> CovarianceMatrix {
        let a = random(dim, dim, seed);
        let w = &a * a.transpose() + DMatrix::identity(dim, dim);
        CovarianceMatrix::from_matrix(w, CovarianceKind::Sam, None).unwrap()
    }

    fn assert_projection(s: &CrossTemporalStructure, map: &ReconciliationMap) {
        let m = map.matrix();
        assert!((s.constraints() * m).amax() < 1e-8);
        assert!((m * s.summation() - s.summation()).amax() < 1e-8);
        assert!((m * m - m).amax() < 1e-8);
    }

    #[test]
    fn ols_projection_is_symmetric() {
        let s = toy(4);
        let w = build_omega(&CovarianceSpec::new(CovarianceKind::Ols), &s, ResidualInput::None).unwrap();
        let map = ReconciliationMap::projection(&s, &w).unwrap();
        assert_projection(&s, &map);
        assert!((map.matrix() - map.matrix().transpose()).amax() < 1e-10);
    }

    #[test]
    fn projection_equals_structural_form() {
        let s = toy(4);
        let w = random_spd(s.dim(), 1);
        let a = ReconciliationMap::projection(&s, &w).unwrap();
        let b = ReconciliationMap::structural(&s, &w).unwrap();
        assert_projection(&s, &a);
        assert!((a.matrix() - b.matrix()).amax() < 1e-8);
        assert!((a.g() - b.g()).amax() < 1e-8);
    }

    #[test]
    fn coherent_input_is_fixed_point() {
        let s = toy(4);
        let w = random_spd(s.dim(), 2);
        let map = ReconciliationMap::projection(&s, &w).unwrap();
        let b = DVector::from_iterator(8, (0..8).map(|v| v as f64));
        let x = s.aggregate_bottom(&b).unwrap();
        assert!((map.reconcile(&x).unwrap() - &x).amax() < 1e-10);
        assert_eq!(map.reconcile(&DVector::zeros(21)).unwrap(), DVector::zeros(21));
        assert!(map.reconcile(&DVector::zeros(3)).is_err());
    }

    #[test]
    fn factored_kinds_give_projections() {
        let s = toy(2);
        let e = ResidualSet::new(&s, random(60, s.dim(), 3), ResidualKind::MultiStep).unwrap();
        for kind in [CovarianceKind::Hb, CovarianceKind::H, CovarianceKind::B] {
            let w = build_omega(&CovarianceSpec::new(kind), &s, ResidualInput::MultiStep(&e)).unwrap();
            let map = ReconciliationMap::projection(&s, &w).unwrap();
            assert_projection(&s, &map);
        }
        // HB collapses to the unweighted projection
        let hb = build_omega(&CovarianceSpec::new(CovarianceKind::Hb), &s, ResidualInput::MultiStep(&e)).unwrap();
        let ols = build_omega(&CovarianceSpec::new(CovarianceKind::Ols), &s, ResidualInput::None).unwrap();
        let a = ReconciliationMap::projection(&s, &hb).unwrap();
        let b = ReconciliationMap::projection(&s, &ols).unwrap();
        assert!((a.matrix() - b.matrix()).amax() < 1e-10);
    }

    #[test]
    fn bottom_up_sums_bottom_values() {
        let s = toy(4);
        let map = ReconciliationMap::bottom_up(&s);
        assert_projection(&s, &map);
        let x = map.reconcile(&DVector::from_element(21, 1.0)).unwrap();
        assert_eq!(x[0], 8.0);
        let trivial = CrossTemporalStructure::from_parts(DMatrix::zeros(0, 1), 1).unwrap();
        assert_eq!(ReconciliationMap::bottom_up(&trivial).matrix(), &DMatrix::identity(1, 1));
    }

    #[test]
    fn partly_bottom_up_modes() {
        let s = toy(4);
        let xhat = DVector::from_iterator(21, random(21, 1, 4).iter().cloned());
        let cs = InnerWeights::CrossSectional(random_spd(3, 5).values().clone());
        let te = InnerWeights::Temporal(vec![random_spd(7, 6).values().clone(), random_spd(7, 7).values().clone()]);
        for inner in [&cs, &te] {
            let map = ReconciliationMap::partly_bottom_up(&s, inner).unwrap();
            assert_projection(&s, &map);
            let out = map.reconcile(&xhat).unwrap();
            assert!(s.coherence_error(&out) < 1e-10);
        }
    }

    #[test]
    fn bottom_up_inner_steps_commute() {
        let s = toy(2);
        // a weight matrix that puts almost all trust on the bottom coordinates
        let mut wcs = DMatrix::identity(3, 3);
        wcs[(0, 0)] = 1e6;
        let mut wte = DMatrix::identity(3, 3);
        wte[(0, 0)] = 1e6;
        let a = ReconciliationMap::partly_bottom_up(&s, &InnerWeights::CrossSectional(wcs)).unwrap();
        let b = ReconciliationMap::partly_bottom_up(&s, &InnerWeights::Temporal(vec![wte.clone(), wte])).unwrap();
        let bu = ReconciliationMap::bottom_up(&s);
        assert!((a.matrix() - bu.matrix()).amax() < 1e-5);
        assert!((b.matrix() - bu.matrix()).amax() < 1e-5);
    }

    #[test]
    fn negative_values_clamped() {
        let s = toy(2);
        let b = DVector::from_vec(vec![1.0, -2.0, 3.0, 4.0]);
        let x = s.aggregate_bottom(&b).unwrap();
        let out = set_negative_to_zero(&s, &x).unwrap();
        let expected = s.aggregate_bottom(&DVector::from_vec(vec![1.0, 0.0, 3.0, 4.0])).unwrap();
        assert_eq!(out, expected);
        assert!(out.iter().all(|v| *v >= 0.0));
        let pos = s.aggregate_bottom(&DVector::from_element(4, 1.0)).unwrap();
        assert_eq!(set_negative_to_zero(&s, &pos).unwrap(), pos);
        let rows = DMatrix::from_row_slice(1, 9, x.as_slice());
        assert_eq!(set_negative_to_zero_rows(&s, &rows).unwrap().row(0).transpose(), out);
    }

    #[test]
    fn singular_covariance_fails_loudly() {
        let s = toy(2);
        let w = CovarianceMatrix::from_matrix(DMatrix::zeros(9, 9), CovarianceKind::Sam, None).unwrap();
        let err = ReconciliationMap::projection(&s, &w).unwrap_err();
        assert!(err.is_numerical());
    }
}
