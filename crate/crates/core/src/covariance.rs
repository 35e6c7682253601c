//! Error covariance matrices `Ω_ct`: fixed approximations, residual-based
//! estimators and the Kronecker-factored shrinkage estimators.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::CrossTemporalStructure;
use crate::linalg::{check_psd, cross_covariance, kron, symmetrize};
use crate::residuals::{format_f64, OneStepResiduals, ResidualSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceKind {
    Ols,
    Struc,
    Wlsv,
    Bdshr,
    Shr,
    Sam,
    G,
    Hb,
    H,
    B,
}

impl CovarianceKind {
    pub const ALL: [CovarianceKind; 10] = [
        Self::Ols,
        Self::Struc,
        Self::Wlsv,
        Self::Bdshr,
        Self::Shr,
        Self::Sam,
        Self::G,
        Self::Hb,
        Self::H,
        Self::B,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Ols => "ols",
            Self::Struc => "struc",
            Self::Wlsv => "wlsv",
            Self::Bdshr => "bdshr",
            Self::Shr => "shr",
            Self::Sam => "sam",
            Self::G => "g",
            Self::Hb => "hb",
            Self::H => "h",
            Self::B => "b",
        }
    }

    /// Kinds whose matrix is `J Q J'` with a thin `J`, hence always singular.
    pub fn is_factored(self) -> bool {
        matches!(self, Self::Hb | Self::H | Self::B)
    }

    pub fn needs_residuals(self) -> bool {
        !matches!(self, Self::Ols | Self::Struc)
    }

    pub fn accepts_one_step(self) -> bool {
        matches!(self, Self::Wlsv | Self::Bdshr)
    }
}

impl fmt::Display for CovarianceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CovarianceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown covariance kind '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMode {
    Estimated,
    Fixed(f64),
}

/// Which `Ω_ct` to build and how.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSpec {
    pub kind: CovarianceKind,
    pub lambda: LambdaMode,
    /// Subtract column means from residuals before estimating.
    pub center: bool,
    /// Divide cross products by `rows − 1` instead of `rows`.
    pub unbiased: bool,
}

impl CovarianceSpec {
    pub fn new(kind: CovarianceKind) -> Self {
        Self {
            kind,
            lambda: LambdaMode::Estimated,
            center: false,
            unbiased: false,
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::invalid(format!("fixed lambda {lambda} outside [0, 1]")));
        }
        self.lambda = LambdaMode::Fixed(lambda);
        Ok(self)
    }
}

/// Residual input for [`build_omega`].
#[derive(Debug, Clone, Copy)]
pub enum ResidualInput<'a> {
    None,
    MultiStep(&'a ResidualSet),
    OneStep(&'a OneStepResiduals),
}

impl ResidualInput<'_> {
    fn label(&self) -> &'static str {
        match self {
            Self::None => "no",
            Self::MultiStep(_) => "multi-step",
            Self::OneStep(_) => "one-step",
        }
    }
}

/// `Ω = J Q J'` with thin `J` of full column rank and positive definite `Q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KroneckerFactor {
    pub j: DMatrix<f64>,
    pub q: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    values: DMatrix<f64>,
    kind: CovarianceKind,
    lambda: Option<f64>,
    factor: Option<KroneckerFactor>,
}

impl CovarianceMatrix {
    /// Wraps an arbitrary symmetric PSD matrix.
    pub fn from_matrix(values: DMatrix<f64>, kind: CovarianceKind, lambda: Option<f64>) -> Result<Self> {
        if values.nrows() != values.ncols() {
            return Err(Error::dims("covariance", "square matrix", format!("{}x{}", values.nrows(), values.ncols())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("covariance has non-finite entries"));
        }
        let scale = values.amax().max(1.0);
        let asym = (&values - values.transpose()).amax();
        if asym > 1e-10 * scale {
            return Err(Error::invalid(format!("covariance not symmetric (max asymmetry {asym:e})")));
        }
        let mut values = values;
        symmetrize(&mut values);
        check_psd(&values)?;
        Ok(Self {
            values,
            kind,
            lambda,
            factor: None,
        })
    }

    pub fn from_factor(factor: KroneckerFactor, kind: CovarianceKind, lambda: Option<f64>) -> Result<Self> {
        if factor.j.ncols() != factor.q.nrows() {
            return Err(Error::dims("covariance factor", factor.j.ncols(), factor.q.nrows()));
        }
        let mut values = &factor.j * &factor.q * factor.j.transpose();
        symmetrize(&mut values);
        let mut out = Self::from_matrix(values, kind, lambda)?;
        out.factor = Some(factor);
        Ok(out)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn kind(&self) -> CovarianceKind {
        self.kind
    }

    pub fn lambda(&self) -> Option<f64> {
        self.lambda
    }

    pub fn factor(&self) -> Option<&KroneckerFactor> {
        self.factor.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        for r in 0..self.dim() {
            w.write_record(self.values.row(r).iter().map(|v| format_f64(*v)))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> CovarianceJson {
        let dim = self.dim();
        let lower = (0..dim)
            .flat_map(|i| (0..=i).map(move |j| (i, j)))
            .map(|(i, j)| self.values[(i, j)])
            .collect();
        CovarianceJson {
            kind: self.kind,
            lambda: self.lambda,
            dim,
            lower,
            factor: self.factor.clone(),
        }
    }

    pub fn from_json(json: &CovarianceJson) -> Result<Self> {
        if let Some(f) = &json.factor {
            let out = Self::from_factor(f.clone(), json.kind, json.lambda)?;
            if out.dim() != json.dim {
                return Err(Error::dims("covariance json factor", json.dim, out.dim()));
            }
            return Ok(out);
        }
        let dim = json.dim;
        if json.lower.len() != dim * (dim + 1) / 2 {
            return Err(Error::dims("covariance json lower triangle", dim * (dim + 1) / 2, json.lower.len()));
        }
        let mut values = DMatrix::zeros(dim, dim);
        let mut it = json.lower.iter();
        for i in 0..dim {
            for j in 0..=i {
                let v = *it.next().expect("length checked");
                values[(i, j)] = v;
                values[(j, i)] = v;
            }
        }
        Self::from_matrix(values, json.kind, json.lambda)
    }
}

/// Compact serialised form: row-major lower triangle plus the optional factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceJson {
    pub kind: CovarianceKind,
    pub lambda: Option<f64>,
    pub dim: usize,
    pub lower: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor: Option<KroneckerFactor>,
}

/// Schäfer–Strimmer shrinkage intensity toward the diagonal of the
/// cross-product matrix of `x` (rows are observations).
pub fn shrinkage_intensity(x: &DMatrix<f64>, center: bool) -> Result<f64> {
    let rows = x.nrows();
    if rows < 3 {
        return Err(Error::invalid(format!("shrinkage needs at least 3 residual rows, got {rows}")));
    }
    let x = if center { centered(x) } else { x.clone() };
    let d = x.ncols();
    let nf = rows as f64;
    let cov = x.transpose() * &x / nf;
    // scaled residuals; zero-variance columns contribute nothing
    let xs = DMatrix::from_fn(rows, d, |r, c| {
        let s = cov[(c, c)].sqrt();
        if s > 0.0 {
            x[(r, c)] / s
        } else {
            0.0
        }
    });
    let xs2 = xs.map(|v| v * v);
    let cross = xs.transpose() * &xs;
    let cross2 = xs2.transpose() * &xs2;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..d {
        for j in 0..d {
            if i == j {
                continue;
            }
            num += (cross2[(i, j)] - cross[(i, j)].powi(2) / nf) / (nf * (nf - 1.0));
            let r = cross[(i, j)] / nf;
            den += r * r;
        }
    }
    if den <= 0.0 {
        return Ok(1.0);
    }
    Ok((num / den).clamp(0.0, 1.0))
}

fn centered(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    let rows = x.nrows().max(1) as f64;
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / rows;
        col.add_scalar_mut(-mean);
    }
    out
}

/// `λ·diag(Ω̂) + (1−λ)·Ω̂` for the residual block `x`. Returns the matrix and λ.
pub fn shrunk_covariance(x: &DMatrix<f64>, spec: &CovarianceSpec) -> Result<(DMatrix<f64>, f64)> {
    let lambda = match spec.lambda {
        LambdaMode::Fixed(l) => l,
        LambdaMode::Estimated => shrinkage_intensity(x, spec.center)?,
    };
    if x.nrows() == 0 {
        return Err(Error::invalid("empty residual block"));
    }
    let sample = cross_covariance(x, spec.center, spec.unbiased);
    let mut out = sample.scale(1.0 - lambda);
    for i in 0..out.nrows() {
        out[(i, i)] = sample[(i, i)];
    }
    Ok((out, lambda))
}

/// Builds the covariance matrix requested by `spec`.
pub fn build_omega(
    spec: &CovarianceSpec,
    structure: &CrossTemporalStructure,
    residuals: ResidualInput<'_>,
) -> Result<CovarianceMatrix> {
    let kind = spec.kind;
    let dim = structure.dim();
    let mismatch = |required: &'static str| Error::ResidualKindMismatch {
        kind: kind.to_string(),
        required,
        found: residuals.label(),
    };
    if kind.needs_residuals() && matches!(residuals, ResidualInput::None) {
        return Err(Error::MissingResiduals(kind.to_string()));
    }
    if let ResidualInput::MultiStep(r) = residuals {
        if r.matrix().ncols() != dim {
            return Err(Error::dims("residual columns", dim, r.matrix().ncols()));
        }
    }
    let multi = || match residuals {
        ResidualInput::MultiStep(r) => Ok(r),
        _ => Err(mismatch("multi-step")),
    };
    match kind {
        CovarianceKind::Ols => CovarianceMatrix::from_matrix(DMatrix::identity(dim, dim), kind, None),
        CovarianceKind::Struc => {
            let weights = structure.summation().column_sum();
            CovarianceMatrix::from_matrix(DMatrix::from_diagonal(&weights), kind, None)
        }
        CovarianceKind::Wlsv => {
            let variances = wlsv_variances(structure, residuals, spec.center)?;
            if let Some(pos) = variances.iter().position(|v| !(*v > 0.0)) {
                return Err(Error::Singular {
                    context: "wlsv".into(),
                    detail: format!("zero residual variance at stacked index {pos}"),
                });
            }
            CovarianceMatrix::from_matrix(DMatrix::from_diagonal(&variances.into()), kind, None)
        }
        CovarianceKind::Bdshr => bdshr(spec, structure, residuals),
        CovarianceKind::Sam => {
            let e = multi()?.matrix();
            CovarianceMatrix::from_matrix(cross_covariance(e, spec.center, spec.unbiased), kind, None)
        }
        CovarianceKind::Shr | CovarianceKind::G => {
            let (w, lambda) = shrunk_covariance(multi()?.matrix(), spec)?;
            CovarianceMatrix::from_matrix(w, kind, Some(lambda))
        }
        CovarianceKind::Hb | CovarianceKind::H | CovarianceKind::B => {
            let r = multi()?;
            let (indices, j) = factor_layout(kind, structure);
            let (q, lambda) = shrunk_covariance(&r.select_columns(&indices), spec)?;
            CovarianceMatrix::from_factor(KroneckerFactor { j, q }, kind, Some(lambda))
        }
    }
}

/// Residual columns feeding `Q` and the expansion matrix `J` for HB/H/B.
pub fn factor_layout(kind: CovarianceKind, structure: &CrossTemporalStructure) -> (Vec<usize>, DMatrix<f64>) {
    let te = structure.te();
    let cs = structure.cs();
    let (n, m, width) = (structure.n(), te.m(), te.width());
    match kind {
        CovarianceKind::Hb => (structure.bottom_hf_indices(), structure.summation().clone()),
        CovarianceKind::H => {
            let idx = (0..n)
                .flat_map(|i| (0..m).map(move |j| (i, j)))
                .map(|(i, j)| structure.index(i, 1, j))
                .collect();
            (idx, kron(&DMatrix::identity(n, n), te.summation()))
        }
        CovarianceKind::B => {
            let idx = (cs.n_upper() * width..n * width).collect();
            (idx, kron(cs.summation(), &DMatrix::identity(width, width)))
        }
        _ => unreachable!("not a factored kind"),
    }
}

fn wlsv_variances(structure: &CrossTemporalStructure, residuals: ResidualInput<'_>, center: bool) -> Result<Vec<f64>> {
    let te = structure.te();
    let mut out = Vec::with_capacity(structure.dim());
    for i in 0..structure.n() {
        for (q, &k) in te.factors().iter().enumerate() {
            let v = match residuals {
                ResidualInput::OneStep(r) => r.variance(i, q, center),
                ResidualInput::MultiStep(r) => {
                    let col = r.matrix().column(structure.index(i, k, 0)).into_owned();
                    let mean = if center { col.mean() } else { 0.0 };
                    col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len().max(1) as f64
                }
                ResidualInput::None => unreachable!("checked by caller"),
            };
            out.extend(std::iter::repeat_n(v, te.periods(k)));
        }
    }
    Ok(out)
}

fn bdshr(spec: &CovarianceSpec, structure: &CrossTemporalStructure, residuals: ResidualInput<'_>) -> Result<CovarianceMatrix> {
    let te = structure.te();
    let n = structure.n();
    let mut values = DMatrix::zeros(structure.dim(), structure.dim());
    for (q, &k) in te.factors().iter().enumerate() {
        let block = match residuals {
            ResidualInput::OneStep(r) => r.order_matrix(q),
            ResidualInput::MultiStep(r) => {
                // every horizon column of order k contributes one row per period
                let mk = te.periods(k);
                let e = r.matrix();
                DMatrix::from_fn(e.nrows() * mk, n, |row, i| {
                    e[(row / mk, structure.index(i, k, row % mk))]
                })
            }
            ResidualInput::None => unreachable!("checked by caller"),
        };
        let (w, _) = shrunk_covariance(&block, spec)?;
        for j in 0..te.periods(k) {
            for a in 0..n {
                for b in 0..n {
                    values[(structure.index(a, k, j), structure.index(b, k, j))] = w[(a, b)];
                }
            }
        }
    }
    CovarianceMatrix::from_matrix(values, CovarianceKind::Bdshr, None)
}

fn pairs(d: u64, with_variances: bool) -> u64 {
    if with_variances {
        d * (d + 1) / 2
    } else {
        d * d.saturating_sub(1) / 2
    }
}

fn factored_dim(kind: CovarianceKind, n: u64, n_b: u64, m: u64, k_star: u64) -> Result<u64> {
    Ok(match kind {
        CovarianceKind::G | CovarianceKind::Shr | CovarianceKind::Sam => n * (k_star + m),
        CovarianceKind::Hb => n_b * m,
        CovarianceKind::H => n * m,
        CovarianceKind::B => n_b * (k_star + m),
        other => return Err(Error::invalid(format!("no parameter count for kind {other}"))),
    })
}

/// Distinct off-diagonal covariances estimated by G/HB/H/B: `d(d−1)/2` for
/// the dimension `d` of the block that is actually estimated.
pub fn parameter_count(kind: CovarianceKind, n: u64, n_b: u64, m: u64, k_star: u64) -> Result<u64> {
    Ok(pairs(factored_dim(kind, n, n_b, m, k_star)?, false))
}

/// As [`parameter_count`] but also counting the `d` variances: `d(d+1)/2`.
pub fn parameter_count_with_variances(kind: CovarianceKind, n: u64, n_b: u64, m: u64, k_star: u64) -> Result<u64> {
    Ok(pairs(factored_dim(kind, n, n_b, m, k_star)?, true))
}

/// [`parameter_count`] for a concrete structure.
pub fn structure_parameter_count(kind: CovarianceKind, structure: &CrossTemporalStructure) -> Result<u64> {
    let te = structure.te();
    parameter_count(
        kind,
        structure.n() as u64,
        structure.cs().n_bottom() as u64,
        te.m() as u64,
        te.k_star() as u64,
    )
}
