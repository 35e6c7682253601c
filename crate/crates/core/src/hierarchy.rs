//! Cross-sectional, temporal and cross-temporal constraint algebra.
//!
//! Every stacked vector in this crate uses one canonical layout: series-major,
//! then temporal aggregation order from the largest factor `m` down to `1`,
//! then time ascending within the order. For series `i` (0-based), order `k`
//! and position `j` (0-based, `j < m/k`) the index is
//!
//! ```text
//! idx(i, k, j) = i·(m + k*) + offset(k) + j,   offset(k) = Σ_{k' ∈ factors, k' > k} m/k'
//! ```
//!
//! which is `vec(X')` for the `n × (m + k*)` matrix `X` whose rows are series
//! and whose columns run over the temporal orders.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::kron;

/// Constraint and summation matrices of a cross-sectional hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossSectionalStructure {
    n_upper: usize,
    n_bottom: usize,
    agg: DMatrix<f64>,
    constraints: DMatrix<f64>,
    summation: DMatrix<f64>,
}

impl CrossSectionalStructure {
    /// Builds `C_cs = [I | −A]` and `S_cs = [A; I]` from the aggregation matrix.
    ///
    /// Entries may be any finite reals.
    pub fn new(agg: DMatrix<f64>) -> Result<Self> {
        if agg.nrows() == 0 || agg.ncols() == 0 {
            return Err(Error::invalid("aggregation matrix is empty"));
        }
        Self::build(agg)
    }

    /// A structure with no upper series (every series is a bottom series).
    pub fn bottom_only(n_bottom: usize) -> Result<Self> {
        if n_bottom == 0 {
            return Err(Error::invalid("at least one bottom series is required"));
        }
        Self::build(DMatrix::zeros(0, n_bottom))
    }

    fn build(agg: DMatrix<f64>) -> Result<Self> {
        if agg.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("aggregation matrix has non-finite entries"));
        }
        let (na, nb) = agg.shape();
        let n = na + nb;
        let mut constraints = DMatrix::zeros(na, n);
        let mut summation = DMatrix::zeros(n, nb);
        for r in 0..na {
            constraints[(r, r)] = 1.0;
            for c in 0..nb {
                constraints[(r, na + c)] = -agg[(r, c)];
                summation[(r, c)] = agg[(r, c)];
            }
        }
        for c in 0..nb {
            summation[(na + c, c)] = 1.0;
        }
        Ok(Self {
            n_upper: na,
            n_bottom: nb,
            agg,
            constraints,
            summation,
        })
    }

    pub fn n_upper(&self) -> usize {
        self.n_upper
    }

    pub fn n_bottom(&self) -> usize {
        self.n_bottom
    }

    /// Total number of series `n = n_a + n_b`.
    pub fn n(&self) -> usize {
        self.n_upper + self.n_bottom
    }

    pub fn agg(&self) -> &DMatrix<f64> {
        &self.agg
    }

    pub fn constraints(&self) -> &DMatrix<f64> {
        &self.constraints
    }

    pub fn summation(&self) -> &DMatrix<f64> {
        &self.summation
    }
}

/// Temporal hierarchy induced by all factors of the seasonal period `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalStructure {
    m: usize,
    factors: Vec<usize>,
    k_star: usize,
    agg: DMatrix<f64>,
    constraints: DMatrix<f64>,
    summation: DMatrix<f64>,
}

/// All factors of `m` in descending order, by trial division.
pub fn factors_descending(m: usize) -> Vec<usize> {
    let mut small = Vec::new();
    let mut large = Vec::new();
    let mut d = 1;
    while d * d <= m {
        if m.is_multiple_of(d) {
            small.push(d);
            if d != m / d {
                large.push(m / d);
            }
        }
        d += 1;
    }
    // large is already descending, small ascending
    large.extend(small.into_iter().rev());
    large
}

impl TemporalStructure {
    pub fn new(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("seasonal period m must be at least 1"));
        }
        let factors = factors_descending(m);
        let k_star: usize = factors.iter().filter(|&&k| k != 1).map(|&k| m / k).sum();
        let mut agg = DMatrix::zeros(k_star, m);
        let mut row = 0;
        for &k in factors.iter().filter(|&&k| k != 1) {
            for block in 0..m / k {
                for t in block * k..(block + 1) * k {
                    agg[(row, t)] = 1.0;
                }
                row += 1;
            }
        }
        let c = m + k_star;
        let mut constraints = DMatrix::zeros(k_star, c);
        let mut summation = DMatrix::zeros(c, m);
        for r in 0..k_star {
            constraints[(r, r)] = 1.0;
            for t in 0..m {
                constraints[(r, k_star + t)] = -agg[(r, t)];
                summation[(r, t)] = agg[(r, t)];
            }
        }
        for t in 0..m {
            summation[(k_star + t, t)] = 1.0;
        }
        Ok(Self {
            m,
            factors,
            k_star,
            agg,
            constraints,
            summation,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Factors of `m`, strictly descending, from `m` down to `1`.
    pub fn factors(&self) -> &[usize] {
        &self.factors
    }

    pub fn k_star(&self) -> usize {
        self.k_star
    }

    /// Length `m + k*` of one series' stacked temporal vector.
    pub fn width(&self) -> usize {
        self.m + self.k_star
    }

    /// Number of order-`k` periods in one most-aggregated period (`m/k`).
    pub fn periods(&self, k: usize) -> usize {
        self.m / k
    }

    /// Position of order `k` inside [`factors`](Self::factors).
    pub fn order_index(&self, k: usize) -> Result<usize> {
        self.factors
            .iter()
            .position(|&f| f == k)
            .ok_or_else(|| Error::invalid(format!("{k} is not a factor of m = {}", self.m)))
    }

    /// Offset of order `k`'s block inside a series' temporal vector.
    pub fn offset(&self, k: usize) -> usize {
        self.factors
            .iter()
            .take_while(|&&f| f > k)
            .map(|&f| self.m / f)
            .sum()
    }

    pub fn agg(&self) -> &DMatrix<f64> {
        &self.agg
    }

    pub fn constraints(&self) -> &DMatrix<f64> {
        &self.constraints
    }

    pub fn summation(&self) -> &DMatrix<f64> {
        &self.summation
    }
}

/// Permutation `P` with `P·vec(Y) = vec(Y')` for an `rows × cols` matrix `Y`.
///
/// Stored as an index map: `(P v)[r] = v[source[r]]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Commutation {
    rows: usize,
    cols: usize,
    source: Vec<usize>,
}

impl Commutation {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut source = vec![0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                // vec(Y')[i*cols + j] = Y[i, j] = vec(Y)[j*rows + i]
                source[i * cols + j] = j * rows + i;
            }
        }
        Self { rows, cols, source }
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    /// `P v`.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.source.iter().map(|&s| v[s]))
    }

    /// `P' v`.
    pub fn apply_transpose(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.len());
        for (r, &s) in self.source.iter().enumerate() {
            out[s] = v[r];
        }
        out
    }

    /// Index map `(P v)[r] = v[source()[r]]`.
    pub fn source(&self) -> &[usize] {
        &self.source
    }

    /// Shape `(rows, cols)` of the matrix `Y` being transposed.
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut p = DMatrix::zeros(self.len(), self.len());
        for (r, &s) in self.source.iter().enumerate() {
            p[(r, s)] = 1.0;
        }
        p
    }
}

/// Cross-temporal structure: `S_ct = S_cs ⊗ S_te` and the full-rank constraint matrix.
#[derive(Debug, Clone)]
pub struct CrossTemporalStructure {
    cs: CrossSectionalStructure,
    te: TemporalStructure,
    summation: DMatrix<f64>,
    constraints: DMatrix<f64>,
    commutation: Commutation,
}

impl CrossTemporalStructure {
    pub fn new(cs: CrossSectionalStructure, te: TemporalStructure) -> Self {
        let n = cs.n();
        let na = cs.n_upper();
        let m = te.m();
        let ks = te.k_star();
        let c = te.width();
        let summation = kron(cs.summation(), te.summation());
        // P maps vec(X) (column-major, n × c) to vec(X') (canonical layout).
        let commutation = Commutation::new(n, c);

        // C_* = [0 | I_m ⊗ C_cs] P'  => C_*[r, q] = B[r, source[q]]
        let rows = na * m + n * ks;
        let mut constraints = DMatrix::zeros(rows, n * c);
        let block = kron(&DMatrix::identity(m, m), cs.constraints());
        for r in 0..na * m {
            for (q, &s) in commutation.source().iter().enumerate() {
                if s >= n * ks {
                    constraints[(r, q)] = block[(r, s - n * ks)];
                }
            }
        }
        let te_block = kron(&DMatrix::identity(n, n), te.constraints());
        constraints
            .view_mut((na * m, 0), (n * ks, n * c))
            .copy_from(&te_block);
        Self {
            cs,
            te,
            summation,
            constraints,
            commutation,
        }
    }

    /// Convenience constructor from an aggregation matrix (possibly with zero rows) and `m`.
    pub fn from_parts(agg: DMatrix<f64>, m: usize) -> Result<Self> {
        let cs = if agg.nrows() == 0 {
            CrossSectionalStructure::bottom_only(agg.ncols())?
        } else {
            CrossSectionalStructure::new(agg)?
        };
        Ok(Self::new(cs, TemporalStructure::new(m)?))
    }

    pub fn cs(&self) -> &CrossSectionalStructure {
        &self.cs
    }

    pub fn te(&self) -> &TemporalStructure {
        &self.te
    }

    pub fn summation(&self) -> &DMatrix<f64> {
        &self.summation
    }

    pub fn constraints(&self) -> &DMatrix<f64> {
        &self.constraints
    }

    pub fn commutation(&self) -> &Commutation {
        &self.commutation
    }

    pub fn n(&self) -> usize {
        self.cs.n()
    }

    /// Dimension `n(m + k*)` of the stacked vector.
    pub fn dim(&self) -> usize {
        self.cs.n() * self.te.width()
    }

    /// Dimension `n_b·m` of the coherent subspace.
    pub fn bottom_dim(&self) -> usize {
        self.cs.n_bottom() * self.te.m()
    }

    /// Canonical index of series `i`, order `k`, position `j`.
    pub fn index(&self, series: usize, k: usize, j: usize) -> usize {
        series * self.te.width() + self.te.offset(k) + j
    }

    /// Canonical indices of the high-frequency bottom block, in the order of `b = vec(B')`.
    pub fn bottom_hf_indices(&self) -> Vec<usize> {
        let m = self.te.m();
        (self.cs.n_upper()..self.n())
            .flat_map(|i| (0..m).map(move |j| (i, j)))
            .map(|(i, j)| self.index(i, 1, j))
            .collect()
    }

    /// Canonical indices of all series at order `k` (series-major, time ascending).
    pub fn order_indices(&self, k: usize) -> Vec<usize> {
        let mk = self.te.periods(k);
        (0..self.n())
            .flat_map(|i| (0..mk).map(move |j| (i, j)))
            .map(|(i, j)| self.index(i, k, j))
            .collect()
    }

    /// Maps bottom high-frequency values to the full coherent vector (`S_ct b`).
    pub fn aggregate_bottom(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        if b.len() != self.bottom_dim() {
            return Err(Error::dims("bottom vector", self.bottom_dim(), b.len()));
        }
        Ok(&self.summation * b)
    }

    /// `‖C_ct x‖∞`.
    pub fn coherence_error(&self, x: &DVector<f64>) -> f64 {
        (&self.constraints * x).amax()
    }

    /// Flattens `X` (n × (m+k*)) into the canonical vector `vec(X')`.
    pub fn stack(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        stack_observation(x, self.n(), self.te.width())
    }

    /// Inverse of [`stack`](Self::stack).
    pub fn unstack(&self, v: &DVector<f64>) -> Result<DMatrix<f64>> {
        unstack_observation(v, self.n(), self.te.width())
    }
}

/// `vec(X')` for an `n × width` matrix `X`.
pub fn stack_observation(x: &DMatrix<f64>, n: usize, width: usize) -> Result<DVector<f64>> {
    if x.shape() != (n, width) {
        return Err(Error::dims(
            "stack_observation",
            format!("{n}x{width}"),
            format!("{}x{}", x.nrows(), x.ncols()),
        ));
    }
    Ok(DVector::from_iterator(
        n * width,
        (0..n).flat_map(|i| (0..width).map(move |j| x[(i, j)])),
    ))
}

pub fn unstack_observation(v: &DVector<f64>, n: usize, width: usize) -> Result<DMatrix<f64>> {
    if v.len() != n * width {
        return Err(Error::dims("unstack_observation", n * width, v.len()));
    }
    Ok(DMatrix::from_row_slice(n, width, v.as_slice()))
}

/// Non-overlapping sums of `k` successive values.
pub fn temporally_aggregate(series: &[f64], k: usize) -> Result<Vec<f64>> {
    if k == 0 || !series.len().is_multiple_of(k) {
        return Err(Error::invalid(format!(
            "aggregation order {k} does not divide series length {}",
            series.len()
        )));
    }
    Ok(series.chunks(k).map(|c| c.iter().sum()).collect())
}

/// On-disk hierarchy definition.
///
/// ```json
/// { "agg_matrix": [[1, 1]], "m": 4, "series_names": ["T", "X", "Y"] }
/// ```
///
/// `agg_matrix` is row-major (`n_a` rows of `n_b` entries). A hierarchy
/// without upper series uses `"agg_matrix": []` together with `"n_bottom"`.
/// `series_names`, when present, lists the upper series first and then the
/// bottom series.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HierarchyFile {
    pub agg_matrix: Vec<Vec<f64>>,
    pub m: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub series_names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_bottom: Option<usize>,
}

impl HierarchyFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn structure(&self) -> Result<CrossTemporalStructure> {
        let agg = if self.agg_matrix.is_empty() {
            let nb = self
                .n_bottom
                .ok_or_else(|| Error::invalid("empty agg_matrix requires n_bottom"))?;
            DMatrix::zeros(0, nb)
        } else {
            let cols = self.agg_matrix[0].len();
            if self.agg_matrix.iter().any(|r| r.len() != cols) {
                return Err(Error::invalid("agg_matrix rows have different lengths"));
            }
            if let Some(nb) = self.n_bottom {
                if nb != cols {
                    return Err(Error::dims("hierarchy n_bottom", cols, nb));
                }
            }
            DMatrix::from_row_iterator(
                self.agg_matrix.len(),
                cols,
                self.agg_matrix.iter().flatten().cloned(),
            )
        };
        let structure = CrossTemporalStructure::from_parts(agg, self.m)?;
        if let Some(names) = &self.series_names {
            if names.len() != structure.n() {
                return Err(Error::dims("series_names", structure.n(), names.len()));
            }
        }
        Ok(structure)
    }

    /// Series names, defaulting to `s0, s1, …`.
    pub fn names(&self, n: usize) -> Vec<String> {
        self.series_names
            .clone()
            .unwrap_or_else(|| (0..n).map(|i| format!("s{i}")).collect())
    }
}
