//! Base-model residuals arranged for covariance estimation and bootstrapping.
//!
//! Multi-step residual matrices `E` have one row per most-aggregated period
//! `τ` and columns in the canonical stacked layout: block `(i, k)` of row `τ`
//! holds the errors of the `1..=m/k`-step forecasts of series `i` at order `k`
//! made at the start of period `τ`.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{temporally_aggregate, CrossTemporalStructure, TemporalStructure};
use crate::models::{ArModel, OrderSelection};

/// Observations of every series at every temporal order.
///
/// `levels[i][q]` is series `i` aggregated to order `factors[q]`; all series
/// cover the same `N` complete most-aggregated periods.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalData {
    high_frequency: Vec<Vec<f64>>,
    levels: Vec<Vec<Vec<f64>>>,
    periods: usize,
}

impl TemporalData {
    pub fn from_high_frequency(te: &TemporalStructure, series: Vec<Vec<f64>>) -> Result<Self> {
        let len = series.first().map(Vec::len).unwrap_or(0);
        if series.is_empty() || len == 0 {
            return Err(Error::invalid("no observations"));
        }
        if series.iter().any(|s| s.len() != len) {
            return Err(Error::invalid("series have different lengths"));
        }
        if !len.is_multiple_of(te.m()) {
            return Err(Error::invalid(format!(
                "series length {len} not divisible by m = {}",
                te.m()
            )));
        }
        let levels = series
            .iter()
            .map(|s| {
                te.factors()
                    .iter()
                    .map(|&k| temporally_aggregate(s, k))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            high_frequency: series,
            levels,
            periods: len / te.m(),
        })
    }

    pub fn n_series(&self) -> usize {
        self.high_frequency.len()
    }

    /// Number `N` of most-aggregated periods.
    pub fn periods(&self) -> usize {
        self.periods
    }

    pub fn high_frequency(&self, series: usize) -> &[f64] {
        &self.high_frequency[series]
    }

    /// Series `i` at the order with index `q` in the factor list.
    pub fn level(&self, series: usize, order_index: usize) -> &[f64] {
        &self.levels[series][order_index]
    }

    /// Observations of the most-aggregated period `tau` (0-based) in canonical layout.
    pub fn period_vector(&self, structure: &CrossTemporalStructure, tau: usize) -> Vec<f64> {
        let te = structure.te();
        let mut out = Vec::with_capacity(structure.dim());
        for i in 0..self.n_series() {
            for (q, &k) in te.factors().iter().enumerate() {
                let mk = te.periods(k);
                out.extend_from_slice(&self.levels[i][q][tau * mk..(tau + 1) * mk]);
            }
        }
        out
    }
}

/// One fitted model per (series, temporal order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSet {
    models: Vec<Vec<ArModel>>,
}

impl ModelSet {
    pub fn new(models: Vec<Vec<ArModel>>) -> Self {
        Self { models }
    }

    /// Fits an AR model independently to every (series, order) pair.
    pub fn fit(data: &TemporalData, max_order: usize, selection: OrderSelection) -> Result<Self> {
        let n_orders = data.levels.first().map(Vec::len).unwrap_or(0);
        let models = (0..data.n_series())
            .into_par_iter()
            .map(|i| {
                (0..n_orders)
                    .map(|q| {
                        let series = data.level(i, q);
                        // short aggregated series cannot support the full order search
                        let cap = max_order.min(series.len().saturating_sub(4) / 2);
                        let sel = if cap < max_order { OrderSelection::Aicc } else { selection };
                        ArModel::fit(series, cap, sel)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { models })
    }

    pub fn get(&self, series: usize, order_index: usize) -> &ArModel {
        &self.models[series][order_index]
    }

    pub fn n_series(&self) -> usize {
        self.models.len()
    }

    /// Base point forecasts for the period following the data, in canonical layout.
    pub fn forecast_next_period(
        &self,
        structure: &CrossTemporalStructure,
        data: &TemporalData,
    ) -> Result<Vec<f64>> {
        let te = structure.te();
        let mut out = Vec::with_capacity(structure.dim());
        for i in 0..structure.n() {
            for (q, &k) in te.factors().iter().enumerate() {
                out.extend(self.get(i, q).forecast(data.level(i, q), te.periods(k))?);
            }
        }
        Ok(out)
    }

    fn check(&self, structure: &CrossTemporalStructure, data: &TemporalData) -> Result<()> {
        if self.n_series() != structure.n() || data.n_series() != structure.n() {
            return Err(Error::dims(
                "models/data series count",
                structure.n(),
                format!("{} models, {} data", self.n_series(), data.n_series()),
            ));
        }
        let q = structure.te().factors().len();
        if self.models.iter().any(|m| m.len() != q) {
            return Err(Error::invalid("missing model for a temporal order"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualKind {
    MultiStep,
    OverlappingMultiStep,
}

/// Multi-step (optionally overlapping) residual matrix `E`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSet {
    kind: ResidualKind,
    e: DMatrix<f64>,
    n: usize,
    m: usize,
    factors: Vec<usize>,
}

impl ResidualSet {
    pub fn new(structure: &CrossTemporalStructure, e: DMatrix<f64>, kind: ResidualKind) -> Result<Self> {
        if e.ncols() != structure.dim() {
            return Err(Error::dims("residual matrix columns", structure.dim(), e.ncols()));
        }
        Ok(Self {
            kind,
            e,
            n: structure.n(),
            m: structure.te().m(),
            factors: structure.te().factors().to_vec(),
        })
    }

    pub fn kind(&self) -> ResidualKind {
        self.kind
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.e
    }

    pub fn rows(&self) -> usize {
        self.e.nrows()
    }

    /// Columns of `E` restricted to `indices`.
    pub fn select_columns(&self, indices: &[usize]) -> DMatrix<f64> {
        self.e.select_columns(indices)
    }

    /// Column labels `series:<name>|k:<int>|h:<int>`.
    pub fn labels(&self, names: &[String]) -> Vec<String> {
        label_columns(names, self.m, &self.factors)
    }

    pub fn write_csv<W: Write>(&self, writer: W, names: &[String]) -> Result<()> {
        if names.len() != self.n {
            return Err(Error::dims("series names", self.n, names.len()));
        }
        write_labelled_matrix(writer, self.labels(names), &self.e)
    }

    /// Reads a residual CSV; the header must match the canonical labels for `names`.
    pub fn read_csv<R: Read>(
        reader: R,
        structure: &CrossTemporalStructure,
        names: &[String],
        kind: ResidualKind,
    ) -> Result<Self> {
        let e = read_labelled_matrix(reader, structure, names)?;
        Self::new(structure, e, kind)
    }
}

/// Canonical column labels for a stacked vector.
pub fn stacked_labels(structure: &CrossTemporalStructure, names: &[String]) -> Vec<String> {
    label_columns(names, structure.te().m(), structure.te().factors())
}

fn label_columns(names: &[String], m: usize, factors: &[usize]) -> Vec<String> {
    let mut out = Vec::new();
    for name in names {
        for &k in factors {
            for h in 1..=m / k {
                out.push(format!("series:{name}|k:{k}|h:{h}"));
            }
        }
    }
    out
}

/// Reads a CSV whose header must equal the canonical labels for `names`.
pub(crate) fn read_labelled_matrix<R: Read>(
    reader: R,
    structure: &CrossTemporalStructure,
    names: &[String],
) -> Result<DMatrix<f64>> {
    if names.len() != structure.n() {
        return Err(Error::dims("series names", structure.n(), names.len()));
    }
    let expected = stacked_labels(structure, names);
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if header != expected {
        let pos = header.iter().zip(&expected).position(|(a, b)| a != b);
        return Err(Error::Parse {
            line: 1,
            message: match pos {
                Some(p) => format!("column {p}: expected '{}', found '{}'", expected[p], header[p]),
                None => format!("expected {} columns, found {}", expected.len(), header.len()),
            },
        });
    }
    let rows = read_numeric_rows(&mut rdr, expected.len())?;
    Ok(DMatrix::from_row_iterator(rows.len(), expected.len(), rows.into_iter().flatten()))
}

/// Writes `rows` under the canonical header.
pub(crate) fn write_labelled_matrix<W: Write>(writer: W, labels: Vec<String>, rows: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(labels)?;
    for r in 0..rows.nrows() {
        w.write_record(rows.row(r).iter().map(|v| format_f64(*v)))?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn format_f64(v: f64) -> String {
    // shortest repr that round-trips
    format!("{v:?}")
}

pub(crate) fn read_numeric_rows<R: Read>(rdr: &mut csv::Reader<R>, width: usize) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let line = idx + 2;
        let rec = rec?;
        if rec.len() != width {
            return Err(Error::Parse {
                line,
                message: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        let row = rec
            .iter()
            .map(|f| {
                f.trim().parse::<f64>().map_err(|e| Error::Parse {
                    line,
                    message: format!("'{f}': {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Elements `Σ_{t=(j−1)k+s+1}^{jk+s} y_t` of the order-`k` series whose
/// aggregation window starts `s` periods late.
pub fn overlapping_series(series: &[f64], k: usize, shift: usize) -> Result<Vec<f64>> {
    if k == 0 || shift >= k {
        return Err(Error::invalid(format!("shift {shift} must be smaller than order {k}")));
    }
    let usable = (series.len().saturating_sub(shift)) / k;
    Ok((0..usable)
        .map(|j| series[shift + j * k..shift + (j + 1) * k].iter().sum())
        .collect())
}

/// Builds the multi-step residual matrix `E` (one row per complete period).
pub fn assemble_multistep(
    structure: &CrossTemporalStructure,
    models: &ModelSet,
    data: &TemporalData,
) -> Result<ResidualSet> {
    models.check(structure, data)?;
    let te = structure.te();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for tau in 0..data.periods() {
        if let Some(row) = period_row(structure, models, |i, q| {
            let k = te.factors()[q];
            (data.level(i, q), tau * te.periods(k))
        }) {
            rows.push(row);
        }
    }
    finish(structure, rows, ResidualKind::MultiStep)
}

/// Builds `E` from residuals of all phase-shifted aggregations, reusing the
/// models fit on the unshifted series. Rows are ordered by window end time.
pub fn assemble_overlapping(
    structure: &CrossTemporalStructure,
    models: &ModelSet,
    data: &TemporalData,
) -> Result<ResidualSet> {
    models.check(structure, data)?;
    let te = structure.te();
    let m = te.m();
    // shifted[i][q][s] for s < k
    let shifted: Vec<Vec<Vec<Vec<f64>>>> = (0..structure.n())
        .map(|i| {
            te.factors()
                .iter()
                .map(|&k| {
                    (0..k)
                        .map(|s| overlapping_series(data.high_frequency(i), k, s))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut keyed: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    for s in 0..m {
        for tau in 0..data.periods() {
            let row = period_row(structure, models, |i, q| {
                let k = te.factors()[q];
                let series = &shifted[i][q][s % k];
                (series.as_slice(), s / k + tau * te.periods(k))
            });
            if let Some(row) = row {
                keyed.push((s + (tau + 1) * m, s, row));
            }
        }
    }
    keyed.sort_by_key(|(end, s, _)| (*end, *s));
    let rows = keyed.into_iter().map(|(_, _, r)| r).collect();
    finish(structure, rows, ResidualKind::OverlappingMultiStep)
}

fn period_row<'a>(
    structure: &CrossTemporalStructure,
    models: &ModelSet,
    source: impl Fn(usize, usize) -> (&'a [f64], usize),
) -> Option<Vec<f64>> {
    let te = structure.te();
    let mut row = Vec::with_capacity(structure.dim());
    for i in 0..structure.n() {
        for (q, &k) in te.factors().iter().enumerate() {
            let (series, origin) = source(i, q);
            row.extend(models.get(i, q).origin_errors(series, origin, te.periods(k))?);
        }
    }
    Some(row)
}

fn finish(structure: &CrossTemporalStructure, rows: Vec<Vec<f64>>, kind: ResidualKind) -> Result<ResidualSet> {
    if rows.is_empty() {
        return Err(Error::invalid("no complete period of residuals is available"));
    }
    let dim = structure.dim();
    let e = DMatrix::from_row_iterator(rows.len(), dim, rows.into_iter().flatten());
    ResidualSet::new(structure, e, kind)
}

/// One-step residuals of every (series, order) model, aligned on each order's own time axis.
///
/// These only feed diagonal-type estimators; they cannot populate the
/// cross-horizon cells of a full cross-temporal covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct OneStepResiduals {
    /// `values[i][q][t]`, `None` where the model lacks history.
    values: Vec<Vec<Vec<Option<f64>>>>,
    factors: Vec<usize>,
    m: usize,
}

impl OneStepResiduals {
    pub fn compute(structure: &CrossTemporalStructure, models: &ModelSet, data: &TemporalData) -> Result<Self> {
        models.check(structure, data)?;
        let te = structure.te();
        let values = (0..structure.n())
            .map(|i| {
                (0..te.factors().len())
                    .map(|q| {
                        let series = data.level(i, q);
                        let model = models.get(i, q);
                        (0..series.len())
                            .map(|t| model.origin_errors(series, t, 1).map(|e| e[0]))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            values,
            factors: te.factors().to_vec(),
            m: te.m(),
        })
    }

    /// Builds from explicit per-(series, order) residual vectors.
    pub fn from_values(structure: &CrossTemporalStructure, values: Vec<Vec<Vec<Option<f64>>>>) -> Result<Self> {
        let te = structure.te();
        if values.len() != structure.n() || values.iter().any(|v| v.len() != te.factors().len()) {
            return Err(Error::dims("one-step residual layout", structure.n(), values.len()));
        }
        Ok(Self {
            values,
            factors: te.factors().to_vec(),
            m: te.m(),
        })
    }

    pub fn series(&self, series: usize, order_index: usize) -> &[Option<f64>] {
        &self.values[series][order_index]
    }

    /// Mean square (or centred variance) of the available residuals of one model.
    pub fn variance(&self, series: usize, order_index: usize, center: bool) -> f64 {
        let vals: Vec<f64> = self.values[series][order_index].iter().flatten().cloned().collect();
        if vals.is_empty() {
            return 0.0;
        }
        let mean = if center { vals.iter().sum::<f64>() / vals.len() as f64 } else { 0.0 };
        vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64
    }

    /// `N_k' × n` matrix of the order's residuals at times where every series has one.
    pub fn order_matrix(&self, order_index: usize) -> DMatrix<f64> {
        let n = self.values.len();
        let len = self.values[0][order_index].len();
        let rows: Vec<Vec<f64>> = (0..len)
            .filter_map(|t| (0..n).map(|i| self.values[i][order_index][t]).collect::<Option<Vec<_>>>())
            .collect();
        DMatrix::from_row_iterator(rows.len(), n, rows.into_iter().flatten())
    }

    /// Residual blocks per complete most-aggregated period, for the joint bootstrap.
    pub fn blocks(&self) -> ResidualBlocks {
        let n = self.values.len();
        let periods = self.values[0][0].len(); // order m has one value per period
        let mut blocks = Vec::new();
        let mut index = Vec::new();
        'tau: for tau in 0..periods {
            let mut per_order = Vec::with_capacity(self.factors.len());
            for (q, &k) in self.factors.iter().enumerate() {
                let mk = self.m / k;
                let mut block = DMatrix::zeros(n, mk);
                for i in 0..n {
                    for j in 0..mk {
                        match self.values[i][q].get(tau * mk + j).copied().flatten() {
                            Some(v) => block[(i, j)] = v,
                            None => continue 'tau,
                        }
                    }
                }
                per_order.push(block);
            }
            blocks.push(per_order);
            index.push(tau);
        }
        ResidualBlocks { blocks, periods: index }
    }
}

/// Residual matrices `Ê^{[k]}_τ` (n × m/k) for each complete period `τ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlocks {
    blocks: Vec<Vec<DMatrix<f64>>>,
    periods: Vec<usize>,
}

impl ResidualBlocks {
    pub fn new(blocks: Vec<Vec<DMatrix<f64>>>) -> Self {
        let periods = (0..blocks.len()).collect();
        Self { blocks, periods }
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Block for bootstrap index `b`, order index `q`.
    pub fn block(&self, b: usize, order_index: usize) -> &DMatrix<f64> {
        &self.blocks[b][order_index]
    }

    /// Original period index (0-based) of bootstrap index `b`.
    pub fn period(&self, b: usize) -> usize {
        self.periods[b]
    }
}
