//! Probabilistic reconciliation: Gaussian closure, sample-based
//! reconciliation and the cross-temporal joint block bootstrap.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{CovarianceKind, CovarianceMatrix, KroneckerFactor};
use crate::error::{Error, Result};
use crate::hierarchy::CrossTemporalStructure;
use crate::linalg::{cross_covariance, psd_root, symmetrize};
use crate::reconcile::{set_negative_to_zero_rows, ReconciliationMap};
use crate::residuals::{read_labelled_matrix, stacked_labels, write_labelled_matrix, ModelSet, ResidualBlocks, TemporalData};

/// Generator for draw `index` of a run seeded with `seed`.
///
/// Every draw owns an independent ChaCha stream, so results do not depend on
/// how draws are scheduled across threads.
pub fn draw_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Gaussian(CovarianceKind),
    Ctjb,
    External,
}

/// `L` draws of the stacked vector, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSample {
    draws: DMatrix<f64>,
    coherent: bool,
    provenance: Provenance,
}

impl ForecastSample {
    pub fn new(draws: DMatrix<f64>, provenance: Provenance) -> Self {
        Self {
            draws,
            coherent: false,
            provenance,
        }
    }

    pub fn draws(&self) -> &DMatrix<f64> {
        &self.draws
    }

    pub fn len(&self) -> usize {
        self.draws.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.nrows() == 0
    }

    pub fn is_coherent(&self) -> bool {
        self.coherent
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// Largest `‖C_ct x_r‖∞ / (1 + ‖x_r‖∞)` over the rows.
    pub fn coherence_violation(&self, structure: &CrossTemporalStructure) -> f64 {
        let c = structure.constraints();
        let viol = &self.draws * c.transpose();
        (0..self.draws.nrows())
            .map(|r| viol.row(r).amax() / (1.0 + self.draws.row(r).amax()))
            .fold(0.0, f64::max)
    }

    pub fn mean(&self) -> DVector<f64> {
        self.draws.row_mean().transpose()
    }

    /// Centred sample covariance with divisor `L − 1`.
    pub fn covariance(&self) -> DMatrix<f64> {
        cross_covariance(&self.draws, true, true)
    }

    /// Applies the bottom-up non-negativity heuristic to every draw.
    pub fn set_negative_to_zero(&self, structure: &CrossTemporalStructure) -> Result<Self> {
        Ok(Self {
            draws: set_negative_to_zero_rows(structure, &self.draws)?,
            coherent: true,
            provenance: self.provenance,
        })
    }

    pub fn write_csv<W: Write>(&self, writer: W, structure: &CrossTemporalStructure, names: &[String]) -> Result<()> {
        if names.len() != structure.n() {
            return Err(Error::dims("series names", structure.n(), names.len()));
        }
        write_labelled_matrix(writer, stacked_labels(structure, names), &self.draws)
    }

    pub fn read_csv<R: Read>(reader: R, structure: &CrossTemporalStructure, names: &[String]) -> Result<Self> {
        Ok(Self::new(read_labelled_matrix(reader, structure, names)?, Provenance::External))
    }
}

/// Multivariate normal forecast `N(x̂, Σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianForecast {
    pub mean: DVector<f64>,
    pub covariance: CovarianceMatrix,
}

impl GaussianForecast {
    pub fn new(mean: DVector<f64>, covariance: CovarianceMatrix) -> Result<Self> {
        if mean.len() != covariance.dim() {
            return Err(Error::dims("gaussian forecast", covariance.dim(), mean.len()));
        }
        Ok(Self { mean, covariance })
    }
}

/// `N(M x̂, M Σ M')`.
pub fn gaussian_reconcile(base: &GaussianForecast, map: &ReconciliationMap) -> Result<GaussianForecast> {
    let m = map.matrix();
    if base.mean.len() != m.ncols() {
        return Err(Error::dims("gaussian reconcile", m.ncols(), base.mean.len()));
    }
    let mean = m * &base.mean;
    let covariance = match base.covariance.factor() {
        // keep the low-rank form so that sampling stays in the reduced space
        Some(f) => CovarianceMatrix::from_factor(
            KroneckerFactor {
                j: m * &f.j,
                q: f.q.clone(),
            },
            base.covariance.kind(),
            base.covariance.lambda(),
        )?,
        None => {
            let mut values = m * base.covariance.values() * m.transpose();
            symmetrize(&mut values);
            CovarianceMatrix::from_matrix(values, base.covariance.kind(), base.covariance.lambda())?
        }
    };
    GaussianForecast::new(mean, covariance)
}

/// `L` independent draws from `N(x̂, Σ)`.
///
/// With a factored covariance `J Q J'` draws are `x̂ + J z`, `z ~ N(0, Q)`.
pub fn sample_gaussian(base: &GaussianForecast, draws: usize, seed: u64) -> Result<ForecastSample> {
    if draws == 0 {
        return Err(Error::invalid("sample size must be at least 1"));
    }
    let (loading, root) = match base.covariance.factor() {
        Some(f) => (Some(f.j.clone()), psd_root(&f.q)?),
        None => (None, psd_root(base.covariance.values())?),
    };
    let loading = match loading {
        Some(j) => j * &root,
        None => root,
    };
    let dim = base.mean.len();
    let r = loading.ncols();
    let rows: Vec<DVector<f64>> = (0..draws)
        .into_par_iter()
        .map(|l| {
            let mut rng = draw_rng(seed, l as u64);
            let z = DVector::from_iterator(r, (0..r).map(|_| rng.sample::<f64, _>(StandardNormal)));
            &base.mean + &loading * z
        })
        .collect();
    let mut out = DMatrix::zeros(draws, dim);
    for (l, row) in rows.iter().enumerate() {
        out.row_mut(l).copy_from(&row.transpose());
    }
    Ok(ForecastSample::new(out, Provenance::Gaussian(base.covariance.kind())))
}

/// Cross-temporal joint block bootstrap for one most-aggregated period ahead.
///
/// Each draw picks one period `τ` uniformly and feeds the residual blocks of
/// that period, for every series and order at once, through the models.
pub fn ctjb_sample(
    structure: &CrossTemporalStructure,
    models: &ModelSet,
    blocks: &ResidualBlocks,
    history: &TemporalData,
    draws: usize,
    seed: u64,
) -> Result<ForecastSample> {
    if blocks.is_empty() {
        return Err(Error::invalid("no residual blocks to bootstrap"));
    }
    if draws == 0 {
        return Err(Error::invalid("sample size must be at least 1"));
    }
    if models.n_series() != structure.n() || history.n_series() != structure.n() {
        return Err(Error::dims("ctjb series", structure.n(), models.n_series()));
    }
    let te = structure.te();
    let rows = (0..draws)
        .into_par_iter()
        .map(|l| {
            let mut rng = draw_rng(seed, l as u64);
            let tau = rng.random_range(0..blocks.len());
            let mut row = Vec::with_capacity(structure.dim());
            for i in 0..structure.n() {
                for (q, &k) in te.factors().iter().enumerate() {
                    let block = blocks.block(tau, q);
                    let shocks: Vec<f64> = block.row(i).iter().cloned().collect();
                    row.extend(models.get(i, q).simulate_path(history.level(i, q), te.periods(k), &shocks)?);
                }
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    let out = DMatrix::from_row_iterator(draws, structure.dim(), rows.into_iter().flatten());
    Ok(ForecastSample::new(out, Provenance::Ctjb))
}

/// Applies `M` to every draw.
pub fn reconcile_sample(sample: &ForecastSample, map: &ReconciliationMap) -> Result<ForecastSample> {
    Ok(ForecastSample {
        draws: map.reconcile_rows(&sample.draws)?,
        coherent: true,
        provenance: sample.provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::CovarianceKind;
    use crate::models::ArModel;

    fn toy(m: usize) -> CrossTemporalStructure {
        CrossTemporalStructure::from_parts(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), m).unwrap()
    }

    #[test]
    fn zero_covariance_returns_mean() {
        let s = toy(2);
        let mean = DVector::from_iterator(9, (0..9).map(|v| v as f64));
        let cov = CovarianceMatrix::from_matrix(DMatrix::zeros(9, 9), CovarianceKind::Sam, None).unwrap();
        let base = GaussianForecast::new(mean.clone(), cov).unwrap();
        let sample = sample_gaussian(&base, 1, 1).unwrap();
        assert_eq!(sample.draws().row(0).transpose(), mean);
        let map = ReconciliationMap::bottom_up(&s);
        let rec = gaussian_reconcile(&base, &map).unwrap();
        assert_eq!(rec.covariance.values(), &DMatrix::zeros(9, 9));
        assert_eq!(rec.mean, map.reconcile(&mean).unwrap());
    }

    #[test]
    fn factored_draws_are_coherent() {
        let s = toy(2);
        let q = DMatrix::from_fn(4, 4, |i, j| if i == j { 2.0 } else { 0.5 });
        let cov = CovarianceMatrix::from_factor(
            KroneckerFactor { j: s.summation().clone(), q },
            CovarianceKind::Hb,
            None,
        )
        .unwrap();
        let base = GaussianForecast::new(DVector::zeros(9), cov).unwrap();
        let sample = sample_gaussian(&base, 200, 3).unwrap();
        assert!(sample.coherence_violation(&s) < 1e-10);
    }

    #[test]
    fn seed_reproducibility() {
        let cov = CovarianceMatrix::from_matrix(DMatrix::identity(3, 3), CovarianceKind::Ols, None).unwrap();
        let base = GaussianForecast::new(DVector::zeros(3), cov).unwrap();
        let a = sample_gaussian(&base, 50, 9).unwrap();
        let b = sample_gaussian(&base, 50, 9).unwrap();
        let c = sample_gaussian(&base, 50, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        // a prefix of a larger run is the smaller run
        let d = sample_gaussian(&base, 80, 9).unwrap();
        assert_eq!(d.draws().rows(0, 50), a.draws().rows(0, 50));
    }

    #[test]
    fn single_block_bootstrap_is_deterministic() {
        let s = toy(2);
        let models = ModelSet::new(vec![vec![ArModel::new(vec![0.5], 1.0, 1.0).unwrap(); 2]; 3]);
        let data = TemporalData::from_high_frequency(s.te(), vec![vec![1.0, 2.0, 3.0, 4.0]; 3]).unwrap();
        let block = vec![DMatrix::from_element(3, 1, 0.1), DMatrix::from_element(3, 2, -0.2)];
        let blocks = ResidualBlocks::new(vec![block]);
        let sample = ctjb_sample(&s, &models, &blocks, &data, 20, 4).unwrap();
        for r in 1..20 {
            assert_eq!(sample.draws().row(r), sample.draws().row(0));
        }
        // order-2 path: 1 + 0.5 * 7 + 0.1
        assert!((sample.draws()[(0, 0)] - 4.6).abs() < 1e-12);
        let rec = reconcile_sample(&sample, &ReconciliationMap::bottom_up(&s)).unwrap();
        assert!(rec.is_coherent());
        assert!(rec.coherence_violation(&s) < 1e-12);
    }

    #[test]
    fn csv_roundtrip() {
        let s = toy(2);
        let names: Vec<String> = ["T", "X", "Y"].iter().map(|v| v.to_string()).collect();
        let sample = ForecastSample::new(DMatrix::from_fn(4, 9, |r, c| (r * 9 + c) as f64 / 7.0), Provenance::External);
        let mut buf = Vec::new();
        sample.write_csv(&mut buf, &s, &names).unwrap();
        let back = ForecastSample::read_csv(buf.as_slice(), &s, &names).unwrap();
        assert_eq!(back.draws(), sample.draws());
    }
}
