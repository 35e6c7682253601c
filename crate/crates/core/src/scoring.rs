//! Proper scoring rules, relative accuracy indices, covariance diagnostics
//! and the Friedman / MCB-Nemenyi rank comparison.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::hierarchy::CrossTemporalStructure;

/// Exact CRPS of the empirical distribution of `draws` at `z`.
pub fn crps(draws: &[f64], z: f64) -> Result<f64> {
    if draws.is_empty() {
        return Err(Error::invalid("CRPS needs at least one draw"));
    }
    let l = draws.len() as f64;
    let first = draws.iter().map(|x| (x - z).abs()).sum::<f64>() / l;
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    // Σ_l Σ_j |x_l − x_j| = 2 Σ_i (2i − L + 1) x_(i) for ascending x_(i), i from 0
    let pair_sum: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * i as f64 - l + 1.0) * x)
        .sum::<f64>()
        * 2.0;
    Ok((first - pair_sum / (2.0 * l * l)).max(0.0))
}

/// Which draw pairs enter the spread term of the energy score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EsPairs {
    /// `(x_l, x_{l+1})`, `l = 1..L−1`.
    #[default]
    Consecutive,
    /// All ordered pairs, divided by `2L²`.
    All,
}

/// Energy score of `draws` (one draw per row) at `z`.
pub fn energy_score(draws: &DMatrix<f64>, z: &DVector<f64>, pairs: EsPairs) -> Result<f64> {
    let l = draws.nrows();
    if l < 2 {
        return Err(Error::invalid("energy score needs at least two draws"));
    }
    if draws.ncols() != z.len() {
        return Err(Error::dims("energy score", draws.ncols(), z.len()));
    }
    let dist = |a: usize, b: usize| (draws.row(a) - draws.row(b)).norm();
    let first = (0..l).map(|r| (draws.row(r).transpose() - z).norm()).sum::<f64>() / l as f64;
    let spread = match pairs {
        EsPairs::Consecutive => (0..l - 1).map(|r| dist(r, r + 1)).sum::<f64>() / (2.0 * (l - 1) as f64),
        EsPairs::All => {
            let mut s = 0.0;
            for a in 0..l {
                for b in (a + 1)..l {
                    s += dist(a, b);
                }
            }
            2.0 * s / (2.0 * (l * l) as f64)
        }
    };
    Ok(first - spread)
}

/// Raw scores of one method: CRPS per (series, order index), averaged over
/// the positions within the order, and ES per order index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRaw {
    pub crps: Vec<Vec<f64>>,
    pub es: Vec<f64>,
}

impl ScoreRaw {
    /// Scores a sample against the realised stacked vector.
    pub fn evaluate(
        structure: &CrossTemporalStructure,
        draws: &DMatrix<f64>,
        truth: &DVector<f64>,
        pairs: EsPairs,
    ) -> Result<Self> {
        if draws.ncols() != structure.dim() || truth.len() != structure.dim() {
            return Err(Error::dims("score inputs", structure.dim(), format!("{} / {}", draws.ncols(), truth.len())));
        }
        let te = structure.te();
        let mut crps_out = vec![vec![0.0; te.factors().len()]; structure.n()];
        for (i, row) in crps_out.iter_mut().enumerate() {
            for (q, &k) in te.factors().iter().enumerate() {
                let mk = te.periods(k);
                let mut total = 0.0;
                for j in 0..mk {
                    let c = structure.index(i, k, j);
                    let col: Vec<f64> = draws.column(c).iter().cloned().collect();
                    total += crps(&col, truth[c])?;
                }
                row[q] = total / mk as f64;
            }
        }
        let es = te
            .factors()
            .iter()
            .map(|&k| {
                let idx = structure.order_indices(k);
                let z = DVector::from_iterator(idx.len(), idx.iter().map(|&c| truth[c]));
                energy_score(&draws.select_columns(&idx), &z, pairs)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { crps: crps_out, es })
    }

    /// Arithmetic mean over forecast origins or replicates.
    pub fn average(scores: &[ScoreRaw]) -> Result<Self> {
        let first = scores.first().ok_or_else(|| Error::invalid("no scores to average"))?;
        let count = scores.len() as f64;
        let mut out = first.clone();
        for s in &scores[1..] {
            if s.crps.len() != out.crps.len() || s.es.len() != out.es.len() {
                return Err(Error::dims("score layout", out.crps.len(), s.crps.len()));
            }
            for (a, b) in out.crps.iter_mut().zip(&s.crps) {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
            }
            for (x, y) in out.es.iter_mut().zip(&s.es) {
                *x += y;
            }
        }
        out.crps.iter_mut().flatten().for_each(|v| *v /= count);
        out.es.iter_mut().for_each(|v| *v /= count);
        Ok(out)
    }
}

/// Relative accuracy of a method against a benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub label: String,
    pub benchmark: String,
    pub factors: Vec<usize>,
    pub raw: ScoreRaw,
    /// Geometric mean over series of CRPS ratios, per order.
    pub avg_rel_crps: Vec<f64>,
    pub avg_rel_crps_overall: f64,
    pub rel_es: Vec<f64>,
    pub avg_rel_es_overall: f64,
}

/// Builds the relative indices of `method` against `benchmark`.
///
/// Orders are weighted by their number of periods `M_k` in the overall
/// indices, so every cell of the stacked vector counts once.
pub fn relative_indices(
    structure: &CrossTemporalStructure,
    label: &str,
    method: &ScoreRaw,
    benchmark_label: &str,
    benchmark: &ScoreRaw,
) -> Result<ScoreReport> {
    let te = structure.te();
    let (n, q_len) = (structure.n(), te.factors().len());
    let shape_ok = |s: &ScoreRaw| s.crps.len() == n && s.crps.iter().all(|r| r.len() == q_len) && s.es.len() == q_len;
    if !shape_ok(method) || !shape_ok(benchmark) {
        return Err(Error::dims("score layout", format!("{n} series x {q_len} orders"), "other"));
    }
    let positive = benchmark.crps.iter().flatten().chain(&benchmark.es).all(|v| *v > 0.0);
    if !positive {
        return Err(Error::invalid("benchmark scores must be strictly positive"));
    }
    let mut avg_rel_crps = Vec::with_capacity(q_len);
    let mut log_total = 0.0;
    for (q, &k) in te.factors().iter().enumerate() {
        let logs: f64 = (0..n).map(|i| (method.crps[i][q] / benchmark.crps[i][q]).ln()).sum();
        avg_rel_crps.push((logs / n as f64).exp());
        log_total += logs * te.periods(k) as f64;
    }
    let width = te.width() as f64;
    let avg_rel_crps_overall = (log_total / (n as f64 * width)).exp();
    let rel_es: Vec<f64> = method.es.iter().zip(&benchmark.es).map(|(a, b)| a / b).collect();
    let es_log: f64 = te
        .factors()
        .iter()
        .zip(&rel_es)
        .map(|(&k, r)| r.ln() * te.periods(k) as f64)
        .sum();
    Ok(ScoreReport {
        label: label.to_string(),
        benchmark: benchmark_label.to_string(),
        factors: te.factors().to_vec(),
        raw: method.clone(),
        avg_rel_crps,
        avg_rel_crps_overall,
        rel_es,
        avg_rel_es_overall: (es_log / width).exp(),
    })
}

/// Frobenius norm of `a − b`.
pub fn frobenius_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::dims("frobenius gap", format!("{:?}", a.shape()), format!("{:?}", b.shape())));
    }
    Ok((a - b).norm())
}

/// Friedman test and Nemenyi critical distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McbResult {
    pub friedman_statistic: f64,
    pub friedman_p: f64,
    pub mean_ranks: Vec<f64>,
    pub critical_distance: f64,
    pub best: usize,
    /// Rank interval `mean_rank ± CD/2` of each method.
    pub intervals: Vec<(f64, f64)>,
    /// Methods whose interval overlaps the best one.
    pub equivalent_to_best: Vec<bool>,
}

/// Ranks of one row, ties receiving their average rank (1 = smallest).
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && values[order[end + 1]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end) as f64 / 2.0 + 1.0;
        for &o in &order[start..=end] {
            ranks[o] = rank;
        }
        start = end + 1;
    }
    ranks
}

/// Multiple comparison with the best on a replicates × methods score matrix
/// (smaller scores are better).
pub fn mcb_nemenyi(scores: &DMatrix<f64>, alpha: f64) -> Result<McbResult> {
    let (reps, k) = scores.shape();
    if k < 2 || reps < 2 {
        return Err(Error::invalid("MCB needs at least 2 methods and 2 replicates"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha {alpha} outside (0, 1)")));
    }
    let mut mean_ranks = vec![0.0; k];
    for r in 0..reps {
        let row: Vec<f64> = scores.row(r).iter().cloned().collect();
        for (acc, v) in mean_ranks.iter_mut().zip(average_ranks(&row)) {
            *acc += v;
        }
    }
    mean_ranks.iter_mut().for_each(|v| *v /= reps as f64);
    let (nf, kf) = (reps as f64, k as f64);
    let sum_sq: f64 = mean_ranks.iter().map(|r| r * r).sum();
    let stat = (12.0 * nf / (kf * (kf + 1.0)) * sum_sq - 3.0 * nf * (kf + 1.0)).max(0.0);
    let chi = ChiSquared::new(kf - 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    let p = if stat <= 1e-12 { 1.0 } else { chi.sf(stat) };
    let q = studentized_range_quantile(k, 1.0 - alpha) / std::f64::consts::SQRT_2;
    let cd = q * (kf * (kf + 1.0) / (6.0 * nf)).sqrt();
    let best = (0..k)
        .min_by(|&a, &b| mean_ranks[a].total_cmp(&mean_ranks[b]))
        .expect("k >= 2");
    let intervals: Vec<(f64, f64)> = mean_ranks.iter().map(|r| (r - cd / 2.0, r + cd / 2.0)).collect();
    let equivalent_to_best = intervals.iter().map(|iv| iv.0 <= intervals[best].1).collect();
    Ok(McbResult {
        friedman_statistic: stat,
        friedman_p: p,
        mean_ranks,
        critical_distance: cd,
        best,
        intervals,
        equivalent_to_best,
    })
}

/// CDF of the range of `k` independent standard normals.
fn range_cdf(k: usize, q: f64) -> f64 {
    let normal = Normal::standard();
    let (lo, hi, steps) = (-8.0, 8.0, 1600);
    let h = (hi - lo) / steps as f64;
    let f = |z: f64| normal.pdf(z) * (normal.cdf(z + q) - normal.cdf(z)).powi(k as i32 - 1);
    let mut s = f(lo) + f(hi);
    for i in 1..steps {
        let z = lo + i as f64 * h;
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(z);
    }
    k as f64 * s * h / 3.0
}

/// Quantile of the studentized range with infinite degrees of freedom.
pub fn studentized_range_quantile(k: usize, prob: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, 20.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if range_cdf(k, mid) < prob {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_crps(x: &[f64], z: f64) -> f64 {
        let l = x.len() as f64;
        let a: f64 = x.iter().map(|v| (v - z).abs()).sum::<f64>() / l;
        let mut b = 0.0;
        for u in x {
            for v in x {
                b += (u - v).abs();
            }
        }
        a - b / (2.0 * l * l)
    }

    #[test]
    fn crps_examples() {
        assert_eq!(crps(&[3.0], 3.0).unwrap(), 0.0);
        assert_eq!(crps(&[0.0, 2.0], 1.0).unwrap(), 0.5);
        let x = [0.3, -1.2, 2.5];
        assert!((crps(&x, 0.7).unwrap() - brute_crps(&x, 0.7)).abs() < 1e-14);
        assert!(crps(&[], 0.0).is_err());
    }

    #[test]
    fn energy_score_examples() {
        let draws = DMatrix::from_row_slice(2, 1, &[0.0, 2.0]);
        assert_eq!(energy_score(&draws, &DVector::from_vec(vec![1.0]), EsPairs::Consecutive).unwrap(), 0.0);
        let same = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert_eq!(energy_score(&same, &DVector::from_vec(vec![1.0, 2.0]), EsPairs::All).unwrap(), 0.0);
        assert!(energy_score(&DMatrix::zeros(1, 2), &DVector::zeros(2), EsPairs::Consecutive).is_err());
        assert!(energy_score(&DMatrix::zeros(2, 2), &DVector::zeros(3), EsPairs::Consecutive).is_err());
    }

    #[test]
    fn all_pairs_univariate_equals_crps() {
        let x = [0.4, 1.9, -0.3, 2.2];
        let d = DMatrix::from_column_slice(4, 1, &x);
        let es = energy_score(&d, &DVector::from_vec(vec![0.5]), EsPairs::All).unwrap();
        assert!((es - crps(&x, 0.5).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn friedman_strict_dominance() {
        let scores = DMatrix::from_fn(30, 2, |r, c| c as f64 + r as f64 * 0.01);
        let res = mcb_nemenyi(&scores, 0.05).unwrap();
        assert_eq!(res.mean_ranks, vec![1.0, 2.0]);
        assert!((res.friedman_statistic - 30.0).abs() < 1e-9);
        assert!(res.friedman_p < 0.01);
        assert_eq!(res.best, 0);
    }

    #[test]
    fn friedman_ties_give_unit_p() {
        let scores = DMatrix::from_element(10, 2, 1.0);
        let res = mcb_nemenyi(&scores, 0.05).unwrap();
        assert_eq!(res.mean_ranks, vec![1.5, 1.5]);
        assert_eq!(res.friedman_p, 1.0);
        assert!(res.equivalent_to_best.iter().all(|v| *v));
    }

    #[test]
    fn nemenyi_constants_match_table() {
        let table = [1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164];
        for (k, expected) in (2..=10).zip(table) {
            let q = studentized_range_quantile(k, 0.95) / std::f64::consts::SQRT_2;
            assert!((q - expected).abs() < 1e-3, "k={k}: {q}");
        }
    }

    #[test]
    fn frobenius_examples() {
        let i = DMatrix::<f64>::identity(9, 9);
        assert_eq!(frobenius_gap(&i, &DMatrix::zeros(9, 9)).unwrap(), 3.0);
        assert_eq!(frobenius_gap(&i, &i).unwrap(), 0.0);
        assert!(frobenius_gap(&i, &DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn ratios_symmetric_in_log() {
        let s = CrossTemporalStructure::from_parts(DMatrix::from_row_slice(1, 1, &[1.0]), 1).unwrap();
        let method = ScoreRaw { crps: vec![vec![0.5], vec![2.0]], es: vec![1.0] };
        let bench = ScoreRaw { crps: vec![vec![1.0], vec![1.0]], es: vec![1.0] };
        let r = relative_indices(&s, "m", &method, "b", &bench).unwrap();
        assert!((r.avg_rel_crps[0] - 1.0).abs() < 1e-15);
        assert!((r.avg_rel_crps_overall - 1.0).abs() < 1e-15);
        let zero = ScoreRaw { crps: vec![vec![0.0], vec![1.0]], es: vec![1.0] };
        assert!(relative_indices(&s, "m", &method, "b", &zero).is_err());
    }
}
