//! Monte Carlo study on a two-bottom-series semi-annual hierarchy driven by
//! correlated AR(2) processes.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{
    build_omega, CovarianceKind, CovarianceMatrix, CovarianceSpec, KroneckerFactor, ResidualInput,
};
use crate::error::{Error, Result};
use crate::hierarchy::CrossTemporalStructure;
use crate::models::{ArModel, OrderSelection};
use crate::probabilistic::{ctjb_sample, draw_rng, reconcile_sample, sample_gaussian, ForecastSample, GaussianForecast};
use crate::reconcile::{InnerWeights, ReconciliationMap};
use crate::residuals::{assemble_multistep, format_f64, ModelSet, OneStepResiduals, ResidualSet, TemporalData};
use crate::scoring::{frobenius_gap, relative_indices, EsPairs, ScoreRaw, ScoreReport};

/// Names of the simulated series: `A = B + C`.
pub const SERIES_NAMES: [&str; 3] = ["A", "B", "C"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub phi_b: [f64; 2],
    pub phi_c: [f64; 2],
    pub sigma_b: f64,
    pub sigma_c: f64,
    pub rho: f64,
    /// Training length in years (two high-frequency periods each).
    pub years: usize,
    pub replicates: usize,
    /// Sample size `L` of every forecast distribution.
    pub draws: usize,
    pub seed: u64,
    pub max_order: usize,
    pub burn_in: usize,
    /// Redraw both innovation standard deviations from U(0.5, 2) once per study.
    pub random_sigmas: bool,
    pub es_pairs: EsPairs,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            phi_b: [1.34, -0.74],
            phi_c: [0.95, -0.42],
            sigma_b: 0.9,
            sigma_c: 1.8,
            rho: -0.8,
            years: 500,
            replicates: 50,
            draws: 500,
            seed: 2024,
            max_order: 4,
            burn_in: 200,
            random_sigmas: false,
            es_pairs: EsPairs::Consecutive,
        }
    }
}

fn stationary(phi: [f64; 2]) -> bool {
    phi[1].abs() < 1.0 && phi[0] + phi[1] < 1.0 && phi[1] - phi[0] < 1.0
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho.abs() < 1.0) {
            return Err(Error::invalid(format!("|rho| must be below 1, got {}", self.rho)));
        }
        if !(self.sigma_b > 0.0 && self.sigma_c > 0.0) {
            return Err(Error::invalid("innovation standard deviations must be positive"));
        }
        if !stationary(self.phi_b) || !stationary(self.phi_c) {
            return Err(Error::invalid("AR(2) coefficients are not stationary"));
        }
        if self.years < 10 || self.replicates == 0 || self.draws < 2 {
            return Err(Error::invalid("need years >= 10, replicates >= 1 and draws >= 2"));
        }
        Ok(())
    }

    /// Configuration with the innovation scales actually used by the study.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        if self.random_sigmas {
            let mut rng = draw_rng(self.seed, u64::MAX);
            out.sigma_b = rng.random_range(0.5..2.0);
            out.sigma_c = rng.random_range(0.5..2.0);
            out.random_sigmas = false;
        }
        out
    }

    pub fn sigma_bc(&self) -> f64 {
        self.rho * self.sigma_b * self.sigma_c
    }
}

/// `A = B + C`, semi-annual.
pub fn study_structure() -> CrossTemporalStructure {
    CrossTemporalStructure::from_parts(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), 2)
        .expect("fixed structure is valid")
}

/// High-frequency bottom error covariance for the two periods of one year
/// (ordering B1, B2, C1, C2).
pub fn true_bottom_covariance(config: &SimulationConfig) -> DMatrix<f64> {
    let (sb2, sc2, sbc) = (config.sigma_b.powi(2), config.sigma_c.powi(2), config.sigma_bc());
    let (pb, pc) = (config.phi_b[0], config.phi_c[0]);
    let lower = [
        [sb2, 0.0, 0.0, 0.0],
        [pb * sb2, sb2 * (1.0 + pb * pb), 0.0, 0.0],
        [sbc, pb * sbc, sc2, 0.0],
        [pc * sbc, sbc * (1.0 + pb * pc), pc * sc2, sc2 * (1.0 + pc * pc)],
    ];
    DMatrix::from_fn(4, 4, |i, j| if i >= j { lower[i][j] } else { lower[j][i] })
}

/// `Ω_ct = S_ct Ω_hf-bts S_ct'`.
pub fn true_covariance(config: &SimulationConfig) -> Result<CovarianceMatrix> {
    let s = study_structure();
    CovarianceMatrix::from_factor(
        KroneckerFactor {
            j: s.summation().clone(),
            q: true_bottom_covariance(config),
        },
        CovarianceKind::Hb,
        None,
    )
}

/// Correlated innovations `(ε_B, ε_C)`.
pub fn simulate_innovations(config: &SimulationConfig, len: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let tail = (1.0 - config.rho * config.rho).sqrt();
    (0..len)
        .map(|_| {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            (config.sigma_b * z1, config.sigma_c * (config.rho * z1 + tail * z2))
        })
        .unzip()
}

fn ar2_path(phi: [f64; 2], shocks: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; shocks.len()];
    for t in 0..shocks.len() {
        let l1 = if t >= 1 { y[t - 1] } else { 0.0 };
        let l2 = if t >= 2 { y[t - 2] } else { 0.0 };
        y[t] = phi[0] * l1 + phi[1] * l2 + shocks[t];
    }
    y
}

/// High-frequency paths `[A, B, C]` of length `len` after the burn-in.
pub fn simulate_dgp(config: &SimulationConfig, len: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let (eb, ec) = simulate_innovations(config, len + config.burn_in, rng);
    let b = ar2_path(config.phi_b, &eb)[config.burn_in..].to_vec();
    let c = ar2_path(config.phi_c, &ec)[config.burn_in..].to_vec();
    let a = b.iter().zip(&c).map(|(x, y)| x + y).collect();
    vec![a, b, c]
}

/// Monte Carlo covariance of the one-year-ahead errors of the true models,
/// expanded to the full stacked vector.
pub fn monte_carlo_error_covariance(config: &SimulationConfig, replicates: usize, seed: u64) -> Result<DMatrix<f64>> {
    let s = study_structure();
    let mb = ArModel::new(config.phi_b.to_vec(), 0.0, config.sigma_b.powi(2))?;
    let mc = ArModel::new(config.phi_c.to_vec(), 0.0, config.sigma_c.powi(2))?;
    let short = SimulationConfig {
        burn_in: 0,
        ..config.clone()
    };
    let chunks = 64;
    let per = replicates.div_ceil(chunks);
    let partial: Vec<DMatrix<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = draw_rng(seed, c as u64);
            let mut acc = DMatrix::zeros(4, 4);
            let count = per.min(replicates.saturating_sub(c * per));
            for _ in 0..count {
                let paths = simulate_dgp(&short, 60, &mut rng);
                let origin = 58;
                let fb = mb.forecast(&paths[1][..origin], 2).expect("history long enough");
                let fc = mc.forecast(&paths[2][..origin], 2).expect("history long enough");
                let e = DVector::from_vec(vec![
                    paths[1][origin] - fb[0],
                    paths[1][origin + 1] - fb[1],
                    paths[2][origin] - fc[0],
                    paths[2][origin + 1] - fc[1],
                ]);
                acc += &e * e.transpose();
            }
            acc
        })
        .collect();
    let total = partial.into_iter().fold(DMatrix::zeros(4, 4), |a, b| a + b) / replicates as f64;
    Ok(s.summation() * total * s.summation().transpose())
}

/// How base forecast samples are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Sampler {
    Ctjb,
    /// Gaussian with the full (λ = 0) multi-step covariance of the given structure.
    Gaussian(CovarianceKind),
}

impl Sampler {
    pub const ALL: [Sampler; 5] = [
        Sampler::Ctjb,
        Sampler::Gaussian(CovarianceKind::G),
        Sampler::Gaussian(CovarianceKind::B),
        Sampler::Gaussian(CovarianceKind::H),
        Sampler::Gaussian(CovarianceKind::Hb),
    ];
}

/// Fitted quantities a sampler may draw on.
pub struct BaseInputs<'a> {
    pub structure: &'a CrossTemporalStructure,
    pub models: &'a ModelSet,
    pub data: &'a TemporalData,
    pub point: &'a DVector<f64>,
    pub one_step: &'a OneStepResiduals,
    pub multi: &'a ResidualSet,
}

impl Sampler {
    /// Draws `draws` base forecasts for the period following `inputs.data`.
    pub fn draw(self, inputs: &BaseInputs<'_>, draws: usize, seed: u64) -> Result<ForecastSample> {
        match self {
            Sampler::Ctjb => ctjb_sample(
                inputs.structure,
                inputs.models,
                &inputs.one_step.blocks(),
                inputs.data,
                draws,
                seed,
            ),
            Sampler::Gaussian(kind) => {
                let spec = CovarianceSpec::new(kind).with_lambda(0.0)?;
                let omega = build_omega(&spec, inputs.structure, ResidualInput::MultiStep(inputs.multi))?;
                sample_gaussian(&GaussianForecast::new(inputs.point.clone(), omega)?, draws, seed)
            }
        }
    }
}

impl fmt::Display for Sampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sampler::Ctjb => f.write_str("ctjb"),
            Sampler::Gaussian(k) => f.write_str(&k.name().to_uppercase()),
        }
    }
}

impl FromStr for Sampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "ctjb" => Ok(Sampler::Ctjb),
            "g" | "b" | "h" | "hb" => Ok(Sampler::Gaussian(lower.parse()?)),
            _ => Err(Error::invalid(format!("unknown sampler '{s}'"))),
        }
    }
}

impl TryFrom<String> for Sampler {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Sampler> for String {
    fn from(s: Sampler) -> String {
        s.to_string()
    }
}

/// Reconciliation approaches compared by the study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum StudyMethod {
    Base,
    CtBu,
    CtShrCsBuTe,
    CtWlsvTeBuCs,
    OctWlsv,
    OctBdshr,
    OctHShr,
    OctHBshr,
    OctHHshr,
    OctHHbshr,
}

impl StudyMethod {
    pub const ALL: [StudyMethod; 10] = [
        Self::Base,
        Self::CtBu,
        Self::CtShrCsBuTe,
        Self::CtWlsvTeBuCs,
        Self::OctWlsv,
        Self::OctBdshr,
        Self::OctHShr,
        Self::OctHBshr,
        Self::OctHHshr,
        Self::OctHHbshr,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Self::Base => "base",
            Self::CtBu => "ct(bu)",
            Self::CtShrCsBuTe => "ct(shr_cs,bu_te)",
            Self::CtWlsvTeBuCs => "ct(wlsv_te,bu_cs)",
            Self::OctWlsv => "oct(wlsv)",
            Self::OctBdshr => "oct(bdshr)",
            Self::OctHShr => "oct_h(shr)",
            Self::OctHBshr => "oct_h(bshr)",
            Self::OctHHshr => "oct_h(hshr)",
            Self::OctHHbshr => "oct_h(hbshr)",
        }
    }

    /// Builds the map; `None` leaves the base sample untouched.
    pub fn map(
        self,
        structure: &CrossTemporalStructure,
        one_step: &OneStepResiduals,
        multi: &ResidualSet,
    ) -> Result<Option<ReconciliationMap>> {
        let oct = |kind: CovarianceKind, input: ResidualInput<'_>| -> Result<Option<ReconciliationMap>> {
            let omega = build_omega(&CovarianceSpec::new(kind), structure, input)?;
            Ok(Some(ReconciliationMap::projection(structure, &omega)?))
        };
        match self {
            Self::Base => Ok(None),
            Self::CtBu => Ok(Some(ReconciliationMap::bottom_up(structure))),
            Self::CtShrCsBuTe => {
                let inner = InnerWeights::cs_shrinkage(structure, one_step, &CovarianceSpec::new(CovarianceKind::Shr))?;
                Ok(Some(ReconciliationMap::partly_bottom_up(structure, &inner)?))
            }
            Self::CtWlsvTeBuCs => {
                let inner = InnerWeights::te_wlsv(structure, one_step, false)?;
                Ok(Some(ReconciliationMap::partly_bottom_up(structure, &inner)?))
            }
            Self::OctWlsv => oct(CovarianceKind::Wlsv, ResidualInput::OneStep(one_step)),
            Self::OctBdshr => oct(CovarianceKind::Bdshr, ResidualInput::OneStep(one_step)),
            Self::OctHShr => oct(CovarianceKind::Shr, ResidualInput::MultiStep(multi)),
            Self::OctHBshr => oct(CovarianceKind::B, ResidualInput::MultiStep(multi)),
            Self::OctHHshr => oct(CovarianceKind::H, ResidualInput::MultiStep(multi)),
            Self::OctHHbshr => oct(CovarianceKind::Hb, ResidualInput::MultiStep(multi)),
        }
    }
}

impl fmt::Display for StudyMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for StudyMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        Self::ALL
            .into_iter()
            .find(|m| m.label().eq_ignore_ascii_case(&compact))
            .ok_or_else(|| Error::invalid(format!("unknown reconciliation approach '{s}'")))
    }
}

impl TryFrom<String> for StudyMethod {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<StudyMethod> for String {
    fn from(m: StudyMethod) -> String {
        m.label().to_string()
    }
}

/// Samplers × methods evaluated by [`run_study`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyGrid {
    pub samplers: Vec<Sampler>,
    pub methods: Vec<StudyMethod>,
}

impl Default for StudyGrid {
    fn default() -> Self {
        Self {
            samplers: Sampler::ALL.to_vec(),
            methods: StudyMethod::ALL.to_vec(),
        }
    }
}

/// Everything a single replicate produces.
#[derive(Debug, Clone)]
struct ReplicateOutcome {
    /// `[method][sampler]`
    frobenius: Vec<Vec<f64>>,
    scores: Vec<Vec<ScoreRaw>>,
    max_violation: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyResults {
    pub config: SimulationConfig,
    pub grid: StudyGrid,
    /// Mean Frobenius gap, `[method][sampler]`.
    pub frobenius: Vec<Vec<f64>>,
    /// Per-replicate Frobenius gaps, `[replicate][method][sampler]`.
    pub frobenius_by_replicate: Vec<Vec<Vec<f64>>>,
    /// Relative indices against the bootstrap base forecasts, `[method][sampler]`.
    pub reports: Vec<Vec<ScoreReport>>,
    /// Largest coherence violation over all reconciled draws.
    pub max_coherence_violation: f64,
}

impl StudyResults {
    pub fn cell(&self, method: StudyMethod, sampler: Sampler) -> Option<(usize, usize)> {
        let m = self.grid.methods.iter().position(|x| *x == method)?;
        let s = self.grid.samplers.iter().position(|x| *x == sampler)?;
        Some((m, s))
    }

    pub fn report(&self, method: StudyMethod, sampler: Sampler) -> Option<&ScoreReport> {
        self.cell(method, sampler).map(|(m, s)| &self.reports[m][s])
    }

    pub fn frobenius_gap(&self, method: StudyMethod, sampler: Sampler) -> Option<f64> {
        self.cell(method, sampler).map(|(m, s)| self.frobenius[m][s])
    }

    fn sampler_header(&self, first: &[&str]) -> Vec<String> {
        first
            .iter()
            .map(|s| s.to_string())
            .chain(self.grid.samplers.iter().map(|s| s.to_string()))
            .collect()
    }

    pub fn frobenius_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.sampler_header(&["method"]))?;
        for (m, method) in self.grid.methods.iter().enumerate() {
            let mut row = vec![method.to_string()];
            row.extend(self.frobenius[m].iter().map(|v| format_f64(*v)));
            w.write_record(row)?;
        }
        finish_csv(w)
    }

    fn index_csv(&self, overall: impl Fn(&ScoreReport) -> f64, per_k: impl Fn(&ScoreReport) -> &[f64]) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.sampler_header(&["k", "method"]))?;
        let factors = study_structure().te().factors().to_vec();
        let mut blocks: Vec<(String, Option<usize>)> = vec![("all".into(), None)];
        blocks.extend(factors.iter().enumerate().map(|(q, k)| (k.to_string(), Some(q))));
        for (label, q) in blocks {
            for (m, method) in self.grid.methods.iter().enumerate() {
                let mut row = vec![label.clone(), method.to_string()];
                for r in &self.reports[m] {
                    let v = match q {
                        None => overall(r),
                        Some(q) => per_k(r)[q],
                    };
                    row.push(format_f64(v));
                }
                w.write_record(row)?;
            }
        }
        finish_csv(w)
    }

    pub fn crps_csv(&self) -> Result<String> {
        self.index_csv(|r| r.avg_rel_crps_overall, |r| &r.avg_rel_crps)
    }

    pub fn es_csv(&self) -> Result<String> {
        self.index_csv(|r| r.avg_rel_es_overall, |r| &r.rel_es)
    }

    /// Writes `frobenius.csv`, `crps.csv` and `es.csv` into `dir`.
    pub fn write_tables(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("frobenius.csv"), self.frobenius_csv()?)?;
        std::fs::write(dir.join("crps.csv"), self.crps_csv()?)?;
        std::fs::write(dir.join("es.csv"), self.es_csv()?)?;
        Ok(())
    }
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn run_replicate(
    config: &SimulationConfig,
    grid: &StudyGrid,
    structure: &CrossTemporalStructure,
    truth_cov: &DMatrix<f64>,
    replicate: usize,
) -> Result<ReplicateOutcome> {
    let mut rng = draw_rng(config.seed, replicate as u64);
    let hf = simulate_dgp(config, 2 * (config.years + 1), &mut rng);
    let split = 2 * config.years;
    let te = structure.te();
    let train = TemporalData::from_high_frequency(te, hf.iter().map(|s| s[..split].to_vec()).collect())?;
    let test = TemporalData::from_high_frequency(te, hf.iter().map(|s| s[split..].to_vec()).collect())?;
    let truth = DVector::from_vec(test.period_vector(structure, 0));

    let models = ModelSet::fit(&train, config.max_order, OrderSelection::Aicc)?;
    let xhat = DVector::from_vec(models.forecast_next_period(structure, &train)?);
    let one_step = OneStepResiduals::compute(structure, &models, &train)?;
    let multi = assemble_multistep(structure, &models, &train)?;
    let maps = grid
        .methods
        .iter()
        .map(|m| m.map(structure, &one_step, &multi))
        .collect::<Result<Vec<_>>>()?;

    let mut frobenius = vec![Vec::with_capacity(grid.samplers.len()); grid.methods.len()];
    let mut scores = vec![Vec::with_capacity(grid.samplers.len()); grid.methods.len()];
    let mut max_violation = 0.0_f64;
    for sampler in &grid.samplers {
        let sample_seed: u64 = rng.random();
        let inputs = BaseInputs {
            structure,
            models: &models,
            data: &train,
            point: &xhat,
            one_step: &one_step,
            multi: &multi,
        };
        let base = sampler.draw(&inputs, config.draws, sample_seed)?;
        for (m, map) in maps.iter().enumerate() {
            let sample: ForecastSample = match map {
                Some(map) => {
                    let rec = reconcile_sample(&base, map)?;
                    max_violation = max_violation.max(rec.coherence_violation(structure));
                    rec
                }
                None => base.clone(),
            };
            frobenius[m].push(frobenius_gap(&sample.covariance(), truth_cov)?);
            scores[m].push(ScoreRaw::evaluate(structure, sample.draws(), &truth, config.es_pairs)?);
        }
    }
    Ok(ReplicateOutcome {
        frobenius,
        scores,
        max_violation,
    })
}

/// Runs every replicate of the study and aggregates the tables.
///
/// Replicate `r` draws its data and sampling seeds from stream `r` of the
/// configured seed, so results do not depend on thread scheduling.
pub fn run_study(config: &SimulationConfig, grid: &StudyGrid) -> Result<StudyResults> {
    config.validate()?;
    if grid.samplers.is_empty() || grid.methods.is_empty() {
        return Err(Error::invalid("study grid is empty"));
    }
    let config = config.resolved();
    let structure = study_structure();
    let truth_cov = true_covariance(&config)?.values().clone();
    let outcomes = (0..config.replicates)
        .into_par_iter()
        .map(|r| {
            run_replicate(&config, grid, &structure, &truth_cov, r).map_err(|e| Error::Replicate {
                replicate: r,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let (nm, ns) = (grid.methods.len(), grid.samplers.len());
    let reps = outcomes.len() as f64;
    let mut frobenius = vec![vec![0.0; ns]; nm];
    for o in &outcomes {
        for (acc, row) in frobenius.iter_mut().zip(&o.frobenius) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v / reps;
            }
        }
    }
    let averaged: Vec<Vec<ScoreRaw>> = (0..nm)
        .map(|m| {
            (0..ns)
                .map(|s| ScoreRaw::average(&outcomes.iter().map(|o| o.scores[m][s].clone()).collect::<Vec<_>>()))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let bm = grid.methods.iter().position(|m| *m == StudyMethod::Base).unwrap_or(0);
    let bs = grid.samplers.iter().position(|s| *s == Sampler::Ctjb).unwrap_or(0);
    let bench_label = format!("{}/{}", grid.methods[bm], grid.samplers[bs]);
    let reports = (0..nm)
        .map(|m| {
            (0..ns)
                .map(|s| {
                    let label = format!("{}/{}", grid.methods[m], grid.samplers[s]);
                    relative_indices(&structure, &label, &averaged[m][s], &bench_label, &averaged[bm][bs])
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StudyResults {
        grid: grid.clone(),
        frobenius,
        frobenius_by_replicate: outcomes.iter().map(|o| o.frobenius.clone()).collect(),
        reports,
        max_coherence_violation: outcomes.iter().map(|o| o.max_violation).fold(0.0, f64::max),
        config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::psd_rank;

    #[test]
    fn covariance_entries() {
        let c = SimulationConfig::default();
        assert!((c.sigma_b.powi(2) - 0.81).abs() < 1e-12);
        assert!((c.sigma_c.powi(2) - 3.24).abs() < 1e-12);
        assert!((c.sigma_bc() + 1.296).abs() < 1e-12);
        let w = true_bottom_covariance(&c);
        assert!((w[(1, 1)] - 0.81 * (1.0 + 1.34f64.powi(2))).abs() < 1e-12);
        assert!((w[(1, 1)] - 2.26444).abs() < 1e-4);
        let full = true_covariance(&c).unwrap();
        assert_eq!(full.dim(), 9);
        assert!(psd_rank(full.values()) <= 4);
    }

    #[test]
    fn zero_rho_decouples_series() {
        let c = SimulationConfig {
            rho: 0.0,
            ..Default::default()
        };
        let w = true_bottom_covariance(&c);
        for i in 0..2 {
            for j in 2..4 {
                assert_eq!(w[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn dgp_is_coherent() {
        let c = SimulationConfig::default();
        let mut rng = draw_rng(1, 0);
        let p = simulate_dgp(&c, 100, &mut rng);
        for ((a, b), c) in p[0].iter().zip(&p[1]).zip(&p[2]) {
            assert_eq!(*a, b + c);
        }
    }

    #[test]
    fn config_validation() {
        assert!(SimulationConfig::default().validate().is_ok());
        let bad = SimulationConfig {
            phi_b: [1.5, 0.0],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SimulationConfig {
            rho: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn labels_parse() {
        for m in StudyMethod::ALL {
            assert_eq!(m.label().parse::<StudyMethod>().unwrap(), m);
        }
        for s in Sampler::ALL {
            assert_eq!(s.to_string().parse::<Sampler>().unwrap(), s);
        }
        let grid: StudyGrid = serde_json::from_str(r#"{"samplers":["ctjb","HB"],"methods":["base","ct(bu)"]}"#).unwrap();
        assert_eq!(grid.samplers, vec![Sampler::Ctjb, Sampler::Gaussian(CovarianceKind::Hb)]);
    }

    #[test]
    fn degenerate_grid_gives_unit_indices() {
        let config = SimulationConfig {
            years: 60,
            replicates: 2,
            draws: 50,
            ..Default::default()
        };
        let grid = StudyGrid {
            samplers: vec![Sampler::Ctjb],
            methods: vec![StudyMethod::Base],
        };
        let res = run_study(&config, &grid).unwrap();
        let r = &res.reports[0][0];
        assert_eq!(r.avg_rel_crps_overall, 1.0);
        assert!(r.avg_rel_crps.iter().chain(&r.rel_es).all(|v| *v == 1.0));
        assert!(res.frobenius_csv().unwrap().starts_with("method,ctjb\nbase,"));
    }
}
