//! Rolling-origin forecast experiment with an expanding window.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::models::OrderSelection;
use crate::probabilistic::{draw_rng, reconcile_sample, ForecastSample};
use crate::residuals::{assemble_multistep, ModelSet, OneStepResiduals, TemporalData};
use crate::scoring::{mcb_nemenyi, relative_indices, EsPairs, McbResult, ScoreRaw, ScoreReport};
use crate::simulation::{BaseInputs, Sampler, StudyMethod};

/// Distance between consecutive forecast origins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OriginStep {
    /// One highest-frequency observation.
    #[default]
    HighFrequency,
    /// One most-aggregated period.
    Period,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Training length at the first origin, in most-aggregated periods.
    pub first_window: usize,
    pub step: OriginStep,
    pub sampler: Sampler,
    pub methods: Vec<StudyMethod>,
    pub draws: usize,
    pub seed: u64,
    pub max_order: usize,
    /// Clamp negative bottom draws to zero and rebuild bottom-up.
    pub nonneg: bool,
    pub es_pairs: EsPairs,
    pub mcb_alpha: f64,
    /// Keep every emitted sample in the result.
    pub keep_samples: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            first_window: 10,
            step: OriginStep::HighFrequency,
            sampler: Sampler::Ctjb,
            methods: vec![StudyMethod::Base, StudyMethod::CtBu, StudyMethod::OctWlsv, StudyMethod::OctBdshr],
            draws: 500,
            seed: 1,
            max_order: 4,
            nonneg: false,
            es_pairs: EsPairs::Consecutive,
            mcb_alpha: 0.05,
            keep_samples: false,
        }
    }
}

/// Start indices (high-frequency) of the forecast period at each origin.
pub fn origins(periods: usize, m: usize, first_window: usize, step: OriginStep) -> Result<Vec<usize>> {
    if first_window < 2 {
        return Err(Error::invalid("first window must span at least 2 periods"));
    }
    if periods <= first_window {
        return Err(Error::invalid(format!(
            "insufficient data: {periods} periods, first window needs {} (window plus one test period)",
            first_window + 1
        )));
    }
    let (first, last) = (first_window * m, (periods - 1) * m);
    let stride = match step {
        OriginStep::HighFrequency => 1,
        OriginStep::Period => m,
    };
    Ok((first..=last).step_by(stride).collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OriginResult {
    pub origin: usize,
    /// Scores per method, in configuration order.
    pub scores: Vec<ScoreRaw>,
    #[serde(skip)]
    pub samples: Vec<ForecastSample>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineResult {
    pub config: PipelineConfig,
    pub origins: Vec<OriginResult>,
    /// Relative indices of each method against the base forecasts.
    pub reports: Vec<ScoreReport>,
    /// MCB over origins on the mean CRPS of the whole stacked vector.
    pub mcb: Option<McbResult>,
}

fn run_origin(dataset: &Dataset, config: &PipelineConfig, index: usize, origin: usize) -> Result<OriginResult> {
    let structure = dataset.structure();
    let m = structure.te().m();
    let start = origin % m;
    let train = TemporalData::from_high_frequency(
        structure.te(),
        dataset.series().iter().map(|s| s[start..origin].to_vec()).collect(),
    )?;
    let test = TemporalData::from_high_frequency(
        structure.te(),
        dataset.series().iter().map(|s| s[origin..origin + m].to_vec()).collect(),
    )?;
    let truth = DVector::from_vec(test.period_vector(structure, 0));

    let models = ModelSet::fit(&train, config.max_order, OrderSelection::Aicc)?;
    let point = DVector::from_vec(models.forecast_next_period(structure, &train)?);
    let one_step = OneStepResiduals::compute(structure, &models, &train)?;
    let multi = assemble_multistep(structure, &models, &train)?;
    let inputs = BaseInputs {
        structure,
        models: &models,
        data: &train,
        point: &point,
        one_step: &one_step,
        multi: &multi,
    };
    let seed: u64 = draw_rng(config.seed, index as u64).random();
    let base = config.sampler.draw(&inputs, config.draws, seed)?;

    let mut scores = Vec::with_capacity(config.methods.len());
    let mut samples = Vec::new();
    for method in &config.methods {
        let sample = match method.map(structure, &one_step, &multi)? {
            Some(map) => {
                let rec = reconcile_sample(&base, &map)?;
                if config.nonneg {
                    rec.set_negative_to_zero(structure)?
                } else {
                    rec
                }
            }
            None if config.nonneg => {
                ForecastSample::new(base.draws().map(|v| v.max(0.0)), base.provenance())
            }
            None => base.clone(),
        };
        scores.push(ScoreRaw::evaluate(structure, sample.draws(), &truth, config.es_pairs)?);
        if config.keep_samples {
            samples.push(sample);
        }
    }
    Ok(OriginResult {
        origin,
        scores,
        samples,
    })
}

/// Runs the experiment over every origin; results are ordered by origin
/// regardless of scheduling.
pub fn run_pipeline(dataset: &Dataset, config: &PipelineConfig) -> Result<PipelineResult> {
    if config.methods.is_empty() {
        return Err(Error::invalid("no reconciliation approaches configured"));
    }
    if config.draws < 2 {
        return Err(Error::invalid("sample size must be at least 2"));
    }
    let structure = dataset.structure();
    let list = origins(dataset.periods(), structure.te().m(), config.first_window, config.step)?;
    let results = list
        .par_iter()
        .enumerate()
        .map(|(i, &o)| {
            run_origin(dataset, config, i, o).map_err(|e| Error::Replicate {
                replicate: i,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let averaged = (0..config.methods.len())
        .map(|m| ScoreRaw::average(&results.iter().map(|r| r.scores[m].clone()).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?;
    let bench = config.methods.iter().position(|m| *m == StudyMethod::Base).unwrap_or(0);
    let reports = config
        .methods
        .iter()
        .zip(&averaged)
        .map(|(m, raw)| relative_indices(structure, m.label(), raw, config.methods[bench].label(), &averaged[bench]))
        .collect::<Result<Vec<_>>>()?;

    let mcb = if config.methods.len() >= 2 && results.len() >= 2 {
        let table = DMatrix::from_fn(results.len(), config.methods.len(), |r, m| {
            let crps = &results[r].scores[m].crps;
            crps.iter().flatten().sum::<f64>() / crps.iter().map(Vec::len).sum::<usize>() as f64
        });
        Some(mcb_nemenyi(&table, config.mcb_alpha)?)
    } else {
        None
    };
    Ok(PipelineResult {
        config: config.clone(),
        origins: results,
        reports,
        mcb,
    })
}
