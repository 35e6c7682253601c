use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context as _, Result};
use clap::{Args, ValueEnum};
use nalgebra::DVector;
use serde::Serialize;

use ctrecon::covariance::CovarianceJson;
use ctrecon::pipeline::{run_pipeline, OriginStep, PipelineConfig};
use ctrecon::probabilistic::{ctjb_sample, reconcile_sample, sample_gaussian};
use ctrecon::reconcile::build_map;
use ctrecon::residuals::{assemble_multistep, assemble_overlapping, stacked_labels};
use ctrecon::scoring::relative_indices;
use ctrecon::simulation::run_study;
use ctrecon::{
    build_omega, CovarianceKind, CovarianceMatrix, CovarianceSpec, CrossTemporalStructure, Dataset, EsPairs,
    ForecastSample, GaussianForecast, HierarchyFile, InnerWeights, Method, ModelSet, OneStepResiduals,
    OrderSelection, ResidualInput, ResidualKind, ResidualSet, Sampler, ScoreRaw, ScoreReport, SimulationConfig,
    StudyGrid, StudyMethod, TemporalData,
};

use crate::output::{Artifacts, Format};

pub const SAMPLE_STREAMS: &str = "draw l uses ChaCha8 stream l of the seed";
pub const SIMULATE_STREAMS: &str =
    "replicate r uses ChaCha8 stream r of the seed for data, then one u64 per sampler as that sampler's seed";
pub const PIPELINE_STREAMS: &str =
    "origin i draws one u64 from ChaCha8 stream i of the seed; draw l of that origin uses stream l of it";

pub struct Context {
    pub seed: u64,
    pub format: Format,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
pub enum MethodArg {
    CtBu,
    CtCsBuTe,
    CtTeBuCs,
    Oct,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Method {
        match m {
            MethodArg::CtBu => Method::CtBu,
            MethodArg::CtCsBuTe => Method::CtCsBuTe,
            MethodArg::CtTeBuCs => Method::CtTeBuCs,
            MethodArg::Oct => Method::Oct,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
pub enum SamplerArg {
    Gaussian,
    Ctjb,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
pub enum EsPairsArg {
    Consecutive,
    All,
}

impl From<EsPairsArg> for EsPairs {
    fn from(p: EsPairsArg) -> EsPairs {
        match p {
            EsPairsArg::Consecutive => EsPairs::Consecutive,
            EsPairsArg::All => EsPairs::All,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
pub enum StepArg {
    /// One highest-frequency observation per origin.
    Hf,
    /// One most-aggregated period per origin.
    Period,
}

/// Model fitting options shared by commands that read raw data.
#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    /// Largest AR order searched by AICc.
    #[arg(long, default_value_t = 4)]
    max_order: usize,
    /// Use exactly `--max-order` instead of searching.
    #[arg(long)]
    fixed_order: bool,
    /// Build multi-step residuals from all phase-shifted aggregations.
    #[arg(long)]
    overlapping: bool,
}

impl FitArgs {
    fn selection(&self) -> OrderSelection {
        if self.fixed_order {
            OrderSelection::Fixed
        } else {
            OrderSelection::Aicc
        }
    }
}

struct Fitted {
    data: TemporalData,
    models: ModelSet,
    names: Vec<String>,
}

impl Fitted {
    fn new(dataset: &Dataset, fit: &FitArgs) -> Result<Self> {
        let data = TemporalData::from_high_frequency(dataset.structure().te(), dataset.series().to_vec())?;
        let models = ModelSet::fit(&data, fit.max_order, fit.selection())?;
        Ok(Self {
            data,
            models,
            names: dataset.names().to_vec(),
        })
    }

    fn one_step(&self, structure: &CrossTemporalStructure) -> Result<OneStepResiduals> {
        Ok(OneStepResiduals::compute(structure, &self.models, &self.data)?)
    }

    fn multi_step(&self, structure: &CrossTemporalStructure, overlapping: bool) -> Result<ResidualSet> {
        Ok(if overlapping {
            assemble_overlapping(structure, &self.models, &self.data)?
        } else {
            assemble_multistep(structure, &self.models, &self.data)?
        })
    }
}

fn load_hierarchy(path: &Path, artifacts: &mut Artifacts) -> Result<(HierarchyFile, CrossTemporalStructure)> {
    let h = HierarchyFile::load(path).with_context(|| format!("loading hierarchy {}", path.display()))?;
    let s = h.structure()?;
    artifacts.input(path)?;
    Ok((h, s))
}

fn load_dataset(data: &Path, hierarchy: &Path, artifacts: &mut Artifacts) -> Result<Dataset> {
    let d = Dataset::ingest(data, hierarchy).with_context(|| format!("ingesting {}", data.display()))?;
    artifacts.input(data)?;
    artifacts.input(hierarchy)?;
    let violations = d.coherence_violations();
    if let Some(first) = violations.first() {
        log::warn!(
            "{} observed upper values differ from their bottom-up sums (first: series {} at t={}, {} vs {})",
            violations.len(),
            first.series,
            first.t,
            first.observed,
            first.implied
        );
    }
    Ok(d)
}

fn read_stacked(path: &Path, structure: &CrossTemporalStructure, names: &[String]) -> Result<ForecastSample> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    ForecastSample::read_csv(f, structure, names).with_context(|| format!("reading {}", path.display()))
}

fn parse_lambda(spec: CovarianceSpec, text: &str) -> Result<CovarianceSpec> {
    if text.eq_ignore_ascii_case("auto") {
        return Ok(spec);
    }
    let v: f64 = text.parse().map_err(|_| anyhow!("--lambda expects a number in [0, 1] or 'auto'"))?;
    Ok(spec.with_lambda(v)?)
}

#[derive(Serialize)]
struct StackedJson<'a> {
    labels: Vec<String>,
    rows: Vec<&'a [f64]>,
}

fn stacked_bytes(
    sample: &ForecastSample,
    structure: &CrossTemporalStructure,
    names: &[String],
    format: Format,
) -> Result<Vec<u8>> {
    match format {
        Format::Csv => {
            let mut out = Vec::new();
            sample.write_csv(&mut out, structure, names)?;
            Ok(out)
        }
        Format::Json => {
            let t = sample.draws().transpose();
            let dim = structure.dim();
            let rows = t.as_slice().chunks(dim).collect();
            let mut out = serde_json::to_vec_pretty(&StackedJson {
                labels: stacked_labels(structure, names),
                rows,
            })?;
            out.push(b'\n');
            Ok(out)
        }
    }
}

fn csv_bytes(header: &[&str], rows: Vec<Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| anyhow!(e.to_string()))
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

fn report_rows(reports: &[ScoreReport]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for r in reports {
        rows.push(vec![
            r.label.clone(),
            r.benchmark.clone(),
            "all".into(),
            num(r.avg_rel_crps_overall),
            num(r.avg_rel_es_overall),
        ]);
        for (q, k) in r.factors.iter().enumerate() {
            rows.push(vec![
                r.label.clone(),
                r.benchmark.clone(),
                k.to_string(),
                num(r.avg_rel_crps[q]),
                num(r.rel_es[q]),
            ]);
        }
    }
    rows
}

fn add_reports(artifacts: &mut Artifacts, reports: &[ScoreReport], format: Format) -> Result<()> {
    match format {
        Format::Csv => artifacts.add(
            "scores.csv",
            csv_bytes(&["label", "benchmark", "k", "avg_rel_crps", "rel_es"], report_rows(reports))?,
        ),
        Format::Json => artifacts.add_json("scores.json", &reports)?,
    }
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct ReconcileArgs {
    /// Hierarchy JSON.
    #[arg(long)]
    hierarchy: PathBuf,
    /// Stacked forecasts, one row per vector, canonical header.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodArg::Oct)]
    method: MethodArg,
    /// Covariance approximation for `oct` (ols, struc, wlsv, bdshr, shr, sam, hb, h, b).
    #[arg(long, default_value = "ols")]
    omega: String,
    /// Shrinkage intensity in [0, 1], or `auto`.
    #[arg(long, default_value = "auto")]
    lambda: String,
    /// Observed series used to fit models and derive residuals.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Precomputed multi-step residual matrix (canonical header).
    #[arg(long)]
    residuals: Option<PathBuf>,
    /// Cached covariance JSON; overrides `--omega`.
    #[arg(long)]
    omega_cache: Option<PathBuf>,
    /// Clamp negative bottom values to zero and rebuild bottom-up.
    #[arg(long)]
    nonneg: bool,
    #[command(flatten)]
    fit: FitArgs,
}

pub fn reconcile(ctx: &Context, args: &ReconcileArgs) -> Result<Artifacts> {
    let mut artifacts = Artifacts::new();
    artifacts.config(args)?;
    let (hierarchy, structure) = load_hierarchy(&args.hierarchy, &mut artifacts)?;
    let fitted = match &args.data {
        Some(p) => Some(Fitted::new(&load_dataset(p, &args.hierarchy, &mut artifacts)?, &args.fit)?),
        None => None,
    };
    let names = fitted
        .as_ref()
        .map(|f| f.names.clone())
        .unwrap_or_else(|| hierarchy.names(structure.n()));
    let input = read_stacked(&args.input, &structure, &names)?;
    artifacts.input(&args.input)?;

    let method: Method = args.method.into();
    let need_fit = || {
        fitted
            .as_ref()
            .ok_or_else(|| anyhow!("{:?} needs --data to estimate its weights", args.method))
    };
    let mut omega: Option<CovarianceMatrix> = None;
    let mut inner: Option<InnerWeights> = None;
    match method {
        Method::CtBu => {}
        Method::CtCsBuTe => {
            let spec = parse_lambda(CovarianceSpec::new(CovarianceKind::Shr), &args.lambda)?;
            inner = Some(InnerWeights::cs_shrinkage(&structure, &need_fit()?.one_step(&structure)?, &spec)?);
        }
        Method::CtTeBuCs => {
            inner = Some(InnerWeights::te_wlsv(&structure, &need_fit()?.one_step(&structure)?, false)?);
        }
        Method::Oct => {
            omega = Some(match &args.omega_cache {
                Some(path) => {
                    artifacts.input(path)?;
                    let json: CovarianceJson = serde_json::from_reader(File::open(path)?)?;
                    CovarianceMatrix::from_json(&json)?
                }
                None => {
                    let kind: CovarianceKind = args.omega.parse()?;
                    let spec = parse_lambda(CovarianceSpec::new(kind), &args.lambda)?;
                    estimate_omega(&structure, &spec, fitted.as_ref(), args.residuals.as_deref(), &names, args.fit.overlapping, &mut artifacts)?
                }
            });
        }
    }
    let map = build_map(&structure, method, omega.as_ref(), inner.as_ref())?;
    let mut out = reconcile_sample(&input, &map)?;
    if args.nonneg {
        out = out.set_negative_to_zero(&structure)?;
    }
    artifacts.add(
        format!("reconciled.{}", ctx.format.ext()),
        stacked_bytes(&out, &structure, &names, ctx.format)?,
    );
    if let Some(o) = &omega {
        artifacts.add_json("omega.json", &o.to_json())?;
    }
    Ok(artifacts)
}

fn estimate_omega(
    structure: &CrossTemporalStructure,
    spec: &CovarianceSpec,
    fitted: Option<&Fitted>,
    residuals: Option<&Path>,
    names: &[String],
    overlapping: bool,
    artifacts: &mut Artifacts,
) -> Result<CovarianceMatrix> {
    if !spec.kind.needs_residuals() {
        return Ok(build_omega(spec, structure, ResidualInput::None)?);
    }
    if let Some(path) = residuals {
        artifacts.input(path)?;
        let kind = if overlapping {
            ResidualKind::OverlappingMultiStep
        } else {
            ResidualKind::MultiStep
        };
        let e = ResidualSet::read_csv(File::open(path)?, structure, names, kind)
            .with_context(|| format!("reading {}", path.display()))?;
        return Ok(build_omega(spec, structure, ResidualInput::MultiStep(&e))?);
    }
    let fitted = fitted.ok_or_else(|| anyhow!("covariance '{}' needs --data or --residuals", spec.kind))?;
    if spec.kind.accepts_one_step() {
        let r = fitted.one_step(structure)?;
        Ok(build_omega(spec, structure, ResidualInput::OneStep(&r))?)
    } else {
        let e = fitted.multi_step(structure, overlapping)?;
        Ok(build_omega(spec, structure, ResidualInput::MultiStep(&e))?)
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SampleArgs {
    /// Hierarchy JSON.
    #[arg(long)]
    hierarchy: PathBuf,
    /// Observed series; the sample forecasts the period after the last one.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = SamplerArg::Gaussian)]
    method: SamplerArg,
    /// Gaussian covariance (sam, shr, g, h, b, hb).
    #[arg(long, default_value = "g")]
    cov: String,
    /// Shrinkage intensity for the Gaussian covariance, or `auto`.
    #[arg(long, default_value = "0")]
    lambda: String,
    /// Number of draws.
    #[arg(long = "L", default_value_t = 500)]
    draws: usize,
    #[command(flatten)]
    fit: FitArgs,
}

pub fn sample(ctx: &Context, args: &SampleArgs) -> Result<Artifacts> {
    let mut artifacts = Artifacts::new();
    artifacts.config(args)?;
    let dataset = load_dataset(&args.data, &args.hierarchy, &mut artifacts)?;
    let structure = dataset.structure();
    let fitted = Fitted::new(&dataset, &args.fit)?;
    let point = DVector::from_vec(fitted.models.forecast_next_period(structure, &fitted.data)?);
    let out = match args.method {
        SamplerArg::Ctjb => {
            let blocks = fitted.one_step(structure)?.blocks();
            ctjb_sample(structure, &fitted.models, &blocks, &fitted.data, args.draws, ctx.seed)?
        }
        SamplerArg::Gaussian => {
            let kind: CovarianceKind = args.cov.parse()?;
            if !matches!(
                kind,
                CovarianceKind::Sam | CovarianceKind::Shr | CovarianceKind::G | CovarianceKind::H | CovarianceKind::B | CovarianceKind::Hb
            ) {
                bail!("--cov must be one of sam, shr, g, h, b, hb");
            }
            let spec = parse_lambda(CovarianceSpec::new(kind), &args.lambda)?;
            let e = fitted.multi_step(structure, args.fit.overlapping)?;
            let omega = build_omega(&spec, structure, ResidualInput::MultiStep(&e))?;
            sample_gaussian(&GaussianForecast::new(point.clone(), omega)?, args.draws, ctx.seed)?
        }
    };
    let ext = ctx.format.ext();
    artifacts.add(format!("samples.{ext}"), stacked_bytes(&out, structure, dataset.names(), ctx.format)?);
    let point = ForecastSample::new(nalgebra::DMatrix::from_row_slice(1, point.len(), point.as_slice()), out.provenance());
    artifacts.add(format!("point.{ext}"), stacked_bytes(&point, structure, dataset.names(), ctx.format)?);
    Ok(artifacts)
}

#[derive(Debug, Args, Serialize)]
pub struct ScoreArgs {
    /// Hierarchy JSON.
    #[arg(long)]
    hierarchy: PathBuf,
    /// Sample to score, as `LABEL=PATH`; repeat for several.
    #[arg(long = "sample", value_name = "LABEL=PATH", required = true)]
    samples: Vec<String>,
    /// Single-row stacked CSV with the realised values.
    #[arg(long)]
    observed: PathBuf,
    /// Label of the denominator (defaults to the first sample).
    #[arg(long)]
    benchmark: Option<String>,
    #[arg(long, value_enum, default_value_t = EsPairsArg::Consecutive)]
    es_pairs: EsPairsArg,
}

pub fn score(ctx: &Context, args: &ScoreArgs) -> Result<Artifacts> {
    let mut artifacts = Artifacts::new();
    artifacts.config(args)?;
    let (hierarchy, structure) = load_hierarchy(&args.hierarchy, &mut artifacts)?;
    let names = hierarchy.names(structure.n());
    let obs = read_stacked(&args.observed, &structure, &names)?;
    artifacts.input(&args.observed)?;
    if obs.len() != 1 {
        bail!("observation file must hold exactly one row, found {}", obs.len());
    }
    let truth: DVector<f64> = obs.draws().row(0).transpose();
    let mut raws: Vec<(String, ScoreRaw)> = Vec::new();
    for item in &args.samples {
        let (label, path) = item
            .split_once('=')
            .ok_or_else(|| anyhow!("--sample expects LABEL=PATH, got '{item}'"))?;
        if raws.iter().any(|(l, _)| l == label) {
            bail!("duplicate sample label '{label}'");
        }
        let path = Path::new(path);
        let s = read_stacked(path, &structure, &names)?;
        artifacts.input(path)?;
        raws.push((
            label.to_string(),
            ScoreRaw::evaluate(&structure, s.draws(), &truth, args.es_pairs.into())?,
        ));
    }
    let bench = match &args.benchmark {
        Some(b) => raws
            .iter()
            .position(|(l, _)| l == b)
            .ok_or_else(|| anyhow!("benchmark '{b}' is not among the samples"))?,
        None => 0,
    };
    let reports = raws
        .iter()
        .map(|(l, r)| relative_indices(&structure, l, r, &raws[bench].0, &raws[bench].1))
        .collect::<ctrecon::Result<Vec<_>>>()?;
    add_reports(&mut artifacts, &reports, ctx.format)?;
    Ok(artifacts)
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Base configuration JSON; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of replicates.
    #[arg(long)]
    replicates: Option<usize>,
    /// Training length in years.
    #[arg(long)]
    years: Option<usize>,
    /// Draws per forecast distribution.
    #[arg(long = "L")]
    draws: Option<usize>,
    /// JSON grid `{"samplers": [...], "methods": [...]}`.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Full scale: 500 replicates and L = 1000.
    #[arg(long)]
    full: bool,
    /// Draw both innovation scales from U(0.5, 2) once per study.
    #[arg(long)]
    random_sigmas: bool,
    /// Largest AR order searched by AICc.
    #[arg(long)]
    max_order: Option<usize>,
    #[arg(long, value_enum)]
    es_pairs: Option<EsPairsArg>,
}

#[derive(Serialize)]
struct EffectiveStudy<'a> {
    args: &'a SimulateArgs,
    config: &'a SimulationConfig,
    grid: &'a StudyGrid,
}

pub fn simulate(ctx: &Context, args: &SimulateArgs) -> Result<Artifacts> {
    let mut artifacts = Artifacts::new();
    let mut config = match &args.config {
        Some(p) => {
            artifacts.input(p)?;
            serde_json::from_reader(File::open(p)?).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SimulationConfig::default(),
    };
    if args.full {
        config.replicates = 500;
        config.draws = 1000;
    }
    config.seed = ctx.seed;
    config.replicates = args.replicates.unwrap_or(config.replicates);
    config.years = args.years.unwrap_or(config.years);
    config.draws = args.draws.unwrap_or(config.draws);
    config.max_order = args.max_order.unwrap_or(config.max_order);
    config.random_sigmas |= args.random_sigmas;
    if let Some(p) = args.es_pairs {
        config.es_pairs = p.into();
    }
    let grid: StudyGrid = match &args.grid {
        Some(p) => {
            artifacts.input(p)?;
            serde_json::from_reader(File::open(p)?).with_context(|| format!("parsing {}", p.display()))?
        }
        None => StudyGrid::default(),
    };
    let results = run_study(&config, &grid)?;
    artifacts.config(&EffectiveStudy {
        args,
        config: &results.config,
        grid: &grid,
    })?;
    log::info!("largest coherence violation {:e}", results.max_coherence_violation);
    match ctx.format {
        Format::Csv => {
            artifacts.add("frobenius.csv", results.frobenius_csv()?.into_bytes());
            artifacts.add("crps.csv", results.crps_csv()?.into_bytes());
            artifacts.add("es.csv", results.es_csv()?.into_bytes());
        }
        Format::Json => artifacts.add_json("results.json", &results)?,
    }
    Ok(artifacts)
}

#[derive(Debug, Args, Serialize)]
pub struct PipelineArgs {
    /// Observed series, one column per series.
    #[arg(long)]
    data: PathBuf,
    /// Hierarchy JSON.
    #[arg(long)]
    hierarchy: PathBuf,
    /// Base pipeline configuration JSON; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training periods at the first origin.
    #[arg(long)]
    first_window: Option<usize>,
    #[arg(long, value_enum)]
    step: Option<StepArg>,
    /// Base sampler: ctjb, g, b, h or hb.
    #[arg(long)]
    sampler: Option<String>,
    /// Reconciliation approach, e.g. `base`, `ct(bu)`, `oct(bdshr)`; repeatable.
    #[arg(long = "method")]
    methods: Vec<String>,
    /// Draws per forecast distribution.
    #[arg(long = "L")]
    draws: Option<usize>,
    /// Clamp negative draws to zero and rebuild bottom-up.
    #[arg(long)]
    nonneg: bool,
    /// Largest AR order searched by AICc.
    #[arg(long)]
    max_order: Option<usize>,
    /// Significance level of the MCB test.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_enum)]
    es_pairs: Option<EsPairsArg>,
    /// Also write every emitted sample.
    #[arg(long)]
    write_samples: bool,
}

fn file_stem(label: &str) -> String {
    let s: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    s.trim_matches('_').to_string()
}

pub fn pipeline(ctx: &Context, args: &PipelineArgs) -> Result<Artifacts> {
    let mut artifacts = Artifacts::new();
    let dataset = load_dataset(&args.data, &args.hierarchy, &mut artifacts)?;
    let mut config: PipelineConfig = match &args.config {
        Some(p) => {
            artifacts.input(p)?;
            serde_json::from_reader(File::open(p)?).with_context(|| format!("parsing {}", p.display()))?
        }
        None => PipelineConfig::default(),
    };
    config.seed = ctx.seed;
    config.first_window = args.first_window.unwrap_or(config.first_window);
    if let Some(s) = args.step {
        config.step = match s {
            StepArg::Hf => OriginStep::HighFrequency,
            StepArg::Period => OriginStep::Period,
        };
    }
    if let Some(s) = &args.sampler {
        config.sampler = s.parse::<Sampler>()?;
    }
    if !args.methods.is_empty() {
        config.methods = args
            .methods
            .iter()
            .map(|m| m.parse::<StudyMethod>())
            .collect::<ctrecon::Result<_>>()?;
    }
    config.draws = args.draws.unwrap_or(config.draws);
    config.nonneg |= args.nonneg;
    config.max_order = args.max_order.unwrap_or(config.max_order);
    config.mcb_alpha = args.alpha.unwrap_or(config.mcb_alpha);
    if let Some(p) = args.es_pairs {
        config.es_pairs = p.into();
    }
    config.keep_samples |= args.write_samples;
    artifacts.config(&config)?;

    let result = run_pipeline(&dataset, &config)?;
    let structure = dataset.structure();
    let ext = ctx.format.ext();
    add_reports(&mut artifacts, &result.reports, ctx.format)?;

    let violations = dataset.coherence_violations();
    match ctx.format {
        Format::Csv => {
            let mut rows = Vec::new();
            for o in &result.origins {
                for (m, s) in config.methods.iter().zip(&o.scores) {
                    let cells: Vec<f64> = s.crps.iter().flatten().copied().collect();
                    let mut row = vec![o.origin.to_string(), m.label().to_string()];
                    row.push(num(cells.iter().sum::<f64>() / cells.len() as f64));
                    row.extend(s.es.iter().map(|v| num(*v)));
                    rows.push(row);
                }
            }
            let mut header = vec!["origin".to_string(), "method".into(), "mean_crps".into()];
            header.extend(structure.te().factors().iter().map(|k| format!("es_k{k}")));
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            artifacts.add("origins.csv", csv_bytes(&header, rows)?);

            if let Some(mcb) = &result.mcb {
                let rows = config
                    .methods
                    .iter()
                    .enumerate()
                    .map(|(i, m)| {
                        vec![
                            m.label().to_string(),
                            num(mcb.mean_ranks[i]),
                            num(mcb.intervals[i].0),
                            num(mcb.intervals[i].1),
                            mcb.equivalent_to_best[i].to_string(),
                        ]
                    })
                    .collect();
                artifacts.add(
                    "mcb.csv",
                    csv_bytes(&["method", "mean_rank", "lower", "upper", "equivalent_to_best"], rows)?,
                );
            }
            let rows = violations
                .iter()
                .map(|v| vec![v.series.clone(), v.t.to_string(), num(v.observed), num(v.implied)])
                .collect();
            artifacts.add("coherence.csv", csv_bytes(&["series", "t", "observed", "implied"], rows)?);
        }
        Format::Json => {
            artifacts.add_json("pipeline.json", &result)?;
            artifacts.add_json("coherence.json", &violations)?;
        }
    }
    if config.keep_samples {
        for o in &result.origins {
            for (m, s) in config.methods.iter().zip(&o.samples) {
                let name = format!("samples/origin{}_{}.{ext}", o.origin, file_stem(m.label()));
                artifacts.add(name, stacked_bytes(s, structure, dataset.names(), ctx.format)?);
            }
        }
    }
    Ok(artifacts)
}
