//! Experiment orchestration: configuration, data preparation, training,
//! forecasting, sweeps with top-k ensembling, ablations and perturbations.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{
    flatten, region_indices, write_atomic, GriddedSeries, LandMask, RegionSpec, SplitSpec,
};
use crate::error::{domain, Error, Result};
use crate::esn::{esn_init, EsnConfig, EsnState};
use crate::forecast::{self, Forecaster};
use crate::metrics::{self, csv_field, ensemble_average, MetricReport};
use crate::par::{self, Execution};
use crate::pod::{fit_pod, PodBasis};
use crate::readout::ReadoutWeights;
use crate::reservoir::{HigherOrderReservoir, HqrcConfig};
use crate::rng::{tag, Stream};

/// Model family and hyperparameters; `kind = "hqrc" | "esn"` in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    Hqrc(HqrcConfig),
    Esn(EsnConfig),
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self::Hqrc(HqrcConfig::default())
    }
}

impl ModelSpec {
    pub fn label(&self) -> String {
        match self {
            Self::Hqrc(c) => c.label(),
            Self::Esn(c) => c.label(),
        }
    }

    pub fn ridge_beta(&self) -> f64 {
        match self {
            Self::Hqrc(c) => c.ridge_beta,
            Self::Esn(c) => c.ridge_beta,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Self::Hqrc(c) => c.seed,
            Self::Esn(c) => c.seed,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            Self::Hqrc(c) => c.seed = seed,
            Self::Esn(c) => c.seed = seed,
        }
    }

    pub fn build(&self, n_in: usize) -> Result<Model> {
        Ok(match self {
            Self::Hqrc(c) => Model::Hqrc(HigherOrderReservoir::new(c, n_in)?),
            Self::Esn(c) => Model::Esn(esn_init(c, n_in)?),
        })
    }
}

#[derive(Debug, Clone)]
pub enum Model {
    Hqrc(HigherOrderReservoir),
    Esn(EsnState),
}

impl Model {
    fn inner(&self) -> &dyn Forecaster {
        match self {
            Self::Hqrc(m) => m,
            Self::Esn(m) => m,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Forecaster {
        match self {
            Self::Hqrc(m) => m,
            Self::Esn(m) => m,
        }
    }
}

impl Forecaster for Model {
    fn n_in(&self) -> usize {
        self.inner().n_in()
    }

    fn n_features(&self) -> usize {
        self.inner().n_features()
    }

    fn reset(&mut self) {
        self.inner_mut().reset()
    }

    fn features(&self) -> Vec<f64> {
        self.inner().features()
    }

    fn drive(&mut self, u: &[f64]) -> Result<()> {
        self.inner_mut().drive(u)
    }

    fn drive_closed(&mut self, readout: &ReadoutWeights) -> Result<()> {
        self.inner_mut().drive_closed(readout)
    }

    fn prepare_readout(&self, weights: ReadoutWeights) -> Result<ReadoutWeights> {
        self.inner().prepare_readout(weights)
    }

    fn checkpoint(&self) -> Value {
        self.inner().checkpoint()
    }

    fn restore(&mut self, cp: &Value) -> Result<()> {
        self.inner_mut().restore(cp)
    }
}

/// Which contiguous span a rollout start index is relative to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Span {
    Train,
    #[default]
    Test,
}

impl Span {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Number of leading snapshots used for training.
    pub train_len: Option<usize>,
    /// Last training label (inclusive), e.g. `1989-12-31`. Used when
    /// `train_len` is absent; this date is the default for labelled series.
    pub train_end_label: Option<String>,
}

pub const DEFAULT_TRAIN_END: &str = "1989-12-31";

/// Hyperparameter grid. Empty axes keep the base configuration's value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub v_nodes: Vec<usize>,
    pub alpha: Vec<f64>,
    pub ridge_beta: Vec<f64>,
    /// ESN reservoir sizes.
    pub units: Vec<usize>,
    /// ESN ridge parameters.
    pub esn_ridge_beta: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            v_nodes: vec![5, 10, 15, 20],
            alpha: vec![0.3, 0.4, 0.6, 0.7, 0.8, 0.9],
            ridge_beta: vec![1e-3, 1e-4, 1e-5, 1e-6, 1e-7],
            units: vec![40, 50, 60, 70, 80, 100, 120, 150, 200, 300, 500, 1000],
            esn_ridge_beta: vec![1e-4, 1e-5, 1e-6, 1e-7],
        }
    }
}

impl SweepGrid {
    /// Every grid point for the model family of `base`, in nested order.
    pub fn expand(&self, base: &ModelSpec) -> Vec<ModelSpec> {
        fn or<T: Clone>(axis: &[T], base: T) -> Vec<T> {
            if axis.is_empty() {
                vec![base]
            } else {
                axis.to_vec()
            }
        }
        let mut out = Vec::new();
        match base {
            ModelSpec::Hqrc(b) => {
                for v in or(&self.v_nodes, b.v_nodes) {
                    for a in or(&self.alpha, b.alpha) {
                        for beta in or(&self.ridge_beta, b.ridge_beta) {
                            out.push(ModelSpec::Hqrc(HqrcConfig {
                                v_nodes: v,
                                alpha: a,
                                ridge_beta: beta,
                                ..b.clone()
                            }));
                        }
                    }
                }
            }
            ModelSpec::Esn(b) => {
                for u in or(&self.units, b.units) {
                    for beta in or(&self.esn_ridge_beta, b.ridge_beta) {
                        out.push(ModelSpec::Esn(EsnConfig {
                            units: u,
                            degree: b.degree.min(u),
                            ridge_beta: beta,
                            ..b.clone()
                        }));
                    }
                }
            }
        }
        out
    }
}

/// Everything an experiment needs; loaded from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Overrides the model's own seed when present.
    pub seed: Option<u64>,
    pub n_modes: usize,
    pub washout: usize,
    pub horizon: usize,
    pub eval_starts: Vec<usize>,
    pub validation_span: Span,
    pub top_k: usize,
    pub execution: Execution,
    pub split: SplitConfig,
    pub region: RegionSpec,
    pub model: ModelSpec,
    pub sweep: SweepGrid,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: None,
            out_dir: PathBuf::from("out"),
            seed: None,
            n_modes: 5,
            washout: 40,
            horizon: 300,
            eval_starts: vec![116, 40, 66],
            validation_span: Span::Test,
            top_k: 5,
            execution: Execution::default(),
            split: SplitConfig::default(),
            region: RegionSpec::east_pacific(),
            model: ModelSpec::default(),
            sweep: SweepGrid::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(Error::from)
    }

    /// Model spec with the top-level seed applied.
    pub fn model_spec(&self) -> ModelSpec {
        let mut m = self.model.clone();
        if let Some(s) = self.seed {
            m.set_seed(s);
        }
        m
    }

    pub fn split_for(&self, series: &GriddedSeries) -> Result<SplitSpec> {
        if let Some(n) = self.split.train_len {
            return SplitSpec::at(n, series.n_time);
        }
        if series.time_labels.is_empty() {
            return Err(domain(
                "series has no time labels; set split.train_len to choose the training span",
            ));
        }
        let last = self
            .split
            .train_end_label
            .as_deref()
            .unwrap_or(DEFAULT_TRAIN_END);
        SplitSpec::from_labels(&series.time_labels, last)
    }
}

/// Flattened snapshots, split, POD basis and coefficient series.
#[derive(Debug, Clone)]
pub struct PreparedData {
    /// `N × T`.
    pub snapshots: DMatrix<f64>,
    pub split: SplitSpec,
    pub basis: PodBasis,
    /// Unscaled coefficients over the whole series, `T × M`.
    pub coeffs: DMatrix<f64>,
    /// Coefficients min-max scaled with training extrema, `T × M`.
    pub scaled: DMatrix<f64>,
    /// Flattened-state indices of the evaluation region.
    pub region: Vec<usize>,
}

impl PreparedData {
    pub fn n_modes(&self) -> usize {
        self.coeffs.ncols()
    }

    pub fn n_time(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn span_start(&self, span: Span) -> usize {
        match span {
            Span::Train => self.split.train.start,
            Span::Test => self.split.test.start,
        }
    }

    pub fn train_inputs(&self) -> DMatrix<f64> {
        self.scaled
            .rows(self.split.train.start, self.split.train.len())
            .into_owned()
    }
}

/// Flattens, fits the POD basis on the training span and projects everything.
pub fn prepare(
    series: &GriddedSeries,
    mask: &LandMask,
    split: &SplitSpec,
    n_modes: usize,
    region: &RegionSpec,
) -> Result<PreparedData> {
    if split.test.end > series.n_time {
        return Err(domain("split extends past the end of the series"));
    }
    let snapshots = flatten(series, mask)?;
    let train = snapshots
        .columns(split.train.start, split.train.len())
        .into_owned();
    let (basis, _) = fit_pod(&train, n_modes)?;
    with_basis(snapshots, split, basis, mask, region)
}

/// Like [`prepare`] but with an already fitted basis (e.g. loaded from disk).
pub fn prepare_with_basis(
    series: &GriddedSeries,
    mask: &LandMask,
    split: &SplitSpec,
    basis: PodBasis,
    region: &RegionSpec,
) -> Result<PreparedData> {
    if split.test.end > series.n_time {
        return Err(domain("split extends past the end of the series"));
    }
    let snapshots = flatten(series, mask)?;
    if snapshots.nrows() != basis.n_points() {
        return Err(domain(format!(
            "basis has {} points but the mask keeps {}",
            basis.n_points(),
            snapshots.nrows()
        )));
    }
    with_basis(snapshots, split, basis, mask, region)
}

fn with_basis(
    snapshots: DMatrix<f64>,
    split: &SplitSpec,
    basis: PodBasis,
    mask: &LandMask,
    region: &RegionSpec,
) -> Result<PreparedData> {
    let coeffs = basis.project_series(&snapshots)?;
    let scaled = basis.scaler.scale(&coeffs)?;
    Ok(PreparedData {
        snapshots,
        split: split.clone(),
        basis,
        coeffs,
        scaled,
        region: region_indices(mask, region)?,
    })
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub n_in: usize,
    pub washout: usize,
    pub readout: ReadoutWeights,
    pub train_seconds: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelManifest {
    spec: ModelSpec,
    n_in: usize,
    washout: usize,
    train_seconds: f64,
    label: String,
}

pub const MODEL_FILE: &str = "model.json";
pub const READOUT_FILE: &str = "readout.bin";
pub const POD_FILE: &str = "pod.bin";

impl TrainedModel {
    pub fn label(&self) -> String {
        self.spec.label()
    }

    /// A fresh model instance; its state is overwritten by every rollout.
    pub fn instantiate(&self) -> Result<Model> {
        self.spec.build(self.n_in)
    }

    /// Writes `model.json`, `readout.bin` and `pod.bin` into `dir`.
    pub fn save(&self, dir: &Path, basis: &PodBasis) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = ModelManifest {
            spec: self.spec.clone(),
            n_in: self.n_in,
            washout: self.washout,
            train_seconds: self.train_seconds,
            label: self.label(),
        };
        write_json(&dir.join(MODEL_FILE), &manifest)?;
        write_atomic(&dir.join(READOUT_FILE), &self.readout.to_bytes())?;
        write_atomic(&dir.join(POD_FILE), &basis.to_bytes()?)
    }

    pub fn load(dir: &Path) -> Result<(Self, PodBasis)> {
        let manifest: ModelManifest = serde_json::from_slice(&fs::read(dir.join(MODEL_FILE))?)?;
        let readout = ReadoutWeights::from_bytes(&fs::read(dir.join(READOUT_FILE))?)?;
        let basis = PodBasis::from_bytes(&fs::read(dir.join(POD_FILE))?)?;
        if readout.n_outputs() != manifest.n_in || basis.n_modes() != manifest.n_in {
            return Err(domain(
                "model, readout and POD artifacts disagree on the mode count",
            ));
        }
        Ok((
            Self {
                spec: manifest.spec,
                n_in: manifest.n_in,
                washout: manifest.washout,
                readout,
                train_seconds: manifest.train_seconds,
            },
            basis,
        ))
    }
}

/// Builds the model, washes out `washout` steps and fits the readout on the
/// training span. Wall-clock time covers construction and fitting.
pub fn run_train(
    spec: &ModelSpec,
    data: &PreparedData,
    washout: usize,
) -> Result<(TrainedModel, Model)> {
    let inputs = data.train_inputs();
    if inputs.nrows() < washout + 2 {
        return Err(domain(format!(
            "training span of {} steps is shorter than washout {washout} plus one training pair",
            inputs.nrows()
        )));
    }
    let started = Instant::now();
    let mut model = spec.build(data.n_modes())?;
    let readout = forecast::train(&mut model, &inputs, washout, spec.ridge_beta())?;
    let train_seconds = started.elapsed().as_secs_f64();
    Ok((
        TrainedModel {
            spec: spec.clone(),
            n_in: data.n_modes(),
            washout,
            readout,
            train_seconds,
        },
        model,
    ))
}

#[derive(Debug, Clone)]
pub struct ForecastResult {
    pub label: String,
    pub span: Span,
    /// Start relative to `span`.
    pub start: usize,
    /// Start as an index into the whole series.
    pub abs_start: usize,
    pub horizon: usize,
    /// Steps with ground truth available (`≤ horizon`).
    pub evaluated: usize,
    /// `true` when the horizon runs past the end of the data.
    pub truncated: bool,
    /// Clipped predictions in scaled units, `horizon × M`.
    pub scaled: DMatrix<f64>,
    /// Unscaled coefficients, `horizon × M`.
    pub coeffs: DMatrix<f64>,
    pub metrics: MetricReport,
    pub persistence: MetricReport,
}

impl ForecastResult {
    /// RMNSE of the modal prediction, `∞` when undefined.
    pub fn rmnse(&self) -> f64 {
        self.metrics.rmnse_modal.unwrap_or(f64::INFINITY)
    }
}

/// Warms up on the `washout` true inputs ending at `start`, then rolls out
/// `horizon` closed-loop steps. `perturb` is added to the last warm-up input.
pub fn run_forecast(
    trained: &TrainedModel,
    model: &mut Model,
    data: &PreparedData,
    span: Span,
    start: usize,
    horizon: usize,
    perturb: Option<&[f64]>,
) -> Result<ForecastResult> {
    let abs_start = data.span_start(span) + start;
    if abs_start >= data.n_time() {
        return Err(domain(format!(
            "start {start} in the {} span is past the end of the data",
            span.as_str()
        )));
    }
    if horizon == 0 {
        return Err(domain("horizon must be at least one step"));
    }
    let scaled = forecast::rollout(
        model,
        &trained.readout,
        &data.scaled,
        abs_start,
        trained.washout,
        horizon,
        perturb,
    )?;
    let coeffs = data.basis.scaler.unscale(&scaled)?;
    let evaluated = horizon.min(data.n_time() - abs_start);
    let label = trained.label();
    let metrics = evaluate(data, &coeffs, abs_start, evaluated, &label)?;
    let persist = forecast::persistence(&data.coeffs, abs_start, horizon)?;
    let persistence = evaluate(data, &persist, abs_start, evaluated, "persistence")?;
    Ok(ForecastResult {
        label,
        span,
        start,
        abs_start,
        horizon,
        evaluated,
        truncated: evaluated < horizon,
        scaled,
        coeffs,
        metrics,
        persistence,
    })
}

/// Metrics of unscaled coefficient predictions against the data over
/// `abs_start .. abs_start + evaluated`.
pub fn evaluate(
    data: &PreparedData,
    coeffs: &DMatrix<f64>,
    abs_start: usize,
    evaluated: usize,
    label: &str,
) -> Result<MetricReport> {
    let pred = coeffs.rows(0, evaluated).into_owned();
    let truth_grid = data
        .snapshots
        .columns(abs_start, evaluated)
        .into_owned()
        .transpose();
    let pred_grid = data.basis.reconstruct_series(&pred)?.transpose();
    let truth_coeffs = data.coeffs.rows(abs_start, evaluated).into_owned();
    Ok(MetricReport {
        label: label.to_string(),
        horizon: evaluated,
        rmse_grid: metrics::rmse(&pred_grid, &truth_grid, None)?,
        rmse_region: metrics::rmse(&pred_grid, &truth_grid, Some(&data.region))?,
        rmnse_modal: metrics::rmnse(&pred, &truth_coeffs).ok(),
        recon_floor: metrics::reconstruction_floor(
            &data.basis,
            &data.snapshots,
            abs_start..abs_start + evaluated,
            None,
        )?,
    })
}

/// One ranked configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepEntry<T> {
    pub rank: usize,
    pub label: String,
    pub config: T,
    /// Mean validation RMNSE over the start indices (`∞` on failure).
    pub score: f64,
    pub per_start: Vec<f64>,
    pub error: Option<String>,
}

/// Evaluates every configuration (concurrently under `Parallel`) and ranks
/// them by ascending score, ties broken by label. Failures rank last.
pub fn sweep_with<T, L, E>(configs: &[T], exec: Execution, label: L, eval: E) -> Vec<SweepEntry<T>>
where
    T: Clone + Send + Sync,
    L: Fn(&T) -> String + Sync,
    E: Fn(&T) -> Result<Vec<f64>> + Sync,
{
    let mut entries = par::map(exec, configs, |_, c| {
        let (score, per_start, error) = match eval(c) {
            Ok(v) if !v.is_empty() => {
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                let mean = if mean.is_nan() { f64::INFINITY } else { mean };
                (mean, v, None)
            }
            Ok(_) => (
                f64::INFINITY,
                vec![],
                Some("no validation starts".to_string()),
            ),
            Err(e) => (f64::INFINITY, vec![], Some(e.to_string())),
        };
        SweepEntry {
            rank: 0,
            label: label(c),
            config: c.clone(),
            score,
            per_start,
            error,
        }
    });
    entries.sort_by(|a, b| {
        a.score
            .total_cmp(&b.score)
            .then_with(|| a.label.cmp(&b.label))
    });
    for (i, e) in entries.iter_mut().enumerate() {
        e.rank = i + 1;
    }
    entries
}

/// Trains `spec` and returns its validation RMNSE at every start.
pub fn validate(spec: &ModelSpec, data: &PreparedData, cfg: &ExperimentConfig) -> Result<Vec<f64>> {
    let (trained, mut model) = run_train(spec, data, cfg.washout)?;
    cfg.eval_starts
        .iter()
        .map(|&s| {
            let r = run_forecast(
                &trained,
                &mut model,
                data,
                cfg.validation_span,
                s,
                cfg.horizon,
                None,
            )?;
            Ok(r.rmnse())
        })
        .collect()
}

pub fn sweep(
    grid: &[ModelSpec],
    data: &PreparedData,
    cfg: &ExperimentConfig,
) -> Vec<SweepEntry<ModelSpec>> {
    sweep_with(grid, cfg.execution, ModelSpec::label, |s| {
        validate(s, data, cfg)
    })
}

/// Top-k ensemble at one span and start.
#[derive(Debug, Clone)]
pub struct EnsembleReport {
    pub span: Span,
    pub start: usize,
    pub members: Vec<String>,
    /// Mean member coefficients, `horizon × M`.
    pub mean: DMatrix<f64>,
    pub std: DMatrix<f64>,
    /// Metrics of the averaged prediction.
    pub error_of_mean: MetricReport,
    /// Averages of the members' own metrics.
    pub mean_of_errors: MetricReport,
    pub member_reports: Vec<MetricReport>,
}

/// Retrains the `k` best entries and ensembles their forecasts for each span
/// and start. Members are averaged in unscaled coefficient space.
pub fn top_k_ensemble(
    ranked: &[SweepEntry<ModelSpec>],
    data: &PreparedData,
    cfg: &ExperimentConfig,
    spans: &[Span],
) -> Result<Vec<EnsembleReport>> {
    let members: Vec<&SweepEntry<ModelSpec>> = ranked
        .iter()
        .filter(|e| e.error.is_none())
        .take(cfg.top_k)
        .collect();
    if members.is_empty() {
        return Err(domain("no successful configuration to ensemble"));
    }
    let trained = par::map(cfg.execution, &members, |_, e| {
        run_train(&e.config, data, cfg.washout)
    });
    let mut trained = trained.into_iter().collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for &span in spans {
        for &start in &cfg.eval_starts {
            let results = trained
                .iter_mut()
                .map(|(t, m)| run_forecast(t, m, data, span, start, cfg.horizon, None))
                .collect::<Result<Vec<_>>>()?;
            out.push(combine(&results, data, span, start)?);
        }
    }
    Ok(out)
}

fn combine(
    results: &[ForecastResult],
    data: &PreparedData,
    span: Span,
    start: usize,
) -> Result<EnsembleReport> {
    let coeffs: Vec<DMatrix<f64>> = results.iter().map(|r| r.coeffs.clone()).collect();
    let (mean, std) = ensemble_average(&coeffs)?;
    let first = &results[0];
    let label = format!("top{}-mean/{}/{}", results.len(), span.as_str(), start);
    let error_of_mean = evaluate(data, &mean, first.abs_start, first.evaluated, &label)?;
    let reports: Vec<MetricReport> = results.iter().map(|r| r.metrics.clone()).collect();
    let k = reports.len() as f64;
    let rmnse: Option<Vec<f64>> = reports.iter().map(|r| r.rmnse_modal).collect();
    let mean_of_errors = MetricReport {
        label: format!("top{}-avg/{}/{}", results.len(), span.as_str(), start),
        horizon: first.evaluated,
        rmse_grid: reports.iter().map(|r| r.rmse_grid).sum::<f64>() / k,
        rmse_region: reports.iter().map(|r| r.rmse_region).sum::<f64>() / k,
        rmnse_modal: rmnse.map(|v| v.iter().sum::<f64>() / k),
        recon_floor: first.metrics.recon_floor,
    };
    Ok(EnsembleReport {
        span,
        start,
        members: results.iter().map(|r| r.label.clone()).collect(),
        mean,
        std,
        error_of_mean,
        mean_of_errors,
        member_reports: reports,
    })
}

/// Rows of metrics (train/test, grid/region) against columns of washout
/// lengths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WashoutTable {
    pub dl_values: Vec<usize>,
    pub start: usize,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl WashoutTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric");
        for dl in &self.dl_values {
            let _ = write!(s, ",DL-{dl}");
        }
        s.push('\n');
        for (name, vals) in &self.rows {
            s.push_str(name);
            for v in vals {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

/// Retrains and forecasts once per washout length, from `start` in both spans.
pub fn ablate_washout(
    spec: &ModelSpec,
    data: &PreparedData,
    dl_values: &[usize],
    start: usize,
    horizon: usize,
    exec: Execution,
) -> Result<WashoutTable> {
    let cols = par::map(exec, dl_values, |_, &dl| -> Result<[f64; 4]> {
        let (trained, mut model) = run_train(spec, data, dl)?;
        let tr = run_forecast(
            &trained,
            &mut model,
            data,
            Span::Train,
            start,
            horizon,
            None,
        )?;
        let te = run_forecast(&trained, &mut model, data, Span::Test, start, horizon, None)?;
        Ok([
            tr.metrics.rmse_grid,
            tr.metrics.rmse_region,
            te.metrics.rmse_grid,
            te.metrics.rmse_region,
        ])
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let names = [
        "RMSE (Train)",
        "RMSE in Pacific Region (Train)",
        "RMSE (Test)",
        "RMSE in Pacific Region (Test)",
    ];
    Ok(WashoutTable {
        dl_values: dl_values.to_vec(),
        start,
        rows: names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.to_string(), cols.iter().map(|c| c[i]).collect()))
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructureAxis {
    NQubits,
    NReservoirs,
    CouplingJ,
    Tau,
}

impl std::str::FromStr for StructureAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n_qubits" => Ok(Self::NQubits),
            "n_reservoirs" => Ok(Self::NReservoirs),
            "coupling_j" => Ok(Self::CouplingJ),
            "tau" => Ok(Self::Tau),
            o => Err(domain(format!(
                "unknown axis '{o}' (expected n_qubits, n_reservoirs, coupling_j or tau)"
            ))),
        }
    }
}

impl StructureAxis {
    pub fn name(self) -> &'static str {
        match self {
            Self::NQubits => "n_qubits",
            Self::NReservoirs => "n_reservoirs",
            Self::CouplingJ => "coupling_j",
            Self::Tau => "tau",
        }
    }

    pub fn apply(self, base: &HqrcConfig, value: f64) -> Result<HqrcConfig> {
        let int = || -> Result<usize> {
            if value >= 1.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(domain(format!(
                    "{} needs a positive integer, got {value}",
                    self.name()
                )))
            }
        };
        let mut c = base.clone();
        match self {
            Self::NQubits => c.n_qubits = int()?,
            Self::NReservoirs => c.n_reservoirs = int()?,
            Self::CouplingJ => c.coupling_j = value,
            Self::Tau => c.tau = value,
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub axis: String,
    pub value: f64,
    pub label: String,
    pub rmnse: f64,
    pub error: Option<String>,
}

pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut s = String::from("axis,value,label,rmnse,error\n");
    for p in points {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            p.axis,
            p.value,
            csv_field(&p.label),
            p.rmnse,
            csv_field(p.error.as_deref().unwrap_or(""))
        );
    }
    s
}

/// Validation RMNSE as one structural parameter varies, others fixed.
pub fn ablate_structure(
    base: &HqrcConfig,
    axis: StructureAxis,
    values: &[f64],
    data: &PreparedData,
    cfg: &ExperimentConfig,
) -> Result<Vec<CurvePoint>> {
    let specs = values
        .iter()
        .map(|v| axis.apply(base, *v).map(ModelSpec::Hqrc))
        .collect::<Result<Vec<_>>>()?;
    let scored = par::map(cfg.execution, &specs, |_, s| validate(s, data, cfg));
    Ok(values
        .iter()
        .zip(specs.iter().zip(scored))
        .map(|(v, (s, r))| curve_point(axis.name(), *v, s, r))
        .collect())
}

fn curve_point(axis: &str, value: f64, spec: &ModelSpec, r: Result<Vec<f64>>) -> CurvePoint {
    let (rmnse, error) = match r {
        Ok(v) if !v.is_empty() => (v.iter().sum::<f64>() / v.len() as f64, None),
        Ok(_) => (f64::INFINITY, Some("no validation starts".into())),
        Err(e) => (f64::INFINITY, Some(e.to_string())),
    };
    CurvePoint {
        axis: axis.into(),
        value,
        label: spec.label(),
        rmnse,
        error,
    }
}

/// Re-fits POD with each mode count and validates the model on it. For
/// HQRC the reservoir count is rounded up to a multiple of the mode count.
pub fn ablate_modes(
    series: &GriddedSeries,
    mask: &LandMask,
    split: &SplitSpec,
    mode_values: &[usize],
    cfg: &ExperimentConfig,
) -> Result<Vec<CurvePoint>> {
    mode_values
        .iter()
        .map(|&m| {
            let data = prepare(series, mask, split, m, &cfg.region)?;
            let spec = match cfg.model_spec() {
                ModelSpec::Hqrc(c) => ModelSpec::Hqrc(HqrcConfig {
                    n_reservoirs: c.n_reservoirs.div_ceil(m) * m,
                    ..c
                }),
                other => other,
            };
            Ok(curve_point(
                "n_modes",
                m as f64,
                &spec,
                validate(&spec, &data, cfg),
            ))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct PerturbationResult {
    pub epsilon: f64,
    /// Unperturbed unscaled coefficients, `horizon × M`.
    pub baseline: DMatrix<f64>,
    pub mean: DMatrix<f64>,
    pub std: DMatrix<f64>,
    /// Largest deviation of any draw from the baseline.
    pub max_deviation: f64,
}

/// Rolls out `n_draws` copies with the last warm-up input shifted by
/// independent uniform `[−ε, ε]` draws.
#[allow(clippy::too_many_arguments)]
pub fn perturbation_study(
    trained: &TrainedModel,
    data: &PreparedData,
    span: Span,
    start: usize,
    horizon: usize,
    epsilon: f64,
    n_draws: usize,
    seed: u64,
    exec: Execution,
) -> Result<PerturbationResult> {
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(domain("perturbation size must be finite and non-negative"));
    }
    if n_draws == 0 {
        return Err(domain("at least one perturbation draw is required"));
    }
    let m = data.n_modes();
    let mut rng = Stream::derived(seed, tag::PERTURB);
    let draws: Vec<Vec<f64>> = (0..n_draws)
        .map(|_| (0..m).map(|_| rng.uniform(-epsilon, epsilon)).collect())
        .collect();
    let mut model = trained.instantiate()?;
    let baseline = run_forecast(trained, &mut model, data, span, start, horizon, None)?.coeffs;
    let runs = par::map(exec, &draws, |_, d| -> Result<DMatrix<f64>> {
        let mut model = trained.instantiate()?;
        Ok(run_forecast(trained, &mut model, data, span, start, horizon, Some(d))?.coeffs)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let (mean, std) = ensemble_average(&runs)?;
    let max_deviation = runs
        .iter()
        .map(|r| (r - &baseline).amax())
        .fold(0.0, f64::max);
    Ok(PerturbationResult {
        epsilon,
        baseline,
        mean,
        std,
        max_deviation,
    })
}

/// `step,<prefix>_0,…` rows, one per matrix row.
pub fn matrix_csv(columns: &[(&str, &DMatrix<f64>)]) -> String {
    let mut s = String::from("step");
    for (name, m) in columns {
        for j in 0..m.ncols() {
            let _ = write!(s, ",{name}_{j}");
        }
    }
    s.push('\n');
    let rows = columns.iter().map(|(_, m)| m.nrows()).max().unwrap_or(0);
    for t in 0..rows {
        let _ = write!(s, "{t}");
        for (_, m) in columns {
            for j in 0..m.ncols() {
                match t < m.nrows() {
                    true => {
                        let _ = write!(s, ",{}", m[(t, j)]);
                    }
                    false => s.push(','),
                }
            }
        }
        s.push('\n');
    }
    s
}

pub fn sweep_csv(entries: &[SweepEntry<ModelSpec>]) -> String {
    let mut s = String::from("rank,label,rmnse,error\n");
    for e in entries {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            e.rank,
            csv_field(&e.label),
            e.score,
            csv_field(e.error.as_deref().unwrap_or(""))
        );
    }
    s
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_series, SynthSpec};

    fn small_data(n_time: usize, n_train: usize, modes: usize) -> PreparedData {
        let spec = SynthSpec {
            n_time,
            rank: modes,
            ..SynthSpec::default()
        };
        let (series, mask) = synth_series(&spec).unwrap();
        let split = SplitSpec::at(n_train, n_time).unwrap();
        prepare(&series, &mask, &split, modes, &RegionSpec::east_pacific()).unwrap()
    }

    fn small_hqrc() -> ModelSpec {
        ModelSpec::Hqrc(HqrcConfig {
            n_qubits: 3,
            n_reservoirs: 2,
            v_nodes: 3,
            ..HqrcConfig::default()
        })
    }

    #[test]
    fn config_defaults_and_json() {
        let cfg = ExperimentConfig::default();
        assert_eq!((cfg.washout, cfg.horizon, cfg.top_k), (40, 300, 5));
        assert_eq!(cfg.eval_starts, vec![116, 40, 66]);
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
        let esn =
            ExperimentConfig::from_json(r#"{"model": {"kind": "esn", "units": 80}}"#).unwrap();
        assert_eq!(
            esn.model,
            ModelSpec::Esn(EsnConfig {
                units: 80,
                ..EsnConfig::default()
            })
        );
        assert!(ExperimentConfig::from_json(r#"{"model": {"kind": "hqrc", "bogus": 1}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"washot": 3}"#).is_err());
    }

    #[test]
    fn grids_enumerate() {
        let g = SweepGrid::default();
        assert_eq!(g.expand(&ModelSpec::default()).len(), 120);
        assert_eq!(g.expand(&ModelSpec::Esn(EsnConfig::default())).len(), 48);
        let labels: Vec<String> = g
            .expand(&ModelSpec::default())
            .iter()
            .map(|s| s.label())
            .collect();
        assert!(labels.contains(&"HQRC-V=10-alpha=0.4-beta=1e-06".to_string()));
    }

    #[test]
    fn sweep_ranking() {
        let single = sweep_with(
            &[7u32],
            Execution::Sequential,
            |c| c.to_string(),
            |_| Ok(vec![0.3]),
        );
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].rank, 1);

        // "b" is a perfect predictor, "a" ties with "c".
        let configs = ["c", "a", "b", "d"];
        let ranked = sweep_with(
            &configs,
            Execution::Parallel,
            |c| c.to_string(),
            |c| match *c {
                "b" => Ok(vec![0.0, 0.0]),
                "d" => Err(domain("diverged")),
                _ => Ok(vec![0.5, 0.7]),
            },
        );
        let order: Vec<&str> = ranked.iter().map(|e| e.label.as_str()).collect();
        assert_eq!(order, ["b", "a", "c", "d"]);
        assert!(ranked[3].error.is_some());
    }

    #[test]
    fn train_forecast_roundtrip() {
        let data = small_data(160, 100, 2);
        let spec = small_hqrc();
        let (trained, mut model) = run_train(&spec, &data, 10).unwrap();
        let r = run_forecast(&trained, &mut model, &data, Span::Test, 20, 30, None).unwrap();
        assert!(!r.truncated);
        assert!(r.scaled.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(r.metrics.is_valid());

        let long = run_forecast(&trained, &mut model, &data, Span::Test, 40, 50, None).unwrap();
        assert!(long.truncated);
        assert_eq!(long.evaluated, 20);

        let one = run_forecast(&trained, &mut model, &data, Span::Test, 5, 1, None).unwrap();
        assert_eq!(one.scaled.nrows(), 1);

        let dir = tempfile::tempdir().unwrap();
        trained.save(dir.path(), &data.basis).unwrap();
        let (loaded, basis) = TrainedModel::load(dir.path()).unwrap();
        assert_eq!(loaded.readout.to_bytes(), trained.readout.to_bytes());
        assert_eq!(basis.to_bytes().unwrap(), data.basis.to_bytes().unwrap());
        let mut fresh = loaded.instantiate().unwrap();
        let again = run_forecast(&loaded, &mut fresh, &data, Span::Test, 20, 30, None).unwrap();
        assert_eq!(again.scaled, r.scaled);

        let (retrained, _) = run_train(&spec, &data, 10).unwrap();
        assert_eq!(retrained.readout.to_bytes(), trained.readout.to_bytes());
        assert!(run_train(&spec, &data, 0).is_ok());
    }

    #[test]
    fn perturbation_degenerate_cases() {
        let data = small_data(160, 100, 2);
        let (trained, _) = run_train(&small_hqrc(), &data, 10).unwrap();
        let zero = perturbation_study(
            &trained,
            &data,
            Span::Test,
            20,
            15,
            0.0,
            4,
            1,
            Execution::Parallel,
        )
        .unwrap();
        assert_eq!(zero.max_deviation, 0.0);
        assert!(zero.std.iter().all(|s| *s == 0.0));
        let one = perturbation_study(
            &trained,
            &data,
            Span::Test,
            20,
            15,
            1e-3,
            1,
            1,
            Execution::Parallel,
        )
        .unwrap();
        assert!(one.std.iter().all(|s| *s == 0.0));
        let ten = perturbation_study(
            &trained,
            &data,
            Span::Test,
            20,
            15,
            1e-3,
            10,
            1,
            Execution::Parallel,
        )
        .unwrap();
        assert!(ten.std.iter().all(|s| s.is_finite()));
        assert!(ten.max_deviation > 0.0);
    }

    #[test]
    fn washout_table_layout() {
        let data = small_data(160, 100, 2);
        let t = ablate_washout(
            &small_hqrc(),
            &data,
            &[5, 10],
            10,
            20,
            Execution::Sequential,
        )
        .unwrap();
        let csv = t.to_csv();
        assert!(csv.starts_with("metric,DL-5,DL-10\nRMSE (Train),"));
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn structure_axis_values() {
        let base = HqrcConfig::default();
        assert_eq!(
            StructureAxis::NQubits.apply(&base, 3.0).unwrap().n_qubits,
            3
        );
        assert!(StructureAxis::NQubits.apply(&base, 2.5).is_err());
        assert_eq!("tau".parse::<StructureAxis>().unwrap(), StructureAxis::Tau);
        assert!("gamma".parse::<StructureAxis>().is_err());
    }
}
