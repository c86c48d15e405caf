//! `hqrc` command-line experiment runner.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use hqrc::data::{
    load_series, synth_series, unflatten_snapshot, write_atomic, write_series, GriddedSeries,
    LandMask, SplitSpec, SynthKind, SynthSpec,
};
use hqrc::experiment::{
    ablate_modes, ablate_structure, ablate_washout, curve_csv, matrix_csv, perturbation_study,
    prepare, prepare_with_basis, run_forecast, run_train, sweep, sweep_csv, top_k_ensemble,
    write_json, write_text, ExperimentConfig, ModelSpec, PreparedData, Span, StructureAxis,
    TrainedModel, POD_FILE,
};
use hqrc::metrics::{reconstruction_floor, reports_csv, MetricReport};
use hqrc::nalgebra::DMatrix;
use hqrc::par::Execution;
use hqrc::pod::PodBasis;

#[derive(Parser)]
#[command(
    name = "hqrc",
    version,
    about = "Higher-order quantum reservoir forecasting of POD-compressed fields"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Input GSF file; overrides `data` in the config.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Output directory; overrides `out_dir` in the config.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Overrides the model seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Value written to land cells of exported grids.
    #[arg(long, global = true, default_value_t = f64::NAN, allow_negative_numbers = true)]
    mask_sentinel: f64,
    /// Number of leading snapshots used for training; overrides the config.
    #[arg(long, global = true)]
    train_len: Option<usize>,
    /// Disable data parallelism.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a deterministic synthetic GSF dataset.
    Synth(SynthArgs),
    /// Fit or apply a POD basis.
    #[command(subcommand)]
    Pod(PodCmd),
    /// Train the configured model and save its artifacts.
    Train,
    /// Roll out a trained model and report metrics.
    Forecast(ForecastArgs),
    /// Rank a hyperparameter grid and ensemble the best configurations.
    Sweep(SweepArgs),
    /// Washout, structure and mode-count ablations.
    #[command(subcommand)]
    Ablate(AblateCmd),
    /// Sensitivity of a rollout to perturbations of its last warm-up input.
    Perturb(PerturbArgs),
    /// Reconstruction floors, and metrics of an external prediction.
    Metrics(MetricsArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value = "sinusoid-mix")]
    kind: String,
    #[arg(long, default_value_t = 18)]
    n_lat: usize,
    #[arg(long, default_value_t = 36)]
    n_lon: usize,
    #[arg(long, default_value_t = 900)]
    n_time: usize,
    #[arg(long, default_value_t = 5)]
    rank: usize,
    #[arg(long, default_value_t = 2.0)]
    amplitude: f64,
    /// Keep every cell (no land block).
    #[arg(long)]
    no_land: bool,
    /// File name inside the output directory.
    #[arg(long, default_value = "synth.gsf")]
    name: String,
}

#[derive(Subcommand)]
enum PodCmd {
    /// Fit on the training span; writes pod.bin, spectrum.csv, coeffs.csv.
    Fit,
    /// Project a dataset onto a saved basis; writes coeffs.csv and the
    /// reconstruction as a GSF file.
    Apply {
        #[arg(long)]
        pod: PathBuf,
    },
}

#[derive(Args)]
struct ForecastArgs {
    /// Directory written by `train` (default: <out-dir>/model).
    #[arg(long)]
    model_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    span: SpanArg,
    /// Start index within the span (default: the first configured start).
    #[arg(long)]
    start: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    /// Evaluate only the first N grid points.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Subcommand)]
enum AblateCmd {
    /// Retrain with each washout length; Table-10 layout.
    Washout {
        #[arg(long, value_delimiter = ',', default_value = "20,30,40")]
        dl: Vec<usize>,
        #[arg(long)]
        start: Option<usize>,
    },
    /// Validation RMNSE along one structural axis.
    Structure {
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Validation RMNSE against the number of POD modes.
    Modes {
        #[arg(long, value_delimiter = ',', default_value = "5,10")]
        modes: Vec<usize>,
    },
}

#[derive(Args)]
struct PerturbArgs {
    #[arg(long, default_value_t = 1e-3)]
    epsilon: f64,
    #[arg(long, default_value_t = 10)]
    draws: usize,
    #[arg(long, value_enum, default_value = "test")]
    span: SpanArg,
    #[arg(long)]
    start: Option<usize>,
}

#[derive(Args)]
struct MetricsArgs {
    /// CSV of predicted unscaled coefficients (`step,coeff_0,…`).
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Saved basis to evaluate against (default: fit on the training span).
    #[arg(long)]
    pod: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    span: SpanArg,
    #[arg(long, default_value_t = 0)]
    start: usize,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SpanArg {
    Train,
    Test,
}

impl From<SpanArg> for Span {
    fn from(s: SpanArg) -> Self {
        match s {
            SpanArg::Train => Span::Train,
            SpanArg::Test => Span::Test,
        }
    }
}

struct Ctx {
    cfg: ExperimentConfig,
    out_dir: PathBuf,
    sentinel: f64,
}

impl Ctx {
    fn new(common: &Common) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(p) => {
                let text =
                    fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str::<ExperimentConfig>(&text)
                    .with_context(|| format!("parsing config {}", p.display()))?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(d) = &common.data {
            cfg.data = Some(d.clone());
        }
        if let Some(o) = &common.out_dir {
            cfg.out_dir = o.clone();
        }
        if common.seed.is_some() {
            cfg.seed = common.seed;
        }
        if common.train_len.is_some() {
            cfg.split.train_len = common.train_len;
        }
        if common.sequential {
            cfg.execution = Execution::Sequential;
        }
        if let ModelSpec::Hqrc(h) = &mut cfg.model {
            h.execution = cfg.execution;
        }
        fs::create_dir_all(&cfg.out_dir)
            .with_context(|| format!("creating {}", cfg.out_dir.display()))?;
        Ok(Self {
            out_dir: cfg.out_dir.clone(),
            cfg,
            sentinel: common.mask_sentinel,
        })
    }

    fn series(&self) -> Result<(GriddedSeries, LandMask, SplitSpec)> {
        let path = self
            .cfg
            .data
            .as_ref()
            .context("no dataset: pass --data or set `data` in the config")?;
        let (series, mask) =
            load_series(path).with_context(|| format!("loading {}", path.display()))?;
        let split = self.cfg.split_for(&series)?;
        Ok((series, mask, split))
    }

    fn prepared(&self) -> Result<(GriddedSeries, LandMask, PreparedData)> {
        let (series, mask, split) = self.series()?;
        let data = prepare(&series, &mask, &split, self.cfg.n_modes, &self.cfg.region)?;
        Ok((series, mask, data))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn start(&self, arg: Option<usize>) -> Result<usize> {
        arg.or_else(|| self.cfg.eval_starts.first().copied())
            .context("no start index: pass --start or set eval_starts")
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx::new(&cli.common)?;
    match cli.cmd {
        Cmd::Synth(a) => cmd_synth(&ctx, a),
        Cmd::Pod(PodCmd::Fit) => cmd_pod_fit(&ctx),
        Cmd::Pod(PodCmd::Apply { pod }) => cmd_pod_apply(&ctx, &pod),
        Cmd::Train => cmd_train(&ctx),
        Cmd::Forecast(a) => cmd_forecast(&ctx, a),
        Cmd::Sweep(a) => cmd_sweep(&ctx, a),
        Cmd::Ablate(a) => cmd_ablate(&ctx, a),
        Cmd::Perturb(a) => cmd_perturb(&ctx, a),
        Cmd::Metrics(a) => cmd_metrics(&ctx, a),
    }
}

fn cmd_synth(ctx: &Ctx, a: SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        kind: a.kind.parse::<SynthKind>()?,
        n_lat: a.n_lat,
        n_lon: a.n_lon,
        n_time: a.n_time,
        rank: a.rank,
        amplitude: a.amplitude,
        land: !a.no_land,
        seed: ctx.cfg.seed.unwrap_or(SynthSpec::default().seed),
    };
    let (series, mask) = synth_series(&spec)?;
    let path = ctx.path(&a.name);
    write_series(&path, &series, &mask)?;
    println!(
        "wrote {} ({} snapshots, {} of {} cells kept)",
        path.display(),
        series.n_time,
        mask.n_kept(),
        mask.grid.n_cells()
    );
    Ok(())
}

fn cmd_pod_fit(ctx: &Ctx) -> Result<()> {
    let (_, _, data) = ctx.prepared()?;
    let split = &data.split;
    write_atomic(&ctx.path(POD_FILE), &data.basis.to_bytes()?)?;
    let mut spec = String::from("index,eigenvalue,cumulative_fraction\n");
    let total: f64 = data.basis.spectrum.iter().sum();
    let mut acc = 0.0;
    for (i, l) in data.basis.spectrum.iter().enumerate() {
        acc += l;
        spec += &format!("{i},{l},{}\n", if total > 0.0 { acc / total } else { 0.0 });
    }
    write_text(&ctx.path("spectrum.csv"), &spec)?;
    write_text(
        &ctx.path("coeffs.csv"),
        &matrix_csv(&[("coeff", &data.coeffs)]),
    )?;
    let floors = floors(&data)?;
    write_json(
        &ctx.path("pod.json"),
        &json!({
            "n_points": data.basis.n_points(),
            "n_modes": data.basis.n_modes(),
            "train": [split.train.start, split.train.end],
            "test": [split.test.start, split.test.end],
            "recon_floor_train": floors.0,
            "recon_floor_test": floors.1,
        }),
    )?;
    println!(
        "fitted {} modes on {} points; reconstruction floor train {:.4} test {:.4}",
        data.basis.n_modes(),
        data.basis.n_points(),
        floors.0,
        floors.1
    );
    Ok(())
}

fn floors(data: &PreparedData) -> Result<(f64, f64)> {
    Ok((
        reconstruction_floor(&data.basis, &data.snapshots, data.split.train.clone(), None)?,
        reconstruction_floor(&data.basis, &data.snapshots, data.split.test.clone(), None)?,
    ))
}

fn cmd_pod_apply(ctx: &Ctx, pod: &Path) -> Result<()> {
    let basis = PodBasis::from_bytes(
        &fs::read(pod).with_context(|| format!("reading {}", pod.display()))?,
    )?;
    let (series, mask, split) = ctx.series()?;
    let data = prepare_with_basis(&series, &mask, &split, basis, &ctx.cfg.region)?;
    write_text(
        &ctx.path("coeffs.csv"),
        &matrix_csv(&[("coeff", &data.coeffs)]),
    )?;
    let rec = data.basis.reconstruct_series(&data.coeffs)?;
    let mut out = hqrc::data::unflatten(&mask, &rec, ctx.sentinel, &series.cadence)?;
    out.time_labels = series.time_labels.clone();
    write_series(ctx.path("reconstruction.gsf"), &out, &mask)?;
    println!(
        "projected {} snapshots onto {} modes",
        data.n_time(),
        data.n_modes()
    );
    Ok(())
}

fn cmd_train(ctx: &Ctx) -> Result<()> {
    let (_, _, data) = ctx.prepared()?;
    let spec = ctx.cfg.model_spec();
    let (trained, _) = run_train(&spec, &data, ctx.cfg.washout)?;
    let dir = ctx.path("model");
    trained.save(&dir, &data.basis)?;
    write_json(
        &ctx.path("train.json"),
        &json!({
            "label": trained.label(),
            "train_seconds": trained.train_seconds,
            "washout": trained.washout,
            "n_modes": trained.n_in,
            "train_span": [data.split.train.start, data.split.train.end],
            "model_dir": dir,
        }),
    )?;
    println!(
        "trained {} in {:.3} s -> {}",
        trained.label(),
        trained.train_seconds,
        dir.display()
    );
    Ok(())
}

fn load_model(ctx: &Ctx, dir: Option<PathBuf>) -> Result<(TrainedModel, PreparedData, LandMask)> {
    let dir = dir.unwrap_or_else(|| ctx.path("model"));
    let (trained, basis) = TrainedModel::load(&dir)
        .with_context(|| format!("loading model from {}", dir.display()))?;
    let (series, mask, split) = ctx.series()?;
    let data = prepare_with_basis(&series, &mask, &split, basis, &ctx.cfg.region)?;
    Ok((trained, data, mask))
}

fn cmd_forecast(ctx: &Ctx, a: ForecastArgs) -> Result<()> {
    let (trained, data, mask) = load_model(ctx, a.model_dir)?;
    let start = ctx.start(a.start)?;
    let horizon = a.horizon.unwrap_or(ctx.cfg.horizon);
    let mut model = trained.instantiate()?;
    let r = run_forecast(
        &trained,
        &mut model,
        &data,
        a.span.into(),
        start,
        horizon,
        None,
    )?;
    let truth = data.coeffs.rows(r.abs_start, r.evaluated).into_owned();
    write_text(
        &ctx.path("forecast.csv"),
        &matrix_csv(&[
            ("scaled", &r.scaled),
            ("coeff", &r.coeffs),
            ("truth", &truth),
        ]),
    )?;
    write_text(
        &ctx.path("metrics.csv"),
        &reports_csv(&[r.metrics.clone(), r.persistence.clone()]),
    )?;
    write_json(
        &ctx.path("metrics.json"),
        &json!({
            "span": r.span,
            "start": r.start,
            "abs_start": r.abs_start,
            "horizon": r.horizon,
            "evaluated": r.evaluated,
            "truncated": r.truncated,
            "model": r.metrics,
            "persistence": r.persistence,
        }),
    )?;

    // Truth, prediction and error at the last evaluated step.
    let last = r.evaluated - 1;
    let pred: Vec<f64> = r.coeffs.row(last).iter().copied().collect();
    let pred_grid = data.basis.reconstruct(&pred)?;
    let truth_grid: Vec<f64> = data
        .snapshots
        .column(r.abs_start + last)
        .iter()
        .copied()
        .collect();
    let err: Vec<f64> = pred_grid
        .iter()
        .zip(&truth_grid)
        .map(|(p, t)| p - t)
        .collect();
    let mut values = Vec::new();
    for col in [&truth_grid, &pred_grid, &err] {
        values.extend(unflatten_snapshot(&mask, col, ctx.sentinel)?);
    }
    let grid = GriddedSeries {
        grid: mask.grid,
        n_time: 3,
        cadence: "snapshot".into(),
        time_labels: vec!["truth".into(), "prediction".into(), "error".into()],
        values,
    };
    write_series(ctx.path("final_grid.gsf"), &grid, &mask)?;
    if r.truncated {
        eprintln!(
            "warning: horizon {} exceeds the data; metrics cover the first {} steps",
            r.horizon, r.evaluated
        );
    }
    print_report(&r.metrics);
    print_report(&r.persistence);
    Ok(())
}

fn print_report(m: &MetricReport) {
    println!(
        "{:<40} rmse {:.4}  region {:.4}  rmnse {}  floor {:.4}",
        m.label,
        m.rmse_grid,
        m.rmse_region,
        m.rmnse_modal
            .map(|v| format!("{v:.4}"))
            .unwrap_or_else(|| "n/a".into()),
        m.recon_floor
    );
}

fn cmd_sweep(ctx: &Ctx, a: SweepArgs) -> Result<()> {
    let (_, _, data) = ctx.prepared()?;
    let mut grid = ctx.cfg.sweep.expand(&ctx.cfg.model_spec());
    if let Some(n) = a.limit {
        grid.truncate(n);
    }
    if grid.is_empty() {
        bail!("sweep grid is empty");
    }
    let ranked = sweep(&grid, &data, &ctx.cfg);
    write_text(&ctx.path("sweep.csv"), &sweep_csv(&ranked))?;
    write_json(&ctx.path("sweep.json"), &ranked)?;
    let ensembles = top_k_ensemble(&ranked, &data, &ctx.cfg, &[Span::Train, Span::Test])?;
    let mut reports = Vec::new();
    let mut summary = Vec::new();
    for e in &ensembles {
        reports.push(e.error_of_mean.clone());
        reports.push(e.mean_of_errors.clone());
        summary.push(json!({
            "span": e.span,
            "start": e.start,
            "members": e.members,
            "error_of_mean": e.error_of_mean,
            "mean_of_errors": e.mean_of_errors,
            "member_reports": e.member_reports,
        }));
        let name = format!("ensemble_{}_{}.csv", e.span.as_str(), e.start);
        write_text(
            &ctx.path(&name),
            &matrix_csv(&[("mean", &e.mean), ("std", &e.std)]),
        )?;
    }
    write_text(&ctx.path("ensemble.csv"), &reports_csv(&reports))?;
    write_json(&ctx.path("ensemble.json"), &summary)?;
    for e in ranked.iter().take(ctx.cfg.top_k) {
        println!("{:>4}  {:<44} {:.4}", e.rank, e.label, e.score);
    }
    for r in &reports {
        print_report(r);
    }
    Ok(())
}

fn cmd_ablate(ctx: &Ctx, a: AblateCmd) -> Result<()> {
    match a {
        AblateCmd::Washout { dl, start } => {
            let (_, _, data) = ctx.prepared()?;
            let start = ctx.start(start)?;
            let table = ablate_washout(
                &ctx.cfg.model_spec(),
                &data,
                &dl,
                start,
                ctx.cfg.horizon,
                ctx.cfg.execution,
            )?;
            let csv = table.to_csv();
            write_text(&ctx.path("ablate_washout.csv"), &csv)?;
            print!("{csv}");
        }
        AblateCmd::Structure { axis, values } => {
            let axis: StructureAxis = axis.parse()?;
            let ModelSpec::Hqrc(base) = ctx.cfg.model_spec() else {
                bail!("structure ablation needs an HQRC model");
            };
            let (_, _, data) = ctx.prepared()?;
            let points = ablate_structure(&base, axis, &values, &data, &ctx.cfg)?;
            let csv = curve_csv(&points);
            write_text(&ctx.path(&format!("ablate_{}.csv", axis.name())), &csv)?;
            print!("{csv}");
        }
        AblateCmd::Modes { modes } => {
            let (series, mask, split) = ctx.series()?;
            let points = ablate_modes(&series, &mask, &split, &modes, &ctx.cfg)?;
            let csv = curve_csv(&points);
            write_text(&ctx.path("ablate_modes.csv"), &csv)?;
            print!("{csv}");
        }
    }
    Ok(())
}

fn cmd_perturb(ctx: &Ctx, a: PerturbArgs) -> Result<()> {
    let (_, _, data) = ctx.prepared()?;
    let (trained, _) = run_train(&ctx.cfg.model_spec(), &data, ctx.cfg.washout)?;
    let start = ctx.start(a.start)?;
    let seed = ctx.cfg.seed.unwrap_or(0);
    let r = perturbation_study(
        &trained,
        &data,
        a.span.into(),
        start,
        ctx.cfg.horizon,
        a.epsilon,
        a.draws,
        seed,
        ctx.cfg.execution,
    )?;
    write_text(
        &ctx.path("perturb.csv"),
        &matrix_csv(&[
            ("baseline", &r.baseline),
            ("mean", &r.mean),
            ("std", &r.std),
        ]),
    )?;
    write_json(
        &ctx.path("perturb.json"),
        &json!({
            "epsilon": r.epsilon,
            "draws": a.draws,
            "start": start,
            "max_deviation": r.max_deviation,
            "max_std": r.std.max(),
        }),
    )?;
    println!(
        "{} draws at epsilon {}: max deviation {:.3e}",
        a.draws, r.epsilon, r.max_deviation
    );
    Ok(())
}

fn cmd_metrics(ctx: &Ctx, a: MetricsArgs) -> Result<()> {
    let (series, mask, split) = ctx.series()?;
    let data = match &a.pod {
        Some(p) => {
            let basis = PodBasis::from_bytes(
                &fs::read(p).with_context(|| format!("reading {}", p.display()))?,
            )?;
            prepare_with_basis(&series, &mask, &split, basis, &ctx.cfg.region)?
        }
        None => prepare(&series, &mask, &split, ctx.cfg.n_modes, &ctx.cfg.region)?,
    };
    let (train_floor, test_floor) = floors(&data)?;
    let mut out = json!({
        "n_modes": data.n_modes(),
        "recon_floor_train": train_floor,
        "recon_floor_test": test_floor,
    });
    println!("reconstruction floor: train {train_floor:.4}  test {test_floor:.4}");
    if let Some(p) = &a.pred {
        let pred = read_coeff_csv(p, data.n_modes())?;
        let abs = data.span_start(a.span.into()) + a.start;
        if abs >= data.n_time() {
            bail!("start {} is past the end of the data", a.start);
        }
        let evaluated = pred.nrows().min(data.n_time() - abs);
        let report =
            hqrc::experiment::evaluate(&data, &pred, abs, evaluated, &p.display().to_string())?;
        write_text(
            &ctx.path("metrics.csv"),
            &reports_csv(std::slice::from_ref(&report)),
        )?;
        out["prediction"] = serde_json::to_value(&report)?;
        out["truncated"] = json!(evaluated < pred.nrows());
        print_report(&report);
    }
    write_json(&ctx.path("metrics.json"), &out)?;
    Ok(())
}

/// Reads the `coeff_*` columns of a CSV written by `forecast` or `pod`.
fn read_coeff_csv(path: &Path, n_modes: usize) -> Result<DMatrix<f64>> {
    let mut rdr =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    let cols: Vec<usize> = (0..n_modes)
        .map(|j| {
            headers
                .iter()
                .position(|h| h == format!("coeff_{j}"))
                .with_context(|| format!("{} has no column coeff_{j}", path.display()))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for &c in &cols {
            let field = rec.get(c).unwrap_or("");
            if field.is_empty() {
                continue;
            }
            rows.push(field.parse::<f64>().with_context(|| {
                format!("{} row {}: bad number '{field}'", path.display(), line + 2)
            })?);
        }
    }
    if rows.is_empty() || rows.len() % n_modes != 0 {
        bail!("{} has incomplete coefficient rows", path.display());
    }
    Ok(DMatrix::from_row_slice(
        rows.len() / n_modes,
        n_modes,
        &rows,
    ))
}
