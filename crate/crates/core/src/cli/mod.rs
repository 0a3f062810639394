//! The `geodesic-lode` experiment runner.
//!
//! Every command reads an optional TOML config, applies flag overrides,
//! validates the result and only then touches the filesystem.

mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::diffcore::Checkpoint;
use crate::latentode::LatentModel;
use crate::losses::PathMetric;
use crate::odeint::TimeGrid;
use crate::rng::{substream, Stream};
use crate::sbi::{
    inference_metrics, observe, sample_posterior, simulate_pairs, summarize, train_flow,
    write_posterior_csv, Domain, FlowEstimator, InferenceReport,
};
use crate::systems::{
    generate_with_spec, load_dataset, save_dataset, Dataset, OodPreset, SamplingSpec,
    SystemConfig, SystemId,
};
use crate::train::{
    evaluate, export_latents, fit, ic_recovery, load_model, EvalReport, EvalSettings, FitOptions,
    IcSettings, ModelPredictor, Predictor, TrainConfig,
};
use crate::{Error, Result, SCHEMA_VERSION};

pub use config::{
    train_from_table, EvalSection, ExperimentConfig, ExportSection, GenerateSection, InferSection,
};

/// Environment variable naming the root of default output directories.
pub const OUT_ENV: &str = "GEODESIC_LODE_OUT";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USER: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "geodesic-lode", version, about = "Latent ODE experiments with a path-length penalty")]
pub struct Cli {
    /// TOML experiment config; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Output directory [default: config out_dir, else $GEODESIC_LODE_OUT/<command>, else runs/<command>].
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Global seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a dataset and write it as a binary `.glds` file.
    Generate(GenerateArgs),
    /// Train a latent ODE; writes metrics.csv, best.json and resume.json.
    Train(TrainArgs),
    /// Evaluate a checkpoint; writes eval_report.json and reconstructions.csv.
    Eval(EvalArgs),
    /// Fit the parameter flow on a Lotka-Volterra checkpoint; writes
    /// flow.json, inference_report.json and posterior CSVs.
    Infer(InferArgs),
    /// Project encoded latents to two dimensions; writes latents.csv.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// dho, lane_emden or lotka_volterra.
    #[arg(long)]
    pub system: Option<SystemId>,
    /// Number of trajectories [default: 10000 dho, 1000 lane_emden, 22000 lotka_volterra].
    #[arg(long)]
    pub count: Option<usize>,
    /// Parameter preset: none, lve25, dho_k30 or dho_ic30.
    #[arg(long)]
    pub ood: Option<OodPreset>,
    /// Lotka-Volterra delta range: delta_high or delta_low.
    #[arg(long)]
    pub lve_ranges: Option<crate::systems::LveRanges>,
    /// Output file [default: <out>/<system>.glds].
    #[arg(long, value_name = "FILE")]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Named preset applied before config and flag overrides.
    #[arg(long)]
    pub preset: Option<String>,
    /// Dataset file; a fresh dataset is generated when absent.
    #[arg(long, value_name = "FILE")]
    pub dataset: Option<PathBuf>,
    /// Trajectories generated when no dataset file is given.
    #[arg(long)]
    pub count: Option<usize>,
    /// Optimizer steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Trajectories per step.
    #[arg(long)]
    pub batch: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Path-length weight in pathmin mode.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// KL weight in kl mode.
    #[arg(long)]
    pub kl_weight: Option<f64>,
    /// Steps between validation rounds.
    #[arg(long)]
    pub val_every: Option<usize>,
    /// Stop after this many validation rounds without improvement.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Continue from resume.json in the output directory.
    #[arg(long)]
    pub resume: bool,
    /// Print validation rounds to stderr.
    #[arg(long)]
    pub verbose: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model checkpoint written by `train` (best.json).
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Dataset whose test split is evaluated; generated when absent.
    #[arg(long, value_name = "FILE")]
    pub dataset: Option<PathBuf>,
    /// Test trajectories evaluated per domain.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Extrapolation horizon; repeat for several.
    #[arg(long = "horizon")]
    pub horizons: Vec<f64>,
    /// Out-of-domain preset evaluated in addition to the test split; repeatable.
    #[arg(long)]
    pub ood: Vec<OodPreset>,
    /// IC-recovery trials; 0 skips IC recovery.
    #[arg(long)]
    pub ic_trials: Option<usize>,
    /// Test latents written to latents.csv; 0 skips the export.
    #[arg(long)]
    pub export_count: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Lotka-Volterra model checkpoint written by `train`.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Simulated (summary, parameter) training pairs.
    #[arg(long)]
    pub pairs: Option<usize>,
    /// Flow optimizer steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Test cases per (n, domain) cell.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Case index used for the posterior CSVs.
    #[arg(long)]
    pub case: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Model checkpoint written by `train`.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Dataset whose test split is encoded; generated when absent.
    #[arg(long, value_name = "FILE")]
    pub dataset: Option<PathBuf>,
    /// Number of test trajectories to project.
    #[arg(long)]
    pub count: Option<usize>,
}

/// Exit code for an error: 1 for bad input, 2 for failures while computing.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_)
        | Error::UnknownSystem(_)
        | Error::Format(_)
        | Error::Io { .. }
        | Error::EmptySequence => EXIT_USER,
        Error::NonFinite(_)
        | Error::StepBudgetExceeded(_)
        | Error::ShapeMismatch(_)
        | Error::SingularOrigin(_)
        | Error::DegenerateBatch(_) => EXIT_RUNTIME,
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USER } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn resolve_out(flag: Option<PathBuf>, cfg: &ExperimentConfig, command: &str) -> PathBuf {
    flag.or_else(|| cfg.out_dir.clone()).unwrap_or_else(|| {
        std::env::var_os(OUT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"))
            .join(command)
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn require(path: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    let p = path.ok_or_else(|| Error::InvalidArgument(format!("{what} is required")))?;
    if !p.is_file() {
        return Err(Error::InvalidArgument(format!("{what} `{}` not found", p.display())));
    }
    Ok(p)
}

/// Executes a parsed command line.
pub fn execute(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = Some(s);
    }
    match cli.command {
        Command::Generate(a) => {
            apply_generate(&mut cfg, a);
            cfg.validate()?;
            let out = resolve_out(cli.out, &cfg, "generate");
            cmd_generate(&cfg, &out)
        }
        Command::Train(a) => {
            let (resume, verbose) = (a.resume, a.verbose);
            apply_train(&mut cfg, a)?;
            cfg.validate()?;
            let out = resolve_out(cli.out, &cfg, "train");
            cmd_train(&cfg, &out, resume, verbose)
        }
        Command::Eval(a) => {
            apply_eval(&mut cfg, a);
            cfg.validate()?;
            let out = resolve_out(cli.out, &cfg, "eval");
            cmd_eval(&cfg, &out)
        }
        Command::Infer(a) => {
            apply_infer(&mut cfg, a);
            cfg.validate()?;
            let out = resolve_out(cli.out, &cfg, "infer");
            cmd_infer(&cfg, &out)
        }
        Command::Export(a) => {
            apply_export(&mut cfg, a);
            cfg.validate()?;
            let out = resolve_out(cli.out, &cfg, "export");
            cmd_export(&cfg, &out)
        }
    }
}

fn apply_generate(cfg: &mut ExperimentConfig, a: GenerateArgs) {
    let g = &mut cfg.generate;
    if let Some(v) = a.system {
        g.system = v;
    }
    if a.count.is_some() {
        g.count = a.count;
    }
    if let Some(v) = a.ood {
        g.ood = v;
    }
    if let Some(v) = a.lve_ranges {
        g.lve_ranges = v;
    }
    if a.path.is_some() {
        g.path = a.path;
    }
}

fn apply_train(cfg: &mut ExperimentConfig, a: TrainArgs) -> Result<()> {
    if let Some(name) = &a.preset {
        let preset = TrainConfig::preset(name)?;
        let dataset = cfg.train.dataset.take();
        cfg.train = TrainConfig { dataset, ..preset };
    }
    let t = &mut cfg.train;
    if a.dataset.is_some() {
        t.dataset = a.dataset;
    }
    if a.count.is_some() {
        cfg.generate.count = a.count;
    }
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = a.$f { t.$f = v; })* };
    }
    set!(steps, batch, lr, lambda, kl_weight, val_every);
    if a.patience.is_some() {
        t.patience = a.patience;
    }
    if let Some(s) = cfg.seed {
        t.seed = s;
    }
    Ok(())
}

fn apply_eval(cfg: &mut ExperimentConfig, a: EvalArgs) {
    let e = &mut cfg.eval;
    if a.checkpoint.is_some() {
        e.checkpoint = a.checkpoint;
    }
    if a.dataset.is_some() {
        e.dataset = a.dataset;
    }
    if let Some(v) = a.trials {
        e.trials = v;
    }
    if !a.horizons.is_empty() {
        e.horizons = Some(a.horizons);
    }
    for p in a.ood {
        if !e.domains.contains(&p) {
            e.domains.push(p);
        }
    }
    if let Some(v) = a.ic_trials {
        e.ic_trials = v;
    }
    if let Some(v) = a.export_count {
        e.export_count = v;
    }
}

fn apply_infer(cfg: &mut ExperimentConfig, a: InferArgs) {
    let i = &mut cfg.infer;
    if a.checkpoint.is_some() {
        i.checkpoint = a.checkpoint;
    }
    if let Some(v) = a.pairs {
        i.flow.pairs = v;
    }
    if let Some(v) = a.steps {
        i.flow.steps = v;
    }
    if let Some(v) = a.trials {
        i.flow.trials = v;
    }
    if let Some(v) = a.case {
        i.case = v;
    }
    if let Some(s) = cfg.seed {
        i.flow.seed = s;
    }
}

fn apply_export(cfg: &mut ExperimentConfig, a: ExportArgs) {
    let x = &mut cfg.export;
    if a.checkpoint.is_some() {
        x.checkpoint = a.checkpoint;
    }
    if a.dataset.is_some() {
        x.dataset = a.dataset;
    }
    if let Some(v) = a.count {
        x.count = v;
    }
}

fn data_seed(cfg: &ExperimentConfig) -> u64 {
    cfg.seed.unwrap_or(0)
}

fn base_spec(system: SystemId, cfg: &ExperimentConfig) -> SamplingSpec {
    SamplingSpec::for_system(system, cfg.generate.lve_ranges)
}

/// Loads `path`, or generates the default dataset of `system` in memory.
fn dataset_for(system: SystemId, path: Option<&Path>, cfg: &ExperimentConfig) -> Result<Dataset> {
    let ds = match path {
        Some(p) => load_dataset(p)?,
        None => {
            let count = cfg.generate.count.unwrap_or(system.default_count());
            generate_with_spec(&base_spec(system, cfg), count, data_seed(cfg))?
        }
    };
    if ds.system != system {
        return Err(Error::InvalidArgument(format!(
            "dataset holds {} but the model expects {}",
            ds.system, system
        )));
    }
    Ok(ds)
}

fn interval(values: impl Iterator<Item = f64>) -> [f64; 2] {
    values.fold([f64::INFINITY, f64::NEG_INFINITY], |[lo, hi], v| [lo.min(v), hi.max(v)])
}

fn cmd_generate(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let g = &cfg.generate;
    let count = g.count.unwrap_or(g.system.default_count());
    let spec = g.ood.apply(&base_spec(g.system, cfg))?;
    let seed = data_seed(cfg);
    let ds = generate_with_spec(&spec, count, seed)?;
    let path = match &g.path {
        Some(p) => p.clone(),
        None => {
            let stem = match g.ood {
                OodPreset::None => g.system.name().to_string(),
                p => format!("{}_{}", g.system.name(), serde_plain(&p)),
            };
            out.join(format!("{stem}.glds"))
        }
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    save_dataset(&ds, &path)?;

    let s = ds.splits();
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "system      {}", ds.system);
    let _ = writeln!(stdout, "seed        {seed}");
    let _ = writeln!(
        stdout,
        "count       {} (train {}, validation {}, test {})",
        ds.count(),
        s.train,
        s.validation,
        s.test
    );
    let names = SystemConfig::column_names(ds.system);
    let vecs: Vec<Vec<f64>> = ds.iter().map(|t| t.config.to_vec()).collect();
    for (k, name) in names.iter().enumerate() {
        let [lo, hi] = interval(vecs.iter().map(|v| v[k]));
        let _ = writeln!(stdout, "{name:<11} [{lo:.4}, {hi:.4}]");
    }
    let [lo, hi] = interval(ds.iter().map(|t| t.t_last()));
    let _ = writeln!(stdout, "t_last      [{lo:.4}, {hi:.4}]");
    let _ = writeln!(stdout, "wrote       {}", path.display());
    Ok(())
}

fn serde_plain<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn cmd_train(cfg: &ExperimentConfig, out: &Path, resume: bool, verbose: bool) -> Result<()> {
    let t = &cfg.train;
    let ds = dataset_for(t.system, t.dataset.as_deref(), cfg)?;
    create_dir(out)?;
    write_json(&out.join("config.json"), cfg)?;
    let opts = FitOptions {
        out_dir: Some(out.to_path_buf()),
        resume,
        halt_after: None,
        verbose,
    };
    let r = fit(t, &ds, &opts)?;
    println!("steps       {}", r.curve.len());
    println!("best_step   {}", r.best_step);
    println!("best_val    {:.6e}", r.best_val);
    println!("wrote       {}", out.join("best.json").display());
    Ok(())
}

struct Loaded {
    model: LatentModel,
    metric: PathMetric,
    train: TrainConfig,
}

fn load(path: Option<PathBuf>) -> Result<Loaded> {
    let p = require(path, "checkpoint")?;
    let (model, metric, train) = load_model(&p)?;
    Ok(Loaded {
        model,
        metric,
        train,
    })
}

fn cmd_eval(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let e = &cfg.eval;
    let m = load(e.checkpoint.clone())?;
    let system = m.train.system;
    let ds = dataset_for(system, e.dataset.as_deref(), cfg)?;
    let seed = cfg.seed.unwrap_or(m.train.seed);
    let mut settings = EvalSettings::for_system(system, e.trials, seed);
    settings.grid_points = e.grid_points;
    if let Some(h) = e.interp_horizon {
        settings.interp_horizon = h;
    }
    if let Some(h) = &e.horizons {
        settings.extrap_horizons = h.clone();
    }
    let predictor = ModelPredictor {
        model: &m.model,
        metric: &m.metric,
        dt: m.train.dt,
    };

    let mut reports: Vec<EvalReport> = Vec::new();
    for &domain in &e.domains {
        let items = match domain {
            OodPreset::None => ds.test.clone(),
            p => {
                let spec = p.apply(&ds.spec)?;
                let ood = generate_with_spec(&spec, e.ood_count, ds.seed)?;
                ood.iter().cloned().collect()
            }
        };
        let mut report = evaluate(&predictor, &items, &settings, &serde_plain(&domain))?;
        if e.ic_trials > 0 {
            let ic = IcSettings {
                n_points: e.ic_n_points.clone(),
                window: e.ic_window,
                trials: e.ic_trials,
                seed,
            };
            report.ic_error = ic_recovery(&predictor, &items, &ic)?;
        }
        reports.push(report);
    }

    create_dir(out)?;
    write_json(&out.join("config.json"), cfg)?;
    write_json(&out.join("eval_report.json"), &reports)?;
    let horizon = settings
        .extrap_horizons
        .iter()
        .copied()
        .fold(settings.interp_horizon, f64::max);
    write_reconstructions(
        &out.join("reconstructions.csv"),
        &predictor,
        &ds.test[..e.plot_items.min(ds.test.len())],
        horizon,
        settings.grid_points,
    )?;
    if e.export_count > 0 {
        export_latents(
            &m.model,
            &ds.test,
            e.export_count.min(ds.test.len()),
            m.train.dt,
            &out.join("latents.csv"),
        )?;
    }
    for r in &reports {
        let extrap: Vec<String> = r
            .mse_extrap
            .iter()
            .map(|h| format!("t={} {:.4e} ({:.2e})", h.horizon, h.mse.mean, h.mse.std))
            .collect();
        println!(
            "{:<9} interp t={} {:.4e} ({:.2e})  extrap {}",
            r.domain,
            r.interp_horizon,
            r.mse_interp.mean,
            r.mse_interp.std,
            extrap.join("  ")
        );
    }
    println!("wrote       {}", out.join("eval_report.json").display());
    Ok(())
}

/// Long-format plot data: `item,source,t,y0[,y1]` with source `obs`, `truth` or `pred`.
pub fn write_reconstructions<P: Predictor>(
    path: &Path,
    predictor: &P,
    items: &[crate::systems::Trajectory],
    horizon: f64,
    grid_points: usize,
) -> Result<()> {
    let dim = items.first().map_or(1, |t| t.dim());
    let cols: Vec<String> = (0..dim).map(|k| format!("y{k}")).collect();
    let mut text = format!(
        "# geodesic-lode schema {SCHEMA_VERSION}\nitem,source,t,{}\n",
        cols.join(",")
    );
    let solver = crate::systems::truth_solver();
    let mut push = |i: usize, src: &str, t: f64, y: &[f64]| {
        let ys: Vec<String> = y.iter().map(|v| v.to_string()).collect();
        text.push_str(&format!("{i},{src},{t},{}\n", ys.join(",")));
    };
    for (i, obs) in items.iter().enumerate() {
        for (t, y) in obs.times.iter().zip(&obs.values) {
            push(i, "obs", *t, y);
        }
        let grid = TimeGrid::uniform(obs.config.t_start(), horizon, grid_points)?;
        let truth = obs.config.simulate(grid.times(), &solver)?;
        let (pred, _) = predictor.predict(obs, &grid)?;
        for (t, y) in grid.times().iter().zip(&truth) {
            push(i, "truth", *t, y);
        }
        for (t, y) in grid.times().iter().zip(&pred) {
            push(i, "pred", *t, y);
        }
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_infer(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let inf = &cfg.infer;
    let m = load(inf.checkpoint.clone())?;
    if m.train.system != SystemId::LotkaVolterra {
        return Err(Error::InvalidArgument(format!(
            "inference needs a lotka_volterra model, got {}",
            m.train.system
        )));
    }
    let fc = &inf.flow;
    let dt = m.train.dt;
    let spec = SamplingSpec::lotka_volterra(inf.lve_ranges);
    let pairs = simulate_pairs(&m.model, &spec, fc, dt)?;
    let (flow, curve) = train_flow(&pairs, fc)?;
    let estimator = FlowEstimator {
        flow: &flow,
        samples: fc.posterior_samples,
    };
    let cells = inference_metrics(&estimator, &m.model, &spec, fc, dt, &[Domain::In, Domain::Out])?;
    let tail = (curve.len() / 20).max(1);
    let names = SystemConfig::column_names(SystemId::LotkaVolterra);
    let report = InferenceReport {
        schema_version: SCHEMA_VERSION,
        trials: fc.trials,
        posterior_samples: fc.posterior_samples,
        parameters: names.iter().map(|s| s.to_string()).collect(),
        cells,
        final_train_nll: Some(curve[curve.len() - tail..].iter().sum::<f64>() / tail as f64),
    };

    create_dir(out)?;
    write_json(&out.join("config.json"), cfg)?;
    let mut ck: Checkpoint = flow.to_checkpoint();
    ck.metadata
        .insert("schema_version".into(), serde_json::json!(SCHEMA_VERSION));
    ck.save(&out.join("flow.json"))?;
    write_json(&out.join("inference_report.json"), &report)?;

    let mut truth = format!("# geodesic-lode schema {SCHEMA_VERSION}\nn_points,{}\n", names.join(","));
    for &n in &fc.n_points {
        let mut rng = substream(fc.seed, Stream::Eval, 20_000 + n as u64, inf.case as u64);
        let config = spec.ranges.sample(&mut rng);
        let obs = observe(&config, n, fc.window, spec.noise_sigma, &mut rng)?;
        let ctx = summarize(&m.model, &obs, dt)?;
        let post = sample_posterior(&flow, &ctx, fc.posterior_samples, &mut rng)?;
        write_posterior_csv(&out.join(format!("posterior_samples_n{n}.csv")), names, &post)?;
        let vals: Vec<String> = config.to_vec().iter().map(|v| v.to_string()).collect();
        truth.push_str(&format!("{n},{}\n", vals.join(",")));
    }
    let tp = out.join("posterior_truth.csv");
    std::fs::write(&tp, truth).map_err(|e| Error::io(&tp, e))?;

    for c in &report.cells {
        println!(
            "n={:<3} {:<4} relative MSE {:.4} ({:.4})",
            c.n_points,
            serde_plain(&c.domain),
            c.relative_mse.mean,
            c.relative_mse.std
        );
    }
    println!("wrote       {}", out.join("inference_report.json").display());
    Ok(())
}

fn cmd_export(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let x = &cfg.export;
    let m = load(x.checkpoint.clone())?;
    let ds = dataset_for(m.train.system, x.dataset.as_deref(), cfg)?;
    create_dir(out)?;
    let path = out.join("latents.csv");
    let r = export_latents(&m.model, &ds.test, x.count.min(ds.test.len()), m.train.dt, &path)?;
    println!("points      {}", r.projection.len());
    println!("explained   {:.4} {:.4}", r.explained[0], r.explained[1]);
    println!("wrote       {}", path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn every_flag_has_help() {
        let cmd = Cli::command();
        for sub in cmd.get_subcommands() {
            for arg in sub.get_arguments() {
                let id = arg.get_id().as_str();
                if id == "help" || id == "version" {
                    continue;
                }
                let documented = arg.get_help().is_some_and(|h| !h.to_string().is_empty());
                assert!(documented, "{} --{id}", sub.get_name());
            }
        }
    }

    #[test]
    fn exit_codes_split_user_and_runtime_errors() {
        assert_eq!(exit_code(&Error::InvalidArgument("x".into())), EXIT_USER);
        assert_eq!(exit_code(&Error::UnknownSystem("x".into())), EXIT_USER);
        assert_eq!(exit_code(&Error::NonFinite("x".into())), EXIT_RUNTIME);
        assert_eq!(exit_code(&Error::StepBudgetExceeded(3)), EXIT_RUNTIME);
    }

    #[test]
    fn preset_flag_keeps_the_dataset_and_flags_win() {
        let mut cfg = ExperimentConfig::default();
        cfg.train.dataset = Some("d.glds".into());
        cfg.seed = Some(9);
        let a = TrainArgs {
            preset: Some("lve-pathmin".into()),
            dataset: None,
            count: None,
            steps: Some(10),
            batch: None,
            lr: None,
            lambda: None,
            kl_weight: None,
            val_every: None,
            patience: None,
            resume: false,
            verbose: false,
        };
        apply_train(&mut cfg, a).unwrap();
        assert_eq!(cfg.train.system, SystemId::LotkaVolterra);
        assert_eq!(cfg.train.lambda, 0.5);
        assert_eq!(cfg.train.steps, 10);
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.train.dataset, Some("d.glds".into()));
    }

    #[test]
    fn out_dir_precedence() {
        let mut cfg = ExperimentConfig::default();
        assert_eq!(
            resolve_out(Some("a".into()), &cfg, "eval"),
            PathBuf::from("a")
        );
        cfg.out_dir = Some("b".into());
        assert_eq!(resolve_out(None, &cfg, "eval"), PathBuf::from("b"));
    }
}
