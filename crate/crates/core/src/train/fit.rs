use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::json;

use super::step::{initial_metric, step_draws, train_step};
use super::TrainConfig;
use crate::diffcore::{AdamState, Checkpoint, ParamTree};
use crate::latentode::{reconstruct, LatentModel};
use crate::losses::PathMetric;
use crate::odeint::{SolveConfig, TimeGrid};
use crate::rng::{stream, Stream, StreamRng};
use crate::systems::{truth_solver, Dataset, Trajectory};
use crate::{Error, Result, SCHEMA_VERSION};

pub const METRICS_COLUMNS: &str =
    "step,recon,penalty,total,path_length,val_mse,val_extrap_mse";

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub step: usize,
    pub recon: f64,
    pub penalty: f64,
    pub total: f64,
    pub path_length: f64,
    pub val_mse: Option<f64>,
    pub val_extrap_mse: Option<f64>,
}

impl MetricRow {
    fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.step,
            self.recon,
            self.penalty,
            self.total,
            self.path_length,
            opt(self.val_mse),
            opt(self.val_extrap_mse)
        )
    }

    fn from_csv(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(Error::Format(format!("bad metrics row `{line}`")));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Format(e.to_string()));
        let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
        Ok(Self {
            step: f[0].parse().map_err(|_| Error::Format(format!("bad step `{}`", f[0])))?,
            recon: num(f[1])?,
            penalty: num(f[2])?,
            total: num(f[3])?,
            path_length: num(f[4])?,
            val_mse: opt(f[5])?,
            val_extrap_mse: opt(f[6])?,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    /// Directory for `metrics.csv`, `best.json` and `resume.json`.
    pub out_dir: Option<PathBuf>,
    /// Continue from `resume.json` in `out_dir` when present.
    pub resume: bool,
    /// Stop (as if interrupted) once this step count is reached.
    pub halt_after: Option<usize>,
    /// Progress lines on stderr.
    pub verbose: bool,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Parameters with the lowest validation MSE.
    pub best: LatentModel,
    pub best_step: usize,
    pub best_val: f64,
    /// Parameters after the last step.
    pub last: LatentModel,
    pub metric: PathMetric,
    pub curve: Vec<MetricRow>,
}

/// Validation probe with its noiseless reference values.
struct Probe {
    obs: Trajectory,
    truth_obs: Vec<Vec<f64>>,
    grid: TimeGrid,
    truth_grid: Vec<Vec<f64>>,
}

fn probes(ds: &Dataset, cfg: &TrainConfig) -> Result<Vec<Probe>> {
    let solver = truth_solver();
    ds.validation
        .iter()
        .take(cfg.val_count)
        .map(|obs| {
            let t0 = obs.config.t_start();
            let grid = TimeGrid::uniform(t0, cfg.val_horizon.max(obs.t_last()), 50)?;
            Ok(Probe {
                truth_obs: obs.config.simulate(&obs.times, &solver)?,
                truth_grid: obs.config.simulate(grid.times(), &solver)?,
                obs: obs.clone(),
                grid,
            })
        })
        .collect()
}

fn mse(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let n = a.iter().map(Vec::len).sum::<usize>().max(1) as f64;
    crate::losses::sum_squared_error(a, b).unwrap_or(f64::INFINITY) / n
}

/// Interpolation MSE at the observation times and extrapolation MSE up to
/// `val_horizon`, both against noiseless references. Divergent
/// reconstructions count as infinite error.
fn validate(model: &LatentModel, probes: &[Probe], dt: f64) -> (f64, f64) {
    if probes.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let cfg = SolveConfig::with_dt_fixed(dt);
    let (mut interp, mut extrap) = (0.0, 0.0);
    for p in probes {
        let q = TimeGrid::new(p.obs.times.clone()).expect("validated times");
        interp += match reconstruct(model, &p.obs, &q, None::<&mut StreamRng>, &cfg) {
            Ok((pred, _)) => mse(&pred.values, &p.truth_obs),
            Err(_) => f64::INFINITY,
        };
        extrap += match reconstruct(model, &p.obs, &p.grid, None::<&mut StreamRng>, &cfg) {
            Ok((pred, _)) => mse(&pred.values, &p.truth_grid),
            Err(_) => f64::INFINITY,
        };
    }
    let n = probes.len() as f64;
    (interp / n, extrap / n)
}

fn write_header(w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "# geodesic-lode schema {SCHEMA_VERSION}")?;
    writeln!(w, "{METRICS_COLUMNS}")
}

/// Reads the rows of a metrics file written by [`fit`].
pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.starts_with('#') || line.starts_with("step") || line.is_empty() {
            continue;
        }
        rows.push(MetricRow::from_csv(&line)?);
    }
    Ok(rows)
}

struct State {
    model: LatentModel,
    opt: AdamState,
    metric: PathMetric,
    next_step: usize,
    best: ParamTree,
    best_step: usize,
    best_val: f64,
    stale_rounds: usize,
}

fn save_resume(path: &Path, s: &State, cfg: &TrainConfig) -> Result<()> {
    let mut ck = s.model.to_checkpoint([
        ("config".to_string(), json!(cfg)),
        ("next_step".to_string(), json!(s.next_step)),
        ("adam_step".to_string(), json!(s.opt.step)),
        ("best_step".to_string(), json!(s.best_step)),
        ("best_val".to_string(), json!(s.best_val)),
        ("stale_rounds".to_string(), json!(s.stale_rounds)),
    ]);
    ck.push_vector("adam.m", &s.opt.m);
    ck.push_vector("adam.v", &s.opt.v);
    ck.push_vector("metric.sigma", &s.metric.sigma_diag);
    ck.push_tree("best", &s.best);
    ck.save(path)
}

fn meta<T: serde::de::DeserializeOwned>(ck: &Checkpoint, key: &str) -> Result<T> {
    let v = ck
        .metadata
        .get(key)
        .cloned()
        .ok_or_else(|| Error::Format(format!("resume checkpoint lacks `{key}`")))?;
    serde_json::from_value(v).map_err(|e| Error::Format(e.to_string()))
}

fn load_resume(path: &Path, cfg: &TrainConfig) -> Result<State> {
    let ck = Checkpoint::load(path)?;
    let saved: TrainConfig = meta(&ck, "config")?;
    if &saved != cfg {
        return Err(Error::InvalidArgument(
            "resume checkpoint was written with a different configuration".into(),
        ));
    }
    let model = LatentModel::from_checkpoint(&ck)?;
    let best = ck.tree("best", model.params().layout())?;
    let metric = PathMetric {
        sigma_diag: ck.vector("metric.sigma")?.to_vec(),
        floor: crate::losses::SIGMA_FLOOR,
    };
    let opt = AdamState {
        m: ck.vector("adam.m")?.to_vec(),
        v: ck.vector("adam.v")?.to_vec(),
        step: meta(&ck, "adam_step")?,
    };
    Ok(State {
        model,
        opt,
        metric,
        next_step: meta(&ck, "next_step")?,
        best,
        best_step: meta(&ck, "best_step")?,
        // JSON has no infinity; a missing best is stored as null
        best_val: meta::<Option<f64>>(&ck, "best_val")?.unwrap_or(f64::INFINITY),
        stale_rounds: meta(&ck, "stale_rounds")?,
    })
}

/// Checkpoint of a trained model with the metric and settings needed for evaluation.
pub fn model_checkpoint(model: &LatentModel, metric: &PathMetric, cfg: &TrainConfig) -> Checkpoint {
    let mut ck = model.to_checkpoint([
        ("config".to_string(), json!(cfg)),
        ("lambda".to_string(), json!(cfg.lambda)),
        ("schema_version".to_string(), json!(SCHEMA_VERSION)),
    ]);
    ck.push_vector("metric.sigma", &metric.sigma_diag);
    ck
}

/// Model, metric and training configuration from a [`model_checkpoint`] file.
pub fn load_model(path: &Path) -> Result<(LatentModel, PathMetric, TrainConfig)> {
    let ck = Checkpoint::load(path)?;
    let model = LatentModel::from_checkpoint(&ck)?;
    let cfg: TrainConfig = meta(&ck, "config")?;
    let metric = PathMetric {
        sigma_diag: ck.vector("metric.sigma")?.to_vec(),
        floor: crate::losses::SIGMA_FLOOR,
    };
    Ok((model, metric, cfg))
}

/// Trains a latent ODE on `ds.train`, validating on `ds.validation` only.
pub fn fit(cfg: &TrainConfig, ds: &Dataset, opts: &FitOptions) -> Result<FitResult> {
    cfg.validate()?;
    if ds.system != cfg.system {
        return Err(Error::InvalidArgument(format!(
            "dataset holds {} trajectories, configuration expects {}",
            ds.system, cfg.system
        )));
    }
    if ds.train.is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    let probes = probes(ds, cfg)?;
    let resume_path = opts.out_dir.as_ref().map(|d| d.join("resume.json"));
    let metrics_path = opts.out_dir.as_ref().map(|d| d.join("metrics.csv"));
    if let Some(d) = &opts.out_dir {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }

    let resumed = match &resume_path {
        Some(p) if opts.resume && p.exists() => Some(load_resume(p, cfg)?),
        _ => None,
    };
    let mut curve = match (&resumed, &metrics_path) {
        (Some(s), Some(p)) => {
            let mut rows = read_metrics(p)?;
            rows.retain(|r| r.step < s.next_step);
            rows
        }
        _ => Vec::new(),
    };
    let mut st = match resumed {
        Some(s) => s,
        None => {
            let mut init_rng = stream(cfg.seed, Stream::Init, 0);
            let model = LatentModel::new(cfg.model_spec(), &mut init_rng)?;
            let (idx, eps) = step_draws(&model, cfg, ds.train.len(), 0);
            let batch: Vec<&Trajectory> = idx.iter().map(|&i| &ds.train[i]).collect();
            let metric = initial_metric(&model, &batch, &eps, cfg)?;
            State {
                opt: AdamState::new(model.params()),
                best: model.params().clone(),
                model,
                metric,
                next_step: 0,
                best_step: 0,
                best_val: f64::INFINITY,
                stale_rounds: 0,
            }
        }
    };

    let mut writer = match &metrics_path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?);
            write_header(&mut w).map_err(|e| Error::io(p, e))?;
            for r in &curve {
                writeln!(w, "{}", r.to_csv()).map_err(|e| Error::io(p, e))?;
            }
            Some(w)
        }
        None => None,
    };

    let stop_at = opts.halt_after.unwrap_or(cfg.steps).min(cfg.steps);
    while st.next_step < stop_at {
        let step = st.next_step;
        let (idx, eps) = step_draws(&st.model, cfg, ds.train.len(), step);
        let batch: Vec<&Trajectory> = idx.iter().map(|&i| &ds.train[i]).collect();
        let out = train_step(&mut st.model, &batch, &eps, &st.metric, &mut st.opt, cfg)
            .map_err(|e| match e {
                Error::NonFinite(w) => Error::NonFinite(format!(
                    "{w} at step {step}, training indices {idx:?}"
                )),
                other => other,
            })?;
        st.metric = out.metric;
        st.next_step = step + 1;
        let last = st.next_step == cfg.steps;
        let mut row = MetricRow {
            step,
            recon: out.loss.recon,
            penalty: out.loss.penalty,
            total: out.loss.total,
            path_length: out.path_length,
            val_mse: None,
            val_extrap_mse: None,
        };
        let mut stop = false;
        if st.next_step % cfg.val_every == 0 || last {
            let (vi, ve) = validate(&st.model, &probes, cfg.dt);
            row.val_mse = Some(vi);
            row.val_extrap_mse = Some(ve);
            if vi < st.best_val {
                st.best_val = vi;
                st.best_step = st.next_step;
                st.best = st.model.params().clone();
                st.stale_rounds = 0;
            } else {
                st.stale_rounds += 1;
            }
            stop = cfg.patience.is_some_and(|p| st.stale_rounds >= p);
            if opts.verbose {
                eprintln!(
                    "step {:>6}  recon {:.4e}  penalty {:.4e}  path {:.4e}  val {:.4e}  extrap {:.4e}",
                    st.next_step, row.recon, row.penalty, row.path_length, vi, ve
                );
            }
        }
        if let (Some(w), Some(p)) = (writer.as_mut(), &metrics_path) {
            writeln!(w, "{}", row.to_csv()).map_err(|e| Error::io(p, e))?;
        }
        let checkpoint_now = row.val_mse.is_some();
        curve.push(row);
        if checkpoint_now {
            if let (Some(w), Some(p)) = (writer.as_mut(), &metrics_path) {
                w.flush().map_err(|e| Error::io(p, e))?;
            }
            if let Some(p) = &resume_path {
                save_resume(p, &st, cfg)?;
            }
        }
        if stop {
            break;
        }
    }
    if let (Some(w), Some(p)) = (writer.as_mut(), &metrics_path) {
        w.flush().map_err(|e| Error::io(p, e))?;
    }
    if let Some(p) = &resume_path {
        save_resume(p, &st, cfg)?;
    }

    let mut best = st.model.clone();
    if st.best_val.is_finite() {
        best.set_params(st.best.clone())?;
    } else {
        st.best_step = st.next_step;
    }
    if let Some(d) = &opts.out_dir {
        let mut ck = model_checkpoint(&best, &st.metric, cfg);
        ck.metadata.insert("best_step".into(), json!(st.best_step));
        ck.save(&d.join("best.json"))?;
    }
    Ok(FitResult {
        best,
        best_step: st.best_step,
        best_val: st.best_val,
        last: st.model,
        metric: st.metric,
        curve,
    })
}
