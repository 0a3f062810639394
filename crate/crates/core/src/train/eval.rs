use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::latentode::{reconstruct, LatentModel};
use crate::losses::{path_length_points, PathMetric};
use crate::odeint::{SolveConfig, TimeGrid};
use crate::rng::{stream, substream, Stream, StreamRng};
use crate::systems::{sample_times, truth_solver, SystemId, Trajectory};
use crate::{Error, Result, SCHEMA_VERSION};

/// Predictions at the query times and, when available, the latent states.
pub type Prediction = (Vec<Vec<f64>>, Option<Vec<Vec<f64>>>);

/// Anything that maps an observed sequence to predictions at query times.
pub trait Predictor: Sync {
    /// Predicted observations at `query`, plus the latent states when the
    /// predictor has them.
    fn predict(
        &self,
        obs: &Trajectory,
        query: &TimeGrid,
    ) -> Result<Prediction>;

    /// Path length of a latent path, when defined.
    fn path_length(&self, _latents: &[Vec<f64>]) -> Option<f64> {
        None
    }
}

/// A trained latent ODE evaluated with the mean latent state.
pub struct ModelPredictor<'a> {
    pub model: &'a LatentModel,
    pub metric: &'a PathMetric,
    pub dt: f64,
}

impl Predictor for ModelPredictor<'_> {
    fn predict(
        &self,
        obs: &Trajectory,
        query: &TimeGrid,
    ) -> Result<Prediction> {
        let cfg = SolveConfig::with_dt_fixed(self.dt);
        let (pred, zs) = reconstruct(self.model, obs, query, None::<&mut StreamRng>, &cfg)?;
        Ok((pred.values, Some(zs)))
    }

    fn path_length(&self, latents: &[Vec<f64>]) -> Option<f64> {
        path_length_points(latents, self.metric).ok()
    }
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonStat {
    pub horizon: f64,
    pub mse: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcStat {
    pub n_points: usize,
    pub mse: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    /// End of the interpolation grid (the training observation range).
    pub interp_horizon: f64,
    pub extrap_horizons: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    /// Query points per horizon grid.
    pub grid_points: usize,
}

impl EvalSettings {
    pub fn for_system(id: SystemId, trials: usize, seed: u64) -> Self {
        let (interp, extrap) = match id {
            SystemId::Dho => (20.0, vec![90.0]),
            SystemId::LaneEmden => (5.0, vec![7.0]),
            SystemId::LotkaVolterra => (25.0, vec![50.0]),
        };
        Self {
            interp_horizon: interp,
            extrap_horizons: extrap,
            trials,
            seed,
            grid_points: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub system: SystemId,
    pub trials: usize,
    pub grid_points: usize,
    pub interp_horizon: f64,
    pub mse_interp: Stat,
    pub mse_extrap: Vec<HorizonStat>,
    /// Mean latent path length over the interpolation grid; `None` when the
    /// predictor has no latent path.
    pub path_length_mean: Option<f64>,
    pub ic_error: Vec<IcStat>,
    /// Label of the parameter preset the test items were drawn from.
    pub domain: String,
}

/// `trials` item indices from `0..n`: without replacement when possible.
fn pick_items(n: usize, trials: usize, rng: &mut StreamRng) -> Vec<usize> {
    if trials <= n {
        sample(rng, n, trials).into_vec()
    } else {
        (0..trials).map(|_| rng.random_range(0..n)).collect()
    }
}

fn check(items: &[Trajectory], trials: usize) -> Result<()> {
    if items.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation items".into()));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    Ok(())
}

fn mean_sq(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<f64> {
    let n = truth.iter().map(Vec::len).sum::<usize>();
    if n == 0 {
        return Err(Error::InvalidArgument("empty prediction".into()));
    }
    Ok(crate::losses::sum_squared_error(pred, truth)? / n as f64)
}

/// Reconstruction MSE against noiseless re-simulated trajectories on uniform
/// grids from the system start to each horizon.
pub fn evaluate<P: Predictor>(
    predictor: &P,
    items: &[Trajectory],
    settings: &EvalSettings,
    domain: &str,
) -> Result<EvalReport> {
    check(items, settings.trials)?;
    if settings.grid_points < 2 {
        return Err(Error::InvalidArgument("grid_points must be at least 2".into()));
    }
    let picked = pick_items(
        items.len(),
        settings.trials,
        &mut stream(settings.seed, Stream::Eval, 0),
    );
    let solver = truth_solver();
    let per_trial: Vec<(f64, Vec<f64>, Option<f64>)> = picked
        .par_iter()
        .map(|&i| {
            let obs = &items[i];
            let t0 = obs.config.t_start();
            let run = |h: f64| -> Result<(f64, Option<Vec<Vec<f64>>>)> {
                let grid = TimeGrid::uniform(t0, h, settings.grid_points)?;
                let truth = obs.config.simulate(grid.times(), &solver)?;
                let (pred, zs) = predictor.predict(obs, &grid)?;
                Ok((mean_sq(&pred, &truth)?, zs))
            };
            let (interp, zs) = run(settings.interp_horizon)?;
            let extrap = settings
                .extrap_horizons
                .iter()
                .map(|&h| run(h).map(|r| r.0))
                .collect::<Result<Vec<_>>>()?;
            let pl = zs.and_then(|z| predictor.path_length(&z));
            Ok((interp, extrap, pl))
        })
        .collect::<Result<_>>()?;

    let interp: Vec<f64> = per_trial.iter().map(|r| r.0).collect();
    let mse_extrap = settings
        .extrap_horizons
        .iter()
        .enumerate()
        .map(|(k, &h)| HorizonStat {
            horizon: h,
            mse: Stat::of(&per_trial.iter().map(|r| r.1[k]).collect::<Vec<_>>()),
        })
        .collect();
    let pls: Option<Vec<f64>> = per_trial.iter().map(|r| r.2).collect();
    Ok(EvalReport {
        schema_version: SCHEMA_VERSION,
        system: items[0].config.id(),
        trials: settings.trials,
        grid_points: settings.grid_points,
        interp_horizon: settings.interp_horizon,
        mse_interp: Stat::of(&interp),
        mse_extrap,
        path_length_mean: pls.map(|p| Stat::of(&p).mean),
        ic_error: Vec::new(),
        domain: domain.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcSettings {
    pub n_points: Vec<usize>,
    pub window: (f64, f64),
    pub trials: usize,
    pub seed: u64,
}

impl Default for IcSettings {
    fn default() -> Self {
        Self {
            n_points: vec![3, 5, 10, 20, 50],
            window: (5.0, 60.0),
            trials: 128,
            seed: 0,
        }
    }
}

/// Initial-condition error from `n` noisy points drawn uniformly in a window.
///
/// Observation times and noise depend only on `(seed, trial, n)`, so two
/// predictors evaluated with the same settings see identical inputs.
pub fn ic_recovery<P: Predictor>(
    predictor: &P,
    items: &[Trajectory],
    settings: &IcSettings,
) -> Result<Vec<IcStat>> {
    check(items, settings.trials)?;
    let (lo, hi) = settings.window;
    if !(lo < hi) || settings.n_points.contains(&0) {
        return Err(Error::InvalidArgument(
            "IC recovery needs lo < hi and n_points ≥ 1".into(),
        ));
    }
    let picked = pick_items(
        items.len(),
        settings.trials,
        &mut stream(settings.seed, Stream::Eval, 1),
    );
    let solver = truth_solver();
    settings
        .n_points
        .iter()
        .map(|&n| {
            let errs: Vec<f64> = picked
                .par_iter()
                .enumerate()
                .map(|(trial, &i)| {
                    let item = &items[i];
                    let mut rng = substream(settings.seed, Stream::Eval, 2 + n as u64, trial as u64);
                    let lo = lo.max(item.config.t_start());
                    let times = sample_times(&mut rng, n, lo, hi);
                    let mut values = item.config.simulate(&times, &solver)?;
                    if item.noise_sigma > 0.0 {
                        let noise = Normal::new(0.0, item.noise_sigma)
                            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
                        values.iter_mut().flatten().for_each(|v| *v += noise.sample(&mut rng));
                    }
                    let obs = Trajectory::new(times, values, item.config, item.noise_sigma)?;
                    let query = TimeGrid::new(vec![item.config.t_start()])?;
                    let (pred, _) = predictor.predict(&obs, &query)?;
                    mean_sq(&pred, &[item.config.initial_observation()])
                })
                .collect::<Result<_>>()?;
            Ok(IcStat {
                n_points: n,
                mse: Stat::of(&errs),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::generate_dataset;

    struct Oracle;

    impl Predictor for Oracle {
        fn predict(
            &self,
            obs: &Trajectory,
            query: &TimeGrid,
        ) -> Result<Prediction> {
            Ok((obs.config.simulate(query.times(), &truth_solver())?, None))
        }
    }

    struct Zero;

    impl Predictor for Zero {
        fn predict(
            &self,
            obs: &Trajectory,
            query: &TimeGrid,
        ) -> Result<Prediction> {
            Ok((vec![vec![0.0; obs.dim()]; query.len()], None))
        }
    }

    #[test]
    fn stat_is_population_moments() {
        let s = Stat::of(&[1.0, 3.0]);
        assert_eq!(s, Stat { mean: 2.0, std: 1.0 });
    }

    #[test]
    fn oracle_has_zero_error_and_one_row_per_horizon() {
        let ds = generate_dataset(SystemId::Dho, 20, 3).unwrap();
        let mut s = EvalSettings::for_system(SystemId::Dho, 4, 1);
        s.extrap_horizons = vec![30.0, 60.0, 90.0];
        s.grid_points = 50;
        let r = evaluate(&Oracle, &ds.test, &s, "in").unwrap();
        assert_eq!(r.mse_extrap.len(), 3);
        assert_eq!(r.mse_interp.mean, 0.0);
        assert!(r.mse_extrap.iter().all(|h| h.mse.mean == 0.0));
        assert_eq!(r.path_length_mean, None);
    }

    #[test]
    fn zero_predictor_error_is_mean_signal_energy() {
        let ds = generate_dataset(SystemId::Dho, 10, 5).unwrap();
        let s = EvalSettings {
            interp_horizon: 20.0,
            extrap_horizons: vec![],
            trials: 1,
            seed: 2,
            grid_points: 3,
        };
        let r = evaluate(&Zero, &ds.test, &s, "in").unwrap();
        let item = &ds.test[0];
        let truth = item.config.simulate(&[0.0, 10.0, 20.0], &truth_solver()).unwrap();
        let energy: f64 = truth.iter().flatten().map(|v| v * v).sum::<f64>() / 6.0;
        assert!((r.mse_interp.mean - energy).abs() < 1e-12);
    }

    #[test]
    fn ic_oracle_is_exact_and_deterministic() {
        let ds = generate_dataset(SystemId::Dho, 20, 4).unwrap();
        let s = IcSettings {
            trials: 6,
            seed: 9,
            ..Default::default()
        };
        let a = ic_recovery(&Oracle, &ds.test, &s).unwrap();
        assert_eq!(a.len(), 5);
        assert!(a.iter().all(|r| r.mse.mean < 1e-12));
        let b = ic_recovery(&Zero, &ds.test, &s).unwrap();
        let c = ic_recovery(&Zero, &ds.test, &s).unwrap();
        assert_eq!(b, c);
    }

    #[test]
    fn zero_trials_are_rejected() {
        let ds = generate_dataset(SystemId::Dho, 10, 5).unwrap();
        let s = EvalSettings::for_system(SystemId::Dho, 0, 0);
        assert!(evaluate(&Oracle, &ds.test, &s, "in").is_err());
    }
}
