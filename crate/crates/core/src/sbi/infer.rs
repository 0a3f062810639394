use std::io::Write;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::flow::{FlowModel, FlowSpec, Standardizer};
use crate::diffcore::{adam_update, grad, AdamState, GradTree, Tape};
use crate::latentode::{encode, LatentModel};
use crate::rng::{stream, substream, Stream, StreamRng};
use crate::systems::{data_solver, sample_times, SamplingSpec, SystemConfig, Trajectory};
use crate::train::Stat;
use crate::{Error, Result, SCHEMA_VERSION};

/// Settings of the flow experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    /// Observation counts; training pairs draw uniformly from this list.
    pub n_points: Vec<usize>,
    /// Observation window.
    pub window: (f64, f64),
    /// Simulated (context, parameter) pairs used to train the flow.
    pub pairs: usize,
    pub layers: usize,
    pub hidden: Vec<usize>,
    pub s_max: f64,
    pub lr: f64,
    pub batch: usize,
    pub steps: usize,
    /// Draws per posterior.
    pub posterior_samples: usize,
    /// Test cases per (n, domain) cell.
    pub trials: usize,
    /// Relative widening of the rate bounds for the out-of-domain cells.
    pub ood_widen: f64,
    pub seed: u64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            n_points: vec![5, 10, 20],
            window: (0.0, 15.0),
            pairs: 10_000,
            layers: 5,
            hidden: vec![64, 64],
            s_max: 3.0,
            lr: 1e-3,
            batch: 128,
            steps: 5_000,
            posterior_samples: 256,
            trials: 256,
            ood_widen: 0.5,
            seed: 0,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.n_points.is_empty() || self.n_points.contains(&0) {
            return bad("n_points must be a nonempty list of positive counts");
        }
        if !(self.window.0 < self.window.1) {
            return bad("window must satisfy lo < hi");
        }
        if self.pairs == 0 || self.batch == 0 || self.posterior_samples == 0 || self.trials == 0 {
            return bad("pairs, batch, posterior_samples and trials must be positive");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(self.ood_widen >= 0.0 && self.ood_widen < 1.0) {
            return bad("ood_widen must lie in [0, 1)");
        }
        Ok(())
    }
}

/// One simulated training or test case.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub context: Vec<f64>,
    pub theta: Vec<f64>,
    pub n_points: usize,
}

/// `n` noisy observations of `config` at uniform times in `window`.
pub fn observe<R: Rng + ?Sized>(
    config: &SystemConfig,
    n: usize,
    window: (f64, f64),
    noise_sigma: f64,
    rng: &mut R,
) -> Result<Trajectory> {
    let lo = window.0.max(config.t_start());
    let times = sample_times(rng, n, lo, window.1);
    let mut values = config.simulate(&times, &data_solver())?;
    if noise_sigma > 0.0 {
        let noise =
            Normal::new(0.0, noise_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        values.iter_mut().flatten().for_each(|v| *v += noise.sample(rng));
    }
    Trajectory::new(times, values, *config, noise_sigma)
}

/// Latent summary of an observation sequence: the encoder's mean initial state.
pub fn summarize(model: &LatentModel, obs: &Trajectory, dt: f64) -> Result<Vec<f64>> {
    encode(model, obs, None::<&mut StreamRng>, dt).map(|r| r.0)
}

fn draw_pair(
    model: &LatentModel,
    spec: &SamplingSpec,
    cfg: &InferenceConfig,
    dt: f64,
    n: usize,
    rng: &mut StreamRng,
) -> Result<Pair> {
    let config = spec.ranges.sample(rng);
    let obs = observe(&config, n, cfg.window, spec.noise_sigma, rng)?;
    Ok(Pair {
        context: summarize(model, &obs, dt)?,
        theta: config.to_vec(),
        n_points: n,
    })
}

/// Training pairs; pair `i` depends only on `(cfg.seed, i)`.
pub fn simulate_pairs(
    model: &LatentModel,
    spec: &SamplingSpec,
    cfg: &InferenceConfig,
    dt: f64,
) -> Result<Vec<Pair>> {
    cfg.validate()?;
    (0..cfg.pairs)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(cfg.seed, Stream::Flow, i as u64);
            let n = *cfg.n_points.choose(&mut rng).expect("validated nonempty");
            draw_pair(model, spec, cfg, dt, n, &mut rng)
        })
        .collect()
}

/// Fits the flow by minimizing the mean NLL of standardized targets; returns
/// the flow and the per-step mean NLL.
pub fn train_flow(pairs: &[Pair], cfg: &InferenceConfig) -> Result<(FlowModel, Vec<f64>)> {
    cfg.validate()?;
    let first = pairs
        .first()
        .ok_or_else(|| Error::InvalidArgument("no training pairs".into()))?;
    let thetas: Vec<Vec<f64>> = pairs.iter().map(|p| p.theta.clone()).collect();
    let contexts: Vec<Vec<f64>> = pairs.iter().map(|p| p.context.clone()).collect();
    let spec = FlowSpec {
        dim: first.theta.len(),
        context_dim: first.context.len(),
        layers: cfg.layers,
        hidden: cfg.hidden.clone(),
        s_max: cfg.s_max,
    };
    let mut flow = FlowModel::new(spec, &mut substream(cfg.seed, Stream::Flow, 0, 1))?;
    flow.target = Standardizer::fit(&thetas)?;
    flow.context = Standardizer::fit(&contexts)?;
    let xs: Vec<Vec<f64>> = thetas.iter().map(|t| flow.target.forward(t)).collect();
    let cs: Vec<Vec<f64>> = contexts.iter().map(|c| flow.context.forward(c)).collect();

    let mut opt = AdamState::new(flow.params());
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut rng = substream(cfg.seed, Stream::Flow, step as u64, 2);
        let idx: Vec<usize> = (0..cfg.batch.min(pairs.len()))
            .map(|_| rng.random_range(0..pairs.len()))
            .collect();
        let items: Vec<(f64, GradTree)> = idx
            .par_iter()
            .map(|&i| grad(flow.params(), |t: &mut Tape<'_>| Ok(flow.nll_on(t, &xs[i], &cs[i]))))
            .collect::<Result<_>>()
            .map_err(|e| match e {
                Error::NonFinite(w) => Error::NonFinite(format!("{w} at flow step {step}")),
                other => other,
            })?;
        let mut g = GradTree::zeros_like(flow.params());
        let scale = 1.0 / items.len() as f64;
        let mut loss = 0.0;
        for (l, gi) in &items {
            loss += l * scale;
            g.accumulate(gi, scale)?;
        }
        adam_update(flow.params_mut(), &g, &mut opt, cfg.lr)?;
        curve.push(loss);
    }
    Ok((flow, curve))
}

/// Posterior draws in original parameter units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSamples {
    pub samples: Vec<Vec<f64>>,
    pub context: Vec<f64>,
}

impl PosteriorSamples {
    pub fn mean(&self) -> Vec<f64> {
        let n = self.samples.len() as f64;
        let d = self.samples[0].len();
        (0..d)
            .map(|j| self.samples.iter().map(|s| s[j]).sum::<f64>() / n)
            .collect()
    }
}

/// Draws `n` base samples, inverts the flow and undoes the standardization.
pub fn sample_posterior<R: Rng + ?Sized>(
    flow: &FlowModel,
    context: &[f64],
    n: usize,
    rng: &mut R,
) -> Result<PosteriorSamples> {
    if n == 0 {
        return Err(Error::InvalidArgument("posterior needs at least one draw".into()));
    }
    let ctx = flow.context.forward(context);
    let dim = flow.spec().dim;
    let samples = (0..n)
        .map(|_| {
            let u: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
            let x = flow.target.inverse(&flow.inverse(&u, &ctx)?);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("posterior sample".into()));
            }
            Ok(x)
        })
        .collect::<Result<_>>()?;
    Ok(PosteriorSamples {
        samples,
        context: context.to_vec(),
    })
}

/// Mean over coordinates of `((estimate - truth) / truth)²`.
pub fn relative_mse(estimate: &[f64], truth: &[f64]) -> f64 {
    estimate
        .iter()
        .zip(truth)
        .map(|(e, t)| ((e - t) / t).powi(2))
        .sum::<f64>()
        / truth.len() as f64
}

/// Anything that turns a latent summary into a parameter estimate.
pub trait Estimator: Sync {
    fn estimate(&self, context: &[f64], rng: &mut StreamRng) -> Result<Vec<f64>>;
}

/// Posterior mean of a trained flow.
pub struct FlowEstimator<'a> {
    pub flow: &'a FlowModel,
    pub samples: usize,
}

impl Estimator for FlowEstimator<'_> {
    fn estimate(&self, context: &[f64], rng: &mut StreamRng) -> Result<Vec<f64>> {
        Ok(sample_posterior(self.flow, context, self.samples, rng)?.mean())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    In,
    Out,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceCell {
    pub n_points: usize,
    pub domain: Domain,
    pub relative_mse: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub schema_version: u32,
    pub trials: usize,
    pub posterior_samples: usize,
    pub parameters: Vec<String>,
    pub cells: Vec<InferenceCell>,
    /// Mean NLL over the last 5% of flow training steps.
    pub final_train_nll: Option<f64>,
}

/// Sampling ranges of a domain: training ranges, or rates widened by `widen`.
pub fn domain_spec(spec: &SamplingSpec, domain: Domain, widen: f64) -> Result<SamplingSpec> {
    match domain {
        Domain::In => Ok(spec.clone()),
        Domain::Out => spec.lve_widen(widen),
    }
}

/// Relative MSE of the estimate for every `(n, domain)` cell.
///
/// Test parameters, times and noise depend only on `(cfg.seed, n, domain,
/// trial)`, so two latent models are compared on identical cases.
pub fn inference_metrics<E: Estimator>(
    estimator: &E,
    model: &LatentModel,
    spec: &SamplingSpec,
    cfg: &InferenceConfig,
    dt: f64,
    domains: &[Domain],
) -> Result<Vec<InferenceCell>> {
    cfg.validate()?;
    let mut cells = Vec::new();
    for &domain in domains {
        let dspec = domain_spec(spec, domain, cfg.ood_widen)?;
        for &n in &cfg.n_points {
            let key = 10_000 + 1_000 * (domain == Domain::Out) as u64 + n as u64;
            let errs: Vec<f64> = (0..cfg.trials)
                .into_par_iter()
                .map(|trial| {
                    let mut rng = substream(cfg.seed, Stream::Eval, key, trial as u64);
                    let pair = draw_pair(model, &dspec, cfg, dt, n, &mut rng)?;
                    let est = estimator.estimate(&pair.context, &mut rng)?;
                    Ok(relative_mse(&est, &pair.theta))
                })
                .collect::<Result<_>>()?;
            cells.push(InferenceCell {
                n_points: n,
                domain,
                relative_mse: Stat::of(&errs),
            });
        }
    }
    Ok(cells)
}

/// `posterior_samples.csv`: one row per draw with the parameter names as header.
pub fn write_posterior_csv(path: &Path, names: &[&str], post: &PosteriorSamples) -> Result<()> {
    let mut out = format!("# geodesic-lode schema {SCHEMA_VERSION}\n{}\n", names.join(","));
    for s in &post.samples {
        let row: Vec<String> = s.iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::CellKind;
    use crate::latentode::ModelSpec;
    use crate::systems::LveRanges;
    use rand::SeedableRng;

    fn tiny_model() -> LatentModel {
        let spec = ModelSpec {
            feature_dim: 2,
            hidden_dim: 4,
            latent_dim: 3,
            dynamics_hidden: vec![6],
            cell: CellKind::Rnn,
            variational: false,
        };
        LatentModel::new(spec, &mut rand_chacha::ChaCha8Rng::seed_from_u64(3)).unwrap()
    }

    fn small_cfg() -> InferenceConfig {
        InferenceConfig {
            pairs: 64,
            hidden: vec![8],
            layers: 2,
            steps: 0,
            batch: 16,
            posterior_samples: 50,
            trials: 4,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn relative_mse_of_truth_is_zero() {
        assert_eq!(relative_mse(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(relative_mse(&[2.0, 2.0], &[1.0, 2.0]), 0.5);
    }

    /// Reads the truth back out of the context, which here is the parameter vector.
    struct Exact;

    impl Estimator for Exact {
        fn estimate(&self, context: &[f64], _: &mut StreamRng) -> Result<Vec<f64>> {
            Ok(context.to_vec())
        }
    }

    #[test]
    fn perfect_estimator_scores_zero_in_every_cell() {
        let model = tiny_model();
        let spec = SamplingSpec::lotka_volterra(LveRanges::DeltaLow);
        let cfg = small_cfg();
        let mut rng = substream(1, Stream::Eval, 0, 0);
        let pair = draw_pair(&model, &spec, &cfg, 0.1, 5, &mut rng).unwrap();
        let est = Exact.estimate(&pair.theta, &mut rng).unwrap();
        assert_eq!(relative_mse(&est, &pair.theta), 0.0);
    }

    #[test]
    fn report_has_one_cell_per_n_and_domain() {
        struct Const;
        impl Estimator for Const {
            fn estimate(&self, _: &[f64], _: &mut StreamRng) -> Result<Vec<f64>> {
                Ok(vec![2.0, 2.0, 0.55, 0.25, 3.5, 3.5])
            }
        }
        let model = tiny_model();
        let spec = SamplingSpec::lotka_volterra(LveRanges::DeltaLow);
        let cells =
            inference_metrics(&Const, &model, &spec, &small_cfg(), 0.1, &[Domain::In, Domain::Out])
                .unwrap();
        assert_eq!(cells.len(), 6);
        assert_eq!(
            cells.iter().map(|c| (c.n_points, c.domain)).collect::<Vec<_>>(),
            vec![
                (5, Domain::In),
                (10, Domain::In),
                (20, Domain::In),
                (5, Domain::Out),
                (10, Domain::Out),
                (20, Domain::Out)
            ]
        );
        assert!(cells.iter().all(|c| c.relative_mse.mean > 0.0 && c.relative_mse.std >= 0.0));
        let again =
            inference_metrics(&Const, &model, &spec, &small_cfg(), 0.1, &[Domain::In, Domain::Out])
                .unwrap();
        assert_eq!(cells, again);
    }

    #[test]
    fn observations_stay_in_the_window() {
        let spec = SamplingSpec::lotka_volterra(LveRanges::DeltaLow);
        let mut rng = stream(1, Stream::Eval, 0);
        let c = spec.ranges.sample(&mut rng);
        let obs = observe(&c, 20, (0.0, 15.0), 0.05, &mut rng).unwrap();
        assert_eq!(obs.len(), 20);
        assert!(obs.times.iter().all(|&t| (0.0..=15.0).contains(&t)));
    }

    #[test]
    fn identity_flow_samples_are_standard_normal() {
        let flow = FlowModel::new(FlowSpec::new(6, 2), &mut rand_chacha::ChaCha8Rng::seed_from_u64(1)).unwrap();
        let n = 4000;
        let post = sample_posterior(&flow, &[0.0, 0.0], n, &mut stream(2, Stream::Eval, 0)).unwrap();
        assert_eq!(post.samples.len(), n);
        for m in post.mean() {
            assert!(m.abs() < 3.0 / (n as f64).sqrt());
        }
        let one = sample_posterior(&flow, &[0.0, 0.0], 1, &mut stream(2, Stream::Eval, 1)).unwrap();
        assert_eq!(one.samples.len(), 1);
        assert_eq!(one.samples[0].len(), 6);
    }

    #[test]
    fn flow_training_lowers_nll_and_is_deterministic() {
        let model = tiny_model();
        let spec = SamplingSpec::lotka_volterra(LveRanges::DeltaLow);
        let mut cfg = small_cfg();
        cfg.pairs = 256;
        cfg.steps = 500;
        cfg.hidden = vec![16, 16];
        cfg.layers = 3;
        let pairs = simulate_pairs(&model, &spec, &cfg, 0.1).unwrap();
        let (flow, curve) = train_flow(&pairs, &cfg).unwrap();
        let ma: Vec<f64> = curve.windows(20).map(|w| w.iter().sum::<f64>() / 20.0).collect();
        assert!(ma.last().unwrap() < &ma[0]);
        let (flow2, curve2) = train_flow(&pairs, &cfg).unwrap();
        assert_eq!(curve, curve2);
        assert_eq!(flow.params(), flow2.params());
    }

    #[test]
    fn posterior_csv_has_header_and_rows() {
        let flow = FlowModel::new(FlowSpec::new(6, 2), &mut rand_chacha::ChaCha8Rng::seed_from_u64(1)).unwrap();
        let post = sample_posterior(&flow, &[0.0, 0.0], 3, &mut stream(2, Stream::Eval, 0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("posterior_samples.csv");
        let names = SystemConfig::column_names(crate::systems::SystemId::LotkaVolterra);
        write_posterior_csv(&p, names, &post).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().nth(1), Some("alpha,beta,gamma,delta,x0,y0"));
        assert_eq!(text.lines().count(), 5);
    }
}
