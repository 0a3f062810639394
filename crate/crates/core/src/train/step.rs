use rand::seq::index::sample;
use rayon::prelude::*;

use super::TrainConfig;
use crate::diffcore::{adam_update, AdamState, GradTree, Tape};
use crate::latentode::LatentModel;
use crate::losses::{
    interpolation_grid, kl_on, path_length_on, path_length_points, sigma_from_points,
    squared_error_on, total_loss, LossBreakdown, LossMode, PathMetric,
};
use crate::rng::{stream, Stream};
use crate::systems::Trajectory;
use crate::{Error, Result};

/// Loss value, gradient and latent path of one trajectory.
#[derive(Debug, Clone)]
pub struct ItemResult {
    pub grads: GradTree,
    pub recon: f64,
    pub penalty: f64,
    pub total: f64,
    /// Latent states at the interpolation points.
    pub path: Vec<Vec<f64>>,
    /// Path length of `path` under the metric in force during the step.
    pub path_length: f64,
    pub m: usize,
}

/// Sorted union of two increasing sequences; returns the merged times and
/// the position of every element of `a` and `b` inside it.
fn merge_times(a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<usize>, Vec<usize>) {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut ia, mut ib) = (Vec::with_capacity(a.len()), Vec::with_capacity(b.len()));
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let take_a = j == b.len() || (i < a.len() && a[i] <= b[j]);
        let t = if take_a { a[i] } else { b[j] };
        if out.last() != Some(&t) {
            out.push(t);
        }
        let pos = out.len() - 1;
        if take_a {
            ia.push(pos);
            i += 1;
        } else {
            ib.push(pos);
            j += 1;
        }
    }
    (out, ia, ib)
}

/// Records the loss of one trajectory and returns its reverse-mode gradient.
///
/// `metric` is a constant of the step. `eps` is the variational noise.
pub fn item_gradient(
    model: &LatentModel,
    obs: &Trajectory,
    cfg: &TrainConfig,
    metric: &PathMetric,
    eps: Option<&[f64]>,
) -> Result<ItemResult> {
    let mut tape = Tape::new(model.params());
    let enc = model.encode_on(&mut tape, obs, eps, cfg.dt)?;
    let interp = interpolation_grid(obs.t_first(), obs.t_last(), cfg.m, cfg.dt)?;
    let (merged, at_obs, at_interp) = merge_times(&obs.times, interp.times());
    let zs = model.rollout_on(&mut tape, enc.z0, obs.t_first(), &merged, cfg.dt)?;

    let mut terms = Vec::with_capacity(obs.len() + 1);
    for (k, &pos) in at_obs.iter().enumerate() {
        let pred = model.decode_on(&mut tape, zs[pos]);
        terms.push((squared_error_on(&mut tape, pred, &obs.values[k]), 1.0));
    }
    let recon = tape.lincomb(&terms);
    let path_vars: Vec<_> = at_interp.iter().map(|&p| zs[p]).collect();
    let weight = cfg.penalty_weight();
    let penalty = match cfg.mode {
        LossMode::Pathmin if weight > 0.0 => path_length_on(&mut tape, &path_vars, &metric.inv_var()),
        LossMode::Pathmin => None,
        LossMode::Kl => {
            let (mu, log_sigma) = enc
                .stats
                .ok_or_else(|| Error::InvalidArgument("kl mode needs a variational model".into()))?;
            Some(kl_on(&mut tape, mu, log_sigma))
        }
    };
    let root = match penalty {
        Some(p) if weight > 0.0 => tape.lincomb(&[(recon, 1.0), (p, weight)]),
        _ => recon,
    };

    let path: Vec<Vec<f64>> = path_vars.iter().map(|&v| tape.value(v).to_vec()).collect();
    let path_length = path_length_points(&path, metric)?;
    let recon_v = tape.scalar(recon);
    let penalty_v = match (cfg.mode, penalty) {
        (LossMode::Pathmin, _) => path_length,
        (LossMode::Kl, Some(p)) => tape.scalar(p),
        (LossMode::Kl, None) => 0.0,
    };
    let total = tape.scalar(root);
    if !total.is_finite() {
        return Err(Error::NonFinite(format!("loss = {total}")));
    }
    let grads = tape.backward(root);
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    Ok(ItemResult {
        grads,
        recon: recon_v,
        penalty: penalty_v,
        total,
        m: path.len(),
        path,
        path_length,
    })
}

/// Batch indices and variational noise of step `step`, a pure function of
/// `(seed, step)`.
pub fn step_draws(
    model: &LatentModel,
    cfg: &TrainConfig,
    n_train: usize,
    step: usize,
) -> (Vec<usize>, Vec<Option<Vec<f64>>>) {
    let mut rng = stream(cfg.seed, Stream::Training, step as u64);
    let mut idx = if cfg.batch >= n_train {
        (0..n_train).collect::<Vec<_>>()
    } else {
        sample(&mut rng, n_train, cfg.batch).into_vec()
    };
    idx.sort_unstable();
    let eps = idx.iter().map(|_| model.draw_noise(&mut rng)).collect();
    (idx, eps)
}

/// Summary of one optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub loss: LossBreakdown,
    /// Mean path length over the batch, measured before the update.
    pub path_length: f64,
    /// Metric to use in the next step.
    pub metric: PathMetric,
}

/// Mean loss and gradient over `batch`; item gradients are reduced in batch order.
pub fn batch_gradient(
    model: &LatentModel,
    batch: &[&Trajectory],
    eps: &[Option<Vec<f64>>],
    cfg: &TrainConfig,
    metric: &PathMetric,
) -> Result<(Vec<ItemResult>, GradTree)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let items: Vec<ItemResult> = batch
        .par_iter()
        .zip(eps.par_iter())
        .enumerate()
        .map(|(i, (obs, e))| {
            item_gradient(model, obs, cfg, metric, e.as_deref()).map_err(|err| match err {
                Error::NonFinite(what) => Error::NonFinite(format!("{what} (batch item {i})")),
                other => other,
            })
        })
        .collect::<Result<_>>()?;
    let mut total = GradTree::zeros_like(model.params());
    let scale = 1.0 / items.len() as f64;
    for it in &items {
        total.accumulate(&it.grads, scale)?;
    }
    Ok((items, total))
}

/// One Adam step on the mean batch loss, followed by the Σ update from the
/// batch's latent paths.
pub fn train_step(
    model: &mut LatentModel,
    batch: &[&Trajectory],
    eps: &[Option<Vec<f64>>],
    metric: &PathMetric,
    opt: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<StepOutcome> {
    let (items, grads) = batch_gradient(model, batch, eps, cfg, metric)?;
    let n = items.len() as f64;
    let mean = |f: fn(&ItemResult) -> f64| items.iter().map(f).sum::<f64>() / n;
    let m = items.iter().map(|i| i.m).max().unwrap_or(1);
    let loss = total_loss(
        cfg.mode,
        mean(|i| i.recon),
        mean(|i| i.penalty),
        cfg.penalty_weight(),
        m.max(2),
    )?;
    let loss = LossBreakdown { m, ..loss };
    let path_length = mean(|i| i.path_length);
    adam_update(model.params_mut(), &grads, opt, cfg.lr)?;
    let metric = next_metric(metric, &items)?;
    Ok(StepOutcome {
        loss,
        path_length,
        metric,
    })
}

fn next_metric(metric: &PathMetric, items: &[ItemResult]) -> Result<PathMetric> {
    let points: Vec<&[f64]> = items
        .iter()
        .flat_map(|i| i.path.iter().map(Vec::as_slice))
        .collect();
    sigma_from_points(metric, &points)
}

/// Σ from the latent paths of `batch` under the current parameters.
pub fn initial_metric(
    model: &LatentModel,
    batch: &[&Trajectory],
    eps: &[Option<Vec<f64>>],
    cfg: &TrainConfig,
) -> Result<PathMetric> {
    let probe = PathMetric::identity(model.latent_dim());
    let items: Vec<ItemResult> = batch
        .iter()
        .zip(eps)
        .map(|(obs, e)| item_gradient(model, obs, cfg, &probe, e.as_deref()))
        .collect::<Result<_>>()?;
    next_metric(&probe, &items)
}
