//! Reconstruction error, Mahalanobis path length with a running scale, and
//! the KL penalty of the variational baseline.

use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Var};
use crate::latentode::LatentPath;
use crate::odeint::TimeGrid;
use crate::systems::Trajectory;
use crate::{Error, Result};

pub const SIGMA_FLOOR: f64 = 1e-6;
pub const DEFAULT_INTERPOLATION_POINTS: usize = 64;

/// Diagonal scale of the latent metric, `Σ = diag(σ²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathMetric {
    pub sigma_diag: Vec<f64>,
    pub floor: f64,
}

impl PathMetric {
    pub fn identity(d: usize) -> Self {
        Self {
            sigma_diag: vec![1.0; d],
            floor: SIGMA_FLOOR,
        }
    }

    pub fn dim(&self) -> usize {
        self.sigma_diag.len()
    }

    /// Diagonal of `Σ⁻¹`.
    pub fn inv_var(&self) -> Vec<f64> {
        self.sigma_diag.iter().map(|s| 1.0 / (s * s)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    /// Reconstruction plus `λ` times the latent path length.
    Pathmin,
    /// Variational baseline: reconstruction plus KL to a standard normal prior.
    Kl,
}

impl std::fmt::Display for LossMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossMode::Pathmin => "pathmin",
            LossMode::Kl => "kl",
        })
    }
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pathmin" => Ok(LossMode::Pathmin),
            "kl" => Ok(LossMode::Kl),
            other => Err(Error::InvalidArgument(format!("unknown loss mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub recon: f64,
    /// Path length in pathmin mode, KL divergence in kl mode.
    pub penalty: f64,
    /// Weight applied to `penalty`.
    pub lambda: f64,
    /// Number of interpolation points.
    pub m: usize,
}

/// Sum over observations and components of the squared error.
pub fn reconstruction_loss(obs: &Trajectory, pred: &Trajectory) -> Result<f64> {
    if obs.times != pred.times {
        return Err(Error::ShapeMismatch("observation and prediction times differ".into()));
    }
    sum_squared_error(&obs.values, &pred.values)
}

pub fn sum_squared_error(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.len() != y.len()) {
        return Err(Error::ShapeMismatch("value arrays differ in shape".into()));
    }
    Ok(a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y) * (x - y))
        .sum())
}

/// Sum of Mahalanobis lengths of consecutive segments of `zs`.
pub fn path_length_points(zs: &[Vec<f64>], metric: &PathMetric) -> Result<f64> {
    if zs.iter().any(|z| z.len() != metric.dim()) {
        return Err(Error::ShapeMismatch(format!(
            "latent points must have length {}",
            metric.dim()
        )));
    }
    let w = metric.inv_var();
    Ok(zs
        .windows(2)
        .map(|p| {
            p[0].iter()
                .zip(&p[1])
                .zip(&w)
                .map(|((a, b), w)| w * (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .sum())
}

pub fn path_length(path: &LatentPath, metric: &PathMetric) -> Result<f64> {
    path_length_points(path.zs(), metric)
}

/// Per-dimension population standard deviation over every latent point in
/// `batch`, floored at `metric.floor`.
pub fn update_sigma(metric: &PathMetric, batch: &[LatentPath]) -> Result<PathMetric> {
    let points: Vec<&[f64]> = batch
        .iter()
        .flat_map(|p| p.zs().iter().map(Vec::as_slice))
        .collect();
    sigma_from_points(metric, &points)
}

pub fn sigma_from_points(metric: &PathMetric, points: &[&[f64]]) -> Result<PathMetric> {
    if points.len() < 2 {
        return Err(Error::DegenerateBatch(format!(
            "need at least 2 latent points, got {}",
            points.len()
        )));
    }
    let d = metric.dim();
    if points.iter().any(|p| p.len() != d) {
        return Err(Error::ShapeMismatch(format!("latent points must have length {d}")));
    }
    let n = points.len() as f64;
    let sigma_diag = (0..d)
        .map(|j| {
            let mean = points.iter().map(|p| p[j]).sum::<f64>() / n;
            let var = points.iter().map(|p| (p[j] - mean).powi(2)).sum::<f64>() / n;
            var.sqrt().max(metric.floor)
        })
        .collect();
    Ok(PathMetric {
        sigma_diag,
        floor: metric.floor,
    })
}

/// `KL(N(μ, diag σ²) ‖ N(0, I))`.
pub fn kl_penalty(mu: &[f64], log_sigma: &[f64]) -> Result<f64> {
    if mu.len() != log_sigma.len() {
        return Err(Error::ShapeMismatch("μ and log σ differ in length".into()));
    }
    Ok(0.5
        * mu.iter()
            .zip(log_sigma)
            // exp_m1 keeps the σ² - 1 - 2 log σ term non-negative for tiny log σ
            .map(|(m, s)| m * m + ((2.0 * s).exp_m1() - 2.0 * s))
            .sum::<f64>())
}

/// Combines the terms; `weight` is λ in pathmin mode and the KL weight otherwise.
pub fn total_loss(
    mode: LossMode,
    recon: f64,
    penalty: f64,
    weight: f64,
    m: usize,
) -> Result<LossBreakdown> {
    if !(weight >= 0.0) {
        return Err(Error::InvalidArgument("penalty weight must be >= 0".into()));
    }
    if mode == LossMode::Pathmin && m < 2 {
        return Err(Error::InvalidArgument("path length needs m >= 2".into()));
    }
    let total = recon + weight * penalty;
    if !total.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss (recon {recon}, penalty {penalty})"
        )));
    }
    Ok(LossBreakdown {
        total,
        recon,
        penalty,
        lambda: weight,
        m,
    })
}

/// Number of interpolation points actually used on `[t0, t1]`: at most `m`,
/// reduced so consecutive points are at least `dt` apart.
pub fn effective_points(t0: f64, t1: f64, m: usize, dt: f64) -> usize {
    let span = t1 - t0;
    if span <= 0.0 {
        return 1;
    }
    let fit = (span / dt + 1e-9).floor() as usize + 1;
    m.min(fit).max(1)
}

/// Uniform interpolation grid over `[t0, t1]` honoring the `dt` spacing rule.
pub fn interpolation_grid(t0: f64, t1: f64, m: usize, dt: f64) -> Result<TimeGrid> {
    let n = effective_points(t0, t1, m, dt);
    if n == 1 {
        TimeGrid::new(vec![t0])
    } else {
        TimeGrid::uniform(t0, t1, n)
    }
}

/// Path length of tape nodes `zs` with constant weights `inv_var`.
pub fn path_length_on(tape: &mut Tape<'_>, zs: &[Var], inv_var: &[f64]) -> Option<Var> {
    let segs: Vec<(Var, f64)> = zs
        .windows(2)
        .map(|p| {
            let diff = tape.sub(p[1], p[0]);
            (tape.weighted_norm(diff, inv_var), 1.0)
        })
        .collect();
    (!segs.is_empty()).then(|| tape.lincomb(&segs))
}

/// Squared reconstruction error of a decoded tape node against observed values.
pub fn squared_error_on(tape: &mut Tape<'_>, pred: Var, target: &[f64]) -> Var {
    let t = tape.constant(target);
    let r = tape.sub(pred, t);
    tape.sum_squares(r)
}

/// KL penalty recorded on a tape.
pub fn kl_on(tape: &mut Tape<'_>, mu: Var, log_sigma: Var) -> Var {
    let d = tape.len_of(mu);
    let two_s = tape.scale(log_sigma, 2.0);
    let var = tape.exp(two_s);
    let mu2 = tape.sum_squares(mu);
    let var_sum = tape.sum(var);
    let s_sum = tape.sum(log_sigma);
    let offset = tape.constant(&[-(d as f64)]);
    tape.lincomb(&[(mu2, 0.5), (var_sum, 0.5), (offset, 0.5), (s_sum, -1.0)])
}
