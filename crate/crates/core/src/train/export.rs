use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::latentode::{encode, LatentModel};
use crate::rng::StreamRng;
use crate::systems::{SystemConfig, Trajectory};
use crate::{Error, Result, SCHEMA_VERSION};

/// Two-dimensional PCA projection of encoded latent states.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentExport {
    pub projection: Vec<[f64; 2]>,
    /// Fraction of total variance captured by each component.
    pub explained: [f64; 2],
    pub configs: Vec<SystemConfig>,
}

/// Projects `points` onto their two leading principal axes.
///
/// Each axis is oriented so that its largest-magnitude loading is positive.
pub fn pca_2d(points: &[Vec<f64>]) -> Result<(Vec<[f64; 2]>, [f64; 2])> {
    let n = points.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty PCA input".into()));
    }
    let d = points[0].len();
    if d == 0 || points.iter().any(|p| p.len() != d) {
        return Err(Error::ShapeMismatch("PCA rows differ in length".into()));
    }
    let mut x = DMatrix::from_fn(n, d, |i, j| points[i][j]);
    let mean = x.row_mean();
    for mut row in x.row_iter_mut() {
        row -= &mean;
    }
    let cov = x.transpose() * &x / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let mut axes = Vec::with_capacity(2);
    let mut explained = [0.0; 2];
    for (k, &c) in order.iter().take(2).enumerate() {
        let mut v = eig.eigenvectors.column(c).into_owned();
        let lead = v.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(0.0);
        if lead < 0.0 {
            v = -v;
        }
        explained[k] = if total > 0.0 {
            eig.eigenvalues[c].max(0.0) / total
        } else {
            0.0
        };
        axes.push(v);
    }
    let proj = (0..n)
        .map(|i| {
            let row = x.row(i);
            let p = |k: usize| axes.get(k).map_or(0.0, |a| row.dot(&a.transpose()));
            [p(0), p(1)]
        })
        .collect();
    Ok((proj, explained))
}

/// Encodes the first `count` items (mean latent state), projects them with
/// PCA and writes `pc1,pc2,<config columns>` to `path`.
pub fn export_latents(
    model: &LatentModel,
    items: &[Trajectory],
    count: usize,
    dt: f64,
    path: &Path,
) -> Result<LatentExport> {
    if count == 0 || count > items.len() {
        return Err(Error::InvalidArgument(format!(
            "export count {count} outside 1..={}",
            items.len()
        )));
    }
    let items = &items[..count];
    let latents = items
        .par_iter()
        .map(|obs| encode(model, obs, None::<&mut StreamRng>, dt).map(|r| r.0))
        .collect::<Result<Vec<_>>>()?;
    let (projection, explained) = pca_2d(&latents)?;
    let configs: Vec<SystemConfig> = items.iter().map(|t| t.config).collect();

    let mut out = String::new();
    out.push_str(&format!(
        "# geodesic-lode schema {SCHEMA_VERSION} explained {} {}\n",
        explained[0], explained[1]
    ));
    out.push_str("pc1,pc2");
    for c in SystemConfig::column_names(configs[0].id()) {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for (p, c) in projection.iter().zip(&configs) {
        out.push_str(&format!("{},{}", p[0], p[1]));
        for v in c.to_vec() {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))?;
    Ok(LatentExport {
        projection,
        explained,
        configs,
    })
}
