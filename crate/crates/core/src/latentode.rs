//! Latent ODE model: ODE-RNN/GRU/LSTM recognition network, latent dynamics
//! `f_θ` and decoder.
//!
//! Every forward computation is written once against the [`Tape`], so the
//! training loss and inference share code. [`latent_trajectory`] is a
//! separate value-level rollout through [`crate::odeint`] used as a
//! cross-check and for evaluation.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffcore::{
    CellKind, CellState, Checkpoint, Layout, LayoutBuilder, Mlp, ParamTree, RecurrentCell, Tape,
    Var,
};
use crate::odeint::{integrate_fixed, substep_count, Negated, SolveConfig, TimeGrid, VectorField};
use crate::systems::Trajectory;
use crate::{Error, Result};

/// Architecture of a [`LatentModel`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    /// Hidden layer widths of `f_θ`.
    pub dynamics_hidden: Vec<usize>,
    pub cell: CellKind,
    pub variational: bool,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.hidden_dim == 0 || self.latent_dim == 0 {
            return Err(Error::InvalidArgument(
                "feature, hidden and latent dimensions must be positive".into(),
            ));
        }
        if self.dynamics_hidden.contains(&0) {
            return Err(Error::InvalidArgument("dynamics layer widths must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        if self.variational {
            2 * self.latent_dim
        } else {
            self.latent_dim
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Parts {
    cell: RecurrentCell,
    hidden_ode: Mlp,
    head: Mlp,
    dynamics: Mlp,
    decoder: Mlp,
}

fn build(spec: &ModelSpec) -> (Parts, Arc<Layout>) {
    let (f, h, d) = (spec.feature_dim, spec.hidden_dim, spec.latent_dim);
    let mut b = LayoutBuilder::new();
    let cell = RecurrentCell::register(&mut b, "encoder.cell", spec.cell, f, h);
    let hidden_ode = Mlp::register(&mut b, "encoder.ode", &[h, h, h]);
    let head = Mlp::register(&mut b, "encoder.head", &[h, spec.head_dim()]);
    let mut widths = vec![d];
    widths.extend(&spec.dynamics_hidden);
    widths.push(d);
    let dynamics = Mlp::register(&mut b, "dynamics", &widths);
    let decoder = Mlp::register(&mut b, "decoder", &[d, h, f]);
    (
        Parts {
            cell,
            hidden_ode,
            head,
            dynamics,
            decoder,
        },
        b.finish(),
    )
}

/// Recognition network, latent dynamics and decoder with their parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentModel {
    spec: ModelSpec,
    parts: Parts,
    params: ParamTree,
}

/// Output of the recognition network recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    pub z0: Var,
    /// `(μ, log σ)` in variational mode.
    pub stats: Option<(Var, Var)>,
}

/// Latent points at strictly increasing times with spacing at least `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPath {
    times: TimeGrid,
    zs: Vec<Vec<f64>>,
}

impl LatentPath {
    pub fn new(times: TimeGrid, zs: Vec<Vec<f64>>, min_spacing: f64) -> Result<Self> {
        if times.len() != zs.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} times but {} latent points",
                times.len(),
                zs.len()
            )));
        }
        let d = zs[0].len();
        if zs.iter().any(|z| z.len() != d) {
            return Err(Error::ShapeMismatch("ragged latent points".into()));
        }
        let tol = 1e-9 * min_spacing;
        if let Some(w) = times
            .times()
            .windows(2)
            .find(|w| w[1] - w[0] < min_spacing - tol)
        {
            return Err(Error::InvalidArgument(format!(
                "latent points {} and {} are closer than dt = {min_spacing}",
                w[0], w[1]
            )));
        }
        Ok(Self { times, zs })
    }

    pub fn times(&self) -> &[f64] {
        self.times.times()
    }

    pub fn zs(&self) -> &[Vec<f64>] {
        &self.zs
    }

    pub fn len(&self) -> usize {
        self.zs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.zs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.zs[0].len()
    }
}

impl LatentModel {
    /// Randomly initialized model.
    pub fn new<R: Rng + ?Sized>(spec: ModelSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let (parts, layout) = build(&spec);
        let params = ParamTree::init_uniform(layout, rng);
        Ok(Self { spec, parts, params })
    }

    /// Model with every weight and bias set to zero.
    pub fn zeros(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let (parts, layout) = build(&spec);
        Ok(Self {
            spec,
            parts,
            params: ParamTree::zeros(layout),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamTree {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamTree {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParamTree) -> Result<()> {
        if params.layout() != self.params.layout() {
            return Err(Error::ShapeMismatch("parameter layout differs from the model".into()));
        }
        self.params = params;
        Ok(())
    }

    pub fn latent_dim(&self) -> usize {
        self.spec.latent_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.feature_dim
    }

    /// One RK4 step of `mlp` as an autonomous field; `h` may be negative.
    fn rk4_on(mlp: &Mlp, tape: &mut Tape<'_>, y: Var, h: f64) -> Var {
        let k1 = mlp.forward(tape, y);
        let y2 = tape.lincomb(&[(y, 1.0), (k1, 0.5 * h)]);
        let k2 = mlp.forward(tape, y2);
        let y3 = tape.lincomb(&[(y, 1.0), (k2, 0.5 * h)]);
        let k3 = mlp.forward(tape, y3);
        let y4 = tape.lincomb(&[(y, 1.0), (k3, h)]);
        let k4 = mlp.forward(tape, y4);
        tape.lincomb(&[
            (y, 1.0),
            (k1, h / 6.0),
            (k2, h / 3.0),
            (k3, h / 3.0),
            (k4, h / 6.0),
        ])
    }

    /// Integrates `mlp` over a signed time span with substeps no longer than `dt`.
    fn evolve_on(mlp: &Mlp, tape: &mut Tape<'_>, y: Var, span: f64, dt: f64) -> Var {
        if span == 0.0 {
            return y;
        }
        let n = substep_count(span.abs(), dt);
        let h = span / n as f64;
        let mut y = y;
        for _ in 0..n {
            y = Self::rk4_on(mlp, tape, y, h);
        }
        y
    }

    fn check_obs(&self, obs: &Trajectory) -> Result<()> {
        if obs.is_empty() {
            return Err(Error::EmptySequence);
        }
        if obs.dim() != self.spec.feature_dim {
            return Err(Error::ShapeMismatch(format!(
                "observations have {} features, model expects {}",
                obs.dim(),
                self.spec.feature_dim
            )));
        }
        Ok(())
    }

    /// Runs the recognition network over `obs` from the last observation to
    /// the first. `eps` is the reparameterization noise in variational mode.
    pub fn encode_on(
        &self,
        tape: &mut Tape<'_>,
        obs: &Trajectory,
        eps: Option<&[f64]>,
        dt: f64,
    ) -> Result<Encoded> {
        self.check_obs(obs)?;
        let d = self.spec.latent_dim;
        let mut state: CellState = self.parts.cell.zero_state(tape);
        let n = obs.len();
        for i in (0..n).rev() {
            if i + 1 < n {
                let span = obs.times[i] - obs.times[i + 1];
                state.h = Self::evolve_on(&self.parts.hidden_ode, tape, state.h, span, dt);
            }
            let x = tape.constant(&obs.values[i]);
            state = self.parts.cell.step(tape, state, x);
        }
        let out = self.parts.head.forward(tape, state.h);
        if !self.spec.variational {
            return Ok(Encoded {
                z0: out,
                stats: None,
            });
        }
        let mu = tape.slice(out, 0, d);
        let log_sigma = tape.slice(out, d, d);
        let z0 = match eps {
            Some(e) => {
                if e.len() != d {
                    return Err(Error::ShapeMismatch(format!(
                        "noise has length {}, latent dim is {d}",
                        e.len()
                    )));
                }
                let sigma = tape.exp(log_sigma);
                let e = tape.constant(e);
                let noise = tape.mul(sigma, e);
                tape.add(mu, noise)
            }
            None => mu,
        };
        Ok(Encoded {
            z0,
            stats: Some((mu, log_sigma)),
        })
    }

    pub fn dynamics_on(&self, tape: &mut Tape<'_>, z: Var) -> Var {
        self.parts.dynamics.forward(tape, z)
    }

    pub fn decode_on(&self, tape: &mut Tape<'_>, z: Var) -> Var {
        self.parts.decoder.forward(tape, z)
    }

    /// Latent states at `times` (strictly increasing) starting from `z0` at
    /// `t0`. Times before `t0` are reached by integrating backwards.
    pub fn rollout_on(
        &self,
        tape: &mut Tape<'_>,
        z0: Var,
        t0: f64,
        times: &[f64],
        dt: f64,
    ) -> Result<Vec<Var>> {
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument("rollout times must be strictly increasing".into()));
        }
        let split = times.partition_point(|&t| t < t0);
        let mut out = vec![z0; times.len()];
        let dyn_mlp = &self.parts.dynamics;
        let (mut z, mut t) = (z0, t0);
        for i in (0..split).rev() {
            z = Self::evolve_on(dyn_mlp, tape, z, times[i] - t, dt);
            t = times[i];
            out[i] = z;
        }
        let (mut z, mut t) = (z0, t0);
        for i in split..times.len() {
            z = Self::evolve_on(dyn_mlp, tape, z, times[i] - t, dt);
            t = times[i];
            out[i] = z;
        }
        Ok(out)
    }

    /// Draws reparameterization noise when the model is variational.
    pub fn draw_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<Vec<f64>> {
        self.spec.variational.then(|| {
            (0..self.spec.latent_dim)
                .map(|_| StandardNormal.sample(rng))
                .collect()
        })
    }

    /// Saves parameters and architecture; `metadata` entries are added verbatim.
    pub fn to_checkpoint(
        &self,
        metadata: impl IntoIterator<Item = (String, serde_json::Value)>,
    ) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.metadata.insert(
            "model".into(),
            serde_json::to_value(&self.spec).expect("model spec serializes"),
        );
        ck.metadata.extend(metadata);
        ck.push_tree("model", &self.params);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let spec: ModelSpec = ck
            .metadata
            .get("model")
            .cloned()
            .ok_or_else(|| Error::Format("checkpoint lacks model metadata".into()))
            .and_then(|v| serde_json::from_value(v).map_err(|e| Error::Format(e.to_string())))?;
        let mut model = Self::zeros(spec)?;
        let tree = ck.tree("model", model.params.layout())?;
        model.params = tree;
        Ok(model)
    }
}

/// `f_θ` as a plain vector field.
pub struct DynamicsField<'a>(pub &'a LatentModel);

impl VectorField for DynamicsField<'_> {
    fn dim(&self) -> usize {
        self.0.spec.latent_dim
    }

    fn eval(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        match self.0.parts.dynamics.forward_values(&self.0.params, y) {
            Ok(v) => dy.copy_from_slice(&v),
            Err(_) => dy.fill(f64::NAN),
        }
    }
}

/// Initial latent state for `obs`, anchored at its first observation time.
///
/// In variational mode `rng` supplies the reparameterization noise; with
/// `rng = None` the mean is returned. `aux` holds `(μ, log σ)`.
#[allow(clippy::type_complexity)]
pub fn encode<R: Rng + ?Sized>(
    model: &LatentModel,
    obs: &Trajectory,
    rng: Option<&mut R>,
    dt: f64,
) -> Result<(Vec<f64>, Option<(Vec<f64>, Vec<f64>)>)> {
    let eps = rng.and_then(|r| model.draw_noise(r));
    let mut tape = Tape::new(&model.params);
    let enc = model.encode_on(&mut tape, obs, eps.as_deref(), dt)?;
    let z0 = tape.value(enc.z0).to_vec();
    if z0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("encoded latent state".into()));
    }
    let aux = enc
        .stats
        .map(|(m, s)| (tape.value(m).to_vec(), tape.value(s).to_vec()));
    Ok((z0, aux))
}

/// Fixed-step RK4 rollout of `f_θ` from `z0` at `grid.first()`.
pub fn latent_trajectory(
    model: &LatentModel,
    z0: &[f64],
    grid: &TimeGrid,
    cfg: &SolveConfig,
) -> Result<LatentPath> {
    if z0.len() != model.latent_dim() {
        return Err(Error::ShapeMismatch(format!(
            "z0 has length {}, latent dim is {}",
            z0.len(),
            model.latent_dim()
        )));
    }
    let sol = integrate_fixed(&DynamicsField(model), z0, grid, cfg)?;
    LatentPath::new(grid.clone(), sol.states, cfg.dt_fixed)
}

pub fn decode(model: &LatentModel, z: &[f64]) -> Result<Vec<f64>> {
    if z.len() != model.latent_dim() {
        return Err(Error::ShapeMismatch(format!(
            "latent vector has length {}, expected {}",
            z.len(),
            model.latent_dim()
        )));
    }
    model.parts.decoder.forward_values(&model.params, z)
}

/// Latent states at sorted `times` from `z0` anchored at `t0`, integrating the
/// negated field for times before the anchor.
pub fn latent_states_at(
    model: &LatentModel,
    z0: &[f64],
    t0: f64,
    times: &[f64],
    cfg: &SolveConfig,
) -> Result<Vec<Vec<f64>>> {
    let split = times.partition_point(|&t| t < t0);
    let field = DynamicsField(model);
    let mut out = Vec::with_capacity(times.len());
    if split > 0 {
        // s = t0 - t runs forward while t runs backward
        let mut s: Vec<f64> = vec![0.0];
        s.extend(times[..split].iter().rev().map(|t| t0 - t));
        let sol = integrate_fixed(&Negated(&field), z0, &TimeGrid::new(s)?, cfg)?;
        out.extend(sol.states.into_iter().skip(1).rev());
    }
    if split < times.len() {
        let mut fwd: Vec<f64> = vec![t0];
        let start = usize::from(times[split] == t0);
        fwd.extend(&times[split + start..]);
        let sol = integrate_fixed(&field, z0, &TimeGrid::new(fwd)?, cfg)?;
        let skip = 1 - start;
        out.extend(sol.states.into_iter().skip(skip));
    }
    Ok(out)
}

/// Encodes `obs`, rolls the latent state over `query`, decodes every point.
///
/// Returns predictions at the query times and the latent path on the merged
/// grid; `rng` draws the variational noise (mean latent when `None`).
pub fn reconstruct<R: Rng + ?Sized>(
    model: &LatentModel,
    obs: &Trajectory,
    query: &TimeGrid,
    rng: Option<&mut R>,
    cfg: &SolveConfig,
) -> Result<(Trajectory, Vec<Vec<f64>>)> {
    let (z0, _) = encode(model, obs, rng, cfg.dt_fixed)?;
    let zs = latent_states_at(model, &z0, obs.t_first(), query.times(), cfg)?;
    let preds = zs
        .iter()
        .map(|z| decode(model, z))
        .collect::<Result<Vec<_>>>()?;
    if preds.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("reconstruction".into()));
    }
    let traj = Trajectory::new(query.times().to_vec(), preds, obs.config, 0.0)?;
    Ok((traj, zs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::SystemConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(cell: CellKind, variational: bool) -> ModelSpec {
        ModelSpec {
            feature_dim: 2,
            hidden_dim: 5,
            latent_dim: 3,
            dynamics_hidden: vec![8, 8],
            cell,
            variational,
        }
    }

    fn toy_obs(n: usize) -> Trajectory {
        let times: Vec<f64> = (0..n).map(|i| 0.37 * i as f64 + 0.1).collect();
        let values = times.iter().map(|t| vec![t.cos(), -t.sin()]).collect();
        Trajectory::new(
            times,
            values,
            SystemConfig::Dho {
                k: 0.12,
                m: 1.0,
                x0: 1.0,
                v0: 0.0,
            },
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn single_observation_gives_latent_of_length_d() {
        let model = LatentModel::new(spec(CellKind::Gru, false), &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        let (z0, aux) = encode::<ChaCha8Rng>(&model, &toy_obs(1), None, 0.1).unwrap();
        assert_eq!(z0.len(), 3);
        assert!(aux.is_none());
    }

    #[test]
    fn zero_model_encodes_to_zero() {
        for cell in [CellKind::Rnn, CellKind::Gru, CellKind::Lstm] {
            let model = LatentModel::zeros(spec(cell, false)).unwrap();
            let (z0, _) = encode::<ChaCha8Rng>(&model, &toy_obs(4), None, 0.1).unwrap();
            assert_eq!(z0, vec![0.0; 3]);
        }
    }

    #[test]
    fn point_mode_is_deterministic() {
        let model = LatentModel::new(spec(CellKind::Lstm, false), &mut ChaCha8Rng::seed_from_u64(2))
            .unwrap();
        let a = encode::<ChaCha8Rng>(&model, &toy_obs(6), None, 0.1).unwrap();
        let b = encode::<ChaCha8Rng>(&model, &toy_obs(6), None, 0.1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn variational_mode_uses_noise() {
        let model = LatentModel::new(spec(CellKind::Gru, true), &mut ChaCha8Rng::seed_from_u64(3))
            .unwrap();
        let obs = toy_obs(5);
        let (mean, aux) = encode::<ChaCha8Rng>(&model, &obs, None, 0.1).unwrap();
        let (mu, _) = aux.unwrap();
        assert_eq!(mean, mu);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (z, _) = encode(&model, &obs, Some(&mut rng), 0.1).unwrap();
        assert_ne!(z, mu);
    }

    #[test]
    fn empty_and_mismatched_observations_are_rejected() {
        let model = LatentModel::zeros(spec(CellKind::Rnn, false)).unwrap();
        let mut obs = toy_obs(3);
        obs.values.iter_mut().for_each(|v| v.push(0.0));
        assert!(matches!(
            encode::<ChaCha8Rng>(&model, &obs, None, 0.1),
            Err(Error::ShapeMismatch(_))
        ));
        let empty = Trajectory {
            times: vec![],
            values: vec![],
            ..toy_obs(1)
        };
        assert!(matches!(
            encode::<ChaCha8Rng>(&model, &empty, None, 0.1),
            Err(Error::EmptySequence)
        ));
    }

    #[test]
    fn zero_dynamics_give_constant_path() {
        let mut model =
            LatentModel::new(spec(CellKind::Gru, false), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let layout = model.params().layout().clone();
        for (i, s) in layout.specs().iter().enumerate() {
            if s.group() == "dynamics" {
                let r = layout.range(crate::diffcore::ParamId(i));
                model.params_mut().flatten_mut()[r].fill(0.0);
            }
        }
        let grid = TimeGrid::uniform(0.0, 5.0, 11).unwrap();
        let path = latent_trajectory(&model, &[0.5, -1.0, 2.0], &grid, &SolveConfig::default())
            .unwrap();
        assert!(path.zs().iter().all(|z| z == &vec![0.5, -1.0, 2.0]));
        let one = TimeGrid::new(vec![1.0]).unwrap();
        let path = latent_trajectory(&model, &[1.0, 2.0, 3.0], &one, &SolveConfig::default())
            .unwrap();
        assert_eq!(path.zs(), &[vec![1.0, 2.0, 3.0]]);
    }

    #[test]
    fn latent_path_enforces_spacing() {
        let grid = TimeGrid::new(vec![0.0, 0.05, 0.2]).unwrap();
        let zs = vec![vec![0.0]; 3];
        assert!(LatentPath::new(grid.clone(), zs.clone(), 0.1).is_err());
        assert!(LatentPath::new(grid, zs, 0.05).is_ok());
    }

    #[test]
    fn decoder_shapes() {
        let model = LatentModel::zeros(spec(CellKind::Rnn, false)).unwrap();
        assert_eq!(decode(&model, &[1.0, 2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
        assert!(decode(&model, &[1.0]).is_err());
        let model = LatentModel::new(
            ModelSpec {
                feature_dim: 1,
                ..spec(CellKind::Gru, false)
            },
            &mut ChaCha8Rng::seed_from_u64(5),
        )
        .unwrap();
        let a = decode(&model, &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a, decode(&model, &[0.1, 0.2, 0.3]).unwrap());
    }

    #[test]
    fn tape_rollout_matches_value_rollout_in_both_directions() {
        let model = LatentModel::new(spec(CellKind::Gru, false), &mut ChaCha8Rng::seed_from_u64(6))
            .unwrap();
        let z0 = [0.3, -0.2, 0.9];
        let times = [0.0, 0.45, 1.0, 2.0, 3.3, 4.0];
        let cfg = SolveConfig::default();
        let want = latent_states_at(&model, &z0, 2.0, &times, &cfg).unwrap();
        let mut tape = Tape::new(model.params());
        let z = tape.constant(&z0);
        let got = model.rollout_on(&mut tape, z, 2.0, &times, 0.1).unwrap();
        for (g, w) in got.iter().zip(&want) {
            for (a, b) in tape.value(*g).iter().zip(w) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert_eq!(tape.value(got[3]), &z0);
    }

    #[test]
    fn reconstruct_covers_query_before_and_after_observations() {
        let model = LatentModel::new(spec(CellKind::Gru, false), &mut ChaCha8Rng::seed_from_u64(7))
            .unwrap();
        let obs = toy_obs(5);
        let query = TimeGrid::uniform(0.0, 30.0, 40).unwrap();
        let (pred, zs) =
            reconstruct::<ChaCha8Rng>(&model, &obs, &query, None, &SolveConfig::default()).unwrap();
        assert_eq!(pred.len(), 40);
        assert_eq!(zs.len(), 40);
        assert!(pred.values.iter().flatten().all(|v| v.is_finite()));
    }

    #[test]
    fn checkpoint_round_trip_keeps_encoding_bit_identical() {
        let model = LatentModel::new(spec(CellKind::Lstm, true), &mut ChaCha8Rng::seed_from_u64(8))
            .unwrap();
        let ck = model.to_checkpoint([("lambda".to_string(), serde_json::json!(1.0))]);
        let back = LatentModel::from_checkpoint(&Checkpoint::from_json(&ck.to_json().unwrap()).unwrap())
            .unwrap();
        assert_eq!(back, model);
        let obs = toy_obs(7);
        let a = encode::<ChaCha8Rng>(&model, &obs, None, 0.1).unwrap();
        let b = encode::<ChaCha8Rng>(&back, &obs, None, 0.1).unwrap();
        assert_eq!(a, b);
    }
}
