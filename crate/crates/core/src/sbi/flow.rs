use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Checkpoint, Layout, LayoutBuilder, Mlp, ParamTree, Tape, Var};
use crate::{Error, Result};

/// `½ log(2π)`
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Per-dimension affine standardization `(x - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub const STD_FLOOR: f64 = 1e-8;

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Sample mean and population std of `rows`, std floored at [`Self::STD_FLOOR`].
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot standardize zero rows".into()))?;
        let d = first.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::ShapeMismatch("rows differ in length".into()));
        }
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let std = (0..d)
            .map(|j| {
                let var = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                var.sqrt().max(Self::STD_FLOOR)
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn inverse(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    /// `log |det d forward / dx|`
    pub fn log_jacobian(&self) -> f64 {
        -self.std.iter().map(|s| s.ln()).sum::<f64>()
    }
}

/// Shape of a conditional affine-coupling flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub dim: usize,
    pub context_dim: usize,
    pub layers: usize,
    pub hidden: Vec<usize>,
    /// Bound on the absolute log-scale of every coupling.
    pub s_max: f64,
}

impl FlowSpec {
    pub fn new(dim: usize, context_dim: usize) -> Self {
        Self {
            dim,
            context_dim,
            layers: 5,
            hidden: vec![64, 64],
            s_max: 3.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::InvalidArgument("flow dimension must be at least 2".into()));
        }
        if self.layers == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidArgument("flow needs layers and nonzero widths".into()));
        }
        if !(self.s_max > 0.0 && self.s_max.is_finite()) {
            return Err(Error::InvalidArgument("s_max must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Coupling {
    /// Coordinates fed to the conditioner and left unchanged.
    pass: Vec<usize>,
    /// Coordinates scaled and shifted.
    moved: Vec<usize>,
    net: Mlp,
}

/// Stack of affine couplings mapping standardized targets to a standard normal.
///
/// Layer `k` rotates the coordinate order by `k` and passes the first
/// `dim / 2` rotated coordinates through; the rest get `x e^s + t` with
/// `s = s_max tanh(raw / s_max)`.
#[derive(Debug, Clone)]
pub struct FlowModel {
    spec: FlowSpec,
    couplings: Vec<Coupling>,
    params: ParamTree,
    pub target: Standardizer,
    pub context: Standardizer,
}

fn build(spec: &FlowSpec) -> (Vec<Coupling>, Arc<Layout>) {
    let d = spec.dim;
    let half = d / 2;
    let mut builder = LayoutBuilder::new();
    let couplings = (0..spec.layers)
        .map(|k| {
            let order: Vec<usize> = (0..d).map(|i| (i + k) % d).collect();
            let pass = order[..half].to_vec();
            let moved = order[half..].to_vec();
            let mut widths = vec![half + spec.context_dim];
            widths.extend(&spec.hidden);
            widths.push(2 * moved.len());
            let net = Mlp::register(&mut builder, &format!("flow.c{k}"), &widths);
            Coupling { pass, moved, net }
        })
        .collect();
    (couplings, builder.finish())
}

impl FlowModel {
    /// Random hidden layers and zero output layers, so the flow starts as the identity.
    pub fn new<R: Rng + ?Sized>(spec: FlowSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let (couplings, layout) = build(&spec);
        let mut params = ParamTree::init_uniform(layout, rng);
        for c in &couplings {
            let (w, b) = c.net.last_layer();
            params.get_mut(w).fill(0.0);
            params.get_mut(b).fill(0.0);
        }
        Ok(Self {
            target: Standardizer::identity(spec.dim),
            context: Standardizer::identity(spec.context_dim),
            spec,
            couplings,
            params,
        })
    }

    pub fn spec(&self) -> &FlowSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamTree {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamTree {
        &mut self.params
    }

    fn check(&self, x: &[f64], ctx: &[f64]) -> Result<()> {
        if x.len() != self.spec.dim || ctx.len() != self.spec.context_dim {
            return Err(Error::ShapeMismatch(format!(
                "flow expects ({}, {}) inputs, got ({}, {})",
                self.spec.dim,
                self.spec.context_dim,
                x.len(),
                ctx.len()
            )));
        }
        Ok(())
    }

    fn shift_scale(&self, c: &Coupling, x: &[f64], ctx: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut input: Vec<f64> = c.pass.iter().map(|&i| x[i]).collect();
        input.extend_from_slice(ctx);
        let out = c.net.forward_values(&self.params, &input)?;
        let k = c.moved.len();
        let s = out[k..]
            .iter()
            .map(|r| self.spec.s_max * (r / self.spec.s_max).tanh())
            .collect();
        Ok((out[..k].to_vec(), s))
    }

    /// Standardized target to base space; returns `u` and the log-determinant.
    /// `ctx` is the standardized context.
    pub fn forward(&self, x: &[f64], ctx: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check(x, ctx)?;
        let mut u = x.to_vec();
        let mut logdet = 0.0;
        for c in &self.couplings {
            let (t, s) = self.shift_scale(c, &u, ctx)?;
            for (j, &i) in c.moved.iter().enumerate() {
                u[i] = u[i] * s[j].exp() + t[j];
                logdet += s[j];
            }
        }
        Ok((u, logdet))
    }

    /// Log-scales of every coupling for `x`, in layer order.
    pub fn layer_log_scales(&self, x: &[f64], ctx: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check(x, ctx)?;
        let mut u = x.to_vec();
        let mut out = Vec::with_capacity(self.couplings.len());
        for c in &self.couplings {
            let (t, s) = self.shift_scale(c, &u, ctx)?;
            for (j, &i) in c.moved.iter().enumerate() {
                u[i] = u[i] * s[j].exp() + t[j];
            }
            out.push(s);
        }
        Ok(out)
    }

    /// Base space to standardized target.
    pub fn inverse(&self, u: &[f64], ctx: &[f64]) -> Result<Vec<f64>> {
        self.check(u, ctx)?;
        let mut x = u.to_vec();
        for c in self.couplings.iter().rev() {
            let (t, s) = self.shift_scale(c, &x, ctx)?;
            for (j, &i) in c.moved.iter().enumerate() {
                x[i] = (x[i] - t[j]) * (-s[j]).exp();
            }
        }
        Ok(x)
    }

    /// `-log N(u; 0, I) - logdet` in standardized coordinates.
    pub fn nll(&self, x: &[f64], ctx: &[f64]) -> Result<f64> {
        let (u, logdet) = self.forward(x, ctx)?;
        let v = 0.5 * u.iter().map(|a| a * a).sum::<f64>() + self.spec.dim as f64 * HALF_LN_2PI
            - logdet;
        if !v.is_finite() {
            return Err(Error::NonFinite("flow negative log-likelihood".into()));
        }
        Ok(v)
    }

    /// Records the standardized-space NLL of one pair on `tape`.
    pub fn nll_on(&self, tape: &mut Tape<'_>, x: &[f64], ctx: &[f64]) -> Var {
        let d = self.spec.dim;
        let ctx = tape.constant(ctx);
        let mut u = tape.constant(x);
        let mut logdet_terms = Vec::with_capacity(self.couplings.len());
        for c in &self.couplings {
            let k = c.moved.len();
            let xa = tape.gather(u, &c.pass);
            let xb = tape.gather(u, &c.moved);
            let input = tape.concat(xa, ctx);
            let out = c.net.forward(tape, input);
            let t = tape.slice(out, 0, k);
            let raw = tape.slice(out, k, k);
            let squashed = tape.scale(raw, 1.0 / self.spec.s_max);
            let squashed = tape.tanh(squashed);
            let s = tape.scale(squashed, self.spec.s_max);
            let es = tape.exp(s);
            let scaled = tape.mul(xb, es);
            let yb = tape.add(scaled, t);
            logdet_terms.push((tape.sum(s), -1.0));
            // back to natural coordinate order
            let joined = tape.concat(xa, yb);
            let mut pos = vec![0; d];
            for (p, &i) in c.pass.iter().chain(&c.moved).enumerate() {
                pos[i] = p;
            }
            u = tape.gather(joined, &pos);
        }
        let sq = tape.sum_squares(u);
        logdet_terms.push((sq, 0.5));
        let base = tape.lincomb(&logdet_terms);
        let cst = tape.constant(&[d as f64 * HALF_LN_2PI]);
        tape.add(base, cst)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.metadata.insert(
            "flow".into(),
            serde_json::to_value(&self.spec).expect("flow spec serializes"),
        );
        ck.push_tree("flow", &self.params);
        ck.push_vector("target.mean", &self.target.mean);
        ck.push_vector("target.std", &self.target.std);
        ck.push_vector("context.mean", &self.context.mean);
        ck.push_vector("context.std", &self.context.std);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let spec: FlowSpec = ck
            .metadata
            .get("flow")
            .cloned()
            .ok_or_else(|| Error::Format("checkpoint lacks flow metadata".into()))
            .and_then(|v| serde_json::from_value(v).map_err(|e| Error::Format(e.to_string())))?;
        spec.validate()?;
        let (couplings, layout) = build(&spec);
        let params = ck.tree("flow", &layout)?;
        let vec = |n: &str| ck.vector(n).map(<[f64]>::to_vec);
        let target = Standardizer {
            mean: vec("target.mean")?,
            std: vec("target.std")?,
        };
        let context = Standardizer {
            mean: vec("context.mean")?,
            std: vec("context.std")?,
        };
        if target.dim() != spec.dim || context.dim() != spec.context_dim {
            return Err(Error::Format("standardizer sizes do not match the flow".into()));
        }
        Ok(Self {
            spec,
            couplings,
            params,
            target,
            context,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::grad;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randomized(spec: FlowSpec, seed: u64, scale: f64) -> FlowModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = FlowModel::new(spec, &mut rng).unwrap();
        for v in f.params_mut().flatten_mut() {
            *v = scale * rng.random_range(-1.0..1.0);
        }
        f
    }

    fn normal_vec(rng: &mut ChaCha8Rng, n: usize, s: f64) -> Vec<f64> {
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                s * z
            })
            .collect()
    }

    #[test]
    fn zero_output_layers_give_the_identity() {
        let f = FlowModel::new(FlowSpec::new(6, 4), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let x = [0.3, -1.0, 2.0, 0.1, -0.7, 5.0];
        let (u, ld) = f.forward(&x, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(u, x);
        assert_eq!(ld, 0.0);
    }

    #[test]
    fn identity_nll_at_origin_is_six_half_log_two_pi() {
        let f = FlowModel::new(FlowSpec::new(6, 2), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let v = f.nll(&[0.0; 6], &[0.4, -0.4]).unwrap();
        let expected = 3.0 * (2.0 * std::f64::consts::PI).ln();
        assert!((v - expected).abs() < 1e-14);
        assert!((v - 5.513_631_199_228_036).abs() < 1e-12);
    }

    #[test]
    fn logdet_is_the_sum_of_layer_log_scales() {
        let f = randomized(FlowSpec::new(6, 3), 3, 0.4);
        let x = [0.2, 0.5, -1.1, 0.9, 0.0, -0.3];
        let ctx = [0.1, -0.2, 0.7];
        let (_, ld) = f.forward(&x, &ctx).unwrap();
        let s: f64 = f.layer_log_scales(&x, &ctx).unwrap().iter().flatten().sum();
        assert!((ld - s).abs() < 1e-12);
        assert!(ld != 0.0);
    }

    #[test]
    fn zero_effect_layer_leaves_nll_unchanged() {
        let mut spec = FlowSpec::new(6, 2);
        let f = randomized(spec.clone(), 4, 0.3);
        spec.layers += 1;
        let mut g = FlowModel::new(spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        // copy the first five couplings, the sixth keeps its zero output layer
        let n = f.params().len();
        g.params_mut().flatten_mut()[..n].copy_from_slice(f.params().flatten());
        let x = [1.0, -0.5, 0.25, 0.0, 2.0, -1.5];
        let ctx = [0.3, 0.9];
        assert_eq!(f.nll(&x, &ctx).unwrap(), g.nll(&x, &ctx).unwrap());
    }

    #[test]
    fn tape_nll_matches_values_and_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut worst: f64 = 0.0;
        for seed in 0..20 {
            let spec = FlowSpec {
                hidden: vec![8, 8],
                ..FlowSpec::new(6, 3)
            };
            let f = randomized(spec, 100 + seed, 0.5);
            let x = normal_vec(&mut rng, 6, 1.0);
            let ctx = normal_vec(&mut rng, 3, 1.0);
            let (v, g) = grad(f.params(), |t| Ok(f.nll_on(t, &x, &ctx))).unwrap();
            assert!((v - f.nll(&x, &ctx).unwrap()).abs() < 1e-12 * (1.0 + v.abs()));
            let h = 1e-4;
            let shifted = |i: usize, d: f64| {
                let mut p = f.clone();
                p.params_mut().flatten_mut()[i] += d;
                p.nll(&x, &ctx).unwrap()
            };
            for i in 0..f.params().len() {
                // five-point central difference
                let fd = (8.0 * (shifted(i, h) - shifted(i, -h))
                    - (shifted(i, 2.0 * h) - shifted(i, -2.0 * h)))
                    / (12.0 * h);
                let an = g.flatten()[i];
                worst = worst.max((an - fd).abs() / an.abs().max(fd.abs()).max(1e-4));
            }
        }
        assert!(worst < 1e-5, "worst relative error {worst}");
    }

    #[test]
    fn inverse_undoes_forward_on_a_thousand_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f = randomized(FlowSpec::new(6, 8), 7, 0.6);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let x = normal_vec(&mut rng, 6, 2.0);
            let ctx = normal_vec(&mut rng, 8, 2.0);
            let (u, _) = f.forward(&x, &ctx).unwrap();
            let back = f.inverse(&u, &ctx).unwrap();
            for (a, b) in back.iter().zip(&x) {
                worst = worst.max((a - b).abs());
            }
        }
        assert!(worst < 1e-10, "max deviation {worst}");
    }

    #[test]
    fn two_dimensional_density_integrates_to_one() {
        let f = randomized(
            FlowSpec {
                hidden: vec![16],
                layers: 4,
                ..FlowSpec::new(2, 1)
            },
            8,
            0.5,
        );
        let ctx = [0.7];
        let (lo, hi, n) = (-12.0, 12.0, 600);
        let h = (hi - lo) / n as f64;
        let mut mass = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x = [lo + (i as f64 + 0.5) * h, lo + (j as f64 + 0.5) * h];
                mass += (-f.nll(&x, &ctx).unwrap()).exp() * h * h;
            }
        }
        assert!((mass - 1.0).abs() < 1e-2, "mass {mass}");
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut f = randomized(FlowSpec::new(6, 2), 9, 0.2);
        f.target = Standardizer {
            mean: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            std: vec![0.5; 6],
        };
        let g = FlowModel::from_checkpoint(&Checkpoint::from_json(&f.to_checkpoint().to_json().unwrap()).unwrap())
            .unwrap();
        assert_eq!(g.params(), f.params());
        assert_eq!(g.target, f.target);
        assert_eq!(g.context, f.context);
    }

    proptest! {
        #[test]
        fn standardization_round_trips(
            rows in proptest::collection::vec(proptest::collection::vec(-1e3f64..1e3, 3), 2..20),
        ) {
            let s = Standardizer::fit(&rows).unwrap();
            for r in &rows {
                let back = s.inverse(&s.forward(r));
                for ((a, b), m) in back.iter().zip(r).zip(&s.mean) {
                    prop_assert!((a - b).abs() <= 4.0 * f64::EPSILON * (b.abs() + m.abs()));
                }
            }
        }

        #[test]
        fn forward_is_invertible_for_any_context(
            x in proptest::collection::vec(-5.0f64..5.0, 6),
            ctx in proptest::collection::vec(-5.0f64..5.0, 4),
            seed in 0u64..50,
        ) {
            let f = randomized(FlowSpec::new(6, 4), seed, 0.6);
            let (u, ld) = f.forward(&x, &ctx).unwrap();
            prop_assert!(ld.is_finite());
            let back = f.inverse(&u, &ctx).unwrap();
            for (a, b) in back.iter().zip(&x) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }
    }
}
