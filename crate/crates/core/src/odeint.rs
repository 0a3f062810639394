//! Numerical integration of vector fields.
//!
//! Two integrators live here:
//!
//! - [`integrate_fixed`]: classic RK4 with substeps no larger than
//!   `dt_fixed`. Training rollouts use the same tableau on the tape (see
//!   [`crate::latentode`]) so gradients are exact for the computed trajectory.
//! - [`integrate_adaptive`]: Dormand–Prince 5(4) with embedded error control,
//!   used to generate ground-truth data.

use crate::{Error, Result};

/// Right-hand side `dy/dt = f(t, y)`.
pub trait VectorField {
    fn dim(&self) -> usize;

    /// Writes `f(t, y)` into `dy`. Both slices have length [`Self::dim`].
    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]);
}

/// Adapts a closure into a [`VectorField`].
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> VectorField for FnField<F>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        (self.f)(t, y, dy)
    }
}

/// The field `-f`, used to run a system backwards in time.
pub struct Negated<'a, V: ?Sized>(pub &'a V);

impl<V: VectorField + ?Sized> VectorField for Negated<'_, V> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        self.0.eval(t, y, dy);
        dy.iter_mut().for_each(|v| *v = -*v);
    }
}

/// Strictly increasing, finite, non-empty sequence of times.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid(Vec<f64>);

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::InvalidArgument("time grid must not be empty".into()));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument("time grid must be finite".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "time grid must be strictly increasing".into(),
            ));
        }
        Ok(Self(times))
    }

    /// `n` points spaced evenly over `[start, end]` (a single point when `n == 1`).
    pub fn uniform(start: f64, end: f64, n: usize) -> Result<Self> {
        match n {
            0 => Err(Error::InvalidArgument("uniform grid needs n >= 1".into())),
            1 => Self::new(vec![start]),
            _ => {
                let h = (end - start) / (n - 1) as f64;
                let mut times: Vec<f64> = (0..n).map(|i| start + h * i as f64).collect();
                times[n - 1] = end;
                Self::new(times)
            }
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.0[0]
    }

    pub fn last(&self) -> f64 {
        self.0[self.0.len() - 1]
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveConfig {
    pub rtol: f64,
    pub atol: f64,
    pub dt_init: f64,
    pub dt_fixed: f64,
    pub max_steps: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-4,
            atol: 1e-4,
            dt_init: 0.1,
            dt_fixed: 0.1,
            max_steps: 100_000,
        }
    }
}

impl SolveConfig {
    pub fn with_tolerances(rtol: f64, atol: f64) -> Self {
        Self {
            rtol,
            atol,
            ..Self::default()
        }
    }

    pub fn with_dt_fixed(dt_fixed: f64) -> Self {
        Self {
            dt_fixed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be > 0, got {v}")))
            }
        };
        positive("rtol", self.rtol)?;
        positive("atol", self.atol)?;
        positive("dt_init", self.dt_init)?;
        positive("dt_fixed", self.dt_fixed)?;
        if self.max_steps == 0 {
            return Err(Error::InvalidArgument("max_steps must be > 0".into()));
        }
        Ok(())
    }
}

/// States of an integration at the requested times.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Solution {
    pub fn last_state(&self) -> &[f64] {
        &self.states[self.states.len() - 1]
    }
}

/// Number of equal substeps needed to cross `span` with steps no larger than `dt`.
pub fn substep_count(span: f64, dt: f64) -> usize {
    let ratio = span / dt;
    // tolerate representation error so that span == k * dt gives k, not k + 1
    ((ratio - 1e-9).ceil() as usize).max(1)
}

fn check_finite(y: &[f64], what: &str, t: f64) -> Result<()> {
    if y.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} at t = {t}")))
    }
}

/// One classic four-stage Runge–Kutta step of size `h`.
pub fn rk4_step<V: VectorField + ?Sized>(f: &V, t: f64, y: &[f64], h: f64) -> Result<Vec<f64>> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidArgument(format!("step size must be > 0, got {h}")));
    }
    check_finite(y, "rk4 input", t)?;
    let mut out = vec![0.0; y.len()];
    let mut work = Rk4Work::new(y.len());
    rk4_step_into(f, t, y, h, &mut work, &mut out);
    check_finite(&out, "rk4 stage", t)?;
    Ok(out)
}

struct Rk4Work {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Work {
    fn new(n: usize) -> Self {
        Self {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }
}

fn rk4_step_into<V: VectorField + ?Sized>(
    f: &V,
    t: f64,
    y: &[f64],
    h: f64,
    w: &mut Rk4Work,
    out: &mut [f64],
) {
    let half = 0.5 * h;
    f.eval(t, y, &mut w.k1);
    for ((tmp, yi), k) in w.tmp.iter_mut().zip(y).zip(&w.k1) {
        *tmp = yi + half * k;
    }
    f.eval(t + half, &w.tmp, &mut w.k2);
    for ((tmp, yi), k) in w.tmp.iter_mut().zip(y).zip(&w.k2) {
        *tmp = yi + half * k;
    }
    f.eval(t + half, &w.tmp, &mut w.k3);
    for ((tmp, yi), k) in w.tmp.iter_mut().zip(y).zip(&w.k3) {
        *tmp = yi + h * k;
    }
    f.eval(t + h, &w.tmp, &mut w.k4);
    let sixth = h / 6.0;
    for i in 0..y.len() {
        out[i] = y[i] + sixth * (w.k1[i] + 2.0 * w.k2[i] + 2.0 * w.k3[i] + w.k4[i]);
    }
}

/// Fixed-step RK4 solution reported at every grid time.
///
/// Each gap between grid times is split into equal substeps no larger than
/// `cfg.dt_fixed`. The first reported state is `y0` itself.
pub fn integrate_fixed<V: VectorField + ?Sized>(
    f: &V,
    y0: &[f64],
    grid: &TimeGrid,
    cfg: &SolveConfig,
) -> Result<Solution> {
    cfg.validate()?;
    if y0.len() != f.dim() {
        return Err(Error::ShapeMismatch(format!(
            "y0 has length {}, field expects {}",
            y0.len(),
            f.dim()
        )));
    }
    check_finite(y0, "initial state", grid.first())?;

    let times = grid.times();
    let mut states = Vec::with_capacity(times.len());
    states.push(y0.to_vec());
    let mut y = y0.to_vec();
    let mut next = vec![0.0; y.len()];
    let mut work = Rk4Work::new(y.len());
    let mut used = 0usize;

    for pair in times.windows(2) {
        let (t_a, t_b) = (pair[0], pair[1]);
        let n = substep_count(t_b - t_a, cfg.dt_fixed);
        used += n;
        if used > cfg.max_steps {
            return Err(Error::StepBudgetExceeded(cfg.max_steps));
        }
        let h = (t_b - t_a) / n as f64;
        for k in 0..n {
            let t = t_a + h * k as f64;
            rk4_step_into(f, t, &y, h, &mut work, &mut next);
            std::mem::swap(&mut y, &mut next);
        }
        check_finite(&y, "fixed-step state", t_b)?;
        states.push(y.clone());
    }

    Ok(Solution {
        times: times.to_vec(),
        states,
    })
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// fifth-order weights minus embedded fourth-order weights
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Adaptive Dormand–Prince 5(4) solution at the `save_at` times.
///
/// Steps are clipped so they land exactly on each save time; local error per
/// accepted step is below `atol + rtol * |y|` in the RMS norm. Rejected steps
/// count against `cfg.max_steps`.
pub fn integrate_adaptive<V: VectorField + ?Sized>(
    f: &V,
    y0: &[f64],
    t0: f64,
    tf: f64,
    save_at: &TimeGrid,
    cfg: &SolveConfig,
) -> Result<Solution> {
    cfg.validate()?;
    if y0.len() != f.dim() {
        return Err(Error::ShapeMismatch(format!(
            "y0 has length {}, field expects {}",
            y0.len(),
            f.dim()
        )));
    }
    if !(t0 <= save_at.first() && save_at.last() <= tf) {
        return Err(Error::InvalidArgument(format!(
            "save times [{}, {}] must lie within [{t0}, {tf}]",
            save_at.first(),
            save_at.last()
        )));
    }
    check_finite(y0, "initial state", t0)?;

    let n = y0.len();
    let mut k: [Vec<f64>; 7] = std::array::from_fn(|_| vec![0.0; n]);
    let mut stage = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    let mut y = y0.to_vec();
    let mut t = t0;
    let mut h = cfg.dt_init;
    let mut steps = 0usize;
    let mut states = Vec::with_capacity(save_at.len());

    f.eval(t, &y, &mut k[0]);
    for &target in save_at.times() {
        while t < target {
            let remaining = target - t;
            let clipped = h >= remaining;
            let step = if clipped { remaining } else { h };

            for s in 1..7 {
                for i in 0..n {
                    let mut acc = y[i];
                    for j in 0..s {
                        acc += step * A[s][j] * k[j][i];
                    }
                    stage[i] = acc;
                }
                if s == 6 {
                    y_new.copy_from_slice(&stage);
                }
                f.eval(t + C[s] * step, &stage, &mut k[s]);
            }

            let mut err = 0.0;
            for i in 0..n {
                let mut e = 0.0;
                for (j, kj) in k.iter().enumerate() {
                    e += E[j] * kj[i];
                }
                let scale = cfg.atol + cfg.rtol * y[i].abs().max(y_new[i].abs());
                let r = step * e / scale;
                err += r * r;
            }
            let err = (err / n as f64).sqrt();

            steps += 1;
            if steps > cfg.max_steps {
                return Err(Error::StepBudgetExceeded(cfg.max_steps));
            }
            if !err.is_finite() || y_new.iter().any(|v| !v.is_finite()) {
                // shrink hard and retry; a genuinely divergent system will run out of budget
                h = step * 0.1;
                if h < 1e-14 * t.abs().max(1.0) {
                    return Err(Error::NonFinite(format!("adaptive step at t = {t}")));
                }
                continue;
            }

            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            if err <= 1.0 {
                t = if clipped { target } else { t + step };
                std::mem::swap(&mut y, &mut y_new);
                // first-same-as-last: the 7th stage is f at the new point
                k.swap(0, 6);
                if !clipped || factor < 1.0 {
                    h = step * factor;
                }
            } else {
                h = step * factor.min(1.0);
                if h < 1e-14 * t.abs().max(1.0) {
                    return Err(Error::NonFinite(format!(
                        "step size underflow at t = {t}"
                    )));
                }
            }
        }
        states.push(y.clone());
    }

    Ok(Solution {
        times: save_at.times().to_vec(),
        states,
    })
}
