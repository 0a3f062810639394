use rand::Rng;
use serde::{Deserialize, Serialize};

use super::equations::{
    dho_rhs, lane_emden_rhs, lane_emden_start, lve_rhs, LANE_EMDEN_XI0,
};
use crate::odeint::{integrate_adaptive, SolveConfig, TimeGrid, VectorField};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemId {
    Dho,
    LaneEmden,
    LotkaVolterra,
}

impl SystemId {
    pub fn name(self) -> &'static str {
        match self {
            SystemId::Dho => "dho",
            SystemId::LaneEmden => "lane_emden",
            SystemId::LotkaVolterra => "lotka_volterra",
        }
    }

    /// Number of observed components per time point.
    pub fn observed_dim(self) -> usize {
        match self {
            SystemId::Dho | SystemId::LotkaVolterra => 2,
            SystemId::LaneEmden => 1,
        }
    }

    pub fn default_count(self) -> usize {
        match self {
            SystemId::Dho => 10_000,
            SystemId::LaneEmden => 1_000,
            SystemId::LotkaVolterra => 22_000,
        }
    }
}

impl std::fmt::Display for SystemId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SystemId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "dho" => Ok(SystemId::Dho),
            "lane_emden" | "lane" => Ok(SystemId::LaneEmden),
            "lotka_volterra" | "lve" => Ok(SystemId::LotkaVolterra),
            _ => Err(Error::UnknownSystem(s.to_string())),
        }
    }
}

/// Parameters and initial conditions of one ground-truth instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "system", rename_all = "snake_case")]
pub enum SystemConfig {
    Dho {
        k: f64,
        m: f64,
        x0: f64,
        v0: f64,
    },
    LaneEmden {
        n: f64,
    },
    LotkaVolterra {
        alpha: f64,
        beta: f64,
        gamma: f64,
        delta: f64,
        x0: f64,
        y0: f64,
    },
}

impl SystemConfig {
    pub fn id(&self) -> SystemId {
        match self {
            SystemConfig::Dho { .. } => SystemId::Dho,
            SystemConfig::LaneEmden { .. } => SystemId::LaneEmden,
            SystemConfig::LotkaVolterra { .. } => SystemId::LotkaVolterra,
        }
    }

    /// Time at which the initial state is defined.
    pub fn t_start(&self) -> f64 {
        match self {
            SystemConfig::LaneEmden { .. } => LANE_EMDEN_XI0,
            _ => 0.0,
        }
    }

    pub fn initial_state(&self) -> [f64; 2] {
        match *self {
            SystemConfig::Dho { x0, v0, .. } => [x0, v0],
            SystemConfig::LaneEmden { .. } => lane_emden_start(LANE_EMDEN_XI0),
            SystemConfig::LotkaVolterra { x0, y0, .. } => [x0, y0],
        }
    }

    /// Observed components of the initial state.
    pub fn initial_observation(&self) -> Vec<f64> {
        let s = self.initial_state();
        match self {
            SystemConfig::LaneEmden { .. } => vec![s[0]],
            _ => s.to_vec(),
        }
    }

    /// Flat parameter vector in a fixed per-system order.
    pub fn to_vec(&self) -> Vec<f64> {
        match *self {
            SystemConfig::Dho { k, m, x0, v0 } => vec![k, m, x0, v0],
            SystemConfig::LaneEmden { n } => vec![n],
            SystemConfig::LotkaVolterra {
                alpha,
                beta,
                gamma,
                delta,
                x0,
                y0,
            } => vec![alpha, beta, gamma, delta, x0, y0],
        }
    }

    pub fn from_vec(id: SystemId, v: &[f64]) -> Result<Self> {
        let want = match id {
            SystemId::Dho => 4,
            SystemId::LaneEmden => 1,
            SystemId::LotkaVolterra => 6,
        };
        if v.len() != want {
            return Err(Error::Format(format!(
                "{id} configuration needs {want} values, got {}",
                v.len()
            )));
        }
        Ok(match id {
            SystemId::Dho => SystemConfig::Dho {
                k: v[0],
                m: v[1],
                x0: v[2],
                v0: v[3],
            },
            SystemId::LaneEmden => SystemConfig::LaneEmden { n: v[0] },
            SystemId::LotkaVolterra => SystemConfig::LotkaVolterra {
                alpha: v[0],
                beta: v[1],
                gamma: v[2],
                delta: v[3],
                x0: v[4],
                y0: v[5],
            },
        })
    }

    /// Column names matching [`SystemConfig::to_vec`].
    pub fn column_names(id: SystemId) -> &'static [&'static str] {
        match id {
            SystemId::Dho => &["k", "m", "x0", "v0"],
            SystemId::LaneEmden => &["n"],
            SystemId::LotkaVolterra => &["alpha", "beta", "gamma", "delta", "x0", "y0"],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.to_vec();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite {} parameters", self.id())));
        }
        match *self {
            SystemConfig::Dho { m, .. } if m <= 0.0 => {
                Err(Error::InvalidArgument("oscillator mass must be positive".into()))
            }
            SystemConfig::LotkaVolterra { .. } if v.iter().any(|&x| x <= 0.0) => Err(
                Error::InvalidArgument("Lotka–Volterra parameters must be positive".into()),
            ),
            _ => Ok(()),
        }
    }

    /// Noiseless observed values at `times`, integrated adaptively from
    /// [`SystemConfig::t_start`].
    pub fn simulate(&self, times: &[f64], cfg: &SolveConfig) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        let grid = TimeGrid::new(times.to_vec())?;
        let t0 = self.t_start();
        let tf = grid.last().max(t0);
        let y0 = self.initial_state();
        let states = match *self {
            SystemConfig::LotkaVolterra { .. } => {
                // positive populations: integrate (ln x, ln y) so tolerances act relatively
                let log0 = [y0[0].ln(), y0[1].ln()];
                let sol = integrate_adaptive(&LogLveField(*self), &log0, t0, tf, &grid, cfg)?;
                sol.states
                    .into_iter()
                    .map(|s| vec![s[0].exp(), s[1].exp()])
                    .collect()
            }
            SystemConfig::LaneEmden { .. } => {
                let sol = integrate_adaptive(&SystemField(*self), &y0, t0, tf, &grid, cfg)?;
                sol.states.into_iter().map(|s| vec![s[0]]).collect()
            }
            SystemConfig::Dho { .. } => {
                integrate_adaptive(&SystemField(*self), &y0, t0, tf, &grid, cfg)?.states
            }
        };
        Ok(states)
    }
}

/// Lotka–Volterra in logarithmic coordinates `(ln x, ln y)`.
struct LogLveField(SystemConfig);

impl VectorField for LogLveField {
    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        if let SystemConfig::LotkaVolterra {
            alpha,
            beta,
            gamma,
            delta,
            ..
        } = self.0
        {
            dy[0] = alpha - beta * y[1].exp();
            dy[1] = delta * y[0].exp() - gamma;
        }
    }
}

/// Ground-truth vector field of a [`SystemConfig`].
#[derive(Debug, Clone, Copy)]
pub struct SystemField(pub SystemConfig);

impl VectorField for SystemField {
    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        let s = [y[0], y[1]];
        let r = match self.0 {
            SystemConfig::Dho { k, m, .. } => dho_rhs(t, s, k, m),
            SystemConfig::LaneEmden { n } => {
                lane_emden_rhs(t, s, n).unwrap_or([f64::NAN, f64::NAN])
            }
            SystemConfig::LotkaVolterra {
                alpha,
                beta,
                gamma,
                delta,
                ..
            } => lve_rhs(t, s, alpha, beta, gamma, delta),
        };
        dy.copy_from_slice(&r);
    }
}

/// Closed interval used for uniform sampling; `lo == hi` pins the value.
pub type Interval = [f64; 2];

pub(crate) fn draw<R: Rng + ?Sized>(rng: &mut R, iv: Interval) -> f64 {
    if iv[0] == iv[1] {
        iv[0]
    } else {
        rng.random_range(iv[0]..iv[1])
    }
}

/// Predator rate ranges for Lotka–Volterra data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LveRanges {
    /// γ, δ ∈ [0.5, 0.6]
    DeltaHigh,
    /// γ ∈ [0.5, 0.6], δ ∈ [0.2, 0.3]
    #[default]
    DeltaLow,
}

impl std::str::FromStr for LveRanges {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "delta_high" => Ok(LveRanges::DeltaHigh),
            "delta_low" => Ok(LveRanges::DeltaLow),
            other => Err(Error::InvalidArgument(format!("unknown lve_ranges `{other}`"))),
        }
    }
}

/// Parameter sampling ranges per system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "system", rename_all = "snake_case")]
pub enum ParamRanges {
    Dho {
        k: Interval,
        m: f64,
        x0: Interval,
        v0: Interval,
    },
    LaneEmden {
        n: Vec<f64>,
    },
    LotkaVolterra {
        alpha: Interval,
        beta: Interval,
        gamma: Interval,
        delta: Interval,
        x0: Interval,
        y0: Interval,
    },
}

impl ParamRanges {
    pub fn id(&self) -> SystemId {
        match self {
            ParamRanges::Dho { .. } => SystemId::Dho,
            ParamRanges::LaneEmden { .. } => SystemId::LaneEmden,
            ParamRanges::LotkaVolterra { .. } => SystemId::LotkaVolterra,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SystemConfig {
        match self {
            ParamRanges::Dho { k, m, x0, v0 } => SystemConfig::Dho {
                k: draw(rng, *k),
                m: *m,
                x0: draw(rng, *x0),
                v0: draw(rng, *v0),
            },
            ParamRanges::LaneEmden { n } => SystemConfig::LaneEmden {
                n: n[rng.random_range(0..n.len())],
            },
            ParamRanges::LotkaVolterra {
                alpha,
                beta,
                gamma,
                delta,
                x0,
                y0,
            } => SystemConfig::LotkaVolterra {
                alpha: draw(rng, *alpha),
                beta: draw(rng, *beta),
                gamma: draw(rng, *gamma),
                delta: draw(rng, *delta),
                x0: draw(rng, *x0),
                y0: draw(rng, *y0),
            },
        }
    }

    fn validate(&self) -> Result<()> {
        let ivs: Vec<Interval> = match self {
            ParamRanges::Dho { k, x0, v0, m } => {
                if !(*m > 0.0) {
                    return Err(Error::InvalidArgument("mass must be positive".into()));
                }
                vec![*k, *x0, *v0]
            }
            ParamRanges::LaneEmden { n } => {
                if n.is_empty() || n.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidArgument(
                        "polytropic index list must be non-empty and finite".into(),
                    ));
                }
                vec![]
            }
            ParamRanges::LotkaVolterra {
                alpha,
                beta,
                gamma,
                delta,
                x0,
                y0,
            } => {
                let all = vec![*alpha, *beta, *gamma, *delta, *x0, *y0];
                if all.iter().any(|iv| iv[0] <= 0.0) {
                    return Err(Error::InvalidArgument(
                        "Lotka–Volterra ranges must be positive".into(),
                    ));
                }
                all
            }
        };
        for iv in ivs {
            if !(iv[0].is_finite() && iv[1].is_finite() && iv[0] <= iv[1]) {
                return Err(Error::InvalidArgument(format!("bad sampling interval {iv:?}")));
            }
        }
        Ok(())
    }
}

/// Recipe for one dataset: time sampling, noise and parameter ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingSpec {
    pub n_points: usize,
    pub t_final: Interval,
    pub noise_sigma: f64,
    pub ranges: ParamRanges,
}

fn scale(iv: Interval, f: f64) -> Interval {
    [iv[0] * f, iv[1] * f]
}

impl SamplingSpec {
    pub fn dho() -> Self {
        Self {
            n_points: 30,
            t_final: [15.0, 20.0],
            noise_sigma: 0.05,
            ranges: ParamRanges::Dho {
                k: [0.12, 0.12],
                m: 1.0,
                x0: [1.0, 4.0],
                v0: [1.0, 4.0],
            },
        }
    }

    pub fn lane_emden() -> Self {
        Self {
            n_points: 30,
            t_final: [5.0, 9.0],
            noise_sigma: 0.05,
            ranges: ParamRanges::LaneEmden {
                n: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            },
        }
    }

    pub fn lotka_volterra(preset: LveRanges) -> Self {
        let delta = match preset {
            LveRanges::DeltaHigh => [0.5, 0.6],
            LveRanges::DeltaLow => [0.2, 0.3],
        };
        Self {
            n_points: 150,
            t_final: [25.0, 30.0],
            noise_sigma: 0.05,
            ranges: ParamRanges::LotkaVolterra {
                alpha: [1.0, 3.5],
                beta: [1.0, 3.5],
                gamma: [0.5, 0.6],
                delta,
                x0: [1.0, 6.0],
                y0: [1.0, 6.0],
            },
        }
    }

    pub fn for_system(id: SystemId, lve: LveRanges) -> Self {
        match id {
            SystemId::Dho => Self::dho(),
            SystemId::LaneEmden => Self::lane_emden(),
            SystemId::LotkaVolterra => Self::lotka_volterra(lve),
        }
    }

    pub fn system(&self) -> SystemId {
        self.ranges.id()
    }

    pub fn t_start(&self) -> f64 {
        match self.ranges {
            ParamRanges::LaneEmden { .. } => LANE_EMDEN_XI0,
            _ => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_points == 0 {
            return Err(Error::InvalidArgument("n_points must be positive".into()));
        }
        let [lo, hi] = self.t_final;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi && lo > self.t_start()) {
            return Err(Error::InvalidArgument(format!(
                "t_final range {:?} must lie after {}",
                self.t_final,
                self.t_start()
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument("noise_sigma must be >= 0".into()));
        }
        self.ranges.validate()
    }

    /// Oscillator with the spring constant lowered by 30%.
    pub fn dho_k_shift(&self) -> Result<Self> {
        match &self.ranges {
            ParamRanges::Dho { k, m, x0, v0 } => Ok(Self {
                ranges: ParamRanges::Dho {
                    k: scale(*k, 0.7),
                    m: *m,
                    x0: *x0,
                    v0: *v0,
                },
                ..self.clone()
            }),
            _ => Err(Error::InvalidArgument("dho_k30 needs the dho system".into())),
        }
    }

    /// Oscillator with both initial-condition ranges raised by 30%.
    pub fn dho_ic_shift(&self) -> Result<Self> {
        match &self.ranges {
            ParamRanges::Dho { k, m, x0, v0 } => Ok(Self {
                ranges: ParamRanges::Dho {
                    k: *k,
                    m: *m,
                    x0: scale(*x0, 1.3),
                    v0: scale(*v0, 1.3),
                },
                ..self.clone()
            }),
            _ => Err(Error::InvalidArgument("dho_ic30 needs the dho system".into())),
        }
    }

    /// Each of α, β, γ, δ drawn from `[hi, 1.25 hi]`, just above its training range.
    pub fn lve_shift(&self) -> Result<Self> {
        let up = |iv: Interval| [iv[1], 1.25 * iv[1]];
        match &self.ranges {
            ParamRanges::LotkaVolterra {
                alpha,
                beta,
                gamma,
                delta,
                x0,
                y0,
            } => Ok(Self {
                ranges: ParamRanges::LotkaVolterra {
                    alpha: up(*alpha),
                    beta: up(*beta),
                    gamma: up(*gamma),
                    delta: up(*delta),
                    x0: *x0,
                    y0: *y0,
                },
                ..self.clone()
            }),
            _ => Err(Error::InvalidArgument("lve25 needs the lotka_volterra system".into())),
        }
    }

    /// α, β, γ, δ bounds widened to `[(1 - f) lo, (1 + f) hi]`.
    pub fn lve_widen(&self, f: f64) -> Result<Self> {
        let widen = |iv: Interval| [(1.0 - f) * iv[0], (1.0 + f) * iv[1]];
        match &self.ranges {
            ParamRanges::LotkaVolterra {
                alpha,
                beta,
                gamma,
                delta,
                x0,
                y0,
            } => Ok(Self {
                ranges: ParamRanges::LotkaVolterra {
                    alpha: widen(*alpha),
                    beta: widen(*beta),
                    gamma: widen(*gamma),
                    delta: widen(*delta),
                    x0: *x0,
                    y0: *y0,
                },
                ..self.clone()
            }),
            _ => Err(Error::InvalidArgument("widening needs the lotka_volterra system".into())),
        }
    }
}

/// Named out-of-domain presets for evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OodPreset {
    /// In-domain sampling.
    None,
    /// Lotka–Volterra rates 25% above their training ranges.
    Lve25,
    /// Oscillator spring constant 30% lower.
    DhoK30,
    /// Oscillator initial conditions 30% higher.
    DhoIc30,
}

impl OodPreset {
    pub fn apply(self, spec: &SamplingSpec) -> Result<SamplingSpec> {
        match self {
            OodPreset::None => Ok(spec.clone()),
            OodPreset::Lve25 => spec.lve_shift(),
            OodPreset::DhoK30 => spec.dho_k_shift(),
            OodPreset::DhoIc30 => spec.dho_ic_shift(),
        }
    }
}

impl std::str::FromStr for OodPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "none" | "in" => Ok(OodPreset::None),
            "lve25" => Ok(OodPreset::Lve25),
            "dho_k30" | "dhok30" => Ok(OodPreset::DhoK30),
            "dho_ic30" | "dhoic30" => Ok(OodPreset::DhoIc30),
            other => Err(Error::InvalidArgument(format!("unknown out-of-domain preset `{other}`"))),
        }
    }
}
