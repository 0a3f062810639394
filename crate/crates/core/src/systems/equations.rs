//! Right-hand sides of the three ground-truth systems.

use crate::{Error, Result};

/// Start of the Lane–Emden integration, away from the singular origin.
pub const LANE_EMDEN_XI0: f64 = 1e-3;

/// Damped oscillator `m x'' = -k x - x'` in first-order form.
pub fn dho_rhs(_t: f64, y: [f64; 2], k: f64, m: f64) -> [f64; 2] {
    let [x, v] = y;
    [v, (-k * x - v) / m]
}

/// Lane–Emden equation in first-order form with `w = dθ/dξ`.
///
/// For non-integer `n` the density is clamped at zero before the power.
pub fn lane_emden_rhs(xi: f64, y: [f64; 2], n: f64) -> Result<[f64; 2]> {
    if !(xi > 0.0) {
        return Err(Error::SingularOrigin(xi));
    }
    let [theta, w] = y;
    Ok([w, -theta_pow(theta, n) - 2.0 * w / xi])
}

pub(crate) fn theta_pow(theta: f64, n: f64) -> f64 {
    if n.fract() == 0.0 && n.abs() < 64.0 {
        theta.powi(n as i32)
    } else {
        theta.max(0.0).powf(n)
    }
}

/// Series start values `(θ, w)` at small `ξ0`.
pub fn lane_emden_start(xi0: f64) -> [f64; 2] {
    [1.0 - xi0 * xi0 / 6.0, -xi0 / 3.0]
}

/// Lotka–Volterra `(αx - βxy, δxy - γy)`.
pub fn lve_rhs(_t: f64, y: [f64; 2], alpha: f64, beta: f64, gamma: f64, delta: f64) -> [f64; 2] {
    let [x, p] = y;
    [alpha * x - beta * x * p, delta * x * p - gamma * p]
}

/// First integral of the Lotka–Volterra flow.
pub fn lve_invariant(y: [f64; 2], alpha: f64, beta: f64, gamma: f64, delta: f64) -> f64 {
    let [x, p] = y;
    delta * x - gamma * x.ln() + beta * p - alpha * p.ln()
}
