//! Kalman filter for the linear-Gaussian `tracking` model.

use crate::error::{Error, Result};
use crate::model::HmmModel;

/// Exact predictive quantities at time `t` (conditioning on `y_0..y_{t-1}`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KalmanStep {
    pub t: usize,
    /// `log Z_t = log p(y_0, ..., y_{t-1})`.
    pub log_z: f64,
    /// `E(X_t | y_0..y_{t-1})`.
    pub pred_mean: f64,
    pub pred_var: f64,
}

/// Runs the filter for `x_0 = 0`, `x_{t+1} = -(x_t - 1)/2 + N(0, 1)` and
/// `y_t = x_t + N(0, sigma^2)`, returning times `0..=horizon`.
pub fn tracking_kalman(observations: &[f64], sigma: f64, horizon: usize) -> Vec<KalmanStep> {
    let r = sigma * sigma;
    let (mut m, mut p, mut log_z) = (0.0f64, 0.0f64, 0.0f64);
    let mut out = Vec::with_capacity(horizon + 1);
    out.push(KalmanStep {
        t: 0,
        log_z,
        pred_mean: m,
        pred_var: p,
    });
    for t in 1..=horizon {
        let y = observations[t - 1];
        let s = p + r;
        log_z += -0.5 * (y - m).powi(2) / s - 0.5 * (2.0 * std::f64::consts::PI * s).ln();
        let gain = p / s;
        let mf = m + gain * (y - m);
        let pf = (1.0 - gain) * p;
        m = 0.5 - mf / 2.0;
        p = pf / 4.0 + 1.0;
        out.push(KalmanStep {
            t,
            log_z,
            pred_mean: m,
            pred_var: p,
        });
    }
    out
}

/// Kalman reference for a `tracking` model built by the library.
pub fn kalman_reference(model: &HmmModel) -> Result<Vec<KalmanStep>> {
    match (model.tracking_sigma(), model.observations()) {
        (Some(sigma), Some(obs)) => Ok(tracking_kalman(obs, sigma, model.horizon())),
        _ => Err(Error::NoOracle(format!("{} (no Kalman form)", model.name()))),
    }
}
