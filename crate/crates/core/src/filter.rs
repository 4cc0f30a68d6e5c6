//! The α-SMC particle filter and its bootstrap special case.
//!
//! Weights are kept in log scale relative to a running shift: the true weight
//! of particle `i` is `exp(log_weights[i] + log_z_shift)`. After every step the
//! largest relative log-weight is zero.

use rand::Rng;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::graph::{sample_row, Connectivity, ConnectivityMatrix};
use crate::model::HmmModel;
use crate::phi::TestFunction;
use crate::rng::{Purpose, StreamKey};

#[derive(Clone, Debug, PartialEq)]
pub struct ParticleSystem {
    pub t: usize,
    pub states: Vec<f64>,
    pub log_weights: Vec<f64>,
    pub log_z_shift: f64,
    /// Mean of `X_t^i` given the previous generation and the weights, when
    /// the model's kernel mean is known in closed form.
    pub cond_means: Option<Vec<f64>>,
}

impl ParticleSystem {
    pub fn n(&self) -> usize {
        self.states.len()
    }

    fn log_sum_weights(&self) -> f64 {
        log_sum_exp(&self.log_weights)
    }

    /// `log Z_hat_t = log((1/N) sum_i W_t^i)`.
    pub fn log_z_hat(&self) -> f64 {
        self.log_z_shift + self.log_sum_weights() - (self.n() as f64).ln()
    }

    /// Normalised weights `W_bar_t^i`.
    pub fn normalized_weights(&self) -> Vec<f64> {
        let m = max_of(&self.log_weights);
        let w: Vec<f64> = self.log_weights.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    }

    /// `||W_bar_t||^2`.
    pub fn weight_sq_norm(&self) -> f64 {
        self.normalized_weights().iter().map(|w| w * w).sum()
    }

    /// `1 / (N ||W_bar_t||^2)`, in `(0, 1]`.
    pub fn ess_ratio(&self) -> f64 {
        1.0 / (self.n() as f64 * self.weight_sq_norm())
    }
}

/// Rows of `alpha_{t-1}` as seen by one step.
#[derive(Clone, Copy, Debug)]
pub enum RowSource<'a> {
    Complete,
    Matrix(&'a ConnectivityMatrix),
    /// `C` uniform distinct columns per row, drawn from the graph stream of `(t, i)`.
    RandomRows { c: usize },
}

impl Connectivity {
    pub fn rows(&self) -> RowSource<'_> {
        match self {
            Connectivity::Complete => RowSource::Complete,
            Connectivity::Fixed(m) => RowSource::Matrix(m),
            Connectivity::RandomRows { c } => RowSource::RandomRows { c: *c },
        }
    }
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = max_of(v);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `N` i.i.d. draws from the initial law, all weights one.
pub fn init(model: &HmmModel, n: usize, key: &StreamKey, exec: Execution) -> Result<ParticleSystem> {
    if n == 0 {
        return Err(Error::invalid("need at least one particle"));
    }
    let states = exec.map(n, |i| model.sample_initial(&mut key.rng(0, i, Purpose::Init)));
    Ok(ParticleSystem {
        t: 0,
        states,
        log_weights: vec![0.0; n],
        log_z_shift: 0.0,
        cond_means: None,
    })
}

struct Prepared<'a> {
    t: usize,
    model: &'a HmmModel,
    key: &'a StreamKey,
    parents: &'a [f64],
    /// `log(W_{t-1}^j g_{t-1}(X_{t-1}^j))`, relative to the old shift.
    log_mass: Vec<f64>,
    /// Kernel means of the parents, if known.
    means: Option<Vec<f64>>,
}

impl<'a> Prepared<'a> {
    fn new(sys: &'a ParticleSystem, model: &'a HmmModel, key: &'a StreamKey, exec: Execution) -> Result<Self> {
        let t = sys.t + 1;
        if t > model.horizon() {
            return Err(Error::TimeOutOfRange {
                t,
                horizon: model.horizon(),
            });
        }
        let parents = &sys.states[..];
        let log_mass = exec.map(sys.n(), |j| sys.log_weights[j] + model.log_potential(t - 1, parents[j]));
        let means = model
            .has_transition_mean()
            .then(|| exec.map(sys.n(), |j| model.transition_mean(t, parents[j]).unwrap_or(f64::NAN)));
        Ok(Prepared {
            t,
            model,
            key,
            parents,
            log_mass,
            means,
        })
    }

    fn propagate(&self, i: usize, ancestor: usize) -> f64 {
        let x = self.parents[ancestor];
        self.model
            .sample_transition(self.t, x, &mut self.key.rng(self.t, i, Purpose::Kernel))
    }

    /// Update of particle `i` from a row given as columns and log-entries.
    fn row_update(&self, i: usize, cols: &[usize], log_alpha: impl Fn(usize) -> f64) -> Result<(f64, f64, f64)> {
        let masses: Vec<f64> = cols
            .iter()
            .enumerate()
            .map(|(k, &j)| log_alpha(k) + self.log_mass[j])
            .collect();
        let mx = max_of(&masses);
        let rel: Vec<f64> = masses.iter().map(|m| (m - mx).exp()).collect();
        let total: f64 = rel.iter().sum();
        if !(total > 0.0 && total.is_finite() && mx.is_finite()) {
            return Err(Error::Internal(format!(
                "mixture masses of row {i} at step {} are degenerate",
                self.t
            )));
        }
        let u = self.key.rng(self.t, i, Purpose::Ancestor).random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = cols.len() - 1;
        for (k, r) in rel.iter().enumerate() {
            acc += r;
            if u < acc {
                pick = k;
                break;
            }
        }
        let cond_mean = match &self.means {
            Some(means) => cols.iter().zip(&rel).map(|(&j, r)| r * means[j]).sum::<f64>() / total,
            None => f64::NAN,
        };
        Ok((mx + total.ln(), self.propagate(i, cols[pick]), cond_mean))
    }
}

fn finish(t: usize, updates: Vec<(f64, f64, f64)>, old_shift: f64, with_means: bool) -> ParticleSystem {
    let n = updates.len();
    let mut log_weights = Vec::with_capacity(n);
    let mut states = Vec::with_capacity(n);
    let mut cond_means = Vec::with_capacity(if with_means { n } else { 0 });
    for (lw, x, m) in updates {
        log_weights.push(lw);
        states.push(x);
        if with_means {
            cond_means.push(m);
        }
    }
    let mx = max_of(&log_weights);
    log_weights.iter_mut().for_each(|l| *l -= mx);
    ParticleSystem {
        t,
        states,
        log_weights,
        log_z_shift: old_shift + mx,
        cond_means: with_means.then_some(cond_means),
    }
}

/// One step of the bootstrap filter: multinomial resampling of all particles.
pub fn bootstrap_step(
    sys: &ParticleSystem,
    model: &HmmModel,
    key: &StreamKey,
    exec: Execution,
) -> Result<ParticleSystem> {
    let prep = Prepared::new(sys, model, key, exec)?;
    let n = sys.n();
    let mx = max_of(&prep.log_mass);
    let mut cum = Vec::with_capacity(n);
    let mut acc = 0.0;
    for l in &prep.log_mass {
        acc += (l - mx).exp();
        cum.push(acc);
    }
    let total = acc;
    if !(total > 0.0 && total.is_finite() && mx.is_finite()) {
        return Err(Error::Internal(format!("resampling masses at step {} are degenerate", prep.t)));
    }
    let log_w = mx + total.ln() - (n as f64).ln();
    let cond_mean = prep.means.as_ref().map(|means| {
        prep.log_mass
            .iter()
            .zip(means)
            .map(|(l, m)| (l - mx).exp() * m)
            .sum::<f64>()
            / total
    });
    let updates = exec.map(n, |i| {
        let u = key.rng(prep.t, i, Purpose::Ancestor).random::<f64>() * total;
        let j = cum.partition_point(|&c| c <= u).min(n - 1);
        (log_w, prep.propagate(i, j), cond_mean.unwrap_or(f64::NAN))
    });
    Ok(finish(prep.t, updates, sys.log_z_shift, prep.means.is_some()))
}

/// One α-SMC step from time `t - 1` to `t`.
pub fn step(
    sys: &ParticleSystem,
    model: &HmmModel,
    rows: RowSource<'_>,
    key: &StreamKey,
    exec: Execution,
) -> Result<ParticleSystem> {
    let n = sys.n();
    match rows {
        RowSource::Complete => bootstrap_step(sys, model, key, exec),
        RowSource::Matrix(alpha) => {
            if alpha.n() != n {
                return Err(Error::invalid(format!(
                    "connectivity matrix is {0}x{0} but there are {n} particles",
                    alpha.n()
                )));
            }
            let prep = Prepared::new(sys, model, key, exec)?;
            let updates = exec.try_map(n, |i| {
                let (cols, la) = alpha.row_log(i);
                prep.row_update(i, cols, |k| la[k])
            })?;
            Ok(finish(prep.t, updates, sys.log_z_shift, prep.means.is_some()))
        }
        RowSource::RandomRows { c } => {
            if c == 0 || c > n {
                return Err(Error::Infeasible {
                    n,
                    c,
                    kind: "per-step-random-rows".into(),
                    reason: "need 1 <= C <= N".into(),
                });
            }
            let prep = Prepared::new(sys, model, key, exec)?;
            let la = -(c as f64).ln();
            let updates = exec.try_map(n, |i| {
                let cols = sample_row(n, c, &mut key.rng(prep.t, i, Purpose::Graph));
                prep.row_update(i, &cols, |_| la)
            })?;
            Ok(finish(prep.t, updates, sys.log_z_shift, prep.means.is_some()))
        }
    }
}

/// Estimates carried by a particle system at its current time.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimateRow {
    pub t: usize,
    pub log_z_hat: f64,
    pub ess_ratio: f64,
    /// `||W_bar_t||^2`.
    pub weight_sq_norm: f64,
    /// `pi_hat_t(phi)` per test function.
    pub pi_hat: Vec<f64>,
    /// `gamma_hat_t(phi) = Z_hat_t pi_hat_t(phi)`.
    pub gamma_hat: Vec<f64>,
    /// `mu_hat_t(phi) = (1/N) sum_i (W_t^i)^2 phi(X_t^i)`; may overflow to infinity.
    pub mu_hat: Vec<f64>,
    /// `log mu_hat_t(1)`, always representable.
    pub log_mu_hat_one: f64,
    /// Weighted average of the particles' conditional means (predictive mean of `X_t`).
    pub pred_mean: Option<f64>,
}

pub fn estimates(sys: &ParticleSystem, phis: &[TestFunction]) -> EstimateRow {
    let n = sys.n() as f64;
    let wbar = sys.normalized_weights();
    let sq: f64 = wbar.iter().map(|w| w * w).sum();
    let log_z_hat = sys.log_z_hat();
    let z_hat = log_z_hat.exp();
    // Squared weights relative to their largest value, which is exp(0).
    let w2: Vec<f64> = sys.log_weights.iter().map(|l| (2.0 * l).exp()).collect();
    let s2: f64 = w2.iter().sum();
    let log_mu_hat_one = 2.0 * sys.log_z_shift + (s2 / n).ln();
    let mu_scale = log_mu_hat_one.exp();
    let mut pi_hat = Vec::with_capacity(phis.len());
    let mut gamma_hat = Vec::with_capacity(phis.len());
    let mut mu_hat = Vec::with_capacity(phis.len());
    for phi in phis {
        let vals: Vec<f64> = sys.states.iter().map(|&x| phi.eval(x)).collect();
        let p: f64 = wbar.iter().zip(&vals).map(|(w, v)| w * v).sum();
        let m: f64 = w2.iter().zip(&vals).map(|(w, v)| w * v).sum::<f64>() / s2;
        pi_hat.push(p);
        gamma_hat.push(z_hat * p);
        mu_hat.push(if m == 0.0 { 0.0 } else { mu_scale * m });
    }
    let pred_mean = sys
        .cond_means
        .as_ref()
        .map(|cm| wbar.iter().zip(cm).map(|(w, m)| w * m).sum());
    EstimateRow {
        t: sys.t,
        log_z_hat,
        ess_ratio: 1.0 / (n * sq),
        weight_sq_norm: sq,
        pi_hat,
        gamma_hat,
        mu_hat,
        log_mu_hat_one,
        pred_mean,
    }
}

#[derive(Clone, Debug)]
pub struct FilterTrace {
    /// One row per time `0..=T`.
    pub rows: Vec<EstimateRow>,
    /// The particle system at the horizon.
    pub last: ParticleSystem,
}

/// α-SMC from time 0 to the model horizon.
pub fn run(
    model: &HmmModel,
    n: usize,
    connectivity: &Connectivity,
    key: &StreamKey,
    phis: &[TestFunction],
    exec: Execution,
) -> Result<FilterTrace> {
    drive(model, n, key, phis, exec, |sys| step(sys, model, connectivity.rows(), key, exec))
}

/// The bootstrap particle filter, written without reference to connectivity.
pub fn run_bootstrap(
    model: &HmmModel,
    n: usize,
    key: &StreamKey,
    phis: &[TestFunction],
    exec: Execution,
) -> Result<FilterTrace> {
    drive(model, n, key, phis, exec, |sys| bootstrap_step(sys, model, key, exec))
}

fn drive(
    model: &HmmModel,
    n: usize,
    key: &StreamKey,
    phis: &[TestFunction],
    exec: Execution,
    mut advance: impl FnMut(&ParticleSystem) -> Result<ParticleSystem>,
) -> Result<FilterTrace> {
    let mut sys = init(model, n, key, exec)?;
    let mut rows = Vec::with_capacity(model.horizon() + 1);
    rows.push(estimates(&sys, phis));
    for _ in 0..model.horizon() {
        sys = advance(&sys)?;
        rows.push(estimates(&sys, phis));
    }
    Ok(FilterTrace { rows, last: sys })
}
