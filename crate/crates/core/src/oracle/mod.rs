//! Exact reference values for models with finite support.
//!
//! A [`FiniteModel`] is either a discrete HMM or a quadrature discretisation of
//! a one-dimensional model whose kernel is the identity. On such a model the
//! filter, the normalising constants, the second-moment measures `mu_t` and the
//! asymptotic variances are finite-dimensional recursions.

mod kalman;

pub use kalman::{kalman_reference, tracking_kalman, KalmanStep};

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::model::{DiscreteHmm, HmmModel};
use crate::phi::TestFunction;

/// Largest number of paths [`brute_force_gamma`] will enumerate.
pub const PATH_LIMIT: u64 = 10_000_000;

/// Default quadrature for the tail example: `[-8, 8]` in cells of width `8e-4`.
pub const TAIL_GRID: (f64, f64, usize) = (-8.0, 8.0, 20_000);

#[derive(Clone, Debug, PartialEq)]
pub enum Kernel {
    Identity,
    /// Row-stochastic matrix `K(x, y)`.
    Dense(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FiniteModel {
    name: String,
    points: Vec<f64>,
    initial: Vec<f64>,
    kernel: Kernel,
    /// A single vector shared by all times, or one per time.
    potentials: Vec<Vec<f64>>,
    horizon: usize,
}

impl FiniteModel {
    pub fn new(
        name: impl Into<String>,
        points: Vec<f64>,
        initial: Vec<f64>,
        kernel: Kernel,
        potentials: Vec<Vec<f64>>,
        horizon: usize,
    ) -> Result<Self> {
        let n = points.len();
        if n == 0 || initial.len() != n {
            return Err(Error::invalid("support and initial masses must have the same nonzero length"));
        }
        let total: f64 = initial.iter().sum();
        if initial.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-10 {
            return Err(Error::invalid("initial masses must be a probability vector"));
        }
        if let Kernel::Dense(k) = &kernel {
            if k.len() != n || k.iter().any(|row| row.len() != n) {
                return Err(Error::invalid("kernel matrix has the wrong shape"));
            }
        }
        if potentials.is_empty() || potentials.iter().any(|g| g.len() != n || g.iter().any(|&v| !(v > 0.0))) {
            return Err(Error::invalid("potentials must be positive vectors on the support"));
        }
        Ok(FiniteModel {
            name: name.into(),
            points,
            initial,
            kernel,
            potentials,
            horizon,
        })
    }

    pub fn from_discrete(name: impl Into<String>, hmm: &DiscreteHmm, horizon: usize) -> Result<Self> {
        let n = hmm.n_states();
        let potentials = (0..horizon.max(1)).map(|t| hmm.potential_vector(t).to_vec()).collect();
        FiniteModel::new(
            name,
            (0..n).map(|k| k as f64).collect(),
            hmm.initial().to_vec(),
            Kernel::Dense(hmm.transition().to_vec()),
            potentials,
            horizon,
        )
    }

    /// One-step model with standard normal initial law, identity kernel and
    /// potential `base + bump 1(|x| < half_width)`, discretised into `cells`
    /// equal cells on `[lo, hi]` carrying their exact normal masses.
    pub fn tail_grid(base: f64, bump: f64, half_width: f64, lo: f64, hi: f64, cells: usize) -> Result<Self> {
        if !(hi > lo) || cells == 0 {
            return Err(Error::invalid("empty quadrature grid"));
        }
        let h = (hi - lo) / cells as f64;
        let edge = |k: usize| lo + k as f64 * h;
        let points: Vec<f64> = (0..cells).map(|k| lo + (k as f64 + 0.5) * h).collect();
        let mut initial: Vec<f64> = (0..cells).map(|k| normal_mass(edge(k), edge(k + 1))).collect();
        let total: f64 = initial.iter().sum();
        initial.iter_mut().for_each(|p| *p /= total);
        let g = points
            .iter()
            .map(|&x| if x.abs() < half_width { base + bump } else { base })
            .collect();
        FiniteModel::new("tail-example", points, initial, Kernel::Identity, vec![g], 1)
    }

    /// The exact counterpart of a library model, when there is one.
    pub fn from_model(model: &HmmModel) -> Result<Self> {
        if let Some(hmm) = model.discrete_arrays() {
            return FiniteModel::from_discrete(model.name(), hmm, model.horizon());
        }
        if let Some((base, bump, half_width)) = model.tail_parameters() {
            let (lo, hi, cells) = TAIL_GRID;
            return FiniteModel::tail_grid(base, bump, half_width, lo, hi, cells);
        }
        Err(Error::NoOracle(model.name().to_string()))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn size(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn potential(&self, t: usize) -> &[f64] {
        &self.potentials[t.min(self.potentials.len() - 1)]
    }

    fn kernel_entry(&self, x: usize, y: usize) -> f64 {
        match &self.kernel {
            Kernel::Identity => (x == y) as u8 as f64,
            Kernel::Dense(k) => k[x][y],
        }
    }

    /// `(K f)(x) = sum_y K(x, y) f(y)`.
    pub fn apply_kernel(&self, f: &[f64]) -> Vec<f64> {
        match &self.kernel {
            Kernel::Identity => f.to_vec(),
            Kernel::Dense(k) => k.iter().map(|row| dot(row, f)).collect(),
        }
    }

    /// `(m K)(y) = sum_x m(x) K(x, y)`.
    pub fn push_kernel(&self, m: &[f64]) -> Vec<f64> {
        match &self.kernel {
            Kernel::Identity => m.to_vec(),
            Kernel::Dense(k) => {
                let mut out = vec![0.0; m.len()];
                for (mx, row) in m.iter().zip(k) {
                    out.iter_mut().zip(row).for_each(|(o, kxy)| *o += mx * kxy);
                }
                out
            }
        }
    }

    /// `Q_t f = g_{t-1} (K_t f)`.
    pub fn q(&self, t: usize, f: &[f64]) -> Vec<f64> {
        let kf = self.apply_kernel(f);
        self.potential(t - 1).iter().zip(kf).map(|(g, v)| g * v).collect()
    }

    pub fn eval(&self, phi: TestFunction) -> Vec<f64> {
        self.points.iter().map(|&x| phi.eval(x)).collect()
    }
}

fn normal_mass(a: f64, b: f64) -> f64 {
    let s = std::f64::consts::SQRT_2;
    if a >= 0.0 {
        0.5 * (erfc(a / s) - erfc(b / s))
    } else {
        0.5 * (erfc(-b / s) - erfc(-a / s))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn squared(f: &[f64]) -> Vec<f64> {
    f.iter().map(|v| v * v).collect()
}

/// How many connections each particle has in the limiting second-moment flow.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Connections {
    /// Per-step random rows with `C` entries.
    Finite(f64),
    /// The complete matrix, i.e. the limit `C -> infinity`.
    Bootstrap,
}

impl Connections {
    pub fn from_c(c: Option<usize>) -> Self {
        match c {
            Some(c) => Connections::Finite(c as f64),
            None => Connections::Bootstrap,
        }
    }

    pub fn value(&self) -> Option<f64> {
        match *self {
            Connections::Finite(c) => Some(c),
            Connections::Bootstrap => None,
        }
    }
}

/// Exact quantities at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleState {
    pub t: usize,
    /// Predictive law `pi_t` on the support.
    pub pi: Vec<f64>,
    pub z: f64,
    /// `mu_t` as masses on the support.
    pub mu: Vec<f64>,
}

/// `pi_t` and `Z_t` from `pi_{t-1}` and `Z_{t-1}`.
pub fn exact_filter_step(pi_prev: &[f64], z_prev: f64, model: &FiniteModel, t: usize) -> Result<(Vec<f64>, f64)> {
    if t == 0 || t > model.horizon() {
        return Err(Error::TimeOutOfRange {
            t,
            horizon: model.horizon(),
        });
    }
    let g = model.potential(t - 1);
    let c = dot(pi_prev, g);
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Internal(format!("pi_{}(g) = {c} is not positive", t - 1)));
    }
    let w: Vec<f64> = pi_prev.iter().zip(g).map(|(p, g)| p * g / c).collect();
    Ok((model.push_kernel(&w), z_prev * c))
}

/// `mu_t = (1/C) (g_{t-1}^2 mu_{t-1}) K_t + ((C - 1)/C) Z_t^2 pi_t`.
pub fn mu_step(
    mu_prev: &[f64],
    pi_t: &[f64],
    z_t: f64,
    model: &FiniteModel,
    t: usize,
    connections: Connections,
) -> Result<Vec<f64>> {
    let limit = pi_t.iter().map(|p| z_t * z_t * p);
    match connections {
        Connections::Bootstrap => Ok(limit.collect()),
        Connections::Finite(c) => {
            if !(c >= 1.0) {
                return Err(Error::invalid(format!("C must be at least 1, got {c}")));
            }
            let g = model.potential(t - 1);
            let weighted: Vec<f64> = mu_prev.iter().zip(g).map(|(m, g)| m * g * g).collect();
            let first = model.push_kernel(&weighted);
            Ok(first
                .into_iter()
                .zip(limit)
                .map(|(a, b)| a / c + (c - 1.0) / c * b)
                .collect())
        }
    }
}

/// All exact quantities of a finite model up to a horizon.
#[derive(Clone, Debug)]
pub struct OracleTrace {
    model: FiniteModel,
    connections: Connections,
    states: Vec<OracleState>,
}

impl OracleTrace {
    pub fn compute(model: &FiniteModel, horizon: usize, connections: Connections) -> Result<Self> {
        if horizon > model.horizon() {
            return Err(Error::TimeOutOfRange {
                t: horizon,
                horizon: model.horizon(),
            });
        }
        let mut states = vec![OracleState {
            t: 0,
            pi: model.initial().to_vec(),
            z: 1.0,
            mu: model.initial().to_vec(),
        }];
        for t in 1..=horizon {
            let prev = &states[t - 1];
            let (pi, z) = exact_filter_step(&prev.pi, prev.z, model, t)?;
            let mu = mu_step(&prev.mu, &pi, z, model, t, connections)?;
            states.push(OracleState { t, pi, z, mu });
        }
        Ok(OracleTrace {
            model: model.clone(),
            connections,
            states,
        })
    }

    pub fn model(&self) -> &FiniteModel {
        &self.model
    }

    pub fn connections(&self) -> Connections {
        self.connections
    }

    pub fn horizon(&self) -> usize {
        self.states.len() - 1
    }

    pub fn state(&self, t: usize) -> Result<&OracleState> {
        self.states.get(t).ok_or(Error::TimeOutOfRange {
            t,
            horizon: self.horizon(),
        })
    }

    pub fn z(&self, t: usize) -> Result<f64> {
        Ok(self.state(t)?.z)
    }

    pub fn pi_of(&self, t: usize, f: &[f64]) -> Result<f64> {
        Ok(dot(&self.state(t)?.pi, f))
    }

    pub fn gamma_of(&self, t: usize, f: &[f64]) -> Result<f64> {
        let s = self.state(t)?;
        Ok(s.z * dot(&s.pi, f))
    }

    pub fn mu_of(&self, t: usize, f: &[f64]) -> Result<f64> {
        Ok(dot(&self.state(t)?.mu, f))
    }

    fn variance_at_zero(&self, f: &[f64]) -> f64 {
        let p = self.model.initial();
        let m = dot(p, f);
        p.iter().zip(f).map(|(p, v)| p * (v - m) * (v - m)).sum()
    }

    /// Asymptotic variance of `sqrt(N) (gamma_hat_t(f) - gamma_t(f))`:
    /// `V_t(f) = V_{t-1}(Q_t f) + mu_t(f^2) - Z_t^2 pi_t(f)^2`, `V_0 = Var_{pi_0}`.
    pub fn v_gamma(&self, t: usize, f: &[f64]) -> Result<f64> {
        self.state(t)?;
        let mut f = f.to_vec();
        let mut acc = 0.0;
        for s in (1..=t).rev() {
            let st = &self.states[s];
            let pf = dot(&st.pi, &f);
            acc += dot(&st.mu, &squared(&f)) - st.z * st.z * pf * pf;
            f = self.model.q(s, &f);
        }
        Ok(acc + self.variance_at_zero(&f))
    }

    /// Asymptotic variance of `sqrt(N) (pi_hat_t(f) - pi_t(f))`, by
    /// `V_t(f) = V_{t-1}(Q_t psi) / pi_{t-1}(g_{t-1})^2 + mu_t(psi^2) / Z_t^2`
    /// with `psi = f - pi_t(f)`.
    pub fn v_pi(&self, t: usize, f: &[f64]) -> Result<f64> {
        let st = self.state(t)?;
        if t == 0 {
            return Ok(self.variance_at_zero(f));
        }
        let pf = dot(&st.pi, f);
        let psi: Vec<f64> = f.iter().map(|v| v - pf).collect();
        let c = st.z / self.states[t - 1].z;
        let inner = self.v_pi(t - 1, &self.model.q(t, &psi))?;
        Ok(inner / (c * c) + dot(&st.mu, &squared(&psi)) / (st.z * st.z))
    }

    pub fn report(&self, t: usize, phi: TestFunction) -> Result<OracleReport> {
        let f = self.model.eval(phi);
        let st = self.state(t)?;
        Ok(OracleReport {
            model: self.model.name().to_string(),
            horizon: t,
            connections: self.connections.value(),
            phi: phi.name(),
            z: st.z,
            pi_phi: dot(&st.pi, &f),
            mu_phi: dot(&st.mu, &f),
            v_gamma: self.v_gamma(t, &f)?,
            v_pi: self.v_pi(t, &f)?,
            pi: st.pi.clone(),
            mu: st.mu.clone(),
        })
    }
}

/// Oracle output in exportable form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub model: String,
    #[serde(rename = "T")]
    pub horizon: usize,
    /// `None` for the bootstrap limit.
    #[serde(rename = "C")]
    pub connections: Option<f64>,
    pub phi: String,
    #[serde(rename = "Z")]
    pub z: f64,
    pub pi_phi: f64,
    pub mu_phi: f64,
    #[serde(rename = "V_gamma")]
    pub v_gamma: f64,
    #[serde(rename = "V_pi")]
    pub v_pi: f64,
    pub pi: Vec<f64>,
    pub mu: Vec<f64>,
}

/// `gamma_T(f)` by summing over every path `x_0, ..., x_T` of the model.
pub fn brute_force_gamma(model: &FiniteModel, horizon: usize, f: &[f64]) -> Result<f64> {
    let n = model.size();
    let paths = (n as u64).checked_pow(horizon as u32 + 1);
    if paths.is_none_or(|p| p > PATH_LIMIT) {
        return Err(Error::PathSpaceTooLarge {
            states: n,
            steps: horizon + 1,
            limit: PATH_LIMIT,
        });
    }
    if horizon > model.horizon() {
        return Err(Error::TimeOutOfRange {
            t: horizon,
            horizon: model.horizon(),
        });
    }
    let mut path = vec![0usize; horizon + 1];
    let mut total = 0.0;
    loop {
        let mut w = model.initial()[path[0]];
        for t in 1..=horizon {
            w *= model.potential(t - 1)[path[t - 1]] * model.kernel_entry(path[t - 1], path[t]);
        }
        total += w * f[path[horizon]];
        let mut k = horizon + 1;
        loop {
            if k == 0 {
                return Ok(total);
            }
            k -= 1;
            path[k] += 1;
            if path[k] < n {
                break;
            }
            path[k] = 0;
        }
    }
}
