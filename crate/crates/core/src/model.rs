//! State-space models: initial law, Markov kernels and positive potentials.
//!
//! The observation sequence is generated once and folded into the potentials,
//! so a filter only ever sees `g_t(x)`. States are one-dimensional reals;
//! discrete models encode state `k` as `k as f64`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::hash_words;

const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StateKind {
    Continuous,
    Discrete { n_states: usize },
}

/// Exact arrays of a finite-state model.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteHmm {
    initial: Vec<f64>,
    transition: Vec<Vec<f64>>,
    /// Either a single potential vector shared by all times, or one per time.
    potentials: Vec<Vec<f64>>,
}

impl DiscreteHmm {
    pub fn new(
        initial: Vec<f64>,
        transition: Vec<Vec<f64>>,
        potentials: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n = initial.len();
        if n == 0 {
            return Err(Error::invalid("discrete model needs at least one state"));
        }
        check_probability_vector(&initial, "initial distribution")?;
        if transition.len() != n {
            return Err(Error::invalid(format!(
                "transition matrix has {} rows, expected {n}",
                transition.len()
            )));
        }
        for (k, row) in transition.iter().enumerate() {
            if row.len() != n {
                return Err(Error::invalid(format!("transition row {k} has wrong length")));
            }
            check_probability_vector(row, &format!("transition row {k}"))?;
        }
        if potentials.is_empty() {
            return Err(Error::invalid("at least one potential vector is required"));
        }
        for g in &potentials {
            if g.len() != n {
                return Err(Error::invalid("potential vector has wrong length"));
            }
            if g.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::invalid("potentials must be finite and strictly positive"));
            }
        }
        Ok(DiscreteHmm {
            initial,
            transition,
            potentials,
        })
    }

    pub fn n_states(&self) -> usize {
        self.initial.len()
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    /// Potential vector `g_t`.
    pub fn potential_vector(&self, t: usize) -> &[f64] {
        if self.potentials.len() == 1 {
            &self.potentials[0]
        } else {
            &self.potentials[t.min(self.potentials.len() - 1)]
        }
    }

    fn max_potential(&self) -> f64 {
        self.potentials
            .iter()
            .flatten()
            .copied()
            .fold(f64::MIN, f64::max)
    }

    fn min_potential(&self) -> f64 {
        self.potentials
            .iter()
            .flatten()
            .copied()
            .fold(f64::MAX, f64::min)
    }
}

fn check_probability_vector(v: &[f64], what: &str) -> Result<()> {
    if v.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
        return Err(Error::invalid(format!("{what} has negative or non-finite entries")));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > ROW_SUM_TOL {
        return Err(Error::invalid(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
enum Dynamics {
    /// `x' = beta x + sqrt(1 - beta^2) xi`, `g(x) = base + bump 1(|x - center| < half_width)`.
    Ar1Indicator {
        beta: f64,
        noise_sd: f64,
        center: f64,
        half_width: f64,
        base: f64,
        bump: f64,
    },
    /// `x' = -(x - 1)/2 + xi`, Gaussian likelihood of the frozen observations.
    Tracking { sigma: f64, observations: Vec<f64> },
    /// Identity kernel, `g(x) = base + bump 1(|x| < half_width)`.
    TailExample {
        base: f64,
        bump: f64,
        half_width: f64,
    },
    Discrete(DiscreteHmm),
}

/// Sampler/evaluator bundle for `pi_0`, `K_t` and `g_t`.
///
/// Immutable after construction; all randomness comes from caller-supplied generators.
#[derive(Clone, Debug, PartialEq)]
pub struct HmmModel {
    name: String,
    dynamics: Dynamics,
    horizon: usize,
    kappa_g: f64,
    kappa_g_lower: Option<f64>,
}

impl HmmModel {
    /// Wraps exact discrete arrays as a model with the given horizon.
    pub fn discrete(name: impl Into<String>, hmm: DiscreteHmm, horizon: usize) -> Result<Self> {
        if horizon < 1 {
            return Err(Error::invalid("horizon must be at least 1"));
        }
        let kappa_g = hmm.max_potential();
        let lower = hmm.min_potential();
        Ok(HmmModel {
            name: name.into(),
            dynamics: Dynamics::Discrete(hmm),
            horizon,
            kappa_g,
            kappa_g_lower: Some(lower),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Declared upper bound on every potential.
    pub fn kappa_g(&self) -> f64 {
        self.kappa_g
    }

    /// Declared lower bound on every potential, when one exists.
    pub fn kappa_g_lower(&self) -> Option<f64> {
        self.kappa_g_lower
    }

    /// Two-sided constant `k` with `1/k <= g <= k`, when a lower bound is declared.
    pub fn two_sided_kappa(&self) -> Option<f64> {
        self.kappa_g_lower
            .map(|lo| self.kappa_g.max(1.0 / lo).max(1.0))
    }

    pub fn state_kind(&self) -> StateKind {
        match &self.dynamics {
            Dynamics::Discrete(h) => StateKind::Discrete {
                n_states: h.n_states(),
            },
            _ => StateKind::Continuous,
        }
    }

    pub fn discrete_arrays(&self) -> Option<&DiscreteHmm> {
        match &self.dynamics {
            Dynamics::Discrete(h) => Some(h),
            _ => None,
        }
    }

    /// Frozen observations, for models that have them.
    pub fn observations(&self) -> Option<&[f64]> {
        match &self.dynamics {
            Dynamics::Tracking { observations, .. } => Some(observations),
            _ => None,
        }
    }

    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.dynamics {
            Dynamics::Ar1Indicator { .. } | Dynamics::TailExample { .. } => {
                rng.sample(StandardNormal)
            }
            Dynamics::Tracking { .. } => 0.0,
            Dynamics::Discrete(h) => sample_categorical(h.initial(), rng) as f64,
        }
    }

    /// Draws from `K_t(x, .)`, `t >= 1`.
    pub fn sample_transition<R: Rng + ?Sized>(&self, _t: usize, x: f64, rng: &mut R) -> f64 {
        match &self.dynamics {
            Dynamics::Ar1Indicator { beta, noise_sd, .. } => {
                let xi: f64 = rng.sample(StandardNormal);
                beta * x + noise_sd * xi
            }
            Dynamics::Tracking { .. } => {
                let xi: f64 = rng.sample(StandardNormal);
                -(x - 1.0) / 2.0 + xi
            }
            Dynamics::TailExample { .. } => x,
            Dynamics::Discrete(h) => sample_categorical(&h.transition()[x as usize], rng) as f64,
        }
    }

    /// Mean of `K_t(x, .)`, for models where it is available in closed form.
    pub fn transition_mean(&self, _t: usize, x: f64) -> Option<f64> {
        match &self.dynamics {
            Dynamics::Ar1Indicator { beta, .. } => Some(beta * x),
            Dynamics::Tracking { .. } => Some(-(x - 1.0) / 2.0),
            Dynamics::TailExample { .. } => Some(x),
            Dynamics::Discrete(_) => None,
        }
    }

    /// Observation noise of the `tracking` model.
    pub fn tracking_sigma(&self) -> Option<f64> {
        match self.dynamics {
            Dynamics::Tracking { sigma, .. } => Some(sigma),
            _ => None,
        }
    }

    /// `(base, bump, half_width)` of the `tail-example` potential.
    pub fn tail_parameters(&self) -> Option<(f64, f64, f64)> {
        match self.dynamics {
            Dynamics::TailExample {
                base,
                bump,
                half_width,
            } => Some((base, bump, half_width)),
            _ => None,
        }
    }

    pub fn has_transition_mean(&self) -> bool {
        !matches!(self.dynamics, Dynamics::Discrete(_))
    }

    /// `log g_t(x)` without range checks; `t` must not exceed the horizon.
    #[inline]
    pub fn log_potential(&self, t: usize, x: f64) -> f64 {
        match &self.dynamics {
            Dynamics::Ar1Indicator {
                center,
                half_width,
                base,
                bump,
                ..
            } => {
                if (x - center).abs() < *half_width {
                    (base + bump).ln()
                } else {
                    base.ln()
                }
            }
            Dynamics::Tracking {
                sigma,
                observations,
            } => {
                let z = (observations[t] - x) / sigma;
                -0.5 * z * z - (sigma * (2.0 * std::f64::consts::PI).sqrt()).ln()
            }
            Dynamics::TailExample {
                base,
                bump,
                half_width,
            } => {
                if x.abs() < *half_width {
                    (base + bump).ln()
                } else {
                    base.ln()
                }
            }
            Dynamics::Discrete(h) => h.potential_vector(t)[x as usize].ln(),
        }
    }

    /// `g_t(x)` without range checks.
    #[inline]
    pub fn potential(&self, t: usize, x: f64) -> f64 {
        match &self.dynamics {
            Dynamics::Discrete(h) => h.potential_vector(t)[x as usize],
            _ => self.log_potential(t, x).exp(),
        }
    }

    /// `g_t(x)`, checking that `0 <= t <= horizon`.
    pub fn evaluate_potential(&self, t: usize, x: f64) -> Result<f64> {
        if t > self.horizon {
            return Err(Error::TimeOutOfRange {
                t,
                horizon: self.horizon,
            });
        }
        if let StateKind::Discrete { n_states } = self.state_kind() {
            if !(x >= 0.0 && x.fract() == 0.0 && (x as usize) < n_states) {
                return Err(Error::invalid(format!("{x} is not a state of this model")));
            }
        }
        Ok(self.potential(t, x))
    }
}

fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // Rounding left `acc` a hair below one; take the last state with positive mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

fn default_beta() -> f64 {
    0.9
}
fn default_ar1_horizon() -> usize {
    6
}
fn default_sigma() -> f64 {
    0.2
}
fn default_tracking_horizon() -> usize {
    200
}
fn default_two_state_transition() -> Vec<Vec<f64>> {
    vec![vec![0.9, 0.1], vec![0.2, 0.8]]
}
fn default_two_state_potential() -> Vec<f64> {
    vec![1.0, 2.0]
}
fn default_two_state_initial() -> Vec<f64> {
    vec![0.5, 0.5]
}
fn default_two_state_horizon() -> usize {
    5
}

/// Declarative description of one of the shipped models, as it appears in configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BuiltinModel {
    /// Gaussian AR(1) prior with an indicator-bump potential around 2.
    Ar1Indicator {
        #[serde(default = "default_beta")]
        beta: f64,
        #[serde(rename = "T", default = "default_ar1_horizon")]
        horizon: usize,
    },
    /// Linear-Gaussian tracking model with simulated observations.
    Tracking {
        #[serde(default = "default_sigma")]
        sigma: f64,
        #[serde(rename = "T", default = "default_tracking_horizon")]
        horizon: usize,
        #[serde(default)]
        observation_seed: u64,
    },
    /// One-step model with a sharp potential at the origin and an identity kernel.
    TailExample,
    /// Finite-state model with user-supplied arrays (two states by default).
    TwoState {
        #[serde(rename = "K", default = "default_two_state_transition")]
        transition: Vec<Vec<f64>>,
        #[serde(rename = "g", default = "default_two_state_potential")]
        potential: Vec<f64>,
        #[serde(default = "default_two_state_initial")]
        pi0: Vec<f64>,
        #[serde(rename = "T", default = "default_two_state_horizon")]
        horizon: usize,
    },
}

impl BuiltinModel {
    pub fn tag(&self) -> &'static str {
        match self {
            BuiltinModel::Ar1Indicator { .. } => "ar1-indicator",
            BuiltinModel::Tracking { .. } => "tracking",
            BuiltinModel::TailExample => "tail-example",
            BuiltinModel::TwoState { .. } => "two-state",
        }
    }

    /// Default parameters for a tag.
    pub fn from_tag(tag: &str) -> Result<Self> {
        let value = serde_json::json!({ "tag": tag });
        serde_json::from_value(value).map_err(|_| Error::UnknownModel(tag.to_string()))
    }

    /// The two-state model with default arrays and the given horizon.
    pub fn two_state(horizon: usize) -> Self {
        BuiltinModel::TwoState {
            transition: default_two_state_transition(),
            potential: default_two_state_potential(),
            pi0: default_two_state_initial(),
            horizon,
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            BuiltinModel::Ar1Indicator { horizon, .. }
            | BuiltinModel::Tracking { horizon, .. }
            | BuiltinModel::TwoState { horizon, .. } => *horizon,
            BuiltinModel::TailExample => 1,
        }
    }

    pub fn with_horizon(&self, horizon: usize) -> Self {
        let mut m = self.clone();
        match &mut m {
            BuiltinModel::Ar1Indicator { horizon: h, .. }
            | BuiltinModel::Tracking { horizon: h, .. }
            | BuiltinModel::TwoState { horizon: h, .. } => *h = horizon,
            BuiltinModel::TailExample => {}
        }
        m
    }
}

/// Builds a fully specified model. Observations, when the model has any, are a
/// deterministic function of the observation seed.
pub fn make_builtin(spec: &BuiltinModel) -> Result<HmmModel> {
    if spec.horizon() < 1 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    match spec {
        BuiltinModel::Ar1Indicator { beta, horizon } => {
            if !(beta.abs() < 1.0) {
                return Err(Error::invalid("AR(1) coefficient must lie in (-1, 1)"));
            }
            Ok(HmmModel {
                name: spec.tag().to_string(),
                dynamics: Dynamics::Ar1Indicator {
                    beta: *beta,
                    noise_sd: (1.0 - beta * beta).sqrt(),
                    center: 2.0,
                    half_width: 0.1,
                    base: 0.1,
                    bump: 10.0,
                },
                horizon: *horizon,
                kappa_g: 10.1,
                kappa_g_lower: Some(0.1),
            })
        }
        BuiltinModel::Tracking {
            sigma,
            horizon,
            observation_seed,
        } => {
            if !(*sigma > 0.0 && sigma.is_finite()) {
                return Err(Error::invalid("observation noise sigma must be positive"));
            }
            let observations = simulate_tracking_observations(*sigma, *horizon, *observation_seed);
            Ok(HmmModel {
                name: spec.tag().to_string(),
                dynamics: Dynamics::Tracking {
                    sigma: *sigma,
                    observations,
                },
                horizon: *horizon,
                kappa_g: 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt()),
                kappa_g_lower: None,
            })
        }
        BuiltinModel::TailExample => Ok(HmmModel {
            name: spec.tag().to_string(),
            dynamics: Dynamics::TailExample {
                base: 0.1,
                bump: 100.0,
                half_width: 0.1,
            },
            horizon: 1,
            kappa_g: 100.1,
            kappa_g_lower: Some(0.1),
        }),
        BuiltinModel::TwoState {
            transition,
            potential,
            pi0,
            horizon,
        } => {
            let hmm = DiscreteHmm::new(pi0.clone(), transition.clone(), vec![potential.clone()])?;
            let mut model = HmmModel::discrete(spec.tag(), hmm, *horizon)?;
            model.name = spec.tag().to_string();
            Ok(model)
        }
    }
}

/// Simulates `y_0..y_T` from the tracking model started at `x_0 = 0`.
pub fn simulate_tracking_observations(sigma: f64, horizon: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(hash_words(&[seed, 0x7472_6163_6b69_6e67]));
    let mut x = 0.0f64;
    let mut ys = Vec::with_capacity(horizon + 1);
    for t in 0..=horizon {
        if t > 0 {
            let xi: f64 = rng.sample(StandardNormal);
            x = -(x - 1.0) / 2.0 + xi;
        }
        let eps: f64 = rng.sample(StandardNormal);
        ys.push(x + sigma * eps);
    }
    ys
}
