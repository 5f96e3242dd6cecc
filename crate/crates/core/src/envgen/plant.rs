//! Plant dynamics and scripted controllers.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Classic cart-pole, explicit Euler. State is `(x, x_dot, theta, theta_dot)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CartpoleParams {
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Half the pole length, metres.
    pub half_length: f64,
    pub gravity: f64,
    pub dt: f64,
    pub x_limit: f64,
    pub theta_limit: f64,
    /// Gaussian force disturbance applied every step, newtons.
    pub force_noise_std: f64,
    /// Initial state entries are uniform in `[-init_range, init_range]`.
    pub init_range: f64,
}

impl Default for CartpoleParams {
    fn default() -> Self {
        Self {
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_length: 0.5,
            gravity: 9.8,
            dt: 0.02,
            x_limit: 2.4,
            theta_limit: 0.21,
            force_noise_std: 1.0,
            init_range: 0.05,
        }
    }
}

/// `x' = A x + B u + w`, `w ~ N(0, process_noise_std^2 I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearParams {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub process_noise_std: f64,
    pub init_std: f64,
}

impl Default for LinearParams {
    /// Two damped rotations (spectral radius about 0.92), identity input.
    fn default() -> Self {
        Self {
            a: vec![
                vec![0.9, 0.2, 0.0, 0.0],
                vec![-0.2, 0.9, 0.0, 0.0],
                vec![0.0, 0.0, 0.8, 0.3],
                vec![0.0, 0.0, -0.3, 0.8],
            ],
            b: identity(4),
            process_noise_std: 1.0,
            init_std: 1.0,
        }
    }
}

pub fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Plant {
    Cartpole(CartpoleParams),
    Linear(LinearParams),
}

impl Plant {
    pub fn name(&self) -> &'static str {
        match self {
            Plant::Cartpole(_) => "cartpole",
            Plant::Linear(_) => "linear",
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            Plant::Cartpole(_) => 4,
            Plant::Linear(p) => p.a.len(),
        }
    }

    pub fn action_dim(&self) -> usize {
        match self {
            Plant::Cartpole(_) => 1,
            Plant::Linear(p) => p.b.first().map_or(0, Vec::len),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Plant::Cartpole(p) => {
                let positive = [p.cart_mass, p.pole_mass, p.half_length, p.dt, p.x_limit, p.theta_limit];
                if positive.iter().any(|v| !(v.is_finite() && *v > 0.0))
                    || !(p.force_noise_std >= 0.0 && p.init_range >= 0.0 && p.gravity.is_finite())
                {
                    return Err(Error::Config("invalid cartpole parameters".into()));
                }
            }
            Plant::Linear(p) => {
                let n = p.a.len();
                if n == 0 || p.a.iter().any(|r| r.len() != n) {
                    return Err(Error::Config("linear plant A must be square and non-empty".into()));
                }
                let m = p.b.first().map_or(0, Vec::len);
                if p.b.len() != n || m == 0 || p.b.iter().any(|r| r.len() != m) {
                    return Err(Error::Config(format!("linear plant B must be {n} x m with m >= 1")));
                }
                if p.a.iter().chain(&p.b).flatten().any(|v| !v.is_finite())
                    || !(p.process_noise_std >= 0.0 && p.init_std >= 0.0)
                {
                    return Err(Error::Config("invalid linear plant parameters".into()));
                }
            }
        }
        Ok(())
    }

    pub fn initial_state<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Plant::Cartpole(p) => (0..4)
                .map(|_| {
                    let u: f64 = rng.random();
                    (2.0 * u - 1.0) * p.init_range
                })
                .collect(),
            Plant::Linear(p) => (0..p.a.len())
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    p.init_std * z
                })
                .collect(),
        }
    }

    /// Draws this step's process noise. Always consumes the same number of
    /// draws so runs stay aligned whatever else changes.
    pub fn process_noise<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Plant::Cartpole(p) => {
                let z: f64 = StandardNormal.sample(rng);
                vec![p.force_noise_std * z]
            }
            Plant::Linear(p) => (0..p.a.len())
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    p.process_noise_std * z
                })
                .collect(),
        }
    }

    /// One transition. `mass_factor` scales cart and pole masses; `force` is
    /// an exogenous push (cart force, or a state-space vector for the
    /// linear plant).
    pub fn step(
        &self,
        state: &[f64],
        action: &[f64],
        noise: &[f64],
        mass_factor: f64,
        force: Option<&[f64]>,
    ) -> Vec<f64> {
        match self {
            Plant::Cartpole(p) => {
                let cart = p.cart_mass * mass_factor;
                let pole = p.pole_mass * mass_factor;
                let total = cart + pole;
                let pole_ml = pole * p.half_length;
                let f = action[0] + noise[0] + force.map_or(0.0, |f| f[0]);
                let (x, v, th, om) = (state[0], state[1], state[2], state[3]);
                let (sin, cos) = th.sin_cos();
                let temp = (f + pole_ml * om * om * sin) / total;
                let th_acc = (p.gravity * sin - cos * temp) / (p.half_length * (4.0 / 3.0 - pole * cos * cos / total));
                let x_acc = temp - pole_ml * th_acc * cos / total;
                let mut next = vec![x + p.dt * v, v + p.dt * x_acc, th + p.dt * om, om + p.dt * th_acc];
                // Saturate at the track ends and the fall angle instead of
                // terminating, so every episode has the same length.
                if next[0].abs() > p.x_limit {
                    next[0] = next[0].clamp(-p.x_limit, p.x_limit);
                    next[1] = 0.0;
                }
                if next[2].abs() > p.theta_limit {
                    next[2] = next[2].clamp(-p.theta_limit, p.theta_limit);
                    next[3] = 0.0;
                }
                next
            }
            Plant::Linear(p) => {
                let ax = mat_vec(&p.a, state);
                let bu = mat_vec(&p.b, action);
                ax.iter()
                    .zip(&bu)
                    .zip(noise)
                    .enumerate()
                    .map(|(i, ((a, b), w))| a + b + w + force.map_or(0.0, |f| f[i]))
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Controller {
    Zero,
    /// Cart force `gains . state`.
    Pd {
        gains: [f64; 4],
    },
    /// `u = -K x`.
    Feedback {
        gain: Vec<Vec<f64>>,
    },
}

pub const CARTPOLE_PD_GAINS: [f64; 4] = [1.0, 2.0, 30.0, 5.0];
pub const LINEAR_FEEDBACK_GAIN: f64 = 0.2;

impl Controller {
    pub fn default_for(plant: &Plant) -> Self {
        match plant {
            Plant::Cartpole(_) => Controller::Pd {
                gains: CARTPOLE_PD_GAINS,
            },
            Plant::Linear(p) => {
                let m = plant.action_dim();
                let n = p.a.len();
                let gain = (0..m)
                    .map(|i| {
                        (0..n)
                            .map(|j| if i == j { LINEAR_FEEDBACK_GAIN } else { 0.0 })
                            .collect()
                    })
                    .collect();
                Controller::Feedback { gain }
            }
        }
    }

    pub fn validate_for(&self, plant: &Plant) -> Result<()> {
        match (self, plant) {
            (Controller::Zero, _) => Ok(()),
            (Controller::Pd { .. }, Plant::Cartpole(_)) => Ok(()),
            (Controller::Feedback { gain }, _)
                if gain.len() == plant.action_dim() && gain.iter().all(|r| r.len() == plant.state_dim()) =>
            {
                Ok(())
            }
            _ => Err(Error::Config(format!(
                "controller does not fit the {} plant",
                plant.name()
            ))),
        }
    }

    pub fn act(&self, observation: &[f64], action_dim: usize) -> Vec<f64> {
        match self {
            Controller::Zero => vec![0.0; action_dim],
            Controller::Pd { gains } => vec![gains.iter().zip(observation).map(|(g, x)| g * x).sum()],
            Controller::Feedback { gain } => mat_vec(gain, observation).into_iter().map(|u| -u).collect(),
        }
    }
}
