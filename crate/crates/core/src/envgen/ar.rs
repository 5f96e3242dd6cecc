//! Autoregressive noise processes of order 1 and 2.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iforest::derive_seed;

pub const DEFAULT_AR1: [f64; 1] = [0.8];
pub const DEFAULT_AR2: [f64; 2] = [0.5, 0.3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArProcess {
    pub coefs: Vec<f64>,
    /// Innovation standard deviation.
    pub noise_std: f64,
    pub seed: u64,
}

impl ArProcess {
    pub fn new(coefs: Vec<f64>, noise_std: f64, seed: u64) -> Result<Self> {
        let p = Self { coefs, noise_std, seed };
        p.validate()?;
        Ok(p)
    }

    pub fn default_coefs(order: u8) -> Result<Vec<f64>> {
        match order {
            1 => Ok(DEFAULT_AR1.to_vec()),
            2 => Ok(DEFAULT_AR2.to_vec()),
            o => Err(Error::Config(format!("AR order must be 1 or 2, got {o}"))),
        }
    }

    pub fn order(&self) -> usize {
        self.coefs.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::Config(format!(
                "AR noise std must be >= 0, got {}",
                self.noise_std
            )));
        }
        let stationary = match self.coefs[..] {
            [p1] => p1.abs() < 1.0,
            [p1, p2] => p2 > -1.0 && p2 < 1.0 && p2 + p1 < 1.0 && p2 - p1 < 1.0,
            _ => {
                return Err(Error::Config(format!(
                    "AR order must be 1 or 2, got {}",
                    self.coefs.len()
                )))
            }
        };
        if !stationary || self.coefs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Config(format!(
                "non-stationary AR coefficients {:?}",
                self.coefs
            )));
        }
        Ok(())
    }

    /// Stationary standard deviation per unit innovation std.
    pub fn marginal_gain(coefs: &[f64]) -> f64 {
        match *coefs {
            [p1] => 1.0 / (1.0 - p1 * p1).sqrt(),
            [p1, p2] => {
                let var = (1.0 - p2) / ((1.0 + p2) * ((1.0 - p2).powi(2) - p1 * p1));
                var.sqrt()
            }
            _ => f64::NAN,
        }
    }

    /// Process whose stationary standard deviation is `marginal_std`.
    pub fn with_marginal_std(coefs: Vec<f64>, marginal_std: f64, seed: u64) -> Result<Self> {
        let gain = Self::marginal_gain(&coefs);
        let p = Self::new(coefs, 0.0, seed)?;
        Self::new(p.coefs, marginal_std / gain, seed)
    }
}

/// `z_t = sum_i coefs[i] z_{t-1-i} + e_t` from zero history.
pub fn ar_sample(process: &ArProcess, len: usize) -> Result<Vec<f64>> {
    process.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(process.seed);
    let mut out: Vec<f64> = Vec::with_capacity(len);
    for t in 0..len {
        let eps: f64 = StandardNormal.sample(&mut rng);
        let mut z = process.noise_std * eps;
        for (i, c) in process.coefs.iter().enumerate() {
            if t > i {
                z += c * out[t - 1 - i];
            }
        }
        out.push(z);
    }
    Ok(out)
}

/// `n_rows` independent AR rows; row `r` is seeded from `(seed, r)`.
pub fn noise_matrix(process: &ArProcess, n_rows: usize, len: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    (0..n_rows)
        .map(|r| {
            let row_proc = ArProcess {
                seed: derive_seed(seed, r as u64),
                ..process.clone()
            };
            ar_sample(&row_proc, len)
        })
        .collect()
}
