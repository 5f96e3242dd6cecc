//! Window descriptors: RBF similarity of the newest sample to its
//! predecessors, and the window mean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default kernel scale.
pub const DEFAULT_SCALE: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelParams {
    pub s: f64,
    pub sigma: f64,
}

impl KernelParams {
    pub fn new(s: f64, sigma: f64) -> Result<Self> {
        let p = Self { s, sigma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s.is_finite() && self.s > 0.0) {
            return Err(Error::Config(format!("kernel scale s must be > 0, got {}", self.s)));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::Config(format!(
                "kernel bandwidth sigma must be > 0, got {}",
                self.sigma
            )));
        }
        Ok(())
    }
}

/// Which features feed the forests.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    RbfOnly,
    MeanOnly,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::RbfOnly, Variant::MeanOnly];

    pub fn dim(self) -> usize {
        match self {
            Variant::Full => 2,
            Variant::RbfOnly | Variant::MeanOnly => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::RbfOnly => "rbf_only",
            Variant::MeanOnly => "mean_only",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "rbf_only" | "rbf" => Ok(Variant::RbfOnly),
            "mean_only" | "mean" => Ok(Variant::MeanOnly),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

/// The full two-entry descriptor of one univariate window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    pub rbf: f64,
    pub mean: f64,
}

/// Variant-dependent descriptor: one or two entries, stack allocated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Descriptor {
    values: [f64; 2],
    len: u8,
}

impl Descriptor {
    fn select(fv: FeatureVector, variant: Variant) -> Self {
        match variant {
            Variant::Full => Self {
                values: [fv.rbf, fv.mean],
                len: 2,
            },
            Variant::RbfOnly => Self {
                values: [fv.rbf, 0.0],
                len: 1,
            },
            Variant::MeanOnly => Self {
                values: [fv.mean, 0.0],
                len: 1,
            },
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values[..self.len as usize]
    }
}

impl std::ops::Deref for Descriptor {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        self.as_slice()
    }
}

/// Counts arithmetic operations in the feature kernels. The no-op `()`
/// implementation compiles away.
pub trait OpCounter {
    fn add(&mut self, ops: usize);
}

impl OpCounter for () {
    #[inline(always)]
    fn add(&mut self, _ops: usize) {}
}

impl OpCounter for usize {
    fn add(&mut self, ops: usize) {
        *self += ops;
    }
}

fn rbf_distance_counted<C: OpCounter>(row: &[f64], counter: &mut C) -> Result<f64> {
    let w = row.len();
    if w < 2 {
        return Err(Error::WindowSize(w));
    }
    let last = row[w - 1];
    let mut d = 0.0;
    for &x in &row[..w - 1] {
        let gap = last - x;
        d += gap * gap;
    }
    // subtract, multiply, add per predecessor
    counter.add(3 * (w - 1));
    Ok(d)
}

/// Sum of squared gaps between the last element and every earlier element.
pub fn rbf_distance(row: &[f64]) -> Result<f64> {
    rbf_distance_counted(row, &mut ())
}

/// `s * exp(-d / sigma^2)`.
pub fn rbf_similarity(d: f64, params: &KernelParams) -> f64 {
    params.s * (-d / (params.sigma * params.sigma)).exp()
}

fn mean_counted<C: OpCounter>(row: &[f64], counter: &mut C) -> f64 {
    counter.add(row.len());
    row.iter().sum::<f64>() / row.len() as f64
}

pub fn feature_vector(row: &[f64], params: &KernelParams) -> Result<FeatureVector> {
    extract_counted(row, params, &mut ())
}

fn extract_counted<C: OpCounter>(row: &[f64], params: &KernelParams, counter: &mut C) -> Result<FeatureVector> {
    let d = rbf_distance_counted(row, counter)?;
    let rbf = rbf_similarity(d, params);
    counter.add(4);
    Ok(FeatureVector {
        rbf,
        mean: mean_counted(row, counter),
    })
}

/// Descriptor of one univariate window for the given variant.
pub fn extract_features(row: &[f64], params: &KernelParams, variant: Variant) -> Result<Descriptor> {
    Ok(Descriptor::select(feature_vector(row, params)?, variant))
}

/// Same as [`extract_features`], also returning the number of arithmetic
/// operations performed.
pub fn extract_features_counted(row: &[f64], params: &KernelParams, variant: Variant) -> Result<(Descriptor, usize)> {
    let mut ops = 0usize;
    let fv = extract_counted(row, params, &mut ops)?;
    Ok((Descriptor::select(fv, variant), ops))
}
