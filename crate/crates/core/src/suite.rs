//! Benchmark suites: a scenario grid over plants and anomalies, seeded
//! dataset generation, and the per-scenario train/tune/evaluate loop.
//!
//! Replicate seed `s` owns the episode seeds `s * 1_000_000 + j` (train),
//! `+ 100_000 + j` (validation) and `+ 200_000 + j` (test), so the three
//! splits never share a trajectory. Training data depends only on the plant
//! and `s`; every scenario of a plant sees the same clean training set.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{tune_sigma, DetectorConfig, DetectorModel, SIGMA_GRID_FACTORS};
use crate::envgen::{simulate, CartpoleParams, LinearParams};
use crate::envgen::{AnomalyKind, AnomalySpec, Controller, Level, Plant};
use crate::episode::{std_dev, EpisodeMatrix};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::features::Variant;
use crate::iforest::derive_seed;

pub const MANIFEST_VERSION: u64 = 1;
const ONSET_STREAM: u64 = 4;
const SEED_STRIDE: u64 = 1_000_000;
const VAL_OFFSET: u64 = 100_000;
const TEST_OFFSET: u64 = 200_000;

/// An anomaly without its onset; onsets are drawn per episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnomalyTemplate {
    pub kind: AnomalyKind,
    pub level: Level,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ar_order: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub magnitude: Option<f64>,
}

impl AnomalyTemplate {
    pub fn new(kind: AnomalyKind, level: Level) -> Self {
        Self {
            kind,
            level,
            ar_order: None,
            magnitude: None,
        }
    }

    pub fn at(&self, onset: usize) -> AnomalySpec {
        AnomalySpec {
            kind: self.kind,
            level: self.level,
            onset,
            ar_order: self.kind.is_autoregressive().then(|| self.ar_order.unwrap_or(1)),
            ar_coefs: None,
            magnitude: self.magnitude,
        }
    }

    pub fn id(&self) -> String {
        self.at(1).id()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteConfig {
    pub plants: Vec<Plant>,
    pub anomalies: Vec<AnomalyTemplate>,
    pub seeds: Vec<u64>,
    pub episode_len: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Inclusive range the per-episode onset is drawn from.
    pub onset_range: [usize; 2],
    pub detector: DetectorConfig,
    /// Fixed bandwidth; when absent it is tuned on the validation split.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    /// Tuning grid as multiples of the training data's pooled std.
    pub sigma_factors: Vec<f64>,
    /// False-alarm rate for the detection-delay threshold.
    pub fpr: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        let mut anomalies = Vec::new();
        for kind in [AnomalyKind::Arno, AnomalyKind::Arns] {
            for level in [Level::Light, Level::Medium, Level::Strong] {
                for order in [1, 2] {
                    anomalies.push(AnomalyTemplate {
                        ar_order: Some(order),
                        ..AnomalyTemplate::new(kind, level)
                    });
                }
            }
        }
        Self {
            plants: vec![
                Plant::Cartpole(CartpoleParams::default()),
                Plant::Linear(LinearParams::default()),
            ],
            anomalies,
            seeds: (0..5).collect(),
            episode_len: 100,
            n_train: 45,
            n_val: 100,
            n_test: 100,
            onset_range: [20, 80],
            detector: DetectorConfig::default(),
            sigma: None,
            sigma_factors: SIGMA_GRID_FACTORS.to_vec(),
            fpr: 0.05,
        }
    }
}

/// One plant paired with one anomaly template.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub plant: Plant,
    pub anomaly: AnomalyTemplate,
}

impl Scenario {
    pub fn id(&self) -> String {
        format!("{}-{}", self.plant.name(), self.anomaly.id())
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.plants.is_empty() || self.anomalies.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("suite needs at least one plant, anomaly and seed".into()));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::Config("train and test splits must be non-empty".into()));
        }
        if self.sigma.is_none() && (self.n_val == 0 || self.sigma_factors.is_empty()) {
            return Err(Error::Config(
                "sigma tuning needs validation episodes and a non-empty grid".into(),
            ));
        }
        if self.seeds.iter().any(|&s| s >= u64::MAX / SEED_STRIDE) {
            return Err(Error::Config("replicate seeds must be below 2^64 / 10^6".into()));
        }
        let n_max = self.n_train.max(self.n_val).max(self.n_test) as u64;
        if n_max > VAL_OFFSET {
            return Err(Error::Config(format!("at most {VAL_OFFSET} episodes per split")));
        }
        let [lo, hi] = self.onset_range;
        if lo < 1 || lo > hi || hi >= self.episode_len {
            return Err(Error::Config(format!(
                "onset range [{lo}, {hi}] must satisfy 1 <= lo <= hi < episode_len = {}",
                self.episode_len
            )));
        }
        if self.episode_len < self.detector.w {
            return Err(Error::EpisodeTooShort {
                len: self.episode_len,
                w: self.detector.w,
            });
        }
        if !(self.fpr > 0.0 && self.fpr < 1.0) {
            return Err(Error::Config(format!("fpr must be in (0, 1), got {}", self.fpr)));
        }
        self.detector.validate()?;
        for plant in &self.plants {
            plant.validate()?;
            for a in &self.anomalies {
                a.at(lo).validate_for(plant)?;
            }
        }
        let mut ids: Vec<String> = self.scenarios().iter().map(Scenario::id).collect();
        ids.sort();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("scenario ids are not unique".into()));
        }
        Ok(())
    }

    /// Plants in the outer loop, anomalies in the inner.
    pub fn scenarios(&self) -> Vec<Scenario> {
        self.plants
            .iter()
            .flat_map(|p| {
                self.anomalies.iter().map(|a| Scenario {
                    plant: p.clone(),
                    anomaly: a.clone(),
                })
            })
            .collect()
    }

    pub fn find_scenario(&self, id: &str) -> Option<Scenario> {
        self.scenarios().into_iter().find(|s| s.id() == id)
    }

    fn detector_for(&self, seed: u64, variant: Variant) -> DetectorConfig {
        let mut cfg = self.detector.with_variant(variant);
        cfg.forest.seed = derive_seed(self.detector.forest.seed, seed);
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

pub fn episode_seed(seed: u64, split: Split, j: usize) -> u64 {
    let offset = match split {
        Split::Train => 0,
        Split::Val => VAL_OFFSET,
        Split::Test => TEST_OFFSET,
    };
    seed * SEED_STRIDE + offset + j as u64
}

fn draw_onset(ep_seed: u64, [lo, hi]: [usize; 2]) -> usize {
    ChaCha8Rng::seed_from_u64(derive_seed(ep_seed, ONSET_STREAM)).random_range(lo..=hi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<EpisodeMatrix>,
    pub val: Vec<EpisodeMatrix>,
    pub test: Vec<EpisodeMatrix>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[EpisodeMatrix] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

fn generate_split(
    config: &SuiteConfig,
    scenario: &Scenario,
    seed: u64,
    split: Split,
    count: usize,
) -> Result<Vec<EpisodeMatrix>> {
    let controller = Controller::default_for(&scenario.plant);
    (0..count)
        .into_par_iter()
        .map(|j| {
            let ep_seed = episode_seed(seed, split, j);
            let spec = match split {
                Split::Train => None,
                _ => Some(scenario.anomaly.at(draw_onset(ep_seed, config.onset_range))),
            };
            simulate(&scenario.plant, &controller, config.episode_len, ep_seed, spec.as_ref())
        })
        .collect()
}

/// All three splits for one scenario and replicate seed.
pub fn generate_dataset(config: &SuiteConfig, scenario: &Scenario, seed: u64) -> Result<Dataset> {
    Ok(Dataset {
        train: generate_split(config, scenario, seed, Split::Train, config.n_train)?,
        val: generate_split(config, scenario, seed, Split::Val, config.n_val)?,
        test: generate_split(config, scenario, seed, Split::Test, config.n_test)?,
    })
}

/// Everything needed to regenerate a suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u64,
    pub suite: SuiteConfig,
    pub scenarios: Vec<String>,
}

impl Manifest {
    pub fn new(suite: SuiteConfig) -> Result<Self> {
        suite.validate()?;
        let scenarios = suite.scenarios().iter().map(Scenario::id).collect();
        Ok(Self {
            version: MANIFEST_VERSION,
            suite,
            scenarios,
        })
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let m: Manifest = serde_json::from_slice(bytes)?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Version {
                found: m.version,
                expected: MANIFEST_VERSION,
            });
        }
        let rebuilt = Manifest::new(m.suite.clone())?;
        if rebuilt.scenarios != m.scenarios {
            return Err(Error::Load("manifest scenario list does not match its suite".into()));
        }
        Ok(m)
    }
}

/// One scenario, seed and variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub plant: String,
    pub kind: String,
    pub level: String,
    pub ar_order: Option<u8>,
    pub variant: String,
    pub seed: u64,
    pub sigma: f64,
    pub auroc: f64,
    pub mean_episode_auroc: Option<f64>,
    pub n_pos: usize,
    pub n_neg: usize,
    pub delay: Option<f64>,
    pub detected_fraction: f64,
    /// Wall time of the final training run, seconds.
    pub train_seconds: f64,
}

impl ResultRow {
    pub fn scenario_key(&self) -> String {
        let mut key = format!("{}-{}-{}", self.plant, self.kind, self.level);
        if let Some(o) = self.ar_order {
            key.push_str(&format!("-ar{o}"));
        }
        key
    }
}

/// Tunes (unless fixed or irrelevant), trains and evaluates one variant.
pub fn run_variant(
    config: &SuiteConfig,
    scenario: &Scenario,
    seed: u64,
    data: &Dataset,
    variant: Variant,
) -> Result<ResultRow> {
    let base = config.detector_for(seed, variant);
    let sigma = match (variant, config.sigma) {
        (Variant::MeanOnly, _) => base.kernel.sigma,
        (_, Some(s)) => s,
        (_, None) => {
            let scale = crate::detector::pooled_std(&data.train);
            let scale = if scale.is_finite() && scale > 0.0 { scale } else { 1.0 };
            let grid: Vec<f64> = config.sigma_factors.iter().map(|f| f * scale).collect();
            tune_sigma(&data.train, &data.val, &grid, &base)?.sigma
        }
    };
    let cfg = base.with_sigma(sigma);
    let start = Instant::now();
    let model = DetectorModel::train(&data.train, &cfg)?;
    let train_seconds = start.elapsed().as_secs_f64();
    let result = evaluate(&model.score_labelled(&data.test)?, config.fpr)?;
    let spec = scenario.anomaly.at(1);
    Ok(ResultRow {
        plant: scenario.plant.name().to_string(),
        kind: spec.kind.as_str().to_string(),
        level: spec.level.as_str().to_string(),
        ar_order: spec.ar_order,
        variant: variant.as_str().to_string(),
        seed,
        sigma,
        auroc: result.auroc,
        mean_episode_auroc: result.mean_episode_auroc,
        n_pos: result.n_pos,
        n_neg: result.n_neg,
        delay: result.detection_delay,
        detected_fraction: result.detected_fraction,
        train_seconds,
    })
}

/// Every scenario x seed x variant, in grid order. Scenario-seeds run in
/// parallel; each one generates its data once and reuses it per variant.
pub fn run_grid(config: &SuiteConfig, variants: &[Variant]) -> Result<Vec<ResultRow>> {
    run_scenarios(config, &config.scenarios(), variants)
}

/// Like [`run_grid`] restricted to `scenarios`.
pub fn run_scenarios(config: &SuiteConfig, scenarios: &[Scenario], variants: &[Variant]) -> Result<Vec<ResultRow>> {
    config.validate()?;
    let jobs: Vec<(Scenario, u64)> = scenarios
        .iter()
        .flat_map(|s| config.seeds.iter().map(move |&seed| (s.clone(), seed)))
        .collect();
    let nested: Vec<Vec<ResultRow>> = jobs
        .par_iter()
        .map(|(scenario, seed)| {
            let data = generate_dataset(config, scenario, *seed)?;
            variants
                .iter()
                .map(|&v| run_variant(config, scenario, *seed, &data, v))
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(nested.into_iter().flatten().collect())
}

pub fn run_ablation(config: &SuiteConfig) -> Result<Vec<ResultRow>> {
    run_grid(config, &Variant::ALL)
}

pub fn write_results_csv<W: std::io::Write>(out: W, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv<R: std::io::Read>(input: R) -> Result<Vec<ResultRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub variant: String,
    pub n: usize,
    pub auroc_mean: f64,
    pub auroc_std: f64,
    pub mean_episode_auroc_mean: Option<f64>,
    pub delay_mean: Option<f64>,
    pub train_seconds_mean: f64,
    pub train_seconds_median: f64,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Mean and std per (scenario, variant), sorted by key.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, String), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.scenario_key(), r.variant.clone())).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((scenario, variant), rs)| {
            let aurocs: Vec<f64> = rs.iter().map(|r| r.auroc).collect();
            let per_ep: Vec<f64> = rs.iter().filter_map(|r| r.mean_episode_auroc).collect();
            let delays: Vec<f64> = rs.iter().filter_map(|r| r.delay).collect();
            let mut times: Vec<f64> = rs.iter().map(|r| r.train_seconds).collect();
            times.sort_by(f64::total_cmp);
            SummaryRow {
                scenario,
                variant,
                n: rs.len(),
                auroc_mean: mean(&aurocs).unwrap_or(f64::NAN),
                auroc_std: std_dev(&aurocs),
                mean_episode_auroc_mean: mean(&per_ep),
                delay_mean: mean(&delays),
                train_seconds_mean: mean(&times).unwrap_or(f64::NAN),
                train_seconds_median: median(&times),
            }
        })
        .collect()
}

fn median(sorted: &[f64]) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => sorted[n / 2],
        n => 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]),
    }
}

/// Mean AUROC of each variant over all rows.
pub fn variant_means(rows: &[ResultRow]) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in rows {
        acc.entry(r.variant.clone()).or_default().push(r.auroc);
    }
    acc.into_iter()
        .map(|(k, v)| (k, mean(&v).unwrap_or(f64::NAN)))
        .collect()
}
