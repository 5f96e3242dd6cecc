//! Per-dimension forest ensemble: training on partitioned windows and
//! stride-1 scoring with cross-dimension averaging.

pub mod cusum;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::episode::{partition_windows, std_dev, EpisodeMatrix, LabelSeries, Window};
use crate::error::{Error, Result};
use crate::eval::pooled_auroc;
use crate::features::{extract_features, KernelParams, Variant, DEFAULT_SCALE};
use crate::iforest::{ForestConfig, IsolationForest};

use self::cusum::CusumParams;

pub const DEFAULT_WINDOW: usize = 10;
pub const MODEL_VERSION: u64 = 1;

/// Bandwidth multipliers of the default tuning grid, applied to the pooled
/// per-dimension standard deviation of the training data.
pub const SIGMA_GRID_FACTORS: [f64; 7] = [0.1, 0.25, 0.5, 1.0, 2.0, 5.0, 10.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    pub w: usize,
    pub kernel: KernelParams,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default)]
    pub forest: ForestConfig,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            w: DEFAULT_WINDOW,
            kernel: KernelParams {
                s: DEFAULT_SCALE,
                sigma: 1.0,
            },
            variant: Variant::Full,
            forest: ForestConfig::default(),
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.w < 2 {
            return Err(Error::WindowSize(self.w));
        }
        self.kernel.validate()?;
        self.forest.validate()
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.kernel.sigma = sigma;
        self
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }
}

/// Anomaly scores for timesteps `first_scored..T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeries {
    pub scores: Vec<f64>,
    pub first_scored: usize,
}

impl ScoreSeries {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// `(timestep, score)` pairs.
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.scores
            .iter()
            .enumerate()
            .map(move |(i, &s)| (self.first_scored + i, s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorModel {
    pub version: u64,
    pub config: DetectorConfig,
    pub n_dims: usize,
    pub forests: Vec<IsolationForest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cusum: Option<CusumParams>,
}

/// Descriptors of the non-overlapping windows of row `n`, pooled over episodes.
fn training_descriptors(episodes: &[EpisodeMatrix], n: usize, config: &DetectorConfig) -> Result<Vec<f64>> {
    let mut flat = Vec::new();
    for ep in episodes {
        for win in partition_windows(ep.row(n), config.w)? {
            flat.extend_from_slice(&extract_features(win, &config.kernel, config.variant)?);
        }
    }
    Ok(flat)
}

/// Sum that does not depend on the order of its terms.
fn order_free_mean(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

impl DetectorModel {
    pub fn train(episodes: &[EpisodeMatrix], config: &DetectorConfig) -> Result<Self> {
        config.validate()?;
        let first = episodes
            .first()
            .ok_or_else(|| Error::InsufficientData("no training episodes".into()))?;
        let n_dims = first.n_dims();
        for (i, ep) in episodes.iter().enumerate() {
            if ep.n_dims() != n_dims {
                return Err(Error::Shape(format!(
                    "training episode {i} has {} dims, expected {n_dims}",
                    ep.n_dims()
                )));
            }
            if let Some(onset) = ep.onset() {
                return Err(Error::TrainingContamination { index: i, onset });
            }
            if ep.len() < config.w {
                return Err(Error::EmptyPartition {
                    len: ep.len(),
                    w: config.w,
                });
            }
        }
        let dim = config.variant.dim();
        let forests = (0..n_dims)
            .into_par_iter()
            .map(|n| {
                let descriptors = training_descriptors(episodes, n, config)?;
                IsolationForest::fit(&descriptors, dim, &config.forest)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            version: MODEL_VERSION,
            config: *config,
            n_dims,
            forests,
            cusum: None,
        })
    }

    /// Score of one window given per-dimension rows of width `w`.
    fn score_rows<'a>(&self, rows: impl Iterator<Item = &'a [f64]>, buf: &mut Vec<f64>) -> Result<f64> {
        buf.clear();
        for (row, forest) in rows.zip(&self.forests) {
            let d = extract_features(row, &self.config.kernel, self.config.variant)?;
            buf.push(forest.anomaly_score(&d)?);
        }
        Ok(order_free_mean(buf))
    }

    /// Mean over dimensions of each forest's score for its window row.
    pub fn score_step(&self, window: &Window) -> Result<f64> {
        if window.n_dims() != self.n_dims {
            return Err(Error::Shape(format!(
                "window has {} dims, model has {}",
                window.n_dims(),
                self.n_dims
            )));
        }
        if window.width() != self.config.w {
            return Err(Error::Shape(format!(
                "window width {}, model uses {}",
                window.width(),
                self.config.w
            )));
        }
        self.score_rows(window.rows(), &mut Vec::with_capacity(self.n_dims))
    }

    pub fn score_episode(&self, episode: &EpisodeMatrix) -> Result<ScoreSeries> {
        if episode.n_dims() != self.n_dims {
            return Err(Error::Shape(format!(
                "episode has {} dims, model has {}",
                episode.n_dims(),
                self.n_dims
            )));
        }
        let w = self.config.w;
        if episode.len() < w {
            return Err(Error::EpisodeTooShort { len: episode.len(), w });
        }
        let per_dim = episode
            .rows()
            .zip(&self.forests)
            .map(|(row, forest)| {
                let mut flat = Vec::with_capacity((row.len() + 1 - w) * forest.dim);
                for win in row.windows(w) {
                    flat.extend_from_slice(&extract_features(win, &self.config.kernel, self.config.variant)?);
                }
                forest.anomaly_scores(&flat)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut buf = Vec::with_capacity(self.n_dims);
        let scores = (0..episode.len() + 1 - w)
            .map(|i| {
                buf.clear();
                buf.extend(per_dim.iter().map(|s| s[i]));
                order_free_mean(&mut buf)
            })
            .collect();
        Ok(ScoreSeries {
            scores,
            first_scored: w - 1,
        })
    }

    pub fn score_episodes(&self, episodes: &[EpisodeMatrix]) -> Result<Vec<ScoreSeries>> {
        episodes.par_iter().map(|ep| self.score_episode(ep)).collect()
    }

    /// Scores each episode and pairs the series with the episode's labels.
    pub fn score_labelled(&self, episodes: &[EpisodeMatrix]) -> Result<Vec<(ScoreSeries, LabelSeries)>> {
        let series = self.score_episodes(episodes)?;
        Ok(series
            .into_iter()
            .zip(episodes.iter().map(EpisodeMatrix::labels))
            .collect())
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| Error::Load(e.to_string()))?;
        let version = value
            .get("version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::Load("missing version tag".into()))?;
        if version != MODEL_VERSION {
            return Err(Error::Version {
                found: version,
                expected: MODEL_VERSION,
            });
        }
        let model: Self = serde_json::from_value(value).map_err(|e| Error::Load(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        self.config.validate().map_err(|e| Error::Load(e.to_string()))?;
        if self.n_dims == 0 || self.forests.len() != self.n_dims {
            return Err(Error::Load(format!(
                "{} forests for {} dims",
                self.forests.len(),
                self.n_dims
            )));
        }
        for f in &self.forests {
            f.validate()?;
            if f.dim != self.config.variant.dim() {
                return Err(Error::Load(format!(
                    "forest of dimension {} under variant {}",
                    f.dim, self.config.variant
                )));
            }
        }
        if let Some(c) = &self.cusum {
            c.validate().map_err(|e| Error::Load(e.to_string()))?;
        }
        Ok(())
    }
}

pub fn save_model(model: &DetectorModel) -> Result<Vec<u8>> {
    model.to_json()
}

pub fn load_model(bytes: &[u8]) -> Result<DetectorModel> {
    DetectorModel::from_json(bytes)
}

/// Root-mean-square of per-dimension standard deviations, each pooled over
/// all episodes.
pub fn pooled_std(episodes: &[EpisodeMatrix]) -> f64 {
    let Some(first) = episodes.first() else {
        return 0.0;
    };
    let n_dims = first.n_dims();
    let mut total_var = 0.0;
    for n in 0..n_dims {
        let values: Vec<f64> = episodes
            .iter()
            .filter(|e| e.n_dims() == n_dims)
            .flat_map(|e| e.row(n).iter().copied())
            .collect();
        let sd = std_dev(&values);
        total_var += sd * sd;
    }
    (total_var / n_dims as f64).sqrt()
}

/// The default bandwidth grid scaled to the training data.
pub fn default_sigma_grid(train: &[EpisodeMatrix]) -> Vec<f64> {
    let scale = pooled_std(train);
    let scale = if scale.is_finite() && scale > 0.0 { scale } else { 1.0 };
    SIGMA_GRID_FACTORS.iter().map(|f| f * scale).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaTrial {
    pub sigma: f64,
    pub auroc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaTuning {
    pub sigma: f64,
    pub trials: Vec<SigmaTrial>,
}

/// Picks the bandwidth with the highest mean per-episode validation AUROC;
/// ties go to the smallest bandwidth. Episodes whose scored span holds only
/// one class are skipped; if none remain the pooled AUROC is used.
pub fn tune_sigma(
    train: &[EpisodeMatrix],
    val: &[EpisodeMatrix],
    grid: &[f64],
    config: &DetectorConfig,
) -> Result<SigmaTuning> {
    if grid.is_empty() {
        return Err(Error::Config("empty sigma grid".into()));
    }
    if let Some(bad) = grid.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return Err(Error::Config(format!("sigma grid value {bad} is not positive")));
    }
    if let Some(i) = val.iter().position(|e| e.onset().is_none()) {
        return Err(Error::Config(format!("validation episode {i} has no onset")));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();

    let mut trials = Vec::with_capacity(sorted.len());
    let mut best: Option<SigmaTrial> = None;
    for sigma in sorted {
        let model = DetectorModel::train(train, &config.with_sigma(sigma))?;
        let result = pooled_auroc(&model.score_labelled(val)?)?;
        let auroc = result.mean_per_episode().unwrap_or(result.pooled);
        let trial = SigmaTrial { sigma, auroc };
        if best.as_ref().is_none_or(|b| trial.auroc > b.auroc) {
            best = Some(trial.clone());
        }
        trials.push(trial);
    }
    Ok(SigmaTuning {
        sigma: best.expect("non-empty grid").sigma,
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iforest::{IsolationTree, Node};

    fn constant_forest(dim: usize) -> IsolationForest {
        IsolationForest {
            psi: 8,
            dim,
            max_depth: 3,
            config: ForestConfig::default(),
            trees: vec![IsolationTree {
                nodes: vec![Node::Leaf { size: 8 }],
            }],
        }
    }

    fn wave(len: usize, phase: f64, n_dims: usize) -> EpisodeMatrix {
        let rows = (0..n_dims)
            .map(|d| {
                (0..len)
                    .map(|t| ((t as f64) * 0.7 + phase + d as f64).sin() * (1.0 + d as f64))
                    .collect()
            })
            .collect();
        EpisodeMatrix::from_rows(rows, None).unwrap()
    }

    fn small_config() -> DetectorConfig {
        DetectorConfig {
            forest: ForestConfig {
                n_trees: 20,
                ..ForestConfig::default()
            },
            ..DetectorConfig::default()
        }
    }

    #[test]
    fn training_vector_counts() {
        let eps: Vec<_> = (0..45).map(|j| wave(100, j as f64, 4)).collect();
        let model = DetectorModel::train(&eps, &small_config()).unwrap();
        assert_eq!(model.forests.len(), 4);
        for f in &model.forests {
            assert_eq!(f.psi, 256);
            assert_eq!(f.dim, 2);
        }
        assert_eq!(training_descriptors(&eps, 0, &small_config()).unwrap().len(), 450 * 2);

        let mean_only = DetectorModel::train(&eps, &small_config().with_variant(Variant::MeanOnly)).unwrap();
        assert!(mean_only.forests.iter().all(|f| f.dim == 1));
    }

    #[test]
    fn training_errors() {
        let cfg = small_config();
        assert!(matches!(
            DetectorModel::train(&[wave(10, 0.0, 1)], &cfg),
            Err(Error::InsufficientData(_))
        ));
        assert!(matches!(
            DetectorModel::train(&[wave(30, 0.0, 1), wave(30, 0.0, 2)], &cfg),
            Err(Error::Shape(_))
        ));
        let rows = vec![(0..30).map(f64::from).collect()];
        let tainted = EpisodeMatrix::from_rows(rows, Some(5)).unwrap();
        assert!(matches!(
            DetectorModel::train(&[wave(30, 0.0, 1), tainted], &cfg),
            Err(Error::TrainingContamination { index: 1, onset: 5 })
        ));
        assert!(matches!(
            DetectorModel::train(&[wave(9, 0.0, 1)], &cfg),
            Err(Error::EmptyPartition { len: 9, w: 10 })
        ));
        assert!(DetectorModel::train(&[], &cfg).is_err());
    }

    #[test]
    fn constant_forests_average_to_half() {
        let model = DetectorModel {
            version: MODEL_VERSION,
            config: DetectorConfig::default(),
            n_dims: 2,
            forests: vec![constant_forest(2), constant_forest(2)],
            cusum: None,
        };
        let win = Window::from_rows(vec![vec![0.3; 10], (0..10).map(f64::from).collect()], 9).unwrap();
        assert_eq!(model.score_step(&win).unwrap(), 0.5);
    }

    #[test]
    fn single_dim_equals_forest_score() {
        let eps: Vec<_> = (0..5).map(|j| wave(50, j as f64, 1)).collect();
        let model = DetectorModel::train(&eps, &small_config()).unwrap();
        let probe = wave(20, 0.3, 1);
        let win = crate::window_at(&probe, 15, 10).unwrap();
        let d = extract_features(win.row(0), &model.config.kernel, Variant::Full).unwrap();
        assert_eq!(
            model.score_step(&win).unwrap(),
            model.forests[0].anomaly_score(&d).unwrap()
        );
    }

    #[test]
    fn episode_scoring_shapes() {
        let eps: Vec<_> = (0..5).map(|j| wave(50, j as f64, 2)).collect();
        let model = DetectorModel::train(&eps, &small_config()).unwrap();
        assert_eq!(model.score_episode(&wave(10, 0.0, 2)).unwrap().len(), 1);
        let s = model.score_episode(&wave(100, 0.0, 2)).unwrap();
        assert_eq!(s.len(), 91);
        assert_eq!(s.first_scored, 9);
        assert!(s.scores.iter().all(|&a| a > 0.0 && a < 1.0));
        assert!(matches!(
            model.score_episode(&wave(9, 0.0, 2)),
            Err(Error::EpisodeTooShort { len: 9, w: 10 })
        ));
        assert!(matches!(model.score_episode(&wave(20, 0.0, 3)), Err(Error::Shape(_))));
        let narrow = Window::from_rows(vec![vec![0.0; 5], vec![0.0; 5]], 4).unwrap();
        assert!(matches!(model.score_step(&narrow), Err(Error::Shape(_))));
    }

    #[test]
    fn constant_episode_scores_constant() {
        let flat = |c: f64| EpisodeMatrix::from_rows(vec![vec![c; 40], vec![-c; 40]], None).unwrap();
        let model = DetectorModel::train(&[flat(1.0), flat(2.0)], &small_config()).unwrap();
        let s = model.score_episode(&flat(1.5)).unwrap();
        assert!(s.scores.windows(2).all(|p| p[0] == p[1]));
    }

    #[test]
    fn save_load_round_trip() {
        let eps: Vec<_> = (0..6).map(|j| wave(60, j as f64 * 0.37, 3)).collect();
        let model = DetectorModel::train(&eps, &small_config().with_sigma(0.731)).unwrap();
        let bytes = save_model(&model).unwrap();
        let back = load_model(&bytes).unwrap();
        assert_eq!(back, model);
        let probe = wave(109, 1.234, 3);
        assert_eq!(
            back.score_episode(&probe).unwrap(),
            model.score_episode(&probe).unwrap()
        );
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.starts_with(r#"{"version":1,"config":"#));
    }

    #[test]
    fn load_errors() {
        let eps: Vec<_> = (0..3).map(|j| wave(40, j as f64, 1)).collect();
        let bytes = save_model(&DetectorModel::train(&eps, &small_config()).unwrap()).unwrap();
        assert!(matches!(load_model(&bytes[..bytes.len() / 2]), Err(Error::Load(_))));
        let text = String::from_utf8(bytes)
            .unwrap()
            .replacen(r#""version":1"#, r#""version":2"#, 1);
        assert!(matches!(
            load_model(text.as_bytes()),
            Err(Error::Version { found: 2, expected: 1 })
        ));
        let text = text
            .replacen(r#""version":2"#, r#""version":1"#, 1)
            .replacen(r#""n_dims":1"#, r#""n_dims":2"#, 1);
        assert!(matches!(load_model(text.as_bytes()), Err(Error::Load(_))));
    }

    #[test]
    fn sigma_grid_errors_and_singleton() {
        let train: Vec<_> = (0..4).map(|j| wave(40, j as f64, 1)).collect();
        let rows = vec![(0..40).map(|t| if t < 20 { 0.0 } else { 5.0 }).collect()];
        let val = vec![EpisodeMatrix::from_rows(rows, Some(20)).unwrap()];
        let cfg = small_config();
        assert!(matches!(tune_sigma(&train, &val, &[], &cfg), Err(Error::Config(_))));
        assert!(tune_sigma(&train, &train, &[1.0], &cfg).is_err());
        assert_eq!(tune_sigma(&train, &val, &[0.42], &cfg).unwrap().sigma, 0.42);
    }

    #[test]
    fn default_grid_scales_with_data() {
        let ep = EpisodeMatrix::from_rows(vec![vec![-2.0, 2.0, -2.0, 2.0]], None).unwrap();
        let grid = default_sigma_grid(&[ep]);
        assert_eq!(grid.len(), 7);
        assert_eq!(grid[3], 2.0);
    }
}
