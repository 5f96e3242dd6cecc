//! Metrics: exact AUROC, threshold calibration, detection delay, and the
//! wall-clock scaling benchmark.

use std::hint::black_box;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::detector::{DetectorConfig, DetectorModel, ScoreSeries};
use crate::episode::{EpisodeMatrix, LabelSeries};
use crate::error::{Error, Result};
use crate::features::feature_vector;

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Computed exactly from midranks.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Data("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l != 0).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUROC needs both classes ({n_pos} positive, {n_neg} negative)"
        )));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Twice the rank sum of positives, kept in integers so the result is exact.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share the midrank (i + j + 2) / 2.
        let twice_midrank = (i + j + 2) as u128;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k] != 0).count() as u128;
        twice_rank_sum += pos_in_group * twice_midrank;
        i = j + 1;
    }
    let p = n_pos as u128;
    let q = n_neg as u128;
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2 * p * q) as f64)
}

/// Pooled AUROC across episodes, plus each episode's own AUROC where it is
/// defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledAuroc {
    pub pooled: f64,
    pub per_episode: Vec<Option<f64>>,
    pub n_pos: usize,
    pub n_neg: usize,
}

impl PooledAuroc {
    pub fn mean_per_episode(&self) -> Option<f64> {
        let defined: Vec<f64> = self.per_episode.iter().flatten().copied().collect();
        (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

/// Labels of the timesteps a series scores.
pub fn aligned_labels<'a>(series: &ScoreSeries, labels: &'a LabelSeries) -> Result<&'a [u8]> {
    let tail = labels.tail(series.first_scored);
    if tail.len() != series.scores.len() {
        return Err(Error::Shape(format!(
            "{} scores starting at t={} for {} labels",
            series.scores.len(),
            series.first_scored,
            labels.len()
        )));
    }
    Ok(tail)
}

pub fn pooled_auroc(episodes: &[(ScoreSeries, LabelSeries)]) -> Result<PooledAuroc> {
    let mut all_scores = Vec::new();
    let mut all_labels = Vec::new();
    let mut per_episode = Vec::with_capacity(episodes.len());
    for (series, labels) in episodes {
        let aligned = aligned_labels(series, labels)?;
        all_scores.extend_from_slice(&series.scores);
        all_labels.extend_from_slice(aligned);
        per_episode.push(auroc(&series.scores, aligned).ok());
    }
    let pooled = auroc(&all_scores, &all_labels)?;
    let n_pos = all_labels.iter().filter(|&&l| l != 0).count();
    Ok(PooledAuroc {
        pooled,
        per_episode,
        n_pos,
        n_neg: all_labels.len() - n_pos,
    })
}

/// The `1 - fpr` quantile of in-distribution scores, "higher" convention:
/// the order statistic at index `ceil((n - 1) * (1 - fpr))`.
pub fn calibrate_threshold(in_dist_scores: &[f64], fpr: f64) -> Result<f64> {
    if in_dist_scores.is_empty() {
        return Err(Error::InsufficientData("no scores to calibrate on".into()));
    }
    if !(fpr > 0.0 && fpr < 1.0) {
        return Err(Error::Config(format!("fpr must be in (0, 1), got {fpr}")));
    }
    let mut sorted = in_dist_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let k = (((n - 1) as f64) * (1.0 - fpr)).ceil() as usize;
    Ok(sorted[k.min(n - 1)])
}

/// Steps from `onset` to the first scored timestep at or after it whose score
/// exceeds `threshold`.
pub fn detection_delay(series: &ScoreSeries, onset: usize, threshold: f64) -> Option<usize> {
    series
        .iter()
        .find(|&(t, s)| t >= onset && s > threshold)
        .map(|(t, _)| t - onset)
}

/// Everything reported for one evaluated scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub auroc: f64,
    pub mean_episode_auroc: Option<f64>,
    pub n_pos: usize,
    pub n_neg: usize,
    /// Mean over episodes that were detected.
    pub detection_delay: Option<f64>,
    pub detected_fraction: f64,
}

/// Pooled AUROC and threshold-based detection delay over labelled episodes.
/// The threshold is calibrated on the pre-onset (in-distribution) scores.
pub fn evaluate(scored: &[(ScoreSeries, LabelSeries)], fpr: f64) -> Result<EvalResult> {
    let pooled = pooled_auroc(scored)?;
    let mut negatives = Vec::new();
    for (series, labels) in scored {
        let aligned = aligned_labels(series, labels)?;
        negatives.extend(
            series
                .scores
                .iter()
                .zip(aligned)
                .filter(|(_, &l)| l == 0)
                .map(|(s, _)| *s),
        );
    }
    let threshold = calibrate_threshold(&negatives, fpr)?;
    let mut delays = Vec::new();
    let mut with_onset = 0usize;
    for (series, labels) in scored {
        if let Some(onset) = labels.labels.iter().position(|&l| l != 0) {
            with_onset += 1;
            if let Some(d) = detection_delay(series, onset, threshold) {
                delays.push(d as f64);
            }
        }
    }
    Ok(EvalResult {
        auroc: pooled.pooled,
        mean_episode_auroc: pooled.mean_per_episode(),
        n_pos: pooled.n_pos,
        n_neg: pooled.n_neg,
        detection_delay: (!delays.is_empty()).then(|| delays.iter().sum::<f64>() / delays.len() as f64),
        detected_fraction: if with_onset == 0 {
            0.0
        } else {
            delays.len() as f64 / with_onset as f64
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingCell {
    pub n_dims: usize,
    pub len: usize,
    pub repeats: usize,
    /// Seconds for sliding-window feature extraction over the whole episode.
    pub extract_median: f64,
    pub extract_mean: f64,
    /// Seconds for training (partitioned extraction plus forest fits).
    pub train_median: f64,
    pub train_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub cells: Vec<ScalingCell>,
}

impl ScalingReport {
    pub fn cell(&self, n_dims: usize, len: usize) -> Option<&ScalingCell> {
        self.cells.iter().find(|c| c.n_dims == n_dims && c.len == len)
    }

    /// Least-squares slope of log extraction time against log T at fixed N.
    pub fn slope_in_len(&self, n_dims: usize) -> Option<f64> {
        log_log_slope(
            self.cells
                .iter()
                .filter(|c| c.n_dims == n_dims)
                .map(|c| (c.len as f64, c.extract_median)),
        )
    }

    /// Least-squares slope of log extraction time against log N at fixed T.
    pub fn slope_in_dims(&self, len: usize) -> Option<f64> {
        log_log_slope(
            self.cells
                .iter()
                .filter(|c| c.len == len)
                .map(|c| (c.n_dims as f64, c.extract_median)),
        )
    }
}

fn log_log_slope(points: impl Iterator<Item = (f64, f64)>) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points.map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Deterministic pseudo-random walk used as benchmark input.
fn bench_episode(n_dims: usize, len: usize) -> EpisodeMatrix {
    let mut state = 0x2545_F491_4F6C_DD1Du64;
    let mut data = Vec::with_capacity(n_dims * len);
    for _ in 0..n_dims {
        let mut x = 0.0;
        for _ in 0..len {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            x = 0.9 * x + (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
            data.push(x);
        }
    }
    EpisodeMatrix::from_row_major(n_dims, len, data, None).expect("finite benchmark data")
}

/// Stride-1 extraction over every window of every row; returns a checksum.
pub fn extract_all(episode: &EpisodeMatrix, config: &DetectorConfig) -> Result<f64> {
    let w = config.w;
    let mut acc = 0.0;
    for row in episode.rows() {
        for win in row.windows(w) {
            let fv = feature_vector(win, &config.kernel)?;
            acc += fv.rbf + fv.mean;
        }
    }
    Ok(acc)
}

/// Times extraction and training on synthetic episodes for every
/// `(N, T)` pair. Repeats are interleaved round-robin across cells so slow
/// drifts of the host hit every cell alike; each extraction sample covers a
/// batch of iterations long enough to swamp timer resolution.
pub fn measure_scaling(
    config: &DetectorConfig,
    dims: &[usize],
    lens: &[usize],
    repeats: usize,
) -> Result<ScalingReport> {
    const MIN_BATCH_SECS: f64 = 0.04;
    let repeats = repeats.max(1);
    let mut grid = Vec::new();
    for &n_dims in dims {
        for &len in lens {
            if len < config.w {
                return Err(Error::EpisodeTooShort { len, w: config.w });
            }
            let ep = bench_episode(n_dims, len);
            let start = Instant::now();
            black_box(extract_all(black_box(&ep), config)?);
            let once = start.elapsed().as_secs_f64().max(1e-9);
            let batch = ((MIN_BATCH_SECS / once).ceil() as usize).clamp(1, 1_000_000);
            grid.push((n_dims, len, ep, batch));
        }
    }

    let mut extract = vec![Vec::with_capacity(repeats); grid.len()];
    let mut train = vec![Vec::with_capacity(repeats); grid.len()];
    for _ in 0..repeats {
        for (i, (_, _, ep, batch)) in grid.iter().enumerate() {
            let start = Instant::now();
            for _ in 0..*batch {
                black_box(extract_all(black_box(ep), config)?);
            }
            extract[i].push(start.elapsed().as_secs_f64() / *batch as f64);

            let start = Instant::now();
            match DetectorModel::train(std::slice::from_ref(ep), config) {
                Ok(model) => {
                    black_box(model);
                }
                Err(Error::InsufficientData(_)) => {}
                Err(e) => return Err(e),
            }
            train[i].push(start.elapsed().as_secs_f64());
        }
    }

    let cells = grid
        .iter()
        .zip(extract.iter_mut().zip(train.iter_mut()))
        .map(|((n_dims, len, _, _), (ex, tr))| ScalingCell {
            n_dims: *n_dims,
            len: *len,
            repeats,
            extract_mean: ex.iter().sum::<f64>() / repeats as f64,
            extract_median: median(ex),
            train_mean: tr.iter().sum::<f64>() / repeats as f64,
            train_median: median(tr),
        })
        .collect();
    Ok(ScalingReport { cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_auroc(scores: &[f64], labels: &[u8]) -> f64 {
        let mut num = 0.0;
        let mut pairs = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1.0;
                    if si > sj {
                        num += 1.0;
                    } else if si == sj {
                        num += 0.5;
                    }
                }
            }
        }
        num / pairs
    }

    fn series(first: usize, scores: Vec<f64>) -> ScoreSeries {
        ScoreSeries {
            scores,
            first_scored: first,
        }
    }

    #[test]
    fn auroc_fixtures() {
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.3; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
        let s = [0.1, 0.4, 0.35, 0.8];
        let l = [0, 0, 1, 1];
        assert_eq!(brute_auroc(&s, &l), 0.75);
        assert_eq!(auroc(&s, &l).unwrap(), 0.75);
    }

    #[test]
    fn auroc_errors() {
        assert!(matches!(auroc(&[0.1, 0.2], &[1, 1]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(auroc(&[0.1, 0.2], &[0, 0]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(auroc(&[0.1], &[0, 1]), Err(Error::Shape(_))));
        assert!(auroc(&[f64::NAN, 0.2], &[0, 1]).is_err());
    }

    #[test]
    fn pooled_matches_concatenation() {
        let a = (
            series(2, vec![0.1, 0.7, 0.9]),
            LabelSeries {
                labels: vec![0, 0, 0, 1, 1],
            },
        );
        let b = (
            series(2, vec![0.2, 0.3, 0.6]),
            LabelSeries {
                labels: vec![0, 0, 0, 0, 1],
            },
        );
        let single = pooled_auroc(std::slice::from_ref(&a)).unwrap();
        assert_eq!(single.pooled, auroc(&[0.1, 0.7, 0.9], &[0, 1, 1]).unwrap());

        let both = pooled_auroc(&[a.clone(), b.clone()]).unwrap();
        let manual = auroc(&[0.1, 0.7, 0.9, 0.2, 0.3, 0.6], &[0, 1, 1, 0, 0, 1]).unwrap();
        assert_eq!(both.pooled, manual);
        assert_eq!(both.per_episode.len(), 2);

        let doubled = pooled_auroc(&[a.clone(), b.clone(), a, b]).unwrap();
        assert_eq!(doubled.pooled, both.pooled);
    }

    #[test]
    fn pooled_rejects_misaligned() {
        let a = (
            series(1, vec![0.1, 0.7]),
            LabelSeries {
                labels: vec![0, 0, 0, 1],
            },
        );
        assert!(pooled_auroc(&[a]).is_err());
    }

    #[test]
    fn threshold_fixtures() {
        let s: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(calibrate_threshold(&s, 0.5).unwrap(), 51.0);
        assert_eq!(calibrate_threshold(&s, 1e-9).unwrap(), 100.0);
        assert_eq!(calibrate_threshold(&[0.4; 7], 0.05).unwrap(), 0.4);
        assert!(calibrate_threshold(&[], 0.1).is_err());
        assert!(calibrate_threshold(&s, 0.0).is_err());
    }

    #[test]
    fn delay_fixtures() {
        let jump = series(0, vec![0.1, 0.1, 0.9, 0.9]);
        assert_eq!(detection_delay(&jump, 2, 0.5), Some(0));
        assert_eq!(detection_delay(&jump, 2, 0.95), None);
        let ramp = series(3, (0..20).map(|i| i as f64 / 20.0).collect());
        // t = 3 + i, score i/20; crosses 0.5 first at i = 11, t = 14.
        assert_eq!(detection_delay(&ramp, 9, 0.5), Some(5));
    }

    #[test]
    fn scaling_smoke() {
        let cfg = DetectorConfig::default();
        let r = measure_scaling(&cfg, &[1], &[cfg.w], 1).unwrap();
        assert_eq!(r.cells.len(), 1);
        assert!(r.cells[0].extract_median > 0.0);
        assert!(r.cells[0].train_median > 0.0);
    }

    proptest! {
        #[test]
        fn auroc_matches_brute_force(
            pairs in prop::collection::vec((0u8..12, any::<bool>()), 2..200)
        ) {
            let scores: Vec<f64> = pairs.iter().map(|p| f64::from(p.0) / 4.0).collect();
            let labels: Vec<u8> = pairs.iter().map(|p| u8::from(p.1)).collect();
            let pos = labels.iter().filter(|&&l| l == 1).count();
            prop_assume!(pos > 0 && pos < labels.len());
            let fast = auroc(&scores, &labels).unwrap();
            prop_assert!((fast - brute_auroc(&scores, &labels)).abs() <= 1e-12);

            let flipped: Vec<u8> = labels.iter().map(|l| 1 - l).collect();
            prop_assert!((fast + auroc(&scores, &flipped).unwrap() - 1.0).abs() <= 1e-12);

            let transformed: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            prop_assert_eq!(auroc(&transformed, &labels).unwrap(), fast);
        }

        #[test]
        fn delay_monotone_in_threshold(
            scores in prop::collection::vec(0.0f64..1.0, 1..60),
            onset in 0usize..60,
            a in 0.0f64..1.0,
            b in 0.0f64..1.0,
        ) {
            let s = series(0, scores);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            match (detection_delay(&s, onset, lo), detection_delay(&s, onset, hi)) {
                (Some(dl), Some(dh)) => prop_assert!(dl <= dh),
                (None, Some(_)) => prop_assert!(false),
                _ => {}
            }
        }
    }
}
