//! One-sided upper Page CUSUM over the anomaly-score stream.
//!
//! `S_t = max(0, S_{t-1} + a_t - target - slack)`, alarm once `S_t > threshold`.
//! Alarms latch.

use serde::{Deserialize, Serialize};

use super::{DetectorModel, ScoreSeries};
use crate::episode::{std_dev, EpisodeMatrix};
use crate::error::{Error, Result};

/// Slack as a multiple of the in-distribution score standard deviation.
pub const DEFAULT_SLACK_FACTOR: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CusumParams {
    pub target: f64,
    pub slack: f64,
    pub threshold: f64,
}

impl CusumParams {
    pub fn validate(&self) -> Result<()> {
        if !self.target.is_finite() {
            return Err(Error::Config("CUSUM target must be finite".into()));
        }
        if !(self.slack.is_finite() && self.slack >= 0.0) {
            return Err(Error::Config(format!("CUSUM slack must be >= 0, got {}", self.slack)));
        }
        if !(self.threshold.is_finite() && self.threshold > 0.0) {
            return Err(Error::Config(format!(
                "CUSUM threshold must be > 0, got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CusumState {
    pub statistic: f64,
    pub alarmed: bool,
    pub alarm_time: Option<usize>,
    /// Timestep of the next update.
    pub t: usize,
}

impl Default for CusumState {
    fn default() -> Self {
        Self::starting_at(0)
    }
}

impl CusumState {
    pub fn starting_at(t: usize) -> Self {
        Self {
            statistic: 0.0,
            alarmed: false,
            alarm_time: None,
            t,
        }
    }
}

pub fn cusum_update(state: CusumState, score: f64, params: &CusumParams) -> CusumState {
    let statistic = (state.statistic + (score - params.target - params.slack)).max(0.0);
    let fire = !state.alarmed && statistic > params.threshold;
    CusumState {
        statistic,
        alarmed: state.alarmed || fire,
        alarm_time: if fire { Some(state.t) } else { state.alarm_time },
        t: state.t + 1,
    }
}

/// Statistic after every update of a scored episode, timed from its first
/// scored timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct CusumTrace {
    pub statistic: Vec<f64>,
    pub alarm_time: Option<usize>,
}

impl CusumTrace {
    pub fn alarmed_at(&self, i: usize, first_scored: usize) -> bool {
        self.alarm_time.is_some_and(|a| first_scored + i >= a)
    }
}

pub fn run_cusum(series: &ScoreSeries, params: &CusumParams) -> CusumTrace {
    let mut state = CusumState::starting_at(series.first_scored);
    let statistic = series
        .scores
        .iter()
        .map(|&a| {
            state = cusum_update(state, a, params);
            state.statistic
        })
        .collect();
    CusumTrace {
        statistic,
        alarm_time: state.alarm_time,
    }
}

/// Sets the target to the mean training score, the slack to
/// `slack_factor` times the training score std, and the threshold to the
/// `1 - fpr` quantile of per-episode peak statistics on held-out
/// in-distribution episodes.
pub fn calibrate_cusum(
    model: &DetectorModel,
    train: &[EpisodeMatrix],
    holdout: &[EpisodeMatrix],
    fpr: f64,
    slack_factor: f64,
) -> Result<CusumParams> {
    if holdout.is_empty() {
        return Err(Error::InsufficientData(
            "no held-out episodes for CUSUM calibration".into(),
        ));
    }
    let train_scores: Vec<f64> = model
        .score_episodes(train)?
        .into_iter()
        .flat_map(|s| s.scores)
        .collect();
    if train_scores.is_empty() {
        return Err(Error::InsufficientData("no training scores".into()));
    }
    let target = train_scores.iter().sum::<f64>() / train_scores.len() as f64;
    let slack = slack_factor * std_dev(&train_scores);
    let probe = CusumParams {
        target,
        slack,
        threshold: f64::MAX,
    };
    let peaks: Vec<f64> = model
        .score_episodes(holdout)?
        .iter()
        .map(|s| run_cusum(s, &probe).statistic.into_iter().fold(0.0, f64::max))
        .collect();
    let threshold = crate::eval::calibrate_threshold(&peaks, fpr)?.max(1e-9);
    let params = CusumParams {
        target,
        slack,
        threshold,
    };
    params.validate()?;
    Ok(params)
}
