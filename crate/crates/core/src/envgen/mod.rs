//! Synthetic benchmark episodes: plant simulation under a scripted
//! controller, with optional anomalies switched on at a fixed onset.
//!
//! Every episode seed fans out into three independent streams (plant noise,
//! autoregressive anomaly noise, semantic action noise), so an anomalous run
//! and its clean twin agree exactly on every column before the onset.
//!
//! Anomaly magnitudes are relative: noise amplitudes, offsets and forces are
//! multiples of the clean twin's per-dimension standard deviation (of the
//! observations, or of the controller output for action-side anomalies).

pub mod ar;
pub mod plant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::episode::{std_dev, EpisodeMatrix};
use crate::error::{Error, Result};
use crate::iforest::derive_seed;

pub use self::ar::{ar_sample, noise_matrix, ArProcess};
pub use self::plant::{CartpoleParams, Controller, LinearParams, Plant};

const PLANT_STREAM: u64 = 1;
const ANOMALY_STREAM: u64 = 2;
const ACTION_NOISE_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    Arno,
    Arns,
    ActionFactor,
    ActionNoise,
    ActionOffset,
    BodyMassFactor,
    ForceVector,
    /// Constant offset on the recorded observations; the controller keeps
    /// seeing the true state.
    MeanShift,
}

impl AnomalyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AnomalyKind::Arno => "arno",
            AnomalyKind::Arns => "arns",
            AnomalyKind::ActionFactor => "action_factor",
            AnomalyKind::ActionNoise => "action_noise",
            AnomalyKind::ActionOffset => "action_offset",
            AnomalyKind::BodyMassFactor => "body_mass_factor",
            AnomalyKind::ForceVector => "force_vector",
            AnomalyKind::MeanShift => "mean_shift",
        }
    }

    pub fn is_autoregressive(self) -> bool {
        matches!(self, AnomalyKind::Arno | AnomalyKind::Arns)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Light,
    Medium,
    Strong,
    Minor,
    Severe,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Light => "light",
            Level::Medium => "medium",
            Level::Strong => "strong",
            Level::Minor => "minor",
            Level::Severe => "severe",
        }
    }

    fn is_noise_level(self) -> bool {
        matches!(self, Level::Light | Level::Medium | Level::Strong)
    }
}

/// Default magnitude for a kind at a level.
pub fn default_magnitude(kind: AnomalyKind, level: Level) -> Result<f64> {
    use AnomalyKind::*;
    use Level::*;
    let m = match (kind, level) {
        (Arno | Arns, Light) => 0.25,
        (Arno | Arns, Medium) => 1.0,
        (Arno | Arns, Strong) => 2.0,
        (ActionFactor, Minor) => 0.5,
        (ActionFactor, Severe) => 0.2,
        (ActionNoise | ActionOffset | ForceVector, Minor) => 0.5,
        (ActionNoise | ActionOffset | ForceVector, Severe) => 2.0,
        (BodyMassFactor, Minor) => 2.0,
        (BodyMassFactor, Severe) => 5.0,
        (MeanShift, Minor) => 1.0,
        (MeanShift, Severe) => 2.0,
        _ => {
            return Err(Error::Config(format!(
                "level {} does not apply to {}",
                level.as_str(),
                kind.as_str()
            )))
        }
    };
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnomalySpec {
    pub kind: AnomalyKind,
    pub level: Level,
    pub onset: usize,
    /// AR order for arno/arns; defaults to 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ar_order: Option<u8>,
    /// Explicit AR coefficients, overriding the order's defaults.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ar_coefs: Option<Vec<f64>>,
    /// Overrides the level's default magnitude.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub magnitude: Option<f64>,
}

impl AnomalySpec {
    pub fn new(kind: AnomalyKind, level: Level, onset: usize) -> Self {
        Self {
            kind,
            level,
            onset,
            ar_order: None,
            ar_coefs: None,
            magnitude: None,
        }
    }

    pub fn with_ar_order(mut self, order: u8) -> Self {
        self.ar_order = Some(order);
        self
    }

    pub fn with_magnitude(mut self, magnitude: f64) -> Self {
        self.magnitude = Some(magnitude);
        self
    }

    pub fn magnitude(&self) -> Result<f64> {
        match self.magnitude {
            Some(m) => Ok(m),
            None => default_magnitude(self.kind, self.level),
        }
    }

    pub fn coefs(&self) -> Result<Vec<f64>> {
        match &self.ar_coefs {
            Some(c) => Ok(c.clone()),
            None => ArProcess::default_coefs(self.ar_order.unwrap_or(1)),
        }
    }

    /// Short identifier such as `arno-strong-ar2`.
    pub fn id(&self) -> String {
        let mut id = format!("{}-{}", self.kind.as_str(), self.level.as_str());
        if self.kind.is_autoregressive() {
            id.push_str(&format!("-ar{}", self.ar_order.unwrap_or(1)));
        }
        id
    }

    pub fn validate_for(&self, plant: &Plant) -> Result<()> {
        if self.onset < 1 {
            return Err(Error::Config("anomaly onset must be >= 1".into()));
        }
        if self.kind.is_autoregressive() != self.level.is_noise_level() {
            return Err(Error::Config(format!(
                "level {} does not apply to {}",
                self.level.as_str(),
                self.kind.as_str()
            )));
        }
        if self.kind.is_autoregressive() {
            ArProcess::new(self.coefs()?, 1.0, 0)?;
        } else if self.ar_order.is_some() || self.ar_coefs.is_some() {
            return Err(Error::Config(format!("{} takes no AR parameters", self.kind.as_str())));
        }
        let m = self.magnitude()?;
        let multiplicative = matches!(self.kind, AnomalyKind::ActionFactor | AnomalyKind::BodyMassFactor);
        if !m.is_finite() || m < 0.0 || (multiplicative && m == 0.0) {
            return Err(Error::Config(format!(
                "invalid magnitude {m} for {}",
                self.kind.as_str()
            )));
        }
        if self.kind == AnomalyKind::BodyMassFactor && !matches!(plant, Plant::Cartpole(_)) {
            return Err(Error::Config(format!(
                "body_mass_factor needs a plant with masses, not {}",
                plant.name()
            )));
        }
        Ok(())
    }
}

/// Adds the noise column to the observed state.
pub fn inject_arno(observed: &[f64], noise: &[f64]) -> Vec<f64> {
    observed.iter().zip(noise).map(|(x, e)| x + e).collect()
}

/// Perturbs the state entering the transition and the action applied.
pub fn inject_arns(state: &[f64], action: &[f64], state_noise: &[f64], action_noise: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (inject_arno(state, state_noise), inject_arno(action, action_noise))
}

/// Semantic modifications in effect after the onset.
#[derive(Debug, Clone, PartialEq)]
pub struct Semantic {
    pub action_factor: f64,
    pub action_noise_std: Vec<f64>,
    pub action_offset: Vec<f64>,
    pub mass_factor: f64,
    pub force: Option<Vec<f64>>,
}

impl Semantic {
    fn identity(action_dim: usize) -> Self {
        Self {
            action_factor: 1.0,
            action_noise_std: vec![0.0; action_dim],
            action_offset: vec![0.0; action_dim],
            mass_factor: 1.0,
            force: None,
        }
    }
}

/// `u <- factor * u + offset + N(0, std^2)`.
pub fn apply_semantic(action: &[f64], semantic: &Semantic, rng: &mut ChaCha8Rng) -> Vec<f64> {
    action
        .iter()
        .enumerate()
        .map(|(i, &u)| {
            let z: f64 = StandardNormal.sample(rng);
            semantic.action_factor * u + semantic.action_offset[i] + semantic.action_noise_std[i] * z
        })
        .collect()
}

/// Anomaly parameters made concrete for one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedAnomaly {
    pub onset: usize,
    /// ARNO: `N x T`; ARNS: `(N + M) x T` with state rows first.
    pub noise: Option<Vec<Vec<f64>>>,
    pub semantic: Semantic,
    pub observation_offset: Option<Vec<f64>>,
}

/// Full record of a simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub episode: EpisodeMatrix,
    /// Controller output at `t = 0..T-1`, before any perturbation.
    pub actions: Vec<Vec<f64>>,
    pub anomaly: Option<ResolvedAnomaly>,
}

fn action_std(actions: &[Vec<f64>], dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|i| std_dev(&actions.iter().map(|a| a[i]).collect::<Vec<_>>()))
        .collect()
}

fn resolve(plant: &Plant, spec: &AnomalySpec, clean: &Trace, len: usize, seed: u64) -> Result<ResolvedAnomaly> {
    let n = plant.state_dim();
    let m = plant.action_dim();
    let mag = spec.magnitude()?;
    let obs_std = clean.episode.row_std();
    let act_std = action_std(&clean.actions, m);
    let mut semantic = Semantic::identity(m);
    let mut noise = None;
    let mut observation_offset = None;

    match spec.kind {
        AnomalyKind::Arno | AnomalyKind::Arns => {
            let unit = ArProcess::with_marginal_std(spec.coefs()?, 1.0, 0)?;
            let scales: Vec<f64> = if spec.kind == AnomalyKind::Arno {
                obs_std.clone()
            } else {
                obs_std.iter().chain(&act_std).copied().collect()
            };
            let mut rows = noise_matrix(&unit, scales.len(), len, derive_seed(seed, ANOMALY_STREAM))?;
            for (row, s) in rows.iter_mut().zip(&scales) {
                row.iter_mut().for_each(|v| *v *= mag * s);
            }
            noise = Some(rows);
        }
        AnomalyKind::ActionFactor => semantic.action_factor = mag,
        AnomalyKind::ActionNoise => semantic.action_noise_std = act_std.iter().map(|s| mag * s).collect(),
        AnomalyKind::ActionOffset => semantic.action_offset = act_std.iter().map(|s| mag * s).collect(),
        AnomalyKind::BodyMassFactor => semantic.mass_factor = mag,
        AnomalyKind::ForceVector => {
            semantic.force = Some(match plant {
                Plant::Cartpole(_) => vec![mag * act_std[0]],
                Plant::Linear(_) => obs_std.iter().map(|s| mag * s).collect(),
            });
        }
        AnomalyKind::MeanShift => observation_offset = Some(obs_std.iter().map(|s| mag * s).collect()),
    }
    debug_assert_eq!(obs_std.len(), n);
    Ok(ResolvedAnomaly {
        onset: spec.onset,
        noise,
        semantic,
        observation_offset,
    })
}

fn column(rows: &[Vec<f64>], range: std::ops::Range<usize>, t: usize) -> Vec<f64> {
    rows[range].iter().map(|r| r[t]).collect()
}

/// Observation rows and action rows of one rollout.
type Rollout = (Vec<Vec<f64>>, Vec<Vec<f64>>);

fn run(
    plant: &Plant,
    controller: &Controller,
    len: usize,
    seed: u64,
    kind: Option<AnomalyKind>,
    anomaly: Option<&ResolvedAnomaly>,
) -> Result<Rollout> {
    let n = plant.state_dim();
    let m = plant.action_dim();
    let mut plant_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, PLANT_STREAM));
    let mut action_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, ACTION_NOISE_STREAM));
    let onset = anomaly.map_or(usize::MAX, |a| a.onset);

    let mut state = plant.initial_state(&mut plant_rng);
    let mut observations = Vec::with_capacity(len);
    let mut actions = Vec::with_capacity(len);
    for t in 0..len {
        let mut observed = state.clone();
        if let (Some(AnomalyKind::Arno), Some(a)) = (kind, anomaly) {
            if t >= onset {
                let rows = a.noise.as_ref().expect("resolved arno noise");
                observed = inject_arno(&observed, &column(rows, 0..n, t));
            }
        }
        let recorded = match anomaly.and_then(|a| a.observation_offset.as_ref()) {
            Some(offset) if t >= onset => inject_arno(&observed, offset),
            _ => observed.clone(),
        };
        if recorded.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("simulation diverged at t={t}")));
        }
        observations.push(recorded);

        let action = controller.act(&observed, m);
        actions.push(action.clone());
        if t + 1 == len {
            break;
        }

        // The transition producing column t+1 is perturbed once t+1 >= onset.
        let process = plant.process_noise(&mut plant_rng);
        let next = match anomaly {
            Some(a) if t + 1 >= onset => {
                let mut applied = apply_semantic(&action, &a.semantic, &mut action_rng);
                let mut input = state.clone();
                if kind == Some(AnomalyKind::Arns) {
                    let rows = a.noise.as_ref().expect("resolved arns noise");
                    (input, applied) = inject_arns(
                        &input,
                        &applied,
                        &column(rows, 0..n, t + 1),
                        &column(rows, n..n + m, t + 1),
                    );
                }
                plant.step(
                    &input,
                    &applied,
                    &process,
                    a.semantic.mass_factor,
                    a.semantic.force.as_deref(),
                )
            }
            _ => plant.step(&state, &action, &process, 1.0, None),
        };
        state = next;
    }
    Ok((observations, actions))
}

fn to_episode(observations: Vec<Vec<f64>>, n: usize, onset: Option<usize>) -> Result<EpisodeMatrix> {
    let len = observations.len();
    let mut data = vec![0.0; n * len];
    for (t, col) in observations.iter().enumerate() {
        for (d, v) in col.iter().enumerate() {
            data[d * len + t] = *v;
        }
    }
    EpisodeMatrix::from_row_major(n, len, data, onset)
}

/// Simulates one episode and keeps everything needed to audit it.
pub fn simulate_trace(
    plant: &Plant,
    controller: &Controller,
    len: usize,
    seed: u64,
    spec: Option<&AnomalySpec>,
) -> Result<Trace> {
    if len == 0 {
        return Err(Error::Config("episode length must be >= 1".into()));
    }
    plant.validate()?;
    controller.validate_for(plant)?;
    let n = plant.state_dim();
    let clean = {
        let (obs, actions) = run(plant, controller, len, seed, None, None)?;
        Trace {
            episode: to_episode(obs, n, None)?,
            actions,
            anomaly: None,
        }
    };
    let Some(spec) = spec else {
        let mut clean = clean;
        clean.episode = clean.episode.with_meta("env", plant.name()).with_meta("seed", seed);
        return Ok(clean);
    };
    spec.validate_for(plant)?;
    if spec.onset >= len {
        return Err(Error::Bounds {
            index: spec.onset,
            reason: format!("onset must be < T = {len}"),
        });
    }
    let resolved = resolve(plant, spec, &clean, len, seed)?;
    let (obs, actions) = run(plant, controller, len, seed, Some(spec.kind), Some(&resolved))?;
    let episode = to_episode(obs, n, Some(spec.onset))?
        .with_meta("env", plant.name())
        .with_meta("seed", seed)
        .with_meta("anomaly", spec.id());
    Ok(Trace {
        episode,
        actions,
        anomaly: Some(resolved),
    })
}

/// Simulates one `N x T` observation episode. A pure function of its inputs.
pub fn simulate(
    plant: &Plant,
    controller: &Controller,
    len: usize,
    seed: u64,
    spec: Option<&AnomalySpec>,
) -> Result<EpisodeMatrix> {
    Ok(simulate_trace(plant, controller, len, seed, spec)?.episode)
}

#[cfg(test)]
mod tests {
    use super::plant::identity;
    use super::*;

    fn cartpole() -> Plant {
        Plant::Cartpole(CartpoleParams::default())
    }

    fn linear() -> Plant {
        Plant::Linear(LinearParams::default())
    }

    fn all_specs(onset: usize) -> Vec<AnomalySpec> {
        use AnomalyKind::*;
        let mut specs = Vec::new();
        for kind in [Arno, Arns] {
            for level in [Level::Light, Level::Strong] {
                for order in [1, 2] {
                    specs.push(AnomalySpec::new(kind, level, onset).with_ar_order(order));
                }
            }
        }
        for kind in [
            ActionFactor,
            ActionNoise,
            ActionOffset,
            BodyMassFactor,
            ForceVector,
            MeanShift,
        ] {
            for level in [Level::Minor, Level::Severe] {
                specs.push(AnomalySpec::new(kind, level, onset));
            }
        }
        specs
    }

    #[test]
    fn unforced_pole_falls() {
        let params = CartpoleParams {
            force_noise_std: 0.0,
            init_range: 0.0,
            ..CartpoleParams::default()
        };
        let plant = Plant::Cartpole(params.clone());
        // Start from a small tilt by stepping a hand-set state.
        let mut state = vec![0.0, 0.0, 0.01, 0.0];
        let mut prev = state[2];
        let mut saturated = false;
        for _ in 0..200 {
            state = plant.step(&state, &[0.0], &[0.0], 1.0, None);
            assert!(state[2] >= prev);
            prev = state[2];
            saturated |= state[2] == params.theta_limit;
        }
        assert!(saturated);
        assert!(state.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn pd_controller_balances() {
        let ep = simulate(&cartpole(), &Controller::default_for(&cartpole()), 500, 3, None).unwrap();
        assert!(ep.row(2).iter().all(|th| th.abs() < 0.2));
        assert_eq!(ep.n_dims(), 4);
        assert_eq!(ep.len(), 500);
    }

    #[test]
    fn degenerate_linear_plant_is_white_noise() {
        let plant = Plant::Linear(LinearParams {
            a: vec![vec![0.0; 3]; 3],
            b: vec![vec![0.0]; 3],
            process_noise_std: 1.0,
            init_std: 1.0,
        });
        let ctl = Controller::Zero;
        let ep = simulate(&plant, &ctl, 20_000, 1, None).unwrap();
        for row in ep.rows() {
            let sd = std_dev(row);
            assert!((sd - 1.0).abs() < 0.03);
            let m = row.iter().sum::<f64>() / row.len() as f64;
            let lag: f64 = row.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum::<f64>() / row.len() as f64;
            assert!(lag.abs() < 0.03);
        }
    }

    #[test]
    fn anomalies_are_local() {
        for plant in [cartpole(), linear()] {
            let ctl = Controller::default_for(&plant);
            let clean = simulate(&plant, &ctl, 80, 11, None).unwrap();
            for spec in all_specs(30) {
                if spec.validate_for(&plant).is_err() {
                    continue;
                }
                let ep = simulate(&plant, &ctl, 80, 11, Some(&spec)).unwrap();
                assert_eq!(ep.onset(), Some(30));
                for n in 0..ep.n_dims() {
                    assert_eq!(&ep.row(n)[..30], &clean.row(n)[..30], "{} {}", plant.name(), spec.id());
                }
                assert_ne!(
                    ep.as_row_major(),
                    clean.as_row_major(),
                    "{} {}",
                    plant.name(),
                    spec.id()
                );
            }
        }
    }

    #[test]
    fn deterministic() {
        let plant = cartpole();
        let ctl = Controller::default_for(&plant);
        let spec = AnomalySpec::new(AnomalyKind::Arns, Level::Medium, 40).with_ar_order(2);
        let a = simulate(&plant, &ctl, 100, 5, Some(&spec)).unwrap();
        let b = simulate(&plant, &ctl, 100, 5, Some(&spec)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, simulate(&plant, &ctl, 100, 6, Some(&spec)).unwrap());
    }

    #[test]
    fn identity_magnitudes_reproduce_clean_run() {
        for plant in [cartpole(), linear()] {
            let ctl = Controller::default_for(&plant);
            let clean = simulate(&plant, &ctl, 60, 2, None).unwrap();
            let specs = [
                AnomalySpec::new(AnomalyKind::Arno, Level::Light, 10).with_magnitude(0.0),
                AnomalySpec::new(AnomalyKind::ActionFactor, Level::Minor, 10).with_magnitude(1.0),
                AnomalySpec::new(AnomalyKind::ActionOffset, Level::Minor, 10).with_magnitude(0.0),
                AnomalySpec::new(AnomalyKind::ActionNoise, Level::Minor, 10).with_magnitude(0.0),
            ];
            for spec in specs {
                let ep = simulate(&plant, &ctl, 60, 2, Some(&spec)).unwrap();
                assert_eq!(ep.as_row_major(), clean.as_row_major(), "{}", spec.id());
            }
        }
    }

    #[test]
    fn arns_single_step_oracle() {
        // A = 0, B = I: x_t = u_{t-1} + action noise_t + process noise_t after onset.
        let plant = Plant::Linear(LinearParams {
            a: vec![vec![0.0; 2]; 2],
            b: identity(2),
            process_noise_std: 1.0,
            init_std: 1.0,
        });
        let ctl = Controller::default_for(&plant);
        let spec = AnomalySpec::new(AnomalyKind::Arns, Level::Strong, 5);
        let clean = simulate_trace(&plant, &ctl, 30, 9, None).unwrap();
        let anom = simulate_trace(&plant, &ctl, 30, 9, Some(&spec)).unwrap();
        let noise = anom.anomaly.as_ref().unwrap().noise.as_ref().unwrap();
        assert_eq!(noise.len(), 4);
        for t in 1..30 {
            for d in 0..2 {
                let process_clean = clean.episode.get(d, t) - clean.actions[t - 1][d];
                let expected = if t >= 5 {
                    anom.actions[t - 1][d] + noise[2 + d][t] + process_clean
                } else {
                    clean.episode.get(d, t)
                };
                assert!((anom.episode.get(d, t) - expected).abs() < 1e-12, "t={t} d={d}");
            }
        }
    }

    #[test]
    fn arno_adds_noise_to_observations() {
        let plant = linear();
        let ctl = Controller::default_for(&plant);
        let spec = AnomalySpec::new(AnomalyKind::Arno, Level::Medium, 10).with_ar_order(2);
        let trace = simulate_trace(&plant, &ctl, 50, 4, Some(&spec)).unwrap();
        let noise = trace.anomaly.as_ref().unwrap().noise.as_ref().unwrap();
        assert_eq!(noise.len(), 4);
        // The controller saw the noisy observation.
        for t in 10..50 {
            let u = ctl.act(&trace.episode.column(t), 4);
            assert_eq!(u, trace.actions[t]);
        }
    }

    #[test]
    fn mean_shift_offsets_observations() {
        let plant = linear();
        let ctl = Controller::default_for(&plant);
        let clean = simulate(&plant, &ctl, 60, 8, None).unwrap();
        let spec = AnomalySpec::new(AnomalyKind::MeanShift, Level::Severe, 20);
        let ep = simulate(&plant, &ctl, 60, 8, Some(&spec)).unwrap();
        let sd = clean.row_std();
        for t in 20..60 {
            for d in 0..4 {
                assert!((ep.get(d, t) - clean.get(d, t) - 2.0 * sd[d]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let ctl = Controller::default_for(&linear());
        let bm = AnomalySpec::new(AnomalyKind::BodyMassFactor, Level::Minor, 5);
        assert!(matches!(
            simulate(&linear(), &ctl, 20, 0, Some(&bm)),
            Err(Error::Config(_))
        ));
        let wrong_level = AnomalySpec::new(AnomalyKind::Arno, Level::Minor, 5);
        assert!(simulate(&linear(), &ctl, 20, 0, Some(&wrong_level)).is_err());
        let zero_onset = AnomalySpec::new(AnomalyKind::Arno, Level::Light, 0);
        assert!(simulate(&linear(), &ctl, 20, 0, Some(&zero_onset)).is_err());
        let late = AnomalySpec::new(AnomalyKind::Arno, Level::Light, 20);
        assert!(simulate(&linear(), &ctl, 20, 0, Some(&late)).is_err());
        let mut bad_ar = AnomalySpec::new(AnomalyKind::Arns, Level::Light, 5);
        bad_ar.ar_coefs = Some(vec![1.2]);
        assert!(simulate(&linear(), &ctl, 20, 0, Some(&bad_ar)).is_err());
        let zero_factor = AnomalySpec::new(AnomalyKind::ActionFactor, Level::Minor, 5).with_magnitude(0.0);
        assert!(simulate(&linear(), &ctl, 20, 0, Some(&zero_factor)).is_err());
        assert!(simulate(&cartpole(), &ctl, 20, 0, None).is_err());
        assert!(simulate(&linear(), &ctl, 0, 0, None).is_err());
    }

    #[test]
    fn spec_json_shape() {
        let spec = AnomalySpec::new(AnomalyKind::Arno, Level::Strong, 30).with_ar_order(2);
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(text, r#"{"kind":"arno","level":"strong","onset":30,"ar_order":2}"#);
        assert_eq!(spec.id(), "arno-strong-ar2");
        let unknown = r#"{"kind":"arno","level":"strong","onset":30,"colour":1}"#;
        assert!(serde_json::from_str::<AnomalySpec>(unknown).is_err());
    }
}
