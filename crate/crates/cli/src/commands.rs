use std::path::{Path, PathBuf};
use std::time::Instant;

use kernood::detector::cusum::{calibrate_cusum, run_cusum};
use kernood::detector::{load_model, pooled_std, tune_sigma, SigmaTuning};
use kernood::envgen::{simulate, Controller, LinearParams, Plant};
use kernood::episode::{export_csv, load_jsonl, write_jsonl};
use kernood::eval::{evaluate, measure_scaling, ScalingReport};
use kernood::suite::{
    generate_dataset, run_scenarios, summarize, write_results_csv, Manifest, ResultRow, Scenario, Split,
};
use kernood::{DetectorConfig, DetectorModel, EpisodeMatrix, LabelSeries, ScoreSeries, Variant};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{BenchConfig, RunConfig};
use crate::error::{CliError, CliResult};
use crate::io::{read_score_csv, refuse_existing, score_csv, write_atomic, CusumColumns, StagedDir};

/// Options shared by every subcommand, already merged from config and flags.
pub struct Common {
    pub config: RunConfig,
    pub seed: Option<u64>,
    pub force: bool,
    pub out: Option<PathBuf>,
}

impl Common {
    fn out_or(&self, default: &str) -> PathBuf {
        self.out
            .clone()
            .or_else(|| self.config.paths.out.clone())
            .unwrap_or_else(|| PathBuf::from(default))
    }

    fn detector(&self, variant: Option<Variant>) -> DetectorConfig {
        let mut d = self.config.suite.detector;
        if let Some(v) = variant {
            d.variant = v;
        }
        if let Some(s) = self.seed {
            d.forest.seed = s;
        }
        d
    }
}

pub fn load_episodes(path: &Path) -> CliResult<Vec<EpisodeMatrix>> {
    if !path.is_file() {
        return Err(CliError::MissingFile(path.to_path_buf()));
    }
    load_jsonl(path).map_err(|e| match e {
        kernood::Error::Json(j) => CliError::Schema {
            path: path.to_path_buf(),
            message: j.to_string(),
        },
        other => other.into(),
    })
}

fn read_file(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

fn check_dims(episodes: &[EpisodeMatrix], n_dims: usize, what: &str) -> CliResult<()> {
    if let Some((i, e)) = episodes.iter().enumerate().find(|(_, e)| e.n_dims() != n_dims) {
        return Err(CliError::Dimension(format!(
            "{what} episode {i} has {} dims, expected {n_dims}",
            e.n_dims()
        )));
    }
    Ok(())
}

fn jsonl_bytes(episodes: &[EpisodeMatrix]) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, episodes)?;
    Ok(buf)
}

fn pretty_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    bytes
}

#[derive(Debug, Clone, Default)]
pub struct GenerateOpts {
    pub manifest: Option<PathBuf>,
    pub train_episodes: Option<usize>,
    pub val_episodes: Option<usize>,
    pub test_episodes: Option<usize>,
    pub csv: bool,
}

/// Writes `<out>/manifest.json` and `<out>/<scenario>/seed-<s>/{train,val,test}.jsonl`.
pub fn cmd_generate(common: &Common, opts: &GenerateOpts) -> CliResult<PathBuf> {
    let mut suite = match &opts.manifest {
        Some(path) => Manifest::from_json(&read_file(path)?)?.suite,
        None => common.config.suite.clone(),
    };
    if let Some(s) = common.seed {
        suite.seeds = vec![s];
    }
    if let Some(n) = opts.train_episodes {
        suite.n_train = n;
    }
    if let Some(n) = opts.val_episodes {
        suite.n_val = n;
    }
    if let Some(n) = opts.test_episodes {
        suite.n_test = n;
    }
    let manifest = Manifest::new(suite)?;
    let out = common.out_or("data");
    refuse_existing(&out, common.force)?;

    let suite = &manifest.suite;
    let jobs: Vec<(Scenario, u64)> = suite
        .scenarios()
        .into_iter()
        .flat_map(|s| suite.seeds.iter().map(move |&seed| (s.clone(), seed)))
        .collect();
    let datasets = jobs
        .par_iter()
        .map(|(sc, seed)| generate_dataset(suite, sc, *seed))
        .collect::<kernood::Result<Vec<_>>>()?;

    let staged = StagedDir::new(&out, common.force)?;
    for ((sc, seed), data) in jobs.iter().zip(&datasets) {
        let dir = PathBuf::from(sc.id()).join(format!("seed-{seed}"));
        for split in Split::ALL {
            let episodes = data.split(split);
            staged.write(dir.join(format!("{}.jsonl", split.as_str())), &jsonl_bytes(episodes)?)?;
            if opts.csv {
                let csv_dir = staged.path().join(&dir).join(split.as_str());
                std::fs::create_dir_all(&csv_dir).map_err(|e| CliError::io(&csv_dir, e))?;
                for (j, ep) in episodes.iter().enumerate() {
                    export_csv(ep, &csv_dir.join(format!("episode-{j:04}.csv")))?;
                }
            }
        }
    }
    staged.write("manifest.json", &pretty_json(&manifest))?;
    let out = staged.commit()?;
    println!(
        "generated {} scenario(s) x {} seed(s) ({} train / {} val / {} test episodes each) into {}",
        manifest.scenarios.len(),
        suite.seeds.len(),
        suite.n_train,
        suite.n_val,
        suite.n_test,
        out.display()
    );
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct TrainOpts {
    pub train: PathBuf,
    pub val: Option<PathBuf>,
    pub holdout: Option<PathBuf>,
    pub variant: Option<Variant>,
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub episodes: usize,
    pub n_dims: usize,
    pub sigma: f64,
    pub train_seconds: f64,
}

/// Bandwidth: `--sigma`, else the config's fixed value, else tuned on
/// `--val`, else the pooled training std.
pub fn cmd_train(common: &Common, opts: &TrainOpts) -> CliResult<(PathBuf, TrainReport)> {
    let out = common.out_or("model.json");
    refuse_existing(&out, common.force)?;
    let train = load_episodes(&opts.train)?;
    let n_dims = train.first().map_or(0, EpisodeMatrix::n_dims);
    check_dims(&train, n_dims, "training")?;
    let val = opts.val.as_deref().map(load_episodes).transpose()?;
    let holdout = opts.holdout.as_deref().map(load_episodes).transpose()?;
    for (set, name) in [(&val, "validation"), (&holdout, "holdout")] {
        if let Some(eps) = set {
            check_dims(eps, n_dims, name)?;
        }
    }
    if let Some(h) = &holdout {
        if let Some(i) = h.iter().position(|e| e.onset().is_some()) {
            return Err(CliError::Config(format!("holdout episode {i} is labelled anomalous")));
        }
    }

    let base = common.detector(opts.variant);
    let sigma = match (opts.sigma.or(common.config.suite.sigma), &val) {
        (Some(s), _) => s,
        _ if base.variant == Variant::MeanOnly => base.kernel.sigma,
        (None, Some(v)) => {
            let grid = sigma_grid(&train, &common.config.suite.sigma_factors);
            tune_sigma(&train, v, &grid, &base)?.sigma
        }
        (None, None) => sigma_grid(&train, &[1.0])[0],
    };
    let cfg = base.with_sigma(sigma);
    cfg.validate()?;

    let start = Instant::now();
    let mut model = DetectorModel::train(&train, &cfg)?;
    let train_seconds = start.elapsed().as_secs_f64();
    if let Some(h) = &holdout {
        let c = &common.config.cusum;
        model.cusum = Some(calibrate_cusum(&model, &train, h, c.fpr, c.slack_factor)?);
    }
    write_atomic(&out, &model.to_json()?, common.force)?;
    let report = TrainReport {
        episodes: train.len(),
        n_dims,
        sigma,
        train_seconds,
    };
    println!(
        "trained {} forest(s) on {} episode(s) in {:.3} s (sigma = {sigma}) -> {}",
        n_dims,
        train.len(),
        train_seconds,
        out.display()
    );
    Ok((out, report))
}

fn sigma_grid(train: &[EpisodeMatrix], factors: &[f64]) -> Vec<f64> {
    let scale = pooled_std(train);
    let scale = if scale.is_finite() && scale > 0.0 { scale } else { 1.0 };
    factors.iter().map(|f| f * scale).collect()
}

#[derive(Debug, Clone, Default)]
pub struct ScoreOpts {
    pub model: PathBuf,
    pub episodes: PathBuf,
}

/// One `episode-NNNN.csv` per input episode, in input order.
pub fn cmd_score(common: &Common, opts: &ScoreOpts) -> CliResult<PathBuf> {
    let out = common.out_or("scores");
    refuse_existing(&out, common.force)?;
    let model = load_model(&read_file(&opts.model)?)?;
    let episodes = load_episodes(&opts.episodes)?;
    check_dims(&episodes, model.n_dims, "scored")?;
    let series = model.score_episodes(&episodes)?;
    let files = series
        .iter()
        .map(|s| match &model.cusum {
            Some(params) => {
                let trace = run_cusum(s, params);
                score_csv(
                    s,
                    Some(CusumColumns {
                        statistic: &trace.statistic,
                        alarm_time: trace.alarm_time,
                    }),
                )
            }
            None => score_csv(s, None),
        })
        .collect::<CliResult<Vec<_>>>()?;
    let staged = StagedDir::new(&out, common.force)?;
    for (i, bytes) in files.iter().enumerate() {
        staged.write(format!("episode-{i:04}.csv"), bytes)?;
    }
    let out = staged.commit()?;
    println!("scored {} episode(s) -> {}", files.len(), out.display());
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct EvalOpts {
    pub scores: PathBuf,
    pub labels: PathBuf,
    pub fpr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub plant: String,
    pub anomaly: String,
    pub episodes: usize,
    pub auroc: f64,
    pub mean_episode_auroc: Option<f64>,
    pub n_pos: usize,
    pub n_neg: usize,
    pub delay: Option<f64>,
    pub detected_fraction: f64,
}

pub fn score_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("episode-") && n.ends_with(".csv"))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn meta_value(episodes: &[EpisodeMatrix], key: &str) -> String {
    let mut values: Vec<&str> = episodes
        .iter()
        .filter_map(|e| e.meta.get(key).map(String::as_str))
        .collect();
    values.sort_unstable();
    values.dedup();
    values.join("|")
}

/// Labels come from the onsets recorded in the episodes file.
pub fn cmd_eval(common: &Common, opts: &EvalOpts) -> CliResult<(PathBuf, EvalRow)> {
    let out = common.out_or("results.csv");
    refuse_existing(&out, common.force)?;
    let fpr = opts.fpr.unwrap_or(common.config.suite.fpr);
    if !(fpr > 0.0 && fpr < 1.0) {
        return Err(CliError::Config(format!("fpr must be in (0, 1), got {fpr}")));
    }
    if !opts.scores.is_dir() {
        return Err(CliError::MissingFile(opts.scores.clone()));
    }
    let files = score_files(&opts.scores)?;
    let episodes = load_episodes(&opts.labels)?;
    if files.len() != episodes.len() {
        return Err(CliError::Dimension(format!(
            "{} score files but {} labelled episodes",
            files.len(),
            episodes.len()
        )));
    }
    let scored: Vec<(ScoreSeries, LabelSeries)> = files
        .iter()
        .zip(&episodes)
        .map(|(f, e)| Ok((read_score_csv(f)?, e.labels())))
        .collect::<CliResult<_>>()?;
    let result = evaluate(&scored, fpr)?;
    let row = EvalRow {
        plant: meta_value(&episodes, "env"),
        anomaly: meta_value(&episodes, "anomaly"),
        episodes: episodes.len(),
        auroc: result.auroc,
        mean_episode_auroc: result.mean_episode_auroc,
        n_pos: result.n_pos,
        n_neg: result.n_neg,
        delay: result.detection_delay,
        detected_fraction: result.detected_fraction,
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.serialize(&row).map_err(kernood::Error::from)?;
    let bytes = w.into_inner().map_err(|e| kernood::Error::Io(e.into_error()))?;
    write_atomic(&out, &bytes, common.force)?;
    println!(
        "auroc {} over {} episode(s) -> {}",
        row.auroc,
        row.episodes,
        out.display()
    );
    Ok((out, row))
}

#[derive(Debug, Clone, Default)]
pub struct AblateOpts {
    /// Scenario ids to run; empty means the whole grid.
    pub scenarios: Vec<String>,
}

/// `results.csv`, `summary.json` and `manifest.json` under `--out`.
pub fn cmd_ablate(common: &Common, opts: &AblateOpts) -> CliResult<(PathBuf, Vec<ResultRow>)> {
    let mut suite = common.config.suite.clone();
    if let Some(s) = common.seed {
        suite.seeds = vec![s];
    }
    let manifest = Manifest::new(suite)?;
    let suite = &manifest.suite;
    let scenarios = if opts.scenarios.is_empty() {
        suite.scenarios()
    } else {
        opts.scenarios
            .iter()
            .map(|id| {
                suite
                    .find_scenario(id)
                    .ok_or_else(|| CliError::Config(format!("unknown scenario {id}")))
            })
            .collect::<CliResult<_>>()?
    };
    let out = common.out_or("ablation");
    refuse_existing(&out, common.force)?;
    let rows = run_scenarios(suite, &scenarios, &Variant::ALL)?;

    let mut csv_bytes = Vec::new();
    write_results_csv(&mut csv_bytes, &rows)?;
    let staged = StagedDir::new(&out, common.force)?;
    staged.write("results.csv", &csv_bytes)?;
    staged.write("summary.json", &pretty_json(&summarize(&rows)))?;
    staged.write("manifest.json", &pretty_json(&manifest))?;
    let out = staged.commit()?;
    for s in summarize(&rows) {
        println!(
            "{:<36} {:<10} auroc {:.3} +- {:.3} (n={})",
            s.scenario, s.variant, s.auroc_mean, s.auroc_std, s.n
        );
    }
    Ok((out, rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolTiming {
    pub episodes: usize,
    pub len: usize,
    pub n_dims: usize,
    pub repeats: usize,
    pub median_seconds: f64,
    pub mean_seconds: f64,
    pub seconds: Vec<f64>,
}

/// Clean episodes of a stable `n_dims`-dimensional linear plant.
pub fn protocol_training_set(bench: &BenchConfig, seed: u64) -> CliResult<Vec<EpisodeMatrix>> {
    let n = bench.protocol_dims;
    let mut a = kernood::envgen::plant::identity(n);
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = 0.9;
        if i + 1 < n {
            row[i + 1] = 0.05;
        }
    }
    let plant = Plant::Linear(LinearParams {
        a,
        b: kernood::envgen::plant::identity(n),
        process_noise_std: 1.0,
        init_std: 1.0,
    });
    let controller = Controller::default_for(&plant);
    (0..bench.protocol_episodes)
        .map(|j| {
            Ok(simulate(
                &plant,
                &controller,
                bench.protocol_len,
                seed.wrapping_add(j as u64),
                None,
            )?)
        })
        .collect()
}

/// Wall time of full training (extraction plus all forest fits).
pub fn time_training(episodes: &[EpisodeMatrix], config: &DetectorConfig, repeats: usize) -> CliResult<ProtocolTiming> {
    let mut seconds = Vec::with_capacity(repeats);
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        std::hint::black_box(DetectorModel::train(episodes, config)?);
        seconds.push(start.elapsed().as_secs_f64());
    }
    let mut sorted = seconds.clone();
    sorted.sort_by(f64::total_cmp);
    let k = sorted.len();
    let median = if k % 2 == 1 {
        sorted[k / 2]
    } else {
        0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
    };
    Ok(ProtocolTiming {
        episodes: episodes.len(),
        len: episodes.first().map_or(0, EpisodeMatrix::len),
        n_dims: episodes.first().map_or(0, EpisodeMatrix::n_dims),
        repeats: seconds.len(),
        median_seconds: median,
        mean_seconds: seconds.iter().sum::<f64>() / seconds.len() as f64,
        seconds,
    })
}

#[derive(Debug, Clone, Default)]
pub struct BenchOpts {
    pub repeats: Option<usize>,
    pub skip_scaling: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub scaling: Option<ScalingReport>,
    pub slope_in_len: Option<f64>,
    pub slope_in_dims: Option<f64>,
    pub protocol: ProtocolTiming,
}

/// Runs on a single worker thread so timings are not skewed by contention.
pub fn cmd_bench(common: &Common, opts: &BenchOpts) -> CliResult<(PathBuf, BenchReport)> {
    let mut bench = common.config.bench.clone();
    if let Some(r) = opts.repeats {
        bench.repeats = r;
    }
    let mut check = common.config.clone();
    check.bench = bench.clone();
    check.validate()?;
    let out = common.out_or("bench");
    refuse_existing(&out, common.force)?;
    let config = common.detector(None);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let report = pool.install(|| -> CliResult<BenchReport> {
        let scaling = if opts.skip_scaling {
            None
        } else {
            Some(measure_scaling(&config, &bench.dims, &bench.lens, bench.repeats)?)
        };
        let at_dims = *bench.dims.get(1).unwrap_or(&bench.dims[0]);
        let protocol = time_training(
            &protocol_training_set(&bench, common.seed.unwrap_or(0))?,
            &config,
            bench.repeats,
        )?;
        Ok(BenchReport {
            slope_in_len: scaling.as_ref().and_then(|s| s.slope_in_len(at_dims)),
            slope_in_dims: scaling.as_ref().and_then(|s| s.slope_in_dims(bench.lens[0])),
            scaling,
            protocol,
        })
    })?;

    let staged = StagedDir::new(&out, common.force)?;
    if let Some(scaling) = &report.scaling {
        let mut w = csv::Writer::from_writer(Vec::new());
        for cell in &scaling.cells {
            w.serialize(cell).map_err(kernood::Error::from)?;
        }
        let bytes = w.into_inner().map_err(|e| kernood::Error::Io(e.into_error()))?;
        staged.write("scaling.csv", &bytes)?;
        for cell in &scaling.cells {
            println!(
                "N={:<4} T={:<7} extract {:.6} s (median of {}), train {:.6} s",
                cell.n_dims, cell.len, cell.extract_median, cell.repeats, cell.train_median
            );
        }
    }
    staged.write("bench.json", &pretty_json(&report))?;
    let out = staged.commit()?;
    let p = &report.protocol;
    println!(
        "training {} episodes x {} steps x {} dims: median {:.3} s, mean {:.3} s over {} repeats",
        p.episodes, p.len, p.n_dims, p.median_seconds, p.mean_seconds, p.repeats
    );
    Ok((out, report))
}

#[derive(Debug, Clone, Default)]
pub struct TuneOpts {
    pub train: PathBuf,
    pub val: PathBuf,
    pub variant: Option<Variant>,
    /// Absolute bandwidths; defaults to the configured factors times the
    /// pooled training std.
    pub grid: Vec<f64>,
}

pub fn cmd_tune_sigma(common: &Common, opts: &TuneOpts) -> CliResult<SigmaTuning> {
    if let Some(out) = &common.out {
        refuse_existing(out, common.force)?;
    }
    let train = load_episodes(&opts.train)?;
    let val = load_episodes(&opts.val)?;
    let n_dims = train.first().map_or(0, EpisodeMatrix::n_dims);
    check_dims(&train, n_dims, "training")?;
    check_dims(&val, n_dims, "validation")?;
    let grid = if opts.grid.is_empty() {
        sigma_grid(&train, &common.config.suite.sigma_factors)
    } else {
        opts.grid.clone()
    };
    let tuning = tune_sigma(&train, &val, &grid, &common.detector(opts.variant))?;
    let bytes = pretty_json(&tuning);
    match &common.out {
        Some(out) => write_atomic(out, &bytes, common.force)?,
        None => print!("{}", String::from_utf8_lossy(&bytes)),
    }
    Ok(tuning)
}
