//! Atomic output helpers and the per-episode score CSV format.

use std::io::Write;
use std::path::{Path, PathBuf};

use kernood::ScoreSeries;
use tempfile::{NamedTempFile, TempDir};

use crate::error::{CliError, CliResult};

fn parent_of(path: &Path) -> CliResult<PathBuf> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&parent).map_err(|e| CliError::io(&parent, e))?;
    Ok(parent)
}

pub fn refuse_existing(path: &Path, force: bool) -> CliResult<()> {
    if path.exists() && !force {
        return Err(CliError::OutputExists(path.to_path_buf()));
    }
    Ok(())
}

/// Writes `bytes` to a temporary file next to `path`, then renames it.
pub fn write_atomic(path: &Path, bytes: &[u8], force: bool) -> CliResult<()> {
    refuse_existing(path, force)?;
    if path.is_dir() {
        return Err(CliError::Usage(format!("{} is a directory", path.display())));
    }
    let parent = parent_of(path)?;
    let mut tmp = NamedTempFile::new_in(&parent).map_err(|e| CliError::io(&parent, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

/// A directory built in a hidden sibling and moved into place on commit.
/// Dropping it without committing removes everything written so far.
pub struct StagedDir {
    tmp: TempDir,
    target: PathBuf,
}

impl StagedDir {
    pub fn new(target: &Path, force: bool) -> CliResult<Self> {
        refuse_existing(target, force)?;
        let parent = parent_of(target)?;
        let tmp = tempfile::Builder::new()
            .prefix(".kernood-stage-")
            .tempdir_in(&parent)
            .map_err(|e| CliError::io(&parent, e))?;
        Ok(Self {
            tmp,
            target: target.to_path_buf(),
        })
    }

    pub fn path(&self) -> &Path {
        self.tmp.path()
    }

    pub fn write(&self, rel: impl AsRef<Path>, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.tmp.path().join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    pub fn commit(self) -> CliResult<PathBuf> {
        let target = self.target.clone();
        if target.is_dir() {
            std::fs::remove_dir_all(&target).map_err(|e| CliError::io(&target, e))?;
        } else if target.exists() {
            std::fs::remove_file(&target).map_err(|e| CliError::io(&target, e))?;
        }
        let staged = self.tmp.keep();
        std::fs::rename(&staged, &target).map_err(|e| CliError::io(&target, e))?;
        Ok(target)
    }
}

/// Optional CUSUM columns accompanying a score series.
pub struct CusumColumns<'a> {
    pub statistic: &'a [f64],
    pub alarm_time: Option<usize>,
}

pub fn score_csv(series: &ScoreSeries, cusum: Option<CusumColumns<'_>>) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Core(e.into());
    if cusum.is_some() {
        w.write_record(["t", "score", "cusum", "alarm"]).map_err(csv_err)?;
    } else {
        w.write_record(["t", "score"]).map_err(csv_err)?;
    }
    for (i, (t, a)) in series.iter().enumerate() {
        let mut rec = vec![t.to_string(), a.to_string()];
        if let Some(c) = &cusum {
            rec.push(c.statistic[i].to_string());
            let alarmed = c.alarm_time.is_some_and(|at| t >= at);
            rec.push(u8::from(alarmed).to_string());
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.into_inner()
        .map_err(|e| CliError::Core(kernood::Error::Io(e.into_error())))
}

/// Reads the `t` and `score` columns of a score CSV.
pub fn read_score_csv(path: &Path) -> CliResult<ScoreSeries> {
    let schema = |message: String| CliError::Schema {
        path: path.to_path_buf(),
        message,
    };
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let headers = reader.headers().map_err(|e| schema(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| schema(format!("missing column {name}")))
    };
    let (t_col, s_col) = (col("t")?, col("score")?);
    let mut first = None;
    let mut scores = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| schema(e.to_string()))?;
        let t: usize = rec[t_col]
            .parse()
            .map_err(|_| schema(format!("row {i}: bad timestep {:?}", &rec[t_col])))?;
        let s: f64 = rec[s_col]
            .parse()
            .map_err(|_| schema(format!("row {i}: bad score {:?}", &rec[s_col])))?;
        let start = *first.get_or_insert(t);
        if t != start + i {
            return Err(schema(format!("row {i}: timesteps must be consecutive")));
        }
        if !s.is_finite() {
            return Err(schema(format!("row {i}: non-finite score")));
        }
        scores.push(s);
    }
    Ok(ScoreSeries {
        scores,
        first_scored: first.unwrap_or(0),
    })
}
