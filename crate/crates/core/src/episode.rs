//! Episodes, windows and per-timestep labels.
//!
//! An episode is an `N x T` observation matrix: one row per state dimension,
//! one column per timestep. Rows are stored contiguously so a univariate
//! window is a plain slice.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Free-form provenance tags (environment, seed, anomaly id, ...).
pub type Meta = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMatrix {
    n_dims: usize,
    len: usize,
    /// Row-major: `data[n * len + t]`.
    data: Vec<f64>,
    onset: Option<usize>,
    pub meta: Meta,
}

impl EpisodeMatrix {
    /// Builds an episode from its rows. Every row must have the same length.
    pub fn from_rows(rows: Vec<Vec<f64>>, onset: Option<usize>) -> Result<Self> {
        let n_dims = rows.len();
        if n_dims == 0 {
            return Err(Error::Shape("episode needs at least one dimension".into()));
        }
        let len = rows[0].len();
        if let Some(bad) = rows.iter().position(|r| r.len() != len) {
            return Err(Error::Shape(format!(
                "row {bad} has length {}, expected {len}",
                rows[bad].len()
            )));
        }
        let data = rows.into_iter().flatten().collect();
        Self::from_row_major(n_dims, len, data, onset)
    }

    pub fn from_row_major(n_dims: usize, len: usize, data: Vec<f64>, onset: Option<usize>) -> Result<Self> {
        if n_dims == 0 || len == 0 {
            return Err(Error::Shape(format!("empty episode ({n_dims}x{len})")));
        }
        if data.len() != n_dims * len {
            return Err(Error::Shape(format!(
                "{} values for a {n_dims}x{len} episode",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value at dim {}, t {}",
                i / len,
                i % len
            )));
        }
        if let Some(t_a) = onset {
            if t_a >= len {
                return Err(Error::Bounds {
                    index: t_a,
                    reason: format!("onset must be < T = {len}"),
                });
            }
        }
        Ok(Self {
            n_dims,
            len,
            data,
            onset,
            meta: Meta::new(),
        })
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.meta.insert(key.into(), value.to_string());
        self
    }

    pub fn n_dims(&self) -> usize {
        self.n_dims
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn onset(&self) -> Option<usize> {
        self.onset
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.data[n * self.len..(n + 1) * self.len]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.len)
    }

    pub fn get(&self, n: usize, t: usize) -> f64 {
        self.data[n * self.len + t]
    }

    pub fn column(&self, t: usize) -> Vec<f64> {
        (0..self.n_dims).map(|n| self.get(n, t)).collect()
    }

    pub fn as_row_major(&self) -> &[f64] {
        &self.data
    }

    pub fn labels(&self) -> LabelSeries {
        LabelSeries::from_valid_onset(self.len, self.onset)
    }

    /// Reorders state dimensions; `order[i]` is the source row of output row `i`.
    pub fn permute_dims(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.n_dims {
            return Err(Error::Shape(format!(
                "permutation of length {} for {} dims",
                order.len(),
                self.n_dims
            )));
        }
        let rows = order.iter().map(|&n| self.row(n).to_vec()).collect();
        let mut out = Self::from_rows(rows, self.onset)?;
        out.meta = self.meta.clone();
        Ok(out)
    }

    /// Per-dimension population standard deviation.
    pub fn row_std(&self) -> Vec<f64> {
        self.rows().map(std_dev).collect()
    }
}

pub(crate) fn std_dev(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}

/// `N x w` slab of consecutive columns ending at `end_time`.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    n_dims: usize,
    width: usize,
    data: Vec<f64>,
    end_time: usize,
}

impl Window {
    pub fn from_rows(rows: Vec<Vec<f64>>, end_time: usize) -> Result<Self> {
        let n_dims = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if n_dims == 0 || rows.iter().any(|r| r.len() != width) {
            return Err(Error::Shape("ragged or empty window".into()));
        }
        if width < 2 {
            return Err(Error::WindowSize(width));
        }
        Ok(Self {
            n_dims,
            width,
            data: rows.into_iter().flatten().collect(),
            end_time,
        })
    }

    pub fn n_dims(&self) -> usize {
        self.n_dims
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn end_time(&self) -> usize {
        self.end_time
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.data[n * self.width..(n + 1) * self.width]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.width)
    }
}

/// Returns the window of width `w` whose last column is `t`.
pub fn window_at(episode: &EpisodeMatrix, t: usize, w: usize) -> Result<Window> {
    if w < 2 {
        return Err(Error::WindowSize(w));
    }
    if t >= episode.len() {
        return Err(Error::Bounds {
            index: t,
            reason: format!("t must be < T = {}", episode.len()),
        });
    }
    if t + 1 < w {
        return Err(Error::Bounds {
            index: t,
            reason: format!("t must be >= w - 1 = {}", w - 1),
        });
    }
    let start = t + 1 - w;
    let mut data = Vec::with_capacity(episode.n_dims() * w);
    for row in episode.rows() {
        data.extend_from_slice(&row[start..=t]);
    }
    Ok(Window {
        n_dims: episode.n_dims(),
        width: w,
        data,
        end_time: t,
    })
}

/// Splits a univariate series into non-overlapping windows of length `w`,
/// dropping a trailing remainder shorter than `w`.
pub fn partition_windows(series: &[f64], w: usize) -> Result<std::slice::ChunksExact<'_, f64>> {
    if w == 0 || series.len() < w {
        return Err(Error::EmptyPartition { len: series.len(), w });
    }
    Ok(series.chunks_exact(w))
}

/// Per-timestep OOD flags: 1 from the onset to the end, 0 before.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSeries {
    pub labels: Vec<u8>,
}

impl LabelSeries {
    fn from_valid_onset(len: usize, onset: Option<usize>) -> Self {
        let t_a = onset.unwrap_or(len);
        Self {
            labels: (0..len).map(|t| u8::from(t >= t_a)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Labels for timesteps `from..`.
    pub fn tail(&self, from: usize) -> &[u8] {
        &self.labels[from.min(self.labels.len())..]
    }
}

pub fn labels_from_onset(len: usize, onset: Option<usize>) -> Result<LabelSeries> {
    if let Some(t_a) = onset {
        if t_a >= len {
            return Err(Error::Bounds {
                index: t_a,
                reason: format!("onset must be < T = {len}"),
            });
        }
    }
    Ok(LabelSeries::from_valid_onset(len, onset))
}

/// On-disk JSON-lines record.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EpisodeRecord {
    n: usize,
    t: usize,
    onset: Option<usize>,
    #[serde(default)]
    meta: Meta,
    data: Vec<Vec<f64>>,
}

impl Serialize for EpisodeMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        EpisodeRecord {
            n: self.n_dims,
            t: self.len,
            onset: self.onset,
            meta: self.meta.clone(),
            data: self.rows().map(<[f64]>::to_vec).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for EpisodeMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rec = EpisodeRecord::deserialize(d)?;
        if rec.data.len() != rec.n || rec.data.iter().any(|r| r.len() != rec.t) {
            return Err(serde::de::Error::custom(format!(
                "data does not match declared shape {}x{}",
                rec.n, rec.t
            )));
        }
        let mut ep = EpisodeMatrix::from_rows(rec.data, rec.onset).map_err(serde::de::Error::custom)?;
        ep.meta = rec.meta;
        Ok(ep)
    }
}

pub fn write_jsonl<W: Write>(mut out: W, episodes: &[EpisodeMatrix]) -> Result<()> {
    for ep in episodes {
        serde_json::to_writer(&mut out, ep)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<EpisodeMatrix>> {
    let mut episodes = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ep = serde_json::from_str(&line).map_err(|e| Error::Data(format!("line {}: {e}", lineno + 1)))?;
        episodes.push(ep);
    }
    Ok(episodes)
}

pub fn load_jsonl(path: &Path) -> Result<Vec<EpisodeMatrix>> {
    read_jsonl(BufReader::new(File::open(path)?))
}

pub fn save_jsonl(path: &Path, episodes: &[EpisodeMatrix]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_jsonl(&mut out, episodes)?;
    out.flush()?;
    Ok(())
}

/// Writes one CSV row per timestep (`dim_0..dim_{N-1}`) plus a
/// `<stem>.labels.csv` sidecar with columns `t,label`.
pub fn export_csv(episode: &EpisodeMatrix, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record((0..episode.n_dims()).map(|n| format!("dim_{n}")))?;
    for t in 0..episode.len() {
        w.write_record((0..episode.n_dims()).map(|n| episode.get(n, t).to_string()))?;
    }
    w.flush()?;

    let mut lw = csv::Writer::from_path(labels_sidecar(path))?;
    lw.write_record(["t", "label"])?;
    for (t, l) in episode.labels().labels.iter().enumerate() {
        lw.write_record([t.to_string(), l.to_string()])?;
    }
    lw.flush()?;
    Ok(())
}

pub fn labels_sidecar(path: &Path) -> std::path::PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("episode");
    path.with_file_name(format!("{stem}.labels.csv"))
}
