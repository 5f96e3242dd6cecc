//! Isolation forest with axis-parallel random splits.
//!
//! Each tree is grown on a uniform subsample drawn without replacement. A
//! node splits on a uniformly chosen feature among those that are not
//! constant over the node's points, at a threshold drawn uniformly from the
//! open interval between that feature's min and max (or at the max when
//! the two are adjacent floats). Points with `x[feature] < threshold` go
//! left.
//!
//! Tree `i` draws all of its randomness from ChaCha8 seeded with
//! `splitmix64(seed ^ splitmix64(i))`, so parallel and serial builds agree
//! bit for bit.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

const C_TABLE_LEN: usize = 1025;

/// Average path length of an unsuccessful BST search over `n` points.
pub fn c_factor(n: usize) -> f64 {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    match TABLE
        .get_or_init(|| (0..C_TABLE_LEN).map(c_factor_direct).collect())
        .get(n)
    {
        Some(&c) => c,
        None => c_factor_direct(n),
    }
}

fn c_factor_direct(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let n = n as f64;
            2.0 * ((n - 1.0).ln() + EULER_GAMMA) - 2.0 * (n - 1.0) / n
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Upper bound on the per-tree subsample size.
    pub subsample: usize,
    /// Defaults to `ceil(log2(psi))` for the effective subsample size.
    #[serde(default)]
    pub max_depth: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            subsample: 256,
            max_depth: None,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Config("n_trees must be >= 1".into()));
        }
        if self.subsample < 2 {
            return Err(Error::Config("subsample must be >= 2".into()));
        }
        if self.max_depth == Some(0) {
            return Err(Error::Config("max_depth must be >= 1".into()));
        }
        Ok(())
    }

    fn depth_for(&self, psi: usize) -> usize {
        self.max_depth
            .unwrap_or_else(|| (psi as f64).log2().ceil().max(1.0) as usize)
    }
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derives an independent seed for stream `index` under `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index))
}

/// Random stream used to grow tree `index` of a forest seeded with `seed`.
pub fn tree_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, index as u64))
}

/// Source of the two kinds of random draws a tree needs.
pub trait SplitSource {
    /// Uniform index in `0..n`.
    fn pick(&mut self, n: usize) -> usize;
    /// Uniform real in `[0, 1)`.
    fn unit(&mut self) -> f64;
}

impl<R: Rng> SplitSource for R {
    fn pick(&mut self, n: usize) -> usize {
        self.random_range(0..n)
    }

    fn unit(&mut self) -> f64 {
        self.random::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Node {
    Split {
        feature: usize,
        value: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        size: usize,
    },
}

/// Flat node list; the root is `nodes[0]` and children always have larger
/// indices than their parent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsolationTree {
    pub nodes: Vec<Node>,
}

impl IsolationTree {
    /// Grows a tree over all rows of `data` (row-major, `dim` columns).
    pub fn build<S: SplitSource + ?Sized>(data: &[f64], dim: usize, max_depth: usize, source: &mut S) -> Self {
        let indices: Vec<usize> = (0..data.len() / dim).collect();
        Self::build_on(data, dim, indices, max_depth, source)
    }

    fn build_on<S: SplitSource + ?Sized>(
        data: &[f64],
        dim: usize,
        mut indices: Vec<usize>,
        max_depth: usize,
        source: &mut S,
    ) -> Self {
        let value = |i: usize, f: usize| data[i * dim + f];
        let mut nodes = vec![Node::Leaf { size: 0 }];
        // (node slot, start, end, depth); right children are pushed first so
        // subtrees are grown in pre-order, left before right.
        let mut stack = vec![(0usize, 0usize, indices.len(), 0usize)];
        let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); dim];
        let mut candidates = Vec::with_capacity(dim);

        while let Some((slot, start, end, depth)) = stack.pop() {
            let members = &mut indices[start..end];
            let size = members.len();
            if depth >= max_depth || size <= 1 {
                nodes[slot] = Node::Leaf { size };
                continue;
            }
            ranges.fill((f64::INFINITY, f64::NEG_INFINITY));
            for &i in members.iter() {
                for (f, r) in ranges.iter_mut().enumerate() {
                    let v = value(i, f);
                    r.0 = r.0.min(v);
                    r.1 = r.1.max(v);
                }
            }
            candidates.clear();
            candidates.extend((0..dim).filter(|&f| ranges[f].0 < ranges[f].1));
            if candidates.is_empty() {
                nodes[slot] = Node::Leaf { size };
                continue;
            }
            let feature = candidates[source.pick(candidates.len())];
            let (lo, hi) = ranges[feature];
            let threshold = if lo.next_up() >= hi {
                // adjacent floats: no interior value exists
                hi
            } else {
                loop {
                    let t = lo + source.unit() * (hi - lo);
                    if t > lo && t < hi {
                        break t;
                    }
                }
            };

            // in-place partition: left block holds x[feature] < threshold
            let mut split = 0;
            for k in 0..size {
                if value(members[k], feature) < threshold {
                    members.swap(k, split);
                    split += 1;
                }
            }

            let left = nodes.len();
            let right = left + 1;
            nodes.push(Node::Leaf { size: 0 });
            nodes.push(Node::Leaf { size: 0 });
            nodes[slot] = Node::Split {
                feature,
                value: threshold,
                left,
                right,
            };
            stack.push((right, start + split, end, depth + 1));
            stack.push((left, start, start + split, depth + 1));
        }
        Self { nodes }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Edges to the reached leaf plus `c(leaf size)`.
    pub fn path_length(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        let mut edges = 0usize;
        loop {
            match self.nodes[i] {
                Node::Leaf { size } => return edges as f64 + c_factor(size),
                Node::Split {
                    feature,
                    value,
                    left,
                    right,
                } => {
                    i = if x[feature] < value { left } else { right };
                    edges += 1;
                }
            }
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Load("tree without nodes".into()));
        }
        let n = self.nodes.len();
        for (i, node) in self.nodes.iter().enumerate() {
            match *node {
                Node::Split {
                    feature,
                    value,
                    left,
                    right,
                } => {
                    if feature >= dim || !value.is_finite() {
                        return Err(Error::Load(format!("node {i}: invalid split")));
                    }
                    if left <= i || right <= i || left >= n || right >= n || left == right {
                        return Err(Error::Load(format!("node {i}: invalid child index")));
                    }
                }
                Node::Leaf { size } => {
                    if size == 0 {
                        return Err(Error::Load(format!("node {i}: empty leaf")));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsolationForest {
    /// Per-tree training subset size actually used.
    pub psi: usize,
    pub dim: usize,
    pub max_depth: usize,
    pub config: ForestConfig,
    pub trees: Vec<IsolationTree>,
}

impl IsolationForest {
    /// Fits on `data`, row-major with `dim` features per row.
    pub fn fit(data: &[f64], dim: usize, config: &ForestConfig) -> Result<Self> {
        config.validate()?;
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::Shape(format!(
                "{} values do not form rows of width {dim}",
                data.len()
            )));
        }
        let n = data.len() / dim;
        if n < 2 {
            return Err(Error::InsufficientData(format!(
                "isolation forest needs at least 2 vectors, got {n}"
            )));
        }
        if let Some(i) = data.iter().position(|v| v.is_nan()) {
            return Err(Error::Data(format!("NaN in training vector {}", i / dim)));
        }
        let psi = config.subsample.min(n);
        let max_depth = config.depth_for(psi);
        let trees = (0..config.n_trees)
            .into_par_iter()
            .map(|i| {
                let mut rng = tree_rng(config.seed, i);
                let idx = rand::seq::index::sample(&mut rng, n, psi).into_vec();
                IsolationTree::build_on(data, dim, idx, max_depth, &mut rng)
            })
            .collect();
        Ok(Self {
            psi,
            dim,
            max_depth,
            config: *config,
            trees,
        })
    }

    pub fn fit_rows(rows: &[Vec<f64>], config: &ForestConfig) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape("training vectors differ in dimensionality".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        if rows.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "isolation forest needs at least 2 vectors, got {}",
                rows.len()
            )));
        }
        Self::fit(&flat, dim, config)
    }

    pub fn mean_path_length(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let total = self.trees.iter().fold(0.0, |acc, t| acc + t.path_length(x));
        Ok(total / self.trees.len() as f64)
    }

    /// Scores many row-major vectors at once, walking one tree over all of
    /// them before moving to the next. Bitwise equal to `anomaly_score`.
    pub fn anomaly_scores(&self, xs: &[f64]) -> Result<Vec<f64>> {
        if !xs.len().is_multiple_of(self.dim) {
            return Err(Error::Data(format!(
                "{} values do not form vectors of dimension {}",
                xs.len(),
                self.dim
            )));
        }
        let mut totals = vec![0.0; xs.len() / self.dim];
        for tree in &self.trees {
            for (acc, x) in totals.iter_mut().zip(xs.chunks_exact(self.dim)) {
                *acc += tree.path_length(x);
            }
        }
        let n = self.trees.len() as f64;
        Ok(totals.into_iter().map(|t| self.score_from_path(t / n)).collect())
    }

    /// `2^(-E[h(x)] / c(psi))`; higher is more anomalous.
    pub fn anomaly_score(&self, x: &[f64]) -> Result<f64> {
        Ok(self.score_from_path(self.mean_path_length(x)?))
    }

    pub fn score_from_path(&self, mean_path: f64) -> f64 {
        2f64.powf(-mean_path / c_factor(self.psi))
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Data(format!(
                "vector of dimension {} for a forest of dimension {}",
                x.len(),
                self.dim
            )));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.trees.is_empty() || self.psi < 2 || self.dim == 0 {
            return Err(Error::Load("forest must have trees, psi >= 2 and dim >= 1".into()));
        }
        self.trees.iter().try_for_each(|t| t.validate(self.dim))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn cfg(n_trees: usize, seed: u64) -> ForestConfig {
        ForestConfig {
            n_trees,
            seed,
            ..ForestConfig::default()
        }
    }

    #[test]
    fn c_factor_base_cases() {
        assert_eq!(c_factor(0), 0.0);
        assert_eq!(c_factor(1), 0.0);
        assert_eq!(c_factor(2), 1.0);
        assert_eq!(c_factor(5000), c_factor_direct(5000));
        assert_eq!(c_factor(1024), c_factor_direct(1024));
    }

    #[test]
    fn c_factor_against_harmonic_sum() {
        // H(255) by summation; the closed form uses ln + gamma.
        let harmonic: f64 = (1..=255).map(|k| 1.0 / k as f64).sum();
        let direct = 2.0 * harmonic - 2.0 * 255.0 / 256.0;
        // ln(m) + gamma overestimates H(m) by about 1/(2m).
        assert!((c_factor(256) - direct).abs() < 1.0 / 255.0 + 1e-9);
        assert!((c_factor(256) - 10.244770).abs() < 1e-5);
    }

    #[test]
    fn two_points_split_at_root() {
        let f = IsolationForest::fit(&[0.0, 1.0], 1, &cfg(1, 3)).unwrap();
        let t = &f.trees[0];
        assert_eq!(t.nodes.len(), 3);
        match t.nodes[0] {
            Node::Split { value, .. } => assert!(value > 0.0 && value < 1.0),
            _ => panic!("root should split"),
        }
        assert_eq!(t.path_length(&[0.0]), 1.0);
        assert_eq!(t.path_length(&[1.0]), 1.0);
    }

    #[test]
    fn identical_points_give_single_leaf() {
        let data = vec![2.5; 40];
        let f = IsolationForest::fit(&data, 2, &cfg(10, 1)).unwrap();
        assert_eq!(f.psi, 20);
        for t in &f.trees {
            assert_eq!(t.nodes, vec![Node::Leaf { size: 20 }]);
        }
        let a = f.anomaly_score(&[0.0, 0.0]).unwrap();
        let b = f.anomaly_score(&[1e9, -3.0]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, 0.5);
    }

    #[test]
    fn fit_is_deterministic() {
        let data: Vec<f64> = (0..300).map(|i| ((i * 37) % 101) as f64).collect();
        let a = IsolationForest::fit(&data, 2, &cfg(20, 9)).unwrap();
        let b = IsolationForest::fit(&data, 2, &cfg(20, 9)).unwrap();
        assert_eq!(a, b);
        let c = IsolationForest::fit(&data, 2, &cfg(20, 10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn fit_errors() {
        assert!(matches!(
            IsolationForest::fit(&[1.0, 2.0], 2, &cfg(1, 0)),
            Err(Error::InsufficientData(_))
        ));
        assert!(matches!(
            IsolationForest::fit(&[1.0, f64::NAN, 2.0], 1, &cfg(1, 0)),
            Err(Error::Data(_))
        ));
        assert!(IsolationForest::fit(&[1.0, 2.0, 3.0], 2, &cfg(1, 0)).is_err());
        assert!(IsolationForest::fit(&[1.0, 2.0], 1, &cfg(0, 0)).is_err());
        assert!(IsolationForest::fit_rows(&[vec![1.0], vec![1.0, 2.0]], &cfg(1, 0)).is_err());
        let f = IsolationForest::fit(&[1.0, 2.0], 1, &cfg(1, 0)).unwrap();
        assert!(matches!(f.anomaly_score(&[1.0, 2.0]), Err(Error::Data(_))));
    }

    #[test]
    fn tree_invariants_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<f64> = (0..2000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let f = IsolationForest::fit(&data, 2, &cfg(30, 5)).unwrap();
        assert_eq!(f.psi, 256);
        assert_eq!(f.max_depth, 8);
        for t in &f.trees {
            assert!(t.depth() <= 8);
            let leaves: usize = t
                .nodes
                .iter()
                .map(|n| match n {
                    Node::Leaf { size } => *size,
                    _ => 0,
                })
                .sum();
            assert_eq!(leaves, 256);
        }
        f.validate().unwrap();
    }

    #[test]
    fn score_is_half_at_normalizer() {
        let f = IsolationForest::fit(&[0.0, 1.0, 2.0, 3.0], 1, &cfg(5, 2)).unwrap();
        assert_eq!(f.score_from_path(c_factor(f.psi)), 0.5);
    }

    #[test]
    fn outlier_beats_inliers_across_seeds() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let mut data: Vec<f64> = (0..200).map(|_| StandardNormal.sample(&mut rng)).collect();
            data.extend_from_slice(&[10.0, 10.0]);
            let f = IsolationForest::fit(&data, 2, &cfg(100, seed)).unwrap();
            let mut inlier: Vec<f64> = data[..200].chunks(2).map(|x| f.anomaly_score(x).unwrap()).collect();
            inlier.sort_by(f64::total_cmp);
            let p95 = inlier[(0.95 * inlier.len() as f64) as usize];
            let out = f.anomaly_score(&[10.0, 10.0]).unwrap();
            assert!(out > p95, "seed {seed}: {out} <= {p95}");
            assert!(inlier.iter().all(|&s| s > 0.0 && s < 1.0));
        }
    }

    #[test]
    fn batch_scores_match_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data: Vec<f64> = (0..600).map(|_| StandardNormal.sample(&mut rng)).collect();
        let f = IsolationForest::fit(&data, 3, &cfg(30, 4)).unwrap();
        let batch = f.anomaly_scores(&data[..90]).unwrap();
        for (x, s) in data[..90].chunks(3).zip(&batch) {
            assert_eq!(f.anomaly_score(x).unwrap(), *s);
        }
        assert!(f.anomaly_scores(&data[..4]).is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data: Vec<f64> = (0..400).map(|_| rng.random::<f64>() * 1e-3 + 1.0 / 3.0).collect();
        let f = IsolationForest::fit(&data, 2, &cfg(10, 11)).unwrap();
        let text = serde_json::to_string(&f).unwrap();
        let back: IsolationForest = serde_json::from_str(&text).unwrap();
        assert_eq!(f, back);
    }

    #[test]
    fn validation_catches_bad_children() {
        let mut f = IsolationForest::fit(&[0.0, 1.0, 5.0], 1, &cfg(1, 0)).unwrap();
        f.trees[0].nodes[0] = Node::Split {
            feature: 0,
            value: 0.5,
            left: 0,
            right: 1,
        };
        assert!(f.validate().is_err());
    }
}
