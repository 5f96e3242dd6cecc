//! Recursive reference implementation of tree growth, driven by the same
//! random stream as the library, compared node for node.

use kernood::iforest::{tree_rng, Node};
use kernood::{c_factor, ForestConfig, IsolationForest, IsolationTree};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, PartialEq)]
enum RefTree {
    Leaf(usize),
    Split(usize, f64, Box<RefTree>, Box<RefTree>),
}

fn grow(points: &[Vec<f64>], depth: usize, max_depth: usize, rng: &mut ChaCha8Rng) -> RefTree {
    if depth >= max_depth || points.len() <= 1 {
        return RefTree::Leaf(points.len());
    }
    let dim = points[0].len();
    let bounds = |f: usize| {
        let lo = points.iter().map(|p| p[f]).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(|p| p[f]).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    };
    let live: Vec<usize> = (0..dim).filter(|&f| bounds(f).0 < bounds(f).1).collect();
    if live.is_empty() {
        return RefTree::Leaf(points.len());
    }
    let f = live[rng.random_range(0..live.len())];
    let (lo, hi) = bounds(f);
    let cut = if lo.next_up() >= hi {
        hi
    } else {
        loop {
            let u: f64 = rng.random();
            let c = lo + u * (hi - lo);
            if lo < c && c < hi {
                break c;
            }
        }
    };
    let (left, right): (Vec<_>, Vec<_>) = points.iter().cloned().partition(|p| p[f] < cut);
    let l = grow(&left, depth + 1, max_depth, rng);
    let r = grow(&right, depth + 1, max_depth, rng);
    RefTree::Split(f, cut, Box::new(l), Box::new(r))
}

fn to_ref(tree: &IsolationTree, i: usize) -> RefTree {
    match tree.nodes[i] {
        Node::Leaf { size } => RefTree::Leaf(size),
        Node::Split {
            feature,
            value,
            left,
            right,
        } => RefTree::Split(
            feature,
            value,
            Box::new(to_ref(tree, left)),
            Box::new(to_ref(tree, right)),
        ),
    }
}

fn harmonic_c(n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    if n == 2 {
        return 1.0;
    }
    let m = n as f64;
    2.0 * ((m - 1.0).ln() + 0.5772156649015329) - 2.0 * (m - 1.0) / m
}

fn ref_path(tree: &RefTree, x: &[f64]) -> f64 {
    match tree {
        RefTree::Leaf(size) => harmonic_c(*size),
        RefTree::Split(f, v, l, r) => 1.0 + ref_path(if x[*f] < *v { l } else { r }, x),
    }
}

fn dataset(seed: u64) -> (Vec<Vec<f64>>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(10_000 + seed);
    let n = rng.random_range(2..=16);
    let dim = rng.random_range(1..=3);
    let points = (0..n)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    // coarse grid so duplicates and constant features occur
                    if rng.random_bool(0.3) {
                        rng.random_range(0..3) as f64
                    } else {
                        rng.random::<f64>() * 10.0 - 5.0
                    }
                })
                .collect()
        })
        .collect();
    (points, dim)
}

#[test]
fn single_trees_match_reference() {
    for seed in 0..50u64 {
        let (points, dim) = dataset(seed);
        let flat: Vec<f64> = points.iter().flatten().copied().collect();
        for max_depth in [1, 3, 8] {
            let tree = IsolationTree::build(&flat, dim, max_depth, &mut ChaCha8Rng::seed_from_u64(seed));
            let oracle = grow(&points, 0, max_depth, &mut ChaCha8Rng::seed_from_u64(seed));
            assert_eq!(to_ref(&tree, 0), oracle, "seed {seed} depth {max_depth}");
            for p in &points {
                assert_eq!(tree.path_length(p), ref_path(&oracle, p), "seed {seed}");
            }
        }
    }
}

#[test]
fn fitted_forests_match_reference() {
    for seed in 0..50u64 {
        let (points, dim) = dataset(seed);
        let n = points.len();
        let config = ForestConfig {
            n_trees: 8,
            subsample: 12,
            max_depth: None,
            seed,
        };
        let forest = IsolationForest::fit_rows(&points, &config).unwrap();
        let psi = n.min(12);
        let max_depth = (psi as f64).log2().ceil().max(1.0) as usize;
        assert_eq!(forest.psi, psi);
        assert_eq!(forest.max_depth, max_depth);

        let mut probes = points.clone();
        probes.push(vec![100.0; dim]);
        probes.push(vec![-0.5; dim]);
        let mut total = vec![0.0; probes.len()];
        for (i, tree) in forest.trees.iter().enumerate() {
            let mut rng = tree_rng(seed, i);
            let idx = rand::seq::index::sample(&mut rng, n, psi).into_vec();
            let subset: Vec<Vec<f64>> = idx.iter().map(|&k| points[k].clone()).collect();
            let oracle = grow(&subset, 0, max_depth, &mut rng);
            assert_eq!(to_ref(tree, 0), oracle, "seed {seed} tree {i}");
            for (t, p) in total.iter_mut().zip(&probes) {
                *t += ref_path(&oracle, p);
            }
        }
        for (p, t) in probes.iter().zip(&total) {
            let mean = t / forest.trees.len() as f64;
            assert_eq!(forest.mean_path_length(p).unwrap(), mean);
            let expected = 2f64.powf(-mean / harmonic_c(psi));
            assert_eq!(forest.anomaly_score(p).unwrap(), expected);
        }
    }
}

#[test]
fn score_is_exactly_half_at_normalizer() {
    // Every tree is a single leaf holding psi = 3 points, so E[h] = c(3).
    let forest = IsolationForest {
        psi: 3,
        dim: 1,
        max_depth: 2,
        config: ForestConfig::default(),
        trees: vec![IsolationTree {
            nodes: vec![Node::Leaf { size: 3 }],
        }],
    };
    assert_eq!(forest.mean_path_length(&[7.0]).unwrap(), c_factor(3));
    assert_eq!(forest.anomaly_score(&[7.0]).unwrap(), 0.5);
}
