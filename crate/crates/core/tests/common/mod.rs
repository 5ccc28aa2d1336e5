#![allow(dead_code)]

use causal_al::causal::WeightedDag;
use causal_al::dataio::FeatureTable;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn node_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("x{i}")).collect()
}

/// Random weighted DAG: a hidden random order, each forward pair an edge with
/// probability `density`, weights uniform in ±[0.2, 1.0].
pub fn random_weights(rng: &mut ChaCha8Rng, n: usize, density: f64) -> DMatrix<f64> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut b = DMatrix::zeros(n, n);
    for a in 0..n {
        for c in (a + 1)..n {
            if rng.random_bool(density) {
                let w: f64 = rng.random_range(0.2..1.0);
                b[(order[c], order[a])] = if rng.random_bool(0.5) { w } else { -w };
            }
        }
    }
    b
}

pub fn random_dag(rng: &mut ChaCha8Rng, n: usize, density: f64) -> WeightedDag {
    WeightedDag::new(node_names(n), random_weights(rng, n, density)).unwrap()
}

/// Same graph with its rows/columns reordered by `perm` (names travel with nodes).
pub fn permuted(dag: &WeightedDag, perm: &[usize]) -> WeightedDag {
    let n = dag.n_nodes();
    let names = perm.iter().map(|&p| dag.node_names()[p].clone()).collect();
    let w = DMatrix::from_fn(n, n, |i, j| dag.weights()[(perm[i], perm[j])]);
    WeightedDag::new(names, w).unwrap()
}

/// Ancestral sampling of `x = Bx + e` with uniform noise on [-1, 1].
pub fn sample_linear(rng: &mut ChaCha8Rng, b: &DMatrix<f64>, n_rows: usize, noise: &[f64]) -> DMatrix<f64> {
    let d = b.nrows();
    let dag = WeightedDag::new(node_names(d), b.clone()).unwrap();
    let order = dag.causal_order().to_vec();
    let mut x = DMatrix::zeros(n_rows, d);
    for r in 0..n_rows {
        for &i in &order {
            let mut v = noise[i] * rng.random_range(-1.0..1.0);
            for j in 0..d {
                v += b[(i, j)] * x[(r, j)];
            }
            x[(r, i)] = v;
        }
    }
    x
}

pub fn table_from(names: Vec<String>, values: DMatrix<f64>, targets: Vec<String>) -> FeatureTable {
    let ids = (0..values.nrows()).map(|i| format!("r{i}")).collect();
    FeatureTable::new(ids, names, values, targets).unwrap()
}
