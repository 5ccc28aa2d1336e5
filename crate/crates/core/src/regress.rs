//! Random-forest regression (bootstrap CART with variance-reduction splits) and R².

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::active::ActiveLearningRun;
use crate::dataio::{fmt_f64, FeatureTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 12,
            min_leaf: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    /// Features used by any split.
    pub fn split_features(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf(_) => None,
            })
            .collect()
    }
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    max_depth: usize,
    min_leaf: usize,
    mtry: usize,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    fn build(&mut self, idx: &mut [usize], depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let n = idx.len();
        let sum: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let mean = sum / n as f64;
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf(mean));
        let sse: f64 = idx.iter().map(|&i| (self.y[i] - mean).powi(2)).sum();
        if depth >= self.max_depth || n < 2 * self.min_leaf || sse <= 0.0 {
            return at;
        }
        let d = self.x.len();
        let features = sample(rng, d, self.mtry.min(d)).into_vec();
        // maximise sum_L^2 / n_L + sum_R^2 / n_R, which minimises child SSE
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order: Vec<usize> = idx.to_vec();
        for &f in &features {
            let col = &self.x[f];
            order.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
            let mut left_sum = 0.0;
            for p in 1..n {
                left_sum += self.y[order[p - 1]];
                if p < self.min_leaf || n - p < self.min_leaf {
                    continue;
                }
                let (lo, hi) = (col[order[p - 1]], col[order[p]]);
                if lo >= hi {
                    continue;
                }
                let right_sum = sum - left_sum;
                let score = left_sum * left_sum / p as f64 + right_sum * right_sum / (n - p) as f64;
                if best.is_none_or(|b| score > b.0) {
                    best = Some((score, f, 0.5 * (lo + hi)));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return at;
        };
        let col = &self.x[feature];
        idx.sort_by(|&a, &b| (col[a] > threshold).cmp(&(col[b] > threshold)).then(a.cmp(&b)));
        let split = idx.iter().position(|&i| col[i] > threshold).unwrap_or(n);
        let (l, r) = idx.split_at_mut(split);
        let left = self.build(l, depth + 1, rng);
        let right = self.build(r, depth + 1, rng);
        self.nodes[at] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        at
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    trees: Vec<RegressionTree>,
    feature_names: Vec<String>,
    target: String,
    params: ForestParams,
}

impl ForestModel {
    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn target(&self) -> &str {
        &self.target
    }

    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    /// Mean of the tree predictions for one feature vector in `feature_names` order.
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn predict(&self, table: &FeatureTable) -> Result<Vec<f64>> {
        let sub = table.select_columns(&self.feature_names)?;
        Ok((0..sub.n_rows()).map(|i| self.predict_row(&sub.row(i))).collect())
    }
}

pub fn fit_forest(
    train: &FeatureTable,
    features: &[String],
    target: &str,
    params: &ForestParams,
) -> Result<ForestModel> {
    if features.is_empty() {
        return Err(Error::InvalidArgument("empty feature list".into()));
    }
    if train.n_rows() == 0 {
        return Err(Error::NoRows);
    }
    if params.n_trees == 0 || params.min_leaf == 0 {
        return Err(Error::InvalidArgument("n_trees and min_leaf must be positive".into()));
    }
    let x: Vec<Vec<f64>> = features
        .iter()
        .map(|f| train.column(f))
        .collect::<Result<_>>()?;
    let y = train.column(target)?;
    let n = y.len();
    let mtry = ((features.len() as f64).sqrt().floor() as usize).max(1);
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(t as u64);
            let mut idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let mut builder = TreeBuilder {
                x: &x,
                y: &y,
                max_depth: params.max_depth,
                min_leaf: params.min_leaf,
                mtry,
                nodes: Vec::new(),
            };
            builder.build(&mut idx, 0, &mut rng);
            RegressionTree { nodes: builder.nodes }
        })
        .collect();
    Ok(ForestModel {
        trees,
        feature_names: features.to_vec(),
        target: target.to_string(),
        params: *params,
    })
}

/// 1 - SS_res / SS_tot about the mean of `y_true`.
pub fn r2_score(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.is_empty() || y_true.len() != y_pred.len() {
        return Err(Error::InvalidArgument("R² needs equal-length nonempty inputs".into()));
    }
    let mean = y_true.iter().sum::<f64>() / y_true.len() as f64;
    let ss_tot: f64 = y_true.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::DegenerateTarget);
    }
    let ss_res: f64 = y_true.iter().zip(y_pred).map(|(y, p)| (y - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn r2(model: &ForestModel, test: &FeatureTable) -> Result<f64> {
    if test.n_rows() == 0 {
        return Err(Error::NoRows);
    }
    let y = test.column(&model.target)?;
    r2_score(&y, &model.predict(test)?)
}

/// Writes `y_true,y_pred`.
pub fn write_parity(path: &Path, model: &ForestModel, test: &FeatureTable) -> Result<()> {
    let y = test.column(&model.target)?;
    let p = model.predict(test)?;
    let mut out = String::from("y_true,y_pred\n");
    for (a, b) in y.iter().zip(&p) {
        let _ = writeln!(out, "{},{}", fmt_f64(*a), fmt_f64(*b));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyTrace {
    pub per_iteration: Vec<f64>,
    /// Test R² with the whole pool as training data.
    pub reference: f64,
}

/// Refit on each iteration's selection and score on a fixed test set.
///
/// Training rows are taken in `pool` order, so a selection covering the whole pool
/// reproduces the reference model exactly.
pub fn accuracy_trace(
    run: &ActiveLearningRun,
    pool: &FeatureTable,
    test: &FeatureTable,
    features: &[String],
    target: &str,
    params: &ForestParams,
) -> Result<AccuracyTrace> {
    let index: HashMap<&str, usize> = pool
        .row_ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let reference = r2(&fit_forest(pool, features, target, params)?, test)?;
    let per_iteration = (0..run.records.len())
        .map(|it| {
            let mut rows = run
                .snapshot(it)
                .iter()
                .map(|id| {
                    index
                        .get(id.as_str())
                        .copied()
                        .ok_or_else(|| Error::UnknownRow(id.clone()))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.sort_unstable();
            let model = fit_forest(&pool.select_rows(&rows), features, target, params)?;
            r2(&model, test)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AccuracyTrace {
        per_iteration,
        reference,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(n: usize) -> FeatureTable {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let x = (i as f64 * 0.7331).sin() * 5.0;
                vec![x, 3.0 * x]
            })
            .collect();
        let ids = (0..n).map(|i| i.to_string()).collect();
        FeatureTable::from_rows(ids, vec!["x".into(), "y".into()], &rows, vec!["y".into()]).unwrap()
    }

    // y = 3x on 500 points, 30 trees of depth 8, seed 5
    const FROZEN_TRAIN_R2: f64 = 0.9999968864481591;

    fn params(seed: u64) -> ForestParams {
        ForestParams {
            n_trees: 30,
            max_depth: 8,
            min_leaf: 2,
            seed,
        }
    }

    #[test]
    fn constant_target_predicts_constant() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 4.5]).collect();
        let ids = (0..20).map(|i| i.to_string()).collect();
        let t = FeatureTable::from_rows(ids, vec!["x".into(), "y".into()], &rows, vec![]).unwrap();
        let m = fit_forest(&t, &["x".into()], "y", &params(1)).unwrap();
        assert!(m.predict(&t).unwrap().iter().all(|&p| p == 4.5));
        assert!(matches!(r2(&m, &t), Err(Error::DegenerateTarget)));
    }

    #[test]
    fn linear_fit_and_determinism() {
        let t = linear(500);
        let m = fit_forest(&t, &["x".into()], "y", &params(5)).unwrap();
        let score = r2(&m, &t).unwrap();
        assert!(score >= 0.95, "{score}");
        assert!((score - FROZEN_TRAIN_R2).abs() < 1e-12, "{score:?}");
        let y = t.column("y").unwrap();
        let pred = m.predict(&t).unwrap();
        let my = y.iter().sum::<f64>() / y.len() as f64;
        let ss_res: f64 = y.iter().zip(&pred).map(|(a, b)| (a - b).powi(2)).sum();
        let ss_tot: f64 = y.iter().map(|a| (a - my).powi(2)).sum();
        assert!((score - (1.0 - ss_res / ss_tot)).abs() < 1e-12);
        let again = fit_forest(&t, &["x".into()], "y", &params(5)).unwrap();
        assert_eq!(m.predict(&t).unwrap(), again.predict(&t).unwrap());
        // prediction is the mean of the trees
        let row = [1.234];
        let mean = m.trees().iter().map(|tr| tr.predict(&row)).sum::<f64>() / 30.0;
        assert_eq!(m.predict_row(&row), mean);
    }

    #[test]
    fn r2_definitions() {
        let y = [1.0, 2.0, 4.0];
        assert_eq!(r2_score(&y, &y).unwrap(), 1.0);
        let mean = 7.0 / 3.0;
        assert!(r2_score(&y, &[mean; 3]).unwrap().abs() < 1e-15);
        assert!(fit_forest(&linear(10), &[], "y", &params(0)).is_err());
    }
}
