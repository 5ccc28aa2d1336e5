//! Direct (iterative root selection) LiNGAM.
//!
//! Roots are chosen with the pairwise likelihood-ratio measure built on the
//! maximum-entropy approximation of differential entropy (log-cosh and Gaussian
//! moment contrasts). Once the order is fixed, each node is regressed on all of
//! its predecessors and small coefficients are pruned.

use nalgebra::{DMatrix, DVector};

use super::dag::{WeightScale, WeightedDag};
use crate::dataio::FeatureTable;
use crate::error::{Error, Result};
use crate::linalg::least_squares;

pub const DEFAULT_PRUNE_THRESHOLD: f64 = 0.05;

const ENTROPY_K1: f64 = 79.047;
const ENTROPY_K2: f64 = 7.4129;
const ENTROPY_GAMMA: f64 = 0.37457;

fn log_cosh(u: f64) -> f64 {
    let a = u.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// Approximate differential entropy of a unit-variance sample.
fn entropy(u: &[f64]) -> f64 {
    let n = u.len() as f64;
    let (mut lc, mut ge) = (0.0, 0.0);
    for &v in u {
        lc += log_cosh(v);
        ge += v * (-0.5 * v * v).exp();
    }
    let lc = lc / n - ENTROPY_GAMMA;
    let ge = ge / n;
    (1.0 + (2.0 * std::f64::consts::PI).ln()) / 2.0 - ENTROPY_K1 * lc * lc - ENTROPY_K2 * ge * ge
}

/// Zero-mean, unit population variance copy; constant input maps to zeros.
fn standardize(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt().max(1e-12);
    x.iter().map(|v| (v - mean) / sd).collect()
}

/// Entropy of the normalized residual of `a` regressed on `b` (both standardized).
fn residual_entropy(a: &[f64], b: &[f64], rho: f64) -> f64 {
    let sd = (1.0 - rho * rho).max(0.0).sqrt().max(1e-12);
    let r: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - rho * y) / sd).collect();
    entropy(&r)
}

/// Pick the next root among `candidates`, scoring against every other remaining column.
fn select_root(cols: &[Vec<f64>], remaining: &[usize], candidates: &[usize]) -> usize {
    if candidates.len() == 1 {
        return candidates[0];
    }
    let n = cols[0].len() as f64;
    let std: Vec<Option<Vec<f64>>> = (0..cols.len())
        .map(|i| remaining.contains(&i).then(|| standardize(&cols[i])))
        .collect();
    let h: Vec<f64> = std
        .iter()
        .map(|s| s.as_ref().map_or(0.0, |v| entropy(v)))
        .collect();
    let mut best = (candidates[0], f64::INFINITY);
    for &i in candidates {
        let xi = std[i].as_ref().expect("candidate is remaining");
        let mut score = 0.0;
        for &j in remaining {
            if j == i {
                continue;
            }
            let xj = std[j].as_ref().expect("remaining column");
            let rho = xi.iter().zip(xj).map(|(a, b)| a * b).sum::<f64>() / n;
            let diff = (h[j] + residual_entropy(xi, xj, rho)) - (h[i] + residual_entropy(xj, xi, rho));
            score += diff.min(0.0).powi(2);
        }
        if score < best.1 {
            best = (i, score);
        }
    }
    best.0
}

fn residualize(target: &[f64], on: &[f64]) -> Vec<f64> {
    let n = target.len() as f64;
    let mt = target.iter().sum::<f64>() / n;
    let mo = on.iter().sum::<f64>() / n;
    let cov: f64 = target.iter().zip(on).map(|(a, b)| (a - mt) * (b - mo)).sum();
    let var: f64 = on.iter().map(|b| (b - mo) * (b - mo)).sum();
    let coef = if var > 0.0 { cov / var } else { 0.0 };
    target.iter().zip(on).map(|(a, b)| a - coef * b).collect()
}

/// Discover a weighted DAG over every column of `table`.
///
/// When `target` is given it is held out of root selection until all other
/// columns are ordered, so it comes last and has no outgoing edges.
/// Weights are on the standardized scale; see [`WeightedDag::destandardized`].
pub fn discover_lingam(
    table: &FeatureTable,
    target: Option<&str>,
    prune_threshold: f64,
) -> Result<WeightedDag> {
    let d = table.n_cols();
    let n = table.n_rows();
    if d == 0 {
        return Err(Error::InvalidArgument("table has no columns".into()));
    }
    if n < d + 10 {
        return Err(Error::InsufficientData {
            rows: n,
            required: d + 10,
        });
    }
    let target_idx = target.map(|t| table.column_index(t)).transpose()?;
    let x = table.values();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite input".into()));
    }
    let (center, scale) = super::column_stats(x);
    for (j, s) in scale.iter().enumerate() {
        if !(*s > 0.0) {
            return Err(Error::DegenerateFeature(table.feature_names()[j].clone()));
        }
    }
    let z = DMatrix::from_fn(n, d, |i, j| (x[(i, j)] - center[j]) / scale[j]);

    let mut cols: Vec<Vec<f64>> = (0..d).map(|j| z.column(j).iter().copied().collect()).collect();
    let mut remaining: Vec<usize> = (0..d).collect();
    let mut order = Vec::with_capacity(d);
    while !remaining.is_empty() {
        let candidates: Vec<usize> = match target_idx {
            Some(t) if remaining.len() > 1 => remaining.iter().copied().filter(|&i| i != t).collect(),
            _ => remaining.clone(),
        };
        let root = select_root(&cols, &remaining, &candidates);
        order.push(root);
        remaining.retain(|&i| i != root);
        let root_col = cols[root].clone();
        for &i in &remaining {
            cols[i] = residualize(&cols[i], &root_col);
        }
    }

    let mut weights = DMatrix::zeros(d, d);
    for (p, &child) in order.iter().enumerate().skip(1) {
        let preds = &order[..p];
        let design = z.select_columns(preds);
        let y: DVector<f64> = z.column(child).into_owned();
        let (coef, _) = least_squares(&design, &y);
        for (k, &parent) in preds.iter().enumerate() {
            if coef[k].abs() >= prune_threshold {
                weights[(child, parent)] = coef[k];
            }
        }
    }
    let dag = WeightedDag::new(table.feature_names().to_vec(), weights)?
        .with_order(order)?
        .with_standardization(WeightScale::Standardized, center, scale);
    Ok(dag)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_sample_has_near_maximal_entropy() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal, Uniform};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let g: Vec<f64> = (0..200_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let h = entropy(&standardize(&g));
        let gauss = (1.0 + (2.0 * std::f64::consts::PI).ln()) / 2.0;
        assert!((h - gauss).abs() < 0.01, "{h} vs {gauss}");
        let unif = Uniform::new(-1.0, 1.0).unwrap();
        let u: Vec<f64> = (0..200_000).map(|_| unif.sample(&mut rng)).collect();
        assert!(entropy(&standardize(&u)) < h - 0.02);
    }

    #[test]
    fn log_cosh_is_stable() {
        assert!((log_cosh(0.3) - 0.3f64.cosh().ln()).abs() < 1e-14);
        assert!((log_cosh(800.0) - (800.0 - std::f64::consts::LN_2)).abs() < 1e-9);
    }

    #[test]
    fn too_few_rows() {
        let rows: Vec<Vec<f64>> = (0..11).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let ids = (0..11).map(|i| i.to_string()).collect();
        let t = FeatureTable::from_rows(ids, vec!["a".into(), "b".into()], &rows, vec![]).unwrap();
        assert!(matches!(
            discover_lingam(&t, None, 0.05),
            Err(Error::InsufficientData { rows: 11, required: 12 })
        ));
    }

    fn uniform_columns(seed: u64, n: usize, build: impl Fn(&[f64]) -> Vec<f64>, width: usize) -> DMatrix<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut m = DMatrix::zeros(n, width);
        for i in 0..n {
            let u: Vec<f64> = (0..width).map(|_| rng.random_range(-1.0..1.0)).collect();
            for (j, v) in build(&u).into_iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }

    fn table(names: &[&str], values: DMatrix<f64>) -> FeatureTable {
        let ids = (0..values.nrows()).map(|i| format!("r{i}")).collect();
        FeatureTable::new(ids, names.iter().map(|s| s.to_string()).collect(), values, vec![]).unwrap()
    }

    // x1 ~ U(-1, 1), x2 = 0.8 x1 + U(-0.3, 0.3), seed 198
    const TWO_VAR_WEIGHT: f64 = 0.8009408007565821;
    // x1 -> x2 -> x3 with weights 0.7, 0.5 and U(-1, 1) noise, seed 199
    const CHAIN_WEIGHTS: (f64, f64) = (0.6922832747410771, 0.504104974815591);

    #[test]
    fn two_variable_example() {
        let x = uniform_columns(198, 5000, |u| vec![0.8 * u[0] + 0.3 * u[1], u[0]], 2);
        let t = table(&["x2", "x1"], x);
        let g = discover_lingam(&t, None, 0.05).unwrap();
        assert_eq!(g.causal_order_names(), vec!["x1", "x2"]);
        let w = g.destandardized().weight("x2", "x1").unwrap();
        // the weight of a two-node graph is the OLS slope
        let (a, b) = (t.column("x1").unwrap(), t.column("x2").unwrap());
        let (ma, mb) = (a.iter().sum::<f64>() / 5000.0, b.iter().sum::<f64>() / 5000.0);
        let cov: f64 = a.iter().zip(&b).map(|(p, q)| (p - ma) * (q - mb)).sum();
        let var: f64 = a.iter().map(|p| (p - ma).powi(2)).sum();
        assert!((w - cov / var).abs() < 1e-12);
        assert!((w - 0.8).abs() < 0.05);
        assert!((w - TWO_VAR_WEIGHT).abs() < 1e-12, "{w:?}");
    }

    #[test]
    fn chain_example_prunes_the_shortcut() {
        let x = uniform_columns(
            199,
            5000,
            |u| {
                let x2 = 0.7 * u[0] + u[1];
                vec![u[0], x2, 0.5 * x2 + u[2]]
            },
            3,
        );
        let t = table(&["x1", "x2", "x3"], x);
        let g = discover_lingam(&t, None, 0.05).unwrap();
        assert_eq!(g.causal_order_names(), vec!["x1", "x2", "x3"]);
        assert_eq!(g.weight("x3", "x1").unwrap(), 0.0);
        let refit = crate::causal::fit_sem_weights(&t, &g).unwrap().destandardized();
        let (w21, w32) = (refit.weight("x2", "x1").unwrap(), refit.weight("x3", "x2").unwrap());
        assert!((w21 - 0.7).abs() < 0.03 && (w32 - 0.5).abs() < 0.03);
        assert!((w21 - CHAIN_WEIGHTS.0).abs() < 1e-12 && (w32 - CHAIN_WEIGHTS.1).abs() < 1e-12);
    }
}
