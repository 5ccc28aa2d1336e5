//! Gaussian mixture clustering over a few pivot features, used to split a table into subsets.
//!
//! Pivots are standardized before fitting. Initial centers come from k-means++ seeding,
//! followed by full-covariance EM with a diagonal floor.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataio::{fmt_f64, FeatureTable};
use crate::error::{Error, Result};

pub const COVARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmParams {
    pub n_components: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Convergence threshold on the per-row log-likelihood gain.
    pub tol: f64,
}

impl Default for GmmParams {
    fn default() -> Self {
        Self {
            n_components: 3,
            seed: 0,
            max_iter: 200,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pivot_features: Vec<String>,
    center: Vec<f64>,
    scale: Vec<f64>,
    weights: Vec<f64>,
    /// components x dim, in standardized pivot space
    means: DMatrix<f64>,
    covariances: Vec<DMatrix<f64>>,
    log_likelihood: Vec<f64>,
}

struct Component {
    log_weight: f64,
    mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    log_norm: f64,
}

impl GmmModel {
    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn pivot_features(&self) -> &[String] {
        &self.pivot_features
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Component means in the original pivot units.
    pub fn means(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.means.nrows(), self.means.ncols(), |k, j| {
            self.means[(k, j)] * self.scale[j] + self.center[j]
        })
    }

    pub fn standardized_means(&self) -> &DMatrix<f64> {
        &self.means
    }

    pub fn covariances(&self) -> &[DMatrix<f64>] {
        &self.covariances
    }

    /// Total log-likelihood after each EM step, starting from the initialization.
    pub fn log_likelihood_trace(&self) -> &[f64] {
        &self.log_likelihood
    }

    fn components(&self) -> Result<Vec<Component>> {
        build_components(&self.weights, &self.means, &self.covariances)
    }

    fn standardized(&self, table: &FeatureTable) -> Result<DMatrix<f64>> {
        let idx = self
            .pivot_features
            .iter()
            .map(|p| table.column_index(p))
            .collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_fn(table.n_rows(), idx.len(), |i, j| {
            (table.values()[(i, idx[j])] - self.center[j]) / self.scale[j]
        }))
    }

    /// Posterior responsibilities, rows x components.
    pub fn responsibilities(&self, table: &FeatureTable) -> Result<DMatrix<f64>> {
        let x = self.standardized(table)?;
        let comps = self.components()?;
        let (resp, _) = e_step(&x, &comps);
        Ok(resp)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let row = |v: &mut String, vals: &mut dyn Iterator<Item = f64>| {
            let s: Vec<String> = vals.map(fmt_f64).collect();
            v.push_str(&s.join(" "));
            v.push('\n');
        };
        let _ = writeln!(out, "n_components {}", self.n_components());
        let _ = writeln!(out, "dim {}", self.pivot_features.len());
        let _ = writeln!(out, "pivot_features {}", self.pivot_features.join(","));
        out.push_str("center\n");
        row(&mut out, &mut self.center.iter().copied());
        out.push_str("scale\n");
        row(&mut out, &mut self.scale.iter().copied());
        out.push_str("weights\n");
        row(&mut out, &mut self.weights.iter().copied());
        out.push_str("means\n");
        for k in 0..self.n_components() {
            row(&mut out, &mut self.means.row(k).iter().copied());
        }
        for (k, cov) in self.covariances.iter().enumerate() {
            let _ = writeln!(out, "covariance {k}");
            for i in 0..cov.nrows() {
                row(&mut out, &mut cov.row(i).iter().copied());
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |msg: &str| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: msg.to_string(),
        };
        let mut lines = text.lines();
        let mut header = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad("truncated model"))?;
            line.strip_prefix(key)
                .map(|s| s.trim().to_string())
                .ok_or_else(|| bad(&format!("expected `{key}`")))
        };
        let k: usize = header("n_components")?.parse().map_err(|_| bad("n_components"))?;
        let d: usize = header("dim")?.parse().map_err(|_| bad("dim"))?;
        let pivot_features: Vec<String> =
            header("pivot_features")?.split(',').map(String::from).collect();
        let nums = |s: String| -> Result<Vec<f64>> {
            s.split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| bad("bad number")))
                .collect()
        };
        header("center")?;
        let center = nums(header("")?)?;
        header("scale")?;
        let scale = nums(header("")?)?;
        header("weights")?;
        let weights = nums(header("")?)?;
        header("means")?;
        let mut means = DMatrix::zeros(k, d);
        for i in 0..k {
            means.row_mut(i).copy_from(&DVector::from_vec(nums(header("")?)?).transpose());
        }
        let mut covariances = Vec::with_capacity(k);
        for _ in 0..k {
            header("covariance")?;
            let mut cov = DMatrix::zeros(d, d);
            for i in 0..d {
                cov.row_mut(i).copy_from(&DVector::from_vec(nums(header("")?)?).transpose());
            }
            covariances.push(cov);
        }
        if center.len() != d || scale.len() != d || weights.len() != k || pivot_features.len() != d
        {
            return Err(bad("inconsistent dimensions"));
        }
        Ok(Self {
            pivot_features,
            center,
            scale,
            weights,
            means,
            covariances,
            log_likelihood: Vec::new(),
        })
    }
}

fn build_components(
    weights: &[f64],
    means: &DMatrix<f64>,
    covs: &[DMatrix<f64>],
) -> Result<Vec<Component>> {
    let d = means.ncols() as f64;
    weights
        .iter()
        .zip(covs)
        .enumerate()
        .map(|(k, (&w, cov))| {
            let chol = Cholesky::new(cov.clone()).ok_or(Error::DegenerateComponent(k))?;
            let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            Ok(Component {
                log_weight: w.ln(),
                mean: means.row(k).transpose(),
                chol,
                log_norm: -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + log_det),
            })
        })
        .collect()
}

fn log_density(c: &Component, x: &DVector<f64>) -> f64 {
    let diff = x - &c.mean;
    let z = c
        .chol
        .l_dirty()
        .solve_lower_triangular(&diff)
        .expect("cholesky factor is nonsingular");
    c.log_norm - 0.5 * z.norm_squared()
}

/// Returns (responsibilities, total log-likelihood).
fn e_step(x: &DMatrix<f64>, comps: &[Component]) -> (DMatrix<f64>, f64) {
    let n = x.nrows();
    let k = comps.len();
    let mut resp = DMatrix::zeros(n, k);
    let mut total = 0.0;
    let mut logp = vec![0.0; k];
    for i in 0..n {
        let xi = x.row(i).transpose();
        for (c, lp) in comps.iter().zip(logp.iter_mut()) {
            *lp = c.log_weight + log_density(c, &xi);
        }
        let max = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logp.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse;
        for (j, lp) in logp.iter().enumerate() {
            resp[(i, j)] = (lp - lse).exp();
        }
    }
    (resp, total)
}

fn m_step(
    x: &DMatrix<f64>,
    resp: &DMatrix<f64>,
) -> Result<(Vec<f64>, DMatrix<f64>, Vec<DMatrix<f64>>)> {
    let (n, d) = (x.nrows(), x.ncols());
    let k = resp.ncols();
    let mut weights = Vec::with_capacity(k);
    let mut means = DMatrix::zeros(k, d);
    let mut covs = Vec::with_capacity(k);
    for c in 0..k {
        let nk: f64 = resp.column(c).sum();
        if !(nk > 1e-10) {
            return Err(Error::DegenerateComponent(c));
        }
        weights.push(nk / n as f64);
        let mut mean = DVector::zeros(d);
        for i in 0..n {
            mean.axpy(resp[(i, c)], &x.row(i).transpose(), 1.0);
        }
        mean /= nk;
        let mut cov = DMatrix::zeros(d, d);
        for i in 0..n {
            let diff = x.row(i).transpose() - &mean;
            cov.ger(resp[(i, c)], &diff, &diff, 1.0);
        }
        cov /= nk;
        for j in 0..d {
            cov[(j, j)] += COVARIANCE_FLOOR;
        }
        means.row_mut(c).copy_from(&mean.transpose());
        covs.push(cov);
    }
    Ok((weights, means, covs))
}

fn kmeans_pp(x: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = x.nrows();
    let dist2 = |a: usize, b: usize| (x.row(a) - x.row(b)).norm_squared();
    let mut centers = vec![rng.random_range(0..n)];
    let mut best: Vec<f64> = (0..n).map(|i| dist2(i, centers[0])).collect();
    while centers.len() < k {
        let total: f64 = best.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &b) in best.iter().enumerate() {
                if b > 0.0 && target < b {
                    pick = i;
                    break;
                }
                target -= b;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(next);
        for (i, b) in best.iter_mut().enumerate() {
            *b = b.min(dist2(i, next));
        }
    }
    centers
}

pub fn fit_gmm(table: &FeatureTable, pivot_features: &[String], params: &GmmParams) -> Result<GmmModel> {
    let k = params.n_components;
    if k == 0 {
        return Err(Error::InvalidArgument("n_components must be positive".into()));
    }
    if pivot_features.is_empty() {
        return Err(Error::InvalidArgument("no pivot features".into()));
    }
    let n = table.n_rows();
    if n < k.max(2) {
        return Err(Error::InsufficientData {
            rows: n,
            required: k.max(2),
        });
    }
    let idx = pivot_features
        .iter()
        .map(|p| table.column_index(p))
        .collect::<Result<Vec<_>>>()?;
    let d = idx.len();
    let mut center = Vec::with_capacity(d);
    let mut scale = Vec::with_capacity(d);
    for (&j, name) in idx.iter().zip(pivot_features) {
        let (m, s) = crate::dataio::normalize_mean_std(table.values().column(j).iter().copied());
        if !(s > 0.0) {
            return Err(Error::DegenerateFeature(name.clone()));
        }
        center.push(m);
        scale.push(s);
    }
    let x = DMatrix::from_fn(n, d, |i, j| (table.values()[(i, idx[j])] - center[j]) / scale[j]);

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let seeds = kmeans_pp(&x, k, &mut rng);
    let mut resp = DMatrix::zeros(n, k);
    for i in 0..n {
        let nearest = (0..k)
            .map(|c| (x.row(i) - x.row(seeds[c])).norm_squared())
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (c, v)| if v < acc.1 { (c, v) } else { acc })
            .0;
        resp[(i, nearest)] = 1.0;
    }
    let (mut weights, mut means, mut covs) = m_step(&x, &resp)?;
    let mut trace = Vec::new();
    for it in 0..=params.max_iter {
        let comps = build_components(&weights, &means, &covs)?;
        let (r, ll) = e_step(&x, &comps);
        let converged = trace
            .last()
            .is_some_and(|&prev: &f64| (ll - prev) / (n as f64) < params.tol);
        trace.push(ll);
        if converged || it == params.max_iter {
            break;
        }
        (weights, means, covs) = m_step(&x, &r)?;
    }
    Ok(GmmModel {
        pivot_features: pivot_features.to_vec(),
        center,
        scale,
        weights,
        means,
        covariances: covs,
        log_likelihood: trace,
    })
}

/// Label each row with its maximum-posterior component; ties go to the lowest index.
pub fn assign_subsets(model: &GmmModel, table: &FeatureTable) -> Result<Vec<usize>> {
    let x = model.standardized(table)?;
    let comps = model.components()?;
    let labels = (0..x.nrows())
        .map(|i| {
            let xi = x.row(i).transpose();
            let mut best = (0, f64::NEG_INFINITY);
            for (c, comp) in comps.iter().enumerate() {
                let lp = comp.log_weight + log_density(comp, &xi);
                if lp > best.1 {
                    best = (c, lp);
                }
            }
            best.0
        })
        .collect();
    Ok(labels)
}

/// Writes `id,subset`.
pub fn write_subsets(path: &Path, ids: &[String], labels: &[usize]) -> Result<()> {
    let mut out = String::from("id,subset\n");
    for (id, l) in ids.iter().zip(labels) {
        let _ = writeln!(out, "{id},{l}");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_subsets(path: &Path) -> Result<Vec<(String, usize)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    reader
        .records()
        .enumerate()
        .map(|(i, rec)| {
            let bad = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                msg,
            };
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let id = rec.get(0).ok_or_else(|| bad("missing id".into()))?;
            let label = rec
                .get(1)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("bad subset label".into()))?;
            Ok((id.to_string(), label))
        })
        .collect()
}

/// Split a table into per-label tables, label order 0..n_labels.
pub fn partition(table: &FeatureTable, labels: &[usize], n_labels: usize) -> Vec<FeatureTable> {
    (0..n_labels)
        .map(|l| {
            let rows: Vec<usize> = labels
                .iter()
                .enumerate()
                .filter(|&(_, &lab)| lab == l)
                .map(|(i, _)| i)
                .collect();
            table.select_rows(&rows)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn one_d(values: &[f64]) -> FeatureTable {
        let rows: Vec<Vec<f64>> = values.iter().map(|&v| vec![v]).collect();
        let ids = (0..values.len()).map(|i| format!("r{i}")).collect();
        FeatureTable::from_rows(ids, vec!["x".into()], &rows, vec![]).unwrap()
    }

    pub(crate) fn two_clusters(seed: u64) -> FeatureTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let left = Normal::new(-10.0, 0.5).unwrap();
        let right = Normal::new(10.0, 0.5).unwrap();
        let mut v: Vec<f64> = (0..200).map(|_| left.sample(&mut rng)).collect();
        v.extend((0..200).map(|_| right.sample(&mut rng)));
        one_d(&v)
    }

    // N(-10, 0.5) and N(10, 0.5), 200 points each, generator seed 7
    const FROZEN_MEANS: [f64; 2] = [-9.995167610216056, 9.974057163988586];

    fn params(k: usize) -> GmmParams {
        GmmParams {
            n_components: k,
            seed: 42,
            max_iter: 500,
            tol: 1e-10,
        }
    }

    #[test]
    fn single_component_is_sample_mean() {
        let t = two_clusters(3);
        let m = fit_gmm(&t, &["x".into()], &params(1)).unwrap();
        let x = t.column("x").unwrap();
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        assert!((m.means()[(0, 0)] - mean).abs() < 1e-8);
        assert_eq!(m.weights(), [1.0]);
    }

    #[test]
    fn recovers_two_clusters() {
        let t = two_clusters(7);
        let m = fit_gmm(&t, &["x".into()], &params(2)).unwrap();
        let mut means: Vec<f64> = m.means().iter().copied().collect();
        means.sort_by(f64::total_cmp);
        assert!((means[0] + 10.0).abs() < 0.3, "{means:?}");
        assert!((means[1] - 10.0).abs() < 0.3, "{means:?}");
        // clusters 40 sigma apart: EM means are the per-group sample means
        let x = t.column("x").unwrap();
        let left = x[..200].iter().sum::<f64>() / 200.0;
        let right = x[200..].iter().sum::<f64>() / 200.0;
        assert!((means[0] - left).abs() < 1e-9 && (means[1] - right).abs() < 1e-9);
        assert!((means[0] - FROZEN_MEANS[0]).abs() < 1e-12 && (means[1] - FROZEN_MEANS[1]).abs() < 1e-12);
        assert!((m.weights().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for w in m.log_likelihood_trace().windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "{w:?}");
        }
    }

    #[test]
    fn too_few_rows() {
        let t = one_d(&[1.0, 2.0]);
        assert!(matches!(
            fit_gmm(&t, &["x".into()], &params(3)),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn refit_is_bit_identical() {
        let t = two_clusters(11);
        let a = fit_gmm(&t, &["x".into()], &params(2)).unwrap();
        let b = fit_gmm(&t, &["x".into()], &params(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn responsibilities_sum_to_one_and_labels_partition() {
        let t = two_clusters(5);
        let m = fit_gmm(&t, &["x".into()], &params(3)).unwrap();
        let r = m.responsibilities(&t).unwrap();
        for i in 0..r.nrows() {
            assert!((r.row(i).sum() - 1.0).abs() < 1e-9);
        }
        let labels = assign_subsets(&m, &t).unwrap();
        assert_eq!(labels.len(), t.n_rows());
        let parts = partition(&t, &labels, 3);
        assert_eq!(parts.iter().map(|p| p.n_rows()).sum::<usize>(), t.n_rows());
    }

    fn symmetric_model() -> GmmModel {
        GmmModel {
            pivot_features: vec!["x".into()],
            center: vec![0.0],
            scale: vec![1.0],
            weights: vec![0.5, 0.5],
            means: DMatrix::from_row_slice(2, 1, &[-1.0, 1.0]),
            covariances: vec![DMatrix::identity(1, 1), DMatrix::identity(1, 1)],
            log_likelihood: vec![],
        }
    }

    #[test]
    fn tie_goes_to_lowest_component() {
        let m = symmetric_model();
        let labels = assign_subsets(&m, &one_d(&[0.0, 1.0, -1.0])).unwrap();
        assert_eq!(labels, vec![0, 1, 0]);
    }

    #[test]
    fn model_text_round_trip() {
        let t = two_clusters(9);
        let m = fit_gmm(&t, &["x".into()], &params(2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("gmm.txt");
        m.write(&p).unwrap();
        let back = GmmModel::read(&p).unwrap();
        assert_eq!(back.weights(), m.weights());
        assert_eq!(back.means(), m.means());
        assert_eq!(assign_subsets(&back, &t).unwrap(), assign_subsets(&m, &t).unwrap());
    }
}
