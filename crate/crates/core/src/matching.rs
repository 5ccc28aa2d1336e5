//! Matching intervened feature vectors back to real molecules: exact k-NN in a
//! normalized feature space, Tanimoto similarity of fingerprints, PCA projections
//! and the intervention summary report.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::dataio::{fit_normalizer, fmt_f64, FeatureTable, Fingerprint, FingerprintTable};
use crate::error::{Error, Result};
use crate::intervene::{InterventionPlan, INTERVENED_SUFFIX};

/// Which population supplies the normalization statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormalizationSource {
    #[default]
    Intervened,
    Pooled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub reference_id: String,
    pub distance: f64,
    pub reference_target: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborResult {
    pub query_id: String,
    pub neighbors: Vec<Neighbor>,
}

/// Exact Euclidean k-NN over `features`; ties keep reference order.
pub fn nearest_in_reference(
    intervened: &FeatureTable,
    reference: &FeatureTable,
    features: &[String],
    k: usize,
    source: NormalizationSource,
    reference_target: Option<&str>,
) -> Result<Vec<NeighborResult>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    if reference.n_rows() == 0 {
        return Err(Error::NoRows);
    }
    if features.is_empty() {
        return Err(Error::InvalidArgument("no shared features".into()));
    }
    let queries = intervened.select_columns(features)?;
    let refs = reference.select_columns(features)?;
    let normalizer = match source {
        NormalizationSource::Intervened => fit_normalizer(&queries, features)?,
        NormalizationSource::Pooled => fit_normalizer(&FeatureTable::concat(&[&queries, &refs])?, features)?,
    };
    let d = features.len();
    let flat = |t: &FeatureTable| -> Vec<f64> {
        let z = normalizer.apply(t).expect("columns match");
        let mut v = Vec::with_capacity(t.n_rows() * d);
        for i in 0..t.n_rows() {
            v.extend(z.values().row(i).iter());
        }
        v
    };
    let q = flat(&queries);
    let r = flat(&refs);
    let targets = reference_target.map(|t| reference.column(t)).transpose()?;
    let k = k.min(refs.n_rows());
    let results = (0..queries.n_rows())
        .into_par_iter()
        .map(|qi| {
            let qv = &q[qi * d..(qi + 1) * d];
            let mut dist: Vec<(f64, usize)> = r
                .chunks_exact(d)
                .enumerate()
                .map(|(j, rv)| (squared_distance(qv, rv), j))
                .collect();
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < dist.len() {
                dist.select_nth_unstable_by(k - 1, cmp);
                dist.truncate(k);
            }
            dist.sort_by(cmp);
            NeighborResult {
                query_id: queries.row_ids()[qi].clone(),
                neighbors: dist
                    .into_iter()
                    .map(|(d2, j)| Neighbor {
                        reference_id: refs.row_ids()[j].clone(),
                        distance: d2.sqrt(),
                        reference_target: targets.as_ref().map(|t| t[j]),
                    })
                    .collect(),
            }
        })
        .collect();
    Ok(results)
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Writes `query_id,rank,ref_id,distance,ref_dipole` (rank starts at 1).
pub fn write_neighbors(path: &Path, results: &[NeighborResult]) -> Result<()> {
    let mut out = String::from("query_id,rank,ref_id,distance,ref_dipole\n");
    for r in results {
        for (rank, n) in r.neighbors.iter().enumerate() {
            let target = n.reference_target.map(fmt_f64).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.query_id,
                rank + 1,
                n.reference_id,
                fmt_f64(n.distance),
                target
            );
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_neighbors(path: &Path) -> Result<Vec<NeighborResult>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let mut out: Vec<NeighborResult> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let bad = |msg: &str| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            msg: msg.to_string(),
        };
        let rec = rec.map_err(|e| bad(&e.to_string()))?;
        if rec.len() != 5 {
            return Err(bad("expected 5 fields"));
        }
        let neighbor = Neighbor {
            reference_id: rec[2].to_string(),
            distance: rec[3].parse().map_err(|_| bad("bad distance"))?,
            reference_target: if rec[4].is_empty() {
                None
            } else {
                Some(rec[4].parse().map_err(|_| bad("bad target"))?)
            },
        };
        match out.last_mut() {
            Some(last) if last.query_id == rec[0] => last.neighbors.push(neighbor),
            _ => out.push(NeighborResult {
                query_id: rec[0].to_string(),
                neighbors: vec![neighbor],
            }),
        }
    }
    Ok(out)
}

/// |a AND b| / |a OR b|; 1 when both are empty.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64> {
    if a.width() != b.width() {
        return Err(Error::WidthMismatch(a.width(), b.width()));
    }
    let (mut both, mut any) = (0u32, 0u32);
    for (x, y) in a.words().iter().zip(b.words()) {
        both += (x & y).count_ones();
        any += (x | y).count_ones();
    }
    Ok(if any == 0 { 1.0 } else { both as f64 / any as f64 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    pub mean: Vec<f64>,
    /// components x features, orthonormal rows
    pub components: DMatrix<f64>,
    pub explained_variance: Vec<f64>,
    /// rows x components
    pub coordinates: DMatrix<f64>,
}

impl PcaProjection {
    pub fn project(&self, data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if data.ncols() != self.mean.len() {
            return Err(Error::InvalidArgument("dimension mismatch".into()));
        }
        let centered = DMatrix::from_fn(data.nrows(), data.ncols(), |i, j| data[(i, j)] - self.mean[j]);
        Ok(centered * self.components.transpose())
    }
}

/// Principal components from the centered covariance (or the Gram matrix when there
/// are fewer rows than columns). Each component's largest-magnitude loading is positive.
pub fn pca_project(data: &DMatrix<f64>, n_components: usize) -> Result<PcaProjection> {
    let (n, d) = (data.nrows(), data.ncols());
    if n < 2 || n < n_components {
        return Err(Error::InsufficientData {
            rows: n,
            required: n_components.max(2),
        });
    }
    if n_components == 0 || n_components > d {
        return Err(Error::InvalidArgument(format!("{n_components} components for {d} columns")));
    }
    let mean: Vec<f64> = (0..d).map(|j| data.column(j).sum() / n as f64).collect();
    let x = DMatrix::from_fn(n, d, |i, j| data[(i, j)] - mean[j]);
    let denom = (n - 1) as f64;
    let (values, vectors) = if d <= n {
        let eig = SymmetricEigen::new(x.transpose() * &x / denom);
        (eig.eigenvalues, eig.eigenvectors)
    } else {
        let eig = SymmetricEigen::new(&x * x.transpose() / denom);
        let mut v = DMatrix::zeros(d, n);
        for c in 0..n {
            let lambda = eig.eigenvalues[c];
            if lambda > 0.0 {
                let col = x.transpose() * eig.eigenvectors.column(c) / (lambda * denom).sqrt();
                v.set_column(c, &col);
            }
        }
        (eig.eigenvalues, v)
    };
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut components = DMatrix::zeros(n_components, d);
    let mut explained = Vec::with_capacity(n_components);
    for (c, &k) in order.iter().take(n_components).enumerate() {
        let mut v: DVector<f64> = vectors.column(k).into_owned();
        let norm = v.norm();
        if norm > 0.0 {
            v /= norm;
        }
        let lead = v.iter().enumerate().fold((0, 0.0f64), |best, (i, x)| {
            if x.abs() > best.1.abs() { (i, *x) } else { best }
        });
        if lead.1 < 0.0 {
            v = -v;
        }
        components.set_row(c, &v.transpose());
        explained.push(values[k].max(0.0));
    }
    let coordinates = &x * components.transpose();
    Ok(PcaProjection {
        mean,
        components,
        explained_variance: explained,
        coordinates,
    })
}

/// Fingerprints for `ids` as 0/1 rows.
pub fn fingerprint_matrix(fps: &FingerprintTable, ids: &[String]) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(ids.len(), fps.width());
    for (i, id) in ids.iter().enumerate() {
        let fp = fps.get(id).ok_or_else(|| Error::UnknownRow(id.clone()))?;
        for b in 0..fps.width() {
            if fp.get(b) {
                m[(i, b)] = 1.0;
            }
        }
    }
    Ok(m)
}

/// Writes `id,role,phi1,phi2`.
pub fn write_coordinates(path: &Path, rows: &[(String, String, f64, f64)]) -> Result<()> {
    let mut out = String::from("id,role,phi1,phi2\n");
    for (id, role, a, b) in rows {
        let _ = writeln!(out, "{id},{role},{},{}", fmt_f64(*a), fmt_f64(*b));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub original: usize,
    pub intervened: usize,
    pub matched: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchedMolecule {
    pub query_id: String,
    pub reference_id: String,
    pub feature_distance: f64,
    pub tanimoto: Option<f64>,
    pub original_target: f64,
    pub predicted_target: f64,
    pub reference_target: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterventionReport {
    pub threshold: f64,
    pub histogram: Vec<HistogramBin>,
    pub matches: Vec<MatchedMolecule>,
}

impl InterventionReport {
    /// Matches whose reference target exceeds the threshold.
    pub fn successes(&self) -> Vec<&MatchedMolecule> {
        self.matches
            .iter()
            .filter(|m| m.reference_target > self.threshold)
            .collect()
    }

    pub fn bucket_label(&self) -> String {
        format!(">{} Debye", self.threshold)
    }

    pub fn render_summary(&self) -> String {
        let above_before = self
            .matches
            .iter()
            .filter(|m| m.original_target > self.threshold)
            .count();
        let mut out = String::new();
        let _ = writeln!(out, "threshold = {}", fmt_f64(self.threshold));
        let _ = writeln!(out, "bucket = {}", self.bucket_label());
        let _ = writeln!(out, "queries = {}", self.matches.len());
        let _ = writeln!(out, "original_above_threshold = {above_before}");
        let _ = writeln!(out, "matched_above_threshold = {}", self.successes().len());
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let hist = dir.join("histogram.csv");
        let mut out = String::from("bin_lo,bin_hi,original,intervened,matched\n");
        for b in &self.histogram {
            let _ = writeln!(out, "{},{},{},{},{}", fmt_f64(b.lo), fmt_f64(b.hi), b.original, b.intervened, b.matched);
        }
        std::fs::write(&hist, out).map_err(|e| Error::io(&hist, e))?;

        let sim = dir.join("similarity.csv");
        let mut out = String::from("query_id,ref_id,tanimoto,feature_distance\n");
        for m in &self.matches {
            let t = m.tanimoto.map(fmt_f64).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{}", m.query_id, m.reference_id, t, fmt_f64(m.feature_distance));
        }
        std::fs::write(&sim, out).map_err(|e| Error::io(&sim, e))?;

        let succ = dir.join("successes.csv");
        let mut out = String::from("query_id,ref_id,original,predicted,reference\n");
        for m in self.successes() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                m.query_id,
                m.reference_id,
                fmt_f64(m.original_target),
                fmt_f64(m.predicted_target),
                fmt_f64(m.reference_target)
            );
        }
        std::fs::write(&succ, out).map_err(|e| Error::io(&succ, e))?;

        let summary = dir.join("report.txt");
        std::fs::write(&summary, self.render_summary()).map_err(|e| Error::io(&summary, e))
    }
}

/// Fingerprints for the pre-intervention molecules and for the reference set.
pub struct FingerprintPair<'a> {
    pub original: &'a FingerprintTable,
    pub reference: &'a FingerprintTable,
}

/// Summarize intervention outcomes against the closest reference molecules.
///
/// `original_targets` maps each planned row id to its observed target value.
pub fn intervention_report(
    plans: &[InterventionPlan],
    neighbors: &[NeighborResult],
    original_targets: &HashMap<String, f64>,
    threshold: f64,
    fingerprints: Option<FingerprintPair<'_>>,
    n_bins: usize,
) -> Result<InterventionReport> {
    let by_query: HashMap<&str, &NeighborResult> = neighbors
        .iter()
        .map(|n| (n.query_id.strip_suffix(INTERVENED_SUFFIX).unwrap_or(&n.query_id), n))
        .collect();
    let mut matches = Vec::with_capacity(plans.len());
    for plan in plans {
        let Some(result) = by_query.get(plan.row_id.as_str()) else {
            continue;
        };
        let Some(best) = result.neighbors.first() else {
            continue;
        };
        let reference_target = best
            .reference_target
            .ok_or_else(|| Error::MissingColumn("reference target".into()))?;
        let original_target = *original_targets
            .get(&plan.row_id)
            .ok_or_else(|| Error::UnknownRow(plan.row_id.clone()))?;
        let tanimoto = match &fingerprints {
            Some(fp) => match (fp.original.get(&plan.row_id), fp.reference.get(&best.reference_id)) {
                (Some(a), Some(b)) => Some(tanimoto(a, b)?),
                _ => None,
            },
            None => None,
        };
        matches.push(MatchedMolecule {
            query_id: plan.row_id.clone(),
            reference_id: best.reference_id.clone(),
            feature_distance: best.distance,
            tanimoto,
            original_target,
            predicted_target: plan.predicted_target_after,
            reference_target,
        });
    }
    let histogram = histogram(&matches, n_bins.max(1));
    Ok(InterventionReport {
        threshold,
        histogram,
        matches,
    })
}

fn histogram(matches: &[MatchedMolecule], n_bins: usize) -> Vec<HistogramBin> {
    let all = matches
        .iter()
        .flat_map(|m| [m.original_target, m.predicted_target, m.reference_target]);
    let lo = all.clone().fold(f64::INFINITY, f64::min);
    let hi = all.fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return Vec::new();
    }
    let width = if hi > lo { (hi - lo) / n_bins as f64 } else { 1.0 };
    let mut bins: Vec<HistogramBin> = (0..n_bins)
        .map(|b| HistogramBin {
            lo: lo + b as f64 * width,
            hi: if b + 1 == n_bins && hi > lo { hi } else { lo + (b + 1) as f64 * width },
            original: 0,
            intervened: 0,
            matched: 0,
        })
        .collect();
    let slot = |v: f64| (((v - lo) / width) as usize).min(n_bins - 1);
    for m in matches {
        bins[slot(m.original_target)].original += 1;
        bins[slot(m.predicted_target)].intervened += 1;
        bins[slot(m.reference_target)].matched += 1;
    }
    bins
}
