//! Seeded linear SEM samplers and heterogeneous multi-subset worlds.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::causal::WeightedDag;
use crate::dataio::{fmt_f64, FeatureTable, Fingerprint, FingerprintTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Noise {
    /// Uniform on [-s, s].
    Uniform(f64),
    /// Laplace with scale b.
    Laplace(f64),
    /// Gaussian with standard deviation; violates identifiability, for negative controls.
    Gaussian(f64),
}

impl Noise {
    fn scale(self) -> f64 {
        match self {
            Noise::Uniform(s) | Noise::Laplace(s) | Noise::Gaussian(s) => s,
        }
    }

    pub fn variance(self) -> f64 {
        match self {
            Noise::Uniform(s) => s * s / 3.0,
            Noise::Laplace(b) => 2.0 * b * b,
            Noise::Gaussian(sd) => sd * sd,
        }
    }

    fn sample(self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Noise::Uniform(s) => rng.random_range(-s..=s),
            Noise::Laplace(b) => {
                let u: f64 = rng.random_range(-0.5..0.5);
                -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
            Noise::Gaussian(sd) => Normal::new(0.0, sd).expect("positive sd").sample(rng),
        }
    }

    fn render(self) -> String {
        match self {
            Noise::Uniform(s) => format!("uniform:{}", fmt_f64(s)),
            Noise::Laplace(s) => format!("laplace:{}", fmt_f64(s)),
            Noise::Gaussian(s) => format!("gaussian:{}", fmt_f64(s)),
        }
    }

    fn parse(s: &str) -> Option<Noise> {
        let (kind, scale) = s.trim().split_once(':')?;
        let scale: f64 = scale.parse().ok()?;
        match kind {
            "uniform" => Some(Noise::Uniform(scale)),
            "laplace" => Some(Noise::Laplace(scale)),
            "gaussian" => Some(Noise::Gaussian(scale)),
            _ => None,
        }
    }
}

/// Linear SEM: x_i = sum_j w_ij x_j + e_i with independent noises.
#[derive(Debug, Clone, PartialEq)]
pub struct SemSpec {
    pub node_names: Vec<String>,
    /// (child, parent, weight) by node index.
    pub edges: Vec<(usize, usize, f64)>,
    pub noise: Vec<Noise>,
    pub targets: Vec<String>,
    pub seed: u64,
}

impl SemSpec {
    pub fn new(node_names: Vec<String>, edges: &[(&str, &str, f64)], noise: Noise, seed: u64) -> Result<Self> {
        let find = |name: &str| {
            node_names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::UnknownNode(name.to_string()))
        };
        let edges = edges
            .iter()
            .map(|&(c, p, w)| Ok((find(c)?, find(p)?, w)))
            .collect::<Result<Vec<_>>>()?;
        let spec = Self {
            noise: vec![noise; node_names.len()],
            node_names,
            edges,
            targets: Vec::new(),
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_targets(mut self, targets: &[&str]) -> Result<Self> {
        for t in targets {
            if !self.node_names.iter().any(|n| n == t) {
                return Err(Error::UnknownNode(t.to_string()));
            }
        }
        self.targets = targets.iter().map(|s| s.to_string()).collect();
        Ok(self)
    }

    pub fn with_noise(mut self, node: &str, noise: Noise) -> Result<Self> {
        let i = self.index(node)?;
        self.noise[i] = noise;
        self.validate()?;
        Ok(self)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn index(&self, name: &str) -> Result<usize> {
        self.node_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownNode(name.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.noise.len() != self.node_names.len() {
            return Err(Error::InvalidArgument("one noise term per node".into()));
        }
        if let Some(n) = self.noise.iter().find(|n| !(n.scale() > 0.0)) {
            return Err(Error::InvalidArgument(format!("noise scale must be positive: {n:?}")));
        }
        self.true_dag().map(|_| ())
    }

    pub fn weight_matrix(&self) -> DMatrix<f64> {
        let n = self.node_names.len();
        let mut b = DMatrix::zeros(n, n);
        for &(c, p, w) in &self.edges {
            b[(c, p)] = w;
        }
        b
    }

    /// Ground-truth graph on the raw scale.
    pub fn true_dag(&self) -> Result<WeightedDag> {
        WeightedDag::new(self.node_names.clone(), self.weight_matrix())
    }

    /// Population covariance (I - B)^-1 D (I - B)^-T.
    pub fn covariance(&self) -> DMatrix<f64> {
        let n = self.node_names.len();
        let inv = (DMatrix::identity(n, n) - self.weight_matrix())
            .try_inverse()
            .expect("acyclic SEM has invertible I - B");
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            n,
            self.noise.iter().map(|e| e.variance()),
        ));
        &inv * d * inv.transpose()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |line: usize, msg: &str| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: msg.to_string(),
        };
        let mut nodes = None;
        let mut targets = Vec::new();
        let mut noise_spec = None;
        let mut seed = 0;
        let mut edges = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line == "child,parent,weight" {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let Some((k, v)) = rest.split_once('=') else { continue };
                let list = || v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect::<Vec<_>>();
                match k.trim() {
                    "nodes" => nodes = Some(list()),
                    "targets" => targets = list(),
                    "noise" => noise_spec = Some(list()),
                    "seed" => seed = v.trim().parse().map_err(|_| bad(lineno + 1, "bad seed"))?,
                    _ => {}
                }
                continue;
            }
            let parts: Vec<&str> = line.split(',').map(str::trim).collect();
            if parts.len() != 3 {
                return Err(bad(lineno + 1, "expected `child,parent,weight`"));
            }
            let w: f64 = parts[2].parse().map_err(|_| bad(lineno + 1, "bad weight"))?;
            edges.push((parts[0].to_string(), parts[1].to_string(), w));
        }
        let nodes = nodes.ok_or_else(|| bad(1, "missing `# nodes` header"))?;
        let n = nodes.len();
        let noise = match noise_spec {
            None => vec![Noise::Uniform(1.0); n],
            Some(list) => {
                let parsed = list
                    .iter()
                    .map(|s| Noise::parse(s).ok_or_else(|| bad(1, "bad noise spec")))
                    .collect::<Result<Vec<_>>>()?;
                match parsed.len() {
                    1 => vec![parsed[0]; n],
                    l if l == n => parsed,
                    _ => return Err(bad(1, "noise list length must be 1 or the node count")),
                }
            }
        };
        let refs: Vec<(&str, &str, f64)> = edges.iter().map(|(c, p, w)| (c.as_str(), p.as_str(), *w)).collect();
        let mut spec = SemSpec::new(nodes, &refs, Noise::Uniform(1.0), seed)?;
        spec.noise = noise;
        spec.validate()?;
        let t: Vec<&str> = targets.iter().map(String::as_str).collect();
        spec.with_targets(&t)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let _ = writeln!(out, "# nodes = {}", self.node_names.join(","));
        let _ = writeln!(out, "# targets = {}", self.targets.join(","));
        let noise: Vec<String> = self.noise.iter().map(|n| n.render()).collect();
        let _ = writeln!(out, "# noise = {}", noise.join(","));
        let _ = writeln!(out, "# seed = {}", self.seed);
        out.push_str("child,parent,weight\n");
        for &(c, p, w) in &self.edges {
            let _ = writeln!(out, "{},{},{}", self.node_names[c], self.node_names[p], fmt_f64(w));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Ancestral sampling; row ids are `{id_prefix}{row}`.
pub fn sample_sem(spec: &SemSpec, n_rows: usize, id_prefix: &str) -> Result<FeatureTable> {
    let dag = spec.true_dag()?;
    let d = spec.node_names.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut values = DMatrix::zeros(n_rows, d);
    let b = dag.weights();
    for &i in dag.causal_order() {
        let parents = dag.parents(i);
        for r in 0..n_rows {
            let mut v = spec.noise[i].sample(&mut rng);
            for &p in &parents {
                v += b[(i, p)] * values[(r, p)];
            }
            values[(r, i)] = v;
        }
    }
    let ids = (0..n_rows).map(|r| format!("{id_prefix}{r}")).collect();
    FeatureTable::new(ids, spec.node_names.clone(), values, spec.targets.clone())
}

/// Multiplicative change of one edge weight in one subset.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub subset: usize,
    pub child: String,
    pub parent: String,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldSpec {
    pub base: SemSpec,
    pub n_subsets: usize,
    /// Subset sampled from `base` unchanged.
    pub matching_subset: usize,
    pub perturbations: Vec<Perturbation>,
    pub rows_per_subset: usize,
    pub global_rows: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct World {
    pub subsets: Vec<FeatureTable>,
    pub subset_specs: Vec<SemSpec>,
    /// Independent sample of the unperturbed SEM.
    pub global: FeatureTable,
    pub true_dag: WeightedDag,
}

fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(salt);
    rng.random()
}

pub fn make_heterogeneous_world(spec: &WorldSpec) -> Result<World> {
    if spec.n_subsets == 0 || spec.matching_subset >= spec.n_subsets {
        return Err(Error::InvalidArgument(format!(
            "matching subset {} outside 0..{}",
            spec.matching_subset, spec.n_subsets
        )));
    }
    let mut subset_specs = vec![spec.base.clone(); spec.n_subsets];
    for p in &spec.perturbations {
        if p.subset >= spec.n_subsets || p.subset == spec.matching_subset {
            return Err(Error::InvalidArgument(format!(
                "perturbation targets subset {}",
                p.subset
            )));
        }
        let (c, q) = (spec.base.index(&p.child)?, spec.base.index(&p.parent)?);
        let edge = subset_specs[p.subset]
            .edges
            .iter_mut()
            .find(|e| e.0 == c && e.1 == q)
            .ok_or_else(|| Error::InvalidArgument(format!("no edge {} -> {}", p.parent, p.child)))?;
        edge.2 *= p.factor;
    }
    let subsets = subset_specs
        .iter_mut()
        .enumerate()
        .map(|(k, s)| {
            s.seed = derive_seed(spec.seed, k as u64);
            sample_sem(s, spec.rows_per_subset, &format!("d{k}_"))
        })
        .collect::<Result<Vec<_>>>()?;
    let global_spec = spec.base.clone().with_seed(derive_seed(spec.seed, u64::MAX));
    let global = sample_sem(&global_spec, spec.global_rows, "g_")?;
    Ok(World {
        subsets,
        subset_specs,
        global,
        true_dag: spec.base.true_dag()?,
    })
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

/// Nine features and a sink target `dipole`, three subsets; subset 1 matches the
/// global SEM, the others rescale feature-to-feature edges only, so the target's
/// structural equation is shared by every subset.
pub fn heterogeneous_preset(seed: u64) -> WorldSpec {
    let mut nodes = names("f", 9);
    nodes.push("dipole".into());
    let edges = [
        ("f2", "f0", 0.8),
        ("f2", "f1", -0.6),
        ("f4", "f2", 0.7),
        ("f4", "f3", 0.5),
        ("f5", "f0", 0.9),
        ("f6", "f4", -0.8),
        ("f7", "f5", 0.6),
        ("f8", "f6", 0.5),
        ("f8", "f3", 0.4),
        ("dipole", "f4", 0.6),
        ("dipole", "f7", 0.5),
        ("dipole", "f8", -0.4),
        ("dipole", "f1", 0.3),
    ];
    let base = SemSpec::new(nodes, &edges, Noise::Uniform(1.0), seed)
        .and_then(|s| s.with_noise("dipole", Noise::Uniform(0.5)))
        .and_then(|s| s.with_targets(&["dipole"]))
        .expect("preset is valid");
    let p = |subset: usize, child: &str, parent: &str, factor: f64| Perturbation {
        subset,
        child: child.into(),
        parent: parent.into(),
        factor,
    };
    WorldSpec {
        base,
        n_subsets: 3,
        matching_subset: 1,
        perturbations: vec![
            p(0, "f2", "f0", 0.0),
            p(0, "f4", "f2", 2.5),
            p(0, "f7", "f5", 2.5),
            p(2, "f2", "f1", 2.5),
            p(2, "f6", "f4", 0.0),
            p(2, "f5", "f0", 2.0),
        ],
        rows_per_subset: 1500,
        global_rows: 3000,
        seed,
    }
}

/// Twenty descriptor-like features plus `polarizability` and `dipole` targets.
/// Nine features reach `polarizability`; the rest are distractors.
pub fn descriptor_preset(seed: u64) -> WorldSpec {
    let mut nodes = names("desc", 20);
    nodes.push("polarizability".into());
    nodes.push("dipole".into());
    let mut edges: Vec<(String, String, f64)> = Vec::new();
    let mut e = |c: String, p: String, w: f64| edges.push((c, p, w));
    for i in 1..9 {
        e(format!("desc{i}"), format!("desc{}", i - 1), if i % 2 == 0 { 0.6 } else { -0.5 });
    }
    for i in 10..20 {
        e(format!("desc{i}"), format!("desc{}", i - 1), 0.5);
    }
    for (i, w) in [(2, 0.5), (5, 0.4), (8, 0.6)] {
        e("polarizability".into(), format!("desc{i}"), w);
    }
    for (i, w) in [(3, 0.5), (6, -0.4), (8, 0.3)] {
        e("dipole".into(), format!("desc{i}"), w);
    }
    e("dipole".into(), "polarizability".into(), 0.4);
    let refs: Vec<(&str, &str, f64)> = edges.iter().map(|(c, p, w)| (c.as_str(), p.as_str(), *w)).collect();
    let base = SemSpec::new(nodes, &refs, Noise::Uniform(1.0), seed)
        .and_then(|s| s.with_targets(&["polarizability", "dipole"]))
        .expect("preset is valid");
    let p = |subset: usize, child: &str, parent: &str, factor: f64| Perturbation {
        subset,
        child: child.into(),
        parent: parent.into(),
        factor,
    };
    WorldSpec {
        base,
        n_subsets: 3,
        matching_subset: 1,
        perturbations: vec![
            p(0, "desc2", "desc1", 0.0),
            p(0, "desc5", "desc4", 2.5),
            p(2, "desc4", "desc3", 2.5),
            p(2, "desc7", "desc6", 0.0),
        ],
        rows_per_subset: 800,
        global_rows: 1200,
        seed,
    }
}

/// Bitvectors from random hyperplanes: bit `b` is set when `w_b · x + c_b > 0`.
/// Tables hashed with the same seed and features share hyperplanes, so nearby
/// feature vectors get similar fingerprints.
pub fn synthetic_fingerprints(
    table: &FeatureTable,
    features: &[String],
    width: usize,
    seed: u64,
) -> Result<FingerprintTable> {
    if width == 0 {
        return Err(Error::InvalidArgument("fingerprint width must be positive".into()));
    }
    let sub = table.select_columns(features)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let planes: Vec<(Vec<f64>, f64)> = (0..width)
        .map(|_| {
            let w = (0..features.len()).map(|_| normal.sample(&mut rng)).collect();
            (w, normal.sample(&mut rng))
        })
        .collect();
    let bits = (0..sub.n_rows())
        .map(|i| {
            let x = sub.row(i);
            let mut fp = Fingerprint::zeros(width);
            for (b, (w, c)) in planes.iter().enumerate() {
                let s: f64 = w.iter().zip(&x).map(|(a, v)| a * v).sum();
                fp.set(b, s + c > 0.0);
            }
            fp
        })
        .collect();
    FingerprintTable::new(width, sub.row_ids().to_vec(), bits)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain_spec(seed: u64) -> SemSpec {
        SemSpec::new(
            vec!["x1".into(), "x2".into(), "x3".into()],
            &[("x2", "x1", 0.7), ("x3", "x2", 0.5)],
            Noise::Uniform(1.0),
            seed,
        )
        .unwrap()
    }

    fn sample_cov(t: &FeatureTable) -> DMatrix<f64> {
        let x = t.values();
        let n = x.nrows() as f64;
        let means: Vec<f64> = (0..x.ncols()).map(|j| x.column(j).sum() / n).collect();
        DMatrix::from_fn(x.ncols(), x.ncols(), |a, b| {
            (0..x.nrows()).map(|i| (x[(i, a)] - means[a]) * (x[(i, b)] - means[b])).sum::<f64>() / (n - 1.0)
        })
    }

    #[test]
    fn zero_rows_gives_empty_table() {
        let t = sample_sem(&chain_spec(1), 0, "r").unwrap();
        assert_eq!(t.n_rows(), 0);
        assert_eq!(t.n_cols(), 3);
    }

    #[test]
    fn independent_noise_is_uncorrelated() {
        let spec = SemSpec::new(
            vec!["a".into(), "b".into(), "c".into()],
            &[],
            Noise::Uniform(1.0),
            3,
        )
        .unwrap();
        let c = sample_cov(&sample_sem(&spec, 5000, "r").unwrap());
        for a in 0..3 {
            for b in 0..a {
                let r = c[(a, b)] / (c[(a, a)] * c[(b, b)]).sqrt();
                assert!(r.abs() < 0.1, "corr {a},{b} = {r}");
            }
        }
    }

    #[test]
    fn chain_covariance_matches_analytic() {
        let spec = chain_spec(11);
        let analytic = spec.covariance();
        let empirical = sample_cov(&sample_sem(&spec, 5000, "r").unwrap());
        for a in 0..3 {
            for b in 0..3 {
                let scale = (analytic[(a, a)] * analytic[(b, b)]).sqrt();
                let err = (empirical[(a, b)] - analytic[(a, b)]).abs() / scale;
                assert!(err < 0.06, "({a},{b}) {} vs {}", empirical[(a, b)], analytic[(a, b)]);
            }
        }
    }

    #[test]
    fn cyclic_spec_is_rejected() {
        let r = SemSpec::new(
            vec!["a".into(), "b".into()],
            &[("a", "b", 1.0), ("b", "a", 1.0)],
            Noise::Uniform(1.0),
            0,
        );
        assert!(matches!(r, Err(Error::Cyclic)));
    }

    #[test]
    fn deterministic_per_seed() {
        let a = sample_sem(&chain_spec(5), 100, "r").unwrap();
        let b = sample_sem(&chain_spec(5), 100, "r").unwrap();
        assert_eq!(a, b);
        let c = sample_sem(&chain_spec(6), 100, "r").unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn laplace_variance() {
        let spec = SemSpec::new(vec!["a".into()], &[], Noise::Laplace(0.5), 9).unwrap();
        let c = sample_cov(&sample_sem(&spec, 20000, "r").unwrap());
        assert!((c[(0, 0)] - 0.5).abs() / 0.5 < 0.05);
    }

    #[test]
    fn world_without_perturbations_has_identical_specs() {
        let mut ws = heterogeneous_preset(4);
        ws.perturbations.clear();
        ws.rows_per_subset = 10;
        ws.global_rows = 10;
        let w = make_heterogeneous_world(&ws).unwrap();
        assert_eq!(w.subsets.len(), 3);
        for s in &w.subset_specs {
            assert_eq!(s.edges, ws.base.edges);
        }
    }

    #[test]
    fn world_applies_perturbations_and_validates() {
        let mut ws = heterogeneous_preset(4);
        ws.rows_per_subset = 20;
        ws.global_rows = 20;
        let w = make_heterogeneous_world(&ws).unwrap();
        assert_eq!(w.subset_specs[1].edges, ws.base.edges);
        assert_ne!(w.subset_specs[0].edges, ws.base.edges);
        assert_eq!(w.subsets[2].row_ids()[0], "d2_0");
        ws.perturbations.push(Perturbation {
            subset: 0,
            child: "f0".into(),
            parent: "f9".into(),
            factor: 2.0,
        });
        assert!(make_heterogeneous_world(&ws).is_err());
    }

    #[test]
    fn spec_file_round_trip() {
        let spec = descriptor_preset(3).base;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sem.txt");
        spec.write(&p).unwrap();
        assert_eq!(SemSpec::read(&p).unwrap(), spec);
    }

    #[test]
    fn fingerprints_are_deterministic_and_local() {
        let spec = chain_spec(4);
        let t = sample_sem(&spec, 50, "r").unwrap();
        let f = t.feature_names().to_vec();
        let a = synthetic_fingerprints(&t, &f, 64, 9).unwrap();
        assert_eq!(a, synthetic_fingerprints(&t, &f, 64, 9).unwrap());
        assert_eq!(a.len(), 50);
        let same = t.select_rows(&[3]).with_row_ids(vec!["copy".into()]).unwrap();
        let b = synthetic_fingerprints(&same, &f, 64, 9).unwrap();
        assert_eq!(b.get("copy"), a.get("r3"));
        assert!(synthetic_fingerprints(&t, &f, 0, 9).is_err());
    }
}
