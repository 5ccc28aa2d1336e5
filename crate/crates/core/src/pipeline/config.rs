use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::causal::DEFAULT_PRUNE_THRESHOLD;
use crate::dataio::{Schema, DEFAULT_TEST_FRACTION};
use crate::error::{Error, Result};
use crate::graphdist::SpectrumMode;
use crate::intervene::DEFAULT_GOAL_DEBYE;
use crate::kv::KeyValues;
use crate::matching::NormalizationSource;
use crate::regress::ForestParams;

pub const SEED_ENV: &str = "CAUSAL_AL_SEED";

const PATH_KEYS: [&str; 7] = [
    "features",
    "fingerprints",
    "reference",
    "reference_fingerprints",
    "global",
    "subset_labels",
    "out_dir",
];

/// Named random streams. Each defaults to a value derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedName {
    Cluster,
    Split,
    Active,
    Forest,
    Synth,
}

impl SeedName {
    pub const ALL: [SeedName; 5] = [Self::Cluster, Self::Split, Self::Active, Self::Forest, Self::Synth];

    pub fn key(self) -> &'static str {
        match self {
            Self::Cluster => "seed.cluster",
            Self::Split => "seed.split",
            Self::Active => "seed.active",
            Self::Forest => "seed.forest",
            Self::Synth => "seed.synth",
        }
    }

    fn stream(self) -> u64 {
        self as u64 + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub features: Option<PathBuf>,
    pub fingerprints: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub reference_fingerprints: Option<PathBuf>,
    /// Independent sample for the global graph; defaults to the training pool.
    pub global: Option<PathBuf>,
    /// Precomputed `id,subset` labels; defaults to the cluster stage output.
    pub subset_labels: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub schema: Schema,
    pub target: String,
    pub pivot_features: Option<Vec<String>>,
    pub n_components: usize,
    pub k_features: usize,
    pub prune_threshold: f64,
    pub batch_size: usize,
    pub n_iter: usize,
    pub n_runs: usize,
    pub top_n: Option<usize>,
    pub spectrum_mode: SpectrumMode,
    pub test_fraction: f64,
    pub accuracy: bool,
    pub forest: ForestParams,
    pub goal: f64,
    pub propagate: bool,
    pub knn_k: usize,
    pub normalization: NormalizationSource,
    pub histogram_bins: usize,
    pub synth_preset: String,
    pub master_seed: u64,
    seeds: [Option<u64>; 5],
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let forest = ForestParams::default();
        Self {
            features: None,
            fingerprints: None,
            reference: None,
            reference_fingerprints: None,
            global: None,
            subset_labels: None,
            out_dir: PathBuf::from("out"),
            schema: Schema::default(),
            target: "dipole".into(),
            pivot_features: None,
            n_components: 3,
            k_features: 9,
            prune_threshold: DEFAULT_PRUNE_THRESHOLD,
            batch_size: 50,
            n_iter: 20,
            n_runs: 10,
            top_n: None,
            spectrum_mode: SpectrumMode::SingularValues,
            test_fraction: DEFAULT_TEST_FRACTION,
            accuracy: true,
            forest,
            goal: DEFAULT_GOAL_DEBYE,
            propagate: false,
            knn_k: 5,
            normalization: NormalizationSource::Intervened,
            histogram_bins: 20,
            synth_preset: "heterogeneous".into(),
            master_seed: 0,
            seeds: [None; 5],
        }
    }
}

fn positive(kv: &KeyValues, key: &str) -> Result<Option<usize>> {
    match kv.parsed::<usize>(key)? {
        Some(0) => Err(Error::Config(format!("`{key}` must be positive"))),
        v => Ok(v),
    }
}

impl PipelineConfig {
    /// Build from key-value entries. Relative paths resolve against `base`.
    pub fn from_kv(kv: &KeyValues, base: &Path) -> Result<Self> {
        let mut c = Self::default();
        let path = |key: &str| kv.get(key).filter(|v| !v.is_empty()).map(|v| base.join(v));
        c.features = path("features");
        c.fingerprints = path("fingerprints");
        c.reference = path("reference");
        c.reference_fingerprints = path("reference_fingerprints");
        c.global = path("global");
        c.subset_labels = path("subset_labels");
        if let Some(p) = path("out_dir") {
            c.out_dir = p;
        }
        c.schema = Schema::from_kv(kv)?;
        if let Some(t) = kv.get("target") {
            c.target = t.to_string();
        } else if let Some(t) = c.schema.target_columns.last() {
            c.target = t.clone();
        }
        if c.schema.target_columns.is_empty() {
            c.schema.target_columns = vec![c.target.clone()];
        } else if !c.schema.target_columns.contains(&c.target) {
            return Err(Error::Config(format!("target `{}` is not a target column", c.target)));
        }
        c.pivot_features = kv.list("pivot_features").filter(|p| !p.is_empty());
        if let Some(v) = positive(kv, "n_components")? {
            c.n_components = v;
        }
        if let Some(v) = positive(kv, "k_features")? {
            c.k_features = v;
        }
        if let Some(v) = kv.parsed::<f64>("prune_threshold")? {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config("`prune_threshold` must be nonnegative".into()));
            }
            c.prune_threshold = v;
        }
        if let Some(v) = positive(kv, "batch_size")? {
            c.batch_size = v;
        }
        if let Some(v) = positive(kv, "n_iter")? {
            c.n_iter = v;
        }
        if let Some(v) = positive(kv, "n_runs")? {
            c.n_runs = v;
        }
        c.top_n = positive(kv, "top_n")?;
        if let Some(v) = kv.get("spectrum") {
            c.spectrum_mode = match v {
                "singular" => SpectrumMode::SingularValues,
                "eigen" => SpectrumMode::EigenvalueModuli,
                _ => return Err(Error::Config(format!("unknown spectrum `{v}` (singular|eigen)"))),
            };
        }
        if let Some(v) = kv.parsed::<f64>("test_fraction")? {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config("`test_fraction` must lie in (0, 1)".into()));
            }
            c.test_fraction = v;
        }
        if let Some(v) = kv.parsed::<bool>("accuracy")? {
            c.accuracy = v;
        }
        if let Some(v) = positive(kv, "forest_trees")? {
            c.forest.n_trees = v;
        }
        if let Some(v) = positive(kv, "forest_depth")? {
            c.forest.max_depth = v;
        }
        if let Some(v) = positive(kv, "forest_min_leaf")? {
            c.forest.min_leaf = v;
        }
        if let Some(v) = kv.parsed::<f64>("goal")? {
            if !v.is_finite() {
                return Err(Error::Config("`goal` must be finite".into()));
            }
            c.goal = v;
        }
        if let Some(v) = kv.parsed::<bool>("propagate")? {
            c.propagate = v;
        }
        if let Some(v) = positive(kv, "knn_k")? {
            c.knn_k = v;
        }
        if let Some(v) = kv.get("normalization") {
            c.normalization = match v {
                "intervened" => NormalizationSource::Intervened,
                "pooled" => NormalizationSource::Pooled,
                _ => return Err(Error::Config(format!("unknown normalization `{v}` (intervened|pooled)"))),
            };
        }
        if let Some(v) = positive(kv, "histogram_bins")? {
            c.histogram_bins = v;
        }
        if let Some(v) = kv.get("synth_preset") {
            if !matches!(v, "heterogeneous" | "descriptor") {
                return Err(Error::Config(format!("unknown preset `{v}` (heterogeneous|descriptor)")));
            }
            c.synth_preset = v.to_string();
        }
        if let Some(v) = kv.parsed::<u64>("seed")? {
            c.master_seed = v;
        }
        for name in SeedName::ALL {
            c.seeds[name as usize] = kv.parsed::<u64>(name.key())?;
        }
        Ok(c)
    }

    /// Config file, then `CAUSAL_AL_SEED`, then explicit overrides (flags win).
    /// Paths in the file resolve against its directory; override paths against the cwd.
    pub fn load(path: Option<&Path>, overrides: &KeyValues, env_seed: Option<&str>) -> Result<Self> {
        let mut kv = match path {
            Some(p) => {
                let file = KeyValues::read(p).map_err(|e| match e {
                    Error::Io { .. } => e,
                    other => Error::Config(other.to_string()),
                })?;
                let base = p.parent().unwrap_or(Path::new(""));
                let mut resolved = KeyValues::new();
                for (k, v) in file.iter() {
                    if PATH_KEYS.contains(&k) && !v.is_empty() {
                        resolved.set(k, base.join(v).display());
                    } else {
                        resolved.set(k, v);
                    }
                }
                resolved
            }
            None => KeyValues::new(),
        };
        if let Some(seed) = env_seed {
            let seed: u64 = seed
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV} is not an integer: `{seed}`")))?;
            kv.set("seed", seed);
        }
        kv.merge(overrides);
        Self::from_kv(&kv, Path::new(""))
    }

    pub fn seed(&self, name: SeedName) -> u64 {
        self.seeds[name as usize].unwrap_or_else(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
            rng.set_stream(name.stream());
            rng.random()
        })
    }

    pub fn features_path(&self) -> Result<&Path> {
        self.features
            .as_deref()
            .ok_or_else(|| Error::Config("`features` is not set".into()))
    }

    pub fn reference_path(&self) -> Result<&Path> {
        self.reference
            .as_deref()
            .ok_or_else(|| Error::Config("`reference` is not set".into()))
    }

    pub fn subset_labels_path(&self) -> PathBuf {
        self.subset_labels
            .clone()
            .unwrap_or_else(|| self.out_dir.join("subsets.csv"))
    }

    /// Parameters echoed into manifests.
    pub fn to_kv(&self) -> KeyValues {
        let mut kv = self.schema.to_kv();
        let mut path = |key: &str, p: &Option<PathBuf>| {
            if let Some(p) = p {
                kv.set(key, p.display());
            }
        };
        path("features", &self.features);
        path("fingerprints", &self.fingerprints);
        path("reference", &self.reference);
        path("reference_fingerprints", &self.reference_fingerprints);
        path("global", &self.global);
        path("subset_labels", &self.subset_labels);
        kv.set("out_dir", self.out_dir.display());
        kv.set("target", &self.target);
        if let Some(p) = &self.pivot_features {
            kv.set("pivot_features", p.join(","));
        }
        kv.set("n_components", self.n_components);
        kv.set("k_features", self.k_features);
        kv.set("prune_threshold", self.prune_threshold);
        kv.set("batch_size", self.batch_size);
        kv.set("n_iter", self.n_iter);
        kv.set("n_runs", self.n_runs);
        if let Some(n) = self.top_n {
            kv.set("top_n", n);
        }
        kv.set(
            "spectrum",
            match self.spectrum_mode {
                SpectrumMode::SingularValues => "singular",
                SpectrumMode::EigenvalueModuli => "eigen",
            },
        );
        kv.set("test_fraction", self.test_fraction);
        kv.set("accuracy", self.accuracy);
        kv.set("forest_trees", self.forest.n_trees);
        kv.set("forest_depth", self.forest.max_depth);
        kv.set("forest_min_leaf", self.forest.min_leaf);
        kv.set("goal", self.goal);
        kv.set("propagate", self.propagate);
        kv.set("knn_k", self.knn_k);
        kv.set(
            "normalization",
            match self.normalization {
                NormalizationSource::Intervened => "intervened",
                NormalizationSource::Pooled => "pooled",
            },
        );
        kv.set("histogram_bins", self.histogram_bins);
        kv.set("synth_preset", &self.synth_preset);
        kv.set("seed", self.master_seed);
        for name in SeedName::ALL {
            kv.set(name.key(), self.seed(name));
        }
        kv
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kv(text: &str) -> KeyValues {
        KeyValues::parse(text, Path::new("t")).unwrap()
    }

    #[test]
    fn defaults_and_parsing() {
        let c = PipelineConfig::from_kv(&kv("features = a.csv\nbatch_size = 30\nspectrum = eigen"), Path::new("/x")).unwrap();
        assert_eq!(c.features.as_deref(), Some(Path::new("/x/a.csv")));
        assert_eq!(c.batch_size, 30);
        assert_eq!(c.n_iter, 20);
        assert_eq!(c.k_features, 9);
        assert_eq!(c.spectrum_mode, SpectrumMode::EigenvalueModuli);
        assert_eq!(c.schema.target_columns, vec!["dipole".to_string()]);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for bad in ["batch_size = 0", "spectrum = laplacian", "test_fraction = 1", "n_iter = x", "target = mu\ntarget_columns = dipole"] {
            let r = PipelineConfig::from_kv(&kv(bad), Path::new(""));
            assert!(matches!(r, Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn flags_beat_env_beat_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.conf");
        std::fs::write(&p, "seed = 1\nfeatures = f.csv\nn_iter = 4\n").unwrap();
        let none = KeyValues::new();
        let c = PipelineConfig::load(Some(&p), &none, None).unwrap();
        assert_eq!(c.master_seed, 1);
        assert_eq!(c.features.as_deref(), Some(dir.path().join("f.csv").as_path()));
        let c = PipelineConfig::load(Some(&p), &none, Some("7")).unwrap();
        assert_eq!(c.master_seed, 7);
        let c = PipelineConfig::load(Some(&p), &kv("seed = 9\nn_iter = 2\nfeatures = g.csv"), Some("7")).unwrap();
        assert_eq!(c.master_seed, 9);
        assert_eq!(c.n_iter, 2);
        assert_eq!(c.features.as_deref(), Some(Path::new("g.csv")));
        assert!(matches!(PipelineConfig::load(Some(&p), &none, Some("x")), Err(Error::Config(_))));
    }

    #[test]
    fn named_seeds_derive_from_master() {
        let a = PipelineConfig::from_kv(&kv("seed = 3"), Path::new("")).unwrap();
        let b = PipelineConfig::from_kv(&kv("seed = 3\nseed.active = 11"), Path::new("")).unwrap();
        assert_eq!(a.seed(SeedName::Cluster), b.seed(SeedName::Cluster));
        assert_ne!(a.seed(SeedName::Cluster), a.seed(SeedName::Split));
        assert_eq!(b.seed(SeedName::Active), 11);
        let c = PipelineConfig::from_kv(&kv("seed = 4"), Path::new("")).unwrap();
        assert_ne!(a.seed(SeedName::Cluster), c.seed(SeedName::Cluster));
    }

    #[test]
    fn echo_round_trips() {
        let a = PipelineConfig::from_kv(&kv("features = /d/f.csv\nseed = 5\ngoal = 2.5\nnormalization = pooled"), Path::new("")).unwrap();
        let b = PipelineConfig::from_kv(&a.to_kv(), Path::new("")).unwrap();
        assert_eq!(a.features, b.features);
        assert_eq!(a.goal, b.goal);
        assert_eq!(a.normalization, b.normalization);
        assert_eq!(a.seed(SeedName::Forest), b.seed(SeedName::Forest));
    }
}
