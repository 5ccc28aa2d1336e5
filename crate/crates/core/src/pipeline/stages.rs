use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use super::config::{PipelineConfig, SeedName};
use super::manifest::Manifest;
use crate::active::{self, ActiveLearningRun, ActiveParams};
use crate::causal::{discover_lingam, rank_features, select_top_k, FeatureRanking, StrengthMode, WeightedDag};
use crate::cluster::{self, GmmParams};
use crate::dataio::{
    fmt_f64, load_feature_table, split_rows, write_feature_table, FeatureTable, FingerprintTable, Schema,
};
use crate::error::{Error, Result};
use crate::graphdist::{spectral_distance, SpectrumMode};
use crate::intervene::{self, FeatureBounds, InterventionSettings};
use crate::kv::KeyValues;
use crate::matching::{self, FingerprintPair};
use crate::regress::{accuracy_trace, ForestParams};
use crate::synth::{self, descriptor_preset, heterogeneous_preset, make_heterogeneous_world};

pub const GMM_FILE: &str = "gmm.txt";
pub const SUBSETS_FILE: &str = "subsets.csv";
pub const LOGLIK_FILE: &str = "loglik.csv";
pub const DAG_FILE: &str = "dag.csv";
pub const ADJACENCY_FILE: &str = "adjacency.csv";
pub const RANKING_FILE: &str = "ranking.csv";
pub const SELECTED_FILE: &str = "selected_features.txt";
pub const TEST_IDS_FILE: &str = "test_ids.txt";
pub const GLOBAL_DAG_FILE: &str = "global_dag.csv";
pub const RUNS_DIR: &str = "runs";
pub const ACTIVE_SUMMARY_FILE: &str = "active_summary.csv";
pub const RANDOM_SUMMARY_FILE: &str = "random_summary.csv";
pub const SELECTION_FILE: &str = "selection_counts.csv";
pub const ACCURACY_FILE: &str = "accuracy.csv";
pub const D_AL_FILE: &str = "d_al_ids.txt";
pub const SEM_DAG_FILE: &str = "sem_dag.csv";
pub const PLANS_FILE: &str = "plans.csv";
pub const INTERVENED_FILE: &str = "intervened.csv";
pub const NEIGHBORS_FILE: &str = "neighbors.csv";
pub const REPORT_DIR: &str = "report";
pub const PCA_FILE: &str = "pca.csv";
pub const SYNTH_CONFIG_FILE: &str = "pipeline.conf";

const SYNTH_FINGERPRINT_WIDTH: usize = 256;
const SYNTH_REFERENCE_ROWS: usize = 10_000;

/// What a stage did, for the one-line stdout summary.
#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub stage: &'static str,
    pub summary: String,
    pub manifest: PathBuf,
}

struct Tracker {
    stage: &'static str,
    start: Instant,
    inputs: Vec<(String, PathBuf)>,
    outputs: Vec<PathBuf>,
    parameters: KeyValues,
    seed: Option<u64>,
}

impl Tracker {
    fn new(stage: &'static str, cfg: &PipelineConfig) -> Result<Self> {
        std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
        let mut parameters = KeyValues::new();
        parameters.set("seed", cfg.master_seed);
        Ok(Self {
            stage,
            start: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            parameters,
            seed: None,
        })
    }

    fn input(&mut self, name: &str, path: &Path) {
        self.inputs.push((name.to_string(), path.to_path_buf()));
    }

    fn output(&mut self, path: PathBuf) -> PathBuf {
        self.outputs.push(path.clone());
        path
    }

    fn param(&mut self, key: &str, value: impl ToString) {
        self.parameters.set(key, value);
    }

    fn finish(self, dir: &Path, summary: String) -> Result<StageOutcome> {
        let manifest = Manifest {
            stage: self.stage.to_string(),
            inputs: self.inputs,
            outputs: self.outputs,
            parameters: self.parameters,
            seed: self.seed,
            duration: self.start.elapsed(),
        }
        .write(dir)?;
        Ok(StageOutcome {
            stage: self.stage,
            summary,
            manifest,
        })
    }
}

fn load_features(cfg: &PipelineConfig, t: &mut Tracker) -> Result<FeatureTable> {
    let path = cfg.features_path()?;
    t.input("features", path);
    let (table, _) = load_feature_table(path, &cfg.schema)?;
    table.column_index(&cfg.target)?;
    Ok(table)
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut out = lines.join("\n");
    out.push('\n');
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn read_selected(cfg: &PipelineConfig, t: &mut Tracker) -> Result<Vec<String>> {
    let path = cfg.out_dir.join(SELECTED_FILE);
    t.input("selected_features", &path);
    let features = active::read_ids(&path)?;
    if features.is_empty() {
        return Err(Error::InvalidArgument("no selected features".into()));
    }
    Ok(features)
}

/// Discovery columns: every input feature plus the design target.
fn discovery_columns(table: &FeatureTable, target: &str) -> Vec<String> {
    let mut cols = table.input_names();
    cols.push(target.to_string());
    cols
}

fn with_target(features: &[String], target: &str) -> Vec<String> {
    let mut cols = features.to_vec();
    cols.push(target.to_string());
    cols
}

pub fn cluster(cfg: &PipelineConfig) -> Result<StageOutcome> {
    let mut t = Tracker::new("cluster", cfg)?;
    let table = load_features(cfg, &mut t)?;
    let pivots = match &cfg.pivot_features {
        Some(p) => p.clone(),
        None => table.input_names().into_iter().take(3).collect(),
    };
    let params = GmmParams {
        n_components: cfg.n_components,
        seed: cfg.seed(SeedName::Cluster),
        ..GmmParams::default()
    };
    t.param("pivot_features", pivots.join(","));
    t.param("n_components", params.n_components);
    t.param("max_iter", params.max_iter);
    t.param("tol", params.tol);
    t.seed = Some(params.seed);
    let model = cluster::fit_gmm(&table, &pivots, &params)?;
    let labels = cluster::assign_subsets(&model, &table)?;
    model.write(&t.output(cfg.out_dir.join(GMM_FILE)))?;
    cluster::write_subsets(&t.output(cfg.out_dir.join(SUBSETS_FILE)), table.row_ids(), &labels)?;
    let mut ll = String::from("iter,log_likelihood\n");
    for (i, v) in model.log_likelihood_trace().iter().enumerate() {
        let _ = writeln!(ll, "{i},{}", fmt_f64(*v));
    }
    let ll_path = t.output(cfg.out_dir.join(LOGLIK_FILE));
    std::fs::write(&ll_path, ll).map_err(|e| Error::io(&ll_path, e))?;
    let mut sizes = vec![0usize; params.n_components];
    for &l in &labels {
        sizes[l] += 1;
    }
    let summary = format!("{} rows into subsets of sizes {:?}", table.n_rows(), sizes);
    t.finish(&cfg.out_dir, summary)
}

pub fn discover(cfg: &PipelineConfig) -> Result<StageOutcome> {
    let mut t = Tracker::new("discover", cfg)?;
    let table = load_features(cfg, &mut t)?;
    let cols = discovery_columns(&table, &cfg.target);
    t.param("target", &cfg.target);
    t.param("prune_threshold", cfg.prune_threshold);
    let dag = discover_lingam(&table.select_columns(&cols)?, Some(&cfg.target), cfg.prune_threshold)?;
    dag.write_edge_list(&t.output(cfg.out_dir.join(DAG_FILE)))?;
    dag.destandardized()
        .write_adjacency(&t.output(cfg.out_dir.join(ADJACENCY_FILE)))?;
    let summary = format!("{} nodes, {} edges", dag.n_nodes(), dag.edge_count());
    t.finish(&cfg.out_dir, summary)
}

fn write_ranking(path: &Path, ranking: &FeatureRanking) -> Result<()> {
    let mut out = String::from("feature,strength\n");
    for (name, s) in ranking.entries() {
        let _ = writeln!(out, "{name},{}", fmt_f64(*s));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn select_features(cfg: &PipelineConfig) -> Result<StageOutcome> {
    let mut t = Tracker::new("select-features", cfg)?;
    let dag_path = cfg.out_dir.join(DAG_FILE);
    t.input("dag", &dag_path);
    let dag = WeightedDag::read(&dag_path)?;
    t.param("k_features", cfg.k_features);
    t.param("strength", "total_effect");
    let ranking = rank_features(&dag, &cfg.target, StrengthMode::TotalEffect)?;
    let k = cfg.k_features.min(ranking.len());
    let selected = select_top_k(&ranking, k)?;
    write_ranking(&t.output(cfg.out_dir.join(RANKING_FILE)), &ranking)?;
    write_lines(&t.output(cfg.out_dir.join(SELECTED_FILE)), &selected)?;
    let summary = format!("selected {}", selected.join(","));
    t.finish(&cfg.out_dir, summary)
}

/// Training pool and held-out test rows, the pool partitioned by subset label.
struct Pools {
    pool: FeatureTable,
    test: FeatureTable,
    subsets: Vec<FeatureTable>,
}

fn build_pools(cfg: &PipelineConfig, table: &FeatureTable, labels_path: &Path) -> Result<Pools> {
    let labels = cluster::read_subsets(labels_path)?;
    let by_id: HashMap<&str, usize> = labels.iter().map(|(id, l)| (id.as_str(), *l)).collect();
    let (pool, test) = split_rows(table, 1.0 - cfg.test_fraction, cfg.seed(SeedName::Split))?;
    let pool_labels = pool
        .row_ids()
        .iter()
        .map(|id| by_id.get(id.as_str()).copied().ok_or_else(|| Error::UnknownRow(id.clone())))
        .collect::<Result<Vec<_>>>()?;
    let n_labels = pool_labels.iter().max().map_or(0, |m| m + 1);
    let subsets = cluster::partition(&pool, &pool_labels, n_labels)
        .into_iter()
        .filter(|s| s.n_rows() > 0)
        .collect();
    Ok(Pools { pool, test, subsets })
}

fn write_counts(path: &Path, runs: &[(&str, usize, &ActiveLearningRun)], n_subsets: usize) -> Result<()> {
    let mut out = String::from("strategy,run");
    for k in 0..n_subsets {
        let _ = write!(out, ",count_{k}");
    }
    out.push('\n');
    for (name, r, run) in runs {
        let _ = write!(out, "{name},{r}");
        for c in run.selection_counts(n_subsets) {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn active_learn(cfg: &PipelineConfig) -> Result<StageOutcome> {
    let mut t = Tracker::new("active-learn", cfg)?;
    let table = load_features(cfg, &mut t)?;
    let features = read_selected(cfg, &mut t)?;
    let labels_path = cfg.subset_labels_path();
    t.input("subset_labels", &labels_path);
    let cols = with_target(&features, &cfg.target);
    let pools = build_pools(cfg, &table, &labels_path)?;

    let global = match &cfg.global {
        Some(path) => {
            t.input("global", path);
            let schema = Schema {
                feature_columns: None,
                ..cfg.schema.clone()
            };
            load_feature_table(path, &schema)?.0
        }
        None => pools.pool.clone(),
    };
    let global_dag = discover_lingam(&global.select_columns(&cols)?, Some(&cfg.target), cfg.prune_threshold)?;

    let seed = cfg.seed(SeedName::Active);
    t.seed = Some(seed);
    for (k, v) in [
        ("batch_size", cfg.batch_size),
        ("n_iter", cfg.n_iter),
        ("n_runs", cfg.n_runs),
        ("n_subsets", pools.subsets.len()),
    ] {
        t.param(k, v);
    }
    t.param("prune_threshold", cfg.prune_threshold);
    t.param("test_fraction", cfg.test_fraction);
    let params_for = |r: usize| ActiveParams {
        batch_size: cfg.batch_size,
        n_iter: cfg.n_iter,
        top_n: cfg.top_n,
        spectrum_mode: cfg.spectrum_mode,
        prune_threshold: cfg.prune_threshold,
        ..ActiveParams::new(cfg.target.clone(), seed.wrapping_add(r as u64))
    };
    let runs = (0..cfg.n_runs)
        .into_par_iter()
        .map(|r| {
            let p = params_for(r);
            let a = active::active_learn(&pools.subsets, &global_dag, &cols, &p)?;
            let b = active::random_baseline(&pools.subsets, &global_dag, &cols, &p)?;
            Ok((a, b))
        })
        .collect::<Result<Vec<_>>>()?;

    write_lines(&t.output(cfg.out_dir.join(TEST_IDS_FILE)), pools.test.row_ids())?;
    global_dag.write_edge_list(&t.output(cfg.out_dir.join(GLOBAL_DAG_FILE)))?;
    let runs_dir = cfg.out_dir.join(RUNS_DIR);
    std::fs::create_dir_all(&runs_dir).map_err(|e| Error::io(&runs_dir, e))?;
    for (r, (a, b)) in runs.iter().enumerate() {
        a.write_csv(&t.output(runs_dir.join(format!("active_{r}.csv"))))?;
        a.write_ids(&t.output(runs_dir.join(format!("active_{r}_ids.txt"))))?;
        b.write_csv(&t.output(runs_dir.join(format!("random_{r}.csv"))))?;
        b.write_ids(&t.output(runs_dir.join(format!("random_{r}_ids.txt"))))?;
    }
    let actives: Vec<ActiveLearningRun> = runs.iter().map(|(a, _)| a.clone()).collect();
    let randoms: Vec<ActiveLearningRun> = runs.iter().map(|(_, b)| b.clone()).collect();
    let sa = active::summarize_runs(&actives)?;
    let sr = active::summarize_runs(&randoms)?;
    sa.write_csv(&t.output(cfg.out_dir.join(ACTIVE_SUMMARY_FILE)))?;
    sr.write_csv(&t.output(cfg.out_dir.join(RANDOM_SUMMARY_FILE)))?;
    let labelled: Vec<(&str, usize, &ActiveLearningRun)> = actives
        .iter()
        .enumerate()
        .map(|(r, a)| ("active", r, a))
        .chain(randoms.iter().enumerate().map(|(r, b)| ("random", r, b)))
        .collect();
    write_counts(&t.output(cfg.out_dir.join(SELECTION_FILE)), &labelled, pools.subsets.len())?;
    actives[0].write_ids(&t.output(cfg.out_dir.join(D_AL_FILE)))?;

    if cfg.accuracy {
        let forest = ForestParams {
            seed: cfg.seed(SeedName::Forest),
            ..cfg.forest
        };
        t.param("forest_trees", forest.n_trees);
        t.param("forest_depth", forest.max_depth);
        t.param("forest_min_leaf", forest.min_leaf);
        t.param("seed.forest", forest.seed);
        let traces = runs
            .par_iter()
            .map(|(a, b)| {
                Ok((
                    accuracy_trace(a, &pools.pool, &pools.test, &features, &cfg.target, &forest)?,
                    accuracy_trace(b, &pools.pool, &pools.test, &features, &cfg.target, &forest)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = String::from("iter,active_mean,random_mean,reference\n");
        for it in 0..cfg.n_iter {
            let a: Vec<f64> = traces.iter().map(|(a, _)| a.per_iteration[it]).collect();
            let b: Vec<f64> = traces.iter().map(|(_, b)| b.per_iteration[it]).collect();
            let _ = writeln!(out, "{it},{},{},{}", fmt_f64(mean(&a)), fmt_f64(mean(&b)), fmt_f64(traces[0].0.reference));
        }
        let path = t.output(cfg.out_dir.join(ACCURACY_FILE));
        std::fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
    }

    let last = cfg.n_iter - 1;
    let summary = format!(
        "final loss active {} random {} over {} runs",
        fmt_f64(sa.mean[last]),
        fmt_f64(sr.mean[last]),
        cfg.n_runs
    );
    t.finish(&cfg.out_dir, summary)
}

pub fn intervene(cfg: &PipelineConfig) -> Result<StageOutcome> {
    let mut t = Tracker::new("intervene", cfg)?;
    let table = load_features(cfg, &mut t)?;
    let features = read_selected(cfg, &mut t)?;
    let ids_path = cfg.out_dir.join(D_AL_FILE);
    t.input("d_al", &ids_path);
    let ids = active::read_ids(&ids_path)?;
    let cols = with_target(&features, &cfg.target);
    let d_al = table.select_ids(&ids)?.select_columns(&cols)?;
    t.param("goal", cfg.goal);
    t.param("propagate", cfg.propagate);
    t.param("prune_threshold", cfg.prune_threshold);
    let dag = discover_lingam(&d_al, Some(&cfg.target), cfg.prune_threshold)?;
    let target_col = d_al.column(&cfg.target)?;
    let below: Vec<usize> = (0..d_al.n_rows()).filter(|&i| target_col[i] < cfg.goal).collect();
    let population = d_al.select_rows(&below);
    let settings = InterventionSettings {
        target: cfg.target.clone(),
        goal: cfg.goal,
        interventable: features.clone(),
        bounds: Some(FeatureBounds::from_table(&table.select_columns(&cols)?)),
    };
    let plans = intervene::plan_population(&population, &dag, &settings)?;
    let intervened = if cfg.propagate {
        intervene::apply_interventions_propagated(&population, &plans, &dag)?
    } else {
        intervene::apply_interventions(&population, &plans)?
    };
    dag.write_edge_list(&t.output(cfg.out_dir.join(SEM_DAG_FILE)))?;
    intervene::write_plans(&t.output(cfg.out_dir.join(PLANS_FILE)), &plans)?;
    write_feature_table(&t.output(cfg.out_dir.join(INTERVENED_FILE)), &intervened)?;
    let clamped = plans.iter().filter(|p| p.clamped).count();
    let summary = format!("{} plans ({} clamped) toward {}", plans.len(), clamped, fmt_f64(cfg.goal));
    t.finish(&cfg.out_dir, summary)
}

fn reference_schema(cfg: &PipelineConfig) -> Schema {
    Schema {
        target_columns: vec![cfg.target.clone()],
        feature_columns: None,
        ..cfg.schema.clone()
    }
}

pub fn match_reference(cfg: &PipelineConfig) -> Result<StageOutcome> {
    let mut t = Tracker::new("match", cfg)?;
    let features = read_selected(cfg, &mut t)?;
    let intervened_path = cfg.out_dir.join(INTERVENED_FILE);
    t.input("intervened", &intervened_path);
    let schema = Schema {
        target_columns: vec![cfg.target.clone()],
        feature_columns: Some(features.clone()),
        ..cfg.schema.clone()
    };
    let (intervened, _) = load_feature_table(&intervened_path, &schema)?;
    let ref_path = cfg.reference_path()?;
    t.input("reference", ref_path);
    let (reference, _) = load_feature_table(ref_path, &reference_schema(cfg))?;
    t.param("knn_k", cfg.knn_k);
    t.param(
        "normalization",
        match cfg.normalization {
            matching::NormalizationSource::Intervened => "intervened",
            matching::NormalizationSource::Pooled => "pooled",
        },
    );
    let results = matching::nearest_in_reference(
        &intervened,
        &reference,
        &features,
        cfg.knn_k,
        cfg.normalization,
        Some(&cfg.target),
    )?;
    matching::write_neighbors(&t.output(cfg.out_dir.join(NEIGHBORS_FILE)), &results)?;
    let summary = format!("{} queries against {} references", results.len(), reference.n_rows());
    t.finish(&cfg.out_dir, summary)
}

fn load_fingerprints(cfg: &PipelineConfig, t: &mut Tracker) -> Result<Option<(FingerprintTable, FingerprintTable)>> {
    match (&cfg.fingerprints, &cfg.reference_fingerprints) {
        (Some(a), Some(b)) => {
            t.input("fingerprints", a);
            t.input("reference_fingerprints", b);
            let width = cfg.schema.fingerprint_width;
            Ok(Some((FingerprintTable::load(a, width)?, FingerprintTable::load(b, width)?)))
        }
        _ => Ok(None),
    }
}

pub fn report(cfg: &PipelineConfig) -> Result<StageOutcome> {
    let mut t = Tracker::new("report", cfg)?;
    let table = load_features(cfg, &mut t)?;
    let plans_path = cfg.out_dir.join(PLANS_FILE);
    let nn_path = cfg.out_dir.join(NEIGHBORS_FILE);
    t.input("plans", &plans_path);
    t.input("neighbors", &nn_path);
    let plans = intervene::read_plans(&plans_path, cfg.goal)?;
    let neighbors = matching::read_neighbors(&nn_path)?;
    let target = table.column(&cfg.target)?;
    let originals: HashMap<String, f64> = table.row_ids().iter().cloned().zip(target).collect();
    let fps = load_fingerprints(cfg, &mut t)?;
    t.param("goal", cfg.goal);
    t.param("histogram_bins", cfg.histogram_bins);
    let rep = matching::intervention_report(
        &plans,
        &neighbors,
        &originals,
        cfg.goal,
        fps.as_ref().map(|(a, b)| FingerprintPair {
            original: a,
            reference: b,
        }),
        cfg.histogram_bins,
    )?;
    let dir = cfg.out_dir.join(REPORT_DIR);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    rep.write(&dir)?;
    for f in ["histogram.csv", "similarity.csv", "successes.csv", "report.txt"] {
        t.output(dir.join(f));
    }
    if let Some((orig, refs)) = &fps {
        let ids_path = cfg.out_dir.join(D_AL_FILE);
        t.input("d_al", &ids_path);
        let d_al: Vec<String> = active::read_ids(&ids_path)?
            .into_iter()
            .filter(|id| orig.get(id).is_some())
            .collect();
        if d_al.len() >= 2 {
            let pca = matching::pca_project(&matching::fingerprint_matrix(orig, &d_al)?, 2)?;
            let mut rows: Vec<(String, String, f64, f64)> = d_al
                .iter()
                .enumerate()
                .map(|(i, id)| (id.clone(), "d_al".to_string(), pca.coordinates[(i, 0)], pca.coordinates[(i, 1)]))
                .collect();
            let matched: Vec<String> = rep
                .matches
                .iter()
                .map(|m| m.reference_id.clone())
                .filter(|id| refs.get(id).is_some())
                .collect();
            if !matched.is_empty() {
                let coords = pca.project(&matching::fingerprint_matrix(refs, &matched)?)?;
                for (i, id) in matched.iter().enumerate() {
                    rows.push((id.clone(), "matched".into(), coords[(i, 0)], coords[(i, 1)]));
                }
            }
            matching::write_coordinates(&t.output(dir.join(PCA_FILE)), &rows)?;
        }
    }
    let summary = format!(
        "{} of {} matched molecules {}",
        rep.successes().len(),
        rep.matches.len(),
        rep.bucket_label()
    );
    t.finish(&cfg.out_dir, summary)
}

/// Writes a synthetic world plus a ready-to-use `pipeline.conf` into the output directory.
pub fn synth(cfg: &PipelineConfig) -> Result<StageOutcome> {
    let mut t = Tracker::new("synth", cfg)?;
    let seed = cfg.seed(SeedName::Synth);
    t.seed = Some(seed);
    t.param("preset", &cfg.synth_preset);
    let (spec, use_true_labels) = match cfg.synth_preset.as_str() {
        "descriptor" => (descriptor_preset(seed), false),
        _ => (heterogeneous_preset(seed), true),
    };
    let world = make_heterogeneous_world(&spec)?;
    let features = FeatureTable::concat(&world.subsets.iter().collect::<Vec<_>>())?;
    let reference_spec = spec.base.clone().with_seed(seed ^ 0x5EED_0000_0000_0001);
    let reference = synth::sample_sem(&reference_spec, SYNTH_REFERENCE_ROWS, "ref_")?;
    let inputs = features.input_names();
    let fp_seed = seed ^ 0xF1_0000_0000;
    let fps = synth::synthetic_fingerprints(&features, &inputs, SYNTH_FINGERPRINT_WIDTH, fp_seed)?;
    let ref_fps = synth::synthetic_fingerprints(&reference, &inputs, SYNTH_FINGERPRINT_WIDTH, fp_seed)?;

    let out = &cfg.out_dir;
    write_feature_table(&t.output(out.join("features.csv")), &features)?;
    write_feature_table(&t.output(out.join("global.csv")), &world.global)?;
    write_feature_table(&t.output(out.join("reference.csv")), &reference)?;
    fps.write(&t.output(out.join("fingerprints.csv")))?;
    ref_fps.write(&t.output(out.join("reference_fingerprints.csv")))?;
    spec.base.write(&t.output(out.join("true_sem.txt")))?;
    world.true_dag.write_edge_list(&t.output(out.join("true_dag.csv")))?;
    let mut labels = Vec::with_capacity(features.n_rows());
    for (k, s) in world.subsets.iter().enumerate() {
        labels.extend(std::iter::repeat_n(k, s.n_rows()));
    }
    cluster::write_subsets(&t.output(out.join("true_subsets.csv")), features.row_ids(), &labels)?;

    let mut conf = KeyValues::new();
    conf.set("features", "features.csv");
    conf.set("global", "global.csv");
    conf.set("reference", "reference.csv");
    conf.set("fingerprints", "fingerprints.csv");
    conf.set("reference_fingerprints", "reference_fingerprints.csv");
    conf.set("fingerprint_width", SYNTH_FINGERPRINT_WIDTH);
    conf.set("target_columns", features.target_names().join(","));
    conf.set("target", &cfg.target);
    if use_true_labels {
        conf.set("subset_labels", "true_subsets.csv");
    }
    conf.set("out_dir", ".");
    conf.set("seed", cfg.master_seed);
    let conf_path = t.output(out.join(SYNTH_CONFIG_FILE));
    std::fs::write(&conf_path, conf.render()).map_err(|e| Error::io(&conf_path, e))?;
    let summary = format!(
        "{} subsets of {} rows, {} global rows, {} reference rows",
        world.subsets.len(),
        spec.rows_per_subset,
        world.global.n_rows(),
        reference.n_rows()
    );
    t.finish(out, summary)
}

/// Distance between two persisted graphs.
pub fn graph_distance(a: &Path, b: &Path, top_n: Option<usize>, mode: SpectrumMode) -> Result<f64> {
    spectral_distance(&WeightedDag::read(a)?, &WeightedDag::read(b)?, top_n, mode)
}

pub type StageFn = fn(&PipelineConfig) -> Result<StageOutcome>;

/// Stages in pipeline order, after `synth`.
pub const PIPELINE: [(&str, StageFn); 7] = [
    ("cluster", cluster),
    ("discover", discover),
    ("select-features", select_features),
    ("active-learn", active_learn),
    ("intervene", intervene),
    ("match", match_reference),
    ("report", report),
];
