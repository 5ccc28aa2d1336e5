//! Causally informed active learning.
//!
//! Each iteration draws `batch_size` fresh rows from every subset, appends them to
//! the current selection, rediscovers the graph and scores it against a reference
//! graph by spectral distance. The best-scoring candidate becomes the new selection.
//! Rows never repeat within a run; samples from losing subsets go back to their pool.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::causal::{discover_lingam, WeightedDag, DEFAULT_PRUNE_THRESHOLD};
use crate::dataio::{fmt_f64, FeatureTable};
use crate::error::{Error, Result};
use crate::graphdist::{spectral_distance, SpectrumMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Commit the candidate with the smallest graph loss.
    Greedy,
    /// Commit a uniformly random candidate (baseline).
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActiveParams {
    /// Rows sampled from each subset per iteration (M).
    pub batch_size: usize,
    pub n_iter: usize,
    pub seed: u64,
    pub target: String,
    pub prune_threshold: f64,
    /// Spectrum length; `None` uses the full node count.
    pub top_n: Option<usize>,
    pub spectrum_mode: SpectrumMode,
}

impl ActiveParams {
    pub fn new(target: impl Into<String>, seed: u64) -> Self {
        Self {
            batch_size: 50,
            n_iter: 20,
            seed,
            target: target.into(),
            prune_threshold: DEFAULT_PRUNE_THRESHOLD,
            top_n: None,
            spectrum_mode: SpectrumMode::SingularValues,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Candidate loss per subset; `inf` where discovery failed.
    pub losses: Vec<f64>,
    pub chosen: usize,
    pub loss: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActiveLearningRun {
    pub strategy: Strategy,
    pub params: ActiveParams,
    /// Growing selection in commit order.
    pub selected_row_ids: Vec<String>,
    pub records: Vec<IterationRecord>,
}

impl ActiveLearningRun {
    pub fn final_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.loss)
    }

    pub fn loss_trajectory(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    /// Selection after `iteration` (0-based) completed.
    pub fn snapshot(&self, iteration: usize) -> &[String] {
        let size = self.records[iteration].size;
        &self.selected_row_ids[..size]
    }

    /// How often each subset was committed.
    pub fn selection_counts(&self, n_subsets: usize) -> Vec<usize> {
        let mut counts = vec![0; n_subsets];
        for r in &self.records {
            counts[r.chosen] += 1;
        }
        counts
    }

    /// `iter,subset,loss_0..loss_{k-1},chosen,size` where `subset` is the committed
    /// subset and `chosen` its loss.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let n_subsets = self.records.first().map_or(0, |r| r.losses.len());
        let mut out = String::from("iter,subset");
        for k in 0..n_subsets {
            let _ = write!(out, ",loss_{k}");
        }
        out.push_str(",chosen,size\n");
        for r in &self.records {
            let _ = write!(out, "{},{}", r.iteration, r.chosen);
            for l in &r.losses {
                let _ = write!(out, ",{}", fmt_f64(*l));
            }
            let _ = writeln!(out, ",{},{}", fmt_f64(r.loss), r.size);
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn write_ids(&self, path: &Path) -> Result<()> {
        let mut out = self.selected_row_ids.join("\n");
        out.push('\n');
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

pub fn read_ids(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

/// Read back the per-iteration records written by [`ActiveLearningRun::write_csv`].
pub fn read_records(path: &Path) -> Result<Vec<IterationRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    reader
        .records()
        .enumerate()
        .map(|(i, rec)| {
            let bad = |msg: &str| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                msg: msg.to_string(),
            };
            let rec = rec.map_err(|e| bad(&e.to_string()))?;
            let n = rec.len();
            if n < 5 {
                return Err(bad("too few fields"));
            }
            let int = |k: usize| rec[k].parse::<usize>().map_err(|_| bad("bad integer"));
            let num = |k: usize| rec[k].parse::<f64>().map_err(|_| bad("bad number"));
            Ok(IterationRecord {
                iteration: int(0)?,
                chosen: int(1)?,
                losses: (2..n - 2).map(num).collect::<Result<_>>()?,
                loss: num(n - 2)?,
                size: int(n - 1)?,
            })
        })
        .collect()
}

struct Candidate {
    rows: Vec<usize>,
    loss: f64,
}

fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn run(
    subsets: &[FeatureTable],
    global_graph: &WeightedDag,
    features: &[String],
    params: &ActiveParams,
    strategy: Strategy,
) -> Result<ActiveLearningRun> {
    let m = params.batch_size;
    if m == 0 || params.n_iter == 0 {
        return Err(Error::InvalidArgument("batch size and iteration count must be positive".into()));
    }
    if subsets.is_empty() {
        return Err(Error::InvalidArgument("no data subsets".into()));
    }
    if !features.contains(&params.target) {
        return Err(Error::InvalidArgument(format!("target `{}` not among the features", params.target)));
    }
    let tables = subsets
        .iter()
        .map(|s| s.select_columns(features))
        .collect::<Result<Vec<_>>>()?;
    let needed = m * params.n_iter;
    for t in &tables {
        if t.n_rows() < needed {
            return Err(Error::InsufficientData {
                rows: t.n_rows(),
                required: needed,
            });
        }
    }
    let mut pools: Vec<Vec<usize>> = tables.iter().map(|t| (0..t.n_rows()).collect()).collect();
    let mut selected: Option<FeatureTable> = None;
    let mut records = Vec::with_capacity(params.n_iter);

    for it in 0..params.n_iter {
        let candidates: Vec<Candidate> = (0..tables.len())
            .into_par_iter()
            .map(|k| {
                let mut rng = substream(params.seed, ((it as u64) << 16) | k as u64);
                let picks = sample(&mut rng, pools[k].len(), m).into_vec();
                let rows: Vec<usize> = picks.into_iter().map(|p| pools[k][p]).collect();
                let fresh = tables[k].select_rows(&rows);
                let data = match &selected {
                    Some(s) => FeatureTable::concat(&[s, &fresh]),
                    None => Ok(fresh),
                };
                let loss = data
                    .and_then(|d| discover_lingam(&d, Some(&params.target), params.prune_threshold))
                    .and_then(|g| spectral_distance(&g, global_graph, params.top_n, params.spectrum_mode))
                    .unwrap_or(f64::INFINITY);
                Candidate {
                    rows,
                    loss: if loss.is_nan() { f64::INFINITY } else { loss },
                }
            })
            .collect();
        let losses: Vec<f64> = candidates.iter().map(|c| c.loss).collect();
        let chosen = match strategy {
            Strategy::Greedy => losses
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |best, (k, &l)| if l < best.1 { (k, l) } else { best })
                .0,
            Strategy::Random => substream(params.seed, u64::MAX - it as u64).random_range(0..tables.len()),
        };
        let rows = &candidates[chosen].rows;
        let fresh = tables[chosen].select_rows(rows);
        selected = Some(match selected {
            Some(s) => FeatureTable::concat(&[&s, &fresh])?,
            None => fresh,
        });
        pools[chosen].retain(|r| !rows.contains(r));
        records.push(IterationRecord {
            iteration: it,
            loss: losses[chosen],
            losses,
            chosen,
            size: (it + 1) * m,
        });
    }
    Ok(ActiveLearningRun {
        strategy,
        params: params.clone(),
        selected_row_ids: selected.map(|s| s.row_ids().to_vec()).unwrap_or_default(),
        records,
    })
}

/// Greedy selection; `features` must include the target.
pub fn active_learn(
    subsets: &[FeatureTable],
    global_graph: &WeightedDag,
    features: &[String],
    params: &ActiveParams,
) -> Result<ActiveLearningRun> {
    run(subsets, global_graph, features, params, Strategy::Greedy)
}

/// Same sampling streams as [`active_learn`], but the committed subset is random.
pub fn random_baseline(
    subsets: &[FeatureTable],
    global_graph: &WeightedDag,
    features: &[String],
    params: &ActiveParams,
) -> Result<ActiveLearningRun> {
    run(subsets, global_graph, features, params, Strategy::Random)
}

/// Per-iteration mean and sample standard deviation of the committed loss.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl RunSummary {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("iter,mean,std\n");
        for (i, (m, s)) in self.mean.iter().zip(&self.std).enumerate() {
            let _ = writeln!(out, "{i},{},{}", fmt_f64(*m), fmt_f64(*s));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

pub fn summarize_runs(runs: &[ActiveLearningRun]) -> Result<RunSummary> {
    let trajectories: Vec<Vec<f64>> = runs.iter().map(|r| r.loss_trajectory()).collect();
    summarize_trajectories(&trajectories)
}

pub fn summarize_trajectories(trajectories: &[Vec<f64>]) -> Result<RunSummary> {
    let first = trajectories
        .first()
        .ok_or_else(|| Error::InvalidArgument("no runs to summarize".into()))?;
    if trajectories.iter().any(|t| t.len() != first.len()) {
        return Err(Error::InvalidArgument("runs differ in iteration count".into()));
    }
    let n = trajectories.len() as f64;
    let mut mean = Vec::with_capacity(first.len());
    let mut std = Vec::with_capacity(first.len());
    for i in 0..first.len() {
        let m = trajectories.iter().map(|t| t[i]).sum::<f64>() / n;
        let s = if trajectories.len() < 2 {
            0.0
        } else {
            (trajectories.iter().map(|t| (t[i] - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        mean.push(m);
        std.push(s);
    }
    Ok(RunSummary { mean, std })
}
