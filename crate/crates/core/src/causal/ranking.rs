use super::dag::WeightedDag;
use crate::error::{Error, Result};
use crate::intervene::total_effects;

/// How a feature's strength toward the target is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StrengthMode {
    /// |sum over directed paths of weight products|
    #[default]
    TotalEffect,
    /// |direct edge weight|
    DirectWeight,
}

/// Features sorted by descending strength, ties alphabetical.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRanking {
    entries: Vec<(String, f64)>,
}

impl FeatureRanking {
    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn strength(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|(n, _)| n == name).map(|e| e.1)
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.0.clone()).collect()
    }
}

pub fn rank_features(dag: &WeightedDag, target: &str, mode: StrengthMode) -> Result<FeatureRanking> {
    let t = dag.node_index(target)?;
    let strengths: Vec<f64> = match mode {
        StrengthMode::TotalEffect => {
            let effects = total_effects(dag)?;
            (0..dag.n_nodes()).map(|j| effects.effect(j, t).abs()).collect()
        }
        StrengthMode::DirectWeight => (0..dag.n_nodes()).map(|j| dag.weights()[(t, j)].abs()).collect(),
    };
    let mut entries: Vec<(String, f64)> = dag
        .node_names()
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != t)
        .map(|(j, name)| (name.clone(), strengths[j]))
        .collect();
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(FeatureRanking { entries })
}

pub fn select_top_k(ranking: &FeatureRanking, k: usize) -> Result<Vec<String>> {
    if k == 0 || k > ranking.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} outside 1..={}",
            ranking.len()
        )));
    }
    Ok(ranking.entries[..k].iter().map(|e| e.0.clone()).collect())
}
