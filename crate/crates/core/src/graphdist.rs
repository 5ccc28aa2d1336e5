//! Adjacency spectral distance between weighted graphs.
//!
//! The spectrum of a directed weighted adjacency is taken to be its singular values:
//! a DAG's eigenvalues are all zero, which would make every pair of DAGs equidistant.
//! Eigenvalue moduli are available for comparison.

use std::collections::BTreeSet;

use nalgebra::DMatrix;

use crate::causal::WeightedDag;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpectrumMode {
    #[default]
    SingularValues,
    EigenvalueModuli,
}

/// Descending spectrum of fixed length (zero padded).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    values: Vec<f64>,
}

impl Spectrum {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A permuted triangular matrix has its diagonal as eigenvalues; general solvers
/// only approximate the zero eigenvalues of such (nilpotent-plus-diagonal) matrices.
fn is_acyclic(m: &DMatrix<f64>) -> bool {
    let n = m.nrows();
    let mut indegree: Vec<usize> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i && m[(i, j)] != 0.0).count())
        .collect();
    let mut ready: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut seen = 0;
    while let Some(j) = ready.pop() {
        seen += 1;
        for i in 0..n {
            if i != j && m[(i, j)] != 0.0 {
                indegree[i] -= 1;
                if indegree[i] == 0 {
                    ready.push(i);
                }
            }
        }
    }
    seen == n
}

fn matrix_spectrum(m: &DMatrix<f64>, top_n: usize, mode: SpectrumMode) -> Spectrum {
    let mut values: Vec<f64> = if m.is_empty() {
        Vec::new()
    } else {
        match mode {
            SpectrumMode::SingularValues => m.singular_values().iter().copied().collect(),
            SpectrumMode::EigenvalueModuli => {
                if is_acyclic(m) {
                    m.diagonal().iter().map(|v| v.abs()).collect()
                } else {
                    m.complex_eigenvalues().iter().map(|c| c.norm()).collect()
                }
            }
        }
    };
    values.sort_by(|a, b| b.total_cmp(a));
    values.resize(top_n, 0.0);
    Spectrum { values }
}

/// Top-`top_n` spectrum of the weight matrix.
pub fn spectrum(dag: &WeightedDag, top_n: usize, mode: SpectrumMode) -> Result<Spectrum> {
    if top_n == 0 {
        return Err(Error::InvalidArgument("top_n must be at least 1".into()));
    }
    Ok(matrix_spectrum(dag.weights(), top_n, mode))
}

/// Embed a graph's weights into the matrix indexed by `universe`.
fn aligned(dag: &WeightedDag, universe: &[&str]) -> DMatrix<f64> {
    let pos: Vec<usize> = dag
        .node_names()
        .iter()
        .map(|n| universe.iter().position(|u| u == n).expect("name in universe"))
        .collect();
    let mut m = DMatrix::zeros(universe.len(), universe.len());
    for i in 0..dag.n_nodes() {
        for j in 0..dag.n_nodes() {
            m[(pos[i], pos[j])] = dag.weights()[(i, j)];
        }
    }
    m
}

/// sqrt(sum_i (s1_i - s2_i)^2) over the top-`top_n` spectra of the name-aligned graphs.
///
/// `top_n = None` uses every node of the aligned universe. Graphs with no node
/// name in common cannot be aligned.
pub fn spectral_distance(
    g1: &WeightedDag,
    g2: &WeightedDag,
    top_n: Option<usize>,
    mode: SpectrumMode,
) -> Result<f64> {
    let s1: BTreeSet<&str> = g1.node_names().iter().map(String::as_str).collect();
    let s2: BTreeSet<&str> = g2.node_names().iter().map(String::as_str).collect();
    if !s1.is_empty() && !s2.is_empty() && s1.is_disjoint(&s2) {
        return Err(Error::NodeMismatch);
    }
    let universe: Vec<&str> = s1.union(&s2).copied().collect();
    let n = top_n.unwrap_or(universe.len().max(1));
    if n == 0 {
        return Err(Error::InvalidArgument("top_n must be at least 1".into()));
    }
    let a = matrix_spectrum(&aligned(g1, &universe), n, mode);
    let b = matrix_spectrum(&aligned(g2, &universe), n, mode);
    Ok(spectrum_distance(&a, &b))
}

pub fn spectrum_distance(a: &Spectrum, b: &Spectrum) -> f64 {
    a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn edge(w: f64) -> WeightedDag {
        WeightedDag::from_edges(names(&["a", "b"]), &[("b", "a", w)]).unwrap()
    }

    #[test]
    fn empty_graph_spectrum() {
        let g = WeightedDag::from_edges(names(&["a", "b", "c"]), &[]).unwrap();
        let s = spectrum(&g, 3, SpectrumMode::SingularValues).unwrap();
        assert_eq!(s.values(), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn single_edge_spectrum() {
        let s = spectrum(&edge(2.0), 2, SpectrumMode::SingularValues).unwrap();
        assert!((s.values()[0] - 2.0).abs() < 1e-14);
        assert!(s.values()[1].abs() < 1e-14);
        // a DAG's eigenvalues are all zero
        let e = spectrum(&edge(2.0), 2, SpectrumMode::EigenvalueModuli).unwrap();
        assert!(e.values().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn two_cycle_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let s = matrix_spectrum(&m, 2, SpectrumMode::SingularValues);
        assert!((s.values()[0] - 1.0).abs() < 1e-14 && (s.values()[1] - 1.0).abs() < 1e-14);
        let e = matrix_spectrum(&m, 2, SpectrumMode::EigenvalueModuli);
        assert!((e.values()[0] - 1.0).abs() < 1e-12 && (e.values()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dag_eigenvalues_are_exactly_zero() {
        let m = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.7, 0.0, 0.0, 0.3, -1.2, 0.0]);
        let e = matrix_spectrum(&m, 3, SpectrumMode::EigenvalueModuli);
        assert_eq!(e.values(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn edge_weight_distance() {
        let d = spectral_distance(&edge(1.0), &edge(2.0), Some(2), SpectrumMode::SingularValues).unwrap();
        assert!((d - 1.0).abs() < 1e-14);
        assert_eq!(
            spectral_distance(&edge(1.0), &edge(1.0), None, SpectrumMode::SingularValues).unwrap(),
            0.0
        );
    }

    #[test]
    fn padding_and_mismatch() {
        let small = edge(1.0);
        let big = WeightedDag::from_edges(names(&["a", "b", "c"]), &[("b", "a", 1.0)]).unwrap();
        assert!(spectral_distance(&small, &big, None, SpectrumMode::SingularValues).unwrap() < 1e-14);
        let other = WeightedDag::from_edges(names(&["p", "q"]), &[]).unwrap();
        assert!(matches!(
            spectral_distance(&small, &other, None, SpectrumMode::SingularValues),
            Err(Error::NodeMismatch)
        ));
        assert!(spectrum(&small, 0, SpectrumMode::SingularValues).is_err());
    }
}
