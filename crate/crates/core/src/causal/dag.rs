use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::dataio::fmt_f64;
use crate::error::{Error, Result};

/// Whether edge weights act on z-scored or on raw columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightScale {
    Standardized,
    Raw,
}

/// Weighted adjacency over named nodes. `weights[(i, j)]` is the coefficient of
/// parent `j` in the equation of child `i`, so edge `j -> i`.
///
/// Construction always checks acyclicity; `causal_order` lists every node so that
/// parents precede children.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDag {
    node_names: Vec<String>,
    weights: DMatrix<f64>,
    causal_order: Vec<usize>,
    scale_kind: WeightScale,
    center: Vec<f64>,
    scale: Vec<f64>,
    residual_variance: Option<Vec<f64>>,
    ridge_nodes: Vec<String>,
}

impl WeightedDag {
    /// Raw-scale DAG with zero centers and unit scales.
    pub fn new(node_names: Vec<String>, weights: DMatrix<f64>) -> Result<Self> {
        let n = node_names.len();
        if weights.nrows() != n || weights.ncols() != n {
            return Err(Error::InvalidArgument(format!(
                "{n} nodes but a {}x{} weight matrix",
                weights.nrows(),
                weights.ncols()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for name in &node_names {
            if !seen.insert(name) {
                return Err(Error::InvalidArgument(format!("duplicate node `{name}`")));
            }
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Numeric("non-finite edge weight".into()));
        }
        let causal_order = topological_order(&weights)?;
        Ok(Self {
            node_names,
            weights,
            causal_order,
            scale_kind: WeightScale::Raw,
            center: vec![0.0; n],
            scale: vec![1.0; n],
            residual_variance: None,
            ridge_nodes: Vec::new(),
        })
    }

    /// Build from `(child, parent, weight)` triples.
    pub fn from_edges(node_names: Vec<String>, edges: &[(&str, &str, f64)]) -> Result<Self> {
        let n = node_names.len();
        let mut weights = DMatrix::zeros(n, n);
        let find = |name: &str| {
            node_names
                .iter()
                .position(|x| x == name)
                .ok_or_else(|| Error::UnknownNode(name.to_string()))
        };
        for &(child, parent, w) in edges {
            weights[(find(child)?, find(parent)?)] = w;
        }
        Self::new(node_names, weights)
    }

    /// Keep an externally determined order (it must be consistent with the weights).
    pub(crate) fn with_order(mut self, order: Vec<usize>) -> Result<Self> {
        let mut pos = vec![usize::MAX; self.n_nodes()];
        for (p, &i) in order.iter().enumerate() {
            pos[i] = p;
        }
        if order.len() != self.n_nodes() || pos.contains(&usize::MAX) {
            return Err(Error::InvalidArgument("order is not a permutation".into()));
        }
        for i in 0..self.n_nodes() {
            for j in 0..self.n_nodes() {
                if self.weights[(i, j)] != 0.0 && pos[j] >= pos[i] {
                    return Err(Error::Cyclic);
                }
            }
        }
        self.causal_order = order;
        Ok(self)
    }

    pub(crate) fn with_standardization(
        mut self,
        scale_kind: WeightScale,
        center: Vec<f64>,
        scale: Vec<f64>,
    ) -> Self {
        self.scale_kind = scale_kind;
        self.center = center;
        self.scale = scale;
        self
    }

    pub(crate) fn with_fit_report(mut self, residual_variance: Vec<f64>, ridge: Vec<String>) -> Self {
        self.residual_variance = Some(residual_variance);
        self.ridge_nodes = ridge;
        self
    }

    pub fn n_nodes(&self) -> usize {
        self.node_names.len()
    }

    pub fn node_names(&self) -> &[String] {
        &self.node_names
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn causal_order(&self) -> &[usize] {
        &self.causal_order
    }

    pub fn causal_order_names(&self) -> Vec<&str> {
        self.causal_order
            .iter()
            .map(|&i| self.node_names[i].as_str())
            .collect()
    }

    pub fn scale_kind(&self) -> WeightScale {
        self.scale_kind
    }

    /// Column means used to center data before applying the weights.
    pub fn center(&self) -> &[f64] {
        &self.center
    }

    /// Column standard deviations (all ones on raw-scale graphs).
    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    /// Per-node residual variance in raw units, when weights came from a refit.
    pub fn residual_variance(&self) -> Option<&[f64]> {
        self.residual_variance.as_deref()
    }

    /// Nodes whose refit needed the ridge fallback.
    pub fn ridge_nodes(&self) -> &[String] {
        &self.ridge_nodes
    }

    pub fn node_index(&self, name: &str) -> Result<usize> {
        self.node_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownNode(name.to_string()))
    }

    pub fn weight(&self, child: &str, parent: &str) -> Result<f64> {
        Ok(self.weights[(self.node_index(child)?, self.node_index(parent)?)])
    }

    pub fn parents(&self, i: usize) -> Vec<usize> {
        (0..self.n_nodes())
            .filter(|&j| self.weights[(i, j)] != 0.0)
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.weights.iter().filter(|w| **w != 0.0).count()
    }

    /// Weights permuted into causal order; strictly lower triangular for a DAG.
    pub fn ordered_weights(&self) -> DMatrix<f64> {
        let o = &self.causal_order;
        DMatrix::from_fn(self.n_nodes(), self.n_nodes(), |a, b| self.weights[(o[a], o[b])])
    }

    /// True when the permuted matrix has an exactly zero upper triangle and diagonal.
    pub fn is_acyclic_in_order(&self) -> bool {
        let p = self.ordered_weights();
        (0..p.nrows()).all(|a| (a..p.ncols()).all(|b| p[(a, b)] == 0.0))
    }

    /// True when nothing depends on `node`.
    pub fn is_sink(&self, node: usize) -> bool {
        self.weights.column(node).iter().all(|w| *w == 0.0)
    }

    /// Convert standardized weights back to raw units: w_raw = w * scale_child / scale_parent.
    pub fn destandardized(&self) -> WeightedDag {
        if self.scale_kind == WeightScale::Raw {
            return self.clone();
        }
        let n = self.n_nodes();
        let weights = DMatrix::from_fn(n, n, |i, j| {
            self.weights[(i, j)] * self.scale[i] / self.scale[j]
        });
        WeightedDag {
            weights,
            scale_kind: WeightScale::Raw,
            scale: vec![1.0; n],
            ..self.clone()
        }
    }

    /// Same structure with different weights on the same support.
    pub(crate) fn with_weights(&self, weights: DMatrix<f64>) -> Result<WeightedDag> {
        let mut out = self.clone();
        out.weights = weights;
        let order = self.causal_order.clone();
        out.with_order(order)
    }

    /// Line-oriented edge list with a commented header.
    pub fn write_edge_list(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let _ = writeln!(out, "# nodes = {}", self.node_names.join(","));
        let _ = writeln!(out, "# order = {}", self.causal_order_names().join(","));
        let scale = match self.scale_kind {
            WeightScale::Standardized => "standardized",
            WeightScale::Raw => "raw",
        };
        let _ = writeln!(out, "# scale = {scale}");
        let join = |v: &[f64]| v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(",");
        let _ = writeln!(out, "# center = {}", join(&self.center));
        let _ = writeln!(out, "# spread = {}", join(&self.scale));
        out.push_str("child,parent,weight\n");
        for &i in &self.causal_order {
            for &j in &self.causal_order {
                let w = self.weights[(i, j)];
                if w != 0.0 {
                    let _ = writeln!(out, "{},{},{}", self.node_names[i], self.node_names[j], fmt_f64(w));
                }
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Dense `child x parent` matrix with node names on both axes.
    pub fn write_adjacency(&self, path: &Path) -> Result<()> {
        let mut out = String::from("child");
        for name in &self.node_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (i, name) in self.node_names.iter().enumerate() {
            out.push_str(name);
            for j in 0..self.n_nodes() {
                out.push(',');
                out.push_str(&fmt_f64(self.weights[(i, j)]));
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Reads either format written above. The `#` header lines of an edge list are optional.
    pub fn read(path: &Path) -> Result<WeightedDag> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |line: usize, msg: &str| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: msg.to_string(),
        };
        let first = text.lines().next().unwrap_or_default();
        if first.starts_with("child,") && !first.starts_with("child,parent,weight") {
            return read_dense(&text, path);
        }
        let mut nodes: Option<Vec<String>> = None;
        let mut order_names: Option<Vec<String>> = None;
        let mut scale_kind = WeightScale::Raw;
        let mut center = None;
        let mut spread = None;
        let mut edges = Vec::new();
        let nums = |s: &str, line: usize| -> Result<Vec<f64>> {
            s.split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|_| bad(line, "bad number")))
                .collect()
        };
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line == "child,parent,weight" {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let (k, v) = rest.split_once('=').ok_or_else(|| bad(lineno + 1, "bad header"))?;
                let v = v.trim();
                let names = || v.split(',').map(|s| s.trim().to_string()).collect::<Vec<_>>();
                match k.trim() {
                    "nodes" => nodes = Some(names()),
                    "order" => order_names = Some(names()),
                    "scale" if v == "standardized" => scale_kind = WeightScale::Standardized,
                    "scale" => scale_kind = WeightScale::Raw,
                    "center" => center = Some(nums(v, lineno + 1)?),
                    "spread" => spread = Some(nums(v, lineno + 1)?),
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
        // without a `# nodes` header, nodes appear in first-mention order
        let nodes = nodes.unwrap_or_else(|| {
            let mut seen: Vec<String> = Vec::new();
            for (c, p, _) in &edges {
                for name in [p, c] {
                    if !seen.contains(name) {
                        seen.push(name.clone());
                    }
                }
            }
            seen
        });
        let refs: Vec<(&str, &str, f64)> = edges
            .iter()
            .map(|(c, p, w)| (c.as_str(), p.as_str(), *w))
            .collect();
        let mut dag = WeightedDag::from_edges(nodes.clone(), &refs)?;
        if let Some(order) = order_names {
            let idx = order
                .iter()
                .map(|n| dag.node_index(n))
                .collect::<Result<Vec<_>>>()?;
            dag = dag.with_order(idx)?;
        }
        let n = nodes.len();
        let center = center.unwrap_or_else(|| vec![0.0; n]);
        let spread = spread.unwrap_or_else(|| vec![1.0; n]);
        if center.len() != n || spread.len() != n {
            return Err(bad(1, "standardization length mismatch"));
        }
        Ok(dag.with_standardization(scale_kind, center, spread))
    }
}

fn read_dense(text: &str, path: &Path) -> Result<WeightedDag> {
    let bad = |line: usize, msg: &str| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.to_string(),
    };
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .unwrap_or_default()
        .split(',')
        .skip(1)
        .map(|s| s.trim().to_string())
        .collect();
    let n = header.len();
    let mut weights = DMatrix::zeros(n, n);
    for (i, line) in lines.enumerate() {
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if i >= n || parts.len() != n + 1 || parts[0] != header[i] {
            return Err(bad(i + 2, "malformed adjacency row"));
        }
        for j in 0..n {
            weights[(i, j)] = parts[j + 1].parse().map_err(|_| bad(i + 2, "bad weight"))?;
        }
    }
    WeightedDag::new(header, weights)
}

/// Kahn's algorithm, always releasing the lowest ready index first.
fn topological_order(weights: &DMatrix<f64>) -> Result<Vec<usize>> {
    let n = weights.nrows();
    let mut indegree: Vec<usize> = (0..n)
        .map(|i| (0..n).filter(|&j| weights[(i, j)] != 0.0).count())
        .collect();
    let mut done = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let next = (0..n)
            .find(|&i| !done[i] && indegree[i] == 0)
            .ok_or(Error::Cyclic)?;
        done[next] = true;
        order.push(next);
        for (child, deg) in indegree.iter_mut().enumerate() {
            if weights[(child, next)] != 0.0 {
                *deg -= 1;
            }
        }
    }
    Ok(order)
}
