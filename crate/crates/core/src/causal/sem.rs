use nalgebra::{DMatrix, DVector};

use super::dag::{WeightScale, WeightedDag};
use crate::dataio::FeatureTable;
use crate::error::{Error, Result};
use crate::linalg::least_squares;

/// Refit the coefficients of a fixed structure by least squares of each node on its parents.
///
/// Fitting happens on columns z-scored with this table's statistics; the result keeps
/// the structure's causal order and records per-node residual variance in raw units.
pub fn fit_sem_weights(table: &FeatureTable, structure: &WeightedDag) -> Result<WeightedDag> {
    let names = structure.node_names().to_vec();
    let sub = table.select_columns(&names)?;
    let n = sub.n_rows();
    if n < 2 {
        return Err(Error::InsufficientData { rows: n, required: 2 });
    }
    let x = sub.values();
    let (center, scale) = super::column_stats(x);
    for (j, s) in scale.iter().enumerate() {
        if !(*s > 0.0) {
            return Err(Error::DegenerateFeature(names[j].clone()));
        }
    }
    let d = names.len();
    let z = DMatrix::from_fn(n, d, |i, j| (x[(i, j)] - center[j]) / scale[j]);
    let mut weights = DMatrix::zeros(d, d);
    let mut resid_var = vec![0.0; d];
    let mut ridge = Vec::new();
    for i in 0..d {
        let parents = structure.parents(i);
        let y: DVector<f64> = z.column(i).into_owned();
        let design = z.select_columns(&parents);
        let (coef, used_ridge) = least_squares(&design, &y);
        if used_ridge {
            ridge.push(names[i].clone());
        }
        for (k, &p) in parents.iter().enumerate() {
            weights[(i, p)] = coef[k];
        }
        let resid = &y - &design * &coef;
        resid_var[i] = resid.norm_squared() / (n as f64 - 1.0) * scale[i] * scale[i];
    }
    Ok(structure
        .with_weights(weights)?
        .with_standardization(WeightScale::Standardized, center, scale)
        .with_fit_report(resid_var, ridge))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn exact_linear_relation() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| {
            let x = (i as f64 * 0.37).sin() * 3.0;
            vec![x, 2.0 * x]
        }).collect();
        let ids = (0..20).map(|i| i.to_string()).collect();
        let t = FeatureTable::from_rows(ids, names(&["x", "y"]), &rows, vec![]).unwrap();
        let s = WeightedDag::from_edges(names(&["x", "y"]), &[("y", "x", 1.0)]).unwrap();
        let fit = fit_sem_weights(&t, &s).unwrap();
        assert!((fit.destandardized().weight("y", "x").unwrap() - 2.0).abs() < 1e-9);
        assert!(fit.ridge_nodes().is_empty());
        // root node: residual variance is the sample variance
        let col = t.column("x").unwrap();
        let mean = col.iter().sum::<f64>() / 20.0;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 19.0;
        assert!((fit.residual_variance().unwrap()[0] - var).abs() < 1e-12);
        assert!(fit.residual_variance().unwrap()[1] < 1e-20);
    }

    #[test]
    fn collinear_parents_are_flagged() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| {
            let a = (i as f64).cos();
            vec![a, a * 2.0, 3.0 * a + 0.01 * (i as f64).sin()]
        }).collect();
        let ids = (0..30).map(|i| i.to_string()).collect();
        let t = FeatureTable::from_rows(ids, names(&["a", "b", "c"]), &rows, vec![]).unwrap();
        let s = WeightedDag::from_edges(names(&["a", "b", "c"]), &[("c", "a", 1.0), ("c", "b", 1.0)]).unwrap();
        let fit = fit_sem_weights(&t, &s).unwrap();
        assert_eq!(fit.ridge_nodes(), ["c"]);
        assert!(fit.weights().iter().all(|w| w.is_finite()));
    }
}
