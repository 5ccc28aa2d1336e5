use nalgebra::DMatrix;

use super::FeatureTable;
use crate::error::{Error, Result};

/// Per-column z-scoring with sample (n - 1) standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    columns: Vec<String>,
    mean: Vec<f64>,
    std: Vec<f64>,
}

pub(crate) fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

pub fn fit_normalizer(table: &FeatureTable, columns: &[String]) -> Result<Normalizer> {
    if table.n_rows() < 2 {
        return Err(Error::InsufficientData {
            rows: table.n_rows(),
            required: 2,
        });
    }
    let mut mean = Vec::with_capacity(columns.len());
    let mut std = Vec::with_capacity(columns.len());
    for name in columns {
        let j = table.column_index(name)?;
        let (m, s) = mean_std(table.values().column(j).iter().copied());
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::DegenerateFeature(name.clone()));
        }
        mean.push(m);
        std.push(s);
    }
    Ok(Normalizer {
        columns: columns.to_vec(),
        mean,
        std,
    })
}

impl Normalizer {
    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    fn locate(&self, table: &FeatureTable) -> Result<Vec<usize>> {
        self.columns
            .iter()
            .map(|c| table.column_index(c))
            .collect::<Result<Vec<_>>>()
            .map_err(|_| Error::ColumnMismatch {
                expected: self.columns.join(","),
                found: table.feature_names().join(","),
            })
    }

    fn map(&self, table: &FeatureTable, f: impl Fn(f64, f64, f64) -> f64) -> Result<FeatureTable> {
        let idx = self.locate(table)?;
        let mut values: DMatrix<f64> = table.values().clone();
        for (k, &j) in idx.iter().enumerate() {
            for v in values.column_mut(j).iter_mut() {
                *v = f(*v, self.mean[k], self.std[k]);
            }
        }
        table.with_values(values)
    }

    /// z = (x - mean) / std on the fitted columns; other columns pass through.
    pub fn apply(&self, table: &FeatureTable) -> Result<FeatureTable> {
        self.map(table, |x, m, s| (x - m) / s)
    }

    pub fn invert(&self, table: &FeatureTable) -> Result<FeatureTable> {
        self.map(table, |z, m, s| z * s + m)
    }

    /// Normalize one value vector laid out in `self.columns()` order.
    pub fn apply_slice(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn single(values: &[f64]) -> FeatureTable {
        let rows: Vec<Vec<f64>> = values.iter().map(|&v| vec![v]).collect();
        let ids = (0..values.len()).map(|i| i.to_string()).collect();
        FeatureTable::from_rows(ids, vec!["f".into()], &rows, vec![]).unwrap()
    }

    #[test]
    fn hand_values() {
        let t = single(&[1.0, 2.0, 3.0]);
        let n = fit_normalizer(&t, &["f".into()]).unwrap();
        assert_eq!(n.mean(), [2.0]);
        assert_eq!(n.std(), [1.0]);
        let z = n.apply(&t).unwrap();
        assert_eq!(z.column("f").unwrap(), vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn constant_column_is_degenerate() {
        let t = single(&[5.0, 5.0, 5.0]);
        assert!(matches!(
            fit_normalizer(&t, &["f".into()]),
            Err(Error::DegenerateFeature(f)) if f == "f"
        ));
    }

    #[test]
    fn column_mismatch() {
        let t = single(&[1.0, 2.0]);
        let n = fit_normalizer(&t, &["f".into()]).unwrap();
        let other = FeatureTable::from_rows(
            vec!["a".into()],
            vec!["g".into()],
            &[vec![1.0]],
            vec![],
        )
        .unwrap();
        assert!(matches!(n.apply(&other), Err(Error::ColumnMismatch { .. })));
    }

    #[test]
    fn seeded_standard_normal() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1000);
        let vals: Vec<f64> = (0..1000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = fit_normalizer(&single(&vals), &["f".into()]).unwrap();
        // frozen from the fixed seed
        assert!((n.mean()[0] - FROZEN_MEAN).abs() < 1e-12, "{}", n.mean()[0]);
        assert!((n.std()[0] - FROZEN_STD).abs() < 1e-12, "{}", n.std()[0]);
        assert!(n.mean()[0].abs() < 0.15);
        assert!((0.85..=1.15).contains(&n.std()[0]));
    }
    const FROZEN_MEAN: f64 = 0.049627299369464355;
    const FROZEN_STD: f64 = 0.9716934760514171;

    proptest! {
        #[test]
        fn round_trip_identity(vals in proptest::collection::vec(-1e6f64..1e6, 3..50)) {
            let t = single(&vals);
            if let Ok(n) = fit_normalizer(&t, &["f".into()]) {
                let z = n.apply(&t).unwrap();
                let mean: f64 = z.column("f").unwrap().iter().sum::<f64>() / vals.len() as f64;
                prop_assert!(mean.abs() < 1e-10);
                let back = n.invert(&z).unwrap();
                for (a, b) in vals.iter().zip(back.column("f").unwrap()) {
                    prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
                }
            }
        }
    }
}
