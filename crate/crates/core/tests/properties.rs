mod common;

use causal_al::causal::{discover_lingam, WeightedDag, DEFAULT_PRUNE_THRESHOLD};
use causal_al::cluster::{fit_gmm, GmmParams};
use causal_al::dataio::Fingerprint;
use causal_al::graphdist::{spectral_distance, SpectrumMode};
use causal_al::intervene::{predict_target_sem, propagate_intervention, total_effects};
use causal_al::matching::{pca_project, tanimoto};
use causal_al::regress::{fit_forest, r2_score, ForestParams};
use common::{node_names, permuted, random_dag, random_weights, rng, sample_linear, table_from};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn strictly_lower_in_order(g: &WeightedDag) -> bool {
    let b = g.ordered_weights();
    (0..b.nrows()).all(|i| (i..b.ncols()).all(|j| b[(i, j)] == 0.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn discovery_returns_dag_with_sink_target(seed in any::<u64>(), d in 2usize..7, target in 0usize..7) {
        let mut r = rng(seed);
        let b = random_weights(&mut r, d, 0.5);
        let x = sample_linear(&mut r, &b, 200, &vec![1.0; d]);
        let names = node_names(d);
        let target = names[target % d].clone();
        let g = discover_lingam(&table_from(names, x, vec![]), Some(&target), DEFAULT_PRUNE_THRESHOLD).unwrap();
        prop_assert!(strictly_lower_in_order(&g));
        let t = g.node_index(&target).unwrap();
        prop_assert!(g.weights().column(t).iter().all(|&w| w == 0.0));
    }

    #[test]
    fn spectral_distance_is_a_pseudometric(seed in any::<u64>(), n in 1usize..9) {
        let mut r = rng(seed);
        let (a, b, c) = (random_dag(&mut r, n, 0.5), random_dag(&mut r, n, 0.5), random_dag(&mut r, n, 0.5));
        let d = |x: &WeightedDag, y: &WeightedDag| spectral_distance(x, y, None, SpectrumMode::SingularValues).unwrap();
        prop_assert!(d(&a, &b) >= 0.0);
        prop_assert!((d(&a, &b) - d(&b, &a)).abs() <= 1e-12);
        prop_assert!(d(&a, &a) <= 1e-12);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-10);
        let perm: Vec<usize> = (0..n).rev().collect();
        prop_assert!((d(&permuted(&a, &perm), &b) - d(&a, &b)).abs() <= 1e-10);
    }

    #[test]
    fn eigen_mode_is_also_symmetric(seed in any::<u64>(), n in 1usize..9) {
        let mut r = rng(seed);
        let (a, b) = (random_dag(&mut r, n, 0.5), random_dag(&mut r, n, 0.5));
        let d = |x: &WeightedDag, y: &WeightedDag| spectral_distance(x, y, None, SpectrumMode::EigenvalueModuli).unwrap();
        prop_assert!((d(&a, &b) - d(&b, &a)).abs() <= 1e-12);
        // strictly triangular matrices have only zero eigenvalues
        prop_assert!(d(&a, &b) == 0.0);
    }

    #[test]
    fn total_effects_match_power_series(seed in any::<u64>(), n in 1usize..13) {
        let mut r = rng(seed);
        let g = random_dag(&mut r, n, 0.4);
        let b = g.weights();
        let mut power = b.clone();
        let mut series = DMatrix::zeros(n, n);
        for _ in 0..n {
            series += &power;
            power = &power * b;
        }
        prop_assert!(power.iter().all(|&v| v == 0.0));
        let t = total_effects(&g).unwrap();
        prop_assert!((t.matrix() - series).abs().max() <= 1e-10);
    }

    #[test]
    fn zero_delta_intervention_is_identity(seed in any::<u64>(), n in 2usize..8) {
        let mut r = rng(seed);
        let g = random_dag(&mut r, n, 0.5);
        let row: Vec<f64> = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
        let node = r.random_range(0..n);
        prop_assert_eq!(propagate_intervention(&g, &row, node, row[node]), row.clone());
        let effects = total_effects(&g).unwrap();
        let target = *g.causal_order().last().unwrap();
        if node != target {
            let plain = predict_target_sem(&effects, &g, &row, target, None);
            let same = predict_target_sem(&effects, &g, &row, target, Some((node, row[node])));
            prop_assert_eq!(plain, same);
        }
    }

    #[test]
    fn tanimoto_symmetric_and_reflexive(bits in proptest::collection::vec(any::<(bool, bool)>(), 1..200)) {
        let a = Fingerprint::from_bit_str(&bits.iter().map(|b| if b.0 { '1' } else { '0' }).collect::<String>()).unwrap();
        let b = Fingerprint::from_bit_str(&bits.iter().map(|b| if b.1 { '1' } else { '0' }).collect::<String>()).unwrap();
        prop_assert_eq!(tanimoto(&a, &b).unwrap(), tanimoto(&b, &a).unwrap());
        prop_assert_eq!(tanimoto(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn pca_ignores_row_order(seed in any::<u64>(), n in 3usize..30, d in 1usize..6) {
        let mut r = rng(seed);
        let x = DMatrix::from_fn(n, d, |_, j| r.random_range(-1.0..1.0) * (j + 1) as f64);
        let k = d.min(2);
        let p = pca_project(&x, k).unwrap();
        let rev = DMatrix::from_fn(n, d, |i, j| x[(n - 1 - i, j)]);
        let q = pca_project(&rev, k).unwrap();
        // components agree up to numerical noise when the spectrum has a gap
        let gap = p.explained_variance.windows(2).all(|w| w[0] - w[1] > 1e-6);
        if gap && p.explained_variance[k - 1] > 1e-6 {
            prop_assert!((&p.components - &q.components).abs().max() < 1e-8);
        }
        prop_assert_eq!(p.clone(), pca_project(&x, k).unwrap());
    }

    #[test]
    fn gmm_responsibilities_and_monotone_likelihood(seed in any::<u64>(), k in 1usize..4) {
        let mut r = rng(seed);
        let names = node_names(3);
        let x = DMatrix::from_fn(150, 3, |i, j| (i % 3) as f64 * 2.0 * (j as f64 - 1.0) + r.random_range(-1.0..1.0));
        let t = table_from(names.clone(), x, vec![]);
        let params = GmmParams { n_components: k, seed, ..GmmParams::default() };
        let m = fit_gmm(&t, &names, &params).unwrap();
        for w in m.log_likelihood_trace().windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9 * w[0].abs());
        }
        let resp = m.responsibilities(&t).unwrap();
        for i in 0..resp.nrows() {
            prop_assert!((resp.row(i).sum() - 1.0).abs() <= 1e-9);
        }
    }
}

#[test]
fn forest_prediction_is_tree_mean() {
    let mut r = rng(31);
    let names = node_names(4);
    let x = DMatrix::from_fn(300, 4, |i, j| if j == 3 { 0.0 } else { r.random_range(-1.0..1.0) + (i % 2) as f64 });
    let mut x = x;
    for i in 0..300 {
        x[(i, 3)] = 2.0 * x[(i, 0)] - x[(i, 1)] + 0.1 * x[(i, 2)];
    }
    let t = table_from(names.clone(), x, vec!["x3".into()]);
    let params = ForestParams { n_trees: 15, seed: 2, ..ForestParams::default() };
    let inputs = names[..3].to_vec();
    let m = fit_forest(&t, &inputs, "x3", &params).unwrap();
    for i in 0..20 {
        let row: Vec<f64> = t.row(i)[..3].to_vec();
        let mean = m.trees().iter().map(|tr| tr.predict(&row)).sum::<f64>() / 15.0;
        assert!((m.predict_row(&row) - mean).abs() <= 1e-12);
    }
    assert_eq!(m.trees(), fit_forest(&t, &inputs, "x3", &params).unwrap().trees());
    let y = t.column("x3").unwrap();
    assert_eq!(r2_score(&y, &y).unwrap(), 1.0);
}

/// Rescaling one column by c rescales its destandardized outgoing weights by 1/c
/// and incoming weights by c.
#[test]
fn lingam_weights_are_scale_equivariant() {
    let c = 4.0;
    for seed in 0..3 {
        let mut r = rng(500 + seed);
        let mut b = DMatrix::zeros(3, 3);
        b[(1, 0)] = 0.8;
        b[(2, 1)] = -0.6;
        let x = sample_linear(&mut r, &b, 5000, &[1.0, 1.0, 1.0]);
        let mut scaled = x.clone();
        scaled.column_mut(1).scale_mut(c);
        let g = discover_lingam(&table_from(node_names(3), x, vec![]), None, DEFAULT_PRUNE_THRESHOLD)
            .unwrap()
            .destandardized();
        let h = discover_lingam(&table_from(node_names(3), scaled, vec![]), None, DEFAULT_PRUNE_THRESHOLD)
            .unwrap()
            .destandardized();
        let incoming = h.weight("x1", "x0").unwrap() / g.weight("x1", "x0").unwrap();
        let outgoing = h.weight("x2", "x1").unwrap() / g.weight("x2", "x1").unwrap();
        assert!((incoming / c - 1.0).abs() < 0.05, "incoming ratio {incoming}");
        assert!((outgoing * c - 1.0).abs() < 0.05, "outgoing ratio {outgoing}");
    }
}

/// Gaussian noise violates the identifiability assumption; discovery must still
/// return a valid DAG.
#[test]
fn gaussian_data_still_yields_a_dag() {
    let mut r = rng(77);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut x = DMatrix::from_fn(1000, 4, |_, _| normal.sample(&mut r));
    for i in 0..1000 {
        x[(i, 1)] += 0.7 * x[(i, 0)];
        x[(i, 3)] += 0.5 * x[(i, 1)] - 0.4 * x[(i, 2)];
    }
    let g = discover_lingam(&table_from(node_names(4), x, vec![]), Some("x3"), DEFAULT_PRUNE_THRESHOLD).unwrap();
    assert!(strictly_lower_in_order(&g));
    assert!(g.is_sink(3));
}
