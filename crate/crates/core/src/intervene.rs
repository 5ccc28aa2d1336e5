//! Total causal effects on a linear SEM and optimal individual interventions.
//!
//! For each individual the planner picks the single feature with the largest
//! absolute total effect on the target and solves for the value that moves the
//! SEM prediction of the target onto a goal. Interventions propagate to
//! descendants with each individual's own noise terms held fixed, so the
//! predicted shift of the target is exactly `effect * delta`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::causal::WeightedDag;
use crate::dataio::{fmt_f64, FeatureTable};
use crate::error::{Error, Result};

pub const DEFAULT_GOAL_DEBYE: f64 = 3.0;
pub const INTERVENED_SUFFIX: &str = "@do";

/// `matrix[(i, j)]` is the total effect of node `j` on node `i`; zero on the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectMatrix {
    matrix: DMatrix<f64>,
}

impl EffectMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn effect(&self, cause: usize, outcome: usize) -> f64 {
        self.matrix[(outcome, cause)]
    }
}

/// T = (I - B)^-1 - I, solved as a unit lower-triangular system in causal order.
pub fn total_effects(dag: &WeightedDag) -> Result<EffectMatrix> {
    if !dag.is_acyclic_in_order() {
        return Err(Error::Cyclic);
    }
    let n = dag.n_nodes();
    let order = dag.causal_order();
    let lower = DMatrix::identity(n, n) - dag.ordered_weights();
    let inv = lower
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::Numeric("singular I - B".into()))?;
    let mut matrix = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            if a != b {
                matrix[(order[a], order[b])] = inv[(a, b)];
            }
        }
    }
    Ok(EffectMatrix { matrix })
}

/// Observed min/max per column, used to clamp intervened values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureBounds {
    bounds: HashMap<String, (f64, f64)>,
}

impl FeatureBounds {
    pub fn from_table(table: &FeatureTable) -> Self {
        let bounds = table
            .feature_names()
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let col = table.values().column(j);
                (name.clone(), (col.min(), col.max()))
            })
            .collect();
        Self { bounds }
    }

    pub fn get(&self, name: &str) -> Option<(f64, f64)> {
        self.bounds.get(name).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterventionPlan {
    pub row_id: String,
    pub chosen_feature: String,
    pub original_value: f64,
    pub intervened_value: f64,
    pub predicted_target_before: f64,
    pub predicted_target_after: f64,
    pub target_goal: f64,
    /// Total effect of the chosen feature on the target, raw units.
    pub effect: f64,
    pub clamped: bool,
}

impl InterventionPlan {
    pub fn delta(&self) -> f64 {
        self.intervened_value - self.original_value
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterventionSettings {
    pub target: String,
    pub goal: f64,
    pub interventable: Vec<String>,
    pub bounds: Option<FeatureBounds>,
}

fn standardize_row(dag: &WeightedDag, row: &[f64]) -> Vec<f64> {
    row.iter()
        .zip(dag.center().iter().zip(dag.scale()))
        .map(|(x, (c, s))| (x - c) / s)
        .collect()
}

fn parent_equation(dag: &WeightedDag, z: &[f64], t: usize) -> f64 {
    dag.weights().row(t).iter().zip(z).map(|(w, v)| w * v).sum()
}

/// SEM readout of the target for one row given in node order.
///
/// Without an intervention this is the target's structural equation evaluated at the
/// observed parents (the target's own noise is not part of the prediction). With
/// `do_value = Some((node, value))` the row's noise terms are held fixed and the change
/// at `node` is propagated, shifting the prediction by the total effect times the change.
pub fn predict_target_sem(
    effects: &EffectMatrix,
    dag: &WeightedDag,
    row: &[f64],
    target: usize,
    do_value: Option<(usize, f64)>,
) -> f64 {
    let z = standardize_row(dag, row);
    let mut pred = parent_equation(dag, &z, target);
    if let Some((node, value)) = do_value {
        if node == target {
            pred = (value - dag.center()[target]) / dag.scale()[target];
        } else {
            let dz = (value - row[node]) / dag.scale()[node];
            pred += effects.effect(node, target) * dz;
        }
    }
    pred * dag.scale()[target] + dag.center()[target]
}

/// Counterfactual row after `do(node = value)`: descendants move, noise stays fixed.
pub fn propagate_intervention(dag: &WeightedDag, row: &[f64], node: usize, value: f64) -> Vec<f64> {
    let z = standardize_row(dag, row);
    let mut shift = vec![0.0; z.len()];
    shift[node] = (value - row[node]) / dag.scale()[node];
    for &i in dag.causal_order() {
        if i == node {
            continue;
        }
        shift[i] = dag.weights().row(i).iter().zip(&shift).map(|(w, s)| w * s).sum();
    }
    row.iter()
        .zip(&shift)
        .zip(dag.scale())
        .map(|((x, s), sc)| x + s * sc)
        .collect()
}

/// Plan one row (values in the DAG's node order, raw units).
pub fn optimal_individual_intervention(
    effects: &EffectMatrix,
    dag: &WeightedDag,
    row_id: &str,
    row: &[f64],
    settings: &InterventionSettings,
) -> Result<InterventionPlan> {
    let t = dag.node_index(&settings.target)?;
    let mut levers: Vec<(usize, &String)> = settings
        .interventable
        .iter()
        .map(|name| dag.node_index(name).map(|i| (i, name)))
        .collect::<Result<_>>()?;
    levers.retain(|&(i, _)| i != t);
    levers.sort_by(|a, b| a.1.cmp(b.1));
    let mut best: Option<(usize, f64)> = None;
    for &(i, _) in &levers {
        let e = effects.effect(i, t);
        if e != 0.0 && best.is_none_or(|(_, b)| e.abs() > b.abs()) {
            best = Some((i, e));
        }
    }
    let (f, effect_z) = best.ok_or_else(|| Error::NoCausalLever(settings.target.clone()))?;
    let scale = dag.scale();
    let center = dag.center();
    let effect = effect_z * scale[t] / scale[f];

    let z = standardize_row(dag, row);
    let pred_z = parent_equation(dag, &z, t);
    let goal_z = (settings.goal - center[t]) / scale[t];
    let delta_z = if goal_z == pred_z { 0.0 } else { (goal_z - pred_z) / effect_z };
    let original = row[f];
    let mut new_value = original + delta_z * scale[f];
    let mut clamped = false;
    if let Some((lo, hi)) = settings.bounds.as_ref().and_then(|b| b.get(&dag.node_names()[f])) {
        if new_value < lo || new_value > hi {
            new_value = new_value.clamp(lo, hi);
            clamped = true;
        }
    }
    let before = pred_z * scale[t] + center[t];
    let after = predict_target_sem(effects, dag, row, t, Some((f, new_value)));
    Ok(InterventionPlan {
        row_id: row_id.to_string(),
        chosen_feature: dag.node_names()[f].clone(),
        original_value: original,
        intervened_value: new_value,
        predicted_target_before: before,
        predicted_target_after: after,
        target_goal: settings.goal,
        effect,
        clamped,
    })
}

/// Plan every row of `table`; rows are read in the DAG's node order.
pub fn plan_population(
    table: &FeatureTable,
    dag: &WeightedDag,
    settings: &InterventionSettings,
) -> Result<Vec<InterventionPlan>> {
    let effects = total_effects(dag)?;
    let sub = table.select_columns(dag.node_names())?;
    (0..sub.n_rows())
        .into_par_iter()
        .map(|i| {
            optimal_individual_intervention(&effects, dag, &sub.row_ids()[i], &sub.row(i), settings)
        })
        .collect()
}

fn check_plans(table: &FeatureTable, plans: &[InterventionPlan]) -> Result<Vec<(usize, usize)>> {
    plans
        .iter()
        .map(|p| {
            let i = table
                .row_index(&p.row_id)
                .ok_or_else(|| Error::UnknownRow(p.row_id.clone()))?;
            Ok((i, table.column_index(&p.chosen_feature)?))
        })
        .collect()
}

fn suffixed(ids: &[String]) -> Vec<String> {
    ids.iter().map(|id| format!("{id}{INTERVENED_SUFFIX}")).collect()
}

/// Intervened feature vectors: only each plan's chosen column moves; ids gain a suffix.
/// Returns one row per plan, in plan order.
pub fn apply_interventions(table: &FeatureTable, plans: &[InterventionPlan]) -> Result<FeatureTable> {
    let loc = check_plans(table, plans)?;
    let rows: Vec<usize> = loc.iter().map(|l| l.0).collect();
    let mut out = table.select_rows(&rows);
    let mut values = out.values().clone();
    for (k, (plan, &(_, j))) in plans.iter().zip(&loc).enumerate() {
        values[(k, j)] = plan.intervened_value;
    }
    out = out.with_values(values)?;
    out.with_row_ids(suffixed(&plans.iter().map(|p| p.row_id.clone()).collect::<Vec<_>>()))
}

/// Like [`apply_interventions`], but descendant columns of the DAG move as well.
pub fn apply_interventions_propagated(
    table: &FeatureTable,
    plans: &[InterventionPlan],
    dag: &WeightedDag,
) -> Result<FeatureTable> {
    check_plans(table, plans)?;
    let node_cols = dag
        .node_names()
        .iter()
        .map(|n| table.column_index(n))
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<usize> = plans
        .iter()
        .map(|p| table.row_index(&p.row_id).expect("checked"))
        .collect();
    let out = table.select_rows(&rows);
    let mut values = out.values().clone();
    for (k, plan) in plans.iter().enumerate() {
        let row: Vec<f64> = node_cols.iter().map(|&j| values[(k, j)]).collect();
        let node = dag.node_index(&plan.chosen_feature)?;
        let moved = propagate_intervention(dag, &row, node, plan.intervened_value);
        for (&j, v) in node_cols.iter().zip(moved) {
            values[(k, j)] = v;
        }
    }
    out.with_values(values)?
        .with_row_ids(suffixed(&plans.iter().map(|p| p.row_id.clone()).collect::<Vec<_>>()))
}

/// Writes `id,feature,old,new,pred_before,pred_after,clamped`.
pub fn write_plans(path: &Path, plans: &[InterventionPlan]) -> Result<()> {
    let mut out = String::from("id,feature,old,new,pred_before,pred_after,clamped\n");
    for p in plans {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            p.row_id,
            p.chosen_feature,
            fmt_f64(p.original_value),
            fmt_f64(p.intervened_value),
            fmt_f64(p.predicted_target_before),
            fmt_f64(p.predicted_target_after),
            p.clamped
        );
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Inverse of [`write_plans`]. The effect is recovered from the recorded shift.
pub fn read_plans(path: &Path, goal: f64) -> Result<Vec<InterventionPlan>> {
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
            if rec.len() != 7 {
                return Err(bad("expected 7 fields"));
            }
            let num = |k: usize| rec[k].parse::<f64>().map_err(|_| bad("bad number"));
            let (old, new, before, after) = (num(2)?, num(3)?, num(4)?, num(5)?);
            let effect = if new != old { (after - before) / (new - old) } else { 0.0 };
            Ok(InterventionPlan {
                row_id: rec[0].to_string(),
                chosen_feature: rec[1].to_string(),
                original_value: old,
                intervened_value: new,
                predicted_target_before: before,
                predicted_target_after: after,
                target_goal: goal,
                effect,
                clamped: rec[6].parse().map_err(|_| bad("bad flag"))?,
            })
        })
        .collect()
}
