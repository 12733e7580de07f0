//! Stratified splitting, cost evaluation and the four pipeline drivers.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datagen::{Dataset, Label};
use crate::error::{invalid, Error, Result};
use crate::featsel::{forward_select, SelectionConfig};
use crate::model::{fit_design, LogisticConfig, TrainedModel};
use crate::rng::Stream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SplitKind {
    /// Part 0 is training, part 1 is testing.
    Holdout,
    KFold {
        k: usize,
    },
}

/// Per-sample partition labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitPlan {
    pub kind: SplitKind,
    pub assignments: Vec<usize>,
}

impl SplitPlan {
    pub fn n_parts(&self) -> usize {
        match self.kind {
            SplitKind::Holdout => 2,
            SplitKind::KFold { k } => k,
        }
    }

    pub fn part(&self, p: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == p)
            .collect()
    }

    pub fn complement(&self, p: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != p)
            .collect()
    }

    /// (training rows, evaluation rows) for each round of the plan.
    pub fn rounds(&self) -> Vec<(Vec<usize>, Vec<usize>)> {
        match self.kind {
            SplitKind::Holdout => vec![(self.part(0), self.part(1))],
            SplitKind::KFold { k } => (0..k).map(|f| (self.complement(f), self.part(f))).collect(),
        }
    }
}

fn shuffled_class(ds: &Dataset, label: Label, stream: &mut Stream) -> Vec<usize> {
    let mut idx = ds.class_indices(label);
    idx.shuffle(stream);
    idx
}

/// Stratified two-way split; per class, `round(train_fraction * count)` rows
/// go to training.
pub fn split_holdout(ds: &Dataset, train_fraction: f64, stream: &mut Stream) -> Result<SplitPlan> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(invalid(format!(
            "train fraction {train_fraction} must lie strictly between 0 and 1"
        )));
    }
    let mut assignments = vec![0usize; ds.n_samples()];
    for label in [Label::Negative, Label::Positive] {
        let idx = shuffled_class(ds, label, stream);
        let n_train = holdout_train_count(idx.len(), train_fraction);
        if n_train == 0 || n_train == idx.len() {
            return Err(Error::InfeasibleSplit(format!(
                "{label:?} class of {} samples leaves an empty partition at train fraction {train_fraction}",
                idx.len()
            )));
        }
        for &i in &idx[n_train..] {
            assignments[i] = 1;
        }
    }
    Ok(SplitPlan {
        kind: SplitKind::Holdout,
        assignments,
    })
}

fn holdout_train_count(count: usize, train_fraction: f64) -> usize {
    (train_fraction * count as f64).round() as usize
}

/// Per-class fold sizes. Remainders are handed out round-robin, continuing
/// from where the previous class stopped, so fold totals differ by at most one.
fn fold_sizes(count: usize, k: usize, offset: usize) -> Vec<usize> {
    let mut sizes = vec![count / k; k];
    for j in 0..count % k {
        sizes[(offset + j) % k] += 1;
    }
    sizes
}

/// Stratified k-fold assignment.
pub fn split_kfold(ds: &Dataset, k: usize, stream: &mut Stream) -> Result<SplitPlan> {
    if k < 2 {
        return Err(invalid("k must be at least 2"));
    }
    let mut assignments = vec![0usize; ds.n_samples()];
    let mut offset = 0;
    for label in [Label::Negative, Label::Positive] {
        let idx = shuffled_class(ds, label, stream);
        if idx.len() < k {
            return Err(Error::InfeasibleSplit(format!(
                "{label:?} class has {} samples, fewer than k = {k}",
                idx.len()
            )));
        }
        let mut cursor = 0;
        for (fold, size) in fold_sizes(idx.len(), k, offset).into_iter().enumerate() {
            for &i in &idx[cursor..cursor + size] {
                assignments[i] = fold;
            }
            cursor += size;
        }
        offset = (offset + idx.len() % k) % k;
    }
    Ok(SplitPlan {
        kind: SplitKind::KFold { k },
        assignments,
    })
}

/// Accuracy summary over one or more evaluation partitions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvEstimate {
    pub mean_acc: f64,
    /// Sample standard deviation of `per_split_acc`; 0 for a single split.
    pub std_acc: f64,
    pub per_split_acc: Vec<f64>,
}

impl CvEstimate {
    pub fn single(acc: f64) -> Self {
        Self {
            mean_acc: acc,
            std_acc: 0.0,
            per_split_acc: vec![acc],
        }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&values);
        Self {
            mean_acc: mean,
            std_acc: std,
            per_split_acc: values,
        }
    }
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CostStrategy {
    /// Accuracy on the single test partition.
    Holdout,
    /// Mean accuracy over k test folds.
    KFold,
    /// Mean accuracy over k validation folds of a training-validation set.
    TvtInner,
}

struct Round {
    train: Vec<usize>,
    train_y: Vec<f64>,
    eval: Vec<usize>,
}

/// Cost function of a selection run: the split plan is fixed, each call
/// trains and scores one feature subset on every round of the plan.
pub struct CostEvaluator<'a> {
    ds: &'a Dataset,
    rounds: Vec<Round>,
    logistic: LogisticConfig,
    buffer: Vec<f64>,
}

impl<'a> CostEvaluator<'a> {
    pub fn new(
        ds: &'a Dataset,
        strategy: CostStrategy,
        plan: &SplitPlan,
        logistic: LogisticConfig,
    ) -> Result<Self> {
        if plan.assignments.len() != ds.n_samples() {
            return Err(Error::Shape(format!(
                "plan covers {} samples, dataset has {}",
                plan.assignments.len(),
                ds.n_samples()
            )));
        }
        let compatible = matches!(
            (strategy, plan.kind),
            (CostStrategy::Holdout, SplitKind::Holdout)
                | (CostStrategy::KFold, SplitKind::KFold { .. })
                | (CostStrategy::TvtInner, SplitKind::KFold { .. })
        );
        if !compatible {
            return Err(Error::Shape(format!(
                "{strategy:?} cost cannot use a {:?} plan",
                plan.kind
            )));
        }
        let rounds = plan
            .rounds()
            .into_iter()
            .map(|(train, eval)| Round {
                train_y: train
                    .iter()
                    .map(|&r| {
                        if ds.labels()[r].is_positive() {
                            1.0
                        } else {
                            0.0
                        }
                    })
                    .collect(),
                train,
                eval,
            })
            .collect();
        Ok(Self {
            ds,
            rounds,
            logistic,
            buffer: Vec::new(),
        })
    }

    pub fn evaluate(&mut self, subset: &[usize]) -> Result<CvEstimate> {
        if subset.is_empty() {
            return Err(invalid("feature subset must be non-empty"));
        }
        if let Some(&bad) = subset.iter().find(|&&f| f >= self.ds.n_features()) {
            return Err(Error::Shape(format!("feature index {bad} out of range")));
        }
        let mut accs = Vec::with_capacity(self.rounds.len());
        for round in &self.rounds {
            let model = fit_subset(
                self.ds,
                &round.train,
                &round.train_y,
                subset,
                &self.logistic,
                &mut self.buffer,
            )?;
            accs.push(subset_accuracy(self.ds, &round.eval, subset, &model));
        }
        Ok(if accs.len() == 1 {
            CvEstimate::single(accs[0])
        } else {
            CvEstimate::from_values(accs)
        })
    }
}

fn fit_subset(
    ds: &Dataset,
    rows: &[usize],
    y: &[f64],
    subset: &[usize],
    cfg: &LogisticConfig,
    buffer: &mut Vec<f64>,
) -> Result<TrainedModel> {
    buffer.clear();
    let x = ds.features();
    for &r in rows {
        let row = x.row(r);
        buffer.extend(subset.iter().map(|&c| row[c]));
    }
    fit_design(buffer, y, subset.len(), cfg)
}

fn subset_accuracy(ds: &Dataset, rows: &[usize], subset: &[usize], model: &TrainedModel) -> f64 {
    let x = ds.features();
    let hits = rows
        .iter()
        .filter(|&&r| {
            let row = x.row(r);
            let z = model.intercept
                + subset
                    .iter()
                    .zip(&model.weights)
                    .map(|(&c, w)| w * row[c])
                    .sum::<f64>();
            let predicted = if z >= 0.0 {
                Label::Positive
            } else {
                Label::Negative
            };
            predicted == ds.labels()[r]
        })
        .count();
    hits as f64 / rows.len() as f64
}

/// One-shot cost evaluation of `subset` under `plan`.
pub fn evaluate_cost(
    ds: &Dataset,
    subset: &[usize],
    strategy: CostStrategy,
    plan: &SplitPlan,
    logistic: &LogisticConfig,
) -> Result<CvEstimate> {
    CostEvaluator::new(ds, strategy, plan, *logistic)?.evaluate(subset)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CvMethod {
    #[serde(rename = "single_holdout")]
    SingleHoldout,
    #[serde(rename = "kfold")]
    KFold,
    #[serde(rename = "train_val_test")]
    TrainValTest,
    #[serde(rename = "nested_kfold")]
    NestedKFold,
}

impl CvMethod {
    pub const ALL: [CvMethod; 4] = [
        CvMethod::SingleHoldout,
        CvMethod::KFold,
        CvMethod::TrainValTest,
        CvMethod::NestedKFold,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CvMethod::SingleHoldout => "single_holdout",
            CvMethod::KFold => "kfold",
            CvMethod::TrainValTest => "train_val_test",
            CvMethod::NestedKFold => "nested_kfold",
        }
    }
}

impl fmt::Display for CvMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CvMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CvMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                invalid(format!(
                    "unknown method '{s}' (expected single_holdout, kfold, train_val_test or nested_kfold)"
                ))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub k_folds: usize,
    pub holdout_train_fraction: f64,
    pub tvt_test_fraction: f64,
    pub logistic: LogisticConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k_folds: 10,
            holdout_train_fraction: 0.7,
            tvt_test_fraction: 0.15,
            logistic: LogisticConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineResult {
    /// Selected features in selection order.
    pub selected: Vec<usize>,
    pub estimate: CvEstimate,
    /// Per-outer-fold selections, in selection order (nested only).
    pub candidate_sets: Vec<Vec<usize>>,
}

/// Checks from class counts alone whether `method` can split a dataset.
pub fn check_feasible(
    n_neg: usize,
    n_pos: usize,
    method: CvMethod,
    cfg: &PipelineConfig,
) -> Result<()> {
    let k = cfg.k_folds;
    if k < 2 {
        return Err(invalid("k must be at least 2"));
    }
    for (name, c) in [("negative", n_neg), ("positive", n_pos)] {
        let fail = |why: String| {
            Err(Error::InfeasibleSplit(format!(
                "{name} class ({c} samples): {why}"
            )))
        };
        match method {
            CvMethod::SingleHoldout => {
                let t = holdout_train_count(c, cfg.holdout_train_fraction);
                if t == 0 || t >= c {
                    return fail("holdout leaves an empty partition".into());
                }
            }
            CvMethod::KFold => {
                if c < k {
                    return fail(format!("fewer than k = {k} samples"));
                }
            }
            CvMethod::TrainValTest => {
                let t = holdout_train_count(c, 1.0 - cfg.tvt_test_fraction);
                if t == 0 || t >= c {
                    return fail("test reservation leaves an empty partition".into());
                }
                if t < k {
                    return fail(format!(
                        "training-validation part has {t} < k = {k} samples"
                    ));
                }
            }
            CvMethod::NestedKFold => {
                if c < k {
                    return fail(format!("fewer than k = {k} samples"));
                }
                let inner = c - c.div_ceil(k);
                if inner < k {
                    return fail(format!(
                        "inner training-validation part can hold {inner} < k = {k} samples"
                    ));
                }
            }
        }
    }
    Ok(())
}

pub fn run_pipeline(
    ds: &Dataset,
    method: CvMethod,
    sel_cfg: &SelectionConfig,
    cfg: &PipelineConfig,
    stream: &mut Stream,
) -> Result<PipelineResult> {
    let m = ds.n_features();
    sel_cfg.validate(m)?;
    match method {
        CvMethod::SingleHoldout => {
            let plan = split_holdout(ds, cfg.holdout_train_fraction, stream)?;
            select_and_score(ds, CostStrategy::Holdout, &plan, sel_cfg, cfg)
        }
        CvMethod::KFold => {
            let plan = split_kfold(ds, cfg.k_folds, stream)?;
            select_and_score(ds, CostStrategy::KFold, &plan, sel_cfg, cfg)
        }
        CvMethod::TrainValTest => {
            let outer = split_holdout(ds, 1.0 - cfg.tvt_test_fraction, stream)?;
            let tv_rows = outer.part(0);
            let test_rows = outer.part(1);
            let (selected, acc) = select_and_test(ds, &tv_rows, &test_rows, sel_cfg, cfg, stream)?;
            Ok(PipelineResult {
                selected,
                estimate: CvEstimate::single(acc),
                candidate_sets: Vec::new(),
            })
        }
        CvMethod::NestedKFold => {
            let outer = split_kfold(ds, cfg.k_folds, stream)?;
            let mut candidate_sets = Vec::with_capacity(cfg.k_folds);
            let mut accs = Vec::with_capacity(cfg.k_folds);
            for fold in 0..cfg.k_folds {
                let mut fold_stream = stream.derive(fold as u64);
                let (selected, acc) = select_and_test(
                    ds,
                    &outer.complement(fold),
                    &outer.part(fold),
                    sel_cfg,
                    cfg,
                    &mut fold_stream,
                )?;
                candidate_sets.push(selected);
                accs.push(acc);
            }
            let selected = consensus_in_order(&candidate_sets)?;
            Ok(PipelineResult {
                selected,
                estimate: CvEstimate::from_values(accs),
                candidate_sets,
            })
        }
    }
}

fn select_and_score(
    ds: &Dataset,
    strategy: CostStrategy,
    plan: &SplitPlan,
    sel_cfg: &SelectionConfig,
    cfg: &PipelineConfig,
) -> Result<PipelineResult> {
    let mut ev = CostEvaluator::new(ds, strategy, plan, cfg.logistic)?;
    let sel = forward_select(ds.n_features(), |s| ev.evaluate(s), sel_cfg)?;
    let estimate = ev.evaluate(&sel.selected)?;
    Ok(PipelineResult {
        selected: sel.selected,
        estimate,
        candidate_sets: Vec::new(),
    })
}

/// Inner k-fold selection on `tv_rows`, retrain on all of them, score once on
/// `test_rows`.
fn select_and_test(
    ds: &Dataset,
    tv_rows: &[usize],
    test_rows: &[usize],
    sel_cfg: &SelectionConfig,
    cfg: &PipelineConfig,
    stream: &mut Stream,
) -> Result<(Vec<usize>, f64)> {
    let tv = ds.select_rows(tv_rows);
    let inner = split_kfold(&tv, cfg.k_folds, stream)?;
    let mut ev = CostEvaluator::new(&tv, CostStrategy::TvtInner, &inner, cfg.logistic)?;
    let sel = forward_select(ds.n_features(), |s| ev.evaluate(s), sel_cfg)?;
    let y: Vec<f64> = tv_rows
        .iter()
        .map(|&r| {
            if ds.labels()[r].is_positive() {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let model = fit_subset(
        ds,
        tv_rows,
        &y,
        &sel.selected,
        &cfg.logistic,
        &mut Vec::new(),
    )?;
    let acc = subset_accuracy(ds, test_rows, &sel.selected, &model);
    Ok((sel.selected, acc))
}

/// Consensus over candidate sets, reported in the selection order of the
/// first outer fold that produced it. Candidate sets of differing sizes (only
/// possible with auto-stop selection) are reduced to the most common size.
fn consensus_in_order(candidates: &[Vec<usize>]) -> Result<Vec<usize>> {
    let mut by_len: HashMap<usize, usize> = HashMap::new();
    for c in candidates {
        *by_len.entry(c.len()).or_default() += 1;
    }
    let modal = by_len
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(&len, _)| len)
        .ok_or_else(|| invalid("no candidate sets"))?;
    let pool: Vec<Vec<usize>> = candidates
        .iter()
        .filter(|c| c.len() == modal)
        .cloned()
        .collect();
    let winner = consensus_features(&pool)?;
    let ordered = pool
        .into_iter()
        .find(|c| sorted(c) == winner)
        .expect("consensus is one of the candidates");
    Ok(ordered)
}

fn sorted(v: &[usize]) -> Vec<usize> {
    let mut s = v.to_vec();
    s.sort_unstable();
    s
}

/// Picks the candidate set (returned sorted) with the greatest exact-set
/// multiplicity. Ties go to the larger summed per-feature frequency, then to
/// the lexicographically smallest index list.
pub fn consensus_features(candidate_sets: &[Vec<usize>]) -> Result<Vec<usize>> {
    let first = candidate_sets
        .first()
        .ok_or_else(|| invalid("no candidate sets"))?;
    if candidate_sets.iter().any(|c| c.len() != first.len()) {
        return Err(invalid("candidate sets have mixed cardinalities"));
    }
    let sets: Vec<Vec<usize>> = candidate_sets.iter().map(|c| sorted(c)).collect();
    let mut multiplicity: HashMap<&[usize], usize> = HashMap::new();
    let mut frequency: HashMap<usize, usize> = HashMap::new();
    for s in &sets {
        *multiplicity.entry(s.as_slice()).or_default() += 1;
        for &f in s {
            *frequency.entry(f).or_default() += 1;
        }
    }
    let score =
        |s: &[usize]| -> (usize, usize) { (multiplicity[s], s.iter().map(|f| frequency[f]).sum()) };
    let best = sets
        .iter()
        .min_by(|a, b| {
            let (ma, fa) = score(a);
            let (mb, fb) = score(b);
            mb.cmp(&ma).then(fb.cmp(&fa)).then(a.cmp(b))
        })
        .expect("non-empty");
    Ok(best.clone())
}
