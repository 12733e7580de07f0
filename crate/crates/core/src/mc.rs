//! Monte Carlo scenarios: repeated pipeline runs on fresh synthetic data,
//! H0/Ha confidence bounds, selection confidence and empirical sample-size
//! crossings.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calc::{EquivalentDCell, EquivalentDTable};
use crate::cv::{check_feasible, mean_std, run_pipeline, CvMethod, PipelineConfig};
use crate::datagen::{gen_gaussian_dataset, Dataset, DatasetSpec};
use crate::error::{invalid, Error, Result};
use crate::featsel::SelectionConfig;
use crate::fit::{eval_quadratic, fit_quadratic, fit_two_term_exp};
use crate::rng::{digest, Stream};

/// Repetitions used by the full-scale experiments.
pub const DEFAULT_REPETITIONS: usize = 5000;
/// Repetitions for desk-scale runs.
pub const DESK_REPETITIONS: usize = 500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub spec: DatasetSpec,
    pub method: CvMethod,
    pub sel_cfg: SelectionConfig,
    pub pipeline: PipelineConfig,
    pub repetitions: usize,
    pub alpha: f64,
    pub beta: f64,
    pub master_seed: u64,
}

impl McConfig {
    /// Fixed-size selection of `spec.l` features, alpha 0.05, beta 0.2.
    pub fn new(spec: DatasetSpec, method: CvMethod) -> Self {
        let l = spec.l;
        McConfig {
            spec,
            method,
            sel_cfg: SelectionConfig::fixed(l),
            pipeline: PipelineConfig::default(),
            repetitions: DEFAULT_REPETITIONS,
            alpha: 0.05,
            beta: 0.2,
            master_seed: 0,
        }
    }

    pub fn with_repetitions(mut self, repetitions: usize) -> Self {
        self.repetitions = repetitions;
        self
    }

    pub fn with_seed(mut self, master_seed: u64) -> Self {
        self.master_seed = master_seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.sel_cfg.validate(self.spec.m)?;
        if self.repetitions < 2 {
            return Err(invalid("repetitions must be at least 2"));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(invalid(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if !(self.pipeline.holdout_train_fraction > 0.0
            && self.pipeline.holdout_train_fraction < 1.0)
        {
            return Err(invalid("holdout train fraction must lie in (0, 1)"));
        }
        if !(self.pipeline.tvt_test_fraction > 0.0 && self.pipeline.tvt_test_fraction < 1.0) {
            return Err(invalid("test fraction must lie in (0, 1)"));
        }
        check_feasible(
            self.spec.n_negative(),
            self.spec.n_positive(),
            self.method,
            &self.pipeline,
        )
    }

    /// Hash of everything that defines the scenario except the seed and
    /// the repetition count.
    pub fn scenario_digest(&self) -> [u8; 32] {
        let mut spec = self.spec.clone();
        spec.seed = 0;
        let canonical = serde_json::json!({
            "spec": spec,
            "method": self.method,
            "selection": self.sel_cfg,
            "pipeline": self.pipeline,
        });
        digest(&canonical.to_string())
    }

    pub fn scenario_id(&self) -> String {
        self.scenario_digest()[..8]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub repetition: usize,
    pub mean_acc: f64,
    pub per_split_acc: Vec<f64>,
    pub selected: Vec<usize>,
    /// Nested k-fold only: per-outer-fold selections.
    pub candidate_sets: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct McSummary {
    pub scenario_id: String,
    pub accuracies: Vec<f64>,
    pub mean_acc: f64,
    pub std_acc: f64,
    /// Present when the scenario has no effect (`d_effect == 0`).
    pub h0_upper: Option<f64>,
    /// Present when `d_effect > 0`.
    pub ha_lower: Option<f64>,
    /// `C_{l,d}` keyed by `(l, d)`; empty unless selections have size `spec.l`.
    pub confidence: BTreeMap<(usize, usize), f64>,
    /// Fraction of repetitions that selected each feature.
    pub selection_counts: Vec<f64>,
    pub records: Vec<RepRecord>,
}

impl McSummary {
    pub fn selected_sets(&self) -> Vec<Vec<usize>> {
        self.records.iter().map(|r| r.selected.clone()).collect()
    }
}

fn run_repetition(cfg: &McConfig, scenario: &[u8; 32], rep: usize) -> Result<RepRecord> {
    let stream = Stream::for_repetition(cfg.master_seed, scenario, rep as u64);
    let ds = gen_gaussian_dataset(&cfg.spec, &mut stream.derive(0))?;
    // Selection ties go to the lowest column, so the columns are shuffled to
    // keep the discriminative features from winning ties by position.
    let mut order: Vec<usize> = (0..cfg.spec.m).collect();
    order.shuffle(&mut stream.derive(2));
    let shuffled = Dataset::new(ds.features().select_columns(&order), ds.labels().to_vec())?;
    let result = run_pipeline(
        &shuffled,
        cfg.method,
        &cfg.sel_cfg,
        &cfg.pipeline,
        &mut stream.derive(1),
    )?;
    let restore = |cols: Vec<usize>| -> Vec<usize> { cols.into_iter().map(|c| order[c]).collect() };
    Ok(RepRecord {
        repetition: rep,
        mean_acc: result.estimate.mean_acc,
        per_split_acc: result.estimate.per_split_acc,
        selected: restore(result.selected),
        candidate_sets: result.candidate_sets.into_iter().map(restore).collect(),
    })
}

/// Runs every repetition of one scenario on `workers` threads (0 picks the
/// machine default). Results do not depend on the worker count.
pub fn run_scenario(cfg: &McConfig, workers: usize) -> Result<McSummary> {
    cfg.validate()?;
    let scenario = cfg.scenario_digest();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| invalid(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<Result<RepRecord>> = pool.install(|| {
        (0..cfg.repetitions)
            .into_par_iter()
            .map(|rep| run_repetition(cfg, &scenario, rep))
            .collect()
    });
    let records = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    summarize(cfg, records)
}

fn summarize(cfg: &McConfig, records: Vec<RepRecord>) -> Result<McSummary> {
    let accuracies: Vec<f64> = records.iter().map(|r| r.mean_acc).collect();
    let (mean_acc, std_acc) = mean_std(&accuracies);
    let (h0_upper, ha_lower) = if cfg.spec.d_effect == 0.0 {
        (
            Some(ci_bound(&accuracies, CiKind::H0Upper { alpha: cfg.alpha })?),
            None,
        )
    } else {
        (
            None,
            Some(ci_bound(&accuracies, CiKind::HaLower { beta: cfg.beta })?),
        )
    };

    let m = cfg.spec.m;
    let mut counts = vec![0usize; m];
    for r in &records {
        for &f in &r.selected {
            counts[f] += 1;
        }
    }
    let reps = records.len() as f64;
    let selection_counts = counts.iter().map(|&c| c as f64 / reps).collect();

    let l = cfg.spec.l;
    let mut confidence = BTreeMap::new();
    let sets: Vec<Vec<usize>> = records.iter().map(|r| r.selected.clone()).collect();
    if sets.iter().all(|s| s.len() == l) {
        let truth: Vec<usize> = (0..l).collect();
        for d in 1..=l {
            confidence.insert((l, d), confidence_cld(&sets, &truth, d)?);
        }
    }

    Ok(McSummary {
        scenario_id: cfg.scenario_id(),
        accuracies,
        mean_acc,
        std_acc,
        h0_upper,
        ha_lower,
        confidence,
        selection_counts,
        records,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CiKind {
    /// The `(1 - alpha)` percentile of the H0 accuracies.
    H0Upper { alpha: f64 },
    /// The `beta` percentile of the Ha accuracies.
    HaLower { beta: f64 },
}

/// Percentile with linear interpolation between order statistics, using rank
/// `(n - 1) * p` on the sorted sample.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(invalid("percentile of an empty sample"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid(format!("percentile level {p} outside [0, 1]")));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(invalid("sample contains NaN"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let t = h - lo as f64;
    Ok(sorted[lo] + t * (sorted[hi] - sorted[lo]))
}

pub fn ci_bound(accuracies: &[f64], kind: CiKind) -> Result<f64> {
    let p = match kind {
        CiKind::H0Upper { alpha } if alpha > 0.0 && alpha < 1.0 => 1.0 - alpha,
        CiKind::HaLower { beta } if beta > 0.0 && beta < 1.0 => beta,
        _ => return Err(invalid("alpha and beta must lie in (0, 1)")),
    };
    percentile(accuracies, p)
}

/// Fraction of selections sharing at least `d` features with `true_set`.
pub fn confidence_cld(selected_sets: &[Vec<usize>], true_set: &[usize], d: usize) -> Result<f64> {
    let l = true_set.len();
    if d > l {
        return Err(invalid(format!("d = {d} exceeds l = {l}")));
    }
    if selected_sets.is_empty() {
        return Err(invalid("no selections"));
    }
    if selected_sets.iter().any(|s| s.len() != l) {
        return Err(invalid(format!("every selection must have {l} features")));
    }
    let hits = selected_sets
        .iter()
        .filter(|s| s.iter().filter(|f| true_set.contains(f)).count() >= d)
        .count();
    Ok(hits as f64 / selected_sets.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitKind {
    TwoTermExp,
    Quadratic,
}

/// Fitted bound curves and where they cross.
#[derive(Clone, Debug, PartialEq)]
pub struct Crossing {
    pub n: f64,
    pub ns: Vec<f64>,
    pub h0_upper: Vec<f64>,
    pub ha_lower: Vec<f64>,
}

/// Crossing of fitted `h0_upper(n)` and `ha_lower(n)` curves within the range
/// of `ns`.
pub fn crossing_from_bounds(
    ns: &[f64],
    h0_upper: &[f64],
    ha_lower: &[f64],
    kind: FitKind,
) -> Result<f64> {
    if ns.len() != h0_upper.len() || ns.len() != ha_lower.len() {
        return Err(Error::Shape("bound vectors must match the n grid".into()));
    }
    if ns.len() < 4 {
        return Err(invalid("need at least four n values"));
    }
    let curve = |y: &[f64]| -> Result<Box<dyn Fn(f64) -> f64>> {
        Ok(match kind {
            FitKind::TwoTermExp => {
                let f = fit_two_term_exp(ns, y)?;
                Box::new(move |x| f.predict(x))
            }
            FitKind::Quadratic => {
                let c = fit_quadratic(ns, y)?;
                Box::new(move |x| eval_quadratic(&c, x))
            }
        })
    };
    let h0 = curve(h0_upper)?;
    let ha = curve(ha_lower)?;
    let gap = |x: f64| ha(x) - h0(x);

    let (lo, hi) = (ns[0], ns[ns.len() - 1]);
    if gap(lo) >= 0.0 {
        return Err(Error::NoCrossing(format!(
            "powered at minimum n: Ha lower bound already exceeds the H0 upper bound at n = {lo}"
        )));
    }
    const STEPS: usize = 1000;
    let mut prev = lo;
    for i in 1..=STEPS {
        let x = lo + (hi - lo) * i as f64 / STEPS as f64;
        if gap(x) >= 0.0 {
            let (mut a, mut b) = (prev, x);
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                if gap(mid) >= 0.0 {
                    b = mid;
                } else {
                    a = mid;
                }
                if b - a < 1e-9 {
                    break;
                }
            }
            return Ok(0.5 * (a + b));
        }
        prev = x;
    }
    Err(Error::NoCrossing(format!(
        "underpowered: Ha lower bound stays below the H0 upper bound up to n = {hi}"
    )))
}

/// Runs paired H0 (`d_effect = 0`) and Ha scenarios at each n of the grid and
/// returns the crossing of their fitted bound curves.
pub fn required_n_empirical(
    base: &McConfig,
    n_grid: &[usize],
    kind: FitKind,
    workers: usize,
) -> Result<Crossing> {
    if base.spec.d_effect <= 0.0 {
        return Err(invalid("the alternative scenario needs d_effect > 0"));
    }
    let mut h0 = Vec::with_capacity(n_grid.len());
    let mut ha = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let mut alt = base.clone();
        alt.spec.n_per_class = n;
        let mut null = alt.clone();
        null.spec.d_effect = 0.0;
        h0.push(
            run_scenario(&null, workers)?
                .h0_upper
                .expect("null scenario"),
        );
        ha.push(
            run_scenario(&alt, workers)?
                .ha_lower
                .expect("alternative scenario"),
        );
    }
    let ns: Vec<f64> = n_grid.iter().map(|&n| n as f64).collect();
    let n = crossing_from_bounds(&ns, &h0, &ha, kind)?;
    Ok(Crossing {
        n,
        ns,
        h0_upper: h0,
        ha_lower: ha,
    })
}

/// Mean nested k-fold accuracy for every `(m, n, D)` combination, arranged as
/// an equivalent-D lookup.
pub fn build_equivalent_d_table(
    base: &McConfig,
    m_values: &[usize],
    n_values: &[usize],
    d_values: &[f64],
    workers: usize,
) -> Result<EquivalentDTable> {
    let mut table = EquivalentDTable::default();
    for &m in m_values {
        for &n in n_values {
            let mut accuracy = Vec::with_capacity(d_values.len());
            for &d in d_values {
                let mut cfg = base.clone();
                cfg.method = CvMethod::NestedKFold;
                cfg.spec.m = m;
                cfg.spec.n_per_class = n;
                cfg.spec.d_effect = d;
                accuracy.push(run_scenario(&cfg, workers)?.mean_acc);
            }
            table.insert(EquivalentDCell {
                m,
                n,
                d: d_values.to_vec(),
                accuracy,
            })?;
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_examples() {
        let v: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        assert!((ci_bound(&v, CiKind::H0Upper { alpha: 0.05 }).unwrap() - 0.955).abs() < 1e-12);
        assert!((ci_bound(&v, CiKind::HaLower { beta: 0.2 }).unwrap() - 0.28).abs() < 1e-12);
        let c = vec![0.5; 7];
        assert_eq!(ci_bound(&c, CiKind::H0Upper { alpha: 0.05 }).unwrap(), 0.5);
        assert_eq!(ci_bound(&c, CiKind::HaLower { beta: 0.2 }).unwrap(), 0.5);
        assert!(ci_bound(&[], CiKind::HaLower { beta: 0.2 }).is_err());
        assert!(ci_bound(&v, CiKind::HaLower { beta: 1.0 }).is_err());
    }

    #[test]
    fn cld_examples() {
        let sets = vec![vec![0, 1], vec![0, 5], vec![7, 9], vec![1, 0]];
        assert_eq!(confidence_cld(&sets, &[0, 1], 1).unwrap(), 0.75);
        assert_eq!(confidence_cld(&sets, &[0, 1], 2).unwrap(), 0.5);
        assert_eq!(confidence_cld(&sets, &[0, 1], 0).unwrap(), 1.0);
        assert!(confidence_cld(&sets, &[0, 1], 3).is_err());
        assert!(confidence_cld(&[vec![0]], &[0, 1], 1).is_err());
    }

    #[test]
    fn crossing_fixture() {
        let ns: Vec<f64> = (8..=40).map(|i| 5.0 * i as f64).collect();
        let h0: Vec<f64> = ns.iter().map(|n| 0.5 + 10.0 / n).collect();
        let ha: Vec<f64> = ns.iter().map(|n| 0.7 - 10.0 / n).collect();
        let exp = crossing_from_bounds(&ns, &h0, &ha, FitKind::TwoTermExp).unwrap();
        assert!((exp - 100.0).abs() < 1.5, "exp crossing {exp}");
        let quad = crossing_from_bounds(&ns, &h0, &ha, FitKind::Quadratic).unwrap();
        assert!((quad - 100.0).abs() < 4.0, "quadratic crossing {quad}");
    }

    #[test]
    fn crossing_diagnostics() {
        let ns = [50.0, 100.0, 150.0, 200.0, 250.0];
        let low = [0.6; 5];
        let high = [0.7; 5];
        let powered = crossing_from_bounds(&ns, &low, &high, FitKind::Quadratic).unwrap_err();
        assert!(matches!(&powered, Error::NoCrossing(m) if m.contains("powered at minimum n")));
        let under = crossing_from_bounds(&ns, &high, &low, FitKind::Quadratic).unwrap_err();
        assert!(matches!(&under, Error::NoCrossing(m) if m.contains("underpowered")));
    }

    #[test]
    fn scenario_id_ignores_seed_and_reps() {
        let base = McConfig::new(DatasetSpec::balanced(20, 4, 2, 0.5), CvMethod::KFold);
        let other = base.clone().with_seed(9).with_repetitions(3);
        assert_eq!(base.scenario_id(), other.scenario_id());
        let mut moved = base.clone();
        moved.spec.d_effect = 0.6;
        assert_ne!(base.scenario_id(), moved.scenario_id());
    }

    #[test]
    fn infeasible_rejected_before_running() {
        let cfg =
            McConfig::new(DatasetSpec::balanced(9, 4, 2, 0.5), CvMethod::KFold).with_repetitions(2);
        assert!(matches!(
            run_scenario(&cfg, 1),
            Err(Error::InfeasibleSplit(_))
        ));
        let cfg = McConfig::new(DatasetSpec::balanced(20, 4, 2, 0.5), CvMethod::KFold)
            .with_repetitions(1);
        assert!(run_scenario(&cfg, 1).is_err());
    }

    #[test]
    fn small_scenario_summary() {
        let cfg = McConfig::new(DatasetSpec::balanced(20, 4, 2, 1.0), CvMethod::KFold)
            .with_repetitions(6)
            .with_seed(3);
        let s = run_scenario(&cfg, 1).unwrap();
        assert_eq!(s.accuracies.len(), 6);
        assert!(s.h0_upper.is_none() && s.ha_lower.is_some());
        let c1 = s.confidence[&(2, 1)];
        let c2 = s.confidence[&(2, 2)];
        assert!(c1 >= c2);
        let total: f64 = s.selection_counts.iter().sum();
        assert!((total - 2.0).abs() < 1e-12);
        assert_eq!(run_scenario(&cfg, 2).unwrap(), s);
    }
}
