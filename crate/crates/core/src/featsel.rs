//! Wrapper forward feature selection.

use serde::{Deserialize, Serialize};

use crate::cv::CvEstimate;
use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SelectionConfig {
    /// Select exactly `target` features.
    FixedSize { target: usize },
    /// Keep adding while the best candidate improves the cost by more than
    /// `epsilon`. The first feature is always taken.
    AutoStop { epsilon: f64 },
}

impl SelectionConfig {
    pub fn fixed(target: usize) -> Self {
        SelectionConfig::FixedSize { target }
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        match *self {
            SelectionConfig::FixedSize { target } if target == 0 || target > m => Err(invalid(
                format!("fixed-size target {target} must lie in 1..={m}"),
            )),
            SelectionConfig::AutoStop { epsilon } if !(epsilon >= 0.0) => {
                Err(invalid("improvement epsilon must be >= 0"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionResult {
    pub selected: Vec<usize>,
    /// Best mean cost after each accepted step.
    pub cost_trace: Vec<f64>,
}

/// Greedy forward search over `m` features.
///
/// At each step every unselected feature `f` is scored with
/// `cost_fn(selected ++ [f])`; the highest mean accuracy wins and ties go to
/// the lowest index.
pub fn forward_select<F>(m: usize, mut cost_fn: F, cfg: &SelectionConfig) -> Result<SelectionResult>
where
    F: FnMut(&[usize]) -> Result<CvEstimate>,
{
    if m == 0 {
        return Err(invalid("no features to select from"));
    }
    cfg.validate(m)?;
    let limit = match *cfg {
        SelectionConfig::FixedSize { target } => target,
        SelectionConfig::AutoStop { .. } => m,
    };

    let mut selected: Vec<usize> = Vec::with_capacity(limit);
    let mut cost_trace = Vec::with_capacity(limit);
    let mut in_set = vec![false; m];
    let mut trial = Vec::with_capacity(limit);

    while selected.len() < limit {
        let step = selected.len();
        let mut best: Option<(usize, f64)> = None;
        for f in (0..m).filter(|&f| !in_set[f]) {
            trial.clear();
            trial.extend_from_slice(&selected);
            trial.push(f);
            let score = cost_fn(&trial)
                .map_err(|e| Error::Selection {
                    step,
                    source: Box::new(e),
                })?
                .mean_acc;
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((f, score));
            }
        }
        let (f, score) = best.expect("at least one unselected feature");
        if let SelectionConfig::AutoStop { epsilon } = *cfg {
            if let Some(&last) = cost_trace.last() {
                if score - last <= epsilon {
                    break;
                }
            }
        }
        in_set[f] = true;
        selected.push(f);
        cost_trace.push(score);
    }

    Ok(SelectionResult {
        selected,
        cost_trace,
    })
}
