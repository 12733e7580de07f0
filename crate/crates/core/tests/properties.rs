use std::collections::HashSet;

use proptest::prelude::*;

use cvpower::cv::{consensus_features, split_holdout, split_kfold, CvEstimate};
use cvpower::datagen::{Dataset, Label, Matrix};
use cvpower::featsel::{forward_select, SelectionConfig};
use cvpower::mc::{confidence_cld, percentile};
use cvpower::rng::Stream;

fn labelled(n_neg: usize, n_pos: usize) -> Dataset {
    let n = n_neg + n_pos;
    let labels = (0..n)
        .map(|i| {
            if i < n_neg {
                Label::Negative
            } else {
                Label::Positive
            }
        })
        .collect();
    Dataset::new(Matrix::zeros(n, 1), labels).unwrap()
}

/// Deterministic pseudo-random score per subset, from its sorted contents.
fn score(subset: &[usize], salt: u64) -> f64 {
    let mut s = subset.to_vec();
    s.sort_unstable();
    let mut h = salt ^ 0x9e37_79b9_7f4a_7c15;
    for f in s {
        h = (h ^ f as u64).wrapping_mul(0x100_0000_01b3);
    }
    (h % 16) as f64 / 16.0
}

proptest! {
    #[test]
    fn kfold_is_stratified_partition(n_neg in 10usize..40, n_pos in 10usize..40, k in 2usize..10, seed: u64) {
        let ds = labelled(n_neg, n_pos);
        let plan = split_kfold(&ds, k, &mut Stream::from_seed(seed)).unwrap();
        let mut seen = vec![0usize; n_neg + n_pos];
        let mut totals = Vec::new();
        for f in 0..k {
            let part = plan.part(f);
            let pos = part.iter().filter(|&&i| i >= n_neg).count();
            let neg = part.len() - pos;
            prop_assert!(neg == n_neg / k || neg == n_neg.div_ceil(k));
            prop_assert!(pos == n_pos / k || pos == n_pos.div_ceil(k));
            totals.push(part.len());
            for i in part { seen[i] += 1; }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        prop_assert!(totals.iter().max().unwrap() - totals.iter().min().unwrap() <= 1);
    }

    #[test]
    fn holdout_is_stratified(n_neg in 4usize..60, n_pos in 4usize..60, frac in 0.2f64..0.8, seed: u64) {
        let ds = labelled(n_neg, n_pos);
        let plan = split_holdout(&ds, frac, &mut Stream::from_seed(seed)).unwrap();
        let train = plan.part(0);
        let pos = train.iter().filter(|&&i| i >= n_neg).count();
        prop_assert_eq!(pos, (frac * n_pos as f64).round() as usize);
        prop_assert_eq!(train.len() - pos, (frac * n_neg as f64).round() as usize);
        prop_assert_eq!(train.len() + plan.part(1).len(), n_neg + n_pos);
    }

    #[test]
    fn greedy_selection_matches_replay(m in 2usize..7, target in 1usize..6, salt: u64) {
        let target = target.min(m);
        let got = forward_select(m, |s| Ok(CvEstimate::single(score(s, salt))), &SelectionConfig::fixed(target)).unwrap();
        let mut chosen: Vec<usize> = Vec::new();
        for _ in 0..target {
            let mut best: Option<(usize, f64)> = None;
            for f in 0..m {
                if chosen.contains(&f) { continue; }
                let mut t = chosen.clone();
                t.push(f);
                let v = score(&t, salt);
                if best.is_none_or(|(_, b)| v > b) { best = Some((f, v)); }
            }
            chosen.push(best.unwrap().0);
        }
        prop_assert_eq!(got.selected, chosen);
        prop_assert!(got.cost_trace.len() == target);
    }

    #[test]
    fn auto_stop_trace_is_increasing(m in 2usize..8, eps in 0.0f64..0.2, salt: u64) {
        let got = forward_select(m, |s| Ok(CvEstimate::single(score(s, salt))), &SelectionConfig::AutoStop { epsilon: eps }).unwrap();
        prop_assert!(!got.selected.is_empty());
        for w in got.cost_trace.windows(2) {
            prop_assert!(w[1] - w[0] > eps);
        }
    }

    #[test]
    fn confidence_decreases_in_d(sets in prop::collection::vec(prop::sample::subsequence((0..8usize).collect::<Vec<_>>(), 3), 1..30)) {
        let truth = [0, 1, 2];
        let c: Vec<f64> = (0..=3).map(|d| confidence_cld(&sets, &truth, d).unwrap()).collect();
        prop_assert_eq!(c[0], 1.0);
        for w in c.windows(2) { prop_assert!(w[1] <= w[0]); }
        let exact = sets.iter().filter(|s| s.iter().all(|f| truth.contains(f))).count() as f64 / sets.len() as f64;
        prop_assert_eq!(c[3], exact);
    }

    #[test]
    fn percentile_within_range_and_monotone(mut v in prop::collection::vec(-1e3f64..1e3, 1..40), p in 0.0f64..1.0, q in 0.0f64..1.0) {
        let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
        let a = percentile(&v, lo).unwrap();
        let b = percentile(&v, hi).unwrap();
        v.sort_by(f64::total_cmp);
        prop_assert!(a <= b + 1e-9);
        prop_assert!(a >= v[0] && b <= v[v.len() - 1]);
    }

    #[test]
    fn consensus_is_a_most_frequent_candidate(sets in prop::collection::vec(prop::sample::subsequence((0..6usize).collect::<Vec<_>>(), 2), 1..10)) {
        let winner = consensus_features(&sets).unwrap();
        let count = |s: &[usize]| sets.iter().filter(|c| {
            let mut c = c.to_vec(); c.sort_unstable(); c == s
        }).count();
        let best = sets.iter().map(|s| count(s)).max().unwrap();
        prop_assert_eq!(count(&winner), best);
        let distinct: HashSet<Vec<usize>> = sets.iter().cloned().collect();
        prop_assert!(distinct.contains(&winner));
    }
}
