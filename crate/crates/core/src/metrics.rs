//! Accuracy and group-fairness metrics, worst-k aggregation, Pareto fronts.
//!
//! Every disparity here is an absolute difference of positive rates between
//! the two sensitive groups, computed on hard predictions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Subgroup;
use crate::error::{Error, Result};

/// Scores and the hard decisions `score > 0.5` (a tie at 0.5 gives 0).
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub scores: Vec<f64>,
    pub hard: Vec<u8>,
}

impl Predictions {
    pub fn from_scores(scores: Vec<f64>) -> Self {
        let hard = scores.iter().map(|&p| u8::from(p > 0.5)).collect();
        Self { scores, hard }
    }

    pub fn len(&self) -> usize {
        self.hard.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hard.is_empty()
    }
}

pub fn accuracy(pred: &Predictions, labels: &[u8]) -> Result<f64> {
    if pred.len() != labels.len() {
        return Err(Error::Usage(format!(
            "{} predictions for {} labels",
            pred.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Usage("accuracy of an empty set".into()));
    }
    let correct = pred.hard.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(correct as f64 / labels.len() as f64)
}

fn positive_rate_gap(hard: &[u8], sensitive: &[u8], rows: impl Iterator<Item = usize>) -> Result<f64> {
    let mut count = [0usize; 2];
    let mut positive = [0usize; 2];
    for i in rows {
        let s = sensitive[i] as usize;
        count[s] += 1;
        positive[s] += hard[i] as usize;
    }
    if count[0] == 0 || count[1] == 0 {
        return Err(Error::UndefinedMetric(
            "disparate impact needs both sensitive groups".into(),
        ));
    }
    let r1 = positive[1] as f64 / count[1] as f64;
    let r0 = positive[0] as f64 / count[0] as f64;
    Ok((r1 - r0).abs())
}

/// `|P(ŷ=1 | s=1) − P(ŷ=1 | s=0)|`.
pub fn global_di(pred: &Predictions, sensitive: &[u8]) -> Result<f64> {
    if pred.len() != sensitive.len() {
        return Err(Error::Usage("prediction and sensitive lengths differ".into()));
    }
    positive_rate_gap(&pred.hard, sensitive, 0..sensitive.len())
}

/// Disparate impact restricted to each subgroup's members.
pub fn local_di(pred: &Predictions, sensitive: &[u8], subgroups: &[Subgroup]) -> Result<BTreeMap<String, f64>> {
    if pred.len() != sensitive.len() {
        return Err(Error::Usage("prediction and sensitive lengths differ".into()));
    }
    subgroups
        .iter()
        .map(|g| {
            if let Some(&bad) = g.members.iter().find(|&&i| i >= sensitive.len()) {
                return Err(Error::Usage(format!("subgroup {} has out-of-range index {bad}", g.id)));
            }
            positive_rate_gap(&pred.hard, sensitive, g.members.iter().copied())
                .map(|v| (g.id.clone(), v))
                .map_err(|e| Error::UndefinedMetric(format!("subgroup {}: {e}", g.id)))
        })
        .collect()
}

/// The k-th largest value (the smallest one when `k` exceeds the count).
pub fn worst_k_di(local: &BTreeMap<String, f64>, k: usize) -> Result<f64> {
    if local.is_empty() {
        return Err(Error::Usage("no local disparities to rank".into()));
    }
    if k == 0 {
        return Err(Error::Usage("k must be positive".into()));
    }
    let mut v: Vec<f64> = local.values().copied().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    Ok(v[(k - 1).min(v.len() - 1)])
}

/// `max(|TPR₁ − TPR₀|, |FPR₁ − FPR₀|)`.
pub fn eo_gap(pred: &Predictions, labels: &[u8], sensitive: &[u8]) -> Result<f64> {
    if pred.len() != labels.len() || labels.len() != sensitive.len() {
        return Err(Error::Usage("prediction, label and sensitive lengths differ".into()));
    }
    // [y][s]
    let mut count = [[0usize; 2]; 2];
    let mut positive = [[0usize; 2]; 2];
    for i in 0..labels.len() {
        let (y, s) = (labels[i] as usize, sensitive[i] as usize);
        count[y][s] += 1;
        positive[y][s] += pred.hard[i] as usize;
    }
    for (y, row) in count.iter().enumerate() {
        for (s, &c) in row.iter().enumerate() {
            if c == 0 {
                return Err(Error::UndefinedMetric(format!("(y={y}, s={s}) cell is empty")));
            }
        }
    }
    let rate = |y: usize, s: usize| positive[y][s] as f64 / count[y][s] as f64;
    let tpr_gap = (rate(1, 1) - rate(1, 0)).abs();
    let fpr_gap = (rate(0, 1) - rate(0, 0)).abs();
    Ok(tpr_gap.max(fpr_gap))
}

/// A candidate for a Pareto front: `x` is minimized, `y` maximized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub x: f64,
    pub y: f64,
    pub tag: String,
}

/// `a` dominates `b` when it is no worse on both axes and better on one.
pub fn dominates(a: &ParetoPoint, b: &ParetoPoint) -> bool {
    a.x <= b.x && a.y >= b.y && (a.x < b.x || a.y > b.y)
}

/// Non-dominated points among those satisfying `constraint`, sorted by `x`
/// ascending (ties by `y` descending, then input order). Points with NaN
/// coordinates are ignored; exact duplicates are all kept.
pub fn pareto_front<F>(points: &[ParetoPoint], constraint: F) -> Vec<ParetoPoint>
where
    F: Fn(&ParetoPoint) -> bool,
{
    let mut kept: Vec<(usize, &ParetoPoint)> = points
        .iter()
        .enumerate()
        .filter(|(_, p)| !p.x.is_nan() && !p.y.is_nan() && constraint(p))
        .collect();
    sort_front(&mut kept);

    let mut front = Vec::new();
    let mut best_y = f64::NEG_INFINITY;
    let mut i = 0;
    while i < kept.len() {
        let x = kept[i].1.x;
        let group_max = kept[i].1.y;
        let mut j = i;
        while j < kept.len() && kept[j].1.x == x {
            if kept[j].1.y == group_max && group_max > best_y {
                front.push(kept[j].1.clone());
            }
            j += 1;
        }
        best_y = best_y.max(group_max);
        i = j;
    }
    front
}

pub(crate) fn sort_front(points: &mut [(usize, &ParetoPoint)]) {
    points.sort_by(|a, b| {
        a.1.x
            .total_cmp(&b.1.x)
            .then(b.1.y.total_cmp(&a.1.y))
            .then(a.0.cmp(&b.0))
    });
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Usage("spearman needs two equal-length samples of size >= 2".into()));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::UndefinedMetric("spearman of a constant sample".into()));
    }
    Ok(cov / (va * vb).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hard(v: &[u8]) -> Predictions {
        Predictions::from_scores(v.iter().map(|&h| if h == 1 { 0.9 } else { 0.1 }).collect())
    }

    #[test]
    fn threshold_tie_is_negative() {
        let p = Predictions::from_scores(vec![0.5, 0.5000001, 0.4999]);
        assert_eq!(p.hard, vec![0, 1, 0]);
    }

    #[test]
    fn accuracy_cases() {
        let y = [1, 0, 1, 1];
        assert_eq!(accuracy(&hard(&y), &y).unwrap(), 1.0);
        assert_eq!(accuracy(&hard(&[0, 1, 0, 0]), &y).unwrap(), 0.0);
        assert_eq!(accuracy(&hard(&[1, 0, 1, 0]), &y).unwrap(), 0.75);
        assert!(accuracy(&hard(&[]), &[]).is_err());
    }

    #[test]
    fn global_di_cases() {
        assert_eq!(global_di(&hard(&[1, 0, 1, 0]), &[1, 1, 0, 0]).unwrap(), 0.0);
        assert_eq!(global_di(&hard(&[1, 1, 0, 0]), &[1, 1, 0, 0]).unwrap(), 1.0);
        // rates: s=1 → {1,0} = 0.5, s=0 → {1,0} = 0.5
        assert_eq!(global_di(&hard(&[1, 1, 0, 0]), &[1, 0, 1, 0]).unwrap(), 0.0);
        assert!(matches!(
            global_di(&hard(&[1, 0]), &[1, 1]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn local_di_whole_dataset_equals_global() {
        let p = hard(&[1, 1, 0, 1, 0, 0, 1]);
        let s = [1, 0, 1, 1, 0, 0, 1];
        let all = Subgroup {
            id: "all".into(),
            members: (0..7).collect(),
        };
        let local = local_di(&p, &s, &[all]).unwrap();
        assert_eq!(local["all"], global_di(&p, &s).unwrap());
    }

    #[test]
    fn worst_k_cases() {
        let m: BTreeMap<String, f64> = [("a", 0.1), ("b", 0.3), ("c", 0.2)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        assert_eq!(worst_k_di(&m, 1).unwrap(), 0.3);
        assert_eq!(worst_k_di(&m, 3).unwrap(), 0.1);
        assert_eq!(worst_k_di(&m, 5).unwrap(), 0.1);
        assert!(worst_k_di(&BTreeMap::new(), 1).is_err());
    }

    #[test]
    fn eo_gap_perfect_classifier() {
        let y = [0, 1, 0, 1];
        assert_eq!(eo_gap(&hard(&y), &y, &[0, 0, 1, 1]).unwrap(), 0.0);
    }

    #[test]
    fn eo_gap_eight_sample_table() {
        // (y, s, ŷ) enumerated by hand:
        // y=1,s=1: ŷ = 1,1 → TPR₁ = 1
        // y=1,s=0: ŷ = 1,0 → TPR₀ = 0.5
        // y=0,s=1: ŷ = 0,1 → FPR₁ = 0.5
        // y=0,s=0: ŷ = 0,0 → FPR₀ = 0
        let y = [1, 1, 1, 1, 0, 0, 0, 0];
        let s = [1, 1, 0, 0, 1, 1, 0, 0];
        let yh = [1, 1, 1, 0, 0, 1, 0, 0];
        assert_eq!(eo_gap(&hard(&yh), &y, &s).unwrap(), 0.5);
        let yh = [1, 1, 1, 0, 0, 0, 0, 0];
        assert_eq!(eo_gap(&hard(&yh), &y, &s).unwrap(), 0.5);
        let yh = [1, 1, 1, 1, 1, 0, 0, 0];
        assert_eq!(eo_gap(&hard(&yh), &y, &s).unwrap(), 0.5);
        assert!(matches!(
            eo_gap(&hard(&[1, 0]), &[1, 0], &[1, 1]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn eo_gap_takes_max_of_rate_gaps() {
        // TPR gap 0.2 (5 positives per group), FPR gap 0.1 (10 negatives per group)
        let mut y = Vec::new();
        let mut s = Vec::new();
        let mut yh = Vec::new();
        for (group, tp, fp) in [(1u8, 3usize, 2usize), (0u8, 2, 1)] {
            for i in 0..5 {
                y.push(1);
                s.push(group);
                yh.push(u8::from(i < tp));
            }
            for i in 0..10 {
                y.push(0);
                s.push(group);
                yh.push(u8::from(i < fp));
            }
        }
        let gap = eo_gap(&hard(&yh), &y, &s).unwrap();
        assert!((gap - 0.2).abs() < 1e-15);
    }

    fn pt(x: f64, y: f64) -> ParetoPoint {
        ParetoPoint { x, y, tag: format!("{x},{y}") }
    }

    #[test]
    fn pareto_basics() {
        assert_eq!(pareto_front(&[pt(0.1, 0.9)], |_| true), vec![pt(0.1, 0.9)]);
        assert_eq!(
            pareto_front(&[pt(0.2, 0.8), pt(0.1, 0.9)], |_| true),
            vec![pt(0.1, 0.9)]
        );
        let pts = [pt(0.1, 0.5), pt(0.2, 0.9), pt(0.2, 0.7), pt(0.3, 0.9), pt(0.05, 0.4)];
        assert_eq!(
            pareto_front(&pts, |_| true),
            vec![pt(0.05, 0.4), pt(0.1, 0.5), pt(0.2, 0.9)]
        );
        assert_eq!(pareto_front(&pts, |p| p.x > 0.15), vec![pt(0.2, 0.9)]);
        assert!(pareto_front(&pts, |_| false).is_empty());
    }

    #[test]
    fn spearman_cases() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(ranks(&[2.0, 1.0, 2.0]), vec![2.5, 1.0, 2.5]);
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn pareto_matches_brute_force(raw in proptest::collection::vec((0u8..20, 0u8..20), 0..80)) {
            let pts: Vec<ParetoPoint> = raw.iter().map(|&(x, y)| pt(x as f64 / 20.0, y as f64 / 20.0)).collect();
            let front = pareto_front(&pts, |_| true);
            let mut brute: Vec<(usize, &ParetoPoint)> = pts
                .iter()
                .enumerate()
                .filter(|(_, p)| !pts.iter().any(|q| dominates(q, p)))
                .collect();
            sort_front(&mut brute);
            let brute: Vec<ParetoPoint> = brute.into_iter().map(|(_, p)| p.clone()).collect();
            prop_assert_eq!(front, brute);
        }

        #[test]
        fn di_invariant_to_threshold_preserving_rescaling(
            scores in proptest::collection::vec(0.001f64..0.999, 4..60),
            power in 0.2f64..5.0,
        ) {
            let n = scores.len();
            let s: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
            // p ↦ p^a/(p^a + (1−p)^a) is strictly monotone and fixes 0.5
            let rescaled: Vec<f64> = scores
                .iter()
                .map(|&p| p.powf(power) / (p.powf(power) + (1.0 - p).powf(power)))
                .collect();
            let a = Predictions::from_scores(scores);
            let b = Predictions::from_scores(rescaled);
            prop_assert_eq!(&a.hard, &b.hard);
            prop_assert_eq!(global_di(&a, &s).unwrap(), global_di(&b, &s).unwrap());
        }
    }
}
