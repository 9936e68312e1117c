//! Event matching and precision/recall/F-measure.

use serde::{Deserialize, Serialize};

use crate::events::EventList;

/// Temporal intersection over union of two intervals.
pub fn iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl std::ops::Add for Counts {
    type Output = Counts;
    fn add(self, o: Counts) -> Counts {
        Counts { tp: self.tp + o.tp, fp: self.fp + o.fp, fn_: self.fn_ + o.fn_ }
    }
}

/// Maximum-cardinality matching between predictions and references, counting a pair
/// as a candidate when its IoU reaches `min_iou`. Predictions overlapping any `unknown`
/// interval are discarded first.
pub fn match_events(pred: &EventList, reference: &EventList, unknown: &[(f64, f64)], min_iou: f64) -> Counts {
    let preds: Vec<(f64, f64)> = pred
        .events
        .iter()
        .copied()
        .filter(|p| !unknown.iter().any(|u| p.0 < u.1 && u.0 < p.1))
        .collect();
    let refs = &reference.events;
    let adj: Vec<Vec<usize>> = preds
        .iter()
        .map(|&p| (0..refs.len()).filter(|&r| iou(p, refs[r]) >= min_iou).collect())
        .collect();

    // Kuhn's augmenting paths.
    let mut owner: Vec<Option<usize>> = vec![None; refs.len()];
    fn augment(p: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &r in &adj[p] {
            if seen[r] {
                continue;
            }
            seen[r] = true;
            if owner[r].is_none_or(|q| augment(q, adj, seen, owner)) {
                owner[r] = Some(p);
                return true;
            }
        }
        false
    }
    let mut tp = 0;
    for p in 0..preds.len() {
        let mut seen = vec![false; refs.len()];
        if augment(p, &adj, &mut seen, &mut owner) {
            tp += 1;
        }
    }
    Counts { tp, fp: preds.len() - tp, fn_: refs.len() - tp }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileCounts {
    pub file: String,
    pub counts: Counts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub files: Vec<FileCounts>,
    pub total: Counts,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

impl ScoreReport {
    pub fn f_percent(&self) -> f64 {
        self.f_measure * 100.0
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Micro-averaged scores: counts are summed over files before the ratios are taken.
pub fn score(files: &[FileCounts]) -> ScoreReport {
    let total = files.iter().fold(Counts::default(), |acc, f| acc + f.counts);
    let precision = ratio(total.tp, total.tp + total.fp);
    let recall = ratio(total.tp, total.tp + total.fn_);
    let f_measure = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    ScoreReport { files: files.to_vec(), total, precision, recall, f_measure }
}

/// Removes the first `n` reference events (the exemplars) and any prediction ending
/// before the last of them finishes. Returns the trimmed lists.
pub fn exclude_shots(pred: &EventList, reference: &EventList, n: usize) -> (EventList, EventList) {
    let mut refs = reference.events.clone();
    refs.sort_by(|a, b| a.0.total_cmp(&b.0));
    if refs.len() < n || n == 0 {
        return (pred.clone(), EventList::new(reference.file.clone(), refs));
    }
    let cutoff = refs[..n].iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let kept_refs = refs.split_off(n);
    let kept_preds = pred.events.iter().copied().filter(|p| p.1 > cutoff).collect();
    (EventList::new(pred.file.clone(), kept_preds), EventList::new(reference.file.clone(), kept_refs))
}
