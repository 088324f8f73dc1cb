//! Turns candidate solutions into per-example detection scores, flags the
//! top-scoring examples, and computes evaluation metrics.

use crate::error::{Error, Result};
use crate::maxsum::CandidateSolution;
use crate::subset_sim::SubsetRecord;

/// Provenance of a score vector: which search configuration produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoreProvenance {
    pub k_set: Vec<usize>,
    pub restarts: usize,
    pub base_seed: u64,
}

/// Per-training-example detection scores.
#[derive(Debug, Clone)]
pub struct ScoreVector {
    pub scores: Vec<f64>,
    pub provenance: Option<ScoreProvenance>,
}

impl ScoreVector {
    pub fn with_provenance(mut self, provenance: ScoreProvenance) -> Self {
        self.provenance = Some(provenance);
        self
    }
}

/// Ground-truth poison labels for evaluation.
#[derive(Debug, Clone)]
pub struct EvalLabels {
    pub is_poisoned: Vec<bool>,
}

impl EvalLabels {
    pub fn positives(&self) -> usize {
        self.is_poisoned.iter().filter(|&&b| b).count()
    }
}

/// Score each example by the weighted number of candidate solutions that
/// include it: `s_i = sum_k (1/k) * sum_l v^{k,l}_i`.
pub fn aggregate_scores(candidates: &[CandidateSolution], n: usize) -> Result<ScoreVector> {
    let mut scores = vec![0.0; n];
    for cand in candidates {
        if cand.v.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "candidate indicator length {} but n={n}",
                cand.v.len()
            )));
        }
        let weight = 1.0 / cand.k as f64;
        for i in cand.v.support_indices() {
            scores[i] += weight;
        }
    }
    Ok(ScoreVector { scores, provenance: None })
}

/// Flag exactly `ceil(fraction * n)` indices with the highest scores; ties
/// at the threshold are broken by smaller index first.
pub fn flag_top(scores: &ScoreVector, fraction: f64) -> Result<Vec<bool>> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("fraction={fraction} outside (0, 1)")));
    }
    let n = scores.scores.len();
    let count = (fraction * n as f64).ceil() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        scores.scores[b].total_cmp(&scores.scores[a]).then(a.cmp(&b))
    });
    let mut flagged = vec![false; n];
    for &i in order.iter().take(count) {
        flagged[i] = true;
    }
    Ok(flagged)
}

/// Area under the ROC curve via the rank (Mann-Whitney) formulation: the
/// fraction of (positive, negative) pairs where the positive outscores the
/// negative, ties counted half.
pub fn auroc(scores: &[f64], labels: &EvalLabels) -> Result<f64> {
    if scores.len() != labels.is_poisoned.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.is_poisoned.len()
        )));
    }
    let pos = labels.positives();
    let neg = scores.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidArgument(
            "AUROC needs at least one positive and one negative label".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average ranks over tie groups, 1-based
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels.is_poisoned[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// Mean output over the given target indices across all records.
pub fn perf_average(records: &[SubsetRecord], targets: &[usize]) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::InvalidArgument("empty target set".into()));
    }
    if records.is_empty() {
        return Err(Error::InvalidArgument("no records".into()));
    }
    let mut total = 0.0;
    for rec in records {
        for &z in targets {
            let out = rec.outputs.get(z).ok_or_else(|| {
                Error::DimensionMismatch(format!(
                    "target {z} out of range for {} outputs",
                    rec.outputs.len()
                ))
            })?;
            total += out;
        }
    }
    Ok(total / (records.len() * targets.len()) as f64)
}
