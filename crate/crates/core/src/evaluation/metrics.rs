use crate::data::LoopGroundTruth;
use crate::error::{Error, Result};
use crate::model::Descriptor;
use crate::retrieval::{DescriptorMap, MatchResult};
use crate::tensor::Real;

pub const DEFAULT_TOP_N: [usize; 11] = [1, 2, 4, 6, 8, 10, 20, 30, 40, 50, 60];
pub const DEFAULT_THRESHOLD: Real = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalProtocol {
    pub top_n: Vec<usize>,
    /// Top-1 similarity at or above which a retrieval counts as made.
    pub threshold: Real,
    pub r_th: f64,
    pub min_frame_gap: usize,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            top_n: DEFAULT_TOP_N.to_vec(),
            threshold: DEFAULT_THRESHOLD,
            r_th: crate::data::DEFAULT_R_TH,
            min_frame_gap: crate::data::DEFAULT_MIN_FRAME_GAP,
        }
    }
}

impl EvalProtocol {
    pub fn validate(&self) -> Result<()> {
        validate_top_n(&self.top_n)?;
        if !self.threshold.is_finite() {
            return Err(Error::Config("similarity threshold must be finite".into()));
        }
        if !(self.r_th > 0.0 && self.r_th.is_finite()) {
            return Err(Error::Config(format!("r_th {} must be positive", self.r_th)));
        }
        Ok(())
    }
}

fn validate_top_n(top_n: &[usize]) -> Result<()> {
    if top_n.is_empty() || top_n[0] == 0 || top_n.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!(
            "top-N list {top_n:?} must be non-empty, strictly increasing and >= 1"
        )));
    }
    Ok(())
}

/// Precision, recall and F1 from top-1 counts.
#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub tag: String,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: Real,
    pub recall: Real,
    pub f1: Real,
}

fn ratio(num: usize, den: usize) -> Real {
    if den == 0 {
        0.0
    } else {
        num as Real / den as Real
    }
}

impl Metrics {
    pub fn from_counts(tag: impl Into<String>, tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            tag: tag.into(),
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            precision,
            recall,
            f1,
        }
    }
}

/// What happened to one query at top-1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Top1Outcome {
    /// Best candidate above threshold and a true loop.
    Correct,
    /// Best candidate above threshold but not a loop.
    Wrong,
    /// Nothing above threshold.
    NotRetrieved,
}

impl Top1Outcome {
    pub fn classify(best: Option<(u64, Real)>, query: u64, gt: &LoopGroundTruth, threshold: Real) -> Self {
        match best {
            Some((frame, s)) if s >= threshold => {
                if gt.is_loop(query, frame) {
                    Top1Outcome::Correct
                } else {
                    Top1Outcome::Wrong
                }
            }
            _ => Top1Outcome::NotRetrieved,
        }
    }
}

/// Counts outcomes. Every query is a loop, so anything other than a correct
/// retrieval is a missed loop: `TP + FN` equals the number of queries.
pub fn metrics_from_outcomes(tag: impl Into<String>, outcomes: &[Top1Outcome]) -> Metrics {
    let tp = outcomes.iter().filter(|o| **o == Top1Outcome::Correct).count();
    let fp = outcomes.iter().filter(|o| **o == Top1Outcome::Wrong).count();
    Metrics::from_counts(tag, tp, fp, outcomes.len() - tp)
}

fn check_queries(queries: &[Descriptor], gt: &LoopGroundTruth) -> Result<()> {
    if queries.is_empty() {
        return Err(Error::Data("evaluation needs at least one query".into()));
    }
    if let Some(q) = queries.iter().find(|q| !gt.queries.contains(&q.frame_id)) {
        return Err(Error::Data(format!("frame {} is not a loop query in the ground truth", q.frame_id)));
    }
    Ok(())
}

/// Top-`n` eligible references (far enough back in the sequence) per query.
pub fn search(map: &DescriptorMap, queries: &[Descriptor], gt: &LoopGroundTruth, n: usize) -> Result<Vec<MatchResult>> {
    use rayon::prelude::*;
    queries
        .par_iter()
        .map(|q| map.query_filtered(q, n, |r| gt.is_eligible_reference(q.frame_id, r)))
        .collect()
}

/// Per-query top-1 outcomes.
pub fn top1_outcomes(
    map: &DescriptorMap,
    queries: &[Descriptor],
    gt: &LoopGroundTruth,
    threshold: Real,
) -> Result<Vec<Top1Outcome>> {
    check_queries(queries, gt)?;
    Ok(search(map, queries, gt, 1)?
        .iter()
        .map(|m| {
            let best = m.best().map(|c| (c.frame_id, c.similarity));
            Top1Outcome::classify(best, m.query_frame_id, gt, threshold)
        })
        .collect())
}

/// Top-1 precision/recall/F1 with a retrieval threshold.
pub fn evaluate_top1(map: &DescriptorMap, queries: &[Descriptor], gt: &LoopGroundTruth, threshold: Real) -> Result<Metrics> {
    Ok(metrics_from_outcomes(map.tag.clone(), &top1_outcomes(map, queries, gt, threshold)?))
}

/// `(N, recall)` points; non-decreasing in N.
#[derive(Clone, Debug, PartialEq)]
pub struct RecallCurve {
    pub points: Vec<(usize, Real)>,
}

impl RecallCurve {
    pub fn at(&self, n: usize) -> Option<Real> {
        self.points.iter().find(|(k, _)| *k == n).map(|(_, r)| *r)
    }
}

/// Rank (0-based) of the first true loop in each ranked candidate list.
pub fn first_hit_ranks(results: &[MatchResult], gt: &LoopGroundTruth) -> Vec<Option<usize>> {
    results
        .iter()
        .map(|m| m.candidates.iter().position(|c| gt.is_loop(m.query_frame_id, c.frame_id)))
        .collect()
}

/// Fraction of queries with a true loop among their top N, for each N.
pub fn recall_curve_from_ranks(ranks: &[Option<usize>], top_n: &[usize]) -> RecallCurve {
    RecallCurve {
        points: top_n
            .iter()
            .map(|&n| (n, ratio(ranks.iter().filter(|r| r.is_some_and(|r| r < n)).count(), ranks.len())))
            .collect(),
    }
}

pub fn recall_at_n(map: &DescriptorMap, queries: &[Descriptor], gt: &LoopGroundTruth, top_n: &[usize]) -> Result<RecallCurve> {
    validate_top_n(top_n)?;
    check_queries(queries, gt)?;
    let results = search(map, queries, gt, *top_n.last().expect("validated"))?;
    Ok(recall_curve_from_ranks(&first_hit_ranks(&results, gt), top_n))
}
