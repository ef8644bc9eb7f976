use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::Trajectory;
use crate::error::{Error, Result};

/// Loop radius in meters.
pub const DEFAULT_R_TH: f64 = 6.0;
/// Minimum temporal separation between a query and its references (10 s at 10 Hz).
pub const DEFAULT_MIN_FRAME_GAP: usize = 100;

/// Query frames and the earlier frames that close a loop with them.
#[derive(Clone, Debug, PartialEq)]
pub struct LoopGroundTruth {
    pub r_th: f64,
    pub min_frame_gap: usize,
    /// Frame ids of every frame in the sequence, ascending.
    pub frame_ids: Vec<u64>,
    pub queries: BTreeSet<u64>,
    pub loops: BTreeMap<u64, BTreeSet<u64>>,
    /// Set when the gap leaves no frame with any possible reference.
    pub gap_exceeds_sequence: bool,
}

impl LoopGroundTruth {
    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn query_count(&self) -> usize {
        self.queries.len()
    }

    pub fn is_loop(&self, query: u64, reference: u64) -> bool {
        self.loops.get(&query).is_some_and(|r| r.contains(&reference))
    }

    /// Whether `reference` was visited early enough to be searched for `query`.
    pub fn is_eligible_reference(&self, query: u64, reference: u64) -> bool {
        match (self.frame_ids.binary_search(&query), self.frame_ids.binary_search(&reference)) {
            (Ok(q), Ok(r)) => r + self.min_frame_gap <= q,
            _ => false,
        }
    }
}

/// Loop predicate `‖P_q − P_r‖ < r_th` over every query/reference pair where
/// the reference precedes the query by at least `min_frame_gap` frames.
pub fn build_ground_truth(traj: &Trajectory, r_th: f64, min_frame_gap: usize) -> Result<LoopGroundTruth> {
    if traj.is_empty() {
        return Err(Error::Data("ground truth needs a non-empty trajectory".into()));
    }
    if !(r_th > 0.0 && r_th.is_finite()) {
        return Err(Error::Config(format!("r_th must be positive, got {r_th}")));
    }
    let n = traj.len();
    let mut gt = LoopGroundTruth {
        r_th,
        min_frame_gap,
        frame_ids: traj.frame_ids.clone(),
        queries: BTreeSet::new(),
        loops: BTreeMap::new(),
        gap_exceeds_sequence: min_frame_gap >= n,
    };
    if gt.gap_exceeds_sequence {
        return Ok(gt);
    }

    // Uniform grid with r_th cells: candidates lie in the 27 neighboring cells.
    let cell = |p: &[f64; 3]| -> [i64; 3] { [0, 1, 2].map(|k| (p[k] / r_th).floor() as i64) };
    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (i, p) in traj.positions.iter().enumerate() {
        grid.entry(cell(p)).or_default().push(i);
    }
    for q in min_frame_gap..n {
        let c = cell(&traj.positions[q]);
        let mut refs = BTreeSet::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(bucket) = grid.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) else {
                        continue;
                    };
                    for &r in bucket {
                        if r + min_frame_gap <= q && traj.distance(q, r) < r_th {
                            refs.insert(traj.frame_ids[r]);
                        }
                    }
                }
            }
        }
        if !refs.is_empty() {
            let qid = traj.frame_ids[q];
            gt.queries.insert(qid);
            gt.loops.insert(qid, refs);
        }
    }
    Ok(gt)
}
