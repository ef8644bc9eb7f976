use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LoopGroundTruth, Trajectory};
use crate::error::{Error, Result};

/// Negatives are at least this far (meters) from their query.
pub const NEGATIVE_MIN_DISTANCE: f64 = 20.0;

const MAX_QUERY_RETRIES: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairLabel {
    Positive,
    Negative,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairSample {
    pub query_id: u64,
    pub other_id: u64,
    pub label: PairLabel,
}

/// A query with one loop-closing positive and one distant negative.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Triplet {
    pub query: u64,
    pub positive: u64,
    pub negative: u64,
}

/// Draws triplets from one sequence's ground truth.
pub struct TripletSampler {
    queries: Vec<u64>,
    positives: Vec<Vec<u64>>,
    negatives: Vec<Vec<u64>>,
}

impl TripletSampler {
    pub fn new(gt: &LoopGroundTruth, traj: &Trajectory) -> Result<Self> {
        if gt.is_empty() {
            return Err(Error::Data("pair sampling needs at least one query with a loop".into()));
        }
        let mut queries = Vec::with_capacity(gt.query_count());
        let mut positives = Vec::with_capacity(gt.query_count());
        let mut negatives = Vec::with_capacity(gt.query_count());
        for (&q, refs) in &gt.loops {
            let qi = traj
                .index_of(q)
                .ok_or_else(|| Error::Data(format!("query frame {q} missing from trajectory")))?;
            let far = (0..traj.len())
                .filter(|&i| traj.distance(qi, i) > NEGATIVE_MIN_DISTANCE)
                .map(|i| traj.frame_ids[i])
                .collect();
            queries.push(q);
            positives.push(refs.iter().copied().collect());
            negatives.push(far);
        }
        Ok(Self {
            queries,
            positives,
            negatives,
        })
    }

    pub fn query_count(&self) -> usize {
        self.queries.len()
    }

    /// Picks a random query and returns it with one positive and one negative.
    /// Queries without any frame beyond the negative distance are redrawn a
    /// bounded number of times.
    pub fn draw(&self, rng: &mut impl Rng) -> Result<Triplet> {
        for _ in 0..MAX_QUERY_RETRIES {
            let k = rng.random_range(0..self.queries.len());
            if self.negatives[k].is_empty() {
                continue;
            }
            let positive = self.positives[k][rng.random_range(0..self.positives[k].len())];
            let negative = self.negatives[k][rng.random_range(0..self.negatives[k].len())];
            return Ok(Triplet {
                query: self.queries[k],
                positive,
                negative,
            });
        }
        Err(Error::Data(format!(
            "no query with a negative farther than {NEGATIVE_MIN_DISTANCE} m after {MAX_QUERY_RETRIES} draws"
        )))
    }
}

/// `count` draws, each yielding a positive pair followed by a negative pair.
pub fn sample_pairs(gt: &LoopGroundTruth, traj: &Trajectory, count: usize, seed: u64) -> Result<Vec<PairSample>> {
    let sampler = TripletSampler::new(gt, traj)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(2 * count);
    for _ in 0..count {
        let t = sampler.draw(&mut rng)?;
        out.push(PairSample {
            query_id: t.query,
            other_id: t.positive,
            label: PairLabel::Positive,
        });
        out.push(PairSample {
            query_id: t.query,
            other_id: t.negative,
            label: PairLabel::Negative,
        });
    }
    Ok(out)
}
