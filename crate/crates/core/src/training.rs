//! Pair-loss training with Adam.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{build_ground_truth, LoopGroundTruth, PairLabel, Sequence, Triplet, TripletSampler};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::model::{network, Descriptor, ModelState};
use crate::ops::{cosine_similarity, BatchNormMode};
use crate::optim::Adam;
use crate::projection::{project, ProjectionConfig, RangeImage};
use crate::tensor::Real;

pub const DEFAULT_LEARNING_RATE: Real = 1e-3;
pub const DEFAULT_MARGIN: Real = 0.85;
pub const SIMILARITY_STABILIZER: Real = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: Real,
    pub margin: Real,
    pub epochs: usize,
    pub pairs_per_epoch: usize,
    pub seed: u64,
    pub stabilizer: Real,
    /// Keep every attention γ at its current value.
    pub freeze_gamma: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: DEFAULT_LEARNING_RATE,
            margin: DEFAULT_MARGIN,
            epochs: 20,
            pairs_per_epoch: 100,
            seed: 0,
            stabilizer: SIMILARITY_STABILIZER,
            freeze_gamma: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.margin < 1.0) {
            return Err(Error::Config(format!("margin {} outside (0, 1)", self.margin)));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be finite and >= 0", self.learning_rate)));
        }
        if !(self.stabilizer > 0.0) {
            return Err(Error::Config("similarity stabilizer must be positive".into()));
        }
        Ok(())
    }
}

/// A sequence with its loop ground truth.
pub struct LabeledSequence {
    pub sequence: Sequence,
    pub ground_truth: LoopGroundTruth,
}

impl LabeledSequence {
    pub fn new(sequence: Sequence, r_th: f64, min_frame_gap: usize) -> Result<Self> {
        let ground_truth = build_ground_truth(&sequence.trajectory, r_th, min_frame_gap)?;
        Ok(Self { sequence, ground_truth })
    }

    pub fn tag(&self) -> &str {
        &self.sequence.tag
    }

    /// Projected range image of the frame with id `frame_id`.
    pub fn image(&self, frame_id: u64, projection: &ProjectionConfig) -> Result<RangeImage> {
        let i = self.sequence.trajectory.index_of(frame_id).ok_or_else(|| {
            Error::Data(format!("frame {frame_id} not in sequence {}", self.sequence.tag))
        })?;
        project(&self.sequence.frames.load(i)?, projection)
    }
}

/// `1 - s` for positives, `max(0, s - margin)` for negatives.
pub fn pair_loss(query: &Descriptor, other: &Descriptor, label: PairLabel, margin: Real) -> Result<Real> {
    let s = cosine_similarity(&query.to_real(), &other.to_real(), SIMILARITY_STABILIZER)?;
    Ok(match label {
        PairLabel::Positive => 1.0 - s,
        PairLabel::Negative => (s - margin).max(0.0),
    })
}

/// Graph nodes of one triplet step.
#[derive(Clone, Copy, Debug)]
pub struct TripletLoss {
    pub loss: Var,
    pub positive_similarity: Var,
    pub negative_similarity: Var,
}

/// Records `(1 - s(q, p)) + max(0, s(q, n) - margin)` on `graph`.
pub fn triplet_loss(
    graph: &mut Graph,
    query: Var,
    positive: Var,
    negative: Var,
    margin: Real,
    stabilizer: Real,
) -> Result<TripletLoss> {
    let positive_similarity = graph.cosine_similarity(query, positive, stabilizer)?;
    let negative_similarity = graph.cosine_similarity(query, negative, stabilizer)?;
    let pos = graph.affine(positive_similarity, -1.0, 1.0);
    let neg = graph.hinge(negative_similarity, margin);
    let loss = graph.add(pos, neg)?;
    Ok(TripletLoss {
        loss,
        positive_similarity,
        negative_similarity,
    })
}

/// Values of one optimization step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: Real,
    pub positive_similarity: Real,
    pub negative_similarity: Real,
}

impl StepRecord {
    /// `epoch,step,loss,pos_sim,neg_sim`
    pub fn log_line(&self) -> String {
        format!(
            "{},{},{:.9},{:.9},{:.9}",
            self.epoch, self.step, self.loss, self.positive_similarity, self.negative_similarity
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: Real,
    pub mean_positive_similarity: Real,
    pub mean_negative_similarity: Real,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub final_gammas: Vec<Real>,
    pub seconds: f64,
}

/// Hooks called during [`train`].
pub trait TrainObserver {
    fn on_step(&mut self, _record: &StepRecord) -> Result<()> {
        Ok(())
    }

    fn on_epoch(&mut self, _record: &EpochRecord, _state: &ModelState) -> Result<()> {
        Ok(())
    }
}

/// Observer that ignores everything.
pub struct Silent;

impl TrainObserver for Silent {}

/// Forward and backward of one triplet in train mode. Leaves gradients on
/// `state`'s parameters and folds the batch statistics into its running stats.
pub fn triplet_step(
    state: &mut ModelState,
    images: [&RangeImage; 3],
    margin: Real,
    stabilizer: Real,
) -> Result<(Real, Real, Real)> {
    let mut g = Graph::new();
    let b = state.bind(&mut g, BatchNormMode::Train);
    let mut outs = [None; 3];
    for (slot, image) in outs.iter_mut().zip(images) {
        let x = g.constant(image.tensor.clone());
        *slot = Some(network::descriptor(&mut g, &b, x)?);
    }
    let [q, p, n] = outs.map(|v| v.expect("filled"));
    drop(b);
    let t = triplet_loss(&mut g, q, p, n, margin, stabilizer)?;
    let values = (
        g.value(t.loss).data()[0],
        g.value(t.positive_similarity).data()[0],
        g.value(t.negative_similarity).data()[0],
    );
    if !values.0.is_finite() {
        return Ok(values);
    }
    g.backward(t.loss)?;
    state.load_grads(&g);
    state.apply_bn_updates(&g);
    Ok(values)
}

struct Source<'a> {
    data: &'a LabeledSequence,
    sampler: TripletSampler,
}

fn sources<'a>(data: &[&'a LabeledSequence]) -> Result<Vec<Source<'a>>> {
    let sources: Vec<Source> = data
        .iter()
        .filter(|d| !d.ground_truth.is_empty())
        .map(|d| {
            Ok(Source {
                data: d,
                sampler: TripletSampler::new(&d.ground_truth, &d.sequence.trajectory)?,
            })
        })
        .collect::<Result<_>>()?;
    if sources.is_empty() {
        return Err(Error::Data("no training sequence has a loop-closing query".into()));
    }
    Ok(sources)
}

fn draw<'a>(sources: &'a [Source], total: usize, rng: &mut ChaCha8Rng) -> Result<(&'a LabeledSequence, Triplet)> {
    let mut k = rng.random_range(0..total);
    for s in sources {
        if k < s.sampler.query_count() {
            return Ok((s.data, s.sampler.draw(rng)?));
        }
        k -= s.sampler.query_count();
    }
    unreachable!("k < total")
}

/// Trains `state` on triplets drawn from `data`, one triplet per step.
pub fn train(
    mut state: ModelState,
    data: &[&LabeledSequence],
    projection: &ProjectionConfig,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<(ModelState, TrainReport)> {
    cfg.validate()?;
    let started = Instant::now();
    let mut report = TrainReport {
        epochs: Vec::with_capacity(cfg.epochs),
        final_gammas: state.gammas(),
        seconds: 0.0,
    };
    if cfg.epochs == 0 {
        return Ok((state, report));
    }
    let sources = sources(data)?;
    let total: usize = sources.iter().map(|s| s.sampler.query_count()).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let adam = Adam::with_lr(cfg.learning_rate);
    let frozen: Vec<String> = if cfg.freeze_gamma { state.gamma_names() } else { Vec::new() };
    for epoch in 1..=cfg.epochs {
        let (mut loss_sum, mut pos_sum, mut neg_sum) = (0.0, 0.0, 0.0);
        for step in 1..=cfg.pairs_per_epoch {
            let (seq, t) = draw(&sources, total, &mut rng)?;
            let images = [
                seq.image(t.query, projection)?,
                seq.image(t.positive, projection)?,
                seq.image(t.negative, projection)?,
            ];
            let (loss, pos, neg) = triplet_step(&mut state, [&images[0], &images[1], &images[2]], cfg.margin, cfg.stabilizer)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss {loss} at epoch {epoch} step {step} (sequence {}, query {}, positive {}, negative {})",
                    seq.tag(),
                    t.query,
                    t.positive,
                    t.negative
                )));
            }
            adam.step(state.parameters_mut().iter_mut().filter(|p| !frozen.contains(&p.name)))?;
            observer.on_step(&StepRecord {
                epoch,
                step,
                loss,
                positive_similarity: pos,
                negative_similarity: neg,
            })?;
            loss_sum += loss;
            pos_sum += pos;
            neg_sum += neg;
        }
        let n = cfg.pairs_per_epoch.max(1) as Real;
        let record = EpochRecord {
            epoch,
            mean_loss: loss_sum / n,
            mean_positive_similarity: pos_sum / n,
            mean_negative_similarity: neg_sum / n,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} pos {:.4} neg {:.4}",
            record.mean_loss,
            record.mean_positive_similarity,
            record.mean_negative_similarity
        );
        observer.on_epoch(&record, &state)?;
        report.epochs.push(record);
    }
    report.final_gammas = state.gammas();
    report.seconds = started.elapsed().as_secs_f64();
    Ok((state, report))
}

/// Mean cross-validated F1 for one margin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarginRow {
    pub margin: Real,
    pub mean_f1: Real,
}

/// Cross-validates once per margin with everything else, including the seed, shared.
pub fn margin_sweep(
    margins: &[Real],
    sequences: &[LabeledSequence],
    model: &crate::model::ModelConfig,
    train_cfg: &TrainConfig,
    protocol: &crate::evaluation::EvalProtocol,
    projection: &ProjectionConfig,
) -> Result<Vec<MarginRow>> {
    if margins.is_empty() {
        return Err(Error::Config("margin sweep needs at least one margin".into()));
    }
    margins
        .iter()
        .map(|&margin| {
            let cfg = TrainConfig {
                margin,
                ..train_cfg.clone()
            };
            let cv = crate::evaluation::cross_validate(sequences, model, &cfg, protocol, projection)?;
            Ok(MarginRow {
                margin,
                mean_f1: cv.mean_f1,
            })
        })
        .collect()
}
