use std::time::Instant;

use rayon::prelude::*;

use crate::data::{PointCloud, Sequence};
use crate::error::{Error, Result};
use crate::model::{describe, Descriptor, ModelConfig, ModelState, WidthPreset};
use crate::projection::ProjectionConfig;
use crate::retrieval::{build_map, DescriptorMap};
use crate::tensor::Real;
use crate::training::{train, LabeledSequence, Silent, TrainConfig, TrainReport};

use super::metrics::{evaluate_top1, recall_at_n, EvalProtocol, Metrics, RecallCurve};

/// Descriptors of every frame, in frame order.
pub fn describe_sequence(state: &ModelState, sequence: &Sequence, projection: &ProjectionConfig) -> Result<Vec<Descriptor>> {
    (0..sequence.len())
        .into_par_iter()
        .map(|i| describe(&sequence.frames.load(i)?, state, projection))
        .collect()
}

#[derive(Clone, Debug)]
pub struct SequenceEvaluation {
    pub metrics: Metrics,
    pub curve: RecallCurve,
    pub map: DescriptorMap,
}

fn check_protocol(data: &LabeledSequence, protocol: &EvalProtocol) -> Result<()> {
    let gt = &data.ground_truth;
    if gt.r_th != protocol.r_th || gt.min_frame_gap != protocol.min_frame_gap {
        return Err(Error::Config(format!(
            "sequence {} ground truth uses r_th {} / gap {}, protocol says {} / {}",
            data.tag(),
            gt.r_th,
            gt.min_frame_gap,
            protocol.r_th,
            protocol.min_frame_gap
        )));
    }
    Ok(())
}

/// Describes every frame, maps them all and queries each loop frame
/// against the references far enough back in the sequence.
pub fn evaluate_sequence(
    state: &ModelState,
    data: &LabeledSequence,
    projection: &ProjectionConfig,
    protocol: &EvalProtocol,
) -> Result<SequenceEvaluation> {
    protocol.validate()?;
    check_protocol(data, protocol)?;
    let descriptors = describe_sequence(state, &data.sequence, projection)?;
    let map = build_map(descriptors, data.tag())?;
    evaluate_map(&map, data, protocol)
}

/// Evaluation against an existing map of the sequence.
pub fn evaluate_map(map: &DescriptorMap, data: &LabeledSequence, protocol: &EvalProtocol) -> Result<SequenceEvaluation> {
    let gt = &data.ground_truth;
    let queries: Vec<Descriptor> = map
        .entries()
        .iter()
        .filter(|d| gt.queries.contains(&d.frame_id))
        .cloned()
        .collect();
    let mut metrics = evaluate_top1(map, &queries, gt, protocol.threshold)?;
    metrics.tag = data.tag().to_string();
    let curve = recall_at_n(map, &queries, gt, &protocol.top_n)?;
    Ok(SequenceEvaluation {
        metrics,
        curve,
        map: map.clone(),
    })
}

#[derive(Clone, Debug)]
pub struct Fold {
    pub held_out: String,
    pub metrics: Metrics,
    pub curve: RecallCurve,
    pub training: TrainReport,
}

#[derive(Clone, Debug)]
pub struct CrossValidation {
    pub folds: Vec<Fold>,
    /// Held-out sequences without loops.
    pub skipped: Vec<String>,
    pub mean_precision: Real,
    pub mean_recall: Real,
    pub mean_f1: Real,
}

impl CrossValidation {
    pub fn f1_of(&self, tag: &str) -> Option<Real> {
        self.folds.iter().find(|f| f.held_out == tag).map(|f| f.metrics.f1)
    }

    pub fn mean_curve(&self) -> RecallCurve {
        let n = self.folds.len().max(1) as Real;
        let mut points = self.folds.first().map(|f| f.curve.points.clone()).unwrap_or_default();
        for (i, p) in points.iter_mut().enumerate() {
            p.1 = self.folds.iter().map(|f| f.curve.points[i].1).sum::<Real>() / n;
        }
        RecallCurve { points }
    }
}

fn mean(values: impl Iterator<Item = Real>) -> Real {
    let v: Vec<Real> = values.collect();
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<Real>() / v.len() as Real
    }
}

/// One fold per sequence: train a fresh model on the others, evaluate on it.
pub fn cross_validate(
    sequences: &[LabeledSequence],
    model: &ModelConfig,
    train_cfg: &TrainConfig,
    protocol: &EvalProtocol,
    projection: &ProjectionConfig,
) -> Result<CrossValidation> {
    if sequences.len() < 2 {
        return Err(Error::Data(format!(
            "cross-validation needs at least 2 sequences, got {}",
            sequences.len()
        )));
    }
    protocol.validate()?;
    let mut folds = Vec::new();
    let mut skipped = Vec::new();
    for (i, held_out) in sequences.iter().enumerate() {
        check_protocol(held_out, protocol)?;
        if held_out.ground_truth.is_empty() {
            log::warn!("fold {}: no loops in held-out sequence, skipped", held_out.tag());
            skipped.push(held_out.tag().to_string());
            continue;
        }
        let training: Vec<&LabeledSequence> = sequences
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, s)| s)
            .collect();
        let state = ModelState::new(model.clone(), train_cfg.seed)?;
        let (state, report) = train(state, &training, projection, train_cfg, &mut Silent)?;
        let eval = evaluate_sequence(&state, held_out, projection, protocol)?;
        log::info!("fold {}: f1 {:.4}", held_out.tag(), eval.metrics.f1);
        folds.push(Fold {
            held_out: held_out.tag().to_string(),
            metrics: eval.metrics,
            curve: eval.curve,
            training: report,
        });
    }
    if folds.is_empty() {
        return Err(Error::Data("every fold was skipped: no sequence has loops".into()));
    }
    Ok(CrossValidation {
        mean_precision: mean(folds.iter().map(|f| f.metrics.precision)),
        mean_recall: mean(folds.iter().map(|f| f.metrics.recall)),
        mean_f1: mean(folds.iter().map(|f| f.metrics.f1)),
        folds,
        skipped,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FpsReport {
    pub mean: f64,
    pub std: f64,
    /// Per repetition: `(frames, seconds)`.
    pub repetitions: Vec<(usize, f64)>,
}

pub const FPS_REPETITIONS: usize = 3;

/// Single-threaded projection + forward throughput over `clouds[warmup..]`.
pub fn measure_fps(
    state: &ModelState,
    clouds: &[PointCloud],
    projection: &ProjectionConfig,
    warmup: usize,
) -> Result<FpsReport> {
    if clouds.len() <= warmup {
        return Err(Error::Data(format!(
            "fps needs frames beyond the {warmup} warmup frames, got {}",
            clouds.len()
        )));
    }
    for c in &clouds[..warmup] {
        describe(c, state, projection)?;
    }
    let timed = &clouds[warmup..];
    let mut repetitions = Vec::with_capacity(FPS_REPETITIONS);
    for _ in 0..FPS_REPETITIONS {
        let start = Instant::now();
        for c in timed {
            std::hint::black_box(describe(c, state, projection)?);
        }
        repetitions.push((timed.len(), start.elapsed().as_secs_f64()));
    }
    let rates: Vec<f64> = repetitions.iter().map(|(n, s)| *n as f64 / s.max(f64::MIN_POSITIVE)).collect();
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    let std = (rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / rates.len() as f64).sqrt();
    Ok(FpsReport { mean, std, repetitions })
}

/// Shared settings of every cell in an ablation grid.
#[derive(Clone, Debug)]
pub struct AblationSetup {
    pub preset: WidthPreset,
    pub descriptor_dim: usize,
    pub projection: ProjectionConfig,
    pub train: TrainConfig,
    pub protocol: EvalProtocol,
    pub fps_frames: usize,
    pub fps_warmup: usize,
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub config: String,
    pub outcome: Result<AblationCell, String>,
}

#[derive(Clone, Debug)]
pub struct AblationCell {
    pub cross_validation: CrossValidation,
    pub fps: FpsReport,
}

fn ablation_cell(x: usize, y: usize, sequences: &[LabeledSequence], setup: &AblationSetup) -> Result<AblationCell> {
    let p = &setup.projection;
    let model = ModelConfig::preset(setup.preset, x, y, p.height, p.width, setup.descriptor_dim)?;
    let cross_validation = cross_validate(sequences, &model, &setup.train, &setup.protocol, p)?;
    let source = &sequences[0].sequence.frames;
    let n = (setup.fps_frames + setup.fps_warmup).min(source.len());
    let clouds = (0..n).map(|i| source.load(i)).collect::<Result<Vec<_>>>()?;
    let state = ModelState::new(model, setup.train.seed)?;
    let fps = measure_fps(&state, &clouds, p, setup.fps_warmup)?;
    Ok(AblationCell { cross_validation, fps })
}

/// Cross-validates every `E{x}A{y}`; a failing cell is recorded and the grid continues.
pub fn ablation_grid(xs: &[usize], ys: &[usize], sequences: &[LabeledSequence], setup: &AblationSetup) -> Vec<AblationRow> {
    let mut rows = Vec::with_capacity(xs.len() * ys.len());
    for &x in xs {
        for &y in ys {
            let config = format!("E{x}A{y}");
            let outcome = ablation_cell(x, y, sequences, setup).map_err(|e| {
                log::warn!("{config} failed: {e}");
                e.to_string()
            });
            rows.push(AblationRow { config, outcome });
        }
    }
    rows
}
