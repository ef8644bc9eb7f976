//! Loss, optimizer and evaluation contracts.

mod common;

use attnet::data::PairLabel;
use attnet::evaluation::{describe_sequence, evaluate_map, evaluate_sequence, EvalProtocol, Metrics};
use attnet::model::{encode_checkpoint, Descriptor, ModelConfig, ModelState, WidthPreset};
use attnet::projection::ProjectionConfig;
use attnet::retrieval::{build_map, encode_map};
use attnet::training::{pair_loss, train, LabeledSequence, Silent, TrainConfig};
use attnet::Real;
use proptest::prelude::*;

struct Small {
    projection: ProjectionConfig,
    model: ModelConfig,
    sequence: LabeledSequence,
}

fn small() -> Small {
    let cfg = common::desk_synthetic_config(31, 450);
    let seq = attnet::data::Sequence::from_synthetic("s", attnet::data::generate_synthetic_sequence(&cfg).unwrap()).unwrap();
    Small {
        projection: ProjectionConfig::new(64, 8, 3.0, 25.0).unwrap(),
        model: ModelConfig::preset(WidthPreset::Toy, 2, 1, 8, 64, 32).unwrap(),
        sequence: LabeledSequence::new(seq, 6.0, 100).unwrap(),
    }
}

fn quick(seed: u64, lr: Real) -> TrainConfig {
    TrainConfig {
        epochs: 2,
        pairs_per_epoch: 3,
        seed,
        learning_rate: lr,
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_bit_reproducible() {
    let s = small();
    let run = || {
        let cfg = quick(4, 1e-3);
        let (state, report) = train(ModelState::new(s.model.clone(), 4).unwrap(), &[&s.sequence], &s.projection, &cfg, &mut Silent).unwrap();
        (encode_checkpoint(&state), report.epochs)
    };
    assert_eq!(run(), run());
}

#[test]
fn zero_learning_rate_leaves_parameters_alone() {
    let s = small();
    let initial = ModelState::new(s.model.clone(), 6).unwrap();
    let (trained, _) = train(initial.clone(), &[&s.sequence], &s.projection, &quick(6, 0.0), &mut Silent).unwrap();
    for (a, b) in initial.parameters().iter().zip(trained.parameters()) {
        assert_eq!(a.tensor.data(), b.tensor.data(), "{}", a.name);
    }
}

#[test]
fn evaluation_does_not_touch_model_or_map() {
    let s = small();
    let state = ModelState::new(s.model.clone(), 8).unwrap();
    let before = encode_checkpoint(&state);
    let map = build_map(describe_sequence(&state, &s.sequence.sequence, &s.projection).unwrap(), "s").unwrap();
    let map_before = encode_map(&map);
    let protocol = EvalProtocol::default();
    let a = evaluate_map(&map, &s.sequence, &protocol).unwrap();
    let b = evaluate_sequence(&state, &s.sequence, &s.projection, &protocol).unwrap();
    assert_eq!(encode_checkpoint(&state), before);
    assert_eq!(encode_map(&map), map_before);
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.curve, b.curve);
}

fn descriptor(values: &[f32]) -> Descriptor {
    Descriptor::new(values.to_vec(), 0).unwrap()
}

proptest! {
    #[test]
    fn pair_loss_is_non_negative(
        a in prop::collection::vec(-5.0f32..5.0, 6),
        b in prop::collection::vec(-5.0f32..5.0, 6),
        margin in 0.01f64..0.99,
    ) {
        let (a, b) = (descriptor(&a), descriptor(&b));
        for label in [PairLabel::Positive, PairLabel::Negative] {
            prop_assert!(pair_loss(&a, &b, label, margin as Real).unwrap() >= 0.0);
        }
    }

    #[test]
    fn positive_loss_vanishes_for_parallel_vectors(a in prop::collection::vec(0.5f32..5.0, 6), k in 1u8..8) {
        let scaled: Vec<f32> = a.iter().map(|v| v * k as f32).collect();
        let loss = pair_loss(&descriptor(&a), &descriptor(&scaled), PairLabel::Positive, 0.85).unwrap();
        prop_assert!(loss.abs() < 1e-6);
    }

    #[test]
    fn negative_loss_vanishes_below_margin(
        a in prop::collection::vec(-5.0f32..5.0, 6),
        b in prop::collection::vec(-5.0f32..5.0, 6),
        margin in 0.01f64..0.99,
    ) {
        let (a, b) = (descriptor(&a), descriptor(&b));
        let s = attnet::retrieval::descriptor_similarity(&a, &b).unwrap();
        let loss = pair_loss(&a, &b, PairLabel::Negative, margin as Real).unwrap();
        prop_assert_eq!(loss == 0.0, s <= margin as Real);
    }

    #[test]
    fn f1_is_the_harmonic_mean(tp in 0usize..500, fp in 0usize..500, fn_ in 0usize..500) {
        let m = Metrics::from_counts("t", tp, fp, fn_);
        if m.precision + m.recall > 0.0 {
            prop_assert!((m.f1 - 2.0 * m.precision * m.recall / (m.precision + m.recall)).abs() <= 1e-12);
        } else {
            prop_assert_eq!(m.f1, 0.0);
        }
    }
}

#[test]
fn zero_epochs_return_the_model_unchanged() {
    let s = small();
    let initial = ModelState::new(s.model.clone(), 12).unwrap();
    let cfg = TrainConfig {
        epochs: 0,
        ..quick(12, 1e-3)
    };
    let (trained, report) = train(initial.clone(), &[&s.sequence], &s.projection, &cfg, &mut Silent).unwrap();
    assert_eq!(encode_checkpoint(&trained), encode_checkpoint(&initial));
    assert!(report.epochs.is_empty());
}
