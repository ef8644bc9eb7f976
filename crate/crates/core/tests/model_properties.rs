//! Architecture contracts across the encoder/attention grid.

mod common;

use attnet::model::{
    attention_layer_forward, attention_layer_with_map, attention_network_forward, attention_weights, decode_checkpoint, describe_image, encode_checkpoint, AttentionWeights, ModelConfig,
    ModelState, WidthPreset,
};
use attnet::Real;
use proptest::prelude::*;

fn state(x: usize, y: usize, seed: u64) -> ModelState {
    ModelState::new(ModelConfig::preset(WidthPreset::Toy, x, y, 4, 64, 8).unwrap(), seed).unwrap()
}

#[test]
fn descriptor_length_is_fixed_across_the_grid() {
    let mut r = common::rng(1);
    let image = common::noise_image(&mut r, 4, 64, 0);
    for x in 1..=5 {
        for y in 0..=4 {
            assert_eq!(describe_image(&image, &state(x, y, 3)).unwrap().dim(), 8, "E{x}A{y}");
        }
    }
}

#[test]
fn checkpoint_round_trip_keeps_descriptors_within_f32_rounding() {
    let mut r = common::rng(2);
    let image = common::noise_image(&mut r, 4, 64, 0);
    let mut original = state(3, 2, 5);
    original.set_gammas(0.3);
    let restored = decode_checkpoint(&encode_checkpoint(&original), "mem").unwrap();
    let a = describe_image(&image, &original).unwrap();
    let b = describe_image(&image, &restored).unwrap();
    let worst = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
    assert!(worst < 1e-3, "{worst}");
    assert_eq!(encode_checkpoint(&restored), encode_checkpoint(&original));
}

#[test]
fn four_layers_compose_one_at_a_time() {
    let mut st = state(2, 4, 8);
    st.set_gammas(0.6);
    let cfg = st.config().clone();
    let x = common::uniform(&mut common::rng(3), &[cfg.feature_channels(), cfg.input_height, cfg.feature_width()], -2.0, 2.0);
    let stacked = attention_network_forward(&x, &st).unwrap();
    let mut manual = x.clone();
    for layer in 0..4 {
        manual = attention_layer_forward(&manual, &attention_weights(&st, layer).unwrap()).unwrap();
    }
    assert_eq!(stacked.data(), manual.data());
    assert_ne!(stacked.data(), x.data());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn zero_gamma_matches_attention_free_model(x in 1usize..=5, y in 1usize..=4, seed in any::<u64>()) {
        let image = common::noise_image(&mut common::rng(seed), 4, 64, 0);
        let with = describe_image(&image, &state(x, y, seed)).unwrap();
        let without = describe_image(&image, &state(x, 0, seed)).unwrap();
        prop_assert_eq!(with.values, without.values);
    }

    #[test]
    fn attention_keeps_shape_and_normalizes_rows(c in 1usize..12, h in 1usize..6, w in 1usize..10, seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let mut weights = AttentionWeights::identity(c, 0.4);
        weights.query_weight = common::uniform(&mut r, &[c, c, 1, 1], -1.0, 1.0);
        weights.key_weight = common::uniform(&mut r, &[c, c, 1, 1], -1.0, 1.0);
        let x = common::uniform(&mut r, &[c, h, w], -3.0, 3.0);
        let (y, map) = attention_layer_with_map(&x, &weights).unwrap();
        prop_assert_eq!(y.shape(), x.shape());
        prop_assert_eq!(map.shape(), &[c, c][..]);
        for row in map.data().chunks(c) {
            prop_assert!((row.iter().sum::<Real>() - 1.0).abs() <= 1e-9);
        }
    }
}
