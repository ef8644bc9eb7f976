//! Spherical projection properties on random clouds.

use std::f64::consts::PI;

use attnet::data::{Point, PointCloud};
use attnet::projection::{project, yaw_shift_reference, ProjectionConfig, FILL_VALUE};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;

fn point() -> impl Strategy<Value = Point> {
    (0.5f64..80.0, -PI..PI, -40f64..15.0, 0f32..1.0).prop_map(|(r, yaw, pitch_deg, rem)| {
        let p = pitch_deg.to_radians();
        Point::new(
            (r * p.cos() * yaw.cos()) as f32,
            (r * p.cos() * yaw.sin()) as f32,
            (r * p.sin()) as f32,
            rem,
        )
    })
}

fn cloud() -> impl Strategy<Value = PointCloud> {
    prop::collection::vec(point(), 1..2000).prop_map(|pts| PointCloud::new(pts, 7))
}

fn config() -> impl Strategy<Value = ProjectionConfig> {
    (8usize..256, 2usize..32).prop_map(|(w, h)| ProjectionConfig::new(w, h, 3.0, 25.0).unwrap())
}

fn in_fov(p: &Point, cfg: &ProjectionConfig) -> bool {
    let pitch = (p.z as f64 / p.range()).asin();
    pitch <= cfg.fov_up && pitch >= -cfg.fov_down
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn pixels_stay_in_bounds(c in cloud(), cfg in config()) {
        for p in &c.points {
            match cfg.pixel_of(p) {
                Some((u, v)) => prop_assert!(u < cfg.width && v < cfg.height && in_fov(p, &cfg)),
                None => prop_assert!(!in_fov(p, &cfg)),
            }
        }
    }

    #[test]
    fn shuffling_points_is_bit_identical(c in cloud(), cfg in config(), seed in any::<u64>()) {
        prop_assume!(c.points.iter().any(|p| in_fov(p, &cfg)));
        let a = project(&c, &cfg).unwrap();
        let mut shuffled = c.clone();
        shuffled.points.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let b = project(&shuffled, &cfg).unwrap();
        prop_assert_eq!(&a.valid_mask, &b.valid_mask);
        let bits = |d: &[attnet::Real]| d.iter().map(|v| (*v).to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(a.tensor.data()), bits(b.tensor.data()));
    }

    #[test]
    fn channels_are_consistent(c in cloud(), cfg in config()) {
        prop_assume!(c.points.iter().any(|p| in_fov(p, &cfg)));
        let img = project(&c, &cfg).unwrap();
        let visible: Vec<&Point> = c.points.iter().filter(|p| in_fov(p, &cfg)).collect();
        for v in 0..cfg.height {
            for u in 0..cfg.width {
                if img.valid_mask[v * cfg.width + u] {
                    let (x, y, z) = (img.at(1, v, u) as f64, img.at(2, v, u) as f64, img.at(3, v, u) as f64);
                    prop_assert!((img.at(0, v, u) as f64 - (x * x + y * y + z * z).sqrt()).abs() <= 1e-5);
                    // every stored point is a visible input point
                    prop_assert!(visible.iter().any(|p| p.x as f64 == x && p.y as f64 == y && p.z as f64 == z));
                } else {
                    prop_assert!((0..5).all(|ch| img.at(ch, v, u) == FILL_VALUE));
                }
            }
        }
    }

    #[test]
    fn yaw_rotation_shifts_columns(c in cloud(), cfg in config(), k in 0i64..256) {
        prop_assume!(c.points.iter().any(|p| in_fov(p, &cfg)));
        let k = k % cfg.width as i64;
        let img = project(&c, &cfg).unwrap();
        let rotated = project(&c.rotated_yaw(2.0 * PI * k as f64 / cfg.width as f64), &cfg).unwrap();
        let expected = yaw_shift_reference(&img, -k);
        // judged over pixels valid in either image, so empty sky does not pad the score
        let pairs = rotated.valid_mask.iter().zip(&expected.valid_mask);
        let occupied = pairs.clone().filter(|(a, b)| **a || **b).count();
        let differing = pairs.filter(|(a, b)| a != b).count();
        prop_assert!(differing as f64 <= 0.02 * occupied as f64 + 1.0, "{} of {}", differing, occupied);
    }
}
