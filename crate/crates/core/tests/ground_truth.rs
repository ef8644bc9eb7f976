//! Loop ground truth and pair sampling against brute force.

use attnet::data::{build_ground_truth, sample_pairs, PairLabel, Trajectory, NEGATIVE_MIN_DISTANCE};
use proptest::prelude::*;

fn brute_force(positions: &[[f64; 3]], r_th: f64, gap: usize) -> Vec<(usize, Vec<usize>)> {
    (0..positions.len())
        .filter_map(|q| {
            let refs: Vec<usize> = (0..positions.len())
                .filter(|&r| {
                    let d: f64 = (0..3).map(|k| (positions[q][k] - positions[r][k]).powi(2)).sum::<f64>().sqrt();
                    r + gap <= q && d < r_th
                })
                .collect();
            (!refs.is_empty()).then_some((q, refs))
        })
        .collect()
}

fn as_ids(gt: &attnet::data::LoopGroundTruth) -> Vec<(usize, Vec<usize>)> {
    gt.loops
        .iter()
        .map(|(q, refs)| (*q as usize, refs.iter().map(|r| *r as usize).collect()))
        .collect()
}

fn walk(steps: Vec<(f64, f64)>) -> Vec<[f64; 3]> {
    let mut p = [0.0, 0.0, 0.0];
    steps
        .into_iter()
        .map(|(dx, dy)| {
            p[0] += dx;
            p[1] += dy;
            p
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matches_brute_force(
        steps in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 1..400),
        r_th in 0.5f64..10.0,
        gap in 0usize..120,
    ) {
        let positions = walk(steps);
        let gt = build_ground_truth(&Trajectory::from_positions(positions.clone()).unwrap(), r_th, gap).unwrap();
        prop_assert_eq!(as_ids(&gt), brute_force(&positions, r_th, gap));
        prop_assert_eq!(gt.query_count(), gt.loops.len());
    }

    #[test]
    fn translation_does_not_change_loops(
        steps in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 1..300),
        offset in prop::array::uniform3(-1e4f64..1e4),
    ) {
        let traj = Trajectory::from_positions(walk(steps)).unwrap();
        let a = build_ground_truth(&traj, 6.0, 50).unwrap();
        let b = build_ground_truth(&traj.translated(offset), 6.0, 50).unwrap();
        prop_assert_eq!(a.loops, b.loops);
    }

    #[test]
    fn sampled_pairs_respect_distances(seed in any::<u64>(), count in 1usize..40) {
        // two laps of a 30 m radius circle
        let positions: Vec<[f64; 3]> = (0..400)
            .map(|i| {
                let a = i as f64 / 200.0 * std::f64::consts::TAU;
                [30.0 * a.cos(), 30.0 * a.sin(), 0.0]
            })
            .collect();
        let traj = Trajectory::from_positions(positions).unwrap();
        let gt = build_ground_truth(&traj, 6.0, 100).unwrap();
        for pair in sample_pairs(&gt, &traj, count, seed).unwrap() {
            let d = traj.distance(traj.index_of(pair.query_id).unwrap(), traj.index_of(pair.other_id).unwrap());
            match pair.label {
                PairLabel::Positive => prop_assert!(d < 6.0),
                PairLabel::Negative => prop_assert!(d > NEGATIVE_MIN_DISTANCE),
            }
        }
    }
}

#[test]
fn long_trajectory_matches_brute_force() {
    let positions: Vec<[f64; 3]> = (0..2000)
        .map(|i| {
            let a = i as f64 / 700.0 * std::f64::consts::TAU;
            [50.0 * a.cos() + (i % 7) as f64 * 0.3, 50.0 * a.sin(), 0.0]
        })
        .collect();
    let gt = build_ground_truth(&Trajectory::from_positions(positions.clone()).unwrap(), 6.0, 100).unwrap();
    assert_eq!(as_ids(&gt), brute_force(&positions, 6.0, 100));
    assert!(gt.query_count() > 1000);
}
