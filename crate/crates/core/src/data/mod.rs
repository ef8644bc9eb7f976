//! Point clouds, trajectories, loop ground truth and training pairs.

mod ground_truth;
mod kitti;
mod pairs;
mod synthetic;

pub use ground_truth::{build_ground_truth, LoopGroundTruth, DEFAULT_MIN_FRAME_GAP, DEFAULT_R_TH};
pub use kitti::{
    load_kitti_scan, load_poses, parse_kitti_scan, parse_poses, scan_paths, write_kitti_scan, write_poses, ScanStats,
};
pub use pairs::{sample_pairs, PairLabel, PairSample, Triplet, TripletSampler, NEGATIVE_MIN_DISTANCE};
pub use synthetic::{
    generate_synthetic_sequence, CourseShape, Landmark, SyntheticConfig, SyntheticSequence, SyntheticWorld,
};

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// One LiDAR return. Coordinates in meters, remission unitless.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub remission: f32,
}

impl Point {
    pub fn new(x: f32, y: f32, z: f32, remission: f32) -> Self {
        Self { x, y, z, remission }
    }

    pub fn range(&self) -> f64 {
        let (x, y, z) = (self.x as f64, self.y as f64, self.z as f64);
        (x * x + y * y + z * z).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.remission.is_finite()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
    pub frame_id: u64,
}

impl PointCloud {
    pub fn new(points: Vec<Point>, frame_id: u64) -> Self {
        Self { points, frame_id }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Rotation about the vertical axis by `yaw` radians.
    pub fn rotated_yaw(&self, yaw: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        let points = self
            .points
            .iter()
            .map(|p| {
                let (x, y) = (p.x as f64, p.y as f64);
                Point::new((c * x - s * y) as f32, (s * x + c * y) as f32, p.z, p.remission)
            })
            .collect();
        Self::new(points, self.frame_id)
    }
}

/// Clamps remission at the sequence's 99th percentile and rescales to [0, 1].
pub fn normalize_remission(clouds: &mut [PointCloud]) {
    let mut all: Vec<f32> = clouds
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.remission.max(0.0)))
        .collect();
    if all.is_empty() {
        return;
    }
    let k = ((all.len() - 1) as f64 * 0.99).round() as usize;
    let (_, p99, _) = all.select_nth_unstable_by(k, f32::total_cmp);
    let p99 = *p99;
    for c in clouds.iter_mut() {
        for p in &mut c.points {
            let r = p.remission.max(0.0);
            p.remission = if p99 > 0.0 { r.min(p99) / p99 } else { 0.0 };
        }
    }
}

/// Sensor positions, one per frame, with ascending frame ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub positions: Vec<[f64; 3]>,
    pub frame_ids: Vec<u64>,
}

impl Trajectory {
    pub fn new(positions: Vec<[f64; 3]>, frame_ids: Vec<u64>) -> Result<Self> {
        if positions.len() != frame_ids.len() {
            return Err(Error::Data(format!(
                "trajectory has {} positions but {} frame ids",
                positions.len(),
                frame_ids.len()
            )));
        }
        if frame_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Data("trajectory frame ids must be strictly ascending".into()));
        }
        if positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Data("trajectory contains non-finite positions".into()));
        }
        Ok(Self { positions, frame_ids })
    }

    /// Frames numbered `0..positions.len()`.
    pub fn from_positions(positions: Vec<[f64; 3]>) -> Result<Self> {
        let ids = (0..positions.len() as u64).collect();
        Self::new(positions, ids)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn index_of(&self, frame_id: u64) -> Option<usize> {
        self.frame_ids.binary_search(&frame_id).ok()
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        distance(&self.positions[a], &self.positions[b])
    }

    pub fn translated(&self, offset: [f64; 3]) -> Self {
        let positions = self
            .positions
            .iter()
            .map(|p| [p[0] + offset[0], p[1] + offset[1], p[2] + offset[2]])
            .collect();
        Self {
            positions,
            frame_ids: self.frame_ids.clone(),
        }
    }
}

pub(crate) fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Indexed access to the scans of one sequence.
pub trait FrameSource: Send + Sync {
    fn len(&self) -> usize;
    fn frame_id(&self, index: usize) -> u64;
    fn load(&self, index: usize) -> Result<PointCloud>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Scans already in memory.
pub struct InMemoryFrames(pub Vec<PointCloud>);

impl FrameSource for InMemoryFrames {
    fn len(&self) -> usize {
        self.0.len()
    }

    fn frame_id(&self, index: usize) -> u64 {
        self.0[index].frame_id
    }

    fn load(&self, index: usize) -> Result<PointCloud> {
        Ok(self.0[index].clone())
    }
}

/// Scans read from `velodyne/NNNNNN.bin` files on demand.
pub struct KittiFrames {
    paths: Vec<PathBuf>,
    ids: Vec<u64>,
}

impl KittiFrames {
    pub fn open(velodyne_dir: &Path) -> Result<Self> {
        let paths = scan_paths(velodyne_dir)?;
        let ids = paths.iter().map(|p| kitti::frame_id_from_path(p)).collect::<Result<Vec<_>>>()?;
        Ok(Self { paths, ids })
    }
}

impl FrameSource for KittiFrames {
    fn len(&self) -> usize {
        self.paths.len()
    }

    fn frame_id(&self, index: usize) -> u64 {
        self.ids[index]
    }

    fn load(&self, index: usize) -> Result<PointCloud> {
        load_kitti_scan(&self.paths[index])
    }
}

/// A sequence's scans together with its trajectory.
pub struct Sequence {
    pub tag: String,
    pub frames: Box<dyn FrameSource>,
    pub trajectory: Trajectory,
}

impl Sequence {
    pub fn new(tag: impl Into<String>, frames: Box<dyn FrameSource>, trajectory: Trajectory) -> Result<Self> {
        let tag = tag.into();
        if frames.len() != trajectory.len() {
            return Err(Error::Data(format!(
                "sequence {tag}: {} scans but {} poses",
                frames.len(),
                trajectory.len()
            )));
        }
        for i in 0..frames.len() {
            if frames.frame_id(i) != trajectory.frame_ids[i] {
                return Err(Error::Data(format!(
                    "sequence {tag}: scan {i} has frame id {} but pose has {}",
                    frames.frame_id(i),
                    trajectory.frame_ids[i]
                )));
            }
        }
        Ok(Self { tag, frames, trajectory })
    }

    pub fn from_synthetic(tag: impl Into<String>, seq: SyntheticSequence) -> Result<Self> {
        Self::new(tag, Box::new(InMemoryFrames(seq.clouds)), seq.trajectory)
    }

    /// Opens `<root>/[sequences/]<tag>/velodyne` with poses at
    /// `<root>/poses/<tag>.txt` or `<root>/<tag>.txt`.
    pub fn open_kitti(root: &Path, tag: &str) -> Result<Self> {
        let seq_dir = [root.join("sequences").join(tag), root.join(tag)]
            .into_iter()
            .find(|p| p.join("velodyne").is_dir())
            .ok_or_else(|| Error::Data(format!("no velodyne directory for sequence {tag} under {}", root.display())))?;
        let pose_path = [root.join("poses").join(format!("{tag}.txt")), root.join(format!("{tag}.txt"))]
            .into_iter()
            .find(|p| p.is_file())
            .ok_or_else(|| Error::Data(format!("no pose file for sequence {tag} under {}", root.display())))?;
        let frames = KittiFrames::open(&seq_dir.join("velodyne"))?;
        let trajectory = load_poses(&pose_path)?;
        Self::new(tag, Box::new(frames), trajectory)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn remission_clamped_at_p99() {
        let pts: Vec<Point> = (0..100).map(|i| Point::new(1.0, 0.0, 0.0, i as f32)).collect();
        let mut clouds = vec![PointCloud::new(pts, 0)];
        normalize_remission(&mut clouds);
        let r: Vec<f32> = clouds[0].points.iter().map(|p| p.remission).collect();
        assert_eq!(r[0], 0.0);
        assert_eq!(r[98], 1.0);
        assert_eq!(r[99], 1.0);
        assert!(r.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn trajectory_rejects_misaligned_ids() {
        assert!(Trajectory::new(vec![[0.0; 3]; 2], vec![0]).is_err());
        assert!(Trajectory::new(vec![[0.0; 3]; 2], vec![1, 1]).is_err());
        assert!(Trajectory::new(vec![[f64::NAN, 0.0, 0.0]], vec![0]).is_err());
    }

    #[test]
    fn sequence_needs_matching_lengths() {
        let frames = InMemoryFrames(vec![PointCloud::new(vec![Point::new(1.0, 0.0, 0.0, 0.0)], 0)]);
        let traj = Trajectory::from_positions(vec![[0.0; 3]; 2]).unwrap();
        assert!(Sequence::new("x", Box::new(frames), traj).is_err());
    }
}
