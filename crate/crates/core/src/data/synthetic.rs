//! Desk-scale LiDAR sequences: a fixed field of cylindrical landmarks scanned
//! from poses along a course that revisits itself.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{write_kitti_scan, write_poses, Point, PointCloud, Trajectory};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CourseShape {
    /// Repeated laps around a circle of the given radius.
    Circle { radius: f64 },
    /// Straight out and back along a segment of the given length; the return
    /// leg revisits in the opposite direction.
    OutAndBack { length: f64 },
}

impl CourseShape {
    fn lap_length(&self) -> f64 {
        match *self {
            CourseShape::Circle { radius } => 2.0 * PI * radius,
            CourseShape::OutAndBack { length } => 2.0 * length,
        }
    }

    /// Distance travelled before the course first passes an earlier point.
    fn revisit_after(&self) -> f64 {
        match *self {
            CourseShape::Circle { radius } => 2.0 * PI * radius,
            CourseShape::OutAndBack { length } => length,
        }
    }

    /// Nominal `(x, y, heading, lap index)` after travelling `s` meters.
    fn at(&self, s: f64) -> (f64, f64, f64, usize) {
        let lap = (s / self.lap_length()).floor() as usize;
        match *self {
            CourseShape::Circle { radius } => {
                let t = s / radius;
                (radius * t.cos(), radius * t.sin(), t + PI / 2.0, lap)
            }
            CourseShape::OutAndBack { length } => {
                let u = s - lap as f64 * 2.0 * length;
                if u < length {
                    (u, 0.0, 0.0, 2 * lap)
                } else {
                    (2.0 * length - u, 0.0, PI, 2 * lap + 1)
                }
            }
        }
    }

    fn name(&self) -> (&'static str, f64) {
        match *self {
            CourseShape::Circle { radius } => ("circle", radius),
            CourseShape::OutAndBack { length } => ("out_and_back", length),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub course: CourseShape,
    pub frames: usize,
    /// Meters travelled between consecutive frames.
    pub frame_spacing: f64,
    pub landmarks: usize,
    /// Standard deviation of additive range noise, meters.
    pub noise_sigma: f64,
    pub seed: u64,
    pub sensor_range: f64,
    pub sensor_height: f64,
    /// Lateral displacement of every odd lap, meters.
    pub lap_offset: f64,
    /// Standard deviation of per-frame heading noise, degrees.
    pub heading_jitter_deg: f64,
    /// Probability of dropping each simulated return.
    pub dropout: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            course: CourseShape::Circle { radius: 40.0 },
            frames: 450,
            frame_spacing: 1.0,
            landmarks: 1200,
            noise_sigma: 0.03,
            seed: 0,
            sensor_range: 25.0,
            sensor_height: 1.73,
            lap_offset: 2.0,
            heading_jitter_deg: 3.0,
            dropout: 0.1,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.landmarks == 0 {
            return Err(Error::Config("synthetic world needs at least one landmark".into()));
        }
        if self.frames == 0 || !(self.frame_spacing > 0.0) {
            return Err(Error::Config("synthetic course needs frames and a positive spacing".into()));
        }
        let size = self.course.name().1;
        if !(size > 0.0) {
            return Err(Error::Config(format!("course size must be positive, got {size}")));
        }
        let travelled = (self.frames - 1) as f64 * self.frame_spacing;
        if travelled <= self.course.revisit_after() {
            return Err(Error::Config(format!(
                "course has no loop-closing segment: travels {travelled:.1} m, first revisit after {:.1} m",
                self.course.revisit_after()
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) || self.noise_sigma < 0.0 || !(self.sensor_range > 0.0) {
            return Err(Error::Config("invalid sensor noise/dropout/range".into()));
        }
        Ok(())
    }

    /// Plain-text `key=value` manifest.
    pub fn to_manifest(&self) -> String {
        let (course, size) = self.course.name();
        format!(
            "course={course}\ncourse_size={size}\nframes={}\nspacing={}\nlandmarks={}\nseed={}\nnoise={}\n\
             sensor_range={}\nsensor_height={}\nlap_offset={}\nheading_jitter_deg={}\ndropout={}\n",
            self.frames,
            self.frame_spacing,
            self.landmarks,
            self.seed,
            self.noise_sigma,
            self.sensor_range,
            self.sensor_height,
            self.lap_offset,
            self.heading_jitter_deg,
            self.dropout
        )
    }

    /// Parses a manifest; missing keys take defaults, unknown keys are errors.
    pub fn from_manifest(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut course = "circle".to_string();
        let mut size: Option<f64> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |m: String| Error::ParseAtLine {
                source_name: "synthetic manifest".into(),
                line: i + 1,
                message: m,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, got '{line}'")))?;
            let (k, v) = (k.trim(), v.trim());
            let num = |v: &str| v.parse::<f64>().map_err(|_| err(format!("{k}: '{v}' is not a number")));
            let int = |v: &str| v.parse::<u64>().map_err(|_| err(format!("{k}: '{v}' is not an integer")));
            match k {
                "course" => course = v.to_string(),
                "course_size" => size = Some(num(v)?),
                "frames" => cfg.frames = int(v)? as usize,
                "spacing" => cfg.frame_spacing = num(v)?,
                "landmarks" => cfg.landmarks = int(v)? as usize,
                "seed" => cfg.seed = int(v)?,
                "noise" => cfg.noise_sigma = num(v)?,
                "sensor_range" => cfg.sensor_range = num(v)?,
                "sensor_height" => cfg.sensor_height = num(v)?,
                "lap_offset" => cfg.lap_offset = num(v)?,
                "heading_jitter_deg" => cfg.heading_jitter_deg = num(v)?,
                "dropout" => cfg.dropout = num(v)?,
                _ => return Err(err(format!("unknown key '{k}'"))),
            }
        }
        cfg.course = match (course.as_str(), size) {
            ("circle", s) => CourseShape::Circle {
                radius: s.unwrap_or(40.0),
            },
            ("out_and_back", s) => CourseShape::OutAndBack {
                length: s.unwrap_or(150.0),
            },
            (other, _) => return Err(Error::Config(format!("unknown course '{other}'"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Landmark {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    pub height: f64,
    pub remission: f32,
}

/// A fixed field of upright cylinders.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticWorld {
    pub landmarks: Vec<Landmark>,
    pub sensor_range: f64,
    pub sensor_height: f64,
}

const CLEARANCE: f64 = 3.5;
const VERTICAL_STEP: f64 = 0.4;
const LATERAL_SAMPLES: [f64; 3] = [-0.7, 0.0, 0.7];

impl SyntheticWorld {
    /// Scatters landmarks around the course, keeping the driven corridor clear.
    pub fn generate(cfg: &SyntheticConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x00ad_1a4d);
        let path: Vec<(f64, f64)> = (0..cfg.frames)
            .map(|i| {
                let (x, y, _, _) = cfg.course.at(i as f64 * cfg.frame_spacing);
                (x, y)
            })
            .collect();
        let margin = cfg.sensor_range;
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for &(x, y) in &path {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        let clearance = CLEARANCE + cfg.lap_offset.abs();
        let mut landmarks = Vec::with_capacity(cfg.landmarks);
        let mut attempts = 0usize;
        while landmarks.len() < cfg.landmarks {
            attempts += 1;
            if attempts > cfg.landmarks * 1000 {
                return Err(Error::Config("could not place landmarks away from the course".into()));
            }
            let x = rng.random_range(x0 - margin..x1 + margin);
            let y = rng.random_range(y0 - margin..y1 + margin);
            let radius = rng.random_range(0.2..1.0);
            let height = rng.random_range(1.0..6.0);
            let remission = rng.random_range(0.0..1.0f32);
            let near_path = path
                .iter()
                .any(|&(px, py)| (px - x).hypot(py - y) < clearance + radius);
            if near_path {
                continue;
            }
            landmarks.push(Landmark {
                x,
                y,
                radius,
                height,
                remission,
            });
        }
        Ok(Self {
            landmarks,
            sensor_range: cfg.sensor_range,
            sensor_height: cfg.sensor_height,
        })
    }

    /// Simulated scan from `(x, y, yaw)`, in the sensor frame. Returns the
    /// cloud and the landmark index behind each point.
    pub fn render(
        &self,
        pose: (f64, f64, f64),
        noise_sigma: f64,
        dropout: f64,
        rng: &mut impl Rng,
        frame_id: u64,
    ) -> (PointCloud, Vec<u32>) {
        let (px, py, yaw) = pose;
        let (s, c) = yaw.sin_cos();
        let noise = (noise_sigma > 0.0).then(|| Normal::new(0.0, noise_sigma).expect("valid sigma"));
        let mut points = Vec::new();
        let mut ids = Vec::new();
        for (id, lm) in self.landmarks.iter().enumerate() {
            let (dx, dy) = (lm.x - px, lm.y - py);
            let dist = dx.hypot(dy);
            if dist - lm.radius > self.sensor_range || dist < lm.radius + 0.5 {
                continue;
            }
            let (ux, uy) = (dx / dist, dy / dist);
            let (nx, ny) = (-uy, ux);
            let levels = (lm.height / VERTICAL_STEP).floor() as usize + 1;
            for &a in &LATERAL_SAMPLES {
                let lat = a * lm.radius;
                let depth = (lm.radius * lm.radius - lat * lat).sqrt();
                let wx = lm.x - ux * depth + nx * lat - px;
                let wy = lm.y - uy * depth + ny * lat - py;
                // world offset -> sensor frame
                let sx = c * wx + s * wy;
                let sy = -s * wx + c * wy;
                for k in 0..levels {
                    let sz = k as f64 * VERTICAL_STEP - self.sensor_height;
                    let r = (sx * sx + sy * sy + sz * sz).sqrt();
                    if r > self.sensor_range {
                        continue;
                    }
                    if dropout > 0.0 && rng.random::<f64>() < dropout {
                        continue;
                    }
                    let scale = match &noise {
                        Some(n) => ((r + n.sample(rng)) / r).max(0.05),
                        None => 1.0,
                    };
                    points.push(Point::new(
                        (sx * scale) as f32,
                        (sy * scale) as f32,
                        (sz * scale) as f32,
                        lm.remission,
                    ));
                    ids.push(id as u32);
                }
            }
        }
        (PointCloud::new(points, frame_id), ids)
    }
}

/// Generated scans with their poses and per-point landmark ids.
#[derive(Clone, Debug)]
pub struct SyntheticSequence {
    pub clouds: Vec<PointCloud>,
    pub landmark_ids: Vec<Vec<u32>>,
    pub trajectory: Trajectory,
    /// 3x4 row-major sensor poses (yaw-only rotation).
    pub poses: Vec<[f64; 12]>,
    pub world: SyntheticWorld,
}

impl SyntheticSequence {
    /// Writes `<root>/sequences/<tag>/velodyne/NNNNNN.bin` and
    /// `<root>/poses/<tag>.txt`, the layout [`super::Sequence::open_kitti`] reads.
    pub fn write_kitti_layout(&self, root: &Path, tag: &str) -> Result<()> {
        let velodyne = root.join("sequences").join(tag).join("velodyne");
        let poses = root.join("poses");
        for dir in [&velodyne, &poses] {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        for cloud in &self.clouds {
            write_kitti_scan(&velodyne.join(format!("{:06}.bin", cloud.frame_id)), cloud)?;
        }
        write_poses(&poses.join(format!("{tag}.txt")), &self.poses)
    }
}

pub fn pose_matrix(x: f64, y: f64, z: f64, yaw: f64) -> [f64; 12] {
    let (s, c) = yaw.sin_cos();
    [c, -s, 0.0, x, s, c, 0.0, y, 0.0, 0.0, 1.0, z]
}

pub fn generate_synthetic_sequence(cfg: &SyntheticConfig) -> Result<SyntheticSequence> {
    let world = SyntheticWorld::generate(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let jitter = Normal::new(0.0, cfg.heading_jitter_deg.to_radians().max(0.0))
        .map_err(|e| Error::Config(format!("heading jitter: {e}")))?;
    let mut clouds = Vec::with_capacity(cfg.frames);
    let mut landmark_ids = Vec::with_capacity(cfg.frames);
    let mut positions = Vec::with_capacity(cfg.frames);
    let mut poses = Vec::with_capacity(cfg.frames);
    for i in 0..cfg.frames {
        let (mut x, mut y, heading, lap) = cfg.course.at(i as f64 * cfg.frame_spacing);
        if lap % 2 == 1 {
            // offset toward the left of the direction of travel
            x += -heading.sin() * cfg.lap_offset;
            y += heading.cos() * cfg.lap_offset;
        }
        let yaw = heading + if cfg.heading_jitter_deg > 0.0 { jitter.sample(&mut rng) } else { 0.0 };
        let (cloud, ids) = world.render((x, y, yaw), cfg.noise_sigma, cfg.dropout, &mut rng, i as u64);
        if cloud.is_empty() {
            return Err(Error::Data(format!("synthetic frame {i} sees no landmarks")));
        }
        clouds.push(cloud);
        landmark_ids.push(ids);
        positions.push([x, y, 0.0]);
        poses.push(pose_matrix(x, y, 0.0, yaw));
    }
    Ok(SyntheticSequence {
        clouds,
        landmark_ids,
        trajectory: Trajectory::from_positions(positions)?,
        poses,
        world,
    })
}
