//! KITTI odometry file formats: velodyne `.bin` scans and pose text files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{Point, PointCloud, Trajectory};
use crate::error::{Error, Result};

const RECORD_BYTES: usize = 16;

/// Points discarded while parsing one scan.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ScanStats {
    pub records: usize,
    pub dropped_non_finite: usize,
    pub dropped_zero_range: usize,
}

/// Parses little-endian `(x, y, z, remission)` float32 records.
pub fn parse_kitti_scan(bytes: &[u8], frame_id: u64, source: &str) -> Result<(PointCloud, ScanStats)> {
    if bytes.is_empty() {
        return Err(Error::EmptyCloud(format!("{source}: file is empty")));
    }
    if !bytes.len().is_multiple_of(RECORD_BYTES) {
        let offset = bytes.len() - bytes.len() % RECORD_BYTES;
        return Err(Error::ParseAtOffset {
            source_name: source.to_string(),
            offset: offset as u64,
            message: format!(
                "truncated record: {} trailing bytes, records are {RECORD_BYTES} bytes",
                bytes.len() % RECORD_BYTES
            ),
        });
    }
    let mut stats = ScanStats {
        records: bytes.len() / RECORD_BYTES,
        ..ScanStats::default()
    };
    let mut points = Vec::with_capacity(stats.records);
    for rec in bytes.chunks_exact(RECORD_BYTES) {
        let f = |i: usize| f32::from_le_bytes(rec[i * 4..i * 4 + 4].try_into().unwrap());
        let p = Point::new(f(0), f(1), f(2), f(3));
        if !p.is_finite() {
            stats.dropped_non_finite += 1;
        } else if p.range() <= 0.0 {
            stats.dropped_zero_range += 1;
        } else {
            points.push(p);
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyCloud(format!(
            "{source}: no valid points among {} records",
            stats.records
        )));
    }
    Ok((PointCloud::new(points, frame_id), stats))
}

pub(crate) fn frame_id_from_path(path: &Path) -> Result<u64> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Data(format!("scan file name {} is not a frame number", path.display())))
}

/// Loads one scan; the frame id comes from the numeric file stem (0 if none).
pub fn load_kitti_scan(path: &Path) -> Result<PointCloud> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let frame_id = frame_id_from_path(path).unwrap_or(0);
    let (cloud, stats) = parse_kitti_scan(&bytes, frame_id, &path.display().to_string())?;
    if stats.dropped_non_finite > 0 {
        log::warn!(
            "{}: dropped {} non-finite records",
            path.display(),
            stats.dropped_non_finite
        );
    }
    Ok(cloud)
}

pub fn write_kitti_scan(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut bytes = Vec::with_capacity(cloud.len() * RECORD_BYTES);
    for p in &cloud.points {
        for v in [p.x, p.y, p.z, p.remission] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Sorted `*.bin` files of a velodyne directory.
pub fn scan_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    paths.sort();
    Ok(paths)
}

/// Parses 3x4 row-major pose matrices, one per non-blank line.
pub fn parse_poses(text: &str, source: &str) -> Result<Vec<[f64; 12]>> {
    let mut poses = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::ParseAtLine {
            source_name: source.to_string(),
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 12 {
            return Err(err(format!("expected 12 fields, found {}", fields.len())));
        }
        let mut m = [0.0; 12];
        for (k, f) in fields.iter().enumerate() {
            m[k] = f
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("field {} ('{f}') is not a finite number", k + 1)))?;
        }
        poses.push(m);
    }
    Ok(poses)
}

/// Loads a pose file; frame `i` is the `i`-th pose line.
pub fn load_poses(path: &Path) -> Result<Trajectory> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let poses = parse_poses(&text, &path.display().to_string())?;
    Trajectory::from_positions(poses.iter().map(|m| [m[3], m[7], m[11]]).collect())
}

pub fn write_poses(path: &Path, poses: &[[f64; 12]]) -> Result<()> {
    let mut out = Vec::new();
    for m in poses {
        let line: Vec<String> = m.iter().map(|v| format!("{v:e}")).collect();
        writeln!(out, "{}", line.join(" ")).expect("write to vec");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
