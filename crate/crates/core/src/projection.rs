//! Spherical range-image projection of point clouds.
//!
//! A point at azimuth `atan2(y, x)` and elevation `asin(z / r)` lands at
//!
//! ```text
//! u = ½ [1 − atan2(y, x) / π] · ω
//! v = [1 − (asin(z / r) + f_up) / f] · h,    f = f_up + f_down
//! ```
//!
//! floored and clamped to the image. Each pixel stores five channels:
//! range, x, y, z and remission.

use std::fs;
use std::path::Path;

use crate::binio::{put_f32s, put_u32, ByteReader};
use crate::data::{Point, PointCloud};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const CHANNELS: usize = 5;
/// Value of every channel at pixels no point landed on.
pub const FILL_VALUE: Real = -1.0;
pub const DEFAULT_FOV_UP_DEG: f64 = 3.0;
pub const DEFAULT_FOV_DOWN_DEG: f64 = 25.0;

const ARNG_MAGIC: &[u8; 4] = b"ARNG";
const ARNG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionConfig {
    pub width: usize,
    pub height: usize,
    /// Upper vertical field of view, radians above the horizon.
    pub fov_up: f64,
    /// Lower vertical field of view, radians below the horizon (positive).
    pub fov_down: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            width: 1024,
            height: 64,
            fov_up: DEFAULT_FOV_UP_DEG.to_radians(),
            fov_down: DEFAULT_FOV_DOWN_DEG.to_radians(),
        }
    }
}

impl ProjectionConfig {
    pub fn new(width: usize, height: usize, fov_up_deg: f64, fov_down_deg: f64) -> Result<Self> {
        let cfg = Self {
            width,
            height,
            fov_up: fov_up_deg.to_radians(),
            fov_down: fov_down_deg.to_radians(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config(format!(
                "projection size must be positive, got {}x{}",
                self.height, self.width
            )));
        }
        if !(self.fov() > 0.0) || !self.fov_up.is_finite() || !self.fov_down.is_finite() {
            return Err(Error::Config("total vertical field of view must be positive".into()));
        }
        Ok(())
    }

    pub fn fov(&self) -> f64 {
        self.fov_up + self.fov_down
    }

    /// Pixel `(u, v)` of a point, or `None` outside the vertical field of view.
    pub fn pixel_of(&self, p: &Point) -> Option<(usize, usize)> {
        let (x, y, z) = (p.x as f64, p.y as f64, p.z as f64);
        let r = (x * x + y * y + z * z).sqrt();
        let pitch = (z / r).asin();
        if pitch > self.fov_up || pitch < -self.fov_down {
            return None;
        }
        let u = 0.5 * (1.0 - y.atan2(x) / std::f64::consts::PI) * self.width as f64;
        let v = (1.0 - (pitch + self.fov_up) / self.fov()) * self.height as f64;
        let clamp = |t: f64, n: usize| (t.floor().max(0.0) as usize).min(n - 1);
        Some((clamp(u, self.width), clamp(v, self.height)))
    }
}

/// `[5, h, ω]` image of (range, x, y, z, remission) plus a validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct RangeImage {
    pub tensor: Tensor,
    pub valid_mask: Vec<bool>,
    pub frame_id: u64,
}

impl RangeImage {
    pub fn height(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.tensor.shape()[2]
    }

    pub fn valid_count(&self) -> usize {
        self.valid_mask.iter().filter(|&&m| m).count()
    }

    pub fn valid_fraction(&self) -> f64 {
        self.valid_count() as f64 / self.valid_mask.len() as f64
    }

    /// Channel `c` at row `v`, column `u`.
    pub fn at(&self, c: usize, v: usize, u: usize) -> Real {
        let (h, w) = (self.height(), self.width());
        self.tensor.data()[(c * h + v) * w + u]
    }
}

/// Total order used to pick one point per pixel: smallest range first, then
/// coordinates, so the winner does not depend on input order.
fn closer(a: &(f64, Point), b: &(f64, Point)) -> bool {
    let key = |(r, p): &(f64, Point)| (*r, p.x, p.y, p.z, p.remission);
    let (ka, kb) = (key(a), key(b));
    ka.0.total_cmp(&kb.0)
        .then(ka.1.total_cmp(&kb.1))
        .then(ka.2.total_cmp(&kb.2))
        .then(ka.3.total_cmp(&kb.3))
        .then(ka.4.total_cmp(&kb.4))
        .is_lt()
}

pub fn project(cloud: &PointCloud, cfg: &ProjectionConfig) -> Result<RangeImage> {
    cfg.validate()?;
    if cloud.is_empty() {
        return Err(Error::EmptyCloud(format!("frame {} has no points", cloud.frame_id)));
    }
    let (h, w) = (cfg.height, cfg.width);
    let mut best: Vec<Option<(f64, Point)>> = vec![None; h * w];
    for (i, p) in cloud.points.iter().enumerate() {
        let r = p.range();
        if !p.is_finite() || r <= 0.0 {
            return Err(Error::Data(format!(
                "frame {}: point {i} has no positive finite range",
                cloud.frame_id
            )));
        }
        let Some((u, v)) = cfg.pixel_of(p) else { continue };
        let slot = &mut best[v * w + u];
        let cand = (r, *p);
        if slot.as_ref().is_none_or(|cur| closer(&cand, cur)) {
            *slot = Some(cand);
        }
    }
    let plane = h * w;
    let mut data = vec![FILL_VALUE; CHANNELS * plane];
    let mut mask = vec![false; plane];
    for (k, slot) in best.iter().enumerate() {
        if let Some((r, p)) = slot {
            mask[k] = true;
            data[k] = *r as Real;
            data[plane + k] = p.x as Real;
            data[2 * plane + k] = p.y as Real;
            data[3 * plane + k] = p.z as Real;
            data[4 * plane + k] = p.remission as Real;
        }
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::EmptyCloud(format!(
            "frame {}: all points outside the vertical field of view",
            cloud.frame_id
        )));
    }
    Ok(RangeImage {
        tensor: Tensor::new(vec![CHANNELS, h, w], data)?,
        valid_mask: mask,
        frame_id: cloud.frame_id,
    })
}

/// Circular shift of every channel by `columns` along the width.
pub fn yaw_shift_reference(image: &RangeImage, columns: i64) -> RangeImage {
    let (h, w) = (image.height(), image.width());
    let shift = columns.rem_euclid(w as i64) as usize;
    let src = image.tensor.data();
    let mut data = vec![0.0; src.len()];
    let mut mask = vec![false; h * w];
    for row in 0..CHANNELS * h {
        for u in 0..w {
            data[row * w + (u + shift) % w] = src[row * w + u];
        }
    }
    for v in 0..h {
        for u in 0..w {
            mask[v * w + (u + shift) % w] = image.valid_mask[v * w + u];
        }
    }
    RangeImage {
        tensor: Tensor::new(image.tensor.shape().to_vec(), data).expect("same shape"),
        valid_mask: mask,
        frame_id: image.frame_id,
    }
}

/// Serializes an image as `ARNG`, version, h, ω, then `5·h·ω` float32.
pub fn encode_range_image(image: &RangeImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * image.tensor.len());
    out.extend_from_slice(ARNG_MAGIC);
    put_u32(&mut out, ARNG_VERSION);
    put_u32(&mut out, image.height() as u32);
    put_u32(&mut out, image.width() as u32);
    put_f32s(&mut out, image.tensor.data().iter().map(|&v| v as f32));
    out
}

pub fn decode_range_image(bytes: &[u8], frame_id: u64) -> Result<RangeImage> {
    let mut r = ByteReader::new(bytes, "range image");
    r.magic(ARNG_MAGIC)?;
    let at = r.offset();
    let version = r.u32("version")?;
    if version != ARNG_VERSION {
        return Err(r.error(at, format!("unsupported version {version}")));
    }
    let h = r.u32("height")? as usize;
    let w = r.u32("width")? as usize;
    if h == 0 || w == 0 {
        return Err(r.error(8, "zero-sized image"));
    }
    let n = CHANNELS
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| r.error(8, "image size overflows"))?;
    let data: Vec<Real> = r.f32_vec(n, "pixel data")?.into_iter().map(|v| v as Real).collect();
    r.finish()?;
    let mask = data[..h * w].iter().map(|&d| d > 0.0).collect();
    Ok(RangeImage {
        tensor: Tensor::new(vec![CHANNELS, h, w], data)?,
        valid_mask: mask,
        frame_id,
    })
}

pub fn write_range_image(path: &Path, image: &RangeImage) -> Result<()> {
    fs::write(path, encode_range_image(image)).map_err(|e| Error::io(path, e))
}

pub fn read_range_image(path: &Path) -> Result<RangeImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_range_image(&bytes, 0)
}
