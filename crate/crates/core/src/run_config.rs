//! Strict `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored. Every key must appear in
//! [`KEYS`], at most once. `seed`, `margin` and `r_th` have no default.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::evaluation::{AblationSetup, EvalProtocol, DEFAULT_THRESHOLD, DEFAULT_TOP_N};
use crate::model::{ModelConfig, WidthPreset, DEFAULT_DESCRIPTOR_DIM};
use crate::projection::{ProjectionConfig, DEFAULT_FOV_DOWN_DEG, DEFAULT_FOV_UP_DEG};
use crate::tensor::Real;
use crate::training::{TrainConfig, DEFAULT_LEARNING_RATE};

pub const DATA_ROOT_ENV: &str = "ATTNET_DATA_ROOT";

/// Accepted keys with a short description.
pub const KEYS: &[(&str, &str)] = &[
    ("data_root", "dataset root (falls back to $ATTNET_DATA_ROOT)"),
    ("sequences", "comma-separated sequence tags"),
    ("output_dir", "directory for artifacts"),
    ("width", "range image width ω"),
    ("height", "range image height h"),
    ("fov_up", "upper vertical field of view, degrees"),
    ("fov_down", "lower vertical field of view, degrees"),
    ("encoder_depth", "encoder layers x (1-5)"),
    ("attention_depth", "attention layers y (0-4)"),
    ("preset", "encoder widths: full | toy"),
    ("descriptor_dim", "descriptor length m"),
    ("learning_rate", "Adam learning rate"),
    ("margin", "negative-pair margin (required)"),
    ("epochs", "training epochs"),
    ("pairs_per_epoch", "triplets per epoch"),
    ("freeze_gamma", "keep attention gates at 0: true | false"),
    ("seed", "RNG seed (required)"),
    ("top_n", "comma-separated recall@N list"),
    ("threshold", "top-1 similarity needed to declare a loop"),
    ("r_th", "loop distance threshold, meters (required)"),
    ("min_frame_gap", "frames between a query and its eligible references"),
    ("ablate_encoder", "comma-separated encoder depths for ablate"),
    ("ablate_attention", "comma-separated attention depths for ablate"),
    ("fps_frames", "timed frames per FPS repetition"),
    ("fps_warmup", "untimed warmup frames"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data_root: Option<PathBuf>,
    pub sequences: Vec<String>,
    pub output_dir: PathBuf,
    pub projection: ProjectionConfig,
    pub encoder_depth: usize,
    pub attention_depth: usize,
    pub preset: WidthPreset,
    pub descriptor_dim: usize,
    pub train: TrainConfig,
    pub protocol: EvalProtocol,
    pub ablate_encoder: Vec<usize>,
    pub ablate_attention: Vec<usize>,
    pub fps_frames: usize,
    pub fps_warmup: usize,
}

struct Entry {
    line: usize,
    value: String,
}

struct Fields<'a> {
    source: &'a str,
    map: BTreeMap<&'static str, Entry>,
}

impl Fields<'_> {
    fn error(&self, line: usize, message: String) -> Error {
        Error::ParseAtLine {
            source_name: self.source.to_string(),
            line,
            message,
        }
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, default: Option<T>) -> Result<T> {
        match self.map.get(key) {
            Some(e) => e
                .value
                .parse()
                .map_err(|_| self.error(e.line, format!("invalid value '{}' for '{key}'", e.value))),
            None => default.ok_or_else(|| Error::Config(format!("{}: required key '{key}' is missing", self.source))),
        }
    }

    fn list<T: std::str::FromStr>(&self, key: &str, default: Vec<T>) -> Result<Vec<T>> {
        match self.map.get(key) {
            Some(e) => e
                .value
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| self.error(e.line, format!("invalid entry '{}' in '{key}'", s.trim())))
                })
                .collect(),
            None => Ok(default),
        }
    }

    fn string(&self, key: &str) -> Option<String> {
        self.map.get(key).map(|e| e.value.clone())
    }
}

impl RunConfig {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut fields = Fields {
            source,
            map: BTreeMap::new(),
        };
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (k, v) = content
                .split_once('=')
                .ok_or_else(|| fields.error(line, format!("expected key = value, got '{content}'")))?;
            let (k, v) = (k.trim(), v.trim());
            let key = KEYS
                .iter()
                .map(|(name, _)| *name)
                .find(|name| *name == k)
                .ok_or_else(|| fields.error(line, format!("unknown key '{k}'")))?;
            if let Some(prev) = fields.map.insert(
                key,
                Entry {
                    line,
                    value: v.to_string(),
                },
            ) {
                return Err(fields.error(line, format!("'{k}' already set on line {}", prev.line)));
            }
        }
        let f = &fields;
        let d = ProjectionConfig::default();
        let projection = ProjectionConfig::new(
            f.parse("width", Some(d.width))?,
            f.parse("height", Some(d.height))?,
            f.parse("fov_up", Some(DEFAULT_FOV_UP_DEG))?,
            f.parse("fov_down", Some(DEFAULT_FOV_DOWN_DEG))?,
        )?;
        let preset = match f.string("preset") {
            Some(s) => WidthPreset::parse(&s)?,
            None => WidthPreset::Full,
        };
        let train = TrainConfig {
            learning_rate: f.parse("learning_rate", Some(DEFAULT_LEARNING_RATE))?,
            margin: f.parse::<Real>("margin", None)?,
            epochs: f.parse("epochs", Some(20))?,
            pairs_per_epoch: f.parse("pairs_per_epoch", Some(100))?,
            seed: f.parse::<u64>("seed", None)?,
            freeze_gamma: f.parse("freeze_gamma", Some(false))?,
            ..TrainConfig::default()
        };
        train.validate()?;
        let protocol = EvalProtocol {
            top_n: f.list("top_n", DEFAULT_TOP_N.to_vec())?,
            threshold: f.parse("threshold", Some(DEFAULT_THRESHOLD))?,
            r_th: f.parse::<f64>("r_th", None)?,
            min_frame_gap: f.parse("min_frame_gap", Some(crate::data::DEFAULT_MIN_FRAME_GAP))?,
        };
        protocol.validate()?;
        let cfg = Self {
            data_root: f.string("data_root").map(PathBuf::from),
            sequences: f.list("sequences", Vec::new())?,
            output_dir: PathBuf::from(f.string("output_dir").unwrap_or_else(|| "out".into())),
            projection,
            encoder_depth: f.parse("encoder_depth", Some(3))?,
            attention_depth: f.parse("attention_depth", Some(1))?,
            preset,
            descriptor_dim: f.parse("descriptor_dim", Some(DEFAULT_DESCRIPTOR_DIM))?,
            train,
            protocol,
            ablate_encoder: f.list("ablate_encoder", vec![1, 2, 3, 4, 5])?,
            ablate_attention: f.list("ablate_attention", vec![0, 1, 2, 3, 4])?,
            fps_frames: f.parse("fps_frames", Some(50))?,
            fps_warmup: f.parse("fps_warmup", Some(5))?,
        };
        cfg.model_config()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        ModelConfig::preset(
            self.preset,
            self.encoder_depth,
            self.attention_depth,
            self.projection.height,
            self.projection.width,
            self.descriptor_dim,
        )
    }

    pub fn ablation_setup(&self) -> AblationSetup {
        AblationSetup {
            preset: self.preset,
            descriptor_dim: self.descriptor_dim,
            projection: self.projection,
            train: self.train.clone(),
            protocol: self.protocol.clone(),
            fps_frames: self.fps_frames,
            fps_warmup: self.fps_warmup,
        }
    }

    /// `data_root`, else the value of `env` (normally `$ATTNET_DATA_ROOT`).
    pub fn resolve_data_root(&self, env: Option<&str>) -> Result<PathBuf> {
        self.data_root
            .clone()
            .or_else(|| env.filter(|s| !s.is_empty()).map(PathBuf::from))
            .ok_or_else(|| Error::Config(format!("no data_root in config and ${DATA_ROOT_ENV} is unset")))
    }

    /// Canonical text with every key, defaults filled in.
    pub fn to_text(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let mut put = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        if let Some(root) = &self.data_root {
            put("data_root", root.display().to_string());
        }
        put("sequences", self.sequences.join(","));
        put("output_dir", self.output_dir.display().to_string());
        put("width", self.projection.width.to_string());
        put("height", self.projection.height.to_string());
        put("fov_up", degrees_text(self.projection.fov_up));
        put("fov_down", degrees_text(self.projection.fov_down));
        put("encoder_depth", self.encoder_depth.to_string());
        put("attention_depth", self.attention_depth.to_string());
        put(
            "preset",
            match self.preset {
                WidthPreset::Full => "full",
                WidthPreset::Toy => "toy",
            }
            .into(),
        );
        put("descriptor_dim", self.descriptor_dim.to_string());
        put("learning_rate", self.train.learning_rate.to_string());
        put("margin", self.train.margin.to_string());
        put("epochs", self.train.epochs.to_string());
        put("pairs_per_epoch", self.train.pairs_per_epoch.to_string());
        put("freeze_gamma", self.train.freeze_gamma.to_string());
        put("seed", self.train.seed.to_string());
        put("top_n", join(&self.protocol.top_n));
        put("threshold", self.protocol.threshold.to_string());
        put("r_th", self.protocol.r_th.to_string());
        put("min_frame_gap", self.protocol.min_frame_gap.to_string());
        put("ablate_encoder", join(&self.ablate_encoder));
        put("ablate_attention", join(&self.ablate_attention));
        put("fps_frames", self.fps_frames.to_string());
        put("fps_warmup", self.fps_warmup.to_string());
        s
    }
}

/// Degrees rounded to nine decimals, so `3` does not print as `3.0000000000000004`.
fn degrees_text(radians: f64) -> String {
    ((radians.to_degrees() * 1e9).round() / 1e9).to_string()
}
