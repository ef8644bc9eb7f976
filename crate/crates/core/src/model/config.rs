use crate::error::{Error, Result};
use crate::tensor::Real;

/// Channel widths and residual counts for the five encoder layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WidthPreset {
    /// Widths and residual counts for full-size runs.
    Full,
    /// Narrow single-block layers for tests and desk-scale runs.
    Toy,
}

impl WidthPreset {
    pub fn widths(self) -> [usize; 5] {
        match self {
            WidthPreset::Full => [32, 64, 128, 256, 512],
            WidthPreset::Toy => [4, 8, 16, 32, 64],
        }
    }

    pub fn blocks(self) -> [usize; 5] {
        match self {
            WidthPreset::Full => [1, 2, 8, 8, 4],
            WidthPreset::Toy => [1, 1, 1, 1, 1],
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(WidthPreset::Full),
            "toy" => Ok(WidthPreset::Toy),
            other => Err(Error::Config(format!("unknown width preset '{other}' (full|toy)"))),
        }
    }
}

pub const MAX_ENCODER_DEPTH: usize = 5;
pub const MAX_ATTENTION_DEPTH: usize = 4;
pub const DEFAULT_DESCRIPTOR_DIM: usize = 1024;
pub const DEFAULT_LEAKY_SLOPE: Real = 0.1;

/// Architecture `E{encoder_depth}A{attention_depth}` and its input geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder_depth: usize,
    pub attention_depth: usize,
    pub widths: Vec<usize>,
    pub blocks: Vec<usize>,
    pub input_height: usize,
    pub input_width: usize,
    pub descriptor_dim: usize,
    pub leaky_slope: Real,
}

impl ModelConfig {
    /// `E{x}A{y}` built from the first `x` layers of a preset.
    pub fn preset(
        preset: WidthPreset,
        encoder_depth: usize,
        attention_depth: usize,
        input_height: usize,
        input_width: usize,
        descriptor_dim: usize,
    ) -> Result<Self> {
        let take = encoder_depth.min(MAX_ENCODER_DEPTH);
        let cfg = Self {
            encoder_depth,
            attention_depth,
            widths: preset.widths()[..take].to_vec(),
            blocks: preset.blocks()[..take].to_vec(),
            input_height,
            input_width,
            descriptor_dim,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(1..=MAX_ENCODER_DEPTH).contains(&self.encoder_depth) {
            return bad(format!("encoder depth {} outside 1..=5", self.encoder_depth));
        }
        if self.attention_depth > MAX_ATTENTION_DEPTH {
            return bad(format!("attention depth {} outside 0..=4", self.attention_depth));
        }
        if self.widths.len() != self.encoder_depth || self.blocks.len() != self.encoder_depth {
            return bad(format!(
                "{} widths and {} block counts for {} encoder layers",
                self.widths.len(),
                self.blocks.len(),
                self.encoder_depth
            ));
        }
        if self.widths.contains(&0) {
            return bad("encoder widths must be positive".into());
        }
        if self.input_height == 0 || self.input_width == 0 {
            return bad("input size must be positive".into());
        }
        let factor = 1usize << self.encoder_depth;
        if !self.input_width.is_multiple_of(factor) {
            return bad(format!(
                "input width {} is not divisible by 2^{} = {factor}",
                self.input_width, self.encoder_depth
            ));
        }
        if self.descriptor_dim == 0 || !self.descriptor_dim.is_multiple_of(self.input_height) {
            return bad(format!(
                "descriptor dim {} is not a multiple of the input height {}",
                self.descriptor_dim, self.input_height
            ));
        }
        if self.pool_width() > self.feature_width() {
            return bad(format!(
                "descriptor needs {} columns but E{} leaves only {}",
                self.pool_width(),
                self.encoder_depth,
                self.feature_width()
            ));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return bad(format!("leaky slope {} outside (0, 1)", self.leaky_slope));
        }
        Ok(())
    }

    pub fn name(&self) -> String {
        format!("E{}A{}", self.encoder_depth, self.attention_depth)
    }

    /// Channels leaving the encoder.
    pub fn feature_channels(&self) -> usize {
        *self.widths.last().expect("validated")
    }

    /// Width δ leaving the encoder.
    pub fn feature_width(&self) -> usize {
        self.input_width >> self.encoder_depth
    }

    /// Width δ_out after the head's adaptive pooling.
    pub fn pool_width(&self) -> usize {
        self.descriptor_dim / self.input_height
    }

    pub fn to_text(&self) -> String {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        format!(
            "encoder_depth={}\nattention_depth={}\nwidths={}\nblocks={}\ninput_height={}\ninput_width={}\n\
             descriptor_dim={}\nleaky_slope={}\n",
            self.encoder_depth,
            self.attention_depth,
            list(&self.widths),
            list(&self.blocks),
            self.input_height,
            self.input_width,
            self.descriptor_dim,
            self.leaky_slope
        )
    }

    /// Parses [`ModelConfig::to_text`] output. Extra keys are returned.
    pub fn from_text(text: &str) -> Result<(Self, Vec<(String, String)>)> {
        let mut kv = std::collections::BTreeMap::new();
        let mut extra = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("model config line '{line}' is not key=value")))?;
            match k {
                "encoder_depth" | "attention_depth" | "widths" | "blocks" | "input_height" | "input_width"
                | "descriptor_dim" | "leaky_slope" => {
                    kv.insert(k.to_string(), v.to_string());
                }
                _ => extra.push((k.to_string(), v.to_string())),
            }
        }
        let get = |k: &str| kv.get(k).ok_or_else(|| Error::Config(format!("model config missing '{k}'")));
        let int = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Config(format!("model config '{k}' is not an integer")))
        };
        let list = |k: &str| -> Result<Vec<usize>> {
            get(k)?
                .split(',')
                .map(|s| s.trim().parse().map_err(|_| Error::Config(format!("bad entry in '{k}'"))))
                .collect()
        };
        let cfg = Self {
            encoder_depth: int("encoder_depth")?,
            attention_depth: int("attention_depth")?,
            widths: list("widths")?,
            blocks: list("blocks")?,
            input_height: int("input_height")?,
            input_width: int("input_width")?,
            descriptor_dim: int("descriptor_dim")?,
            leaky_slope: get("leaky_slope")?
                .parse()
                .map_err(|_| Error::Config("model config 'leaky_slope' is not a number".into()))?,
        };
        cfg.validate()?;
        Ok((cfg, extra))
    }
}
