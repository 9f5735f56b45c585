use std::fmt;
use std::str::FromStr;

use super::ModelError;

/// Named architecture sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Alpha,
    Beta,
    Gamma,
    Delta,
    /// Desk-scale variant for tests and smoke runs.
    Nano,
}

impl Preset {
    pub const ALL: [Preset; 5] = [Preset::Alpha, Preset::Beta, Preset::Gamma, Preset::Delta, Preset::Nano];
}

impl FromStr for Preset {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s.to_ascii_lowercase().as_str() {
            "alpha" | "α" => Ok(Self::Alpha),
            "beta" | "β" => Ok(Self::Beta),
            "gamma" | "γ" => Ok(Self::Gamma),
            "delta" | "δ" => Ok(Self::Delta),
            "nano" => Ok(Self::Nano),
            other => Err(ModelError::Config(format!("unknown preset `{other}`"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Alpha => "alpha",
            Self::Beta => "beta",
            Self::Gamma => "gamma",
            Self::Delta => "delta",
            Self::Nano => "nano",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub channels: [usize; 4],
    pub depths: [usize; 4],
    pub n_heads: usize,
    pub ff_multiplier: usize,
    pub kernel_stem: usize,
    pub stride_stem: usize,
    pub kernel_dw: usize,
    pub padding_dw: usize,
    /// Largest stochastic-depth rate, reached by the last block.
    pub droppath_rate: f64,
    pub input_channels: usize,
    pub input_length: usize,
    pub output_dim: usize,
}

impl ModelConfig {
    pub fn preset(p: Preset) -> Self {
        let (channels, depths, n_heads) = match p {
            Preset::Alpha => ([64, 128, 256, 512], [2, 2, 2, 2], 8),
            Preset::Beta => ([64, 128, 256, 512], [3, 3, 3, 3], 8),
            Preset::Gamma => ([72, 144, 288, 576], [3, 3, 4, 3], 8),
            Preset::Delta => ([96, 192, 384, 768], [4, 4, 6, 4], 8),
            Preset::Nano => ([8, 16, 32, 64], [1, 1, 1, 1], 2),
        };
        Self {
            channels,
            depths,
            n_heads,
            ff_multiplier: 4,
            kernel_stem: 4,
            stride_stem: 4,
            kernel_dw: 7,
            padding_dw: 3,
            droppath_rate: 0.1,
            input_channels: 6,
            input_length: 200,
            output_dim: 2,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.channels.windows(2).any(|w| w[0] > w[1]) || self.channels.contains(&0) {
            return bad(format!("channels {:?} must be positive and nondecreasing", self.channels));
        }
        if self.n_heads == 0 || self.channels.iter().any(|c| c % self.n_heads != 0) {
            return bad(format!("channels {:?} not divisible by {} heads", self.channels, self.n_heads));
        }
        if self.ff_multiplier == 0 || self.kernel_stem == 0 || self.stride_stem == 0 || self.kernel_dw == 0 {
            return bad("kernel sizes, stride and ff multiplier must be positive".into());
        }
        if self.kernel_dw != 2 * self.padding_dw + 1 {
            return bad(format!("depthwise kernel {} with padding {} does not preserve length", self.kernel_dw, self.padding_dw));
        }
        if !(0.0..1.0).contains(&self.droppath_rate) {
            return bad(format!("droppath rate {}", self.droppath_rate));
        }
        if self.input_channels == 0 || self.output_dim == 0 {
            return bad("input channels and output dim must be positive".into());
        }
        self.stage_lengths()?;
        Ok(())
    }

    /// Sequence length after the stem and after each stage's downsampling.
    pub fn stage_lengths(&self) -> Result<[usize; 5], ModelError> {
        if self.input_length < self.kernel_stem {
            return Err(ModelError::Config(format!("input length {} shorter than stem kernel", self.input_length)));
        }
        let mut out = [0; 5];
        out[0] = (self.input_length - self.kernel_stem) / self.stride_stem + 1;
        for i in 1..5 {
            if out[i - 1] < 2 {
                return Err(ModelError::Config(format!("input length {} too short for the stride chain", self.input_length)));
            }
            out[i] = (out[i - 1] - 2) / 2 + 1;
        }
        Ok(out)
    }

    pub fn total_blocks(&self) -> usize {
        self.depths.iter().sum()
    }

    /// Droppath rate of block `index` (0-based over the whole network),
    /// linear from 0 to `droppath_rate`.
    pub fn block_droppath(&self, index: usize) -> f64 {
        let n = self.total_blocks();
        if n <= 1 {
            0.0
        } else {
            self.droppath_rate * index as f64 / (n - 1) as f64
        }
    }

    /// Flat `key = value` rendering, also embedded in checkpoints.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let list = |a: &[usize; 4]| a.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        vec![
            ("channels".into(), list(&self.channels)),
            ("depths".into(), list(&self.depths)),
            ("n_heads".into(), self.n_heads.to_string()),
            ("ff_multiplier".into(), self.ff_multiplier.to_string()),
            ("kernel_stem".into(), self.kernel_stem.to_string()),
            ("stride_stem".into(), self.stride_stem.to_string()),
            ("kernel_dw".into(), self.kernel_dw.to_string()),
            ("padding_dw".into(), self.padding_dw.to_string()),
            ("droppath_rate".into(), format!("{:?}", self.droppath_rate)),
            ("input_channels".into(), self.input_channels.to_string()),
            ("input_length".into(), self.input_length.to_string()),
            ("output_dim".into(), self.output_dim.to_string()),
        ]
    }

    /// Overrides one field from its `to_kv` key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ModelError> {
        let err = || ModelError::Config(format!("bad value `{value}` for `{key}`"));
        let int = || value.trim().parse::<usize>().map_err(|_| err());
        let list = || -> Result<[usize; 4], ModelError> {
            let v: Vec<usize> = value.split(',').map(|s| s.trim().parse().map_err(|_| err())).collect::<Result<_, _>>()?;
            v.try_into().map_err(|_| err())
        };
        match key {
            "channels" => self.channels = list()?,
            "depths" => self.depths = list()?,
            "n_heads" => self.n_heads = int()?,
            "ff_multiplier" => self.ff_multiplier = int()?,
            "kernel_stem" => self.kernel_stem = int()?,
            "stride_stem" => self.stride_stem = int()?,
            "kernel_dw" => self.kernel_dw = int()?,
            "padding_dw" => self.padding_dw = int()?,
            "droppath_rate" => self.droppath_rate = value.trim().parse().map_err(|_| err())?,
            "input_channels" => self.input_channels = int()?,
            "input_length" => self.input_length = int()?,
            "output_dim" => self.output_dim = int()?,
            _ => return Err(ModelError::Config(format!("unknown model key `{key}`"))),
        }
        Ok(())
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::preset(Preset::Alpha)
    }
}
