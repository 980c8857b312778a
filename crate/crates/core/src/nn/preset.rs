use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Backbone family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    /// Strided stem plus identity-shortcut residual blocks and global pooling.
    #[serde(rename = "mini-res")]
    MiniRes,
    /// Stacked conv-relu-conv-relu-maxpool stages, flattened into a dense layer.
    #[serde(rename = "mini-vgg")]
    MiniVgg,
    /// The residual layout scaled jointly in width and depth.
    #[serde(rename = "mini-eff")]
    MiniEff,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::MiniRes, Family::MiniVgg, Family::MiniEff];

    pub fn name(self) -> &'static str {
        match self {
            Family::MiniRes => "mini-res",
            Family::MiniVgg => "mini-vgg",
            Family::MiniEff => "mini-eff",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown backbone family `{s}`")))
    }
}

/// Compound-scaling coefficients for one step up from the base network:
/// depth grows by 1.2 and width by 1.1.
pub const EFF_DEPTH_STEP: f64 = 1.2;
pub const EFF_WIDTH_STEP: f64 = 1.1;

pub const RES_BASE_WIDTH: usize = 8;
pub const RES_BASE_BLOCKS: usize = 3;
pub const VGG_BASE_WIDTHS: [usize; 3] = [4, 8, 16];
pub const VGG_BASE_CONVS_PER_STAGE: usize = 2;
pub const PROJECTION_DIM: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackbonePreset {
    pub family: Family,
    /// `(height, width, channels)`.
    pub input_size: (usize, usize, usize),
    pub width_multiplier: f64,
    pub depth_multiplier: f64,
    pub embedding_dim: usize,
}

impl BackbonePreset {
    /// Desk-scale defaults: 32x32 RGB input, 128-d embedding.
    pub fn new(family: Family) -> Self {
        let (width_multiplier, depth_multiplier) = match family {
            Family::MiniEff => (EFF_WIDTH_STEP, EFF_DEPTH_STEP),
            _ => (1.0, 1.0),
        };
        BackbonePreset {
            family,
            input_size: (32, 32, 3),
            width_multiplier,
            depth_multiplier,
            embedding_dim: 128,
        }
    }

    pub fn with_input_size(mut self, h: usize, w: usize, c: usize) -> Self {
        self.input_size = (h, w, c);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w, c) = self.input_size;
        if h < 8 || w < 8 {
            return Err(Error::Config(format!(
                "input {h}x{w} is too small for the pooling pyramid (minimum 8x8)"
            )));
        }
        if c == 0 || self.embedding_dim == 0 {
            return Err(Error::Config("channels and embedding_dim must be positive".into()));
        }
        for (name, m) in [("width", self.width_multiplier), ("depth", self.depth_multiplier)] {
            if !(m > 0.0 && m.is_finite()) {
                return Err(Error::Config(format!("{name}_multiplier must be positive, got {m}")));
            }
        }
        Ok(())
    }

    pub fn scaled_width(&self, base: usize) -> usize {
        scale_up(base, self.width_multiplier)
    }

    pub fn scaled_depth(&self, base: usize) -> usize {
        scale_up(base, self.depth_multiplier)
    }

    /// Number of residual blocks (0 for the VGG family).
    pub fn residual_blocks(&self) -> usize {
        match self.family {
            Family::MiniVgg => 0,
            _ => self.scaled_depth(RES_BASE_BLOCKS),
        }
    }
}

fn scale_up(base: usize, m: f64) -> usize {
    // The epsilon keeps exact products such as 3 * 2.0 from rounding up.
    ((base as f64 * m) - 1e-9).ceil().max(1.0) as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_names_roundtrip() {
        for f in Family::ALL {
            assert_eq!(f.name().parse::<Family>().unwrap(), f);
            let json = serde_json::to_string(&f).unwrap();
            assert_eq!(json, format!("\"{}\"", f.name()));
        }
        assert!("mini-alex".parse::<Family>().is_err());
    }

    #[test]
    fn depth_scaling_rounds_up() {
        let mut p = BackbonePreset::new(Family::MiniEff);
        p.depth_multiplier = 1.0;
        assert_eq!(p.residual_blocks(), 3);
        p.depth_multiplier = 2.0;
        assert_eq!(p.residual_blocks(), 6);
        p.depth_multiplier = 1.2;
        assert_eq!(p.residual_blocks(), 4);
        p.depth_multiplier = 0.1;
        assert_eq!(p.residual_blocks(), 1);
    }

    #[test]
    fn small_inputs_rejected() {
        let p = BackbonePreset::new(Family::MiniVgg).with_input_size(7, 32, 3);
        assert!(matches!(p.validate(), Err(Error::Config(_))));
        assert!(BackbonePreset::new(Family::MiniVgg)
            .with_input_size(8, 8, 1)
            .validate()
            .is_ok());
    }
}
