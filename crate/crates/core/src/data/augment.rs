//! Random affine augmentation with bilinear resampling.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{Image, Sample};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentPolicy {
    pub max_rotation_deg: f64,
    pub hflip_prob: f64,
    pub vflip_prob: f64,
    /// Horizontal shear factor bound: `x' = x + s * y` with `s` uniform in
    /// `[-shear, shear]`.
    pub shear: f64,
    /// `(height, width)`; `None` keeps the input size.
    pub target_size: Option<(usize, usize)>,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            max_rotation_deg: 40.0,
            hflip_prob: 0.5,
            vflip_prob: 0.5,
            shear: 0.2,
            target_size: None,
        }
    }
}

impl AugmentPolicy {
    /// No geometric change, only resizing.
    pub fn identity() -> Self {
        AugmentPolicy {
            max_rotation_deg: 0.0,
            hflip_prob: 0.0,
            vflip_prob: 0.0,
            shear: 0.0,
            target_size: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs_ok = [self.hflip_prob, self.vflip_prob]
            .iter()
            .all(|p| (0.0..=1.0).contains(p));
        if !probs_ok
            || !(self.max_rotation_deg >= 0.0 && self.max_rotation_deg.is_finite())
            || !(self.shear >= 0.0 && self.shear.is_finite())
        {
            return Err(Error::Config(format!("invalid augmentation policy {self:?}")));
        }
        if matches!(self.target_size, Some((h, w)) if h == 0 || w == 0) {
            return Err(Error::Config("augmentation target size must be non-zero".into()));
        }
        Ok(())
    }

    /// Draws one set of transform parameters.
    pub fn sample(&self, rng: &mut Rng) -> AugmentParams {
        let uniform = |rng: &mut Rng, bound: f64| {
            if bound > 0.0 {
                rng.random_range(-bound..=bound)
            } else {
                0.0
            }
        };
        let rotation_deg = uniform(rng, self.max_rotation_deg);
        let shear = uniform(rng, self.shear);
        let hflip = rng.random::<f64>() < self.hflip_prob;
        let vflip = rng.random::<f64>() < self.vflip_prob;
        AugmentParams {
            rotation_deg,
            shear,
            hflip,
            vflip,
        }
    }
}

/// A concrete transform. Positive rotation is counter-clockwise as displayed
/// (rows grow downward).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AugmentParams {
    pub rotation_deg: f64,
    pub shear: f64,
    pub hflip: bool,
    pub vflip: bool,
}

/// Applies `params` to `img`, resampling to `target` with zero fill outside.
pub fn transform(img: &Image, params: &AugmentParams, target: (usize, usize)) -> Result<Image> {
    let (th, tw) = target;
    if img.height * img.width * img.channels == 0 || th * tw == 0 {
        return Err(Error::Input("zero-area image".into()));
    }
    let (h, w, c) = (img.height, img.width, img.channels);
    let (sy, sx) = (h as f64 / th as f64, w as f64 / tw as f64);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);

    // Forward map on centered coords (x right, y down): flip, shear, rotate.
    // p' = R * S * F * p, so sampling uses p = F^-1 * S^-1 * R^-1 * p'.
    let theta = params.rotation_deg.to_radians();
    let (sin, cos) = if theta == 0.0 { (0.0, 1.0) } else { theta.sin_cos() };
    let fx = if params.hflip { -1.0 } else { 1.0 };
    let fy = if params.vflip { -1.0 } else { 1.0 };

    let mut out = Image::zeros(th, tw, c);
    for v in 0..th {
        for u in 0..tw {
            let ox = (u as f64 + 0.5) * sx - 0.5 - cx;
            let oy = (v as f64 + 0.5) * sy - 0.5 - cy;
            // R^-1 for the on-screen counter-clockwise rotation.
            let rx = cos * ox - sin * oy;
            let ry = sin * ox + cos * oy;
            let shx = rx - params.shear * ry;
            let px = fx * shx + cx;
            let py = fy * ry + cy;
            for ch in 0..c {
                let val = bilinear(img, py, px, ch);
                out.set(v, u, ch, val.clamp(0.0, 1.0));
            }
        }
    }
    Ok(out)
}

fn bilinear(img: &Image, y: f64, x: f64, ch: usize) -> f32 {
    let (y0, x0) = (y.floor(), x.floor());
    let (dy, dx) = ((y - y0) as f32, (x - x0) as f32);
    let px = |yy: f64, xx: f64| -> f32 {
        if yy < 0.0 || xx < 0.0 || yy >= img.height as f64 || xx >= img.width as f64 {
            0.0
        } else {
            img.get(yy as usize, xx as usize, ch)
        }
    };
    let top = px(y0, x0) + dx * (px(y0, x0 + 1.0) - px(y0, x0));
    if dy == 0.0 {
        return top;
    }
    let bottom = px(y0 + 1.0, x0) + dx * (px(y0 + 1.0, x0 + 1.0) - px(y0 + 1.0, x0));
    top + dy * (bottom - top)
}

/// Augments one sample, drawing parameters from `rng`.
pub fn augment(sample: &Sample, policy: &AugmentPolicy, rng: &mut Rng) -> Result<Sample> {
    let img = sample.pixels();
    let target = policy.target_size.unwrap_or((img.height, img.width));
    let params = policy.sample(rng);
    Ok(sample.with_pixels(transform(img, &params, target)?))
}
