//! Synthetic two-class blob/texture corpus.
//!
//! Benign images hold a few large soft blobs, malignant images many small
//! ones. `separability` interpolates the malignant blob statistics towards
//! the benign ones (0 makes the classes indistinguishable). Every image also
//! carries a class-independent stain tint of strength `stain`, which an
//! unsupervised learner can latch onto instead of the class cue.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Class, Dataset, Image, Sample};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::rng_stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub count: usize,
    pub size: usize,
    pub channels: usize,
    pub benign_fraction: f64,
    pub separability: f64,
    pub stain: f64,
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            count: 625,
            size: 32,
            channels: 3,
            benign_fraction: 0.5,
            separability: 1.0,
            stain: 1.0,
            noise: 0.03,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if self.count < 4 || self.size < 8 || !matches!(self.channels, 1 | 3) {
            return Err(Error::Config(format!(
                "synthetic corpus needs count >= 4, size >= 8 and 1 or 3 channels, got {}/{}/{}",
                self.count, self.size, self.channels
            )));
        }
        if !unit(self.benign_fraction)
            || !unit(self.separability)
            || !(self.stain.is_finite() && self.stain >= 0.0)
            || !(self.noise.is_finite() && self.noise >= 0.0)
        {
            return Err(Error::Config("synthetic corpus parameters out of range".into()));
        }
        Ok(())
    }
}

struct BlobStats {
    count: (f64, f64),
    sigma: (f64, f64),
    amplitude: f64,
}

const BENIGN: BlobStats = BlobStats {
    count: (2.0, 3.0),
    sigma: (3.5, 5.5),
    amplitude: 0.45,
};

const MALIGNANT: BlobStats = BlobStats {
    count: (9.0, 14.0),
    sigma: (0.9, 1.4),
    amplitude: 0.6,
};

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

fn render(class: Class, cfg: &SynthConfig, rng: &mut Rng) -> Image {
    let s = cfg.separability;
    let stats = match class {
        Class::Benign => BlobStats { ..BENIGN },
        Class::Malignant => BlobStats {
            count: (
                lerp(BENIGN.count.0, MALIGNANT.count.0, s),
                lerp(BENIGN.count.1, MALIGNANT.count.1, s),
            ),
            sigma: (
                lerp(BENIGN.sigma.0, MALIGNANT.sigma.0, s),
                lerp(BENIGN.sigma.1, MALIGNANT.sigma.1, s),
            ),
            amplitude: lerp(BENIGN.amplitude, MALIGNANT.amplitude, s),
        },
    };
    let n = cfg.size;
    let c = cfg.channels;
    let mut field = vec![0.0f64; n * n];
    let blobs = rng.random_range(stats.count.0..=stats.count.1).round() as usize;
    for _ in 0..blobs {
        let sigma = rng.random_range(stats.sigma.0..=stats.sigma.1);
        let (cy, cx) = (rng.random_range(0.0..n as f64), rng.random_range(0.0..n as f64));
        let amp = stats.amplitude * rng.random_range(0.8..1.2);
        let inv = 1.0 / (2.0 * sigma * sigma);
        for y in 0..n {
            for x in 0..n {
                let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                field[y * n + x] += amp * (-d2 * inv).exp();
            }
        }
    }

    // Stain: one of two tints, chosen independently of the class.
    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let tint: Vec<f64> = if c == 3 {
        vec![0.18 * sign, 0.0, -0.18 * sign]
    } else {
        vec![0.12 * sign]
    };
    let brightness = rng.random_range(-0.06..=0.06);
    let noise = Normal::new(0.0, cfg.noise.max(f64::MIN_POSITIVE)).expect("finite std");

    let mut data = Vec::with_capacity(n * n * c);
    for &f in &field {
        for t in &tint {
            let v = 0.3 + f.min(0.6) + cfg.stain * (t + brightness) + noise.sample(rng);
            data.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    Image::new(n, n, c, data).expect("consistent dimensions")
}

/// Generates the corpus; class order is shuffled, ids are `syn-00000`...
pub fn generate(cfg: &SynthConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let benign = (cfg.benign_fraction * cfg.count as f64).round() as usize;
    let mut classes: Vec<Class> = (0..cfg.count)
        .map(|i| if i < benign { Class::Benign } else { Class::Malignant })
        .collect();
    classes.shuffle(&mut rng_stream!(seed, "synth", "classes"));
    Ok(classes
        .iter()
        .enumerate()
        .map(|(i, &class)| {
            let mut rng = rng_stream!(seed, "synth", "image", i);
            Sample::labeled(format!("syn-{i:05}"), render(class, cfg, &mut rng), class)
        })
        .collect())
}
