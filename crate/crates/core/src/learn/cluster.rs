use rand::Rng as _;

use crate::data::{Class, Dataset, LabelSource};
use crate::error::{Error, Result};
use crate::learn::common::EVAL_BATCH;
use crate::nn::Model;
use crate::rng::Rng;
use crate::rng_stream;
use crate::scalar::Scalar;

pub const KMEANS_MAX_ITERS: usize = 50;
pub const KMEANS_TOL: f64 = 1e-6;
pub const KMEANS_ATTEMPTS: usize = 5;

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lower index.
pub fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = dist2(point, c);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

fn plus_plus(points: &[Vec<f64>], k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    while centroids.len() < k {
        let d: Vec<f64> = points
            .iter()
            .map(|p| centroids.iter().map(|c| dist2(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d.iter().sum();
        if total <= 0.0 {
            centroids.push(points[rng.random_range(0..points.len())].clone());
            continue;
        }
        let mut r = rng.random::<f64>() * total;
        let mut pick = points.len() - 1;
        for (i, &di) in d.iter().enumerate() {
            if r < di {
                pick = i;
                break;
            }
            r -= di;
        }
        centroids.push(points[pick].clone());
    }
    centroids
}

/// Lloyd iterations from k-means++ seeds; `None` if a cluster empties.
fn lloyd(points: &[Vec<f64>], k: usize, rng: &mut Rng) -> Option<Vec<Vec<f64>>> {
    let dim = points[0].len();
    let mut centroids = plus_plus(points, k, rng);
    for _ in 0..KMEANS_MAX_ITERS {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for p in points {
            let c = nearest(p, &centroids);
            counts[c] += 1;
            sums[c].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        if counts.contains(&0) {
            return None;
        }
        let mut shift: f64 = 0.0;
        for ((c, s), &n) in centroids.iter_mut().zip(&sums).zip(&counts) {
            let next: Vec<f64> = s.iter().map(|v| v / n as f64).collect();
            shift = shift.max(dist2(c, &next).sqrt());
            *c = next;
        }
        if shift < KMEANS_TOL {
            break;
        }
    }
    let mut counts = vec![0usize; k];
    points.iter().for_each(|p| counts[nearest(p, &centroids)] += 1);
    (!counts.contains(&0)).then_some(centroids)
}

/// k-means with up to [`KMEANS_ATTEMPTS`] reseedings on empty clusters.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if points.len() < k || k == 0 {
        return Err(Error::Usage(format!("k-means with k={k} on {} points", points.len())));
    }
    for attempt in 0..KMEANS_ATTEMPTS {
        let mut rng = rng_stream!(seed, "kmeans", attempt);
        if let Some(c) = lloyd(points, k, &mut rng) {
            return Ok(c);
        }
    }
    Err(Error::DegenerateClustering {
        attempts: KMEANS_ATTEMPTS,
    })
}

/// Two centroids and the class each one stands for.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterLabeler {
    pub centroids: Vec<Vec<f64>>,
    pub mapping: [Class; 2],
    /// Fraction of probe samples whose mapped cluster matches their label.
    pub probe_agreement: f64,
}

impl ClusterLabeler {
    /// Picks the cluster-to-class map with the most probe agreement. On a
    /// tie, the cluster holding `anchor` becomes Benign, which keeps the
    /// result independent of centroid order.
    pub fn from_centroids(
        centroids: Vec<Vec<f64>>,
        probe: &[Vec<f64>],
        probe_truth: &[Class],
        anchor: &[f64],
    ) -> Result<Self> {
        if centroids.len() != 2 {
            return Err(Error::Usage("cluster labeling needs exactly two centroids".into()));
        }
        for class in Class::ALL {
            if !probe_truth.contains(&class) {
                return Err(Error::Usage(format!("probe set has no {class} sample")));
            }
        }
        let straight = [Class::Benign, Class::Malignant];
        let swapped = [Class::Malignant, Class::Benign];
        let agree = |map: &[Class; 2]| {
            probe
                .iter()
                .zip(probe_truth)
                .filter(|(p, &t)| map[nearest(p, &centroids)] == t)
                .count()
        };
        let (a, b) = (agree(&straight), agree(&swapped));
        let mapping = if a > b {
            straight
        } else if b > a {
            swapped
        } else if nearest(anchor, &centroids) == 0 {
            straight
        } else {
            swapped
        };
        let probe_agreement = a.max(b) as f64 / probe.len() as f64;
        Ok(ClusterLabeler {
            centroids,
            mapping,
            probe_agreement,
        })
    }

    pub fn label(&self, point: &[f64]) -> Class {
        self.mapping[nearest(point, &self.centroids)]
    }
}

/// Projection embeddings of every sample, as `f64` rows.
pub fn embed_all<T: Scalar>(model: &Model<T>, ds: &Dataset) -> Result<Vec<Vec<f64>>> {
    let idx: Vec<usize> = (0..ds.len()).collect();
    let mut out = Vec::with_capacity(ds.len());
    for chunk in idx.chunks(EVAL_BATCH) {
        let z = model.forward_embed(&ds.batch::<T>(chunk)?)?;
        let d = z.shape()[1];
        out.extend(
            z.data()
                .chunks(d)
                .map(|r| r.iter().map(|v| v.as_f64()).collect::<Vec<_>>()),
        );
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ClusterOutcome {
    pub relabeled: Dataset,
    pub labeler: ClusterLabeler,
}

/// k-means (k = 2) on the encoder's projections; clusters are named by the
/// labeled probe set.
pub fn cluster_label<T: Scalar>(
    encoder: &Model<T>,
    unlabeled: &Dataset,
    probe: &Dataset,
    seed: u64,
) -> Result<ClusterOutcome> {
    let points = embed_all(encoder, unlabeled)?;
    let probe_points = embed_all(encoder, probe)?;
    let truth: Vec<Class> = probe
        .iter()
        .map(|s| {
            if s.label_source() != LabelSource::GroundTruth {
                return Err(Error::Usage(format!("probe sample `{}` is not ground truth", s.id())));
            }
            s.true_label()
                .ok_or_else(|| Error::Usage("probe sample without label".into()))
        })
        .collect::<Result<_>>()?;
    let centroids = kmeans(&points, 2, seed)?;
    let labeler = ClusterLabeler::from_centroids(centroids, &probe_points, &truth, &points[0])?;
    let relabeled = unlabeled
        .iter()
        .zip(&points)
        .map(|(s, p)| s.relabel(labeler.label(p), LabelSource::Cluster))
        .collect();
    Ok(ClusterOutcome { relabeled, labeler })
}
