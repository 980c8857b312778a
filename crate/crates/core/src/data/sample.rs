use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Class {
    #[serde(rename = "B")]
    Benign,
    #[serde(rename = "M")]
    Malignant,
}

impl Class {
    pub const ALL: [Class; 2] = [Class::Benign, Class::Malignant];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Class> {
        Class::ALL.get(i).copied()
    }

    pub fn token(self) -> &'static str {
        match self {
            Class::Benign => "B",
            Class::Malignant => "M",
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Class {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "B" => Ok(Class::Benign),
            "M" => Ok(Class::Malignant),
            other => Err(Error::Input(format!("unknown label token `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelSource {
    GroundTruth,
    Pseudo,
    Cluster,
    None,
}

impl LabelSource {
    pub fn token(self) -> &'static str {
        match self {
            LabelSource::GroundTruth => "ground-truth",
            LabelSource::Pseudo => "pseudo",
            LabelSource::Cluster => "cluster",
            LabelSource::None => "none",
        }
    }
}

impl FromStr for LabelSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ground-truth" => Ok(LabelSource::GroundTruth),
            "pseudo" => Ok(LabelSource::Pseudo),
            "cluster" => Ok(LabelSource::Cluster),
            "none" => Ok(LabelSource::None),
            other => Err(Error::Input(format!("unknown label source `{other}`"))),
        }
    }
}

/// Counts reads of hidden ground truth.
///
/// Attached to every sample whose label was stripped; each call to
/// [`Sample::true_label`] on such a sample bumps it.
#[derive(Debug, Clone, Default)]
pub struct Tripwire(Arc<AtomicU64>);

impl Tripwire {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reads(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }

    fn trip(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }
}

/// An `h x w x c` image with values in `[0, 1]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height * width * channels == 0 {
            return Err(Error::Input(format!("zero-area image {height}x{width}x{channels}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::Input(format!(
                "image {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Image {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Appends the image in channel-major order.
    fn write_chw<T: Scalar>(&self, out: &mut Vec<T>) {
        for c in 0..self.channels {
            for p in 0..self.height * self.width {
                out.push(T::from_f32(self.data[p * self.channels + c]).expect("f32 converts"));
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Sample {
    id: String,
    pixels: Arc<Image>,
    source: Option<PathBuf>,
    true_label: Option<Class>,
    assigned_label: Option<Class>,
    label_source: LabelSource,
    tripwire: Option<Tripwire>,
}

impl Sample {
    pub fn labeled(id: impl Into<String>, pixels: Image, label: Class) -> Self {
        Sample {
            id: id.into(),
            pixels: Arc::new(pixels),
            source: None,
            true_label: Some(label),
            assigned_label: Some(label),
            label_source: LabelSource::GroundTruth,
            tripwire: None,
        }
    }

    /// A sample with no label at all, as read from an unlabeled manifest.
    pub fn unlabeled(id: impl Into<String>, pixels: Image) -> Self {
        Sample {
            id: id.into(),
            pixels: Arc::new(pixels),
            source: None,
            true_label: None,
            assigned_label: None,
            label_source: LabelSource::None,
            tripwire: None,
        }
    }

    pub fn with_source(mut self, path: PathBuf) -> Self {
        self.source = Some(path);
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn pixels(&self) -> &Image {
        &self.pixels
    }

    pub fn source(&self) -> Option<&PathBuf> {
        self.source.as_ref()
    }

    pub fn assigned_label(&self) -> Option<Class> {
        self.assigned_label
    }

    pub fn label_source(&self) -> LabelSource {
        self.label_source
    }

    /// Ground truth. Reading it from a stripped sample trips the firewall.
    pub fn true_label(&self) -> Option<Class> {
        if self.label_source != LabelSource::GroundTruth {
            if let Some(t) = &self.tripwire {
                t.trip();
            }
        }
        self.true_label
    }

    /// Ground truth for scoring and bookkeeping after training.
    ///
    /// Learners must not call this; it exists so evaluation can compare
    /// predicted labels against the hidden truth without tripping.
    pub fn audit_true_label(&self) -> Option<Class> {
        self.true_label
    }

    /// Hides the label: `label_source` becomes `none`, truth stays hidden.
    pub fn strip_label(&self, tripwire: &Tripwire) -> Sample {
        Sample {
            assigned_label: None,
            label_source: LabelSource::None,
            tripwire: Some(tripwire.clone()),
            ..self.clone()
        }
    }

    /// Assigns a predicted label; `source` must be `Pseudo` or `Cluster`.
    pub fn relabel(&self, label: Class, source: LabelSource) -> Sample {
        debug_assert!(matches!(source, LabelSource::Pseudo | LabelSource::Cluster));
        Sample {
            assigned_label: Some(label),
            label_source: source,
            ..self.clone()
        }
    }

    /// Replaces the pixels, keeping identity and labels.
    pub fn with_pixels(&self, pixels: Image) -> Sample {
        Sample {
            pixels: Arc::new(pixels),
            ..self.clone()
        }
    }

    /// Restores an unlabeled sample's hidden truth (used when reading audit files).
    pub(crate) fn with_hidden_truth(mut self, label: Option<Class>) -> Sample {
        self.true_label = label;
        self
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    #[serde(rename = "B")]
    pub benign: usize,
    #[serde(rename = "M")]
    pub malignant: usize,
}

impl ClassCounts {
    pub fn total(&self) -> usize {
        self.benign + self.malignant
    }

    pub fn add(&mut self, class: Class) {
        match class {
            Class::Benign => self.benign += 1,
            Class::Malignant => self.malignant += 1,
        }
    }

    pub fn get(&self, class: Class) -> usize {
        match class {
            Class::Benign => self.benign,
            Class::Malignant => self.malignant,
        }
    }

    pub fn from_labels(labels: impl IntoIterator<Item = Class>) -> Self {
        let mut c = ClassCounts::default();
        labels.into_iter().for_each(|l| c.add(l));
        c
    }
}

/// An ordered collection of samples.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Self {
        Dataset { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Sample> {
        self.samples.iter()
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset::new(indices.iter().map(|&i| self.samples[i].clone()).collect())
    }

    /// Counts of assigned labels; unlabeled samples are skipped.
    pub fn assigned_counts(&self) -> ClassCounts {
        ClassCounts::from_labels(self.samples.iter().filter_map(Sample::assigned_label))
    }

    /// Counts of ground truth, read through the audit path.
    pub fn audit_true_counts(&self) -> ClassCounts {
        ClassCounts::from_labels(self.samples.iter().filter_map(Sample::audit_true_label))
    }

    pub fn all_assigned(&self) -> bool {
        self.samples.iter().all(|s| s.assigned_label().is_some())
    }

    /// Assigned labels as class indices; errors if any sample lacks one.
    pub fn assigned_targets(&self) -> Result<Vec<usize>> {
        self.samples
            .iter()
            .map(|s| {
                s.assigned_label()
                    .map(Class::index)
                    .ok_or_else(|| Error::Usage(format!("sample `{}` has no assigned label", s.id())))
            })
            .collect()
    }

    /// Stacks the given samples into an `[n, c, h, w]` batch.
    pub fn batch<T: Scalar>(&self, indices: &[usize]) -> Result<Tensor<T>> {
        let first = self
            .samples
            .get(*indices.first().ok_or_else(|| Error::Usage("empty batch".into()))?)
            .ok_or_else(|| Error::Usage("batch index out of range".into()))?;
        let (h, w, c) = (first.pixels.height, first.pixels.width, first.pixels.channels);
        let mut data = Vec::with_capacity(indices.len() * h * w * c);
        for &i in indices {
            let p = &self.samples[i].pixels;
            if (p.height, p.width, p.channels) != (h, w, c) {
                return Err(Error::Input(format!(
                    "sample `{}` is {}x{}x{}, batch expects {h}x{w}x{c}",
                    self.samples[i].id, p.height, p.width, p.channels
                )));
            }
            p.write_chw(&mut data);
        }
        Tensor::new(vec![indices.len(), c, h, w], data)
    }

    /// Batch from standalone images.
    pub fn stack_images<T: Scalar>(images: &[&Image]) -> Result<Tensor<T>> {
        let first = images.first().ok_or_else(|| Error::Usage("empty batch".into()))?;
        let (h, w, c) = (first.height, first.width, first.channels);
        let mut data = Vec::with_capacity(images.len() * h * w * c);
        for img in images {
            if (img.height, img.width, img.channels) != (h, w, c) {
                return Err(Error::Input("images in a batch differ in size".into()));
            }
            img.write_chw(&mut data);
        }
        Tensor::new(vec![images.len(), c, h, w], data)
    }
}

impl FromIterator<Sample> for Dataset {
    fn from_iter<I: IntoIterator<Item = Sample>>(iter: I) -> Self {
        Dataset::new(iter.into_iter().collect())
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a Sample;
    type IntoIter = std::slice::Iter<'a, Sample>;

    fn into_iter(self) -> Self::IntoIter {
        self.samples.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img() -> Image {
        Image::new(2, 2, 1, vec![0.0, 0.25, 0.5, 1.0]).unwrap()
    }

    #[test]
    fn label_source_invariants() {
        let s = Sample::labeled("a", img(), Class::Malignant);
        assert_eq!(s.assigned_label(), s.true_label());
        let tw = Tripwire::new();
        let u = s.strip_label(&tw);
        assert_eq!(u.label_source(), LabelSource::None);
        assert_eq!(u.assigned_label(), None);
        let p = u.relabel(Class::Benign, LabelSource::Pseudo);
        assert_eq!(p.assigned_label(), Some(Class::Benign));
    }

    #[test]
    fn tripwire_counts_hidden_reads_only() {
        let tw = Tripwire::new();
        let s = Sample::labeled("a", img(), Class::Benign);
        s.true_label();
        let u = s.strip_label(&tw);
        assert_eq!(u.audit_true_label(), Some(Class::Benign));
        assert_eq!(tw.reads(), 0);
        assert_eq!(u.true_label(), Some(Class::Benign));
        u.relabel(Class::Malignant, LabelSource::Cluster).true_label();
        assert_eq!(tw.reads(), 2);
    }

    #[test]
    fn batch_is_channel_major() {
        let rgb = Image::new(1, 2, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let d = Dataset::new(vec![Sample::labeled("x", rgb, Class::Benign)]);
        let t: Tensor<f32> = d.batch(&[0, 0]).unwrap();
        assert_eq!(t.shape(), &[2, 3, 1, 2]);
        assert_eq!(&t.data()[..6], &[0.1, 0.4, 0.2, 0.5, 0.3, 0.6]);
    }

    #[test]
    fn class_tokens() {
        assert_eq!("B".parse::<Class>().unwrap(), Class::Benign);
        assert!("X".parse::<Class>().is_err());
        assert_eq!(Class::from_index(1), Some(Class::Malignant));
        assert_eq!(Class::from_index(2), None);
    }
}
