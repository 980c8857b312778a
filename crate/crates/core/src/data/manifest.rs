//! Manifest CSV reading and writing.
//!
//! A manifest has the header `id,path,label` and optionally a fourth
//! `label_source` column. Paths are resolved relative to the manifest's
//! directory.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::image_io::{read_image, write_lfim};
use crate::data::{Class, Dataset, LabelSource, Sample};
use crate::error::{Error, Result};

#[derive(Debug, Deserialize, Serialize)]
struct Row {
    id: String,
    path: String,
    label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label_source: Option<String>,
}

fn ingest(row: usize, msg: impl Into<String>) -> Error {
    Error::Ingestion { row, msg: msg.into() }
}

/// Reads a manifest whose rows may carry any label source.
///
/// Rows with an empty label must declare `label_source` `none`.
pub fn load_manifest(manifest: &Path) -> Result<Dataset> {
    let base = manifest.parent().unwrap_or(Path::new(""));
    let file = fs::File::open(manifest).map_err(|e| Error::at_path(manifest, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader.headers()?.clone();
    for need in ["id", "path", "label"] {
        if !headers.iter().any(|h| h == need) {
            return Err(ingest(1, format!("manifest header lacks `{need}` column")));
        }
    }
    let mut seen = HashSet::new();
    let mut samples = Vec::new();
    for (i, rec) in reader.deserialize::<Row>().enumerate() {
        // Line numbers: the header is line 1.
        let line = i + 2;
        let row = rec.map_err(|e| ingest(line, e.to_string()))?;
        if row.id.is_empty() {
            return Err(ingest(line, "empty id"));
        }
        if !seen.insert(row.id.clone()) {
            return Err(ingest(line, format!("duplicate id `{}`", row.id)));
        }
        let source = match row.label_source.as_deref() {
            None | Some("") => None,
            Some(s) => Some(s.parse::<LabelSource>().map_err(|e| ingest(line, e.to_string()))?),
        };
        let label = match row.label.as_str() {
            "" => None,
            tok => Some(tok.parse::<Class>().map_err(|e| ingest(line, e.to_string()))?),
        };
        let path = base.join(&row.path);
        if !path.is_file() {
            return Err(ingest(line, format!("missing file {}", path.display())));
        }
        let pixels = read_image(&path).map_err(|e| ingest(line, e.to_string()))?;
        let path = fs::canonicalize(&path).unwrap_or(path);
        let sample = match (label, source.unwrap_or(LabelSource::GroundTruth)) {
            (Some(l), LabelSource::GroundTruth) => Sample::labeled(&row.id, pixels, l),
            (Some(l), s @ (LabelSource::Pseudo | LabelSource::Cluster)) => {
                Sample::unlabeled(&row.id, pixels).relabel(l, s)
            }
            (None, LabelSource::None) => Sample::unlabeled(&row.id, pixels),
            (None, _) => return Err(ingest(line, "missing label")),
            (Some(_), LabelSource::None) => return Err(ingest(line, "label present but label_source is `none`")),
        };
        samples.push(sample.with_source(path));
    }
    Ok(Dataset::new(samples))
}

/// Loads a ground-truth corpus: every row must carry a `B` or `M` label.
pub fn load_corpus(manifest: &Path) -> Result<Dataset> {
    let ds = load_manifest(manifest)?;
    if ds.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if let Some((i, s)) = ds
        .iter()
        .enumerate()
        .find(|(_, s)| s.label_source() != LabelSource::GroundTruth)
    {
        return Err(ingest(
            i + 2,
            format!("sample `{}` is not ground-truth labeled", s.id()),
        ));
    }
    Ok(ds)
}

/// Attaches hidden truth from a `id,label` audit file to unlabeled samples.
pub fn attach_hidden_truth(ds: &Dataset, audit: &Path) -> Result<Dataset> {
    let file = fs::File::open(audit).map_err(|e| Error::at_path(audit, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut truth = std::collections::HashMap::new();
    for (i, rec) in reader.deserialize::<(String, String)>().enumerate() {
        let (id, label) = rec.map_err(|e| ingest(i + 2, e.to_string()))?;
        let label = label.parse::<Class>().map_err(|e| ingest(i + 2, e.to_string()))?;
        truth.insert(id, label);
    }
    Ok(ds
        .iter()
        .map(|s| s.clone().with_hidden_truth(truth.get(s.id()).copied()))
        .collect())
}

fn relative_to(path: &Path, dir: &Path) -> PathBuf {
    let dir = fs::canonicalize(dir).unwrap_or_else(|_| dir.to_path_buf());
    path.strip_prefix(&dir)
        .map(Path::to_path_buf)
        .unwrap_or_else(|_| path.to_path_buf())
}

/// Writes a manifest for samples that already have a payload on disk.
///
/// With `with_source` the `label_source` column is added.
pub fn write_manifest(manifest: &Path, ds: &Dataset, with_source: bool) -> Result<()> {
    let dir = manifest.parent().unwrap_or(Path::new("."));
    let mut writer = csv::Writer::from_path(manifest)?;
    for s in ds {
        let src = s
            .source()
            .ok_or_else(|| Error::Usage(format!("sample `{}` has no payload on disk", s.id())))?;
        writer.serialize(Row {
            id: s.id().to_string(),
            path: relative_to(src, dir).to_string_lossy().into_owned(),
            label: s.assigned_label().map(|c| c.token().to_string()).unwrap_or_default(),
            label_source: with_source.then(|| s.label_source().token().to_string()),
        })?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes the hidden truth of `ds` as `id,label` rows.
pub fn write_truth(path: &Path, ds: &Dataset) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["id", "label"])?;
    for s in ds {
        if let Some(l) = s.audit_true_label() {
            writer.write_record([s.id(), l.token()])?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Writes every sample as an LFIM payload under `dir/images` plus
/// `dir/manifest.csv`, returning the dataset with sources attached.
pub fn write_corpus(dir: &Path, ds: &Dataset) -> Result<Dataset> {
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::at_path(&images, e))?;
    let mut out = Vec::with_capacity(ds.len());
    for s in ds {
        if s.id().is_empty()
            || !s.id().chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
            || s.id().starts_with('.')
        {
            return Err(Error::Input(format!("id `{}` is not usable as a file name", s.id())));
        }
        let path = images.join(format!("{}.lfim", s.id()));
        write_lfim(&path, s.pixels())?;
        let path = fs::canonicalize(&path).map_err(|e| Error::at_path(&path, e))?;
        out.push(s.clone().with_source(path));
    }
    let out = Dataset::new(out);
    write_manifest(&dir.join("manifest.csv"), &out, false)?;
    Ok(out)
}
