//! JSON-lines dataset manifests.
//!
//! Each non-blank line is an object with `id`, `image`, `points` (four
//! `[x, y]` pairs in any order) and optionally `mask` and `spacing_mm`.
//! Relative paths are resolved against the manifest's directory.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use pointseg_core::image::{FourPointAnnotation, Point};
use pointseg_core::phantom::SampleRecord;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{read_image, read_mask};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub image: PathBuf,
    pub points: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacing_mm: Option<f64>,
}

impl ManifestEntry {
    pub fn new(id: impl Into<String>, image: impl Into<PathBuf>, annotation: &FourPointAnnotation) -> Self {
        ManifestEntry {
            id: id.into(),
            image: image.into(),
            points: annotation.points().iter().map(|p| [p.x, p.y]).collect(),
            mask: None,
            spacing_mm: None,
        }
    }
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Parses the entries without touching the referenced files.
pub fn read_entries(path: &Path) -> Result<Vec<(usize, ManifestEntry)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(raw).map_err(|e| parse_err(line, e.to_string()))?;
        if entry.points.len() != 4 {
            return Err(parse_err(line, format!("expected 4 points, got {}", entry.points.len())));
        }
        out.push((line, entry));
    }
    Ok(out)
}

/// Loads every record, including images and masks.
pub fn load_manifest(path: &Path) -> Result<Vec<SampleRecord>> {
    let base = base_dir(path);
    read_entries(path)?
        .into_iter()
        .map(|(line, e)| {
            let points: Vec<Point> = e.points.iter().map(|&[x, y]| Point::new(x, y)).collect();
            let annotation = FourPointAnnotation::new(&points).map_err(|err| Error::Parse {
                path: path.to_path_buf(),
                line,
                message: err.to_string(),
            })?;
            let image = read_image(&base.join(&e.image))?;
            annotation
                .check_within(image.dims())
                .map_err(|source| Error::AnnotationOutOfBounds {
                    path: path.to_path_buf(),
                    line,
                    source,
                })?;
            let gt = e.mask.as_ref().map(|m| read_mask(&base.join(m))).transpose()?;
            let mut record = SampleRecord::new(e.id, image, annotation, gt).map_err(|err| Error::Parse {
                path: path.to_path_buf(),
                line,
                message: err.to_string(),
            })?;
            record.spacing_mm = e.spacing_mm;
            Ok(record)
        })
        .collect()
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut buf = Vec::new();
    for e in entries {
        serde_json::to_writer(&mut buf, e).map_err(|err| Error::Config(err.to_string()))?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}
