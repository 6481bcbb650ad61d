//! JSON-lines dataset manifests.
//!
//! One record per line: `{"id", "image_path", "boxes": [[x1, y1, x2, y2], ...]}`.
//! Relative image paths resolve against the manifest's directory.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use cgt_core::{BBox, Sample};
use serde::{Deserialize, Serialize};

use crate::error::{create_parent, Error, IoContext, Result};
use crate::image_io::{read_png, write_png};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub id: String,
    pub image_path: String,
    pub boxes: Vec<[f32; 4]>,
}

impl Record {
    pub fn bboxes(&self) -> Vec<BBox> {
        self.boxes.iter().map(|b| BBox::raw(b[0], b[1], b[2], b[3])).collect()
    }
}

pub fn box_array(b: &BBox) -> [f32; 4] {
    [b.x_min, b.y_min, b.x_max, b.y_max]
}

fn base_dir(manifest: &Path) -> &Path {
    manifest.parent().unwrap_or(Path::new(""))
}

/// Absolute-or-cwd-relative location of a record's image.
pub fn resolve(manifest: &Path, rec: &Record) -> PathBuf {
    base_dir(manifest).join(&rec.image_path)
}

/// Path of `target` as written into a manifest stored at `manifest`.
pub fn relative(manifest: &Path, target: &Path) -> String {
    let rel = pathdiff::diff_paths(target, base_dir(manifest)).unwrap_or_else(|| target.to_path_buf());
    rel.to_string_lossy().replace('\\', "/")
}

/// Reads and validates a manifest: unique ids, valid boxes.
pub fn read_manifest(path: &Path) -> Result<Vec<Record>> {
    let file = fs::File::open(path).at(path)?;
    let mut out = Vec::new();
    let mut ids = BTreeSet::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.at(path)?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record =
            serde_json::from_str(&line).map_err(|e| Error::data(path, format!("line {}: {e}", n + 1)))?;
        if !ids.insert(rec.id.clone()) {
            return Err(Error::data(path, format!("duplicate id {:?}", rec.id)));
        }
        if let Some(b) = rec.bboxes().iter().find(|b| !b.is_valid()) {
            return Err(Error::data(path, format!("{}: degenerate box {b:?}", rec.id)));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, records: &[Record]) -> Result<()> {
    create_parent(path)?;
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).expect("records serialize");
        buf.push(b'\n');
    }
    fs::File::create(path).at(path)?.write_all(&buf).at(path)
}

pub fn load_record(manifest: &Path, rec: &Record) -> Result<Sample> {
    let image = read_png(&resolve(manifest, rec))?;
    Ok(Sample::new(rec.id.clone(), image, rec.bboxes()))
}

/// Loads every image of a manifest.
pub fn load_samples(path: &Path) -> Result<Vec<Sample>> {
    read_manifest(path)?.iter().map(|r| load_record(path, r)).collect()
}

/// Writes `samples` as `<image_dir>/<id>.png` plus a manifest at `path`.
pub fn write_samples(path: &Path, image_dir: &Path, samples: &[Sample]) -> Result<Vec<Record>> {
    let mut records = Vec::with_capacity(samples.len());
    for s in samples {
        let img = image_dir.join(format!("{}.png", s.id));
        write_png(&img, &s.image)?;
        records.push(Record {
            id: s.id.clone(),
            image_path: relative(path, &img),
            boxes: s.boxes.iter().map(box_array).collect(),
        });
    }
    write_manifest(path, &records)?;
    Ok(records)
}

/// Re-roots records read from `from` so they resolve from `to`.
pub fn rebase(from: &Path, to: &Path, records: &[Record]) -> Vec<Record> {
    records
        .iter()
        .map(|r| Record {
            image_path: relative(to, &resolve(from, r)),
            ..r.clone()
        })
        .collect()
}
