//! Bug journals: JSON lines of bug records next to the mutant images.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use cgt_core::fuzz::{image_hash, Bug, BugSource, BugStore};
use serde::{Deserialize, Serialize};

use crate::error::{create_parent, Error, IoContext, Result};
use crate::image_io::{read_png, write_png};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Entry {
    #[serde(flatten)]
    pub bug: Bug,
    /// Mutant image, relative to the journal's directory.
    pub mutant_path: String,
}

fn mutant_rel(bug: &Bug) -> String {
    format!("mutants/{}.png", bug.mutant_id)
}

/// Writes the journal plus every mutant image and mutation record.
pub fn write_journal(path: &Path, store: &BugStore) -> Result<()> {
    create_parent(path)?;
    let dir = path.parent().unwrap_or(Path::new(""));
    let mut buf = Vec::new();
    for (bug, img) in store.iter() {
        let rel = mutant_rel(bug);
        write_png(&dir.join(&rel), img)?;
        if let BugSource::Natural { record } = &bug.source {
            let side = dir.join(format!("mutants/{}.json", bug.mutant_id));
            fs::write(&side, serde_json::to_vec_pretty(record).expect("record serializes")).at(&side)?;
        }
        let entry = Entry {
            bug: bug.clone(),
            mutant_path: rel,
        };
        serde_json::to_writer(&mut buf, &entry).expect("entry serializes");
        buf.push(b'\n');
    }
    fs::File::create(path).at(path)?.write_all(&buf).at(path)
}

/// Rebuilds a bug store from a journal, checking every mutant's hash.
pub fn read_journal(path: &Path) -> Result<BugStore> {
    let dir = path.parent().unwrap_or(Path::new(""));
    let file = fs::File::open(path).at(path)?;
    let mut store = BugStore::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.at(path)?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: Entry =
            serde_json::from_str(&line).map_err(|e| Error::data(path, format!("line {}: {e}", n + 1)))?;
        let img = read_png(&dir.join(&entry.mutant_path))?;
        if image_hash(&img) != entry.bug.hash {
            return Err(Error::data(path, format!("mutant {} does not match its hash", entry.bug.mutant_id)));
        }
        if !store.insert(entry.bug, img) {
            return Err(Error::data(path, format!("line {}: duplicate mutant hash", n + 1)));
        }
    }
    Ok(store)
}
