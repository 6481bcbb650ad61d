//! Layout of a run directory.
//!
//! ```text
//! data/{train_val,test}.jsonl + images      gen-data
//! split/{new_train_val,cgt_data,clean_test}.jsonl
//! split/natural_test.jsonl + images          naturally mutated test set
//! split/corruptions/<kind>_s<sev>.jsonl      corruption grid
//! split/adv_test.jsonl                       clean test ids -> adversarial images
//! adv/<id>.png                               gen-adv
//! models/baseline.{sdnm,train.csv,train.json}
//! profile.json
//! cells/<cell>/{journal.jsonl,mutants/,rounds.json,retrain.jsonl,model.sdnm,train.csv,scores.json}
//! experiment/results.json, report/report.{csv,md}
//! ```

use std::path::{Path, PathBuf};

use cgt_core::mutation::Corruption;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn data_manifest(&self, name: &str) -> PathBuf {
        self.root.join("data").join(format!("{name}.jsonl"))
    }

    pub fn data_images(&self, name: &str) -> PathBuf {
        self.root.join("data").join(name)
    }

    pub fn split_manifest(&self, name: &str) -> PathBuf {
        self.root.join("split").join(format!("{name}.jsonl"))
    }

    pub fn split_images(&self, name: &str) -> PathBuf {
        self.root.join("split").join(name)
    }

    pub fn corruption_name(kind: Corruption, severity: u8) -> String {
        format!("{}_s{severity}", kind.name())
    }

    pub fn corruption_manifest(&self, kind: Corruption, severity: u8) -> PathBuf {
        self.root
            .join("split/corruptions")
            .join(format!("{}.jsonl", Self::corruption_name(kind, severity)))
    }

    pub fn corruption_images(&self, kind: Corruption, severity: u8) -> PathBuf {
        self.root.join("split/corruptions").join(Self::corruption_name(kind, severity))
    }

    pub fn adv_dir(&self) -> PathBuf {
        self.root.join("adv")
    }

    pub fn baseline_model(&self) -> PathBuf {
        self.root.join("models/baseline.sdnm")
    }

    pub fn baseline_log(&self) -> PathBuf {
        self.root.join("models/baseline.train.csv")
    }

    pub fn baseline_meta(&self) -> PathBuf {
        self.root.join("models/baseline.train.json")
    }

    pub fn profile(&self) -> PathBuf {
        self.root.join("profile.json")
    }

    pub fn cell_dir(&self, cell: &str) -> PathBuf {
        self.root.join("cells").join(cell)
    }

    pub fn results(&self) -> PathBuf {
        self.root.join("experiment/results.json")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
}

/// Fails with a pointer to the producing step when `path` is absent.
pub fn require(path: &Path, step: &'static str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Missing {
            path: path.to_path_buf(),
            step,
        })
    }
}
