use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Result, StampError};

pub const MANIFEST_VERSION: u32 = 1;

/// Train/validation/test sample-id lists, stored as JSON.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub version: u32,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl SplitManifest {
    pub fn new(train: Vec<String>, validation: Vec<String>, test: Vec<String>) -> Self {
        Self {
            version: MANIFEST_VERSION,
            train,
            validation,
            test,
        }
    }

    /// Checks the splits are disjoint and, given a dataset, that every id exists.
    pub fn validate(&self, dataset: Option<&Dataset>) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(StampError::Data(format!(
                "unsupported manifest version {}",
                self.version
            )));
        }
        let mut seen = HashSet::new();
        for (split, ids) in [
            ("train", &self.train),
            ("validation", &self.validation),
            ("test", &self.test),
        ] {
            for id in ids {
                if !seen.insert(id.as_str()) {
                    return Err(StampError::Data(format!(
                        "id `{id}` repeated (second time in {split})"
                    )));
                }
            }
        }
        if let Some(ds) = dataset {
            let known: HashSet<&str> = ds.samples.iter().map(|s| s.sample_id()).collect();
            if let Some(missing) = seen.iter().find(|id| !known.contains(*id)) {
                return Err(StampError::Data(format!(
                    "manifest id `{missing}` not in dataset"
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.validate(None)?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
