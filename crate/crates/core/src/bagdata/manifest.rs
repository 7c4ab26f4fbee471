use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{load_bag, load_profile, BagFormat, GenomicProfile, InstanceBag, Modality, SurvivalRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseEntry {
    pub case_id: String,
    /// Relative paths resolve against the manifest's directory.
    pub pathology_feature_path: PathBuf,
    pub genomic_profile_path: PathBuf,
    pub time_months: f64,
    /// 0 = event observed, 1 = right-censored.
    pub censor: u8,
}

impl CaseEntry {
    pub fn record(&self) -> Result<SurvivalRecord> {
        if self.censor > 1 {
            return Err(Error::Data(format!("case {}: censor must be 0 or 1", self.case_id)));
        }
        SurvivalRecord::new(self.time_months, self.censor == 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategorySpec {
    pub name: String,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseManifest {
    pub cases: Vec<CaseEntry>,
    pub feature_dim: usize,
    pub category_spec: Vec<CategorySpec>,
}

/// A fully loaded case, ready for training.
#[derive(Debug, Clone)]
pub struct LoadedCase {
    pub case_id: String,
    pub pathology: InstanceBag,
    pub genomic: GenomicProfile,
    pub record: SurvivalRecord,
}

impl CaseManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: CaseManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        manifest.check_ids()?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn check_ids(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for case in &self.cases {
            if !seen.insert(case.case_id.as_str()) {
                return Err(Error::Data(format!("duplicate case id {:?}", case.case_id)));
            }
        }
        Ok(())
    }

    pub fn records(&self) -> Result<Vec<SurvivalRecord>> {
        self.cases.iter().map(CaseEntry::record).collect()
    }

    /// Loads every referenced file and checks it against `feature_dim` and
    /// `category_spec`.
    pub fn load_cases(&self, base_dir: &Path) -> Result<Vec<LoadedCase>> {
        self.check_ids()?;
        self.cases
            .iter()
            .map(|entry| {
                let ppath = base_dir.join(&entry.pathology_feature_path);
                let mut pathology = load_bag(&ppath, BagFormat::from_path(&ppath), Modality::Pathology)?;
                pathology.case_id = entry.case_id.clone();
                if pathology.dim() != self.feature_dim {
                    return Err(Error::Shape(format!(
                        "case {}: pathology dim {} != feature_dim {}",
                        entry.case_id,
                        pathology.dim(),
                        self.feature_dim
                    )));
                }
                let genomic = load_profile(&base_dir.join(&entry.genomic_profile_path))?;
                let matches = genomic.len() == self.category_spec.len()
                    && genomic
                        .categories()
                        .iter()
                        .zip(&self.category_spec)
                        .all(|((name, attrs), spec)| *name == spec.name && attrs.len() == spec.dim);
                if !matches {
                    return Err(Error::Shape(format!(
                        "case {}: genomic profile does not match category_spec",
                        entry.case_id
                    )));
                }
                Ok(LoadedCase {
                    case_id: entry.case_id.clone(),
                    pathology,
                    genomic,
                    record: entry.record()?,
                })
            })
            .collect()
    }
}
