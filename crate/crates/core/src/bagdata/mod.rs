//! Bags of instance features, genomic profiles, survival labels and the
//! on-disk dataset layout.

mod discretize;
mod io;
mod manifest;
mod synth;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use discretize::{assign_bin, discretize_times, Discretization};
pub use io::{
    load_bag, load_matrix, load_profile, save_bag, save_matrix_f64, save_profile, BagFormat,
};
pub(crate) use io::fmt_num;
pub use manifest::{CaseEntry, CaseManifest, CategorySpec, LoadedCase};
pub use synth::{
    generate_cases, generate_synthetic_dataset, SyntheticCase, SyntheticDataset, SyntheticSpec,
    DEFAULT_CATEGORIES,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Pathology,
    Genomic,
}

/// An `M x d` matrix of instance features with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceBag {
    features: Array2<f64>,
    pub modality: Modality,
    pub case_id: String,
}

impl InstanceBag {
    pub fn new(features: Array2<f64>, modality: Modality, case_id: impl Into<String>) -> Result<Self> {
        let (m, d) = features.dim();
        if m == 0 || d == 0 {
            return Err(Error::Shape(format!("bag must be non-empty, got {m}x{d}")));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite feature at row {}, col {}",
                pos / d,
                pos % d
            )));
        }
        Ok(Self {
            features,
            modality,
            case_id: case_id.into(),
        })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn into_features(self) -> Array2<f64> {
        self.features
    }

    /// Number of instances `M`.
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }
}

/// Raw genomic attributes grouped by functional category. Category lengths may
/// differ.
#[derive(Debug, Clone, PartialEq)]
pub struct GenomicProfile {
    categories: Vec<(String, Vec<f64>)>,
}

impl GenomicProfile {
    pub fn new(categories: Vec<(String, Vec<f64>)>) -> Result<Self> {
        if categories.is_empty() {
            return Err(Error::Data("genomic profile has no categories".into()));
        }
        for (i, (name, attrs)) in categories.iter().enumerate() {
            if attrs.is_empty() {
                return Err(Error::Data(format!("category {name:?} has no attributes")));
            }
            if attrs.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("category {name:?} has non-finite attributes")));
            }
            if categories[..i].iter().any(|(other, _)| other == name) {
                return Err(Error::Data(format!("duplicate category {name:?}")));
            }
        }
        Ok(Self { categories })
    }

    pub fn categories(&self) -> &[(String, Vec<f64>)] {
        &self.categories
    }

    /// `M_g`.
    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.categories.iter().map(|(_, a)| a.len()).collect()
    }
}

/// Observed survival for one case. `bin` is filled in by
/// [`discretize_times`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub time_months: f64,
    /// `true` when right-censored (censor flag 1).
    pub censored: bool,
    pub bin: Option<usize>,
}

impl SurvivalRecord {
    pub fn new(time_months: f64, censored: bool) -> Result<Self> {
        if !(time_months >= 0.0) || !time_months.is_finite() {
            return Err(Error::Data(format!("invalid survival time {time_months}")));
        }
        Ok(Self {
            time_months,
            censored,
            bin: None,
        })
    }

    pub fn event(time_months: f64) -> Self {
        Self {
            time_months,
            censored: false,
            bin: None,
        }
    }

    pub fn censored_at(time_months: f64) -> Self {
        Self {
            time_months,
            censored: true,
            bin: None,
        }
    }

    pub fn with_bin(mut self, bin: usize) -> Self {
        self.bin = Some(bin);
        self
    }

    pub fn censor_flag(&self) -> u8 {
        u8::from(self.censored)
    }
}
