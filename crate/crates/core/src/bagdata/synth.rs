//! Planted-signal multimodal cases.
//!
//! Each case draws a latent risk `r ~ N(0, 1)`. Per-dataset prototype
//! directions are scaled by `exp(0.35 r)` to give the case's prototypes; the
//! pathology bag mixes copies of those prototypes (plus noise) with background
//! instances, and every genomic category carries `r` along a fixed loading
//! vector. Event time is `30 exp(-0.6 r)` months with log-normal noise.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    save_bag, save_profile, BagFormat, CaseEntry, CaseManifest, CategorySpec, GenomicProfile,
    InstanceBag, Modality, SurvivalRecord,
};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded, Rng};

pub const DEFAULT_CATEGORIES: [&str; 6] = [
    "Tumor Suppression",
    "Oncogenesis",
    "Protein Kinases",
    "Cellular Differentiation",
    "Transcription",
    "Cytokines and Growth",
];

const TIME_SCALE: f64 = 30.0;
const TIME_SLOPE: f64 = 0.6;
const TIME_NOISE: f64 = 0.3;
const MAGNITUDE_SLOPE: f64 = 0.35;
const PROTOTYPE_NORM: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_cases: usize,
    /// Pathology instances per case, `M_p`.
    pub m_p: usize,
    /// Genomic categories, `M_g`.
    pub m_g: usize,
    /// Pathology feature dimension.
    pub d: usize,
    pub signal_fraction: f64,
    pub noise_scale: f64,
    pub censor_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_cases: 50,
            m_p: 300,
            m_g: 6,
            d: 32,
            signal_fraction: 0.3,
            noise_scale: 0.5,
            censor_rate: 0.3,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if self.n_cases < 10 {
            return bad(format!("n_cases must be >= 10, got {}", self.n_cases));
        }
        if self.m_g < 2 || self.m_p < self.m_g {
            return bad(format!("need m_p >= m_g >= 2, got m_p={} m_g={}", self.m_p, self.m_g));
        }
        if self.d == 0 {
            return bad("d must be positive".into());
        }
        if !(self.signal_fraction > 0.0 && self.signal_fraction < 1.0) {
            return bad(format!("signal_fraction must lie in (0,1), got {}", self.signal_fraction));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return bad(format!("noise_scale must be >= 0, got {}", self.noise_scale));
        }
        if !(self.censor_rate >= 0.0 && self.censor_rate < 1.0) {
            return bad(format!("censor_rate must lie in [0,1), got {}", self.censor_rate));
        }
        Ok(())
    }

    pub fn category_names(&self) -> Vec<String> {
        (0..self.m_g)
            .map(|j| match DEFAULT_CATEGORIES.get(j) {
                Some(name) if self.m_g <= DEFAULT_CATEGORIES.len() => (*name).to_string(),
                _ => format!("category_{j}"),
            })
            .collect()
    }

    /// Attribute counts `d_j`, deliberately unequal.
    pub fn category_dims(&self) -> Vec<usize> {
        (0..self.m_g).map(|j| 4 + (j * 5) % 9).collect()
    }

    pub fn signal_count(&self) -> usize {
        ((self.signal_fraction * self.m_p as f64).ceil() as usize).min(self.m_p)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCase {
    pub case_id: String,
    pub latent_risk: f64,
    /// Uncensored event time; equals `record.time_months` unless censored.
    pub event_time: f64,
    pub pathology: InstanceBag,
    pub genomic: GenomicProfile,
    pub record: SurvivalRecord,
    /// The case's prototypes (row j belongs to category j).
    pub prototypes: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub manifest_path: PathBuf,
    pub manifest: CaseManifest,
    pub cases: Vec<SyntheticCase>,
}

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Values are rounded through `f32` so that in-memory cases equal what the
/// binary files hold.
fn f32r(v: f64) -> f64 {
    v as f32 as f64
}

pub fn generate_cases(spec: &SyntheticSpec) -> Result<Vec<SyntheticCase>> {
    spec.validate()?;
    let mut rng = seeded(spec.seed);
    let directions: Vec<Vec<f64>> = (0..spec.m_g)
        .map(|_| {
            let v: Vec<f64> = (0..spec.d).map(|_| normal(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| x * PROTOTYPE_NORM / norm).collect()
        })
        .collect();
    let dims = spec.category_dims();
    let loadings: Vec<Vec<f64>> = dims
        .iter()
        .map(|&dj| (0..dj).map(|_| normal(&mut rng)).collect())
        .collect();
    let names = spec.category_names();
    let n_signal = spec.signal_count();
    let width = spec.n_cases.to_string().len().max(3);

    (0..spec.n_cases)
        .map(|n| {
            let mut rng = seeded(derive_seed(spec.seed, n as u64 + 1));
            let r = normal(&mut rng);
            let magnitude = (MAGNITUDE_SLOPE * r).exp();
            let prototypes = Array2::from_shape_fn((spec.m_g, spec.d), |(j, k)| {
                f32r(magnitude * directions[j][k])
            });

            let mut features = Array2::zeros((spec.m_p, spec.d));
            for i in 0..spec.m_p {
                if i < n_signal {
                    let j = i % spec.m_g;
                    for k in 0..spec.d {
                        let noise = if spec.noise_scale > 0.0 {
                            spec.noise_scale * normal(&mut rng)
                        } else {
                            0.0
                        };
                        features[[i, k]] = f32r(prototypes[[j, k]] + noise);
                    }
                } else {
                    for k in 0..spec.d {
                        features[[i, k]] = f32r(normal(&mut rng));
                    }
                }
            }
            let case_id = format!("case_{n:0width$}");
            let pathology = InstanceBag::new(features, Modality::Pathology, case_id.clone())?;

            let categories = names
                .iter()
                .zip(&loadings)
                .map(|(name, w)| {
                    let attrs = w
                        .iter()
                        .map(|&wk| f32r(r * wk + spec.noise_scale * normal(&mut rng)))
                        .collect();
                    (name.clone(), attrs)
                })
                .collect();
            let genomic = GenomicProfile::new(categories)?;

            let event_time = f32r(
                TIME_SCALE * (-TIME_SLOPE * r + TIME_NOISE * spec.noise_scale * normal(&mut rng)).exp(),
            );
            let censored = rng.random::<f64>() < spec.censor_rate;
            let time = if censored {
                f32r(event_time * rng.random::<f64>())
            } else {
                event_time
            };
            Ok(SyntheticCase {
                case_id,
                latent_risk: r,
                event_time,
                pathology,
                genomic,
                record: SurvivalRecord::new(time, censored)?,
                prototypes,
            })
        })
        .collect()
}

/// Writes `manifest.json`, `pathology/<id>.fbag`, `genomic/<id>.csv` and
/// `latent.csv` under `out_dir`.
pub fn generate_synthetic_dataset(spec: &SyntheticSpec, out_dir: &Path) -> Result<SyntheticDataset> {
    let cases = generate_cases(spec)?;
    for sub in ["pathology", "genomic"] {
        let dir = out_dir.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let mut entries = Vec::with_capacity(cases.len());
    let mut latent = Vec::new();
    writeln!(latent, "case_id,latent_risk,event_time").unwrap();
    for case in &cases {
        let ppath = PathBuf::from("pathology").join(format!("{}.fbag", case.case_id));
        let gpath = PathBuf::from("genomic").join(format!("{}.csv", case.case_id));
        save_bag(&case.pathology, &out_dir.join(&ppath), BagFormat::Binary)?;
        save_profile(&case.genomic, &out_dir.join(&gpath))?;
        entries.push(CaseEntry {
            case_id: case.case_id.clone(),
            pathology_feature_path: ppath,
            genomic_profile_path: gpath,
            time_months: case.record.time_months,
            censor: case.record.censor_flag(),
        });
        writeln!(latent, "{},{:.17e},{:.17e}", case.case_id, case.latent_risk, case.event_time).unwrap();
    }
    let latent_path = out_dir.join("latent.csv");
    fs::write(&latent_path, latent).map_err(|e| Error::io(&latent_path, e))?;

    let manifest = CaseManifest {
        cases: entries,
        feature_dim: spec.d,
        category_spec: spec
            .category_names()
            .into_iter()
            .zip(spec.category_dims())
            .map(|(name, dim)| CategorySpec { name, dim })
            .collect(),
    };
    let manifest_path = out_dir.join("manifest.json");
    manifest.save(&manifest_path)?;
    Ok(SyntheticDataset {
        manifest_path,
        manifest,
        cases,
    })
}
