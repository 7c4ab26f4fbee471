//! Discrete-time survival: curves from hazards, the censored NLL, risk
//! scores, and the evaluation statistics.

mod cindex;
mod km;
mod logrank;
mod special;

use crate::bagdata::SurvivalRecord;
use crate::error::{Error, Result};

pub use cindex::c_index;
pub use km::{km_estimate, KmCurve};
pub use logrank::{logrank, median_split, LogrankResult, RiskSplit};
pub use special::{chi2_sf_1, regularized_gamma_q};

/// Probability floor used inside logs and for clamping hazards.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalCurve {
    pub hazards: Vec<f64>,
    /// `survival[t] = prod_{z <= t} (1 - hazards[z])`.
    pub survival: Vec<f64>,
}

impl SurvivalCurve {
    pub fn len(&self) -> usize {
        self.hazards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hazards.is_empty()
    }

    /// `S(t - 1)` with `S(-1) = 1`.
    pub fn survival_before(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.survival[t - 1]
        }
    }

    /// Curve with the given survival values, hazards recovered from ratios.
    /// Used for averaging survival functions across micro-batches.
    pub fn from_survival(survival: Vec<f64>) -> Self {
        let mut prev = 1.0;
        let hazards = survival
            .iter()
            .map(|&s| {
                let h = if prev > 0.0 { 1.0 - s / prev } else { 1.0 };
                prev = s;
                h
            })
            .collect();
        Self { hazards, survival }
    }
}

fn clamp_hazard(h: f64) -> f64 {
    h.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Hazards in `[0, 1]` are clamped to `[eps, 1 - eps]`; anything else is a
/// domain error.
pub fn survival_from_hazard(hazards: &[f64]) -> Result<SurvivalCurve> {
    if hazards.is_empty() {
        return Err(Error::Domain("empty hazard vector".into()));
    }
    if let Some(h) = hazards.iter().find(|h| !(0.0..=1.0).contains(*h)) {
        return Err(Error::Domain(format!("hazard {h} outside [0, 1]")));
    }
    let hazards: Vec<f64> = hazards.iter().map(|&h| clamp_hazard(h)).collect();
    let mut acc = 1.0;
    let survival = hazards
        .iter()
        .map(|h| {
            acc *= 1.0 - h;
            acc
        })
        .collect();
    Ok(SurvivalCurve { hazards, survival })
}

fn check_bin(record: &SurvivalRecord, len: usize) -> Result<usize> {
    match record.bin {
        Some(t) if t < len => Ok(t),
        Some(t) => Err(Error::Domain(format!("bin {t} outside [0, {len})"))),
        None => Err(Error::Domain("record has not been discretized".into())),
    }
}

/// Weighted negative log-likelihood of one record:
/// censored `-w log S(t)`, uncensored `-w (log S(t-1) + log h(t))`.
pub fn nll_loss(curve: &SurvivalCurve, record: &SurvivalRecord, weight: f64) -> Result<f64> {
    let t = check_bin(record, curve.len())?;
    if !(weight > 0.0) {
        return Err(Error::Domain(format!("loss weight must be > 0, got {weight}")));
    }
    let floor = |p: f64| p.max(PROB_EPS).ln();
    Ok(if record.censored {
        -weight * floor(curve.survival[t])
    } else {
        -weight * (floor(curve.survival_before(t)) + floor(curve.hazards[t]))
    })
}

/// Loss and its gradient with respect to the raw (pre-clamp) hazards.
pub fn nll_loss_grad(hazards: &[f64], record: &SurvivalRecord, weight: f64) -> Result<(f64, Vec<f64>)> {
    let curve = survival_from_hazard(hazards)?;
    let loss = nll_loss(&curve, record, weight)?;
    let t = check_bin(record, curve.len())?;
    let mut grad = vec![0.0; hazards.len()];
    // d(-log S(k))/dh_z = 1 / (1 - h_z) for z <= k, unless S(k) hit the floor.
    let survival_terms = if record.censored {
        Some(t)
    } else {
        t.checked_sub(1)
    };
    if let Some(k) = survival_terms {
        if curve.survival[k] > PROB_EPS {
            for z in 0..=k {
                grad[z] += weight / (1.0 - curve.hazards[z]);
            }
        }
    }
    if !record.censored && curve.hazards[t] > PROB_EPS {
        grad[t] -= weight / curve.hazards[t];
    }
    for (g, &h) in grad.iter_mut().zip(hazards) {
        if h <= PROB_EPS || h >= 1.0 - PROB_EPS {
            *g = 0.0;
        }
    }
    Ok((loss, grad))
}

/// Negative area under the discrete survival curve; higher means riskier.
pub fn risk_score(curve: &SurvivalCurve) -> f64 {
    -curve.survival.iter().sum::<f64>()
}
