use super::SurvivalRecord;
use crate::error::{Error, Result};

/// Bin edges over survival time. Bin `k` covers `(edges[k-1], edges[k]]`;
/// bin 0 is open to the left and the last bin is open to `+inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct Discretization {
    pub edges: Vec<f64>,
    pub n_bins: usize,
    /// Quantile edges collapsed onto each other (heavy ties).
    pub degenerate: bool,
}

impl Discretization {
    pub fn bin_of(&self, time: f64) -> usize {
        assign_bin(&self.edges, time)
    }
}

pub fn assign_bin(edges: &[f64], time: f64) -> usize {
    edges.iter().filter(|&&e| e < time).count()
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Edges at the `k / n_bins` quantiles of the uncensored times; every record
/// gets the bin containing its time.
pub fn discretize_times(
    records: &[SurvivalRecord],
    n_bins: usize,
) -> Result<(Discretization, Vec<SurvivalRecord>)> {
    if n_bins < 2 {
        return Err(Error::Parameter(format!("n_bins must be >= 2, got {n_bins}")));
    }
    let mut events: Vec<f64> = records
        .iter()
        .filter(|r| !r.censored)
        .map(|r| r.time_months)
        .collect();
    if events.len() < n_bins {
        return Err(Error::Data(format!(
            "{} uncensored cases, need at least {n_bins}",
            events.len()
        )));
    }
    events.sort_by(f64::total_cmp);
    let raw: Vec<f64> = (1..n_bins)
        .map(|k| quantile_sorted(&events, k as f64 / n_bins as f64))
        .collect();
    let mut edges = raw.clone();
    edges.dedup();
    let degenerate = edges.len() < raw.len();
    if degenerate {
        log::warn!(
            "survival bin edges collapsed from {} to {} because of tied event times",
            raw.len(),
            edges.len()
        );
    }
    let updated = records
        .iter()
        .map(|r| r.with_bin(assign_bin(&edges, r.time_months)))
        .collect();
    Ok((
        Discretization {
            edges,
            n_bins,
            degenerate,
        },
        updated,
    ))
}
