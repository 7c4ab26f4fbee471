use serde::{Deserialize, Serialize};

use super::special::chi2_sf_1;
use crate::bagdata::SurvivalRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogrankResult {
    pub statistic: f64,
    pub p_value: f64,
    pub group_sizes: (usize, usize),
    pub observed_a: f64,
    pub expected_a: f64,
}

/// Two-group log-rank test. With no events (zero variance) the statistic is 0
/// and p is 1.
pub fn logrank(group_a: &[SurvivalRecord], group_b: &[SurvivalRecord]) -> LogrankResult {
    let mut times: Vec<f64> = group_a
        .iter()
        .chain(group_b)
        .filter(|r| !r.censored)
        .map(|r| r.time_months)
        .collect();
    times.sort_by(f64::total_cmp);
    times.dedup();

    let count = |g: &[SurvivalRecord], t: f64| {
        let at_risk = g.iter().filter(|r| r.time_months >= t).count() as f64;
        let deaths = g
            .iter()
            .filter(|r| !r.censored && r.time_months == t)
            .count() as f64;
        (at_risk, deaths)
    };

    let (mut observed, mut expected, mut variance) = (0.0, 0.0, 0.0);
    for &t in &times {
        let (na, da) = count(group_a, t);
        let (nb, db) = count(group_b, t);
        let (n, d) = (na + nb, da + db);
        observed += da;
        expected += d * na / n;
        if n > 1.0 {
            variance += d * (na / n) * (nb / n) * (n - d) / (n - 1.0);
        }
    }
    let statistic = if variance > 0.0 {
        (observed - expected).powi(2) / variance
    } else {
        0.0
    };
    LogrankResult {
        statistic,
        p_value: chi2_sf_1(statistic),
        group_sizes: (group_a.len(), group_b.len()),
        observed_a: observed,
        expected_a: expected,
    }
}

/// Indices of the low- and high-risk groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RiskSplit {
    pub low: Vec<usize>,
    pub high: Vec<usize>,
    /// The median rule left one group empty, so the split fell back to
    /// ranking by `(risk, index)` and cutting at `ceil(n / 2)`.
    pub degenerate: bool,
}

/// Split at the median risk; cases tied with the median go to the low group.
pub fn median_split(risks: &[f64]) -> RiskSplit {
    let n = risks.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| risks[a].total_cmp(&risks[b]).then(a.cmp(&b)));
    if n == 0 {
        return RiskSplit {
            low: vec![],
            high: vec![],
            degenerate: true,
        };
    }
    let median = if n % 2 == 1 {
        risks[order[n / 2]]
    } else {
        0.5 * (risks[order[n / 2 - 1]] + risks[order[n / 2]])
    };
    let (low, high): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| risks[i] <= median);
    if low.is_empty() || high.is_empty() {
        log::warn!("median split degenerate (all risks tied); splitting by rank");
        let cut = n.div_ceil(2);
        let mut low = order[..cut].to_vec();
        let mut high = order[cut..].to_vec();
        low.sort_unstable();
        high.sort_unstable();
        return RiskSplit {
            low,
            high,
            degenerate: true,
        };
    }
    RiskSplit {
        low,
        high,
        degenerate: false,
    }
}
