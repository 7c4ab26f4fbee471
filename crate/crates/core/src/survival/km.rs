use serde::{Deserialize, Serialize};

use crate::bagdata::SurvivalRecord;

/// Product-limit estimate at each distinct event time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmCurve {
    pub event_times: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
    /// Value of the step function from each event time onward.
    pub survival: Vec<f64>,
    /// Greenwood variance of each survival value.
    pub greenwood_variance: Vec<f64>,
}

impl KmCurve {
    /// `S(t)`, right-continuous, 1 before the first event.
    pub fn at(&self, t: f64) -> f64 {
        match self.event_times.iter().rposition(|&e| e <= t) {
            Some(k) => self.survival[k],
            None => 1.0,
        }
    }
}

/// Kaplan-Meier estimator. At tied times deaths are counted before
/// censorings, so a case censored at `t` is still at risk at `t`.
pub fn km_estimate(records: &[SurvivalRecord]) -> KmCurve {
    let mut sorted: Vec<&SurvivalRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.time_months.total_cmp(&b.time_months));

    let mut curve = KmCurve {
        event_times: vec![],
        at_risk: vec![],
        events: vec![],
        survival: vec![],
        greenwood_variance: vec![],
    };
    let mut s = 1.0;
    let mut greenwood_sum = 0.0;
    let mut k = 0;
    while k < sorted.len() {
        let t = sorted[k].time_months;
        let n_at_risk = sorted.len() - k;
        let mut deaths = 0;
        let mut end = k;
        while end < sorted.len() && sorted[end].time_months == t {
            if !sorted[end].censored {
                deaths += 1;
            }
            end += 1;
        }
        if deaths > 0 {
            let (d, n) = (deaths as f64, n_at_risk as f64);
            s *= 1.0 - d / n;
            if n > d {
                greenwood_sum += d / (n * (n - d));
            }
            curve.event_times.push(t);
            curve.at_risk.push(n_at_risk);
            curve.events.push(deaths);
            curve.survival.push(s);
            curve.greenwood_variance.push(s * s * greenwood_sum);
        }
        k = end;
    }
    curve
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_events() {
        let recs: Vec<_> = [1.0, 2.0, 3.0].map(SurvivalRecord::event).to_vec();
        let km = km_estimate(&recs);
        assert_eq!(km.event_times, vec![1.0, 2.0, 3.0]);
        assert_eq!(km.at_risk, vec![3, 2, 1]);
        assert!((km.survival[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((km.survival[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(km.survival[2], 0.0);
    }

    #[test]
    fn all_censored_stays_at_one() {
        let recs: Vec<_> = [1.0, 2.0].map(SurvivalRecord::censored_at).to_vec();
        let km = km_estimate(&recs);
        assert!(km.survival.is_empty());
        assert_eq!(km.at(10.0), 1.0);
    }

    #[test]
    fn censoring_tied_with_death_stays_at_risk() {
        // Worked by hand: at t=1, n=3 (censored case still at risk), d=1 ->
        // 2/3; at t=2, n=1, d=1 -> 0.
        let recs = vec![
            SurvivalRecord::event(1.0),
            SurvivalRecord::censored_at(1.0),
            SurvivalRecord::event(2.0),
        ];
        let km = km_estimate(&recs);
        assert_eq!(km.at_risk, vec![3, 1]);
        assert_eq!(km.events, vec![1, 1]);
        assert!((km.survival[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(km.survival[1], 0.0);
        assert_eq!(km.at(0.5), 1.0);
        assert!((km.at(1.5) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn uncensored_equals_empirical_survival() {
        let times = [5.0, 1.0, 3.0, 3.0, 8.0, 2.0, 5.0, 9.0];
        let recs: Vec<_> = times.iter().map(|&t| SurvivalRecord::event(t)).collect();
        let km = km_estimate(&recs);
        for t in [0.0, 1.0, 2.5, 3.0, 4.0, 5.0, 8.5, 9.0] {
            let emp = times.iter().filter(|&&x| x > t).count() as f64 / times.len() as f64;
            assert!((km.at(t) - emp).abs() < 1e-12, "t={t}");
        }
    }
}
