use crate::bagdata::SurvivalRecord;
use crate::error::{Error, Result};

/// Harrell's concordance index.
///
/// A pair is comparable when the earlier time is an observed event
/// (`t_i < t_j`, `i` uncensored). Higher risk for the earlier death is
/// concordant; tied risks earn half credit. Pairs with equal times are not
/// comparable.
pub fn c_index(risks: &[f64], records: &[SurvivalRecord]) -> Result<f64> {
    if risks.len() != records.len() {
        return Err(Error::Shape(format!(
            "{} risks for {} records",
            risks.len(),
            records.len()
        )));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[a].time_months.total_cmp(&records[b].time_months));

    let mut comparable = 0u64;
    let mut concordant = 0.0f64;
    for (pos, &i) in order.iter().enumerate() {
        if records[i].censored {
            continue;
        }
        let ti = records[i].time_months;
        for &j in &order[pos + 1..] {
            if records[j].time_months <= ti {
                continue;
            }
            comparable += 1;
            if risks[i] > risks[j] {
                concordant += 1.0;
            } else if risks[i] == risks[j] {
                concordant += 0.5;
            }
        }
    }
    if comparable == 0 {
        return Err(Error::UndefinedMetric("no comparable pairs".into()));
    }
    Ok(concordant / comparable as f64)
}
