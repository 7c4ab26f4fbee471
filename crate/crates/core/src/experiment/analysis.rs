//! Kaplan-Meier group analysis of saved risks, and solver timing.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::train::{split_logrank, LogrankSummary};
use crate::bagdata::{fmt_num, CaseManifest, SurvivalRecord};
use crate::error::{Error, Result};
use crate::microbatch::{gather_rows, sample_micro_batches, solve_batch, OtSettings};
use crate::rng::{derive_seed, seeded};
use crate::survival::{km_estimate, median_split, KmCurve};

/// Reads a `case_id,risk[,fold]` CSV.
pub fn read_risks_csv(path: &Path) -> Result<Vec<(String, f64)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        },
        _ => Error::Format(format!("{}: {e}", path.display())),
    })?;
    let headers = r
        .headers()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("{}: missing column {name:?}", path.display())))
    };
    let (id_col, risk_col) = (col("case_id")?, col("risk")?);
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let id = rec.get(id_col).unwrap_or_default().to_string();
        let risk: f64 = rec
            .get(risk_col)
            .unwrap_or_default()
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("{}: bad risk for case {id:?}", path.display())))?;
        if !seen.insert(id.clone()) {
            return Err(Error::Data(format!("duplicate case id {id:?} in {}", path.display())));
        }
        out.push((id, risk));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmAnalysis {
    pub low: KmCurve,
    pub high: KmCurve,
    pub logrank: LogrankSummary,
}

/// Median-splits the risks of the manifest's cases and compares the two
/// groups. Every manifest case needs a risk and every risk a manifest case.
pub fn km_analysis(risks: &[(String, f64)], manifest: &CaseManifest) -> Result<KmAnalysis> {
    let by_id: HashMap<&str, f64> = risks.iter().map(|(id, r)| (id.as_str(), *r)).collect();
    let manifest_ids: HashSet<&str> = manifest.cases.iter().map(|c| c.case_id.as_str()).collect();
    let missing: Vec<&str> = manifest
        .cases
        .iter()
        .map(|c| c.case_id.as_str())
        .filter(|id| !by_id.contains_key(id))
        .collect();
    let unknown: Vec<&str> = risks
        .iter()
        .map(|(id, _)| id.as_str())
        .filter(|id| !manifest_ids.contains(id))
        .collect();
    if !missing.is_empty() || !unknown.is_empty() {
        return Err(Error::Data(format!(
            "risk/manifest mismatch: no risk for {missing:?}; not in manifest: {unknown:?}"
        )));
    }
    let records: Vec<SurvivalRecord> = manifest.records()?;
    let rs: Vec<f64> = manifest.cases.iter().map(|c| by_id[c.case_id.as_str()]).collect();
    let split = median_split(&rs);
    if split.degenerate {
        log::warn!("all risks are tied at the median; falling back to a rank split");
    }
    let low: Vec<SurvivalRecord> = split.low.iter().map(|&i| records[i]).collect();
    let high: Vec<SurvivalRecord> = split.high.iter().map(|&i| records[i]).collect();
    Ok(KmAnalysis {
        low: km_estimate(&low),
        high: km_estimate(&high),
        logrank: split_logrank(&rs, &records),
    })
}

/// Writes `<prefix>_km.csv` (group,time,at_risk,events,survival) and
/// `<prefix>_logrank.json`.
pub fn write_km(analysis: &KmAnalysis, prefix: &Path) -> Result<()> {
    let csv_path = with_suffix(prefix, "_km.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::Format(format!("{}: {e}", csv_path.display())))?;
    let werr = |e: csv::Error| Error::Format(format!("{}: {e}", csv_path.display()));
    w.write_record(["group", "time", "at_risk", "events", "survival"]).map_err(werr)?;
    for (name, curve) in [("low", &analysis.low), ("high", &analysis.high)] {
        for k in 0..curve.event_times.len() {
            w.write_record([
                name.to_string(),
                fmt_num(curve.event_times[k]),
                curve.at_risk[k].to_string(),
                curve.events[k].to_string(),
                fmt_num(curve.survival[k]),
            ])
            .map_err(werr)?;
        }
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    let json_path = with_suffix(prefix, "_logrank.json");
    let text = serde_json::to_string_pretty(&analysis.logrank).expect("serializes");
    fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))
}

fn with_suffix(prefix: &Path, suffix: &str) -> std::path::PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    s.into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    #[serde(rename = "M")]
    pub m_total: usize,
    pub seconds: f64,
    pub instances_per_second: f64,
}

/// Times the micro-batched solves for a random bag of each size in
/// `m_values` against a random `m_g`-instance genomic bag. Solves run
/// sequentially; the median of `repeats` runs is reported.
pub fn bench_solver(
    m_values: &[usize],
    m: usize,
    d: usize,
    m_g: usize,
    ot: &OtSettings,
    repeats: usize,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    if d == 0 || m_g == 0 || repeats == 0 {
        return Err(Error::Parameter("bench needs d, m_g and repeats >= 1".into()));
    }
    let mut rng = seeded(derive_seed(seed, 0xBE7C));
    let genomic = Array2::from_shape_simple_fn((m_g, d), || StandardNormal.sample(&mut rng));
    let mut rows = Vec::with_capacity(m_values.len());
    for &total in m_values {
        let bag = Array2::from_shape_simple_fn((total, d), || StandardNormal.sample(&mut rng));
        let mut times = Vec::with_capacity(repeats);
        for r in 0..repeats {
            let batches = sample_micro_batches(total, m, derive_seed(seed, r as u64))?;
            let start = Instant::now();
            for idx in &batches.batch_indices {
                let batch = gather_rows(bag.view(), idx);
                std::hint::black_box(solve_batch(batch.view(), genomic.view(), ot)?);
            }
            times.push(start.elapsed().as_secs_f64());
        }
        times.sort_by(f64::total_cmp);
        let seconds = times[times.len() / 2];
        rows.push(BenchRow {
            m_total: total,
            seconds,
            instances_per_second: total as f64 / seconds,
        });
    }
    Ok(rows)
}

pub fn write_bench_csv(path: &Path, rows: &[BenchRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let werr = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    w.write_record(["M", "seconds", "instances_per_second"]).map_err(werr)?;
    for r in rows {
        w.write_record([r.m_total.to_string(), format!("{:e}", r.seconds), format!("{:e}", r.instances_per_second)])
            .map_err(werr)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
