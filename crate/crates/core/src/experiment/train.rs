//! Cross-validated training: one case per forward pass, gradients averaged
//! over `grad_accum_steps` cases per Adam step.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::bagdata::{discretize_times, LoadedCase, SurvivalRecord};
use crate::error::{Error, Result};
use crate::neural::{save_checkpoint, AdamState, CheckpointMeta, ModelConfig, ModelParams};
use crate::pipeline::{case_gradient, run_case, CaseRef};
use crate::rng::{derive_seed, seeded};
use crate::survival::{c_index, logrank, median_split};

const PARTITION_STREAM: u64 = 0xF01D;
const EVAL_STREAM: u64 = 1 << 40;
const ORDER_STREAM: u64 = 2 << 40;
const BATCH_STREAM: u64 = 3 << 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub seed: u64,
    /// Validation C-index of the final model.
    pub c_index: f64,
    pub best_c_index: f64,
    /// Epoch (1-based; 0 = untrained) at which `best_c_index` was reached.
    pub best_epoch: usize,
    pub val_case_ids: Vec<String>,
    /// Final-model risks, aligned with `val_case_ids`.
    pub risks: Vec<f64>,
    /// Mean training loss per epoch.
    pub train_loss: Vec<f64>,
    /// Validation C-index after each epoch.
    pub val_c_index: Vec<f64>,
    pub bin_edges: Vec<f64>,
    pub optimizer_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogrankSummary {
    pub statistic: f64,
    pub p_value: f64,
    pub group_sizes: (usize, usize),
    pub degenerate_split: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub n_cases: usize,
    pub mode: String,
    pub micro_batch: usize,
    pub n_params: usize,
    pub mean_c_index: f64,
    /// Population standard deviation over folds.
    pub std_c_index: f64,
    /// `mean ± std` with three decimals.
    pub summary: String,
    /// Median split of the pooled validation risks.
    pub pooled_logrank: LogrankSummary,
    pub folds: Vec<FoldResult>,
}

impl CvReport {
    /// `(case_id, risk, fold)` for every validation prediction, by fold.
    pub fn pooled_risks(&self) -> Vec<(String, f64, usize)> {
        self.folds
            .iter()
            .flat_map(|f| {
                f.val_case_ids
                    .iter()
                    .zip(&f.risks)
                    .map(move |(id, &r)| (id.clone(), r, f.fold))
            })
            .collect()
    }
}

/// Validation index sets of a shuffled `k`-fold partition; sizes differ by at
/// most one.
pub fn fold_partition(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || n < 2 * k {
        return Err(Error::Data(format!("{n} cases cannot be split into {k} folds of >= 2")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(derive_seed(seed, PARTITION_STREAM)));
    Ok((0..k)
        .map(|f| {
            let mut v = order[f * n / k..(f + 1) * n / k].to_vec();
            v.sort_unstable();
            v
        })
        .collect())
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn model_config_for(cases: &[LoadedCase], config: &ExperimentConfig) -> Result<ModelConfig> {
    let first = cases.first().ok_or_else(|| Error::Data("no cases".into()))?;
    let dims = first.genomic.dims();
    for c in cases {
        if c.pathology.dim() != first.pathology.dim() || c.genomic.dims() != dims {
            return Err(Error::Shape(format!(
                "case {} has dimensions inconsistent with case {}",
                c.case_id, first.case_id
            )));
        }
    }
    Ok(ModelConfig {
        d_raw: first.pathology.dim(),
        d: config.model.d,
        n_heads: config.model.n_heads,
        category_dims: dims,
        n_bins: config.bins,
    })
}

fn case_ref<'a>(c: &'a LoadedCase, record: &'a SurvivalRecord) -> CaseRef<'a> {
    CaseRef {
        record,
        ..CaseRef::from(c)
    }
}

fn evaluate(
    params: &ModelParams,
    cases: &[LoadedCase],
    idx: &[usize],
    config: &ExperimentConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    idx.par_iter()
        .map(|&i| {
            let c = &cases[i];
            let (out, _) = run_case(
                params,
                CaseRef::from(c),
                config.micro_batch,
                &config.ot,
                derive_seed(seed, EVAL_STREAM + i as u64),
                false,
            )?;
            Ok(out.risk)
        })
        .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Trains on `cases \ val_idx` and evaluates on `val_idx`. With `fold_dir`
/// the best checkpoint and `result.json` are written there.
pub fn train_fold(
    cases: &[LoadedCase],
    val_idx: &[usize],
    fold: usize,
    config: &ExperimentConfig,
    fold_dir: Option<&Path>,
) -> Result<FoldResult> {
    let seed = derive_seed(config.seed, fold as u64 + 1);
    let train_idx: Vec<usize> = (0..cases.len()).filter(|i| val_idx.binary_search(i).is_err()).collect();
    let train_records: Vec<SurvivalRecord> = train_idx.iter().map(|&i| cases[i].record).collect();
    let (disc, binned) = discretize_times(&train_records, config.bins)?;

    let mut params = ModelParams::init(&model_config_for(cases, config)?, seed)?;
    let mut adam = AdamState::new(&params);
    if let Some(dir) = fold_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let val_records: Vec<SurvivalRecord> = val_idx.iter().map(|&i| cases[i].record).collect();
    let score = |params: &ModelParams| -> Result<(Vec<f64>, f64)> {
        let risks = evaluate(params, cases, val_idx, config, seed)?;
        let c = c_index(&risks, &val_records)?;
        Ok((risks, c))
    };
    let save_best = |params: &ModelParams, epoch: usize, step: u64, c: f64| -> Result<()> {
        match fold_dir {
            Some(dir) => save_checkpoint(
                &dir.join("best"),
                params,
                &CheckpointMeta {
                    seed,
                    step,
                    epoch,
                    c_index: Some(c),
                },
            ),
            None => Ok(()),
        }
    };

    let (mut risks, mut c_val) = score(&params)?;
    let (mut best_c, mut best_epoch) = (c_val, 0);
    save_best(&params, 0, 0, c_val)?;
    let mut train_loss = Vec::with_capacity(config.epochs);
    let mut val_c_index = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..train_idx.len()).collect();
        order.shuffle(&mut seeded(derive_seed(seed, ORDER_STREAM + epoch as u64)));
        let mut loss_sum = 0.0;
        for window in order.chunks(config.grad_accum_steps) {
            let results: Vec<Result<(f64, ModelParams)>> = window
                .par_iter()
                .map(|&pos| {
                    let i = train_idx[pos];
                    let batch_seed = derive_seed(seed, BATCH_STREAM + (epoch * cases.len() + i) as u64);
                    let (out, g) = case_gradient(
                        &params,
                        case_ref(&cases[i], &binned[pos]),
                        config.micro_batch,
                        &config.ot,
                        batch_seed,
                    )?;
                    Ok((out.loss.expect("training records are binned"), g))
                })
                .collect();
            let mut total = params.zeros_like();
            for (r, &pos) in results.into_iter().zip(window) {
                let (loss, g) = match r {
                    Ok(v) => v,
                    Err(e) => {
                        dump_diagnostic(fold_dir, fold, epoch, &cases[train_idx[pos]].case_id, &e);
                        return Err(e);
                    }
                };
                loss_sum += loss;
                total.add_scaled(&g, 1.0 / window.len() as f64)?;
            }
            adam.step(&mut params, &total, &config.optimizer)?;
            if !params.all_finite() {
                let e = Error::Numeric(format!("non-finite parameters after step {}", adam.step));
                dump_diagnostic(fold_dir, fold, epoch, "", &e);
                return Err(e);
            }
        }
        train_loss.push(loss_sum / train_idx.len() as f64);
        (risks, c_val) = score(&params)?;
        val_c_index.push(c_val);
        log::info!(
            "fold {fold} epoch {epoch}: train loss {:.5}, val c-index {c_val:.4}",
            train_loss[epoch - 1]
        );
        if c_val > best_c {
            best_c = c_val;
            best_epoch = epoch;
            save_best(&params, epoch, adam.step, c_val)?;
        }
    }

    let result = FoldResult {
        fold,
        seed,
        c_index: c_val,
        best_c_index: best_c,
        best_epoch,
        val_case_ids: val_idx.iter().map(|&i| cases[i].case_id.clone()).collect(),
        risks,
        train_loss,
        val_c_index,
        bin_edges: disc.edges,
        optimizer_steps: adam.step,
    };
    if let Some(dir) = fold_dir {
        write_json(&dir.join("result.json"), &result)?;
    }
    Ok(result)
}

fn dump_diagnostic(fold_dir: Option<&Path>, fold: usize, epoch: usize, case_id: &str, err: &Error) {
    log::error!("fold {fold} aborted at epoch {epoch} (case {case_id:?}): {err}");
    if let Some(dir) = fold_dir {
        let diag = serde_json::json!({
            "fold": fold,
            "epoch": epoch,
            "case_id": case_id,
            "kind": err.kind(),
            "message": err.to_string(),
        });
        let _ = write_json(&dir.join("diagnostic.json"), &diag);
    }
}

/// `k`-fold cross-validation. With `out_dir`, writes `config.toml`,
/// `report.json`, `risks.csv` and one `fold_<k>/` directory per fold.
pub fn cross_validate(cases: &[LoadedCase], config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<CvReport> {
    config.validate()?;
    let partition = fold_partition(cases.len(), config.folds, config.seed)?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        config.save(&dir.join("config.toml"))?;
    }
    let run = |(fold, val): (usize, &Vec<usize>)| {
        let fold_dir = out_dir.map(|d| d.join(format!("fold_{fold}")));
        train_fold(cases, val, fold, config, fold_dir.as_deref())
    };
    let folds: Vec<FoldResult> = if config.parallel_folds {
        partition.par_iter().enumerate().map(run).collect::<Result<_>>()?
    } else {
        partition.iter().enumerate().map(run).collect::<Result<_>>()?
    };

    let cs: Vec<f64> = folds.iter().map(|f| f.c_index).collect();
    let (mean, std) = mean_std(&cs);
    let mut report = CvReport {
        n_cases: cases.len(),
        mode: config.ot.mode.to_string(),
        micro_batch: config.micro_batch,
        n_params: ModelParams::init(&model_config_for(cases, config)?, 0)?.n_params(),
        mean_c_index: mean,
        std_c_index: std,
        summary: format!("{mean:.3} ± {std:.3}"),
        pooled_logrank: LogrankSummary {
            statistic: 0.0,
            p_value: 1.0,
            group_sizes: (0, 0),
            degenerate_split: false,
        },
        folds,
    };
    let pooled = report.pooled_risks();
    let by_id: std::collections::HashMap<&str, &LoadedCase> = cases.iter().map(|c| (c.case_id.as_str(), c)).collect();
    let risks: Vec<f64> = pooled.iter().map(|p| p.1).collect();
    let records: Vec<SurvivalRecord> = pooled.iter().map(|p| by_id[p.0.as_str()].record).collect();
    report.pooled_logrank = split_logrank(&risks, &records);

    if let Some(dir) = out_dir {
        write_json(&dir.join("report.json"), &report)?;
        write_risks_csv(&dir.join("risks.csv"), &pooled)?;
    }
    Ok(report)
}

/// Median split of `risks` (high risk = group B) and the log-rank test
/// between the two groups.
pub fn split_logrank(risks: &[f64], records: &[SurvivalRecord]) -> LogrankSummary {
    let split = median_split(risks);
    let low: Vec<SurvivalRecord> = split.low.iter().map(|&i| records[i]).collect();
    let high: Vec<SurvivalRecord> = split.high.iter().map(|&i| records[i]).collect();
    let lr = logrank(&low, &high);
    LogrankSummary {
        statistic: lr.statistic,
        p_value: lr.p_value,
        group_sizes: lr.group_sizes,
        degenerate_split: split.degenerate,
    }
}

pub fn write_risks_csv(path: &Path, rows: &[(String, f64, usize)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let werr = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    w.write_record(["case_id", "risk", "fold"]).map_err(werr)?;
    for (id, r, f) in rows {
        w.write_record([id.clone(), format!("{r:e}"), f.to_string()]).map_err(werr)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
