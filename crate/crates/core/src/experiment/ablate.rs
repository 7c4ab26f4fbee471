//! Sweeps over micro-batch sizes and co-attention modes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::train::{cross_validate, mean_std};
use crate::bagdata::LoadedCase;
use crate::error::{Error, Result};
use crate::microbatch::AttentionMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: AttentionMode,
    pub m: usize,
    pub fold: usize,
    /// `NaN` when the cell failed.
    pub c_index: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub mode: AttentionMode,
    pub m: usize,
    pub mean_c_index: f64,
    pub std_c_index: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub cells: Vec<AblationCell>,
}

/// Cross-validates every `(mode, m)` pair. A failing cell is logged and
/// recorded; the sweep continues. With `out_dir`, each cell writes to
/// `<mode>_m<m>/` and the long-format `ablation.csv` plus
/// `ablation_summary.csv` are written at the top.
pub fn ablate(
    cases: &[LoadedCase],
    config: &ExperimentConfig,
    m_values: &[usize],
    modes: &[AttentionMode],
    out_dir: Option<&Path>,
) -> Result<AblationReport> {
    if m_values.is_empty() || modes.is_empty() {
        return Err(Error::Parameter("ablation needs at least one m and one mode".into()));
    }
    let mut report = AblationReport {
        rows: Vec::new(),
        cells: Vec::new(),
    };
    for &mode in modes {
        for &m in m_values {
            let mut cfg = config.clone();
            cfg.ot.mode = mode;
            cfg.micro_batch = m;
            let cell_dir = out_dir.map(|d| d.join(format!("{mode}_m{m}")));
            match cross_validate(cases, &cfg, cell_dir.as_deref()) {
                Ok(cv) => {
                    for f in &cv.folds {
                        report.rows.push(AblationRow {
                            mode,
                            m,
                            fold: f.fold,
                            c_index: f.c_index,
                        });
                    }
                    report.cells.push(AblationCell {
                        mode,
                        m,
                        mean_c_index: cv.mean_c_index,
                        std_c_index: cv.std_c_index,
                        error: None,
                    });
                }
                Err(e) => {
                    log::warn!("ablation cell mode={mode} m={m} failed: {e}");
                    for fold in 0..cfg.folds {
                        report.rows.push(AblationRow {
                            mode,
                            m,
                            fold,
                            c_index: f64::NAN,
                        });
                    }
                    report.cells.push(AblationCell {
                        mode,
                        m,
                        mean_c_index: f64::NAN,
                        std_c_index: f64::NAN,
                        error: Some(e.to_string()),
                    });
                }
            }
        }
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_rows(&dir.join("ablation.csv"), &report.rows)?;
        write_cells(&dir.join("ablation_summary.csv"), &report.cells)?;
    }
    Ok(report)
}

/// Mean and std of the per-fold C-indices for one mode over several runs.
pub fn mode_summary(rows: &[AblationRow], mode: AttentionMode) -> (f64, f64) {
    let cs: Vec<f64> = rows.iter().filter(|r| r.mode == mode).map(|r| r.c_index).collect();
    mean_std(&cs)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn write_rows(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let werr = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    w.write_record(["mode", "m", "fold", "c_index"]).map_err(werr)?;
    for r in rows {
        w.write_record([r.mode.to_string(), r.m.to_string(), r.fold.to_string(), format!("{:e}", r.c_index)])
            .map_err(werr)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_cells(path: &Path, cells: &[AblationCell]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let werr = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    w.write_record(["mode", "m", "mean_c_index", "std_c_index", "summary", "error"])
        .map_err(werr)?;
    for c in cells {
        w.write_record([
            c.mode.to_string(),
            c.m.to_string(),
            format!("{:e}", c.mean_c_index),
            format!("{:e}", c.std_c_index),
            format!("{:.3} ± {:.3}", c.mean_c_index, c.std_c_index),
            c.error.clone().unwrap_or_default(),
        ])
        .map_err(werr)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
