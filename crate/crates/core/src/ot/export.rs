use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{PlanSettings, TransportPlan};
use crate::error::{Error, Result};

/// JSON sidecar written next to a coupling CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSidecar {
    pub rows: usize,
    pub cols: usize,
    pub objective_value: f64,
    pub regularized_objective: Option<f64>,
    pub marginal_residual: f64,
    pub total_mass: f64,
    pub iterations: usize,
    pub converged: bool,
    pub duality_gap: Option<f64>,
    pub settings: PlanSettings,
}

impl From<&TransportPlan> for PlanSidecar {
    fn from(plan: &TransportPlan) -> Self {
        let (rows, cols) = plan.coupling.dim();
        Self {
            rows,
            cols,
            objective_value: plan.objective_value,
            regularized_objective: plan.regularized_objective,
            marginal_residual: plan.marginal_residual,
            total_mass: plan.total_mass(),
            iterations: plan.iterations,
            converged: plan.converged,
            duality_gap: plan.duality_gap,
            settings: plan.settings,
        }
    }
}

/// Writes `<prefix>.csv` (coupling, header `t0,t1,...`) and `<prefix>.json`.
/// Returns both paths.
pub fn write_plan(plan: &TransportPlan, prefix: &Path) -> Result<(PathBuf, PathBuf)> {
    let csv_path = prefix.with_extension("csv");
    let json_path = prefix.with_extension("json");
    if let Some(parent) = csv_path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut out = Vec::new();
    let header: Vec<String> = (0..plan.coupling.ncols()).map(|j| format!("t{j}")).collect();
    writeln!(out, "{}", header.join(",")).unwrap();
    for row in plan.coupling.rows() {
        let fields: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
        writeln!(out, "{}", fields.join(",")).unwrap();
    }
    fs::write(&csv_path, out).map_err(|e| Error::io(&csv_path, e))?;
    let sidecar = serde_json::to_string_pretty(&PlanSidecar::from(plan)).expect("sidecar serializes");
    fs::write(&json_path, sidecar + "\n").map_err(|e| Error::io(&json_path, e))?;
    Ok((csv_path, json_path))
}
