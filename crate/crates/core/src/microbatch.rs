//! Micro-batch orchestration: sample disjoint subsets of the pathology bag,
//! solve one transport problem per subset against the genomic bag, and pool
//! pathology instances through the (fixed) coupling.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bagdata::InstanceBag;
use crate::error::{Error, Result};
use crate::ot::{
    build_cost, solve_exact_emd, unbalanced_sinkhorn, Marginals, Metric, SinkhornSettings, TransportPlan,
};
use crate::rng::seeded;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MicroBatchPlan {
    /// Disjoint index sets covering `0..M_p`; indices inside a set are sorted.
    pub batch_indices: Vec<Vec<usize>>,
    pub batch_size: usize,
    pub seed: u64,
}

impl MicroBatchPlan {
    pub fn len(&self) -> usize {
        self.batch_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batch_indices.is_empty()
    }

    /// Loss weight `m_k / M_p` of each batch.
    pub fn weights(&self) -> Vec<f64> {
        let total: usize = self.batch_indices.iter().map(Vec::len).sum();
        self.batch_indices
            .iter()
            .map(|b| b.len() as f64 / total as f64)
            .collect()
    }
}

/// Seeded permutation of `0..m_p` cut into consecutive chunks of `m`; the
/// last chunk keeps the remainder. Each chunk is sorted so that `m = m_p`
/// reproduces the original instance order.
pub fn sample_micro_batches(m_p: usize, m: usize, seed: u64) -> Result<MicroBatchPlan> {
    if m == 0 || m_p == 0 {
        return Err(Error::Parameter(format!("need 1 <= m <= M_p, got m={m}, M_p={m_p}")));
    }
    let m = m.min(m_p);
    let mut perm: Vec<usize> = (0..m_p).collect();
    if m < m_p {
        perm.shuffle(&mut seeded(seed));
    }
    let batch_indices = perm
        .chunks(m)
        .map(|c| {
            let mut c = c.to_vec();
            c.sort_unstable();
            c
        })
        .collect();
    Ok(MicroBatchPlan {
        batch_indices,
        batch_size: m,
        seed,
    })
}

/// Pathology instances pooled per genomic instance through a coupling.
#[derive(Debug, Clone)]
pub struct SelectedBag {
    /// `M_g x d`, row `v` = `sum_u P[u, v] * batch[u]`.
    pub features: Array2<f64>,
    pub plan: TransportPlan,
    /// Column sums of the coupling.
    pub mass_per_row: Array1<f64>,
}

/// `P^T B` for a fixed coupling `P` (`m x M_g`) and batch `B` (`m x d`).
/// With `normalize_mass`, each row is divided by its transported mass.
pub fn coattend(plan: &TransportPlan, batch_features: ArrayView2<f64>, normalize_mass: bool) -> Result<SelectedBag> {
    let coupling = &plan.coupling;
    if coupling.nrows() != batch_features.nrows() {
        return Err(Error::Shape(format!(
            "coupling has {} rows, batch has {}",
            coupling.nrows(),
            batch_features.nrows()
        )));
    }
    let mut features = coupling.t().dot(&batch_features);
    let mass_per_row = coupling.sum_axis(Axis(0));
    if normalize_mass {
        for (mut row, &mass) in features.rows_mut().into_iter().zip(&mass_per_row) {
            if mass > 0.0 {
                row /= mass;
            }
        }
    }
    Ok(SelectedBag {
        features,
        plan: plan.clone(),
        mass_per_row,
    })
}

/// Row-wise softmax of `queries keys^T / scale`, applied to `values`.
/// Returns the pooled output (`M_g x d`) and the attention matrix
/// (`M_g x m`).
pub fn dense_coattention(
    queries: ArrayView2<f64>,
    keys: ArrayView2<f64>,
    values: ArrayView2<f64>,
    scale: f64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if !(scale > 0.0) {
        return Err(Error::Parameter(format!("scale must be > 0, got {scale}")));
    }
    if queries.ncols() != keys.ncols() || keys.nrows() != values.nrows() {
        return Err(Error::Shape(format!(
            "queries {:?}, keys {:?}, values {:?}",
            queries.dim(),
            keys.dim(),
            values.dim()
        )));
    }
    let mut attn = queries.dot(&keys.t()) / scale;
    softmax_rows(&mut attn);
    Ok((attn.dot(&values), attn))
}

pub(crate) fn softmax_rows(x: &mut Array2<f64>) {
    for mut row in x.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    /// Unbalanced entropic OT per micro-batch.
    #[default]
    Umbot,
    /// Exact OT per micro-batch.
    Emd,
    /// Softmax similarity pooling (no transport).
    Dense,
}

impl std::fmt::Display for AttentionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AttentionMode::Umbot => "umbot",
            AttentionMode::Emd => "emd",
            AttentionMode::Dense => "dense",
        })
    }
}

impl std::str::FromStr for AttentionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "umbot" => Ok(AttentionMode::Umbot),
            "emd" => Ok(AttentionMode::Emd),
            "dense" => Ok(AttentionMode::Dense),
            other => Err(Error::Parameter(format!("unknown attention mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OtSettings {
    pub mode: AttentionMode,
    pub cost_metric: Metric,
    /// Divide each cost matrix by its largest entry before solving.
    pub normalize_cost: bool,
    /// Divide pooled rows by their transported mass.
    pub normalize_mass: bool,
    pub epsilon: f64,
    pub tau: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for OtSettings {
    fn default() -> Self {
        Self {
            mode: AttentionMode::Umbot,
            cost_metric: Metric::L2,
            normalize_cost: true,
            normalize_mass: false,
            epsilon: 0.05,
            tau: 0.5,
            max_iters: 1000,
            tol: 1e-6,
        }
    }
}

impl OtSettings {
    pub fn sinkhorn(&self) -> SinkhornSettings {
        SinkhornSettings {
            epsilon: self.epsilon,
            max_iters: self.max_iters,
            tol: self.tol,
            log_domain: None,
        }
    }
}

/// One transport solve between a pathology micro-batch and the genomic bag
/// with uniform marginals.
pub fn solve_batch(batch: ArrayView2<f64>, genomic: ArrayView2<f64>, ot: &OtSettings) -> Result<TransportPlan> {
    let mut cost = build_cost(batch, genomic, ot.cost_metric)?;
    if ot.normalize_cost {
        cost = cost.normalized();
    }
    let marg = Marginals::uniform(batch.nrows(), genomic.nrows());
    match ot.mode {
        AttentionMode::Umbot => unbalanced_sinkhorn(&cost, &marg, ot.tau, &ot.sinkhorn()),
        AttentionMode::Emd => solve_exact_emd(&cost, &marg),
        AttentionMode::Dense => Err(Error::Parameter("dense mode has no transport plan".into())),
    }
}

/// Gathers the rows of `features` listed in `indices`.
pub fn gather_rows(features: ArrayView2<f64>, indices: &[usize]) -> Array2<f64> {
    features.select(Axis(0), indices)
}

/// Transport plans for every micro-batch, solved in parallel and returned in
/// batch order.
pub fn solve_batches(
    pathology: ArrayView2<f64>,
    genomic: ArrayView2<f64>,
    batches: &MicroBatchPlan,
    ot: &OtSettings,
) -> Result<Vec<TransportPlan>> {
    batches
        .batch_indices
        .par_iter()
        .map(|idx| {
            let batch = gather_rows(pathology, idx);
            let plan = solve_batch(batch.view(), genomic, ot)?;
            if !plan.converged {
                log::warn!("micro-batch transport solve did not converge; using last iterate");
            }
            Ok(plan)
        })
        .collect()
}

/// Sample, solve and pool: one [`SelectedBag`] per micro-batch, in batch
/// order.
pub fn run_case_microbatched(
    pathology: &InstanceBag,
    genomic_encoded: &InstanceBag,
    m: usize,
    ot: &OtSettings,
    seed: u64,
) -> Result<Vec<SelectedBag>> {
    if pathology.dim() != genomic_encoded.dim() {
        return Err(Error::Shape(format!(
            "pathology dim {} != genomic dim {}",
            pathology.dim(),
            genomic_encoded.dim()
        )));
    }
    let batches = sample_micro_batches(pathology.len(), m, seed)?;
    let feats = pathology.features().view();
    let plans = solve_batches(feats, genomic_encoded.features().view(), &batches, ot)?;
    plans
        .iter()
        .zip(&batches.batch_indices)
        .map(|(plan, idx)| coattend(plan, gather_rows(feats, idx).view(), ot.normalize_mass))
        .collect()
}
