//! Cost matrices and transport solvers.
//!
//! Three solvers share one [`TransportPlan`] result type:
//!
//! - [`solve_exact_emd`]: transportation simplex with dual certificates, meant
//!   for small problems and as an oracle for the entropic solvers.
//! - [`sinkhorn`]: balanced entropic OT with reference measure `a ⊗ b`.
//! - [`unbalanced_sinkhorn`]: entropic OT whose marginal constraints are
//!   replaced by `tau`-weighted KL penalties.
//!
//! Both Sinkhorn variants run in the plain (scaling) domain unless `epsilon`
//! is small relative to the costs, in which case they iterate on log-domain
//! potentials instead.

mod emd;
mod export;
mod sinkhorn;

use ndarray::{Array1, Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use emd::solve_exact_emd;
pub use export::{write_plan, PlanSidecar};
pub use sinkhorn::{sinkhorn, unbalanced_sinkhorn, SinkhornSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    L2,
    SquaredL2,
    CosineDistance,
}

impl Metric {
    pub fn eval(self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Metric::L2 => Metric::SquaredL2.eval(x, y).sqrt(),
            Metric::SquaredL2 => x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum(),
            Metric::CosineDistance => {
                let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
                let nx = x.iter().map(|a| a * a).sum::<f64>().sqrt();
                let ny = y.iter().map(|a| a * a).sum::<f64>().sqrt();
                if nx == 0.0 || ny == 0.0 {
                    1.0
                } else {
                    (1.0 - dot / (nx * ny)).max(0.0)
                }
            }
        }
    }
}

/// Nonnegative `source x target` cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    values: Array2<f64>,
    pub metric: Option<Metric>,
}

impl CostMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Shape("empty cost matrix".into()));
        }
        if values.iter().any(|&c| !(c >= 0.0) || !c.is_finite()) {
            return Err(Error::Domain("cost entries must be finite and >= 0".into()));
        }
        Ok(Self {
            values,
            metric: None,
        })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn median(&self) -> f64 {
        let mut v: Vec<f64> = self.values.iter().copied().collect();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }

    /// Divides by the largest entry; an all-zero matrix is returned unchanged.
    pub fn normalized(&self) -> Self {
        let max = self.max();
        if max > 0.0 {
            Self {
                values: self.values.mapv(|c| c / max),
                metric: self.metric,
            }
        } else {
            self.clone()
        }
    }

    /// `<P, C>_F`.
    pub fn inner(&self, coupling: &Array2<f64>) -> f64 {
        Zip::from(&self.values)
            .and(coupling)
            .fold(0.0, |acc, &c, &p| acc + c * p)
    }
}

/// `values[u][v] = metric(source row u, target row v)`.
pub fn build_cost(source: ArrayView2<f64>, target: ArrayView2<f64>, metric: Metric) -> Result<CostMatrix> {
    if source.ncols() != target.ncols() {
        return Err(Error::Shape(format!(
            "source dim {} != target dim {}",
            source.ncols(),
            target.ncols()
        )));
    }
    if source.nrows() == 0 || target.nrows() == 0 {
        return Err(Error::Shape("empty bag".into()));
    }
    let mut values = Array2::zeros((source.nrows(), target.nrows()));
    for (u, s) in source.rows().into_iter().enumerate() {
        let s = s.to_vec();
        for (v, t) in target.rows().into_iter().enumerate() {
            let t = t.to_vec();
            values[[u, v]] = metric.eval(&s, &t);
        }
    }
    Ok(CostMatrix {
        values,
        metric: Some(metric),
    })
}

/// Source and target mass vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    pub source: Array1<f64>,
    pub target: Array1<f64>,
}

impl Marginals {
    /// Validates nonnegativity and that each side sums to one within `1e-12`.
    pub fn new(source: Array1<f64>, target: Array1<f64>) -> Result<Self> {
        for (name, v) in [("source", &source), ("target", &target)] {
            if v.is_empty() {
                return Err(Error::Shape(format!("{name} marginal is empty")));
            }
            if v.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::Domain(format!("{name} marginal has negative or non-finite mass")));
            }
            let total = v.sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::Constraint(format!("{name} marginal sums to {total}, expected 1")));
            }
        }
        Ok(Self { source, target })
    }

    /// No normalization check; used for the exact solver's feasibility test
    /// and for unnormalized experiments.
    pub fn unchecked(source: Array1<f64>, target: Array1<f64>) -> Self {
        Self { source, target }
    }

    pub fn uniform(n_source: usize, n_target: usize) -> Self {
        Self {
            source: Array1::from_elem(n_source, 1.0 / n_source as f64),
            target: Array1::from_elem(n_target, 1.0 / n_target as f64),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.source.len(), self.target.len())
    }

    pub(crate) fn check_against(&self, cost: &CostMatrix) -> Result<()> {
        if self.shape() != cost.shape() {
            return Err(Error::Shape(format!(
                "marginals {:?} do not match cost {:?}",
                self.shape(),
                cost.shape()
            )));
        }
        for v in [&self.source, &self.target] {
            if v.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::Domain("marginal has negative or non-finite mass".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Emd,
    Sinkhorn,
    Unbalanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanSettings {
    pub solver: SolverKind,
    pub epsilon: Option<f64>,
    pub tau: Option<f64>,
    pub max_iters: usize,
    pub tolerance: f64,
    pub log_domain: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub coupling: Array2<f64>,
    /// Transport cost `<P, C>` without regularization terms.
    pub objective_value: f64,
    /// Full objective including entropic (and marginal-penalty) terms; `None`
    /// for the exact solver.
    pub regularized_objective: Option<f64>,
    /// Max absolute deviation of row/column sums from the marginals.
    pub marginal_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub settings: PlanSettings,
    /// Exact solver: dual potentials `(f, g)`. Sinkhorn variants: log-domain
    /// potentials, i.e. `u = exp(f / eps)`, `v = exp(g / eps)`.
    pub potentials: Option<(Array1<f64>, Array1<f64>)>,
    /// Exact solver only: primal minus dual objective.
    pub duality_gap: Option<f64>,
}

impl TransportPlan {
    pub fn total_mass(&self) -> f64 {
        self.coupling.sum()
    }

    pub fn row_sums(&self) -> Array1<f64> {
        self.coupling.sum_axis(ndarray::Axis(1))
    }

    pub fn col_sums(&self) -> Array1<f64> {
        self.coupling.sum_axis(ndarray::Axis(0))
    }
}

pub(crate) fn marginal_residual(coupling: &Array2<f64>, marg: &Marginals) -> f64 {
    let rows = coupling.sum_axis(ndarray::Axis(1));
    let cols = coupling.sum_axis(ndarray::Axis(0));
    let r = rows
        .iter()
        .zip(&marg.source)
        .map(|(x, a)| (x - a).abs())
        .fold(0.0, f64::max);
    let c = cols
        .iter()
        .zip(&marg.target)
        .map(|(x, b)| (x - b).abs())
        .fold(0.0, f64::max);
    r.max(c)
}

/// Generalized KL, `sum p log(p/q) - p + q`, with `0 log 0 = 0`.
pub(crate) fn generalized_kl<'a>(
    p: impl IntoIterator<Item = &'a f64>,
    q: impl IntoIterator<Item = &'a f64>,
) -> f64 {
    p.into_iter()
        .zip(q)
        .map(|(&p, &q)| {
            if p > 0.0 {
                p * (p / q).ln() - p + q
            } else {
                q
            }
        })
        .sum()
}
