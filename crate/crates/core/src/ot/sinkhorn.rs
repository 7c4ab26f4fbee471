//! Entropic solvers.
//!
//! Both variants write the coupling as `P = diag(a ⊙ u) G diag(b ⊙ v)` with
//! `G = exp(-C / eps)`, so the reference measure of the entropic term is
//! `a ⊗ b`. Each half-step is
//!
//! ```text
//! u_i <- (1 / sum_j G_ij b_j v_j)^lambda
//! ```
//!
//! with `lambda = 1` for the balanced problem and `lambda = tau / (tau + eps)`
//! when the marginal constraints are relaxed to `tau * KL`. The log-domain
//! path iterates on `f = eps ln u`, `g = eps ln v` with log-sum-exp.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{generalized_kl, marginal_residual, CostMatrix, Marginals, PlanSettings, SolverKind, TransportPlan};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinkhornSettings {
    pub epsilon: f64,
    pub max_iters: usize,
    pub tol: f64,
    /// `None` selects log-domain iterations when `epsilon < 0.01 * median(C)`.
    pub log_domain: Option<bool>,
}

impl Default for SinkhornSettings {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            max_iters: 1000,
            tol: 1e-6,
            log_domain: None,
        }
    }
}

impl SinkhornSettings {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self {
            epsilon,
            ..Self::default()
        }
    }
}

#[derive(Clone, Copy)]
enum Mode {
    Balanced,
    Unbalanced { tau: f64 },
}

impl Mode {
    fn exponent(self, eps: f64) -> f64 {
        match self {
            Mode::Balanced => 1.0,
            Mode::Unbalanced { tau } => tau / (tau + eps),
        }
    }
}

struct Iterate {
    f: Array1<f64>,
    g: Array1<f64>,
    coupling: Array2<f64>,
    iterations: usize,
    converged: bool,
}

pub fn sinkhorn(cost: &CostMatrix, marg: &Marginals, settings: &SinkhornSettings) -> Result<TransportPlan> {
    solve(cost, marg, settings, Mode::Balanced)
}

/// KL-relaxed entropic OT:
/// `<P,C> + eps KL(P | a⊗b) + tau (KL(P1 | a) + KL(P^T 1 | b))`.
/// Convergence is declared when the scaling vectors move by less than `tol`.
pub fn unbalanced_sinkhorn(
    cost: &CostMatrix,
    marg: &Marginals,
    tau: f64,
    settings: &SinkhornSettings,
) -> Result<TransportPlan> {
    if !(tau >= 0.0) {
        return Err(Error::Parameter(format!("tau must be >= 0, got {tau}")));
    }
    solve(cost, marg, settings, Mode::Unbalanced { tau })
}

fn solve(cost: &CostMatrix, marg: &Marginals, s: &SinkhornSettings, mode: Mode) -> Result<TransportPlan> {
    if !(s.epsilon > 0.0) || !s.epsilon.is_finite() {
        return Err(Error::Parameter(format!("epsilon must be > 0, got {}", s.epsilon)));
    }
    if s.max_iters == 0 {
        return Err(Error::Parameter("max_iters must be positive".into()));
    }
    marg.check_against(cost)?;
    let log_domain = s
        .log_domain
        .unwrap_or_else(|| s.epsilon < 0.01 * cost.median());

    let it = if log_domain {
        log_iterations(cost, marg, s, mode)
    } else {
        match plain_iterations(cost, marg, s, mode) {
            Some(it) => Ok(it),
            None => {
                log::debug!("scaling iterations overflowed at eps={}; switching to log domain", s.epsilon);
                return solve(
                    cost,
                    marg,
                    &SinkhornSettings {
                        log_domain: Some(true),
                        ..*s
                    },
                    mode,
                );
            }
        }
    }?;
    if !it.converged {
        log::warn!(
            "sinkhorn did not converge in {} iterations (eps={}, mode={})",
            s.max_iters,
            s.epsilon,
            match mode {
                Mode::Balanced => "balanced",
                Mode::Unbalanced { .. } => "unbalanced",
            }
        );
    }
    Ok(finish(cost, marg, s, mode, it, log_domain))
}

fn finish(cost: &CostMatrix, marg: &Marginals, s: &SinkhornSettings, mode: Mode, it: Iterate, log_domain: bool) -> TransportPlan {
    let transport = cost.inner(&it.coupling);
    let reference = Array2::from_shape_fn(it.coupling.dim(), |(i, j)| marg.source[i] * marg.target[j]);
    let mut regularized = transport + s.epsilon * generalized_kl(it.coupling.iter(), reference.iter());
    let (solver, tau) = match mode {
        Mode::Balanced => (SolverKind::Sinkhorn, None),
        Mode::Unbalanced { tau } => {
            let rows = it.coupling.sum_axis(ndarray::Axis(1));
            let cols = it.coupling.sum_axis(ndarray::Axis(0));
            regularized += tau
                * (generalized_kl(rows.iter(), marg.source.iter())
                    + generalized_kl(cols.iter(), marg.target.iter()));
            (SolverKind::Unbalanced, Some(tau))
        }
    };
    TransportPlan {
        objective_value: transport,
        regularized_objective: Some(regularized),
        marginal_residual: marginal_residual(&it.coupling, marg),
        coupling: it.coupling,
        iterations: it.iterations,
        converged: it.converged,
        settings: PlanSettings {
            solver,
            epsilon: Some(s.epsilon),
            tau,
            max_iters: s.max_iters,
            tolerance: s.tol,
            log_domain,
        },
        potentials: Some((it.f, it.g)),
        duality_gap: None,
    }
}

/// Returns `None` when a scaling vector leaves the finite range.
fn plain_iterations(cost: &CostMatrix, marg: &Marginals, s: &SinkhornSettings, mode: Mode) -> Option<Iterate> {
    let eps = s.epsilon;
    let lambda = mode.exponent(eps);
    let (m, n) = cost.shape();
    let a = &marg.source;
    let b = &marg.target;
    let kernel = cost.values().mapv(|c| (-c / eps).exp());
    let mut u = Array1::<f64>::ones(m);
    let mut v = Array1::<f64>::ones(n);
    let mut best: Option<(f64, Array1<f64>, Array1<f64>)> = None;
    let mut converged = false;
    let mut iterations = 0;

    let scale = |sums: Array1<f64>| -> Array1<f64> {
        if lambda == 1.0 {
            sums.mapv(|x| 1.0 / x)
        } else {
            sums.mapv(|x| (1.0 / x).powf(lambda))
        }
    };

    for k in 1..=s.max_iters {
        iterations = k;
        let bv = b * &v;
        let u_new = scale(kernel.dot(&bv));
        let au = a * &u_new;
        let v_new = scale(kernel.t().dot(&au));
        if u_new.iter().chain(v_new.iter()).any(|x| !x.is_finite() || *x == 0.0 && lambda > 0.0) {
            return None;
        }
        match mode {
            Mode::Balanced => {
                let row = &u_new * &kernel.dot(&(b * &v_new));
                let residual = row
                    .iter()
                    .zip(a)
                    .map(|(r, a)| (r * a - a).abs())
                    .fold(0.0, f64::max);
                u = u_new;
                v = v_new;
                if best.as_ref().is_none_or(|(r, _, _)| residual < *r) {
                    best = Some((residual, u.clone(), v.clone()));
                }
                if residual < s.tol {
                    converged = true;
                    break;
                }
            }
            Mode::Unbalanced { .. } => {
                let delta = max_abs_diff(&u_new, &u).max(max_abs_diff(&v_new, &v));
                u = u_new;
                v = v_new;
                if delta < s.tol {
                    converged = true;
                    break;
                }
            }
        }
    }
    if !converged {
        if let Some((_, bu, bv)) = best {
            u = bu;
            v = bv;
        }
    }
    let coupling = Array2::from_shape_fn((m, n), |(i, j)| a[i] * u[i] * kernel[[i, j]] * b[j] * v[j]);
    Some(Iterate {
        f: u.mapv(|x| eps * x.ln()),
        g: v.mapv(|x| eps * x.ln()),
        coupling,
        iterations,
        converged,
    })
}

fn max_abs_diff(x: &Array1<f64>, y: &Array1<f64>) -> f64 {
    x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn log_iterations(cost: &CostMatrix, marg: &Marginals, s: &SinkhornSettings, mode: Mode) -> Result<Iterate> {
    let eps = s.epsilon;
    let lambda = mode.exponent(eps);
    let (m, n) = cost.shape();
    let c = cost.values();
    let log_a = marg.source.mapv(f64::ln);
    let log_b = marg.target.mapv(f64::ln);
    let mut f = Array1::<f64>::zeros(m);
    let mut g = Array1::<f64>::zeros(n);
    let mut best: Option<(f64, Array1<f64>, Array1<f64>)> = None;
    let mut converged = false;
    let mut iterations = 0;

    let coupling_of = |f: &Array1<f64>, g: &Array1<f64>| {
        Array2::from_shape_fn((m, n), |(i, j)| {
            (log_a[i] + log_b[j] + (f[i] + g[j] - c[[i, j]]) / eps).exp()
        })
    };

    for k in 1..=s.max_iters {
        iterations = k;
        let f_new = Array1::from_shape_fn(m, |i| {
            -lambda * eps * log_sum_exp((0..n).map(|j| log_b[j] + (g[j] - c[[i, j]]) / eps))
        });
        let g_new = Array1::from_shape_fn(n, |j| {
            -lambda * eps * log_sum_exp((0..m).map(|i| log_a[i] + (f_new[i] - c[[i, j]]) / eps))
        });
        if f_new.iter().chain(g_new.iter()).any(|x| x.is_nan()) {
            return Err(Error::Solver(format!("log-domain potentials became NaN at eps={eps}")));
        }
        match mode {
            Mode::Balanced => {
                f = f_new;
                g = g_new;
                let residual = marginal_residual(&coupling_of(&f, &g), marg);
                if best.as_ref().is_none_or(|(r, _, _)| residual < *r) {
                    best = Some((residual, f.clone(), g.clone()));
                }
                if residual < s.tol {
                    converged = true;
                    break;
                }
            }
            Mode::Unbalanced { .. } => {
                // Relative change of the scalings, |d ln u|.
                let delta = max_abs_diff(&f_new, &f).max(max_abs_diff(&g_new, &g)) / eps;
                f = f_new;
                g = g_new;
                if delta < s.tol {
                    converged = true;
                    break;
                }
            }
        }
    }
    if !converged {
        if let Some((_, bf, bg)) = best {
            f = bf;
            g = bg;
        }
    }
    let coupling = coupling_of(&f, &g);
    Ok(Iterate {
        f,
        g,
        coupling,
        iterations,
        converged,
    })
}
