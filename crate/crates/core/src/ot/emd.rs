//! Exact OT as a transportation problem, solved by the primal simplex method
//! on a spanning-tree basis (rows and columns are the tree's nodes, basic
//! cells its edges). Dual potentials fall out of every basis and certify
//! optimality at termination.

use std::collections::VecDeque;

use ndarray::{Array1, Array2};

use super::{marginal_residual, CostMatrix, Marginals, PlanSettings, SolverKind, TransportPlan};
use crate::error::{Error, Result};

const MASS_TOL: f64 = 1e-9;

struct Basis {
    m: usize,
    n: usize,
    cells: Vec<(usize, usize)>,
    /// Per node (rows `0..m`, columns `m..m+n`), positions into `cells`.
    adjacency: Vec<Vec<usize>>,
}

impl Basis {
    fn new(m: usize, n: usize) -> Self {
        Self {
            m,
            n,
            cells: Vec::with_capacity(m + n - 1),
            adjacency: vec![Vec::new(); m + n],
        }
    }

    fn push(&mut self, cell: (usize, usize)) {
        let id = self.cells.len();
        self.cells.push(cell);
        self.adjacency[cell.0].push(id);
        self.adjacency[self.m + cell.1].push(id);
    }

    fn replace(&mut self, id: usize, cell: (usize, usize)) {
        let (oi, oj) = self.cells[id];
        self.adjacency[oi].retain(|&e| e != id);
        self.adjacency[self.m + oj].retain(|&e| e != id);
        self.cells[id] = cell;
        self.adjacency[cell.0].push(id);
        self.adjacency[self.m + cell.1].push(id);
    }

    fn other_end(&self, id: usize, node: usize) -> usize {
        let (i, j) = self.cells[id];
        if node == i {
            self.m + j
        } else {
            i
        }
    }

    /// Potentials with `f[0] = 0` and `f_i + g_j = C_ij` on basic cells.
    fn duals(&self, cost: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
        let mut pot = vec![f64::NAN; self.m + self.n];
        let mut queue = VecDeque::from([0usize]);
        pot[0] = 0.0;
        while let Some(node) = queue.pop_front() {
            for &id in &self.adjacency[node] {
                let next = self.other_end(id, node);
                if pot[next].is_nan() {
                    let (i, j) = self.cells[id];
                    pot[next] = cost[[i, j]] - pot[node];
                    queue.push_back(next);
                }
            }
        }
        debug_assert!(pot.iter().all(|p| !p.is_nan()), "basis is not spanning");
        (
            Array1::from(pot[..self.m].to_vec()),
            Array1::from(pot[self.m..].to_vec()),
        )
    }

    /// Basic cells on the tree path from column node `j` to row node `i`.
    fn path(&self, i: usize, j: usize) -> Vec<usize> {
        let start = self.m + j;
        let mut parent_edge = vec![usize::MAX; self.m + self.n];
        let mut seen = vec![false; self.m + self.n];
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(node) = queue.pop_front() {
            if node == i {
                break;
            }
            for &id in &self.adjacency[node] {
                let next = self.other_end(id, node);
                if !seen[next] {
                    seen[next] = true;
                    parent_edge[next] = id;
                    queue.push_back(next);
                }
            }
        }
        let mut edges = Vec::new();
        let mut node = i;
        while node != start {
            let id = parent_edge[node];
            edges.push(id);
            node = self.other_end(id, node);
        }
        edges.reverse();
        edges
    }
}

fn north_west_corner(a: &[f64], b: &[f64], flow: &mut Array2<f64>, basis: &mut Basis) {
    let (m, n) = (a.len(), b.len());
    let mut supply = a.to_vec();
    let mut demand = b.to_vec();
    let (mut i, mut j) = (0, 0);
    loop {
        let q = supply[i].min(demand[j]).max(0.0);
        flow[[i, j]] = q;
        basis.push((i, j));
        if i == m - 1 && j == n - 1 {
            break;
        }
        let row_done = supply[i] <= demand[j];
        supply[i] -= q;
        demand[j] -= q;
        if j == n - 1 || (i < m - 1 && row_done) {
            i += 1;
        } else {
            j += 1;
        }
    }
}

/// Exact optimal coupling of the Kantorovich problem with dual certificate.
///
/// Intended for small instances (`rows * cols` up to about `10^4`).
pub fn solve_exact_emd(cost: &CostMatrix, marg: &Marginals) -> Result<TransportPlan> {
    marg.check_against(cost)?;
    let (m, n) = cost.shape();
    let a = marg.source.as_slice().unwrap();
    let b = marg.target.as_slice().unwrap();
    let (mass_a, mass_b) = (marg.source.sum(), marg.target.sum());
    if (mass_a - mass_b).abs() > MASS_TOL {
        return Err(Error::Constraint(format!(
            "marginal masses differ: {mass_a} vs {mass_b}"
        )));
    }
    let c = cost.values();
    let settings = |iters| PlanSettings {
        solver: SolverKind::Emd,
        epsilon: None,
        tau: None,
        max_iters: iters,
        tolerance: MASS_TOL,
        log_domain: false,
    };

    if m == 1 && n == 1 {
        let coupling = Array2::from_elem((1, 1), mass_a);
        return Ok(TransportPlan {
            objective_value: mass_a * c[[0, 0]],
            regularized_objective: None,
            marginal_residual: marginal_residual(&coupling, marg),
            coupling,
            iterations: 0,
            converged: true,
            settings: settings(0),
            potentials: Some((Array1::from_elem(1, c[[0, 0]]), Array1::zeros(1))),
            duality_gap: Some(0.0),
        });
    }

    let mut flow = Array2::zeros((m, n));
    let mut basis = Basis::new(m, n);
    let mut is_basic = Array2::from_elem((m, n), false);
    north_west_corner(a, b, &mut flow, &mut basis);
    for &(i, j) in &basis.cells {
        is_basic[[i, j]] = true;
    }

    let scale = cost.max().max(1.0);
    let price_tol = 1e-12 * scale;
    let max_iters = 50 * m * n + 1000;
    let degenerate_limit = 20 * (m + n);
    let mut degenerate_run = 0usize;
    let mut bland = false;
    let mut iterations = 0usize;

    let (f, g) = loop {
        let (f, g) = basis.duals(c);
        let mut entering: Option<((usize, usize), f64)> = None;
        'price: for i in 0..m {
            for j in 0..n {
                if is_basic[[i, j]] {
                    continue;
                }
                let reduced = c[[i, j]] - f[i] - g[j];
                if reduced < -price_tol {
                    match entering {
                        None => entering = Some(((i, j), reduced)),
                        Some((_, best)) if reduced < best => entering = Some(((i, j), reduced)),
                        _ => {}
                    }
                    if bland {
                        break 'price;
                    }
                }
            }
        }
        let Some(((ei, ej), _)) = entering else {
            break (f, g);
        };
        iterations += 1;
        if iterations > max_iters {
            return Err(Error::Solver(format!(
                "transportation simplex did not terminate in {max_iters} pivots"
            )));
        }

        let path = basis.path(ei, ej);
        let mut leaving: Option<usize> = None;
        let mut theta = f64::INFINITY;
        for &id in path.iter().step_by(2) {
            let (i, j) = basis.cells[id];
            let x = flow[[i, j]];
            let better = match leaving {
                None => true,
                Some(cur) => {
                    x < theta || (bland && x == theta && basis.cells[id] < basis.cells[cur])
                }
            };
            if better {
                theta = x;
                leaving = Some(id);
            }
        }
        let leaving = leaving.expect("cycle has a backward edge");

        flow[[ei, ej]] = theta;
        for (k, &id) in path.iter().enumerate() {
            let (i, j) = basis.cells[id];
            if k % 2 == 0 {
                flow[[i, j]] -= theta;
            } else {
                flow[[i, j]] += theta;
            }
        }
        let (li, lj) = basis.cells[leaving];
        flow[[li, lj]] = 0.0;
        is_basic[[li, lj]] = false;
        is_basic[[ei, ej]] = true;
        basis.replace(leaving, (ei, ej));

        if theta == 0.0 {
            degenerate_run += 1;
            if degenerate_run > degenerate_limit && !bland {
                log::debug!("switching transportation simplex to Bland's rule");
                bland = true;
            }
        } else {
            degenerate_run = 0;
        }
    };

    let primal = cost.inner(&flow);
    let dual = f.dot(&marg.source) + g.dot(&marg.target);
    Ok(TransportPlan {
        objective_value: primal,
        regularized_objective: None,
        marginal_residual: marginal_residual(&flow, marg),
        coupling: flow,
        iterations,
        converged: true,
        settings: settings(max_iters),
        potentials: Some((f, g)),
        duality_gap: Some(primal - dual),
    })
}
