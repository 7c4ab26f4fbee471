//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::VecDeque;
use std::time::Instant;

use ndarray::{Array1, Array2};
use otsurv::bagdata::{generate_synthetic_dataset, CaseManifest, LoadedCase, SurvivalRecord, SyntheticSpec};
use otsurv::experiment::{bench_solver, cross_validate, mean_std, write_cells, AblationCell, CvReport, ExperimentConfig};
use otsurv::microbatch::{AttentionMode, OtSettings};
use otsurv::neural::layers::{sigmoid, SelfAttention, SeluMlp};
use otsurv::neural::{Linear, ModelConfig, ModelParams};
use otsurv::ot::{solve_exact_emd, sinkhorn, unbalanced_sinkhorn, CostMatrix, Marginals, SinkhornSettings};
use otsurv::pipeline::{backward, compute_couplings, forward, forward_whole_bag, run_case, CaseRef};
use otsurv::microbatch::sample_micro_batches;
use otsurv::survival::{c_index, chi2_sf_1, km_estimate, nll_loss_grad};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---------------------------------------------------------------------------
// 1. Exact OT against an integer min-cost-flow oracle.

/// Successive shortest paths (Bellman-Ford) on the bipartite network
/// source -> i (cap p_i) -> j (cost c_ij) -> sink (cap q_j).
fn min_cost_flow(cost: &Array2<f64>, supply: &[i64], demand: &[i64]) -> f64 {
    let (m, n) = cost.dim();
    let nodes = m + n + 2;
    let (s, t) = (m + n, m + n + 1);
    // Edge list with residual pairs.
    let mut to = Vec::new();
    let mut cap: Vec<i64> = Vec::new();
    let mut w = Vec::new();
    let mut adj = vec![Vec::new(); nodes];
    let mut add = |u: usize, v: usize, c: i64, cost: f64, to: &mut Vec<usize>, cap: &mut Vec<i64>, w: &mut Vec<f64>| {
        adj[u].push(to.len());
        to.push(v);
        cap.push(c);
        w.push(cost);
        adj[v].push(to.len());
        to.push(u);
        cap.push(0);
        w.push(-cost);
    };
    let big: i64 = supply.iter().sum();
    for i in 0..m {
        add(s, i, supply[i], 0.0, &mut to, &mut cap, &mut w);
        for j in 0..n {
            add(i, m + j, big, cost[[i, j]], &mut to, &mut cap, &mut w);
        }
    }
    for j in 0..n {
        add(m + j, t, demand[j], 0.0, &mut to, &mut cap, &mut w);
    }
    let mut total = 0.0;
    let mut flow = 0;
    while flow < big {
        let mut dist = vec![f64::INFINITY; nodes];
        let mut prev_edge = vec![usize::MAX; nodes];
        let mut in_queue = vec![false; nodes];
        dist[s] = 0.0;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            in_queue[u] = false;
            for &e in &adj[u] {
                if cap[e] > 0 && dist[u] + w[e] < dist[to[e]] - 1e-15 {
                    dist[to[e]] = dist[u] + w[e];
                    prev_edge[to[e]] = e;
                    if !in_queue[to[e]] {
                        in_queue[to[e]] = true;
                        queue.push_back(to[e]);
                    }
                }
            }
        }
        assert!(dist[t].is_finite(), "oracle network disconnected");
        let mut push = big - flow;
        let mut v = t;
        while v != s {
            let e = prev_edge[v];
            push = push.min(cap[e]);
            v = to[e ^ 1];
        }
        let mut v = t;
        while v != s {
            let e = prev_edge[v];
            cap[e] -= push;
            cap[e ^ 1] += push;
            total += push as f64 * w[e];
            v = to[e ^ 1];
        }
        flow += push;
    }
    total
}

fn random_composition(rng: &mut ChaCha8Rng, parts: usize, total: i64) -> Vec<i64> {
    // Each part at least 1, remaining mass spread at random.
    let mut v = vec![1i64; parts];
    for _ in 0..(total - parts as i64) {
        v[rng.random_range(0..parts)] += 1;
    }
    v
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut max_err, mut max_gap) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let m = rng.random_range(1..=5);
        let n = rng.random_range(1..=4);
        let denom: i64 = [12, 30, 60, 97][rng.random_range(0..4)];
        let p = random_composition(&mut rng, m, denom);
        let q = random_composition(&mut rng, n, denom);
        let c = Array2::from_shape_fn((m, n), |_| rng.random_range(0.0..1.0));
        let marg = Marginals::new(
            Array1::from_iter(p.iter().map(|&x| x as f64 / denom as f64)),
            Array1::from_iter(q.iter().map(|&x| x as f64 / denom as f64)),
        )
        .expect("rational marginals sum to one");
        let plan = solve_exact_emd(&CostMatrix::new(c.clone()).unwrap(), &marg).expect("emd solves");
        let oracle = min_cost_flow(&c, &p, &q) / denom as f64;
        max_err = max_err.max((plan.objective_value - oracle).abs());
        max_gap = max_gap.max(plan.duality_gap.unwrap_or(f64::INFINITY).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        max_err <= 1e-9 && max_gap <= 1e-8 && secs < 10.0,
        format!("100 instances: max |obj - oracle| = {max_err:.2e}, max duality gap = {max_gap:.2e}, {secs:.2} s"),
    )
}

// ---------------------------------------------------------------------------
// 2. Entropic limit.

fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
    let v = Array1::from_shape_fn(n, |_| rng.random_range(0.1..1.0));
    let s = v.sum();
    v / s
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let settings = SinkhornSettings {
        epsilon: 1e-3,
        max_iters: 200_000,
        tol: 1e-10,
        log_domain: None,
    };
    let mut worst = 0.0f64;
    let mut unconverged = 0;
    for _ in 0..50 {
        let c = CostMatrix::new(Array2::from_shape_fn((4, 3), |_| rng.random_range(0.0..1.0)))
            .unwrap()
            .normalized();
        let marg = Marginals::unchecked(random_simplex(&mut rng, 4), random_simplex(&mut rng, 3));
        let exact = solve_exact_emd(&c, &marg).unwrap();
        let plan = sinkhorn(&c, &marg, &settings).unwrap();
        if !plan.converged {
            unconverged += 1;
        }
        worst = worst.max((plan.objective_value - exact.objective_value).abs());
    }
    outcome(
        worst <= 1e-3,
        format!("50 instances at eps=1e-3: max |<C,P> - EMD| = {worst:.2e} ({unconverged} hit the iteration cap)"),
    )
}

// ---------------------------------------------------------------------------
// 3. Unbalanced limits.

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut err0, mut err_big) = (0.0f64, 0.0f64);
    for _ in 0..25 {
        let (m, n) = (rng.random_range(2..7), rng.random_range(2..6));
        let c = CostMatrix::new(Array2::from_shape_fn((m, n), |_| rng.random_range(0.0..1.0))).unwrap();
        let marg = Marginals::unchecked(random_simplex(&mut rng, m), random_simplex(&mut rng, n));
        let eps = 0.05;
        let s = SinkhornSettings {
            epsilon: eps,
            max_iters: 100_000,
            tol: 1e-13,
            log_domain: Some(false),
        };
        let p0 = unbalanced_sinkhorn(&c, &marg, 0.0, &s).unwrap();
        for i in 0..m {
            for j in 0..n {
                let closed = marg.source[i] * marg.target[j] * (-c.values()[[i, j]] / eps).exp();
                err0 = err0.max((p0.coupling[[i, j]] - closed).abs());
            }
        }
        let big = unbalanced_sinkhorn(&c, &marg, 1e6, &s).unwrap();
        let bal = sinkhorn(&c, &marg, &s).unwrap();
        err_big = err_big.max(
            big.coupling
                .iter()
                .zip(bal.coupling.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        );
    }
    outcome(
        err0 <= 1e-10 && err_big <= 1e-4,
        format!("25 instances: tau=0 closed-form err {err0:.2e}; tau=1e6 vs balanced max entry diff {err_big:.2e}"),
    )
}

// ---------------------------------------------------------------------------
// 4. Micro-batch equivalence.

fn synth_cases(n_cases: usize, seed: u64) -> Vec<LoadedCase> {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        n_cases,
        seed,
        ..Default::default()
    };
    let ds = generate_synthetic_dataset(&spec, dir.path()).unwrap();
    CaseManifest::load(&ds.manifest_path).unwrap().load_cases(dir.path()).unwrap()
}

fn criterion_4() -> Outcome {
    let spec = SyntheticSpec {
        n_cases: 12,
        m_p: 64,
        seed: 404,
        ..Default::default()
    };
    let cases = otsurv::bagdata::generate_cases(&spec).unwrap();
    let cfg = ModelConfig {
        d_raw: spec.d,
        d: 16,
        n_heads: 4,
        category_dims: spec.category_dims(),
        n_bins: 4,
    };
    let params = ModelParams::init(&cfg, 9).unwrap();
    let mut checked = 0;
    let mut mismatches = 0;
    for mode in [AttentionMode::Umbot, AttentionMode::Emd, AttentionMode::Dense] {
        let ot = OtSettings {
            mode,
            ..Default::default()
        };
        for (k, c) in cases.iter().enumerate() {
            let rec = c.record.with_bin(k % 4);
            let case = CaseRef {
                record: &rec,
                ..CaseRef::from(c)
            };
            let (micro, _) = run_case(&params, case, spec.m_p, &ot, 1234 + k as u64, false).unwrap();
            let whole = forward_whole_bag(&params, case, &ot).unwrap();
            checked += 1;
            if micro.loss.unwrap().to_bits() != whole.loss.unwrap().to_bits() || micro.risk.to_bits() != whole.risk.to_bits()
            {
                mismatches += 1;
            }
        }
    }
    outcome(
        mismatches == 0,
        format!("{checked} case/mode pairs with m = M_p: {mismatches} differ in loss or risk bits"),
    )
}

// ---------------------------------------------------------------------------
// 5. Runtime scaling.

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let rows = bench_solver(&[2048, 4096, 8192], 256, 32, 6, &OtSettings::default(), 5, 505).unwrap();
    let r1 = rows[1].seconds / rows[0].seconds;
    let r2 = rows[2].seconds / rows[1].seconds;
    let secs = start.elapsed().as_secs_f64();
    outcome(
        r1 <= 2.5 && r2 <= 2.5 && secs < 120.0,
        format!(
            "solve time {:.4}/{:.4}/{:.4} s for M=2048/4096/8192; ratios {r1:.2}, {r2:.2}; {secs:.1} s total",
            rows[0].seconds, rows[1].seconds, rows[2].seconds
        ),
    )
}

// ---------------------------------------------------------------------------
// 6. Gradient verification.

#[derive(Default)]
struct GradCheck {
    coords: usize,
    worst: f64,
    failures: Vec<String>,
}

impl GradCheck {
    /// Relative error; the denominator is floored at 1e-5 so coordinates
    /// with vanishing gradient are judged by absolute error.
    fn record(&mut self, label: &str, analytic: f64, numeric: f64) {
        self.coords += 1;
        let scale = analytic.abs().max(numeric.abs()).max(1e-5);
        let rel = (analytic - numeric).abs() / scale;
        self.worst = self.worst.max(rel);
        if rel > 1e-5 {
            self.failures.push(format!("{label}: analytic {analytic:e} vs fd {numeric:e}"));
        }
    }
}

const FD_STEP: f64 = 1e-5;

/// Up to `k` distinct random indices in `0..n` (all of them when `n <= k`).
fn coords(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    if n <= k {
        return (0..n).collect();
    }
    let mut idx = rand::seq::index::sample(rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}

fn fd_matrix(
    check: &mut GradCheck,
    rng: &mut ChaCha8Rng,
    label: &str,
    target: &mut Array2<f64>,
    analytic: &Array2<f64>,
    loss: &mut dyn FnMut(&Array2<f64>) -> f64,
) {
    let n = target.len();
    for i in coords(rng, n, 20) {
        let orig = target.as_slice().unwrap()[i];
        target.as_slice_mut().unwrap()[i] = orig + FD_STEP;
        let lp = loss(target);
        target.as_slice_mut().unwrap()[i] = orig - FD_STEP;
        let lm = loss(target);
        target.as_slice_mut().unwrap()[i] = orig;
        check.record(&format!("{label}[{i}]"), analytic.as_slice().unwrap()[i], (lp - lm) / (2.0 * FD_STEP));
    }
}

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
}

fn layer_checks(check: &mut GradCheck) {
    let mut rng = ChaCha8Rng::seed_from_u64(606);

    // Linear, loss = <R, X W + b>.
    let lin = Linear {
        w: rand_mat(&mut rng, 7, 5),
        b: Array1::from_shape_fn(5, |_| rng.random_range(-1.0..1.0)),
    };
    let mut x = rand_mat(&mut rng, 6, 7);
    let r = rand_mat(&mut rng, 6, 5);
    let mut g = Linear::zeros(7, 5);
    let dx = lin.backward(x.view(), r.view(), &mut g);
    let mut w = lin.w.clone();
    fd_matrix(check, &mut rng, "linear.w", &mut w, &g.w, &mut |w| {
        (&(x.dot(w) + &lin.b) * &r).sum()
    });
    let mut b2 = lin.b.clone().insert_axis(ndarray::Axis(0));
    let gb = g.b.clone().insert_axis(ndarray::Axis(0));
    fd_matrix(check, &mut rng, "linear.b", &mut b2, &gb, &mut |b| {
        (&(x.dot(&lin.w) + b.row(0)) * &r).sum()
    });
    let lw = lin.clone();
    fd_matrix(check, &mut rng, "linear.x", &mut x, &dx, &mut |x| (&lw.forward(x.view()).unwrap() * &r).sum());

    // SELU MLP, loss = <r, f(x)>.
    let mlp = SeluMlp::init(5, 8, &mut rng);
    let xv = Array1::from_shape_fn(5, |_| rng.random_range(-2.0..2.0));
    let rv = Array1::from_shape_fn(8, |_| rng.random_range(-1.0..1.0));
    let (_, cache) = mlp.forward(xv.view()).unwrap();
    let mut gm = SeluMlp {
        l1: Linear::zeros(5, 8),
        l2: Linear::zeros(8, 8),
    };
    mlp.backward(&cache, rv.view(), &mut gm);
    for (label, which) in [("selu_mlp.l1.w", 0), ("selu_mlp.l2.w", 1)] {
        let mut t = if which == 0 { mlp.l1.w.clone() } else { mlp.l2.w.clone() };
        let a = if which == 0 { gm.l1.w.clone() } else { gm.l2.w.clone() };
        fd_matrix(check, &mut rng, label, &mut t, &a, &mut |t| {
            let mut m2 = mlp.clone();
            if which == 0 {
                m2.l1.w = t.clone();
            } else {
                m2.l2.w = t.clone();
            }
            m2.forward(xv.view()).unwrap().0.dot(&rv)
        });
    }

    // Self-attention, loss = <r, pooled>.
    let att = SelfAttention::init(8, 4, &mut rng).unwrap();
    let tokens = rand_mat(&mut rng, 5, 8);
    let (_, cache) = att.forward(tokens.view()).unwrap();
    let mut ga = SelfAttention::zeros(8, 4);
    let dtok = att.backward(&cache, rv.view(), &mut ga);
    for name in ["wq", "wk", "wv", "wo"] {
        let pick = |a: &SelfAttention| match name {
            "wq" => a.wq.clone(),
            "wk" => a.wk.clone(),
            "wv" => a.wv.clone(),
            _ => a.wo.clone(),
        };
        let mut t = pick(&att);
        let a = pick(&ga);
        fd_matrix(check, &mut rng, &format!("attention.{name}"), &mut t, &a, &mut |t| {
            let mut a2 = att.clone();
            match name {
                "wq" => a2.wq = t.clone(),
                "wk" => a2.wk = t.clone(),
                "wv" => a2.wv = t.clone(),
                _ => a2.wo = t.clone(),
            }
            a2.forward(tokens.view()).unwrap().0.dot(&rv)
        });
    }
    let mut tk = tokens.clone();
    fd_matrix(check, &mut rng, "attention.tokens", &mut tk, &dtok, &mut |t| {
        att.forward(t.view()).unwrap().0.dot(&rv)
    });

    // Hazard head + sigmoid + NLL, for an uncensored and a censored record.
    for (label, rec) in [
        ("hazard_nll.event", SurvivalRecord::event(3.0).with_bin(2)),
        ("hazard_nll.censored", SurvivalRecord::censored_at(3.0).with_bin(3)),
    ] {
        let head = Linear::init(16, 4, &mut rng);
        let z = Array1::from_shape_fn(16, |_| rng.random_range(-1.0..1.0));
        let loss_of = |h: &Linear| {
            let hz = h.forward_vec(z.view()).unwrap().mapv(sigmoid);
            nll_loss_grad(hz.as_slice().unwrap(), &rec, 0.7).unwrap().0
        };
        let hz = head.forward_vec(z.view()).unwrap().mapv(sigmoid);
        let (_, dh) = nll_loss_grad(hz.as_slice().unwrap(), &rec, 0.7).unwrap();
        let dz = Array1::from_shape_fn(4, |t| dh[t] * hz[t] * (1.0 - hz[t]));
        let mut gh = Linear::zeros(16, 4);
        head.backward_vec(z.view(), dz.view(), &mut gh);
        let mut w = head.w.clone();
        fd_matrix(check, &mut rng, label, &mut w, &gh.w, &mut |w| {
            loss_of(&Linear { w: w.clone(), b: head.b.clone() })
        });
    }
}

fn pipeline_checks(check: &mut GradCheck) {
    let spec = SyntheticSpec {
        n_cases: 10,
        m_p: 40,
        m_g: 4,
        d: 12,
        seed: 66,
        ..Default::default()
    };
    let cases = otsurv::bagdata::generate_cases(&spec).unwrap();
    let cfg = ModelConfig {
        d_raw: 12,
        d: 8,
        n_heads: 4,
        category_dims: spec.category_dims(),
        n_bins: 4,
    };
    let params = ModelParams::init(&cfg, 6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(607);
    for (k, mode) in [AttentionMode::Umbot, AttentionMode::Emd, AttentionMode::Dense].into_iter().enumerate() {
        for (ci, c) in cases.iter().take(2).enumerate() {
            let rec = SurvivalRecord::new(c.record.time_months, ci == 1).unwrap().with_bin(1 + k % 3);
            let case = CaseRef {
                record: &rec,
                ..CaseRef::from(c)
            };
            let ot = OtSettings {
                mode,
                ..Default::default()
            };
            let batches = sample_micro_batches(40, 16, 70 + k as u64).unwrap();
            let couplings = compute_couplings(&params, case, batches, &ot).unwrap();
            let (_, tape) = forward(&params, case, &couplings, true).unwrap();
            let grads = backward(&mut tape.unwrap(), &params).unwrap();
            let base = params.to_flat();
            let analytic = grads.to_flat();
            let loss_at = |flat: &[f64]| {
                let mut q = params.clone();
                let mut pos = 0;
                q.visit_mut(|_, t| {
                    t.copy_from_slice(&flat[pos..pos + t.len()]);
                    pos += t.len();
                });
                forward(&q, case, &couplings, false).unwrap().0.loss.unwrap()
            };
            let mut offset = 0;
            for t in params.tensors() {
                for i in coords(&mut rng, t.data.len(), 20) {
                    let idx = offset + i;
                    let mut plus = base.clone();
                    plus[idx] += FD_STEP;
                    let mut minus = base.clone();
                    minus[idx] -= FD_STEP;
                    let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * FD_STEP);
                    check.record(&format!("pipeline[{mode}].{}[{i}]", t.name), analytic[idx], fd);
                }
                offset += t.data.len();
            }
        }
    }
}

fn criterion_6() -> Outcome {
    let mut layers = GradCheck::default();
    layer_checks(&mut layers);
    let mut full = GradCheck::default();
    pipeline_checks(&mut full);
    let failures: Vec<&String> = layers.failures.iter().chain(&full.failures).take(3).collect();
    outcome(
        layers.failures.is_empty() && full.failures.is_empty(),
        format!(
            "layers: {} coords, worst rel err {:.2e}; full loss path: {} coords, worst rel err {:.2e}{}",
            layers.coords,
            layers.worst,
            full.coords,
            full.worst,
            if failures.is_empty() {
                String::new()
            } else {
                format!("; e.g. {failures:?}")
            }
        ),
    )
}

// ---------------------------------------------------------------------------
// 7. Survival metrics.

fn pairwise_c_index(risks: &[f64], recs: &[SurvivalRecord]) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..recs.len() {
        for j in 0..recs.len() {
            // i is the earlier, observed death.
            if recs[i].censored || recs[i].time_months >= recs[j].time_months {
                continue;
            }
            den += 1.0;
            if risks[i] > risks[j] {
                num += 1.0;
            } else if risks[i] == risks[j] {
                num += 0.5;
            }
        }
    }
    (den > 0.0).then(|| num / den)
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut worst = 0.0f64;
    let mut mismatch = 0;
    for _ in 0..200 {
        let n = rng.random_range(2..40);
        let recs: Vec<SurvivalRecord> = (0..n)
            .map(|_| SurvivalRecord::new(rng.random_range(1..12) as f64, rng.random_bool(0.35)).unwrap())
            .collect();
        let risks: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
        match (c_index(&risks, &recs), pairwise_c_index(&risks, &recs)) {
            (Ok(a), Some(b)) => worst = worst.max((a - b).abs()),
            (Err(_), None) => {}
            _ => mismatch += 1,
        }
    }

    // Tied death and censoring at t=1; deaths are removed first.
    let times = [1.0, 1.0, 2.0, 3.0, 3.0, 4.0];
    let cens = [false, true, false, false, false, true];
    let recs: Vec<SurvivalRecord> = times
        .iter()
        .zip(cens)
        .map(|(&t, c)| SurvivalRecord::new(t, c).unwrap())
        .collect();
    let km = km_estimate(&recs);
    let hand = [5.0 / 6.0, 5.0 / 6.0 * 3.0 / 4.0, 5.0 / 6.0 * 3.0 / 4.0 * 1.0 / 3.0];
    let km_err = km
        .survival
        .iter()
        .zip(hand)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let km_ok = km.event_times == vec![1.0, 2.0, 3.0] && km.at_risk == vec![6, 4, 3] && km_err < 1e-12;

    let p = chi2_sf_1(3.841);
    outcome(
        worst < 1e-12 && mismatch == 0 && km_ok && (p - 0.05).abs() <= 1e-3,
        format!(
            "C-index vs pairwise oracle: max diff {worst:.1e}, {mismatch} definedness mismatches; KM tie example err {km_err:.1e}; p(3.841) = {p:.6}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 8-10. End-to-end experiments.

fn e2e_config(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        seed,
        ..Default::default()
    }
}

fn criterion_8(cases: &[LoadedCase]) -> (Outcome, CvReport) {
    let start = Instant::now();
    let base = cross_validate(
        cases,
        &ExperimentConfig {
            epochs: 0,
            ..e2e_config(1)
        },
        None,
    )
    .unwrap();
    let report = cross_validate(cases, &e2e_config(1), None).unwrap();
    let p = report.pooled_logrank.p_value;
    (
        outcome(
            report.mean_c_index >= 0.75 && p < 0.05,
            format!(
                "200 cases, 5 folds, m=256, 20 epochs: C-index {} (untrained {}); pooled log-rank p = {p:.2e}; {:.0} s",
                report.summary,
                base.summary,
                start.elapsed().as_secs_f64()
            ),
        ),
        report,
    )
}

fn criterion_9(cases: &[LoadedCase], seed1_umbot: &CvReport) -> Outcome {
    let start = Instant::now();
    let mut cells = Vec::new();
    let mut per_mode = |mode: AttentionMode| {
        let mut cs = Vec::new();
        for seed in 1..=3u64 {
            let report = if mode == AttentionMode::Umbot && seed == 1 {
                seed1_umbot.clone()
            } else {
                let mut cfg = e2e_config(seed);
                cfg.ot.mode = mode;
                cross_validate(cases, &cfg, None).unwrap()
            };
            cs.extend(report.folds.iter().map(|f| f.c_index));
        }
        let (mean, std) = mean_std(&cs);
        cells.push(AblationCell {
            mode,
            m: 256,
            mean_c_index: mean,
            std_c_index: std,
            error: None,
        });
        mean
    };
    let umbot = per_mode(AttentionMode::Umbot);
    let dense = per_mode(AttentionMode::Dense);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ablation_summary.csv");
    write_cells(&path, &cells).unwrap();
    let table = std::fs::read_to_string(&path).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    outcome(
        umbot >= dense - 0.02,
        format!(
            "3 seeds x 5 folds: umbot {umbot:.4}, dense {dense:.4}; table rows {rows:?}; {:.0} s",
            start.elapsed().as_secs_f64()
        ),
    )
}

fn criterion_10(cases: &[LoadedCase], first: &CvReport) -> Outcome {
    let again = cross_validate(cases, &e2e_config(1), None).unwrap();
    let a = serde_json::to_string(first).unwrap();
    let b = serde_json::to_string(&again).unwrap();
    let bits_equal = first.folds.iter().zip(&again.folds).all(|(x, y)| {
        x.c_index.to_bits() == y.c_index.to_bits()
            && x.risks.iter().zip(&y.risks).all(|(p, q)| p.to_bits() == q.to_bits())
            && x.train_loss.iter().zip(&y.train_loss).all(|(p, q)| p.to_bits() == q.to_bits())
    });
    outcome(
        a == b && bits_equal && first.mean_c_index.to_bits() == again.mean_c_index.to_bits(),
        format!("repeat run report identical: {} ({} bytes of JSON compared)", a == b, a.len()),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |id: usize, name: &str, o: Outcome| {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failed += 1;
        }
        println!("{tag} [{id}] {name}: {}", o.detail);
    };
    report(1, "exact OT matches min-cost-flow oracle", criterion_1());
    report(2, "entropic limit approaches exact OT", criterion_2());
    report(3, "unbalanced limits", criterion_3());
    report(4, "micro-batch / whole-bag equivalence", criterion_4());
    report(5, "micro-batched solve time scales linearly", criterion_5());
    report(6, "analytic vs finite-difference gradients", criterion_6());
    report(7, "survival metric oracles", criterion_7());
    let cases = synth_cases(200, 7);
    let (o8, first) = criterion_8(&cases);
    report(8, "end-to-end synthetic experiment", o8);
    report(9, "ablation: umbot vs dense", criterion_9(&cases, &first));
    report(10, "bit-exact determinism", criterion_10(&cases, &first));
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
