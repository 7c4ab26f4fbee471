//! Per-case forward pass with an optional tape, and exact reverse-mode
//! gradients through it.
//!
//! Couplings are computed first from detached embeddings and then held fixed:
//! the differentiable pass treats them as constants.

use ndarray::{concatenate, s, Array1, Array2, Axis};

use crate::bagdata::{GenomicProfile, InstanceBag, LoadedCase, SurvivalRecord, SyntheticCase};
use crate::error::{Error, Result};
use crate::microbatch::{
    gather_rows, sample_micro_batches, softmax_rows, solve_batch, AttentionMode, MicroBatchPlan, OtSettings,
};
use crate::neural::layers::{sigmoid, softmax_backward, AttentionCache, SeluMlpCache};
use crate::neural::{encode_genomic_cached, ModelParams};
use crate::survival::{nll_loss_grad, risk_score, SurvivalCurve};

/// Borrowed inputs of one case.
#[derive(Debug, Clone, Copy)]
pub struct CaseRef<'a> {
    pub case_id: &'a str,
    pub pathology: &'a InstanceBag,
    pub genomic: &'a GenomicProfile,
    pub record: &'a SurvivalRecord,
}

impl<'a> From<&'a LoadedCase> for CaseRef<'a> {
    fn from(c: &'a LoadedCase) -> Self {
        Self {
            case_id: &c.case_id,
            pathology: &c.pathology,
            genomic: &c.genomic,
            record: &c.record,
        }
    }
}

impl<'a> From<&'a SyntheticCase> for CaseRef<'a> {
    fn from(c: &'a SyntheticCase) -> Self {
        Self {
            case_id: &c.case_id,
            pathology: &c.pathology,
            genomic: &c.genomic,
            record: &c.record,
        }
    }
}

/// How one micro-batch is pooled into an `M_g x d` selected bag.
#[derive(Debug, Clone)]
pub enum Pooling {
    /// Fixed coupling, `m x M_g`.
    Transport(Array2<f64>),
    /// Softmax attention recomputed (and differentiated) in the forward pass.
    Dense,
}

#[derive(Debug, Clone)]
pub struct CaseCouplings {
    pub batches: MicroBatchPlan,
    pub pooling: Vec<Pooling>,
}

/// Solves one transport problem per micro-batch on the current (detached)
/// embeddings.
pub fn compute_couplings(
    params: &ModelParams,
    case: CaseRef<'_>,
    batches: MicroBatchPlan,
    ot: &OtSettings,
) -> Result<CaseCouplings> {
    let pooling = if ot.mode == AttentionMode::Dense {
        vec![Pooling::Dense; batches.len()]
    } else {
        let bp = params.pathology_proj.forward(case.pathology.features().view())?;
        let (g, _) = encode_genomic_cached(case.genomic, params)?;
        crate::microbatch::solve_batches(bp.view(), g.view(), &batches, ot)?
            .into_iter()
            .map(|p| Pooling::Transport(p.coupling))
            .collect()
    };
    Ok(CaseCouplings { batches, pooling })
}

#[derive(Debug, Clone)]
pub struct CaseForward {
    pub batch_hazards: Vec<Array1<f64>>,
    /// Unweighted NLL of each micro-batch; `None` when the record has no bin.
    pub batch_losses: Option<Vec<f64>>,
    pub weights: Vec<f64>,
    /// `sum_k w_k * NLL_k`.
    pub loss: Option<f64>,
    /// Weighted average of the per-batch survival curves.
    pub curve: SurvivalCurve,
    pub risk: f64,
}

#[derive(Debug)]
enum PoolTape {
    Transport(Array2<f64>),
    Dense { attn: Array2<f64>, keys: Array2<f64> },
}

#[derive(Debug)]
struct BatchTape {
    indices: Vec<usize>,
    weight: f64,
    pool: PoolTape,
    agg_p: AttentionCache,
    head_in: Array1<f64>,
    hazards: Array1<f64>,
    dloss_dh: Vec<f64>,
}

/// Forward intermediates of one case, consumed by [`backward`].
#[derive(Debug)]
pub struct Tape {
    version: u64,
    consumed: bool,
    x_raw: Array2<f64>,
    enc: Vec<SeluMlpCache>,
    g: Array2<f64>,
    agg_g: AttentionCache,
    batches: Vec<BatchTape>,
}

fn dense_scale(d: usize) -> f64 {
    (d as f64).sqrt()
}

fn average_curves(curves: &[Vec<f64>], weights: &[f64]) -> SurvivalCurve {
    let t = curves[0].len();
    let mut avg = vec![0.0; t];
    for (c, &w) in curves.iter().zip(weights) {
        for (a, s) in avg.iter_mut().zip(c) {
            *a += w * s;
        }
    }
    SurvivalCurve::from_survival(avg)
}

/// Differentiable forward pass with the couplings held fixed.
pub fn forward(
    params: &ModelParams,
    case: CaseRef<'_>,
    couplings: &CaseCouplings,
    record_tape: bool,
) -> Result<(CaseForward, Option<Tape>)> {
    let batches = &couplings.batches;
    let total: usize = batches.batch_indices.iter().map(Vec::len).sum();
    if total != case.pathology.len() || couplings.pooling.len() != batches.len() {
        return Err(Error::Shape(format!(
            "micro-batches cover {total} instances in {} batches for a bag of {} with {} poolings",
            batches.len(),
            case.pathology.len(),
            couplings.pooling.len()
        )));
    }
    if record_tape && case.record.bin.is_none() {
        return Err(Error::State(format!("case {} has no survival bin", case.case_id)));
    }
    let x_raw = case.pathology.features();
    let bp = params.pathology_proj.forward(x_raw.view())?;
    let (g, enc) = encode_genomic_cached(case.genomic, params)?;
    let (h_g, agg_g) = params.aggregator_g.forward(g.view())?;
    let weights = batches.weights();
    let scale = dense_scale(g.ncols());

    let mut batch_hazards = Vec::with_capacity(batches.len());
    let mut losses = Vec::with_capacity(batches.len());
    let mut curves = Vec::with_capacity(batches.len());
    let mut tapes = Vec::new();
    for ((idx, pooling), &w) in batches.batch_indices.iter().zip(&couplings.pooling).zip(&weights) {
        let bk = gather_rows(bp.view(), idx);
        let (selected, pool) = match pooling {
            Pooling::Transport(p) => {
                if p.dim() != (idx.len(), g.nrows()) {
                    return Err(Error::Shape(format!(
                        "coupling {:?} for a batch of {} and {} genomic instances",
                        p.dim(),
                        idx.len(),
                        g.nrows()
                    )));
                }
                (p.t().dot(&bk), PoolTape::Transport(p.clone()))
            }
            Pooling::Dense => {
                let mut attn = g.dot(&bk.t()) / scale;
                softmax_rows(&mut attn);
                (attn.dot(&bk), PoolTape::Dense { attn, keys: bk })
            }
        };
        let (h_p, agg_p) = params.aggregator_p.forward(selected.view())?;
        let head_in = concatenate![Axis(0), h_p, h_g];
        let hazards = params.hazard_head.forward_vec(head_in.view())?.mapv(sigmoid);
        let curve = crate::survival::survival_from_hazard(hazards.as_slice().expect("contiguous"))?;
        let (loss, dloss_dh) = match case.record.bin {
            Some(_) => {
                let (l, g) = nll_loss_grad(hazards.as_slice().expect("contiguous"), case.record, 1.0)?;
                (Some(l), g)
            }
            None => (None, Vec::new()),
        };
        losses.push(loss);
        curves.push(curve.survival);
        if record_tape {
            tapes.push(BatchTape {
                indices: idx.clone(),
                weight: w,
                pool,
                agg_p,
                head_in,
                hazards: hazards.clone(),
                dloss_dh,
            });
        }
        batch_hazards.push(hazards);
    }

    let batch_losses: Option<Vec<f64>> = losses.into_iter().collect();
    let loss = batch_losses
        .as_ref()
        .map(|ls| ls.iter().zip(&weights).map(|(l, w)| w * l).sum::<f64>());
    if let Some(l) = loss {
        if !l.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss for case {}", case.case_id)));
        }
    }
    let curve = average_curves(&curves, &weights);
    let risk = risk_score(&curve);
    let tape = record_tape.then(|| Tape {
        version: params.version(),
        consumed: false,
        x_raw: x_raw.clone(),
        enc,
        g,
        agg_g,
        batches: tapes,
    });
    Ok((
        CaseForward {
            batch_hazards,
            batch_losses,
            weights,
            loss,
            curve,
            risk,
        },
        tape,
    ))
}

/// Exact gradients of the case loss with respect to every parameter tensor.
/// Raw pathology features and couplings are constants.
pub fn backward(tape: &mut Tape, params: &ModelParams) -> Result<ModelParams> {
    if tape.consumed {
        return Err(Error::State("tape has already been consumed".into()));
    }
    if tape.version != params.version() {
        return Err(Error::State(format!(
            "tape recorded at parameter version {}, parameters are now at {}",
            tape.version,
            params.version()
        )));
    }
    tape.consumed = true;
    let mut grad = params.zeros_like();
    let d = tape.g.ncols();
    let scale = dense_scale(d);
    let mut d_bp = Array2::<f64>::zeros((tape.x_raw.nrows(), d));
    let mut d_g = Array2::<f64>::zeros(tape.g.raw_dim());
    let mut d_hg = Array1::<f64>::zeros(d);

    for b in &tape.batches {
        let dz = Array1::from_shape_fn(b.hazards.len(), |t| {
            let h = b.hazards[t];
            b.weight * b.dloss_dh[t] * h * (1.0 - h)
        });
        let d_in = params
            .hazard_head
            .backward_vec(b.head_in.view(), dz.view(), &mut grad.hazard_head);
        d_hg += &d_in.slice(s![d..]);
        let d_sel = params
            .aggregator_p
            .backward(&b.agg_p, d_in.slice(s![..d]), &mut grad.aggregator_p);
        let d_bk = match &b.pool {
            PoolTape::Transport(p) => p.dot(&d_sel),
            PoolTape::Dense { attn, keys } => {
                let mut d_keys = attn.t().dot(&d_sel);
                let d_attn = d_sel.dot(&keys.t());
                let d_logits = softmax_backward(attn, &d_attn) / scale;
                d_g += &d_logits.dot(keys);
                d_keys += &d_logits.t().dot(&tape.g);
                d_keys
            }
        };
        for (r, &i) in b.indices.iter().enumerate() {
            let mut row = d_bp.row_mut(i);
            row += &d_bk.row(r);
        }
    }

    d_g += &params.aggregator_g.backward(&tape.agg_g, d_hg.view(), &mut grad.aggregator_g);
    for (j, (enc, cache)) in params.genomic_encoders.iter().zip(&tape.enc).enumerate() {
        enc.backward(cache, d_g.row(j), &mut grad.genomic_encoders[j]);
    }
    params
        .pathology_proj
        .backward(tape.x_raw.view(), d_bp.view(), &mut grad.pathology_proj);
    Ok(grad)
}

/// Samples micro-batches, solves couplings, and runs the forward pass.
pub fn run_case(
    params: &ModelParams,
    case: CaseRef<'_>,
    m: usize,
    ot: &OtSettings,
    seed: u64,
    record_tape: bool,
) -> Result<(CaseForward, Option<Tape>)> {
    let batches = sample_micro_batches(case.pathology.len(), m, seed)?;
    let couplings = compute_couplings(params, case, batches, ot)?;
    forward(params, case, &couplings, record_tape)
}

/// Loss and gradients of one case.
pub fn case_gradient(
    params: &ModelParams,
    case: CaseRef<'_>,
    m: usize,
    ot: &OtSettings,
    seed: u64,
) -> Result<(CaseForward, ModelParams)> {
    let (out, tape) = run_case(params, case, m, ot, seed, true)?;
    let grads = backward(&mut tape.expect("tape requested"), params)?;
    Ok((out, grads))
}

/// Reference forward pass over the whole bag with no micro-batching.
pub fn forward_whole_bag(params: &ModelParams, case: CaseRef<'_>, ot: &OtSettings) -> Result<CaseForward> {
    let bp = params.pathology_proj.forward(case.pathology.features().view())?;
    let (g, _) = encode_genomic_cached(case.genomic, params)?;
    let selected = match ot.mode {
        AttentionMode::Dense => {
            let mut attn = g.dot(&bp.t()) / dense_scale(g.ncols());
            softmax_rows(&mut attn);
            attn.dot(&bp)
        }
        _ => solve_batch(bp.view(), g.view(), ot)?.coupling.t().dot(&bp),
    };
    let h_p = params.aggregator_p.forward(selected.view())?.0;
    let h_g = params.aggregator_g.forward(g.view())?.0;
    let hazards = crate::neural::hazard_forward(h_p.view(), h_g.view(), params)?;
    let curve = crate::survival::survival_from_hazard(hazards.as_slice().expect("contiguous"))?;
    let loss = match case.record.bin {
        Some(_) => Some(nll_loss_grad(hazards.as_slice().expect("contiguous"), case.record, 1.0)?.0),
        None => None,
    };
    let curve = SurvivalCurve::from_survival(curve.survival);
    let risk = risk_score(&curve);
    Ok(CaseForward {
        batch_hazards: vec![hazards],
        batch_losses: loss.map(|l| vec![l]),
        weights: vec![1.0],
        loss,
        curve,
        risk,
    })
}
