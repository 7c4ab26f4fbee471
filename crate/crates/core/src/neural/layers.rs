//! Layer primitives with explicit forward caches and reverse-mode backward.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::microbatch::softmax_rows;

pub const SELU_ALPHA: f64 = 1.6732632423543772;
pub const SELU_LAMBDA: f64 = 1.0507009873554805;

pub fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA * x
    } else {
        SELU_LAMBDA * SELU_ALPHA * (x.exp() - 1.0)
    }
}

pub fn selu_grad(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn normal_matrix<R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Array2<f64> {
    let dist = Normal::new(0.0, std).expect("positive std");
    Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

/// `y = x W + b` with `W` stored as `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    pub fn init<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        Self {
            w: normal_matrix(fan_in, fan_out, 1.0 / (fan_in as f64).sqrt(), rng),
            b: Array1::zeros(fan_out),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: Array2::zeros((fan_in, fan_out)),
            b: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.w.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.fan_in() {
            return Err(Error::Shape(format!(
                "linear layer expects {} inputs, got {}",
                self.fan_in(),
                x.ncols()
            )));
        }
        Ok(x.dot(&self.w) + &self.b)
    }

    pub fn forward_vec(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        Ok(self.forward(x.insert_axis(Axis(0)))?.index_axis_move(Axis(0), 0))
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: ArrayView2<f64>, dy: ArrayView2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.w += &x.t().dot(&dy);
        grad.b += &dy.sum_axis(Axis(0));
        dy.dot(&self.w.t())
    }

    pub fn backward_vec(&self, x: ArrayView1<f64>, dy: ArrayView1<f64>, grad: &mut Linear) -> Array1<f64> {
        self.backward(x.insert_axis(Axis(0)), dy.insert_axis(Axis(0)), grad)
            .index_axis_move(Axis(0), 0)
    }
}

/// Two linear layers, each followed by SELU.
#[derive(Debug, Clone, PartialEq)]
pub struct SeluMlp {
    pub l1: Linear,
    pub l2: Linear,
}

#[derive(Debug, Clone)]
pub struct SeluMlpCache {
    pub x: Array1<f64>,
    pub z1: Array1<f64>,
    pub a1: Array1<f64>,
    pub z2: Array1<f64>,
}

impl SeluMlp {
    pub fn init<R: Rng>(d_in: usize, d: usize, rng: &mut R) -> Self {
        Self {
            l1: Linear::init(d_in, d, rng),
            l2: Linear::init(d, d, rng),
        }
    }

    pub fn forward(&self, x: ArrayView1<f64>) -> Result<(Array1<f64>, SeluMlpCache)> {
        let z1 = self.l1.forward_vec(x)?;
        let a1 = z1.mapv(selu);
        let z2 = self.l2.forward_vec(a1.view())?;
        let out = z2.mapv(selu);
        Ok((
            out,
            SeluMlpCache {
                x: x.to_owned(),
                z1,
                a1,
                z2,
            },
        ))
    }

    pub fn backward(&self, cache: &SeluMlpCache, dout: ArrayView1<f64>, grad: &mut SeluMlp) -> Array1<f64> {
        let dz2 = &dout * &cache.z2.mapv(selu_grad);
        let da1 = self.l2.backward_vec(cache.a1.view(), dz2.view(), &mut grad.l2);
        let dz1 = &da1 * &cache.z1.mapv(selu_grad);
        self.l1.backward_vec(cache.x.view(), dz1.view(), &mut grad.l1)
    }
}

/// Single multi-head self-attention layer with a residual connection and
/// mean pooling over tokens. Queries, keys and values carry no bias.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfAttention {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub n_heads: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    pub x: Array2<f64>,
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// Row-softmax attention weights per head.
    pub attn: Vec<Array2<f64>>,
    /// Concatenated head outputs.
    pub o: Array2<f64>,
}

impl SelfAttention {
    pub fn init<R: Rng>(d: usize, n_heads: usize, rng: &mut R) -> Result<Self> {
        if n_heads == 0 || !d.is_multiple_of(n_heads) {
            return Err(Error::Parameter(format!("d={d} is not divisible by n_heads={n_heads}")));
        }
        let std = 1.0 / (d as f64).sqrt();
        Ok(Self {
            wq: normal_matrix(d, d, std, rng),
            wk: normal_matrix(d, d, std, rng),
            wv: normal_matrix(d, d, std, rng),
            wo: normal_matrix(d, d, std, rng),
            bo: Array1::zeros(d),
            n_heads,
        })
    }

    pub fn zeros(d: usize, n_heads: usize) -> Self {
        Self {
            wq: Array2::zeros((d, d)),
            wk: Array2::zeros((d, d)),
            wv: Array2::zeros((d, d)),
            wo: Array2::zeros((d, d)),
            bo: Array1::zeros(d),
            n_heads,
        }
    }

    pub fn dim(&self) -> usize {
        self.wq.nrows()
    }

    fn head_dim(&self) -> usize {
        self.dim() / self.n_heads
    }

    /// Pooled output (length `d`) and the cache needed by [`Self::backward`].
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array1<f64>, AttentionCache)> {
        if x.nrows() == 0 {
            return Err(Error::Data("cannot aggregate an empty bag".into()));
        }
        if x.ncols() != self.dim() {
            return Err(Error::Shape(format!(
                "aggregator expects dim {}, got {}",
                self.dim(),
                x.ncols()
            )));
        }
        let q = x.dot(&self.wq);
        let k = x.dot(&self.wk);
        let v = x.dot(&self.wv);
        let dh = self.head_dim();
        let scale = (dh as f64).sqrt();
        let mut o = Array2::zeros(x.raw_dim());
        let mut attn = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut a = q.slice(cols).dot(&k.slice(cols).t()) / scale;
            softmax_rows(&mut a);
            o.slice_mut(cols).assign(&a.dot(&v.slice(cols)));
            attn.push(a);
        }
        let y = &x + &o.dot(&self.wo) + &self.bo;
        let pooled = y.mean_axis(Axis(0)).expect("non-empty");
        Ok((
            pooled,
            AttentionCache {
                x: x.to_owned(),
                q,
                k,
                v,
                attn,
                o,
            },
        ))
    }

    /// Accumulates parameter gradients and returns `dL/dx` for the tokens.
    pub fn backward(&self, cache: &AttentionCache, dpooled: ArrayView1<f64>, grad: &mut SelfAttention) -> Array2<f64> {
        let n = cache.x.nrows();
        let dy = Array2::from_shape_fn((n, self.dim()), |(_, c)| dpooled[c] / n as f64);
        grad.bo += &dy.sum_axis(Axis(0));
        grad.wo += &cache.o.t().dot(&dy);
        let d_o = dy.dot(&self.wo.t());

        let dh = self.head_dim();
        let scale = (dh as f64).sqrt();
        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for (h, a) in cache.attn.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let d_oh = d_o.slice(cols);
            let da = d_oh.dot(&cache.v.slice(cols).t());
            dv.slice_mut(cols).assign(&a.t().dot(&d_oh));
            let ds = softmax_backward(a, &da) / scale;
            dq.slice_mut(cols).assign(&ds.dot(&cache.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&cache.q.slice(cols)));
        }
        let xt = cache.x.t();
        grad.wq += &xt.dot(&dq);
        grad.wk += &xt.dot(&dk);
        grad.wv += &xt.dot(&dv);
        dy + dq.dot(&self.wq.t()) + dk.dot(&self.wk.t()) + dv.dot(&self.wv.t())
    }
}

/// Gradient through a row-wise softmax: `A * (dA - rowsum(dA * A))`.
pub fn softmax_backward(a: &Array2<f64>, da: &Array2<f64>) -> Array2<f64> {
    let mut out = da.clone();
    for ((mut o, ar), dar) in out.rows_mut().into_iter().zip(a.rows()).zip(da.rows()) {
        let dot = ar.dot(&dar);
        o.zip_mut_with(&ar, |g, &p| *g = p * (*g - dot));
    }
    out
}
