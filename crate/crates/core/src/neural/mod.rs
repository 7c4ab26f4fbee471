//! Trainable model components: pathology projection, per-category SELU
//! genomic encoders, attention aggregators and the hazard head, plus Adam and
//! checkpointing.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::bagdata::{GenomicProfile, InstanceBag, Modality};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};

mod adam;
mod checkpoint;
pub mod layers;

pub use adam::{AdamSettings, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
pub use layers::{sigmoid, Linear, SelfAttention, SeluMlp, SeluMlpCache};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Raw pathology feature dimension.
    pub d_raw: usize,
    /// Shared embedding dimension.
    pub d: usize,
    pub n_heads: usize,
    /// Attribute count of each genomic category, in category order.
    pub category_dims: Vec<usize>,
    /// Number of hazard outputs.
    pub n_bins: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_raw == 0 || self.d == 0 || self.n_bins == 0 || self.category_dims.is_empty() {
            return Err(Error::Parameter(format!("degenerate model config {self:?}")));
        }
        if self.n_heads == 0 || !self.d.is_multiple_of(self.n_heads) {
            return Err(Error::Parameter(format!(
                "d={} is not divisible by n_heads={}",
                self.d, self.n_heads
            )));
        }
        if self.category_dims.contains(&0) {
            return Err(Error::Parameter("genomic category with zero attributes".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub pathology_proj: Linear,
    pub genomic_encoders: Vec<SeluMlp>,
    pub aggregator_p: SelfAttention,
    pub aggregator_g: SelfAttention,
    pub hazard_head: Linear,
    version: u64,
}

/// Borrowed view of one named parameter tensor.
pub struct TensorRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

fn slice2(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("parameters are standard layout")
}

fn slice2_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("parameters are standard layout")
}

fn slice1(a: &Array1<f64>) -> &[f64] {
    a.as_slice().expect("parameters are standard layout")
}

fn slice1_mut(a: &mut Array1<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("parameters are standard layout")
}

impl ModelParams {
    /// Seeded initialization: weights `N(0, 1/fan_in)` (std `1/sqrt(fan_in)`),
    /// biases zero. Each component draws from its own stream.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.d;
        let mut rng = seeded(derive_seed(seed, 0));
        let pathology_proj = Linear::init(config.d_raw, d, &mut rng);
        let genomic_encoders = config
            .category_dims
            .iter()
            .enumerate()
            .map(|(j, &dj)| SeluMlp::init(dj, d, &mut seeded(derive_seed(seed, 100 + j as u64))))
            .collect();
        let aggregator_p = SelfAttention::init(d, config.n_heads, &mut seeded(derive_seed(seed, 1)))?;
        let aggregator_g = SelfAttention::init(d, config.n_heads, &mut seeded(derive_seed(seed, 2)))?;
        let hazard_head = Linear::init(2 * d, config.n_bins, &mut seeded(derive_seed(seed, 3)));
        Ok(Self {
            pathology_proj,
            genomic_encoders,
            aggregator_p,
            aggregator_g,
            hazard_head,
            version: 0,
        })
    }

    /// All-zero tensors with the same shapes; used for gradient buffers.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(|_, t| t.fill(0.0));
        z.version = 0;
        z
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            d_raw: self.pathology_proj.fan_in(),
            d: self.pathology_proj.fan_out(),
            n_heads: self.aggregator_p.n_heads,
            category_dims: self.genomic_encoders.iter().map(|e| e.l1.fan_in()).collect(),
            n_bins: self.hazard_head.fan_out(),
        }
    }

    /// Incremented on every mutable access; tapes recorded against an older
    /// version are rejected.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::new();
        fn lin<'a>(prefix: &str, l: &'a Linear, out: &mut Vec<TensorRef<'a>>) {
            out.push(TensorRef {
                name: format!("{prefix}.w"),
                shape: l.w.shape().to_vec(),
                data: slice2(&l.w),
            });
            out.push(TensorRef {
                name: format!("{prefix}.b"),
                shape: l.b.shape().to_vec(),
                data: slice1(&l.b),
            });
        }
        fn att<'a>(prefix: &str, a: &'a SelfAttention, out: &mut Vec<TensorRef<'a>>) {
            for (n, t) in [("wq", &a.wq), ("wk", &a.wk), ("wv", &a.wv), ("wo", &a.wo)] {
                out.push(TensorRef {
                    name: format!("{prefix}.{n}"),
                    shape: t.shape().to_vec(),
                    data: slice2(t),
                });
            }
            out.push(TensorRef {
                name: format!("{prefix}.bo"),
                shape: a.bo.shape().to_vec(),
                data: slice1(&a.bo),
            });
        }
        lin("pathology_proj", &self.pathology_proj, &mut out);
        for (j, e) in self.genomic_encoders.iter().enumerate() {
            lin(&format!("genomic_encoders.{j}.l1"), &e.l1, &mut out);
            lin(&format!("genomic_encoders.{j}.l2"), &e.l2, &mut out);
        }
        att("aggregator_p", &self.aggregator_p, &mut out);
        att("aggregator_g", &self.aggregator_g, &mut out);
        lin("hazard_head", &self.hazard_head, &mut out);
        out
    }

    /// Calls `f(name, data)` for every tensor in the same order as
    /// [`Self::tensors`].
    pub fn visit_mut(&mut self, mut f: impl FnMut(&str, &mut [f64])) {
        self.version += 1;
        fn lin(prefix: &str, l: &mut Linear, f: &mut impl FnMut(&str, &mut [f64])) {
            f(&format!("{prefix}.w"), slice2_mut(&mut l.w));
            f(&format!("{prefix}.b"), slice1_mut(&mut l.b));
        }
        fn att(prefix: &str, a: &mut SelfAttention, f: &mut impl FnMut(&str, &mut [f64])) {
            f(&format!("{prefix}.wq"), slice2_mut(&mut a.wq));
            f(&format!("{prefix}.wk"), slice2_mut(&mut a.wk));
            f(&format!("{prefix}.wv"), slice2_mut(&mut a.wv));
            f(&format!("{prefix}.wo"), slice2_mut(&mut a.wo));
            f(&format!("{prefix}.bo"), slice1_mut(&mut a.bo));
        }
        lin("pathology_proj", &mut self.pathology_proj, &mut f);
        for (j, e) in self.genomic_encoders.iter_mut().enumerate() {
            lin(&format!("genomic_encoders.{j}.l1"), &mut e.l1, &mut f);
            lin(&format!("genomic_encoders.{j}.l2"), &mut e.l2, &mut f);
        }
        att("aggregator_p", &mut self.aggregator_p, &mut f);
        att("aggregator_g", &mut self.aggregator_g, &mut f);
        lin("hazard_head", &mut self.hazard_head, &mut f);
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    /// Flattened copy of every tensor, in visiting order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, other: &ModelParams, alpha: f64) -> Result<()> {
        let src = other.to_flat();
        if src.len() != self.n_params() {
            return Err(Error::Shape("parameter sets differ in size".into()));
        }
        let mut pos = 0;
        self.visit_mut(|_, t| {
            for x in t.iter_mut() {
                *x += alpha * src[pos];
                pos += 1;
            }
        });
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|x| x.is_finite()))
    }
}

/// Encodes every genomic category with its own SELU network: an `M_g x d`
/// bag.
pub fn encode_genomic(profile: &GenomicProfile, params: &ModelParams) -> Result<InstanceBag> {
    let (g, _) = encode_genomic_cached(profile, params)?;
    InstanceBag::new(g, Modality::Genomic, "")
}

pub(crate) fn encode_genomic_cached(
    profile: &GenomicProfile,
    params: &ModelParams,
) -> Result<(Array2<f64>, Vec<SeluMlpCache>)> {
    let cats = profile.categories();
    if cats.len() != params.genomic_encoders.len() {
        return Err(Error::Shape(format!(
            "profile has {} categories, model expects {}",
            cats.len(),
            params.genomic_encoders.len()
        )));
    }
    let d = params.pathology_proj.fan_out();
    let mut g = Array2::zeros((cats.len(), d));
    let mut caches = Vec::with_capacity(cats.len());
    for (j, ((name, attrs), enc)) in cats.iter().zip(&params.genomic_encoders).enumerate() {
        if attrs.len() != enc.l1.fan_in() {
            return Err(Error::Shape(format!(
                "category {name:?} has {} attributes, encoder expects {}",
                attrs.len(),
                enc.l1.fan_in()
            )));
        }
        let (row, cache) = enc.forward(ArrayView1::from(attrs.as_slice()))?;
        g.row_mut(j).assign(&row);
        caches.push(cache);
    }
    Ok((g, caches))
}

/// Projects raw pathology features into the shared embedding space.
pub fn project_pathology(raw: &InstanceBag, params: &ModelParams) -> Result<Array2<f64>> {
    params.pathology_proj.forward(raw.features().view())
}

/// Self-attention plus mean pooling over the bag.
pub fn aggregate(bag: &InstanceBag, attention: &SelfAttention) -> Result<Array1<f64>> {
    Ok(attention.forward(bag.features().view())?.0)
}

/// `sigmoid(W [h_p; h_g] + b)`: one hazard per time bin.
pub fn hazard_forward(h_p: ArrayView1<f64>, h_g: ArrayView1<f64>, params: &ModelParams) -> Result<Array1<f64>> {
    let z = ndarray::concatenate![ndarray::Axis(0), h_p, h_g];
    Ok(params.hazard_head.forward_vec(z.view())?.mapv(sigmoid))
}
