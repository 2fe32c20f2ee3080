//! Single-head, one-layer attention aggregator over an entity and its
//! one-hop neighbors, projected back onto the unit sphere.
//!
//! For entity `e` with input `v_e` and neighbor inputs `n_j`:
//!
//! ```text
//! h_c = W_c v_e            h_j = W_n n_j
//! s_j = leaky_relu(a_cᵀ h_c + a_nᵀ h_j)      α = softmax(s)
//! f(e) = normalize(h_c + Σ_j α_j h_j)
//! ```
//!
//! In relation mode each neighbor input is `normalize(v_j + r_j)` where `r_j`
//! embeds the relation on the connecting edge.

use std::borrow::Cow;
use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::binio::{ByteReader, ByteWriter};
use crate::embedding::EmbeddingStore;
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph};
use crate::linalg::{axpy, dot, norm, normalize_in_place, Matrix};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;
pub const DEGENERATE_NORM: f64 = 1e-12;

const CHECKPOINT_MAGIC: &[u8; 4] = b"KGAE";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub w_center: Matrix,
    pub w_neighbor: Matrix,
    /// `[a_c ‖ a_n]`, length `2 * dim`.
    pub attn: Vec<f64>,
    pub leaky_slope: f64,
}

impl EncoderParams {
    /// Near-identity start: `W_c = I + U(±1e-3)`, `W_n = 0.1 (I + U(±1e-3))`,
    /// attention weights `U(±1/sqrt(2 dim))`.
    pub fn init<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let noisy_identity = |scale: f64, rng: &mut R| {
            let mut m = Matrix::identity(dim);
            for x in m.as_mut_slice() {
                *x = scale * (*x + rng.random_range(-1e-3..=1e-3));
            }
            m
        };
        let w_center = noisy_identity(1.0, rng);
        let w_neighbor = noisy_identity(0.1, rng);
        let bound = 1.0 / ((2 * dim) as f64).sqrt();
        let attn = (0..2 * dim).map(|_| rng.random_range(-bound..=bound)).collect();
        Self {
            w_center,
            w_neighbor,
            attn,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    /// `W_c = I`, `W_n = 0.1 I`, zero attention.
    pub fn identity(dim: usize) -> Self {
        let mut w_neighbor = Matrix::identity(dim);
        w_neighbor.as_mut_slice().iter_mut().for_each(|x| *x *= 0.1);
        Self {
            w_center: Matrix::identity(dim),
            w_neighbor,
            attn: vec![0.0; 2 * dim],
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    pub fn dim(&self) -> usize {
        self.w_center.rows()
    }

    /// Parameter tensors in checkpoint order.
    pub fn tensors(&self) -> [&[f64]; 3] {
        [
            self.w_center.as_slice(),
            self.w_neighbor.as_slice(),
            &self.attn,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 3] {
        [
            self.w_center.as_mut_slice(),
            self.w_neighbor.as_mut_slice(),
            &mut self.attn,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        self.write_into(&mut w);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let p = Self::read_from(&mut r)?;
        r.finish()?;
        Ok(p)
    }

    pub(crate) fn write_into(&self, w: &mut ByteWriter) {
        w.bytes(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.usize(self.dim());
        w.f64(self.leaky_slope);
        for t in self.tensors() {
            w.f64s(t);
        }
    }

    pub(crate) fn read_from(r: &mut ByteReader<'_>) -> Result<Self> {
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not an encoder checkpoint".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let dim = r.usize()?;
        let leaky_slope = r.f64()?;
        let w_center = Matrix::from_vec(dim, dim, r.f64s(dim * dim)?)?;
        let w_neighbor = Matrix::from_vec(dim, dim, r.f64s(dim * dim)?)?;
        let attn = r.f64s(2 * dim)?;
        Ok(Self {
            w_center,
            w_neighbor,
            attn,
            leaky_slope,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Gradients with the same shapes as [`EncoderParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub w_center: Matrix,
    pub w_neighbor: Matrix,
    pub attn: Vec<f64>,
}

impl EncoderGrads {
    pub fn zeros(dim: usize) -> Self {
        Self {
            w_center: Matrix::zeros(dim, dim),
            w_neighbor: Matrix::zeros(dim, dim),
            attn: vec![0.0; 2 * dim],
        }
    }

    pub fn tensors(&self) -> [&[f64]; 3] {
        [
            self.w_center.as_slice(),
            self.w_neighbor.as_slice(),
            &self.attn,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 3] {
        [
            self.w_center.as_mut_slice(),
            self.w_neighbor.as_mut_slice(),
            &mut self.attn,
        ]
    }

    pub fn add_assign(&mut self, other: &EncoderGrads) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            axpy(1.0, b, a);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// A graph together with the embeddings feeding the encoder.
#[derive(Debug, Clone, Copy)]
pub struct GraphView<'a> {
    pub kg: &'a KnowledgeGraph,
    pub store: &'a EmbeddingStore,
    pub relation_mode: bool,
}

impl<'a> GraphView<'a> {
    pub fn new(kg: &'a KnowledgeGraph, store: &'a EmbeddingStore, relation_mode: bool) -> Result<Self> {
        if store.len() != kg.num_entities() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} entity vectors", kg.num_entities()),
                found: store.len().to_string(),
            });
        }
        if relation_mode && store.relation_count() < kg.num_relations() {
            return Err(Error::MissingRelationEmbeddings);
        }
        Ok(Self {
            kg,
            store,
            relation_mode,
        })
    }

    pub fn dim(&self) -> usize {
        self.store.dim()
    }

    fn neighbor_inputs(&self, e: EntityId) -> Result<Vec<Cow<'a, [f64]>>> {
        self.kg
            .neighbors(e)
            .iter()
            .map(|&(n, r)| {
                let v = self.store.vector(n);
                if !self.relation_mode {
                    return Ok(Cow::Borrowed(v));
                }
                let rel = self
                    .store
                    .relation_vector(r)
                    .ok_or(Error::MissingRelationEmbeddings)?;
                let mut combined: Vec<f64> = v.iter().zip(rel).map(|(a, b)| a + b).collect();
                let len = normalize_in_place(&mut combined);
                if len < DEGENERATE_NORM {
                    return Err(Error::DegenerateNorm {
                        entity: n.0,
                        norm: len,
                    });
                }
                Ok(Cow::Owned(combined))
            })
            .collect()
    }
}

#[inline]
fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

struct Forward<'a> {
    neighbors: Vec<Cow<'a, [f64]>>,
    hc: Vec<f64>,
    h: Vec<Vec<f64>>,
    pre: Vec<f64>,
    alpha: Vec<f64>,
    z_norm: f64,
    out: Vec<f64>,
}

fn forward<'a>(params: &EncoderParams, view: &GraphView<'a>, e: EntityId) -> Result<Forward<'a>> {
    let d = params.dim();
    if view.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: view.dim(),
        });
    }
    let hc = params.w_center.matvec(view.store.vector(e));
    let neighbors = view.neighbor_inputs(e)?;
    let h: Vec<Vec<f64>> = neighbors
        .iter()
        .map(|n| params.w_neighbor.matvec(n))
        .collect();
    let (a_c, a_n) = params.attn.split_at(d);
    let center_logit = dot(a_c, &hc);
    let pre: Vec<f64> = h.iter().map(|hj| center_logit + dot(a_n, hj)).collect();

    let logits: Vec<f64> = pre.iter().map(|&p| leaky_relu(p, params.leaky_slope)).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut alpha: Vec<f64> = logits.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = alpha.iter().sum();
    alpha.iter_mut().for_each(|a| *a /= total);

    let mut z = hc.clone();
    for (a, hj) in alpha.iter().zip(&h) {
        axpy(*a, hj, &mut z);
    }
    let z_norm = norm(&z);
    if !(z_norm >= DEGENERATE_NORM) {
        return Err(Error::DegenerateNorm {
            entity: e.0,
            norm: z_norm,
        });
    }
    z.iter_mut().for_each(|x| *x /= z_norm);
    Ok(Forward {
        neighbors,
        hc,
        h,
        pre,
        alpha,
        z_norm,
        out: z,
    })
}

pub fn encode(params: &EncoderParams, view: &GraphView<'_>, e: EntityId) -> Result<Vec<f64>> {
    forward(params, view, e).map(|f| f.out)
}

/// Attention weights over `e`'s neighbors, in neighbor-list order.
pub fn attention_weights(params: &EncoderParams, view: &GraphView<'_>, e: EntityId) -> Result<Vec<f64>> {
    forward(params, view, e).map(|f| f.alpha)
}

/// Row `i` is `encode(batch[i])`. Rows are computed in parallel; the first
/// failing row's error is returned.
pub fn encode_batch(params: &EncoderParams, view: &GraphView<'_>, batch: &[EntityId]) -> Result<Matrix> {
    let rows: Vec<Vec<f64>> = batch
        .par_iter()
        .map(|&e| encode(params, view, e))
        .collect::<Result<_>>()?;
    Matrix::from_rows(&rows, params.dim())
}

/// Gradient of `upstreamᵀ f(e)` with respect to every parameter.
pub fn grad_encode(
    params: &EncoderParams,
    view: &GraphView<'_>,
    e: EntityId,
    upstream: &[f64],
) -> Result<EncoderGrads> {
    let mut grads = EncoderGrads::zeros(params.dim());
    accumulate_grad_encode(params, view, e, upstream, &mut grads)?;
    Ok(grads)
}

/// Adds the gradient of `upstreamᵀ f(e)` into `grads`.
pub fn accumulate_grad_encode(
    params: &EncoderParams,
    view: &GraphView<'_>,
    e: EntityId,
    upstream: &[f64],
    grads: &mut EncoderGrads,
) -> Result<()> {
    let d = params.dim();
    if upstream.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: upstream.len(),
        });
    }
    let fw = forward(params, view, e)?;

    // through f = z / |z|
    let proj = dot(&fw.out, upstream);
    let dz: Vec<f64> = upstream
        .iter()
        .zip(&fw.out)
        .map(|(g, o)| (g - o * proj) / fw.z_norm)
        .collect();

    // through z = h_c + Σ α_j h_j and the softmax
    let dalpha: Vec<f64> = fw.h.iter().map(|hj| dot(&dz, hj)).collect();
    let mean: f64 = fw.alpha.iter().zip(&dalpha).map(|(a, g)| a * g).sum();
    let (a_c, a_n) = params.attn.split_at(d);
    let mut dhc = dz.clone();
    let mut dpre_total = 0.0;
    for j in 0..fw.h.len() {
        let ds = fw.alpha[j] * (dalpha[j] - mean);
        let dpre = if fw.pre[j] > 0.0 {
            ds
        } else {
            ds * params.leaky_slope
        };
        dpre_total += dpre;
        let (g_ac, g_an) = grads.attn.split_at_mut(d);
        axpy(dpre, &fw.hc, g_ac);
        axpy(dpre, &fw.h[j], g_an);

        let mut dhj = dz.iter().map(|x| fw.alpha[j] * x).collect::<Vec<_>>();
        axpy(dpre, a_n, &mut dhj);
        grads.w_neighbor.add_outer(1.0, &dhj, &fw.neighbors[j]);
    }
    axpy(dpre_total, a_c, &mut dhc);
    grads
        .w_center
        .add_outer(1.0, &dhc, view.store.vector(e));
    Ok(())
}

/// Online encoder updated by gradients and a target encoder that trails it
/// as an exponential moving average.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderPair {
    pub online: EncoderParams,
    pub target: EncoderParams,
    momentum: f64,
}

impl EncoderPair {
    /// Starts with the target equal to the online encoder.
    pub fn new(online: EncoderParams, momentum: f64) -> Result<Self> {
        Self::from_parts(online.clone(), online, momentum)
    }

    pub fn from_parts(online: EncoderParams, target: EncoderParams, momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidConfig(format!("momentum {momentum} outside [0, 1)")));
        }
        if online.dim() != target.dim() {
            return Err(Error::DimensionMismatch {
                expected: online.dim(),
                found: target.dim(),
            });
        }
        Ok(Self {
            online,
            target,
            momentum,
        })
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    /// `target ← m·target + (1−m)·online`, elementwise; `online` is untouched.
    pub fn momentum_update(&mut self) {
        let m = self.momentum;
        for (t, o) in self
            .target
            .tensors_mut()
            .into_iter()
            .zip(self.online.tensors())
        {
            for (ti, oi) in t.iter_mut().zip(o) {
                *ti = m * *ti + (1.0 - m) * oi;
            }
        }
    }
}

/// Functional form of [`EncoderPair::momentum_update`].
pub fn momentum_update(mut pair: EncoderPair) -> EncoderPair {
    pair.momentum_update();
    pair
}
