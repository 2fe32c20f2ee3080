#![allow(dead_code)]

use kgalign_core::kg::Triple;
use kgalign_core::linalg::normalize_in_place;
use kgalign_core::{EmbeddingStore, EncoderParams, EntityId, KnowledgeGraph, Matrix, RelationId};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn unit_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix {
    let mut m = Matrix::zeros(n, d);
    for i in 0..n {
        let r = m.row_mut(i);
        for x in r.iter_mut() {
            *x = normal(rng);
        }
        normalize_in_place(r);
    }
    m
}

/// Random multigraph with `edges` triples, self-loops allowed.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, relations: usize, edges: usize) -> KnowledgeGraph {
    let triples = (0..edges)
        .map(|_| Triple {
            head: EntityId(rng.random_range(0..n)),
            relation: RelationId(rng.random_range(0..relations)),
            tail: EntityId(rng.random_range(0..n)),
        })
        .collect();
    KnowledgeGraph::from_parts(
        (0..n).map(|i| format!("e{i}")).collect(),
        (0..n).map(|i| format!("entity {i}")).collect(),
        (0..relations).map(|r| format!("r{r}")).collect(),
        (0..relations).map(|r| format!("relation {r}")).collect(),
        triples,
    )
    .unwrap()
}

pub fn random_store(rng: &mut ChaCha8Rng, kg: &KnowledgeGraph, dim: usize) -> EmbeddingStore {
    let entities = unit_rows(rng, kg.num_entities(), dim);
    let relations = unit_rows(rng, kg.num_relations().max(1), dim);
    EmbeddingStore::from_matrix(entities)
        .unwrap()
        .with_relations(relations)
        .unwrap()
}

/// Parameters far from the identity start so every term matters.
pub fn random_params(rng: &mut ChaCha8Rng, dim: usize) -> EncoderParams {
    let mut p = EncoderParams::identity(dim);
    for x in p.w_center.as_mut_slice() {
        *x += 0.3 * normal(rng);
    }
    for x in p.w_neighbor.as_mut_slice() {
        *x = 0.5 * normal(rng);
    }
    for x in p.attn.iter_mut() {
        *x = normal(rng);
    }
    p
}

/// Central-difference gradient of `f` with respect to every parameter entry,
/// in `EncoderParams::tensors` order.
pub fn finite_difference(
    params: &EncoderParams,
    step: f64,
    mut f: impl FnMut(&EncoderParams) -> f64,
) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for t in 0..3 {
        let len = params.tensors()[t].len();
        let mut g = Vec::with_capacity(len);
        for i in 0..len {
            let mut plus = params.clone();
            plus.tensors_mut()[t][i] += step;
            let mut minus = params.clone();
            minus.tensors_mut()[t][i] -= step;
            g.push((f(&plus) - f(&minus)) / (2.0 * step));
        }
        out.push(g);
    }
    out
}

/// Relative error with a floor on the magnitude, for entries near zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Smallest |attention pre-activation| over the neighbors of `ids`; finite
/// differences are unreliable near the leaky-ReLU kink.
pub fn min_abs_preactivation(
    params: &EncoderParams,
    kg: &KnowledgeGraph,
    store: &EmbeddingStore,
    relation_mode: bool,
    ids: &[EntityId],
) -> f64 {
    let d = params.dim();
    let mut best = f64::INFINITY;
    for &e in ids {
        let hc = params.w_center.matvec(store.vector(e));
        let center: f64 = params.attn[..d].iter().zip(&hc).map(|(a, b)| a * b).sum();
        for &(j, r) in kg.neighbors(e) {
            let mut n = store.vector(j).to_vec();
            if relation_mode {
                for (x, y) in n.iter_mut().zip(store.relation_vector(r).unwrap()) {
                    *x += y;
                }
                normalize_in_place(&mut n);
            }
            let hj = params.w_neighbor.matvec(&n);
            let s: f64 = center + params.attn[d..].iter().zip(&hj).map(|(a, b)| a * b).sum::<f64>();
            best = best.min(s.abs());
        }
    }
    best
}

pub mod joint {
    use super::*;
    use kgalign_core::encoder::encode_batch;
    use kgalign_core::loss::{grad_joint_loss, joint_loss, SideBatch};
    use kgalign_core::{GraphView, KgSide, LossConfig, NegativeQueue, NegativeSampling};
    use rand::seq::index::sample;
    use rand::SeedableRng;

    pub const DIM: usize = 4;
    pub const STEP: f64 = 1e-5;
    pub const TOLERANCE: f64 = 1e-4;
    const KINK_MARGIN: f64 = 1e-3;

    pub struct Instance {
        pub gx: KnowledgeGraph,
        pub gy: KnowledgeGraph,
        pub sx: EmbeddingStore,
        pub sy: EmbeddingStore,
        pub relation_mode: bool,
        pub online: EncoderParams,
        pub target: EncoderParams,
        pub bx: Vec<EntityId>,
        pub by: Vec<EntityId>,
        pub qx: NegativeQueue,
        pub qy: NegativeQueue,
        pub cfg: LossConfig,
        pub sampling: NegativeSampling,
    }

    fn ids(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<EntityId> {
        sample(rng, n, k).into_iter().map(EntityId).collect()
    }

    /// A random encoder + joint-loss instance with batch 2 and one queued
    /// batch per graph, or `None` if it sits near an activation kink.
    pub fn instance(seed: u64) -> Option<Instance> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, batch, k) = (7, 2, 1);
        let gx = random_graph(&mut rng, n, 3, 9);
        let gy = random_graph(&mut rng, n, 3, 9);
        let sx = random_store(&mut rng, &gx, DIM);
        let sy = random_store(&mut rng, &gy, DIM);
        let relation_mode = seed % 3 == 0;
        let online = random_params(&mut rng, DIM);
        let target = random_params(&mut rng, DIM);
        let bx = ids(&mut rng, n, batch);
        let by = ids(&mut rng, n, batch);
        let vx = GraphView::new(&gx, &sx, relation_mode).unwrap();
        let vy = GraphView::new(&gy, &sy, relation_mode).unwrap();
        if min_abs_preactivation(&online, &gx, &sx, relation_mode, &bx) < KINK_MARGIN
            || min_abs_preactivation(&online, &gy, &sy, relation_mode, &by) < KINK_MARGIN
        {
            return None;
        }
        let mut qx = NegativeQueue::new(KgSide::X, k, batch, DIM);
        let mut qy = NegativeQueue::new(KgSide::Y, k, batch, DIM);
        let old_x = ids(&mut rng, n, batch);
        let old_y = ids(&mut rng, n, batch);
        qx.push(encode_batch(&target, &vx, &old_x).ok()?, old_x).unwrap();
        qy.push(encode_batch(&target, &vy, &old_y).ok()?, old_y).unwrap();
        let tau = [0.08, 0.5, 1.0][(seed % 3) as usize];
        let cfg = LossConfig::new(tau, 1 + (seed % 2) as u32).unwrap();
        let sampling = if seed % 4 == 3 {
            NegativeSampling::CrossGraph
        } else {
            NegativeSampling::SelfGraph
        };
        Some(Instance {
            gx,
            gy,
            sx,
            sy,
            relation_mode,
            online,
            target,
            bx,
            by,
            qx,
            qy,
            cfg,
            sampling,
        })
    }

    impl Instance {
        fn views(&self) -> (GraphView<'_>, GraphView<'_>) {
            (
                GraphView::new(&self.gx, &self.sx, self.relation_mode).unwrap(),
                GraphView::new(&self.gy, &self.sy, self.relation_mode).unwrap(),
            )
        }

        pub fn loss(&self, online: &EncoderParams) -> f64 {
            let (vx, vy) = self.views();
            let ox = encode_batch(online, &vx, &self.bx).unwrap();
            let oy = encode_batch(online, &vy, &self.by).unwrap();
            let tx = encode_batch(&self.target, &vx, &self.bx).unwrap();
            let ty = encode_batch(&self.target, &vy, &self.by).unwrap();
            joint_loss(
                &SideBatch { ids: &self.bx, online: &ox, target: &tx },
                &SideBatch { ids: &self.by, online: &oy, target: &ty },
                &self.qx,
                &self.qy,
                &self.cfg,
                self.sampling,
            )
            .unwrap()
        }

        /// Worst per-entry relative error of the analytic gradient against
        /// central differences.
        pub fn max_rel_err(&self) -> f64 {
            let (vx, vy) = self.views();
            let ox = encode_batch(&self.online, &vx, &self.bx).unwrap();
            let oy = encode_batch(&self.online, &vy, &self.by).unwrap();
            let tx = encode_batch(&self.target, &vx, &self.bx).unwrap();
            let ty = encode_batch(&self.target, &vy, &self.by).unwrap();
            let (value, grads) = grad_joint_loss(
                &self.online,
                &vx,
                &vy,
                &SideBatch { ids: &self.bx, online: &ox, target: &tx },
                &SideBatch { ids: &self.by, online: &oy, target: &ty },
                &self.qx,
                &self.qy,
                &self.cfg,
                self.sampling,
            )
            .unwrap();
            assert_eq!(value.to_bits(), self.loss(&self.online).to_bits());
            let numeric = finite_difference(&self.online, STEP, |p| self.loss(p));
            grads
                .tensors()
                .iter()
                .zip(&numeric)
                .flat_map(|(a, n)| a.iter().zip(n).map(|(a, n)| rel_err(*a, *n)))
                .fold(0.0, f64::max)
        }
    }
}
