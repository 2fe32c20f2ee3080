//! Label-free training loop: independent batches from each graph, per-graph
//! negative queues, an Adam step on the online encoder and a momentum step on
//! the target encoder.
//!
//! The loop never sees alignment links. Early stopping reads dev scores
//! through [`DevProbe`], which receives only the online parameters.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::binio::{ByteReader, ByteWriter};
use crate::encoder::{encode_batch, EncoderPair, EncoderParams, GraphView};
use crate::error::{Error, Result};
use crate::kg::{EntityId, KgSide};
use crate::linalg::Matrix;
use crate::loss::{grad_joint_loss, LossConfig, NegativeSampling, SideBatch};
use crate::optim::{Adam, AdamConfig};
use crate::queue::{validate_capacity, NegativeQueue, QueueEntry};

const STATE_MAGIC: &[u8; 4] = b"KGTS";
const STATE_VERSION: u32 = 1;
const INIT_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub queue_k: usize,
    pub tau: f64,
    pub momentum: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Dev evaluations without improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub relation_mode: bool,
    pub self_negatives: bool,
    pub lambda: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            queue_k: 64,
            tau: 0.08,
            momentum: 0.9999,
            learning_rate: 1e-6,
            max_epochs: 50,
            patience: 5,
            seed: 0,
            relation_mode: false,
            self_negatives: true,
            lambda: 1,
        }
    }
}

impl TrainConfig {
    /// Every problem with this config for graphs of the given sizes.
    pub fn problems(&self, ex: usize, ey: usize) -> Vec<Error> {
        let mut out = Vec::new();
        if let Err(e) = validate_capacity(self.queue_k, self.batch_size, ex, ey) {
            out.push(e);
        }
        if !(0.0..1.0).contains(&self.momentum) {
            out.push(Error::InvalidConfig(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if let Err(e) = self.loss_config().validate() {
            out.push(e);
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            out.push(Error::InvalidConfig(format!(
                "learning rate {} must be finite and nonnegative",
                self.learning_rate
            )));
        }
        out
    }

    pub fn validate(&self, ex: usize, ey: usize) -> Result<()> {
        match self.problems(ex, ey).into_iter().next() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            tau: self.tau,
            lambda: self.lambda,
        }
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            ..AdamConfig::default()
        }
    }

    pub fn sampling(&self) -> NegativeSampling {
        if self.self_negatives {
            NegativeSampling::SelfGraph
        } else {
            NegativeSampling::CrossGraph
        }
    }

    /// `min(⌊|E_x|/N⌋, ⌊|E_y|/N⌋)`; trailing partial batches are dropped.
    pub fn steps_per_epoch(&self, ex: usize, ey: usize) -> usize {
        (ex / self.batch_size).min(ey / self.batch_size)
    }
}

/// Scores the online encoder on held-out links: `(hit1, hit10)`.
pub trait DevProbe {
    fn probe(&mut self, online: &EncoderParams) -> Result<(f64, f64)>;
}

/// Probe for runs without a dev split; always reports zero.
pub struct NoDev;

impl DevProbe for NoDev {
    fn probe(&mut self, _online: &EncoderParams) -> Result<(f64, f64)> {
        Ok((0.0, 0.0))
    }
}

/// One line of the metrics log, written after each dev evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: u64,
    /// Mean joint loss over the epoch's optimizer steps; NaN if there were none.
    pub loss: f64,
    pub dev_hit1: f64,
    pub dev_hit10: f64,
    pub wall_ms: u64,
}

impl MetricRow {
    pub const HEADER: &'static str = "epoch\tstep\tloss\tdev_hit1\tdev_hit10\twall_ms";

    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.epoch, self.step, self.loss, self.dev_hit1, self.dev_hit10, self.wall_ms
        )
    }

    /// Equal in everything but wall-clock time, bit for bit.
    pub fn same_run(&self, other: &Self) -> bool {
        self.epoch == other.epoch
            && self.step == other.step
            && self.loss.to_bits() == other.loss.to_bits()
            && self.dev_hit1.to_bits() == other.dev_hit1.to_bits()
            && self.dev_hit10.to_bits() == other.dev_hit10.to_bits()
    }
}

pub fn metrics_tsv(rows: &[MetricRow]) -> String {
    let mut out = String::from(MetricRow::HEADER);
    out.push('\n');
    for r in rows {
        writeln!(out, "{}", r.to_tsv()).unwrap();
    }
    out
}

/// Everything needed to resume training bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub pair: EncoderPair,
    pub adam: Adam,
    pub queue_x: NegativeQueue,
    pub queue_y: NegativeQueue,
    /// Shuffles are a pure function of `(seed, epoch)`.
    pub seed: u64,
    pub epoch: usize,
    pub step_in_epoch: usize,
    pub optimizer_steps: u64,
    pub batches_seen: u64,
    epoch_loss_sum: f64,
    epoch_loss_count: u64,
    pub dev_evals: u64,
    pub best_dev_hit1: f64,
    pub best_online: Option<EncoderParams>,
    pub evals_since_best: usize,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig, dim: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(INIT_STREAM);
        let online = EncoderParams::init(dim, &mut rng);
        Ok(Self {
            pair: EncoderPair::new(online, cfg.momentum)?,
            adam: Adam::new(dim, cfg.adam_config()),
            queue_x: NegativeQueue::new(KgSide::X, cfg.queue_k, cfg.batch_size, dim),
            queue_y: NegativeQueue::new(KgSide::Y, cfg.queue_k, cfg.batch_size, dim),
            seed: cfg.seed,
            epoch: 0,
            step_in_epoch: 0,
            optimizer_steps: 0,
            batches_seen: 0,
            epoch_loss_sum: 0.0,
            epoch_loss_count: 0,
            dev_evals: 0,
            best_dev_hit1: f64::NEG_INFINITY,
            best_online: None,
            evals_since_best: 0,
        })
    }

    /// Parameters to keep after training: the best dev checkpoint if any.
    pub fn best_params(&self) -> &EncoderParams {
        self.best_online.as_ref().unwrap_or(&self.pair.online)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(STATE_MAGIC);
        w.u32(STATE_VERSION);
        self.pair.online.write_into(&mut w);
        self.pair.target.write_into(&mut w);
        w.f64(self.pair.momentum());
        let a = &self.adam;
        w.f64s(&[a.config.lr, a.config.beta1, a.config.beta2, a.config.eps]);
        w.u64(a.t);
        for t in a.m.tensors().into_iter().chain(a.v.tensors()) {
            w.f64s(t);
        }
        for q in [&self.queue_x, &self.queue_y] {
            write_queue(&mut w, q);
        }
        w.u64(self.seed);
        w.usize(self.epoch);
        w.usize(self.step_in_epoch);
        w.u64(self.optimizer_steps);
        w.u64(self.batches_seen);
        w.f64(self.epoch_loss_sum);
        w.u64(self.epoch_loss_count);
        w.u64(self.dev_evals);
        w.f64(self.best_dev_hit1);
        w.bool(self.best_online.is_some());
        if let Some(p) = &self.best_online {
            p.write_into(&mut w);
        }
        w.usize(self.evals_since_best);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != STATE_MAGIC {
            return Err(Error::Checkpoint("not a training checkpoint".into()));
        }
        let version = r.u32()?;
        if version != STATE_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let online = EncoderParams::read_from(&mut r)?;
        let target = EncoderParams::read_from(&mut r)?;
        let pair = EncoderPair::from_parts(online, target, r.f64()?)?;
        let dim = pair.online.dim();
        let c = r.f64s(4)?;
        let mut adam = Adam::new(
            dim,
            AdamConfig {
                lr: c[0],
                beta1: c[1],
                beta2: c[2],
                eps: c[3],
            },
        );
        adam.t = r.u64()?;
        for t in adam.m.tensors_mut().into_iter().chain(adam.v.tensors_mut()) {
            let n = t.len();
            t.copy_from_slice(&r.f64s(n)?);
        }
        let queue_x = read_queue(&mut r, KgSide::X)?;
        let queue_y = read_queue(&mut r, KgSide::Y)?;
        let state = Self {
            pair,
            adam,
            queue_x,
            queue_y,
            seed: r.u64()?,
            epoch: r.usize()?,
            step_in_epoch: r.usize()?,
            optimizer_steps: r.u64()?,
            batches_seen: r.u64()?,
            epoch_loss_sum: r.f64()?,
            epoch_loss_count: r.u64()?,
            dev_evals: r.u64()?,
            best_dev_hit1: r.f64()?,
            best_online: if r.bool()? {
                Some(EncoderParams::read_from(&mut r)?)
            } else {
                None
            },
            evals_since_best: r.usize()?,
        };
        r.finish()?;
        Ok(state)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

fn write_queue(w: &mut ByteWriter, q: &NegativeQueue) {
    w.usize(q.capacity());
    w.usize(q.batch_size());
    w.usize(q.dim());
    w.usize(q.len());
    for e in q.entries() {
        for id in &e.ids {
            w.usize(id.0);
        }
        w.f64s(e.vectors.as_slice());
    }
}

fn read_queue(r: &mut ByteReader<'_>, side: KgSide) -> Result<NegativeQueue> {
    let capacity = r.usize()?;
    let batch = r.usize()?;
    let dim = r.usize()?;
    let len = r.usize()?;
    if len > capacity {
        return Err(Error::Checkpoint(format!("queue holds {len} > {capacity} batches")));
    }
    let mut entries = Vec::with_capacity(len);
    for _ in 0..len {
        let ids = (0..batch).map(|_| r.usize().map(EntityId)).collect::<Result<_>>()?;
        let vectors = Matrix::from_vec(batch, dim, r.f64s(batch * dim)?)?;
        entries.push(QueueEntry { ids, vectors });
    }
    NegativeQueue::from_entries(side, capacity, batch, dim, entries)
}

/// Deterministic shuffle of one graph's entities for one epoch.
pub fn epoch_order(seed: u64, epoch: usize, side: KgSide, n: usize) -> Vec<EntityId> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side_ix = match side {
        KgSide::X => 0,
        KgSide::Y => 1,
    };
    rng.set_stream(2 * epoch as u64 + side_ix);
    let mut ids: Vec<EntityId> = (0..n).map(EntityId).collect();
    ids.shuffle(&mut rng);
    ids
}

pub struct Trainer<'a> {
    cfg: TrainConfig,
    view_x: GraphView<'a>,
    view_y: GraphView<'a>,
    state: TrainState,
    order: Option<(usize, Vec<EntityId>, Vec<EntityId>)>,
}

impl<'a> Trainer<'a> {
    /// Fails with `CapacityViolation` before any work if `(1+K)·N` is too large.
    pub fn new(cfg: TrainConfig, view_x: GraphView<'a>, view_y: GraphView<'a>) -> Result<Self> {
        let state = TrainState::new(&cfg, view_x.dim())?;
        Self::resume(cfg, view_x, view_y, state)
    }

    pub fn resume(cfg: TrainConfig, view_x: GraphView<'a>, view_y: GraphView<'a>, state: TrainState) -> Result<Self> {
        cfg.validate(view_x.kg.num_entities(), view_y.kg.num_entities())?;
        if view_x.dim() != view_y.dim() || state.pair.online.dim() != view_x.dim() {
            return Err(Error::DimensionMismatch {
                expected: view_x.dim(),
                found: if view_x.dim() != view_y.dim() {
                    view_y.dim()
                } else {
                    state.pair.online.dim()
                },
            });
        }
        if view_x.relation_mode != cfg.relation_mode || view_y.relation_mode != cfg.relation_mode {
            return Err(Error::InvalidConfig("graph views disagree with relation_mode".into()));
        }
        if state.queue_x.capacity() != cfg.queue_k || state.queue_x.batch_size() != cfg.batch_size {
            return Err(Error::Checkpoint("checkpoint queue shape differs from config".into()));
        }
        Ok(Self {
            cfg,
            view_x,
            view_y,
            state,
            order: None,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.cfg
            .steps_per_epoch(self.view_x.kg.num_entities(), self.view_y.kg.num_entities())
    }

    /// Runs one batch pair. Returns the joint loss if an optimizer step was
    /// taken, `None` while either queue is still warming up.
    pub fn step_on(&mut self, batch_x: &[EntityId], batch_y: &[EntityId]) -> Result<Option<f64>> {
        let s = &mut self.state;
        let target_x = encode_batch(&s.pair.target, &self.view_x, batch_x)?;
        let target_y = encode_batch(&s.pair.target, &self.view_y, batch_y)?;
        let loss = if s.queue_x.is_warm() && s.queue_y.is_warm() {
            let online_x = encode_batch(&s.pair.online, &self.view_x, batch_x)?;
            let online_y = encode_batch(&s.pair.online, &self.view_y, batch_y)?;
            let (value, grads) = grad_joint_loss(
                &s.pair.online,
                &self.view_x,
                &self.view_y,
                &SideBatch {
                    ids: batch_x,
                    online: &online_x,
                    target: &target_x,
                },
                &SideBatch {
                    ids: batch_y,
                    online: &online_y,
                    target: &target_y,
                },
                &s.queue_x,
                &s.queue_y,
                &self.cfg.loss_config(),
                self.cfg.sampling(),
            )?;
            s.adam.step(&mut s.pair.online, &grads);
            s.pair.momentum_update();
            s.optimizer_steps += 1;
            Some(value)
        } else {
            None
        };
        s.queue_x.push(target_x, batch_x.to_vec())?;
        s.queue_y.push(target_y, batch_y.to_vec())?;
        s.batches_seen += 1;
        Ok(loss)
    }

    /// Advances by one step of the current epoch's schedule. Returns `true`
    /// when that step finished the epoch.
    pub fn step(&mut self) -> Result<bool> {
        let spe = self.steps_per_epoch();
        let epoch = self.state.epoch;
        if self.order.as_ref().map(|o| o.0) != Some(epoch) {
            let seed = self.state.seed;
            self.order = Some((
                epoch,
                epoch_order(seed, epoch, KgSide::X, self.view_x.kg.num_entities()),
                epoch_order(seed, epoch, KgSide::Y, self.view_y.kg.num_entities()),
            ));
        }
        let n = self.cfg.batch_size;
        let i = self.state.step_in_epoch;
        let (_, ox, oy) = self.order.take().expect("order set above");
        let result = self.step_on(&ox[i * n..(i + 1) * n], &oy[i * n..(i + 1) * n]);
        self.order = Some((epoch, ox, oy));
        if let Some(l) = result? {
            self.state.epoch_loss_sum += l;
            self.state.epoch_loss_count += 1;
        }
        self.state.step_in_epoch += 1;
        if self.state.step_in_epoch >= spe {
            self.state.step_in_epoch = 0;
            self.state.epoch += 1;
            return Ok(true);
        }
        Ok(false)
    }

    /// Finishes the current epoch and returns its mean loss (NaN if no
    /// optimizer step happened).
    pub fn run_epoch(&mut self) -> Result<f64> {
        if self.steps_per_epoch() > 0 {
            while !self.step()? {}
        } else {
            self.state.epoch += 1;
        }
        let s = &mut self.state;
        let mean = if s.epoch_loss_count == 0 {
            f64::NAN
        } else {
            s.epoch_loss_sum / s.epoch_loss_count as f64
        };
        s.epoch_loss_sum = 0.0;
        s.epoch_loss_count = 0;
        Ok(mean)
    }

    fn evaluate_dev(&mut self, probe: &mut dyn DevProbe, loss: f64, started: Instant) -> Result<MetricRow> {
        let (hit1, hit10) = probe.probe(&self.state.pair.online)?;
        let s = &mut self.state;
        s.dev_evals += 1;
        if hit1 > s.best_dev_hit1 {
            s.best_dev_hit1 = hit1;
            s.best_online = Some(s.pair.online.clone());
            s.evals_since_best = 0;
        } else {
            s.evals_since_best += 1;
        }
        Ok(MetricRow {
            epoch: s.epoch,
            step: s.optimizer_steps,
            loss,
            dev_hit1: hit1,
            dev_hit10: hit10,
            wall_ms: started.elapsed().as_millis() as u64,
        })
    }

    /// Trains until `max_epochs` or until `patience` dev evaluations pass
    /// without a new best. Dev is scored before the first epoch and after
    /// each one; every row is handed to `sink` as it is produced.
    pub fn train(
        &mut self,
        probe: &mut dyn DevProbe,
        sink: &mut dyn FnMut(&MetricRow) -> Result<()>,
    ) -> Result<Vec<MetricRow>> {
        let started = Instant::now();
        let mut rows = Vec::new();
        if self.state.dev_evals == 0 {
            let row = self.evaluate_dev(probe, f64::NAN, started)?;
            sink(&row)?;
            rows.push(row);
        }
        while self.state.epoch < self.cfg.max_epochs && self.state.evals_since_best < self.cfg.patience {
            let loss = self.run_epoch()?;
            if !self.state.pair.online.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "parameters diverged in epoch {}",
                    self.state.epoch
                )));
            }
            let row = self.evaluate_dev(probe, loss, started)?;
            sink(&row)?;
            rows.push(row);
        }
        Ok(rows)
    }
}

/// Convenience wrapper: fresh state, full run.
pub fn train(
    cfg: TrainConfig,
    view_x: GraphView<'_>,
    view_y: GraphView<'_>,
    probe: &mut dyn DevProbe,
) -> Result<(TrainState, Vec<MetricRow>)> {
    let mut t = Trainer::new(cfg, view_x, view_y)?;
    let rows = t.train(probe, &mut |_| Ok(()))?;
    Ok((t.into_state(), rows))
}
