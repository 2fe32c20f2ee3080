//! Exact ℓ2 nearest-neighbor search and Hit@k.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::encoder::{encode_batch, EncoderParams, GraphView};
use crate::error::{Error, Result};
use crate::kg::EntityId;
use crate::linalg::{squared_l2, Matrix};
use crate::trainer::DevProbe;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    /// Row of the target matrix.
    pub index: usize,
    pub dist2: f64,
}

fn by_distance_then_index(a: &Neighbor, b: &Neighbor) -> Ordering {
    a.dist2.total_cmp(&b.dist2).then(a.index.cmp(&b.index))
}

/// The `k` targets closest to each query, ascending by distance; ties go to
/// the smaller target index.
pub fn knn_l2(queries: &Matrix, targets: &Matrix, k: usize) -> Result<Vec<Vec<Neighbor>>> {
    if queries.cols() != targets.cols() {
        return Err(Error::DimensionMismatch {
            expected: targets.cols(),
            found: queries.cols(),
        });
    }
    if k > targets.rows() {
        return Err(Error::InvalidConfig(format!(
            "k = {k} exceeds the {} available targets",
            targets.rows()
        )));
    }
    Ok((0..queries.rows())
        .into_par_iter()
        .map(|qi| {
            let q = queries.row(qi);
            let mut all: Vec<Neighbor> = targets
                .iter_rows()
                .enumerate()
                .map(|(index, t)| Neighbor {
                    index,
                    dist2: squared_l2(q, t),
                })
                .collect();
            if k == 0 {
                return Vec::new();
            }
            if k < all.len() {
                all.select_nth_unstable_by(k - 1, by_distance_then_index);
                all.truncate(k);
            }
            all.sort_unstable_by(by_distance_then_index);
            all
        })
        .collect())
}

/// Which graph supplies the queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Direction {
    /// Query `G_x` entities against `G_y` candidates.
    #[default]
    XToY,
    YToX,
}

/// The candidate pool searched for each query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Candidates {
    /// Targets of the evaluated pairs only.
    #[default]
    Test,
    /// Every entity of the target graph.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EvalOptions {
    pub direction: Direction,
    pub candidates: Candidates,
}

/// Rank (1-based) of the true target for each `(source, target)` pair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ranking {
    ranks: HashMap<(EntityId, EntityId), usize>,
}

impl Ranking {
    pub fn insert(&mut self, source: EntityId, target: EntityId, rank: usize) {
        self.ranks.insert((source, target), rank);
    }

    pub fn get(&self, source: EntityId, target: EntityId) -> Option<usize> {
        self.ranks.get(&(source, target)).copied()
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }
}

/// Ranks each pair's target among `candidates` by distance from the pair's
/// query vector (row `i` of `queries` belongs to `pairs[i]`). Ties resolve
/// towards the smaller candidate id, as in [`knn_l2`].
pub fn rank_truths(
    pairs: &[(EntityId, EntityId)],
    queries: &Matrix,
    candidate_ids: &[EntityId],
    candidates: &Matrix,
) -> Result<Ranking> {
    if queries.rows() != pairs.len() || candidates.rows() != candidate_ids.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} queries, {} candidates", pairs.len(), candidate_ids.len()),
            found: format!("{} queries, {} candidates", queries.rows(), candidates.rows()),
        });
    }
    if queries.cols() != candidates.cols() {
        return Err(Error::DimensionMismatch {
            expected: candidates.cols(),
            found: queries.cols(),
        });
    }
    let position: HashMap<EntityId, usize> = candidate_ids.iter().enumerate().map(|(i, e)| (*e, i)).collect();
    let ranks: Vec<usize> = pairs
        .par_iter()
        .enumerate()
        .map(|(i, &(_, target))| {
            let ti = *position.get(&target).ok_or_else(|| {
                Error::InvalidConfig(format!("target {} is not among the candidates", target.0))
            })?;
            let q = queries.row(i);
            let truth = Neighbor {
                index: candidate_ids[ti].0,
                dist2: squared_l2(q, candidates.row(ti)),
            };
            let ahead = candidates
                .iter_rows()
                .zip(candidate_ids)
                .filter(|(row, id)| {
                    let n = Neighbor {
                        index: id.0,
                        dist2: squared_l2(q, row),
                    };
                    by_distance_then_index(&n, &truth) == Ordering::Less
                })
                .count();
            Ok(ahead + 1)
        })
        .collect::<Result<_>>()?;
    let mut ranking = Ranking::default();
    for (&(s, t), r) in pairs.iter().zip(ranks) {
        ranking.insert(s, t, r);
    }
    Ok(ranking)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub split: String,
    pub hit1: f64,
    pub hit10: f64,
    /// Rank of the true target, in pair order.
    pub ranks: Vec<usize>,
}

impl EvalReport {
    pub fn n_queries(&self) -> usize {
        self.ranks.len()
    }

    pub fn hit_at(&self, k: usize) -> f64 {
        if self.ranks.is_empty() {
            return 0.0;
        }
        self.ranks.iter().filter(|&&r| r <= k).count() as f64 / self.ranks.len() as f64
    }

    /// `split<TAB>k<TAB>value<TAB>n_queries` rows for k = 1, 10 and any extras.
    pub fn to_tsv(&self, extra_ks: &[usize]) -> String {
        let mut ks = vec![1, 10];
        ks.extend(extra_ks.iter().copied().filter(|k| *k != 1 && *k != 10));
        let mut out = String::from("split\tk\tvalue\tn_queries\n");
        for k in ks {
            writeln!(out, "{}\t{}\t{}\t{}", self.split, k, self.hit_at(k), self.n_queries()).unwrap();
        }
        out
    }

    pub fn write_tsv(&self, path: &Path, extra_ks: &[usize]) -> Result<()> {
        fs::write(path, self.to_tsv(extra_ks)).map_err(|e| Error::io(path, e))
    }
}

/// Hit@1 and Hit@10 over `pairs` given their ranks.
pub fn hit_at_k(pairs: &[(EntityId, EntityId)], ranking: &Ranking, split: &str) -> Result<EvalReport> {
    let ranks: Vec<usize> = pairs
        .iter()
        .map(|&(s, t)| ranking.get(s, t).ok_or(Error::MissingQuery { source_id: s.0 }))
        .collect::<Result<_>>()?;
    let mut report = EvalReport {
        split: split.to_string(),
        hit1: 0.0,
        hit10: 0.0,
        ranks,
    };
    report.hit1 = report.hit_at(1);
    report.hit10 = report.hit_at(10);
    Ok(report)
}

/// Encodes both sides with `params` and scores the `(x, y)` pairs.
pub fn evaluate(
    params: &EncoderParams,
    view_x: &GraphView<'_>,
    view_y: &GraphView<'_>,
    pairs: &[(EntityId, EntityId)],
    opts: EvalOptions,
    split: &str,
) -> Result<EvalReport> {
    let (source, target, oriented): (_, _, Vec<(EntityId, EntityId)>) = match opts.direction {
        Direction::XToY => (view_x, view_y, pairs.to_vec()),
        Direction::YToX => (view_y, view_x, pairs.iter().map(|&(x, y)| (y, x)).collect()),
    };
    let query_ids: Vec<EntityId> = oriented.iter().map(|p| p.0).collect();
    let candidate_ids: Vec<EntityId> = match opts.candidates {
        Candidates::Test => oriented
            .iter()
            .map(|p| p.1)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
        Candidates::Full => target.kg.entity_ids().collect(),
    };
    let queries = encode_batch(params, source, &query_ids)?;
    let cands = encode_batch(params, target, &candidate_ids)?;
    let ranking = rank_truths(&oriented, &queries, &candidate_ids, &cands)?;
    hit_at_k(&oriented, &ranking, split)
}

/// Per-pair rank dump: `source_raw<TAB>target_raw<TAB>rank`.
pub fn rank_dump(
    report: &EvalReport,
    view_x: &GraphView<'_>,
    view_y: &GraphView<'_>,
    pairs: &[(EntityId, EntityId)],
) -> String {
    let mut out = String::from("source\ttarget\trank\n");
    for (&(x, y), r) in pairs.iter().zip(&report.ranks) {
        writeln!(
            out,
            "{}\t{}\t{}",
            view_x.kg.entity_raw_id(x),
            view_y.kg.entity_raw_id(y),
            r
        )
        .unwrap();
    }
    out
}

/// Dev-set probe for early stopping: the only place training sees links.
pub struct LinkProbe<'a> {
    view_x: GraphView<'a>,
    view_y: GraphView<'a>,
    pairs: Vec<(EntityId, EntityId)>,
    opts: EvalOptions,
}

impl<'a> LinkProbe<'a> {
    pub fn new(
        view_x: GraphView<'a>,
        view_y: GraphView<'a>,
        pairs: Vec<(EntityId, EntityId)>,
        opts: EvalOptions,
    ) -> Self {
        Self {
            view_x,
            view_y,
            pairs,
            opts,
        }
    }
}

impl DevProbe for LinkProbe<'_> {
    fn probe(&mut self, online: &EncoderParams) -> Result<(f64, f64)> {
        if self.pairs.is_empty() {
            return Ok((0.0, 0.0));
        }
        let r = evaluate(online, &self.view_x, &self.view_y, &self.pairs, self.opts, "dev")?;
        Ok((r.hit1, r.hit10))
    }
}
