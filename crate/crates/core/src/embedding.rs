//! Unit-norm entity embeddings in a space shared by both graphs.
//!
//! Vectors come either from a TSV file (`dim<TAB>D` header, then
//! `raw_id<TAB>v1<TAB>...<TAB>vD`), from the equivalent binary layout, or from
//! [`fallback_embed`], a hashed character-trigram embedding of the entity name.

use std::fmt::Write as _;
use std::fs;
use std::hash::Hasher;
use std::path::Path;

use twox_hash::XxHash64;

use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, RelationId};
use crate::linalg::{norm, normalize_in_place, Matrix};
use crate::EntityId;

pub const NORM_TOLERANCE: f64 = 1e-6;
const BINARY_MAGIC: &[u8; 8] = b"KGEMB\0\0\x01";

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    vectors: Matrix,
    relations: Option<Matrix>,
}

impl EmbeddingStore {
    /// Wraps one row per entity, normalizing each row.
    pub fn from_matrix(mut vectors: Matrix) -> Result<Self> {
        if vectors.cols() == 0 {
            return Err(Error::InvalidConfig("embedding dimension must be positive".into()));
        }
        for i in 0..vectors.rows() {
            let n = normalize_in_place(vectors.row_mut(i));
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::ZeroVector {
                    raw_id: format!("#{i}"),
                });
            }
        }
        Ok(Self {
            vectors,
            relations: None,
        })
    }

    /// Deterministic name-derived embeddings for every entity of `kg`.
    pub fn fallback(kg: &KnowledgeGraph, dim: usize, seed: u64) -> Result<Self> {
        let rows: Vec<Vec<f64>> = kg
            .entity_ids()
            .map(|e| fallback_embed(kg.entity_name(e), dim, seed))
            .collect();
        Ok(Self {
            vectors: Matrix::from_rows(&rows, dim)?,
            relations: None,
        })
    }

    /// Attaches name-derived relation embeddings, needed by relation mode.
    pub fn with_fallback_relations(mut self, kg: &KnowledgeGraph, seed: u64) -> Self {
        let dim = self.dim();
        let rows: Vec<Vec<f64>> = (0..kg.num_relations())
            .map(|r| fallback_embed(kg.relation_name(RelationId(r)), dim, seed))
            .collect();
        self.relations = Some(Matrix::from_rows(&rows, dim).expect("rows have the store dimension"));
        self
    }

    pub fn with_relations(mut self, relations: Matrix) -> Result<Self> {
        if relations.cols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: relations.cols(),
            });
        }
        self.relations = Some(EmbeddingStore::from_matrix(relations)?.vectors);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.rows() == 0
    }

    pub fn vector(&self, e: EntityId) -> &[f64] {
        self.vectors.row(e.0)
    }

    pub fn relation_vector(&self, r: RelationId) -> Option<&[f64]> {
        self.relations.as_ref().map(|m| m.row(r.0))
    }

    pub fn has_relations(&self) -> bool {
        self.relations.is_some()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.as_ref().map_or(0, Matrix::rows)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.vectors
    }
}

/// Hashed character-trigram embedding of an (already normalized) name.
///
/// The lowercased name is wrapped in `^`/`$` sentinels, its trigrams are
/// sorted, and each trigram adds `±1` to a bucket picked by a seeded
/// XxHash64. The sum is scaled to unit norm. Should every bucket cancel, the
/// trigrams are re-hashed with the next seed.
///
/// # Panics
/// If `dim < 8`.
pub fn fallback_embed(name: &str, dim: usize, seed: u64) -> Vec<f64> {
    assert!(dim >= 8, "fallback embedding needs dim >= 8, got {dim}");
    let chars: Vec<char> = std::iter::once('^')
        .chain(name.to_lowercase().chars())
        .chain(std::iter::once('$'))
        .collect();
    let mut grams: Vec<String> = chars.windows(3).map(|w| w.iter().collect()).collect();
    if grams.is_empty() {
        grams.push(chars.iter().collect());
    }
    grams.sort_unstable();

    let mut round = 0u64;
    loop {
        let mut v = vec![0.0; dim];
        for g in &grams {
            let mut h = XxHash64::with_seed(seed.wrapping_add(round));
            h.write(g.as_bytes());
            let h = h.finish();
            let bucket = (h % dim as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
        }
        if normalize_in_place(&mut v) > 0.0 {
            return v;
        }
        round += 1;
    }
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Loads a TSV embedding file and normalizes every vector. Rows for raw ids
/// unknown to `kg` are ignored; every entity of `kg` must be covered.
pub fn load_embeddings(path: &Path, kg: &KnowledgeGraph) -> Result<EmbeddingStore> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty());
    let (hl, header) = lines
        .next()
        .ok_or_else(|| parse_error(path, 1, "missing `dim<TAB>D` header"))?;
    let dim: usize = match header.split_once('\t') {
        Some(("dim", d)) => d
            .trim()
            .parse()
            .map_err(|_| parse_error(path, hl, format!("bad dimension `{d}`")))?,
        _ => return Err(parse_error(path, hl, "missing `dim<TAB>D` header")),
    };
    if dim == 0 {
        return Err(parse_error(path, hl, "dimension must be positive"));
    }
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; kg.num_entities()];
    for (line_no, line) in lines {
        let mut fields = line.split('\t');
        let raw_id = fields.next().unwrap_or_default();
        let values: Vec<f64> = fields
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| parse_error(path, line_no, format!("bad float `{f}`")))
            })
            .collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: values.len(),
            });
        }
        let Some(e) = kg.entity_by_raw(raw_id) else {
            continue;
        };
        if rows[e.0].is_some() {
            return Err(parse_error(path, line_no, format!("duplicate row for `{raw_id}`")));
        }
        rows[e.0] = Some(values);
    }
    assemble(rows, kg, dim)
}

fn assemble(rows: Vec<Option<Vec<f64>>>, kg: &KnowledgeGraph, dim: usize) -> Result<EmbeddingStore> {
    let mut data = Vec::with_capacity(rows.len() * dim);
    for (i, row) in rows.into_iter().enumerate() {
        let raw_id = kg.entity_raw_id(EntityId(i));
        let mut v = row.ok_or_else(|| Error::MissingEntity {
            raw_id: raw_id.to_string(),
        })?;
        let n = normalize_in_place(&mut v);
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::ZeroVector {
                raw_id: raw_id.to_string(),
            });
        }
        data.extend_from_slice(&v);
    }
    Ok(EmbeddingStore {
        vectors: Matrix::from_vec(kg.num_entities(), dim, data)?,
        relations: None,
    })
}

/// Writes vectors keyed by raw id. Floats use the shortest representation
/// that parses back to the same bits.
pub fn write_embeddings_tsv(path: &Path, kg: &KnowledgeGraph, vectors: &Matrix) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "dim\t{}", vectors.cols()).unwrap();
    for e in kg.entity_ids() {
        out.push_str(kg.entity_raw_id(e));
        for v in vectors.row(e.0) {
            write!(out, "\t{v}").unwrap();
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Binary layout: 8-byte magic, `dim: u64`, `count: u64`, then per row a
/// `u32` id length, the UTF-8 id and `dim` little-endian `f64`s.
pub fn write_embeddings_binary(path: &Path, kg: &KnowledgeGraph, vectors: &Matrix) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&(vectors.cols() as u64).to_le_bytes());
    out.extend_from_slice(&(kg.num_entities() as u64).to_le_bytes());
    for e in kg.entity_ids() {
        let id = kg.entity_raw_id(e).as_bytes();
        out.extend_from_slice(&(id.len() as u32).to_le_bytes());
        out.extend_from_slice(id);
        for v in vectors.row(e.0) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_embeddings_binary(path: &Path, kg: &KnowledgeGraph) -> Result<EmbeddingStore> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| parse_error(path, 0, m.to_string());
    let mut cur = bytes.as_slice();
    let mut take = |n: usize| -> Result<&[u8]> {
        if cur.len() < n {
            return Err(bad("truncated binary embedding file"));
        }
        let (head, tail) = cur.split_at(n);
        cur = tail;
        Ok(head)
    };
    if take(8)? != BINARY_MAGIC {
        return Err(bad("not a binary embedding file"));
    }
    let dim = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    if dim == 0 {
        return Err(bad("dimension must be positive"));
    }
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; kg.num_entities()];
    for _ in 0..count {
        let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let id = std::str::from_utf8(take(len)?).map_err(|_| bad("raw id is not UTF-8"))?;
        let id = id.to_string();
        let mut v = Vec::with_capacity(dim);
        for _ in 0..dim {
            v.push(f64::from_le_bytes(take(8)?.try_into().unwrap()));
        }
        if let Some(e) = kg.entity_by_raw(&id) {
            rows[e.0] = Some(v);
        }
    }
    assemble(rows, kg, dim)
}

pub fn max_norm_deviation(m: &Matrix) -> f64 {
    m.iter_rows().map(|r| (norm(r) - 1.0).abs()).fold(0.0, f64::max)
}
