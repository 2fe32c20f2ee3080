//! Knowledge graphs, alignment links and their TSV ingestion.
//!
//! Raw identifiers are opaque strings; they are remapped to dense
//! [`EntityId`]s in order of first appearance in the names file. Relations
//! get dense [`RelationId`]s in order of first appearance in the triples file.
//! Neighborhoods are the undirected one-hop closure of the triples.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationId(pub usize);

impl EntityId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which of the two graphs being aligned a value belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KgSide {
    X,
    Y,
}

impl KgSide {
    pub fn other(self) -> Self {
        match self {
            KgSide::X => KgSide::Y,
            KgSide::Y => KgSide::X,
        }
    }
}

impl fmt::Display for KgSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KgSide::X => "G_x",
            KgSide::Y => "G_y",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

/// Prefixes stripped from raw names when no custom list is given.
pub const DEFAULT_URL_PREFIXES: &[&str] = &[
    "http://dbpedia.org/resource/",
    "https://dbpedia.org/resource/",
    "http://zh.dbpedia.org/resource/",
    "http://ja.dbpedia.org/resource/",
    "http://fr.dbpedia.org/resource/",
    "http://www.wikidata.org/entity/",
    "http://yago-knowledge.org/resource/",
];

/// Strips URL prefixes and turns underscore-joined names into plain text.
#[derive(Debug, Clone)]
pub struct NameNormalizer {
    prefixes: Vec<String>,
}

impl Default for NameNormalizer {
    fn default() -> Self {
        Self::new(DEFAULT_URL_PREFIXES.iter().map(|s| s.to_string()))
    }
}

impl NameNormalizer {
    pub fn new(prefixes: impl IntoIterator<Item = String>) -> Self {
        let mut prefixes: Vec<String> = prefixes.into_iter().filter(|p| !p.is_empty()).collect();
        // longest first so the most specific prefix wins
        prefixes.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        prefixes.dedup();
        Self { prefixes }
    }

    pub fn prefixes(&self) -> &[String] {
        &self.prefixes
    }

    pub fn normalize(&self, raw: &str) -> Result<String> {
        // Iterate to a fixpoint so the result is idempotent even for inputs
        // like repeated or whitespace-padded prefixes. Every changing pass
        // after the first strictly shortens the string.
        let mut cur = raw.to_string();
        loop {
            let next = self.normalize_once(&cur);
            if next == cur {
                break;
            }
            cur = next;
        }
        if cur.is_empty() {
            return Err(Error::EmptyName {
                raw: raw.to_string(),
            });
        }
        Ok(cur)
    }

    fn normalize_once(&self, s: &str) -> String {
        let mut s = s.trim();
        if let Some(p) = self.prefixes.iter().find(|p| s.starts_with(p.as_str())) {
            s = &s[p.len()..];
        }
        let mut out = String::with_capacity(s.len());
        let mut in_run = false;
        for ch in s.chars() {
            if ch == '_' {
                if !in_run {
                    out.push(' ');
                }
                in_run = true;
            } else {
                out.push(ch);
                in_run = false;
            }
        }
        out.trim().to_string()
    }
}

/// Normalizes with the default prefix list.
pub fn normalize_name(raw: &str) -> Result<String> {
    NameNormalizer::default().normalize(raw)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    entity_raw_ids: Vec<String>,
    entity_names: Vec<String>,
    relation_raw_ids: Vec<String>,
    relation_names: Vec<String>,
    triples: Vec<Triple>,
    neighbors: Vec<Vec<(EntityId, RelationId)>>,
    raw_to_entity: HashMap<String, EntityId>,
}

impl KnowledgeGraph {
    /// Builds a graph from already-indexed parts. Triples must reference
    /// entities in `0..entity_names.len()` and relations in
    /// `0..relation_names.len()`.
    pub fn from_parts(
        entity_raw_ids: Vec<String>,
        entity_names: Vec<String>,
        relation_raw_ids: Vec<String>,
        relation_names: Vec<String>,
        triples: Vec<Triple>,
    ) -> Result<Self> {
        if entity_raw_ids.len() != entity_names.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} entity names", entity_raw_ids.len()),
                found: entity_names.len().to_string(),
            });
        }
        if relation_raw_ids.len() != relation_names.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} relation names", relation_raw_ids.len()),
                found: relation_names.len().to_string(),
            });
        }
        let n = entity_raw_ids.len();
        let mut raw_to_entity = HashMap::with_capacity(n);
        for (i, raw) in entity_raw_ids.iter().enumerate() {
            if raw_to_entity.insert(raw.clone(), EntityId(i)).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate entity id `{raw}`")));
            }
        }
        for t in &triples {
            if t.head.0 >= n || t.tail.0 >= n || t.relation.0 >= relation_raw_ids.len() {
                return Err(Error::InvalidConfig(format!(
                    "triple {t:?} references an unknown entity or relation"
                )));
            }
        }
        let neighbors = build_neighbors(n, &triples);
        Ok(Self {
            entity_raw_ids,
            entity_names,
            relation_raw_ids,
            relation_names,
            triples,
            neighbors,
            raw_to_entity,
        })
    }

    pub fn num_entities(&self) -> usize {
        self.entity_raw_ids.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relation_raw_ids.len()
    }

    pub fn entity_ids(&self) -> impl ExactSizeIterator<Item = EntityId> {
        (0..self.num_entities()).map(EntityId)
    }

    pub fn entity_name(&self, e: EntityId) -> &str {
        &self.entity_names[e.0]
    }

    pub fn entity_raw_id(&self, e: EntityId) -> &str {
        &self.entity_raw_ids[e.0]
    }

    pub fn relation_name(&self, r: RelationId) -> &str {
        &self.relation_names[r.0]
    }

    pub fn relation_raw_id(&self, r: RelationId) -> &str {
        &self.relation_raw_ids[r.0]
    }

    pub fn entity_by_raw(&self, raw: &str) -> Option<EntityId> {
        self.raw_to_entity.get(raw).copied()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    /// One-hop neighbors sorted by `(neighbor, relation)`.
    pub fn neighbors(&self, e: EntityId) -> &[(EntityId, RelationId)] {
        &self.neighbors[e.0]
    }

    /// Distinct neighbor entities, ascending.
    pub fn neighbor_entities(&self, e: EntityId) -> Vec<EntityId> {
        let mut v: Vec<EntityId> = self.neighbors[e.0].iter().map(|(n, _)| *n).collect();
        v.dedup();
        v
    }
}

fn build_neighbors(n: usize, triples: &[Triple]) -> Vec<Vec<(EntityId, RelationId)>> {
    let mut neighbors = vec![Vec::new(); n];
    for t in triples {
        if t.head == t.tail {
            continue;
        }
        neighbors[t.head.0].push((t.tail, t.relation));
        neighbors[t.tail.0].push((t.head, t.relation));
    }
    for list in &mut neighbors {
        list.sort_unstable();
        list.dedup();
    }
    neighbors
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Non-empty lines with their 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

pub fn load_kg(triples_path: &Path, names_path: &Path) -> Result<KnowledgeGraph> {
    load_kg_with(triples_path, names_path, &NameNormalizer::default())
}

pub fn load_kg_with(
    triples_path: &Path,
    names_path: &Path,
    normalizer: &NameNormalizer,
) -> Result<KnowledgeGraph> {
    let names_text = read_text(names_path)?;
    let mut entity_raw_ids = Vec::new();
    let mut entity_names = Vec::new();
    let mut seen = HashMap::new();
    for (line_no, line) in data_lines(&names_text) {
        let (raw_id, raw_name) = line
            .split_once('\t')
            .ok_or_else(|| parse_error(names_path, line_no, "expected raw_id<TAB>raw_name"))?;
        if raw_id.is_empty() {
            return Err(parse_error(names_path, line_no, "empty raw id"));
        }
        if seen.insert(raw_id.to_string(), line_no).is_some() {
            return Err(parse_error(
                names_path,
                line_no,
                format!("duplicate raw id `{raw_id}`"),
            ));
        }
        let name = normalizer
            .normalize(raw_name)
            .map_err(|e| parse_error(names_path, line_no, e.to_string()))?;
        entity_raw_ids.push(raw_id.to_string());
        entity_names.push(name);
    }
    let lookup: HashMap<&str, EntityId> = entity_raw_ids
        .iter()
        .enumerate()
        .map(|(i, r)| (r.as_str(), EntityId(i)))
        .collect();

    let triples_text = read_text(triples_path)?;
    let mut relation_raw_ids: Vec<String> = Vec::new();
    let mut relation_lookup: HashMap<String, RelationId> = HashMap::new();
    let mut triples = Vec::new();
    for (line_no, line) in data_lines(&triples_text) {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(parse_error(
                triples_path,
                line_no,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        let resolve = |raw: &str| {
            lookup
                .get(raw)
                .copied()
                .ok_or_else(|| Error::DanglingReference {
                    path: triples_path.to_path_buf(),
                    line: line_no,
                    raw_id: raw.to_string(),
                })
        };
        let head = resolve(fields[0])?;
        let tail = resolve(fields[2])?;
        let relation = match relation_lookup.get(fields[1]) {
            Some(r) => *r,
            None => {
                let r = RelationId(relation_raw_ids.len());
                relation_raw_ids.push(fields[1].to_string());
                relation_lookup.insert(fields[1].to_string(), r);
                r
            }
        };
        triples.push(Triple {
            head,
            relation,
            tail,
        });
    }
    let relation_names = relation_raw_ids
        .iter()
        .map(|raw| normalizer.normalize(raw).unwrap_or_else(|_| raw.clone()))
        .collect();
    KnowledgeGraph::from_parts(
        entity_raw_ids,
        entity_names,
        relation_raw_ids,
        relation_names,
        triples,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AlignmentLink {
    pub x: EntityId,
    pub y: EntityId,
    pub split: Split,
}

/// Ground-truth alignment. Only evaluation code reads it; nothing on the
/// training path takes this type.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentLinkSet {
    links: Vec<AlignmentLink>,
}

pub const DEV_FRACTION: f64 = 0.05;
pub const DEFAULT_DEV_SEED: u64 = 42;

impl AlignmentLinkSet {
    /// Carves `round(dev_fraction * |train|)` dev pairs out of the original
    /// train pairs with a seeded shuffle.
    pub fn from_splits(
        train: Vec<(EntityId, EntityId)>,
        test: Vec<(EntityId, EntityId)>,
        dev_fraction: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&dev_fraction) {
            return Err(Error::InvalidConfig(format!(
                "dev fraction {dev_fraction} outside [0, 1]"
            )));
        }
        let mut seen = HashSet::new();
        for p in train.iter().chain(&test) {
            if !seen.insert(*p) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate alignment pair ({}, {})",
                    p.0 .0, p.1 .0
                )));
            }
        }
        let dev_count = (dev_fraction * train.len() as f64).round() as usize;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut is_dev = vec![false; train.len()];
        for &i in &order[..dev_count] {
            is_dev[i] = true;
        }
        let mut links: Vec<AlignmentLink> = train
            .iter()
            .zip(&is_dev)
            .map(|(&(x, y), &dev)| AlignmentLink {
                x,
                y,
                split: if dev { Split::Dev } else { Split::Train },
            })
            .collect();
        links.extend(test.into_iter().map(|(x, y)| AlignmentLink {
            x,
            y,
            split: Split::Test,
        }));
        Ok(Self { links })
    }

    pub fn links(&self) -> &[AlignmentLink] {
        &self.links
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn pairs(&self, split: Split) -> Vec<(EntityId, EntityId)> {
        self.links
            .iter()
            .filter(|l| l.split == split)
            .map(|l| (l.x, l.y))
            .collect()
    }

    pub fn all_pairs(&self) -> Vec<(EntityId, EntityId)> {
        self.links.iter().map(|l| (l.x, l.y)).collect()
    }
}

/// Reads `raw_id_x<TAB>raw_id_y` pairs, resolved against both graphs.
pub fn load_links(
    path: &Path,
    gx: &KnowledgeGraph,
    gy: &KnowledgeGraph,
) -> Result<Vec<(EntityId, EntityId)>> {
    let text = read_text(path)?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line_no, line) in data_lines(&text) {
        let (rx, ry) = line
            .split_once('\t')
            .ok_or_else(|| parse_error(path, line_no, "expected raw_id_x<TAB>raw_id_y"))?;
        let dangling = |raw: &str| Error::DanglingReference {
            path: path.to_path_buf(),
            line: line_no,
            raw_id: raw.to_string(),
        };
        let x = gx.entity_by_raw(rx).ok_or_else(|| dangling(rx))?;
        let y = gy.entity_by_raw(ry).ok_or_else(|| dangling(ry))?;
        if !seen.insert((x, y)) {
            return Err(parse_error(path, line_no, "duplicate alignment pair"));
        }
        out.push((x, y));
    }
    Ok(out)
}

/// Mean, over aligned pairs `(x, y)`, of the fraction of `x`'s distinct
/// neighbors that are aligned to some neighbor of `y`. The denominator is
/// `max(1, |N(x)|)`.
pub fn neighbor_similarity(
    gx: &KnowledgeGraph,
    gy: &KnowledgeGraph,
    links: &AlignmentLinkSet,
) -> Result<f64> {
    neighbor_similarity_of_pairs(gx, gy, &links.all_pairs())
}

pub fn neighbor_similarity_of_pairs(
    gx: &KnowledgeGraph,
    gy: &KnowledgeGraph,
    pairs: &[(EntityId, EntityId)],
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidConfig(
            "neighbor similarity needs at least one aligned pair".into(),
        ));
    }
    let mut partners: HashMap<EntityId, Vec<EntityId>> = HashMap::new();
    for &(x, y) in pairs {
        partners.entry(x).or_default().push(y);
    }
    let mut total = 0.0;
    for &(x, y) in pairs {
        let nx = gx.neighbor_entities(x);
        let ny: HashSet<EntityId> = gy.neighbor_entities(y).into_iter().collect();
        let aligned = nx
            .iter()
            .filter(|n| {
                partners
                    .get(n)
                    .is_some_and(|ms| ms.iter().any(|m| ny.contains(m)))
            })
            .count();
        total += aligned as f64 / nx.len().max(1) as f64;
    }
    Ok(total / pairs.len() as f64)
}
