//! A dataset directory: two graphs, their embeddings and the alignment links.
//!
//! Layout: `triples_{x,y}.tsv`, `names_{x,y}.tsv`, `links_train.tsv`,
//! `links_test.tsv` and optionally `emb_{x,y}.tsv`. Missing embedding files
//! fall back to name-hashed vectors.

use std::path::{Path, PathBuf};

use crate::embedding::{load_embeddings, EmbeddingStore};
use crate::encoder::GraphView;
use crate::error::Result;
use crate::kg::{load_kg, load_links, AlignmentLinkSet, KnowledgeGraph, DEFAULT_DEV_SEED, DEV_FRACTION};

#[derive(Debug, Clone, PartialEq)]
pub struct LoadOptions {
    pub dev_fraction: f64,
    pub dev_seed: u64,
    /// Dimension of name-hashed vectors when no embedding file exists.
    pub fallback_dim: usize,
    /// Seed for name-hashed entity and relation vectors.
    pub fallback_seed: u64,
    /// Also build relation vectors from relation names.
    pub relations: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            dev_fraction: DEV_FRACTION,
            dev_seed: DEFAULT_DEV_SEED,
            fallback_dim: 64,
            fallback_seed: 0,
            relations: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub gx: KnowledgeGraph,
    pub gy: KnowledgeGraph,
    pub store_x: EmbeddingStore,
    pub store_y: EmbeddingStore,
    pub links: AlignmentLinkSet,
}

fn side_store(dir: &Path, side: &str, kg: &KnowledgeGraph, opts: &LoadOptions) -> Result<EmbeddingStore> {
    let path = dir.join(format!("emb_{side}.tsv"));
    let store = if path.exists() {
        load_embeddings(&path, kg)?
    } else {
        EmbeddingStore::fallback(kg, opts.fallback_dim, opts.fallback_seed)?
    };
    Ok(if opts.relations {
        store.with_fallback_relations(kg, opts.fallback_seed)
    } else {
        store
    })
}

impl Dataset {
    pub fn load(dir: &Path, opts: &LoadOptions) -> Result<Self> {
        let file = |name: &str| -> PathBuf { dir.join(name) };
        let gx = load_kg(&file("triples_x.tsv"), &file("names_x.tsv"))?;
        let gy = load_kg(&file("triples_y.tsv"), &file("names_y.tsv"))?;
        let store_x = side_store(dir, "x", &gx, opts)?;
        let store_y = side_store(dir, "y", &gy, opts)?;
        if store_x.dim() != store_y.dim() {
            return Err(crate::Error::DimensionMismatch {
                expected: store_x.dim(),
                found: store_y.dim(),
            });
        }
        let train = load_links(&file("links_train.tsv"), &gx, &gy)?;
        let test = load_links(&file("links_test.tsv"), &gx, &gy)?;
        let links = AlignmentLinkSet::from_splits(train, test, opts.dev_fraction, opts.dev_seed)?;
        Ok(Self {
            gx,
            gy,
            store_x,
            store_y,
            links,
        })
    }

    pub fn views(&self, relation_mode: bool) -> Result<(GraphView<'_>, GraphView<'_>)> {
        Ok((
            GraphView::new(&self.gx, &self.store_x, relation_mode)?,
            GraphView::new(&self.gy, &self.store_y, relation_mode)?,
        ))
    }
}
