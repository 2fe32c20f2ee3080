//! FIFO queues of target-encoded batches used as negatives, one per graph.

use std::collections::VecDeque;

use crate::embedding::NORM_TOLERANCE;
use crate::error::{Error, Result};
use crate::kg::{EntityId, KgSide};
use crate::linalg::{norm, Matrix};

/// Checks `(1 + K) * N < min(|E_x|, |E_y|)`.
pub fn validate_capacity(k: usize, n: usize, ex: usize, ey: usize) -> Result<()> {
    let limit = ex.min(ey);
    let product = (1 + k).saturating_mul(n);
    if n == 0 || product >= limit {
        return Err(Error::CapacityViolation {
            k,
            n,
            ex,
            ey,
            product,
            limit,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueueEntry {
    pub ids: Vec<EntityId>,
    pub vectors: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NegativeQueue {
    side: KgSide,
    capacity: usize,
    batch_size: usize,
    dim: usize,
    entries: VecDeque<QueueEntry>,
}

impl NegativeQueue {
    pub fn new(side: KgSide, capacity: usize, batch_size: usize, dim: usize) -> Self {
        Self {
            side,
            capacity,
            batch_size,
            dim,
            entries: VecDeque::with_capacity(capacity + 1),
        }
    }

    pub fn side(&self) -> KgSide {
        self.side
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_warm(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    pub fn entries(&self) -> impl ExactSizeIterator<Item = &QueueEntry> {
        self.entries.iter()
    }

    pub fn ensure_warm(&self) -> Result<()> {
        if self.is_warm() {
            Ok(())
        } else {
            Err(Error::QueueNotWarm {
                side: self.side,
                have: self.entries.len(),
                need: self.capacity,
            })
        }
    }

    /// Validates a batch for this queue: `N` unit-norm rows of width `dim`,
    /// one id per row.
    pub fn check_batch(&self, encoded: &Matrix, ids: &[EntityId]) -> Result<()> {
        if encoded.rows() != self.batch_size || encoded.cols() != self.dim || ids.len() != self.batch_size {
            return Err(Error::ShapeMismatch {
                expected: format!("{} x {} with {} ids", self.batch_size, self.dim, self.batch_size),
                found: format!("{} x {} with {} ids", encoded.rows(), encoded.cols(), ids.len()),
            });
        }
        for row in encoded.iter_rows() {
            let n = norm(row);
            if (n - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::NormViolation {
                    norm: n,
                    tolerance: NORM_TOLERANCE,
                });
            }
        }
        Ok(())
    }

    /// Appends a batch, evicting the oldest one once more than `K` are held.
    pub fn push(&mut self, encoded: Matrix, ids: Vec<EntityId>) -> Result<()> {
        self.check_batch(&encoded, &ids)?;
        self.entries.push_back(QueueEntry {
            ids,
            vectors: encoded,
        });
        while self.entries.len() > self.capacity {
            self.entries.pop_front();
        }
        Ok(())
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// All stored vectors plus the current batch, minus the anchor itself.
    ///
    /// The anchor is row `anchor_index` of `current`; any stored row carrying
    /// the anchor's entity id is excluded as well. With distinct ids the
    /// result holds exactly `(1 + K) * N - 1` vectors.
    pub fn negatives_for<'a>(
        &'a self,
        current_ids: &[EntityId],
        current: &'a Matrix,
        anchor_index: usize,
    ) -> Result<Vec<&'a [f64]>> {
        self.ensure_warm()?;
        self.check_batch(current, current_ids)?;
        let anchor = current_ids[anchor_index];
        let mut out = Vec::with_capacity((1 + self.capacity) * self.batch_size);
        for entry in &self.entries {
            for (id, row) in entry.ids.iter().zip(entry.vectors.iter_rows()) {
                if *id != anchor {
                    out.push(row);
                }
            }
        }
        for (i, row) in current.iter_rows().enumerate() {
            if i != anchor_index && current_ids[i] != anchor {
                out.push(row);
            }
        }
        Ok(out)
    }

    /// All stored vectors plus the whole current batch, without exclusion.
    /// Used when anchors draw negatives from the other graph.
    pub fn all_negatives<'a>(&'a self, current: &'a Matrix) -> Result<Vec<&'a [f64]>> {
        self.ensure_warm()?;
        let mut out: Vec<&[f64]> = self
            .entries
            .iter()
            .flat_map(|e| e.vectors.iter_rows())
            .collect();
        out.extend(current.iter_rows());
        Ok(out)
    }

    pub(crate) fn from_entries(
        side: KgSide,
        capacity: usize,
        batch_size: usize,
        dim: usize,
        entries: Vec<QueueEntry>,
    ) -> Result<Self> {
        let mut q = Self::new(side, capacity, batch_size, dim);
        for e in entries {
            q.push(e.vectors, e.ids)?;
        }
        Ok(q)
    }
}
