//! Exact cosine top-k over a reference matrix.

use crate::embedding_store::{EmbeddingMatrix, EmbeddingVector};
use crate::error::{Error, Result};
use crate::linalg;
use crate::losses::MIN_NORM;

#[derive(Debug, Clone)]
pub struct CosineIndex {
    /// Unit-norm copies of the kept rows.
    normalized: Vec<f64>,
    original_norms: Vec<f64>,
    /// Row id in the source matrix for each kept row.
    row_ids: Vec<usize>,
    source: EmbeddingMatrix,
    dropped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub row_id: usize,
    pub similarity: f64,
}

impl CosineIndex {
    /// Normalizes every row; rows with norm below `1e-12` are dropped and
    /// counted.
    pub fn build(data: EmbeddingMatrix) -> Result<Self> {
        if data.rows() == 0 {
            return Err(Error::TooFewRows { needed: 1, actual: 0 });
        }
        let mut normalized = Vec::with_capacity(data.as_slice().len());
        let mut original_norms = Vec::new();
        let mut row_ids = Vec::new();
        for (i, row) in data.iter_rows().enumerate() {
            let n = linalg::norm(row);
            if n < MIN_NORM {
                continue;
            }
            normalized.extend(row.iter().map(|v| v / n));
            original_norms.push(n);
            row_ids.push(i);
        }
        if row_ids.is_empty() {
            return Err(Error::InvalidParam("every reference row has zero norm".into()));
        }
        let dropped = data.rows() - row_ids.len();
        Ok(Self {
            normalized,
            original_norms,
            row_ids,
            source: data,
            dropped,
        })
    }

    pub fn dim(&self) -> usize {
        self.source.dim()
    }

    /// Number of searchable rows.
    pub fn len(&self) -> usize {
        self.row_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_ids.is_empty()
    }

    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn source(&self) -> &EmbeddingMatrix {
        &self.source
    }

    pub fn original_norms(&self) -> &[f64] {
        &self.original_norms
    }

    /// The unit-norm row stored for source row `row_id`, if it was kept.
    pub fn normalized_row(&self, row_id: usize) -> Option<&[f64]> {
        let d = self.dim();
        self.row_ids
            .binary_search(&row_id)
            .ok()
            .map(|k| &self.normalized[k * d..(k + 1) * d])
    }

    /// Exact top-`k` rows by cosine similarity, descending; equal
    /// similarities are ordered by ascending row id.
    pub fn query(&self, q: &EmbeddingVector, k: usize) -> Result<Vec<Neighbor>> {
        if q.dim() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                actual: q.dim(),
            });
        }
        if k == 0 || k > self.len() {
            return Err(Error::InvalidParam(format!("k = {k} outside 1..={}", self.len())));
        }
        let qn = q.norm();
        if qn <= MIN_NORM {
            return Err(Error::ZeroNorm);
        }
        let unit: Vec<f64> = q.as_slice().iter().map(|v| v / qn).collect();
        let mut scored: Vec<Neighbor> = self
            .normalized
            .chunks_exact(self.dim())
            .zip(&self.row_ids)
            .map(|(row, &row_id)| Neighbor {
                row_id,
                similarity: linalg::dot(row, &unit).clamp(-1.0, 1.0),
            })
            .collect();
        let by_rank = |a: &Neighbor, b: &Neighbor| b.similarity.total_cmp(&a.similarity).then(a.row_id.cmp(&b.row_id));
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, by_rank);
            scored.truncate(k);
        }
        scored.sort_by(by_rank);
        Ok(scored)
    }

    /// `k = 1`: the closest source row, un-normalized. `k > 1`: the mean of
    /// the top-`k` source rows.
    pub fn anchor_for(&self, target: &EmbeddingVector, k: usize) -> Result<EmbeddingVector> {
        let hits = self.query(target, k)?;
        if let [only] = hits.as_slice() {
            return Ok(self.source.row_vector(only.row_id));
        }
        let mut mean = vec![0.0; self.dim()];
        for h in &hits {
            linalg::axpy(1.0, self.source.row(h.row_id), &mut mean);
        }
        let n = hits.len() as f64;
        mean.iter_mut().for_each(|v| *v /= n);
        EmbeddingVector::new(mean)
    }
}

pub fn build_index(data: EmbeddingMatrix) -> Result<CosineIndex> {
    CosineIndex::build(data)
}

pub fn query_topk(index: &CosineIndex, q: &EmbeddingVector, k: usize) -> Result<Vec<Neighbor>> {
    index.query(q, k)
}

pub fn anchor_for_target(index: &CosineIndex, target: &EmbeddingVector, k: usize) -> Result<EmbeddingVector> {
    index.anchor_for(target, k)
}
