//! Domain types shared by every stage: embedding records, the label
//! vocabulary, datasets, and the small amount of vector math everything
//! else builds on.

pub mod io;

use std::collections::{BTreeSet, HashMap, HashSet};

use crate::error::{Error, Result};

/// Tolerance used when an operation requires unit-norm input.
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// Multi-hot style labels stored as sorted vocabulary indices.
pub type LabelSet = BTreeSet<usize>;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub id: String,
    pub vector: Vec<f64>,
    pub labels: LabelSet,
}

impl EmbeddingRecord {
    pub fn new(id: impl Into<String>, vector: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            vector,
            labels: LabelSet::new(),
        }
    }

    pub fn with_labels(mut self, labels: impl IntoIterator<Item = usize>) -> Self {
        self.labels = labels.into_iter().collect();
        self
    }
}

/// Ordered set of lowercase style tags.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelVocabulary {
    tags: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelVocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a vocabulary from tags in the given order. Tags are
    /// lowercased; empty or duplicate tags are rejected.
    pub fn from_tags<I, S>(tags: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = Self::new();
        for tag in tags {
            let tag = tag.as_ref();
            let normalized = tag.trim().to_lowercase();
            if normalized.is_empty() {
                return Err(Error::validation("empty tag in vocabulary"));
            }
            if vocab.index.contains_key(&normalized) {
                return Err(Error::validation(format!("duplicate tag {normalized:?}")));
            }
            vocab.push_unchecked(normalized);
        }
        Ok(vocab)
    }

    /// Returns the index of `tag`, inserting it at the end if absent.
    pub fn intern(&mut self, tag: &str) -> Result<usize> {
        let normalized = tag.trim().to_lowercase();
        if normalized.is_empty() {
            return Err(Error::validation("empty tag"));
        }
        if let Some(&i) = self.index.get(&normalized) {
            return Ok(i);
        }
        Ok(self.push_unchecked(normalized))
    }

    fn push_unchecked(&mut self, tag: String) -> usize {
        let i = self.tags.len();
        self.index.insert(tag.clone(), i);
        self.tags.push(tag);
        i
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn index_of(&self, tag: &str) -> Option<usize> {
        self.index
            .get(tag)
            .or_else(|| self.index.get(&tag.trim().to_lowercase()))
            .copied()
    }

    pub fn tag(&self, index: usize) -> Option<&str> {
        self.tags.get(index).map(String::as_str)
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    /// Tag strings for a label set, in index order.
    pub fn names(&self, labels: &LabelSet) -> Vec<String> {
        labels
            .iter()
            .filter_map(|&i| self.tag(i).map(str::to_owned))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<EmbeddingRecord>,
    pub vocab: LabelVocabulary,
    pub dim: usize,
}

impl Dataset {
    /// Validates ids, dimensions, finiteness and label ranges.
    pub fn new(records: Vec<EmbeddingRecord>, vocab: LabelVocabulary, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::validation("dataset dimension must be positive"));
        }
        let mut seen = HashSet::with_capacity(records.len());
        for record in &records {
            if record.id.is_empty() {
                return Err(Error::validation("record with empty id"));
            }
            if !seen.insert(record.id.as_str()) {
                return Err(Error::validation(format!("duplicate id {:?}", record.id)));
            }
            if record.vector.len() != dim {
                return Err(Error::validation(format!(
                    "record {:?} has {} entries, expected {dim}",
                    record.id,
                    record.vector.len()
                )));
            }
            if record.vector.iter().any(|x| !x.is_finite()) {
                return Err(Error::validation(format!(
                    "record {:?} has a non-finite entry",
                    record.id
                )));
            }
            if let Some(&bad) = record.labels.iter().find(|&&l| l >= vocab.len()) {
                return Err(Error::validation(format!(
                    "record {:?} has label index {bad} outside vocabulary of {}",
                    record.id,
                    vocab.len()
                )));
            }
        }
        Ok(Self {
            records,
            vocab,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn id_index(&self) -> HashMap<&str, usize> {
        self.records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.as_str(), i))
            .collect()
    }

    /// Returns a copy with every vector scaled to unit length.
    pub fn normalized(&self) -> Result<Self> {
        let records = self
            .records
            .iter()
            .map(|r| {
                let vector = normalize(&r.vector)
                    .map_err(|e| Error::degenerate(format!("record {:?}: {e}", r.id)))?;
                Ok(EmbeddingRecord {
                    vector,
                    ..r.clone()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            records,
            vocab: self.vocab.clone(),
            dim: self.dim,
        })
    }

    /// Subset with the given ids, in the order given.
    pub fn subset<'a, I>(&self, ids: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a String>,
    {
        let index = self.id_index();
        let records = ids
            .into_iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .map(|&i| self.records[i].clone())
                    .ok_or_else(|| Error::validation(format!("unknown id {id:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(records, self.vocab.clone(), self.dim)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn normalize(v: &[f64]) -> Result<Vec<f64>> {
    let norm = l2_norm(v);
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::degenerate(
            "cannot normalize a zero or non-finite vector",
        ));
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

pub fn is_unit(v: &[f64]) -> bool {
    (l2_norm(v) - 1.0).abs() <= UNIT_TOLERANCE
}

/// Cosine similarity of two unit vectors (their dot product).
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::validation(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if !is_unit(a) || !is_unit(b) {
        return Err(Error::validation("cosine requires unit-norm vectors"));
    }
    Ok(dot(a, b).clamp(-1.0, 1.0))
}

/// Sum in a fixed pairwise-tree order, so the result does not depend on how
/// the terms were produced.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let (left, right) = values.split_at(n / 2);
            pairwise_sum(left) + pairwise_sum(right)
        }
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        pairwise_sum(values) / values.len() as f64
    }
}
