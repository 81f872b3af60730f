//! Caption tag extraction, frequency filtering, and near-duplicate merging.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{dot, is_unit, Dataset, LabelSet, LabelVocabulary};

/// Tags with more hits than this are treated as generic phrases.
pub const DEFAULT_FREQUENCY_CUTOFF: u64 = 100_000;
/// Cosine above which two images are considered copies.
pub const DEFAULT_DEDUP_THRESHOLD: f64 = 0.8;
pub const DEFAULT_BLOCK_SIZE: usize = 1024;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub id: String,
    pub caption: String,
}

/// Indices of every bank tag found in `caption`, case-insensitively and on
/// word boundaries: a match may not start or end inside an alphanumeric run.
pub fn match_tags(caption: &str, bank: &LabelVocabulary) -> LabelSet {
    let haystack = caption.to_lowercase();
    bank.tags()
        .iter()
        .enumerate()
        .filter(|(_, tag)| occurs_on_boundary(&haystack, tag))
        .map(|(i, _)| i)
        .collect()
}

fn occurs_on_boundary(haystack: &str, tag: &str) -> bool {
    if tag.is_empty() {
        return false;
    }
    let first = tag.chars().next().unwrap();
    let last = tag.chars().next_back().unwrap();
    haystack.match_indices(tag).any(|(start, m)| {
        let before = haystack[..start].chars().next_back();
        let after = haystack[start + m.len()..].chars().next();
        let starts_inside = first.is_alphanumeric() && before.is_some_and(char::is_alphanumeric);
        let ends_inside = last.is_alphanumeric() && after.is_some_and(char::is_alphanumeric);
        !starts_inside && !ends_inside
    })
}

/// Drops tags with strictly more than `cutoff` hits.
pub fn filter_frequent_tags(counts: &BTreeMap<String, u64>, cutoff: u64) -> BTreeSet<String> {
    counts
        .iter()
        .filter(|(_, &n)| n <= cutoff)
        .map(|(tag, _)| tag.clone())
        .collect()
}

/// Result of the full caption pass.
#[derive(Debug, Clone, PartialEq)]
pub struct CurationOutput {
    /// Vocabulary of retained tags, in bank order.
    pub vocab: LabelVocabulary,
    /// Images with at least one retained tag, in caption order.
    pub labelled: Vec<(String, LabelSet)>,
    pub counts: BTreeMap<String, u64>,
}

/// Matches every caption against the bank, drops over-frequent tags, and
/// keeps the images left with at least one tag.
pub fn curate(
    captions: &[CaptionRecord],
    bank: &LabelVocabulary,
    cutoff: u64,
) -> Result<CurationOutput> {
    if cutoff == 0 {
        return Err(Error::validation("frequency cutoff must be positive"));
    }
    let matches: Vec<LabelSet> = captions
        .iter()
        .map(|c| match_tags(&c.caption, bank))
        .collect();
    let mut counts: BTreeMap<String, u64> = bank.tags().iter().map(|t| (t.clone(), 0)).collect();
    for set in &matches {
        for &i in set {
            *counts.get_mut(&bank.tags()[i]).unwrap() += 1;
        }
    }
    let retained = filter_frequent_tags(&counts, cutoff);
    let kept_tags: Vec<&String> = bank
        .tags()
        .iter()
        .filter(|t| retained.contains(*t))
        .collect();
    let vocab = LabelVocabulary::from_tags(kept_tags.iter().map(|t| t.as_str()))?;
    let remap: HashMap<usize, usize> = bank
        .tags()
        .iter()
        .enumerate()
        .filter_map(|(i, t)| vocab.index_of(t).map(|j| (i, j)))
        .collect();
    let mut labelled = Vec::new();
    for (caption, set) in captions.iter().zip(matches) {
        let kept: LabelSet = set.iter().filter_map(|i| remap.get(i).copied()).collect();
        if !kept.is_empty() {
            labelled.push((caption.id.clone(), kept));
        }
    }
    Ok(CurationOutput {
        vocab,
        labelled,
        counts,
    })
}

/// Connected components of the near-duplicate graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupResult {
    /// Each cluster's ids, sorted; clusters ordered by representative.
    pub clusters: Vec<Vec<String>>,
    /// `representatives[c]` is the retained id of `clusters[c]`.
    pub representatives: Vec<String>,
    /// Union of member labels, keyed by representative.
    pub merged_labels: BTreeMap<String, LabelSet>,
}

impl DedupResult {
    pub fn removed(&self) -> usize {
        self.clusters.iter().map(|c| c.len() - 1).sum()
    }
}

#[derive(Debug, Clone)]
pub struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    pub fn find(&mut self, mut node: usize) -> usize {
        let mut root = node;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[node] != root {
            let next = self.parent[node];
            self.parent[node] = root;
            node = next;
        }
        root
    }

    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return false;
        }
        if self.rank[a] < self.rank[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        if self.rank[a] == self.rank[b] {
            self.rank[a] += 1;
        }
        true
    }
}

/// Groups records whose cosine similarity exceeds `threshold` (strictly),
/// closing transitively, then keeps the lexicographically smallest id of
/// each group and gives it the union of the group's labels.
pub fn dedup(dataset: &Dataset, threshold: f64) -> Result<DedupResult> {
    dedup_blocked(dataset, threshold, DEFAULT_BLOCK_SIZE)
}

pub fn dedup_blocked(dataset: &Dataset, threshold: f64, block_size: usize) -> Result<DedupResult> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::validation(format!(
            "dedup threshold {threshold} outside (0, 1]"
        )));
    }
    if block_size == 0 {
        return Err(Error::validation("block size must be positive"));
    }
    if let Some(r) = dataset.records.iter().find(|r| !is_unit(&r.vector)) {
        return Err(Error::validation(format!(
            "record {:?} is not unit-norm",
            r.id
        )));
    }
    let n = dataset.len();
    let vectors: Vec<&[f64]> = dataset
        .records
        .iter()
        .map(|r| r.vector.as_slice())
        .collect();

    // Upper-triangular block pairs; each block yields its edges in (i, j)
    // order and blocks are merged in a fixed order.
    let starts: Vec<usize> = (0..n).step_by(block_size).collect();
    let block_pairs: Vec<(usize, usize)> = starts
        .iter()
        .enumerate()
        .flat_map(|(a, _)| (a..starts.len()).map(move |b| (a, b)))
        .collect();
    let edges: Vec<Vec<(usize, usize)>> = block_pairs
        .par_iter()
        .map(|&(a, b)| {
            let rows = starts[a]..(starts[a] + block_size).min(n);
            let mut found = Vec::new();
            for i in rows {
                let col_start = if a == b { i + 1 } else { starts[b] };
                let col_end = (starts[b] + block_size).min(n);
                for j in col_start..col_end {
                    if dot(vectors[i], vectors[j]) > threshold {
                        found.push((i, j));
                    }
                }
            }
            found
        })
        .collect();

    let mut sets = DisjointSet::new(n);
    for (i, j) in edges.into_iter().flatten() {
        sets.union(i, j);
    }
    Ok(collect_components(dataset, &mut sets))
}

pub(crate) fn collect_components(dataset: &Dataset, sets: &mut DisjointSet) -> DedupResult {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..dataset.len() {
        groups.entry(sets.find(i)).or_default().push(i);
    }
    let mut clusters: Vec<(Vec<String>, LabelSet)> = groups
        .into_values()
        .map(|members| {
            let mut ids: Vec<String> = members
                .iter()
                .map(|&i| dataset.records[i].id.clone())
                .collect();
            ids.sort();
            let labels = members
                .iter()
                .flat_map(|&i| dataset.records[i].labels.iter().copied())
                .collect();
            (ids, labels)
        })
        .collect();
    clusters.sort_by(|a, b| a.0[0].cmp(&b.0[0]));
    let representatives: Vec<String> = clusters.iter().map(|(ids, _)| ids[0].clone()).collect();
    let merged_labels = clusters
        .iter()
        .map(|(ids, labels)| (ids[0].clone(), labels.clone()))
        .collect();
    DedupResult {
        clusters: clusters.into_iter().map(|(ids, _)| ids).collect(),
        representatives,
        merged_labels,
    }
}

/// Dataset with one record per cluster carrying the merged labels.
pub fn apply_dedup(dataset: &Dataset, result: &DedupResult) -> Result<Dataset> {
    let mut kept = dataset.subset(result.representatives.iter())?;
    for record in &mut kept.records {
        record.labels = result.merged_labels[&record.id].clone();
    }
    Ok(kept)
}
