//! Exact cosine k-NN over a database split and multi-label mAP@k /
//! Recall@k against a query split.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::io::{read_file, write_file};
use crate::model::{dot, is_unit, mean, normalize, Dataset, LabelSet};
use crate::training::ProjectionHead;

pub const DEFAULT_K_VALUES: [usize; 3] = [1, 10, 100];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub database: Vec<String>,
    pub query: Vec<String>,
}

impl SplitSpec {
    pub fn validate(&self, dataset: &Dataset) -> Result<()> {
        if self.database.is_empty() || self.query.is_empty() {
            return Err(Error::validation(
                "database and query splits must both be nonempty",
            ));
        }
        let ids = dataset.id_index();
        let mut seen = HashSet::new();
        for (side, list) in [("database", &self.database), ("query", &self.query)] {
            for id in list {
                if !ids.contains_key(id.as_str()) {
                    return Err(Error::validation(format!(
                        "{side} id {id:?} not in dataset"
                    )));
                }
                if !seen.insert(id.as_str()) {
                    return Err(Error::validation(format!(
                        "id {id:?} listed twice in the split"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("split serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json("split file", e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = read_file(path)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::json(path.display().to_string(), e))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), self.to_json().as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: String,
    pub score: f64,
}

fn by_score_then_id(a: &Neighbor, b: &Neighbor) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.id.cmp(&b.id))
}

fn rank(query: &[f64], database: &[(&str, &[f64])], k: usize) -> Vec<Neighbor> {
    let mut scored: Vec<Neighbor> = database
        .iter()
        .map(|(id, v)| Neighbor {
            id: (*id).to_owned(),
            score: dot(query, v),
        })
        .collect();
    if k < scored.len() {
        scored.select_nth_unstable_by(k, by_score_then_id);
        scored.truncate(k);
    }
    scored.sort_by(by_score_then_id);
    scored
}

/// The `k` database records most cosine-similar to `query`, best first;
/// ties go to the smaller id.
pub fn knn(query: &[f64], database: &Dataset, k: usize) -> Result<Vec<Neighbor>> {
    if k == 0 || k > database.len() {
        return Err(Error::validation(format!(
            "k = {k} must be in 1..={}",
            database.len()
        )));
    }
    if query.len() != database.dim {
        return Err(Error::validation(format!(
            "query has dimension {}, database {}",
            query.len(),
            database.dim
        )));
    }
    if !is_unit(query) {
        return Err(Error::validation("query is not unit-norm"));
    }
    if let Some(r) = database.records.iter().find(|r| !is_unit(&r.vector)) {
        return Err(Error::validation(format!(
            "database record {:?} is not unit-norm",
            r.id
        )));
    }
    let db: Vec<(&str, &[f64])> = database
        .records
        .iter()
        .map(|r| (r.id.as_str(), r.vector.as_slice()))
        .collect();
    Ok(rank(query, &db, k))
}

/// 1 when the label sets intersect.
pub fn relevance(query_labels: &LabelSet, neighbor_labels: &LabelSet) -> u8 {
    u8::from(!query_labels.is_disjoint(neighbor_labels))
}

fn check_k(bits: &[u8], k: usize) -> Result<()> {
    if k == 0 || k > bits.len() {
        Err(Error::validation(format!(
            "k = {k} must be in 1..={}",
            bits.len()
        )))
    } else {
        Ok(())
    }
}

/// 1 if any of the first `k` results is relevant.
pub fn recall_at_k(bits: &[u8], k: usize) -> Result<f64> {
    check_k(bits, k)?;
    Ok(if bits[..k].iter().any(|&b| b != 0) {
        1.0
    } else {
        0.0
    })
}

/// How precision values are averaged into AP@k.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApMode {
    /// `(1/k) Σ_{r=1..k} P@r`.
    #[default]
    AllRanks,
    /// Mean of `P@r` over the relevant ranks within the first `k` (0 with
    /// no hits).
    RelevantRanks,
}

pub fn average_precision_at_k(bits: &[u8], k: usize, mode: ApMode) -> Result<f64> {
    check_k(bits, k)?;
    let mut hits = 0usize;
    let mut precisions = Vec::with_capacity(k);
    for (r, &b) in bits[..k].iter().enumerate() {
        if b != 0 {
            hits += 1;
        }
        let p = hits as f64 / (r + 1) as f64;
        match mode {
            ApMode::AllRanks => precisions.push(p),
            ApMode::RelevantRanks if b != 0 => precisions.push(p),
            ApMode::RelevantRanks => {}
        }
    }
    Ok(match mode {
        ApMode::AllRanks => crate::model::pairwise_sum(&precisions) / k as f64,
        ApMode::RelevantRanks => mean(&precisions),
    })
}

pub fn mean_recall_at_k(per_query: &[Vec<u8>], k: usize) -> Result<f64> {
    let values = per_query
        .iter()
        .map(|b| recall_at_k(b, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(&values))
}

pub fn mean_average_precision_at_k(per_query: &[Vec<u8>], k: usize, mode: ApMode) -> Result<f64> {
    let values = per_query
        .iter()
        .map(|b| average_precision_at_k(b, k, mode))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(&values))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub id: String,
    pub neighbors: Vec<String>,
    pub relevance: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub k_values: Vec<usize>,
    pub map_at_k: BTreeMap<usize, f64>,
    pub recall_at_k: BTreeMap<usize, f64>,
    pub ap_mode: ApMode,
    /// Queries dropped because they carry no label.
    pub excluded_queries: usize,
    /// Queries whose vector also appears in the database under another id.
    pub duplicate_queries: usize,
    pub per_query: Vec<QueryResult>,
}

impl RetrievalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json("retrieval report", e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = read_file(path)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::json(path.display().to_string(), e))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), self.to_json().as_bytes())
    }

    /// `k,map,recall` rows in `k_values` order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,map,recall\n");
        for k in &self.k_values {
            out.push_str(&format!(
                "{k},{},{}\n",
                self.map_at_k[k], self.recall_at_k[k]
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalOptions {
    pub ap_mode: ApMode,
}

fn embed(vector: &[f64], head: Option<&ProjectionHead>) -> Result<Vec<f64>> {
    match head {
        Some(h) => h.embed(vector),
        None => normalize(vector),
    }
}

/// Retrieves every labelled query against the database split (after the
/// optional head and normalization) and scores the rankings.
pub fn evaluate(
    dataset: &Dataset,
    split: &SplitSpec,
    head: Option<&ProjectionHead>,
    k_values: &[usize],
    options: EvalOptions,
) -> Result<RetrievalReport> {
    split.validate(dataset)?;
    if k_values.is_empty() || k_values.contains(&0) {
        return Err(Error::validation(
            "k values must be a nonempty list of positive integers",
        ));
    }
    let k_max = *k_values.iter().max().unwrap();
    if k_max > split.database.len() {
        return Err(Error::validation(format!(
            "k = {k_max} exceeds database size {}",
            split.database.len()
        )));
    }
    let index = dataset.id_index();
    let record = |id: &String| &dataset.records[index[id.as_str()]];

    let database: Vec<(String, Vec<f64>, &LabelSet)> = split
        .database
        .par_iter()
        .map(|id| {
            let r = record(id);
            embed(&r.vector, head)
                .map(|v| (r.id.clone(), v, &r.labels))
                .map_err(|e| Error::degenerate(format!("database record {id:?}: {e}")))
        })
        .collect::<Result<_>>()?;
    let db_labels: BTreeMap<&str, &LabelSet> = database
        .iter()
        .map(|(id, _, l)| (id.as_str(), *l))
        .collect();
    let db_view: Vec<(&str, &[f64])> = database
        .iter()
        .map(|(id, v, _)| (id.as_str(), v.as_slice()))
        .collect();
    let db_bits: HashSet<Vec<u64>> = database
        .iter()
        .map(|(_, v, _)| v.iter().map(|x| x.to_bits()).collect())
        .collect();

    let labelled: Vec<&String> = split
        .query
        .iter()
        .filter(|id| !record(id).labels.is_empty())
        .collect();
    let excluded_queries = split.query.len() - labelled.len();
    if labelled.is_empty() {
        return Err(Error::validation("no query carries a label"));
    }

    let results: Vec<(QueryResult, bool)> = labelled
        .par_iter()
        .map(|id| {
            let r = record(id);
            let q = embed(&r.vector, head)
                .map_err(|e| Error::degenerate(format!("query {id:?}: {e}")))?;
            let duplicate = db_bits.contains(&q.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
            let ranked = rank(&q, &db_view, k_max);
            let relevance_bits = ranked
                .iter()
                .map(|n| relevance(&r.labels, db_labels[n.id.as_str()]))
                .collect();
            Ok((
                QueryResult {
                    id: r.id.clone(),
                    neighbors: ranked.into_iter().map(|n| n.id).collect(),
                    relevance: relevance_bits,
                },
                duplicate,
            ))
        })
        .collect::<Result<_>>()?;

    let duplicate_queries = results.iter().filter(|(_, d)| *d).count();
    let per_query: Vec<QueryResult> = results.into_iter().map(|(q, _)| q).collect();
    let bits: Vec<Vec<u8>> = per_query.iter().map(|q| q.relevance.clone()).collect();
    let mut map_at_k = BTreeMap::new();
    let mut recall = BTreeMap::new();
    for &k in k_values {
        map_at_k.insert(k, mean_average_precision_at_k(&bits, k, options.ap_mode)?);
        recall.insert(k, mean_recall_at_k(&bits, k)?);
    }
    Ok(RetrievalReport {
        k_values: k_values.to_vec(),
        map_at_k,
        recall_at_k: recall,
        ap_mode: options.ap_mode,
        excluded_queries,
        duplicate_queries,
        per_query,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EmbeddingRecord, LabelVocabulary};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_dataset(n: usize, dim: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let records = (0..n)
            .map(|i| {
                let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                EmbeddingRecord::new(format!("r{i:03}"), normalize(&v).unwrap())
            })
            .collect();
        Dataset::new(records, LabelVocabulary::new(), dim).unwrap()
    }

    #[test]
    fn exact_match_ranks_first() {
        let db = unit_dataset(20, 4, 1);
        let q = db.records[7].vector.clone();
        assert_eq!(knn(&q, &db, 1).unwrap()[0].id, "r007");
    }

    #[test]
    fn full_ranking_is_permutation_sorted_by_score() {
        let db = unit_dataset(15, 3, 2);
        let q = normalize(&[1.0, 0.5, -0.2]).unwrap();
        let all = knn(&q, &db, 15).unwrap();
        let mut ids: Vec<_> = all.iter().map(|n| n.id.clone()).collect();
        assert!(all.windows(2).all(|w| w[0].score >= w[1].score));
        ids.sort();
        assert_eq!(
            ids,
            db.records.iter().map(|r| r.id.clone()).collect::<Vec<_>>()
        );
        assert!(knn(&q, &db, 16).is_err());
        assert!(knn(&q, &db, 0).is_err());
    }

    #[test]
    fn ties_break_by_ascending_id() {
        let v = vec![1.0, 0.0];
        let records = ["c", "a", "b"]
            .iter()
            .map(|id| EmbeddingRecord::new(*id, v.clone()))
            .collect();
        let db = Dataset::new(records, LabelVocabulary::new(), 2).unwrap();
        let ids: Vec<_> = knn(&v, &db, 3).unwrap().into_iter().map(|n| n.id).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(knn(&v, &db, 2).unwrap()[1].id, "b");
    }

    #[test]
    fn knn_matches_scan_oracle() {
        let db = unit_dataset(50, 8, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let q =
                normalize(&(0..8).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>()).unwrap();
            let k = rng.gen_range(1..=50);
            // Scan: repeatedly pick the best remaining record.
            let mut remaining: Vec<(String, f64)> = db
                .records
                .iter()
                .map(|r| {
                    (
                        r.id.clone(),
                        r.vector.iter().zip(&q).map(|(a, b)| a * b).sum(),
                    )
                })
                .collect();
            let mut expected = Vec::new();
            for _ in 0..k {
                let mut best = 0;
                for i in 1..remaining.len() {
                    let (ref id, s) = remaining[i];
                    let (ref bid, bs) = remaining[best];
                    if s > bs || (s == bs && id < bid) {
                        best = i;
                    }
                }
                expected.push(remaining.remove(best).0);
            }
            let got: Vec<_> = knn(&q, &db, k).unwrap().into_iter().map(|n| n.id).collect();
            assert_eq!(got, expected);
        }
    }

    #[test]
    fn recall_cases() {
        assert_eq!(recall_at_k(&[0, 0, 1], 3).unwrap(), 1.0);
        assert_eq!(recall_at_k(&[0, 0, 1], 2).unwrap(), 0.0);
        for k in 1..=3 {
            assert_eq!(recall_at_k(&[0, 0, 0], k).unwrap(), 0.0);
        }
        assert!(recall_at_k(&[0, 1], 3).is_err());
    }

    #[test]
    fn average_precision_cases() {
        let ap = average_precision_at_k(&[1, 0, 1], 3, ApMode::AllRanks).unwrap();
        assert!((ap - (1.0 + 0.5 + 2.0 / 3.0) / 3.0).abs() < 1e-15);
        assert!((ap - 0.7222222222222222).abs() < 1e-15);
        assert_eq!(
            average_precision_at_k(&[1, 1, 1], 3, ApMode::AllRanks).unwrap(),
            1.0
        );
        for bits in [[0u8, 1, 1], [1, 0, 0]] {
            for mode in [ApMode::AllRanks, ApMode::RelevantRanks] {
                assert_eq!(
                    average_precision_at_k(&bits, 1, mode).unwrap(),
                    recall_at_k(&bits, 1).unwrap()
                );
            }
        }
        let rel = average_precision_at_k(&[1, 0, 1], 3, ApMode::RelevantRanks).unwrap();
        assert!((rel - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(
            average_precision_at_k(&[0, 0], 2, ApMode::RelevantRanks).unwrap(),
            0.0
        );
    }

    fn labelled_pair_dataset() -> (Dataset, SplitSpec) {
        let vocab = LabelVocabulary::from_tags(["x", "y", "z"]).unwrap();
        let base = unit_dataset(6, 5, 9);
        let mut records = Vec::new();
        for (i, r) in base.records.iter().enumerate() {
            let label = [i % 3];
            records
                .push(EmbeddingRecord::new(format!("db{i}"), r.vector.clone()).with_labels(label));
            records
                .push(EmbeddingRecord::new(format!("q{i}"), r.vector.clone()).with_labels(label));
        }
        records.push(EmbeddingRecord::new(
            "unlabelled",
            base.records[0].vector.clone(),
        ));
        let ds = Dataset::new(records, vocab, 5).unwrap();
        let split = SplitSpec {
            database: (0..6).map(|i| format!("db{i}")).collect(),
            query: (0..6)
                .map(|i| format!("q{i}"))
                .chain(["unlabelled".to_string()])
                .collect(),
        };
        (ds, split)
    }

    #[test]
    fn planted_matches_give_perfect_top1() {
        let (ds, split) = labelled_pair_dataset();
        let report = evaluate(&ds, &split, None, &[1, 3], EvalOptions::default()).unwrap();
        assert_eq!(report.recall_at_k[&1], 1.0);
        assert_eq!(report.map_at_k[&1], 1.0);
        assert_eq!(report.excluded_queries, 1);
        assert_eq!(report.duplicate_queries, 6);
        assert!(report.recall_at_k[&3] >= report.recall_at_k[&1]);
        assert_eq!(report.per_query[2].neighbors[0], "db2");
    }

    #[test]
    fn identity_head_equals_no_head() {
        let (ds, split) = labelled_pair_dataset();
        let head = ProjectionHead::identity(5).unwrap();
        let a = evaluate(&ds, &split, None, &[1, 2, 6], EvalOptions::default()).unwrap();
        let b = evaluate(&ds, &split, Some(&head), &[1, 2, 6], EvalOptions::default()).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn report_json_is_reproducible_and_round_trips() {
        let (ds, split) = labelled_pair_dataset();
        let a = evaluate(&ds, &split, None, &[1, 2], EvalOptions::default()).unwrap();
        let b = evaluate(&ds, &split, None, &[1, 2], EvalOptions::default()).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let back = RetrievalReport::from_json(&a.to_json()).unwrap();
        assert_eq!(back.to_json(), a.to_json());
        assert!(a.to_csv().starts_with("k,map,recall\n1,1,1\n"));
    }

    #[test]
    fn invalid_inputs() {
        let (ds, split) = labelled_pair_dataset();
        assert!(evaluate(&ds, &split, None, &[7], EvalOptions::default()).is_err());
        assert!(evaluate(&ds, &split, None, &[], EvalOptions::default()).is_err());
        let only_unlabelled = SplitSpec {
            database: split.database.clone(),
            query: vec!["unlabelled".into()],
        };
        assert!(evaluate(&ds, &only_unlabelled, None, &[1], EvalOptions::default()).is_err());
        let overlapping = SplitSpec {
            database: vec!["db0".into()],
            query: vec!["db0".into()],
        };
        assert!(overlapping.validate(&ds).is_err());
        let unknown = SplitSpec {
            database: vec!["nope".into()],
            query: vec!["q0".into()],
        };
        assert!(unknown.validate(&ds).is_err());
    }
}
