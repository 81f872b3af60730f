//! Prototype-based style scoring and retrieval error analysis.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{dot, is_unit, l2_norm, mean, pairwise_sum, Dataset};
use crate::retrieval::RetrievalReport;

/// Scores below this indicate the style is absent.
pub const ABSENT_BELOW: f64 = 0.5;
/// Scores above this strongly indicate the style is present.
pub const PRESENT_ABOVE: f64 = 0.8;
const DEGENERATE_NORM: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct StylePrototype {
    pub label: usize,
    pub vector: Vec<f64>,
    pub support: usize,
}

fn check_units(embeddings: &[&[f64]]) -> Result<usize> {
    let dim = embeddings[0].len();
    for (i, v) in embeddings.iter().enumerate() {
        if v.len() != dim {
            return Err(Error::validation(format!(
                "embedding {i} has dimension {}, expected {dim}",
                v.len()
            )));
        }
        if !is_unit(v) {
            return Err(Error::validation(format!("embedding {i} is not unit-norm")));
        }
    }
    Ok(dim)
}

/// Mean of the embeddings, rescaled to unit length.
pub fn build_prototype(label: usize, embeddings: &[&[f64]]) -> Result<StylePrototype> {
    if embeddings.is_empty() {
        return Err(Error::validation("prototype needs at least one embedding"));
    }
    let dim = check_units(embeddings)?;
    let n = embeddings.len() as f64;
    let mean_vec: Vec<f64> = (0..dim)
        .map(|d| {
            let column: Vec<f64> = embeddings.iter().map(|v| v[d]).collect();
            pairwise_sum(&column) / n
        })
        .collect();
    let norm = l2_norm(&mean_vec);
    if norm < DEGENERATE_NORM {
        return Err(Error::degenerate(format!(
            "embeddings for label {label} cancel out (mean norm {norm:e})"
        )));
    }
    Ok(StylePrototype {
        label,
        vector: mean_vec.iter().map(|x| x / norm).collect(),
        support: embeddings.len(),
    })
}

/// One prototype per label that has at least one record, in label order.
/// Multi-label records contribute to each of their labels.
pub fn build_prototypes(dataset: &Dataset) -> Result<Vec<StylePrototype>> {
    let mut members: BTreeMap<usize, Vec<&[f64]>> = BTreeMap::new();
    for r in &dataset.records {
        for &l in &r.labels {
            members.entry(l).or_default().push(&r.vector);
        }
    }
    members
        .into_iter()
        .map(|(label, vs)| build_prototype(label, &vs))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StyleBand {
    Absent,
    Inconclusive,
    StronglyPresent,
}

impl StyleBand {
    pub fn of(score: f64) -> Self {
        if score < ABSENT_BELOW {
            StyleBand::Absent
        } else if score > PRESENT_ABOVE {
            StyleBand::StronglyPresent
        } else {
            StyleBand::Inconclusive
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            StyleBand::Absent => "style absent",
            StyleBand::Inconclusive => "inconclusive",
            StyleBand::StronglyPresent => "style strongly present",
        }
    }
}

impl fmt::Display for StyleBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StyleScore {
    pub score: f64,
    pub band: StyleBand,
}

/// General Style Similarity: dot product of an image embedding with a
/// prototype.
pub fn gss(image_embedding: &[f64], prototype: &StylePrototype) -> Result<StyleScore> {
    if image_embedding.len() != prototype.vector.len() {
        return Err(Error::validation(format!(
            "embedding has dimension {}, prototype {}",
            image_embedding.len(),
            prototype.vector.len()
        )));
    }
    if !is_unit(image_embedding) {
        return Err(Error::validation("image embedding is not unit-norm"));
    }
    let score = dot(image_embedding, &prototype.vector).clamp(-1.0, 1.0);
    Ok(StyleScore {
        score,
        band: StyleBand::of(score),
    })
}

/// Mean cosine over distinct unordered pairs.
pub fn intra_cluster_similarity(embeddings: &[&[f64]]) -> Result<f64> {
    if embeddings.len() < 2 {
        return Err(Error::validation(
            "intra-cluster similarity needs at least 2 embeddings",
        ));
    }
    check_units(embeddings)?;
    let mut sims = Vec::with_capacity(embeddings.len() * (embeddings.len() - 1) / 2);
    for i in 0..embeddings.len() {
        for j in i + 1..embeddings.len() {
            sims.push(dot(embeddings[i], embeddings[j]));
        }
    }
    Ok(mean(&sims))
}

/// Fine label → group label (e.g. artist → art movement).
pub type GroupMap = HashMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub groups: Vec<String>,
    /// `counts[truth][predicted]`.
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Header row of group names, then one row per truth group.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("truth\\predicted");
        for g in &self.groups {
            out.push(',');
            out.push_str(&csv_escape(g));
        }
        out.push('\n');
        for (g, row) in self.groups.iter().zip(&self.counts) {
            out.push_str(&csv_escape(g));
            for c in row {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::validation("empty confusion CSV"))?;
        let groups: Vec<String> = split_csv(header).into_iter().skip(1).collect();
        let mut counts = Vec::new();
        for line in lines {
            let cells = split_csv(line);
            if cells.len() != groups.len() + 1 {
                return Err(Error::validation(format!(
                    "confusion row has {} cells",
                    cells.len()
                )));
            }
            let row = cells[1..]
                .iter()
                .map(|c| {
                    c.parse::<u64>()
                        .map_err(|_| Error::validation(format!("bad count {c:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            counts.push(row);
        }
        if counts.len() != groups.len() {
            return Err(Error::validation("confusion CSV is not square"));
        }
        Ok(Self { groups, counts })
    }
}

fn csv_escape(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_owned()
    }
}

fn split_csv(line: &str) -> Vec<String> {
    let mut fields = Vec::new();
    let mut current = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match (c, quoted) {
            ('"', true) if chars.peek() == Some(&'"') => {
                current.push('"');
                chars.next();
            }
            ('"', _) => quoted = !quoted,
            (',', false) => fields.push(std::mem::take(&mut current)),
            _ => current.push(c),
        }
    }
    fields.push(current);
    fields
}

/// Tallies top-1 retrieval errors by (truth group, predicted group).
///
/// `labels` gives each record's fine labels; a query is an error when its
/// top-1 neighbour shares none of them. Each side is represented by its
/// smallest fine label. Groups are ordered by first appearance while
/// scanning queries in report order (truth before prediction), counting
/// correct queries too, so an all-correct report yields a zero matrix.
pub fn group_confusion(
    report: &RetrievalReport,
    labels: &HashMap<String, BTreeSet<String>>,
    groups: &GroupMap,
) -> Result<ConfusionMatrix> {
    let primary = |id: &str| -> Result<(&BTreeSet<String>, &String)> {
        let set = labels
            .get(id)
            .ok_or_else(|| Error::validation(format!("no labels for record {id:?}")))?;
        let first = set
            .iter()
            .next()
            .ok_or_else(|| Error::validation(format!("record {id:?} has no labels")))?;
        Ok((set, first))
    };
    let group_of = |label: &String| -> Result<&String> {
        groups
            .get(label)
            .ok_or_else(|| Error::validation(format!("label {label:?} has no group")))
    };

    let mut order: Vec<String> = Vec::new();
    let mut position: HashMap<String, usize> = HashMap::new();
    let mut errors: Vec<(usize, usize)> = Vec::new();
    for q in &report.per_query {
        let top = q
            .neighbors
            .first()
            .ok_or_else(|| Error::validation(format!("query {:?} has no neighbours", q.id)))?;
        let (truth_set, truth) = primary(&q.id)?;
        let (pred_set, pred) = primary(top)?;
        let mut slot = |g: &String| {
            *position.entry(g.clone()).or_insert_with(|| {
                order.push(g.clone());
                order.len() - 1
            })
        };
        let t = slot(group_of(truth)?);
        let p = slot(group_of(pred)?);
        if truth_set.is_disjoint(pred_set) {
            errors.push((t, p));
        }
    }
    let mut counts = vec![vec![0u64; order.len()]; order.len()];
    for (t, p) in errors {
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix {
        groups: order,
        counts,
    })
}

/// Pearson product-moment correlation.
pub fn correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::validation(format!(
            "lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::validation("correlation needs at least 3 points"));
    }
    let mx = mean(x);
    let my = mean(y);
    let dx: Vec<f64> = x.iter().map(|v| v - mx).collect();
    let dy: Vec<f64> = y.iter().map(|v| v - my).collect();
    let sxx = pairwise_sum(&dx.iter().map(|d| d * d).collect::<Vec<_>>());
    let syy = pairwise_sum(&dy.iter().map(|d| d * d).collect::<Vec<_>>());
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::degenerate(
            "correlation is undefined for zero variance",
        ));
    }
    let sxy = pairwise_sum(&dx.iter().zip(&dy).map(|(a, b)| a * b).collect::<Vec<_>>());
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::normalize;
    use crate::retrieval::{ApMode, QueryResult};

    #[test]
    fn prototype_cases() {
        let v = normalize(&[0.3, -0.4, 1.2]).unwrap();
        let p = build_prototype(0, &[&v]).unwrap();
        for (a, b) in p.vector.iter().zip(&v) {
            assert!((a - b).abs() < 1e-15);
        }
        let diag = build_prototype(1, &[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        assert!((diag.vector[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(diag.vector[0], diag.vector[1]);
        assert_eq!(diag.support, 2);
        assert!(matches!(
            build_prototype(2, &[&[1.0, 0.0], &[-1.0, 0.0]]),
            Err(Error::Degenerate(_))
        ));
        assert!(build_prototype(3, &[]).is_err());
        assert!(build_prototype(3, &[&[2.0, 0.0]]).is_err());
    }

    #[test]
    fn gss_bands() {
        let p = build_prototype(0, &[&[1.0, 0.0]]).unwrap();
        let own = gss(&[1.0, 0.0], &p).unwrap();
        assert_eq!((own.score, own.band), (1.0, StyleBand::StronglyPresent));
        let orth = gss(&[0.0, 1.0], &p).unwrap();
        assert_eq!((orth.score, orth.band), (0.0, StyleBand::Absent));
        let mid = gss(&[0.65, (1.0f64 - 0.65 * 0.65).sqrt()], &p).unwrap();
        assert!((mid.score - 0.65).abs() < 1e-15);
        assert_eq!(mid.band, StyleBand::Inconclusive);
        assert_eq!(StyleBand::of(0.5), StyleBand::Inconclusive);
        assert_eq!(StyleBand::of(0.8), StyleBand::Inconclusive);
        assert!(gss(&[1.0, 0.0, 0.0], &p).is_err());
    }

    #[test]
    fn band_is_monotone() {
        let mut prev = StyleBand::of(-1.0);
        for i in 0..=2000 {
            let b = StyleBand::of(-1.0 + i as f64 * 0.001);
            assert!(b >= prev);
            prev = b;
        }
    }

    #[test]
    fn intra_cluster_cases() {
        let v = normalize(&[1.0, 2.0]).unwrap();
        assert!((intra_cluster_similarity(&[&v, &v, &v]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(
            intra_cluster_similarity(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap(),
            0.0
        );
        assert!(intra_cluster_similarity(&[&v]).is_err());
    }

    #[test]
    fn correlation_cases() {
        let x = [1.0, 2.0, 3.0, 4.5];
        let up: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let down: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((correlation(&x, &up).unwrap() - 1.0).abs() < 1e-15);
        assert!((correlation(&x, &down).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(
            correlation(&x, &[1.0; 4]),
            Err(Error::Degenerate(_))
        ));
        assert!(correlation(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(correlation(&x, &[1.0, 2.0, 3.0]).is_err());
    }

    fn report(pairs: &[(&str, &str)]) -> RetrievalReport {
        RetrievalReport {
            k_values: vec![1],
            map_at_k: BTreeMap::new(),
            recall_at_k: BTreeMap::new(),
            ap_mode: ApMode::AllRanks,
            excluded_queries: 0,
            duplicate_queries: 0,
            per_query: pairs
                .iter()
                .map(|(q, n)| QueryResult {
                    id: q.to_string(),
                    neighbors: vec![n.to_string()],
                    relevance: vec![0],
                })
                .collect(),
        }
    }

    fn fixture() -> (HashMap<String, BTreeSet<String>>, GroupMap) {
        let artists = [
            ("monet", "impressionism"),
            ("sisley", "impressionism"),
            ("picasso", "cubism"),
            ("braque", "cubism"),
            ("courbet", "realism"),
        ];
        let groups: GroupMap = artists
            .iter()
            .map(|(a, g)| (a.to_string(), g.to_string()))
            .collect();
        let mut labels = HashMap::new();
        for (a, _) in artists {
            for i in 0..6 {
                labels.insert(format!("{a}{i}"), BTreeSet::from([a.to_string()]));
            }
        }
        (labels, groups)
    }

    #[test]
    fn all_correct_gives_zero_matrix() {
        let (labels, groups) = fixture();
        let m = group_confusion(
            &report(&[("monet0", "monet1"), ("picasso0", "picasso3")]),
            &labels,
            &groups,
        )
        .unwrap();
        assert_eq!(m.groups, ["impressionism", "cubism"]);
        assert_eq!(m.total(), 0);
    }

    #[test]
    fn single_error_lands_in_its_cell() {
        let (labels, groups) = fixture();
        let m = group_confusion(&report(&[("monet0", "picasso1")]), &labels, &groups).unwrap();
        assert_eq!(m.groups, ["impressionism", "cubism"]);
        assert_eq!(m.counts, vec![vec![0, 1], vec![0, 0]]);
    }

    #[test]
    fn ten_query_fixture_matches_hand_tally() {
        let (labels, groups) = fixture();
        let pairs = [
            ("monet0", "sisley0"),    // error, imp → imp
            ("monet1", "monet2"),     // correct
            ("sisley1", "monet3"),    // error, imp → imp
            ("picasso0", "braque0"),  // error, cub → cub
            ("braque1", "monet4"),    // error, cub → imp
            ("courbet0", "monet5"),   // error, real → imp
            ("courbet1", "sisley2"),  // error, real → imp
            ("courbet2", "courbet3"), // correct
            ("picasso1", "courbet4"), // error, cub → real
            ("sisley3", "picasso2"),  // error, imp → cub
        ];
        let m = group_confusion(&report(&pairs), &labels, &groups).unwrap();
        assert_eq!(m.groups, ["impressionism", "cubism", "realism"]);
        assert_eq!(m.counts, vec![vec![2, 1, 0], vec![1, 1, 1], vec![2, 0, 0]]);
        assert_eq!(m.total(), 8);
        let back = ConfusionMatrix::from_csv(&m.to_csv()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn unmapped_label_is_named() {
        let (mut labels, groups) = fixture();
        labels.insert("klimt0".into(), BTreeSet::from(["klimt".to_string()]));
        let err = group_confusion(&report(&[("klimt0", "monet0")]), &labels, &groups).unwrap_err();
        assert!(err.to_string().contains("klimt"));
    }
}
