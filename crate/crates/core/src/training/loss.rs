//! Multi-label contrastive and SSL contrastive losses with analytic
//! gradients.
//!
//! Both losses take raw (not necessarily unit) row vectors, normalize them
//! internally, and return gradients with respect to the raw rows, so the
//! chain rule through normalization is part of every gradient here.

use crate::error::{Error, Result};
use crate::model::{dot, l2_norm, pairwise_sum, LabelSet};

/// 1 when the label sets share at least one label.
pub fn groundtruth_similarity(a: &LabelSet, b: &LabelSet) -> u8 {
    u8::from(!a.is_disjoint(b))
}

/// Pairwise cosines and label-overlap indicators for one mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityBatch {
    pub s: Vec<Vec<f64>>,
    pub s_hat: Vec<Vec<u8>>,
}

impl SimilarityBatch {
    pub fn new(embeddings: &[Vec<f64>], labels: &[LabelSet]) -> Result<Self> {
        if embeddings.len() != labels.len() {
            return Err(Error::validation("embedding and label counts differ"));
        }
        let (unit, _) = normalize_rows(embeddings)?;
        Ok(Self {
            s: cosine_matrix(&unit),
            s_hat: labels
                .iter()
                .map(|a| {
                    labels
                        .iter()
                        .map(|b| groundtruth_similarity(a, b))
                        .collect()
                })
                .collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    /// Gradient with respect to each raw input row.
    pub grad: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairLossGrad {
    pub loss: f64,
    pub grad_a: Vec<Vec<f64>>,
    pub grad_b: Vec<Vec<f64>>,
}

pub(crate) fn normalize_rows(rows: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let dim = rows.first().map_or(0, Vec::len);
    let mut unit = Vec::with_capacity(rows.len());
    let mut norms = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        if row.len() != dim {
            return Err(Error::validation(format!(
                "row {i} has dimension {}, expected {dim}",
                row.len()
            )));
        }
        let n = l2_norm(row);
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::degenerate(format!(
                "row {i} has zero or non-finite norm"
            )));
        }
        unit.push(row.iter().map(|x| x / n).collect());
        norms.push(n);
    }
    Ok((unit, norms))
}

fn cosine_matrix(unit: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = unit.len();
    let mut s = vec![vec![0.0; n]; n];
    for i in 0..n {
        s[i][i] = 1.0;
        for j in i + 1..n {
            let v = dot(&unit[i], &unit[j]);
            s[i][j] = v;
            s[j][i] = v;
        }
    }
    s
}

/// InfoNCE over anchors: every anchor `i` with positives `positives[i]`
/// contributes `−log softmax_{k≠i}(s_ik/τ)[j]` for each positive `j`; the
/// loss is the mean over all (anchor, positive) pairs. Returns the loss and
/// the gradient with respect to the unit rows.
fn anchored_infonce(unit: &[Vec<f64>], positives: &[Vec<usize>], tau: f64) -> (f64, Vec<Vec<f64>>) {
    let n = unit.len();
    let dim = unit.first().map_or(0, Vec::len);
    let pair_count: usize = positives.iter().map(Vec::len).sum();
    let mut grad = vec![vec![0.0; dim]; n];
    if pair_count == 0 {
        return (0.0, grad);
    }
    let s = cosine_matrix(unit);
    let scale = 1.0 / (pair_count as f64 * tau);
    let mut terms = Vec::with_capacity(pair_count);
    // coeff[i][k] = ∂L/∂s_ik, with s_ik read as the anchor-row entry.
    let mut coeff = vec![vec![0.0; n]; n];
    for i in 0..n {
        if positives[i].is_empty() {
            continue;
        }
        let max = (0..n)
            .filter(|&k| k != i)
            .map(|k| s[i][k] / tau)
            .fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = (0..n)
            .map(|k| {
                if k == i {
                    0.0
                } else {
                    (s[i][k] / tau - max).exp()
                }
            })
            .collect();
        let z = pairwise_sum(&exps);
        let log_z = max + z.ln();
        let n_pos = positives[i].len() as f64;
        for k in 0..n {
            if k != i {
                coeff[i][k] += scale * n_pos * exps[k] / z;
            }
        }
        for &j in &positives[i] {
            terms.push(log_z - s[i][j] / tau);
            coeff[i][j] -= scale;
        }
    }
    for i in 0..n {
        for k in 0..n {
            let c = coeff[i][k];
            if c == 0.0 {
                continue;
            }
            for d in 0..dim {
                grad[i][d] += c * unit[k][d];
                grad[k][d] += c * unit[i][d];
            }
        }
    }
    (pairwise_sum(&terms) / pair_count as f64, grad)
}

/// Maps a gradient with respect to `e = z/‖z‖` onto `z`.
fn through_normalization(
    grad_unit: Vec<Vec<f64>>,
    unit: &[Vec<f64>],
    norms: &[f64],
) -> Vec<Vec<f64>> {
    grad_unit
        .into_iter()
        .zip(unit.iter().zip(norms))
        .map(|(g, (e, &n))| {
            let along = dot(&g, e);
            g.iter()
                .zip(e)
                .map(|(gi, ei)| (gi - along * ei) / n)
                .collect()
        })
        .collect()
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::validation(format!(
            "temperature {tau} must be positive"
        )))
    }
}

/// Multi-label contrastive loss: positives of anchor `i` are all `j ≠ i`
/// sharing a label with `i`; the softmax denominator runs over every
/// `k ≠ i`. Zero loss and gradient when the batch has no positive pair.
pub fn mcl_loss(embeddings: &[Vec<f64>], labels: &[LabelSet], tau: f64) -> Result<LossGrad> {
    check_tau(tau)?;
    if embeddings.len() < 2 {
        return Err(Error::validation(format!(
            "contrastive loss needs at least 2 rows, got {}",
            embeddings.len()
        )));
    }
    if embeddings.len() != labels.len() {
        return Err(Error::validation("embedding and label counts differ"));
    }
    let (unit, norms) = normalize_rows(embeddings)?;
    let positives: Vec<Vec<usize>> = (0..labels.len())
        .map(|i| {
            (0..labels.len())
                .filter(|&j| j != i && groundtruth_similarity(&labels[i], &labels[j]) == 1)
                .collect()
        })
        .collect();
    let (loss, grad_unit) = anchored_infonce(&unit, &positives, tau);
    Ok(LossGrad {
        loss,
        grad: through_normalization(grad_unit, &unit, &norms),
    })
}

/// Symmetric InfoNCE over the `2B` views: the positive of `view_a[i]` is
/// `view_b[i]` and vice versa, all other `2B − 2` views are negatives, and
/// the loss is averaged over all `2B` anchors.
pub fn ssl_loss(view_a: &[Vec<f64>], view_b: &[Vec<f64>], tau: f64) -> Result<PairLossGrad> {
    check_tau(tau)?;
    let b = view_a.len();
    if b < 2 {
        return Err(Error::validation(format!(
            "SSL loss needs at least 2 pairs, got {b}"
        )));
    }
    if view_b.len() != b {
        return Err(Error::validation("view batches differ in size"));
    }
    let rows: Vec<Vec<f64>> = view_a.iter().chain(view_b).cloned().collect();
    let (unit, norms) = normalize_rows(&rows)?;
    let positives: Vec<Vec<usize>> = (0..2 * b).map(|i| vec![(i + b) % (2 * b)]).collect();
    let (loss, grad_unit) = anchored_infonce(&unit, &positives, tau);
    let mut grad = through_normalization(grad_unit, &unit, &norms);
    let grad_b = grad.split_off(b);
    Ok(PairLossGrad {
        loss,
        grad_a: grad,
        grad_b,
    })
}

/// How the two loss terms are mixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossWeighting {
    /// `L = L_MCL + λ·L_SSL`.
    Weighted(f64),
    /// Only the SSL term (the λ = ∞ configuration).
    SslOnly,
}

impl LossWeighting {
    pub fn uses_mcl(&self) -> bool {
        matches!(self, LossWeighting::Weighted(_))
    }

    pub fn uses_ssl(&self) -> bool {
        match *self {
            LossWeighting::Weighted(lambda) => lambda != 0.0,
            LossWeighting::SslOnly => true,
        }
    }

    pub fn ssl_weight(&self) -> f64 {
        match *self {
            LossWeighting::Weighted(lambda) => lambda,
            LossWeighting::SslOnly => 1.0,
        }
    }

    pub fn mcl_weight(&self) -> f64 {
        match self {
            LossWeighting::Weighted(_) => 1.0,
            LossWeighting::SslOnly => 0.0,
        }
    }
}

/// Mixes precomputed loss terms. Terms the weighting does not use may be
/// absent.
pub fn combined_loss(mcl: Option<f64>, ssl: Option<f64>, weighting: LossWeighting) -> Result<f64> {
    match weighting {
        LossWeighting::SslOnly => {
            ssl.ok_or_else(|| Error::validation("SSL-only loss needs the SSL term"))
        }
        LossWeighting::Weighted(lambda) => {
            let mcl = mcl.ok_or_else(|| Error::validation("weighted loss needs the MCL term"))?;
            if lambda == 0.0 {
                return Ok(mcl);
            }
            let ssl = ssl.ok_or_else(|| Error::validation("λ > 0 needs the SSL term"))?;
            Ok(mcl + lambda * ssl)
        }
    }
}
