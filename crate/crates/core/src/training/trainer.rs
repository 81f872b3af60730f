use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::head::ProjectionHead;
use super::loss::{combined_loss, mcl_loss, ssl_loss, LossWeighting};
use super::{HeadInit, TrainConfig};
use crate::error::{Error, Result};
use crate::features::{augment, descriptor, AugmentationSpec, RasterImage};
use crate::model::{mean, Dataset, LabelSet};

/// Where SSL view pairs come from.
#[derive(Debug, Clone)]
pub enum Views {
    /// Both views are the stored vector itself (precomputed embeddings
    /// cannot be augmented).
    Identity,
    /// Augment the source image and re-extract features for each view.
    Images(Vec<RasterImage>),
}

#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<LabelSet>,
    pub views: Views,
}

impl TrainingSet {
    pub fn from_dataset(dataset: &Dataset) -> Self {
        Self {
            features: dataset.records.iter().map(|r| r.vector.clone()).collect(),
            labels: dataset.records.iter().map(|r| r.labels.clone()).collect(),
            views: Views::Identity,
        }
    }

    pub fn from_images(images: Vec<RasterImage>, labels: Vec<LabelSet>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::validation("image and label counts differ"));
        }
        let features = images
            .par_iter()
            .map(descriptor)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            features,
            labels,
            views: Views::Images(images),
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    fn view_pair(&self, index: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
        match &self.views {
            Views::Identity => Ok((self.features[index].clone(), self.features[index].clone())),
            Views::Images(images) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let img = &images[index];
                let a = augment(img, &AugmentationSpec::sample(&mut rng))?;
                let b = augment(img, &AugmentationSpec::sample(&mut rng))?;
                Ok((descriptor(&a)?, descriptor(&b)?))
            }
        }
    }
}

/// One mini-batch as seen by the objective.
#[derive(Debug, Clone, Copy)]
pub struct BatchInputs<'a> {
    pub features: &'a [Vec<f64>],
    pub labels: &'a [LabelSet],
    /// May be empty when the weighting does not use the SSL term.
    pub view_a: &'a [Vec<f64>],
    pub view_b: &'a [Vec<f64>],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue {
    pub mcl: Option<f64>,
    pub ssl: Option<f64>,
    pub combined: f64,
    /// Row-major like the head weights.
    pub grad_w: Vec<f64>,
    pub grad_b: Option<Vec<f64>>,
}

/// Combined loss of `head` on one batch and its gradient with respect to
/// the head parameters (through projection and normalization).
pub fn objective(
    head: &ProjectionHead,
    inputs: &BatchInputs<'_>,
    tau: f64,
    weighting: LossWeighting,
) -> Result<ObjectiveValue> {
    let mut grad_w = vec![0.0; head.weights().len()];
    let mut grad_b = head.bias().map(|b| vec![0.0; b.len()]);
    let project_all = |rows: &[Vec<f64>]| {
        rows.iter()
            .map(|x| head.project(x))
            .collect::<Result<Vec<_>>>()
    };

    let mut accumulate = |rows: &[Vec<f64>], grads: &[Vec<f64>], weight: f64| {
        for (x, g) in rows.iter().zip(grads) {
            let scaled: Vec<f64> = g.iter().map(|v| v * weight).collect();
            head.accumulate_grad(x, &scaled, &mut grad_w, grad_b.as_deref_mut());
        }
    };

    let mcl = if weighting.uses_mcl() {
        let out = mcl_loss(&project_all(inputs.features)?, inputs.labels, tau)?;
        accumulate(inputs.features, &out.grad, weighting.mcl_weight());
        Some(out.loss)
    } else {
        None
    };
    let ssl = if weighting.uses_ssl() {
        let out = ssl_loss(
            &project_all(inputs.view_a)?,
            &project_all(inputs.view_b)?,
            tau,
        )?;
        let w = weighting.ssl_weight();
        accumulate(inputs.view_a, &out.grad_a, w);
        accumulate(inputs.view_b, &out.grad_b, w);
        Some(out.loss)
    } else {
        None
    };
    Ok(ObjectiveValue {
        combined: combined_loss(mcl, ssl, weighting)?,
        mcl,
        ssl,
        grad_w,
        grad_b,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub mcl: Option<f64>,
    pub ssl: Option<f64>,
    /// `None` when the batch was skipped.
    pub combined: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTrace {
    pub rows: Vec<TraceRow>,
}

fn csv_field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl LossTrace {
    pub fn skipped(&self) -> usize {
        self.rows.iter().filter(|r| r.combined.is_none()).count()
    }

    /// Mean combined loss over the rows in `range` that were not skipped.
    pub fn mean_combined(&self, range: std::ops::Range<usize>) -> f64 {
        let values: Vec<f64> = self.rows[range].iter().filter_map(|r| r.combined).collect();
        mean(&values)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,mcl,ssl,combined\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.iteration,
                csv_field(r.mcl),
                csv_field(r.ssl),
                csv_field(r.combined)
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub head: ProjectionHead,
    pub trace: LossTrace,
}

fn mix_seed(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the combined words
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// SGD with momentum (`u ← m·u + g`, `W ← W − lr·u`) on the projection head.
/// Mini-batches come from a seeded reshuffle every epoch; the final batch of
/// an epoch may be short, and batches of fewer than two records are skipped.
pub fn train(set: &TrainingSet, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if set.is_empty() {
        return Err(Error::validation("training set is empty"));
    }
    if set.labels.len() != set.len() {
        return Err(Error::validation("feature and label counts differ"));
    }
    if config.batch_size > set.len() {
        return Err(Error::validation(format!(
            "batch size {} exceeds training set size {}",
            config.batch_size,
            set.len()
        )));
    }
    let d_in = set.features[0].len();
    if let Some(i) = set.features.iter().position(|f| f.len() != d_in) {
        return Err(Error::validation(format!(
            "training row {i} has a different dimension"
        )));
    }
    let weighting = config.weighting();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut head = match config.init {
        HeadInit::Uniform => ProjectionHead::uniform(d_in, config.dim_out, config.bias, &mut rng)?,
        HeadInit::Identity => {
            if d_in != config.dim_out {
                return Err(Error::validation(format!(
                    "identity init needs d_in == d_out, got {d_in} and {}",
                    config.dim_out
                )));
            }
            let identity = ProjectionHead::identity(d_in)?;
            let bias = config.bias.then(|| vec![0.0; d_in]);
            ProjectionHead::new(d_in, d_in, identity.weights().to_vec(), bias)?
        }
    };
    let mut velocity_w = vec![0.0; head.weights().len()];
    let mut velocity_b = vec![0.0; head.d_out()];

    let mut order: Vec<usize> = (0..set.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut trace = LossTrace::default();

    for iteration in 0..config.iterations {
        if cursor >= order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let end = (cursor + config.batch_size).min(order.len());
        let batch = &order[cursor..end];
        cursor = end;
        let view_seed: u64 = rng.gen();
        if batch.len() < 2 {
            warn!(
                "iteration {iteration}: skipping batch of {} record(s)",
                batch.len()
            );
            trace.rows.push(TraceRow {
                iteration,
                mcl: None,
                ssl: None,
                combined: None,
            });
            continue;
        }

        let features: Vec<Vec<f64>> = batch.iter().map(|&i| set.features[i].clone()).collect();
        let labels: Vec<LabelSet> = batch.iter().map(|&i| set.labels[i].clone()).collect();
        let (view_a, view_b): (Vec<Vec<f64>>, Vec<Vec<f64>>) = if weighting.uses_ssl() {
            let pairs = batch
                .par_iter()
                .map(|&i| set.view_pair(i, mix_seed(view_seed, i as u64)))
                .collect::<Result<Vec<_>>>()?;
            pairs.into_iter().unzip()
        } else {
            (Vec::new(), Vec::new())
        };
        let inputs = BatchInputs {
            features: &features,
            labels: &labels,
            view_a: &view_a,
            view_b: &view_b,
        };
        let value = objective(&head, &inputs, config.tau, weighting)?;

        for ((w, u), g) in head
            .weights_mut()
            .iter_mut()
            .zip(&mut velocity_w)
            .zip(&value.grad_w)
        {
            *u = config.momentum * *u + g;
            *w -= config.lr * *u;
        }
        if let (Some(b), Some(gb)) = (head.bias_mut(), value.grad_b.as_ref()) {
            for ((w, u), g) in b.iter_mut().zip(&mut velocity_b).zip(gb) {
                *u = config.momentum * *u + g;
                *w -= config.lr * *u;
            }
        }
        trace.rows.push(TraceRow {
            iteration,
            mcl: value.mcl,
            ssl: value.ssl,
            combined: Some(value.combined),
        });
    }
    Ok(TrainOutcome { head, trace })
}
