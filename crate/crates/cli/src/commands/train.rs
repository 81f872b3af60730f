use std::collections::HashMap;

use rayon::prelude::*;

use styleforge::model::io::read_label_sidecar;
use styleforge::training::{self, HeadInit, TrainConfig, TrainingSet};
use styleforge::{Error, LabelSet, LabelVocabulary};

use super::{appended, load_dataset, load_split, with_path, write_text};
use crate::cli::{InitArg, TrainArgs};
use crate::imageio::{image_id, list_images, read_image};
use crate::manifest::Recorder;

fn config(args: &TrainArgs) -> TrainConfig {
    TrainConfig {
        tau: args.tau,
        lambda: args.lambda,
        ssl_only: args.ssl_only,
        lr: args.lr,
        momentum: args.momentum,
        batch_size: args.batch_size,
        iterations: args.iterations,
        seed: args.seed,
        dim_out: args.dim_out,
        init: match args.init {
            InitArg::Uniform => HeadInit::Uniform,
            InitArg::Identity => HeadInit::Identity,
        },
        bias: args.bias,
    }
}

fn training_set(args: &TrainArgs, rec: &mut Recorder) -> anyhow::Result<TrainingSet> {
    if args.labels.is_none() && !args.ssl_only {
        return Err(Error::validation("--labels is required unless --ssl-only is set").into());
    }
    let database = match &args.split {
        Some(path) => Some(load_split(path, rec)?.database),
        None => None,
    };

    if let Some(embeddings) = &args.embeddings {
        let dataset = load_dataset(embeddings, args.labels.as_deref(), rec)?;
        let dataset = match &database {
            Some(ids) => dataset.subset(ids.iter())?,
            None => dataset,
        };
        return Ok(TrainingSet::from_dataset(&dataset));
    }

    let dir = args.images.as_ref().expect("clap requires one source");
    let mut paths = list_images(dir)?;
    if let Some(ids) = &database {
        let mut by_id: HashMap<String, _> = paths.into_iter().map(|p| (image_id(&p), p)).collect();
        paths = ids
            .iter()
            .map(|id| {
                by_id.remove(id).ok_or_else(|| {
                    Error::validation(format!("split id {id:?} has no image in {}", dir.display()))
                })
            })
            .collect::<Result<_, _>>()?;
    }
    for p in &paths {
        rec.input(p)?;
    }
    let labels: Vec<LabelSet> = match &args.labels {
        Some(path) => {
            rec.input(path)?;
            let lines = read_label_sidecar(path).map_err(|e| with_path(e, path))?;
            let mut vocab = LabelVocabulary::new();
            let mut by_id = HashMap::new();
            for line in lines {
                let set = line
                    .labels
                    .iter()
                    .map(|t| vocab.intern(t))
                    .collect::<Result<LabelSet, _>>()?;
                by_id.insert(line.id, set);
            }
            paths
                .iter()
                .map(|p| by_id.remove(&image_id(p)).unwrap_or_default())
                .collect()
        }
        None => vec![LabelSet::new(); paths.len()],
    };
    let images = paths
        .par_iter()
        .map(|p| read_image(p))
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(TrainingSet::from_images(images, labels)?)
}

pub fn train(args: &TrainArgs, rec: &mut Recorder) -> anyhow::Result<()> {
    let config = config(args);
    config.validate()?;
    let set = training_set(args, rec)?;
    log::info!("training on {} examples", set.len());
    let outcome = training::train(&set, &config)?;
    outcome.head.save(&args.out)?;
    rec.output(&args.out);
    let trace_path = args
        .trace
        .clone()
        .unwrap_or_else(|| appended(&args.out, ".trace.csv"));
    write_text(&trace_path, &outcome.trace.to_csv(), rec)?;
    let n = outcome.trace.rows.len();
    let tail = n.saturating_sub(100)..n;
    println!(
        "trained {}x{} head; mean loss over the last {} iterations {:.4}; {} batches skipped",
        outcome.head.d_out(),
        outcome.head.d_in(),
        tail.len(),
        outcome.trace.mean_combined(tail),
        outcome.trace.skipped()
    );
    Ok(())
}
