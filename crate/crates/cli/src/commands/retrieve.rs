use rayon::prelude::*;

use styleforge::features::descriptor;
use styleforge::model::normalize;
use styleforge::retrieval::{evaluate, knn, ApMode, EvalOptions};
use styleforge::training::ProjectionHead;
use styleforge::{Dataset, EmbeddingRecord, Error};

use super::{csv_field, load_dataset, load_head, load_split, write_text};
use crate::cli::{ApModeArg, EvalArgs, QueryArgs};
use crate::imageio::read_image;
use crate::manifest::Recorder;

pub fn eval(args: &EvalArgs, rec: &mut Recorder) -> anyhow::Result<()> {
    let dataset = load_dataset(&args.embeddings, Some(&args.labels), rec)?;
    let split = load_split(&args.split, rec)?;
    let head = load_head(args.head.as_deref(), rec)?;
    let options = EvalOptions {
        ap_mode: match args.ap_mode {
            ApModeArg::AllRanks => ApMode::AllRanks,
            ApModeArg::RelevantRanks => ApMode::RelevantRanks,
        },
    };
    let report = evaluate(&dataset, &split, head.as_ref(), &args.k, options)?;
    report.save(&args.out)?;
    rec.output(&args.out);
    let csv_path = args
        .csv
        .clone()
        .unwrap_or_else(|| args.out.with_extension("csv"));
    write_text(&csv_path, &report.to_csv(), rec)?;

    if report.excluded_queries > 0 {
        log::warn!("{} unlabelled queries excluded", report.excluded_queries);
    }
    if report.duplicate_queries > 0 {
        log::warn!(
            "{} queries duplicate a database vector",
            report.duplicate_queries
        );
    }
    for k in &report.k_values {
        println!(
            "k={k:<4} mAP {:.4}  recall {:.4}",
            report.map_at_k[k], report.recall_at_k[k]
        );
    }
    Ok(())
}

fn embed(v: &[f64], head: Option<&ProjectionHead>) -> styleforge::Result<Vec<f64>> {
    match head {
        Some(h) => h.embed(v),
        None => normalize(v),
    }
}

pub fn query(args: &QueryArgs, rec: &mut Recorder) -> anyhow::Result<()> {
    let dataset = load_dataset(&args.embeddings, None, rec)?;
    let head = load_head(args.head.as_deref(), rec)?;

    let raw = match (&args.vector, &args.image, &args.id) {
        (Some(v), _, _) => v.clone(),
        (_, Some(path), _) => {
            rec.input(path)?;
            descriptor(&read_image(path)?)?
        }
        (_, _, Some(id)) => dataset
            .get(id)
            .ok_or_else(|| {
                Error::validation(format!("id {id:?} is not in {}", args.embeddings.display()))
            })?
            .vector
            .clone(),
        _ => return Err(Error::validation("one of --vector, --image or --id is required").into()),
    };
    if raw.len() != dataset.dim {
        return Err(Error::validation(format!(
            "query has dimension {}, embeddings {}",
            raw.len(),
            dataset.dim
        ))
        .into());
    }

    let database = match &args.split {
        Some(path) => dataset.subset(load_split(path, rec)?.database.iter())?,
        None => dataset,
    };
    let records = database
        .records
        .par_iter()
        .map(|r| {
            Ok(EmbeddingRecord::new(
                r.id.clone(),
                embed(&r.vector, head.as_ref())?,
            ))
        })
        .collect::<styleforge::Result<Vec<_>>>()?;
    let dim = head.as_ref().map_or(database.dim, ProjectionHead::d_out);
    let embedded = Dataset::new(records, database.vocab.clone(), dim)?;
    let neighbors = knn(&embed(&raw, head.as_ref())?, &embedded, args.k)?;

    let mut csv = String::from("rank,id,score\n");
    for (i, n) in neighbors.iter().enumerate() {
        csv.push_str(&format!("{},{},{}\n", i + 1, csv_field(&n.id), n.score));
        println!("{:>4}  {:<24} {:.6}", i + 1, n.id, n.score);
    }
    write_text(&args.out, &csv, rec)
}
