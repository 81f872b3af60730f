use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;

use styleforge::analysis::{
    build_prototypes, group_confusion, gss as score, GroupMap, StylePrototype,
};
use styleforge::features::descriptor;
use styleforge::model::io::{load_embeddings, read_label_sidecar, save_embeddings};
use styleforge::model::normalize;
use styleforge::retrieval::RetrievalReport;
use styleforge::training::ProjectionHead;
use styleforge::{Dataset, EmbeddingRecord, Error};

use super::{csv_field, load_dataset, load_head, with_path, write_text};
use crate::cli::{ConfusionArgs, GssArgs, PrototypeArgs};
use crate::imageio::{image_id, list_images, read_image};
use crate::manifest::Recorder;

fn embed_all(
    records: &[EmbeddingRecord],
    head: Option<&ProjectionHead>,
) -> styleforge::Result<Vec<EmbeddingRecord>> {
    records
        .par_iter()
        .map(|r| {
            let v = match head {
                Some(h) => h.embed(&r.vector)?,
                None => normalize(&r.vector)?,
            };
            Ok(EmbeddingRecord {
                id: r.id.clone(),
                vector: v,
                labels: r.labels.clone(),
            })
        })
        .collect()
}

pub fn prototype(args: &PrototypeArgs, rec: &mut Recorder) -> anyhow::Result<()> {
    let dataset = load_dataset(&args.embeddings, Some(&args.labels), rec)?;
    let head = load_head(args.head.as_deref(), rec)?;
    let dim = head.as_ref().map_or(dataset.dim, ProjectionHead::d_out);
    let embedded = Dataset::new(
        embed_all(&dataset.records, head.as_ref())?,
        dataset.vocab.clone(),
        dim,
    )?;
    let prototypes = build_prototypes(&embedded)?;
    let records = prototypes
        .iter()
        .map(|p| {
            let tag = embedded
                .vocab
                .tag(p.label)
                .expect("label comes from the vocabulary");
            EmbeddingRecord::new(tag, p.vector.clone()).with_labels([p.label])
        })
        .collect();
    save_embeddings(
        &args.out,
        &Dataset::new(records, embedded.vocab.clone(), dim)?,
    )?;
    rec.output(&args.out);
    for p in &prototypes {
        println!(
            "{:<24} {} records",
            embedded.vocab.tag(p.label).unwrap_or_default(),
            p.support
        );
    }
    Ok(())
}

pub fn gss(args: &GssArgs, rec: &mut Recorder) -> anyhow::Result<()> {
    rec.input(&args.prototypes)?;
    let protos = load_embeddings(&args.prototypes).map_err(|e| with_path(e, &args.prototypes))?;
    let head = load_head(args.head.as_deref(), rec)?;

    let inputs: Vec<EmbeddingRecord> = match (&args.embeddings, &args.images) {
        (Some(path), _) => load_dataset(path, None, rec)?.records,
        (None, Some(dir)) => {
            let paths = list_images(dir)?;
            for p in &paths {
                rec.input(p)?;
            }
            paths
                .par_iter()
                .map(|p| {
                    Ok(EmbeddingRecord::new(
                        image_id(p),
                        descriptor(&read_image(p)?)?,
                    ))
                })
                .collect::<anyhow::Result<_>>()?
        }
        (None, None) => unreachable!("clap requires one source"),
    };
    let embedded = embed_all(&inputs, head.as_ref())?;

    let prototypes: Vec<StylePrototype> = protos
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| StylePrototype {
            label: i,
            vector: r.vector.clone(),
            support: 1,
        })
        .collect();
    let mut csv = String::from("id,label,score,band\n");
    for r in &embedded {
        for (p, record) in prototypes.iter().zip(&protos.records) {
            let s = score(&r.vector, p)?;
            csv.push_str(&format!(
                "{},{},{},{}\n",
                csv_field(&r.id),
                csv_field(&record.id),
                s.score,
                s.band
            ));
        }
    }
    write_text(&args.out, &csv, rec)?;
    println!(
        "scored {} embeddings against {} prototypes",
        embedded.len(),
        prototypes.len()
    );
    Ok(())
}

pub fn confusion(args: &ConfusionArgs, rec: &mut Recorder) -> anyhow::Result<()> {
    rec.input(&args.report)?;
    let report = RetrievalReport::load(&args.report)?;
    rec.input(&args.groups)?;
    let text = std::fs::read(&args.groups).map_err(|e| Error::io(&args.groups, e))?;
    let groups: GroupMap = serde_json::from_slice(&text)
        .map_err(|e| Error::json(args.groups.display().to_string(), e))?;
    rec.input(&args.labels)?;
    let labels: HashMap<String, BTreeSet<String>> = read_label_sidecar(&args.labels)
        .map_err(|e| with_path(e, &args.labels))?
        .into_iter()
        .map(|l| (l.id, l.labels.into_iter().collect()))
        .collect();
    let matrix = group_confusion(&report, &labels, &groups)?;
    write_text(&args.out, &matrix.to_csv(), rec)?;
    println!(
        "{} top-1 errors over {} groups",
        matrix.total(),
        matrix.groups.len()
    );
    Ok(())
}
