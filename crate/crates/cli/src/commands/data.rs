use std::collections::BTreeSet;
use std::path::Path;

use anyhow::Context;
use rayon::prelude::*;
use serde::Deserialize;

use styleforge::curation::{self, CaptionRecord};
use styleforge::features::{descriptor, synthetic, FEATURE_DIM};
use styleforge::model::io::{
    label_lines, read_vocabulary, save_embeddings, write_label_sidecar, write_vocabulary, LabelLine,
};
use styleforge::retrieval::SplitSpec;
use styleforge::{Dataset, EmbeddingRecord, Error, LabelVocabulary};

use super::{csv_field, load_dataset, with_path, write_text};
use crate::cli::{CurateArgs, DedupArgs, ExtractArgs, IngestArgs};
use crate::imageio::{image_id, list_images, read_image, write_png};
use crate::manifest::Recorder;

#[derive(Debug, Deserialize)]
struct VectorLine {
    id: String,
    vector: Vec<f64>,
    #[serde(default)]
    labels: Vec<String>,
}

/// Parses JSON lines, reporting the byte offset of the first bad line.
fn parse_json_lines<T: for<'de> Deserialize<'de>>(text: &str, what: &str) -> Result<Vec<T>, Error> {
    let mut items = Vec::new();
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        if !line.trim().is_empty() {
            let item = serde_json::from_str(line.trim())
                .map_err(|e| Error::format(offset, format!("invalid {what} line: {e}")))?;
            items.push(item);
        }
        offset += line.len() as u64;
    }
    Ok(items)
}

fn read_text(path: &Path, rec: &mut Recorder) -> anyhow::Result<String> {
    rec.input(path)?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    String::from_utf8(bytes).map_err(|e| {
        Error::format(
            e.utf8_error().valid_up_to() as u64,
            format!("{}: not UTF-8", path.display()),
        )
        .into()
    })
}

fn write_labels(
    dataset: &Dataset,
    labels: Option<&Path>,
    vocab: Option<&Path>,
    rec: &mut Recorder,
) -> anyhow::Result<()> {
    if let Some(path) = labels {
        write_label_sidecar(path, &label_lines(dataset))?;
        rec.output(path);
    }
    if let Some(path) = vocab {
        write_vocabulary(path, &dataset.vocab)?;
        rec.output(path);
    }
    Ok(())
}

pub fn ingest(args: &IngestArgs, rec: &mut Recorder) -> anyhow::Result<()> {
    let text = read_text(&args.vectors, rec)?;
    let lines: Vec<VectorLine> =
        parse_json_lines(&text, "vector").map_err(|e| with_path(e, &args.vectors))?;
    let dim = lines
        .first()
        .map(|l| l.vector.len())
        .ok_or_else(|| Error::validation(format!("{}: no records", args.vectors.display())))?;
    let mut vocab = LabelVocabulary::new();
    let mut records = Vec::with_capacity(lines.len());
    for line in lines {
        let labels = line
            .labels
            .iter()
            .map(|t| vocab.intern(t))
            .collect::<Result<Vec<_>, _>>()?;
        records.push(EmbeddingRecord::new(line.id, line.vector).with_labels(labels));
    }
    let dataset = Dataset::new(records, vocab, dim)?;
    save_embeddings(&args.out, &dataset)?;
    rec.output(&args.out);
    if dataset.records.iter().any(|r| !r.labels.is_empty()) {
        write_labels(
            &dataset,
            args.labels_out.as_deref(),
            args.vocab_out.as_deref(),
            rec,
        )?;
    }
    println!("ingested {} records of dimension {dim}", dataset.len());
    Ok(())
}

pub fn curate(args: &CurateArgs, rec: &mut Recorder) -> anyhow::Result<()> {
    let text = read_text(&args.captions, rec)?;
    let captions: Vec<CaptionRecord> =
        parse_json_lines(&text, "caption").map_err(|e| with_path(e, &args.captions))?;
    rec.input(&args.bank)?;
    let bank = read_vocabulary(&args.bank)?;
    let out = curation::curate(&captions, &bank, args.cutoff)?;

    let lines: Vec<LabelLine> = out
        .labelled
        .iter()
        .map(|(id, set)| LabelLine {
            id: id.clone(),
            labels: out.vocab.names(set),
        })
        .collect();
    write_label_sidecar(&args.out, &lines)?;
    rec.output(&args.out);

    let mut csv = String::from("tag,count,retained\n");
    for tag in bank.tags() {
        let retained = out.vocab.index_of(tag).is_some();
        csv.push_str(&format!(
            "{},{},{retained}\n",
            csv_field(tag),
            out.counts[tag]
        ));
    }
    write_text(&args.counts, &csv, rec)?;
    if let Some(path) = &args.vocab_out {
        write_vocabulary(path, &out.vocab)?;
        rec.output(path);
    }
    println!(
        "{} of {} captions labelled; {} of {} tags retained",
        out.labelled.len(),
        captions.len(),
        out.vocab.len(),
        bank.len()
    );
    Ok(())
}

pub fn dedup(args: &DedupArgs, rec: &mut Recorder) -> anyhow::Result<()> {
    let dataset = load_dataset(&args.embeddings, args.labels.as_deref(), rec)?;
    let result = curation::dedup(&dataset.normalized()?, args.threshold)?;
    let json = serde_json::to_string_pretty(&result).expect("dedup result serializes");
    write_text(&args.out, &(json + "\n"), rec)?;
    if args.embeddings_out.is_some() || args.labels_out.is_some() {
        let kept = curation::apply_dedup(&dataset, &result)?;
        if let Some(path) = &args.embeddings_out {
            save_embeddings(path, &kept)?;
            rec.output(path);
        }
        write_labels(&kept, args.labels_out.as_deref(), None, rec)?;
    }
    println!(
        "{} records in {} clusters; {} removed",
        dataset.len(),
        result.clusters.len(),
        result.removed()
    );
    Ok(())
}

pub fn extract_features(args: &ExtractArgs, rec: &mut Recorder) -> anyhow::Result<()> {
    let dataset = match (&args.images, &args.synthetic) {
        (Some(dir), _) => {
            if args.split_out.is_some() || args.images_out.is_some() {
                return Err(Error::validation(
                    "--split-out and --images-out apply to --synthetic only",
                )
                .into());
            }
            from_directory(dir, rec)?
        }
        (None, Some(params)) => from_synthetic(args, params, rec)?,
        (None, None) => unreachable!("clap requires one source"),
    };
    save_embeddings(&args.out, &dataset)?;
    rec.output(&args.out);
    write_labels(
        &dataset,
        args.labels_out.as_deref(),
        args.vocab_out.as_deref(),
        rec,
    )?;
    println!(
        "extracted {} descriptors of dimension {FEATURE_DIM}",
        dataset.len()
    );
    Ok(())
}

fn from_directory(dir: &Path, rec: &mut Recorder) -> anyhow::Result<Dataset> {
    let paths = list_images(dir)?;
    for p in &paths {
        rec.input(p)?;
    }
    let records = paths
        .par_iter()
        .map(|p| {
            let img = read_image(p)?;
            let v = descriptor(&img).with_context(|| p.display().to_string())?;
            Ok(EmbeddingRecord::new(image_id(p), v))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(Dataset::new(records, LabelVocabulary::new(), FEATURE_DIM)?)
}

fn from_synthetic(
    args: &ExtractArgs,
    params: &[u64],
    rec: &mut Recorder,
) -> anyhow::Result<Dataset> {
    let (classes, per_class, seed) = (params[0] as usize, params[1] as usize, params[2]);
    let corpus = synthetic::generate(classes, per_class, seed, args.side)?;
    let vocab = LabelVocabulary::from_tags(corpus.classes.iter().map(|c| c.name.clone()))?;
    let records = corpus
        .images
        .par_iter()
        .map(|im| {
            Ok(EmbeddingRecord::new(im.id.clone(), descriptor(&im.image)?).with_labels([im.class]))
        })
        .collect::<Result<Vec<_>, Error>>()?;

    if let Some(dir) = &args.images_out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for im in &corpus.images {
            let path = dir.join(format!("{}.png", im.id));
            write_png(&path, &im.image)?;
        }
        rec.output(dir);
    }
    if let Some(path) = &args.split_out {
        let database_per_class = per_class - per_class / 3;
        let in_database: BTreeSet<&str> = corpus
            .images
            .chunks(per_class)
            .flat_map(|class| class[..database_per_class].iter().map(|im| im.id.as_str()))
            .collect();
        let (database, query): (Vec<String>, Vec<String>) = corpus
            .images
            .iter()
            .map(|im| im.id.clone())
            .partition(|id| in_database.contains(id.as_str()));
        let split = SplitSpec { database, query };
        split.save(path)?;
        rec.output(path);
    }
    Ok(Dataset::new(records, vocab, FEATURE_DIM)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_lines_report_offsets() {
        let ok: Vec<VectorLine> =
            parse_json_lines("{\"id\":\"a\",\"vector\":[1,2]}\n\n", "vector").unwrap();
        assert_eq!(ok[0].vector, vec![1.0, 2.0]);
        assert!(ok[0].labels.is_empty());
        let err = parse_json_lines::<VectorLine>("{\"id\":\"a\",\"vector\":[1]}\nnope\n", "vector")
            .unwrap_err();
        assert!(matches!(err, Error::Format { offset: 24, .. }));
    }
}
