mod data;
mod plot;
mod retrieve;
mod style;
mod train;

use std::path::{Path, PathBuf};

use styleforge::model::io::{attach_labels, load_embeddings, read_label_sidecar};
use styleforge::retrieval::SplitSpec;
use styleforge::training::ProjectionHead;
use styleforge::{Dataset, Error};

use crate::cli::Command;
use crate::manifest::Recorder;

pub fn run(command: &Command, rec: &mut Recorder) -> anyhow::Result<()> {
    match command {
        Command::Ingest(a) => data::ingest(a, rec),
        Command::Curate(a) => data::curate(a, rec),
        Command::Dedup(a) => data::dedup(a, rec),
        Command::ExtractFeatures(a) => data::extract_features(a, rec),
        Command::Train(a) => train::train(a, rec),
        Command::Eval(a) => retrieve::eval(a, rec),
        Command::Query(a) => retrieve::query(a, rec),
        Command::Prototype(a) => style::prototype(a, rec),
        Command::Gss(a) => style::gss(a, rec),
        Command::Confusion(a) => style::confusion(a, rec),
        Command::Plot(a) => plot::plot(a, rec),
    }
}

/// Embeddings with labels joined from an optional sidecar.
fn load_dataset(
    embeddings: &Path,
    labels: Option<&Path>,
    rec: &mut Recorder,
) -> anyhow::Result<Dataset> {
    rec.input(embeddings)?;
    let mut dataset = load_embeddings(embeddings).map_err(|e| with_path(e, embeddings))?;
    if let Some(path) = labels {
        rec.input(path)?;
        let lines = read_label_sidecar(path).map_err(|e| with_path(e, path))?;
        let stats = attach_labels(&mut dataset, &lines, None)?;
        if stats.unknown_ids > 0 {
            log::warn!(
                "{}: {} sidecar ids not in the embedding file",
                path.display(),
                stats.unknown_ids
            );
        }
        log::info!("{} of {} records labelled", stats.labelled, dataset.len());
    }
    Ok(dataset)
}

fn load_head(path: Option<&Path>, rec: &mut Recorder) -> anyhow::Result<Option<ProjectionHead>> {
    path.map(|p| {
        rec.input(p)?;
        ProjectionHead::load(p).map_err(|e| with_path(e, p).into())
    })
    .transpose()
}

fn load_split(path: &Path, rec: &mut Recorder) -> anyhow::Result<SplitSpec> {
    rec.input(path)?;
    Ok(SplitSpec::load(path)?)
}

/// Format errors carry only a byte offset; name the file as well.
fn with_path(error: Error, path: &Path) -> Error {
    match error {
        Error::Format { offset, message } => {
            Error::format(offset, format!("{}: {message}", path.display()))
        }
        other => other,
    }
}

fn write_text(path: &Path, text: &str, rec: &mut Recorder) -> anyhow::Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    rec.output(path);
    Ok(())
}

/// `path` with `suffix` added to its file name.
fn appended(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

fn csv_field(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_owned()
    }
}
