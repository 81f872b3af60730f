//! On-disk formats for embeddings, label sidecars and vocabularies.
//!
//! Embedding file layout (little-endian):
//!
//! ```text
//! "CSDE"            4 bytes
//! version           u16 (= 1)
//! dim               u32
//! count             u64
//! count × {
//!     id_len        u16
//!     id            id_len bytes, UTF-8
//!     vector        dim × f32
//! }
//! ```
//!
//! Vectors are widened to `f64` on load and narrowed on save, so a file
//! survives load→save unchanged byte for byte.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, EmbeddingRecord, LabelSet, LabelVocabulary};
use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"CSDE";
pub const EMBEDDING_VERSION: u16 = 1;

/// Little-endian cursor that reports the byte offset of every failure.
pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let slice = &self.buf[self.pos..end];
                self.pos = end;
                Ok(slice)
            }
            None => Err(Error::format(
                self.offset(),
                format!(
                    "truncated file: expected {n} bytes for {what}, {} remain",
                    self.buf.len() - self.pos
                ),
            )),
        }
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub(crate) fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(n * 4, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }

    pub(crate) fn expect_end(&self) -> Result<()> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(Error::format(
                self.offset(),
                format!(
                    "{} trailing bytes after last record",
                    self.buf.len() - self.pos
                ),
            ))
        }
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_embeddings(dataset: &Dataset) -> Result<Vec<u8>> {
    let dim = u32::try_from(dataset.dim).map_err(|_| Error::validation("dimension exceeds u32"))?;
    let mut out = Vec::with_capacity(18 + dataset.len() * (2 + 16 + dataset.dim * 4));
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    out.extend_from_slice(&(dataset.len() as u64).to_le_bytes());
    for record in &dataset.records {
        let id = record.id.as_bytes();
        let len = u16::try_from(id.len()).map_err(|_| {
            Error::validation(format!("id {:?} longer than 65535 bytes", record.id))
        })?;
        if record.vector.len() != dataset.dim {
            return Err(Error::validation(format!(
                "record {:?} has {} entries, expected {}",
                record.id,
                record.vector.len(),
                dataset.dim
            )));
        }
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(id);
        for &x in &record.vector {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses an embedding file. Labels are left empty and the vocabulary is
/// empty; attach them with [`attach_labels`].
pub fn decode_embeddings(bytes: &[u8]) -> Result<Dataset> {
    let mut r = ByteReader::new(bytes);
    let magic = r.take(4, "magic")?;
    if magic != EMBEDDING_MAGIC {
        return Err(Error::format(
            0,
            format!("bad magic {magic:?}, expected \"CSDE\""),
        ));
    }
    let version_at = r.offset();
    let version = r.u16("version")?;
    if version != EMBEDDING_VERSION {
        return Err(Error::format(
            version_at,
            format!("unsupported version {version}"),
        ));
    }
    let dim_at = r.offset();
    let dim = r.u32("dim")? as usize;
    if dim == 0 {
        return Err(Error::format(dim_at, "dimension must be positive"));
    }
    let count = r.u64("count")?;
    // Cap the allocation by what the remaining bytes could possibly hold.
    let remaining = (bytes.len() as u64).saturating_sub(r.offset());
    let capacity = count.min(remaining / (2 + 4 * dim as u64));
    let mut records = Vec::with_capacity(capacity as usize);
    for i in 0..count {
        let len = r.u16(&format!("id length of record {i}"))? as usize;
        let id_at = r.offset();
        let id_bytes = r.take(len, &format!("id of record {i}"))?;
        let id = std::str::from_utf8(id_bytes)
            .map_err(|_| Error::format(id_at, format!("id of record {i} is not UTF-8")))?
            .to_owned();
        let vector = r.f32s(dim, &format!("vector of record {i}"))?;
        records.push(EmbeddingRecord::new(id, vector));
    }
    r.expect_end()?;
    Dataset::new(records, LabelVocabulary::new(), dim)
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    decode_embeddings(&read_file(path)?)
}

pub fn save_embeddings(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    write_file(path.as_ref(), &encode_embeddings(dataset)?)
}

/// One line of the label sidecar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelLine {
    pub id: String,
    pub labels: Vec<String>,
}

pub fn parse_label_sidecar(text: &str) -> Result<Vec<LabelLine>> {
    let mut lines = Vec::new();
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if !trimmed.is_empty() {
            let parsed: LabelLine = serde_json::from_str(trimmed)
                .map_err(|e| Error::format(offset, format!("invalid label line: {e}")))?;
            lines.push(parsed);
        }
        offset += line.len() as u64;
    }
    Ok(lines)
}

pub fn read_label_sidecar(path: impl AsRef<Path>) -> Result<Vec<LabelLine>> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|e| {
        Error::format(
            e.utf8_error().valid_up_to() as u64,
            "label sidecar is not UTF-8",
        )
    })?;
    parse_label_sidecar(&text)
}

pub fn label_lines(dataset: &Dataset) -> Vec<LabelLine> {
    dataset
        .records
        .iter()
        .map(|r| LabelLine {
            id: r.id.clone(),
            labels: dataset.vocab.names(&r.labels),
        })
        .collect()
}

pub fn encode_label_sidecar(lines: &[LabelLine]) -> String {
    let mut out = String::new();
    for line in lines {
        out.push_str(&serde_json::to_string(line).expect("label line serializes"));
        out.push('\n');
    }
    out
}

pub fn write_label_sidecar(path: impl AsRef<Path>, lines: &[LabelLine]) -> Result<()> {
    write_file(path.as_ref(), encode_label_sidecar(lines).as_bytes())
}

/// Outcome of joining a sidecar onto a dataset.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AttachStats {
    pub labelled: usize,
    pub unknown_ids: usize,
}

/// Sets record labels from sidecar lines. With a vocabulary, tags outside
/// it are an error; without one, a vocabulary is grown in first-appearance
/// order. Sidecar ids absent from the dataset are counted and skipped.
pub fn attach_labels(
    dataset: &mut Dataset,
    lines: &[LabelLine],
    vocab: Option<LabelVocabulary>,
) -> Result<AttachStats> {
    let fixed = vocab.is_some();
    let mut vocab = vocab.unwrap_or_default();
    let index = dataset
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.id.clone(), i))
        .collect::<std::collections::HashMap<_, _>>();
    let mut stats = AttachStats::default();
    let mut assigned: Vec<Option<LabelSet>> = vec![None; dataset.len()];
    for line in lines {
        let mut set = LabelSet::new();
        for tag in &line.labels {
            let i = if fixed {
                vocab.index_of(tag).ok_or_else(|| {
                    Error::validation(format!(
                        "record {:?} has tag {tag:?} outside the vocabulary",
                        line.id
                    ))
                })?
            } else {
                vocab.intern(tag)?
            };
            set.insert(i);
        }
        match index.get(&line.id) {
            Some(&i) => {
                if assigned[i].is_some() {
                    return Err(Error::validation(format!(
                        "duplicate sidecar id {:?}",
                        line.id
                    )));
                }
                assigned[i] = Some(set);
                stats.labelled += 1;
            }
            None => stats.unknown_ids += 1,
        }
    }
    for (record, labels) in dataset.records.iter_mut().zip(assigned) {
        record.labels = labels.unwrap_or_default();
    }
    dataset.vocab = vocab;
    Ok(stats)
}

pub fn parse_vocabulary(text: &str) -> Result<LabelVocabulary> {
    LabelVocabulary::from_tags(text.lines().filter(|l| !l.trim().is_empty()))
}

pub fn read_vocabulary(path: impl AsRef<Path>) -> Result<LabelVocabulary> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut tags = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            tags.push(line);
        }
    }
    LabelVocabulary::from_tags(tags)
}

pub fn write_vocabulary(path: impl AsRef<Path>, vocab: &LabelVocabulary) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for tag in vocab.tags() {
        writeln!(file, "{tag}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
