use std::collections::BTreeSet;

use styleforge::curation::{apply_dedup, curate, dedup, CaptionRecord};
use styleforge::features::{descriptor, synthetic};
use styleforge::model::io::{
    attach_labels, decode_embeddings, encode_embeddings, label_lines, LabelLine,
};
use styleforge::model::normalize;
use styleforge::retrieval::{evaluate, EvalOptions, SplitSpec};
use styleforge::training::{train, TrainConfig, TrainingSet};
use styleforge::{Dataset, EmbeddingRecord, LabelSet, LabelVocabulary};

fn small_corpus() -> (Vec<synthetic::SyntheticImage>, TrainingSet) {
    let corpus = synthetic::generate(4, 10, 11, 24).unwrap();
    let set = TrainingSet::from_images(
        corpus.images.iter().map(|im| im.image.clone()).collect(),
        corpus
            .images
            .iter()
            .map(|im| LabelSet::from([im.class]))
            .collect(),
    )
    .unwrap();
    (corpus.images, set)
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

#[test]
fn image_training_lowers_the_loss() {
    let (_, set) = small_corpus();
    let config = TrainConfig {
        iterations: 300,
        batch_size: 8,
        seed: 2,
        ..TrainConfig::default()
    };
    let outcome = train(&set, &config).unwrap();
    let early = outcome.trace.mean_combined(0..30);
    let late = outcome.trace.mean_combined(270..300);
    assert!(late < early, "loss went from {early} to {late}");
}

#[test]
fn training_does_not_depend_on_thread_count() {
    let (_, set) = small_corpus();
    let config = TrainConfig {
        iterations: 40,
        batch_size: 8,
        seed: 5,
        ..TrainConfig::default()
    };
    let one = in_pool(1, || train(&set, &config).unwrap());
    let four = in_pool(4, || train(&set, &config).unwrap());
    assert_eq!(one.head.weights(), four.head.weights());
    assert_eq!(one.trace, four.trace);
}

#[test]
fn dedup_then_evaluate() {
    let (images, _) = small_corpus();
    let mut records: Vec<EmbeddingRecord> = images
        .iter()
        .map(|im| {
            EmbeddingRecord::new(im.id.clone(), descriptor(&im.image).unwrap())
                .with_labels([im.class])
        })
        .collect();
    // Exact copies under new ids, labelled with an extra tag.
    for im in images.iter().step_by(5) {
        let v = descriptor(&im.image).unwrap();
        records.push(EmbeddingRecord::new(format!("{}-copy", im.id), v).with_labels([im.class, 4]));
    }
    let vocab = LabelVocabulary::from_tags(["c0", "c1", "c2", "c3", "copy"]).unwrap();
    let dim = records[0].vector.len();
    let dataset = Dataset::new(records, vocab, dim).unwrap();

    let result = dedup(&dataset, 0.999_999).unwrap();
    let kept = apply_dedup(&dataset, &result).unwrap();
    assert_eq!(kept.len(), 40);
    assert!(kept.records.iter().all(|r| !r.id.ends_with("-copy")));
    let merged = kept
        .records
        .iter()
        .filter(|r| r.labels.contains(&4))
        .count();
    assert_eq!(merged, 8);

    let reloaded = decode_embeddings(&encode_embeddings(&kept).unwrap()).unwrap();
    let mut relabelled = reloaded.clone();
    attach_labels(
        &mut relabelled,
        &label_lines(&kept),
        Some(kept.vocab.clone()),
    )
    .unwrap();
    assert_eq!(
        relabelled
            .records
            .iter()
            .map(|r| &r.labels)
            .collect::<Vec<_>>(),
        kept.records.iter().map(|r| &r.labels).collect::<Vec<_>>()
    );

    let (database, query): (Vec<String>, Vec<String>) = kept
        .records
        .iter()
        .map(|r| r.id.clone())
        .partition(|id| !id.ends_with('9'));
    let report = evaluate(
        &relabelled,
        &SplitSpec { database, query },
        None,
        &[1, 5],
        EvalOptions::default(),
    )
    .unwrap();
    assert_eq!(report.per_query.len(), 4);
    assert_eq!(report.duplicate_queries, 0);
}

#[test]
fn curated_labels_drive_retrieval() {
    let bank = LabelVocabulary::from_tags(["red", "blue", "painting"]).unwrap();
    let captions: Vec<CaptionRecord> = [
        ("a", "A red painting"),
        ("b", "red sunset painting"),
        ("c", "blue sea painting"),
        ("d", "Blue hour"),
        ("e", "a bluebird"),
    ]
    .iter()
    .map(|(id, caption)| CaptionRecord {
        id: (*id).into(),
        caption: (*caption).into(),
    })
    .collect();
    let out = curate(&captions, &bank, 2).unwrap();
    assert_eq!(out.vocab.tags(), ["red", "blue"]);
    let ids: Vec<&str> = out.labelled.iter().map(|(id, _)| id.as_str()).collect();
    assert_eq!(ids, ["a", "b", "c", "d"]);

    let vectors = [[1.0, 0.1], [0.9, 0.2], [0.1, 1.0], [0.2, 0.9]];
    let records = ids
        .iter()
        .zip(vectors)
        .map(|(id, v)| EmbeddingRecord::new(*id, normalize(&v).unwrap()))
        .collect();
    let mut dataset = Dataset::new(records, LabelVocabulary::new(), 2).unwrap();
    let lines: Vec<LabelLine> = out
        .labelled
        .iter()
        .map(|(id, set)| LabelLine {
            id: id.clone(),
            labels: out.vocab.names(set),
        })
        .collect();
    attach_labels(&mut dataset, &lines, None).unwrap();
    let split = SplitSpec {
        database: vec!["a".into(), "c".into()],
        query: vec!["b".into(), "d".into()],
    };
    let report = evaluate(&dataset, &split, None, &[1], EvalOptions::default()).unwrap();
    assert_eq!(report.map_at_k[&1], 1.0);
    let tags: BTreeSet<&str> = dataset.vocab.tags().iter().map(String::as_str).collect();
    assert_eq!(tags, BTreeSet::from(["red", "blue"]));
}
