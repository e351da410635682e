//! Benchmarks for the pieces whose speed shapes end-to-end linking: string
//! similarity (runs once per candidate label), candidate ranking against
//! precomputed entity embeddings, surface statistics construction, and the
//! evaluation metrics.

use std::collections::BTreeMap;
use std::path::Path;

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use fundel::corpus::Span;
use fundel::eval::{ed_metrics, el_metrics, md_metrics};
use fundel::{
    train_biencoder, BiEncoderConfig, Document, EncoderCheckpoint, EncoderConfig, EntityLabel,
    FunderEntity, GoldAnnotation, LabeledSpan, Registry, SurfaceFormTable, Vocab,
};

fn toy_registry(n: usize) -> Registry {
    let first = [
        "Alpha", "Beta", "Gamma", "Delta", "Epsilon", "Zeta", "Eta", "Theta", "Iota", "Kappa",
    ];
    let second = ["Science", "Research", "Innovation", "Health", "Space"];
    let third = ["Fund", "Council", "Agency", "Trust", "Program"];
    let entities = (0..n).map(|i| FunderEntity {
        id: format!("f{i:03}"),
        names: vec![format!(
            "{} {} {}",
            first[i % first.len()],
            second[(i / first.len()) % second.len()],
            third[(i / first.len() / second.len()) % third.len()]
        )],
        country: "Artonia".to_string(),
        parents: Vec::new(),
    });
    Registry::from_entities(Path::new("<bench>"), entities.enumerate()).unwrap()
}

fn toy_documents(registry: &Registry) -> Vec<Document> {
    let templates = [
        ("The study was financed by ", " last year."),
        ("We thank ", " for steady support."),
        ("Grants from ", " made the survey possible."),
    ];
    let mut docs = Vec::new();
    for (i, entity) in registry.iter().enumerate() {
        let name = &entity.names[0];
        let (lead, tail) = templates[i % templates.len()];
        let text = format!("{lead}{name}{tail}");
        let start = lead.chars().count();
        let ann = GoldAnnotation {
            start,
            end: start + name.chars().count(),
            surface: name.clone(),
            label: EntityLabel::Id(entity.id.clone()),
        };
        docs.push(Document::new(format!("d{i}"), text, vec![ann]).unwrap());
    }
    docs
}

fn bench_similarity(c: &mut Criterion) {
    let registry = toy_registry(50);
    let mention = "Alpha Science Fund";
    c.bench_function("levenshtein/18-char pair", |b| {
        b.iter(|| fundel::levenshtein(black_box(mention), black_box("Alpha Sciences Fund")))
    });
    c.bench_function("max_label_similarity/50 entities", |b| {
        b.iter(|| {
            registry
                .iter()
                .map(|e| fundel::max_label_similarity(black_box(mention), e))
                .sum::<f64>()
        })
    });
}

fn bench_ranking(c: &mut Criterion) {
    let registry = toy_registry(100);
    let docs = toy_documents(&registry);
    let mut texts: Vec<String> = docs.iter().map(|d| d.text.clone()).collect();
    for entity in registry.iter() {
        texts.extend(entity.names.iter().cloned());
        texts.push(entity.country.clone());
    }
    let vocab = Vocab::build(texts.iter().map(String::as_str), 4096);
    let config = EncoderConfig::tiny(vocab.len());
    let base = EncoderCheckpoint::init(&config, &vocab, 17).unwrap();
    let bi_config = BiEncoderConfig {
        rounds: 1,
        epochs_per_round: 1,
        lr: 1e-3,
        batch_size: 16,
        mention_max_len: 48,
        entity_max_len: 64,
        seed: 17,
        ..Default::default()
    };
    let model = train_biencoder(&docs, &registry, &base, &bi_config).unwrap().model;
    let embeddings = model.embed_registry(&registry).unwrap();
    let doc = &docs[0];
    let input = model.mention_input(&doc.text, doc.annotations[0].span());

    c.bench_function("rank_candidates/100 precomputed entities", |b| {
        b.iter(|| model.rank_candidates(black_box(&input), &embeddings, 10).unwrap())
    });
    c.bench_function("embed mention/tiny encoder", |b| {
        b.iter(|| model.mention_input(black_box(&doc.text), doc.annotations[0].span()))
    });
}

fn bench_stats(c: &mut Criterion) {
    let registry = toy_registry(100);
    let docs = toy_documents(&registry);
    c.bench_function("surface_table/100 documents", |b| {
        b.iter(|| SurfaceFormTable::build(black_box(&docs)))
    });
}

fn bench_metrics(c: &mut Criterion) {
    let registry = toy_registry(100);
    let docs = toy_documents(&registry);
    let mut gold_md: BTreeMap<String, Vec<Span>> = BTreeMap::new();
    let mut gold_labeled: BTreeMap<String, Vec<LabeledSpan>> = BTreeMap::new();
    for doc in &docs {
        let spans: Vec<Span> = doc.annotations.iter().map(|a| a.span()).collect();
        let labeled: Vec<LabeledSpan> = doc
            .annotations
            .iter()
            .map(|a| LabeledSpan { span: a.span(), label: a.label.clone() })
            .collect();
        gold_md.insert(doc.doc_id.clone(), spans);
        gold_labeled.insert(doc.doc_id.clone(), labeled);
    }
    // A plausible system output: every third mention mislabeled, every
    // seventh predicted NIL.
    let mut pred_labeled = gold_labeled.clone();
    for (i, spans) in pred_labeled.values_mut().enumerate() {
        for span in spans.iter_mut() {
            if i % 7 == 0 {
                span.label = EntityLabel::Nil;
            } else if i % 3 == 0 {
                span.label = EntityLabel::Id("f000".to_string());
            }
        }
    }

    c.bench_function("md_metrics/100 documents", |b| {
        b.iter(|| md_metrics(black_box(&gold_md), &gold_md).unwrap())
    });
    c.bench_function("ed_metrics/100 documents", |b| {
        b.iter(|| ed_metrics(black_box(&gold_labeled), &pred_labeled).unwrap())
    });
    c.bench_function("el_metrics/100 documents", |b| {
        b.iter(|| el_metrics(black_box(&gold_labeled), &pred_labeled).unwrap())
    });
}

criterion_group!(
    benches,
    bench_similarity,
    bench_ranking,
    bench_stats,
    bench_metrics
);
criterion_main!(benches);
