//! End-to-end tests of the `fundel` binary: the whole training pipeline on a
//! small fixture corpus, plus the contract around exit codes, idempotence,
//! and byte-stable outputs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fundel::corpus::save_corpus;
use fundel::{
    BiEncoderConfig, Document, EntityLabel, FunderEntity, GoldAnnotation, MetricsReport,
    PipelineConfig, Registry,
};

const BIN: &str = env!("CARGO_BIN_EXE_fundel");

fn fundel(config: &Path, args: &[&str]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.arg("--config").arg(config);
    cmd.args(args);
    cmd.env_remove("FUNDEL_ARTIFACTS");
    cmd.output().expect("spawn fundel")
}

fn fundel_env(config: &Path, args: &[&str], artifacts: &Path) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.arg("--config").arg(config);
    cmd.args(args);
    cmd.env("FUNDEL_ARTIFACTS", artifacts);
    cmd.output().expect("spawn fundel")
}

fn assert_ok(output: &Output, what: &str) {
    assert!(
        output.status.success(),
        "{what} failed with {:?}\nstdout:\n{}\nstderr:\n{}",
        output.status.code(),
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

/// Five funders mentioned through four sentence templates: twenty documents,
/// two of which also mention an organization missing from the registry.
fn write_fixture(root: &Path) -> PathBuf {
    let names = [
        "Alpha Science Fund",
        "Beta Research Council",
        "Gamma Innovation Agency",
        "Delta Health Trust",
        "Epsilon Space Program",
    ];
    let entities = names.iter().enumerate().map(|(i, name)| FunderEntity {
        id: format!("f{i}"),
        names: vec![name.to_string()],
        country: "Artonia".to_string(),
        parents: Vec::new(),
    });
    let registry = Registry::from_entities(Path::new("<fixture>"), entities.enumerate()).unwrap();
    registry.save(root.join("registry.jsonl")).unwrap();

    let templates = [
        ("The project was financed by ", " last spring."),
        ("We acknowledge ", " for continuous support."),
        ("Grants from ", " made this work possible."),
        ("Further help came from ", " throughout."),
    ];
    let mut docs = Vec::new();
    for (i, name) in names.iter().enumerate() {
        for (j, (lead, tail)) in templates.iter().enumerate() {
            let mut text = format!("{lead}{name}{tail}");
            let mut annotations = vec![GoldAnnotation {
                start: lead.chars().count(),
                end: lead.chars().count() + name.chars().count(),
                surface: name.to_string(),
                label: EntityLabel::Id(format!("f{i}")),
            }];
            // Two documents also mention an unlisted funder, so the corpus
            // carries NIL annotations end to end.
            if j == 0 && i < 2 {
                let start = text.chars().count() + " The ".chars().count();
                text.push_str(" The Omega Circle helped too.");
                annotations.push(GoldAnnotation {
                    start,
                    end: start + "Omega Circle".chars().count(),
                    surface: "Omega Circle".to_string(),
                    label: EntityLabel::Nil,
                });
            }
            docs.push(Document::new(format!("d{i}-{j}"), text, annotations).unwrap());
        }
    }
    assert_eq!(docs.len(), 20);
    save_corpus(root.join("train.jsonl"), &docs[..14]).unwrap();
    save_corpus(root.join("val.jsonl"), &docs[14..17]).unwrap();
    save_corpus(root.join("test.jsonl"), &docs[17..]).unwrap();

    let mut sentences: Vec<String> = docs.iter().map(|d| d.text.clone()).collect();
    sentences.extend(names.iter().map(|n| format!("{n} of Artonia.")));
    std::fs::write(root.join("sentences.txt"), sentences.join("\n")).unwrap();

    let mut config = PipelineConfig::default();
    config.seed = 7;
    config.paths.registry = root.join("registry.jsonl");
    config.paths.train = root.join("train.jsonl");
    config.paths.val = root.join("val.jsonl");
    config.paths.test = root.join("test.jsonl");
    config.paths.sentences = root.join("sentences.txt");
    config.paths.artifacts = root.join("artifacts");
    config.encoder.hidden_size = 32;
    config.encoder.num_layers = 2;
    config.encoder.num_heads = 2;
    config.encoder.intermediate_size = 64;
    config.encoder.max_position_embeddings = 128;
    config.encoder.max_vocab = 4096;
    config.tapt.steps = 80;
    config.tapt.batch_size = 16;
    config.tapt.micro_batch = 8;
    config.tapt.lr = 1e-3;
    config.md.epochs = 12;
    config.md.batch_size = 8;
    config.md.lr = 2e-3;
    config.biencoder = BiEncoderConfig {
        rounds: 2,
        epochs_per_round: 8,
        lr: 1e-3,
        round1_random: 4,
        k_nil: 4,
        batch_size: 16,
        mention_max_len: 48,
        entity_max_len: 64,
        ..Default::default()
    };
    config.selector.n_candidates = 5;
    config.propagate_seed();

    let path = root.join("pipeline.toml");
    config.save(&path).unwrap();
    path
}

#[test]
fn full_pipeline_on_a_fixture_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let config = write_fixture(root);
    let artifacts = root.join("artifacts");

    // Linking before anything is trained must fail and name the artifact.
    let out = fundel(&config, &["link", "--in", path(&root.join("test.jsonl")), "--out", path(&root.join("early.jsonl"))]);
    assert_eq!(out.status.code(), Some(1), "link without artifacts: {}", stderr(&out));
    let msg = stderr(&out);
    assert!(msg.contains("missing artifact"), "{msg}");
    assert!(msg.contains("md"), "{msg}");
    assert!(msg.contains("train-md"), "{msg}");
    assert!(!root.join("early.jsonl").exists());

    // Train every stage in order.
    for (stage, artifact) in [
        ("train-mlm", "encoder"),
        ("train-md", "md"),
        ("build-stats", "stats.json"),
        ("train-biencoder", "biencoder"),
        ("train-selector", "selector.json"),
    ] {
        let out = fundel(&config, &[stage]);
        assert_ok(&out, stage);
        assert!(artifacts.join(artifact).exists(), "{stage} left no {artifact}");
        let provenance = artifacts.join("provenance").join(format!("{stage}.json"));
        let record: serde_json::Value =
            serde_json::from_slice(&std::fs::read(&provenance).unwrap()).unwrap();
        assert_eq!(record["command"], stage);
        assert_eq!(record["seed"], 7);
        assert_eq!(record["config_hash"].as_str().unwrap().len(), 64);
    }
    assert!(artifacts.join("embeddings").exists());

    // Stages are idempotent: a second run without --force leaves bytes alone.
    let stats_bytes = std::fs::read(artifacts.join("stats.json")).unwrap();
    let out = fundel(&config, &["build-stats"]);
    assert_ok(&out, "repeat build-stats");
    assert!(stderr(&out).contains("exists"), "{}", stderr(&out));
    assert_eq!(std::fs::read(artifacts.join("stats.json")).unwrap(), stats_bytes);

    // ... and deterministic: --force rebuilds the same bytes.
    let out = fundel(&config, &["build-stats", "--force"]);
    assert_ok(&out, "forced build-stats");
    assert_eq!(std::fs::read(artifacts.join("stats.json")).unwrap(), stats_bytes);

    // Detection output.
    let detected = root.join("detected.jsonl");
    let out = fundel(&config, &["detect", "--in", path(&root.join("test.jsonl")), "--out", path(&detected)]);
    assert_ok(&out, "detect");
    let detected_lines = std::fs::read_to_string(&detected).unwrap().lines().count();
    assert!(detected_lines > 0, "nothing detected on the test split");

    // End-to-end linking over the test split.
    let links = root.join("links.jsonl");
    let out = fundel(&config, &["link", "--in", path(&root.join("test.jsonl")), "--out", path(&links)]);
    assert_ok(&out, "link");
    let link_bytes = std::fs::read(&links).unwrap();
    assert!(!link_bytes.is_empty(), "linking produced no mentions");

    // Identical config and seed give byte-identical linking output.
    let out = fundel(&config, &["link", "--force", "--in", path(&root.join("test.jsonl")), "--out", path(&links)]);
    assert_ok(&out, "relink");
    assert_eq!(std::fs::read(&links).unwrap(), link_bytes, "relinking changed bytes");

    // Rerunning without --force is a no-op.
    let out = fundel(&config, &["link", "--in", path(&root.join("test.jsonl")), "--out", path(&links)]);
    assert_ok(&out, "link again");
    assert!(stderr(&out).contains("exists"), "{}", stderr(&out));

    // Scores for detection and end-to-end linking.
    for task in ["md", "el"] {
        let out = fundel(&config, &[
            "evaluate", "--task", task,
            "--gold", path(&root.join("test.jsonl")),
            "--pred", path(&links),
            "--out", path(&root.join(format!("{task}.metrics.json"))),
        ]);
        assert_ok(&out, task);
        let report = MetricsReport::load(root.join(format!("{task}.metrics.json"))).unwrap();
        assert_eq!(report.task, task);
        assert!(!report.settings.is_empty());
    }

    // Disambiguation over gold spans, then the default report path.
    let ed_links = root.join("ed.jsonl");
    let out = fundel(&config, &["link", "--gold-spans", "--in", path(&root.join("test.jsonl")), "--out", path(&ed_links)]);
    assert_ok(&out, "link --gold-spans");
    let out = fundel(&config, &[
        "evaluate", "--task", "ed",
        "--gold", path(&root.join("test.jsonl")),
        "--pred", path(&ed_links),
    ]);
    assert_ok(&out, "evaluate ed");
    let report_path = root.join("ed.metrics.json");
    let report = MetricsReport::load(&report_path).unwrap();
    assert_eq!(report.task, "ed");
    let report_bytes = std::fs::read(&report_path).unwrap();

    // Reports are byte-stable under --force as well.
    let out = fundel(&config, &[
        "evaluate", "--force", "--task", "ed",
        "--gold", path(&root.join("test.jsonl")),
        "--pred", path(&ed_links),
    ]);
    assert_ok(&out, "re-evaluate ed");
    assert_eq!(std::fs::read(&report_path).unwrap(), report_bytes);

    // Timing report.
    let out = fundel(&config, &["benchmark", "--in", path(&root.join("test.jsonl")), "--repeats", "2"]);
    assert_ok(&out, "benchmark");
    let timing: serde_json::Value =
        serde_json::from_slice(&std::fs::read(artifacts.join("benchmark.json")).unwrap()).unwrap();
    assert_eq!(timing["repeats"], 2);
}

#[test]
fn artifacts_env_var_overrides_the_config_path() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let config = write_fixture(root);
    let elsewhere = root.join("elsewhere");
    std::fs::create_dir(&elsewhere).unwrap();

    let out = fundel_env(&config, &["build-stats"], &elsewhere);
    assert_ok(&out, "build-stats with FUNDEL_ARTIFACTS");
    assert!(elsewhere.join("stats.json").exists());
    assert!(!root.join("artifacts").join("stats.json").exists());
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = Command::new(BIN).arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn invalid_config_fails_with_the_field_name() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[biencoder]\nlr = -1.0\n").unwrap();
    let out = fundel(&bad, &["build-stats"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("biencoder.lr"), "{}", stderr(&out));
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}
