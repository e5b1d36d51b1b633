use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nas_asr::audio::{extract_mfcc, read_feature_cache, read_wav, FrontendConfig};
use nas_asr::corpus::{labels_to_transcript, load_manifest};
use nas_asr::decoder::greedy_labels;
use nas_asr::nas::ChildNetwork;

const ARCH: &str = "f8,kh3,kw3,sh2,sw1,mp0,bn1,rnn0,h16";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_nas-asr"));
    c.env_remove("NAS_ASR_SEED").env("RUST_LOG", "warn");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("spawn nas-asr")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Small synthetic corpus under `dir/corpus`.
fn corpus(dir: &Path) {
    ok(dir, &["synth", "--out", "corpus", "--symbols", "4", "--train", "24", "--dev", "6", "--test", "6", "--seed", "2"]);
}

const TRAIN: &str = "corpus/train/manifest.jsonl";
const DEV: &str = "corpus/dev/manifest.jsonl";
const TEST: &str = "corpus/test/manifest.jsonl";

fn trained_child(dir: &Path) -> PathBuf {
    ok(dir, &["train-child", "--arch", ARCH, "--train", TRAIN, "--dev", DEV, "--steps", "150", "--lr", "0.01", "--out", "child"]);
    dir.join("child/model.nasm")
}

#[test]
fn search_writes_log_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus(d);
    fs::write(
        d.join("run.ini"),
        "seed = 5\n\n[data]\ntrain = corpus/train/manifest.jsonl\ndev = corpus/dev/manifest.jsonl\n\n\
         [space]\nmax_blocks = 1\nnum_filters = 8\nrnn = 0\n\n[train]\nmax_steps = 40\n",
    )
    .unwrap();
    let table = ok(d, &["--config", "run.ini", "search", "--budget", "2", "--batch-size", "2", "--out", "a"]);
    assert!(table.contains("architecture") && table.contains("dev PER"), "{table}");
    let log = fs::read_to_string(d.join("a/search.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    assert!(d.join("a/best.nasm").is_file() && d.join("a/best.json").is_file());

    ok(d, &["--config", "run.ini", "search", "--budget", "2", "--batch-size", "2", "--out", "b"]);
    assert_eq!(log, fs::read_to_string(d.join("b/search.jsonl")).unwrap());
}

#[test]
fn configuration_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = run(d, &["search", "--out", "x"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("data.train"), "{}", stderr(&out));

    let out = run(d, &["search", "--train", "nowhere.jsonl", "--out", "x"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("does not exist"));

    fs::write(d.join("bad.ini"), "[search]\nbudgett = 3\n").unwrap();
    let out = run(d, &["--config", "bad.ini", "search", "--out", "x"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("budgett"), "{}", stderr(&out));

    let out = run(d, &["search", "--no-such-flag"]);
    assert_eq!(code(&out), 1);

    let out = run(d, &["train-child", "--arch", "f8,kh3,zz", "--out", "x"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("column 8"), "{}", stderr(&out));
}

#[test]
fn help_documents_flags() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["decode", "--help"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    for flag in ["--checkpoint", "--manifest", "--beam", "--alpha", "--beta", "--lm", "--top-k", "--config", "--set"] {
        assert!(text.contains(flag), "missing {flag}");
    }
}

#[test]
fn extract_writes_one_cache_per_utterance() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus(d);
    let manifest = load_manifest(d.join(DEV)).unwrap();
    let two: Vec<&str> = fs::read_to_string(d.join(DEV)).unwrap().leak().lines().take(2).collect();
    fs::write(d.join("corpus/dev/two.jsonl"), two.join("\n")).unwrap();
    ok(d, &["extract", "--manifest", "corpus/dev/two.jsonl", "--out", "feats"]);
    assert_eq!(fs::read_dir(d.join("feats")).unwrap().count(), 2);

    let cfg = FrontendConfig::default();
    let e = &manifest.entries[0];
    let cached = read_feature_cache(fs::File::open(d.join(format!("feats/{}.feat", e.id))).unwrap(), cfg.hop_ms).unwrap();
    let direct = extract_mfcc(&read_wav(manifest.audio_path(e)).unwrap(), &cfg).unwrap();
    assert_eq!(cached, direct);

    let noisy = |out: &str| {
        ok(d, &["extract", "--manifest", "corpus/dev/two.jsonl", "--out", out, "--noise-snr", "10"]);
        fs::read(d.join(out).join(format!("{}.feat", e.id))).unwrap()
    };
    let first = noisy("noisy1");
    assert_eq!(first, noisy("noisy2"));
    assert_ne!(first, fs::read(d.join(format!("feats/{}.feat", e.id))).unwrap());

    fs::write(d.join("corpus/dev").join(&manifest.entries[1].audio), b"RIFF junk").unwrap();
    let out = run(d, &["extract", "--manifest", "corpus/dev/two.jsonl", "--out", "feats2"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains(&manifest.entries[1].id), "{}", stderr(&out));
}

#[test]
fn decode_score_and_greedy_equivalence() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus(d);
    let ckpt = trained_child(d);
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("child/metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["arch"], ARCH);

    ok(d, &["decode", "--checkpoint", "child/model.nasm", "--manifest", TEST, "--beam", "8", "--out", "hyp.jsonl"]);
    let report: serde_json::Value = serde_json::from_str(&ok(d, &["score", "--hyp", "hyp.jsonl", "--ref", TEST])).unwrap();
    assert!(report["per"].as_f64().unwrap().is_finite());
    assert_eq!(report["utterances"], 6);

    let greedy = ok(d, &["--workers", "3", "decode", "--checkpoint", "child/model.nasm", "--manifest", TEST, "--beam", "1"]);
    let mut net = ChildNetwork::load(fs::File::open(&ckpt).unwrap()).unwrap();
    let manifest = load_manifest(d.join(TEST)).unwrap();
    for (line, e) in greedy.lines().zip(&manifest.entries) {
        let rec: serde_json::Value = serde_json::from_str(line).unwrap();
        let feats = extract_mfcc(&read_wav(manifest.audio_path(e)).unwrap(), &FrontendConfig::default()).unwrap();
        let labels = greedy_labels(&net.logits(&feats).unwrap());
        assert_eq!(rec["id"], e.id.as_str());
        assert_eq!(rec["top"][0]["text"], labels_to_transcript(&labels, manifest.unit, net.alphabet()).as_str());
    }
}

#[test]
fn missing_hypothesis_names_the_utterance() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus(d);
    fs::write(d.join("hyp.jsonl"), "{\"id\":\"test-00000\",\"top\":[{\"text\":\"a\",\"acoustic_logp\":0,\"fused_score\":0}]}\n").unwrap();
    let out = run(d, &["score", "--hyp", "hyp.jsonl", "--ref", TEST]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("test-00001"), "{}", stderr(&out));
}

#[test]
fn lm_training_and_fusion_tuning() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus(d);
    ok(d, &["train-lm", "--manifest", TRAIN, "--order", "3", "--out", "lm.arpa"]);
    let arpa = fs::read_to_string(d.join("lm.arpa")).unwrap();
    assert!(arpa.contains("\\3-grams:") && arpa.trim_end().ends_with("\\end\\"));

    fs::write(d.join("text.txt"), "a b\nb a b\n").unwrap();
    ok(d, &["train-lm", "--text", "text.txt", "--order", "2", "--smoothing", "add-one", "--out", "lm2.arpa"]);
    assert!(fs::read_to_string(d.join("lm2.arpa")).unwrap().contains("\\2-grams:"));
    assert_eq!(code(&run(d, &["train-lm", "--text", "text.txt", "--smoothing", "kneser", "--out", "x.arpa"])), 1);

    trained_child(d);
    let choice: serde_json::Value = serde_json::from_str(&ok(
        d,
        &["tune", "--checkpoint", "child/model.nasm", "--manifest", DEV, "--lm", "lm.arpa", "--beam", "8", "--alphas", "0,0.5", "--betas", "0,1"],
    ))
    .unwrap();
    assert!(choice["error_rate"].as_f64().unwrap().is_finite());
    ok(d, &["decode", "--checkpoint", "child/model.nasm", "--manifest", TEST, "--lm", "lm.arpa", "--alpha", "0.5", "--beta", "1", "--top-k", "3", "--out", "fused.jsonl"]);
    let first: serde_json::Value = serde_json::from_str(fs::read_to_string(d.join("fused.jsonl")).unwrap().lines().next().unwrap()).unwrap();
    assert!(first["top"].as_array().unwrap().len() <= 3);
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let synth = |seed: Option<&str>, out: &str| {
        let mut c = bin();
        c.current_dir(d).args(["synth", "--out", out, "--train", "3", "--dev", "0", "--test", "0"]);
        if let Some(s) = seed {
            c.env("NAS_ASR_SEED", s);
        }
        assert!(c.status().unwrap().success());
        fs::read(d.join(out).join("train/train-00000.wav")).unwrap()
    };
    let from_env = synth(Some("9"), "env");
    ok(d, &["--seed", "9", "synth", "--out", "flag", "--train", "3", "--dev", "0", "--test", "0"]);
    assert_eq!(from_env, fs::read(d.join("flag/train/train-00000.wav")).unwrap());
    assert_ne!(from_env, synth(None, "zero"));
    assert_eq!(code(&bin().current_dir(d).env("NAS_ASR_SEED", "x").args(["synth", "--out", "bad"]).output().unwrap()), 1);
}

#[test]
fn json_logs_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .current_dir(dir.path())
        .env("RUST_LOG", "info")
        .args(["--log", "json", "synth", "--out", "c", "--train", "2", "--dev", "0", "--test", "0"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let line = String::from_utf8(out.stderr).unwrap();
    let event: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
    assert_eq!(event["fields"]["split"], "train");
}
