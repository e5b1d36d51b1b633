use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use nas_asr::audio::{add_gaussian_noise, extract_mfcc, read_wav, write_feature_cache, FeatureMatrix};
use nas_asr::corpus::{
    aggregate, generate_synthetic_splits, labels_to_transcript, load_manifest, score_transcript,
    Manifest, ManifestEntry, SynthConfig, Unit,
};
use nas_asr::ctc::{Alphabet, LogitMatrix};
use nas_asr::decoder::{beam_decode, tune_fusion, DecodeRecord, DecoderConfig};
use nas_asr::lm::{load_arpa, save_arpa, train_ngram};
use nas_asr::nas::{
    compare_children, evaluate_child, load_features, run_search, ArchSpec, ChildEvaluator,
    ChildNetwork, ChildStatus, Controller, Dataset, SearchConfig, TrainingEvaluator,
};
use nas_asr::seed::{derive_seed, hash_label};
use nas_asr::Error;
use serde_json::json;

use crate::config::{config_error, RunConfig};

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_json(path: &Path, value: &serde_json::Value) -> anyhow::Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn load_network(path: &Path) -> anyhow::Result<ChildNetwork> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    ChildNetwork::load(BufReader::new(f)).with_context(|| format!("loading {}", path.display()))
}

fn save_network(net: &ChildNetwork, path: &Path) -> anyhow::Result<()> {
    let mut w = create(path)?;
    net.save(&mut w)?;
    w.flush()?;
    Ok(())
}

fn load_dataset(cfg: &RunConfig, path: &Path, alphabet: &Alphabet) -> anyhow::Result<Dataset> {
    let manifest = load_manifest(path)?;
    let data = Dataset::from_manifest(&manifest, alphabet, &cfg.frontend, cfg.data.features.as_deref())
        .with_context(|| format!("reading {}", path.display()))?;
    if data.utterances.is_empty() {
        bail!("{} has no utterances", path.display());
    }
    Ok(data)
}

/// Training and dev sets; the alphabet is taken from the training
/// transcripts.
fn load_train_dev(cfg: &RunConfig) -> anyhow::Result<(Dataset, Dataset)> {
    let (train_path, dev_path) = (cfg.data.train()?, cfg.data.dev()?);
    let alphabet = load_manifest(train_path)?.alphabet()?;
    let train = load_dataset(cfg, train_path, &alphabet)?;
    let dev = load_dataset(cfg, dev_path, &alphabet)?;
    tracing::info!(
        train = train.utterances.len(),
        dev = dev.utterances.len(),
        symbols = alphabet.len(),
        "datasets loaded"
    );
    Ok((train, dev))
}

fn evaluator(cfg: &RunConfig, train: Dataset, dev: Dataset) -> TrainingEvaluator {
    TrainingEvaluator {
        train,
        dev,
        config: cfg.train.clone(),
        gamma: cfg.search.gamma,
    }
}

fn rate_name(unit: Unit) -> &'static str {
    match unit {
        Unit::Word => "WER",
        Unit::Phone => "PER",
    }
}

pub fn extract(cfg: &RunConfig, manifest: &Path, out: &Path, noise_snr: Option<f64>) -> anyhow::Result<()> {
    let manifest = load_manifest(manifest)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let features = |e: &ManifestEntry| -> anyhow::Result<FeatureMatrix> {
        let Some(snr) = noise_snr else {
            return Ok(load_features(&manifest, e, &cfg.frontend, None)?);
        };
        let wav = read_wav(manifest.audio_path(e)).with_context(|| format!("utterance {:?}", e.id))?;
        let noisy = add_gaussian_noise(&wav, snr, derive_seed(cfg.seed, hash_label(&e.id)))
            .with_context(|| format!("utterance {:?}", e.id))?;
        Ok(extract_mfcc(&noisy, &cfg.frontend)?)
    };
    let mut failed = 0;
    for e in &manifest.entries {
        let written = features(e).and_then(|feat| {
            let mut w = create(&out.join(format!("{}.feat", e.id)))?;
            write_feature_cache(&mut w, &feat)?;
            w.flush()?;
            Ok(())
        });
        if let Err(err) = written {
            tracing::error!(id = %e.id, "{err:#}");
            failed += 1;
        }
    }
    tracing::info!(written = manifest.len() - failed, failed, out = %out.display(), "features extracted");
    if failed > 0 {
        bail!("{failed} of {} utterances failed", manifest.len());
    }
    Ok(())
}

pub fn train_lm(cfg: &RunConfig, text: Option<&Path>, manifest: Option<&Path>, out: &Path) -> anyhow::Result<()> {
    let sentences: Vec<String> = match (text, manifest) {
        (Some(path), _) => std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?
            .lines()
            .map(String::from)
            .collect(),
        (None, Some(path)) => load_manifest(path)?.entries.into_iter().map(|e| e.text).collect(),
        (None, None) => return Err(config_error("train-lm needs --text or --manifest")),
    };
    let model = train_ngram(&sentences, cfg.lm.order, cfg.lm.smoothing)?;
    save_arpa(&model, out)?;
    tracing::info!(order = model.order(), vocab = model.vocab().len(), out = %out.display(), "language model written");
    Ok(())
}

pub fn train_child(cfg: &RunConfig, arch: &str, out: &Path) -> anyhow::Result<()> {
    let spec: ArchSpec = arch.parse().map_err(|e: Error| config_error(format!("--arch: {e}")))?;
    let (train, dev) = load_train_dev(cfg)?;
    let eval = evaluator(cfg, train, dev).evaluate(&spec, cfg.seed)?;
    let r = &eval.report;
    let metrics = json!({
        "arch": spec.to_string(),
        "status": r.status,
        "dev_ctc": r.dev_ctc,
        "dev_error_rate": r.dev_wer,
        "train_ctc": r.train_ctc,
        "steps": r.steps,
        "reward": eval.reward,
        "message": r.message,
    });
    write_json(&out.join("metrics.json"), &metrics)?;
    let net = eval
        .network
        .ok_or_else(|| anyhow!("child {spec} {:?}: {}", r.status, r.message.as_deref().unwrap_or("")))?;
    save_network(&net, &out.join("model.nasm"))?;
    println!("{}", serde_json::to_string(&metrics)?);
    Ok(())
}

pub fn search(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let (train, dev) = load_train_dev(cfg)?;
    let test = match cfg.data.test()? {
        Some(path) => Some(load_dataset(cfg, path, &train.alphabet)?),
        None => None,
    };
    let unit = train.unit;
    let eval = evaluator(cfg, train, dev);
    let mut controller = Controller::new(&cfg.space, cfg.controller.clone(), cfg.seed)?;
    let search_cfg = SearchConfig {
        budget: cfg.search.budget,
        batch_size: cfg.search.batch_size,
        workers: cfg.workers,
        seed: cfg.seed,
    };
    let mut log = create(&out.join("search.jsonl"))?;
    let outcome = run_search(&eval, &mut controller, &search_cfg, Some(&mut log))?;
    log.flush()?;

    let best = outcome.best_result().clone();
    let mut test_scores = None;
    if let Some(mut net) = outcome.best_network {
        save_network(&net, &out.join("best.nasm"))?;
        if let Some(test) = &test {
            test_scores = Some(evaluate_child(&mut net, test)?);
        }
    }
    write_json(
        &out.join("best.json"),
        &json!({
            "child": best,
            "test_ctc": test_scores.map(|s| s.0),
            "test_error_rate": test_scores.map(|s| s.1),
        }),
    )?;

    let mut ranked: Vec<_> = outcome.results.iter().collect();
    ranked.sort_by(|a, b| compare_children(a, b));
    let fmt = |v: Option<f64>, pct: bool| match v {
        Some(x) if pct => format!("{:.2}%", 100.0 * x),
        Some(x) => format!("{x:.4}"),
        None => "-".into(),
    };
    let rate = rate_name(unit);
    let shown = &ranked[..ranked.len().min(5)];
    let w = shown.iter().map(|r| r.arch.len()).max().unwrap_or(0).max("architecture".len());
    println!("{:<5} {:<6} {:<w$} {:<11} {:>9} {:>9} {:>7}", "rank", "child", "architecture", "status", "dev CTC", format!("dev {rate}"), "reward");
    for (rank, r) in shown.iter().enumerate() {
        let status = serde_json::to_value(r.status)?;
        println!(
            "{:<5} {:<6} {:<w$} {:<11} {:>9} {:>9} {:>7.4}",
            rank + 1,
            r.index,
            r.arch,
            status.as_str().unwrap_or_default(),
            fmt(r.dev_ctc, false),
            fmt(r.dev_wer, true),
            r.reward
        );
    }
    if let Some((ctc, err)) = test_scores {
        println!("selected child {}: test CTC {ctc:.4}, test {rate} {:.2}%", best.index, 100.0 * err);
    }
    if best.status != ChildStatus::Trained {
        bail!("no child trained successfully");
    }
    Ok(())
}

fn decoder_config(cfg: &RunConfig) -> anyhow::Result<DecoderConfig> {
    let lm = match &cfg.decoder.lm {
        Some(path) => Some(Arc::new(load_arpa(path)?)),
        None => None,
    };
    let dc = DecoderConfig {
        beam_width: cfg.decoder.beam_width,
        alpha: cfg.decoder.alpha,
        beta: cfg.decoder.beta,
        lm,
    };
    dc.validate().map_err(|e| config_error(format!("[decoder] {e}")))?;
    Ok(dc)
}

/// Acoustic posteriors for every manifest entry, computed on `workers`
/// threads over contiguous chunks; results keep manifest order.
fn posteriors(cfg: &RunConfig, net: &ChildNetwork, manifest: &Manifest) -> anyhow::Result<Vec<LogitMatrix>> {
    if cfg.frontend.n_ceps != net.n_feats() {
        return Err(config_error(format!(
            "frontend.n_ceps is {} but the checkpoint expects {} features",
            cfg.frontend.n_ceps,
            net.n_feats()
        )));
    }
    let features = cfg.data.features.as_deref();
    let run = |entries: &[nas_asr::corpus::ManifestEntry]| -> anyhow::Result<Vec<LogitMatrix>> {
        let mut net = net.clone();
        entries
            .iter()
            .map(|e| {
                let feat: FeatureMatrix = load_features(manifest, e, &cfg.frontend, features)?;
                net.logits(&feat).with_context(|| format!("utterance {:?}", e.id))
            })
            .collect()
    };
    let chunk = manifest.len().div_ceil(cfg.workers).max(1);
    let parts: Vec<anyhow::Result<Vec<LogitMatrix>>> = std::thread::scope(|s| {
        let handles: Vec<_> = manifest.entries.chunks(chunk).map(|c| s.spawn(move || run(c))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(anyhow!("decode worker panicked"))))
            .collect()
    });
    let mut out = Vec::with_capacity(manifest.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

pub fn decode(cfg: &RunConfig, checkpoint: &Path, manifest: &Path, out: Option<&Path>) -> anyhow::Result<()> {
    let net = load_network(checkpoint)?;
    let manifest = load_manifest(manifest)?;
    let dc = decoder_config(cfg)?;
    let alphabet = net.alphabet().clone();
    let logits = posteriors(cfg, &net, &manifest)?;
    let mut w: Box<dyn Write> = match out {
        Some(path) => Box::new(create(path)?),
        None => Box::new(std::io::stdout().lock()),
    };
    for (e, l) in manifest.entries.iter().zip(&logits) {
        let mut hyps = beam_decode(l, &dc, &alphabet).with_context(|| format!("utterance {:?}", e.id))?;
        for h in &mut hyps {
            h.text = labels_to_transcript(&h.labels, manifest.unit, &alphabet);
        }
        serde_json::to_writer(&mut w, &DecodeRecord::new(e.id.clone(), &hyps, cfg.decoder.top_k))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    tracing::info!(utterances = manifest.len(), "decoded");
    Ok(())
}

pub fn tune(cfg: &RunConfig, checkpoint: &Path, manifest: &Path, alphas: &[f64], betas: &[f64]) -> anyhow::Result<()> {
    if cfg.decoder.lm.is_none() {
        return Err(config_error("tune needs a language model (--lm or decoder.lm)"));
    }
    let net = load_network(checkpoint)?;
    let manifest = load_manifest(manifest)?;
    let dc = decoder_config(cfg)?;
    let logits = posteriors(cfg, &net, &manifest)?;
    let dev: Vec<(LogitMatrix, String)> =
        logits.into_iter().zip(&manifest.entries).map(|(l, e)| (l, e.text.clone())).collect();
    let choice = tune_fusion(&dev, alphas, betas, &dc, net.alphabet(), manifest.unit)?;
    println!("{}", serde_json::to_string(&choice)?);
    Ok(())
}

pub fn score(hyp: &Path, reference: &Path) -> anyhow::Result<()> {
    let reference = load_manifest(reference)?;
    let f = File::open(hyp).with_context(|| format!("opening {}", hyp.display()))?;
    let mut hyps: HashMap<String, String> = HashMap::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DecodeRecord =
            serde_json::from_str(&line).with_context(|| format!("{}: line {}", hyp.display(), n + 1))?;
        let text = rec.top.into_iter().next().map(|t| t.text).unwrap_or_default();
        if hyps.insert(rec.id.clone(), text).is_some() {
            bail!("{}: duplicate hypothesis for utterance {:?}", hyp.display(), rec.id);
        }
    }
    let mut results = Vec::with_capacity(reference.len());
    for e in &reference.entries {
        let h = hyps
            .remove(&e.id)
            .ok_or_else(|| anyhow!("no hypothesis for utterance {:?}", e.id))?;
        results.push(score_transcript(&e.text, &h, reference.unit).with_context(|| format!("utterance {:?}", e.id))?);
    }
    if let Some(id) = hyps.keys().min() {
        bail!("hypothesis for utterance {id:?} has no reference");
    }
    let total = aggregate(&results);
    let report = json!({
        "unit": reference.unit,
        "utterances": results.len(),
        "substitutions": total.substitutions,
        "insertions": total.insertions,
        "deletions": total.deletions,
        "reference_tokens": total.reference_len,
        rate_name(reference.unit).to_lowercase(): total.rate,
    });
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

pub fn synth(cfg: &RunConfig, out: &Path, symbols: usize, sizes: [usize; 3], noise: f64) -> anyhow::Result<()> {
    let sc = SynthConfig {
        n_symbols: symbols,
        noise_level: noise,
        seed: cfg.seed,
        ..Default::default()
    };
    let names = ["train", "dev", "test"];
    let splits: Vec<(&str, usize)> = names.iter().copied().zip(sizes).filter(|s| s.1 > 0).collect();
    let corpora = generate_synthetic_splits(&sc, &splits).map_err(|e| config_error(e.to_string()))?;
    for ((name, _), corpus) in splits.iter().zip(&corpora) {
        corpus.write(out.join(name))?;
        tracing::info!(split = name, utterances = corpus.utterances.len(), "synthetic split written");
    }
    Ok(())
}
