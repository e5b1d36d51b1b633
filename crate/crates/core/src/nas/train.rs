use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::child::ChildNetwork;
use crate::audio::{extract_mfcc, read_feature_cache, read_wav, FeatureMatrix, FrontendConfig};
use crate::corpus::{
    aggregate, labels_to_transcript, score_transcript, transcript_to_labels, Manifest,
    ManifestEntry, SyntheticCorpus, Unit,
};
use crate::ctc::{ctc_loss, min_frames, Alphabet, CtcResult, LabelSequence, LogitMatrix};
use crate::decoder::greedy_labels;
use crate::error::{Error, Result};
use crate::nn::{Adam, Mode, OptimizerConfig, Parameterized, StepOutcome};

/// Features and target of one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub features: FeatureMatrix,
    pub labels: LabelSequence,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub alphabet: Alphabet,
    pub unit: Unit,
    pub utterances: Vec<Utterance>,
}

impl Dataset {
    /// MFCC features for every utterance of a synthetic corpus.
    pub fn from_synthetic(corpus: &SyntheticCorpus, frontend: &FrontendConfig) -> Result<Self> {
        let utterances = corpus
            .utterances
            .iter()
            .map(|u| {
                Ok(Utterance {
                    id: u.id.clone(),
                    features: extract_mfcc(&u.wav, frontend)?,
                    labels: transcript_to_labels(&u.text, Unit::Phone, &corpus.alphabet)?,
                    text: u.text.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            alphabet: corpus.alphabet.clone(),
            unit: Unit::Phone,
            utterances,
        })
    }

    /// Features and targets for every manifest entry; see [`load_features`].
    pub fn from_manifest(
        manifest: &Manifest,
        alphabet: &Alphabet,
        frontend: &FrontendConfig,
        features: Option<&Path>,
    ) -> Result<Self> {
        let utterances = manifest
            .entries
            .iter()
            .map(|e| {
                let tag = |err: Error| Error::invalid(format!("utterance {:?}: {err}", e.id));
                Ok(Utterance {
                    id: e.id.clone(),
                    features: load_features(manifest, e, frontend, features)?,
                    labels: transcript_to_labels(&e.text, manifest.unit, alphabet).map_err(tag)?,
                    text: e.text.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            alphabet: alphabet.clone(),
            unit: manifest.unit,
            utterances,
        })
    }

    pub fn n_feats(&self) -> Option<usize> {
        self.utterances.first().map(|u| u.features.n_feats())
    }

    pub fn min_frames(&self) -> Option<usize> {
        self.utterances.iter().map(|u| u.features.n_frames()).min()
    }
}

/// Features of one manifest entry, from `<features>/<id>.feat` when a cache
/// directory is given, otherwise extracted from its audio. Errors name the
/// utterance.
pub fn load_features(
    manifest: &Manifest,
    entry: &ManifestEntry,
    frontend: &FrontendConfig,
    features: Option<&Path>,
) -> Result<FeatureMatrix> {
    let tag = |err: Error| Error::invalid(format!("utterance {:?}: {err}", entry.id));
    match features {
        Some(dir) => {
            let path = dir.join(format!("{}.feat", entry.id));
            let file = std::fs::File::open(&path).map_err(|err| tag(Error::file(&path, err)))?;
            read_feature_cache(std::io::BufReader::new(file), frontend.hop_ms).map_err(tag)
        }
        None => extract_mfcc(&read_wav(manifest.audio_path(entry)).map_err(tag)?, frontend).map_err(tag),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Upper bound on per-utterance gradient steps.
    pub max_steps: usize,
    /// Steps between dev evaluations.
    pub eval_every: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    /// Smallest dev CTC decrease that counts as improvement.
    pub min_delta: f64,
    pub optimizer: OptimizerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_steps: 2000,
            eval_every: 200,
            patience: 3,
            min_delta: 1e-3,
            optimizer: OptimizerConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChildStatus {
    Trained,
    /// The architecture cannot emit every target (too few output frames).
    Infeasible,
    /// Training produced a non-finite loss.
    Diverged,
    /// Evaluation raised an error or panicked.
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub status: ChildStatus,
    /// Mean dev CTC of the kept weights.
    pub dev_ctc: Option<f64>,
    /// Dev error rate (WER or PER by unit) from greedy decoding.
    pub dev_wer: Option<f64>,
    /// Mean training CTC over the last evaluation window.
    pub train_ctc: Option<f64>,
    pub steps: usize,
    pub message: Option<String>,
}

impl TrainReport {
    pub fn failed(status: ChildStatus, message: impl Into<String>) -> Self {
        TrainReport {
            status,
            dev_ctc: None,
            dev_wer: None,
            train_ctc: None,
            steps: 0,
            message: Some(message.into()),
        }
    }
}

/// `gamma * (1 - clamp(wer, 0, 1))`; children without a dev error rate
/// (infeasible, diverged, failed) get 0.
pub fn compute_reward(dev_wer: Option<f64>, gamma: f64) -> f64 {
    match dev_wer {
        Some(w) if w.is_finite() => gamma * (1.0 - w.clamp(0.0, 1.0)),
        _ => 0.0,
    }
}

/// Returns the first utterance the network cannot align, if any.
pub fn check_feasible<'a>(net: &ChildNetwork, data: &'a Dataset) -> Option<(&'a Utterance, usize)> {
    data.utterances.iter().find_map(|u| {
        let need = min_frames(&u.labels).max(1);
        match net.output_frames(u.features.n_frames()) {
            Some(t) if t >= need => None,
            t => Some((u, t.unwrap_or(0))),
        }
    })
}

/// Mean CTC loss and greedy error rate.
pub fn evaluate_child(net: &mut ChildNetwork, data: &Dataset) -> Result<(f64, f64)> {
    if data.utterances.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    let mut total = 0.0;
    let mut scores = Vec::with_capacity(data.utterances.len());
    for u in &data.utterances {
        let logits = net.logits(&u.features)?;
        total += ctc_loss(&logits, &u.labels)?.loss();
        scores.push(score_labels(&logits, u, data)?);
    }
    Ok((total / data.utterances.len() as f64, aggregate(&scores).rate))
}

fn score_labels(
    logits: &LogitMatrix,
    u: &Utterance,
    data: &Dataset,
) -> Result<crate::corpus::EditDistanceResult> {
    let hyp = labels_to_transcript(&greedy_labels(logits), data.unit, &data.alphabet);
    let reference = labels_to_transcript(&u.labels, data.unit, &data.alphabet);
    score_transcript(&reference, &hyp, data.unit)
}

/// CTC training with Adam, one utterance per step, evaluating on `dev`
/// every `eval_every` steps and keeping the best-scoring weights.
pub fn train_child(
    net: &mut ChildNetwork,
    train: &Dataset,
    dev: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainReport> {
    if train.utterances.is_empty() || dev.utterances.is_empty() {
        return Err(Error::invalid("training and dev sets must be non-empty"));
    }
    if cfg.eval_every == 0 {
        return Err(Error::invalid("eval_every must be at least 1"));
    }
    for data in [train, dev] {
        if let Some((u, frames)) = check_feasible(net, data) {
            return Ok(TrainReport::failed(
                ChildStatus::Infeasible,
                format!(
                    "{}: {frames} output frames cannot carry {} labels",
                    u.id,
                    u.labels.len()
                ),
            ));
        }
    }

    let mut adam = Adam::new(cfg.optimizer.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..train.utterances.len()).collect();
    let mut cursor = order.len();

    let mut best: Option<(f64, f64, ChildNetwork)> = None;
    let mut stale = 0;
    let mut window = (0.0, 0usize);
    let mut train_ctc = None;
    let mut step = 0;

    while step < cfg.max_steps {
        if cursor == order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let u = &train.utterances[order[cursor]];
        cursor += 1;

        net.zero_grad();
        let act = net.forward(&u.features, Mode::Train)?;
        let logits = LogitMatrix::from_activations(&act);
        let result = match logits {
            Ok(l) => ctc_loss(&l, &u.labels)?,
            Err(_) => CtcResult::Infeasible {
                min_frames: 0,
                frames: 0,
            },
        };
        let (loss, grad) = match result {
            CtcResult::Feasible { loss, grad } if loss.is_finite() => (loss, grad),
            _ => {
                return Ok(TrainReport {
                    steps: step,
                    ..TrainReport::failed(ChildStatus::Diverged, format!("non-finite loss at step {step}"))
                })
            }
        };
        net.backward(&grad)?;
        if let StepOutcome::Rejected = adam.step(&mut net.params_mut())? {
            return Ok(TrainReport {
                steps: step,
                ..TrainReport::failed(ChildStatus::Diverged, format!("non-finite gradient at step {step}"))
            });
        }
        step += 1;
        window.0 += loss;
        window.1 += 1;

        if step % cfg.eval_every == 0 || step == cfg.max_steps {
            train_ctc = Some(window.0 / window.1 as f64);
            window = (0.0, 0);
            let (dev_ctc, dev_wer) = evaluate_child(net, dev)?;
            if !dev_ctc.is_finite() {
                return Ok(TrainReport {
                    steps: step,
                    ..TrainReport::failed(ChildStatus::Diverged, "non-finite dev loss")
                });
            }
            tracing::debug!(step, dev_ctc, dev_wer, "child evaluation");
            let improved = best
                .as_ref()
                .is_none_or(|(b, _, _)| dev_ctc < b - cfg.min_delta);
            if improved {
                best = Some((dev_ctc, dev_wer, net.clone()));
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
        }
    }

    let (dev_ctc, dev_wer) = match best {
        Some((c, w, kept)) => {
            net.copy_state_from(&kept)?;
            (c, w)
        }
        None => evaluate_child(net, dev)?,
    };
    Ok(TrainReport {
        status: ChildStatus::Trained,
        dev_ctc: Some(dev_ctc),
        dev_wer: Some(dev_wer),
        train_ctc,
        steps: step,
        message: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nas::child::instantiate_child;

    fn tiny_data() -> Dataset {
        let alphabet = Alphabet::new(['a', 'b']).unwrap();
        let mk = |id: &str, pattern: &[usize], text: &str| {
            let t = 12;
            let data = (0..t * 4)
                .map(|i| {
                    let (ti, f) = (i / 4, i % 4);
                    let sym = pattern[ti * pattern.len() / t];
                    if f == sym { 1.0 } else { 0.0 }
                })
                .collect();
            Utterance {
                id: id.into(),
                features: FeatureMatrix::new(data, t, 4, 10.0).unwrap(),
                labels: alphabet.encode(text).unwrap(),
                text: text.into(),
            }
        };
        Dataset {
            alphabet: alphabet.clone(),
            unit: Unit::Word,
            utterances: vec![mk("u1", &[2, 0, 2, 1, 2], "ab")],
        }
    }

    #[test]
    fn reward_formula() {
        assert_eq!(compute_reward(Some(0.0), 1.0), 1.0);
        assert_eq!(compute_reward(Some(1.3), 1.0), 0.0);
        assert_eq!(compute_reward(Some(0.25), 2.0), 1.5);
        assert_eq!(compute_reward(None, 1.0), 0.0);
    }

    #[test]
    fn zero_steps_reports_untrained_metrics() {
        let data = tiny_data();
        let spec = "f2,kh3,kw3,sh1,sw1,mp0,bn0,rnn0,h4".parse().unwrap();
        let mut net = instantiate_child(&spec, 12, 4, &data.alphabet, 1)
            .unwrap()
            .network()
            .unwrap();
        let mut fresh = net.clone();
        let cfg = TrainConfig {
            max_steps: 0,
            ..Default::default()
        };
        let r = train_child(&mut net, &data, &data, &cfg, 0).unwrap();
        let (ctc, wer) = evaluate_child(&mut fresh, &data).unwrap();
        assert_eq!(r.dev_ctc, Some(ctc));
        assert_eq!(r.dev_wer, Some(wer));
        assert_eq!(r.steps, 0);
    }

    #[test]
    fn infeasible_child_is_flagged() {
        let data = tiny_data();
        // 12 frames -> 6 -> pool 3 -> 2 -> pool 1, too few for two labels
        let spec = "f2,kh1,kw1,sh2,sw1,mp1,bn0,rnn0,f2,kh1,kw1,sh2,sw1,mp1,bn0,rnn0,h2"
            .parse()
            .unwrap();
        let mut net = instantiate_child(&spec, 12, 4, &data.alphabet, 1)
            .unwrap()
            .network()
            .unwrap();
        assert_eq!(net.output_frames(12), Some(1));
        let r = train_child(&mut net, &data, &data, &TrainConfig::default(), 0).unwrap();
        assert_eq!(r.status, ChildStatus::Infeasible);
        assert_eq!(compute_reward(r.dev_wer, 1.0), 0.0);
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let data = tiny_data();
        let spec = "f2,kh3,kw3,sh1,sw1,mp0,bn0,rnn0,h6".parse().unwrap();
        let build = || {
            instantiate_child(&spec, 12, 4, &data.alphabet, 7)
                .unwrap()
                .network()
                .unwrap()
        };
        let cfg = TrainConfig {
            max_steps: 60,
            eval_every: 20,
            patience: 10,
            optimizer: OptimizerConfig {
                alpha: 0.01,
                ..Default::default()
            },
            ..Default::default()
        };
        let mut a = build();
        let (before, _) = evaluate_child(&mut a, &data).unwrap();
        let ra = train_child(&mut a, &data, &data, &cfg, 3).unwrap();
        assert_eq!(ra.status, ChildStatus::Trained);
        assert!(ra.dev_ctc.unwrap() < before);
        let mut b = build();
        let rb = train_child(&mut b, &data, &data, &cfg, 3).unwrap();
        assert_eq!(ra, rb);
    }
}
