use std::cmp::Ordering;
use std::io::{BufRead, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};
use std::sync::Mutex;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::child::{instantiate_child, ChildNetwork, Instantiated};
use super::controller::Controller;
use super::space::ArchSpec;
use super::train::{compute_reward, train_child, ChildStatus, Dataset, TrainConfig, TrainReport};
use crate::error::{Error, Result};
use crate::seed::derive_seed;

/// One evaluated child, as persisted in the search log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChildResult {
    pub index: usize,
    pub seed: u64,
    pub arch: String,
    /// Choice indices into the search space, depth first.
    pub decisions: Vec<usize>,
    pub status: ChildStatus,
    pub dev_ctc: Option<f64>,
    pub dev_wer: Option<f64>,
    pub train_ctc: Option<f64>,
    pub steps: usize,
    pub reward: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

/// What an evaluator hands back for one architecture.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: TrainReport,
    pub reward: f64,
    pub network: Option<ChildNetwork>,
}

/// Scores a sampled architecture. Implementations must be deterministic
/// in `(spec, seed)` for searches to be reproducible.
pub trait ChildEvaluator: Sync {
    fn evaluate(&self, spec: &ArchSpec, seed: u64) -> Result<Evaluation>;
}

/// Instantiates and trains each child on real data.
pub struct TrainingEvaluator {
    pub train: Dataset,
    pub dev: Dataset,
    pub config: TrainConfig,
    pub gamma: f64,
}

impl ChildEvaluator for TrainingEvaluator {
    fn evaluate(&self, spec: &ArchSpec, seed: u64) -> Result<Evaluation> {
        let (n_feats, min_frames) = match (self.train.n_feats(), self.train.min_frames()) {
            (Some(f), Some(t)) => (f, t.min(self.dev.min_frames().unwrap_or(t))),
            _ => return Err(Error::invalid("training set is empty")),
        };
        let mut net = match instantiate_child(spec, min_frames, n_feats, &self.train.alphabet, seed)? {
            Instantiated::Network(n) => *n,
            Instantiated::Infeasible { reason } => {
                return Ok(Evaluation {
                    report: TrainReport::failed(ChildStatus::Infeasible, reason),
                    reward: 0.0,
                    network: None,
                })
            }
        };
        let report = train_child(&mut net, &self.train, &self.dev, &self.config, derive_seed(seed, 1))?;
        let reward = compute_reward(report.dev_wer, self.gamma);
        let network = (report.status == ChildStatus::Trained).then_some(net);
        Ok(Evaluation {
            report,
            reward,
            network,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Total number of children to evaluate.
    pub budget: usize,
    /// Children per controller update.
    pub batch_size: usize,
    pub workers: usize,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            budget: 1024,
            batch_size: 8,
            workers: 1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub results: Vec<ChildResult>,
    /// Position of the selected child in `results`.
    pub best: usize,
    /// Trained weights of the selected child, when the evaluator kept them.
    pub best_network: Option<ChildNetwork>,
}

impl SearchOutcome {
    pub fn best_result(&self) -> &ChildResult {
        &self.results[self.best]
    }
}

/// Higher reward, then lower dev CTC, then earlier index.
pub fn compare_children(a: &ChildResult, b: &ChildResult) -> Ordering {
    let ctc = |r: &ChildResult| r.dev_ctc.unwrap_or(f64::INFINITY);
    b.reward
        .total_cmp(&a.reward)
        .then(ctc(a).total_cmp(&ctc(b)))
        .then(a.index.cmp(&b.index))
}

/// The child a search would select from these results.
pub fn best_child(results: &[ChildResult]) -> Option<usize> {
    (0..results.len()).min_by(|&i, &j| compare_children(&results[i], &results[j]))
}

pub fn read_search_log<R: BufRead>(r: R) -> Result<Vec<ChildResult>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            what: "search log",
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

fn evaluate_guarded(evaluator: &dyn ChildEvaluator, spec: &ArchSpec, seed: u64) -> Evaluation {
    let failed = |msg: String| Evaluation {
        report: TrainReport::failed(ChildStatus::Failed, msg),
        reward: 0.0,
        network: None,
    };
    match catch_unwind(AssertUnwindSafe(|| evaluator.evaluate(spec, seed))) {
        Ok(Ok(mut e)) => {
            if !e.reward.is_finite() {
                e.reward = 0.0;
                e.report.status = ChildStatus::Failed;
                e.report.message = Some("evaluator returned a non-finite reward".into());
            }
            e
        }
        Ok(Err(err)) => failed(err.to_string()),
        Err(panic) => failed(
            panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "evaluation panicked".into()),
        ),
    }
}

/// Controller-driven architecture search. Each batch is sampled by the
/// coordinator, evaluated across `workers` threads, then used for one
/// REINFORCE update. Child seeds depend only on the search seed and the
/// child index, so results do not depend on the worker count.
pub fn run_search(
    evaluator: &dyn ChildEvaluator,
    controller: &mut Controller,
    cfg: &SearchConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<SearchOutcome> {
    if cfg.budget == 0 || cfg.batch_size == 0 || cfg.workers == 0 {
        return Err(Error::invalid("budget, batch_size and workers must be at least 1"));
    }
    let space = controller.space().clone();
    let mut sampler = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0));
    let mut results: Vec<ChildResult> = Vec::with_capacity(cfg.budget);
    let mut best: Option<(ChildResult, Option<ChildNetwork>)> = None;

    while results.len() < cfg.budget {
        let start = results.len();
        let n = cfg.batch_size.min(cfg.budget - start);
        let mut batch = Vec::with_capacity(n);
        for k in 0..n {
            let ep = controller.sample(&mut sampler)?;
            let spec = space.decode(&ep.decisions)?;
            batch.push((start + k, ep, spec));
        }

        let slots: Vec<Mutex<Option<(Evaluation, f64)>>> = (0..n).map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let work = || loop {
            let k = next.fetch_add(1, AtomicOrdering::SeqCst);
            if k >= n {
                break;
            }
            let (index, _, spec) = &batch[k];
            let t0 = Instant::now();
            let e = evaluate_guarded(evaluator, spec, derive_seed(cfg.seed, 1 + *index as u64));
            *slots[k].lock().expect("slot lock") = Some((e, t0.elapsed().as_secs_f64()));
        };
        let threads = cfg.workers.min(n);
        if threads == 1 {
            work();
        } else {
            std::thread::scope(|s| {
                for _ in 0..threads {
                    s.spawn(work);
                }
            });
        }

        let mut episodes = Vec::with_capacity(n);
        for ((index, ep, spec), slot) in batch.into_iter().zip(slots) {
            let (eval, wall_time) = slot
                .into_inner()
                .expect("slot lock")
                .expect("every child evaluated");
            let r = eval.report;
            let result = ChildResult {
                index,
                seed: derive_seed(cfg.seed, 1 + index as u64),
                arch: spec.to_string(),
                decisions: ep.decisions.clone(),
                status: r.status,
                dev_ctc: r.dev_ctc,
                dev_wer: r.dev_wer,
                train_ctc: r.train_ctc,
                steps: r.steps,
                reward: eval.reward,
                message: r.message,
            };
            tracing::info!(
                index,
                arch = %result.arch,
                reward = result.reward,
                status = ?result.status,
                wall_time,
                "child evaluated"
            );
            if let Some(w) = log.as_deref_mut() {
                serde_json::to_writer(&mut *w, &result)?;
                w.write_all(b"\n")?;
                w.flush()?;
            }
            episodes.push((ep.decisions, eval.reward));
            if best
                .as_ref()
                .is_none_or(|(b, _)| compare_children(&result, b) == Ordering::Less)
            {
                best = Some((result.clone(), eval.network));
            }
            results.push(result);
        }
        controller.reinforce_update(&episodes)?;
    }

    let (best_result, best_network) = best.expect("budget is at least one");
    Ok(SearchOutcome {
        best: best_result.index,
        results,
        best_network,
    })
}
