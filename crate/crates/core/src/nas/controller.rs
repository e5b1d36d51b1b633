use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::space::{DecisionKind, SearchSpace};
use crate::error::{Error, Result};
use crate::nn::{clip_global_norm, global_norm, LstmCellParams, Param, Parameterized, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub hidden: usize,
    pub embedding: usize,
    pub learning_rate: f64,
    /// Softmax temperature applied to every decision.
    pub temperature: f64,
    pub baseline_decay: f64,
    /// Optional global-norm clip on the policy gradient.
    pub clip_norm: Option<f64>,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            hidden: 512,
            embedding: 32,
            learning_rate: 3e-4,
            temperature: 1.0,
            baseline_decay: 0.95,
            clip_norm: None,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.embedding == 0 {
            return Err(Error::invalid("controller sizes must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("controller learning rate must be positive"));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::invalid("temperature must be positive"));
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return Err(Error::invalid("baseline_decay must lie in [0, 1)"));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::invalid("clip_norm must be positive"));
        }
        Ok(())
    }
}

/// One sampled architecture: choice indices (depth first) and their joint
/// log-probability under the policy that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub decisions: Vec<usize>,
    pub logprob: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UpdateOutcome {
    Applied { grad_norm: f64 },
    /// The policy gradient was not finite; parameters were left untouched.
    Skipped,
}

/// Autoregressive LSTM policy over architecture decisions. Each decision
/// kind has its own output layer; the chosen token is embedded and fed to
/// the next step.
#[derive(Clone, Debug)]
pub struct Controller {
    cfg: ControllerConfig,
    space: SearchSpace,
    embed: Param,
    lstm: LstmCellParams,
    head_w: Vec<Param>,
    head_b: Vec<Param>,
    /// token id of choice 0 for each decision kind; token 0 is "start"
    offsets: Vec<usize>,
    baseline: f64,
    updates: u64,
    skipped: u64,
}

struct Step {
    kind: DecisionKind,
    choice: usize,
    log_probs: Vec<f64>,
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

impl Controller {
    /// Output layers start at zero, so the initial policy is uniform.
    pub fn new(space: &SearchSpace, cfg: ControllerConfig, seed: u64) -> Result<Self> {
        space.validate()?;
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut offsets = Vec::with_capacity(DecisionKind::ALL.len());
        let mut n_tokens = 1;
        for kind in DecisionKind::ALL {
            offsets.push(n_tokens);
            n_tokens += space.n_choices(kind);
        }
        let embed = Param::xavier("controller.embed", &[n_tokens, cfg.embedding], 1, cfg.embedding, &mut rng);
        let lstm = LstmCellParams::new("controller.lstm", cfg.embedding, cfg.hidden, &mut rng);
        let head_w = DecisionKind::ALL
            .iter()
            .map(|k| Param::zeros(format!("controller.head.{k:?}.w"), &[space.n_choices(*k), cfg.hidden]))
            .collect();
        let head_b = DecisionKind::ALL
            .iter()
            .map(|k| Param::zeros(format!("controller.head.{k:?}.b"), &[space.n_choices(*k)]))
            .collect();
        Ok(Controller {
            cfg,
            space: space.clone(),
            embed,
            lstm,
            head_w,
            head_b,
            offsets,
            baseline: 0.0,
            updates: 0,
            skipped: 0,
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }

    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    pub fn baseline(&self) -> f64 {
        self.baseline
    }

    pub fn updates_applied(&self) -> u64 {
        self.updates
    }

    pub fn updates_skipped(&self) -> u64 {
        self.skipped
    }

    fn embedding(&self, token: usize) -> &[f64] {
        self.embed.value.row(token)
    }

    fn head_log_probs(&self, kind: DecisionKind, h: &[f64]) -> Vec<f64> {
        let w = &self.head_w[kind.index()].value;
        let b = self.head_b[kind.index()].value.data();
        let z: Vec<f64> = (0..b.len())
            .map(|j| {
                let dot: f64 = w.row(j).iter().zip(h).map(|(a, b)| a * b).sum();
                (dot + b[j]) / self.cfg.temperature
            })
            .collect();
        log_softmax(&z)
    }

    /// Runs the policy, either sampling (`forced = None`) or scoring a given
    /// decision list. Decisions with a single choice are fixed and take no
    /// controller step. Returns every choice, the per-step records, the LSTM
    /// caches and the input token of each step.
    #[allow(clippy::type_complexity)]
    fn unroll<R: Rng>(
        &self,
        forced: Option<&[usize]>,
        mut rng: Option<&mut R>,
    ) -> Result<(Vec<usize>, Vec<Step>, Vec<crate::nn::LstmStepCache>, Vec<usize>)> {
        let hsz = self.cfg.hidden;
        let (mut h, mut c) = (vec![0.0; hsz], vec![0.0; hsz]);
        let mut token = 0;
        let mut choices = Vec::new();
        let mut steps = Vec::new();
        let mut caches = Vec::new();
        let mut tokens = Vec::new();
        let mut kinds = vec![DecisionKind::Depth];
        let mut k = 0;
        while k < kinds.len() {
            let kind = kinds[k];
            let n = self.space.n_choices(kind);
            let given = match forced {
                Some(d) => {
                    let v = *d
                        .get(k)
                        .ok_or_else(|| Error::invalid("decision list ends early"))?;
                    if v >= n {
                        return Err(Error::invalid(format!("{kind:?} index {v} out of range")));
                    }
                    Some(v)
                }
                None => None,
            };
            let choice = if n == 1 {
                0
            } else {
                let cache = self.lstm.step_cached(self.embedding(token), &h, &c)?;
                h.clone_from(&cache.h);
                c.clone_from(&cache.c);
                let log_probs = self.head_log_probs(kind, &h);
                let choice = given.unwrap_or_else(|| {
                    let u: f64 = rng.as_mut().expect("sampling needs an rng").gen();
                    let mut acc = 0.0;
                    for (j, lp) in log_probs.iter().enumerate() {
                        acc += lp.exp();
                        if u < acc {
                            return j;
                        }
                    }
                    log_probs.len() - 1
                });
                tokens.push(token);
                token = self.offsets[kind.index()] + choice;
                caches.push(cache);
                steps.push(Step {
                    kind,
                    choice,
                    log_probs,
                });
                choice
            };
            if kind == DecisionKind::Depth {
                let depth = self.space.choices(DecisionKind::Depth)[choice];
                for _ in 0..depth {
                    kinds.extend(DecisionKind::BLOCK);
                }
            }
            choices.push(choice);
            k += 1;
        }
        if let Some(d) = forced {
            if d.len() != choices.len() {
                return Err(Error::invalid(format!(
                    "decision list has {} entries, the architecture needs {}",
                    d.len(),
                    choices.len()
                )));
            }
        }
        Ok((choices, steps, caches, tokens))
    }

    /// Samples one architecture.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<Episode> {
        let (decisions, steps, _, _) = self.unroll(None, Some(rng))?;
        Ok(Episode {
            decisions,
            logprob: steps.iter().map(|s| s.log_probs[s.choice]).sum(),
        })
    }

    /// Log-probability of a decision list by teacher forcing.
    pub fn logprob(&self, decisions: &[usize]) -> Result<f64> {
        let (_, steps, _, _) = self.unroll::<ChaCha8Rng>(Some(decisions), None)?;
        Ok(steps.iter().map(|s| s.log_probs[s.choice]).sum())
    }

    /// Adds `weight * d(-logprob)/d(theta)` for one episode to the gradients.
    fn accumulate(&mut self, decisions: &[usize], weight: f64) -> Result<()> {
        let (_, steps, caches, tokens) = self.unroll::<ChaCha8Rng>(Some(decisions), None)?;
        let tau = self.cfg.temperature;
        let mut dhs = Vec::with_capacity(steps.len());
        for (step, cache) in steps.iter().zip(&caches) {
            let ki = step.kind.index();
            let mut dh = vec![0.0; self.cfg.hidden];
            for (j, lp) in step.log_probs.iter().enumerate() {
                let onehot = if j == step.choice { 1.0 } else { 0.0 };
                let dz = weight * (lp.exp() - onehot) / tau;
                if dz == 0.0 {
                    continue;
                }
                self.head_b[ki].grad.data_mut()[j] += dz;
                let w = self.head_w[ki].value.row(j).to_vec();
                for (g, hv) in self.head_w[ki].grad.row_mut(j).iter_mut().zip(&cache.h) {
                    *g += dz * hv;
                }
                for (d, wv) in dh.iter_mut().zip(w) {
                    *d += dz * wv;
                }
            }
            dhs.push(dh);
        }
        let lstm_cache = crate::nn::LstmCache { steps: caches };
        let dxs = self.lstm.run_backward(&lstm_cache, &dhs);
        let e = self.cfg.embedding;
        for (tok, dx) in tokens.iter().zip(dxs) {
            let row = &mut self.embed.grad.data_mut()[tok * e..(tok + 1) * e];
            for (g, d) in row.iter_mut().zip(dx) {
                *g += d;
            }
        }
        Ok(())
    }

    /// One REINFORCE step: `theta += lr * mean((R - b) * grad logprob)`,
    /// then the baseline moves toward the batch mean reward.
    pub fn reinforce_update(&mut self, batch: &[(Vec<usize>, f64)]) -> Result<UpdateOutcome> {
        if batch.is_empty() {
            return Err(Error::invalid("REINFORCE batch is empty"));
        }
        if let Some((_, r)) = batch.iter().find(|(_, r)| !r.is_finite()) {
            return Err(Error::invalid(format!("reward {r} is not finite")));
        }
        self.zero_grad();
        let n = batch.len() as f64;
        for (decisions, reward) in batch {
            let advantage = reward - self.baseline;
            if advantage != 0.0 {
                self.accumulate(decisions, advantage / n)?;
            }
        }
        let mean_reward = batch.iter().map(|(_, r)| r).sum::<f64>() / n;

        let lr = self.cfg.learning_rate;
        let clip = self.cfg.clip_norm;
        let mut params = self.params_mut();
        let norm = global_norm(&params);
        let outcome = if !norm.is_finite() {
            UpdateOutcome::Skipped
        } else {
            if let Some(c) = clip {
                clip_global_norm(&mut params, c);
            }
            for p in params.iter_mut() {
                let g = p.grad.data().to_vec();
                for (w, g) in p.value.data_mut().iter_mut().zip(g) {
                    *w -= lr * g;
                }
            }
            UpdateOutcome::Applied { grad_norm: norm }
        };
        drop(params);
        match outcome {
            UpdateOutcome::Skipped => {
                self.skipped += 1;
                tracing::warn!("controller gradient is not finite; update skipped");
            }
            UpdateOutcome::Applied { .. } => self.updates += 1,
        }
        self.baseline = self.cfg.baseline_decay * self.baseline
            + (1.0 - self.cfg.baseline_decay) * mean_reward;
        Ok(outcome)
    }

    /// Flat copy of all parameters, for comparing states.
    pub fn parameter_vector(&self) -> Vec<f64> {
        self.params()
            .iter()
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }

    /// Overwrites the output layers, e.g. to pin a policy in tests.
    pub fn set_head(&mut self, kind: DecisionKind, weight: Tensor, bias: Tensor) -> Result<()> {
        let i = kind.index();
        if weight.shape() != self.head_w[i].value.shape() || bias.shape() != self.head_b[i].value.shape() {
            return Err(Error::shape(format!("{kind:?} head shape mismatch")));
        }
        self.head_w[i].value = weight;
        self.head_b[i].value = bias;
        Ok(())
    }
}

impl Parameterized for Controller {
    fn params(&self) -> Vec<&Param> {
        let mut v = vec![&self.embed];
        v.extend(self.lstm.params());
        v.extend(self.head_w.iter());
        v.extend(self.head_b.iter());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = vec![&mut self.embed];
        v.extend(self.lstm.params_mut());
        v.extend(self.head_w.iter_mut());
        v.extend(self.head_b.iter_mut());
        v
    }
}
