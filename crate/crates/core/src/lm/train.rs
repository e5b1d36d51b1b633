use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{GramEntry, NGramModel, WordId, BOS, EOS, UNK};
use crate::corpus::normalize_transcript;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Smoothing {
    /// Relative frequencies; unseen events get zero probability.
    None,
    /// Laplace counts at every order, backoff-normalized for unseen words.
    AddOne,
    /// Interpolated Witten-Bell, stored in backoff form.
    #[default]
    WittenBell,
}

fn log10(p: f64) -> f64 {
    if p > 0.0 {
        p.log10()
    } else {
        f64::NEG_INFINITY
    }
}

/// Counts n-grams of sentences padded with `<s>` / `</s>` and builds a
/// backoff model whose stored contexts each normalize to one.
pub fn train_ngram<S: AsRef<str>>(
    corpus: &[S],
    order: usize,
    smoothing: Smoothing,
) -> Result<NGramModel> {
    if order == 0 {
        return Err(Error::invalid("n-gram order must be at least 1"));
    }
    let sentences: Vec<Vec<String>> = corpus
        .iter()
        .map(|s| {
            normalize_transcript(s.as_ref())
                .split(' ')
                .filter(|w| !w.is_empty())
                .map(String::from)
                .collect::<Vec<_>>()
        })
        .filter(|s| !s.is_empty())
        .collect();
    if sentences.is_empty() {
        return Err(Error::invalid("language model corpus is empty"));
    }

    let words: BTreeSet<&str> = sentences
        .iter()
        .flatten()
        .map(String::as_str)
        .filter(|w| ![BOS, EOS, UNK].contains(w))
        .collect();
    let mut vocab: Vec<String> = vec![BOS.into(), EOS.into(), UNK.into()];
    vocab.extend(words.into_iter().map(String::from));
    let index: HashMap<&str, WordId> = vocab
        .iter()
        .enumerate()
        .map(|(i, w)| (w.as_str(), i as WordId))
        .collect();
    let (bos, eos) = (index[BOS], index[EOS]);

    // counts[k-1]: k-gram -> count; BTreeMap keeps iteration deterministic
    let mut counts: Vec<BTreeMap<Vec<WordId>, u64>> = vec![BTreeMap::new(); order];
    for s in &sentences {
        let mut ids = vec![bos];
        ids.extend(s.iter().map(|w| index[w.as_str()]));
        ids.push(eos);
        for k in 1..=order {
            for start in 0..ids.len().saturating_sub(k - 1) {
                let gram = &ids[start..start + k];
                // "<s>" is only ever a context
                if k == 1 && gram[0] == bos {
                    continue;
                }
                *counts[k - 1].entry(gram.to_vec()).or_insert(0) += 1;
            }
        }
    }
    let predicted: Vec<WordId> = (0..vocab.len() as WordId).filter(|&w| w != bos).collect();
    let v = predicted.len() as f64;

    let mut grams: Vec<HashMap<Vec<WordId>, GramEntry>> = vec![HashMap::new(); order];

    // unigrams
    let total: u64 = counts[0].values().sum();
    let types = counts[0].len() as f64;
    for &w in &predicted {
        let c = counts[0].get(&vec![w]).copied().unwrap_or(0) as f64;
        let p = match smoothing {
            Smoothing::None => c / total as f64,
            Smoothing::AddOne => (c + 1.0) / (total as f64 + v),
            Smoothing::WittenBell => (c + types / v) / (total as f64 + types),
        };
        grams[0].insert(
            vec![w],
            GramEntry {
                log10_prob: log10(p),
                log10_backoff: None,
            },
        );
    }
    grams[0].insert(
        vec![bos],
        GramEntry {
            log10_prob: f64::NEG_INFINITY,
            log10_backoff: None,
        },
    );

    for k in 2..=order {
        // context statistics: c(h) and N1+(h .)
        let mut ctx_stats: BTreeMap<Vec<WordId>, (u64, u64)> = BTreeMap::new();
        for (gram, &c) in &counts[k - 1] {
            let s = ctx_stats.entry(gram[..k - 1].to_vec()).or_insert((0, 0));
            s.0 += c;
            s.1 += 1;
        }

        let partial = NGramModel::from_parts(k - 1, vocab.clone(), grams[..k - 1].to_vec())?;
        let mut sums: BTreeMap<Vec<WordId>, (f64, f64)> = BTreeMap::new();
        let mut new_entries = HashMap::new();
        for (gram, &c) in &counts[k - 1] {
            let (h, w) = (&gram[..k - 1], gram[k - 1]);
            let (ch, n1) = ctx_stats[h];
            let lower = 10f64.powf(partial.log10_prob_ids(&h[1..], w));
            let p = match smoothing {
                Smoothing::None => c as f64 / ch as f64,
                Smoothing::AddOne => (c as f64 + 1.0) / (ch as f64 + v),
                Smoothing::WittenBell => (c as f64 + n1 as f64 * lower) / (ch + n1) as f64,
            };
            let s = sums.entry(h.to_vec()).or_insert((0.0, 0.0));
            s.0 += p;
            s.1 += lower;
            new_entries.insert(
                gram.clone(),
                GramEntry {
                    log10_prob: log10(p),
                    log10_backoff: None,
                },
            );
        }
        grams[k - 1] = new_entries;

        for (h, (seen_p, seen_lower)) in sums {
            let left = (1.0 - seen_p).max(0.0);
            let room = (1.0 - seen_lower).max(0.0);
            let bow = if room <= 1e-12 {
                // every word already seen after h; nothing to back off to
                if left <= 1e-12 {
                    0.0
                } else {
                    return Err(Error::invalid("backoff normalization failed"));
                }
            } else {
                log10(left / room)
            };
            let entry = grams[k - 2]
                .get_mut(&h)
                .ok_or_else(|| Error::invalid("context missing from lower-order table"))?;
            entry.log10_backoff = Some(bow);
        }
    }
    NGramModel::from_parts(order, vocab, grams)
}
