//! Word n-gram language models with backoff, trained from transcripts and
//! exchanged as ARPA text.

mod arpa;
mod train;

pub use arpa::{export_arpa, import_arpa, load_arpa, save_arpa};
pub use train::{train_ngram, Smoothing};

use std::collections::HashMap;

use crate::error::{Error, Result};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

pub type WordId = u32;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GramEntry {
    /// log10 P(w | h); `-inf` for zero probability.
    pub log10_prob: f64,
    /// log10 backoff weight of this n-gram used as a context.
    pub log10_backoff: Option<f64>,
}

/// Backoff n-gram model. `P(w|h)` is the stored probability of `h w` when
/// present, otherwise `bow(h) * P(w|h')` with `h'` the context minus its
/// oldest word.
#[derive(Clone, Debug, PartialEq)]
pub struct NGramModel {
    order: usize,
    vocab: Vec<String>,
    index: HashMap<String, WordId>,
    /// `grams[k - 1]` holds the k-grams.
    grams: Vec<HashMap<Vec<WordId>, GramEntry>>,
}

impl NGramModel {
    pub(crate) fn from_parts(
        order: usize,
        vocab: Vec<String>,
        grams: Vec<HashMap<Vec<WordId>, GramEntry>>,
    ) -> Result<Self> {
        if order == 0 || grams.len() != order {
            return Err(Error::invalid("n-gram order must be >= 1 and match the tables"));
        }
        let index: HashMap<String, WordId> = vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as WordId))
            .collect();
        if index.len() != vocab.len() {
            return Err(Error::invalid("vocabulary repeats a word"));
        }
        for tok in [BOS, EOS, UNK] {
            if !index.contains_key(tok) {
                return Err(Error::invalid(format!("vocabulary lacks {tok}")));
            }
        }
        Ok(NGramModel {
            order,
            vocab,
            index,
            grams,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    /// Every word a distribution ranges over (all but `<s>`).
    pub fn predicted_words(&self) -> impl Iterator<Item = WordId> + '_ {
        let bos = self.bos();
        (0..self.vocab.len() as WordId).filter(move |&w| w != bos)
    }

    pub fn word(&self, id: WordId) -> &str {
        &self.vocab[id as usize]
    }

    /// Vocabulary id, with unknown words mapped to `<unk>`.
    pub fn word_id(&self, word: &str) -> WordId {
        self.index.get(word).copied().unwrap_or_else(|| self.unk())
    }

    pub fn bos(&self) -> WordId {
        self.index[BOS]
    }

    pub fn eos(&self) -> WordId {
        self.index[EOS]
    }

    pub fn unk(&self) -> WordId {
        self.index[UNK]
    }

    pub fn grams(&self, k: usize) -> &HashMap<Vec<WordId>, GramEntry> {
        &self.grams[k - 1]
    }

    pub fn entry(&self, gram: &[WordId]) -> Option<&GramEntry> {
        self.grams.get(gram.len().checked_sub(1)?)?.get(gram)
    }

    /// Contexts that carry their own backoff weight.
    pub fn stored_contexts(&self) -> Vec<Vec<WordId>> {
        let mut out: Vec<Vec<WordId>> = vec![Vec::new()];
        for k in 1..self.order {
            let mut ctx: Vec<Vec<WordId>> = self.grams[k - 1].keys().cloned().collect();
            ctx.sort();
            out.extend(ctx);
        }
        out
    }

    /// log10 P(w | context); only the last `order - 1` context words count.
    pub fn log10_prob_ids(&self, context: &[WordId], word: WordId) -> f64 {
        let keep = context.len().min(self.order - 1);
        let mut ctx = &context[context.len() - keep..];
        let mut acc = 0.0;
        loop {
            let mut gram = ctx.to_vec();
            gram.push(word);
            if let Some(e) = self.entry(&gram) {
                return acc + e.log10_prob;
            }
            if ctx.is_empty() {
                // word outside the unigram table
                return f64::NEG_INFINITY;
            }
            if let Some(bow) = self.entry(ctx).and_then(|e| e.log10_backoff) {
                acc += bow;
            }
            ctx = &ctx[1..];
        }
    }

    pub fn score_log10(&self, word: &str, context: &[&str]) -> f64 {
        let ctx: Vec<WordId> = context.iter().map(|w| self.word_id(w)).collect();
        self.log10_prob_ids(&ctx, self.word_id(word))
    }

    /// Natural-log probability of `word` after `context`.
    pub fn score(&self, word: &str, context: &[&str]) -> f64 {
        self.score_log10(word, context) * std::f64::consts::LN_10
    }

    /// Natural-log probability of a whole sentence including `</s>`.
    pub fn sentence_logprob(&self, words: &[&str]) -> f64 {
        let mut ctx = vec![self.bos()];
        let mut total = 0.0;
        for w in words.iter().map(|w| self.word_id(w)).chain([self.eos()]) {
            total += self.log10_prob_ids(&ctx, w);
            ctx.push(w);
        }
        total * std::f64::consts::LN_10
    }

    /// Per-token perplexity (tokens include one `</s>` per sentence).
    pub fn perplexity<S: AsRef<str>>(&self, sentences: &[S]) -> f64 {
        let mut logp = 0.0;
        let mut n = 0usize;
        for s in sentences {
            let words: Vec<&str> = s.as_ref().split_whitespace().collect();
            logp += self.sentence_logprob(&words);
            n += words.len() + 1;
        }
        (-logp / n.max(1) as f64).exp()
    }
}
