//! Corpus ingestion, the synthetic tone corpus, and error-rate scoring.

mod manifest;
mod metrics;
mod synth;
mod timit;

pub use manifest::{
    load_manifest, normalize_transcript, parse_manifest, tokenize, Manifest, ManifestEntry, Unit,
};
pub use metrics::{aggregate, edit_distance, word_error_rate, EditDistanceResult};
pub use synth::{
    generate_synthetic_corpus, generate_synthetic_splits, symbol_frequency, synthetic_alphabet,
    SynthConfig, SynthUtterance, SyntheticCorpus,
};
pub use timit::{
    load_timit_phone_transcript, parse_timit_phones, phone_error_rate, PhoneFolding,
};

use crate::ctc::{Alphabet, LabelSequence};
use crate::error::{Error, Result};

/// CTC targets for a transcript: every character for word units, one
/// symbol per token for phone units.
pub fn transcript_to_labels(text: &str, unit: Unit, alphabet: &Alphabet) -> Result<LabelSequence> {
    match unit {
        Unit::Word => alphabet.encode(&normalize_transcript(text)),
        Unit::Phone => {
            let ids = text
                .split_whitespace()
                .map(|tok| {
                    let mut chars = tok.chars();
                    match (chars.next(), chars.next()) {
                        (Some(c), None) => alphabet.index_of(c).ok_or_else(|| {
                            Error::invalid(format!("phone {tok:?} is not in the alphabet"))
                        }),
                        _ => Err(Error::invalid(format!(
                            "phone {tok:?} is not a single alphabet symbol"
                        ))),
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            LabelSequence::new(ids, alphabet)
        }
    }
}

pub fn labels_to_transcript(labels: &LabelSequence, unit: Unit, alphabet: &Alphabet) -> String {
    match unit {
        Unit::Word => alphabet.decode(labels),
        Unit::Phone => labels
            .ids()
            .iter()
            .filter_map(|&i| alphabet.symbol(i))
            .map(String::from)
            .collect::<Vec<_>>()
            .join(" "),
    }
}

/// Token error rate of a decoded transcript against its reference under
/// the given unit.
pub fn score_transcript(reference: &str, hypothesis: &str, unit: Unit) -> Result<EditDistanceResult> {
    let r = tokenize(reference, unit);
    let h = tokenize(hypothesis, unit);
    word_error_rate(&r, &h)
}
