mod common;

use common::*;
use nas_asr::decoder::{beam_decode, DecoderConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn exhaustive() -> DecoderConfig {
    DecoderConfig {
        beam_width: 10_000,
        ..DecoderConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unpruned_beam_finds_the_most_probable_labeling(seed in any::<u64>(), frames in 1usize..=4, k in 1usize..=2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let alphabet = letters(k);
        let logits = random_logits(&mut rng, frames, alphabet.n_labels(), 2.0);
        let hyps = beam_decode(&logits, &exhaustive(), &alphabet).unwrap();
        let (best, logp) = best_labeling(&logits);
        prop_assert_eq!(hyps[0].labels.ids(), best.as_slice());
        prop_assert!((hyps[0].acoustic_logp() - logp).abs() < 1e-9);
    }

    #[test]
    fn unpruned_beam_scores_every_labeling_exactly(seed in any::<u64>(), frames in 1usize..=4, k in 1usize..=2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let alphabet = letters(k);
        let logits = random_logits(&mut rng, frames, alphabet.n_labels(), 2.0);
        let exact = labeling_scores(&logits);
        let hyps = beam_decode(&logits, &exhaustive(), &alphabet).unwrap();
        for h in &hyps {
            let want = exact.get(h.labels.ids()).copied().unwrap_or(f64::NEG_INFINITY);
            if want.is_finite() {
                prop_assert!((h.acoustic_logp() - want).abs() < 1e-9, "{:?}", h.labels.ids());
            }
        }
        for w in hyps.windows(2) {
            prop_assert!(w[0].fused_score >= w[1].fused_score);
        }
    }

    #[test]
    fn beam_output_is_bounded_and_sorted(seed in any::<u64>(), frames in 1usize..=8, width in 1usize..=6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let alphabet = letters(3);
        let logits = random_logits(&mut rng, frames, alphabet.n_labels(), 3.0);
        let cfg = DecoderConfig { beam_width: width, ..DecoderConfig::default() };
        let hyps = beam_decode(&logits, &cfg, &alphabet).unwrap();
        prop_assert!(!hyps.is_empty() && hyps.len() <= width);
        for w in hyps.windows(2) {
            prop_assert!(w[0].fused_score >= w[1].fused_score);
        }
    }
}
