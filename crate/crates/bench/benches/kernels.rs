use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nas_asr::audio::{extract_mfcc, FrontendConfig};
use nas_asr::ctc::{ctc_loss, Alphabet};
use nas_asr::decoder::{beam_decode, DecoderConfig};
use nas_asr::nn::{Blstm, Layer, Mode};
use nas_asr_bench::{activations, logits, target, tone};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mfcc(c: &mut Criterion) {
    let cfg = FrontendConfig::default();
    let mut g = c.benchmark_group("mfcc");
    for secs in [1.0, 5.0] {
        let wav = tone(secs);
        g.bench_with_input(BenchmarkId::from_parameter(format!("{secs}s")), &wav, |b, wav| {
            b.iter(|| extract_mfcc(black_box(wav), &cfg).unwrap())
        });
    }
    g.finish();
}

fn ctc(c: &mut Criterion) {
    let alphabet = Alphabet::new("abcdefghijklmnopqrstuvwxyz '".chars()).unwrap();
    let mut g = c.benchmark_group("ctc_loss");
    for (frames, labels) in [(50, 10), (200, 40), (800, 150)] {
        let l = logits(frames, &alphabet, 3);
        let t = target(labels, &alphabet, 4);
        g.bench_function(BenchmarkId::from_parameter(format!("T{frames}_L{labels}")), |b| {
            b.iter(|| ctc_loss(black_box(&l), black_box(&t)).unwrap())
        });
    }
    g.finish();
}

fn beam(c: &mut Criterion) {
    let alphabet = Alphabet::new("abcdefgh".chars()).unwrap();
    let l = logits(100, &alphabet, 5);
    let mut g = c.benchmark_group("beam_decode");
    for width in [1, 16, 128] {
        let cfg = DecoderConfig {
            beam_width: width,
            ..Default::default()
        };
        g.bench_function(BenchmarkId::from_parameter(width), |b| {
            b.iter(|| beam_decode(black_box(&l), &cfg, &alphabet).unwrap())
        });
    }
    g.finish();
}

fn blstm(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut layer = Blstm::new("bench", 64, 64, &mut rng);
    let x = activations(100, 64, 7);
    let grad = activations(100, 128, 8);
    let mut g = c.benchmark_group("blstm_T100_D64_H64");
    g.bench_function("forward", |b| b.iter(|| layer.forward(black_box(&x), Mode::Eval).unwrap()));
    g.bench_function("forward_backward", |b| {
        b.iter(|| {
            layer.forward(black_box(&x), Mode::Train).unwrap();
            layer.backward(black_box(&grad)).unwrap()
        })
    });
    g.finish();
}

criterion_group!(benches, mfcc, ctc, beam, blstm);
criterion_main!(benches);
