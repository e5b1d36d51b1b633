//! Central-difference gradient checks, one function per component. Each
//! runs `n` random instances from `seed` and returns the worst relative
//! error seen.

use nas_asr::audio::FeatureMatrix;
use nas_asr::ctc::{ctc_loss, CtcResult, LogitMatrix};
use nas_asr::nas::{instantiate_child, ArchSpec};
use nas_asr::nn::{
    log_softmax_backward, log_softmax_rows, softmax_backward, softmax_rows, BatchNorm2d, Blstm, Conv2d,
    Layer, Linear, LstmCellParams, MaxPool2d, Mode, Parameterized, Relu, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{layer_grad_error, letters, max_rel_error, numeric_grad, random_target, random_tensor};

pub fn ctc(n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < n {
        let alphabet = letters(rng.gen_range(1..=4));
        let frames = rng.gen_range(1..=10);
        let acts = random_tensor(&mut rng, &[frames, alphabet.n_labels()], 3.0);
        let len = rng.gen_range(0..=4);
        let target = random_target(&mut rng, len, &alphabet);
        let loss = |a: &Tensor| ctc_loss(&LogitMatrix::from_activations(a).unwrap(), &target).unwrap();
        let CtcResult::Feasible { grad, .. } = loss(&acts) else { continue };
        let num = numeric_grad(acts.data(), |x| loss(&Tensor::new(acts.shape().to_vec(), x.to_vec()).unwrap()).loss());
        worst = worst.max(max_rel_error(grad.data(), &num));
        done += 1;
    }
    worst
}

fn weights_for<L: Layer + Clone>(rng: &mut ChaCha8Rng, layer: &L, input: &Tensor, mode: Mode) -> Tensor {
    let shape = layer.clone().forward(input, mode).unwrap().shape().to_vec();
    random_tensor(rng, &shape, 1.0)
}

fn check_layers<L: Layer + Clone>(
    n: usize,
    seed: u64,
    mode: Mode,
    mut make: impl FnMut(&mut ChaCha8Rng) -> (L, Tensor),
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let (layer, input) = make(&mut rng);
            let w = weights_for(&mut rng, &layer, &input, mode);
            layer_grad_error(&layer, &input, &w, mode)
        })
        .fold(0.0, f64::max)
}

pub fn linear(n: usize, seed: u64) -> f64 {
    check_layers(n, seed, Mode::Train, |rng| {
        let (d, k, t) = (rng.gen_range(1..=6), rng.gen_range(1..=6), rng.gen_range(1..=4));
        let mut layer = Linear::new("l", d, k, rng);
        layer.bias.value = random_tensor(rng, &[k], 0.5);
        (layer, random_tensor(rng, &[t, d], 1.0))
    })
}

pub fn conv2d(n: usize, seed: u64) -> f64 {
    check_layers(n, seed, Mode::Train, |rng| {
        let (ci, co) = (rng.gen_range(1..=2), rng.gen_range(1..=3));
        let kernel = (rng.gen_range(1..=4), rng.gen_range(1..=4));
        let stride = (rng.gen_range(1..=2), rng.gen_range(1..=2));
        let mut layer = Conv2d::new("c", ci, co, kernel, stride, rng).unwrap();
        layer.bias.value = random_tensor(rng, &[co], 0.5);
        let shape = [ci, rng.gen_range(1..=6), rng.gen_range(1..=6)];
        let input = random_tensor(rng, &shape, 1.0);
        (layer, input)
    })
}

fn batchnorm(rng: &mut ChaCha8Rng) -> (BatchNorm2d, Tensor) {
    let c = rng.gen_range(1..=3);
    let mut layer = BatchNorm2d::new("bn", c);
    layer.gamma.value = random_tensor(rng, &[c], 1.0);
    layer.beta.value = random_tensor(rng, &[c], 1.0);
    layer.running_mean = random_tensor(rng, &[c], 0.5);
    layer.running_var = Tensor::new(vec![c], (0..c).map(|_| rng.gen_range(0.5..2.0)).collect()).unwrap();
    let shape = [c, rng.gen_range(2..=5), rng.gen_range(2..=5)];
    let input = random_tensor(rng, &shape, 1.0);
    (layer, input)
}

pub fn batchnorm_train(n: usize, seed: u64) -> f64 {
    check_layers(n, seed, Mode::Train, batchnorm)
}

pub fn batchnorm_eval(n: usize, seed: u64) -> f64 {
    check_layers(n, seed, Mode::Eval, batchnorm)
}

pub fn relu(n: usize, seed: u64) -> f64 {
    check_layers(n, seed, Mode::Train, |rng| {
        // keep inputs away from the kink at zero
        let mut input = random_tensor(rng, &[2, 3, 4], 1.0);
        input.data_mut().iter_mut().for_each(|v| *v += 0.05f64.copysign(*v));
        (Relu::new(), input)
    })
}

pub fn maxpool(n: usize, seed: u64) -> f64 {
    check_layers(n, seed, Mode::Train, |rng| {
        let kernel = (rng.gen_range(1..=3), rng.gen_range(1..=3));
        let stride = (rng.gen_range(1..=3), rng.gen_range(1..=3));
        let shape = [rng.gen_range(1..=2), rng.gen_range(3..=6), rng.gen_range(3..=6)];
        (MaxPool2d::new(kernel, stride).unwrap(), random_tensor(rng, &shape, 1.0))
    })
}

pub fn blstm(n: usize, seed: u64) -> f64 {
    check_layers(n, seed, Mode::Train, |rng| {
        let (d, h, t) = (rng.gen_range(1..=4), rng.gen_range(1..=4), rng.gen_range(1..=5));
        (Blstm::new("b", d, h, rng), random_tensor(rng, &[t, d], 1.0))
    })
}

/// One cell step with respect to `x`, `h_prev`, `c_prev` and every weight,
/// for the loss `a . h' + b . c'`.
pub fn lstm_step(n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let (d, h) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
        let mut cell = LstmCellParams::new("cell", d, h, &mut rng);
        for p in cell.params_mut() {
            let shape = p.value.shape().to_vec();
            p.value = random_tensor(&mut rng, &shape, 0.8);
        }
        let state: Vec<f64> = random_tensor(&mut rng, &[d + 2 * h], 1.0).into_data();
        let (a, b) = (random_tensor(&mut rng, &[h], 1.0), random_tensor(&mut rng, &[h], 1.0));
        let loss = |cell: &LstmCellParams, s: &[f64]| {
            let st = cell.step_cached(&s[..d], &s[d..d + h], &s[d + h..]).unwrap();
            st.h.iter().zip(a.data()).map(|(x, y)| x * y).sum::<f64>()
                + st.c.iter().zip(b.data()).map(|(x, y)| x * y).sum::<f64>()
        };

        let mut analytic = cell.clone();
        analytic.zero_grad();
        let cache = analytic.step_cached(&state[..d], &state[d..d + h], &state[d + h..]).unwrap();
        let (dx, dh, dc) = analytic.step_backward(&cache, a.data(), b.data());
        let got: Vec<f64> = dx.into_iter().chain(dh).chain(dc).collect();
        worst = worst.max(max_rel_error(&got, &numeric_grad(&state, |s| loss(&cell, s))));

        for (i, p) in analytic.params().iter().enumerate() {
            let base = cell.params()[i].value.data().to_vec();
            let num = numeric_grad(&base, |v| {
                let mut c = cell.clone();
                c.params_mut()[i].value.data_mut().copy_from_slice(v);
                loss(&c, &state)
            });
            worst = worst.max(max_rel_error(p.grad.data(), &num));
        }
    }
    worst
}

pub fn softmax(n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let shape = [rng.gen_range(1..=4), rng.gen_range(1..=5)];
        let x = random_tensor(&mut rng, &shape, 2.0);
        let w = random_tensor(&mut rng, &shape, 1.0);
        let dot = |t: &Tensor| t.data().iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>();
        let rebuild = |v: &[f64]| Tensor::new(shape.to_vec(), v.to_vec()).unwrap();

        let y = softmax_rows(&x).unwrap();
        let dx = softmax_backward(&y, &w).unwrap();
        let num = numeric_grad(x.data(), |v| dot(&softmax_rows(&rebuild(v)).unwrap()));
        worst = worst.max(max_rel_error(dx.data(), &num));

        let ly = log_softmax_rows(&x).unwrap();
        let dx = log_softmax_backward(&ly, &w).unwrap();
        let num = numeric_grad(x.data(), |v| dot(&log_softmax_rows(&rebuild(v)).unwrap()));
        worst = worst.max(max_rel_error(dx.data(), &num));
    }
    worst
}

/// A whole child network (conv, batch norm, pooling, recurrent blocks and
/// the output head) under CTC, with respect to every parameter.
pub fn child_network(n: usize, seed: u64) -> f64 {
    let archs = [
        "f2,kh3,kw3,sh1,sw1,mp0,bn1,rnn0,f2,kh1,kw3,sh1,sw2,mp1,bn0,rnn1,h3",
        "f3,kh3,kw1,sh2,sw1,mp0,bn1,rnn1,h2",
        "f2,kh5,kw3,sh1,sw2,mp1,bn1,rnn0,h2",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alphabet = letters(3);
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let spec: ArchSpec = archs[i % archs.len()].parse().unwrap();
        let (frames, feats) = (rng.gen_range(8..=12), rng.gen_range(4..=6));
        let data: Vec<f32> = (0..frames * feats).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let x = FeatureMatrix::new(data, frames, feats, 10.0).unwrap();
        let target = random_target(&mut rng, 2, &alphabet);
        let mut net = instantiate_child(&spec, frames, feats, &alphabet, rng.gen()).unwrap().network().unwrap();
        // zero-initialized biases would put pre-activations exactly on the
        // ReLU kink wherever the previous block outputs zeros
        for p in net.params_mut() {
            p.value.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.1..0.1));
        }
        let loss = |net: &mut nas_asr::nas::ChildNetwork| {
            let out = net.forward(&x, Mode::Train).unwrap();
            ctc_loss(&LogitMatrix::from_activations(&out).unwrap(), &target).unwrap()
        };

        let mut analytic = net.clone();
        analytic.zero_grad();
        let CtcResult::Feasible { grad, .. } = loss(&mut analytic) else { panic!("target fits") };
        analytic.backward(&grad).unwrap();
        for (p, param) in analytic.params().iter().enumerate() {
            let base = net.params()[p].value.data().to_vec();
            let num = numeric_grad(&base, |v| {
                let mut m = net.clone();
                m.params_mut()[p].value.data_mut().copy_from_slice(v);
                loss(&mut m).loss()
            });
            let err = max_rel_error(param.grad.data(), &num);
            worst = worst.max(err);
        }
    }
    worst
}

/// Every check at the given instance count, as `(name, worst error)`.
pub fn all(n: usize, seed: u64) -> Vec<(&'static str, f64)> {
    vec![
        ("ctc", ctc(n, seed)),
        ("linear", linear(n, seed + 1)),
        ("conv2d", conv2d(n, seed + 2)),
        ("batchnorm_train", batchnorm_train(n, seed + 3)),
        ("batchnorm_eval", batchnorm_eval(n, seed + 4)),
        ("relu", relu(n, seed + 5)),
        ("maxpool", maxpool(n, seed + 6)),
        ("lstm_step", lstm_step(n, seed + 7)),
        ("blstm", blstm(n, seed + 8)),
        ("softmax", softmax(n, seed + 9)),
        ("child_network", child_network(n, seed + 10)),
    ]
}
