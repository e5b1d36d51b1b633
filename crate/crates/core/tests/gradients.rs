mod common;

use common::gradcheck;

const INSTANCES: usize = 20;
const TOLERANCE: f64 = 1e-4;

fn check(name: &str, worst: f64) {
    assert!(worst < TOLERANCE, "{name}: worst relative error {worst:e}");
}

#[test]
fn ctc_loss_gradient() {
    check("ctc", gradcheck::ctc(INSTANCES, 1));
}

#[test]
fn linear_gradient() {
    check("linear", gradcheck::linear(INSTANCES, 2));
}

#[test]
fn conv2d_gradient() {
    check("conv2d", gradcheck::conv2d(INSTANCES, 3));
}

#[test]
fn batchnorm_train_gradient() {
    check("batchnorm train", gradcheck::batchnorm_train(INSTANCES, 4));
}

#[test]
fn batchnorm_eval_gradient() {
    check("batchnorm eval", gradcheck::batchnorm_eval(INSTANCES, 5));
}

#[test]
fn relu_gradient() {
    check("relu", gradcheck::relu(INSTANCES, 6));
}

#[test]
fn maxpool_gradient() {
    check("maxpool", gradcheck::maxpool(INSTANCES, 7));
}

#[test]
fn lstm_step_gradient() {
    check("lstm step", gradcheck::lstm_step(INSTANCES, 8));
}

#[test]
fn blstm_gradient() {
    check("blstm", gradcheck::blstm(INSTANCES, 9));
}

#[test]
fn softmax_gradients() {
    check("softmax", gradcheck::softmax(INSTANCES, 10));
}

#[test]
fn child_network_gradient() {
    check("child network", gradcheck::child_network(INSTANCES, 11));
}
