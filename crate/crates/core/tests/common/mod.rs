//! Shared helpers for the integration test suites.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tsk_core::heads::Model;
use tsk_core::tensor::{Tape, Tensor};
use tsk_core::train::{bce_multilabel_loss, l1_speed_loss, per_frame_bce, pitch_type_loss};

pub const FD_H: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()
}

/// Relative error with an absolute floor, as used by every gradient check.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

pub fn assert_close(actual: &[f64], expected: &[f64], tol: f64, what: &str) {
    assert_eq!(actual.len(), expected.len(), "{what}: length mismatch");
    for (i, (a, e)) in actual.iter().zip(expected).enumerate() {
        assert!(
            (a - e).abs() <= tol,
            "{what}[{i}]: {a} vs {e} (tol {tol})"
        );
    }
}

/// Checks analytic gradients of `f` (a scalar function of one flat parameter
/// vector recorded as a tape leaf) against central finite differences.
pub fn check_gradient(
    params: &[f64],
    shape: Vec<usize>,
    f: impl Fn(&Tape, &Tensor) -> Tensor,
    what: &str,
) {
    let tape = Tape::new();
    let leaf = tape.leaf(shape.clone(), params.to_vec());
    let loss = f(&tape, &leaf);
    let grads = tape.backward(&loss).expect("backward");
    let analytic = grads.get(&leaf).expect("leaf gradient").to_vec();
    for i in 0..params.len() {
        let eval = |p: Vec<f64>| {
            let t = Tape::new();
            let leaf = t.leaf(shape.clone(), p);
            f(&t, &leaf).item()
        };
        let mut plus = params.to_vec();
        plus[i] += FD_H;
        let mut minus = params.to_vec();
        minus[i] -= FD_H;
        let numeric = (eval(plus) - eval(minus)) / (2.0 * FD_H);
        let err = rel_err(analytic[i], numeric);
        assert!(
            err <= FD_TOL,
            "{what}: param {i}: analytic {} vs numeric {} (rel err {err})",
            analytic[i],
            numeric
        );
    }
}

pub enum ModelTarget {
    MultiHot(Vec<f64>),
    Frames(Vec<f64>),
    Speed(f64),
    Class(usize),
}

/// Task-appropriate loss of one model forward pass on raw values; returns
/// the tape, the bound parameter leaves (in storage order) and the loss.
pub fn model_loss(
    model: &Model,
    values: &[f64],
    t: usize,
    target: &ModelTarget,
) -> (Tape, Vec<Tensor>, Tensor) {
    let tape = Tape::new();
    let leaves = model.bind(&tape);
    let v = tape.constant(vec![t, model.config.d], values.to_vec());
    let logits = model.forward(&leaves, &v).expect("forward");
    let loss = match target {
        ModelTarget::MultiHot(z) => bce_multilabel_loss(&logits, z),
        ModelTarget::Frames(z) => per_frame_bce(&logits, z),
        ModelTarget::Speed(mph) => l1_speed_loss(&logits, *mph),
        ModelTarget::Class(k) => pitch_type_loss(&logits, *k),
    }
    .expect("loss");
    (tape, leaves, loss)
}

/// Finite-difference check of every parameter of a model against the
/// analytic gradients of a task loss.
pub fn check_model_gradients(model: &Model, values: &[f64], t: usize, target: &ModelTarget) {
    let (tape, leaves, loss) = model_loss(model, values, t, target);
    let grads = tape.backward(&loss).expect("backward");
    for (pi, param) in model.params.iter().enumerate() {
        let analytic = grads
            .get(&leaves[pi])
            .unwrap_or_else(|| panic!("no gradient for {}", param.name))
            .to_vec();
        for i in 0..param.data.len() {
            let numeric = {
                let mut m_plus = model.clone();
                m_plus.params[pi].data[i] += FD_H;
                let mut m_minus = model.clone();
                m_minus.params[pi].data[i] -= FD_H;
                let (_, _, lp) = model_loss(&m_plus, values, t, target);
                let (_, _, lm) = model_loss(&m_minus, values, t, target);
                (lp.item() - lm.item()) / (2.0 * FD_H)
            };
            let err = rel_err(analytic[i], numeric);
            assert!(
                err <= FD_TOL,
                "{}[{i}]: analytic {} vs numeric {} (rel err {err})",
                param.name,
                analytic[i],
                numeric,
            );
        }
    }
}
