mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sfin_core::corpus::Document;
use sfin_core::encoder::encode_words;
use sfin_core::numerics::{lstm_cell_forward, Init, LstmParams, LstmState, NodeId, ParamSet, Tape};
use sfin_core::training::{supervised_episode_with, TeacherTarget};
use sfin_core::Model;

use common::{compare_gradients, numeric_gradient, small_config};

const STEP: f64 = 1e-3;
const FLOOR: f64 = 1e-6;

fn check<F>(params: &mut ParamSet, mut f: F) -> (f64, f64)
where
    F: FnMut(&ParamSet, Option<&mut ParamSet>) -> f64,
{
    params.zero_grad();
    let mut grads = params.clone();
    f(params, Some(&mut grads));
    let numeric = numeric_gradient(params, STEP, |p| f(p, None));
    compare_gradients(&grads, &numeric, FLOOR)
}

fn assert_close((rel, abs): (f64, f64)) {
    assert!(rel < 1e-4, "max relative error {rel:e}");
    assert!(abs < 1e-6, "max absolute error on small entries {abs:e}");
}

fn finish(tape: Tape, loss: NodeId, grads: Option<&mut ParamSet>) -> f64 {
    if let Some(g) = grads {
        tape.backward(loss, g).unwrap();
    }
    tape.scalar(loss)
}

#[test]
fn lstm_cell_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut params = ParamSet::new();
    let cell = LstmParams::register(&mut params, "cell", 3, 4, &mut rng).unwrap();
    let x = vec![0.4, -0.7, 0.2];
    let r = vec![0.3, -1.1, 0.8, 0.5];
    let r2 = vec![-0.6, 0.9, 0.1, 0.7];
    assert_close(check(&mut params, |p, g| {
        let mut tape = Tape::new();
        let xn = tape.input(x.clone());
        let mut state = LstmState::zeros(&mut tape, 4);
        for _ in 0..3 {
            state = lstm_cell_forward(&mut tape, p, &cell, xn, state).unwrap();
        }
        let (rn, r2n) = (tape.input(r.clone()), tape.input(r2.clone()));
        let a = tape.mul(state.h, rn).unwrap();
        let b = tape.mul(state.c, r2n).unwrap();
        let both = tape.concat(&[a, b]).unwrap();
        let loss = tape.sum(both).unwrap();
        finish(tape, loss, g)
    }));
}

#[test]
fn affine_embed_and_softmax_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut params = ParamSet::new();
    let table = params
        .add("embed", vec![5, 3], Init::Uniform { fan_in: 1 }, &mut rng)
        .unwrap();
    let w = params
        .add("w", vec![9, 3], Init::Uniform { fan_in: 3 }, &mut rng)
        .unwrap();
    let b = params
        .add("b", vec![9], Init::Uniform { fan_in: 3 }, &mut rng)
        .unwrap();
    let mask = [true, false, true, true, true, false, true, true, true];
    assert_close(check(&mut params, |p, g| {
        let mut tape = Tape::new();
        let e1 = tape.embed(p, table, 1).unwrap();
        let e4 = tape.embed(p, table, 4).unwrap();
        let s = tape.add(e1, e4).unwrap();
        let t = tape.tanh(s).unwrap();
        let u = tape.sigmoid(e1).unwrap();
        let v = tape.mul(t, u).unwrap();
        let scores = tape.affine(p, w, b, v).unwrap();
        let lp = tape.log_softmax_pick(scores, &mask, 3).unwrap();
        let lq = tape.log_softmax_pick(scores, &mask, 7).unwrap();
        let part = tape.slice(scores, 2, 3).unwrap();
        let ps = tape.sum(part).unwrap();
        let pss = tape.scale(ps, 0.25).unwrap();
        let all = tape.concat(&[lp, lq, pss]).unwrap();
        let loss = tape.sum(all).unwrap();
        finish(tape, loss, g)
    }));
}

#[test]
fn max_pool_gradient_reaches_argmax_only() {
    let mut params = ParamSet::new();
    let rows = [
        vec![1.0, -2.0, 0.5],
        vec![0.0, 3.0, 0.5],
        vec![2.0, 1.0, -1.0],
    ];
    let ids: Vec<_> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            params
                .insert(
                    &format!("r{i}"),
                    sfin_core::numerics::Tensor::vector(r.clone()),
                )
                .unwrap()
        })
        .collect();
    let mut tape = Tape::new();
    let nodes: Vec<_> = ids.iter().map(|&id| tape.param(&params, id)).collect();
    let (pooled, argmax) = tape.max_pool(&nodes).unwrap();
    assert_eq!(argmax, vec![2, 1, 0]);
    let weights = tape.input(vec![1.0, 2.0, 3.0]);
    let prod = tape.mul(pooled, weights).unwrap();
    let loss = tape.sum(prod).unwrap();
    tape.backward(loss, &mut params).unwrap();
    assert_eq!(params.grad(ids[0]), &[0.0, 0.0, 3.0]);
    assert_eq!(params.grad(ids[1]), &[0.0, 2.0, 0.0]);
    assert_eq!(params.grad(ids[2]), &[1.0, 0.0, 0.0]);
}

#[test]
fn backward_accumulates() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut params = ParamSet::new();
    let w = params
        .add("w", vec![2, 2], Init::Uniform { fan_in: 2 }, &mut rng)
        .unwrap();
    let b = params
        .add("b", vec![2], Init::Constant(0.1), &mut rng)
        .unwrap();
    let mut tape = Tape::new();
    let x = tape.input(vec![0.5, -0.5]);
    let y = tape.affine(&params, w, b, x).unwrap();
    let loss = tape.sum(y).unwrap();
    tape.backward(loss, &mut params).unwrap();
    let once = params.grad(w).to_vec();
    tape.backward(loss, &mut params).unwrap();
    let twice: Vec<f64> = once.iter().map(|g| 2.0 * g).collect();
    assert_eq!(params.grad(w), twice.as_slice());
    params.zero_grad();
    assert!(params.grad(w).iter().all(|&g| g == 0.0));
}

#[test]
fn word_rows_ignore_other_sentences() {
    let model = Model::new(small_config(), 3).unwrap();
    let doc = Document::new(vec![1, 2, 3, 4, 5], vec![0, 2], vec![0], None).unwrap();
    let mut params = model.params.clone();
    params.zero_grad();
    let mut tape = Tape::new();
    let rows = encode_words(&mut tape, &params, &model.encoder, &doc).unwrap();
    let both = tape.concat(&rows[..2]).unwrap();
    let loss = tape.sum(both).unwrap();
    tape.backward(loss, &mut params).unwrap();
    let g = params.grad(model.encoder.embedding);
    let dim = small_config().embed_dim;
    for t in [3, 4, 5] {
        assert!(
            g[t * dim..(t + 1) * dim].iter().all(|&v| v == 0.0),
            "token {t}"
        );
    }
    for t in [1, 2] {
        assert!(
            g[t * dim..(t + 1) * dim].iter().any(|&v| v != 0.0),
            "token {t}"
        );
    }
}

/// Three sentences over two paragraphs, with a mixed gold sequence.
fn fd_document() -> Document {
    Document::new(
        vec![3, 7, 1, 12, 5, 9, 2, 14],
        vec![0, 3, 5],
        vec![0, 2],
        Some(vec![-1, 1, 1, 1, 1, -1, 2, 2]),
    )
    .unwrap()
}

fn episode_gradient(target: TeacherTarget) -> (f64, f64) {
    let model = Model::new(small_config(), 11).unwrap();
    let doc = fd_document();
    let mut params = model.params.clone();
    check(&mut params, |p, g| {
        let m = Model {
            params: p.clone(),
            ..model.clone()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let ep = supervised_episode_with(&m, &doc, &mut rng, target).unwrap();
        if let Some(g) = g {
            ep.backward(g).unwrap();
        }
        ep.loss_value()
    })
}

#[test]
fn episode_loss_gradient() {
    assert_close(episode_gradient(TeacherTarget::Sampled));
}

#[test]
fn correct_set_loss_gradient() {
    assert_close(episode_gradient(TeacherTarget::CorrectSet));
}
