#![allow(dead_code)]

use rand::Rng;
use sfin_core::controller::ActionSpace;
use sfin_core::corpus::{Document, Tag, NON_EVENT};
use sfin_core::numerics::ParamSet;
use sfin_core::ModelConfig;

pub fn small_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 20,
        embed_dim: 4,
        word_hidden: 3,
        sentence_hidden: 3,
        controller_hidden: 5,
        head_hidden: 4,
        action_space: ActionSpace::Full,
    }
}

/// Left-to-right draw of a representable tag sequence.
pub fn random_tags<R: Rng>(n: usize, rng: &mut R) -> Vec<Tag> {
    let mut mark = 0;
    (0..n).map(|_| pick(rng, &mut mark)).collect()
}

/// Random structure with `n` words, tokens below `vocab`, and optional gold.
pub fn random_document<R: Rng>(n: usize, vocab: usize, labelled: bool, rng: &mut R) -> Document {
    let mut sentence_starts = vec![0];
    for w in 1..n {
        if rng.gen_bool(0.3) {
            sentence_starts.push(w);
        }
    }
    let mut paragraph_starts = vec![0];
    for s in 1..sentence_starts.len() {
        if rng.gen_bool(0.4) {
            paragraph_starts.push(s);
        }
    }
    let tokens = (0..n).map(|_| rng.gen_range(0..vocab)).collect();
    let gold = labelled.then(|| random_tags(n, rng));
    Document::new(tokens, sentence_starts, paragraph_starts, gold).unwrap()
}

fn pick<R: Rng>(rng: &mut R, mark: &mut Tag) -> Tag {
    match rng.gen_range(0..3) {
        0 => NON_EVENT,
        1 if *mark > 0 => *mark,
        _ => {
            *mark += 1;
            *mark
        }
    }
}

/// Tags that are often uniform over whole sentences or paragraphs, so
/// sentence and paragraph actions are frequently correct.
pub fn blocky_tags<R: Rng>(doc: &Document, rng: &mut R) -> Vec<Tag> {
    let mut tags = Vec::with_capacity(doc.num_words());
    let mut mark = 0;
    for p in 0..doc.num_paragraphs() {
        if rng.gen_bool(0.3) {
            let t = pick(rng, &mut mark);
            tags.extend(doc.paragraph_words(p).map(|_| t));
            continue;
        }
        for s in doc.paragraph_sentences(p) {
            if rng.gen_bool(0.5) {
                let t = pick(rng, &mut mark);
                tags.extend(doc.sentence_words(s).map(|_| t));
            } else {
                for _ in doc.sentence_words(s) {
                    let t = pick(rng, &mut mark);
                    tags.push(t);
                }
            }
        }
    }
    tags
}

/// Central differences of `f` with respect to every parameter entry.
pub fn numeric_gradient<F>(params: &mut ParamSet, step: f64, mut f: F) -> Vec<Vec<f64>>
where
    F: FnMut(&ParamSet) -> f64,
{
    let ids: Vec<_> = params.ids().collect();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let mut g = vec![0.0; params.value(id).len()];
        for (k, slot) in g.iter_mut().enumerate() {
            let orig = params.value(id).data()[k];
            params.value_mut(id).data_mut()[k] = orig + step;
            let up = f(params);
            params.value_mut(id).data_mut()[k] = orig - step;
            let down = f(params);
            params.value_mut(id).data_mut()[k] = orig;
            *slot = (up - down) / (2.0 * step);
        }
        out.push(g);
    }
    out
}

/// Largest relative error, with entries whose analytic magnitude is below
/// `floor` compared absolutely. Returns `(max_rel, max_abs_small)`.
pub fn compare_gradients(params: &ParamSet, numeric: &[Vec<f64>], floor: f64) -> (f64, f64) {
    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    for (id, num) in params.ids().zip(numeric) {
        for (&a, &n) in params.grad(id).iter().zip(num) {
            if a.abs() < floor {
                max_abs = max_abs.max((a - n).abs());
            } else {
                max_rel = max_rel.max((a - n).abs() / a.abs().max(n.abs()));
            }
        }
    }
    (max_rel, max_abs)
}
