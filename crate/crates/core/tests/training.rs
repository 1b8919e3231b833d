mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sfin_core::checkpoint::to_bytes;
use sfin_core::controller::{
    run_policy, Action, ActionSpace, Episode, Forced, Kind, Level, Location, Sampler, Trace,
};
use sfin_core::corpus::{generate_corpus, Document, GenConfig, IntRange};
use sfin_core::eval::evaluate;
use sfin_core::numerics::{Init, ParamSet, Tape};
use sfin_core::training::{
    correct_action_set, reinforce_gradient, sample_teacher_action, supervised_episode,
    supervised_episode_with, train, train_from, Phase, RewardBaseline, Teacher, TeacherTarget,
    TrainConfig,
};
use sfin_core::{Error, Model, ModelConfig};

use common::small_config;

fn tiny_gen(docs: usize, seed: u64) -> GenConfig {
    GenConfig {
        docs,
        vocab_size: 30,
        paragraphs: IntRange::new(1, 2),
        sentences_per_paragraph: IntRange::new(1, 3),
        words_per_sentence: IntRange::new(2, 6),
        words_per_doc: IntRange::new(4, 30),
        events: IntRange::new(1, 3),
        trigger_pool: IntRange::new(15, 29),
        filler_pool: IntRange::new(0, 19),
        seed,
        ..GenConfig::default()
    }
}

fn tiny_model() -> ModelConfig {
    ModelConfig {
        vocab_size: 30,
        embed_dim: 8,
        word_hidden: 8,
        sentence_hidden: 8,
        controller_hidden: 16,
        head_hidden: 8,
        action_space: ActionSpace::Full,
    }
}

#[test]
fn teacher_draws_uniformly() {
    // uniform first sentence of a one-sentence paragraph: word, sentence,
    // and paragraph non-event all reproduce gold
    let doc = Document::new(
        vec![0; 5],
        vec![0, 3],
        vec![0, 1],
        Some(vec![-1, -1, -1, 1, 1]),
    )
    .unwrap();
    let set = correct_action_set(Location::START, &doc, 0).unwrap();
    assert_eq!(set.len(), 3);
    let n = 30_000;
    let mut counts = [0usize; 3];
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..n {
        let a = sample_teacher_action(&set, &mut rng).unwrap();
        counts[set.iter().position(|&b| b == a).unwrap()] += 1;
    }
    let p = 1.0 / 3.0;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    for c in counts {
        assert!((c as f64 - n as f64 * p).abs() < 3.0 * sigma, "{counts:?}");
    }
}

#[test]
fn teacher_reproduces_gold() {
    let docs = generate_corpus(&GenConfig {
        docs: 30,
        seed: 2,
        ..GenConfig::default()
    })
    .unwrap();
    let cfg = ModelConfig {
        vocab_size: 250,
        ..small_config()
    };
    let model = Model::new(cfg, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for doc in &docs {
        let ep = run_policy(&model, doc, &mut Teacher { rng: &mut rng }).unwrap();
        assert_eq!(ep.trace.tags, doc.gold_tags().unwrap());
    }
}

#[test]
fn uniform_scores_give_log_six_for_one_word() {
    let mut model = Model::new(small_config(), 0).unwrap();
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        model.params.value_mut(id).data_mut().fill(0.0);
    }
    let doc = Document::new(vec![3], vec![0], vec![0], Some(vec![1])).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let sup = supervised_episode(&model, &doc, &mut rng).unwrap();
    assert!((sup.loss_value() - 6f64.ln()).abs() < 1e-12);
    // three new-event actions are correct, each with probability 1/6
    let set = supervised_episode_with(&model, &doc, &mut rng, TeacherTarget::CorrectSet).unwrap();
    assert!((set.loss_value() - 6f64.ln()).abs() < 1e-12);
}

/// One-step episode over a two-armed bandit with a nine-score parameter.
fn bandit_episode(params: &ParamSet, rng: &mut ChaCha8Rng) -> (Episode, usize) {
    let id = params.id("scores").unwrap();
    let mut mask = [false; 9];
    mask[0] = true;
    mask[1] = true;
    let mut tape = Tape::new();
    let scores = tape.param(params, id);
    let probs = sfin_core::numerics::masked_softmax(tape.value(scores), &mask).unwrap();
    let arm = usize::from(rand::Rng::gen::<f64>(rng) >= probs[0]);
    let lp = tape.log_softmax_pick(scores, &mask, arm).unwrap();
    let trace = Trace {
        steps: Vec::new(),
        tags: Vec::new(),
        sampled: true,
    };
    (
        Episode {
            trace,
            tape,
            log_probs: vec![lp],
            scores: vec![scores],
        },
        arm,
    )
}

#[test]
fn reinforce_learns_the_better_arm() {
    let mut params = ParamSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let id = params
        .add("scores", vec![9], Init::Constant(0.0), &mut rng)
        .unwrap();
    let mut baseline = RewardBaseline::new(0.9);
    for _ in 0..10_000 {
        let (mut ep, arm) = bandit_episode(&params, &mut rng);
        let reward = if arm == 0 { 1.0 } else { 0.2 };
        reinforce_gradient(&mut ep, reward, &mut baseline, &mut params).unwrap();
        params.sgd_step(0.05, 5.0);
        params.zero_grad();
    }
    let s = params.value(id).data();
    let p0 = 1.0 / (1.0 + (s[1] - s[0]).exp());
    assert!(p0 > 0.95, "p(better arm) = {p0}");
}

#[test]
fn positive_advantage_raises_chosen_actions() {
    let model = Model::new(small_config(), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let doc = common::random_document(12, 20, true, &mut rng);
    let mut ep = run_policy(&model, &doc, &mut Sampler { rng: &mut rng }).unwrap();
    let before: f64 = ep.log_probs.iter().map(|&n| ep.tape.scalar(n)).sum();
    let actions = ep.trace.actions();
    let mut baseline = RewardBaseline {
        value: Some(0.0),
        alpha: 0.9,
    };
    let mut params = model.params.clone();
    params.zero_grad();
    let adv = reinforce_gradient(&mut ep, 1.0, &mut baseline, &mut params).unwrap();
    assert_eq!(adv, 1.0);
    params.sgd_step(0.01, 5.0);
    let after_model = Model { params, ..model };
    let again = run_policy(&after_model, &doc, &mut Forced::new(actions)).unwrap();
    let after: f64 = again.log_probs.iter().map(|&n| again.tape.scalar(n)).sum();
    assert!(after > before, "{after} <= {before}");
}

#[test]
fn reinforce_needs_sampled_episode() {
    let model = Model::new(small_config(), 4).unwrap();
    let doc = Document::new(vec![1, 2], vec![0], vec![0], Some(vec![-1, 1])).unwrap();
    let w = Action::new(Level::Word, Kind::NonEvent);
    let mut ep = run_policy(&model, &doc, &mut Forced::new(vec![w, w])).unwrap();
    let mut params = model.params.clone();
    let err = reinforce_gradient(&mut ep, 1.0, &mut RewardBaseline::new(0.9), &mut params);
    assert!(matches!(err, Err(Error::Mode(_))));
}

#[test]
fn overfits_a_small_corpus() {
    let docs = generate_corpus(&tiny_gen(20, 5)).unwrap();
    let cfg = TrainConfig {
        model: tiny_model(),
        supervised_epochs: 200,
        rl_epochs: 0,
        learning_rate: 0.1,
        teacher_target: TeacherTarget::CorrectSet,
        seed: 3,
        ..TrainConfig::default()
    };
    let out = train(&docs, &cfg).unwrap();
    let report = evaluate(&docs, &out.model).unwrap();
    assert_eq!(report.token_accuracy, 1.0, "{report}");
    assert!(out.log.iter().all(|m| m.phase == Phase::Supervised));
    assert!(out.log.last().unwrap().mean_loss < out.log[0].mean_loss);
}

#[test]
fn training_is_deterministic() {
    let docs = generate_corpus(&tiny_gen(6, 1)).unwrap();
    let cfg = TrainConfig {
        model: tiny_model(),
        supervised_epochs: 2,
        rl_epochs: 1,
        seed: 12,
        ..TrainConfig::default()
    };
    let a = train(&docs, &cfg).unwrap();
    let b = train(&docs, &cfg).unwrap();
    assert_eq!(to_bytes(&a.model), to_bytes(&b.model));
    assert_eq!(a.log, b.log);
    let c = train(&docs, &TrainConfig { seed: 13, ..cfg }).unwrap();
    assert_ne!(to_bytes(&a.model), to_bytes(&c.model));
}

#[test]
fn zero_epochs_keep_initialization() {
    let docs = generate_corpus(&tiny_gen(3, 1)).unwrap();
    let cfg = TrainConfig {
        model: tiny_model(),
        supervised_epochs: 0,
        rl_epochs: 0,
        seed: 5,
        ..TrainConfig::default()
    };
    let out = train(&docs, &cfg).unwrap();
    assert!(out.log.is_empty());
    assert_eq!(
        to_bytes(&out.model),
        to_bytes(&Model::new(tiny_model(), 5).unwrap())
    );
}

#[test]
fn rejects_empty_or_unlabelled_corpus() {
    let cfg = TrainConfig {
        model: tiny_model(),
        ..TrainConfig::default()
    };
    assert!(matches!(train(&[], &cfg), Err(Error::EmptyCorpus)));
    let doc = Document::new(vec![1, 2], vec![0], vec![0], None).unwrap();
    let model = Model::new(tiny_model(), 0).unwrap();
    assert!(matches!(
        train_from(model, &[doc], &cfg),
        Err(Error::MissingGold(_))
    ));
}
