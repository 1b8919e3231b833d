//! Supervised teacher forcing followed by REINFORCE fine-tuning.
//!
//! During teacher forcing the episode follows an action drawn uniformly from
//! the actions whose whole emitted segment matches gold, and the loss is the
//! negative log-likelihood of that action under the masked softmax. The
//! policy-gradient phase samples from the model and rewards token accuracy
//! minus `beta` times actions-per-word.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{
    expand_action, run_policy, valid_action_mask, Action, Episode, Location, Policy, Sampler,
    StepView,
};
use crate::corpus::{Document, Tag};
use crate::error::{Error, Result};
use crate::eval::{evaluate, span_counts, token_accuracy, SpanCounts};
use crate::model::{Model, ModelConfig};
use crate::numerics::{NodeId, ParamSet};

/// What the supervised loss scores at each teacher-forced step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TeacherTarget {
    /// The action the teacher sampled.
    #[default]
    Sampled,
    /// The mean log-probability over the whole correct-action set. Same
    /// expected gradient as `Sampled`, without the sampling noise.
    CorrectSet,
}

impl fmt::Display for TeacherTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TeacherTarget::Sampled => "sampled",
            TeacherTarget::CorrectSet => "correct-set",
        })
    }
}

impl FromStr for TeacherTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sampled" => Ok(TeacherTarget::Sampled),
            "correct-set" => Ok(TeacherTarget::CorrectSet),
            _ => Err(Error::Config(format!(
                "unknown teacher target `{s}` (expected sampled or correct-set)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub supervised_epochs: usize,
    pub rl_epochs: usize,
    pub learning_rate: f64,
    /// Documents per parameter update.
    pub batch_size: usize,
    /// Weight of actions-per-word in the reward.
    pub beta: f64,
    /// Smoothing of the reward baseline.
    pub alpha: f64,
    pub clip_norm: f64,
    pub teacher_target: TeacherTarget,
    pub seed: u64,
    /// Training documents evaluated greedily after each supervised epoch.
    pub metrics_docs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            supervised_epochs: 40,
            rl_epochs: 4,
            learning_rate: 0.05,
            batch_size: 4,
            beta: 0.1,
            alpha: 0.9,
            clip_norm: 5.0,
            teacher_target: TeacherTarget::Sampled,
            seed: 0,
            metrics_docs: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta {} outside [0, 1]", self.beta)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha {} outside (0, 1)",
                self.alpha
            )));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        Ok(())
    }
}

fn gold_of(doc: &Document) -> Result<&[Tag]> {
    doc.gold_tags()
        .ok_or_else(|| Error::MissingGold("document has no gold tags".into()))
}

/// Unmasked actions whose entire emitted segment equals gold at `loc`, with
/// `oracle_mark` the event counter along the gold path.
pub fn correct_action_set(loc: Location, doc: &Document, oracle_mark: Tag) -> Result<Vec<Action>> {
    let gold = gold_of(doc)?;
    let mask = valid_action_mask(loc, oracle_mark);
    let mut set = Vec::with_capacity(3);
    for a in Action::all().filter(|a| mask[a.index()]) {
        let (segment, _) = expand_action(a, loc, doc, oracle_mark)?;
        if gold[loc.w..loc.w + segment.len()] == segment[..] {
            set.push(a);
        }
    }
    if set.is_empty() {
        return Err(Error::validation(
            "gold_tags",
            format!("no action reproduces gold at word {}", loc.w),
        ));
    }
    Ok(set)
}

/// Uniform draw from a non-empty action set.
pub fn sample_teacher_action<R: Rng>(set: &[Action], rng: &mut R) -> Result<Action> {
    set.choose(rng)
        .copied()
        .ok_or_else(|| Error::InvalidAction("empty correct-action set".into()))
}

/// Follows a uniformly drawn correct action at every step.
pub struct Teacher<R> {
    pub rng: R,
}

impl<R: Rng> Policy for Teacher<R> {
    fn choose(&mut self, view: &StepView<'_>) -> Result<Action> {
        let set: Vec<Action> = correct_action_set(view.loc, view.doc, view.mark)?
            .into_iter()
            .filter(|a| view.mask[a.index()])
            .collect();
        sample_teacher_action(&set, &mut self.rng)
    }
}

/// A teacher-forced episode and its summed negative log-likelihood node.
pub struct SupervisedEpisode {
    pub episode: Episode,
    pub loss: NodeId,
}

impl SupervisedEpisode {
    pub fn loss_value(&self) -> f64 {
        self.episode.tape.scalar(self.loss)
    }

    pub fn backward(&self, params: &mut ParamSet) -> Result<()> {
        self.episode.tape.backward(self.loss, params)
    }
}

fn negative_sum(episode: &mut Episode, scale: f64) -> Result<NodeId> {
    let all = episode.tape.concat(&episode.log_probs)?;
    let total = episode.tape.sum(all)?;
    episode.tape.scale(total, -scale)
}

pub fn supervised_episode<R: Rng>(
    model: &Model,
    doc: &Document,
    rng: &mut R,
) -> Result<SupervisedEpisode> {
    supervised_episode_with(model, doc, rng, TeacherTarget::Sampled)
}

/// Teacher-forced episode whose loss uses `target`. The path always follows
/// the sampled action.
pub fn supervised_episode_with<R: Rng>(
    model: &Model,
    doc: &Document,
    rng: &mut R,
    target: TeacherTarget,
) -> Result<SupervisedEpisode> {
    gold_of(doc)?;
    let mut episode = run_policy(model, doc, &mut Teacher { rng })?;
    let loss = match target {
        TeacherTarget::Sampled => negative_sum(&mut episode, 1.0)?,
        TeacherTarget::CorrectSet => correct_set_loss(&mut episode, doc)?,
    };
    Ok(SupervisedEpisode { episode, loss })
}

/// `-Σ_t mean_{a ∈ C_t} log π(a)` along the recorded path.
fn correct_set_loss(episode: &mut Episode, doc: &Document) -> Result<NodeId> {
    let mut terms = Vec::new();
    for (t, step) in episode.trace.steps.iter().enumerate() {
        let set: Vec<Action> = correct_action_set(step.location, doc, step.mark_before)?
            .into_iter()
            .filter(|a| step.mask[a.index()])
            .collect();
        let k = set.len() as f64;
        for a in set {
            let lp = episode
                .tape
                .log_softmax_pick(episode.scores[t], &step.mask, a.index())?;
            terms.push(episode.tape.scale(lp, -1.0 / k)?);
        }
    }
    let all = episode.tape.concat(&terms)?;
    episode.tape.sum(all)
}

/// `-Σ_t log π(teacher action_t)` over one teacher-forced episode.
pub fn supervised_episode_loss<R: Rng>(model: &Model, doc: &Document, rng: &mut R) -> Result<f64> {
    Ok(supervised_episode(model, doc, rng)?.loss_value())
}

/// `accuracy − beta · actions / words`.
pub fn episode_reward(tags: &[Tag], actions: usize, doc: &Document, beta: f64) -> Result<f64> {
    let gold = gold_of(doc)?;
    let acc = token_accuracy(tags, gold)?;
    Ok(acc - beta * actions as f64 / doc.num_words() as f64)
}

/// Exponential moving average of rewards, seeded with the first reward seen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardBaseline {
    pub value: Option<f64>,
    pub alpha: f64,
}

impl RewardBaseline {
    pub fn new(alpha: f64) -> Self {
        RewardBaseline { value: None, alpha }
    }

    /// Baseline to compare `reward` against (the reward itself if unset).
    pub fn current(&self, reward: f64) -> f64 {
        self.value.unwrap_or(reward)
    }

    pub fn update(&mut self, reward: f64) {
        self.value = Some(match self.value {
            None => reward,
            Some(b) => self.alpha * b + (1.0 - self.alpha) * reward,
        });
    }
}

/// Accumulates `-(r - b) Σ_t ∇ log π(a_t)` into `params`, then updates the
/// baseline. Returns the advantage used.
pub fn reinforce_gradient(
    episode: &mut Episode,
    reward: f64,
    baseline: &mut RewardBaseline,
    params: &mut ParamSet,
) -> Result<f64> {
    if !episode.trace.sampled {
        return Err(Error::Mode(
            "policy gradient needs an episode sampled from the model".into(),
        ));
    }
    let advantage = reward - baseline.current(reward);
    if advantage != 0.0 {
        let loss = negative_sum(episode, advantage)?;
        episode.tape.backward(loss, params)?;
    }
    baseline.update(reward);
    Ok(advantage)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Supervised,
    Rl,
}

/// One row of the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub phase: Phase,
    pub mean_loss: f64,
    pub mean_reward: f64,
    pub token_acc: f64,
    pub span_f1: f64,
    pub actions_per_word: f64,
}

pub const METRICS_HEADER: &str =
    "epoch,phase,mean_loss,mean_reward,token_acc,span_f1,actions_per_word";

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let phase = match r.phase {
            Phase::Supervised => "supervised",
            Phase::Rl => "rl",
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.epoch, phase, r.mean_loss, r.mean_reward, r.token_acc, r.span_f1, r.actions_per_word
        ));
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<EpochMetrics>,
}

/// Supervised phase then RL phase; fully determined by `config.seed`.
pub fn train(corpus: &[Document], config: &TrainConfig) -> Result<TrainOutcome> {
    let model = Model::new(config.model, config.seed)?;
    train_from(model, corpus, config)
}

/// Like [`train`] but starting from existing parameters.
pub fn train_from(
    mut model: Model,
    corpus: &[Document],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if let Some(i) = corpus.iter().position(|d| d.gold_tags().is_none()) {
        return Err(Error::MissingGold(format!(
            "training document {i} is unlabeled"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    model.params.zero_grad();

    for epoch in 0..config.supervised_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            for &i in batch {
                let sup =
                    supervised_episode_with(&model, &corpus[i], &mut rng, config.teacher_target)?;
                loss_sum += sup.loss_value();
                sup.backward(&mut model.params)?;
            }
            model
                .params
                .sgd_step(config.learning_rate, config.clip_norm);
            model.params.zero_grad();
        }
        let sample = config.metrics_docs.min(corpus.len());
        let report = evaluate(&corpus[..sample], &model)?;
        log.push(EpochMetrics {
            epoch,
            phase: Phase::Supervised,
            mean_loss: loss_sum / corpus.len() as f64,
            mean_reward: report.token_accuracy - config.beta * report.actions_per_word,
            token_acc: report.token_accuracy,
            span_f1: report.f1,
            actions_per_word: report.actions_per_word,
        });
    }

    let mut baseline = RewardBaseline::new(config.alpha);
    for epoch in 0..config.rl_epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut reward_sum, mut apw_sum) = (0.0, 0.0, 0.0);
        let (mut correct, mut words) = (0usize, 0usize);
        let mut spans = SpanCounts::default();
        for batch in order.chunks(config.batch_size) {
            for &i in batch {
                let doc = &corpus[i];
                let gold = gold_of(doc)?;
                let mut ep = run_policy(&model, doc, &mut Sampler { rng: &mut rng })?;
                let trace = &ep.trace;
                let reward = episode_reward(&trace.tags, trace.num_actions(), doc, config.beta)?;
                reward_sum += reward;
                apw_sum += trace.actions_per_word();
                loss_sum -= ep.log_probs.iter().map(|&n| ep.tape.scalar(n)).sum::<f64>();
                let acc = token_accuracy(&trace.tags, gold)?;
                correct += (acc * doc.num_words() as f64).round() as usize;
                words += doc.num_words();
                spans += span_counts(&trace.tags, gold)?;
                reinforce_gradient(&mut ep, reward, &mut baseline, &mut model.params)?;
            }
            model
                .params
                .sgd_step(config.learning_rate, config.clip_norm);
            model.params.zero_grad();
        }
        let n = corpus.len() as f64;
        log.push(EpochMetrics {
            epoch: config.supervised_epochs + epoch,
            phase: Phase::Rl,
            mean_loss: loss_sum / n,
            mean_reward: reward_sum / n,
            token_acc: correct as f64 / words as f64,
            span_f1: spans.prf().f1,
            actions_per_word: apw_sum / n,
        });
    }
    Ok(TrainOutcome { model, log })
}
