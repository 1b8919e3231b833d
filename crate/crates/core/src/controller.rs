//! The read → score → act → advance loop over a document's memory.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Tag, NON_EVENT};
use crate::encoder::{encode_document, EncodedDocument, HierMemory};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::{
    lstm_cell_forward, masked_softmax, Init, LstmParams, LstmState, NodeId, ParamId, ParamSet, Tape,
};

pub const NUM_ACTIONS: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Word,
    Sentence,
    Paragraph,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Kind {
    #[serde(rename = "non")]
    NonEvent,
    #[serde(rename = "current")]
    CurrentEvent,
    #[serde(rename = "new")]
    NewEvent,
}

/// One of the nine (level × kind) actions. Index order is level-major:
/// word-non, word-current, word-new, sentence-non, …, paragraph-new.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Action {
    pub level: Level,
    pub kind: Kind,
}

const LEVELS: [Level; 3] = [Level::Word, Level::Sentence, Level::Paragraph];
const KINDS: [Kind; 3] = [Kind::NonEvent, Kind::CurrentEvent, Kind::NewEvent];

impl Action {
    pub const fn new(level: Level, kind: Kind) -> Self {
        Action { level, kind }
    }

    pub fn index(self) -> usize {
        self.level as usize * 3 + self.kind as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        (i < NUM_ACTIONS).then(|| Action::new(LEVELS[i / 3], KINDS[i % 3]))
    }

    pub fn all() -> impl Iterator<Item = Action> {
        (0..NUM_ACTIONS).filter_map(Action::from_index)
    }

    pub fn level_name(self) -> &'static str {
        match self.level {
            Level::Word => "word",
            Level::Sentence => "sentence",
            Level::Paragraph => "paragraph",
        }
    }

    pub fn kind_name(self) -> &'static str {
        match self.kind {
            Kind::NonEvent => "non",
            Kind::CurrentEvent => "current",
            Kind::NewEvent => "new",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.level_name(), self.kind_name())
    }
}

impl FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Action::all()
            .find(|a| a.to_string() == s)
            .ok_or_else(|| Error::Parse(format!("unknown action `{s}`")))
    }
}

/// Synchronized read-head positions: word, and the sentence and paragraph
/// containing it. At the end of text all three point one past the last unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "[usize; 3]", from = "[usize; 3]")]
pub struct Location {
    pub w: usize,
    pub s: usize,
    pub p: usize,
}

impl From<Location> for [usize; 3] {
    fn from(l: Location) -> Self {
        [l.w, l.s, l.p]
    }
}

impl From<[usize; 3]> for Location {
    fn from(a: [usize; 3]) -> Self {
        Location {
            w: a[0],
            s: a[1],
            p: a[2],
        }
    }
}

impl Location {
    pub const START: Location = Location { w: 0, s: 0, p: 0 };

    /// The synchronized location of word `w` (terminal if `w` is past the end).
    pub fn at_word(doc: &Document, w: usize) -> Self {
        if w >= doc.num_words() {
            return Location {
                w: doc.num_words(),
                s: doc.num_sentences(),
                p: doc.num_paragraphs(),
            };
        }
        let s = doc.sentence_of_word(w);
        Location {
            w,
            s,
            p: doc.paragraph_of_sentence(s),
        }
    }

    pub fn is_terminal(&self, doc: &Document) -> bool {
        self.w >= doc.num_words()
    }
}

/// Which levels of action a model may take.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionSpace {
    #[default]
    Full,
    WordOnly,
}

impl ActionSpace {
    pub fn restrict(self, mut mask: [bool; NUM_ACTIONS]) -> [bool; NUM_ACTIONS] {
        if self == ActionSpace::WordOnly {
            mask[3..].iter_mut().for_each(|m| *m = false);
        }
        mask
    }
}

impl fmt::Display for ActionSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActionSpace::Full => "full",
            ActionSpace::WordOnly => "word-only",
        })
    }
}

impl FromStr for ActionSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(ActionSpace::Full),
            "word-only" | "word" => Ok(ActionSpace::WordOnly),
            _ => Err(Error::Config(format!("unknown action space `{s}`"))),
        }
    }
}

/// One-hidden-layer scoring network with a scalar output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScoringHead {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ControllerParams {
    pub cell: LstmParams,
    pub heads: [ScoringHead; NUM_ACTIONS],
}

fn head_prefix(i: usize) -> String {
    let a = Action::from_index(i).expect("valid index");
    format!("controller.head.{}_{}", a.level_name(), a.kind_name())
}

impl ControllerParams {
    pub fn register<R: Rng>(
        params: &mut ParamSet,
        read_dim: usize,
        hidden: usize,
        head_hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let cell = LstmParams::register(params, "controller.lstm", read_dim, hidden, rng)?;
        let mut heads = Vec::with_capacity(NUM_ACTIONS);
        for i in 0..NUM_ACTIONS {
            let p = head_prefix(i);
            let w1 = params.add(
                &format!("{p}.W1"),
                vec![head_hidden, hidden],
                Init::Uniform { fan_in: hidden },
                rng,
            )?;
            let b1 = params.add(
                &format!("{p}.b1"),
                vec![head_hidden],
                Init::Uniform { fan_in: hidden },
                rng,
            )?;
            let w2 = params.add(
                &format!("{p}.W2"),
                vec![1, head_hidden],
                Init::Uniform {
                    fan_in: head_hidden,
                },
                rng,
            )?;
            let b2 = params.add(
                &format!("{p}.b2"),
                vec![1],
                Init::Uniform {
                    fan_in: head_hidden,
                },
                rng,
            )?;
            heads.push(ScoringHead { w1, b1, w2, b2 });
        }
        Ok(ControllerParams {
            cell,
            heads: heads.try_into().expect("nine heads"),
        })
    }

    pub fn lookup(params: &ParamSet) -> Result<Self> {
        let cell = LstmParams::lookup(params, "controller.lstm")?;
        let get = |n: String| {
            params
                .id(&n)
                .ok_or_else(|| Error::Config(format!("missing parameter `{n}`")))
        };
        let heads = (0..NUM_ACTIONS)
            .map(|i| {
                let p = head_prefix(i);
                Ok(ScoringHead {
                    w1: get(format!("{p}.W1"))?,
                    b1: get(format!("{p}.b1"))?,
                    w2: get(format!("{p}.W2"))?,
                    b2: get(format!("{p}.b2"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ControllerParams {
            cell,
            heads: heads.try_into().expect("nine heads"),
        })
    }
}

/// `[M_w[w]; M_s[s]; M_p[p]]` from materialized memory.
pub fn read_memory(mem: &HierMemory, loc: Location) -> Result<Vec<f64>> {
    if loc.w >= mem.words.rows() {
        return Err(Error::EndOfText {
            w: loc.w,
            len: mem.words.rows(),
        });
    }
    let mut out =
        Vec::with_capacity(mem.words.cols() + mem.sentences.cols() + mem.paragraphs.cols());
    out.extend_from_slice(mem.words.row(loc.w));
    out.extend_from_slice(mem.sentences.row(loc.s));
    out.extend_from_slice(mem.paragraphs.row(loc.p));
    Ok(out)
}

/// Tape version of [`read_memory`], so gradients reach the encoder.
pub fn read_memory_node(tape: &mut Tape, enc: &EncodedDocument, loc: Location) -> Result<NodeId> {
    if loc.w >= enc.words.len() {
        return Err(Error::EndOfText {
            w: loc.w,
            len: enc.words.len(),
        });
    }
    tape.concat(&[
        enc.words[loc.w],
        enc.sentences[loc.s],
        enc.paragraphs[loc.p],
    ])
}

/// Advances the controller LSTM on `read` and scores all nine actions.
pub fn controller_step(
    tape: &mut Tape,
    params: &ParamSet,
    ctrl: &ControllerParams,
    state: LstmState,
    read: NodeId,
) -> Result<(LstmState, NodeId)> {
    let next = lstm_cell_forward(tape, params, &ctrl.cell, read, state)?;
    let mut scores = [next.h; NUM_ACTIONS];
    for (slot, head) in scores.iter_mut().zip(&ctrl.heads) {
        let a = tape.affine(params, head.w1, head.b1, next.h)?;
        let t = tape.tanh(a)?;
        *slot = tape.affine(params, head.w2, head.b2, t)?;
    }
    Ok((next, tape.concat(&scores)?))
}

/// Current-event actions need an existing event.
pub fn valid_action_mask(_loc: Location, mark: Tag) -> [bool; NUM_ACTIONS] {
    let mut mask = [true; NUM_ACTIONS];
    if mark == 0 {
        for a in Action::all().filter(|a| a.kind == Kind::CurrentEvent) {
            mask[a.index()] = false;
        }
    }
    mask
}

/// Number of words an action at `loc` covers.
pub fn segment_len(action: Action, loc: Location, doc: &Document) -> usize {
    let end = match action.level {
        Level::Word => loc.w + 1,
        Level::Sentence => doc.sentence_words(loc.s).end,
        Level::Paragraph => doc.paragraph_words(loc.p).end,
    };
    end - loc.w
}

/// The tag segment an action emits and the event counter afterwards.
pub fn expand_action(
    action: Action,
    loc: Location,
    doc: &Document,
    mark: Tag,
) -> Result<(Vec<Tag>, Tag)> {
    if loc.is_terminal(doc) {
        return Err(Error::EndOfText {
            w: loc.w,
            len: doc.num_words(),
        });
    }
    if !valid_action_mask(loc, mark)[action.index()] {
        return Err(Error::InvalidAction(format!("{action} with mark {mark}")));
    }
    let len = segment_len(action, loc, doc);
    let (tag, next) = match action.kind {
        Kind::NonEvent => (NON_EVENT, mark),
        Kind::CurrentEvent => (mark, mark),
        Kind::NewEvent => (mark + 1, mark + 1),
    };
    Ok((vec![tag; len], next))
}

pub fn advance_location(loc: Location, action: Action, doc: &Document) -> Location {
    Location::at_word(doc, loc.w + segment_len(action, loc, doc))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectMode {
    Greedy,
    Sample,
}

impl FromStr for SelectMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(SelectMode::Greedy),
            "sample" => Ok(SelectMode::Sample),
            _ => Err(Error::Config(format!("unknown mode `{s}`"))),
        }
    }
}

/// Greedy: highest unmasked score, lowest index on ties. Sample: draw from
/// the masked softmax.
pub fn select_action<R: Rng>(
    scores: &[f64],
    mask: &[bool],
    mode: SelectMode,
    rng: &mut R,
) -> Result<Action> {
    if scores.len() != NUM_ACTIONS || mask.len() != NUM_ACTIONS {
        return Err(Error::shape(
            "select_action needs nine scores and mask entries",
        ));
    }
    let idx = match mode {
        SelectMode::Greedy => greedy_index(scores, mask)?,
        SelectMode::Sample => {
            let probs = masked_softmax(scores, mask)?;
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &p) in probs.iter().enumerate() {
                if p <= 0.0 {
                    continue;
                }
                pick = Some(i);
                acc += p;
                if u < acc {
                    break;
                }
            }
            pick.ok_or(Error::NoValidAction)?
        }
    };
    Ok(Action::from_index(idx).expect("index below nine"))
}

fn greedy_index(scores: &[f64], mask: &[bool]) -> Result<usize> {
    let mut best: Option<usize> = None;
    for i in (0..scores.len()).filter(|&i| mask[i]) {
        if best.is_none_or(|b| scores[i] > scores[b]) {
            best = Some(i);
        }
    }
    best.ok_or(Error::NoValidAction)
}

/// What a policy sees before choosing.
#[derive(Debug)]
pub struct StepView<'a> {
    pub doc: &'a Document,
    pub loc: Location,
    pub mark: Tag,
    pub scores: &'a [f64; NUM_ACTIONS],
    pub mask: &'a [bool; NUM_ACTIONS],
}

/// Chooses one action per step.
pub trait Policy {
    fn choose(&mut self, view: &StepView<'_>) -> Result<Action>;

    /// Whether actions are drawn from the model's own distribution.
    fn is_sampling(&self) -> bool {
        false
    }
}

impl<F> Policy for F
where
    F: FnMut(&StepView<'_>) -> Result<Action>,
{
    fn choose(&mut self, view: &StepView<'_>) -> Result<Action> {
        self(view)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Greedy;

impl Policy for Greedy {
    fn choose(&mut self, view: &StepView<'_>) -> Result<Action> {
        let i = greedy_index(view.scores, view.mask)?;
        Ok(Action::from_index(i).expect("index below nine"))
    }
}

pub struct Sampler<R> {
    pub rng: R,
}

impl<R: Rng> Policy for Sampler<R> {
    fn choose(&mut self, view: &StepView<'_>) -> Result<Action> {
        select_action(view.scores, view.mask, SelectMode::Sample, &mut self.rng)
    }

    fn is_sampling(&self) -> bool {
        true
    }
}

/// Replays a fixed action list.
#[derive(Debug, Clone)]
pub struct Forced {
    actions: std::vec::IntoIter<Action>,
}

impl Forced {
    pub fn new(actions: Vec<Action>) -> Self {
        Forced {
            actions: actions.into_iter(),
        }
    }
}

impl Policy for Forced {
    fn choose(&mut self, view: &StepView<'_>) -> Result<Action> {
        self.actions.next().ok_or(Error::InvalidAction(format!(
            "forced action list exhausted at word {}",
            view.loc.w
        )))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub location: Location,
    pub scores: [f64; NUM_ACTIONS],
    pub mask: [bool; NUM_ACTIONS],
    pub action: Action,
    pub segment: Vec<Tag>,
    pub mark_before: Tag,
    pub mark_after: Tag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub steps: Vec<TraceStep>,
    pub tags: Vec<Tag>,
    pub sampled: bool,
}

/// One step line of the trace export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceStepRecord {
    pub step: usize,
    pub location: Location,
    pub scores: Vec<f64>,
    pub mask: Vec<bool>,
    pub action_level: Level,
    pub action_kind: Kind,
    pub segment_len: usize,
    pub mark: Tag,
}

/// Final line of the trace export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceTagsRecord {
    pub tags: Vec<Tag>,
}

impl Trace {
    pub fn num_actions(&self) -> usize {
        self.steps.len()
    }

    pub fn actions(&self) -> Vec<Action> {
        self.steps.iter().map(|s| s.action).collect()
    }

    pub fn actions_per_word(&self) -> f64 {
        self.steps.len() as f64 / self.tags.len().max(1) as f64
    }

    /// Re-expands the recorded actions from the start of `doc`.
    pub fn replay(&self, doc: &Document) -> Result<Vec<Tag>> {
        replay_actions(&self.actions(), doc)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.steps.iter().enumerate() {
            let rec = TraceStepRecord {
                step: i,
                location: s.location,
                scores: s.scores.to_vec(),
                mask: s.mask.to_vec(),
                action_level: s.action.level,
                action_kind: s.action.kind,
                segment_len: s.segment.len(),
                mark: s.mark_after,
            };
            out.push_str(&serde_json::to_string(&rec).expect("trace step serializes"));
            out.push('\n');
        }
        let fin = TraceTagsRecord {
            tags: self.tags.clone(),
        };
        out.push_str(&serde_json::to_string(&fin).expect("tags serialize"));
        out.push('\n');
        out
    }
}

/// Expands an action list from `(0,0,0)` with mark 0; the list must end
/// exactly at the end of text.
pub fn replay_actions(actions: &[Action], doc: &Document) -> Result<Vec<Tag>> {
    let mut loc = Location::START;
    let mut mark = 0;
    let mut tags = Vec::with_capacity(doc.num_words());
    for &a in actions {
        let (seg, next) = expand_action(a, loc, doc, mark)?;
        tags.extend(seg);
        mark = next;
        loc = advance_location(loc, a, doc);
    }
    if !loc.is_terminal(doc) {
        return Err(Error::InvalidAction(format!(
            "action list stops at word {} of {}",
            loc.w,
            doc.num_words()
        )));
    }
    Ok(tags)
}

/// A finished episode together with the tape it was recorded on.
#[derive(Debug)]
pub struct Episode {
    pub trace: Trace,
    pub tape: Tape,
    /// `log π(a_t)` of each chosen action under the masked softmax.
    pub log_probs: Vec<NodeId>,
    /// Raw score node of each step.
    pub scores: Vec<NodeId>,
}

/// Encodes `doc` and runs the controller to the end of text.
pub fn run_policy<P: Policy + ?Sized>(
    model: &Model,
    doc: &Document,
    policy: &mut P,
) -> Result<Episode> {
    let params = &model.params;
    let mut tape = Tape::new();
    let enc = encode_document(&mut tape, params, &model.encoder, doc)?;
    let mut state = LstmState::zeros(&mut tape, model.controller.cell.hidden);
    let mut loc = Location::START;
    let mut mark: Tag = 0;
    let mut steps = Vec::new();
    let mut log_probs = Vec::new();
    let mut score_nodes = Vec::new();
    let mut tags = Vec::with_capacity(doc.num_words());

    while !loc.is_terminal(doc) {
        let read = read_memory_node(&mut tape, &enc, loc)?;
        let (next, scores) = controller_step(&mut tape, params, &model.controller, state, read)?;
        state = next;
        let mask = model
            .config
            .action_space
            .restrict(valid_action_mask(loc, mark));
        let score_vals: [f64; NUM_ACTIONS] = tape.value(scores).try_into().expect("nine scores");
        let action = policy.choose(&StepView {
            doc,
            loc,
            mark,
            scores: &score_vals,
            mask: &mask,
        })?;
        if !mask[action.index()] {
            return Err(Error::InvalidAction(format!("{action} at word {}", loc.w)));
        }
        log_probs.push(tape.log_softmax_pick(scores, &mask, action.index())?);
        score_nodes.push(scores);
        let (segment, next_mark) = expand_action(action, loc, doc, mark)?;
        tags.extend_from_slice(&segment);
        steps.push(TraceStep {
            location: loc,
            scores: score_vals,
            mask,
            action,
            segment,
            mark_before: mark,
            mark_after: next_mark,
        });
        mark = next_mark;
        loc = advance_location(loc, action, doc);
    }
    Ok(Episode {
        trace: Trace {
            steps,
            tags,
            sampled: policy.is_sampling(),
        },
        tape,
        log_probs,
        scores: score_nodes,
    })
}

/// Runs one episode in greedy or sampling mode and returns its trace.
pub fn run_episode<R: Rng>(
    model: &Model,
    doc: &Document,
    mode: SelectMode,
    rng: &mut R,
) -> Result<Trace> {
    let episode = match mode {
        SelectMode::Greedy => run_policy(model, doc, &mut Greedy)?,
        SelectMode::Sample => run_policy(model, doc, &mut Sampler { rng })?,
    };
    Ok(episode.trace)
}
