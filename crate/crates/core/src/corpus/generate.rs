//! Synthetic corpus whose gold tags are built from whole-paragraph,
//! whole-sentence, and phrase-level event regions.
//!
//! Non-event words draw from the filler pool. Paragraph and sentence events
//! draw from the whole trigger pool, which may share ids with the filler pool;
//! phrase events draw only from trigger ids outside the filler pool. A shared
//! id is therefore an event word exactly when its sentence belongs to a
//! sentence- or paragraph-level event, which is only visible from context.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Document, Tag, NON_EVENT};
use crate::error::{Error, Result};

/// Inclusive integer range, written `min-max` (or a single number).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntRange {
    pub min: usize,
    pub max: usize,
}

impl IntRange {
    pub const fn new(min: usize, max: usize) -> Self {
        IntRange { min, max }
    }

    pub fn contains(&self, v: usize) -> bool {
        (self.min..=self.max).contains(&v)
    }

    pub fn len(&self) -> usize {
        self.max + 1 - self.min
    }

    pub fn is_empty(&self) -> bool {
        self.max < self.min
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        rng.gen_range(self.min..=self.max)
    }
}

impl fmt::Display for IntRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.min, self.max)
    }
}

impl FromStr for IntRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad range `{s}`")))
        };
        match s.split_once('-') {
            Some((a, b)) => Ok(IntRange::new(parse(a)?, parse(b)?)),
            None => {
                let v = parse(s)?;
                Ok(IntRange::new(v, v))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub docs: usize,
    pub vocab_size: usize,
    pub paragraphs: IntRange,
    pub sentences_per_paragraph: IntRange,
    pub words_per_sentence: IntRange,
    /// Documents whose total length falls outside this range are redrawn.
    pub words_per_doc: IntRange,
    pub events: IntRange,
    /// Token ids (inclusive) used inside event spans.
    pub trigger_pool: IntRange,
    /// Token ids (inclusive) used outside event spans. May overlap the
    /// trigger pool, but not cover it.
    pub filler_pool: IntRange,
    /// Relative frequency of whole-paragraph, sentence-run, and phrase events.
    pub shape_weights: [f64; 3],
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            docs: 10,
            vocab_size: 250,
            paragraphs: IntRange::new(2, 6),
            sentences_per_paragraph: IntRange::new(2, 5),
            words_per_sentence: IntRange::new(5, 16),
            words_per_doc: IntRange::new(100, 400),
            events: IntRange::new(1, 8),
            trigger_pool: IntRange::new(100, 249),
            filler_pool: IntRange::new(0, 149),
            shape_weights: [0.2, 0.5, 0.3],
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("paragraphs", self.paragraphs),
            ("sentences_per_paragraph", self.sentences_per_paragraph),
            ("words_per_sentence", self.words_per_sentence),
            ("words_per_doc", self.words_per_doc),
            ("events", self.events),
            ("trigger_pool", self.trigger_pool),
            ("filler_pool", self.filler_pool),
        ];
        for (name, r) in ranges {
            if r.is_empty() {
                return Err(Error::Config(format!("{name} range {r} is empty")));
            }
        }
        for (name, r) in [
            ("paragraphs", self.paragraphs),
            ("sentences_per_paragraph", self.sentences_per_paragraph),
            ("words_per_sentence", self.words_per_sentence),
        ] {
            if r.min == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.events.max > 74 {
            return Err(Error::Config(format!(
                "events range {} exceeds the maximum of 74",
                self.events
            )));
        }
        if self.vocab_size <= self.trigger_pool.max || self.vocab_size <= self.filler_pool.max {
            return Err(Error::Config(format!(
                "vocabulary of {} cannot hold trigger pool {} and filler pool {}",
                self.vocab_size, self.trigger_pool, self.filler_pool
            )));
        }
        if self.phrase_ids().is_empty() {
            return Err(Error::Config(format!(
                "filler pool {} covers trigger pool {}",
                self.filler_pool, self.trigger_pool
            )));
        }
        if self
            .shape_weights
            .iter()
            .any(|w| *w < 0.0 || !w.is_finite())
            || self.shape_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::Config(
                "shape weights must be non-negative with a positive sum".into(),
            ));
        }
        let max_words =
            self.paragraphs.max * self.sentences_per_paragraph.max * self.words_per_sentence.max;
        let min_words =
            self.paragraphs.min * self.sentences_per_paragraph.min * self.words_per_sentence.min;
        if max_words < self.words_per_doc.min || min_words > self.words_per_doc.max {
            return Err(Error::Config(format!(
                "structure ranges cannot produce {} words per document",
                self.words_per_doc
            )));
        }
        Ok(())
    }
}

impl GenConfig {
    /// Trigger ids that never occur outside events.
    fn phrase_ids(&self) -> Vec<usize> {
        (self.trigger_pool.min..=self.trigger_pool.max)
            .filter(|&i| !self.filler_pool.contains(i))
            .collect()
    }
}

/// Generates `config.docs` documents. Document `i` is drawn from its own
/// ChaCha stream, so output does not depend on generation order.
pub fn generate_corpus(config: &GenConfig) -> Result<Vec<Document>> {
    config.validate()?;
    (0..config.docs)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(i as u64);
            generate_document(config, &mut rng)
        })
        .collect()
}

/// Surface forms for token ids: `f*` filler-only, `t*` trigger-only, `x*`
/// shared, `u*` unused.
pub fn synthetic_vocabulary(config: &GenConfig) -> Vec<String> {
    (0..config.vocab_size)
        .map(|i| {
            let t = config.trigger_pool.contains(i);
            let f = config.filler_pool.contains(i);
            match (t, f) {
                (true, true) => format!("x{i}"),
                (true, false) => format!("t{i}"),
                (false, true) => format!("f{i}"),
                (false, false) => format!("u{i}"),
            }
        })
        .collect()
}

struct Layout {
    /// words per sentence, grouped by paragraph
    paragraphs: Vec<Vec<usize>>,
}

impl Layout {
    fn draw<R: Rng>(config: &GenConfig, rng: &mut R) -> Result<Self> {
        for _ in 0..10_000 {
            let paragraphs: Vec<Vec<usize>> = (0..config.paragraphs.sample(rng))
                .map(|_| {
                    (0..config.sentences_per_paragraph.sample(rng))
                        .map(|_| config.words_per_sentence.sample(rng))
                        .collect()
                })
                .collect();
            let total: usize = paragraphs.iter().flatten().sum();
            if config.words_per_doc.contains(total) {
                return Ok(Layout { paragraphs });
            }
        }
        Err(Error::Config(format!(
            "could not draw a document with {} words",
            config.words_per_doc
        )))
    }
}

fn generate_document<R: Rng>(config: &GenConfig, rng: &mut R) -> Result<Document> {
    let shape_total: f64 = config.shape_weights.iter().sum();
    let phrase_ids = config.phrase_ids();
    for _ in 0..1000 {
        let layout = Layout::draw(config, rng)?;
        let mut sentence_starts = Vec::new();
        let mut paragraph_starts = Vec::new();
        let mut w = 0;
        for p in &layout.paragraphs {
            paragraph_starts.push(sentence_starts.len());
            for &len in p {
                sentence_starts.push(w);
                w += len;
            }
        }
        let n_words = w;
        let skeleton = Document::new(
            vec![0; n_words],
            sentence_starts.clone(),
            paragraph_starts.clone(),
            None,
        )?;

        let want = config.events.sample(rng);
        let mut occupied = vec![false; n_words];
        let mut regions: Vec<(usize, usize, bool)> = Vec::with_capacity(want);
        let mut tries = 0;
        while regions.len() < want && tries < 100 * want.max(1) {
            tries += 1;
            let pick = rng.gen::<f64>() * shape_total;
            let phrase = pick >= config.shape_weights[0] + config.shape_weights[1];
            let region = if pick < config.shape_weights[0] {
                let p = rng.gen_range(0..skeleton.num_paragraphs());
                skeleton.paragraph_words(p)
            } else if !phrase {
                let p = rng.gen_range(0..skeleton.num_paragraphs());
                let sents = skeleton.paragraph_sentences(p);
                let first = rng.gen_range(sents.clone());
                let count = rng.gen_range(1..=(sents.end - first).min(3));
                skeleton.sentence_words(first).start..skeleton.sentence_words(first + count - 1).end
            } else {
                let s = rng.gen_range(0..skeleton.num_sentences());
                let words = skeleton.sentence_words(s);
                let len = rng.gen_range(1..=words.len().min(5));
                let start = rng.gen_range(words.start..=words.end - len);
                start..start + len
            };
            let lo = region.start.saturating_sub(1);
            let hi = (region.end + 1).min(n_words);
            if occupied[lo..hi].iter().any(|&o| o) {
                continue;
            }
            occupied[region.clone()].iter_mut().for_each(|o| *o = true);
            regions.push((region.start, region.end, phrase));
        }
        if regions.len() < want {
            continue;
        }
        regions.sort_unstable();

        let mut tags = vec![NON_EVENT; n_words];
        let mut in_phrase = vec![false; n_words];
        for (k, &(start, end, phrase)) in regions.iter().enumerate() {
            tags[start..end].iter_mut().for_each(|t| *t = k as Tag + 1);
            in_phrase[start..end].iter_mut().for_each(|f| *f = phrase);
        }
        let tokens = tags
            .iter()
            .zip(&in_phrase)
            .map(|(&t, &phrase)| {
                if t == NON_EVENT {
                    config.filler_pool.sample(rng)
                } else if phrase {
                    phrase_ids[rng.gen_range(0..phrase_ids.len())]
                } else {
                    config.trigger_pool.sample(rng)
                }
            })
            .collect();
        return Document::new(tokens, sentence_starts, paragraph_starts, Some(tags));
    }
    Err(Error::Config(format!(
        "could not place {} events in documents of {} words",
        config.events, config.words_per_doc
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{corpus_to_string, parse_record, spans_from_tags};

    #[test]
    fn zero_events_means_all_non_event() {
        let cfg = GenConfig {
            events: IntRange::new(0, 0),
            docs: 5,
            ..GenConfig::default()
        };
        for d in generate_corpus(&cfg).unwrap() {
            assert!(d.gold_tags().unwrap().iter().all(|&t| t == NON_EVENT));
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = GenConfig {
            docs: 8,
            seed: 11,
            ..GenConfig::default()
        };
        let a = corpus_to_string(&generate_corpus(&cfg).unwrap());
        let b = corpus_to_string(&generate_corpus(&cfg).unwrap());
        assert_eq!(a, b);
        let c = corpus_to_string(
            &generate_corpus(&GenConfig {
                seed: 12,
                ..cfg.clone()
            })
            .unwrap(),
        );
        assert_ne!(a, c);
    }

    #[test]
    fn default_desk_config_is_valid() {
        let cfg = GenConfig::default();
        let docs = generate_corpus(&cfg).unwrap();
        assert_eq!(docs.len(), 10);
        for d in &docs {
            assert!((100..=400).contains(&d.num_words()));
            let again = parse_record(&d.to_json_line()).unwrap();
            assert_eq!(&again, d);
            let events = spans_from_tags(d.gold_tags().unwrap()).len();
            assert!((1..=8).contains(&events), "{events} events");
        }
    }

    #[test]
    fn event_tokens_come_from_pools() {
        let cfg = GenConfig {
            docs: 4,
            seed: 3,
            ..GenConfig::default()
        };
        for d in generate_corpus(&cfg).unwrap() {
            for (&tok, &tag) in d.tokens().iter().zip(d.gold_tags().unwrap()) {
                if tag == NON_EVENT {
                    assert!(cfg.filler_pool.contains(tok));
                } else {
                    assert!(cfg.trigger_pool.contains(tok));
                }
            }
        }
    }

    #[test]
    fn phrases_use_trigger_only_ids() {
        let cfg = GenConfig {
            docs: 6,
            seed: 5,
            shape_weights: [0.0, 0.0, 1.0],
            ..GenConfig::default()
        };
        for d in generate_corpus(&cfg).unwrap() {
            for (&tok, &tag) in d.tokens().iter().zip(d.gold_tags().unwrap()) {
                if tag != NON_EVENT {
                    assert!(!cfg.filler_pool.contains(tok));
                }
            }
        }
    }

    #[test]
    fn filler_covering_trigger_rejected() {
        let cfg = GenConfig {
            filler_pool: IntRange::new(0, 249),
            ..GenConfig::default()
        };
        assert!(matches!(generate_corpus(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn small_vocabulary_rejected() {
        let cfg = GenConfig {
            vocab_size: 100,
            ..GenConfig::default()
        };
        assert!(matches!(generate_corpus(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn range_parsing() {
        assert_eq!("3-7".parse::<IntRange>().unwrap(), IntRange::new(3, 7));
        assert_eq!("4".parse::<IntRange>().unwrap(), IntRange::new(4, 4));
        assert!("x".parse::<IntRange>().is_err());
    }
}
