//! Token accuracy and exact-boundary span precision / recall / F1.

use std::collections::HashSet;
use std::fmt;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use crate::controller::{run_policy, Greedy, Policy};
use crate::corpus::{normalize_event_ids, spans_from_tags, Document, Span, Tag};
use crate::error::{Error, Result};
use crate::model::Model;

fn check_lengths(pred: &[Tag], gold: &[Tag]) -> Result<()> {
    if pred.len() != gold.len() {
        return Err(Error::LengthMismatch {
            pred: pred.len(),
            gold: gold.len(),
        });
    }
    Ok(())
}

/// Fraction of positions whose id-normalized tags agree.
pub fn token_accuracy(pred: &[Tag], gold: &[Tag]) -> Result<f64> {
    check_lengths(pred, gold)?;
    if gold.is_empty() {
        return Ok(1.0);
    }
    let (p, g) = (normalize_event_ids(pred), normalize_event_ids(gold));
    let same = p.iter().zip(&g).filter(|(a, b)| a == b).count();
    Ok(same as f64 / gold.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanCounts {
    pub correct: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl AddAssign for SpanCounts {
    fn add_assign(&mut self, o: Self) {
        self.correct += o.correct;
        self.predicted += o.predicted;
        self.gold += o.gold;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl SpanCounts {
    pub fn prf(&self) -> Prf {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(self.correct, self.predicted);
        let recall = ratio(self.correct, self.gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf {
            precision,
            recall,
            f1,
        }
    }
}

/// Spans of `pred` that match a gold span exactly in start, end, and
/// normalized id.
pub fn span_counts(pred: &[Tag], gold: &[Tag]) -> Result<SpanCounts> {
    check_lengths(pred, gold)?;
    let p = spans_from_tags(&normalize_event_ids(pred));
    let g: HashSet<Span> = spans_from_tags(&normalize_event_ids(gold))
        .into_iter()
        .collect();
    Ok(SpanCounts {
        correct: p.iter().filter(|s| g.contains(s)).count(),
        predicted: p.len(),
        gold: g.len(),
    })
}

pub fn span_prf(pred: &[Tag], gold: &[Tag]) -> Result<Prf> {
    Ok(span_counts(pred, gold)?.prf())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentRow {
    pub index: usize,
    pub words: usize,
    pub actions: usize,
    pub token_accuracy: f64,
    pub spans: SpanCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub token_accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub actions_per_word: f64,
    pub documents: Vec<DocumentRow>,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "documents         {}", self.documents.len())?;
        writeln!(f, "token accuracy    {:.4}", self.token_accuracy)?;
        writeln!(f, "span precision    {:.4}", self.precision)?;
        writeln!(f, "span recall       {:.4}", self.recall)?;
        writeln!(f, "span f1           {:.4}", self.f1)?;
        write!(f, "actions per word  {:.4}", self.actions_per_word)
    }
}

/// Greedy episodes over a labelled corpus with pooled metrics.
pub fn evaluate(corpus: &[Document], model: &Model) -> Result<EvalReport> {
    evaluate_with(corpus, model, || Greedy)
}

/// Evaluation under an arbitrary policy, built fresh per document.
pub fn evaluate_with<P, F>(corpus: &[Document], model: &Model, mut make: F) -> Result<EvalReport>
where
    P: Policy,
    F: FnMut() -> P,
{
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut rows = Vec::with_capacity(corpus.len());
    let mut spans = SpanCounts::default();
    let (mut correct, mut words, mut apw) = (0usize, 0usize, 0.0);
    for (index, doc) in corpus.iter().enumerate() {
        let gold = doc
            .gold_tags()
            .ok_or_else(|| Error::MissingGold(format!("document {index} is unlabeled")))?;
        let trace = run_policy(model, doc, &mut make())?.trace;
        let p = normalize_event_ids(&trace.tags);
        let g = normalize_event_ids(gold);
        let same = p.iter().zip(&g).filter(|(a, b)| a == b).count();
        let counts = span_counts(&trace.tags, gold)?;
        correct += same;
        words += doc.num_words();
        apw += trace.actions_per_word();
        spans += counts;
        rows.push(DocumentRow {
            index,
            words: doc.num_words(),
            actions: trace.num_actions(),
            token_accuracy: same as f64 / doc.num_words() as f64,
            spans: counts,
        });
    }
    let prf = spans.prf();
    Ok(EvalReport {
        token_accuracy: correct as f64 / words as f64,
        precision: prf.precision,
        recall: prf.recall,
        f1: prf.f1,
        actions_per_word: apw / corpus.len() as f64,
        documents: rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_sequences() {
        let t = [-1, 1, 1, -1, 2];
        let p = span_prf(&t, &t).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (1.0, 1.0, 1.0));
        assert_eq!(token_accuracy(&t, &t).unwrap(), 1.0);
    }

    #[test]
    fn empty_prediction() {
        let p = span_prf(&[-1, -1, -1], &[1, 1, -1]).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn relabeling_is_ignored() {
        let gold = [1, 1, -1, 2];
        let pred = [7, 7, -1, 3];
        assert_eq!(span_prf(&pred, &gold).unwrap().f1, 1.0);
        assert_eq!(token_accuracy(&pred, &gold).unwrap(), 1.0);
    }

    #[test]
    fn partial_overlap_gets_no_credit() {
        let gold = [1, 1, 1, -1];
        let pred = [1, 1, -1, -1];
        let p = span_prf(&pred, &gold).unwrap();
        assert_eq!(p.f1, 0.0);
        assert_eq!(token_accuracy(&pred, &gold).unwrap(), 0.75);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(
            span_prf(&[-1], &[-1, -1]),
            Err(Error::LengthMismatch { .. })
        ));
    }
}
