//! Documents, gold-tag rules, and corpus files.

mod generate;

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use generate::{generate_corpus, synthetic_vocabulary, GenConfig, IntRange};

/// A per-word label: `-1` for non-event, otherwise a positive event id.
pub type Tag = i64;

pub const NON_EVENT: Tag = -1;

/// On-disk shape of one corpus line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub tokens: Vec<usize>,
    pub sentence_starts: Vec<usize>,
    pub paragraph_starts: Vec<usize>,
    #[serde(default)]
    pub gold_tags: Option<Vec<Tag>>,
}

/// A validated document: token ids, sentence/paragraph boundaries, and
/// optional gold tags.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    tokens: Vec<usize>,
    sentence_starts: Vec<usize>,
    paragraph_starts: Vec<usize>,
    gold_tags: Option<Vec<Tag>>,
    word_sentence: Vec<usize>,
    sentence_paragraph: Vec<usize>,
}

impl Document {
    pub fn new(
        tokens: Vec<usize>,
        sentence_starts: Vec<usize>,
        paragraph_starts: Vec<usize>,
        gold_tags: Option<Vec<Tag>>,
    ) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::validation("tokens", "document has no tokens"));
        }
        check_starts("sentence_starts", &sentence_starts, tokens.len())?;
        check_starts("paragraph_starts", &paragraph_starts, sentence_starts.len())?;
        if let Some(tags) = &gold_tags {
            if tags.len() != tokens.len() {
                return Err(Error::validation(
                    "gold_tags",
                    format!("{} tags for {} tokens", tags.len(), tokens.len()),
                ));
            }
            check_representable(tags)?;
        }
        let word_sentence = expand_membership(&sentence_starts, tokens.len());
        let sentence_paragraph = expand_membership(&paragraph_starts, sentence_starts.len());
        Ok(Document {
            tokens,
            sentence_starts,
            paragraph_starts,
            gold_tags,
            word_sentence,
            sentence_paragraph,
        })
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn sentence_starts(&self) -> &[usize] {
        &self.sentence_starts
    }

    pub fn paragraph_starts(&self) -> &[usize] {
        &self.paragraph_starts
    }

    pub fn gold_tags(&self) -> Option<&[Tag]> {
        self.gold_tags.as_deref()
    }

    pub fn with_gold(&self, tags: Option<Vec<Tag>>) -> Result<Self> {
        Document::new(
            self.tokens.clone(),
            self.sentence_starts.clone(),
            self.paragraph_starts.clone(),
            tags,
        )
    }

    pub fn num_words(&self) -> usize {
        self.tokens.len()
    }

    pub fn num_sentences(&self) -> usize {
        self.sentence_starts.len()
    }

    pub fn num_paragraphs(&self) -> usize {
        self.paragraph_starts.len()
    }

    pub fn sentence_of_word(&self, w: usize) -> usize {
        self.word_sentence[w]
    }

    pub fn paragraph_of_sentence(&self, s: usize) -> usize {
        self.sentence_paragraph[s]
    }

    /// Word index range of sentence `s`.
    pub fn sentence_words(&self, s: usize) -> std::ops::Range<usize> {
        let end = self
            .sentence_starts
            .get(s + 1)
            .copied()
            .unwrap_or(self.tokens.len());
        self.sentence_starts[s]..end
    }

    /// Sentence index range of paragraph `p`.
    pub fn paragraph_sentences(&self, p: usize) -> std::ops::Range<usize> {
        let end = self
            .paragraph_starts
            .get(p + 1)
            .copied()
            .unwrap_or(self.sentence_starts.len());
        self.paragraph_starts[p]..end
    }

    /// Word index range of paragraph `p`.
    pub fn paragraph_words(&self, p: usize) -> std::ops::Range<usize> {
        let sents = self.paragraph_sentences(p);
        self.sentence_words(sents.start).start..self.sentence_words(sents.end - 1).end
    }

    pub fn to_record(&self) -> Record {
        Record {
            tokens: self.tokens.clone(),
            sentence_starts: self.sentence_starts.clone(),
            paragraph_starts: self.paragraph_starts.clone(),
            gold_tags: self.gold_tags.clone(),
        }
    }

    /// One JSON line, without the trailing newline.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&self.to_record()).expect("record serializes")
    }
}

impl TryFrom<Record> for Document {
    type Error = Error;

    fn try_from(r: Record) -> Result<Self> {
        Document::new(r.tokens, r.sentence_starts, r.paragraph_starts, r.gold_tags)
    }
}

/// Parses and validates one JSON record.
pub fn parse_record(line: &str) -> Result<Document> {
    let record: Record = serde_json::from_str(line)?;
    Document::try_from(record)
}

fn check_starts(field: &'static str, starts: &[usize], limit: usize) -> Result<()> {
    match starts.first() {
        None => return Err(Error::validation(field, "must not be empty")),
        Some(&s) if s != 0 => return Err(Error::validation(field, "must begin with 0")),
        _ => {}
    }
    for pair in starts.windows(2) {
        if pair[1] <= pair[0] {
            return Err(Error::validation(
                field,
                format!("not strictly increasing at {} -> {}", pair[0], pair[1]),
            ));
        }
    }
    if let Some(&last) = starts.last() {
        if last >= limit {
            return Err(Error::validation(
                field,
                format!("index {last} out of range for {limit} units"),
            ));
        }
    }
    Ok(())
}

fn expand_membership(starts: &[usize], len: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(len);
    for (i, &s) in starts.iter().enumerate() {
        let end = starts.get(i + 1).copied().unwrap_or(len);
        out.extend(std::iter::repeat_n(i, end - s));
    }
    out
}

/// Tags are representable when every entry is -1 or positive, ids first appear
/// as 1, 2, 3, … and no id recurs once a larger one has appeared.
pub fn check_representable(tags: &[Tag]) -> Result<()> {
    let mut latest = 0;
    for (i, &t) in tags.iter().enumerate() {
        if t == NON_EVENT {
            continue;
        }
        if t <= 0 {
            return Err(Error::validation(
                "gold_tags",
                format!("tag {t} at position {i} is neither -1 nor a positive id"),
            ));
        }
        if t == latest + 1 {
            latest = t;
        } else if t != latest {
            return Err(Error::validation(
                "gold_tags",
                format!("non-representable tags: id {t} at position {i} after id {latest}"),
            ));
        }
    }
    Ok(())
}

/// A maximal run of one positive event id, `end` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub id: Tag,
}

pub fn spans_from_tags(tags: &[Tag]) -> Vec<Span> {
    let mut spans: Vec<Span> = Vec::new();
    for (i, &t) in tags.iter().enumerate() {
        if t <= 0 {
            continue;
        }
        match spans.last_mut() {
            Some(s) if s.id == t && s.end + 1 == i => s.end = i,
            _ => spans.push(Span {
                start: i,
                end: i,
                id: t,
            }),
        }
    }
    spans
}

/// Renames positive ids to 1, 2, 3, … by first appearance.
pub fn normalize_event_ids(tags: &[Tag]) -> Vec<Tag> {
    let mut map: HashMap<Tag, Tag> = HashMap::new();
    tags.iter()
        .map(|&t| {
            if t <= 0 {
                t
            } else {
                let next = map.len() as Tag + 1;
                *map.entry(t).or_insert(next)
            }
        })
        .collect()
}

/// Writes `bytes` to a sibling temp file and renames it over `path`, so a
/// failure never leaves a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?
        .to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

pub fn read_corpus(path: &Path) -> Result<Vec<Document>> {
    let f = fs::File::open(path)?;
    let mut docs = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc = parse_record(&line).map_err(|e| match e {
            Error::Validation { field, reason } => Error::Validation {
                field,
                reason: format!("line {}: {reason}", n + 1),
            },
            Error::Json(j) => Error::Parse(format!("line {}: {j}", n + 1)),
            other => other,
        })?;
        docs.push(doc);
    }
    Ok(docs)
}

pub fn corpus_to_string(docs: &[Document]) -> String {
    let mut out = String::new();
    for d in docs {
        out.push_str(&d.to_json_line());
        out.push('\n');
    }
    out
}

pub fn write_corpus(path: &Path, docs: &[Document]) -> Result<()> {
    write_atomic(path, corpus_to_string(docs).as_bytes())
}

pub fn read_vocabulary(path: &Path) -> Result<Vec<String>> {
    Ok(fs::read_to_string(path)?
        .lines()
        .map(str::to_string)
        .collect())
}

pub fn write_vocabulary(path: &Path, words: &[String]) -> Result<()> {
    let mut out = words.join("\n");
    out.push('\n');
    write_atomic(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(tags: Vec<Tag>) -> Result<Document> {
        let n = tags.len();
        Document::new(vec![1; n], vec![0], vec![0], Some(tags))
    }

    #[test]
    fn minimal_document() {
        let d = parse_record(
            r#"{"tokens":[4],"sentence_starts":[0],"paragraph_starts":[0],"gold_tags":[-1]}"#,
        )
        .unwrap();
        assert_eq!(d.num_words(), 1);
        assert_eq!(d.paragraph_words(0), 0..1);
    }

    #[test]
    fn representable_tags_accepted() {
        doc(vec![1, 1, -1, 2, 2]).unwrap();
        doc(vec![1, -1, 1, 2]).unwrap();
    }

    #[test]
    fn first_id_two_rejected() {
        let err = doc(vec![2, 2, -1]).unwrap_err();
        assert!(err.to_string().contains("non-representable tags"), "{err}");
    }

    #[test]
    fn reappearing_id_rejected() {
        assert!(doc(vec![1, 2, 1]).is_err());
        assert!(doc(vec![0]).is_err());
    }

    #[test]
    fn boundary_errors_name_fields() {
        let e = Document::new(vec![1, 2, 3], vec![0, 2, 2], vec![0], None).unwrap_err();
        assert!(matches!(
            e,
            Error::Validation {
                field: "sentence_starts",
                ..
            }
        ));
        let e = Document::new(vec![1, 2, 3], vec![0, 3], vec![0], None).unwrap_err();
        assert!(matches!(
            e,
            Error::Validation {
                field: "sentence_starts",
                ..
            }
        ));
        let e = Document::new(vec![1, 2, 3], vec![0, 1], vec![0, 2], None).unwrap_err();
        assert!(matches!(
            e,
            Error::Validation {
                field: "paragraph_starts",
                ..
            }
        ));
        let e = Document::new(vec![1, 2, 3], vec![1], vec![0], None).unwrap_err();
        assert!(matches!(
            e,
            Error::Validation {
                field: "sentence_starts",
                ..
            }
        ));
        let e = Document::new(vec![1, 2], vec![0], vec![0], Some(vec![-1])).unwrap_err();
        assert!(matches!(
            e,
            Error::Validation {
                field: "gold_tags",
                ..
            }
        ));
    }

    #[test]
    fn unknown_field_rejected() {
        assert!(parse_record(
            r#"{"tokens":[4],"sentence_starts":[0],"paragraph_starts":[0],"extra":1}"#
        )
        .is_err());
    }

    #[test]
    fn null_gold_allowed() {
        let d = parse_record(
            r#"{"tokens":[4,5],"sentence_starts":[0],"paragraph_starts":[0],"gold_tags":null}"#,
        )
        .unwrap();
        assert!(d.gold_tags().is_none());
        assert!(d.to_json_line().contains("\"gold_tags\":null"));
    }

    #[test]
    fn spans_examples() {
        assert!(spans_from_tags(&[-1, -1]).is_empty());
        assert_eq!(
            spans_from_tags(&[-1, 1, 1, -1, 2]),
            vec![
                Span {
                    start: 1,
                    end: 2,
                    id: 1
                },
                Span {
                    start: 4,
                    end: 4,
                    id: 2
                }
            ]
        );
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_event_ids(&[5, 5, -1, 2]), vec![1, 1, -1, 2]);
        assert_eq!(normalize_event_ids(&[1, 1, -1, 2]), vec![1, 1, -1, 2]);
        assert_eq!(normalize_event_ids(&[-1, -1]), vec![-1, -1]);
    }

    #[test]
    fn membership_lookup() {
        let d = Document::new(vec![0; 6], vec![0, 2, 5], vec![0, 2], None).unwrap();
        assert_eq!(d.sentence_of_word(4), 1);
        assert_eq!(d.paragraph_of_sentence(2), 1);
        assert_eq!(d.paragraph_words(0), 0..5);
        assert_eq!(d.paragraph_words(1), 5..6);
    }
}
