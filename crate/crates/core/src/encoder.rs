//! Word, sentence, and paragraph memories for a document.
//!
//! Words are embedded and run through a bi-LSTM one sentence at a time.
//! Each sentence's word rows are max-pooled into a sentence vector, and a
//! second bi-LSTM runs across all sentence vectors of the document. Paragraph
//! rows are the element-wise max of their sentences' rows.

use rand::Rng;

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::numerics::{
    bilstm_sequence, elementwise_max_pool, BiLstmParams, Init, NodeId, ParamId, ParamSet, Tape,
    Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderParams {
    pub embedding: ParamId,
    pub word: BiLstmParams,
    pub sentence: BiLstmParams,
}

impl EncoderParams {
    pub fn register<R: Rng>(
        params: &mut ParamSet,
        vocab: usize,
        embed_dim: usize,
        word_hidden: usize,
        sentence_hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let embedding = params.add(
            "encoder.embed",
            vec![vocab, embed_dim],
            Init::Uniform { fan_in: 1 },
            rng,
        )?;
        let word = BiLstmParams::register(params, "encoder.word", embed_dim, word_hidden, rng)?;
        let sentence = BiLstmParams::register(
            params,
            "encoder.sentence",
            2 * word_hidden,
            sentence_hidden,
            rng,
        )?;
        Ok(EncoderParams {
            embedding,
            word,
            sentence,
        })
    }

    pub fn lookup(params: &ParamSet) -> Result<Self> {
        let embedding = params
            .id("encoder.embed")
            .ok_or_else(|| Error::Config("missing parameter `encoder.embed`".into()))?;
        Ok(EncoderParams {
            embedding,
            word: BiLstmParams::lookup(params, "encoder.word")?,
            sentence: BiLstmParams::lookup(params, "encoder.sentence")?,
        })
    }

    pub fn word_dim(&self) -> usize {
        2 * self.word.hidden()
    }

    pub fn sentence_dim(&self) -> usize {
        2 * self.sentence.hidden()
    }

    /// Paragraph rows are pooled sentence rows, so they share its width.
    pub fn paragraph_dim(&self) -> usize {
        self.sentence_dim()
    }
}

/// Encoder outputs as nodes of the episode's tape.
#[derive(Debug, Clone)]
pub struct EncodedDocument {
    pub words: Vec<NodeId>,
    pub sentence_vectors: Vec<NodeId>,
    pub sentences: Vec<NodeId>,
    pub paragraphs: Vec<NodeId>,
}

/// The memory triple `[M_w, M_s, M_p]` as plain matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct HierMemory {
    pub words: Tensor,
    pub sentences: Tensor,
    pub paragraphs: Tensor,
}

impl EncodedDocument {
    pub fn memory(&self, tape: &Tape) -> HierMemory {
        let mat = |rows: &[NodeId]| {
            let rows: Vec<Vec<f64>> = rows.iter().map(|&r| tape.value(r).to_vec()).collect();
            Tensor::from_rows(&rows).expect("memory rows share a width")
        };
        HierMemory {
            words: mat(&self.words),
            sentences: mat(&self.sentences),
            paragraphs: mat(&self.paragraphs),
        }
    }

    pub fn sentence_vector_matrix(&self, tape: &Tape) -> Tensor {
        let rows: Vec<Vec<f64>> = self
            .sentence_vectors
            .iter()
            .map(|&r| tape.value(r).to_vec())
            .collect();
        Tensor::from_rows(&rows).expect("sentence vectors share a width")
    }
}

/// `M_w`: one row per word, each sentence encoded independently.
pub fn encode_words(
    tape: &mut Tape,
    params: &ParamSet,
    enc: &EncoderParams,
    doc: &Document,
) -> Result<Vec<NodeId>> {
    let vocab = params.value(enc.embedding).rows();
    if let Some(&bad) = doc.tokens().iter().find(|&&t| t >= vocab) {
        return Err(Error::Vocabulary { token: bad, vocab });
    }
    let mut rows = Vec::with_capacity(doc.num_words());
    for s in 0..doc.num_sentences() {
        let embedded = doc.tokens()[doc.sentence_words(s)]
            .iter()
            .map(|&t| tape.embed(params, enc.embedding, t))
            .collect::<Result<Vec<_>>>()?;
        rows.extend(bilstm_sequence(tape, params, &enc.word, &embedded)?);
    }
    Ok(rows)
}

/// Sentence vectors (max-pooled word rows) and `M_s`.
pub fn encode_sentences(
    tape: &mut Tape,
    params: &ParamSet,
    enc: &EncoderParams,
    doc: &Document,
    words: &[NodeId],
) -> Result<(Vec<NodeId>, Vec<NodeId>)> {
    if words.len() != doc.num_words() {
        return Err(Error::shape(format!(
            "{} word rows for {} words",
            words.len(),
            doc.num_words()
        )));
    }
    let vectors = (0..doc.num_sentences())
        .map(|s| Ok(elementwise_max_pool(tape, &words[doc.sentence_words(s)])?.0))
        .collect::<Result<Vec<_>>>()?;
    let rows = bilstm_sequence(tape, params, &enc.sentence, &vectors)?;
    Ok((vectors, rows))
}

/// `M_p`: element-wise max over each paragraph's sentence rows.
pub fn encode_paragraphs(
    tape: &mut Tape,
    doc: &Document,
    sentences: &[NodeId],
) -> Result<Vec<NodeId>> {
    if sentences.len() != doc.num_sentences() {
        return Err(Error::shape(format!(
            "{} sentence rows for {} sentences",
            sentences.len(),
            doc.num_sentences()
        )));
    }
    (0..doc.num_paragraphs())
        .map(|p| Ok(elementwise_max_pool(tape, &sentences[doc.paragraph_sentences(p)])?.0))
        .collect()
}

pub fn encode_document(
    tape: &mut Tape,
    params: &ParamSet,
    enc: &EncoderParams,
    doc: &Document,
) -> Result<EncodedDocument> {
    let words = encode_words(tape, params, enc, doc)?;
    let (sentence_vectors, sentences) = encode_sentences(tape, params, enc, doc, &words)?;
    let paragraphs = encode_paragraphs(tape, doc, &sentences)?;
    Ok(EncodedDocument {
        words,
        sentence_vectors,
        sentences,
        paragraphs,
    })
}
