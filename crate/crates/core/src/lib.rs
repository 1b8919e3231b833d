//! Multi-scale event identification.
//!
//! A document is encoded into word, sentence, and paragraph memories
//! ([`encoder`]). A recurrent controller then walks the text, reading one row
//! from each memory and choosing one of nine actions that tag a word, the rest
//! of a sentence, or the rest of a paragraph as non-event, current event, or
//! new event ([`controller`]). Training combines teacher forcing over the set
//! of correct actions with policy-gradient fine-tuning that rewards larger
//! actions ([`training`]).

pub mod checkpoint;
pub mod config;
pub mod controller;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
pub use model::{Model, ModelConfig};
