use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{ActionSpace, ControllerParams};
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::numerics::ParamSet;

/// Dimensions and action space of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub word_hidden: usize,
    pub sentence_hidden: usize,
    pub controller_hidden: usize,
    pub head_hidden: usize,
    pub action_space: ActionSpace,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 250,
            embed_dim: 32,
            word_hidden: 16,
            sentence_hidden: 16,
            controller_hidden: 32,
            head_hidden: 32,
            action_space: ActionSpace::Full,
        }
    }
}

impl ModelConfig {
    pub fn read_dim(&self) -> usize {
        2 * self.word_hidden + 4 * self.sentence_hidden
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("word_hidden", self.word_hidden),
            ("sentence_hidden", self.sentence_hidden),
            ("controller_hidden", self.controller_hidden),
            ("head_hidden", self.head_hidden),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        Ok(())
    }
}

/// Encoder and controller parameters in one named set.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub encoder: EncoderParams,
    pub controller: ControllerParams,
}

impl Model {
    /// Seeded initialization.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let encoder = EncoderParams::register(
            &mut params,
            config.vocab_size,
            config.embed_dim,
            config.word_hidden,
            config.sentence_hidden,
            &mut rng,
        )?;
        let controller = ControllerParams::register(
            &mut params,
            config.read_dim(),
            config.controller_hidden,
            config.head_hidden,
            &mut rng,
        )?;
        Ok(Model {
            config,
            params,
            encoder,
            controller,
        })
    }

    /// Rebuilds the handles of a model from a loaded parameter set, checking
    /// every parameter against the shapes `config` implies.
    pub fn from_params(config: ModelConfig, params: ParamSet) -> Result<Self> {
        let reference = Model::new(config, 0)?;
        if params.len() != reference.params.len() {
            return Err(Error::HeaderMismatch {
                field: "parameters".into(),
                reason: format!(
                    "expected {} parameters, found {}",
                    reference.params.len(),
                    params.len()
                ),
            });
        }
        for id in reference.params.ids() {
            let name = reference.params.name(id);
            let found = params.id(name).ok_or_else(|| Error::HeaderMismatch {
                field: name.to_string(),
                reason: "parameter missing".into(),
            })?;
            let (want, got) = (
                reference.params.value(id).shape(),
                params.value(found).shape(),
            );
            if want != got {
                return Err(Error::HeaderMismatch {
                    field: name.to_string(),
                    reason: format!("shape {got:?}, expected {want:?}"),
                });
            }
        }
        Ok(Model {
            config,
            encoder: EncoderParams::lookup(&params)?,
            controller: ControllerParams::lookup(&params)?,
            params,
        })
    }

    pub fn with_action_space(mut self, space: ActionSpace) -> Self {
        self.config.action_space = space;
        self
    }
}
