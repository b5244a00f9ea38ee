//! Intent recognition and entity extraction.
//!
//! Intents come from a multinomial logistic regression over hashed 1- and
//! 2-grams; entities come from greedy longest-match against a gazetteer.

mod entities;
mod intent;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::CodecError;

pub use entities::{extract_entities, EntityLexicon, LexiconEntry, OrdinalEntry, INDEX_REFERENCE};
pub use intent::{
    classify, softmax_cross_entropy, train_intent, IntentModel, IntentTrainConfig, TrainingMeta,
};

#[derive(Debug, Error)]
pub enum NluError {
    #[error("utterance is empty")]
    EmptyUtterance,
    #[error("training data has {0} distinct intent(s); at least 2 are required")]
    DegenerateData(usize),
    #[error("no training examples")]
    EmptyTrainingSet,
    #[error("loss became non-finite in epoch {0}")]
    NonFiniteLoss(usize),
    #[error("loss kept increasing in epoch {epoch} even at learning rate {learning_rate}")]
    NonMonotoneLoss { epoch: usize, learning_rate: f64 },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("invalid lexicon: {0}")]
    Lexicon(String),
}

/// An entity occurrence: canonical value plus its byte span in the utterance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedEntity {
    pub entity: String,
    pub value: String,
    pub start: usize,
    pub end: usize,
}

/// Output of the NLU stage for one utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentFrame {
    pub intent: String,
    pub confidence: f64,
    pub entities: Vec<ExtractedEntity>,
    pub text: String,
}

impl IntentFrame {
    pub fn entity(&self, name: &str) -> Option<&ExtractedEntity> {
        self.entities.iter().find(|e| e.entity == name)
    }
}

/// Classification plus entity extraction.
pub fn understand(
    model: &IntentModel,
    lexicon: &EntityLexicon,
    text: &str,
) -> Result<IntentFrame, NluError> {
    let mut frame = classify(model, text)?;
    frame.entities = extract_entities(lexicon, text);
    Ok(frame)
}
