use thiserror::Error;

use crate::corpus::CorpusError;
use crate::embed::EmbedError;
use crate::encoder::EncoderError;
use crate::gcn::GcnError;
use crate::graph::GraphError;
use crate::infer::EvalError;
use crate::optim::OptimError;
use crate::training::Model;
use crate::typing::TypingError;

/// Any failure in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Gcn(#[from] GcnError),
    #[error(transparent)]
    Typing(#[from] TypingError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    /// Carries the parameters from the end of the previous round.
    #[error("training diverged at round {round}: {reason}")]
    Diverged {
        round: usize,
        reason: String,
        last_good: Box<Model>,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
