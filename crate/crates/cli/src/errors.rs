//! Error-to-exit-code policy: 1 usage/config, 2 data, 3 LLM transport.

use std::fmt;

use subfact::baselines::BaselineError;
use subfact::corpus::CorpusError;
use subfact::encoder::EncodeError;
use subfact::eval::EvalError;
use subfact::llm::LlmError;
use subfact::pipeline::PipelineError;
use subfact::reformulate::ReformulateError;
use subfact::training::TrainingError;

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation or configuration; nothing was read or written.
    Usage(String),
    /// Input files or their contents are unusable, or an artifact failed
    /// to write.
    Data(String),
    /// The LLM endpoint failed or answered garbage.
    Llm(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Llm(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) | CliError::Data(msg) | CliError::Llm(msg) => f.write_str(msg),
        }
    }
}

/// Render an error with its source chain, skipping sources whose text the
/// outer message already embeds (thiserror transparent wrappers repeat it).
pub fn chain_text(err: &dyn std::error::Error) -> String {
    let mut out = err.to_string();
    let mut cur = err.source();
    while let Some(source) = cur {
        let text = source.to_string();
        if !out.contains(&text) {
            out.push_str(": ");
            out.push_str(&text);
        }
        cur = source.source();
    }
    out
}

impl From<LlmError> for CliError {
    fn from(err: LlmError) -> Self {
        match &err {
            LlmError::Transport { .. } | LlmError::BadResponse { .. } => {
                CliError::Llm(chain_text(&err))
            }
            LlmError::Config { .. } => CliError::Usage(chain_text(&err)),
            LlmError::MissingFixture { .. } | LlmError::Io(_) => CliError::Data(chain_text(&err)),
        }
    }
}

impl From<ReformulateError> for CliError {
    fn from(err: ReformulateError) -> Self {
        match err {
            ReformulateError::Llm(inner) => inner.into(),
            other => CliError::Data(chain_text(&other)),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(err: PipelineError) -> Self {
        match err {
            PipelineError::Reformulate(inner) => inner.into(),
            other => CliError::Data(chain_text(&other)),
        }
    }
}

macro_rules! data_error {
    ($($ty:ty),* $(,)?) => {
        $(impl From<$ty> for CliError {
            fn from(err: $ty) -> Self {
                CliError::Data(chain_text(&err))
            }
        })*
    };
}

data_error!(
    CorpusError,
    EncodeError,
    BaselineError,
    EvalError,
    TrainingError,
    std::io::Error,
);
