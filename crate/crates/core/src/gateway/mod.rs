//! Provider-agnostic completion interface, output parsing and mock providers.

mod http;
mod mock;
mod parse;
mod provider;
mod schema;

pub use http::ChatTransport;
pub use mock::{EchoLabels, FaultKind, Faulty, Scripted, ScriptedFixture};
pub use parse::{extract_document, parse_output, CriterionResult, LlmResult, ParseError};
pub use provider::{
    AttemptLog, AttemptOutcome, CompletionRequest, FinishReason, GatewayError, Provider,
    ProviderConfig, ProviderKind, RawCompletion, RetryPolicy, RetryingProvider, Sleeper,
    Transport, Usage,
};
pub use schema::{output_schema_for, OutputCriterion, OutputDocument};
