//! Preference-dataset construction: revision by a stronger model, on- and
//! off-policy judging, and stronger-model preferred pairs, against either a
//! remote chat endpoint or in-process mocks.

mod build;
mod client;
mod generate;
mod http;
pub mod mock;
mod parse;
mod prompts;
mod synthetic;

pub use build::{
    build_clair, build_judge_off_policy, build_judge_on_policy, build_stronger_preferred,
    sha256_hex, BuildOutput, DropRecord, PipelineConfig, PoolRecord,
};
pub use client::{
    complete_with_retry, dispatch, ChatClient, ChatMessage, ChatRequest, RetryPolicy,
    TransportError,
};
pub use generate::{ChatGenerator, Generator, PolicyGenerator};
pub use http::{HttpChatClient, API_KEY_ENV};
pub use mock::{MockWorld, WorldConfig};
pub use parse::{
    length_filter, parse_judgement, parse_revision, JudgeResult, LengthFilter, Reject,
    RevisionResult, CORRECTED_ID, REASONING_ID,
};
pub use prompts::{
    parse_judge_prompt, parse_reviser_prompt, render_judge_prompt, render_reviser_prompt,
    JUDGE_TEMPLATE, REVISER_TEMPLATE,
};
pub use synthetic::{build_synthetic_suite, SyntheticSuite, WorldGenerators};
