//! Adaptive machine translation with in-context learning: translation memory,
//! fuzzy-match retrieval, prompt construction, LLM access, terminology
//! extraction, MT bridging, orchestration and evaluation.

pub mod evaluation;
pub mod gateway;
pub mod mt_bridge;
pub mod pipeline;
pub mod prompting;
pub mod retrieval;
pub mod terminology;
pub mod tm;
