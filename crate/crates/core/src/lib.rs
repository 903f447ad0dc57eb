//! Rule-library engine for tool-using agents.
//!
//! Rules are distilled from agent failure traces, translated into a closed
//! symbolic vocabulary, consolidated under a minimum-description-length
//! objective, and retrieved at inference time for prompt injection.

pub mod agent;
pub mod case;
pub mod consolidation;
pub mod eval;
pub mod gateway;
pub mod generation;
pub mod retrieval;
pub mod rule;
pub mod vocab;
