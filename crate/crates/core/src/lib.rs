//! Allocation-only core of the `nlverify` pipeline.
//!
//! Everything in this crate is pure: it takes source text, summaries and
//! prompt completions as values and returns values. Reading compilation
//! databases, talking to completion endpoints, persisting summaries and the
//! command line live in the `nlverify` crate.
//!
//! The pieces, bottom-up:
//!
//! * [`lex`] and [`extract`]: a structural C front end producing function
//!   records, callsites and type context for one translation unit.
//! * [`blocks`]: splitting oversized function bodies at syntax boundaries.
//! * [`callgraph`]: call graph with external stubs, SCCs in callee-first order.
//! * [`summary`]: the typed summary schemas, validation and cache keys.
//! * [`prompt`]: prompt templates, callsite annotation and rendering.
//! * [`rules`]: a deterministic lexical completion provider.
//! * [`json`]: JSON extraction and repair from raw completions.
//! * [`score`]: verdict judging, confusion counts and scoring.

#![no_std]

extern crate alloc;

pub mod blocks;
pub mod callgraph;
pub mod extract;
pub mod json;
pub mod lex;
pub mod libattrs;
pub mod prompt;
pub mod rules;
pub mod score;
pub mod summary;
pub mod types;

pub use blocks::{split_function_blocks, Block, BoundaryKind};
pub use callgraph::{AnalysisOrder, CallGraph};
pub use extract::{CallsiteRecord, Extraction, FunctionRecord, TypeContext};
pub use summary::{SummaryKey, SummaryRecord};
pub use types::{CacheMode, Mode, PassTag, Property, Verdict};
