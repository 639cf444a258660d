//! Differential tracker detection.
//!
//! Blocks a request (or one of its fields) in a recorded page load, diffs the
//! result against vanilla loads, and classifies the difference twice: once
//! for tracking behavior and once for page breakage. Requests that track
//! without breaking the page get a block rule; fields that track without
//! breaking it get a `removeparam` or `cookie` rule.

pub mod appearance;
pub mod classifier;
pub mod diff;
pub mod entropy;
pub mod features;
pub mod fixtures;
pub mod lexicon;
pub mod pipeline;
pub mod psl;
pub mod rules;
pub mod similarity;
pub mod trace;
