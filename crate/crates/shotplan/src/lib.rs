//! Per-input shot planning for in-context learning under a token budget.
//!
//! Given a pool of candidate demonstrations per sample and a fixed token
//! budget for the whole batch, this crate decides how many demonstrations
//! each individual prompt should carry. A small linear-softmax controller
//! predicts the shot count from cheap prompt features; it is trained in two
//! stages (maximum likelihood on synthesized minimal-shot labels, then
//! REINFORCE against an accuracy-minus-cost reward) and its predictions are
//! turned into budget-feasible allocations.
//!
//! A deterministic simulator with closed-form response curves stands in for
//! the black-box model, so every expectation the pipeline computes can be
//! checked against brute-force enumeration; a completions-style HTTP client
//! covers real endpoints behind the same trait.
//!
//! The `examples/` directory demonstrates each capability end to end; the
//! `shotplan` binary wraps the same calls as subcommands.

pub mod allocation;
pub mod commands;
pub mod config;
pub mod controller;
pub mod data;
pub mod features;
pub mod harness;
pub mod model;
pub mod prompt;
pub mod synthesis;
pub mod synthetic;
pub mod tokenizer;
