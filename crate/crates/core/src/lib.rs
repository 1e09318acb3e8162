//! Fairness inspection for masked language models.
//!
//! Sentences from a paired stereotype/base benchmark are scored by
//! pseudo-log-likelihood under one or more models. The crate summarizes those
//! scores per model and category, measures how often each model prefers the
//! stereotypical side of a pair, embeds score vectors in 2-D, and keeps the
//! linked-selection state an interactive front end renders from.

pub mod analytics;
pub mod dataset;
pub mod demo;
pub mod embedding;
pub mod scoring;
pub mod session;
