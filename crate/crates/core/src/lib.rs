//! Core pipeline for conversational garment search and attribute editing.
//!
//! - [`grammar`]: template DSL expanded into labeled NLU training data.
//! - [`nlu`]: hashed n-gram intent classifier and gazetteer entity extraction.
//! - [`dialog`]: slot-filling conversation state machine.
//! - [`retrieval`]: contrastive dual encoder and exact / HNSW vector indexes.
//! - [`garment`]: procedural garment latents, SVG renderer and measurement oracle.
//! - [`flow`]: attribute-conditioned affine coupling flow used for edits.

pub mod codec;
pub mod dialog;
pub mod flow;
pub mod garment;
pub mod grammar;
pub mod nlu;
pub mod optim;
pub mod retrieval;
pub mod text;
