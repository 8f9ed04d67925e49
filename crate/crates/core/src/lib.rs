//! canta: a small end-to-end text-to-speech engine.
//!
//! The crate is organized as a stack: [`nn`] provides reverse-mode autodiff and
//! optimizers, [`text`] and [`dsp`] turn corpora into token/feature pairs,
//! [`attention`] and [`model`] implement the sequence-to-sequence acoustic
//! models, [`train`]/[`eval`] run optimization and scoring, and [`recipe`]
//! wires everything into staged, resumable pipelines driven by the `canta`
//! binary.

pub mod attention;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod recipe;
pub mod text;
pub mod train;

pub use error::{Error, Result};
