//! Two-class motor-imagery EEG decoding.
//!
//! Recordings are band-passed, re-referenced, cut into feedback trials and
//! sliding windows, mapped to PCA or Welch features and classified with
//! LDA. Window predictions are turned into trial decisions by evidence
//! accumulation.

pub mod classify;
pub mod config;
pub mod decoder;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod evidence;
pub mod features;
pub mod io;
pub mod linalg;
pub mod synth;

pub use error::{Error, Result};
