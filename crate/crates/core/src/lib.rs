//! First-passage and reflection quantities for spectrally negative Markov
//! additive processes with hyperexponential jumps.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod firstpassage;
pub mod fixedpoint;
pub mod linalg;
pub mod model;
pub mod reflection;
pub mod scale;
pub mod simulate;
pub mod spectral;

pub use error::{Error, ModelIssue, Result};
pub use firstpassage::{first_passage, FirstPassage};
pub use model::{DriftSign, LevyDescriptor, MapModel, ModelSpec, TransitionJump};
pub use spectral::{Region, SpectralConfig};
