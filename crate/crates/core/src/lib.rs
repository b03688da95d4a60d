//! Single-stage semi-supervised speech recognition: one acoustic model trained
//! by alternating a masked contrastive loss on unlabeled audio with a CTC loss
//! on labeled audio, each with its own Adam state.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod decode;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod optim;
pub mod params;
pub mod plot;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
