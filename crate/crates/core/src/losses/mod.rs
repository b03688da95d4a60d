//! Training objectives.

pub mod contrastive;
pub mod ctc;

pub use contrastive::{
    contrastive_loss, contrastive_loss_with, draw_negatives, sample_negatives, ContrastiveConfig,
    NegativePool,
};
pub use ctc::{collapse, ctc_bruteforce, ctc_forward, ctc_loss, CtcTarget};
