//! Multimodal stacked autoencoder for joint compression and classification
//! of paired two-modality time series (EEG and EMG).
//!
//! Each modality gets its own greedily pretrained stack of tied-weight
//! autoencoders. A joint layer sums the two pathways' sigmoid projections
//! into one shared code, which is the compressed representation. The joint
//! model is trained on modality-dropout augmented data and can be fine-tuned
//! with a softmax head on the shared code.

pub mod autoencoder;
pub mod codec;
pub mod data;
pub mod dwt;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod metrics;
pub mod multimodal;
pub mod nn;
pub mod seed;

pub use error::{DataError, Error, FormatError, Result};
