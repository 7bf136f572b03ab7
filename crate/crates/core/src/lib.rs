//! Character-level end-to-end speech recognition components.
//!
//! The pipeline runs: audio → log filter-bank features → bidirectional
//! clipped-ReLU RNN → per-frame character posteriors → CTC training /
//! LM-fused beam-search decoding. Supporting pieces cover n-gram language
//! modelling, noise-superposition augmentation, Nesterov-momentum training
//! with length-sorted batching, and deterministic multi-worker simulations.

pub mod alphabet;
pub mod audio;
pub mod augment;
pub mod ctc;
pub mod decoder;
pub mod error;
pub mod features;
pub mod lm;
pub mod network;
pub mod pipeline;
pub mod training;

pub use alphabet::Alphabet;
pub use audio::Utterance;
pub use error::{Error, Result};
pub use features::FeatureSequence;
pub use network::{NetworkConfig, NetworkParams, PosteriorGrid};
