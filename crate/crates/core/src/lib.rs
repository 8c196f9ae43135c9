//! Speaker verification on very short non-linguistic vocal events
//! (cough, laugh, 'hmm', 'tsk-tsk', 'ahem', sniff).
//!
//! The crate carries two complete recognition pipelines that share a common
//! scoring and evaluation layer:
//!
//! - a statistical pipeline: MFCC frontend, diagonal GMM universal background
//!   model, total-variability subspace and i-vector extraction;
//! - a neural pipeline: spliced Fbank frontend, a convolutional plus
//!   time-delay frame classifier, and d-vectors obtained by averaging the
//!   last hidden layer.
//!
//! Both feed the cosine / LDA-cosine / PLDA backends in [`backend`], and the
//! trial generation plus EER/DER machinery in [`eval`]. [`viz`] holds an exact
//! t-SNE used to look at frame-level features of normal versus disguised
//! speech, and [`model`] the single-file model container.

pub mod backend;
pub mod corpus;
pub mod dsp;
pub mod embednet;
pub mod eval;
pub mod gmm;
pub mod model;
pub mod pipeline;
pub mod tvspace;
pub mod viz;

pub use corpus::{AudioSegment, CorpusManifest, EventType, UtteranceRecord};
pub use dsp::FeatureMatrix;
pub use tvspace::{SpeakerVector, VectorKind};
