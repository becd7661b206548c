//! Multimodal emotion recognition in conversation: unimodal encoders with
//! speaker embeddings, a relational temporal graph network over a
//! per-conversation multimodal graph, pairwise cross-modal transformers, and
//! a fused utterance classifier, together with the corpus format, training
//! loop and evaluation harness around them.

pub mod attention;
pub mod dataio;
pub mod encoders;
pub mod error;
pub mod graph;
pub mod harness;
pub mod head;
pub mod modality;
pub mod model;
pub mod numerics;
pub mod pcm;
pub mod rtgcn;

pub use error::{Error, Result};
pub use modality::Modality;
