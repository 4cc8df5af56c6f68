//! Attribute-controlled text rewriting.
//!
//! A generator learns to reconstruct corpus sentences from masked copies
//! prefixed by a control token naming each sentence's attribute, as assigned
//! by an attribute classifier. At inference the control token is switched to
//! the target attribute, several masked variants of the input are decoded,
//! and the candidate the classifier accepts with the highest similarity to
//! the source is kept. A student model can then be distilled from those
//! filtered outputs so that one greedy decode suffices.
//!
//! Numeric components are generic over [`Real`] (`f32` or `f64`); the
//! aliases below fix the common `f64` instantiations.

pub mod backend;
pub mod classifier;
pub mod corpus;
pub mod embedder;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod noising;
pub mod persist;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod text;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Classifier = classifier::NaiveBayes<f64>;
pub type ClassifierF32 = classifier::NaiveBayes<f32>;
pub type TfIdfIndex = embedder::TfIdf<f64>;
pub type TfIdfIndexF32 = embedder::TfIdf<f32>;
pub type BigramLm = metrics::NgramLm<f64>;
pub type BigramLmF32 = metrics::NgramLm<f32>;
pub type NeuralBackend = backend::NeuralModel<f64>;
pub type NeuralBackendF32 = backend::NeuralModel<f32>;
