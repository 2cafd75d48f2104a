//! Multi-modal, multi-channel survival-class prediction from brain MR volumes.
//!
//! The pipeline projects each co-registered modality to a three-channel 2D
//! image, runs one residual CNN branch per modality, fuses the branch features
//! with compact bilinear pooling, and cascades every head's logits (plus lesion
//! and age features) into a final classifier trained with a weighted sum of
//! all head losses.

pub mod config;
pub mod data;
pub mod error;
pub mod fft;
pub mod gradcheck;
pub mod harness;
pub mod model;
pub mod preprocess;
pub mod sketch;
pub mod tensor;

pub use error::{Error, Result};
