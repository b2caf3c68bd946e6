//! Synthetic amodal occlusion datasets and amodal detection evaluation.
//!
//! The generation pipeline runs [`sprite_source`] → [`compositor`] →
//! [`orders`] / [`annotate`] → [`datastore`]; [`evalkit`] scores detection
//! and segmentation predictions against a stored split.

pub mod annotate;
pub mod cli;
pub mod compositor;
pub mod datastore;
pub mod error;
pub mod evalkit;
pub mod orders;
pub mod raster;
pub mod rng;
pub mod sprite_source;

pub use error::{Error, Result};
