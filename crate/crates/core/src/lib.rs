//! Dataset tooling for few-shot portrait personalization of text-to-image
//! models.
//!
//! The crate turns a handful of subject photos into curated, augmented and
//! identity-checked training sets:
//!
//! - [`imgcore`]: deterministic raster operations (resampling, flips,
//!   rotation, color jitter, auto-levels, resize policies).
//! - [`cropkit`]: ~1 MP aspect buckets, center and face-anchored crops.
//! - [`composite`]: background replacement, alpha and Poisson blending.
//! - [`faceio`]: face detection / alignment / embedding backends.
//! - [`identity`]: FaceDistance ranking, filtering and distribution summaries.
//! - [`datasetkit`]: manifests, dataset building, seeded augmentation plans,
//!   concept-share validation and prompt pools.
//! - [`genflow`]: keypoint conditioning, the generator client, two-step
//!   generation and synthetic augmentation.

pub mod composite;
pub mod cropkit;
pub mod datasetkit;
pub mod error;
pub mod faceio;
pub mod genflow;
pub mod geometry;
pub mod identity;
pub mod imgcore;

pub use error::{Error, Result};
pub use geometry::{Affine2, Point, Similarity};
pub use imgcore::ImageBuffer;
