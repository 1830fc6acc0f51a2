//! Open-set object detection machinery without IO.
//!
//! This crate holds the pure parts of an open-set detection toolchain:
//! box geometry, the known / unknown / background category layout,
//! uncertainty-aware label assignment for negative proposals, soft-target
//! losses with their analytic gradients, the open-set metric suite
//! (mAP, Wilderness Impact, A-OSE, U-AP, U-Recall), benchmark split
//! construction and inference post-processing.
//!
//! Everything here is `no_std` + `alloc`. File formats, parallel drivers and
//! the command-line front end live in the `osod` crate.

#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod assign;
pub mod geometry;
pub mod loss;
pub mod metrics;
pub mod postprocess;
pub mod split;
pub mod taxonomy;

pub use geometry::{BBox, BoxError};
pub use taxonomy::{Annotation, CategorySpace, ClassSlot, Dataset, Detection, ImageRecord};
