//! Weakly-supervised pixel localization from classifier evidence.
//!
//! A small CNN classifier is trained on image labels and frozen. Its class
//! activation maps drive stochastic sampling of a handful of foreground and
//! background pixels per image, and a U-Net style decoder is trained on those
//! sparse pseudo-labels plus an all-background term on images known to
//! contain no region of interest. Localization is scored with the pixel
//! average precision (PxAP) protocol.

pub mod data;
pub mod error;
pub mod evidence;
pub mod loss;
pub mod metrics;
pub mod networks;
pub mod numerics;
pub mod pipeline;

pub use error::{Error, Result};
