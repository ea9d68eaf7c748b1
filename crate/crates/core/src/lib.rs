//! Adversarial-tampering detection for industrial inspection images.
//!
//! The crate builds a synthetic inspection corpus, attacks part of it with
//! PGD against a small victim classifier, extracts SSIM, histogram and
//! embedding features, and evaluates first-layer detectors that screen
//! images before they reach the victim.

pub mod attack;
pub mod config;
pub mod detectors;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod guard;
pub mod imaging;
pub mod pipeline;
pub mod seeds;

pub use error::{Error, Result};
