//! Reconstruction of two-phase porous media from partially informed images.
//!
//! The crate covers the full pipeline: image and mask handling ([`grid`]),
//! morphological descriptors ([`morph`]), a small reverse-mode tensor engine
//! ([`tensornet`]), the generator/discriminator pair ([`models`]), the
//! four-term training objective ([`objective`]), alternating adversarial
//! training and reconstruction ([`train`]), a simulated-annealing baseline
//! ([`anneal`]), synthetic dataset generation ([`synthdata`]), and evaluation
//! reports with SVG plots ([`report`]).

pub mod anneal;
pub mod grid;
pub mod models;
pub mod morph;
pub mod objective;
pub mod report;
pub mod synthdata;
pub mod tensornet;
pub mod train;
