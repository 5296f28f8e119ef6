//! Closed-loop toolkit for counting bunched photon pairs with a
//! time-stamping pixel camera.
//!
//! The chain has three stages that can run in memory or through files:
//!
//! 1. [`sim`] — Monte Carlo generation of raw pixel hits for a delay-scan
//!    HOM experiment: SPDC pair emission, splitter branching, cluster
//!    rendering with jitter/time-walk/deadtime/afterpulses/dark counts.
//! 2. [`recon`] — streaming reconstruction: spatiotemporal clustering,
//!    ToT-weighted centroiding, time-walk correction, region gating and
//!    coincidence finding.
//! 3. [`fit`] — double-Gaussian peak fits per delay bin, the joint
//!    three-curve dip fit, afterpulse/blend estimators and the
//!    unitarity check.
//!
//! [`model`] holds the physics kernels shared by the simulator and the
//! fitters, [`config`] the experiment description, [`io`] the file formats
//! and [`pipeline`] the stage orchestration used by the CLI.

pub mod config;
pub mod fit;
pub mod hit;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod recon;
pub mod sim;

pub use hit::PixelHit;
