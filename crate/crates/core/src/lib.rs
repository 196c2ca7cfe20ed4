//! Photon-number statistics of twin beams.
//!
//! The crate models detection of signal and idler fields by lossy,
//! noisy photon-number-resolving detectors, simulates the apparatus by Monte
//! Carlo, reconstructs the joint photon-number distribution from coincidence
//! histograms by Expectation-Maximization, and evaluates s-ordered joint
//! integrated-intensity quasi-distributions.

pub mod detection;
pub mod em;
pub mod envelope;
pub mod error;
pub mod intensity;
pub mod pnd;
pub mod sampler;
mod special;

pub use detection::{forward_map, CoincidenceDistribution, DetectionChain, Origin, PixelMode};
pub use em::{reconstruct, EmConfig, EmInit, EmResult};
pub use error::{Error, Result};
pub use intensity::{IntensityGrid, OrderingParam};
pub use pnd::{JointPnd, Marginal, MarginalKind};
pub use sampler::{simulate, SimulationConfig, Source};
