//! Reliability analysis, validation oracles, group management and simulation
//! for multi-view 3D video multicast where clients can synthesize a lost view
//! from a received left/right pair (depth-image-based rendering).
//!
//! The crate is organized bottom-up:
//!
//! * [`model`]: views, clients, channels, rates, loss models, transmission plans.
//! * [`analysis`]: closed-form failure probabilities and acquisition ratios.
//! * [`oracle`]: exhaustive enumeration and Monte Carlo ground truth.
//! * [`protocol`]: the view-aware group management protocol (view table,
//!   join/leave handling, re-organization, soft state, wire codec).
//! * [`simulator`]: frame-driven dynamic population experiments comparing the
//!   protocol against plain all-views multicast.

pub mod analysis;
pub mod exec;
pub mod model;
pub mod oracle;
pub mod protocol;
pub mod rng;
pub mod simulator;
pub mod stats;

pub use exec::Execution;
pub use rng::Seed;
