//! Simulator and optimizer for terrestrial networks backhauled by LEO
//! satellites.
//!
//! The system model is a two-tier uplink: single-antenna users transmit to
//! terrestrial base stations over shared sub-channels, and each base station
//! forwards its aggregate traffic to at most one LEO satellite over a
//! dedicated slice of the satellite band.  Time is slotted; every user starts
//! with a finite data demand and the goal is to drain all demands in as few
//! slots as possible by jointly choosing, per slot:
//!
//! * user-to-BS association and sub-channel assignment (binary),
//! * BS-to-satellite association (binary),
//! * user transmit powers, BS backhaul powers and backhaul bandwidth split
//!   (continuous).
//!
//! Two solvers are provided.  [`sca::run_min_time`] implements the iterative
//! scheme: binaries are relaxed through reweighted-l1 penalties, rates are
//! minorized with a log-domain concave bound, and each inner step is an
//! exponential-cone program handed to Clarabel.  [`greedy::run_greedy`] is a
//! cheap rule-based baseline (best-gain association, water-filled powers,
//! bisection to respect the backhaul bottleneck) used as a comparison point.
//!
//! [`harness`] wires both into reproducible seeded sweeps with CSV output;
//! the `istn` binary in the companion CLI crate fronts it.

pub mod config;
pub mod convex;
pub mod error;
pub mod greedy;
pub mod harness;
pub mod rate;
pub mod sca;
pub mod scenario;

pub use config::RunConfig;
pub use error::Error;
pub use scenario::Scenario;
