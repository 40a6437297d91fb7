//! Dispatch, flight-level selection, and trajectory deconfliction for
//! cooperative air taxi fleets, plus a deterministic simulator that measures
//! safety (NMAC/LOS rates) and service quality (throughput, waiting times,
//! trip ratios) over population-grounded vertiport maps.
//!
//! The planning stack runs three phases each timestep:
//!
//! 1. **Assignment** ([`assignment`]) — build the agent-passenger cost
//!    matrix, enumerate k-best matchings, and pick the one whose induced
//!    future fleet distribution best matches vertiport demand.
//! 2. **Flight levels** ([`levels`]) — score per-level route risk against
//!    diffused traffic-density forecasts and pick a takeoff level, or hold
//!    the aircraft until traffic clears.
//! 3. **Trajectories** ([`trajectory`]) — greedy homing per agent, with
//!    selective UCT search over agents predicted to lose separation.
//!
//! The [`engine`] binds the phases into a timestep loop; [`mapgen`] builds
//! vertiport maps from population rasters; [`experiment`] orchestrates
//! seeded runs and method sweeps. See the crate examples for runnable entry
//! points into each capability.

pub mod assignment;
pub mod engine;
pub mod experiment;
pub mod geom;
pub mod levels;
pub mod mapgen;
pub mod rng;
pub mod trajectory;
pub mod world;

/// Build identifier embedded in every output artifact.
pub const BUILD_ID: &str = env!("AIRTAXI_BUILD_ID");
/// Version tag for all serialized file formats.
pub const SCHEMA_VERSION: u32 = 1;
