//! Low-rank cyclostationary travel-time prediction and routing-regret
//! evaluation on road networks.
//!
//! The crate is organised around a single data model: a [`RoadNetwork`]
//! whose segments index the rows of a [`TrafficMatrix`] of travel times
//! sampled on a uniform [`TimeGrid`]. On top of that sit
//!
//! * [`preprocess`] — turning raw, irregular probe data into a clean matrix,
//! * [`lowrank`] — truncated SVD, MDL order selection, and spectral
//!   diagnostics of the temporal coefficients,
//! * [`predictors`] — cyclostationary low-rank forecasters and the
//!   reference baselines (lag, real-time, static clairvoyant),
//! * [`routing`] — time-dependent shortest paths and greedy re-routing,
//! * [`evaluation`] — regret statistics of predictor-driven routes against
//!   the real-time benchmark over community-structured test sets,
//! * [`synthgen`] — seeded synthetic networks and cyclostationary traffic
//!   for end-to-end validation.
//!
//! All randomness in the crate flows from explicit seeds; every public
//! operation is deterministic given its inputs.

pub mod error;
pub mod evaluation;
pub mod grid;
pub mod io;
pub mod lowrank;
pub mod network;
pub mod predictors;
pub mod preprocess;
pub mod routing;
pub mod synthgen;
pub mod testing;
pub mod traffic;

pub use error::{Error, Result};
pub use grid::TimeGrid;
pub use network::{ODQuery, RoadNetwork, Segment};
pub use traffic::TrafficMatrix;
