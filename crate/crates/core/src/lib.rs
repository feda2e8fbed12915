//! Headless engine for a beacon-driven public-transport adventure game.
//!
//! The crate is split by concern:
//!
//! - [`beacon`]: advertisement codec, path-loss distance and proximity zones.
//! - [`proximity`]: scan-event stream processing, presence and gate checks,
//!   broadcast-rate analytics.
//! - [`simulator`]: seeded Poisson broadcast generator for in-bus trips and
//!   detection-probability analysis.
//! - [`adventure`]: catalog, staged sessions, quizzes, badges, leaderboard.
//! - [`store`]: hierarchical JSON document store with journal and
//!   change subscriptions, plus local credentials.
//! - [`evaluation`]: SUS scoring and interpretation, task timing statistics.
//!
//! Numeric code is generic over [`Scalar`]; the aliases below fix it to
//! `f64`, which is what the service and CLI use.

// `!(x > 0)` also rejects NaN, which is the point.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adventure;
pub mod beacon;
pub mod evaluation;
pub mod proximity;
pub mod scalar;
pub mod simulator;
pub mod store;

pub use scalar::Scalar;

pub use adventure::{Catalog, Game};
pub use beacon::{BeaconFrame, BeaconId, BeaconKind, Zone};
pub use proximity::{RegionEvent, ScanEvent, ScanLog};
pub use store::DocumentStore;

/// Proximity zone with an `f64` distance.
pub type ProximityZone = beacon::ProximityZone<f64>;
/// Zone thresholds in meters.
pub type ZoneThresholds = beacon::ZoneThresholds<f64>;
/// Per-beacon presence state with `f64` smoothing.
pub type RegionState = proximity::RegionState<f64>;
/// Proximity engine configuration.
pub type ProximityConfig = proximity::ProximityConfig<f64>;
/// Broadcast-rate report.
pub type RateReport = proximity::RateReport<f64>;
/// Per-beacon entry of a [`RateReport`].
pub type BeaconRate = proximity::BeaconRate<f64>;
/// Trip configuration for the simulator.
pub type TripConfig = simulator::TripConfig<f64>;
/// Simulated beacon specification.
pub type BeaconSpec = simulator::BeaconSpec<f64>;
/// Installation recommendation.
pub type Recommendation = simulator::Recommendation<f64>;
/// Timing/error statistics for one task.
pub type TaskMetrics = evaluation::TaskMetrics<f64>;
/// Task sample.
pub type TaskSample = evaluation::TaskSample<f64>;
