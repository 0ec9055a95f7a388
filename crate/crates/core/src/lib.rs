//! Sequential simulation-based calibration of dynamic origin-destination
//! demand from link traffic counts.
//!
//! Each time frame is calibrated by alternating a bounded least-squares fit of
//! OD demand to sensor counts with sampled mesoscopic simulations that supply
//! route choice probabilities and link travel times. The simulator state at
//! the end of a frame carries over into the next one.

pub mod assignment;
pub mod bvls;
pub mod calibrator;
pub mod error;
pub mod fixedpoint;
pub mod io;
pub mod mesosim;
pub mod metrics;
pub mod network;
pub mod routing;
pub mod sampler;
pub mod scenario;

pub use assignment::{build_assignment, AssignmentMatrix, NodVector};
pub use bvls::{BoundRule, BvlsSolution, StackedSystem};
pub use calibrator::{run_frame, run_sequence, CalibConfig, Calibrator, FrameOutput, FrameStep};
pub use error::{Error, Result};
pub use fixedpoint::{FixedPointConfig, FixedPointRun};
pub use mesosim::{simulate_frame, FrameState, SimConfig, SimResult};
pub use metrics::ErrorRecord;
pub use network::{generate_grid, GridSpec, Link, Network, NetworkFile, Node, PoiSelector};
pub use routing::{Route, RouteDb};
pub use sampler::{RouteFlow, VehiclePlan};
pub use scenario::{build_scenario, DemandProtocol, Scenario, ScenarioSpec};
