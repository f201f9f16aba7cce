//! Deterministic environment simulation.

pub mod scenario;
pub mod sensors;
pub mod world;

pub use scenario::{ConfigError, ScenarioConfig};
pub use sensors::{sample_sensors, simulate_flow_and_heights, simulate_tag_detections, SensorBundle};
pub use world::{vessel_pose_at, world_step, WorldCommand, WorldState};
