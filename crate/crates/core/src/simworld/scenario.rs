//! Scenario files: every tunable of a simulated mission, with defaults.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comms::ChannelModel;
use crate::geometry::{Attitude, Pose, Vec3};
use crate::hexapod::WinchParams;
use crate::localization::{EkfConfig, ManagerConfig, TagEntry, TagMap};
use crate::perception::{CameraIntrinsics, DetectorModel, TrackerConfig};
use crate::photometry::ExposureCalibration;
use crate::planning::{PlannerConfig, PrimitiveParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("invalid scenario field `{path}`: {message}")]
    Invalid { path: String, message: String },
}

fn invalid(path: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { path: path.to_string(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveConfig {
    pub heave_amp: f64,
    pub roll_amp: f64,
    pub pitch_amp: f64,
    pub period: f64,
}

impl Default for WaveConfig {
    fn default() -> Self {
        Self { heave_amp: 0.15, roll_amp: 0.03, pitch_amp: 0.02, period: 6.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VesselWaypoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub yaw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VesselGeometry {
    /// Deck height above the water line at rest (m).
    pub deck_height: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl Default for VesselGeometry {
    fn default() -> Self {
        Self { deck_height: 1.0, half_length: 3.0, half_width: 1.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UavPlant {
    /// First-order velocity lag (s).
    pub tau: f64,
    pub max_speed: f64,
    pub max_climb: f64,
    /// Position loop gain (1/s).
    pub k_pos: f64,
    pub k_alt: f64,
    /// Body origin height when resting on the ground (m).
    pub rest_height: f64,
    pub heading: f64,
}

impl Default for UavPlant {
    fn default() -> Self {
        Self { tau: 0.5, max_speed: 2.0, max_climb: 1.0, k_pos: 0.8, k_alt: 1.0, rest_height: 0.15, heading: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorNoise {
    /// Per-axis noise on tag positions in the body frame (m).
    pub tag: f64,
    /// Flow rate noise (rad/s).
    pub flow: f64,
    pub gyro: f64,
    pub depth: f64,
    pub lidar: f64,
    pub height_dropout: f64,
    pub ultrasonic: f64,
    pub ultrasonic_dropout: f64,
    /// Hexapod load cell noise (N).
    pub load: f64,
    pub tilt: f64,
    /// Hexapod marker position noise (m).
    pub marker: f64,
    pub winch_ultrasonic: f64,
    pub winch_ultrasonic_dropout: f64,
}

impl Default for SensorNoise {
    fn default() -> Self {
        Self {
            tag: 0.03,
            flow: 0.004,
            gyro: 0.001,
            depth: 0.02,
            lidar: 0.03,
            height_dropout: 0.01,
            ultrasonic: 0.005,
            ultrasonic_dropout: 0.05,
            load: 0.2,
            tilt: 0.005,
            marker: 0.005,
            winch_ultrasonic: 0.005,
            winch_ultrasonic_dropout: 0.02,
        }
    }
}

impl SensorNoise {
    /// All sigmas and dropout probabilities set to zero.
    pub fn noiseless() -> Self {
        Self {
            tag: 0.0,
            flow: 0.0,
            gyro: 0.0,
            depth: 0.0,
            lidar: 0.0,
            height_dropout: 0.0,
            ultrasonic: 0.0,
            ultrasonic_dropout: 0.0,
            load: 0.0,
            tilt: 0.0,
            marker: 0.0,
            winch_ultrasonic: 0.0,
            winch_ultrasonic_dropout: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TagModel {
    /// Detection probability at perfect exposure.
    pub p_base: f64,
    /// Exposure-mismatch decay constant (us).
    pub tau_us: f64,
    pub max_range: f64,
}

impl Default for TagModel {
    fn default() -> Self {
        Self { p_base: 0.99, tau_us: 300.0, max_range: 12.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HexapodConfig {
    pub grasp_range: f64,
    /// Ultrasonic mounts sit this far ahead of and behind the body centre (m).
    pub sensor_offset: f64,
    pub ultrasonic_max_range: f64,
    pub close_time_s: f64,
    /// Load measured while clamping an object on the ground (N).
    pub grip_load: f64,
    pub object_mass: f64,
    pub body_height: f64,
    /// Extra cable paid out past the expected touchdown length (m).
    pub deploy_slack: f64,
}

impl Default for HexapodConfig {
    fn default() -> Self {
        Self {
            grasp_range: 0.15,
            sensor_offset: 0.08,
            ultrasonic_max_range: 1.5,
            close_time_s: 1.0,
            grip_load: 8.0,
            object_mass: 2.0,
            body_height: 0.25,
            deploy_slack: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Faults {
    /// `[start, end)` windows (s) during which no tag is detected.
    pub tag_dropouts: Vec<[f64; 2]>,
    /// Tilt added to the hexapod IMU while it is closing on or holding the object on the ground (rad).
    pub tilt_bias_in_grasp: f64,
    /// The held object slips this long after the first WinchUp begins (s).
    pub slip_after_winch_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub duration_s: f64,
    pub dt: f64,
    pub planner_period_s: f64,
    pub sun_heading: f64,
    /// Fixed exposure in us; when absent the heading-aware law is used.
    pub fixed_exposure_us: Option<f64>,
    pub uav_start: [f64; 3],
    pub uav: UavPlant,
    pub wave: WaveConfig,
    pub vessel: VesselGeometry,
    pub vessel_path: Vec<VesselWaypoint>,
    /// Object centre in the deck frame (m).
    pub target_on_deck: [f64; 3],
    pub tag_layout: Vec<TagEntry>,
    pub tags: TagModel,
    pub sensor_noise: SensorNoise,
    pub exposure_calib: ExposureCalibration,
    pub camera: CameraIntrinsics,
    pub detector: DetectorModel,
    pub channel: ChannelModel,
    /// Planner ticks without a state report before the link counts as lost.
    pub link_timeout_ticks: u64,
    pub planner: PlannerConfig,
    pub primitives: PrimitiveParams,
    pub manager: ManagerConfig,
    pub ekf: EkfConfig,
    pub tracker: TrackerConfig,
    pub hexapod: HexapodConfig,
    pub winch: WinchParams,
    pub faults: Faults,
}

/// Reference markers on a 4 m grid over the operating area.
pub fn default_tag_layout() -> Vec<TagEntry> {
    let mut out = Vec::new();
    let mut id = 0;
    for iy in 0..5 {
        for ix in 0..7 {
            out.push(TagEntry {
                id,
                position: Vec3::new(-4.0 + 4.0 * ix as f64, -8.0 + 4.0 * iy as f64, 0.0),
                attitude: Attitude::IDENTITY,
            });
            id += 1;
        }
    }
    out
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "nominal".into(),
            seed: 42,
            duration_s: 600.0,
            dt: 0.02,
            planner_period_s: 0.1,
            sun_heading: 0.8,
            fixed_exposure_us: None,
            uav_start: [0.0, 0.0, 0.15],
            uav: UavPlant::default(),
            wave: WaveConfig::default(),
            vessel: VesselGeometry::default(),
            vessel_path: vec![VesselWaypoint { t: 0.0, x: 14.0, y: 3.0, yaw: 0.3 }],
            target_on_deck: [0.8, -0.4, 0.1],
            tag_layout: default_tag_layout(),
            tags: TagModel::default(),
            sensor_noise: SensorNoise::default(),
            exposure_calib: ExposureCalibration::default(),
            camera: CameraIntrinsics::default(),
            detector: DetectorModel::default(),
            channel: ChannelModel::default(),
            link_timeout_ticks: 10,
            planner: PlannerConfig::default(),
            primitives: PrimitiveParams::default(),
            manager: ManagerConfig::default(),
            ekf: EkfConfig::default(),
            tracker: TrackerConfig::default(),
            hexapod: HexapodConfig::default(),
            winch: WinchParams::default(),
            faults: Faults::default(),
        }
    }
}

fn positive(path: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(path, format!("must be finite and > 0, got {v}")))
    }
}

fn non_negative(path: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(invalid(path, format!("must be finite and >= 0, got {v}")))
    }
}

fn probability(path: &str, v: f64) -> Result<(), ConfigError> {
    if (0.0..1.0).contains(&v) {
        Ok(())
    } else {
        Err(invalid(path, format!("must be in [0, 1), got {v}")))
    }
}

fn finite(path: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(invalid(path, format!("must be finite, got {v}")))
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::Parse { path, message: e.into_inner().to_string() }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// World steps per planner tick.
    pub fn planner_divider(&self) -> u64 {
        (self.planner_period_s / self.dt).round() as u64
    }

    pub fn tag_map(&self) -> TagMap {
        let mut m = TagMap::new();
        for t in &self.tag_layout {
            m.insert(t.id, Pose::new(t.position, t.attitude));
        }
        m
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        positive("dt", self.dt)?;
        positive("duration_s", self.duration_s)?;
        positive("planner_period_s", self.planner_period_s)?;
        let ratio = self.planner_period_s / self.dt;
        if ratio < 0.999 || (ratio - ratio.round()).abs() > 1e-6 {
            return Err(invalid("planner_period_s", "must be a whole multiple of dt"));
        }
        finite("sun_heading", self.sun_heading)?;
        if let Some(t) = self.fixed_exposure_us {
            positive("fixed_exposure_us", t)?;
        }
        for (i, v) in self.uav_start.iter().enumerate() {
            finite(&format!("uav_start[{i}]"), *v)?;
        }

        positive("uav.tau", self.uav.tau)?;
        positive("uav.max_speed", self.uav.max_speed)?;
        positive("uav.max_climb", self.uav.max_climb)?;
        positive("uav.k_pos", self.uav.k_pos)?;
        positive("uav.k_alt", self.uav.k_alt)?;
        non_negative("uav.rest_height", self.uav.rest_height)?;
        finite("uav.heading", self.uav.heading)?;
        if self.uav.max_speed.hypot(self.uav.max_climb) >= self.manager.max_speed {
            return Err(invalid("uav.max_speed", "vehicle speed must stay below manager.max_speed"));
        }

        non_negative("wave.heave_amp", self.wave.heave_amp)?;
        non_negative("wave.roll_amp", self.wave.roll_amp)?;
        non_negative("wave.pitch_amp", self.wave.pitch_amp)?;
        positive("wave.period", self.wave.period)?;
        positive("vessel.deck_height", self.vessel.deck_height)?;
        positive("vessel.half_length", self.vessel.half_length)?;
        positive("vessel.half_width", self.vessel.half_width)?;

        if self.vessel_path.is_empty() {
            return Err(invalid("vessel_path", "needs at least one waypoint"));
        }
        for (i, w) in self.vessel_path.iter().enumerate() {
            for (name, v) in [("t", w.t), ("x", w.x), ("y", w.y), ("yaw", w.yaw)] {
                finite(&format!("vessel_path[{i}].{name}"), v)?;
            }
            if i > 0 && w.t <= self.vessel_path[i - 1].t {
                return Err(invalid(&format!("vessel_path[{i}].t"), "waypoint times must increase"));
            }
        }
        for (i, v) in self.target_on_deck.iter().enumerate() {
            finite(&format!("target_on_deck[{i}]"), *v)?;
        }
        let mut seen = std::collections::BTreeSet::new();
        for (i, t) in self.tag_layout.iter().enumerate() {
            if !seen.insert(t.id) {
                return Err(invalid(&format!("tag_layout[{i}].id"), format!("duplicate tag id {}", t.id)));
            }
            if !t.position.iter().all(|c| c.is_finite()) || !t.attitude.is_finite() {
                return Err(invalid(&format!("tag_layout[{i}]"), "pose must be finite"));
            }
        }

        if !(0.0..=1.0).contains(&self.tags.p_base) {
            return Err(invalid("tags.p_base", "must be in [0, 1]"));
        }
        positive("tags.tau_us", self.tags.tau_us)?;
        positive("tags.max_range", self.tags.max_range)?;

        let n = &self.sensor_noise;
        for (name, v) in [
            ("tag", n.tag),
            ("flow", n.flow),
            ("gyro", n.gyro),
            ("depth", n.depth),
            ("lidar", n.lidar),
            ("ultrasonic", n.ultrasonic),
            ("load", n.load),
            ("tilt", n.tilt),
            ("marker", n.marker),
            ("winch_ultrasonic", n.winch_ultrasonic),
        ] {
            non_negative(&format!("sensor_noise.{name}"), v)?;
        }
        for (name, v) in [
            ("height_dropout", n.height_dropout),
            ("ultrasonic_dropout", n.ultrasonic_dropout),
            ("winch_ultrasonic_dropout", n.winch_ultrasonic_dropout),
        ] {
            probability(&format!("sensor_noise.{name}"), v)?;
        }

        self.exposure_calib.validate().map_err(|e| invalid("exposure_calib", e.to_string()))?;
        self.camera.validate().map_err(|e| invalid("camera", e.to_string()))?;

        let d = &self.detector;
        non_negative("detector.pixel_sigma", d.pixel_sigma)?;
        non_negative("detector.depth_sigma", d.depth_sigma)?;
        probability("detector.miss_prob", d.miss_prob)?;
        probability("detector.false_positive_prob", d.false_positive_prob)?;
        positive("detector.object_size", d.object_size)?;

        if !(0.0..=1.0).contains(&self.channel.drop_prob) {
            return Err(invalid("channel.drop_prob", "must be in [0, 1]"));
        }
        if self.link_timeout_ticks == 0 {
            return Err(invalid("link_timeout_ticks", "must be >= 1"));
        }

        let p = &self.planner;
        for (name, v) in [
            ("takeoff_altitude", p.takeoff_altitude),
            ("cruise_altitude", p.cruise_altitude),
            ("deploy_height", p.deploy_height),
            ("arrival_tolerance", p.arrival_tolerance),
            ("altitude_tolerance", p.altitude_tolerance),
            ("hover_speed", p.hover_speed),
            ("retry_settle_s", p.retry_settle_s),
            ("grasp_timeout_s", p.grasp_timeout_s),
            ("tilt_limit", p.tilt_limit),
        ] {
            positive(&format!("planner.{name}"), v)?;
        }
        non_negative("planner.land_altitude", p.land_altitude)?;
        if p.deploy_height > crate::localization::DEPTH_MAX_RANGE {
            return Err(invalid("planner.deploy_height", "must be within the depth camera range"));
        }
        non_negative("planner.loads.grounded", p.loads.grounded)?;
        if p.loads.airborne < p.loads.grounded {
            return Err(invalid("planner.loads.airborne", "must be >= planner.loads.grounded"));
        }

        positive("primitives.step", self.primitives.step)?;
        positive("primitives.turn", self.primitives.turn)?;
        positive("primitives.max_range", self.primitives.max_range)?;
        if !(0.0..=1.0).contains(&self.primitives.rotate_affordance) {
            return Err(invalid("primitives.rotate_affordance", "must be in [0, 1]"));
        }

        positive("manager.max_speed", self.manager.max_speed)?;
        positive("ekf.tag_sigma", self.ekf.tag_sigma)?;
        positive("ekf.flow_sigma", self.ekf.flow_sigma)?;
        non_negative("ekf.q_accel", self.ekf.q_accel)?;

        positive("tracker.gate", self.tracker.gate)?;
        positive("tracker.dt", self.tracker.dt)?;
        positive("tracker.meas_var", self.tracker.meas_var)?;
        non_negative("tracker.q_accel", self.tracker.q_accel)?;
        positive("tracker.init_vel_var", self.tracker.init_vel_var)?;

        let h = &self.hexapod;
        for (name, v) in [
            ("grasp_range", h.grasp_range),
            ("ultrasonic_max_range", h.ultrasonic_max_range),
            ("close_time_s", h.close_time_s),
            ("object_mass", h.object_mass),
            ("body_height", h.body_height),
        ] {
            positive(&format!("hexapod.{name}"), v)?;
        }
        non_negative("hexapod.sensor_offset", h.sensor_offset)?;
        non_negative("hexapod.grip_load", h.grip_load)?;
        non_negative("hexapod.deploy_slack", h.deploy_slack)?;

        positive("winch.k_p", self.winch.k_p)?;
        positive("winch.rate_max", self.winch.rate_max)?;
        non_negative("winch.dock_epsilon", self.winch.dock_epsilon)?;
        non_negative("winch.dock_tolerance", self.winch.dock_tolerance)?;

        for (i, w) in self.faults.tag_dropouts.iter().enumerate() {
            if !(w[0].is_finite() && w[1].is_finite() && w[0] <= w[1]) {
                return Err(invalid(&format!("faults.tag_dropouts[{i}]"), "window must be [start, end] with start <= end"));
            }
        }
        non_negative("faults.tilt_bias_in_grasp", self.faults.tilt_bias_in_grasp)?;
        if let Some(s) = self.faults.slip_after_winch_s {
            non_negative("faults.slip_after_winch_s", s)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ScenarioConfig::default().validate().unwrap();
        assert_eq!(ScenarioConfig::default().planner_divider(), 5);
    }

    #[test]
    fn empty_object_is_default() {
        assert_eq!(ScenarioConfig::from_json("{}").unwrap(), ScenarioConfig::default());
    }

    #[test]
    fn json_round_trip() {
        let c = ScenarioConfig::default();
        assert_eq!(ScenarioConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn unknown_field_reports_path() {
        let err = ScenarioConfig::from_json(r#"{"wave": {"heave": 1.0}}"#).unwrap_err();
        match err {
            ConfigError::Parse { path, .. } => assert!(path.starts_with("wave"), "{path}"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn type_error_reports_path() {
        let err = ScenarioConfig::from_json(r#"{"planner": {"retry_limit": "three"}}"#).unwrap_err();
        match err {
            ConfigError::Parse { path, .. } => assert_eq!(path, "planner.retry_limit"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn validation_reports_path() {
        for (json, want) in [
            (r#"{"dt": 0}"#, "dt"),
            (r#"{"wave": {"period": -1}}"#, "wave.period"),
            (r#"{"sensor_noise": {"ultrasonic_dropout": 1.0}}"#, "sensor_noise.ultrasonic_dropout"),
            (r#"{"planner_period_s": 0.05, "dt": 0.03}"#, "planner_period_s"),
            (r#"{"vessel_path": []}"#, "vessel_path"),
            (r#"{"tag_layout": [{"id": 1, "position": [0,0,0]}, {"id": 1, "position": [1,0,0]}]}"#, "tag_layout[1].id"),
        ] {
            match ScenarioConfig::from_json(json).unwrap_err() {
                ConfigError::Invalid { path, .. } => assert_eq!(path, want, "{json}"),
                e => panic!("{json}: unexpected {e}"),
            }
        }
    }
}
