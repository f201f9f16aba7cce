//! Sensor models sampled from the ground-truth world.
//!
//! Noise stream layout (one [`NoiseStream`] per name, all seeded from the
//! scenario seed): `tags`, `flow`, `height`, `detector`, `hexapod.ultrasonic`,
//! `hexapod.imu`, `winch`, `marker`, `channel.uplink`, `channel.downlink`.

use serde::Serialize;

use super::scenario::ScenarioConfig;
use super::world::{surface_below, WorldState, WINCH_DROP};
use crate::geometry::{inverse_transform_point, yaw_rotation, Attitude, Pose, Vec3};
use crate::hexapod::{HexapodSensors, UltrasonicReading};
use crate::localization::{FlowSample, HeightMeasurement, HeightSource, TagDetection, TagMap};
use crate::perception::{down_camera_pose, simulate_detections, Detection2D};
use crate::photometry::{exposure_time, Histogram256};
use crate::rng::NoiseStream;

/// Every noise source of the simulator, each on its own named stream.
#[derive(Debug, Clone)]
pub struct NoiseStreams {
    pub tags: NoiseStream,
    pub flow: NoiseStream,
    pub height: NoiseStream,
    pub detector: NoiseStream,
    pub hexapod_ultrasonic: NoiseStream,
    pub hexapod_imu: NoiseStream,
    pub winch: NoiseStream,
    pub marker: NoiseStream,
}

impl NoiseStreams {
    pub fn new(seed: u64) -> Self {
        Self {
            tags: NoiseStream::new(seed, "tags"),
            flow: NoiseStream::new(seed, "flow"),
            height: NoiseStream::new(seed, "height"),
            detector: NoiseStream::new(seed, "detector"),
            hexapod_ultrasonic: NoiseStream::new(seed, "hexapod.ultrasonic"),
            hexapod_imu: NoiseStream::new(seed, "hexapod.imu"),
            winch: NoiseStream::new(seed, "winch"),
            marker: NoiseStream::new(seed, "marker"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ImuSample {
    pub attitude: Attitude,
    pub gyro: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorBundle {
    pub t: f64,
    pub tags: Vec<TagDetection>,
    pub flow: FlowSample,
    pub depth: HeightMeasurement,
    pub lidar: HeightMeasurement,
    /// The depth camera sees deck structure rather than water.
    pub over_vessel: bool,
    pub imu: ImuSample,
    /// Detector output with the depth sampled at each detection.
    pub detections: Vec<(Detection2D, f64)>,
    /// Hexapod top marker in the UAV body frame, when visible.
    pub hexapod_marker: Option<Vec3>,
    /// Brightness histogram of the downward view.
    pub scene_histogram: Histogram256,
}

/// Camera pose in the world for a given UAV pose.
pub fn camera_world_pose(uav: &Pose) -> Pose {
    uav.compose(&down_camera_pose())
}

/// Probability of detecting a visible tag at exposure `t_exp_applied`.
pub fn tag_detection_probability(world: &WorldState, cfg: &ScenarioConfig, t_exp_applied: f64) -> f64 {
    let t_ideal = exposure_time(cfg.sun_heading, world.uav_true_pose.attitude.yaw, &cfg.exposure_calib);
    cfg.tags.p_base * (-(t_exp_applied - t_ideal).abs() / cfg.tags.tau_us).exp()
}

fn in_dropout(cfg: &ScenarioConfig, t: f64) -> bool {
    cfg.faults.tag_dropouts.iter().any(|w| t >= w[0] && t < w[1])
}

/// Tags inside the camera frustum and range, in map order, with their
/// exact body-frame positions.
pub fn visible_tags(world: &WorldState, cfg: &ScenarioConfig, map: &TagMap) -> Vec<(u32, Vec3)> {
    let cam = down_camera_pose();
    let uav = &world.uav_true_pose;
    map.iter()
        .filter_map(|(id, pose)| {
            let p_body = inverse_transform_point(uav, &pose.position);
            let p_cam = inverse_transform_point(&cam, &p_body);
            if p_cam.norm() > cfg.tags.max_range {
                return None;
            }
            let (u, v) = cfg.camera.project(&p_cam)?;
            cfg.camera.contains(u, v).then_some((id, p_body))
        })
        .collect()
}

/// One camera frame of tag detections. Each visible tag costs one uniform
/// and three normal draws, whether or not it is detected.
pub fn simulate_tag_detections(
    world: &WorldState,
    cfg: &ScenarioConfig,
    map: &TagMap,
    t_exp_applied: f64,
    rng: &mut NoiseStream,
) -> Vec<TagDetection> {
    let p_det = tag_detection_probability(world, cfg, t_exp_applied);
    let blanked = in_dropout(cfg, world.t);
    let sigma = cfg.sensor_noise.tag;
    let mut out = Vec::new();
    for (id, p_body) in visible_tags(world, cfg, map) {
        let hit = rng.bernoulli(p_det);
        let noise = Vec3::new(rng.normal(sigma), rng.normal(sigma), rng.normal(sigma));
        if hit && !blanked {
            out.push(TagDetection { tag_id: id, p_tag_body: p_body + noise, timestamp: world.t });
        }
    }
    out
}

/// Height of the UAV body origin above whatever is below it.
pub fn true_height(world: &WorldState, cfg: &ScenarioConfig) -> (f64, bool) {
    let p = world.uav_true_pose.position;
    let below = surface_below(&p, &world.vessel_pose, cfg);
    (p.z - below.z, below.over_vessel)
}

/// Minimum height at which the flow sensor resolves ground texture (m).
pub const FLOW_MIN_HEIGHT: f64 = 0.3;

pub fn simulate_flow_and_heights(
    world: &WorldState,
    cfg: &ScenarioConfig,
    rng_flow: &mut NoiseStream,
    rng_height: &mut NoiseStream,
) -> (FlowSample, HeightMeasurement, HeightMeasurement) {
    let (h, over_vessel) = true_height(world, cfg);
    let n = &cfg.sensor_noise;

    let rel = if over_vessel { world.uav_true_vel - world.vessel_velocity } else { world.uav_true_vel };
    let v_b = yaw_rotation(world.uav_true_pose.attitude.yaw).transpose() * rel;
    let g = world.uav_gyro;
    let (fx, fy) = (rng_flow.normal(n.flow), rng_flow.normal(n.flow));
    let (omega_x, omega_y) = if h >= FLOW_MIN_HEIGHT {
        (-v_b.y / h + g.x + fx, v_b.x / h + g.y + fy)
    } else {
        (g.x + fx, g.y + fy)
    };
    let flow = FlowSample { omega_x, omega_y, timestamp: world.t };

    let (dd, dl) = (rng_height.bernoulli(n.height_dropout), rng_height.bernoulli(n.height_dropout));
    let (nd, nl) = (rng_height.normal(n.depth), rng_height.normal(n.lidar));
    let depth = HeightMeasurement {
        source: HeightSource::DepthCamera,
        value: (h + nd).max(0.0),
        valid: over_vessel && h <= crate::localization::DEPTH_MAX_RANGE && !dd,
    };
    let lidar = HeightMeasurement {
        source: HeightSource::Lidar2D,
        value: (h + nl).max(0.0),
        valid: h <= crate::localization::LIDAR_MAX_RANGE && !dl,
    };
    (flow, depth, lidar)
}

/// Gaussian-shaped brightness histogram of a 64x48 downward view. Mean
/// brightness tracks how far the applied exposure is from the ideal one.
pub fn scene_histogram(world: &WorldState, cfg: &ScenarioConfig, t_exp_applied: f64) -> Histogram256 {
    let t_ideal = exposure_time(cfg.sun_heading, world.uav_true_pose.attitude.yaw, &cfg.exposure_calib);
    let mean = (128.0 * t_exp_applied / t_ideal.max(1.0)).clamp(8.0, 247.0);
    let sigma = 24.0;
    let weights: Vec<f64> = (0..256).map(|l| (-0.5 * ((l as f64 - mean) / sigma).powi(2)).exp()).collect();
    let total: f64 = weights.iter().sum();
    let pixels = 64.0 * 48.0;
    let mut counts = [0u64; 256];
    for (c, w) in counts.iter_mut().zip(&weights) {
        *c = (pixels * w / total).round() as u64;
    }
    Histogram256::from_counts(counts).expect("gaussian mass is never empty")
}

pub fn sample_sensors(
    world: &WorldState,
    cfg: &ScenarioConfig,
    map: &TagMap,
    t_exp_applied: f64,
    rng: &mut NoiseStreams,
) -> SensorBundle {
    let tags = simulate_tag_detections(world, cfg, map, t_exp_applied, &mut rng.tags);
    let (flow, depth, lidar) = simulate_flow_and_heights(world, cfg, &mut rng.flow, &mut rng.height);
    let (_, over_vessel) = true_height(world, cfg);
    let uav = &world.uav_true_pose;
    let cam = down_camera_pose();

    let target_body = inverse_transform_point(uav, &world.object_pose.position);
    let (h, _) = true_height(world, cfg);
    let detections = simulate_detections(Some(target_body), h, &cfg.detector, &cfg.camera, &cam, &mut rng.detector);

    let sigma = cfg.sensor_noise.marker;
    let noise = Vec3::new(rng.marker.normal(sigma), rng.marker.normal(sigma), rng.marker.normal(sigma));
    let marker_body = inverse_transform_point(uav, &world.hexapod_top(cfg));
    let marker_cam = inverse_transform_point(&cam, &marker_body);
    let visible = matches!(world.hexapod_place, super::world::HexapodPlace::Docked)
        || cfg.camera.project(&marker_cam).is_some_and(|(u, v)| cfg.camera.contains(u, v));
    let hexapod_marker = visible.then_some(marker_body + noise);

    let g = cfg.sensor_noise.gyro;
    let gyro = world.uav_gyro + Vec3::new(rng.flow.normal(g), rng.flow.normal(g), rng.flow.normal(g));

    SensorBundle {
        t: world.t,
        tags,
        flow,
        depth,
        lidar,
        over_vessel,
        imu: ImuSample { attitude: uav.attitude, gyro },
        detections,
        hexapod_marker,
        scene_histogram: scene_histogram(world, cfg, t_exp_applied),
    }
}

/// Front and rear ultrasonics, aggregate load and IMU tilt of the hexapod.
pub fn simulate_hexapod_sensors(
    world: &WorldState,
    cfg: &ScenarioConfig,
    tilt_bias: f64,
    rng_ultra: &mut NoiseStream,
    rng_imu: &mut NoiseStream,
) -> HexapodSensors {
    let hx = &cfg.hexapod;
    let n = &cfg.sensor_noise;
    let pose = &world.hexapod_true_pose;
    let fwd = pose.attitude.rotation() * Vec3::x();
    let obj = world.object_pose.position;
    let mut reading = |sign: f64| {
        let mount = pose.position + fwd * (sign * hx.sensor_offset);
        let d = (obj.x - mount.x).hypot(obj.y - mount.y);
        let dropped = rng_ultra.bernoulli(n.ultrasonic_dropout);
        let noisy = (d + rng_ultra.normal(n.ultrasonic)).max(0.0);
        if dropped || d > hx.ultrasonic_max_range || !world.hexapod_grounded() && !world.object_held() {
            UltrasonicReading::Invalid
        } else {
            UltrasonicReading::valid(noisy)
        }
    };
    let ultra_front = reading(1.0);
    let ultra_rear = reading(-1.0);

    let true_load = match (world.object_held(), world.hexapod_grounded()) {
        (true, true) => hx.grip_load,
        (true, false) => hx.object_mass * super::world::GRAVITY,
        _ => 0.0,
    };
    let load = (true_load + rng_imu.normal(n.load)).max(0.0);
    let base_tilt = if world.hexapod_grounded() { pose.attitude.tilt() } else { 0.0 };
    let tilt = (base_tilt + tilt_bias + rng_imu.normal(n.tilt).abs()).min(std::f64::consts::PI);
    HexapodSensors { ultra_front, ultra_rear, load, tilt }
}

/// Winch feedback: ultrasonic range to the hexapod top and the horizontal
/// marker offset from the winch axis in the body frame.
pub fn simulate_winch_feedback(world: &WorldState, cfg: &ScenarioConfig, rng: &mut NoiseStream) -> (Option<f64>, Option<Vec3>) {
    let n = &cfg.sensor_noise;
    let top = world.hexapod_top(cfg);
    let range = (world.winch_point() - top).norm();
    let dropped = rng.bernoulli(n.winch_ultrasonic_dropout);
    let noisy = (range + rng.normal(n.winch_ultrasonic)).max(0.0);
    let (ox, oy) = (rng.normal(n.marker), rng.normal(n.marker));
    let range = (!dropped && range <= 10.0).then_some(noisy);
    let rel = inverse_transform_point(&world.uav_true_pose, &top) + Vec3::new(0.0, 0.0, WINCH_DROP);
    let offset = Some(Vec3::new(rel.x + ox, rel.y + oy, 0.0));
    (range, offset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::localization::{flow_to_world_velocity, pose_from_tag};
    use crate::simworld::scenario::{SensorNoise, WaveConfig};
    use crate::simworld::world::{world_step, WorldCommand};

    fn quiet() -> ScenarioConfig {
        ScenarioConfig { sensor_noise: SensorNoise::noiseless(), uav_start: [4.0, 0.0, 6.0], ..Default::default() }
    }

    #[test]
    fn noiseless_tags_invert_exactly() {
        let cfg = quiet();
        let map = cfg.tag_map();
        let mut w = WorldState::initial(&cfg);
        w.uav_true_pose.attitude = Attitude::new(0.05, -0.08, 0.7);
        let vis = visible_tags(&w, &cfg, &map);
        assert!(vis.len() >= 2);
        for (id, p_body) in vis {
            let det = TagDetection { tag_id: id, p_tag_body: p_body, timestamp: 0.0 };
            let p = pose_from_tag(&det, &map, &w.uav_true_pose.attitude).unwrap();
            assert!((p - w.uav_true_pose.position).norm() < 1e-9);
        }
    }

    #[test]
    fn tag_behind_camera_not_detected() {
        let cfg = ScenarioConfig { tags: crate::simworld::scenario::TagModel { p_base: 1.0, ..Default::default() }, ..quiet() };
        let mut map = TagMap::new();
        map.insert(99, Pose::from_position(Vec3::new(4.0, 0.0, 9.0)));
        let w = WorldState::initial(&cfg);
        let mut rng = NoiseStream::new(1, "t");
        for _ in 0..100 {
            assert!(simulate_tag_detections(&w, &cfg, &map, 550.0, &mut rng).is_empty());
        }
    }

    #[test]
    fn perfect_exposure_emits_exact_positions() {
        let cfg = ScenarioConfig { tags: crate::simworld::scenario::TagModel { p_base: 1.0, ..Default::default() }, ..quiet() };
        let map = cfg.tag_map();
        let w = WorldState::initial(&cfg);
        let t_ideal = exposure_time(cfg.sun_heading, w.uav_true_pose.attitude.yaw, &cfg.exposure_calib);
        let dets = simulate_tag_detections(&w, &cfg, &map, t_ideal, &mut NoiseStream::new(3, "t"));
        let vis = visible_tags(&w, &cfg, &map);
        assert_eq!(dets.len(), vis.len());
        for (d, (id, p)) in dets.iter().zip(vis) {
            assert_eq!(d.tag_id, id);
            assert_eq!(d.p_tag_body, p);
        }
    }

    #[test]
    fn hover_gives_zero_flow() {
        let cfg = quiet();
        let w = WorldState::initial(&cfg);
        let (flow, _, _) = simulate_flow_and_heights(&w, &cfg, &mut NoiseStream::new(1, "f"), &mut NoiseStream::new(1, "h"));
        assert_eq!((flow.omega_x, flow.omega_y), (0.0, 0.0));
    }

    #[test]
    fn high_over_water_uses_lidar_only() {
        let cfg = ScenarioConfig { uav_start: [0.0, -8.0, 12.0], ..quiet() };
        let w = WorldState::initial(&cfg);
        let (_, d, l) = simulate_flow_and_heights(&w, &cfg, &mut NoiseStream::new(1, "f"), &mut NoiseStream::new(1, "h"));
        assert!(!d.valid);
        assert!(l.valid);
        assert!((l.value - 12.0).abs() < 1e-12);
    }

    #[test]
    fn flow_model_inverts_in_closed_loop() {
        let cfg = ScenarioConfig {
            wave: WaveConfig { heave_amp: 0.0, roll_amp: 0.0, pitch_amp: 0.0, period: 5.0 },
            uav: crate::simworld::scenario::UavPlant { heading: 0.9, ..Default::default() },
            ..quiet()
        };
        let mut w = WorldState::initial(&cfg);
        let mut rf = NoiseStream::new(1, "f");
        let mut rh = NoiseStream::new(1, "h");
        for k in 0..300 {
            let sp = Vec3::new((k as f64 * 0.02).cos(), (k as f64 * 0.05).sin(), 0.0);
            w = world_step(&w, &cfg, &WorldCommand { uav_velocity: sp, ..WorldCommand::idle(crate::hexapod::WinchState::docked()) });
            let (flow, _, _) = simulate_flow_and_heights(&w, &cfg, &mut rf, &mut rh);
            let (h, _) = true_height(&w, &cfg);
            let g = w.uav_gyro;
            let v = flow_to_world_velocity(&flow, (g.x, g.y), h, &w.uav_true_pose.attitude).unwrap();
            let truth = Vec3::new(w.uav_true_vel.x, w.uav_true_vel.y, 0.0);
            assert!((v - truth).norm() < 1e-9, "tick {k}: {v:?} vs {truth:?}");
        }
    }

    #[test]
    fn detection_rate_matches_exposure_model() {
        let cfg = ScenarioConfig { tag_layout: vec![crate::localization::TagEntry { id: 0, position: Vec3::new(4.0, 0.0, 0.0), attitude: Attitude::IDENTITY }], ..quiet() };
        let map = cfg.tag_map();
        let w = WorldState::initial(&cfg);
        let t_exp = 700.0;
        let p = tag_detection_probability(&w, &cfg, t_exp);
        let mut rng = NoiseStream::new(11, "tags");
        let n = 10_000;
        let hits: usize = (0..n).map(|_| simulate_tag_detections(&w, &cfg, &map, t_exp, &mut rng).len()).sum();
        let mean = n as f64 * p;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((hits as f64 - mean).abs() <= 3.0 * sd, "{hits} vs {mean} +- {sd}");
    }

    #[test]
    fn dropout_window_blanks_tags() {
        let cfg = ScenarioConfig { faults: crate::simworld::scenario::Faults { tag_dropouts: vec![[0.0, 1.0]], ..Default::default() }, ..quiet() };
        let map = cfg.tag_map();
        let w = WorldState::initial(&cfg);
        assert!(simulate_tag_detections(&w, &cfg, &map, 550.0, &mut NoiseStream::new(1, "t")).is_empty());
    }
}
