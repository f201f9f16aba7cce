//! Closed-loop mission driver: the UAV and hexapod agents, the two radio
//! channels between them, the world, the run log and its metrics.
//!
//! Tick pipeline: world step, sensors, channel delivery, agent steps,
//! commands. The world and the winch controller run every `dt`; sensors,
//! agents, channels and the log run every `planner_period_s`.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comms::{self, Channel, Message, SYS_HEXAPOD, SYS_UAV};
use crate::geometry::{transform_point, yaw_rotation, Pose, Vec3};
use crate::hexapod::{grasp_confirmed, winch_step, GraspState, HexapodSensors, WinchState};
use crate::localization::{
    ekf_predict, ekf_update_position, ekf_update_velocity, flow_to_world_velocity, fuse_height, fuse_tag_fixes,
    manager_step, EkfState, LocalizationManagerState, Modality, TagMap,
};
use crate::perception::{down_camera_pose, project_to_body, Detection3D, Tracker};
use crate::photometry::exposure_time;
use crate::planning::{
    choose_primitive, mission_step, predicted_target, AffordanceInputs, Altitude, CommandOpcode, HexapodReport,
    is_legal_transition, LinkStatus, MissionContext, MissionStage, Observations, PlanningError, Primitive, WinchMode,
};
use crate::simworld::scenario::ScenarioConfig;
use crate::simworld::sensors::{
    sample_sensors, simulate_hexapod_sensors, simulate_winch_feedback, NoiseStreams, SensorBundle, FLOW_MIN_HEIGHT,
};
use crate::simworld::world::{surface_below, world_step, GripAction, WorldCommand, WorldState, WINCH_DROP};

pub const RUNLOG_FORMAT: &str = "marsupial-runlog/1";

/// Feet below this clearance count as ground contact (m).
const CONTACT_CLEARANCE: f64 = 0.02;

#[derive(Debug, Error)]
pub enum MissionError {
    #[error(transparent)]
    Planning(#[from] PlanningError),
    #[error("log write failed: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Complete,
    Abort,
    Timeout,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Complete => 0,
            Outcome::Abort => 2,
            Outcome::Timeout => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLogHeader {
    pub format: String,
    pub scenario: String,
    pub seed: u64,
    pub planner_period_s: f64,
    /// Bound on the estimated-pose speed used by the continuity check (m/s).
    pub v_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLogRecord {
    pub t: f64,
    pub stage: String,
    pub modality: String,
    /// Localization manager output.
    pub est: [f64; 3],
    /// EKF position used for control.
    pub fused: [f64; 3],
    pub truth: [f64; 3],
    /// `|fused - truth|` (m).
    pub err: f64,
    pub switched: bool,
    pub link: String,
    pub events: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RunLogLine {
    Header(RunLogHeader),
    Tick(RunLogRecord),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub scenario: String,
    pub seed: u64,
    pub mission_outcome: Outcome,
    pub total_time_s: f64,
    pub mean_position_error_m: f64,
    pub max_position_error_m: f64,
    pub modality_switch_count: u32,
    pub retry_count: u32,
    pub frames_sent: u64,
    pub frames_dropped: u64,
    pub planner_ticks: u64,
    pub stage_sequence: Vec<MissionStage>,
}

fn arr(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn encode_or_skip(msg: &Message, seq: &mut u8, sys: u8, out: &mut Vec<Vec<u8>>) {
    if let Ok(frame) = comms::encode(msg, *seq, sys) {
        out.push(frame);
        *seq = seq.wrapping_add(1);
    }
}

/// Messages carried by a batch of delivered frames, in arrival order.
fn decode_all(frames: &[Vec<u8>]) -> Vec<Message> {
    frames
        .iter()
        .flat_map(|f| comms::decode_stream(f))
        .filter_map(|r| r.ok().map(|d| d.message))
        .collect()
}

/// UAV-side output of one planner tick.
#[derive(Debug, Clone)]
pub struct UavTick {
    pub frames: Vec<Vec<u8>>,
    pub velocity_setpoint: Vec3,
    pub winch_mode: WinchMode,
    pub winch_target_length: f64,
    pub est: Vec3,
    pub fused: Vec3,
    pub modality: Modality,
    pub switched: bool,
    pub link: LinkStatus,
    pub events: Vec<String>,
}

/// Flight computer: localization, perception, mission planning, winch and
/// the central end of the radio link.
#[derive(Debug, Clone)]
pub struct UavAgent {
    pub manager: LocalizationManagerState,
    pub ekf: EkfState,
    pub tracker: Tracker,
    pub ctx: MissionContext,
    /// Exposure applied to the next camera frame (us).
    pub exposure_us: f64,
    pub stage_sequence: Vec<MissionStage>,
    pub acks: u64,
    last_altitude: Option<f64>,
    report: Option<HexapodReport>,
    hexapod_clearance: f64,
    last_report_tick: u64,
    seq: u8,
    winch_target_length: f64,
}

impl UavAgent {
    pub fn new(cfg: &ScenarioConfig) -> Self {
        let start = Vec3::from(cfg.uav_start);
        Self {
            manager: LocalizationManagerState::new(start),
            ekf: EkfState::new(start, Vec3::zeros(), cfg.ekf.tag_sigma.powi(2), 0.01),
            tracker: Tracker::new(cfg.tracker),
            ctx: MissionContext::default(),
            exposure_us: cfg
                .fixed_exposure_us
                .unwrap_or_else(|| exposure_time(cfg.sun_heading, cfg.uav.heading, &cfg.exposure_calib)),
            stage_sequence: Vec::new(),
            acks: 0,
            last_altitude: None,
            report: None,
            hexapod_clearance: f64::INFINITY,
            last_report_tick: 0,
            seq: 0,
            winch_target_length: 0.0,
        }
    }

    /// One planner tick. `winch_docked` is the winch controller's own dock
    /// detection.
    pub fn step(
        &mut self,
        cfg: &ScenarioConfig,
        map: &TagMap,
        sensors: &SensorBundle,
        delivered: &[Vec<u8>],
        winch_docked: bool,
        tick: u64,
    ) -> Result<UavTick, PlanningError> {
        let dt = cfg.planner_period_s;
        let mut events = Vec::new();

        for m in decode_all(delivered) {
            match m {
                Message::StateReport { pose, grasp_state, load, tilt } => {
                    if let Some(gs) = GraspState::from_code(grasp_state) {
                        self.report =
                            Some(HexapodReport { grasp_state: gs, load: f64::from(load), tilt: f64::from(tilt) });
                        self.hexapod_clearance = f64::from(pose[2]);
                        self.last_report_tick = tick;
                    }
                }
                Message::Ack { .. } => self.acks += 1,
                _ => {}
            }
        }
        let link = comms::link_supervisor(tick.saturating_sub(self.last_report_tick), cfg.link_timeout_ticks);

        let att = sensors.imu.attitude;
        self.exposure_us =
            cfg.fixed_exposure_us.unwrap_or_else(|| exposure_time(cfg.sun_heading, att.yaw, &cfg.exposure_calib));

        let height = fuse_height(Some(&sensors.depth), Some(&sensors.lidar), sensors.over_vessel).ok();
        let surface = if sensors.over_vessel { cfg.vessel.deck_height } else { 0.0 };
        let altitude = height.map(|h| h.value + surface);
        let vz = match (altitude, self.last_altitude) {
            (Some(a), Some(b)) => ((a - b) / dt).clamp(-cfg.uav.max_climb, cfg.uav.max_climb),
            _ => 0.0,
        };
        self.last_altitude = altitude;
        let gyro = (sensors.imu.gyro.x, sensors.imu.gyro.y);
        let flow_velocity = height.filter(|h| h.value >= FLOW_MIN_HEIGHT).and_then(|h| {
            flow_to_world_velocity(&sensors.flow, gyro, h.value, &att).ok().map(|v| Vec3::new(v.x, v.y, vz))
        });
        let tag_fix = fuse_tag_fixes(&sensors.tags, map, &att);

        let out = manager_step(&mut self.manager, &cfg.manager, tag_fix, flow_velocity, dt, self.ctx.stage);
        if out.switched {
            events.push(format!("switch:{}", out.modality.label()));
        }

        let mut ekf = ekf_predict(&self.ekf, dt, cfg.ekf.q_accel).expect("planner period is validated positive");
        if let Some(v) = flow_velocity {
            ekf = ekf_update_velocity(&ekf, &v, cfg.ekf.flow_sigma.powi(2)).unwrap_or(ekf);
        }
        if out.modality == Modality::TagRelative && tag_fix.is_some() {
            ekf = ekf_update_position(&ekf, &out.position, cfg.ekf.tag_sigma.powi(2)).unwrap_or(ekf);
        }
        self.ekf = ekf;
        let fused = self.ekf.position();
        let body_pose = Pose::new(fused, att);

        let cam = down_camera_pose();
        let dets: Vec<Detection3D> = sensors
            .detections
            .iter()
            .filter_map(|(d, depth)| project_to_body(d, *depth, &cfg.camera, &cam).ok())
            .collect();
        self.tracker.step(&dets);
        let target = self
            .tracker
            .confirmed()
            .filter(|t| t.time_since_update == 0)
            .max_by_key(|t| (t.hits, std::cmp::Reverse(t.id)))
            .map(|t| (t.id, transform_point(&body_pose, &t.position())));
        let hexapod_world = sensors.hexapod_marker.map(|m| transform_point(&body_pose, &m));

        let obs = Observations {
            t: sensors.t,
            uav_position: fused,
            uav_velocity: self.ekf.velocity(),
            height_over_surface: height.map(|h| h.value),
            target,
            hexapod_position: hexapod_world,
            hexapod: self.report,
            link,
            docked: winch_docked,
            hexapod_grounded: self.hexapod_clearance < CONTACT_CLEARANCE,
        };
        let was_paused = self.ctx.paused;
        let step = mission_step(&mut self.ctx, &obs, &cfg.planner)?;
        if let Some(tr) = step.transition {
            events.push(format!("stage:{}->{}", tr.from.label(), tr.to.label()));
            if tr.to == MissionStage::RetryPosture {
                events.push(format!("retry:{}", self.ctx.retry_count));
            }
            self.stage_sequence.push(tr.to);
        }
        if self.ctx.paused != was_paused {
            events.push(if self.ctx.paused { "link:lost" } else { "link:restored" }.into());
        }

        let c = step.commands;
        let mut horiz = Vec3::new(c.uav.x - fused.x, c.uav.y - fused.y, 0.0) * cfg.uav.k_pos;
        if horiz.norm() > cfg.uav.max_speed {
            horiz *= cfg.uav.max_speed / horiz.norm();
        }
        let vz_cmd = match c.uav.altitude {
            Altitude::World(z) => cfg.uav.k_alt * (z - fused.z),
            Altitude::AboveSurface(h) => height.map_or(0.0, |m| cfg.uav.k_alt * (h - m.value)),
        }
        .clamp(-cfg.uav.max_climb, cfg.uav.max_climb);

        if let Some(h) = height {
            self.winch_target_length =
                (h.value - WINCH_DROP - cfg.hexapod.body_height + cfg.hexapod.deploy_slack).max(0.0);
        }

        let mut frames = Vec::new();
        encode_or_skip(&Message::Heartbeat { stage: self.ctx.stage.code() }, &mut self.seq, SYS_UAV, &mut frames);
        if let Some(op) = c.hexapod {
            encode_or_skip(&Message::Command { opcode: op as u8 }, &mut self.seq, SYS_UAV, &mut frames);
        }
        if c.send_target_location {
            if let (Some(id), Some(tp), Some(hp)) = (self.ctx.target_track_id, self.ctx.target_position, hexapod_world) {
                let rel = tp - hp;
                let msg = Message::TargetLocation {
                    p_rel: [rel.x as f32, rel.y as f32, rel.z as f32],
                    track_id: id as u32,
                };
                encode_or_skip(&msg, &mut self.seq, SYS_UAV, &mut frames);
            }
        }

        Ok(UavTick {
            frames,
            velocity_setpoint: Vec3::new(horiz.x, horiz.y, vz_cmd),
            winch_mode: c.winch,
            winch_target_length: self.winch_target_length,
            est: out.position,
            fused,
            modality: out.modality,
            switched: out.switched,
            link,
            events,
        })
    }
}

/// Hexapod-side output of one planner tick.
#[derive(Debug, Clone)]
pub struct HexapodTick {
    pub frames: Vec<Vec<u8>>,
    pub primitive: Primitive,
    pub grip: GripAction,
    pub link: LinkStatus,
    pub events: Vec<String>,
}

/// Hexapod controller: primitive selection, grasp state machine and the
/// StateReport end of the link.
#[derive(Debug, Clone)]
pub struct HexapodAgent {
    pub grasp_state: GraspState,
    /// Target in the hexapod body frame, dead-reckoned between updates.
    pub target_body: Option<(f64, f64)>,
    mode: Option<CommandOpcode>,
    uav_stage: Option<MissionStage>,
    closing_since: f64,
    last_heartbeat_tick: u64,
    last_primitive: Primitive,
    last_yaw: f64,
    seq: u8,
}

impl Default for HexapodAgent {
    fn default() -> Self {
        Self {
            grasp_state: GraspState::Searching,
            target_body: None,
            mode: None,
            uav_stage: None,
            closing_since: 0.0,
            last_heartbeat_tick: 0,
            last_primitive: Primitive::Hold,
            last_yaw: 0.0,
            seq: 0,
        }
    }
}

impl HexapodAgent {
    /// `pose` is the hexapod's odometry pose and `clearance` its foot
    /// clearance above the surface below (0 in contact).
    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &mut self,
        cfg: &ScenarioConfig,
        delivered: &[Vec<u8>],
        sensors: &HexapodSensors,
        pose: &Pose,
        clearance: f64,
        t: f64,
        tick: u64,
    ) -> HexapodTick {
        let mut frames = Vec::new();
        let mut events = Vec::new();
        let grounded = clearance < CONTACT_CLEARANCE;

        for m in decode_all(delivered) {
            match m {
                Message::Heartbeat { stage } => {
                    self.last_heartbeat_tick = tick;
                    self.uav_stage = MissionStage::from_code(stage);
                }
                Message::Command { opcode } => {
                    self.mode = CommandOpcode::from_u8(opcode);
                    let ack = Message::Ack { seq_acked: self.seq, ok: u8::from(self.mode.is_some()) };
                    encode_or_skip(&ack, &mut self.seq, SYS_HEXAPOD, &mut frames);
                }
                Message::TargetLocation { p_rel, .. } => {
                    let world = Vec3::new(f64::from(p_rel[0]), f64::from(p_rel[1]), f64::from(p_rel[2]));
                    let body = yaw_rotation(self.last_yaw).transpose() * world;
                    self.target_body = Some((body.x, body.y));
                }
                _ => {}
            }
        }
        if let Some(tb) = self.target_body {
            self.target_body = Some(predicted_target(self.last_primitive, tb, &cfg.primitives));
        }
        let link = comms::link_supervisor(tick.saturating_sub(self.last_heartbeat_tick), cfg.link_timeout_ticks);

        let mut grip = GripAction::None;
        let release = self.uav_stage == Some(MissionStage::RetryPosture) || self.mode == Some(CommandOpcode::Abort);
        if release && self.grasp_state != GraspState::Searching {
            if matches!(self.grasp_state, GraspState::Closing | GraspState::Holding) {
                grip = GripAction::Open;
                events.push("grip:open".into());
            }
            self.grasp_state = GraspState::Searching;
        }
        if self.grasp_state == GraspState::Holding && !grasp_confirmed(sensors.load, !grounded, &cfg.planner.loads) {
            self.grasp_state = GraspState::Lost;
            events.push("grasp:lost".into());
        }
        if self.grasp_state == GraspState::Closing && t - self.closing_since >= cfg.hexapod.close_time_s - 1e-9 {
            grip = GripAction::Close;
            self.grasp_state = GraspState::Holding;
            events.push("grip:close".into());
        }

        let mut primitive = Primitive::Hold;
        if link == LinkStatus::Healthy && grounded && !release {
            let centered = sensors.centered(cfg.hexapod.grasp_range);
            let approaching = matches!(self.grasp_state, GraspState::Searching | GraspState::Centered);
            match self.mode {
                Some(CommandOpcode::Grasp) if approaching && (centered || self.grasp_state == GraspState::Centered) => {
                    self.grasp_state = GraspState::Closing;
                    self.closing_since = t;
                    events.push("grip:closing".into());
                }
                Some(CommandOpcode::Approach | CommandOpcode::Grasp) if approaching => {
                    let inputs = AffordanceInputs { centered, stable: sensors.stable(cfg.planner.tilt_limit) };
                    if let Ok(p) = choose_primitive(self.target_body, inputs, &cfg.primitives) {
                        if p == Primitive::Grasp {
                            self.grasp_state = GraspState::Centered;
                        } else {
                            self.grasp_state = GraspState::Searching;
                            primitive = p;
                        }
                    }
                }
                _ => {}
            }
        }
        self.last_primitive = if grounded { primitive } else { Primitive::Hold };
        self.last_yaw = pose.attitude.yaw;

        let p = pose.position;
        let a = pose.attitude;
        let report = Message::StateReport {
            pose: [p.x as f32, p.y as f32, clearance as f32, a.roll as f32, a.pitch as f32, a.yaw as f32],
            grasp_state: self.grasp_state.code(),
            load: sensors.load as f32,
            tilt: sensors.tilt as f32,
        };
        encode_or_skip(&report, &mut self.seq, SYS_HEXAPOD, &mut frames);
        HexapodTick { frames, primitive, grip, link, events }
    }
}

/// Foot clearance of the hexapod above whatever is below it. Only a
/// grounded hexapod reports contact.
pub fn foot_clearance(world: &WorldState, cfg: &ScenarioConfig) -> f64 {
    if world.hexapod_grounded() {
        return 0.0;
    }
    let feet = transform_point(&world.hexapod_true_pose, &Vec3::new(0.0, 0.0, -cfg.hexapod.body_height / 2.0));
    (feet.z - surface_below(&feet, &world.vessel_pose, cfg).z).max(CONTACT_CLEARANCE)
}

/// Whole closed-loop system: world, both agents and both link directions.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub cfg: ScenarioConfig,
    pub world: WorldState,
    pub winch: WinchState,
    pub uav: UavAgent,
    pub hexapod: HexapodAgent,
    map: TagMap,
    streams: NoiseStreams,
    uplink: Channel,
    downlink: Channel,
    to_hexapod: Vec<Vec<u8>>,
    to_uav: Vec<Vec<u8>>,
    velocity_setpoint: Vec3,
    primitive: Option<Primitive>,
    grip: GripAction,
    winch_mode: WinchMode,
    winch_target: f64,
    planner_tick: u64,
    winch_up_since: Option<f64>,
    slip_done: bool,
    outcome: Option<Outcome>,
}

impl Simulation {
    pub fn new(cfg: ScenarioConfig) -> Self {
        let channel = channel_model(&cfg);
        Self {
            world: WorldState::initial(&cfg),
            winch: WinchState::docked(),
            uav: UavAgent::new(&cfg),
            hexapod: HexapodAgent::default(),
            map: cfg.tag_map(),
            streams: NoiseStreams::new(cfg.seed),
            uplink: Channel::new(channel, "uplink"),
            downlink: Channel::new(channel, "downlink"),
            to_hexapod: Vec::new(),
            to_uav: Vec::new(),
            velocity_setpoint: Vec3::zeros(),
            primitive: None,
            grip: GripAction::None,
            winch_mode: WinchMode::Hold,
            winch_target: 0.0,
            planner_tick: 0,
            winch_up_since: None,
            slip_done: false,
            outcome: None,
            cfg,
        }
    }

    pub fn outcome(&self) -> Option<Outcome> {
        self.outcome
    }

    pub fn frames_sent(&self) -> u64 {
        self.uplink.sent() + self.downlink.sent()
    }

    pub fn frames_dropped(&self) -> u64 {
        self.uplink.dropped() + self.downlink.dropped()
    }

    pub fn planner_ticks(&self) -> u64 {
        self.planner_tick
    }

    pub fn header(&self) -> RunLogHeader {
        RunLogHeader {
            format: RUNLOG_FORMAT.into(),
            scenario: self.cfg.name.clone(),
            seed: self.cfg.seed,
            planner_period_s: self.cfg.planner_period_s,
            v_max: self.cfg.manager.max_speed,
        }
    }

    fn advance_world(&mut self) {
        let cfg = &self.cfg;
        for _ in 0..cfg.planner_divider() {
            let (range, offset) = simulate_winch_feedback(&self.world, cfg, &mut self.streams.winch);
            let was_docked = self.winch.docked;
            self.winch = winch_step(&self.winch, &cfg.winch, self.winch_target, offset, range, cfg.dt, self.winch_mode);
            if self.winch.docked && !was_docked {
                self.winch.rate = 0.0;
            }
            let cmd = WorldCommand {
                uav_velocity: self.velocity_setpoint,
                primitive: self.primitive,
                winch: self.winch,
                grip: self.grip,
            };
            self.world = world_step(&self.world, cfg, &cmd);
            self.grip = GripAction::None;
        }
    }

    /// Runs one planner tick (the first one does not advance the world) and
    /// returns its log record. Returns `None` once the run has ended.
    pub fn tick(&mut self) -> Result<Option<RunLogRecord>, MissionError> {
        if self.outcome.is_some() {
            return Ok(None);
        }
        if self.planner_tick > 0 {
            self.advance_world();
        }
        let k = self.planner_tick;
        let t = self.world.t;
        let was_docked = self.winch.docked;

        let sensors = sample_sensors(&self.world, &self.cfg, &self.map, self.uav.exposure_us, &mut self.streams);
        let grounded = self.world.hexapod_grounded();
        let gripping = matches!(self.hexapod.grasp_state, GraspState::Closing | GraspState::Holding);
        let tilt_bias = if gripping && grounded { self.cfg.faults.tilt_bias_in_grasp } else { 0.0 };
        let hex_sensors = simulate_hexapod_sensors(
            &self.world,
            &self.cfg,
            tilt_bias,
            &mut self.streams.hexapod_ultrasonic,
            &mut self.streams.hexapod_imu,
        );

        let to_hex = std::mem::take(&mut self.to_hexapod);
        let to_uav = std::mem::take(&mut self.to_uav);
        let clearance = foot_clearance(&self.world, &self.cfg);
        let hex = self.hexapod.step(&self.cfg, &to_hex, &hex_sensors, &self.world.hexapod_true_pose, clearance, t, k);
        let uav = self.uav.step(&self.cfg, &self.map, &sensors, &to_uav, self.winch.docked, k)?;
        self.to_hexapod = self.uplink.step(uav.frames.clone(), k);
        self.to_uav = self.downlink.step(hex.frames.clone(), k);

        let mut events = uav.events.clone();
        events.extend(hex.events.iter().cloned());

        let stage = self.uav.ctx.stage;
        if stage == MissionStage::WinchUp && self.winch_up_since.is_none() {
            self.winch_up_since = Some(t);
        }
        self.grip = hex.grip;
        if let (Some(after), Some(since)) = (self.cfg.faults.slip_after_winch_s, self.winch_up_since) {
            if !self.slip_done && t - since >= after && self.world.object_held() {
                self.grip = GripAction::Slip;
                self.slip_done = true;
                events.push("fault:slip".into());
            }
        }
        if self.winch.docked && !was_docked {
            events.push("dock".into());
        }

        self.velocity_setpoint = uav.velocity_setpoint;
        self.primitive = Some(hex.primitive);
        self.winch_mode = uav.winch_mode;
        self.winch_target = uav.winch_target_length;
        self.planner_tick += 1;

        self.outcome = match stage {
            MissionStage::Complete => Some(Outcome::Complete),
            MissionStage::Abort => Some(Outcome::Abort),
            _ if t + self.cfg.planner_period_s > self.cfg.duration_s + 1e-9 => Some(Outcome::Timeout),
            _ => None,
        };

        let truth = self.world.uav_true_pose.position;
        Ok(Some(RunLogRecord {
            t,
            stage: stage.label().into(),
            modality: uav.modality.label().into(),
            est: arr(&uav.est),
            fused: arr(&uav.fused),
            truth: arr(&truth),
            err: (uav.fused - truth).norm(),
            switched: uav.switched,
            link: match uav.link {
                LinkStatus::Healthy => "Healthy".into(),
                LinkStatus::Lost => "Lost".into(),
            },
            events,
        }))
    }
}

/// Both link directions draw from the scenario seed mixed with the
/// channel's own seed.
fn channel_model(cfg: &ScenarioConfig) -> comms::ChannelModel {
    comms::ChannelModel { seed: cfg.seed ^ cfg.channel.seed, ..cfg.channel }
}

/// Runs a scenario to completion, streaming the RunLog to `log` when given.
pub fn run_mission(cfg: &ScenarioConfig, mut log: Option<&mut dyn Write>) -> Result<MetricsSummary, MissionError> {
    let mut sim = Simulation::new(cfg.clone());
    if let Some(w) = log.as_deref_mut() {
        let line = serde_json::to_string(&RunLogLine::Header(sim.header())).expect("header serializes");
        writeln!(w, "{line}")?;
    }
    let (mut sum, mut max, mut n) = (0.0, 0.0f64, 0u64);
    while let Some(rec) = sim.tick()? {
        sum += rec.err;
        max = max.max(rec.err);
        n += 1;
        if let Some(w) = log.as_deref_mut() {
            let line = serde_json::to_string(&RunLogLine::Tick(rec)).expect("record serializes");
            writeln!(w, "{line}")?;
        }
    }
    Ok(MetricsSummary {
        scenario: cfg.name.clone(),
        seed: cfg.seed,
        mission_outcome: sim.outcome().expect("loop ends with an outcome"),
        total_time_s: sim.world.t,
        mean_position_error_m: if n > 0 { sum / n as f64 } else { 0.0 },
        max_position_error_m: max,
        modality_switch_count: sim.uav.manager.switch_count,
        retry_count: sim.uav.ctx.retry_count,
        frames_sent: sim.frames_sent(),
        frames_dropped: sim.frames_dropped(),
        planner_ticks: sim.planner_ticks(),
        stage_sequence: sim.uav.stage_sequence.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    Format,
    MonotoneTime,
    IllegalTransition,
    Continuity,
    Label,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {kind:?}: {message}")]
pub struct Violation {
    pub line: usize,
    pub kind: ViolationKind,
    pub message: String,
}

/// Re-checks a RunLog: header first, strictly increasing time, legal stage
/// edges, known labels and the per-tick estimated-pose continuity bound.
/// Returns the number of tick records.
pub fn check_runlog(text: &str) -> Result<usize, Violation> {
    let fail = |line: usize, kind, message: String| Err(Violation { line, kind, message });
    let mut header: Option<RunLogHeader> = None;
    let mut prev: Option<RunLogRecord> = None;
    let mut count = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let parsed: RunLogLine = match serde_json::from_str(raw) {
            Ok(p) => p,
            Err(e) => return fail(line, ViolationKind::Format, e.to_string()),
        };
        let rec = match (parsed, &header) {
            (RunLogLine::Header(h), None) => {
                header = Some(h);
                continue;
            }
            (RunLogLine::Header(_), Some(_)) => return fail(line, ViolationKind::Format, "second header".into()),
            (RunLogLine::Tick(_), None) => return fail(line, ViolationKind::Format, "missing header".into()),
            (RunLogLine::Tick(r), Some(_)) => r,
        };
        let h = header.as_ref().expect("matched above");
        let Some(stage) = MissionStage::from_label(&rec.stage) else {
            return fail(line, ViolationKind::Label, format!("unknown stage {:?}", rec.stage));
        };
        if !matches!(rec.modality.as_str(), "TagRelative" | "OpticalFlow") {
            return fail(line, ViolationKind::Label, format!("unknown modality {:?}", rec.modality));
        }
        if let Some(p) = &prev {
            if rec.t.is_nan() || rec.t <= p.t {
                return fail(line, ViolationKind::MonotoneTime, format!("t {} after {}", rec.t, p.t));
            }
            let from = MissionStage::from_label(&p.stage).expect("checked on its own line");
            if from != stage && !is_legal_transition(from, stage) {
                return fail(
                    line,
                    ViolationKind::IllegalTransition,
                    format!("illegal edge {}->{}", from.label(), stage.label()),
                );
            }
            let jump = (Vec3::from(rec.est) - Vec3::from(p.est)).norm();
            let bound = h.v_max * h.planner_period_s + 1e-9;
            if jump > bound {
                return fail(line, ViolationKind::Continuity, format!("continuity: jump {jump} exceeds {bound}"));
            }
        }
        prev = Some(rec);
        count += 1;
    }
    if header.is_none() {
        return fail(0, ViolationKind::Format, "empty log".into());
    }
    Ok(count)
}
