//! Mission stage machine for the UAV-hexapod retrieval sequence and the
//! goal-proximity x affordance action selector used by the hexapod.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;
use crate::hexapod::{grasp_confirmed, stability_check, GraspState, LoadThresholds};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanningError {
    #[error("candidate set is empty")]
    EmptyCandidateSet,
    #[error("no target position known")]
    NoTarget,
    #[error("illegal stage transition {from:?} -> {to:?}")]
    IllegalTransition { from: MissionStage, to: MissionStage },
    #[error("mission already finished in {0:?}")]
    Finished(MissionStage),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MissionStage {
    Idle,
    Takeoff,
    Search,
    NavigateToTarget,
    DeployHexapod,
    HexapodApproach,
    Grasp,
    RetryPosture,
    WinchUp,
    NavigateWaypoint,
    ReturnToBase,
    Land,
    Complete,
    Abort,
}

impl MissionStage {
    pub const ALL: [MissionStage; 14] = [
        MissionStage::Idle,
        MissionStage::Takeoff,
        MissionStage::Search,
        MissionStage::NavigateToTarget,
        MissionStage::DeployHexapod,
        MissionStage::HexapodApproach,
        MissionStage::Grasp,
        MissionStage::RetryPosture,
        MissionStage::WinchUp,
        MissionStage::NavigateWaypoint,
        MissionStage::ReturnToBase,
        MissionStage::Land,
        MissionStage::Complete,
        MissionStage::Abort,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(usize::from(code)).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            MissionStage::Idle => "Idle",
            MissionStage::Takeoff => "Takeoff",
            MissionStage::Search => "Search",
            MissionStage::NavigateToTarget => "NavigateToTarget",
            MissionStage::DeployHexapod => "DeployHexapod",
            MissionStage::HexapodApproach => "HexapodApproach",
            MissionStage::Grasp => "Grasp",
            MissionStage::RetryPosture => "RetryPosture",
            MissionStage::WinchUp => "WinchUp",
            MissionStage::NavigateWaypoint => "NavigateWaypoint",
            MissionStage::ReturnToBase => "ReturnToBase",
            MissionStage::Land => "Land",
            MissionStage::Complete => "Complete",
            MissionStage::Abort => "Abort",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|st| st.label() == s)
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, MissionStage::Complete | MissionStage::Abort)
    }

    /// Stages during which the UAV localizes on optical flow regardless of tags.
    pub fn is_retrieval_phase(self) -> bool {
        matches!(
            self,
            MissionStage::DeployHexapod
                | MissionStage::HexapodApproach
                | MissionStage::Grasp
                | MissionStage::RetryPosture
                | MissionStage::WinchUp
        )
    }

    /// Stages in which the hexapod is off the UAV and depends on the RF link.
    pub fn hexapod_deployed(self) -> bool {
        self.is_retrieval_phase()
    }
}

/// The complete legal edge set.
pub fn is_legal_transition(from: MissionStage, to: MissionStage) -> bool {
    use MissionStage::*;
    matches!(
        (from, to),
        (Idle, Takeoff)
            | (Takeoff, Search)
            | (Search, NavigateToTarget)
            | (NavigateToTarget, DeployHexapod)
            | (DeployHexapod, HexapodApproach)
            | (HexapodApproach, Grasp)
            | (HexapodApproach, RetryPosture)
            | (Grasp, WinchUp)
            | (Grasp, RetryPosture)
            | (RetryPosture, HexapodApproach)
            | (RetryPosture, Abort)
            | (WinchUp, NavigateWaypoint)
            | (WinchUp, RetryPosture)
            | (NavigateWaypoint, ReturnToBase)
            | (ReturnToBase, Land)
            | (Land, Complete)
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionCandidate {
    pub id: usize,
    pub name: &'static str,
    pub goal_weight: f64,
    pub affordance: f64,
}

impl ActionCandidate {
    pub fn priority(&self) -> f64 {
        self.goal_weight * self.affordance
    }
}

/// Index of the candidate maximising `g * a`; the lowest index wins ties.
pub fn select_action(candidates: &[ActionCandidate]) -> Result<usize, PlanningError> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        let p = c.priority();
        match best {
            Some((_, bp)) if p <= bp => {}
            _ => best = Some((i, p)),
        }
    }
    best.map(|(i, _)| i).ok_or(PlanningError::EmptyCandidateSet)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Primitive {
    StepForward,
    StepBackward,
    RotateLeft,
    RotateRight,
    StrafeLeft,
    StrafeRight,
    Grasp,
    Hold,
}

impl Primitive {
    pub const ALL: [Primitive; 8] = [
        Primitive::StepForward,
        Primitive::StepBackward,
        Primitive::RotateLeft,
        Primitive::RotateRight,
        Primitive::StrafeLeft,
        Primitive::StrafeRight,
        Primitive::Grasp,
        Primitive::Hold,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::StepForward => "step-forward",
            Primitive::StepBackward => "step-backward",
            Primitive::RotateLeft => "rotate-left",
            Primitive::RotateRight => "rotate-right",
            Primitive::StrafeLeft => "strafe-left",
            Primitive::StrafeRight => "strafe-right",
            Primitive::Grasp => "grasp",
            Primitive::Hold => "hold",
        }
    }

    pub fn is_motion(self) -> bool {
        !matches!(self, Primitive::Grasp | Primitive::Hold)
    }

    /// Body-frame (forward, left, yaw) displacement over one decision period.
    pub fn displacement(self, step: f64, turn: f64) -> (f64, f64, f64) {
        match self {
            Primitive::StepForward => (step, 0.0, 0.0),
            Primitive::StepBackward => (-step, 0.0, 0.0),
            Primitive::RotateLeft => (0.0, 0.0, turn),
            Primitive::RotateRight => (0.0, 0.0, -turn),
            Primitive::StrafeLeft => (0.0, step, 0.0),
            Primitive::StrafeRight => (0.0, -step, 0.0),
            Primitive::Grasp | Primitive::Hold => (0.0, 0.0, 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrimitiveParams {
    /// Translation per decision period (m).
    pub step: f64,
    /// Rotation per decision period (rad).
    pub turn: f64,
    /// Motions ending farther than this from the target are infeasible (m).
    pub max_range: f64,
    /// Affordance of the rotations, which never shorten the distance.
    pub rotate_affordance: f64,
}

impl Default for PrimitiveParams {
    fn default() -> Self {
        Self { step: 0.01, turn: 0.03, max_range: 5.0, rotate_affordance: 0.95 }
    }
}

/// Target position in the hexapod body frame after executing `prim`.
pub fn predicted_target(prim: Primitive, target_body: (f64, f64), params: &PrimitiveParams) -> (f64, f64) {
    let (dx, dy, dyaw) = prim.displacement(params.step, params.turn);
    let (tx, ty) = (target_body.0 - dx, target_body.1 - dy);
    let (s, c) = (-dyaw).sin_cos();
    (c * tx - s * ty, s * tx + c * ty)
}

/// `g_i = 1 / (1 + d_i)` with `d_i` the predicted hexapod-to-target distance
/// after primitive `i`. A grasp completes the objective, so its distance is 0.
pub fn goal_proximity_weights(
    target_body: Option<(f64, f64)>,
    primitives: &[Primitive],
    params: &PrimitiveParams,
) -> Result<Vec<f64>, PlanningError> {
    let target = target_body.ok_or(PlanningError::NoTarget)?;
    Ok(primitives
        .iter()
        .map(|&p| {
            let d = if p == Primitive::Grasp {
                0.0
            } else {
                let (x, y) = predicted_target(p, target, params);
                x.hypot(y)
            };
            1.0 / (1.0 + d)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffordanceInputs {
    pub centered: bool,
    pub stable: bool,
}

pub fn affordances(
    target_body: (f64, f64),
    primitives: &[Primitive],
    inputs: AffordanceInputs,
    params: &PrimitiveParams,
) -> Vec<f64> {
    primitives
        .iter()
        .map(|&p| match p {
            Primitive::Hold => 1.0,
            Primitive::Grasp => {
                if inputs.centered {
                    1.0
                } else {
                    0.0
                }
            }
            motion => {
                let (x, y) = predicted_target(motion, target_body, params);
                if !inputs.stable || x.hypot(y) > params.max_range {
                    0.0
                } else if matches!(motion, Primitive::RotateLeft | Primitive::RotateRight) {
                    params.rotate_affordance
                } else {
                    1.0
                }
            }
        })
        .collect()
}

/// Builds the candidate set for the current state and picks one primitive.
pub fn choose_primitive(
    target_body: Option<(f64, f64)>,
    inputs: AffordanceInputs,
    params: &PrimitiveParams,
) -> Result<Primitive, PlanningError> {
    let target = target_body.ok_or(PlanningError::NoTarget)?;
    let g = goal_proximity_weights(Some(target), &Primitive::ALL, params)?;
    let a = affordances(target, &Primitive::ALL, inputs, params);
    let candidates: Vec<ActionCandidate> = Primitive::ALL
        .iter()
        .enumerate()
        .map(|(i, p)| ActionCandidate { id: i, name: p.name(), goal_weight: g[i], affordance: a[i] })
        .collect();
    Ok(Primitive::ALL[select_action(&candidates)?])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinkStatus {
    Healthy,
    Lost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WinchMode {
    Lower,
    Raise,
    Hold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CommandOpcode {
    Deploy = 1,
    Approach = 2,
    Grasp = 3,
    Abort = 4,
    Hold = 5,
}

impl CommandOpcode {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            1 => Some(Self::Deploy),
            2 => Some(Self::Approach),
            3 => Some(Self::Grasp),
            4 => Some(Self::Abort),
            5 => Some(Self::Hold),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Altitude {
    World(f64),
    AboveSurface(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UavSetpoint {
    pub x: f64,
    pub y: f64,
    pub altitude: Altitude,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Commands {
    pub uav: UavSetpoint,
    pub winch: WinchMode,
    pub hexapod: Option<CommandOpcode>,
    pub send_target_location: bool,
}

/// Latest hexapod telemetry as received over the link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HexapodReport {
    pub grasp_state: GraspState,
    pub load: f64,
    pub tilt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observations {
    pub t: f64,
    pub uav_position: Vec3,
    pub uav_velocity: Vec3,
    pub height_over_surface: Option<f64>,
    /// Confirmed target track and its world position estimate.
    pub target: Option<(u64, Vec3)>,
    pub hexapod_position: Option<Vec3>,
    pub hexapod: Option<HexapodReport>,
    pub link: LinkStatus,
    pub docked: bool,
    pub hexapod_grounded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub base: [f64; 2],
    pub takeoff_altitude: f64,
    pub cruise_altitude: f64,
    pub search_waypoints: Vec<[f64; 2]>,
    /// Hover height above the deck while the hexapod is off board (m).
    pub deploy_height: f64,
    /// Horizontal offset from the target at which the hexapod is lowered (m).
    pub deploy_offset: [f64; 2],
    pub mission_waypoint: [f64; 2],
    pub arrival_tolerance: f64,
    pub altitude_tolerance: f64,
    pub hover_speed: f64,
    pub land_altitude: f64,
    pub retry_limit: u32,
    pub retry_settle_s: f64,
    pub grasp_timeout_s: f64,
    pub tilt_limit: f64,
    pub loads: LoadThresholds,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            base: [0.0, 0.0],
            takeoff_altitude: 6.0,
            cruise_altitude: 6.0,
            search_waypoints: vec![[6.0, 0.0], [12.0, 0.0], [12.0, 6.0], [18.0, 6.0], [18.0, 0.0]],
            deploy_height: 4.0,
            deploy_offset: [-0.6, 0.0],
            mission_waypoint: [6.0, -4.0],
            arrival_tolerance: 0.3,
            altitude_tolerance: 0.2,
            hover_speed: 0.3,
            land_altitude: 0.2,
            retry_limit: 3,
            retry_settle_s: 1.5,
            grasp_timeout_s: 20.0,
            tilt_limit: 0.35,
            loads: LoadThresholds::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissionContext {
    pub stage: MissionStage,
    pub target_track_id: Option<u64>,
    pub target_position: Option<Vec3>,
    pub grasp_confirmed: bool,
    pub stability_ok: bool,
    pub retry_count: u32,
    pub elapsed: f64,
    pub stage_entered_at: f64,
    pub search_index: usize,
    pub paused: bool,
}

impl Default for MissionContext {
    fn default() -> Self {
        Self {
            stage: MissionStage::Idle,
            target_track_id: None,
            target_position: None,
            grasp_confirmed: false,
            stability_ok: true,
            retry_count: 0,
            elapsed: 0.0,
            stage_entered_at: 0.0,
            search_index: 0,
            paused: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub t: f64,
    pub from: MissionStage,
    pub to: MissionStage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub commands: Commands,
    pub transition: Option<Transition>,
}

fn horizontal_distance(a: &Vec3, x: f64, y: f64) -> f64 {
    (a.x - x).hypot(a.y - y)
}

fn horizontal_speed(v: &Vec3) -> f64 {
    v.x.hypot(v.y)
}

/// Advances the mission by one planner tick.
pub fn mission_step(
    ctx: &mut MissionContext,
    obs: &Observations,
    cfg: &PlannerConfig,
) -> Result<StepResult, PlanningError> {
    use MissionStage::*;
    if ctx.stage.is_terminal() {
        return Err(PlanningError::Finished(ctx.stage));
    }
    ctx.elapsed = obs.t;

    if let Some((id, p)) = obs.target {
        ctx.target_track_id = Some(id);
        ctx.target_position = Some(p);
    }
    let airborne = !obs.hexapod_grounded;
    if let Some(r) = obs.hexapod {
        ctx.grasp_confirmed = r.grasp_state == GraspState::Holding && grasp_confirmed(r.load, airborne, &cfg.loads);
        ctx.stability_ok = stability_check(r.tilt, cfg.tilt_limit);
    }

    let here = obs.uav_position;
    let hover = UavSetpoint { x: here.x, y: here.y, altitude: Altitude::World(here.z) };
    let target_xy = ctx.target_position.map(|p| (p.x, p.y)).unwrap_or((here.x, here.y));
    let over_target = UavSetpoint {
        x: target_xy.0 + cfg.deploy_offset[0],
        y: target_xy.1 + cfg.deploy_offset[1],
        altitude: Altitude::AboveSurface(cfg.deploy_height),
    };
    let in_stage = obs.t - ctx.stage_entered_at;

    if ctx.stage.hexapod_deployed() && obs.link == LinkStatus::Lost {
        ctx.paused = true;
        let cmds = Commands {
            uav: UavSetpoint { altitude: over_target.altitude, ..hover },
            winch: WinchMode::Hold,
            hexapod: Some(CommandOpcode::Hold),
            send_target_location: false,
        };
        return Ok(StepResult { commands: cmds, transition: None });
    }
    ctx.paused = false;

    let mut next = None;
    let mut cmds = Commands { uav: hover, winch: WinchMode::Hold, hexapod: None, send_target_location: false };

    match ctx.stage {
        Idle => next = Some(Takeoff),
        Takeoff => {
            cmds.uav = UavSetpoint { x: cfg.base[0], y: cfg.base[1], altitude: Altitude::World(cfg.takeoff_altitude) };
            if (here.z - cfg.takeoff_altitude).abs() < cfg.altitude_tolerance {
                next = Some(Search);
            }
        }
        Search => {
            if obs.target.is_some() {
                next = Some(NavigateToTarget);
            } else if !cfg.search_waypoints.is_empty() {
                let idx = ctx.search_index % cfg.search_waypoints.len();
                let [wx, wy] = cfg.search_waypoints[idx];
                if horizontal_distance(&here, wx, wy) < cfg.arrival_tolerance {
                    ctx.search_index = ctx.search_index.wrapping_add(1);
                }
                cmds.uav = UavSetpoint { x: wx, y: wy, altitude: Altitude::World(cfg.cruise_altitude) };
            }
        }
        NavigateToTarget => {
            cmds.uav = UavSetpoint { x: target_xy.0, y: target_xy.1, altitude: Altitude::World(cfg.cruise_altitude) };
            if horizontal_distance(&here, target_xy.0, target_xy.1) < cfg.arrival_tolerance
                && horizontal_speed(&obs.uav_velocity) < cfg.hover_speed
            {
                next = Some(DeployHexapod);
            }
        }
        DeployHexapod => {
            cmds.uav = over_target;
            cmds.hexapod = Some(CommandOpcode::Deploy);
            let at_height = obs
                .height_over_surface
                .is_some_and(|h| (h - cfg.deploy_height).abs() < cfg.altitude_tolerance);
            if obs.hexapod_grounded && !obs.docked {
                next = Some(HexapodApproach);
            } else if at_height || !obs.docked {
                cmds.winch = WinchMode::Lower;
            }
        }
        HexapodApproach => {
            cmds.uav = over_target;
            cmds.hexapod = Some(CommandOpcode::Approach);
            cmds.send_target_location = true;
            if !ctx.stability_ok {
                next = Some(RetryPosture);
            } else if obs.hexapod.is_some_and(|r| r.grasp_state == GraspState::Centered) {
                next = Some(Grasp);
            }
        }
        Grasp => {
            cmds.uav = over_target;
            cmds.hexapod = Some(CommandOpcode::Grasp);
            let lost = obs.hexapod.is_some_and(|r| r.grasp_state == GraspState::Lost);
            if !ctx.stability_ok || lost || in_stage > cfg.grasp_timeout_s {
                next = Some(RetryPosture);
            } else if ctx.grasp_confirmed {
                next = Some(WinchUp);
            }
        }
        WinchUp => {
            let (x, y) = obs.hexapod_position.map(|p| (p.x, p.y)).unwrap_or(target_xy);
            cmds.uav = UavSetpoint { x, y, altitude: Altitude::AboveSurface(cfg.deploy_height) };
            cmds.winch = WinchMode::Raise;
            let slipped = obs.hexapod.is_some_and(|r| r.grasp_state == GraspState::Lost) || !ctx.grasp_confirmed;
            if obs.docked && ctx.grasp_confirmed {
                next = Some(NavigateWaypoint);
            } else if !ctx.stability_ok || slipped {
                next = Some(RetryPosture);
            }
        }
        RetryPosture => {
            cmds.uav = over_target;
            cmds.hexapod = Some(CommandOpcode::Hold);
            cmds.winch = if obs.hexapod_grounded { WinchMode::Hold } else { WinchMode::Lower };
            let released = obs
                .hexapod
                .is_some_and(|r| !matches!(r.grasp_state, GraspState::Closing | GraspState::Holding));
            if ctx.retry_count >= cfg.retry_limit {
                next = Some(Abort);
            } else if in_stage >= cfg.retry_settle_s && obs.hexapod_grounded && released && ctx.stability_ok {
                next = Some(HexapodApproach);
            }
        }
        NavigateWaypoint => {
            let [wx, wy] = cfg.mission_waypoint;
            cmds.uav = UavSetpoint { x: wx, y: wy, altitude: Altitude::World(cfg.cruise_altitude) };
            if horizontal_distance(&here, wx, wy) < cfg.arrival_tolerance {
                next = Some(ReturnToBase);
            }
        }
        ReturnToBase => {
            let [bx, by] = cfg.base;
            cmds.uav = UavSetpoint { x: bx, y: by, altitude: Altitude::World(cfg.cruise_altitude) };
            if horizontal_distance(&here, bx, by) < cfg.arrival_tolerance
                && horizontal_speed(&obs.uav_velocity) < cfg.hover_speed
            {
                next = Some(Land);
            }
        }
        Land => {
            let [bx, by] = cfg.base;
            cmds.uav = UavSetpoint { x: bx, y: by, altitude: Altitude::AboveSurface(0.0) };
            if obs.height_over_surface.unwrap_or(here.z) <= cfg.land_altitude {
                next = Some(Complete);
            }
        }
        Complete | Abort => unreachable!(),
    }

    let transition = match next {
        Some(to) => {
            let from = ctx.stage;
            if !is_legal_transition(from, to) {
                return Err(PlanningError::IllegalTransition { from, to });
            }
            if to == RetryPosture {
                ctx.retry_count = (ctx.retry_count + 1).min(cfg.retry_limit);
            }
            ctx.stage = to;
            ctx.stage_entered_at = obs.t;
            Some(Transition { t: obs.t, from, to })
        }
        None => None,
    };
    if ctx.stage == Abort {
        cmds.hexapod = Some(CommandOpcode::Abort);
        cmds.winch = WinchMode::Hold;
    }
    Ok(StepResult { commands: cmds, transition })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::NoiseStream;

    fn cand(g: f64, a: f64, id: usize) -> ActionCandidate {
        ActionCandidate { id, name: "x", goal_weight: g, affordance: a }
    }

    #[test]
    fn select_examples() {
        assert_eq!(select_action(&[cand(1.0, 1.0, 0), cand(2.0, 0.5, 1)]).unwrap(), 0);
        assert_eq!(select_action(&[cand(1.0, 1.0, 0), cand(2.0, 1.0, 1)]).unwrap(), 1);
        assert_eq!(select_action(&[]), Err(PlanningError::EmptyCandidateSet));
    }

    #[test]
    fn select_matches_product_scan() {
        let mut rng = NoiseStream::new(11, "select");
        for _ in 0..200 {
            let cs: Vec<_> = (0..10).map(|i| cand(rng.uniform_range(0.0, 3.0), rng.uniform(), i)).collect();
            let products: Vec<f64> = cs.iter().map(|c| c.goal_weight * c.affordance).collect();
            let max = products.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let want = products.iter().position(|&p| p == max).unwrap();
            assert_eq!(select_action(&cs).unwrap(), want);
        }
    }

    #[test]
    fn proximity_examples() {
        let params = PrimitiveParams { step: 0.0, ..PrimitiveParams::default() };
        let g = goal_proximity_weights(Some((0.0, 0.0)), &[Primitive::Hold], &params).unwrap();
        assert_eq!(g, vec![1.0]);

        // hold at distance 1 and 3
        let g1 = goal_proximity_weights(Some((1.0, 0.0)), &[Primitive::Hold], &params).unwrap()[0];
        let g3 = goal_proximity_weights(Some((3.0, 0.0)), &[Primitive::Hold], &params).unwrap()[0];
        assert_eq!((g1, g3), (0.5, 0.25));

        let g = goal_proximity_weights(Some((0.0, 2.0)), &[Primitive::RotateLeft, Primitive::RotateRight, Primitive::Hold], &PrimitiveParams::default()).unwrap();
        assert!((g[0] - g[1]).abs() < 1e-12 && (g[1] - g[2]).abs() < 1e-12);

        assert_eq!(goal_proximity_weights(None, &[Primitive::Hold], &params), Err(PlanningError::NoTarget));
    }

    #[test]
    fn primitive_choice_moves_toward_target() {
        let p = PrimitiveParams::default();
        let stable = AffordanceInputs { centered: false, stable: true };
        assert_eq!(choose_primitive(Some((1.0, 0.0)), stable, &p).unwrap(), Primitive::StepForward);
        assert_eq!(choose_primitive(Some((-1.0, 0.0)), stable, &p).unwrap(), Primitive::StepBackward);
        assert_eq!(choose_primitive(Some((0.0, 1.0)), stable, &p).unwrap(), Primitive::StrafeLeft);
        assert_eq!(choose_primitive(Some((0.0, -1.0)), stable, &p).unwrap(), Primitive::StrafeRight);
        let centered = AffordanceInputs { centered: true, stable: true };
        assert_eq!(choose_primitive(Some((0.05, 0.0)), centered, &p).unwrap(), Primitive::Grasp);
        let unstable = AffordanceInputs { centered: false, stable: false };
        assert_eq!(choose_primitive(Some((1.0, 0.0)), unstable, &p).unwrap(), Primitive::Hold);
    }

    #[test]
    fn legal_edges_cover_nominal_sequence() {
        use MissionStage::*;
        let seq = [Idle, Takeoff, Search, NavigateToTarget, DeployHexapod, HexapodApproach, Grasp, WinchUp, NavigateWaypoint, ReturnToBase, Land, Complete];
        for w in seq.windows(2) {
            assert!(is_legal_transition(w[0], w[1]), "{:?}", w);
        }
        assert!(!is_legal_transition(Search, Grasp));
        assert!(!is_legal_transition(Complete, Idle));
    }

    #[test]
    fn stage_codes_round_trip() {
        for s in MissionStage::ALL {
            assert_eq!(MissionStage::from_code(s.code()), Some(s));
            assert_eq!(MissionStage::from_label(s.label()), Some(s));
        }
        assert_eq!(MissionStage::from_code(14), None);
    }

    fn obs(t: f64) -> Observations {
        Observations {
            t,
            uav_position: Vec3::new(0.0, 0.0, 6.0),
            uav_velocity: Vec3::zeros(),
            height_over_surface: Some(4.0),
            target: None,
            hexapod_position: None,
            hexapod: None,
            link: LinkStatus::Healthy,
            docked: false,
            hexapod_grounded: true,
        }
    }

    #[test]
    fn search_to_navigate_on_confirmed_track() {
        let cfg = PlannerConfig::default();
        let mut ctx = MissionContext { stage: MissionStage::Search, ..Default::default() };
        let mut o = obs(1.0);
        o.target = Some((7, Vec3::new(3.0, 4.0, 1.0)));
        let r = mission_step(&mut ctx, &o, &cfg).unwrap();
        assert_eq!(ctx.stage, MissionStage::NavigateToTarget);
        assert_eq!(r.transition.unwrap().from, MissionStage::Search);
        assert_eq!(ctx.target_track_id, Some(7));
    }

    #[test]
    fn unstable_grasp_retries_then_aborts() {
        let cfg = PlannerConfig::default();
        let mut ctx = MissionContext { stage: MissionStage::Grasp, ..Default::default() };
        let tilted = HexapodReport { grasp_state: GraspState::Closing, load: 0.0, tilt: cfg.tilt_limit + 0.01 };
        let upright_centered = HexapodReport { grasp_state: GraspState::Centered, load: 0.0, tilt: 0.0 };
        let mut t = 0.0;
        let mut retries = 0;
        for _ in 0..10_000 {
            if ctx.stage.is_terminal() {
                break;
            }
            t += 0.1;
            let mut o = obs(t);
            o.hexapod = Some(match ctx.stage {
                MissionStage::Grasp => tilted,
                _ => upright_centered,
            });
            let r = mission_step(&mut ctx, &o, &cfg).unwrap();
            if let Some(tr) = r.transition {
                if tr.to == MissionStage::RetryPosture {
                    retries += 1;
                    assert_eq!(ctx.retry_count, retries);
                }
            }
            assert!(ctx.retry_count <= cfg.retry_limit);
        }
        assert_eq!(ctx.stage, MissionStage::Abort);
        assert_eq!(retries, cfg.retry_limit);
    }

    #[test]
    fn first_unstable_grasp_increments_retry() {
        let cfg = PlannerConfig::default();
        let mut ctx = MissionContext { stage: MissionStage::Grasp, ..Default::default() };
        let mut o = obs(1.0);
        o.hexapod = Some(HexapodReport { grasp_state: GraspState::Closing, load: 0.0, tilt: 1.0 });
        mission_step(&mut ctx, &o, &cfg).unwrap();
        assert_eq!((ctx.stage, ctx.retry_count), (MissionStage::RetryPosture, 1));
    }

    #[test]
    fn retry_at_limit_aborts() {
        let cfg = PlannerConfig::default();
        let mut ctx = MissionContext { stage: MissionStage::RetryPosture, retry_count: cfg.retry_limit, ..Default::default() };
        mission_step(&mut ctx, &obs(1.0), &cfg).unwrap();
        assert_eq!(ctx.stage, MissionStage::Abort);
    }

    #[test]
    fn link_loss_pauses_deployed_stages() {
        let cfg = PlannerConfig::default();
        let mut ctx = MissionContext { stage: MissionStage::HexapodApproach, ..Default::default() };
        let mut o = obs(1.0);
        o.link = LinkStatus::Lost;
        o.hexapod = Some(HexapodReport { grasp_state: GraspState::Centered, load: 0.0, tilt: 0.0 });
        let r = mission_step(&mut ctx, &o, &cfg).unwrap();
        assert!(r.transition.is_none());
        assert_eq!(r.commands.hexapod, Some(CommandOpcode::Hold));
        assert!(ctx.paused);
        o.link = LinkStatus::Healthy;
        mission_step(&mut ctx, &o, &cfg).unwrap();
        assert_eq!(ctx.stage, MissionStage::Grasp);
    }

    #[test]
    fn finished_mission_rejects_steps() {
        let mut ctx = MissionContext { stage: MissionStage::Complete, ..Default::default() };
        assert!(matches!(mission_step(&mut ctx, &obs(0.0), &PlannerConfig::default()), Err(PlanningError::Finished(_))));
    }

    #[test]
    fn slip_during_winch_up_retries() {
        let cfg = PlannerConfig::default();
        let mut ctx = MissionContext { stage: MissionStage::WinchUp, grasp_confirmed: true, ..Default::default() };
        let mut o = obs(1.0);
        o.hexapod_grounded = false;
        o.hexapod = Some(HexapodReport { grasp_state: GraspState::Holding, load: 14.0, tilt: 0.0 });
        mission_step(&mut ctx, &o, &cfg).unwrap();
        assert_eq!(ctx.stage, MissionStage::WinchUp);
        o.hexapod = Some(HexapodReport { grasp_state: GraspState::Lost, load: 0.5, tilt: 0.0 });
        mission_step(&mut ctx, &o, &cfg).unwrap();
        assert_eq!(ctx.stage, MissionStage::RetryPosture);
    }
}
