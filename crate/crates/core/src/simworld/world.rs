//! Ground-truth world: heaving vessel, UAV kinematics, the tethered
//! hexapod and the object it retrieves.

use serde::Serialize;

use super::scenario::{ScenarioConfig, VesselWaypoint};
use crate::geometry::{inverse_transform_point, transform_point, wrap_angle, Attitude, Pose, Vec3};
use crate::hexapod::WinchState;
use crate::planning::Primitive;

pub const GRAVITY: f64 = 9.81;
/// Winch drum and down camera sit this far below the UAV body origin (m).
pub const WINCH_DROP: f64 = 0.1;

fn interpolate_path(path: &[VesselWaypoint], t: f64) -> (f64, f64, f64, f64, f64) {
    let first = path[0];
    let last = path[path.len() - 1];
    if t <= first.t {
        return (first.x, first.y, first.yaw, 0.0, 0.0);
    }
    if t >= last.t {
        return (last.x, last.y, last.yaw, 0.0, 0.0);
    }
    let k = path.windows(2).position(|w| t < w[1].t).unwrap_or(path.len() - 2);
    let (a, b) = (path[k], path[k + 1]);
    let span = b.t - a.t;
    let s = (t - a.t) / span;
    let yaw = a.yaw + wrap_angle(b.yaw - a.yaw) * s;
    (a.x + (b.x - a.x) * s, a.y + (b.y - a.y) * s, yaw, (b.x - a.x) / span, (b.y - a.y) / span)
}

/// Deck pose: waypoint-interpolated in the plane, heave `A sin(wt)`, roll and
/// pitch on the same period with phases pi/2 and pi/3.
pub fn vessel_pose_at(t: f64, cfg: &ScenarioConfig) -> Pose {
    let (x, y, yaw, _, _) = interpolate_path(&cfg.vessel_path, t);
    let w = std::f64::consts::TAU / cfg.wave.period;
    let heave = cfg.wave.heave_amp * (w * t).sin();
    let roll = cfg.wave.roll_amp * (w * t + std::f64::consts::FRAC_PI_2).sin();
    let pitch = cfg.wave.pitch_amp * (w * t + std::f64::consts::FRAC_PI_3).sin();
    Pose::new(Vec3::new(x, y, cfg.vessel.deck_height + heave), Attitude::new(roll, pitch, yaw))
}

/// Horizontal velocity of the vessel along its path.
pub fn vessel_velocity_at(t: f64, cfg: &ScenarioConfig) -> Vec3 {
    let (_, _, _, vx, vy) = interpolate_path(&cfg.vessel_path, t);
    Vec3::new(vx, vy, 0.0)
}

/// What lies directly below a world point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurfaceBelow {
    pub over_vessel: bool,
    /// Surface elevation under the point (m).
    pub z: f64,
}

pub fn surface_below(p: &Vec3, vessel: &Pose, cfg: &ScenarioConfig) -> SurfaceBelow {
    let local = inverse_transform_point(vessel, p);
    if local.x.abs() <= cfg.vessel.half_length && local.y.abs() <= cfg.vessel.half_width {
        let on_deck = transform_point(vessel, &Vec3::new(local.x, local.y, 0.0));
        SurfaceBelow { over_vessel: true, z: on_deck.z }
    } else {
        SurfaceBelow { over_vessel: false, z: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Surface {
    Deck,
    Water,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum HexapodPlace {
    Docked,
    Suspended,
    /// Standing; `x, y, yaw` are in the deck frame on the deck, World otherwise.
    Grounded { surface: Surface, x: f64, y: f64, yaw: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ObjectAnchor {
    OnDeck(Vec3),
    Floating(Vec3),
    /// Held by the gripper at a fixed offset in the hexapod body frame.
    Held(Vec3),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Attached {
    None,
    HexapodHolding,
    WinchCarrying,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GripAction {
    None,
    Close,
    Open,
    /// Object slips out of a closed gripper.
    Slip,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldCommand {
    pub uav_velocity: Vec3,
    pub primitive: Option<Primitive>,
    pub winch: WinchState,
    pub grip: GripAction,
}

impl WorldCommand {
    pub fn idle(winch: WinchState) -> Self {
        Self { uav_velocity: Vec3::zeros(), primitive: None, winch, grip: GripAction::None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorldState {
    pub t: f64,
    pub tick: u64,
    pub vessel_pose: Pose,
    pub vessel_velocity: Vec3,
    pub uav_true_pose: Pose,
    pub uav_true_vel: Vec3,
    /// Body rates (rad/s) about x, y, z.
    pub uav_gyro: Vec3,
    pub hexapod_place: HexapodPlace,
    /// Pose of the hexapod body centre.
    pub hexapod_true_pose: Pose,
    pub object_anchor: ObjectAnchor,
    pub object_pose: Pose,
    pub attached: Attached,
    pub cable_length: f64,
}

impl WorldState {
    pub fn initial(cfg: &ScenarioConfig) -> Self {
        let [x, y, z] = cfg.uav_start;
        let vessel = vessel_pose_at(0.0, cfg);
        let uav = Pose::new(Vec3::new(x, y, z), Attitude::from_yaw(cfg.uav.heading));
        let mut w = WorldState {
            t: 0.0,
            tick: 0,
            vessel_pose: vessel,
            vessel_velocity: vessel_velocity_at(0.0, cfg),
            uav_true_pose: uav,
            uav_true_vel: Vec3::zeros(),
            uav_gyro: Vec3::zeros(),
            hexapod_place: HexapodPlace::Docked,
            hexapod_true_pose: uav,
            object_anchor: ObjectAnchor::OnDeck(Vec3::from(cfg.target_on_deck)),
            object_pose: Pose::identity(),
            attached: Attached::None,
            cable_length: 0.0,
        };
        w.place_bodies(cfg);
        w
    }

    pub fn winch_point(&self) -> Vec3 {
        transform_point(&self.uav_true_pose, &Vec3::new(0.0, 0.0, -WINCH_DROP))
    }

    /// Fiducial marker on top of the hexapod.
    pub fn hexapod_top(&self, cfg: &ScenarioConfig) -> Vec3 {
        transform_point(&self.hexapod_true_pose, &Vec3::new(0.0, 0.0, cfg.hexapod.body_height / 2.0))
    }

    pub fn hexapod_grounded(&self) -> bool {
        matches!(self.hexapod_place, HexapodPlace::Grounded { .. })
    }

    pub fn object_held(&self) -> bool {
        matches!(self.object_anchor, ObjectAnchor::Held(_))
    }

    fn place_bodies(&mut self, cfg: &ScenarioConfig) {
        let half = cfg.hexapod.body_height / 2.0;
        let w = self.winch_point();
        self.hexapod_true_pose = match self.hexapod_place {
            HexapodPlace::Docked => Pose::new(w - Vec3::new(0.0, 0.0, half), Attitude::from_yaw(self.uav_true_pose.attitude.yaw)),
            HexapodPlace::Suspended => Pose::new(
                w - Vec3::new(0.0, 0.0, self.cable_length + half),
                Attitude::from_yaw(self.hexapod_true_pose.attitude.yaw),
            ),
            HexapodPlace::Grounded { surface: Surface::Deck, x, y, yaw } => {
                self.vessel_pose.compose(&Pose::new(Vec3::new(x, y, half), Attitude::from_yaw(yaw)))
            }
            HexapodPlace::Grounded { surface: Surface::Water, x, y, yaw } => {
                Pose::new(Vec3::new(x, y, half), Attitude::from_yaw(yaw))
            }
        };
        self.object_pose = match self.object_anchor {
            ObjectAnchor::OnDeck(local) => self.vessel_pose.compose(&Pose::from_position(local)),
            ObjectAnchor::Floating(p) => Pose::from_position(p),
            ObjectAnchor::Held(offset) => self.hexapod_true_pose.compose(&Pose::from_position(offset)),
        };
        self.attached = match (self.object_anchor, self.hexapod_place) {
            (ObjectAnchor::Held(_), HexapodPlace::Grounded { .. }) => Attached::HexapodHolding,
            (ObjectAnchor::Held(_), _) => Attached::WinchCarrying,
            _ => Attached::None,
        };
    }

    fn drop_object(&mut self, cfg: &ScenarioConfig) {
        let p = self.object_pose.position;
        let below = surface_below(&p, &self.vessel_pose, cfg);
        self.object_anchor = if below.over_vessel {
            let local = inverse_transform_point(&self.vessel_pose, &p);
            ObjectAnchor::OnDeck(Vec3::new(local.x, local.y, cfg.target_on_deck[2]))
        } else {
            ObjectAnchor::Floating(Vec3::new(p.x, p.y, 0.0))
        };
    }

    fn apply_grip(&mut self, grip: GripAction, cfg: &ScenarioConfig) {
        match grip {
            GripAction::None => {}
            GripAction::Close => {
                if !self.object_held() && self.hexapod_grounded() {
                    let rel = inverse_transform_point(&self.hexapod_true_pose, &self.object_pose.position);
                    if rel.x.hypot(rel.y) <= cfg.hexapod.grasp_range {
                        self.object_anchor = ObjectAnchor::Held(rel);
                    }
                }
            }
            GripAction::Open | GripAction::Slip => {
                if self.object_held() {
                    self.drop_object(cfg);
                }
            }
        }
    }

    fn step_uav(&mut self, cfg: &ScenarioConfig, setpoint: &Vec3) {
        let dt = cfg.dt;
        let v0 = self.uav_true_vel;
        let mut v = v0 + (setpoint - v0) * (dt / cfg.uav.tau);
        let mut p = self.uav_true_pose.position + v * dt;
        let below = surface_below(&p, &self.vessel_pose, cfg);
        let floor = below.z + cfg.uav.rest_height;
        if p.z < floor {
            p.z = floor;
            v.z = v.z.max(0.0);
        }
        let accel = (v - v0) / dt;
        let yaw = cfg.uav.heading;
        let (s, c) = yaw.sin_cos();
        let (ax, ay) = (c * accel.x + s * accel.y, -s * accel.x + c * accel.y);
        let att = Attitude::new(-(ay / GRAVITY).atan(), (ax / GRAVITY).atan(), yaw);
        let prev = self.uav_true_pose.attitude;
        self.uav_gyro = Vec3::new(wrap_angle(att.roll - prev.roll) / dt, wrap_angle(att.pitch - prev.pitch) / dt, 0.0);
        self.uav_true_pose = Pose::new(p, att);
        self.uav_true_vel = v;
    }

    fn step_hexapod(&mut self, cfg: &ScenarioConfig, cmd: &WorldCommand) {
        self.cable_length = cmd.winch.cable_length;
        let half = cfg.hexapod.body_height / 2.0;
        match self.hexapod_place {
            HexapodPlace::Docked => {
                if !cmd.winch.docked && self.cable_length > cfg.winch.dock_epsilon {
                    self.hexapod_place = HexapodPlace::Suspended;
                }
            }
            HexapodPlace::Suspended => {
                let center = self.winch_point() - Vec3::new(0.0, 0.0, self.cable_length + half);
                let feet = center - Vec3::new(0.0, 0.0, half);
                let below = surface_below(&feet, &self.vessel_pose, cfg);
                if cmd.winch.docked {
                    self.hexapod_place = HexapodPlace::Docked;
                } else if feet.z <= below.z {
                    let yaw = self.hexapod_true_pose.attitude.yaw;
                    self.hexapod_place = if below.over_vessel {
                        let local = inverse_transform_point(&self.vessel_pose, &feet);
                        HexapodPlace::Grounded {
                            surface: Surface::Deck,
                            x: local.x,
                            y: local.y,
                            yaw: wrap_angle(yaw - self.vessel_pose.attitude.yaw),
                        }
                    } else {
                        HexapodPlace::Grounded { surface: Surface::Water, x: feet.x, y: feet.y, yaw }
                    };
                }
            }
            HexapodPlace::Grounded { surface, mut x, mut y, mut yaw } => {
                if let Some(prim) = cmd.primitive {
                    let frac = cfg.dt / cfg.planner_period_s;
                    let (fwd, left, dyaw) = prim.displacement(cfg.primitives.step * frac, cfg.primitives.turn * frac);
                    let (s, c) = yaw.sin_cos();
                    x += c * fwd - s * left;
                    y += s * fwd + c * left;
                    yaw = wrap_angle(yaw + dyaw);
                    if surface == Surface::Deck {
                        x = x.clamp(-cfg.vessel.half_length, cfg.vessel.half_length);
                        y = y.clamp(-cfg.vessel.half_width, cfg.vessel.half_width);
                    }
                    self.hexapod_place = HexapodPlace::Grounded { surface, x, y, yaw };
                    self.place_bodies(cfg);
                }
                let taut = (self.winch_point() - self.hexapod_top(cfg)).norm() > self.cable_length;
                if cmd.winch.rate < 0.0 && taut {
                    self.hexapod_place = HexapodPlace::Suspended;
                    self.hexapod_true_pose.attitude = Attitude::from_yaw(self.hexapod_true_pose.attitude.yaw);
                }
            }
        }
    }
}

/// Advances the world by one `cfg.dt`.
pub fn world_step(world: &WorldState, cfg: &ScenarioConfig, cmd: &WorldCommand) -> WorldState {
    let mut w = world.clone();
    w.apply_grip(cmd.grip, cfg);
    w.tick += 1;
    w.t = w.tick as f64 * cfg.dt;
    w.vessel_pose = vessel_pose_at(w.t, cfg);
    w.vessel_velocity = vessel_velocity_at(w.t, cfg);
    w.step_uav(cfg, &cmd.uav_velocity);
    w.place_bodies(cfg);
    w.step_hexapod(cfg, cmd);
    w.place_bodies(cfg);
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simworld::scenario::WaveConfig;

    fn calm() -> ScenarioConfig {
        ScenarioConfig {
            wave: WaveConfig { heave_amp: 0.0, roll_amp: 0.0, pitch_amp: 0.0, period: 6.0 },
            vessel_path: vec![
                VesselWaypoint { t: 0.0, x: 0.0, y: 0.0, yaw: 0.0 },
                VesselWaypoint { t: 10.0, x: 10.0, y: 5.0, yaw: 0.0 },
            ],
            ..Default::default()
        }
    }

    #[test]
    fn calm_sea_follows_waypoints() {
        let cfg = calm();
        let p = vessel_pose_at(5.0, &cfg);
        assert!((p.position - Vec3::new(5.0, 2.5, cfg.vessel.deck_height)).norm() < 1e-12);
        assert_eq!(p.attitude, Attitude::IDENTITY);
        assert!((vessel_velocity_at(5.0, &cfg) - Vec3::new(1.0, 0.5, 0.0)).norm() < 1e-12);
        assert_eq!(vessel_pose_at(20.0, &cfg).position.x, 10.0);
    }

    #[test]
    fn heave_phase_and_period() {
        let cfg = ScenarioConfig::default();
        let z0 = vessel_pose_at(0.0, &cfg).position.z;
        assert!((z0 - cfg.vessel.deck_height).abs() < 1e-12);
        for t in [0.3, 1.7, 4.2, 11.9] {
            let a = vessel_pose_at(t, &cfg);
            let b = vessel_pose_at(t + cfg.wave.period, &cfg);
            assert!((a.position.z - b.position.z).abs() < 1e-9);
            assert!((a.attitude.roll - b.attitude.roll).abs() < 1e-9);
        }
        let roll0 = vessel_pose_at(0.0, &cfg).attitude.roll;
        assert!((roll0 - cfg.wave.roll_amp).abs() < 1e-12);
    }

    #[test]
    fn zero_command_calm_is_static() {
        let cfg = calm();
        let cfg = ScenarioConfig { vessel_path: vec![cfg.vessel_path[0]], uav_start: [0.0, -8.0, 3.0], ..cfg };
        let w0 = WorldState::initial(&cfg);
        let mut w = w0.clone();
        for _ in 0..100 {
            w = world_step(&w, &cfg, &WorldCommand::idle(crate::hexapod::WinchState::docked()));
        }
        assert_eq!(w.uav_true_pose, w0.uav_true_pose);
        assert_eq!(w.object_pose, w0.object_pose);
        assert!((w.t - 2.0).abs() < 1e-12);
    }

    #[test]
    fn first_order_step_response() {
        let cfg = ScenarioConfig { uav_start: [0.0, 0.0, 5.0], ..calm() };
        let mut w = WorldState::initial(&cfg);
        let cmd = WorldCommand { uav_velocity: Vec3::new(1.0, 0.0, 0.0), ..WorldCommand::idle(crate::hexapod::WinchState::docked()) };
        let steps = (3.0 * cfg.uav.tau / cfg.dt).round() as usize;
        for _ in 0..steps {
            w = world_step(&w, &cfg, &cmd);
        }
        assert!((w.uav_true_vel.x - 1.0).abs() < 0.05);
    }

    #[test]
    fn position_is_integral_of_velocity() {
        let cfg = ScenarioConfig { uav_start: [0.0, 0.0, 5.0], ..calm() };
        let mut w = WorldState::initial(&cfg);
        for k in 0..200 {
            let sp = Vec3::new((k as f64 * 0.05).sin(), (k as f64 * 0.03).cos(), 0.2);
            let cmd = WorldCommand { uav_velocity: sp, ..WorldCommand::idle(crate::hexapod::WinchState::docked()) };
            let next = world_step(&w, &cfg, &cmd);
            let fd = (next.uav_true_pose.position - w.uav_true_pose.position) / cfg.dt;
            assert!((fd - next.uav_true_vel).norm() < 1e-9);
            w = next;
        }
    }

    #[test]
    fn held_object_keeps_offset() {
        let cfg = ScenarioConfig::default();
        let mut w = WorldState::initial(&cfg);
        let obj = w.object_pose.position;
        w.hexapod_place = HexapodPlace::Grounded {
            surface: Surface::Deck,
            x: cfg.target_on_deck[0] - 0.05,
            y: cfg.target_on_deck[1],
            yaw: 0.0,
        };
        w.place_bodies(&cfg);
        assert!((w.object_pose.position - obj).norm() < 1e-12);
        let close = WorldCommand { grip: GripAction::Close, ..WorldCommand::idle(crate::hexapod::WinchState { cable_length: 3.0, ..crate::hexapod::WinchState::docked() }) };
        w = world_step(&w, &cfg, &close);
        assert_eq!(w.attached, Attached::HexapodHolding);
        let walk = WorldCommand { primitive: Some(Primitive::StepForward), grip: GripAction::None, ..close };
        let offset = inverse_transform_point(&w.hexapod_true_pose, &w.object_pose.position);
        for _ in 0..100 {
            w = world_step(&w, &cfg, &walk);
            let o = inverse_transform_point(&w.hexapod_true_pose, &w.object_pose.position);
            assert!((o - offset).norm() < 1e-9);
        }
    }
}
