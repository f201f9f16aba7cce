//! GNSS-denied localization: tag-relative fixes, optical-flow velocity,
//! dual-source height, the modality-switching manager and the
//! constant-velocity EKF fed by all of them.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, SMatrix, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{yaw_rotation, Attitude, Pose, Vec3};
use crate::planning::MissionStage;

/// Depth camera maximum range (m).
pub const DEPTH_MAX_RANGE: f64 = 8.0;
/// 2D LiDAR maximum range (m).
pub const LIDAR_MAX_RANGE: f64 = 20.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LocalizationError {
    #[error("tag {0} is not in the tag map")]
    UnknownTag(u32),
    #[error("height must be finite and positive, got {0}")]
    InvalidHeight(f64),
    #[error("no height source accepted")]
    NoHeightAvailable,
    #[error("non-finite measurement")]
    NonFiniteMeasurement,
    #[error("measurement variance must be positive, got {0}")]
    InvalidVariance(f64),
    #[error("time step must be positive, got {0}")]
    InvalidTimeStep(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TagDetection {
    pub tag_id: u32,
    /// Tag position expressed in the UAV body frame.
    pub p_tag_body: Vec3,
    pub timestamp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagEntry {
    pub id: u32,
    pub position: Vec3,
    #[serde(default)]
    pub attitude: Attitude,
}

/// World-frame tag poses keyed by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TagMap {
    entries: BTreeMap<u32, Pose>,
}

impl TagMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a tag; returns false (and leaves the map unchanged) on a duplicate id.
    pub fn insert(&mut self, id: u32, pose: Pose) -> bool {
        if self.entries.contains_key(&id) {
            return false;
        }
        self.entries.insert(id, pose);
        true
    }

    pub fn get(&self, id: u32) -> Option<&Pose> {
        self.entries.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &Pose)> {
        self.entries.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// UAV world position from one tag sighting: `p_tag_world - R(att) * p_tag_body`.
pub fn pose_from_tag(det: &TagDetection, map: &TagMap, attitude: &Attitude) -> Result<Vec3, LocalizationError> {
    let tag = map.get(det.tag_id).ok_or(LocalizationError::UnknownTag(det.tag_id))?;
    Ok(tag.position - attitude.rotation() * det.p_tag_body)
}

/// Mean of the per-tag fixes, ignoring unknown ids. `None` if nothing usable.
pub fn fuse_tag_fixes(dets: &[TagDetection], map: &TagMap, attitude: &Attitude) -> Option<Vec3> {
    let fixes: Vec<Vec3> = dets.iter().filter_map(|d| pose_from_tag(d, map, attitude).ok()).collect();
    if fixes.is_empty() {
        return None;
    }
    Some(fixes.iter().sum::<Vec3>() / fixes.len() as f64)
}

/// Rotational rates reported by the downward flow sensor. Forward motion
/// produces positive `omega_y`; leftward motion produces negative `omega_x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowSample {
    pub omega_x: f64,
    pub omega_y: f64,
    pub timestamp: f64,
}

pub fn flow_to_world_velocity(
    flow: &FlowSample,
    gyro: (f64, f64),
    height: f64,
    attitude: &Attitude,
) -> Result<Vec3, LocalizationError> {
    if !(height.is_finite() && height > 0.0) {
        return Err(LocalizationError::InvalidHeight(height));
    }
    let vx = (flow.omega_y - gyro.1) * height;
    let vy = -(flow.omega_x - gyro.0) * height;
    Ok(yaw_rotation(attitude.yaw) * Vec3::new(vx, vy, 0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeightSource {
    DepthCamera,
    Lidar2D,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeightMeasurement {
    pub source: HeightSource,
    pub value: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeightFix {
    pub value: f64,
    pub source: HeightSource,
}

fn accepted(m: Option<&HeightMeasurement>, max_range: f64) -> Option<f64> {
    m.filter(|m| m.valid && m.value.is_finite() && m.value >= 0.0 && m.value <= max_range)
        .map(|m| m.value)
}

/// Depth camera is trusted only over the vessel and within 8 m; LiDAR within
/// 20 m anywhere. Over the vessel the depth camera wins, over water LiDAR.
pub fn fuse_height(
    depth: Option<&HeightMeasurement>,
    lidar: Option<&HeightMeasurement>,
    over_vessel: bool,
) -> Result<HeightFix, LocalizationError> {
    let depth = if over_vessel { accepted(depth, DEPTH_MAX_RANGE) } else { None };
    let lidar = accepted(lidar, LIDAR_MAX_RANGE);
    match (depth, lidar) {
        (Some(d), _) => Ok(HeightFix { value: d, source: HeightSource::DepthCamera }),
        (None, Some(l)) => Ok(HeightFix { value: l, source: HeightSource::Lidar2D }),
        (None, None) => Err(LocalizationError::NoHeightAvailable),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modality {
    TagRelative,
    OpticalFlow,
}

impl Modality {
    pub fn label(&self) -> &'static str {
        match self {
            Modality::TagRelative => "TagRelative",
            Modality::OpticalFlow => "OpticalFlow",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManagerConfig {
    /// Consecutive missed tag frames tolerated before falling back to flow.
    pub miss_threshold: u32,
    /// Consecutive good tag fixes required before returning to tags.
    pub recover_threshold: u32,
    /// Upper bound on the reported pose speed (m/s).
    pub max_speed: f64,
}

impl Default for ManagerConfig {
    fn default() -> Self {
        Self { miss_threshold: 5, recover_threshold: 10, max_speed: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationManagerState {
    pub active: Modality,
    /// Added to raw tag fixes so the reported pose stays continuous.
    pub origin_offset: Vec3,
    pub last_pose: Pose,
    pub last_velocity: Vec3,
    pub tag_miss_count: u32,
    pub good_fix_count: u32,
    pub switch_count: u32,
}

impl LocalizationManagerState {
    pub fn new(initial_position: Vec3) -> Self {
        Self {
            active: Modality::TagRelative,
            origin_offset: Vec3::zeros(),
            last_pose: Pose { frame: crate::geometry::FrameId::ReferenceFrame, ..Pose::from_position(initial_position) },
            last_velocity: Vec3::zeros(),
            tag_miss_count: 0,
            good_fix_count: 0,
            switch_count: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManagerOutput {
    pub position: Vec3,
    pub modality: Modality,
    pub switched: bool,
    /// Coasting on a stale velocity, or the step was speed-limited.
    pub degraded: bool,
}

pub fn manager_step(
    state: &mut LocalizationManagerState,
    cfg: &ManagerConfig,
    tag_fix: Option<Vec3>,
    flow_velocity: Option<Vec3>,
    dt: f64,
    stage: MissionStage,
) -> ManagerOutput {
    let tag_fix = tag_fix.filter(|p| p.iter().all(|c| c.is_finite()));
    let flow_velocity = flow_velocity.filter(|v| v.iter().all(|c| c.is_finite()));

    if tag_fix.is_some() {
        state.tag_miss_count = 0;
        state.good_fix_count = state.good_fix_count.saturating_add(1);
    } else {
        state.tag_miss_count = state.tag_miss_count.saturating_add(1);
        state.good_fix_count = 0;
    }

    let forced_flow = stage.is_retrieval_phase();
    let next = match state.active {
        Modality::TagRelative if forced_flow || state.tag_miss_count > cfg.miss_threshold => Modality::OpticalFlow,
        Modality::OpticalFlow if !forced_flow && tag_fix.is_some() && state.good_fix_count >= cfg.recover_threshold => {
            Modality::TagRelative
        }
        m => m,
    };
    let switched = next != state.active;

    let mut degraded = flow_velocity.is_none();
    let velocity = flow_velocity.unwrap_or(state.last_velocity);
    let last = state.last_pose.position;
    let propagated = last + velocity * dt;

    let candidate = match (next, tag_fix) {
        (Modality::TagRelative, Some(fix)) if switched => {
            state.origin_offset = propagated - fix;
            propagated
        }
        (Modality::TagRelative, Some(fix)) => {
            degraded = false;
            fix + state.origin_offset
        }
        _ => propagated,
    };

    let max_step = cfg.max_speed * dt;
    let step = candidate - last;
    let position = if step.norm() > max_step {
        degraded = true;
        last + step * (max_step / step.norm())
    } else {
        candidate
    };

    if switched {
        state.switch_count += 1;
        state.active = next;
    }
    if let Some(v) = flow_velocity {
        state.last_velocity = v;
    }
    state.last_pose.position = position;

    ManagerOutput { position, modality: next, switched, degraded }
}

pub type StateVector = SVector<f64, 6>;
pub type Covariance = SMatrix<f64, 6, 6>;

/// `[position; velocity]` with its covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct EkfState {
    pub x: StateVector,
    pub p: Covariance,
}

impl EkfState {
    pub fn new(position: Vec3, velocity: Vec3, pos_var: f64, vel_var: f64) -> Self {
        let mut x = StateVector::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&position);
        x.fixed_rows_mut::<3>(3).copy_from(&velocity);
        let mut p = Covariance::zeros();
        for i in 0..3 {
            p[(i, i)] = pos_var;
            p[(i + 3, i + 3)] = vel_var;
        }
        Self { x, p }
    }

    pub fn position(&self) -> Vec3 {
        self.x.fixed_rows::<3>(0).into_owned()
    }

    pub fn velocity(&self) -> Vec3 {
        self.x.fixed_rows::<3>(3).into_owned()
    }

    pub fn trace(&self) -> f64 {
        self.p.trace()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EkfConfig {
    /// Tag fix standard deviation (m).
    pub tag_sigma: f64,
    /// Flow velocity standard deviation (m/s).
    pub flow_sigma: f64,
    /// White-acceleration noise density (m/s^2).
    pub q_accel: f64,
}

impl Default for EkfConfig {
    fn default() -> Self {
        Self { tag_sigma: 0.05, flow_sigma: 0.1, q_accel: 0.5 }
    }
}

/// Constant-velocity prediction with white-acceleration process noise.
pub fn ekf_predict(s: &EkfState, dt: f64, q_accel: f64) -> Result<EkfState, LocalizationError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(LocalizationError::InvalidTimeStep(dt));
    }
    let i3 = Matrix3::<f64>::identity();
    let mut f = Covariance::identity();
    f.fixed_view_mut::<3, 3>(0, 3).copy_from(&(i3 * dt));

    let q2 = q_accel * q_accel;
    let mut q = Covariance::zeros();
    q.fixed_view_mut::<3, 3>(0, 0).copy_from(&(i3 * (q2 * dt.powi(3) / 3.0)));
    q.fixed_view_mut::<3, 3>(0, 3).copy_from(&(i3 * (q2 * dt.powi(2) / 2.0)));
    q.fixed_view_mut::<3, 3>(3, 0).copy_from(&(i3 * (q2 * dt.powi(2) / 2.0)));
    q.fixed_view_mut::<3, 3>(3, 3).copy_from(&(i3 * (q2 * dt)));

    let p = f * s.p * f.transpose() + q;
    Ok(EkfState { x: f * s.x, p: symmetrize(&p) })
}

fn symmetrize(p: &Covariance) -> Covariance {
    (p + p.transpose()) * 0.5
}

fn update_block(s: &EkfState, offset: usize, z: &Vec3, r: f64) -> Result<EkfState, LocalizationError> {
    if !z.iter().all(|c| c.is_finite()) {
        return Err(LocalizationError::NonFiniteMeasurement);
    }
    if !(r.is_finite() && r > 0.0) {
        return Err(LocalizationError::InvalidVariance(r));
    }
    let mut h = SMatrix::<f64, 3, 6>::zeros();
    h.fixed_view_mut::<3, 3>(0, offset).copy_from(&Matrix3::identity());
    let r_m = Matrix3::identity() * r;

    let innovation = z - h * s.x;
    let s_m = h * s.p * h.transpose() + r_m;
    let s_inv = s_m.try_inverse().ok_or(LocalizationError::NonFiniteMeasurement)?;
    let k = s.p * h.transpose() * s_inv;

    let x = s.x + k * innovation;
    // Joseph form keeps P symmetric PSD under rounding
    let i_kh = Covariance::identity() - k * h;
    let p = i_kh * s.p * i_kh.transpose() + k * r_m * k.transpose();
    Ok(EkfState { x, p: symmetrize(&p) })
}

pub fn ekf_update_position(s: &EkfState, z: &Vec3, r: f64) -> Result<EkfState, LocalizationError> {
    update_block(s, 0, z, r)
}

pub fn ekf_update_velocity(s: &EkfState, z: &Vec3, r: f64) -> Result<EkfState, LocalizationError> {
    update_block(s, 3, z, r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn map_with(id: u32, p: Vec3) -> TagMap {
        let mut m = TagMap::new();
        assert!(m.insert(id, Pose::from_position(p)));
        m
    }

    #[test]
    fn tag_inverse_examples() {
        let m = map_with(1, Vec3::zeros());
        let det = TagDetection { tag_id: 1, p_tag_body: Vec3::new(1.0, 0.0, 0.0), timestamp: 0.0 };
        assert_eq!(pose_from_tag(&det, &m, &Attitude::IDENTITY).unwrap(), Vec3::new(-1.0, 0.0, 0.0));

        let m = map_with(2, Vec3::new(5.0, 0.0, 0.0));
        let det = TagDetection { tag_id: 2, ..det };
        let got = pose_from_tag(&det, &m, &Attitude::from_yaw(PI / 2.0)).unwrap();
        // R(yaw=pi/2) * (1,0,0) = (0,1,0) by explicit multiply
        let r = crate::geometry::rotation_matrix(Attitude::from_yaw(PI / 2.0));
        let rp = Vec3::new(r[(0, 0)], r[(1, 0)], r[(2, 0)]);
        assert!((got - (Vec3::new(5.0, 0.0, 0.0) - rp)).norm() < 1e-12);
        assert!((got - Vec3::new(5.0, -1.0, 0.0)).norm() < 1e-12);

        let det = TagDetection { p_tag_body: Vec3::zeros(), ..det };
        assert_eq!(pose_from_tag(&det, &m, &Attitude::new(0.1, 0.2, 0.3)).unwrap(), Vec3::new(5.0, 0.0, 0.0));
    }

    #[test]
    fn unknown_tag() {
        let det = TagDetection { tag_id: 9, p_tag_body: Vec3::zeros(), timestamp: 0.0 };
        assert_eq!(pose_from_tag(&det, &TagMap::new(), &Attitude::IDENTITY), Err(LocalizationError::UnknownTag(9)));
    }

    #[test]
    fn duplicate_tag_ids_rejected() {
        let mut m = map_with(1, Vec3::zeros());
        assert!(!m.insert(1, Pose::from_position(Vec3::new(1.0, 1.0, 1.0))));
        assert_eq!(m.get(1).unwrap().position, Vec3::zeros());
    }

    #[test]
    fn flow_examples() {
        let zero = FlowSample { omega_x: 0.0, omega_y: 0.0, timestamp: 0.0 };
        assert_eq!(flow_to_world_velocity(&zero, (0.0, 0.0), 2.0, &Attitude::IDENTITY).unwrap(), Vec3::zeros());

        let fwd = FlowSample { omega_y: 0.1, ..zero };
        let v = flow_to_world_velocity(&fwd, (0.0, 0.0), 2.0, &Attitude::IDENTITY).unwrap();
        assert!((v - Vec3::new(0.2, 0.0, 0.0)).norm() < 1e-12);

        let rot = FlowSample { omega_x: 0.3, omega_y: -0.2, timestamp: 0.0 };
        let v = flow_to_world_velocity(&rot, (0.3, -0.2), 4.0, &Attitude::from_yaw(1.0)).unwrap();
        assert!(v.norm() < 1e-12);
    }

    #[test]
    fn flow_rejects_bad_height() {
        let f = FlowSample { omega_x: 0.0, omega_y: 0.0, timestamp: 0.0 };
        for h in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(matches!(
                flow_to_world_velocity(&f, (0.0, 0.0), h, &Attitude::IDENTITY),
                Err(LocalizationError::InvalidHeight(_))
            ));
        }
    }

    fn hm(source: HeightSource, value: f64, valid: bool) -> HeightMeasurement {
        HeightMeasurement { source, value, valid }
    }

    #[test]
    fn height_rules() {
        let d = hm(HeightSource::DepthCamera, 5.0, true);
        assert_eq!(fuse_height(Some(&d), None, true).unwrap().value, 5.0);

        let d = hm(HeightSource::DepthCamera, 12.0, true);
        let l = hm(HeightSource::Lidar2D, 12.0, true);
        let fix = fuse_height(Some(&d), Some(&l), true).unwrap();
        assert_eq!((fix.value, fix.source), (12.0, HeightSource::Lidar2D));

        let d = hm(HeightSource::DepthCamera, 3.0, false);
        let l = hm(HeightSource::Lidar2D, 3.0, false);
        assert_eq!(fuse_height(Some(&d), Some(&l), true), Err(LocalizationError::NoHeightAvailable));
        assert_eq!(fuse_height(None, None, false), Err(LocalizationError::NoHeightAvailable));
    }

    #[test]
    fn height_source_priority() {
        let d = hm(HeightSource::DepthCamera, 4.0, true);
        let l = hm(HeightSource::Lidar2D, 4.1, true);
        assert_eq!(fuse_height(Some(&d), Some(&l), true).unwrap().source, HeightSource::DepthCamera);
        assert_eq!(fuse_height(Some(&d), Some(&l), false).unwrap().source, HeightSource::Lidar2D);
        let far = hm(HeightSource::Lidar2D, 20.5, true);
        assert!(fuse_height(None, Some(&far), false).is_err());
    }

    #[test]
    fn manager_nominal_stays_on_tags() {
        let mut st = LocalizationManagerState::new(Vec3::zeros());
        let cfg = ManagerConfig::default();
        for k in 0..20 {
            let fix = Vec3::new(0.01 * k as f64, 0.0, 2.0);
            let out = manager_step(&mut st, &cfg, Some(fix), Some(Vec3::new(0.1, 0.0, 0.0)), 0.1, MissionStage::Search);
            assert_eq!(out.modality, Modality::TagRelative);
            assert!(!out.switched);
        }
    }

    #[test]
    fn manager_falls_back_after_threshold_with_continuity() {
        let mut st = LocalizationManagerState::new(Vec3::new(1.0, 1.0, 2.0));
        let cfg = ManagerConfig::default();
        let v = Vec3::new(0.5, 0.0, 0.0);
        let dt = 0.1;
        for _ in 0..3 {
            manager_step(&mut st, &cfg, Some(Vec3::new(1.0, 1.0, 2.0)), Some(v), dt, MissionStage::Search);
        }
        let mut prev = st.last_pose.position;
        for k in 1..=cfg.miss_threshold + 1 {
            let out = manager_step(&mut st, &cfg, None, Some(v), dt, MissionStage::Search);
            if k <= cfg.miss_threshold {
                assert_eq!(out.modality, Modality::TagRelative);
            } else {
                assert!(out.switched);
                assert_eq!(out.modality, Modality::OpticalFlow);
            }
            assert!((out.position - prev - v * dt).norm() < 1e-12);
            prev = out.position;
        }
    }

    #[test]
    fn retrieval_stage_forces_flow() {
        let mut st = LocalizationManagerState::new(Vec3::zeros());
        let cfg = ManagerConfig::default();
        let out = manager_step(&mut st, &cfg, Some(Vec3::zeros()), Some(Vec3::zeros()), 0.1, MissionStage::Search);
        assert_eq!(out.modality, Modality::TagRelative);
        let out = manager_step(&mut st, &cfg, Some(Vec3::zeros()), Some(Vec3::zeros()), 0.1, MissionStage::HexapodApproach);
        assert!(out.switched);
        assert_eq!(out.modality, Modality::OpticalFlow);
        for _ in 0..30 {
            let out = manager_step(&mut st, &cfg, Some(Vec3::zeros()), Some(Vec3::zeros()), 0.1, MissionStage::Grasp);
            assert_eq!(out.modality, Modality::OpticalFlow);
        }
    }

    #[test]
    fn recovery_needs_consecutive_fixes_and_keeps_pose() {
        let mut st = LocalizationManagerState::new(Vec3::zeros());
        let cfg = ManagerConfig::default();
        for _ in 0..10 {
            manager_step(&mut st, &cfg, None, Some(Vec3::zeros()), 0.1, MissionStage::Search);
        }
        assert_eq!(st.active, Modality::OpticalFlow);
        let far_fix = Vec3::new(0.2, -0.1, 0.0);
        for k in 1..=cfg.recover_threshold {
            let out = manager_step(&mut st, &cfg, Some(far_fix), Some(Vec3::zeros()), 0.1, MissionStage::ReturnToBase);
            assert_eq!(out.switched, k == cfg.recover_threshold);
            assert!(out.position.norm() < 1e-12);
        }
        assert_eq!(st.active, Modality::TagRelative);
        assert!((st.origin_offset + far_fix).norm() < 1e-12);
        let out = manager_step(&mut st, &cfg, Some(far_fix + Vec3::new(0.05, 0.0, 0.0)), None, 0.1, MissionStage::ReturnToBase);
        assert!((out.position - Vec3::new(0.05, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn manager_speed_limit() {
        let mut st = LocalizationManagerState::new(Vec3::zeros());
        let cfg = ManagerConfig::default();
        let out = manager_step(&mut st, &cfg, Some(Vec3::new(10.0, 0.0, 0.0)), None, 0.1, MissionStage::Search);
        assert!(out.degraded);
        assert!((out.position.norm() - cfg.max_speed * 0.1).abs() < 1e-12);
    }

    #[test]
    fn ekf_predict_examples() {
        let s = EkfState::new(Vec3::new(1.0, 2.0, 3.0), Vec3::zeros(), 0.1, 0.1);
        let p = ekf_predict(&s, 1.0, 0.5).unwrap();
        assert_eq!(p.position(), s.position());
        assert!(p.trace() > s.trace());

        let s = EkfState::new(Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), 0.1, 0.1);
        let p = ekf_predict(&s, 2.0, 0.5).unwrap();
        assert!((p.position() - Vec3::new(2.0, 0.0, 0.0)).norm() < 1e-12);
        assert!(ekf_predict(&s, 0.0, 0.5).is_err());
    }

    #[test]
    fn ekf_update_examples() {
        let s = ekf_predict(&EkfState::new(Vec3::new(1.0, 1.0, 1.0), Vec3::new(0.2, 0.0, 0.0), 1.0, 1.0), 0.1, 0.5).unwrap();
        let u = ekf_update_position(&s, &s.position(), 0.01).unwrap();
        assert!((u.x - s.x).norm() < 1e-12);
        assert!(u.trace() < s.trace());

        let u = ekf_update_velocity(&s, &Vec3::new(9.0, 9.0, 9.0), 1e12).unwrap();
        assert!((u.x - s.x).norm() < 1e-6);

        assert_eq!(ekf_update_position(&s, &Vec3::new(f64::NAN, 0.0, 0.0), 1.0), Err(LocalizationError::NonFiniteMeasurement));
        assert!(matches!(ekf_update_position(&s, &Vec3::zeros(), 0.0), Err(LocalizationError::InvalidVariance(_))));
    }
}
