//! Back-projection of 2D detections into the body frame, a simulated
//! detector, and a SORT tracker operating on 3D centroids.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{inverse_transform_point, transform_point, Attitude, FrameId, Pose, Vec3};
use crate::localization::{ekf_predict, ekf_update_position, EkfState};
use crate::rng::NoiseStream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerceptionError {
    #[error("depth must be finite and positive, got {0}")]
    InvalidDepth(f64),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self { fx: 400.0, fy: 400.0, cx: 320.0, cy: 240.0, width: 640, height: 480 }
    }
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<(), PerceptionError> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(PerceptionError::InvalidIntrinsics("focal lengths must be positive"));
        }
        if !(0.0..f64::from(self.width)).contains(&self.cx) || !(0.0..f64::from(self.height)).contains(&self.cy) {
            return Err(PerceptionError::InvalidIntrinsics("principal point outside the image"));
        }
        Ok(())
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        (0.0..f64::from(self.width)).contains(&u) && (0.0..f64::from(self.height)).contains(&v)
    }

    /// Pinhole projection of a camera-frame point; `None` behind the camera.
    pub fn project(&self, p_cam: &Vec3) -> Option<(f64, f64)> {
        if p_cam.z <= 0.0 {
            return None;
        }
        Some((self.fx * p_cam.x / p_cam.z + self.cx, self.fy * p_cam.y / p_cam.z + self.cy))
    }
}

/// Downward-looking camera: optical axis along body -z, 0.1 m below the body origin.
pub fn down_camera_pose() -> Pose {
    Pose { position: Vec3::new(0.0, 0.0, -0.1), attitude: Attitude::new(std::f64::consts::PI, 0.0, 0.0), frame: FrameId::Body }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection2D {
    pub u: f64,
    pub v: f64,
    pub w: f64,
    pub h: f64,
    pub class_id: u32,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection3D {
    pub p_body: Vec3,
    pub class_id: u32,
    pub confidence: f64,
}

pub fn project_to_body(
    det: &Detection2D,
    depth: f64,
    intr: &CameraIntrinsics,
    cam_pose_in_body: &Pose,
) -> Result<Detection3D, PerceptionError> {
    if !(depth.is_finite() && depth > 0.0) {
        return Err(PerceptionError::InvalidDepth(depth));
    }
    let p_cam = Vec3::new((det.u - intr.cx) * depth / intr.fx, (det.v - intr.cy) * depth / intr.fy, depth);
    Ok(Detection3D { p_body: transform_point(cam_pose_in_body, &p_cam), class_id: det.class_id, confidence: det.confidence })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorModel {
    /// Gaussian noise on the detected pixel centre (px).
    pub pixel_sigma: f64,
    /// Relative depth noise.
    pub depth_sigma: f64,
    pub miss_prob: f64,
    /// Probability of one spurious detection per frame.
    pub false_positive_prob: f64,
    pub class_id: u32,
    /// Apparent object size (m), used for the box extents.
    pub object_size: f64,
}

impl Default for DetectorModel {
    fn default() -> Self {
        Self { pixel_sigma: 1.0, depth_sigma: 0.01, miss_prob: 0.05, false_positive_prob: 0.02, class_id: 0, object_size: 0.3 }
    }
}

/// One detector frame: the noisy image-plane view of `target_body` plus at
/// most one false positive at a uniform pixel on the background plane.
/// Returns detections with their sampled depth.
pub fn simulate_detections(
    target_body: Option<Vec3>,
    background_depth: f64,
    model: &DetectorModel,
    intr: &CameraIntrinsics,
    cam_pose_in_body: &Pose,
    rng: &mut NoiseStream,
) -> Vec<(Detection2D, f64)> {
    let mut out = Vec::new();
    // fixed draw order: miss, pixel noise x2, depth noise, fp flag, fp u, fp v
    let missed = rng.bernoulli(model.miss_prob);
    let (nu, nv, nd) = (rng.normal(model.pixel_sigma), rng.normal(model.pixel_sigma), rng.normal(model.depth_sigma));
    if let Some(p_cam) = target_body.map(|p| inverse_transform_point(cam_pose_in_body, &p)) {
        if let Some((u, v)) = intr.project(&p_cam) {
            let (u, v) = (u + nu, v + nv);
            if !missed && intr.contains(u, v) {
                let extent = model.object_size * intr.fx / p_cam.z;
                let det = Detection2D { u, v, w: extent, h: extent, class_id: model.class_id, confidence: 0.9 };
                out.push((det, (p_cam.z * (1.0 + nd)).max(1e-3)));
            }
        }
    }
    let fp = rng.bernoulli(model.false_positive_prob);
    let (fu, fv) = (rng.uniform_range(0.0, f64::from(intr.width)), rng.uniform_range(0.0, f64::from(intr.height)));
    if fp && background_depth.is_finite() && background_depth > 0.0 {
        let extent = model.object_size * intr.fx / background_depth;
        let det = Detection2D { u: fu, v: fv, w: extent, h: extent, class_id: model.class_id, confidence: 0.4 };
        out.push((det, background_depth));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    /// Association gate on centroid distance (m).
    pub gate: f64,
    pub max_age: u32,
    pub min_hits: u32,
    /// Frame period (s).
    pub dt: f64,
    pub q_accel: f64,
    /// Measurement variance of a 3D detection (m^2).
    pub meas_var: f64,
    pub init_vel_var: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self { gate: 1.0, max_age: 5, min_hits: 3, dt: 0.1, q_accel: 2.0, meas_var: 0.05 * 0.05, init_vel_var: 4.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub kf: EkfState,
    pub hits: u32,
    pub age: u32,
    pub time_since_update: u32,
    pub class_id: u32,
}

impl Track {
    pub fn position(&self) -> Vec3 {
        self.kf.position()
    }

    pub fn is_confirmed(&self, cfg: &TrackerConfig) -> bool {
        self.hits >= cfg.min_hits
    }
}

const UNASSIGNED: usize = usize::MAX;

/// Minimum-cost assignment on a dense `rows x cols` cost matrix (Kuhn-Munkres
/// with potentials). Returns, for every row, its column or `None` when there
/// are more rows than columns.
pub fn hungarian(cost: &DMatrix<f64>) -> Vec<Option<usize>> {
    let (rows, cols) = cost.shape();
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    if rows > cols {
        let t = hungarian(&cost.transpose());
        let mut out = vec![None; rows];
        for (c, r) in t.into_iter().enumerate() {
            if let Some(r) = r {
                out[r] = Some(c);
            }
        }
        return out;
    }
    let (n, m) = (rows, cols);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = Some(j - 1);
        }
    }
    out
}

/// Gated association of tracks (rows) to detections (columns). Among all
/// matchings that use only pairs within `gate`, picks one with the most
/// pairs and, among those, the least total distance.
pub fn associate(dist: &DMatrix<f64>, gate: f64) -> Vec<(usize, usize)> {
    let (rows, cols) = dist.shape();
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    let max_pairs = rows.min(cols) as f64;
    let penalty = (max_pairs + 1.0) * gate.max(1.0) * 4.0;
    let cost = dist.map(|d| if d <= gate { d } else { penalty });
    hungarian(&cost)
        .into_iter()
        .enumerate()
        .filter_map(|(r, c)| c.map(|c| (r, c)))
        .filter(|&(r, c)| dist[(r, c)] <= gate)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Assignment {
    pub detection: usize,
    pub track_id: u64,
    /// False when the detection spawned a new track.
    pub matched: bool,
}

#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    tracks: Vec<Track>,
    next_id: u64,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Self {
        Self { cfg, tracks: Vec::new(), next_id: 1 }
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn confirmed(&self) -> impl Iterator<Item = &Track> {
        self.tracks.iter().filter(|t| t.is_confirmed(&self.cfg))
    }

    /// Ids issued so far are exactly `1 .. next_id()`.
    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    pub fn step(&mut self, detections: &[Detection3D]) -> Vec<Assignment> {
        let cfg = self.cfg;
        for t in &mut self.tracks {
            t.kf = ekf_predict(&t.kf, cfg.dt, cfg.q_accel).expect("tracker dt is validated positive");
            t.age += 1;
            t.time_since_update += 1;
        }

        let dist = DMatrix::from_fn(self.tracks.len(), detections.len(), |r, c| {
            (self.tracks[r].position() - detections[c].p_body).norm()
        });
        let pairs = associate(&dist, cfg.gate);

        let mut det_track = vec![UNASSIGNED; detections.len()];
        let mut out = Vec::with_capacity(detections.len());
        for &(r, c) in &pairs {
            let t = &mut self.tracks[r];
            if let Ok(kf) = ekf_update_position(&t.kf, &detections[c].p_body, cfg.meas_var) {
                t.kf = kf;
            }
            t.hits += 1;
            t.time_since_update = 0;
            det_track[c] = r;
            out.push(Assignment { detection: c, track_id: t.id, matched: true });
        }
        for (c, d) in detections.iter().enumerate() {
            if det_track[c] != UNASSIGNED || !d.p_body.iter().all(|x| x.is_finite()) {
                continue;
            }
            let id = self.next_id;
            self.next_id += 1;
            self.tracks.push(Track {
                id,
                kf: EkfState::new(d.p_body, Vec3::zeros(), cfg.meas_var, cfg.init_vel_var),
                hits: 1,
                age: 0,
                time_since_update: 0,
                class_id: d.class_id,
            });
            out.push(Assignment { detection: c, track_id: id, matched: false });
        }
        self.tracks.retain(|t| t.time_since_update <= cfg.max_age);
        out.sort_by_key(|a| a.detection);
        out
    }
}

pub fn tracker_step(tracker: &mut Tracker, detections: &[Detection3D]) -> Vec<Assignment> {
    tracker.step(detections)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn det3(x: f64, y: f64, z: f64) -> Detection3D {
        Detection3D { p_body: Vec3::new(x, y, z), class_id: 0, confidence: 1.0 }
    }

    fn det2(u: f64, v: f64) -> Detection2D {
        Detection2D { u, v, w: 10.0, h: 10.0, class_id: 0, confidence: 1.0 }
    }

    /// Exhaustive search over partial matchings: most gated pairs, then least cost.
    fn brute_force(dist: &DMatrix<f64>, gate: f64) -> (usize, f64) {
        fn rec(r: usize, dist: &DMatrix<f64>, gate: f64, used: &mut Vec<bool>, n: usize, cost: f64, best: &mut (usize, f64)) {
            if r == dist.nrows() {
                if n > best.0 || (n == best.0 && cost < best.1) {
                    *best = (n, cost);
                }
                return;
            }
            rec(r + 1, dist, gate, used, n, cost, best);
            for c in 0..dist.ncols() {
                if !used[c] && dist[(r, c)] <= gate {
                    used[c] = true;
                    rec(r + 1, dist, gate, used, n + 1, cost + dist[(r, c)], best);
                    used[c] = false;
                }
            }
        }
        let mut best = (0, 0.0);
        rec(0, dist, gate, &mut vec![false; dist.ncols()], 0, 0.0, &mut best);
        best
    }

    #[test]
    fn principal_ray() {
        let d = project_to_body(&det2(320.0, 240.0), 3.0, &CameraIntrinsics::default(), &Pose::identity()).unwrap();
        assert!((d.p_body - Vec3::new(0.0, 0.0, 3.0)).norm() < 1e-12);
    }

    #[test]
    fn unit_tangent() {
        let d = project_to_body(&det2(720.0, 240.0), 2.0, &CameraIntrinsics::default(), &Pose::identity()).unwrap();
        assert!((d.p_body - Vec3::new(2.0, 0.0, 2.0)).norm() < 1e-12);
    }

    #[test]
    fn invalid_depth() {
        let i = CameraIntrinsics::default();
        for d in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(matches!(project_to_body(&det2(1.0, 1.0), d, &i, &Pose::identity()), Err(PerceptionError::InvalidDepth(_))));
        }
    }

    #[test]
    fn down_camera_looks_down() {
        let d = project_to_body(&det2(320.0, 240.0), 5.0, &CameraIntrinsics::default(), &down_camera_pose()).unwrap();
        assert!((d.p_body - Vec3::new(0.0, 0.0, -5.1)).norm() < 1e-12);
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::default().validate().is_ok());
        assert!(CameraIntrinsics { fx: 0.0, ..Default::default() }.validate().is_err());
        assert!(CameraIntrinsics { cx: 640.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn single_track_keeps_id() {
        let mut tr = Tracker::new(TrackerConfig::default());
        let a = tr.step(&[det3(0.0, 0.0, 0.0)]);
        let b = tr.step(&[det3(0.1, 0.0, 0.0)]);
        assert_eq!(a[0].track_id, b[0].track_id);
        assert!(b[0].matched);
    }

    #[test]
    fn gated_detection_spawns_track() {
        let mut tr = Tracker::new(TrackerConfig::default());
        let a = tr.step(&[det3(0.0, 0.0, 0.0)]);
        let b = tr.step(&[det3(5.0, 0.0, 0.0)]);
        assert_ne!(a[0].track_id, b[0].track_id);
        assert!(!b[0].matched);
    }

    #[test]
    fn two_tracks_match_brute_force() {
        let mut tr = Tracker::new(TrackerConfig::default());
        tr.step(&[det3(0.0, 0.0, 0.0), det3(3.0, 0.0, 0.0)]);
        let ids: Vec<u64> = tr.tracks().iter().map(|t| t.id).collect();
        let out = tr.step(&[det3(2.9, 0.1, 0.0), det3(0.1, -0.1, 0.0)]);
        assert_eq!(out[0].track_id, ids[1]);
        assert_eq!(out[1].track_id, ids[0]);
    }

    #[test]
    fn confirmation_and_deletion() {
        let cfg = TrackerConfig::default();
        let mut tr = Tracker::new(cfg);
        for _ in 0..3 {
            tr.step(&[det3(1.0, 1.0, 1.0)]);
        }
        assert_eq!(tr.confirmed().count(), 1);
        for _ in 0..cfg.max_age {
            tr.step(&[]);
        }
        assert_eq!(tr.tracks().len(), 1);
        tr.step(&[]);
        assert!(tr.tracks().is_empty());
    }

    #[test]
    fn hungarian_square_known() {
        let c = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0]);
        assert_eq!(hungarian(&c), vec![Some(1), Some(0), Some(2)]);
        let wide = DMatrix::from_row_slice(2, 3, &[5.0, 1.0, 9.0, 1.0, 2.0, 9.0]);
        assert_eq!(hungarian(&wide), vec![Some(1), Some(0)]);
        assert_eq!(hungarian(&wide.transpose()), vec![Some(1), Some(0), None]);
    }

    proptest! {
        #[test]
        fn reprojection_recovers_pixel(u in 0.0f64..640.0, v in 0.0f64..480.0, d in 0.2f64..30.0) {
            let i = CameraIntrinsics::default();
            let cam = down_camera_pose();
            let p = project_to_body(&det2(u, v), d, &i, &cam).unwrap().p_body;
            let (pu, pv) = i.project(&inverse_transform_point(&cam, &p)).unwrap();
            prop_assert!((pu - u).abs() < 1e-6 && (pv - v).abs() < 1e-6);
        }

        #[test]
        fn association_is_optimal(
            rows in 0usize..=6,
            cols in 0usize..=6,
            seed in any::<u64>(),
        ) {
            let mut rng = NoiseStream::new(seed, "assoc");
            let dist = DMatrix::from_fn(rows, cols, |_, _| rng.uniform_range(0.0, 2.0));
            let pairs = associate(&dist, 1.0);
            let (n, cost) = brute_force(&dist, 1.0);
            prop_assert_eq!(pairs.len(), n);
            let got: f64 = pairs.iter().map(|&(r, c)| dist[(r, c)]).sum();
            prop_assert!((got - cost).abs() < 1e-9);
        }
    }
}
