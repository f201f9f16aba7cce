//! Rigid-body poses and rotation helpers.
//!
//! World frame is x-east, y-north, z-up. Attitudes are intrinsic Z-Y-X
//! (yaw, then pitch, then roll), so `R = Rz(yaw) * Ry(pitch) * Rx(roll)`
//! maps body-frame vectors into the parent frame.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    if r <= -PI {
        r += TAU;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Attitude {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl Attitude {
    pub const IDENTITY: Attitude = Attitude { roll: 0.0, pitch: 0.0, yaw: 0.0 };

    pub fn new(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self { roll: wrap_angle(roll), pitch: wrap_angle(pitch), yaw: wrap_angle(yaw) }
    }

    pub fn from_yaw(yaw: f64) -> Self {
        Self::new(0.0, 0.0, yaw)
    }

    pub fn is_finite(&self) -> bool {
        self.roll.is_finite() && self.pitch.is_finite() && self.yaw.is_finite()
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        rotation_matrix(*self)
    }

    /// Angle between the body z-axis and the parent z-axis.
    pub fn tilt(&self) -> f64 {
        (self.roll.cos() * self.pitch.cos()).clamp(-1.0, 1.0).acos()
    }
}

/// `R = Rz(yaw) * Ry(pitch) * Rx(roll)`.
pub fn rotation_matrix(att: Attitude) -> Matrix3<f64> {
    let (sr, cr) = att.roll.sin_cos();
    let (sp, cp) = att.pitch.sin_cos();
    let (sy, cy) = att.yaw.sin_cos();
    Matrix3::new(
        cy * cp,
        cy * sp * sr - sy * cr,
        cy * sp * cr + sy * sr,
        sy * cp,
        sy * sp * sr + cy * cr,
        sy * sp * cr - cy * sr,
        -sp,
        cp * sr,
        cp * cr,
    )
}

/// Rotation about z only.
pub fn yaw_rotation(yaw: f64) -> Matrix3<f64> {
    let (s, c) = yaw.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Recovers Z-Y-X Euler angles from a rotation matrix (pitch away from +-pi/2).
pub fn attitude_from_matrix(r: &Matrix3<f64>) -> Attitude {
    let pitch = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
    let roll = r[(2, 1)].atan2(r[(2, 2)]);
    let yaw = r[(1, 0)].atan2(r[(0, 0)]);
    Attitude::new(roll, pitch, yaw)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum FrameId {
    #[default]
    World,
    Body,
    Camera,
    ReferenceFrame,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    #[serde(default)]
    pub attitude: Attitude,
    #[serde(default)]
    pub frame: FrameId,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self { position: Vec3::zeros(), attitude: Attitude::IDENTITY, frame: FrameId::World }
    }

    pub fn new(position: Vec3, attitude: Attitude) -> Self {
        Self { position, attitude, frame: FrameId::World }
    }

    pub fn from_position(position: Vec3) -> Self {
        Self::new(position, Attitude::IDENTITY)
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|c| c.is_finite()) && self.attitude.is_finite()
    }

    /// `self ∘ child`: the child pose expressed in this pose's parent frame.
    pub fn compose(&self, child: &Pose) -> Pose {
        let r = self.attitude.rotation();
        Pose {
            position: r * child.position + self.position,
            attitude: attitude_from_matrix(&(r * child.attitude.rotation())),
            frame: self.frame,
        }
    }
}

pub fn transform_point(pose: &Pose, p_local: &Vec3) -> Vec3 {
    pose.attitude.rotation() * p_local + pose.position
}

pub fn inverse_transform_point(pose: &Pose, p_parent: &Vec3) -> Vec3 {
    pose.attitude.rotation().transpose() * (p_parent - pose.position)
}
