//! Hexapod grasp predicates and the UAV-side winch controller.

use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::planning::WinchMode;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UltrasonicReading {
    Valid(f64),
    Invalid,
}

impl UltrasonicReading {
    pub fn valid(d: f64) -> Self {
        if d.is_finite() && d >= 0.0 {
            UltrasonicReading::Valid(d)
        } else {
            UltrasonicReading::Invalid
        }
    }

    pub fn distance(&self) -> Option<f64> {
        match *self {
            UltrasonicReading::Valid(d) => Some(d),
            UltrasonicReading::Invalid => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HexapodSensors {
    pub ultra_front: UltrasonicReading,
    pub ultra_rear: UltrasonicReading,
    /// Aggregate load over all legs (N).
    pub load: f64,
    /// Angle between body z-axis and gravity (rad).
    pub tilt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GraspState {
    Searching,
    Centered,
    Closing,
    Holding,
    Lost,
}

impl GraspState {
    pub fn code(self) -> u8 {
        match self {
            GraspState::Searching => 0,
            GraspState::Centered => 1,
            GraspState::Closing => 2,
            GraspState::Holding => 3,
            GraspState::Lost => 4,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(GraspState::Searching),
            1 => Some(GraspState::Centered),
            2 => Some(GraspState::Closing),
            3 => Some(GraspState::Holding),
            4 => Some(GraspState::Lost),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoadThresholds {
    pub grounded: f64,
    pub airborne: f64,
}

impl Default for LoadThresholds {
    fn default() -> Self {
        Self { grounded: 5.0, airborne: 10.0 }
    }
}

/// True iff at least one ultrasonic reading is valid and every valid
/// reading is within `grasp_range`.
pub fn target_centered(s: &HexapodSensors, grasp_range: f64) -> bool {
    let readings = [s.ultra_front.distance(), s.ultra_rear.distance()];
    let mut any = false;
    for d in readings.into_iter().flatten() {
        if d > grasp_range {
            return false;
        }
        any = true;
    }
    any
}

pub fn grasp_confirmed(load: f64, airborne: bool, thresholds: &LoadThresholds) -> bool {
    let threshold = if airborne { thresholds.airborne } else { thresholds.grounded };
    load >= threshold
}

/// Closed bound: `tilt == tilt_limit` still counts as stable.
pub fn stability_check(tilt: f64, tilt_limit: f64) -> bool {
    tilt <= tilt_limit
}

impl HexapodSensors {
    pub fn centered(&self, grasp_range: f64) -> bool {
        target_centered(self, grasp_range)
    }

    pub fn grasp_confirmed(&self, airborne: bool, thresholds: &LoadThresholds) -> bool {
        grasp_confirmed(self.load, airborne, thresholds)
    }

    pub fn stable(&self, tilt_limit: f64) -> bool {
        stability_check(self.tilt, tilt_limit)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WinchParams {
    /// Proportional gain (1/s).
    pub k_p: f64,
    /// m/s
    pub rate_max: f64,
    pub dock_epsilon: f64,
    pub dock_tolerance: f64,
}

impl Default for WinchParams {
    fn default() -> Self {
        Self { k_p: 1.0, rate_max: 0.5, dock_epsilon: 0.01, dock_tolerance: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WinchState {
    pub cable_length: f64,
    pub rate: f64,
    pub docked: bool,
    /// Set when the last step ran without ultrasonic feedback.
    pub open_loop: bool,
}

impl WinchState {
    pub fn docked() -> Self {
        Self { cable_length: 0.0, rate: 0.0, docked: true, open_loop: false }
    }
}

/// One control step of the winch.
///
/// `target_length` is the cable length to pay out when lowering (the UAV
/// height over the deck). The ultrasonic range to the hexapod is the
/// measured length; without it the controller runs open loop on its own
/// cable count at half the rate limit.
pub fn winch_step(
    w: &WinchState,
    params: &WinchParams,
    target_length: f64,
    hexapod_marker_offset: Option<Vec3>,
    ultra_range_to_hexapod: Option<f64>,
    dt: f64,
    mode: WinchMode,
) -> WinchState {
    if mode == WinchMode::Hold {
        return WinchState { rate: 0.0, ..*w };
    }
    let measured = ultra_range_to_hexapod.filter(|r| r.is_finite() && *r >= 0.0);
    let open_loop = measured.is_none();
    let rate_limit = if open_loop { params.rate_max * 0.5 } else { params.rate_max };
    let length = measured.unwrap_or(w.cable_length);
    let goal = match mode {
        WinchMode::Lower => target_length.max(0.0),
        _ => 0.0,
    };
    let rate = (params.k_p * (goal - length)).clamp(-rate_limit, rate_limit);
    let cable_length = (w.cable_length + rate * dt).max(0.0);
    let aligned = hexapod_marker_offset.is_some_and(|o| o.norm() <= params.dock_tolerance);
    WinchState { cable_length, rate, docked: cable_length <= params.dock_epsilon && aligned, open_loop }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sensors(front: Option<f64>, rear: Option<f64>) -> HexapodSensors {
        let r = |d: Option<f64>| d.map(UltrasonicReading::valid).unwrap_or(UltrasonicReading::Invalid);
        HexapodSensors { ultra_front: r(front), ultra_rear: r(rear), load: 0.0, tilt: 0.0 }
    }

    #[test]
    fn centered_truth_table() {
        assert!(target_centered(&sensors(Some(0.10), Some(0.12)), 0.15));
        assert!(target_centered(&sensors(None, Some(0.12)), 0.15));
        assert!(target_centered(&sensors(Some(0.12), None), 0.15));
        assert!(!target_centered(&sensors(None, None), 0.15));
        assert!(!target_centered(&sensors(Some(0.10), Some(0.30)), 0.15));
    }

    #[test]
    fn load_profiles() {
        let t = LoadThresholds::default();
        assert!(grasp_confirmed(20.0, false, &t));
        assert!(!grasp_confirmed(0.0, false, &LoadThresholds { grounded: 0.1, airborne: 0.2 }));
        assert!(!grasp_confirmed(6.0, true, &t));
        assert!(grasp_confirmed(6.0, false, &t));
    }

    #[test]
    fn tilt_bound_is_closed() {
        assert!(stability_check(0.0, 0.35));
        assert!(stability_check(0.35, 0.35));
        assert!(!stability_check(0.36, 0.35));
    }

    #[test]
    fn winch_hold() {
        let w = WinchState { cable_length: 1.2, rate: 0.3, docked: false, open_loop: false };
        let n = winch_step(&w, &WinchParams::default(), 3.0, None, None, 0.02, WinchMode::Hold);
        assert_eq!(n, WinchState { rate: 0.0, ..w });
    }

    #[test]
    fn winch_lower_monotone_and_bounded() {
        let p = WinchParams::default();
        let mut w = WinchState::docked();
        let dt = 0.02;
        for _ in 0..2000 {
            let n = winch_step(&w, &p, 3.0, Some(Vec3::zeros()), Some(w.cable_length), dt, WinchMode::Lower);
            assert!(n.cable_length >= w.cable_length);
            assert!(n.cable_length <= 3.0 + 1e-12);
            assert!(n.rate.abs() <= p.rate_max);
            w = n;
        }
        assert!((w.cable_length - 3.0).abs() < 1e-3);
        assert!(!w.docked);
    }

    #[test]
    fn winch_docking_predicate() {
        let p = WinchParams::default();
        let w = WinchState { cable_length: 0.005, rate: 0.0, docked: false, open_loop: false };
        let n = winch_step(&w, &p, 0.0, Some(Vec3::new(0.01, 0.0, 0.0)), Some(0.005), 0.02, WinchMode::Raise);
        assert!(n.docked);
        let n = winch_step(&w, &p, 0.0, Some(Vec3::new(0.2, 0.0, 0.0)), Some(0.005), 0.02, WinchMode::Raise);
        assert!(!n.docked);
        let n = winch_step(&w, &p, 0.0, None, Some(0.005), 0.02, WinchMode::Raise);
        assert!(!n.docked);
    }

    #[test]
    fn winch_open_loop_half_rate() {
        let p = WinchParams::default();
        let n = winch_step(&WinchState::docked(), &p, 5.0, None, None, 0.1, WinchMode::Lower);
        assert!(n.open_loop);
        assert!((n.rate - p.rate_max / 2.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn centered_is_symmetric(a in proptest::option::of(0.0f64..1.0), b in proptest::option::of(0.0f64..1.0), range in 0.0f64..1.0) {
            prop_assert_eq!(target_centered(&sensors(a, b), range), target_centered(&sensors(b, a), range));
        }

        #[test]
        fn winch_invariants(steps in proptest::collection::vec((0u8..3, 0.0f64..8.0, proptest::option::of(0.0f64..8.0)), 1..200)) {
            let p = WinchParams::default();
            let mut w = WinchState::docked();
            for (m, target, range) in steps {
                let mode = [WinchMode::Lower, WinchMode::Raise, WinchMode::Hold][m as usize];
                w = winch_step(&w, &p, target, Some(Vec3::zeros()), range, 0.05, mode);
                prop_assert!(w.cable_length >= 0.0);
                prop_assert!(w.rate.abs() <= p.rate_max);
                if w.docked {
                    prop_assert!(w.cable_length <= p.dock_epsilon);
                }
            }
        }
    }
}
