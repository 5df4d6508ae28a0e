//! Kinematic quadrotor and car models stepped at a fixed tick.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::world::EnuPose;

pub const DEFAULT_DT_S: f64 = 0.1;

// Remaining distances below this count as arrived.
const ARRIVE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleType {
    Uav,
    Ugv,
}

impl VehicleType {
    pub fn code(self) -> u8 {
        match self {
            VehicleType::Uav => 0,
            VehicleType::Ugv => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(VehicleType::Uav),
            1 => Some(VehicleType::Ugv),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Setpoint {
    Target(EnuPose),
    /// Orbit `center` (at `center.up`) until `arc_deg` has been swept.
    Circle { center: EnuPose, radius_m: f64, arc_deg: f64 },
    Hold { duration_s: f64 },
    /// Descend in place to the ground. A car just stops.
    Land,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UavLimits {
    pub cruise_speed: f64,
    pub descend_speed: f64,
    pub ascend_speed: f64,
    /// Tangential speed of the orbit reference point.
    pub circle_speed: f64,
}

impl Default for UavLimits {
    fn default() -> Self {
        Self { cruise_speed: 1.5, descend_speed: 0.25, ascend_speed: 2.5, circle_speed: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircleProgress {
    pub center_east: f64,
    pub center_north: f64,
    pub radius_m: f64,
    /// Bearing of the reference point from the center, radians.
    pub angle: f64,
    pub swept_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UavState {
    pub pose: EnuPose,
    pub circle: Option<CircleProgress>,
    /// True once the current setpoint has been fully achieved.
    pub settled: bool,
}

impl UavState {
    pub fn at(pose: EnuPose) -> Self {
        Self { pose, circle: None, settled: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UgvLimits {
    pub speed: f64,
    pub min_turn_radius_m: f64,
    pub arrival_tol_m: f64,
}

impl Default for UgvLimits {
    fn default() -> Self {
        Self { speed: 1.0, min_turn_radius_m: 1.0, arrival_tol_m: 0.3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UgvState {
    pub pose: EnuPose,
    pub speed: f64,
    pub settled: bool,
    /// Driving straight to get clear of a target that sits inside the turning circle.
    #[serde(default)]
    pub escaping: bool,
}

impl UgvState {
    pub fn at(pose: EnuPose) -> Self {
        Self { pose, speed: 0.0, settled: true, escaping: false }
    }
}

fn approach(current: f64, target: f64, max_step: f64) -> (f64, bool) {
    let d = target - current;
    if d.abs() <= max_step + ARRIVE_EPS {
        (target, true)
    } else {
        (current + max_step * d.signum(), false)
    }
}

/// Move horizontally toward `(e, n)` by at most `max_step`. Returns the new
/// pose (yaw following the motion) and whether the point was reached.
fn approach_horizontal(pose: EnuPose, e: f64, n: f64, max_step: f64) -> (EnuPose, bool) {
    let (de, dn) = (e - pose.east, n - pose.north);
    let dist = de.hypot(dn);
    if dist <= ARRIVE_EPS {
        return (EnuPose { east: e, north: n, ..pose }, true);
    }
    let yaw = dn.atan2(de);
    if dist <= max_step + ARRIVE_EPS {
        return (EnuPose { east: e, north: n, yaw, ..pose }, true);
    }
    let k = max_step / dist;
    (EnuPose { east: pose.east + de * k, north: pose.north + dn * k, yaw, ..pose }, false)
}

fn vertical_step(up: f64, target: f64, limits: &UavLimits, dt: f64) -> (f64, bool) {
    let rate = if target >= up { limits.ascend_speed } else { limits.descend_speed };
    approach(up, target, rate * dt)
}

fn wrap_angle(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(TAU) - PI;
    if r <= -PI {
        r + TAU
    } else {
        r
    }
}

pub fn step_uav(state: &UavState, setpoint: &Setpoint, limits: &UavLimits, dt: f64) -> UavState {
    debug_assert!(dt > 0.0);
    let pose = state.pose;
    match *setpoint {
        Setpoint::Target(t) => {
            let (moved, h_done) = approach_horizontal(pose, t.east, t.north, limits.cruise_speed * dt);
            let (up, v_done) = vertical_step(pose.up, t.up.max(0.0), limits, dt);
            UavState { pose: EnuPose { up, ..moved }, circle: None, settled: h_done && v_done }
        }
        Setpoint::Circle { center, radius_m, arc_deg } => {
            let mut progress = match state.circle {
                Some(p) if p.center_east == center.east && p.center_north == center.north && p.radius_m == radius_m => p,
                _ => {
                    let (de, dn) = (pose.east - center.east, pose.north - center.north);
                    let angle = if de.hypot(dn) > ARRIVE_EPS { dn.atan2(de) } else { pose.yaw };
                    CircleProgress {
                        center_east: center.east,
                        center_north: center.north,
                        radius_m,
                        angle,
                        swept_deg: 0.0,
                    }
                }
            };
            let done = progress.swept_deg >= arc_deg - ARRIVE_EPS;
            if !done {
                let dtheta = limits.circle_speed * dt / radius_m.max(ARRIVE_EPS);
                progress.angle = wrap_angle(progress.angle + dtheta);
                progress.swept_deg += dtheta.to_degrees();
            }
            let e = center.east + radius_m * progress.angle.cos();
            let n = center.north + radius_m * progress.angle.sin();
            let (moved, _) = approach_horizontal(pose, e, n, limits.cruise_speed * dt);
            let (up, _) = vertical_step(pose.up, center.up.max(0.0), limits, dt);
            let settled = progress.swept_deg >= arc_deg - ARRIVE_EPS;
            UavState { pose: EnuPose { up, ..moved }, circle: Some(progress), settled }
        }
        Setpoint::Hold { .. } => UavState { pose, circle: None, settled: true },
        Setpoint::Land => {
            let (up, done) = approach(pose.up, 0.0, limits.descend_speed * dt);
            UavState { pose: EnuPose { up, ..pose }, circle: None, settled: done }
        }
    }
}

/// Unicycle step with a bounded turn rate. The car never reverses.
pub fn step_ugv(state: &UgvState, setpoint: &Setpoint, limits: &UgvLimits, dt: f64) -> UgvState {
    debug_assert!(dt > 0.0);
    let pose = state.pose;
    let stopped = UgvState { pose, speed: 0.0, settled: true, escaping: false };
    let target = match *setpoint {
        Setpoint::Target(t) => t,
        Setpoint::Circle { .. } | Setpoint::Hold { .. } | Setpoint::Land => return stopped,
    };
    let (de, dn) = (target.east - pose.east, target.north - pose.north);
    let dist = de.hypot(dn);
    if dist <= ARRIVE_EPS || (state.speed == 0.0 && dist <= limits.arrival_tol_m) {
        return stopped;
    }
    let step = limits.speed * dt;
    let bearing = dn.atan2(de);
    let err = wrap_angle(bearing - pose.yaw);
    if dist <= step + ARRIVE_EPS && err.abs() < PI / 2.0 {
        let arrived = EnuPose { east: target.east, north: target.north, yaw: bearing, ..pose };
        return UgvState { pose: arrived, speed: 0.0, settled: true, escaping: false };
    }
    let max_turn = limits.speed / limits.min_turn_radius_m * dt;
    // A target inside the turning circle on the turn side cannot be reached by
    // turning toward it. Drive straight until it is far enough to come about.
    let r = limits.min_turn_radius_m;
    let side = err.signum();
    let (ce, cn) = (pose.east - r * side * pose.yaw.sin(), pose.north + r * side * pose.yaw.cos());
    let inside = (target.east - ce).hypot(target.north - cn) < r;
    let escaping = if state.escaping { dist < 2.5 * r } else { inside && err.abs() > max_turn };
    let turn = if escaping { 0.0 } else { err.clamp(-max_turn, max_turn) };
    let yaw = wrap_angle(pose.yaw + turn);
    let moved = EnuPose {
        east: pose.east + step * yaw.cos(),
        north: pose.north + step * yaw.sin(),
        yaw,
        ..pose
    };
    UgvState { pose: moved, speed: limits.speed, settled: false, escaping }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ticks_until<S>(mut s: S, mut step: impl FnMut(&S) -> S, done: impl Fn(&S) -> bool) -> usize {
        for i in 1..100_000 {
            s = step(&s);
            if done(&s) {
                return i;
            }
        }
        panic!("never settled");
    }

    #[test]
    fn hold_is_a_fixed_point() {
        let s = UavState::at(EnuPose::new(3.0, 4.0, 1.5, 0.7));
        let next = step_uav(&s, &Setpoint::Hold { duration_s: 15.0 }, &UavLimits::default(), 0.1);
        assert_eq!(next.pose, s.pose);
    }

    #[test]
    fn descent_and_ascent_durations() {
        let lim = UavLimits::default();
        let s = UavState::at(EnuPose::at(0.0, 0.0, 3.5));
        let down = Setpoint::Target(EnuPose::at(0.0, 0.0, 1.5));
        let n = ticks_until(s, |s| step_uav(s, &down, &lim, 0.1), |s| s.settled);
        assert_abs_diff_eq!(n as f64 * 0.1, 8.0, epsilon = 0.1 + 1e-9);

        let s = UavState::at(EnuPose::at(0.0, 0.0, 1.5));
        let up = Setpoint::Target(EnuPose::at(0.0, 0.0, 3.5));
        let n = ticks_until(s, |s| step_uav(s, &up, &lim, 0.1), |s| s.settled);
        assert_abs_diff_eq!(n as f64 * 0.1, 0.8, epsilon = 0.1 + 1e-9);
    }

    #[test]
    fn cruise_yaw_follows_travel() {
        let lim = UavLimits::default();
        let s = UavState::at(EnuPose::at(0.0, 0.0, 3.5));
        let next = step_uav(&s, &Setpoint::Target(EnuPose::at(0.0, 10.0, 3.5)), &lim, 0.1);
        assert_abs_diff_eq!(next.pose.yaw, PI / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(next.pose.north, 0.15, epsilon = 1e-12);
    }

    #[test]
    fn circle_sweeps_requested_arc() {
        let lim = UavLimits::default();
        let center = EnuPose::at(10.0, 10.0, 1.5);
        let sp = Setpoint::Circle { center, radius_m: 2.0, arc_deg: 270.0 };
        let s = UavState::at(center);
        let n = ticks_until(s, |s| step_uav(s, &sp, &lim, 0.1), |s| s.settled);
        // 2*pi*2*0.75/0.5 = 18.85 s
        assert_eq!(n, 189);
        let mut s = s;
        for _ in 0..n {
            s = step_uav(&s, &sp, &lim, 0.1);
        }
        assert_abs_diff_eq!(s.pose.horizontal_distance(&center), 2.0, epsilon = 1e-6);
    }

    #[test]
    fn land_reaches_ground() {
        let lim = UavLimits::default();
        let s = UavState::at(EnuPose::at(0.0, 0.0, 1.0));
        let n = ticks_until(s, |s| step_uav(s, &Setpoint::Land, &lim, 0.1), |s| s.settled);
        assert_eq!(n, 40);
    }

    #[test]
    fn ugv_straight_line_and_arrival() {
        let lim = UgvLimits::default();
        let s = UgvState::at(EnuPose::new(0.0, 0.0, 0.0, 0.0));
        let sp = Setpoint::Target(EnuPose::at(10.0, 0.0, 0.0));
        let n = ticks_until(s, |s| step_ugv(s, &sp, &lim, 0.1), |s| s.settled);
        assert_abs_diff_eq!(n as f64 * 0.1, 10.0, epsilon = 0.1 + 1e-9);
        let mut s = s;
        for _ in 0..n {
            s = step_ugv(&s, &sp, &lim, 0.1);
        }
        assert_eq!(s.speed, 0.0);
        let again = step_ugv(&s, &sp, &lim, 0.1);
        assert_eq!(again.pose, s.pose);
    }

    #[test]
    fn ugv_turns_around_to_reach_target_behind() {
        let lim = UgvLimits::default();
        let mut s = UgvState::at(EnuPose::new(0.0, 0.0, 0.0, 0.0));
        let target = EnuPose::at(-5.0, 0.5, 0.0);
        let sp = Setpoint::Target(target);
        let mut last_bearing = 0.0;
        for _ in 0..1000 {
            last_bearing = (target.north - s.pose.north).atan2(target.east - s.pose.east);
            s = step_ugv(&s, &sp, &lim, 0.1);
            if s.settled {
                break;
            }
        }
        assert!(s.settled);
        assert!(wrap_angle(s.pose.yaw - last_bearing).abs() < 5f64.to_radians());
    }

    #[test]
    fn ugv_target_inside_turning_circle_is_reached() {
        let lim = UgvLimits::default();
        let mut s = UgvState::at(EnuPose::new(0.0, 0.0, 0.0, 0.0));
        let sp = Setpoint::Target(EnuPose::at(0.0, 0.8, 0.0));
        let mut settled = false;
        for _ in 0..1000 {
            s = step_ugv(&s, &sp, &lim, 0.1);
            if s.settled {
                settled = true;
                break;
            }
        }
        assert!(settled);
    }

    fn arb_pose() -> impl Strategy<Value = EnuPose> {
        (-30.0f64..30.0, -30.0f64..30.0, 0.0f64..6.0, -PI..PI).prop_map(|(e, n, u, y)| EnuPose::new(e, n, u, y))
    }

    fn arb_setpoint() -> impl Strategy<Value = Setpoint> {
        prop_oneof![
            arb_pose().prop_map(Setpoint::Target),
            (arb_pose(), 0.5f64..5.0, 10.0f64..360.0)
                .prop_map(|(center, radius_m, arc_deg)| Setpoint::Circle { center, radius_m, arc_deg }),
            Just(Setpoint::Hold { duration_s: 1.0 }),
            Just(Setpoint::Land),
        ]
    }

    proptest! {
        #[test]
        fn uav_displacement_bounded(start in arb_pose(), sps in prop::collection::vec(arb_setpoint(), 1..40)) {
            let lim = UavLimits::default();
            let mut s = UavState::at(start);
            for sp in &sps {
                let next = step_uav(&s, sp, &lim, 0.1);
                let dh = next.pose.horizontal_distance(&s.pose);
                let dv = (next.pose.up - s.pose.up).abs();
                prop_assert!(dh <= lim.cruise_speed * 0.1 + 1e-9);
                prop_assert!(dv <= lim.ascend_speed.max(lim.descend_speed) * 0.1 + 1e-9);
                prop_assert!(next.pose.up >= 0.0);
                s = next;
            }
        }

        #[test]
        fn ugv_displacement_bounded(start in arb_pose(), sps in prop::collection::vec(arb_setpoint(), 1..40)) {
            let lim = UgvLimits::default();
            let mut s = UgvState::at(EnuPose { up: 0.0, ..start });
            for sp in &sps {
                let next = step_ugv(&s, sp, &lim, 0.1);
                prop_assert!(next.pose.horizontal_distance(&s.pose) <= lim.speed * 0.1 + 1e-9);
                s = next;
            }
        }

        #[test]
        fn ugv_always_reaches_its_target(start in arb_pose(), target in arb_pose()) {
            let lim = UgvLimits::default();
            let mut s = UgvState::at(EnuPose { up: 0.0, ..start });
            s.speed = lim.speed;
            let sp = Setpoint::Target(EnuPose { up: 0.0, ..target });
            let budget = (start.horizontal_distance(&target) / lim.speed / 0.1) as usize + 200;
            let reached = (0..budget).any(|_| {
                s = step_ugv(&s, &sp, &lim, 0.1);
                s.settled
            });
            prop_assert!(reached);
        }

        #[test]
        fn stepping_is_deterministic(start in arb_pose(), sps in prop::collection::vec(arb_setpoint(), 1..20)) {
            let run = || {
                let mut s = UavState::at(start);
                for sp in &sps {
                    s = step_uav(&s, sp, &UavLimits::default(), 0.1);
                }
                s
            };
            prop_assert_eq!(run(), run());
        }
    }
}
