//! Local navigation from a planar range scan.
//!
//! The world is rendered into a 360° scan around the robot. A policy maps
//! (scan, goal in robot frame, current command) to a unicycle command. The
//! default reactive policy turns scan clusters into velocity obstacles,
//! picks the admissible velocity closest to goal pursuit and converts it
//! to (linear, angular).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::frvo::{select_best_velocity_with, FrvoRegion, SampleGrid, VelocityObstacle};
use crate::geom::{ray_disc_intersection, wrap_angle, Pose, Vec2};
use crate::pedestrian::PedestrianState;
use crate::planner::{Cell, OccupancyGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scan2D {
    /// Beam `k` points at angle `2πk/n` from the robot heading.
    pub ranges: Vec<f64>,
    pub max_range: f64,
}

impl Scan2D {
    pub fn beam_angle(&self, k: usize) -> f64 {
        2.0 * PI * k as f64 / self.ranges.len() as f64
    }

    /// Robot-frame return points of beams that hit something.
    pub fn points(&self) -> Vec<(usize, Vec2)> {
        self.ranges
            .iter()
            .enumerate()
            .filter(|(_, r)| **r < self.max_range)
            .map(|(k, &r)| (k, Vec2::polar(r, self.beam_angle(k))))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VelocityCommand {
    pub linear: f64,
    pub angular: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyInput {
    pub scan: Scan2D,
    /// Goal in the robot frame.
    pub goal: Vec2,
    pub current_velocity: VelocityCommand,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyOutput {
    pub command: VelocityCommand,
    pub blocked: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotParams {
    pub v_max: f64,
    pub omega_max: f64,
    pub radius: f64,
    pub beams: usize,
    pub max_range: f64,
    pub goal_tolerance: f64,
}

impl Default for RobotParams {
    fn default() -> Self {
        Self {
            v_max: 1.0,
            omega_max: 1.5,
            radius: 0.35,
            beams: 360,
            max_range: 10.0,
            goal_tolerance: 0.2,
        }
    }
}

/// Distance along a ray to the first occupied or out-of-bounds cell, by
/// exact grid traversal.
fn ray_grid(grid: &OccupancyGrid, origin: Vec2, dir: Vec2, max_range: f64) -> f64 {
    let res = grid.resolution;
    let (mut i, mut j) = grid.cell_of(origin);
    if grid.get(i, j) == Cell::Occupied {
        return 0.0;
    }
    let step_i: i64 = if dir.x > 0.0 { 1 } else { -1 };
    let step_j: i64 = if dir.y > 0.0 { 1 } else { -1 };
    let boundary = |c: f64, o: f64, idx: i64, step: i64| o + (idx + i64::from(step > 0)) as f64 * res - c;
    let mut t_x = if dir.x != 0.0 {
        boundary(origin.x, grid.origin.x, i, step_i) / dir.x
    } else {
        f64::INFINITY
    };
    let mut t_y = if dir.y != 0.0 {
        boundary(origin.y, grid.origin.y, j, step_j) / dir.y
    } else {
        f64::INFINITY
    };
    let dt_x = if dir.x != 0.0 { res / dir.x.abs() } else { f64::INFINITY };
    let dt_y = if dir.y != 0.0 { res / dir.y.abs() } else { f64::INFINITY };
    loop {
        let t = if t_x < t_y {
            i += step_i;
            let t = t_x;
            t_x += dt_x;
            t
        } else {
            j += step_j;
            let t = t_y;
            t_y += dt_y;
            t
        };
        if t >= max_range {
            return max_range;
        }
        if grid.get(i, j) == Cell::Occupied {
            return t;
        }
    }
}

/// Renders a 360° scan: per beam, the nearest occupied cell or pedestrian
/// disc, capped at `max_range`.
pub fn world_to_scan(
    robot_pose: &Pose,
    grid: &OccupancyGrid,
    pedestrians: &[PedestrianState],
    beams: usize,
    max_range: f64,
) -> Scan2D {
    let heading = Vec2::from_angle(robot_pose.heading);
    let ranges = (0..beams)
        .map(|k| {
            let local = Vec2::from_angle(2.0 * PI * k as f64 / beams as f64);
            let dir = Vec2::new(
                heading.x * local.x - heading.y * local.y,
                heading.y * local.x + heading.x * local.y,
            );
            let mut r = ray_grid(grid, robot_pose.position, dir, max_range);
            for p in pedestrians {
                if let Some(t) = ray_disc_intersection(robot_pose.position, dir, p.position, p.radius()) {
                    r = r.min(t);
                }
            }
            r.clamp(1e-3, max_range)
        })
        .collect();
    Scan2D { ranges, max_range }
}

pub fn goal_reached(robot_pose: &Pose, goal: Vec2, tol: f64) -> bool {
    debug_assert!(tol > 0.0);
    robot_pose.position.distance(goal) <= tol
}

/// A navigation policy: scan and goal in, command out.
pub trait Policy: Send + Sync {
    fn name(&self) -> &'static str;
    fn step(&self, input: &PolicyInput) -> PolicyOutput;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReactiveParams {
    /// Clearance kept beyond the robot radius, meters.
    pub margin: f64,
    /// Look-ahead for scan obstacles, seconds.
    pub horizon: f64,
    /// Range jump separating two scan clusters, meters.
    pub cluster_jump: f64,
    /// Minimum spacing between obstacle points taken from one cluster.
    pub point_spacing: f64,
    /// Time to close the goal distance when near it, seconds.
    pub approach_time: f64,
    /// Proportional heading gain, 1/s.
    pub heading_gain: f64,
    pub dt: f64,
    pub grid: SampleGrid,
}

impl Default for ReactiveParams {
    fn default() -> Self {
        Self {
            margin: 0.1,
            horizon: 2.0,
            cluster_jump: 0.3,
            point_spacing: 0.15,
            approach_time: 1.0,
            heading_gain: 2.0,
            dt: 0.1,
            grid: SampleGrid::default(),
        }
    }
}

/// Groups beams into clusters of adjacent hits whose ranges differ by less
/// than `jump`. Wraps around the scan seam.
pub fn scan_clusters(scan: &Scan2D, jump: f64) -> Vec<Vec<usize>> {
    let n = scan.ranges.len();
    let hit = |k: usize| scan.ranges[k] < scan.max_range;
    let joined = |a: usize, b: usize| hit(a) && hit(b) && (scan.ranges[a] - scan.ranges[b]).abs() < jump;
    if n == 0 || (0..n).all(|k| !hit(k)) {
        return Vec::new();
    }
    // start right after a break so no cluster straddles the seam
    let start = (0..n).find(|&k| !joined((k + n - 1) % n, k)).unwrap_or(0);
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for s in 0..n {
        let k = (start + s) % n;
        if !hit(k) {
            continue;
        }
        if s > 0 && joined((k + n - 1) % n, k) {
            clusters.last_mut().expect("open cluster").push(k);
        } else {
            clusters.push(vec![k]);
        }
    }
    clusters
}

/// Reactive velocity-obstacle policy over scan clusters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReactiveVo {
    pub robot: RobotParams,
    pub params: ReactiveParams,
}

impl ReactiveVo {
    pub fn new(robot: RobotParams, params: ReactiveParams) -> Self {
        Self { robot, params }
    }

    /// Velocity obstacles (robot frame) for scan points within reach.
    pub fn region(&self, scan: &Scan2D) -> FrvoRegion {
        let radius = self.robot.radius + self.params.margin;
        let reach = self.robot.v_max * self.params.horizon + radius;
        let mut region = FrvoRegion::default();
        for cluster in scan_clusters(scan, self.params.cluster_jump) {
            let mut last: Option<Vec2> = None;
            let n = cluster.len();
            for (idx, &k) in cluster.iter().enumerate() {
                let p = Vec2::polar(scan.ranges[k], scan.beam_angle(k));
                let endpoint = idx == 0 || idx + 1 == n;
                let spaced = last.is_none_or(|q| q.distance(p) >= self.params.point_spacing);
                if p.norm() <= reach && (endpoint || spaced) {
                    region.push(VelocityObstacle::static_disc(p, radius, self.params.horizon));
                    last = Some(p);
                }
            }
        }
        region
    }

    /// Goal-pursuit velocity in the robot frame, slowing near the goal.
    pub fn preferred_velocity(&self, goal: Vec2) -> Vec2 {
        let dist = goal.norm();
        let speed = self.robot.v_max.min(dist / self.params.approach_time);
        goal.normalized().map_or(Vec2::ZERO, |d| d * speed)
    }

    /// Unicycle command tracking a robot-frame velocity.
    pub fn to_command(&self, v: Vec2) -> VelocityCommand {
        let speed = v.norm();
        if speed < 1e-9 {
            return VelocityCommand::default();
        }
        let err = v.angle();
        VelocityCommand {
            linear: (speed * err.cos()).clamp(-self.robot.v_max, self.robot.v_max),
            angular: (self.params.heading_gain * err).clamp(-self.robot.omega_max, self.robot.omega_max),
        }
    }
}

impl Policy for ReactiveVo {
    fn name(&self) -> &'static str {
        "reactive_vo"
    }

    fn step(&self, input: &PolicyInput) -> PolicyOutput {
        if input.goal.norm() <= self.robot.goal_tolerance {
            return PolicyOutput {
                command: VelocityCommand::default(),
                blocked: false,
            };
        }
        let region = self.region(&input.scan);
        let choice = select_best_velocity_with(
            self.preferred_velocity(input.goal),
            &region,
            self.robot.v_max,
            &self.params.grid,
        );
        if choice.blocked {
            return PolicyOutput {
                command: VelocityCommand::default(),
                blocked: true,
            };
        }
        let mut command = self.to_command(choice.velocity);
        // the robot moves along its heading: shrink the forward speed until
        // that motion is admissible too
        for _ in 0..20 {
            if !region.contains(Vec2::new(command.linear, 0.0)) {
                break;
            }
            command.linear *= 0.7;
        }
        if region.contains(Vec2::new(command.linear, 0.0)) {
            command.linear = 0.0;
        }
        PolicyOutput {
            command,
            blocked: false,
        }
    }
}

/// Pursues the goal directly, ignoring the scan. Baseline for comparison.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GoalPursuit {
    pub inner: ReactiveVo,
}

impl Policy for GoalPursuit {
    fn name(&self) -> &'static str {
        "goal_pursuit"
    }

    fn step(&self, input: &PolicyInput) -> PolicyOutput {
        if input.goal.norm() <= self.inner.robot.goal_tolerance {
            return PolicyOutput {
                command: VelocityCommand::default(),
                blocked: false,
            };
        }
        PolicyOutput {
            command: self.inner.to_command(self.inner.preferred_velocity(input.goal)),
            blocked: false,
        }
    }
}

pub const POLICY_NAMES: [&str; 2] = ["reactive_vo", "goal_pursuit"];

pub fn policy_by_name(name: &str, robot: RobotParams, params: ReactiveParams) -> Option<Box<dyn Policy>> {
    let inner = ReactiveVo::new(robot, params);
    match name {
        "reactive_vo" => Some(Box::new(inner)),
        "goal_pursuit" => Some(Box::new(GoalPursuit { inner })),
        _ => None,
    }
}

/// Advances a unicycle pose by one tick: translate along the current
/// heading, then turn.
pub fn integrate(pose: &Pose, command: VelocityCommand, dt: f64) -> Pose {
    Pose::new(
        pose.position + Vec2::from_angle(pose.heading) * (command.linear * dt),
        wrap_angle(pose.heading + command.angular * dt),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open_grid() -> OccupancyGrid {
        OccupancyGrid::new(400, 400, 0.1, Vec2::new(-20.0, -20.0), Cell::Free).unwrap()
    }

    fn input(scan: Scan2D, goal: Vec2) -> PolicyInput {
        PolicyInput {
            scan,
            goal,
            current_velocity: VelocityCommand::default(),
        }
    }

    #[test]
    fn empty_world_scan_is_max_range() {
        let scan = world_to_scan(&Pose::default(), &open_grid(), &[], 360, 10.0);
        assert_eq!(scan.ranges.len(), 360);
        assert!(scan.ranges.iter().all(|r| *r == 10.0));
    }

    #[test]
    fn pedestrian_ahead_is_hit() {
        let p = PedestrianState::new(1, Vec2::new(1.0, 0.0)).with_shoulders(0.6 * 0.8, 0.6 * 0.6);
        assert!((p.radius() - 0.3).abs() < 1e-12);
        let scan = world_to_scan(&Pose::default(), &open_grid(), &[p], 360, 10.0);
        assert!((scan.ranges[0] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn clear_path_goes_straight() {
        let policy = ReactiveVo::default();
        let scan = world_to_scan(&Pose::default(), &open_grid(), &[], 360, 10.0);
        let out = policy.step(&input(scan, Vec2::new(5.0, 0.0)));
        assert!(!out.blocked);
        assert_eq!(out.command.linear, 1.0);
        assert!(out.command.angular.abs() < 1e-12);
    }

    #[test]
    fn wall_ahead_forces_a_turn() {
        let mut grid = open_grid();
        let (i, _) = grid.cell_of(Vec2::new(0.55, 0.0));
        for j in 180..220 {
            grid.set(i as usize, j, Cell::Occupied);
        }
        let policy = ReactiveVo::default();
        let scan = world_to_scan(&Pose::default(), &grid, &[], 360, 10.0);
        assert!((scan.ranges[0] - 0.5).abs() <= grid.resolution);
        let region = policy.region(&scan);
        let out = policy.step(&input(scan, Vec2::new(5.0, 0.0)));
        assert!(out.command.angular.abs() > 0.0);
        assert!(!region.contains(Vec2::new(out.command.linear, 0.0)));
    }

    #[test]
    fn arrival_stops() {
        let policy = ReactiveVo::default();
        let scan = world_to_scan(&Pose::default(), &open_grid(), &[], 360, 10.0);
        let out = policy.step(&input(scan, Vec2::new(0.1, 0.05)));
        assert_eq!(out.command, VelocityCommand::default());
    }

    #[test]
    fn goal_reached_boundaries() {
        let pose = Pose::new(Vec2::new(1.0, 1.0), 0.0);
        assert!(goal_reached(&pose, Vec2::new(1.0, 1.0), 0.5));
        assert!(goal_reached(&pose, Vec2::new(1.5, 1.0), 0.5));
        assert!(!goal_reached(&pose, Vec2::new(2.0, 1.0), 0.5));
    }

    #[test]
    fn clusters_split_on_jumps_and_wrap() {
        let mut ranges = vec![10.0; 12];
        for k in [11, 0, 1] {
            ranges[k] = 2.0;
        }
        ranges[5] = 3.0;
        ranges[6] = 3.1;
        ranges[7] = 6.0;
        let scan = Scan2D {
            ranges,
            max_range: 10.0,
        };
        assert_eq!(scan_clusters(&scan, 0.3), vec![vec![5, 6], vec![7], vec![11, 0, 1]]);
    }

    #[test]
    fn policies_by_name() {
        for name in POLICY_NAMES {
            assert_eq!(
                policy_by_name(name, RobotParams::default(), ReactiveParams::default())
                    .unwrap()
                    .name(),
                name
            );
        }
        assert!(policy_by_name("learned", RobotParams::default(), ReactiveParams::default()).is_none());
    }
}
