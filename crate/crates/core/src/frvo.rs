//! Frontal reciprocal velocity obstacles.
//!
//! Each pedestrian reacts only to neighbors inside an interaction radius and
//! in front of its shoulders. Every neighbor contributes a truncated cone of
//! forbidden velocities; the union of those cones is the agent's forbidden
//! region and the new velocity is the admissible sample closest to the
//! preferred one.
//!
//! Responsibility is shared when the neighbor can see the subject as well
//! (apex at the mean velocity, each side covers half of the deviation).
//! When the neighbor cannot see the subject, or the neighbor is an external
//! body such as the robot, the subject takes full responsibility and the
//! cone is anchored at the neighbor's velocity.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::geom::{wrap_angle, Vec2};
use crate::pedestrian::PedestrianState;

/// Boundary candidates are pushed this far (m/s) to the feasible side so
/// round-off cannot land them inside the cone they were projected onto.
const BOUNDARY_PUSH: f64 = 1e-6;

/// Below this speed the facing direction is left unchanged.
const FACING_SPEED_EPS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleGrid {
    pub directions: usize,
    pub magnitudes: usize,
    /// Angle of the first grid direction, radians.
    pub orientation: f64,
}

impl Default for SampleGrid {
    fn default() -> Self {
        Self {
            directions: 64,
            magnitudes: 16,
            orientation: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrvoParams {
    /// Interaction radius, meters.
    pub range: f64,
    /// Collision look-ahead, seconds.
    pub horizon: f64,
    /// Speed limit, m/s.
    pub v_max: f64,
    /// Comfort clearance kept to other pedestrians, meters.
    pub personal_space: f64,
    /// Extra clearance added to external bodies (robot), meters.
    pub body_margin: f64,
    /// Forbid walking backwards relative to the facing direction.
    pub forward_only: bool,
    pub grid: SampleGrid,
}

impl Default for FrvoParams {
    fn default() -> Self {
        Self {
            range: 5.0,
            horizon: 2.0,
            v_max: 1.5,
            personal_space: 0.05,
            body_margin: 0.1,
            forward_only: true,
            grid: SampleGrid::default(),
        }
    }
}

/// How an obstacle constrains the velocity plane.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Shape {
    /// Truncated cone: velocities `v` with `scale * (v - apex)` reaching the
    /// disc of radius `radius` around `rel_position` within `horizon`.
    Cone {
        rel_position: Vec2,
        radius: f64,
        scale: f64,
    },
    /// Open half-plane `(v - apex) · normal > 0`.
    HalfPlane { normal: Vec2 },
}

/// Forbidden velocities induced by one neighbor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityObstacle {
    pub apex: Vec2,
    pub left_dir: Vec2,
    pub right_dir: Vec2,
    pub horizon: f64,
    /// Footprints already overlap; the obstacle is the half-plane of
    /// approaching velocities instead of a cone.
    pub degenerate: bool,
    shape: Shape,
}

impl VelocityObstacle {
    /// Cone for a disc at `rel_position` (relative to the subject) with the
    /// combined radius `radius`. `scale` is 2 for shared responsibility and 1
    /// when the subject avoids alone.
    pub fn cone(apex: Vec2, rel_position: Vec2, radius: f64, scale: f64, horizon: f64) -> Self {
        let dist = rel_position.norm();
        if dist <= radius {
            let normal = rel_position.normalized().unwrap_or(Vec2::new(1.0, 0.0));
            return Self::half_plane(apex, normal, horizon);
        }
        let half_angle = (radius / dist).asin();
        let axis = rel_position / dist;
        Self {
            apex,
            left_dir: axis.rotate(half_angle),
            right_dir: axis.rotate(-half_angle),
            horizon,
            degenerate: false,
            shape: Shape::Cone {
                rel_position,
                radius,
                scale,
            },
        }
    }

    /// Open half-plane of velocities `v` with `(v - apex) · normal > 0`.
    pub fn half_plane(apex: Vec2, normal: Vec2, horizon: f64) -> Self {
        let n = normal.normalized().unwrap_or(Vec2::new(1.0, 0.0));
        Self {
            apex,
            left_dir: n.perp(),
            right_dir: -n.perp(),
            horizon,
            degenerate: true,
            shape: Shape::HalfPlane { normal: n },
        }
    }

    /// Cone of a static disc obstacle (apex at the origin, full responsibility).
    pub fn static_disc(rel_position: Vec2, radius: f64, horizon: f64) -> Self {
        Self::cone(Vec2::ZERO, rel_position, radius, 1.0, horizon)
    }

    pub fn contains(&self, v: Vec2) -> bool {
        let u = v - self.apex;
        match self.shape {
            Shape::HalfPlane { normal } => u.dot(normal) > 0.0,
            Shape::Cone {
                rel_position,
                radius,
                scale,
            } => {
                let u = u * scale;
                let speed_sq = u.norm_sq();
                if speed_sq == 0.0 {
                    return false;
                }
                let t = (u.dot(rel_position) / speed_sq).clamp(0.0, self.horizon);
                (u * t - rel_position).norm_sq() < radius * radius
            }
        }
    }

    /// Points on the obstacle boundary near `v_pref`, nudged to the
    /// feasible side.
    fn boundary_candidates(&self, v_pref: Vec2, v_max: f64, out: &mut Vec<Vec2>) {
        match self.shape {
            Shape::HalfPlane { normal } => {
                let u = v_pref - self.apex;
                let on_line = self.apex + (u - normal * u.dot(normal));
                out.push(on_line - normal * BOUNDARY_PUSH);
            }
            Shape::Cone {
                rel_position,
                radius,
                scale,
            } => {
                let u = v_pref - self.apex;
                for (dir, outward) in [
                    (self.left_dir, self.left_dir.perp()),
                    (self.right_dir, -self.right_dir.perp()),
                ] {
                    let t = u.dot(dir).max(0.0);
                    out.push(self.apex + dir * t + outward * BOUNDARY_PUSH);
                    // where the boundary ray meets the speed limit circle
                    let b = self.apex.dot(dir);
                    let disc = b * b - (self.apex.norm_sq() - v_max * v_max);
                    if disc >= 0.0 {
                        let s = -b + disc.sqrt();
                        if s > 0.0 {
                            let p = self.apex + dir * s + outward * BOUNDARY_PUSH;
                            out.push(p * (1.0 - 1e-9));
                        }
                    }
                }
                // truncation arc: disc centred at apex + p/(scale·τ)
                let k = scale * self.horizon;
                let center = self.apex + rel_position / k;
                let rho = radius / k;
                if let Some(dir) = (v_pref - center).normalized() {
                    out.push(center + dir * (rho + BOUNDARY_PUSH));
                }
            }
        }
    }
}

/// Neighbors a pedestrian reacts to.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NeighborSet {
    pub members: Vec<PedestrianState>,
}

impl NeighborSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Union of velocity obstacles.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrvoRegion {
    pub obstacles: Vec<VelocityObstacle>,
}

impl FrvoRegion {
    pub fn new(obstacles: Vec<VelocityObstacle>) -> Self {
        Self { obstacles }
    }

    pub fn push(&mut self, vo: VelocityObstacle) {
        self.obstacles.push(vo);
    }

    pub fn contains(&self, v: Vec2) -> bool {
        self.obstacles.iter().any(|o| o.contains(v))
    }

    pub fn is_empty(&self) -> bool {
        self.obstacles.is_empty()
    }
}

/// Outcome of the constrained velocity search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityChoice {
    pub velocity: Vec2,
    /// No admissible sample existed; `velocity` is zero.
    pub blocked: bool,
}

/// An external body (the robot) that pedestrians avoid on their own.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disc {
    pub position: Vec2,
    pub velocity: Vec2,
    pub radius: f64,
}

/// Result of advancing one pedestrian by one tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: PedestrianState,
    pub blocked: bool,
}

/// Slack (m) added to the frontal half-plane on top of the combined radius.
const FRONTAL_SLACK: f64 = 0.1;

/// Whether `target` (with footprint radius `target_radius`) lies in the
/// frontal half-plane of `viewer`. The half-plane is widened by the
/// combined radius plus a slack so bodies that reach across the shoulder
/// line count.
fn in_front(viewer: &PedestrianState, target: Vec2, target_radius: f64) -> bool {
    (target - viewer.position).dot(viewer.facing_dir()) > -(viewer.radius() + target_radius + FRONTAL_SLACK)
}

/// Others within `range` of `subject` that lie in its frontal half-plane.
pub fn neighbor_set(subject: &PedestrianState, all: &[PedestrianState], range: f64) -> NeighborSet {
    debug_assert!(range > 0.0);
    let members = all
        .iter()
        .filter(|o| o.id != subject.id)
        .filter(|o| o.position.distance(subject.position) <= range)
        .filter(|o| in_front(subject, o.position, o.radius()))
        .copied()
        .collect();
    NeighborSet { members }
}

/// Velocity obstacle that `other` induces on `subject`.
///
/// Shared responsibility (apex at the mean velocity) applies when `other`
/// can see `subject`; otherwise `subject` avoids alone.
pub fn compute_vo(subject: &PedestrianState, other: &PedestrianState, horizon: f64) -> VelocityObstacle {
    compute_vo_with_margin(subject, other, horizon, 0.0)
}

/// [`compute_vo`] with the combined radius grown by `margin`.
pub fn compute_vo_with_margin(
    subject: &PedestrianState,
    other: &PedestrianState,
    horizon: f64,
    margin: f64,
) -> VelocityObstacle {
    debug_assert!(horizon > 0.0);
    let rel = other.position - subject.position;
    let radius = subject.radius() + other.radius() + margin;
    if in_front(other, subject.position, subject.radius()) {
        let apex = (subject.velocity + other.velocity) / 2.0;
        VelocityObstacle::cone(apex, rel, radius, 2.0, horizon)
    } else {
        VelocityObstacle::cone(other.velocity, rel, radius, 1.0, horizon)
    }
}

/// Union of the obstacles of all neighbors.
pub fn frvo_union(subject: &PedestrianState, neighbors: &NeighborSet, horizon: f64) -> FrvoRegion {
    frvo_union_with_margin(subject, neighbors, horizon, 0.0)
}

/// [`frvo_union`] with every combined radius grown by `margin`.
pub fn frvo_union_with_margin(
    subject: &PedestrianState,
    neighbors: &NeighborSet,
    horizon: f64,
    margin: f64,
) -> FrvoRegion {
    FrvoRegion::new(
        neighbors
            .members
            .iter()
            .map(|o| compute_vo_with_margin(subject, o, horizon, margin))
            .collect(),
    )
}

/// Every velocity the search considers, in evaluation order: the preferred
/// velocity, standing still, the polar grid, then obstacle boundary points.
pub fn candidate_velocities(v_pref: Vec2, region: &FrvoRegion, v_max: f64, grid: &SampleGrid) -> Vec<Vec2> {
    let mut out = Vec::with_capacity(2 + grid.directions * grid.magnitudes + 5 * region.obstacles.len());
    for_each_candidate(v_pref, region, v_max, grid, |v| out.push(v));
    out
}

fn for_each_candidate(v_pref: Vec2, region: &FrvoRegion, v_max: f64, grid: &SampleGrid, mut f: impl FnMut(Vec2)) {
    f(v_pref.clamp_norm(v_max));
    f(Vec2::ZERO);
    let dirs: Vec<Vec2> = (0..grid.directions)
        .map(|d| Vec2::from_angle(grid.orientation + 2.0 * PI * d as f64 / grid.directions as f64))
        .collect();
    for k in 1..=grid.magnitudes {
        let mag = v_max * k as f64 / grid.magnitudes as f64;
        for &d in &dirs {
            f(d * mag);
        }
    }
    let mut boundary = Vec::new();
    for o in &region.obstacles {
        o.boundary_candidates(v_pref, v_max, &mut boundary);
    }
    for v in boundary {
        f(v.clamp_norm(v_max));
    }
}

/// Admissible velocity closest to `v_pref`, using the default grid.
pub fn select_best_velocity(v_pref: Vec2, region: &FrvoRegion, v_max: f64) -> VelocityChoice {
    select_best_velocity_with(v_pref, region, v_max, &SampleGrid::default())
}

/// Admissible velocity closest to `v_pref` among [`candidate_velocities`].
/// Ties go to the earliest candidate.
pub fn select_best_velocity_with(v_pref: Vec2, region: &FrvoRegion, v_max: f64, grid: &SampleGrid) -> VelocityChoice {
    let v_pref = v_pref.clamp_norm(v_max);
    if !region.contains(v_pref) {
        return VelocityChoice {
            velocity: v_pref,
            blocked: false,
        };
    }
    let limit_sq = v_max * v_max * (1.0 + 1e-12);
    let mut best: Option<(f64, Vec2)> = None;
    for_each_candidate(v_pref, region, v_max, grid, |c| {
        let d = (c - v_pref).norm_sq();
        if best.is_some_and(|(bd, _)| d >= bd) {
            return;
        }
        if c.norm_sq() <= limit_sq && !region.contains(c) {
            best = Some((d, c));
        }
    });
    match best {
        Some((_, velocity)) => VelocityChoice {
            velocity,
            blocked: false,
        },
        None => VelocityChoice {
            velocity: Vec2::ZERO,
            blocked: true,
        },
    }
}

/// Advances one pedestrian among `all` (which may include the pedestrian
/// itself) by `dt` seconds.
pub fn step_pedestrian(p: &PedestrianState, all: &[PedestrianState], dt: f64, params: &FrvoParams) -> StepOutcome {
    step_pedestrian_with(p, all, &[], dt, params)
}

/// [`step_pedestrian`] with additional external bodies to avoid.
pub fn step_pedestrian_with(
    p: &PedestrianState,
    all: &[PedestrianState],
    bodies: &[Disc],
    dt: f64,
    params: &FrvoParams,
) -> StepOutcome {
    debug_assert!(dt > 0.0);
    let region = pedestrian_region(p, all, bodies, params);
    let choice = select_best_velocity_with(p.v_pref, &region, params.v_max, &params.grid);
    let mut next = *p;
    next.velocity = choice.velocity;
    next.position = p.position + choice.velocity * dt;
    if choice.velocity.norm() > FACING_SPEED_EPS {
        next.facing = wrap_angle(choice.velocity.angle());
    }
    StepOutcome {
        state: next,
        blocked: choice.blocked,
    }
}

/// Forbidden region of one pedestrian: neighbor cones, external bodies and
/// (optionally) the half-plane behind its shoulders.
pub fn pedestrian_region(
    p: &PedestrianState,
    all: &[PedestrianState],
    bodies: &[Disc],
    params: &FrvoParams,
) -> FrvoRegion {
    let neighbors = neighbor_set(p, all, params.range);
    let mut region = frvo_union_with_margin(p, &neighbors, params.horizon, params.personal_space);
    for b in bodies {
        let rel = b.position - p.position;
        let radius = p.radius() + b.radius + params.body_margin;
        if rel.norm() <= params.range && in_front(p, b.position, b.radius) {
            region.push(VelocityObstacle::cone(b.velocity, rel, radius, 1.0, params.horizon));
        }
    }
    if params.forward_only {
        region.push(VelocityObstacle::half_plane(
            Vec2::ZERO,
            -p.facing_dir(),
            params.horizon,
        ));
    }
    region
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ped(id: u32, x: f64, y: f64) -> PedestrianState {
        PedestrianState::new(id, Vec2::new(x, y))
    }

    #[test]
    fn lone_pedestrian_has_no_neighbors() {
        let p = ped(0, 0.0, 0.0);
        assert!(neighbor_set(&p, &[p], 5.0).is_empty());
    }

    #[test]
    fn neighbor_behind_is_excluded() {
        let p = ped(0, 0.0, 0.0);
        let behind = ped(1, -2.0, 0.0);
        let ahead = ped(2, 2.0, 0.0);
        let set = neighbor_set(&p, &[p, behind, ahead], 5.0);
        assert_eq!(set.members.iter().map(|m| m.id).collect::<Vec<_>>(), vec![2]);
    }

    #[test]
    fn radius_filter() {
        let p = ped(0, 0.0, 0.0);
        let all = [p, ped(1, 1.0, 0.0), ped(2, 2.0, 0.0), ped(3, 9.0, 0.0)];
        assert_eq!(neighbor_set(&p, &all, 5.0).len(), 2);
    }

    #[test]
    fn static_cone_contains_approach_not_rest() {
        // combined radius 0.5: two bodies of radius 0.25
        let s = ped(0, 0.0, 0.0).with_shoulders(0.3, 0.4);
        let o = ped(1, 5.0, 0.0).with_shoulders(0.3, 0.4).with_facing(PI);
        let vo = compute_vo(&s, &o, 2.0);
        assert!(vo.contains(Vec2::new(2.5, 0.0)));
        assert!(!vo.contains(Vec2::ZERO));
    }

    #[test]
    fn unreachable_other_leaves_rest_feasible() {
        let s = ped(0, 0.0, 0.0);
        let o = ped(1, 30.0, 4.0).with_velocity(Vec2::new(0.0, 0.0));
        assert!(!compute_vo(&s, &o, 2.0).contains(Vec2::ZERO));
    }

    #[test]
    fn overlapping_footprints_are_degenerate() {
        let s = ped(0, 0.0, 0.0);
        let o = ped(1, 0.1, 0.0).with_facing(PI);
        let vo = compute_vo(&s, &o, 2.0);
        assert!(vo.degenerate);
        assert!(vo.contains(Vec2::new(0.5, 0.0)));
        assert!(!vo.contains(Vec2::new(-0.5, 0.0)));
    }

    #[test]
    fn mirrored_configurations_mirror_cones() {
        let s = ped(0, 0.0, 0.0).with_velocity(Vec2::new(1.0, 0.2));
        let o = ped(1, 3.0, 1.0).with_velocity(Vec2::new(-0.5, 0.1)).with_facing(PI);
        let mirror = |v: Vec2| Vec2::new(v.x, -v.y);
        let sm = ped(0, 0.0, 0.0).with_velocity(mirror(s.velocity));
        let om = ped(1, 3.0, -1.0).with_velocity(mirror(o.velocity)).with_facing(PI);
        let a = compute_vo(&s, &o, 2.0);
        let b = compute_vo(&sm, &om, 2.0);
        assert!(a.apex.distance(mirror(b.apex)) < 1e-12);
        assert!(a.left_dir.distance(mirror(b.right_dir)) < 1e-12);
        for i in 0..50 {
            for j in 0..50 {
                let v = Vec2::new(-2.0 + i as f64 * 0.08, -2.0 + j as f64 * 0.08);
                assert_eq!(a.contains(v), b.contains(mirror(v)));
            }
        }
    }

    #[test]
    fn empty_region_returns_preference() {
        let v = Vec2::new(0.7, -0.3);
        let c = select_best_velocity(v, &FrvoRegion::default(), 1.5);
        assert_eq!(c.velocity, v);
        assert!(!c.blocked);
    }

    #[test]
    fn covered_disc_is_blocked() {
        // two overlapping opposite half-planes cover the whole plane
        let region = FrvoRegion::new(vec![
            VelocityObstacle::half_plane(Vec2::new(0.0, -1e-3), Vec2::new(0.0, 1.0), 2.0),
            VelocityObstacle::half_plane(Vec2::new(0.0, 1e-3), Vec2::new(0.0, -1.0), 2.0),
        ]);
        let c = select_best_velocity(Vec2::new(1.0, 0.0), &region, 1.5);
        assert!(c.blocked);
        assert_eq!(c.velocity, Vec2::ZERO);
    }

    #[test]
    fn free_flight_step() {
        let p = ped(0, 0.0, 0.0).with_v_pref(Vec2::new(1.0, 0.0));
        let out = step_pedestrian(&p, &[p], 0.1, &FrvoParams::default());
        assert!(!out.blocked);
        assert!(out.state.position.distance(Vec2::new(0.1, 0.0)) < 1e-12);
        assert_eq!(out.state.v_pref, p.v_pref);
    }

    #[test]
    fn blocked_agent_stalls() {
        let p = ped(0, 0.0, 0.0).with_v_pref(Vec2::new(1.0, 0.0));
        // overlapping neighbor pushing into it; stepping back is not allowed
        let other = ped(1, 0.3, 0.0).with_facing(PI).with_velocity(Vec2::new(-1.0, 0.0));
        let all = [p, other];
        let out = step_pedestrian(&p, &all, 0.1, &FrvoParams::default());
        assert!(out.blocked);
        assert_eq!(out.state.position, p.position);
    }

    #[test]
    fn selected_velocity_is_outside_region() {
        let s = ped(0, 0.0, 0.0)
            .with_velocity(Vec2::new(1.0, 0.0))
            .with_v_pref(Vec2::new(1.0, 0.0));
        let o = ped(1, 3.0, 0.1).with_velocity(Vec2::new(-1.0, 0.0)).with_facing(PI);
        let region = frvo_union(&s, &neighbor_set(&s, &[s, o], 5.0), 2.0);
        let c = select_best_velocity(s.v_pref, &region, 1.5);
        assert!(!c.blocked);
        assert!(!region.contains(c.velocity));
        assert!(c.velocity.y.abs() > 0.0);
    }
}
