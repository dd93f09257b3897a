//! The per-tick simulation loop and the surveillance mission.
//!
//! Each tick runs, in order: pedestrian motion, sensing and tracking, the
//! social graph and crowd table, the mission transition (routing and
//! advisories), local navigation of the robot, and finally the pedestrians'
//! reaction to any advisory issued this tick.

pub mod metrics;
pub mod replay;
pub mod scenario;

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use thiserror::Error;

use crate::clock::SimClock;
use crate::frvo::{step_pedestrian_with, Disc};
use crate::geom::{Pose, Vec2};
use crate::localnav::{goal_reached, integrate, policy_by_name, world_to_scan, Policy, PolicyInput, VelocityCommand};
use crate::pedestrian::PedestrianState;
use crate::planner::{
    advisory_check, patrol_exit, plan_path, route_crowds, ActiveAdvisories, AdvisoryEvent, AdvisoryTarget, Cell,
    CrowdNode, Junction, OccupancyGrid, PlannerError,
};
use crate::rng::{SeedRoot, SimRng};
use crate::sensing::{distinct_identities, observe, Feature};
use crate::socialgraph::{build_social_graph, CrowdGraph, CrowdTracker};
use crate::tracker::{Tracker, TrackerError};

pub use metrics::{compute_metrics, MetricsAccumulator, MetricsSummary};
pub use replay::{ReplayHeader, ReplayLog, ReplayRecord};
pub use scenario::{load_scenario, Scenario, ScenarioError, Task};

use replay::{
    sig9, sig9v, ComplianceRecord, CrowdRecord, MissionRecord, ModeName, PedestrianRecord, RobotRecord, TrackRecord,
};
use scenario::RectSpec;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("tracker: {0}")]
    Tracker(#[from] TrackerError),
    #[error("planner: {0}")]
    Planner(#[from] PlannerError),
}

/// A pedestrian closer than this to its goal moves on to the next one.
const ARRIVAL_RADIUS: f64 = 0.3;
/// The robot counts as at a junction within this distance.
const JUNCTION_RADIUS: f64 = 0.5;
/// Path waypoints closer than this are skipped.
const WAYPOINT_RADIUS: f64 = 0.5;
/// Minimum cosine distance between pedestrian appearance identities.
const IDENTITY_SEPARATION: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
enum Plan {
    Still,
    Route {
        waypoints: Vec<Vec2>,
        next: usize,
        looped: bool,
    },
    Wander {
        area: RectSpec,
        goal: Vec2,
    },
    Disperse {
        goal: Vec2,
    },
}

fn draw_in(area: &RectSpec, rng: &mut SimRng) -> Vec2 {
    Vec2::new(
        rng.uniform_range(area.min.x, area.max.x),
        rng.uniform_range(area.min.y, area.max.y),
    )
}

impl Plan {
    fn goal(&self) -> Option<Vec2> {
        match self {
            Plan::Still => None,
            Plan::Route { waypoints, next, .. } => waypoints.get(*next).copied(),
            Plan::Wander { goal, .. } | Plan::Disperse { goal } => Some(*goal),
        }
    }

    /// Moves on from goals already reached; returns the current goal.
    fn update(&mut self, position: Vec2, rng: &mut SimRng) -> Option<Vec2> {
        match self {
            Plan::Route {
                waypoints,
                next,
                looped,
            } => {
                while *next < waypoints.len() && position.distance(waypoints[*next]) < ARRIVAL_RADIUS {
                    *next += 1;
                    if *next == waypoints.len() && *looped && waypoints.len() > 1 {
                        *next = 0;
                        break;
                    }
                }
            }
            Plan::Wander { area, goal } => {
                if position.distance(*goal) < ARRIVAL_RADIUS {
                    *goal = draw_in(area, rng);
                }
            }
            Plan::Still | Plan::Disperse { .. } => {}
        }
        self.goal()
    }
}

#[derive(Debug, Clone)]
struct Walker {
    state: PedestrianState,
    speed: f64,
    spawn: u64,
    despawn: Option<u64>,
    plan: Plan,
    rng: SimRng,
    identity: Feature,
}

impl Walker {
    fn active_at(&self, tick: u64) -> bool {
        tick >= self.spawn && self.despawn.is_none_or(|d| tick < d)
    }
}

/// Mission mode; crowd modes carry the crowd id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Patrol,
    Approaching(u32),
    Advising(u32),
    Follow,
}

impl Mode {
    fn name(self) -> ModeName {
        match self {
            Mode::Patrol => ModeName::Patrol,
            Mode::Approaching(_) => ModeName::Approaching,
            Mode::Advising(_) => ModeName::Advising,
            Mode::Follow => ModeName::Follow,
        }
    }

    fn crowd(self) -> Option<u32> {
        match self {
            Mode::Approaching(c) | Mode::Advising(c) => Some(c),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissionState {
    pub mode: Mode,
    /// Remaining crowd visits after the current one.
    pub route: Vec<u32>,
    /// Waypoints toward the current destination.
    pub path: Vec<Vec2>,
    path_index: usize,
    /// Junction the patrol is heading to.
    patrol_target: Option<usize>,
    /// Junction and exit the robot last left by.
    departed: Option<(usize, usize)>,
    /// Crowds already advised.
    served: BTreeSet<u32>,
    /// Crowds whose centroid could not be reached.
    skipped: BTreeSet<u32>,
    /// Crowds seen at least once, for junction statistics.
    seen: BTreeSet<u32>,
}

impl MissionState {
    fn new(mode: Mode) -> Self {
        Self {
            mode,
            route: Vec::new(),
            path: Vec::new(),
            path_index: 0,
            patrol_target: None,
            departed: None,
            served: BTreeSet::new(),
            skipped: BTreeSet::new(),
            seen: BTreeSet::new(),
        }
    }

    fn set_path(&mut self, path: Vec<Vec2>) {
        self.path = path;
        self.path_index = 0;
    }

    fn clear_path(&mut self) {
        self.path.clear();
        self.path_index = 0;
    }

    /// Next waypoint to steer at, skipping ones already reached.
    fn carrot(&mut self, position: Vec2) -> Option<Vec2> {
        while self.path_index + 1 < self.path.len() && position.distance(self.path[self.path_index]) < WAYPOINT_RADIUS {
            self.path_index += 1;
        }
        self.path.get(self.path_index).copied()
    }
}

/// Target point the robot follows in the follow task.
#[derive(Debug, Clone)]
struct FollowTarget {
    position: Vec2,
    speed: f64,
    plan: Plan,
    rng: SimRng,
}

/// Four junctions at the quarter points of the map, joined in a loop.
fn default_junctions(scenario: &Scenario) -> Vec<(Vec2, Vec<usize>)> {
    let b = scenario.map.bounds();
    let (w, h) = (b.max.x - b.min.x, b.max.y - b.min.y);
    [(0.25, 0.25), (0.75, 0.25), (0.75, 0.75), (0.25, 0.75)]
        .iter()
        .enumerate()
        .map(|(k, (fx, fy))| (b.min + Vec2::new(fx * w, fy * h), vec![(k + 1) % 4, (k + 3) % 4]))
        .collect()
}

/// Occupancy grid of the static map; everything outside is occupied.
pub fn build_grid(scenario: &Scenario) -> Result<OccupancyGrid, PlannerError> {
    let m = &scenario.map;
    let w = (m.width / m.resolution).ceil() as usize;
    let h = (m.height / m.resolution).ceil() as usize;
    let mut grid = OccupancyGrid::new(w, h, m.resolution, m.origin, Cell::Free)?;
    for o in &m.obstacles {
        let (i0, j0) = grid.cell_of(o.min);
        let (i1, j1) = grid.cell_of(o.max);
        for j in j0.max(0)..=j1.min(h as i64 - 1) {
            for i in i0.max(0)..=i1.min(w as i64 - 1) {
                grid.set(i as usize, j as usize, Cell::Occupied);
            }
        }
    }
    Ok(grid)
}

/// Dispersal goals for pedestrians leaving a crowd around `center`: evenly
/// spaced on a circle wide enough that neighbouring goals are at least
/// `min_gap` apart, in the members' angular order.
pub fn dispersal_goals(center: Vec2, members: &[(u32, Vec2)], radius: f64, min_gap: f64) -> Vec<(u32, Vec2)> {
    let k = members.len();
    if k == 0 {
        return Vec::new();
    }
    let mut order: Vec<(f64, u32)> = members.iter().map(|&(id, p)| ((p - center).angle(), id)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let r = if k >= 2 {
        radius.max(min_gap / (2.0 * (PI / k as f64).sin()))
    } else {
        radius
    };
    let a0 = order[0].0;
    order
        .iter()
        .enumerate()
        .map(|(i, &(_, id))| (id, center + Vec2::polar(r, a0 + 2.0 * PI * i as f64 / k as f64)))
        .collect()
}

/// One simulation run.
pub struct Engine {
    scenario: Scenario,
    clock: SimClock,
    grid: OccupancyGrid,
    planning_grid: OccupancyGrid,
    walkers: Vec<Walker>,
    sensing_rng: SimRng,
    compliance_rng: SimRng,
    tracker: Tracker,
    crowds: CrowdTracker,
    advisories: ActiveAdvisories,
    junctions: Vec<Junction>,
    mission: MissionState,
    policy: Box<dyn Policy>,
    pose: Pose,
    command: VelocityCommand,
    follow: Option<FollowTarget>,
}

impl Engine {
    /// Builds the initial world. The duration is not checked, so a
    /// zero-length run is allowed.
    pub fn new(scenario: &Scenario) -> Result<Self, EngineError> {
        scenario.validate_parts()?;
        let s = scenario.clone();
        let root = SeedRoot(s.seed);
        let grid = build_grid(&s)?;
        // paths keep the clearance the local planner insists on, plus a cell
        let planning_grid = grid.inflate(s.robot.limits.radius + s.localnav.margin + grid.resolution);

        let mut specs = s.pedestrians.clone();
        specs.sort_by_key(|p| p.id);
        let identities = distinct_identities(
            specs.len(),
            s.sensing.feature_dim,
            IDENTITY_SEPARATION,
            &mut root.stream("identities"),
        );
        let walkers = specs
            .iter()
            .zip(identities)
            .map(|(p, identity)| {
                let mut rng = root.indexed_stream("walk", u64::from(p.id));
                let plan = if let Some(area) = p.wander {
                    let goal = draw_in(&area, &mut rng);
                    Plan::Wander { area, goal }
                } else if p.waypoints.is_empty() {
                    Plan::Still
                } else {
                    Plan::Route {
                        waypoints: p.waypoints.clone(),
                        next: 0,
                        looped: p.loop_waypoints,
                    }
                };
                let first = plan.goal().unwrap_or(p.start);
                let state = PedestrianState::new(p.id, p.start)
                    .with_shoulders(p.shoulder_length, p.shoulder_width)
                    .with_facing((first - p.start).normalized().map_or(0.0, Vec2::angle));
                Walker {
                    state,
                    speed: p.speed,
                    spawn: p.spawn,
                    despawn: p.despawn,
                    plan,
                    rng,
                    identity,
                }
            })
            .collect();

        let junction_specs: Vec<(Vec2, Vec<usize>)> = if s.map.junctions.is_empty() {
            default_junctions(&s)
        } else {
            s.map.junctions.iter().map(|j| (j.position, j.exits.clone())).collect()
        };
        let positions: Vec<Vec2> = junction_specs
            .iter()
            .map(|(p, _)| planning_grid.nearest_free(*p).unwrap_or(*p))
            .collect();
        let junctions = junction_specs
            .iter()
            .enumerate()
            .map(|(k, (_, exits))| {
                let exits = exits.iter().map(|&t| (positions[t] - positions[k], t)).collect();
                Junction::new(positions[k], exits)
            })
            .collect();

        let follow = s
            .robot
            .follow
            .as_ref()
            .filter(|_| s.robot.task == Task::Follow)
            .map(|f| {
                let mut rng = root.stream("follow");
                let plan = match f.wander {
                    Some(area) => {
                        let goal = draw_in(&area, &mut rng);
                        Plan::Wander { area, goal }
                    }
                    None if f.waypoints.is_empty() => Plan::Still,
                    None => Plan::Route {
                        waypoints: f.waypoints.clone(),
                        next: 0,
                        looped: true,
                    },
                };
                FollowTarget {
                    position: s.robot.start,
                    speed: f.speed,
                    plan,
                    rng,
                }
            });
        let mode = if follow.is_some() { Mode::Follow } else { Mode::Patrol };

        let policy =
            policy_by_name(&s.robot.policy, s.robot.limits, s.localnav).ok_or_else(|| ScenarioError::Invalid {
                path: "robot.policy".into(),
                message: format!("unknown policy {:?}", s.robot.policy),
            })?;

        Ok(Self {
            clock: SimClock::new(s.dt),
            grid,
            planning_grid,
            walkers,
            sensing_rng: root.stream("sensing"),
            compliance_rng: root.stream("compliance"),
            tracker: Tracker::new(s.tracker.clone()),
            crowds: CrowdTracker::new(s.social),
            advisories: ActiveAdvisories::default(),
            junctions,
            mission: MissionState::new(mode),
            policy,
            pose: Pose::new(s.robot.start, s.robot.heading),
            command: VelocityCommand::default(),
            follow,
            scenario: s,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn header(&self) -> ReplayHeader {
        ReplayHeader::new(&self.scenario)
    }

    pub fn clock(&self) -> SimClock {
        self.clock
    }

    pub fn robot_pose(&self) -> Pose {
        self.pose
    }

    pub fn mission(&self) -> &MissionState {
        &self.mission
    }

    pub fn grid(&self) -> &OccupancyGrid {
        &self.grid
    }

    pub fn junctions(&self) -> &[Junction] {
        &self.junctions
    }

    /// Ground-truth states of the pedestrians present this tick.
    pub fn pedestrians(&self) -> Vec<PedestrianState> {
        let tick = self.clock.tick();
        self.walkers
            .iter()
            .filter(|w| w.active_at(tick))
            .map(|w| w.state)
            .collect()
    }

    pub fn crowds(&self) -> &[CrowdGraph] {
        self.crowds.crowds()
    }

    fn robot_velocity(&self) -> Vec2 {
        Vec2::from_angle(self.pose.heading) * self.command.linear
    }

    /// Advances the world by one tick and returns its record.
    pub fn step(&mut self) -> Result<ReplayRecord, EngineError> {
        let tick = self.clock.tick();
        let dt = self.clock.dt();

        // 1. pedestrians
        let active: Vec<usize> = (0..self.walkers.len())
            .filter(|&k| self.walkers[k].active_at(tick))
            .collect();
        for &k in &active {
            let w = &mut self.walkers[k];
            let goal = w.plan.update(w.state.position, &mut w.rng);
            w.state.v_pref = goal.map_or(Vec2::ZERO, |g| (g - w.state.position).clamp_norm(w.speed));
        }
        let world: Vec<PedestrianState> = active.iter().map(|&k| self.walkers[k].state).collect();
        let robot_body = Disc {
            position: self.pose.position,
            velocity: self.robot_velocity(),
            radius: self.scenario.robot.limits.radius,
        };
        for (&k, p) in active.iter().zip(&world) {
            let out = step_pedestrian_with(p, &world, &[robot_body], dt, &self.scenario.frvo);
            self.walkers[k].state = out.state;
        }
        let world: Vec<PedestrianState> = active.iter().map(|&k| self.walkers[k].state).collect();
        let identities: Vec<Feature> = active.iter().map(|&k| self.walkers[k].identity.clone()).collect();

        // 2. sensing and tracking
        let s = &self.scenario;
        let detections = observe(
            &self.pose,
            &world,
            &identities,
            &s.rig,
            &s.sensing,
            &mut self.sensing_rng,
        );
        self.tracker.step(&detections, &self.pose, dt, &s.rig, &s.sensing)?;

        // 3. social graph and crowds
        let graph = build_social_graph(self.tracker.tracks(), &self.pose, &s.social);
        self.crowds.update(&graph, &self.clock);
        let crowds: Vec<CrowdGraph> = self
            .crowds
            .crowds()
            .iter()
            .map(|c| CrowdGraph {
                centroid: sig9v(c.centroid),
                ..c.clone()
            })
            .collect();
        self.credit_junction(&crowds);

        // 4. mission
        let sensed = sig9v(self.pose.position);
        let events = self.transition(&crowds, sensed, tick)?;

        // 5. local navigation
        let goal = self.steering_goal(dt);
        let s = &self.scenario;
        let scan = world_to_scan(
            &self.pose,
            &self.grid,
            &world,
            s.robot.limits.beams,
            s.robot.limits.max_range,
        );
        let out = self.policy.step(&PolicyInput {
            scan,
            goal: self.pose.to_local(goal),
            current_velocity: self.command,
        });
        self.command = out.command;
        self.pose = integrate(&self.pose, out.command, dt);

        // 6. reaction to advisories
        let compliance = self.apply_compliance(&events, &crowds);

        let record = self.record(tick, &crowds, goal, sensed, out.blocked, events, compliance);
        self.clock = self.clock.advance();
        Ok(record)
    }

    /// Credits crowds seen for the first time to the exit the robot last took.
    fn credit_junction(&mut self, crowds: &[CrowdGraph]) {
        for c in crowds {
            if self.mission.seen.insert(c.crowd_id) {
                if let Some((j, e)) = self.mission.departed {
                    self.junctions[j].observe_crowd(e);
                }
            }
        }
    }

    fn transition(
        &mut self,
        crowds: &[CrowdGraph],
        sensed: Vec2,
        tick: u64,
    ) -> Result<Vec<AdvisoryEvent>, EngineError> {
        let live: BTreeMap<u32, &CrowdGraph> = crowds.iter().map(|c| (c.crowd_id, c)).collect();
        let alive = |c: u32| live.get(&c).is_some_and(|g| tick <= g.deadline);
        match self.mission.mode {
            Mode::Follow => {}
            Mode::Advising(c) => {
                if !alive(c) || !self.advisories.active.contains_key(&c) {
                    self.resume_patrol(sensed);
                }
            }
            Mode::Approaching(c) => {
                if !alive(c) {
                    self.reroute(crowds, sensed, tick)?;
                }
            }
            Mode::Patrol => {
                let pending = crowds.iter().any(|g| {
                    tick <= g.deadline
                        && !self.mission.served.contains(&g.crowd_id)
                        && !self.mission.skipped.contains(&g.crowd_id)
                });
                if pending {
                    self.reroute(crowds, sensed, tick)?;
                }
            }
        }
        let targeted = match self.mission.mode {
            Mode::Approaching(c) => Some(c),
            _ => None,
        };
        let targets: Vec<AdvisoryTarget> = crowds
            .iter()
            .map(|c| AdvisoryTarget {
                crowd_id: c.crowd_id,
                centroid: c.centroid,
                targeted: Some(c.crowd_id) == targeted,
            })
            .collect();
        let events = advisory_check(sensed, &targets, &mut self.advisories, tick, &self.scenario.advisory);
        if let Some(c) = targeted {
            if events.iter().any(|e| e.crowd_id == c) {
                self.mission.mode = Mode::Advising(c);
                self.mission.served.insert(c);
                self.mission.clear_path();
            }
        }
        Ok(events)
    }

    /// Routes over the eligible crowds and heads for the first reachable one.
    fn reroute(&mut self, crowds: &[CrowdGraph], sensed: Vec2, tick: u64) -> Result<(), EngineError> {
        let was_patrolling = self.mission.mode == Mode::Patrol;
        loop {
            let mut nodes: Vec<CrowdNode> = crowds
                .iter()
                .filter(|g| tick <= g.deadline)
                .filter(|g| !self.mission.served.contains(&g.crowd_id) && !self.mission.skipped.contains(&g.crowd_id))
                .map(|g| CrowdNode {
                    crowd_id: g.crowd_id,
                    location: g.centroid,
                    weight: g.weight,
                    deadline: g.deadline,
                })
                .collect();
            // nearest first when there are more than the search handles
            nodes.sort_by(|a, b| {
                sensed
                    .distance(a.location)
                    .total_cmp(&sensed.distance(b.location))
                    .then(a.crowd_id.cmp(&b.crowd_id))
            });
            nodes.truncate(self.scenario.routing.n_max);
            let route = route_crowds(
                &nodes,
                sensed,
                &self.clock,
                self.scenario.robot.limits.v_max,
                &self.scenario.routing,
            )?;
            let Some(first) = route.visits.first() else {
                if !was_patrolling {
                    self.resume_patrol(sensed);
                }
                return Ok(());
            };
            let goal = self
                .planning_grid
                .nearest_free(first.location)
                .unwrap_or(first.location);
            match plan_path(&self.planning_grid, sensed, goal) {
                Ok(path) => {
                    self.mission.mode = Mode::Approaching(first.crowd_id);
                    self.mission.route = route.visits[1..].iter().map(|v| v.crowd_id).collect();
                    self.mission.set_path(path);
                    return Ok(());
                }
                Err(PlannerError::Unreachable(..)) => {
                    self.mission.skipped.insert(first.crowd_id);
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    /// Back to patrol: take the preferred exit of the nearest junction.
    fn resume_patrol(&mut self, sensed: Vec2) {
        self.mission.mode = Mode::Patrol;
        self.mission.route.clear();
        self.mission.clear_path();
        let nearest = (0..self.junctions.len()).min_by(|&a, &b| {
            sensed
                .distance(self.junctions[a].position)
                .total_cmp(&sensed.distance(self.junctions[b].position))
        });
        self.mission.patrol_target = nearest.map(|j| self.depart(j));
    }

    /// Picks an exit at junction `j`, records it and returns the next junction.
    fn depart(&mut self, j: usize) -> usize {
        let junction = &mut self.junctions[j];
        if junction.exit_targets.is_empty() {
            return j;
        }
        let exit = patrol_exit(junction);
        junction.record_visit(exit, self.clock.tick());
        self.mission.departed = Some((j, exit));
        junction.exit_targets[exit]
    }

    /// World point the local planner steers at this tick.
    fn steering_goal(&mut self, dt: f64) -> Vec2 {
        let here = self.pose.position;
        match self.mission.mode {
            Mode::Follow => {
                let t = self.follow.as_mut().expect("follow mode has a target");
                if let Some(g) = t.plan.update(t.position, &mut t.rng) {
                    t.position = t.position + (g - t.position).clamp_norm(t.speed * dt);
                }
                t.position
            }
            Mode::Advising(_) => here,
            Mode::Approaching(_) => self.mission.carrot(here).unwrap_or(here),
            Mode::Patrol => {
                if self.junctions.is_empty() {
                    return here;
                }
                let target = match self.mission.patrol_target {
                    Some(t) => t,
                    None => {
                        let nearest = (0..self.junctions.len())
                            .min_by(|&a, &b| {
                                here.distance(self.junctions[a].position)
                                    .total_cmp(&here.distance(self.junctions[b].position))
                            })
                            .expect("junctions exist");
                        self.mission.patrol_target = Some(nearest);
                        nearest
                    }
                };
                let mut target = target;
                if goal_reached(&self.pose, self.junctions[target].position, JUNCTION_RADIUS) {
                    target = self.depart(target);
                    self.mission.patrol_target = Some(target);
                    self.mission.clear_path();
                }
                if self.mission.path.is_empty() {
                    let goal = self.junctions[target].position;
                    match plan_path(&self.planning_grid, here, goal) {
                        Ok(path) => self.mission.set_path(path),
                        Err(_) => {
                            // try another exit next tick
                            self.mission.patrol_target = Some(self.depart(target));
                            return here;
                        }
                    }
                }
                self.mission.carrot(here).unwrap_or(here)
            }
        }
    }

    /// Everyone gathered with an advised crowd decides independently whether
    /// to disperse.
    fn apply_compliance(&mut self, events: &[AdvisoryEvent], crowds: &[CrowdGraph]) -> Vec<ComplianceRecord> {
        let mut out = Vec::new();
        let tick = self.clock.tick();
        let present: Vec<(u32, Vec2)> = self
            .walkers
            .iter()
            .filter(|w| w.active_at(tick))
            .map(|w| (w.state.id, w.state.position))
            .collect();
        let truth: BTreeMap<u32, Option<u32>> =
            self.tracker.tracks().iter().map(|t| (t.track_id, t.truth_id)).collect();
        for ev in events {
            let Some(crowd) = crowds.iter().find(|c| c.crowd_id == ev.crowd_id) else {
                continue;
            };
            let heard: BTreeSet<u32> = crowd
                .member_ids
                .iter()
                .filter_map(|m| truth.get(m).copied().flatten())
                .collect();
            // everyone physically gathered with the people the robot tracks
            let mut audience = heard.clone();
            for cluster in metrics::truth_clusters(&present, self.scenario.social.d_yellow) {
                if !cluster.is_disjoint(&heard) {
                    audience.extend(cluster);
                }
            }
            let mut leaving: Vec<(u32, Vec2)> = Vec::new();
            for &id in &audience {
                let Some(w) = self.walkers.iter().find(|w| w.state.id == id) else {
                    continue;
                };
                // already leaving after an earlier advisory
                if matches!(w.plan, Plan::Disperse { .. }) {
                    continue;
                }
                let complied = self.compliance_rng.bernoulli(self.scenario.compliance.p_comply);
                out.push(ComplianceRecord {
                    message_id: ev.message_id,
                    pedestrian: id,
                    complied,
                });
                if complied {
                    leaving.push((id, w.state.position));
                }
            }
            let goals = dispersal_goals(
                crowd.centroid,
                &leaving,
                self.scenario.compliance.dispersal_radius,
                self.scenario.social.d_yellow,
            );
            for (id, goal) in goals {
                if let Some(w) = self.walkers.iter_mut().find(|w| w.state.id == id) {
                    w.plan = Plan::Disperse { goal };
                }
            }
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &self,
        tick: u64,
        crowds: &[CrowdGraph],
        goal: Vec2,
        sensed: Vec2,
        blocked: bool,
        advisories: Vec<AdvisoryEvent>,
        compliance: Vec<ComplianceRecord>,
    ) -> ReplayRecord {
        let pedestrians = self
            .walkers
            .iter()
            .filter(|w| w.active_at(tick))
            .map(|w| PedestrianRecord {
                id: w.state.id,
                position: sig9v(w.state.position),
                velocity: sig9v(w.state.velocity),
                facing: sig9(w.state.facing),
                shoulder_length: sig9(w.state.shoulder_length),
                shoulder_width: sig9(w.state.shoulder_width),
                dispersing: matches!(w.plan, Plan::Disperse { .. }),
            })
            .collect();
        let tracks = self
            .tracker
            .tracks()
            .iter()
            .map(|t| TrackRecord {
                id: t.track_id,
                status: t.status,
                position: sig9v(t.state.position),
                matched: t.matched,
                truth: t.truth_id,
            })
            .collect();
        let crowds = crowds
            .iter()
            .map(|c| CrowdRecord {
                id: c.crowd_id,
                members: c.member_ids.iter().copied().collect(),
                centroid: c.centroid,
                weight: c.weight,
                first_seen: c.first_seen,
                deadline: c.deadline,
            })
            .collect();
        let advisories = advisories
            .into_iter()
            .map(|e| AdvisoryEvent {
                distance: sig9(e.distance),
                ..e
            })
            .collect();
        ReplayRecord {
            tick,
            pedestrians,
            tracks,
            crowds,
            mission: MissionRecord {
                mode: self.mission.mode.name(),
                crowd: self.mission.mode.crowd(),
                goal: sig9v(goal),
                route: self.mission.route.clone(),
            },
            robot: RobotRecord {
                sensed_position: sensed,
                position: sig9v(self.pose.position),
                heading: sig9(self.pose.heading),
                linear: sig9(self.command.linear),
                angular: sig9(self.command.angular),
                blocked,
            },
            advisories,
            compliance,
        }
    }
}

/// Runs a scenario for its duration.
pub fn run(scenario: &Scenario) -> Result<(ReplayLog, MetricsSummary), EngineError> {
    let mut engine = Engine::new(scenario)?;
    let mut acc = MetricsAccumulator::new(scenario);
    let mut records = Vec::with_capacity(scenario.duration as usize);
    for _ in 0..scenario.duration {
        let r = engine.step()?;
        acc.observe(&r);
        records.push(r);
    }
    let log = ReplayLog {
        header: engine.header(),
        records,
    };
    Ok((log, acc.finish()))
}
