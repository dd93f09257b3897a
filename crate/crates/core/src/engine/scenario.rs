//! Scenario documents (TOML) and their validation.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::DEFAULT_DT;
use crate::frvo::FrvoParams;
use crate::geom::Vec2;
use crate::localnav::{ReactiveParams, RobotParams, POLICY_NAMES};
use crate::pedestrian::{DEFAULT_SHOULDER_LENGTH, DEFAULT_SHOULDER_WIDTH};
use crate::planner::{AdvisoryParams, RoutingParams};
use crate::sensing::{CameraRig, SensingParams};
use crate::socialgraph::SocialParams;
use crate::tracker::TrackerParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("cannot serialize scenario: {0}")]
    Serialize(String),
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        path: path.into(),
        message: message.into(),
    }
}

/// Axis-aligned rectangle in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RectSpec {
    pub min: Vec2,
    pub max: Vec2,
}

impl RectSpec {
    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JunctionSpec {
    pub position: Vec2,
    /// Indices of the junctions reachable from this one.
    pub exits: Vec<usize>,
}

fn default_resolution() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSpec {
    /// Extent in meters.
    pub width: f64,
    pub height: f64,
    #[serde(default = "default_resolution")]
    pub resolution: f64,
    #[serde(default)]
    pub origin: Vec2,
    #[serde(default)]
    pub obstacles: Vec<RectSpec>,
    /// Patrol graph. Empty means a loop through the four quarter points.
    #[serde(default)]
    pub junctions: Vec<JunctionSpec>,
}

impl MapSpec {
    pub fn bounds(&self) -> RectSpec {
        RectSpec {
            min: self.origin,
            max: self.origin + Vec2::new(self.width, self.height),
        }
    }
}

fn default_true() -> bool {
    true
}

fn default_walk_speed() -> f64 {
    1.0
}

fn default_shoulder_length() -> f64 {
    DEFAULT_SHOULDER_LENGTH
}

fn default_shoulder_width() -> f64 {
    DEFAULT_SHOULDER_WIDTH
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PedestrianSpec {
    pub id: u32,
    pub start: Vec2,
    /// Visited in order. Ignored when `wander` is set.
    #[serde(default)]
    pub waypoints: Vec<Vec2>,
    #[serde(default = "default_true")]
    pub loop_waypoints: bool,
    /// Walk to uniformly drawn goals inside this rectangle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wander: Option<RectSpec>,
    #[serde(default = "default_walk_speed")]
    pub speed: f64,
    #[serde(default = "default_shoulder_length")]
    pub shoulder_length: f64,
    #[serde(default = "default_shoulder_width")]
    pub shoulder_width: f64,
    #[serde(default)]
    pub spawn: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub despawn: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Surveillance mission: patrol, approach crowds, advise.
    #[default]
    Patrol,
    /// Keep up with a moving target point.
    Follow,
}

fn default_follow_speed() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FollowSpec {
    #[serde(default)]
    pub waypoints: Vec<Vec2>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wander: Option<RectSpec>,
    #[serde(default = "default_follow_speed")]
    pub speed: f64,
}

fn default_policy() -> String {
    "reactive_vo".to_owned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSpec {
    pub start: Vec2,
    #[serde(default)]
    pub heading: f64,
    #[serde(default = "default_policy")]
    pub policy: String,
    #[serde(default)]
    pub task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub follow: Option<FollowSpec>,
    #[serde(default)]
    pub limits: RobotParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComplianceParams {
    /// Probability that an advised pedestrian walks to a dispersal goal.
    pub p_comply: f64,
    /// Smallest distance from the crowd centre to a dispersal goal, meters.
    pub dispersal_radius: f64,
}

impl Default for ComplianceParams {
    fn default() -> Self {
        Self {
            p_comply: 0.5,
            dispersal_radius: 2.5,
        }
    }
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    /// Ticks to simulate.
    pub duration: u64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub map: MapSpec,
    #[serde(default)]
    pub pedestrians: Vec<PedestrianSpec>,
    pub robot: RobotSpec,
    #[serde(default)]
    pub rig: CameraRig,
    #[serde(default)]
    pub sensing: SensingParams,
    #[serde(default)]
    pub tracker: TrackerParams,
    #[serde(default)]
    pub social: SocialParams,
    #[serde(default)]
    pub routing: RoutingParams,
    #[serde(default)]
    pub advisory: AdvisoryParams,
    #[serde(default)]
    pub frvo: FrvoParams,
    #[serde(default)]
    pub localnav: ReactiveParams,
    #[serde(default)]
    pub compliance: ComplianceParams,
}

/// Parses and validates a scenario document.
pub fn load_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let scenario: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    scenario.validate()?;
    Ok(scenario)
}

fn positive(path: &str, x: f64) -> Result<(), ScenarioError> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(invalid(path, format!("must be positive, got {x}")))
    }
}

fn probability(path: &str, x: f64) -> Result<(), ScenarioError> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(invalid(path, format!("must lie in [0, 1], got {x}")))
    }
}

impl Scenario {
    /// Full document with every default spelled out.
    pub fn to_toml(&self) -> Result<String, ScenarioError> {
        toml::to_string(self).map_err(|e| ScenarioError::Serialize(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.duration == 0 {
            return Err(invalid("duration", "must be at least 1 tick"));
        }
        self.validate_parts()
    }

    /// Everything except the duration, which runs may override with 0.
    pub fn validate_parts(&self) -> Result<(), ScenarioError> {
        positive("dt", self.dt)?;
        let m = &self.map;
        positive("map.width", m.width)?;
        positive("map.height", m.height)?;
        positive("map.resolution", m.resolution)?;
        if !m.origin.is_finite() {
            return Err(invalid("map.origin", "must be finite"));
        }
        let bounds = m.bounds();
        let inside = |path: String, p: Vec2| -> Result<(), ScenarioError> {
            if bounds.contains(p) {
                Ok(())
            } else {
                Err(invalid(path, format!("({}, {}) lies outside the map", p.x, p.y)))
            }
        };
        let rect = |path: String, r: &RectSpec| -> Result<(), ScenarioError> {
            if !(r.min.x < r.max.x && r.min.y < r.max.y) {
                return Err(invalid(path, "min must be below max on both axes"));
            }
            inside(format!("{path}.min"), r.min)?;
            inside(format!("{path}.max"), r.max)
        };
        for (k, o) in m.obstacles.iter().enumerate() {
            rect(format!("map.obstacles[{k}]"), o)?;
        }
        for (k, j) in m.junctions.iter().enumerate() {
            inside(format!("map.junctions[{k}].position"), j.position)?;
            for (e, &t) in j.exits.iter().enumerate() {
                if t >= m.junctions.len() || t == k {
                    return Err(invalid(
                        format!("map.junctions[{k}].exits[{e}]"),
                        format!("no junction {t} to lead to"),
                    ));
                }
            }
        }

        let mut ids = BTreeSet::new();
        for (k, p) in self.pedestrians.iter().enumerate() {
            let path = |f: &str| format!("pedestrians[{k}].{f}");
            if !ids.insert(p.id) {
                return Err(invalid(path("id"), format!("duplicate id {}", p.id)));
            }
            inside(path("start"), p.start)?;
            for (w, &q) in p.waypoints.iter().enumerate() {
                inside(format!("pedestrians[{k}].waypoints[{w}]"), q)?;
            }
            if let Some(r) = &p.wander {
                rect(path("wander"), r)?;
            }
            positive(&path("speed"), p.speed)?;
            if p.speed > self.frvo.v_max {
                return Err(invalid(
                    path("speed"),
                    format!("exceeds frvo.v_max = {}", self.frvo.v_max),
                ));
            }
            positive(&path("shoulder_length"), p.shoulder_length)?;
            positive(&path("shoulder_width"), p.shoulder_width)?;
            if p.despawn.is_some_and(|d| d <= p.spawn) {
                return Err(invalid(path("despawn"), "must come after spawn"));
            }
        }

        let r = &self.robot;
        inside("robot.start".into(), r.start)?;
        if m.obstacles.iter().any(|o| o.contains(r.start)) {
            return Err(invalid("robot.start", "lies inside an obstacle"));
        }
        if !r.heading.is_finite() {
            return Err(invalid("robot.heading", "must be finite"));
        }
        if !POLICY_NAMES.contains(&r.policy.as_str()) {
            return Err(invalid(
                "robot.policy",
                format!("unknown policy {:?}, expected one of {POLICY_NAMES:?}", r.policy),
            ));
        }
        match (&r.task, &r.follow) {
            (Task::Follow, None) => return Err(invalid("robot.follow", "required when task = \"follow\"")),
            (_, Some(f)) => {
                positive("robot.follow.speed", f.speed)?;
                for (w, &q) in f.waypoints.iter().enumerate() {
                    inside(format!("robot.follow.waypoints[{w}]"), q)?;
                }
                if let Some(w) = &f.wander {
                    rect("robot.follow.wander".into(), w)?;
                }
            }
            _ => {}
        }
        let l = &r.limits;
        positive("robot.limits.v_max", l.v_max)?;
        positive("robot.limits.omega_max", l.omega_max)?;
        positive("robot.limits.radius", l.radius)?;
        positive("robot.limits.max_range", l.max_range)?;
        positive("robot.limits.goal_tolerance", l.goal_tolerance)?;
        if l.beams < 8 {
            return Err(invalid("robot.limits.beams", "needs at least 8 beams"));
        }

        if self.rig.mount_yaws_deg.len() != usize::from(self.rig.num_cameras) || self.rig.num_cameras == 0 {
            return Err(invalid("rig.mount_yaws_deg", "needs one yaw per camera"));
        }
        if !(self.rig.fov_deg > 0.0 && self.rig.fov_deg < 180.0) {
            return Err(invalid("rig.fov_deg", "must lie in (0, 180)"));
        }
        positive("rig.max_range", self.rig.max_range)?;

        let s = &self.sensing;
        probability("sensing.p_miss", s.p_miss)?;
        probability("sensing.outlier_rate", s.outlier_rate)?;
        if s.feature_dim < 2 {
            return Err(invalid("sensing.feature_dim", "needs at least 2 dimensions"));
        }
        if s.returns_per_box == 0 {
            return Err(invalid("sensing.returns_per_box", "must be at least 1"));
        }
        positive("sensing.body_height", s.body_height)?;

        let t = &self.tracker;
        probability("tracker.feature_beta", t.feature_beta)?;
        probability("tracker.box_alpha", t.box_alpha)?;
        probability("tracker.velocity_gain", t.velocity_gain)?;

        let so = &self.social;
        if !(so.d_red > 0.0 && so.d_red < so.d_yellow && so.d_yellow <= so.edge_max) {
            return Err(invalid("social", "need 0 < d_red < d_yellow <= edge_max"));
        }
        probability("social.min_overlap", so.min_overlap)?;

        positive("routing.lambda", self.routing.lambda)?;
        positive("advisory.trigger_distance", self.advisory.trigger_distance)?;
        if !(self.advisory.hysteresis >= 0.0) {
            return Err(invalid("advisory.hysteresis", "must be non-negative"));
        }
        positive("frvo.v_max", self.frvo.v_max)?;
        positive("frvo.horizon", self.frvo.horizon)?;
        positive("localnav.horizon", self.localnav.horizon)?;
        probability("compliance.p_comply", self.compliance.p_comply)?;
        positive("compliance.dispersal_radius", self.compliance.dispersal_radius)?;
        Ok(())
    }
}
