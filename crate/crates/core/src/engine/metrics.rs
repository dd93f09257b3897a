//! Run metrics, computed from replay records alone.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::replay::{ReplayLog, ReplayRecord};
use super::scenario::Scenario;
use crate::geom::{OrientedRect, Vec2};
use crate::tracker::TrackStatus;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub ticks: u64,
    /// Contact episodes: a robot-pedestrian pair starts overlapping.
    pub collisions: u64,
    /// Ticks × pedestrians with the robot disc overlapping a footprint.
    pub overlap_ticks: u64,
    /// Times a confirmed track's matched ground-truth pedestrian changed.
    pub id_switches: u64,
    /// Detected crowds matching a ground-truth cluster, over all detected.
    pub crowd_precision: f64,
    /// Ground-truth clusters matched by a detected crowd, over all clusters.
    pub crowd_recall: f64,
    pub advisories: u64,
    /// Mean seconds from an advisory until its crowd leaves the crowd table.
    pub mean_dissolution_time: f64,
    pub undissolved: u64,
    pub compliance_decisions: u64,
    pub complied: u64,
    pub distance_traveled: f64,
}

/// Groups of two or more pedestrians linked by chains of pairwise distances
/// below `d_yellow`.
pub fn truth_clusters(positions: &[(u32, Vec2)], d_yellow: f64) -> Vec<BTreeSet<u32>> {
    let n = positions.len();
    let mut label: Vec<usize> = (0..n).collect();
    fn root(label: &mut [usize], mut x: usize) -> usize {
        while label[x] != x {
            label[x] = label[label[x]];
            x = label[x];
        }
        x
    }
    for i in 0..n {
        for j in i + 1..n {
            if positions[i].1.distance(positions[j].1) < d_yellow {
                let (a, b) = (root(&mut label, i), root(&mut label, j));
                label[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: BTreeMap<usize, BTreeSet<u32>> = BTreeMap::new();
    for i in 0..n {
        let r = root(&mut label, i);
        groups.entry(r).or_default().insert(positions[i].0);
    }
    groups.into_values().filter(|g| g.len() >= 2).collect()
}

fn jaccard(a: &BTreeSet<u32>, b: &BTreeSet<u32>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Minimum Jaccard overlap for a detected crowd to match a true cluster.
pub const CROWD_MATCH: f64 = 0.5;

/// Folds replay records into a [`MetricsSummary`].
#[derive(Debug, Clone)]
pub struct MetricsAccumulator {
    robot_radius: f64,
    d_yellow: f64,
    dt: f64,
    last_position: Vec2,
    summary: MetricsSummary,
    touching: BTreeSet<u32>,
    track_truth: BTreeMap<u32, u32>,
    detected: u64,
    detected_hits: u64,
    clusters: u64,
    cluster_hits: u64,
    /// Advisory tick per crowd awaiting dissolution.
    pending: Vec<(u32, u64)>,
    dissolution_ticks: u64,
    dissolved: u64,
}

impl MetricsAccumulator {
    pub fn new(scenario: &Scenario) -> Self {
        Self {
            robot_radius: scenario.robot.limits.radius,
            d_yellow: scenario.social.d_yellow,
            dt: scenario.dt,
            last_position: scenario.robot.start,
            summary: MetricsSummary::default(),
            touching: BTreeSet::new(),
            track_truth: BTreeMap::new(),
            detected: 0,
            detected_hits: 0,
            clusters: 0,
            cluster_hits: 0,
            pending: Vec::new(),
            dissolution_ticks: 0,
            dissolved: 0,
        }
    }

    pub fn observe(&mut self, r: &ReplayRecord) {
        let s = &mut self.summary;
        s.ticks += 1;

        let robot = r.robot.position;
        let mut touching = BTreeSet::new();
        for p in &r.pedestrians {
            let rect = OrientedRect {
                center: p.position,
                half_x: p.shoulder_width / 2.0,
                half_y: p.shoulder_length / 2.0,
                angle: p.facing,
            };
            if rect.overlaps_disc(robot, self.robot_radius) {
                touching.insert(p.id);
            }
        }
        s.overlap_ticks += touching.len() as u64;
        s.collisions += touching.difference(&self.touching).count() as u64;
        self.touching = touching;

        for t in r
            .tracks
            .iter()
            .filter(|t| t.matched && t.status == TrackStatus::Confirmed)
        {
            if let Some(truth) = t.truth {
                if let Some(prev) = self.track_truth.insert(t.id, truth) {
                    s.id_switches += u64::from(prev != truth);
                }
            }
        }

        let truth_of: BTreeMap<u32, Option<u32>> = r.tracks.iter().map(|t| (t.id, t.truth)).collect();
        let positions: Vec<(u32, Vec2)> = r.pedestrians.iter().map(|p| (p.id, p.position)).collect();
        let clusters = truth_clusters(&positions, self.d_yellow);
        let detected: Vec<BTreeSet<u32>> = r
            .crowds
            .iter()
            .map(|c| {
                c.members
                    .iter()
                    .filter_map(|m| truth_of.get(m).copied().flatten())
                    .collect()
            })
            .collect();
        self.detected += detected.len() as u64;
        self.clusters += clusters.len() as u64;
        self.detected_hits += detected
            .iter()
            .filter(|d| clusters.iter().any(|g| jaccard(d, g) >= CROWD_MATCH))
            .count() as u64;
        self.cluster_hits += clusters
            .iter()
            .filter(|g| detected.iter().any(|d| jaccard(d, g) >= CROWD_MATCH))
            .count() as u64;

        let live: BTreeSet<u32> = r.crowds.iter().map(|c| c.id).collect();
        let mut still = Vec::new();
        for &(crowd, since) in &self.pending {
            if live.contains(&crowd) {
                still.push((crowd, since));
            } else {
                self.dissolution_ticks += r.tick - since;
                self.dissolved += 1;
            }
        }
        self.pending = still;
        for a in &r.advisories {
            s.advisories += 1;
            self.pending.push((a.crowd_id, a.tick));
        }

        s.compliance_decisions += r.compliance.len() as u64;
        s.complied += r.compliance.iter().filter(|c| c.complied).count() as u64;

        s.distance_traveled += self.last_position.distance(robot);
        self.last_position = robot;
    }

    pub fn finish(mut self) -> MetricsSummary {
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        self.summary.crowd_precision = ratio(self.detected_hits, self.detected);
        self.summary.crowd_recall = ratio(self.cluster_hits, self.clusters);
        self.summary.undissolved = self.pending.len() as u64;
        self.summary.mean_dissolution_time = if self.dissolved == 0 {
            0.0
        } else {
            self.dissolution_ticks as f64 * self.dt / self.dissolved as f64
        };
        self.summary
    }
}

pub fn compute_metrics(log: &ReplayLog) -> MetricsSummary {
    let mut acc = MetricsAccumulator::new(&log.header.scenario);
    for r in &log.records {
        acc.observe(r);
    }
    acc.finish()
}
