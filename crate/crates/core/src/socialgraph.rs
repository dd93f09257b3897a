//! Proximity graph over tracked pedestrians and crowd extraction.
//!
//! Edges are classified by distance as safe, warning or dangerous. Crowds
//! are connected components over warning and dangerous edges with at least
//! two members, carried across ticks by member overlap.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::clock::SimClock;
use crate::geom::{Pose, Vec2};
use crate::tracker::{Track, TrackStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeClass {
    Safe,
    Warning,
    Dangerous,
}

impl EdgeClass {
    /// Warning or dangerous.
    pub fn is_close(self) -> bool {
        self != EdgeClass::Safe
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SocialParams {
    pub d_red: f64,
    pub d_yellow: f64,
    pub edge_max: f64,
    /// Ticks a crowd stays eligible for a visit after it is first seen.
    pub window: u64,
    /// Fraction of shared members needed to carry a crowd's identity.
    pub min_overlap: f64,
}

impl Default for SocialParams {
    fn default() -> Self {
        Self {
            d_red: 1.0,
            d_yellow: 2.0,
            edge_max: 5.0,
            window: 300,
            min_overlap: 0.5,
        }
    }
}

/// Dangerous below `d_red`, warning below `d_yellow`, safe otherwise.
pub fn classify_edge(distance: f64, params: &SocialParams) -> EdgeClass {
    debug_assert!(distance >= 0.0);
    if distance < params.d_red {
        EdgeClass::Dangerous
    } else if distance < params.d_yellow {
        EdgeClass::Warning
    } else {
        EdgeClass::Safe
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SocialNode {
    pub id: u32,
    pub position: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SocialEdge {
    /// Always `a < b`.
    pub a: u32,
    pub b: u32,
    pub distance: f64,
    pub klass: EdgeClass,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SocialGraph {
    pub nodes: Vec<SocialNode>,
    pub edges: Vec<SocialEdge>,
}

impl SocialGraph {
    /// All pairs within `edge_max`, classified. Node ids must be distinct.
    pub fn from_nodes(mut nodes: Vec<SocialNode>, params: &SocialParams) -> Self {
        nodes.sort_by_key(|n| n.id);
        let mut edges = Vec::new();
        for (i, a) in nodes.iter().enumerate() {
            for b in &nodes[i + 1..] {
                let distance = a.position.distance(b.position);
                if distance <= params.edge_max {
                    edges.push(SocialEdge {
                        a: a.id,
                        b: b.id,
                        distance,
                        klass: classify_edge(distance, params),
                    });
                }
            }
        }
        Self { nodes, edges }
    }

    pub fn position(&self, id: u32) -> Option<Vec2> {
        self.nodes.iter().find(|n| n.id == id).map(|n| n.position)
    }

    /// Member sets of the components over warning and dangerous edges with at
    /// least two members, ordered by smallest member.
    pub fn close_components(&self) -> Vec<BTreeSet<u32>> {
        let mut adj: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for e in self.edges.iter().filter(|e| e.klass.is_close()) {
            adj.entry(e.a).or_default().push(e.b);
            adj.entry(e.b).or_default().push(e.a);
        }
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for &start in adj.keys() {
            if !seen.insert(start) {
                continue;
            }
            let mut comp = BTreeSet::from([start]);
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for &v in &adj[&u] {
                    if seen.insert(v) {
                        comp.insert(v);
                        queue.push_back(v);
                    }
                }
            }
            out.push(comp);
        }
        out
    }
}

/// Graph over confirmed tracks, each placed at `robot_pose ⊕ (bearing, range)`.
pub fn build_social_graph(tracks: &[Track], robot_pose: &Pose, params: &SocialParams) -> SocialGraph {
    let nodes = tracks
        .iter()
        .filter(|t| t.status == TrackStatus::Confirmed)
        .map(|t| SocialNode {
            id: t.track_id,
            position: robot_pose.project(t.bearing, t.fused_range),
        })
        .collect();
    SocialGraph::from_nodes(nodes, params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrowdGraph {
    pub crowd_id: u32,
    pub member_ids: BTreeSet<u32>,
    pub centroid: Vec2,
    pub weight: u32,
    pub first_seen: u64,
    /// Last tick at which a visit still counts.
    pub deadline: u64,
}

fn overlap(a: &BTreeSet<u32>, b: &BTreeSet<u32>) -> f64 {
    let shared = a.intersection(b).count();
    shared as f64 / a.len().max(b.len()) as f64
}

/// Crowds of `graph` at `clock`, inheriting id and `first_seen` from the
/// best-overlapping crowd in `previous` when the overlap reaches
/// `params.min_overlap`. Fresh crowds take ids from `next_id`.
pub fn extract_crowds(
    graph: &SocialGraph,
    clock: &SimClock,
    params: &SocialParams,
    previous: &[CrowdGraph],
    next_id: &mut u32,
) -> Vec<CrowdGraph> {
    let mut claimed = vec![false; previous.len()];
    graph
        .close_components()
        .into_iter()
        .map(|members| {
            let best = previous
                .iter()
                .enumerate()
                .filter(|(k, _)| !claimed[*k])
                .map(|(k, c)| (k, overlap(&members, &c.member_ids)))
                .filter(|&(_, o)| o >= params.min_overlap)
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
            let (crowd_id, first_seen) = match best {
                Some((k, _)) => {
                    claimed[k] = true;
                    (previous[k].crowd_id, previous[k].first_seen)
                }
                None => {
                    *next_id += 1;
                    (*next_id - 1, clock.tick())
                }
            };
            let sum = members
                .iter()
                .map(|&id| graph.position(id).expect("component member is a node"))
                .fold(Vec2::ZERO, |acc, p| acc + p);
            CrowdGraph {
                crowd_id,
                centroid: sum / members.len() as f64,
                weight: members.len() as u32,
                member_ids: members,
                first_seen,
                deadline: first_seen + params.window,
            }
        })
        .collect()
}

/// Crowd table carried from tick to tick.
#[derive(Debug, Clone, PartialEq)]
pub struct CrowdTracker {
    pub params: SocialParams,
    crowds: Vec<CrowdGraph>,
    next_id: u32,
}

impl CrowdTracker {
    pub fn new(params: SocialParams) -> Self {
        Self {
            params,
            crowds: Vec::new(),
            next_id: 1,
        }
    }

    pub fn update(&mut self, graph: &SocialGraph, clock: &SimClock) -> &[CrowdGraph] {
        self.crowds = extract_crowds(graph, clock, &self.params, &self.crowds, &mut self.next_id);
        &self.crowds
    }

    pub fn crowds(&self) -> &[CrowdGraph] {
        &self.crowds
    }

    pub fn get(&self, crowd_id: u32) -> Option<&CrowdGraph> {
        self.crowds.iter().find(|c| c.crowd_id == crowd_id)
    }
}
