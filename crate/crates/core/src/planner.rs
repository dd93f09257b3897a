//! Patrol and crowd routing.
//!
//! A 3D point cloud is flattened into an occupancy grid after dropping
//! ground returns. Patrol picks junction exits by smoothed crowd frequency.
//! When crowds are present, a depth-first branch-and-bound picks the visit
//! order that best trades travel energy against crowd weight under hard
//! deadlines. Paths come from 8-connected A* followed by line-of-sight
//! shortcutting.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::SimClock;
use crate::geom::Vec2;

#[derive(Debug, Error, PartialEq)]
pub enum PlannerError {
    #[error("no path from {0:?} to {1:?}")]
    Unreachable(Vec2, Vec2),
    #[error("{0} crowds exceed the routing limit of {1}")]
    TooManyCrowds(usize, usize),
    #[error("resolution must be positive")]
    BadResolution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cell {
    Free,
    Occupied,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    pub resolution: f64,
    pub origin: Vec2,
    pub width: usize,
    pub height: usize,
    cells: Vec<Cell>,
}

impl OccupancyGrid {
    pub fn new(width: usize, height: usize, resolution: f64, origin: Vec2, fill: Cell) -> Result<Self, PlannerError> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(PlannerError::BadResolution);
        }
        Ok(Self {
            resolution,
            origin,
            width,
            height,
            cells: vec![fill; width * height],
        })
    }

    pub fn in_bounds(&self, i: i64, j: i64) -> bool {
        i >= 0 && j >= 0 && (i as usize) < self.width && (j as usize) < self.height
    }

    /// Cell state; out of bounds counts as occupied.
    pub fn get(&self, i: i64, j: i64) -> Cell {
        if self.in_bounds(i, j) {
            self.cells[j as usize * self.width + i as usize]
        } else {
            Cell::Occupied
        }
    }

    pub fn set(&mut self, i: usize, j: usize, cell: Cell) {
        self.cells[j * self.width + i] = cell;
    }

    pub fn is_free(&self, i: i64, j: i64) -> bool {
        self.get(i, j) == Cell::Free
    }

    /// Cell containing `p` (may be out of bounds).
    pub fn cell_of(&self, p: Vec2) -> (i64, i64) {
        (
            ((p.x - self.origin.x) / self.resolution).floor() as i64,
            ((p.y - self.origin.y) / self.resolution).floor() as i64,
        )
    }

    pub fn center(&self, i: i64, j: i64) -> Vec2 {
        Vec2::new(
            self.origin.x + (i as f64 + 0.5) * self.resolution,
            self.origin.y + (j as f64 + 0.5) * self.resolution,
        )
    }

    pub fn is_free_at(&self, p: Vec2) -> bool {
        let (i, j) = self.cell_of(p);
        self.is_free(i, j)
    }

    pub fn count(&self, cell: Cell) -> usize {
        self.cells.iter().filter(|c| **c == cell).count()
    }

    /// Marks every cell whose centre lies within `radius` of an occupied
    /// cell's centre as occupied.
    pub fn inflate(&self, radius: f64) -> OccupancyGrid {
        let mut out = self.clone();
        let r = (radius / self.resolution).ceil() as i64;
        let r2 = (radius / self.resolution).powi(2);
        for j in 0..self.height as i64 {
            for i in 0..self.width as i64 {
                if self.get(i, j) != Cell::Occupied {
                    continue;
                }
                for dj in -r..=r {
                    for di in -r..=r {
                        if ((di * di + dj * dj) as f64) <= r2 && self.in_bounds(i + di, j + dj) {
                            out.set((i + di) as usize, (j + dj) as usize, Cell::Occupied);
                        }
                    }
                }
            }
        }
        out
    }

    /// Free cell centre closest to `p`, or `p` itself if already free.
    pub fn nearest_free(&self, p: Vec2) -> Option<Vec2> {
        if self.is_free_at(p) {
            return Some(p);
        }
        let mut best: Option<(f64, Vec2)> = None;
        for j in 0..self.height as i64 {
            for i in 0..self.width as i64 {
                if self.is_free(i, j) {
                    let c = self.center(i, j);
                    let d = c.distance(p);
                    if best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, c));
                    }
                }
            }
        }
        best.map(|(_, c)| c)
    }

    /// Every cell the segment `a`–`b` touches, including both neighbours
    /// where it passes exactly through a corner.
    pub fn supercover(&self, a: Vec2, b: Vec2) -> Vec<(i64, i64)> {
        let res = self.resolution;
        let (mut i, mut j) = self.cell_of(a);
        let (ti, tj) = self.cell_of(b);
        let d = b - a;
        let step_i: i64 = if d.x > 0.0 { 1 } else { -1 };
        let step_j: i64 = if d.y > 0.0 { 1 } else { -1 };
        let next_boundary = |coord: f64, origin: f64, idx: i64, step: i64| {
            let edge = origin + (idx + i64::from(step > 0)) as f64 * res;
            edge - coord
        };
        let mut t_max_x = if d.x != 0.0 {
            next_boundary(a.x, self.origin.x, i, step_i) / d.x
        } else {
            f64::INFINITY
        };
        let mut t_max_y = if d.y != 0.0 {
            next_boundary(a.y, self.origin.y, j, step_j) / d.y
        } else {
            f64::INFINITY
        };
        let t_dx = if d.x != 0.0 { res / d.x.abs() } else { f64::INFINITY };
        let t_dy = if d.y != 0.0 { res / d.y.abs() } else { f64::INFINITY };
        let mut out = vec![(i, j)];
        let limit = (ti - i).abs() + (tj - j).abs() + 2;
        for _ in 0..limit {
            if (i, j) == (ti, tj) {
                break;
            }
            let tx = t_max_x;
            let ty = t_max_y;
            if tx > 1.0 && ty > 1.0 {
                break;
            }
            if (tx - ty).abs() < 1e-12 {
                out.push((i + step_i, j));
                out.push((i, j + step_j));
                i += step_i;
                j += step_j;
                t_max_x += t_dx;
                t_max_y += t_dy;
            } else if tx < ty {
                i += step_i;
                t_max_x += t_dx;
            } else {
                j += step_j;
                t_max_y += t_dy;
            }
            out.push((i, j));
        }
        out
    }

    /// Whether every cell under the segment is free.
    pub fn line_of_sight(&self, a: Vec2, b: Vec2) -> bool {
        self.supercover(a, b).into_iter().all(|(i, j)| self.is_free(i, j))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionParams {
    pub resolution: f64,
    pub origin: Vec2,
    pub width: usize,
    pub height: usize,
    /// Returns below this height are ground.
    pub ground_height: f64,
    /// Returns above this height (ceilings, overhangs) are ignored.
    pub h_max: f64,
}

impl Default for ProjectionParams {
    fn default() -> Self {
        Self {
            resolution: 0.1,
            origin: Vec2::ZERO,
            width: 100,
            height: 100,
            ground_height: 0.30,
            h_max: 2.0,
        }
    }
}

/// Flattens a point cloud: ground returns mark their cell free, returns
/// between the ground filter and `h_max` mark it occupied, and cells never
/// hit stay unknown.
pub fn project_occupancy(points: &[Point3], params: &ProjectionParams) -> Result<OccupancyGrid, PlannerError> {
    let mut grid = OccupancyGrid::new(
        params.width,
        params.height,
        params.resolution,
        params.origin,
        Cell::Unknown,
    )?;
    for p in points {
        if p.z > params.h_max {
            continue;
        }
        let (i, j) = grid.cell_of(Vec2::new(p.x, p.y));
        if !grid.in_bounds(i, j) {
            continue;
        }
        let (i, j) = (i as usize, j as usize);
        if p.z >= params.ground_height {
            grid.set(i, j, Cell::Occupied);
        } else if grid.get(i as i64, j as i64) == Cell::Unknown {
            grid.set(i, j, Cell::Free);
        }
    }
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Junction {
    pub position: Vec2,
    pub exit_directions: Vec<Vec2>,
    /// Index of the junction each exit leads to.
    pub exit_targets: Vec<usize>,
    pub appearance_counts: Vec<f64>,
    /// Tick each exit was last taken.
    pub last_taken: Vec<Option<u64>>,
}

/// Per-visit decay of appearance counts.
pub const COUNT_DECAY: f64 = 0.99;

impl Junction {
    pub fn new(position: Vec2, exits: Vec<(Vec2, usize)>) -> Self {
        let n = exits.len();
        Self {
            position,
            exit_directions: exits
                .iter()
                .map(|(d, _)| d.normalized().unwrap_or(Vec2::new(1.0, 0.0)))
                .collect(),
            exit_targets: exits.iter().map(|(_, t)| *t).collect(),
            appearance_counts: vec![0.0; n],
            last_taken: vec![None; n],
        }
    }

    /// Smoothed probability of meeting a crowd down each exit.
    pub fn probabilities(&self) -> Vec<f64> {
        let total: f64 = self.appearance_counts.iter().sum();
        let n = self.appearance_counts.len() as f64;
        self.appearance_counts.iter().map(|c| (c + 1.0) / (total + n)).collect()
    }

    pub fn observe_crowd(&mut self, exit: usize) {
        self.appearance_counts[exit] += 1.0;
    }

    /// Decays the counts and records that `exit` was taken at `tick`.
    pub fn record_visit(&mut self, exit: usize, tick: u64) {
        for c in &mut self.appearance_counts {
            *c *= COUNT_DECAY;
        }
        self.last_taken[exit] = Some(tick);
    }
}

/// Exit with the highest smoothed appearance probability; ties go to the
/// least recently taken exit (never-taken first, then lowest index).
pub fn patrol_exit(junction: &Junction) -> usize {
    let probs = junction.probabilities();
    (0..probs.len())
        .min_by(|&a, &b| {
            probs[b]
                .total_cmp(&probs[a])
                .then(junction.last_taken[a].cmp(&junction.last_taken[b]))
                .then(a.cmp(&b))
        })
        .expect("junction has at least one exit")
}

pub fn patrol_direction(junction: &Junction) -> Vec2 {
    junction.exit_directions[patrol_exit(junction)]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrowdNode {
    pub crowd_id: u32,
    pub location: Vec2,
    pub weight: u32,
    pub deadline: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoutingParams {
    /// Energy per meter traveled.
    pub lambda: f64,
    pub n_max: usize,
}

impl Default for RoutingParams {
    fn default() -> Self {
        Self { lambda: 0.5, n_max: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Route {
    pub visits: Vec<CrowdNode>,
    /// Energy of each leg.
    pub energies: Vec<f64>,
    /// Arrival time at each visit, fractional ticks.
    pub arrivals: Vec<f64>,
    pub cost: f64,
}

/// Energy minus total visited weight minus the visit count, accumulated
/// leg by leg in visit order.
pub fn route_cost(start: Vec2, visits: &[CrowdNode], lambda: f64) -> f64 {
    let mut energy = 0.0;
    let mut at = start;
    for v in visits {
        energy += lambda * at.distance(v.location);
        at = v.location;
    }
    let weight: u32 = visits.iter().map(|v| v.weight).sum();
    energy - weight as f64 - visits.len() as f64
}

struct Search<'a> {
    crowds: &'a [CrowdNode],
    speed: f64,
    dt: f64,
    lambda: f64,
    start: Vec2,
    order: Vec<usize>,
    used: Vec<bool>,
    best: Vec<usize>,
    best_cost: f64,
}

impl Search<'_> {
    fn nodes(&self, order: &[usize]) -> Vec<CrowdNode> {
        order.iter().map(|&k| self.crowds[k]).collect()
    }

    /// Same arithmetic as [`route_cost`] on the current order.
    fn order_cost(&self) -> f64 {
        let mut energy = 0.0;
        let mut at = self.start;
        let mut weight = 0u32;
        for &k in &self.order {
            let c = &self.crowds[k];
            energy += self.lambda * at.distance(c.location);
            at = c.location;
            weight += c.weight;
        }
        energy - weight as f64 - self.order.len() as f64
    }

    fn dfs(&mut self, at: Vec2, time: f64, partial: f64) {
        let cost = self.order_cost();
        if cost < self.best_cost {
            self.best_cost = cost;
            self.best = self.order.clone();
        }
        let remaining: f64 = (0..self.crowds.len())
            .filter(|&k| !self.used[k])
            .map(|k| self.crowds[k].weight as f64 + 1.0)
            .sum();
        if partial - remaining > self.best_cost + 1e-9 {
            return;
        }
        for k in 0..self.crowds.len() {
            if self.used[k] {
                continue;
            }
            let c = self.crowds[k];
            let len = at.distance(c.location);
            let arrival = time + len / self.speed / self.dt;
            if arrival > c.deadline as f64 {
                continue;
            }
            self.used[k] = true;
            self.order.push(k);
            let step = self.lambda * len - c.weight as f64 - 1.0;
            self.dfs(c.location, arrival, partial + step);
            self.order.pop();
            self.used[k] = false;
        }
    }
}

/// Cost-minimizing visit sequence under hard deadlines. The empty route
/// (cost 0) is always admissible.
pub fn route_crowds(
    crowds: &[CrowdNode],
    robot_pos: Vec2,
    clock: &SimClock,
    speed: f64,
    params: &RoutingParams,
) -> Result<Route, PlannerError> {
    assert!(speed > 0.0, "routing speed must be positive");
    if crowds.len() > params.n_max {
        return Err(PlannerError::TooManyCrowds(crowds.len(), params.n_max));
    }
    let mut search = Search {
        crowds,
        speed,
        dt: clock.dt(),
        lambda: params.lambda,
        start: robot_pos,
        order: Vec::new(),
        used: vec![false; crowds.len()],
        best: Vec::new(),
        best_cost: f64::INFINITY,
    };
    search.dfs(robot_pos, clock.tick() as f64, 0.0);
    let visits = search.nodes(&search.best);
    let mut at = robot_pos;
    let mut time = clock.tick() as f64;
    let mut energies = Vec::new();
    let mut arrivals = Vec::new();
    for v in &visits {
        let len = at.distance(v.location);
        energies.push(params.lambda * len);
        time += len / speed / clock.dt();
        arrivals.push(time);
        at = v.location;
    }
    Ok(Route {
        cost: search.best_cost,
        visits,
        energies,
        arrivals,
    })
}

#[derive(PartialEq)]
struct Open {
    f: f64,
    g: f64,
    cell: (i64, i64),
}

impl Eq for Open {}

impl Ord for Open {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then(self.g.total_cmp(&other.g))
            .then(other.cell.cmp(&self.cell))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const NEIGHBORS: [(i64, i64); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];

/// Allowed moves from `(i, j)` with their lengths in cells. Diagonals may
/// not cut an occupied corner.
pub fn grid_moves(grid: &OccupancyGrid, (i, j): (i64, i64)) -> impl Iterator<Item = ((i64, i64), f64)> + '_ {
    NEIGHBORS.iter().filter_map(move |&(di, dj)| {
        let (ni, nj) = (i + di, j + dj);
        if !grid.is_free(ni, nj) {
            return None;
        }
        if di != 0 && dj != 0 && !(grid.is_free(i + di, j) && grid.is_free(i, j + dj)) {
            return None;
        }
        Some((
            (ni, nj),
            if di != 0 && dj != 0 {
                std::f64::consts::SQRT_2
            } else {
                1.0
            },
        ))
    })
}

/// Shortest 8-connected cell path (A* with the octile heuristic).
pub fn grid_path(grid: &OccupancyGrid, start: Vec2, goal: Vec2) -> Result<Vec<(i64, i64)>, PlannerError> {
    let s = grid.cell_of(start);
    let g = grid.cell_of(goal);
    if !grid.is_free(s.0, s.1) || !grid.is_free(g.0, g.1) {
        return Err(PlannerError::Unreachable(start, goal));
    }
    let h = |(i, j): (i64, i64)| {
        let dx = (i - g.0).abs() as f64;
        let dy = (j - g.1).abs() as f64;
        dx.max(dy) + (std::f64::consts::SQRT_2 - 1.0) * dx.min(dy)
    };
    let mut best: BTreeMap<(i64, i64), f64> = BTreeMap::new();
    let mut came: BTreeMap<(i64, i64), (i64, i64)> = BTreeMap::new();
    let mut open = BinaryHeap::new();
    best.insert(s, 0.0);
    open.push(Open {
        f: h(s),
        g: 0.0,
        cell: s,
    });
    while let Some(Open { g: cost, cell, .. }) = open.pop() {
        if cell == g {
            let mut path = vec![cell];
            let mut c = cell;
            while let Some(&p) = came.get(&c) {
                path.push(p);
                c = p;
            }
            path.reverse();
            return Ok(path);
        }
        if cost > best[&cell] {
            continue;
        }
        for (next, step) in grid_moves(grid, cell) {
            let ng = cost + step;
            if best.get(&next).is_none_or(|&b| ng < b) {
                best.insert(next, ng);
                came.insert(next, cell);
                open.push(Open {
                    f: ng + h(next),
                    g: ng,
                    cell: next,
                });
            }
        }
    }
    Err(PlannerError::Unreachable(start, goal))
}

/// Length of a polyline.
pub fn path_length(path: &[Vec2]) -> f64 {
    path.windows(2).map(|w| w[0].distance(w[1])).sum()
}

/// Smoothed waypoint path from `start` to `goal`: grid A* and then greedy
/// line-of-sight shortcuts. Starts and ends exactly at the inputs.
pub fn plan_path(grid: &OccupancyGrid, start: Vec2, goal: Vec2) -> Result<Vec<Vec2>, PlannerError> {
    let cells = grid_path(grid, start, goal)?;
    let mut raw: Vec<Vec2> = Vec::with_capacity(cells.len() + 2);
    raw.push(start);
    raw.extend(
        cells
            .iter()
            .skip(1)
            .take(cells.len().saturating_sub(2))
            .map(|&(i, j)| grid.center(i, j)),
    );
    raw.push(goal);
    let mut out = vec![start];
    let mut k = 0;
    while k + 1 < raw.len() {
        let mut next = k + 1;
        for m in (k + 2..raw.len()).rev() {
            if grid.line_of_sight(raw[k], raw[m]) {
                next = m;
                break;
            }
        }
        out.push(raw[next]);
        k = next;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvisoryEvent {
    pub tick: u64,
    pub crowd_id: u32,
    pub distance: f64,
    pub message_id: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdvisoryParams {
    pub trigger_distance: f64,
    pub hysteresis: f64,
}

impl Default for AdvisoryParams {
    fn default() -> Self {
        Self {
            trigger_distance: 5.0,
            hysteresis: 1.0,
        }
    }
}

/// Crowd as seen by the advisory rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdvisoryTarget {
    pub crowd_id: u32,
    pub centroid: Vec2,
    pub targeted: bool,
}

/// Active advisories keyed by crowd id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ActiveAdvisories {
    pub active: BTreeMap<u32, AdvisoryEvent>,
    pub next_message_id: u32,
}

/// Expires advisories whose crowd is gone or farther than the trigger
/// distance plus hysteresis, then emits one for every targeted crowd
/// closer than the trigger distance without an active advisory.
pub fn advisory_check(
    robot_pos: Vec2,
    crowds: &[AdvisoryTarget],
    active: &mut ActiveAdvisories,
    tick: u64,
    params: &AdvisoryParams,
) -> Vec<AdvisoryEvent> {
    active.active.retain(|id, _| {
        crowds
            .iter()
            .find(|c| c.crowd_id == *id)
            .is_some_and(|c| robot_pos.distance(c.centroid) <= params.trigger_distance + params.hysteresis)
    });
    let mut events = Vec::new();
    for c in crowds.iter().filter(|c| c.targeted) {
        let distance = robot_pos.distance(c.centroid);
        if distance < params.trigger_distance && !active.active.contains_key(&c.crowd_id) {
            let ev = AdvisoryEvent {
                tick,
                crowd_id: c.crowd_id,
                distance,
                message_id: active.next_message_id,
            };
            active.next_message_id += 1;
            active.active.insert(c.crowd_id, ev);
            events.push(ev);
        }
    }
    events
}
