//! Two-stage multi-object tracker.
//!
//! Each tick, live tracks are advanced with the pedestrian motion model and
//! their boxes re-projected into the current camera frame. Detections are
//! first gated by appearance (cosine distance to the track's running
//! feature), then assigned by maximum total IoU with the Hungarian method.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bbox::BBox;
use crate::frvo::{step_pedestrian, FrvoParams};
use crate::geom::{Pose, Vec2};
use crate::pedestrian::PedestrianState;
use crate::sensing::{project_bbox, CameraRig, Detection, Feature, SensingParams};

#[derive(Debug, Error, PartialEq)]
pub enum TrackerError {
    #[error("feature is not unit norm (norm {0})")]
    NotUnit(f64),
    #[error("track {0} assigned more than once")]
    DuplicateTrack(usize),
    #[error("detection {0} assigned more than once")]
    DuplicateDetection(usize),
    #[error("assignment ({0}, {1}) out of range")]
    OutOfRange(usize, usize),
    #[error("association entry {0} outside [0, 1]")]
    BadEntry(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    Dead,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub track_id: u32,
    /// World-frame estimate.
    pub state: PedestrianState,
    pub bbox: BBox,
    pub feature: Feature,
    pub fused_range: f64,
    /// Bearing relative to the robot heading when last updated.
    pub bearing: f64,
    pub age: u32,
    pub misses: u32,
    /// Consecutive matches since spawn or the last miss.
    pub hits: u32,
    pub status: TrackStatus,
    /// Ground-truth id of the last matched detection; evaluation only.
    pub truth_id: Option<u32>,
    pub matched: bool,
}

impl Track {
    pub fn is_live(&self) -> bool {
        self.status != TrackStatus::Dead
    }
}

fn default_motion() -> FrvoParams {
    FrvoParams {
        forward_only: false,
        ..FrvoParams::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerParams {
    /// Cosine-distance gate.
    pub gate: f64,
    pub min_iou: f64,
    pub max_misses: u32,
    pub n_confirm: u32,
    /// Weight of the old feature in the running average.
    pub feature_beta: f64,
    /// Weight of the detection in the box and position update.
    pub box_alpha: f64,
    /// Gain of the finite-difference velocity update.
    pub velocity_gain: f64,
    /// Motion model used for prediction.
    pub motion: FrvoParams,
    /// An unmatched track this close to a matched one with the same
    /// appearance is a duplicate and is dropped, meters.
    pub duplicate_distance: f64,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self {
            gate: 0.4,
            min_iou: 0.1,
            max_misses: 5,
            n_confirm: 3,
            feature_beta: 0.9,
            box_alpha: 0.7,
            velocity_gain: 0.3,
            motion: default_motion(),
            duplicate_distance: 1.0,
        }
    }
}

/// `1 - f1·f2` for unit vectors.
pub fn cosine_distance(f1: &[f64], f2: &[f64]) -> Result<f64, TrackerError> {
    for f in [f1, f2] {
        let n = f.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (n - 1.0).abs() > 1e-9 {
            return Err(TrackerError::NotUnit(n));
        }
    }
    let dot: f64 = f1.iter().zip(f2).map(|(a, b)| a * b).sum();
    Ok((1.0 - dot).clamp(0.0, 2.0))
}

fn feature_distance(a: &Feature, b: &Feature) -> f64 {
    cosine_distance(a.as_slice(), b.as_slice()).expect("features are unit by construction")
}

/// Intersection over union; boxes from different cameras never overlap.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    if a.camera_id != b.camera_id {
        return 0.0;
    }
    let w = (a.right().min(b.right()) - a.left().max(b.left())).max(0.0);
    let h = (a.bottom().min(b.bottom()) - a.top().max(b.top())).max(0.0);
    let inter = w * h;
    let extent = |x: &BBox| (x.right() - x.left()) * (x.bottom() - x.top());
    let union = extent(a) + extent(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Per-track detections passing the appearance gate.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CandidateSet {
    pub candidates: Vec<Vec<usize>>,
    /// Closest detection by appearance for each track, if any detection exists.
    pub best: Vec<Option<usize>>,
}

impl CandidateSet {
    pub fn allows(&self, track: usize, detection: usize) -> bool {
        self.candidates[track].contains(&detection)
    }
}

pub fn feature_gate(track_features: &[&Feature], detections: &[Detection], gate: f64) -> CandidateSet {
    let mut out = CandidateSet::default();
    for f in track_features {
        let dists: Vec<f64> = detections.iter().map(|d| feature_distance(f, &d.feature)).collect();
        out.candidates
            .push((0..detections.len()).filter(|&j| dists[j] < gate).collect());
        out.best
            .push((0..detections.len()).min_by(|&a, &b| dists[a].total_cmp(&dists[b])));
    }
    out
}

/// Dense track × detection weight matrix with entries in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl AssociationMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self, TrackerError> {
        assert_eq!(entries.len(), rows * cols, "matrix shape");
        if let Some(&bad) = entries.iter().find(|e| !(0.0..=1.0).contains(*e)) {
            return Err(TrackerError::BadEntry(bad));
        }
        Ok(Self { rows, cols, entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TrackerError> {
        let cols = rows.first().map_or(0, Vec::len);
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    /// Sum of the entries selected by `pairs`.
    pub fn total(&self, pairs: &[(usize, usize)]) -> f64 {
        pairs.iter().map(|&(i, j)| self.get(i, j)).sum()
    }
}

/// Minimum-cost perfect assignment on a square matrix (potentials method).
/// Returns the column of each row.
fn min_cost_assignment(n: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Maximum-weight one-to-one matching; pairs below `min_iou` are dropped
/// afterwards. Sorted by track index.
pub fn hungarian_assign(matrix: &AssociationMatrix, min_iou: f64) -> Vec<(usize, usize)> {
    let n = matrix.rows.max(matrix.cols);
    if n == 0 {
        return Vec::new();
    }
    let cost = |i: usize, j: usize| {
        if i < matrix.rows && j < matrix.cols {
            -matrix.get(i, j)
        } else {
            0.0
        }
    };
    min_cost_assignment(n, cost)
        .into_iter()
        .enumerate()
        .filter(|&(i, j)| i < matrix.rows && j < matrix.cols && matrix.get(i, j) >= min_iou)
        .collect()
}

/// Gated association for one tick: IoU restricted to the appearance
/// candidates, Hungarian assignment, then the appearance argmin for tracks
/// whose gated IoU row is empty.
pub fn associate(tracks: &[Track], detections: &[Detection], params: &TrackerParams) -> Vec<(usize, usize)> {
    let features: Vec<&Feature> = tracks.iter().map(|t| &t.feature).collect();
    let cands = feature_gate(&features, detections, params.gate);
    let mut entries = Vec::with_capacity(tracks.len() * detections.len());
    for (i, t) in tracks.iter().enumerate() {
        for (j, d) in detections.iter().enumerate() {
            let w = if t.is_live() && cands.allows(i, j) {
                iou(&t.bbox, &d.bbox)
            } else {
                0.0
            };
            entries.push(w);
        }
    }
    let matrix = AssociationMatrix::new(tracks.len(), detections.len(), entries).expect("IoU lies in [0, 1]");
    let mut pairs = hungarian_assign(&matrix, params.min_iou);
    let mut det_used = vec![false; detections.len()];
    let mut track_used = vec![false; tracks.len()];
    for &(i, j) in &pairs {
        det_used[j] = true;
        track_used[i] = true;
    }
    for (i, t) in tracks.iter().enumerate() {
        let row_empty = (0..detections.len()).all(|j| matrix.get(i, j) == 0.0);
        if track_used[i] || !t.is_live() || !row_empty {
            continue;
        }
        if let Some(j) = cands.best[i] {
            if !det_used[j] && cands.allows(i, j) {
                det_used[j] = true;
                track_used[i] = true;
                pairs.push((i, j));
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

/// Advances live tracks one tick with the motion model, each against the
/// others, and re-projects their boxes from `robot_pose`.
pub fn predict_tracks(
    tracks: &[Track],
    dt: f64,
    robot_pose: &Pose,
    rig: &CameraRig,
    sensing: &SensingParams,
    params: &TrackerParams,
) -> Vec<Track> {
    let states: Vec<PedestrianState> = tracks.iter().filter(|t| t.is_live()).map(|t| t.state).collect();
    tracks
        .iter()
        .map(|t| {
            if !t.is_live() {
                return t.clone();
            }
            let mut t = t.clone();
            let mut subject = t.state;
            subject.v_pref = subject.v_pref.clamp_norm(params.motion.v_max);
            t.state = step_pedestrian(&subject, &states, dt, &params.motion).state;
            reproject(&mut t, robot_pose, rig, sensing);
            t
        })
        .collect()
}

fn reproject(t: &mut Track, robot_pose: &Pose, rig: &CameraRig, sensing: &SensingParams) {
    t.bearing = robot_pose.bearing_to(t.state.position);
    t.fused_range = robot_pose.position.distance(t.state.position);
    let camera = rig
        .camera_for_bearing(t.bearing)
        .unwrap_or_else(|| rig.nearest_camera(t.bearing));
    t.bbox = project_bbox(&t.state, camera, robot_pose, rig, sensing);
}

/// Applies one tick of assignments. Matched tracks blend towards their
/// detection; unmatched tracks age towards death; unmatched detections
/// spawn tentative tracks with ids from `next_id`.
#[allow(clippy::too_many_arguments)]
pub fn update_tracks(
    tracks: &[Track],
    detections: &[Detection],
    assignments: &[(usize, usize)],
    robot_pose: &Pose,
    dt: f64,
    rig: &CameraRig,
    sensing: &SensingParams,
    params: &TrackerParams,
    next_id: &mut u32,
) -> Result<Vec<Track>, TrackerError> {
    let mut by_track: Vec<Option<usize>> = vec![None; tracks.len()];
    let mut det_used = vec![false; detections.len()];
    for &(i, j) in assignments {
        if i >= tracks.len() || j >= detections.len() {
            return Err(TrackerError::OutOfRange(i, j));
        }
        if by_track[i].is_some() {
            return Err(TrackerError::DuplicateTrack(i));
        }
        if det_used[j] {
            return Err(TrackerError::DuplicateDetection(j));
        }
        by_track[i] = Some(j);
        det_used[j] = true;
    }

    let mut out = Vec::with_capacity(tracks.len() + detections.len());
    for (t, assigned) in tracks.iter().zip(&by_track) {
        let mut t = t.clone();
        t.matched = false;
        if !t.is_live() {
            out.push(t);
            continue;
        }
        t.age += 1;
        match *assigned {
            Some(j) => {
                let d = &detections[j];
                let bearing = d.bearing(rig);
                let range = d.fused_range(sensing);
                let measured = robot_pose.project(bearing, range);
                let last = t.state.position - t.state.velocity * dt;
                let position = t.state.position + (measured - t.state.position) * params.box_alpha;
                let observed_velocity = (position - last) / dt;
                let velocity = (t.state.velocity + (observed_velocity - t.state.velocity) * params.velocity_gain)
                    .clamp_norm(params.motion.v_max);
                t.state.position = position;
                t.state.velocity = velocity;
                t.state.v_pref = velocity;
                if velocity.norm() > 1e-3 {
                    t.state.facing = velocity.angle();
                }
                t.bbox = if t.bbox.camera_id == d.bbox.camera_id {
                    t.bbox.blend(&d.bbox, params.box_alpha)
                } else {
                    d.bbox
                };
                t.feature = t.feature.blend(&d.feature, params.feature_beta);
                t.fused_range = robot_pose.position.distance(position);
                t.bearing = robot_pose.bearing_to(position);
                t.misses = 0;
                t.hits += 1;
                t.truth_id = Some(d.truth_id);
                t.matched = true;
                if t.status == TrackStatus::Tentative && t.hits >= params.n_confirm {
                    t.status = TrackStatus::Confirmed;
                }
            }
            None => {
                t.misses += 1;
                t.hits = 0;
                if t.misses > params.max_misses {
                    t.status = TrackStatus::Dead;
                }
            }
        }
        out.push(t);
    }

    for (d, _) in detections.iter().zip(&det_used).filter(|(_, used)| !**used) {
        let bearing = d.bearing(rig);
        let range = d.fused_range(sensing);
        let position = robot_pose.project(bearing, range);
        let state = PedestrianState::new(*next_id, position).with_facing(bearing + robot_pose.heading);
        out.push(Track {
            track_id: *next_id,
            state,
            bbox: d.bbox,
            feature: d.feature.clone(),
            fused_range: range,
            bearing,
            age: 0,
            misses: 0,
            hits: 0,
            status: TrackStatus::Tentative,
            truth_id: Some(d.truth_id),
            matched: true,
        });
        *next_id += 1;
    }
    Ok(out)
}

/// Tracker state machine owned by one robot.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Tracker {
    pub params: TrackerParams,
    tracks: Vec<Track>,
    next_id: u32,
}

impl Tracker {
    pub fn new(params: TrackerParams) -> Self {
        Self {
            params,
            tracks: Vec::new(),
            next_id: 1,
        }
    }

    /// Tracks after the last step, including ones that died in it.
    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn confirmed(&self) -> impl Iterator<Item = &Track> {
        self.tracks.iter().filter(|t| t.status == TrackStatus::Confirmed)
    }

    /// One tick: drop tracks that died last tick, predict, associate, update.
    pub fn step(
        &mut self,
        detections: &[Detection],
        robot_pose: &Pose,
        dt: f64,
        rig: &CameraRig,
        sensing: &SensingParams,
    ) -> Result<(), TrackerError> {
        self.tracks.retain(Track::is_live);
        let predicted = predict_tracks(&self.tracks, dt, robot_pose, rig, sensing, &self.params);
        let pairs = associate(&predicted, detections, &self.params);
        self.tracks = update_tracks(
            &predicted,
            detections,
            &pairs,
            robot_pose,
            dt,
            rig,
            sensing,
            &self.params,
            &mut self.next_id,
        )?;
        self.drop_duplicates()
    }

    /// Two tracks on one person can take turns on its detection forever
    /// without either reaching `max_misses`. Of a matched and an unmatched
    /// track with the same position and appearance, the younger goes.
    fn drop_duplicates(&mut self) -> Result<(), TrackerError> {
        let mut doomed = Vec::new();
        for t in self.tracks.iter().filter(|t| !t.matched) {
            for m in self.tracks.iter().filter(|m| m.matched) {
                if t.state.position.distance(m.state.position) < self.params.duplicate_distance
                    && cosine_distance(t.feature.as_slice(), m.feature.as_slice())? < self.params.gate
                {
                    doomed.push(t.track_id.max(m.track_id));
                    break;
                }
            }
        }
        self.tracks.retain(|t| !doomed.contains(&t.track_id));
        Ok(())
    }
}

/// World position implied by a track's bearing and fused range.
pub fn track_position(t: &Track, robot_pose: &Pose) -> Vec2 {
    robot_pose.project(t.bearing, t.fused_range)
}
