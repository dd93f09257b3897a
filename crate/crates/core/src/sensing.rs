//! Simulated camera ring and range sensor.
//!
//! Four cameras with an 80° horizontal field of view sit at 90° intervals,
//! leaving 10° blind wedges between them. Detections carry a box in the
//! camera's normalized image plane, a synthetic appearance feature and a
//! coarse range from box height. Range returns inside the box frustum are
//! filtered with a one-dimensional RANSAC and fused with the visual range.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bbox::BBox;
use crate::geom::{point_segment_distance, ray_disc_intersection, wrap_angle, Pose, Vec2};
use crate::pedestrian::PedestrianState;
use crate::rng::SimRng;

#[derive(Debug, Error, PartialEq)]
pub enum SensingError {
    #[error("range scan is empty")]
    EmptyScan,
    #[error("feature must be unit norm (norm {0})")]
    NotUnit(f64),
}

/// Appearance descriptor, always unit norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature(Vec<f64>);

impl Feature {
    /// Normalizes `values`; `None` for an all-zero vector.
    pub fn from_raw(values: Vec<f64>) -> Option<Feature> {
        let n = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        (n > 1e-12).then(|| Feature(values.into_iter().map(|v| v / n).collect()))
    }

    /// Accepts `values` only if already unit norm (within 1e-9).
    pub fn try_unit(values: Vec<f64>) -> Result<Feature, SensingError> {
        let n = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (n - 1.0).abs() > 1e-9 {
            return Err(SensingError::NotUnit(n));
        }
        Ok(Feature(values))
    }

    /// Random unit vector of dimension `dim`.
    pub fn random(dim: usize, rng: &mut SimRng) -> Feature {
        loop {
            let raw: Vec<f64> = (0..dim).map(|_| rng.gaussian(1.0)).collect();
            if let Some(f) = Feature::from_raw(raw) {
                return f;
            }
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn dot(&self, other: &Feature) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Exponential moving average `beta * self + (1 - beta) * other`,
    /// renormalized.
    pub fn blend(&self, other: &Feature, beta: f64) -> Feature {
        let raw = self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| beta * a + (1.0 - beta) * b)
            .collect();
        Feature::from_raw(raw).unwrap_or_else(|| other.clone())
    }
}

/// `n` random identity vectors whose pairwise cosine distance is at least
/// `min_distance`, drawn by rejection.
pub fn distinct_identities(n: usize, dim: usize, min_distance: f64, rng: &mut SimRng) -> Vec<Feature> {
    let mut out: Vec<Feature> = Vec::with_capacity(n);
    while out.len() < n {
        let f = Feature::random(dim, rng);
        if out.iter().all(|g| 1.0 - g.dot(&f) >= min_distance) {
            out.push(f);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraRig {
    pub num_cameras: u8,
    pub fov_deg: f64,
    /// Camera yaw relative to the robot heading, degrees.
    pub mount_yaws_deg: Vec<f64>,
    pub max_range: f64,
}

impl Default for CameraRig {
    fn default() -> Self {
        Self {
            num_cameras: 4,
            fov_deg: 80.0,
            mount_yaws_deg: vec![0.0, 90.0, 180.0, 270.0],
            max_range: 10.0,
        }
    }
}

impl CameraRig {
    pub fn half_fov(&self) -> f64 {
        self.fov_deg.to_radians() / 2.0
    }

    /// Normalized focal length: image width is 1.
    pub fn focal(&self) -> f64 {
        0.5 / self.half_fov().tan()
    }

    pub fn yaw(&self, camera_id: u8) -> f64 {
        self.mount_yaws_deg[camera_id as usize].to_radians()
    }

    /// Angle of a robot-relative bearing from the optical axis of `camera_id`.
    pub fn angle_in_camera(&self, camera_id: u8, bearing: f64) -> f64 {
        wrap_angle(bearing - self.yaw(camera_id))
    }

    /// The camera whose wedge contains `bearing` (robot-relative), if any.
    pub fn camera_for_bearing(&self, bearing: f64) -> Option<u8> {
        let half = self.half_fov();
        (0..self.num_cameras).find(|&c| self.angle_in_camera(c, bearing).abs() <= half + 1e-12)
    }

    /// Camera whose axis is closest to `bearing`; used for predicted boxes
    /// that fall into a blind wedge.
    pub fn nearest_camera(&self, bearing: f64) -> u8 {
        (0..self.num_cameras)
            .min_by(|&a, &b| {
                let da = self.angle_in_camera(a, bearing).abs();
                let db = self.angle_in_camera(b, bearing).abs();
                da.total_cmp(&db)
            })
            .unwrap_or(0)
    }

    /// Image column of a bearing seen by `camera_id` (pinhole).
    pub fn project_cx(&self, camera_id: u8, bearing: f64) -> f64 {
        0.5 - self.focal() * self.angle_in_camera(camera_id, bearing).tan()
    }

    /// Inverse of [`CameraRig::project_cx`].
    pub fn bearing_of(&self, camera_id: u8, cx: f64) -> f64 {
        wrap_angle(self.yaw(camera_id) + ((0.5 - cx) / self.focal()).atan())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensingParams {
    /// Box centre noise, normalized image units.
    pub sigma_px: f64,
    /// Relative noise on box extents.
    pub sigma_size: f64,
    /// Total norm of the appearance perturbation.
    pub sigma_f: f64,
    pub p_miss: f64,
    /// Range return noise, meters.
    pub sigma_r: f64,
    pub outlier_rate: f64,
    pub returns_per_box: usize,
    /// RANSAC inlier half-band, meters.
    pub inlier_band: f64,
    pub min_inliers: usize,
    /// Largest range-sensor vs visual disagreement still trusted, meters.
    pub max_inconsistency: f64,
    /// Occlusion clearance around nearer bodies, meters.
    pub occlusion_clearance: f64,
    pub feature_dim: usize,
    /// Body height used for the pinhole size model, meters.
    pub body_height: f64,
}

impl Default for SensingParams {
    fn default() -> Self {
        Self {
            sigma_px: 0.01,
            sigma_size: 0.02,
            sigma_f: 0.05,
            p_miss: 0.05,
            sigma_r: 0.05,
            outlier_rate: 0.1,
            returns_per_box: 20,
            inlier_band: 0.2,
            min_inliers: 5,
            max_inconsistency: 2.0,
            occlusion_clearance: 0.3,
            feature_dim: 32,
            body_height: 1.7,
        }
    }
}

impl SensingParams {
    pub fn noiseless() -> Self {
        Self {
            sigma_px: 0.0,
            sigma_size: 0.0,
            sigma_f: 0.0,
            p_miss: 0.0,
            sigma_r: 0.0,
            outlier_rate: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeEstimate {
    pub range: f64,
    pub inliers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub feature: Feature,
    /// Coarse range from box height, meters.
    pub visual_range: f64,
    /// RANSAC estimate from the range returns in the box, if any.
    pub lidar: Option<RangeEstimate>,
    /// Ground-truth pedestrian id, for evaluation only.
    pub truth_id: u32,
}

impl Detection {
    /// Bearing of the box centre relative to the robot heading.
    pub fn bearing(&self, rig: &CameraRig) -> f64 {
        rig.bearing_of(self.bbox.camera_id, self.bbox.cx)
    }

    pub fn fused_range(&self, params: &SensingParams) -> f64 {
        fuse_range(self.visual_range, self.lidar, params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeReturn {
    pub bearing: f64,
    pub depth: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RangeScan {
    pub points: Vec<RangeReturn>,
}

fn occluded(robot: Vec2, target: &PedestrianState, world: &[PedestrianState], clearance: f64) -> bool {
    let range = robot.distance(target.position);
    world.iter().any(|o| {
        o.id != target.id
            && robot.distance(o.position) < range
            && point_segment_distance(o.position, robot, target.position) < o.radius() + clearance
    })
}

/// Pedestrians seen by some camera, with that camera's id, in world order.
pub fn visible_pedestrians(
    robot_pose: &Pose,
    world: &[PedestrianState],
    rig: &CameraRig,
    clearance: f64,
) -> Vec<(PedestrianState, u8)> {
    world
        .iter()
        .filter(|p| robot_pose.position.distance(p.position) <= rig.max_range)
        .filter_map(|p| {
            let cam = rig.camera_for_bearing(robot_pose.bearing_to(p.position))?;
            (!occluded(robot_pose.position, p, world, clearance)).then_some((*p, cam))
        })
        .collect()
}

/// Noise-free box of `p` as seen by `camera_id`.
pub fn project_bbox(
    p: &PedestrianState,
    camera_id: u8,
    robot_pose: &Pose,
    rig: &CameraRig,
    params: &SensingParams,
) -> BBox {
    let bearing = robot_pose.bearing_to(p.position);
    let range = robot_pose.position.distance(p.position).max(1e-6);
    let depth = (range * rig.angle_in_camera(camera_id, bearing).cos()).max(1e-6);
    let f = rig.focal();
    BBox::new(
        rig.project_cx(camera_id, bearing),
        0.5,
        f * 2.0 * p.radius() / depth,
        f * params.body_height / depth,
        camera_id,
    )
}

/// Range implied by a box height under the pinhole model.
pub fn visual_range_of(bbox: &BBox, rig: &CameraRig, params: &SensingParams) -> f64 {
    let depth = rig.focal() * params.body_height / bbox.height.max(1e-9);
    let angle = rig.angle_in_camera(bbox.camera_id, rig.bearing_of(bbox.camera_id, bbox.cx));
    depth / angle.cos()
}

/// Detector output for a visible pedestrian, or `None` on a miss.
/// Always consumes the same number of draws.
pub fn synth_detection(
    p: &PedestrianState,
    camera_id: u8,
    identity: &Feature,
    robot_pose: &Pose,
    rig: &CameraRig,
    params: &SensingParams,
    rng: &mut SimRng,
) -> Option<Detection> {
    let missed = rng.bernoulli(params.p_miss);
    let clean = project_bbox(p, camera_id, robot_pose, rig, params);
    let mut bbox = clean;
    bbox.cx += rng.gaussian(params.sigma_px);
    bbox.cy += rng.gaussian(params.sigma_px);
    bbox.width *= (1.0 + rng.gaussian(params.sigma_size)).max(0.1);
    bbox.height *= (1.0 + rng.gaussian(params.sigma_size)).max(0.1);
    let per_component = params.sigma_f / (identity.dim() as f64).sqrt();
    let raw: Vec<f64> = identity
        .as_slice()
        .iter()
        .map(|v| v + rng.gaussian(per_component))
        .collect();
    if missed {
        return None;
    }
    let feature = Feature::from_raw(raw).unwrap_or_else(|| identity.clone());
    Some(Detection {
        bbox,
        visual_range: visual_range_of(&bbox, rig, params),
        feature,
        lidar: None,
        truth_id: p.id,
    })
}

/// Range returns attributed to the box of `target`. Beams across the
/// target's angular extent report the centre range of the first body they
/// hit; a fully occluded target yields no returns.
pub fn simulate_range_scan(
    target: &PedestrianState,
    world: &[PedestrianState],
    robot_pose: &Pose,
    rig: &CameraRig,
    params: &SensingParams,
    rng: &mut SimRng,
) -> RangeScan {
    let robot = robot_pose.position;
    if occluded(robot, target, world, params.occlusion_clearance) {
        return RangeScan::default();
    }
    let range = robot.distance(target.position);
    let center_angle = (target.position - robot).angle();
    let half_width = (target.radius() / range.max(1e-9)).min(1.0).asin() * 0.95;
    let k = params.returns_per_box.max(1);
    let points = (0..k)
        .map(|i| {
            let frac = if k == 1 { 0.5 } else { i as f64 / (k - 1) as f64 };
            let angle = center_angle + half_width * (2.0 * frac - 1.0);
            let dir = Vec2::from_angle(angle);
            let mut depth = range;
            let mut nearest = f64::INFINITY;
            for o in world {
                if let Some(t) = ray_disc_intersection(robot, dir, o.position, o.radius()) {
                    if t < nearest {
                        nearest = t;
                        depth = robot.distance(o.position);
                    }
                }
            }
            let is_outlier = rng.bernoulli(params.outlier_rate);
            let junk = rng.uniform_range(0.0, rig.max_range);
            let noise = rng.gaussian(params.sigma_r);
            let depth = if is_outlier {
                rig.max_range - junk
            } else {
                (depth + noise).max(1e-3)
            };
            RangeReturn {
                bearing: wrap_angle(angle - robot_pose.heading),
                depth,
            }
        })
        .collect();
    RangeScan { points }
}

/// One-dimensional RANSAC over depths: every return is tried as the
/// constant-depth hypothesis, the largest consensus within `band` wins
/// (earliest on ties) and the estimate is the mean of its inliers.
pub fn ransac_range(scan: &RangeScan, band: f64) -> Result<RangeEstimate, SensingError> {
    let depths: Vec<f64> = scan.points.iter().map(|p| p.depth).collect();
    let mut best: Option<(usize, f64)> = None;
    for &h in &depths {
        let (count, sum) = depths
            .iter()
            .filter(|d| (*d - h).abs() <= band)
            .fold((0usize, 0.0), |(c, s), d| (c + 1, s + d));
        if best.is_none_or(|(bc, _)| count > bc) {
            best = Some((count, sum / count as f64));
        }
    }
    best.map(|(inliers, range)| RangeEstimate { range, inliers })
        .ok_or(SensingError::EmptyScan)
}

/// Range sensor estimate when it is present, well supported and consistent
/// with the visual estimate; the visual estimate otherwise.
pub fn fuse_range(visual_range: f64, lidar: Option<RangeEstimate>, params: &SensingParams) -> f64 {
    match lidar {
        Some(est)
            if est.inliers >= params.min_inliers && (est.range - visual_range).abs() <= params.max_inconsistency =>
        {
            est.range
        }
        _ => visual_range,
    }
}

/// Full sensing pass for one tick: visibility, detection synthesis, range
/// scans and RANSAC. `identities` is indexed in parallel with `world`.
pub fn observe(
    robot_pose: &Pose,
    world: &[PedestrianState],
    identities: &[Feature],
    rig: &CameraRig,
    params: &SensingParams,
    rng: &mut SimRng,
) -> Vec<Detection> {
    let visible = visible_pedestrians(robot_pose, world, rig, params.occlusion_clearance);
    let mut out = Vec::with_capacity(visible.len());
    for (p, cam) in visible {
        let idx = world
            .iter()
            .position(|w| w.id == p.id)
            .expect("visible pedestrian comes from world");
        let det = synth_detection(&p, cam, &identities[idx], robot_pose, rig, params, rng);
        let scan = simulate_range_scan(&p, world, robot_pose, rig, params, rng);
        if let Some(mut det) = det {
            det.lidar = ransac_range(&scan, params.inlier_band).ok();
            out.push(det);
        }
    }
    out
}
