//! Independent replay reader shared by the engine tests.
//!
//! Works on raw `serde_json::Value`s and recomputes everything from the
//! logged fields, without the crate's record types or metrics code.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use crowdpatrol::engine::{load_scenario, Scenario};
use serde_json::Value;

pub const SCENARIOS: [&str; 5] = ["arena", "plaza", "crossing", "market", "corridor"];

pub fn scenario_path(name: &str) -> PathBuf {
    [
        env!("CARGO_MANIFEST_DIR"),
        "..",
        "..",
        "scenarios",
        &format!("{name}.toml"),
    ]
    .iter()
    .collect()
}

pub fn scenario(name: &str) -> Scenario {
    let text = std::fs::read_to_string(scenario_path(name)).unwrap();
    load_scenario(&text).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub struct RawLog {
    pub header: Value,
    pub records: Vec<Value>,
}

pub fn parse(jsonl: &str) -> RawLog {
    let mut lines = jsonl.lines().filter(|l| !l.trim().is_empty());
    let header: Value = serde_json::from_str(lines.next().expect("header")).unwrap();
    let records = lines.map(|l| serde_json::from_str(l).unwrap()).collect();
    RawLog { header, records }
}

fn f(v: &Value) -> f64 {
    v.as_f64().unwrap_or_else(|| panic!("not a number: {v}"))
}

fn u(v: &Value) -> u64 {
    v.as_u64().unwrap_or_else(|| panic!("not an integer: {v}"))
}

/// The log keeps 9 significant digits.
fn nine_digits(x: f64) -> f64 {
    format!("{x:.8e}").parse().unwrap()
}

fn xy(v: &Value) -> (f64, f64) {
    (f(&v[0]), f(&v[1]))
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (a.0 - b.0, a.1 - b.1);
    (dx * dx + dy * dy).sqrt()
}

/// Point-to-rectangle distance in the rectangle's own frame.
fn rect_gap(center: (f64, f64), half_x: f64, half_y: f64, angle: f64, p: (f64, f64)) -> f64 {
    let (dx, dy) = (p.0 - center.0, p.1 - center.1);
    let (c, s) = (angle.cos(), angle.sin());
    let along = dx * c + dy * s;
    let across = -dx * s + dy * c;
    let ex = (along.abs() - half_x).max(0.0);
    let ey = (across.abs() - half_y).max(0.0);
    (ex * ex + ey * ey).sqrt()
}

fn groups(points: &[(u64, (f64, f64))], threshold: f64) -> Vec<BTreeSet<u64>> {
    let n = points.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut Vec<usize>, x: usize) -> usize {
        if p[x] != x {
            let r = find(p, p[x]);
            p[x] = r;
        }
        p[x]
    }
    for i in 0..n {
        for j in i + 1..n {
            if dist(points[i].1, points[j].1) < threshold {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a] = b;
            }
        }
    }
    let mut out: BTreeMap<usize, BTreeSet<u64>> = BTreeMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        out.entry(r).or_default().insert(points[i].0);
    }
    out.into_values().filter(|g| g.len() >= 2).collect()
}

fn overlap_ratio(a: &BTreeSet<u64>, b: &BTreeSet<u64>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.union(b).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Ground-truth gatherings of the pedestrians present in one record.
pub fn true_gatherings(record: &Value, threshold: f64) -> Vec<BTreeSet<u64>> {
    let pts: Vec<(u64, (f64, f64))> = record["pedestrians"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| (u(&p["id"]), xy(&p["position"])))
        .collect();
    groups(&pts, threshold)
}

/// Recomputes the run summary from the raw log, as a JSON object with the
/// same field names the crate writes.
pub fn rederive_metrics(log: &RawLog) -> Value {
    let sc = &log.header["scenario"];
    let radius = f(&sc["robot"]["limits"]["radius"]);
    let d_yellow = f(&sc["social"]["d_yellow"]);
    let dt = f(&sc["dt"]);
    let mut last = xy(&sc["robot"]["start"]);

    let (mut collisions, mut overlap_ticks, mut switches) = (0u64, 0u64, 0u64);
    let mut touching: BTreeSet<u64> = BTreeSet::new();
    let mut follows: BTreeMap<u64, u64> = BTreeMap::new();
    let (mut detected, mut detected_hits, mut clusters, mut cluster_hits) = (0u64, 0u64, 0u64, 0u64);
    let mut waiting: Vec<(u64, u64)> = Vec::new();
    let (mut advisories, mut dissolved, mut dissolve_ticks) = (0u64, 0u64, 0u64);
    let (mut decisions, mut complied) = (0u64, 0u64);
    let mut travelled = 0.0;

    for r in &log.records {
        let tick = u(&r["tick"]);
        let robot = xy(&r["robot"]["position"]);
        let peds = r["pedestrians"].as_array().unwrap();

        let now: BTreeSet<u64> = peds
            .iter()
            .filter(|p| {
                let gap = rect_gap(
                    xy(&p["position"]),
                    f(&p["shoulder_width"]) / 2.0,
                    f(&p["shoulder_length"]) / 2.0,
                    f(&p["facing"]),
                    robot,
                );
                gap < radius
            })
            .map(|p| u(&p["id"]))
            .collect();
        overlap_ticks += now.len() as u64;
        collisions += now.difference(&touching).count() as u64;
        touching = now;

        let tracks = r["tracks"].as_array().unwrap();
        for t in tracks {
            if t["status"] == "confirmed" && t["matched"] == true && !t["truth"].is_null() {
                let truth = u(&t["truth"]);
                if let Some(prev) = follows.insert(u(&t["id"]), truth) {
                    switches += u64::from(prev != truth);
                }
            }
        }

        let truth_of: BTreeMap<u64, Option<u64>> = tracks.iter().map(|t| (u(&t["id"]), t["truth"].as_u64())).collect();
        let found: Vec<BTreeSet<u64>> = r["crowds"]
            .as_array()
            .unwrap()
            .iter()
            .map(|c| {
                c["members"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .filter_map(|m| truth_of.get(&u(m)).copied().flatten())
                    .collect()
            })
            .collect();
        let truth = true_gatherings(r, d_yellow);
        detected += found.len() as u64;
        clusters += truth.len() as u64;
        detected_hits += found
            .iter()
            .filter(|d| truth.iter().any(|g| overlap_ratio(d, g) >= 0.5))
            .count() as u64;
        cluster_hits += truth
            .iter()
            .filter(|g| found.iter().any(|d| overlap_ratio(d, g) >= 0.5))
            .count() as u64;

        let live: BTreeSet<u64> = r["crowds"].as_array().unwrap().iter().map(|c| u(&c["id"])).collect();
        waiting.retain(|&(crowd, since)| {
            if live.contains(&crowd) {
                true
            } else {
                dissolve_ticks += tick - since;
                dissolved += 1;
                false
            }
        });
        for a in r["advisories"].as_array().unwrap() {
            advisories += 1;
            waiting.push((u(&a["crowd_id"]), u(&a["tick"])));
        }

        for c in r["compliance"].as_array().unwrap() {
            decisions += 1;
            complied += u64::from(c["complied"] == true);
        }

        travelled += dist(last, robot);
        last = robot;
    }

    let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    serde_json::json!({
        "ticks": log.records.len() as u64,
        "collisions": collisions,
        "overlap_ticks": overlap_ticks,
        "id_switches": switches,
        "crowd_precision": ratio(detected_hits, detected),
        "crowd_recall": ratio(cluster_hits, clusters),
        "advisories": advisories,
        "mean_dissolution_time": if dissolved == 0 { 0.0 } else { dissolve_ticks as f64 * dt / dissolved as f64 },
        "undissolved": waiting.len() as u64,
        "compliance_decisions": decisions,
        "complied": complied,
        "distance_traveled": travelled,
    })
}

/// An advisory as (tick, crowd id, distance).
pub type Advisory = (u64, u64, f64);

/// Advisories implied by the trigger distance and hysteresis on the logged
/// robot positions and crowd centroids.
///
/// A crowd is the robot's target on a tick when the mission is approaching
/// it after the transition, or when the mission has just switched to
/// advising it.
pub fn rederive_advisories(log: &RawLog) -> Vec<Advisory> {
    let sc = &log.header["scenario"];
    let trigger = f(&sc["advisory"]["trigger_distance"]);
    let release = trigger + f(&sc["advisory"]["hysteresis"]);
    let mut active: BTreeSet<u64> = BTreeSet::new();
    let mut prev_mission: Option<(&Value, &Value)> = None;
    let mut out = Vec::new();
    for r in &log.records {
        let tick = u(&r["tick"]);
        let robot = xy(&r["robot"]["sensed_position"]);
        let centroid: BTreeMap<u64, (f64, f64)> = r["crowds"]
            .as_array()
            .unwrap()
            .iter()
            .map(|c| (u(&c["id"]), xy(&c["centroid"])))
            .collect();
        active.retain(|c| centroid.get(c).is_some_and(|&p| dist(robot, p) <= release));

        let (mode, crowd) = (&r["mission"]["mode"], &r["mission"]["crowd"]);
        let entered_advising = mode == "advising" && prev_mission != Some((mode, crowd));
        let target = if mode == "approaching" || entered_advising {
            crowd.as_u64()
        } else {
            None
        };
        if let Some(c) = target {
            if let Some(&p) = centroid.get(&c) {
                let d = dist(robot, p);
                if d < trigger && active.insert(c) {
                    out.push((tick, c, nine_digits(d)));
                }
            }
        }
        prev_mission = Some((mode, crowd));
    }
    out
}

pub fn logged_advisories(log: &RawLog) -> Vec<Advisory> {
    log.records
        .iter()
        .flat_map(|r| r["advisories"].as_array().unwrap().iter())
        .map(|a| (u(&a["tick"]), u(&a["crowd_id"]), f(&a["distance"])))
        .collect()
}
