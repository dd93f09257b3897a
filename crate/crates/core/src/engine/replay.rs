//! Replay logs: one header line, then one JSON record per tick.
//!
//! Every float in a record is rounded to 9 significant digits before it is
//! stored, so a log read back from disk equals the in-memory log exactly.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::scenario::Scenario;
use crate::geom::Vec2;
use crate::planner::AdvisoryEvent;
use crate::tracker::TrackStatus;

pub const REPLAY_FORMAT: &str = "crowdpatrol-replay";
pub const REPLAY_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

/// Rounds to 9 significant digits.
pub fn sig9(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

pub fn sig9v(v: Vec2) -> Vec2 {
    Vec2::new(sig9(v.x), sig9(v.y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayHeader {
    pub format: String,
    pub version: u32,
    pub scenario: Scenario,
}

impl ReplayHeader {
    pub fn new(scenario: &Scenario) -> Self {
        Self {
            format: REPLAY_FORMAT.to_owned(),
            version: REPLAY_VERSION,
            scenario: scenario.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PedestrianRecord {
    pub id: u32,
    pub position: Vec2,
    pub velocity: Vec2,
    pub facing: f64,
    pub shoulder_length: f64,
    pub shoulder_width: f64,
    pub dispersing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackRecord {
    pub id: u32,
    pub status: TrackStatus,
    pub position: Vec2,
    pub matched: bool,
    pub truth: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrowdRecord {
    pub id: u32,
    pub members: Vec<u32>,
    pub centroid: Vec2,
    pub weight: u32,
    pub first_seen: u64,
    pub deadline: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    Patrol,
    Approaching,
    Advising,
    Follow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissionRecord {
    pub mode: ModeName,
    pub crowd: Option<u32>,
    /// Point the local planner steered toward this tick.
    pub goal: Vec2,
    /// Remaining planned crowd visits, in order.
    pub route: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotRecord {
    /// Pose at the moment the advisory rule ran, before this tick's motion.
    pub sensed_position: Vec2,
    pub position: Vec2,
    pub heading: f64,
    pub linear: f64,
    pub angular: f64,
    pub blocked: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplianceRecord {
    pub message_id: u32,
    pub pedestrian: u32,
    pub complied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayRecord {
    pub tick: u64,
    pub pedestrians: Vec<PedestrianRecord>,
    pub tracks: Vec<TrackRecord>,
    pub crowds: Vec<CrowdRecord>,
    pub mission: MissionRecord,
    pub robot: RobotRecord,
    pub advisories: Vec<AdvisoryEvent>,
    pub compliance: Vec<ComplianceRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayLog {
    pub header: ReplayHeader,
    pub records: Vec<ReplayRecord>,
}

pub fn write_header<W: Write>(w: &mut W, header: &ReplayHeader) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, header)?;
    w.write_all(b"\n")
}

pub fn write_record<W: Write>(w: &mut W, record: &ReplayRecord) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, record)?;
    w.write_all(b"\n")
}

impl ReplayLog {
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write_header(&mut w, &self.header)?;
        for r in &self.records {
            write_record(&mut w, r)?;
        }
        w.flush()
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    /// Reads a log, checking the header and that ticks increase by one.
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<ReplayLog, ReplayError> {
        let mut lines = r.lines();
        let malformed = |line: usize, message: String| ReplayError::Malformed { line, message };
        let first = lines.next().ok_or_else(|| malformed(1, "empty log".into()))??;
        let header: ReplayHeader = serde_json::from_str(&first).map_err(|e| malformed(1, e.to_string()))?;
        if header.format != REPLAY_FORMAT || header.version != REPLAY_VERSION {
            return Err(malformed(
                1,
                format!("unsupported format {} v{}", header.format, header.version),
            ));
        }
        let mut records: Vec<ReplayRecord> = Vec::new();
        for (k, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ReplayRecord = serde_json::from_str(&line).map_err(|e| malformed(k + 2, e.to_string()))?;
            let expected = records.last().map_or(0, |p| p.tick + 1);
            if rec.tick != expected {
                return Err(malformed(k + 2, format!("tick {} follows {}", rec.tick, expected)));
            }
            records.push(rec);
        }
        Ok(ReplayLog { header, records })
    }
}
