//! Simulation and algorithm library for an autonomous social-distancing
//! patrol robot.
//!
//! The pipeline per tick: pedestrians move under frontal reciprocal velocity
//! obstacles ([`frvo`]), the robot's camera and range rig observes them
//! ([`sensing`]), a two-stage appearance/IoU tracker keeps identities
//! ([`tracker`]), a proximity graph flags gatherings ([`socialgraph`]), the
//! planner patrols and routes to crowds ([`planner`]) and a reactive local
//! policy drives the robot ([`localnav`]). [`engine`] ties these together
//! and writes replay logs.

pub mod bbox;
pub mod clock;
pub mod engine;
pub mod frvo;
pub mod geom;
pub mod localnav;
pub mod pedestrian;
pub mod planner;
pub mod rng;
pub mod sensing;
pub mod socialgraph;
pub mod tracker;

pub use bbox::BBox;
pub use clock::SimClock;
pub use geom::{normalize_angle, Pose, Vec2};
pub use pedestrian::PedestrianState;
pub use rng::{SeedRoot, SimRng};
