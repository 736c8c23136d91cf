//! Grid-town traffic simulation with a scripted autopilot.

pub mod autopilot;
pub mod geometry;
pub mod lights;
pub mod svg;
pub mod town;
pub mod world;

pub use autopilot::{autopilot_controls, AutopilotParams, Controls};
pub use lights::{LightColor, TrafficLight};
pub use town::{build_town, Lane, LaneGraph, LaneKind, TownConfig};
pub use world::{init_world, spawn_agents, step, AgentState, SimConfig, WorldState, DT};
