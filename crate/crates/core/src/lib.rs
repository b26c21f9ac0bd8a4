//! Multi-robot task allocation for cooperative transport.
//!
//! * [`world`]: transport physics, reward and episode clock.
//! * [`priority`]: per-robot task priorities, event-triggered gates and
//!   object selection.
//! * [`policy`]: local observations, action decoding, scripted baselines.
//! * [`neural`] and [`maddpg`]: networks and multi-agent actor-critic training.
//! * [`eval`]: trials, success/transport-time metrics and parameter sweeps.
//! * [`plot`]: SVG rendering of reward curves, trajectories and priorities.

pub mod config;
pub mod episode;
pub mod error;
pub mod eval;
pub mod geom;
pub mod maddpg;
pub mod neural;
pub mod plot;
pub mod policy;
pub mod priority;
pub mod world;

pub use config::{RunConfig, WorldConfig};
pub use error::{Error, Result};
pub use geom::Vec2;
pub use policy::{Method, Variant};
