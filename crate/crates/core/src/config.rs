//! Simulation parameters and the plain-text configuration file.
//!
//! The file is TOML: flat `key = value` lines grouped under optional
//! `[world]`, `[train]` and `[sweep]` tables. Every key has a default, so an
//! empty file is valid. Unknown keys are rejected.
//!
//! ```toml
//! [world]
//! n_robots = 3
//! n_objects = 6
//! mass_choices = [{ mass = 1.0, probability = 0.5 }, { mass = 3.0, probability = 0.5 }]
//!
//! [train]
//! episodes = 2000
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::eval::SweepGrid;
use crate::geom::Vec2;
use crate::maddpg::TrainSettings;

/// Axis-aligned rectangle, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MassChoice {
    /// kg
    pub mass: f64,
    pub probability: f64,
}

pub const LIGHT_MASS: f64 = 1.0;
pub const HEAVY_MASS: f64 = 3.0;

/// Steps per evaluation episode: the ten-minute success window at 1 s per decision.
pub const EVAL_MAX_STEPS: usize = 600;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub n_robots: usize,
    pub n_objects: usize,
    /// Neighbor count for local observations.
    pub k_neighbors: usize,
    pub spawn_region: Rect,
    pub goal_center: Vec2,
    pub goal_radius: f64,
    /// kg per robot
    pub robot_capacity: f64,
    pub mass_choices: Vec<MassChoice>,
    /// m/s, free travel
    pub robot_speed: f64,
    /// m/s, object transport
    pub carry_speed: f64,
    pub attach_radius: f64,
    /// Seconds per decision step.
    pub selection_period: f64,
    /// Integration sub-steps per decision step.
    pub substeps: usize,
    pub max_steps: usize,
    /// Goal tolerance, meters.
    pub completion_threshold: f64,
    pub reward_lambda: f64,
    /// Priority gain, 1/s.
    pub priority_gain: f64,
    /// Nearest-one switching delay, seconds.
    pub stuck_threshold: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_robots: 3,
            n_objects: 6,
            k_neighbors: 2,
            spawn_region: Rect {
                x_min: 2.0,
                x_max: 8.0,
                y_min: 2.0,
                y_max: 8.0,
            },
            goal_center: Vec2::new(5.0, 5.0),
            goal_radius: 4.0,
            robot_capacity: 1.0,
            mass_choices: heavy_mix(0.5),
            robot_speed: 1.0,
            carry_speed: 0.5,
            attach_radius: 0.5,
            selection_period: 1.0,
            substeps: 10,
            max_steps: 150,
            completion_threshold: 0.05,
            reward_lambda: 3.0e2,
            priority_gain: 0.2,
            stuck_threshold: 1.0,
            seed: 0,
        }
    }
}

/// Light/heavy mass distribution with `heavy_proportion` of 3 kg objects.
/// Zero-probability entries are dropped.
pub fn heavy_mix(heavy_proportion: f64) -> Vec<MassChoice> {
    [
        MassChoice {
            mass: LIGHT_MASS,
            probability: 1.0 - heavy_proportion,
        },
        MassChoice {
            mass: HEAVY_MASS,
            probability: heavy_proportion,
        },
    ]
    .into_iter()
    .filter(|c| c.probability > 0.0)
    .collect()
}

impl WorldConfig {
    /// Evaluation setup: given team and object counts, heavy proportion and
    /// the ten-minute episode cap. Everything else is taken from `self`.
    pub fn for_evaluation(&self, n_robots: usize, n_objects: usize, heavy_proportion: f64) -> Self {
        WorldConfig {
            n_robots,
            n_objects,
            mass_choices: heavy_mix(heavy_proportion),
            max_steps: EVAL_MAX_STEPS,
            ..self.clone()
        }
    }

    /// Alternative reward weight that equalizes one step of carrying with one
    /// step of an object resting at its goal.
    pub fn speed_balanced_lambda(&self) -> f64 {
        1.0 / self.carry_speed
    }

    pub fn substep_dt(&self) -> f64 {
        self.selection_period / self.substeps as f64
    }

    /// Length of the per-robot observation vector.
    pub fn observation_dim(&self) -> usize {
        crate::policy::observation_dim(self.k_neighbors)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive_int = [
            ("n_robots", self.n_robots),
            ("n_objects", self.n_objects),
            ("k_neighbors", self.k_neighbors),
            ("substeps", self.substeps),
            ("max_steps", self.max_steps),
        ];
        for (field, v) in positive_int {
            if v == 0 {
                return Err(ConfigError::invalid(field, "must be positive"));
            }
        }
        let positive = [
            ("goal_radius", self.goal_radius),
            ("robot_capacity", self.robot_capacity),
            ("robot_speed", self.robot_speed),
            ("carry_speed", self.carry_speed),
            ("attach_radius", self.attach_radius),
            ("selection_period", self.selection_period),
            ("completion_threshold", self.completion_threshold),
            ("priority_gain", self.priority_gain),
            ("stuck_threshold", self.stuck_threshold),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::invalid(field, format!("must be finite and > 0, got {v}")));
            }
        }
        if !(self.reward_lambda.is_finite() && self.reward_lambda >= 0.0) {
            return Err(ConfigError::invalid("reward_lambda", "must be finite and >= 0"));
        }
        let r = &self.spawn_region;
        if !(r.x_min.is_finite() && r.x_max.is_finite() && r.y_min.is_finite() && r.y_max.is_finite())
            || r.x_min >= r.x_max
            || r.y_min >= r.y_max
        {
            return Err(ConfigError::invalid("spawn_region", "empty or non-finite rectangle"));
        }
        if !self.goal_center.is_finite() {
            return Err(ConfigError::invalid("goal_center", "non-finite"));
        }
        if self.completion_threshold >= self.attach_radius {
            return Err(ConfigError::invalid(
                "completion_threshold",
                "must be smaller than attach_radius",
            ));
        }
        if self.mass_choices.is_empty() {
            return Err(ConfigError::invalid("mass_choices", "empty"));
        }
        let mut total = 0.0;
        for c in &self.mass_choices {
            if !(c.mass.is_finite() && c.mass > 0.0) {
                return Err(ConfigError::invalid("mass_choices", format!("bad mass {}", c.mass)));
            }
            if !(c.probability.is_finite() && (0.0..=1.0).contains(&c.probability)) {
                return Err(ConfigError::invalid(
                    "mass_choices",
                    format!("bad probability {}", c.probability),
                ));
            }
            total += c.probability;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(ConfigError::invalid(
                "mass_choices",
                format!("probabilities sum to {total}, not 1"),
            ));
        }
        Ok(())
    }
}

/// Contents of a configuration file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub world: WorldConfig,
    pub train: TrainSettings,
    pub sweep: SweepGrid,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.world.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }
}
