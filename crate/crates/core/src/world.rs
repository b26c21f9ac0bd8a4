//! Cooperative transport physics.
//!
//! Robots drive toward their selected object and stop at the attachment
//! radius. An object moves toward its goal at `carry_speed` whenever the
//! robots attached to it (within the radius and committed to it) have enough
//! combined capacity. Each decision step is integrated in `substeps` equal
//! sub-steps. Object and robot indices are 0-based.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{MassChoice, WorldConfig};
use crate::error::{ConfigError, SimError};
use crate::geom::Vec2;

/// Slack on the attachment radius so a robot parked exactly at contact
/// distance counts as attached despite rounding.
pub const CONTACT_TOLERANCE: f64 = 1e-9;

/// RNG stream used for robot/object placement and masses.
pub(crate) const WORLD_STREAM: u64 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct RobotState {
    pub position: Vec2,
    /// Last sub-step displacement over the sub-step duration.
    pub velocity: Vec2,
    pub selected_object: Option<usize>,
    /// Seconds spent attached to a stationary selected object. Held while
    /// the robot travels, reset once its selected object moves or completes.
    pub stuck_duration: f64,
}

impl RobotState {
    pub fn at(position: Vec2) -> Self {
        RobotState {
            position,
            velocity: Vec2::ZERO,
            selected_object: None,
            stuck_duration: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectState {
    pub position: Vec2,
    pub velocity: Vec2,
    pub goal: Vec2,
    pub mass: f64,
    pub completed: bool,
    /// Simulation time at which the object locked onto its goal.
    pub completed_at: Option<f64>,
}

impl ObjectState {
    pub fn new(position: Vec2, goal: Vec2, mass: f64) -> Self {
        ObjectState {
            position,
            velocity: Vec2::ZERO,
            goal,
            mass,
            completed: false,
            completed_at: None,
        }
    }

    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    /// Objects-at-goal part of the reward.
    pub completion_reward: f64,
    /// Weighted object-speed part of the reward.
    pub motion_reward: f64,
    pub newly_completed: Vec<usize>,
    /// Whether each object moved during any sub-step.
    pub moved: Vec<bool>,
    pub done: bool,
    /// Seconds of this step during which two or more objects were moving.
    pub simultaneous_carry_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub config: WorldConfig,
    pub robots: Vec<RobotState>,
    pub objects: Vec<ObjectState>,
    pub step_count: usize,
}

/// Goal `k` of `m`, evenly spaced on the goal circle starting at angle 0.
pub fn goal_position(config: &WorldConfig, k: usize, m: usize) -> Vec2 {
    let angle = std::f64::consts::TAU * k as f64 / m as f64;
    config.goal_center + Vec2::new(angle.cos(), angle.sin()) * config.goal_radius
}

fn sample_mass(choices: &[MassChoice], rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for c in choices {
        acc += c.probability;
        if u < acc {
            return c.mass;
        }
    }
    // Probabilities sum to 1 only up to rounding.
    choices.iter().rev().find(|c| c.probability > 0.0).map_or(choices[0].mass, |c| c.mass)
}

impl WorldState {
    /// Random initial state: robots and objects uniform over the spawn region,
    /// goals on the goal circle, masses drawn from `mass_choices`.
    pub fn new(config: &WorldConfig, seed: u64) -> Result<Self, ConfigError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(WORLD_STREAM);
        let r = config.spawn_region;
        let sample_point = |rng: &mut ChaCha8Rng| {
            let u: f64 = rng.random();
            let v: f64 = rng.random();
            Vec2::new(
                r.x_min + u * (r.x_max - r.x_min),
                r.y_min + v * (r.y_max - r.y_min),
            )
        };
        let robots = (0..config.n_robots)
            .map(|_| RobotState::at(sample_point(&mut rng)))
            .collect();
        let m = config.n_objects;
        let positions: Vec<Vec2> = (0..m).map(|_| sample_point(&mut rng)).collect();
        let objects = positions
            .into_iter()
            .enumerate()
            .map(|(k, p)| {
                let mass = sample_mass(&config.mass_choices, &mut rng);
                ObjectState::new(p, goal_position(config, k, m), mass)
            })
            .collect();
        Ok(WorldState {
            config: config.clone(),
            robots,
            objects,
            step_count: 0,
        })
    }

    /// Hand-built state. Robot and object counts override those in `config`.
    pub fn from_parts(
        config: &WorldConfig,
        robots: Vec<RobotState>,
        objects: Vec<ObjectState>,
    ) -> Result<Self, ConfigError> {
        let config = WorldConfig {
            n_robots: robots.len(),
            n_objects: objects.len(),
            ..config.clone()
        };
        config.validate()?;
        Ok(WorldState {
            config,
            robots,
            objects,
            step_count: 0,
        })
    }

    pub fn n_robots(&self) -> usize {
        self.robots.len()
    }

    pub fn n_objects(&self) -> usize {
        self.objects.len()
    }

    pub fn completed_mask(&self) -> Vec<bool> {
        self.objects.iter().map(|o| o.completed).collect()
    }

    pub fn all_completed(&self) -> bool {
        self.objects.iter().all(|o| o.completed)
    }

    /// Seconds of simulated time at the current step boundary.
    pub fn elapsed(&self) -> f64 {
        self.step_count as f64 * self.config.selection_period
    }

    /// Speed of the object robot `i` currently has selected, 0 if none.
    pub fn selected_object_speed(&self, i: usize) -> f64 {
        self.robots[i]
            .selected_object
            .map_or(0.0, |l| self.objects[l].speed())
    }

    fn is_attached(&self, i: usize, l: usize) -> bool {
        let robot = &self.robots[i];
        robot.selected_object == Some(l)
            && robot.position.distance(self.objects[l].position)
                <= self.config.attach_radius + CONTACT_TOLERANCE
    }

    fn attached_capacity(&self, l: usize) -> f64 {
        (0..self.robots.len())
            .filter(|&i| self.is_attached(i, l))
            .map(|_| self.config.robot_capacity)
            .sum()
    }

    /// Whether the robots committed to and within reach of object `l` can carry it.
    pub fn movable(&self, l: usize) -> Result<bool, SimError> {
        let object = self.objects.get(l).ok_or(SimError::NoSuchObject { object: l })?;
        if object.completed {
            return Err(SimError::ObjectCompleted { object: l });
        }
        Ok(self.attached_capacity(l) >= object.mass)
    }

    /// Locks every object within the goal tolerance. Returns the newly
    /// completed indices.
    pub fn settle_completions(&mut self) -> Vec<usize> {
        let now = self.elapsed();
        self.lock_completed(now)
    }

    fn lock_completed(&mut self, now: f64) -> Vec<usize> {
        let delta = self.config.completion_threshold;
        let mut newly = Vec::new();
        for (l, o) in self.objects.iter_mut().enumerate() {
            if !o.completed && o.position.distance(o.goal) < delta {
                o.completed = true;
                o.velocity = Vec2::ZERO;
                o.completed_at = Some(now);
                newly.push(l);
            }
        }
        newly
    }

    fn check_targets(&self, targets: &[Option<usize>]) -> Result<(), SimError> {
        if targets.len() != self.robots.len() {
            return Err(SimError::TargetCount {
                expected: self.robots.len(),
                got: targets.len(),
            });
        }
        let any_open = !self.all_completed();
        for (robot, target) in targets.iter().enumerate() {
            match *target {
                Some(object) if object >= self.objects.len() => {
                    return Err(SimError::UnknownObject { robot, object })
                }
                Some(object) if self.objects[object].completed => {
                    return Err(SimError::CompletedTarget { robot, object })
                }
                None if any_open => return Err(SimError::MissingTarget { robot }),
                _ => {}
            }
        }
        Ok(())
    }

    /// Advances one decision step with each robot committed to `targets[i]`.
    pub fn step(&mut self, targets: &[Option<usize>]) -> Result<StepOutcome, SimError> {
        self.check_targets(targets)?;
        let mut newly_completed = self.settle_completions();
        for (robot, &target) in self.robots.iter_mut().zip(targets) {
            robot.selected_object = target;
        }

        let n_sub = self.config.substeps;
        let dt = self.config.substep_dt();
        let period = self.config.selection_period;
        let attach = self.config.attach_radius;
        let mut moved = vec![false; self.objects.len()];
        let mut simultaneous_carry_time = 0.0;

        for sub in 0..n_sub {
            let movable: Vec<bool> = (0..self.objects.len())
                .map(|l| !self.objects[l].completed && self.attached_capacity(l) >= self.objects[l].mass)
                .collect();
            let mut carried = vec![false; self.robots.len()];
            let mut moving_now = 0;

            for l in 0..self.objects.len() {
                if self.objects[l].completed {
                    continue;
                }
                if !movable[l] {
                    self.objects[l].velocity = Vec2::ZERO;
                    continue;
                }
                let riders: Vec<usize> = (0..self.robots.len())
                    .filter(|&i| self.is_attached(i, l))
                    .collect();
                let object = &mut self.objects[l];
                let to_goal = object.goal - object.position;
                let dist = to_goal.norm();
                let unit = if dist > 0.0 { to_goal * (1.0 / dist) } else { Vec2::ZERO };
                let reach = self.config.carry_speed * dt;
                // Final approach snaps onto the goal; the reported speed stays carry_speed.
                let displacement = if dist <= reach { to_goal } else { unit * reach };
                object.velocity = unit * self.config.carry_speed;
                object.position += displacement;
                moved[l] = true;
                moving_now += 1;
                for i in riders {
                    self.robots[i].position += displacement;
                    self.robots[i].velocity = displacement * (1.0 / dt);
                    carried[i] = true;
                }
            }
            if moving_now >= 2 {
                simultaneous_carry_time += dt;
            }

            for i in 0..self.robots.len() {
                if carried[i] {
                    continue;
                }
                let robot = &mut self.robots[i];
                robot.velocity = Vec2::ZERO;
                let Some(l) = robot.selected_object else { continue };
                let to_object = self.objects[l].position - robot.position;
                let dist = to_object.norm();
                if dist <= attach {
                    continue;
                }
                let travel = (self.config.robot_speed * dt).min(dist - attach);
                let displacement = to_object * (travel / dist);
                robot.position += displacement;
                robot.velocity = displacement * (1.0 / dt);
            }

            let now = (self.step_count * n_sub + sub + 1) as f64 * dt;
            newly_completed.extend(self.lock_completed(now));
        }

        self.step_count += 1;
        self.update_stuck_durations(period);
        let (completion_reward, motion_reward) = reward_terms(self);
        Ok(StepOutcome {
            reward: completion_reward + motion_reward,
            completion_reward,
            motion_reward,
            newly_completed,
            moved,
            done: self.all_completed() || self.step_count >= self.config.max_steps,
            simultaneous_carry_time,
        })
    }

    fn update_stuck_durations(&mut self, period: f64) {
        for i in 0..self.robots.len() {
            let Some(l) = self.robots[i].selected_object else {
                self.robots[i].stuck_duration = 0.0;
                continue;
            };
            let object = &self.objects[l];
            if object.completed || object.speed() > 0.0 {
                self.robots[i].stuck_duration = 0.0;
            } else if self.is_attached(i, l) {
                self.robots[i].stuck_duration += period;
            }
        }
    }

    /// One CSV row per robot and object at the current step.
    pub fn trajectory_rows(&self) -> Vec<TrajectoryRow> {
        let robots = self.robots.iter().enumerate().map(|(i, r)| TrajectoryRow {
            step: self.step_count,
            entity_kind: EntityKind::Robot,
            entity_id: i,
            x: r.position.x,
            y: r.position.y,
            vx: r.velocity.x,
            vy: r.velocity.y,
            completed: false,
        });
        let objects = self.objects.iter().enumerate().map(|(l, o)| TrajectoryRow {
            step: self.step_count,
            entity_kind: EntityKind::Object,
            entity_id: l,
            x: o.position.x,
            y: o.position.y,
            vx: o.velocity.x,
            vy: o.velocity.y,
            completed: o.completed,
        });
        robots.chain(objects).collect()
    }
}

/// (Σ P_l, λ Σ ‖v_l‖) for the current state.
pub fn reward_terms(world: &WorldState) -> (f64, f64) {
    let delta = world.config.completion_threshold;
    let at_goal = world
        .objects
        .iter()
        .filter(|o| o.position.distance(o.goal) < delta)
        .count() as f64;
    let speed_sum: f64 = world.objects.iter().map(ObjectState::speed).sum();
    (at_goal, world.config.reward_lambda * speed_sum)
}

/// Team reward: objects resting at their goals plus λ times total object speed.
pub fn compute_reward(world: &WorldState) -> f64 {
    let (completion, motion) = reward_terms(world);
    completion + motion
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Robot,
    Object,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub step: usize,
    pub entity_kind: EntityKind,
    pub entity_id: usize,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub completed: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bare_config() -> WorldConfig {
        WorldConfig::default()
    }

    fn world(robots: Vec<RobotState>, objects: Vec<ObjectState>) -> WorldState {
        WorldState::from_parts(&bare_config(), robots, objects).unwrap()
    }

    fn attached(pos: Vec2, l: usize) -> RobotState {
        RobotState {
            selected_object: Some(l),
            ..RobotState::at(pos)
        }
    }

    #[test]
    fn goals_evenly_spaced_on_circle() {
        let cfg = WorldConfig {
            n_objects: 6,
            ..bare_config()
        };
        let w = WorldState::new(&cfg, 3).unwrap();
        for (k, o) in w.objects.iter().enumerate() {
            let angle = std::f64::consts::TAU * k as f64 / 6.0;
            assert!((o.goal.x - (5.0 + 4.0 * angle.cos())).abs() < 1e-12);
            assert!((o.goal.y - (5.0 + 4.0 * angle.sin())).abs() < 1e-12);
        }
        assert_eq!(w.objects[0].goal, Vec2::new(9.0, 5.0));
    }

    #[test]
    fn init_is_deterministic_and_in_region() {
        let cfg = bare_config();
        let a = WorldState::new(&cfg, 17).unwrap();
        let b = WorldState::new(&cfg, 17).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, WorldState::new(&cfg, 18).unwrap());
        for p in a.robots.iter().map(|r| r.position).chain(a.objects.iter().map(|o| o.position)) {
            assert!(cfg.spawn_region.contains(p));
        }
        assert!(a.objects.iter().all(|o| !o.completed && o.velocity == Vec2::ZERO));
    }

    #[test]
    fn degenerate_mass_distribution() {
        let cfg = WorldConfig {
            n_objects: 1,
            mass_choices: vec![MassChoice {
                mass: 1.0,
                probability: 1.0,
            }],
            ..bare_config()
        };
        let w = WorldState::new(&cfg, 5).unwrap();
        assert_eq!(w.objects.len(), 1);
        assert_eq!(w.objects[0].mass, 1.0);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = WorldConfig {
            n_robots: 0,
            ..bare_config()
        };
        assert!(WorldState::new(&cfg, 0).is_err());
    }

    #[test]
    fn movable_counts_committed_robots_only() {
        let heavy = ObjectState::new(Vec2::new(5.0, 5.0), Vec2::new(9.0, 5.0), 3.0);
        let near = |dx: f64| attached(Vec2::new(5.0 + dx, 5.0), 0);
        let three = world(vec![near(0.1), near(-0.2), near(0.5)], vec![heavy.clone()]);
        assert!(three.movable(0).unwrap());
        let two = world(vec![near(0.1), near(-0.2)], vec![heavy]);
        assert!(!two.movable(0).unwrap());

        let light = ObjectState::new(Vec2::new(5.0, 5.0), Vec2::new(9.0, 5.0), 1.0);
        let passer_by = world(vec![RobotState::at(Vec2::new(5.1, 5.0))], vec![light.clone()]);
        assert!(!passer_by.movable(0).unwrap());
        let exact = world(vec![attached(Vec2::new(5.0, 5.0), 0)], vec![light]);
        assert!(exact.movable(0).unwrap());
    }

    #[test]
    fn movable_on_completed_object_is_a_contract_error() {
        let mut o = ObjectState::new(Vec2::new(9.0, 5.0), Vec2::new(9.0, 5.0), 1.0);
        o.completed = true;
        let w = world(vec![RobotState::at(Vec2::ZERO)], vec![o]);
        assert!(w.movable(0).is_err());
    }

    #[test]
    fn free_robot_kinematics() {
        let far = ObjectState::new(Vec2::new(3.0, 4.0), Vec2::new(9.0, 5.0), 3.0);
        let mut w = world(vec![RobotState::at(Vec2::ZERO)], vec![far]);
        let out = w.step(&[Some(0)]).unwrap();
        let p = w.robots[0].position;
        assert!((p.x - 0.6).abs() < 1e-12 && (p.y - 0.8).abs() < 1e-12, "{p:?}");
        assert_eq!(out.moved, vec![false]);
        assert_eq!(out.reward, 0.0);
    }

    #[test]
    fn robot_stops_at_contact() {
        let o = ObjectState::new(Vec2::new(1.0, 0.0), Vec2::new(9.0, 5.0), 3.0);
        let mut w = world(vec![RobotState::at(Vec2::ZERO)], vec![o]);
        w.step(&[Some(0)]).unwrap();
        let d = w.robots[0].position.distance(w.objects[0].position);
        assert!((d - 0.5).abs() < 1e-12);
        assert!(w.robots[0].stuck_duration > 0.0);
    }

    #[test]
    fn carried_object_kinematics() {
        let o = ObjectState::new(Vec2::new(1.0, 0.0), Vec2::new(5.0, 0.0), 1.0);
        let r = attached(Vec2::new(1.0, 0.3), 0);
        let mut w = world(vec![r], vec![o]);
        let out = w.step(&[Some(0)]).unwrap();
        let z = w.objects[0].position;
        assert!((z.x - 1.5).abs() < 1e-12 && z.y.abs() < 1e-12);
        let x = w.robots[0].position;
        assert!((x.x - 1.5).abs() < 1e-12 && (x.y - 0.3).abs() < 1e-12);
        assert!((w.objects[0].speed() - 0.5).abs() < 1e-12);
        assert_eq!(out.moved, vec![true]);
        assert!((out.reward - 150.0).abs() < 1e-9);
        assert_eq!(w.robots[0].stuck_duration, 0.0);
    }

    #[test]
    fn object_near_goal_completes_at_step_start() {
        let o = ObjectState::new(Vec2::new(9.0, 5.03), Vec2::new(9.0, 5.0), 3.0);
        let far = ObjectState::new(Vec2::new(2.0, 2.0), Vec2::new(1.0, 5.0), 3.0);
        let mut w = world(vec![RobotState::at(Vec2::ZERO)], vec![o, far]);
        let out = w.step(&[Some(1)]).unwrap();
        assert!(w.objects[0].completed);
        assert_eq!(w.objects[0].velocity, Vec2::ZERO);
        assert_eq!(w.objects[0].completed_at, Some(0.0));
        assert_eq!(out.newly_completed, vec![0]);
        assert_eq!(out.reward, 1.0);
    }

    #[test]
    fn delivery_locks_object_and_zeroes_velocity() {
        let o = ObjectState::new(Vec2::new(4.8, 0.0), Vec2::new(5.0, 0.0), 1.0);
        let mut w = world(vec![attached(Vec2::new(4.8, 0.2), 0)], vec![o]);
        let out = w.step(&[Some(0)]).unwrap();
        assert!(w.objects[0].completed);
        assert_eq!(w.objects[0].velocity, Vec2::ZERO);
        assert!(w.objects[0].position.distance(Vec2::new(5.0, 0.0)) <= 0.05 + 1e-12);
        assert!(out.done);
        assert_eq!(out.reward, 1.0);
        let t = w.objects[0].completed_at.unwrap();
        assert!((t - 0.4).abs() < 1e-12, "{t}");
    }

    #[test]
    fn rejects_bad_targets() {
        let mut done = ObjectState::new(Vec2::new(9.0, 5.0), Vec2::new(9.0, 5.0), 1.0);
        done.completed = true;
        let open = ObjectState::new(Vec2::new(3.0, 3.0), Vec2::new(1.0, 5.0), 1.0);
        let mut w = world(vec![RobotState::at(Vec2::ZERO)], vec![done, open]);
        assert_eq!(
            w.step(&[Some(0)]),
            Err(SimError::CompletedTarget { robot: 0, object: 0 })
        );
        assert_eq!(w.step(&[None]), Err(SimError::MissingTarget { robot: 0 }));
        assert!(matches!(w.step(&[Some(5)]), Err(SimError::UnknownObject { .. })));
        assert!(matches!(w.step(&[]), Err(SimError::TargetCount { .. })));
    }

    #[test]
    fn reward_examples() {
        let cfg = WorldConfig {
            n_objects: 6,
            ..bare_config()
        };
        let mut w = WorldState::new(&cfg, 1).unwrap();
        for o in &mut w.objects {
            o.position = o.goal;
        }
        assert_eq!(compute_reward(&w), 6.0);

        let mut w = WorldState::new(&cfg, 1).unwrap();
        for o in &mut w.objects {
            o.position = o.goal + Vec2::new(1.0, 0.0);
        }
        assert_eq!(compute_reward(&w), 0.0);
        w.objects[2].velocity = Vec2::new(0.3, 0.4);
        assert!((compute_reward(&w) - 150.0).abs() < 1e-12);
    }

    #[test]
    fn trajectory_rows_cover_all_entities() {
        let w = WorldState::new(&bare_config(), 2).unwrap();
        let rows = w.trajectory_rows();
        assert_eq!(rows.len(), 3 + 6);
        assert_eq!(rows[0].entity_kind, EntityKind::Robot);
        assert_eq!(rows[3].entity_kind, EntityKind::Object);
    }
}
