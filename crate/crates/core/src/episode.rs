//! One simulated episode: world, priority table and per-method decision
//! logic, stepped one decision period at a time.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::WorldConfig;
use crate::error::{ConfigError, SimError};
use crate::policy::{
    build_observation, neighbor_sets, scripted_nearest, scripted_nearest_one, Action, Method,
    Observation, OneSelector, Variant,
};
use crate::priority::{trigger_signals, CommEvent, CommSignals, PriorityTable};
use crate::world::{StepOutcome, WorldState};

const PRIORITY_STREAM: u64 = 1;
const DECISION_STREAM: u64 = 2;

#[derive(Debug, Clone)]
pub struct StepReport {
    pub outcome: StepOutcome,
    pub targets: Vec<Option<usize>>,
    pub signals: CommSignals,
    pub exchanges: Vec<CommEvent>,
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub world: WorldState,
    pub priorities: PriorityTable,
    rng: ChaCha8Rng,
    one: OneSelector,
    pub comm_log: Vec<CommEvent>,
    /// Σ P_l over the steps so far.
    pub completion_return: f64,
    /// λ Σ ‖v_l‖ over the steps so far.
    pub motion_return: f64,
    /// Seconds with two or more objects moving at once.
    pub simultaneous_carry_time: f64,
    done: bool,
}

impl Episode {
    pub fn new(config: &WorldConfig, seed: u64) -> Result<Self, ConfigError> {
        Ok(Episode::from_world(WorldState::new(config, seed)?, seed))
    }

    /// Starts from a prepared world; `seed` drives priority initialization
    /// and randomized decisions.
    pub fn from_world(mut world: WorldState, seed: u64) -> Self {
        let mut prng = ChaCha8Rng::seed_from_u64(seed);
        prng.set_stream(PRIORITY_STREAM);
        let mut priorities = PriorityTable::random(
            world.n_robots(),
            world.n_objects(),
            world.config.priority_gain,
            &mut prng,
        );
        world.settle_completions();
        let completed = world.completed_mask();
        priorities.zero_completed(&completed);
        for (i, robot) in world.robots.iter_mut().enumerate() {
            if robot.selected_object.is_none() {
                robot.selected_object = priorities.select(i, &completed);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(DECISION_STREAM);
        let done = world.all_completed();
        Episode {
            world,
            priorities,
            rng,
            one: OneSelector::default(),
            comm_log: Vec::new(),
            completion_return: 0.0,
            motion_return: 0.0,
            simultaneous_carry_time: 0.0,
            done,
        }
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn total_return(&self) -> f64 {
        self.completion_return + self.motion_return
    }

    pub fn observations(&self, variant: Variant) -> Vec<Observation> {
        let k = self.world.config.k_neighbors;
        (0..self.world.n_robots())
            .map(|i| {
                build_observation(
                    &self.world,
                    &self.priorities,
                    i,
                    k,
                    variant.observes_neighbor_priorities(),
                )
            })
            .collect()
    }

    fn neighbor_objects(&self) -> Vec<Vec<usize>> {
        let k = self.world.config.k_neighbors;
        (0..self.world.n_robots())
            .map(|i| neighbor_sets(&self.world, i, k).1)
            .collect()
    }

    /// Applies one action per robot: gates, priority update, selection and
    /// one world step.
    pub fn step_learned(&mut self, variant: Variant, actions: &[Action]) -> Result<StepReport, SimError> {
        let n = self.world.n_robots();
        if actions.len() != n {
            return Err(SimError::Shape(format!("{} actions for {n} robots", actions.len())));
        }
        let completed = self.world.completed_mask();
        let sets = self.neighbor_objects();
        let signals = if variant.communicates() {
            let pairs: Vec<(bool, bool)> = actions
                .iter()
                .enumerate()
                .map(|(i, a)| trigger_signals(a.alpha, a.beta, self.world.selected_object_speed(i)))
                .collect();
            CommSignals::from_pairs(&pairs)
        } else {
            CommSignals::silent(n)
        };
        let refs: Vec<Vec<f64>> = actions.iter().map(|a| a.refs.clone()).collect();
        if variant.integrates_priorities() {
            let cfg = &self.world.config;
            self.priorities.update(
                &refs,
                &signals,
                &sets,
                &completed,
                cfg.selection_period,
                cfg.substeps,
            )?;
        } else {
            self.priorities.assign_references(&refs, &sets, &completed)?;
        }
        self.priorities.zero_completed(&completed);
        let targets: Vec<Option<usize>> = (0..n).map(|i| self.priorities.select(i, &completed)).collect();
        let exchanges = signals.exchanges(self.world.step_count);
        let outcome = self.advance(&targets)?;
        self.comm_log.extend_from_slice(&exchanges);
        Ok(StepReport {
            outcome,
            targets,
            signals,
            exchanges,
        })
    }

    /// One step of a scripted baseline.
    pub fn step_scripted(&mut self, method: Method) -> Result<StepReport, SimError> {
        let n = self.world.n_robots();
        let completed = self.world.completed_mask();
        let targets: Vec<Option<usize>> = match method {
            Method::Nearest => (0..n).map(|i| scripted_nearest(&self.world, i)).collect(),
            Method::One => {
                let l = self.one.pick(&completed, &mut self.rng);
                vec![l; n]
            }
            Method::NearestOne => {
                let stuck: Vec<f64> = self.world.robots.iter().map(|r| r.stuck_duration).collect();
                let t_s = self.world.config.stuck_threshold;
                (0..n)
                    .map(|i| scripted_nearest_one(&self.world, i, &stuck, t_s))
                    .collect()
            }
            learned => {
                return Err(SimError::Shape(format!("{learned} is not a scripted method")));
            }
        };
        let outcome = self.advance(&targets)?;
        Ok(StepReport {
            outcome,
            targets,
            signals: CommSignals::silent(n),
            exchanges: Vec::new(),
        })
    }

    fn advance(&mut self, targets: &[Option<usize>]) -> Result<StepOutcome, SimError> {
        let outcome = self.world.step(targets)?;
        self.priorities.zero_completed(&self.world.completed_mask());
        self.completion_return += outcome.completion_reward;
        self.motion_return += outcome.motion_reward;
        self.simultaneous_carry_time += outcome.simultaneous_carry_time;
        self.done = outcome.done;
        Ok(outcome)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Action;

    #[test]
    fn construction_selects_by_priority() {
        let ep = Episode::new(&WorldConfig::default(), 4).unwrap();
        let completed = ep.world.completed_mask();
        for (i, r) in ep.world.robots.iter().enumerate() {
            assert_eq!(r.selected_object, ep.priorities.select(i, &completed));
        }
        assert!((0..3).all(|i| ep.priorities.row(i).iter().all(|v| (0.0..=1.0).contains(v))));
    }

    #[test]
    fn scripted_step_rejects_learned_method() {
        let mut ep = Episode::new(&WorldConfig::default(), 4).unwrap();
        assert!(ep.step_scripted(Method::Ours).is_err());
    }

    #[test]
    fn no_dynamics_copies_references() {
        let mut ep = Episode::new(&WorldConfig::default(), 8).unwrap();
        ep.priorities = PriorityTable::zeros(3, 6, 0.2);
        let sets = ep.neighbor_objects();
        let actions: Vec<Action> = (0..3)
            .map(|_| Action { refs: vec![0.9, 0.1], alpha: 1.0, beta: 1.0 })
            .collect();
        let report = ep.step_learned(Variant::NoDynamics, &actions).unwrap();
        assert!(report.exchanges.is_empty());
        for (i, set) in sets.iter().enumerate() {
            assert_eq!(report.targets[i], Some(set[0]));
        }
    }

    #[test]
    fn gates_stay_shut_without_global_communication() {
        for variant in [Variant::Local, Variant::NoCom, Variant::NoDynamics] {
            let mut ep = Episode::new(&WorldConfig::default(), 8).unwrap();
            let actions = vec![Action { refs: vec![0.5, 0.5], alpha: 1.0, beta: 1.0 }; 3];
            for _ in 0..5 {
                ep.step_learned(variant, &actions).unwrap();
            }
            assert!(ep.comm_log.is_empty());
        }
        let mut ep = Episode::new(&WorldConfig::default(), 8).unwrap();
        let actions = vec![Action { refs: vec![0.5, 0.5], alpha: 1.0, beta: 1.0 }; 3];
        let report = ep.step_learned(Variant::Ours, &actions).unwrap();
        assert_eq!(report.exchanges.len(), 6);
    }
}
