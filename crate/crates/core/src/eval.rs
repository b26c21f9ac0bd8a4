//! Evaluation trials, success-rate / transport-time metrics and sweeps.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::WorldConfig;
use crate::episode::Episode;
use crate::error::{ConfigError, Error, SimError};
use crate::maddpg::{deploy_actors, ActorSet};
use crate::policy::{act, Method};
use crate::priority::{CommEvent, PriorityRow};
use crate::world::{TrajectoryRow, WorldState};

/// First evaluation seed. Training draws episode seeds from its own
/// generator, so evaluation environments are not reused from training.
pub const DEFAULT_EVAL_SEED: u64 = 1_000_000;

pub const RESULTS_HEADER: [&str; 10] = [
    "method",
    "N",
    "M",
    "heavy_proportion",
    "n_trials",
    "SR",
    "TT_mean",
    "TT_std",
    "t_a_mean",
    "seed0",
];

pub const TRIALS_HEADER: [&str; 13] = [
    "method",
    "N",
    "M",
    "heavy_proportion",
    "seed",
    "success",
    "transport_time",
    "t_a",
    "steps",
    "return",
    "R1",
    "R2",
    "messages",
];

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub seed: u64,
    pub success: bool,
    /// Seconds until the last object reached its goal; `None` on failure.
    pub transport_time: Option<f64>,
    /// Seconds during which two or more objects moved at once.
    pub t_a: f64,
    pub steps: usize,
    pub r1: f64,
    pub r2: f64,
    pub messages: usize,
}

impl TrialResult {
    pub fn total_return(&self) -> f64 {
        self.r1 + self.r2
    }

    pub fn duration(&self) -> f64 {
        self.steps as f64
    }
}

/// Full per-step record of a trial.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrialLog {
    pub trajectory: Vec<TrajectoryRow>,
    pub priorities: Vec<PriorityRow>,
    pub communication: Vec<CommEvent>,
}

fn check_actors(method: Method, actors: Option<&ActorSet>, config: &WorldConfig) -> Result<(), Error> {
    let Some(variant) = method.variant() else {
        return Ok(());
    };
    let set = actors.ok_or_else(|| Error::MissingCheckpoint(method.to_string()))?;
    if set.variant != variant {
        return Err(Error::Checkpoint(format!(
            "checkpoint was trained as {} but {method} was requested",
            set.variant.method()
        )));
    }
    if set.k_neighbors != config.k_neighbors {
        return Err(Error::Checkpoint(format!(
            "checkpoint uses K = {} but the world uses K = {}",
            set.k_neighbors, config.k_neighbors
        )));
    }
    Ok(())
}

/// Runs `method` for one evaluation episode from a freshly spawned world.
pub fn run_trial(
    method: Method,
    actors: Option<&ActorSet>,
    config: &WorldConfig,
    seed: u64,
) -> Result<TrialResult, Error> {
    let world = WorldState::new(config, seed)?;
    run_trial_from(method, actors, world, seed, None)
}

/// Runs `method` from a prepared world, optionally recording a log.
pub fn run_trial_from(
    method: Method,
    actors: Option<&ActorSet>,
    world: WorldState,
    seed: u64,
    mut log: Option<&mut TrialLog>,
) -> Result<TrialResult, Error> {
    check_actors(method, actors, &world.config)?;
    let assignment = actors.map(|a| deploy_actors(a.actors.len(), world.n_robots()));
    let mut ep = Episode::from_world(world, seed);
    if let Some(log) = log.as_deref_mut() {
        log.trajectory.extend(ep.world.trajectory_rows());
        log.priorities.extend(ep.priorities.rows_at(0));
    }
    while !ep.is_done() {
        match (method.variant(), actors, &assignment) {
            (Some(variant), Some(set), Some(assignment)) => {
                let actions = ep
                    .observations(variant)
                    .iter()
                    .zip(assignment)
                    .map(|(o, &a)| act(&set.actors[a], o))
                    .collect::<Result<Vec<_>, _>>()?;
                ep.step_learned(variant, &actions)?;
            }
            _ => {
                ep.step_scripted(method)?;
            }
        }
        if let Some(log) = log.as_deref_mut() {
            log.trajectory.extend(ep.world.trajectory_rows());
            log.priorities.extend(ep.priorities.rows_at(ep.world.step_count));
        }
    }
    if let Some(log) = log {
        log.communication = ep.comm_log.clone();
    }
    let success = ep.world.all_completed();
    let transport_time = if success {
        Some(
            ep.world
                .objects
                .iter()
                .filter_map(|o| o.completed_at)
                .fold(0.0, f64::max),
        )
    } else {
        None
    };
    Ok(TrialResult {
        seed,
        success,
        transport_time,
        t_a: ep.simultaneous_carry_time,
        steps: ep.world.step_count,
        r1: ep.completion_return,
        r2: ep.motion_return,
        messages: ep.comm_log.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub method: Method,
    pub n_robots: usize,
    pub n_objects: usize,
    pub heavy_proportion: f64,
    pub n_trials: usize,
    pub successes: usize,
    pub sr: f64,
    /// Mean over successful trials.
    pub tt_mean: Option<f64>,
    /// Sample standard deviation over successful trials.
    pub tt_std: Option<f64>,
    pub t_a_mean: f64,
    pub seed0: u64,
}

impl MetricsSummary {
    /// Standard error of the mean transport time.
    pub fn tt_standard_error(&self) -> Option<f64> {
        self.tt_std.map(|s| s / (self.successes as f64).sqrt())
    }
}

/// Sums in sorted order so the result does not depend on trial order.
fn stable_mean(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

/// Aggregates trial results. Order-independent in its input.
pub fn summarize(
    method: Method,
    config: &WorldConfig,
    heavy_proportion: f64,
    seed0: u64,
    trials: &[TrialResult],
) -> MetricsSummary {
    let mut times: Vec<f64> = trials.iter().filter_map(|t| t.transport_time).collect();
    let successes = times.len();
    let (tt_mean, tt_std) = if times.is_empty() {
        (None, None)
    } else {
        let mean = stable_mean(&mut times);
        let std = if successes > 1 {
            let mut sq: Vec<f64> = times.iter().map(|t| (t - mean).powi(2)).collect();
            (stable_mean(&mut sq) * successes as f64 / (successes - 1) as f64).sqrt()
        } else {
            0.0
        };
        (Some(mean), Some(std))
    };
    let mut t_a: Vec<f64> = trials.iter().map(|t| t.t_a).collect();
    MetricsSummary {
        method,
        n_robots: config.n_robots,
        n_objects: config.n_objects,
        heavy_proportion,
        n_trials: trials.len(),
        successes,
        sr: successes as f64 / trials.len() as f64,
        tt_mean,
        tt_std,
        t_a_mean: if t_a.is_empty() { 0.0 } else { stable_mean(&mut t_a) },
        seed0,
    }
}

/// One evaluation cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSpec {
    pub n_robots: usize,
    pub n_objects: usize,
    pub heavy_proportion: f64,
    pub n_trials: usize,
    pub seed0: u64,
}

/// Runs trials `seed0..seed0+n_trials` on up to `jobs` threads. Results are
/// returned in seed order regardless of `jobs`.
pub fn run_eval(
    method: Method,
    actors: Option<&ActorSet>,
    base: &WorldConfig,
    spec: EvalSpec,
    jobs: usize,
) -> Result<(MetricsSummary, Vec<TrialResult>), Error> {
    if spec.n_trials == 0 {
        return Err(ConfigError::invalid("trials", "must be at least 1").into());
    }
    if !(0.0..=1.0).contains(&spec.heavy_proportion) {
        return Err(ConfigError::invalid("heavy_proportion", "must lie in [0,1]").into());
    }
    let config = base.for_evaluation(spec.n_robots, spec.n_objects, spec.heavy_proportion);
    config.validate()?;
    check_actors(method, actors, &config)?;
    let seeds: Vec<u64> = (0..spec.n_trials as u64).map(|k| spec.seed0 + k).collect();
    let trial = |seed: &u64| run_trial(method, actors, &config, *seed);
    let trials = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Sim(SimError::Shape(e.to_string())))?;
        pool.install(|| seeds.par_iter().map(trial).collect::<Result<Vec<_>, _>>())?
    } else {
        seeds.iter().map(trial).collect::<Result<Vec<_>, _>>()?
    };
    let summary = summarize(method, &config, spec.heavy_proportion, spec.seed0, &trials);
    Ok((summary, trials))
}

/// Cross product of team sizes, object counts and heavy proportions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub n_robots: Vec<usize>,
    pub n_objects: Vec<usize>,
    pub heavy_proportions: Vec<f64>,
    pub trials: usize,
    pub seed0: u64,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid::scalability()
    }
}

impl SweepGrid {
    /// N ∈ {3,6}, M ∈ {4,6,8,10}, half the objects heavy.
    pub fn scalability() -> Self {
        SweepGrid {
            n_robots: vec![3, 6],
            n_objects: vec![4, 6, 8, 10],
            heavy_proportions: vec![0.5],
            trials: 100,
            seed0: DEFAULT_EVAL_SEED,
        }
    }

    /// Heavy proportion 0 to 1 in quarter steps at N = 6, M = 10.
    pub fn proportion() -> Self {
        SweepGrid {
            n_robots: vec![6],
            n_objects: vec![10],
            heavy_proportions: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            trials: 100,
            seed0: DEFAULT_EVAL_SEED,
        }
    }

    pub fn cells(&self) -> Vec<EvalSpec> {
        let mut out = Vec::new();
        for &n in &self.n_robots {
            for &m in &self.n_objects {
                for &p in &self.heavy_proportions {
                    out.push(EvalSpec {
                        n_robots: n,
                        n_objects: m,
                        heavy_proportion: p,
                        n_trials: self.trials,
                        seed0: self.seed0,
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub method: Method,
    pub spec: EvalSpec,
    pub result: Result<MetricsSummary, String>,
}

/// Evaluates every method on every grid cell. A failing cell is recorded
/// and the sweep moves on.
pub fn sweep(
    methods: &[Method],
    grid: &SweepGrid,
    base: &WorldConfig,
    actors: Option<&ActorSet>,
    jobs: usize,
) -> Vec<CellOutcome> {
    let mut out = Vec::new();
    for &method in methods {
        for spec in grid.cells() {
            let result = run_eval(method, actors, base, spec, jobs)
                .map(|(summary, _)| summary)
                .map_err(|e| e.to_string());
            out.push(CellOutcome { method, spec, result });
        }
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

pub fn write_summaries<W: Write>(out: W, rows: &[MetricsSummary]) -> Result<(), Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULTS_HEADER)?;
    for r in rows {
        w.write_record([
            r.method.to_string(),
            r.n_robots.to_string(),
            r.n_objects.to_string(),
            r.heavy_proportion.to_string(),
            r.n_trials.to_string(),
            r.sr.to_string(),
            opt(r.tt_mean),
            opt(r.tt_std),
            r.t_a_mean.to_string(),
            r.seed0.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trials<W: Write>(
    out: W,
    method: Method,
    config: &WorldConfig,
    heavy_proportion: f64,
    trials: &[TrialResult],
) -> Result<(), Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRIALS_HEADER)?;
    for t in trials {
        w.write_record([
            method.to_string(),
            config.n_robots.to_string(),
            config.n_objects.to_string(),
            heavy_proportion.to_string(),
            t.seed.to_string(),
            t.success.to_string(),
            opt(t.transport_time),
            t.t_a.to_string(),
            t.steps.to_string(),
            t.total_return().to_string(),
            t.r1.to_string(),
            t.r2.to_string(),
            t.messages.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trajectory<W: Write>(out: W, rows: &[TrajectoryRow]) -> Result<(), Error> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(["step", "entity_kind", "entity_id", "x", "y", "vx", "vy", "completed"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_priorities<W: Write>(out: W, rows: &[PriorityRow]) -> Result<(), Error> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(["step", "robot", "object", "phi"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_communication<W: Write>(out: W, rows: &[CommEvent]) -> Result<(), Error> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(["step", "sender", "receiver"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec2;
    use crate::world::{ObjectState, RobotState};

    fn trial(seed: u64, tt: Option<f64>, t_a: f64) -> TrialResult {
        TrialResult {
            seed,
            success: tt.is_some(),
            transport_time: tt,
            t_a,
            steps: 10,
            r1: 0.0,
            r2: 0.0,
            messages: 0,
        }
    }

    #[test]
    fn success_rate_is_a_ratio() {
        let trials: Vec<TrialResult> = (0..100)
            .map(|k| trial(k, if k < 87 { Some(100.0) } else { None }, 0.0))
            .collect();
        let s = summarize(Method::One, &WorldConfig::default(), 0.5, 0, &trials);
        assert_eq!(s.sr, 0.87);
        assert_eq!(s.tt_mean, Some(100.0));
        assert_eq!(s.tt_std, Some(0.0));
    }

    #[test]
    fn summary_ignores_order() {
        let trials: Vec<TrialResult> = (0..20)
            .map(|k| trial(k, (k % 3 != 0).then(|| 0.1 * (k as f64).powi(3)), 1.0 / (k + 1) as f64))
            .collect();
        let mut rev = trials.clone();
        rev.reverse();
        let cfg = WorldConfig::default();
        assert_eq!(
            summarize(Method::Nearest, &cfg, 0.5, 0, &trials),
            summarize(Method::Nearest, &cfg, 0.5, 0, &rev)
        );
    }

    #[test]
    fn all_failures_have_no_transport_time() {
        let s = summarize(Method::Nearest, &WorldConfig::default(), 0.5, 0, &[trial(0, None, 2.0)]);
        assert_eq!(s.sr, 0.0);
        assert_eq!(s.tt_mean, None);
        let mut buf = Vec::new();
        write_summaries(&mut buf, &[s]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "method,N,M,heavy_proportion,n_trials,SR,TT_mean,TT_std,t_a_mean,seed0\n\
             nearest,3,6,0.5,1,0,NA,NA,2,0\n"
        );
    }

    #[test]
    fn objects_at_goal_succeed_immediately() {
        let cfg = WorldConfig {
            n_robots: 2,
            n_objects: 3,
            ..WorldConfig::default()
        }
        .for_evaluation(2, 3, 0.5);
        let objects = (0..3)
            .map(|k| {
                let g = crate::world::goal_position(&cfg, k, 3);
                ObjectState::new(g + Vec2::new(0.01, 0.0), g, 3.0)
            })
            .collect();
        let robots = vec![RobotState::at(Vec2::new(2.0, 2.0)), RobotState::at(Vec2::new(3.0, 3.0))];
        let world = WorldState::from_parts(&cfg, robots, objects).unwrap();
        for method in Method::SCRIPTED {
            let r = run_trial_from(method, None, world.clone(), 0, None).unwrap();
            assert!(r.success);
            assert_eq!(r.transport_time, Some(0.0));
            assert_eq!(r.steps, 0);
        }
    }

    #[test]
    fn lone_robot_cannot_move_heavy_object() {
        let cfg = WorldConfig::default().for_evaluation(1, 1, 1.0);
        for method in Method::SCRIPTED {
            let r = run_trial(method, None, &cfg, 4).unwrap();
            assert!(!r.success);
            assert_eq!(r.transport_time, None);
            assert_eq!(r.steps, crate::config::EVAL_MAX_STEPS);
            assert_eq!(r.t_a, 0.0);
        }
    }

    #[test]
    fn learned_methods_need_a_checkpoint() {
        let cfg = WorldConfig::default();
        for method in [Method::Ours, Method::Local, Method::NoCom, Method::NoDynamics] {
            assert!(matches!(
                run_trial(method, None, &cfg, 0),
                Err(Error::MissingCheckpoint(_))
            ));
        }
    }

    #[test]
    fn zero_trials_rejected() {
        let spec = EvalSpec {
            n_robots: 3,
            n_objects: 4,
            heavy_proportion: 0.5,
            n_trials: 0,
            seed0: 0,
        };
        assert!(run_eval(Method::Nearest, None, &WorldConfig::default(), spec, 1).is_err());
    }

    #[test]
    fn single_trial_summary() {
        let spec = EvalSpec {
            n_robots: 3,
            n_objects: 4,
            heavy_proportion: 0.0,
            n_trials: 1,
            seed0: 12,
        };
        let (s, trials) = run_eval(Method::Nearest, None, &WorldConfig::default(), spec, 1).unwrap();
        assert!(s.sr == 0.0 || s.sr == 1.0);
        assert_eq!(s.tt_mean, trials[0].transport_time);
    }

    #[test]
    fn parallel_matches_sequential() {
        let spec = EvalSpec {
            n_robots: 3,
            n_objects: 6,
            heavy_proportion: 0.5,
            n_trials: 8,
            seed0: 100,
        };
        let cfg = WorldConfig::default();
        let a = run_eval(Method::NearestOne, None, &cfg, spec, 1).unwrap();
        let b = run_eval(Method::NearestOne, None, &cfg, spec, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn grids_have_expected_cells() {
        assert_eq!(SweepGrid::scalability().cells().len(), 8);
        assert_eq!(SweepGrid::proportion().cells().len(), 5);
        let empty = SweepGrid {
            n_objects: vec![],
            ..SweepGrid::scalability()
        };
        assert!(empty.cells().is_empty());
        assert!(sweep(&[], &SweepGrid::scalability(), &WorldConfig::default(), None, 1).is_empty());
    }
}
