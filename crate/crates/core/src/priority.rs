//! Dynamic task priorities with event-triggered global communication.
//!
//! Robot `i` keeps a priority `φ_i^l ∈ [0,1]` for every object. For objects
//! in its neighbor set the priority relaxes toward the policy reference
//! `c_i^l`; for every object it is additionally pulled toward the priorities
//! broadcast by sending robots whenever `i` is receiving:
//!
//! ```text
//! φ̇_i^l = k (c_i^l − φ_i^l) [l ∈ neighbors(i)] + σ_i Σ_{j≠i} d_j k (φ_j^l − φ_i^l)
//! ```
//!
//! Integration is explicit Euler over `substeps` sub-steps of one decision
//! period, clamping to `[0,1]` after each sub-step. Completed objects are
//! pinned at 0.

use rand::Rng;
use serde::Serialize;

use crate::error::SimError;

/// Strict threshold on the α/β policy outputs.
pub const TRIGGER_THRESHOLD: f64 = 0.5;

/// Send (`d_i`) and receive (`σ_i`) gates for one robot: each opens only when
/// its policy output exceeds 0.5 and the robot's selected object is not moving.
/// Object speeds are exactly 0 or the carry speed, so zero is tested exactly.
pub fn trigger_signals(alpha: f64, beta: f64, selected_object_speed: f64) -> (bool, bool) {
    let stalled = selected_object_speed == 0.0;
    (
        alpha > TRIGGER_THRESHOLD && stalled,
        beta > TRIGGER_THRESHOLD && stalled,
    )
}

/// Highest-priority uncompleted object; ties go to the lowest index.
pub fn select_object(phi: &[f64], completed: &[bool]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (l, (&p, &done)) in phi.iter().zip(completed).enumerate() {
        if done {
            continue;
        }
        if best.is_none_or(|(_, bp)| p > bp) {
            best = Some((l, p));
        }
    }
    best.map(|(l, _)| l)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CommEvent {
    pub step: usize,
    pub sender: usize,
    pub receiver: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommSignals {
    pub send: Vec<bool>,
    pub receive: Vec<bool>,
}

impl CommSignals {
    pub fn silent(n_robots: usize) -> Self {
        CommSignals {
            send: vec![false; n_robots],
            receive: vec![false; n_robots],
        }
    }

    pub fn from_pairs(pairs: &[(bool, bool)]) -> Self {
        CommSignals {
            send: pairs.iter().map(|p| p.0).collect(),
            receive: pairs.iter().map(|p| p.1).collect(),
        }
    }

    /// Every (sender, receiver) pair with an open send gate on the sender and
    /// an open receive gate on the receiver.
    pub fn exchanges(&self, step: usize) -> Vec<CommEvent> {
        let mut events = Vec::new();
        for (receiver, &rx) in self.receive.iter().enumerate() {
            if !rx {
                continue;
            }
            for (sender, &tx) in self.send.iter().enumerate() {
                if tx && sender != receiver {
                    events.push(CommEvent {
                        step,
                        sender,
                        receiver,
                    });
                }
            }
        }
        events
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PriorityRow {
    pub step: usize,
    pub robot: usize,
    pub object: usize,
    pub phi: f64,
}

/// N × M priority matrix, row per robot.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorityTable {
    n_robots: usize,
    n_objects: usize,
    values: Vec<f64>,
    gain: f64,
}

impl PriorityTable {
    pub fn zeros(n_robots: usize, n_objects: usize, gain: f64) -> Self {
        PriorityTable {
            n_robots,
            n_objects,
            values: vec![0.0; n_robots * n_objects],
            gain,
        }
    }

    /// Independent uniform [0,1) draws per entry.
    pub fn random(n_robots: usize, n_objects: usize, gain: f64, rng: &mut impl Rng) -> Self {
        let values = (0..n_robots * n_objects).map(|_| rng.random()).collect();
        PriorityTable {
            n_robots,
            n_objects,
            values,
            gain,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>], gain: f64) -> Result<Self, SimError> {
        let n_objects = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_objects) {
            return Err(SimError::Shape("ragged priority rows".into()));
        }
        Ok(PriorityTable {
            n_robots: rows.len(),
            n_objects,
            values: rows.concat(),
            gain,
        })
    }

    pub fn n_robots(&self) -> usize {
        self.n_robots
    }

    pub fn n_objects(&self) -> usize {
        self.n_objects
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn get(&self, i: usize, l: usize) -> f64 {
        self.values[i * self.n_objects + l]
    }

    pub fn set(&mut self, i: usize, l: usize, v: f64) {
        self.values[i * self.n_objects + l] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_objects..(i + 1) * self.n_objects]
    }

    pub fn select(&self, i: usize, completed: &[bool]) -> Option<usize> {
        select_object(self.row(i), completed)
    }

    pub fn zero_completed(&mut self, completed: &[bool]) {
        for i in 0..self.n_robots {
            for (l, &done) in completed.iter().enumerate() {
                if done {
                    self.set(i, l, 0.0);
                }
            }
        }
    }

    fn check_shapes(
        &self,
        refs: &[Vec<f64>],
        neighbor_objects: &[Vec<usize>],
        completed: &[bool],
    ) -> Result<(), SimError> {
        if refs.len() != self.n_robots || neighbor_objects.len() != self.n_robots {
            return Err(SimError::Shape(format!(
                "{} robots in table, {} reference rows, {} neighbor sets",
                self.n_robots,
                refs.len(),
                neighbor_objects.len()
            )));
        }
        if completed.len() != self.n_objects {
            return Err(SimError::Shape(format!(
                "{} objects in table, completion mask of {}",
                self.n_objects,
                completed.len()
            )));
        }
        for (i, (c, set)) in refs.iter().zip(neighbor_objects).enumerate() {
            if c.len() < set.len() {
                return Err(SimError::Shape(format!(
                    "robot {i}: {} references for {} neighbor objects",
                    c.len(),
                    set.len()
                )));
            }
            if let Some(&l) = set.iter().find(|&&l| l >= self.n_objects) {
                return Err(SimError::NoSuchObject { object: l });
            }
        }
        Ok(())
    }

    /// Integrates the priority dynamics over `dt` seconds in `substeps`
    /// Euler steps. `refs[i][k]` is robot i's reference for
    /// `neighbor_objects[i][k]`.
    pub fn update(
        &mut self,
        refs: &[Vec<f64>],
        signals: &CommSignals,
        neighbor_objects: &[Vec<usize>],
        completed: &[bool],
        dt: f64,
        substeps: usize,
    ) -> Result<(), SimError> {
        self.check_shapes(refs, neighbor_objects, completed)?;
        if signals.send.len() != self.n_robots || signals.receive.len() != self.n_robots {
            return Err(SimError::Shape("gate vectors do not match robot count".into()));
        }
        let h = dt / substeps as f64;
        let k = self.gain;
        let (n, m) = (self.n_robots, self.n_objects);
        let mut rate = vec![0.0; n * m];
        for _ in 0..substeps {
            rate.iter_mut().for_each(|r| *r = 0.0);
            for i in 0..n {
                if signals.receive[i] {
                    for l in 0..m {
                        let own = self.get(i, l);
                        let pull: f64 = (0..n)
                            .filter(|&j| j != i && signals.send[j])
                            .map(|j| k * (self.get(j, l) - own))
                            .sum();
                        rate[i * m + l] += pull;
                    }
                }
                for (&l, &c) in neighbor_objects[i].iter().zip(&refs[i]) {
                    rate[i * m + l] += k * (c - self.get(i, l));
                }
            }
            for i in 0..n {
                for l in 0..m {
                    let idx = i * m + l;
                    self.values[idx] = if completed[l] {
                        0.0
                    } else {
                        (self.values[idx] + h * rate[idx]).clamp(0.0, 1.0)
                    };
                }
            }
        }
        Ok(())
    }

    /// Sets neighbor-set priorities straight to their references, without
    /// any dynamics.
    pub fn assign_references(
        &mut self,
        refs: &[Vec<f64>],
        neighbor_objects: &[Vec<usize>],
        completed: &[bool],
    ) -> Result<(), SimError> {
        self.check_shapes(refs, neighbor_objects, completed)?;
        for (i, (c, set)) in refs.iter().zip(neighbor_objects).enumerate() {
            for (&l, &v) in set.iter().zip(c) {
                self.set(i, l, v.clamp(0.0, 1.0));
            }
        }
        self.zero_completed(completed);
        Ok(())
    }

    pub fn rows_at(&self, step: usize) -> Vec<PriorityRow> {
        (0..self.n_robots)
            .flat_map(|i| {
                (0..self.n_objects).map(move |l| (i, l))
            })
            .map(|(i, l)| PriorityRow {
                step,
                robot: i,
                object: l,
                phi: self.get(i, l),
            })
            .collect()
    }
}
