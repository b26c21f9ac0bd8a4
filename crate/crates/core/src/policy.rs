//! Local observations, action decoding and the scripted baseline policies.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::NeuralError;
use crate::neural::Mlp;
use crate::priority::PriorityTable;
use crate::world::WorldState;

/// Task-allocation strategies selectable from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Nearest,
    One,
    NearestOne,
    Local,
    NoCom,
    NoDynamics,
    Ours,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Nearest,
        Method::One,
        Method::NearestOne,
        Method::Local,
        Method::NoCom,
        Method::NoDynamics,
        Method::Ours,
    ];

    pub const SCRIPTED: [Method; 3] = [Method::Nearest, Method::One, Method::NearestOne];

    pub fn name(self) -> &'static str {
        match self {
            Method::Nearest => "nearest",
            Method::One => "one",
            Method::NearestOne => "nearest-one",
            Method::Local => "local",
            Method::NoCom => "no-com",
            Method::NoDynamics => "no-dynamics",
            Method::Ours => "ours",
        }
    }

    /// Learned-policy mechanics, `None` for scripted baselines.
    pub fn variant(self) -> Option<Variant> {
        match self {
            Method::Local => Some(Variant::Local),
            Method::NoCom => Some(Variant::NoCom),
            Method::NoDynamics => Some(Variant::NoDynamics),
            Method::Ours => Some(Variant::Ours),
            _ => None,
        }
    }

    pub fn is_learned(self) -> bool {
        self.variant().is_some()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
                format!("unknown method {s:?}, expected one of {}", names.join(" | "))
            })
    }
}

/// How a learned policy's outputs drive the priority table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Priority dynamics with event-triggered global communication.
    #[default]
    Ours,
    /// Priority dynamics, receive gates forced shut.
    Local,
    /// As `Local`, with neighbor priorities hidden from the observation.
    NoCom,
    /// As `NoCom`, with neighbor-set priorities set straight to the references.
    NoDynamics,
}

impl Variant {
    pub fn method(self) -> Method {
        match self {
            Variant::Ours => Method::Ours,
            Variant::Local => Method::Local,
            Variant::NoCom => Method::NoCom,
            Variant::NoDynamics => Method::NoDynamics,
        }
    }

    pub fn communicates(self) -> bool {
        self == Variant::Ours
    }

    pub fn observes_neighbor_priorities(self) -> bool {
        matches!(self, Variant::Ours | Variant::Local)
    }

    pub fn integrates_priorities(self) -> bool {
        self != Variant::NoDynamics
    }
}

pub fn observation_dim(k: usize) -> usize {
    2 + 7 * k + k * (2 + k)
}

/// Actor output width: K references plus α and β.
pub fn action_dim(k: usize) -> usize {
    k + 2
}

/// Indices of the `k` nearest other robots and the `k` nearest uncompleted
/// objects to robot `i`, nearest first, ties to the lower index.
pub fn neighbor_sets(world: &WorldState, i: usize, k: usize) -> (Vec<usize>, Vec<usize>) {
    let origin = world.robots[i].position;
    let nearest = |mut cands: Vec<(f64, usize)>| -> Vec<usize> {
        cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        cands.into_iter().take(k).map(|(_, idx)| idx).collect()
    };
    let robots = nearest(
        world
            .robots
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(j, r)| (r.position.distance(origin), j))
            .collect(),
    );
    let objects = nearest(
        world
            .objects
            .iter()
            .enumerate()
            .filter(|(_, o)| !o.completed)
            .map(|(l, o)| (o.position.distance(origin), l))
            .collect(),
    );
    (robots, objects)
}

/// Fixed-layout local observation `o_i`:
///
/// ```text
/// [ x_i (absolute)
/// | per nearest object k:  z − x_i, v, z* − x_i, φ_i^l
/// | per nearest robot k:   x_j − x_i, φ_j^{l_1..l_K} ]
/// ```
///
/// Neighbor priorities `φ_j` are taken over robot i's own object set. Absent
/// objects or robots leave their slots at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation(pub Vec<f64>);

pub fn build_observation(
    world: &WorldState,
    priorities: &PriorityTable,
    i: usize,
    k: usize,
    include_neighbor_priorities: bool,
) -> Observation {
    let (robot_set, object_set) = neighbor_sets(world, i, k);
    let origin = world.robots[i].position;
    let mut o = vec![0.0; observation_dim(k)];
    o[0] = origin.x;
    o[1] = origin.y;
    for (slot, &l) in object_set.iter().enumerate() {
        let obj = &world.objects[l];
        let base = 2 + 7 * slot;
        let rel = obj.position - origin;
        let goal = obj.goal - origin;
        o[base..base + 7].copy_from_slice(&[
            rel.x,
            rel.y,
            obj.velocity.x,
            obj.velocity.y,
            goal.x,
            goal.y,
            priorities.get(i, l),
        ]);
    }
    for (slot, &j) in robot_set.iter().enumerate() {
        let base = 2 + 7 * k + slot * (2 + k);
        let rel = world.robots[j].position - origin;
        o[base] = rel.x;
        o[base + 1] = rel.y;
        if include_neighbor_priorities {
            for (q, &l) in object_set.iter().enumerate() {
                o[base + 2 + q] = priorities.get(j, l);
            }
        }
    }
    Observation(o)
}

/// Decoded policy output, every component in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    /// Priority references for the neighbor objects, nearest first.
    pub refs: Vec<f64>,
    /// Send-gate input.
    pub alpha: f64,
    /// Receive-gate input.
    pub beta: f64,
}

impl Action {
    /// From a `[refs.., alpha, beta]` vector already in `[0,1]`.
    pub fn from_unit(v: &[f64]) -> Self {
        let k = v.len() - 2;
        Action {
            refs: v[..k].to_vec(),
            alpha: v[k],
            beta: v[k + 1],
        }
    }

    /// From raw actor outputs in `[-1,1]` through `u ↦ (u+1)/2`.
    pub fn from_actor_output(u: &[f64]) -> Self {
        let unit: Vec<f64> = u.iter().map(|&x| unit_interval(x)).collect();
        Action::from_unit(&unit)
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.refs.clone();
        v.push(self.alpha);
        v.push(self.beta);
        v
    }
}

pub(crate) fn unit_interval(u: f64) -> f64 {
    (u + 1.0) / 2.0
}

/// Deterministic policy action for one observation.
pub fn act(actor: &Mlp, observation: &Observation) -> Result<Action, NeuralError> {
    let u = actor.forward_one(&observation.0)?;
    Ok(Action::from_actor_output(&u))
}

/// Nearest uncompleted object, ties to the lower index.
pub fn scripted_nearest(world: &WorldState, i: usize) -> Option<usize> {
    let origin = world.robots[i].position;
    world
        .objects
        .iter()
        .enumerate()
        .filter(|(_, o)| !o.completed)
        .map(|(l, o)| (o.position.distance(origin), l))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, l)| l)
}

/// Shared target for the whole team, redrawn uniformly among the remaining
/// objects whenever the current one is finished.
#[derive(Debug, Clone, Default)]
pub struct OneSelector {
    current: Option<usize>,
}

impl OneSelector {
    pub fn current(&self) -> Option<usize> {
        self.current
    }

    pub fn pick(&mut self, completed: &[bool], rng: &mut impl Rng) -> Option<usize> {
        if self.current.is_none_or(|l| completed[l]) {
            self.current = scripted_one(rng, completed);
        }
        self.current
    }
}

/// Uniform draw among uncompleted objects.
pub fn scripted_one(rng: &mut impl Rng, completed: &[bool]) -> Option<usize> {
    let open: Vec<usize> = (0..completed.len()).filter(|&l| !completed[l]).collect();
    if open.is_empty() {
        None
    } else {
        Some(open[rng.random_range(0..open.len())])
    }
}

/// Nearest object, unless robot `i` has been stuck longer than
/// `stuck_threshold`; then it joins the object of the longest-stuck robot
/// (ties to the lower robot index).
pub fn scripted_nearest_one(
    world: &WorldState,
    i: usize,
    stuck_durations: &[f64],
    stuck_threshold: f64,
) -> Option<usize> {
    if stuck_durations[i] > stuck_threshold {
        let leader = stuck_durations
            .iter()
            .enumerate()
            .fold(0, |best, (j, &d)| if d > stuck_durations[best] { j } else { best });
        if let Some(l) = world.robots[leader].selected_object {
            if !world.objects[l].completed {
                return Some(l);
            }
        }
    }
    scripted_nearest(world, i)
}
