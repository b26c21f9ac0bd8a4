//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mrta_core::config::{heavy_mix, WorldConfig, LIGHT_MASS};
use mrta_core::episode::Episode;
use mrta_core::eval::{run_eval, write_trials, EvalSpec, MetricsSummary, SweepGrid, DEFAULT_EVAL_SEED};
use mrta_core::maddpg::{run_policy_episode, run_training, ActorSet, TrainSettings};
use mrta_core::neural::{Head, Mlp};
use mrta_core::policy::{act, Action, Method, Variant};
use mrta_core::priority::{trigger_signals, CommSignals, PriorityTable};

const TRIALS: usize = 100;
const PRIORITY_TOL: f64 = 1e-12;
const TRACKING_TOL: f64 = 0.01;
const TRACKING_HORIZON_S: f64 = 25.0;
const GRAD_STEP: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
const RETURN_TOL: f64 = 1e-9;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

fn jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

type Table = BTreeMap<(Method, usize, usize, u64), MetricsSummary>;

fn key(method: Method, n: usize, m: usize, p: f64) -> (Method, usize, usize, u64) {
    (method, n, m, p.to_bits())
}

fn evaluate(methods: &[Method], grid: &SweepGrid) -> Table {
    let base = WorldConfig::default();
    let mut out = Table::new();
    for &method in methods {
        for spec in grid.cells() {
            let (s, _) = run_eval(method, None, &base, spec, jobs()).expect("scripted evaluation");
            out.insert(key(method, spec.n_robots, spec.n_objects, spec.heavy_proportion), s);
        }
    }
    out
}

fn fmt_tt(s: &MetricsSummary) -> String {
    s.tt_mean.map_or("NA".into(), |t| format!("{t:.1}"))
}

fn criterion_1(table: &Table) -> Verdict {
    let mut worst = (f64::INFINITY, String::new());
    for method in [Method::One, Method::NearestOne] {
        for n in [3, 6] {
            for m in [4, 6, 8, 10] {
                let s = &table[&key(method, n, m, 0.5)];
                if s.sr < worst.0 {
                    worst = (s.sr, format!("{method} ({n},{m})"));
                }
            }
        }
    }
    verdict(worst.0 >= 0.95, format!("lowest SR {:.2} at {}", worst.0, worst.1))
}

fn criterion_2(table: &Table) -> Verdict {
    let srs: Vec<f64> = [4, 6, 8, 10]
        .iter()
        .map(|&m| table[&key(Method::Nearest, 3, m, 0.5)].sr)
        .collect();
    let decreasing = srs.windows(2).all(|w| w[1] < w[0]);
    let drop = srs[0] - srs[3] > 0.3;
    verdict(decreasing && drop, format!("Nearest SR at N=3, M=4..10: {srs:?}"))
}

fn criterion_3(table: &Table) -> Verdict {
    let mut ok = true;
    let mut cells = Vec::new();
    for n in [3, 6] {
        for m in [4, 6, 8, 10] {
            let one = &table[&key(Method::One, n, m, 0.5)];
            let no = &table[&key(Method::NearestOne, n, m, 0.5)];
            if let (Some(a), Some(b)) = (one.tt_mean, no.tt_mean) {
                ok &= a > b;
                cells.push(format!("({n},{m}) {a:.1}/{b:.1}"));
            }
        }
    }
    let one = table[&key(Method::One, 6, 10, 0.5)].tt_mean;
    let no = table[&key(Method::NearestOne, 6, 10, 0.5)].tt_mean;
    let margin = match (one, no) {
        (Some(a), Some(b)) => a >= 1.1 * b,
        _ => false,
    };
    verdict(ok && margin, format!("TT One/Nearest-one {}", cells.join(", ")))
}

fn criterion_4(table: &Table) -> Verdict {
    let ps = [0.0, 0.25, 0.5, 0.75, 1.0];
    let rows: Vec<&MetricsSummary> = ps.iter().map(|&p| &table[&key(Method::NearestOne, 6, 10, p)]).collect();
    let mut ok = true;
    for w in rows.windows(2) {
        match (w[0].tt_mean, w[1].tt_mean, w[0].tt_standard_error(), w[1].tt_standard_error()) {
            (Some(a), Some(b), Some(sa), Some(sb)) => {
                // Standard error of the difference of the two means.
                ok &= b >= a - (sa * sa + sb * sb).sqrt();
            }
            _ => ok = false,
        }
    }
    let tts: Vec<String> = rows.iter().map(|s| fmt_tt(s)).collect();
    verdict(ok, format!("Nearest-one TT at (6,10), P=0..1: [{}]", tts.join(", ")))
}

/// Per-entry scalar recurrence written without the table abstraction.
#[allow(clippy::too_many_arguments)]
fn oracle_step(
    phi: &[Vec<f64>],
    refs: &[Vec<f64>],
    sets: &[Vec<usize>],
    send: &[bool],
    receive: &[bool],
    completed: &[bool],
    gain: f64,
    h: f64,
) -> Vec<Vec<f64>> {
    let n = phi.len();
    let m = phi[0].len();
    let mut next = phi.to_vec();
    for i in 0..n {
        for l in 0..m {
            if completed[l] {
                next[i][l] = 0.0;
                continue;
            }
            let mut rate = 0.0;
            if let Some(k) = sets[i].iter().position(|&o| o == l) {
                rate += gain * (refs[i][k] - phi[i][l]);
            }
            if receive[i] {
                for j in 0..n {
                    if j != i && send[j] {
                        rate += gain * (phi[j][l] - phi[i][l]);
                    }
                }
            }
            next[i][l] = (phi[i][l] + h * rate).clamp(0.0, 1.0);
        }
    }
    next
}

fn criterion_5() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=6);
        let m = rng.random_range(1..=10);
        let k = rng.random_range(1..=m.min(4));
        let substeps = rng.random_range(1..=10);
        let dt = 1.0;
        let gain = 0.2;
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| rng.random()).collect()).collect();
        let sets: Vec<Vec<usize>> = (0..n)
            .map(|_| rand::seq::index::sample(&mut rng, m, k).into_vec())
            .collect();
        let refs: Vec<Vec<f64>> = (0..n).map(|_| (0..k).map(|_| rng.random()).collect()).collect();
        let send: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let receive: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let completed: Vec<bool> = (0..m).map(|_| rng.random_bool(0.2)).collect();

        let mut table = PriorityTable::from_rows(&rows, gain).unwrap();
        let signals = CommSignals {
            send: send.clone(),
            receive: receive.clone(),
        };
        table.update(&refs, &signals, &sets, &completed, dt, substeps).unwrap();

        let mut expect = rows.clone();
        for _ in 0..substeps {
            expect = oracle_step(&expect, &refs, &sets, &send, &receive, &completed, gain, dt / substeps as f64);
        }
        for i in 0..n {
            for l in 0..m {
                worst = worst.max((table.get(i, l) - expect[i][l]).abs());
            }
        }
    }

    let mut tracking_ok = true;
    let steps = TRACKING_HORIZON_S as usize;
    for (start, target) in [(0.0, 1.0), (1.0, 0.0), (0.3, 0.8), (0.9, 0.2)] {
        let mut table = PriorityTable::from_rows(&[vec![start]], 0.2).unwrap();
        for _ in 0..steps {
            table
                .update(&[vec![target]], &CommSignals::silent(1), &[vec![0]], &[false], 1.0, 10)
                .unwrap();
        }
        tracking_ok &= (table.get(0, 0) - target).abs() < TRACKING_TOL;
    }
    verdict(
        worst <= PRIORITY_TOL && tracking_ok,
        format!("max oracle deviation {worst:.1e} over 1000 cases, tracking within 0.01 by 25 s: {tracking_ok}"),
    )
}

fn criterion_6() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut violations = 0;
    for _ in 0..1000 {
        let n = rng.random_range(2..=6);
        let m = rng.random_range(1..=10);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| rng.random()).collect()).collect();
        let mut table = PriorityTable::from_rows(&rows, 0.2).unwrap();
        let signals = CommSignals {
            send: vec![true; n],
            receive: vec![true; n],
        };
        let empty_refs = vec![Vec::new(); n];
        let empty_sets = vec![Vec::new(); n];
        let completed = vec![false; m];
        let spread = |t: &PriorityTable| -> Vec<f64> {
            (0..m)
                .map(|l| {
                    let col: Vec<f64> = (0..n).map(|i| t.get(i, l)).collect();
                    col.iter().cloned().fold(f64::MIN, f64::max) - col.iter().cloned().fold(f64::MAX, f64::min)
                })
                .collect()
        };
        let mut prev = spread(&table);
        for _ in 0..50 {
            table.update(&empty_refs, &signals, &empty_sets, &completed, 0.1, 1).unwrap();
            let now = spread(&table);
            violations += now.iter().zip(&prev).filter(|(a, b)| **a > **b + 1e-15).count();
            prev = now;
        }
    }

    let mut worst_sum: f64 = 0.0;
    for _ in 0..1000 {
        let a: f64 = rng.random();
        let b: f64 = rng.random();
        let mut table = PriorityTable::from_rows(&[vec![a], vec![b]], 0.2).unwrap();
        let signals = CommSignals {
            send: vec![true; 2],
            receive: vec![true; 2],
        };
        for _ in 0..20 {
            table
                .update(&[vec![], vec![]], &signals, &[vec![], vec![]], &[false], 1.0, 10)
                .unwrap();
            worst_sum = worst_sum.max((table.get(0, 0) + table.get(1, 0) - (a + b)).abs());
        }
    }
    verdict(
        violations == 0 && worst_sum <= 1e-12,
        format!("spread increases: {violations}, worst pair-sum drift {worst_sum:.1e}"),
    )
}

fn criterion_7() -> Verdict {
    let carry = WorldConfig::default().carry_speed;
    let mut table_ok = true;
    for alpha in [0.49, 0.5, 0.51] {
        for beta in [0.49, 0.5, 0.51] {
            for speed in [0.0, carry] {
                let expected = (alpha > 0.5 && speed == 0.0, beta > 0.5 && speed == 0.0);
                table_ok &= trigger_signals(alpha, beta, speed) == expected;
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut moving_steps = 0;
    let mut leaks = 0;
    let mut total_messages = 0;
    for seed in 0..20 {
        let mut ep = Episode::new(&WorldConfig::default(), seed).unwrap();
        let n = ep.world.n_robots();
        while !ep.is_done() {
            let all_moving = (0..n).all(|i| ep.world.selected_object_speed(i) > 0.0);
            let actions: Vec<Action> = (0..n)
                .map(|_| Action::from_unit(&(0..4).map(|_| rng.random::<f64>()).collect::<Vec<_>>()))
                .collect();
            let report = ep.step_learned(Variant::Ours, &actions).unwrap();
            total_messages += report.exchanges.len();
            if all_moving {
                moving_steps += 1;
                leaks += report.exchanges.len();
            }
        }
    }
    verdict(
        table_ok && leaks == 0 && total_messages > 0,
        format!(
            "truth table 18/18: {table_ok}, messages on {moving_steps} all-moving steps: {leaks}, total messages {total_messages}"
        ),
    )
}

fn max_relative_gradient_error(net: &Mlp, rng: &mut ChaCha8Rng) -> f64 {
    let batch = 3;
    let input = Array2::from_shape_fn((batch, net.input_dim()), |_| rng.random_range(-1.0..1.0));
    let weights = Array2::from_shape_fn((batch, net.output_dim()), |_| rng.random_range(-1.0..1.0));
    let loss = |n: &Mlp| -> f64 { (&n.forward(input.view()).unwrap().0 * &weights).sum() };
    let (_, cache) = net.forward(input.view()).unwrap();
    let (grads, _) = net.backward(&cache, weights.view()).unwrap();
    let analytic = grads.flat();
    let base = net.flat_params();
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for idx in 0..base.len() {
        let mut p = base.clone();
        p[idx] = base[idx] + GRAD_STEP;
        probe.set_flat_params(&p).unwrap();
        let up = loss(&probe);
        p[idx] = base[idx] - GRAD_STEP;
        probe.set_flat_params(&p).unwrap();
        let down = loss(&probe);
        let numeric = (up - down) / (2.0 * GRAD_STEP);
        let scale = analytic[idx].abs().max(numeric.abs());
        // Both effectively zero: no meaningful relative error.
        if scale < 1e-7 {
            continue;
        }
        worst = worst.max((analytic[idx] - numeric).abs() / scale);
    }
    worst
}

fn criterion_8() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let settings = TrainSettings::default();
    let mut worst: f64 = 0.0;
    for k in 0..10 {
        let net = if k % 2 == 0 {
            Mlp::random(&settings.actor_sizes(2), Head::Tanh, &mut rng)
        } else {
            Mlp::random(&settings.critic_sizes(2, 3), Head::Identity, &mut rng)
        };
        worst = worst.max(max_relative_gradient_error(&net, &mut rng));
    }
    verdict(worst < GRAD_TOL, format!("max relative error {worst:.2e} over 10 networks"))
}

/// With λ = 300 the return is mostly carried distance, which any policy that
/// eventually finishes collects in full. A 20-step cap makes time lost to
/// re-selection show up in the return.
fn smoke_world() -> WorldConfig {
    WorldConfig {
        n_robots: 1,
        n_objects: 2,
        k_neighbors: 2,
        mass_choices: heavy_mix(0.0),
        max_steps: 20,
        ..WorldConfig::default()
    }
}

/// γ = 0.99 drifts downward over 1000 episodes at this scale; 0.95 learns
/// reliably across seeds.
fn smoke_settings() -> TrainSettings {
    TrainSettings {
        episodes: 1000,
        batch_size: 128,
        gamma: 0.95,
        warmup_batches: 10,
        replay_capacity: 100_000,
        checkpoint_every: 0,
        reward_scale: 1e-2,
        seed: 11,
        ..TrainSettings::default()
    }
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn criterion_9() -> Verdict {
    let world = smoke_world();
    assert!(world.mass_choices.iter().all(|c| c.mass == LIGHT_MASS));
    let settings = smoke_settings();
    let outcome = run_training(&world, &settings, |_, _| Ok(())).unwrap();
    let actors = outcome.learner.actors();
    let seeds: Vec<u64> = (0..20).map(|k| DEFAULT_EVAL_SEED + k).collect();
    let learned: Vec<f64> = seeds
        .iter()
        .map(|&s| {
            run_policy_episode(&world, s, settings.variant, |i, o| Ok(act(&actors[i], o)?))
                .unwrap()
                .total_return()
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let random: Vec<f64> = seeds
        .iter()
        .map(|&s| {
            run_policy_episode(&world, s, settings.variant, |_, _| {
                Ok(Action::from_unit(&(0..4).map(|_| rng.random::<f64>()).collect::<Vec<_>>()))
            })
            .unwrap()
            .total_return()
        })
        .collect();
    let (lm, _) = mean_and_se(&learned);
    let (rm, rse) = mean_and_se(&random);
    verdict(
        lm > rm + rse,
        format!(
            "{} episodes: learned mean {lm:.1}, random mean {rm:.1} + SE {rse:.1}",
            settings.episodes
        ),
    )
}

fn trial_csv(method: Method, actors: Option<&ActorSet>, spec: EvalSpec) -> Vec<u8> {
    let base = WorldConfig::default();
    let (_, trials) = run_eval(method, actors, &base, spec, 1).unwrap();
    let cfg = base.for_evaluation(spec.n_robots, spec.n_objects, spec.heavy_proportion);
    let mut buf = Vec::new();
    write_trials(&mut buf, method, &cfg, spec.heavy_proportion, &trials).unwrap();
    buf
}

fn criterion_10() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let settings = TrainSettings::default();
    let spec = EvalSpec {
        n_robots: 3,
        n_objects: 6,
        heavy_proportion: 0.5,
        n_trials: 5,
        seed0: DEFAULT_EVAL_SEED,
    };
    let mut identical = 0;
    for method in Method::ALL {
        let actors = method.variant().map(|variant| ActorSet {
            variant,
            k_neighbors: 2,
            actors: (0..3)
                .map(|_| Mlp::random(&settings.actor_sizes(2), Head::Tanh, &mut rng))
                .collect(),
        });
        let a = trial_csv(method, actors.as_ref(), spec);
        let b = trial_csv(method, actors.as_ref(), spec);
        identical += usize::from(a == b && !a.is_empty());
    }

    let mut worst: f64 = 0.0;
    let actors: Vec<Mlp> = (0..3)
        .map(|_| Mlp::random(&settings.actor_sizes(2), Head::Tanh, &mut rng))
        .collect();
    for seed in 0..10 {
        let mut ep = Episode::new(&WorldConfig::default(), seed).unwrap();
        let mut summed = 0.0;
        while !ep.is_done() {
            let actions = ep
                .observations(Variant::Ours)
                .iter()
                .zip(&actors)
                .map(|(o, a)| act(a, o).unwrap())
                .collect::<Vec<_>>();
            summed += ep.step_learned(Variant::Ours, &actions).unwrap().outcome.reward;
        }
        worst = worst.max((ep.completion_return + ep.motion_return - summed).abs() / summed.abs().max(1.0));
    }
    let tiny = TrainSettings {
        episodes: 3,
        batch_size: 16,
        warmup_batches: 1,
        replay_capacity: 1000,
        hidden_units: 16,
        checkpoint_every: 0,
        ..TrainSettings::default()
    };
    let world = WorldConfig {
        max_steps: 20,
        ..WorldConfig::default()
    };
    let c1 = run_training(&world, &tiny, |_, _| Ok(())).unwrap().curve;
    let c2 = run_training(&world, &tiny, |_, _| Ok(())).unwrap().curve;
    verdict(
        identical == Method::ALL.len() && worst <= RETURN_TOL && c1 == c2,
        format!(
            "bit-identical trial CSVs {identical}/{}, R1+R2 relative drift {worst:.1e}, training curves equal: {}",
            Method::ALL.len(),
            c1 == c2
        ),
    )
}

fn criterion_11(table: &Table) -> Verdict {
    let mut parts = Vec::new();
    let mut reported = true;
    for method in Method::SCRIPTED {
        let s = &table[&key(method, 6, 10, 0.5)];
        reported &= s.t_a_mean.is_finite();
        parts.push(format!("{method} {:.1}", s.t_a_mean));
    }
    let nearest = table[&key(Method::Nearest, 6, 10, 0.5)].t_a_mean;
    verdict(reported && nearest > 0.0, format!("t_a at (6,10): {}", parts.join(", ")))
}

fn main() {
    let start = Instant::now();
    let mut grid = SweepGrid::scalability();
    grid.trials = TRIALS;
    let mut table = evaluate(&Method::SCRIPTED, &grid);
    let mut proportion = SweepGrid::proportion();
    proportion.trials = TRIALS;
    table.extend(evaluate(&[Method::NearestOne], &proportion));
    println!("scripted sweeps finished in {:.1} s", start.elapsed().as_secs_f64());

    let criteria: Vec<(&str, Box<dyn Fn() -> Verdict>)> = vec![
        ("1 baseline success rates", Box::new(|| criterion_1(&table))),
        ("2 nearest degradation", Box::new(|| criterion_2(&table))),
        ("3 transport-time ordering", Box::new(|| criterion_3(&table))),
        ("4 heavy-proportion monotonicity", Box::new(|| criterion_4(&table))),
        ("5 priority dynamics oracle", Box::new(criterion_5)),
        ("6 consensus properties", Box::new(criterion_6)),
        ("7 trigger-law conformance", Box::new(criterion_7)),
        ("8 gradient check", Box::new(criterion_8)),
        ("9 learning smoke test", Box::new(criterion_9)),
        ("10 determinism", Box::new(criterion_10)),
        ("11 t_a measurability", Box::new(|| criterion_11(&table))),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        let t = Instant::now();
        let v = check();
        let status = if v.passed { "PASS" } else { "FAIL" };
        println!(
            "criterion {name}: {status} ({}) [{:.1} s]",
            v.detail,
            t.elapsed().as_secs_f64()
        );
        failed += usize::from(!v.passed);
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
