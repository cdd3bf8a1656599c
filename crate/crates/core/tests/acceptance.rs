//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero when any fails.

mod common;

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rulesim::adapt::{rule_learning_curve, run_matrix, run_spec, Phase};
use rulesim::env::{DoorState, EnvConfig, Facing, KeyPlace, Pos};
use rulesim::metrics::{adaptive_efficiency, median, moving_average, update_efficiency, EpisodePhase, EpisodeRecord};
use rulesim::policy::{PolicyConfig, Provenance};
use rulesim::{
    build_env, Action, AgentConfig, AgentKind, Detector, EnvName, FeatureSchema, FeatureSpec, InjectAt, NoveltyKind,
    NoveltySpec, RuleModel, RunSpec, Runner, SymbolicState, TabularQPolicy, Transition, UpdateBuffer, UpdateOutcome,
};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn trained_model(env: &rulesim::GridEnv) -> RuleModel {
    let samples = env.reachable_transitions();
    let mut model = RuleModel::new(env.schema().clone());
    loop {
        let mut changed = false;
        for t in &samples {
            let out = model.update(&t.prev, t.action, &t.next, t.reward, t.terminal).unwrap();
            changed |= !matches!(out, UpdateOutcome::NoChange { .. });
        }
        if !changed {
            return model;
        }
    }
}

fn c1_empty_grid_curve() -> Outcome {
    let t0 = Instant::now();
    let env = build_env(EnvName::Empty, NoveltySpec::NONE, 0).unwrap();
    let curve = rule_learning_curve(&env, 20_000, 100, 1000, 0).unwrap();
    let elapsed = t0.elapsed();
    let below_1pct = curve.iter().find(|(_, e)| *e < 0.01).map(|(s, _)| *s);
    let zero = curve.iter().find(|(_, e)| *e == 0.0).map(|(s, _)| *s);
    check(
        below_1pct.is_some_and(|s| s <= 5000) && zero.is_some_and(|s| s <= 20_000) && elapsed < Duration::from_secs(10),
        format!("<1% error at step {below_1pct:?}, 0% at step {zero:?}, {elapsed:.2?}"),
    )
}

fn c2_doorkey_oracle() -> Outcome {
    let t0 = Instant::now();
    let env = build_env(EnvName::DoorKey, NoveltySpec::NONE, 0).unwrap();
    let model = trained_model(&env);
    let samples = env.reachable_transitions();
    let wrong = samples
        .iter()
        .filter(|t| {
            !model
                .predict(&t.prev, t.action)
                .unwrap()
                .agrees_with(&t.next, t.reward, t.terminal)
        })
        .count();
    let elapsed = t0.elapsed();
    check(
        wrong == 0 && elapsed < Duration::from_secs(60),
        format!(
            "{wrong} mismatches over {} reachable (s, a) pairs, {} rules, {elapsed:.2?}",
            samples.len(),
            model.len()
        ),
    )
}

fn c3_collision_freedom() -> Outcome {
    let mut violations = 0;
    let mut unsound = 0;
    let mut updates = 0;
    for seq in 0..10_000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seq);
        let schema = Arc::new(common::random_schema(&mut rng));
        let mut model = RuleModel::new(schema.clone());
        for _ in 0..rng.gen_range(1..=30) {
            let s = common::random_state(&schema, &mut rng);
            let a = common::random_action(&mut rng);
            let n = common::random_state(&schema, &mut rng);
            let r = common::random_reward(&mut rng);
            let d = rng.gen_bool(0.2);
            model.update(&s, a, &n, r, d).unwrap();
            updates += 1;
            violations += model.check_invariants().is_err() as usize;
            unsound += !model.predict(&s, a).unwrap().agrees_with(&n, r, d) as usize;
        }
    }
    check(
        violations == 0 && unsound == 0,
        format!("10000 sequences, {updates} updates, {violations} invariant failures, {unsound} unsound predictions"),
    )
}

fn c4_detection() -> Outcome {
    // Model trained on the unchanged dynamics, then the lock switches color.
    let novelty = NoveltySpec::new(NoveltyKind::DoorKeyChange, InjectAt::Steps(0));
    let mut env = build_env(EnvName::DoorKey, novelty, 0).unwrap();
    let model = trained_model(&env);
    env.inject_novelty().unwrap();
    let schema = env.schema().clone();
    let at_door = EnvConfig {
        agent: Pos::new(3, 3),
        facing: Facing::East,
        keys: vec![KeyPlace::Held, KeyPlace::Floor(Pos::new(4, 2))],
        door: DoorState::Locked,
    };
    let mut det = Detector::new(2);
    let mut fired_at = None;
    for attempt in 1..=3u64 {
        env.restore(at_door.clone()).unwrap();
        let s = env.observe();
        let out = env.step(Action::Toggle).unwrap();
        let p = model.predict(&s, Action::Toggle).unwrap();
        if det
            .observe(
                attempt,
                schema.state_key(&s),
                &p,
                &out.state,
                out.reward,
                out.terminated,
            )
            .is_some()
        {
            fired_at.get_or_insert(attempt);
        }
    }

    // Soak on the unchanged environment with the same model, random actions.
    let mut soak_env = build_env(EnvName::DoorKey, NoveltySpec::NONE, 1).unwrap();
    let mut soak = Detector::new(2);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut s = soak_env.observe();
    let mut false_random = 0;
    for step in 0..10_000 {
        let a = common::random_action(&mut rng);
        let out = soak_env.step(a).unwrap();
        let p = model.predict(&s, a).unwrap();
        false_random += soak
            .observe(step, schema.state_key(&s), &p, &out.state, out.reward, out.terminated)
            .is_some() as usize;
        s = if out.done() { soak_env.reset() } else { out.state };
    }

    // Same soak through the full pipeline: converge, freeze, run 10,000 steps.
    let runner_events = {
        let mut r = Runner::for_env(
            AgentKind::Imagining,
            EnvName::DoorKey,
            NoveltySpec::NONE,
            AgentConfig::default(),
            0,
        )
        .unwrap();
        r.run_pre_novelty().unwrap();
        let start = r.real_steps();
        r.run_post_novelty().unwrap();
        assert_eq!(r.phase(), Phase::Monitor);
        (r.detections().len(), r.real_steps() - start)
    };
    check(
        fired_at == Some(2) && false_random == 0 && runner_events.0 == 0,
        format!(
            "fired on attempt {fired_at:?}; false positives: {false_random} in 10000 random steps, {} in {} frozen-agent steps",
            runner_events.0, runner_events.1
        ),
    )
}

fn doorkey_specs(agent: AgentKind, seeds: u64) -> Vec<RunSpec> {
    (0..seeds)
        .map(|seed| RunSpec {
            env: EnvName::DoorKey,
            novelty: NoveltySpec::new(NoveltyKind::DoorKeyChange, InjectAt::Steps(0)),
            agent,
            seed,
            config: AgentConfig::default(),
            events: None,
        })
        .collect()
}

fn inf_median(xs: impl Iterator<Item = Option<u64>>) -> f64 {
    let v: Vec<f64> = xs.map(|x| x.map_or(f64::INFINITY, |x| x as f64)).collect();
    median(&v).unwrap()
}

fn c5_directional() -> Outcome {
    let t0 = Instant::now();
    let seeds = 10;
    let mut specs = doorkey_specs(AgentKind::Imagining, seeds);
    specs.extend(doorkey_specs(AgentKind::Baseline, seeds));
    let results = run_matrix(&specs);
    let elapsed = t0.elapsed();
    let mut med = Vec::new();
    for agent in [AgentKind::Imagining, AgentKind::Baseline] {
        let reports: Vec<_> = specs
            .iter()
            .zip(&results)
            .filter(|(s, _)| s.agent == agent)
            .map(|(_, r)| r.as_ref().expect("run completes").report.clone())
            .collect();
        med.push((
            inf_median(reports.iter().map(|r| r.adaptive_efficiency_steps)),
            inf_median(reports.iter().map(|r| r.update_efficiency_updates)),
        ));
    }
    let (wc, base) = (med[0], med[1]);
    check(
        wc.0 < base.0 && wc.1 < base.1 && elapsed < Duration::from_secs(15 * 60),
        format!(
            "{seeds} seeds, median steps {} vs {}, median updates {} vs {}, {elapsed:.2?}",
            wc.0, base.0, wc.1, base.1
        ),
    )
}

fn c6_all_scenarios() -> Outcome {
    let scenarios = [
        (EnvName::DoorKey, NoveltyKind::DoorKeyChange),
        (EnvName::LavaShortcutMaze, NoveltyKind::LavaProof),
        (EnvName::LavaShortcutMaze, NoveltyKind::LavaHurts),
    ];
    let seeds = 5;
    let specs: Vec<RunSpec> = scenarios
        .iter()
        .flat_map(|&(env, kind)| {
            (0..seeds).map(move |seed| RunSpec {
                env,
                novelty: NoveltySpec::new(kind, InjectAt::Steps(0)),
                agent: AgentKind::Imagining,
                seed,
                config: AgentConfig::default(),
                events: None,
            })
        })
        .collect();
    let results = run_matrix(&specs);
    let mut detail = Vec::new();
    let mut ok = true;
    for (i, &(_, kind)) in scenarios.iter().enumerate() {
        let chunk = &results[i * seeds as usize..(i + 1) * seeds as usize];
        let mut failed = 0;
        let mut errors = 0;
        let mut advantage = Vec::new();
        for r in chunk {
            match r {
                Ok(r) => {
                    failed += r.report.failed_to_adapt as usize;
                    advantage.extend(r.report.advantage_over_random);
                }
                Err(_) => errors += 1,
            }
        }
        ok &= failed == 0 && errors == 0;
        detail.push(format!(
            "{}: {failed} failed, {errors} errors, min advantage {:.3}",
            kind.cli_name(),
            advantage.iter().copied().fold(f64::INFINITY, f64::min)
        ));
    }
    check(ok, format!("{seeds} seeds each; {}", detail.join("; ")))
}

fn c7_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for run in 0..2 {
        let path = dir.path().join(format!("run{run}.csv"));
        let spec = RunSpec {
            events: Some(path.clone()),
            ..doorkey_specs(AgentKind::Imagining, 1).remove(0)
        };
        let result = run_spec(&spec).unwrap();
        outputs.push((fs::read(&path).unwrap(), serde_json::to_string(&result).unwrap()));
    }
    let csv_same = outputs[0].0 == outputs[1].0;
    let report_same = outputs[0].1 == outputs[1].1;
    check(
        csv_same && report_same && !outputs[0].0.is_empty(),
        format!(
            "event log {} bytes identical: {csv_same}; run report identical: {report_same}",
            outputs[0].0.len()
        ),
    )
}

fn post(returns: &[f64], lengths: &[u64], per_ep: u64) -> Vec<EpisodeRecord> {
    let (mut step, mut updates) = (0, 0);
    returns
        .iter()
        .enumerate()
        .map(|(i, r)| {
            step += lengths[i % lengths.len()];
            updates += per_ep;
            EpisodeRecord {
                index: i as u64,
                end_step: step,
                ret: *r,
                length: lengths[i % lengths.len()] as u32,
                phase: EpisodePhase::Post,
                updates,
            }
        })
        .collect()
}

fn c8_metric_goldens() -> Outcome {
    let mut failures = Vec::new();
    let mut series = vec![0.0; 9];
    series.extend([1.0; 3]);
    if moving_average(&series, 10).unwrap() != vec![0.1, 0.2, 0.3] {
        failures.push("moving_average step");
    }
    if moving_average(&[1.0; 12], 10).unwrap() != vec![1.0; 3] {
        failures.push("moving_average constant");
    }
    let ramp: Vec<f64> = (0..100).map(|i| i as f64 / 99.0).collect();
    let e = adaptive_efficiency(&post(&ramp, &[10], 0), 1.0, 0, 10, 0.95).unwrap();
    if e.map(|e| (e.episode, e.steps)) != Some((99, 1000)) {
        failures.push("ramp efficiency");
    }
    let mut jump = vec![0.0; 30];
    jump.extend([1.0; 40]);
    let trace = post(&jump, &[20, 30], 8);
    let e = adaptive_efficiency(&trace, 1.0, 0, 10, 0.95).unwrap();
    if e.map(|e| (e.episode, e.steps)) != Some((39, 1000)) {
        failures.push("step response efficiency");
    }
    if update_efficiency(&trace, 39, 0) != 320 || update_efficiency(&post(&[1.0; 20], &[5], 0), 9, 0) != 0 {
        failures.push("update efficiency");
    }
    check(
        failures.is_empty(),
        if failures.is_empty() {
            "moving average, ramp, step response and update-count goldens match exactly".into()
        } else {
            format!("mismatched: {}", failures.join(", "))
        },
    )
}

/// Three states in a line; state 2 is terminal. Forward moves right and pays
/// 1 on reaching the end, TurnLeft moves left, Pickup pays 0.1 and stays,
/// everything else stays for free.
fn chain_step(s: i32, a: Action) -> (i32, f64, bool) {
    match a {
        Action::Forward => (s + 1, if s + 1 == 2 { 1.0 } else { 0.0 }, s + 1 == 2),
        Action::TurnLeft => ((s - 1).max(0), 0.0, false),
        Action::Pickup => (s, 0.1, false),
        _ => (s, 0.0, false),
    }
}

fn c9_chain_oracle() -> Outcome {
    let gamma = 0.99;
    // Value iteration.
    let mut q_star = [[0.0f64; Action::COUNT]; 2];
    loop {
        let mut next = q_star;
        for s in 0..2 {
            for a in Action::ALL {
                let (n, r, d) = chain_step(s as i32, a);
                let v = if d {
                    0.0
                } else {
                    q_star[n as usize].iter().copied().fold(f64::MIN, f64::max)
                };
                next[s][a.index()] = r + gamma * v;
            }
        }
        let delta = (0..2)
            .flat_map(|s| (0..Action::COUNT).map(move |a| (s, a)))
            .map(|(s, a)| (next[s][a] - q_star[s][a]).abs())
            .fold(0.0, f64::max);
        q_star = next;
        if delta < 1e-14 {
            break;
        }
    }

    let schema = Arc::new(FeatureSchema::new(vec![FeatureSpec::integer("Pos", &[0], &[2])]).unwrap());
    let cfg = PolicyConfig {
        gamma,
        ..PolicyConfig::default()
    };
    let mut policy = TabularQPolicy::new(schema, &cfg, 0).unwrap();
    let mut buffer = UpdateBuffer::new(12).unwrap();
    for s in 0..2 {
        for a in Action::ALL {
            let (n, r, d) = chain_step(s, a);
            buffer.push(Transition {
                state: SymbolicState::from_slots(vec![s]),
                action: a,
                next_state: SymbolicState::from_slots(vec![n]),
                reward: r,
                terminal: d,
                provenance: Provenance::Real,
            });
        }
    }
    for _ in 0..60_000 {
        policy.update_from_buffer(&buffer, 12).unwrap();
    }
    let mut worst: f64 = 0.0;
    for s in 0..2 {
        let q = policy.q_values(&SymbolicState::from_slots(vec![s]));
        for a in 0..Action::COUNT {
            worst = worst.max((q[a] - q_star[s as usize][a]).abs());
        }
    }
    check(
        worst < 1e-6,
        format!("max |Q - Q*| = {worst:.3e} after {} updates", policy.updates_count()),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("rule learner converges on the empty grid", c1_empty_grid_curve),
        ("exhaustive DoorKey oracle equivalence", c2_doorkey_oracle),
        ("collision freedom under fuzzing", c3_collision_freedom),
        (
            "detection on the second failed unlock, no false positives",
            c4_detection,
        ),
        (
            "imagining agent adapts faster than the baseline on DoorKeyChange",
            c5_directional,
        ),
        ("all three scenarios adapt above the random baseline", c6_all_scenarios),
        ("identical seed and config give identical outputs", c7_determinism),
        ("metric goldens", c8_metric_goldens),
        ("tabular Q matches value iteration on a chain", c9_chain_oracle),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut all_ok = true;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            Err(format!(
                "panicked: {:?}",
                e.downcast_ref::<String>()
                    .map(String::as_str)
                    .or(e.downcast_ref::<&str>().copied())
            ))
        });
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        all_ok &= outcome.is_ok();
        println!("criterion {}: {tag} - {name} ({detail}) [{:.1?}]", i + 1, t0.elapsed());
    }
    if all_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
