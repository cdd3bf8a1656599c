use std::sync::Arc;

use proptest::prelude::*;
use rulesim::policy::{argmax, Mode, PolicyConfig, Provenance};
use rulesim::{Action, FeatureSchema, FeatureSpec, SymbolicState, TabularQPolicy, Transition, UpdateBuffer};

fn line_schema(n: i32) -> Arc<FeatureSchema> {
    Arc::new(FeatureSchema::new(vec![FeatureSpec::integer("Pos", &[0], &[n - 1])]).unwrap())
}

fn s(x: i32) -> SymbolicState {
    SymbolicState::from_slots(vec![x])
}

fn tr(a: i32, action: Action, b: i32, reward: f64, terminal: bool, provenance: Provenance) -> Transition {
    Transition {
        state: s(a),
        action,
        next_state: s(b),
        reward,
        terminal,
        provenance,
    }
}

proptest! {
    #[test]
    fn argmax_ignores_positive_affine_maps(
        q in proptest::collection::vec(-100.0f64..100.0, Action::COUNT),
        scale in 0.01f64..100.0,
        shift in -100.0f64..100.0,
    ) {
        let mapped: Vec<f64> = q.iter().map(|v| v * scale + shift).collect();
        // Ties created by rounding would be legitimate, so only compare
        // when the maximum is clear.
        let mut sorted = q.clone();
        sorted.sort_by(f64::total_cmp);
        prop_assume!(sorted[Action::COUNT - 1] - sorted[Action::COUNT - 2] > 1e-6);
        prop_assert_eq!(argmax(&q), argmax(&mapped));
    }

    #[test]
    fn greedy_choice_is_invariant_under_affine_tables(
        q in proptest::collection::vec(-10.0f64..10.0, Action::COUNT),
        scale in 0.1f64..10.0,
        shift in -10.0f64..10.0,
    ) {
        let cfg = PolicyConfig::default();
        let mut a = TabularQPolicy::new(line_schema(2), &cfg, 0).unwrap();
        let mut b = TabularQPolicy::new(line_schema(2), &cfg, 0).unwrap();
        for (i, v) in q.iter().enumerate() {
            a.set_q(&s(0), Action::ALL[i], *v);
            b.set_q(&s(0), Action::ALL[i], v * scale + shift);
        }
        let mut sorted = q.clone();
        sorted.sort_by(f64::total_cmp);
        prop_assume!(sorted[Action::COUNT - 1] - sorted[Action::COUNT - 2] > 1e-6);
        prop_assert_eq!(a.select_action(&s(0), Mode::Exploit), b.select_action(&s(0), Mode::Exploit));
    }

    #[test]
    fn updates_count_equals_writes(batches in proptest::collection::vec(1usize..50, 1..20), fill in 1usize..40) {
        let mut p = TabularQPolicy::new(line_schema(3), &PolicyConfig::default(), 3).unwrap();
        let mut buf = UpdateBuffer::new(64).unwrap();
        for i in 0..fill {
            buf.push(tr((i % 2) as i32, Action::Forward, 1, 0.0, false, Provenance::Real));
        }
        let mut expected = 0;
        for b in batches {
            let n = p.update_from_buffer(&buf, b).unwrap();
            prop_assert_eq!(n, b.min(fill));
            expected += n as u64;
            prop_assert_eq!(p.updates_count(), expected);
        }
    }
}

#[test]
fn real_and_imagined_transitions_update_identically() {
    let cfg = PolicyConfig::default();
    let mut a = TabularQPolicy::new(line_schema(3), &cfg, 9).unwrap();
    let mut b = TabularQPolicy::new(line_schema(3), &cfg, 9).unwrap();
    let mut real = UpdateBuffer::new(8).unwrap();
    let mut imagined = UpdateBuffer::new(8).unwrap();
    for (x, r, d) in [(0, 0.5, false), (1, 1.0, true), (2, -1.0, false)] {
        real.push(tr(x, Action::Pickup, (x + 1) % 3, r, d, Provenance::Real));
        imagined.push(tr(x, Action::Pickup, (x + 1) % 3, r, d, Provenance::Imagined));
    }
    for _ in 0..50 {
        a.update_from_buffer(&real, 3).unwrap();
        b.update_from_buffer(&imagined, 3).unwrap();
    }
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
}

#[test]
fn full_exploration_is_uniform_within_three_sigma() {
    let cfg = PolicyConfig {
        epsilon_start: 1.0,
        epsilon_floor: 1.0,
        ..PolicyConfig::default()
    };
    let mut p = TabularQPolicy::new(line_schema(1), &cfg, 2024).unwrap();
    p.set_q(&s(0), Action::Toggle, 5.0);
    let n = 10_000;
    let mut counts = [0u32; Action::COUNT];
    for _ in 0..n {
        counts[p.select_action(&s(0), Mode::Explore).index()] += 1;
    }
    let prob = 1.0 / Action::COUNT as f64;
    let mean = n as f64 * prob;
    let sigma = (n as f64 * prob * (1.0 - prob)).sqrt();
    for c in counts {
        assert!((c as f64 - mean).abs() <= 3.0 * sigma, "{counts:?}");
    }
}

#[test]
fn freeze_round_trip_keeps_schedule_position() {
    let cfg = PolicyConfig {
        epsilon_warmup_steps: 10,
        epsilon_decay_steps: 100,
        ..PolicyConfig::default()
    };
    let mut p = TabularQPolicy::new(line_schema(1), &cfg, 0).unwrap();
    for _ in 0..40 {
        p.tick();
    }
    let (pos, eps) = (p.schedule().position(), p.epsilon());
    p.set_learning(false);
    assert_eq!(p.epsilon(), cfg.epsilon_floor);
    for _ in 0..500 {
        p.tick();
    }
    let buf = UpdateBuffer::new(4).unwrap();
    assert!(p.update_from_buffer(&buf, 1).is_err());
    p.set_learning(true);
    assert_eq!(p.schedule().position(), pos);
    assert_eq!(p.epsilon(), eps);
}
