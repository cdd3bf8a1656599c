#![allow(dead_code)]

use rand::Rng;
use rulesim::feature::Domain;
use rulesim::{Action, FeatureSchema, FeatureSpec, SymbolicState};

/// Small schema with one to three integer features and zero to three
/// categorical ones.
pub fn random_schema(rng: &mut impl Rng) -> FeatureSchema {
    let mut features = Vec::new();
    for i in 0..rng.gen_range(1..=3) {
        let axes = rng.gen_range(1..=2);
        let min: Vec<i32> = (0..axes).map(|_| rng.gen_range(-2..=2)).collect();
        let max: Vec<i32> = min.iter().map(|m| m + rng.gen_range(0..=4)).collect();
        features.push(FeatureSpec::integer(&format!("I{i}"), &min, &max));
    }
    for i in 0..rng.gen_range(0..=3) {
        let n = rng.gen_range(1..=4);
        let names: Vec<String> = (0..n).map(|k| format!("s{k}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        features.push(FeatureSpec::categorical(&format!("C{i}"), &refs));
    }
    FeatureSchema::new(features).unwrap()
}

/// Uniform state of `schema`, built from the raw domains.
pub fn random_state(schema: &FeatureSchema, rng: &mut impl Rng) -> SymbolicState {
    let mut ints = Vec::new();
    let mut cats = Vec::new();
    for f in schema.features() {
        match &f.domain {
            Domain::IntegerInterval { min, max } => {
                for (lo, hi) in min.iter().zip(max) {
                    ints.push(rng.gen_range(*lo..=*hi));
                }
            }
            Domain::Categorical(symbols) => cats.push(rng.gen_range(0..symbols.len()) as i32),
        }
    }
    ints.extend(cats);
    let s = SymbolicState::from_slots(ints);
    schema.validate(&s).unwrap();
    s
}

pub fn random_action(rng: &mut impl Rng) -> Action {
    Action::ALL[rng.gen_range(0..Action::COUNT)]
}

pub fn random_reward(rng: &mut impl Rng) -> f64 {
    [-1.0, 0.0, 1.0][rng.gen_range(0..3)]
}
