//! Novelty detection from a frozen rule model's prediction failures.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::feature::{StateKey, SymbolicState};
use crate::rules::{Predicted, RuleId};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    /// One rule violated `n` consecutive times.
    RuleViolations,
    /// One state failed prediction on more than `n` consecutive visits.
    StateFailures,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub step: u64,
    pub trigger: Trigger,
    pub rule: Option<RuleId>,
    pub state_key: StateKey,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Detector {
    threshold: u32,
    rule_counts: HashMap<RuleId, u32>,
    state_counts: HashMap<StateKey, u32>,
    fired: bool,
}

impl Default for Detector {
    fn default() -> Self {
        Detector::new(2)
    }
}

impl Detector {
    pub fn new(threshold: u32) -> Self {
        Detector {
            threshold: threshold.max(1),
            rule_counts: HashMap::new(),
            state_counts: HashMap::new(),
            fired: false,
        }
    }

    pub fn threshold(&self) -> u32 {
        self.threshold
    }

    pub fn fired(&self) -> bool {
        self.fired
    }

    pub fn rule_count(&self, rule: RuleId) -> u32 {
        self.rule_counts.get(&rule).copied().unwrap_or(0)
    }

    pub fn state_count(&self, key: StateKey) -> u32 {
        self.state_counts.get(&key).copied().unwrap_or(0)
    }

    pub fn reset(&mut self) {
        self.rule_counts.clear();
        self.state_counts.clear();
        self.fired = false;
    }

    /// Feeds one real transition. `prev_key` identifies the state the action
    /// was taken in. Returns the detection event the first time a trigger
    /// condition holds; later calls return `None`.
    pub fn observe(
        &mut self,
        step: u64,
        prev_key: StateKey,
        predicted: &Predicted,
        next: &SymbolicState,
        reward: f64,
        terminal: bool,
    ) -> Option<DetectionEvent> {
        let correct = predicted.agrees_with(next, reward, terminal);
        let rule = predicted.known().map(|p| p.rule);
        if correct {
            if let Some(r) = rule {
                self.rule_counts.remove(&r);
            }
            self.state_counts.remove(&prev_key);
            return None;
        }
        let rule_hits = rule.map(|r| {
            let c = self.rule_counts.entry(r).or_insert(0);
            *c += 1;
            *c
        });
        let state_hits = {
            let c = self.state_counts.entry(prev_key).or_insert(0);
            *c += 1;
            *c
        };
        if self.fired {
            return None;
        }
        let trigger = if rule_hits.is_some_and(|c| c >= self.threshold) {
            Trigger::RuleViolations
        } else if state_hits > self.threshold {
            Trigger::StateFailures
        } else {
            return None;
        };
        self.fired = true;
        Some(DetectionEvent {
            step,
            trigger,
            rule,
            state_key: prev_key,
        })
    }
}
