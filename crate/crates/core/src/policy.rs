//! Tabular Q-learning with a replay buffer and a freeze lifecycle.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::action::Action;
use crate::error::{Error, Result};
use crate::feature::{FeatureSchema, StateKey, SymbolicState};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Real,
    Imagined,
}

impl Provenance {
    pub fn name(self) -> &'static str {
        match self {
            Provenance::Real => "real",
            Provenance::Imagined => "imagined",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: SymbolicState,
    pub action: Action,
    pub next_state: SymbolicState,
    pub reward: f64,
    pub terminal: bool,
    pub provenance: Provenance,
}

/// Bounded FIFO of transitions; the oldest entry is evicted first.
#[derive(Clone, Debug)]
pub struct UpdateBuffer {
    items: VecDeque<Transition>,
    capacity: usize,
    real: usize,
    imagined: usize,
}

impl UpdateBuffer {
    pub const DEFAULT_CAPACITY: usize = 4096;

    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("update buffer capacity must be positive".into()));
        }
        Ok(UpdateBuffer {
            items: VecDeque::with_capacity(capacity),
            capacity,
            real: 0,
            imagined: 0,
        })
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            let old = self.items.pop_front().expect("buffer is full");
            self.count(old.provenance, false);
        }
        self.count(t.provenance, true);
        self.items.push_back(t);
    }

    fn count(&mut self, p: Provenance, add: bool) {
        let c = match p {
            Provenance::Real => &mut self.real,
            Provenance::Imagined => &mut self.imagined,
        };
        if add {
            *c += 1;
        } else {
            *c -= 1;
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn count_of(&self, p: Provenance) -> usize {
        match p {
            Provenance::Real => self.real,
            Provenance::Imagined => self.imagined,
        }
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn clear(&mut self) {
        self.items.clear();
        self.real = 0;
        self.imagined = 0;
    }
}

/// Holds `start` for `warmup_steps` ticks, then decays linearly to `floor`
/// over `decay_steps` ticks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub floor: f64,
    pub warmup_steps: u64,
    pub decay_steps: u64,
    position: u64,
    pinned: bool,
}

impl EpsilonSchedule {
    pub fn new(start: f64, floor: f64, warmup_steps: u64, decay_steps: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&floor) || !(floor..=1.0).contains(&start) {
            return Err(Error::Config(format!("invalid epsilon range {start}..{floor}")));
        }
        Ok(EpsilonSchedule {
            start,
            floor,
            warmup_steps,
            decay_steps,
            position: 0,
            pinned: false,
        })
    }

    pub fn value(&self) -> f64 {
        if self.pinned {
            return self.floor;
        }
        let Some(decayed) = self.position.checked_sub(self.warmup_steps) else {
            return self.start;
        };
        if decayed >= self.decay_steps {
            return self.floor;
        }
        let frac = decayed as f64 / self.decay_steps as f64;
        self.start - (self.start - self.floor) * frac
    }

    pub fn position(&self) -> u64 {
        self.position
    }

    pub fn at_floor(&self) -> bool {
        self.value() <= self.floor
    }

    /// Advances one step; a pinned schedule does not move.
    pub fn tick(&mut self) {
        if !self.pinned {
            self.position = self.position.saturating_add(1);
        }
    }

    pub fn pinned(&self) -> bool {
        self.pinned
    }

    fn pin(&mut self, pinned: bool) {
        self.pinned = pinned;
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Mode {
    Explore,
    Exploit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_floor: f64,
    /// Ticks at `epsilon_start` before the decay begins.
    pub epsilon_warmup_steps: u64,
    pub epsilon_decay_steps: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            alpha: 0.1,
            gamma: 0.99,
            epsilon_start: 1.0,
            epsilon_floor: 0.05,
            epsilon_warmup_steps: 50_000,
            epsilon_decay_steps: 300_000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TabularQPolicy {
    schema: Arc<FeatureSchema>,
    table: HashMap<StateKey, [f64; Action::COUNT]>,
    alpha: f64,
    gamma: f64,
    schedule: EpsilonSchedule,
    learning: bool,
    updates_count: u64,
    rng: ChaCha8Rng,
}

impl TabularQPolicy {
    pub fn new(schema: Arc<FeatureSchema>, config: &PolicyConfig, seed: u64) -> Result<Self> {
        if !(config.alpha > 0.0 && config.alpha <= 1.0) {
            return Err(Error::Config(format!("alpha {} outside (0, 1]", config.alpha)));
        }
        if !(0.0..=1.0).contains(&config.gamma) {
            return Err(Error::Config(format!("gamma {} outside [0, 1]", config.gamma)));
        }
        Ok(TabularQPolicy {
            schema,
            table: HashMap::new(),
            alpha: config.alpha,
            gamma: config.gamma,
            schedule: EpsilonSchedule::new(
                config.epsilon_start,
                config.epsilon_floor,
                config.epsilon_warmup_steps,
                config.epsilon_decay_steps,
            )?,
            learning: true,
            updates_count: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn schema(&self) -> &Arc<FeatureSchema> {
        &self.schema
    }

    pub fn epsilon(&self) -> f64 {
        self.schedule.value()
    }

    pub fn schedule(&self) -> &EpsilonSchedule {
        &self.schedule
    }

    pub fn tick(&mut self) {
        self.schedule.tick();
    }

    pub fn learning_enabled(&self) -> bool {
        self.learning
    }

    /// Freezing pins exploration to the floor; unfreezing resumes the
    /// schedule where it stopped.
    pub fn set_learning(&mut self, enabled: bool) {
        self.learning = enabled;
        self.schedule.pin(!enabled);
    }

    pub fn updates_count(&self) -> u64 {
        self.updates_count
    }

    pub fn table_len(&self) -> usize {
        self.table.len()
    }

    pub fn q_values(&self, state: &SymbolicState) -> [f64; Action::COUNT] {
        self.q_by_key(self.schema.state_key(state))
    }

    pub fn q_by_key(&self, key: StateKey) -> [f64; Action::COUNT] {
        self.table.get(&key).copied().unwrap_or([0.0; Action::COUNT])
    }

    /// Overwrites one entry without counting an update (tests, fixtures).
    pub fn set_q(&mut self, state: &SymbolicState, action: Action, value: f64) {
        let key = self.schema.state_key(state);
        self.table.entry(key).or_insert([0.0; Action::COUNT])[action.index()] = value;
    }

    pub fn greedy(&self, state: &SymbolicState) -> Action {
        Action::ALL[argmax(&self.q_values(state))]
    }

    pub fn select_action(&mut self, state: &SymbolicState, mode: Mode) -> Action {
        match mode {
            Mode::Exploit => self.greedy(state),
            Mode::Explore => {
                let u: f64 = self.rng.gen();
                if u < self.schedule.value() {
                    Action::ALL[self.rng.gen_range(0..Action::COUNT)]
                } else {
                    self.greedy(state)
                }
            }
        }
    }

    /// Samples `batch_size` transitions without replacement (or the whole
    /// buffer when smaller) and applies one Q-learning write for each.
    /// Returns the number of writes.
    pub fn update_from_buffer(&mut self, buffer: &UpdateBuffer, batch_size: usize) -> Result<usize> {
        if !self.learning {
            return Err(Error::Contract("policy update while learning is disabled".into()));
        }
        let k = batch_size.min(buffer.len());
        if k == 0 {
            return Ok(0);
        }
        let picks = index::sample(&mut self.rng, buffer.len(), k);
        for i in picks.iter() {
            let t = buffer.get(i).expect("sampled index is in range");
            self.write(t);
        }
        Ok(k)
    }

    fn write(&mut self, t: &Transition) {
        let bootstrap = if t.terminal {
            0.0
        } else {
            let next = self.q_values(&t.next_state);
            next.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        };
        let target = t.reward + self.gamma * bootstrap;
        let key = self.schema.state_key(&t.state);
        let q = &mut self.table.entry(key).or_insert([0.0; Action::COUNT])[t.action.index()];
        *q += self.alpha * (target - *q);
        self.updates_count += 1;
    }

    /// Table dump, sorted by state key.
    pub fn to_json(&self) -> Result<String> {
        let mut rows: Vec<_> = self.table.iter().map(|(k, v)| (k.0, v.to_vec())).collect();
        rows.sort_by_key(|r| r.0);
        Ok(serde_json::to_string(&rows)?)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
