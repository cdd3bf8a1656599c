//! Deterministic grid environments with scheduled novelty injection.

mod layout;

use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use layout::{DoorState, EnvName, Facing, KeyColor, Layout, Pos, Tile};

use crate::action::Action;
use crate::error::{Error, Result};
use crate::feature::{FeatureSchema, FeatureSpec, Slot, SymbolicState};

/// Symbols of the `AheadCell` feature, shared by every environment.
pub const AHEAD_SYMBOLS: [&str; 9] = [
    "Floor",
    "Wall",
    "Lava",
    "Goal",
    "DoorLocked",
    "DoorClosed",
    "DoorOpen",
    "YellowKey",
    "BlueKey",
];

/// What stepping onto lava does.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LavaConfig {
    Harmless,
    /// Reward -1 and the episode terminates.
    Terminal,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoveltyKind {
    None,
    DoorKeyChange,
    LavaProof,
    LavaHurts,
}

impl NoveltyKind {
    pub fn cli_name(self) -> &'static str {
        match self {
            NoveltyKind::None => "none",
            NoveltyKind::DoorKeyChange => "doorkeychange",
            NoveltyKind::LavaProof => "lavaproof",
            NoveltyKind::LavaHurts => "lavahurts",
        }
    }
}

impl fmt::Display for NoveltyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl FromStr for NoveltyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(NoveltyKind::None),
            "doorkeychange" => Ok(NoveltyKind::DoorKeyChange),
            "lavaproof" => Ok(NoveltyKind::LavaProof),
            "lavahurts" => Ok(NoveltyKind::LavaHurts),
            other => Err(Error::Config(format!("unknown novelty `{other}`"))),
        }
    }
}

/// Injection threshold, in global environment steps or completed episodes.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectAt {
    Steps(u64),
    Episodes(u64),
}

impl FromStr for InjectAt {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("invalid novelty threshold `{s}`"));
        match s.split_once(':') {
            None => s.parse().map(InjectAt::Steps).map_err(|_| bad()),
            Some(("steps", n)) => n.parse().map(InjectAt::Steps).map_err(|_| bad()),
            Some(("episodes", n)) => n.parse().map(InjectAt::Episodes).map_err(|_| bad()),
            Some(_) => Err(bad()),
        }
    }
}

impl fmt::Display for InjectAt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InjectAt::Steps(n) => write!(f, "{n}"),
            InjectAt::Episodes(n) => write!(f, "episodes:{n}"),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoveltySpec {
    pub kind: NoveltyKind,
    pub inject_at: InjectAt,
}

impl NoveltySpec {
    pub const NONE: NoveltySpec = NoveltySpec {
        kind: NoveltyKind::None,
        inject_at: InjectAt::Steps(0),
    };

    pub fn new(kind: NoveltyKind, inject_at: InjectAt) -> Self {
        NoveltySpec { kind, inject_at }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum KeyPlace {
    Floor(Pos),
    Held,
    Consumed,
}

/// Dynamic part of the environment: everything that can differ between two
/// states of one layout.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EnvConfig {
    pub agent: Pos,
    pub facing: Facing,
    /// Aligned with the layout's keys (sorted by color).
    pub keys: Vec<KeyPlace>,
    pub door: DoorState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub state: SymbolicState,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
}

impl Step {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
enum Status {
    Running,
    Ended,
}

#[derive(Clone, Debug)]
struct FeatureSlots {
    agent: usize,
    facing: usize,
    inventory: Option<usize>,
    ahead: usize,
    door_loc: Option<usize>,
    door_state: Option<usize>,
    keys: Vec<usize>,
    lava: Option<usize>,
    goal: usize,
}

#[derive(Clone, Debug)]
pub struct GridEnv {
    name: Option<EnvName>,
    layout: Arc<Layout>,
    schema: Arc<FeatureSchema>,
    slots: FeatureSlots,
    config: EnvConfig,
    lock_color: KeyColor,
    lava: LavaConfig,
    novelty: NoveltySpec,
    injected: bool,
    max_steps: u32,
    episode_steps: u32,
    total_steps: u64,
    episodes_completed: u64,
    status: Status,
    rng: ChaCha8Rng,
}

/// Builds a named environment.
pub fn build_env(name: EnvName, novelty: NoveltySpec, seed: u64) -> Result<GridEnv> {
    let mut env = GridEnv::from_layout(name.layout(), novelty, seed)?;
    env.name = Some(name);
    Ok(env)
}

/// Symbolic schema for a layout.
pub fn schema_for(layout: &Layout) -> FeatureSchema {
    let hi = [layout.height - 1, layout.width - 1];
    let mut features = vec![
        FeatureSpec::integer("AgentLocation", &[0, 0], &hi),
        FeatureSpec::categorical("AgentFacing", &["East", "South", "West", "North"]),
    ];
    if !layout.keys.is_empty() {
        let mut inv = vec!["None"];
        inv.extend(layout.keys.iter().map(|(c, _)| c.item_name()));
        features.push(FeatureSpec::categorical("Inventory", &inv));
    }
    features.push(FeatureSpec::categorical("AheadCell", &AHEAD_SYMBOLS));
    if layout.door.is_some() {
        features.push(FeatureSpec::integer("DoorLocation", &[0, 0], &hi));
        features.push(FeatureSpec::categorical("DoorState", &["Locked", "Closed", "Open"]));
    }
    for (c, _) in &layout.keys {
        features.push(FeatureSpec::integer(
            &format!("{}Location", c.item_name()),
            &[0, 0],
            &hi,
        ));
    }
    if layout.has_lava() {
        features.push(FeatureSpec::categorical("LavaPresent", &["Present"]));
    }
    features.push(FeatureSpec::integer("GoalLocation", &[0, 0], &hi));
    FeatureSchema::new(features).expect("environment schemas are well formed")
}

impl GridEnv {
    pub fn from_layout(layout: Layout, novelty: NoveltySpec, seed: u64) -> Result<Self> {
        match novelty.kind {
            NoveltyKind::DoorKeyChange => {
                if layout.door.is_none() || !layout.key_colors().contains(&KeyColor::Blue) {
                    return Err(Error::Config("doorkeychange needs a door and a blue key".into()));
                }
            }
            NoveltyKind::LavaProof | NoveltyKind::LavaHurts => {
                if !layout.has_lava() {
                    return Err(Error::Config(format!("{} needs a layout with lava", novelty.kind)));
                }
            }
            NoveltyKind::None => {}
        }
        let schema = schema_for(&layout);
        let int_offset = |name: &str| match schema.slot(schema.index_of(name).unwrap()) {
            Slot::Int { offset, .. } => offset,
            Slot::Cat { .. } => unreachable!(),
        };
        let cat_slot = |name: &str| {
            schema.index_of(name).map(|i| match schema.slot(i) {
                Slot::Cat { index } => schema.int_slots() + index,
                Slot::Int { .. } => unreachable!(),
            })
        };
        let slots = FeatureSlots {
            agent: int_offset("AgentLocation"),
            facing: cat_slot("AgentFacing").unwrap(),
            inventory: cat_slot("Inventory"),
            ahead: cat_slot("AheadCell").unwrap(),
            door_loc: schema.index_of("DoorLocation").map(|_| int_offset("DoorLocation")),
            door_state: cat_slot("DoorState"),
            keys: layout
                .keys
                .iter()
                .map(|(c, _)| int_offset(&format!("{}Location", c.item_name())))
                .collect(),
            lava: cat_slot("LavaPresent"),
            goal: int_offset("GoalLocation"),
        };
        let lava = if novelty.kind == NoveltyKind::LavaHurts {
            LavaConfig::Harmless
        } else {
            LavaConfig::Terminal
        };
        let max_steps = (4 * layout.width * layout.height) as u32;
        let (agent, facing) = layout.starts[0];
        let config = EnvConfig {
            agent,
            facing,
            keys: layout.keys.iter().map(|(_, p)| KeyPlace::Floor(*p)).collect(),
            door: DoorState::Locked,
        };
        let mut env = GridEnv {
            name: None,
            layout: Arc::new(layout),
            schema: Arc::new(schema),
            slots,
            config,
            lock_color: KeyColor::Yellow,
            lava,
            novelty,
            injected: false,
            max_steps,
            episode_steps: 0,
            total_steps: 0,
            episodes_completed: 0,
            status: Status::Running,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        env.reset();
        Ok(env)
    }

    pub fn name(&self) -> Option<EnvName> {
        self.name
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn schema(&self) -> &Arc<FeatureSchema> {
        &self.schema
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn lava_config(&self) -> LavaConfig {
        self.lava
    }

    pub fn lock_color(&self) -> KeyColor {
        self.lock_color
    }

    pub fn novelty(&self) -> NoveltySpec {
        self.novelty
    }

    pub fn injected(&self) -> bool {
        self.injected
    }

    pub fn max_steps(&self) -> u32 {
        self.max_steps
    }

    pub fn set_max_steps(&mut self, max_steps: u32) {
        self.max_steps = max_steps;
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    pub fn episode_steps(&self) -> u32 {
        self.episode_steps
    }

    pub fn episodes_completed(&self) -> u64 {
        self.episodes_completed
    }

    pub fn episode_over(&self) -> bool {
        self.status == Status::Ended
    }

    /// Starts a new episode: objects return to their layout positions and the
    /// agent takes a start pose drawn from the layout's start set.
    pub fn reset(&mut self) -> SymbolicState {
        let pick = if self.layout.starts.len() > 1 {
            self.rng.gen_range(0..self.layout.starts.len())
        } else {
            0
        };
        let (agent, facing) = self.layout.starts[pick];
        self.config = EnvConfig {
            agent,
            facing,
            keys: self.layout.keys.iter().map(|(_, p)| KeyPlace::Floor(*p)).collect(),
            door: DoorState::Locked,
        };
        self.episode_steps = 0;
        self.status = Status::Running;
        self.observe()
    }

    /// Independent copy with the same layout and current dynamics, a fresh
    /// RNG stream and zeroed counters. Used for probes and baselines.
    pub fn fork(&self, seed: u64) -> GridEnv {
        let mut env = self.clone();
        env.rng = ChaCha8Rng::seed_from_u64(seed);
        env.total_steps = 0;
        env.episodes_completed = 0;
        env.reset();
        env
    }

    /// Places the environment in an arbitrary configuration (tests, exhaustive
    /// enumeration). The episode step counter restarts.
    pub fn restore(&mut self, config: EnvConfig) -> Result<()> {
        if config.keys.len() != self.layout.keys.len() {
            return Err(Error::Contract("configuration does not match layout keys".into()));
        }
        if !self.passable_for_agent(config.agent, config.door) {
            return Err(Error::Contract(format!("agent cannot stand at {:?}", config.agent)));
        }
        if config.keys.iter().filter(|k| **k == KeyPlace::Held).count() > 1 {
            return Err(Error::Contract("agent holds more than one key".into()));
        }
        self.config = config;
        self.episode_steps = 0;
        self.status = Status::Running;
        Ok(())
    }

    fn passable_for_agent(&self, p: Pos, door: DoorState) -> bool {
        match self.layout.tile(p) {
            Tile::Wall => false,
            Tile::Door => door == DoorState::Open,
            _ => true,
        }
    }

    fn key_at(&self, p: Pos) -> Option<usize> {
        self.config.keys.iter().position(|k| *k == KeyPlace::Floor(p))
    }

    fn held_key(&self) -> Option<usize> {
        self.config.keys.iter().position(|k| *k == KeyPlace::Held)
    }

    fn ahead_symbol(&self) -> u32 {
        let ahead = self.config.agent.step(self.config.facing);
        if let Some(k) = self.key_at(ahead) {
            return match self.layout.keys[k].0 {
                KeyColor::Yellow => 7,
                KeyColor::Blue => 8,
            };
        }
        match self.layout.tile(ahead) {
            Tile::Floor => 0,
            Tile::Wall => 1,
            Tile::Lava => 2,
            Tile::Goal => 3,
            Tile::Door => match self.config.door {
                DoorState::Locked => 4,
                DoorState::Closed => 5,
                DoorState::Open => 6,
            },
        }
    }

    /// Projects the current configuration onto the environment's schema.
    pub fn observe(&self) -> SymbolicState {
        let mut v = vec![0i32; self.schema.slot_count()];
        let s = &self.slots;
        v[s.agent] = self.config.agent.row;
        v[s.agent + 1] = self.config.agent.col;
        v[s.facing] = self.config.facing as i32;
        if let Some(i) = s.inventory {
            v[i] = self.held_key().map_or(0, |k| k as i32 + 1);
        }
        v[s.ahead] = self.ahead_symbol() as i32;
        if let (Some(loc), Some(state), Some(door)) = (s.door_loc, s.door_state, self.layout.door) {
            v[loc] = door.row;
            v[loc + 1] = door.col;
            v[state] = self.config.door as i32;
        }
        for (k, &off) in s.keys.iter().enumerate() {
            // Keys that are held or consumed read as (0, 0), a wall corner.
            if let KeyPlace::Floor(p) = self.config.keys[k] {
                v[off] = p.row;
                v[off + 1] = p.col;
            }
        }
        if let Some(i) = s.lava {
            v[i] = 0;
        }
        v[s.goal] = self.layout.goal.row;
        v[s.goal + 1] = self.layout.goal.col;
        SymbolicState::from_slots(v)
    }

    pub fn step(&mut self, action: Action) -> Result<Step> {
        if self.status == Status::Ended {
            return Err(Error::Contract("step called after the episode ended".into()));
        }
        let (reward, terminated) = self.apply(action);
        self.episode_steps += 1;
        self.total_steps += 1;
        let truncated = !terminated && self.episode_steps >= self.max_steps;
        if terminated || truncated {
            self.status = Status::Ended;
            self.episodes_completed += 1;
        }
        Ok(Step {
            state: self.observe(),
            reward,
            terminated,
            truncated,
        })
    }

    fn apply(&mut self, action: Action) -> (f64, bool) {
        let ahead = self.config.agent.step(self.config.facing);
        match action {
            Action::TurnLeft => self.config.facing = self.config.facing.left(),
            Action::TurnRight => self.config.facing = self.config.facing.right(),
            Action::Forward => {
                if self.key_at(ahead).is_some() {
                    return (0.0, false);
                }
                match self.layout.tile(ahead) {
                    Tile::Wall => {}
                    Tile::Door => {
                        if self.config.door == DoorState::Open {
                            self.config.agent = ahead;
                        }
                    }
                    Tile::Floor => self.config.agent = ahead,
                    Tile::Goal => {
                        self.config.agent = ahead;
                        return (1.0, true);
                    }
                    Tile::Lava => {
                        self.config.agent = ahead;
                        if self.lava == LavaConfig::Terminal {
                            return (-1.0, true);
                        }
                    }
                }
            }
            Action::Pickup => {
                if self.held_key().is_none() {
                    if let Some(k) = self.key_at(ahead) {
                        self.config.keys[k] = KeyPlace::Held;
                    }
                }
            }
            Action::Drop => {
                if let Some(k) = self.held_key() {
                    if self.layout.tile(ahead) == Tile::Floor && self.key_at(ahead).is_none() {
                        self.config.keys[k] = KeyPlace::Floor(ahead);
                    }
                }
            }
            Action::Toggle => {
                if self.layout.tile(ahead) == Tile::Door {
                    match self.config.door {
                        DoorState::Locked => {
                            if let Some(k) = self.held_key() {
                                if self.layout.keys[k].0 == self.lock_color {
                                    self.config.keys[k] = KeyPlace::Consumed;
                                    self.config.door = DoorState::Closed;
                                }
                            }
                        }
                        DoorState::Closed => self.config.door = DoorState::Open,
                        DoorState::Open => self.config.door = DoorState::Closed,
                    }
                }
            }
        }
        (0.0, false)
    }

    /// True once the novelty threshold has been crossed and injection is
    /// still pending.
    pub fn novelty_due(&self) -> bool {
        if self.injected || self.novelty.kind == NoveltyKind::None {
            return false;
        }
        match self.novelty.inject_at {
            InjectAt::Steps(n) => self.total_steps >= n,
            InjectAt::Episodes(n) => self.episodes_completed >= n,
        }
    }

    fn at_episode_boundary(&self) -> bool {
        self.status == Status::Ended || self.episode_steps == 0
    }

    /// Swaps in the post-novelty dynamics. Nothing in the symbolic
    /// observation changes.
    pub fn inject_novelty(&mut self) -> Result<()> {
        if self.injected {
            return Err(Error::Contract("novelty already injected".into()));
        }
        if self.novelty.kind == NoveltyKind::None {
            return Err(Error::Contract("no novelty configured".into()));
        }
        if !self.novelty_due() {
            return Err(Error::Contract("novelty threshold not reached".into()));
        }
        if !self.at_episode_boundary() {
            return Err(Error::Contract("novelty injection must happen between episodes".into()));
        }
        match self.novelty.kind {
            NoveltyKind::DoorKeyChange => self.lock_color = KeyColor::Blue,
            NoveltyKind::LavaProof => self.lava = LavaConfig::Harmless,
            NoveltyKind::LavaHurts => self.lava = LavaConfig::Terminal,
            NoveltyKind::None => unreachable!(),
        }
        self.injected = true;
        Ok(())
    }

    /// One character per cell.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in 0..self.layout.height {
            for c in 0..self.layout.width {
                let p = Pos::new(r, c);
                let ch = if p == self.config.agent {
                    layout::agent_glyph(self.config.facing)
                } else if let Some(k) = self.key_at(p) {
                    match self.layout.keys[k].0 {
                        KeyColor::Yellow => 'Y',
                        KeyColor::Blue => 'B',
                    }
                } else {
                    match self.layout.tile(p) {
                        Tile::Floor => '.',
                        Tile::Wall => '#',
                        Tile::Lava => 'L',
                        Tile::Goal => 'G',
                        Tile::Door => match self.config.door {
                            DoorState::Locked => 'D',
                            DoorState::Closed => 'd',
                            DoorState::Open => '/',
                        },
                    }
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }

    /// Breadth-first enumeration of every configuration reachable from any
    /// start pose under the current dynamics. Terminal configurations are
    /// included but not expanded.
    pub fn reachable(&self) -> Vec<ReachableState> {
        let mut probe = self.clone();
        probe.max_steps = u32::MAX;
        let mut seen = HashSet::new();
        let mut queue = VecDeque::new();
        let mut out = Vec::new();
        for &(agent, facing) in &self.layout.starts {
            let cfg = EnvConfig {
                agent,
                facing,
                keys: self.layout.keys.iter().map(|(_, p)| KeyPlace::Floor(*p)).collect(),
                door: DoorState::Locked,
            };
            if seen.insert(cfg.clone()) {
                queue.push_back((cfg, false));
            }
        }
        while let Some((cfg, terminal)) = queue.pop_front() {
            probe.restore(cfg.clone()).expect("reachable configs are valid");
            out.push(ReachableState {
                state: probe.observe(),
                config: cfg.clone(),
                terminal,
            });
            if terminal {
                continue;
            }
            for a in Action::ALL {
                probe.restore(cfg.clone()).expect("reachable configs are valid");
                let step = probe.step(a).expect("fresh episode");
                if seen.insert(probe.config.clone()) {
                    queue.push_back((probe.config.clone(), step.terminated));
                }
            }
        }
        out
    }

    /// Every (state, action) transition out of a reachable non-terminal state.
    pub fn reachable_transitions(&self) -> Vec<TransitionSample> {
        let mut probe = self.clone();
        probe.max_steps = u32::MAX;
        let mut out = Vec::new();
        for r in self.reachable() {
            if r.terminal {
                continue;
            }
            for a in Action::ALL {
                probe.restore(r.config.clone()).expect("reachable configs are valid");
                let step = probe.step(a).expect("fresh episode");
                out.push(TransitionSample {
                    prev: r.state.clone(),
                    action: a,
                    next: step.state,
                    reward: step.reward,
                    terminal: step.terminated,
                });
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct ReachableState {
    pub state: SymbolicState,
    pub config: EnvConfig,
    pub terminal: bool,
}

/// A ground-truth transition produced by enumeration.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionSample {
    pub prev: SymbolicState,
    pub action: Action,
    pub next: SymbolicState,
    pub reward: f64,
    pub terminal: bool,
}
