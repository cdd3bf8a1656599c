//! Pre-novelty training, frozen monitoring and post-detection adaptation
//! with imagined rollouts from the rule model.

use std::collections::VecDeque;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::action::Action;
use crate::detector::{DetectionEvent, Detector};
use crate::env::{build_env, EnvName, GridEnv, NoveltyKind, NoveltySpec};
use crate::error::{Error, Result};
use crate::feature::SymbolicState;
use crate::metrics::{self, EpisodePhase, EpisodeRecord, MetricConfig, MetricReport, RunLog};
use crate::policy::{Mode, PolicyConfig, Provenance, TabularQPolicy, Transition, UpdateBuffer};
use crate::rules::{Predicted, RuleModel};

pub const CSV_SCHEMA_VERSION: u32 = 1;
pub const CSV_HEADER: &str = "step,episode,phase,provenance,action,reward,terminal,rule_count,detections,updates";

const MIX_SCALE: u64 = 1_000_000;

/// Splits real steps into owed imagined steps with an integer carry, so the
/// realized imagined count never drifts more than one step from the target.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MixSchedule {
    real_weight: u64,
    imagined_weight: u64,
    carry: u64,
    real_steps: u64,
    imagined_steps: u64,
}

impl MixSchedule {
    pub fn new(real_fraction: f64) -> Result<Self> {
        if !(real_fraction > 0.0 && real_fraction <= 1.0) {
            return Err(Error::Config(format!("real fraction {real_fraction} outside (0, 1]")));
        }
        let real_weight = ((real_fraction * MIX_SCALE as f64).round() as u64).clamp(1, MIX_SCALE);
        Ok(MixSchedule {
            real_weight,
            imagined_weight: MIX_SCALE - real_weight,
            carry: 0,
            real_steps: 0,
            imagined_steps: 0,
        })
    }

    pub fn real_fraction(&self) -> f64 {
        self.real_weight as f64 / MIX_SCALE as f64
    }

    pub fn imagined_fraction(&self) -> f64 {
        self.imagined_weight as f64 / MIX_SCALE as f64
    }

    /// Real steps per imagined step; infinite when imagination is off.
    pub fn eta(&self) -> f64 {
        self.real_weight as f64 / self.imagined_weight as f64
    }

    /// Records one real step and returns the imagined steps now owed.
    pub fn on_real_step(&mut self) -> u64 {
        self.real_steps += 1;
        self.carry += self.imagined_weight;
        let owed = self.carry / self.real_weight;
        self.carry %= self.real_weight;
        self.imagined_steps += owed;
        owed
    }

    pub fn real_steps(&self) -> u64 {
        self.real_steps
    }

    pub fn imagined_steps(&self) -> u64 {
        self.imagined_steps
    }
}

/// Recently visited real states; imagined rollouts start from here.
#[derive(Clone, Debug)]
pub struct StartStatePool {
    states: VecDeque<SymbolicState>,
    capacity: usize,
}

impl StartStatePool {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("start state pool capacity must be positive".into()));
        }
        Ok(StartStatePool {
            states: VecDeque::with_capacity(capacity),
            capacity,
        })
    }

    pub fn push(&mut self, s: SymbolicState) {
        if self.states.len() == self.capacity {
            self.states.pop_front();
        }
        self.states.push_back(s);
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn contains(&self, s: &SymbolicState) -> bool {
        self.states.contains(s)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Option<SymbolicState> {
        if self.states.is_empty() {
            return None;
        }
        Some(self.states[rng.gen_range(0..self.states.len())].clone())
    }
}

/// One imagined transition. An (s, a) the model cannot predict becomes a
/// zero-reward self-loop.
pub fn imagine_step(model: &RuleModel, policy: &mut TabularQPolicy, state: &SymbolicState) -> Result<Transition> {
    let action = policy.select_action(state, Mode::Explore);
    let (next_state, reward, terminal) = match model.predict(state, action)? {
        Predicted::Known(p) => (p.next_state, p.reward, p.terminal),
        Predicted::Unknown => (state.clone(), 0.0, false),
    };
    Ok(Transition {
        state: state.clone(),
        action,
        next_state,
        reward,
        terminal,
        provenance: Provenance::Imagined,
    })
}

/// Rolls the policy inside the model for up to `horizon` steps, stopping
/// early on a terminal effect.
pub fn imagine_rollout(
    model: &RuleModel,
    policy: &mut TabularQPolicy,
    start: &SymbolicState,
    horizon: usize,
) -> Result<Vec<Transition>> {
    let mut out = Vec::with_capacity(horizon);
    let mut state = start.clone();
    for _ in 0..horizon {
        let t = imagine_step(model, policy, &state)?;
        let done = t.terminal;
        state = t.next_state.clone();
        out.push(t);
        if done {
            break;
        }
    }
    Ok(out)
}

/// Fraction of `steps` random-policy transitions the model fails to predict
/// exactly, on an independent copy of `env`.
pub fn probe_error(model: &RuleModel, env: &GridEnv, steps: usize, seed: u64) -> Result<f64> {
    if steps == 0 {
        return Ok(0.0);
    }
    let mut probe = env.fork(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = probe.observe();
    let mut errors = 0usize;
    for _ in 0..steps {
        let action = Action::ALL[rng.gen_range(0..Action::COUNT)];
        let out = probe.step(action)?;
        if !model
            .predict(&state, action)?
            .agrees_with(&out.state, out.reward, out.terminated)
        {
            errors += 1;
        }
        state = if out.done() { probe.reset() } else { out.state };
    }
    Ok(errors as f64 / steps as f64)
}

/// Mean return of a uniform-random policy over `episodes` episodes.
pub fn random_policy_return(env: &GridEnv, episodes: usize, seed: u64) -> Result<f64> {
    if episodes == 0 {
        return Err(Error::InsufficientData {
            needed: 1,
            available: 0,
        });
    }
    let mut env = env.fork(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut total = 0.0;
    for _ in 0..episodes {
        loop {
            let out = env.step(Action::ALL[rng.gen_range(0..Action::COUNT)])?;
            total += out.reward;
            if out.done() {
                break;
            }
        }
        env.reset();
    }
    Ok(total / episodes as f64)
}

/// Trains a rule model from a random policy on `env`, measuring probe error
/// every `every` steps. Returns (training step, error) pairs starting at 0.
pub fn rule_learning_curve(
    env: &GridEnv,
    train_steps: usize,
    every: usize,
    probe_steps: usize,
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    let mut train = env.fork(seed);
    let mut model = RuleModel::new(train.schema().clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut state = train.observe();
    let probe_seed = seed.wrapping_add(0x9e37_79b9);
    let mut curve = vec![(0, probe_error(&model, env, probe_steps, probe_seed)?)];
    for step in 1..=train_steps {
        let action = Action::ALL[rng.gen_range(0..Action::COUNT)];
        let out = train.step(action)?;
        model.update(&state, action, &out.state, out.reward, out.terminated)?;
        state = if out.done() { train.reset() } else { out.state };
        if every > 0 && step % every == 0 {
            curve.push((step, probe_error(&model, env, probe_steps, probe_seed)?));
        }
    }
    Ok(curve)
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AgentKind {
    /// Rule model, freeze/detect lifecycle and imagined rollouts.
    #[serde(rename = "worldcloner")]
    Imagining,
    /// Model-free learner with learning always on.
    #[serde(rename = "baseline")]
    Baseline,
}

impl AgentKind {
    pub fn cli_name(self) -> &'static str {
        match self {
            AgentKind::Imagining => "worldcloner",
            AgentKind::Baseline => "baseline",
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl FromStr for AgentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "worldcloner" => Ok(AgentKind::Imagining),
            "baseline" => Ok(AgentKind::Baseline),
            other => Err(Error::Config(format!("unknown agent `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub policy: PolicyConfig,
    pub batch_size: usize,
    pub update_period: u64,
    pub buffer_capacity: usize,
    pub pool_capacity: usize,
    pub horizon: usize,
    pub real_fraction: f64,
    pub detector_threshold: u32,
    pub probe_steps: usize,
    pub probe_error_threshold: f64,
    /// Minimum real steps between two probes.
    pub probe_interval: u64,
    /// Trailing window for the convergence moving average.
    pub convergence_window: usize,
    /// Episodes over which that average must stay within tolerance.
    pub convergence_span: usize,
    pub convergence_tolerance: f64,
    pub max_pre_steps: u64,
    /// Real-step cap on everything after pre-novelty convergence.
    pub max_post_steps: u64,
    /// Frozen steps run after convergence when no novelty is configured.
    pub soak_steps: u64,
    pub metrics: MetricConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            policy: PolicyConfig::default(),
            batch_size: 32,
            update_period: 4,
            buffer_capacity: UpdateBuffer::DEFAULT_CAPACITY,
            pool_capacity: 1024,
            horizon: 32,
            real_fraction: 0.6,
            detector_threshold: 2,
            probe_steps: 1000,
            probe_error_threshold: 0.01,
            probe_interval: 10_000,
            convergence_window: 50,
            convergence_span: 100,
            convergence_tolerance: 0.01,
            max_pre_steps: 2_000_000,
            max_post_steps: 1_000_000,
            soak_steps: 10_000,
            metrics: MetricConfig::default(),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.update_period == 0 {
            return Err(Error::Config("batch size and update period must be positive".into()));
        }
        if self.buffer_capacity < self.batch_size {
            return Err(Error::Config("buffer capacity is smaller than the batch size".into()));
        }
        if self.pool_capacity == 0 {
            return Err(Error::Config("start state pool capacity must be positive".into()));
        }
        if self.convergence_window == 0 || self.convergence_span == 0 {
            return Err(Error::Config("convergence windows must be positive".into()));
        }
        MixSchedule::new(self.real_fraction)?;
        Ok(())
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pre,
    /// Converged and frozen (or, for the baseline, converged and waiting for
    /// the novelty).
    Monitor,
    Post,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Pre => "pre",
            Phase::Monitor => "monitor",
            Phase::Post => "post",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub real_steps: u64,
    pub imagined_steps: u64,
    pub policy_updates: u64,
    pub episodes: u64,
    /// Real step at which the policy criterion first held.
    pub policy_converged_step: Option<u64>,
    /// Real step at which the rule model passed the probe.
    pub model_converged_step: Option<u64>,
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub step: u64,
    pub episode: u64,
    pub updates: u64,
}

/// Destination of the per-step CSV rows.
struct EventSink(BufWriter<Box<dyn Write + Send>>);

impl fmt::Debug for EventSink {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("EventSink")
    }
}

/// One agent plus its environment, stepping through the run phases.
#[derive(Debug)]
pub struct Runner {
    kind: AgentKind,
    config: AgentConfig,
    seed: u64,
    env: GridEnv,
    policy: TabularQPolicy,
    model: Option<RuleModel>,
    model_learning: bool,
    detector: Detector,
    buffer: UpdateBuffer,
    pool: StartStatePool,
    mix: MixSchedule,
    cursor: Option<(SymbolicState, usize)>,
    rng: ChaCha8Rng,
    state: SymbolicState,
    phase: Phase,
    real_steps: u64,
    imagined_steps: u64,
    episode_return: f64,
    episode_len: u32,
    episodes: Vec<EpisodeRecord>,
    detections: Vec<DetectionEvent>,
    injection: Option<Injection>,
    random_baseline: Option<f64>,
    pre_random: f64,
    pre_report: Option<PhaseReport>,
    policy_converged: Option<u64>,
    phase_start: (u64, u64, u64, u64),
    log: Option<EventSink>,
}

fn stream(seed: u64, n: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(n);
    rng
}

fn derive_seed(seed: u64, n: u64) -> u64 {
    stream(seed, n).gen()
}

impl Runner {
    pub fn new(kind: AgentKind, env: GridEnv, config: AgentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let schema = env.schema().clone();
        let policy = TabularQPolicy::new(schema.clone(), &config.policy, derive_seed(seed, 1))?;
        let model = match kind {
            AgentKind::Imagining => Some(RuleModel::new(schema)),
            AgentKind::Baseline => None,
        };
        let mut env = env;
        let pre_random = random_policy_return(&env, config.metrics.tail_window.max(1), derive_seed(seed, 3))?;
        let state = env.reset();
        let mut runner = Runner {
            kind,
            seed,
            env,
            policy,
            model,
            model_learning: true,
            detector: Detector::new(config.detector_threshold),
            buffer: UpdateBuffer::new(config.buffer_capacity)?,
            pool: StartStatePool::new(config.pool_capacity)?,
            mix: MixSchedule::new(config.real_fraction)?,
            cursor: None,
            rng: stream(seed, 2),
            state,
            phase: Phase::Pre,
            real_steps: 0,
            imagined_steps: 0,
            episode_return: 0.0,
            episode_len: 0,
            episodes: Vec::new(),
            detections: Vec::new(),
            injection: None,
            random_baseline: None,
            pre_random,
            pre_report: None,
            policy_converged: None,
            phase_start: (0, 0, 0, 0),
            log: None,
            config,
        };
        runner.phase_start = runner.counters();
        Ok(runner)
    }

    /// Builds the environment and the runner from one seed.
    pub fn for_env(
        kind: AgentKind,
        name: EnvName,
        novelty: NoveltySpec,
        config: AgentConfig,
        seed: u64,
    ) -> Result<Self> {
        let env = build_env(name, novelty, derive_seed(seed, 0))?;
        Runner::new(kind, env, config, seed)
    }

    /// Streams the per-step CSV event log to `out`, starting with `#`
    /// comment lines holding the schema version and the resolved run setup.
    pub fn record_events(&mut self, out: impl Write + Send + 'static) -> Result<()> {
        let mut w = BufWriter::new(Box::new(out) as Box<dyn Write + Send>);
        writeln!(w, "# schema_version={CSV_SCHEMA_VERSION}")?;
        writeln!(
            w,
            "# env={} novelty={} inject_at={} agent={} seed={}",
            self.env.name().map_or("custom", EnvName::cli_name),
            self.env.novelty().kind.cli_name(),
            self.env.novelty().inject_at,
            self.kind,
            self.seed
        )?;
        writeln!(w, "# config={}", serde_json::to_string(&self.config)?)?;
        writeln!(w, "{CSV_HEADER}")?;
        self.log = Some(EventSink(w));
        Ok(())
    }

    pub fn kind(&self) -> AgentKind {
        self.kind
    }

    pub fn env(&self) -> &GridEnv {
        &self.env
    }

    pub fn policy(&self) -> &TabularQPolicy {
        &self.policy
    }

    pub fn model(&self) -> Option<&RuleModel> {
        self.model.as_ref()
    }

    pub fn buffer(&self) -> &UpdateBuffer {
        &self.buffer
    }

    pub fn pool(&self) -> &StartStatePool {
        &self.pool
    }

    pub fn mix(&self) -> &MixSchedule {
        &self.mix
    }

    pub fn detector(&self) -> &Detector {
        &self.detector
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn state(&self) -> &SymbolicState {
        &self.state
    }

    pub fn real_steps(&self) -> u64 {
        self.real_steps
    }

    pub fn imagined_steps(&self) -> u64 {
        self.imagined_steps
    }

    pub fn episodes(&self) -> &[EpisodeRecord] {
        &self.episodes
    }

    pub fn detections(&self) -> &[DetectionEvent] {
        &self.detections
    }

    pub fn injection(&self) -> Option<Injection> {
        self.injection
    }

    fn counters(&self) -> (u64, u64, u64, u64) {
        (
            self.real_steps,
            self.imagined_steps,
            self.policy.updates_count(),
            self.episodes.len() as u64,
        )
    }

    fn phase_report(&self) -> PhaseReport {
        let (r, i, u, e) = self.phase_start;
        PhaseReport {
            real_steps: self.real_steps - r,
            imagined_steps: self.imagined_steps - i,
            policy_updates: self.policy.updates_count() - u,
            episodes: self.episodes.len() as u64 - e,
            policy_converged_step: None,
            model_converged_step: None,
        }
    }

    fn log_row(&mut self, provenance: Provenance, action: Action, reward: f64, terminal: bool) -> Result<()> {
        let Some(EventSink(log)) = self.log.as_mut() else {
            return Ok(());
        };
        writeln!(
            log,
            "{},{},{},{},{},{},{},{},{},{}",
            self.real_steps,
            self.episodes.len(),
            self.phase.name(),
            provenance.name(),
            action.name(),
            reward,
            terminal as u8,
            self.model.as_ref().map_or(0, |m| m.len()),
            self.detections.len(),
            self.policy.updates_count(),
        )?;
        Ok(())
    }

    fn learning(&self) -> bool {
        self.policy.learning_enabled()
    }

    fn freeze(&mut self) {
        self.policy.set_learning(false);
        self.model_learning = false;
        self.detector.reset();
    }

    /// One real environment step with everything that hangs off it.
    /// Returns true when the step ended an episode.
    pub fn step(&mut self) -> Result<bool> {
        let prev = self.state.clone();
        let action = self.policy.select_action(&prev, Mode::Explore);
        let out = self.env.step(action)?;
        self.real_steps += 1;
        self.pool.push(prev.clone());

        if let Some(model) = self.model.as_mut() {
            if !self.model_learning {
                let key = model.schema().state_key(&prev);
                let predicted = model.predict(&prev, action)?;
                if let Some(ev) =
                    self.detector
                        .observe(self.real_steps, key, &predicted, &out.state, out.reward, out.terminated)
                {
                    self.detections.push(ev);
                    self.policy.set_learning(true);
                    self.model_learning = true;
                    self.phase = Phase::Post;
                }
            }
            if self.model_learning {
                model.update(&prev, action, &out.state, out.reward, out.terminated)?;
            }
        }
        if self.learning() {
            self.buffer.push(Transition {
                state: prev,
                action,
                next_state: out.state.clone(),
                reward: out.reward,
                terminal: out.terminated,
                provenance: Provenance::Real,
            });
        }
        self.log_row(Provenance::Real, action, out.reward, out.terminated)?;

        if self.learning() && self.model.is_some() && self.phase == Phase::Post {
            let owed = self.mix.on_real_step();
            self.imagine(owed)?;
        }
        if self.learning() && self.real_steps.is_multiple_of(self.config.update_period) {
            self.policy.update_from_buffer(&self.buffer, self.config.batch_size)?;
        }
        self.policy.tick();

        self.episode_return += out.reward;
        self.episode_len += 1;
        if out.done() {
            self.finish_episode()?;
            Ok(true)
        } else {
            self.state = out.state;
            Ok(false)
        }
    }

    fn imagine(&mut self, owed: u64) -> Result<()> {
        if self.config.horizon == 0 {
            return Ok(());
        }
        for _ in 0..owed {
            let (state, depth) = match self.cursor.take() {
                Some(c) => c,
                None => match self.pool.sample(&mut self.rng) {
                    Some(s) => (s, 0),
                    None => return Ok(()),
                },
            };
            let model = self.model.as_ref().expect("imagination needs a model");
            let t = imagine_step(model, &mut self.policy, &state)?;
            self.imagined_steps += 1;
            self.log_row(Provenance::Imagined, t.action, t.reward, t.terminal)?;
            if !t.terminal && depth + 1 < self.config.horizon {
                self.cursor = Some((t.next_state.clone(), depth + 1));
            }
            self.buffer.push(t);
        }
        Ok(())
    }

    fn finish_episode(&mut self) -> Result<()> {
        self.episodes.push(EpisodeRecord {
            index: self.episodes.len() as u64,
            end_step: self.real_steps,
            ret: self.episode_return,
            length: self.episode_len,
            phase: if self.injection.is_some() {
                EpisodePhase::Post
            } else {
                EpisodePhase::Pre
            },
            updates: self.policy.updates_count(),
        });
        self.episode_return = 0.0;
        self.episode_len = 0;
        if self.injection.is_none() && self.phase != Phase::Pre && self.env.novelty_due() {
            self.env.inject_novelty()?;
            self.injection = Some(Injection {
                step: self.real_steps,
                episode: self.episodes.len() as u64,
                updates: self.policy.updates_count(),
            });
            self.random_baseline = Some(random_policy_return(
                &self.env,
                self.config.metrics.tail_window,
                derive_seed(self.seed, 3),
            )?);
            if self.kind == AgentKind::Baseline {
                self.phase = Phase::Post;
            }
        }
        self.state = self.env.reset();
        Ok(())
    }

    fn returns_stable(&self, from_episode: usize) -> bool {
        let returns: Vec<f64> = self.episodes[from_episode..].iter().map(|e| e.ret).collect();
        metrics::returns_stable(
            &returns,
            self.config.convergence_window,
            self.config.convergence_span,
            self.config.convergence_tolerance,
        )
    }

    /// Mean of the last `tail` returns exceeds `reference`.
    fn beats(&self, tail: usize, reference: f64) -> bool {
        if self.episodes.len() < tail {
            return false;
        }
        let recent = &self.episodes[self.episodes.len() - tail..];
        recent.iter().map(|e| e.ret).sum::<f64>() / tail as f64 > reference
    }

    /// Trains until the policy and (when present) the rule model converge,
    /// then freezes the model-based agent.
    pub fn run_pre_novelty(&mut self) -> Result<PhaseReport> {
        if self.phase != Phase::Pre {
            return Err(Error::Contract("pre-novelty phase already finished".into()));
        }
        let mut model_converged = None;
        let mut last_probe: Option<u64> = None;
        loop {
            if self.real_steps >= self.config.max_pre_steps {
                let probe = match &self.model {
                    Some(m) => format!(
                        "{:.4}",
                        probe_error(m, &self.env, self.config.probe_steps, derive_seed(self.seed, 4))?
                    ),
                    None => "n/a".into(),
                };
                let recent: Vec<f64> = self.episodes.iter().rev().take(10).map(|e| e.ret).collect();
                return Err(Error::Timeout {
                    steps: self.real_steps,
                    diagnostics: format!(
                        "epsilon {:.3}, episodes {}, recent returns {:?}, probe error {}, rules {}",
                        self.policy.epsilon(),
                        self.episodes.len(),
                        recent,
                        probe,
                        self.model.as_ref().map_or(0, |m| m.len()),
                    ),
                });
            }
            if !self.step()? {
                continue;
            }
            let tail = self.config.metrics.tail_window;
            if !(self.returns_stable(0) && self.beats(tail, self.pre_random)) {
                continue;
            }
            self.policy_converged.get_or_insert(self.real_steps);
            if let Some(model) = &self.model {
                if last_probe.is_some_and(|p| self.real_steps - p < self.config.probe_interval) {
                    continue;
                }
                last_probe = Some(self.real_steps);
                let err = probe_error(model, &self.env, self.config.probe_steps, derive_seed(self.seed, 4))?;
                if err >= self.config.probe_error_threshold {
                    continue;
                }
                model_converged = Some(self.real_steps);
            }
            break;
        }
        let mut report = self.phase_report();
        report.policy_converged_step = self.policy_converged;
        report.model_converged_step = model_converged;
        if self.kind == AgentKind::Imagining {
            self.freeze();
        }
        self.phase = Phase::Monitor;
        self.phase_start = self.counters();
        self.pre_report = Some(report.clone());
        Ok(report)
    }

    /// Runs `steps` further real steps without any stopping rule.
    pub fn run_steps(&mut self, steps: u64) -> Result<()> {
        for _ in 0..steps {
            self.step()?;
        }
        Ok(())
    }

    /// After pre-novelty convergence: monitors, injects, adapts, and stops
    /// once post-novelty returns have settled or the step budget runs out.
    pub fn run_post_novelty(&mut self) -> Result<PhaseReport> {
        if self.phase == Phase::Pre {
            return Err(Error::Contract("pre-novelty phase has not converged".into()));
        }
        let start = self.real_steps;
        let tail = self.config.metrics.tail_window;
        if self.env.novelty().kind == NoveltyKind::None {
            self.run_steps(self.config.soak_steps)?;
            return Ok(self.phase_report());
        }
        while self.real_steps - start < self.config.max_post_steps {
            if !self.step()? {
                continue;
            }
            let Some(inj) = self.injection else { continue };
            let post_from = inj.episode as usize;
            if self.episodes.len() - post_from >= tail
                && self.returns_stable(post_from)
                && self.beats(tail, self.random_baseline.unwrap_or(f64::NEG_INFINITY))
            {
                break;
            }
        }
        Ok(self.phase_report())
    }

    /// Full run: pre-novelty training, then monitoring and adaptation.
    pub fn run(mut self) -> Result<RunResult> {
        let pre = self.run_pre_novelty()?;
        let post = self.run_post_novelty()?;
        if let Some(EventSink(log)) = self.log.as_mut() {
            log.flush()?;
        }
        Ok(self.finish(pre, post))
    }

    fn finish(self, pre: PhaseReport, post: PhaseReport) -> RunResult {
        let post_imagined = match self.injection {
            Some(_) => post.imagined_steps,
            None => 0,
        };
        let log = RunLog {
            episodes: &self.episodes,
            injection_step: self.injection.map(|i| i.step),
            injection_updates: self.injection.map_or(0, |i| i.updates),
            random_baseline: self.random_baseline,
            detection_step: self.detections.first().map(|d| d.step),
            final_step: self.real_steps,
            final_updates: self.policy.updates_count(),
            post_imagined_steps: post_imagined,
        };
        let report = metrics::compute_report(&log, &self.config.metrics).expect("metric windows are valid");
        RunResult {
            agent: self.kind,
            seed: self.seed,
            pre,
            post,
            report,
            injection: self.injection,
            detections: self.detections,
            rule_count: self.model.as_ref().map(|m| m.len()),
            episodes: self.episodes,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub agent: AgentKind,
    pub seed: u64,
    pub pre: PhaseReport,
    pub post: PhaseReport,
    pub report: MetricReport,
    pub injection: Option<Injection>,
    pub detections: Vec<DetectionEvent>,
    /// `None` for the model-free baseline, which never builds a rule model.
    pub rule_count: Option<usize>,
    pub episodes: Vec<EpisodeRecord>,
}

impl RunResult {
    /// (global step, trailing moving-average return) per episode, starting
    /// once the window is full.
    pub fn curve(&self, window: usize) -> Vec<(u64, f64)> {
        let returns: Vec<f64> = self.episodes.iter().map(|e| e.ret).collect();
        let ma = metrics::moving_average(&returns, window.max(1)).unwrap_or_default();
        ma.into_iter()
            .enumerate()
            .map(|(j, m)| (self.episodes[j + window.max(1) - 1].end_step, m))
            .collect()
    }
}

/// Model-free run with learning on throughout.
pub fn run_baseline(name: EnvName, novelty: NoveltySpec, config: AgentConfig, seed: u64) -> Result<RunResult> {
    Runner::for_env(AgentKind::Baseline, name, novelty, config, seed)?.run()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub env: EnvName,
    pub novelty: NoveltySpec,
    pub agent: AgentKind,
    pub seed: u64,
    pub config: AgentConfig,
    /// Where to write the CSV event log, if anywhere.
    pub events: Option<PathBuf>,
}

pub fn run_spec(spec: &RunSpec) -> Result<RunResult> {
    let mut runner = Runner::for_env(spec.agent, spec.env, spec.novelty, spec.config.clone(), spec.seed)?;
    if let Some(path) = &spec.events {
        runner.record_events(File::create(path)?)?;
    }
    runner.run()
}

/// Runs independent experiments on the rayon pool; results keep input order.
pub fn run_matrix(specs: &[RunSpec]) -> Vec<Result<RunResult>> {
    use rayon::prelude::*;
    specs.par_iter().map(run_spec).collect()
}
