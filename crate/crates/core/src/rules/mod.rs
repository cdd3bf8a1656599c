//! Interval-rule world model.
//!
//! A rule pairs a list of disjoint [`Aabi`] state preconditions with an action
//! precondition and an [`Effect`]. The model is learned online from single
//! transitions and is kept collision-free: two rules sharing an action but
//! disagreeing on the effect never have overlapping preconditions, so at most
//! one effect applies to any (state, action).

mod aabi;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use aabi::{contains_point, intervals_overlap, relax_interval, split_interval, Aabi, FeatureBound};

use crate::action::Action;
use crate::error::{Error, Result};
use crate::feature::{DeltaEntry, FeatureSchema, StateDelta, SymbolicState};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RuleId(pub u64);

impl std::fmt::Display for RuleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// State change plus the reward and terminal flag observed with it.
#[derive(Clone, Debug, PartialEq)]
pub struct Effect {
    pub delta: StateDelta,
    pub reward: f64,
    pub terminal: bool,
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleStats {
    pub hits: u64,
    pub violations: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rule {
    pub id: RuleId,
    pub preconditions: Vec<Aabi>,
    pub action: Action,
    pub effect: Effect,
    pub stats: RuleStats,
}

impl Rule {
    pub fn matches(&self, state: &SymbolicState) -> bool {
        self.preconditions.iter().any(|a| a.contains(state))
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "case", rename_all = "snake_case")]
pub enum UpdateOutcome {
    NoChange { rule: RuleId },
    Created { rule: RuleId },
    Relaxed { rule: RuleId },
    SplitAndCreated { split: RuleId, created: RuleId },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub next_state: SymbolicState,
    pub reward: f64,
    pub terminal: bool,
    pub rule: RuleId,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Predicted {
    Known(Prediction),
    Unknown,
}

impl Predicted {
    pub fn known(&self) -> Option<&Prediction> {
        match self {
            Predicted::Known(p) => Some(p),
            Predicted::Unknown => None,
        }
    }

    /// Exact agreement with an observed outcome, reward and terminal included.
    pub fn agrees_with(&self, next: &SymbolicState, reward: f64, terminal: bool) -> bool {
        match self {
            Predicted::Known(p) => p.next_state == *next && p.reward == reward && p.terminal == terminal,
            Predicted::Unknown => false,
        }
    }
}

/// Collision-free rule set approximating the transition function.
#[derive(Clone, Debug)]
pub struct RuleModel {
    schema: Arc<FeatureSchema>,
    /// Rules bucketed by action, each bucket in ascending id order.
    by_action: Vec<Vec<Rule>>,
    next_id: u64,
}

impl RuleModel {
    pub fn new(schema: Arc<FeatureSchema>) -> Self {
        RuleModel {
            schema,
            by_action: vec![Vec::new(); Action::COUNT],
            next_id: 0,
        }
    }

    pub fn schema(&self) -> &Arc<FeatureSchema> {
        &self.schema
    }

    /// Number of rules (K).
    pub fn len(&self) -> usize {
        self.by_action.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Total number of precondition intervals across all rules.
    pub fn interval_count(&self) -> usize {
        self.rules().map(|r| r.preconditions.len()).sum()
    }

    /// Rules in ascending id order.
    pub fn rules(&self) -> impl Iterator<Item = &Rule> {
        let mut all: Vec<&Rule> = self.by_action.iter().flatten().collect();
        all.sort_by_key(|r| r.id);
        all.into_iter()
    }

    pub fn rule(&self, id: RuleId) -> Option<&Rule> {
        self.by_action.iter().flatten().find(|r| r.id == id)
    }

    fn rule_mut(&mut self, id: RuleId) -> Option<&mut Rule> {
        self.by_action.iter_mut().flatten().find(|r| r.id == id)
    }

    pub fn rules_for(&self, action: Action) -> &[Rule] {
        &self.by_action[action.index()]
    }

    fn check_state(&self, state: &SymbolicState) -> Result<()> {
        if state.slots().len() != self.schema.slot_count() {
            return Err(Error::Schema(format!(
                "state has {} slots, model schema expects {}",
                state.slots().len(),
                self.schema.slot_count()
            )));
        }
        Ok(())
    }

    fn fresh_id(&mut self) -> RuleId {
        let id = RuleId(self.next_id);
        self.next_id += 1;
        id
    }

    fn create_point_rule(&mut self, prev: &SymbolicState, action: Action, effect: Effect) -> RuleId {
        let id = self.fresh_id();
        let n_int = self.schema.int_slots();
        self.by_action[action.index()].push(Rule {
            id,
            preconditions: vec![Aabi::point(prev, n_int)],
            action,
            effect,
            stats: RuleStats::default(),
        });
        id
    }

    /// Online update from one observed transition.
    ///
    /// Only the transition itself is consulted; no history is kept.
    pub fn update(
        &mut self,
        prev: &SymbolicState,
        action: Action,
        next: &SymbolicState,
        reward: f64,
        terminal: bool,
    ) -> Result<UpdateOutcome> {
        self.check_state(prev)?;
        self.check_state(next)?;
        let effect = Effect {
            delta: self.schema.diff(prev, next)?,
            reward,
            terminal,
        };
        let a = action.index();

        // No change: a same-effect rule already covers the prior state.
        if let Some(rule) = self.by_action[a]
            .iter_mut()
            .find(|r| r.effect == effect && r.matches(prev))
        {
            rule.stats.hits += 1;
            return Ok(UpdateOutcome::NoChange { rule: rule.id });
        }

        // Collision: a different-effect rule covers the prior state. Cut the
        // prior state's slab out of every covering interval.
        let mut split_ids = Vec::new();
        for rule in self.by_action[a].iter_mut() {
            let Some(k) = rule.preconditions.iter().position(|p| p.contains(prev)) else {
                continue;
            };
            let (lower, upper) = rule.preconditions[k].split(prev);
            rule.preconditions.remove(k);
            rule.preconditions.extend(lower);
            rule.preconditions.extend(upper);
            split_ids.push(rule.id);
        }
        if let Some(&split) = split_ids.first() {
            self.by_action[a].retain(|r| !r.preconditions.is_empty());
            let created = self.create_point_rule(prev, action, effect);
            return Ok(UpdateOutcome::SplitAndCreated { split, created });
        }

        // Relaxation: grow the same-effect interval whose volume increases least.
        let mut best: Option<(f64, usize, usize)> = None;
        for (ri, rule) in self.by_action[a].iter().enumerate() {
            if rule.effect != effect {
                continue;
            }
            for (k, p) in rule.preconditions.iter().enumerate() {
                let grow = p.relaxed(prev).volume() - p.volume();
                if best.is_none_or(|(g, _, _)| grow < g) {
                    best = Some((grow, ri, k));
                }
            }
        }
        let Some((_, ri, k)) = best else {
            let created = self.create_point_rule(prev, action, effect);
            return Ok(UpdateOutcome::Created { rule: created });
        };

        let bucket = &self.by_action[a];
        let rule = &bucket[ri];
        let mut grown = rule.preconditions[k].relaxed(prev);
        // Absorb sibling intervals the grown one now touches so a rule's
        // intervals stay pairwise disjoint.
        let mut absorbed = vec![false; rule.preconditions.len()];
        absorbed[k] = true;
        loop {
            let mut changed = false;
            for (j, p) in rule.preconditions.iter().enumerate() {
                if !absorbed[j] && grown.overlaps(p) {
                    grown = grown.hull(p);
                    absorbed[j] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        let collides = bucket
            .iter()
            .filter(|other| other.effect != effect)
            .flat_map(|other| other.preconditions.iter())
            .any(|p| p.overlaps(&grown));

        let n_int = self.schema.int_slots();
        let rule = &mut self.by_action[a][ri];
        if collides {
            rule.preconditions.push(Aabi::point(prev, n_int));
        } else {
            let mut kept: Vec<Aabi> = rule
                .preconditions
                .drain(..)
                .zip(absorbed)
                .filter_map(|(p, gone)| (!gone).then_some(p))
                .collect();
            kept.insert(k.min(kept.len()), grown);
            rule.preconditions = kept;
        }
        Ok(UpdateOutcome::Relaxed { rule: rule.id })
    }

    /// Next-state prediction for (state, action).
    ///
    /// Same-effect overlaps resolve to the lowest rule id; a different-effect
    /// overlap means the collision-freedom invariant was broken.
    pub fn predict(&self, state: &SymbolicState, action: Action) -> Result<Predicted> {
        self.check_state(state)?;
        let mut found: Option<&Rule> = None;
        for rule in &self.by_action[action.index()] {
            if !rule.matches(state) {
                continue;
            }
            match found {
                None => found = Some(rule),
                Some(first) if first.effect != rule.effect => {
                    return Err(Error::InvariantViolation(format!(
                        "rules {} and {} both match with different effects",
                        first.id, rule.id
                    )))
                }
                Some(_) => {}
            }
        }
        let Some(rule) = found else {
            return Ok(Predicted::Unknown);
        };
        Ok(Predicted::Known(Prediction {
            next_state: self.schema.apply_delta(state, &rule.effect.delta)?,
            reward: rule.effect.reward,
            terminal: rule.effect.terminal,
            rule: rule.id,
        }))
    }

    pub fn note_hit(&mut self, id: RuleId) {
        if let Some(r) = self.rule_mut(id) {
            r.stats.hits += 1;
        }
    }

    pub fn note_violation(&mut self, id: RuleId) {
        if let Some(r) = self.rule_mut(id) {
            r.stats.violations += 1;
        }
    }

    /// Full structural check: non-empty, in-domain, intra-rule disjoint
    /// preconditions and cross-rule collision freedom.
    pub fn check_invariants(&self) -> Result<()> {
        for (a, bucket) in self.by_action.iter().enumerate() {
            for (i, rule) in bucket.iter().enumerate() {
                if rule.action.index() != a {
                    return Err(Error::InvariantViolation(format!(
                        "rule {} filed under wrong action",
                        rule.id
                    )));
                }
                if i > 0 && bucket[i - 1].id >= rule.id {
                    return Err(Error::InvariantViolation("rule ids out of order".into()));
                }
                if rule.preconditions.is_empty() {
                    return Err(Error::InvariantViolation(format!(
                        "rule {} has no preconditions",
                        rule.id
                    )));
                }
                for (x, p) in rule.preconditions.iter().enumerate() {
                    p.validate(&self.schema)
                        .map_err(|e| Error::InvariantViolation(format!("rule {}: {e}", rule.id)))?;
                    if rule.preconditions[x + 1..].iter().any(|q| q.overlaps(p)) {
                        return Err(Error::InvariantViolation(format!(
                            "rule {} has overlapping preconditions",
                            rule.id
                        )));
                    }
                }
                for other in &bucket[i + 1..] {
                    if other.effect == rule.effect {
                        continue;
                    }
                    for p in &rule.preconditions {
                        if other.preconditions.iter().any(|q| q.overlaps(p)) {
                            return Err(Error::InvariantViolation(format!(
                                "rules {} and {} collide",
                                rule.id, other.id
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_records())?)
    }

    pub fn to_records(&self) -> Vec<RuleRecord> {
        self.rules()
            .map(|r| RuleRecord {
                id: r.id,
                preconditions: r
                    .preconditions
                    .iter()
                    .map(|p| {
                        self.schema
                            .features()
                            .iter()
                            .zip(p.to_features(&self.schema))
                            .map(|(f, bound)| NamedBound {
                                feature: f.name.clone(),
                                bound,
                            })
                            .collect()
                    })
                    .collect(),
                action: r.action,
                effect: EffectRecord {
                    delta: self
                        .schema
                        .features()
                        .iter()
                        .zip(r.effect.delta.entries(&self.schema))
                        .map(|(f, change)| NamedDelta {
                            feature: f.name.clone(),
                            change,
                        })
                        .collect(),
                    reward: r.effect.reward,
                    terminal: r.effect.terminal,
                },
                stats: r.stats,
            })
            .collect()
    }

    pub fn from_json(schema: Arc<FeatureSchema>, json: &str) -> Result<Self> {
        let records: Vec<RuleRecord> = serde_json::from_str(json)?;
        Self::from_records(schema, records)
    }

    pub fn from_records(schema: Arc<FeatureSchema>, records: Vec<RuleRecord>) -> Result<Self> {
        let mut model = RuleModel::new(schema.clone());
        let mut records = records;
        records.sort_by_key(|r| r.id);
        for rec in records {
            let preconditions = rec
                .preconditions
                .iter()
                .map(|bounds| {
                    check_names(&schema, bounds.iter().map(|b| b.feature.as_str()))?;
                    let bounds: Vec<FeatureBound> = bounds.iter().map(|b| b.bound.clone()).collect();
                    Aabi::from_features(&schema, &bounds)
                })
                .collect::<Result<Vec<_>>>()?;
            check_names(&schema, rec.effect.delta.iter().map(|d| d.feature.as_str()))?;
            let entries: Vec<DeltaEntry> = rec.effect.delta.iter().map(|d| d.change.clone()).collect();
            let delta = StateDelta::from_entries(&schema, &entries)?;
            model.next_id = model.next_id.max(rec.id.0 + 1);
            model.by_action[rec.action.index()].push(Rule {
                id: rec.id,
                preconditions,
                action: rec.action,
                effect: Effect {
                    delta,
                    reward: rec.effect.reward,
                    terminal: rec.effect.terminal,
                },
                stats: rec.stats,
            });
        }
        model.check_invariants()?;
        Ok(model)
    }
}

fn check_names<'a>(schema: &FeatureSchema, names: impl Iterator<Item = &'a str>) -> Result<()> {
    let names: Vec<&str> = names.collect();
    let expected: Vec<&str> = schema.features().iter().map(|f| f.name.as_str()).collect();
    if names != expected {
        return Err(Error::Schema(format!(
            "feature list {names:?} does not match schema {expected:?}"
        )));
    }
    Ok(())
}

/// JSON form of one rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleRecord {
    pub id: RuleId,
    /// One entry per disjoint interval, each listing every feature's bound.
    pub preconditions: Vec<Vec<NamedBound>>,
    pub action: Action,
    pub effect: EffectRecord,
    pub stats: RuleStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedBound {
    pub feature: String,
    #[serde(flatten)]
    pub bound: FeatureBound,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectRecord {
    pub delta: Vec<NamedDelta>,
    pub reward: f64,
    pub terminal: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedDelta {
    pub feature: String,
    pub change: DeltaEntry,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature::{FeatureSpec, FeatureValue};

    fn unlock_schema() -> Arc<FeatureSchema> {
        Arc::new(
            FeatureSchema::new(vec![
                FeatureSpec::integer("AgentLocation", &[0, 0], &[9, 9]),
                FeatureSpec::categorical("AgentFacing", &["East", "South", "West", "North"]),
                FeatureSpec::categorical("Inventory", &["None", "YellowKey", "BlueKey"]),
                FeatureSpec::categorical("DoorState", &["Locked", "Closed", "Open"]),
                FeatureSpec::integer("DoorLocation", &[0, 0], &[9, 9]),
            ])
            .unwrap(),
        )
    }

    fn unlock_pair(s: &FeatureSchema) -> (SymbolicState, SymbolicState) {
        let before = s
            .state(&[
                FeatureValue::int(&[3, 5]),
                FeatureValue::sym("East"),
                FeatureValue::sym("YellowKey"),
                FeatureValue::sym("Locked"),
                FeatureValue::int(&[3, 6]),
            ])
            .unwrap();
        let after = s
            .state(&[
                FeatureValue::int(&[3, 5]),
                FeatureValue::sym("East"),
                FeatureValue::sym("None"),
                FeatureValue::sym("Closed"),
                FeatureValue::int(&[3, 6]),
            ])
            .unwrap();
        (before, after)
    }

    #[test]
    fn creation_from_unlock() {
        let s = unlock_schema();
        let mut m = RuleModel::new(s.clone());
        let (before, after) = unlock_pair(&s);
        let out = m.update(&before, Action::Toggle, &after, 0.0, false).unwrap();
        assert_eq!(out, UpdateOutcome::Created { rule: RuleId(0) });
        let rule = m.rule(RuleId(0)).unwrap();
        assert_eq!(rule.preconditions, vec![Aabi::point(&before, s.int_slots())]);
        let bounds = rule.preconditions[0].to_features(&s);
        assert_eq!(
            bounds[0],
            FeatureBound::Interval {
                min: vec![3, 5],
                max: vec![3, 5]
            }
        );
        assert_eq!(
            bounds[2],
            FeatureBound::Set {
                set: vec!["YellowKey".into()]
            }
        );
        let entries = rule.effect.delta.entries(&s);
        assert_eq!(
            entries[3],
            DeltaEntry::Assign {
                from: vec!["Locked".into()],
                to: "Closed".into()
            }
        );
        assert_eq!(
            entries[2],
            DeltaEntry::Assign {
                from: vec!["YellowKey".into()],
                to: "None".into()
            }
        );

        let again = m.update(&before, Action::Toggle, &after, 0.0, false).unwrap();
        assert_eq!(again, UpdateOutcome::NoChange { rule: RuleId(0) });

        match m.predict(&before, Action::Toggle).unwrap() {
            Predicted::Known(p) => {
                assert_eq!(p.next_state, after);
                assert_eq!(p.reward, 0.0);
                assert!(!p.terminal);
            }
            Predicted::Unknown => panic!("expected a prediction"),
        }
        assert_eq!(m.predict(&before, Action::Forward).unwrap(), Predicted::Unknown);
    }

    fn forward_schema() -> Arc<FeatureSchema> {
        Arc::new(
            FeatureSchema::new(vec![
                FeatureSpec::integer("AgentLocation", &[0, 0], &[9, 9]),
                FeatureSpec::integer("WallLocation", &[0, 0], &[9, 9]),
            ])
            .unwrap(),
        )
    }

    fn fw(s: &FeatureSchema, p: [i32; 2]) -> SymbolicState {
        s.state(&[FeatureValue::int(&p), FeatureValue::int(&[3, 6])]).unwrap()
    }

    #[test]
    fn relaxation_grows_interval() {
        let s = forward_schema();
        let mut m = RuleModel::new(s.clone());
        m.update(&fw(&s, [1, 1]), Action::Forward, &fw(&s, [1, 2]), 0.0, false)
            .unwrap();
        let out = m
            .update(&fw(&s, [5, 2]), Action::Forward, &fw(&s, [5, 3]), 0.0, false)
            .unwrap();
        assert_eq!(out, UpdateOutcome::Relaxed { rule: RuleId(0) });
        let out = m
            .update(&fw(&s, [3, 4]), Action::Forward, &fw(&s, [3, 5]), 0.0, false)
            .unwrap();
        assert_eq!(out, UpdateOutcome::Relaxed { rule: RuleId(0) });
        let bounds = m.rule(RuleId(0)).unwrap().preconditions[0].to_features(&s);
        assert_eq!(
            bounds[0],
            FeatureBound::Interval {
                min: vec![1, 1],
                max: vec![5, 4]
            }
        );
    }

    #[test]
    fn wall_collision_splits_and_creates() {
        let s = forward_schema();
        let mut m = RuleModel::new(s.clone());
        m.update(&fw(&s, [1, 1]), Action::Forward, &fw(&s, [1, 2]), 0.0, false)
            .unwrap();
        m.update(&fw(&s, [8, 7]), Action::Forward, &fw(&s, [8, 8]), 0.0, false)
            .unwrap();
        m.update(&fw(&s, [1, 8]), Action::Forward, &fw(&s, [1, 9]), 0.0, false)
            .unwrap();
        m.update(&fw(&s, [8, 1]), Action::Forward, &fw(&s, [8, 2]), 0.0, false)
            .unwrap();
        let wide = &m.rule(RuleId(0)).unwrap().preconditions;
        assert_eq!(wide.len(), 1);
        assert_eq!(
            wide[0].to_features(&s)[0],
            FeatureBound::Interval {
                min: vec![1, 1],
                max: vec![8, 8]
            }
        );

        let blocked = fw(&s, [3, 5]);
        let out = m.update(&blocked, Action::Forward, &blocked, 0.0, false).unwrap();
        assert_eq!(
            out,
            UpdateOutcome::SplitAndCreated {
                split: RuleId(0),
                created: RuleId(1)
            }
        );
        let halves: Vec<_> = m
            .rule(RuleId(0))
            .unwrap()
            .preconditions
            .iter()
            .map(|p| p.to_features(&s)[0].clone())
            .collect();
        assert_eq!(
            halves,
            vec![
                FeatureBound::Interval {
                    min: vec![1, 1],
                    max: vec![2, 8]
                },
                FeatureBound::Interval {
                    min: vec![4, 1],
                    max: vec![8, 8]
                },
            ]
        );
        assert!(m.rule(RuleId(1)).unwrap().effect.delta.is_identity());
        m.check_invariants().unwrap();
        assert!(m
            .predict(&blocked, Action::Forward)
            .unwrap()
            .agrees_with(&blocked, 0.0, false));
    }

    #[test]
    fn empty_split_deletes_rule() {
        let s = forward_schema();
        let mut m = RuleModel::new(s.clone());
        let a = fw(&s, [2, 2]);
        m.update(&a, Action::Toggle, &fw(&s, [2, 3]), 0.0, false).unwrap();
        let out = m.update(&a, Action::Toggle, &a, 0.0, false).unwrap();
        assert_eq!(
            out,
            UpdateOutcome::SplitAndCreated {
                split: RuleId(0),
                created: RuleId(1)
            }
        );
        assert!(m.rule(RuleId(0)).is_none());
        assert_eq!(m.len(), 1);
    }

    #[test]
    fn reward_mismatch_is_a_collision() {
        let s = forward_schema();
        let mut m = RuleModel::new(s.clone());
        let a = fw(&s, [2, 2]);
        let b = fw(&s, [2, 3]);
        m.update(&a, Action::Forward, &b, 0.0, false).unwrap();
        let out = m.update(&a, Action::Forward, &b, -1.0, true).unwrap();
        assert!(matches!(out, UpdateOutcome::SplitAndCreated { .. }));
        assert!(m.predict(&a, Action::Forward).unwrap().agrees_with(&b, -1.0, true));
    }

    #[test]
    fn blocked_relaxation_falls_back_to_point() {
        let s = forward_schema();
        let mut m = RuleModel::new(s.clone());
        // different-effect rule sitting between the two same-effect samples
        let mid = fw(&s, [1, 3]);
        m.update(&mid, Action::Forward, &mid, 0.0, false).unwrap();
        m.update(&fw(&s, [1, 1]), Action::Forward, &fw(&s, [1, 2]), 0.0, false)
            .unwrap();
        let out = m
            .update(&fw(&s, [1, 5]), Action::Forward, &fw(&s, [1, 6]), 0.0, false)
            .unwrap();
        assert_eq!(out, UpdateOutcome::Relaxed { rule: RuleId(1) });
        assert_eq!(m.rule(RuleId(1)).unwrap().preconditions.len(), 2);
        m.check_invariants().unwrap();
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let s = forward_schema();
        let mut m = RuleModel::new(s.clone());
        m.update(&fw(&s, [1, 1]), Action::Forward, &fw(&s, [1, 2]), 0.0, false)
            .unwrap();
        m.update(&fw(&s, [4, 4]), Action::Forward, &fw(&s, [4, 5]), 0.0, false)
            .unwrap();
        let blocked = fw(&s, [2, 2]);
        m.update(&blocked, Action::Forward, &blocked, 0.0, false).unwrap();
        let json = m.to_json().unwrap();
        let back = RuleModel::from_json(s.clone(), &json).unwrap();
        assert_eq!(back.to_json().unwrap(), json);
        assert_eq!(back.rules().count(), m.rules().count());
    }

    #[test]
    fn corrupt_json_is_rejected() {
        let s = forward_schema();
        let bad = r#"[{"id":0,"preconditions":[[{"feature":"AgentLocation","min":[1,1],"max":[1,1]}]],
            "action":"Forward","effect":{"delta":[],"reward":0.0,"terminal":false},"stats":{"hits":0,"violations":0}}]"#;
        assert!(RuleModel::from_json(s, bad).is_err());
    }

    #[test]
    fn schema_mismatch_on_update() {
        let s = forward_schema();
        let mut m = RuleModel::new(s);
        let other = FeatureSchema::new(vec![FeatureSpec::integer("X", &[0], &[3])]).unwrap();
        let x = other.state(&[FeatureValue::int(&[1])]).unwrap();
        assert!(matches!(
            m.update(&x, Action::Forward, &x, 0.0, false),
            Err(Error::Schema(_))
        ));
        assert!(matches!(m.predict(&x, Action::Forward), Err(Error::Schema(_))));
    }
}
