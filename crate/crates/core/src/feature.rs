//! Symbolic feature schema, states and state deltas.
//!
//! A [`SymbolicState`] is a flat slot vector laid out by its [`FeatureSchema`]:
//! every integer axis of every integer feature comes first (in feature
//! order), followed by one slot per categorical feature holding the symbol
//! index. Keeping the two kinds in contiguous runs lets interval checks walk
//! plain slices without consulting the schema.

use std::collections::HashSet;
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest categorical domain representable by a [`SymbolSet`].
pub const MAX_SYMBOLS: usize = 64;

/// Value domain of a single feature.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "domain", rename_all = "snake_case")]
pub enum Domain {
    /// Inclusive per-axis integer bounds. A 2-D position has two axes.
    IntegerInterval { min: Vec<i32>, max: Vec<i32> },
    /// Finite ordered symbol set.
    Categorical(Vec<String>),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum FeatureKind {
    IntegerInterval,
    Categorical,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    #[serde(flatten)]
    pub domain: Domain,
}

impl FeatureSpec {
    pub fn integer(name: &str, min: &[i32], max: &[i32]) -> Self {
        FeatureSpec {
            name: name.to_string(),
            domain: Domain::IntegerInterval {
                min: min.to_vec(),
                max: max.to_vec(),
            },
        }
    }

    pub fn categorical(name: &str, symbols: &[&str]) -> Self {
        FeatureSpec {
            name: name.to_string(),
            domain: Domain::Categorical(symbols.iter().map(|s| s.to_string()).collect()),
        }
    }

    pub fn kind(&self) -> FeatureKind {
        match self.domain {
            Domain::IntegerInterval { .. } => FeatureKind::IntegerInterval,
            Domain::Categorical(_) => FeatureKind::Categorical,
        }
    }
}

/// Where a feature lives inside the flat slot vector.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Slot {
    /// `offset` into the integer run, `axes` consecutive slots.
    Int { offset: usize, axes: usize },
    /// Index into the categorical run.
    Cat { index: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum KeyMode {
    /// Mixed-radix packing; exact.
    Packed,
    /// Domain product exceeds 64 bits; FNV-1a over the slots.
    Hashed,
}

/// Ordered, immutable feature schema.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SchemaRepr", into = "SchemaRepr")]
pub struct FeatureSchema {
    features: Vec<FeatureSpec>,
    slots: Vec<Slot>,
    n_int: usize,
    n_cat: usize,
    /// Per flat slot: (domain minimum, radix).
    radix: Vec<(i64, u64)>,
    key_mode: KeyMode,
}

#[derive(Serialize, Deserialize)]
struct SchemaRepr {
    features: Vec<FeatureSpec>,
}

impl TryFrom<SchemaRepr> for FeatureSchema {
    type Error = Error;
    fn try_from(repr: SchemaRepr) -> Result<Self> {
        FeatureSchema::new(repr.features)
    }
}

impl From<FeatureSchema> for SchemaRepr {
    fn from(schema: FeatureSchema) -> Self {
        SchemaRepr {
            features: schema.features,
        }
    }
}

impl FeatureSchema {
    pub fn new(features: Vec<FeatureSpec>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Schema("schema has no features".into()));
        }
        let mut seen = HashSet::new();
        for f in &features {
            if !seen.insert(f.name.as_str()) {
                return Err(Error::Schema(format!("duplicate feature name `{}`", f.name)));
            }
            match &f.domain {
                Domain::IntegerInterval { min, max } => {
                    if min.is_empty() || min.len() != max.len() {
                        return Err(Error::Schema(format!(
                            "feature `{}` has malformed integer bounds",
                            f.name
                        )));
                    }
                    if min.iter().zip(max).any(|(lo, hi)| lo > hi) {
                        return Err(Error::Schema(format!("feature `{}` has an empty domain", f.name)));
                    }
                }
                Domain::Categorical(symbols) => {
                    if symbols.is_empty() {
                        return Err(Error::Schema(format!("feature `{}` has no symbols", f.name)));
                    }
                    if symbols.len() > MAX_SYMBOLS {
                        return Err(Error::Schema(format!(
                            "feature `{}` has more than {MAX_SYMBOLS} symbols",
                            f.name
                        )));
                    }
                    let distinct: HashSet<_> = symbols.iter().collect();
                    if distinct.len() != symbols.len() {
                        return Err(Error::Schema(format!("feature `{}` repeats a symbol", f.name)));
                    }
                }
            }
        }

        let mut slots = Vec::with_capacity(features.len());
        let mut int_radix = Vec::new();
        let mut cat_radix = Vec::new();
        for f in &features {
            match &f.domain {
                Domain::IntegerInterval { min, max } => {
                    slots.push(Slot::Int {
                        offset: int_radix.len(),
                        axes: min.len(),
                    });
                    for (lo, hi) in min.iter().zip(max) {
                        int_radix.push((*lo as i64, (*hi as i64 - *lo as i64 + 1) as u64));
                    }
                }
                Domain::Categorical(symbols) => {
                    slots.push(Slot::Cat { index: cat_radix.len() });
                    cat_radix.push((0, symbols.len() as u64));
                }
            }
        }
        let n_int = int_radix.len();
        let n_cat = cat_radix.len();
        let mut radix = int_radix;
        radix.extend(cat_radix);

        let mut product: u128 = 1;
        let mut key_mode = KeyMode::Packed;
        for &(_, r) in &radix {
            product = product.saturating_mul(r as u128);
            if product > u64::MAX as u128 {
                key_mode = KeyMode::Hashed;
                break;
            }
        }

        Ok(FeatureSchema {
            features,
            slots,
            n_int,
            n_cat,
            radix,
            key_mode,
        })
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn slot(&self, feature: usize) -> Slot {
        self.slots[feature]
    }

    /// Number of integer axes across all integer features.
    pub fn int_slots(&self) -> usize {
        self.n_int
    }

    pub fn cat_slots(&self) -> usize {
        self.n_cat
    }

    pub fn slot_count(&self) -> usize {
        self.n_int + self.n_cat
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.index_of(name)
            .ok_or_else(|| Error::Schema(format!("unknown feature `{name}`")))
    }

    /// Index of `symbol` within categorical feature `feature`.
    pub fn symbol_index(&self, feature: usize, symbol: &str) -> Result<u32> {
        match &self.features[feature].domain {
            Domain::Categorical(symbols) => {
                symbols
                    .iter()
                    .position(|s| s == symbol)
                    .map(|i| i as u32)
                    .ok_or_else(|| {
                        Error::Schema(format!(
                            "`{symbol}` is not a symbol of `{}`",
                            self.features[feature].name
                        ))
                    })
            }
            Domain::IntegerInterval { .. } => Err(Error::Schema(format!(
                "feature `{}` is not categorical",
                self.features[feature].name
            ))),
        }
    }

    pub fn symbol_name(&self, feature: usize, index: u32) -> &str {
        match &self.features[feature].domain {
            Domain::Categorical(symbols) => &symbols[index as usize],
            Domain::IntegerInterval { .. } => panic!("feature {feature} is not categorical"),
        }
    }

    /// Builds a state from feature-level values, validating every domain.
    pub fn state(&self, values: &[FeatureValue]) -> Result<SymbolicState> {
        if values.len() != self.features.len() {
            return Err(Error::Schema(format!(
                "expected {} feature values, got {}",
                self.features.len(),
                values.len()
            )));
        }
        let mut slots = vec![0i32; self.slot_count()];
        for (i, v) in values.iter().enumerate() {
            match (self.slots[i], v) {
                (Slot::Int { offset, axes }, FeatureValue::Int(xs)) => {
                    if xs.len() != axes {
                        return Err(Error::Schema(format!(
                            "feature `{}` expects {axes} axes",
                            self.features[i].name
                        )));
                    }
                    slots[offset..offset + axes].copy_from_slice(xs);
                }
                (Slot::Cat { index }, FeatureValue::Sym(s)) => {
                    slots[self.n_int + index] = self.symbol_index(i, s)? as i32;
                }
                _ => {
                    return Err(Error::Schema(format!(
                        "value kind mismatch for feature `{}`",
                        self.features[i].name
                    )))
                }
            }
        }
        let state = SymbolicState::from_slots(slots);
        self.validate(&state)?;
        Ok(state)
    }

    /// Convenience builder keyed by feature name; every feature must be given.
    pub fn state_by_name(&self, values: &[(&str, FeatureValue)]) -> Result<SymbolicState> {
        let mut ordered: Vec<Option<FeatureValue>> = vec![None; self.features.len()];
        for (name, v) in values {
            let i = self.require(name)?;
            ordered[i] = Some(v.clone());
        }
        let ordered = ordered
            .into_iter()
            .enumerate()
            .map(|(i, v)| v.ok_or_else(|| Error::Schema(format!("missing feature `{}`", self.features[i].name))))
            .collect::<Result<Vec<_>>>()?;
        self.state(&ordered)
    }

    /// Checks slot count and that every value lies inside its domain.
    pub fn validate(&self, state: &SymbolicState) -> Result<()> {
        if state.slots.len() != self.slot_count() {
            return Err(Error::Schema(format!(
                "state has {} slots, schema expects {}",
                state.slots.len(),
                self.slot_count()
            )));
        }
        for (i, (&v, &(lo, r))) in state.slots.iter().zip(&self.radix).enumerate() {
            let v = v as i64;
            if v < lo || v >= lo + r as i64 {
                return Err(Error::Domain(format!(
                    "slot {i} value {v} outside [{lo}, {}]",
                    lo + r as i64 - 1
                )));
            }
        }
        Ok(())
    }

    /// Feature-level view of one value.
    pub fn value(&self, state: &SymbolicState, feature: usize) -> FeatureValue {
        match self.slots[feature] {
            Slot::Int { offset, axes } => FeatureValue::Int(state.slots[offset..offset + axes].to_vec()),
            Slot::Cat { index } => FeatureValue::Sym(
                self.symbol_name(feature, state.slots[self.n_int + index] as u32)
                    .to_string(),
            ),
        }
    }

    pub fn value_by_name(&self, state: &SymbolicState, name: &str) -> Result<FeatureValue> {
        Ok(self.value(state, self.require(name)?))
    }

    pub fn diff(&self, prev: &SymbolicState, next: &SymbolicState) -> Result<StateDelta> {
        self.check_len(prev)?;
        self.check_len(next)?;
        let ints = prev
            .ints(self.n_int)
            .iter()
            .zip(next.ints(self.n_int))
            .map(|(a, b)| b - a)
            .collect();
        let cats = prev
            .cats(self.n_int)
            .iter()
            .zip(next.cats(self.n_int))
            .map(|(&a, &b)| {
                if a == b {
                    CatChange::Unchanged
                } else {
                    CatChange::Assign {
                        from: SymbolSet::singleton(a as u32),
                        to: b as u32,
                    }
                }
            })
            .collect();
        Ok(StateDelta { ints, cats })
    }

    /// Applies `delta` to `state`; out-of-domain results are errors, never clamped.
    pub fn apply_delta(&self, state: &SymbolicState, delta: &StateDelta) -> Result<SymbolicState> {
        self.check_len(state)?;
        if delta.ints.len() != self.n_int || delta.cats.len() != self.n_cat {
            return Err(Error::Schema("delta does not match schema".into()));
        }
        let mut slots = state.slots.to_vec();
        for (s, d) in slots[..self.n_int].iter_mut().zip(delta.ints.iter()) {
            *s += d;
        }
        for (s, c) in slots[self.n_int..].iter_mut().zip(delta.cats.iter()) {
            if let CatChange::Assign { to, .. } = c {
                *s = *to as i32;
            }
        }
        let out = SymbolicState::from_slots(slots);
        self.validate(&out)?;
        Ok(out)
    }

    pub fn state_key(&self, state: &SymbolicState) -> StateKey {
        match self.key_mode {
            KeyMode::Packed => {
                let mut key: u64 = 0;
                for (&v, &(lo, r)) in state.slots.iter().zip(&self.radix) {
                    key = key * r + (v as i64 - lo) as u64;
                }
                StateKey(key)
            }
            KeyMode::Hashed => {
                let mut h = Fnv1a::default();
                state.slots.hash(&mut h);
                StateKey(h.finish())
            }
        }
    }

    fn check_len(&self, state: &SymbolicState) -> Result<()> {
        if state.slots.len() != self.slot_count() {
            return Err(Error::Schema(format!(
                "state has {} slots, schema expects {}",
                state.slots.len(),
                self.slot_count()
            )));
        }
        Ok(())
    }

    /// Inclusive domain bounds of a flat slot.
    pub(crate) fn slot_bounds(&self, slot: usize) -> (i64, i64) {
        let (lo, r) = self.radix[slot];
        (lo, lo + r as i64 - 1)
    }

    /// Full-domain symbol mask of a categorical slot.
    pub(crate) fn full_set(&self, cat: usize) -> SymbolSet {
        SymbolSet::full(self.radix[self.n_int + cat].1 as u32)
    }

    /// Feature index and axis of a flat integer slot.
    pub fn int_slot_owner(&self, slot: usize) -> (usize, usize) {
        for (i, s) in self.slots.iter().enumerate() {
            if let Slot::Int { offset, axes } = *s {
                if slot >= offset && slot < offset + axes {
                    return (i, slot - offset);
                }
            }
        }
        panic!("integer slot {slot} out of range")
    }

    /// Feature index of a categorical slot.
    pub fn cat_slot_owner(&self, cat: usize) -> usize {
        self.slots
            .iter()
            .position(|s| matches!(s, Slot::Cat { index } if *index == cat))
            .expect("categorical slot out of range")
    }
}

#[derive(Default)]
struct Fnv1a(u64);

impl Hasher for Fnv1a {
    fn finish(&self) -> u64 {
        self.0
    }
    fn write(&mut self, bytes: &[u8]) {
        if self.0 == 0 {
            self.0 = 0xcbf2_9ce4_8422_2325;
        }
        for b in bytes {
            self.0 ^= *b as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }
}

/// Feature-level value, used at API boundaries and in JSON.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureValue {
    Int(Vec<i32>),
    Sym(String),
}

impl FeatureValue {
    pub fn int(xs: &[i32]) -> Self {
        FeatureValue::Int(xs.to_vec())
    }
    pub fn sym(s: &str) -> Self {
        FeatureValue::Sym(s.to_string())
    }
}

/// Flat, schema-laid-out state vector.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SymbolicState {
    slots: Box<[i32]>,
}

impl SymbolicState {
    /// Wraps raw slots. Callers outside the environment should prefer
    /// [`FeatureSchema::state`], which validates.
    pub fn from_slots(slots: Vec<i32>) -> Self {
        SymbolicState {
            slots: slots.into_boxed_slice(),
        }
    }

    pub fn slots(&self) -> &[i32] {
        &self.slots
    }

    #[inline]
    pub(crate) fn ints(&self, n_int: usize) -> &[i32] {
        &self.slots[..n_int]
    }

    #[inline]
    pub(crate) fn cats(&self, n_int: usize) -> &[i32] {
        &self.slots[n_int..]
    }
}

impl fmt::Debug for SymbolicState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "State{:?}", self.slots)
    }
}

/// Opaque state identifier; exact for every schema shipped with the crate.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateKey(pub u64);

/// Bit set over the symbols of one categorical feature.
#[derive(Copy, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct SymbolSet(pub u64);

impl SymbolSet {
    pub fn singleton(symbol: u32) -> Self {
        SymbolSet(1u64 << symbol)
    }

    pub fn full(n: u32) -> Self {
        if n >= 64 {
            SymbolSet(u64::MAX)
        } else {
            SymbolSet((1u64 << n) - 1)
        }
    }

    #[inline]
    pub fn contains(self, symbol: u32) -> bool {
        (self.0 >> symbol) & 1 == 1
    }

    pub fn insert(&mut self, symbol: u32) {
        self.0 |= 1u64 << symbol;
    }

    pub fn remove(&mut self, symbol: u32) {
        self.0 &= !(1u64 << symbol);
    }

    #[inline]
    pub fn intersects(self, other: SymbolSet) -> bool {
        self.0 & other.0 != 0
    }

    pub fn is_subset(self, other: SymbolSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn len(self) -> u32 {
        self.0.count_ones()
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = u32> {
        (0..64u32).filter(move |i| self.contains(*i))
    }
}

impl fmt::Debug for SymbolSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

/// Change of one categorical feature.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum CatChange {
    Unchanged,
    /// Any symbol of `from` becomes `to`.
    Assign {
        from: SymbolSet,
        to: u32,
    },
}

/// Per-slot difference between a successor and its prior state.
///
/// Integer axes carry additive offsets (zero on every axis means the feature
/// is unchanged); categorical slots carry absolute assignments.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct StateDelta {
    ints: Box<[i32]>,
    cats: Box<[CatChange]>,
}

/// Feature-level view of a [`StateDelta`] entry.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaEntry {
    Unchanged,
    Additive(Vec<i32>),
    Assign { from: Vec<String>, to: String },
}

impl StateDelta {
    pub fn identity(schema: &FeatureSchema) -> Self {
        StateDelta {
            ints: vec![0; schema.int_slots()].into_boxed_slice(),
            cats: vec![CatChange::Unchanged; schema.cat_slots()].into_boxed_slice(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.ints.iter().all(|d| *d == 0) && self.cats.iter().all(|c| *c == CatChange::Unchanged)
    }

    pub fn int_offsets(&self) -> &[i32] {
        &self.ints
    }

    pub fn cat_changes(&self) -> &[CatChange] {
        &self.cats
    }

    pub fn entries(&self, schema: &FeatureSchema) -> Vec<DeltaEntry> {
        (0..schema.len())
            .map(|i| match schema.slot(i) {
                Slot::Int { offset, axes } => {
                    let d = &self.ints[offset..offset + axes];
                    if d.iter().all(|x| *x == 0) {
                        DeltaEntry::Unchanged
                    } else {
                        DeltaEntry::Additive(d.to_vec())
                    }
                }
                Slot::Cat { index } => match self.cats[index] {
                    CatChange::Unchanged => DeltaEntry::Unchanged,
                    CatChange::Assign { from, to } => DeltaEntry::Assign {
                        from: from.iter().map(|s| schema.symbol_name(i, s).to_string()).collect(),
                        to: schema.symbol_name(i, to).to_string(),
                    },
                },
            })
            .collect()
    }

    pub fn from_entries(schema: &FeatureSchema, entries: &[DeltaEntry]) -> Result<Self> {
        if entries.len() != schema.len() {
            return Err(Error::Schema(format!(
                "delta has {} entries, schema has {} features",
                entries.len(),
                schema.len()
            )));
        }
        let mut delta = StateDelta::identity(schema);
        for (i, e) in entries.iter().enumerate() {
            match (schema.slot(i), e) {
                (_, DeltaEntry::Unchanged) => {}
                (Slot::Int { offset, axes }, DeltaEntry::Additive(d)) if d.len() == axes => {
                    delta.ints[offset..offset + axes].copy_from_slice(d);
                }
                (Slot::Cat { index }, DeltaEntry::Assign { from, to }) => {
                    let mut set = SymbolSet::default();
                    for s in from {
                        set.insert(schema.symbol_index(i, s)?);
                    }
                    delta.cats[index] = CatChange::Assign {
                        from: set,
                        to: schema.symbol_index(i, to)?,
                    };
                }
                _ => {
                    return Err(Error::Schema(format!(
                        "delta entry does not fit feature `{}`",
                        schema.features()[i].name
                    )))
                }
            }
        }
        Ok(delta)
    }
}
