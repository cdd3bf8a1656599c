//! Axis-aligned bounding intervals over a [`FeatureSchema`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature::{FeatureSchema, Slot, SymbolSet, SymbolicState};

/// Hyperrectangle in feature space: inclusive integer bounds per integer
/// axis plus an allowed symbol set per categorical feature.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Aabi {
    min: Box<[i32]>,
    max: Box<[i32]>,
    sets: Box<[SymbolSet]>,
}

/// Feature-level bound, as written in JSON.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureBound {
    Interval { min: Vec<i32>, max: Vec<i32> },
    Set { set: Vec<String> },
}

impl Aabi {
    /// AABI covering exactly `state`.
    pub fn point(state: &SymbolicState, n_int: usize) -> Self {
        let slots = state.slots();
        Aabi {
            min: slots[..n_int].into(),
            max: slots[..n_int].into(),
            sets: slots[n_int..].iter().map(|&s| SymbolSet::singleton(s as u32)).collect(),
        }
    }

    /// Builds an AABI from one bound per schema feature, validating shape and
    /// domain membership.
    pub fn from_features(schema: &FeatureSchema, bounds: &[FeatureBound]) -> Result<Self> {
        if bounds.len() != schema.len() {
            return Err(Error::Schema(format!(
                "AABI has {} bounds, schema has {} features",
                bounds.len(),
                schema.len()
            )));
        }
        let mut min = vec![0; schema.int_slots()];
        let mut max = vec![0; schema.int_slots()];
        let mut sets = vec![SymbolSet::default(); schema.cat_slots()];
        for (i, b) in bounds.iter().enumerate() {
            match (schema.slot(i), b) {
                (Slot::Int { offset, axes }, FeatureBound::Interval { min: lo, max: hi })
                    if lo.len() == axes && hi.len() == axes =>
                {
                    min[offset..offset + axes].copy_from_slice(lo);
                    max[offset..offset + axes].copy_from_slice(hi);
                }
                (Slot::Cat { index }, FeatureBound::Set { set }) => {
                    for s in set {
                        sets[index].insert(schema.symbol_index(i, s)?);
                    }
                }
                _ => {
                    return Err(Error::Schema(format!(
                        "bound does not fit feature `{}`",
                        schema.features()[i].name
                    )))
                }
            }
        }
        let aabi = Aabi {
            min: min.into(),
            max: max.into(),
            sets: sets.into(),
        };
        aabi.validate(schema)?;
        Ok(aabi)
    }

    pub fn to_features(&self, schema: &FeatureSchema) -> Vec<FeatureBound> {
        (0..schema.len())
            .map(|i| match schema.slot(i) {
                Slot::Int { offset, axes } => FeatureBound::Interval {
                    min: self.min[offset..offset + axes].to_vec(),
                    max: self.max[offset..offset + axes].to_vec(),
                },
                Slot::Cat { index } => FeatureBound::Set {
                    set: self.sets[index]
                        .iter()
                        .map(|s| schema.symbol_name(i, s).to_string())
                        .collect(),
                },
            })
            .collect()
    }

    /// Shape, non-emptiness and domain checks.
    pub fn validate(&self, schema: &FeatureSchema) -> Result<()> {
        self.check_dims(schema)?;
        if self.is_empty() {
            return Err(Error::Domain("AABI is empty on some feature".into()));
        }
        for i in 0..schema.int_slots() {
            let (lo, hi) = schema.slot_bounds(i);
            if (self.min[i] as i64) < lo || (self.max[i] as i64) > hi {
                let (f, axis) = schema.int_slot_owner(i);
                return Err(Error::Domain(format!(
                    "AABI bound on `{}` axis {axis} outside the feature domain",
                    schema.features()[f].name
                )));
            }
        }
        for (c, set) in self.sets.iter().enumerate() {
            if !set.is_subset(schema.full_set(c)) {
                return Err(Error::Domain(format!(
                    "AABI set on `{}` contains unknown symbols",
                    schema.features()[schema.cat_slot_owner(c)].name
                )));
            }
        }
        Ok(())
    }

    fn check_dims(&self, schema: &FeatureSchema) -> Result<()> {
        if self.min.len() != schema.int_slots() || self.sets.len() != schema.cat_slots() {
            return Err(Error::Schema("AABI does not match schema".into()));
        }
        Ok(())
    }

    pub fn min(&self) -> &[i32] {
        &self.min
    }

    pub fn max(&self) -> &[i32] {
        &self.max
    }

    pub fn sets(&self) -> &[SymbolSet] {
        &self.sets
    }

    /// Some axis has min > max or some categorical set is empty.
    pub fn is_empty(&self) -> bool {
        self.min.iter().zip(self.max.iter()).any(|(lo, hi)| lo > hi) || self.sets.iter().any(|s| s.is_empty())
    }

    /// Separating-axis membership test: the point is outside iff some axis
    /// separates it from the interval.
    #[inline]
    pub fn contains(&self, state: &SymbolicState) -> bool {
        let slots = state.slots();
        let n = self.min.len();
        for i in 0..n {
            let v = slots[i];
            if v < self.min[i] || v > self.max[i] {
                return false;
            }
        }
        for (j, set) in self.sets.iter().enumerate() {
            if !set.contains(slots[n + j] as u32) {
                return false;
            }
        }
        true
    }

    #[inline]
    pub fn overlaps(&self, other: &Aabi) -> bool {
        for i in 0..self.min.len() {
            if self.min[i] > other.max[i] || other.min[i] > self.max[i] {
                return false;
            }
        }
        self.sets.iter().zip(other.sets.iter()).all(|(a, b)| a.intersects(*b))
    }

    /// `self` contains every point of `other`.
    pub fn encloses(&self, other: &Aabi) -> bool {
        self.min.iter().zip(other.min.iter()).all(|(a, b)| a <= b)
            && self.max.iter().zip(other.max.iter()).all(|(a, b)| a >= b)
            && other.sets.iter().zip(self.sets.iter()).all(|(o, s)| o.is_subset(*s))
    }

    /// Componentwise min/max against the point; set union on categoricals.
    pub fn relaxed(&self, state: &SymbolicState) -> Aabi {
        let slots = state.slots();
        let n = self.min.len();
        let mut out = self.clone();
        for i in 0..n {
            out.min[i] = out.min[i].min(slots[i]);
            out.max[i] = out.max[i].max(slots[i]);
        }
        for (j, set) in out.sets.iter_mut().enumerate() {
            set.insert(slots[n + j] as u32);
        }
        out
    }

    /// Smallest AABI enclosing both.
    pub fn hull(&self, other: &Aabi) -> Aabi {
        let mut out = self.clone();
        for i in 0..out.min.len() {
            out.min[i] = out.min[i].min(other.min[i]);
            out.max[i] = out.max[i].max(other.max[i]);
        }
        for (a, b) in out.sets.iter_mut().zip(other.sets.iter()) {
            a.0 |= b.0;
        }
        out
    }

    /// Number of lattice points covered (as f64; products overflow integers
    /// on wide schemas).
    pub fn volume(&self) -> f64 {
        let ints: f64 = self
            .min
            .iter()
            .zip(self.max.iter())
            .map(|(lo, hi)| (hi - lo + 1).max(0) as f64)
            .product();
        let cats: f64 = self.sets.iter().map(|s| s.len() as f64).product();
        ints * cats
    }

    /// Cuts the slab through `state` out of the AABI.
    ///
    /// The cut runs along the integer axis of largest extent (ties: lowest
    /// feature, then lowest axis). `lower` keeps values below the state's
    /// coordinate, `upper` keeps values above; halves that would be empty are
    /// dropped. When every integer axis is degenerate the state's symbol is
    /// removed from the widest categorical set instead, and the remainder is
    /// returned as `lower`. The state is contained in neither result.
    pub fn split(&self, state: &SymbolicState) -> (Option<Aabi>, Option<Aabi>) {
        debug_assert!(self.contains(state));
        let slots = state.slots();
        let n = self.min.len();
        let mut axis = None;
        let mut best = 0;
        for i in 0..n {
            let extent = self.max[i] - self.min[i];
            if extent > best {
                best = extent;
                axis = Some(i);
            }
        }
        if let Some(i) = axis {
            let v = slots[i];
            let lower = (v > self.min[i]).then(|| {
                let mut a = self.clone();
                a.max[i] = v - 1;
                a
            });
            let upper = (v < self.max[i]).then(|| {
                let mut a = self.clone();
                a.min[i] = v + 1;
                a
            });
            return (lower, upper);
        }
        let mut widest = None;
        let mut widest_len = 1;
        for (j, set) in self.sets.iter().enumerate() {
            if set.len() > widest_len {
                widest_len = set.len();
                widest = Some(j);
            }
        }
        match widest {
            Some(j) => {
                let mut a = self.clone();
                a.sets[j].remove(slots[n + j] as u32);
                (Some(a), None)
            }
            None => (None, None),
        }
    }
}

/// Checked point membership.
pub fn contains_point(schema: &FeatureSchema, aabi: &Aabi, state: &SymbolicState) -> Result<bool> {
    aabi.check_dims(schema)?;
    if state.slots().len() != schema.slot_count() {
        return Err(Error::Schema("state does not match schema".into()));
    }
    Ok(aabi.contains(state))
}

/// Checked interval overlap.
pub fn intervals_overlap(schema: &FeatureSchema, a: &Aabi, b: &Aabi) -> Result<bool> {
    a.check_dims(schema)?;
    b.check_dims(schema)?;
    Ok(a.overlaps(b))
}

pub fn relax_interval(aabi: &Aabi, state: &SymbolicState) -> Aabi {
    aabi.relaxed(state)
}

pub fn split_interval(aabi: &Aabi, state: &SymbolicState) -> (Option<Aabi>, Option<Aabi>) {
    aabi.split(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature::{FeatureSpec, FeatureValue};

    fn loc_schema() -> FeatureSchema {
        FeatureSchema::new(vec![FeatureSpec::integer("AgentLocation", &[0, 0], &[9, 9])]).unwrap()
    }

    fn rect(s: &FeatureSchema, min: [i32; 2], max: [i32; 2]) -> Aabi {
        Aabi::from_features(
            s,
            &[FeatureBound::Interval {
                min: min.to_vec(),
                max: max.to_vec(),
            }],
        )
        .unwrap()
    }

    fn at(s: &FeatureSchema, p: [i32; 2]) -> SymbolicState {
        s.state(&[FeatureValue::int(&p)]).unwrap()
    }

    #[test]
    fn point_membership() {
        let s = loc_schema();
        assert!(contains_point(&s, &rect(&s, [3, 5], [3, 5]), &at(&s, [3, 5])).unwrap());
        assert!(!rect(&s, [3, 5], [3, 5]).contains(&at(&s, [3, 6])));
    }

    #[test]
    fn scalar_separation() {
        let s = FeatureSchema::new(vec![FeatureSpec::integer("x", &[0], &[9])]).unwrap();
        let a = Aabi::from_features(
            &s,
            &[FeatureBound::Interval {
                min: vec![1],
                max: vec![3],
            }],
        )
        .unwrap();
        assert!(!a.contains(&s.state(&[FeatureValue::int(&[4])]).unwrap()));
        assert!(a.contains(&s.state(&[FeatureValue::int(&[3])]).unwrap()));
    }

    #[test]
    fn categorical_membership() {
        let s = FeatureSchema::new(vec![FeatureSpec::categorical(
            "DoorState",
            &["Locked", "Closed", "Open"],
        )])
        .unwrap();
        let locked = s.state(&[FeatureValue::sym("Locked")]).unwrap();
        let only_locked = Aabi::from_features(
            &s,
            &[FeatureBound::Set {
                set: vec!["Locked".into()],
            }],
        )
        .unwrap();
        let passable = Aabi::from_features(
            &s,
            &[FeatureBound::Set {
                set: vec!["Closed".into(), "Open".into()],
            }],
        )
        .unwrap();
        assert!(only_locked.contains(&locked));
        assert!(!passable.contains(&locked));
    }

    #[test]
    fn overlap_cases() {
        let s = loc_schema();
        assert!(intervals_overlap(&s, &rect(&s, [1, 1], [5, 4]), &rect(&s, [3, 3], [8, 8])).unwrap());
        assert!(!rect(&s, [1, 1], [2, 2]).overlaps(&rect(&s, [3, 3], [4, 4])));
        let a = rect(&s, [2, 2], [6, 6]);
        assert!(a.overlaps(&a.clone()));
    }

    #[test]
    fn relaxation_examples() {
        let s = loc_schema();
        assert_eq!(
            relax_interval(&rect(&s, [1, 1], [5, 2]), &at(&s, [3, 4])),
            rect(&s, [1, 1], [5, 4])
        );
        let a = rect(&s, [1, 1], [5, 4]);
        assert_eq!(a.relaxed(&at(&s, [2, 2])), a);
        assert_eq!(
            rect(&s, [2, 2], [2, 2]).relaxed(&at(&s, [1, 1])),
            rect(&s, [1, 1], [2, 2])
        );
    }

    #[test]
    fn split_examples() {
        let s = loc_schema();
        let (lo, hi) = split_interval(&rect(&s, [1, 1], [8, 8]), &at(&s, [3, 5]));
        assert_eq!(lo, Some(rect(&s, [1, 1], [2, 8])));
        assert_eq!(hi, Some(rect(&s, [4, 1], [8, 8])));

        assert_eq!(rect(&s, [3, 5], [3, 5]).split(&at(&s, [3, 5])), (None, None));

        let (lo, hi) = rect(&s, [1, 1], [1, 8]).split(&at(&s, [1, 1]));
        assert_eq!(lo, None);
        assert_eq!(hi, Some(rect(&s, [1, 2], [1, 8])));
    }

    #[test]
    fn categorical_only_split_removes_symbol() {
        let s = FeatureSchema::new(vec![
            FeatureSpec::integer("P", &[0], &[3]),
            FeatureSpec::categorical("C", &["a", "b", "c"]),
        ])
        .unwrap();
        let a = Aabi::from_features(
            &s,
            &[
                FeatureBound::Interval {
                    min: vec![2],
                    max: vec![2],
                },
                FeatureBound::Set {
                    set: vec!["a".into(), "c".into()],
                },
            ],
        )
        .unwrap();
        let p = s.state(&[FeatureValue::int(&[2]), FeatureValue::sym("c")]).unwrap();
        let (lo, hi) = a.split(&p);
        assert!(hi.is_none());
        let lo = lo.unwrap();
        assert!(!lo.contains(&p));
        assert_eq!(lo.sets()[0], SymbolSet::singleton(0));
    }

    #[test]
    fn out_of_domain_bounds_rejected() {
        let s = loc_schema();
        let r = Aabi::from_features(
            &s,
            &[FeatureBound::Interval {
                min: vec![0, 0],
                max: vec![10, 3],
            }],
        );
        assert!(matches!(r, Err(Error::Domain(_))));
        let r = Aabi::from_features(
            &s,
            &[FeatureBound::Interval {
                min: vec![4, 0],
                max: vec![3, 3],
            }],
        );
        assert!(matches!(r, Err(Error::Domain(_))));
    }
}
