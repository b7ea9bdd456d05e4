//! Factors of variation: a two-level named space of controllable environment
//! properties (`group.property`), with selector resolution, seeded sampling
//! and fixed-value overrides.
//!
//! Every leaf owns a [`Domain`] and a canonical default. A reset draws a
//! complete [`Assignment`]: selected leaves are sampled uniformly from their
//! domain, fixed leaves take the caller's value, everything else stays at its
//! default.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Selector that expands to every leaf of a space.
pub const ALL: &str = "all";

/// Complete leaf-name → value map.
pub type Assignment = BTreeMap<String, Value>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VariationError {
    #[error("unknown variation selector `{selector}`; valid selectors: {}", valid.join(", "))]
    UnknownSelector { selector: String, valid: Vec<String> },
    #[error("`{0}` is not a leaf name of this variation space")]
    UnknownLeaf(String),
    #[error("value {value} for `{leaf}` is outside its domain {domain}")]
    OutOfDomain { leaf: String, value: Value, domain: Domain },
    #[error("invalid leaf name `{0}`: expected exactly two levels `group.property`")]
    BadName(String),
    #[error("leaf `{0}` registered twice")]
    Duplicate(String),
    #[error("invalid domain for `{leaf}`: {reason}")]
    InvalidDomain { leaf: String, reason: String },
    #[error("cannot parse `{text}` for `{leaf}`: expected {expected}")]
    Parse {
        leaf: String,
        text: String,
        expected: String,
    },
    #[error("invalid options document: {0}")]
    Options(String),
}

/// A concrete value of one leaf. Scalars are length-1 vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(Vec<i64>),
    Real(Vec<f64>),
    Choice(String),
}

impl Value {
    pub fn real(x: f64) -> Self {
        Value::Real(vec![x])
    }

    pub fn int(x: i64) -> Self {
        Value::Int(vec![x])
    }

    pub fn choice(s: impl Into<String>) -> Self {
        Value::Choice(s.into())
    }

    /// First real component; integers are widened.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Real(v) => v.first().copied(),
            Value::Int(v) => v.first().map(|&x| x as f64),
            Value::Choice(_) => None,
        }
    }

    pub fn as_reals(&self) -> Option<Vec<f64>> {
        match self {
            Value::Real(v) => Some(v.clone()),
            Value::Int(v) => Some(v.iter().map(|&x| x as f64).collect()),
            Value::Choice(_) => None,
        }
    }

    pub fn as_ints(&self) -> Option<&[i64]> {
        match self {
            Value::Int(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_choice(&self) -> Option<&str> {
        match self {
            Value::Choice(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn list<T: fmt::Debug>(f: &mut fmt::Formatter<'_>, xs: &[T]) -> fmt::Result {
            if xs.len() == 1 {
                return write!(f, "{:?}", xs[0]);
            }
            write!(f, "(")?;
            for (i, x) in xs.iter().enumerate() {
                if i > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{x:?}")?;
            }
            write!(f, ")")
        }
        match self {
            Value::Int(v) => list(f, v),
            Value::Real(v) => list(f, v),
            Value::Choice(s) => write!(f, "{s}"),
        }
    }
}

/// Value domain of one leaf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Domain {
    /// Per-dimension closed interval `[low, high]`.
    ContinuousBox {
        low: Vec<f64>,
        high: Vec<f64>,
    },
    /// Per-dimension inclusive integer range. Colors are three dimensions in `[0, 255]`.
    IntegerRange {
        low: Vec<i64>,
        high: Vec<i64>,
    },
    Categorical {
        choices: Vec<String>,
    },
    Fixed {
        value: Value,
    },
}

impl Domain {
    pub fn interval(low: f64, high: f64) -> Self {
        Domain::ContinuousBox {
            low: vec![low],
            high: vec![high],
        }
    }

    pub fn boxed(low: &[f64], high: &[f64]) -> Self {
        Domain::ContinuousBox {
            low: low.to_vec(),
            high: high.to_vec(),
        }
    }

    pub fn int_range(low: i64, high: i64) -> Self {
        Domain::IntegerRange {
            low: vec![low],
            high: vec![high],
        }
    }

    pub fn rgb() -> Self {
        Domain::IntegerRange {
            low: vec![0; 3],
            high: vec![255; 3],
        }
    }

    pub fn categorical<S: AsRef<str>>(choices: &[S]) -> Self {
        Domain::Categorical {
            choices: choices.iter().map(|s| s.as_ref().to_string()).collect(),
        }
    }

    fn check(&self) -> Result<(), String> {
        match self {
            Domain::ContinuousBox { low, high } => {
                if low.is_empty() || low.len() != high.len() {
                    return Err("bounds must be non-empty and of equal length".into());
                }
                if low
                    .iter()
                    .zip(high)
                    .any(|(l, h)| !l.is_finite() || !h.is_finite() || l > h)
                {
                    return Err("requires finite low <= high per dimension".into());
                }
                Ok(())
            }
            Domain::IntegerRange { low, high } => {
                if low.is_empty() || low.len() != high.len() {
                    return Err("bounds must be non-empty and of equal length".into());
                }
                if low.iter().zip(high).any(|(l, h)| l > h) {
                    return Err("requires min <= max per dimension".into());
                }
                Ok(())
            }
            Domain::Categorical { choices } => {
                if choices.is_empty() {
                    Err("needs at least one choice".into())
                } else {
                    Ok(())
                }
            }
            Domain::Fixed { .. } => Ok(()),
        }
    }

    pub fn contains(&self, value: &Value) -> bool {
        match (self, value) {
            (Domain::ContinuousBox { low, high }, Value::Real(v)) => {
                v.len() == low.len()
                    && v.iter()
                        .zip(low.iter().zip(high))
                        .all(|(x, (l, h))| x.is_finite() && l <= x && x <= h)
            }
            (Domain::IntegerRange { low, high }, Value::Int(v)) => {
                v.len() == low.len() && v.iter().zip(low.iter().zip(high)).all(|(x, (l, h))| l <= x && x <= h)
            }
            (Domain::Categorical { choices }, Value::Choice(c)) => choices.contains(c),
            (Domain::Fixed { value: fixed }, v) => fixed == v,
            _ => false,
        }
    }

    /// Integer literals given for a real-valued leaf are widened.
    pub fn coerce(&self, value: &Value) -> Value {
        match (self, value) {
            (Domain::ContinuousBox { .. }, Value::Int(v)) => Value::Real(v.iter().map(|&x| x as f64).collect()),
            _ => value.clone(),
        }
    }

    /// Uniform draw. Consumes exactly one generator call per dimension
    /// (one per categorical draw, none for fixed domains).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Value {
        match self {
            Domain::ContinuousBox { low, high } => Value::Real(
                low.iter()
                    .zip(high)
                    .map(|(&l, &h)| {
                        let u: f64 = rng.random();
                        (l + u * (h - l)).clamp(l, h)
                    })
                    .collect(),
            ),
            Domain::IntegerRange { low, high } => {
                Value::Int(low.iter().zip(high).map(|(&l, &h)| rng.random_range(l..=h)).collect())
            }
            Domain::Categorical { choices } => Value::Choice(choices[rng.random_range(0..choices.len())].clone()),
            Domain::Fixed { value } => value.clone(),
        }
    }

    /// Parses the comma-separated text form used on the command line
    /// (`255,0,0`, `0.3,0.7`, `square`).
    pub fn parse_value(&self, leaf: &str, text: &str) -> Result<Value, VariationError> {
        let err = |expected: &str| VariationError::Parse {
            leaf: leaf.to_string(),
            text: text.to_string(),
            expected: expected.to_string(),
        };
        let parts: Vec<&str> = text
            .trim()
            .trim_start_matches(['(', '['])
            .trim_end_matches([')', ']'])
            .split(',')
            .map(str::trim)
            .collect();
        match self {
            Domain::ContinuousBox { low, .. } => {
                let v = parts
                    .iter()
                    .map(|p| p.parse::<f64>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| err(&format!("{} real number(s)", low.len())))?;
                Ok(Value::Real(v))
            }
            Domain::IntegerRange { low, .. } => {
                let v = parts
                    .iter()
                    .map(|p| p.parse::<i64>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| err(&format!("{} integer(s)", low.len())))?;
                Ok(Value::Int(v))
            }
            Domain::Categorical { .. } => Ok(Value::Choice(text.trim().to_string())),
            Domain::Fixed { value } => match value {
                Value::Choice(_) => Ok(Value::Choice(text.trim().to_string())),
                Value::Int(_) => Domain::IntegerRange {
                    low: vec![],
                    high: vec![],
                }
                .parse_value(leaf, text),
                Value::Real(_) => Domain::ContinuousBox {
                    low: vec![],
                    high: vec![],
                }
                .parse_value(leaf, text),
            },
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Domain::ContinuousBox { low, high } => write!(f, "box {low:?}..={high:?}"),
            Domain::IntegerRange { low, high } => write!(f, "integers {low:?}..={high:?}"),
            Domain::Categorical { choices } => write!(f, "one of {{{}}}", choices.join(", ")),
            Domain::Fixed { value } => write!(f, "fixed {value}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Leaf {
    domain: Domain,
    default: Value,
    value: Value,
}

/// Hierarchical space of factors of variation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VariationSpace {
    leaves: BTreeMap<String, Leaf>,
}

fn split_name(name: &str) -> Option<(&str, &str)> {
    let (group, prop) = name.split_once('.')?;
    let ok = |s: &str| !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
    (ok(group) && ok(prop)).then_some((group, prop))
}

impl VariationSpace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a leaf. Names must be exactly `group.property`.
    pub fn register(&mut self, name: &str, domain: Domain, default: Value) -> Result<&mut Self, VariationError> {
        if split_name(name).is_none() {
            return Err(VariationError::BadName(name.to_string()));
        }
        if self.leaves.contains_key(name) {
            return Err(VariationError::Duplicate(name.to_string()));
        }
        domain.check().map_err(|reason| VariationError::InvalidDomain {
            leaf: name.to_string(),
            reason,
        })?;
        if !domain.contains(&default) {
            return Err(VariationError::OutOfDomain {
                leaf: name.to_string(),
                value: default,
                domain,
            });
        }
        self.leaves.insert(
            name.to_string(),
            Leaf {
                domain,
                value: default.clone(),
                default,
            },
        );
        Ok(self)
    }

    /// Leaf names in lexicographic order.
    pub fn names(&self) -> Vec<String> {
        self.leaves.keys().cloned().collect()
    }

    /// Distinct group prefixes in lexicographic order.
    pub fn groups(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self
            .leaves
            .keys()
            .filter_map(|n| split_name(n).map(|(g, _)| g))
            .collect();
        set.into_iter().map(String::from).collect()
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.leaves.contains_key(name)
    }

    pub fn domain(&self, name: &str) -> Option<&Domain> {
        self.leaves.get(name).map(|l| &l.domain)
    }

    pub fn defaults(&self) -> Assignment {
        self.leaves
            .iter()
            .map(|(k, l)| (k.clone(), l.default.clone()))
            .collect()
    }

    /// Current values (last applied assignment, defaults initially).
    pub fn values(&self) -> Assignment {
        self.leaves.iter().map(|(k, l)| (k.clone(), l.value.clone())).collect()
    }

    pub fn value(&self, name: &str) -> Option<&Value> {
        self.leaves.get(name).map(|l| &l.value)
    }

    /// Replaces all current values. The assignment must be complete and in-domain.
    pub fn set_values(&mut self, assignment: &Assignment) -> Result<(), VariationError> {
        if let Some(v) = self.validate(assignment).into_iter().next() {
            return Err(v.into_error(self));
        }
        for (k, leaf) in self.leaves.iter_mut() {
            leaf.value = assignment[k].clone();
        }
        Ok(())
    }

    /// Expands selectors (`all`, group names, leaf names) into leaf names.
    pub fn resolve<S: AsRef<str>>(&self, selectors: &[S]) -> Result<BTreeSet<String>, VariationError> {
        let mut out = BTreeSet::new();
        for sel in selectors {
            let sel = sel.as_ref();
            if sel == ALL {
                out.extend(self.leaves.keys().cloned());
                continue;
            }
            if self.leaves.contains_key(sel) {
                out.insert(sel.to_string());
                continue;
            }
            let prefix = format!("{sel}.");
            let mut matched = false;
            for name in self.leaves.keys().filter(|n| n.starts_with(&prefix)) {
                matched = true;
                out.insert(name.clone());
            }
            if !matched {
                let mut valid = vec![ALL.to_string()];
                valid.extend(self.groups());
                valid.extend(self.names());
                return Err(VariationError::UnknownSelector {
                    selector: sel.to_string(),
                    valid,
                });
            }
        }
        Ok(out)
    }

    /// Draws a complete assignment. Leaves are visited in name order and
    /// only selected, non-fixed leaves consume randomness.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        selected: &BTreeSet<String>,
        rng: &mut R,
        fixed: &Assignment,
    ) -> Result<Assignment, VariationError> {
        for name in selected {
            if !self.leaves.contains_key(name) {
                return Err(VariationError::UnknownLeaf(name.clone()));
            }
        }
        let mut pinned = Assignment::new();
        for (name, value) in fixed {
            let leaf = self
                .leaves
                .get(name)
                .ok_or_else(|| VariationError::UnknownLeaf(name.clone()))?;
            let value = leaf.domain.coerce(value);
            if !leaf.domain.contains(&value) {
                return Err(VariationError::OutOfDomain {
                    leaf: name.clone(),
                    value,
                    domain: leaf.domain.clone(),
                });
            }
            pinned.insert(name.clone(), value);
        }
        let mut out = Assignment::new();
        for (name, leaf) in &self.leaves {
            let v = if let Some(v) = pinned.get(name) {
                v.clone()
            } else if selected.contains(name) {
                leaf.domain.sample(rng)
            } else {
                leaf.default.clone()
            };
            out.insert(name.clone(), v);
        }
        Ok(out)
    }

    /// Resolves and samples a [`VariationRequest`] in one go.
    pub fn sample_request<R: Rng + ?Sized>(
        &self,
        request: &VariationRequest,
        rng: &mut R,
    ) -> Result<Assignment, VariationError> {
        let selected = self.resolve(&request.variation)?;
        self.sample(&selected, rng, &request.variation_values)
    }

    /// Lists every leaf whose value is missing or out of domain, plus any
    /// key that is not a leaf. Empty means the assignment is valid.
    pub fn validate(&self, assignment: &Assignment) -> Vec<Violation> {
        let mut out = Vec::new();
        for (name, leaf) in &self.leaves {
            match assignment.get(name) {
                None => out.push(Violation::Missing(name.clone())),
                Some(v) if !leaf.domain.contains(v) => out.push(Violation::OutOfDomain {
                    leaf: name.clone(),
                    value: v.clone(),
                }),
                Some(_) => {}
            }
        }
        for name in assignment.keys() {
            if !self.leaves.contains_key(name) {
                out.push(Violation::Unknown(name.clone()));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Missing(String),
    OutOfDomain { leaf: String, value: Value },
    Unknown(String),
}

impl Violation {
    pub fn leaf(&self) -> &str {
        match self {
            Violation::Missing(l) | Violation::Unknown(l) => l,
            Violation::OutOfDomain { leaf, .. } => leaf,
        }
    }

    pub fn into_error(self, space: &VariationSpace) -> VariationError {
        match self {
            Violation::Missing(l) => VariationError::Options(format!("assignment is missing leaf `{l}`")),
            Violation::Unknown(l) => VariationError::UnknownLeaf(l),
            Violation::OutOfDomain { leaf, value } => {
                let domain = space.domain(&leaf).cloned().expect("leaf exists");
                VariationError::OutOfDomain { leaf, value, domain }
            }
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Missing(l) => write!(f, "`{l}` is missing"),
            Violation::OutOfDomain { leaf, value } => {
                write!(f, "`{leaf}` = {value} is out of domain")
            }
            Violation::Unknown(l) => write!(f, "`{l}` is not a leaf"),
        }
    }
}

/// Reset-time options: which leaves to resample and which to pin.
///
/// Deserializes from `{"variation": [...], "variation_values": {...}}`;
/// any other key is rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VariationRequest {
    pub variation: Vec<String>,
    pub variation_values: Assignment,
}

impl VariationRequest {
    pub fn new<S: Into<String>>(selectors: impl IntoIterator<Item = S>) -> Self {
        Self {
            variation: selectors.into_iter().map(Into::into).collect(),
            variation_values: Assignment::new(),
        }
    }

    pub fn with_fixed(mut self, leaf: impl Into<String>, value: Value) -> Self {
        self.variation_values.insert(leaf.into(), value);
        self
    }

    pub fn from_json(text: &str) -> Result<Self, VariationError> {
        serde_json::from_str(text).map_err(|e| VariationError::Options(e.to_string()))
    }

    /// Checks selectors and fixed keys against a space without sampling.
    pub fn check(&self, space: &VariationSpace) -> Result<(), VariationError> {
        space.resolve(&self.variation)?;
        for (k, v) in &self.variation_values {
            let domain = space.domain(k).ok_or_else(|| VariationError::UnknownLeaf(k.clone()))?;
            if !domain.contains(&domain.coerce(v)) {
                return Err(VariationError::OutOfDomain {
                    leaf: k.clone(),
                    value: v.clone(),
                    domain: domain.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Serializes an assignment as the plain-text key-value document used in
/// manifests and reports.
pub fn assignment_to_json(assignment: &Assignment) -> String {
    serde_json::to_string_pretty(assignment).expect("assignment serializes")
}

pub fn assignment_from_json(text: &str) -> Result<Assignment, VariationError> {
    serde_json::from_str(text).map_err(|e| VariationError::Options(e.to_string()))
}
