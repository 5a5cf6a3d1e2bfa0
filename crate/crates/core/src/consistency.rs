//! Consistency scores and the consistent-classification rule.
//!
//! For a subregion, the score of class `k` sums the classification
//! probabilities of the models that assigned `k`. Class `k` is a consistent
//! classification when its score reaches `v` and beats every other class's
//! score by at least `r`. Since `r > 0`, at most one class can qualify.
//!
//! Classes are 1-based throughout (`1..=K`); models are 0-based indices.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One joint labeling `(Y_1, …, Y_N)` of a subregion.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CaseAssignment {
    labels: Vec<usize>,
    classes: usize,
}

impl CaseAssignment {
    pub fn new(labels: Vec<usize>, classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidArgument(
                "a case needs at least one model".into(),
            ));
        }
        if let Some(bad) = labels.iter().find(|&&y| y == 0 || y > classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside 1..={classes}"
            )));
        }
        Ok(Self { labels, classes })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn models(&self) -> usize {
        self.labels.len()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Models assigning `class`.
    pub fn members(&self, class: usize) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(move |(_, &y)| y == class)
            .map(|(n, _)| n)
    }
}

/// `N × K` matrix of classification probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityTable<T> {
    models: usize,
    classes: usize,
    p: Vec<T>,
}

impl<T: Scalar> ProbabilityTable<T> {
    pub fn zeros(models: usize, classes: usize) -> Self {
        Self {
            models,
            classes,
            p: vec![T::zero(); models * classes],
        }
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let models = rows.len();
        let classes = rows.first().map_or(0, Vec::len);
        if models == 0 || classes == 0 {
            return Err(Error::InvalidArgument("probability table is empty".into()));
        }
        if rows.iter().any(|r| r.len() != classes) {
            return Err(Error::InvalidArgument("ragged probability table".into()));
        }
        let p: Vec<T> = rows.into_iter().flatten().collect();
        if let Some(bad) = p.iter().find(|&&x| !(x >= T::zero() && x <= T::one())) {
            return Err(Error::InvalidArgument(format!(
                "probability {bad} outside [0,1]"
            )));
        }
        Ok(Self { models, classes, p })
    }

    pub fn models(&self) -> usize {
        self.models
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, model: usize, class: usize) -> T {
        self.p[model * self.classes + class - 1]
    }

    pub fn set(&mut self, model: usize, class: usize, value: T) {
        self.p[model * self.classes + class - 1] = value;
    }

    pub fn row(&self, model: usize) -> &[T] {
        &self.p[model * self.classes..(model + 1) * self.classes]
    }
}

/// Thresholds of the consistency rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsistencyParams {
    pub v: f64,
    pub r: f64,
}

impl ConsistencyParams {
    pub fn new(v: f64, r: f64) -> Self {
        Self { v, r }
    }

    /// Checks `0 < v ≤ N` and `0 < r ≤ N`.
    pub fn validate(&self, models: usize) -> Result<()> {
        let n = models as f64;
        for (name, x) in [("v", self.v), ("r", self.r)] {
            if !(x > 0.0 && x <= n) {
                return Err(Error::Config(format!(
                    "{name} must satisfy 0 < {name} <= {models}, got {x}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-class scores `C_1..C_K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct ConsistencyScores<T>(pub Vec<T>);

impl<T: Scalar> ConsistencyScores<T> {
    pub fn get(&self, class: usize) -> T {
        self.0[class - 1]
    }

    pub fn classes(&self) -> usize {
        self.0.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Verdict {
    ConsistentAs(usize),
    Inconsistent,
}

impl Verdict {
    pub fn class(self) -> Option<usize> {
        match self {
            Verdict::ConsistentAs(k) => Some(k),
            Verdict::Inconsistent => None,
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::ConsistentAs(k) => write!(f, "consistent:{k}"),
            Verdict::Inconsistent => f.write_str("inconsistent"),
        }
    }
}

impl FromStr for Verdict {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "inconsistent" {
            return Ok(Verdict::Inconsistent);
        }
        s.strip_prefix("consistent:")
            .and_then(|k| k.parse::<usize>().ok())
            .filter(|&k| k > 0)
            .map(Verdict::ConsistentAs)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown verdict `{s}`")))
    }
}

impl Serialize for Verdict {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Verdict {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// `C_k = Σ_{n : Y_n = k} p_n^k`.
pub fn consistency_scores<T: Scalar>(
    case: &CaseAssignment,
    probs: &ProbabilityTable<T>,
) -> Result<ConsistencyScores<T>> {
    if probs.models() != case.models() || probs.classes() != case.classes() {
        return Err(Error::InvalidArgument(format!(
            "table is {}x{}, case has {} models and {} classes",
            probs.models(),
            probs.classes(),
            case.models(),
            case.classes()
        )));
    }
    let mut scores = vec![T::zero(); case.classes()];
    for (n, &k) in case.labels().iter().enumerate() {
        scores[k - 1] = scores[k - 1] + probs.get(n, k);
    }
    Ok(ConsistencyScores(scores))
}

/// Whether `class` meets `C_k ≥ v` and `C_k − C_j ≥ r` for every `j ≠ k`.
pub fn admits<T: Scalar>(
    scores: &ConsistencyScores<T>,
    params: &ConsistencyParams,
    class: usize,
) -> bool {
    let c = scores.get(class);
    let r = T::lit(params.r);
    c >= T::lit(params.v)
        && (1..=scores.classes())
            .filter(|&j| j != class)
            .all(|j| c - scores.get(j) >= r)
}

pub fn decide<T: Scalar>(scores: &ConsistencyScores<T>, params: &ConsistencyParams) -> Verdict {
    (1..=scores.classes())
        .find(|&k| admits(scores, params, k))
        .map_or(Verdict::Inconsistent, Verdict::ConsistentAs)
}
