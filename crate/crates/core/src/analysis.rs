//! Exact probabilistic analysis of the consistency rule.
//!
//! With independent models, each of the `K^N` joint labelings (cases) of a
//! subregion has probability `Π_n p_n^{Y_n}`. Summing over the cases whose
//! scores admit the correct class, or some other class, gives the
//! probabilities of consistent-correct and consistent-incorrect outcomes;
//! the remainder is the probability of an inconsistent verdict.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::consistency::{
    consistency_scores, decide, CaseAssignment, ConsistencyParams, ProbabilityTable, Verdict,
};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Largest `K^N` that [`enumerate_cases`] will materialize.
pub const MAX_CASES: u128 = 10_000_000;

/// Per-model true classes and the classification probability table.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario<T> {
    true_classes: Vec<usize>,
    probs: ProbabilityTable<T>,
}

impl<T: Scalar> Scenario<T> {
    /// Rows of `probs` must sum to one within `1e-9` (looser for `f32`,
    /// where the tolerance is a few units of rounding).
    pub fn new(true_classes: Vec<usize>, probs: ProbabilityTable<T>) -> Result<Self> {
        let tolerance = (16.0 * T::epsilon().as_f64()).max(1e-9);
        if true_classes.len() != probs.models() {
            return Err(Error::InvalidArgument(format!(
                "{} true classes for {} models",
                true_classes.len(),
                probs.models()
            )));
        }
        CaseAssignment::new(true_classes.clone(), probs.classes())?;
        for n in 0..probs.models() {
            let sum: f64 = probs.row(n).iter().map(|p| p.as_f64()).sum();
            if (sum - 1.0).abs() > tolerance {
                return Err(Error::InvalidArgument(format!(
                    "row {n} of the probability table sums to {sum}"
                )));
            }
        }
        Ok(Self {
            true_classes,
            probs,
        })
    }

    pub fn models(&self) -> usize {
        self.probs.models()
    }

    pub fn classes(&self) -> usize {
        self.probs.classes()
    }

    pub fn true_classes(&self) -> &[usize] {
        &self.true_classes
    }

    pub fn probs(&self) -> &ProbabilityTable<T> {
        &self.probs
    }
}

/// On-disk form of a scenario: true classes and table rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub true_classes: Vec<usize>,
    pub probs: Vec<Vec<f64>>,
}

impl ScenarioFile {
    pub fn to_scenario<T: Scalar>(&self) -> Result<Scenario<T>> {
        let rows = self
            .probs
            .iter()
            .map(|row| row.iter().map(|&p| T::lit(p)).collect())
            .collect();
        Scenario::new(
            self.true_classes.clone(),
            ProbabilityTable::from_rows(rows)?,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutcomeProbabilities<T> {
    pub p_correct: T,
    pub p_incorrect: T,
    pub p_inconsistent: T,
    /// Ideal-classifier verdict class at these thresholds.
    pub correct_class: Option<usize>,
    /// Class the outcomes were scored against; see [`reference_class`].
    pub reference_class: Option<usize>,
}

/// All `K^N` cases in lexicographic order (last model varies fastest).
pub fn enumerate_cases(models: usize, classes: usize) -> Result<Vec<CaseAssignment>> {
    if models == 0 || classes == 0 {
        return Err(Error::InvalidArgument(
            "need at least one model and one class".into(),
        ));
    }
    let total = u32::try_from(models)
        .ok()
        .and_then(|n| (classes as u128).checked_pow(n))
        .filter(|&t| t <= MAX_CASES)
        .ok_or(Error::TooLarge {
            cases: (classes as u128).saturating_pow(models.min(u32::MAX as usize) as u32),
            limit: MAX_CASES,
        })? as usize;

    let mut out = Vec::with_capacity(total);
    let mut labels = vec![1usize; models];
    for _ in 0..total {
        out.push(CaseAssignment::new(labels.clone(), classes)?);
        for slot in labels.iter_mut().rev() {
            if *slot < classes {
                *slot += 1;
                break;
            }
            *slot = 1;
        }
    }
    Ok(out)
}

/// `Π_n p_n^{Y_n}`, assuming independent models.
pub fn case_probability<T: Scalar>(case: &CaseAssignment, scenario: &Scenario<T>) -> Result<T> {
    if case.models() != scenario.models() || case.classes() != scenario.classes() {
        return Err(Error::InvalidArgument(
            "case does not match the scenario".into(),
        ));
    }
    Ok(case
        .labels()
        .iter()
        .enumerate()
        .fold(T::one(), |acc, (n, &k)| acc * scenario.probs.get(n, k)))
}

/// Verdict of the ideal classifier (`Y_n = k_n^T` with probability one).
pub fn correct_class<T: Scalar>(
    scenario: &Scenario<T>,
    params: &ConsistencyParams,
) -> Option<usize> {
    let ideal = ideal_table::<T>(scenario.true_classes(), scenario.classes());
    let case = CaseAssignment::new(scenario.true_classes.clone(), scenario.classes())
        .expect("validated on construction");
    let scores = consistency_scores(&case, &ideal).expect("shapes match");
    decide(&scores, params).class()
}

/// The unique most common true class, if there is one.
pub fn plurality_class<T: Scalar>(scenario: &Scenario<T>) -> Option<usize> {
    let mut counts = vec![0usize; scenario.classes() + 1];
    for &k in scenario.true_classes() {
        counts[k] += 1;
    }
    let best = *counts.iter().max()?;
    let mut winners = counts.iter().enumerate().filter(|&(_, &c)| c == best);
    let (k, _) = winners.next()?;
    winners.next().is_none().then_some(k)
}

/// Class that counts as "correct": the ideal verdict when it is consistent,
/// else the plurality true class (the ideal verdict once `v` and `r` are
/// small enough). Raising `v` or `r` past the ideal scores therefore does
/// not change which class is correct. `None` only when the true classes
/// tie, in which case the ideal classifier is never consistent.
pub fn reference_class<T: Scalar>(
    scenario: &Scenario<T>,
    params: &ConsistencyParams,
) -> Option<usize> {
    correct_class(scenario, params).or_else(|| plurality_class(scenario))
}

pub(crate) fn ideal_table<T: Scalar>(
    true_classes: &[usize],
    classes: usize,
) -> ProbabilityTable<T> {
    let mut t = ProbabilityTable::zeros(true_classes.len(), classes);
    for (n, &k) in true_classes.iter().enumerate() {
        t.set(n, k, T::one());
    }
    t
}

/// Sums `weight(case)` over cases split by verdict relative to the
/// reference class.
fn accumulate<T: Scalar>(
    scenario: &Scenario<T>,
    params: &ConsistencyParams,
    mut weight: impl FnMut(&CaseAssignment) -> T,
) -> Result<(T, T, Option<usize>)> {
    let target = reference_class(scenario, params);
    let (mut correct, mut incorrect) = (T::zero(), T::zero());
    for case in enumerate_cases(scenario.models(), scenario.classes())? {
        let verdict = decide(&consistency_scores(&case, &scenario.probs)?, params);
        let hit = match (target, verdict) {
            (Some(k), Verdict::ConsistentAs(j)) => Some(j == k),
            (Some(_), Verdict::Inconsistent) => None,
            // no correct class: matching the ideal means staying inconsistent
            (None, Verdict::Inconsistent) => Some(true),
            (None, Verdict::ConsistentAs(_)) => Some(false),
        };
        match hit {
            Some(true) => correct = correct + weight(&case),
            Some(false) => incorrect = incorrect + weight(&case),
            None => {}
        }
    }
    Ok((correct, incorrect, target))
}

pub fn outcome_probabilities<T: Scalar>(
    scenario: &Scenario<T>,
    params: &ConsistencyParams,
) -> Result<OutcomeProbabilities<T>> {
    let (p_correct, p_incorrect, reference_class) = accumulate(scenario, params, |case| {
        case_probability(case, scenario).expect("enumerated from the scenario")
    })?;
    Ok(OutcomeProbabilities {
        p_correct,
        p_incorrect,
        p_inconsistent: T::one() - p_correct - p_incorrect,
        correct_class: correct_class(scenario, params),
        reference_class,
    })
}

/// Proposition-style sums: every factor of a model voting for its true class
/// is replaced by the guaranteed classification probability `(1 − α)^4`;
/// all other factors come from the scenario table. Returns
/// `(bound_correct, bound_incorrect)`.
pub fn proposition_bounds<T: Scalar>(
    scenario: &Scenario<T>,
    params: &ConsistencyParams,
    alpha: f64,
) -> Result<(T, T)> {
    let guaranteed = T::lit((1.0 - alpha).powi(4));
    let (correct, incorrect, _) = accumulate(scenario, params, |case| {
        case.labels()
            .iter()
            .enumerate()
            .fold(T::one(), |acc, (n, &k)| {
                let factor = if scenario.true_classes[n] == k {
                    guaranteed
                } else {
                    scenario.probs.get(n, k)
                };
                acc * factor
            })
    })?;
    Ok((correct, incorrect))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    V,
    R,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "v" => Ok(SweepAxis::V),
            "r" => Ok(SweepAxis::R),
            _ => Err(Error::InvalidArgument(format!(
                "sweep axis must be `v` or `r`, got `{s}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow<T> {
    pub param: f64,
    pub outcome: OutcomeProbabilities<T>,
}

/// Default sweep grid: `points` evenly spaced values on `(0, models]`.
pub fn default_grid(models: usize, points: usize) -> Vec<f64> {
    (1..=points)
        .map(|i| models as f64 * i as f64 / points as f64)
        .collect()
}

/// Outcome probabilities along one parameter axis, the other held fixed.
pub fn sweep<T: Scalar>(
    scenario: &Scenario<T>,
    axis: SweepAxis,
    fixed: f64,
    grid: &[f64],
) -> Result<Vec<SweepRow<T>>> {
    let n = scenario.models();
    grid.par_iter()
        .map(|&x| {
            let params = match axis {
                SweepAxis::V => ConsistencyParams::new(x, fixed),
                SweepAxis::R => ConsistencyParams::new(fixed, x),
            };
            params
                .validate(n)
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            Ok(SweepRow {
                param: x,
                outcome: outcome_probabilities(scenario, &params)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const HIGH: f64 = 0.6561;
    const MID: f64 = 0.1939;
    const LOW: f64 = 0.15;

    fn all_agree() -> Scenario<f64> {
        Scenario::new(
            vec![1, 1, 1],
            ProbabilityTable::from_rows(vec![vec![HIGH, MID, LOW]; 3]).unwrap(),
        )
        .unwrap()
    }

    fn two_agree() -> Scenario<f64> {
        Scenario::new(
            vec![1, 1, 2],
            ProbabilityTable::from_rows(vec![
                vec![HIGH, MID, LOW],
                vec![HIGH, MID, LOW],
                vec![MID, HIGH, LOW],
            ])
            .unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn case_counts_and_order() {
        let cases = enumerate_cases(3, 3).unwrap();
        assert_eq!(cases.len(), 27);
        assert_eq!(cases[0].labels(), &[1, 1, 1]);
        assert_eq!(cases[1].labels(), &[1, 1, 2]);
        assert_eq!(cases[26].labels(), &[3, 3, 3]);
        let tiny = enumerate_cases(1, 2).unwrap();
        assert_eq!(
            tiny.iter().map(|c| c.labels()[0]).collect::<Vec<_>>(),
            vec![1, 2]
        );
        for (n, k) in [(2, 2), (4, 3), (2, 5), (5, 2)] {
            assert_eq!(enumerate_cases(n, k).unwrap().len(), k.pow(n as u32));
        }
        assert!(matches!(
            enumerate_cases(15, 3),
            Err(Error::TooLarge { .. })
        ));
    }

    #[test]
    fn case_probability_examples() {
        let s = all_agree();
        let unanimous = CaseAssignment::new(vec![1, 1, 1], 3).unwrap();
        assert!((case_probability(&unanimous, &s).unwrap() - 0.282_429_536_481).abs() < 1e-12);
        let total: f64 = enumerate_cases(3, 3)
            .unwrap()
            .iter()
            .map(|c| case_probability(c, &s).unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-12);

        let zero_row = Scenario::new(
            vec![1],
            ProbabilityTable::from_rows(vec![vec![1.0, 0.0]]).unwrap(),
        )
        .unwrap();
        let c = CaseAssignment::new(vec![2], 2).unwrap();
        assert_eq!(case_probability(&c, &zero_row).unwrap(), 0.0);
    }

    #[test]
    fn scenario_rows_must_sum_to_one() {
        let t = ProbabilityTable::from_rows(vec![vec![0.5, 0.4, 0.0]]).unwrap();
        assert!(Scenario::new(vec![1], t).is_err());
    }

    #[test]
    fn correct_class_examples() {
        let p = ConsistencyParams::new(1.0, 1.0);
        assert_eq!(correct_class(&all_agree(), &p), Some(1));
        assert_eq!(correct_class(&two_agree(), &p), Some(1));
        let split = Scenario::new(
            vec![1, 2],
            ProbabilityTable::from_rows(vec![vec![0.9, 0.1], vec![0.1, 0.9]]).unwrap(),
        )
        .unwrap();
        assert_eq!(
            correct_class(&split, &ConsistencyParams::new(1.0, 1.0)),
            None
        );
    }

    #[test]
    fn only_the_unanimous_case_reaches_high_v() {
        let out = outcome_probabilities(&all_agree(), &ConsistencyParams::new(1.9, 0.01)).unwrap();
        assert!((out.p_correct - HIGH.powi(3)).abs() < 1e-12);
        assert_eq!(out.p_incorrect, 0.0);
    }

    #[test]
    fn unreachable_v_is_always_inconsistent() {
        for v in [2.0, 2.5, 3.0] {
            let out =
                outcome_probabilities(&all_agree(), &ConsistencyParams::new(v, 0.01)).unwrap();
            assert_eq!(out.p_inconsistent, 1.0);
        }
    }

    #[test]
    fn no_correct_class_counts_inconsistency_as_correct() {
        let split = Scenario::new(
            vec![1, 2],
            ProbabilityTable::from_rows(vec![vec![0.9, 0.1], vec![0.1, 0.9]]).unwrap(),
        )
        .unwrap();
        let out = outcome_probabilities(&split, &ConsistencyParams::new(1.0, 1.0)).unwrap();
        assert_eq!(out.correct_class, None);
        // cases (1,1) and (2,2) are consistent; (1,2), (2,1) are not
        assert!((out.p_incorrect - (0.09f64 + 0.09)).abs() < 1e-12);
        assert!((out.p_correct - (0.81f64 + 0.01)).abs() < 1e-12);
        assert_eq!(out.reference_class, None);
    }

    #[test]
    fn plurality_stays_correct_past_the_ideal_scores() {
        // ideal scores (2, 1, 0): no ideal verdict once r > 1
        let p = ConsistencyParams::new(0.01, 1.5);
        assert_eq!(correct_class(&two_agree(), &p), None);
        assert_eq!(reference_class(&two_agree(), &p), Some(1));
        let out = outcome_probabilities(&two_agree(), &ConsistencyParams::new(2.5, 0.01)).unwrap();
        assert_eq!(out.p_inconsistent, 1.0);
        assert_eq!(out.reference_class, Some(1));
    }

    #[test]
    fn proposition_substitution_identity() {
        // true-class probabilities equal (1-α)^4 exactly
        let s = all_agree();
        let p = ConsistencyParams::new(1.0, 0.5);
        let exact = outcome_probabilities(&s, &p).unwrap();
        let (bc, bi) = proposition_bounds(&s, &p, 0.1).unwrap();
        assert!((bc - exact.p_correct).abs() < 1e-15);
        assert!((bi - exact.p_incorrect).abs() < 1e-15);
    }

    #[test]
    fn perfect_classifiers_with_zero_alpha() {
        let s = Scenario::new(
            vec![1, 1, 2],
            ProbabilityTable::from_rows(vec![
                vec![1.0, 0.0, 0.0],
                vec![1.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0],
            ])
            .unwrap(),
        )
        .unwrap();
        let p = ConsistencyParams::new(1.0, 1.0);
        let exact = outcome_probabilities(&s, &p).unwrap();
        assert_eq!(exact.p_correct, 1.0);
        assert_eq!(proposition_bounds(&s, &p, 0.0).unwrap(), (1.0, 0.0));
    }

    #[test]
    fn sweep_rows_match_single_calls() {
        let s = two_agree();
        let grid = default_grid(3, 300);
        assert_eq!(grid.len(), 300);
        assert_eq!(grid[299], 3.0);
        let rows = sweep(&s, SweepAxis::R, 0.01, &grid).unwrap();
        for w in rows.windows(2) {
            assert!(
                w[1].outcome.p_incorrect <= w[0].outcome.p_incorrect,
                "{:?} {:?}",
                w[0],
                w[1]
            );
            assert!(w[1].outcome.p_correct <= w[0].outcome.p_correct);
        }
        let single = sweep(&s, SweepAxis::V, 0.01, &[0.7]).unwrap();
        let direct = outcome_probabilities(&s, &ConsistencyParams::new(0.7, 0.01)).unwrap();
        assert_eq!(single[0].outcome, direct);
        assert!(sweep(&s, SweepAxis::V, 0.01, &[3.5]).is_err());
        assert!(sweep(&s, SweepAxis::V, 0.01, &[0.0]).is_err());
    }

    #[test]
    fn f32_scenarios_work() {
        let s = Scenario::<f32>::new(
            vec![1, 1, 1],
            ProbabilityTable::from_rows(vec![vec![0.6561f32, 0.1939, 0.15]; 3]).unwrap(),
        )
        .unwrap();
        let out = outcome_probabilities(&s, &ConsistencyParams::new(1.9, 0.01)).unwrap();
        assert!((out.p_correct - 0.6561f32.powi(3)).abs() < 1e-6);
    }
}
