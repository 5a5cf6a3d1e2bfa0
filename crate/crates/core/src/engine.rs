//! The iteration loop: branch, sample and classify per model, score
//! consistency, freeze decided subregions, and check the stopping rule.
//!
//! All models share one partition. Each iteration branches every unfrozen
//! leaf, tops each leaf up to `c` samples per model (children inherit the
//! parent samples lying inside them), grows every model's global quantile
//! pool, reclassifies the unfrozen leaves, and freezes those consistently
//! classified as inside or outside the target region. Frozen leaves are
//! never branched, sampled, or reclassified again.

use std::collections::BTreeMap;

use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{
    assess, draw_uniform, quantile_bounds_with, stream, BinomialTails, ClassifierConfig,
    RegionModelState, Sample, SamplePool, CLASSES, INSIDE, OUTSIDE,
};
use crate::consistency::{
    consistency_scores, decide, CaseAssignment, ConsistencyParams, ConsistencyScores,
    ProbabilityTable, Verdict,
};
use crate::error::{Error, Result};
use crate::models::{builtin, ModelSpec};
use crate::scalar::Scalar;
use crate::space::{branch, DecisionSpace, Hyperbox};

const POOL_STREAM: u64 = 1;
const REGION_STREAM: u64 = 2;

fn default_fraction() -> f64 {
    0.10
}
fn default_stop_class() -> usize {
    INSIDE
}
fn default_max_iterations() -> usize {
    20
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Built-in model names, in model order.
    pub models: Vec<String>,
    /// Decision space; when present it must equal every model's domain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<Hyperbox<f64>>,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    pub consistency: ConsistencyParams,
    /// Stop once leaves consistently classified as `stop_class` cover this
    /// fraction of the space.
    #[serde(default = "default_fraction")]
    pub target_volume_fraction: f64,
    #[serde(default = "default_stop_class")]
    pub stop_class: usize,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default)]
    pub master_seed: u64,
}

impl RunConfig {
    pub fn new(models: &[&str], consistency: ConsistencyParams) -> Self {
        Self {
            models: models.iter().map(|m| m.to_string()).collect(),
            domain: None,
            classifier: ClassifierConfig::default(),
            consistency,
            target_volume_fraction: default_fraction(),
            stop_class: default_stop_class(),
            max_iterations: default_max_iterations(),
            master_seed: 0,
        }
    }

    /// Checks every field that does not depend on the models themselves.
    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::Config("at least one model is required".into()));
        }
        self.classifier.validate()?;
        self.consistency.validate(self.models.len())?;
        let f = self.target_volume_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::Config(format!(
                "target_volume_fraction must lie in (0,1], got {f}"
            )));
        }
        if !(1..=CLASSES).contains(&self.stop_class) {
            return Err(Error::Config(format!(
                "stop_class must lie in 1..={CLASSES}, got {}",
                self.stop_class
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be positive".into()));
        }
        Ok(())
    }

    /// Resolves the built-in models named by the config.
    pub fn resolve_models<T: Scalar>(&self) -> Result<Vec<ModelSpec<T>>> {
        self.models
            .iter()
            .enumerate()
            .map(|(i, name)| {
                builtin(name, i + 1).ok_or_else(|| Error::Config(format!("unknown model `{name}`")))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopReason {
    /// The consistently classified volume reached the target fraction.
    Volume,
    /// The iteration budget ran out first.
    Budget,
}

/// Full state of one leaf subregion.
#[derive(Debug, Clone)]
pub struct RegionRecord<T> {
    pub id: u64,
    pub bounds: Hyperbox<T>,
    pub per_model: Vec<RegionModelState<T>>,
    pub scores: ConsistencyScores<T>,
    pub verdict: Verdict,
    pub frozen: bool,
    pub decided_at: Option<usize>,
    /// Model evaluations spent on this leaf's own samples.
    pub evaluations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub leaves: usize,
    pub frozen_class1_volume_fraction: f64,
    pub frozen_class2_volume_fraction: f64,
    pub model_evaluations_total: u64,
}

/// Terminal report: every leaf with its verdict and provenance.
#[derive(Debug, Clone)]
pub struct SolutionSet<T> {
    pub records: Vec<RegionRecord<T>>,
    pub volume_by_verdict: BTreeMap<Verdict, T>,
    pub iterations_used: usize,
    pub stop_reason: StopReason,
    pub trace: Vec<TraceRow>,
}

impl<T: Scalar> SolutionSet<T> {
    /// Fraction of `total` covered by leaves with `verdict`.
    pub fn fraction(&self, verdict: Verdict, total: T) -> f64 {
        self.volume_by_verdict
            .get(&verdict)
            .map_or(0.0, |v| (*v / total).as_f64())
    }
}

pub struct Engine<T: Scalar> {
    cfg: RunConfig,
    models: Vec<ModelSpec<T>>,
    space: DecisionSpace<T>,
    regions: Vec<RegionRecord<T>>,
    pools: Vec<SamplePool<T>>,
    iteration: usize,
    pool_evaluations: u64,
    region_evaluations: u64,
    next_id: u64,
    trace: Vec<TraceRow>,
}

impl<T: Scalar> Engine<T> {
    /// Initializes a run over the config's built-in models.
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let models = cfg.resolve_models()?;
        Self::with_models(cfg, models)
    }

    /// Initializes a run over caller-supplied models; the config's model
    /// names are replaced by theirs.
    pub fn with_models(mut cfg: RunConfig, models: Vec<ModelSpec<T>>) -> Result<Self> {
        let first = models
            .first()
            .ok_or_else(|| Error::Config("at least one model is required".into()))?;
        cfg.models = models.iter().map(|m| m.name.clone()).collect();
        cfg.validate()?;
        let space = first.domain.clone();
        if let Some(m) = models.iter().find(|m| m.domain != space) {
            return Err(Error::Config(format!(
                "model `{}` has a different domain from `{}`",
                m.name, first.name
            )));
        }
        if let Some(domain) = &cfg.domain {
            let same = domain.dims() == space.dims()
                && (0..space.dims()).all(|d| {
                    T::lit(domain.lower[d]) == space.bounds().lower[d]
                        && T::lit(domain.upper[d]) == space.bounds().upper[d]
                });
            if !same {
                return Err(Error::Config(
                    "configured domain differs from the models' domain".into(),
                ));
            }
        }
        let n = models.len();
        let root = RegionRecord {
            id: 0,
            bounds: space.bounds().clone(),
            per_model: (0..n)
                .map(|m| RegionModelState::new(m, Vec::new()))
                .collect(),
            scores: ConsistencyScores(vec![T::zero(); CLASSES]),
            verdict: Verdict::Inconsistent,
            frozen: false,
            decided_at: None,
            evaluations: 0,
        };
        Ok(Self {
            cfg,
            pools: (0..n).map(SamplePool::new).collect(),
            models,
            space,
            regions: vec![root],
            iteration: 0,
            pool_evaluations: 0,
            region_evaluations: 0,
            next_id: 1,
            trace: Vec::new(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn space(&self) -> &DecisionSpace<T> {
        &self.space
    }

    pub fn regions(&self) -> &[RegionRecord<T>] {
        &self.regions
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    pub fn pool(&self, model: usize) -> &SamplePool<T> {
        &self.pools[model]
    }

    /// Model evaluations so far, pool samples included.
    pub fn evaluations_total(&self) -> u64 {
        self.pool_evaluations + self.region_evaluations
    }

    /// Volume of leaves whose verdict is `ConsistentAs(class)`.
    pub fn consistent_volume(&self, class: usize) -> T {
        self.regions
            .iter()
            .filter(|r| r.verdict == Verdict::ConsistentAs(class))
            .map(|r| r.bounds.volume())
            .fold(T::zero(), |a, b| a + b)
    }

    fn frozen_volume(&self, class: usize) -> T {
        self.regions
            .iter()
            .filter(|r| r.frozen && r.verdict == Verdict::ConsistentAs(class))
            .map(|r| r.bounds.volume())
            .fold(T::zero(), |a, b| a + b)
    }

    /// Runs one branch / sample / classify / score / freeze pass.
    pub fn iterate(&mut self) -> Result<()> {
        self.iteration += 1;
        let t = self.iteration;
        self.branch_leaves()?;
        self.top_up(t)?;
        self.grow_pools(t)?;
        self.classify_leaves()?;
        self.score_leaves(t)?;

        let total = self.space.volume();
        let row = TraceRow {
            iteration: t,
            leaves: self.regions.len(),
            frozen_class1_volume_fraction: (self.frozen_volume(INSIDE) / total).as_f64(),
            frozen_class2_volume_fraction: (self.frozen_volume(OUTSIDE) / total).as_f64(),
            model_evaluations_total: self.evaluations_total(),
        };
        info!(
            "iteration {t}: {} leaves, frozen inside {:.4}, frozen outside {:.4}",
            row.leaves, row.frozen_class1_volume_fraction, row.frozen_class2_volume_fraction
        );
        self.trace.push(row);
        Ok(())
    }

    fn branch_leaves(&mut self) -> Result<()> {
        let factor = self.cfg.classifier.branch_factor;
        let mut next = Vec::with_capacity(self.regions.len() * factor);
        for region in std::mem::take(&mut self.regions) {
            if region.frozen || !self.space.can_branch(&region.bounds, factor) {
                next.push(region);
                continue;
            }
            for child in branch(&region.bounds, factor)? {
                let mut per_model = Vec::with_capacity(region.per_model.len());
                for state in &region.per_model {
                    let mut inherited = Vec::new();
                    for s in &state.samples {
                        if self.space.contains(&child, &s.point)? {
                            inherited.push(s.clone());
                        }
                    }
                    per_model.push(RegionModelState::new(state.model, inherited));
                }
                next.push(RegionRecord {
                    id: self.next_id,
                    bounds: child,
                    per_model,
                    scores: region.scores.clone(),
                    verdict: Verdict::Inconsistent,
                    frozen: false,
                    decided_at: None,
                    evaluations: 0,
                });
                self.next_id += 1;
            }
        }
        self.regions = next;
        Ok(())
    }

    fn top_up(&mut self, t: usize) -> Result<()> {
        let c = self.cfg.classifier.samples_per_region;
        let seed = self.cfg.master_seed;
        let models = &self.models;
        let spent: u64 = self
            .regions
            .par_iter_mut()
            .filter(|r| !r.frozen)
            .map(|region| {
                let mut spent = 0;
                for (m, state) in region.per_model.iter_mut().enumerate() {
                    let shortfall = c.saturating_sub(state.samples.len());
                    if shortfall == 0 {
                        continue;
                    }
                    let mut rng = stream(seed, &[REGION_STREAM, m as u64, region.id, t as u64]);
                    for point in draw_uniform(&region.bounds, shortfall, &mut rng) {
                        let value = models[m].evaluate_unchecked(&point);
                        state.samples.push(Sample { point, value });
                    }
                    spent += shortfall as u64;
                }
                region.evaluations += spent;
                spent
            })
            .sum();
        self.region_evaluations += spent;
        Ok(())
    }

    fn grow_pools(&mut self, t: usize) -> Result<()> {
        let increment = self.cfg.classifier.global_pool_increment;
        let seed = self.cfg.master_seed;
        let bounds = self.space.bounds();
        self.pools
            .par_iter_mut()
            .zip(&self.models)
            .enumerate()
            .for_each(|(m, (pool, model))| {
                let mut rng = stream(seed, &[POOL_STREAM, m as u64, t as u64]);
                let points = draw_uniform(bounds, increment, &mut rng);
                pool.extend(points.iter().map(|p| model.evaluate_unchecked(p)));
            });
        self.pool_evaluations += (increment * self.models.len()) as u64;
        Ok(())
    }

    fn classify_leaves(&mut self) -> Result<()> {
        let cfg = &self.cfg.classifier;
        let delta = T::lit(cfg.delta);
        let prepared = self
            .pools
            .iter()
            .map(|pool| {
                let tails = BinomialTails::new(pool.len(), delta);
                let bounds = quantile_bounds_with(pool, &tails, cfg)?;
                debug!(
                    "model {}: pool {} bounds [{}, {}]",
                    pool.model,
                    pool.len(),
                    bounds.lower,
                    bounds.upper
                );
                Ok((tails, bounds))
            })
            .collect::<Result<Vec<_>>>()?;
        let pools = &self.pools;
        self.regions
            .par_iter_mut()
            .filter(|r| !r.frozen)
            .try_for_each(|region| {
                for (m, state) in region.per_model.iter_mut().enumerate() {
                    let (tails, bounds) = &prepared[m];
                    assess(state, &pools[m], tails, bounds, cfg)?;
                }
                Ok(())
            })
    }

    fn score_leaves(&mut self, t: usize) -> Result<()> {
        let params = self.cfg.consistency;
        let n = self.models.len();
        for region in self.regions.iter_mut().filter(|r| !r.frozen) {
            let mut table = ProbabilityTable::zeros(n, CLASSES);
            let mut labels = Vec::with_capacity(n);
            for (m, state) in region.per_model.iter().enumerate() {
                let label = state
                    .label
                    .ok_or_else(|| Error::InvalidState("unclassified leaf".into()))?;
                table.set(m, label, state.p);
                labels.push(label);
            }
            let case = CaseAssignment::new(labels, CLASSES)?;
            region.scores = consistency_scores(&case, &table)?;
            region.verdict = decide(&region.scores, &params);
            if matches!(region.verdict, Verdict::ConsistentAs(k) if k == INSIDE || k == OUTSIDE) {
                region.frozen = true;
                region.decided_at = Some(t);
            }
        }
        Ok(())
    }

    /// Volume criterion or iteration budget.
    pub fn stopping_met(&self) -> bool {
        self.stop_reason().is_some()
    }

    fn stop_reason(&self) -> Option<StopReason> {
        let target = self.space.volume() * T::lit(self.cfg.target_volume_fraction);
        if self.iteration > 0 && self.consistent_volume(self.cfg.stop_class) >= target {
            Some(StopReason::Volume)
        } else if self.iteration >= self.cfg.max_iterations {
            Some(StopReason::Budget)
        } else {
            None
        }
    }

    /// Iterates until the stopping rule holds and reports the leaves.
    pub fn run(mut self) -> Result<SolutionSet<T>> {
        let reason = loop {
            if let Some(reason) = self.stop_reason() {
                break reason;
            }
            self.iterate()?;
        };
        Ok(self.finish(reason))
    }

    fn finish(self, stop_reason: StopReason) -> SolutionSet<T> {
        let mut volume_by_verdict = BTreeMap::new();
        for k in 1..=CLASSES {
            volume_by_verdict.insert(Verdict::ConsistentAs(k), T::zero());
        }
        volume_by_verdict.insert(Verdict::Inconsistent, T::zero());
        for r in &self.regions {
            let slot = volume_by_verdict.entry(r.verdict).or_insert_with(T::zero);
            *slot = *slot + r.bounds.volume();
        }
        SolutionSet {
            records: self.regions,
            volume_by_verdict,
            iterations_used: self.iteration,
            stop_reason,
            trace: self.trace,
        }
    }
}

/// Convenience wrapper: initialize from `cfg` and run to termination.
pub fn run<T: Scalar>(cfg: RunConfig) -> Result<SolutionSet<T>> {
    Engine::new(cfg)?.run()
}
