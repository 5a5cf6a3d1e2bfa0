//! Per-model sampling, distribution-free quantile bounds, subregion
//! classification, and estimation of the classification probability.
//!
//! Each model keeps a global pool of uniform samples over the whole decision
//! space. One-sided order-statistic bounds `L ≤ q_δ ≤ U` on the model's
//! δ-quantile come from the pool; a subregion whose sampled maximum stays at
//! or below `L + ε` is labeled inside the target region, one whose sampled
//! minimum reaches `U` is labeled outside, and anything else is undetermined.
//! The reported probability `p = 1 − α′` is the confidence level at which the
//! subregion's own extreme sample would serve as the quantile bound.

mod binomial;

pub use binomial::{binom_cdf_le, binom_tail_ge, BinomialTails};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::space::Hyperbox;

/// Subregion lies inside the target region.
pub const INSIDE: usize = 1;
/// Subregion lies entirely outside the target region.
pub const OUTSIDE: usize = 2;
/// Neither test passed.
pub const UNDETERMINED: usize = 3;
/// Number of classes produced by this classifier.
pub const CLASSES: usize = 3;

fn default_delta() -> f64 {
    0.2
}
fn default_alpha() -> f64 {
    0.1
}
fn default_epsilon() -> f64 {
    0.4
}
fn default_samples() -> usize {
    20
}
fn default_branch() -> usize {
    2
}
fn default_pool_increment() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    /// Target quantile δ.
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// One-sided confidence parameter α.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Relaxation ε of the inside test, in objective units.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Samples per subregion per model (c).
    #[serde(default = "default_samples")]
    pub samples_per_region: usize,
    /// Children per branch (B).
    #[serde(default = "default_branch")]
    pub branch_factor: usize,
    /// Fresh pool samples per model per iteration.
    #[serde(default = "default_pool_increment")]
    pub global_pool_increment: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            delta: default_delta(),
            alpha: default_alpha(),
            epsilon: default_epsilon(),
            samples_per_region: default_samples(),
            branch_factor: default_branch(),
            global_pool_increment: default_pool_increment(),
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |x: f64| x > 0.0 && x < 1.0;
        if !open_unit(self.delta) {
            return Err(Error::Config(format!(
                "delta must lie in (0,1), got {}",
                self.delta
            )));
        }
        if !open_unit(self.alpha) {
            return Err(Error::Config(format!(
                "alpha must lie in (0,1), got {}",
                self.alpha
            )));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        if self.samples_per_region == 0 {
            return Err(Error::Config("samples_per_region must be positive".into()));
        }
        if self.branch_factor < 2 {
            return Err(Error::Config("branch_factor must be at least 2".into()));
        }
        if self.global_pool_increment == 0 {
            return Err(Error::Config(
                "global_pool_increment must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Derives an independent random stream from a master seed and a path of
/// identifiers (model, subregion, iteration, ...).
pub fn stream(master_seed: u64, path: &[u64]) -> ChaCha8Rng {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    let seed = path
        .iter()
        .fold(mix(master_seed), |acc, &p| mix(acc ^ mix(p)));
    ChaCha8Rng::seed_from_u64(seed)
}

/// `count` independent uniform points in `b`.
pub fn draw_uniform<T: Scalar, R: Rng + ?Sized>(
    b: &Hyperbox<T>,
    count: usize,
    rng: &mut R,
) -> Vec<Vec<T>> {
    (0..count)
        .map(|_| {
            b.lower
                .iter()
                .zip(&b.upper)
                .map(|(&lo, &hi)| {
                    let x = lo + (hi - lo) * T::unit_sample(rng);
                    // rounding may land exactly on the upper face
                    if x < hi || lo == hi {
                        x
                    } else {
                        lo.max(hi - (hi - lo) * T::epsilon())
                    }
                })
                .collect()
        })
        .collect()
}

/// Sorted objective values of uniform samples over the whole space.
#[derive(Debug, Clone)]
pub struct SamplePool<T> {
    pub model: usize,
    values: Vec<T>,
}

impl<T: Scalar> SamplePool<T> {
    pub fn new(model: usize) -> Self {
        Self {
            model,
            values: Vec::new(),
        }
    }

    pub fn from_values(model: usize, mut values: Vec<T>) -> Self {
        values.sort_by(|a, b| a.partial_cmp(b).expect("pool values are finite"));
        Self { model, values }
    }

    pub fn extend(&mut self, batch: impl IntoIterator<Item = T>) {
        self.values.extend(batch);
        self.values
            .sort_by(|a, b| a.partial_cmp(b).expect("pool values are finite"));
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// 1-based order statistic.
    pub fn order_stat(&self, rank: usize) -> T {
        self.values[rank - 1]
    }

    pub fn count_le(&self, x: T) -> usize {
        self.values.partition_point(|&v| v <= x)
    }

    pub fn count_lt(&self, x: T) -> usize {
        self.values.partition_point(|&v| v < x)
    }
}

/// One-sided confidence bounds on the δ-quantile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantileBounds<T> {
    /// `z(l*)`, or `-∞` when no rank reaches the confidence level.
    pub lower: T,
    /// `z(u*)`, or `+∞` when no rank reaches the confidence level.
    pub upper: T,
    pub lower_rank: Option<usize>,
    pub upper_rank: Option<usize>,
    pub pool_size: usize,
}

pub fn quantile_bounds<T: Scalar>(
    pool: &SamplePool<T>,
    cfg: &ClassifierConfig,
) -> Result<QuantileBounds<T>> {
    let tails = BinomialTails::new(pool.len(), T::lit(cfg.delta));
    quantile_bounds_with(pool, &tails, cfg)
}

/// As [`quantile_bounds`], reusing tabulated tails for the pool's size.
pub fn quantile_bounds_with<T: Scalar>(
    pool: &SamplePool<T>,
    tails: &BinomialTails<T>,
    cfg: &ClassifierConfig,
) -> Result<QuantileBounds<T>> {
    let m = pool.len();
    if m == 0 {
        return Err(Error::InvalidState(
            "quantile bounds need a non-empty pool".into(),
        ));
    }
    debug_assert_eq!(tails.trials(), m);
    let level = T::lit(1.0 - cfg.alpha);
    // P(Bin ≥ l) falls with l: take the last rank still at the level.
    let lower_rank = (1..=m).take_while(|&l| tails.ge(l) >= level).last();
    // P(Bin ≤ u-1) rises with u: take the first rank reaching the level.
    let upper_rank = (1..=m).find(|&u| tails.le(u - 1) >= level);
    Ok(QuantileBounds {
        lower: lower_rank.map_or(T::neg_infinity(), |l| pool.order_stat(l)),
        upper: upper_rank.map_or(T::infinity(), |u| pool.order_stat(u)),
        lower_rank,
        upper_rank,
        pool_size: m,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct Sample<T> {
    pub point: Vec<T>,
    pub value: T,
}

/// Classification state of one subregion under one model.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionModelState<T> {
    pub model: usize,
    pub samples: Vec<Sample<T>>,
    /// Assigned class; `None` until classified.
    pub label: Option<usize>,
    /// Estimated probability of the assigned class.
    pub p: T,
    /// `1 − p`.
    pub alpha_prime: T,
}

impl<T: Scalar> RegionModelState<T> {
    pub fn new(model: usize, samples: Vec<Sample<T>>) -> Self {
        Self {
            model,
            samples,
            label: None,
            p: T::zero(),
            alpha_prime: T::one(),
        }
    }

    fn extremes(&self) -> Result<(T, T)> {
        let mut values = self.samples.iter().map(|s| s.value);
        let first = values
            .next()
            .ok_or_else(|| Error::InvalidState(format!("model {} has no samples", self.model)))?;
        Ok(values.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
    }
}

/// Labels a subregion from its samples.
pub fn classify_region<T: Scalar>(
    state: &RegionModelState<T>,
    bounds: &QuantileBounds<T>,
    cfg: &ClassifierConfig,
) -> Result<usize> {
    let (min, max) = state.extremes()?;
    let inside = max <= bounds.lower + T::lit(cfg.epsilon);
    let outside = min >= bounds.upper;
    Ok(match (inside, outside) {
        (true, false) => INSIDE,
        (false, true) => OUTSIDE,
        _ => UNDETERMINED,
    })
}

/// Probability of the assigned label, `1 − α′`.
pub fn estimate_p<T: Scalar>(
    state: &RegionModelState<T>,
    pool: &SamplePool<T>,
    cfg: &ClassifierConfig,
) -> Result<T> {
    let tails = BinomialTails::new(pool.len(), T::lit(cfg.delta));
    estimate_p_with(state, pool, &tails)
}

pub fn estimate_p_with<T: Scalar>(
    state: &RegionModelState<T>,
    pool: &SamplePool<T>,
    tails: &BinomialTails<T>,
) -> Result<T> {
    let label = state
        .label
        .ok_or_else(|| Error::InvalidState("estimate_p before classification".into()))?;
    let (min, max) = state.extremes()?;
    let p_in = || tails.ge(pool.count_le(max));
    // u_m - 1 = #{pool < min}
    let p_out = || tails.le(pool.count_lt(min));
    let p = match label {
        INSIDE => p_in(),
        OUTSIDE => p_out(),
        _ => T::one() - p_in() - p_out(),
    };
    Ok(p.max(T::zero()).min(T::one()))
}

/// Classifies the subregion and stores label, `p`, and `α′` in `state`.
pub fn assess<T: Scalar>(
    state: &mut RegionModelState<T>,
    pool: &SamplePool<T>,
    tails: &BinomialTails<T>,
    bounds: &QuantileBounds<T>,
    cfg: &ClassifierConfig,
) -> Result<()> {
    state.label = Some(classify_region(state, bounds, cfg)?);
    let p = estimate_p_with(state, pool, tails)?;
    state.p = p;
    state.alpha_prime = T::one() - p;
    Ok(())
}
