//! Black-box models, the analytic test models, and the dense-grid truth
//! oracle used to define each model's true target region.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::space::{DecisionSpace, Hyperbox};

pub type Evaluator<T> = Arc<dyn Fn(&[T]) -> T + Send + Sync>;

/// A deterministic black-box objective over a bounded domain.
#[derive(Clone)]
pub struct ModelSpec<T: Scalar> {
    pub id: usize,
    pub name: String,
    pub domain: DecisionSpace<T>,
    evaluator: Evaluator<T>,
}

impl<T: Scalar> fmt::Debug for ModelSpec<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("id", &self.id)
            .field("name", &self.name)
            .field("domain", &self.domain)
            .finish_non_exhaustive()
    }
}

impl<T: Scalar> ModelSpec<T> {
    pub fn new(
        id: usize,
        name: impl Into<String>,
        domain: DecisionSpace<T>,
        evaluator: impl Fn(&[T]) -> T + Send + Sync + 'static,
    ) -> Self {
        Self {
            id,
            name: name.into(),
            domain,
            evaluator: Arc::new(evaluator),
        }
    }

    /// Evaluates the model; points outside the (closed) domain are rejected.
    pub fn evaluate(&self, point: &[T]) -> Result<T> {
        if !self.domain.bounds().contains_closed(point) {
            return Err(Error::OutOfDomain {
                model: self.name.clone(),
                point: point.iter().map(|x| x.as_f64()).collect(),
            });
        }
        Ok((self.evaluator)(point))
    }

    /// Evaluates without the domain check. Callers guarantee `point` is
    /// inside the domain.
    pub(crate) fn evaluate_unchecked(&self, point: &[T]) -> T {
        (self.evaluator)(point)
    }
}

/// Names accepted by [`builtin`].
pub const BUILTIN_MODELS: [&str; 7] = [
    "ex1_rosenbrock",
    "ex1_absquad",
    "ex1_taylor",
    "ex2_sinusoid",
    "ex2_piecewise_const",
    "ex2_absval",
    "ex2_piecewise_quad",
];

fn square_domain<T: Scalar>(lo: f64, hi: f64) -> DecisionSpace<T> {
    DecisionSpace::new(vec![T::lit(lo); 2], vec![T::lit(hi); 2])
        .expect("built-in domains are valid")
}

/// Looks up one of the built-in two-dimensional test models by name.
pub fn builtin<T: Scalar>(name: &str, id: usize) -> Option<ModelSpec<T>> {
    let c = T::lit;
    let ex1 = || square_domain::<T>(-2.0, 2.0);
    let ex2 = || square_domain::<T>(0.0, 180.0);
    let model = match name {
        "ex1_rosenbrock" => ModelSpec::new(id, name, ex1(), move |x: &[T]| {
            let a = T::one() - x[0];
            let b = x[1] - x[0] * x[0];
            a * a + c(100.0) * b * b
        }),
        "ex1_absquad" => ModelSpec::new(id, name, ex1(), |x: &[T]| {
            let d = x[0].abs() - x[1];
            d * d
        }),
        "ex1_taylor" => ModelSpec::new(id, name, ex1(), move |x: &[T]| {
            T::one() - c(2.0) * x[0] + c(100.0) * x[0] * x[0]
        }),
        "ex2_sinusoid" => ModelSpec::new(id, name, ex2(), move |x: &[T]| {
            let pi = c(std::f64::consts::PI);
            let wide = (pi * x[0] / c(180.0)).sin() * (pi * x[1] / c(180.0)).sin();
            let narrow = (pi * x[0] / c(36.0)).sin() * (pi * x[1] / c(36.0)).sin();
            -c(2.5) * wide - narrow
        }),
        // Piecewise models: 100 outside the diamond band, the final branch inside.
        "ex2_piecewise_const" => ModelSpec::new(id, name, ex2(), move |x: &[T]| {
            if outside_band(x, 75.0, 105.0, 285.0) {
                c(100.0)
            } else {
                T::zero()
            }
        }),
        "ex2_absval" => ModelSpec::new(id, name, ex2(), move |x: &[T]| {
            ((x[0] - c(90.0)).abs() - (x[1] - c(90.0)).abs()).abs()
        }),
        "ex2_piecewise_quad" => ModelSpec::new(id, name, ex2(), move |x: &[T]| {
            if outside_band(x, 90.0, 90.0, 270.0) {
                c(100.0)
            } else {
                let a = x[0] - c(90.0);
                let b = x[1] - c(90.0);
                -(a * a) - b * b
            }
        }),
        _ => return None,
    };
    Some(model)
}

fn outside_band<T: Scalar>(x: &[T], sum_lo: f64, diff: f64, sum_hi: f64) -> bool {
    let sum = (x[0] + x[1]).as_f64();
    let d = (x[0] - x[1]).as_f64();
    sum < sum_lo || d > diff || -d > diff || sum > sum_hi
}

/// Membership of grid cells in a model's δ-quantile sublevel set.
#[derive(Debug, Clone)]
pub struct TruthRaster<T: Scalar> {
    pub model: String,
    pub domain: DecisionSpace<T>,
    pub resolution: usize,
    pub threshold: T,
    values: Vec<T>,
    membership: Vec<bool>,
}

impl<T: Scalar> TruthRaster<T> {
    /// Assembles a raster from its cells, flat-indexed with dimension 0
    /// varying slowest.
    pub fn from_parts(
        model: impl Into<String>,
        domain: DecisionSpace<T>,
        resolution: usize,
        threshold: T,
        values: Vec<T>,
        membership: Vec<bool>,
    ) -> Result<Self> {
        let cells = cell_count(resolution, domain.dims())?;
        if values.len() != cells || membership.len() != cells {
            return Err(Error::InvalidArgument(format!(
                "raster needs {cells} cells, got {} values and {} flags",
                values.len(),
                membership.len()
            )));
        }
        Ok(Self {
            model: model.into(),
            domain,
            resolution,
            threshold,
            values,
            membership,
        })
    }

    pub fn cells(&self) -> usize {
        self.values.len()
    }

    pub fn value(&self, cell: usize) -> T {
        self.values[cell]
    }

    pub fn is_member(&self, cell: usize) -> bool {
        self.membership[cell]
    }

    pub fn member_fraction(&self) -> f64 {
        let members = self.membership.iter().filter(|&&m| m).count();
        members as f64 / self.cells() as f64
    }

    fn cell_width(&self, dim: usize) -> T {
        self.domain.bounds().width(dim) / T::from_count(self.resolution)
    }

    pub fn cell_center(&self, cell: usize) -> Vec<T> {
        let index = unflatten(cell, self.resolution, self.domain.dims());
        index
            .iter()
            .enumerate()
            .map(|(d, &i)| self.center_coord(d, i))
            .collect()
    }

    fn center_coord(&self, dim: usize, i: usize) -> T {
        self.domain.bounds().lower[dim] + (T::from_count(i) + T::lit(0.5)) * self.cell_width(dim)
    }

    /// Cell indices along `dim` whose centers lie in `[lo, hi]`.
    fn index_range(&self, dim: usize, lo: T, hi: T) -> Option<(usize, usize)> {
        let origin = self.domain.bounds().lower[dim];
        let h = self.cell_width(dim);
        let half = T::lit(0.5);
        let first = ((lo - origin) / h - half).ceil().max(T::zero());
        let last = ((hi - origin) / h - half)
            .floor()
            .min(T::from_count(self.resolution - 1));
        if first > last {
            return None;
        }
        Some((first.to_usize()?, last.to_usize()?))
    }

    fn cell_of(&self, point: &[T]) -> usize {
        let index: Vec<usize> = point
            .iter()
            .enumerate()
            .map(|(d, &x)| {
                let origin = self.domain.bounds().lower[d];
                let i = ((x - origin) / self.cell_width(d)).floor().max(T::zero());
                i.to_usize().unwrap_or(0).min(self.resolution - 1)
            })
            .collect();
        flatten(&index, self.resolution)
    }
}

fn cell_count(resolution: usize, dims: usize) -> Result<usize> {
    u32::try_from(dims)
        .ok()
        .and_then(|d| resolution.checked_pow(d))
        .ok_or_else(|| Error::InvalidArgument("raster grid is too large".into()))
}

fn flatten(index: &[usize], resolution: usize) -> usize {
    index.iter().fold(0, |acc, &i| acc * resolution + i)
}

fn unflatten(mut cell: usize, resolution: usize, dims: usize) -> Vec<usize> {
    let mut index = vec![0; dims];
    for slot in index.iter_mut().rev() {
        *slot = cell % resolution;
        cell /= resolution;
    }
    index
}

/// Smallest resolution accepted by [`truth_oracle`].
pub const MIN_ORACLE_RESOLUTION: usize = 64;

/// Evaluates `model` on a cell-centered grid and marks the cells at or below
/// the `⌈δ·G⌉`-th smallest of the `G` cell values.
pub fn truth_oracle<T: Scalar>(
    model: &ModelSpec<T>,
    delta: f64,
    resolution: usize,
) -> Result<TruthRaster<T>> {
    if resolution < MIN_ORACLE_RESOLUTION {
        return Err(Error::InvalidArgument(format!(
            "oracle resolution must be at least {MIN_ORACLE_RESOLUTION}, got {resolution}"
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "delta must lie in (0,1), got {delta}"
        )));
    }
    let domain = model.domain.clone();
    let cells = cell_count(resolution, domain.dims())?;
    let mut raster = TruthRaster {
        model: model.name.clone(),
        domain,
        resolution,
        threshold: T::zero(),
        values: Vec::new(),
        membership: Vec::new(),
    };
    let values: Vec<T> = (0..cells)
        .into_par_iter()
        .map(|cell| model.evaluate_unchecked(&raster.cell_center(cell)))
        .collect();

    let rank = ((delta * cells as f64).ceil() as usize).clamp(1, cells);
    let mut scratch = values.clone();
    let (_, &mut threshold, _) =
        scratch.select_nth_unstable_by(rank - 1, |a, b| a.partial_cmp(b).expect("finite values"));

    raster.membership = values.iter().map(|&v| v <= threshold).collect();
    raster.values = values;
    raster.threshold = threshold;
    Ok(raster)
}

/// True class of `b` under the raster: 1 if every cell center inside `b` is
/// a member, 2 if none is, 3 otherwise. A box holding no cell center takes
/// the membership of the cell containing its center.
pub fn true_class<T: Scalar>(raster: &TruthRaster<T>, b: &Hyperbox<T>) -> usize {
    let dims = raster.domain.dims();
    let ranges: Option<Vec<(usize, usize)>> = (0..dims)
        .map(|d| raster.index_range(d, b.lower[d], b.upper[d]))
        .collect();
    let Some(ranges) = ranges else {
        let cell = raster.cell_of(&b.center());
        return if raster.membership[cell] { 1 } else { 2 };
    };

    let mut index: Vec<usize> = ranges.iter().map(|r| r.0).collect();
    let (mut inside, mut outside) = (false, false);
    loop {
        if raster.membership[flatten(&index, raster.resolution)] {
            inside = true;
        } else {
            outside = true;
        }
        if inside && outside {
            return 3;
        }
        // odometer step, last dimension fastest
        let mut d = dims;
        loop {
            if d == 0 {
                return if inside { 1 } else { 2 };
            }
            d -= 1;
            if index[d] < ranges[d].1 {
                index[d] += 1;
                break;
            }
            index[d] = ranges[d].0;
        }
    }
}
