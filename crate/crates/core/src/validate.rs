//! Agreement between a run's verdicts and the ideal-classifier verdicts
//! implied by dense-grid truth rasters.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::analysis::ideal_table;
use crate::classify::CLASSES;
use crate::consistency::{consistency_scores, decide, CaseAssignment, ConsistencyParams, Verdict};
use crate::error::{Error, Result};
use crate::models::{true_class, TruthRaster};
use crate::scalar::Scalar;
use crate::space::{DecisionSpace, Hyperbox};

/// Verdict an ideal classifier would reach on `b`: each model reports its
/// true class with probability one.
pub fn ideal_verdict<T: Scalar>(
    rasters: &[TruthRaster<T>],
    b: &Hyperbox<T>,
    params: &ConsistencyParams,
) -> Verdict {
    let labels: Vec<usize> = rasters.iter().map(|r| true_class(r, b)).collect();
    let table = ideal_table::<T>(&labels, CLASSES);
    let case = CaseAssignment::new(labels, CLASSES).expect("true classes lie in 1..=3");
    decide(
        &consistency_scores(&case, &table).expect("shapes match"),
        params,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerdictAgreement {
    pub volume: f64,
    pub agreeing_volume: f64,
    /// `agreeing_volume / volume`; absent when no region has this verdict.
    pub fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub per_verdict: BTreeMap<String, VerdictAgreement>,
}

impl ValidationReport {
    pub fn fraction(&self, verdict: Verdict) -> Option<f64> {
        self.per_verdict
            .get(&verdict.to_string())
            .and_then(|a| a.fraction)
    }
}

/// Rejects rasters whose domain differs from `space`.
pub fn check_domains<T: Scalar>(
    rasters: &[TruthRaster<T>],
    space: &DecisionSpace<T>,
) -> Result<()> {
    if rasters.is_empty() {
        return Err(Error::InvalidArgument("no truth rasters supplied".into()));
    }
    for r in rasters {
        if r.domain.dims() != space.dims() {
            return Err(Error::InvalidArgument(format!(
                "raster for `{}` has {} dimensions, expected {}",
                r.model,
                r.domain.dims(),
                space.dims()
            )));
        }
        let tol = T::lit(1e-9);
        let close = |a: T, b: T, scale: T| (a - b).abs() <= tol * scale.max(T::one());
        for d in 0..space.dims() {
            let w = space.bounds().width(d);
            if !close(r.domain.bounds().lower[d], space.bounds().lower[d], w)
                || !close(r.domain.bounds().upper[d], space.bounds().upper[d], w)
            {
                return Err(Error::InvalidArgument(format!(
                    "raster for `{}` covers a different domain",
                    r.model
                )));
            }
        }
    }
    Ok(())
}

/// Per verdict, the volume whose ideal verdict matches the run's verdict.
pub fn agreement<'a, T: Scalar>(
    regions: impl IntoIterator<Item = (&'a Hyperbox<T>, Verdict)>,
    rasters: &[TruthRaster<T>],
    params: &ConsistencyParams,
) -> ValidationReport {
    let mut per_verdict: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for (b, verdict) in regions {
        let vol = b.volume().as_f64();
        let slot = per_verdict.entry(verdict.to_string()).or_default();
        slot.0 += vol;
        if ideal_verdict(rasters, b, params) == verdict {
            slot.1 += vol;
        }
    }
    ValidationReport {
        per_verdict: per_verdict
            .into_iter()
            .map(|(k, (volume, agreeing_volume))| {
                let fraction = (volume > 0.0).then(|| agreeing_volume / volume);
                (
                    k,
                    VerdictAgreement {
                        volume,
                        agreeing_volume,
                        fraction,
                    },
                )
            })
            .collect(),
    }
}
