//! The `solution.json` schema and its canonical serialization.
//!
//! Floating-point numbers are written with 17 significant digits in
//! scientific notation, which round-trips every `f64` exactly; parsing a
//! solution file and writing it back reproduces it byte for byte.

use std::collections::BTreeMap;
use std::io;

use serde::{Deserialize, Serialize};
use serde_json::ser::{CompactFormatter, Formatter};

use crate::consistency::Verdict;
use crate::engine::{RunConfig, SolutionSet, StopReason};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::space::Hyperbox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub label: usize,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionEntry {
    #[serde(rename = "box")]
    pub bounds: Hyperbox<f64>,
    pub verdict: Verdict,
    pub scores: Vec<f64>,
    pub per_model: Vec<ModelEntry>,
    pub decided_at: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub config: RunConfig,
    pub iterations: usize,
    pub stopped_by: StopReason,
    pub regions: Vec<RegionEntry>,
    pub volume_by_verdict: BTreeMap<String, f64>,
}

impl SolutionFile {
    pub fn from_solution<T: Scalar>(config: &RunConfig, solution: &SolutionSet<T>) -> Self {
        let to_f64 = |xs: &[T]| xs.iter().map(|x| x.as_f64()).collect::<Vec<_>>();
        let regions = solution
            .records
            .iter()
            .map(|r| RegionEntry {
                bounds: Hyperbox {
                    lower: to_f64(&r.bounds.lower),
                    upper: to_f64(&r.bounds.upper),
                },
                verdict: r.verdict,
                scores: to_f64(&r.scores.0),
                per_model: r
                    .per_model
                    .iter()
                    .map(|s| ModelEntry {
                        label: s.label.unwrap_or(0),
                        p: s.p.as_f64(),
                    })
                    .collect(),
                decided_at: r.decided_at,
            })
            .collect();
        Self {
            config: config.clone(),
            iterations: solution.iterations_used,
            stopped_by: solution.stop_reason,
            regions,
            volume_by_verdict: solution
                .volume_by_verdict
                .iter()
                .map(|(v, vol)| (v.to_string(), vol.as_f64()))
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        to_canonical_json(self).expect("solution files always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::InvalidArgument(format!("solution file: {e}")))
    }

    /// Total volume of all regions.
    pub fn total_volume(&self) -> f64 {
        self.volume_by_verdict.values().fold(0.0, |a, b| a + b)
    }
}

/// Compact JSON with floats written as `d.dddddddddddddddde±x`.
pub struct SignificantDigits;

impl Formatter for SignificantDigits {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        CompactFormatter.begin_array(writer)
    }
}

pub fn to_canonical_json<S: Serialize>(value: &S) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SignificantDigits);
    value
        .serialize(&mut ser)
        .map_err(|e| Error::InvalidState(format!("serialization failed: {e}")))?;
    String::from_utf8(out).map_err(|e| Error::InvalidState(e.to_string()))
}
