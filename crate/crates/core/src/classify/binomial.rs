//! Binomial tail probabilities for order-statistic confidence bounds.
//!
//! All sums run over log-space probability mass terms, shifted by their
//! maximum before exponentiation, so pools of many thousands of samples do
//! not underflow. Accumulation is always done in `f64`; only the results
//! are converted to the caller's scalar.

use crate::scalar::Scalar;

/// `ln C(m, k)` for `k = 0..=m`.
fn ln_choose_row(m: usize) -> Vec<f64> {
    let mut row = Vec::with_capacity(m + 1);
    let mut acc = 0.0;
    row.push(acc);
    for k in 1..=m {
        acc += ((m - k + 1) as f64).ln() - (k as f64).ln();
        row.push(acc);
    }
    row
}

fn ln_pmf_row(m: usize, delta: f64) -> Vec<f64> {
    let ln_p = delta.ln();
    let ln_q = (1.0 - delta).ln();
    ln_choose_row(m)
        .into_iter()
        .enumerate()
        .map(|(k, c)| c + k as f64 * ln_p + (m - k) as f64 * ln_q)
        .collect()
}

fn sum_exp(terms: &[f64]) -> f64 {
    let Some(max) = terms.iter().copied().reduce(f64::max) else {
        return 0.0;
    };
    if max == f64::NEG_INFINITY {
        return 0.0;
    }
    let s: f64 = terms.iter().map(|&t| (t - max).exp()).sum();
    (max + s.ln()).exp()
}

/// `P(Bin(m, δ) ≥ l)`.
pub fn binom_tail_ge<T: Scalar>(m: usize, delta: T, l: usize) -> T {
    if l == 0 {
        return T::one();
    }
    if l > m {
        return T::zero();
    }
    let row = ln_pmf_row(m, delta.as_f64());
    T::lit(sum_exp(&row[l..]).min(1.0))
}

/// `P(Bin(m, δ) ≤ u)`.
pub fn binom_cdf_le<T: Scalar>(m: usize, delta: T, u: usize) -> T {
    if u >= m {
        return T::one();
    }
    let row = ln_pmf_row(m, delta.as_f64());
    T::lit(sum_exp(&row[..=u]).min(1.0))
}

/// Both binomial tails for one `(m, δ)`, tabulated once per pool.
#[derive(Debug, Clone)]
pub struct BinomialTails<T> {
    m: usize,
    tail_ge: Vec<T>,
    cdf_le: Vec<T>,
}

impl<T: Scalar> BinomialTails<T> {
    pub fn new(m: usize, delta: T) -> Self {
        let pmf: Vec<f64> = ln_pmf_row(m, delta.as_f64())
            .into_iter()
            .map(f64::exp)
            .collect();
        // upper[k] = P(Bin ≥ k), lower[k] = P(Bin ≤ k), each summed from its own end
        let mut upper = vec![0.0; m + 2];
        for k in (0..=m).rev() {
            upper[k] = upper[k + 1] + pmf[k];
        }
        let mut lower = vec![0.0; m + 1];
        let mut acc = 0.0;
        for (k, &p) in pmf.iter().enumerate() {
            acc += p;
            lower[k] = acc;
        }
        // A tail close to one is taken as the complement of the small
        // opposite tail, so that it rounds to exactly one when it should.
        let ge = |k: usize| match k {
            0 => 1.0,
            k if upper[k] > 0.5 => 1.0 - lower[k - 1],
            k => upper[k],
        };
        let le = |k: usize| {
            if lower[k] > 0.5 {
                1.0 - upper[k + 1]
            } else {
                lower[k]
            }
        };
        let clamp = |x: f64| T::lit(x.clamp(0.0, 1.0));
        Self {
            m,
            tail_ge: (0..=m + 1).map(|k| clamp(ge(k))).collect(),
            cdf_le: (0..=m).map(|k| clamp(le(k))).collect(),
        }
    }

    pub fn trials(&self) -> usize {
        self.m
    }

    /// `P(Bin ≥ l)`; zero for `l > m`.
    pub fn ge(&self, l: usize) -> T {
        self.tail_ge.get(l).copied().unwrap_or_else(T::zero)
    }

    /// `P(Bin ≤ u)`; one for `u ≥ m`.
    pub fn le(&self, u: usize) -> T {
        self.cdf_le.get(u).copied().unwrap_or_else(T::one)
    }
}
