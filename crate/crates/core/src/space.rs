//! Axis-aligned box geometry and the shared partition of the decision space.
//!
//! Boxes are half-open, `[lower, upper)` in every dimension, except that the
//! upper face of the decision space itself is closed. Under that convention
//! every point of the space belongs to exactly one leaf of a partition.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Fraction of the original edge length below which a box is no longer split.
pub const MIN_RELATIVE_WIDTH: f64 = 1e-6;

/// An axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct Hyperbox<T> {
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

impl<T: Scalar> Hyperbox<T> {
    pub fn new(lower: Vec<T>, upper: Vec<T>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::InvalidArgument(format!(
                "bound lengths differ: {} vs {}",
                lower.len(),
                upper.len()
            )));
        }
        if lower.is_empty() {
            return Err(Error::InvalidArgument("box has no dimensions".into()));
        }
        for (d, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(Error::InvalidArgument(format!(
                    "dimension {d}: invalid bounds [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn dims(&self) -> usize {
        self.lower.len()
    }

    pub fn width(&self, dim: usize) -> T {
        self.upper[dim] - self.lower[dim]
    }

    /// Product of edge lengths.
    pub fn volume(&self) -> T {
        (0..self.dims()).fold(T::one(), |acc, d| acc * self.width(d))
    }

    pub fn center(&self) -> Vec<T> {
        let two = T::lit(2.0);
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&lo, &hi)| lo + (hi - lo) / two)
            .collect()
    }

    /// Dimension with the longest edge; ties go to the lowest index.
    pub fn longest_dim(&self) -> usize {
        let mut best = 0;
        for d in 1..self.dims() {
            if self.width(d) > self.width(best) {
                best = d;
            }
        }
        best
    }

    /// Closed-box membership, used where boundary conventions do not matter.
    pub fn contains_closed(&self, point: &[T]) -> bool {
        point.len() == self.dims()
            && point
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&x, (&lo, &hi))| lo <= x && x <= hi)
    }

    /// True when `other` lies inside `self` (closed comparison).
    pub fn encloses(&self, other: &Hyperbox<T>) -> bool {
        other.dims() == self.dims()
            && (0..self.dims())
                .all(|d| self.lower[d] <= other.lower[d] && other.upper[d] <= self.upper[d])
    }
}

/// Splits `parent` along its longest edge into `factor` equal-width children.
///
/// Adjacent children share their boundary coordinate bit-for-bit and the last
/// child ends exactly at the parent's upper bound, so the children tile the
/// parent without gaps.
pub fn branch<T: Scalar>(parent: &Hyperbox<T>, factor: usize) -> Result<Vec<Hyperbox<T>>> {
    if factor < 2 {
        return Err(Error::InvalidArgument(format!(
            "branch factor must be at least 2, got {factor}"
        )));
    }
    let dim = parent.longest_dim();
    let lo = parent.lower[dim];
    let hi = parent.upper[dim];
    let k = T::from_count(factor);
    let cut = |i: usize| -> T {
        if i == factor {
            hi
        } else {
            lo + (hi - lo) * T::from_count(i) / k
        }
    };
    Ok((0..factor)
        .map(|i| {
            let mut child = parent.clone();
            child.lower[dim] = cut(i);
            child.upper[dim] = cut(i + 1);
            child
        })
        .collect())
}

/// The bounded decision space `X`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
#[serde(try_from = "Hyperbox<T>", into = "Hyperbox<T>")]
pub struct DecisionSpace<T: Scalar> {
    bounds: Hyperbox<T>,
}

impl<T: Scalar> TryFrom<Hyperbox<T>> for DecisionSpace<T> {
    type Error = Error;

    fn try_from(bounds: Hyperbox<T>) -> Result<Self> {
        Self::new(bounds.lower, bounds.upper)
    }
}

impl<T: Scalar> From<DecisionSpace<T>> for Hyperbox<T> {
    fn from(space: DecisionSpace<T>) -> Self {
        space.bounds
    }
}

impl<T: Scalar> DecisionSpace<T> {
    /// Requires `lower[d] < upper[d]` in every dimension.
    pub fn new(lower: Vec<T>, upper: Vec<T>) -> Result<Self> {
        let bounds = Hyperbox::new(lower, upper)?;
        if let Some(d) = (0..bounds.dims()).find(|&d| bounds.width(d) <= T::zero()) {
            return Err(Error::InvalidArgument(format!(
                "decision space has zero width in dimension {d}"
            )));
        }
        Ok(Self { bounds })
    }

    pub fn bounds(&self) -> &Hyperbox<T> {
        &self.bounds
    }

    pub fn dims(&self) -> usize {
        self.bounds.dims()
    }

    pub fn volume(&self) -> T {
        self.bounds.volume()
    }

    pub fn min_width(&self, dim: usize) -> T {
        self.bounds.width(dim) * T::lit(MIN_RELATIVE_WIDTH)
    }

    /// Whether splitting `b` by `factor` keeps the split edge at or above the
    /// minimum width.
    pub fn can_branch(&self, b: &Hyperbox<T>, factor: usize) -> bool {
        let dim = b.longest_dim();
        b.width(dim) / T::from_count(factor.max(1)) >= self.min_width(dim)
    }

    /// Half-open membership of `point` in `b`, with the global upper face of
    /// the space treated as closed.
    pub fn contains(&self, b: &Hyperbox<T>, point: &[T]) -> Result<bool> {
        if point.len() != b.dims() || b.dims() != self.dims() {
            return Err(Error::InvalidArgument(format!(
                "dimension mismatch: point has {}, box has {}, space has {}",
                point.len(),
                b.dims(),
                self.dims()
            )));
        }
        Ok((0..b.dims()).all(|d| {
            let x = point[d];
            let upper_ok =
                x < b.upper[d] || (b.upper[d] == self.bounds.upper[d] && x <= b.upper[d]);
            b.lower[d] <= x && upper_ok
        }))
    }
}

/// A set of leaves tiling the decision space.
#[derive(Debug, Clone)]
pub struct Partition<T: Scalar> {
    root: DecisionSpace<T>,
    leaves: Vec<Hyperbox<T>>,
}

impl<T: Scalar> Partition<T> {
    pub fn new(root: DecisionSpace<T>) -> Self {
        let leaves = vec![root.bounds().clone()];
        Self { root, leaves }
    }

    pub fn root(&self) -> &DecisionSpace<T> {
        &self.root
    }

    pub fn leaves(&self) -> &[Hyperbox<T>] {
        &self.leaves
    }

    /// Replaces leaf `index` by its children, which take its position in
    /// order. Returns the number of children.
    pub fn branch_leaf(&mut self, index: usize, factor: usize) -> Result<usize> {
        let leaf = self
            .leaves
            .get(index)
            .ok_or_else(|| Error::InvalidArgument(format!("leaf index {index} out of range")))?;
        let children = branch(leaf, factor)?;
        let n = children.len();
        self.leaves.splice(index..=index, children);
        Ok(n)
    }

    pub fn total_volume(&self) -> T {
        self.leaves
            .iter()
            .map(Hyperbox::volume)
            .fold(T::zero(), |a, b| a + b)
    }

    /// Index of the unique leaf owning `point`, if any.
    pub fn locate(&self, point: &[T]) -> Result<Option<usize>> {
        for (i, leaf) in self.leaves.iter().enumerate() {
            if self.root.contains(leaf, point)? {
                return Ok(Some(i));
            }
        }
        Ok(None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(lower: &[f64], upper: &[f64]) -> Hyperbox<f64> {
        Hyperbox::new(lower.to_vec(), upper.to_vec()).unwrap()
    }

    #[test]
    fn volume_examples() {
        assert_eq!(bx(&[0.0, 0.0], &[1.0, 1.0]).volume(), 1.0);
        assert_eq!(bx(&[-2.0, -2.0], &[2.0, 2.0]).volume(), 16.0);
        assert_eq!(bx(&[0.0, 0.5], &[1.0, 0.5]).volume(), 0.0);
    }

    #[test]
    fn branch_splits_longest_edge() {
        let kids = branch(&bx(&[0.0, 0.0], &[1.0, 2.0]), 2).unwrap();
        assert_eq!(
            kids,
            vec![bx(&[0.0, 0.0], &[1.0, 1.0]), bx(&[0.0, 1.0], &[1.0, 2.0])]
        );
    }

    #[test]
    fn branch_tie_goes_to_first_dimension() {
        let kids = branch(&bx(&[0.0, 0.0], &[2.0, 2.0]), 2).unwrap();
        assert_eq!(
            kids,
            vec![bx(&[0.0, 0.0], &[1.0, 2.0]), bx(&[1.0, 0.0], &[2.0, 2.0])]
        );
    }

    #[test]
    fn branch_rejects_small_factor() {
        let b = bx(&[0.0], &[1.0]);
        assert!(matches!(branch(&b, 1), Err(Error::InvalidArgument(_))));
        assert!(matches!(branch(&b, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn contains_is_half_open_inside_the_space() {
        let space = DecisionSpace::new(vec![0.0, 0.0], vec![2.0, 2.0]).unwrap();
        let left = bx(&[0.0, 0.0], &[1.0, 1.0]);
        assert!(space.contains(&left, &[0.5, 0.5]).unwrap());
        assert!(!space.contains(&left, &[1.0, 0.5]).unwrap());
        // the global upper face is closed
        let corner = bx(&[1.0, 1.0], &[2.0, 2.0]);
        assert!(space.contains(&corner, &[2.0, 2.0]).unwrap());
        assert!(matches!(
            space.contains(&left, &[0.5]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn decision_space_needs_positive_width() {
        assert!(DecisionSpace::new(vec![0.0, 1.0], vec![1.0, 1.0]).is_err());
        assert!(DecisionSpace::<f64>::new(vec![], vec![]).is_err());
        assert!(DecisionSpace::new(vec![0.0f32], vec![1.0]).is_ok());
    }

    #[test]
    fn min_width_stops_branching() {
        let space = DecisionSpace::new(vec![0.0], vec![1.0]).unwrap();
        assert!(space.can_branch(&bx(&[0.0], &[1e-3]), 2));
        assert!(!space.can_branch(&bx(&[0.0], &[1e-6]), 2));
    }

    #[test]
    fn partition_keeps_order_and_volume() {
        let space = DecisionSpace::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap();
        let mut p = Partition::new(space);
        p.branch_leaf(0, 2).unwrap();
        p.branch_leaf(1, 2).unwrap();
        assert_eq!(p.leaves().len(), 3);
        assert_eq!(p.leaves()[0], bx(&[-2.0, -2.0], &[0.0, 2.0]));
        assert_eq!(p.total_volume(), 16.0);
        assert_eq!(p.locate(&[1.0, 1.0]).unwrap(), Some(2));
        assert_eq!(p.locate(&[5.0, 1.0]).unwrap(), None);
    }
}
