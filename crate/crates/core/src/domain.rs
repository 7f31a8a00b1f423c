//! Axis-aligned boxes in input space.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A closed hyperrectangle `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox")]
pub struct InputBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

#[derive(Deserialize)]
struct RawBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl TryFrom<RawBox> for InputBox {
    type Error = Error;

    fn try_from(raw: RawBox) -> Result<Self> {
        InputBox::new(raw.lo, raw.hi)
    }
}

impl InputBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::invalid(format!(
                "box bounds have lengths {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        if lo.is_empty() {
            return Err(Error::invalid("box must have at least one dimension"));
        }
        for (i, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if !l.is_finite() || !h.is_finite() {
                return Err(Error::invalid(format!("box dimension {i} is not finite")));
            }
            if l > h {
                return Err(Error::invalid(format!("box dimension {i} has lo {l} > hi {h}")));
            }
        }
        Ok(Self { lo, hi })
    }

    /// `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn width(&self, i: usize) -> f64 {
        self.hi[i] - self.lo[i]
    }

    pub fn widths(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.width(i)).collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| l + 0.5 * (h - l))
            .collect()
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|i| self.width(i)).product()
    }

    pub fn is_degenerate(&self) -> bool {
        (0..self.dim()).any(|i| self.width(i) <= 0.0)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    pub fn contains_box(&self, other: &InputBox) -> bool {
        other.dim() == self.dim()
            && (0..self.dim()).all(|i| self.lo[i] <= other.lo[i] && other.hi[i] <= self.hi[i])
    }

    /// Volume of `self ∩ other`, computed as a product of per-dimension overlaps.
    pub fn intersection_volume(&self, other: &InputBox) -> f64 {
        (0..self.dim())
            .map(|i| (self.hi[i].min(other.hi[i]) - self.lo[i].max(other.lo[i])).max(0.0))
            .product()
    }

    /// Fraction of `self` covered by `other`. Exactly 1 when `other ⊇ self`.
    pub fn covered_fraction(&self, other: &InputBox) -> f64 {
        if other.contains_box(self) {
            return 1.0;
        }
        (0..self.dim())
            .map(|i| {
                let overlap =
                    (self.hi[i].min(other.hi[i]) - self.lo[i].max(other.lo[i])).max(0.0);
                overlap / self.width(i)
            })
            .product()
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (v, (l, h)) in x.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            *v = v.clamp(*l, *h);
        }
    }

    /// Bisect along dimension `dim`.
    pub fn bisect(&self, dim: usize) -> (InputBox, InputBox) {
        let mid = self.lo[dim] + 0.5 * (self.hi[dim] - self.lo[dim]);
        let mut left = self.clone();
        let mut right = self.clone();
        left.hi[dim] = mid;
        right.lo[dim] = mid;
        (left, right)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| l + (h - l) * rng.random::<f64>())
            .collect()
    }

    pub fn check_dim(&self, dim: usize) -> Result<()> {
        if self.dim() != dim {
            return Err(Error::invalid(format!(
                "box has dimension {}, expected {dim}",
                self.dim()
            )));
        }
        Ok(())
    }
}
