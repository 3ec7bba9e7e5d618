//! Small numeric utilities shared by every model: diameters, ℓp norms and
//! compensated summation.

use crate::error::{domain, Result};

/// Neumaier compensated accumulator. Summation order is the call order.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// Compensated sum of an iterator, in iteration order.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = CompensatedSum::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// Max minus min over the entries.
pub fn diameter(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return domain("diameter of an empty vector");
    }
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    Ok(hi - lo)
}

/// Diameter of a matrix given as rows.
pub fn diameter_matrix(rows: &[Vec<f64>]) -> Result<f64> {
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    diameter(&flat)
}

/// Exponent of an ℓp norm; `Infinity` is the max norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormExponent {
    Finite(f64),
    Infinity,
}

impl NormExponent {
    pub fn new(p: f64) -> Result<Self> {
        if p.is_nan() || p < 1.0 {
            return domain(format!("norm exponent p = {p} must lie in [1, ∞]"));
        }
        Ok(if p.is_infinite() { Self::Infinity } else { Self::Finite(p) })
    }

    /// The factor N^{-1/p} (1 for p = ∞).
    pub fn inverse_root(&self, n: usize) -> f64 {
        match *self {
            Self::Finite(p) => (n as f64).powf(-1.0 / p),
            Self::Infinity => 1.0,
        }
    }

    pub fn as_f64(&self) -> f64 {
        match *self {
            Self::Finite(p) => p,
            Self::Infinity => f64::INFINITY,
        }
    }
}

impl std::fmt::Display for NormExponent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Finite(p) => write!(f, "{p}"),
            Self::Infinity => write!(f, "inf"),
        }
    }
}

/// Standard ℓp norm; `p = f64::INFINITY` gives the max norm.
pub fn lp_norm(v: &[f64], p: f64) -> Result<f64> {
    Ok(norm_with(v, NormExponent::new(p)?))
}

pub fn norm_with(v: &[f64], p: NormExponent) -> f64 {
    match p {
        NormExponent::Infinity => v.iter().fold(0.0_f64, |m, x| m.max(x.abs())),
        NormExponent::Finite(p) if p == 1.0 => compensated_sum(v.iter().map(|x| x.abs())),
        NormExponent::Finite(p) if p == 2.0 => compensated_sum(v.iter().map(|x| x * x)).sqrt(),
        NormExponent::Finite(p) => {
            let scale = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
            if scale == 0.0 {
                return 0.0;
            }
            scale * compensated_sum(v.iter().map(|x| (x.abs() / scale).powf(p))).powf(1.0 / p)
        }
    }
}

/// ℓp distance between two equally long vectors.
pub fn lp_distance(a: &[f64], b: &[f64], p: NormExponent) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm_with(&diff, p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diameter_examples() {
        assert!((diameter(&[0.1, 0.4, 0.25]).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(diameter(&[2.5; 4]).unwrap(), 0.0);
        assert_eq!(diameter_matrix(&[vec![1.0, 4.0], vec![2.0, 0.0]]).unwrap(), 4.0);
        assert!(diameter(&[]).is_err());
    }

    #[test]
    fn lp_norm_examples() {
        assert_eq!(lp_norm(&[3.0, 4.0], 2.0).unwrap(), 5.0);
        assert_eq!(lp_norm(&[1.0, -1.0, 1.0], 1.0).unwrap(), 3.0);
        assert_eq!(lp_norm(&[1.0, -2.0], f64::INFINITY).unwrap(), 2.0);
        assert!((lp_norm(&[1.0, 1.0], 3.0).unwrap() - 2f64.powf(1.0 / 3.0)).abs() < 1e-15);
        assert!(lp_norm(&[1.0], 0.5).is_err());
    }

    #[test]
    fn compensated_sum_recovers_cancelled_terms() {
        let v = [1.0, 1e100, 1.0, -1e100];
        assert_eq!(compensated_sum(v), 2.0);
    }
}
