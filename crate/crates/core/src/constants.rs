//! Extrema of F′, G′ and the quotient functionals over an interval.

use crate::error::{domain, Result};
use crate::response::FrequencyResponse;

const GRID_1D: usize = 4097;
const GRID_2D: usize = 257;
const GOLDEN_ITERATIONS: usize = 80;

/// Interval constants on [a_G, b_G] and on its image [F(a_G), F(b_G)].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalConstants {
    pub a_g: f64,
    pub b_g: f64,
    pub m_fprime: f64,
    pub max_fprime: f64,
    pub m_gprime: f64,
    pub max_gprime: f64,
    pub m_qinv: f64,
    pub max_qinv: f64,
    /// Extrema of |𝒬[G′]|.
    pub m_qgp: f64,
    pub max_qgp: f64,
    pub tolerance: f64,
}

impl IntervalConstants {
    /// Ordering of each min/max pair and the reciprocal relation between the
    /// F′ and G′ extrema.
    pub fn is_consistent(&self) -> bool {
        let t = self.tolerance;
        self.m_fprime <= self.max_fprime
            && self.m_gprime <= self.max_gprime
            && self.m_qinv <= self.max_qinv
            && self.m_qgp <= self.max_qgp
            && self.m_gprime * self.max_fprime >= 1.0 - t
            && self.max_gprime * self.m_fprime <= 1.0 + t
    }
}

#[derive(Debug, Clone, Copy)]
struct Extremum {
    min: f64,
    argmin: usize,
    max: f64,
    argmax: usize,
}

fn scan(values: impl Iterator<Item = f64>) -> Extremum {
    let mut e = Extremum { min: f64::INFINITY, argmin: 0, max: f64::NEG_INFINITY, argmax: 0 };
    for (i, v) in values.enumerate() {
        if v < e.min {
            e.min = v;
            e.argmin = i;
        }
        if v > e.max {
            e.max = v;
            e.argmax = i;
        }
    }
    e
}

fn grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| if i + 1 == n { b } else { a + (b - a) * i as f64 / (n - 1) as f64 })
        .collect()
}

/// Golden-section search for the minimum of `f` on [lo, hi]; returns the best
/// value seen, including the endpoints.
fn golden_min(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let (mut a, mut b) = (lo, hi);
    let mut best = (lo, f(lo));
    let fb = f(hi);
    if fb < best.1 {
        best = (hi, fb);
    }
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..GOLDEN_ITERATIONS {
        if fc < best.1 {
            best = (c, fc);
        }
        if fd < best.1 {
            best = (d, fd);
        }
        if b - a <= 1e-15 * (a.abs() + b.abs()).max(1e-300) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    best
}

fn neighbourhood(pts: &[f64], i: usize) -> (f64, f64) {
    (pts[i.saturating_sub(1)], pts[(i + 1).min(pts.len() - 1)])
}

/// Min and max of a 1-D function by grid sampling plus a golden-section
/// refinement in the neighbouring grid cells.
fn extrema_1d(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let pts = grid(a, b, GRID_1D);
    let vals: Vec<f64> = pts.iter().map(|&x| f(x)).collect();
    let e = scan(vals.iter().copied());
    let (lo, hi) = neighbourhood(&pts, e.argmin);
    let min = golden_min(f, lo, hi).1.min(e.min);
    let (lo, hi) = neighbourhood(&pts, e.argmax);
    let max = -golden_min(&|x| -f(x), lo, hi).1;
    (min, max.max(e.max))
}

/// Coordinate-wise golden refinement of a 2-D minimum found at grid point
/// (i, j).
fn refine_2d(f: &dyn Fn(f64, f64) -> f64, pts: &[f64], i: usize, j: usize, start: f64) -> f64 {
    let (mut x, mut y) = (pts[i], pts[j]);
    let (xlo, xhi) = neighbourhood(pts, i);
    let (ylo, yhi) = neighbourhood(pts, j);
    let mut best = start;
    for _ in 0..3 {
        let (bx, vx) = golden_min(&|s| f(s, y), xlo, xhi);
        if vx < best {
            best = vx;
            x = bx;
        }
        let (by, vy) = golden_min(&|s| f(x, s), ylo, yhi);
        if vy < best {
            best = vy;
            y = by;
        }
    }
    best
}

fn extrema_2d(f: &dyn Fn(f64, f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let pts = grid(a, b, GRID_2D);
    let n = pts.len();
    let mut vals = Vec::with_capacity(n * n);
    for &x in &pts {
        for &y in &pts {
            vals.push(f(x, y));
        }
    }
    let e = scan(vals.iter().copied());
    let min = refine_2d(f, &pts, e.argmin / n, e.argmin % n, e.min);
    let max = -refine_2d(&|x, y| -f(x, y), &pts, e.argmax / n, e.argmax % n, -e.max);
    (min, max)
}

/// Min and max of G′ over [u_lo, u_hi] (a subset of the range of F).
pub fn g_prime_extrema(resp: &FrequencyResponse, u_lo: f64, u_hi: f64) -> Result<(f64, f64)> {
    if !(u_lo <= u_hi) {
        return domain(format!("empty interval [{u_lo}, {u_hi}]"));
    }
    if !resp.in_range(u_lo) || !resp.in_range(u_hi) {
        return domain(format!("[{u_lo}, {u_hi}] is not inside the range of F"));
    }
    if resp.is_linear() {
        return Ok((1.0, 1.0));
    }
    if u_lo == u_hi {
        let g = resp.g_prime(u_lo)?;
        return Ok((g, g));
    }
    let g_prime = |u: f64| resp.g_prime(u).unwrap_or(f64::NAN);
    let (lo, hi) = extrema_1d(&g_prime, u_lo, u_hi);
    if lo.is_finite() && hi.is_finite() {
        Ok((lo, hi))
    } else {
        Err(crate::error::GkError::Numeric(format!("G' not finite on [{u_lo}, {u_hi}]")))
    }
}

/// Extrema of F′ on [a_G, b_G], of G′ on [F(a_G), F(b_G)], of 𝒬⁻¹[F] on
/// [a_G, b_G]² and of |𝒬[G′]| on [F(a_G), F(b_G)]².
pub fn interval_extrema(
    resp: &FrequencyResponse,
    a_g: f64,
    b_g: f64,
    tolerance: f64,
) -> Result<IntervalConstants> {
    if !(a_g < b_g) {
        return domain(format!("empty interval [{a_g}, {b_g}]"));
    }
    if !resp.in_domain(a_g) || !resp.in_domain(b_g) {
        return domain(format!(
            "[{a_g}, {b_g}] is not inside (-L, L) with L = {}",
            resp.half_width().value()
        ));
    }
    if !(tolerance > 0.0) {
        return domain(format!("tolerance must be positive, got {tolerance}"));
    }
    if resp.is_linear() {
        return Ok(IntervalConstants {
            a_g,
            b_g,
            m_fprime: 1.0,
            max_fprime: 1.0,
            m_gprime: 1.0,
            max_gprime: 1.0,
            m_qinv: 1.0,
            max_qinv: 1.0,
            m_qgp: 0.0,
            max_qgp: 0.0,
            tolerance,
        });
    }

    let (m_fprime, max_fprime) = extrema_1d(&|x| resp.f_prime(x), a_g, b_g);

    let (fa, fb) = (resp.f(a_g), resp.f(b_g));
    let g_prime = |u: f64| resp.g_prime(u).unwrap_or(f64::NAN);
    let (m_gprime, max_gprime) = extrema_1d(&g_prime, fa, fb);

    let qinv = |x: f64, y: f64| resp.quotient_inverse_f(x, y).unwrap_or(f64::NAN);
    let (m_qinv, max_qinv) = extrema_2d(&qinv, a_g, b_g);

    let qgp = |u: f64, v: f64| resp.quotient_g_prime(u, v).map(f64::abs).unwrap_or(f64::NAN);
    let (m_qgp, max_qgp) = extrema_2d(&qgp, fa, fb);

    let out = IntervalConstants {
        a_g,
        b_g,
        m_fprime,
        max_fprime,
        m_gprime,
        max_gprime,
        m_qinv,
        max_qinv,
        m_qgp,
        max_qgp,
        tolerance,
    };
    let all = [m_fprime, max_fprime, m_gprime, max_gprime, m_qinv, max_qinv, m_qgp, max_qgp];
    if all.iter().any(|v| !v.is_finite()) {
        return Err(crate::error::GkError::Numeric(format!(
            "non-finite interval constant on [{a_g}, {b_g}]: {out:?}"
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_constants_are_trivial() {
        let c = interval_extrema(&FrequencyResponse::linear(), -1.0, 1.0, 1e-9).unwrap();
        assert_eq!((c.m_fprime, c.max_fprime, c.m_gprime, c.max_gprime), (1.0, 1.0, 1.0, 1.0));
        assert_eq!((c.m_qinv, c.max_qinv, c.m_qgp, c.max_qgp), (1.0, 1.0, 0.0, 0.0));
    }

    #[test]
    fn cubic_constants() {
        let r = FrequencyResponse::catalog("cubic").unwrap();
        let c = interval_extrema(&r, 0.0, 1.0, 1e-9).unwrap();
        assert!((c.max_fprime - 4.0).abs() < 1e-12);
        assert!((c.m_fprime - 1.0).abs() < 1e-12);
        // 𝒬⁻¹[F] is the reciprocal of the mean of F′ between its arguments.
        assert!((c.max_qinv - 1.0).abs() < 1e-9);
        assert!((c.m_qinv - 0.25).abs() < 1e-9);
        assert!(c.is_consistent());
    }

    #[test]
    fn relativistic_minimum_at_zero() {
        let r = FrequencyResponse::relativistic(1.0).unwrap();
        let c = interval_extrema(&r, -0.5, 0.5, 1e-9).unwrap();
        assert!((c.m_fprime - r.f_prime(0.0)).abs() < 1e-12);
        assert!((c.m_fprime - 2.0).abs() < 1e-12);
        assert!(c.is_consistent());
    }

    #[test]
    fn empty_interval_is_rejected() {
        let r = FrequencyResponse::linear();
        assert!(interval_extrema(&r, 1.0, 1.0, 1e-9).is_err());
        let rel = FrequencyResponse::relativistic(1.0).unwrap();
        assert!(interval_extrema(&rel, -1.0, 0.5, 1e-9).is_err());
    }
}
