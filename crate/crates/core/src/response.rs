//! Response functions F, their inverses G = F⁻¹ and the divided-difference
//! quotients built from them.

use std::fmt;
use std::sync::Arc;

use crate::error::{domain, GkError, Result};

type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Half-width of the domain (−L, L) of a response function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HalfWidth {
    Finite(f64),
    Unbounded,
}

impl HalfWidth {
    pub fn value(&self) -> f64 {
        match *self {
            HalfWidth::Finite(l) => l,
            HalfWidth::Unbounded => f64::INFINITY,
        }
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        match *self {
            HalfWidth::Finite(l) => x.abs() < l,
            HalfWidth::Unbounded => x.is_finite(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ResponseKind {
    Linear,
    Relativistic { c: f64 },
    Custom { name: String },
}

impl fmt::Display for ResponseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResponseKind::Linear => write!(f, "linear"),
            ResponseKind::Relativistic { c } => write!(f, "relativistic(c={c})"),
            ResponseKind::Custom { name } => write!(f, "custom({name})"),
        }
    }
}

/// Maximum number of root-search iterations in [`FrequencyResponse::invert`].
const MAX_INVERT_ITERATIONS: usize = 400;
/// Step of the central difference used for G″.
const G_SECOND_DERIVATIVE_STEP: f64 = 1e-5;
/// Points in the invariant grid checked at construction.
const INVARIANT_GRID_POINTS: usize = 401;

/// An odd, strictly increasing C² map F on (−L, L) together with F′.
///
/// G = F⁻¹ is never stored; it is evaluated by a bracketed root search.
#[derive(Clone)]
pub struct FrequencyResponse {
    kind: ResponseKind,
    half_width: HalfWidth,
    /// sup of F over (−L, L); +∞ when F is onto ℝ.
    range_limit: f64,
    f: RealFn,
    f_prime: RealFn,
}

impl fmt::Debug for FrequencyResponse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FrequencyResponse")
            .field("kind", &self.kind)
            .field("half_width", &self.half_width)
            .field("range_limit", &self.range_limit)
            .finish()
    }
}

/// Names accepted by [`FrequencyResponse::catalog`].
pub const CATALOG: &[&str] = &["cubic", "tanh2", "arctan"];

impl FrequencyResponse {
    /// F(ω) = ω; the classical Kuramoto case.
    pub fn linear() -> Self {
        Self {
            kind: ResponseKind::Linear,
            half_width: HalfWidth::Unbounded,
            range_limit: f64::INFINITY,
            f: Arc::new(|x| x),
            f_prime: Arc::new(|_| 1.0),
        }
    }

    /// F(ω) = ωΓ(1 + Γ/c²) with Γ = 1/√(1 − ω²/c²), defined for |ω| < c.
    pub fn relativistic(c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return domain(format!("relativistic response needs c > 0, got {c}"));
        }
        let c2 = c * c;
        let gamma = move |w: f64| 1.0 / (1.0 - w * w / c2).sqrt();
        let resp = Self {
            kind: ResponseKind::Relativistic { c },
            half_width: HalfWidth::Finite(c),
            range_limit: f64::INFINITY,
            f: Arc::new(move |w| {
                let g = gamma(w);
                w * g * (1.0 + g / c2)
            }),
            f_prime: Arc::new(move |w| {
                let g = gamma(w);
                let w2 = w * w;
                g + w2 * g * g * g / c2 + g * g / c2 + 2.0 * w2 * g.powi(4) / (c2 * c2)
            }),
        };
        resp.check_invariants()?;
        Ok(resp)
    }

    /// A caller-supplied response. `range_limit` is sup F over the domain
    /// (`f64::INFINITY` if F is onto ℝ). The structural invariants are checked
    /// on a grid before the response is returned.
    pub fn custom<F, D>(
        name: impl Into<String>,
        half_width: HalfWidth,
        range_limit: f64,
        f: F,
        f_prime: D,
    ) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if let HalfWidth::Finite(l) = half_width {
            if !(l.is_finite() && l > 0.0) {
                return domain(format!("half-width must be positive, got {l}"));
            }
        }
        if range_limit.is_nan() || range_limit <= 0.0 {
            return domain(format!("range limit must be positive, got {range_limit}"));
        }
        let resp = Self {
            kind: ResponseKind::Custom { name: name.into() },
            half_width,
            range_limit,
            f: Arc::new(f),
            f_prime: Arc::new(f_prime),
        };
        resp.check_invariants()?;
        Ok(resp)
    }

    /// Built-in test responses: `cubic` is x³ + x, `tanh2` is 2·tanh(x) with
    /// range (−2, 2), `arctan` is tan(x) on (−π/2, π/2).
    pub fn catalog(name: &str) -> Result<Self> {
        match name {
            "cubic" => Self::custom(
                "cubic",
                HalfWidth::Unbounded,
                f64::INFINITY,
                |x| x * x * x + x,
                |x| 3.0 * x * x + 1.0,
            ),
            "tanh2" => Self::custom(
                "tanh2",
                HalfWidth::Unbounded,
                2.0,
                |x| 2.0 * x.tanh(),
                |x| {
                    let c = x.cosh();
                    2.0 / (c * c)
                },
            ),
            "arctan" => Self::custom(
                "arctan",
                HalfWidth::Finite(std::f64::consts::FRAC_PI_2),
                f64::INFINITY,
                |x| x.tan(),
                |x| {
                    let c = x.cos();
                    1.0 / (c * c)
                },
            ),
            other => domain(format!(
                "unknown catalog response '{other}'; available: {}",
                CATALOG.join(", ")
            )),
        }
    }

    pub fn kind(&self) -> &ResponseKind {
        &self.kind
    }

    pub fn half_width(&self) -> HalfWidth {
        self.half_width
    }

    /// sup F over (−L, L).
    pub fn range_limit(&self) -> f64 {
        self.range_limit
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.kind, ResponseKind::Linear)
    }

    /// True iff x ∈ (−L, L).
    #[inline]
    pub fn in_domain(&self, x: f64) -> bool {
        self.half_width.contains(x)
    }

    /// True iff y lies in the open range F((−L, L)).
    #[inline]
    pub fn in_range(&self, y: f64) -> bool {
        y.is_finite() && y.abs() < self.range_limit
    }

    #[inline]
    pub fn f(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    #[inline]
    pub fn f_prime(&self, x: f64) -> f64 {
        (self.f_prime)(x)
    }

    fn require_domain(&self, x: f64) -> Result<()> {
        if self.in_domain(x) {
            Ok(())
        } else {
            domain(format!("{x} is outside (-L, L) with L = {}", self.half_width.value()))
        }
    }

    fn require_range(&self, y: f64) -> Result<()> {
        if self.in_range(y) {
            Ok(())
        } else {
            domain(format!(
                "{y} is outside the range of F, (-{0}, {0})",
                self.range_limit
            ))
        }
    }

    /// G(y) = F⁻¹(y) by a safeguarded Newton iteration inside a bisection
    /// bracket. The result satisfies |F(ω) − y| ≤ 1e-12·max(1, |y|), or lies
    /// between two adjacent floats that straddle y.
    pub fn invert(&self, y: f64) -> Result<f64> {
        self.require_range(y)?;
        if self.is_linear() || y == 0.0 {
            return Ok(y);
        }
        let target = y.abs();
        let tol = 1e-12 * target.max(1.0);

        // Bracket [lo, hi] with F(lo) ≤ target < F(hi); F(0) = 0 by oddness.
        let mut lo = 0.0_f64;
        let mut hi = match self.half_width {
            HalfWidth::Finite(l) => l,
            HalfWidth::Unbounded => {
                let mut b = target.max(1.0);
                let mut expansions = 0;
                while self.f(b) <= target {
                    lo = b;
                    b *= 2.0;
                    expansions += 1;
                    if expansions > 2000 || !b.is_finite() {
                        return Err(GkError::Numeric(format!(
                            "could not bracket F(x) = {target}"
                        )));
                    }
                }
                b
            }
        };

        let mut x = 0.5 * (lo + hi);
        for _ in 0..MAX_INVERT_ITERATIONS {
            let fx = self.f(x);
            if !fx.is_finite() {
                // Only possible right at the domain edge; shrink the bracket.
                hi = x;
                x = 0.5 * (lo + hi);
                continue;
            }
            let r = fx - target;
            let dfx = self.f_prime(x);
            // Small residual alone is not enough where F is flat.
            let floor = 4.0 * f64::EPSILON * target;
            if r.abs() <= floor || (r.abs() <= tol && (r / dfx).abs() <= 1e-14 * x.abs().max(1.0)) {
                return Ok(x.copysign(y));
            }
            if r < 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                // Bracket collapsed to adjacent floats.
                return Ok(x.copysign(y));
            }
            let newton = x - r / dfx;
            x = if dfx > 0.0 && newton > lo && newton < hi { newton } else { mid };
        }
        Err(GkError::Numeric(format!(
            "inversion of F at {y} did not converge in {MAX_INVERT_ITERATIONS} iterations"
        )))
    }

    /// G′(u) = 1/F′(G(u)).
    pub fn g_prime(&self, u: f64) -> Result<f64> {
        Ok(1.0 / self.f_prime(self.invert(u)?))
    }

    /// G″(u) by a central difference of G′ with step 1e-5, moved inward when
    /// the stencil would leave the range of F.
    pub fn g_second(&self, u: f64) -> Result<f64> {
        self.require_range(u)?;
        if self.is_linear() {
            return Ok(0.0);
        }
        let mut h = G_SECOND_DERIVATIVE_STEP * u.abs().max(1.0);
        while !(self.in_range(u + h) && self.in_range(u - h)) {
            h *= 0.5;
            if h < 1e-14 {
                return Err(GkError::Numeric(format!("no room for a G'' stencil at {u}")));
            }
        }
        Ok((self.g_prime(u + h)? - self.g_prime(u - h)?) / (2.0 * h))
    }

    /// 𝒬⁻¹[F](x, y) = (x − y)/(F(x) − F(y)), with 1/F′ on the diagonal.
    pub fn quotient_inverse_f(&self, x: f64, y: f64) -> Result<f64> {
        self.require_domain(x)?;
        self.require_domain(y)?;
        if self.is_linear() {
            return Ok(1.0);
        }
        let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
        if hi - lo > switch_width(lo, hi) {
            Ok((hi - lo) / (self.f(hi) - self.f(lo)))
        } else {
            Ok(1.0 / self.f_prime(0.5 * (lo + hi)))
        }
    }

    /// 𝒬[G′](u, v) = (G′(u) − G′(v))/(u − v), with G″ on the diagonal.
    pub fn quotient_g_prime(&self, u: f64, v: f64) -> Result<f64> {
        self.require_range(u)?;
        self.require_range(v)?;
        if self.is_linear() {
            return Ok(0.0);
        }
        let (lo, hi) = if u <= v { (u, v) } else { (v, u) };
        if hi - lo > switch_width(lo, hi) {
            Ok((self.g_prime(hi)? - self.g_prime(lo)?) / (hi - lo))
        } else {
            self.g_second(0.5 * (lo + hi))
        }
    }

    /// Grid over which the structural invariants are checked.
    fn invariant_grid(&self) -> Vec<f64> {
        let r = match self.half_width {
            HalfWidth::Finite(l) => l * (1.0 - 1e-3),
            HalfWidth::Unbounded => 5.0,
        };
        let n = INVARIANT_GRID_POINTS;
        (0..n).map(|i| -r + 2.0 * r * i as f64 / (n - 1) as f64).collect()
    }

    /// Oddness, positivity of F′ and round-trip consistency of G on a grid.
    pub fn check_invariants(&self) -> Result<()> {
        for x in self.invariant_grid() {
            let fx = self.f(x);
            let fm = self.f(-x);
            if !fx.is_finite() {
                return Err(violation("F is not finite", x));
            }
            if (fm + fx).abs() > 1e-12 * fx.abs().max(1.0) {
                return Err(violation("F is not odd", x));
            }
            let d = self.f_prime(x);
            if !(d > 0.0) {
                return Err(violation("F' is not positive", x));
            }
            if fx.abs() >= self.range_limit {
                return Err(violation("F exceeds its declared range", x));
            }
        }
        let grid = self.invariant_grid();
        for w in grid.windows(2) {
            if self.f(w[1]) <= self.f(w[0]) {
                return Err(violation("F is not increasing", w[1]));
            }
        }
        for x in grid {
            let back = self.invert(self.f(x))?;
            if (back - x).abs() > 1e-10 {
                return Err(violation("G(F(x)) does not return x", x));
            }
        }
        Ok(())
    }
}

fn violation(what: &str, x: f64) -> GkError {
    GkError::InvariantViolation { what: what.to_string(), x }
}

/// Diagonal switch width of the quotient functionals, symmetric in its
/// arguments.
#[inline]
fn switch_width(a: f64, b: f64) -> f64 {
    1e-8 * a.abs().max(b.abs()).max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cubic() -> FrequencyResponse {
        FrequencyResponse::catalog("cubic").unwrap()
    }

    #[test]
    fn linear_is_identity() {
        let r = FrequencyResponse::linear();
        assert_eq!(r.f(0.7), 0.7);
        assert_eq!(r.invert(3.5).unwrap(), 3.5);
        assert_eq!(r.quotient_inverse_f(0.3, -0.8).unwrap(), 1.0);
        assert_eq!(r.quotient_g_prime(4.0, -1.0).unwrap(), 0.0);
    }

    #[test]
    fn relativistic_values() {
        let r = FrequencyResponse::relativistic(1.0).unwrap();
        assert_eq!(r.f(0.0), 0.0);
        let r2 = FrequencyResponse::relativistic(2.0).unwrap();
        // Hand evaluation: Γ(1) = 1/√0.75.
        let g = 1.0 / 0.75f64.sqrt();
        let expected = g * (1.0 + g / 4.0);
        assert!((r2.f(1.0) - expected).abs() < 1e-15);
        assert!((r2.f(1.0) - 1.488034).abs() < 1e-6);
        assert!((r2.invert(r2.f(1.0)).unwrap() - 1.0).abs() < 1e-12);
        assert!(FrequencyResponse::relativistic(0.0).is_err());
    }

    #[test]
    fn relativistic_derivative_matches_finite_difference() {
        let r = FrequencyResponse::relativistic(1.5).unwrap();
        for &x in &[-1.2, -0.4, 0.0, 0.3, 1.0, 1.4] {
            let h = 1e-6;
            let fd = (r.f(x + h) - r.f(x - h)) / (2.0 * h);
            assert!((fd - r.f_prime(x)).abs() < 1e-5 * fd.abs().max(1.0), "x = {x}");
        }
    }

    #[test]
    fn cubic_inverse_and_quotients() {
        let r = cubic();
        assert!((r.invert(2.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((r.quotient_inverse_f(1.0, 0.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((r.quotient_inverse_f(1.0, 1.0).unwrap() - 0.25).abs() < 1e-15);
        assert!((r.quotient_g_prime(2.0, 0.0).unwrap() + 0.375).abs() < 1e-12);
    }

    #[test]
    fn g_second_matches_implicit_formula() {
        // G″(u) = −F″(G(u))/F′(G(u))³ with F″(x) = 6x for the cubic.
        let r = cubic();
        for &u in &[-3.0, -0.5, 0.0, 0.7, 2.0] {
            let x = r.invert(u).unwrap();
            let exact = -6.0 * x / r.f_prime(x).powi(3);
            assert!((r.g_second(u).unwrap() - exact).abs() < 1e-8, "u = {u}");
        }
        assert!((r.quotient_g_prime(2.0, 2.0).unwrap() - r.g_second(2.0).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn invert_rejects_out_of_range() {
        let r = FrequencyResponse::catalog("tanh2").unwrap();
        assert!(matches!(r.invert(2.0), Err(GkError::Domain(_))));
        assert!(r.invert(1.999).is_ok());
        let rel = FrequencyResponse::relativistic(1.0).unwrap();
        assert!(matches!(rel.quotient_inverse_f(1.0, 0.0), Err(GkError::Domain(_))));
    }

    #[test]
    fn custom_rejects_non_odd_and_decreasing() {
        let even = FrequencyResponse::custom(
            "shifted",
            HalfWidth::Unbounded,
            f64::INFINITY,
            |x| x + 0.1,
            |_| 1.0,
        );
        assert!(matches!(even, Err(GkError::InvariantViolation { .. })));
        let decreasing = FrequencyResponse::custom(
            "neg",
            HalfWidth::Unbounded,
            f64::INFINITY,
            |x| -x,
            |_| -1.0,
        );
        match decreasing {
            Err(GkError::InvariantViolation { what, .. }) => assert!(what.contains("positive")),
            other => panic!("expected invariant violation, got {other:?}"),
        }
    }

    #[test]
    fn steep_inversion_near_the_domain_edge() {
        let r = FrequencyResponse::relativistic(1.0).unwrap();
        let y = 1e6;
        let w = r.invert(y).unwrap();
        assert!(w < 1.0 && w > 0.99);
        assert!(r.invert(-y).unwrap() == -w);
    }
}
