//! Continuum phase fields on the unit cube: dyadic partitions, cell averages,
//! lifted lattice solutions, the Picard local solver and the limit,
//! L¹-envelope and L∞-contraction experiments.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::constants::g_prime_extrema;
use crate::error::{domain, GkError, Result};
use crate::framework::{certify_framework_b, FrameworkParams};
use crate::numerics::{compensated_sum, CompensatedSum};
use crate::ode::{Scheme, TimeGrid};
use crate::particle::{self, coupling_arguments, Coupling, OscillatorEnsemble, Trajectory};
use crate::response::FrequencyResponse;

/// Largest supported partition level.
pub const MAX_LEVEL: usize = 24;

const GL_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683_1,
    0.0,
    0.538_469_310_105_683_1,
    0.906_179_845_938_664,
];
const GL_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];

/// An axis-aligned box of the dyadic partition, identified by its level and
/// index in binary refinement order.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub level: usize,
    pub index: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Cell {
    /// Cell `index` of the level-`level` partition of [0,1]^d. The split at
    /// depth j halves axis j mod d.
    pub fn new(d: usize, level: usize, index: usize) -> Self {
        let mut lo = vec![0.0; d];
        let mut width = vec![1.0; d];
        for j in 0..level {
            let axis = j % d;
            width[axis] *= 0.5;
            if (index >> (level - 1 - j)) & 1 == 1 {
                lo[axis] += width[axis];
            }
        }
        let hi = lo.iter().zip(&width).map(|(l, w)| l + w).collect();
        Self { level, index, lo, hi }
    }

    pub fn measure(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    pub fn diameter(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| (h - l).powi(2)).sum::<f64>().sqrt()
    }

    /// 5^d Gauss–Legendre points and weights (weights sum to 1).
    fn quadrature(&self) -> Vec<(Vec<f64>, f64)> {
        let d = self.lo.len();
        let total = 5usize.pow(d as u32);
        (0..total)
            .map(|mut k| {
                let mut x = vec![0.0; d];
                let mut w = 1.0;
                for i in 0..d {
                    let q = k % 5;
                    k /= 5;
                    let half = 0.5 * (self.hi[i] - self.lo[i]);
                    x[i] = self.lo[i] + half * (1.0 + GL_NODES[q]);
                    w *= 0.5 * GL_WEIGHTS[q];
                }
                (x, w)
            })
            .collect()
    }
}

/// Index of the level-`level` cell containing x (cells are half-open; the
/// upper faces of the cube belong to the last cell).
pub fn cell_index(x: &[f64], level: usize) -> usize {
    let d = x.len();
    let mut lo = vec![0.0; d];
    let mut width = vec![1.0; d];
    let mut a = 0usize;
    for j in 0..level {
        let axis = j % d;
        width[axis] *= 0.5;
        let upper = x[axis] >= lo[axis] + width[axis];
        if upper {
            lo[axis] += width[axis];
        }
        a = 2 * a + upper as usize;
    }
    a
}

/// The 2^level cells of the dyadic partition of [0,1]^d.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub d: usize,
    pub level: usize,
    pub cells: Vec<Cell>,
}

impl Partition {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Lebesgue measure of each cell, 2^{−level}.
    pub fn cell_measure(&self) -> f64 {
        (0.5f64).powi(self.level as i32)
    }
}

pub fn dyadic_partition(d: usize, level: usize) -> Result<Partition> {
    if d == 0 {
        return domain("spatial dimension must be at least 1");
    }
    if level > MAX_LEVEL {
        return domain(format!("partition level {level} exceeds {MAX_LEVEL}"));
    }
    let cells = (0..1usize << level).map(|a| Cell::new(d, level, a)).collect();
    Ok(Partition { d, level, cells })
}

type PointFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type PairFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// A scalar function on [0,1]^d.
#[derive(Clone)]
pub enum ScalarField {
    Constant(f64),
    /// offset + slope·x.
    Affine { offset: f64, slope: Vec<f64> },
    /// amplitude·sin(π·wavenumber·x_axis) + offset.
    Sine { amplitude: f64, wavenumber: f64, axis: usize, offset: f64 },
    /// Constant on each cell of the level-`level` partition.
    Cellwise { level: usize, values: Vec<f64> },
    Custom(PointFn),
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(c) => write!(f, "Constant({c})"),
            Self::Affine { offset, slope } => write!(f, "Affine({offset}, {slope:?})"),
            Self::Sine { amplitude, wavenumber, axis, offset } => {
                write!(f, "Sine({amplitude}, {wavenumber}, axis {axis}, {offset})")
            }
            Self::Cellwise { level, values } => write!(f, "Cellwise(level {level}, {values:?})"),
            Self::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// Sample points per axis used for sampled extrema and sup norms.
fn samples_per_axis(d: usize) -> usize {
    match d {
        1 => 8193,
        2 => 257,
        3 => 33,
        _ => 9,
    }
}

/// Uniform grid on [0,1]^d with `n` points per axis, including the faces.
fn sample_grid(d: usize, n: usize) -> impl Iterator<Item = Vec<f64>> {
    let total = n.pow(d as u32);
    (0..total).map(move |mut k| {
        let mut x = vec![0.0; d];
        for xi in x.iter_mut() {
            *xi = (k % n) as f64 / (n - 1) as f64;
            k /= n;
        }
        x
    })
}

impl ScalarField {
    /// A sine profile shifted to have zero mean over [0, 1].
    pub fn centered_sine(amplitude: f64, wavenumber: f64, axis: usize) -> Self {
        let k = std::f64::consts::PI * wavenumber;
        let mean = amplitude * (1.0 - k.cos()) / k;
        Self::Sine { amplitude, wavenumber, axis, offset: -mean }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Self::Constant(c) => *c,
            Self::Affine { offset, slope } => offset + slope.iter().zip(x).map(|(s, v)| s * v).sum::<f64>(),
            Self::Sine { amplitude, wavenumber, axis, offset } => {
                amplitude * (std::f64::consts::PI * wavenumber * x[*axis]).sin() + offset
            }
            Self::Cellwise { level, values } => values[cell_index(x, *level)],
            Self::Custom(f) => f(x),
        }
    }

    fn validate(&self, d: usize) -> Result<()> {
        match self {
            Self::Affine { slope, .. } if slope.len() != d => {
                domain(format!("affine slope has {} entries for dimension {d}", slope.len()))
            }
            Self::Sine { axis, .. } if *axis >= d => domain(format!("sine axis {axis} ≥ dimension {d}")),
            Self::Cellwise { level, values } if values.len() != 1 << level => {
                domain(format!("level-{level} field needs {} values, got {}", 1usize << level, values.len()))
            }
            _ => Ok(()),
        }
    }

    /// Average over a cell: exact for constant and cellwise fields,
    /// 5-point Gauss–Legendre per axis otherwise.
    pub fn cell_average(&self, cell: &Cell) -> Result<f64> {
        match self {
            Self::Constant(c) => Ok(*c),
            Self::Cellwise { level, values } => Ok(cellwise_average(values, *level, cell.level, cell.index)),
            _ => {
                let mut acc = CompensatedSum::new();
                for (x, w) in cell.quadrature() {
                    let v = self.eval(&x);
                    if !v.is_finite() {
                        return Err(GkError::Numeric(format!("non-finite field value at {x:?}")));
                    }
                    acc.add(w * v);
                }
                Ok(acc.value())
            }
        }
    }

    /// (inf, sup) over [0,1]^d, exact where the form allows it and sampled
    /// otherwise.
    pub fn sample_extrema(&self, d: usize) -> (f64, f64) {
        match self {
            Self::Constant(c) => (*c, *c),
            Self::Affine { offset, slope } => (
                offset + slope.iter().map(|s| s.min(0.0)).sum::<f64>(),
                offset + slope.iter().map(|s| s.max(0.0)).sum::<f64>(),
            ),
            Self::Cellwise { values, .. } => (
                values.iter().copied().fold(f64::INFINITY, f64::min),
                values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            ),
            _ => sample_grid(d, samples_per_axis(d)).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                let v = self.eval(&x);
                (lo.min(v), hi.max(v))
            }),
        }
    }

    /// Sampled continuity test: the largest jump between grid neighbours must
    /// shrink under a 4× refinement.
    pub fn looks_continuous(&self, d: usize) -> bool {
        match self {
            Self::Constant(_) | Self::Affine { .. } | Self::Sine { .. } => true,
            Self::Cellwise { values, .. } => values.iter().all(|v| *v == values[0]),
            Self::Custom(_) => {
                let n = samples_per_axis(d) / 4 + 1;
                let coarse = self.max_neighbour_jump(d, n);
                let fine = self.max_neighbour_jump(d, 4 * (n - 1) + 1);
                fine <= 0.5 * coarse + 1e-12
            }
        }
    }

    fn max_neighbour_jump(&self, d: usize, n: usize) -> f64 {
        let h = 1.0 / (n - 1) as f64;
        let mut jump: f64 = 0.0;
        for x in sample_grid(d, n) {
            let v = self.eval(&x);
            for i in 0..d {
                if x[i] + h <= 1.0 + 1e-12 {
                    let mut y = x.clone();
                    y[i] = (x[i] + h).min(1.0);
                    jump = jump.max((self.eval(&y) - v).abs());
                }
            }
        }
        jump
    }

    /// Sampled sup |f(x) − v_{cell(x)}| against a level-`level` cell vector.
    pub fn sup_distance_to_cellwise(&self, d: usize, level: usize, values: &[f64]) -> f64 {
        if let Self::Cellwise { level: m, values: own } = self {
            if *m <= level {
                return (0..values.len())
                    .map(|a| (own[a >> (level - m)] - values[a]).abs())
                    .fold(0.0, f64::max);
            }
        }
        sample_grid(d, samples_per_axis(d))
            .map(|x| (self.eval(&x) - values[cell_index(&x, level)]).abs())
            .fold(0.0, f64::max)
    }

    /// ∫|f − v_{cell}| over [0,1]^d by Gauss–Legendre on the cells of level
    /// `quad_level ≥ level`.
    pub fn l1_distance_to_cellwise(&self, d: usize, level: usize, values: &[f64], quad_level: usize) -> Result<f64> {
        if let Self::Cellwise { level: m, values: own } = self {
            if *m <= level {
                let w = 0.5f64.powi(level as i32);
                return Ok(compensated_sum((0..values.len()).map(|a| w * (own[a >> (level - m)] - values[a]).abs())));
            }
        }
        if let Self::Constant(c) = self {
            let w = 0.5f64.powi(level as i32);
            return Ok(compensated_sum(values.iter().map(|v| w * (c - v).abs())));
        }
        let q = quad_level.max(level);
        let parts: Vec<f64> = (0..1usize << q)
            .into_par_iter()
            .map(|b| {
                let cell = Cell::new(d, q, b);
                let v = values[b >> (q - level)];
                let mu = cell.measure();
                cell.quadrature().into_iter().map(|(x, w)| mu * w * (self.eval(&x) - v).abs()).sum::<f64>()
            })
            .collect();
        Ok(compensated_sum(parts))
    }
}

fn cellwise_average(values: &[f64], m: usize, level: usize, index: usize) -> f64 {
    if level >= m {
        values[index >> (level - m)]
    } else {
        let k = m - level;
        let block = &values[index << k..(index + 1) << k];
        compensated_sum(block.iter().copied()) / block.len() as f64
    }
}

/// A positive symmetric kernel φ(x, y) on [0,1]^d × [0,1]^d.
#[derive(Clone)]
pub enum KernelField {
    Constant(f64),
    /// base + amplitude·cos(π Σ_i (x_i − y_i)).
    Cosine { base: f64, amplitude: f64 },
    /// Constant on each pair of level-`level` cells; row-major values.
    Cellwise { level: usize, values: Vec<f64> },
    Custom(PairFn),
}

impl fmt::Debug for KernelField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(c) => write!(f, "Constant({c})"),
            Self::Cosine { base, amplitude } => write!(f, "Cosine({base}, {amplitude})"),
            Self::Cellwise { level, .. } => write!(f, "Cellwise(level {level})"),
            Self::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl KernelField {
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Self::Constant(c) => *c,
            Self::Cosine { base, amplitude } => {
                let s: f64 = x.iter().zip(y).map(|(a, b)| a - b).sum();
                base + amplitude * (std::f64::consts::PI * s).cos()
            }
            Self::Cellwise { level, values } => {
                let n = 1usize << level;
                values[cell_index(x, *level) * n + cell_index(y, *level)]
            }
            Self::Custom(f) => f(x, y),
        }
    }

    fn validate(&self) -> Result<()> {
        if let Self::Cellwise { level, values } = self {
            let n = 1usize << level;
            if values.len() != n * n {
                return domain(format!("level-{level} kernel needs {} values, got {}", n * n, values.len()));
            }
            for a in 0..n {
                for b in 0..a {
                    if values[a * n + b] != values[b * n + a] {
                        return domain(format!("cellwise kernel is not symmetric at ({a}, {b})"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Double average over cellA × cellB of the symmetrized kernel.
    pub fn cell_average2(&self, a: &Cell, b: &Cell) -> Result<f64> {
        match self {
            Self::Constant(c) => Ok(*c),
            Self::Cellwise { level, values } => {
                let n = 1usize << level;
                if a.level >= *level && b.level >= *level {
                    return Ok(values[(a.index >> (a.level - level)) * n + (b.index >> (b.level - level))]);
                }
                self.quadrature_average(a, b)
            }
            _ => self.quadrature_average(a, b),
        }
    }

    fn quadrature_average(&self, a: &Cell, b: &Cell) -> Result<f64> {
        let qa = a.quadrature();
        let qb = b.quadrature();
        let mut acc = CompensatedSum::new();
        for (x, wx) in &qa {
            for (y, wy) in &qb {
                let v = 0.5 * (self.eval(x, y) + self.eval(y, x));
                if !v.is_finite() {
                    return Err(GkError::Numeric(format!("non-finite kernel value at {x:?}, {y:?}")));
                }
                acc.add(wx * wy * v);
            }
        }
        Ok(acc.value())
    }

    pub fn sample_extrema(&self, d: usize) -> (f64, f64) {
        match self {
            Self::Constant(c) => (*c, *c),
            Self::Cosine { base, amplitude } => (base - amplitude.abs(), base + amplitude.abs()),
            Self::Cellwise { values, .. } => (
                values.iter().copied().fold(f64::INFINITY, f64::min),
                values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            ),
            Self::Custom(_) => {
                let n = kernel_samples(d);
                let pts: Vec<Vec<f64>> = sample_grid(d, n).collect();
                let mut out = (f64::INFINITY, f64::NEG_INFINITY);
                for x in &pts {
                    for y in &pts {
                        let v = self.eval(x, y);
                        out = (out.0.min(v), out.1.max(v));
                    }
                }
                out
            }
        }
    }

    /// sup_x ∫|φ(x, y)| dy; exact for constant and cellwise kernels.
    pub fn linf_l1_norm(&self, d: usize) -> f64 {
        match self {
            Self::Constant(c) => c.abs(),
            Self::Cellwise { level, values } => {
                let n = 1usize << level;
                (0..n)
                    .map(|a| compensated_sum(values[a * n..(a + 1) * n].iter().map(|v| v.abs())) / n as f64)
                    .fold(0.0, f64::max)
            }
            _ => {
                let cells = dyadic_partition(d, 6.min(4 * d)).expect("fixed level").cells;
                sample_grid(d, kernel_samples(d))
                    .map(|x| {
                        compensated_sum(cells.iter().flat_map(|c| {
                            let mu = c.measure();
                            c.quadrature().into_iter().map(move |(y, w)| (mu * w, y))
                        })
                        .map(|(w, y)| w * self.eval(&x, &y).abs()))
                    })
                    .fold(0.0, f64::max)
            }
        }
    }

    /// Sampled sup |φ − φ^N| against a level-`level` coupling.
    pub fn sup_distance_to(&self, d: usize, level: usize, phi_n: &Coupling) -> f64 {
        let n = 1usize << level;
        if let Self::Constant(c) = self {
            return match phi_n {
                Coupling::Uniform(u) => (c - u).abs(),
                Coupling::Dense { values, .. } => values.iter().map(|v| (c - v).abs()).fold(0.0, f64::max),
            };
        }
        if let Self::Cellwise { level: m, values } = self {
            if *m <= level {
                let nm = 1usize << m;
                let mut worst: f64 = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        let own = values[(a >> (level - m)) * nm + (b >> (level - m))];
                        worst = worst.max((own - phi_n.get(a, b)).abs());
                    }
                }
                return worst;
            }
        }
        let pts: Vec<Vec<f64>> = sample_grid(d, kernel_samples(d)).collect();
        let idx: Vec<usize> = pts.iter().map(|x| cell_index(x, level)).collect();
        let mut worst: f64 = 0.0;
        for (x, &a) in pts.iter().zip(&idx) {
            for (y, &b) in pts.iter().zip(&idx) {
                worst = worst.max((self.eval(x, y) - phi_n.get(a, b)).abs());
            }
        }
        worst
    }

    /// ∬|φ − φ^N| by Gauss–Legendre on pairs of level-`quad_level` cells.
    pub fn l1_distance_to(&self, d: usize, level: usize, phi_n: &Coupling, quad_level: usize) -> Result<f64> {
        if let (Self::Constant(c), Coupling::Uniform(u)) = (self, phi_n) {
            return Ok((c - u).abs());
        }
        if let Self::Cellwise { level: m, .. } = self {
            if *m <= level {
                let n = 1usize << level;
                let w = 1.0 / (n * n) as f64;
                let cells: Vec<Cell> = (0..n).map(|a| Cell::new(d, level, a)).collect();
                let mut acc = CompensatedSum::new();
                for a in 0..n {
                    for b in 0..n {
                        acc.add(w * (self.cell_average2(&cells[a], &cells[b])? - phi_n.get(a, b)).abs());
                    }
                }
                return Ok(acc.value());
            }
        }
        let q = quad_level.max(level);
        let cells: Vec<Cell> = (0..1usize << q).map(|a| Cell::new(d, q, a)).collect();
        let quads: Vec<Vec<(Vec<f64>, f64)>> = cells.iter().map(Cell::quadrature).collect();
        let mu = cells[0].measure();
        let rows: Vec<f64> = (0..cells.len())
            .into_par_iter()
            .map(|a| {
                let mut acc = CompensatedSum::new();
                for b in 0..cells.len() {
                    let v = phi_n.get(a >> (q - level), b >> (q - level));
                    for (x, wx) in &quads[a] {
                        for (y, wy) in &quads[b] {
                            acc.add(mu * mu * wx * wy * (self.eval(x, y) - v).abs());
                        }
                    }
                }
                acc.value()
            })
            .collect();
        Ok(compensated_sum(rows))
    }
}

fn kernel_samples(d: usize) -> usize {
    match d {
        1 => 513,
        2 => 33,
        _ => 5,
    }
}

/// Initial phase field, natural frequencies, coupling kernel and coupling
/// strength on [0,1]^d (total measure 1).
#[derive(Debug, Clone)]
pub struct ContinuumData {
    pub d: usize,
    pub theta0: ScalarField,
    pub nu: ScalarField,
    pub phi: KernelField,
    pub kappa: f64,
}

impl ContinuumData {
    pub fn new(d: usize, theta0: ScalarField, nu: ScalarField, phi: KernelField, kappa: f64) -> Result<Self> {
        if d == 0 {
            return domain("spatial dimension must be at least 1");
        }
        if !(kappa.is_finite() && kappa > 0.0) {
            return domain(format!("coupling strength must be positive, got {kappa}"));
        }
        theta0.validate(d)?;
        nu.validate(d)?;
        phi.validate()?;
        Ok(Self { d, theta0, nu, phi, kappa })
    }

    /// Same data with another initial phase field.
    pub fn with_theta0(&self, theta0: ScalarField) -> Result<Self> {
        Self::new(self.d, theta0, self.nu.clone(), self.phi.clone(), self.kappa)
    }

    /// ‖ν‖_∞ + κ b_φ bounds |argument of G| along any solution.
    fn argument_bound(&self, b_phi: f64) -> f64 {
        let (lo, hi) = self.nu.sample_extrema(self.d);
        lo.abs().max(hi.abs()) + self.kappa * b_phi
    }
}

/// Cell averages of the data at one partition level.
#[derive(Debug, Clone)]
pub struct LatticeData {
    pub partition: Partition,
    pub theta0: Vec<f64>,
    pub nu: Vec<f64>,
    pub phi: Coupling,
    pub kappa: f64,
}

impl LatticeData {
    pub fn ensemble(&self, resp: &FrequencyResponse) -> Result<OscillatorEnsemble> {
        OscillatorEnsemble::new(resp, self.theta0.clone(), self.nu.clone(), self.phi.clone(), self.kappa)
    }
}

/// Cell averages θ^{N,0}_α, ν^N_α and double averages φ^N_αβ at `level`.
pub fn project_data(data: &ContinuumData, level: usize) -> Result<LatticeData> {
    let partition = dyadic_partition(data.d, level)?;
    let theta0 = partition.cells.par_iter().map(|c| data.theta0.cell_average(c)).collect::<Result<Vec<_>>>()?;
    let nu = partition.cells.par_iter().map(|c| data.nu.cell_average(c)).collect::<Result<Vec<_>>>()?;
    let phi = match &data.phi {
        KernelField::Constant(c) => Coupling::uniform(*c)?,
        kernel => {
            let n = partition.len();
            let cells = &partition.cells;
            let upper: Vec<Vec<f64>> = (0..n)
                .into_par_iter()
                .map(|a| (a..n).map(|b| kernel.cell_average2(&cells[a], &cells[b])).collect::<Result<Vec<_>>>())
                .collect::<Result<_>>()?;
            let mut values = vec![0.0; n * n];
            for a in 0..n {
                for (k, &v) in upper[a].iter().enumerate() {
                    let b = a + k;
                    values[a * n + b] = v;
                    values[b * n + a] = v;
                }
            }
            Coupling::from_flat(n, values)?
        }
    };
    Ok(LatticeData { partition, theta0, nu, phi, kappa: data.kappa })
}

/// A phase field that is constant on every cell of a partition level.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseField {
    pub d: usize,
    pub level: usize,
    pub values: Vec<f64>,
    pub time: f64,
}

impl PiecewiseField {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.values[cell_index(x, self.level)]
    }

    /// Values on the cells of a finer level.
    pub fn refine(&self, level: usize) -> Vec<f64> {
        assert!(level >= self.level);
        (0..1usize << level).map(|b| self.values[b >> (level - self.level)]).collect()
    }

    /// Averages onto a coarser level.
    pub fn coarsen(&self, level: usize) -> Vec<f64> {
        assert!(level <= self.level);
        (0..1usize << level).map(|a| cellwise_average(&self.values, self.level, level, a)).collect()
    }

    pub fn sup_distance(&self, other: &PiecewiseField) -> f64 {
        let level = self.level.max(other.level);
        let a = self.refine(level);
        let b = other.refine(level);
        a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    pub fn l1_distance(&self, other: &PiecewiseField) -> f64 {
        let level = self.level.max(other.level);
        let w = 0.5f64.powi(level as i32);
        let a = self.refine(level);
        let b = other.refine(level);
        compensated_sum(a.iter().zip(&b).map(|(x, y)| w * (x - y).abs()))
    }

    pub fn diameter(&self) -> f64 {
        let lo = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    }
}

/// Time-indexed piecewise-constant fields on one partition level.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldTrajectory {
    pub d: usize,
    pub level: usize,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl FieldTrajectory {
    pub fn field(&self, k: usize) -> PiecewiseField {
        PiecewiseField { d: self.d, level: self.level, values: self.values[k].clone(), time: self.times[k] }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// The lattice solution read as a field constant on each cell.
pub fn lift(traj: &Trajectory, partition: &Partition) -> Result<FieldTrajectory> {
    if let Some(s) = traj.states.first() {
        if s.len() != partition.len() {
            return domain(format!("{} oscillators for {} cells", s.len(), partition.len()));
        }
    }
    Ok(FieldTrajectory {
        d: partition.d,
        level: partition.level,
        times: traj.times.clone(),
        values: traj.states.clone(),
    })
}

/// Projects the data to `level`, integrates the lattice system and lifts it.
pub fn solve_lattice(
    resp: &FrequencyResponse,
    data: &ContinuumData,
    level: usize,
    grid: TimeGrid,
    scheme: Scheme,
) -> Result<FieldTrajectory> {
    let lattice = project_data(data, level)?;
    let ens = lattice.ensemble(resp)?;
    let traj = particle::integrate(resp, &ens, grid, scheme)?;
    lift(&traj, &lattice.partition)
}

fn require_framework_b(resp: &FrequencyResponse, data: &ContinuumData, params: &FrameworkParams) -> Result<()> {
    let cert = certify_framework_b(resp, data, params)?;
    if cert.certificate.overall {
        Ok(())
    } else {
        Err(GkError::Precondition(format!(
            "continuum framework fails: {}",
            cert.certificate.failing().join(", ")
        )))
    }
}

/// Reference continuum solution: the lifted lattice solution at `level_ref`.
pub fn solve_continuum(
    resp: &FrequencyResponse,
    data: &ContinuumData,
    params: &FrameworkParams,
    level_ref: usize,
    grid: TimeGrid,
    scheme: Scheme,
) -> Result<FieldTrajectory> {
    require_framework_b(resp, data, params)?;
    solve_lattice(resp, data, level_ref, grid, scheme)
}

/// Result of the Picard iteration on one time slab.
#[derive(Debug, Clone, PartialEq)]
pub struct PicardReport {
    /// Slab length 1/(4 M* ‖φ‖_{L∞L¹}).
    pub zeta: f64,
    pub m_bound: f64,
    pub m_star: f64,
    /// Index k of the accepted iterate θ_k (θ_0 = θ⁰ for all t).
    pub iterations: usize,
    /// sup distance between consecutive iterates.
    pub distances: Vec<f64>,
    /// distances[k] / distances[k−1].
    pub ratios: Vec<f64>,
    pub final_residual: f64,
    pub fixed_point: FieldTrajectory,
}

/// Fixed-point iteration of θ ↦ θ⁰ + ∫₀ᵗ G(ν + κ∫φ sin(θ(s,z) − θ(s,x))dz) ds
/// on [0, ζ], discretized on the partition and `steps` trapezoid steps.
pub fn picard_local_solve(
    resp: &FrequencyResponse,
    data: &ContinuumData,
    partition: &Partition,
    tol: f64,
    max_iter: usize,
    steps: usize,
) -> Result<PicardReport> {
    if steps == 0 || max_iter == 0 || !(tol > 0.0) {
        return domain("Picard iteration needs steps ≥ 1, max_iter ≥ 1 and tol > 0");
    }
    let phi_norm = data.phi.linf_l1_norm(data.d);
    let (nlo, nhi) = data.nu.sample_extrema(data.d);
    let m_bound = nlo.abs().max(nhi.abs()) + data.kappa * phi_norm;
    if !resp.in_range(m_bound) {
        return domain(format!("M = {m_bound} exceeds the range of F"));
    }
    let (_, sup_gp) = g_prime_extrema(resp, -m_bound, m_bound)?;
    let m_star = data.kappa * sup_gp;
    let zeta = 1.0 / (4.0 * m_star * phi_norm);

    let lattice = project_data(data, partition.level)?;
    let ens = lattice.ensemble(resp)?;
    let n = ens.n();
    let h = zeta / steps as f64;
    let times: Vec<f64> = (0..=steps).map(|j| if j == steps { zeta } else { j as f64 * h }).collect();

    let apply = |theta: &[Vec<f64>]| -> Result<Vec<Vec<f64>>> {
        let integrand: Vec<Vec<f64>> = theta
            .par_iter()
            .map(|th| {
                let mut args = vec![0.0; n];
                coupling_arguments(&ens, th, &mut args);
                args.iter().map(|&u| resp.invert(u)).collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let mut out = Vec::with_capacity(theta.len());
        out.push(lattice.theta0.clone());
        for j in 1..theta.len() {
            let dt = times[j] - times[j - 1];
            let prev: &Vec<f64> = &out[j - 1];
            let next: Vec<f64> =
                (0..n).map(|a| prev[a] + 0.5 * dt * (integrand[j - 1][a] + integrand[j][a])).collect();
            out.push(next);
        }
        Ok(out)
    };
    let sup_dist = |a: &[Vec<f64>], b: &[Vec<f64>]| {
        a.iter().zip(b).flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs())).fold(0.0, f64::max)
    };

    let mut current: Vec<Vec<f64>> = vec![lattice.theta0.clone(); steps + 1];
    let mut distances = Vec::new();
    let mut ratios = Vec::new();
    let mut streak = 0;
    for k in 0..max_iter {
        let next = apply(&current)?;
        let dist = sup_dist(&next, &current);
        if let Some(&prev) = distances.last() {
            let r: f64 = if prev > 0.0 { dist / prev } else { 0.0 };
            ratios.push(r);
            streak = if r > 0.75 { streak + 1 } else { 0 };
            if streak >= 3 {
                return Err(GkError::Numeric(format!("Picard map is not contracting: ratio {r}")));
            }
        }
        distances.push(dist);
        current = next;
        if dist < tol {
            return Ok(PicardReport {
                zeta,
                m_bound,
                m_star,
                iterations: k + 1,
                distances,
                ratios,
                final_residual: dist,
                fixed_point: FieldTrajectory { d: data.d, level: partition.level, times, values: current },
            });
        }
    }
    Err(GkError::Numeric(format!(
        "Picard iteration did not reach {tol} in {max_iter} iterations (last distance {})",
        distances.last().copied().unwrap_or(f64::NAN)
    )))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimitRow {
    pub level: usize,
    /// sup over stored t of ‖θ^N − θ^ref‖_∞.
    pub sup_error: f64,
    pub theta0_error: f64,
    pub nu_error: f64,
    pub phi_error: f64,
    pub data_error: f64,
    /// sup_error / data_error, `None` when the data is exact at this level.
    pub ratio: Option<f64>,
}

/// Runs the projected lattice system at each level and compares it with the
/// reference solution at `level_ref`.
pub fn continuum_limit_experiment(
    resp: &FrequencyResponse,
    data: &ContinuumData,
    params: &FrameworkParams,
    levels: &[usize],
    level_ref: usize,
    grid: TimeGrid,
    scheme: Scheme,
) -> Result<Vec<LimitRow>> {
    let reference = solve_continuum(resp, data, params, level_ref, grid, scheme)?;
    levels
        .iter()
        .map(|&level| {
            if level > level_ref {
                return domain(format!("level {level} exceeds the reference level {level_ref}"));
            }
            let lattice = project_data(data, level)?;
            let ens = lattice.ensemble(resp)?;
            let traj = particle::integrate(resp, &ens, grid, scheme)?;
            let sup_error = (0..reference.len())
                .map(|k| {
                    let coarse = PiecewiseField { d: data.d, level, values: traj.states[k].clone(), time: traj.times[k] };
                    coarse.sup_distance(&reference.field(k))
                })
                .fold(0.0, f64::max);
            let theta0_error = data.theta0.sup_distance_to_cellwise(data.d, level, &lattice.theta0);
            let nu_error = data.nu.sup_distance_to_cellwise(data.d, level, &lattice.nu);
            let phi_error = data.phi.sup_distance_to(data.d, level, &lattice.phi);
            let data_error = theta0_error + nu_error + phi_error;
            Ok(LimitRow {
                level,
                sup_error,
                theta0_error,
                nu_error,
                phi_error,
                data_error,
                ratio: (data_error > 0.0).then(|| sup_error / data_error),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct L1EnvelopeReport {
    pub a: f64,
    pub b: f64,
    pub theta0_l1: f64,
    pub times: Vec<f64>,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    /// min over t > 0 of rhs − lhs.
    pub min_margin: f64,
    /// rhs − lhs at t = 0, where both sides are the same initial distance.
    pub initial_gap: f64,
    pub pass: bool,
}

/// Checks ‖θ(t) − θ^N(t)‖_{L¹} ≤ e^{at}‖θ^{N,0} − θ⁰‖_{L¹} + (b/a)(e^{at} − 1)
/// with a = 2M_{G′}b_φκ and b = M_{G′}(‖ν − ν^N‖_{L¹} + κ‖φ − φ^N‖_{L¹}).
/// θ is the reference solution at `level_ref`.
#[allow(clippy::too_many_arguments)]
pub fn finite_time_l1_experiment(
    resp: &FrequencyResponse,
    data: &ContinuumData,
    level: usize,
    level_ref: usize,
    b_phi: f64,
    grid: TimeGrid,
    scheme: Scheme,
) -> Result<L1EnvelopeReport> {
    let (_, phi_sup) = data.phi.sample_extrema(data.d);
    if !(phi_sup <= b_phi) {
        return Err(GkError::Precondition(format!("b_φ = {b_phi} is below sup φ = {phi_sup}")));
    }
    if level > level_ref {
        return domain(format!("level {level} exceeds the reference level {level_ref}"));
    }
    let m = data.argument_bound(b_phi);
    let (_, m_gp) = g_prime_extrema(resp, -m, m)?;
    let kappa = data.kappa;
    let a = 2.0 * m_gp * b_phi * kappa;

    let lattice = project_data(data, level)?;
    let quad_level = level_ref;
    let theta0_l1 = data.theta0.l1_distance_to_cellwise(data.d, level, &lattice.theta0, quad_level)?;
    let nu_l1 = data.nu.l1_distance_to_cellwise(data.d, level, &lattice.nu, quad_level)?;
    let phi_l1 = data.phi.l1_distance_to(data.d, level, &lattice.phi, (level + 3).min(level_ref).min(8))?;
    let b = m_gp * (nu_l1 + kappa * phi_l1);

    let reference = solve_lattice(resp, data, level_ref, grid, scheme)?;
    let coarse = lift(&particle::integrate(resp, &lattice.ensemble(resp)?, grid, scheme)?, &lattice.partition)?;
    let mut lhs = Vec::with_capacity(reference.len());
    let mut rhs = Vec::with_capacity(reference.len());
    for k in 0..reference.len() {
        let t = reference.times[k];
        lhs.push(coarse.field(k).l1_distance(&reference.field(k)));
        let e = (a * t).exp();
        rhs.push(e * theta0_l1 + b / a * (e - 1.0));
    }
    let initial_gap = rhs[0] - lhs[0];
    let min_margin = lhs.iter().zip(&rhs).skip(1).map(|(l, r)| r - l).fold(f64::INFINITY, f64::min);
    let pass = min_margin > 0.0 && initial_gap >= -1e-12 * rhs[0];
    Ok(L1EnvelopeReport {
        a,
        b,
        theta0_l1,
        times: reference.times,
        lhs,
        rhs,
        min_margin,
        initial_gap,
        pass,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionReport {
    pub times: Vec<f64>,
    pub dist_inf: Vec<f64>,
    pub dist_l1: Vec<f64>,
    pub production: Vec<f64>,
    /// ∫₀ᵗ P by the trapezoid rule on the stored times.
    pub production_integral: Vec<f64>,
    pub initial_distance: f64,
    /// max over t of ‖Δ(t)‖_∞ + ∫₀ᵗP − ‖Δ⁰‖_∞.
    pub max_violation: f64,
    pub min_production: f64,
    pub pass: bool,
}

/// L∞ contraction between two continuum solutions sharing ν, φ and κ and
/// starting from `data.theta0` and `theta0_tilde`, discretized at `level`.
#[allow(clippy::too_many_arguments)]
pub fn contraction_check(
    resp: &FrequencyResponse,
    data: &ContinuumData,
    theta0_tilde: &ScalarField,
    theta_star: f64,
    level: usize,
    grid: TimeGrid,
    scheme: Scheme,
) -> Result<ContractionReport> {
    particle::check_theta_star(theta_star)?;
    let d = data.d;
    let (a_phi, b_phi) = data.phi.sample_extrema(d);
    let (t_lo, t_hi) = data.theta0.sample_extrema(d);
    let (s_lo, s_hi) = theta0_tilde.sample_extrema(d);
    let (n_lo, n_hi) = data.nu.sample_extrema(d);
    let (dt0, dt1) = (t_hi - t_lo, s_hi - s_lo);
    let mut failures = Vec::new();
    if !(a_phi > 0.0) {
        failures.push(format!("inf φ = {a_phi} is not positive"));
    }
    if !(dt0 > 0.0 && dt0 < theta_star) || !(dt1 > 0.0 && dt1 < theta_star) {
        failures.push(format!("initial diameters {dt0}, {dt1} must lie in (0, {theta_star})"));
    }
    if a_phi > 0.0 && !(data.kappa > (n_hi - n_lo) / (a_phi * theta_star.sin())) {
        failures.push(format!("κ = {} is below D(ν)/(a_φ sin θ*)", data.kappa));
    }
    let other = data.with_theta0(theta0_tilde.clone())?;
    let lat = project_data(data, level)?;
    let lat_t = project_data(&other, level)?;
    let initial_distance =
        lat.theta0.iter().zip(&lat_t.theta0).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    if !(initial_distance < std::f64::consts::PI) {
        failures.push(format!("‖θ⁰ − θ̃⁰‖_∞ = {initial_distance} is not below π"));
    }
    if !failures.is_empty() {
        return Err(GkError::Precondition(failures.join("; ")));
    }

    let m = data.argument_bound(b_phi);
    let (m_gp, _) = g_prime_extrema(resp, -m, m)?;
    let coef = data.kappa * m_gp * a_phi * (2.0 * theta_star).sin() / (2.0 * theta_star);

    let ta = particle::integrate(resp, &lat.ensemble(resp)?, grid, scheme)?;
    let tb = particle::integrate(resp, &lat_t.ensemble(resp)?, grid, scheme)?;
    let w = 0.5f64.powi(level as i32);
    let mut dist_inf = Vec::new();
    let mut dist_l1 = Vec::new();
    let mut production = Vec::new();
    for (x, y) in ta.states.iter().zip(&tb.states) {
        let linf = x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        let l1 = compensated_sum(x.iter().zip(y).map(|(p, q)| w * (p - q).abs()));
        dist_inf.push(linf);
        dist_l1.push(l1);
        production.push(coef * (linf - l1));
    }
    let mut production_integral = vec![0.0];
    for k in 1..production.len() {
        let dt = ta.times[k] - ta.times[k - 1];
        production_integral.push(production_integral[k - 1] + 0.5 * dt * (production[k - 1] + production[k]));
    }
    let max_violation = dist_inf
        .iter()
        .zip(&production_integral)
        .map(|(dd, p)| dd + p - initial_distance)
        .fold(f64::NEG_INFINITY, f64::max);
    let min_production = production.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(ContractionReport {
        times: ta.times,
        dist_inf,
        dist_l1,
        production,
        production_integral,
        initial_distance,
        max_violation,
        min_production,
        pass: max_violation <= 1e-8 && min_production >= -1e-12,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiameterReport {
    pub pass: bool,
    pub max_diameter: f64,
}

/// D(θ(t, ·)) ≤ θ* + 1e-9 at every stored time.
pub fn continuum_diameter_check(fields: &FieldTrajectory, theta_star: f64) -> DiameterReport {
    let max_diameter = (0..fields.len()).map(|k| fields.field(k).diameter()).fold(0.0, f64::max);
    DiameterReport { pass: max_diameter <= theta_star + 1e-9, max_diameter }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_examples() {
        let p = dyadic_partition(1, 3).unwrap();
        assert_eq!(p.len(), 8);
        for (a, c) in p.cells.iter().enumerate() {
            assert_eq!(c.lo[0], a as f64 / 8.0);
            assert_eq!(c.hi[0], (a + 1) as f64 / 8.0);
        }
        let p = dyadic_partition(2, 2).unwrap();
        assert!(p.cells.iter().all(|c| c.measure() == 0.25));
        assert_eq!(p.cells[1].lo, vec![0.0, 0.5]);
        assert_eq!(p.cells[2].lo, vec![0.5, 0.0]);
    }

    #[test]
    fn children_follow_binary_order() {
        for d in 1..=3 {
            for level in 0..6 {
                for a in 0..1usize << level {
                    let parent = Cell::new(d, level, a);
                    let c0 = Cell::new(d, level + 1, 2 * a);
                    let c1 = Cell::new(d, level + 1, 2 * a + 1);
                    assert_eq!(c0.measure() + c1.measure(), parent.measure());
                    assert_eq!(c0.lo, parent.lo);
                    assert_eq!(c1.hi, parent.hi);
                }
            }
        }
    }

    #[test]
    fn cell_lookup_inverts_cell_construction() {
        for d in 1..=3 {
            let level = 7;
            for a in 0..1usize << level {
                let c = Cell::new(d, level, a);
                let mid: Vec<f64> = c.lo.iter().zip(&c.hi).map(|(l, h)| 0.5 * (l + h)).collect();
                assert_eq!(cell_index(&mid, level), a);
                assert_eq!(cell_index(&c.lo, level), a);
            }
        }
    }

    #[test]
    fn averages() {
        let f = ScalarField::Affine { offset: 0.0, slope: vec![1.0] };
        let c = Cell::new(1, 1, 0);
        assert!((f.cell_average(&c).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(ScalarField::Constant(2.5).cell_average(&Cell::new(2, 5, 3)).unwrap(), 2.5);
        let g = KernelField::Custom(Arc::new(|x: &[f64], y: &[f64]| x[0] * y[0]));
        let v = g.cell_average2(&Cell::new(1, 1, 0), &Cell::new(1, 1, 1)).unwrap();
        assert!((v - 3.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn projection_examples() {
        let data = ContinuumData::new(
            1,
            ScalarField::Affine { offset: 0.0, slope: vec![1.0] },
            ScalarField::Sine { amplitude: 1.0, wavenumber: 1.0, axis: 0, offset: 0.0 },
            KernelField::Constant(1.0),
            1.0,
        )
        .unwrap();
        let lat = project_data(&data, 1).unwrap();
        assert!((lat.theta0[0] - 0.25).abs() < 1e-15 && (lat.theta0[1] - 0.75).abs() < 1e-15);
        assert_eq!(lat.phi, Coupling::Uniform(1.0));
        // 2∫ sin(πx) over each half is 2/π.
        let exact = 2.0 / std::f64::consts::PI;
        assert!((lat.nu[0] - exact).abs() < 1e-10 && (lat.nu[1] - exact).abs() < 1e-10);
    }

    #[test]
    fn projection_is_idempotent_on_cellwise_data() {
        let values = vec![0.1, -0.2, 0.3, 0.05];
        let kernel: Vec<f64> = (0..16).map(|k| 1.0 + ((k / 4) + (k % 4)) as f64 * 0.1).collect();
        let data = ContinuumData::new(
            1,
            ScalarField::Cellwise { level: 2, values: values.clone() },
            ScalarField::Cellwise { level: 2, values: values.clone() },
            KernelField::Cellwise { level: 2, values: kernel.clone() },
            1.0,
        )
        .unwrap();
        let lat = project_data(&data, 2).unwrap();
        assert_eq!(lat.theta0, values);
        assert_eq!(lat.phi.to_flat(4), kernel);
    }

    #[test]
    fn lifted_fields() {
        let f = PiecewiseField { d: 1, level: 2, values: vec![1.0, 2.0, 3.0, 4.0], time: 0.0 };
        assert_eq!(f.eval(&[0.3]), 2.0);
        assert_eq!(f.refine(3), vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0]);
        let g = PiecewiseField { d: 1, level: 2, values: vec![1.5, 2.0, 2.0, 4.0], time: 0.0 };
        assert_eq!(f.sup_distance(&g), 1.0);
        assert_eq!(f.coarsen(1), vec![1.5, 3.5]);
    }

    #[test]
    fn picard_slab_length() {
        let data = ContinuumData::new(
            1,
            ScalarField::Affine { offset: 0.0, slope: vec![0.3] },
            ScalarField::Constant(0.0),
            KernelField::Constant(1.0),
            1.0,
        )
        .unwrap();
        let p = dyadic_partition(1, 4).unwrap();
        let rep = picard_local_solve(&FrequencyResponse::linear(), &data, &p, 1e-12, 60, 64).unwrap();
        assert_eq!(rep.zeta, 0.25);
        assert!(rep.ratios.iter().all(|&r| r <= 0.55));
    }
}
