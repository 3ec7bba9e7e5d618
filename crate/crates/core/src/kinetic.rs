//! Empirical measures on phase × frequency space, exact discrete Wasserstein
//! distances, and the mean-field experiments built on them.

use num_integer::Integer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::constants::interval_extrema;
use crate::error::{domain, GkError, Result};
use crate::framework::{Condition, FrameworkCertificate};
use crate::numerics::{compensated_sum, CompensatedSum, NormExponent};
use crate::ode::{Scheme, TimeGrid};
use crate::particle::{self, Coupling, OscillatorEnsemble};
use crate::response::FrequencyResponse;

/// A point (θ, ν).
pub type Point = (f64, f64);

/// d_q((θ, ν), (θ̃, ν̃)) = (|θ − θ̃|^q + |ν − ν̃|^q)^{1/q}; the phase
/// difference is the plain real difference.
pub fn metric_dq(a: Point, b: Point, q: NormExponent) -> f64 {
    let dt = (a.0 - b.0).abs();
    let dn = (a.1 - b.1).abs();
    match q {
        NormExponent::Infinity => dt.max(dn),
        NormExponent::Finite(p) if p == 1.0 => dt + dn,
        NormExponent::Finite(p) if p == 2.0 => dt.hypot(dn),
        NormExponent::Finite(p) => {
            let m = dt.max(dn);
            if m == 0.0 {
                0.0
            } else {
                m * ((dt / m).powf(p) + (dn / m).powf(p)).powf(1.0 / p)
            }
        }
    }
}

/// d_q^q, the transport cost.
fn cost_q(a: Point, b: Point, q: f64) -> f64 {
    let dt = (a.0 - b.0).abs();
    let dn = (a.1 - b.1).abs();
    if q == 1.0 {
        dt + dn
    } else if q == 2.0 {
        dt * dt + dn * dn
    } else {
        dt.powf(q) + dn.powf(q)
    }
}

/// Finitely many atoms with positive rational weights numerator/denominator
/// summing exactly to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    points: Vec<Point>,
    numerators: Vec<u64>,
    denominator: u64,
}

impl EmpiricalMeasure {
    /// Equal weights 1/N.
    pub fn uniform(points: Vec<Point>) -> Result<Self> {
        let n = points.len() as u64;
        Self::new(points, vec![1; n as usize], n)
    }

    pub fn new(points: Vec<Point>, numerators: Vec<u64>, denominator: u64) -> Result<Self> {
        if points.is_empty() {
            return domain("empirical measure needs at least one atom");
        }
        if numerators.len() != points.len() {
            return domain(format!("{} weights for {} atoms", numerators.len(), points.len()));
        }
        if numerators.contains(&0) {
            return domain("atom weights must be positive");
        }
        if points.iter().any(|p| !(p.0.is_finite() && p.1.is_finite())) {
            return domain("non-finite atom");
        }
        let total: u128 = numerators.iter().map(|&w| w as u128).sum();
        if total != denominator as u128 {
            return domain(format!("weights sum to {total}/{denominator}, not 1"));
        }
        let g = numerators.iter().fold(denominator, |g, &w| g.gcd(&w));
        Ok(Self {
            points,
            numerators: numerators.iter().map(|w| w / g).collect(),
            denominator: denominator / g,
        })
    }

    /// Atoms with weights given as separate fractions num_i/den_i.
    pub fn from_fractions(points: Vec<Point>, fractions: &[(u64, u64)]) -> Result<Self> {
        if fractions.iter().any(|&(_, d)| d == 0) {
            return domain("zero weight denominator");
        }
        let den = fractions.iter().fold(1u64, |l, &(_, d)| l.lcm(&d));
        let nums = fractions.iter().map(|&(n, d)| n * (den / d)).collect();
        Self::new(points, nums, den)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn numerators(&self) -> &[u64] {
        &self.numerators
    }

    pub fn denominator(&self) -> u64 {
        self.denominator
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.numerators[i] as f64 / self.denominator as f64
    }

    /// Mean frequency Σ w_i ν_i.
    pub fn mean_frequency(&self) -> f64 {
        compensated_sum((0..self.len()).map(|i| self.weight(i) * self.points[i].1))
    }

    /// Coincident atoms merged, sorted by (θ, ν).
    pub fn merged(&self) -> Self {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| {
            self.points[a].0.total_cmp(&self.points[b].0).then(self.points[a].1.total_cmp(&self.points[b].1))
        });
        let mut points: Vec<Point> = Vec::new();
        let mut nums: Vec<u64> = Vec::new();
        for i in idx {
            if points.last() == Some(&self.points[i]) {
                *nums.last_mut().unwrap() += self.numerators[i];
            } else {
                points.push(self.points[i]);
                nums.push(self.numerators[i]);
            }
        }
        Self { points, numerators: nums, denominator: self.denominator }
    }

    /// Same atoms with new coordinates.
    fn with_points(&self, points: Vec<Point>) -> Self {
        Self { points, numerators: self.numerators.clone(), denominator: self.denominator }
    }
}

/// An optimal transport plan in units of 1/denominator.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    /// (source atom, target atom, mass numerator).
    pub flows: Vec<(usize, usize, u64)>,
    pub denominator: u64,
    /// Σ flow · d_q^q.
    pub cost: f64,
}

impl TransportPlan {
    /// Row and column sums, for checking the marginal constraints.
    pub fn marginals(&self, m: usize, n: usize) -> (Vec<u64>, Vec<u64>) {
        let mut rows = vec![0; m];
        let mut cols = vec![0; n];
        for &(i, j, f) in &self.flows {
            rows[i] += f;
            cols[j] += f;
        }
        (rows, cols)
    }
}

fn check_q(q: f64) -> Result<()> {
    if q.is_finite() && q >= 1.0 {
        Ok(())
    } else {
        domain(format!("Wasserstein exponent q = {q} must lie in [1, ∞)"))
    }
}

/// W_q between two empirical measures: both weight vectors are scaled to a
/// common integer denominator and the transportation problem with cost d_q^q
/// is solved exactly by successive shortest augmenting paths.
pub fn wasserstein(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, q: f64) -> Result<(f64, TransportPlan)> {
    check_q(q)?;
    let den = mu.denominator.lcm(&nu.denominator);
    let supply: Vec<u64> = mu.numerators.iter().map(|w| w * (den / mu.denominator)).collect();
    let demand: Vec<u64> = nu.numerators.iter().map(|w| w * (den / nu.denominator)).collect();
    let cost: Vec<Vec<f64>> =
        mu.points.iter().map(|&a| nu.points.iter().map(|&b| cost_q(a, b, q)).collect()).collect();
    let flows = min_cost_transport(&supply, &demand, &cost);
    let mut acc = CompensatedSum::new();
    for &(i, j, f) in &flows {
        acc.add(f as f64 * cost[i][j]);
    }
    let total = (acc.value() / den as f64).max(0.0);
    Ok((total.powf(1.0 / q), TransportPlan { flows, denominator: den, cost: total }))
}

/// Min-cost transportation with integer supplies and demands of equal total.
/// Dense Dijkstra on reduced costs; each augmentation saturates a supply, a
/// demand or a reverse edge.
fn min_cost_transport(supply: &[u64], demand: &[u64], cost: &[Vec<f64>]) -> Vec<(usize, usize, u64)> {
    let (m, n) = (supply.len(), demand.len());
    let mut sup = supply.to_vec();
    let mut dem = demand.to_vec();
    let mut flow = vec![0u64; m * n];
    // Potentials: sources 0..m, sinks m..m+n.
    let mut pot = vec![0.0f64; m + n];
    let total_nodes = m + n;
    let mut dist = vec![f64::INFINITY; total_nodes];
    let mut parent = vec![usize::MAX; total_nodes];
    let mut done = vec![false; total_nodes];

    loop {
        if dem.iter().all(|&d| d == 0) {
            break;
        }
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        parent.iter_mut().for_each(|p| *p = usize::MAX);
        done.iter_mut().for_each(|d| *d = false);
        for i in 0..m {
            if sup[i] > 0 {
                dist[i] = 0.0;
            }
        }
        let mut target = usize::MAX;
        loop {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for v in 0..total_nodes {
                if !done[v] && dist[v] < best {
                    best = dist[v];
                    u = v;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            if u >= m {
                let j = u - m;
                if dem[j] > 0 {
                    target = u;
                    break;
                }
                // Reverse edges j → i carry existing flow.
                for i in 0..m {
                    if !done[i] && flow[i * n + j] > 0 {
                        let nd = dist[u] - cost[i][j] + pot[u] - pot[i];
                        if nd < dist[i] {
                            dist[i] = nd;
                            parent[i] = u;
                        }
                    }
                }
            } else {
                let i = u;
                for j in 0..n {
                    let v = m + j;
                    if !done[v] {
                        let nd = dist[u] + cost[i][j] + pot[u] - pot[v];
                        if nd < dist[v] {
                            dist[v] = nd;
                            parent[v] = u;
                        }
                    }
                }
            }
        }
        if target == usize::MAX {
            // Unreachable with equal totals; stop rather than loop.
            break;
        }
        let dt = dist[target];
        for v in 0..total_nodes {
            pot[v] += dist[v].min(dt);
        }
        // Bottleneck along the path.
        let mut bottleneck = dem[target - m];
        let mut v = target;
        while parent[v] != usize::MAX {
            let p = parent[v];
            if v < m {
                // v is a source reached by a reverse edge from sink p.
                bottleneck = bottleneck.min(flow[v * n + (p - m)]);
            }
            v = p;
        }
        bottleneck = bottleneck.min(sup[v]);
        let origin = v;
        let mut v = target;
        while parent[v] != usize::MAX {
            let p = parent[v];
            if v >= m {
                flow[p * n + (v - m)] += bottleneck;
            } else {
                flow[v * n + (p - m)] -= bottleneck;
            }
            v = p;
        }
        sup[origin] -= bottleneck;
        dem[target - m] -= bottleneck;
    }
    let mut out = Vec::new();
    for i in 0..m {
        for j in 0..n {
            if flow[i * n + j] > 0 {
                out.push((i, j, flow[i * n + j]));
            }
        }
    }
    out
}

/// Minimum-cost perfect assignment of a square cost matrix (Hungarian method
/// with potentials, O(n³)). Returns the column of each row and the total cost.
pub fn assignment(cost: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let n = cost.len();
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut cols = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            cols[p[j] - 1] = j - 1;
        }
    }
    let total = compensated_sum((0..n).map(|i| cost[i][cols[i]]));
    (cols, total)
}

/// W_q by replicating every atom according to its weight over the common
/// denominator and solving the resulting equal-weight assignment problem.
pub fn wasserstein_by_replication(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, q: f64) -> Result<f64> {
    check_q(q)?;
    let den = mu.denominator.lcm(&nu.denominator);
    if den > 4096 {
        return domain(format!("common denominator {den} is too large to replicate"));
    }
    let expand = |m: &EmpiricalMeasure| -> Vec<Point> {
        m.points
            .iter()
            .zip(&m.numerators)
            .flat_map(|(&p, &w)| std::iter::repeat_n(p, (w * (den / m.denominator)) as usize))
            .collect()
    };
    let a = expand(mu);
    let b = expand(nu);
    let cost: Vec<Vec<f64>> = a.iter().map(|&x| b.iter().map(|&y| cost_q(x, y, q)).collect()).collect();
    let (_, total) = assignment(&cost);
    Ok((total / den as f64).max(0.0).powf(1.0 / q))
}

/// Minimum over all n! assignments; an oracle for small equal-weight supports.
pub fn wasserstein_brute_force(a: &[Point], b: &[Point], q: f64) -> Result<f64> {
    check_q(q)?;
    let n = a.len();
    if n != b.len() || n == 0 || n > 8 {
        return domain("brute force needs two supports of equal size between 1 and 8");
    }
    let cost: Vec<Vec<f64>> = a.iter().map(|&x| b.iter().map(|&y| cost_q(x, y, q)).collect()).collect();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    // Heap's algorithm.
    let mut c = vec![0usize; n];
    let eval = |perm: &[usize]| compensated_sum((0..n).map(|i| cost[i][perm[i]]));
    best = best.min(eval(&perm));
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(eval(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok((best / n as f64).max(0.0).powf(1.0 / q))
}

/// One-dimensional marginal of an initial density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Marginal {
    Uniform { lo: f64, hi: f64 },
    /// Normal(mean, sd) conditioned on [lo, hi].
    TruncatedNormal { mean: f64, sd: f64, lo: f64, hi: f64 },
    /// A point mass.
    Point(f64),
}

impl Marginal {
    fn validate(&self) -> Result<()> {
        match *self {
            Marginal::Uniform { lo, hi } if !(lo < hi) => domain(format!("empty uniform support [{lo}, {hi}]")),
            Marginal::TruncatedNormal { sd, lo, hi, .. } if !(sd > 0.0 && lo < hi) => {
                domain("truncated normal needs sd > 0 and lo < hi")
            }
            Marginal::Point(x) if !x.is_finite() => domain("non-finite point mass"),
            _ => Ok(()),
        }
    }

    pub fn support(&self) -> (f64, f64) {
        match *self {
            Marginal::Uniform { lo, hi } | Marginal::TruncatedNormal { lo, hi, .. } => (lo, hi),
            Marginal::Point(x) => (x, x),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Marginal::Uniform { lo, hi } => 0.5 * (lo + hi),
            Marginal::Point(x) => x,
            Marginal::TruncatedNormal { mean, sd, lo, hi } => {
                let std = Normal::standard();
                let (a, b) = ((lo - mean) / sd, (hi - mean) / sd);
                mean + sd * (std.pdf(a) - std.pdf(b)) / (std.cdf(b) - std.cdf(a))
            }
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            Marginal::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            Marginal::Point(x) => x,
            Marginal::TruncatedNormal { mean, sd, lo, hi } => {
                let std = Normal::standard();
                let (ca, cb) = (std.cdf((lo - mean) / sd), std.cdf((hi - mean) / sd));
                let u = ca + (cb - ca) * rng.random::<f64>();
                (mean + sd * std.inverse_cdf(u)).clamp(lo, hi)
            }
        }
    }

    fn shifted(&self, delta: f64) -> Self {
        match *self {
            Marginal::Uniform { lo, hi } => Marginal::Uniform { lo: lo + delta, hi: hi + delta },
            Marginal::TruncatedNormal { mean, sd, lo, hi } => {
                Marginal::TruncatedNormal { mean: mean + delta, sd, lo: lo + delta, hi: hi + delta }
            }
            Marginal::Point(x) => Marginal::Point(x + delta),
        }
    }
}

/// Product initial density on phase × frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rho0Spec {
    pub theta: Marginal,
    pub nu: Marginal,
}

impl Rho0Spec {
    pub fn new(theta: Marginal, nu: Marginal) -> Result<Self> {
        theta.validate()?;
        nu.validate()?;
        Ok(Self { theta, nu })
    }

    /// The same density translated by `delta` in phase.
    pub fn theta_shifted(&self, delta: f64) -> Self {
        Self { theta: self.theta.shifted(delta), nu: self.nu }
    }

    /// Target mean frequency ν̄.
    pub fn mean_frequency(&self) -> f64 {
        self.nu.mean()
    }

    /// True iff the support lies in (0, θ*) × (ν_l, ν_r).
    pub fn supported_in(&self, params: &KineticParams) -> bool {
        let (t0, t1) = self.theta.support();
        let (n0, n1) = self.nu.support();
        let open = |lo: f64, hi: f64, a: f64, b: f64| a < lo && hi < b;
        open(t0, t1, 0.0, params.theta_star) && open(n0, n1, params.nu_l, params.nu_r)
    }
}

const MAX_SAMPLING_ATTEMPTS: u64 = 64;

/// N i.i.d. atoms with weights 1/N, frequencies shifted so that their mean is
/// exactly ν̄. Atom α is drawn from its own ChaCha stream keyed by (seed, α),
/// so an N-atom sample is a prefix of any larger sample from the same seed.
pub fn sample_initial(spec: &Rho0Spec, params: &KineticParams, n: usize, seed: u64) -> Result<EmpiricalMeasure> {
    if n == 0 {
        return domain("need at least one atom");
    }
    if !spec.supported_in(params) {
        return domain(format!(
            "initial density support {:?} × {:?} is not inside (0, {}) × ({}, {})",
            spec.theta.support(),
            spec.nu.support(),
            params.theta_star,
            params.nu_l,
            params.nu_r
        ));
    }
    let nu_bar = spec.mean_frequency();
    for attempt in 0..MAX_SAMPLING_ATTEMPTS {
        let raw: Vec<Point> = (0..n)
            .map(|a| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream((attempt << 40) | a as u64);
                let theta = spec.theta.draw(&mut rng);
                let nu = spec.nu.draw(&mut rng);
                (theta, nu)
            })
            .collect();
        let points = recenter(&raw, nu_bar);
        if points.iter().all(|p| params.nu_l < p.1 && p.1 < params.nu_r) {
            return EmpiricalMeasure::uniform(points);
        }
    }
    Err(GkError::Numeric(format!(
        "recentered frequencies left ({}, {}) in {MAX_SAMPLING_ATTEMPTS} attempts",
        params.nu_l, params.nu_r
    )))
}

/// Shifts every frequency by ν̄ − (sample mean).
pub fn recenter(points: &[Point], nu_bar: f64) -> Vec<Point> {
    if points.len() == 1 {
        return vec![(points[0].0, nu_bar)];
    }
    let mean = compensated_sum(points.iter().map(|p| p.1)) / points.len() as f64;
    let shift = nu_bar - mean;
    points.iter().map(|&(t, v)| (t, v + shift)).collect()
}

/// Parameters of the mean-field regime: trapping angle, frequency window and
/// coupling strength (φ ≡ 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KineticParams {
    pub theta_star: f64,
    pub nu_l: f64,
    pub nu_r: f64,
    pub kappa: f64,
}

/// Mean-field framework: F onto ℝ, κ cos θ* (min G′)² ≥ 2 max 𝒬⁻¹[F] on
/// [G(ν_l − κ), G(ν_r + κ)], κ sin θ* > ν_r − ν_l, and the support of each
/// given initial density inside (0, θ*) × (ν_l, ν_r).
pub fn certify_kinetic(
    resp: &FrequencyResponse,
    params: &KineticParams,
    specs: &[&Rho0Spec],
) -> Result<FrameworkCertificate> {
    particle::check_theta_star(params.theta_star)?;
    if !(params.nu_l < params.nu_r) {
        return domain(format!("empty frequency window ({}, {})", params.nu_l, params.nu_r));
    }
    let k = params.kappa;
    if !(k.is_finite() && k > 0.0) {
        return domain(format!("coupling strength must be positive, got {k}"));
    }
    let th = params.theta_star;
    let full_range = resp.range_limit().is_infinite();
    let mut conditions = vec![Condition {
        name: "full_range",
        holds: full_range,
        detail: format!("sup F = {}", resp.range_limit()),
    }];
    let k_sin = (params.nu_r - params.nu_l) / th.sin();
    let mut kappa_required = k_sin;
    let mut cos_holds = false;
    let mut cos_detail = String::from("F is not onto ℝ");
    if full_range {
        let a_g = resp.invert(params.nu_l - k)?;
        let b_g = resp.invert(params.nu_r + k)?;
        let c = interval_extrema(resp, a_g, b_g, 1e-9)?;
        let k_cos = 2.0 * c.max_qinv / (th.cos() * c.m_gprime.powi(2));
        kappa_required = kappa_required.max(k_cos);
        cos_holds = k >= k_cos;
        cos_detail = format!("κ = {k}, needs ≥ {k_cos} on [{a_g}, {b_g}]");
    }
    conditions.push(Condition { name: "kappa_cos", holds: cos_holds, detail: cos_detail });
    conditions.push(Condition {
        name: "kappa_sin",
        holds: k * th.sin() > params.nu_r - params.nu_l,
        detail: format!("κ sin θ* = {}, ν_r − ν_l = {}", k * th.sin(), params.nu_r - params.nu_l),
    });
    for (i, s) in specs.iter().enumerate() {
        conditions.push(Condition {
            name: "support",
            holds: s.supported_in(params),
            detail: format!("density {i}: {:?} × {:?}", s.theta.support(), s.nu.support()),
        });
    }
    let overall = conditions.iter().all(|c| c.holds);
    Ok(FrameworkCertificate {
        theta_star: th,
        a_phi: 1.0,
        b_phi: 1.0,
        kappa: k,
        kappa_required,
        conditions,
        overall,
    })
}

/// Snapshots of an evolving empirical measure.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureTrajectory {
    pub times: Vec<f64>,
    pub measures: Vec<EmpiricalMeasure>,
}

/// Pushes the atoms along the particle system with φ ≡ 1. An atom of weight
/// w/D is represented by w identical oscillators among D, so the particle
/// system sees equal weights; weights and frequencies are carried over
/// unchanged.
pub fn evolve_empirical(
    resp: &FrequencyResponse,
    measure: &EmpiricalMeasure,
    params: &KineticParams,
    grid: TimeGrid,
    scheme: Scheme,
) -> Result<MeasureTrajectory> {
    let cert = certify_kinetic(resp, params, &[])?;
    if !cert.overall {
        return Err(GkError::Precondition(format!("mean-field framework fails: {}", cert.failing().join(", "))));
    }
    let mut theta = Vec::new();
    let mut nu = Vec::new();
    let mut first = Vec::with_capacity(measure.len());
    for (p, &w) in measure.points.iter().zip(&measure.numerators) {
        first.push(theta.len());
        for _ in 0..w {
            theta.push(p.0);
            nu.push(p.1);
        }
    }
    let ens = OscillatorEnsemble::new(resp, theta, nu, Coupling::Uniform(1.0), params.kappa)?;
    let traj = particle::integrate(resp, &ens, grid, scheme)?;
    let measures = traj
        .states
        .iter()
        .map(|s| measure.with_points(first.iter().zip(&measure.points).map(|(&k, p)| (s[k], p.1)).collect()))
        .collect();
    Ok(MeasureTrajectory { times: traj.times, measures })
}

/// A C¹ test function φ(t, θ, ν) with its t- and θ-derivatives.
pub trait TestFunction: Sync {
    fn value(&self, t: f64, theta: f64, nu: f64) -> f64;
    fn d_t(&self, t: f64, theta: f64, nu: f64) -> f64;
    fn d_theta(&self, t: f64, theta: f64, nu: f64) -> f64;
}

/// Time-independent test functions used by the weak-form checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasicTest {
    One,
    Theta,
    Nu,
    SinTheta,
}

impl TestFunction for BasicTest {
    fn value(&self, _t: f64, theta: f64, nu: f64) -> f64 {
        match self {
            BasicTest::One => 1.0,
            BasicTest::Theta => theta,
            BasicTest::Nu => nu,
            BasicTest::SinTheta => theta.sin(),
        }
    }
    fn d_t(&self, _t: f64, _theta: f64, _nu: f64) -> f64 {
        0.0
    }
    fn d_theta(&self, _t: f64, theta: f64, _nu: f64) -> f64 {
        match self {
            BasicTest::One | BasicTest::Nu => 0.0,
            BasicTest::Theta => 1.0,
            BasicTest::SinTheta => theta.cos(),
        }
    }
}

/// Velocity field 𝔏[ρ](θ, ν) = G(ν + κ ∫ sin(θ′ − θ) dρ(θ′, ν′)) at every atom.
pub fn mean_field_velocity(resp: &FrequencyResponse, rho: &EmpiricalMeasure, kappa: f64) -> Result<Vec<f64>> {
    let w: Vec<f64> = (0..rho.len()).map(|i| rho.weight(i)).collect();
    rho.points
        .iter()
        .map(|&(th, nu)| {
            let mut acc = CompensatedSum::new();
            for (k, &(tb, _)) in rho.points.iter().enumerate() {
                acc.add(w[k] * (tb - th).sin());
            }
            resp.invert(nu + kappa * acc.value())
        })
        .collect()
}

/// |⟨ρ_t, φ(t)⟩ − ⟨ρ_0, φ(0)⟩ − ∫₀ᵗ ⟨ρ_s, ∂_sφ + 𝔏[ρ_s]∂_θφ⟩ ds| at snapshot
/// `k`, with the time integral by the trapezoid rule on the snapshots.
pub fn weak_form_residual(
    traj: &MeasureTrajectory,
    resp: &FrequencyResponse,
    kappa: f64,
    test: &dyn TestFunction,
    k: usize,
) -> Result<f64> {
    if k >= traj.times.len() {
        return domain(format!("snapshot {k} out of range"));
    }
    let pair = |rho: &EmpiricalMeasure, t: f64| {
        compensated_sum(rho.points.iter().enumerate().map(|(i, p)| rho.weight(i) * test.value(t, p.0, p.1)))
    };
    let integrand = |j: usize| -> Result<f64> {
        let rho = &traj.measures[j];
        let t = traj.times[j];
        let vel = mean_field_velocity(resp, rho, kappa)?;
        Ok(compensated_sum(rho.points.iter().enumerate().map(|(i, p)| {
            rho.weight(i) * (test.d_t(t, p.0, p.1) + vel[i] * test.d_theta(t, p.0, p.1))
        })))
    };
    let values: Vec<f64> = (0..=k).into_par_iter().map(integrand).collect::<Result<_>>()?;
    let mut integral = CompensatedSum::new();
    for j in 1..=k {
        integral.add(0.5 * (traj.times[j] - traj.times[j - 1]) * (values[j - 1] + values[j]));
    }
    let lhs = pair(&traj.measures[k], traj.times[k]) - pair(&traj.measures[0], traj.times[0]);
    Ok((lhs - integral.value()).abs())
}

/// One row of the mean-field Cauchy table.
#[derive(Debug, Clone, PartialEq)]
pub struct CauchyRow {
    pub n: usize,
    pub n2: usize,
    pub times: Vec<f64>,
    pub distances: Vec<f64>,
    /// sup over stored t of W_q(ρ^N_t, ρ^{N2}_t).
    pub sup_distance: f64,
    pub initial_distance: f64,
    /// sup_distance / initial_distance, `None` when the initial distance vanishes.
    pub ratio: Option<f64>,
}

fn require_kinetic(resp: &FrequencyResponse, params: &KineticParams, specs: &[&Rho0Spec]) -> Result<()> {
    let cert = certify_kinetic(resp, params, specs)?;
    if cert.overall {
        Ok(())
    } else {
        Err(GkError::Precondition(format!("mean-field framework fails: {}", cert.failing().join(", "))))
    }
}

fn distance_series(a: &MeasureTrajectory, b: &MeasureTrajectory, q: f64) -> Result<Vec<f64>> {
    a.measures
        .par_iter()
        .zip(b.measures.par_iter())
        .map(|(x, y)| wasserstein(x, y, q).map(|r| r.0))
        .collect()
}

/// For each consecutive pair (N, N′) of `n_list`, the sup over stored times
/// of W_q between the nested-sample empirical solutions.
#[allow(clippy::too_many_arguments)]
pub fn mean_field_cauchy_experiment(
    resp: &FrequencyResponse,
    spec: &Rho0Spec,
    params: &KineticParams,
    n_list: &[usize],
    q: f64,
    grid: TimeGrid,
    scheme: Scheme,
    seed: u64,
) -> Result<Vec<CauchyRow>> {
    check_q(q)?;
    require_kinetic(resp, params, &[spec])?;
    if n_list.len() < 2 {
        return domain("need at least two sample sizes");
    }
    let runs: Vec<MeasureTrajectory> = n_list
        .iter()
        .map(|&n| {
            let rho0 = sample_initial(spec, params, n, seed)?;
            evolve_empirical(resp, &rho0, params, grid, scheme)
        })
        .collect::<Result<_>>()?;
    n_list
        .windows(2)
        .zip(runs.windows(2))
        .map(|(ns, rs)| {
            let distances = distance_series(&rs[0], &rs[1], q)?;
            let sup_distance = distances.iter().copied().fold(0.0, f64::max);
            let initial_distance = distances[0];
            Ok(CauchyRow {
                n: ns[0],
                n2: ns[1],
                times: rs[0].times.clone(),
                sup_distance,
                initial_distance,
                ratio: (initial_distance > 0.0).then(|| sup_distance / initial_distance),
                distances,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KineticStabilityReport {
    pub times: Vec<f64>,
    pub distances: Vec<f64>,
    pub initial_distance: f64,
    /// sup_t W_q(ρ_t, ρ̃_t) / W_q(ρ_0, ρ̃_0); `None` for a zero initial distance.
    pub lambda4_hat: Option<f64>,
    pub sup_half: f64,
    pub sup_full: f64,
    /// sup over [0, T/2] equals sup over [0, T] within 1e-10.
    pub saturated: bool,
}

impl KineticStabilityReport {
    pub fn degenerate(&self) -> bool {
        self.lambda4_hat.is_none()
    }
}

/// W_q between empirical solutions started from two initial densities sampled
/// with the same seed and recentered to their common mean frequency.
#[allow(clippy::too_many_arguments)]
pub fn kinetic_stability_experiment(
    resp: &FrequencyResponse,
    spec: &Rho0Spec,
    spec_tilde: &Rho0Spec,
    params: &KineticParams,
    n: usize,
    q: f64,
    grid: TimeGrid,
    scheme: Scheme,
    seed: u64,
) -> Result<KineticStabilityReport> {
    check_q(q)?;
    require_kinetic(resp, params, &[spec, spec_tilde])?;
    let nu_bar = spec.mean_frequency();
    let sample = |s: &Rho0Spec| -> Result<EmpiricalMeasure> {
        let m = sample_initial(s, params, n, seed)?;
        EmpiricalMeasure::uniform(recenter(m.points(), nu_bar))
    };
    let a = evolve_empirical(resp, &sample(spec)?, params, grid, scheme)?;
    let b = evolve_empirical(resp, &sample(spec_tilde)?, params, grid, scheme)?;
    let distances = distance_series(&a, &b, q)?;
    let initial_distance = distances[0];
    let half = grid.t_end / 2.0;
    let mut sup_half: f64 = 0.0;
    let mut sup_full: f64 = 0.0;
    for (&t, &d) in a.times.iter().zip(&distances) {
        sup_full = sup_full.max(d);
        if t <= half * (1.0 + 1e-12) {
            sup_half = sup_half.max(d);
        }
    }
    Ok(KineticStabilityReport {
        times: a.times,
        initial_distance,
        lambda4_hat: (initial_distance > 0.0).then(|| sup_full / initial_distance),
        sup_half,
        sup_full,
        saturated: (sup_full - sup_half).abs() <= 1e-10,
        distances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q2() -> NormExponent {
        NormExponent::Finite(2.0)
    }

    #[test]
    fn metric_examples() {
        assert_eq!(metric_dq((0.0, 0.0), (3.0, 4.0), q2()), 5.0);
        assert_eq!(metric_dq((1.5, 2.0), (1.5, 2.0), q2()), 0.0);
        assert_eq!(metric_dq((0.0, 0.0), (1.0, 2.0), NormExponent::Infinity), 2.0);
    }

    #[test]
    fn wasserstein_examples() {
        let a = EmpiricalMeasure::uniform(vec![(0.0, 0.0)]).unwrap();
        let b = EmpiricalMeasure::uniform(vec![(1.0, 0.0)]).unwrap();
        assert_eq!(wasserstein(&a, &b, 1.0).unwrap().0, 1.0);

        let a = EmpiricalMeasure::uniform(vec![(0.0, 0.0), (2.0, 0.0)]).unwrap();
        let b = EmpiricalMeasure::uniform(vec![(1.0, 0.0), (3.0, 0.0)]).unwrap();
        let (w, plan) = wasserstein(&a, &b, 1.0).unwrap();
        assert_eq!(w, 1.0);
        assert_eq!(plan.flows, vec![(0, 0, 1), (1, 1, 1)]);

        let (w, plan) = wasserstein(&a, &a, 2.0).unwrap();
        assert_eq!(w, 0.0);
        assert_eq!(plan.flows, vec![(0, 0, 1), (1, 1, 1)]);
        assert!(wasserstein(&a, &b, 0.5).is_err());
        assert!(EmpiricalMeasure::uniform(vec![]).is_err());
    }

    #[test]
    fn unequal_weights_respect_marginals() {
        let a = EmpiricalMeasure::from_fractions(vec![(0.0, 0.0), (1.0, 0.0)], &[(1, 3), (2, 3)]).unwrap();
        let b = EmpiricalMeasure::from_fractions(vec![(0.5, 0.0), (2.0, 1.0), (0.1, 0.2)], &[(1, 2), (1, 4), (1, 4)])
            .unwrap();
        let (w, plan) = wasserstein(&a, &b, 2.0).unwrap();
        assert_eq!(plan.denominator, 12);
        let (rows, cols) = plan.marginals(2, 3);
        assert_eq!(rows, vec![4, 8]);
        assert_eq!(cols, vec![6, 3, 3]);
        let rep = wasserstein_by_replication(&a, &b, 2.0).unwrap();
        assert!((w - rep).abs() < 1e-12);
    }

    #[test]
    fn sampling_recenters_and_nests() {
        let params = KineticParams { theta_star: 0.785, nu_l: -1.0, nu_r: 3.0, kappa: 10.0 };
        assert_eq!(recenter(&[(0.0, 1.0), (0.0, 2.0)], 1.2), vec![(0.0, 0.7), (0.0, 1.7)]);
        let spec = Rho0Spec::new(Marginal::Uniform { lo: 0.1, hi: 0.6 }, Marginal::Uniform { lo: 0.5, hi: 1.5 })
            .unwrap();
        let one = sample_initial(&spec, &params, 1, 7).unwrap();
        assert_eq!(one.points()[0].1, 1.0);
        let big = sample_initial(&spec, &params, 1000, 7).unwrap();
        assert!((big.mean_frequency() - 1.0).abs() < 1e-14);
        let small = sample_initial(&spec, &params, 10, 7).unwrap();
        for i in 0..10 {
            assert_eq!(small.points()[i].0, big.points()[i].0);
        }
        let outside = Rho0Spec::new(Marginal::Uniform { lo: 0.1, hi: 0.9 }, Marginal::Point(1.0)).unwrap();
        assert!(matches!(sample_initial(&outside, &params, 5, 1), Err(GkError::Domain(_))));
    }

    #[test]
    fn truncated_normal_mean_matches_sampling() {
        let m = Marginal::TruncatedNormal { mean: 0.0, sd: 1.0, lo: 0.0, hi: 10.0 };
        // Half-normal mean √(2/π).
        assert!((m.mean() - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-12);
    }
}
