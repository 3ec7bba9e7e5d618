//! The finite GK system F(θ̇_α) = ν_α + (κ/N) Σ_β φ_αβ sin(θ_β − θ_α), its
//! second-order form, and the diagnostics run on its trajectories.
//!
//! Lattice systems use the same types: the oscillator index is the cell index.

use rayon::prelude::*;

use crate::constants::{interval_extrema, IntervalConstants};
use crate::error::{domain, GkError, Result};
use crate::framework::{certify_framework_a, check_admissibility, FrameworkParams};
use crate::numerics::{diameter, norm_with, CompensatedSum, NormExponent};
use crate::ode::{self, OdeSystem, Scheme, TimeGrid};
use crate::response::FrequencyResponse;

/// Above this size the coupling sums use the sin/cos expansion and the
/// per-oscillator work is spread over the rayon pool.
pub const PARALLEL_THRESHOLD: usize = 256;

/// Symmetric positive coupling matrix Φ.
#[derive(Debug, Clone, PartialEq)]
pub enum Coupling {
    /// φ_αβ ≡ c.
    Uniform(f64),
    /// Row-major N×N matrix.
    Dense { n: usize, values: Vec<f64> },
}

impl Coupling {
    /// Dense coupling from rows; rejects asymmetric, non-square or
    /// non-positive input.
    pub fn dense(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut values = Vec::with_capacity(n * n);
        for (a, row) in rows.iter().enumerate() {
            if row.len() != n {
                return domain(format!("coupling row {a} has {} entries, expected {n}", row.len()));
            }
            values.extend_from_slice(row);
        }
        Self::from_flat(n, values)
    }

    pub fn from_flat(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return domain(format!("coupling has {} entries, expected {}", values.len(), n * n));
        }
        for a in 0..n {
            for b in 0..n {
                let v = values[a * n + b];
                if !(v.is_finite() && v > 0.0) {
                    return domain(format!("coupling entry ({a}, {b}) = {v} is not positive"));
                }
                if v != values[b * n + a] {
                    return domain(format!("coupling is not symmetric at ({a}, {b})"));
                }
            }
        }
        Ok(Coupling::Dense { n, values })
    }

    pub fn uniform(c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return domain(format!("uniform coupling must be positive, got {c}"));
        }
        Ok(Coupling::Uniform(c))
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize) -> f64 {
        match self {
            Coupling::Uniform(c) => *c,
            Coupling::Dense { n, values } => values[a * n + b],
        }
    }

    pub fn min(&self) -> f64 {
        match self {
            Coupling::Uniform(c) => *c,
            Coupling::Dense { values, .. } => values.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }

    pub fn max(&self) -> f64 {
        match self {
            Coupling::Uniform(c) => *c,
            Coupling::Dense { values, .. } => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// Σ_β |φ_αβ| for a system of size `n`.
    pub fn row_abs_sum(&self, a: usize, n: usize) -> f64 {
        match self {
            Coupling::Uniform(c) => c * n as f64,
            Coupling::Dense { values, .. } => {
                let mut acc = CompensatedSum::new();
                for v in &values[a * n..(a + 1) * n] {
                    acc.add(v.abs());
                }
                acc.value()
            }
        }
    }

    /// All N² entries in row-major order.
    pub fn to_flat(&self, n: usize) -> Vec<f64> {
        match self {
            Coupling::Uniform(c) => vec![*c; n * n],
            Coupling::Dense { values, .. } => values.clone(),
        }
    }

    fn size(&self) -> Option<usize> {
        match self {
            Coupling::Uniform(_) => None,
            Coupling::Dense { n, .. } => Some(*n),
        }
    }
}

/// Initial phases, natural frequencies, coupling matrix and coupling strength.
#[derive(Debug, Clone, PartialEq)]
pub struct OscillatorEnsemble {
    theta: Vec<f64>,
    nu: Vec<f64>,
    phi: Coupling,
    kappa: f64,
}

impl OscillatorEnsemble {
    /// Builds an ensemble and checks that the argument of G stays inside the
    /// range of F for every phase configuration.
    pub fn new(
        resp: &FrequencyResponse,
        theta: Vec<f64>,
        nu: Vec<f64>,
        phi: Coupling,
        kappa: f64,
    ) -> Result<Self> {
        let ens = Self::unchecked(theta, nu, phi, kappa)?;
        let report = check_admissibility(resp, &ens);
        if !report.admissible {
            return Err(GkError::Precondition(format!(
                "ensemble is not admissible: oscillator {} reaches |ν ± κ/N Σ|φ|| = {} outside the range of F",
                report.worst_index, report.worst_value
            )));
        }
        Ok(ens)
    }

    /// Builds an ensemble without the admissibility check (shape and sign
    /// checks still apply).
    pub fn unchecked(theta: Vec<f64>, nu: Vec<f64>, phi: Coupling, kappa: f64) -> Result<Self> {
        let n = theta.len();
        if n == 0 {
            return domain("an ensemble needs at least one oscillator");
        }
        if nu.len() != n {
            return domain(format!("{} natural frequencies for {n} oscillators", nu.len()));
        }
        if let Some(m) = phi.size() {
            if m != n {
                return domain(format!("coupling is {m}x{m} for {n} oscillators"));
            }
        }
        if !(kappa.is_finite() && kappa > 0.0) {
            return domain(format!("coupling strength must be positive, got {kappa}"));
        }
        if theta.iter().chain(&nu).any(|v| !v.is_finite()) {
            return domain("non-finite phase or frequency");
        }
        Ok(Self { theta, nu, phi, kappa })
    }

    pub fn n(&self) -> usize {
        self.theta.len()
    }
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }
    pub fn nu(&self) -> &[f64] {
        &self.nu
    }
    pub fn phi(&self) -> &Coupling {
        &self.phi
    }
    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// ν_c, the mean natural frequency.
    pub fn nu_c(&self) -> f64 {
        let mut acc = CompensatedSum::new();
        for &v in &self.nu {
            acc.add(v);
        }
        acc.value() / self.n() as f64
    }

    /// Same system started from other phases.
    pub fn with_theta(&self, resp: &FrequencyResponse, theta: Vec<f64>) -> Result<Self> {
        Self::new(resp, theta, self.nu.clone(), self.phi.clone(), self.kappa)
    }

    /// Relabels oscillators: new index i carries old index `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return domain("not a permutation of the oscillator indices");
        }
        let theta = perm.iter().map(|&p| self.theta[p]).collect();
        let nu = perm.iter().map(|&p| self.nu[p]).collect();
        let phi = match &self.phi {
            Coupling::Uniform(c) => Coupling::Uniform(*c),
            Coupling::Dense { values, .. } => {
                let mut out = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..n {
                        out[i * n + j] = values[perm[i] * n + perm[j]];
                    }
                }
                Coupling::Dense { n, values: out }
            }
        };
        Self::unchecked(theta, nu, phi, self.kappa)
    }
}

/// ν_α + (κ/N) Σ_β φ_αβ sin(θ_β − θ_α) for every α.
pub fn coupling_arguments(ens: &OscillatorEnsemble, theta: &[f64], out: &mut [f64]) {
    let n = ens.n();
    let scale = ens.kappa / n as f64;
    if n < PARALLEL_THRESHOLD {
        for (a, o) in out.iter_mut().enumerate() {
            let mut acc = CompensatedSum::new();
            let ta = theta[a];
            for (b, &tb) in theta.iter().enumerate() {
                acc.add(ens.phi.get(a, b) * (tb - ta).sin());
            }
            *o = ens.nu[a] + scale * acc.value();
        }
        return;
    }
    let (sin, cos): (Vec<f64>, Vec<f64>) = theta.iter().map(|t| t.sin_cos()).unzip();
    match &ens.phi {
        Coupling::Uniform(c) => {
            let mut s = CompensatedSum::new();
            let mut k = CompensatedSum::new();
            for b in 0..n {
                s.add(sin[b]);
                k.add(cos[b]);
            }
            let (s, k) = (s.value(), k.value());
            out.par_iter_mut().enumerate().for_each(|(a, o)| {
                *o = ens.nu[a] + scale * c * (s * cos[a] - k * sin[a]);
            });
        }
        Coupling::Dense { values, .. } => {
            out.par_iter_mut().enumerate().for_each(|(a, o)| {
                let row = &values[a * n..(a + 1) * n];
                let mut s = CompensatedSum::new();
                let mut k = CompensatedSum::new();
                for b in 0..n {
                    s.add(row[b] * sin[b]);
                    k.add(row[b] * cos[b]);
                }
                *o = ens.nu[a] + scale * (s.value() * cos[a] - k.value() * sin[a]);
            });
        }
    }
}

fn apply_g(resp: &FrequencyResponse, args: &[f64], out: &mut [f64]) -> Result<()> {
    let invert = |(o, &u): (&mut f64, &f64)| -> Result<()> {
        if !resp.in_range(u) {
            return Err(GkError::Admissibility {
                last_valid_time: f64::NAN,
                detail: format!("argument {u} of G left the range of F"),
            });
        }
        *o = resp.invert(u)?;
        Ok(())
    };
    if resp.is_linear() {
        out.copy_from_slice(args);
        if let Some(u) = args.iter().find(|u| !u.is_finite()) {
            return Err(GkError::Numeric(format!("non-finite frequency {u}")));
        }
        Ok(())
    } else if args.len() >= PARALLEL_THRESHOLD {
        out.par_iter_mut().zip(args.par_iter()).try_for_each(invert)
    } else {
        out.iter_mut().zip(args.iter()).try_for_each(invert)
    }
}

/// Phase velocities G(ν_α + (κ/N) Σ_β φ_αβ sin(θ_β − θ_α)).
pub fn rhs_first_order(resp: &FrequencyResponse, ens: &OscillatorEnsemble, theta: &[f64]) -> Result<Vec<f64>> {
    if theta.len() != ens.n() {
        return domain(format!("{} phases for {} oscillators", theta.len(), ens.n()));
    }
    let mut args = vec![0.0; ens.n()];
    coupling_arguments(ens, theta, &mut args);
    let mut out = vec![0.0; ens.n()];
    apply_g(resp, &args, &mut out)?;
    Ok(out)
}

/// Phases and frequencies of the second-order form.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondOrderState {
    pub theta: Vec<f64>,
    pub omega: Vec<f64>,
}

/// (θ̇, ω̇) with θ̇ = ω and
/// ω̇_α = (κ/N) Σ_β φ_αβ (ω_β − ω_α) cos(θ_β − θ_α) / F′(ω_α).
pub fn rhs_second_order(
    resp: &FrequencyResponse,
    ens: &OscillatorEnsemble,
    state: &SecondOrderState,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = ens.n();
    if state.theta.len() != n || state.omega.len() != n {
        return domain("second-order state does not match the ensemble size");
    }
    let mut domega = vec![0.0; n];
    second_order_accel(resp, ens, &state.theta, &state.omega, &mut domega)?;
    Ok((state.omega.clone(), domega))
}

fn second_order_accel(
    resp: &FrequencyResponse,
    ens: &OscillatorEnsemble,
    theta: &[f64],
    omega: &[f64],
    out: &mut [f64],
) -> Result<()> {
    let n = ens.n();
    if let Some((a, w)) = omega.iter().enumerate().find(|(_, w)| !resp.in_domain(**w)) {
        return Err(GkError::Numeric(format!("frequency ω_{a} = {w} left (-L, L)")));
    }
    let scale = ens.kappa / n as f64;
    let one = |a: usize| -> f64 {
        let mut acc = CompensatedSum::new();
        let (ta, wa) = (theta[a], omega[a]);
        for b in 0..n {
            acc.add(ens.phi.get(a, b) * (omega[b] - wa) * (theta[b] - ta).cos());
        }
        scale * acc.value() / resp.f_prime(wa)
    };
    if n >= PARALLEL_THRESHOLD {
        out.par_iter_mut().enumerate().for_each(|(a, o)| *o = one(a));
    } else {
        for (a, o) in out.iter_mut().enumerate() {
            *o = one(a);
        }
    }
    Ok(())
}

struct FirstOrderSystem<'a> {
    resp: &'a FrequencyResponse,
    ens: &'a OscillatorEnsemble,
}

impl OdeSystem for FirstOrderSystem<'_> {
    fn dim(&self) -> usize {
        self.ens.n()
    }
    fn rhs(&self, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let mut args = vec![0.0; y.len()];
        coupling_arguments(self.ens, y, &mut args);
        apply_g(self.resp, &args, dy)
    }
}

struct SecondOrderSystem<'a> {
    resp: &'a FrequencyResponse,
    ens: &'a OscillatorEnsemble,
}

impl OdeSystem for SecondOrderSystem<'_> {
    fn dim(&self) -> usize {
        2 * self.ens.n()
    }
    fn rhs(&self, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let n = self.ens.n();
        let (theta, omega) = y.split_at(n);
        let (dtheta, domega) = dy.split_at_mut(n);
        dtheta.copy_from_slice(omega);
        second_order_accel(self.resp, self.ens, theta, omega, domega)
    }
}

/// Per-snapshot diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    pub d_theta: f64,
    pub d_omega: f64,
    /// (1/N) Σ_α F(ω_α), which equals ν_c along exact solutions.
    pub mean_response: f64,
}

/// Stored snapshots of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub omegas: Vec<Vec<f64>>,
    pub diagnostics: Vec<Diagnostics>,
    /// Mean natural frequency of the ensemble.
    pub nu_c: f64,
}

impl Trajectory {
    fn new(nu_c: f64) -> Self {
        Self { times: Vec::new(), states: Vec::new(), omegas: Vec::new(), diagnostics: Vec::new(), nu_c }
    }

    fn push(&mut self, resp: &FrequencyResponse, t: f64, theta: Vec<f64>, omega: Vec<f64>) -> Result<()> {
        let mut acc = CompensatedSum::new();
        for &w in &omega {
            acc.add(resp.f(w));
        }
        self.diagnostics.push(Diagnostics {
            d_theta: diameter(&theta)?,
            d_omega: diameter(&omega)?,
            mean_response: acc.value() / omega.len() as f64,
        });
        self.times.push(t);
        self.states.push(theta);
        self.omegas.push(omega);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Largest deviation |(1/N)ΣF(ω_α) − ν_c| over the stored snapshots.
    pub fn max_conservation_error(&self) -> f64 {
        self.diagnostics.iter().fold(0.0, |m, d| m.max((d.mean_response - self.nu_c).abs()))
    }
}

/// Integrates the first-order system and stores phases, frequencies and
/// diagnostics at every output time of `grid`.
pub fn integrate(
    resp: &FrequencyResponse,
    ens: &OscillatorEnsemble,
    grid: TimeGrid,
    scheme: Scheme,
) -> Result<Trajectory> {
    let sys = FirstOrderSystem { resp, ens };
    let mut traj = Trajectory::new(ens.nu_c());
    ode::integrate(&sys, ens.theta(), grid, scheme, |_, t, y| {
        let omega = rhs_first_order(resp, ens, y)
            .map_err(|e| stamp_time(e, t))?;
        traj.push(resp, t, y.to_vec(), omega)
    })?;
    Ok(traj)
}

fn stamp_time(e: GkError, t: f64) -> GkError {
    match e {
        GkError::Admissibility { detail, .. } => GkError::Admissibility { last_valid_time: t, detail },
        other => other,
    }
}

/// Initial frequencies of the second-order form, ω_α(0) = G(ν_α + (κ/N)
/// Σ_β φ_αβ sin(θ⁰_β − θ⁰_α)). The coupling weights are part of the sum so
/// that both formulations start from the same state.
pub fn initial_omega(resp: &FrequencyResponse, ens: &OscillatorEnsemble) -> Result<Vec<f64>> {
    rhs_first_order(resp, ens, ens.theta())
}

/// Integrates the second-order form (θ, ω) from θ⁰ and the matching ω⁰.
pub fn integrate_second_order(
    resp: &FrequencyResponse,
    ens: &OscillatorEnsemble,
    grid: TimeGrid,
    scheme: Scheme,
) -> Result<Trajectory> {
    let n = ens.n();
    let mut y0 = ens.theta().to_vec();
    y0.extend(initial_omega(resp, ens)?);
    let sys = SecondOrderSystem { resp, ens };
    let mut traj = Trajectory::new(ens.nu_c());
    ode::integrate(&sys, &y0, grid, scheme, |_, t, y| {
        traj.push(resp, t, y[..n].to_vec(), y[n..].to_vec())
    })?;
    Ok(traj)
}

/// Λ₁ = κ m_Φ cos θ* / M_F′.
pub fn decay_rate_lambda1(ens: &OscillatorEnsemble, theta_star: f64, constants: &IntervalConstants) -> Result<f64> {
    check_theta_star(theta_star)?;
    Ok(ens.kappa * ens.phi.min() * theta_star.cos() / constants.max_fprime)
}

pub(crate) fn check_theta_star(theta_star: f64) -> Result<()> {
    if theta_star > 0.0 && theta_star < std::f64::consts::FRAC_PI_2 {
        Ok(())
    } else {
        domain(format!("θ* = {theta_star} must lie in (0, π/2)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrappingReport {
    pub pass: bool,
    pub max_diameter: f64,
    /// max over snapshots of D(Θ) − θ*, clipped below at 0.
    pub max_excess: f64,
    /// D(Θ) never increased by more than 1e-12 between snapshots.
    pub non_increasing: bool,
}

/// D(Θ(t_k)) ≤ θ* + 1e-9 at every stored time.
pub fn check_trapping(traj: &Trajectory, theta_star: f64) -> TrappingReport {
    let mut max_diameter: f64 = 0.0;
    let mut non_increasing = true;
    for (k, d) in traj.diagnostics.iter().enumerate() {
        max_diameter = max_diameter.max(d.d_theta);
        if k > 0 && d.d_theta > traj.diagnostics[k - 1].d_theta + 1e-12 {
            non_increasing = false;
        }
    }
    let max_excess = (max_diameter - theta_star).max(0.0);
    TrappingReport { pass: max_diameter <= theta_star + 1e-9, max_diameter, max_excess, non_increasing }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeReport {
    pub pass: bool,
    pub diameter_ok: bool,
    pub response_ok: bool,
    pub frequency_ok: bool,
    /// Largest left/right ratio of each envelope over all snapshots (0 when
    /// the right side vanishes together with the left).
    pub diameter_ratio: f64,
    pub response_ratio: f64,
    pub frequency_ratio: f64,
}

/// Checks D(Ω(t)) ≤ D(Ω⁰)e^{−Λ₁t}, |F(ω_α) − ν_c| ≤ (D(Ω⁰)/m_Qinv)e^{−Λ₁t}
/// and |ω_α − G(ν_c)| ≤ (M_Qinv/m_Qinv)D(Ω⁰)e^{−Λ₁t}, each with relative
/// slack 1e-8.
pub fn check_frequency_envelopes(
    traj: &Trajectory,
    resp: &FrequencyResponse,
    constants: &IntervalConstants,
    lambda1: f64,
) -> Result<EnvelopeReport> {
    if traj.is_empty() {
        return domain("empty trajectory");
    }
    let d0 = traj.diagnostics[0].d_omega;
    let g_nu_c = resp.invert(traj.nu_c)?;
    let slack = 1.0 + 1e-8;
    let ratio = |lhs: f64, rhs: f64| -> f64 {
        if rhs > 0.0 {
            lhs / rhs
        } else if lhs == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    };
    let (mut rd, mut rr, mut rf) = (0.0_f64, 0.0_f64, 0.0_f64);
    for (k, &t) in traj.times.iter().enumerate() {
        let env = d0 * (-lambda1 * t).exp();
        rd = rd.max(ratio(traj.diagnostics[k].d_omega, env));
        for &w in &traj.omegas[k] {
            rr = rr.max(ratio((resp.f(w) - traj.nu_c).abs(), env / constants.m_qinv));
            rf = rf.max(ratio((w - g_nu_c).abs(), env * constants.max_qinv / constants.m_qinv));
        }
    }
    let (diameter_ok, response_ok, frequency_ok) = (rd <= slack, rr <= slack, rf <= slack);
    Ok(EnvelopeReport {
        pass: diameter_ok && response_ok && frequency_ok,
        diameter_ok,
        response_ok,
        frequency_ok,
        diameter_ratio: rd,
        response_ratio: rr,
        frequency_ratio: rf,
    })
}

/// Least-squares slope of ln D(Ω) against t over the snapshots where
/// D(Ω) ∈ [1e-10, 1e-2]·D(Ω⁰). `None` with fewer than three such points.
pub fn fit_log_decay(traj: &Trajectory) -> Option<f64> {
    let d0 = traj.diagnostics.first()?.d_omega;
    if d0 <= 0.0 {
        return None;
    }
    let pts: Vec<(f64, f64)> = traj
        .times
        .iter()
        .zip(&traj.diagnostics)
        .filter(|(_, d)| d.d_omega >= 1e-10 * d0 && d.d_omega <= 1e-2 * d0)
        .map(|(&t, d)| (t, d.d_omega.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Result of running two nearby ensembles side by side.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub p: NormExponent,
    pub times: Vec<f64>,
    pub dist_theta: Vec<f64>,
    pub dist_omega: Vec<f64>,
    /// ‖ΔΘ⁰‖_p + ‖ΔV‖_p + N^{−1/p}‖ΔΦ‖_p.
    pub budget: f64,
    pub sup_half: f64,
    pub sup_full: f64,
    /// sup_t ‖Θ − Θ̃‖_p / budget; `None` when the budget vanishes.
    pub lambda3_hat: Option<f64>,
    /// sup over [0, T/2] equals sup over [0, T] to 1e-10.
    pub saturated: bool,
}

impl StabilityReport {
    pub fn degenerate(&self) -> bool {
        self.lambda3_hat.is_none()
    }
}

/// Runs both ensembles on the same grid and compares them in ℓp. The pair
/// must satisfy the uniform-stability framework for `params`.
pub fn stability_experiment(
    resp: &FrequencyResponse,
    ens: &OscillatorEnsemble,
    ens_tilde: &OscillatorEnsemble,
    p: NormExponent,
    params: &FrameworkParams,
    grid: TimeGrid,
    scheme: Scheme,
) -> Result<StabilityReport> {
    let cert = certify_framework_a(resp, ens, ens_tilde, params)?;
    if !cert.overall {
        return Err(GkError::Precondition(format!(
            "uniform-stability framework fails: {}",
            cert.failing().join(", ")
        )));
    }
    let a = integrate(resp, ens, grid, scheme)?;
    let b = integrate(resp, ens_tilde, grid, scheme)?;
    let n = ens.n();
    let dist_theta: Vec<f64> =
        a.states.iter().zip(&b.states).map(|(x, y)| crate::numerics::lp_distance(x, y, p)).collect();
    let dist_omega: Vec<f64> =
        a.omegas.iter().zip(&b.omegas).map(|(x, y)| crate::numerics::lp_distance(x, y, p)).collect();

    let dphi: Vec<f64> = ens
        .phi
        .to_flat(n)
        .iter()
        .zip(ens_tilde.phi.to_flat(n))
        .map(|(x, y)| x - y)
        .collect();
    let budget = crate::numerics::lp_distance(ens.theta(), ens_tilde.theta(), p)
        + crate::numerics::lp_distance(ens.nu(), ens_tilde.nu(), p)
        + p.inverse_root(n) * norm_with(&dphi, p);

    let half = grid.t_end / 2.0;
    let mut sup_half: f64 = 0.0;
    let mut sup_full: f64 = 0.0;
    for (&t, &d) in a.times.iter().zip(&dist_theta) {
        sup_full = sup_full.max(d);
        if t <= half + 1e-12 * half {
            sup_half = sup_half.max(d);
        }
    }
    Ok(StabilityReport {
        p,
        times: a.times,
        dist_theta,
        dist_omega,
        budget,
        sup_half,
        sup_full,
        lambda3_hat: (budget > 0.0).then(|| sup_full / budget),
        saturated: (sup_full - sup_half).abs() <= 1e-10,
    })
}

/// Interval constants on [min ω⁰, max ω⁰] widened by `pad`, the frequency
/// window containing the whole frequency trajectory of a trapped ensemble.
pub fn frequency_window_constants(
    resp: &FrequencyResponse,
    ens: &OscillatorEnsemble,
    pad: f64,
) -> Result<IntervalConstants> {
    let omega0 = initial_omega(resp, ens)?;
    let lo = omega0.iter().copied().fold(f64::INFINITY, f64::min) - pad;
    let hi = omega0.iter().copied().fold(f64::NEG_INFINITY, f64::max) + pad;
    interval_extrema(resp, lo, hi, 1e-9)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn lin() -> FrequencyResponse {
        FrequencyResponse::linear()
    }

    #[test]
    fn first_order_rhs_examples() {
        let r = lin();
        let one = OscillatorEnsemble::new(&r, vec![0.3], vec![2.5], Coupling::Uniform(1.0), 1.0).unwrap();
        assert_eq!(rhs_first_order(&r, &one, one.theta()).unwrap(), vec![2.5]);
        let two = OscillatorEnsemble::new(&r, vec![0.0, FRAC_PI_2], vec![0.0, 0.0], Coupling::Uniform(1.0), 1.0)
            .unwrap();
        let v = rhs_first_order(&r, &two, two.theta()).unwrap();
        assert!((v[0] - 0.5).abs() < 1e-15 && (v[1] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn second_order_rhs_examples() {
        let r = lin();
        let ens = OscillatorEnsemble::new(&r, vec![0.0, 0.0], vec![0.0, 0.0], Coupling::Uniform(1.0), 2.0).unwrap();
        let st = SecondOrderState { theta: vec![0.0, 0.0], omega: vec![0.0, 1.0] };
        let (dth, dw) = rhs_second_order(&r, &ens, &st).unwrap();
        assert_eq!(dth, vec![0.0, 1.0]);
        assert_eq!(dw, vec![1.0, -1.0]);
        let st = SecondOrderState { theta: vec![0.1, 0.4], omega: vec![0.7, 0.7] };
        assert_eq!(rhs_second_order(&r, &ens, &st).unwrap().1, vec![0.0, 0.0]);
    }

    #[test]
    fn single_oscillator_moves_on_a_line() {
        let r = lin();
        let ens = OscillatorEnsemble::new(&r, vec![0.2], vec![5.0], Coupling::Uniform(1.0), 1.0).unwrap();
        let traj = integrate(&r, &ens, TimeGrid::new(1.0, 1e-3, 100).unwrap(), Scheme::Rk4).unwrap();
        assert!((traj.states.last().unwrap()[0] - 5.2).abs() < 1e-12);
    }

    #[test]
    fn coupling_validation() {
        assert!(Coupling::dense(&[vec![1.0, 2.0], vec![2.1, 1.0]]).is_err());
        assert!(Coupling::dense(&[vec![1.0, 0.0], vec![0.0, 1.0]]).is_err());
        assert!(Coupling::dense(&[vec![1.0, 2.0], vec![2.0, 1.0]]).is_ok());
        assert!(Coupling::uniform(-1.0).is_err());
    }

    #[test]
    fn expansion_path_matches_direct_sums() {
        let n = PARALLEL_THRESHOLD + 5;
        let theta: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let nu: Vec<f64> = (0..n).map(|i| (i as f64 * 0.11).cos() * 0.1).collect();
        let values: Vec<f64> =
            (0..n * n).map(|k| 1.0 + 0.5 * (((k / n) + (k % n)) as f64 * 0.01).sin().abs()).collect();
        for phi in [Coupling::Uniform(0.8), Coupling::from_flat(n, values).unwrap()] {
            let ens = OscillatorEnsemble::unchecked(theta.clone(), nu.clone(), phi, 1.3).unwrap();
            let mut fast = vec![0.0; n];
            coupling_arguments(&ens, &theta, &mut fast);
            for a in [0, 17, n - 1] {
                let mut acc = CompensatedSum::new();
                for b in 0..n {
                    acc.add(ens.phi().get(a, b) * (theta[b] - theta[a]).sin());
                }
                let direct = nu[a] + 1.3 / n as f64 * acc.value();
                assert!((direct - fast[a]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn lambda1_examples() {
        let r = lin();
        let c = interval_extrema(&r, -1.0, 1.0, 1e-9).unwrap();
        let ens = OscillatorEnsemble::new(&r, vec![0.0, 0.1], vec![0.0, 0.0], Coupling::Uniform(1.0), 2.0).unwrap();
        let l = decay_rate_lambda1(&ens, std::f64::consts::FRAC_PI_4, &c).unwrap();
        assert!((l - 2f64.sqrt()).abs() < 1e-12);
        let ens = OscillatorEnsemble::new(&r, vec![0.0, 0.1], vec![0.0, 0.0], Coupling::Uniform(1.0), 10.0).unwrap();
        let l = decay_rate_lambda1(&ens, std::f64::consts::FRAC_PI_3, &c).unwrap();
        assert!((l - 5.0).abs() < 1e-12);
        assert!(decay_rate_lambda1(&ens, 0.0, &c).is_err());
        assert!(decay_rate_lambda1(&ens, FRAC_PI_2, &c).is_err());
    }
}
