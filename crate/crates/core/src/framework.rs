//! Admissibility checks and the sufficient parameter frameworks for the
//! particle and continuum models.

use std::f64::consts::FRAC_PI_2;

use crate::constants::interval_extrema;
use crate::continuum::ContinuumData;
use crate::error::{domain, Result};
use crate::numerics::{compensated_sum, diameter};
use crate::particle::OscillatorEnsemble;
use crate::response::FrequencyResponse;

/// User-chosen framework parameters: the trapping angle θ* and the
/// frequency window [a_G, b_G].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameworkParams {
    pub theta_star: f64,
    pub a_g: f64,
    pub b_g: f64,
}

impl FrameworkParams {
    pub fn new(theta_star: f64, a_g: f64, b_g: f64) -> Result<Self> {
        if !(theta_star > 0.0 && theta_star < FRAC_PI_2) {
            return domain(format!("θ* = {theta_star} must lie in (0, π/2)"));
        }
        if !(a_g < b_g) {
            return domain(format!("empty frequency window [{a_g}, {b_g}]"));
        }
        Ok(Self { theta_star, a_g, b_g })
    }
}

/// One inequality of a framework and whether it holds.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub name: &'static str,
    pub holds: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameworkCertificate {
    pub theta_star: f64,
    pub a_phi: f64,
    pub b_phi: f64,
    pub kappa: f64,
    pub kappa_required: f64,
    pub conditions: Vec<Condition>,
    pub overall: bool,
}

impl FrameworkCertificate {
    fn build(theta_star: f64, a_phi: f64, b_phi: f64, kappa: f64, kappa_required: f64, conditions: Vec<Condition>) -> Self {
        let overall = conditions.iter().all(|c| c.holds);
        Self { theta_star, a_phi, b_phi, kappa, kappa_required, conditions, overall }
    }

    pub fn condition(&self, name: &str) -> Option<bool> {
        self.conditions.iter().find(|c| c.name == name).map(|c| c.holds)
    }

    /// Names of the conditions that fail.
    pub fn failing(&self) -> Vec<String> {
        self.conditions.iter().filter(|c| !c.holds).map(|c| format!("{} ({})", c.name, c.detail)).collect()
    }
}

fn cond(name: &'static str, holds: bool, detail: String) -> Condition {
    Condition { name, holds, detail }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmissibilityReport {
    pub admissible: bool,
    /// Oscillator with the largest |ν_α| + (κ/N)Σ_β|φ_αβ|.
    pub worst_index: usize,
    pub worst_value: f64,
}

/// True iff ν_α ± (κ/N) Σ_β |φ_αβ| lies in the range of F for every α.
pub fn check_admissibility(resp: &FrequencyResponse, ens: &OscillatorEnsemble) -> AdmissibilityReport {
    let n = ens.n();
    let mut worst = (0, f64::NEG_INFINITY);
    for a in 0..n {
        let spread = ens.kappa() / n as f64 * ens.phi().row_abs_sum(a, n);
        let v = ens.nu()[a].abs() + spread;
        if v > worst.1 {
            worst = (a, v);
        }
    }
    AdmissibilityReport {
        admissible: resp.in_range(worst.1) && resp.in_range(-worst.1),
        worst_index: worst.0,
        worst_value: worst.1,
    }
}

/// Evaluates the uniform-stability framework for a pair of ensembles that
/// share N and κ: diameter bounds on both initial phase vectors, coupling
/// bounds, the coupling-strength threshold, the frequency sandwich and equal
/// frequency sums.
pub fn certify_framework_a(
    resp: &FrequencyResponse,
    ens: &OscillatorEnsemble,
    ens_tilde: &OscillatorEnsemble,
    params: &FrameworkParams,
) -> Result<FrameworkCertificate> {
    let n = ens.n();
    if ens_tilde.n() != n {
        return domain(format!("ensembles have sizes {n} and {}", ens_tilde.n()));
    }
    if ens.kappa() != ens_tilde.kappa() {
        return domain(format!("ensembles have κ = {} and {}", ens.kappa(), ens_tilde.kappa()));
    }
    let th = params.theta_star;
    let kappa = ens.kappa();
    let consts = interval_extrema(resp, params.a_g, params.b_g, 1e-9)?;

    let (m_phi, m_phi_t) = (ens.phi().min(), ens_tilde.phi().min());
    let a_phi = m_phi.min(m_phi_t);
    let b_phi = ens.phi().max().max(ens_tilde.phi().max());

    let d0 = diameter(ens.theta())?;
    let d0t = diameter(ens_tilde.theta())?;
    let dv = diameter(ens.nu())?;
    let dvt = diameter(ens_tilde.nu())?;

    let k1 = dv / (m_phi * th.sin());
    let k2 = dvt / (m_phi_t * th.sin());
    let k3 = consts.max_qinv / (m_phi.max(m_phi_t) * consts.m_gprime.powi(2) * th.cos());
    let kappa_required = k1.max(k2).max(k3);

    let lower = resp.f(params.a_g) + kappa * b_phi;
    let upper = resp.f(params.b_g) - kappa * b_phi;
    let in_window = |v: &[f64]| v.iter().all(|&x| lower <= x && x <= upper);

    let sum = compensated_sum(ens.nu().iter().copied());
    let sum_t = compensated_sum(ens_tilde.nu().iter().copied());

    let conditions = vec![
        cond("diameter", d0 <= th, format!("D(Θ⁰) = {d0}, θ* = {th}")),
        cond("diameter_tilde", d0t <= th, format!("D(Θ̃⁰) = {d0t}, θ* = {th}")),
        cond("coupling_bounds", a_phi > 0.0 && b_phi.is_finite(), format!("φ ∈ [{a_phi}, {b_phi}]")),
        cond(
            "kappa",
            kappa > kappa_required,
            format!("κ = {kappa}, required > max({k1}, {k2}, {k3}) = {kappa_required}"),
        ),
        cond(
            "frequency_range",
            in_window(ens.nu()) && in_window(ens_tilde.nu()),
            format!("ν must lie in [{lower}, {upper}]"),
        ),
        cond(
            "frequency_sum",
            (sum - sum_t).abs() <= 1e-12 * n as f64,
            format!("Σν = {sum}, Σν̃ = {sum_t}"),
        ),
    ];
    Ok(FrameworkCertificate::build(th, a_phi, b_phi, kappa, kappa_required, conditions))
}

/// Continuum framework certificate. `continuity` reports the sampled
/// continuity of θ⁰ and ν; it is kept out of `overall` because cell-wise
/// constant data is a supported input.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuumCertificate {
    pub certificate: FrameworkCertificate,
    pub continuity: bool,
}

/// Evaluates the continuum framework: dyadic partition of the cube, sampled
/// continuity, the diameter bound on θ⁰, coupling bounds, the
/// coupling-strength threshold and the frequency sandwich.
pub fn certify_framework_b(
    resp: &FrequencyResponse,
    data: &ContinuumData,
    params: &FrameworkParams,
) -> Result<ContinuumCertificate> {
    let th = params.theta_star;
    let kappa = data.kappa;
    let consts = interval_extrema(resp, params.a_g, params.b_g, 1e-9)?;
    let (t_lo, t_hi) = data.theta0.sample_extrema(data.d);
    let (n_lo, n_hi) = data.nu.sample_extrema(data.d);
    let (a_phi, b_phi) = data.phi.sample_extrema(data.d);
    let d_theta = t_hi - t_lo;
    let d_nu = n_hi - n_lo;

    let k1 = d_nu / (a_phi * th.sin());
    let k2 = 2.0 * consts.max_qinv / (a_phi * consts.m_gprime.powi(2) * th.cos());
    let kappa_required = if a_phi > 0.0 { k1.max(k2) } else { f64::INFINITY };
    let lower = resp.f(params.a_g) + kappa * b_phi;
    let upper = resp.f(params.b_g) - kappa * b_phi;

    let continuity = data.theta0.looks_continuous(data.d) && data.nu.looks_continuous(data.d);
    let conditions = vec![
        cond("partition", true, format!("dyadic partition of [0,1]^{}", data.d)),
        cond("diameter", d_theta <= th, format!("D(θ⁰) = {d_theta}, θ* = {th}")),
        cond("coupling_bounds", a_phi > 0.0 && b_phi.is_finite(), format!("φ ∈ [{a_phi}, {b_phi}]")),
        cond("kappa", kappa > kappa_required, format!("κ = {kappa}, required > max({k1}, {k2})")),
        cond(
            "frequency_range",
            lower <= n_lo && n_hi <= upper,
            format!("ν ∈ [{n_lo}, {n_hi}] must lie in [{lower}, {upper}]"),
        ),
    ];
    Ok(ContinuumCertificate {
        certificate: FrameworkCertificate::build(th, a_phi, b_phi, kappa, kappa_required, conditions),
        continuity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::particle::Coupling;
    use std::f64::consts::FRAC_PI_4;

    fn pair(kappa: f64, nu_tilde: Vec<f64>) -> (OscillatorEnsemble, OscillatorEnsemble) {
        let r = FrequencyResponse::linear();
        let a = OscillatorEnsemble::new(&r, vec![0.0, 0.1], vec![-0.05, 0.05], Coupling::Uniform(1.0), kappa).unwrap();
        let b = OscillatorEnsemble::new(&r, vec![0.0, 0.2], nu_tilde, Coupling::Uniform(1.0), kappa).unwrap();
        (a, b)
    }

    #[test]
    fn two_oscillator_certificate() {
        let r = FrequencyResponse::linear();
        let params = FrameworkParams::new(FRAC_PI_4, -10.0, 10.0).unwrap();
        let (a, b) = pair(2.0, vec![-0.05, 0.05]);
        let c = certify_framework_a(&r, &a, &b, &params).unwrap();
        assert!(c.overall, "{:?}", c.failing());
        let expected = (0.1 / FRAC_PI_4.sin()).max(1.0 / FRAC_PI_4.cos());
        assert!((c.kappa_required - expected).abs() < 1e-12);
        assert!((c.kappa_required - std::f64::consts::SQRT_2).abs() < 1e-12);

        let (a, b) = pair(1.0, vec![-0.05, 0.05]);
        let c = certify_framework_a(&r, &a, &b, &params).unwrap();
        assert!(!c.overall);
        assert_eq!(c.condition("kappa"), Some(false));
        assert_eq!(c.conditions.iter().filter(|c| !c.holds).count(), 1);

        let (a, b) = pair(2.0, vec![0.45, 0.05]);
        let c = certify_framework_a(&r, &a, &b, &params).unwrap();
        assert!(!c.overall);
        assert_eq!(c.condition("frequency_sum"), Some(false));
    }

    #[test]
    fn admissibility_examples() {
        let lin = FrequencyResponse::linear();
        let e = OscillatorEnsemble::unchecked(vec![0.0], vec![1e6], Coupling::Uniform(1.0), 1e3).unwrap();
        assert!(check_admissibility(&lin, &e).admissible);
        let rel = FrequencyResponse::relativistic(1.0).unwrap();
        assert!(check_admissibility(&rel, &e).admissible);
        let bounded = FrequencyResponse::catalog("tanh2").unwrap();
        let e = OscillatorEnsemble::unchecked(vec![0.0, 0.0], vec![1.9, -1.9], Coupling::Uniform(1.0), 1.0).unwrap();
        let rep = check_admissibility(&bounded, &e);
        assert!(!rep.admissible);
        assert!((rep.worst_value - 2.9).abs() < 1e-15);
        assert!(OscillatorEnsemble::new(&bounded, vec![0.0, 0.0], vec![1.9, -1.9], Coupling::Uniform(1.0), 1.0).is_err());
    }
}
