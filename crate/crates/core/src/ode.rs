//! Fixed-step RK4 and adaptive RKF45 for autonomous systems y′ = f(y).

use crate::error::{domain, GkError, Result};

/// Right-hand side of an autonomous ODE.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, y: &[f64], dy: &mut [f64]) -> Result<()>;
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Scheme {
    #[default]
    Rk4,
    Rkf45 { atol: f64, rtol: f64 },
}

impl Scheme {
    pub const RKF45_DEFAULT: Scheme = Scheme::Rkf45 { atol: 1e-10, rtol: 1e-10 };

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "rk4" | "rk4-fixed" => Ok(Scheme::Rk4),
            "rkf45" | "rkf45-adaptive" => Ok(Self::RKF45_DEFAULT),
            other => domain(format!("unknown scheme '{other}'; expected rk4 or rkf45")),
        }
    }
}

/// Time grid of a run: steps of `dt`, output every `stride` steps, last
/// output exactly at `t_end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t_end: f64,
    pub dt: f64,
    pub stride: usize,
}

impl TimeGrid {
    pub fn new(t_end: f64, dt: f64, stride: usize) -> Result<Self> {
        if !(t_end > 0.0 && t_end.is_finite()) {
            return domain(format!("t_end must be positive, got {t_end}"));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return domain(format!("dt must be positive, got {dt}"));
        }
        if stride == 0 {
            return domain("output stride must be at least 1");
        }
        Ok(Self { t_end, dt, stride })
    }

    /// Number of steps; the final step is shortened if dt does not divide t_end.
    pub fn steps(&self) -> usize {
        let n = self.t_end / self.dt;
        let r = n.round();
        if (n - r).abs() <= 1e-9 * n.max(1.0) {
            r as usize
        } else {
            n.ceil() as usize
        }
    }

    pub fn time_of(&self, step: usize) -> f64 {
        if step >= self.steps() {
            self.t_end
        } else {
            step as f64 * self.dt
        }
    }

    /// Step indices at which output is recorded (always includes 0 and the last).
    pub fn output_steps(&self) -> Vec<usize> {
        let n = self.steps();
        let mut out: Vec<usize> = (0..=n).step_by(self.stride).collect();
        if *out.last().unwrap() != n {
            out.push(n);
        }
        out
    }
}

struct Rk4Work {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Work {
    fn new(n: usize) -> Self {
        Self { k1: vec![0.0; n], k2: vec![0.0; n], k3: vec![0.0; n], k4: vec![0.0; n], tmp: vec![0.0; n] }
    }
}

fn rk4_step<S: OdeSystem + ?Sized>(sys: &S, y: &mut [f64], h: f64, w: &mut Rk4Work) -> Result<()> {
    let n = y.len();
    sys.rhs(y, &mut w.k1)?;
    for i in 0..n {
        w.tmp[i] = y[i] + 0.5 * h * w.k1[i];
    }
    sys.rhs(&w.tmp, &mut w.k2)?;
    for i in 0..n {
        w.tmp[i] = y[i] + 0.5 * h * w.k2[i];
    }
    sys.rhs(&w.tmp, &mut w.k3)?;
    for i in 0..n {
        w.tmp[i] = y[i] + h * w.k3[i];
    }
    sys.rhs(&w.tmp, &mut w.k4)?;
    for i in 0..n {
        y[i] += h / 6.0 * (w.k1[i] + 2.0 * w.k2[i] + 2.0 * w.k3[i] + w.k4[i]);
    }
    Ok(())
}

// Fehlberg 4(5) tableau.
const A: [[f64; 5]; 6] = [
    [0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 4.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 32.0, 9.0 / 32.0, 0.0, 0.0, 0.0],
    [1932.0 / 2197.0, -7200.0 / 2197.0, 7296.0 / 2197.0, 0.0, 0.0],
    [439.0 / 216.0, -8.0, 3680.0 / 513.0, -845.0 / 4104.0, 0.0],
    [-8.0 / 27.0, 2.0, -3544.0 / 2565.0, 1859.0 / 4104.0, -11.0 / 40.0],
];
const B5: [f64; 6] = [16.0 / 135.0, 0.0, 6656.0 / 12825.0, 28561.0 / 56430.0, -9.0 / 50.0, 2.0 / 55.0];
const B4: [f64; 6] = [25.0 / 216.0, 0.0, 1408.0 / 2565.0, 2197.0 / 4104.0, -1.0 / 5.0, 0.0];

/// One RKF45 attempt; writes the 5th-order solution into `out` and returns
/// the scaled error norm.
fn rkf45_attempt<S: OdeSystem + ?Sized>(
    sys: &S,
    y: &[f64],
    h: f64,
    atol: f64,
    rtol: f64,
    k: &mut [Vec<f64>; 6],
    tmp: &mut [f64],
    out: &mut [f64],
) -> Result<f64> {
    let n = y.len();
    for s in 0..6 {
        for i in 0..n {
            let mut acc = y[i];
            for (j, a) in A[s].iter().enumerate().take(s) {
                acc += h * a * k[j][i];
            }
            tmp[i] = acc;
        }
        sys.rhs(tmp, &mut k[s])?;
    }
    let mut err: f64 = 0.0;
    for i in 0..n {
        let mut y5 = y[i];
        let mut y4 = y[i];
        for s in 0..6 {
            y5 += h * B5[s] * k[s][i];
            y4 += h * B4[s] * k[s][i];
        }
        out[i] = y5;
        let scale = atol + rtol * y[i].abs().max(y5.abs());
        err = err.max(((y5 - y4) / scale).abs());
    }
    Ok(err)
}

/// Integrates `sys` from `y0` over `grid`, calling `observe(step, t, y)` at
/// every output step (including t = 0). An admissibility failure in the
/// right-hand side is reported with the last time at which the state was
/// valid.
pub fn integrate<S, O>(sys: &S, y0: &[f64], grid: TimeGrid, scheme: Scheme, mut observe: O) -> Result<()>
where
    S: OdeSystem + ?Sized,
    O: FnMut(usize, f64, &[f64]) -> Result<()>,
{
    if y0.len() != sys.dim() {
        return domain(format!("state length {} does not match system dimension {}", y0.len(), sys.dim()));
    }
    let mut y = y0.to_vec();
    let outputs = grid.output_steps();
    observe(0, 0.0, &y)?;
    let stamp = |e: GkError, t: f64| match e {
        GkError::Admissibility { detail, .. } => GkError::Admissibility { last_valid_time: t, detail },
        other => other,
    };

    match scheme {
        Scheme::Rk4 => {
            let mut w = Rk4Work::new(y.len());
            let mut next_out = 1;
            for step in 1..=grid.steps() {
                let t0 = grid.time_of(step - 1);
                let h = grid.time_of(step) - t0;
                rk4_step(sys, &mut y, h, &mut w).map_err(|e| stamp(e, t0))?;
                if next_out < outputs.len() && outputs[next_out] == step {
                    observe(step, grid.time_of(step), &y)?;
                    next_out += 1;
                }
            }
        }
        Scheme::Rkf45 { atol, rtol } => {
            let n = y.len();
            let mut k: [Vec<f64>; 6] = std::array::from_fn(|_| vec![0.0; n]);
            let mut tmp = vec![0.0; n];
            let mut cand = vec![0.0; n];
            let mut t = 0.0;
            let mut h = grid.dt;
            for &step in &outputs[1..] {
                let t_target = grid.time_of(step);
                let mut attempts = 0usize;
                while t < t_target {
                    let last = t + h >= t_target;
                    let h_try = if last { t_target - t } else { h };
                    let err = rkf45_attempt(sys, &y, h_try, atol, rtol, &mut k, &mut tmp, &mut cand)
                        .map_err(|e| stamp(e, t))?;
                    attempts += 1;
                    if attempts > 10_000_000 {
                        return Err(GkError::Numeric("adaptive step limit exceeded".into()));
                    }
                    if err <= 1.0 {
                        t = if last { t_target } else { t + h_try };
                        y.copy_from_slice(&cand);
                    }
                    let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                    let h_new = h_try * factor;
                    if err <= 1.0 && last {
                        // Keep the step chosen before it was clipped to the output time.
                        h = h.max(h_new).min(h * 5.0);
                    } else {
                        h = h_new;
                    }
                    if h < 1e-14 * t_target.max(1.0) {
                        return Err(GkError::Numeric(format!("adaptive step underflow at t = {t}")));
                    }
                }
                observe(step, t_target, &y)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Decay;
    impl OdeSystem for Decay {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, y: &[f64], dy: &mut [f64]) -> Result<()> {
            dy[0] = -y[0];
            Ok(())
        }
    }

    struct Rotation;
    impl OdeSystem for Rotation {
        fn dim(&self) -> usize {
            2
        }
        fn rhs(&self, y: &[f64], dy: &mut [f64]) -> Result<()> {
            dy[0] = -y[1];
            dy[1] = y[0];
            Ok(())
        }
    }

    fn final_state<S: OdeSystem>(sys: &S, y0: &[f64], grid: TimeGrid, scheme: Scheme) -> Vec<f64> {
        let mut last = Vec::new();
        integrate(sys, y0, grid, scheme, |_, _, y| {
            last = y.to_vec();
            Ok(())
        })
        .unwrap();
        last
    }

    #[test]
    fn time_grid_outputs() {
        let g = TimeGrid::new(1.0, 0.1, 3).unwrap();
        assert_eq!(g.steps(), 10);
        assert_eq!(g.output_steps(), vec![0, 3, 6, 9, 10]);
        assert_eq!(g.time_of(10), 1.0);
        let g = TimeGrid::new(1.05, 0.1, 1).unwrap();
        assert_eq!(g.steps(), 11);
        assert_eq!(g.time_of(11), 1.05);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let errs: Vec<f64> = [0.1, 0.05, 0.025]
            .iter()
            .map(|&dt| {
                let y = final_state(&Decay, &[1.0], TimeGrid::new(2.0, dt, 1).unwrap(), Scheme::Rk4);
                (y[0] - (-2.0f64).exp()).abs()
            })
            .collect();
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((ratio - 16.0).abs() < 2.0, "ratio {ratio}");
        }
    }

    #[test]
    fn rkf45_meets_tolerance() {
        let grid = TimeGrid::new(10.0, 0.5, 1).unwrap();
        let y = final_state(&Rotation, &[1.0, 0.0], grid, Scheme::RKF45_DEFAULT);
        assert!((y[0] - 10f64.cos()).abs() < 1e-8);
        assert!((y[1] - 10f64.sin()).abs() < 1e-8);
    }

    #[test]
    fn observer_sees_every_output_time() {
        let mut times = Vec::new();
        integrate(&Decay, &[1.0], TimeGrid::new(1.0, 0.25, 2).unwrap(), Scheme::RKF45_DEFAULT, |_, t, _| {
            times.push(t);
            Ok(())
        })
        .unwrap();
        assert_eq!(times, vec![0.0, 0.5, 1.0]);
    }
}
