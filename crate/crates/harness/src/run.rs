//! Experiment dispatch, reports and CSV output.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use gk_core::continuum::{self, dyadic_partition, ContinuumData};
use gk_core::framework::{certify_framework_a, certify_framework_b, FrameworkParams};
use gk_core::kinetic::{self, BasicTest, KineticParams};
use gk_core::numerics::{diameter, NormExponent};
use gk_core::particle::{self, Coupling, OscillatorEnsemble};
use gk_core::{interval_extrema, FrequencyResponse, GkError, TimeGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{
    ContinuumSpec, CouplingSpec, EnsembleSpec, ExperimentConfig, ExperimentKind, KineticSpec, RunSpec, VectorSpec,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_CHECK: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

/// Why a run stopped before finishing its checks.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub exit_code: i32,
    pub message: String,
}

impl From<GkError> for Failure {
    fn from(e: GkError) -> Self {
        let exit_code = match e {
            GkError::Domain(_) => EXIT_CONFIG,
            GkError::Precondition(_) => EXIT_CHECK,
            GkError::Numeric(_) | GkError::InvariantViolation { .. } | GkError::Admissibility { .. } => EXIT_NUMERIC,
        };
        Self { exit_code, message: e.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub kind: ExperimentKind,
    pub checks: Vec<Check>,
    /// Measured or derived constants, in the order they were computed.
    pub constants: Vec<(String, f64)>,
    pub margins: Vec<(String, f64)>,
    pub failure: Option<Failure>,
    pub wall_clock: f64,
    pub config_hash: String,
    pub output: Option<PathBuf>,
    /// The rows written to the CSV, if the run got that far.
    pub table: Option<Table>,
}

impl RunReport {
    fn new(config: &ExperimentConfig) -> Self {
        Self {
            kind: config.kind,
            checks: Vec::new(),
            constants: Vec::new(),
            margins: Vec::new(),
            failure: None,
            wall_clock: 0.0,
            config_hash: config.hash.clone(),
            output: None,
            table: None,
        }
    }

    fn check(&mut self, name: &str, pass: bool, detail: impl Into<String>) {
        self.checks.push(Check { name: name.to_string(), pass, detail: detail.into() });
    }

    fn constant(&mut self, name: &str, v: f64) {
        self.constants.push((name.to_string(), v));
    }

    fn margin(&mut self, name: &str, v: f64) {
        self.margins.push((name.to_string(), v));
    }

    pub fn constant_value(&self, name: &str) -> Option<f64> {
        self.constants.iter().find(|c| c.0 == name).map(|c| c.1)
    }

    pub fn failing_checks(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }

    pub fn passed(&self) -> bool {
        self.failure.is_none() && self.checks.iter().all(|c| c.pass)
    }

    pub fn exit_code(&self) -> i32 {
        match &self.failure {
            Some(f) => f.exit_code,
            None if self.checks.iter().all(|c| c.pass) => EXIT_PASS,
            None => EXIT_CHECK,
        }
    }
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "experiment {}  config sha256 {}", self.kind, self.config_hash)?;
        for c in &self.checks {
            writeln!(f, "  [{}] {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail)?;
        }
        for (k, v) in &self.constants {
            writeln!(f, "  {k} = {}", num(*v))?;
        }
        for (k, v) in &self.margins {
            writeln!(f, "  margin {k} = {}", num(*v))?;
        }
        if let Some(e) = &self.failure {
            writeln!(f, "  error: {}", e.message)?;
        }
        if let Some(p) = &self.output {
            writeln!(f, "  wrote {}", p.display())?;
        }
        write!(f, "  {:.3} s, exit {}", self.wall_clock, self.exit_code())
    }
}

/// Rows for one CSV file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self { columns: columns.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

/// Shortest round-trip text for a float.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e15).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// Writes `# ` comment lines, then the table, to a temporary file next to
/// `path` and renames it into place.
pub fn write_csv(path: &Path, comments: &[String], table: &Table) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    for c in comments {
        writeln!(tmp, "# {c}")?;
    }
    {
        let mut w = csv::Writer::from_writer(&mut tmp);
        w.write_record(&table.columns)?;
        for r in &table.rows {
            w.write_record(r)?;
        }
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn header_comments(config: &ExperimentConfig) -> Vec<String> {
    vec![
        format!("gk {VERSION}"),
        format!("experiment {}", config.kind),
        format!("config-sha256 {}", config.hash),
    ]
}

/// Runs the experiment, writes its CSV to `out` (or the configured output
/// path) and returns the report. Module failures end up in the report.
pub fn run_experiment(config: &ExperimentConfig, out: Option<&Path>) -> RunReport {
    let start = Instant::now();
    let mut report = RunReport::new(config);
    let mut table = None;
    if let Err(f) = dispatch(config, &mut report, &mut table) {
        if f.exit_code == EXIT_CHECK {
            report.check("precondition", false, f.message.clone());
        }
        report.failure = Some(f);
    }
    let target = out.map(Path::to_path_buf).or_else(|| config.output.as_ref().map(|p| config.resolve(p)));
    if let (Some(path), Some(t)) = (target, &table) {
        match write_csv(&path, &header_comments(config), t) {
            Ok(()) => report.output = Some(path),
            Err(e) => {
                if report.failure.is_none() {
                    report.failure = Some(Failure { exit_code: EXIT_CONFIG, message: format!("{}: {e}", path.display()) });
                }
            }
        }
    }
    report.table = table;
    report.wall_clock = start.elapsed().as_secs_f64();
    report
}

type Step = Result<(), Failure>;

fn dispatch(config: &ExperimentConfig, report: &mut RunReport, table: &mut Option<Table>) -> Step {
    let resp = config.response.build()?;
    match config.kind {
        ExperimentKind::Constants => constants(config, &resp, report, table),
        ExperimentKind::Simulate => simulate(config, &resp, report, table),
        ExperimentKind::Equivalence => equivalence(config, &resp, report, table),
        ExperimentKind::Stability => stability(config, &resp, report, table),
        ExperimentKind::ContinuumLimit => continuum_limit(config, &resp, report, table),
        ExperimentKind::Picard => picard(config, &resp, report, table),
        ExperimentKind::Contraction => contraction(config, &resp, report, table),
        ExperimentKind::L1Envelope => l1_envelope(config, &resp, report, table),
        ExperimentKind::MeanField => mean_field(config, &resp, report, table),
        ExperimentKind::KineticStability => kinetic_stability(config, &resp, report, table),
        ExperimentKind::WeakForm => weak_form(config, &resp, report, table),
    }
}

fn missing(what: &str) -> Failure {
    Failure { exit_code: EXIT_CONFIG, message: format!("missing {what}") }
}

fn run_spec(config: &ExperimentConfig) -> Result<RunSpec, Failure> {
    config.run.ok_or_else(|| missing("[run]"))
}

fn grid(run: &RunSpec) -> Result<TimeGrid, Failure> {
    Ok(TimeGrid::new(run.t_end, run.dt, run.stride)?)
}

fn fw(v: Option<f64>, key: &str) -> Result<f64, Failure> {
    v.ok_or_else(|| missing(&format!("framework.{key}")))
}

fn framework_params(config: &ExperimentConfig) -> Result<FrameworkParams, Failure> {
    let f = &config.framework;
    Ok(FrameworkParams::new(fw(f.theta_star, "theta_star")?, fw(f.a_g, "a_G")?, fw(f.b_g, "b_G")?)?)
}

pub fn realize_vector(spec: &VectorSpec, n: usize) -> Vec<f64> {
    match spec {
        VectorSpec::List(v) => v.clone(),
        VectorSpec::Uniform { lo, hi, seed } => {
            let mut r = ChaCha8Rng::seed_from_u64(*seed);
            (0..n).map(|_| r.random_range(*lo..*hi)).collect()
        }
        VectorSpec::Linspace { lo, hi } => {
            if n == 1 {
                return vec![0.5 * (lo + hi)];
            }
            (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
        }
    }
}

fn realize_coupling(config: &ExperimentConfig, spec: &CouplingSpec, n: usize) -> Result<Coupling, Failure> {
    Ok(match spec {
        CouplingSpec::Constant(c) => Coupling::uniform(*c)?,
        CouplingSpec::Matrix(rows) => Coupling::dense(rows)?,
        CouplingSpec::File(p) => {
            let path = config.resolve(p);
            let text = fs::read_to_string(&path)
                .map_err(|e| Failure { exit_code: EXIT_CONFIG, message: format!("{}: {e}", path.display()) })?;
            let rows = parse_matrix(&text)
                .map_err(|m| Failure { exit_code: EXIT_CONFIG, message: format!("{}: {m}", path.display()) })?;
            if rows.len() != n {
                return Err(Failure {
                    exit_code: EXIT_CONFIG,
                    message: format!("{}: {} rows for N = {n}", path.display(), rows.len()),
                });
            }
            Coupling::dense(&rows)?
        }
        CouplingSpec::Uniform { lo, hi, seed } => {
            let mut r = ChaCha8Rng::seed_from_u64(*seed);
            let mut m = vec![0.0; n * n];
            for a in 0..n {
                for b in a..n {
                    let v = r.random_range(*lo..*hi);
                    m[a * n + b] = v;
                    m[b * n + a] = v;
                }
            }
            Coupling::from_flat(n, m)?
        }
    })
}

fn parse_matrix(text: &str) -> Result<Vec<Vec<f64>>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            l.split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| format!("line {}: '{t}': {e}", i + 1)))
                .collect()
        })
        .collect()
}

fn build_ensemble(
    config: &ExperimentConfig,
    resp: &FrequencyResponse,
    e: &EnsembleSpec,
) -> Result<OscillatorEnsemble, Failure> {
    let theta = realize_vector(&e.theta0, e.n);
    let nu = realize_vector(&e.nu, e.n);
    let phi = realize_coupling(config, &e.phi, e.n)?;
    Ok(OscillatorEnsemble::new(resp, theta, nu, phi, e.kappa)?)
}

fn ensemble(config: &ExperimentConfig, resp: &FrequencyResponse) -> Result<OscillatorEnsemble, Failure> {
    let e = config.ensemble.as_ref().ok_or_else(|| missing("[ensemble]"))?;
    build_ensemble(config, resp, e)
}

fn constants(config: &ExperimentConfig, resp: &FrequencyResponse, report: &mut RunReport, table: &mut Option<Table>) -> Step {
    let f = &config.framework;
    let c = interval_extrema(resp, fw(f.a_g, "a_G")?, fw(f.b_g, "b_G")?, 1e-9)?;
    report.check("consistent", c.is_consistent(), "extrema ordered, m_G′·M_F′ ≥ 1 and M_G′·m_F′ ≤ 1 to tolerance");
    let mut t = Table::new(["name", "value"]);
    let mut put = |report: &mut RunReport, name: &str, v: f64| {
        report.constant(name, v);
        t.push(vec![name.to_string(), num(v)]);
    };
    for (name, v) in [
        ("a_G", c.a_g),
        ("b_G", c.b_g),
        ("m_Fprime", c.m_fprime),
        ("M_Fprime", c.max_fprime),
        ("m_Gprime", c.m_gprime),
        ("M_Gprime", c.max_gprime),
        ("m_Qinv", c.m_qinv),
        ("M_Qinv", c.max_qinv),
        ("m_QGprime", c.m_qgp),
        ("M_QGprime", c.max_qgp),
    ] {
        put(report, name, v);
    }
    if let (Some(th), Some(e)) = (f.theta_star, &config.ensemble) {
        let ens = build_ensemble(config, resp, e)?;
        let w = particle::frequency_window_constants(resp, &ens, 1e-9)?;
        put(report, "Lambda1", particle::decay_rate_lambda1(&ens, th, &w)?);
        put(report, "kappa_trapping", diameter(ens.nu())? / (ens.phi().min() * th.sin()));
    }
    *table = Some(t);
    Ok(())
}

fn simulate(config: &ExperimentConfig, resp: &FrequencyResponse, report: &mut RunReport, table: &mut Option<Table>) -> Step {
    let run = run_spec(config)?;
    let ens = ensemble(config, resp)?;
    let traj = particle::integrate(resp, &ens, grid(&run)?, run.scheme)?;
    let n = ens.n();
    let mut cols = vec!["time".to_string()];
    cols.extend((0..n).map(|i| format!("theta_{i}")));
    cols.extend((0..n).map(|i| format!("omega_{i}")));
    cols.extend(["D_theta", "D_omega", "nu_c"].map(String::from));
    let mut t = Table { columns: cols, rows: Vec::with_capacity(traj.len()) };
    for k in 0..traj.len() {
        let mut row = Vec::with_capacity(2 * n + 4);
        row.push(num(traj.times[k]));
        row.extend(traj.states[k].iter().map(|&x| num(x)));
        row.extend(traj.omegas[k].iter().map(|&x| num(x)));
        let d = traj.diagnostics[k];
        row.extend([num(d.d_theta), num(d.d_omega), num(traj.nu_c)]);
        t.push(row);
    }
    *table = Some(t);

    let cons = traj.max_conservation_error();
    report.check("conservation", cons <= 1e-10, format!("max |(1/N)ΣF(ω) − ν_c| = {cons:e}"));
    report.margin("conservation", 1e-10 - cons);

    if let Some(th) = config.framework.theta_star {
        let required = diameter(ens.nu())? / (ens.phi().min() * th.sin());
        let d0 = diameter(ens.theta())?;
        report.constant("kappa_trapping", required);
        if d0 <= th && ens.kappa() > required {
            let rep = particle::check_trapping(&traj, th);
            report.check("trapping", rep.pass, format!("max D(Θ) = {}, θ* = {th}", rep.max_diameter));
            report.margin("trapping", th - rep.max_diameter);
            let w = particle::frequency_window_constants(resp, &ens, 1e-9)?;
            let lambda1 = particle::decay_rate_lambda1(&ens, th, &w)?;
            report.constant("Lambda1", lambda1);
            let env = particle::check_frequency_envelopes(&traj, resp, &w, lambda1)?;
            report.check(
                "decay_envelopes",
                env.pass,
                format!("ratios {}, {}, {}", env.diameter_ratio, env.response_ratio, env.frequency_ratio),
            );
            if let Some(slope) = particle::fit_log_decay(&traj) {
                report.constant("Lambda1_slope", slope);
                report.check("decay_slope", slope <= -lambda1, format!("fitted slope {slope}, −Λ₁ = {}", -lambda1));
            }
        } else {
            report.check(
                "trapping_hypothesis",
                false,
                format!("needs D(Θ⁰) = {d0} ≤ θ* = {th} and κ = {} > {required}", ens.kappa()),
            );
        }
    }
    Ok(())
}

fn equivalence(config: &ExperimentConfig, resp: &FrequencyResponse, report: &mut RunReport, table: &mut Option<Table>) -> Step {
    let run = run_spec(config)?;
    let ens = ensemble(config, resp)?;
    let g = grid(&run)?;
    let a = particle::integrate(resp, &ens, g, run.scheme)?;
    let b = particle::integrate_second_order(resp, &ens, g, run.scheme)?;
    let mut t = Table::new(["time", "max_abs_diff"]);
    let mut worst: f64 = 0.0;
    for k in 0..a.len() {
        let d = a.states[k].iter().zip(&b.states[k]).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        worst = worst.max(d);
        t.push(vec![num(a.times[k]), num(d)]);
    }
    *table = Some(t);
    report.constant("max_abs_diff", worst);
    report.check("equivalence", worst <= 1e-6, format!("max_t ‖Θ_first − Θ_second‖_∞ = {worst:e}"));
    report.margin("equivalence", 1e-6 - worst);
    Ok(())
}

fn stability(config: &ExperimentConfig, resp: &FrequencyResponse, report: &mut RunReport, table: &mut Option<Table>) -> Step {
    let run = run_spec(config)?;
    let params = framework_params(config)?;
    let e = config.ensemble.as_ref().ok_or_else(|| missing("[ensemble]"))?;
    let tilde = config.ensemble_tilde.clone().unwrap_or_default();
    let e2 = EnsembleSpec {
        n: e.n,
        kappa: e.kappa,
        theta0: tilde.theta0.unwrap_or_else(|| e.theta0.clone()),
        nu: tilde.nu.unwrap_or_else(|| e.nu.clone()),
        phi: tilde.phi.unwrap_or_else(|| e.phi.clone()),
    };
    let a = build_ensemble(config, resp, e)?;
    let b = build_ensemble(config, resp, &e2)?;
    let cert = certify_framework_a(resp, &a, &b, &params)?;
    report.constant("kappa_required", cert.kappa_required);
    for c in &cert.conditions {
        report.check(c.name, c.holds, c.detail.clone());
    }
    if !cert.overall {
        return Ok(());
    }
    let p = NormExponent::new(run.p)?;
    let rep = particle::stability_experiment(resp, &a, &b, p, &params, grid(&run)?, run.scheme)?;
    let mut t = Table::new(["time", "dist_theta", "dist_omega"]);
    for k in 0..rep.times.len() {
        t.push(vec![num(rep.times[k]), num(rep.dist_theta[k]), num(rep.dist_omega[k])]);
    }
    *table = Some(t);
    report.constant("budget", rep.budget);
    report.constant("sup_half", rep.sup_half);
    report.constant("sup_full", rep.sup_full);
    if let Some(l3) = rep.lambda3_hat {
        report.constant("Lambda3_hat", l3);
    }
    report.check("bounded", rep.sup_full.is_finite(), format!("sup_t ‖Θ − Θ̃‖_p = {}", rep.sup_full));
    Ok(())
}

fn continuum_data(c: &ContinuumSpec) -> Result<ContinuumData, Failure> {
    Ok(ContinuumData::new(c.d, c.theta0.build(), c.nu.build(), c.phi.build(), c.kappa)?)
}

fn continuum_spec(config: &ExperimentConfig) -> Result<&ContinuumSpec, Failure> {
    config.continuum.as_ref().ok_or_else(|| missing("[continuum]"))
}

fn continuum_limit(
    config: &ExperimentConfig,
    resp: &FrequencyResponse,
    report: &mut RunReport,
    table: &mut Option<Table>,
) -> Step {
    let run = run_spec(config)?;
    let spec = continuum_spec(config)?;
    let data = continuum_data(spec)?;
    let params = framework_params(config)?;
    let cert = certify_framework_b(resp, &data, &params)?;
    report.constant("kappa_required", cert.certificate.kappa_required);
    for c in &cert.certificate.conditions {
        report.check(c.name, c.holds, c.detail.clone());
    }
    if !cert.certificate.overall {
        return Ok(());
    }
    let rows = continuum::continuum_limit_experiment(resp, &data, &params, &spec.levels, spec.level_ref, grid(&run)?, run.scheme)?;
    let mut t = Table::new(["level", "sup_t_Linf_err", "data_Linf_err", "ratio"]);
    for r in &rows {
        t.push(vec![r.level.to_string(), num(r.sup_error), num(r.data_error), r.ratio.map(num).unwrap_or_default()]);
    }
    *table = Some(t);
    for w in rows.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        report.check(
            &format!("decrease_{}_{}", a.level, b.level),
            b.sup_error <= 0.95 * a.sup_error,
            format!("e_{} = {:e}, e_{} = {:e}", a.level, a.sup_error, b.level, b.sup_error),
        );
    }
    let ratios: Vec<f64> = rows.iter().filter_map(|r| r.ratio).collect();
    if !ratios.is_empty() {
        let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().copied().fold(0.0, f64::max);
        report.constant("ratio_min", lo);
        report.constant("ratio_max", hi);
        report.check("ratio_bounded", hi <= 2.0 * lo, format!("e_N / data error in [{lo}, {hi}]"));
    }
    Ok(())
}

fn picard(config: &ExperimentConfig, resp: &FrequencyResponse, report: &mut RunReport, table: &mut Option<Table>) -> Step {
    let spec = continuum_spec(config)?;
    let data = continuum_data(spec)?;
    let partition = dyadic_partition(spec.d, spec.level)?;
    let rep = continuum::picard_local_solve(resp, &data, &partition, spec.picard_tol, spec.picard_max_iter, spec.picard_steps)?;
    report.constant("zeta", rep.zeta);
    report.constant("iterations", rep.iterations as f64);
    report.constant("final_residual", rep.final_residual);
    let mut t = Table::new(["iteration", "sup_distance", "ratio"]);
    for (k, d) in rep.distances.iter().enumerate() {
        let ratio = if k == 0 { String::new() } else { num(rep.ratios[k - 1]) };
        t.push(vec![(k + 1).to_string(), num(*d), ratio]);
    }
    *table = Some(t);
    let worst = rep.ratios.iter().copied().fold(0.0, f64::max);
    report.constant("max_ratio", worst);
    report.check("contraction", worst <= 0.55, format!("max successive ratio {worst}"));
    report.margin("contraction", 0.55 - worst);
    Ok(())
}

fn contraction(config: &ExperimentConfig, resp: &FrequencyResponse, report: &mut RunReport, table: &mut Option<Table>) -> Step {
    let run = run_spec(config)?;
    let spec = continuum_spec(config)?;
    let data = continuum_data(spec)?;
    let tilde = spec.theta0_tilde.as_ref().ok_or_else(|| missing("continuum.theta0_tilde"))?.build();
    let th = fw(config.framework.theta_star, "theta_star")?;
    let rep = continuum::contraction_check(resp, &data, &tilde, th, spec.level, grid(&run)?, run.scheme)?;
    let mut t = Table::new(["time", "dist_inf", "dist_l1", "production", "production_integral"]);
    for k in 0..rep.times.len() {
        t.push(vec![
            num(rep.times[k]),
            num(rep.dist_inf[k]),
            num(rep.dist_l1[k]),
            num(rep.production[k]),
            num(rep.production_integral[k]),
        ]);
    }
    *table = Some(t);
    report.constant("initial_distance", rep.initial_distance);
    report.check(
        "contraction",
        rep.max_violation <= 1e-8,
        format!("max ‖Δ(t)‖_∞ + ∫P − ‖Δ⁰‖_∞ = {:e}", rep.max_violation),
    );
    report.check("production", rep.min_production >= -1e-12, format!("min P = {:e}", rep.min_production));
    report.margin("contraction", 1e-8 - rep.max_violation);
    Ok(())
}

fn l1_envelope(config: &ExperimentConfig, resp: &FrequencyResponse, report: &mut RunReport, table: &mut Option<Table>) -> Step {
    let run = run_spec(config)?;
    let spec = continuum_spec(config)?;
    let data = continuum_data(spec)?;
    let b_phi = spec.b_phi.unwrap_or_else(|| data.phi.sample_extrema(data.d).1);
    let rep = continuum::finite_time_l1_experiment(resp, &data, spec.level, spec.level_ref, b_phi, grid(&run)?, run.scheme)?;
    let mut t = Table::new(["time", "lhs", "rhs"]);
    for k in 0..rep.times.len() {
        t.push(vec![num(rep.times[k]), num(rep.lhs[k]), num(rep.rhs[k])]);
    }
    *table = Some(t);
    report.constant("a", rep.a);
    report.constant("b", rep.b);
    report.check(
        "envelope",
        rep.pass,
        format!("min margin for t > 0 = {:e}, gap at t = 0 = {:e}", rep.min_margin, rep.initial_gap),
    );
    report.margin("envelope", rep.min_margin);
    Ok(())
}

fn kinetic_setup(config: &ExperimentConfig) -> Result<(&KineticSpec, KineticParams), Failure> {
    let k = config.kinetic.as_ref().ok_or_else(|| missing("[kinetic]"))?;
    let f = &config.framework;
    let params = KineticParams {
        theta_star: fw(f.theta_star, "theta_star")?,
        nu_l: fw(f.nu_l, "nu_l")?,
        nu_r: fw(f.nu_r, "nu_r")?,
        kappa: k.kappa,
    };
    Ok((k, params))
}

fn kinetic_certificate(
    resp: &FrequencyResponse,
    params: &KineticParams,
    specs: &[&gk_core::kinetic::Rho0Spec],
    report: &mut RunReport,
) -> Result<bool, Failure> {
    let cert = kinetic::certify_kinetic(resp, params, specs)?;
    report.constant("kappa_required", cert.kappa_required);
    for c in &cert.conditions {
        report.check(c.name, c.holds, c.detail.clone());
    }
    Ok(cert.overall)
}

fn mean_field(config: &ExperimentConfig, resp: &FrequencyResponse, report: &mut RunReport, table: &mut Option<Table>) -> Step {
    let run = run_spec(config)?;
    let (k, params) = kinetic_setup(config)?;
    if !kinetic_certificate(resp, &params, &[&k.rho0], report)? {
        return Ok(());
    }
    let rows = kinetic::mean_field_cauchy_experiment(resp, &k.rho0, &params, &k.n_list, k.q, grid(&run)?, run.scheme, k.seed)?;
    let mut t = Table::new(["N_pair", "t", "Wq", "ratio"]);
    for r in &rows {
        let pair = format!("{}-{}", r.n, r.n2);
        for (tt, w) in r.times.iter().zip(&r.distances) {
            let ratio = if r.initial_distance > 0.0 { num(w / r.initial_distance) } else { String::new() };
            t.push(vec![pair.clone(), num(*tt), num(*w), ratio]);
        }
    }
    *table = Some(t);
    for r in &rows {
        report.constant(&format!("sup_Wq_{}_{}", r.n, r.n2), r.sup_distance);
        if let Some(ratio) = r.ratio {
            report.check(&format!("ratio_{}_{}", r.n, r.n2), ratio <= 10.0, format!("sup_t W / W_0 = {ratio}"));
        }
    }
    for w in rows.windows(2) {
        report.check(
            &format!("decrease_{}_{}", w[0].n2, w[1].n2),
            w[1].sup_distance < w[0].sup_distance,
            format!("{:e} then {:e}", w[0].sup_distance, w[1].sup_distance),
        );
    }
    Ok(())
}

fn kinetic_stability(
    config: &ExperimentConfig,
    resp: &FrequencyResponse,
    report: &mut RunReport,
    table: &mut Option<Table>,
) -> Step {
    let run = run_spec(config)?;
    let (k, params) = kinetic_setup(config)?;
    let shift = k.theta_shift.ok_or_else(|| missing("kinetic.theta_shift"))?;
    let tilde = k.rho0.theta_shifted(shift);
    if !kinetic_certificate(resp, &params, &[&k.rho0, &tilde], report)? {
        return Ok(());
    }
    let rep = kinetic::kinetic_stability_experiment(resp, &k.rho0, &tilde, &params, k.n, k.q, grid(&run)?, run.scheme, k.seed)?;
    let mut t = Table::new(["t", "Wq", "ratio"]);
    for (tt, w) in rep.times.iter().zip(&rep.distances) {
        let ratio = if rep.initial_distance > 0.0 { num(w / rep.initial_distance) } else { String::new() };
        t.push(vec![num(*tt), num(*w), ratio]);
    }
    *table = Some(t);
    report.constant("initial_distance", rep.initial_distance);
    report.constant("sup_full", rep.sup_full);
    if let Some(l4) = rep.lambda4_hat {
        report.constant("Lambda4_hat", l4);
    }
    report.check("bounded", rep.sup_full.is_finite(), format!("sup_t W_q = {}", rep.sup_full));
    Ok(())
}

fn weak_form(config: &ExperimentConfig, resp: &FrequencyResponse, report: &mut RunReport, table: &mut Option<Table>) -> Step {
    let run = run_spec(config)?;
    let (k, params) = kinetic_setup(config)?;
    if !kinetic_certificate(resp, &params, &[&k.rho0], report)? {
        return Ok(());
    }
    let rho0 = kinetic::sample_initial(&k.rho0, &params, k.n, k.seed)?;
    let traj = kinetic::evolve_empirical(resp, &rho0, &params, grid(&run)?, run.scheme)?;
    let last = traj.times.len() - 1;
    let mut t = Table::new(["test", "t", "residual"]);
    for (name, test) in [("1", BasicTest::One), ("theta", BasicTest::Theta), ("nu", BasicTest::Nu), ("sin_theta", BasicTest::SinTheta)] {
        let r = kinetic::weak_form_residual(&traj, resp, params.kappa, &test, last)?;
        report.constant(&format!("residual_{name}"), r);
        report.check(&format!("finite_{name}"), r.is_finite(), format!("residual {r:e}"));
        t.push(vec![name.to_string(), num(traj.times[last]), num(r)]);
    }
    *table = Some(t);
    Ok(())
}

/// Points file rows: "theta nu weight_num weight_den". Blank lines and
/// lines starting with '#' are skipped.
pub fn read_points(text: &str) -> Result<(Vec<(f64, f64)>, Vec<(u64, u64)>), String> {
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let l = line.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 4 {
            return Err(format!("line {}: expected 4 fields, found {}", i + 1, f.len()));
        }
        let bad = |t: &str| format!("line {}: cannot parse '{t}'", i + 1);
        let th: f64 = f[0].parse().map_err(|_| bad(f[0]))?;
        let nu: f64 = f[1].parse().map_err(|_| bad(f[1]))?;
        let wn: u64 = f[2].parse().map_err(|_| bad(f[2]))?;
        let wd: u64 = f[3].parse().map_err(|_| bad(f[3]))?;
        points.push((th, nu));
        weights.push((wn, wd));
    }
    Ok((points, weights))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for x in [0.0, 1.0, -2.5, 1e-300, 3.0e20, 0.1, 1.0 / 3.0, f64::MIN_POSITIVE] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn points_file() {
        let (p, w) = read_points("# a\n0.1 0.2 1 2\n\n0.3 0.4 1 2\n").unwrap();
        assert_eq!(p, vec![(0.1, 0.2), (0.3, 0.4)]);
        assert_eq!(w, vec![(1, 2), (1, 2)]);
        assert!(read_points("0.1 0.2 1").is_err());
    }

    #[test]
    fn linspace_and_uniform() {
        assert_eq!(realize_vector(&VectorSpec::Linspace { lo: 0.0, hi: 1.0 }, 3), vec![0.0, 0.5, 1.0]);
        let a = realize_vector(&VectorSpec::Uniform { lo: 0.0, hi: 1.0, seed: 3 }, 5);
        assert_eq!(a, realize_vector(&VectorSpec::Uniform { lo: 0.0, hi: 1.0, seed: 3 }, 5));
        assert!(a.iter().all(|&x| (0.0..1.0).contains(&x)));
    }
}
