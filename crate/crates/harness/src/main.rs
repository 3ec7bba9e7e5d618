use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gk_core::kinetic::{self, EmpiricalMeasure};
use gk_harness::config::{load_config, ExperimentKind};
use gk_harness::plot::{emit_plotdata, read_table};
use gk_harness::run::{self, read_points, run_experiment, write_csv, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_PASS};
use gk_harness::suite;

#[derive(Parser)]
#[command(name = "gk", version, about = "Generalized Kuramoto experiments and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// CSV output; overrides output.path in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Interval constants of F and G on [a_G, b_G].
    Constants(Common),
    /// Integrate one ensemble and write its trajectory.
    Simulate(Common),
    /// First- against second-order trajectories.
    Equivalence(Common),
    /// Two nearby ensembles compared in ℓp.
    Stability {
        #[command(flatten)]
        common: Common,
        /// Norm exponent: a number ≥ 1 or "inf".
        #[arg(long)]
        p: Option<String>,
    },
    /// Lattice solutions against a fine reference.
    ContinuumLimit {
        #[command(flatten)]
        common: Common,
        /// Levels as "3..8" or "3,4,5".
        #[arg(long)]
        levels: Option<String>,
        /// Reference level.
        #[arg(long = "ref")]
        level_ref: Option<usize>,
    },
    /// Local Picard iteration on one time slab.
    Picard(Common),
    /// L∞ contraction of two continuum solutions.
    Contraction(Common),
    /// Nested empirical measures in Wasserstein distance.
    MeanField(Common),
    /// Wasserstein distance between two weighted point files.
    Wasserstein {
        /// Rows "theta nu weight_num weight_den".
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = 2.0)]
        q: f64,
    },
    /// Empirical solutions from two initial densities.
    KineticStability(Common),
    /// Any experiment kind named by the config's `experiment` key.
    Run(Common),
    /// Run the acceptance suite.
    Check {
        /// Criterion number or name; all when omitted.
        #[arg(long)]
        only: Option<String>,
    },
    /// Extract one series from a run CSV.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        selector: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { EXIT_PASS as u8 });
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("{msg}");
        return ExitCode::from(EXIT_CONFIG as u8);
    }
    ExitCode::from(dispatch(cli.command) as u8)
}

fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("GK_THREADS") else { return Ok(()) };
    let n: usize = v.trim().parse().map_err(|_| format!("GK_THREADS must be a positive integer, got '{v}'"))?;
    if n == 0 {
        return Err("GK_THREADS must be at least 1".into());
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn dispatch(cmd: Command) -> i32 {
    match cmd {
        Command::Constants(c) => experiment(c, Some(ExperimentKind::Constants), |_| Ok(())),
        Command::Simulate(c) => experiment(c, Some(ExperimentKind::Simulate), |_| Ok(())),
        Command::Equivalence(c) => experiment(c, Some(ExperimentKind::Equivalence), |_| Ok(())),
        Command::Stability { common, p } => experiment(common, Some(ExperimentKind::Stability), |cfg| {
            if let Some(p) = &p {
                let v = if p == "inf" { f64::INFINITY } else { p.parse().map_err(|_| format!("--p: cannot parse '{p}'"))? };
                if !(v >= 1.0) {
                    return Err(format!("--p must be ≥ 1, got {p}"));
                }
                if let Some(run) = cfg.run.as_mut() {
                    run.p = v;
                }
            }
            Ok(())
        }),
        Command::ContinuumLimit { common, levels, level_ref } => {
            experiment(common, Some(ExperimentKind::ContinuumLimit), |cfg| {
                let Some(c) = cfg.continuum.as_mut() else { return Ok(()) };
                if let Some(l) = &levels {
                    c.levels = parse_levels(l)?;
                }
                if let Some(r) = level_ref {
                    c.level_ref = r;
                }
                if let Some(&bad) = c.levels.iter().find(|&&l| l > c.level_ref) {
                    return Err(format!("level {bad} exceeds the reference level {}", c.level_ref));
                }
                Ok(())
            })
        }
        Command::Picard(c) => experiment(c, Some(ExperimentKind::Picard), |_| Ok(())),
        Command::Contraction(c) => experiment(c, Some(ExperimentKind::Contraction), |_| Ok(())),
        Command::MeanField(c) => experiment(c, Some(ExperimentKind::MeanField), |_| Ok(())),
        Command::KineticStability(c) => experiment(c, Some(ExperimentKind::KineticStability), |_| Ok(())),
        Command::Run(c) => experiment(c, None, |_| Ok(())),
        Command::Wasserstein { a, b, q } => wasserstein(&a, &b, q),
        Command::Check { only } => check(only.as_deref()),
        Command::Plot { input, selector, out } => plot(&input, &selector, out.as_deref()),
    }
}

fn parse_levels(s: &str) -> Result<Vec<usize>, String> {
    let bad = || format!("--levels: expected \"a..b\" or a comma list, got '{s}'");
    if let Some((a, b)) = s.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(|t| t.trim().parse().map_err(|_| bad())).collect()
}

fn experiment(
    common: Common,
    kind: Option<ExperimentKind>,
    adjust: impl FnOnce(&mut gk_harness::ExperimentConfig) -> Result<(), String>,
) -> i32 {
    let mut config = match load_config(&common.config, kind) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{}: invalid config", common.config.display());
            eprintln!("{e}");
            return EXIT_CONFIG;
        }
    };
    if let Err(msg) = adjust(&mut config) {
        eprintln!("{msg}");
        return EXIT_CONFIG;
    }
    let report = run_experiment(&config, common.out.as_deref());
    println!("{report}");
    if config.kind == ExperimentKind::Picard && report.output.is_none() {
        if let Some(t) = &report.table {
            println!("  {}", t.columns.join(", "));
            for r in &t.rows {
                println!("  {}", r.join(", "));
            }
        }
    }
    report.exit_code()
}

fn wasserstein(a: &Path, b: &Path, q: f64) -> i32 {
    let load = |p: &Path| -> Result<EmpiricalMeasure, (i32, String)> {
        let text = std::fs::read_to_string(p).map_err(|e| (EXIT_CONFIG, format!("{}: {e}", p.display())))?;
        let (points, weights) = read_points(&text).map_err(|e| (EXIT_CONFIG, format!("{}: {e}", p.display())))?;
        EmpiricalMeasure::from_fractions(points, &weights).map_err(|e| (EXIT_CONFIG, format!("{}: {e}", p.display())))
    };
    let result = load(a).and_then(|mu| {
        let nu = load(b)?;
        kinetic::wasserstein(&mu, &nu, q).map_err(|e| {
            let code = if matches!(e, gk_core::GkError::Domain(_)) { EXIT_CONFIG } else { EXIT_NUMERIC };
            (code, e.to_string())
        })
    });
    match result {
        Ok((w, plan)) => {
            println!("W_{q} = {}", run::num(w));
            println!("transport cost = {}", run::num(plan.cost));
            EXIT_PASS
        }
        Err((code, msg)) => {
            eprintln!("{msg}");
            code
        }
    }
}

fn check(only: Option<&str>) -> i32 {
    let ids: Vec<u8> = match only {
        None => suite::CRITERIA.iter().map(|c| c.0).collect(),
        Some(s) => match suite::CRITERIA.iter().find(|c| c.1 == s || s.parse::<u8>().ok() == Some(c.0)) {
            Some(c) => vec![c.0],
            None => {
                let names: Vec<String> = suite::CRITERIA.iter().map(|c| format!("{} {}", c.0, c.1)).collect();
                eprintln!("unknown criterion '{s}'; available: {}", names.join(", "));
                return EXIT_CONFIG;
            }
        },
    };
    let mut all = true;
    for id in ids {
        let outcome = suite::run_criterion(id);
        println!("{outcome}");
        all &= outcome.pass;
    }
    if all {
        EXIT_PASS
    } else {
        EXIT_CHECK
    }
}

fn plot(input: &Path, selector: &str, out: Option<&Path>) -> i32 {
    let text = match std::fs::read_to_string(input) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("{}: {e}", input.display());
            return EXIT_CONFIG;
        }
    };
    let table = match read_table(&text) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("{}: {e}", input.display());
            return EXIT_CONFIG;
        }
    };
    let series = match emit_plotdata(&table, selector) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_CONFIG;
        }
    };
    let comments: Vec<String> = text.lines().take_while(|l| l.starts_with('#')).map(|l| l[1..].trim().to_string()).collect();
    match out {
        Some(p) => match write_csv(p, &comments, &series) {
            Ok(()) => EXIT_PASS,
            Err(e) => {
                eprintln!("{}: {e}", p.display());
                EXIT_CONFIG
            }
        },
        None => {
            println!("{}", series.columns.join(","));
            for r in &series.rows {
                println!("{}", r.join(","));
            }
            EXIT_PASS
        }
    }
}
