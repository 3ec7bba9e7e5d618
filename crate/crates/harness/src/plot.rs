//! Two-column series extracted from run CSVs for external plotting.

use std::fmt;

use crate::run::{num, Table};

/// Floor applied by `log_D_omega`; ln of the smallest subnormal is about −744.4.
pub const LOG_FLOOR: f64 = -745.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlotError {
    UnknownSelector { selector: String, available: Vec<String> },
    BadValue { column: String, row: usize, text: String },
}

impl fmt::Display for PlotError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::UnknownSelector { selector, available } => {
                write!(f, "unknown series '{selector}'; available: {}", available.join(", "))
            }
            Self::BadValue { column, row, text } => write!(f, "row {row}, column {column}: cannot parse '{text}'"),
        }
    }
}

impl std::error::Error for PlotError {}

/// Reads a CSV written by `write_csv`, skipping `#` comment lines.
pub fn read_table(text: &str) -> Result<Table, csv::Error> {
    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
    let columns = r.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec?.iter().map(String::from).collect());
    }
    Ok(Table { columns, rows })
}

fn time_column(t: &Table) -> Option<usize> {
    t.column("time").or_else(|| t.column("t"))
}

/// Series that `emit_plotdata` can produce from `t`.
pub fn available_series(t: &Table) -> Vec<String> {
    let mut out = Vec::new();
    if let Some(tc) = time_column(t) {
        if t.column("D_omega").is_some() {
            out.push("log_D_omega".to_string());
        }
        for (i, c) in t.columns.iter().enumerate() {
            if i != tc && c != "N_pair" {
                out.push(c.clone());
            }
        }
    }
    if t.column("N_pair").is_some() && t.column("Wq").is_some() {
        out.push("wq_vs_N".to_string());
    }
    out
}

fn parse(t: &Table, col: usize, row: usize) -> Result<f64, PlotError> {
    let text = &t.rows[row][col];
    text.parse().map_err(|_| PlotError::BadValue { column: t.columns[col].clone(), row, text: text.clone() })
}

/// Extracts `selector` as a two-column table: (t, column) for a time series,
/// (t, log_D_omega) with ln 0 clipped at −745, or (N, sup_t_Wq) from a
/// mean-field table.
pub fn emit_plotdata(t: &Table, selector: &str) -> Result<Table, PlotError> {
    let available = available_series(t);
    if !available.iter().any(|s| s == selector) {
        return Err(PlotError::UnknownSelector { selector: selector.to_string(), available });
    }
    if selector == "wq_vs_N" {
        let (pc, wc) = (t.column("N_pair").expect("listed"), t.column("Wq").expect("listed"));
        let mut order: Vec<String> = Vec::new();
        let mut sups: Vec<f64> = Vec::new();
        for row in 0..t.rows.len() {
            let n = t.rows[row][pc].split('-').next().unwrap_or("").to_string();
            let w = parse(t, wc, row)?;
            match order.iter().position(|o| *o == n) {
                Some(i) => sups[i] = sups[i].max(w),
                None => {
                    order.push(n);
                    sups.push(w);
                }
            }
        }
        let mut out = Table::new(["N", "sup_t_Wq"]);
        for (n, s) in order.into_iter().zip(sups) {
            out.push(vec![n, num(s)]);
        }
        return Ok(out);
    }
    let tc = time_column(t).expect("listed");
    let (col, log) = match selector {
        "log_D_omega" => (t.column("D_omega").expect("listed"), true),
        name => (t.column(name).expect("listed"), false),
    };
    let mut out = Table::new(["t", selector]);
    for row in 0..t.rows.len() {
        let x = parse(t, tc, row)?;
        let mut y = parse(t, col, row)?;
        if log {
            y = y.ln().max(LOG_FLOOR);
        }
        out.push(vec![num(x), num(y)]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim() -> Table {
        read_table("# gk\ntime,theta_0,D_theta,D_omega,nu_c\n0,0.1,0.2,1,0\n1,0.1,0.2,0,0\n").unwrap()
    }

    #[test]
    fn d_omega_series() {
        let out = emit_plotdata(&sim(), "D_omega").unwrap();
        assert_eq!(out.columns, vec!["t", "D_omega"]);
        assert_eq!(out.rows, vec![vec!["0", "1"], vec!["1", "0"]]);
    }

    #[test]
    fn log_series_is_clipped() {
        let out = emit_plotdata(&sim(), "log_D_omega").unwrap();
        assert_eq!(out.rows[0][1], "0");
        assert_eq!(out.rows[1][1].parse::<f64>().unwrap(), -745.0);
    }

    #[test]
    fn wq_vs_n_takes_the_sup_per_pair() {
        let t = read_table("N_pair,t,Wq,ratio\n50-100,0,0.3,1\n50-100,1,0.5,1\n100-200,0,0.2,1\n").unwrap();
        let out = emit_plotdata(&t, "wq_vs_N").unwrap();
        assert_eq!(out.columns, vec!["N", "sup_t_Wq"]);
        assert_eq!(out.rows, vec![vec!["50", "0.5"], vec!["100", "0.2"]]);
    }

    #[test]
    fn unknown_selector_lists_the_series() {
        let e = emit_plotdata(&sim(), "nope").unwrap_err().to_string();
        assert!(e.contains("D_omega") && e.contains("log_D_omega") && e.contains("theta_0"), "{e}");
    }
}
