//! Equilibria over a grid of attack/defense unit costs.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{
    build_payoffs, solve_msne, support_digest, EquilibriumSolution, LossTable, SolverOptions,
    DEFAULT_SUPPORT_THRESHOLD,
};

pub const CSV_VERSION_LINE: &str = "# cyberlqr sweep v1";

pub const CSV_COLUMNS: [&str; 16] = [
    "gamma_a",
    "gamma_d",
    "e_a",
    "e_d",
    "e_loss",
    "e_cost_a",
    "e_cost_d",
    "frac_e_a",
    "frac_e_d",
    "frac_e_loss",
    "frac_e_cost_a",
    "frac_e_cost_d",
    "attacker_support",
    "defender_support",
    "epsilon",
    "error",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    GammaA,
    GammaD,
}

/// Parses `"0.1,0.2,0.5"` or `"lo:hi:count"` (inclusive, evenly spaced).
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let num = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::Parse(format!("grid {text:?}: {s:?} is not a number")))
    };
    let parts: Vec<&str> = text.split(':').collect();
    match parts.as_slice() {
        [lo, hi, count] => {
            let (lo, hi) = (num(lo)?, num(hi)?);
            let count: usize = count
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("grid {text:?}: bad point count")))?;
            match count {
                0 => Err(Error::validation("grid", "needs at least one point")),
                1 => Ok(vec![lo]),
                _ => {
                    let step = (hi - lo) / (count - 1) as f64;
                    Ok((0..count)
                        .map(|k| if k == count - 1 { hi } else { lo + step * k as f64 })
                        .collect())
                }
            }
        }
        [_] => text.split(',').map(num).collect(),
        _ => Err(Error::Parse(format!("grid {text:?}: expected a comma list or lo:hi:count"))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    gamma_a_values: Vec<f64>,
    gamma_d_values: Vec<f64>,
}

impl SweepSpec {
    pub fn new(gamma_a_values: Vec<f64>, gamma_d_values: Vec<f64>) -> Result<Self> {
        for (name, values) in [("gamma_a", &gamma_a_values), ("gamma_d", &gamma_d_values)] {
            if values.is_empty() {
                return Err(Error::validation(name, "grid is empty"));
            }
            if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(Error::validation(name, format!("grid value {v} is not a non-negative number")));
            }
            if values.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::validation(name, "grid must be strictly ascending"));
            }
        }
        Ok(SweepSpec {
            gamma_a_values,
            gamma_d_values,
        })
    }

    pub fn gamma_a_values(&self) -> &[f64] {
        &self.gamma_a_values
    }

    pub fn gamma_d_values(&self) -> &[f64] {
        &self.gamma_d_values
    }

    /// The axis held at a single value, if exactly one is.
    pub fn fixed_axis(&self) -> Option<Axis> {
        match (self.gamma_a_values.len(), self.gamma_d_values.len()) {
            (1, 1) => None,
            (1, _) => Some(Axis::GammaA),
            (_, 1) => Some(Axis::GammaD),
            _ => None,
        }
    }

    /// Grid points, γ_a outermost.
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.gamma_a_values
            .iter()
            .flat_map(|&a| self.gamma_d_values.iter().map(move |&d| (a, d)))
            .collect()
    }
}

/// One grid point. Fractional fields are the absolute ones divided by
/// `J_lqr`, in percent. On failure the numeric fields are NaN and `error`
/// says why.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub gamma_a: f64,
    pub gamma_d: f64,
    pub e_a: f64,
    pub e_d: f64,
    pub e_loss: f64,
    pub e_cost_a: f64,
    pub e_cost_d: f64,
    pub frac_e_a: f64,
    pub frac_e_d: f64,
    pub frac_e_loss: f64,
    pub frac_e_cost_a: f64,
    pub frac_e_cost_d: f64,
    pub attacker_support: String,
    pub defender_support: String,
    pub epsilon: f64,
    pub error: Option<String>,
}

impl SweepRecord {
    pub fn from_solution(gamma_a: f64, gamma_d: f64, sol: &EquilibriumSolution, j_lqr: f64) -> Result<Self> {
        let frac = |v: f64| v / j_lqr * 100.0;
        Ok(SweepRecord {
            gamma_a,
            gamma_d,
            e_a: sol.f_star,
            e_d: sol.g_star,
            e_loss: sol.expected_loss,
            e_cost_a: sol.expected_cost_attacker,
            e_cost_d: sol.expected_cost_defender,
            frac_e_a: frac(sol.f_star),
            frac_e_d: frac(sol.g_star),
            frac_e_loss: frac(sol.expected_loss),
            frac_e_cost_a: frac(sol.expected_cost_attacker),
            frac_e_cost_d: frac(sol.expected_cost_defender),
            attacker_support: support_digest(&sol.r_star, DEFAULT_SUPPORT_THRESHOLD)?,
            defender_support: support_digest(&sol.d_star, DEFAULT_SUPPORT_THRESHOLD)?,
            epsilon: sol.epsilon,
            error: None,
        })
    }

    pub fn failed(gamma_a: f64, gamma_d: f64, error: &Error) -> Self {
        let nan = f64::NAN;
        SweepRecord {
            gamma_a,
            gamma_d,
            e_a: nan,
            e_d: nan,
            e_loss: nan,
            e_cost_a: nan,
            e_cost_d: nan,
            frac_e_a: nan,
            frac_e_d: nan,
            frac_e_loss: nan,
            frac_e_cost_a: nan,
            frac_e_cost_d: nan,
            attacker_support: String::new(),
            defender_support: String::new(),
            epsilon: match error {
                Error::NonConvergence { best_epsilon, .. } => *best_epsilon,
                _ => nan,
            },
            error: Some(error.to_string()),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }

    fn csv_fields(&self) -> Vec<String> {
        let num = |v: f64| if v.is_nan() { String::new() } else { format!("{v:e}") };
        vec![
            num(self.gamma_a),
            num(self.gamma_d),
            num(self.e_a),
            num(self.e_d),
            num(self.e_loss),
            num(self.e_cost_a),
            num(self.e_cost_d),
            num(self.frac_e_a),
            num(self.frac_e_d),
            num(self.frac_e_loss),
            num(self.frac_e_cost_a),
            num(self.frac_e_cost_d),
            self.attacker_support.clone(),
            self.defender_support.clone(),
            num(self.epsilon),
            self.error.clone().unwrap_or_default(),
        ]
    }
}

/// Solves one game at `(gamma_a, gamma_d)`.
pub fn solve_point(table: &LossTable, gamma_a: f64, gamma_d: f64, opts: &SolverOptions) -> Result<EquilibriumSolution> {
    let payoffs = build_payoffs(table, gamma_a, gamma_d)?;
    solve_msne(&payoffs, opts)
}

/// Every grid point solved independently; failures are recorded, not fatal.
pub fn run_sweep(table: &LossTable, spec: &SweepSpec, opts: &SolverOptions) -> Result<Vec<SweepRecord>> {
    opts.validate()?;
    spec.points()
        .par_iter()
        .map(|&(ga, gd)| match solve_point(table, ga, gd, opts) {
            Ok(sol) => SweepRecord::from_solution(ga, gd, &sol, table.j_lqr),
            Err(e) => {
                log::warn!("gamma_a = {ga}, gamma_d = {gd}: {e}");
                Ok(SweepRecord::failed(ga, gd, &e))
            }
        })
        .collect()
}

/// Writes the versioned CSV: two comment lines (version and the effective
/// configuration as one-line JSON), the fixed header row, then one row per
/// record.
pub fn write_csv<W: Write>(out: W, records: &[SweepRecord], config: &serde_json::Value) -> Result<()> {
    let mut out = out;
    writeln!(out, "{CSV_VERSION_LINE}")?;
    writeln!(out, "# config: {}", serde_json::to_string(config)?)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS).map_err(csv_error)?;
    for r in records {
        w.write_record(r.csv_fields()).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse(format!("{other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> LossTable {
        LossTable::from_deltas(2.0, &[9.0, 4.0, 5.0, 0.0]).unwrap()
    }

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("0.1,0.2, 0.5").unwrap(), vec![0.1, 0.2, 0.5]);
        assert_eq!(parse_grid("0:1:5").unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(parse_grid("3:9:1").unwrap(), vec![3.0]);
        assert!(parse_grid("0:1").is_err());
        assert!(parse_grid("a,b").is_err());
        assert!(parse_grid("0:1:0").is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(SweepSpec::new(vec![0.0, 1.0], vec![0.5]).is_ok());
        assert!(SweepSpec::new(vec![], vec![0.5]).is_err());
        assert!(SweepSpec::new(vec![1.0, 0.0], vec![0.5]).is_err());
        assert!(SweepSpec::new(vec![1.0, 1.0], vec![0.5]).is_err());
        assert!(SweepSpec::new(vec![-1.0], vec![0.5]).is_err());
        let s = SweepSpec::new(vec![0.0, 1.0], vec![0.5]).unwrap();
        assert_eq!(s.fixed_axis(), Some(Axis::GammaD));
        assert_eq!(s.points(), vec![(0.0, 0.5), (1.0, 0.5)]);
    }

    #[test]
    fn records_satisfy_identities() {
        let t = table();
        let spec = SweepSpec::new(parse_grid("0:6:4").unwrap(), parse_grid("0:3:4").unwrap()).unwrap();
        let records = run_sweep(&t, &spec, &SolverOptions::default()).unwrap();
        assert_eq!(records.len(), 16);
        for r in &records {
            assert!(r.is_ok(), "{r:?}");
            let scale = 1.0 + r.e_loss.abs();
            assert!((r.e_a - (r.e_loss - r.e_cost_a)).abs() <= 1e-8 * scale);
            assert!((r.e_d - (-r.e_loss - r.e_cost_d)).abs() <= 1e-8 * scale);
            assert_eq!(r.frac_e_loss, r.e_loss / t.j_lqr * 100.0);
        }
    }

    #[test]
    fn single_point_matches_solve() {
        let t = table();
        let opts = SolverOptions::default();
        let spec = SweepSpec::new(vec![0.7], vec![1.1]).unwrap();
        let records = run_sweep(&t, &spec, &opts).unwrap();
        let sol = solve_point(&t, 0.7, 1.1, &opts).unwrap();
        assert_eq!(records[0], SweepRecord::from_solution(0.7, 1.1, &sol, t.j_lqr).unwrap());
    }

    #[test]
    fn csv_layout() {
        let t = table();
        let spec = SweepSpec::new(vec![0.0, 1.0], vec![0.5]).unwrap();
        let mut records = run_sweep(&t, &spec, &SolverOptions::default()).unwrap();
        records.push(SweepRecord::failed(2.0, 0.5, &Error::NonConvergence { best_epsilon: 0.5, tolerance: 1e-6 }));
        let mut buf = Vec::new();
        write_csv(&mut buf, &records, &serde_json::json!({"seed": 0})).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CSV_VERSION_LINE);
        assert_eq!(lines[1], "# config: {\"seed\":0}");
        assert_eq!(lines[2], CSV_COLUMNS.join(","));
        assert_eq!(lines.len(), 6);
        assert!(lines[5].starts_with("2e0,5e-1,,"));
        assert!(lines[5].contains("\"equilibrium solver did not converge"));
    }
}
