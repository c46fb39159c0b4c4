use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::Context;
use cyberlqr_core::game::{dominant_support, load_or_build_table, LossStatus, DEFAULT_SUPPORT_THRESHOLD};
use cyberlqr_core::model::load_graph_spec;
use cyberlqr_core::pattern::DEFAULT_MAX_NODES;
use cyberlqr_core::sweep::{parse_grid, solve_point};
use cyberlqr_core::{
    build_payoffs, build_synthetic_network, load_system, run_sweep, save_system, support_enumeration_oracle, write_csv,
    EquilibriumSolution, GraphSpec, LossTable, MixedStrategy, SolverOptions, SweepSpec, TableConfig,
};
use serde_json::json;

use crate::config::FileConfig;
use crate::{BuildTableArgs, Format, OracleArgs, SolveArgs, SolverFlags, SweepArgs, SynthArgs};

/// Exit status when the solver disagrees with exhaustive enumeration.
const ORACLE_MISMATCH: u8 = 7;

fn table_config(args: &BuildTableArgs, file: &FileConfig) -> anyhow::Result<TableConfig> {
    let mut optimizer = file.optimizer.clone();
    if let Some(v) = args.grad_tol {
        optimizer.grad_tol = v;
    }
    if let Some(v) = args.max_iters {
        optimizer.max_iters = v;
    }
    optimizer.validate()?;
    let intact = args.self_links_intact || file.table.self_links_intact.unwrap_or(false);
    Ok(TableConfig {
        self_links_disabled: !intact,
        unstable_policy: args.unstable_policy.or(file.table.unstable_policy).unwrap_or_default(),
        optimizer,
        max_nodes: args.max_nodes.or(file.table.max_nodes).unwrap_or(DEFAULT_MAX_NODES),
    })
}

fn solver_options(flags: &SolverFlags, file: &FileConfig) -> anyhow::Result<SolverOptions> {
    let mut opts = file.solver.clone();
    if let Some(v) = flags.restarts {
        opts.restarts = v;
    }
    if let Some(v) = flags.eps_tol {
        opts.eps_tol = v;
    }
    if let Some(v) = flags.seed {
        opts.seed = v;
    }
    opts.validate()?;
    Ok(opts)
}

fn load_table(path: &Path) -> anyhow::Result<LossTable> {
    LossTable::load(path).with_context(|| format!("loading table {}", path.display()))
}

fn table_summary(table: &LossTable) -> serde_json::Value {
    json!({
        "system_hash": table.system_hash,
        "j_lqr": table.j_lqr,
        "config": table.config,
    })
}

/// Opens `path` for writing, or stdout when absent.
fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

pub fn build_table(args: &BuildTableArgs, file: &FileConfig) -> anyhow::Result<u8> {
    let config = table_config(args, file)?;
    let sys = load_system(&args.system).with_context(|| format!("loading system {}", args.system.display()))?;
    let (table, hit) = load_or_build_table(&sys, &config, &args.out)?;
    if !hit {
        log::info!("wrote {} ({} patterns)", args.out.display(), table.len());
    }

    let mut rows: Vec<_> = table.entries.iter().collect();
    rows.sort_by(|a, b| b.delta.total_cmp(&a.delta).then(a.pattern.cmp(&b.pattern)));
    let mut out = io::stdout().lock();
    writeln!(out, "J_lqr = {:.6e}", table.j_lqr)?;
    writeln!(out, "{:<width$}  {:>14}  {:>12}  status", "pattern", "delta", "delta/J (%)", width = table.node_count().max(7))?;
    for e in rows {
        let status = match e.status {
            LossStatus::Exact => "exact",
            LossStatus::UnstableCapped => "capped",
        };
        writeln!(
            out,
            "{:<width$}  {:>14.6e}  {:>12.4}  {status}",
            e.pattern.to_string(),
            e.delta,
            e.delta / table.j_lqr * 100.0,
            width = table.node_count().max(7)
        )?;
    }
    Ok(0)
}

fn support_json(s: &MixedStrategy) -> anyhow::Result<serde_json::Value> {
    Ok(dominant_support(s, DEFAULT_SUPPORT_THRESHOLD)?
        .into_iter()
        .map(|(p, w)| json!({ "pattern": p.to_string(), "probability": w }))
        .collect())
}

fn print_support(label: &str, s: &MixedStrategy) -> anyhow::Result<()> {
    eprintln!("{label} dominant support:");
    for (p, w) in dominant_support(s, DEFAULT_SUPPORT_THRESHOLD)? {
        eprintln!("  {p}  {w:.6}");
    }
    Ok(())
}

pub fn solve(args: &SolveArgs, file: &FileConfig) -> anyhow::Result<u8> {
    let opts = solver_options(&args.solver, file)?;
    let table = load_table(&args.table)?;
    let sol = solve_point(&table, args.gamma_a, args.gamma_d, &opts)?;
    let doc = json!({
        "config": {
            "table": table_summary(&table),
            "solver": opts,
            "gamma_a": args.gamma_a,
            "gamma_d": args.gamma_d,
        },
        "solution": sol,
        "attacker_support": support_json(&sol.r_star)?,
        "defender_support": support_json(&sol.d_star)?,
    });
    let mut out = output(args.out.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &doc)?;
    writeln!(out)?;
    out.flush()?;

    eprintln!(
        "E_a = {:.6e}  E_d = {:.6e}  E_loss = {:.6e}  epsilon = {:.3e}",
        sol.f_star, sol.g_star, sol.expected_loss, sol.epsilon
    );
    print_support("attacker", &sol.r_star)?;
    print_support("defender", &sol.d_star)?;
    Ok(0)
}

fn grid(single: Option<f64>, text: Option<&str>) -> anyhow::Result<Vec<f64>> {
    match (single, text) {
        (Some(v), _) => Ok(vec![v]),
        (None, Some(t)) => Ok(parse_grid(t)?),
        (None, None) => unreachable!("clap requires one of the two"),
    }
}

pub fn sweep(args: &SweepArgs, file: &FileConfig) -> anyhow::Result<u8> {
    let opts = solver_options(&args.solver, file)?;
    let table = load_table(&args.table)?;
    let spec = SweepSpec::new(
        grid(args.gamma_a, args.gamma_a_grid.as_deref())?,
        grid(args.gamma_d, args.gamma_d_grid.as_deref())?,
    )?;
    let records = run_sweep(&table, &spec, &opts)?;
    let failed = records.iter().filter(|r| !r.is_ok()).count();
    if failed > 0 {
        log::warn!("{failed} of {} grid points failed", records.len());
    }

    let config = json!({
        "table": table_summary(&table),
        "solver": opts,
        "gamma_a": spec.gamma_a_values(),
        "gamma_d": spec.gamma_d_values(),
    });
    let mut out = output(args.out.as_deref())?;
    match args.format {
        Format::Csv => write_csv(&mut out, &records, &config)?,
        Format::Json => {
            let doc = json!({ "version": 1, "config": config, "records": records });
            serde_json::to_writer_pretty(&mut out, &doc)?;
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(0)
}

fn default_grid(table: &LossTable) -> Vec<f64> {
    let max = table.max_delta();
    if max > 0.0 {
        (0..5).map(|k| max * k as f64 / 4.0).collect()
    } else {
        vec![0.0]
    }
}

fn payoffs_match(sol: &EquilibriumSolution, reference: &[EquilibriumSolution], tol: f64) -> bool {
    reference
        .iter()
        .any(|e| (e.f_star - sol.f_star).abs() <= tol && (e.g_star - sol.g_star).abs() <= tol)
}

pub fn oracle_check(args: &OracleArgs, file: &FileConfig) -> anyhow::Result<u8> {
    let opts = solver_options(&args.solver, file)?;
    let table = load_table(&args.table)?;
    let ga = match &args.gamma_a_grid {
        Some(t) => parse_grid(t)?,
        None => default_grid(&table),
    };
    let gd = match &args.gamma_d_grid {
        Some(t) => parse_grid(t)?,
        None => default_grid(&table),
    };

    let mut out = io::stdout().lock();
    writeln!(out, "{:>12}  {:>12}  {:>14}  {:>14}  {:>6}  result", "gamma_a", "gamma_d", "E_a", "E_d", "count")?;
    let mut mismatches = 0;
    for &a in &ga {
        for &d in &gd {
            let game = build_payoffs(&table, a, d)?;
            let reference = support_enumeration_oracle(&game)?;
            let sol = solve_point(&table, a, d, &opts)?;
            let ok = payoffs_match(&sol, &reference, 1e-6 * game.scale());
            if !ok {
                mismatches += 1;
            }
            writeln!(
                out,
                "{a:>12.4e}  {d:>12.4e}  {:>14.6e}  {:>14.6e}  {:>6}  {}",
                sol.f_star,
                sol.g_star,
                reference.len(),
                if ok { "match" } else { "MISMATCH" }
            )?;
        }
    }
    writeln!(out, "{} of {} points match", ga.len() * gd.len() - mismatches, ga.len() * gd.len())?;
    Ok(if mismatches == 0 { 0 } else { ORACLE_MISMATCH })
}

pub fn synth(args: &SynthArgs) -> anyhow::Result<u8> {
    let spec = match (&args.graph, args.ring) {
        (Some(path), _) => load_graph_spec(path)?,
        (None, Some(n)) => GraphSpec::ring(n, args.damping, args.seed),
        (None, None) => unreachable!("clap requires one of the two"),
    };
    let sys = build_synthetic_network(&spec)?;
    match &args.out {
        Some(path) => save_system(&sys, path)?,
        None => {
            let mut out = io::stdout().lock();
            serde_json::to_writer_pretty(&mut out, &sys.to_document())?;
            writeln!(out)?;
        }
    }
    Ok(0)
}
