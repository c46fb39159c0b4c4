//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Every check uses its own reference computation where one is
//! feasible (Kronecker-form Lyapunov solves, brute-force grids, vertex
//! enumeration, explicit pairwise sums).

use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use cyberlqr_core::model::random_stable_system;
use cyberlqr_core::sweep::parse_grid;
use cyberlqr_core::{
    build_consensus_q, build_loss_table, build_payoffs, build_synthetic_network, cost_and_gradient, evaluate_cost,
    optimize_structured, run_sweep, solve_msne, solve_riccati, support_enumeration_oracle, BlockLayout,
    ConsensusLayout, GainMask, GainMatrix, GraphSpec, LinearSystem, LossTable, NodePattern, OptimizerOptions,
    PayoffMatrices, SolverOptions, StructuredProblem, SweepSpec, TableConfig,
};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ring3() -> LinearSystem {
    build_synthetic_network(&GraphSpec::ring(3, 1.0, 42)).expect("ring system")
}

/// The 3-node table and how long it took to build.
fn ring3_table() -> &'static (LossTable, Duration) {
    static TABLE: OnceLock<(LossTable, Duration)> = OnceLock::new();
    TABLE.get_or_init(|| {
        let t = Instant::now();
        let table = build_loss_table(&ring3(), &TableConfig::default()).expect("ring table");
        (table, t.elapsed())
    })
}

fn within(limit_s: f64, elapsed: Duration) -> Result<(), String> {
    if elapsed.as_secs_f64() <= limit_s {
        Ok(())
    } else {
        Err(format!("took {:.1} s, limit {limit_s} s", elapsed.as_secs_f64()))
    }
}

/// Pure-strategy improvements available to either player.
fn gap(u: &PayoffMatrices, r: &DVector<f64>, d: &DVector<f64>) -> (f64, f64, f64) {
    let mut f = 0.0;
    let mut g = 0.0;
    for i in 0..u.rows() {
        for j in 0..u.cols() {
            f += r[i] * d[j] * u.u_a[(i, j)];
            g += r[i] * d[j] * u.u_d[(i, j)];
        }
    }
    let best_a = (0..u.rows())
        .map(|i| (0..u.cols()).map(|j| d[j] * u.u_a[(i, j)]).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max);
    let best_d = (0..u.cols())
        .map(|j| (0..u.rows()).map(|i| r[i] * u.u_d[(i, j)]).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max);
    (f, g, (best_a - f).max(best_d - g).max(0.0))
}

fn random_gain(rng: &mut ChaCha8Rng, sys: &LinearSystem) -> GainMatrix {
    let mut scale = 0.3;
    loop {
        let k = DMatrix::from_fn(sys.input_dim(), sys.state_dim(), |_, _| rng.random_range(-scale..scale));
        let k = GainMatrix::new(k, sys).expect("gain shape");
        if evaluate_cost(sys, &k).is_ok() {
            return k;
        }
        scale *= 0.5;
    }
}

fn c1_gradient() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for trial in 0..10 {
        let states = rng.random_range(2..=8);
        let inputs = rng.random_range(1..=states.min(4));
        let sys = random_stable_system(&mut rng, states, inputs);
        let k = random_gain(&mut rng, &sys);
        let (_, grad) = cost_and_gradient(&sys, &k).map_err(|e| e.to_string())?;
        let floor = 1e-3 * grad.amax();
        for r in 0..inputs {
            for c in 0..states {
                let h = 1e-6 * (1.0 + k.as_matrix()[(r, c)].abs());
                let mut plus = k.as_matrix().clone();
                let mut minus = k.as_matrix().clone();
                plus[(r, c)] += h;
                minus[(r, c)] -= h;
                let jp = evaluate_cost(&sys, &GainMatrix::new(plus, &sys).unwrap()).map_err(|e| e.to_string())?;
                let jm = evaluate_cost(&sys, &GainMatrix::new(minus, &sys).unwrap()).map_err(|e| e.to_string())?;
                let fd = (jp - jm) / (2.0 * h);
                let rel = (fd - grad[(r, c)]).abs() / grad[(r, c)].abs().max(floor);
                worst = worst.max(rel);
                if rel > 1e-4 {
                    return Err(format!("system {trial} ({states}x{inputs}) entry ({r},{c}): rel err {rel:.2e}"));
                }
            }
        }
    }
    within(10.0, start.elapsed())?;
    Ok(format!("max rel err {worst:.1e}, {:.2} s", start.elapsed().as_secs_f64()))
}

/// Cost of `u = −diag(k) x` on the fixed 2-state plant, from a Kronecker-form
/// Lyapunov solve. `None` when the closed loop is not Hurwitz.
fn diag_cost(a: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, d: &DVector<f64>, k1: f64, k2: f64) -> Option<f64> {
    let k = DMatrix::from_row_slice(2, 2, &[k1, 0.0, 0.0, k2]);
    let acl = a - &k;
    if acl.trace() >= 0.0 || acl.determinant() <= 0.0 {
        return None;
    }
    let w = q + k.transpose() * r * &k;
    // vec(AᵀP + PA) = (I ⊗ Aᵀ + Aᵀ ⊗ I) vec(P)
    let i2 = DMatrix::<f64>::identity(2, 2);
    let op = i2.kronecker(&acl.transpose()) + acl.transpose().kronecker(&i2);
    let rhs = -DVector::from_column_slice(w.as_slice());
    let p = op.lu().solve(&rhs)?;
    let p = DMatrix::from_column_slice(2, 2, p.as_slice());
    Some((d.transpose() * p * d)[(0, 0)])
}

fn c2_structured_oracle() -> Outcome {
    let start = Instant::now();
    let a = DMatrix::from_row_slice(2, 2, &[0.3, 1.0, 0.5, -0.4]);
    let b = DMatrix::<f64>::identity(2, 2);
    let d = DVector::from_row_slice(&[1.0, 0.7]);
    let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
    let r = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.5]);
    let layout = BlockLayout::uniform(2, 1, 1).unwrap();
    let sys = LinearSystem::new(a.clone(), b, d.clone(), q.clone(), r.clone(), layout).map_err(|e| e.to_string())?;
    let mask = GainMask::from_entries(DMatrix::from_row_slice(2, 2, &[true, false, false, true]), false);
    let problem = StructuredProblem::new(&sys, mask, OptimizerOptions::default()).map_err(|e| e.to_string())?;
    let sol = optimize_structured(&problem).map_err(|e| e.to_string())?;

    // Grid over a box, widened until the minimizer is interior.
    let mut half = 4.0;
    let (mut best, mut c1, mut c2) = (f64::INFINITY, 0.0, 0.0);
    loop {
        let mut on_edge = false;
        for i in 0..201 {
            for j in 0..201 {
                let k1 = -half + 2.0 * half * i as f64 / 200.0;
                let k2 = -half + 2.0 * half * j as f64 / 200.0;
                if let Some(v) = diag_cost(&a, &q, &r, &d, k1, k2) {
                    if v < best {
                        (best, c1, c2) = (v, k1, k2);
                        on_edge = i == 0 || i == 200 || j == 0 || j == 200;
                    }
                }
            }
        }
        if !on_edge {
            break;
        }
        half *= 2.0;
        best = f64::INFINITY;
    }
    // Local refinement: repeatedly re-grid a shrinking box around the best point.
    let mut step = 2.0 * half / 200.0;
    for _ in 0..30 {
        let (mut n1, mut n2) = (c1, c2);
        for i in -10..=10 {
            for j in -10..=10 {
                let k1 = c1 + step * i as f64 / 10.0;
                let k2 = c2 + step * j as f64 / 10.0;
                if let Some(v) = diag_cost(&a, &q, &r, &d, k1, k2) {
                    if v < best {
                        (best, n1, n2) = (v, k1, k2);
                    }
                }
            }
        }
        (c1, c2) = (n1, n2);
        step *= 0.5;
    }
    let rel = (sol.j_star - best).abs() / best;
    within(30.0, start.elapsed())?;
    if rel > 1e-3 {
        return Err(format!("J* = {:.8e}, grid = {best:.8e}, rel {rel:.2e}", sol.j_star));
    }
    Ok(format!(
        "J* = {:.6e}, grid {best:.6e} at ({c1:.4}, {c2:.4}), rel {rel:.1e}, {:.2} s",
        sol.j_star,
        start.elapsed().as_secs_f64()
    ))
}

fn c3_full_mask() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst: f64 = 0.0;
    for trial in 0..10 {
        let states = rng.random_range(2..=8);
        let inputs = rng.random_range(1..=states.min(4));
        let sys = random_stable_system(&mut rng, states, inputs);
        let ric = solve_riccati(&sys).map_err(|e| e.to_string())?;
        let j_lqr = (sys.d().transpose() * &ric.p * sys.d())[(0, 0)];
        let problem = StructuredProblem::new(&sys, GainMask::full(sys.layout()), OptimizerOptions::default())
            .map_err(|e| e.to_string())?;
        let sol = optimize_structured(&problem).map_err(|e| e.to_string())?;
        let rel = (sol.j_star - j_lqr).abs() / j_lqr;
        worst = worst.max(rel);
        if rel > 1e-6 {
            return Err(format!("system {trial}: J* = {:.10e}, J_lqr = {j_lqr:.10e}", sol.j_star));
        }
    }
    Ok(format!("max rel diff {worst:.1e}"))
}

fn c4_table_laws() -> Outcome {
    let (table, elapsed) = ring3_table();
    if table.len() != 8 {
        return Err(format!("{} patterns", table.len()));
    }
    let tol = 1e-6 * (1.0 + table.j_lqr);
    let all_ones = NodePattern::all_ones(3).unwrap();
    if table.delta(&all_ones) != 0.0 {
        return Err(format!("delta(111) = {:e}", table.delta(&all_ones)));
    }
    for e in &table.entries {
        if e.delta < 0.0 {
            return Err(format!("delta({}) = {:e} < 0", e.pattern, e.delta));
        }
        for f in &table.entries {
            if e.pattern.is_subset_of(&f.pattern) && e.delta < f.delta - tol {
                return Err(format!("delta({}) < delta({})", e.pattern, f.pattern));
            }
        }
    }
    within(60.0, *elapsed)?;
    Ok(format!("8 patterns, max delta {:.4e}, {:.2} s", table.max_delta(), elapsed.as_secs_f64()))
}

fn verify(u: &PayoffMatrices, opts: &SolverOptions) -> Result<f64, String> {
    let sol = solve_msne(u, opts).map_err(|e| e.to_string())?;
    let (f, g, eps) = gap(u, sol.r_star.probs(), sol.d_star.probs());
    let bound = 1e-6 * u.scale();
    if eps > bound {
        return Err(format!("gap {eps:.2e} > {bound:.2e}"));
    }
    if (f - sol.f_star).abs() > 1e-9 * u.scale() || (g - sol.g_star).abs() > 1e-9 * u.scale() {
        return Err("reported payoffs disagree with the strategies".into());
    }
    if f < -eps - 1e-12 || g > eps + 1e-12 {
        return Err(format!("sign bounds violated: f = {f:e}, g = {g:e}, eps = {eps:e}"));
    }
    Ok(eps / u.scale())
}

fn c5_equilibria() -> Outcome {
    let opts = SolverOptions::default();
    let table = &ring3_table().0;
    let top = table.max_delta();
    let mut count = 0;
    let mut worst: f64 = 0.0;
    for ga in parse_grid(&format!("0:{}:6", 1.2 * top)).unwrap() {
        for gd in parse_grid(&format!("0:{}:6", 1.2 * top)).unwrap() {
            let u = build_payoffs(table, ga, gd).map_err(|e| e.to_string())?;
            worst = worst.max(verify(&u, &opts).map_err(|e| format!("(γa {ga:e}, γd {gd:e}): {e}"))?);
            count += 1;
        }
    }
    // Loss-like random tables exercise more support shapes.
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    for _ in 0..30 {
        let n = rng.random_range(1..=3);
        let len = 1usize << n;
        let mut deltas: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..10.0)).collect();
        deltas[len - 1] = 0.0;
        let t = LossTable::from_deltas(5.0, &deltas).map_err(|e| e.to_string())?;
        let u = build_payoffs(&t, rng.random_range(0.0..4.0), rng.random_range(0.0..4.0)).map_err(|e| e.to_string())?;
        worst = worst.max(verify(&u, &opts)?);
        count += 1;
    }
    Ok(format!("{count} games, max gap/scale {worst:.1e}"))
}

fn one_node_system() -> LinearSystem {
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.5]);
    let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
    let d = DVector::from_row_slice(&[0.0, 1.0]);
    let q = DMatrix::<f64>::identity(2, 2);
    let r = DMatrix::<f64>::identity(1, 1);
    LinearSystem::new(a, b, d, q, r, BlockLayout::uniform(1, 2, 1).unwrap()).expect("one-node system")
}

fn c6_oracle() -> Outcome {
    let opts = SolverOptions::default();
    let systems = [
        one_node_system(),
        build_synthetic_network(&GraphSpec::path(2, 1.0, 7)).map_err(|e| e.to_string())?,
    ];
    let mut points = 0;
    for sys in &systems {
        let table = build_loss_table(sys, &TableConfig::default()).map_err(|e| e.to_string())?;
        let top = table.max_delta();
        for ga in parse_grid(&format!("0:{top}:5")).unwrap() {
            for gd in parse_grid(&format!("0:{top}:5")).unwrap() {
                let u = build_payoffs(&table, ga, gd).map_err(|e| e.to_string())?;
                let sol = solve_msne(&u, &opts).map_err(|e| e.to_string())?;
                let reference = support_enumeration_oracle(&u).map_err(|e| e.to_string())?;
                let tol = 1e-6 * u.scale();
                if !reference
                    .iter()
                    .any(|e| (e.f_star - sol.f_star).abs() <= tol && (e.g_star - sol.g_star).abs() <= tol)
                {
                    return Err(format!(
                        "{}-node table at (γa {ga:e}, γd {gd:e}): ({:e}, {:e}) not among {} oracle equilibria",
                        table.node_count(),
                        sol.f_star,
                        sol.g_star,
                        reference.len()
                    ));
                }
                points += 1;
            }
        }
    }
    let pennies = PayoffMatrices::from_matrices(
        DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]),
        DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]),
    )
    .unwrap();
    let sol = solve_msne(&pennies, &opts).map_err(|e| e.to_string())?;
    let off = sol
        .r_star
        .probs()
        .iter()
        .chain(sol.d_star.probs().iter())
        .fold(0.0f64, |m, p| m.max((p - 0.5).abs()));
    if off > 1e-8 {
        return Err(format!("matching pennies off by {off:e}"));
    }
    Ok(format!("{points} table games matched, matching pennies off by {off:.1e}"))
}

fn c7_free_defense() -> Outcome {
    let start = Instant::now();
    let (table, build) = ring3_table();
    let ga = 0.01 * table.max_delta() / 3.0;
    let u = build_payoffs(table, ga, 0.0).map_err(|e| e.to_string())?;
    let sol = solve_msne(&u, &SolverOptions::default()).map_err(|e| e.to_string())?;
    let p_all = sol.d_star.probs()[7];
    within(60.0, *build + start.elapsed())?;
    if p_all < 1.0 - 1e-6 {
        return Err(format!("P(defend 111) = {p_all}"));
    }
    if sol.f_star > sol.epsilon {
        return Err(format!("E_a = {:e} > epsilon {:e}", sol.f_star, sol.epsilon));
    }
    Ok(format!("P(defend 111) = {p_all}, E_a = {:e}, epsilon = {:e}", sol.f_star, sol.epsilon))
}

fn c8_zero_costs() -> Outcome {
    let table = &ring3_table().0;
    let u = build_payoffs(table, 0.0, 0.0).map_err(|e| e.to_string())?;
    let sol = solve_msne(&u, &SolverOptions::default()).map_err(|e| e.to_string())?;
    let (r, d) = (sol.r_star.probs(), sol.d_star.probs());
    if r[0] != 1.0 || d[7] != 1.0 {
        return Err(format!("attack {r:?}, defend {d:?}"));
    }
    if sol.f_star.abs() > sol.epsilon || sol.g_star.abs() > sol.epsilon {
        return Err(format!("payoffs ({:e}, {:e}), epsilon {:e}", sol.f_star, sol.g_star, sol.epsilon));
    }
    Ok("attack 000 and protect 111 with probability 1, payoffs 0".into())
}

fn c9_protection_region() -> Outcome {
    let table = &ring3_table().0;
    let top = table.max_delta();
    // Cheap enough that defense is worthwhile, costly enough that free
    // attacks pay, so the threshold is not at zero.
    let gd = 0.1 * top;
    let spec = SweepSpec::new(parse_grid(&format!("0:{}:31", 1.5 * top)).unwrap(), vec![gd]).unwrap();
    let records = run_sweep(table, &spec, &SolverOptions::default()).map_err(|e| e.to_string())?;
    if let Some(r) = records.iter().find(|r| !r.is_ok()) {
        return Err(format!("γa {:e} failed: {:?}", r.gamma_a, r.error));
    }
    let safe: Vec<bool> = records.iter().map(|r| r.e_a <= r.epsilon).collect();
    let Some(first) = (0..safe.len()).find(|&k| safe[k..].iter().all(|&s| s)) else {
        return Err("no grid point has E_a <= epsilon".into());
    };
    if first == 0 {
        return Err("E_a <= epsilon everywhere, no threshold to find".into());
    }
    Ok(format!(
        "E_a <= epsilon for every γa >= {:.4e} ({} of {} points), max delta {top:.4e}",
        records[first].gamma_a,
        safe.len() - first,
        safe.len()
    ))
}

fn c10_self_links() -> Outcome {
    let disabled = &ring3_table().0;
    let intact = build_loss_table(
        &ring3(),
        &TableConfig {
            self_links_disabled: false,
            ..TableConfig::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let mut ratio: f64 = 0.0;
    for (a, b) in intact.entries.iter().zip(&disabled.entries) {
        if a.delta > b.delta {
            return Err(format!("{}: intact {:e} > disabled {:e}", a.pattern, a.delta, b.delta));
        }
        if b.delta > 0.0 {
            ratio = ratio.max(a.delta / b.delta);
        }
    }
    Ok(format!("largest intact/disabled ratio {ratio:.3}"))
}

fn c11_consensus_q() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1111);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let k = rng.random_range(1..=6);
        let rem = rng.random_range(0..=4);
        let mut perm: Vec<usize> = (0..2 * k + rem).collect();
        perm.shuffle(&mut rng);
        let layout = ConsensusLayout::new(k, k, rem, perm.clone()).map_err(|e| e.to_string())?;
        let q = build_consensus_q(&layout);
        let x = DVector::from_fn(2 * k + rem, |_, _| rng.random_range(-3.0..3.0));
        let lhs = (x.transpose() * &q * &x)[(0, 0)];
        let canon = |c: usize| x[perm[c]];
        let mut rhs = 0.0;
        for i in 0..k {
            for j in i + 1..k {
                rhs += (canon(i) - canon(j)).powi(2);
                rhs += (canon(k + i) - canon(k + j)).powi(2);
            }
        }
        rhs += (0..rem).map(|c| canon(2 * k + c).powi(2)).sum::<f64>();
        let rel = (lhs - rhs).abs() / rhs.abs().max(f64::MIN_POSITIVE);
        worst = worst.max(rel);
        if rel > 1e-10 {
            return Err(format!("k = {k}, rem = {rem}: {lhs:e} vs {rhs:e}"));
        }
    }
    Ok(format!("100 vectors, max rel diff {worst:.1e}"))
}

fn c12_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let table_path = dir.path().join("table.json");
    ring3_table().0.save(&table_path).map_err(|e| e.to_string())?;
    let top = ring3_table().0.max_delta();
    let run = |threads: &str| -> Result<Vec<u8>, String> {
        let out = Command::new(env!("CARGO_BIN_EXE_cyberlqr"))
            .args(["--threads", threads, "sweep", "--table"])
            .arg(&table_path)
            .args(["--gamma-a-grid", &format!("0:{top}:4"), "--gamma-d-grid", &format!("0:{top}:4")])
            .args(["--seed", "7"])
            .env("RUST_LOG", "off")
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(String::from_utf8_lossy(&out.stderr).into_owned());
        }
        Ok(out.stdout)
    };
    let first = run("1")?;
    for threads in ["1", "4", "0"] {
        if run(threads)? != first {
            return Err(format!("output changed on rerun with --threads {threads}"));
        }
    }
    Ok(format!("4 runs, {} identical bytes", first.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("gradient matches central differences", c1_gradient),
        ("diagonal-mask optimum matches grid search", c2_structured_oracle),
        ("full mask recovers the Riccati cost", c3_full_mask),
        ("loss table laws on the 3-node ring", c4_table_laws),
        ("equilibria pass best-response and sign checks", c5_equilibria),
        ("solver payoffs match vertex enumeration", c6_oracle),
        ("free defense protects every node", c7_free_defense),
        ("zero costs give attack-all/protect-all", c8_zero_costs),
        ("protection region exists and persists", c9_protection_region),
        ("intact self links never increase loss", c10_self_links),
        ("consensus weight matches pairwise form", c11_consensus_q),
        ("repeated sweeps are byte-identical", c12_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
