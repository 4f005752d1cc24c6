mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{bcqp_oracle, dense_solve, frobenius, matvec, random_banded_spd, random_dense_spd, satisfies_kkt};
use sagfree::alm::{optimize, AlmOptions, AlmProblem, AlmReport};
use sagfree::batch::{optimize_batch, synthetic_strands, Execution};
use sagfree::bcqp::{mprgp_with, BcqpOptions, BcqpProblem, Preconditioner, PreconditionerKind};
use sagfree::linalg::{default_pivot_floor, dot, norm2, ActiveSet, LdlFactor};
use sagfree::sim::{simulate, SimOptions};
use sagfree::strand::{make_scene, naive_rest_params, MassMatrix, RestParams, SceneKind, SceneParams, StrandConfig, StrandState};
use sagfree::verify::{check_gradients, CheckOptions};

type Outcome = Result<String, String>;
type Check = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn scene(kind: SceneKind, n: usize) -> (StrandConfig, StrandState, RestParams) {
    let (config, state) = make_scene(kind, n, SceneParams::preset(kind).length).unwrap();
    let rest = naive_rest_params(&config, &state).unwrap();
    (config, state, rest)
}

fn run(config: &StrandConfig, state: &StrandState, rest: &RestParams, opts: &AlmOptions) -> (RestParams, AlmReport, Duration) {
    let t = Instant::now();
    let (p, report) = optimize(config, state, rest, opts).unwrap();
    (p, report, t.elapsed())
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let report = check_gradients(&CheckOptions::default()).map_err(|e| e.to_string())?;
    let secs = t.elapsed().as_secs_f64();
    let worst = report.results.iter().map(|r| r.worst / r.tolerance).fold(0.0, f64::max);
    for r in &report.results {
        ensure(r.passed(), format!("{} worst {:.2e} > {:.0e}", r.category, r.worst, r.tolerance))?;
    }
    ensure(secs <= 60.0, format!("took {secs:.1} s"))?;
    Ok(format!("{} categories, worst error/tolerance {worst:.2e}, {secs:.2} s", report.results.len()))
}

fn vertical_ablation() -> Outcome {
    let (config, state, rest) = scene(SceneKind::Vertical, 30);
    let base = AlmOptions::for_scene(SceneKind::Vertical);
    let (_, full, wall) = run(&config, &state, &rest, &base);
    ensure(full.converged() && full.constraint_ratio() <= 1e-6, format!("full ratio {:.2e}", full.constraint_ratio()))?;
    ensure(wall.as_secs_f64() <= 5.0, format!("full took {wall:?}"))?;
    let mut out = format!("full {:.1e} in {wall:.1?}", full.constraint_ratio());
    for (name, opts) in [
        ("rest-only", AlmOptions { rest_shape_only: true, ..base.clone() }),
        ("penalty", AlmOptions { penalty_only: true, ..base.clone() }),
    ] {
        let (_, r, _) = run(&config, &state, &rest, &opts);
        ensure(!r.converged() && r.constraint_ratio() > 1e-6, format!("{name} reached {:.2e}", r.constraint_ratio()))?;
        out += &format!(", {name} {:.1e}", r.constraint_ratio());
    }
    Ok(out)
}

fn horizontal_ablation() -> Outcome {
    let (config, state, rest) = scene(SceneKind::Horizontal, 30);
    let base = AlmOptions::for_scene(SceneKind::Horizontal);
    let (_, full, _) = run(&config, &state, &rest, &base);
    ensure(full.converged(), format!("full ratio {:.2e}", full.constraint_ratio()))?;
    let (_, pen, _) = run(&config, &state, &rest, &AlmOptions { penalty_only: true, ..base });
    ensure(!pen.converged(), format!("penalty reached {:.2e}", pen.constraint_ratio()))?;
    Ok(format!("full {:.1e}, penalty {:.1e}", full.constraint_ratio(), pen.constraint_ratio()))
}

fn forward_sim() -> Outcome {
    let mut out = Vec::new();
    for kind in [SceneKind::Vertical, SceneKind::Horizontal] {
        let (config, state, naive) = scene(kind, 30);
        let (rest, report, _) = run(&config, &state, &naive, &AlmOptions::for_scene(kind));
        ensure(report.converged(), format!("{kind:?} optimization did not converge"))?;
        let mass = MassMatrix::new(&config, &naive.rest_len);
        let opts = SimOptions { frames: 300, ..SimOptions::default() };
        let limit = 1e-3 * state.length();
        let opt = simulate(&config, &state, &rest, &mass, &opts).map_err(|e| e.to_string())?;
        let raw = simulate(&config, &state, &naive, &mass, &opts).map_err(|e| e.to_string())?;
        let (d_opt, d_raw) = (opt.max_drift(), raw.max_drift());
        ensure(d_opt <= limit, format!("{kind:?} optimized drift {d_opt:.2e} > {limit:.2e}"))?;
        ensure(d_raw >= 10.0 * limit, format!("{kind:?} naive drift {d_raw:.2e} < 10x limit"))?;
        ensure(opt.max_clamp_count == 0, format!("{kind:?} clamped pivots"))?;
        out.push(format!("{kind:?} {d_opt:.1e} vs naive {d_raw:.1e}"));
    }
    Ok(out.join(", "))
}

fn iterate_bounds() -> Outcome {
    let (config, state, rest) = scene(SceneKind::Horizontal, 30);
    let opts = AlmOptions {
        mu: 0.4,
        record_iterates: true,
        ..AlmOptions::for_scene(SceneKind::Horizontal)
    };
    let (_, report, _) = run(&config, &state, &rest, &opts);
    ensure(report.iterates.len() >= 2, "no iterates recorded")?;
    for (k, p) in report.iterates.iter().enumerate() {
        for (i, v) in p.iter().enumerate() {
            ensure(report.lower[i] <= *v && *v <= report.upper[i], format!("iterate {k} entry {i} = {v} outside box"))?;
        }
    }
    Ok(format!("{} iterates x {} entries inside the box", report.iterates.len(), report.lower.len()))
}

fn random_bounds<R: Rng>(rng: &mut R, n: usize) -> (Vec<f64>, Vec<f64>) {
    (0..n)
        .map(|_| {
            let lo = if rng.random_bool(0.25) { f64::NEG_INFINITY } else { rng.random_range(-1.0..0.5) };
            let hi = if rng.random_bool(0.25) {
                f64::INFINITY
            } else if lo.is_finite() {
                lo + rng.random_range(0.1..1.5)
            } else {
                rng.random_range(-0.5..1.0)
            };
            (lo, hi)
        })
        .unzip()
}

fn bcqp_vs_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    let mut active = 0usize;
    for case in 0..500 {
        let n = rng.random_range(1..=12);
        let a = if case % 2 == 0 {
            let hbw = rng.random_range(0..n);
            random_banded_spd(&mut rng, n, hbw)
        } else {
            random_dense_spd(&mut rng, n, 0.5)
        };
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (lo, hi) = random_bounds(&mut rng, n);
        let dense = a.to_dense();
        let want = bcqp_oracle(&dense, &b, &lo, &hi);
        active += (0..n).filter(|&i| want[i] == lo[i] || want[i] == hi[i]).count();
        let x0 = vec![0.0; n];
        let problem = BcqpProblem::new(a.clone(), b.clone(), lo.clone(), hi.clone(), x0).map_err(|e| e.to_string())?;
        for kind in PreconditionerKind::ALL {
            let opts = BcqpOptions::with_preconditioner(kind);
            let prec = Preconditioner::build(kind, &a).map_err(|e| e.to_string())?;
            let res = mprgp_with(&problem, &opts, &prec).map_err(|e| e.to_string())?;
            ensure(res.converged(), format!("case {case} {kind} hit the iteration cap"))?;
            let err = res.x.iter().zip(&want).map(|(x, w)| (x - w).abs()).fold(0.0, f64::max);
            ensure(err <= 1e-8, format!("case {case} n={n} {kind} error {err:.2e}"))?;
            ensure(satisfies_kkt(&dense, &b, &lo, &hi, &res.x, 1e-8), format!("case {case} {kind} KKT"))?;
            worst = worst.max(err);
        }
    }
    Ok(format!("500 problems x {} preconditioners, {active} active bounds, worst {worst:.1e}", PreconditionerKind::ALL.len()))
}

fn asc_unbounded() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let n = rng.random_range(2..=300);
        let hbw = rng.random_range(0..=12.min(n - 1));
        let a = random_banded_spd(&mut rng, n, hbw);
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let problem = BcqpProblem::new(a.clone(), b.clone(), vec![f64::NEG_INFINITY; n], vec![f64::INFINITY; n], vec![0.0; n])
            .map_err(|e| e.to_string())?;
        let opts = BcqpOptions::with_preconditioner(PreconditionerKind::Asc);
        let prec = Preconditioner::build(PreconditionerKind::Asc, &a).map_err(|e| e.to_string())?;
        let res = mprgp_with(&problem, &opts, &prec).map_err(|e| e.to_string())?;
        let ax = a.matvec(&res.x).unwrap();
        let r: Vec<f64> = ax.iter().zip(&b).map(|(a, b)| a - b).collect();
        let rel = norm2(&r) / norm2(&b);
        ensure(res.iterations == 1, format!("case {case} took {} iterations", res.iterations))?;
        ensure(rel <= 1e-10, format!("case {case} residual {rel:.2e}"))?;
        worst = worst.max(rel);
    }
    Ok(format!("50 systems in 1 iteration, worst residual {worst:.1e}"))
}

fn preconditioner_order() -> Outcome {
    let (config, state, rest) = scene(SceneKind::Horizontal, 30);
    let opts = AlmOptions { mu: 0.4, ..AlmOptions::for_scene(SceneKind::Horizontal) };
    let problem = AlmProblem::new(&config, &state, &rest, &opts).map_err(|e| e.to_string())?;
    let lambda = vec![0.0; problem.mass().active().len()];
    let sub = problem.newton_subproblem(problem.p0(), &lambda).map_err(|e| e.to_string())?;
    let iters = |kind| -> Result<usize, String> {
        let prec = Preconditioner::build(kind, &sub.a).map_err(|e| e.to_string())?;
        let res = mprgp_with(&sub, &BcqpOptions::with_preconditioner(kind), &prec).map_err(|e| e.to_string())?;
        ensure(res.converged(), format!("{kind} hit the cap"))?;
        Ok(res.iterations)
    };
    let (asc, diag) = (iters(PreconditionerKind::Asc)?, iters(PreconditionerKind::Diagonal)?);
    ensure(asc < diag && asc <= 50, format!("asc {asc} vs diagonal {diag}"))?;
    Ok(format!("asc {asc} vs diagonal {diag} iterations"))
}

fn filtered_solve() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for case in 0..200 {
        let n = rng.random_range(1..=40);
        let hbw = rng.random_range(0..=8.min(n - 1));
        let a = random_banded_spd(&mut rng, n, hbw);
        let f = LdlFactor::factorize(&a, default_pivot_floor(&a)).map_err(|e| e.to_string())?;
        let empty = case % 4 == 0;
        let flags: Vec<i8> = (0..n).map(|_| if empty { 0 } else { rng.random_range(-1..=1) }).collect();
        let set = ActiveSet::from_flags(flags.clone()).map_err(|e| e.to_string())?;
        let r1: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r2: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z1 = f.solve_filtered(&r1, &set).unwrap();
        let z2 = f.solve_filtered(&r2, &set).unwrap();
        let (s1, s2) = (dot(&z1, &r2), dot(&r1, &z2));
        let asym = (s1 - s2).abs() / (s1.abs().max(s2.abs()).max(1e-300));
        ensure(asym <= 1e-10 || (s1 - s2).abs() <= 1e-14, format!("case {case} asymmetry {asym:.2e}"))?;
        for i in 0..n {
            ensure(flags[i] == 0 || z1[i] == 0.0, format!("case {case} active entry {i} = {}", z1[i]))?;
        }
        if empty {
            let az = a.matvec(&z1).unwrap();
            let r: Vec<f64> = az.iter().zip(&r1).map(|(a, b)| a - b).collect();
            let rel = norm2(&r) / norm2(&r1);
            ensure(rel <= 1e-10, format!("case {case} empty-set residual {rel:.2e}"))?;
        }
        worst = worst.max(asym);
    }
    Ok(format!("200 triples, worst asymmetry {worst:.1e}"))
}

fn reduced_curvature() -> Outcome {
    let n = 200;
    let (config, state, rest) = scene(SceneKind::Coil, n);
    let mut nnz = Vec::new();
    let mut out = Vec::new();
    for four in [false, true] {
        let opts = AlmOptions {
            rest_shape_only: true,
            curvature_4d: four,
            ..AlmOptions::for_scene(SceneKind::Coil)
        };
        let problem = AlmProblem::new(&config, &state, &rest, &opts).map_err(|e| e.to_string())?;
        let lambda = vec![0.0; problem.mass().active().len()];
        let (_, jac) = problem.gradient(problem.p0(), &lambda).map_err(|e| e.to_string())?;
        let cols = if four { 6 * n - 12 } else { 4 * n - 8 };
        ensure(jac.ncols() == cols, format!("4d={four}: {} columns, expected {cols}", jac.ncols()))?;
        nnz.push(jac.gram_structural_nnz() as f64);
        let (_, report, wall) = run(&config, &state, &rest, &opts);
        ensure(report.converged(), format!("4d={four} stopped at {:.2e}", report.constraint_ratio()))?;
        out.push(format!("{} {:.1e} in {wall:.1?}", if four { "4D" } else { "2D" }, report.constraint_ratio()));
    }
    let ratio = nnz[0] / nnz[1];
    let target = 88.0 / 192.0;
    ensure((ratio / target - 1.0).abs() <= 0.1, format!("nnz ratio {ratio:.3} vs {target:.3}"))?;
    Ok(format!("{}, nnz ratio {ratio:.3}", out.join(", ")))
}

fn ldlt_vs_dense() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut worst_rec, mut worst_sol) = (0.0f64, 0.0f64);
    for case in 0..300 {
        let n = rng.random_range(1..=50);
        let hbw = rng.random_range(0..=8.min(n - 1));
        let a = random_banded_spd(&mut rng, n, hbw);
        let f = LdlFactor::factorize(&a, default_pivot_floor(&a)).map_err(|e| e.to_string())?;
        ensure(f.clamp_count() == 0, format!("case {case} clamped"))?;
        let dense = a.to_dense();
        let d = f.diag();
        let mut diff = 0.0;
        for i in 0..n {
            for j in 0..n {
                let v: f64 = (0..n).map(|k| f.lower(i, k) * d[k] * f.lower(j, k)).sum();
                diff += (v - dense[i][j]).powi(2);
            }
        }
        let rec = diff.sqrt() / frobenius(&dense);
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z = f.solve(&r).unwrap();
        let want = dense_solve(&dense, &r).ok_or("dense solve failed")?;
        let sol = z.iter().zip(&want).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / norm2(&want);
        let az = matvec(&dense, &z);
        let res = az.iter().zip(&r).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / norm2(&r);
        ensure(rec <= 1e-10 && sol <= 1e-10 && res <= 1e-10, format!("case {case}: rec {rec:.1e} sol {sol:.1e} res {res:.1e}"))?;
        worst_rec = worst_rec.max(rec);
        worst_sol = worst_sol.max(sol);
    }
    Ok(format!("300 matrices, reconstruction {worst_rec:.1e}, solve {worst_sol:.1e}"))
}

fn batch_smoke() -> Outcome {
    let strands = synthetic_strands(100, 30).map_err(|e| e.to_string())?;
    let opts = AlmOptions::for_scene(SceneKind::Coil);
    let mut out = Vec::new();
    for mode in [Execution::Sequential, Execution::Parallel] {
        let t = Instant::now();
        let results = optimize_batch(&strands, &opts, mode);
        let wall = t.elapsed();
        for (i, r) in results.iter().enumerate() {
            let (_, report) = r.as_ref().map_err(|e| format!("strand {i}: {e}"))?;
            ensure(report.converged(), format!("strand {i} stopped at {:.2e}", report.constraint_ratio()))?;
        }
        out.push(format!("{mode:?} {wall:.2?}"));
    }
    Ok(format!("100 strands converged, {}", out.join(", ")))
}

fn main() -> ExitCode {
    let criteria: [Check; 12] = [
        ("1 gradient and Jacobian checks", gradients),
        ("2 vertical strand ablation", vertical_ablation),
        ("3 horizontal strand ablation", horizontal_ablation),
        ("4 forward simulation drift", forward_sim),
        ("5 iterates stay inside the box", iterate_bounds),
        ("6 MPRGP against exact oracle", bcqp_vs_oracle),
        ("7 ASC without active bounds", asc_unbounded),
        ("8 ASC against diagonal preconditioner", preconditioner_order),
        ("9 filtered solve properties", filtered_solve),
        ("10 reduced curvature layout", reduced_curvature),
        ("11 banded LDLT against dense", ldlt_vs_dense),
        ("batch smoke run", batch_smoke),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("PASS  {name}: {msg} [{secs:.2} s]"),
            Err(msg) => {
                failed += 1;
                println!("FAIL  {name}: {msg} [{secs:.2} s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
