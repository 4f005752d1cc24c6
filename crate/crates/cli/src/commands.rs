use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::time::Instant;

use sagfree::alm::{AlmOptions, AlmProblem};
use sagfree::batch::{map_ordered, optimize_batch, Execution};
use sagfree::bcqp::{mprgp_with, projected_gradient_parts, pgs_solve, write_residual_csv, BcqpOptions, PreconditionerKind, Preconditioner};
use sagfree::io::{
    load_strands, read_params_json, write_convergence_csv, write_kinetic_csv, write_params_json, write_trajectory,
    ParamsFile, StrandFile, Table, TrajectoryFormat,
};
use sagfree::linalg::norm2;
use sagfree::sim::{simulate as run_sim, RootMotion, SimOptions};
use sagfree::strand::{make_scene_with, naive_rest_params, MassMatrix, SceneKind, SceneParams, StrandConfig, StrandState};
use sagfree::verify::{check_gradients, Category, CheckOptions};
use sagfree::{Error, Result};

use crate::args::{AlmArgs, BenchArgs, CheckGradArgs, OptimizeArgs, SimulateArgs, StrandArgs};
use crate::exit;

type Strand = (StrandConfig, StrandState);

fn output_dir(path: Option<PathBuf>) -> Result<PathBuf> {
    let dir = path.unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn override_config(config: &mut StrandConfig, a: &StrandArgs) {
    if let Some(r) = a.radius {
        config.radius = r;
    }
    if let Some(d) = a.density {
        config.density = d;
    }
    if let Some(c) = a.c_st {
        config.c_st.fill(c);
    }
    if let Some(c) = a.c_be {
        config.c_be.fill(c);
    }
    if let Some(c) = a.c_tw {
        config.c_tw.fill(c);
    }
    if let Some(g) = a.gravity {
        config.gravity = [0.0, -g, 0.0];
    }
}

/// The strands described by the flags and the scene they came from, if any.
fn load(a: &StrandArgs) -> Result<(Option<SceneKind>, Vec<Strand>)> {
    match (&a.input, a.scene) {
        (Some(_), Some(_)) => Err(Error::Config("--scene and --input are mutually exclusive".into())),
        (None, None) => Err(Error::Config("one of --scene or --input is required".into())),
        (Some(path), None) => {
            if a.n.is_some() || a.length.is_some() {
                return Err(Error::Config("--n and --length apply to built-in scenes only".into()));
            }
            let template: StrandFile = serde_json::from_str(r#"{"vertices": []}"#)?;
            let mut strands = load_strands(path, &template)?;
            for (config, _) in &mut strands {
                override_config(config, a);
                config.validate()?;
            }
            Ok((None, strands))
        }
        (None, Some(kind)) => {
            let mut params = SceneParams::preset(kind);
            if let Some(r) = a.radius {
                params.radius = r;
            }
            if let Some(d) = a.density {
                params.density = d;
            }
            if let Some(c) = a.c_st {
                params.c_st = c;
            }
            if let Some(c) = a.c_be {
                params.c_be = c;
            }
            if let Some(c) = a.c_tw {
                params.c_tw = c;
            }
            if let Some(g) = a.gravity {
                params.gravity = [0.0, -g, 0.0];
            }
            let n = a.n.unwrap_or(30);
            let length = a.length.unwrap_or(params.length);
            Ok((Some(kind), vec![make_scene_with(kind, n, length, &params)?]))
        }
    }
}

fn alm_options(scene: Option<SceneKind>, a: &AlmArgs) -> Result<AlmOptions> {
    let mut o = scene.map(AlmOptions::for_scene).unwrap_or_default();
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = a.$f { o.$f = v; })* };
    }
    set!(rho, w_stiff, w_rest, mu, eps, eps_p, k_max, constraint_rel_tol);
    if a.eta.is_some() {
        o.eta = a.eta;
    }
    if a.lbar_min.is_some() {
        o.lbar_min = a.lbar_min;
    }
    if let Some(p) = a.preconditioner {
        o.bcqp.preconditioner = p;
    }
    o.rest_shape_only |= a.rest_shape_only;
    o.penalty_only |= a.penalty_only;
    o.curvature_4d |= a.curvature_4d;
    o.validate()?;
    Ok(o)
}

fn print_table(t: &Table) -> Result<()> {
    t.write_tsv(std::io::stdout().lock())
}

pub fn optimize(a: OptimizeArgs) -> Result<u8> {
    let (scene, strands) = load(&a.strand)?;
    let options = alm_options(scene, &a.alm)?;
    let dir = output_dir(a.output)?;
    let mode = if a.sequential { Execution::Sequential } else { Execution::Parallel };
    let start = Instant::now();
    let results = optimize_batch(&strands, &options, mode).into_iter().collect::<Result<Vec<_>>>()?;
    let wall = start.elapsed();

    let mut table = Table::new([
        "strand", "status", "termination", "iterations", "initial_c", "final_c", "ratio", "mprgp_iters", "wall_ms",
    ]);
    let mut params = Vec::with_capacity(results.len());
    let mut all_converged = true;
    for (i, (rest, report)) in results.iter().enumerate() {
        all_converged &= report.converged();
        table.push([
            i.to_string(),
            format!("{:?}", report.status),
            format!("{:?}", report.termination),
            report.iterations.to_string(),
            format!("{:e}", report.initial_constraint_norm),
            format!("{:e}", report.final_constraint_norm),
            format!("{:e}", report.constraint_ratio()),
            report.total_mprgp_iters.to_string(),
            format!("{:.3}", report.wall_ns as f64 * 1e-6),
        ]);
        let name = if results.len() == 1 { "convergence.csv".to_string() } else { format!("convergence_{i:04}.csv") };
        write_convergence_csv(&report.log, BufWriter::new(File::create(dir.join(name))?))?;
        params.push(ParamsFile::new(rest, Some(report)));
    }
    write_params_json(&params, BufWriter::new(File::create(dir.join("params.json"))?))?;
    table.write_tsv(File::create(dir.join("summary.tsv"))?)?;
    print_table(&table)?;
    eprintln!("optimized {} strand(s) in {:.1} ms", results.len(), wall.as_secs_f64() * 1e3);
    Ok(if all_converged || a.allow_partial { exit::OK } else { exit::NOT_CONVERGED })
}

fn load_params(path: &Path, strands: &[Strand]) -> Result<Vec<sagfree::strand::RestParams>> {
    let files = read_params_json(BufReader::new(File::open(path)?))?;
    if files.len() != strands.len() {
        return Err(Error::Parse(format!(
            "parameter file holds {} strand(s), input has {}",
            files.len(),
            strands.len()
        )));
    }
    files.iter().zip(strands).map(|(f, (c, _))| f.to_rest(c.n)).collect()
}

pub fn simulate(a: SimulateArgs) -> Result<u8> {
    let (_, strands) = load(&a.strand)?;
    let rests = match &a.params {
        Some(p) => load_params(p, &strands)?,
        None => strands.iter().map(|(c, s)| naive_rest_params(c, s)).collect::<Result<_>>()?,
    };
    let format: TrajectoryFormat = a.format.as_deref().unwrap_or("csv").parse()?;
    let dir = output_dir(a.output)?;
    let defaults = SimOptions::default();
    let period = a.period.unwrap_or(0.5);
    if !(period > 0.0) {
        return Err(Error::Config("--period must be positive".into()));
    }

    let runs = map_ordered(&strands, Execution::Parallel, |i, (config, state)| {
        let mass = MassMatrix::new(config, &naive_rest_params(config, state)?.rest_len);
        let options = SimOptions {
            dt: a.dt.unwrap_or(config.dt),
            steps_per_frame: a.steps_per_frame.unwrap_or(defaults.steps_per_frame),
            frames: a.frames.unwrap_or(defaults.frames),
            root_motion: match a.oscillate {
                Some(amp) => RootMotion::vertical_oscillation(state, amp, period, 1),
                None => RootMotion::default(),
            },
        };
        let traj = run_sim(config, state, &rests[i], &mass, &options)?;
        Ok::<_, Error>((traj, options.dt * options.steps_per_frame as f64))
    });

    let mut table = Table::new(["strand", "frames", "length", "max_drift", "drift_ratio", "final_kinetic", "clamped_pivots"]);
    for (i, run) in runs.into_iter().enumerate() {
        let (traj, frame_dt) = run?;
        let sub = if strands.len() == 1 { dir.clone() } else { dir.join(format!("strand_{i:04}")) };
        write_trajectory(&traj, &sub, format)?;
        write_kinetic_csv(&traj.kinetic, frame_dt, BufWriter::new(File::create(sub.join("kinetic.csv"))?))?;
        let length = strands[i].1.length();
        let drift = traj.max_drift();
        table.push([
            i.to_string(),
            (traj.frames.len() - 1).to_string(),
            format!("{length:e}"),
            format!("{drift:e}"),
            format!("{:e}", drift / length),
            format!("{:e}", traj.kinetic.last().copied().unwrap_or(0.0)),
            traj.max_clamp_count.to_string(),
        ]);
    }
    table.write_tsv(File::create(dir.join("summary.tsv"))?)?;
    print_table(&table)?;
    Ok(exit::OK)
}

pub fn check_grad(a: CheckGradArgs) -> Result<u8> {
    let defaults = CheckOptions::default();
    let options = CheckOptions {
        seed: a.seed.unwrap_or(defaults.seed),
        strands: a.strands.unwrap_or(defaults.strands),
        n: a.n.unwrap_or(defaults.n),
        flip_sign: a.flip_sign.as_deref().map(str::parse::<Category>).transpose()?,
    };
    let report = check_gradients(&options)?;
    let mut table = Table::new(["category", "checks", "worst_rel_error", "tolerance", "status"]);
    for r in &report.results {
        table.push([
            r.category.to_string(),
            r.checks.to_string(),
            format!("{:e}", r.worst),
            format!("{:e}", r.tolerance),
            if r.passed() { "PASS" } else { "FAIL" }.to_string(),
        ]);
    }
    print_table(&table)?;
    Ok(if report.passed() { exit::OK } else { exit::NOT_CONVERGED })
}

pub fn bench_bcqp(mut a: BenchArgs) -> Result<u8> {
    if a.strand.scene.is_none() && a.strand.input.is_none() {
        a.strand.scene = Some(SceneKind::Horizontal);
    }
    a.alm.mu = a.alm.mu.or(Some(0.4));
    let kinds: Vec<PreconditionerKind> = a
        .preconditioners
        .as_deref()
        .unwrap_or("asc,diagonal")
        .split(',')
        .map(|s| s.trim().parse())
        .collect::<Result<_>>()?;
    let (scene, strands) = load(&a.strand)?;
    let (config, state) = strands
        .into_iter()
        .next()
        .ok_or_else(|| Error::Parse("input holds no strand".into()))?;
    let options = alm_options(scene, &a.alm)?;
    let dir = output_dir(a.output)?;

    let rest0 = naive_rest_params(&config, &state)?;
    let prob = AlmProblem::new(&config, &state, &rest0, &options)?;
    let lambda = vec![0.0; prob.mass().active().len()];
    let mut system = prob.newton_subproblem(prob.p0(), &lambda)?;
    if a.unbounded {
        system.lo.fill(f64::NEG_INFINITY);
        system.hi.fill(f64::INFINITY);
    }

    let mut table = Table::new(["solver", "iterations", "converged", "residual", "wall_us", "clamped_pivots"]);
    for kind in kinds {
        let bcqp = BcqpOptions {
            preconditioner: kind,
            record_history: true,
            max_iter: a.max_iter.unwrap_or(BcqpOptions::default().max_iter),
            ..options.bcqp.clone()
        };
        let start = Instant::now();
        let prec = Preconditioner::build(kind, &system.a)?;
        let res = mprgp_with(&system, &bcqp, &prec)?;
        let wall = start.elapsed();
        write_residual_csv(
            &res.residual_history,
            BufWriter::new(File::create(dir.join(format!("residual_{kind}.csv")))?),
        )?;
        table.push([
            kind.to_string(),
            res.iterations.to_string(),
            res.converged().to_string(),
            format!("{:e}", res.residual),
            format!("{:.1}", wall.as_secs_f64() * 1e6),
            res.clamp_count.to_string(),
        ]);
    }
    if let Some(sweeps) = a.pgs_sweeps {
        let start = Instant::now();
        let x = pgs_solve(&system, sweeps);
        let wall = start.elapsed();
        let (phi, beta) = projected_gradient_parts(&system.a, &system.b, &x, &system.lo, &system.hi)?;
        let r: Vec<f64> = phi.iter().zip(&beta).map(|(p, b)| p + b).collect();
        let residual = norm2(&r);
        let tol = options.bcqp.tol_abs.max(options.bcqp.tol_rel * norm2(&system.b));
        table.push([
            "pgs".to_string(),
            sweeps.to_string(),
            (residual <= tol).to_string(),
            format!("{residual:e}"),
            format!("{:.1}", wall.as_secs_f64() * 1e6),
            "0".to_string(),
        ]);
    }
    table.write_tsv(File::create(dir.join("summary.tsv"))?)?;
    print_table(&table)?;
    Ok(exit::OK)
}

