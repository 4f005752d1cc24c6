use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use sagfree::bcqp::PreconditionerKind;
use sagfree::strand::SceneKind;

#[derive(Debug, Parser)]
#[command(name = "sagfree", version, about = "Sag-free initialization of elastic rod strands")]
pub struct Cli {
    /// JSON file with default settings for the chosen command; flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize rest shape and stiffness so the strands hold their shape.
    Optimize(OptimizeArgs),
    /// Run the forward simulation and report drift from the initial shape.
    Simulate(SimulateArgs),
    /// Compare analytic gradients and Jacobians against finite differences.
    CheckGrad(CheckGradArgs),
    /// Run MPRGP with each preconditioner on one Newton system.
    BenchBcqp(BenchArgs),
}

/// Fills every unset field of `self` from `file`.
pub trait Merge {
    fn merge(self, file: Self) -> Self;
}

macro_rules! merge_fields {
    ($ty:ty { $($opt:ident),* } flags { $($flag:ident),* } nested { $($sub:ident),* }) => {
        impl Merge for $ty {
            fn merge(self, file: Self) -> Self {
                Self {
                    $($opt: self.$opt.or(file.$opt),)*
                    $($flag: self.$flag || file.$flag,)*
                    $($sub: self.$sub.merge(file.$sub),)*
                }
            }
        }
    };
}

#[derive(Clone, Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrandArgs {
    /// Built-in scene.
    #[arg(long)]
    pub scene: Option<SceneKind>,
    /// Strand file (.json, or .csv with one x,y,z row per vertex).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Vertex count of the built-in scene.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub length: Option<f64>,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub density: Option<f64>,
    #[arg(long)]
    pub c_st: Option<f64>,
    #[arg(long)]
    pub c_be: Option<f64>,
    #[arg(long)]
    pub c_tw: Option<f64>,
    #[arg(long)]
    pub gravity: Option<f64>,
}

merge_fields!(StrandArgs { scene, input, n, length, radius, density, c_st, c_be, c_tw, gravity } flags {} nested {});

#[derive(Clone, Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlmArgs {
    #[arg(long)]
    pub rho: Option<f64>,
    /// Regularizer weight of the stiffness parameters.
    #[arg(long)]
    pub w_stiff: Option<f64>,
    /// Regularizer weight of the rest shape parameters.
    #[arg(long)]
    pub w_rest: Option<f64>,
    /// Rest curvature box half-width.
    #[arg(long)]
    pub mu: Option<f64>,
    /// Rest twist box half-width (defaults to mu / 4).
    #[arg(long)]
    pub eta: Option<f64>,
    /// Lower bound on stiffness multipliers.
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub lbar_min: Option<f64>,
    #[arg(long)]
    pub eps_p: Option<f64>,
    #[arg(long)]
    pub k_max: Option<usize>,
    #[arg(long)]
    pub constraint_rel_tol: Option<f64>,
    #[arg(long)]
    pub preconditioner: Option<PreconditionerKind>,
    /// Optimize rest shape only, keeping the stiffness fixed.
    #[arg(long)]
    pub rest_shape_only: bool,
    /// Quadratic penalty only, without multiplier updates.
    #[arg(long)]
    pub penalty_only: bool,
    /// Four independent rest curvature components (requires --rest-shape-only).
    #[arg(long)]
    pub curvature_4d: bool,
}

merge_fields!(AlmArgs {
    rho, w_stiff, w_rest, mu, eta, eps, lbar_min, eps_p, k_max, constraint_rel_tol, preconditioner
} flags { rest_shape_only, penalty_only, curvature_4d } nested {});

#[derive(Clone, Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub strand: StrandArgs,
    #[command(flatten)]
    pub alm: AlmArgs,
    /// Output directory.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Exit 0 even when some strand does not converge.
    #[arg(long)]
    pub allow_partial: bool,
    /// Optimize multi-strand inputs one after another.
    #[arg(long)]
    pub sequential: bool,
}

merge_fields!(OptimizeArgs { output } flags { allow_partial, sequential } nested { strand, alm });

#[derive(Clone, Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub strand: StrandArgs,
    /// Optimized parameter file; naive rest parameters when absent.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub steps_per_frame: Option<usize>,
    /// Simulation step size.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Trajectory format: csv (one file per frame) or obj.
    #[arg(long)]
    pub format: Option<String>,
    /// Move the root up and down once by this amplitude, then hold it.
    #[arg(long)]
    pub oscillate: Option<f64>,
    /// Period of the root oscillation in seconds.
    #[arg(long)]
    pub period: Option<f64>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

merge_fields!(SimulateArgs {
    params, frames, steps_per_frame, dt, format, oscillate, period, output
} flags {} nested { strand });

#[derive(Clone, Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckGradArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub strands: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Negate one analytic category before comparing.
    #[arg(long)]
    pub flip_sign: Option<String>,
}

merge_fields!(CheckGradArgs { seed, strands, n, flip_sign } flags {} nested {});

#[derive(Clone, Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchArgs {
    #[command(flatten)]
    pub strand: StrandArgs,
    #[command(flatten)]
    pub alm: AlmArgs,
    /// Comma-separated preconditioners (none, diagonal, asc, jacobi, ssor).
    #[arg(long)]
    pub preconditioners: Option<String>,
    /// Also run projected Gauss-Seidel for this many sweeps.
    #[arg(long)]
    pub pgs_sweeps: Option<usize>,
    /// Drop the box so no bound can become active.
    #[arg(long)]
    pub unbounded: bool,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

merge_fields!(BenchArgs {
    preconditioners, pgs_sweeps, max_iter, output
} flags { unbounded } nested { strand, alm });
