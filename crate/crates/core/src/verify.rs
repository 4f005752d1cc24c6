//! Finite-difference checks of every analytic gradient and Jacobian column
//! on seeded random strands.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::alm::{AlmOptions, AlmProblem};
use crate::energy::{
    energy_bend, energy_inertia, energy_stretch, energy_twist, grad_bend, grad_inertia, grad_stretch,
    grad_twist, stencil_offset, total_force_geom, Geometry, STENCIL,
};
use crate::error::{Error, Result};
use crate::jacobian::{assemble_jacobian, ParamKind, ParamLayout};
use crate::linalg::norm2;
use crate::strand::{dof_vertex, naive_rest_params, MassMatrix, RestParams, StrandConfig, StrandState, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Inertia,
    Stretch,
    Bend,
    Twist,
    JacRestLen,
    JacAlpha,
    JacRestCurv,
    JacBeta,
    JacRestTwist,
    JacGamma,
    Lagrangian,
    LagrangianRestLen,
}

impl Category {
    pub const ALL: [Category; 12] = [
        Category::Inertia,
        Category::Stretch,
        Category::Bend,
        Category::Twist,
        Category::JacRestLen,
        Category::JacAlpha,
        Category::JacRestCurv,
        Category::JacBeta,
        Category::JacRestTwist,
        Category::JacGamma,
        Category::Lagrangian,
        Category::LagrangianRestLen,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Inertia => "grad_inertia",
            Category::Stretch => "grad_stretch",
            Category::Bend => "grad_bend",
            Category::Twist => "grad_twist",
            Category::JacRestLen => "jac_rest_len",
            Category::JacAlpha => "jac_alpha",
            Category::JacRestCurv => "jac_rest_curv",
            Category::JacBeta => "jac_beta",
            Category::JacRestTwist => "jac_rest_twist",
            Category::JacGamma => "jac_gamma",
            Category::Lagrangian => "grad_lagrangian",
            Category::LagrangianRestLen => "grad_lagrangian_rest_len",
        }
    }

    /// The rest-length entries of the Lagrangian gradient drop second-order
    /// terms and get a looser tolerance.
    pub fn tolerance(self) -> f64 {
        match self {
            Category::LagrangianRestLen => 1e-4,
            _ => 1e-6,
        }
    }

    fn of_param(kind: ParamKind) -> Self {
        match kind {
            ParamKind::RestLen => Category::JacRestLen,
            ParamKind::Alpha => Category::JacAlpha,
            ParamKind::RestCurv(_) | ParamKind::RestCurvShared(_) => Category::JacRestCurv,
            ParamKind::Beta => Category::JacBeta,
            ParamKind::RestTwist => Category::JacRestTwist,
            ParamKind::Gamma => Category::JacGamma,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown check category '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOptions {
    pub seed: u64,
    pub strands: usize,
    pub n: usize,
    /// Negates the analytic values of one category before comparing.
    pub flip_sign: Option<Category>,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            strands: 100,
            n: 10,
            flip_sign: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CategoryResult {
    pub category: Category,
    pub checks: usize,
    pub worst: f64,
    pub tolerance: f64,
}

impl CategoryResult {
    pub fn passed(&self) -> bool {
        self.checks > 0 && self.worst <= self.tolerance
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckReport {
    pub seed: u64,
    pub strands: usize,
    pub results: Vec<CategoryResult>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(CategoryResult::passed)
    }

    pub fn get(&self, c: Category) -> &CategoryResult {
        self.results.iter().find(|r| r.category == c).expect("every category is reported")
    }
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = norm2(a).max(norm2(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// A random bent and twisted strand with rest parameters perturbed away
/// from its geometry and random per-element coefficients.
pub fn random_strand(rng: &mut impl Rng, n: usize) -> Result<(StrandConfig, StrandState, RestParams, MassMatrix)> {
    let mut x = vec![Vec3::zeros()];
    let mut dir = Vec3::new(0.0, -1.0, 0.0);
    for _ in 1..n {
        let jitter = Vec3::new(
            rng.random_range(-0.6..0.6),
            rng.random_range(-0.6..0.6),
            rng.random_range(-0.6..0.6),
        );
        dir = (dir + jitter).normalize();
        let next = x[x.len() - 1] + dir * rng.random_range(0.05..0.15);
        x.push(next);
    }
    let theta = (0..n - 1).map(|_| rng.random_range(-1.0..1.0)).collect();
    let state = StrandState::new(x, theta)?;
    let mut config = StrandConfig::uniform(n, 0.05, 1.0, 1.0, 1.0, 1.0);
    for c in config.c_st.iter_mut().chain(&mut config.c_be).chain(&mut config.c_tw) {
        *c = rng.random_range(0.5..2.0);
    }
    let mut rest = naive_rest_params(&config, &state)?;
    for l in &mut rest.rest_len {
        *l *= rng.random_range(0.8..1.2);
    }
    for k in &mut rest.rest_curv {
        for v in k.iter_mut() {
            *v += rng.random_range(-0.5..0.5);
        }
    }
    for m in &mut rest.rest_twist {
        *m += rng.random_range(-0.5..0.5);
    }
    for a in rest.alpha.iter_mut().chain(&mut rest.beta).chain(&mut rest.gamma) {
        *a *= rng.random_range(0.5..2.0);
    }
    let mass = MassMatrix::new(&config, &rest.rest_len);
    Ok((config, state, rest, mass))
}

struct Tally {
    worst: Vec<f64>,
    checks: Vec<usize>,
    flip: Option<Category>,
}

impl Tally {
    fn record(&mut self, c: Category, analytic: &[f64], fd: &[f64]) {
        let k = c as usize;
        let err = if self.flip == Some(c) {
            let flipped: Vec<f64> = analytic.iter().map(|v| -v).collect();
            relative_error(&flipped, fd)
        } else {
            relative_error(analytic, fd)
        };
        self.worst[k] = self.worst[k].max(err);
        self.checks[k] += 1;
    }
}

/// Central differences over generalized DOFs, moving the frames by
/// time-parallel transport for every probe.
fn fd_state(
    state: &StrandState,
    dofs: std::ops::Range<usize>,
    h: f64,
    energy: impl Fn(&StrandState) -> Result<f64>,
) -> Result<Vec<f64>> {
    let q = state.q();
    dofs.map(|k| {
        let probe = |sign: f64| -> Result<f64> {
            let mut s = state.clone();
            let mut qq = q.clone();
            qq[k] += sign * h;
            s.set_q(&qq)?;
            energy(&s)
        };
        Ok((probe(1.0)? - probe(-1.0)?) / (2.0 * h))
    })
    .collect()
}

fn check_energies(
    tally: &mut Tally,
    config: &StrandConfig,
    state: &StrandState,
    rest: &RestParams,
    mass: &MassMatrix,
    rng: &mut impl Rng,
) -> Result<()> {
    let n = config.n;
    let q = state.q();
    let q_star: Vec<f64> = q.iter().map(|v| v + rng.random_range(-0.05..0.05)).collect();
    let dt = 0.1;
    let h = 1e-6;
    let g = grad_inertia(&q, &q_star, mass, dt);
    let fd: Vec<f64> = (0..q.len())
        .map(|k| {
            let (mut a, mut b) = (q.clone(), q.clone());
            a[k] += h;
            b[k] -= h;
            (energy_inertia(&a, &q_star, mass, dt) - energy_inertia(&b, &q_star, mass, dt)) / (2.0 * h)
        })
        .collect();
    tally.record(Category::Inertia, &g, &fd);

    let geom = Geometry::new(state)?;
    let h = 1e-7;
    for i in 1..n - 1 {
        let off = stencil_offset(i);
        let gs = grad_stretch(config, &geom, rest, i)?;
        let mut ana = vec![0.0; 7];
        for k in 0..3 {
            ana[k] = -gs[k];
            ana[4 + k] = gs[k];
        }
        let fd = fd_state(state, dof_vertex(i)..dof_vertex(i) + 7, h, |s| {
            energy_stretch(config, &Geometry::new(s)?, rest, i)
        })?;
        tally.record(Category::Stretch, &ana, &fd);

        let gb = grad_bend(config, &geom, rest, i)?;
        let fd = fd_state(state, off..off + STENCIL, h, |s| energy_bend(config, &Geometry::new(s)?, rest, i))?;
        tally.record(Category::Bend, &gb, &fd);

        let gt = grad_twist(config, &geom, rest, i)?;
        let fd = fd_state(state, off..off + STENCIL, h, |s| energy_twist(config, &Geometry::new(s)?, rest, i))?;
        tally.record(Category::Twist, &gt, &fd);
    }
    Ok(())
}

fn check_jacobian(
    tally: &mut Tally,
    config: &StrandConfig,
    state: &StrandState,
    rest: &RestParams,
    mass: &MassMatrix,
) -> Result<()> {
    let n = config.n;
    let geom = Geometry::new(state)?;
    let mut synced = rest.clone();
    synced.synchronize_curvature();
    for (layout, rest) in [(ParamLayout::full(n)?, &synced), (ParamLayout::rest_shape_4d(n)?, rest)] {
        let jac = assemble_jacobian(config, &geom, rest, &layout)?;
        let p = layout.extract(rest);
        for col in 0..layout.ncols() {
            // Linear in every parameter but l̄.
            let h = 1e-4 * p[col].abs().max(1e-2);
            let eval = |sign: f64| -> Result<Vec<f64>> {
                let mut pp = p.clone();
                pp[col] += sign * h;
                let mut r = rest.clone();
                layout.apply(&pp, &mut r)?;
                Ok(total_force_geom(config, &geom, &r, mass)?.values)
            };
            let (a, b) = (eval(1.0)?, eval(-1.0)?);
            let fd: Vec<f64> = a.iter().zip(&b).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            let an: Vec<f64> = (0..jac.nrows()).map(|r| jac.get(r, col)).collect();
            tally.record(Category::of_param(layout.describe(col).1), &an, &fd);
        }
    }
    Ok(())
}

fn check_lagrangian(tally: &mut Tally, config: &StrandConfig, state: &StrandState, rng: &mut impl Rng) -> Result<()> {
    let rest0 = naive_rest_params(config, state)?;
    let options = AlmOptions {
        rho: 1.0,
        w_stiff: 1.0,
        ..AlmOptions::default()
    };
    let prob = AlmProblem::new(config, state, &rest0, &options)?;
    let p: Vec<f64> = prob
        .p0()
        .iter()
        .enumerate()
        .map(|(c, v)| match prob.layout().describe(c).1 {
            ParamKind::RestLen => v * rng.random_range(0.9..1.1),
            ParamKind::Alpha | ParamKind::Beta | ParamKind::Gamma => v * rng.random_range(0.5..2.0),
            _ => v + rng.random_range(-0.2..0.2),
        })
        .collect();
    let lambda: Vec<f64> = (0..prob.mass().active().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (g, _) = prob.gradient(&p, &lambda)?;
    let (mut an, mut fd) = ([Vec::new(), Vec::new()], [Vec::new(), Vec::new()]);
    for (k, &gk) in g.iter().enumerate() {
        let h = 1e-6 * p[k].abs().max(1e-2);
        let (mut a, mut b) = (p.clone(), p.clone());
        a[k] += h;
        b[k] -= h;
        let part = usize::from(prob.layout().describe(k).1 == ParamKind::RestLen);
        an[part].push(gk);
        fd[part].push((prob.value(&a, &lambda)? - prob.value(&b, &lambda)?) / (2.0 * h));
    }
    tally.record(Category::Lagrangian, &an[0], &fd[0]);
    tally.record(Category::LagrangianRestLen, &an[1], &fd[1]);
    Ok(())
}

/// Runs every check on `options.strands` random strands.
pub fn check_gradients(options: &CheckOptions) -> Result<CheckReport> {
    if options.n < 4 {
        return Err(Error::Config("strands need at least 4 vertices".into()));
    }
    let mut tally = Tally {
        worst: vec![0.0; Category::ALL.len()],
        checks: vec![0; Category::ALL.len()],
        flip: options.flip_sign,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    for _ in 0..options.strands {
        let (config, state, rest, mass) = random_strand(&mut rng, options.n)?;
        check_energies(&mut tally, &config, &state, &rest, &mass, &mut rng)?;
        check_jacobian(&mut tally, &config, &state, &rest, &mass)?;
        check_lagrangian(&mut tally, &config, &state, &mut rng)?;
    }
    let results = Category::ALL
        .into_iter()
        .map(|c| CategoryResult {
            category: c,
            checks: tally.checks[c as usize],
            worst: tally.worst[c as usize],
            tolerance: c.tolerance(),
        })
        .collect();
    Ok(CheckReport {
        seed: options.seed,
        strands: options.strands,
        results,
    })
}
