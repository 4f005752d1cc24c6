//! Augmented Lagrangian parameter optimization.
//!
//! Minimizes `½‖p − p₀‖²_W` subject to `c(p) = M^{-1/2} f(p) = 0` and box
//! bounds on `p`. Each outer iteration takes one Gauss–Newton step on the
//! augmented Lagrangian (a box-constrained QP solved by MPRGP), a
//! backtracking line search, and a multiplier update.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bcqp::{mprgp_with, BcqpOptions, BcqpProblem, Preconditioner};
use crate::energy::{total_force_geom, Geometry};
use crate::error::{Error, Result};
use crate::jacobian::{assemble_jacobian, BandedRect, ParamKind, ParamLayout};
use crate::linalg::{dot, norm2, BandedSym};
use crate::strand::{MassMatrix, RestParams, SceneKind, StrandConfig, StrandState};

/// Global stiffness scale and unitless multipliers.
#[derive(Clone, Debug, PartialEq)]
pub struct StiffnessScaling {
    pub s: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
}

/// `s` is the mean of `(c_st,i + c_be,i + c_tw,i) / 3` over interior vertices.
pub fn stiffness_scaling(c_st: &[f64], c_be: &[f64], c_tw: &[f64]) -> Result<StiffnessScaling> {
    let n = c_be.len();
    if n < 3 || c_tw.len() != n || c_st.len() + 1 != n {
        return Err(Error::BadDimension("stiffness arrays do not describe one strand".into()));
    }
    let mut sum = 0.0;
    for i in 1..n - 1 {
        sum += c_st[i] + c_be[i] + c_tw[i];
    }
    let s = sum / (3 * (n - 2)) as f64;
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Config("stiffness coefficients must be positive".into()));
    }
    Ok(StiffnessScaling {
        s,
        alpha: c_st.iter().map(|c| c / s).collect(),
        beta: c_be.iter().map(|c| c / s).collect(),
        gamma: c_tw.iter().map(|c| c / s).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlmOptions {
    pub rho: f64,
    /// Regularizer weight on stiffness multipliers.
    pub w_stiff: f64,
    /// Regularizer weight on rest shape entries.
    pub w_rest: f64,
    pub eps_p: f64,
    pub k_max: usize,
    /// Allowed rest curvature change; infinite leaves it unbounded.
    pub mu: f64,
    /// Allowed rest twist change; `mu / 4` when absent.
    pub eta: Option<f64>,
    /// Lower bound of rest lengths and stiffness multipliers.
    pub eps: f64,
    /// Lower bound of rest lengths; `eps` when absent.
    pub lbar_min: Option<f64>,
    pub rest_shape_only: bool,
    /// Freezes the multipliers at zero, leaving a quadratic penalty.
    pub penalty_only: bool,
    /// With `rest_shape_only`, optimizes all four rest curvature slots.
    pub curvature_4d: bool,
    /// `‖c‖ ≤ constraint_rel_tol · ‖c(p₀)‖` counts as equilibrium.
    pub constraint_rel_tol: f64,
    pub armijo_c1: f64,
    pub max_halvings: usize,
    pub record_iterates: bool,
    pub bcqp: BcqpOptions,
}

impl Default for AlmOptions {
    fn default() -> Self {
        Self {
            rho: 1e6,
            w_stiff: 1e3,
            w_rest: 1.0,
            eps_p: 1e-8,
            k_max: 100,
            mu: 1.0,
            eta: None,
            eps: 1e-10,
            lbar_min: None,
            rest_shape_only: false,
            penalty_only: false,
            curvature_4d: false,
            constraint_rel_tol: 1e-6,
            armijo_c1: 1e-4,
            max_halvings: 20,
            record_iterates: false,
            bcqp: BcqpOptions::default(),
        }
    }
}

impl AlmOptions {
    /// Per-scene defaults: the vertical strand bounds rest lengths from
    /// below, the horizontal one tightens the curvature box.
    pub fn for_scene(kind: SceneKind) -> Self {
        match kind {
            SceneKind::Vertical => Self {
                lbar_min: Some(1e-2),
                ..Self::default()
            },
            SceneKind::Horizontal => Self {
                mu: 0.2,
                ..Self::default()
            },
            SceneKind::Coil => Self {
                w_rest: 1e4,
                ..Self::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) {
            return Err(Error::Config("rho must be positive".into()));
        }
        if !(self.mu > 0.0) {
            return Err(Error::Config("mu must be positive".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("eps must be positive".into()));
        }
        if !(self.w_stiff > 0.0 && self.w_rest > 0.0) {
            return Err(Error::Config("regularizer weights must be positive".into()));
        }
        if let Some(eta) = self.eta {
            if !(eta > 0.0) {
                return Err(Error::Config("eta must be positive".into()));
            }
        }
        if let Some(l) = self.lbar_min {
            if !(l > 0.0) {
                return Err(Error::Config("lbar_min must be positive".into()));
            }
        }
        if self.curvature_4d && !self.rest_shape_only {
            return Err(Error::Config("curvature_4d requires rest_shape_only".into()));
        }
        Ok(())
    }

    pub fn eta(&self) -> f64 {
        self.eta.unwrap_or(self.mu / 4.0)
    }

    pub fn layout(&self, n: usize) -> Result<ParamLayout> {
        match (self.rest_shape_only, self.curvature_4d) {
            (false, _) => ParamLayout::full(n),
            (true, false) => ParamLayout::rest_shape_only(n),
            (true, true) => ParamLayout::rest_shape_4d(n),
        }
    }
}

/// Box bounds around `p0`: rest curvature `± μ`, rest twist `± η`, rest
/// length and stiffness bounded below.
pub fn compute_bounds(p0: &[f64], layout: &ParamLayout, options: &AlmOptions) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![0.0; p0.len()];
    let mut hi = vec![0.0; p0.len()];
    let eta = options.eta();
    for (c, &v) in p0.iter().enumerate() {
        let (_, kind) = layout.describe(c);
        (lo[c], hi[c]) = match kind {
            ParamKind::RestCurvShared(_) | ParamKind::RestCurv(_) => (v - options.mu, v + options.mu),
            ParamKind::RestTwist => (v - eta, v + eta),
            ParamKind::RestLen => (options.lbar_min.unwrap_or(options.eps), f64::INFINITY),
            ParamKind::Alpha | ParamKind::Beta | ParamKind::Gamma => (options.eps, f64::INFINITY),
        };
    }
    (lo, hi)
}

/// `λ − ρ c`.
pub fn dual_update(lambda: &[f64], c: &[f64], rho: f64) -> Result<Vec<f64>> {
    if lambda.len() != c.len() {
        return Err(Error::DimensionMismatch {
            expected: lambda.len(),
            found: c.len(),
        });
    }
    Ok(lambda.iter().zip(c).map(|(l, c)| l - rho * c).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlmStatus {
    Converged,
    NotConverged,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlmTermination {
    StepTolerance,
    MaxIterations,
    LineSearchStalled,
    Failed(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub k: usize,
    pub norm_dp: f64,
    pub norm_c: f64,
    pub mprgp_iters: usize,
    pub wall_ns: u128,
    pub step: f64,
    pub lagrangian_before: f64,
    pub lagrangian_after: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlmReport {
    pub status: AlmStatus,
    pub termination: AlmTermination,
    pub iterations: usize,
    pub initial_constraint_norm: f64,
    pub final_constraint_norm: f64,
    pub total_mprgp_iters: usize,
    pub wall_ns: u128,
    pub log: Vec<IterationLog>,
    pub clamped_pivots: usize,
    /// Accepted iterates, when requested in the options.
    #[serde(skip)]
    pub iterates: Vec<Vec<f64>>,
    #[serde(skip)]
    pub lower: Vec<f64>,
    #[serde(skip)]
    pub upper: Vec<f64>,
}

impl AlmReport {
    pub fn converged(&self) -> bool {
        self.status == AlmStatus::Converged
    }

    /// `‖c(p)‖ / ‖c(p₀)‖`.
    pub fn constraint_ratio(&self) -> f64 {
        if self.initial_constraint_norm == 0.0 {
            0.0
        } else {
            self.final_constraint_norm / self.initial_constraint_norm
        }
    }
}

/// Outcome of the backtracking search.
#[derive(Clone, Debug, PartialEq)]
pub struct LineSearch {
    pub p: Vec<f64>,
    pub accepted: bool,
    pub step: f64,
    pub value: f64,
}

/// Everything fixed during one optimization: geometry at the target pose,
/// mass, layout, bounds and regularizer weights.
#[derive(Clone, Debug)]
pub struct AlmProblem {
    config: StrandConfig,
    geom: Geometry,
    mass: MassMatrix,
    layout: ParamLayout,
    template: RestParams,
    p0: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    weights: Vec<f64>,
    inv_mass: Vec<f64>,
    inv_sqrt_mass: Vec<f64>,
    options: AlmOptions,
}

impl AlmProblem {
    pub fn new(config: &StrandConfig, state: &StrandState, rest0: &RestParams, options: &AlmOptions) -> Result<Self> {
        config.validate()?;
        options.validate()?;
        let n = config.n;
        if state.n() != n || rest0.rest_len.len() != n - 1 {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: state.n(),
            });
        }
        let geom = Geometry::new(state)?;
        let mass = MassMatrix::new(config, &rest0.rest_len);
        let layout = options.layout(n)?;
        let p0 = layout.extract(rest0);
        let (lo, hi) = compute_bounds(&p0, &layout, options);
        if let Some(c) = (0..p0.len()).find(|&c| !(lo[c] <= p0[c] && p0[c] <= hi[c])) {
            let (vertex, kind) = layout.describe(c);
            return Err(Error::Config(format!(
                "initial {kind:?} at vertex {vertex} is {} but must lie in [{}, {}]",
                p0[c], lo[c], hi[c]
            )));
        }
        let weights = (0..layout.ncols())
            .map(|c| {
                if layout.describe(c).1.is_stiffness() {
                    options.w_stiff
                } else {
                    options.w_rest
                }
            })
            .collect();
        let inv_mass: Vec<f64> = mass.active().iter().map(|m| 1.0 / m).collect();
        let inv_sqrt_mass = mass.active().iter().map(|m| 1.0 / m.sqrt()).collect();
        Ok(Self {
            config: config.clone(),
            geom,
            mass,
            layout,
            template: rest0.clone(),
            p0,
            lo,
            hi,
            weights,
            inv_mass,
            inv_sqrt_mass,
            options: options.clone(),
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn p0(&self) -> &[f64] {
        &self.p0
    }

    pub fn bounds(&self) -> (&[f64], &[f64]) {
        (&self.lo, &self.hi)
    }

    pub fn mass(&self) -> &MassMatrix {
        &self.mass
    }

    pub fn options(&self) -> &AlmOptions {
        &self.options
    }

    pub fn rest_at(&self, p: &[f64]) -> Result<RestParams> {
        let mut rest = self.template.clone();
        self.layout.apply(p, &mut rest)?;
        Ok(rest)
    }

    pub fn force(&self, p: &[f64]) -> Result<Vec<f64>> {
        let rest = self.rest_at(p)?;
        Ok(total_force_geom(&self.config, &self.geom, &rest, &self.mass)?.values)
    }

    pub fn constraint(&self, p: &[f64]) -> Result<Vec<f64>> {
        Ok(self.force(p)?.iter().zip(&self.inv_sqrt_mass).map(|(f, s)| f * s).collect())
    }

    pub fn jacobian(&self, p: &[f64]) -> Result<BandedRect> {
        let rest = self.rest_at(p)?;
        assemble_jacobian(&self.config, &self.geom, &rest, &self.layout)
    }

    fn regularizer(&self, p: &[f64]) -> f64 {
        0.5 * p
            .iter()
            .zip(&self.p0)
            .zip(&self.weights)
            .map(|((p, p0), w)| w * (p - p0) * (p - p0))
            .sum::<f64>()
    }

    /// `L(p, λ) = R(p) − λᵀc(p) + ρ/2 ‖c(p)‖²`.
    pub fn value(&self, p: &[f64], lambda: &[f64]) -> Result<f64> {
        let c = self.constraint(p)?;
        Ok(self.regularizer(p) - dot(lambda, &c) + 0.5 * self.options.rho * dot(&c, &c))
    }

    /// `∇L = W(p − p₀) + Jᵀ M^{-1/2} (ρ c − λ)`, with the Jacobian used.
    pub fn gradient(&self, p: &[f64], lambda: &[f64]) -> Result<(Vec<f64>, BandedRect)> {
        let c = self.constraint(p)?;
        let jac = self.jacobian(p)?;
        let y: Vec<f64> = c
            .iter()
            .zip(lambda)
            .zip(&self.inv_sqrt_mass)
            .map(|((c, l), s)| (self.options.rho * c - l) * s)
            .collect();
        let mut g = jac.tmatvec(&y)?;
        for k in 0..g.len() {
            g[k] += self.weights[k] * (p[k] - self.p0[k]);
        }
        Ok((g, jac))
    }

    /// Gauss–Newton Hessian `W + ρ Jᵀ M⁻¹ J`.
    pub fn gn_hessian(&self, jac: &BandedRect) -> Result<BandedSym> {
        let mut h = jac.weighted_gram(&self.inv_mass, self.options.rho)?;
        for (k, w) in self.weights.iter().enumerate() {
            h.add(k, k, *w)?;
        }
        Ok(h)
    }

    /// Solves the box-constrained Newton system over `[p_min − p, p_max − p]`,
    /// starting from `warm` projected into that box.
    /// The box-constrained quadratic model solved for `Δp` at `p`.
    pub fn newton_subproblem(&self, p: &[f64], lambda: &[f64]) -> Result<BcqpProblem> {
        let (grad, jac) = self.gradient(p, lambda)?;
        let hessian = self.gn_hessian(&jac)?;
        let lo = self.lo.iter().zip(p).map(|(l, p)| l - p).collect();
        let hi = self.hi.iter().zip(p).map(|(h, p)| h - p).collect();
        let b = grad.iter().map(|g| -g).collect();
        BcqpProblem::new(hessian, b, lo, hi, vec![0.0; p.len()])
    }

    pub fn newton_step(
        &self,
        p: &[f64],
        grad: &[f64],
        hessian: BandedSym,
        warm: Option<&[f64]>,
    ) -> Result<(Vec<f64>, usize, usize)> {
        let lo: Vec<f64> = self.lo.iter().zip(p).map(|(l, p)| l - p).collect();
        let hi: Vec<f64> = self.hi.iter().zip(p).map(|(h, p)| h - p).collect();
        let x0 = warm.map_or_else(|| vec![0.0; p.len()], <[f64]>::to_vec);
        let b = grad.iter().map(|g| -g).collect();
        let prec = Preconditioner::build(self.options.bcqp.preconditioner, &hessian)?;
        let problem = BcqpProblem::new(hessian, b, lo, hi, x0)?;
        let res = mprgp_with(&problem, &self.options.bcqp, &prec)?;
        Ok((res.x, res.iterations, res.clamp_count))
    }

    /// Clamps `p + τΔp` into the box.
    fn candidate(&self, p: &[f64], dp: &[f64], tau: f64) -> Vec<f64> {
        (0..p.len())
            .map(|k| (p[k] + tau * dp[k]).clamp(self.lo[k], self.hi[k]))
            .collect()
    }

    /// Backtracking with the Armijo condition on `L(·, λ)`.
    pub fn line_search_update(&self, p: &[f64], dp: &[f64], lambda: &[f64], value: f64, grad: &[f64]) -> Result<LineSearch> {
        let slope = dot(grad, dp);
        let mut tau = 1.0;
        for _ in 0..=self.options.max_halvings {
            let cand = self.candidate(p, dp, tau);
            let v = self.value(&cand, lambda)?;
            if v <= value + self.options.armijo_c1 * tau * slope {
                return Ok(LineSearch {
                    p: cand,
                    accepted: true,
                    step: tau,
                    value: v,
                });
            }
            tau *= 0.5;
        }
        Ok(LineSearch {
            p: p.to_vec(),
            accepted: false,
            step: 0.0,
            value,
        })
    }

    /// Runs the outer loop from `p₀`.
    pub fn solve(&self) -> (Vec<f64>, AlmReport) {
        let start = Instant::now();
        let opts = &self.options;
        let mut p = self.p0.clone();
        let mut lambda = vec![0.0; self.inv_mass.len()];
        let mut report = AlmReport {
            status: AlmStatus::NotConverged,
            termination: AlmTermination::MaxIterations,
            iterations: 0,
            initial_constraint_norm: 0.0,
            final_constraint_norm: 0.0,
            total_mprgp_iters: 0,
            wall_ns: 0,
            log: Vec::new(),
            clamped_pivots: 0,
            iterates: Vec::new(),
            lower: self.lo.clone(),
            upper: self.hi.clone(),
        };
        let c0 = match self.constraint(&p) {
            Ok(c) => c,
            Err(e) => {
                report.termination = AlmTermination::Failed(e.to_string());
                return (p, report);
            }
        };
        report.initial_constraint_norm = norm2(&c0);
        report.final_constraint_norm = report.initial_constraint_norm;
        if opts.record_iterates {
            report.iterates.push(p.clone());
        }

        let mut dp_prev: Option<Vec<f64>> = None;
        let mut norm_dp = f64::INFINITY;
        let mut k = 0;
        let outcome: Result<AlmTermination> = (|| {
            while norm_dp > opts.eps_p {
                if k >= opts.k_max {
                    return Ok(AlmTermination::MaxIterations);
                }
                let t0 = Instant::now();
                let value = self.value(&p, &lambda)?;
                let (grad, jac) = self.gradient(&p, &lambda)?;
                let h = self.gn_hessian(&jac)?;
                let warm: Option<Vec<f64>> = dp_prev.take();
                let (dp, iters, clamps) = self.newton_step(&p, &grad, h, warm.as_deref())?;
                norm_dp = norm2(&dp);
                let ls = self.line_search_update(&p, &dp, &lambda, value, &grad)?;
                report.total_mprgp_iters += iters;
                report.clamped_pivots += clamps;
                k += 1;
                let accepted = ls.accepted;
                if accepted {
                    p = ls.p;
                    if opts.record_iterates {
                        report.iterates.push(p.clone());
                    }
                }
                let c = self.constraint(&p)?;
                if !opts.penalty_only && accepted {
                    lambda = dual_update(&lambda, &c, opts.rho)?;
                }
                report.log.push(IterationLog {
                    k,
                    norm_dp,
                    norm_c: norm2(&c),
                    mprgp_iters: iters,
                    wall_ns: t0.elapsed().as_nanos(),
                    step: ls.step,
                    lagrangian_before: value,
                    lagrangian_after: ls.value,
                });
                report.final_constraint_norm = norm2(&c);
                if !accepted {
                    return Ok(AlmTermination::LineSearchStalled);
                }
                dp_prev = Some(dp);
            }
            Ok(AlmTermination::StepTolerance)
        })();
        report.termination = outcome.unwrap_or_else(|e| AlmTermination::Failed(e.to_string()));
        report.iterations = k;
        report.wall_ns = start.elapsed().as_nanos();
        let c = report.final_constraint_norm;
        if c == 0.0 || c <= opts.constraint_rel_tol * report.initial_constraint_norm {
            report.status = AlmStatus::Converged;
        }
        (p, report)
    }
}

/// Optimizes rest shape (and, unless ablated, stiffness) parameters so that
/// `state` is in static equilibrium.
pub fn optimize(
    config: &StrandConfig,
    state: &StrandState,
    rest0: &RestParams,
    options: &AlmOptions,
) -> Result<(RestParams, AlmReport)> {
    let problem = AlmProblem::new(config, state, rest0, options)?;
    let (p, report) = problem.solve();
    let rest = problem.rest_at(&p)?;
    Ok((rest, report))
}
