//! Box-constrained convex QP `min ½xᵀAx − xᵀb, lo ≤ x ≤ hi` by MPRGP.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{default_pivot_floor, dot, norm2, ActiveSet, BandedSym, LdlFactor};

/// Relative tolerance for deciding that a DOF sits on its bound.
pub const AT_BOUND_TOL: f64 = 1e-14;

const POWER_STEPS: usize = 30;

#[derive(Clone, Debug)]
pub struct BcqpProblem {
    pub a: BandedSym,
    pub b: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Start point; projected into the box on entry.
    pub x0: Vec<f64>,
}

impl BcqpProblem {
    pub fn new(a: BandedSym, b: Vec<f64>, lo: Vec<f64>, hi: Vec<f64>, x0: Vec<f64>) -> Result<Self> {
        let n = a.n();
        for len in [b.len(), lo.len(), hi.len(), x0.len()] {
            if len != n {
                return Err(Error::DimensionMismatch { expected: n, found: len });
            }
        }
        if let Some(i) = (0..n).find(|&i| !(lo[i] <= hi[i])) {
            return Err(Error::Config(format!("empty box at DOF {i}: [{}, {}]", lo[i], hi[i])));
        }
        Ok(Self { a, b, lo, hi, x0 })
    }

    pub fn n(&self) -> usize {
        self.a.n()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let ax = self.a.matvec(x).expect("dimension checked at construction");
        0.5 * dot(x, &ax) - dot(x, &self.b)
    }

    pub fn project(&self, x: &mut [f64]) {
        for ((xi, lo), hi) in x.iter_mut().zip(&self.lo).zip(&self.hi) {
            *xi = xi.clamp(*lo, *hi);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PreconditionerKind {
    None,
    Diagonal,
    Asc,
    /// Weighted Jacobi baseline (ω = 0.5); benchmarks only.
    Jacobi,
    /// Symmetric SOR baseline (ω = 1.2); benchmarks only.
    Ssor,
}

impl PreconditionerKind {
    pub const ALL: [Self; 5] = [Self::None, Self::Diagonal, Self::Asc, Self::Jacobi, Self::Ssor];

    pub fn name(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Diagonal => "diagonal",
            Self::Asc => "asc",
            Self::Jacobi => "jacobi",
            Self::Ssor => "ssor",
        }
    }
}

impl fmt::Display for PreconditionerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PreconditionerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown preconditioner '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BcqpOptions {
    pub tol_abs: f64,
    pub tol_rel: f64,
    pub max_iter: usize,
    /// Proportioning constant Γ.
    pub gamma: f64,
    /// Expansion step length; estimated from the spectrum when absent.
    pub abar: Option<f64>,
    pub preconditioner: PreconditionerKind,
    pub record_history: bool,
}

impl Default for BcqpOptions {
    fn default() -> Self {
        Self {
            tol_abs: 1e-10,
            tol_rel: 1e-10,
            max_iter: 10_000,
            gamma: 1.0,
            abar: None,
            preconditioner: PreconditionerKind::Asc,
            record_history: false,
        }
    }
}

impl BcqpOptions {
    pub fn with_preconditioner(kind: PreconditionerKind) -> Self {
        Self {
            preconditioner: kind,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol_abs > 0.0 && self.tol_rel > 0.0) {
            return Err(Error::Config("BCQP tolerances must be positive".into()));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::Config("proportioning constant must be positive".into()));
        }
        if let Some(a) = self.abar {
            if !(a > 0.0) {
                return Err(Error::Config("expansion step must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Converged,
    MaxIter,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualSample {
    pub iteration: usize,
    pub wall_ns: u128,
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct BcqpResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
    pub final_active: ActiveSet,
    /// `‖φ + β‖₂` at the returned point.
    pub residual: f64,
    pub residual_history: Vec<ResidualSample>,
    pub cg_steps: usize,
    pub expansion_steps: usize,
    pub proportioning_steps: usize,
    /// Pivots clamped while building the preconditioner.
    pub clamp_count: usize,
}

impl BcqpResult {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }
}

/// Writes `iteration,wall_ns,residual` rows with a header.
pub fn write_residual_csv<W: Write>(history: &[ResidualSample], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "wall_ns", "residual"])?;
    for s in history {
        w.write_record([s.iteration.to_string(), s.wall_ns.to_string(), format!("{:e}", s.residual)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_residual_csv<R: std::io::Read>(input: R) -> Result<Vec<ResidualSample>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let field = |k: usize| rec.get(k).ok_or_else(|| Error::Parse("short residual row".into()));
        let parse_err = |e: &dyn fmt::Display| Error::Parse(e.to_string());
        out.push(ResidualSample {
            iteration: field(0)?.parse().map_err(|e| parse_err(&e))?,
            wall_ns: field(1)?.parse().map_err(|e| parse_err(&e))?,
            residual: field(2)?.parse().map_err(|e| parse_err(&e))?,
        });
    }
    Ok(out)
}

fn at_bound(x: f64, bound: f64) -> bool {
    bound.is_finite() && (x - bound).abs() <= AT_BOUND_TOL * bound.abs().max(1.0)
}

fn classify(x: &[f64], lo: &[f64], hi: &[f64], active: &mut ActiveSet) -> bool {
    let mut changed = false;
    for i in 0..x.len() {
        let flag = if at_bound(x[i], lo[i]) {
            -1
        } else if at_bound(x[i], hi[i]) {
            1
        } else {
            0
        };
        if active.flags()[i] != flag {
            active.set(i, flag);
            changed = true;
        }
    }
    changed
}

fn split_gradient(g: &[f64], active: &ActiveSet, phi: &mut [f64], beta: &mut [f64]) {
    for i in 0..g.len() {
        match active.flags()[i] {
            0 => {
                phi[i] = g[i];
                beta[i] = 0.0;
            }
            -1 => {
                phi[i] = 0.0;
                beta[i] = g[i].min(0.0);
            }
            _ => {
                phi[i] = 0.0;
                beta[i] = g[i].max(0.0);
            }
        }
    }
}

/// Free and chopped parts of `g = Ax − b` at feasible `x`.
pub fn projected_gradient_parts(
    a: &BandedSym,
    b: &[f64],
    x: &[f64],
    lo: &[f64],
    hi: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut g = a.matvec(x)?;
    for (gi, bi) in g.iter_mut().zip(b) {
        *gi -= bi;
    }
    let n = x.len();
    let mut active = ActiveSet::all_free(n);
    classify(x, lo, hi, &mut active);
    let mut phi = vec![0.0; n];
    let mut beta = vec![0.0; n];
    split_gradient(&g, &active, &mut phi, &mut beta);
    Ok((phi, beta))
}

/// Preconditioner restricted to the free DOFs of an active set.
#[derive(Clone, Debug)]
pub enum Preconditioner {
    None,
    Diagonal(Vec<f64>),
    /// One LDLᵀ factor of the full matrix, applied through filtered solves.
    Asc(LdlFactor),
    Jacobi { inv_diag: Vec<f64>, omega: f64 },
    Ssor { a: BandedSym, omega: f64 },
}

/// Factorizes `a` once for reuse across every MPRGP iteration.
pub fn asc_preconditioner(a: &BandedSym) -> Result<Preconditioner> {
    Ok(Preconditioner::Asc(LdlFactor::factorize(a, default_pivot_floor(a))?))
}

impl Preconditioner {
    pub fn build(kind: PreconditionerKind, a: &BandedSym) -> Result<Self> {
        let inv_diag = || -> Result<Vec<f64>> {
            (0..a.n())
                .map(|i| {
                    let d = a.diag(i);
                    if d > 0.0 {
                        Ok(1.0 / d)
                    } else {
                        Err(Error::NotSpd { curvature: d })
                    }
                })
                .collect()
        };
        Ok(match kind {
            PreconditionerKind::None => Self::None,
            PreconditionerKind::Diagonal => Self::Diagonal(inv_diag()?),
            PreconditionerKind::Asc => asc_preconditioner(a)?,
            PreconditionerKind::Jacobi => Self::Jacobi {
                inv_diag: inv_diag()?,
                omega: 0.5,
            },
            PreconditionerKind::Ssor => {
                inv_diag()?;
                Self::Ssor {
                    a: a.clone(),
                    omega: 1.2,
                }
            }
        })
    }

    pub fn clamp_count(&self) -> usize {
        match self {
            Self::Asc(f) => f.clamp_count(),
            _ => 0,
        }
    }

    /// `z = P_F r_F` with zeros on active DOFs.
    pub fn apply(&self, r: &[f64], active: &ActiveSet, z: &mut [f64]) {
        let free = |i: usize| active.is_free(i);
        match self {
            Self::None => {
                for i in 0..r.len() {
                    z[i] = if free(i) { r[i] } else { 0.0 };
                }
            }
            Self::Diagonal(inv) => {
                for i in 0..r.len() {
                    z[i] = if free(i) { r[i] * inv[i] } else { 0.0 };
                }
            }
            Self::Jacobi { inv_diag, omega } => {
                for i in 0..r.len() {
                    z[i] = if free(i) { omega * r[i] * inv_diag[i] } else { 0.0 };
                }
            }
            Self::Asc(f) => f.solve_filtered_into(r, active, z),
            Self::Ssor { a, omega } => ssor_apply(a, *omega, r, active, z),
        }
    }
}

/// `(D/ω + L) D⁻¹ (D/ω + Lᵀ) z = ω/(2−ω) · r`-style SSOR on the free block.
fn ssor_apply(a: &BandedSym, omega: f64, r: &[f64], active: &ActiveSet, z: &mut [f64]) {
    let n = r.len();
    let hbw = a.hbw();
    for i in 0..n {
        if !active.is_free(i) {
            z[i] = 0.0;
            continue;
        }
        let mut s = r[i];
        for j in i.saturating_sub(hbw)..i {
            if active.is_free(j) {
                s -= a.get(i, j) * z[j];
            }
        }
        z[i] = s * omega / a.diag(i);
    }
    for i in 0..n {
        if active.is_free(i) {
            z[i] *= (2.0 - omega) / omega * a.diag(i);
        }
    }
    for i in (0..n).rev() {
        if !active.is_free(i) {
            continue;
        }
        let mut s = z[i];
        for j in i + 1..(i + hbw + 1).min(n) {
            if active.is_free(j) {
                s -= a.get(j, i) * z[j];
            }
        }
        z[i] = s * omega / a.diag(i);
    }
}

/// Largest-eigenvalue estimate from deterministic power iteration.
pub fn estimate_lambda_max(a: &BandedSym, steps: usize) -> f64 {
    let n = a.n();
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * ((i * 7919) % 13) as f64).collect();
    let mut av = vec![0.0; n];
    let mut lambda = 0.0;
    for _ in 0..steps {
        let nv = norm2(&v);
        if nv == 0.0 {
            break;
        }
        v.iter_mut().for_each(|x| *x /= nv);
        a.matvec_into(&v, &mut av);
        lambda = dot(&v, &av);
        std::mem::swap(&mut v, &mut av);
    }
    lambda.max(a.max_abs_diag())
}

/// Largest `α ≥ 0` keeping `x − α d` inside the box.
fn feasible_step(x: &[f64], d: &[f64], lo: &[f64], hi: &[f64]) -> (f64, Option<usize>) {
    let mut best = f64::INFINITY;
    let mut idx = None;
    for i in 0..x.len() {
        let a = if d[i] > 0.0 {
            (x[i] - lo[i]) / d[i]
        } else if d[i] < 0.0 {
            (x[i] - hi[i]) / d[i]
        } else {
            continue;
        };
        let a = a.max(0.0);
        if a < best {
            best = a;
            idx = Some(i);
        }
    }
    (best, idx)
}

struct State<'p> {
    p: &'p BcqpProblem,
    x: Vec<f64>,
    g: Vec<f64>,
    phi: Vec<f64>,
    beta: Vec<f64>,
    active: ActiveSet,
}

impl State<'_> {
    fn refresh_gradient(&mut self) {
        self.p.a.matvec_into(&self.x, &mut self.g);
        for (gi, bi) in self.g.iter_mut().zip(&self.p.b) {
            *gi -= bi;
        }
    }

    fn refresh_parts(&mut self) -> bool {
        let changed = classify(&self.x, &self.p.lo, &self.p.hi, &mut self.active);
        split_gradient(&self.g, &self.active, &mut self.phi, &mut self.beta);
        changed
    }

    fn residual(&self) -> f64 {
        self.phi
            .iter()
            .zip(&self.beta)
            .map(|(a, b)| (a + b) * (a + b))
            .sum::<f64>()
            .sqrt()
    }

    /// `φ̃ᵀφ` with the reduced free gradient `φ̃`.
    fn reduced_free_dot(&self, abar: f64) -> f64 {
        let mut s = 0.0;
        for i in 0..self.x.len() {
            let f = self.phi[i];
            let rf = if f > 0.0 {
                f.min((self.x[i] - self.p.lo[i]) / abar)
            } else if f < 0.0 {
                f.max((self.x[i] - self.p.hi[i]) / abar)
            } else {
                0.0
            };
            s += rf * f;
        }
        s
    }
}

/// Monotone MPRGP with the preconditioner applied to the free gradient.
pub fn mprgp(problem: &BcqpProblem, options: &BcqpOptions) -> Result<BcqpResult> {
    options.validate()?;
    let prec = Preconditioner::build(options.preconditioner, &problem.a)?;
    mprgp_with(problem, options, &prec)
}

/// [`mprgp`] with a prebuilt preconditioner.
pub fn mprgp_with(problem: &BcqpProblem, options: &BcqpOptions, prec: &Preconditioner) -> Result<BcqpResult> {
    options.validate()?;
    let start = Instant::now();
    let n = problem.n();
    let abar = match options.abar {
        Some(a) => a,
        None => 1.0 / estimate_lambda_max(&problem.a, POWER_STEPS),
    };
    let tol = options.tol_abs.max(options.tol_rel * norm2(&problem.b));

    let mut x = problem.x0.clone();
    problem.project(&mut x);
    let mut st = State {
        p: problem,
        x,
        g: vec![0.0; n],
        phi: vec![0.0; n],
        beta: vec![0.0; n],
        active: ActiveSet::all_free(n),
    };
    st.refresh_gradient();
    st.refresh_parts();

    let mut z = vec![0.0; n];
    let mut ap = vec![0.0; n];
    prec.apply(&st.phi, &st.active, &mut z);
    let mut dir = z.clone();

    let mut history = Vec::new();
    let mut iterations = 0;
    let (mut cg, mut expansions, mut proportionings) = (0, 0, 0);
    let termination = loop {
        let mut res = st.residual();
        if res <= tol {
            // Confirm against a freshly computed gradient.
            st.refresh_gradient();
            st.refresh_parts();
            res = st.residual();
        }
        if options.record_history {
            history.push(ResidualSample {
                iteration: iterations,
                wall_ns: start.elapsed().as_nanos(),
                residual: res,
            });
        }
        if res <= tol {
            break Termination::Converged;
        }
        if iterations >= options.max_iter {
            break Termination::MaxIter;
        }
        iterations += 1;

        let beta_sq = dot(&st.beta, &st.beta);
        if beta_sq <= options.gamma * options.gamma * st.reduced_free_dot(abar) {
            problem.a.matvec_into(&dir, &mut ap);
            let pap = dot(&dir, &ap);
            if !(pap > 0.0) {
                return Err(Error::NotSpd { curvature: pap });
            }
            let alpha_cg = dot(&z, &st.g) / pap;
            let (alpha_f, blocking) = feasible_step(&st.x, &dir, &problem.lo, &problem.hi);
            if alpha_cg <= alpha_f {
                cg += 1;
                for i in 0..n {
                    st.x[i] -= alpha_cg * dir[i];
                    st.g[i] -= alpha_cg * ap[i];
                }
                let changed = st.refresh_parts();
                prec.apply(&st.phi, &st.active, &mut z);
                if changed {
                    dir.copy_from_slice(&z);
                } else {
                    let beta_cg = dot(&z, &ap) / pap;
                    for i in 0..n {
                        dir[i] = z[i] - beta_cg * dir[i];
                    }
                }
            } else {
                expansions += 1;
                for i in 0..n {
                    st.x[i] -= alpha_f * dir[i];
                    st.g[i] -= alpha_f * ap[i];
                }
                if let Some(k) = blocking {
                    st.x[k] = if dir[k] > 0.0 { problem.lo[k] } else { problem.hi[k] };
                }
                problem.project(&mut st.x);
                st.refresh_parts();
                for i in 0..n {
                    st.x[i] -= abar * st.phi[i];
                }
                problem.project(&mut st.x);
                st.refresh_gradient();
                st.refresh_parts();
                prec.apply(&st.phi, &st.active, &mut z);
                dir.copy_from_slice(&z);
            }
        } else {
            proportionings += 1;
            problem.a.matvec_into(&st.beta, &mut ap);
            let bab = dot(&st.beta, &ap);
            if !(bab > 0.0) {
                return Err(Error::NotSpd { curvature: bab });
            }
            let alpha = (beta_sq / bab).min(feasible_step(&st.x, &st.beta, &problem.lo, &problem.hi).0);
            for i in 0..n {
                st.x[i] -= alpha * st.beta[i];
                st.g[i] -= alpha * ap[i];
            }
            problem.project(&mut st.x);
            st.refresh_parts();
            prec.apply(&st.phi, &st.active, &mut z);
            dir.copy_from_slice(&z);
        }
    };

    let residual = st.residual();
    Ok(BcqpResult {
        x: st.x,
        iterations,
        termination,
        final_active: st.active,
        residual,
        residual_history: history,
        cg_steps: cg,
        expansion_steps: expansions,
        proportioning_steps: proportionings,
        clamp_count: prec.clamp_count(),
    })
}

/// Projected Gauss–Seidel: coordinate-wise exact minimization clamped into
/// the box. Stops early once a sweep leaves `x` unchanged.
pub fn pgs_solve(problem: &BcqpProblem, iters: usize) -> Vec<f64> {
    let a = &problem.a;
    let n = problem.n();
    let hbw = a.hbw();
    let mut x = problem.x0.clone();
    problem.project(&mut x);
    for _ in 0..iters {
        let mut moved = false;
        for i in 0..n {
            let mut g = -problem.b[i];
            for j in i.saturating_sub(hbw)..(i + hbw + 1).min(n) {
                g += a.get(i, j) * x[j];
            }
            let next = (x[i] - g / a.diag(i)).clamp(problem.lo[i], problem.hi[i]);
            if next != x[i] {
                moved = true;
                x[i] = next;
            }
        }
        if !moved {
            break;
        }
    }
    x
}
