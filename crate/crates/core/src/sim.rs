//! Implicit Euler forward simulation with one Newton iteration per step.

use serde::{Deserialize, Serialize};

use crate::energy::{
    bend_coeff, elastic_energy, elastic_gradient, external_force, stencil_offset, stretch_coeff,
    twist_coeff, Geometry, STENCIL,
};
use crate::error::{Error, Result};
use crate::linalg::{default_pivot_floor, norm2, BandedSym, LdlFactor};
use crate::strand::{
    dof_edge, dof_vertex, num_active_dofs, MassMatrix, RestParams, StrandConfig, StrandState,
    Vec3, CLAMPED_DOFS,
};

/// Half-bandwidth of the generalized Hessian.
pub const HESSIAN_HBW: usize = STENCIL - 1;

/// Relative residual above which a step is reported as a solver failure.
pub const STEP_RESIDUAL_TOL: f64 = 1e-6;

/// Prescribed values of the clamped DOFs `(x₀, θ₀, x₁)` at time `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RootKey {
    pub t: f64,
    pub x0: [f64; 3],
    pub theta0: f64,
    pub x1: [f64; 3],
}

impl RootKey {
    fn dofs(&self) -> [f64; CLAMPED_DOFS] {
        [
            self.x0[0], self.x0[1], self.x0[2], self.theta0, self.x1[0], self.x1[1], self.x1[2],
        ]
    }
}

/// Piecewise-linear keyframes on the clamped DOFs. Before the first key and
/// after the last one the nearest key holds; with no keys the root is static.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RootMotion {
    pub keys: Vec<RootKey>,
}

impl RootMotion {
    pub fn is_static(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.keys.windows(2).any(|w| !(w[0].t < w[1].t)) {
            return Err(Error::Config("root keyframe times must increase strictly".into()));
        }
        Ok(())
    }

    /// Clamped DOF values at time `t`, or `None` for a static root.
    pub fn at(&self, t: f64) -> Option<[f64; CLAMPED_DOFS]> {
        let first = self.keys.first()?;
        let last = self.keys.last()?;
        if t <= first.t {
            return Some(first.dofs());
        }
        if t >= last.t {
            return Some(last.dofs());
        }
        let k = self.keys.partition_point(|key| key.t <= t);
        let (a, b) = (&self.keys[k - 1], &self.keys[k]);
        let s = (t - a.t) / (b.t - a.t);
        let (da, db) = (a.dofs(), b.dofs());
        let mut out = [0.0; CLAMPED_DOFS];
        for j in 0..CLAMPED_DOFS {
            out[j] = da[j] + s * (db[j] - da[j]);
        }
        Some(out)
    }

    /// Translates the root vertically by `amplitude` up and back down once
    /// per `period` for `cycles` cycles, then holds it at rest.
    pub fn vertical_oscillation(state: &StrandState, amplitude: f64, period: f64, cycles: usize) -> Self {
        let base = RootKey {
            t: 0.0,
            x0: state.x[0].into(),
            theta0: state.theta[0],
            x1: state.x[1].into(),
        };
        let mut keys = vec![base.clone()];
        for c in 0..cycles {
            let t0 = c as f64 * period;
            let mut up = base.clone();
            up.t = t0 + 0.25 * period;
            up.x0[1] += amplitude;
            up.x1[1] += amplitude;
            let mut down = base.clone();
            down.t = t0 + 0.75 * period;
            down.x0[1] -= amplitude;
            down.x1[1] -= amplitude;
            let mut back = base.clone();
            back.t = t0 + period;
            keys.extend([up, down, back]);
        }
        Self { keys }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimOptions {
    /// Step size.
    pub dt: f64,
    pub steps_per_frame: usize,
    pub frames: usize,
    pub root_motion: RootMotion,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            dt: 1.0 / 240.0,
            steps_per_frame: 4,
            frames: 300,
            root_motion: RootMotion::default(),
        }
    }
}

impl SimOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Config("dt must be positive".into()));
        }
        if self.steps_per_frame == 0 {
            return Err(Error::Config("steps_per_frame must be at least 1".into()));
        }
        self.root_motion.validate()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepStats {
    pub clamp_count: usize,
    pub residual: f64,
}

/// Active-DOF Hessian assembly. Entries coupling an active DOF to a moving
/// clamped DOF are folded into `coupling` as `H_ac Δq_c`.
struct Assembler<'a> {
    h: BandedSym,
    coupling: Vec<f64>,
    dq_clamped: &'a [f64; CLAMPED_DOFS],
}

impl Assembler<'_> {
    fn add(&mut self, r: usize, c: usize, v: f64) -> Result<()> {
        if r >= CLAMPED_DOFS {
            if c >= CLAMPED_DOFS {
                if r >= c {
                    self.h.add(r - CLAMPED_DOFS, c - CLAMPED_DOFS, v)?;
                }
            } else {
                self.coupling[r - CLAMPED_DOFS] += v * self.dq_clamped[c];
            }
        }
        Ok(())
    }

    /// Adds `w · g gᵀ` for a gradient over the stencil starting at `off`.
    fn add_outer(&mut self, off: usize, g: &[f64; STENCIL], w: f64) -> Result<()> {
        for a in 0..STENCIL {
            if g[a] == 0.0 {
                continue;
            }
            for b in 0..STENCIL {
                if g[b] != 0.0 {
                    self.add(off + a, off + b, w * g[a] * g[b])?;
                }
            }
        }
        Ok(())
    }
}

/// Stretching Hessian block `k [t tᵀ + max(0, 1 − l̄/l)(I − t tᵀ)]` with
/// respect to the edge vector; both eigenvalues are clamped at zero.
pub fn stretch_hessian_block(k: f64, t: &Vec3, l: f64, rest_len: f64) -> [[f64; 3]; 3] {
    let transverse = (1.0 - rest_len / l).max(0.0);
    let mut out = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            let tt = t[a] * t[b];
            let id = if a == b { 1.0 } else { 0.0 };
            out[a][b] = k * (tt + transverse * (id - tt));
        }
    }
    out
}

/// Elastic Hessian approximation over the active DOFs plus `M/dt²`.
fn assemble_system(
    config: &StrandConfig,
    geom: &Geometry,
    rest: &RestParams,
    mass: &MassMatrix,
    dt: f64,
    dq_clamped: &[f64; CLAMPED_DOFS],
) -> Result<(BandedSym, Vec<f64>)> {
    let n = config.n;
    let na = num_active_dofs(n);
    let mut asm = Assembler {
        h: BandedSym::zeros(na, HESSIAN_HBW.min(na - 1))?,
        coupling: vec![0.0; na],
        dq_clamped,
    };
    let inv_dt2 = 1.0 / (dt * dt);
    for (g, m) in mass.diag.iter().enumerate() {
        asm.add(g, g, m * inv_dt2)?;
    }
    for i in 1..n - 1 {
        let block = stretch_hessian_block(
            stretch_coeff(config, rest, i),
            &geom.tangents[i],
            geom.lengths[i],
            rest.rest_len[i],
        );
        let (a0, b0) = (dof_vertex(i), dof_vertex(i + 1));
        for a in 0..3 {
            for b in 0..3 {
                let v = block[a][b];
                asm.add(a0 + a, a0 + b, v)?;
                asm.add(b0 + a, b0 + b, v)?;
                asm.add(b0 + a, a0 + b, -v)?;
                asm.add(a0 + a, b0 + b, -v)?;
            }
        }
    }
    for i in 1..n - 1 {
        let off = stencil_offset(i);
        let cb = bend_coeff(config, rest, i);
        for j in 0..4 {
            asm.add_outer(off, &geom.curvature_grad[i][j], cb)?;
        }
        asm.add_outer(off, &geom.twist_grad[i], twist_coeff(config, rest, i))?;
    }
    Ok((asm.h, asm.coupling))
}

/// Advances one implicit Euler step of size `dt` with a single Newton
/// iteration from the current positions. `clamped` prescribes the clamped
/// DOFs at the end of the step; `None` keeps them fixed.
pub fn sim_step(
    config: &StrandConfig,
    state: &StrandState,
    rest: &RestParams,
    mass: &MassMatrix,
    dt: f64,
    clamped: Option<&[f64; CLAMPED_DOFS]>,
) -> Result<(StrandState, StepStats)> {
    let n = config.n;
    if state.n() != n || mass.diag.len() != 4 * n - 1 {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: state.n(),
        });
    }
    let q = state.q();
    let mut dq_clamped = [0.0; CLAMPED_DOFS];
    if let Some(target) = clamped {
        for j in 0..CLAMPED_DOFS {
            dq_clamped[j] = target[j] - q[j];
        }
    }
    let geom = Geometry::new(state)?;
    let (h, coupling) = assemble_system(config, &geom, rest, mass, dt, &dq_clamped)?;

    // ∇E at q: −M q̇/dt − f_ext + ∇E_el.
    let f_ext = external_force(config, mass);
    let g_el = elastic_gradient(config, &geom, rest)?;
    let rhs: Vec<f64> = (CLAMPED_DOFS..q.len())
        .map(|g| {
            let grad = -mass.diag[g] * state.velocity[g] / dt - f_ext[g] + g_el[g];
            -grad - coupling[g - CLAMPED_DOFS]
        })
        .collect();

    let factor = LdlFactor::factorize(&h, default_pivot_floor(&h))?;
    let dq_active = factor.solve(&rhs)?;
    let hd = h.matvec(&dq_active)?;
    let res: Vec<f64> = hd.iter().zip(&rhs).map(|(a, b)| a - b).collect();
    let rn = norm2(&rhs);
    let residual = if rn > 0.0 { norm2(&res) / rn } else { norm2(&res) };
    if !(residual <= STEP_RESIDUAL_TOL) {
        return Err(Error::SolverFailure(format!(
            "step residual {residual:.3e} with {} clamped pivots",
            factor.clamp_count()
        )));
    }

    let mut dq = vec![0.0; q.len()];
    dq[..CLAMPED_DOFS].copy_from_slice(&dq_clamped);
    dq[CLAMPED_DOFS..].copy_from_slice(&dq_active);
    let q_new: Vec<f64> = q.iter().zip(&dq).map(|(a, b)| a + b).collect();
    let mut next = state.clone();
    next.set_q(&q_new)?;
    next.velocity = dq.iter().map(|d| d / dt).collect();
    Ok((
        next,
        StepStats {
            clamp_count: factor.clamp_count(),
            residual,
        },
    ))
}

/// Kinetic energy `½ q̇ᵀ M q̇`.
pub fn kinetic_energy(state: &StrandState, mass: &MassMatrix) -> f64 {
    0.5 * state
        .velocity
        .iter()
        .zip(&mass.diag)
        .map(|(v, m)| m * v * v)
        .sum::<f64>()
}

/// Kinetic plus elastic plus gravitational potential energy.
pub fn total_energy(
    config: &StrandConfig,
    state: &StrandState,
    rest: &RestParams,
    mass: &MassMatrix,
) -> Result<f64> {
    let geom = Geometry::new(state)?;
    let f_ext = external_force(config, mass);
    let q = state.q();
    let potential: f64 = q.iter().zip(&f_ext).map(|(q, f)| -q * f).sum();
    Ok(kinetic_energy(state, mass) + elastic_energy(config, &geom, rest)? + potential)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// Vertex positions per frame, starting with the initial state.
    pub frames: Vec<Vec<Vec3>>,
    /// Edge angles per frame.
    pub thetas: Vec<Vec<f64>>,
    pub kinetic: Vec<f64>,
    pub max_clamp_count: usize,
    pub final_state: StrandState,
}

impl Trajectory {
    /// Largest distance of any vertex from its initial position over all frames.
    pub fn max_drift(&self) -> f64 {
        let first = &self.frames[0];
        self.frames
            .iter()
            .flat_map(|f| f.iter().zip(first).map(|(a, b)| (a - b).norm()))
            .fold(0.0, f64::max)
    }
}

/// Runs `frames × steps_per_frame` steps, recording every frame.
pub fn simulate(
    config: &StrandConfig,
    state: &StrandState,
    rest: &RestParams,
    mass: &MassMatrix,
    options: &SimOptions,
) -> Result<Trajectory> {
    config.validate()?;
    options.validate()?;
    let mut traj = Trajectory {
        frames: vec![state.x.clone()],
        thetas: vec![state.theta.clone()],
        kinetic: vec![kinetic_energy(state, mass)],
        max_clamp_count: 0,
        final_state: state.clone(),
    };
    let mut cur = state.clone();
    let mut step = 0usize;
    for _ in 0..options.frames {
        for _ in 0..options.steps_per_frame {
            step += 1;
            let target = options.root_motion.at(step as f64 * options.dt);
            let (next, stats) = sim_step(config, &cur, rest, mass, options.dt, target.as_ref())?;
            traj.max_clamp_count = traj.max_clamp_count.max(stats.clamp_count);
            cur = next;
        }
        traj.frames.push(cur.x.clone());
        traj.thetas.push(cur.theta.clone());
        traj.kinetic.push(kinetic_energy(&cur, mass));
    }
    traj.final_state = cur;
    Ok(traj)
}

/// Clamped DOF values of a state.
pub fn clamped_dofs(state: &StrandState) -> [f64; CLAMPED_DOFS] {
    let mut out = [0.0; CLAMPED_DOFS];
    out[..3].copy_from_slice(state.x[0].as_slice());
    out[dof_edge(0)] = state.theta[0];
    out[4..].copy_from_slice(state.x[1].as_slice());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alm::{optimize, AlmOptions};
    use crate::strand::{make_scene, naive_rest_params, SceneKind};

    fn setup(kind: SceneKind, n: usize, gravity: bool) -> (StrandConfig, StrandState, RestParams, MassMatrix) {
        let (mut config, state) = make_scene(kind, n, 1.0).unwrap();
        if !gravity {
            config.gravity = [0.0; 3];
        }
        let rest = naive_rest_params(&config, &state).unwrap();
        let mass = MassMatrix::new(&config, &rest.rest_len);
        (config, state, rest, mass)
    }

    #[test]
    fn stretch_block_is_projected() {
        let t = Vec3::new(1.0, 0.0, 0.0);
        let compressed = stretch_hessian_block(2.0, &t, 0.5, 1.0);
        assert_eq!(compressed[0][0], 2.0);
        assert_eq!(compressed[1][1], 0.0);
        let stretched = stretch_hessian_block(2.0, &t, 2.0, 1.0);
        assert_eq!(stretched[1][1], 1.0);
        assert_eq!(stretched[2][2], 1.0);
    }

    #[test]
    fn stretch_block_matches_exact_hessian_when_stretched() {
        // Finite differences of k (l − l̄) t with respect to the edge vector.
        let k = 3.0;
        let rest_len = 0.7;
        let e = Vec3::new(0.4, -0.8, 0.5);
        let grad = |e: &Vec3| e.normalize() * (k * (e.norm() - rest_len));
        let block = stretch_hessian_block(k, &e.normalize(), e.norm(), rest_len);
        let h = 1e-6;
        for b in 0..3 {
            let mut ep = e;
            let mut em = e;
            ep[b] += h;
            em[b] -= h;
            let col = (grad(&ep) - grad(&em)) / (2.0 * h);
            for a in 0..3 {
                assert!((col[a] - block[a][b]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn zero_gravity_naive_state_stays_put() {
        for kind in [SceneKind::Horizontal, SceneKind::Coil] {
            let (config, state, rest, mass) = setup(kind, 12, false);
            let (next, stats) = sim_step(&config, &state, &rest, &mass, 1.0 / 240.0, None).unwrap();
            assert_eq!(stats.clamp_count, 0);
            for (a, b) in next.x.iter().zip(&state.x) {
                assert!((a - b).norm() <= 1e-14);
            }
        }
    }

    #[test]
    fn system_matrix_matches_dense_assembly() {
        let (config, state, rest, mass) = setup(SceneKind::Coil, 7, true);
        let geom = Geometry::new(&state).unwrap();
        let (h, _) = assemble_system(&config, &geom, &rest, &mass, 0.1, &[0.0; CLAMPED_DOFS]).unwrap();
        let dense = h.to_dense();
        for (a, row) in dense.iter().enumerate() {
            for (b, v) in row.iter().enumerate() {
                assert_eq!(*v, dense[b][a]);
                if a.abs_diff(b) > HESSIAN_HBW {
                    assert_eq!(*v, 0.0);
                }
            }
        }
    }

    #[test]
    fn frames_zero_returns_initial() {
        let (config, state, rest, mass) = setup(SceneKind::Vertical, 8, true);
        let opts = SimOptions {
            frames: 0,
            ..SimOptions::default()
        };
        let traj = simulate(&config, &state, &rest, &mass, &opts).unwrap();
        assert_eq!(traj.frames, vec![state.x.clone()]);
        assert_eq!(traj.max_drift(), 0.0);
    }

    #[test]
    fn energy_does_not_increase_with_static_roots() {
        let (config, state, rest, mass) = setup(SceneKind::Horizontal, 12, true);
        let mut cur = state;
        let mut e = total_energy(&config, &cur, &rest, &mass).unwrap();
        for _ in 0..200 {
            cur = sim_step(&config, &cur, &rest, &mass, 1.0 / 240.0, None).unwrap().0;
            let e1 = total_energy(&config, &cur, &rest, &mass).unwrap();
            assert!(e1 <= e + 1e-8 * e.abs().max(1.0), "{e1} > {e}");
            e = e1;
        }
    }

    #[test]
    fn frame_invariants_hold_every_step() {
        let (config, state, rest, mass) = setup(SceneKind::Coil, 20, true);
        let mut cur = state;
        for _ in 0..40 {
            cur = sim_step(&config, &cur, &rest, &mass, 1.0 / 240.0, None).unwrap().0;
            let (t, _) = cur.tangents_lengths().unwrap();
            for e in 0..t.len() {
                assert!((cur.d1[e].norm() - 1.0).abs() <= 1e-12);
                assert!(cur.d1[e].dot(&t[e]).abs() <= 1e-12);
                assert!((cur.d2[e] - t[e].cross(&cur.d1[e])).norm() <= 1e-12);
            }
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let (config, state, rest, mass) = setup(SceneKind::Coil, 15, true);
        let opts = SimOptions {
            frames: 5,
            root_motion: RootMotion::vertical_oscillation(&state, 0.05, 0.04, 1),
            ..SimOptions::default()
        };
        let a = simulate(&config, &state, &rest, &mass, &opts).unwrap();
        let b = simulate(&config, &state, &rest, &mass, &opts).unwrap();
        assert_eq!(a.frames, b.frames);
    }

    #[test]
    fn root_motion_interpolates_and_holds() {
        let (_, state, _, _) = setup(SceneKind::Horizontal, 6, true);
        let m = RootMotion::vertical_oscillation(&state, 0.1, 1.0, 1);
        assert!(m.validate().is_ok());
        assert_eq!(m.at(0.25).unwrap()[1], 0.1);
        assert!((m.at(0.125).unwrap()[1] - 0.05).abs() < 1e-15);
        assert_eq!(m.at(5.0).unwrap(), clamped_dofs(&state));
        assert!(RootMotion::default().at(1.0).is_none());
        let bad = RootMotion {
            keys: vec![m.keys[1].clone(), m.keys[0].clone()],
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn moving_root_follows_keyframes() {
        let (config, state, rest, mass) = setup(SceneKind::Horizontal, 8, true);
        let motion = RootMotion::vertical_oscillation(&state, 0.02, 0.1, 1);
        let opts = SimOptions {
            frames: 6,
            root_motion: motion.clone(),
            ..SimOptions::default()
        };
        let traj = simulate(&config, &state, &rest, &mass, &opts).unwrap();
        let t = 6.0 * 4.0 * opts.dt;
        let want = motion.at(t).unwrap();
        assert!((traj.final_state.x[0].y - want[1]).abs() < 1e-14);
        assert!((traj.final_state.x[1].y - want[5]).abs() < 1e-14);
    }

    #[test]
    fn optimized_strand_barely_moves() {
        let (config, state) = make_scene(SceneKind::Horizontal, 12, 1.0).unwrap();
        let rest0 = naive_rest_params(&config, &state).unwrap();
        let mass = MassMatrix::new(&config, &rest0.rest_len);
        let (rest, report) = optimize(&config, &state, &rest0, &AlmOptions::default()).unwrap();
        assert!(report.converged());
        let (next, _) = sim_step(&config, &state, &rest, &mass, 1.0 / 240.0, None).unwrap();
        let d = next.x.iter().zip(&state.x).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(d <= 1e-9 * state.length(), "{d}");
    }

    #[test]
    fn oscillation_settles() {
        let (config, state, rest, mass) = setup(SceneKind::Horizontal, 10, true);
        let opts = SimOptions {
            frames: 240,
            root_motion: RootMotion::vertical_oscillation(&state, 0.05, 0.5, 1),
            ..SimOptions::default()
        };
        let traj = simulate(&config, &state, &rest, &mass, &opts).unwrap();
        let peak = traj.kinetic.iter().cloned().fold(0.0, f64::max);
        assert!(peak > 0.0);
        assert!(*traj.kinetic.last().unwrap() < 1e-1 * peak);
    }
}
