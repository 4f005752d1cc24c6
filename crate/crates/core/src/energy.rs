//! Elastic energies, their stencil gradients, and the generalized force.

use crate::error::{Error, Result};
use crate::strand::{
    curvature4, curvature_binormal, dof_vertex, num_active_dofs, twist, MassMatrix,
    RestParams, StrandConfig, StrandState, Vec3, CLAMPED_DOFS,
};

/// Width of the bend/twist stencil `(x_{i-1}, θ_{i-1}, x_i, θ_i, x_{i+1})`.
pub const STENCIL: usize = 11;

pub type Stencil = [f64; STENCIL];

/// First generalized DOF of the stencil centred on interior vertex `i`.
#[inline]
pub fn stencil_offset(i: usize) -> usize {
    4 * (i - 1)
}

/// Geometric quantities of a fixed configuration.
///
/// Entries indexed by vertex are zero at the two endpoints.
#[derive(Clone, Debug)]
pub struct Geometry {
    pub tangents: Vec<Vec3>,
    pub lengths: Vec<f64>,
    pub m1: Vec<Vec3>,
    pub m2: Vec<Vec3>,
    pub binormal: Vec<Vec3>,
    pub curvature: Vec<[f64; 4]>,
    /// `∇κ_{i,j}` over the stencil of vertex `i`.
    pub curvature_grad: Vec<[Stencil; 4]>,
    pub twist: Vec<f64>,
    pub twist_grad: Vec<Stencil>,
}

impl Geometry {
    pub fn new(state: &StrandState) -> Result<Self> {
        let n = state.n();
        let (t, l) = state.tangents_lengths()?;
        let (m1, m2) = state.material_frames();
        let mut binormal = vec![Vec3::zeros(); n];
        let mut curvature = vec![[0.0; 4]; n];
        let mut curvature_grad = vec![[[0.0; STENCIL]; 4]; n];
        let mut twists = vec![0.0; n];
        let mut twist_grad = vec![[0.0; STENCIL]; n];
        for i in 1..n - 1 {
            let kb = curvature_binormal(&t[i - 1], &t[i], i)?;
            let k = curvature4(&t, &m1, &m2, i)?;
            let (t0, t1) = (&t[i - 1], &t[i]);
            let (l0, l1) = (l[i - 1], l[i]);
            let chi = 1.0 + t0.dot(t1);
            let tt = (t0 + t1) / chi;
            let dirs = [m2[i - 1], -m1[i - 1], m2[i], -m1[i]];
            for (j, u) in dirs.iter().enumerate() {
                let g0 = (-tt * k[j] + t1.cross(u) * (2.0 / chi)) / l0;
                let g1 = (-tt * k[j] - t0.cross(u) * (2.0 / chi)) / l1;
                curvature_grad[i][j] = scatter_edges(&g0, &g1);
            }
            // Rotating a material frame by dθ turns m1 toward m2.
            curvature_grad[i][0][3] = k[1];
            curvature_grad[i][1][3] = -k[0];
            curvature_grad[i][2][7] = k[3];
            curvature_grad[i][3][7] = -k[2];

            let mut tg = scatter_edges(&(kb / (2.0 * l0)), &(kb / (2.0 * l1)));
            tg[3] = -1.0;
            tg[7] = 1.0;
            binormal[i] = kb;
            curvature[i] = k;
            twists[i] = twist(&state.theta, &state.ref_twist, i);
            twist_grad[i] = tg;
        }
        Ok(Self {
            tangents: t,
            lengths: l,
            m1,
            m2,
            binormal,
            curvature,
            curvature_grad,
            twist: twists,
            twist_grad,
        })
    }

    pub fn n(&self) -> usize {
        self.lengths.len() + 1
    }
}

/// Position-stencil gradient from derivatives with respect to the two edge
/// vectors `e^{i-1} = x_i - x_{i-1}` and `e^i = x_{i+1} - x_i`.
fn scatter_edges(g0: &Vec3, g1: &Vec3) -> Stencil {
    let mut s = [0.0; STENCIL];
    for k in 0..3 {
        s[k] = -g0[k];
        s[4 + k] = g0[k] - g1[k];
        s[8 + k] = g1[k];
    }
    s
}

/// Stretching coefficient `s α_i π r² / l̄_i` of edge `i`.
#[inline]
pub fn stretch_coeff(config: &StrandConfig, rest: &RestParams, i: usize) -> f64 {
    rest.s * rest.alpha[i] * config.area() / rest.rest_len[i]
}

/// Bending coefficient `s β_i π r⁴ / (4 (l̄_{i-1} + l̄_i))` of vertex `i`.
#[inline]
pub fn bend_coeff(config: &StrandConfig, rest: &RestParams, i: usize) -> f64 {
    let r2 = config.radius * config.radius;
    rest.s * rest.beta[i] * std::f64::consts::PI * r2 * r2
        / (4.0 * (rest.rest_len[i - 1] + rest.rest_len[i]))
}

/// Twisting coefficient `s γ_i π r⁴ / (l̄_{i-1} + l̄_i)` of vertex `i`.
#[inline]
pub fn twist_coeff(config: &StrandConfig, rest: &RestParams, i: usize) -> f64 {
    let r2 = config.radius * config.radius;
    rest.s * rest.gamma[i] * std::f64::consts::PI * r2 * r2
        / (rest.rest_len[i - 1] + rest.rest_len[i])
}

/// Inertia energy `‖q - q*‖²_M / (2 Δt²)`.
pub fn energy_inertia(q: &[f64], q_star: &[f64], mass: &MassMatrix, dt: f64) -> f64 {
    let sum: f64 = q
        .iter()
        .zip(q_star)
        .zip(&mass.diag)
        .map(|((a, b), m)| m * (a - b) * (a - b))
        .sum();
    sum / (2.0 * dt * dt)
}

pub fn grad_inertia(q: &[f64], q_star: &[f64], mass: &MassMatrix, dt: f64) -> Vec<f64> {
    let inv = 1.0 / (dt * dt);
    q.iter()
        .zip(q_star)
        .zip(&mass.diag)
        .map(|((a, b), m)| m * (a - b) * inv)
        .collect()
}

/// External force `M g` on vertex DOFs over all generalized DOFs.
pub fn external_force(config: &StrandConfig, mass: &MassMatrix) -> Vec<f64> {
    let g = config.gravity;
    let mut f = vec![0.0; mass.diag.len()];
    for i in 0..config.n {
        for k in 0..3 {
            f[dof_vertex(i) + k] = mass.diag[dof_vertex(i) + k] * g[k];
        }
    }
    f
}

/// `q* = q + Δt q̇ + Δt² M⁻¹ f_ext`.
pub fn inertia_target(
    q: &[f64],
    velocity: &[f64],
    f_ext: &[f64],
    mass: &MassMatrix,
    dt: f64,
) -> Vec<f64> {
    q.iter()
        .zip(velocity)
        .zip(f_ext.iter().zip(&mass.diag))
        .map(|((q, v), (f, m))| q + dt * v + dt * dt * f / m)
        .collect()
}

fn check_edge(n: usize, i: usize) -> Result<()> {
    if i == 0 || i + 1 >= n {
        return Err(Error::BadDimension(format!("edge {i} carries no stretching energy")));
    }
    Ok(())
}

fn check_interior(n: usize, i: usize) -> Result<()> {
    if i == 0 || i + 1 >= n {
        return Err(Error::BadDimension(format!("vertex {i} is not interior")));
    }
    Ok(())
}

pub fn energy_stretch(
    config: &StrandConfig,
    geom: &Geometry,
    rest: &RestParams,
    i: usize,
) -> Result<f64> {
    check_edge(geom.n(), i)?;
    let d = geom.lengths[i] - rest.rest_len[i];
    Ok(0.5 * stretch_coeff(config, rest, i) * d * d)
}

/// Gradient of the stretching energy of edge `i` with respect to `x_{i+1}`;
/// the gradient on `x_i` is its negation.
pub fn grad_stretch(
    config: &StrandConfig,
    geom: &Geometry,
    rest: &RestParams,
    i: usize,
) -> Result<Vec3> {
    check_edge(geom.n(), i)?;
    let d = geom.lengths[i] - rest.rest_len[i];
    Ok(geom.tangents[i] * (stretch_coeff(config, rest, i) * d))
}

pub fn energy_bend(config: &StrandConfig, geom: &Geometry, rest: &RestParams, i: usize) -> Result<f64> {
    check_interior(geom.n(), i)?;
    let k = &geom.curvature[i];
    let kr = &rest.rest_curv[i];
    let sq: f64 = (0..4).map(|j| (k[j] - kr[j]) * (k[j] - kr[j])).sum();
    Ok(0.5 * bend_coeff(config, rest, i) * sq)
}

/// `J_cuᵀ (κ_i − κ̄_i)` over the stencil of vertex `i`.
pub fn curvature_residual_grad(geom: &Geometry, rest: &RestParams, i: usize) -> Stencil {
    let mut out = [0.0; STENCIL];
    for j in 0..4 {
        let w = geom.curvature[i][j] - rest.rest_curv[i][j];
        for (o, g) in out.iter_mut().zip(&geom.curvature_grad[i][j]) {
            *o += w * g;
        }
    }
    out
}

pub fn grad_bend(
    config: &StrandConfig,
    geom: &Geometry,
    rest: &RestParams,
    i: usize,
) -> Result<Stencil> {
    check_interior(geom.n(), i)?;
    let c = bend_coeff(config, rest, i);
    Ok(curvature_residual_grad(geom, rest, i).map(|g| c * g))
}

pub fn energy_twist(config: &StrandConfig, geom: &Geometry, rest: &RestParams, i: usize) -> Result<f64> {
    check_interior(geom.n(), i)?;
    let d = geom.twist[i] - rest.rest_twist[i];
    Ok(0.5 * twist_coeff(config, rest, i) * d * d)
}

pub fn grad_twist(
    config: &StrandConfig,
    geom: &Geometry,
    rest: &RestParams,
    i: usize,
) -> Result<Stencil> {
    check_interior(geom.n(), i)?;
    let w = twist_coeff(config, rest, i) * (geom.twist[i] - rest.rest_twist[i]);
    Ok(geom.twist_grad[i].map(|g| w * g))
}

/// Sum of stretching, bending and twisting energies.
pub fn elastic_energy(config: &StrandConfig, geom: &Geometry, rest: &RestParams) -> Result<f64> {
    let n = geom.n();
    let mut e = 0.0;
    for i in 1..n - 1 {
        e += energy_stretch(config, geom, rest, i)?;
    }
    for i in 1..n - 1 {
        e += energy_bend(config, geom, rest, i)?;
        e += energy_twist(config, geom, rest, i)?;
    }
    Ok(e)
}

/// Gradient of the elastic energy over all generalized DOFs, accumulated in
/// ascending element order.
pub fn elastic_gradient(
    config: &StrandConfig,
    geom: &Geometry,
    rest: &RestParams,
) -> Result<Vec<f64>> {
    let n = geom.n();
    let mut g = vec![0.0; 4 * n - 1];
    for i in 1..n - 1 {
        let gs = grad_stretch(config, geom, rest, i)?;
        for k in 0..3 {
            g[dof_vertex(i) + k] -= gs[k];
            g[dof_vertex(i + 1) + k] += gs[k];
        }
    }
    for i in 1..n - 1 {
        let off = stencil_offset(i);
        let gb = grad_bend(config, geom, rest, i)?;
        let gt = grad_twist(config, geom, rest, i)?;
        for k in 0..STENCIL {
            g[off + k] += gb[k] + gt[k];
        }
    }
    Ok(g)
}

/// Generalized force over the active DOFs.
#[derive(Clone, Debug, PartialEq)]
pub struct ForceVector {
    pub values: Vec<f64>,
}

impl ForceVector {
    /// Restricts a vector over all generalized DOFs to the active ones.
    pub fn from_global(global: &[f64]) -> Self {
        Self {
            values: global[CLAMPED_DOFS..].to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Generalized DOF of active entry `a`.
    pub fn global_index(a: usize) -> usize {
        a + CLAMPED_DOFS
    }

    pub fn norm(&self) -> f64 {
        crate::linalg::norm2(&self.values)
    }
}

/// Static generalized force `f = f_ext − ∇E_el` over the active DOFs.
pub fn total_force_geom(
    config: &StrandConfig,
    geom: &Geometry,
    rest: &RestParams,
    mass: &MassMatrix,
) -> Result<ForceVector> {
    let mut f = external_force(config, mass);
    let g = elastic_gradient(config, geom, rest)?;
    for (fi, gi) in f.iter_mut().zip(&g) {
        *fi -= gi;
    }
    let out = ForceVector::from_global(&f);
    debug_assert_eq!(out.len(), num_active_dofs(config.n));
    Ok(out)
}

pub fn total_force(
    config: &StrandConfig,
    state: &StrandState,
    rest: &RestParams,
    mass: &MassMatrix,
) -> Result<ForceVector> {
    let geom = Geometry::new(state)?;
    total_force_geom(config, &geom, rest, mass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strand::{make_scene, naive_rest_params, SceneKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale = crate::linalg::norm2(a).max(crate::linalg::norm2(b)).max(1e-300);
        diff / scale
    }

    /// Random strand of 10 vertices with rest parameters near its geometry.
    fn random_case(seed: u64) -> (StrandConfig, StrandState, RestParams, MassMatrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 10;
        let mut x = vec![Vec3::zeros()];
        let mut dir = Vec3::new(0.0, -1.0, 0.0);
        for _ in 1..n {
            let jitter = Vec3::new(
                rng.random_range(-0.6..0.6),
                rng.random_range(-0.6..0.6),
                rng.random_range(-0.6..0.6),
            );
            dir = (dir + jitter).normalize();
            let len = rng.random_range(0.05..0.15);
            let next = x.last().unwrap() + dir * len;
            x.push(next);
        }
        let theta = (0..n - 1).map(|_| rng.random_range(-1.0..1.0)).collect();
        let state = StrandState::new(x, theta).unwrap();
        let mut config = StrandConfig::uniform(n, 0.05, 1.0, 1.0, 1.0, 1.0);
        for c in config.c_st.iter_mut().chain(&mut config.c_be).chain(&mut config.c_tw) {
            *c = rng.random_range(0.5..2.0);
        }
        let mut rest = naive_rest_params(&config, &state).unwrap();
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
        let mass = MassMatrix::new(&config, &rest.rest_len);
        (config, state, rest, mass)
    }

    /// Central differences of `energy` over generalized DOFs, moving the
    /// frames by time-parallel transport for every probe.
    fn fd_gradient(state: &StrandState, dofs: std::ops::Range<usize>, h: f64, energy: impl Fn(&StrandState) -> f64) -> Vec<f64> {
        let q = state.q();
        dofs.map(|k| {
            let probe = |sign: f64| {
                let mut s = state.clone();
                let mut qq = q.clone();
                qq[k] += sign * h;
                s.set_q(&qq).unwrap();
                energy(&s)
            };
            (probe(1.0) - probe(-1.0)) / (2.0 * h)
        })
        .collect()
    }

    #[test]
    fn stretch_by_hand() {
        let (mut config, state, mut rest, _) = random_case(1);
        config.radius = 1.0 / std::f64::consts::PI.sqrt();
        rest.s = 1.0;
        rest.alpha[1] = 1.0;
        let geom = Geometry::new(&state).unwrap();
        rest.rest_len[1] = geom.lengths[1] / 2.0;
        // l = 2 l̄ ⇒ E = ½ (π r² / l̄) l̄² = π r² l̄ / 2
        let e = energy_stretch(&config, &geom, &rest, 1).unwrap();
        assert!((e - rest.rest_len[1] / 2.0).abs() < 1e-15);
        rest.rest_len[1] = geom.lengths[1];
        assert_eq!(energy_stretch(&config, &geom, &rest, 1).unwrap(), 0.0);
        assert_eq!(grad_stretch(&config, &geom, &rest, 1).unwrap(), Vec3::zeros());
        assert!(energy_stretch(&config, &geom, &rest, 0).is_err());
    }

    #[test]
    fn unit_stretch_example() {
        let config = StrandConfig::uniform(4, 1.0, 1.0, 1.0, 1.0, 1.0);
        let x = vec![
            Vec3::zeros(),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(3.0, 0.0, 0.0),
            Vec3::new(4.0, 0.0, 0.0),
        ];
        let state = StrandState::new(x, vec![0.0; 3]).unwrap();
        let mut rest = naive_rest_params(&config, &state).unwrap();
        rest.rest_len[1] = 1.0;
        let geom = Geometry::new(&state).unwrap();
        let e = energy_stretch(&config, &geom, &rest, 1).unwrap();
        assert!((e - rest.s * rest.alpha[1] * std::f64::consts::PI / 2.0).abs() < 1e-14);
    }

    #[test]
    fn naive_rest_zeroes_elastic_terms() {
        let (mut config, state, _, _) = random_case(2);
        let rest = naive_rest_params(&config, &state).unwrap();
        let geom = Geometry::new(&state).unwrap();
        assert_eq!(elastic_energy(&config, &geom, &rest).unwrap(), 0.0);
        let mass = MassMatrix::new(&config, &rest.rest_len);
        config.gravity = [0.0; 3];
        let f = total_force(&config, &state, &rest, &mass).unwrap();
        assert!(f.values.iter().all(|&v| v == 0.0));
        config.gravity = [0.0, -9.81, 0.0];
        let f = total_force(&config, &state, &rest, &mass).unwrap();
        let fext = external_force(&config, &mass);
        assert_eq!(f.values, fext[CLAMPED_DOFS..].to_vec());
    }

    #[test]
    fn straight_strand_without_rest_curvature_has_no_bending() {
        let (config, state) = make_scene(SceneKind::Horizontal, 8, 1.0).unwrap();
        let rest = naive_rest_params(&config, &state).unwrap();
        let geom = Geometry::new(&state).unwrap();
        for i in 1..7 {
            assert_eq!(energy_bend(&config, &geom, &rest, i).unwrap(), 0.0);
            assert_eq!(grad_bend(&config, &geom, &rest, i).unwrap(), [0.0; STENCIL]);
        }
    }

    #[test]
    fn twist_angle_derivatives_are_unit() {
        let (_, state, _, _) = random_case(3);
        let geom = Geometry::new(&state).unwrap();
        for i in 1..9 {
            assert_eq!(geom.twist_grad[i][3], -1.0);
            assert_eq!(geom.twist_grad[i][7], 1.0);
        }
    }

    #[test]
    fn inertia_static_case() {
        let (config, state, rest, mass) = random_case(4);
        let q = state.q();
        let fext = external_force(&config, &mass);
        let zeros = vec![0.0; q.len()];
        assert_eq!(energy_inertia(&q, &q, &mass, 1.0), 0.0);
        let q_star = inertia_target(&q, &zeros, &fext, &mass, 1.0);
        let g = grad_inertia(&q, &q_star, &mass, 1.0);
        for (gi, fi) in g.iter().zip(&fext) {
            assert!((gi + fi).abs() <= 1e-15 * fi.abs().max(1.0));
        }
        let _ = rest;
    }

    #[test]
    fn inertia_gradient_matches_fd() {
        let (_, state, _, mass) = random_case(5);
        let q = state.q();
        let q_star: Vec<f64> = q.iter().map(|v| v + 0.01).collect();
        let g = grad_inertia(&q, &q_star, &mass, 0.1);
        let h = 1e-6;
        let fd: Vec<f64> = (0..q.len())
            .map(|k| {
                let mut a = q.clone();
                let mut b = q.clone();
                a[k] += h;
                b[k] -= h;
                (energy_inertia(&a, &q_star, &mass, 0.1) - energy_inertia(&b, &q_star, &mass, 0.1))
                    / (2.0 * h)
            })
            .collect();
        assert!(rel_err(&g, &fd) < 1e-7);
    }

    #[test]
    fn stencil_gradients_match_fd() {
        for seed in 0..20 {
            let (config, state, rest, _) = random_case(100 + seed);
            let geom = Geometry::new(&state).unwrap();
            let h = 1e-6 * 0.1;
            for i in 1..9 {
                let off = stencil_offset(i);
                let gb = grad_bend(&config, &geom, &rest, i).unwrap();
                let fd = fd_gradient(&state, off..off + STENCIL, h, |s| {
                    energy_bend(&config, &Geometry::new(s).unwrap(), &rest, i).unwrap()
                });
                assert!(rel_err(&gb, &fd) < 1e-6, "bend seed {seed} vertex {i}: {}", rel_err(&gb, &fd));
                let gt = grad_twist(&config, &geom, &rest, i).unwrap();
                let fd = fd_gradient(&state, off..off + STENCIL, h, |s| {
                    energy_twist(&config, &Geometry::new(s).unwrap(), &rest, i).unwrap()
                });
                assert!(rel_err(&gt, &fd) < 1e-6, "twist seed {seed} vertex {i}: {}", rel_err(&gt, &fd));

                let gs = grad_stretch(&config, &geom, &rest, i).unwrap();
                let mut ana = vec![0.0; 7];
                for k in 0..3 {
                    ana[k] = -gs[k];
                    ana[4 + k] = gs[k];
                }
                let fd = fd_gradient(&state, dof_vertex(i)..dof_vertex(i) + 7, h, |s| {
                    energy_stretch(&config, &Geometry::new(s).unwrap(), &rest, i).unwrap()
                });
                assert!(rel_err(&ana, &fd) < 1e-7);
            }
        }
    }

    #[test]
    fn total_force_matches_fd() {
        for seed in 0..5 {
            let (config, state, rest, mass) = random_case(200 + seed);
            let f = total_force(&config, &state, &rest, &mass).unwrap();
            let fext = external_force(&config, &mass);
            let n = config.n;
            let fd = fd_gradient(&state, CLAMPED_DOFS..4 * n - 1, 1e-7, |s| {
                let e = elastic_energy(&config, &Geometry::new(s).unwrap(), &rest).unwrap();
                let q = s.q();
                e - q.iter().zip(&fext).map(|(a, b)| a * b).sum::<f64>()
            });
            let neg: Vec<f64> = fd.iter().map(|v| -v).collect();
            assert!(rel_err(&f.values, &neg) < 1e-6);
        }
    }

    /// `f(p1 + p2 - p0) = f(p1) + f(p2) - f(p0)` when the three parameter sets
    /// differ only in the entries touched by `perturb`.
    fn check_linearity(seed: u64, perturb: impl Fn(&mut RestParams, &mut ChaCha8Rng)) {
        let (config, state, rest0, mass) = random_case(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let mut r1 = rest0.clone();
        perturb(&mut r1, &mut rng);
        let mut r2 = rest0.clone();
        perturb(&mut r2, &mut rng);
        let combine = |a: &[f64], b: &[f64], c: &[f64]| -> Vec<f64> {
            a.iter().zip(b).zip(c).map(|((a, b), c)| a + b - c).collect()
        };
        let mut r12 = rest0.clone();
        for i in 0..config.n {
            for j in 0..4 {
                r12.rest_curv[i][j] = r1.rest_curv[i][j] + r2.rest_curv[i][j] - rest0.rest_curv[i][j];
            }
        }
        r12.rest_twist = combine(&r1.rest_twist, &r2.rest_twist, &rest0.rest_twist);
        r12.alpha = combine(&r1.alpha, &r2.alpha, &rest0.alpha);
        r12.beta = combine(&r1.beta, &r2.beta, &rest0.beta);
        r12.gamma = combine(&r1.gamma, &r2.gamma, &rest0.gamma);
        let f = |r: &RestParams| total_force(&config, &state, r, &mass).unwrap().values;
        let (f0, f1, f2, f12) = (f(&rest0), f(&r1), f(&r2), f(&r12));
        assert!(rel_err(&f12, &combine(&f1, &f2, &f0)) < 1e-10);
    }

    #[test]
    fn force_is_linear_in_rest_shape() {
        check_linearity(7, |r, rng| {
            for k in &mut r.rest_curv {
                k.iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
            }
            r.rest_twist.iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
        });
    }

    #[test]
    fn force_is_linear_in_stiffness() {
        check_linearity(9, |r, rng| {
            for v in r.alpha.iter_mut().chain(&mut r.beta).chain(&mut r.gamma) {
                *v += rng.random_range(-0.1..0.1);
            }
        });
    }

    #[test]
    fn energies_non_negative() {
        for seed in 0..20 {
            let (config, state, rest, _) = random_case(300 + seed);
            let geom = Geometry::new(&state).unwrap();
            for i in 1..9 {
                assert!(energy_stretch(&config, &geom, &rest, i).unwrap() >= 0.0);
                assert!(energy_bend(&config, &geom, &rest, i).unwrap() >= 0.0);
                assert!(energy_twist(&config, &geom, &rest, i).unwrap() >= 0.0);
            }
        }
    }
}
