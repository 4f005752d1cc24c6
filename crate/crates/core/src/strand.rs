//! Strand geometry and kinematics.
//!
//! Generalized coordinates interleave vertices and edge angles,
//! `q = (x_0, θ_0, x_1, θ_1, …, θ_{N-2}, x_{N-1}) ∈ ℝ^{4N-1}`, so vertex `i`
//! lives at `q[4i..4i+3]` and edge angle `e` at `q[4e+3]`. The bending and
//! twisting stencil of interior vertex `i` is the contiguous slice
//! `q[4(i-1)..4(i-1)+11]`.
//!
//! The root is minimally clamped: `x_0`, `θ_0` and `x_1` (the first seven
//! generalized DOFs) are fixed, leaving `4N - 8` active DOFs. Active DOF `a`
//! maps to generalized DOF `a + CLAMPED_DOFS`.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Number of leading generalized DOFs fixed by the root clamp.
pub const CLAMPED_DOFS: usize = 7;

/// Tangents closer than this to antiparallel (`1 + t·t'`) are rejected.
pub const ANTIPARALLEL_TOL: f64 = 1e-10;

const FRAME_DRIFT_TOL: f64 = 1e-12;

#[inline]
pub fn dof_vertex(i: usize) -> usize {
    4 * i
}

#[inline]
pub fn dof_edge(e: usize) -> usize {
    4 * e + 3
}

pub fn num_dofs(n: usize) -> usize {
    4 * n - 1
}

pub fn num_active_dofs(n: usize) -> usize {
    4 * n - 8
}

/// Material and numerical settings of one strand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrandConfig {
    /// Vertex count.
    pub n: usize,
    pub radius: f64,
    pub density: f64,
    /// Stretching coefficients, one per edge.
    pub c_st: Vec<f64>,
    /// Bending coefficients, one per vertex (endpoints unused).
    pub c_be: Vec<f64>,
    /// Twisting coefficients, one per vertex (endpoints unused).
    pub c_tw: Vec<f64>,
    pub gravity: [f64; 3],
    /// Forward-simulation time step.
    pub dt: f64,
}

impl StrandConfig {
    pub fn uniform(n: usize, radius: f64, density: f64, c_st: f64, c_be: f64, c_tw: f64) -> Self {
        Self {
            n,
            radius,
            density,
            c_st: vec![c_st; n.saturating_sub(1)],
            c_be: vec![c_be; n],
            c_tw: vec![c_tw; n],
            gravity: [0.0, -9.81, 0.0],
            dt: 1.0 / 240.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        if n < 4 {
            return Err(Error::BadDimension(format!("strand needs at least 4 vertices, got {n}")));
        }
        if self.c_st.len() != n - 1 || self.c_be.len() != n || self.c_tw.len() != n {
            return Err(Error::BadDimension(format!(
                "stiffness arrays must have lengths {} / {n} / {n}, got {} / {} / {}",
                n - 1,
                self.c_st.len(),
                self.c_be.len(),
                self.c_tw.len()
            )));
        }
        if !(self.radius > 0.0) || !(self.density > 0.0) {
            return Err(Error::Config("radius and density must be positive".into()));
        }
        let interior = |v: &[f64]| v[1..n - 1].iter().all(|&c| c > 0.0);
        if !self.c_st[1..].iter().all(|&c| c > 0.0) || !interior(&self.c_be) || !interior(&self.c_tw)
        {
            return Err(Error::Config("stiffness coefficients must be positive".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config("time step must be positive".into()));
        }
        Ok(())
    }

    pub fn gravity(&self) -> Vec3 {
        Vec3::from(self.gravity)
    }

    /// Cross-section area `π r²`.
    pub fn area(&self) -> f64 {
        std::f64::consts::PI * self.radius * self.radius
    }
}

/// Generalized positions, reference frames and velocities of one strand.
#[derive(Clone, Debug, PartialEq)]
pub struct StrandState {
    pub x: Vec<Vec3>,
    pub theta: Vec<f64>,
    pub d1: Vec<Vec3>,
    pub d2: Vec<Vec3>,
    /// Reference twist per vertex; entries at the two endpoints stay zero.
    pub ref_twist: Vec<f64>,
    /// Generalized velocity over all `4N - 1` DOFs.
    pub velocity: Vec<f64>,
}

impl StrandState {
    /// Builds a state whose reference frames are space-parallel transported
    /// from an automatically chosen director on the first edge.
    pub fn new(x: Vec<Vec3>, theta: Vec<f64>) -> Result<Self> {
        let (t, _) = tangents_lengths(&x)?;
        let d1_root = any_perpendicular(&t[0]);
        Self::with_root_director(x, theta, d1_root)
    }

    /// Like [`new`](Self::new) with an explicit first-edge director, which is
    /// projected onto the plane normal to the first tangent.
    pub fn with_root_director(x: Vec<Vec3>, theta: Vec<f64>, d1_root: Vec3) -> Result<Self> {
        let n = x.len();
        if n < 4 {
            return Err(Error::BadDimension(format!("strand needs at least 4 vertices, got {n}")));
        }
        if theta.len() != n - 1 {
            return Err(Error::DimensionMismatch {
                expected: n - 1,
                found: theta.len(),
            });
        }
        let (t, _) = tangents_lengths(&x)?;
        let mut d = d1_root - t[0] * d1_root.dot(&t[0]);
        if d.norm() < 1e-12 {
            d = any_perpendicular(&t[0]);
        }
        let mut d1 = Vec::with_capacity(n - 1);
        d1.push(d.normalize());
        for e in 1..n - 1 {
            let next = parallel_transport(&d1[e - 1], &t[e - 1], &t[e]);
            d1.push(orthonormalize(&next, &t[e]));
        }
        let d2 = d1.iter().zip(&t).map(|(d, t)| t.cross(d)).collect();
        let mut state = Self {
            x,
            theta,
            d1,
            d2,
            ref_twist: vec![0.0; n],
            velocity: vec![0.0; num_dofs(n)],
        };
        state.ref_twist = reference_twists(&state.d1, &t, &state.ref_twist);
        Ok(state)
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    /// Generalized position vector `q`.
    pub fn q(&self) -> Vec<f64> {
        let n = self.n();
        let mut q = vec![0.0; num_dofs(n)];
        for (i, xi) in self.x.iter().enumerate() {
            q[dof_vertex(i)..dof_vertex(i) + 3].copy_from_slice(xi.as_slice());
        }
        for (e, th) in self.theta.iter().enumerate() {
            q[dof_edge(e)] = *th;
        }
        q
    }

    /// Moves the strand to generalized positions `q`, carrying reference
    /// frames along by time-parallel transport and refreshing reference twists.
    pub fn set_q(&mut self, q: &[f64]) -> Result<()> {
        let n = self.n();
        if q.len() != num_dofs(n) {
            return Err(Error::DimensionMismatch {
                expected: num_dofs(n),
                found: q.len(),
            });
        }
        let x: Vec<Vec3> = (0..n)
            .map(|i| Vec3::new(q[dof_vertex(i)], q[dof_vertex(i) + 1], q[dof_vertex(i) + 2]))
            .collect();
        self.update_positions(x)?;
        for e in 0..n - 1 {
            self.theta[e] = q[dof_edge(e)];
        }
        Ok(())
    }

    /// Replaces vertex positions, transporting each edge's reference frame
    /// from its old tangent to its new one.
    pub fn update_positions(&mut self, x: Vec<Vec3>) -> Result<()> {
        if x.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                found: x.len(),
            });
        }
        let (t_old, _) = tangents_lengths(&self.x)?;
        let (t_new, _) = tangents_lengths(&x)?;
        for e in 0..t_new.len() {
            let mut d1 = parallel_transport(&self.d1[e], &t_old[e], &t_new[e]);
            let drift = (d1.norm() - 1.0).abs().max(d1.dot(&t_new[e]).abs());
            if drift > FRAME_DRIFT_TOL {
                d1 = orthonormalize(&d1, &t_new[e]);
            }
            self.d1[e] = d1;
            self.d2[e] = t_new[e].cross(&d1);
        }
        self.x = x;
        self.ref_twist = reference_twists(&self.d1, &t_new, &self.ref_twist);
        Ok(())
    }

    pub fn tangents_lengths(&self) -> Result<(Vec<Vec3>, Vec<f64>)> {
        tangents_lengths(&self.x)
    }

    pub fn material_frames(&self) -> (Vec<Vec3>, Vec<Vec3>) {
        material_frames(&self.d1, &self.d2, &self.theta)
    }

    /// Total arc length of the polyline.
    pub fn length(&self) -> f64 {
        self.x.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }
}

fn orthonormalize(v: &Vec3, t: &Vec3) -> Vec3 {
    let p = v - t * v.dot(t);
    if p.norm() < 1e-12 {
        any_perpendicular(t)
    } else {
        p.normalize()
    }
}

/// A unit vector perpendicular to `t`, built from the coordinate axis least
/// aligned with it.
pub fn any_perpendicular(t: &Vec3) -> Vec3 {
    let a = t.abs();
    let axis = if a.x <= a.y && a.x <= a.z {
        Vec3::x()
    } else if a.y <= a.z {
        Vec3::y()
    } else {
        Vec3::z()
    };
    t.cross(&axis).normalize()
}

/// Unit tangents and lengths of every edge.
pub fn tangents_lengths(x: &[Vec3]) -> Result<(Vec<Vec3>, Vec<f64>)> {
    let lengths: Vec<f64> = x.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
    let total: f64 = lengths.iter().sum();
    let min_len = 1e-12 * total;
    let mut t = Vec::with_capacity(lengths.len());
    for (e, (w, &l)) in x.windows(2).zip(&lengths).enumerate() {
        if !(l > min_len) {
            return Err(Error::DegenerateEdge(e));
        }
        t.push((w[1] - w[0]) / l);
    }
    Ok((t, lengths))
}

/// Rotates `v` by the minimal rotation taking unit `t_from` onto unit `t_to`.
///
/// For (near-)antiparallel tangents the minimal rotation is not unique; the
/// fallback is a half turn about the component of `v` normal to `t_from`
/// (or about an arbitrary normal when `v` is parallel to `t_from`).
pub fn parallel_transport(v: &Vec3, t_from: &Vec3, t_to: &Vec3) -> Vec3 {
    let c = t_from.dot(t_to);
    if 1.0 + c < ANTIPARALLEL_TOL {
        let p = v - t_from * v.dot(t_from);
        let axis = if p.norm() > 1e-12 * v.norm().max(1e-300) {
            p.normalize()
        } else {
            any_perpendicular(t_from)
        };
        return axis * (2.0 * axis.dot(v)) - v;
    }
    let b = t_from.cross(t_to);
    let s = b.norm();
    if s == 0.0 {
        return *v;
    }
    rotate_about(v, &(b / s), s.atan2(c))
}

/// `atan2` angle from `a` to `b` measured about `axis`.
pub fn signed_angle(a: &Vec3, b: &Vec3, axis: &Vec3) -> f64 {
    a.cross(b).dot(axis).atan2(a.dot(b))
}

/// Rotates `v` by `angle` about unit `axis` (Rodrigues).
pub fn rotate_about(v: &Vec3, axis: &Vec3, angle: f64) -> Vec3 {
    let (s, c) = angle.sin_cos();
    v * c + axis.cross(v) * s + axis * (axis.dot(v) * (1.0 - c))
}

/// Material frames `m1 = cosθ d1 + sinθ d2`, `m2 = -sinθ d1 + cosθ d2`.
pub fn material_frames(d1: &[Vec3], d2: &[Vec3], theta: &[f64]) -> (Vec<Vec3>, Vec<Vec3>) {
    d1.iter()
        .zip(d2)
        .zip(theta)
        .map(|((a, b), &th)| {
            let (s, c) = th.sin_cos();
            (a * c + b * s, -a * s + b * c)
        })
        .unzip()
}

/// Reference twist at each interior vertex: the signed angle about `t_i`
/// from the space-parallel transport of `d1^{i-1}` to `d1^i`. The previous
/// values unwrap the angle so twists accumulate past ±π.
pub fn reference_twists(d1: &[Vec3], t: &[Vec3], previous: &[f64]) -> Vec<f64> {
    let n = d1.len() + 1;
    let mut out = vec![0.0; n];
    for i in 1..n - 1 {
        let u = parallel_transport(&d1[i - 1], &t[i - 1], &t[i]);
        let u = rotate_about(&u, &t[i], previous[i]);
        out[i] = previous[i] + signed_angle(&u, &d1[i], &t[i]);
    }
    out
}

/// Discrete curvature binormal `2 (t0 × t1) / (1 + t0·t1)` at `vertex`.
pub fn curvature_binormal(t0: &Vec3, t1: &Vec3, vertex: usize) -> Result<Vec3> {
    let chi = 1.0 + t0.dot(t1);
    if chi < ANTIPARALLEL_TOL {
        return Err(Error::AntiparallelTangents(vertex));
    }
    Ok(t0.cross(t1) * (2.0 / chi))
}

/// Four-dimensional curvature at interior vertex `i`:
/// `(κb·m2^{i-1}, -κb·m1^{i-1}, κb·m2^i, -κb·m1^i)`.
pub fn curvature4(t: &[Vec3], m1: &[Vec3], m2: &[Vec3], i: usize) -> Result<[f64; 4]> {
    let kb = curvature_binormal(&t[i - 1], &t[i], i)?;
    Ok([
        kb.dot(&m2[i - 1]),
        -kb.dot(&m1[i - 1]),
        kb.dot(&m2[i]),
        -kb.dot(&m1[i]),
    ])
}

/// Twist `m_i = θ_i - θ_{i-1} + ref_twist_i` at interior vertex `i`.
pub fn twist(theta: &[f64], ref_twist: &[f64], i: usize) -> f64 {
    theta[i] - theta[i - 1] + ref_twist[i]
}

/// Diagonal generalized mass over all `4N - 1` DOFs.
#[derive(Clone, Debug, PartialEq)]
pub struct MassMatrix {
    pub diag: Vec<f64>,
}

impl MassMatrix {
    /// Lumped cylinder masses: each vertex takes half of each incident edge,
    /// each edge angle the rotational inertia `(ρ π r² l̄) r² / 2`.
    pub fn new(config: &StrandConfig, rest_len: &[f64]) -> Self {
        let n = config.n;
        let lin = config.density * config.area();
        let mut diag = vec![0.0; num_dofs(n)];
        for i in 0..n {
            let mut len = 0.0;
            if i > 0 {
                len += rest_len[i - 1];
            }
            if i + 1 < n {
                len += rest_len[i];
            }
            let m = lin * len / 2.0;
            diag[dof_vertex(i)..dof_vertex(i) + 3].fill(m);
        }
        let r2 = config.radius * config.radius;
        for e in 0..n - 1 {
            diag[dof_edge(e)] = lin * rest_len[e] * r2 / 2.0;
        }
        Self { diag }
    }

    /// Diagonal restricted to the active DOFs.
    pub fn active(&self) -> &[f64] {
        &self.diag[CLAMPED_DOFS..]
    }
}

/// Rest shape and material stiffness parameters.
///
/// Stiffness coefficients are `s α` (stretch), `s β` (bend), `s γ` (twist).
/// Per-edge arrays have `N - 1` entries, per-vertex arrays `N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestParams {
    pub rest_len: Vec<f64>,
    pub rest_curv: Vec<[f64; 4]>,
    pub rest_twist: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub s: f64,
}

impl RestParams {
    /// Copies the optimized slots 0/1 of every rest curvature into 2/3.
    pub fn synchronize_curvature(&mut self) {
        for k in &mut self.rest_curv {
            k[2] = k[0];
            k[3] = k[1];
        }
    }

    pub fn is_synchronized(&self) -> bool {
        self.rest_curv.iter().all(|k| k[2] == k[0] && k[3] == k[1])
    }
}

/// Rest parameters equal to the current geometry, with stiffness multipliers
/// from the configured coefficients.
pub fn naive_rest_params(config: &StrandConfig, state: &StrandState) -> Result<RestParams> {
    config.validate()?;
    let n = config.n;
    if state.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: state.n(),
        });
    }
    let (t, l) = state.tangents_lengths()?;
    let (m1, m2) = state.material_frames();
    let mut rest_curv = vec![[0.0; 4]; n];
    let mut rest_twist = vec![0.0; n];
    for i in 1..n - 1 {
        rest_curv[i] = curvature4(&t, &m1, &m2, i)?;
        rest_twist[i] = twist(&state.theta, &state.ref_twist, i);
    }
    let scaling = crate::alm::stiffness_scaling(&config.c_st, &config.c_be, &config.c_tw)?;
    Ok(RestParams {
        rest_len: l,
        rest_curv,
        rest_twist,
        alpha: scaling.alpha,
        beta: scaling.beta,
        gamma: scaling.gamma,
        s: scaling.s,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneKind {
    Vertical,
    Horizontal,
    Coil,
}

impl std::str::FromStr for SceneKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vertical" => Ok(Self::Vertical),
            "horizontal" => Ok(Self::Horizontal),
            "coil" => Ok(Self::Coil),
            other => Err(Error::Config(format!("unknown scene kind '{other}'"))),
        }
    }
}

/// Material and geometric defaults for the built-in scenes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub radius: f64,
    pub density: f64,
    pub c_st: f64,
    pub c_be: f64,
    pub c_tw: f64,
    pub gravity: [f64; 3],
    pub dt: f64,
    /// Suggested strand length for the scene.
    pub length: f64,
    /// Helix radius of the coil scene, as a fraction of the strand length.
    pub coil_radius: f64,
    /// Axial drop per helix turn of the coil scene, as a fraction of the length.
    pub coil_pitch: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            radius: 1e-3,
            density: 1.3e3,
            c_st: 1e9,
            c_be: 1e9,
            c_tw: 1e9,
            gravity: [0.0, -9.81, 0.0],
            dt: 1.0 / 240.0,
            length: 1.0,
            coil_radius: 0.05,
            coil_pitch: 0.05,
        }
    }
}

impl SceneParams {
    /// Per-scene defaults. The vertical strand is thin, long and soft in
    /// stretching so that rest lengths alone cannot hold it up.
    pub fn preset(kind: SceneKind) -> Self {
        match kind {
            SceneKind::Vertical => Self {
                radius: 2e-4,
                c_st: 1e3,
                length: 2.5,
                ..Self::default()
            },
            SceneKind::Horizontal | SceneKind::Coil => Self::default(),
        }
    }
}

/// Builds one of the reference scenes with the root at the origin:
/// `Vertical` hangs straight down along gravity, `Horizontal` extends along
/// `+x`, `Coil` is a helix descending along gravity.
pub fn make_scene(kind: SceneKind, n: usize, length: f64) -> Result<(StrandConfig, StrandState)> {
    make_scene_with(kind, n, length, &SceneParams::preset(kind))
}

pub fn make_scene_with(
    kind: SceneKind,
    n: usize,
    length: f64,
    params: &SceneParams,
) -> Result<(StrandConfig, StrandState)> {
    if n < 4 {
        return Err(Error::BadDimension(format!("strand needs at least 4 vertices, got {n}")));
    }
    if !(length > 0.0) {
        return Err(Error::Config("strand length must be positive".into()));
    }
    let h = length / (n - 1) as f64;
    let x: Vec<Vec3> = match kind {
        SceneKind::Vertical => (0..n).map(|i| Vec3::new(0.0, -(i as f64) * h, 0.0)).collect(),
        SceneKind::Horizontal => (0..n).map(|i| Vec3::new(i as f64 * h, 0.0, 0.0)).collect(),
        SceneKind::Coil => {
            let radius = params.coil_radius * length;
            let pitch = params.coil_pitch * length;
            let turn_len = ((2.0 * std::f64::consts::PI * radius).powi(2) + pitch * pitch).sqrt();
            let dphi = 2.0 * std::f64::consts::PI * h / turn_len;
            (0..n)
                .map(|i| {
                    let phi = i as f64 * dphi;
                    Vec3::new(
                        radius * (phi.cos() - 1.0),
                        -pitch * phi / (2.0 * std::f64::consts::PI),
                        radius * phi.sin(),
                    )
                })
                .collect()
        }
    };
    let mut config = StrandConfig::uniform(
        n,
        params.radius,
        params.density,
        params.c_st,
        params.c_be,
        params.c_tw,
    );
    config.gravity = params.gravity;
    config.dt = params.dt;
    let state = StrandState::new(x, vec![0.0; n - 1])?;
    Ok((config, state))
}
