//! Parameter layout and the force Jacobian `J = ∂f/∂p`.

use crate::energy::{curvature_residual_grad, stencil_offset, Geometry, STENCIL};
use crate::error::{Error, Result};
use crate::linalg::BandedSym;
use crate::strand::{dof_vertex, num_active_dofs, num_dofs, MassMatrix, RestParams, StrandConfig, CLAMPED_DOFS};

/// One optimization variable of an interior vertex block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamKind {
    /// Rest curvature component `j ∈ {0, 1}`, written to slots `j` and `j + 2`.
    RestCurvShared(usize),
    /// A single rest curvature slot `j ∈ 0..4`.
    RestCurv(usize),
    Beta,
    RestTwist,
    Gamma,
    /// Rest length of the edge following the vertex.
    RestLen,
    /// Stretch multiplier of the edge following the vertex.
    Alpha,
}

impl ParamKind {
    pub fn is_stiffness(self) -> bool {
        matches!(self, Self::Beta | Self::Gamma | Self::Alpha)
    }
}

/// Column order of the parameter vector: one block per interior vertex
/// `i = 1..N-2`, each holding the same sequence of kinds.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamLayout {
    n: usize,
    block: Vec<ParamKind>,
}

impl ParamLayout {
    pub fn new(n: usize, block: Vec<ParamKind>) -> Result<Self> {
        if n < 4 {
            return Err(Error::BadDimension(format!("strand needs at least 4 vertices, got {n}")));
        }
        if block.is_empty() {
            return Err(Error::Config("parameter block is empty".into()));
        }
        Ok(Self { n, block })
    }

    /// Rest shape and stiffness with the reduced rest curvature:
    /// `(κ̄0, κ̄1, β, m̄, γ, l̄, α)` per vertex, `7N - 14` columns.
    pub fn full(n: usize) -> Result<Self> {
        use ParamKind::*;
        Self::new(
            n,
            vec![RestCurvShared(0), RestCurvShared(1), Beta, RestTwist, Gamma, RestLen, Alpha],
        )
    }

    /// `(κ̄0, κ̄1, m̄, l̄)` per vertex, `4N - 8` columns.
    pub fn rest_shape_only(n: usize) -> Result<Self> {
        use ParamKind::*;
        Self::new(n, vec![RestCurvShared(0), RestCurvShared(1), RestTwist, RestLen])
    }

    /// `(κ̄0, κ̄1, κ̄2, κ̄3, m̄, l̄)` per vertex, `6N - 12` columns.
    pub fn rest_shape_4d(n: usize) -> Result<Self> {
        use ParamKind::*;
        Self::new(
            n,
            vec![RestCurv(0), RestCurv(1), RestCurv(2), RestCurv(3), RestTwist, RestLen],
        )
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn block(&self) -> &[ParamKind] {
        &self.block
    }

    pub fn ncols(&self) -> usize {
        self.block.len() * (self.n - 2)
    }

    pub fn is_reduced(&self) -> bool {
        self.block.iter().any(|k| matches!(k, ParamKind::RestCurvShared(_)))
    }

    /// `(vertex, kind)` of column `col`.
    pub fn describe(&self, col: usize) -> (usize, ParamKind) {
        let b = self.block.len();
        (col / b + 1, self.block[col % b])
    }

    pub fn column(&self, vertex: usize, kind: ParamKind) -> Option<usize> {
        if vertex == 0 || vertex + 1 >= self.n {
            return None;
        }
        let slot = self.block.iter().position(|&k| k == kind)?;
        Some((vertex - 1) * self.block.len() + slot)
    }

    pub fn extract(&self, rest: &RestParams) -> Vec<f64> {
        (0..self.ncols())
            .map(|c| {
                let (i, kind) = self.describe(c);
                match kind {
                    ParamKind::RestCurvShared(j) | ParamKind::RestCurv(j) => rest.rest_curv[i][j],
                    ParamKind::Beta => rest.beta[i],
                    ParamKind::RestTwist => rest.rest_twist[i],
                    ParamKind::Gamma => rest.gamma[i],
                    ParamKind::RestLen => rest.rest_len[i],
                    ParamKind::Alpha => rest.alpha[i],
                }
            })
            .collect()
    }

    /// Writes `p` into `rest`; shared curvature entries fill both slots.
    pub fn apply(&self, p: &[f64], rest: &mut RestParams) -> Result<()> {
        if p.len() != self.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.ncols(),
                found: p.len(),
            });
        }
        for (c, &v) in p.iter().enumerate() {
            let (i, kind) = self.describe(c);
            match kind {
                ParamKind::RestCurvShared(j) => {
                    rest.rest_curv[i][j] = v;
                    rest.rest_curv[i][j + 2] = v;
                }
                ParamKind::RestCurv(j) => rest.rest_curv[i][j] = v,
                ParamKind::Beta => rest.beta[i] = v,
                ParamKind::RestTwist => rest.rest_twist[i] = v,
                ParamKind::Gamma => rest.gamma[i] = v,
                ParamKind::RestLen => rest.rest_len[i] = v,
                ParamKind::Alpha => rest.alpha[i] = v,
            }
        }
        Ok(())
    }
}

/// Rectangular matrix stored by column, each column a contiguous row range.
#[derive(Clone, Debug, PartialEq)]
pub struct BandedRect {
    nrows: usize,
    starts: Vec<usize>,
    values: Vec<Vec<f64>>,
}

impl BandedRect {
    pub fn new(nrows: usize) -> Self {
        Self {
            nrows,
            starts: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Appends a column whose entries occupy rows `start..start + values.len()`.
    pub fn push_column(&mut self, start: usize, values: Vec<f64>) -> Result<()> {
        if start + values.len() > self.nrows {
            return Err(Error::OutOfBand {
                row: start + values.len() - 1,
                col: self.starts.len(),
            });
        }
        self.starts.push(start);
        self.values.push(values);
        Ok(())
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.starts.len()
    }

    /// Stored rows of column `c`.
    pub fn column_range(&self, c: usize) -> std::ops::Range<usize> {
        self.starts[c]..self.starts[c] + self.values[c].len()
    }

    pub fn column(&self, c: usize) -> &[f64] {
        &self.values[c]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let r = self.column_range(col);
        if r.contains(&row) {
            self.values[col][row - r.start]
        } else {
            0.0
        }
    }

    /// Number of stored entries.
    pub fn nnz(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.ncols(),
                found: x.len(),
            });
        }
        let mut y = vec![0.0; self.nrows];
        for (c, &xc) in x.iter().enumerate() {
            let s = self.starts[c];
            for (k, v) in self.values[c].iter().enumerate() {
                y[s + k] += v * xc;
            }
        }
        Ok(y)
    }

    /// `Jᵀ y`.
    pub fn tmatvec(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.nrows {
            return Err(Error::DimensionMismatch {
                expected: self.nrows,
                found: y.len(),
            });
        }
        Ok((0..self.ncols())
            .map(|c| {
                let s = self.starts[c];
                self.values[c].iter().zip(&y[s..]).map(|(a, b)| a * b).sum()
            })
            .collect())
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols()]; self.nrows];
        for c in 0..self.ncols() {
            for r in self.column_range(c) {
                d[r][c] = self.get(r, c);
            }
        }
        d
    }

    /// Half-bandwidth of `Jᵀ D J` implied by overlapping column ranges.
    pub fn gram_half_bandwidth(&self) -> usize {
        let mut hbw = 0;
        for a in 0..self.ncols() {
            let ra = self.column_range(a);
            for b in a + 1..self.ncols() {
                let rb = self.column_range(b);
                if rb.start < ra.end && ra.start < rb.end {
                    hbw = hbw.max(b - a);
                } else if rb.start >= ra.end {
                    break;
                }
            }
        }
        hbw
    }

    /// Number of structurally nonzero entries of `Jᵀ D J` (both triangles).
    pub fn gram_structural_nnz(&self) -> usize {
        let mut count = 0;
        for a in 0..self.ncols() {
            let ra = self.column_range(a);
            for b in 0..self.ncols() {
                let rb = self.column_range(b);
                if rb.start < ra.end && ra.start < rb.end {
                    count += 1;
                }
            }
        }
        count
    }

    /// `scale · Jᵀ diag(w) J` assembled directly into band storage.
    pub fn weighted_gram(&self, w: &[f64], scale: f64) -> Result<BandedSym> {
        if w.len() != self.nrows {
            return Err(Error::DimensionMismatch {
                expected: self.nrows,
                found: w.len(),
            });
        }
        let n = self.ncols();
        let hbw = self.gram_half_bandwidth().min(n.saturating_sub(1));
        let mut out = BandedSym::zeros(n, hbw)?;
        let mut weighted = Vec::new();
        for b in 0..n {
            let rb = self.column_range(b);
            weighted.clear();
            weighted.extend(self.values[b].iter().zip(&w[rb.clone()]).map(|(v, w)| v * w));
            for a in b.saturating_sub(hbw)..=b {
                let ra = self.column_range(a);
                let lo = ra.start.max(rb.start);
                let hi = ra.end.min(rb.end);
                if lo >= hi {
                    continue;
                }
                let va = &self.values[a][lo - ra.start..hi - ra.start];
                let vb = &weighted[lo - rb.start..hi - rb.start];
                let dot: f64 = va.iter().zip(vb).map(|(x, y)| x * y).sum();
                out.add(b, a, scale * dot)?;
            }
        }
        Ok(out)
    }
}

/// Local columns of one stretched edge over `(x_i, θ_i, x_{i+1})`.
#[derive(Clone, Debug, PartialEq)]
pub struct StretchColumns {
    pub rest_len: [f64; 7],
    pub alpha: [f64; 7],
}

/// `∂f/∂l̄_i` and `∂f/∂α_i` of the stretching force of edge `i`.
pub fn jac_stretch(
    config: &StrandConfig,
    geom: &Geometry,
    rest: &RestParams,
    i: usize,
) -> Result<StretchColumns> {
    if i == 0 || i + 1 >= geom.n() {
        return Err(Error::BadDimension(format!("edge {i} carries no stretching energy")));
    }
    let area = config.area();
    let (l, lb) = (geom.lengths[i], rest.rest_len[i]);
    let t = geom.tangents[i];
    let dl = t * (rest.s * rest.alpha[i] * area * l / (lb * lb));
    let da = t * (-rest.s * area * (l / lb - 1.0));
    let mut out = StretchColumns {
        rest_len: [0.0; 7],
        alpha: [0.0; 7],
    };
    for k in 0..3 {
        out.rest_len[k] = -dl[k];
        out.rest_len[4 + k] = dl[k];
        out.alpha[k] = -da[k];
        out.alpha[4 + k] = da[k];
    }
    Ok(out)
}

/// Local columns of the bending force of vertex `i` over its stencil.
#[derive(Clone, Debug, PartialEq)]
pub struct BendColumns {
    /// Shared by `l̄_{i-1}` and `l̄_i`.
    pub rest_len: [f64; STENCIL],
    /// `∂f/∂κ̄_{i,j}` for each of the four slots.
    pub rest_curv: [[f64; STENCIL]; 4],
    pub beta: [f64; STENCIL],
}

impl BendColumns {
    /// Column of a shared component `j ∈ {0, 1}`.
    pub fn rest_curv_shared(&self, j: usize) -> [f64; STENCIL] {
        std::array::from_fn(|k| self.rest_curv[j][k] + self.rest_curv[j + 2][k])
    }
}

pub fn jac_bend(
    config: &StrandConfig,
    geom: &Geometry,
    rest: &RestParams,
    i: usize,
) -> Result<BendColumns> {
    if i == 0 || i + 1 >= geom.n() {
        return Err(Error::BadDimension(format!("vertex {i} is not interior")));
    }
    let r2 = config.radius * config.radius;
    let base = rest.s * std::f64::consts::PI * r2 * r2 / 4.0;
    let sum = rest.rest_len[i - 1] + rest.rest_len[i];
    let resid = curvature_residual_grad(geom, rest, i);
    let c = base * rest.beta[i] / sum;
    Ok(BendColumns {
        rest_len: resid.map(|g| c / sum * g),
        rest_curv: std::array::from_fn(|j| geom.curvature_grad[i][j].map(|g| c * g)),
        beta: resid.map(|g| -base / sum * g),
    })
}

/// Local columns of the twisting force of vertex `i` over its stencil.
#[derive(Clone, Debug, PartialEq)]
pub struct TwistColumns {
    /// Shared by `l̄_{i-1}` and `l̄_i`.
    pub rest_len: [f64; STENCIL],
    pub rest_twist: [f64; STENCIL],
    pub gamma: [f64; STENCIL],
}

pub fn jac_twist(
    config: &StrandConfig,
    geom: &Geometry,
    rest: &RestParams,
    i: usize,
) -> Result<TwistColumns> {
    if i == 0 || i + 1 >= geom.n() {
        return Err(Error::BadDimension(format!("vertex {i} is not interior")));
    }
    let r2 = config.radius * config.radius;
    let base = rest.s * std::f64::consts::PI * r2 * r2;
    let sum = rest.rest_len[i - 1] + rest.rest_len[i];
    let dm = geom.twist[i] - rest.rest_twist[i];
    let grad = &geom.twist_grad[i];
    let c = base * rest.gamma[i] / sum;
    Ok(TwistColumns {
        rest_len: grad.map(|g| c / sum * dm * g),
        rest_twist: grad.map(|g| c * g),
        gamma: grad.map(|g| -base / sum * dm * g),
    })
}

/// Generalized DOF range touched by a parameter of vertex `i`.
fn global_range(n: usize, i: usize, kind: ParamKind) -> std::ops::Range<usize> {
    match kind {
        ParamKind::Alpha => dof_vertex(i)..dof_vertex(i) + 7,
        ParamKind::RestLen => stencil_offset(i)..(stencil_offset(i + 1) + STENCIL).min(num_dofs(n)),
        _ => stencil_offset(i)..stencil_offset(i) + STENCIL,
    }
}

/// Adds `local` (starting at generalized DOF `offset`) into `col`, which
/// covers generalized DOFs starting at `col_start`.
fn accumulate(col: &mut [f64], col_start: usize, offset: usize, local: &[f64]) {
    for (k, v) in local.iter().enumerate() {
        col[offset + k - col_start] += v;
    }
}

/// Assembles `∂f/∂p` in `layout` order over the active DOFs. The external
/// force does not depend on `p` and contributes nothing.
pub fn assemble_jacobian(
    config: &StrandConfig,
    geom: &Geometry,
    rest: &RestParams,
    layout: &ParamLayout,
) -> Result<BandedRect> {
    let n = config.n;
    if layout.n() != n || geom.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: layout.n(),
        });
    }
    let mut bend = Vec::with_capacity(n);
    let mut tw = Vec::with_capacity(n);
    bend.push(None);
    tw.push(None);
    for i in 1..n - 1 {
        bend.push(Some(jac_bend(config, geom, rest, i)?));
        tw.push(Some(jac_twist(config, geom, rest, i)?));
    }
    let mut jac = BandedRect::new(num_active_dofs(n));
    for col in 0..layout.ncols() {
        let (i, kind) = layout.describe(col);
        let range = global_range(n, i, kind);
        let mut v = vec![0.0; range.len()];
        let b = bend[i].as_ref().expect("interior vertex");
        let t = tw[i].as_ref().expect("interior vertex");
        let off = stencil_offset(i);
        match kind {
            ParamKind::RestCurvShared(j) => accumulate(&mut v, range.start, off, &b.rest_curv_shared(j)),
            ParamKind::RestCurv(j) => accumulate(&mut v, range.start, off, &b.rest_curv[j]),
            ParamKind::Beta => accumulate(&mut v, range.start, off, &b.beta),
            ParamKind::RestTwist => accumulate(&mut v, range.start, off, &t.rest_twist),
            ParamKind::Gamma => accumulate(&mut v, range.start, off, &t.gamma),
            ParamKind::Alpha => {
                let s = jac_stretch(config, geom, rest, i)?;
                accumulate(&mut v, range.start, dof_vertex(i), &s.alpha);
            }
            ParamKind::RestLen => {
                let s = jac_stretch(config, geom, rest, i)?;
                accumulate(&mut v, range.start, dof_vertex(i), &s.rest_len);
                accumulate(&mut v, range.start, off, &b.rest_len);
                accumulate(&mut v, range.start, off, &t.rest_len);
                if let (Some(b1), Some(t1)) = (bend.get(i + 1).and_then(Option::as_ref), tw.get(i + 1).and_then(Option::as_ref)) {
                    let off1 = stencil_offset(i + 1);
                    accumulate(&mut v, range.start, off1, &b1.rest_len);
                    accumulate(&mut v, range.start, off1, &t1.rest_len);
                }
            }
        }
        let skip = CLAMPED_DOFS.saturating_sub(range.start);
        let start = (range.start + skip) - CLAMPED_DOFS;
        jac.push_column(start, v.split_off(skip.min(v.len())))?;
    }
    Ok(jac)
}

/// `c_i = f_i / √M_ii` over the active DOFs.
pub fn constraint(mass: &MassMatrix, f: &[f64]) -> Vec<f64> {
    f.iter()
        .zip(mass.active())
        .map(|(fi, m)| fi / m.sqrt())
        .collect()
}
