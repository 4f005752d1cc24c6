//! Symmetric banded matrices, sqrt-free LDLᵀ factorization, and the
//! active-set filtered triangular solves behind the ASC preconditioner.
//!
//! # Storage
//!
//! `BandedSym` and `LdlFactor` share one layout: the lower band stored row by
//! row. Row `i` owns `w = hbw + 1` contiguous slots and slot `k` holds column
//! `j = i + k - hbw`, so the diagonal is the last slot of every row. Slots that
//! would address a negative column (the top-left corner) stay zero. Forward
//! substitution therefore streams each row contiguously, and the backward pass
//! is written as a column sweep over the same rows.

use std::io::{self, Write};

use crate::error::{Error, Result};

/// Symmetric matrix with all nonzeros inside `|i - j| <= hbw`.
#[derive(Clone, Debug, PartialEq)]
pub struct BandedSym {
    n: usize,
    hbw: usize,
    data: Vec<f64>,
}

impl BandedSym {
    pub fn zeros(n: usize, hbw: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::BadDimension("banded matrix needs n >= 1".into()));
        }
        if hbw >= n {
            return Err(Error::BadDimension(format!(
                "half-bandwidth {hbw} must be smaller than n = {n}"
            )));
        }
        Ok(Self {
            n,
            hbw,
            data: vec![0.0; n * (hbw + 1)],
        })
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut a = Self::zeros(n, 0)?;
        a.data.fill(1.0);
        Ok(a)
    }

    /// Builds a matrix from `(row, col, value)` triplets. Upper-triangle
    /// coordinates are mirrored into the lower band; duplicates are summed.
    pub fn assemble<I>(n: usize, hbw: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut a = Self::zeros(n, hbw)?;
        for (r, c, v) in entries {
            a.add(r, c, v)?;
        }
        Ok(a)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn hbw(&self) -> usize {
        self.hbw
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.hbw);
        i * (self.hbw + 1) + (j + self.hbw - i)
    }

    /// Adds `v` at `(row, col)` (and implicitly at its mirror).
    pub fn add(&mut self, row: usize, col: usize, v: f64) -> Result<()> {
        let (i, j) = if row >= col { (row, col) } else { (col, row) };
        if i >= self.n {
            return Err(Error::BadDimension(format!(
                "index ({row}, {col}) outside {0}x{0} matrix",
                self.n
            )));
        }
        if i - j > self.hbw {
            return Err(Error::OutOfBand { row, col });
        }
        let k = self.idx(i, j);
        self.data[k] += v;
        Ok(())
    }

    /// Entry `(i, j)`; zero outside the band.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i >= self.n || i - j > self.hbw {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.data[self.idx(i, i)]
    }

    pub fn max_abs_diag(&self) -> f64 {
        (0..self.n).map(|i| self.diag(i).abs()).fold(0.0, f64::max)
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: x.len(),
            });
        }
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        Ok(y)
    }

    /// `y = A x`. Panics on length mismatch.
    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        let w = self.hbw + 1;
        y.fill(0.0);
        for i in 0..self.n {
            let j0 = i.saturating_sub(self.hbw);
            let row = &self.data[i * w..(i + 1) * w];
            let off = j0 + self.hbw - i;
            let mut acc = row[self.hbw] * x[i];
            for (k, j) in (j0..i).enumerate() {
                let a = row[off + k];
                acc += a * x[j];
                y[j] += a * x[i];
            }
            y[i] += acc;
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j)).collect())
            .collect()
    }

    /// Number of stored entries that are nonzero, counted over the full
    /// symmetric matrix (both triangles).
    pub fn nnz(&self) -> usize {
        let mut count = 0;
        for i in 0..self.n {
            for j in i.saturating_sub(self.hbw)..=i {
                if self.get(i, j) != 0.0 {
                    count += if i == j { 1 } else { 2 };
                }
            }
        }
        count
    }

    /// MatrixMarket `coordinate real symmetric` dump (lower triangle, 1-based).
    pub fn write_matrix_market<W: Write>(&self, mut out: W) -> io::Result<()> {
        let mut entries = Vec::new();
        for i in 0..self.n {
            for j in i.saturating_sub(self.hbw)..=i {
                let v = self.get(i, j);
                if v != 0.0 {
                    entries.push((i, j, v));
                }
            }
        }
        writeln!(out, "%%MatrixMarket matrix coordinate real symmetric")?;
        writeln!(out, "{} {} {}", self.n, self.n, entries.len())?;
        for (i, j, v) in entries {
            writeln!(out, "{} {} {:.17e}", i + 1, j + 1, v)?;
        }
        Ok(())
    }
}

/// Per-DOF bound activity: `-1` at the lower bound, `+1` at the upper bound,
/// `0` free. The induced selection matrix has `S_ii = 1 - |a_i|`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActiveSet {
    flags: Vec<i8>,
}

impl ActiveSet {
    pub fn all_free(n: usize) -> Self {
        Self { flags: vec![0; n] }
    }

    pub fn from_flags(flags: Vec<i8>) -> Result<Self> {
        if let Some(bad) = flags.iter().find(|f| !(-1..=1).contains(*f)) {
            return Err(Error::Config(format!("active-set flag {bad} not in {{-1, 0, 1}}")));
        }
        Ok(Self { flags })
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn flags(&self) -> &[i8] {
        &self.flags
    }

    #[inline]
    pub fn is_free(&self, i: usize) -> bool {
        self.flags[i] == 0
    }

    pub fn set(&mut self, i: usize, flag: i8) {
        debug_assert!((-1..=1).contains(&flag));
        self.flags[i] = flag;
    }

    pub fn num_active(&self) -> usize {
        self.flags.iter().filter(|&&f| f != 0).count()
    }
}

/// Sqrt-free factor `A = L̂ D L̂ᵀ` of a banded SPD matrix, with `L̂` unit lower
/// triangular and sharing the input's half-bandwidth.
#[derive(Clone, Debug)]
pub struct LdlFactor {
    n: usize,
    hbw: usize,
    /// Strict lower part of `L̂` (diagonal slots hold 1).
    lower: Vec<f64>,
    /// `L̂_ij D_jj`, the multipliers used by the merged forward sweep.
    scaled: Vec<f64>,
    diag: Vec<f64>,
    clamp_count: usize,
}

/// Default pivot floor: `1e-12` times the largest diagonal magnitude.
pub fn default_pivot_floor(a: &BandedSym) -> f64 {
    let m = a.max_abs_diag();
    if m > 0.0 {
        1e-12 * m
    } else {
        1e-12
    }
}

impl LdlFactor {
    /// In-band LDLᵀ without pivoting. Pivots below `pivot_floor` (including
    /// negative or NaN pivots) are replaced by `pivot_floor` and counted.
    pub fn factorize(a: &BandedSym, pivot_floor: f64) -> Result<Self> {
        if !(pivot_floor > 0.0) {
            return Err(Error::Config(format!("pivot floor must be positive, got {pivot_floor}")));
        }
        let n = a.n;
        let hbw = a.hbw;
        let w = hbw + 1;
        let idx = |i: usize, j: usize| i * w + (j + hbw - i);
        let mut lower = vec![0.0; n * w];
        let mut scaled = vec![0.0; n * w];
        let mut diag = vec![0.0; n];
        let mut clamp_count = 0;

        for i in 0..n {
            let i0 = i.saturating_sub(hbw);
            for j in i0..i {
                let k0 = i0.max(j.saturating_sub(hbw));
                let mut v = a.data[idx(i, j)];
                for k in k0..j {
                    v -= scaled[idx(i, k)] * lower[idx(j, k)];
                }
                scaled[idx(i, j)] = v;
                lower[idx(i, j)] = v / diag[j];
            }
            let mut d = a.data[idx(i, i)];
            for k in i0..i {
                d -= scaled[idx(i, k)] * lower[idx(i, k)];
            }
            if !(d >= pivot_floor) {
                d = pivot_floor;
                clamp_count += 1;
            }
            diag[i] = d;
            lower[idx(i, i)] = 1.0;
            scaled[idx(i, i)] = d;
        }

        Ok(Self {
            n,
            hbw,
            lower,
            scaled,
            diag,
            clamp_count,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn hbw(&self) -> usize {
        self.hbw
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn clamp_count(&self) -> usize {
        self.clamp_count
    }

    /// Entry `L̂_ij` (unit diagonal, zero outside the band and above it).
    pub fn lower(&self, i: usize, j: usize) -> f64 {
        if j > i || i - j > self.hbw {
            0.0
        } else {
            self.lower[i * (self.hbw + 1) + (j + self.hbw - i)]
        }
    }

    /// Solves `A z = r` with the factor.
    pub fn solve(&self, r: &[f64]) -> Result<Vec<f64>> {
        self.check_len(r.len())?;
        let mut z = vec![0.0; self.n];
        self.sweep(r, None, &mut z);
        Ok(z)
    }

    /// Filtered solve: rows flagged active in `active` are skipped and come out
    /// exactly zero; on the free subspace the result is
    /// `(L̂_FF D_FF L̂_FFᵀ)⁻¹ r_F`, which keeps the map symmetric.
    pub fn solve_filtered(&self, r: &[f64], active: &ActiveSet) -> Result<Vec<f64>> {
        self.check_len(r.len())?;
        self.check_len(active.len())?;
        let mut z = vec![0.0; self.n];
        self.sweep(r, Some(active), &mut z);
        Ok(z)
    }

    /// Allocation-free variant of [`solve_filtered`](Self::solve_filtered).
    pub fn solve_filtered_into(&self, r: &[f64], active: &ActiveSet, z: &mut [f64]) {
        assert_eq!(r.len(), self.n);
        assert_eq!(active.len(), self.n);
        assert_eq!(z.len(), self.n);
        self.sweep(r, Some(active), z);
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: len,
            });
        }
        Ok(())
    }

    fn sweep(&self, r: &[f64], active: Option<&ActiveSet>, z: &mut [f64]) {
        let n = self.n;
        let hbw = self.hbw;
        let w = hbw + 1;
        let free = |i: usize| active.is_none_or(|a| a.is_free(i));

        // Forward sweep with the diagonal scaling merged in: (L̂ D) y = r.
        for i in 0..n {
            if !free(i) {
                z[i] = 0.0;
                continue;
            }
            let i0 = i.saturating_sub(hbw);
            let row = &self.scaled[i * w..(i + 1) * w];
            let off = i0 + hbw - i;
            let mut s = r[i];
            for (k, j) in (i0..i).enumerate() {
                s -= row[off + k] * z[j];
            }
            z[i] = s / self.diag[i];
        }

        // Backward sweep L̂ᵀ z = y, column-oriented over the stored rows.
        for i in (0..n).rev() {
            if !free(i) {
                z[i] = 0.0;
                continue;
            }
            let zi = z[i];
            let i0 = i.saturating_sub(hbw);
            let row = &self.lower[i * w..(i + 1) * w];
            let off = i0 + hbw - i;
            for (k, j) in (i0..i).enumerate() {
                z[j] -= row[off + k] * zi;
            }
        }
    }

    /// Writes `L̂` (unit lower, `coordinate real general`) and `D`
    /// (`array real general`) as MatrixMarket.
    pub fn write_matrix_market<W1: Write, W2: Write>(
        &self,
        mut lower_out: W1,
        mut diag_out: W2,
    ) -> io::Result<()> {
        let mut entries = Vec::new();
        for i in 0..self.n {
            for j in i.saturating_sub(self.hbw)..=i {
                let v = self.lower(i, j);
                if v != 0.0 {
                    entries.push((i, j, v));
                }
            }
        }
        writeln!(lower_out, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(lower_out, "{} {} {}", self.n, self.n, entries.len())?;
        for (i, j, v) in entries {
            writeln!(lower_out, "{} {} {:.17e}", i + 1, j + 1, v)?;
        }
        writeln!(diag_out, "%%MatrixMarket matrix array real general")?;
        writeln!(diag_out, "{} 1", self.n)?;
        for d in &self.diag {
            writeln!(diag_out, "{d:.17e}")?;
        }
        Ok(())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
