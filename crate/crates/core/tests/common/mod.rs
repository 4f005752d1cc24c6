#![allow(dead_code)]

use rand::Rng;
use sagfree::linalg::BandedSym;

pub type Dense = Vec<Vec<f64>>;

/// Symmetric, strictly diagonally dominant band matrix.
pub fn random_banded_spd<R: Rng>(rng: &mut R, n: usize, hbw: usize) -> BandedSym {
    let hbw = hbw.min(n.saturating_sub(1));
    let mut a = BandedSym::zeros(n, hbw).unwrap();
    let mut row_sum = vec![0.0; n];
    for i in 0..n {
        for j in i.saturating_sub(hbw)..i {
            let v: f64 = rng.random_range(-1.0..1.0);
            a.add(i, j, v).unwrap();
            row_sum[i] += v.abs();
            row_sum[j] += v.abs();
        }
    }
    for (i, s) in row_sum.iter().enumerate() {
        a.add(i, i, s + rng.random_range(0.5..2.0)).unwrap();
    }
    a
}

/// `BᵀB + δI` stored with full bandwidth.
pub fn random_dense_spd<R: Rng>(rng: &mut R, n: usize, delta: f64) -> BandedSym {
    let b: Dense = (0..n).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let mut a = BandedSym::zeros(n, n - 1).unwrap();
    for i in 0..n {
        for j in 0..=i {
            let mut v: f64 = (0..n).map(|k| b[k][i] * b[k][j]).sum();
            if i == j {
                v += delta;
            }
            a.add(i, j, v).unwrap();
        }
    }
    a
}

pub fn matvec(a: &Dense, x: &[f64]) -> Vec<f64> {
    a.iter().map(|row| row.iter().zip(x).map(|(a, x)| a * x).sum()).collect()
}

pub fn frobenius(a: &Dense) -> f64 {
    a.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

/// Gaussian elimination with partial pivoting.
pub fn dense_solve(a: &Dense, b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut m: Dense = a.iter().zip(b).map(|(row, &bi)| row.iter().copied().chain([bi]).collect()).collect();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))?;
        if m[p][c] == 0.0 {
            return None;
        }
        m.swap(c, p);
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for k in c..=n {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| m[i][k] * x[k]).sum();
        x[i] = (m[i][n] - s) / m[i][i];
    }
    Some(x)
}

/// Minimizer of `½xᵀAx − bᵀx` with every variable fixed by `state`
/// (−1 lower, +1 upper, 0 free). `None` when a fixed bound is infinite.
fn solve_pattern(a: &Dense, b: &[f64], lo: &[f64], hi: &[f64], state: &[i8]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut x = vec![0.0; n];
    for i in 0..n {
        match state[i] {
            -1 => x[i] = lo[i],
            1 => x[i] = hi[i],
            _ => {}
        }
        if !x[i].is_finite() {
            return None;
        }
    }
    let free: Vec<usize> = (0..n).filter(|&i| state[i] == 0).collect();
    if !free.is_empty() {
        let sub: Dense = free.iter().map(|&i| free.iter().map(|&j| a[i][j]).collect()).collect();
        let rhs: Vec<f64> = free
            .iter()
            .map(|&i| b[i] - (0..n).filter(|&j| state[j] != 0).map(|j| a[i][j] * x[j]).sum::<f64>())
            .collect();
        let xf = dense_solve(&sub, &rhs)?;
        for (k, &i) in free.iter().enumerate() {
            x[i] = xf[k];
        }
    }
    Some(x)
}

/// Whether `x` satisfies the box KKT conditions to `tol` (scaled by `‖b‖∞ + 1`).
pub fn satisfies_kkt(a: &Dense, b: &[f64], lo: &[f64], hi: &[f64], x: &[f64], tol: f64) -> bool {
    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let t = tol * scale;
    let g: Vec<f64> = matvec(a, x).iter().zip(b).map(|(ax, b)| ax - b).collect();
    (0..b.len()).all(|i| {
        let width = t * (1.0 + x[i].abs());
        if x[i] < lo[i] - width || x[i] > hi[i] + width {
            return false;
        }
        let at_lo = (x[i] - lo[i]).abs() <= width;
        let at_hi = (x[i] - hi[i]).abs() <= width;
        (at_lo && g[i] >= -t) || (at_hi && g[i] <= t) || g[i].abs() <= t
    })
}

/// Exact minimizer of a strictly convex box QP. Tries the pattern suggested by
/// projected Gauss-Seidel first, then enumerates every free/lower/upper pattern.
pub fn bcqp_oracle(a: &Dense, b: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    const KKT_TOL: f64 = 1e-11;
    let n = b.len();
    let mut x: Vec<f64> = (0..n).map(|i| 0.0f64.clamp(lo[i], hi[i])).collect();
    for _ in 0..2000 {
        for i in 0..n {
            let s: f64 = (0..n).filter(|&j| j != i).map(|j| a[i][j] * x[j]).sum();
            x[i] = ((b[i] - s) / a[i][i]).clamp(lo[i], hi[i]);
        }
    }
    let guess: Vec<i8> = (0..n)
        .map(|i| {
            if x[i] == lo[i] {
                -1
            } else if x[i] == hi[i] {
                1
            } else {
                0
            }
        })
        .collect();
    if let Some(x) = solve_pattern(a, b, lo, hi, &guess) {
        if satisfies_kkt(a, b, lo, hi, &x, KKT_TOL) {
            return x;
        }
    }
    let mut state = vec![-1i8; n];
    loop {
        if let Some(x) = solve_pattern(a, b, lo, hi, &state) {
            if satisfies_kkt(a, b, lo, hi, &x, KKT_TOL) {
                return x;
            }
        }
        let mut k = 0;
        loop {
            if k == n {
                panic!("no active pattern satisfies KKT");
            }
            if state[k] < 1 {
                state[k] += 1;
                break;
            }
            state[k] = -1;
            k += 1;
        }
    }
}
