//! Compressed sparse row matrices and the linear solvers used by the
//! discretization: banded LU for the (block-)banded finite-volume matrices
//! and BiCGSTAB with an ILU(0) preconditioner as fallback.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds an `n × n` matrix, summing duplicate entries.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(Error::Index(format!("entry ({i}, {j}) outside {n}×{n} matrix")));
            }
            rows[i].push((j, v));
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in &mut rows {
            row.sort_by_key(|e| e.0);
            for &(j, v) in row.iter() {
                if cols.len() > *row_ptr.last().unwrap() && *cols.last().unwrap() == j {
                    *values.last_mut().unwrap() += v;
                } else {
                    cols.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Ok(Self {
            n,
            row_ptr,
            cols,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n,
            row_ptr: (0..=n).collect(),
            cols: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(column, value)` pairs of row `i` in increasing column order.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// Adds `d[i]` to every diagonal entry, creating missing ones.
    pub fn add_diagonal(&self, d: &[f64]) -> Self {
        let mut t: Vec<(usize, usize, f64)> = self.triplets();
        t.extend(d.iter().enumerate().map(|(i, &v)| (i, i, v)));
        Self::from_triplets(self.n, &t).expect("indices in range")
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut m = self.clone();
        m.values.iter_mut().for_each(|v| *v *= s);
        m
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v)))
            .collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    /// `|A| |x|`, the scale of the rounding error in `A x`.
    fn abs_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(j, v)| (v * x[j]).abs()).sum())
            .collect()
    }

    /// Largest `|a_ij − a_ji|` relative to the largest entry magnitude.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst / scale
    }

    /// Half bandwidth `max |i − j|` over stored entries.
    pub fn bandwidth(&self) -> usize {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, _)| i.abs_diff(j)))
            .max()
            .unwrap_or(0)
    }
}

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// LU factors without pivoting, stored in band format. Adequate for the
/// M-matrices and SPD matrices produced by the finite-volume assembly.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    bw: usize,
    /// Row `i` holds columns `i − bw ..= i + bw` at offsets `0 ..= 2 bw`.
    band: Vec<f64>,
}

impl BandedLu {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.dim();
        let bw = a.bandwidth();
        let width = 2 * bw + 1;
        let mut band = vec![0.0; n * width];
        for i in 0..n {
            for (j, v) in a.row(i) {
                band[i * width + (j + bw - i)] = v;
            }
        }
        let at = |i: usize, j: usize| i * width + (j + bw - i);
        for k in 0..n {
            let pivot = band[at(k, k)];
            if pivot == 0.0 || !pivot.is_finite() {
                return Err(Error::LinearSolver {
                    reason: format!("zero pivot in row {k}"),
                    residual: f64::NAN,
                });
            }
            let last = (k + bw).min(n - 1);
            for i in k + 1..=last {
                let l = band[at(i, k)] / pivot;
                if l == 0.0 {
                    continue;
                }
                band[at(i, k)] = l;
                for j in k + 1..=last {
                    band[at(i, j)] -= l * band[at(k, j)];
                }
            }
        }
        Ok(Self { n, bw, band })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, bw) = (self.n, self.bw);
        let width = 2 * bw + 1;
        let at = |i: usize, j: usize| i * width + (j + bw - i);
        let mut x = b.to_vec();
        for i in 0..n {
            let first = i.saturating_sub(bw);
            let mut s = x[i];
            for j in first..i {
                s -= self.band[at(i, j)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let last = (i + bw).min(n - 1);
            let mut s = x[i];
            for j in i + 1..=last {
                s -= self.band[at(i, j)] * x[j];
            }
            x[i] = s / self.band[at(i, i)];
        }
        x
    }
}

/// Incomplete LU with the sparsity pattern of the matrix.
struct Ilu0 {
    a: CsrMatrix,
    diag_pos: Vec<usize>,
}

impl Ilu0 {
    fn new(a: &CsrMatrix) -> Result<Self> {
        let mut m = a.clone();
        let n = m.n;
        let mut diag_pos = vec![usize::MAX; n];
        for i in 0..n {
            for k in m.row_ptr[i]..m.row_ptr[i + 1] {
                if m.cols[k] == i {
                    diag_pos[i] = k;
                }
            }
            if diag_pos[i] == usize::MAX {
                return Err(Error::LinearSolver {
                    reason: format!("missing diagonal in row {i}"),
                    residual: f64::NAN,
                });
            }
        }
        for i in 1..n {
            for kk in m.row_ptr[i]..m.row_ptr[i + 1] {
                let k = m.cols[kk];
                if k >= i {
                    break;
                }
                let pivot = m.values[diag_pos[k]];
                if pivot == 0.0 {
                    return Err(Error::LinearSolver {
                        reason: format!("zero ILU pivot in row {k}"),
                        residual: f64::NAN,
                    });
                }
                let l = m.values[kk] / pivot;
                m.values[kk] = l;
                for jj in kk + 1..m.row_ptr[i + 1] {
                    let j = m.cols[jj];
                    if let Ok(p) = m.cols[m.row_ptr[k]..m.row_ptr[k + 1]].binary_search(&j) {
                        m.values[jj] -= l * m.values[m.row_ptr[k] + p];
                    }
                }
            }
        }
        Ok(Self { a: m, diag_pos })
    }

    fn apply(&self, r: &[f64]) -> Vec<f64> {
        let m = &self.a;
        let n = m.n;
        let mut x = r.to_vec();
        for i in 0..n {
            for k in m.row_ptr[i]..self.diag_pos[i] {
                x[i] -= m.values[k] * x[m.cols[k]];
            }
        }
        for i in (0..n).rev() {
            for k in self.diag_pos[i] + 1..m.row_ptr[i + 1] {
                x[i] -= m.values[k] * x[m.cols[k]];
            }
            x[i] /= m.values[self.diag_pos[i]];
        }
        x
    }
}

/// Preconditioned BiCGSTAB; returns the iterate and its residual norm.
pub fn bicgstab(a: &CsrMatrix, b: &[f64], x0: &[f64], rtol: f64, max_iter: usize) -> Result<(Vec<f64>, f64)> {
    let pre = Ilu0::new(a)?;
    let bnorm = norm2(b);
    let mut x = x0.to_vec();
    let ax = a.mul_vec(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let r_hat = r.clone();
    let mut rho = 1.0;
    let mut alpha = 1.0;
    let mut omega = 1.0;
    let n = b.len();
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut res = norm2(&r);
    for _ in 0..max_iter {
        if res <= rtol * bnorm {
            break;
        }
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || omega == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let p_hat = pre.apply(&p);
        v = a.mul_vec(&p_hat);
        let d = dot(&r_hat, &v);
        if d == 0.0 {
            break;
        }
        alpha = rho / d;
        let s: Vec<f64> = r.iter().zip(&v).map(|(r, v)| r - alpha * v).collect();
        let s_hat = pre.apply(&s);
        let t = a.mul_vec(&s_hat);
        let tt = dot(&t, &t);
        omega = if tt == 0.0 { 0.0 } else { dot(&t, &s) / tt };
        for i in 0..n {
            x[i] += alpha * p_hat[i] + omega * s_hat[i];
            r[i] = s[i] - omega * t[i];
        }
        res = norm2(&r);
    }
    let ax = a.mul_vec(&x);
    let res = norm2(&b.iter().zip(&ax).map(|(b, a)| b - a).collect::<Vec<_>>());
    Ok((x, res))
}

/// A factored matrix that solves to the requested residual tolerance.
#[derive(Debug, Clone)]
pub struct Factorization {
    matrix: CsrMatrix,
    lu: BandedLu,
    rtol: f64,
}

impl Factorization {
    pub fn new(matrix: &CsrMatrix, rtol: f64) -> Result<Self> {
        Ok(Self {
            lu: BandedLu::factor(matrix)?,
            matrix: matrix.clone(),
            rtol,
        })
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    /// Direct solve with iterative refinement. Accepts the result when
    /// `‖b − Ax‖ ≤ rtol ‖b‖`, or when the residual is at the rounding level
    /// of evaluating `Ax` itself; otherwise falls back to BiCGSTAB.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let a = &self.matrix;
        if b.len() != a.dim() {
            return Err(Error::Index(format!(
                "right-hand side of length {} for a {}×{} system",
                b.len(),
                a.dim(),
                a.dim()
            )));
        }
        let bnorm = norm2(b);
        if bnorm == 0.0 {
            return Ok(vec![0.0; b.len()]);
        }
        let mut x = self.lu.solve(b);
        let mut res = f64::INFINITY;
        for _ in 0..4 {
            let ax = a.mul_vec(&x);
            let r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
            res = norm2(&r);
            if !res.is_finite() {
                break;
            }
            if self.accepts(&x, res, bnorm) {
                return Ok(x);
            }
            let dx = self.lu.solve(&r);
            x.iter_mut().zip(&dx).for_each(|(x, d)| *x += d);
        }
        let x0 = if res.is_finite() { x } else { vec![0.0; b.len()] };
        let (x, res) = bicgstab(a, b, &x0, self.rtol, 10 * a.dim() + 100)?;
        if self.accepts(&x, res, bnorm) {
            Ok(x)
        } else {
            Err(Error::LinearSolver {
                reason: "residual above tolerance after direct and iterative solves".into(),
                residual: res / bnorm,
            })
        }
    }

    fn accepts(&self, x: &[f64], res: f64, bnorm: f64) -> bool {
        if res <= self.rtol * bnorm {
            return true;
        }
        let floor = norm2(&self.matrix.abs_mul_vec(x)) + bnorm;
        res <= 16.0 * f64::EPSILON * floor * (self.matrix.dim() as f64).sqrt()
    }
}

/// One-shot solve of `A x = b`.
pub fn solve(a: &CsrMatrix, b: &[f64], rtol: f64) -> Result<Vec<f64>> {
    Factorization::new(a, rtol)?.solve(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, &t).unwrap()
    }

    #[test]
    fn duplicates_are_summed() {
        let m = CsrMatrix::from_triplets(2, &[(0, 0, 1.0), (0, 0, 2.0), (1, 0, -1.0)]).unwrap();
        assert_eq!(m.get(0, 0), 3.0);
        assert_eq!(m.get(1, 0), -1.0);
        assert_eq!(m.get(0, 1), 0.0);
        assert_eq!(m.nnz(), 2);
    }

    #[test]
    fn identity_solve() {
        let b = vec![1.0, -2.0, 3.5];
        assert_eq!(solve(&CsrMatrix::identity(3), &b, 1e-12).unwrap(), b);
    }

    #[test]
    fn banded_lu_matches_tridiagonal() {
        let a = laplace(50);
        let b: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let x = solve(&a, &b, 1e-12).unwrap();
        let r: Vec<f64> = a.mul_vec(&x).iter().zip(&b).map(|(a, b)| a - b).collect();
        assert!(norm2(&r) <= 1e-12 * norm2(&b));
    }

    #[test]
    fn bicgstab_converges_on_nonsymmetric() {
        let n = 40;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 3.0));
            if i > 0 {
                t.push((i, i - 1, -2.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -0.5));
            }
        }
        let a = CsrMatrix::from_triplets(n, &t).unwrap();
        let b = vec![1.0; n];
        let (x, res) = bicgstab(&a, &b, &vec![0.0; n], 1e-13, 500).unwrap();
        assert!(res <= 1e-12 * norm2(&b), "{res}");
        let y = solve(&a, &b, 1e-12).unwrap();
        for (x, y) in x.iter().zip(&y) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn singular_matrix_is_reported() {
        let a = CsrMatrix::from_triplets(2, &[(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]).unwrap();
        assert!(matches!(solve(&a, &[1.0, 0.0], 1e-12), Err(Error::LinearSolver { .. })));
    }

    #[test]
    fn asymmetry_and_bandwidth() {
        let a = laplace(5);
        assert_eq!(a.asymmetry(), 0.0);
        assert_eq!(a.bandwidth(), 1);
        let b = CsrMatrix::from_triplets(3, &[(0, 2, 1.0), (2, 0, 0.5)]).unwrap();
        assert_eq!(b.bandwidth(), 2);
        assert_eq!(b.asymmetry(), 0.5);
    }
}
