//! Compressed-row sparse matrices and preconditioned Krylov solvers.

use crate::error::{Error, Result, SolverReport};
use crate::mesh::Mesh;

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(n_rows: usize, n_cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|a| (a.0, a.1));
        let mut row_ptr = vec![0; n_rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < n_rows && c < n_cols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n_rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        CsrMatrix {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn diagonal_matrix(diag: &[f64]) -> Self {
        let n = diag.len();
        CsrMatrix {
            n_rows: n,
            n_cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: diag.to_vec(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[range.clone()].binary_search(&c) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    /// Position of entry `(r, c)` in the value array.
    pub fn position(&self, r: usize, c: usize) -> Option<usize> {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[range.clone()]
            .binary_search(&c)
            .ok()
            .map(|k| range.start + k)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows.min(self.n_cols)).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n_cols);
        assert_eq!(y.len(), self.n_rows);
        for (r, yr) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *yr = acc;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `x^T A` as a vector.
    pub fn transpose_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_cols];
        for (r, &xr) in x.iter().enumerate() {
            for (c, v) in self.row(r) {
                y[c] += v * xr;
            }
        }
        y
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n_rows, self.n_cols);
        for r in 0..self.n_rows {
            for (c, v) in self.row(r) {
                m[(r, c)] += v;
            }
        }
        m
    }
}

/// Cell-to-cell sparsity of a finite-volume mesh with direct slots for each
/// interior face, so matrices can be reassembled in place every time step.
#[derive(Clone, Debug)]
pub struct FaceAddressing {
    pattern: CsrMatrix,
    diag: Vec<usize>,
    /// `(P,N)` and `(N,P)` slots for each interior face.
    upper: Vec<usize>,
    lower: Vec<usize>,
}

impl FaceAddressing {
    pub fn new(mesh: &Mesh) -> Self {
        let n = mesh.n_cells();
        let mut t: Vec<(usize, usize, f64)> = (0..n).map(|c| (c, c, 0.0)).collect();
        for f in 0..mesh.n_internal_faces() {
            let p = mesh.owner()[f];
            let q = mesh.neighbour()[f];
            t.push((p, q, 0.0));
            t.push((q, p, 0.0));
        }
        let pattern = CsrMatrix::from_triplets(n, n, t);
        let diag = (0..n).map(|c| pattern.position(c, c).unwrap()).collect();
        let mut upper = Vec::with_capacity(mesh.n_internal_faces());
        let mut lower = Vec::with_capacity(mesh.n_internal_faces());
        for f in 0..mesh.n_internal_faces() {
            let p = mesh.owner()[f];
            let q = mesh.neighbour()[f];
            upper.push(pattern.position(p, q).unwrap());
            lower.push(pattern.position(q, p).unwrap());
        }
        FaceAddressing {
            pattern,
            diag,
            upper,
            lower,
        }
    }

    /// A zeroed matrix with the mesh sparsity.
    pub fn matrix(&self) -> CsrMatrix {
        self.pattern.clone()
    }

    pub fn diag(&self, cell: usize) -> usize {
        self.diag[cell]
    }

    pub fn upper(&self, face: usize) -> usize {
        self.upper[face]
    }

    pub fn lower(&self, face: usize) -> usize {
        self.lower[face]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preconditioner {
    None,
    Jacobi,
    /// Diagonal incomplete LU; reduces to diagonal incomplete Cholesky for
    /// symmetric matrices.
    Dilu,
}

/// Convergence test on the max-norm of the residual:
/// `|r|_inf <= max(absolute, relative * |b|_inf)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerance {
    pub absolute: f64,
    pub relative: f64,
    pub max_iterations: usize,
}

impl Tolerance {
    pub fn relative(relative: f64) -> Self {
        Tolerance {
            absolute: 0.0,
            relative,
            max_iterations: 10_000,
        }
    }

    pub fn absolute(absolute: f64) -> Self {
        Tolerance {
            absolute,
            relative: 0.0,
            max_iterations: 10_000,
        }
    }

    fn target(&self, b: &[f64]) -> f64 {
        self.absolute.max(self.relative * max_norm(b))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

pub(crate) fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn dotp(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn residual(a: &CsrMatrix, b: &[f64], x: &[f64], r: &mut [f64]) {
    a.mul_vec_into(x, r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
}

enum Precond {
    Identity,
    Jacobi(Vec<f64>),
    Dilu { rd: Vec<f64> },
}

impl Precond {
    fn new(a: &CsrMatrix, kind: Preconditioner) -> Result<Self> {
        let n = a.n_rows();
        Ok(match kind {
            Preconditioner::None => Precond::Identity,
            Preconditioner::Jacobi => {
                let d = a.diagonal();
                if d.contains(&0.0) {
                    return Err(Error::Singular("zero on the matrix diagonal".into()));
                }
                Precond::Jacobi(d.iter().map(|v| 1.0 / v).collect())
            }
            Preconditioner::Dilu => {
                let mut d = a.diagonal();
                for i in 0..n {
                    if d[i] == 0.0 {
                        return Err(Error::Singular(format!("zero pivot in DILU at row {i}")));
                    }
                    for (j, aij) in a.row(i) {
                        if j > i {
                            let aji = a.get(j, i);
                            d[j] -= aij * aji / d[i];
                        }
                    }
                }
                Precond::Dilu {
                    rd: d.iter().map(|v| 1.0 / v).collect(),
                }
            }
        })
    }

    fn apply(&self, a: &CsrMatrix, r: &[f64], z: &mut [f64]) {
        match self {
            Precond::Identity => z.copy_from_slice(r),
            Precond::Jacobi(inv) => {
                for i in 0..r.len() {
                    z[i] = inv[i] * r[i];
                }
            }
            Precond::Dilu { rd } => {
                let n = r.len();
                for i in 0..n {
                    let mut acc = r[i];
                    for (j, v) in a.row(i) {
                        if j < i {
                            acc -= v * z[j];
                        }
                    }
                    z[i] = rd[i] * acc;
                }
                for i in (0..n).rev() {
                    let mut acc = 0.0;
                    for (j, v) in a.row(i) {
                        if j > i {
                            acc += v * z[j];
                        }
                    }
                    z[i] -= rd[i] * acc;
                }
            }
        }
    }
}

fn failure(solver: &'static str, iterations: usize, residual: f64, tolerance: f64) -> Error {
    Error::LinearSolver(SolverReport {
        solver,
        iterations,
        residual,
        tolerance,
    })
}

/// Preconditioned conjugate gradients for symmetric positive definite `a`.
/// `x` holds the initial guess on entry.
pub fn pcg(
    a: &CsrMatrix,
    b: &[f64],
    x: &mut [f64],
    precond: Preconditioner,
    tol: Tolerance,
) -> Result<SolveStats> {
    let n = b.len();
    let target = tol.target(b);
    let m = Precond::new(a, precond)?;
    let mut r = vec![0.0; n];
    residual(a, b, x, &mut r);
    let mut res = max_norm(&r);
    if res <= target {
        return Ok(SolveStats {
            iterations: 0,
            residual: res,
        });
    }
    let mut z = vec![0.0; n];
    m.apply(a, &r, &mut z);
    let mut p = z.clone();
    let mut rz = dotp(&r, &z);
    let mut q = vec![0.0; n];
    for it in 1..=tol.max_iterations {
        a.mul_vec_into(&p, &mut q);
        let pq = dotp(&p, &q);
        if pq == 0.0 || !pq.is_finite() {
            return Err(failure("PCG", it, res, target));
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        res = max_norm(&r);
        if res <= target {
            // Guard against drift of the recursively updated residual.
            residual(a, b, x, &mut r);
            res = max_norm(&r);
            if res <= target {
                return Ok(SolveStats {
                    iterations: it,
                    residual: res,
                });
            }
        }
        m.apply(a, &r, &mut z);
        let rz_new = dotp(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(failure("PCG", tol.max_iterations, res, target))
}

/// Right-preconditioned BiCGStab for general square `a`.
pub fn bicgstab(
    a: &CsrMatrix,
    b: &[f64],
    x: &mut [f64],
    precond: Preconditioner,
    tol: Tolerance,
) -> Result<SolveStats> {
    let n = b.len();
    let target = tol.target(b);
    let m = Precond::new(a, precond)?;
    let mut r = vec![0.0; n];
    residual(a, b, x, &mut r);
    let mut res = max_norm(&r);
    if res <= target {
        return Ok(SolveStats {
            iterations: 0,
            residual: res,
        });
    }
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut phat = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut shat = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 1..=tol.max_iterations {
        let rho_new = dotp(&r0, &r);
        if rho_new == 0.0 || !rho_new.is_finite() {
            return Err(failure("BiCGStab", it, res, target));
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        m.apply(a, &p, &mut phat);
        a.mul_vec_into(&phat, &mut v);
        alpha = rho / dotp(&r0, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if max_norm(&s) <= target {
            for i in 0..n {
                x[i] += alpha * phat[i];
            }
            residual(a, b, x, &mut r);
            res = max_norm(&r);
            if res <= target {
                return Ok(SolveStats {
                    iterations: it,
                    residual: res,
                });
            }
            continue;
        }
        m.apply(a, &s, &mut shat);
        a.mul_vec_into(&shat, &mut t);
        let tt = dotp(&t, &t);
        omega = if tt > 0.0 { dotp(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * phat[i] + omega * shat[i];
            r[i] = s[i] - omega * t[i];
        }
        res = max_norm(&r);
        if res <= target {
            residual(a, b, x, &mut r);
            res = max_norm(&r);
            if res <= target {
                return Ok(SolveStats {
                    iterations: it,
                    residual: res,
                });
            }
        }
        if omega == 0.0 || !res.is_finite() {
            return Err(failure("BiCGStab", it, res, target));
        }
    }
    Err(failure("BiCGStab", tol.max_iterations, res, target))
}
