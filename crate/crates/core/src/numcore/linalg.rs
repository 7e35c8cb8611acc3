//! Dominant eigenpairs of small symmetric nonnegative matrices.

use crate::error::{Error, Result};

use super::kernels::dot;
use super::tensor::Tensor;

/// Eigenvalue gap below which the dominant eigenvalue is treated as repeated.
pub const DEGENERACY_GAP: f64 = 1e-10;

/// Residual `‖Gv − λv‖` every returned pair satisfies.
pub const RESIDUAL_BOUND: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Eigenpair {
    pub value: f64,
    /// Unit-norm, oriented so the first coordinate is nonnegative (entrywise
    /// nonnegative whenever the matrix is).
    pub vector: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

struct SymMatrix<'a> {
    n: usize,
    data: &'a [f64],
}

impl SymMatrix<'_> {
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(&self.data[i * self.n..(i + 1) * self.n], v);
        }
    }

    fn rayleigh(&self, v: &[f64]) -> f64 {
        let mut w = vec![0.0; self.n];
        self.apply(v, &mut w);
        dot(v, &w)
    }

    fn residual(&self, v: &[f64], lambda: f64) -> f64 {
        let mut w = vec![0.0; self.n];
        self.apply(v, &mut w);
        w.iter()
            .zip(v)
            .map(|(a, b)| (a - lambda * b).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Dominant eigenpair of a symmetric, entrywise nonnegative matrix.
///
/// Iterates from the normalized all-ones vector. When the top eigenvalue is
/// repeated (gap below [`DEGENERACY_GAP`]) the result is the axis vector with
/// the largest projection onto the dominant eigenspace, lowest index first,
/// projected and normalized.
pub fn power_iteration(g: &Tensor, tol: f64, max_iter: usize) -> Result<Eigenpair> {
    let n = match g.shape() {
        &[r, c] if r == c => r,
        s => return Err(Error::Shape(format!("power_iteration on {s:?}"))),
    };
    let data = g.data();
    let scale = data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite matrix entry".into()));
    }
    if scale == 0.0 {
        return Err(Error::Degenerate("all-zero matrix".into()));
    }
    for i in 0..n {
        for j in 0..i {
            if (data[i * n + j] - data[j * n + i]).abs() > 1e-12 * scale.max(1.0) {
                return Err(Error::Contract(format!("matrix not symmetric at ({i},{j})")));
            }
        }
    }
    if let Some(v) = data.iter().find(|v| **v < 0.0) {
        return Err(Error::Domain(format!("negative matrix entry {v}")));
    }
    let mat = SymMatrix { n, data };

    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut w = vec![0.0; n];
    let mut lambda = mat.rayleigh(&v);
    let mut residual = mat.residual(&v, lambda);
    let mut iterations = 0;
    while iterations < max_iter && residual > tol * lambda.abs().max(1.0) {
        mat.apply(&v, &mut w);
        let len = norm(&w);
        if len == 0.0 {
            return Err(Error::Degenerate("iterate collapsed to zero".into()));
        }
        for (a, b) in v.iter_mut().zip(&w) {
            *a = b / len;
        }
        lambda = mat.rayleigh(&v);
        residual = mat.residual(&v, lambda);
        iterations += 1;
    }

    let space = dominant_space(&mat, &v, lambda);
    if space.len() > 1 {
        let vector = tie_break(&space, n);
        let value = mat.rayleigh(&vector);
        let residual = mat.residual(&vector, value);
        return Ok(Eigenpair {
            value,
            vector,
            iterations,
            residual,
        });
    }

    if residual > RESIDUAL_BOUND {
        return Err(Error::IterationLimit {
            iterations,
            residual,
        });
    }
    if v.iter().sum::<f64>() < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    Ok(Eigenpair {
        value: lambda,
        vector: v,
        iterations,
        residual,
    })
}

/// Orthonormal basis of every eigenvector whose eigenvalue lies within
/// [`DEGENERACY_GAP`] of `lambda`, starting with `v`.
fn dominant_space(mat: &SymMatrix<'_>, v: &[f64], lambda: f64) -> Vec<Vec<f64>> {
    let n = mat.n;
    let mut basis = vec![v.to_vec()];
    // Gershgorin bound on the spectral radius; shifting by it makes the
    // deflated matrix positive semidefinite so its top eigenvalue is the
    // algebraically next-largest one of `mat`.
    let shift = (0..n)
        .map(|i| mat.data[i * n..(i + 1) * n].iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    while basis.len() < n {
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut x = mat.data[i * n + j];
                for b in &basis {
                    x -= (lambda + shift) * b[i] * b[j];
                }
                if i == j {
                    x += shift;
                }
                m[i * n + j] = x;
            }
        }
        let Some(u) = top_eigenvector_by_squaring(&mut m, n, &basis) else {
            break;
        };
        let mu = mat.rayleigh(&u);
        if lambda - mu < DEGENERACY_GAP {
            basis.push(u);
        } else {
            break;
        }
    }
    basis
}

/// Leading eigenvector of a PSD matrix via repeated normalized squaring,
/// orthogonalized against `basis`.
fn top_eigenvector_by_squaring(m: &mut [f64], n: usize, basis: &[Vec<f64>]) -> Option<Vec<f64>> {
    let mut tmp = vec![0.0; n * n];
    for _ in 0..64 {
        tmp.iter_mut().for_each(|x| *x = 0.0);
        super::kernels::matmul_acc(m, m, &mut tmp, n, n, n);
        let max = tmp.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        if max == 0.0 {
            return None;
        }
        for (a, b) in m.iter_mut().zip(&tmp) {
            *a = b / max;
        }
    }
    // Columns of the limit span the top eigenspace; take the longest one.
    let col = (0..n)
        .map(|j| (j, (0..n).map(|i| m[i * n + j].powi(2)).sum::<f64>()))
        .fold((0, -1.0), |best, c| if c.1 > best.1 { c } else { best })
        .0;
    let mut u: Vec<f64> = (0..n).map(|i| m[i * n + col]).collect();
    for b in basis {
        let p = dot(&u, b);
        u.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
    }
    let len = norm(&u);
    if len < 1e-8 {
        return None;
    }
    u.iter_mut().for_each(|x| *x /= len);
    Some(u)
}

fn tie_break(space: &[Vec<f64>], n: usize) -> Vec<f64> {
    let projection = |axis: usize| -> Vec<f64> {
        let mut p = vec![0.0; n];
        for b in space {
            p.iter_mut().zip(b).for_each(|(x, y)| *x += b[axis] * y);
        }
        p
    };
    let mut best = (0, -1.0);
    for axis in 0..n {
        let len = norm(&projection(axis));
        if len > best.1 + 1e-9 {
            best = (axis, len);
        }
    }
    let mut v = projection(best.0);
    let len = norm(&v);
    v.iter_mut().for_each(|x| *x /= len);
    if v[0] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    v
}

/// `AᵀA` for a row-major `rows×cols` matrix.
pub fn gram(a: &Tensor) -> Result<Tensor> {
    let (rows, cols) = match a.shape() {
        &[r, c] => (r, c),
        s => return Err(Error::Shape(format!("gram of {s:?}"))),
    };
    let mut out = vec![0.0; cols * cols];
    super::kernels::matmul_at_acc(a.data(), a.data(), &mut out, cols, rows, cols);
    Tensor::new(vec![cols, cols], out)
}
