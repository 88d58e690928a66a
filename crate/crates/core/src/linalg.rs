//! Compressed sparse rows and a Jacobi-preconditioned conjugate gradient.

use faer::sparse::{SparseColMat, Triplet};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub n: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl Csr {
    /// Builds from per-row `(col, value)` lists; duplicate columns are summed.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                if last == Some(c) {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            indptr.push(indices.len());
        }
        Csr {
            n,
            indptr,
            indices,
            values,
        }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.indptr[i]..self.indptr[i + 1];
        self.indices[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.indptr[i]..self.indptr[i + 1] {
                s += self.values[k] * x[self.indices[k]];
            }
            *yi = s;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).find(|e| e.0 == i).map_or(0.0, |e| e.1))
            .collect()
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] += v;
            }
        }
        m
    }

    /// Lower triangle as a faer column-major matrix, for sparse Cholesky.
    pub fn lower_faer(&self) -> Result<SparseColMat<usize, f64>> {
        let mut trip = Vec::with_capacity(self.values.len() / 2 + self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                if j <= i {
                    trip.push(Triplet::new(i, j, v));
                }
            }
        }
        SparseColMat::try_new_from_triplets(self.n, self.n, &trip)
            .map_err(|e| Error::Singular(format!("sparse assembly failed: {e:?}")))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Removes the mean of `x` over each group (labels in `0..groups`).
pub fn project_group_means(x: &mut [f64], labels: &[usize], groups: usize) {
    let mut sum = vec![0.0; groups];
    let mut cnt = vec![0usize; groups];
    for (v, &g) in x.iter().zip(labels) {
        sum[g] += v;
        cnt[g] += 1;
    }
    for (v, &g) in x.iter_mut().zip(labels) {
        *v -= sum[g] / cnt[g] as f64;
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CgStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned CG for an SPD (or SPD-on-a-subspace) operator.
///
/// When `null_labels` is given the operator is assumed singular with
/// piecewise-constant kernel on those groups; right-hand side and iterates are
/// kept in the orthogonal complement.
pub fn pcg(
    apply: impl Fn(&[f64], &mut [f64]),
    diag: &[f64],
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
    null_labels: Option<(&[usize], usize)>,
) -> Result<CgStats> {
    let n = b.len();
    let mut rhs = b.to_vec();
    if let Some((labels, g)) = null_labels {
        project_group_means(&mut rhs, labels, g);
        project_group_means(x, labels, g);
    }
    let bnorm = norm(&rhs);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgStats {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let precond = |r: &[f64], z: &mut Vec<f64>| {
        z.clear();
        z.extend(r.iter().zip(diag).map(|(r, d)| if *d > 0.0 { r / d } else { *r }));
        if let Some((labels, g)) = null_labels {
            project_group_means(z, labels, g);
        }
    };
    let mut z = Vec::with_capacity(n);
    precond(&r, &mut z);
    let mut d = z.clone();
    let mut rz = dot(&r, &z);
    let mut q = vec![0.0; n];
    for it in 0..max_iter {
        let res = norm(&r) / bnorm;
        if res <= tol {
            return Ok(CgStats {
                iterations: it,
                relative_residual: res,
            });
        }
        apply(&d, &mut q);
        let dq = dot(&d, &q);
        if dq <= 0.0 {
            return Err(Error::Singular(format!(
                "CG breakdown: non-positive curvature {dq:e} at iteration {it}"
            )));
        }
        let alpha = rz / dq;
        for i in 0..n {
            x[i] += alpha * d[i];
            r[i] -= alpha * q[i];
        }
        precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            d[i] = z[i] + beta * d[i];
        }
    }
    let res = norm(&r) / bnorm;
    if res <= tol {
        Ok(CgStats {
            iterations: max_iter,
            relative_residual: res,
        })
    } else {
        Err(Error::NonConvergence {
            iterations: max_iter,
            residual: res,
        })
    }
}
