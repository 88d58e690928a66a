//! Homogenized Darcy problem `div(K(f - ∇p₀)) = 0` in `Q_R` with flux data
//! `n·K(f - ∇p₀) = g` on `∂Q_R`, and the two-scale approximation
//! `μ⁻¹ W(x/ε)(f - ∇p₀)` built from it.
//!
//! The discretization is the conservative 5-point (7-point in 3D) finite
//! volume scheme on a box grid, with fluxes on faces. Only diagonal `K` is
//! supported, which covers every obstacle with the symmetries of the square.

use nalgebra::DMatrix;

use crate::cell::TiledCorrector;
use crate::error::{Error, Result};
use crate::geometry::PerforatedDomain;
use crate::grid::{FaceField, MacGrid, Point, Topology, MAX_DIM};
use crate::linalg::{pcg, Csr};

/// Off-diagonal entries of `K` above this fraction of its largest diagonal
/// entry are rejected.
pub const DIAGONAL_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct DarcySolution {
    pub grid: MacGrid,
    /// Zero-mean cell values.
    pub p0: Vec<f64>,
    /// `f - ∇p₀` on every face; boundary faces carry the flux condition.
    pub drive: FaceField,
    pub k: DMatrix<f64>,
    pub mu: f64,
    pub f: FaceField,
    pub iterations: usize,
}

fn diagonal_of(k: &DMatrix<f64>, dim: usize) -> Result<Vec<f64>> {
    if k.nrows() != dim || k.ncols() != dim {
        return Err(Error::Config(format!("K must be {dim}x{dim}")));
    }
    let scale = (0..dim).map(|i| k[(i, i)]).fold(0.0, f64::max);
    for i in 0..dim {
        if !(k[(i, i)] > 0.0) {
            return Err(Error::Precondition(format!("K[{i}][{i}] = {} is not positive", k[(i, i)])));
        }
        for j in 0..dim {
            if i != j && k[(i, j)].abs() > DIAGONAL_TOL * scale {
                return Err(Error::Precondition(format!(
                    "K[{i}][{j}] = {:e} is not negligible; only diagonal permeability is supported",
                    k[(i, j)]
                )));
            }
        }
    }
    Ok((0..dim).map(|i| k[(i, i)]).collect())
}

/// Outward flux `g` is sampled at boundary face centers.
fn flux_face_values(grid: &MacGrid, f: &FaceField, kd: &[f64], g: &impl Fn(Point) -> f64) -> FaceField {
    let mut flux = grid.zero_faces();
    let n = grid.cells_per_axis();
    for a in 0..grid.dim() {
        let fs = grid.face_shape(a);
        for (l, face) in fs.iter().enumerate() {
            flux.comps[a][l] = if face[a] == 0 {
                -g(grid.face_center(a, face))
            } else if face[a] == n {
                g(grid.face_center(a, face))
            } else {
                kd[a] * f.comps[a][l]
            };
        }
    }
    flux
}

fn assemble_operator(grid: &MacGrid, kd: &[f64]) -> Csr {
    let cs = grid.cell_shape();
    let h2 = grid.h() * grid.h();
    let rows = cs
        .iter()
        .map(|c| {
            let me = cs.linear(c);
            let mut row = Vec::with_capacity(2 * grid.dim() + 1);
            let mut diag = 0.0;
            for (a, k) in kd.iter().enumerate() {
                for step in [-1isize, 1] {
                    if let Some(nb) = grid.cell_neighbor(c, a, step) {
                        row.push((cs.linear(nb), -k / h2));
                        diag += k / h2;
                    }
                }
            }
            row.push((me, diag));
            row
        })
        .collect();
    Csr::from_rows(rows)
}

/// Solves the Neumann problem on a box grid. `f` is sampled on the faces of
/// `grid`; `g` is the outward normal flux.
pub fn solve_homogenized(
    k: &DMatrix<f64>,
    mu: f64,
    f: &FaceField,
    grid: &MacGrid,
    g: impl Fn(Point) -> f64,
    tol: f64,
) -> Result<DarcySolution> {
    if grid.topology() != Topology::Box {
        return Err(Error::Config("the Darcy problem is posed on a box grid".into()));
    }
    let kd = diagonal_of(k, grid.dim())?;
    let flux = flux_face_values(grid, f, &kd, &g);
    let div = grid.divergence(&flux);
    let rhs: Vec<f64> = div.iter().map(|v| -v).collect();
    let total: f64 = rhs.iter().sum();
    let scale: f64 = rhs.iter().map(|v| v.abs()).sum::<f64>().max(f64::MIN_POSITIVE);
    if total.abs() > 1e-10 * scale {
        return Err(Error::IncompatibleData(format!(
            "boundary flux does not integrate to zero (net {:e})",
            -total * grid.cell_volume()
        )));
    }
    let a = assemble_operator(grid, &kd);
    let n = rhs.len();
    let mut p = vec![0.0; n];
    let labels = vec![0usize; n];
    let stats = pcg(
        |x, y| a.matvec_into(x, y),
        &a.diagonal(),
        &rhs,
        &mut p,
        tol,
        10 * n,
        Some((&labels, 1)),
    )?;
    let mean = p.iter().sum::<f64>() / n as f64;
    p.iter_mut().for_each(|v| *v -= mean);
    let drive = drive_field(grid, f, &kd, &flux, &p);
    Ok(DarcySolution {
        grid: grid.clone(),
        p0: p,
        drive,
        k: k.clone(),
        mu,
        f: f.clone(),
        iterations: stats.iterations,
    })
}

fn drive_field(grid: &MacGrid, f: &FaceField, kd: &[f64], flux: &FaceField, p: &[f64]) -> FaceField {
    let grad = grid.pressure_gradient(p);
    let n = grid.cells_per_axis();
    let mut out = grid.zero_faces();
    for a in 0..grid.dim() {
        let fs = grid.face_shape(a);
        for (l, face) in fs.iter().enumerate() {
            out.comps[a][l] = if face[a] == 0 || face[a] == n {
                flux.comps[a][l] / kd[a]
            } else {
                f.comps[a][l] - grad.comps[a][l]
            };
        }
    }
    out
}

/// Direct solve with a mean-zero Lagrange row, for verification.
pub fn solve_homogenized_dense(
    k: &DMatrix<f64>,
    f: &FaceField,
    grid: &MacGrid,
    g: impl Fn(Point) -> f64,
) -> Result<Vec<f64>> {
    let kd = diagonal_of(k, grid.dim())?;
    let flux = flux_face_values(grid, f, &kd, &g);
    let div = grid.divergence(&flux);
    let a = assemble_operator(grid, &kd);
    let n = a.n;
    let mut m = DMatrix::zeros(n + 1, n + 1);
    m.view_mut((0, 0), (n, n)).copy_from(&a.to_dense());
    let mut b = nalgebra::DVector::zeros(n + 1);
    for i in 0..n {
        m[(i, n)] = 1.0;
        m[(n, i)] = 1.0;
        b[i] = -div[i];
    }
    let x = m
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Singular("Darcy system is singular".into()))?;
    Ok(x.rows(0, n).iter().copied().collect())
}

impl DarcySolution {
    /// Max over cells of `h |div(K(f - ∇p₀))|`, relative to the largest
    /// forcing flux `|K f|`.
    pub fn residual(&self) -> f64 {
        let kd: Vec<f64> = (0..self.grid.dim()).map(|i| self.k[(i, i)]).collect();
        let mut flux = self.drive.clone();
        let mut scale = 0.0f64;
        for (a, comp) in flux.comps.iter_mut().enumerate() {
            for (v, fv) in comp.iter_mut().zip(&self.f.comps[a]) {
                *v *= kd[a];
                scale = scale.max(v.abs()).max((kd[a] * fv).abs());
            }
        }
        let div = self.grid.divergence(&flux);
        let worst = div.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if worst == 0.0 {
            0.0
        } else {
            worst * self.grid.h() / scale
        }
    }

    /// Multilinear interpolation of one face component of `drive` at `x`.
    pub fn drive_at(&self, axis: usize, x: Point) -> f64 {
        interpolate(&self.grid, &self.drive.comps[axis], x, Some(axis))
    }

    /// Multilinear interpolation of `p₀` at `x`.
    pub fn pressure_at(&self, x: Point) -> f64 {
        interpolate(&self.grid, &self.p0, x, None)
    }
}

/// Interpolates a cell field (`axis = None`) or a face component of a box
/// grid at `x`, clamping to the outermost sample positions.
fn interpolate(grid: &MacGrid, values: &[f64], x: Point, axis: Option<usize>) -> f64 {
    let dim = grid.dim();
    let shape = match axis {
        Some(a) => grid.face_shape(a),
        None => grid.cell_shape(),
    };
    let h = grid.h();
    let mut base = [0usize; MAX_DIM];
    let mut t = [0.0; MAX_DIM];
    for b in 0..dim {
        let offset = if axis == Some(b) { 0.0 } else { 0.5 };
        let s = (x[b] + grid.extent()) / h - offset;
        let top = (shape.dims[b] - 1) as f64;
        let s = s.clamp(0.0, top);
        let i = (s.floor() as usize).min(shape.dims[b].saturating_sub(2));
        base[b] = i;
        t[b] = if shape.dims[b] > 1 { s - i as f64 } else { 0.0 };
    }
    let mut sum = 0.0;
    for corner in 0..(1usize << dim) {
        let mut idx = base;
        let mut w = 1.0;
        for b in 0..dim {
            if corner >> b & 1 == 1 {
                idx[b] += 1;
                w *= t[b];
            } else {
                w *= 1.0 - t[b];
            }
        }
        if w != 0.0 {
            sum += w * values[shape.linear(idx)];
        }
    }
    sum
}

/// `ū = μ⁻¹ K (f - ∇p₀)` at cell centers, indexed `[component][cell]`.
pub fn darcy_velocity(sol: &DarcySolution) -> Vec<Vec<f64>> {
    let avg = sol.grid.cell_average(&sol.drive);
    (0..sol.grid.dim())
        .map(|i| {
            (0..sol.grid.num_cells())
                .map(|c| (0..sol.grid.dim()).map(|j| sol.k[(i, j)] * avg[j][c]).sum::<f64>() / sol.mu)
                .collect()
        })
        .collect()
}

/// `μ⁻¹ Σ_j W_j(x/ε) (f - ∇p₀)_j(x)` on the faces of the fine grid.
pub fn first_order_approx(tiled: &TiledCorrector, darcy: &DarcySolution, domain: &PerforatedDomain, mu: f64) -> Result<FaceField> {
    let grid = &domain.grid;
    if grid.dim() != darcy.grid.dim() || (grid.extent() - darcy.grid.extent()).abs() > 1e-12 {
        return Err(Error::Config("Darcy grid does not cover the same cube as the fine grid".into()));
    }
    if (tiled.epsilon - domain.epsilon).abs() > 1e-15 || tiled.w[0].comps[0].len() != grid.face_shape(0).len() {
        return Err(Error::Config("tiled corrector does not belong to this domain".into()));
    }
    let dim = grid.dim();
    let mut out = grid.zero_faces();
    for a in 0..dim {
        let fs = grid.face_shape(a);
        for (l, face) in fs.iter().enumerate() {
            if tiled.w.iter().all(|w| w.comps[a][l] == 0.0) {
                continue;
            }
            let x = grid.face_center(a, face);
            let mut s = 0.0;
            for j in 0..dim {
                s += tiled.w[j].comps[a][l] * darcy.drive_at(j, x);
            }
            out.comps[a][l] = s / mu;
        }
    }
    Ok(out)
}
