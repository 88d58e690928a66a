//! Discrete `ε`-scaled Stokes system `-ε²μΔu + ∇p = f`, `div u = 0` on a
//! perforated domain with no-slip on the obstacles.
//!
//! Unknowns are the fluid faces (velocity) and fluid cells (pressure). The
//! momentum operator is `ε²μ` times a 5-point (7-point in 3D) vector Laplacian
//! per component. A stencil leg that leaves the fluid ends either on a face
//! lying in a wall (one solid neighbor cell: the value there is exactly 0) or
//! crosses a wall half-way (both neighbor cells solid: ghost value `-u`,
//! which doubles the leg). Cells outside a box grid count as solid, so the
//! outer boundary carries homogeneous Dirichlet data.
//!
//! The saddle-point system is solved by conjugate gradients on the pressure
//! Schur complement `S = B A⁻¹ Bᵀ`, with inner solves of `A` either by a
//! sparse Cholesky factorization or by Jacobi-preconditioned CG.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Llt;
use faer::{ColMut, Side};
use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PerforatedDomain;
use crate::grid::{FaceField, MacGrid, Topology};
use crate::linalg::{self, pcg, project_group_means, Csr};

const NONE: usize = usize::MAX;

/// Default relative tolerance of [`solve`].
pub const DEFAULT_TOL: f64 = 1e-8;

/// Velocity/pressure pair with the forcing that produced it.
#[derive(Debug, Clone)]
pub struct FlowState {
    pub grid: MacGrid,
    /// Zero on every non-fluid face.
    pub u: FaceField,
    /// Zero-mean over each fluid component; zero on solid cells.
    pub p: Vec<f64>,
    pub f: FaceField,
    pub epsilon: f64,
    pub mu: f64,
    pub stats: SolveStats,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SolveStats {
    pub outer_iterations: usize,
    pub momentum_residual: f64,
    pub divergence_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InnerSolver {
    /// Sparse Cholesky of each velocity block, factored once per solver.
    #[default]
    Cholesky,
    /// Jacobi-preconditioned CG to `0.01 * tol`.
    Cg,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    /// Defaults to `10 * (pressure unknowns)`.
    pub max_iter: Option<usize>,
    pub inner: InnerSolver,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: DEFAULT_TOL,
            max_iter: None,
            inner: InnerSolver::Cholesky,
        }
    }
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        SolverOptions {
            tol,
            ..Default::default()
        }
    }
}

/// Assembled saddle-point operators for one perforated domain.
#[derive(Debug, Clone)]
pub struct SaddleSystem {
    pub domain: PerforatedDomain,
    pub mu: f64,
    pub epsilon: f64,
    face_dof: Vec<Vec<usize>>,
    dof_face: Vec<Vec<usize>>,
    offsets: Vec<usize>,
    /// `A` restricted to each velocity component.
    blocks: Vec<Csr>,
    cell_dof: Vec<usize>,
    dof_cell: Vec<usize>,
    component: Vec<usize>,
    n_components: usize,
    /// No wall anywhere: `A` annihilates constants.
    singular: bool,
}

/// Assembles `A` (momentum) and `B` (divergence) on the fluid unknowns.
///
/// `outer_bc` must match the grid topology; it is taken from the grid.
pub fn assemble(domain: &PerforatedDomain, mu: f64, epsilon: f64) -> Result<SaddleSystem> {
    if !(mu > 0.0) || !(epsilon > 0.0) {
        return Err(Error::Config(format!("mu = {mu} and epsilon = {epsilon} must be positive")));
    }
    let grid = &domain.grid;
    let dim = grid.dim();
    let cs = grid.cell_shape();
    let scale = epsilon * epsilon * mu / (grid.h() * grid.h());

    let mut face_dof = Vec::with_capacity(dim);
    let mut dof_face = Vec::with_capacity(dim);
    let mut offsets = vec![0];
    for a in 0..dim {
        let mut map = vec![NONE; grid.face_shape(a).len()];
        let mut inv = Vec::new();
        for (l, &fl) in domain.fluid_faces[a].iter().enumerate() {
            if fl {
                map[l] = inv.len();
                inv.push(l);
            }
        }
        offsets.push(offsets[a] + inv.len());
        face_dof.push(map);
        dof_face.push(inv);
    }

    let mut blocks = Vec::with_capacity(dim);
    for a in 0..dim {
        let fs = grid.face_shape(a);
        let mut rows = Vec::with_capacity(dof_face[a].len());
        for &fl in &dof_face[a] {
            let f = fs.unravel(fl);
            let me = face_dof[a][fl];
            let mut diag = 0.0;
            let mut row = Vec::with_capacity(2 * dim + 1);
            for b in 0..dim {
                for step in [-1isize, 1] {
                    match grid.face_neighbor(a, f, b, step) {
                        Some(g) if domain.fluid_faces[a][fs.linear(g)] => {
                            diag += 1.0;
                            row.push((face_dof[a][fs.linear(g)], -scale));
                        }
                        Some(g) => {
                            let solid = grid
                                .face_cells(a, g)
                                .iter()
                                .filter(|c| c.is_none_or(|c| !domain.fluid_cells[cs.linear(c)]))
                                .count();
                            diag += if solid >= 2 { 2.0 } else { 1.0 };
                        }
                        None => diag += 2.0,
                    }
                }
            }
            row.push((me, diag * scale));
            rows.push(row);
        }
        blocks.push(Csr::from_rows(rows));
    }

    let mut cell_dof = vec![NONE; cs.len()];
    let mut dof_cell = Vec::new();
    for (l, &fl) in domain.fluid_cells.iter().enumerate() {
        if fl {
            cell_dof[l] = dof_cell.len();
            dof_cell.push(l);
        }
    }
    let (component, n_components) = label_components(domain, &cell_dof, &dof_cell);
    let singular = grid.topology() == Topology::Periodic && domain.solid_count() == 0;

    Ok(SaddleSystem {
        domain: domain.clone(),
        mu,
        epsilon,
        face_dof,
        dof_face,
        offsets,
        blocks,
        cell_dof,
        dof_cell,
        component,
        n_components,
        singular,
    })
}

/// Components of fluid cells linked through fluid faces.
fn label_components(domain: &PerforatedDomain, cell_dof: &[usize], dof_cell: &[usize]) -> (Vec<usize>, usize) {
    let grid = &domain.grid;
    let n = dof_cell.len();
    let cs = grid.cell_shape();
    let mut label = vec![NONE; n];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..n {
        if label[start] != NONE {
            continue;
        }
        label[start] = count;
        stack.push(start);
        while let Some(d) = stack.pop() {
            let c = cs.unravel(dof_cell[d]);
            for a in 0..grid.dim() {
                let fs = grid.face_shape(a);
                for (face, other) in [
                    (c, grid.cell_neighbor(c, a, -1)),
                    (grid.hi_face(c, a), grid.cell_neighbor(c, a, 1)),
                ] {
                    let (Some(o), true) = (other, domain.fluid_faces[a][fs.linear(face)]) else {
                        continue;
                    };
                    let od = cell_dof[cs.linear(o)];
                    if od != NONE && label[od] == NONE {
                        label[od] = count;
                        stack.push(od);
                    }
                }
            }
        }
        count += 1;
    }
    (label, count)
}

impl SaddleSystem {
    pub fn grid(&self) -> &MacGrid {
        &self.domain.grid
    }

    pub fn velocity_dofs(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn pressure_dofs(&self) -> usize {
        self.dof_cell.len()
    }

    pub fn fluid_components(&self) -> usize {
        self.n_components
    }

    pub fn is_singular(&self) -> bool {
        self.singular
    }

    pub fn block(&self, axis: usize) -> &Csr {
        &self.blocks[axis]
    }

    /// Velocity unknowns (fluid faces) from a face field.
    pub fn restrict(&self, u: &FaceField) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.velocity_dofs());
        for (a, faces) in self.dof_face.iter().enumerate() {
            out.extend(faces.iter().map(|&l| u.comps[a][l]));
        }
        out
    }

    /// Face field with zeros on every non-fluid face.
    pub fn prolong(&self, x: &[f64]) -> FaceField {
        let mut u = self.grid().zero_faces();
        for (a, faces) in self.dof_face.iter().enumerate() {
            for (k, &l) in faces.iter().enumerate() {
                u.comps[a][l] = x[self.offsets[a] + k];
            }
        }
        u
    }

    pub fn restrict_pressure(&self, p: &[f64]) -> Vec<f64> {
        self.dof_cell.iter().map(|&l| p[l]).collect()
    }

    pub fn prolong_pressure(&self, x: &[f64]) -> Vec<f64> {
        let mut p = self.grid().zero_cells();
        for (&l, v) in self.dof_cell.iter().zip(x) {
            p[l] = *v;
        }
        p
    }

    pub fn apply_a(&self, x: &[f64], y: &mut [f64]) {
        for (a, blk) in self.blocks.iter().enumerate() {
            let r = self.offsets[a]..self.offsets[a + 1];
            blk.matvec_into(&x[r.clone()], &mut y[r]);
        }
    }

    /// Discrete divergence on fluid cells.
    pub fn apply_b(&self, x: &[f64], y: &mut [f64]) {
        let grid = self.grid();
        let cs = grid.cell_shape();
        let inv_h = 1.0 / grid.h();
        for (d, &cl) in self.dof_cell.iter().enumerate() {
            let c = cs.unravel(cl);
            let mut s = 0.0;
            for a in 0..grid.dim() {
                let fs = grid.face_shape(a);
                let hi = self.face_dof[a][fs.linear(grid.hi_face(c, a))];
                let lo = self.face_dof[a][fs.linear(c)];
                if hi != NONE {
                    s += x[self.offsets[a] + hi];
                }
                if lo != NONE {
                    s -= x[self.offsets[a] + lo];
                }
            }
            y[d] = s * inv_h;
        }
    }

    /// `Bᵀ p`, i.e. minus the discrete pressure gradient on fluid faces.
    pub fn apply_bt(&self, p: &[f64], y: &mut [f64]) {
        let grid = self.grid();
        let cs = grid.cell_shape();
        let inv_h = 1.0 / grid.h();
        for (a, faces) in self.dof_face.iter().enumerate() {
            let fs = grid.face_shape(a);
            for (k, &fl) in faces.iter().enumerate() {
                let [lo, hi] = grid.face_cells(a, fs.unravel(fl));
                let plo = self.cell_dof[cs.linear(lo.unwrap())];
                let phi = self.cell_dof[cs.linear(hi.unwrap())];
                y[self.offsets[a] + k] = (p[plo] - p[phi]) * inv_h;
            }
        }
    }

    /// `<Au, u> h^d`: the discrete `ε²μ ∫|∇u|²` including wall legs.
    pub fn energy(&self, u: &FaceField) -> f64 {
        let x = self.restrict(u);
        let mut y = vec![0.0; x.len()];
        self.apply_a(&x, &mut y);
        linalg::dot(&x, &y) * self.grid().cell_volume()
    }

    fn pressure_project(&self, p: &mut [f64]) {
        project_group_means(p, &self.component, self.n_components);
    }
}

/// Factored (or CG-backed) inverse of the momentum blocks.
struct MomentumInverse<'a> {
    system: &'a SaddleSystem,
    factors: Vec<Option<Llt<usize, f64>>>,
    diags: Vec<Vec<f64>>,
    inner_tol: f64,
}

impl<'a> MomentumInverse<'a> {
    fn new(system: &'a SaddleSystem, opts: &SolverOptions) -> Result<Self> {
        let use_chol = opts.inner == InnerSolver::Cholesky && !system.singular;
        let mut factors = Vec::new();
        for blk in &system.blocks {
            if use_chol && blk.n > 0 {
                let llt = blk
                    .lower_faer()?
                    .sp_cholesky(Side::Lower)
                    .map_err(|e| Error::Singular(format!("momentum block not positive definite: {e:?}")))?;
                factors.push(Some(llt));
            } else {
                factors.push(None);
            }
        }
        Ok(MomentumInverse {
            system,
            factors,
            diags: system.blocks.iter().map(Csr::diagonal).collect(),
            inner_tol: 0.01 * opts.tol,
        })
    }

    fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let s = self.system;
        let mut out = rhs.to_vec();
        for (a, blk) in s.blocks.iter().enumerate() {
            let r = s.offsets[a]..s.offsets[a + 1];
            if r.is_empty() {
                continue;
            }
            match &self.factors[a] {
                Some(llt) => llt.solve_in_place(ColMut::from_slice_mut(&mut out[r])),
                None => {
                    let labels;
                    let null = if s.singular {
                        labels = vec![0usize; r.len()];
                        Some((&labels[..], 1))
                    } else {
                        None
                    };
                    let mut x = vec![0.0; r.len()];
                    pcg(
                        |v, o| blk.matvec_into(v, o),
                        &self.diags[a],
                        &rhs[r.clone()],
                        &mut x,
                        self.inner_tol,
                        20 * r.len().max(100),
                        null,
                    )?;
                    out[r].copy_from_slice(&x);
                }
            }
        }
        Ok(out)
    }
}

/// Reusable solver: factors the momentum blocks once.
pub struct StokesSolver<'a> {
    system: &'a SaddleSystem,
    inverse: MomentumInverse<'a>,
    opts: SolverOptions,
}

impl<'a> StokesSolver<'a> {
    pub fn new(system: &'a SaddleSystem, opts: SolverOptions) -> Result<Self> {
        if !(opts.tol > 0.0) {
            return Err(Error::Config(format!("tolerance {} must be positive", opts.tol)));
        }
        Ok(StokesSolver {
            system,
            inverse: MomentumInverse::new(system, &opts)?,
            opts,
        })
    }

    pub fn solve(&self, f: &FaceField) -> Result<FlowState> {
        let s = self.system;
        let grid = s.grid();
        let h = grid.h();
        let fx = s.restrict(f);
        if fx.iter().any(|v| !v.is_finite()) {
            return Err(Error::IncompatibleData("forcing is not finite".into()));
        }
        let np = s.pressure_dofs();
        let nu = s.velocity_dofs();
        let fnorm = linalg::norm(&fx);
        if fnorm == 0.0 {
            return Ok(self.finish(vec![0.0; nu], vec![0.0; np], f, 0));
        }
        if s.singular {
            for a in 0..grid.dim() {
                let r = s.offsets[a]..s.offsets[a + 1];
                let mean = fx[r.clone()].iter().sum::<f64>() / r.len() as f64;
                if mean.abs() > 1e-12 * fnorm {
                    return Err(Error::IncompatibleData(format!(
                        "periodic domain without obstacles: component {a} of the forcing has mean {mean:e}; constant fields are divergence-free and make the system unsolvable"
                    )));
                }
            }
        }

        let mut u = self.inverse.solve(&fx)?;
        let unorm0 = linalg::norm(&u);
        let mut bu = vec![0.0; np];
        s.apply_b(&u, &mut bu);
        let mut r: Vec<f64> = bu.iter().map(|v| -v).collect();
        s.pressure_project(&mut r);
        let mut p = vec![0.0; np];
        let mut d = r.clone();
        let mut rr = linalg::dot(&r, &r);
        let max_iter = self.opts.max_iter.unwrap_or(10 * np.max(1));
        let mut btd = vec![0.0; nu];
        let mut sd = vec![0.0; np];
        let mut it = 0;
        loop {
            let div = h * rr.sqrt();
            let unorm = linalg::norm(&u);
            if div <= self.opts.tol * unorm || div <= 1e-15 * unorm0 {
                break;
            }
            if it >= max_iter {
                return Err(Error::NonConvergence {
                    iterations: it,
                    residual: div / unorm.max(f64::MIN_POSITIVE),
                });
            }
            s.apply_bt(&d, &mut btd);
            let w = self.inverse.solve(&btd)?;
            s.apply_b(&w, &mut sd);
            let dsd = linalg::dot(&d, &sd);
            if !(dsd > 0.0) {
                break;
            }
            let alpha = rr / dsd;
            for i in 0..np {
                p[i] += alpha * d[i];
                r[i] -= alpha * sd[i];
            }
            for i in 0..nu {
                u[i] += alpha * w[i];
            }
            s.pressure_project(&mut r);
            let rr_new = linalg::dot(&r, &r);
            let beta = rr_new / rr;
            rr = rr_new;
            for i in 0..np {
                d[i] = r[i] + beta * d[i];
            }
            it += 1;
        }
        debug!("uzawa-cg converged in {it} outer iterations");
        s.pressure_project(&mut p);
        if self.opts.inner == InnerSolver::Cg || s.singular {
            // re-derive u from p so the momentum residual reflects one inner solve
            let mut rhs = vec![0.0; nu];
            s.apply_bt(&p, &mut rhs);
            for (r, f) in rhs.iter_mut().zip(&fx) {
                *r += f;
            }
            u = self.inverse.solve(&rhs)?;
        }
        if s.singular {
            for a in 0..grid.dim() {
                let r = s.offsets[a]..s.offsets[a + 1];
                let mean = u[r.clone()].iter().sum::<f64>() / r.len() as f64;
                u[r].iter_mut().for_each(|v| *v -= mean);
            }
        }
        let state = self.finish(u, p, f, it);
        let tol = self.opts.tol;
        if state.stats.momentum_residual > tol || state.stats.divergence_residual > tol {
            return Err(Error::NonConvergence {
                iterations: it,
                residual: state.stats.momentum_residual.max(state.stats.divergence_residual),
            });
        }
        Ok(state)
    }

    fn finish(&self, u: Vec<f64>, p: Vec<f64>, f: &FaceField, it: usize) -> FlowState {
        let s = self.system;
        let mut state = FlowState {
            grid: s.grid().clone(),
            u: s.prolong(&u),
            p: s.prolong_pressure(&p),
            f: f.clone(),
            epsilon: s.epsilon,
            mu: s.mu,
            stats: SolveStats::default(),
        };
        let (m, d) = residual(s, &state, f);
        state.stats = SolveStats {
            outer_iterations: it,
            momentum_residual: m,
            divergence_residual: d,
        };
        state
    }
}

/// Solves the Stokes system for one forcing.
pub fn solve(system: &SaddleSystem, f: &FaceField, opts: SolverOptions) -> Result<FlowState> {
    StokesSolver::new(system, opts)?.solve(f)
}

/// Relative residuals `(‖Au + ∇p - f‖/‖f‖, h‖div u‖/‖u‖)` on the fluid
/// unknowns; `0/0` is reported as 0.
pub fn residual(system: &SaddleSystem, state: &FlowState, f: &FaceField) -> (f64, f64) {
    let x = system.restrict(&state.u);
    let fx = system.restrict(f);
    let p = system.restrict_pressure(&state.p);
    let mut ax = vec![0.0; x.len()];
    system.apply_a(&x, &mut ax);
    let mut btp = vec![0.0; x.len()];
    system.apply_bt(&p, &mut btp);
    let mom: Vec<f64> = (0..x.len()).map(|i| ax[i] - btp[i] - fx[i]).collect();
    let mut div = vec![0.0; p.len()];
    system.apply_b(&x, &mut div);
    let ratio = |num: f64, den: f64| if num == 0.0 { 0.0 } else { num / den };
    (
        ratio(linalg::norm(&mom), linalg::norm(&fx)),
        ratio(system.grid().h() * linalg::norm(&div), linalg::norm(&x)),
    )
}

/// Largest system accepted by [`solve_dense_oracle`].
pub const DENSE_ORACLE_MAX_DOFS: usize = 20_000;

/// Direct LU solve of the full KKT matrix with one global zero-mean pressure
/// row appended as a Lagrange constraint.
pub fn solve_dense_oracle(system: &SaddleSystem, f: &FaceField) -> Result<FlowState> {
    use nalgebra::{DMatrix, DVector};

    let nu = system.velocity_dofs();
    let np = system.pressure_dofs();
    let n = nu + np + 1;
    if n > DENSE_ORACLE_MAX_DOFS {
        return Err(Error::Precondition(format!(
            "dense oracle limited to {DENSE_ORACLE_MAX_DOFS} unknowns, got {n}"
        )));
    }
    let mut k = DMatrix::<f64>::zeros(n, n);
    for (a, blk) in system.blocks.iter().enumerate() {
        let o = system.offsets[a];
        for i in 0..blk.n {
            for (j, v) in blk.row(i) {
                k[(o + i, o + j)] = v;
            }
        }
    }
    // B as dense columns via unit vectors of Bᵀ
    let mut e = vec![0.0; np];
    let mut col = vec![0.0; nu];
    for j in 0..np {
        e[j] = 1.0;
        system.apply_bt(&e, &mut col);
        for (i, v) in col.iter().enumerate() {
            if *v != 0.0 {
                k[(i, nu + j)] = -v;
                k[(nu + j, i)] = -v;
            }
        }
        e[j] = 0.0;
        k[(nu + j, n - 1)] = 1.0;
        k[(n - 1, nu + j)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(n);
    for (i, v) in system.restrict(f).into_iter().enumerate() {
        rhs[i] = v;
    }
    let lu = k.lu();
    let udiag = lu.u().diagonal();
    let (lo, hi) = udiag
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v.abs()), hi.max(v.abs())));
    if !(lo > 1e-13 * hi) {
        return Err(Error::Singular(format!(
            "KKT matrix is singular (pivot ratio {:e}); a fluid region lacks a pressure constraint",
            lo / hi
        )));
    }
    let sol = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("KKT LU solve failed".into()))?;
    let x: Vec<f64> = sol.rows(0, nu).iter().copied().collect();
    let p: Vec<f64> = sol.rows(nu, np).iter().copied().collect();
    let mut state = FlowState {
        grid: system.grid().clone(),
        u: system.prolong(&x),
        p: system.prolong_pressure(&p),
        f: f.clone(),
        epsilon: system.epsilon,
        mu: system.mu,
        stats: SolveStats::default(),
    };
    let (m, d) = residual(system, &state, f);
    state.stats = SolveStats {
        outer_iterations: 0,
        momentum_residual: m,
        divergence_residual: d,
    };
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_obstacle, perforate, voxelize, ObstacleSpec};
    use crate::grid::Topology;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square_domain(n_cell: usize, eps: f64, extent: f64, topo: Topology) -> PerforatedDomain {
        let mask = make_obstacle(&ObstacleSpec::CenteredSquare { side: 0.5 }, 2, n_cell).unwrap();
        let m = (1.0 / eps).round() as usize;
        let grid = MacGrid::new(2, n_cell * m, extent, topo).unwrap();
        perforate(&mask, eps, &grid).unwrap()
    }

    fn random_forcing(grid: &MacGrid, seed: u64) -> FaceField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        grid.sample_faces(|_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn momentum_blocks_are_symmetric() {
        let dom = square_domain(8, 0.5, 1.0, Topology::Box);
        let sys = assemble(&dom, 1.3, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let x: Vec<f64> = (0..sys.velocity_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..sys.velocity_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut ax = vec![0.0; x.len()];
            let mut ay = vec![0.0; x.len()];
            sys.apply_a(&x, &mut ax);
            sys.apply_a(&y, &mut ay);
            let lhs = linalg::dot(&ax, &y);
            let rhs = linalg::dot(&x, &ay);
            assert!((lhs - rhs).abs() <= 1e-12 * linalg::norm(&ax) * linalg::norm(&y));
        }
    }

    #[test]
    fn b_is_minus_gradient_transpose() {
        let dom = square_domain(8, 0.5, 1.0, Topology::Box);
        let sys = assemble(&dom, 1.0, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..sys.velocity_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p: Vec<f64> = (0..sys.pressure_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut bx = vec![0.0; p.len()];
        sys.apply_b(&x, &mut bx);
        let mut btp = vec![0.0; x.len()];
        sys.apply_bt(&p, &mut btp);
        assert!((linalg::dot(&bx, &p) - linalg::dot(&x, &btp)).abs() < 1e-10);
        // against the grid operators on the zero-extended fields
        let grid = sys.grid();
        let g = grid.pressure_gradient(&sys.prolong_pressure(&p));
        let gx = sys.restrict(&g);
        for (a, b) in gx.iter().zip(&btp) {
            assert!((a + b).abs() < 1e-10);
        }
    }

    #[test]
    fn single_channel_is_tridiagonal() {
        // fluid only in voxel row 0 of each cell: a periodic channel
        let mut cells = Vec::new();
        for i in 0..8 {
            for j in 1..8 {
                cells.push([i, j, 0]);
            }
        }
        let mask = voxelize(&ObstacleSpec::VoxelList { resolution: 8, cells }, 2, 8).unwrap();
        let grid = MacGrid::new(2, 8, 0.5, Topology::Periodic).unwrap();
        let dom = perforate(&mask, 1.0, &grid).unwrap();
        let sys = assemble(&dom, 1.0, 1.0).unwrap();
        assert_eq!(sys.block(1).n, 0);
        let a = sys.block(0);
        assert_eq!(a.n, 8);
        for i in 0..a.n {
            let cols: Vec<usize> = a.row(i).map(|e| e.0).collect();
            assert_eq!(cols.len(), 3);
            for c in cols {
                let d = (c as isize - i as isize).rem_euclid(8);
                assert!(d == 0 || d == 1 || d == 7);
            }
            // both tangential legs cross a wall: 2 + 2 + two unit legs
            assert_eq!(a.row(i).find(|e| e.0 == i).unwrap().1, 6.0 * 64.0);
        }
    }

    #[test]
    fn zero_forcing_gives_zero_state() {
        let dom = square_domain(8, 0.5, 1.0, Topology::Box);
        let sys = assemble(&dom, 1.0, 0.5).unwrap();
        let st = solve(&sys, &sys.grid().zero_faces(), SolverOptions::default()).unwrap();
        assert_eq!(st.u.max_abs(), 0.0);
        assert!(st.p.iter().all(|v| *v == 0.0));
        assert_eq!(residual(&sys, &st, &st.f), (0.0, 0.0));
    }

    #[test]
    fn iterative_matches_dense_oracle() {
        let dom = square_domain(4, 0.25, 1.0, Topology::Box);
        let sys = assemble(&dom, 1.0, 0.25).unwrap();
        for seed in 0..3 {
            let f = random_forcing(sys.grid(), seed);
            let it = solve(&sys, &f, SolverOptions::with_tol(1e-12)).unwrap();
            let de = solve_dense_oracle(&sys, &f).unwrap();
            assert!(de.stats.momentum_residual < 1e-12);
            let mut diff = it.u.clone();
            diff.axpy(-1.0, &de.u);
            assert!(diff.norm() <= 1e-10 * de.u.norm(), "{}", diff.norm() / de.u.norm());
            let dp: f64 = it.p.iter().zip(&de.p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let np: f64 = de.p.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(dp <= 1e-9 * np);
        }
    }

    #[test]
    fn cg_inner_solver_agrees_with_cholesky() {
        let dom = square_domain(8, 0.5, 1.0, Topology::Box);
        let sys = assemble(&dom, 1.0, 0.5).unwrap();
        let f = random_forcing(sys.grid(), 11);
        let a = solve(&sys, &f, SolverOptions::with_tol(1e-10)).unwrap();
        let b = solve(
            &sys,
            &f,
            SolverOptions {
                tol: 1e-10,
                inner: InnerSolver::Cg,
                max_iter: None,
            },
        )
        .unwrap();
        let mut diff = a.u.clone();
        diff.axpy(-1.0, &b.u);
        assert!(diff.norm() <= 1e-7 * a.u.norm());
    }

    #[test]
    fn energy_identity() {
        let dom = square_domain(8, 0.5, 1.0, Topology::Box);
        let sys = assemble(&dom, 2.0, 0.5).unwrap();
        let f = random_forcing(sys.grid(), 5);
        let st = solve(&sys, &f, SolverOptions::with_tol(1e-11)).unwrap();
        let work = sys.restrict(&f).iter().zip(sys.restrict(&st.u)).map(|(a, b)| a * b).sum::<f64>()
            * sys.grid().cell_volume();
        let e = sys.energy(&st.u);
        assert!((e - work).abs() <= 1e-9 * work.abs());
    }

    #[test]
    fn periodic_without_obstacle() {
        let mask = voxelize(&ObstacleSpec::VoxelList { resolution: 4, cells: vec![] }, 2, 4).unwrap();
        let grid = MacGrid::new(2, 8, 0.5, Topology::Periodic).unwrap();
        let dom = perforate(&mask, 0.5, &grid).unwrap();
        let sys = assemble(&dom, 1.0, 0.5).unwrap();
        assert!(sys.is_singular());
        let f = grid.sample_faces(|a, _| if a == 0 { 1.0 } else { 0.0 });
        assert!(matches!(solve(&sys, &f, SolverOptions::default()), Err(Error::IncompatibleData(_))));
        let pi = std::f64::consts::PI;
        let g = grid.sample_faces(|a, x| if a == 0 { (2.0 * pi * x[1]).sin() } else { 0.0 });
        let st = solve(&sys, &g, SolverOptions::with_tol(1e-9)).unwrap();
        assert!(st.stats.divergence_residual <= 1e-9);
        assert!(st.u.max_abs() > 0.0);
    }

    #[test]
    fn disconnected_pocket_breaks_dense_oracle() {
        // an enclosed pocket of fluid inside a hollow obstacle
        let mut cells = Vec::new();
        for i in 1..7 {
            for j in 1..7 {
                if i == 1 || i == 6 || j == 1 || j == 6 {
                    cells.push([i, j, 0]);
                }
            }
        }
        let mask = voxelize(&ObstacleSpec::VoxelList { resolution: 8, cells }, 2, 8).unwrap();
        let grid = MacGrid::new(2, 8, 0.5, Topology::Periodic).unwrap();
        let dom = perforate(&mask, 1.0, &grid).unwrap();
        let sys = assemble(&dom, 1.0, 1.0).unwrap();
        assert_eq!(sys.fluid_components(), 2);
        let f = random_forcing(&grid, 1);
        assert!(matches!(solve_dense_oracle(&sys, &f), Err(Error::Singular(_))));
        // the iterative solver constrains each component separately
        let st = solve(&sys, &f, SolverOptions::with_tol(1e-10)).unwrap();
        assert!(st.stats.divergence_residual <= 1e-10);
    }

    #[test]
    fn perturbed_velocity_has_divergence() {
        let dom = square_domain(8, 0.5, 1.0, Topology::Box);
        let sys = assemble(&dom, 1.0, 0.5).unwrap();
        let f = random_forcing(sys.grid(), 2);
        let mut st = solve(&sys, &f, SolverOptions::default()).unwrap();
        let (m, d) = residual(&sys, &st, &f);
        assert!(m <= DEFAULT_TOL && d <= DEFAULT_TOL);
        let l = sys.dof_face[0][7];
        st.u.comps[0][l] += 0.1;
        assert!(residual(&sys, &st, &f).1 > 1e-4);
    }

    #[test]
    fn linearity() {
        let dom = square_domain(8, 0.5, 1.0, Topology::Box);
        let sys = assemble(&dom, 1.0, 0.5).unwrap();
        let f1 = random_forcing(sys.grid(), 21);
        let f2 = random_forcing(sys.grid(), 22);
        let mut f12 = f1.clone();
        f12.axpy(1.0, &f2);
        let solver = StokesSolver::new(&sys, SolverOptions::with_tol(1e-11)).unwrap();
        let s1 = solver.solve(&f1).unwrap();
        let s2 = solver.solve(&f2).unwrap();
        let s12 = solver.solve(&f12).unwrap();
        let mut diff = s12.u.clone();
        diff.axpy(-1.0, &s1.u);
        diff.axpy(-1.0, &s2.u);
        assert!(diff.norm() <= 1e-8 * s12.u.norm());
    }
}
