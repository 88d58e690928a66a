//! Unit-cell corrector problem and permeability.
//!
//! For each unit vector `e_j` the periodic problem `-ΔW_j + ∇π_j = e_j`,
//! `div W_j = 0` is solved on the fluid part of `Y`, with `W_j = 0` on the
//! obstacle. The permeability is `K[i][j] = ∫_Y W_j^i` (zero-extended), or
//! equivalently the energy form `Σ_l ∫ ∇W_j^l · ∇W_i^l`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{perforate, PerforatedDomain, UnitCellMask};
use crate::grid::{CellRange, Cube, FaceField, GradientField, MacGrid, Topology};
use crate::stokes::{self, SolveStats, SolverOptions, StokesSolver};

/// Correctors, cell pressures and both permeability matrices.
#[derive(Debug, Clone)]
pub struct CellSolution {
    /// Periodic unit cell `(-1/2, 1/2)^d`; local index 0 sits at the origin.
    pub domain: PerforatedDomain,
    pub w: Vec<FaceField>,
    pub pi: Vec<Vec<f64>>,
    pub k_avg: DMatrix<f64>,
    pub k_energy: DMatrix<f64>,
    pub stats: Vec<SolveStats>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PermeabilityMethod {
    Average,
    Energy,
}

/// Periodic grid over one period at `n` cells per side.
pub fn cell_grid(dim: usize, n: usize) -> Result<MacGrid> {
    if !n.is_multiple_of(2) {
        return Err(Error::Config(format!("cell resolution {n} must be even")));
    }
    MacGrid::new(dim, n, 0.5, Topology::Periodic)
}

/// Solves the `d` corrector problems at `n_per_unit` cells per period.
pub fn solve_cell_problem(mask: &UnitCellMask, n_per_unit: usize, opts: SolverOptions) -> Result<CellSolution> {
    if !mask.has_obstacle() {
        return Err(Error::IncompatibleData(
            "the unit cell has no obstacle; constant fields solve the homogeneous cell problem".into(),
        ));
    }
    let grid = cell_grid(mask.dim, n_per_unit)?;
    let domain = perforate(mask, 1.0, &grid)?;
    let system = stokes::assemble(&domain, 1.0, 1.0)?;
    let solver = StokesSolver::new(&system, opts)?;
    let mut w = Vec::with_capacity(mask.dim);
    let mut pi = Vec::with_capacity(mask.dim);
    let mut stats = Vec::with_capacity(mask.dim);
    for j in 0..mask.dim {
        let f = grid.sample_faces(|a, _| if a == j { 1.0 } else { 0.0 });
        let st = solver.solve(&f)?;
        w.push(st.u);
        pi.push(st.p);
        stats.push(st.stats);
    }
    let k_avg = k_average(&grid, &w);
    let k_energy = k_energy(&grid, &w);
    Ok(CellSolution {
        domain,
        w,
        pi,
        k_avg,
        k_energy,
        stats,
    })
}

/// `K[i][j] = ∫_Y W_j^i`; the unit cell has volume 1 so this is a mean.
pub fn k_average(grid: &MacGrid, w: &[FaceField]) -> DMatrix<f64> {
    let d = grid.dim();
    let n = grid.num_cells() as f64;
    DMatrix::from_fn(d, d, |i, j| w[j].comps[i].iter().sum::<f64>() / n)
}

/// `K[i][j] = Σ_l <∇W_j^l, ∇W_i^l> h^d` with finite differences of the
/// zero-extended correctors.
pub fn k_energy(grid: &MacGrid, w: &[FaceField]) -> DMatrix<f64> {
    let d = grid.dim();
    let grads: Vec<GradientField> = w.iter().map(|wj| grid.velocity_gradient(wj)).collect();
    let mut k = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..=i {
            let v = grid.gradient_cell_dot(&grads[i], &grads[j]).iter().sum::<f64>() * grid.cell_volume();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

pub fn permeability(cell: &CellSolution, method: PermeabilityMethod) -> DMatrix<f64> {
    match method {
        PermeabilityMethod::Average => cell.k_avg.clone(),
        PermeabilityMethod::Energy => cell.k_energy.clone(),
    }
}

pub fn is_positive_definite(k: &DMatrix<f64>) -> bool {
    k.clone().cholesky().is_some()
}

pub fn max_asymmetry(k: &DMatrix<f64>) -> f64 {
    (k - k.transpose()).amax()
}

impl CellSolution {
    pub fn dim(&self) -> usize {
        self.domain.grid.dim()
    }

    pub fn resolution(&self) -> usize {
        self.domain.grid.n_per_unit()
    }

    fn check_compatible(&self, domain: &PerforatedDomain) -> Result<()> {
        if domain.grid.dim() != self.dim()
            || domain.period_cells() != self.resolution()
            || domain.obstacle.n != self.domain.obstacle.n
            || domain.obstacle.solid != self.domain.obstacle.solid
        {
            return Err(Error::Config(format!(
                "cell solution at resolution {} does not tile a domain with {} cells per period",
                self.resolution(),
                domain.period_cells()
            )));
        }
        Ok(())
    }

    /// `W_j(x/ε)` on every face of `domain.grid`, by exact periodic copy.
    pub fn tile_corrector(&self, domain: &PerforatedDomain) -> Result<Vec<FaceField>> {
        self.check_compatible(domain)?;
        let grid = &domain.grid;
        let cg = &self.domain.grid;
        Ok(self
            .w
            .iter()
            .map(|wj| FaceField {
                comps: (0..grid.dim())
                    .map(|a| {
                        let cs = cg.face_shape(a);
                        grid.face_shape(a)
                            .iter()
                            .map(|f| wj.comps[a][cs.linear(self.domain.from_local(domain.locate_face(f)))])
                            .collect()
                    })
                    .collect(),
            })
            .collect())
    }

    /// `π_j(x/ε)` on every cell of `domain.grid`.
    pub fn tile_pressure(&self, domain: &PerforatedDomain) -> Result<Vec<Vec<f64>>> {
        self.check_compatible(domain)?;
        let grid = &domain.grid;
        let cs = self.domain.grid.cell_shape();
        Ok(self
            .pi
            .iter()
            .map(|pj| {
                grid.cell_shape()
                    .iter()
                    .map(|c| pj[cs.linear(self.domain.from_local(domain.locate_cell(c).0))])
                    .collect()
            })
            .collect())
    }
}

/// Tiled correctors on one `ε`-domain, with the derived per-cell data used by
/// the excess computations.
#[derive(Debug, Clone)]
pub struct TiledCorrector {
    pub epsilon: f64,
    pub w: Vec<FaceField>,
    /// Face-to-cell averages, indexed `[j][axis][cell]`.
    pub w_cells: Vec<Vec<Vec<f64>>>,
    /// `ε ∇_x (W_j(x/ε))`, i.e. the cell-scale gradient at `x/ε`.
    pub grad: Vec<GradientField>,
    pub pi: Vec<Vec<f64>>,
}

impl TiledCorrector {
    pub fn new(cell: &CellSolution, domain: &PerforatedDomain) -> Result<Self> {
        let grid = &domain.grid;
        let w = cell.tile_corrector(domain)?;
        let w_cells = w.iter().map(|wj| grid.cell_average(wj)).collect();
        let grad = w
            .iter()
            .map(|wj| {
                let mut g = grid.velocity_gradient(wj);
                g.scale(domain.epsilon);
                g
            })
            .collect();
        Ok(TiledCorrector {
            epsilon: domain.epsilon,
            w,
            w_cells,
            grad,
            pi: cell.tile_pressure(domain)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    /// `μ⁻¹ Σ_j W_j(x/ε) E_j`.
    pub fn combine(&self, e: &[f64], mu: f64) -> FaceField {
        let mut out = FaceField {
            comps: self.w[0].comps.iter().map(|c| vec![0.0; c.len()]).collect(),
        };
        for (wj, ej) in self.w.iter().zip(e) {
            out.axpy(ej / mu, wj);
        }
        out
    }
}

/// Normal equations `M E = b` for the best corrector multiple on one box.
#[derive(Debug, Clone)]
pub struct Gram {
    pub range: CellRange,
    /// `μ⁻² ⨏ W_i(x/ε) · W_j(x/ε)`.
    pub m: DMatrix<f64>,
    pub mu: f64,
}

/// Gram matrix of the tiled correctors over the snapped box `cube`.
pub fn gram_matrix(tiled: &TiledCorrector, grid: &MacGrid, cube: &Cube, mu: f64) -> Result<Gram> {
    if cube.half_width < tiled.epsilon * (1.0 - 1e-9) {
        return Err(Error::DomainTooSmall(format!(
            "box radius {} is below the period {}",
            cube.half_width, tiled.epsilon
        )));
    }
    let range = grid.snap(cube)?;
    let d = tiled.dim();
    let cs = grid.cell_shape();
    let count = range.count() as f64;
    let mut m = DMatrix::zeros(d, d);
    for c in range.iter() {
        let l = cs.linear(c);
        for i in 0..d {
            for j in 0..=i {
                let mut s = 0.0;
                for a in 0..d {
                    s += tiled.w_cells[i][a][l] * tiled.w_cells[j][a][l];
                }
                m[(i, j)] += s;
            }
        }
    }
    for i in 0..d {
        for j in 0..=i {
            let v = m[(i, j)] / (count * mu * mu);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    if !is_positive_definite(&m) {
        return Err(Error::DomainTooSmall("corrector Gram matrix is singular on this box".into()));
    }
    Ok(Gram { range, m, mu })
}

impl Gram {
    /// `b[i] = μ⁻¹ ⨏ u · W_i(x/ε)` for a field already averaged to cells.
    pub fn rhs(&self, tiled: &TiledCorrector, grid: &MacGrid, u_cells: &[Vec<f64>]) -> DVector<f64> {
        let d = tiled.dim();
        let cs = grid.cell_shape();
        let mut b = DVector::zeros(d);
        for c in self.range.iter() {
            let l = cs.linear(c);
            for i in 0..d {
                for a in 0..d {
                    b[i] += u_cells[a][l] * tiled.w_cells[i][a][l];
                }
            }
        }
        b / (self.range.count() as f64 * self.mu)
    }

    pub fn minimizer(&self, b: &DVector<f64>) -> DVector<f64> {
        self.m.clone().cholesky().expect("checked positive definite").solve(b)
    }
}
