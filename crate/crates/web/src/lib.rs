//! WebAssembly bindings for the demo page in `www/`.
//!
//! Two operations are exposed: the permeability of a centered square
//! obstacle, and the flow through a perforated torus driven by a constant
//! force, returned as a speed image the page paints on a canvas.

use wasm_bindgen::prelude::*;

use darcylab::cell::{solve_cell_problem, CellSolution};
use darcylab::geometry::{make_obstacle, perforate, ObstacleSpec};
use darcylab::grid::{MacGrid, Topology};
use darcylab::nalgebra::DMatrix;
use darcylab::stokes::{assemble, solve, SolverOptions};

const TOL: f64 = 1e-9;
/// Largest flow image, in cells per side.
pub const MAX_CELLS: usize = 128;

#[wasm_bindgen]
pub struct Permeability {
    k_avg: Vec<f64>,
    k_energy: Vec<f64>,
    porosity: f64,
}

#[wasm_bindgen]
impl Permeability {
    /// Row-major 2x2.
    #[wasm_bindgen(getter)]
    pub fn k_avg(&self) -> Vec<f64> {
        self.k_avg.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn k_energy(&self) -> Vec<f64> {
        self.k_energy.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn porosity(&self) -> f64 {
        self.porosity
    }
}

#[wasm_bindgen]
pub struct FlowView {
    cells: usize,
    speed: Vec<f64>,
    solid: Vec<u8>,
    mean_velocity: Vec<f64>,
    darcy_velocity: Vec<f64>,
    iterations: usize,
}

#[wasm_bindgen]
impl FlowView {
    /// Cells per side of the image.
    #[wasm_bindgen(getter)]
    pub fn cells(&self) -> usize {
        self.cells
    }

    /// `|u|` per cell, row `j` starting at `j * cells`.
    #[wasm_bindgen(getter)]
    pub fn speed(&self) -> Vec<f64> {
        self.speed.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn solid(&self) -> Vec<u8> {
        self.solid.clone()
    }

    /// Mean of the zero-extended velocity over the torus.
    #[wasm_bindgen(getter)]
    pub fn mean_velocity(&self) -> Vec<f64> {
        self.mean_velocity.clone()
    }

    /// `K f` from the cell problem at the same resolution.
    #[wasm_bindgen(getter)]
    pub fn darcy_velocity(&self) -> Vec<f64> {
        self.darcy_velocity.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn iterations(&self) -> usize {
        self.iterations
    }
}

fn cell_solution(side: f64, resolution: usize) -> darcylab::Result<CellSolution> {
    let mask = make_obstacle(&ObstacleSpec::CenteredSquare { side }, 2, resolution)?;
    solve_cell_problem(&mask, resolution, SolverOptions::with_tol(TOL))
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])).collect()
}

/// Permeability of a centered square of the given side, with `resolution`
/// cells per period.
pub fn compute_permeability(side: f64, resolution: usize) -> darcylab::Result<Permeability> {
    let cell = cell_solution(side, resolution)?;
    Ok(Permeability {
        k_avg: row_major(&cell.k_avg),
        k_energy: row_major(&cell.k_energy),
        porosity: cell.domain.obstacle.fluid_fraction(),
    })
}

/// Flow on the torus `(-1/2, 1/2)^2` with `periods` obstacles per side,
/// driven by the unit force at `angle` radians.
pub fn compute_flow(side: f64, resolution: usize, periods: usize, angle: f64) -> darcylab::Result<FlowView> {
    let cells = resolution * periods;
    if periods == 0 || cells > MAX_CELLS {
        return Err(darcylab::Error::Config(format!(
            "resolution x periods must lie in 1..={MAX_CELLS}, got {cells}"
        )));
    }
    let cell = cell_solution(side, resolution)?;
    let eps = 1.0 / periods as f64;
    let grid = MacGrid::new(2, cells, 0.5, Topology::Periodic)?;
    let domain = perforate(&cell.domain.obstacle, eps, &grid)?;
    let system = assemble(&domain, 1.0, eps)?;
    let force = [angle.cos(), angle.sin()];
    let state = solve(&system, &grid.sample_faces(|a, _| force[a]), SolverOptions::with_tol(TOL))?;
    let speed: Vec<f64> = grid.speed_squared(&state.u).iter().map(|v| v.sqrt()).collect();
    let averages = grid.cell_average(&state.u);
    let n = grid.num_cells() as f64;
    let mean_velocity = averages.iter().map(|c| c.iter().sum::<f64>() / n).collect();
    let darcy_velocity = (0..2)
        .map(|i| (0..2).map(|j| cell.k_avg[(i, j)] * force[j]).sum())
        .collect();
    Ok(FlowView {
        cells,
        speed,
        solid: domain.fluid_cells.iter().map(|f| u8::from(!f)).collect(),
        mean_velocity,
        darcy_velocity,
        iterations: state.stats.outer_iterations,
    })
}

#[wasm_bindgen]
pub fn permeability(side: f64, resolution: usize) -> Result<Permeability, JsError> {
    compute_permeability(side, resolution).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn flow(side: f64, resolution: usize, periods: usize, angle: f64) -> Result<FlowView, JsError> {
    compute_flow(side, resolution, periods, angle).map_err(|e| JsError::new(&e.to_string()))
}
