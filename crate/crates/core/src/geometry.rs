//! Unit-cell obstacles and the perforated domain `Q_R ∩ εω`.
//!
//! Obstacles are voxelized at the unit-cell resolution, and the perforated
//! domain is an exact tiling of that mask, so every fine-grid cell knows which
//! unit-cell voxel and which obstacle copy it belongs to.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Index, MacGrid, Shape, Topology, MAX_DIM};

/// Default separation margin, in unit-cell voxels.
pub const DEFAULT_MARGIN: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case")]
pub enum ObstacleSpec {
    /// Solid cube of the given side, centered in `Y`.
    CenteredSquare { side: f64 },
    /// Union of `d` centered bars of width `arm_width` and length `length`.
    CenteredCross { arm_width: f64, length: f64 },
    /// Explicit solid voxels at `resolution` voxels per unit length.
    VoxelList { resolution: usize, cells: Vec<Index> },
}

impl ObstacleSpec {
    /// Reads the voxel-list format: one `i j [k]` line per solid voxel,
    /// 0-based, `#` starts a comment.
    pub fn parse_voxel_list(text: &str, resolution: usize) -> Result<Self> {
        let mut cells = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut idx = [0usize; MAX_DIM];
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() < 2 || parts.len() > 3 {
                return Err(Error::Parse(format!(
                    "voxel list line {}: expected 2 or 3 indices",
                    lineno + 1
                )));
            }
            for (a, p) in parts.iter().enumerate() {
                idx[a] = p.parse().map_err(|_| {
                    Error::Parse(format!("voxel list line {}: bad index `{p}`", lineno + 1))
                })?;
                if idx[a] >= resolution {
                    return Err(Error::Parse(format!(
                        "voxel list line {}: index {} outside resolution {resolution}",
                        lineno + 1,
                        idx[a]
                    )));
                }
            }
            cells.push(idx);
        }
        Ok(ObstacleSpec::VoxelList { resolution, cells })
    }

    pub fn read_voxel_list(path: &Path, resolution: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_voxel_list(&text, resolution)
    }
}

/// Boolean solid mask over the `n^d` voxels of the unit cell `Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitCellMask {
    pub dim: usize,
    pub n: usize,
    pub solid: Vec<bool>,
}

impl UnitCellMask {
    pub fn shape(&self) -> Shape {
        let mut dims = [1; MAX_DIM];
        dims[..self.dim].fill(self.n);
        Shape { dims }
    }

    pub fn is_solid(&self, idx: Index) -> bool {
        self.solid[self.shape().linear(idx)]
    }

    pub fn fluid_count(&self) -> usize {
        self.solid.iter().filter(|s| !**s).count()
    }

    pub fn fluid_fraction(&self) -> f64 {
        self.fluid_count() as f64 / self.solid.len() as f64
    }

    pub fn has_obstacle(&self) -> bool {
        self.solid.iter().any(|s| *s)
    }

    /// Distance, in voxel layers, between the obstacle and `∂Y`
    /// (`usize::MAX` without an obstacle).
    pub fn separation_margin(&self) -> usize {
        let shape = self.shape();
        shape
            .iter()
            .filter(|i| self.is_solid(*i))
            .map(|i| (0..self.dim).map(|a| i[a].min(self.n - 1 - i[a])).min().unwrap_or(0))
            .min()
            .unwrap_or(usize::MAX)
    }

    /// Connected components of the fluid voxels, with face adjacency that
    /// wraps across the periodic faces of `Y`.
    pub fn fluid_components(&self) -> usize {
        let shape = self.shape();
        let mut label = vec![usize::MAX; shape.len()];
        let mut count = 0;
        let mut queue = VecDeque::new();
        for start in 0..shape.len() {
            if self.solid[start] || label[start] != usize::MAX {
                continue;
            }
            label[start] = count;
            queue.push_back(start);
            while let Some(l) = queue.pop_front() {
                let idx = shape.unravel(l);
                for a in 0..self.dim {
                    for step in [self.n - 1, 1] {
                        let mut nb = idx;
                        nb[a] = (idx[a] + step) % self.n;
                        let m = shape.linear(nb);
                        if !self.solid[m] && label[m] == usize::MAX {
                            label[m] = count;
                            queue.push_back(m);
                        }
                    }
                }
            }
            count += 1;
        }
        count
    }

    /// Nearest-voxel upsampling by an integer factor.
    pub fn upsample(&self, factor: usize) -> UnitCellMask {
        if factor == 1 {
            return self.clone();
        }
        let fine = UnitCellMask {
            dim: self.dim,
            n: self.n * factor,
            solid: Vec::new(),
        };
        let shape = fine.shape();
        let solid = shape
            .iter()
            .map(|i| self.is_solid([i[0] / factor, i[1] / factor, i[2] / factor]))
            .collect();
        UnitCellMask { solid, ..fine }
    }
}

/// Voxelizes an obstacle without checking the standing assumptions.
pub fn voxelize(spec: &ObstacleSpec, dim: usize, n: usize) -> Result<UnitCellMask> {
    if !(1..=MAX_DIM).contains(&dim) {
        return Err(Error::Config(format!("dimension {dim} not in 1..=3")));
    }
    if n == 0 {
        return Err(Error::Config("unit-cell resolution must be positive".into()));
    }
    let mut mask = UnitCellMask {
        dim,
        n,
        solid: Vec::new(),
    };
    let shape = mask.shape();
    let centered = |i: usize| (i as f64 + 0.5) / n as f64 - 0.5;
    mask.solid = match spec {
        ObstacleSpec::CenteredSquare { side } => {
            check_unit(*side, "side")?;
            shape
                .iter()
                .map(|i| (0..dim).all(|a| centered(i[a]).abs() < 0.5 * side))
                .collect()
        }
        ObstacleSpec::CenteredCross { arm_width, length } => {
            check_unit(*arm_width, "arm_width")?;
            check_unit(*length, "length")?;
            shape
                .iter()
                .map(|i| {
                    (0..dim).any(|long| {
                        (0..dim).all(|a| {
                            let half = if a == long { *length } else { *arm_width } * 0.5;
                            centered(i[a]).abs() < half
                        })
                    })
                })
                .collect()
        }
        ObstacleSpec::VoxelList { resolution, cells } => {
            if *resolution == 0 || !n.is_multiple_of(*resolution) {
                return Err(Error::Config(format!(
                    "voxel-list resolution {resolution} does not divide unit-cell resolution {n}"
                )));
            }
            let coarse_shape = UnitCellMask {
                dim,
                n: *resolution,
                solid: Vec::new(),
            }
            .shape();
            let mut solid = vec![false; coarse_shape.len()];
            for c in cells {
                if (0..dim).any(|a| c[a] >= *resolution) || (dim..MAX_DIM).any(|a| c[a] != 0) {
                    return Err(Error::Config(format!("voxel {c:?} outside the unit cell")));
                }
                solid[coarse_shape.linear(*c)] = true;
            }
            UnitCellMask {
                dim,
                n: *resolution,
                solid,
            }
            .upsample(n / resolution)
            .solid
        }
    };
    Ok(mask)
}

fn check_unit(v: f64, name: &str) -> Result<()> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("obstacle {name} = {v} must lie in (0, 1]")))
    }
}

/// Voxelizes an obstacle and enforces separation from `∂Y` and connectivity
/// of the fluid part.
pub fn make_obstacle(spec: &ObstacleSpec, dim: usize, n: usize) -> Result<UnitCellMask> {
    let mask = voxelize(spec, dim, n)?;
    let margin = mask.separation_margin();
    if margin < DEFAULT_MARGIN {
        return Err(Error::SeparationViolation {
            margin,
            required: DEFAULT_MARGIN,
        });
    }
    let components = mask.fluid_components();
    if components != 1 {
        return Err(Error::ConnectivityViolation { components });
    }
    Ok(mask)
}

/// Fluid/solid masks of `Q_R ∩ εω` on a MAC grid.
#[derive(Debug, Clone)]
pub struct PerforatedDomain {
    pub grid: MacGrid,
    pub fluid_cells: Vec<bool>,
    /// Per axis: faces whose two adjacent cells are both fluid.
    pub fluid_faces: Vec<Vec<bool>>,
    pub epsilon: f64,
    pub obstacle: UnitCellMask,
    /// Fine cells per period `ε` along each axis.
    period_cells: usize,
    /// Cell offset of the lattice origin, `R * n_per_unit`.
    origin_offset: usize,
}

/// Validates that `epsilon` is `1/m` and returns `m`.
pub fn reciprocal_integer(epsilon: f64) -> Result<usize> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::Config(format!("epsilon = {epsilon} must lie in (0, 1]")));
    }
    let m = (1.0 / epsilon).round();
    if (m * epsilon - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("epsilon = {epsilon} is not 1/m for an integer m")));
    }
    Ok(m as usize)
}

impl PerforatedDomain {
    pub fn period_cells(&self) -> usize {
        self.period_cells
    }

    /// Position of a fine cell inside its period, and the index of its period.
    #[inline]
    pub fn locate_cell(&self, cell: Index) -> (Index, [i64; MAX_DIM]) {
        let p = self.period_cells as i64;
        let mut local = [0usize; MAX_DIM];
        let mut copy = [0i64; MAX_DIM];
        for a in 0..self.grid.dim() {
            let g = cell[a] as i64 - self.origin_offset as i64;
            local[a] = g.rem_euclid(p) as usize;
            copy[a] = g.div_euclid(p);
        }
        (local, copy)
    }

    /// Position of a face within its period; faces on the lattice
    /// hyperplanes map to local index 0 along their normal axis.
    #[inline]
    pub fn locate_face(&self, face: Index) -> Index {
        self.locate_cell(face).0
    }

    /// Inverse of [`PerforatedDomain::locate_cell`] for the copy containing
    /// the lattice origin, wrapped onto a periodic grid.
    pub fn from_local(&self, local: Index) -> Index {
        let n = self.grid.cells_per_axis();
        let mut idx = [0usize; MAX_DIM];
        for a in 0..self.grid.dim() {
            idx[a] = (local[a] + self.origin_offset) % n;
        }
        idx
    }

    pub fn fluid_fraction(&self) -> f64 {
        self.fluid_cells.iter().filter(|f| **f).count() as f64 / self.fluid_cells.len() as f64
    }

    pub fn solid_count(&self) -> usize {
        self.fluid_cells.iter().filter(|f| !**f).count()
    }

    /// True when `R` is an integer multiple of `ε`, so `Q_R` is tiled by
    /// whole periods.
    pub fn extent_is_period_multiple(&self) -> bool {
        self.origin_offset.is_multiple_of(self.period_cells)
    }

    pub fn is_fluid_face(&self, axis: usize, face: Index) -> bool {
        self.fluid_faces[axis][self.grid.face_shape(axis).linear(face)]
    }
}

/// Tiles the unit-cell mask with period `epsilon` over `grid`.
pub fn perforate(mask: &UnitCellMask, epsilon: f64, grid: &MacGrid) -> Result<PerforatedDomain> {
    if mask.dim != grid.dim() {
        return Err(Error::Config(format!(
            "mask dimension {} does not match grid dimension {}",
            mask.dim,
            grid.dim()
        )));
    }
    let m = reciprocal_integer(epsilon)?;
    let npu = grid.n_per_unit();
    if !npu.is_multiple_of(m * mask.n) {
        return Err(Error::Config(format!(
            "grid resolution {npu} is not divisible by 1/epsilon * mask resolution = {}",
            m * mask.n
        )));
    }
    let period_cells = npu / m;
    let factor = period_cells / mask.n;
    let origin_offset = grid.cells_per_axis() / 2;
    if grid.topology() == Topology::Periodic && !grid.cells_per_axis().is_multiple_of(period_cells) {
        return Err(Error::Config(format!(
            "periodic grid of width {} is not a whole number of periods {epsilon}",
            2.0 * grid.extent()
        )));
    }
    let cs = grid.cell_shape();
    let mut dom = PerforatedDomain {
        grid: grid.clone(),
        fluid_cells: Vec::new(),
        fluid_faces: Vec::new(),
        epsilon,
        obstacle: mask.clone(),
        period_cells,
        origin_offset,
    };
    let mshape = mask.shape();
    dom.fluid_cells = cs
        .iter()
        .map(|c| {
            let (local, _) = dom.locate_cell(c);
            let v = [local[0] / factor, local[1] / factor, local[2] / factor];
            !mask.solid[mshape.linear(v)]
        })
        .collect();
    dom.fluid_faces = (0..grid.dim())
        .map(|a| {
            let fs = grid.face_shape(a);
            fs.iter()
                .map(|f| match grid.face_cells(a, f) {
                    [Some(lo), Some(hi)] => dom.fluid_cells[cs.linear(lo)] && dom.fluid_cells[cs.linear(hi)],
                    _ => false,
                })
                .collect()
        })
        .collect();
    Ok(dom)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometryReport {
    /// Obstacle-to-boundary margin in unit-cell voxels.
    pub margin: usize,
    pub margin_ok: bool,
    pub connected: bool,
    pub fluid_components: usize,
    pub unit_fluid_fraction: f64,
    pub domain_fluid_fraction: f64,
    /// Every fine cell touching an `εZ^d` hyperplane is fluid.
    pub lattice_layer_fluid: bool,
}

impl GeometryReport {
    pub fn is_valid(&self) -> bool {
        self.margin_ok && self.connected && self.lattice_layer_fluid
    }
}

pub fn validate(domain: &PerforatedDomain) -> GeometryReport {
    let mask = &domain.obstacle;
    let margin = mask.separation_margin();
    let components = mask.fluid_components();
    let cs = domain.grid.cell_shape();
    let p = domain.period_cells;
    let dim = domain.grid.dim();
    let lattice_layer_fluid = cs.iter().all(|c| {
        let (local, _) = domain.locate_cell(c);
        let touches = (0..dim).any(|a| local[a] == 0 || local[a] == p - 1);
        !touches || domain.fluid_cells[cs.linear(c)]
    });
    GeometryReport {
        margin,
        margin_ok: margin >= DEFAULT_MARGIN,
        connected: components == 1,
        fluid_components: components,
        unit_fluid_fraction: mask.fluid_fraction(),
        domain_fluid_fraction: domain.fluid_fraction(),
        lattice_layer_fluid,
    }
}
