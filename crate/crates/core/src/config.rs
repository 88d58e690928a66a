//! Experiment configuration, read from TOML.
//!
//! ```toml
//! [geometry]
//! obstacle = { shape = "centered-square", side = 0.5 }
//! resolution = 32
//!
//! [forcing]
//! kind = "affine"
//! value = [0.3, 0.0]
//! gradient = [[0.0, -1.0], [1.0, 0.0]]
//!
//! [sweep]
//! epsilons = [0.25, 0.125, 0.0625]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forcing::Forcing;
use crate::geometry::{make_obstacle, reciprocal_integer, ObstacleSpec, UnitCellMask};
use crate::stokes::{InnerSolver, SolverOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub geometry: GeometryConfig,
    pub forcing: Forcing,
    pub sweep: SweepConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Analytic obstacle; exactly one of `obstacle` and `voxel_file` is set.
    #[serde(default)]
    pub obstacle: Option<ObstacleSpec>,
    /// Voxel list (`i j [k]` per line), relative to the config file.
    #[serde(default)]
    pub voxel_file: Option<PathBuf>,
    /// Voxels per unit length of `voxel_file`; defaults to `resolution`.
    #[serde(default)]
    pub voxel_resolution: Option<usize>,
    /// Unit-cell resolution `n`: cells per period on every grid.
    pub resolution: usize,
    /// Half-width `R` of the box `Q_R`.
    #[serde(default = "one")]
    pub extent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub epsilons: Vec<f64>,
    #[serde(default = "one")]
    pub mu: f64,
    /// Hölder exponent used in the forcing norm.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Radii per octave between `ε` and the largest admissible radius.
    #[serde(default = "default_steps")]
    pub steps_per_octave: usize,
    /// Reverse Hölder exponents.
    #[serde(default = "default_rh_q")]
    pub q: Vec<f64>,
    /// Boundary-layer widths in rescaled units; defaults to
    /// `{2ε, 4ε, 1/8, 1/4, 1/2}` filtered to `(ε, 1]`.
    #[serde(default)]
    pub deltas: Option<Vec<f64>>,
    /// Seed for the random probe forcings of `verify`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub compactness: CompactnessConfig,
    #[serde(default)]
    pub wkp: WkpConfig,
    #[serde(default)]
    pub gates: GateConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompactnessConfig {
    /// Half-width of the box on which errors are measured.
    pub inner: f64,
    /// Cells per unit length of the Darcy grid.
    pub darcy_resolution: usize,
    /// Constant forcing of the torus Liouville check; defaults to
    /// `(1, 1/2, 1/4)` truncated to the dimension.
    pub torus_forcing: Option<Vec<f64>>,
    /// Half-width of the torus.
    pub torus_extent: f64,
}

impl Default for CompactnessConfig {
    fn default() -> Self {
        CompactnessConfig {
            inner: 0.5,
            darcy_resolution: 64,
            torus_forcing: None,
            torus_extent: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WkpConfig {
    pub q: Vec<f64>,
    /// `F_i = amplitude_i sin(π k x_{i+1})`.
    pub amplitude: Option<Vec<f64>>,
    /// `k`; the torus half-width times `k` must be an integer.
    pub frequency: f64,
    /// `f = c diag(sin(π k x_i))`, entering as `ε div f`.
    pub div_amplitude: f64,
}

impl Default for WkpConfig {
    fn default() -> Self {
        WkpConfig {
            q: vec![1.5, 2.0, 4.0],
            amplitude: None,
            frequency: 1.0,
            div_amplitude: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateConfig {
    /// Largest allowed max/min of a per-`ε` quantity.
    pub spread: f64,
    pub min_slope: f64,
    pub min_r2: f64,
    /// Bound on `err_u(ε_min) / err_u(ε_max)`.
    pub compactness_ratio: f64,
    /// Liouville error bound in units of the solver tolerance.
    pub liouville_factor: f64,
    pub mean_tol: f64,
    pub divergence_tol: f64,
    pub oracle_tol: f64,
    pub asymmetry_tol: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            spread: 2.0,
            min_slope: 0.3,
            min_r2: 0.8,
            compactness_ratio: 0.6,
            liouville_factor: 10.0,
            mean_tol: 1e-13,
            divergence_tol: 1e-8,
            oracle_tol: 1e-10,
            asymmetry_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: Option<usize>,
    pub inner: InnerSolver,
    pub cell_tol: f64,
    pub darcy_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-9,
            max_iter: None,
            inner: InnerSolver::Cholesky,
            cell_tol: 1e-11,
            darcy_tol: 1e-12,
        }
    }
}

impl SolverConfig {
    pub fn options(&self) -> SolverOptions {
        SolverOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            inner: self.inner,
        }
    }

    pub fn cell_options(&self) -> SolverOptions {
        SolverOptions {
            tol: self.cell_tol,
            ..self.options()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub csv: String,
    pub report: String,
    pub experiment_id: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            csv: "sweep.csv".into(),
            report: "report.md".into(),
            experiment_id: "sweep".into(),
        }
    }
}

fn default_dim() -> usize {
    2
}
fn one() -> f64 {
    1.0
}
fn default_alpha() -> f64 {
    0.9
}
fn default_steps() -> usize {
    2
}
fn default_rh_q() -> Vec<f64> {
    vec![3.0, 4.0]
}

fn bad(key: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{key}: {msg}"))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config; a relative `voxel_file` is resolved
    /// against the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if let (Some(vf), Some(dir)) = (&cfg.geometry.voxel_file, path.parent()) {
            if vf.is_relative() {
                cfg.geometry.voxel_file = Some(dir.join(vf));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.geometry;
        if !(2..=3).contains(&g.dim) {
            return Err(bad("geometry.dim", format!("{} is not 2 or 3", g.dim)));
        }
        match (&g.obstacle, &g.voxel_file) {
            (Some(_), Some(_)) => return Err(bad("geometry.voxel_file", "set either obstacle or voxel_file, not both")),
            (None, None) => return Err(bad("geometry.obstacle", "missing (or give geometry.voxel_file)")),
            _ => {}
        }
        if g.resolution < 2 || !g.resolution.is_multiple_of(2) {
            return Err(bad("geometry.resolution", format!("{} must be even and at least 2", g.resolution)));
        }
        if !(g.extent > 0.0) {
            return Err(bad("geometry.extent", "must be positive"));
        }
        self.forcing.check(g.dim).map_err(|e| bad("forcing", e))?;

        let s = &self.sweep;
        if s.epsilons.is_empty() {
            return Err(bad("sweep.epsilons", "empty list"));
        }
        for e in &s.epsilons {
            let m = reciprocal_integer(*e).map_err(|e| bad("sweep.epsilons", e))?;
            let cells = g.extent * (g.resolution * m) as f64;
            if (cells - cells.round()).abs() > 1e-9 {
                return Err(bad("geometry.extent", format!("{} is not a whole number of cells at epsilon {e}", g.extent)));
            }
        }
        if s.epsilons.windows(2).any(|w| w[1] >= w[0]) {
            return Err(bad("sweep.epsilons", "must be strictly decreasing"));
        }
        if !(s.mu > 0.0) {
            return Err(bad("sweep.mu", "must be positive"));
        }
        if !(s.alpha > 0.0 && s.alpha < 1.0) {
            return Err(bad("sweep.alpha", "must lie in (0, 1)"));
        }
        if s.steps_per_octave == 0 {
            return Err(bad("sweep.steps_per_octave", "must be at least 1"));
        }
        if let Some(q) = s.q.iter().find(|q| !(**q > 2.0)) {
            return Err(bad("sweep.q", format!("{q} must exceed 2")));
        }
        if let Some(d) = s.deltas.iter().flatten().find(|d| !(**d > 0.0 && **d <= 1.0)) {
            return Err(bad("sweep.deltas", format!("{d} is outside (0, 1]")));
        }
        let c = &s.compactness;
        if !(c.inner > 0.0 && c.inner <= g.extent) {
            return Err(bad("sweep.compactness.inner", "must lie in (0, extent]"));
        }
        if c.darcy_resolution < 2 {
            return Err(bad("sweep.compactness.darcy_resolution", "must be at least 2"));
        }
        if c.torus_forcing.as_ref().is_some_and(|v| v.len() != g.dim) {
            return Err(bad("sweep.compactness.torus_forcing", "length must equal the dimension"));
        }
        for e in &s.epsilons {
            let periods = c.torus_extent / e;
            if !(c.torus_extent > 0.0) || (periods - periods.round()).abs() > 1e-9 {
                return Err(bad("sweep.compactness.torus_extent", format!("must be a multiple of every epsilon ({e})")));
            }
        }
        let w = &s.wkp;
        if let Some(q) = w.q.iter().find(|q| !(**q > 1.0 && q.is_finite())) {
            return Err(bad("sweep.wkp.q", format!("{q} is outside (1, ∞)")));
        }
        if w.amplitude.as_ref().is_some_and(|v| v.len() != g.dim) {
            return Err(bad("sweep.wkp.amplitude", "length must equal the dimension"));
        }
        let turns = c.torus_extent * w.frequency;
        if (turns - turns.round()).abs() > 1e-9 {
            return Err(bad("sweep.wkp.frequency", "torus_extent * frequency must be an integer"));
        }
        if !(self.solver.tol > 0.0 && self.solver.cell_tol > 0.0 && self.solver.darcy_tol > 0.0) {
            return Err(bad("solver.tol", "tolerances must be positive"));
        }
        Ok(())
    }

    /// Builds the unit-cell mask at `geometry.resolution`.
    pub fn unit_cell(&self) -> Result<UnitCellMask> {
        let g = &self.geometry;
        let spec = match (&g.obstacle, &g.voxel_file) {
            (Some(spec), _) => spec.clone(),
            (None, Some(path)) => ObstacleSpec::read_voxel_list(path, g.voxel_resolution.unwrap_or(g.resolution))?,
            (None, None) => return Err(bad("geometry.obstacle", "missing")),
        };
        make_obstacle(&spec, g.dim, g.resolution)
    }

    pub fn torus_forcing(&self) -> Vec<f64> {
        self.sweep
            .compactness
            .torus_forcing
            .clone()
            .unwrap_or_else(|| [1.0, 0.5, 0.25][..self.geometry.dim].to_vec())
    }

    pub fn wkp_amplitude(&self) -> Vec<f64> {
        self.sweep
            .wkp
            .amplitude
            .clone()
            .unwrap_or_else(|| [1.0, 0.5, 0.25][..self.geometry.dim].to_vec())
    }

    pub fn csv_path(&self) -> PathBuf {
        self.output.dir.join(&self.output.csv)
    }

    pub fn report_path(&self) -> PathBuf {
        self.output.dir.join(&self.output.report)
    }
}
