//! Sweep driver: solves the `ε`-problems of a config, measures every
//! regularity quantity, fits decay rates and evaluates the acceptance gates.
//!
//! Independent `ε` values run in parallel; records are assembled in config
//! order so output files are byte-for-byte reproducible.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell::{is_positive_definite, max_asymmetry, solve_cell_problem, CellSolution, TiledCorrector};
use crate::config::{ExperimentConfig, GateConfig};
use crate::darcy::{first_order_approx, solve_homogenized, DarcySolution};
use crate::error::{Error, Result};
use crate::extension::{check_mean_property, extend_pressure, extend_velocity};
use crate::geometry::{perforate, reciprocal_integer, PerforatedDomain, UnitCellMask};
use crate::grid::{CellRange, Cube, FaceField, MacGrid, Topology};
use crate::regularity::{
    boundary_layer_norm, boundary_layer_scale, caccioppoli_ratio, excess, fit_rate, g_field, lipschitz_quantity,
    poincare_ratio, reverse_holder_ratio, FlowFields, RateFit,
};
use crate::stokes::{self, assemble, solve_dense_oracle, FlowState, StokesSolver};

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub experiment_id: String,
    pub epsilon: Option<f64>,
    pub quantity: String,
    pub r: Option<f64>,
    #[serde(rename = "R")]
    pub big_r: Option<f64>,
    pub delta: Option<f64>,
    pub q: Option<f64>,
    pub lhs: Option<f64>,
    pub rhs: Option<f64>,
    pub ratio: Option<f64>,
    pub slope: Option<f64>,
    pub r2: Option<f64>,
    pub flag: String,
}

impl Record {
    pub fn new(id: &str, quantity: &str, epsilon: Option<f64>) -> Self {
        Record {
            experiment_id: id.to_string(),
            epsilon,
            quantity: quantity.to_string(),
            r: None,
            big_r: None,
            delta: None,
            q: None,
            lhs: None,
            rhs: None,
            ratio: None,
            slope: None,
            r2: None,
            flag: String::new(),
        }
    }

    fn r(mut self, r: f64) -> Self {
        self.r = Some(r);
        self
    }

    fn big_r(mut self, big_r: f64) -> Self {
        self.big_r = Some(big_r);
        self
    }

    fn delta(mut self, d: f64) -> Self {
        self.delta = Some(d);
        self
    }

    fn q(mut self, q: f64) -> Self {
        self.q = Some(q);
        self
    }

    fn value(mut self, v: f64) -> Self {
        self.lhs = Some(v);
        self
    }

    fn ratio(mut self, ratio: crate::regularity::Ratio) -> Self {
        self.lhs = Some(ratio.lhs);
        self.rhs = Some(ratio.rhs);
        self.ratio = Some(ratio.ratio);
        if ratio.zero {
            self.flag = "zero".into();
        }
        self
    }

    fn fit(mut self, fit: &RateFit) -> Self {
        self.slope = Some(fit.slope);
        self.r2 = Some(fit.r2);
        self
    }

    fn flag(mut self, flag: impl Into<String>) -> Self {
        self.flag = flag.into();
        self
    }

    fn error(self, e: &Error) -> Self {
        self.flag(format!("error: {e}"))
    }

    pub fn is_error(&self) -> bool {
        self.flag.starts_with("error")
    }
}

/// Radii `ε 2^{k/s}` up to `upper`, increasing.
pub fn radii(epsilon: f64, upper: f64, steps_per_octave: usize) -> Vec<f64> {
    let mut out = Vec::new();
    let mut k = 0;
    loop {
        let r = epsilon * 2f64.powf(k as f64 / steps_per_octave as f64);
        if r > upper * (1.0 + 1e-9) {
            return out;
        }
        out.push(r);
        k += 1;
    }
}

/// Default boundary-layer widths in rescaled units.
pub fn default_deltas(rescaled_eps: f64) -> Vec<f64> {
    let mut d: Vec<f64> = [2.0 * rescaled_eps, 4.0 * rescaled_eps, 0.125, 0.25, 0.5]
        .into_iter()
        .filter(|d| *d > rescaled_eps && *d <= 1.0)
        .collect();
    d.sort_by(f64::total_cmp);
    d.dedup();
    d
}

/// Which parts of a run to execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Parts {
    pub regularity: bool,
    pub compactness: bool,
    pub wkp: bool,
}

impl Parts {
    pub const ALL: Parts = Parts {
        regularity: true,
        compactness: true,
        wkp: true,
    };
}

/// Geometry and cell data shared by every `ε`.
pub struct Prepared {
    pub mask: UnitCellMask,
    pub cell: CellSolution,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let mask = cfg.unit_cell()?;
    let cell = solve_cell_problem(&mask, cfg.geometry.resolution, cfg.solver.cell_options())?;
    Ok(Prepared { mask, cell })
}

pub fn box_domain(cfg: &ExperimentConfig, mask: &UnitCellMask, epsilon: f64) -> Result<PerforatedDomain> {
    let m = reciprocal_integer(epsilon)?;
    let grid = MacGrid::new(cfg.geometry.dim, cfg.geometry.resolution * m, cfg.geometry.extent, Topology::Box)?;
    perforate(mask, epsilon, &grid)
}

pub fn torus_domain(cfg: &ExperimentConfig, mask: &UnitCellMask, epsilon: f64) -> Result<PerforatedDomain> {
    let m = reciprocal_integer(epsilon)?;
    let grid = MacGrid::new(
        cfg.geometry.dim,
        cfg.geometry.resolution * m,
        cfg.sweep.compactness.torus_extent,
        Topology::Periodic,
    )?;
    perforate(mask, epsilon, &grid)
}

fn cell_records(cfg: &ExperimentConfig, cell: &CellSolution) -> Vec<Record> {
    let id = &cfg.output.experiment_id;
    let ke = &cell.k_energy;
    let gap = (&cell.k_avg - ke).norm() / ke.norm();
    let min_eig = ke.clone().symmetric_eigen().eigenvalues.min();
    vec![
        Record::new(id, "k_energy_asymmetry", None).value(max_asymmetry(ke)),
        Record::new(id, "k_energy_min_eigenvalue", None)
            .value(min_eig)
            .flag(if is_positive_definite(ke) { "" } else { "not-positive-definite" }),
        Record::new(id, "k_avg_energy_gap", None).value(gap),
    ]
}

pub fn solve_darcy(cfg: &ExperimentConfig, cell: &CellSolution) -> Result<DarcySolution> {
    let c = &cfg.sweep.compactness;
    let grid = MacGrid::new(cfg.geometry.dim, c.darcy_resolution, cfg.geometry.extent, Topology::Box)?;
    let f = cfg.forcing.sample_faces(&grid);
    solve_homogenized(&cell.k_avg, cfg.sweep.mu, &f, &grid, |_| 0.0, cfg.solver.darcy_tol)
}

fn solver_records(id: &str, eps: f64, label: &str, st: &FlowState) -> [Record; 2] {
    [
        Record::new(id, "momentum_residual", Some(eps)).value(st.stats.momentum_residual).flag(label),
        Record::new(id, "divergence_residual", Some(eps))
            .value(st.stats.divergence_residual)
            .flag(label),
    ]
}

fn push<T>(out: &mut Vec<Record>, base: Record, res: Result<T>, fill: impl FnOnce(Record, T) -> Record) {
    out.push(match res {
        Ok(v) => fill(base, v),
        Err(e) => base.error(&e),
    });
}

fn regularity_records(cfg: &ExperimentConfig, prep: &Prepared, dom: &PerforatedDomain, st: &FlowState) -> Vec<Record> {
    let id = &cfg.output.experiment_id;
    let s = &cfg.sweep;
    let eps = dom.epsilon;
    let big_r = cfg.geometry.extent;
    let f = &cfg.forcing;
    let ff = FlowFields::new(st, dom);
    let mut out = Vec::new();

    let ext = extend_pressure(st, dom);
    let chk = check_mean_property(&ext, &st.p, dom);
    out.push(
        Record::new(id, "pressure_mean_deviation", Some(eps))
            .big_r(big_r)
            .value(chk.deviation)
            .flag(if chk.applicable { "" } else { "not-applicable" }),
    );

    let tiled = match TiledCorrector::new(&prep.cell, dom) {
        Ok(t) => Some(t),
        Err(e) => {
            out.push(Record::new(id, "excess_u", Some(eps)).error(&e));
            None
        }
    };
    for r in radii(eps, big_r / 4.0, s.steps_per_octave) {
        let base = Record::new(id, "lipschitz", Some(eps)).r(r).big_r(big_r);
        push(&mut out, base, lipschitz_quantity(&ff, f, r, big_r, s.alpha), Record::ratio);
        let Some(tiled) = &tiled else { continue };
        match excess(&ff, tiled, f, s.mu, r, big_r, s.alpha) {
            Ok(rep) => {
                let row = |name: &str, v: f64| {
                    let mut rec = Record::new(id, name, Some(eps)).r(r).big_r(big_r).value(v);
                    rec.rhs = Some(rep.rhs);
                    rec.ratio = Some(v / rep.rhs);
                    rec
                };
                out.push(row("excess_u", rep.excess_u));
                out.push(row("excess_grad", rep.excess_grad));
                out.push(Record::new(id, "pressure_excess", Some(eps)).r(r).value(rep.excess_p));
            }
            Err(e) => out.push(Record::new(id, "excess_u", Some(eps)).r(r).error(&e)),
        }
        match crate::regularity::pressure_excess(&ff, tiled, f, r) {
            Ok(pe) => {
                out.push(Record::new(id, "pressure_affine", Some(eps)).r(r).value(pe.affine));
                out.push(Record::new(id, "pressure_oscillation", Some(eps)).r(r).value(pe.oscillation));
            }
            Err(e) => out.push(Record::new(id, "pressure_affine", Some(eps)).r(r).error(&e)),
        }
    }
    for name in ["excess_u", "excess_grad"] {
        if let Some(rec) = fit_record(id, name, Some(eps), &out, |r| r.r) {
            out.push(rec);
        }
    }

    for rr in radii(2.0 * eps, big_r / 2.0, 1) {
        let base = Record::new(id, "caccioppoli", Some(eps)).big_r(rr);
        push(&mut out, base, caccioppoli_ratio(&ff, rr), Record::ratio);
    }
    for q in std::iter::once(2.0).chain(s.q.iter().copied()) {
        let base = Record::new(id, "poincare", Some(eps)).q(q);
        push(&mut out, base, poincare_ratio(&ff, q, None), Record::ratio);
    }
    let g = g_field(&ff);
    for &q in &s.q {
        for rr in radii(eps, big_r / 2.0, 1) {
            let base = Record::new(id, "reverse_holder", Some(eps)).big_r(rr).q(q);
            push(&mut out, base, reverse_holder_ratio(&ff, &g, q, rr), Record::ratio);
        }
    }
    let (_, rescaled) = boundary_layer_scale(&ff);
    let deltas = match &s.deltas {
        Some(d) => d.iter().copied().filter(|d| *d > rescaled).collect(),
        None => default_deltas(rescaled),
    };
    for d in deltas {
        let base = Record::new(id, "boundary_layer", Some(eps)).delta(d);
        push(&mut out, base, boundary_layer_norm(&ff, f, d), Record::ratio);
    }
    if let Some(rec) = fit_record(id, "boundary_layer", Some(eps), &out, |r| r.delta) {
        out.push(rec);
    }
    out
}

/// Fit of `ratio` against the scale picked by `scale` over the matching
/// rows; `None` when fewer than three usable points exist.
fn fit_record(
    id: &str,
    quantity: &str,
    eps: Option<f64>,
    rows: &[Record],
    scale: impl Fn(&Record) -> Option<f64>,
) -> Option<Record> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.quantity == quantity && !r.is_error() && (eps.is_none() || r.epsilon == eps))
        .filter_map(|r| Some((scale(r)?, r.ratio?)))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let name = format!("{quantity}_fit");
    Some(match fit_rate(&pts) {
        Ok(fit) => Record::new(id, &name, eps).fit(&fit),
        Err(e) => Record::new(id, &name, eps).error(&e),
    })
}

/// `(∫_range |v|²)^{1/2}` for a cell density `v²`.
fn range_norm(grid: &MacGrid, density: &[f64], mask: Option<&[bool]>, range: &CellRange) -> f64 {
    grid.range_integral(density, mask, range).max(0.0).sqrt()
}

fn compactness_records(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    darcy: &DarcySolution,
    dom: &PerforatedDomain,
    st: &FlowState,
) -> Result<Vec<Record>> {
    let id = &cfg.output.experiment_id;
    let eps = dom.epsilon;
    let mu = cfg.sweep.mu;
    let inner = cfg.sweep.compactness.inner;
    let grid = &dom.grid;
    let range = grid.snap(&Cube::centered(inner))?;
    let tiled = TiledCorrector::new(&prep.cell, dom)?;

    let approx = first_order_approx(&tiled, darcy, dom, mu)?;
    let mut diff = extend_velocity(st, dom);
    diff.axpy(-1.0, &approx);
    let err_u = range_norm(grid, &grid.speed_squared(&diff), None, &range);

    let mut res = grid.velocity_gradient(&extend_velocity(st, dom));
    res.scale(eps);
    for a in 0..grid.dim() {
        for b in 0..grid.dim() {
            for (l, k) in grid.link_shape(a, b).iter().enumerate() {
                let x = grid.link_center(a, b, k);
                let mut s = 0.0;
                for (j, gj) in tiled.grad.iter().enumerate() {
                    let gv = gj.comps[a][b][l];
                    if gv != 0.0 {
                        s += gv * darcy.drive_at(j, x);
                    }
                }
                res.comps[a][b][l] -= s / mu;
            }
        }
    }
    let err_grad = range_norm(grid, &grid.gradient_cell_energy(&res), None, &range);

    let ext = extend_pressure(st, dom);
    let keep = ext.included();
    let cs = grid.cell_shape();
    let centered: Vec<f64> = (0..cs.len())
        .map(|l| ext.values[l] - darcy.pressure_at(grid.cell_center(cs.unravel(l))))
        .collect();
    let ones = vec![1.0; cs.len()];
    let mean = grid.range_integral(&centered, Some(&keep), &range) / grid.range_integral(&ones, Some(&keep), &range);
    let dev: Vec<f64> = centered.iter().map(|v| (v - mean).powi(2)).collect();
    let err_p = range_norm(grid, &dev, Some(&keep), &range);

    let row = |name: &str, v: f64| Record::new(id, name, Some(eps)).r(inner).value(v);
    Ok(vec![row("err_u", err_u), row("err_grad", err_grad), row("err_p", err_p)])
}

/// `‖v‖_{L^q}` of a cell field of magnitudes over the whole grid.
fn lq_norm(grid: &MacGrid, values: &[f64], q: f64) -> f64 {
    (values.iter().map(|v| v.abs().powf(q)).sum::<f64>() * grid.cell_volume()).powf(1.0 / q)
}

/// `F + ε div f` on the torus, with the magnitudes `|F|` and `|f|` at cell
/// centers restricted to the fluid.
fn wkp_forcing(cfg: &ExperimentConfig, dom: &PerforatedDomain) -> (FaceField, Vec<f64>, Vec<f64>) {
    let w = &cfg.sweep.wkp;
    let amp = cfg.wkp_amplitude();
    let d = cfg.geometry.dim;
    let k = std::f64::consts::PI * w.frequency;
    let c = w.div_amplitude;
    let eps = dom.epsilon;
    let big_f = |i: usize, x: [f64; 3]| amp[i] * (k * x[(i + 1) % d]).sin();
    let grid = &dom.grid;
    let faces = grid.sample_faces(|i, x| big_f(i, x) + eps * c * k * (k * x[i]).cos());
    let mut fmag = grid.zero_cells();
    let mut gmag = grid.zero_cells();
    for (l, idx) in grid.cell_shape().iter().enumerate() {
        if !dom.fluid_cells[l] {
            continue;
        }
        let x = grid.cell_center(idx);
        fmag[l] = (0..d).map(|i| big_f(i, x).powi(2)).sum::<f64>().sqrt();
        gmag[l] = c * (0..d).map(|i| (k * x[i]).sin().powi(2)).sum::<f64>().sqrt();
    }
    (faces, fmag, gmag)
}

fn torus_records(cfg: &ExperimentConfig, prep: &Prepared, eps: f64, parts: Parts) -> Result<Vec<Record>> {
    let id = &cfg.output.experiment_id;
    let mu = cfg.sweep.mu;
    let dom = torus_domain(cfg, &prep.mask, eps)?;
    let sys = assemble(&dom, mu, eps)?;
    let solver = StokesSolver::new(&sys, cfg.solver.options())?;
    let mut out = Vec::new();
    if parts.compactness {
        let fc = cfg.torus_forcing();
        let f = dom.grid.sample_faces(|a, _| fc[a]);
        let st = solver.solve(&f)?;
        out.extend(solver_records(id, eps, "torus", &st));
        let tiled = TiledCorrector::new(&prep.cell, &dom)?;
        let mut diff = extend_velocity(&st, &dom);
        let exact = tiled.combine(&fc, mu);
        diff.axpy(-1.0, &exact);
        let rel = diff.norm() / exact.norm();
        out.push(
            Record::new(id, "liouville", Some(eps))
                .big_r(dom.grid.extent())
                .value(rel),
        );
        if let Some(last) = out.last_mut() {
            last.rhs = Some(cfg.solver.tol);
            last.ratio = Some(rel / cfg.solver.tol);
        }
    }
    if parts.wkp {
        let (f, fmag, gmag) = wkp_forcing(cfg, &dom);
        let st = solver.solve(&f)?;
        out.extend(solver_records(id, eps, "wkp", &st));
        let grid = &dom.grid;
        let mut grad = grid.velocity_gradient(&st.u);
        grad.scale(eps);
        let gnorm: Vec<f64> = grid.gradient_cell_energy(&grad).iter().map(|v| v.sqrt()).collect();
        let unorm: Vec<f64> = grid.speed_squared(&st.u).iter().map(|v| v.sqrt()).collect();
        for &q in &cfg.sweep.wkp.q {
            let lhs = lq_norm(grid, &gnorm, q) + lq_norm(grid, &unorm, q);
            let rhs = lq_norm(grid, &fmag, q) + lq_norm(grid, &gmag, q);
            out.push(Record::new(id, "wkp", Some(eps)).q(q).ratio(crate::regularity::Ratio::new(lhs, rhs)));
        }
    }
    Ok(out)
}

fn run_epsilon(cfg: &ExperimentConfig, prep: &Prepared, darcy: Option<&DarcySolution>, eps: f64, parts: Parts) -> Vec<Record> {
    let id = &cfg.output.experiment_id;
    let mut out = Vec::new();
    if parts.regularity || parts.compactness {
        let solved = box_domain(cfg, &prep.mask, eps).and_then(|dom| {
            let sys = assemble(&dom, cfg.sweep.mu, eps)?;
            let f = cfg.forcing.sample_faces(&dom.grid);
            let st = stokes::solve(&sys, &f, cfg.solver.options())?;
            Ok((dom, st))
        });
        match solved {
            Ok((dom, st)) => {
                info!("epsilon {eps}: box solve took {} iterations", st.stats.outer_iterations);
                out.extend(solver_records(id, eps, "box", &st));
                if parts.regularity {
                    out.extend(regularity_records(cfg, prep, &dom, &st));
                }
                if let (true, Some(darcy)) = (parts.compactness, darcy) {
                    match compactness_records(cfg, prep, darcy, &dom, &st) {
                        Ok(rows) => out.extend(rows),
                        Err(e) => out.push(Record::new(id, "err_u", Some(eps)).error(&e)),
                    }
                }
            }
            Err(e) => out.push(Record::new(id, "solve", Some(eps)).error(&e)),
        }
    }
    if parts.compactness || parts.wkp {
        match torus_records(cfg, prep, eps, parts) {
            Ok(rows) => out.extend(rows),
            Err(e) => out.push(Record::new(id, "torus_solve", Some(eps)).error(&e)),
        }
    }
    out
}

/// Runs the selected parts for every `ε` of the config.
pub fn run(cfg: &ExperimentConfig, parts: Parts) -> Result<Vec<Record>> {
    cfg.validate()?;
    let id = &cfg.output.experiment_id;
    let prep = prepare(cfg)?;
    let mut out = cell_records(cfg, &prep.cell);
    let darcy = if parts.compactness {
        match solve_darcy(cfg, &prep.cell) {
            Ok(d) => {
                out.push(Record::new(id, "darcy_residual", None).value(d.residual()));
                Some(d)
            }
            Err(e) => {
                out.push(Record::new(id, "darcy_residual", None).error(&e));
                None
            }
        }
    } else {
        None
    };
    let one = |&eps: &f64| run_epsilon(cfg, &prep, darcy.as_ref(), eps, parts);
    #[cfg(feature = "parallel")]
    let per_eps: Vec<Vec<Record>> = cfg.sweep.epsilons.par_iter().map(one).collect();
    #[cfg(not(feature = "parallel"))]
    let per_eps: Vec<Vec<Record>> = cfg.sweep.epsilons.iter().map(one).collect();
    out.extend(per_eps.into_iter().flatten());
    if parts.regularity {
        for name in ["excess_u", "excess_grad"] {
            if let Some(rec) = fit_record(id, name, None, &out, |r| r.r) {
                out.push(rec);
            }
        }
    }
    Ok(out)
}

/// Regularity measurements over the `ε` list.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<Record>> {
    run(
        cfg,
        Parts {
            regularity: true,
            compactness: false,
            wkp: false,
        },
    )
}

/// Two-scale errors against the Darcy approximation, plus the torus
/// Liouville check.
pub fn compactness_study(cfg: &ExperimentConfig) -> Result<Vec<Record>> {
    run(
        cfg,
        Parts {
            regularity: false,
            compactness: true,
            wkp: false,
        },
    )
}

/// `W^{1,q}` ratios on the torus.
pub fn wkp_ratio_study(cfg: &ExperimentConfig) -> Result<Vec<Record>> {
    run(
        cfg,
        Parts {
            regularity: false,
            compactness: false,
            wkp: true,
        },
    )
}

/// Solver self-checks on a small grid: the iterative solution against the
/// dense KKT oracle for the configured forcing and three random forcings,
/// the permeability of the configured cell and the pressure-mean identity.
pub fn verify(cfg: &ExperimentConfig) -> Result<Vec<Record>> {
    cfg.validate()?;
    let id = &cfg.output.experiment_id;
    let mask = cfg.unit_cell()?;
    let cell = solve_cell_problem(&mask, cfg.geometry.resolution, cfg.solver.cell_options())?;
    let mut out = cell_records(cfg, &cell);

    // one period of width 1/2 resolved by 8 cells, on the box (-1/2, 1/2)^d
    let coarse = if mask.n >= 8 { mask_downsample(&mask, 8) } else { mask.clone() };
    let grid = MacGrid::new(cfg.geometry.dim, 2 * coarse.n, 0.5, Topology::Box)?;
    let dom = perforate(&coarse, 0.5, &grid)?;
    let sys = assemble(&dom, cfg.sweep.mu, 0.5)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.sweep.seed);
    let mut forcings = vec![("configured".to_string(), cfg.forcing.sample_faces(&grid))];
    for k in 0..3 {
        forcings.push((format!("random-{k}"), grid.sample_faces(|_, _| rng.gen_range(-1.0..1.0))));
    }
    // the comparison is only meaningful when the solve is tighter than the gate
    let opts = stokes::SolverOptions {
        tol: cfg.solver.tol.min(1e-2 * cfg.sweep.gates.oracle_tol),
        ..cfg.solver.options()
    };
    for (label, f) in forcings {
        let st = stokes::solve(&sys, &f, opts)?;
        let oracle = solve_dense_oracle(&sys, &f)?;
        let mut diff = st.u.clone();
        diff.axpy(-1.0, &oracle.u);
        let scale = oracle.u.norm();
        let rel = if scale == 0.0 { diff.norm() } else { diff.norm() / scale };
        out.push(Record::new(id, "oracle_error", Some(0.5)).value(rel).flag(label.as_str()));
        out.extend(solver_records(id, 0.5, &label, &st));
        let chk = check_mean_property(&extend_pressure(&st, &dom), &st.p, &dom);
        out.push(
            Record::new(id, "pressure_mean_deviation", Some(0.5))
                .big_r(0.5)
                .value(chk.deviation)
                .flag(if chk.applicable { "" } else { "not-applicable" }),
        );
    }
    Ok(out)
}

/// Coarsens a mask to `n` voxels per side; a coarse voxel is solid when any
/// of its fine voxels is.
fn mask_downsample(mask: &UnitCellMask, n: usize) -> UnitCellMask {
    if !mask.n.is_multiple_of(n) {
        return mask.clone();
    }
    let f = mask.n / n;
    let coarse_shape = crate::grid::Shape {
        dims: [n, if mask.dim > 1 { n } else { 1 }, if mask.dim > 2 { n } else { 1 }],
    };
    let fine = mask.shape();
    let mut solid = vec![false; coarse_shape.len()];
    for (l, idx) in fine.iter().enumerate() {
        if mask.solid[l] {
            let mut c = idx;
            for v in c.iter_mut().take(mask.dim) {
                *v /= f;
            }
            solid[coarse_shape.linear(c)] = true;
        }
    }
    UnitCellMask { dim: mask.dim, n, solid }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    NoData,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    pub name: &'static str,
    pub status: Status,
    pub detail: String,
}

fn gate(name: &'static str, ok: bool, detail: String) -> Gate {
    Gate {
        name,
        status: if ok { Status::Pass } else { Status::Fail },
        detail,
    }
}

fn no_data(name: &'static str) -> Gate {
    Gate {
        name,
        status: Status::NoData,
        detail: "no data".into(),
    }
}

/// `max/min`, with `0/0` read as 1.
pub fn spread(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if max <= 0.0 {
        1.0
    } else if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn key(v: f64) -> u64 {
    v.to_bits()
}

/// Per-`ε` maximum of `ratio` over rows of `quantity` (optionally at one `q`).
fn per_epsilon_max(records: &[Record], quantity: &str, q: Option<f64>) -> BTreeMap<u64, (f64, f64)> {
    let mut m: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.quantity == quantity && !r.is_error() && (q.is_none() || r.q == q)) {
        if let (Some(e), Some(v)) = (r.epsilon, r.ratio) {
            let entry = m.entry(key(e)).or_insert((e, f64::NEG_INFINITY));
            entry.1 = entry.1.max(v);
        }
    }
    m
}

fn spread_gate(name: &'static str, records: &[Record], quantity: &str, q: Option<f64>, limit: f64) -> Gate {
    let m = per_epsilon_max(records, quantity, q);
    if m.is_empty() {
        return no_data(name);
    }
    let maxima: Vec<f64> = m.values().map(|v| v.1).collect();
    let sp = spread(&maxima);
    let bound = maxima.iter().copied().fold(0.0, f64::max);
    let qs = q.map(|q| format!(" q={q}")).unwrap_or_default();
    gate(
        name,
        bound.is_finite() && sp < limit,
        format!("{quantity}{qs}: max ratio {bound:.4e}, spread {sp:.3} (limit {limit})"),
    )
}

/// Spread across `ε` of `ratio` at each shared scale `R`; the worst one
/// decides. The per-`ε` maximum is reported alongside since the admissible
/// radii depend on `ε`.
fn matched_spread_gate(name: &'static str, records: &[Record], quantity: &str, limit: f64) -> Gate {
    let mut by_scale: BTreeMap<u64, (f64, Vec<f64>)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.quantity == quantity && !r.is_error()) {
        if let (Some(_), Some(s), Some(v)) = (r.epsilon, r.big_r, r.ratio) {
            by_scale.entry(key(s)).or_insert((s, Vec::new())).1.push(v);
        }
    }
    if by_scale.is_empty() {
        return no_data(name);
    }
    let bound = by_scale.values().flat_map(|(_, v)| v.iter().copied()).fold(0.0, f64::max);
    let (mut worst, mut at) = (1.0, None);
    for (s, v) in by_scale.values().filter(|(_, v)| v.len() >= 2) {
        let sp = spread(v);
        if sp >= worst {
            worst = sp;
            at = Some(*s);
        }
    }
    let maxima: Vec<f64> = per_epsilon_max(records, quantity, None).values().map(|v| v.1).collect();
    let at = at.map(|s| format!(" at R={s}")).unwrap_or_default();
    gate(
        name,
        bound.is_finite() && worst < limit,
        format!(
            "{quantity}: max ratio {bound:.4e}, spread across epsilon {worst:.3}{at} (limit {limit}); spread of per-epsilon maxima {:.3}",
            spread(&maxima)
        ),
    )
}

fn distinct_q(records: &[Record], quantity: &str) -> Vec<f64> {
    let mut qs: Vec<f64> = records.iter().filter(|r| r.quantity == quantity).filter_map(|r| r.q).collect();
    qs.sort_by(f64::total_cmp);
    qs.dedup();
    qs
}

fn fit_gate(name: &'static str, records: &[Record], quantities: &[&str], g: &GateConfig, min_slope: f64) -> Gate {
    let mut details = Vec::new();
    let mut ok = true;
    let mut any = false;
    for q in quantities {
        let fits: Vec<&Record> = records.iter().filter(|r| r.quantity == format!("{q}_fit")).collect();
        let mut per_eps = Vec::new();
        for f in &fits {
            any = true;
            if f.is_error() {
                ok = false;
                details.push(format!("{q}: {}", f.flag));
                continue;
            }
            let (slope, r2) = (f.slope.unwrap_or(f64::NAN), f.r2.unwrap_or(f64::NAN));
            ok &= slope >= min_slope && r2 >= g.min_r2;
            let at = f.epsilon.map(|e| format!("eps={e}")).unwrap_or_else(|| "pooled".into());
            details.push(format!("{q} {at}: slope {slope:.3}, r2 {r2:.3}"));
            if f.epsilon.is_some() {
                per_eps.push(slope);
            }
        }
        if per_eps.len() >= 2 {
            let sp = spread(&per_eps);
            ok &= sp < g.spread;
            details.push(format!("{q}: slope spread {sp:.3}"));
        }
    }
    if !any {
        return no_data(name);
    }
    gate(name, ok, details.join("; "))
}

fn bound_gate(name: &'static str, records: &[Record], quantity: &str, value: impl Fn(&Record) -> Option<f64>, limit: f64) -> Gate {
    let rows: Vec<&Record> = records.iter().filter(|r| r.quantity == quantity).collect();
    if rows.is_empty() {
        return no_data(name);
    }
    let worst = rows.iter().map(|r| value(r).unwrap_or(f64::INFINITY)).fold(0.0, f64::max);
    gate(name, worst <= limit, format!("{quantity}: worst {worst:.3e} (limit {limit:.1e})"))
}

fn compactness_gate(records: &[Record], g: &GateConfig) -> Gate {
    let series = |q: &str| -> Vec<(f64, f64)> {
        let mut v: Vec<(f64, f64)> = records
            .iter()
            .filter(|r| r.quantity == q && !r.is_error())
            .filter_map(|r| Some((r.epsilon?, r.lhs?)))
            .collect();
        v.sort_by(|a, b| b.0.total_cmp(&a.0));
        v
    };
    let (u, p) = (series("err_u"), series("err_p"));
    if u.len() < 2 || p.len() < 2 {
        return no_data("compactness");
    }
    let decreasing = |s: &[(f64, f64)]| s.windows(2).all(|w| w[1].1 < w[0].1);
    let ratio = u.last().unwrap().1 / u[0].1;
    let fmt = |s: &[(f64, f64)]| s.iter().map(|(_, v)| format!("{v:.4e}")).collect::<Vec<_>>().join(" > ");
    gate(
        "compactness",
        decreasing(&u) && decreasing(&p) && ratio <= g.compactness_ratio,
        format!("err_u {}; err_p {}; err_u ratio {ratio:.3} (limit {})", fmt(&u), fmt(&p), g.compactness_ratio),
    )
}

/// Evaluates every gate from the records alone.
pub fn evaluate_gates(records: &[Record], g: &GateConfig) -> Vec<Gate> {
    let mut gates = Vec::new();
    let errors: Vec<&Record> = records.iter().filter(|r| r.is_error()).collect();
    gates.push(gate(
        "errors",
        errors.is_empty(),
        match errors.first() {
            None => "no failed measurements".into(),
            Some(r) => format!("{} failed rows, first: {} at eps={:?}: {}", errors.len(), r.quantity, r.epsilon, r.flag),
        },
    ));
    gates.push(bound_gate("solver-divergence", records, "divergence_residual", |r| r.lhs, g.divergence_tol));
    gates.push(bound_gate("oracle", records, "oracle_error", |r| r.lhs, g.oracle_tol));
    let perm_rows: Vec<&Record> = records.iter().filter(|r| r.quantity.starts_with("k_energy")).collect();
    gates.push(if perm_rows.is_empty() {
        no_data("permeability")
    } else {
        let asym = records.iter().find(|r| r.quantity == "k_energy_asymmetry").and_then(|r| r.lhs);
        let eig = records.iter().find(|r| r.quantity == "k_energy_min_eigenvalue").and_then(|r| r.lhs);
        let asym = asym.unwrap_or(f64::INFINITY);
        let eig = eig.unwrap_or(f64::NAN);
        gate(
            "permeability",
            asym <= g.asymmetry_tol && eig > 0.0,
            format!("asymmetry {asym:.2e}, smallest eigenvalue {eig:.4e}"),
        )
    });
    let mean_rows: Vec<Record> = records
        .iter()
        .filter(|r| r.quantity == "pressure_mean_deviation" && r.flag.is_empty())
        .cloned()
        .collect();
    gates.push(bound_gate("pressure-mean", &mean_rows, "pressure_mean_deviation", |r| r.lhs, g.mean_tol));
    gates.push(bound_gate("liouville", records, "liouville", |r| r.ratio, g.liouville_factor));
    gates.push(spread_gate("lipschitz", records, "lipschitz", None, g.spread));
    gates.push(fit_gate("excess-decay", records, &["excess_u", "excess_grad"], g, g.min_slope));
    gates.push(matched_spread_gate("caccioppoli", records, "caccioppoli", g.spread));
    let pq = distinct_q(records, "poincare");
    if pq.is_empty() {
        gates.push(no_data("poincare"));
    }
    for q in pq {
        gates.push(spread_gate("poincare", records, "poincare", Some(q), g.spread));
    }
    gates.push(fit_gate("boundary-layer", records, &["boundary_layer"], g, f64::MIN_POSITIVE));
    gates.push(compactness_gate(records, g));
    let wq = distinct_q(records, "wkp");
    if wq.is_empty() {
        gates.push(no_data("wkp"));
    }
    for q in wq {
        gates.push(spread_gate("wkp", records, "wkp", Some(q), g.spread));
    }
    gates
}

pub fn all_passed(gates: &[Gate]) -> bool {
    gates.iter().all(|g| g.status != Status::Fail)
}

/// Markdown summary with one line per gate.
pub fn report(records: &[Record], cfg: &ExperimentConfig) -> String {
    let gates = evaluate_gates(records, &cfg.sweep.gates);
    let mut s = String::new();
    let _ = writeln!(s, "# Report: {}\n", cfg.output.experiment_id);
    if records.is_empty() {
        let _ = writeln!(s, "no data\n");
    }
    let eps: Vec<String> = cfg.sweep.epsilons.iter().map(|e| e.to_string()).collect();
    let _ = writeln!(
        s,
        "epsilons: {}; resolution {}; extent {}; {} records\n",
        eps.join(", "),
        cfg.geometry.resolution,
        cfg.geometry.extent,
        records.len()
    );
    let _ = writeln!(s, "| gate | status | detail |\n|---|---|---|");
    for g in &gates {
        let st = match g.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::NoData => "no data",
        };
        let _ = writeln!(s, "| {} | {} | {} |", g.name, st, g.detail);
    }
    let _ = writeln!(s, "\noverall: {}", if all_passed(&gates) { "PASS" } else { "FAIL" });
    s
}

pub fn write_csv(records: &[Record], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in records {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<Record>> {
    let mut rd = csv::Reader::from_path(path).map_err(csv_err)?;
    rd.deserialize().map(|r| r.map_err(csv_err)).collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(format!("csv: {e}"))
}

/// Writes the CSV and its report, returning the gates.
pub fn write_outputs(records: &[Record], cfg: &ExperimentConfig, csv_path: &Path, report_path: &Path) -> Result<Vec<Gate>> {
    write_csv(records, csv_path)?;
    std::fs::write(report_path, report(records, cfg))?;
    Ok(evaluate_gates(records, &cfg.sweep.gates))
}
