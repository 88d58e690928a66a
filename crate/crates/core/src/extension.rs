//! Extensions of the velocity and pressure from the fluid part to all of `Q_R`.
//!
//! The velocity is extended by zero. The pressure is extended into each solid
//! obstacle copy by the mean of `p` over the fluid part of that copy's period
//! cell, which makes the mean of the extension over any whole period equal to
//! the fluid mean there.

use std::collections::BTreeMap;

use crate::geometry::PerforatedDomain;
use crate::grid::{FaceField, MAX_DIM};
use crate::stokes::FlowState;

/// Fluid-face values, zero on every other face.
pub fn extend_velocity(state: &FlowState, domain: &PerforatedDomain) -> FaceField {
    let mut u = state.u.clone();
    for (comp, mask) in u.comps.iter_mut().zip(&domain.fluid_faces) {
        for (v, fl) in comp.iter_mut().zip(mask) {
            if !fl {
                *v = 0.0;
            }
        }
    }
    u
}

#[derive(Debug, Clone)]
pub struct ExtendedPressure {
    pub values: Vec<f64>,
    /// Solid cells of obstacle copies whose period cell is cut by `∂Q_R`.
    /// They hold the partial fluid mean and must be left out of norms.
    pub excluded: Vec<bool>,
    pub interior_copies: usize,
    pub partial_copies: usize,
}

impl ExtendedPressure {
    pub fn included(&self) -> Vec<bool> {
        self.excluded.iter().map(|e| !e).collect()
    }
}

#[derive(Default, Clone, Copy)]
struct CopyStats {
    sum: Sum,
    fluid: usize,
    cells: usize,
}

/// Compensated (Neumaier) sum so exact identities survive large grids.
#[derive(Default, Clone, Copy, Debug)]
pub struct Sum {
    s: f64,
    c: f64,
}

impl Sum {
    pub fn add(&mut self, x: f64) {
        let t = self.s + x;
        if self.s.abs() >= x.abs() {
            self.c += (self.s - t) + x;
        } else {
            self.c += (x - t) + self.s;
        }
        self.s = t;
    }

    pub fn value(&self) -> f64 {
        self.s + self.c
    }
}

impl FromIterator<f64> for Sum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = Sum::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}

fn copy_table(p: &[f64], domain: &PerforatedDomain) -> BTreeMap<[i64; MAX_DIM], CopyStats> {
    let cs = domain.grid.cell_shape();
    let mut table: BTreeMap<[i64; MAX_DIM], CopyStats> = BTreeMap::new();
    for (l, c) in cs.iter().enumerate() {
        let (_, copy) = domain.locate_cell(c);
        let e = table.entry(copy).or_default();
        e.cells += 1;
        if domain.fluid_cells[l] {
            e.sum.add(p[l]);
            e.fluid += 1;
        }
    }
    table
}

fn whole_period_cells(domain: &PerforatedDomain) -> usize {
    domain.period_cells().pow(domain.grid.dim() as u32)
}

/// The extension `P_ε` of the pressure of `state`.
pub fn extend_pressure(state: &FlowState, domain: &PerforatedDomain) -> ExtendedPressure {
    let cs = domain.grid.cell_shape();
    let table = copy_table(&state.p, domain);
    let full = whole_period_cells(domain);
    let mut values = state.p.clone();
    let mut excluded = vec![false; cs.len()];
    for (l, c) in cs.iter().enumerate() {
        if domain.fluid_cells[l] {
            continue;
        }
        let (_, copy) = domain.locate_cell(c);
        let st = &table[&copy];
        values[l] = if st.fluid > 0 { st.sum.value() / st.fluid as f64 } else { 0.0 };
        excluded[l] = st.cells != full;
    }
    let interior_copies = table.values().filter(|s| s.cells == full).count();
    ExtendedPressure {
        values,
        excluded,
        interior_copies,
        partial_copies: table.len() - interior_copies,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanCheck {
    /// `R ∈ εℕ`, so the identity is expected to hold exactly.
    pub applicable: bool,
    pub extended_mean: f64,
    pub fluid_mean: f64,
    pub deviation: f64,
}

impl MeanCheck {
    pub fn holds(&self, tol: f64) -> bool {
        self.applicable && self.deviation <= tol
    }
}

/// Compares `⨏_{Q_R} P_ε` with `⨏_{Q_R^ε} p`.
pub fn check_mean_property(ext: &ExtendedPressure, p: &[f64], domain: &PerforatedDomain) -> MeanCheck {
    let n = ext.values.len();
    let extended_mean = ext.values.iter().copied().collect::<Sum>().value() / n as f64;
    let (fluid_sum, fluid_n) = p
        .iter()
        .zip(&domain.fluid_cells)
        .filter(|(_, f)| **f)
        .fold((Sum::default(), 0usize), |(mut s, k), (v, _)| {
            s.add(*v);
            (s, k + 1)
        });
    let fluid_mean = if fluid_n == 0 { 0.0 } else { fluid_sum.value() / fluid_n as f64 };
    MeanCheck {
        applicable: domain.extent_is_period_multiple(),
        extended_mean,
        fluid_mean,
        deviation: (extended_mean - fluid_mean).abs(),
    }
}

/// Per interior copy: `(⨏_{ε(Y+z)} P_ε, ⨏_{ε(Y_f+z)} p)`.
pub fn copy_means(ext: &ExtendedPressure, p: &[f64], domain: &PerforatedDomain) -> Vec<(f64, f64)> {
    let cs = domain.grid.cell_shape();
    let full = whole_period_cells(domain);
    let fluid = copy_table(p, domain);
    let mut all: BTreeMap<[i64; MAX_DIM], Sum> = BTreeMap::new();
    for (l, c) in cs.iter().enumerate() {
        all.entry(domain.locate_cell(c).1).or_default().add(ext.values[l]);
    }
    fluid
        .iter()
        .filter(|(_, s)| s.cells == full)
        .map(|(k, s)| (all[k].value() / full as f64, s.sum.value() / s.fluid as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_obstacle, perforate, ObstacleSpec};
    use crate::grid::{MacGrid, Topology};
    use crate::stokes::SolveStats;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn domain(extent: f64, eps: f64) -> PerforatedDomain {
        let mask = make_obstacle(&ObstacleSpec::CenteredSquare { side: 0.5 }, 2, 8).unwrap();
        let m = (1.0 / eps).round() as usize;
        let grid = MacGrid::new(2, 8 * m, extent, Topology::Box).unwrap();
        perforate(&mask, eps, &grid).unwrap()
    }

    fn state_with_pressure(dom: &PerforatedDomain, p: Vec<f64>) -> FlowState {
        let g = &dom.grid;
        FlowState {
            grid: g.clone(),
            u: g.sample_faces(|a, x| x[a] + 1.0),
            p,
            f: g.zero_faces(),
            epsilon: dom.epsilon,
            mu: 1.0,
            stats: SolveStats::default(),
        }
    }

    fn random_pressure(dom: &PerforatedDomain, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        dom.fluid_cells.iter().map(|f| if *f { rng.gen_range(-3.0..3.0) } else { 0.0 }).collect()
    }

    #[test]
    fn velocity_extension_zeroes_non_fluid_faces() {
        let dom = domain(1.0, 0.25);
        let st = state_with_pressure(&dom, dom.grid.zero_cells());
        let u = extend_velocity(&st, &dom);
        for a in 0..2 {
            for ((v, w), fl) in u.comps[a].iter().zip(&st.u.comps[a]).zip(&dom.fluid_faces[a]) {
                assert_eq!(*v, if *fl { *w } else { 0.0 });
            }
        }
        let mut again = st.clone();
        again.u = u.clone();
        assert_eq!(extend_velocity(&again, &dom), u);
    }

    #[test]
    fn constant_pressure_extends_to_constant() {
        let dom = domain(1.0, 0.25);
        let p = dom.fluid_cells.iter().map(|f| if *f { 2.5 } else { 0.0 }).collect();
        let ext = extend_pressure(&state_with_pressure(&dom, p), &dom);
        assert!(ext.values.iter().all(|v| (v - 2.5).abs() < 1e-15));
        assert_eq!(ext.interior_copies, 64);
        assert_eq!(ext.partial_copies, 0);
    }

    #[test]
    fn mean_property_on_whole_periods() {
        let dom = domain(1.0, 0.25);
        let p = random_pressure(&dom, 4);
        let ext = extend_pressure(&state_with_pressure(&dom, p.clone()), &dom);
        let chk = check_mean_property(&ext, &p, &dom);
        assert!(chk.applicable);
        assert!(chk.deviation <= 1e-14, "{}", chk.deviation);
        for (a, b) in copy_means(&ext, &p, &dom) {
            assert!((a - b).abs() <= 1e-14);
        }
    }

    #[test]
    fn mean_property_not_asserted_off_lattice() {
        // R = 0.875 is not a multiple of 1/4
        let mask = make_obstacle(&ObstacleSpec::CenteredSquare { side: 0.5 }, 2, 8).unwrap();
        let grid = MacGrid::new(2, 32, 0.875, Topology::Box).unwrap();
        let dom = perforate(&mask, 0.25, &grid).unwrap();
        let p = random_pressure(&dom, 1);
        let ext = extend_pressure(&state_with_pressure(&dom, p.clone()), &dom);
        let chk = check_mean_property(&ext, &p, &dom);
        assert!(!chk.applicable);
        assert!(!chk.holds(1.0));
        assert!(ext.partial_copies > 0);
        assert!(ext.excluded.iter().any(|e| *e));
    }

    #[test]
    fn shift_by_constant_commutes() {
        let dom = domain(1.0, 0.5);
        let p = random_pressure(&dom, 9);
        let shifted: Vec<f64> = p.iter().zip(&dom.fluid_cells).map(|(v, f)| if *f { v + 1.25 } else { 0.0 }).collect();
        let a = extend_pressure(&state_with_pressure(&dom, p), &dom);
        let b = extend_pressure(&state_with_pressure(&dom, shifted), &dom);
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((y - x - 1.25).abs() < 1e-13);
        }
    }

    #[test]
    fn compensated_sum() {
        let s: Sum = [1e16, 1.0, -1e16].into_iter().collect();
        assert_eq!(s.value(), 1.0);
    }
}
