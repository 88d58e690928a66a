//! Randomized invariants of the discretization, the solver and the
//! measurements.

use std::sync::OnceLock;

use proptest::prelude::*;

use darcylab::cell::{solve_cell_problem, CellSolution, TiledCorrector};
use darcylab::config::GateConfig;
use darcylab::experiments::{evaluate_gates, read_csv, write_csv, Record};
use darcylab::extension::{extend_pressure, extend_velocity};
use darcylab::forcing::Forcing;
use darcylab::geometry::{make_obstacle, perforate, ObstacleSpec, PerforatedDomain, UnitCellMask};
use darcylab::grid::{Cube, FaceField, MacGrid, Topology};
use darcylab::regularity::{
    caccioppoli_ratio, excess, excess_grad_for, excess_u_for, fit_rate, lipschitz_quantity, poincare_ratio, FlowFields,
};
use darcylab::stokes::{assemble, solve, FlowState, SaddleSystem, SolverOptions};

fn square(side: f64, n: usize) -> UnitCellMask {
    make_obstacle(&ObstacleSpec::CenteredSquare { side }, 2, n).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
}

/// Box `(-1/2, 1/2)^2`, `ε = 1/4`, eight cells per period.
fn small_domain() -> &'static PerforatedDomain {
    static DOM: OnceLock<PerforatedDomain> = OnceLock::new();
    DOM.get_or_init(|| {
        let grid = MacGrid::new(2, 32, 0.5, Topology::Box).unwrap();
        perforate(&square(0.5, 8), 0.25, &grid).unwrap()
    })
}

fn small_system() -> &'static SaddleSystem {
    static SYS: OnceLock<SaddleSystem> = OnceLock::new();
    SYS.get_or_init(|| assemble(small_domain(), 1.0, 0.25).unwrap())
}

/// Corrector data and a solved flow on `Q_1` at `ε = 1/4`.
struct Fixture {
    cell: CellSolution,
    dom: PerforatedDomain,
    forcing: Forcing,
    state: FlowState,
}

fn fixture() -> &'static Fixture {
    static FX: OnceLock<Fixture> = OnceLock::new();
    FX.get_or_init(|| {
        let cell = solve_cell_problem(&square(0.5, 8), 8, SolverOptions::with_tol(1e-11)).unwrap();
        let grid = MacGrid::new(2, 32, 1.0, Topology::Box).unwrap();
        let dom = perforate(&cell.domain.obstacle, 0.25, &grid).unwrap();
        let forcing = Forcing::Affine {
            value: vec![0.3, 0.0],
            gradient: vec![vec![0.0, -1.0], vec![1.0, 0.0]],
        };
        let sys = assemble(&dom, 1.0, 0.25).unwrap();
        let state = solve(&sys, &forcing.sample_faces(&grid), SolverOptions::with_tol(1e-10)).unwrap();
        Fixture { cell, dom, forcing, state }
    })
}

fn face_field(grid: &MacGrid, seed: &[f64]) -> FaceField {
    let mut k = 0;
    grid.sample_faces(|_, _| {
        k += 1;
        seed[k % seed.len()] * ((k * 7919) % 13) as f64 / 13.0
    })
}

fn grid_strategy() -> impl Strategy<Value = MacGrid> {
    (2usize..=4, prop_oneof![Just(Topology::Box), Just(Topology::Periodic)])
        .prop_map(|(k, t)| MacGrid::new(2, 2 * k, 1.0, t).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn divergence_is_minus_adjoint_of_gradient(
        grid in grid_strategy(),
        us in prop::collection::vec(-1.0f64..1.0, 1..40),
        ps in prop::collection::vec(-1.0f64..1.0, 1..40),
    ) {
        let mut u = face_field(&grid, &us);
        // box-boundary faces closed
        for a in 0..2 {
            for (l, f) in grid.face_shape(a).iter().enumerate() {
                if grid.face_cells(a, f).iter().any(Option::is_none) {
                    u.comps[a][l] = 0.0;
                }
            }
        }
        let p: Vec<f64> = (0..grid.num_cells()).map(|i| ps[i % ps.len()] + 0.01 * i as f64).collect();
        let lhs = dot(&grid.divergence(&u), &p);
        let gp = grid.pressure_gradient(&p);
        let rhs: f64 = (0..2).map(|a| dot(&u.comps[a], &gp.comps[a])).sum();
        prop_assert!((lhs + rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn affine_fields_are_differentiated_exactly(
        k in 2usize..=4,
        a in prop::array::uniform4(-2.0f64..2.0),
        b in prop::array::uniform2(-2.0f64..2.0),
        c in prop::array::uniform2(-2.0f64..2.0),
    ) {
        let grid = MacGrid::new(2, 2 * k, 1.0, Topology::Box).unwrap();
        let u = grid.sample_faces(|i, x| b[i] + a[2 * i] * x[0] + a[2 * i + 1] * x[1]);
        let trace = a[0] + a[3];
        for d in grid.divergence(&u) {
            prop_assert!((d - trace).abs() <= 1e-12 * (1.0 + trace.abs()));
        }
        let p = grid.sample_cells(|x| c[0] * x[0] + c[1] * x[1]);
        let g = grid.pressure_gradient(&p);
        for (i, ci) in c.iter().enumerate() {
            for (l, f) in grid.face_shape(i).iter().enumerate() {
                if grid.face_cells(i, f).iter().all(Option::is_some) {
                    prop_assert!((g.comps[i][l] - ci).abs() <= 1e-12 * (1.0 + ci.abs()));
                }
            }
        }
    }

    #[test]
    fn box_average_is_homogeneous_and_monotone(
        vals in prop::collection::vec(-3.0f64..3.0, 64),
        bump in prop::collection::vec(0.0f64..1.0, 64),
        lambda in -4.0f64..4.0,
        half in 0.1f64..1.0,
        q in 1.0f64..5.0,
    ) {
        let grid = MacGrid::new(2, 4, 1.0, Topology::Box).unwrap();
        let cube = Cube::centered(half);
        let base = grid.box_average(&vals, &cube, q).unwrap();
        let scaled: Vec<f64> = vals.iter().map(|v| lambda * v).collect();
        prop_assert!(close(grid.box_average(&scaled, &cube, q).unwrap(), lambda.abs() * base, 1e-12));
        let bigger: Vec<f64> = vals.iter().zip(&bump).map(|(v, b)| v.abs() + b).collect();
        prop_assert!(grid.box_average(&bigger, &cube, q).unwrap() >= base * (1.0 - 1e-14));
    }

    #[test]
    fn periodic_mask_is_invariant_under_period_shift(m in 1usize..=3, side in 0.125f64..0.75) {
        let n = 8;
        let eps = 1.0 / (2 * m) as f64;
        let grid = MacGrid::new(2, n * 2 * m, 0.5, Topology::Periodic).unwrap();
        let dom = perforate(&square(side, n), eps, &grid).unwrap();
        let cs = grid.cell_shape();
        for (l, c) in cs.iter().enumerate() {
            for axis in 0..2 {
                let mut s = c;
                s[axis] = (s[axis] + n) % cs.dims[axis];
                prop_assert_eq!(dom.fluid_cells[l], dom.fluid_cells[cs.linear(s)]);
            }
        }
    }

    #[test]
    fn growing_the_obstacle_never_adds_fluid_faces(a in 0.125f64..0.75, grow in 0.0f64..0.2) {
        let grid = MacGrid::new(2, 16, 1.0, Topology::Box).unwrap();
        let small = perforate(&square(a, 8), 0.5, &grid).unwrap();
        let large = perforate(&square((a + grow).min(0.75), 8), 0.5, &grid).unwrap();
        for axis in 0..2 {
            for (s, l) in small.fluid_faces[axis].iter().zip(&large.fluid_faces[axis]) {
                prop_assert!(*s || !*l);
            }
        }
    }

    #[test]
    fn cells_next_to_period_hyperplanes_are_fluid(side in 0.125f64..0.75, m in 1usize..=4) {
        let n = 8;
        let eps = 1.0 / m as f64;
        let grid = MacGrid::new(2, n * m, 1.0, Topology::Box).unwrap();
        let dom = perforate(&square(side, n), eps, &grid).unwrap();
        let cs = grid.cell_shape();
        for (l, c) in cs.iter().enumerate() {
            if c[0] % n == 0 || c[0] % n == n - 1 || c[1] % n == 0 || c[1] % n == n - 1 {
                prop_assert!(dom.fluid_cells[l]);
            }
        }
    }

    #[test]
    fn fit_rate_recovers_exact_power_laws(
        c in 0.01f64..100.0,
        slope in -3.0f64..3.0,
        start in 0.001f64..0.1,
        ratio in 1.2f64..3.0,
        len in 3usize..8,
    ) {
        let pts: Vec<(f64, f64)> = (0..len)
            .map(|k| {
                let s = start * ratio.powi(k as i32);
                (s, c * s.powf(slope))
            })
            .collect();
        let fit = fit_rate(&pts).unwrap();
        prop_assert!((fit.slope - slope).abs() <= 1e-9 * (1.0 + slope.abs()));
        prop_assert!((fit.intercept - c.ln()).abs() <= 1e-8 * (1.0 + c.ln().abs()));
        if slope.abs() > 1e-6 {
            prop_assert!(fit.r2 >= 1.0 - 1e-9);
        }
    }

    #[test]
    fn gates_are_reproduced_from_csv(
        values in prop::collection::vec((0usize..4, 1usize..4, 1e-12f64..10.0, 1e-3f64..1.0), 1..30),
    ) {
        let names = ["lipschitz", "poincare", "divergence_residual", "err_u"];
        let records: Vec<Record> = values
            .iter()
            .map(|&(kind, e, v, r)| {
                let mut rec = Record::new("prop", names[kind], Some(1.0 / (1 << e) as f64));
                rec.r = Some(r);
                rec.q = (kind == 1).then_some(2.0);
                rec.lhs = Some(v);
                rec.rhs = Some(1.0);
                rec.ratio = Some(v);
                rec
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_csv(&records, &path).unwrap();
        let back = read_csv(&path).unwrap();
        prop_assert_eq!(&back, &records);
        let g = GateConfig::default();
        prop_assert_eq!(evaluate_gates(&back, &g), evaluate_gates(&records, &g));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn solve_is_linear(
        s1 in prop::collection::vec(-1.0f64..1.0, 4..12),
        s2 in prop::collection::vec(-1.0f64..1.0, 4..12),
        alpha in -2.0f64..2.0,
    ) {
        let sys = small_system();
        let grid = sys.grid();
        let opts = SolverOptions::with_tol(1e-12);
        let (f1, f2) = (face_field(grid, &s1), face_field(grid, &s2));
        let mut f = f1.clone();
        f.scale(alpha);
        f.axpy(1.0, &f2);
        let u1 = solve(sys, &f1, opts).unwrap().u;
        let u2 = solve(sys, &f2, opts).unwrap().u;
        let mut combo = u1.clone();
        combo.scale(alpha);
        combo.axpy(1.0, &u2);
        let mut diff = solve(sys, &f, opts).unwrap().u;
        diff.axpy(-1.0, &combo);
        prop_assert!(diff.norm() <= 1e-9 * (1.0 + combo.norm()));
    }

    #[test]
    fn energy_equals_work(seed in prop::collection::vec(-1.0f64..1.0, 4..12)) {
        let sys = small_system();
        let f = face_field(sys.grid(), &seed);
        let st = solve(sys, &f, SolverOptions::with_tol(1e-12)).unwrap();
        let work = dot(&sys.restrict(&f), &sys.restrict(&st.u)) * sys.grid().cell_volume();
        prop_assert!(close(sys.energy(&st.u), work, 1e-8));
    }

    #[test]
    fn pressure_extension_is_linear_and_shift_covariant(
        s1 in prop::collection::vec(-1.0f64..1.0, 4..12),
        s2 in prop::collection::vec(-1.0f64..1.0, 4..12),
        a in -2.0f64..2.0,
        shift in -5.0f64..5.0,
    ) {
        let fx = fixture();
        let with_p = |p: Vec<f64>| FlowState { p, ..fx.state.clone() };
        let n = fx.state.p.len();
        let fluid = &fx.dom.fluid_cells;
        let field = |s: &[f64]| -> Vec<f64> {
            (0..n).map(|i| if fluid[i] { s[i % s.len()] + 1e-3 * (i % 17) as f64 } else { 0.0 }).collect()
        };
        let (p1, p2) = (field(&s1), field(&s2));
        let combo: Vec<f64> = p1.iter().zip(&p2).map(|(x, y)| a * x + y).collect();
        let e1 = extend_pressure(&with_p(p1.clone()), &fx.dom).values;
        let e2 = extend_pressure(&with_p(p2), &fx.dom).values;
        let ec = extend_pressure(&with_p(combo), &fx.dom).values;
        for i in 0..n {
            prop_assert!((ec[i] - (a * e1[i] + e2[i])).abs() <= 1e-12);
        }
        let shifted: Vec<f64> = p1.iter().zip(fluid).map(|(v, f)| if *f { v + shift } else { 0.0 }).collect();
        let es = extend_pressure(&with_p(shifted), &fx.dom).values;
        for i in 0..n {
            prop_assert!((es[i] - (e1[i] + shift)).abs() <= 1e-12);
        }
        let mut st = fx.state.clone();
        st.u.scale(a);
        let u = extend_velocity(&st, &fx.dom);
        for (comp, mask) in u.comps.iter().zip(&fx.dom.fluid_faces) {
            for (v, fl) in comp.iter().zip(mask) {
                prop_assert!(*fl || *v == 0.0);
            }
        }
    }

    #[test]
    fn closed_form_excess_beats_random_directions(
        dir in prop::array::uniform2(-1.0f64..1.0),
        step in 1e-6f64..1.0,
        r in prop_oneof![Just(0.25), Just(0.5)],
    ) {
        let fx = fixture();
        let ff = FlowFields::new(&fx.state, &fx.dom);
        let tiled = TiledCorrector::new(&fx.cell, &fx.dom).unwrap();
        let rep = excess(&ff, &tiled, &fx.forcing, 1.0, r, 1.0, 0.9).unwrap();
        prop_assert!(rep.excess_u >= 0.0 && rep.excess_grad >= 0.0 && rep.ratio.is_finite());
        let moved = |e: &[f64]| vec![e[0] + step * dir[0], e[1] + step * dir[1]];
        let u = excess_u_for(&ff, &tiled, 1.0, r, &moved(&rep.e_star)).unwrap();
        prop_assert!(u >= rep.excess_u * (1.0 - 1e-12));
        let g = excess_grad_for(&ff, &tiled, 1.0, r, &moved(&rep.e_star_grad)).unwrap();
        prop_assert!(g >= rep.excess_grad * (1.0 - 1e-12));
    }

    #[test]
    fn ratios_are_invariant_under_joint_scaling(lambda in prop_oneof![-3.0f64..-0.1, 0.1f64..3.0]) {
        let fx = fixture();
        let mut st = fx.state.clone();
        st.u.scale(lambda);
        st.p.iter_mut().for_each(|v| *v *= lambda);
        st.f.scale(lambda);
        let f2 = fx.forcing.scaled(lambda);
        let (a, b) = (FlowFields::new(&fx.state, &fx.dom), FlowFields::new(&st, &fx.dom));
        let pairs = [
            (
                lipschitz_quantity(&a, &fx.forcing, 0.25, 1.0, 0.9).unwrap().ratio,
                lipschitz_quantity(&b, &f2, 0.25, 1.0, 0.9).unwrap().ratio,
            ),
            (caccioppoli_ratio(&a, 0.5).unwrap().ratio, caccioppoli_ratio(&b, 0.5).unwrap().ratio),
            (poincare_ratio(&a, 3.0, None).unwrap().ratio, poincare_ratio(&b, 3.0, None).unwrap().ratio),
        ];
        for (x, y) in pairs {
            prop_assert!(close(x, y, 1e-11), "{x} vs {y}");
        }
    }
}
