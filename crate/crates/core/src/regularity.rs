//! Measured left- and right-hand sides of the large-scale regularity
//! estimates for a solved flow.
//!
//! Averages follow one quadrature convention: face quantities are averaged to
//! cell centers and integrated by the midpoint rule over snapped boxes.
//! Velocity quantities use the zero extension (solid cells contribute 0 to
//! the average over the whole box); pressure quantities average over the
//! fluid cells of the box only.

use nalgebra::{DMatrix, DVector};

use crate::cell::{gram_matrix, TiledCorrector};
use crate::error::{Error, Result};
use crate::forcing::Forcing;
use crate::geometry::PerforatedDomain;
use crate::grid::{CellRange, Cube, GradientField, MacGrid, Shape};
use crate::stokes::FlowState;

const SLACK: f64 = 1e-9;

/// A measured `lhs / rhs`; `0/0` is reported as 0 with `zero` set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ratio {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub zero: bool,
}

impl Ratio {
    pub fn new(lhs: f64, rhs: f64) -> Self {
        if rhs == 0.0 {
            Ratio {
                lhs,
                rhs,
                ratio: if lhs == 0.0 { 0.0 } else { f64::INFINITY },
                zero: lhs == 0.0,
            }
        } else {
            Ratio {
                lhs,
                rhs,
                ratio: lhs / rhs,
                zero: false,
            }
        }
    }
}

/// Per-cell data derived once from a flow.
#[derive(Debug, Clone)]
pub struct FlowFields<'a> {
    pub state: &'a FlowState,
    pub domain: &'a PerforatedDomain,
    pub u_cells: Vec<Vec<f64>>,
    /// `|u|²`.
    pub speed2: Vec<f64>,
    /// `ε ∇u` on links.
    pub grad: GradientField,
    /// `(ε|∇u|)²`.
    pub egrad2: Vec<f64>,
    /// `|f|²` from the sampled forcing.
    pub f2: Vec<f64>,
}

impl<'a> FlowFields<'a> {
    pub fn new(state: &'a FlowState, domain: &'a PerforatedDomain) -> Self {
        let grid = &domain.grid;
        let mut grad = grid.velocity_gradient(&state.u);
        grad.scale(state.epsilon);
        FlowFields {
            state,
            domain,
            u_cells: grid.cell_average(&state.u),
            speed2: grid.speed_squared(&state.u),
            egrad2: grid.gradient_cell_energy(&grad),
            grad,
            f2: grid.speed_squared(&state.f),
        }
    }

    pub fn grid(&self) -> &MacGrid {
        &self.domain.grid
    }

    pub fn epsilon(&self) -> f64 {
        self.state.epsilon
    }

    /// `(ε|∇u| + |u|)²` per cell.
    pub fn energy_density(&self) -> Vec<f64> {
        self.egrad2
            .iter()
            .zip(&self.speed2)
            .map(|(g, s)| (g.sqrt() + s.sqrt()).powi(2))
            .collect()
    }

    fn mean(&self, values: &[f64], range: &CellRange) -> f64 {
        self.grid().range_integral(values, None, range) / (range.count() as f64 * self.grid().cell_volume())
    }

    fn range(&self, half_width: f64) -> Result<CellRange> {
        self.grid().snap(&Cube::centered(half_width))
    }
}

fn require_at_least_period(r: f64, eps: f64) -> Result<()> {
    if r < eps * (1.0 - SLACK) {
        return Err(Error::DomainTooSmall(format!("radius {r} is below the period {eps}")));
    }
    Ok(())
}

/// Bracket `(⨏_{Q_R}|u|²)^{1/2} + R^α ‖f‖_{C^{0,α}(Q_R)}` shared by several
/// estimates.
pub fn lipschitz_rhs(ff: &FlowFields, forcing: &Forcing, big_r: f64, alpha: f64) -> Result<f64> {
    let range = ff.range(big_r)?;
    Ok(ff.mean(&ff.speed2, &range).sqrt() + big_r.powf(alpha) * forcing.holder_norm(&Cube::centered(big_r), alpha))
}

/// `[ε(⨏_{Q_r}|∇u|²)^{1/2} + (⨏_{Q_r}|u|²)^{1/2}] / [(⨏_{Q_R}|u|²)^{1/2} + R^α‖f‖_{C^{0,α}(Q_R)}]`.
pub fn lipschitz_quantity(ff: &FlowFields, forcing: &Forcing, r: f64, big_r: f64, alpha: f64) -> Result<Ratio> {
    require_at_least_period(r, ff.epsilon())?;
    if r >= big_r / 2.0 {
        return Err(Error::Precondition(format!("r = {r} must be below R/2 = {}", big_r / 2.0)));
    }
    let range = ff.range(r)?;
    let lhs = ff.mean(&ff.egrad2, &range).sqrt() + ff.mean(&ff.speed2, &range).sqrt();
    Ok(Ratio::new(lhs, lipschitz_rhs(ff, forcing, big_r, alpha)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExcessReport {
    pub r: f64,
    pub big_r: f64,
    pub epsilon: f64,
    pub excess_u: f64,
    pub excess_grad: f64,
    pub excess_p: f64,
    pub e_star: Vec<f64>,
    pub e_star_grad: Vec<f64>,
    pub gamma_star: f64,
    pub rhs: f64,
    /// `(excess_u + excess_grad) / rhs`.
    pub ratio: f64,
}

/// Normal equations of the gradient excess on one box.
struct GradGram {
    range: CellRange,
    m: DMatrix<f64>,
    b: DVector<f64>,
}

fn grad_gram(ff: &FlowFields, tiled: &TiledCorrector, range: &CellRange, mu: f64) -> GradGram {
    let grid = ff.grid();
    let d = tiled.dim();
    let mut m = DMatrix::zeros(d, d);
    let mut b = DVector::zeros(d);
    for c in range.iter() {
        for i in 0..d {
            b[i] += grid.gradient_dot_at(&ff.grad, &tiled.grad[i], c);
            for j in 0..=i {
                m[(i, j)] += grid.gradient_dot_at(&tiled.grad[i], &tiled.grad[j], c);
            }
        }
    }
    let n = range.count() as f64;
    for i in 0..d {
        for j in 0..i {
            m[(j, i)] = m[(i, j)];
        }
    }
    GradGram {
        range: *range,
        m: m / (n * mu * mu),
        b: b / (n * mu),
    }
}

/// `(⨏_{Q_r}|u - μ⁻¹W(x/ε)E|²)^{1/2}` for a given `E`.
pub fn excess_u_for(ff: &FlowFields, tiled: &TiledCorrector, mu: f64, r: f64, e: &[f64]) -> Result<f64> {
    let range = ff.range(r)?;
    Ok(velocity_residual(ff, tiled, mu, &range, e))
}

fn velocity_residual(ff: &FlowFields, tiled: &TiledCorrector, mu: f64, range: &CellRange, e: &[f64]) -> f64 {
    let cs = ff.grid().cell_shape();
    let d = tiled.dim();
    let mut sum = 0.0;
    for c in range.iter() {
        let l = cs.linear(c);
        for a in 0..d {
            let mut v = ff.u_cells[a][l];
            for (j, ej) in e.iter().enumerate() {
                v -= tiled.w_cells[j][a][l] * ej / mu;
            }
            sum += v * v;
        }
    }
    (sum / range.count() as f64).sqrt()
}

/// `(⨏_{Q_r}|ε∇u - μ⁻¹∇W(x/ε)E|²)^{1/2}` for a given `E`.
pub fn excess_grad_for(ff: &FlowFields, tiled: &TiledCorrector, mu: f64, r: f64, e: &[f64]) -> Result<f64> {
    let range = ff.range(r)?;
    Ok(gradient_residual(ff, tiled, mu, &range, e))
}

fn gradient_residual(ff: &FlowFields, tiled: &TiledCorrector, mu: f64, range: &CellRange, e: &[f64]) -> f64 {
    let grid = ff.grid();
    let mut res = ff.grad.clone();
    for (gj, ej) in tiled.grad.iter().zip(e) {
        res.axpy(-ej / mu, gj);
    }
    let sum: f64 = range.iter().map(|c| grid.gradient_dot_at(&res, &res, c)).sum();
    (sum / range.count() as f64).sqrt()
}

/// Best corrector multiples for the velocity and, independently, for the
/// gradient on `Q_r`, plus the corrector-adjusted pressure excess.
pub fn excess(
    ff: &FlowFields,
    tiled: &TiledCorrector,
    forcing: &Forcing,
    mu: f64,
    r: f64,
    big_r: f64,
    alpha: f64,
) -> Result<ExcessReport> {
    require_at_least_period(r, ff.epsilon())?;
    if r >= big_r {
        return Err(Error::Precondition(format!("r = {r} must be below R = {big_r}")));
    }
    let grid = ff.grid();
    let gram = gram_matrix(tiled, grid, &Cube::centered(r), mu)?;
    let e_star = gram.minimizer(&gram.rhs(tiled, grid, &ff.u_cells));
    let e_star: Vec<f64> = e_star.iter().copied().collect();
    let excess_u = velocity_residual(ff, tiled, mu, &gram.range, &e_star);

    let gg = grad_gram(ff, tiled, &gram.range, mu);
    let e_grad: Vec<f64> = gg
        .m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::DomainTooSmall("gradient Gram matrix is singular on this box".into()))?
        .solve(&gg.b)
        .iter()
        .copied()
        .collect();
    let excess_grad = gradient_residual(ff, tiled, mu, &gg.range, &e_grad);

    let pe = pressure_excess(ff, tiled, forcing, r)?;
    let rhs = lipschitz_rhs(ff, forcing, big_r, alpha)?;
    Ok(ExcessReport {
        r,
        big_r,
        epsilon: ff.epsilon(),
        excess_u,
        excess_grad,
        excess_p: pe.corrected,
        e_star,
        e_star_grad: e_grad,
        gamma_star: pe.gamma,
        rhs,
        ratio: Ratio::new(excess_u + excess_grad, rhs).ratio,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PressureExcess {
    /// `(1/r) min_{E,γ} (⨏_{Q_r^ε}|p - γ - x·f(0) - (επ(x/ε) - x)·E|²)^{1/2}`.
    pub corrected: f64,
    pub e: Vec<f64>,
    pub gamma: f64,
    /// Same with `E = 0`.
    pub affine: f64,
    /// `(1/r)(⨏_{Q_r^ε}|p - ⨏p|²)^{1/2}`.
    pub oscillation: f64,
}

type Basis<'a> = Box<dyn Fn(usize, [f64; 3]) -> f64 + 'a>;

/// Least-squares fit of `target` on the fluid cells of `range` by the given
/// basis columns; returns coefficients and the RMS residual.
fn fluid_least_squares(
    grid: &MacGrid,
    fluid: &[bool],
    range: &CellRange,
    target: impl Fn(usize, [f64; 3]) -> f64,
    basis: &[&dyn Fn(usize, [f64; 3]) -> f64],
) -> Result<(Vec<f64>, f64)> {
    let cs = grid.cell_shape();
    let k = basis.len();
    let mut m = DMatrix::zeros(k, k);
    let mut b = DVector::zeros(k);
    let mut rows = Vec::new();
    for c in range.iter() {
        let l = cs.linear(c);
        if !fluid[l] {
            continue;
        }
        let x = grid.cell_center(c);
        let phi: Vec<f64> = basis.iter().map(|f| f(l, x)).collect();
        let t = target(l, x);
        for i in 0..k {
            b[i] += phi[i] * t;
            for j in 0..k {
                m[(i, j)] += phi[i] * phi[j];
            }
        }
        rows.push((phi, t));
    }
    if rows.is_empty() {
        return Err(Error::EmptyBox);
    }
    let coef = m
        .svd(true, true)
        .solve(&b, 1e-13)
        .map_err(|e| Error::Singular(format!("pressure fit: {e}")))?;
    let coef: Vec<f64> = coef.iter().copied().collect();
    let sum: f64 = rows
        .iter()
        .map(|(phi, t)| (t - phi.iter().zip(&coef).map(|(p, c)| p * c).sum::<f64>()).powi(2))
        .sum();
    Ok((coef, (sum / rows.len() as f64).sqrt()))
}

pub fn pressure_excess(ff: &FlowFields, tiled: &TiledCorrector, forcing: &Forcing, r: f64) -> Result<PressureExcess> {
    require_at_least_period(r, ff.epsilon())?;
    let grid = ff.grid();
    let range = ff.range(r)?;
    let d = grid.dim();
    let eps = ff.epsilon();
    let p = &ff.state.p;
    let f0 = forcing.eval([0.0; 3]);
    let fluid = &ff.domain.fluid_cells;
    let target = |l: usize, x: [f64; 3]| p[l] - (0..d).map(|a| x[a] * f0[a]).sum::<f64>();

    let one = |_: usize, _: [f64; 3]| 1.0;
    let cols: Vec<Basis<'_>> = (0..d)
        .map(|j| Box::new(move |l: usize, x: [f64; 3]| eps * tiled.pi[j][l] - x[j]) as Basis<'_>)
        .collect();
    let mut basis: Vec<&dyn Fn(usize, [f64; 3]) -> f64> = vec![&one];
    basis.extend(cols.iter().map(|b| b.as_ref()));
    let (coef, rms) = fluid_least_squares(grid, fluid, &range, target, &basis)?;
    let (_, rms_affine) = fluid_least_squares(grid, fluid, &range, target, &[&one])?;
    let (_, rms_osc) = fluid_least_squares(grid, fluid, &range, |l, _| p[l], &[&one])?;
    Ok(PressureExcess {
        corrected: rms / r,
        e: coef[1..].to_vec(),
        gamma: coef[0],
        affine: rms_affine / r,
        oscillation: rms_osc / r,
    })
}

/// `(1/r)(⨏_{Q_r^ε}|p - γ - x·f(0) - (επ(x/ε) - x)·E|²)^{1/2}` at given `(E, γ)`.
pub fn pressure_excess_for(ff: &FlowFields, tiled: &TiledCorrector, forcing: &Forcing, r: f64, e: &[f64], gamma: f64) -> Result<f64> {
    let grid = ff.grid();
    let range = ff.range(r)?;
    let cs = grid.cell_shape();
    let f0 = forcing.eval([0.0; 3]);
    let d = grid.dim();
    let eps = ff.epsilon();
    let mut sum = 0.0;
    let mut n = 0usize;
    for c in range.iter() {
        let l = cs.linear(c);
        if !ff.domain.fluid_cells[l] {
            continue;
        }
        let x = grid.cell_center(c);
        let mut v = ff.state.p[l] - gamma;
        for a in 0..d {
            v -= x[a] * f0[a] + (eps * tiled.pi[a][l] - x[a]) * e[a];
        }
        sum += v * v;
        n += 1;
    }
    Ok((sum / n.max(1) as f64).sqrt() / r)
}

/// `g_ε` at cell centers; `None` where `Q(x, ε)` leaves the grid.
#[derive(Debug, Clone)]
pub struct GField {
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

/// Sum over the window `[i - half, i + half]` along every axis; NaN where
/// the window leaves the (non-periodic) grid.
fn window_sums(values: &[f64], shape: &Shape, dim: usize, half: usize) -> Vec<f64> {
    let mut cur = values.to_vec();
    for axis in 0..dim {
        let n = shape.dims[axis];
        let mut next = vec![f64::NAN; cur.len()];
        let stride: usize = shape.dims[..axis].iter().product();
        let mut prefix = vec![0.0; n + 1];
        for start in 0..cur.len() {
            // visit each line once, from its first element
            if !(start / stride).is_multiple_of(n) {
                continue;
            }
            for k in 0..n {
                prefix[k + 1] = prefix[k] + cur[start + k * stride];
            }
            for k in half..n.saturating_sub(half) {
                next[start + k * stride] = prefix[k + half + 1] - prefix[k - half];
            }
        }
        cur = next;
    }
    cur
}

pub fn g_field(ff: &FlowFields) -> GField {
    let grid = ff.grid();
    let half = ff.domain.period_cells();
    let window = (2 * half + 1).pow(grid.dim() as u32) as f64;
    let sums = window_sums(&ff.energy_density(), &grid.cell_shape(), grid.dim(), half);
    let valid: Vec<bool> = sums.iter().map(|v| !v.is_nan()).collect();
    GField {
        values: sums.iter().map(|s| if s.is_nan() { 0.0 } else { (s / window).max(0.0).sqrt() }).collect(),
        valid,
    }
}

/// `(⨏_{Q_R}|g_ε|^q)^{1/q} / [(⨏_{Q_{2R}}(ε|∇u|+|u|)²)^{1/2} + (⨏_{Q_{2R}}|f|^q)^{1/q}]`.
pub fn reverse_holder_ratio(ff: &FlowFields, g: &GField, q: f64, big_r: f64) -> Result<Ratio> {
    if !(q > 2.0) {
        return Err(Error::Precondition(format!("reverse Hölder exponent q = {q} must exceed 2")));
    }
    require_at_least_period(big_r, ff.epsilon())?;
    let grid = ff.grid();
    let inner = ff.range(big_r)?;
    let outer = ff.range(2.0 * big_r)?;
    let cs = grid.cell_shape();
    if inner.iter().any(|c| !g.valid[cs.linear(c)]) {
        return Err(Error::BoxOutsideGrid {
            lo: [-big_r - ff.epsilon(); 3],
            hi: [big_r + ff.epsilon(); 3],
        });
    }
    let lhs = grid.range_average(&g.values, None, &inner, q);
    let fmag: Vec<f64> = ff.f2.iter().map(|v| v.sqrt()).collect();
    let rhs = ff.mean(&ff.energy_density(), &outer).sqrt() + grid.range_average(&fmag, None, &outer, q);
    Ok(Ratio::new(lhs, rhs))
}

/// `[ε²∫_{Q_R}|∇u|² + R⁻²∫_{Q_R^ε}|p - ⨏p|²] / [∫_{Q_{2R}}|u|² + ∫_{Q_{2R}^ε}|f|²]`.
pub fn caccioppoli_ratio(ff: &FlowFields, big_r: f64) -> Result<Ratio> {
    if big_r < 2.0 * ff.epsilon() * (1.0 - SLACK) {
        return Err(Error::DomainTooSmall(format!("R = {big_r} is below 2ε = {}", 2.0 * ff.epsilon())));
    }
    let grid = ff.grid();
    let inner = ff.range(big_r)?;
    let outer = ff.range(2.0 * big_r)?;
    let fluid = &ff.domain.fluid_cells[..];
    let p = &ff.state.p;
    let vol = grid.range_integral(&vec![1.0; p.len()], Some(fluid), &inner);
    let mean = grid.range_integral(p, Some(fluid), &inner) / vol;
    let dev: Vec<f64> = p.iter().map(|v| (v - mean).powi(2)).collect();
    let lhs = grid.range_integral(&ff.egrad2, None, &inner) + grid.range_integral(&dev, Some(fluid), &inner) / (big_r * big_r);
    let rhs = grid.range_integral(&ff.speed2, None, &outer) + grid.range_integral(&ff.f2, Some(fluid), &outer);
    Ok(Ratio::new(lhs, rhs))
}

/// `‖u‖_{L^q} / (ε‖∇u‖_{L^q})` over the cube (the whole grid if `None`).
pub fn poincare_ratio(ff: &FlowFields, q: f64, cube: Option<&Cube>) -> Result<Ratio> {
    let grid = ff.grid();
    let range = match cube {
        Some(c) => grid.snap(c)?,
        None => CellRange {
            lo: [0; 3],
            hi: grid.cell_shape().dims,
        },
    };
    let speed: Vec<f64> = ff.speed2.iter().map(|v| v.sqrt()).collect();
    let grad: Vec<f64> = ff.egrad2.iter().map(|v| v.sqrt()).collect();
    Ok(Ratio::new(
        grid.range_average(&speed, None, &range, q),
        grid.range_average(&grad, None, &range, q),
    ))
}

/// Rescaling used for the boundary layer: the grid cube `Q_R` plays the
/// role of `Q_3`, so lengths are measured in units of `s = R/3` and the
/// period becomes `ε/s`.
pub fn boundary_layer_scale(ff: &FlowFields) -> (f64, f64) {
    let s = ff.grid().extent() / 3.0;
    (s, ff.epsilon() / s)
}

/// `(∫_{Q_{1+δ}∖Q_{1-δ}}(ε|∇u|+|u|)²)^{1/2}` normalized by
/// `(∫_{Q_3}(ε|∇u|+|u|)²)^{1/2} + ‖f‖_{L^∞(Q_3)}`, in rescaled units.
pub fn boundary_layer_norm(ff: &FlowFields, forcing: &Forcing, delta: f64) -> Result<Ratio> {
    let (s, eps) = boundary_layer_scale(ff);
    if !(delta > eps && delta <= 1.0) {
        return Err(Error::Precondition(format!(
            "delta = {delta} must lie in (ε, 1] with rescaled ε = {eps}"
        )));
    }
    let grid = ff.grid();
    let d = grid.dim() as i32;
    let density = ff.energy_density();
    let outer = grid.snap(&Cube::centered(s * (1.0 + delta)))?;
    let shell = if delta < 1.0 {
        let inner = grid.snap(&Cube::centered(s * (1.0 - delta)))?;
        grid.range_integral(&density, None, &outer) - grid.range_integral(&density, None, &inner)
    } else {
        grid.range_integral(&density, None, &outer)
    };
    let all = CellRange {
        lo: [0; 3],
        hi: grid.cell_shape().dims,
    };
    let norm = s.powi(-d);
    let lhs = (shell.max(0.0) * norm).sqrt();
    let rhs = (grid.range_integral(&density, None, &all) * norm).sqrt() + forcing.sup_norm(&Cube::centered(grid.extent()));
    Ok(Ratio::new(lhs, rhs))
}

/// Power-law fit `value ≈ C scale^slope`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    pub points: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least-squares line through `(log scale, log value)`.
pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(Error::Precondition(format!("a rate fit needs at least 3 points, got {}", points.len())));
    }
    if let Some(p) = points.iter().find(|(s, v)| !(*s > 0.0) || !(*v > 0.0)) {
        return Err(Error::Precondition(format!("rate fit needs positive data, got {p:?}")));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Precondition("rate fit needs distinct scales".into()));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok(RateFit {
        points: pts,
        slope,
        intercept: my - slope * mx,
        r2,
    })
}
