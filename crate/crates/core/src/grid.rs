//! Staggered (MAC) grids over the cube `Q_R = (-R, R)^d`.
//!
//! Pressure-like quantities live at cell centers, the `a`-th velocity
//! component lives on faces normal to axis `a`. All index arithmetic is
//! written for `d <= 3`; unused trailing axes have extent 1.
//!
//! Quadrature convention: every norm is a midpoint sum over cells. Face
//! quantities are averaged onto cells before squaring, and velocity gradients
//! are reduced to a per-cell bilinear density (see [`GradientField`]).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 3;

/// Multi-index into a lattice; trailing unused axes are 0.
pub type Index = [usize; MAX_DIM];
pub type Point = [f64; MAX_DIM];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    Periodic,
    Box,
}

impl std::fmt::Display for Topology {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Topology::Periodic => write!(f, "periodic"),
            Topology::Box => write!(f, "box"),
        }
    }
}

impl std::str::FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "periodic" => Ok(Topology::Periodic),
            "box" => Ok(Topology::Box),
            other => Err(Error::Parse(format!("unknown topology `{other}`"))),
        }
    }
}

/// Extents of a rectangular lattice, first axis varying fastest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub dims: [usize; MAX_DIM],
}

impl Shape {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn linear(&self, idx: Index) -> usize {
        idx[0] + self.dims[0] * (idx[1] + self.dims[1] * idx[2])
    }

    #[inline]
    pub fn unravel(&self, lin: usize) -> Index {
        let i0 = lin % self.dims[0];
        let rest = lin / self.dims[0];
        [i0, rest % self.dims[1], rest / self.dims[1]]
    }

    pub fn iter(&self) -> impl Iterator<Item = Index> + '_ {
        (0..self.len()).map(move |l| self.unravel(l))
    }
}

/// Axis-aligned cube `center + (-half_width, half_width)^d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cube {
    pub center: Point,
    pub half_width: f64,
}

impl Cube {
    /// `Q_r`, centered at the origin.
    pub fn centered(half_width: f64) -> Self {
        Cube {
            center: [0.0; MAX_DIM],
            half_width,
        }
    }

    pub fn new(center: Point, half_width: f64) -> Self {
        Cube { center, half_width }
    }
}

/// Half-open range of cell indices produced by snapping a [`Cube`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellRange {
    pub lo: Index,
    pub hi: Index,
}

impl CellRange {
    pub fn count(&self) -> usize {
        (0..MAX_DIM).map(|a| self.hi[a] - self.lo[a]).product()
    }

    pub fn contains(&self, idx: Index) -> bool {
        (0..MAX_DIM).all(|a| idx[a] >= self.lo[a] && idx[a] < self.hi[a])
    }

    pub fn iter(&self) -> impl Iterator<Item = Index> + '_ {
        let ext = [
            self.hi[0] - self.lo[0],
            self.hi[1] - self.lo[1],
            self.hi[2] - self.lo[2],
        ];
        let shape = Shape { dims: ext };
        (0..shape.len()).map(move |l| {
            let k = shape.unravel(l);
            [k[0] + self.lo[0], k[1] + self.lo[1], k[2] + self.lo[2]]
        })
    }
}

/// Velocity-like field: one value array per axis, laid out on that axis' faces.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceField {
    pub comps: Vec<Vec<f64>>,
}

impl FaceField {
    pub fn dot(&self, other: &FaceField) -> f64 {
        self.comps
            .iter()
            .zip(&other.comps)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        self.comps.iter_mut().flatten().for_each(|v| *v *= s);
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: f64, other: &FaceField) {
        for (a, b) in self.comps.iter_mut().zip(&other.comps) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += s * y;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Discrete velocity gradient `du_a/dx_b`.
///
/// Diagonal entries `(a, a)` live at cell centers. Off-diagonal entries live
/// on links between consecutive `a`-faces along axis `b`; in box topology
/// there are `n - 1` such links along `b`, in periodic topology `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub dim: usize,
    pub comps: Vec<Vec<Vec<f64>>>,
}

impl GradientField {
    pub fn scale(&mut self, s: f64) {
        self.comps
            .iter_mut()
            .flatten()
            .flatten()
            .for_each(|v| *v *= s);
    }

    pub fn axpy(&mut self, s: f64, other: &GradientField) {
        for (ra, rb) in self.comps.iter_mut().zip(&other.comps) {
            for (a, b) in ra.iter_mut().zip(rb) {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += s * y;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacGrid {
    dim: usize,
    n_per_unit: usize,
    extent: f64,
    topology: Topology,
    n: usize,
    h: f64,
}

const SNAP_SLACK: f64 = 1e-9;

impl MacGrid {
    /// Grid over `(-extent, extent)^dim` with `n_per_unit` cells per unit length.
    pub fn new(dim: usize, n_per_unit: usize, extent: f64, topology: Topology) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::Config(format!("dimension {dim} not in 1..=3")));
        }
        if n_per_unit < 4 {
            return Err(Error::Config(format!(
                "n_per_unit = {n_per_unit} is below the minimum of 4"
            )));
        }
        if !(extent > 0.0) || !extent.is_finite() {
            return Err(Error::Config(format!("extent {extent} must be positive")));
        }
        let half = extent * n_per_unit as f64;
        let rounded = half.round();
        if (half - rounded).abs() > 1e-9 * half.max(1.0) || rounded < 1.0 {
            return Err(Error::Config(format!(
                "extent * n_per_unit = {half} is not a positive integer"
            )));
        }
        let n = 2 * rounded as usize;
        Ok(MacGrid {
            dim,
            n_per_unit,
            extent,
            topology,
            n,
            h: 1.0 / n_per_unit as f64,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn n_per_unit(&self) -> usize {
        self.n_per_unit
    }
    pub fn extent(&self) -> f64 {
        self.extent
    }
    pub fn topology(&self) -> Topology {
        self.topology
    }
    pub fn h(&self) -> f64 {
        self.h
    }
    /// Cells along each active axis.
    pub fn cells_per_axis(&self) -> usize {
        self.n
    }
    pub fn is_periodic(&self) -> bool {
        self.topology == Topology::Periodic
    }
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    fn active(&self, axis: usize) -> usize {
        if axis < self.dim {
            self.n
        } else {
            1
        }
    }

    pub fn cell_shape(&self) -> Shape {
        Shape {
            dims: [self.active(0), self.active(1), self.active(2)],
        }
    }

    pub fn num_cells(&self) -> usize {
        self.cell_shape().len()
    }

    pub fn face_shape(&self, axis: usize) -> Shape {
        let mut s = self.cell_shape();
        if self.topology == Topology::Box {
            s.dims[axis] += 1;
        }
        s
    }

    /// Shape of the link lattice carrying `du_a/dx_b`.
    pub fn link_shape(&self, a: usize, b: usize) -> Shape {
        if a == b {
            return self.cell_shape();
        }
        let mut s = self.face_shape(a);
        if self.topology == Topology::Box {
            s.dims[b] = self.n - 1;
        }
        s
    }

    pub fn cell_center(&self, idx: Index) -> Point {
        let mut x = [0.0; MAX_DIM];
        for a in 0..self.dim {
            x[a] = (idx[a] as f64 + 0.5) * self.h - self.extent;
        }
        x
    }

    pub fn face_center(&self, axis: usize, idx: Index) -> Point {
        let mut x = self.cell_center(idx);
        x[axis] = idx[axis] as f64 * self.h - self.extent;
        x
    }

    /// Location of the `(a, b)` gradient entry at link index `idx`.
    pub fn link_center(&self, a: usize, b: usize, idx: Index) -> Point {
        if a == b {
            return self.cell_center(idx);
        }
        let mut x = self.face_center(a, idx);
        x[b] = (idx[b] as f64 + 1.0) * self.h - self.extent;
        x
    }

    /// Neighbor of a cell along `axis` (`+1` or `-1`), wrapping when periodic.
    #[inline]
    pub fn cell_neighbor(&self, idx: Index, axis: usize, step: isize) -> Option<Index> {
        let n = self.n as isize;
        let k = idx[axis] as isize + step;
        let mut out = idx;
        if k >= 0 && k < n {
            out[axis] = k as usize;
            Some(out)
        } else if self.is_periodic() {
            out[axis] = k.rem_euclid(n) as usize;
            Some(out)
        } else {
            None
        }
    }

    /// Face on the high side of a cell along `axis`.
    #[inline]
    pub fn hi_face(&self, cell: Index, axis: usize) -> Index {
        let mut f = cell;
        f[axis] += 1;
        if self.is_periodic() && f[axis] == self.n {
            f[axis] = 0;
        }
        f
    }

    /// Cells on the low and high side of a face.
    #[inline]
    pub fn face_cells(&self, axis: usize, face: Index) -> [Option<Index>; 2] {
        let k = face[axis];
        let hi = if k < self.n { Some(face) } else { None };
        let lo = if k > 0 {
            let mut c = face;
            c[axis] = k - 1;
            Some(c)
        } else if self.is_periodic() {
            let mut c = face;
            c[axis] = self.n - 1;
            Some(c)
        } else {
            None
        };
        [lo, hi]
    }

    /// Neighbor of an `a`-face along axis `b`, wrapping when periodic.
    /// Returns `None` when the neighbor lies outside a box grid.
    #[inline]
    pub fn face_neighbor(&self, a: usize, face: Index, b: usize, step: isize) -> Option<Index> {
        let len = self.face_shape(a).dims[b] as isize;
        let k = face[b] as isize + step;
        let mut out = face;
        if k >= 0 && k < len {
            out[b] = k as usize;
            Some(out)
        } else if self.is_periodic() {
            out[b] = k.rem_euclid(len) as usize;
            Some(out)
        } else {
            None
        }
    }

    pub fn zero_cells(&self) -> Vec<f64> {
        vec![0.0; self.num_cells()]
    }

    pub fn zero_faces(&self) -> FaceField {
        FaceField {
            comps: (0..self.dim)
                .map(|a| vec![0.0; self.face_shape(a).len()])
                .collect(),
        }
    }

    pub fn sample_cells(&self, mut f: impl FnMut(Point) -> f64) -> Vec<f64> {
        let shape = self.cell_shape();
        shape.iter().map(|i| f(self.cell_center(i))).collect()
    }

    /// Samples `f(axis, x)` at every face center.
    pub fn sample_faces(&self, mut f: impl FnMut(usize, Point) -> f64) -> FaceField {
        FaceField {
            comps: (0..self.dim)
                .map(|a| {
                    let shape = self.face_shape(a);
                    shape.iter().map(|i| f(a, self.face_center(a, i))).collect()
                })
                .collect(),
        }
    }

    /// Per cell: sum of outward face fluxes divided by `h`.
    pub fn divergence(&self, u: &FaceField) -> Vec<f64> {
        let shape = self.cell_shape();
        let mut out = vec![0.0; shape.len()];
        for (l, c) in shape.iter().enumerate() {
            let mut s = 0.0;
            for a in 0..self.dim {
                let fs = self.face_shape(a);
                s += u.comps[a][fs.linear(self.hi_face(c, a))] - u.comps[a][fs.linear(c)];
            }
            out[l] = s / self.h;
        }
        out
    }

    /// Face gradient of a cell field; box-boundary faces carry 0.
    ///
    /// This is minus the adjoint of [`MacGrid::divergence`] on fields whose
    /// box-boundary faces vanish.
    pub fn pressure_gradient(&self, p: &[f64]) -> FaceField {
        let cs = self.cell_shape();
        let mut out = self.zero_faces();
        for a in 0..self.dim {
            let fs = self.face_shape(a);
            for (l, f) in fs.iter().enumerate() {
                if let [Some(lo), Some(hi)] = self.face_cells(a, f) {
                    out.comps[a][l] = (p[cs.linear(hi)] - p[cs.linear(lo)]) / self.h;
                }
            }
        }
        out
    }

    /// Finite differences of a face field, treated as given (zero-extended
    /// values are used as stored).
    pub fn velocity_gradient(&self, u: &FaceField) -> GradientField {
        let mut comps = Vec::with_capacity(self.dim);
        for a in 0..self.dim {
            let fs = self.face_shape(a);
            let ua = &u.comps[a];
            let mut row = Vec::with_capacity(self.dim);
            for b in 0..self.dim {
                let ls = self.link_shape(a, b);
                let mut g = vec![0.0; ls.len()];
                if a == b {
                    for (l, c) in ls.iter().enumerate() {
                        g[l] = (ua[fs.linear(self.hi_face(c, a))] - ua[fs.linear(c)]) / self.h;
                    }
                } else {
                    for (l, k) in ls.iter().enumerate() {
                        let mut next = k;
                        next[b] = (k[b] + 1) % fs.dims[b];
                        g[l] = (ua[fs.linear(next)] - ua[fs.linear(k)]) / self.h;
                    }
                }
                row.push(g);
            }
            comps.push(row);
        }
        GradientField {
            dim: self.dim,
            comps,
        }
    }

    /// Per-cell density of `sum_ab g1_ab * g2_ab`.
    ///
    /// Off-diagonal link values are averaged over the (up to four) links that
    /// touch the cell's corners, so a constant gradient has constant density.
    pub fn gradient_cell_dot(&self, g1: &GradientField, g2: &GradientField) -> Vec<f64> {
        self.cell_shape().iter().map(|c| self.gradient_dot_at(g1, g2, c)).collect()
    }

    /// The density of [`MacGrid::gradient_cell_dot`] at one cell.
    pub fn gradient_dot_at(&self, g1: &GradientField, g2: &GradientField, c: Index) -> f64 {
        let mut out = 0.0;
        for a in 0..self.dim {
            for b in 0..self.dim {
                let x = &g1.comps[a][b];
                let y = &g2.comps[a][b];
                let ls = self.link_shape(a, b);
                if a == b {
                    let li = ls.linear(c);
                    out += x[li] * y[li];
                    continue;
                }
                let mut sum = 0.0;
                let mut cnt = 0usize;
                for fa in [c, self.hi_face(c, a)] {
                    for kb in self.links_at_cell(c[b]) {
                        let mut k = fa;
                        k[b] = kb;
                        let li = ls.linear(k);
                        sum += x[li] * y[li];
                        cnt += 1;
                    }
                }
                if cnt > 0 {
                    out += sum / cnt as f64;
                }
            }
        }
        out
    }

    /// Link indices along an axis that touch cell position `cb`.
    fn links_at_cell(&self, cb: usize) -> impl Iterator<Item = usize> {
        let n = self.n;
        let periodic = self.is_periodic();
        let below = if cb >= 1 {
            Some(cb - 1)
        } else if periodic {
            Some(n - 1)
        } else {
            None
        };
        let above = if periodic || cb + 1 < n { Some(cb) } else { None };
        below.into_iter().chain(above)
    }

    pub fn gradient_cell_energy(&self, g: &GradientField) -> Vec<f64> {
        self.gradient_cell_dot(g, g)
    }

    /// Averages each velocity component from faces onto cell centers.
    pub fn cell_average(&self, u: &FaceField) -> Vec<Vec<f64>> {
        let cs = self.cell_shape();
        (0..self.dim)
            .map(|a| {
                let fs = self.face_shape(a);
                cs.iter()
                    .map(|c| 0.5 * (u.comps[a][fs.linear(c)] + u.comps[a][fs.linear(self.hi_face(c, a))]))
                    .collect()
            })
            .collect()
    }

    /// Per-cell `|u|^2` after face-to-cell averaging.
    pub fn speed_squared(&self, u: &FaceField) -> Vec<f64> {
        let avg = self.cell_average(u);
        let mut out = vec![0.0; self.num_cells()];
        for comp in &avg {
            for (o, v) in out.iter_mut().zip(comp) {
                *o += v * v;
            }
        }
        out
    }

    /// Snaps a cube outward to whole cells.
    pub fn snap(&self, cube: &Cube) -> Result<CellRange> {
        if !(cube.half_width > 0.0) {
            return Err(Error::EmptyBox);
        }
        let mut lo = [0usize; MAX_DIM];
        let mut hi = [1usize; MAX_DIM];
        let mut plo = [0.0; MAX_DIM];
        let mut phi = [0.0; MAX_DIM];
        for a in 0..self.dim {
            plo[a] = cube.center[a] - cube.half_width;
            phi[a] = cube.center[a] + cube.half_width;
            let l = ((plo[a] + self.extent) / self.h + SNAP_SLACK).floor();
            let u = ((phi[a] + self.extent) / self.h - SNAP_SLACK).ceil();
            if l < 0.0 || u > self.n as f64 {
                return Err(Error::BoxOutsideGrid { lo: plo, hi: phi });
            }
            if u <= l {
                return Err(Error::EmptyBox);
            }
            lo[a] = l as usize;
            hi[a] = u as usize;
        }
        Ok(CellRange { lo, hi })
    }

    /// Snapped half-width of `Q(x, r)` actually integrated over.
    pub fn snapped_half_width(&self, range: &CellRange) -> f64 {
        0.5 * (range.hi[0] - range.lo[0]) as f64 * self.h
    }

    /// `(sum |v_c|^q h^d / |box|)^(1/q)` over the snapped cube, where `v` holds
    /// per-cell magnitudes.
    pub fn box_average(&self, values: &[f64], cube: &Cube, q: f64) -> Result<f64> {
        let range = self.snap(cube)?;
        Ok(self.range_average(values, None, &range, q))
    }

    /// As [`MacGrid::box_average`], but averaging only over cells where `mask`
    /// is set (for example the fluid part `Q_r^eps`).
    pub fn box_average_masked(&self, values: &[f64], mask: &[bool], cube: &Cube, q: f64) -> Result<f64> {
        let range = self.snap(cube)?;
        if !range.iter().any(|c| mask[self.cell_shape().linear(c)]) {
            return Err(Error::EmptyBox);
        }
        Ok(self.range_average(values, Some(mask), &range, q))
    }

    pub fn range_average(&self, values: &[f64], mask: Option<&[bool]>, range: &CellRange, q: f64) -> f64 {
        let cs = self.cell_shape();
        let mut sum = 0.0;
        let mut cnt = 0usize;
        for c in range.iter() {
            let l = cs.linear(c);
            if mask.is_some_and(|m| !m[l]) {
                continue;
            }
            sum += values[l].abs().powf(q);
            cnt += 1;
        }
        if cnt == 0 {
            return 0.0;
        }
        (sum / cnt as f64).powf(1.0 / q)
    }

    /// `sum v_c h^d` over a cell range (an integral, not an average).
    pub fn range_integral(&self, values: &[f64], mask: Option<&[bool]>, range: &CellRange) -> f64 {
        let cs = self.cell_shape();
        range
            .iter()
            .map(|c| cs.linear(c))
            .filter(|&l| mask.is_none_or(|m| m[l]))
            .map(|l| values[l])
            .sum::<f64>()
            * self.cell_volume()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid(n: usize, r: f64, t: Topology) -> MacGrid {
        MacGrid::new(2, n, r, t).unwrap()
    }

    #[test]
    fn counts_box_and_periodic() {
        let g = grid(8, 1.0, Topology::Box);
        assert_eq!(g.cell_shape().dims, [16, 16, 1]);
        assert_eq!(g.face_shape(0).dims, [17, 16, 1]);
        assert_eq!(g.face_shape(1).dims, [16, 17, 1]);
        let p = grid(8, 1.0, Topology::Periodic);
        assert_eq!(p.face_shape(0).dims, [16, 16, 1]);
        assert_eq!(p.link_shape(0, 1).dims, [16, 16, 1]);
        assert_eq!(g.link_shape(0, 1).dims, [17, 15, 1]);
    }

    #[test]
    fn rejects_fractional_extent() {
        assert!(matches!(
            MacGrid::new(2, 3, 0.5, Topology::Box),
            Err(Error::Config(_))
        ));
        assert!(MacGrid::new(2, 2, 1.0, Topology::Box).is_err());
    }

    #[test]
    fn index_maps_are_bijective() {
        let g = MacGrid::new(3, 4, 0.5, Topology::Box).unwrap();
        for s in [g.cell_shape(), g.face_shape(0), g.face_shape(2)] {
            for l in 0..s.len() {
                assert_eq!(s.linear(s.unravel(l)), l);
            }
        }
    }

    #[test]
    fn cell_centers() {
        let g = grid(8, 1.0, Topology::Box);
        let x = g.cell_center([0, 15, 0]);
        assert_abs_diff_eq!(x[0], -1.0 + 0.0625);
        assert_abs_diff_eq!(x[1], 1.0 - 0.0625);
    }

    #[test]
    fn divergence_of_constant_and_linear() {
        for t in [Topology::Box, Topology::Periodic] {
            let g = grid(8, 1.0, t);
            let u = g.sample_faces(|a, _| if a == 0 { 2.0 } else { -1.0 });
            assert!(g.divergence(&u).iter().all(|v| v.abs() < 1e-12));
        }
        let g = grid(8, 1.0, Topology::Box);
        let u = g.sample_faces(|a, x| if a == 0 { x[0] } else { -x[1] });
        assert!(g.divergence(&u).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn linear_shear_gradient() {
        let g = grid(8, 1.0, Topology::Box);
        let u = g.sample_faces(|a, x| if a == 0 { x[1] } else { 0.0 });
        let grad = g.velocity_gradient(&u);
        assert!(grad.comps[0][1].iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(grad.comps[0][0].iter().all(|v| v.abs() < 1e-12));
        assert!(grad.comps[1][0].iter().all(|v| v.abs() < 1e-12));
        let e = g.gradient_cell_energy(&grad);
        assert!(e.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn averages_of_constants_and_indicators() {
        let g = grid(8, 1.0, Topology::Box);
        let c = vec![3.0; g.num_cells()];
        assert_abs_diff_eq!(g.box_average(&c, &Cube::centered(0.5), 2.0).unwrap(), 3.0, epsilon = 1e-14);
        let half = g.sample_cells(|x| if x[0] < 0.0 { 1.0 } else { 0.0 });
        assert_abs_diff_eq!(
            g.box_average(&half, &Cube::centered(0.5), 2.0).unwrap(),
            0.5f64.sqrt(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn snapping_is_outward() {
        let g = grid(8, 1.0, Topology::Box);
        let r = g.snap(&Cube::centered(0.3)).unwrap();
        // 0.3 lies between cell boundaries 0.25 and 0.375
        assert_eq!(r.lo[0], 5);
        assert_eq!(r.hi[0], 11);
        let exact = g.snap(&Cube::centered(0.25)).unwrap();
        assert_eq!((exact.lo[0], exact.hi[0]), (6, 10));
        assert!(matches!(g.snap(&Cube::centered(1.2)), Err(Error::BoxOutsideGrid { .. })));
        assert!(matches!(g.snap(&Cube::centered(0.0)), Err(Error::EmptyBox)));
    }
}
