//! Analytic forcing families with computable Hölder norms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Cube, FaceField, MacGrid, Point, MAX_DIM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Forcing {
    /// `f(x) = value`.
    Constant { value: Vec<f64> },
    /// `f_i(x) = value_i + Σ_j gradient[i][j] x_j`.
    Affine { value: Vec<f64>, gradient: Vec<Vec<f64>> },
    /// `f_i(x) = amplitude_i sin(π frequency x_{i+1 mod d})`, which is
    /// divergence free.
    Trig { amplitude: Vec<f64>, frequency: f64 },
}

/// Points per axis of the lattice used for the sampled trig norms.
const TRIG_SAMPLES: usize = 21;

impl Forcing {
    pub fn zero(dim: usize) -> Self {
        Forcing::Constant { value: vec![0.0; dim] }
    }

    pub fn check(&self, dim: usize) -> Result<()> {
        let ok = match self {
            Forcing::Constant { value } => value.len() == dim,
            Forcing::Affine { value, gradient } => {
                value.len() == dim && gradient.len() == dim && gradient.iter().all(|r| r.len() == dim)
            }
            Forcing::Trig { amplitude, frequency } => amplitude.len() == dim && frequency.is_finite(),
        };
        let finite = match self {
            Forcing::Constant { value } => value.iter().all(|v| v.is_finite()),
            Forcing::Affine { value, gradient } => {
                value.iter().chain(gradient.iter().flatten()).all(|v| v.is_finite())
            }
            Forcing::Trig { amplitude, .. } => amplitude.iter().all(|v| v.is_finite()),
        };
        if !ok {
            return Err(Error::Config(format!("forcing coefficients do not match dimension {dim}")));
        }
        if !finite {
            return Err(Error::Config("forcing coefficients must be finite".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            Forcing::Constant { value } | Forcing::Affine { value, .. } => value.len(),
            Forcing::Trig { amplitude, .. } => amplitude.len(),
        }
    }

    pub fn component(&self, i: usize, x: Point) -> f64 {
        match self {
            Forcing::Constant { value } => value[i],
            Forcing::Affine { value, gradient } => {
                value[i] + gradient[i].iter().zip(&x).map(|(g, x)| g * x).sum::<f64>()
            }
            Forcing::Trig { amplitude, frequency } => {
                let d = amplitude.len();
                amplitude[i] * (std::f64::consts::PI * frequency * x[(i + 1) % d]).sin()
            }
        }
    }

    pub fn eval(&self, x: Point) -> Point {
        let mut out = [0.0; MAX_DIM];
        for (i, o) in out.iter_mut().enumerate().take(self.dim()) {
            *o = self.component(i, x);
        }
        out
    }

    pub fn magnitude(&self, x: Point) -> f64 {
        self.eval(x).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sample_faces(&self, grid: &MacGrid) -> FaceField {
        grid.sample_faces(|a, x| self.component(a, x))
    }

    pub fn scaled(&self, s: f64) -> Self {
        match self {
            Forcing::Constant { value } => Forcing::Constant { value: value.iter().map(|v| s * v).collect() },
            Forcing::Affine { value, gradient } => Forcing::Affine {
                value: value.iter().map(|v| s * v).collect(),
                gradient: gradient.iter().map(|r| r.iter().map(|v| s * v).collect()).collect(),
            },
            Forcing::Trig { amplitude, frequency } => Forcing::Trig {
                amplitude: amplitude.iter().map(|v| s * v).collect(),
                frequency: *frequency,
            },
        }
    }

    fn corners(&self, cube: &Cube) -> Vec<Point> {
        let d = self.dim();
        (0..1usize << d)
            .map(|m| {
                let mut p = cube.center;
                for (b, pb) in p.iter_mut().enumerate().take(d) {
                    *pb += if m >> b & 1 == 1 { cube.half_width } else { -cube.half_width };
                }
                p
            })
            .collect()
    }

    fn lattice(&self, cube: &Cube) -> Vec<Point> {
        let d = self.dim();
        let n = TRIG_SAMPLES;
        let total = n.pow(d as u32);
        (0..total)
            .map(|mut k| {
                let mut p = cube.center;
                for pb in p.iter_mut().take(d) {
                    let t = (k % n) as f64 / (n - 1) as f64;
                    k /= n;
                    *pb += cube.half_width * (2.0 * t - 1.0);
                }
                p
            })
            .collect()
    }

    /// `sup_{cube} |f|`, exact for constant and affine forcing.
    pub fn sup_norm(&self, cube: &Cube) -> f64 {
        let pts = match self {
            Forcing::Constant { .. } => vec![cube.center],
            Forcing::Affine { .. } => self.corners(cube),
            Forcing::Trig { amplitude, frequency } => {
                // each component reaches its amplitude once the box spans a
                // half period of the sine
                if 2.0 * cube.half_width * frequency.abs() >= 2.0 {
                    return amplitude.iter().map(|a| a * a).sum::<f64>().sqrt();
                }
                self.lattice(cube)
            }
        };
        pts.iter().map(|p| self.magnitude(*p)).fold(0.0, f64::max)
    }

    /// `sup |f(x) - f(y)| / |x - y|^α` over the cube.
    pub fn holder_seminorm(&self, cube: &Cube, alpha: f64) -> f64 {
        let d = self.dim();
        match self {
            Forcing::Constant { .. } => 0.0,
            Forcing::Affine { gradient, .. } => {
                let m = nalgebra::DMatrix::from_fn(d, d, |i, j| gradient[i][j]);
                let diam = 2.0 * cube.half_width * (d as f64).sqrt();
                m.singular_values().max() * diam.powf(1.0 - alpha)
            }
            Forcing::Trig { .. } => {
                let pts = self.lattice(cube);
                let vals: Vec<Point> = pts.iter().map(|p| self.eval(*p)).collect();
                let mut best = 0.0f64;
                for i in 0..pts.len() {
                    for j in 0..i {
                        let dx: f64 = (0..d).map(|b| (pts[i][b] - pts[j][b]).powi(2)).sum::<f64>().sqrt();
                        let df: f64 = (0..d).map(|b| (vals[i][b] - vals[j][b]).powi(2)).sum::<f64>().sqrt();
                        best = best.max(df / dx.powf(alpha));
                    }
                }
                best
            }
        }
    }

    /// `‖f‖_{C^{0,α}}` as sup norm plus seminorm.
    pub fn holder_norm(&self, cube: &Cube, alpha: f64) -> f64 {
        self.sup_norm(cube) + self.holder_seminorm(cube, alpha)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_norms() {
        let f = Forcing::Constant { value: vec![3.0, 4.0] };
        let q = Cube::centered(1.0);
        assert_eq!(f.sup_norm(&q), 5.0);
        assert_eq!(f.holder_seminorm(&q, 0.5), 0.0);
    }

    #[test]
    fn affine_norms_match_sampling() {
        let f = Forcing::Affine {
            value: vec![0.5, 0.0],
            gradient: vec![vec![0.0, -1.0], vec![1.0, 0.0]],
        };
        let q = Cube::centered(1.0);
        // rotation: |f(x)-f(y)| = |x-y|, so the seminorm is diam^(1-α)
        let alpha = 0.9;
        let expect = (2.0 * 2f64.sqrt()).powf(1.0 - alpha);
        assert!((f.holder_seminorm(&q, alpha) - expect).abs() < 1e-12);
        // sampled lower bound never exceeds the closed form
        let pts = f.lattice(&q);
        let mut best = 0.0f64;
        for i in 0..pts.len() {
            for j in 0..i {
                let dx = ((pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2)).sqrt();
                let a = f.eval(pts[i]);
                let b = f.eval(pts[j]);
                let df = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
                best = best.max(df / dx.powf(alpha));
            }
        }
        assert!(best <= expect + 1e-12 && best > 0.99 * expect);
        let sup = (1.5f64.powi(2) + 1.0).sqrt();
        assert!((f.sup_norm(&q) - sup).abs() < 1e-12);
    }

    #[test]
    fn trig_is_bounded_by_amplitude() {
        let f = Forcing::Trig { amplitude: vec![1.0, 2.0], frequency: 1.0 };
        let q = Cube::centered(1.0);
        assert!((f.sup_norm(&q) - 5f64.sqrt()).abs() < 1e-12);
        let small = Cube::centered(0.1);
        assert!(f.sup_norm(&small) <= 5f64.sqrt());
        assert!(f.holder_seminorm(&q, 0.5) > 0.0);
    }

    #[test]
    fn scaling_is_homogeneous() {
        let f = Forcing::Trig { amplitude: vec![1.0, 0.5], frequency: 2.0 };
        let q = Cube::centered(0.5);
        let g = f.scaled(3.0);
        assert!((g.holder_norm(&q, 0.7) - 3.0 * f.holder_norm(&q, 0.7)).abs() < 1e-12);
    }

    #[test]
    fn parses_from_toml() {
        let f: Forcing = toml::from_str("kind = \"affine\"\nvalue = [0.0, 0.0]\ngradient = [[0.0, -1.0], [1.0, 0.0]]").unwrap();
        assert!(f.check(2).is_ok());
        assert!(f.check(3).is_err());
    }
}
