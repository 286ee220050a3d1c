//! Constraint domains Ω ⊂ C²: level sets with outward normal and Newton
//! projection, and curve-only domains known through their normal along an
//! image curve.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::Matrix4;

use crate::analytic::ExampleMap;
use crate::cplx2::AmbientVector;
use crate::error::{Error, Result};

/// Queries farther than this from ∂Ω are rejected.
pub const ON_BOUNDARY_TOL: f64 = 1e-6;
pub const MIN_GRADIENT: f64 = 1e-8;
pub const MIN_CURVE_NORMAL: f64 = 1e-6;
pub const DEFAULT_CURVE_SAMPLES: usize = 256;

type ScalarFn = Arc<dyn Fn(AmbientVector) -> f64 + Send + Sync>;
type VectorFn = Arc<dyn Fn(AmbientVector) -> AmbientVector + Send + Sync>;
/// Curve samples and unit normals as `[x1, y1, x2, y2]` arrays.
pub type CurveArrays = (Vec<[f64; 4]>, Vec<[f64; 4]>);

type MatrixFn = Arc<dyn Fn(AmbientVector) -> Matrix4<f64> + Send + Sync>;

/// Ω = {F < 0}.
#[derive(Clone)]
pub struct LevelSet {
    pub name: String,
    pub f: ScalarFn,
    pub grad_f: VectorFn,
    pub hess_f: MatrixFn,
}

impl fmt::Debug for LevelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LevelSet").field("name", &self.name).finish()
    }
}

/// Periodic cubic spline through equally spaced samples on [0, 2π).
#[derive(Debug, Clone)]
pub struct PeriodicSpline {
    values: Vec<AmbientVector>,
    second: Vec<AmbientVector>,
}

/// Solves the circulant system `x_{i−1} + 4x_i + x_{i+1} = b_i`.
fn solve_cyclic_141(b: &[AmbientVector]) -> Vec<AmbientVector> {
    let n = b.len();
    // Sherman–Morrison on the tridiagonal part, corner entries 1 = u vᵀ with u = (γ,0..,1), v = (1,0..,1/γ)
    let gamma = -4.0;
    let mut diag = vec![4.0; n];
    diag[0] -= gamma;
    diag[n - 1] -= 1.0 / gamma;
    let thomas = |rhs: &[AmbientVector]| -> Vec<AmbientVector> {
        let mut c = vec![0.0; n];
        let mut d = rhs.to_vec();
        c[0] = 1.0 / diag[0];
        d[0] = (1.0 / diag[0]) * d[0];
        for i in 1..n {
            let m = diag[i] - c[i - 1];
            c[i] = 1.0 / m;
            d[i] = (1.0 / m) * (d[i] - d[i - 1]);
        }
        for i in (0..n - 1).rev() {
            d[i] = d[i] - c[i] * d[i + 1];
        }
        d
    };
    let y = thomas(b);
    let mut u = vec![AmbientVector::ZERO; n];
    u[0] = AmbientVector::new(gamma, gamma, gamma, gamma);
    u[n - 1] = AmbientVector::new(1.0, 1.0, 1.0, 1.0);
    let z = thomas(&u);
    let arr = |v: AmbientVector| v.to_array();
    let mut out = y.clone();
    for comp in 0..4 {
        let vy = arr(y[0])[comp] + arr(y[n - 1])[comp] / gamma;
        let vz = arr(z[0])[comp] + arr(z[n - 1])[comp] / gamma;
        let f = vy / (1.0 + vz);
        for i in 0..n {
            let mut a = arr(out[i]);
            a[comp] -= f * arr(z[i])[comp];
            out[i] = AmbientVector::from_array(a);
        }
    }
    out
}

impl PeriodicSpline {
    pub fn new(values: Vec<AmbientVector>) -> Self {
        let n = values.len();
        assert!(n >= 3, "periodic spline needs at least three samples");
        let h = 2.0 * PI / n as f64;
        let rhs: Vec<AmbientVector> = (0..n).map(|i| (6.0 / (h * h)) * (values[(i + 1) % n] - 2.0 * values[i] + values[(i + n - 1) % n])).collect();
        let second = solve_cyclic_141(&rhs);
        Self { values, second }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn locate(&self, theta: f64) -> (usize, usize, f64, f64) {
        let n = self.values.len();
        let h = 2.0 * PI / n as f64;
        let t = theta.rem_euclid(2.0 * PI) / h;
        let i = (t.floor() as usize).min(n - 1);
        (i, (i + 1) % n, t - i as f64, h)
    }

    pub fn eval(&self, theta: f64) -> AmbientVector {
        let (i, j, s, h) = self.locate(theta);
        let a = 1.0 - s;
        a * self.values[i] + s * self.values[j] + (h * h / 6.0) * (((a * a * a - a) * self.second[i]) + ((s * s * s - s) * self.second[j]))
    }

    pub fn derivative(&self, theta: f64) -> AmbientVector {
        let (i, j, s, h) = self.locate(theta);
        let a = 1.0 - s;
        (1.0 / h) * (self.values[j] - self.values[i]) + (h / 6.0) * ((-(3.0 * a * a - 1.0) * self.second[i]) + ((3.0 * s * s - 1.0) * self.second[j]))
    }
}

/// Ω known only through its outward normal along a closed image curve.
#[derive(Debug, Clone)]
pub struct CurveNormal {
    pub curve_points: Vec<AmbientVector>,
    pub normals: Vec<AmbientVector>,
    pub thetas: Vec<f64>,
    curve: PeriodicSpline,
    normal_spline: PeriodicSpline,
}

#[derive(Debug, Clone)]
pub enum Domain {
    LevelSet(LevelSet),
    CurveNormal(CurveNormal),
}

/// The unit ball, F(z) = |z|² − 1.
pub fn unit_ball() -> Domain {
    Domain::LevelSet(LevelSet { name: "ball".into(), f: Arc::new(|z| z.norm_sq() - 1.0), grad_f: Arc::new(|z| 2.0 * z), hess_f: Arc::new(|_| 2.0 * Matrix4::identity()) })
}

/// Curve domain for a map that exposes a boundary normal field X, on `n` equally spaced angles.
pub fn curve_domain_from_map(e: &ExampleMap) -> Result<Domain> {
    curve_domain_from_map_with(e, DEFAULT_CURVE_SAMPLES)
}

pub fn curve_domain_from_map_with(e: &ExampleMap, n: usize) -> Result<Domain> {
    if n < DEFAULT_CURVE_SAMPLES {
        return Err(Error::InvalidParameter(format!("curve grid of {n} < {DEFAULT_CURVE_SAMPLES} points")));
    }
    let thetas: Vec<f64> = (0..n).map(|k| 2.0 * PI * k as f64 / n as f64).collect();
    let mut curve_points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    for &t in &thetas {
        let (s, c) = t.sin_cos();
        let x = e.boundary_x(t)?;
        let nx = x.norm();
        if !(nx >= MIN_CURVE_NORMAL) {
            return Err(Error::DegenerateNormal(nx));
        }
        let nrm = (1.0 / nx) * x;
        let dtau = e.frame(c, s).directional(-s, c);
        let tangency = nrm.dot(dtau).abs();
        if tangency > 1e-8 {
            return Err(Error::DegenerateNormal(tangency));
        }
        curve_points.push(e.value(c, s));
        normals.push(nrm);
    }
    Ok(Domain::CurveNormal(CurveNormal::new(curve_points, normals)))
}

impl CurveNormal {
    /// Builds the domain from samples at equally spaced angles `2πk/n`.
    pub fn new(curve_points: Vec<AmbientVector>, normals: Vec<AmbientVector>) -> Self {
        let n = curve_points.len();
        let thetas = (0..n).map(|k| 2.0 * PI * k as f64 / n as f64).collect();
        let curve = PeriodicSpline::new(curve_points.clone());
        let normal_spline = PeriodicSpline::new(normals.clone());
        Self { curve_points, normals, thetas, curve, normal_spline }
    }

    /// Interpolated unit normal at curve parameter θ.
    pub fn normal_at_param(&self, theta: f64) -> AmbientVector {
        let v = self.normal_spline.eval(theta);
        (1.0 / v.norm()) * v
    }

    pub fn point_at_param(&self, theta: f64) -> AmbientVector {
        self.curve.eval(theta)
    }

    pub fn tangent_at_param(&self, theta: f64) -> AmbientVector {
        self.curve.derivative(theta)
    }

    /// Curve parameter closest to `z` and its distance.
    pub fn closest_param(&self, z: AmbientVector) -> (f64, f64) {
        let n = self.curve_points.len();
        let h = 2.0 * PI / n as f64;
        let k = (0..n).min_by(|&a, &b| (self.curve_points[a] - z).norm_sq().total_cmp(&(self.curve_points[b] - z).norm_sq())).expect("curve is non-empty");
        let d2 = |t: f64| (self.curve.eval(t) - z).norm_sq();
        // golden section on the two adjacent intervals
        let (mut a, mut b) = (self.thetas[k] - h, self.thetas[k] + h);
        let g = 0.5 * (5.0_f64.sqrt() - 1.0);
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        for _ in 0..80 {
            if d2(c) < d2(d) {
                b = d;
            } else {
                a = c;
            }
            c = b - g * (b - a);
            d = a + g * (b - a);
        }
        let t = (0.5 * (a + b)).rem_euclid(2.0 * PI);
        (t, d2(t).sqrt())
    }

    /// Largest `|⟨N, ∂_τ u⟩| / |∂_τ u|` over the grid, using spline tangents.
    pub fn tangency_residual(&self) -> f64 {
        self.thetas
            .iter()
            .zip(&self.normals)
            .map(|(&t, n)| {
                let tau = self.curve.derivative(t);
                n.dot(tau).abs() / tau.norm()
            })
            .fold(0.0, f64::max)
    }
}

impl LevelSet {
    /// `∇F/|∇F|` at any point with non-vanishing gradient.
    pub fn normal_extension(&self, z: AmbientVector) -> Result<AmbientVector> {
        let g = (self.grad_f)(z);
        let n = g.norm();
        if !(n >= MIN_GRADIENT) {
            return Err(Error::DegenerateNormal(n));
        }
        Ok((1.0 / n) * g)
    }
}

impl Domain {
    pub fn is_level_set(&self) -> bool {
        matches!(self, Domain::LevelSet(_))
    }

    pub fn level_set(&self) -> Option<&LevelSet> {
        match self {
            Domain::LevelSet(l) => Some(l),
            _ => None,
        }
    }

    pub fn curve(&self) -> Option<&CurveNormal> {
        match self {
            Domain::CurveNormal(c) => Some(c),
            _ => None,
        }
    }

    /// Level function value; `None` for curve domains.
    pub fn level(&self, z: AmbientVector) -> Option<f64> {
        self.level_set().map(|l| (l.f)(z))
    }

    /// Unit outward normal at a point of ∂Ω.
    pub fn normal_at(&self, z: AmbientVector) -> Result<AmbientVector> {
        match self {
            Domain::LevelSet(l) => {
                let f = (l.f)(z);
                if !(f.abs() <= ON_BOUNDARY_TOL) {
                    return Err(Error::NotOnBoundary(f));
                }
                l.normal_extension(z)
            }
            Domain::CurveNormal(c) => {
                let (t, d) = c.closest_param(z);
                if !(d <= ON_BOUNDARY_TOL) {
                    return Err(Error::NotOnBoundary(d));
                }
                Ok(c.normal_at_param(t))
            }
        }
    }

    /// Newton projection onto {F = 0} along ∇F.
    pub fn project_to_boundary(&self, z: AmbientVector) -> Result<AmbientVector> {
        let l = match self {
            Domain::LevelSet(l) => l,
            Domain::CurveNormal(_) => return Err(Error::Unsupported("projection onto a curve-only domain")),
        };
        let mut w = z;
        for _ in 0..60 {
            let f = (l.f)(w);
            if f.abs() <= 1e-14 {
                return Ok(w);
            }
            let g = (l.grad_f)(w);
            let g2 = g.norm_sq();
            if !(g2 >= MIN_GRADIENT * MIN_GRADIENT) || !w.is_finite() {
                return Err(Error::ProjectionDiverged);
            }
            w -= (f / g2) * g;
        }
        if (l.f)(w).abs() <= 1e-12 {
            Ok(w)
        } else {
            Err(Error::ProjectionDiverged)
        }
    }

    /// Curve samples and normals as `[x1, y1, x2, y2]` arrays, for the mesh dump.
    pub fn curve_arrays(&self) -> Option<CurveArrays> {
        self.curve().map(|c| (c.curve_points.iter().map(|v| v.to_array()).collect(), c.normals.iter().map(|v| v.to_array()).collect()))
    }
}
