//! Verification functionals: pointwise Lagrangian and conformality residuals,
//! the structural equation div(g∇u) = 0, harmonicity of the angle, degrees at
//! singular points, the three boundary conditions and the weak stationarity test.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::Vector4;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::analytic::ExampleMap;
use crate::cplx2::{apply_i, lagrangian_angle, symplectic, AmbientVector, TangentFrame, DEGENERATE_FRAME_TOL};
use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::hamiltonian::{admissibility_residual, i_matrix, interior_bump, vec4, Admissibility, Hamiltonian};
use crate::mesh::{dist_point_triangle, loop_integrals, ComplexVectorField, DiscMesh, DiscreteMap, Exclusion, NodalComplexField, Point2, RESIDUAL_EPS};

pub const UNIT_MODULUS_TOL: f64 = 1e-6;
pub const ANGLE_CONSISTENCY_TOL: f64 = 1e-6;
pub const ADMISSIBILITY_TOL: f64 = 1e-6;
pub const SUPPORT_TOL: f64 = 1e-14;
pub const DEFAULT_COLLAR_R0: f64 = 0.5;
pub const INTEGER_DEGREE_TOL: f64 = 1e-3;
/// Angle derivative fields below this magnitude count as zero.
pub const ANGLE_FIELD_FLOOR: f64 = 1e-12;
/// Radius of the disc removed around singular points in divergence tests.
pub const SINGULAR_EXCLUSION_RADIUS: f64 = 0.1;

/// All residuals of one map on one mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub example: String,
    pub domain: String,
    pub h: f64,
    pub lagrangian: f64,
    pub conformality: f64,
    pub structural: f64,
    pub angle_div: f64,
    pub angle_perp_div: f64,
    pub legendrian: f64,
    pub conormal: f64,
    pub neumann_trace: f64,
    pub stationarity: f64,
}

/// One CSV line: example × mesh × check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub example: String,
    pub domain: String,
    pub h: f64,
    pub check: String,
    pub value: f64,
}

impl ResidualReport {
    pub const CHECKS: [&'static str; 9] = ["lagrangian", "conformality", "structural", "angle_div", "angle_perp_div", "legendrian", "conormal", "neumann_trace", "stationarity"];

    pub fn entries(&self) -> [(&'static str, f64); 9] {
        [
            ("lagrangian", self.lagrangian),
            ("conformality", self.conformality),
            ("structural", self.structural),
            ("angle_div", self.angle_div),
            ("angle_perp_div", self.angle_perp_div),
            ("legendrian", self.legendrian),
            ("conormal", self.conormal),
            ("neumann_trace", self.neumann_trace),
            ("stationarity", self.stationarity),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (k, v) in self.entries() {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("report entry {k} = {v}")));
            }
        }
        Ok(())
    }

    pub fn max_entry(&self) -> f64 {
        self.entries().iter().map(|e| e.1).fold(0.0, f64::max)
    }

    pub fn csv_rows(&self) -> Vec<CsvRow> {
        self.entries().iter().map(|(k, v)| CsvRow { example: self.example.clone(), domain: self.domain.clone(), h: self.h, check: (*k).into(), value: *v }).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn write_csv<W: Write>(rows: &[CsvRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

fn node_excluded(p: Point2, exclude: &[Exclusion]) -> bool {
    exclude.iter().any(|e| (p[0] - e.center[0]).hypot(p[1] - e.center[1]) <= e.radius)
}

fn triangle_excluded(mesh: &DiscMesh, t: usize, exclude: &[Exclusion]) -> bool {
    exclude.iter().any(|e| dist_point_triangle(e.center, mesh.corners(t)) <= e.radius)
}

/// Exclusions of radius `radius` around every singular point of `e`.
pub fn singular_exclusions(e: &ExampleMap, radius: f64) -> Vec<Exclusion> {
    e.singular_points.iter().map(|&c| Exclusion::new(c, radius)).collect()
}

fn frame_residuals(f: &TangentFrame) -> (f64, f64) {
    let a = f.e_x.norm_sq();
    let b = f.e_y.norm_sq();
    let cf = 0.5 * (a + b);
    let lag = symplectic(f.e_x, f.e_y).abs() / (cf + RESIDUAL_EPS);
    let conf = (f.e_x.dot(f.e_y).abs() + (a - b).abs()) / (cf + RESIDUAL_EPS);
    (lag, conf)
}

/// `(lagrangian, conformality)`: exact nodal frames when present, element frames otherwise.
pub fn pointwise_geometry_report(u: &DiscreteMap, exclude: &[Exclusion]) -> (f64, f64) {
    let mut worst = (0.0_f64, 0.0_f64);
    let mut take = |f: &TangentFrame| {
        let (l, c) = frame_residuals(f);
        worst = (worst.0.max(l), worst.1.max(c));
    };
    match &u.exact_frames {
        Some(frames) => {
            for (p, f) in u.mesh.nodes.iter().zip(frames) {
                if !f.is_zero() && !node_excluded(*p, exclude) {
                    take(f);
                }
            }
        }
        None => {
            for (t, f) in u.element_frames().iter().enumerate() {
                if !triangle_excluded(&u.mesh, t, exclude) {
                    take(f);
                }
            }
        }
    }
    worst
}

fn normalize_or_one(c: Complex64) -> Complex64 {
    let n = c.norm();
    if n > 0.0 && n.is_finite() {
        c / n
    } else {
        Complex64::new(1.0, 0.0)
    }
}

/// The nodal field `g` (conjugate of the Lagrangian angle). Exact frames are
/// used when present; otherwise incident element angles are averaged.
pub fn angle_field(u: &DiscreteMap) -> NodalComplexField {
    let values = match &u.exact_frames {
        Some(frames) => frames.iter().map(|f| lagrangian_angle(f, DEGENERATE_FRAME_TOL).map(|(_, a)| a.to_complex().conj()).unwrap_or(Complex64::new(1.0, 0.0))).collect(),
        None => {
            let el: Vec<Option<Complex64>> = u.element_frames().iter().map(|f| lagrangian_angle(f, DEGENERATE_FRAME_TOL).ok().map(|(_, a)| a.to_complex())).collect();
            (0..u.mesh.n_nodes())
                .map(|i| {
                    let s: Complex64 = u.mesh.triangles_of(i).iter().filter_map(|&t| el[t]).sum();
                    normalize_or_one(s).conj()
                })
                .collect()
        }
    };
    NodalComplexField::new(u.mesh.clone(), values).expect("unit values are finite")
}

fn element_unit_mean(mesh: &DiscMesh, g: &[Complex64]) -> Vec<Complex64> {
    mesh.element_mean(g).into_iter().map(normalize_or_one).collect()
}

/// Weak residual of `div(g∇u)`, max over the two complex components of `u`.
pub fn structural_residual(u: &DiscreteMap, g: &NodalComplexField, exclude: &[Exclusion]) -> Result<f64> {
    if let Some(frames) = &u.exact_frames {
        for ((p, f), gv) in u.mesh.nodes.iter().zip(frames).zip(&g.values) {
            if node_excluded(*p, exclude) {
                continue;
            }
            if let Ok((_, a)) = lagrangian_angle(f, DEGENERATE_FRAME_TOL) {
                let d = (gv - a.to_complex().conj()).norm();
                if d > ANGLE_CONSISTENCY_TOL {
                    return Err(Error::InconsistentAngle(d));
                }
            }
        }
    }
    let gt = element_unit_mean(&u.mesh, &g.values);
    let grads = u.mesh.element_gradient(&u.values);
    let mut worst = 0.0_f64;
    for comp in 0..2 {
        let w: ComplexVectorField = grads
            .iter()
            .zip(&gt)
            .map(|([gx, gy], g)| {
                let (a, b) = if comp == 0 { (gx.z1(), gy.z1()) } else { (gx.z2(), gy.z2()) };
                [g * a, g * b]
            })
            .collect();
        worst = worst.max(u.mesh.weak_divergence_residual_complex(&w, exclude).value);
    }
    Ok(worst)
}

/// Per-triangle `(ḡ∇g, iḡ∇^⊥g)` from a nodal unit field.
pub fn discrete_angle_fields(g: &NodalComplexField) -> (ComplexVectorField, ComplexVectorField) {
    let gt = element_unit_mean(&g.mesh, &g.values);
    let grad = g.gradient();
    let i = Complex64::i();
    let w1 = grad.iter().zip(&gt).map(|(d, g)| [g.conj() * d[0], g.conj() * d[1]]).collect();
    let w2 = grad.iter().zip(&gt).map(|(d, g)| [i * g.conj() * -d[1], i * g.conj() * d[0]]).collect();
    (w1, w2)
}

/// `(angle_div, angle_perp_div)`: weak divergence residuals of `ḡ∇g` and `iḡ∇^⊥g`.
pub fn angle_harmonicity(g: &NodalComplexField, exclude: &[Exclusion]) -> Result<(f64, f64)> {
    for (p, v) in g.mesh.nodes.iter().zip(&g.values) {
        if !node_excluded(*p, exclude) && (v.norm() - 1.0).abs() > UNIT_MODULUS_TOL {
            return Err(Error::NotUnitModulus(v.norm()));
        }
    }
    let (w1, w2) = discrete_angle_fields(g);
    let res = |w: &[[Complex64; 2]]| g.mesh.weak_divergence_residual_floored(w, exclude, ANGLE_FIELD_FLOOR).value;
    Ok((res(&w1), res(&w2)))
}

/// [`angle_harmonicity`] for the exact fields of an analytic example, averaged per triangle.
pub fn angle_harmonicity_exact(mesh: &DiscMesh, e: &ExampleMap, exclude: &[Exclusion]) -> (f64, f64) {
    let w1 = average_complex_field(mesh, |p| e.angle_log_gradient(p[0], p[1]));
    let w2 = average_complex_field(mesh, |p| e.exact_angle_flux_perp(p[0], p[1]));
    let res = |w: &[[Complex64; 2]]| mesh.weak_divergence_residual_floored(w, exclude, ANGLE_FIELD_FLOOR).value;
    (res(&w1), res(&w2))
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct C2([Complex64; 2]);

impl std::ops::Add for C2 {
    type Output = C2;
    fn add(self, o: C2) -> C2 {
        C2([self.0[0] + o.0[0], self.0[1] + o.0[1]])
    }
}

impl std::ops::Mul<f64> for C2 {
    type Output = C2;
    fn mul(self, s: f64) -> C2 {
        C2([self.0[0] * s, self.0[1] * s])
    }
}

/// Triangle means of a complex planar field by the degree-5 rule.
pub fn average_complex_field(mesh: &DiscMesh, f: impl Fn(Point2) -> [Complex64; 2]) -> ComplexVectorField {
    mesh.average_triangles(|p| C2(f(p))).into_iter().map(|c| c.0).collect()
}

/// Degree and flux of `iḡ∇g` around a point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularMassRecord {
    pub point: Point2,
    /// `(1/2π)∮ (iḡ∇g)·τ`, averaged over radii.
    pub degree: f64,
    /// `∮ (iḡ∇g)·ν`, averaged over radii.
    pub flux_mass: f64,
    pub radii_used: Vec<f64>,
    pub degree_spread: f64,
    pub flux_spread: f64,
    pub near_integer: bool,
}

pub fn singular_masses(field: impl Fn(Point2) -> [Complex64; 2], point: Point2, radii: &[f64], n_quad: usize) -> Result<SingularMassRecord> {
    if radii.is_empty() {
        return Err(Error::InvalidParameter("no radii".into()));
    }
    let mut degs = Vec::with_capacity(radii.len());
    let mut fluxes = Vec::with_capacity(radii.len());
    for &r in radii {
        let (flux, circ) = loop_integrals(&field, point, r, n_quad)?;
        degs.push(circ.re / (2.0 * PI));
        fluxes.push(flux.re);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let spread = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - v.iter().cloned().fold(f64::INFINITY, f64::min);
    let degree = mean(&degs);
    Ok(SingularMassRecord {
        point,
        degree,
        flux_mass: mean(&fluxes),
        radii_used: radii.to_vec(),
        degree_spread: spread(&degs),
        flux_spread: spread(&fluxes),
        near_integer: (degree - degree.round()).abs() <= INTEGER_DEGREE_TOL,
    })
}

/// `(legendrian, conormal, neumann_trace)` along ∂D².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    pub legendrian: f64,
    pub conormal: f64,
    pub neumann_trace: f64,
}

pub type BoundaryFn = Box<dyn Fn(f64) -> f64>;

/// Boundary test functions `1, cos kθ, sin kθ` for k ≤ 4.
pub fn boundary_test_functions() -> Vec<(String, BoundaryFn)> {
    let mut out: Vec<(String, BoundaryFn)> = vec![("1".into(), Box::new(|_| 1.0))];
    for k in 1..=4 {
        let kf = k as f64;
        out.push((format!("cos{k}"), Box::new(move |t: f64| (kf * t).cos())));
        out.push((format!("sin{k}"), Box::new(move |t: f64| (kf * t).sin())));
    }
    out
}

/// Largest `|⟨w·ν, φ⟩|` over [`boundary_test_functions`].
pub fn neumann_trace(mesh: &DiscMesh, w: &[[Complex64; 2]], collar_r0: f64) -> Result<f64> {
    let mut worst = 0.0_f64;
    for (_, phi) in boundary_test_functions() {
        worst = worst.max(mesh.boundary_trace_pairing_complex(w, phi, collar_r0)?.norm());
    }
    Ok(worst)
}

fn boundary_normal(d: &Domain, theta: f64, z: AmbientVector) -> Result<AmbientVector> {
    match d.curve() {
        // the stored curve is parametrized by the boundary angle
        Some(c) if (c.point_at_param(theta) - z).norm() <= crate::domain::ON_BOUNDARY_TOL => Ok(c.normal_at_param(theta)),
        _ => d.normal_at(z),
    }
}

/// Legendrian and conormal residuals from `(θ, u, ∂_τu, ∂_νu)` samples.
fn legendrian_conormal(d: &Domain, samples: impl Iterator<Item = (f64, AmbientVector, AmbientVector, AmbientVector)>) -> Result<(f64, f64)> {
    let mut leg = 0.0_f64;
    let mut con = 0.0_f64;
    for (theta, z, dtau, dnu) in samples {
        let n = boundary_normal(d, theta, z)?;
        leg = leg.max(dtau.dot(apply_i(n)).abs() / (dtau.norm_sq() + RESIDUAL_EPS));
        con = con.max((dnu - dnu.dot(n) * n).norm() / (dnu.norm() + RESIDUAL_EPS));
    }
    Ok((leg, con))
}

/// Boundary conditions of an analytic example from its exact frames and exact angle flux.
pub fn boundary_conditions_example(e: &ExampleMap, mesh: &DiscMesh, d: &Domain, collar_r0: f64) -> Result<BoundaryReport> {
    let samples = mesh.boundary_nodes().into_iter().map(|i| {
        let (_, t) = mesh.polar(i);
        let (s, c) = t.sin_cos();
        let f = e.frame(c, s);
        (t, e.value(c, s), f.directional(-s, c), f.directional(c, s))
    });
    let (legendrian, conormal) = legendrian_conormal(d, samples)?;
    let w = average_complex_field(mesh, |p| e.exact_angle_flux(p[0], p[1]));
    Ok(BoundaryReport { legendrian, conormal, neumann_trace: neumann_trace(mesh, &w, collar_r0)? })
}

/// Boundary conditions of a discrete map; exact nodal frames are used when present.
pub fn boundary_conditions_discrete(u: &DiscreteMap, d: &Domain, collar_r0: f64) -> Result<BoundaryReport> {
    let mesh = &u.mesh;
    let bn = mesh.boundary_nodes();
    let n = bn.len();
    let grads = mesh.element_gradient(&u.values);
    let mut samples = Vec::with_capacity(n);
    for (k, &i) in bn.iter().enumerate() {
        let (_, t) = mesh.polar(i);
        let (s, c) = t.sin_cos();
        let (dtau, dnu) = match &u.exact_frames {
            Some(f) => (f[i].directional(-s, c), f[i].directional(c, s)),
            None => {
                let (prev, next) = (bn[(k + n - 1) % n], bn[(k + 1) % n]);
                let dt = (mesh.polar(next).1 - mesh.polar(prev).1).rem_euclid(2.0 * PI);
                let dtau = (1.0 / dt) * (u.values[next] - u.values[prev]);
                let tris = mesh.triangles_of(i);
                let mut dnu = AmbientVector::ZERO;
                for &tr in tris {
                    dnu += c * grads[tr][0] + s * grads[tr][1];
                }
                (dtau, (1.0 / tris.len() as f64) * dnu)
            }
        };
        samples.push((t, u.values[i], dtau, dnu));
    }
    let (legendrian, conormal) = legendrian_conormal(d, samples.into_iter())?;
    let g = angle_field(u);
    let (w1, _) = discrete_angle_fields(&g);
    let flux: ComplexVectorField = w1.iter().map(|w| [Complex64::i() * w[0], Complex64::i() * w[1]]).collect();
    Ok(BoundaryReport { legendrian, conormal, neumann_trace: neumann_trace(mesh, &flux, collar_r0)? })
}

/// Subdomain ω ⊂ D² for the stationarity test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Omega {
    Full,
    /// {x > c}
    HalfDisc {
        c: f64,
    },
    /// {r0 < r ≤ r1, t0 < θ < t1}
    AnnularSector {
        r0: f64,
        r1: f64,
        t0: f64,
        t1: f64,
    },
}

impl Omega {
    pub fn contains(&self, p: Point2) -> bool {
        match *self {
            Omega::Full => true,
            Omega::HalfDisc { c } => p[0] > c,
            Omega::AnnularSector { r0, r1, t0, t1 } => {
                let r = p[0].hypot(p[1]);
                let t = p[1].atan2(p[0]);
                let in_angle = (t > t0 && t < t1) || (t + 2.0 * PI > t0 && t + 2.0 * PI < t1);
                r > r0 && r <= r1 && in_angle
            }
        }
    }

    /// Whether the closure of ω contains the boundary point at angle θ.
    pub fn touches_boundary_at(&self, theta: f64) -> bool {
        match *self {
            Omega::Full => true,
            Omega::HalfDisc { c } => theta.cos() >= c,
            Omega::AnnularSector { r1, t0, t1, .. } => {
                let t = theta.rem_euclid(2.0 * PI);
                r1 >= 1.0 && ((t >= t0 && t <= t1) || (t - 2.0 * PI >= t0 && t - 2.0 * PI <= t1))
            }
        }
    }

    /// Points of ∂ω ∩ D², pulled inside the disc by `inset`.
    pub fn interior_boundary_samples(&self, n: usize, inset: f64) -> Vec<Point2> {
        let rmax = 1.0 - inset;
        let clamp = |p: Point2| {
            let r = p[0].hypot(p[1]);
            if r > rmax {
                [p[0] * rmax / r, p[1] * rmax / r]
            } else {
                p
            }
        };
        let lin = |k: usize, a: f64, b: f64| a + (b - a) * (k as f64 + 0.5) / n as f64;
        match *self {
            Omega::Full => Vec::new(),
            Omega::HalfDisc { c } => {
                let y = (1.0 - c * c).max(0.0).sqrt();
                (0..n).map(|k| clamp([c, lin(k, -y, y)])).collect()
            }
            Omega::AnnularSector { r0, r1, t0, t1 } => {
                let mut out = Vec::new();
                if r0 > 0.0 {
                    out.extend((0..n).map(|k| {
                        let t = lin(k, t0, t1);
                        clamp([r0 * t.cos(), r0 * t.sin()])
                    }));
                }
                if r1 < 1.0 {
                    out.extend((0..n).map(|k| {
                        let t = lin(k, t0, t1);
                        clamp([r1 * t.cos(), r1 * t.sin()])
                    }));
                }
                if t1 - t0 < 2.0 * PI {
                    for t in [t0, t1] {
                        out.extend((0..n).map(|k| {
                            let r = lin(k, r0, r1);
                            clamp([r * t.cos(), r * t.sin()])
                        }));
                    }
                }
                out
            }
        }
    }
}

/// Quadrature data for the stationarity integral: image points, frames and weights.
#[derive(Debug, Clone)]
pub struct StationarityQuadrature {
    pub points: Vec<AmbientVector>,
    pub frames: Vec<[Vector4<f64>; 2]>,
    pub weights: Vec<f64>,
}

impl StationarityQuadrature {
    /// Midpoint rule per triangle of a piecewise-linear map.
    pub fn midpoint(u: &DiscreteMap, omega: &Omega) -> Self {
        let mids = u.mesh.element_mean(&u.values);
        let grads = u.mesh.element_gradient(&u.values);
        let mut q = Self { points: Vec::new(), frames: Vec::new(), weights: Vec::new() };
        for (t, e) in u.mesh.elements.iter().enumerate() {
            if omega.contains(e.centroid) {
                q.points.push(mids[t]);
                q.frames.push([vec4(grads[t][0]), vec4(grads[t][1])]);
                q.weights.push(e.area);
            }
        }
        q
    }

    /// Tensor Gauss rule (4×4) on every polar cell of the mesh, over the true disc,
    /// with exact values and frames of an analytic example.
    pub fn exact_polar(e: &ExampleMap, mesh: &DiscMesh, omega: &Omega) -> Self {
        const X: [f64; 4] = [-0.861_136_311_594_052_6, -0.339_981_043_584_856_3, 0.339_981_043_584_856_3, 0.861_136_311_594_052_6];
        const W: [f64; 4] = [0.347_854_845_137_453_8, 0.652_145_154_862_546_1, 0.652_145_154_862_546_1, 0.347_854_845_137_453_8];
        let s = mesh.n_sectors;
        let dt = 2.0 * PI / s as f64;
        let mut q = Self { points: Vec::new(), frames: Vec::new(), weights: Vec::new() };
        let mut r_in = 0.0;
        for &r_out in &mesh.ring_radii {
            let hr = 0.5 * (r_out - r_in);
            for j in 0..s {
                let t0 = j as f64 * dt;
                for a in 0..4 {
                    let r = r_in + hr * (1.0 + X[a]);
                    for b in 0..4 {
                        let t = t0 + 0.5 * dt * (1.0 + X[b]);
                        let p = [r * t.cos(), r * t.sin()];
                        if !omega.contains(p) {
                            continue;
                        }
                        let f = e.frame(p[0], p[1]);
                        q.points.push(e.value(p[0], p[1]));
                        q.frames.push([vec4(f.e_x), vec4(f.e_y)]);
                        q.weights.push(W[a] * W[b] * hr * 0.5 * dt * r);
                    }
                }
            }
            r_in = r_out;
        }
        q
    }

    /// `Σ w (|∂_x u|² + |∂_y u|²)`.
    pub fn energy(&self) -> f64 {
        self.frames.iter().zip(&self.weights).map(|(f, w)| w * (f[0].norm_squared() + f[1].norm_squared())).sum()
    }

    /// `∫ Σ_k ⟨I·Hess f(u)·∂_k u, ∂_k u⟩` and the largest operator norm of Hess f at the nodes.
    pub fn integral(&self, f: &Hamiltonian) -> (f64, f64) {
        let im = i_matrix();
        let mut acc = 0.0;
        let mut hmax = 0.0_f64;
        for ((z, fr), w) in self.points.iter().zip(&self.frames).zip(&self.weights) {
            let h = f.hessian(*z);
            // Frobenius norm bounds the spectral norm
            if h.norm() > hmax {
                hmax = hmax.max(h.symmetric_eigenvalues().amax());
            }
            let ih = im * h;
            acc += w * (fr[0].dot(&(ih * fr[0])) + fr[1].dot(&(ih * fr[1])));
        }
        (acc, hmax)
    }
}

/// Normalized stationarity values, one per test function, and their maximum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarityResult {
    pub value: f64,
    pub names: Vec<String>,
    pub per_function: Vec<f64>,
}

/// Checks each `f` against the boundary images in ω̄ and the images of ∂ω ∩ D².
pub fn check_admissible(fs: &[Hamiltonian], d: &Domain, boundary_images: &[AmbientVector], interior_boundary_images: &[AmbientVector]) -> Result<()> {
    for f in fs {
        match f.admissibility {
            Admissibility::InteriorSupported => {
                let worst = boundary_images.iter().map(|&z| f.value(z).abs() + f.gradient(z).norm()).fold(0.0, f64::max);
                if worst > SUPPORT_TOL {
                    return Err(Error::InadmissibleHamiltonian(worst));
                }
            }
            Admissibility::BoundaryTangent(_) | Admissibility::Unchecked => {
                let r = admissibility_residual(f, d, boundary_images)?;
                if r > ADMISSIBILITY_TOL {
                    return Err(Error::InadmissibleHamiltonian(r));
                }
            }
        }
        let worst = interior_boundary_images.iter().map(|&z| f.value(z).abs() + f.gradient(z).norm()).fold(0.0, f64::max);
        if worst > SUPPORT_TOL {
            return Err(Error::SupportViolation(worst));
        }
    }
    Ok(())
}

fn stationarity_from_quadrature(q: &StationarityQuadrature, fs: &[Hamiltonian]) -> StationarityResult {
    let energy = q.energy();
    let per_function: Vec<f64> = fs
        .iter()
        .map(|f| {
            let (i, h) = q.integral(f);
            i.abs() / (h * energy + RESIDUAL_EPS)
        })
        .collect();
    StationarityResult { value: per_function.iter().cloned().fold(0.0, f64::max), names: fs.iter().map(|f| f.name.clone()).collect(), per_function }
}

const SUPPORT_SAMPLES: usize = 64;

/// Weak stationarity test on a piecewise-linear map (midpoint rule per triangle).
pub fn stationarity_test(u: &DiscreteMap, d: &Domain, fs: &[Hamiltonian], omega: &Omega) -> Result<StationarityResult> {
    let boundary: Vec<AmbientVector> = u.mesh.boundary_nodes().into_iter().filter(|&i| omega.touches_boundary_at(u.mesh.polar(i).1)).map(|i| u.values[i]).collect();
    let inset = 1.0 - (PI / u.mesh.n_sectors as f64).cos() + 1e-9;
    let interior: Vec<AmbientVector> = omega.interior_boundary_samples(SUPPORT_SAMPLES, inset).into_iter().filter_map(|p| u.eval(p)).collect();
    check_admissible(fs, d, &boundary, &interior)?;
    Ok(stationarity_from_quadrature(&StationarityQuadrature::midpoint(u, omega), fs))
}

/// Weak stationarity test of an analytic example with exact frames on the true disc.
pub fn stationarity_test_exact(e: &ExampleMap, mesh: &DiscMesh, d: &Domain, fs: &[Hamiltonian], omega: &Omega) -> Result<StationarityResult> {
    let boundary: Vec<AmbientVector> =
        mesh.boundary_nodes().into_iter().map(|i| mesh.polar(i).1).filter(|&t| omega.touches_boundary_at(t)).map(|t| e.value(t.cos(), t.sin())).collect();
    let interior: Vec<AmbientVector> = omega.interior_boundary_samples(SUPPORT_SAMPLES, 0.0).into_iter().map(|p| e.value(p[0], p[1])).collect();
    check_admissible(fs, d, &boundary, &interior)?;
    Ok(stationarity_from_quadrature(&StationarityQuadrature::exact_polar(e, mesh, omega), fs))
}

/// Disc points used as bump centres in the standard families.
pub const BUMP_SITES: [Point2; 6] = [[0.0, 0.0], [0.3, 0.0], [0.0, -0.4], [-0.25, 0.2], [0.15, 0.35], [0.45, -0.2]];

/// Interior bumps centred at `centers`, each with radius `min(max_radius, fraction·clearance(c))`.
pub fn interior_bumps(centers: &[AmbientVector], clearance: impl Fn(AmbientVector) -> f64, max_radius: f64, fraction: f64) -> Result<Vec<Hamiltonian>> {
    centers.iter().map(|&c| interior_bump(c, max_radius.min(fraction * clearance(c)), 1.0)).collect()
}

/// Standard test family for a map with image `image` (disc point → C²):
/// boundary-tangent functions of the domain plus interior bumps on the image.
pub fn standard_family(d: &Domain, image: impl Fn(Point2) -> AmbientVector) -> Result<Vec<Hamiltonian>> {
    let centers: Vec<AmbientVector> = BUMP_SITES.iter().map(|&p| image(p)).collect();
    match d {
        Domain::LevelSet(l) if l.name == "ball" => {
            let mut fs = crate::hamiltonian::ball_boundary_family();
            fs.extend(interior_bumps(&centers, |c| 1.0 - c.norm(), 0.5, 0.9)?);
            Ok(fs)
        }
        Domain::LevelSet(_) => Err(Error::Unsupported("standard family for a general level set")),
        Domain::CurveNormal(curve) => {
            let mut fs = crate::hamiltonian::curve_admissible_family();
            let clearance = |c: AmbientVector| curve.curve_points.iter().map(|p| (*p - c).norm()).fold(f64::INFINITY, f64::min);
            fs.extend(interior_bumps(&centers, clearance, 0.5, 0.8)?);
            Ok(fs)
        }
    }
}

/// Full report for an analytic example: exact frames for the pointwise and
/// boundary checks, P1 fields for the divergence checks, exact quadrature for stationarity.
pub fn example_report(name: &str, e: &ExampleMap, mesh: &DiscMesh, d: &Domain, fs: &[Hamiltonian]) -> Result<ResidualReport> {
    let u = e.sample(mesh);
    let tip = singular_exclusions(e, 0.0);
    let ball = singular_exclusions(e, SINGULAR_EXCLUSION_RADIUS);
    let (lagrangian, conformality) = pointwise_geometry_report(&u, &tip);
    let g = angle_field(&u);
    let structural = structural_residual(&u, &g, &ball)?;
    let (angle_div, angle_perp_div) = angle_harmonicity(&g, &ball)?;
    let b = boundary_conditions_example(e, mesh, d, DEFAULT_COLLAR_R0)?;
    let stationarity = stationarity_test_exact(e, mesh, d, fs, &Omega::Full)?.value;
    let r = ResidualReport {
        example: name.into(),
        domain: domain_name(d),
        h: mesh.h(),
        lagrangian,
        conformality,
        structural,
        angle_div,
        angle_perp_div,
        legendrian: b.legendrian,
        conormal: b.conormal,
        neumann_trace: b.neumann_trace,
        stationarity,
    };
    r.validate()?;
    Ok(r)
}

/// Full report for a discrete map, every check from the P1 data.
pub fn discrete_report(name: &str, u: &DiscreteMap, d: &Domain, fs: &[Hamiltonian], exclude: &[Exclusion]) -> Result<ResidualReport> {
    let (lagrangian, conformality) = pointwise_geometry_report(u, exclude);
    let g = angle_field(u);
    let structural = structural_residual(u, &g, exclude)?;
    let (angle_div, angle_perp_div) = angle_harmonicity(&g, exclude)?;
    let b = boundary_conditions_discrete(u, d, DEFAULT_COLLAR_R0)?;
    let stationarity = stationarity_test(u, d, fs, &Omega::Full)?.value;
    let r = ResidualReport {
        example: name.into(),
        domain: domain_name(d),
        h: u.mesh.h(),
        lagrangian,
        conformality,
        structural,
        angle_div,
        angle_perp_div,
        legendrian: b.legendrian,
        conormal: b.conormal,
        neumann_trace: b.neumann_trace,
        stationarity,
    };
    r.validate()?;
    Ok(r)
}

pub fn domain_name(d: &Domain) -> String {
    match d {
        Domain::LevelSet(l) => l.name.clone(),
        Domain::CurveNormal(_) => "curve".into(),
    }
}
