//! Hamiltonian test functions f: C² → R with closed-form value, gradient and
//! Hessian, combinators for building admissible families, and the
//! flow-adapted construction along a boundary flow line.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{Matrix4, Vector4};
use num_complex::Complex64;

use crate::cplx2::{apply_i, apply_j, AmbientVector};
use crate::domain::{Domain, LevelSet, ON_BOUNDARY_TOL};
use crate::error::{Error, Result};

pub fn vec4(a: AmbientVector) -> Vector4<f64> {
    Vector4::new(a.x1, a.y1, a.x2, a.y2)
}

pub fn ambient(v: &Vector4<f64>) -> AmbientVector {
    AmbientVector::new(v[0], v[1], v[2], v[3])
}

/// Matrix of complex multiplication by `c` on C² ≅ R⁴.
pub fn complex_scalar_matrix(c: Complex64) -> Matrix4<f64> {
    Matrix4::new(c.re, -c.im, 0.0, 0.0, c.im, c.re, 0.0, 0.0, 0.0, 0.0, c.re, -c.im, 0.0, 0.0, c.im, c.re)
}

/// Matrix of `apply_i`.
pub fn i_matrix() -> Matrix4<f64> {
    complex_scalar_matrix(Complex64::i())
}

/// Matrix of `apply_j`.
pub fn j_matrix() -> Matrix4<f64> {
    Matrix4::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, -1.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0)
}

/// Value, gradient and Hessian at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub v: f64,
    pub g: Vector4<f64>,
    pub h: Matrix4<f64>,
}

impl Jet {
    pub const ZERO: Jet = Jet { v: 0.0, g: Vector4::new(0.0, 0.0, 0.0, 0.0), h: Matrix4::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0) };
}

/// A scalar function of one variable with its first two derivatives.
#[derive(Clone)]
pub struct Profile {
    pub name: String,
    f: Arc<dyn Fn(f64) -> [f64; 3] + Send + Sync>,
}

impl fmt::Debug for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Profile({})", self.name)
    }
}

/// Quintic smootherstep on [0, 1] and its two derivatives.
pub fn smootherstep(t: f64) -> [f64; 3] {
    if t <= 0.0 {
        return [0.0; 3];
    }
    if t >= 1.0 {
        return [1.0, 0.0, 0.0];
    }
    let t2 = t * t;
    [t2 * t * (10.0 - 15.0 * t + 6.0 * t2), 30.0 * t2 * (1.0 - t) * (1.0 - t), 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t)]
}

impl Profile {
    pub fn new(name: impl Into<String>, f: impl Fn(f64) -> [f64; 3] + Send + Sync + 'static) -> Self {
        Self { name: name.into(), f: Arc::new(f) }
    }

    pub fn eval(&self, s: f64) -> [f64; 3] {
        (self.f)(s)
    }

    pub fn constant(c: f64) -> Self {
        Self::new(format!("const({c})"), move |_| [c, 0.0, 0.0])
    }

    pub fn identity() -> Self {
        Self::new("s", |s| [s, 1.0, 0.0])
    }

    pub fn power(k: i32) -> Self {
        let kf = k as f64;
        Self::new(format!("s^{k}"), move |s| [s.powi(k), kf * s.powi(k - 1), kf * (kf - 1.0) * s.powi(k - 2)])
    }

    /// `e^{−k s}`.
    pub fn exp_decay(k: f64) -> Self {
        Self::new(format!("exp(-{k}s)"), move |s| {
            let e = (-k * s).exp();
            [e, -k * e, k * k * e]
        })
    }

    /// Equal to 1 for s ≤ s0, 0 for s ≥ s1, C² in between.
    pub fn cutoff(s0: f64, s1: f64) -> Self {
        let w = s1 - s0;
        Self::new(format!("cutoff({s0},{s1})"), move |s| {
            let [a, b, c] = smootherstep((s - s0) / w);
            [1.0 - a, -b / w, -c / (w * w)]
        })
    }

    /// Odd smooth bump supported in (−δ, δ): `(t/δ)·exp(1 − 1/(1 − (t/δ)²))`.
    pub fn odd_bump(delta: f64) -> Self {
        Self::new(format!("odd_bump({delta})"), move |t| {
            let x = t / delta;
            if x.abs() >= 1.0 {
                return [0.0; 3];
            }
            let d = 1.0 - x * x;
            let e = (1.0 - 1.0 / d).exp();
            // q = −1/d, q' = −2x/d², q'' = −2(1 + 3x²)/d³ (in x)
            let qp = -2.0 * x / (d * d);
            let qpp = -2.0 * (1.0 + 3.0 * x * x) / (d * d * d);
            let f = x * e;
            let fp = e + x * qp * e;
            let fpp = 2.0 * qp * e + x * (qpp + qp * qp) * e;
            [f, fp / delta, fpp / (delta * delta)]
        })
    }
}

/// A function with a hand-written jet.
pub trait JetFn: Send + Sync {
    fn jet(&self, z: AmbientVector) -> Jet;
}

#[derive(Clone)]
enum Node {
    /// zᵀQz + bᵀz + c
    Quadratic {
        q: Matrix4<f64>,
        b: Vector4<f64>,
        c: f64,
    },
    /// atan2(y₁, x₁)
    Phase,
    Bump {
        center: Vector4<f64>,
        radius: f64,
        amplitude: f64,
    },
    /// P(|z|²)
    Radial(Profile),
    Product(Arc<Node>, Arc<Node>),
    Sum(Vec<(f64, Arc<Node>)>),
    Custom(Arc<dyn JetFn>),
}

impl Node {
    fn jet(&self, z: AmbientVector) -> Jet {
        match self {
            Node::Quadratic { q, b, c } => {
                let x = vec4(z);
                let qx = q * x;
                Jet { v: x.dot(&qx) + b.dot(&x) + c, g: 2.0 * qx + b, h: 2.0 * q }
            }
            Node::Phase => {
                let (x, y) = (z.x1, z.y1);
                let r2 = x * x + y * y;
                let r4 = r2 * r2;
                let mut h = Matrix4::zeros();
                h[(0, 0)] = 2.0 * x * y / r4;
                h[(1, 1)] = -2.0 * x * y / r4;
                h[(0, 1)] = (y * y - x * x) / r4;
                h[(1, 0)] = h[(0, 1)];
                Jet { v: y.atan2(x), g: Vector4::new(-y / r2, x / r2, 0.0, 0.0), h }
            }
            Node::Bump { center, radius, amplitude } => {
                let d = vec4(z) - center;
                let rho = d.norm_squared() / (radius * radius);
                if rho >= 1.0 {
                    return Jet::ZERO;
                }
                let m = 1.0 - rho;
                let phi = (-1.0 / m).exp();
                let p1 = -phi / (m * m);
                let p2 = phi * (1.0 / m.powi(4) - 2.0 / m.powi(3));
                let grho = (2.0 / (radius * radius)) * d;
                Jet { v: amplitude * phi, g: amplitude * p1 * grho, h: *amplitude * (p2 * grho * grho.transpose() + (2.0 * p1 / (radius * radius)) * Matrix4::identity()) }
            }
            Node::Radial(p) => {
                let x = vec4(z);
                let [f, f1, f2] = p.eval(x.norm_squared());
                Jet { v: f, g: 2.0 * f1 * x, h: 4.0 * f2 * x * x.transpose() + 2.0 * f1 * Matrix4::identity() }
            }
            Node::Product(a, b) => {
                let ja = a.jet(z);
                let jb = b.jet(z);
                Jet { v: ja.v * jb.v, g: ja.v * jb.g + jb.v * ja.g, h: ja.v * jb.h + jb.v * ja.h + ja.g * jb.g.transpose() + jb.g * ja.g.transpose() }
            }
            Node::Sum(terms) => {
                let mut acc = Jet::ZERO;
                for (w, n) in terms {
                    let j = n.jet(z);
                    acc.v += w * j.v;
                    acc.g += *w * j.g;
                    acc.h += *w * j.h;
                }
                acc
            }
            Node::Custom(f) => f.jet(z),
        }
    }
}

/// How a Hamiltonian meets the constraint domain.
#[derive(Debug, Clone, PartialEq)]
pub enum Admissibility {
    /// Gradient vanishes near ∂Ω.
    InteriorSupported,
    /// `I∇f` tangent to ∂Ω on the named domain.
    BoundaryTangent(String),
    /// No admissibility claim.
    Unchecked,
}

#[derive(Clone)]
pub struct Hamiltonian {
    pub name: String,
    pub support_hint: Option<(AmbientVector, f64)>,
    pub admissibility: Admissibility,
    node: Arc<Node>,
}

impl fmt::Debug for Hamiltonian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Hamiltonian").field("name", &self.name).field("admissibility", &self.admissibility).finish()
    }
}

impl Hamiltonian {
    fn from_node(name: impl Into<String>, node: Node, admissibility: Admissibility) -> Self {
        Self { name: name.into(), support_hint: None, admissibility, node: Arc::new(node) }
    }

    pub fn jet(&self, z: AmbientVector) -> Jet {
        self.node.jet(z)
    }

    pub fn value(&self, z: AmbientVector) -> f64 {
        self.jet(z).v
    }

    pub fn gradient(&self, z: AmbientVector) -> AmbientVector {
        ambient(&self.jet(z).g)
    }

    pub fn hessian(&self, z: AmbientVector) -> Matrix4<f64> {
        self.jet(z).h
    }

    /// Hamiltonian vector field `I∇f`.
    pub fn vector_field(&self, z: AmbientVector) -> AmbientVector {
        apply_i(self.gradient(z))
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_admissibility(mut self, a: Admissibility) -> Self {
        self.admissibility = a;
        self
    }

    /// Pointwise product; admissibility is left unchecked.
    pub fn product(&self, other: &Hamiltonian) -> Hamiltonian {
        Hamiltonian::from_node(format!("({})*({})", self.name, other.name), Node::Product(self.node.clone(), other.node.clone()), Admissibility::Unchecked)
    }

    /// Linear combination; admissibility is left unchecked.
    pub fn combination(terms: &[(f64, &Hamiltonian)]) -> Hamiltonian {
        let name = terms.iter().map(|(w, h)| format!("{w}*({})", h.name)).collect::<Vec<_>>().join(" + ");
        Hamiltonian::from_node(name, Node::Sum(terms.iter().map(|(w, h)| (*w, h.node.clone())).collect()), Admissibility::Unchecked)
    }

    pub fn scaled(&self, w: f64) -> Hamiltonian {
        let mut h = Hamiltonian::combination(&[(w, self)]);
        h.admissibility = self.admissibility.clone();
        h.support_hint = self.support_hint;
        h
    }

    pub fn custom(name: impl Into<String>, f: Arc<dyn JetFn>, admissibility: Admissibility) -> Hamiltonian {
        Hamiltonian::from_node(name, Node::Custom(f), admissibility)
    }
}

/// `zᵀQz + bᵀz + c` with `Q` symmetrized.
pub fn quadratic(q: Matrix4<f64>, b: Vector4<f64>, c: f64) -> Hamiltonian {
    let q = 0.5 * (q + q.transpose());
    Hamiltonian::from_node("quadratic", Node::Quadratic { q, b, c }, Admissibility::Unchecked)
}

/// `⟨b, z⟩ + c`.
pub fn linear(b: AmbientVector, c: f64) -> Hamiltonian {
    quadratic(Matrix4::zeros(), vec4(b), c).with_name(format!("linear({:?},{c})", b.to_array()))
}

pub fn constant(c: f64) -> Hamiltonian {
    quadratic(Matrix4::zeros(), Vector4::zeros(), c).with_name(format!("{c}"))
}

/// `arg z₁`, smooth away from the cut {y₁ = 0, x₁ ≤ 0}.
pub fn phase_z1() -> Hamiltonian {
    Hamiltonian::from_node("arg z1", Node::Phase, Admissibility::Unchecked)
}

pub fn interior_bump(center: AmbientVector, radius: f64, amplitude: f64) -> Result<Hamiltonian> {
    if !(radius > 0.0) {
        return Err(Error::InvalidParameter(format!("bump radius {radius}")));
    }
    let mut h = Hamiltonian::from_node(format!("bump({:?},{radius})", center.to_array()), Node::Bump { center: vec4(center), radius, amplitude }, Admissibility::InteriorSupported);
    h.support_hint = Some((center, radius));
    Ok(h)
}

/// `f(z) = P(|z|²)`.
pub fn radial_invariant(profile: Profile) -> Hamiltonian {
    Hamiltonian::from_node(format!("radial[{}]", profile.name), Node::Radial(profile), Admissibility::BoundaryTangent("ball".into()))
}

/// Quadratic form of `Σ c_k f_k` with `f₀ = |z₁|², f₁ = |z₂|², f₂ = Re(z̄₁z₂), f₃ = Im(z̄₁z₂)`.
pub fn hopf_quadratic_form(c: [f64; 4]) -> Matrix4<f64> {
    let mut q = Matrix4::zeros();
    q[(0, 0)] = c[0];
    q[(1, 1)] = c[0];
    q[(2, 2)] = c[1];
    q[(3, 3)] = c[1];
    // x1x2 + y1y2
    q[(0, 2)] = 0.5 * c[2];
    q[(2, 0)] = 0.5 * c[2];
    q[(1, 3)] = 0.5 * c[2];
    q[(3, 1)] = 0.5 * c[2];
    // x1y2 − y1x2
    q[(0, 3)] = 0.5 * c[3];
    q[(3, 0)] = 0.5 * c[3];
    q[(1, 2)] = -0.5 * c[3];
    q[(2, 1)] = -0.5 * c[3];
    q
}

/// `P(|z|²)·Σ c_k f_k`, invariant under `z ↦ e^{it}z`.
pub fn hopf_invariant_quadratic(c: [f64; 4], profile: Profile) -> Hamiltonian {
    let name = format!("hopf({:?})[{}]", c, profile.name);
    let quad = Node::Quadratic { q: hopf_quadratic_form(c), b: Vector4::zeros(), c: 0.0 };
    Hamiltonian::from_node(name, Node::Product(Arc::new(Node::Radial(profile)), Arc::new(quad)), Admissibility::BoundaryTangent("ball".into()))
}

/// Level function of the non-minimal example's boundary curve,
/// `F = −(y₂²/2)(|z₁|² − 1) + a·y₂·x₂ + (a² + y₂² − 1)/2` with `a = arg z₁`.
/// Along the curve `∇F` equals the boundary field X.
pub fn nonminimal_level_function() -> Hamiltonian {
    let a = phase_z1();
    let y2 = linear(AmbientVector::new(0.0, 0.0, 0.0, 1.0), 0.0);
    let x2 = linear(AmbientVector::new(0.0, 0.0, 1.0, 0.0), 0.0);
    let q1 = curve_constraint(0);
    let q3 = curve_constraint(2);
    let t1 = y2.product(&y2).product(&q1);
    let t2 = a.product(&y2).product(&x2);
    Hamiltonian::combination(&[(-0.5, &t1), (1.0, &t2), (0.5, &q3)]).with_name("F").with_admissibility(Admissibility::BoundaryTangent("curve".into()))
}

/// Functions vanishing on the non-minimal boundary curve: `|z₁|² − 1`, `x₂`, `(arg z₁)² + y₂² − 1`.
pub fn curve_constraint(k: usize) -> Hamiltonian {
    match k {
        0 => quadratic(hopf_quadratic_form([1.0, 0.0, 0.0, 0.0]), Vector4::zeros(), -1.0).with_name("q1"),
        1 => linear(AmbientVector::new(0.0, 0.0, 1.0, 0.0), 0.0).with_name("q2"),
        2 => {
            let a = phase_z1();
            let y2sq = quadratic(Matrix4::from_diagonal(&Vector4::new(0.0, 0.0, 0.0, 1.0)), Vector4::zeros(), -1.0);
            Hamiltonian::combination(&[(1.0, &a.product(&a)), (1.0, &y2sq)]).with_name("q3")
        }
        _ => panic!("curve constraint index {k} out of range"),
    }
}

/// Tangential-field functions for the non-minimal curve domain: multiples `m·F`
/// of the level function and products of two curve constraints.
pub fn curve_admissible_family() -> Vec<Hamiltonian> {
    let tag = Admissibility::BoundaryTangent("curve".into());
    let f = nonminimal_level_function();
    let mut out = vec![f.clone()];
    let e = |k: usize| {
        let mut a = [0.0; 4];
        a[k] = 1.0;
        AmbientVector::from_array(a)
    };
    for k in 0..4 {
        out.push(linear(e(k), 0.5).product(&f).with_name(format!("(z{k}+1/2)*F")).with_admissibility(tag.clone()));
    }
    out.push(radial_invariant(Profile::identity()).product(&f).with_name("|z|^2*F").with_admissibility(tag.clone()));
    for i in 0..3 {
        for j in i..3 {
            let p = curve_constraint(i).product(&curve_constraint(j));
            out.push(p.clone().with_name(format!("q{}q{}", i + 1, j + 1)).with_admissibility(tag.clone()));
            out.push(linear(e(j), 1.0).product(&p).with_name(format!("(z{j}+1)q{}q{}", i + 1, j + 1)).with_admissibility(tag.clone()));
        }
    }
    out
}

/// Admissible Hamiltonians for the unit ball: Hopf quadratics under several
/// radial profiles plus radial invariants.
pub fn ball_boundary_family() -> Vec<Hamiltonian> {
    let mut out = Vec::new();
    let profiles = [Profile::constant(1.0), Profile::identity(), Profile::exp_decay(0.5)];
    for p in &profiles {
        for k in 0..4 {
            let mut c = [0.0; 4];
            c[k] = 1.0;
            out.push(hopf_invariant_quadratic(c, p.clone()));
        }
    }
    out.push(hopf_invariant_quadratic([0.3, -0.7, 0.5, 0.2], Profile::cutoff(0.2, 2.0)));
    out.push(radial_invariant(Profile::power(2)));
    out.push(radial_invariant(Profile::power(3)));
    out.push(radial_invariant(Profile::exp_decay(1.0)));
    out
}

/// Gradient floor in [`admissibility_residual`]; gradients at roundoff level carry no direction.
pub const ADMISSIBILITY_EPS: f64 = 1e-8;

/// Largest `|⟨I∇f(z), N(z)⟩| / (|∇f(z)| + ε)` over boundary points.
pub fn admissibility_residual(f: &Hamiltonian, d: &Domain, pts: &[AmbientVector]) -> Result<f64> {
    let mut worst = 0.0_f64;
    for &z in pts {
        let n = d.normal_at(z)?;
        let g = f.gradient(z);
        worst = worst.max(apply_i(g).dot(n).abs() / (g.norm() + ADMISSIBILITY_EPS));
    }
    Ok(worst)
}

/// Anchor data for [`flow_adapted`]: boundary point, transversal direction and phase.
#[derive(Debug, Clone, Copy)]
pub struct FlowAnchor {
    pub p: AmbientVector,
    pub v: AmbientVector,
    pub g0: Complex64,
}

/// Plateau cutoff: 1 within `r0` of the anchor, 0 beyond `r1`.
#[derive(Debug, Clone, Copy)]
pub struct PlateauCutoff {
    pub r0: f64,
    pub r1: f64,
}

struct FlowAdapted {
    level: LevelSet,
    p: Vector4<f64>,
    v: Vector4<f64>,
    g0: Matrix4<f64>,
    scale: f64,
    beta: Profile,
    delta: f64,
    cut: PlateauCutoff,
}

const FLOW_FD_STEP: f64 = 1e-5;
const FLOW_STEPS: usize = 64;

impl FlowAdapted {
    fn field(&self, x: &Vector4<f64>) -> Vector4<f64> {
        let g = vec4((self.level.grad_f)(ambient(x)));
        self.scale * (self.g0 * vec4(apply_j(ambient(&g))))
    }

    fn field_jacobian(&self, x: &Vector4<f64>) -> Matrix4<f64> {
        self.scale * self.g0 * j_matrix() * (self.level.hess_f)(ambient(x))
    }

    /// `Φ_{−t}(y)` and, optionally, its Jacobian.
    fn flow_back(&self, y: &Vector4<f64>, t: f64, with_jacobian: bool) -> (Vector4<f64>, Matrix4<f64>) {
        // a fixed step count keeps the discrete flow smooth in t; |t| < δ bounds the step by δ/64
        let n = FLOW_STEPS;
        let h = -t / n as f64;
        let mut x = *y;
        let mut m = Matrix4::identity();
        for _ in 0..n {
            if with_jacobian {
                let (k1, l1) = (self.field(&x), self.field_jacobian(&x) * m);
                let x2 = x + 0.5 * h * k1;
                let m2 = m + 0.5 * h * l1;
                let (k2, l2) = (self.field(&x2), self.field_jacobian(&x2) * m2);
                let x3 = x + 0.5 * h * k2;
                let m3 = m + 0.5 * h * l2;
                let (k3, l3) = (self.field(&x3), self.field_jacobian(&x3) * m3);
                let x4 = x + h * k3;
                let m4 = m + h * l3;
                let (k4, l4) = (self.field(&x4), self.field_jacobian(&x4) * m4);
                x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                m += (h / 6.0) * (l1 + 2.0 * l2 + 2.0 * l3 + l4);
            } else {
                let k1 = self.field(&x);
                let k2 = self.field(&(x + 0.5 * h * k1));
                let k3 = self.field(&(x + 0.5 * h * k2));
                let k4 = self.field(&(x + h * k3));
                x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
        }
        (x, m)
    }

    /// Time coordinate of `y`: `⟨Φ_{−t}(y) − p, v⟩ = 0`, or `None` outside the tube.
    fn time_of(&self, y: &Vector4<f64>) -> Option<f64> {
        let vp = self.field(&self.p).dot(&self.v);
        let mut t = (y - self.p).dot(&self.v) / vp;
        for _ in 0..40 {
            if t.abs() >= self.delta {
                return None;
            }
            let (x, _) = self.flow_back(y, t, false);
            let g = (x - self.p).dot(&self.v);
            let dg = -self.field(&x).dot(&self.v);
            if !(dg < 0.0) {
                return None;
            }
            let dt = -g / dg;
            t += dt;
            if dt.abs() <= 1e-15 * (1.0 + t.abs()) {
                break;
            }
        }
        (t.abs() < self.delta).then_some(t)
    }

    fn gradient(&self, y: &Vector4<f64>) -> Vector4<f64> {
        let d = y - self.p;
        let r = d.norm();
        if r >= self.cut.r1 {
            return Vector4::zeros();
        }
        let Some(t) = self.time_of(y) else {
            return Vector4::zeros();
        };
        let [b, b1, _] = self.beta.eval(t);
        let w = self.cut.r1 - self.cut.r0;
        let [s, s1, _] = smootherstep((r - self.cut.r0) / w);
        let eta = 1.0 - s;
        let (x, m) = self.flow_back(y, t, true);
        let grad_t = m.transpose() * self.v / self.field(&x).dot(&self.v);
        let grad_eta = if r > 0.0 { (-s1 / (w * r)) * d } else { Vector4::zeros() };
        b * grad_eta + eta * b1 * grad_t
    }

    fn value(&self, y: &Vector4<f64>) -> f64 {
        let r = (y - self.p).norm();
        if r >= self.cut.r1 {
            return 0.0;
        }
        let Some(t) = self.time_of(y) else {
            return 0.0;
        };
        let [s, _, _] = smootherstep((r - self.cut.r0) / (self.cut.r1 - self.cut.r0));
        (1.0 - s) * self.beta.eval(t)[0]
    }
}

impl JetFn for FlowAdapted {
    fn jet(&self, z: AmbientVector) -> Jet {
        let y = vec4(z);
        let mut h = Matrix4::zeros();
        for k in 0..4 {
            let mut e = Vector4::zeros();
            e[k] = FLOW_FD_STEP;
            let col = (self.gradient(&(y + e)) - self.gradient(&(y - e))) / (2.0 * FLOW_FD_STEP);
            h.set_column(k, &col);
        }
        Jet { v: self.value(&y), g: self.gradient(&y), h: 0.5 * (h + h.transpose()) }
    }
}

/// Builds `f = η·β(t)` where `t` is the flow time of `g₀·J·N` measured from the
/// hyperplane through the anchor orthogonal to `v`.
pub fn flow_adapted(d: &Domain, anchor: FlowAnchor, beta: Profile, delta: f64, cutoff: PlateauCutoff) -> Result<Hamiltonian> {
    let level = d.level_set().ok_or(Error::Unsupported("flow_adapted needs a level-set domain"))?.clone();
    if !(delta > 0.0) || !(cutoff.r0 >= 0.0 && cutoff.r1 > cutoff.r0) {
        return Err(Error::InvalidParameter(format!("delta {delta}, cutoff {cutoff:?}")));
    }
    let fp = (level.f)(anchor.p);
    if !(fp.abs() <= ON_BOUNDARY_TOL) {
        return Err(Error::NotOnBoundary(fp));
    }
    let g0 = anchor.g0 / anchor.g0.norm();
    let scale = 1.0 / (level.grad_f)(anchor.p).norm();
    let fa = FlowAdapted { level, p: vec4(anchor.p), v: vec4(anchor.v).normalize(), g0: complex_scalar_matrix(g0), scale, beta, delta, cut: cutoff };
    let vp = fa.field(&fa.p).dot(&fa.v);
    if !(vp > 0.0) {
        return Err(Error::FlowNotInvertible(format!("flow direction has ⟨V(p), v⟩ = {vp}")));
    }
    // transversality along the flow line through p
    for k in -64..=64 {
        let t = delta * k as f64 / 64.0;
        let (x, _) = fa.flow_back(&fa.p, t, false);
        let c = fa.field(&x).dot(&fa.v) / vp;
        if !(c >= 0.5) {
            return Err(Error::TubeTooLarge(format!("transversality {c:.3} at t = {t:.3}")));
        }
    }
    if cutoff.r1 > 0.5 * delta * vp {
        return Err(Error::TubeTooLarge(format!("cutoff radius {} exceeds half the tube", cutoff.r1)));
    }
    let name = format!("flow_adapted[{}]", fa.beta.name);
    let mut h = Hamiltonian::custom(
        name,
        Arc::new(fa),
        Admissibility::BoundaryTangent(match d {
            Domain::LevelSet(l) => l.name.clone(),
            Domain::CurveNormal(_) => "curve".into(),
        }),
    );
    h.support_hint = Some((anchor.p, cutoff.r1));
    Ok(h)
}

/// Flow line `Φ_t(p)` of the flow-adapted construction on the ball with `g₀ = 1`.
pub fn ball_flow_line(p: AmbientVector, t: f64) -> AmbientVector {
    let (s, c) = t.sin_cos();
    c * p + s * apply_j(p)
}

/// Equally spaced angles on [0, 2π).
pub fn angle_grid(n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |k| 2.0 * PI * k as f64 / n as f64)
}
