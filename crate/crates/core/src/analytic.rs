//! Closed-form Hamiltonian stationary examples with exact frames and angles:
//! flat equatorial discs, Schoen–Wolfson cones and a non-minimal free-boundary map.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;

use crate::cplx2::{apply_i, apply_j, AmbientVector, TangentFrame, UnitComplex};
use crate::error::{Error, Result};
use crate::mesh::{DiscMesh, DiscreteMap, Point2};

pub type Unitary = [[Complex64; 2]; 2];

pub const UNITARY_TOL: f64 = 1e-12;

pub const IDENTITY: Unitary = [[Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)], [Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)]];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExampleKind {
    FlatDisc(Unitary),
    SwCone { p: i64, q: i64 },
    NonMinimal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExampleMap {
    pub kind: ExampleKind,
    pub singular_points: Vec<Point2>,
}

/// Frobenius norm of `U*U − id`.
pub fn unitarity_defect(u: &Unitary) -> f64 {
    let mut s = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let mut e = u[0][i].conj() * u[0][j] + u[1][i].conj() * u[1][j];
            if i == j {
                e -= 1.0;
            }
            s += e.norm_sqr();
        }
    }
    s.sqrt()
}

pub fn det(u: &Unitary) -> Complex64 {
    u[0][0] * u[1][1] - u[0][1] * u[1][0]
}

/// Haar-distributed element of U(2).
pub fn random_unitary<R: Rng + ?Sized>(rng: &mut R) -> Unitary {
    let mut g = || {
        // Box–Muller
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen();
        let r = (-2.0 * u1.ln()).sqrt();
        Complex64::new(r * (2.0 * PI * u2).cos(), r * (2.0 * PI * u2).sin())
    };
    let a = [g(), g()];
    let n = (a[0].norm_sqr() + a[1].norm_sqr()).sqrt();
    let (a, b) = (a[0] / n, a[1] / n);
    let phase = Complex64::from_polar(1.0, 2.0 * PI * rng.gen::<f64>());
    [[a * phase, -b.conj() * phase], [b * phase, a.conj() * phase]]
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

pub fn flat_disc(u: Unitary) -> Result<ExampleMap> {
    let d = unitarity_defect(&u);
    if !(d <= UNITARY_TOL) {
        return Err(Error::NotUnitary(d));
    }
    Ok(ExampleMap { kind: ExampleKind::FlatDisc(u), singular_points: Vec::new() })
}

pub fn sw_cone(p: i64, q: i64) -> Result<ExampleMap> {
    if p < 1 || q < 1 {
        return Err(Error::InvalidParameter(format!("cone exponents ({p}, {q}) must be positive")));
    }
    if gcd(p, q) != 1 {
        return Err(Error::NotCoprime(p, q));
    }
    let singular_points = if p == q { Vec::new() } else { vec![[0.0, 0.0]] };
    Ok(ExampleMap { kind: ExampleKind::SwCone { p, q }, singular_points })
}

pub fn nonminimal_map() -> ExampleMap {
    ExampleMap { kind: ExampleKind::NonMinimal, singular_points: Vec::new() }
}

impl ExampleMap {
    pub fn value(&self, x: f64, y: f64) -> AmbientVector {
        match self.kind {
            ExampleKind::FlatDisc(u) => AmbientVector::from_complex(u[0][0] * x + u[0][1] * y, u[1][0] * x + u[1][1] * y),
            ExampleKind::SwCone { .. } => {
                let r = x.hypot(y);
                self.value_polar(r, y.atan2(x))
            }
            ExampleKind::NonMinimal => AmbientVector::new(x.cos(), -x.sin(), 0.0, y),
        }
    }

    pub fn value_polar(&self, r: f64, theta: f64) -> AmbientVector {
        match self.kind {
            ExampleKind::SwCone { p, q } => {
                let (pf, qf) = (p as f64, q as f64);
                let s = r.powf((pf * qf).sqrt()) / (pf + qf).sqrt();
                let i = Complex64::i();
                AmbientVector::from_complex(s * qf.sqrt() * Complex64::from_polar(1.0, pf * theta), s * pf.sqrt() * i * Complex64::from_polar(1.0, -qf * theta))
            }
            _ => self.value(r * theta.cos(), r * theta.sin()),
        }
    }

    /// Polar derivatives `(∂_r u, ∂_θ u)`.
    pub fn polar_derivatives(&self, r: f64, theta: f64) -> (AmbientVector, AmbientVector) {
        match self.kind {
            ExampleKind::SwCone { p, q } => {
                let (pf, qf) = (p as f64, q as f64);
                let a = (pf * qf).sqrt();
                let s = r.powf(a) / (pf + qf).sqrt();
                let i = Complex64::i();
                let e1 = Complex64::from_polar(1.0, pf * theta);
                let e2 = Complex64::from_polar(1.0, -qf * theta);
                let dr = AmbientVector::from_complex(a * r.powf(a - 1.0) / (pf + qf).sqrt() * qf.sqrt() * e1, a * r.powf(a - 1.0) / (pf + qf).sqrt() * pf.sqrt() * i * e2);
                let dth = AmbientVector::from_complex(s * qf.sqrt() * i * pf * e1, s * pf.sqrt() * qf * e2);
                (dr, dth)
            }
            _ => {
                let f = self.frame(r * theta.cos(), r * theta.sin());
                let (s, c) = theta.sin_cos();
                (f.directional(c, s), r * f.directional(-s, c))
            }
        }
    }

    /// Cartesian frame `(∂_x u, ∂_y u)`.
    pub fn frame(&self, x: f64, y: f64) -> TangentFrame {
        match self.kind {
            ExampleKind::FlatDisc(u) => TangentFrame::new(AmbientVector::from_complex(u[0][0], u[1][0]), AmbientVector::from_complex(u[0][1], u[1][1])),
            ExampleKind::SwCone { p, q } => {
                let (pf, qf) = (p as f64, q as f64);
                let a = (pf * qf).sqrt();
                let r = x.hypot(y);
                let theta = y.atan2(x);
                let (s, c) = theta.sin_cos();
                // r^{a-1} times the r-independent parts of ∂_r and ∂_θ/r
                let k = r.powf(a - 1.0) / (pf + qf).sqrt();
                let i = Complex64::i();
                let e1 = Complex64::from_polar(1.0, pf * theta);
                let e2 = Complex64::from_polar(1.0, -qf * theta);
                let dr = AmbientVector::from_complex(k * a * qf.sqrt() * e1, k * a * pf.sqrt() * i * e2);
                let dth = AmbientVector::from_complex(k * qf.sqrt() * i * pf * e1, k * pf.sqrt() * qf * e2);
                TangentFrame::new(c * dr - s * dth, s * dr + c * dth)
            }
            ExampleKind::NonMinimal => TangentFrame::new(AmbientVector::new(-x.sin(), -x.cos(), 0.0, 0.0), AmbientVector::new(0.0, 0.0, 0.0, 1.0)),
        }
    }

    /// Lagrangian angle `ḡ`.
    pub fn angle(&self, x: f64, y: f64) -> UnitComplex {
        match self.kind {
            ExampleKind::FlatDisc(u) => UnitComplex::normalize(det(&u)).unwrap_or(UnitComplex::ONE),
            ExampleKind::SwCone { p, q } => UnitComplex::from_angle((p - q) as f64 * y.atan2(x)),
            ExampleKind::NonMinimal => UnitComplex::from_angle(-x),
        }
    }

    /// `ḡ∇g`, purely imaginary.
    pub fn angle_log_gradient(&self, x: f64, y: f64) -> [Complex64; 2] {
        let i = Complex64::i();
        match self.kind {
            ExampleKind::FlatDisc(_) => [Complex64::new(0.0, 0.0); 2],
            ExampleKind::SwCone { p, q } => {
                let r2 = x * x + y * y;
                let k = -((p - q) as f64) / r2;
                [i * (k * -y), i * (k * x)]
            }
            ExampleKind::NonMinimal => [i, Complex64::new(0.0, 0.0)],
        }
    }

    /// `iḡ∇g`; constant `(−1, 0)` for the non-minimal map.
    pub fn exact_angle_flux(&self, x: f64, y: f64) -> [Complex64; 2] {
        let w = self.angle_log_gradient(x, y);
        [Complex64::i() * w[0], Complex64::i() * w[1]]
    }

    /// `iḡ∇^⊥g` with `∇^⊥ = (−∂_y, ∂_x)`.
    pub fn exact_angle_flux_perp(&self, x: f64, y: f64) -> [Complex64; 2] {
        let w = self.exact_angle_flux(x, y);
        [-w[1], w[0]]
    }

    /// Conformal factor `e^{2λ} = |∂_x u|²`.
    pub fn conformal_factor(&self, x: f64, y: f64) -> f64 {
        self.frame(x, y).e_x.norm_sq()
    }

    /// The boundary field `X = ḡ·J(∂_τu) + G·I(∂_τu)` of the non-minimal map.
    pub fn boundary_x(&self, theta: f64) -> Result<AmbientVector> {
        if self.kind != ExampleKind::NonMinimal {
            return Err(Error::Unsupported("boundary_X is defined for the non-minimal map only"));
        }
        let (s, c) = theta.sin_cos();
        let dtau = self.frame(c, s).directional(-s, c);
        let gbar = self.angle(c, s).to_complex();
        Ok(apply_j(dtau).cmul(gbar) + s * apply_i(dtau))
    }

    pub fn is_singular(&self, p: Point2) -> bool {
        self.singular_points.iter().any(|s| (p[0] - s[0]).hypot(p[1] - s[1]) <= 1e-14)
    }

    /// Interpolates the example on a mesh, attaching exact nodal frames.
    pub fn sample(&self, mesh: &DiscMesh) -> DiscreteMap {
        let values = mesh.nodes.iter().map(|p| self.value(p[0], p[1])).collect();
        let frames = mesh.nodes.iter().map(|&p| if self.is_singular(p) { TangentFrame::ZERO } else { self.frame(p[0], p[1]) }).collect();
        DiscreteMap::with_frames(mesh.clone(), values, Some(frames)).expect("analytic examples are finite")
    }
}

/// Name of an example family as given on the command line: `flat`, `sw:p,q`, `nonminimal`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExampleName {
    Flat,
    Sw(i64, i64),
    NonMinimal,
}

impl FromStr for ExampleName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("unknown example '{s}'"));
        match s.trim() {
            "flat" => Ok(Self::Flat),
            "nonminimal" => Ok(Self::NonMinimal),
            t => {
                let rest = t.strip_prefix("sw:").ok_or_else(bad)?;
                let (p, q) = rest.split_once(',').ok_or_else(bad)?;
                Ok(Self::Sw(p.trim().parse().map_err(|_| bad())?, q.trim().parse().map_err(|_| bad())?))
            }
        }
    }
}

impl fmt::Display for ExampleName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Flat => write!(f, "flat"),
            Self::Sw(p, q) => write!(f, "sw:{p},{q}"),
            Self::NonMinimal => write!(f, "nonminimal"),
        }
    }
}

impl serde::Serialize for ExampleName {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl ExampleName {
    /// Builds the example; `flat` uses `u`.
    pub fn build(&self, u: Unitary) -> Result<ExampleMap> {
        match *self {
            Self::Flat => flat_disc(u),
            Self::Sw(p, q) => sw_cone(p, q),
            Self::NonMinimal => Ok(nonminimal_map()),
        }
    }
}
