//! Linear algebra of C² viewed as the quaternions: complex structure `I`,
//! the anti-linear structure `J`, the symplectic form, the holomorphic area
//! form dz₁∧dz₂ and the Lagrangian angle of a tangent frame.
//!
//! `J(z₁, z₂) = (z̄₂, −z̄₁)`. With this sign the identity
//! `∂_θu / r = −ḡ · J ∂_r u` holds for every weakly conformal Lagrangian map
//! whose angle `ḡ` is read off `u*(dz₁∧dz₂) = e^{2λ} ḡ dx∧dy`.

use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default threshold below which `|e_x|² + |e_y|²` counts as a degenerate frame.
pub const DEGENERATE_FRAME_TOL: f64 = 1e-14;

/// A point or tangent vector of C², `(z₁, z₂) = (x1 + i·y1, x2 + i·y2)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AmbientVector {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl AmbientVector {
    pub const ZERO: AmbientVector = AmbientVector { x1: 0.0, y1: 0.0, x2: 0.0, y2: 0.0 };

    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    /// Checked constructor rejecting NaN/Inf components.
    pub fn try_new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let v = Self::new(x1, y1, x2, y2);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::InvalidParameter(format!("non-finite ambient vector {v:?}")))
        }
    }

    pub fn from_complex(z1: Complex64, z2: Complex64) -> Self {
        Self::new(z1.re, z1.im, z2.re, z2.im)
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn z1(self) -> Complex64 {
        Complex64::new(self.x1, self.y1)
    }

    pub fn z2(self) -> Complex64 {
        Complex64::new(self.x2, self.y2)
    }

    pub fn is_finite(self) -> bool {
        self.x1.is_finite() && self.y1.is_finite() && self.x2.is_finite() && self.y2.is_finite()
    }

    pub fn dot(self, o: Self) -> f64 {
        self.x1 * o.x1 + self.y1 * o.y1 + self.x2 * o.x2 + self.y2 * o.y2
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Multiplication by a complex scalar acting on both factors.
    pub fn cmul(self, c: Complex64) -> Self {
        Self::from_complex(c * self.z1(), c * self.z2())
    }

    pub fn max_abs(self) -> f64 {
        self.to_array().iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

impl Add for AmbientVector {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x1 + o.x1, self.y1 + o.y1, self.x2 + o.x2, self.y2 + o.y2)
    }
}

impl AddAssign for AmbientVector {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl Sub for AmbientVector {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x1 - o.x1, self.y1 - o.y1, self.x2 - o.x2, self.y2 - o.y2)
    }
}

impl SubAssign for AmbientVector {
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl Neg for AmbientVector {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x1, -self.y1, -self.x2, -self.y2)
    }
}

impl Mul<AmbientVector> for f64 {
    type Output = AmbientVector;
    fn mul(self, v: AmbientVector) -> AmbientVector {
        AmbientVector::new(self * v.x1, self * v.y1, self * v.x2, self * v.y2)
    }
}

impl Mul<f64> for AmbientVector {
    type Output = AmbientVector;
    fn mul(self, s: f64) -> AmbientVector {
        s * self
    }
}

/// A complex number of modulus one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitComplex {
    pub re: f64,
    pub im: f64,
}

impl UnitComplex {
    pub const ONE: UnitComplex = UnitComplex { re: 1.0, im: 0.0 };

    /// Normalizes `c`; returns `None` for zero or non-finite input.
    pub fn normalize(c: Complex64) -> Option<Self> {
        let m = c.norm();
        if m > 0.0 && m.is_finite() {
            Some(Self { re: c.re / m, im: c.im / m })
        } else {
            None
        }
    }

    pub fn from_angle(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self { re: c, im: s }
    }

    pub fn to_complex(self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }

    pub fn conj(self) -> Self {
        Self { re: self.re, im: -self.im }
    }

    pub fn arg(self) -> f64 {
        self.im.atan2(self.re)
    }
}

/// The partial derivatives `(∂_x u, ∂_y u)` at one parameter point.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TangentFrame {
    pub e_x: AmbientVector,
    pub e_y: AmbientVector,
}

impl TangentFrame {
    pub const ZERO: TangentFrame = TangentFrame { e_x: AmbientVector::ZERO, e_y: AmbientVector::ZERO };

    pub fn new(e_x: AmbientVector, e_y: AmbientVector) -> Self {
        Self { e_x, e_y }
    }

    /// Derivative along the unit direction `(c, s)` of the parameter disc.
    pub fn directional(&self, c: f64, s: f64) -> AmbientVector {
        c * self.e_x + s * self.e_y
    }

    pub fn is_zero(&self) -> bool {
        self.e_x.norm_sq() + self.e_y.norm_sq() == 0.0
    }
}

/// Complex multiplication by `i` on both factors.
pub fn apply_i(v: AmbientVector) -> AmbientVector {
    AmbientVector::new(-v.y1, v.x1, -v.y2, v.x2)
}

/// `J(z₁, z₂) = (z̄₂, −z̄₁)`.
pub fn apply_j(v: AmbientVector) -> AmbientVector {
    AmbientVector::new(v.x2, -v.y2, -v.x1, v.y1)
}

/// `K = I∘J`.
pub fn apply_k(v: AmbientVector) -> AmbientVector {
    apply_i(apply_j(v))
}

/// ω = dx₁∧dy₁ + dx₂∧dy₂.
pub fn symplectic(a: AmbientVector, b: AmbientVector) -> f64 {
    a.x1 * b.y1 - a.y1 * b.x1 + a.x2 * b.y2 - a.y2 * b.x2
}

/// dz₁∧dz₂(a, b).
pub fn holomorphic_area(a: AmbientVector, b: AmbientVector) -> Complex64 {
    a.z1() * b.z2() - a.z2() * b.z1()
}

/// Conformal factor `(|e_x|² + |e_y|²)/2` and Lagrangian angle `ḡ` of a frame,
/// with `dz₁∧dz₂(e_x, e_y) = |dz₁∧dz₂(e_x, e_y)| · ḡ`.
///
/// A frame spanning a complex line has `dz₁∧dz₂ = 0`; it carries no angle and
/// is reported as degenerate as well.
pub fn lagrangian_angle(f: &TangentFrame, tol: f64) -> Result<(f64, UnitComplex)> {
    let s = f.e_x.norm_sq() + f.e_y.norm_sq();
    if !(s > tol) {
        return Err(Error::DegenerateFrame(s));
    }
    let area = holomorphic_area(f.e_x, f.e_y);
    if area.norm() <= tol * s {
        return Err(Error::DegenerateFrame(area.norm()));
    }
    let angle = UnitComplex::normalize(area).ok_or(Error::DegenerateFrame(area.norm()))?;
    Ok((0.5 * s, angle))
}
