//! Geometry on the unit sphere and on the two-sphere union.

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Below this tangent norm `exp_map` returns its base point unchanged.
const EXP_EPS: f64 = 1e-14;

/// Unit vector in R^3.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpherePoint(Vec3);

impl SpherePoint {
    /// Normalizes `v`; panics on the zero vector.
    pub fn new(v: Vec3) -> Self {
        let n = v.norm();
        assert!(n > 0.0 && n.is_finite(), "cannot normalize {v:?}");
        SpherePoint(v / n)
    }

    pub fn from_xyz(x: f64, y: f64, z: f64) -> Self {
        Self::new(Vec3::new(x, y, z))
    }

    /// Wraps a vector that is already unit length.
    pub fn from_unit(v: Vec3) -> Self {
        debug_assert!((v.norm() - 1.0).abs() < 1e-9);
        SpherePoint(v)
    }

    pub fn coords(&self) -> &Vec3 {
        &self.0
    }

    pub fn dot(&self, other: &SpherePoint) -> f64 {
        self.0.dot(&other.0)
    }
}

/// Component of the two-sphere union.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Hemi {
    One,
    Two,
}

impl Hemi {
    pub fn index(self) -> usize {
        match self {
            Hemi::One => 0,
            Hemi::Two => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Hemi::One
        } else {
            Hemi::Two
        }
    }

    /// Label used in files (1 or 2).
    pub fn label(self) -> u8 {
        self.index() as u8 + 1
    }

    pub fn from_label(l: u8) -> Option<Self> {
        match l {
            1 => Some(Hemi::One),
            2 => Some(Hemi::Two),
            _ => None,
        }
    }

    pub fn other(self) -> Self {
        match self {
            Hemi::One => Hemi::Two,
            Hemi::Two => Hemi::One,
        }
    }
}

/// Point on one component of the two-sphere union.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HemiPoint {
    pub hemi: Hemi,
    pub point: SpherePoint,
}

impl HemiPoint {
    pub fn new(hemi: Hemi, point: SpherePoint) -> Self {
        HemiPoint { hemi, point }
    }

    pub fn coords(&self) -> &Vec3 {
        self.point.coords()
    }
}

/// Tangent vector attached to a base point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentVector {
    pub base: SpherePoint,
    pub vec: Vec3,
}

impl TangentVector {
    /// Projects `v` onto the tangent plane at `base`.
    pub fn project(base: SpherePoint, v: Vec3) -> Self {
        let b = base.coords();
        TangentVector { base, vec: v - b * b.dot(&v) }
    }

    pub fn zero(base: SpherePoint) -> Self {
        TangentVector { base, vec: Vec3::zeros() }
    }

    pub fn norm(&self) -> f64 {
        self.vec.norm()
    }
}

/// Exponential map on raw vectors: `x` unit, `v` tangent at `x`.
#[inline]
pub fn exp_raw(x: &Vec3, v: &Vec3) -> Vec3 {
    let n = v.norm();
    if n < EXP_EPS {
        return *x;
    }
    let (s, c) = n.sin_cos();
    let y = x * c + v * (s / n);
    y / y.norm()
}

/// Log map on raw vectors; `None` near the antipode.
#[inline]
pub fn log_raw(x: &Vec3, y: &Vec3) -> Option<Vec3> {
    let t = x.dot(y);
    if t < -1.0 + 1e-12 {
        return None;
    }
    let u = y - x * t;
    let un = u.norm();
    if un < 1e-300 {
        return Some(Vec3::zeros());
    }
    let theta = un.atan2(t);
    Some(u * (theta / un))
}

/// Geodesic angle between unit vectors.
#[inline]
pub fn angle_raw(x: &Vec3, y: &Vec3) -> f64 {
    x.cross(y).norm().atan2(x.dot(y))
}

pub fn exp_map(x: &SpherePoint, v: &TangentVector) -> SpherePoint {
    SpherePoint(exp_raw(x.coords(), &v.vec))
}

pub fn log_map(x: &SpherePoint, y: &SpherePoint) -> Result<TangentVector> {
    log_raw(x.coords(), y.coords())
        .map(|vec| TangentVector { base: *x, vec })
        .ok_or(Error::Antipodal)
}

pub fn geodesic_angle(x: &SpherePoint, y: &SpherePoint) -> f64 {
    angle_raw(x.coords(), y.coords())
}

/// Right-handed orthonormal frame (e1, e2) of the tangent plane at unit `p`, with e1 x e2 = p.
pub fn tangent_frame(p: &Vec3) -> (Vec3, Vec3) {
    let a = if p.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = (a - p * p.dot(&a)).normalize();
    let e2 = p.cross(&e1);
    (e1, e2)
}
