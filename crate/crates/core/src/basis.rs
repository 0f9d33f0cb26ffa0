//! Real vector spherical harmonics: gradient and rotational tangent fields with analytic divergence.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::sphere::{SpherePoint, TangentVector, Vec3};

pub const MAX_DEGREE: usize = 16;
pub const DEFAULT_DEGREE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Gradient,
    Rotational,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldInfo {
    pub kind: FieldKind,
    pub l: usize,
    pub m: i64,
}

/// Orthonormal tangent fields for degrees 1..=L, ordered by (kind, l, m).
#[derive(Debug, Clone)]
pub struct TangentBasis {
    max_degree: usize,
    fields: Vec<FieldInfo>,
    /// Scalar harmonic normalization indexed by l*(L+1)+|m|.
    norms: Vec<f64>,
}

/// Number of scalar harmonics with 1 <= l <= L.
pub fn harmonic_count(l: usize) -> usize {
    l * l + 2 * l
}

#[inline]
fn harmonic_index(l: usize, m: i64) -> usize {
    ((l * l + l) as i64 + m - 1) as usize
}

pub fn build_basis(max_degree: usize) -> Result<TangentBasis> {
    if max_degree == 0 || max_degree > MAX_DEGREE {
        return Err(Error::DegreeTooLarge(max_degree));
    }
    let mut fields = Vec::with_capacity(2 * harmonic_count(max_degree));
    for kind in [FieldKind::Gradient, FieldKind::Rotational] {
        for l in 1..=max_degree {
            for m in -(l as i64)..=(l as i64) {
                fields.push(FieldInfo { kind, l, m });
            }
        }
    }
    let stride = max_degree + 1;
    let mut norms = vec![0.0; stride * stride];
    for l in 0..=max_degree {
        for m in 0..=l {
            let ratio: f64 = ((l - m + 1)..=(l + m)).map(|k| k as f64).product();
            let mut n = ((2 * l + 1) as f64 / (4.0 * PI) / ratio).sqrt();
            if m > 0 {
                n *= 2f64.sqrt();
            }
            norms[l * stride + m] = n;
        }
    }
    Ok(TangentBasis { max_degree, fields, norms })
}

impl TangentBasis {
    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    /// Number of fields M = 2(L^2 + 2L).
    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn fields(&self) -> &[FieldInfo] {
        &self.fields
    }

    /// Scalar harmonics Y_lm and their surface gradients at unit `p`, for 1 <= l <= L.
    pub fn harmonics(&self, p: &Vec3, y: &mut [f64], grad: &mut [Vec3]) {
        let lmax = self.max_degree;
        let stride = lmax + 1;
        let (x, yy, z) = (p.x, p.y, p.z);
        // q[m*(stride+1) + l] = d^m P_l / dz^m, for l up to lmax and m up to lmax+1.
        let qs = stride + 1;
        let mut q = [0.0f64; (MAX_DEGREE + 2) * (MAX_DEGREE + 2)];
        let mut dfact = 1.0;
        for m in 0..=stride {
            if m > 0 {
                dfact *= (2 * m - 1) as f64;
            }
            if m > lmax {
                break;
            }
            q[m * qs + m] = dfact;
            if m < lmax {
                q[m * qs + m + 1] = (2 * m + 1) as f64 * z * dfact;
            }
            for l in (m + 1)..lmax {
                q[m * qs + l + 1] =
                    ((2 * l + 1) as f64 * z * q[m * qs + l] - (l + m) as f64 * q[m * qs + l - 1]) / (l - m + 1) as f64;
            }
        }
        let mut c = [0.0f64; MAX_DEGREE + 1];
        let mut s = [0.0f64; MAX_DEGREE + 1];
        c[0] = 1.0;
        for m in 0..lmax {
            c[m + 1] = x * c[m] - yy * s[m];
            s[m + 1] = x * s[m] + yy * c[m];
        }
        let project = |g: Vec3| g - p * p.dot(&g);
        for l in 1..=lmax {
            let n0 = self.norms[l * stride];
            let i0 = harmonic_index(l, 0);
            y[i0] = n0 * q[l];
            grad[i0] = project(Vec3::new(0.0, 0.0, n0 * q[qs + l]));
            for m in 1..=l {
                let n = self.norms[l * stride + m];
                let qm = q[m * qs + l];
                let qd = if m + 1 <= l { q[(m + 1) * qs + l] } else { 0.0 };
                let mf = m as f64;
                let ic = harmonic_index(l, m as i64);
                let is = harmonic_index(l, -(m as i64));
                y[ic] = n * qm * c[m];
                y[is] = n * qm * s[m];
                grad[ic] = project(Vec3::new(n * qm * mf * c[m - 1], -n * qm * mf * s[m - 1], n * qd * c[m]));
                grad[is] = project(Vec3::new(n * qm * mf * s[m - 1], n * qm * mf * c[m - 1], n * qd * s[m]));
            }
        }
    }

    /// All field values at unit `p` into `out` (length M); divergences into `div` if given.
    pub fn eval_into(&self, p: &Vec3, out: &mut [Vec3], div: Option<&mut [f64]>) {
        let h = harmonic_count(self.max_degree);
        let mut y = vec![0.0; h];
        let mut g = vec![Vec3::zeros(); h];
        self.harmonics(p, &mut y, &mut g);
        for l in 1..=self.max_degree {
            let inv = 1.0 / ((l * (l + 1)) as f64).sqrt();
            for k in harmonic_index(l, -(l as i64))..=harmonic_index(l, l as i64) {
                out[k] = g[k] * inv;
                out[h + k] = p.cross(&g[k]) * inv;
            }
        }
        if let Some(div) = div {
            for l in 1..=self.max_degree {
                let s = ((l * (l + 1)) as f64).sqrt();
                for k in harmonic_index(l, -(l as i64))..=harmonic_index(l, l as i64) {
                    div[k] = -s * y[k];
                    div[h + k] = 0.0;
                }
            }
        }
    }

    /// Field sum_i c_i b_i(p) at unit `p`.
    pub fn synthesize(&self, p: &Vec3, coeffs: &[f64], work: &mut HarmonicWork) -> Vec3 {
        let h = harmonic_count(self.max_degree);
        work.ensure(h);
        self.harmonics(p, &mut work.y, &mut work.g);
        let mut grad = Vec3::zeros();
        let mut rot = Vec3::zeros();
        for l in 1..=self.max_degree {
            let inv = 1.0 / ((l * (l + 1)) as f64).sqrt();
            for k in harmonic_index(l, -(l as i64))..=harmonic_index(l, l as i64) {
                grad += work.g[k] * (coeffs[k] * inv);
                rot += work.g[k] * (coeffs[h + k] * inv);
            }
        }
        grad + p.cross(&rot)
    }
}

/// Scratch buffers for repeated harmonic evaluation.
#[derive(Debug, Default, Clone)]
pub struct HarmonicWork {
    y: Vec<f64>,
    g: Vec<Vec3>,
}

impl HarmonicWork {
    fn ensure(&mut self, h: usize) {
        if self.y.len() < h {
            self.y.resize(h, 0.0);
            self.g.resize(h, Vec3::zeros());
        }
    }
}

pub fn eval_basis(basis: &TangentBasis, p: &SpherePoint) -> Vec<TangentVector> {
    let mut out = vec![Vec3::zeros(); basis.len()];
    basis.eval_into(p.coords(), &mut out, None);
    out.into_iter().map(|vec| TangentVector { base: *p, vec }).collect()
}

pub fn basis_divergence(basis: &TangentBasis, p: &SpherePoint) -> Vec<f64> {
    let mut out = vec![Vec3::zeros(); basis.len()];
    let mut div = vec![0.0; basis.len()];
    basis.eval_into(p.coords(), &mut out, Some(&mut div));
    div
}

/// Real scalar harmonics Y_lm at `p` for 1 <= l <= L, ordered by (l, m).
pub fn scalar_harmonics(basis: &TangentBasis, p: &SpherePoint) -> Vec<f64> {
    let h = harmonic_count(basis.max_degree);
    let mut y = vec![0.0; h];
    let mut g = vec![Vec3::zeros(); h];
    basis.harmonics(p.coords(), &mut y, &mut g);
    y
}
