//! Truncated spherical heat kernel, its gradient, sparse assembly and tabulation.

use std::f64::consts::PI;

use crate::sphere::{HemiPoint, TangentVector, Vec3};

pub const DEFAULT_SPECTRAL_TOL: f64 = 1e-10;
pub const DEFAULT_VALUE_CUTOFF: f64 = 1e-8;
pub const MAX_TRUNCATION: usize = 256;

/// Bandwidth, truncation and sparsification of the heat kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub sigma: f64,
    pub truncation: usize,
    pub value_cutoff: f64,
    pub normalized: bool,
}

impl KernelSpec {
    /// Normalized kernel with the default spectral tolerance and value cutoff.
    pub fn new(sigma: f64) -> Self {
        assert!(sigma > 0.0, "sigma must be positive");
        KernelSpec {
            sigma,
            truncation: truncation_degree(sigma, DEFAULT_SPECTRAL_TOL),
            value_cutoff: DEFAULT_VALUE_CUTOFF,
            normalized: true,
        }
    }

    pub fn with_cutoff(mut self, cutoff: f64) -> Self {
        assert!((0.0..1.0).contains(&cutoff));
        self.value_cutoff = cutoff;
        self
    }

    pub fn with_truncation(mut self, h: usize) -> Self {
        self.truncation = h;
        self
    }

    pub fn unnormalized(mut self) -> Self {
        self.normalized = false;
        self
    }

    /// Spectral weights (2l+1) e^{-l(l+1) sigma}, divided by 4 pi when normalized.
    pub fn spectral_weights(&self) -> Vec<f64> {
        let scale = if self.normalized { 1.0 / (4.0 * PI) } else { 1.0 };
        (0..=self.truncation)
            .map(|l| {
                let l = l as f64;
                scale * (2.0 * l + 1.0) * (-l * (l + 1.0) * self.sigma).exp()
            })
            .collect()
    }

    /// Kernel value at coincident points.
    pub fn peak(&self) -> f64 {
        self.spectral_weights().iter().sum()
    }

    /// Cosine of the angular radius beyond which the kernel is treated as zero.
    pub fn support_cos(&self) -> f64 {
        if self.value_cutoff <= 0.0 {
            return -1.0;
        }
        let w = self.spectral_weights();
        let thr = self.value_cutoff * w.iter().sum::<f64>();
        let below = |theta: f64| kernel_sum(&w, theta.cos()) < thr;
        let step = (self.sigma.sqrt() / 50.0).min(0.01);
        let mut hi = step;
        while hi < PI && !below(hi) {
            hi += step;
        }
        if hi >= PI {
            return -1.0;
        }
        let mut lo = hi - step;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if below(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo.cos()
    }
}

/// Smallest H with e^{-H(H+1) sigma} <= tol, capped at 256.
pub fn truncation_degree(sigma: f64, spectral_tol: f64) -> usize {
    let target = -spectral_tol.ln();
    (0..MAX_TRUNCATION)
        .find(|&h| (h * (h + 1)) as f64 * sigma >= target)
        .unwrap_or(MAX_TRUNCATION)
}

/// Legendre polynomials P_0(t)..P_H(t).
pub fn legendre_all(t: f64, h: usize) -> Vec<f64> {
    let mut p = vec![0.0; h + 1];
    p[0] = 1.0;
    if h >= 1 {
        p[1] = t;
    }
    for l in 1..h {
        let lf = l as f64;
        p[l + 1] = ((2.0 * lf + 1.0) * t * p[l] - lf * p[l - 1]) / (lf + 1.0);
    }
    p
}

/// Legendre polynomials and their derivatives, via P'_{l+1} = P'_{l-1} + (2l+1) P_l.
pub fn legendre_with_derivatives(t: f64, h: usize) -> (Vec<f64>, Vec<f64>) {
    let p = legendre_all(t, h);
    let mut d = vec![0.0; h + 1];
    if h >= 1 {
        d[1] = 1.0;
    }
    for l in 1..h {
        d[l + 1] = d[l - 1] + (2 * l + 1) as f64 * p[l];
    }
    (p, d)
}

/// Orthonormal real spherical harmonics of degree <= h at unit `p`, stored at l*l + l + m.
pub fn real_harmonics(p: &Vec3, h: usize, out: &mut [f64]) {
    let (x, y, z) = (p.x, p.y, p.z);
    let sqrt2 = std::f64::consts::SQRT_2;
    // Normalized associated Legendre values divided by sin^m; (cm, sm) = (x + iy)^m.
    let mut qmm = (0.25 / PI).sqrt();
    let (mut cm, mut sm) = (1.0, 0.0);
    for m in 0..=h {
        if m > 0 {
            qmm *= ((2 * m + 1) as f64 / (2 * m) as f64).sqrt();
            (cm, sm) = (cm * x - sm * y, cm * y + sm * x);
        }
        let (mut q2, mut q1) = (0.0, qmm);
        for l in m..=h {
            if l > m {
                let (lf, mf) = (l as f64, m as f64);
                let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
                let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0)).sqrt();
                let q = a * (z * q1 - b * q2);
                q2 = q1;
                q1 = q;
            }
            let c = l * l + l;
            if m == 0 {
                out[c] = q1;
            } else {
                out[c + m] = sqrt2 * q1 * cm;
                out[c - m] = sqrt2 * q1 * sm;
            }
        }
    }
}

/// Unclamped spectral sum at t, evaluated by the three-term recurrence.
fn kernel_sum(weights: &[f64], t: f64) -> f64 {
    let mut p0 = 1.0;
    let mut p1 = t;
    let mut s = weights[0];
    if weights.len() > 1 {
        s += weights[1] * t;
    }
    for (l, w) in weights.iter().enumerate().skip(2) {
        let lf = (l - 1) as f64;
        let p2 = ((2.0 * lf + 1.0) * t * p1 - lf * p0) / (lf + 1.0);
        s += w * p2;
        p0 = p1;
        p1 = p2;
    }
    s
}

/// Zonal profile K(t) for t = x.y on a single sphere, clamped at zero.
pub fn kernel_profile_value(t: f64, spec: &KernelSpec) -> f64 {
    kernel_sum(&spec.spectral_weights(), t.clamp(-1.0, 1.0)).max(0.0)
}

/// Derivative dK/dt of the clamped profile.
pub fn kernel_profile_derivative(t: f64, spec: &KernelSpec) -> f64 {
    let t = t.clamp(-1.0, 1.0);
    let w = spec.spectral_weights();
    let (p, d) = legendre_with_derivatives(t, spec.truncation);
    let v: f64 = w.iter().zip(&p).map(|(a, b)| a * b).sum();
    if v < 0.0 {
        return 0.0;
    }
    w.iter().zip(&d).map(|(a, b)| a * b).sum()
}

/// Heat kernel between two points of the two-sphere union.
pub fn heat_kernel(x: &HemiPoint, y: &HemiPoint, spec: &KernelSpec) -> f64 {
    if x.hemi != y.hemi {
        return 0.0;
    }
    kernel_profile_value(x.point.dot(&y.point), spec)
}

/// Surface gradient of the heat kernel with respect to `x`.
pub fn heat_kernel_grad(x: &HemiPoint, y: &HemiPoint, spec: &KernelSpec) -> TangentVector {
    if x.hemi != y.hemi {
        return TangentVector::zero(x.point);
    }
    let (xc, yc) = (x.coords(), y.coords());
    let t = xc.dot(yc);
    let d = kernel_profile_derivative(t, spec);
    TangentVector { base: x.point, vec: (yc - xc * t) * d }
}

/// Row-compressed sparse kernel matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseKernelMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseKernelMatrix {
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (c, v) = self.row(i);
        match c.binary_search(&(j as u32)) {
            Ok(k) => v[k],
            Err(_) => 0.0,
        }
    }
}

/// Kernel matrix between grid points (rows) and data points (columns).
pub fn heat_kernel_matrix(grid: &[HemiPoint], data: &[HemiPoint], spec: &KernelSpec) -> SparseKernelMatrix {
    let w = spec.spectral_weights();
    let tc = spec.support_cos();
    let mut row_ptr = Vec::with_capacity(grid.len() + 1);
    let mut cols = Vec::new();
    let mut values = Vec::new();
    row_ptr.push(0);
    for g in grid {
        for (j, d) in data.iter().enumerate() {
            if g.hemi != d.hemi {
                continue;
            }
            let t = g.point.dot(&d.point).clamp(-1.0, 1.0);
            if t < tc {
                continue;
            }
            let v = kernel_sum(&w, t);
            if v > 0.0 {
                cols.push(j as u32);
                values.push(v);
            }
        }
        row_ptr.push(cols.len());
    }
    SparseKernelMatrix { n_rows: grid.len(), n_cols: data.len(), row_ptr, cols, values }
}

/// Legendre values and derivatives cached at fixed arguments, reusable across bandwidths.
#[derive(Debug, Clone)]
pub struct LegendreCache {
    ts: Vec<f64>,
    max_degree: usize,
    p: Vec<f64>,
    dp: Vec<f64>,
}

impl LegendreCache {
    pub fn new(ts: Vec<f64>, max_degree: usize) -> Self {
        let stride = max_degree + 1;
        let mut p = Vec::with_capacity(ts.len() * stride);
        let mut dp = Vec::with_capacity(ts.len() * stride);
        for &t in &ts {
            let (a, b) = legendre_with_derivatives(t, max_degree);
            p.extend_from_slice(&a);
            dp.extend_from_slice(&b);
        }
        LegendreCache { ts, max_degree, p, dp }
    }

    pub fn arguments(&self) -> &[f64] {
        &self.ts
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    /// Clamped kernel values and derivatives at the cached arguments.
    pub fn kernel(&self, spec: &KernelSpec) -> (Vec<f64>, Vec<f64>) {
        assert!(spec.truncation <= self.max_degree, "cache degree too small");
        let w = spec.spectral_weights();
        let stride = self.max_degree + 1;
        let mut vals = Vec::with_capacity(self.ts.len());
        let mut ders = Vec::with_capacity(self.ts.len());
        for i in 0..self.ts.len() {
            let p = &self.p[i * stride..i * stride + w.len()];
            let d = &self.dp[i * stride..i * stride + w.len()];
            let v: f64 = w.iter().zip(p).map(|(a, b)| a * b).sum();
            if v < 0.0 {
                vals.push(0.0);
                ders.push(0.0);
            } else {
                vals.push(v);
                ders.push(w.iter().zip(d).map(|(a, b)| a * b).sum());
            }
        }
        (vals, ders)
    }
}

/// Cubic Hermite tabulation of the kernel profile on [t_c, 1], zero below t_c.
#[derive(Debug, Clone)]
pub struct KernelProfile {
    t0: f64,
    h: f64,
    cutoff_t: f64,
    values: Vec<f64>,
    derivs: Vec<f64>,
    peak: f64,
}

impl KernelProfile {
    /// Node spacing 5e-3 sigma, giving ~1e-13 relative interpolation error.
    pub fn new(spec: &KernelSpec) -> Self {
        let tc = spec.support_cos();
        let cache = Self::node_cache(tc, spec.sigma * 5e-3, spec.truncation);
        Self::from_cache(&cache, spec)
    }

    /// Uniform nodes on [t_lo, 1] for use with `from_cache`.
    pub fn node_cache(t_lo: f64, spacing: f64, max_degree: usize) -> LegendreCache {
        let n = (((1.0 - t_lo) / spacing).ceil() as usize).clamp(64, 4_000_000);
        let h = (1.0 - t_lo) / n as f64;
        let ts: Vec<f64> = (0..=n).map(|k| if k == n { 1.0 } else { t_lo + k as f64 * h }).collect();
        LegendreCache::new(ts, max_degree)
    }

    /// Builds the table from cached Legendre values at uniform nodes.
    pub fn from_cache(cache: &LegendreCache, spec: &KernelSpec) -> Self {
        let ts = cache.arguments();
        let n = ts.len() - 1;
        let t0 = ts[0];
        let h = (1.0 - t0) / n as f64;
        let (values, derivs) = cache.kernel(spec);
        let peak = spec.peak();
        let cutoff_t = spec.support_cos().max(t0);
        KernelProfile { t0, h, cutoff_t, values, derivs, peak }
    }

    pub fn peak(&self) -> f64 {
        self.peak
    }

    /// Cosine of the support radius.
    pub fn support_cos(&self) -> f64 {
        self.cutoff_t
    }

    /// Kernel value at t = x.y.
    #[inline]
    pub fn value(&self, t: f64) -> f64 {
        self.eval(t).0
    }

    /// Kernel value and dK/dt at t = x.y (derivative of the interpolant).
    #[inline]
    pub fn eval(&self, t: f64) -> (f64, f64) {
        if t < self.cutoff_t {
            return (0.0, 0.0);
        }
        let t = t.min(1.0);
        let u = (t - self.t0) / self.h;
        let n = self.values.len() - 1;
        let k = (u as usize).min(n - 1);
        let s = u - k as f64;
        let (y0, y1) = (self.values[k], self.values[k + 1]);
        let (m0, m1) = (self.derivs[k] * self.h, self.derivs[k + 1] * self.h);
        let s2 = s * s;
        let s3 = s2 * s;
        let v = (2.0 * s3 - 3.0 * s2 + 1.0) * y0
            + (s3 - 2.0 * s2 + s) * m0
            + (-2.0 * s3 + 3.0 * s2) * y1
            + (s3 - s2) * m1;
        if v <= 0.0 {
            return (0.0, 0.0);
        }
        let dv = (6.0 * s2 - 6.0 * s) * y0 + (3.0 * s2 - 4.0 * s + 1.0) * m0 + (-6.0 * s2 + 6.0 * s) * y1 + (3.0 * s2 - 2.0 * s) * m1;
        (v, dv / self.h)
    }

    /// Surface gradient with respect to `x` of K(x.y).
    #[inline]
    pub fn grad(&self, x: &Vec3, y: &Vec3) -> Vec3 {
        let t = x.dot(y);
        let (_, d) = self.eval(t);
        (y - x * t) * d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_icosphere, vertex_weights};
    use crate::sphere::{Hemi, SpherePoint};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_point(rng: &mut ChaCha8Rng) -> SpherePoint {
        loop {
            let v = Vec3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
            if v.norm() > 0.1 && v.norm() < 0.5 {
                return SpherePoint::new(v);
            }
        }
    }

    #[test]
    fn real_harmonics_satisfy_addition_theorem() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let h = 120;
        let (mut yx, mut yy) = (vec![0.0; (h + 1) * (h + 1)], vec![0.0; (h + 1) * (h + 1)]);
        for _ in 0..20 {
            let (x, y) = (random_point(&mut rng), random_point(&mut rng));
            real_harmonics(x.coords(), h, &mut yx);
            real_harmonics(y.coords(), h, &mut yy);
            let p = legendre_all(x.coords().dot(y.coords()), h);
            for l in 0..=h {
                let r = l * l..(l + 1) * (l + 1);
                let s: f64 = yx[r.clone()].iter().zip(&yy[r]).map(|(a, b)| a * b).sum();
                let want = (2 * l + 1) as f64 / (4.0 * PI) * p[l];
                assert!((s - want).abs() < 1e-10 * (2 * l + 1) as f64, "l={l} {s} {want}");
            }
        }
        // Poles are regular.
        real_harmonics(&Vec3::z(), 10, &mut yx);
        assert!(yx[..121].iter().all(|v| v.is_finite()));
        assert!((yx[0] - (0.25 / PI).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn truncation_examples() {
        assert_eq!(truncation_degree(0.005, 1e-10), 68);
        assert_eq!(truncation_degree(1.0, 1e-10), 5);
        assert_eq!(truncation_degree(0.3, 1.0), 0);
        assert_eq!(KernelSpec::new(0.005).truncation, 68);
    }

    #[test]
    fn legendre_examples() {
        assert!(legendre_all(1.0, 40).iter().all(|&p| (p - 1.0).abs() < 1e-12));
        assert!((legendre_all(0.5, 2)[2] + 0.125).abs() < 1e-15);
        for (l, p) in legendre_all(-1.0, 30).iter().enumerate() {
            assert!((p - if l % 2 == 0 { 1.0 } else { -1.0 }).abs() < 1e-12);
        }
        let (_, d) = legendre_with_derivatives(1.0, 20);
        for (l, dl) in d.iter().enumerate() {
            assert!((dl - (l * (l + 1)) as f64 / 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn derivative_identity_away_from_poles() {
        let t = 0.37;
        let (p, d) = legendre_with_derivatives(t, 30);
        for l in 1..=30 {
            let rhs = l as f64 * (p[l - 1] - t * p[l]) / (1.0 - t * t);
            assert!((d[l] - rhs).abs() < 1e-10 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn kernel_basic_properties() {
        let spec = KernelSpec::new(0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = HemiPoint::new(Hemi::One, random_point(&mut rng));
        let b = HemiPoint::new(Hemi::Two, a.point);
        assert_eq!(heat_kernel(&a, &b, &spec), 0.0);
        for _ in 0..100 {
            let x = HemiPoint::new(Hemi::One, random_point(&mut rng));
            let y = HemiPoint::new(Hemi::One, random_point(&mut rng));
            assert_eq!(heat_kernel(&x, &y, &spec), heat_kernel(&y, &x, &spec));
            assert!(heat_kernel(&x, &y, &spec) >= 0.0);
            assert!(heat_kernel(&x, &y, &spec) <= heat_kernel(&x, &x, &spec));
        }
    }

    #[test]
    fn truncation_stability() {
        for sigma in [0.001, 0.005, 0.05] {
            let spec = KernelSpec::new(sigma);
            let wider = spec.with_truncation(spec.truncation + 20);
            let peak = spec.peak();
            for k in 0..200 {
                let t = -1.0 + 2.0 * k as f64 / 199.0;
                let a = kernel_sum(&spec.spectral_weights(), t);
                let b = kernel_sum(&wider.spectral_weights(), t);
                assert!((a - b).abs() < 1e-8 * peak);
            }
        }
    }

    #[test]
    fn kernel_integrates_to_one() {
        let mesh = build_icosphere(5).unwrap();
        let w = vertex_weights(&mesh).weights;
        let x = SpherePoint::from_xyz(0.3, -0.2, 0.9);
        for sigma in [0.005, 0.05, 0.5] {
            let spec = KernelSpec::new(sigma);
            let s: f64 = mesh
                .vertices()
                .iter()
                .zip(&w)
                .map(|(v, wi)| wi * kernel_profile_value(v.dot(x.coords()), &spec))
                .sum();
            assert!((s - 1.0).abs() < 1e-3, "sigma {sigma}: {s}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let spec = KernelSpec::new(0.05);
        let x = HemiPoint::new(Hemi::One, SpherePoint::from_xyz(0.0, 0.0, 1.0));
        let y = HemiPoint::new(Hemi::One, SpherePoint::from_xyz(0.3f64.sin(), 0.0, 0.3f64.cos()));
        let g = heat_kernel_grad(&x, &y, &spec);
        assert!(g.vec.dot(x.coords()).abs() < 1e-12);
        let h = 1e-5;
        for dir in [Vec3::x(), Vec3::y()] {
            let step = |s: f64| {
                let p = crate::sphere::exp_raw(x.coords(), &(dir * s));
                heat_kernel(&HemiPoint::new(Hemi::One, SpherePoint::from_unit(p)), &y, &spec)
            };
            let fd = (step(h) - step(-h)) / (2.0 * h);
            let an = g.vec.dot(&dir);
            if an.abs() > 1e-8 {
                assert!(((fd - an) / an).abs() < 1e-6, "{fd} {an}");
            } else {
                assert!(fd.abs() < 1e-6);
            }
        }
        assert_eq!(heat_kernel_grad(&x, &x, &spec).vec, Vec3::zeros());
    }

    #[test]
    fn sparse_matrix_matches_scalar() {
        let mesh = build_icosphere(4).unwrap();
        let grid: Vec<HemiPoint> = (0..mesh.num_vertices()).map(|i| HemiPoint::new(Hemi::One, mesh.vertex(i))).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<HemiPoint> = (0..40)
            .map(|k| HemiPoint::new(if k % 4 == 0 { Hemi::Two } else { Hemi::One }, random_point(&mut rng)))
            .collect();
        let spec = KernelSpec::new(0.005);
        let m = heat_kernel_matrix(&grid, &data, &spec);
        let peak = spec.peak();
        let mut max_frac: f64 = 0.0;
        for i in 0..grid.len() {
            let (c, v) = m.row(i);
            for (&j, &val) in c.iter().zip(v) {
                assert_eq!(val, heat_kernel(&grid[i], &data[j as usize], &spec));
                assert!(val >= spec.value_cutoff * peak);
                assert_eq!(data[j as usize].hemi, Hemi::One);
            }
        }
        let data_grid: Vec<HemiPoint> = grid.clone();
        let full = heat_kernel_matrix(&grid[..50], &data_grid, &spec);
        for i in 0..50 {
            max_frac = max_frac.max((full.row_ptr[i + 1] - full.row_ptr[i]) as f64 / grid.len() as f64);
        }
        assert!(max_frac < 0.15, "{max_frac}");

        let dense = heat_kernel_matrix(&grid[..20], &data, &spec.with_cutoff(0.0));
        for i in 0..20 {
            for (j, d) in data.iter().enumerate() {
                let v = dense.get(i, j);
                if d.hemi == Hemi::Two {
                    assert_eq!(v, 0.0);
                } else {
                    assert_eq!(v, heat_kernel(&grid[i], d, &spec));
                }
            }
        }
    }

    #[test]
    fn cache_reuse_is_exact() {
        let ts: Vec<f64> = (0..500).map(|k| -1.0 + 2.0 * k as f64 / 499.0).collect();
        let cache = LegendreCache::new(ts.clone(), 200);
        for sigma in [0.002, 0.01, 0.1] {
            let spec = KernelSpec::new(sigma);
            let (v, d) = cache.kernel(&spec);
            for (k, &t) in ts.iter().enumerate() {
                assert!((v[k] - kernel_profile_value(t, &spec)).abs() <= 1e-14 * spec.peak());
                assert!((d[k] - kernel_profile_derivative(t, &spec)).abs() <= 1e-12 * spec.peak());
            }
        }
    }

    #[test]
    fn profile_matches_exact_kernel() {
        for sigma in [0.005, 0.05, 0.5] {
            let spec = KernelSpec::new(sigma);
            let prof = KernelProfile::new(&spec);
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            for _ in 0..2000 {
                let t = 1.0 - rng.random::<f64>() * (1.0 - prof.support_cos());
                let (v, d) = prof.eval(t);
                let e = kernel_profile_value(t, &spec);
                assert!((v - e).abs() < 1e-12 * spec.peak(), "{sigma} {t} {v} {e}");
                let ed = kernel_profile_derivative(t, &spec);
                assert!((d - ed).abs() < 1e-7 * spec.peak() / sigma, "{sigma} {t} {d} {ed}");
            }
            assert_eq!(prof.value(prof.support_cos() - 1e-9), 0.0);
        }
    }
}
