//! Ground-truth simulation: the vMF-mixture endpoint density, random smooth warps, and warp errors.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::align::{Increment, WarpSequence};
use crate::basis::{build_basis, FieldKind};
use crate::density::{EndpointPair, EndpointSet};
use crate::energy::WarpGrid;
use crate::error::Result;
use crate::mesh::{build_icosphere, IcosphereMesh};
use crate::sphere::{angle_raw, log_raw, tangent_frame, Hemi, HemiPoint, SpherePoint, Vec3};

/// Mixture weight and concentration of the simulated density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimDensitySpec {
    pub alpha: f64,
    pub kappa: f64,
}

impl Default for SimDensitySpec {
    fn default() -> Self {
        SimDensitySpec { alpha: 0.85, kappa: 10.0 }
    }
}

impl SimDensitySpec {
    /// Density at a point pair of the two-sphere union.
    pub fn density(&self, x: &HemiPoint, y: &HemiPoint) -> f64 {
        let c = 2.0 * (4.0 * PI).powi(2);
        if x.hemi == y.hemi {
            // e^{k t} / (sinh k / k) written as 2k e^{k(t-1)} / (1 - e^{-2k}) to avoid overflow.
            let k = self.kappa;
            let t = x.point.dot(&y.point);
            self.alpha * 2.0 * k * (k * (t - 1.0)).exp() / (1.0 - (-2.0 * k).exp()) / c
        } else {
            (1.0 - self.alpha) / c
        }
    }
}

/// Independent generator for pair `j` of a seeded draw.
pub fn pair_rng(seed: u64, j: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(j);
    rng
}

pub fn uniform_sphere<R: Rng>(rng: &mut R) -> SpherePoint {
    let z: f64 = rng.random_range(-1.0..=1.0);
    let phi: f64 = rng.random_range(0.0..2.0 * PI);
    let r = (1.0 - z * z).max(0.0).sqrt();
    SpherePoint::new(Vec3::new(r * phi.cos(), r * phi.sin(), z))
}

/// vMF draw around `mean` by the inverse CDF of w = mean.y.
pub fn sample_vmf<R: Rng>(rng: &mut R, mean: &Vec3, kappa: f64) -> SpherePoint {
    let u: f64 = rng.random();
    let w = (1.0 + (u + (1.0 - u) * (-2.0 * kappa).exp()).ln() / kappa).clamp(-1.0, 1.0);
    let phi: f64 = rng.random_range(0.0..2.0 * PI);
    let (e1, e2) = tangent_frame(mean);
    let s = (1.0 - w * w).max(0.0).sqrt();
    SpherePoint::new(mean * w + (e1 * phi.cos() + e2 * phi.sin()) * s)
}

/// Synthetic bundle label: hemisphere and level-0 face of the first endpoint.
pub fn synthetic_label(p: &HemiPoint, coarse: &IcosphereMesh) -> String {
    format!("h{}f{:02}", p.hemi.label(), coarse.locate(p.coords()))
}

/// Draws `n` endpoint pairs; pair `j` depends only on (seed, j).
pub fn sample_ground_truth(spec: &SimDensitySpec, n: usize, seed: u64) -> EndpointSet {
    let coarse = build_icosphere(0).expect("level 0");
    let pairs: Vec<EndpointPair> = (0..n as u64)
        .into_par_iter()
        .map(|j| {
            let mut rng = pair_rng(seed, j);
            let within = rng.random::<f64>() < spec.alpha;
            let h1 = if rng.random::<bool>() { Hemi::One } else { Hemi::Two };
            let x = uniform_sphere(&mut rng);
            if within {
                let y = sample_vmf(&mut rng, x.coords(), spec.kappa);
                EndpointPair::new(HemiPoint::new(h1, x), HemiPoint::new(h1, y))
            } else {
                let y = uniform_sphere(&mut rng);
                EndpointPair::new(HemiPoint::new(h1, x), HemiPoint::new(h1.other(), y))
            }
        })
        .collect();
    let labels = pairs.iter().map(|p| synthetic_label(&p.first, &coarse)).collect();
    EndpointSet::new(pairs).with_labels(labels)
}

/// Random smooth warp settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticWarpSpec {
    pub basis_degree: usize,
    /// Target mean geodesic displacement over the level-5 grid, radians.
    pub amplitude: f64,
    pub n_steps: usize,
    pub seed: u64,
}

impl Default for SyntheticWarpSpec {
    fn default() -> Self {
        SyntheticWarpSpec { basis_degree: 4, amplitude: 0.25, n_steps: 20, seed: 0 }
    }
}

/// A random warp together with the amplitude actually used.
#[derive(Debug, Clone)]
pub struct SyntheticWarp {
    pub warp: WarpSequence,
    pub amplitude: f64,
    /// Number of amplitude halvings forced by orientation checks.
    pub halvings: usize,
}

fn scaled_flow(coeffs: &[Vec<f64>; 2], degree: usize, scale: f64, n_steps: usize) -> WarpSequence {
    let inc = Increment { step: scale / n_steps as f64, degree, coeffs: coeffs.clone() };
    WarpSequence { increments: vec![inc; n_steps] }
}

/// Random band-limited flow split into equal exp-map steps, rescaled to the target mean displacement.
///
/// Degree-1 rotational fields are excluded: per-hemisphere rotations leave the simulated density unchanged.
pub fn random_diffeomorphism(spec: &SyntheticWarpSpec) -> Result<SyntheticWarp> {
    let basis = build_basis(spec.basis_degree)?;
    if spec.amplitude <= 0.0 {
        return Ok(SyntheticWarp { warp: WarpSequence::identity(), amplitude: 0.0, halvings: 0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut draw = || -> Vec<f64> {
        basis
            .fields()
            .iter()
            .map(|f| {
                let z: f64 = StandardNormal.sample(&mut rng);
                if f.kind == FieldKind::Rotational && f.l == 1 {
                    0.0
                } else {
                    z / f.l as f64
                }
            })
            .collect()
    };
    let coeffs = [draw(), draw()];
    let mesh = build_icosphere(5)?;
    let steps = spec.n_steps.max(1);
    let mean_disp = |s: f64| -> Result<f64> { Ok(scaled_flow(&coeffs, spec.basis_degree, s, steps).grid(&mesh)?.mean_displacement(&mesh)) };
    let mut amplitude = spec.amplitude;
    let mut halvings = 0;
    loop {
        // Secant iterations on the scale; displacement is close to linear in it.
        let mut s0 = 0.0;
        let mut d0 = 0.0;
        let mut s1 = amplitude / mean_disp(1.0)?.max(1e-12);
        let mut d1 = mean_disp(s1)?;
        for _ in 0..30 {
            if (d1 - amplitude).abs() < 1e-4 * amplitude {
                break;
            }
            let s2 = s1 + (amplitude - d1) * (s1 - s0) / (d1 - d0);
            s0 = s1;
            d0 = d1;
            s1 = s2.max(0.0);
            d1 = mean_disp(s1)?;
        }
        let warp = scaled_flow(&coeffs, spec.basis_degree, s1, steps);
        if warp.grid(&mesh)?.negative_faces(&mesh) == 0 {
            return Ok(SyntheticWarp { warp, amplitude, halvings });
        }
        amplitude *= 0.5;
        halvings += 1;
    }
}

impl WarpSequence {
    /// Preimage of `x` under the whole sequence.
    pub fn invert_point(&self, h: Hemi, x: &Vec3, cache: &mut crate::align::BasisCache, work: &mut crate::basis::HarmonicWork) -> Result<Vec3> {
        let mut y = *x;
        for inc in self.increments.iter().rev() {
            let basis = cache.get(inc.degree)?;
            y = inc.invert(basis, h, &y, work);
        }
        Ok(y)
    }

    /// Inverse warp on the grid vertices.
    pub fn inverse_grid(&self, mesh: &IcosphereMesh) -> Result<WarpGrid> {
        let mut cache = crate::align::BasisCache::default();
        for inc in &self.increments {
            cache.get(inc.degree)?;
        }
        let inv = |h: Hemi| -> Result<Vec<Vec3>> {
            mesh.vertices()
                .par_iter()
                .map_init(|| (cache.clone(), crate::basis::HarmonicWork::default()), |(c, w), v| self.invert_point(h, v, c, w))
                .collect()
        };
        let t1 = inv(Hemi::One)?;
        let t2 = inv(Hemi::Two)?;
        Ok(WarpGrid::from_targets(mesh, t1, t2))
    }
}

/// Warp error restricted to the vertices with the largest true displacement.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpErrorReport {
    pub mean_angular_deg: f64,
    pub mean_l2: f64,
    pub evaluated_vertex_count: usize,
    pub top_fraction: f64,
    /// log_{estimate(v)}(truth(v)) at each evaluated vertex, with its hemisphere and index.
    pub residuals: Vec<(Hemi, usize, Vec3)>,
}

/// Compares estimated and true vertex images over both hemispheres.
pub fn warp_error_metrics(truth: &WarpGrid, estimate: &WarpGrid, mesh: &IcosphereMesh, top_fraction: f64) -> WarpErrorReport {
    assert!(top_fraction > 0.0 && top_fraction <= 1.0);
    let verts = mesh.vertices();
    let mut all: Vec<(Hemi, usize, f64)> = Vec::with_capacity(2 * verts.len());
    for h in [Hemi::One, Hemi::Two] {
        for (i, v) in verts.iter().enumerate() {
            all.push((h, i, angle_raw(v, &truth.targets(h)[i])));
        }
    }
    let mut mags: Vec<f64> = all.iter().map(|a| a.2).collect();
    mags.sort_by(|a, b| a.total_cmp(b));
    let k = ((1.0 - top_fraction) * mags.len() as f64).floor() as usize;
    let thr = mags[k.min(mags.len() - 1)];
    let mut ang = 0.0;
    let mut l2 = 0.0;
    let mut residuals = Vec::new();
    for &(h, i, m) in &all {
        if m < thr {
            continue;
        }
        let t = truth.targets(h)[i];
        let e = estimate.targets(h)[i];
        ang += angle_raw(&e, &t);
        l2 += (e - t).norm();
        residuals.push((h, i, log_raw(&e, &t).unwrap_or_else(Vec3::zeros)));
    }
    let n = residuals.len();
    WarpErrorReport {
        mean_angular_deg: (ang / n as f64).to_degrees(),
        mean_l2: l2 / n as f64,
        evaluated_vertex_count: n,
        top_fraction,
        residuals,
    }
}
