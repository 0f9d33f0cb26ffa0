//! Direct endpoint registration, the grid-warping baseline, warp sequences and the multiresolution schedule.

use std::collections::HashMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{build_basis, HarmonicWork, TangentBasis, DEFAULT_DEGREE};
use crate::density::{estimate_density, EndpointSet, GridScalar, KdeEngine, PairGrid};
use crate::energy::{
    apply_group_action_in_place, endpoint_gradient, grid_energy_gradient, sensitivity_in_place, warp_energy, GradientCoeffs, GridStencil,
    Resampler, WarpGrid,
};
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::mesh::{build_icosphere, IcosphereMesh};
use crate::sphere::{exp_raw, log_raw, Hemi, HemiPoint, SpherePoint, Vec3};

/// Maximum step halvings per iteration on orientation violation.
pub const MAX_HALVINGS: usize = 20;

/// One exp-map step along a basis-synthesized field per hemisphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Increment {
    pub step: f64,
    pub degree: usize,
    pub coeffs: [Vec<f64>; 2],
}

impl Increment {
    /// Displacement field at `p` on hemisphere `h`.
    pub fn velocity(&self, basis: &TangentBasis, h: Hemi, p: &Vec3, work: &mut HarmonicWork) -> Vec3 {
        basis.synthesize(p, &self.coeffs[h.index()], work) * self.step
    }

    pub fn apply(&self, basis: &TangentBasis, h: Hemi, p: &Vec3, work: &mut HarmonicWork) -> Vec3 {
        exp_raw(p, &self.velocity(basis, h, p, work))
    }

    /// Preimage of `x` under the increment by fixed-point iteration.
    pub fn invert(&self, basis: &TangentBasis, h: Hemi, x: &Vec3, work: &mut HarmonicWork) -> Vec3 {
        let mut y = exp_raw(x, &-self.velocity(basis, h, x, work));
        for _ in 0..100 {
            let fy = self.apply(basis, h, &y, work);
            match log_raw(&fy, x) {
                Some(d) if d.norm() > 1e-15 => {
                    let d = d - y * y.dot(&d);
                    y = exp_raw(&y, &d);
                }
                _ => break,
            }
        }
        y
    }
}

/// Cumulative warp stored as its increments; the empty sequence is the identity.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WarpSequence {
    pub increments: Vec<Increment>,
}

/// Bases keyed by degree.
#[derive(Debug, Default, Clone)]
pub struct BasisCache(HashMap<usize, TangentBasis>);

impl BasisCache {
    pub fn get(&mut self, degree: usize) -> Result<&TangentBasis> {
        if !self.0.contains_key(&degree) {
            self.0.insert(degree, build_basis(degree)?);
        }
        Ok(&self.0[&degree])
    }
}

impl WarpSequence {
    pub fn identity() -> Self {
        WarpSequence::default()
    }

    pub fn len(&self) -> usize {
        self.increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }

    pub fn push(&mut self, inc: Increment) {
        self.increments.push(inc);
    }

    pub fn extend(&mut self, other: WarpSequence) {
        self.increments.extend(other.increments);
    }

    /// Applies every increment in order to raw points.
    pub fn apply_raw(&self, points: &mut [(Hemi, Vec3)]) -> Result<()> {
        let mut cache = BasisCache::default();
        for inc in &self.increments {
            cache.get(inc.degree)?;
        }
        for inc in &self.increments {
            let basis = &cache.0[&inc.degree];
            points.par_iter_mut().for_each_init(HarmonicWork::default, |work, (h, p)| {
                *p = inc.apply(basis, *h, p, work);
            });
        }
        Ok(())
    }

    pub fn apply_points(&self, pts: &[HemiPoint]) -> Result<Vec<HemiPoint>> {
        let mut raw: Vec<(Hemi, Vec3)> = pts.iter().map(|p| (p.hemi, *p.coords())).collect();
        self.apply_raw(&mut raw)?;
        Ok(raw.into_iter().map(|(h, p)| HemiPoint::new(h, SpherePoint::from_unit(p))).collect())
    }

    /// Warp of the grid vertices of both hemispheres.
    pub fn grid(&self, mesh: &IcosphereMesh) -> Result<WarpGrid> {
        let n = mesh.num_vertices();
        let mut raw: Vec<(Hemi, Vec3)> =
            [Hemi::One, Hemi::Two].iter().flat_map(|&h| mesh.vertices().iter().map(move |v| (h, *v))).collect();
        self.apply_raw(&mut raw)?;
        let t1 = raw[..n].iter().map(|r| r.1).collect();
        let t2 = raw[n..].iter().map(|r| r.1).collect();
        Ok(WarpGrid::from_targets(mesh, t1, t2))
    }
}

/// Moves every endpoint through the warp; hemisphere tags, ids and labels are kept.
pub fn apply_warp(warp: &WarpSequence, pts: &EndpointSet) -> Result<EndpointSet> {
    let moved = warp.apply_points(&pts.endpoints())?;
    let pairs = moved.chunks(2).map(|c| crate::density::EndpointPair::new(c[0], c[1])).collect();
    Ok(pts.with_pairs(pairs))
}

/// Registration settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    pub sigma: f64,
    pub step: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub grid_level: usize,
    pub basis_degree: usize,
    pub kde_every: usize,
    pub multires: Option<Vec<(usize, f64)>>,
    pub seed: u64,
    pub deterministic: bool,
    /// Kernel value cutoff as a fraction of the peak.
    pub value_cutoff: f64,
    /// Grids at or above this level are stored in single precision.
    pub single_precision_from: usize,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            sigma: 0.005,
            step: 0.1,
            tol: 1e-6,
            max_iters: 200,
            grid_level: 4,
            basis_degree: DEFAULT_DEGREE,
            kde_every: 1,
            multires: None,
            seed: 0,
            deterministic: true,
            value_cutoff: 1e-4,
            single_precision_from: 5,
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.sigma > 0.0) {
            return bad("sigma must be positive");
        }
        if !(self.step > 0.0) {
            return bad("delta must be positive");
        }
        if !(self.tol > 0.0) {
            return bad("epsilon must be positive");
        }
        if self.kde_every == 0 {
            return bad("kde_every must be at least 1");
        }
        if !(0.0..1.0).contains(&self.value_cutoff) {
            return bad("value_cutoff must lie in [0, 1)");
        }
        if self.grid_level > crate::mesh::MAX_LEVEL {
            return Err(Error::LevelTooLarge(self.grid_level));
        }
        if self.basis_degree == 0 || self.basis_degree > crate::basis::MAX_DEGREE {
            return Err(Error::DegreeTooLarge(self.basis_degree));
        }
        Ok(())
    }

    pub fn kernel(&self) -> KernelSpec {
        KernelSpec::new(self.sigma).with_cutoff(self.value_cutoff)
    }
}

/// Wall-clock seconds per phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub gradient: f64,
    pub update: f64,
    pub kde: f64,
}

impl Timing {
    pub fn total(&self) -> f64 {
        self.gradient + self.update + self.kde
    }

    pub fn add(&mut self, o: &Timing) {
        self.gradient += o.gradient;
        self.update += o.update;
        self.kde += o.kde;
    }

    /// (phase, percent, seconds per iteration) rows.
    pub fn breakdown(&self, iterations: usize) -> Vec<(&'static str, f64, f64)> {
        let total = self.total().max(1e-300);
        let it = iterations.max(1) as f64;
        vec![
            ("gradient estimation", 100.0 * self.gradient / total, self.gradient / it),
            ("endpoint update", 100.0 * self.update / total, self.update / it),
            ("KDE evaluation", 100.0 * self.kde / total, self.kde / it),
        ]
    }

    /// Name of the phase with the largest share.
    pub fn dominant(&self) -> &'static str {
        self.breakdown(1).into_iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap().0
    }
}

/// Outcome of a registration.
#[derive(Debug, Clone)]
pub struct AlignResult {
    pub aligned: EndpointSet,
    pub warp: WarpSequence,
    pub energy_trace: Vec<f64>,
    pub gradient_norm_trace: Vec<[f64; 2]>,
    pub iterations: usize,
    pub converged: bool,
    pub timing: Timing,
    /// Step halvings forced by orientation checks.
    pub halvings: usize,
    /// Largest count of non-positive warped faces seen after any accepted increment.
    pub max_negative_faces: usize,
    /// Warped grid vertices of the returned warp.
    pub grid: Option<WarpGrid>,
}

impl AlignResult {
    /// Mean geodesic displacement between the original and aligned endpoints.
    pub fn mean_displacement(&self, original: &EndpointSet) -> f64 {
        let a = original.endpoints();
        let b = self.aligned.endpoints();
        a.iter().zip(&b).map(|(x, y)| crate::sphere::angle_raw(x.coords(), y.coords())).sum::<f64>() / a.len() as f64
    }
}

fn check_inputs(fixed: &EndpointSet, moving: &EndpointSet, cfg: &AlignConfig) -> Result<()> {
    if fixed.is_empty() || moving.is_empty() {
        return Err(Error::EmptyEndpointSet);
    }
    cfg.validate()
}

/// Proposes an increment along -g and halves the step until the cumulative grid stays orientation-positive.
struct StepControl<'a> {
    mesh: &'a IcosphereMesh,
    basis: &'a TangentBasis,
    grid: Vec<(Hemi, Vec3)>,
    halvings: usize,
    max_negative: usize,
}

impl<'a> StepControl<'a> {
    fn new(mesh: &'a IcosphereMesh, basis: &'a TangentBasis) -> Self {
        let grid = [Hemi::One, Hemi::Two].iter().flat_map(|&h| mesh.vertices().iter().map(move |v| (h, *v))).collect();
        StepControl { mesh, basis, grid, halvings: 0, max_negative: 0 }
    }

    fn warp_grid(&self, pts: &[(Hemi, Vec3)]) -> WarpGrid {
        let n = self.mesh.num_vertices();
        WarpGrid::from_targets(self.mesh, pts[..n].iter().map(|p| p.1).collect(), pts[n..].iter().map(|p| p.1).collect())
    }

    fn propose(&mut self, g: &GradientCoeffs, step: f64) -> Increment {
        let coeffs = [g.coeffs[0].iter().map(|v| -v).collect(), g.coeffs[1].iter().map(|v| -v).collect()];
        let mut inc = Increment { step, degree: self.basis.max_degree(), coeffs };
        let mut last = None;
        for k in 0..=MAX_HALVINGS {
            let moved: Vec<(Hemi, Vec3)> = self
                .grid
                .par_iter()
                .map_init(HarmonicWork::default, |w, (h, p)| (*h, inc.apply(self.basis, *h, p, w)))
                .collect();
            let neg = self.warp_grid(&moved).negative_faces(self.mesh);
            if neg == 0 || k == MAX_HALVINGS {
                self.max_negative = self.max_negative.max(neg);
                last = Some(moved);
                break;
            }
            inc.step *= 0.5;
            self.halvings += 1;
        }
        self.grid = last.unwrap();
        inc
    }

    fn current(&self) -> WarpGrid {
        self.warp_grid(&self.grid)
    }
}

fn move_points(points: &mut [HemiPoint], inc: &Increment, basis: &TangentBasis) {
    points.par_iter_mut().for_each_init(HarmonicWork::default, |w, p| {
        let q = inc.apply(basis, p.hemi, p.coords(), w);
        *p = HemiPoint::new(p.hemi, SpherePoint::from_unit(q));
    });
}

/// Pullback of a grid by the inverse of one increment, in place.
fn warp_grid_by_increment<T: GridScalar>(q: &mut PairGrid<T>, inc: &Increment, basis: &TangentBasis, mesh: &IcosphereMesh) -> Result<()> {
    let inv = WarpGrid::from_map(mesh, |h, v| inc.invert(basis, h, v, &mut HarmonicWork::default()));
    let s = Resampler::new(&inv, mesh)?;
    apply_group_action_in_place(q, &s);
    Ok(())
}

fn sqrt_grid<T: GridScalar>(f: &PairGrid<f64>) -> PairGrid<T> {
    f.map(|v| T::from_f64(v.max(0.0).sqrt()))
}

/// Direct endpoint registration of `moving` onto `fixed`.
pub fn register_endpoints(fixed: &EndpointSet, moving: &EndpointSet, cfg: &AlignConfig) -> Result<AlignResult> {
    check_inputs(fixed, moving, cfg)?;
    if cfg.grid_level >= cfg.single_precision_from {
        register_endpoints_with::<f32>(fixed, moving, cfg)
    } else {
        register_endpoints_with::<f64>(fixed, moving, cfg)
    }
}

fn register_endpoints_with<T: GridScalar>(fixed: &EndpointSet, moving: &EndpointSet, cfg: &AlignConfig) -> Result<AlignResult> {
    let mesh = build_icosphere(cfg.grid_level)?;
    let basis = build_basis(cfg.basis_degree)?;
    let spec = cfg.kernel();
    let engine = KdeEngine::new(&mesh, spec);
    let mut timing = Timing::default();

    let t = Instant::now();
    let q1: PairGrid<T> = {
        let dk = engine.kernels(fixed);
        let mut f = PairGrid::<T>::zeros(mesh.num_vertices());
        engine.estimate_into(&dk, &mut f);
        f.map(|v| T::from_f64(v.to_f64().max(0.0).sqrt()))
    };
    timing.kde += t.elapsed().as_secs_f64();

    let stencil = if cfg.kde_every > 1 { Some(GridStencil::new(&mesh)) } else { None };
    let mut points = moving.endpoints();
    let mut work = PairGrid::<T>::zeros(mesh.num_vertices());
    let mut proxy: Option<PairGrid<T>> = None;
    let mut ctl = StepControl::new(&mesh, &basis);
    let mut warp = WarpSequence::identity();
    let mut energy_trace = Vec::new();
    let mut gradient_norm_trace = Vec::new();
    let mut converged = false;

    for k in 0..cfg.max_iters {
        let g = if k % cfg.kde_every == 0 {
            let t = Instant::now();
            let dk = engine.kernels(&moving.with_pairs(points.chunks(2).map(|c| crate::density::EndpointPair::new(c[0], c[1])).collect()));
            engine.estimate_into(&dk, &mut work);
            if cfg.kde_every > 1 {
                proxy = Some(work.map(|v| T::from_f64(v.to_f64().max(0.0).sqrt())));
            }
            timing.kde += t.elapsed().as_secs_f64();
            let t = Instant::now();
            let e = sensitivity_in_place(&q1, &mut work, engine.weights());
            let forces = engine.endpoint_forces(&dk, &work);
            let g = endpoint_gradient(&points, &forces, &basis);
            timing.gradient += t.elapsed().as_secs_f64();
            energy_trace.push(e);
            g
        } else {
            let t = Instant::now();
            let q2 = proxy.as_ref().expect("proxy grid");
            let e = warp_energy(&q1, q2, &mesh);
            let g = grid_energy_gradient(&q1, q2, &basis, &mesh, stencil.as_ref().unwrap());
            timing.gradient += t.elapsed().as_secs_f64();
            energy_trace.push(e);
            g
        };
        gradient_norm_trace.push(g.l2_norms);
        if g.l2_norms[0] < cfg.tol && g.l2_norms[1] < cfg.tol {
            converged = true;
            break;
        }
        let t = Instant::now();
        let inc = ctl.propose(&g, cfg.step);
        move_points(&mut points, &inc, &basis);
        timing.update += t.elapsed().as_secs_f64();
        if (k + 1) % cfg.kde_every != 0 && k + 1 < cfg.max_iters {
            let t = Instant::now();
            warp_grid_by_increment(proxy.as_mut().unwrap(), &inc, &basis, &mesh)?;
            timing.update += t.elapsed().as_secs_f64();
        }
        warp.push(inc);
    }
    let iterations = energy_trace.len();
    finish(moving, warp, energy_trace, gradient_norm_trace, iterations, converged, timing, &ctl, &mesh)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    moving: &EndpointSet,
    mut warp: WarpSequence,
    mut energy_trace: Vec<f64>,
    mut gradient_norm_trace: Vec<[f64; 2]>,
    iterations: usize,
    converged: bool,
    timing: Timing,
    ctl: &StepControl,
    mesh: &IcosphereMesh,
) -> Result<AlignResult> {
    let mut grid = ctl.current();
    if !converged {
        // Keep the lowest-energy iterate; energy k is measured after k increments.
        let best = energy_trace.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|b| b.0).unwrap_or(0);
        if best < warp.len() {
            warp.increments.truncate(best);
            energy_trace.truncate(best + 1);
            gradient_norm_trace.truncate(best + 1);
            grid = warp.grid(mesh)?;
        }
    }
    let aligned = apply_warp(&warp, moving)?;
    Ok(AlignResult {
        aligned,
        warp,
        energy_trace,
        gradient_norm_trace,
        iterations,
        converged,
        timing,
        halvings: ctl.halvings,
        max_negative_faces: ctl.max_negative,
        grid: Some(grid),
    })
}

/// Grid-warping baseline: the moving density is estimated once and then only resampled.
pub fn register_encore(fixed: &EndpointSet, moving: &EndpointSet, cfg: &AlignConfig) -> Result<AlignResult> {
    check_inputs(fixed, moving, cfg)?;
    if cfg.grid_level >= cfg.single_precision_from {
        register_encore_with::<f32>(fixed, moving, cfg)
    } else {
        register_encore_with::<f64>(fixed, moving, cfg)
    }
}

fn register_encore_with<T: GridScalar>(fixed: &EndpointSet, moving: &EndpointSet, cfg: &AlignConfig) -> Result<AlignResult> {
    let mesh = build_icosphere(cfg.grid_level)?;
    let basis = build_basis(cfg.basis_degree)?;
    let spec = cfg.kernel();
    let mut timing = Timing::default();
    let t = Instant::now();
    let q1: PairGrid<T> = sqrt_grid(&estimate_density(fixed, &mesh, &spec)?);
    let mut q2: PairGrid<T> = sqrt_grid(&estimate_density(moving, &mesh, &spec)?);
    timing.kde += t.elapsed().as_secs_f64();
    let stencil = GridStencil::new(&mesh);
    let mut ctl = StepControl::new(&mesh, &basis);
    let mut warp = WarpSequence::identity();
    let mut energy_trace = Vec::new();
    let mut gradient_norm_trace = Vec::new();
    let mut converged = false;
    for _ in 0..cfg.max_iters {
        let t = Instant::now();
        energy_trace.push(warp_energy(&q1, &q2, &mesh));
        let g = grid_energy_gradient(&q1, &q2, &basis, &mesh, &stencil);
        timing.gradient += t.elapsed().as_secs_f64();
        gradient_norm_trace.push(g.l2_norms);
        if g.l2_norms[0] < cfg.tol && g.l2_norms[1] < cfg.tol {
            converged = true;
            break;
        }
        let t = Instant::now();
        let inc = ctl.propose(&g, cfg.step);
        warp_grid_by_increment(&mut q2, &inc, &basis, &mesh)?;
        timing.update += t.elapsed().as_secs_f64();
        warp.push(inc);
    }
    let iterations = energy_trace.len();
    finish(moving, warp, energy_trace, gradient_norm_trace, iterations, converged, timing, &ctl, &mesh)
}

/// Runs the endpoint method over a coarse-to-fine schedule of (level, sigma) stages.
pub fn run_multiresolution(fixed: &EndpointSet, moving: &EndpointSet, cfg: &AlignConfig) -> Result<AlignResult> {
    let schedule = match &cfg.multires {
        Some(s) if !s.is_empty() => s.clone(),
        _ => return Err(Error::Config("multiresolution schedule is empty".into())),
    };
    if schedule.windows(2).any(|w| w[1].0 < w[0].0) {
        return Err(Error::Config("multiresolution stages must have non-decreasing grid level".into()));
    }
    let mut current = moving.clone();
    let mut total: Option<AlignResult> = None;
    for &(level, sigma) in &schedule {
        let stage_cfg = AlignConfig { grid_level: level, sigma, multires: None, ..cfg.clone() };
        let r = register_endpoints(fixed, &current, &stage_cfg)?;
        current = r.aligned.clone();
        total = Some(match total {
            None => r,
            Some(mut acc) => {
                acc.warp.extend(r.warp);
                acc.energy_trace.extend(r.energy_trace);
                acc.gradient_norm_trace.extend(r.gradient_norm_trace);
                acc.iterations += r.iterations;
                acc.converged = r.converged;
                acc.timing.add(&r.timing);
                acc.halvings += r.halvings;
                acc.max_negative_faces = acc.max_negative_faces.max(r.max_negative_faces);
                acc.grid = r.grid;
                acc
            }
        });
    }
    let mut out = total.unwrap();
    out.aligned = apply_warp(&out.warp, moving)?;
    if schedule.len() > 1 {
        let mesh = build_icosphere(schedule.last().unwrap().0)?;
        out.grid = Some(out.warp.grid(&mesh)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{FieldKind, FieldInfo};
    use crate::density::EndpointPair;
    use nalgebra::{Rotation3, Unit};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
        loop {
            let v = Vec3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
            if v.norm() > 0.1 && v.norm() < 0.5 {
                return v.normalize();
            }
        }
    }

    fn blob_set(n: usize, seed: u64) -> EndpointSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = [Vec3::new(0.3, 0.2, 0.9), Vec3::new(-0.6, 0.4, 0.5), Vec3::new(0.1, -0.9, 0.2)];
        let pairs = (0..n)
            .map(|k| {
                let mut jit = |c: &Vec3| SpherePoint::new(c.normalize() + random_unit(&mut rng) * 0.25);
                let h1 = if k % 4 == 3 { Hemi::Two } else { Hemi::One };
                let h2 = if k % 3 == 1 { Hemi::Two } else { h1 };
                EndpointPair::new(HemiPoint::new(h1, jit(&c[k % 3])), HemiPoint::new(h2, jit(&c[(k + 1) % 3])))
            })
            .collect();
        EndpointSet::new(pairs)
    }

    fn single(coeffs: Vec<f64>, step: f64, degree: usize) -> WarpSequence {
        WarpSequence { increments: vec![Increment { step, degree, coeffs: [coeffs.clone(), coeffs] }] }
    }

    #[test]
    fn identity_warps_leave_points_unchanged() {
        let pts = blob_set(50, 1);
        assert_eq!(apply_warp(&WarpSequence::identity(), &pts).unwrap(), pts);
        let zero = single(vec![0.0; 6], 0.3, 1);
        assert_eq!(apply_warp(&zero, &pts).unwrap(), pts);
    }

    #[test]
    fn rotational_field_rotates_about_z() {
        let basis = build_basis(1).unwrap();
        let k = basis.fields().iter().position(|f| *f == FieldInfo { kind: FieldKind::Rotational, l: 1, m: 0 }).unwrap();
        let mut c = vec![0.0; basis.len()];
        c[k] = 1.0;
        let w = single(c, 0.2, 1);
        // Unit speed on the equator: |p x z| sqrt(3/4pi)/sqrt(2) = sqrt(3/(8 pi)).
        let speed = (3.0 / (8.0 * std::f64::consts::PI)).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let phi = rng.random::<f64>() * 6.28;
            let p = Vec3::new(phi.cos(), phi.sin(), 0.0);
            let r = Rotation3::from_axis_angle(&Unit::new_normalize(Vec3::z()), -0.2 * speed);
            let out = w.apply_points(&[HemiPoint::new(Hemi::One, SpherePoint::from_unit(p))]).unwrap();
            assert!((out[0].coords() - r * p).norm() < 1e-9);
            // Off the equator a single exp step travels the great circle tangent to the latitude circle.
            let q = random_unit(&mut rng);
            let out = w.apply_points(&[HemiPoint::new(Hemi::Two, SpherePoint::from_unit(q))]).unwrap();
            let rho = (1.0 - q.z * q.z).sqrt();
            assert!((crate::sphere::angle_raw(&q, out[0].coords()) - 0.2 * speed * rho).abs() < 1e-9);
        }
    }

    #[test]
    fn increment_inverse_round_trip() {
        let basis = build_basis(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c: Vec<f64> = (0..basis.len()).map(|_| rng.random::<f64>() - 0.5).collect();
        let inc = Increment { step: 0.05, degree: 3, coeffs: [c.clone(), c] };
        let mut w = HarmonicWork::default();
        for _ in 0..100 {
            let x = random_unit(&mut rng);
            let y = inc.invert(&basis, Hemi::One, &x, &mut w);
            assert!((inc.apply(&basis, Hemi::One, &y, &mut w) - x).norm() < 1e-12);
        }
    }

    fn small_cfg() -> AlignConfig {
        AlignConfig { sigma: 0.03, step: 0.1, tol: 1e-6, max_iters: 30, grid_level: 2, basis_degree: 3, ..AlignConfig::default() }
    }

    #[test]
    fn identical_sets_stop_immediately() {
        let pts = blob_set(300, 5);
        for r in [register_endpoints(&pts, &pts, &small_cfg()).unwrap(), register_encore(&pts, &pts, &small_cfg()).unwrap()] {
            assert!(r.converged);
            assert_eq!(r.iterations, 1);
            assert!(r.mean_displacement(&pts) < 0.5f64.to_radians());
        }
    }

    #[test]
    fn registration_reduces_energy_and_replays() {
        let fixed = blob_set(400, 6);
        let truth = single((0..30).map(|i| if i == 2 || i == 17 { 1.0 } else { 0.0 }).collect(), 0.15, 3);
        let moving = apply_warp(&truth, &fixed).unwrap();
        let cfg = small_cfg();
        let snapshot = fixed.clone();
        let r = register_endpoints(&fixed, &moving, &cfg).unwrap();
        assert_eq!(fixed, snapshot);
        assert!(r.energy_trace.last().unwrap() < &(0.5 * r.energy_trace[0]), "{:?}", r.energy_trace);
        assert_eq!(r.max_negative_faces, 0);
        let replay = apply_warp(&r.warp, &moving).unwrap();
        for (a, b) in replay.endpoints().iter().zip(r.aligned.endpoints()) {
            assert!((a.coords() - b.coords()).norm() < 1e-9);
            assert_eq!(a.hemi, b.hemi);
        }
        for (a, b) in moving.endpoints().iter().zip(r.aligned.endpoints()) {
            assert_eq!(a.hemi, b.hemi);
        }
        let e = register_encore(&fixed, &moving, &cfg).unwrap();
        assert!(e.energy_trace.last().unwrap() < &e.energy_trace[0]);
        assert_eq!(e.max_negative_faces, 0);
    }

    #[test]
    fn periodic_kde_mode_descends() {
        let fixed = blob_set(400, 7);
        let truth = single((0..30).map(|i| if i == 4 { 1.0 } else { 0.0 }).collect(), 0.15, 3);
        let moving = apply_warp(&truth, &fixed).unwrap();
        let cfg = AlignConfig { kde_every: 3, max_iters: 12, ..small_cfg() };
        let r = register_endpoints(&fixed, &moving, &cfg).unwrap();
        assert!(r.energy_trace.last().unwrap() < &r.energy_trace[0]);
    }

    #[test]
    fn encore_energy_non_increasing_with_small_steps() {
        let fixed = blob_set(400, 8);
        let truth = single((0..30).map(|i| if i == 1 || i == 20 { 1.0 } else { 0.0 }).collect(), 0.15, 3);
        let moving = apply_warp(&truth, &fixed).unwrap();
        let cfg = AlignConfig { step: 0.01, max_iters: 10, ..small_cfg() };
        let r = register_encore(&fixed, &moving, &cfg).unwrap();
        for w in r.energy_trace.windows(2) {
            assert!(w[1] <= w[0], "{:?}", r.energy_trace);
        }
    }

    #[test]
    fn multiresolution_schedules() {
        let pts = blob_set(200, 9);
        let truth = single((0..30).map(|i| if i == 5 { 1.0 } else { 0.0 }).collect(), 0.1, 3);
        let moving = apply_warp(&truth, &pts).unwrap();
        let cfg = AlignConfig { max_iters: 5, ..small_cfg() };
        assert!(matches!(run_multiresolution(&pts, &moving, &AlignConfig { multires: Some(vec![]), ..cfg.clone() }), Err(Error::Config(_))));
        let one = run_multiresolution(&pts, &moving, &AlignConfig { multires: Some(vec![(2, 0.03)]), ..cfg.clone() }).unwrap();
        let direct = register_endpoints(&pts, &moving, &cfg).unwrap();
        assert_eq!(one.warp, direct.warp);
        assert_eq!(one.aligned, direct.aligned);
        let two = run_multiresolution(&pts, &moving, &AlignConfig { multires: Some(vec![(1, 0.06), (2, 0.03)]), ..cfg }).unwrap();
        let replay = apply_warp(&two.warp, &moving).unwrap();
        assert_eq!(replay, two.aligned);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let pts = blob_set(10, 10);
        assert!(matches!(register_endpoints(&pts, &pts, &AlignConfig { kde_every: 0, ..small_cfg() }), Err(Error::Config(_))));
        assert!(matches!(register_endpoints(&pts, &pts, &AlignConfig { step: 0.0, ..small_cfg() }), Err(Error::Config(_))));
        assert_eq!(register_endpoints(&EndpointSet::new(vec![]), &pts, &small_cfg()).unwrap_err(), Error::EmptyEndpointSet);
    }
}
