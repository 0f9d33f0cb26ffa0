//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.
//!
//! `ACCEPTANCE_ONLY=1,3,10` restricts the run to the listed criteria.

use std::cell::OnceCell;
use std::f64::consts::PI;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use sphereg::align::{apply_warp, register_encore, register_endpoints, AlignConfig, AlignResult};
use sphereg::basis::{build_basis, HarmonicWork, TangentBasis};
use sphereg::density::{
    estimate_density, grid_mass, grid_point, q_transform, Block, EndpointPair, EndpointSet, GridScalar, KdeEngine, PairGrid,
};
use sphereg::energy::{apply_group_action, endpoint_gradient, sensitivity_in_place, warp_energy};
use sphereg::kernel::{heat_kernel, heat_kernel_grad, truncation_degree, KernelSpec};
use sphereg::mesh::{build_icosphere, face_count, vertex_count, vertex_weights, IcosphereMesh};
use sphereg::metrics::{bin_endpoints, mmd, mmd_permutation_test, overlap_coefficient, ConnectivityCounts, MmdOptions};
use sphereg::sim::{random_diffeomorphism, sample_ground_truth, warp_error_metrics, SimDensitySpec, SyntheticWarpSpec};
use sphereg::sphere::{exp_raw, Hemi, HemiPoint, SpherePoint, Vec3};

/// Registration instance shared by the head-to-head checks.
const H2H_N: usize = 100_000;
const H2H_MAX_ITERS: usize = 85;
const H2H_AMPLITUDE: f64 = 0.25;
/// Smaller instance for the two-resolution comparison.
const RES_N: usize = 10_000;
const RES_MAX_ITERS: usize = 80;

struct Check {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: String) -> Check {
    Check { pass, detail }
}

// Independent oracles.

/// Heat kernel summed to degree 300 by the three-term Legendre recurrence.
fn series_kernel(t: f64, sigma: f64) -> f64 {
    let (mut p0, mut p1) = (1.0, t);
    let mut s = 1.0 + 3.0 * (-2.0 * sigma).exp() * t;
    for l in 2..=300usize {
        let lf = l as f64;
        let p2 = ((2.0 * lf - 1.0) * t * p1 - (lf - 1.0) * p0) / lf;
        s += (2.0 * lf + 1.0) * (-lf * (lf + 1.0) * sigma).exp() * p2;
        p0 = p1;
        p1 = p2;
    }
    s / (4.0 * PI)
}

fn naive_density(pts: &EndpointSet, x: &HemiPoint, y: &HemiPoint, sigma: f64) -> f64 {
    let k = |a: &HemiPoint, b: &HemiPoint| if a.hemi == b.hemi { series_kernel(a.point.dot(&b.point).clamp(-1.0, 1.0), sigma) } else { 0.0 };
    let s: f64 = pts.pairs().iter().map(|p| k(x, &p.first) * k(y, &p.second) + k(y, &p.first) * k(x, &p.second)).sum();
    0.5 * s / pts.len() as f64
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0);
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

fn fill_grid<T: GridScalar>(mesh: &IcosphereMesh, f: impl Fn(&HemiPoint, &HemiPoint) -> f64 + Sync) -> PairGrid<T> {
    let n = mesh.num_vertices();
    let mut g = PairGrid::<T>::zeros(n);
    for (blk, (h1, h2)) in Block::ALL.into_iter().zip([(Hemi::One, Hemi::One), (Hemi::Two, Hemi::Two), (Hemi::One, Hemi::Two)]) {
        g.block_mut(blk).par_chunks_mut(n).enumerate().for_each(|(a, row)| {
            let x = HemiPoint::new(h1, mesh.vertex(a));
            for (b, r) in row.iter_mut().enumerate() {
                *r = T::from_f64(f(&x, &HemiPoint::new(h2, mesh.vertex(b))));
            }
        });
    }
    g
}

fn l2_norm<T: GridScalar>(q: &PairGrid<T>, mesh: &IcosphereMesh) -> f64 {
    q.integrate(&vertex_weights(mesh).weights, |v| v * v).sqrt()
}

// Criteria.

fn mesh_exactness() -> Check {
    let t = Instant::now();
    let meshes: Vec<IcosphereMesh> = (0..=5).map(|g| build_icosphere(g).unwrap()).collect();
    let counts: Vec<(usize, usize)> = [0, 4, 5].iter().map(|&g| (meshes[g].num_vertices(), meshes[g].num_faces())).collect();
    let counts_ok = counts == [(12, 20), (2562, 5120), (10242, 20480)]
        && (0..=5).all(|g| meshes[g].num_vertices() == vertex_count(g) && meshes[g].num_faces() == face_count(g));
    let mut nested = true;
    for g in 0..5 {
        let (c, f) = (&meshes[g], &meshes[g + 1]);
        nested &= c.vertices() == &f.vertices()[..c.num_vertices()];
        for (k, face) in f.faces().iter().enumerate() {
            let centroid = (f.vertices()[face[0] as usize] + f.vertices()[face[1] as usize] + f.vertices()[face[2] as usize]).normalize();
            nested &= c.locate_face(&SpherePoint::from_unit(centroid)) == k / 4;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    check(counts_ok && nested && secs < 1.0, format!("(V,K) {counts:?}, nested {nested}, {secs:.2} s"))
}

fn kernel_correctness() -> Check {
    let t = Instant::now();
    let mesh = build_icosphere(5).unwrap();
    let w = vertex_weights(&mesh).weights;
    let x = HemiPoint::new(Hemi::One, SpherePoint::from_xyz(0.3, -0.2, 0.9));
    let mut worst_mass = 0.0f64;
    for sigma in [0.005, 0.05, 0.5] {
        let spec = KernelSpec::new(sigma);
        let m: f64 = (0..mesh.num_vertices()).map(|i| w[i] * heat_kernel(&x, &HemiPoint::new(Hemi::One, mesh.vertex(i)), &spec)).sum();
        worst_mass = worst_mass.max((m - 1.0).abs());
    }
    // Smallest H with exp(-H(H+1) sigma) <= 1e-10.
    let h_expected = (0..).find(|&h: &usize| (-((h * (h + 1)) as f64) * 0.005).exp() <= 1e-10).unwrap();
    let h = truncation_degree(0.005, 1e-10);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst_grad = 0.0f64;
    for k in 0..100 {
        let sigma = [0.005, 0.05, 0.5][k % 3];
        let spec = KernelSpec::new(sigma);
        let xv = random_unit(&mut rng);
        let (e1, e2) = sphereg::sphere::tangent_frame(&xv);
        let theta = (0.1 + 2.4 * rng.random::<f64>()) * sigma.sqrt();
        let phi = 2.0 * PI * rng.random::<f64>();
        let y = HemiPoint::new(Hemi::Two, SpherePoint::from_unit(exp_raw(&xv, &((e1 * phi.cos() + e2 * phi.sin()) * theta))));
        let dir = {
            let a = 2.0 * PI * rng.random::<f64>();
            e1 * a.cos() + e2 * a.sin()
        };
        let at = |s: f64| heat_kernel(&HemiPoint::new(Hemi::Two, SpherePoint::from_unit(exp_raw(&xv, &(dir * s)))), &y, &spec);
        let step = 1e-4 * sigma.sqrt();
        let fd = (at(step) - at(-step)) / (2.0 * step);
        let g = heat_kernel_grad(&HemiPoint::new(Hemi::Two, SpherePoint::from_unit(xv)), &y, &spec).vec;
        worst_grad = worst_grad.max((fd - g.dot(&dir)).abs() / g.norm());
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = worst_mass < 1e-3 && h == 68 && h == h_expected && worst_grad < 1e-6 && secs < 10.0;
    check(pass, format!("max |mass-1| {worst_mass:.2e}, H(0.005) = {h}, max grad rel err {worst_grad:.2e}, {secs:.1} s"))
}

fn kde_mass_and_oracle() -> Check {
    let t = Instant::now();
    let mesh = build_icosphere(4).unwrap();
    let pts = sample_ground_truth(&SimDensitySpec::default(), 10_000, 31);
    let f = estimate_density(&pts, &mesh, &KernelSpec::new(0.05).with_cutoff(1e-12)).unwrap();
    let mass = grid_mass(&f, &mesh);
    let n2 = 2 * mesh.num_vertices();
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let idx: Vec<(usize, usize)> = (0..20).map(|_| (rng.random_range(0..n2), rng.random_range(0..n2))).collect();
    let worst = idx
        .par_iter()
        .map(|&(a, b)| (f.get(a, b) - naive_density(&pts, &grid_point(&mesh, a), &grid_point(&mesh, b), 0.05)).abs())
        .reduce(|| 0.0, f64::max);
    let secs = t.elapsed().as_secs_f64();
    check((mass - 1.0).abs() < 0.02 && worst < 1e-10 && secs < 60.0, format!("mass {mass:.5}, max |grid - naive| {worst:.2e}, {secs:.1} s"))
}

fn q_norm_deviation<T: GridScalar>(level: usize, warps: &[sphereg::align::WarpSequence]) -> f64 {
    let mesh = build_icosphere(level).unwrap();
    let spec = SimDensitySpec::default();
    let q: PairGrid<T> = fill_grid(&mesh, |x, y| spec.density(x, y).sqrt());
    let n0 = l2_norm(&q, &mesh);
    warps
        .iter()
        .map(|w| {
            let qw = apply_group_action(&q, &w.grid(&mesh).unwrap(), &mesh).unwrap();
            ((l2_norm(&qw, &mesh) - n0) / n0).abs()
        })
        .fold(0.0, f64::max)
}

fn q_norm_invariance() -> Check {
    let t = Instant::now();
    let warps: Vec<_> = (0..5)
        .map(|s| random_diffeomorphism(&SyntheticWarpSpec { amplitude: H2H_AMPLITUDE, seed: 40 + s, ..Default::default() }).unwrap().warp)
        .collect();
    let d4 = q_norm_deviation::<f64>(4, &warps);
    let d5 = q_norm_deviation::<f32>(5, &warps);
    let secs = t.elapsed().as_secs_f64();
    check(d4 < 0.01 && d5 < 0.003 && secs < 120.0, format!("max rel norm change G4 {:.3}%, G5 {:.3}%, {secs:.1} s", 100.0 * d4, 100.0 * d5))
}

fn moved(pts: &EndpointSet, basis: &TangentBasis, h: Hemi, field: usize, s: f64) -> EndpointSet {
    let mut c = vec![0.0; basis.len()];
    c[field] = s;
    let mut work = HarmonicWork::default();
    let mut mv = |p: HemiPoint| {
        if p.hemi != h {
            return p;
        }
        let v = basis.synthesize(p.coords(), &c, &mut work);
        HemiPoint::new(p.hemi, SpherePoint::from_unit(exp_raw(p.coords(), &v)))
    };
    pts.with_pairs(pts.pairs().iter().map(|p| EndpointPair::new(mv(p.first), mv(p.second))).collect())
}

fn gradient_fidelity() -> Check {
    let t = Instant::now();
    let mesh = build_icosphere(4).unwrap();
    let basis = build_basis(4).unwrap();
    let spec = KernelSpec::new(0.005);
    let inst = instance(10_000);
    let q1 = q_transform(&estimate_density(&inst.fixed, &mesh, &spec).unwrap());
    let engine = KdeEngine::new(&mesh, spec);
    let dk = engine.kernels(&inst.moving);
    let mut s = PairGrid::<f64>::zeros(mesh.num_vertices());
    engine.estimate_into(&dk, &mut s);
    sensitivity_in_place(&q1, &mut s, engine.weights());
    let g = endpoint_gradient(&inst.moving.endpoints(), &engine.endpoint_forces(&dk, &s), &basis);
    // Moving endpoints of one hemisphere leaves the other hemisphere's diagonal block bit-identical.
    let base = {
        let mut f = PairGrid::<f64>::zeros(mesh.num_vertices());
        engine.estimate_into(&dk, &mut f);
        f
    };
    let energy = |pts: &EndpointSet, hemi: Hemi| {
        let mut f = base.clone();
        let own = if hemi == Hemi::One { Block::B11 } else { Block::B22 };
        engine.estimate_blocks_into(&engine.kernels(pts), &mut f, &[own, Block::B12]);
        warp_energy(&q1, &q_transform(&f), &mesh)
    };
    let max = g.coeffs.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let h = 1e-3;
    let (mut worst, mut checked) = (0.0f64, 0);
    for hemi in [Hemi::One, Hemi::Two] {
        for field in 0..basis.len() {
            let an = g.coeffs[hemi.index()][field];
            if an.abs() < 0.01 * max {
                continue;
            }
            let fd = (energy(&moved(&inst.moving, &basis, hemi, field, h), hemi) - energy(&moved(&inst.moving, &basis, hemi, field, -h), hemi)) / (2.0 * h);
            worst = worst.max(((fd - an) / an).abs());
            checked += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    check(worst < 1e-2 && secs < 300.0, format!("{checked} of {} coefficients above 1% of max, max rel err {worst:.2e}, {secs:.0} s", 2 * basis.len()))
}

struct Instance {
    fixed: EndpointSet,
    moving: EndpointSet,
    truth: sphereg::align::WarpSequence,
}

/// Fixed and moving subjects drawn independently, the moving one warped by a known diffeomorphism.
fn instance(n: usize) -> Instance {
    let spec = SimDensitySpec::default();
    let truth = random_diffeomorphism(&SyntheticWarpSpec { amplitude: H2H_AMPLITUDE, seed: 3, ..Default::default() }).unwrap().warp;
    let fixed = sample_ground_truth(&spec, n, 1);
    let moving = apply_warp(&truth, &sample_ground_truth(&spec, n, 2)).unwrap();
    Instance { fixed, moving, truth }
}

struct Run {
    result: AlignResult,
    error_deg: f64,
    seconds: f64,
    replay_err: f64,
}

fn run(inst: &Instance, level: usize, max_iters: usize, encore: bool) -> Run {
    let cfg = AlignConfig { grid_level: level, max_iters, ..AlignConfig::default() };
    let t = Instant::now();
    let result = if encore { register_encore(&inst.fixed, &inst.moving, &cfg) } else { register_endpoints(&inst.fixed, &inst.moving, &cfg) }.unwrap();
    let seconds = t.elapsed().as_secs_f64();
    let mesh = build_icosphere(level).unwrap();
    let truth = inst.truth.inverse_grid(&mesh).unwrap();
    let error_deg = warp_error_metrics(&truth, &result.warp.grid(&mesh).unwrap(), &mesh, 0.5).mean_angular_deg;
    let replay = apply_warp(&result.warp, &inst.moving).unwrap();
    let replay_err = replay
        .endpoints()
        .iter()
        .zip(result.aligned.endpoints())
        .map(|(a, b)| (a.coords() - b.coords()).norm())
        .fold(0.0, f64::max);
    let r = Run { result, error_deg, seconds, replay_err };
    println!(
        "  run {} G{level} N={}: {} iterations (converged {}), error {:.3} deg, energy {:.4e}, {:.0} s, {:.2} s/iteration",
        if encore { "encore" } else { "endpoint" },
        inst.moving.len(),
        r.result.iterations,
        r.result.converged,
        r.error_deg,
        r.result.energy_trace.last().copied().unwrap_or(f64::NAN),
        r.seconds,
        r.seconds / r.result.iterations.max(1) as f64
    );
    r
}

#[derive(Default)]
struct Runs {
    h2h: OnceCell<(Run, Run)>,
    res: OnceCell<[Run; 4]>,
}

impl Runs {
    fn head_to_head(&self) -> &(Run, Run) {
        self.h2h.get_or_init(|| {
            let inst = instance(H2H_N);
            (run(&inst, 4, H2H_MAX_ITERS, false), run(&inst, 4, H2H_MAX_ITERS, true))
        })
    }

    /// Endpoint G4, endpoint G5, grid-warping G4, grid-warping G5.
    fn resolution(&self) -> &[Run; 4] {
        self.res.get_or_init(|| {
            let inst = instance(RES_N);
            [run(&inst, 4, RES_MAX_ITERS, false), run(&inst, 5, RES_MAX_ITERS, false), run(&inst, 4, RES_MAX_ITERS, true), run(&inst, 5, RES_MAX_ITERS, true)]
        })
    }
}

fn head_to_head(runs: &Runs) -> Check {
    let (e, c) = runs.head_to_head();
    let ratio = e.error_deg / c.error_deg;
    let secs = e.seconds + c.seconds;
    check(
        ratio <= 0.8 && secs <= 1200.0,
        format!("endpoint {:.3} deg vs grid-warping {:.3} deg, ratio {ratio:.3} (<= 0.8), {:.0} s", e.error_deg, c.error_deg, secs),
    )
}

fn resolution_robustness(runs: &Runs) -> Check {
    let [e4, e5, c4, c5] = runs.resolution();
    let gap_e = (e4.error_deg - e5.error_deg).abs();
    let gap_c = (c4.error_deg - c5.error_deg).abs();
    let secs: f64 = runs.resolution().iter().map(|r| r.seconds).sum();
    check(
        gap_e <= 0.5 * gap_c && secs <= 3600.0,
        format!(
            "endpoint gap {gap_e:.3} deg ({:.3} / {:.3}), grid-warping gap {gap_c:.3} deg ({:.3} / {:.3}), {secs:.0} s",
            e4.error_deg, e5.error_deg, c4.error_deg, c5.error_deg
        ),
    )
}

fn diffeomorphism_suite(runs: &Runs) -> Check {
    let (e, c) = runs.head_to_head();
    let all: Vec<&Run> = [e, c].into_iter().chain(runs.resolution().iter()).collect();
    let negative = all.iter().map(|r| r.result.max_negative_faces).max().unwrap();
    let replay = all.iter().map(|r| r.replay_err).fold(0.0, f64::max);
    let halvings: usize = all.iter().map(|r| r.result.halvings).sum();
    check(negative == 0 && replay <= 1e-9, format!("max negative faces {negative}, max replay error {replay:.1e}, step halvings {halvings}"))
}

fn identity_and_convergence(runs: &Runs) -> Check {
    let inst = instance(H2H_N);
    let cfg = AlignConfig::default();
    let r = register_endpoints(&inst.fixed, &inst.fixed, &cfg).unwrap();
    let disp = r.mean_displacement(&inst.fixed).to_degrees();
    let identity_ok = r.converged && disp < 0.5;
    let (e, _) = runs.head_to_head();
    let g = e.result.gradient_norm_trace.last().copied().unwrap_or([f64::NAN; 2]);
    let count_ok = e.result.converged && (20..=200).contains(&e.result.iterations);
    check(
        identity_ok && count_ok,
        format!(
            "identity: converged {} after {} iterations, displacement {disp:.2e} deg; synthetic pair: converged {} after {} iterations, final gradient norms ({:.2e}, {:.2e}) vs tolerance {:.0e}",
            r.converged, r.iterations, e.result.converged, e.result.iterations, g[0], g[1], cfg.tol
        ),
    )
}

fn metrics_suite() -> Check {
    let t = Instant::now();
    let c1 = ConnectivityCounts::from_counts(4, [((0, 0), 3), ((0, 1), 1)]);
    let c2 = ConnectivityCounts::from_counts(4, [((0, 0), 2), ((1, 1), 2)]);
    let hand = overlap_coefficient(&c1, &c2, 0.3).unwrap();
    let hand_ok = hand.overlap == 1.0 && hand.suprathreshold_sizes == (1, 2);
    let mesh = build_icosphere(4).unwrap();
    let sim = SimDensitySpec::default();
    let a = sample_ground_truth(&sim, 10_000, 51);
    let b = sample_ground_truth(&sim, 10_000, 52);
    let counts = bin_endpoints(&a, &mesh);
    let self_ok = [0.0, 1e-4].iter().all(|&tau| overlap_coefficient(&counts, &counts, tau).unwrap().overlap == 1.0);
    let spec = KernelSpec::new(0.05);
    let small = sample_ground_truth(&sim, 2000, 53);
    let same = mmd(&small, &small, &spec, &MmdOptions { subsample: None, ..Default::default() }).unwrap();
    let test = mmd_permutation_test(&a, &b, &spec, &MmdOptions::default(), 200).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let pass = hand_ok && self_ok && same <= 1e-8 * spec.peak() && test.passes(0.05) && secs < 300.0;
    check(
        pass,
        format!(
            "hand example {}, self-overlap {self_ok}, MMD(A,A) {same:.1e}, MMD(A,B) {:.3e} vs null q95 {:.3e} (p = {:.3}), {secs:.0} s",
            hand.overlap,
            test.statistic,
            test.null_quantile(0.95),
            test.p_value()
        ),
    )
}

fn simulation_fidelity() -> Check {
    let spec = SimDensitySpec::default();
    let pts = sample_ground_truth(&spec, 100_000, 61);
    let within: Vec<_> = pts.pairs().iter().filter(|p| p.is_within()).collect();
    let frac = within.len() as f64 / pts.len() as f64;
    let resultant = within.iter().map(|p| p.first.point.dot(&p.second.point)).sum::<f64>() / within.len() as f64;
    let expected = 1.0 / 10f64.tanh() - 0.1;
    let mesh = build_icosphere(4).unwrap();
    let mass = l2_norm(&fill_grid::<f64>(&mesh, |x, y| spec.density(x, y).sqrt()), &mesh).powi(2);
    check(
        (frac - 0.85).abs() <= 0.01 && (resultant - expected).abs() <= 0.005 && (mass - 1.0).abs() <= 0.01,
        format!("within fraction {frac:.4}, mean resultant {resultant:.4} (expected {expected:.4}), density mass {mass:.4}"),
    )
}

fn timing_report(runs: &Runs) -> Check {
    let r = &runs.resolution()[1].result;
    let table: Vec<String> = r.timing.breakdown(r.iterations).iter().map(|(n, p, s)| format!("{n} {p:.1}% {s:.3} s/it")).collect();
    check(r.timing.dominant() == "KDE evaluation", format!("G5 endpoint run: {}", table.join(", ")))
}

fn main() {
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let runs = Runs::default();
    let criteria: [(u32, &str, &dyn Fn() -> Check); 12] = [
        (1, "mesh exactness", &mesh_exactness),
        (2, "kernel correctness", &kernel_correctness),
        (3, "KDE mass and naive oracle", &kde_mass_and_oracle),
        (4, "q-norm invariance", &q_norm_invariance),
        (5, "gradient fidelity", &gradient_fidelity),
        (6, "head-to-head accuracy", &|| head_to_head(&runs)),
        (7, "resolution robustness", &|| resolution_robustness(&runs)),
        (8, "diffeomorphism suite", &|| diffeomorphism_suite(&runs)),
        (9, "identity and convergence", &|| identity_and_convergence(&runs)),
        (10, "metrics suite", &metrics_suite),
        (11, "simulation fidelity", &simulation_fidelity),
        (12, "timing report", &|| timing_report(&runs)),
    ];
    let mut failed = Vec::new();
    for (id, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let c = f();
        println!("criterion {id:>2} {name}: {} | {}", if c.pass { "PASS" } else { "FAIL" }, c.detail);
        if !c.pass {
            failed.push(id);
        }
    }
    println!("acceptance: failing criteria {failed:?}");
    // Failures are reported above; ACCEPTANCE_STRICT=1 also turns them into a non-zero exit.
    if !failed.is_empty() && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
