//! `sphereg`: mesh export, simulation, registration, evaluation, and bandwidth selection.

mod manifest;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sphereg::align::{register_encore, register_endpoints, run_multiresolution, AlignConfig, AlignResult, WarpSequence};
use sphereg::density::{lcv_sweep, EndpointSet};
use sphereg::io::{format_config, load_endpoints, load_warp, parse_config, save_endpoints, save_warp};
use sphereg::kernel::KernelSpec;
use sphereg::mesh::build_icosphere;
use sphereg::metrics::{bin_endpoints, mmd_permutation_test, overlap_coefficient, MmdOptions, PairFilter};
use sphereg::sim::{random_diffeomorphism, sample_ground_truth, warp_error_metrics, SimDensitySpec, SyntheticWarpSpec};
use sphereg::sphere::{angle_raw, Hemi};
use sphereg::{Error, Result};

use manifest::{Convergence, RunManifest};

#[derive(Parser)]
#[command(name = "sphereg", version, about = "Diffeomorphic alignment of paired endpoint clouds on two unit spheres")]
struct Cli {
    /// Worker threads for internal parallelism (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the vertices and faces of an icosphere.
    Mesh {
        #[arg(long, default_value_t = 4)]
        level: usize,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Sample endpoint pairs from the vMF-mixture density, optionally with a warped second subject.
    Simulate(SimulateArgs),
    /// Register moving endpoints onto fixed endpoints by direct endpoint updates.
    Register(RegisterArgs),
    /// Register with the grid-warping baseline (density estimated once, warped with Jacobian factors).
    RegisterEncore(RegisterArgs),
    /// Overlap coefficient, MMD, and warp errors.
    Evaluate(EvaluateArgs),
    /// Register once per bandwidth and tabulate per-label overlap; optionally report LCV scores.
    SelectBandwidth(SelectArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.85)]
    alpha: f64,
    #[arg(long, default_value_t = 10.0)]
    kappa: f64,
    /// Mean displacement (radians) of a random warp applied to an independent second sample.
    #[arg(long)]
    warp_amplitude: Option<f64>,
    #[arg(long, default_value_t = 4)]
    warp_degree: usize,
    #[arg(long, default_value_t = 0)]
    warp_seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args, Clone)]
struct RegisterArgs {
    #[arg(long)]
    fixed: PathBuf,
    #[arg(long)]
    moving: PathBuf,
    /// key = value configuration file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    grid_level: Option<usize>,
    #[arg(long)]
    basis_degree: Option<usize>,
    #[arg(long)]
    kde_every: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    deterministic: Option<bool>,
    /// Kernel values below this fraction of the peak are dropped.
    #[arg(long)]
    value_cutoff: Option<f64>,
    /// Coarse-to-fine stages as level:sigma pairs, e.g. 3:0.01,4:0.005.
    #[arg(long)]
    multires: Option<String>,
    /// Also write energy trace, gradient norms, and per-vertex displacements as CSV.
    #[arg(long)]
    emit_plots: bool,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum Metric {
    Overlap,
    Mmd,
    Warp,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum HemiFilter {
    One,
    Two,
    All,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    a: Option<PathBuf>,
    #[arg(long)]
    b: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Metric::All)]
    metric: Metric,
    /// Overlap thresholds (repeatable).
    #[arg(long, default_values_t = vec![0.0])]
    tau: Vec<f64>,
    /// Binning mesh level for the overlap coefficient, and evaluation level for warp errors.
    #[arg(long, default_value_t = 4)]
    grid_level: usize,
    /// Restrict both sets to pairs with this label.
    #[arg(long)]
    label: Option<String>,
    #[arg(long, default_value_t = 0.005)]
    mmd_sigma: f64,
    /// Pairs entering the MMD: both endpoints in hemisphere one, two, or all pairs.
    #[arg(long, value_enum, default_value_t = HemiFilter::One)]
    mmd_hemi: HemiFilter,
    #[arg(long, default_value_t = 2000)]
    subsample: usize,
    #[arg(long, default_value_t = 0)]
    permutations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Estimated warp (maps moving onto fixed).
    #[arg(long)]
    warp: Option<PathBuf>,
    /// Simulated warp that generated the moving subject; the estimate is compared with its inverse.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Fraction of vertices with the largest true displacement entering the warp error.
    #[arg(long, default_value_t = 0.5)]
    top: f64,
    #[arg(long)]
    emit_plots: bool,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    register: RegisterArgs,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.001, 0.005, 0.01, 0.05])]
    sigmas: Vec<f64>,
    #[arg(long, default_value_t = 0.0)]
    tau: f64,
    /// Also score each bandwidth by leave-one-out likelihood on the fixed set (quadratic in N).
    #[arg(long)]
    lcv: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(w) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w.max(1)).build_global() {
            eprintln!("{}", error_record(&Error::Config(e.to_string())));
            return ExitCode::from(2);
        }
    }
    let command_line: Vec<String> = std::env::args().collect();
    let res = match cli.command {
        Command::Mesh { level, out_dir } => cmd_mesh(level, &out_dir, command_line),
        Command::Simulate(a) => cmd_simulate(&a, command_line),
        Command::Register(a) => cmd_register(&a, false, command_line),
        Command::RegisterEncore(a) => cmd_register(&a, true, command_line),
        Command::Evaluate(a) => cmd_evaluate(&a, command_line),
        Command::SelectBandwidth(a) => cmd_select(&a, command_line),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_record(&e));
            ExitCode::from(match e {
                Error::Config(_) | Error::Parse { .. } | Error::Norm { .. } | Error::SchemaVersion(_) => 2,
                _ => 1,
            })
        }
    }
}

/// One-line JSON description of a failure.
fn error_record(e: &Error) -> String {
    let kind = format!("{e:?}");
    let kind = kind.split(['(', ' ', '{']).next().unwrap_or("Error");
    let mut rec = serde_json::json!({ "status": "error", "kind": kind, "message": e.to_string() });
    match e {
        Error::Parse { line, .. } | Error::Norm { line, .. } => rec["line"] = (*line).into(),
        _ => {}
    }
    rec.to_string()
}

fn create_dir(dir: &Path) -> Result<()> {
    Ok(std::fs::create_dir_all(dir)?)
}

fn write(path: &Path, text: &str) -> Result<()> {
    Ok(std::fs::write(path, text)?)
}

fn cmd_mesh(level: usize, out_dir: &Path, command_line: Vec<String>) -> Result<()> {
    let mesh = build_icosphere(level)?;
    create_dir(out_dir)?;
    let mut v = String::from("index,x,y,z\n");
    for (i, p) in mesh.vertices().iter().enumerate() {
        let _ = writeln!(v, "{i},{},{},{}", p.x, p.y, p.z);
    }
    let mut f = String::from("index,a,b,c\n");
    for (i, t) in mesh.faces().iter().enumerate() {
        let _ = writeln!(f, "{i},{},{},{}", t[0], t[1], t[2]);
    }
    let (vp, fp) = (out_dir.join("vertices.csv"), out_dir.join("faces.csv"));
    write(&vp, &v)?;
    write(&fp, &f)?;
    println!("level {level}: {} vertices, {} faces", mesh.num_vertices(), mesh.num_faces());
    let mut m = RunManifest::new(command_line, "mesh");
    m.config.insert("level".into(), level.to_string());
    m.outputs = vec![vp, fp];
    m.write(out_dir)
}

fn cmd_simulate(a: &SimulateArgs, command_line: Vec<String>) -> Result<()> {
    if !(0.0..=1.0).contains(&a.alpha) || !(a.kappa > 0.0) {
        return Err(Error::Config("alpha must lie in [0, 1] and kappa must be positive".into()));
    }
    create_dir(&a.out_dir)?;
    let spec = SimDensitySpec { alpha: a.alpha, kappa: a.kappa };
    let mut m = RunManifest::new(command_line, "simulate");
    m.config.insert("n".into(), a.n.to_string());
    m.config.insert("alpha".into(), a.alpha.to_string());
    m.config.insert("kappa".into(), a.kappa.to_string());
    m.seeds.insert("sample".into(), a.seed);
    let fixed = sample_ground_truth(&spec, a.n, a.seed);
    let fp = a.out_dir.join("fixed.csv");
    save_endpoints(&fp, &fixed)?;
    m.outputs.push(fp);
    if let Some(amp) = a.warp_amplitude {
        let w = random_diffeomorphism(&SyntheticWarpSpec { basis_degree: a.warp_degree, amplitude: amp, seed: a.warp_seed, ..Default::default() })?;
        let other = sample_ground_truth(&spec, a.n, a.seed.wrapping_add(1));
        let moving = sphereg::align::apply_warp(&w.warp, &other)?;
        let (mp, tp) = (a.out_dir.join("moving.csv"), a.out_dir.join("truth.json"));
        save_endpoints(&mp, &moving)?;
        save_warp(&tp, &w.warp)?;
        m.config.insert("warp_amplitude".into(), w.amplitude.to_string());
        m.config.insert("warp_degree".into(), a.warp_degree.to_string());
        m.seeds.insert("moving_sample".into(), a.seed.wrapping_add(1));
        m.seeds.insert("warp".into(), a.warp_seed);
        m.outputs.extend([mp, tp]);
        println!("simulated {} pairs per subject, warp amplitude {:.4} rad", a.n, w.amplitude);
    } else {
        println!("simulated {} pairs", a.n);
    }
    m.write(&a.out_dir)
}

fn parse_multires(s: &str) -> Result<Vec<(usize, f64)>> {
    s.split(',')
        .map(|stage| {
            let (g, sigma) = stage.split_once(':').ok_or_else(|| Error::Config(format!("multires stage '{stage}' is not level:sigma")))?;
            let g = g.trim().parse().map_err(|_| Error::Config(format!("bad level in '{stage}'")))?;
            let sigma = sigma.trim().parse().map_err(|_| Error::Config(format!("bad sigma in '{stage}'")))?;
            Ok((g, sigma))
        })
        .collect()
}

fn resolve_config(a: &RegisterArgs) -> Result<AlignConfig> {
    let mut cfg = AlignConfig::default();
    if let Some(p) = &a.config {
        parse_config(&std::fs::read_to_string(p)?, &mut cfg)?;
    }
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => { $(if let Some(v) = a.$flag { cfg.$field = v; })* };
    }
    set!(sigma => sigma, delta => step, epsilon => tol, max_iters => max_iters, grid_level => grid_level,
         basis_degree => basis_degree, kde_every => kde_every, seed => seed, deterministic => deterministic,
         value_cutoff => value_cutoff);
    if let Some(s) = &a.multires {
        cfg.multires = Some(parse_multires(s)?);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn config_map(cfg: &AlignConfig) -> BTreeMap<String, String> {
    let mut map: BTreeMap<String, String> = format_config(cfg)
        .lines()
        .filter_map(|l| l.split_once('=').map(|(k, v)| (k.trim().to_string(), v.trim().to_string())))
        .collect();
    if let Some(s) = &cfg.multires {
        map.insert("multires".into(), s.iter().map(|(g, sg)| format!("{g}:{sg}")).collect::<Vec<_>>().join(","));
    }
    map
}

fn run(fixed: &EndpointSet, moving: &EndpointSet, cfg: &AlignConfig, encore: bool) -> Result<AlignResult> {
    match (encore, &cfg.multires) {
        (true, _) => register_encore(fixed, moving, cfg),
        (false, Some(_)) => run_multiresolution(fixed, moving, cfg),
        (false, None) => register_endpoints(fixed, moving, cfg),
    }
}

/// Per-phase timing table: phase, share of the total, seconds per iteration.
fn timing_table(r: &AlignResult) -> String {
    let mut s = format!("{:<22}{:>9}{:>14}\n", "phase", "percent", "s/iteration");
    for (name, pct, per) in r.timing.breakdown(r.iterations) {
        let _ = writeln!(s, "{name:<22}{pct:>8.2}%{per:>14.4}");
    }
    let _ = writeln!(s, "{:<22}{:>9}{:>14.4}", "total", "", r.timing.total() / r.iterations.max(1) as f64);
    s
}

fn cmd_register(a: &RegisterArgs, encore: bool, command_line: Vec<String>) -> Result<()> {
    let cfg = resolve_config(a)?;
    let fixed = load_endpoints(&a.fixed)?;
    let moving = load_endpoints(&a.moving)?;
    create_dir(&a.out_dir)?;
    let start = Instant::now();
    let r = run(&fixed, &moving, &cfg, encore)?;
    let wall = start.elapsed().as_secs_f64();

    let mut m = RunManifest::new(command_line, if encore { "register-encore" } else { "register" });
    m.config = config_map(&cfg);
    m.seeds.insert("registration".into(), cfg.seed);
    m.add_input(&a.fixed)?;
    m.add_input(&a.moving)?;
    if let Some(c) = &a.config {
        m.add_input(c)?;
    }
    let (ap, wp) = (a.out_dir.join("aligned.csv"), a.out_dir.join("warp.json"));
    save_endpoints(&ap, &r.aligned)?;
    save_warp(&wp, &r.warp)?;
    m.outputs = vec![ap, wp];

    let table = timing_table(&r);
    print!("{table}");
    let tp = a.out_dir.join("timing.csv");
    let mut csv = String::from("phase,percent,seconds_per_iteration\n");
    for (name, pct, per) in r.timing.breakdown(r.iterations) {
        let _ = writeln!(csv, "{name},{pct},{per}");
    }
    write(&tp, &csv)?;
    m.outputs.push(tp);
    m.timings = r.timing.breakdown(r.iterations).into_iter().map(|(n, p, s)| (n.to_string(), p, s)).collect();
    m.wall_seconds = Some(wall);

    if a.emit_plots {
        let pp = a.out_dir.join("trace.csv");
        let mut s = String::from("iteration,energy,gradient_norm_1,gradient_norm_2\n");
        for (k, (e, g)) in r.energy_trace.iter().zip(&r.gradient_norm_trace).enumerate() {
            let _ = writeln!(s, "{k},{e},{},{}", g[0], g[1]);
        }
        write(&pp, &s)?;
        let mesh = build_icosphere(cfg.grid_level)?;
        let grid = r.warp.grid(&mesh)?;
        let dp = a.out_dir.join("displacement.csv");
        let mut s = String::from("hemi,vertex,displacement\n");
        for h in [Hemi::One, Hemi::Two] {
            for (i, v) in mesh.vertices().iter().enumerate() {
                let _ = writeln!(s, "{},{i},{}", h.label(), angle_raw(v, &grid.targets(h)[i]));
            }
        }
        write(&dp, &s)?;
        m.outputs.extend([pp, dp]);
    }
    let displacement = r.mean_displacement(&moving);
    m.convergence = Some(Convergence {
        iterations: r.iterations,
        converged: r.converged,
        final_energy: r.energy_trace.last().copied(),
        final_gradient_norms: r.gradient_norm_trace.last().copied(),
        halvings: r.halvings,
        mean_displacement_rad: displacement,
    });
    println!(
        "iterations {} converged {} energy {:.6e} mean displacement {:.4} deg",
        r.iterations,
        r.converged,
        r.energy_trace.last().copied().unwrap_or(f64::NAN),
        displacement.to_degrees()
    );
    m.write(&a.out_dir)
}

fn restrict(set: EndpointSet, label: &Option<String>) -> Result<EndpointSet> {
    let Some(l) = label else { return Ok(set) };
    let labels = set.labels().ok_or_else(|| Error::Config("label filter requested but the file has no label column".into()))?;
    let idx: Vec<usize> = labels.iter().enumerate().filter(|(_, x)| *x == l).map(|(i, _)| i).collect();
    if idx.is_empty() {
        return Err(Error::EmptyAfterFilter);
    }
    Ok(set.select(&idx))
}

fn cmd_evaluate(a: &EvaluateArgs, command_line: Vec<String>) -> Result<()> {
    create_dir(&a.out_dir)?;
    let mut m = RunManifest::new(command_line, "evaluate");
    m.seeds.insert("mmd".into(), a.seed);
    let mut rows = String::from("metric,parameter,value,n1,n2\n");
    let all = a.metric == Metric::All;
    let sets = match (&a.a, &a.b) {
        (Some(x), Some(y)) => Some((x, y)),
        _ if all || a.metric == Metric::Warp => None,
        _ => return Err(Error::Config("--a and --b are required for overlap and mmd".into())),
    };
    let warps = match (&a.warp, &a.truth) {
        (Some(x), Some(y)) => Some((x, y)),
        _ if all || a.metric != Metric::Warp => None,
        _ => return Err(Error::Config("--warp and --truth are required for warp errors".into())),
    };
    if sets.is_none() && warps.is_none() {
        return Err(Error::Config("nothing to evaluate: pass --a/--b and/or --warp/--truth".into()));
    }
    if let Some((pa, pb)) = sets.filter(|_| a.metric != Metric::Warp) {
        m.add_input(pa)?;
        m.add_input(pb)?;
        let s1 = restrict(load_endpoints(pa)?, &a.label)?;
        let s2 = restrict(load_endpoints(pb)?, &a.label)?;
        if all || a.metric == Metric::Overlap {
            let mesh = build_icosphere(a.grid_level)?;
            let (c1, c2) = (bin_endpoints(&s1, &mesh), bin_endpoints(&s2, &mesh));
            for &tau in &a.tau {
                let r = overlap_coefficient(&c1, &c2, tau)?;
                let _ = writeln!(rows, "overlap,{tau},{},{},{}", r.overlap, r.suprathreshold_sizes.0, r.suprathreshold_sizes.1);
            }
        }
        if all || a.metric == Metric::Mmd {
            let filter = match a.mmd_hemi {
                HemiFilter::One => PairFilter::Within(Hemi::One),
                HemiFilter::Two => PairFilter::Within(Hemi::Two),
                HemiFilter::All => PairFilter::All,
            };
            let opts = MmdOptions { filter, subsample: Some(a.subsample), seed: a.seed };
            let t = mmd_permutation_test(&s1, &s2, &KernelSpec::new(a.mmd_sigma), &opts, a.permutations)?;
            let _ = writeln!(rows, "mmd,{},{},{},{}", a.mmd_sigma, t.statistic, s1.len(), s2.len());
            if a.permutations > 0 {
                let _ = writeln!(rows, "mmd_null_q95,{},{},{},{}", a.mmd_sigma, t.null_quantile(0.95), s1.len(), s2.len());
                let _ = writeln!(rows, "mmd_p_value,{},{},{},{}", a.mmd_sigma, t.p_value(), s1.len(), s2.len());
            }
        }
    }
    if let Some((wp, tp)) = warps.filter(|_| all || a.metric == Metric::Warp) {
        m.add_input(wp)?;
        m.add_input(tp)?;
        let est: WarpSequence = load_warp(wp)?;
        let truth: WarpSequence = load_warp(tp)?;
        let mesh = build_icosphere(a.grid_level)?;
        let rep = warp_error_metrics(&truth.inverse_grid(&mesh)?, &est.grid(&mesh)?, &mesh, a.top);
        let total = 2 * mesh.num_vertices();
        let _ = writeln!(rows, "mean_angular_deg,{},{},{},{total}", a.top, rep.mean_angular_deg, rep.evaluated_vertex_count);
        let _ = writeln!(rows, "mean_l2,{},{},{},{total}", a.top, rep.mean_l2, rep.evaluated_vertex_count);
        if a.emit_plots {
            let rp = a.out_dir.join("residuals.csv");
            let mut s = String::from("hemi,vertex,residual\n");
            for (h, i, r) in &rep.residuals {
                let _ = writeln!(s, "{},{i},{}", h.label(), r.norm());
            }
            write(&rp, &s)?;
            m.outputs.push(rp);
        }
    }
    print!("{rows}");
    let op = a.out_dir.join("metrics.csv");
    write(&op, &rows)?;
    m.outputs.insert(0, op);
    m.write(&a.out_dir)
}

fn cmd_select(a: &SelectArgs, command_line: Vec<String>) -> Result<()> {
    let base = resolve_config(&a.register)?;
    if a.sigmas.is_empty() || a.sigmas.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::Config("sigmas must be a non-empty list of positive values".into()));
    }
    let fixed = load_endpoints(&a.register.fixed)?;
    let moving = load_endpoints(&a.register.moving)?;
    let (Some(fl), Some(ml)) = (fixed.labels(), moving.labels()) else {
        return Err(Error::Config("select-bandwidth needs a label column in both files".into()));
    };
    create_dir(&a.register.out_dir)?;
    let mut m = RunManifest::new(command_line, "select-bandwidth");
    m.config = config_map(&base);
    m.config.insert("sigmas".into(), a.sigmas.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","));
    m.config.insert("tau".into(), a.tau.to_string());
    m.seeds.insert("registration".into(), base.seed);
    m.add_input(&a.register.fixed)?;
    m.add_input(&a.register.moving)?;

    let mut labels: Vec<&String> = fl.iter().collect();
    labels.sort();
    labels.dedup();
    let mesh = build_icosphere(4)?;
    let index = |ls: &[String], l: &String| -> Vec<usize> { ls.iter().enumerate().filter(|(_, x)| *x == l).map(|(i, _)| i).collect() };
    let lcv = if a.lcv { Some(lcv_sweep(&fixed, &a.sigmas)) } else { None };
    let mut table = String::from("sigma,label,overlap,n_fixed,n_moving\n");
    let mut summary = String::from("sigma,mean_overlap,iterations,converged,lcv\n");
    let mut best = (f64::NEG_INFINITY, f64::NAN);
    for (k, &sigma) in a.sigmas.iter().enumerate() {
        let cfg = AlignConfig { sigma, multires: None, ..base.clone() };
        let r = register_endpoints(&fixed, &moving, &cfg)?;
        let mut sum = 0.0;
        let mut count = 0;
        for l in &labels {
            let (fi, mi) = (index(fl, l), index(ml, l));
            if fi.is_empty() || mi.is_empty() {
                continue;
            }
            let c1 = bin_endpoints(&fixed.select(&fi), &mesh);
            let c2 = bin_endpoints(&r.aligned.select(&mi), &mesh);
            let o = overlap_coefficient(&c1, &c2, a.tau)?;
            let _ = writeln!(table, "{sigma},{l},{},{},{}", o.overlap, fi.len(), mi.len());
            sum += o.overlap;
            count += 1;
        }
        let mean = sum / count.max(1) as f64;
        let score = lcv.as_ref().map(|v| v[k].to_string()).unwrap_or_default();
        let _ = writeln!(summary, "{sigma},{mean},{},{},{score}", r.iterations, r.converged);
        if mean > best.0 {
            best = (mean, sigma);
        }
    }
    print!("{summary}");
    println!("best sigma {}", best.1);
    let (tp, sp) = (a.register.out_dir.join("bandwidth_overlap.csv"), a.register.out_dir.join("bandwidth_summary.csv"));
    write(&tp, &table)?;
    write(&sp, &summary)?;
    m.outputs = vec![tp, sp];
    m.write(&a.register.out_dir)
}
