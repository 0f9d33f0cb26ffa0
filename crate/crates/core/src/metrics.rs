//! Alignment metrics: the connectivity-level overlap coefficient and the kernel MMD between endpoint sets.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::density::{EndpointPair, EndpointSet};
use crate::error::{Error, Result};
use crate::kernel::{KernelProfile, KernelSpec};
use crate::mesh::IcosphereMesh;
use crate::sphere::{Hemi, HemiPoint};

/// Streamline counts per unordered pair of faces of the two-sphere union.
///
/// Faces of hemisphere 2 are offset by the per-hemisphere face count `K`, so indices lie in `[0, 2K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityCounts {
    level: usize,
    counts: BTreeMap<(u32, u32), u64>,
    n: u64,
}

impl ConnectivityCounts {
    /// Counts given directly; keys are normalized to `a <= b`.
    pub fn from_counts(level: usize, counts: impl IntoIterator<Item = ((u32, u32), u64)>) -> Self {
        let mut map = BTreeMap::new();
        let mut n = 0;
        for ((a, b), c) in counts {
            *map.entry((a.min(b), a.max(b))).or_insert(0) += c;
            n += c;
        }
        map.retain(|_, c| *c > 0);
        ConnectivityCounts { level, counts: map, n }
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn total(&self) -> u64 {
        self.n
    }

    pub fn get(&self, a: u32, b: u32) -> u64 {
        self.counts.get(&(a.min(b), a.max(b))).copied().unwrap_or(0)
    }

    /// Nonzero cells in key order.
    pub fn cells(&self) -> impl Iterator<Item = ((u32, u32), u64)> + '_ {
        self.counts.iter().map(|(&k, &c)| (k, c))
    }

    /// Cells whose relative count exceeds `tau`.
    pub fn suprathreshold(&self, tau: f64) -> Vec<(u32, u32)> {
        if self.n == 0 {
            return Vec::new();
        }
        let n = self.n as f64;
        self.counts.iter().filter(|(_, &c)| c as f64 / n > tau).map(|(&k, _)| k).collect()
    }
}

fn face_of(mesh: &IcosphereMesh, p: &HemiPoint, locate: impl Fn(&IcosphereMesh, &HemiPoint) -> usize) -> u32 {
    (locate(mesh, p) + p.hemi.index() * mesh.num_faces()) as u32
}

/// Bins every pair by the faces containing its endpoints.
pub fn bin_endpoints(pts: &EndpointSet, mesh: &IcosphereMesh) -> ConnectivityCounts {
    bin_with(pts, mesh, |m, p| m.locate(p.coords()))
}

/// Same as [`bin_endpoints`] with an exhaustive containment scan per endpoint.
pub fn bin_endpoints_brute_force(pts: &EndpointSet, mesh: &IcosphereMesh) -> ConnectivityCounts {
    bin_with(pts, mesh, |m, p| m.locate_brute_force(p.coords()))
}

fn bin_with(pts: &EndpointSet, mesh: &IcosphereMesh, locate: impl Fn(&IcosphereMesh, &HemiPoint) -> usize + Sync) -> ConnectivityCounts {
    let keys: Vec<(u32, u32)> = pts
        .pairs()
        .par_iter()
        .map(|p| (face_of(mesh, &p.first, &locate), face_of(mesh, &p.second, &locate)))
        .collect();
    ConnectivityCounts::from_counts(mesh.level(), keys.into_iter().map(|k| (k, 1)))
}

/// Overlap of the suprathreshold connectivity sets at one threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapReport {
    pub tau: f64,
    pub overlap: f64,
    pub suprathreshold_sizes: (usize, usize),
    /// Set when either suprathreshold set is empty; `overlap` is then 0.
    pub empty: bool,
}

/// |S1 ∩ S2| / min(|S1|, |S2|) over unordered face pairs with relative count above `tau`.
pub fn overlap_coefficient(c1: &ConnectivityCounts, c2: &ConnectivityCounts, tau: f64) -> Result<OverlapReport> {
    if c1.level != c2.level {
        return Err(Error::MeshMismatch(c1.level, c2.level));
    }
    let s1 = c1.suprathreshold(tau);
    let s2 = c2.suprathreshold(tau);
    let sizes = (s1.len(), s2.len());
    if s1.is_empty() || s2.is_empty() {
        return Ok(OverlapReport { tau, overlap: 0.0, suprathreshold_sizes: sizes, empty: true });
    }
    // Both lists are sorted, so the intersection is a merge.
    let (mut i, mut j, mut common) = (0, 0, 0usize);
    while i < s1.len() && j < s2.len() {
        match s1[i].cmp(&s2[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                common += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let overlap = common as f64 / sizes.0.min(sizes.1) as f64;
    Ok(OverlapReport { tau, overlap, suprathreshold_sizes: sizes, empty: false })
}

/// Which pairs enter the MMD.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PairFilter {
    #[default]
    All,
    /// Pairs with both endpoints in the given hemisphere.
    Within(Hemi),
}

impl PairFilter {
    pub fn keeps(&self, p: &EndpointPair) -> bool {
        match *self {
            PairFilter::All => true,
            PairFilter::Within(h) => p.first.hemi == h && p.second.hemi == h,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmdOptions {
    pub filter: PairFilter,
    /// Draw at most this many pairs per set (without replacement).
    pub subsample: Option<usize>,
    pub seed: u64,
}

impl Default for MmdOptions {
    fn default() -> Self {
        MmdOptions { filter: PairFilter::All, subsample: Some(2000), seed: 0 }
    }
}

fn prepare(pts: &EndpointSet, opts: &MmdOptions) -> Result<Vec<EndpointPair>> {
    let mut kept: Vec<EndpointPair> = pts.pairs().iter().filter(|p| opts.filter.keeps(p)).copied().collect();
    if kept.is_empty() {
        return Err(Error::EmptyAfterFilter);
    }
    if let Some(m) = opts.subsample {
        if kept.len() > m {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            kept.shuffle(&mut rng);
            kept.truncate(m);
        }
    }
    Ok(kept)
}

fn pair_order(a: &[EndpointPair], b: &[EndpointPair]) -> std::cmp::Ordering {
    let key = |p: &EndpointPair| {
        let (x, y) = (p.first.coords(), p.second.coords());
        [p.first.hemi.index() as f64, x.x, x.y, x.z, p.second.hemi.index() as f64, y.x, y.y, y.z]
    };
    for (p, q) in a.iter().zip(b) {
        for (u, v) in key(p).iter().zip(key(q)) {
            let o = u.total_cmp(&v);
            if o.is_ne() {
                return o;
            }
        }
    }
    a.len().cmp(&b.len())
}

fn hemi_kernel(profile: &KernelProfile, x: &HemiPoint, y: &HemiPoint) -> f64 {
    if x.hemi != y.hemi {
        return 0.0;
    }
    profile.value(x.coords().dot(y.coords()))
}

/// Product heat kernel between two streamlines.
fn pair_kernel(profile: &KernelProfile, p: &EndpointPair, q: &EndpointPair) -> f64 {
    let a = hemi_kernel(profile, &p.first, &q.first);
    if a == 0.0 {
        return 0.0;
    }
    a * hemi_kernel(profile, &p.second, &q.second)
}

/// Full Gram matrix of the pooled sample, row-major.
fn gram(profile: &KernelProfile, pool: &[EndpointPair]) -> Vec<f64> {
    let n = pool.len();
    let mut g = vec![0.0; n * n];
    g.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for (j, v) in row.iter_mut().enumerate() {
            *v = pair_kernel(profile, &pool[i], &pool[j]);
        }
    });
    g
}

/// Unbiased squared MMD of the split `labels[i]` (true = first sample) of a pooled Gram matrix.
fn mmd2_from_gram(g: &[f64], first: &[bool]) -> f64 {
    let n = first.len();
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let row = &g[i * n..(i + 1) * n];
        for j in 0..n {
            if i == j {
                continue;
            }
            match (first[i], first[j]) {
                (true, true) => sxx += row[j],
                (false, false) => syy += row[j],
                (true, false) => sxy += row[j],
                (false, true) => {}
            }
        }
    }
    let m = first.iter().filter(|&&f| f).count() as f64;
    let k = n as f64 - m;
    sxx / (m * (m - 1.0)).max(1.0) + syy / (k * (k - 1.0)).max(1.0) - 2.0 * sxy / (m * k)
}

/// Square root of the unbiased squared MMD, clamped at zero, under the product heat kernel.
pub fn mmd(pts1: &EndpointSet, pts2: &EndpointSet, spec: &KernelSpec, opts: &MmdOptions) -> Result<f64> {
    Ok(mmd_permutation_test(pts1, pts2, spec, opts, 0)?.statistic)
}

/// MMD statistic together with its permutation null distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct PermutationTest {
    pub statistic: f64,
    /// Clamped MMD values of random relabelings of the pooled sample.
    pub null: Vec<f64>,
}

impl PermutationTest {
    /// Fraction of null values at least as large as the statistic (with the +1 correction).
    pub fn p_value(&self) -> f64 {
        let ge = self.null.iter().filter(|&&v| v >= self.statistic).count();
        (ge + 1) as f64 / (self.null.len() + 1) as f64
    }

    /// Empirical quantile of the null.
    pub fn null_quantile(&self, q: f64) -> f64 {
        if self.null.is_empty() {
            return f64::NAN;
        }
        let mut v = self.null.clone();
        v.sort_by(|a, b| a.total_cmp(b));
        let i = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1;
        v[i]
    }

    /// True when the statistic does not exceed the null's `1 - level` quantile.
    pub fn passes(&self, level: f64) -> bool {
        self.statistic <= self.null_quantile(1.0 - level)
    }
}

/// MMD with `n_perm` label permutations of the pooled (filtered, subsampled) sample.
pub fn mmd_permutation_test(
    pts1: &EndpointSet,
    pts2: &EndpointSet,
    spec: &KernelSpec,
    opts: &MmdOptions,
    n_perm: usize,
) -> Result<PermutationTest> {
    let mut a = prepare(pts1, opts)?;
    let mut b = prepare(pts2, opts)?;
    // A canonical order of the two samples makes the floating-point sums symmetric in the arguments.
    if pair_order(&b, &a).is_lt() {
        std::mem::swap(&mut a, &mut b);
    }
    let profile = KernelProfile::new(spec);
    let mut pool = a.clone();
    pool.extend_from_slice(&b);
    let g = gram(&profile, &pool);
    let mut labels: Vec<bool> = (0..pool.len()).map(|i| i < a.len()).collect();
    let statistic = mmd2_from_gram(&g, &labels).max(0.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(2);
    let null = (0..n_perm)
        .map(|_| {
            labels.shuffle(&mut rng);
            mmd2_from_gram(&g, &labels).max(0.0).sqrt()
        })
        .collect();
    Ok(PermutationTest { statistic, null })
}
