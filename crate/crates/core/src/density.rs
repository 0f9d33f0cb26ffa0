//! Endpoint sets, kernel density grids on the product of the two-sphere union, and bandwidth scoring.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::{heat_kernel, KernelProfile, KernelSpec};
use crate::mesh::{vertex_weights, IcosphereMesh};
use crate::sphere::{Hemi, HemiPoint, Vec3};

/// One streamline: its two endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndpointPair {
    pub first: HemiPoint,
    pub second: HemiPoint,
}

impl EndpointPair {
    pub fn new(first: HemiPoint, second: HemiPoint) -> Self {
        EndpointPair { first, second }
    }

    pub fn is_within(&self) -> bool {
        self.first.hemi == self.second.hemi
    }
}

/// Ordered list of endpoint pairs with optional ids and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointSet {
    pairs: Vec<EndpointPair>,
    ids: Vec<u64>,
    labels: Option<Vec<String>>,
}

impl EndpointSet {
    /// Ids default to 0..N.
    pub fn new(pairs: Vec<EndpointPair>) -> Self {
        let ids = (0..pairs.len() as u64).collect();
        EndpointSet { pairs, ids, labels: None }
    }

    pub fn with_ids(mut self, ids: Vec<u64>) -> Self {
        assert_eq!(ids.len(), self.pairs.len());
        self.ids = ids;
        self
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Self {
        assert_eq!(labels.len(), self.pairs.len());
        self.labels = Some(labels);
        self
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[EndpointPair] {
        &self.pairs
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    /// Same ids and labels with new coordinates.
    pub fn with_pairs(&self, pairs: Vec<EndpointPair>) -> Self {
        assert_eq!(pairs.len(), self.pairs.len());
        EndpointSet { pairs, ids: self.ids.clone(), labels: self.labels.clone() }
    }

    /// Subset by pair index.
    pub fn select(&self, idx: &[usize]) -> Self {
        EndpointSet {
            pairs: idx.iter().map(|&i| self.pairs[i]).collect(),
            ids: idx.iter().map(|&i| self.ids[i]).collect(),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i].clone()).collect()),
        }
    }

    /// Endpoints flattened as first0, second0, first1, ...
    pub fn endpoints(&self) -> Vec<HemiPoint> {
        self.pairs.iter().flat_map(|p| [p.first, p.second]).collect()
    }
}

/// Scalar storage type of grids.
pub trait GridScalar: Copy + Default + Send + Sync + PartialOrd + std::fmt::Debug + 'static {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl GridScalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

impl GridScalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

/// Stored blocks of a symmetric (2V)x(2V) grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    B11,
    B22,
    B12,
}

impl Block {
    pub fn of(row: Hemi, col: Hemi) -> (Block, bool) {
        match (row, col) {
            (Hemi::One, Hemi::One) => (Block::B11, false),
            (Hemi::Two, Hemi::Two) => (Block::B22, false),
            (Hemi::One, Hemi::Two) => (Block::B12, false),
            (Hemi::Two, Hemi::One) => (Block::B12, true),
        }
    }

    /// Multiplicity of the block in sums over the full grid.
    pub fn multiplicity(self) -> f64 {
        match self {
            Block::B12 => 2.0,
            _ => 1.0,
        }
    }

    pub const ALL: [Block; 3] = [Block::B11, Block::B22, Block::B12];
}

/// Symmetric function on grid-vertex pairs of the two-sphere union.
///
/// Global index `a < V` is vertex `a` of hemisphere 1 and `a >= V` is vertex `a - V` of
/// hemisphere 2. The (2,1) block is the transpose of the stored (1,2) block.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGrid<T = f64> {
    n: usize,
    blocks: [Vec<T>; 3],
}

pub type DensityGrid = PairGrid<f64>;
pub type QGrid = PairGrid<f64>;

impl<T: GridScalar> PairGrid<T> {
    pub fn zeros(n: usize) -> Self {
        PairGrid { n, blocks: [vec![T::default(); n * n], vec![T::default(); n * n], vec![T::default(); n * n]] }
    }

    /// Vertices per hemisphere.
    pub fn vertices_per_hemi(&self) -> usize {
        self.n
    }

    pub fn block(&self, b: Block) -> &[T] {
        &self.blocks[b as usize]
    }

    pub fn block_mut(&mut self, b: Block) -> &mut [T] {
        &mut self.blocks[b as usize]
    }

    pub fn blocks_mut(&mut self) -> [&mut Vec<T>; 3] {
        let [a, b, c] = &mut self.blocks;
        [a, b, c]
    }

    /// Value at global indices.
    pub fn get(&self, a: usize, b: usize) -> T {
        let n = self.n;
        let (ha, ia) = if a < n { (Hemi::One, a) } else { (Hemi::Two, a - n) };
        let (hb, ib) = if b < n { (Hemi::One, b) } else { (Hemi::Two, b - n) };
        let (blk, t) = Block::of(ha, hb);
        let (r, c) = if t { (ib, ia) } else { (ia, ib) };
        self.blocks[blk as usize][r * n + c]
    }

    pub fn map<U: GridScalar>(&self, f: impl Fn(T) -> U + Sync) -> PairGrid<U> {
        PairGrid {
            n: self.n,
            blocks: [
                self.blocks[0].par_iter().map(|&v| f(v)).collect(),
                self.blocks[1].par_iter().map(|&v| f(v)).collect(),
                self.blocks[2].par_iter().map(|&v| f(v)).collect(),
            ],
        }
    }

    /// Largest stored value.
    pub fn max_value(&self) -> f64 {
        self.blocks.iter().flat_map(|b| b.iter()).fold(0.0f64, |m, v| m.max(v.to_f64()))
    }

    /// Quadrature of g(value) over all (2V)^2 pairs with per-vertex weights.
    pub fn integrate(&self, weights: &[f64], g: impl Fn(f64) -> f64 + Sync) -> f64 {
        let n = self.n;
        let mut total = 0.0;
        for blk in Block::ALL {
            let rows: Vec<f64> = self.blocks[blk as usize]
                .par_chunks(n)
                .enumerate()
                .map(|(a, row)| weights[a] * row.iter().zip(weights).map(|(v, w)| w * g(v.to_f64())).sum::<f64>())
                .collect();
            total += blk.multiplicity() * rows.iter().sum::<f64>();
        }
        total
    }

    /// Quadrature of g(self, other) over all pairs.
    pub fn integrate_with(&self, other: &PairGrid<T>, weights: &[f64], g: impl Fn(f64, f64) -> f64 + Sync) -> f64 {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut total = 0.0;
        for blk in Block::ALL {
            let rows: Vec<f64> = self.blocks[blk as usize]
                .par_chunks(n)
                .zip(other.blocks[blk as usize].par_chunks(n))
                .enumerate()
                .map(|(a, (r1, r2))| {
                    weights[a] * r1.iter().zip(r2).zip(weights).map(|((x, y), w)| w * g(x.to_f64(), y.to_f64())).sum::<f64>()
                })
                .collect();
            total += blk.multiplicity() * rows.iter().sum::<f64>();
        }
        total
    }
}

/// Square-root transform.
pub fn q_transform(f: &DensityGrid) -> QGrid {
    f.map(|v| v.max(0.0).sqrt())
}

/// Quadrature mass of a density grid.
pub fn grid_mass(f: &DensityGrid, mesh: &IcosphereMesh) -> f64 {
    f.integrate(&vertex_weights(mesh).weights, |v| v)
}

/// Sparse kernel rows of every endpoint against the mesh vertices.
#[derive(Debug, Clone)]
pub struct DataKernels {
    n_pairs: usize,
    /// Pairs are stored in a locality order; slot `j` holds input pair `perm[j]`.
    perm: Vec<u32>,
    /// Endpoint `2j` is the first endpoint of slot `j`, `2j+1` the second.
    points: Vec<HemiPoint>,
    ptr: Vec<usize>,
    idx: Vec<u32>,
    val: Vec<f64>,
}

impl DataKernels {
    #[inline]
    pub fn row(&self, e: usize) -> (&[u32], &[f64]) {
        let r = self.ptr[e]..self.ptr[e + 1];
        (&self.idx[r.clone()], &self.val[r])
    }

    pub fn n_pairs(&self) -> usize {
        self.n_pairs
    }

    /// Total stored kernel entries.
    pub fn nnz(&self) -> usize {
        self.val.len()
    }

    /// (row endpoint, column endpoint, block) for pair `j`; the row endpoint lies in the block's row hemisphere.
    #[inline]
    pub fn orient(&self, j: usize) -> (usize, usize, Block) {
        let (e1, e2) = (2 * j, 2 * j + 1);
        match (self.points[e1].hemi, self.points[e2].hemi) {
            (Hemi::One, Hemi::One) => (e1, e2, Block::B11),
            (Hemi::Two, Hemi::Two) => (e1, e2, Block::B22),
            (Hemi::One, Hemi::Two) => (e1, e2, Block::B12),
            (Hemi::Two, Hemi::One) => (e2, e1, Block::B12),
        }
    }
}

/// Reusable kernel density machinery on one mesh and bandwidth.
#[derive(Debug, Clone)]
pub struct KdeEngine<'m> {
    mesh: &'m IcosphereMesh,
    weights: Vec<f64>,
    spec: KernelSpec,
    profile: KernelProfile,
    expand_cos: f64,
    /// Per vertex, the sorted vertices that can lie in the support of a point of an incident face.
    near: Option<Vec<Vec<u32>>>,
    /// Vertices in order of first appearance in the (hierarchical) face list.
    vertex_order: Vec<u32>,
}

impl<'m> KdeEngine<'m> {
    pub fn new(mesh: &'m IcosphereMesh, spec: KernelSpec) -> Self {
        let profile = KernelProfile::new(&spec);
        let mut max_edge: f64 = 0.0;
        for (i, v) in mesh.vertices().iter().enumerate() {
            for &n in mesh.neighbors(i) {
                max_edge = max_edge.max(crate::sphere::angle_raw(v, &mesh.vertices()[n as usize]));
            }
        }
        let tc = profile.support_cos();
        let expand_cos = if tc <= -1.0 { -2.0 } else { (tc.clamp(-1.0, 1.0).acos() + 1.5 * max_edge).min(std::f64::consts::PI).cos() };
        let mut seen = vec![false; mesh.num_vertices()];
        let mut vertex_order = Vec::with_capacity(mesh.num_vertices());
        for f in mesh.faces() {
            for &v in f {
                if !std::mem::replace(&mut seen[v as usize], true) {
                    vertex_order.push(v as u32);
                }
            }
        }
        let near = Self::near_lists(mesh, tc, max_edge);
        KdeEngine { mesh, weights: vertex_weights(mesh).weights, spec, profile, expand_cos, near, vertex_order }
    }

    /// Candidate lists within support radius + one edge, or None when they would be too large to store.
    fn near_lists(mesh: &IcosphereMesh, tc: f64, max_edge: f64) -> Option<Vec<Vec<u32>>> {
        use std::f64::consts::PI;
        const MAX_ENTRIES: f64 = 6e7;
        if tc <= -1.0 {
            return None;
        }
        let nv = mesh.num_vertices();
        let radius = tc.clamp(-1.0, 1.0).acos() + max_edge;
        if radius >= PI || 0.5 * (1.0 - radius.cos()) * (nv * nv) as f64 > MAX_ENTRIES {
            return None;
        }
        let (keep, expand) = (radius.cos(), (radius + max_edge).min(PI).cos());
        let verts = mesh.vertices();
        let lists = (0..nv)
            .into_par_iter()
            .map_init(
                || (vec![u32::MAX; nv], Vec::new()),
                |(seen, stack), v| {
                    let c = verts[v];
                    let mut out = Vec::new();
                    stack.clear();
                    stack.push(v as u32);
                    seen[v] = v as u32;
                    while let Some(u) = stack.pop() {
                        let t = verts[u as usize].dot(&c);
                        if t >= keep {
                            out.push(u);
                        }
                        if t >= expand {
                            for &w in mesh.neighbors(u as usize) {
                                if seen[w as usize] != v as u32 {
                                    seen[w as usize] = v as u32;
                                    stack.push(w);
                                }
                            }
                        }
                    }
                    out.sort_unstable();
                    out
                },
            )
            .collect();
        Some(lists)
    }

    pub fn mesh(&self) -> &IcosphereMesh {
        self.mesh
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn profile(&self) -> &KernelProfile {
        &self.profile
    }

    /// Vertices with nonzero kernel value at `p`, sorted, with their values.
    /// Returns the face containing `p`.
    pub fn support(&self, p: &Vec3, visited: &mut [u32], stamp: u32, out_idx: &mut Vec<u32>, out_val: &mut Vec<f64>) -> usize {
        let verts = self.mesh.vertices();
        let tc = self.profile.support_cos();
        out_idx.clear();
        out_val.clear();
        if tc <= -1.0 {
            for (i, v) in verts.iter().enumerate() {
                let k = self.profile.value(v.dot(p));
                if k > 0.0 {
                    out_idx.push(i as u32);
                    out_val.push(k);
                }
            }
            return self.mesh.locate(p);
        }
        let f = self.mesh.locate(p);
        if let Some(near) = &self.near {
            let face = self.mesh.faces()[f];
            let v = *face.iter().max_by(|a, b| verts[**a as usize].dot(p).total_cmp(&verts[**b as usize].dot(p))).expect("faces have three vertices");
            for &u in &near[v as usize] {
                let k = self.profile.value(verts[u as usize].dot(p));
                if k > 0.0 {
                    out_idx.push(u);
                    out_val.push(k);
                }
            }
            return f;
        }
        let mut stack: Vec<u32> = self.mesh.faces()[f].to_vec();
        for &s in &stack {
            visited[s as usize] = stamp;
        }
        let mut found: Vec<(u32, f64)> = Vec::new();
        while let Some(v) = stack.pop() {
            let t = verts[v as usize].dot(p);
            let k = self.profile.value(t);
            if k > 0.0 {
                found.push((v, k));
            }
            if t >= self.expand_cos {
                for &n in self.mesh.neighbors(v as usize) {
                    if visited[n as usize] != stamp {
                        visited[n as usize] = stamp;
                        stack.push(n);
                    }
                }
            }
        }
        found.sort_unstable_by_key(|e| e.0);
        for (i, k) in found {
            out_idx.push(i);
            out_val.push(k);
        }
        f
    }

    /// Kernel rows of all endpoints.
    pub fn kernels(&self, pts: &EndpointSet) -> DataKernels {
        let points = pts.endpoints();
        let nv = self.mesh.num_vertices();
        let rows: Vec<(Vec<u32>, Vec<f64>, usize)> = points
            .par_iter()
            .map_init(
                || (vec![0u32; nv], 0u32),
                |(visited, stamp), p| {
                    *stamp = stamp.wrapping_add(1);
                    if *stamp == 0 {
                        visited.fill(0);
                        *stamp = 1;
                    }
                    let mut i = Vec::new();
                    let mut v = Vec::new();
                    let f = self.support(p.coords(), visited, *stamp, &mut i, &mut v);
                    (i, v, f)
                },
            )
            .collect();
        // Face indices follow the subdivision quadtree, so sorting by them groups nearby pairs.
        let nf = self.mesh.num_faces();
        let key = |e: usize| rows[e].2 + if points[e].hemi == Hemi::One { 0 } else { nf };
        let mut perm: Vec<u32> = (0..pts.len() as u32).collect();
        perm.sort_by_key(|&j| (key(2 * j as usize) >> 4, key(2 * j as usize + 1)));
        let total: usize = rows.iter().map(|r| r.0.len()).sum();
        let mut ptr = Vec::with_capacity(points.len() + 1);
        ptr.push(0);
        let mut idx = Vec::with_capacity(total);
        let mut val = Vec::with_capacity(total);
        let mut sorted = Vec::with_capacity(points.len());
        for &j in &perm {
            for e in [2 * j as usize, 2 * j as usize + 1] {
                idx.extend_from_slice(&rows[e].0);
                val.extend_from_slice(&rows[e].1);
                ptr.push(idx.len());
                sorted.push(points[e]);
            }
        }
        DataKernels { n_pairs: pts.len(), perm, points: sorted, ptr, idx, val }
    }

    /// Symmetrized density on all grid pairs, written into `out`.
    pub fn estimate_into<T: GridScalar>(&self, dk: &DataKernels, out: &mut PairGrid<T>) {
        self.estimate_blocks_into(dk, out, &Block::ALL);
    }

    /// Like `estimate_into`, but only rewrites the listed blocks.
    pub fn estimate_blocks_into<T: GridScalar>(&self, dk: &DataKernels, out: &mut PairGrid<T>, blocks: &[Block]) {
        let n = self.mesh.num_vertices();
        assert_eq!(out.vertices_per_hemi(), n);
        let scale = 0.5 / dk.n_pairs as f64;
        // Occurrence lists per block: for row vertex a, (kernel value, partner endpoint).
        let mut counts = [vec![0usize; n + 1], vec![0usize; n + 1], vec![0usize; n + 1]];
        let visit = |f: &mut dyn FnMut(Block, usize, usize)| {
            for j in 0..dk.n_pairs {
                let (u, v, blk) = dk.orient(j);
                f(blk, u, v);
                if blk != Block::B12 {
                    f(blk, v, u);
                }
            }
        };
        visit(&mut |blk, e, _| {
            if !blocks.contains(&blk) {
                return;
            }
            for &a in dk.row(e).0 {
                counts[blk as usize][a as usize + 1] += 1;
            }
        });
        let mut offs = counts;
        for c in offs.iter_mut() {
            for a in 0..n {
                c[a + 1] += c[a];
            }
        }
        let mut occ_k: [Vec<f64>; 3] = std::array::from_fn(|b| vec![0.0; offs[b][n]]);
        let mut occ_p: [Vec<u32>; 3] = std::array::from_fn(|b| vec![0u32; offs[b][n]]);
        let mut fill: [Vec<usize>; 3] = std::array::from_fn(|b| offs[b][..n].to_vec());
        visit(&mut |blk, e, partner| {
            if !blocks.contains(&blk) {
                return;
            }
            let b = blk as usize;
            let (ix, kv) = dk.row(e);
            for (&a, &k) in ix.iter().zip(kv) {
                let slot = fill[b][a as usize];
                occ_k[b][slot] = k * scale;
                occ_p[b][slot] = partner as u32;
                fill[b][a as usize] += 1;
            }
        });
        for &blk in blocks {
            let b = blk as usize;
            let upper = blk != Block::B12;
            let (ok, op, of) = (&occ_k[b], &occ_p[b], &offs[b]);
            // Rows in spatial order, so consecutive rows share most partner kernel rows in cache.
            let mut rows: Vec<Option<&mut [T]>> = out.block_mut(blk).chunks_mut(n).map(Some).collect();
            let ordered: Vec<(usize, &mut [T])> =
                self.vertex_order.iter().map(|&a| (a as usize, rows[a as usize].take().expect("vertex order is a permutation"))).collect();
            ordered.into_par_iter().for_each_init(
                || vec![0.0f64; n],
                |buf, (a, row)| {
                    let lo = if upper { a } else { 0 };
                    buf[lo..].fill(0.0);
                    for s in of[a]..of[a + 1] {
                        let k = ok[s];
                        let (ix, kv) = dk.row(op[s] as usize);
                        let start = if upper { ix.partition_point(|&c| (c as usize) < a) } else { 0 };
                        for (&c, &v) in ix[start..].iter().zip(&kv[start..]) {
                            buf[c as usize] += k * v;
                        }
                    }
                    for (r, v) in row[lo..].iter_mut().zip(&buf[lo..]) {
                        *r = T::from_f64(*v);
                    }
                },
            );
            if upper {
                let data = out.block_mut(blk);
                for a in 0..n {
                    for c in (a + 1)..n {
                        data[c * n + a] = data[a * n + c];
                    }
                }
            }
        }
    }

    /// Per-endpoint gradients of sum_{a,b} s(a,b) f(a,b) over all grid pairs, given the
    /// sensitivity grid `s` (symmetric), scaled as the derivative of the symmetrized density.
    ///
    /// For endpoint u with partner v the force is (1/N) sum_a grad K(u,a) sum_b s(a,b) K(v,b).
    pub fn endpoint_forces<T: GridScalar>(&self, dk: &DataKernels, s: &PairGrid<T>) -> Vec<Vec3> {
        let n = self.mesh.num_vertices();
        let verts = self.mesh.vertices();
        let inv_n = 1.0 / dk.n_pairs as f64;
        let per_pair: Vec<(Vec3, Vec3)> = (0..dk.n_pairs)
            .into_par_iter()
            .map_init(Vec::new, |tv: &mut Vec<f64>, j| {
                let (u, v, blk) = dk.orient(j);
                let sb = s.block(blk);
                let (ui, uk) = dk.row(u);
                let (vi, vk) = dk.row(v);
                tv.clear();
                tv.resize(vi.len(), 0.0);
                let pu = dk.points[u].coords();
                let pv = dk.points[v].coords();
                let mut fu = Vec3::zeros();
                for (&a, &ka) in ui.iter().zip(uk) {
                    let row = &sb[a as usize * n..(a as usize + 1) * n];
                    // Four partial sums break the add-latency chain.
                    let mut acc = [0.0f64; 4];
                    let split = vi.len() / 4 * 4;
                    for ((b4, k4), t4) in vi[..split].chunks_exact(4).zip(vk[..split].chunks_exact(4)).zip(tv[..split].chunks_exact_mut(4)) {
                        for l in 0..4 {
                            let sv = row[b4[l] as usize].to_f64();
                            acc[l] += sv * k4[l];
                            t4[l] += sv * ka;
                        }
                    }
                    for ((&b, &kb), tvb) in vi[split..].iter().zip(&vk[split..]).zip(tv[split..].iter_mut()) {
                        let sv = row[b as usize].to_f64();
                        acc[0] += sv * kb;
                        *tvb += sv * ka;
                    }
                    let t = (acc[0] + acc[1]) + (acc[2] + acc[3]);
                    if t != 0.0 {
                        fu += self.profile.grad(pu, &verts[a as usize]) * t;
                    }
                }
                let mut fv = Vec3::zeros();
                for (&b, &t) in vi.iter().zip(tv.iter()) {
                    if t != 0.0 {
                        fv += self.profile.grad(pv, &verts[b as usize]) * t;
                    }
                }
                let (fu, fv) = (fu * inv_n, fv * inv_n);
                if u == 2 * j {
                    (fu, fv)
                } else {
                    (fv, fu)
                }
            })
            .collect();
        let mut out = vec![Vec3::zeros(); 2 * dk.n_pairs];
        for (&j, (a, b)) in dk.perm.iter().zip(per_pair) {
            out[2 * j as usize] = a;
            out[2 * j as usize + 1] = b;
        }
        out
    }
}

/// Kernel density estimate on all grid pairs, symmetrized.
pub fn estimate_density(pts: &EndpointSet, mesh: &IcosphereMesh, spec: &KernelSpec) -> Result<DensityGrid> {
    if pts.is_empty() {
        return Err(Error::EmptyEndpointSet);
    }
    let engine = KdeEngine::new(mesh, *spec);
    if prefer_spectral(pts.len(), mesh.num_vertices(), spec, engine.profile().support_cos()) {
        return estimate_density_spectral(pts, mesh, spec);
    }
    let dk = engine.kernels(pts);
    let mut grid = PairGrid::zeros(mesh.num_vertices());
    engine.estimate_into(&dk, &mut grid);
    Ok(grid)
}

/// Rough flop comparison between the sparse sum and the harmonic-domain products.
fn prefer_spectral(n: usize, nv: usize, spec: &KernelSpec, support_cos: f64) -> bool {
    let k = ((spec.truncation + 1) * (spec.truncation + 1)) as f64;
    let nnz = nv as f64 * 0.5 * (1.0 - support_cos.max(-1.0));
    let (n, nv) = (n as f64, nv as f64);
    let spectral = 3.0 * nv * nv * k + 2.0 * n * k * k;
    spectral < 4.0 * n * nnz * nnz
}

/// Density grid summed in the harmonic domain, exact for the truncated (unclamped) kernel.
pub fn estimate_density_spectral(pts: &EndpointSet, mesh: &IcosphereMesh, spec: &KernelSpec) -> Result<DensityGrid> {
    use nalgebra::DMatrix;
    use std::f64::consts::PI;
    if pts.is_empty() {
        return Err(Error::EmptyEndpointSet);
    }
    let h = spec.truncation;
    let k = (h + 1) * (h + 1);
    let sw = spec.spectral_weights();
    let mut scale = vec![0.0; k];
    for l in 0..=h {
        let c = sw[l] * 4.0 * PI / (2 * l + 1) as f64;
        scale[l * l..(l + 1) * (l + 1)].fill(c);
    }
    let harmonics = |p: &Vec3| {
        let mut y = vec![0.0; k];
        crate::kernel::real_harmonics(p, h, &mut y);
        y
    };
    let nv = mesh.num_vertices();
    let g_rows: Vec<f64> = mesh
        .vertices()
        .par_iter()
        .flat_map_iter(|v| harmonics(v).into_iter().zip(&scale).map(|(y, c)| y * c).collect::<Vec<_>>())
        .collect();
    let g = DMatrix::from_row_slice(nv, k, &g_rows);
    let ends: Vec<Vec<f64>> = pts
        .pairs()
        .par_iter()
        .flat_map_iter(|p| [harmonics(p.first.point.coords()), harmonics(p.second.point.coords())])
        .collect();
    let oriented: Vec<(usize, usize, Block)> = pts
        .pairs()
        .iter()
        .enumerate()
        .flat_map(|(j, p)| {
            let (u, v) = (2 * j, 2 * j + 1);
            let block = |a: Hemi, b: Hemi| match (a, b) {
                (Hemi::One, Hemi::One) => Some(Block::B11),
                (Hemi::Two, Hemi::Two) => Some(Block::B22),
                (Hemi::One, Hemi::Two) => Some(Block::B12),
                (Hemi::Two, Hemi::One) => None,
            };
            [(u, v, block(p.first.hemi, p.second.hemi)), (v, u, block(p.second.hemi, p.first.hemi))]
        })
        .filter_map(|(a, b, blk)| blk.map(|blk| (a, b, blk)))
        .collect();
    let inv = 0.5 / pts.len() as f64;
    let mut grid = PairGrid::zeros(nv);
    for blk in Block::ALL {
        let sel: Vec<(usize, usize)> = oriented.iter().filter(|o| o.2 == blk).map(|o| (o.0, o.1)).collect();
        if sel.is_empty() {
            continue;
        }
        let p = DMatrix::from_fn(sel.len(), k, |r, c| ends[sel[r].0][c]);
        let q = DMatrix::from_fn(sel.len(), k, |r, c| ends[sel[r].1][c]);
        let m = p.transpose() * q * inv;
        // Column-major G M^T G^T holds the row-major G M G^T.
        let x = &g * m.transpose() * g.transpose();
        let out = grid.block_mut(blk);
        out.copy_from_slice(x.as_slice());
        if blk != Block::B12 {
            for a in 0..nv {
                for b in a + 1..nv {
                    out[b * nv + a] = out[a * nv + b];
                }
            }
        }
    }
    Ok(grid)
}

/// Unsymmetrized density at one point pair by direct summation.
pub fn density_at(pts: &EndpointSet, x: &HemiPoint, y: &HemiPoint, spec: &KernelSpec) -> f64 {
    let s: f64 = pts.pairs().iter().map(|p| heat_kernel(x, &p.first, spec) * heat_kernel(y, &p.second, spec)).sum();
    s / pts.len() as f64
}

/// Symmetrized density at one point pair by direct summation.
pub fn density_sym_at(pts: &EndpointSet, x: &HemiPoint, y: &HemiPoint, spec: &KernelSpec) -> f64 {
    0.5 * (density_at(pts, x, y, spec) + density_at(pts, y, x, spec))
}

/// Global grid index to hemisphere point.
pub fn grid_point(mesh: &IcosphereMesh, a: usize) -> HemiPoint {
    let n = mesh.num_vertices();
    if a < n {
        HemiPoint::new(Hemi::One, mesh.vertex(a))
    } else {
        HemiPoint::new(Hemi::Two, mesh.vertex(a - n))
    }
}

/// First-argument gradients of q on all (2V)^2 grid pairs, row-major over global indices.
#[derive(Debug, Clone)]
pub struct QGradients {
    n: usize,
    dx: Vec<Vec3>,
}

impl QGradients {
    pub fn vertices_per_hemi(&self) -> usize {
        self.n
    }

    /// d q(x, y) / d x at grid pair (a, b).
    pub fn dx(&self, a: usize, b: usize) -> Vec3 {
        self.dx[a * 2 * self.n + b]
    }

    /// d q(x, y) / d y at grid pair (a, b), by symmetry of q.
    pub fn dy(&self, a: usize, b: usize) -> Vec3 {
        self.dx(b, a)
    }

    /// Row of first-argument gradients for global row `a`.
    pub fn row(&self, a: usize) -> &[Vec3] {
        &self.dx[a * 2 * self.n..(a + 1) * 2 * self.n]
    }

    /// Builds from an explicit row-major array of first-argument gradients.
    pub fn from_rows(n: usize, dx: Vec<Vec3>) -> Self {
        assert_eq!(dx.len(), 4 * n * n);
        QGradients { n, dx }
    }
}

/// Analytic q-gradients from the kernel gradient, with q-gradient zero where f < 1e-12 max f.
pub fn q_gradients(pts: &EndpointSet, f: &DensityGrid, mesh: &IcosphereMesh, spec: &KernelSpec) -> QGradients {
    let engine = KdeEngine::new(mesh, *spec);
    let dk = engine.kernels(pts);
    let n = mesh.num_vertices();
    let n2 = 2 * n;
    let verts = mesh.vertices();
    let mut df = vec![Vec3::zeros(); n2 * n2];
    let scale = 0.5 / pts.len() as f64;
    let offset = |h: Hemi| if h == Hemi::One { 0 } else { n };
    for j in 0..pts.len() {
        for (e, partner) in [(2 * j, 2 * j + 1), (2 * j + 1, 2 * j)] {
            let pe = dk.points[e];
            let pp = dk.points[partner];
            let (ei, _) = dk.row(e);
            let (pi, pk) = dk.row(partner);
            for &a in ei {
                let g = engine.profile.grad(&verts[a as usize], pe.coords()) * scale;
                let ga = offset(pe.hemi) + a as usize;
                for (&b, &kb) in pi.iter().zip(pk) {
                    let gb = offset(pp.hemi) + b as usize;
                    df[ga * n2 + gb] += g * kb;
                }
            }
        }
    }
    let floor = 1e-12 * f.max_value();
    for a in 0..n2 {
        for b in 0..n2 {
            let fv = f.get(a, b);
            let d = &mut df[a * n2 + b];
            *d = if fv < floor || fv <= 0.0 { Vec3::zeros() } else { *d / (2.0 * fv.sqrt()) };
        }
    }
    QGradients { n, dx: df }
}

/// Leave-one-out log-likelihood score, with the kernel evaluated on its full support.
pub fn lcv_score(pts: &EndpointSet, sigma: f64) -> Result<f64> {
    let spec = KernelSpec::new(sigma).with_cutoff(0.0);
    let profile = KernelProfile::new(&spec);
    lcv_with_profile(pts, &profile)
}

/// Scores for several bandwidths sharing one Legendre table; degenerate bandwidths give -inf.
pub fn lcv_sweep(pts: &EndpointSet, sigmas: &[f64]) -> Vec<f64> {
    if sigmas.is_empty() {
        return Vec::new();
    }
    let specs: Vec<KernelSpec> = sigmas.iter().map(|&s| KernelSpec::new(s).with_cutoff(0.0)).collect();
    let smin = sigmas.iter().cloned().fold(f64::INFINITY, f64::min);
    let hmax = specs.iter().map(|s| s.truncation).max().unwrap();
    let cache = KernelProfile::node_cache(-1.0, 5e-3 * smin, hmax);
    specs
        .iter()
        .map(|spec| lcv_with_profile(pts, &KernelProfile::from_cache(&cache, spec)).unwrap_or(f64::NEG_INFINITY))
        .collect()
}

fn lcv_with_profile(pts: &EndpointSet, profile: &KernelProfile) -> Result<f64> {
    let n = pts.len();
    if n < 2 {
        return Err(Error::EmptyEndpointSet);
    }
    let pairs = pts.pairs();
    let tc = profile.support_cos();
    let loo: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|j| {
            let pj = &pairs[j];
            let mut s = 0.0;
            for (i, pi) in pairs.iter().enumerate() {
                if i == j || pi.first.hemi != pj.first.hemi || pi.second.hemi != pj.second.hemi {
                    continue;
                }
                let t1 = pi.first.point.dot(&pj.first.point);
                if t1 < tc {
                    continue;
                }
                let t2 = pi.second.point.dot(&pj.second.point);
                if t2 < tc {
                    continue;
                }
                s += profile.value(t1) * profile.value(t2);
            }
            s / (n - 1) as f64
        })
        .collect();
    let zeros = loo.iter().filter(|&&v| v <= 0.0).count();
    if zeros > 0 {
        return Err(Error::DegenerateLikelihood { zero_count: zeros });
    }
    Ok(loo.iter().map(|v| v.ln()).sum::<f64>() / n as f64)
}
