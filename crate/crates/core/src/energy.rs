//! Warp energy, Jacobian group action on grids, and energy gradients in basis coefficients.

use rayon::prelude::*;

use crate::basis::TangentBasis;
use crate::density::{Block, GridScalar, PairGrid, QGradients};
use crate::error::{Error, Result};
use crate::mesh::{orientation, vertex_weights, IcosphereMesh};
use crate::sphere::{exp_raw, log_raw, tangent_frame, Hemi, HemiPoint, Vec3};

/// Quadrature of (q1 - q2)^2 over all grid pairs.
pub fn warp_energy<T: GridScalar>(q1: &PairGrid<T>, q2: &PairGrid<T>, mesh: &IcosphereMesh) -> f64 {
    q1.integrate_with(q2, &vertex_weights(mesh).weights, |a, b| (a - b) * (a - b))
}

/// Images of the grid vertices of both hemispheres under a warp.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpGrid {
    level: usize,
    targets: [Vec<Vec3>; 2],
}

impl WarpGrid {
    pub fn identity(mesh: &IcosphereMesh) -> Self {
        WarpGrid { level: mesh.level(), targets: [mesh.vertices().to_vec(), mesh.vertices().to_vec()] }
    }

    pub fn from_targets(mesh: &IcosphereMesh, t1: Vec<Vec3>, t2: Vec<Vec3>) -> Self {
        assert_eq!(t1.len(), mesh.num_vertices());
        assert_eq!(t2.len(), mesh.num_vertices());
        WarpGrid { level: mesh.level(), targets: [t1, t2] }
    }

    /// Evaluates `map` at every vertex of both hemispheres.
    pub fn from_map(mesh: &IcosphereMesh, map: impl Fn(Hemi, &Vec3) -> Vec3 + Sync) -> Self {
        let t = |h| mesh.vertices().par_iter().map(|v| map(h, v)).collect();
        WarpGrid { level: mesh.level(), targets: [t(Hemi::One), t(Hemi::Two)] }
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn targets(&self, h: Hemi) -> &[Vec3] {
        &self.targets[h.index()]
    }

    pub fn targets_mut(&mut self, h: Hemi) -> &mut [Vec3] {
        &mut self.targets[h.index()]
    }

    /// Faces whose warped orientation is not positive, over both hemispheres.
    pub fn negative_faces(&self, mesh: &IcosphereMesh) -> usize {
        self.targets
            .iter()
            .map(|t| {
                mesh.faces()
                    .par_iter()
                    .filter(|f| {
                        let [a, b, c] = f.map(|i| t[i as usize]);
                        orientation(&a, &b, &c) <= 0.0
                    })
                    .count()
            })
            .sum()
    }

    /// Mean geodesic displacement of the vertices over both hemispheres.
    pub fn mean_displacement(&self, mesh: &IcosphereMesh) -> f64 {
        let s: f64 = self
            .targets
            .iter()
            .flat_map(|t| t.iter().zip(mesh.vertices()))
            .map(|(a, b)| crate::sphere::angle_raw(a, b))
            .sum();
        s / (2 * mesh.num_vertices()) as f64
    }

    /// Piecewise-linear image of an arbitrary point (barycentric in the source face).
    pub fn eval(&self, mesh: &IcosphereMesh, h: Hemi, p: &Vec3) -> Vec3 {
        let f = mesh.locate(p);
        let lam = mesh.barycentric(f, p);
        let t = &self.targets[h.index()];
        let face = mesh.faces()[f];
        let v: Vec3 = (0..3).map(|k| t[face[k] as usize] * lam[k]).sum();
        v.normalize()
    }

    /// Per-vertex inverse: warped-face search from the nearest warped vertex, then fixed-point refinement.
    pub fn inverse(&self, mesh: &IcosphereMesh) -> WarpGrid {
        let mut incident = vec![Vec::new(); mesh.num_vertices()];
        for (f, face) in mesh.faces().iter().enumerate() {
            for &v in face {
                incident[v as usize].push(f);
            }
        }
        let inv = |h: Hemi| -> Vec<Vec3> {
            let t = &self.targets[h.index()];
            mesh.vertices()
                .par_iter()
                .map(|x| {
                    let near = (0..t.len()).max_by(|&a, &b| t[a].dot(x).total_cmp(&t[b].dot(x))).unwrap();
                    let mut y = mesh.vertices()[near];
                    let mut cand: Vec<usize> = incident[near].clone();
                    let mut seen = std::collections::HashSet::new();
                    let mut best = (f64::NEG_INFINITY, 0usize);
                    let mut k = 0;
                    while k < cand.len() && k < 512 {
                        let f = cand[k];
                        k += 1;
                        if !seen.insert(f) {
                            continue;
                        }
                        let [a, b, c] = mesh.faces()[f].map(|i| t[i as usize]);
                        let m = a.cross(&b).dot(x).min(b.cross(&c).dot(x)).min(c.cross(&a).dot(x));
                        if m > best.0 {
                            best = (m, f);
                        }
                        if m >= -1e-14 {
                            break;
                        }
                        for &v in &mesh.faces()[f] {
                            cand.extend(incident[v as usize].iter().copied());
                        }
                    }
                    let f = best.1;
                    let [a, b, c] = mesh.faces()[f].map(|i| t[i as usize]);
                    let la = x.dot(&b.cross(&c));
                    let lb = x.dot(&c.cross(&a));
                    let lc = x.dot(&a.cross(&b));
                    let s = la + lb + lc;
                    let face = mesh.faces()[f];
                    let src = mesh.vertices();
                    let guess = src[face[0] as usize] * (la / s) + src[face[1] as usize] * (lb / s) + src[face[2] as usize] * (lc / s);
                    y = if guess.norm() > 0.0 { guess.normalize() } else { y };
                    for _ in 0..20 {
                        let fy = self.eval(mesh, h, &y);
                        match log_raw(&fy, x) {
                            Some(d) if d.norm() > 1e-15 => y = exp_raw(&y, &(d - y * y.dot(&d))),
                            _ => break,
                        }
                    }
                    y
                })
                .collect()
        };
        WarpGrid { level: self.level, targets: [inv(Hemi::One), inv(Hemi::Two)] }
    }
}

/// Per-vertex Jacobian determinants of a grid warp, per hemisphere.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianField {
    pub values: [Vec<f64>; 2],
}

/// det of the 2x2 least-squares differential fitted to log-map displacements of the 1-ring.
pub fn jacobian_determinant(warp: &WarpGrid, mesh: &IcosphereMesh) -> Result<JacobianField> {
    let verts = mesh.vertices();
    let one = |h: Hemi| -> Result<Vec<f64>> {
        let t = &warp.targets[h.index()];
        (0..verts.len())
            .into_par_iter()
            .map(|i| {
                let (e1, e2) = tangent_frame(&verts[i]);
                let (f1, f2) = tangent_frame(&t[i]);
                let mut dd = [[0.0; 2]; 2];
                let mut td = [[0.0; 2]; 2];
                for &n in mesh.neighbors(i) {
                    let n = n as usize;
                    let d = log_raw(&verts[i], &verts[n]).expect("adjacent vertices");
                    let e = log_raw(&t[i], &t[n]).ok_or(Error::SingularNeighborhood { hemi: h.label(), vertex: i })?;
                    let ds = [d.dot(&e1), d.dot(&e2)];
                    let es = [e.dot(&f1), e.dot(&f2)];
                    for r in 0..2 {
                        for c in 0..2 {
                            dd[r][c] += ds[r] * ds[c];
                            td[r][c] += es[r] * ds[c];
                        }
                    }
                }
                let det_dd = dd[0][0] * dd[1][1] - dd[0][1] * dd[1][0];
                let det_td = td[0][0] * td[1][1] - td[0][1] * td[1][0];
                let scale = td.iter().flatten().map(|v| v * v).sum::<f64>();
                if det_td.abs() <= 1e-12 * scale || scale == 0.0 {
                    return Err(Error::SingularNeighborhood { hemi: h.label(), vertex: i });
                }
                Ok(det_td / det_dd)
            })
            .collect()
    };
    Ok(JacobianField { values: [one(Hemi::One)?, one(Hemi::Two)?] })
}

/// Per-hemisphere sparse resampling rows: sqrt(J(a)) times barycentric weights at the warped vertex.
#[derive(Debug, Clone)]
pub struct Resampler {
    rows: [Vec<[(u32, f64); 3]>; 2],
}

impl Resampler {
    pub fn new(warp: &WarpGrid, mesh: &IcosphereMesh) -> Result<Self> {
        let jac = jacobian_determinant(warp, mesh)?;
        let mk = |h: Hemi| -> Result<Vec<[(u32, f64); 3]>> {
            let t = &warp.targets[h.index()];
            let j = &jac.values[h.index()];
            (0..t.len())
                .into_par_iter()
                .map(|a| {
                    if j[a] <= 0.0 {
                        return Err(Error::SingularNeighborhood { hemi: h.label(), vertex: a });
                    }
                    let f = mesh.locate(&t[a]);
                    let lam = mesh.barycentric(f, &t[a]);
                    let s = j[a].sqrt();
                    let face = mesh.faces()[f];
                    Ok([0, 1, 2].map(|k| (face[k], lam[k] * s)))
                })
                .collect()
        };
        Ok(Resampler { rows: [mk(Hemi::One)?, mk(Hemi::Two)?] })
    }

    pub fn rows(&self, h: Hemi) -> &[[(u32, f64); 3]] {
        &self.rows[h.index()]
    }
}

/// Jacobian-weighted pullback (q*gamma)(x, y) = q(gamma x, gamma y) sqrt(J(x) J(y)).
pub fn apply_group_action<T: GridScalar>(q: &PairGrid<T>, warp: &WarpGrid, mesh: &IcosphereMesh) -> Result<PairGrid<T>> {
    let s = Resampler::new(warp, mesh)?;
    let mut out = q.clone();
    apply_group_action_in_place(&mut out, &s);
    Ok(out)
}

/// In-place form of `apply_group_action` using one block of scratch.
pub fn apply_group_action_in_place<T: GridScalar>(q: &mut PairGrid<T>, s: &Resampler) {
    let n = q.vertices_per_hemi();
    let mut tmp = vec![T::default(); n * n];
    for (blk, rh, ch) in [(Block::B11, Hemi::One, Hemi::One), (Block::B22, Hemi::Two, Hemi::Two), (Block::B12, Hemi::One, Hemi::Two)] {
        let data = q.block_mut(blk);
        let sc = s.rows(ch);
        let sr = s.rows(rh);
        tmp.par_chunks_mut(n).zip(data.par_chunks(n)).for_each(|(trow, qrow)| {
            for (t, w) in trow.iter_mut().zip(sc) {
                let v: f64 = w.iter().map(|&(j, c)| c * qrow[j as usize].to_f64()).sum();
                *t = T::from_f64(v);
            }
        });
        data.par_chunks_mut(n).zip(sr.par_iter()).for_each(|(orow, w)| {
            let rows = w.map(|(j, c)| (&tmp[j as usize * n..(j as usize + 1) * n], c));
            for (k, o) in orow.iter_mut().enumerate() {
                let v = rows[0].1 * rows[0].0[k].to_f64() + rows[1].1 * rows[1].0[k].to_f64() + rows[2].1 * rows[2].0[k].to_f64();
                *o = T::from_f64(v);
            }
        });
        if blk != Block::B12 {
            for a in 0..n {
                for b in (a + 1)..n {
                    data[b * n + a] = data[a * n + b];
                }
            }
        }
    }
}

/// Basis coefficients of the energy gradient per hemisphere.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCoeffs {
    pub coeffs: [Vec<f64>; 2],
    pub l2_norms: [f64; 2],
}

impl GradientCoeffs {
    pub fn new(c1: Vec<f64>, c2: Vec<f64>) -> Self {
        let n = |c: &Vec<f64>| c.iter().map(|v| v * v).sum::<f64>().sqrt();
        let l2_norms = [n(&c1), n(&c2)];
        GradientCoeffs { coeffs: [c1, c2], l2_norms }
    }

    pub fn zeros(m: usize) -> Self {
        Self::new(vec![0.0; m], vec![0.0; m])
    }

    pub fn max_norm(&self) -> f64 {
        self.l2_norms[0].max(self.l2_norms[1])
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::new(self.coeffs[0].iter().map(|v| v * s).collect(), self.coeffs[1].iter().map(|v| v * s).collect())
    }
}

/// Gradient coefficients from per-vertex terms: g_i = 4 sum_x w_x (b_i(x).u(x) + div b_i(x) z(x)).
///
/// Coefficients follow the point-motion convention: moving points along +b_i changes the energy at rate g_i.
fn coeffs_from_vertex_terms(u: &[Vec<Vec3>; 2], z: &[Vec<f64>; 2], basis: &TangentBasis, mesh: &IcosphereMesh) -> GradientCoeffs {
    let w = vertex_weights(mesh).weights;
    let m = basis.len();
    let verts = mesh.vertices();
    let per_h = |h: usize| -> Vec<f64> {
        let parts: Vec<Vec<f64>> = verts
            .par_chunks(256)
            .enumerate()
            .map(|(ci, chunk)| {
                let mut acc = vec![0.0; m];
                let mut b = vec![Vec3::zeros(); m];
                let mut d = vec![0.0; m];
                for (k, p) in chunk.iter().enumerate() {
                    let x = ci * 256 + k;
                    basis.eval_into(p, &mut b, Some(&mut d));
                    for i in 0..m {
                        acc[i] += 4.0 * w[x] * (b[i].dot(&u[h][x]) + d[i] * z[h][x]);
                    }
                }
                acc
            })
            .collect();
        let mut out = vec![0.0; m];
        for p in parts {
            for (o, v) in out.iter_mut().zip(p) {
                *o += v;
            }
        }
        out
    };
    GradientCoeffs::new(per_h(0), per_h(1))
}

/// Gradient of the energy from stored analytic q-gradients of q2.
pub fn energy_gradient(q1: &PairGrid<f64>, q2: &PairGrid<f64>, grads: &QGradients, basis: &TangentBasis, mesh: &IcosphereMesh) -> GradientCoeffs {
    let n = mesh.num_vertices();
    let w = vertex_weights(mesh).weights;
    let mut u = [vec![Vec3::zeros(); n], vec![Vec3::zeros(); n]];
    let mut z = [vec![0.0; n], vec![0.0; n]];
    for h in 0..2 {
        let (uh, zh) = (&mut u[h], &mut z[h]);
        uh.par_iter_mut().zip(zh.par_iter_mut()).enumerate().for_each(|(i, (ui, zi))| {
            let a = h * n + i;
            let row = grads.row(a);
            for b in 0..2 * n {
                let wy = w[b % n];
                let q2v = q2.get(a, b);
                let r = q1.get(a, b) - q2v;
                *ui += row[b] * (wy * r);
                *zi += 0.5 * wy * r * q2v;
            }
        });
    }
    coeffs_from_vertex_terms(&u, &z, basis, mesh)
}

/// 1-ring least-squares gradient stencil: grad g(x) ~ sum_n C[x,n] (g(n) - g(x)).
#[derive(Debug, Clone)]
pub struct GridStencil {
    coeffs: Vec<Vec<Vec3>>,
}

impl GridStencil {
    pub fn new(mesh: &IcosphereMesh) -> Self {
        let verts = mesh.vertices();
        let coeffs = (0..verts.len())
            .map(|i| {
                let (e1, e2) = tangent_frame(&verts[i]);
                let ds: Vec<[f64; 2]> = mesh
                    .neighbors(i)
                    .iter()
                    .map(|&n| {
                        let d = log_raw(&verts[i], &verts[n as usize]).expect("adjacent vertices");
                        [d.dot(&e1), d.dot(&e2)]
                    })
                    .collect();
                let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
                for d in &ds {
                    a += d[0] * d[0];
                    b += d[0] * d[1];
                    c += d[1] * d[1];
                }
                let det = a * c - b * b;
                ds.iter()
                    .map(|d| {
                        let g0 = (c * d[0] - b * d[1]) / det;
                        let g1 = (-b * d[0] + a * d[1]) / det;
                        e1 * g0 + e2 * g1
                    })
                    .collect()
            })
            .collect();
        GridStencil { coeffs }
    }

    /// Stencil vectors aligned with `mesh.neighbors(i)`.
    pub fn at(&self, i: usize) -> &[Vec3] {
        &self.coeffs[i]
    }

    /// Gradient of a vertex function.
    pub fn gradient(&self, mesh: &IcosphereMesh, g: &[f64], i: usize) -> Vec3 {
        mesh.neighbors(i).iter().zip(&self.coeffs[i]).map(|(&n, c)| c * (g[n as usize] - g[i])).sum()
    }
}

/// Gradient of the energy with first-argument q-gradients of q2 taken from the grid by the 1-ring stencil.
pub fn grid_energy_gradient<T: GridScalar>(
    q1: &PairGrid<T>,
    q2: &PairGrid<T>,
    basis: &TangentBasis,
    mesh: &IcosphereMesh,
    stencil: &GridStencil,
) -> GradientCoeffs {
    let n = mesh.num_vertices();
    let w = vertex_weights(mesh).weights;
    // Ring lists with the vertex itself first.
    let rings: Vec<Vec<usize>> = (0..n).map(|i| std::iter::once(i).chain(mesh.neighbors(i).iter().map(|&k| k as usize)).collect()).collect();
    let row_dots = |blk: Block| -> Vec<Vec<f64>> {
        let (r1, r2) = (q1.block(blk), q2.block(blk));
        (0..n)
            .into_par_iter()
            .map_init(
                || vec![0.0f64; n],
                |rw, i| {
                    for (k, o) in rw.iter_mut().enumerate() {
                        *o = w[k] * (r1[i * n + k].to_f64() - r2[i * n + k].to_f64());
                    }
                    rings[i]
                        .iter()
                        .map(|&m| rw.iter().zip(&r2[m * n..(m + 1) * n]).map(|(a, b)| a * b.to_f64()).sum())
                        .collect()
                },
            )
            .collect()
    };
    let col_dots = || -> Vec<Vec<f64>> {
        let (r1, r2) = (q1.block(Block::B12), q2.block(Block::B12));
        (0..n)
            .into_par_iter()
            .map(|i| {
                let ring = &rings[i];
                let mut acc = vec![0.0; ring.len()];
                for y in 0..n {
                    let base = y * n;
                    let rv = w[y] * (r1[base + i].to_f64() - r2[base + i].to_f64());
                    if rv == 0.0 {
                        continue;
                    }
                    for (a, &m) in acc.iter_mut().zip(ring) {
                        *a += rv * r2[base + m].to_f64();
                    }
                }
                acc
            })
            .collect()
    };
    let d11 = row_dots(Block::B11);
    let d12r = row_dots(Block::B12);
    let d22 = row_dots(Block::B22);
    let d12c = col_dots();
    let mut u = [vec![Vec3::zeros(); n], vec![Vec3::zeros(); n]];
    let mut z = [vec![0.0; n], vec![0.0; n]];
    for (h, (da, db)) in [(&d11, &d12r), (&d22, &d12c)].into_iter().enumerate() {
        for i in 0..n {
            let tot: Vec<f64> = da[i].iter().zip(&db[i]).map(|(a, b)| a + b).collect();
            let r0 = tot[0];
            z[h][i] = 0.5 * r0;
            u[h][i] = stencil.at(i).iter().zip(&tot[1..]).map(|(c, rn)| c * (rn - r0)).sum();
        }
    }
    coeffs_from_vertex_terms(&u, &z, basis, mesh)
}

/// Converts an estimated f2 in place into the sensitivity w_a w_b (q2 - q1)/q2 and returns the energy.
///
/// Cells with f2 below 1e-12 max f2 get zero sensitivity.
pub fn sensitivity_in_place<T: GridScalar>(q1: &PairGrid<T>, f2: &mut PairGrid<T>, weights: &[f64]) -> f64 {
    let n = q1.vertices_per_hemi();
    let floor = 1e-12 * f2.max_value();
    let mut energy = 0.0;
    let blocks = f2.blocks_mut();
    for (blk, data) in Block::ALL.into_iter().zip(blocks) {
        let q = q1.block(blk);
        let parts: Vec<f64> = data
            .par_chunks_mut(n)
            .zip(q.par_chunks(n))
            .enumerate()
            .map(|(a, (row, qrow))| {
                let cell = |s: &mut T, q1v: T, wb: f64| {
                    let f = s.to_f64().max(0.0);
                    let q1v = q1v.to_f64();
                    let q2v = f.sqrt();
                    let ww = weights[a] * wb;
                    *s = T::from_f64(if f < floor || f <= 0.0 { 0.0 } else { ww * (q2v - q1v) / q2v });
                    ww * (q1v - q2v) * (q1v - q2v)
                };
                // Independent lanes let the square roots and divisions vectorize.
                let mut e = [0.0f64; 4];
                let split = n / 4 * 4;
                for ((r4, q4), w4) in row[..split].chunks_exact_mut(4).zip(qrow[..split].chunks_exact(4)).zip(weights[..split].chunks_exact(4)) {
                    for l in 0..4 {
                        e[l] += cell(&mut r4[l], q4[l], w4[l]);
                    }
                }
                for ((s, &q1v), &wb) in row[split..].iter_mut().zip(&qrow[split..]).zip(&weights[split..]) {
                    e[0] += cell(s, q1v, wb);
                }
                (e[0] + e[1]) + (e[2] + e[3])
            })
            .collect();
        energy += blk.multiplicity() * parts.iter().sum::<f64>();
    }
    energy
}

/// Gradient coefficients from per-endpoint energy derivatives: g_i = sum over endpoints on h of b_i(e).F_e.
pub fn endpoint_gradient(points: &[HemiPoint], forces: &[Vec3], basis: &TangentBasis) -> GradientCoeffs {
    let m = basis.len();
    let per_h = |h: Hemi| -> Vec<f64> {
        let parts: Vec<Vec<f64>> = points
            .par_chunks(1024)
            .zip(forces.par_chunks(1024))
            .map(|(pc, fc)| {
                let mut acc = vec![0.0; m];
                let mut b = vec![Vec3::zeros(); m];
                for (p, f) in pc.iter().zip(fc) {
                    if p.hemi != h || *f == Vec3::zeros() {
                        continue;
                    }
                    basis.eval_into(p.coords(), &mut b, None);
                    for i in 0..m {
                        acc[i] += b[i].dot(f);
                    }
                }
                acc
            })
            .collect();
        let mut out = vec![0.0; m];
        for p in parts {
            for (o, v) in out.iter_mut().zip(p) {
                *o += v;
            }
        }
        out
    };
    GradientCoeffs::new(per_h(Hemi::One), per_h(Hemi::Two))
}
