//! Icosphere meshes: subdivision hierarchy, quadrature weights and point location.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::sphere::{SpherePoint, Vec3};

pub const MAX_LEVEL: usize = 7;

/// Containment slack for points lying on shared edges.
const EDGE_TOL: f64 = 1e-12;

/// Recursively subdivided icosahedron projected onto the unit sphere.
///
/// Face `f` of level `g` has children `4f..4f+4` at level `g+1`, and the first
/// `10*4^g+2` vertices of a level are exactly the vertices of level `g`.
#[derive(Debug, Clone)]
pub struct IcosphereMesh {
    level: usize,
    vertices: Vec<Vec3>,
    faces: Vec<[u32; 3]>,
    /// Faces of every level `0..=level`, coarse first.
    hierarchy: Vec<Vec<[u32; 3]>>,
    neighbors: Vec<Vec<u32>>,
}

/// Per-vertex quadrature weights in steradians.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureWeights {
    pub weights: Vec<f64>,
}

const ICO_FACES: [[u32; 3]; 20] = [
    [0, 11, 5],
    [0, 5, 1],
    [0, 1, 7],
    [0, 7, 10],
    [0, 10, 11],
    [1, 5, 9],
    [5, 11, 4],
    [11, 10, 2],
    [10, 7, 6],
    [7, 1, 8],
    [3, 9, 4],
    [3, 4, 2],
    [3, 2, 6],
    [3, 6, 8],
    [3, 8, 9],
    [4, 9, 5],
    [2, 4, 11],
    [6, 2, 10],
    [8, 6, 7],
    [9, 8, 1],
];

fn icosahedron_vertices() -> Vec<Vec3> {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|c| Vec3::new(c[0], c[1], c[2]).normalize())
    .collect()
}

/// Vertex count at level `g`.
pub fn vertex_count(g: usize) -> usize {
    10 * 4usize.pow(g as u32) + 2
}

/// Face count at level `g`.
pub fn face_count(g: usize) -> usize {
    20 * 4usize.pow(g as u32)
}

/// Builds the level-`g` icosphere.
pub fn build_icosphere(g: usize) -> Result<IcosphereMesh> {
    if g > MAX_LEVEL {
        return Err(Error::LevelTooLarge(g));
    }
    let mut vertices = icosahedron_vertices();
    let mut hierarchy = vec![ICO_FACES.to_vec()];
    for _ in 0..g {
        let prev = hierarchy.last().unwrap();
        let mut mids: HashMap<(u32, u32), u32> = HashMap::with_capacity(prev.len() * 3 / 2);
        let mut next = Vec::with_capacity(prev.len() * 4);
        let mut mid = |a: u32, b: u32, verts: &mut Vec<Vec3>| -> u32 {
            let key = (a.min(b), a.max(b));
            *mids.entry(key).or_insert_with(|| {
                let m = (verts[a as usize] + verts[b as usize]).normalize();
                verts.push(m);
                (verts.len() - 1) as u32
            })
        };
        for &[a, b, c] in prev {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.push([a, ab, ca]);
            next.push([b, bc, ab]);
            next.push([c, ca, bc]);
            next.push([ab, bc, ca]);
        }
        hierarchy.push(next);
    }
    let faces = hierarchy.last().unwrap().clone();
    let mut neighbors = vec![Vec::new(); vertices.len()];
    for f in &faces {
        for k in 0..3 {
            let (a, b) = (f[k] as usize, f[(k + 1) % 3]);
            if !neighbors[a].contains(&b) {
                neighbors[a].push(b);
            }
            let (a, b) = (f[(k + 1) % 3] as usize, f[k]);
            if !neighbors[a].contains(&b) {
                neighbors[a].push(b);
            }
        }
    }
    for n in &mut neighbors {
        n.sort_unstable();
    }
    Ok(IcosphereMesh { level: g, vertices, faces, hierarchy, neighbors })
}

impl IcosphereMesh {
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn vertex(&self, i: usize) -> SpherePoint {
        SpherePoint::from_unit(self.vertices[i])
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    /// Sorted 1-ring of vertex `i`.
    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.neighbors[i]
    }

    /// Level-(G-1) vertex `i` appears at index `i` of this level.
    pub fn parent_map(&self) -> Vec<usize> {
        if self.level == 0 {
            return Vec::new();
        }
        (0..vertex_count(self.level - 1)).collect()
    }

    /// Face containing `p` (central projection), lowest index on ties.
    pub fn locate_face(&self, p: &SpherePoint) -> usize {
        self.locate(p.coords())
    }

    /// Hierarchical descent; falls back to a scan if rounding defeats the descent.
    pub fn locate(&self, p: &Vec3) -> usize {
        self.descend(p, 0, 0..20).unwrap_or_else(|| self.locate_brute_force(p))
    }

    fn descend(&self, p: &Vec3, lvl: usize, range: std::ops::Range<usize>) -> Option<usize> {
        let faces = &self.hierarchy[lvl];
        for f in range {
            if contains(&self.vertices, &faces[f], p) {
                if lvl == self.level {
                    return Some(f);
                }
                if let Some(hit) = self.descend(p, lvl + 1, 4 * f..4 * f + 4) {
                    return Some(hit);
                }
            }
        }
        None
    }

    /// Exhaustive scan over all faces with the same containment predicate.
    pub fn locate_brute_force(&self, p: &Vec3) -> usize {
        self.faces
            .iter()
            .position(|f| contains(&self.vertices, f, p))
            .unwrap_or_else(|| {
                // Only reachable through rounding: pick the face with the largest minimum edge margin.
                let mut best = (f64::NEG_INFINITY, 0);
                for (i, f) in self.faces.iter().enumerate() {
                    let m = margin(&self.vertices, f, p);
                    if m > best.0 {
                        best = (m, i);
                    }
                }
                best.1
            })
    }

    /// Planar barycentric coordinates of the central projection of `p` on face `f`.
    pub fn barycentric(&self, f: usize, p: &Vec3) -> [f64; 3] {
        let [a, b, c] = self.faces[f].map(|i| self.vertices[i as usize]);
        let la = p.dot(&b.cross(&c));
        let lb = p.dot(&c.cross(&a));
        let lc = p.dot(&a.cross(&b));
        let s = la + lb + lc;
        [la / s, lb / s, lc / s]
    }

    /// Spherical area of face `f`.
    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f].map(|i| self.vertices[i as usize]);
        spherical_triangle_area(&a, &b, &c)
    }
}

fn margin(verts: &[Vec3], f: &[u32; 3], p: &Vec3) -> f64 {
    let [a, b, c] = f.map(|i| verts[i as usize]);
    a.cross(&b).dot(p).min(b.cross(&c).dot(p)).min(c.cross(&a).dot(p))
}

#[inline]
fn contains(verts: &[Vec3], f: &[u32; 3], p: &Vec3) -> bool {
    margin(verts, f, p) >= -EDGE_TOL
}

/// Area of the spherical triangle with unit vertices a, b, c.
pub fn spherical_triangle_area(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    let num = a.dot(&b.cross(c)).abs();
    let den = 1.0 + a.dot(b) + b.dot(c) + c.dot(a);
    2.0 * num.atan2(den)
}

/// One third of the incident spherical face areas per vertex.
pub fn vertex_weights(mesh: &IcosphereMesh) -> QuadratureWeights {
    let mut weights = vec![0.0; mesh.num_vertices()];
    for (f, face) in mesh.faces.iter().enumerate() {
        let a = mesh.face_area(f) / 3.0;
        for &v in face {
            weights[v as usize] += a;
        }
    }
    QuadratureWeights { weights }
}

/// Signed orientation of a triangle with respect to the outward normal.
#[inline]
pub fn orientation(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    (b - a).cross(&(c - a)).dot(&(a + b + c))
}
