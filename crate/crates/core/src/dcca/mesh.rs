//! Iso-surface at 0.5 of a binary mask by marching cubes.
//!
//! The mask is zero-padded by one voxel so the surface always closes. For
//! binary input the 0.5 crossing on every cut edge is the edge midpoint, and
//! vertices are shared between cubes through their grid edge.

use std::collections::HashMap;

use super::mc_table::TRIANGLE_TABLE;
use crate::error::{Error, Result};
use crate::volume::{linear_index, LabelVolume};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriMesh {
    /// Vertex positions in μm.
    pub vertices_um: Vec<[f64; 3]>,
    /// Counter-clockwise seen from outside.
    pub faces: Vec<[u32; 3]>,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

impl TriMesh {
    pub fn area_um2(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let [a, b, c] = f.map(|i| self.vertices_um[i as usize]);
                let n = cross(sub(b, a), sub(c, a));
                0.5 * dot(n, n).sqrt()
            })
            .sum()
    }

    fn edge_uses(&self) -> HashMap<(u32, u32), usize> {
        let mut edges = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        edges
    }

    /// `V - E + F`.
    pub fn euler_characteristic(&self) -> i64 {
        let e = self.edge_uses().len() as i64;
        self.vertices_um.len() as i64 - e + self.faces.len() as i64
    }

    /// Every edge is shared by exactly two faces.
    pub fn is_closed(&self) -> bool {
        self.edge_uses().values().all(|&n| n == 2)
    }

    /// Every directed edge is used once, i.e. neighbouring faces agree on winding.
    pub fn is_consistently_oriented(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        self.faces
            .iter()
            .all(|f| (0..3).all(|k| seen.insert((f[k], f[(k + 1) % 3]))))
    }

    /// Signed volume by the divergence theorem; positive when normals point outwards.
    pub fn signed_volume_um3(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let [a, b, c] = f.map(|i| self.vertices_um[i as usize]);
                dot(a, cross(b, c)) / 6.0
            })
            .sum()
    }
}

/// Corner offsets in table order.
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

pub fn lumen_mesh(lumen: &LabelVolume) -> Result<TriMesh> {
    if !lumen.mask().iter().any(|&m| m) {
        return Err(Error::EmptyMask);
    }
    let dims = lumen.dims();
    let sp = lumen.spacing();
    // padded grid: point p maps to voxel p - 1
    let pd = [dims[0] + 2, dims[1] + 2, dims[2] + 2];
    let inside = |p: [usize; 3]| -> bool {
        if p.iter().zip(&dims).any(|(&c, &n)| c == 0 || c > n) {
            return false;
        }
        lumen.mask()[linear_index(dims, p[0] - 1, p[1] - 1, p[2] - 1)]
    };
    let pid = |p: [usize; 3]| linear_index(pd, p[0], p[1], p[2]);
    let mut mesh = TriMesh::default();
    let mut edge_vertex: HashMap<(usize, usize), u32> = HashMap::new();
    for z in 0..pd[2] - 1 {
        for y in 0..pd[1] - 1 {
            for x in 0..pd[0] - 1 {
                let corners = CORNERS.map(|o| [x + o[0], y + o[1], z + o[2]]);
                let mut case = 0usize;
                for (i, &c) in corners.iter().enumerate() {
                    if !inside(c) {
                        case |= 1 << i;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                let row = &TRIANGLE_TABLE[case];
                for tri in row.chunks_exact(3).take_while(|t| t[0] >= 0) {
                    let ids = [tri[0], tri[1], tri[2]].map(|e| {
                        let [ca, cb] = EDGES[e as usize];
                        let (a, b) = (corners[ca], corners[cb]);
                        let (ia, ib) = (pid(a), pid(b));
                        *edge_vertex.entry((ia.min(ib), ia.max(ib))).or_insert_with(|| {
                            let mid = |k: usize, s: f64| ((a[k] + b[k]) as f64 / 2.0 - 1.0) * s;
                            mesh.vertices_um
                                .push([mid(0, sp.dx_um), mid(1, sp.dy_um), mid(2, sp.dz_um)]);
                            (mesh.vertices_um.len() - 1) as u32
                        })
                    });
                    mesh.faces.push(ids);
                }
            }
        }
    }
    Ok(mesh)
}
