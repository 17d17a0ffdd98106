//! Triangle meshes: marching-cubes extraction, small-cluster removal and PLY
//! I/O.

use std::collections::HashMap;
use std::io::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;

use super::mc_tables::{EDGE_TABLE, TRIANGLE_TABLE};
use super::tsdf::TsdfVolume;
use crate::error::{Error, Result};
use crate::ply;

/// Minimum fusion weight a lattice point needs to take part in extraction.
pub const DEFAULT_MIN_WEIGHT: f32 = 1.0;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub colors: Vec<[u8; 3]>,
    pub faces: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.colors.len() != self.vertices.len() {
            return Err(Error::invalid("mesh color count differs from vertex count"));
        }
        if self.vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid("mesh has non-finite vertices"));
        }
        let n = self.vertices.len() as u32;
        if self.faces.iter().flatten().any(|&i| i >= n) {
            return Err(Error::invalid("mesh face index out of range"));
        }
        Ok(())
    }

    pub fn triangle(&self, f: usize) -> [Vector3<f64>; 3] {
        self.faces[f].map(|i| self.vertices[i as usize])
    }

    pub fn area(&self) -> f64 {
        (0..self.faces.len())
            .map(|f| {
                let [a, b, c] = self.triangle(f);
                0.5 * (b - a).cross(&(c - a)).norm()
            })
            .sum()
    }
}

// Cell corner offsets and edge endpoints in the table's corner numbering.
const CORNERS: [[usize; 3]; 8] =
    [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]];
const EDGES: [[usize; 2]; 12] =
    [[0, 1], [1, 2], [2, 3], [3, 0], [4, 5], [5, 6], [6, 7], [7, 4], [0, 4], [1, 5], [2, 6], [3, 7]];

/// Global id of a lattice edge: the lower endpoint's index and the axis.
#[inline]
fn edge_key(vol: &TsdfVolume, a: [usize; 3], b: [usize; 3]) -> u64 {
    let lo = [a[0].min(b[0]), a[1].min(b[1]), a[2].min(b[2])];
    let axis = (0..3).find(|&i| a[i] != b[i]).expect("edge endpoints differ");
    vol.index(lo[0], lo[1], lo[2]) as u64 * 3 + axis as u64
}

fn edge_vertex(vol: &TsdfVolume, key: u64) -> (Vector3<f64>, [u8; 3]) {
    let axis = (key % 3) as usize;
    let ia = (key / 3) as usize;
    let [nx, ny, _] = vol.dims;
    let a = [ia % nx, (ia / nx) % ny, ia / (nx * ny)];
    let mut b = a;
    b[axis] += 1;
    let ib = vol.index(b[0], b[1], b[2]);
    let (va, vb) = (vol.tsdf[ia], vol.tsdf[ib]);
    let t = if va == vb { 0.5 } else { (va / (va - vb)).clamp(0.0, 1.0) };
    let pa = vol.point(a[0], a[1], a[2]);
    let pb = vol.point(b[0], b[1], b[2]);
    // On a lattice edge trilinear interpolation reduces to this lerp.
    let (ca, cb) = (vol.color[ia], vol.color[ib]);
    let color = [0, 1, 2].map(|c| (ca[c] + t * (cb[c] - ca[c])).round().clamp(0.0, 255.0) as u8);
    (pa + (pb - pa) * t, color)
}

/// Marching cubes on the zero level set, restricted to cells whose eight
/// corners all carry weight >= `min_weight`. Triangles are wound so their
/// normals point toward positive tsdf (free space). Vertex order is
/// independent of thread count.
pub fn extract_mesh(vol: &TsdfVolume, min_weight: f32) -> TriangleMesh {
    let [nx, ny, nz] = vol.dims;
    let slabs: Vec<Vec<[u64; 3]>> = (0..nz - 1)
        .into_par_iter()
        .map(|k| {
            let mut tris = Vec::new();
            for j in 0..ny - 1 {
                for i in 0..nx - 1 {
                    let corner = |c: usize| [i + CORNERS[c][0], j + CORNERS[c][1], k + CORNERS[c][2]];
                    let mut case = 0usize;
                    let mut weighted = true;
                    for c in 0..8 {
                        let [x, y, z] = corner(c);
                        let idx = vol.index(x, y, z);
                        weighted &= vol.weight[idx] >= min_weight;
                        if vol.tsdf[idx] < 0.0 {
                            case |= 1 << c;
                        }
                    }
                    if !weighted || EDGE_TABLE[case] == 0 {
                        continue;
                    }
                    let row = &TRIANGLE_TABLE[case];
                    for t in row.chunks_exact(3).take_while(|t| t[0] >= 0) {
                        let key = |e: i8| {
                            let [a, b] = EDGES[e as usize];
                            edge_key(vol, corner(a), corner(b))
                        };
                        // Table winding faces negative values; flip it.
                        tris.push([key(t[0]), key(t[2]), key(t[1])]);
                    }
                }
            }
            tris
        })
        .collect();

    let mut mesh = TriangleMesh::default();
    let mut ids: HashMap<u64, u32> = HashMap::new();
    for tri in slabs.iter().flatten() {
        let face = tri.map(|key| {
            *ids.entry(key).or_insert_with(|| {
                let (p, c) = edge_vertex(vol, key);
                mesh.vertices.push(p);
                mesh.colors.push(c);
                (mesh.vertices.len() - 1) as u32
            })
        });
        // Collapsed edges (a corner exactly at zero) yield degenerate faces.
        if face[0] != face[1] && face[1] != face[2] && face[0] != face[2] {
            mesh.faces.push(face);
        }
    }
    mesh
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        parent[x as usize] = parent[parent[x as usize] as usize];
        x = parent[x as usize];
    }
    x
}

/// Drops connected components (faces joined through shared vertices) with
/// fewer than `min_triangles` faces, then drops unreferenced vertices.
pub fn clean_mesh(mesh: &TriangleMesh, min_triangles: usize) -> TriangleMesh {
    if min_triangles == 0 {
        return mesh.clone();
    }
    let mut parent: Vec<u32> = (0..mesh.vertices.len() as u32).collect();
    for f in &mesh.faces {
        for e in 1..3 {
            let (a, b) = (find(&mut parent, f[0]), find(&mut parent, f[e]));
            if a != b {
                parent[a.max(b) as usize] = a.min(b);
            }
        }
    }
    let mut sizes: HashMap<u32, usize> = HashMap::new();
    let roots: Vec<u32> = mesh.faces.iter().map(|f| find(&mut parent, f[0])).collect();
    for r in &roots {
        *sizes.entry(*r).or_default() += 1;
    }
    let kept: Vec<&[u32; 3]> =
        mesh.faces.iter().zip(&roots).filter(|(_, r)| sizes[r] >= min_triangles).map(|(f, _)| f).collect();
    let mut used = vec![false; mesh.vertices.len()];
    kept.iter().for_each(|f| f.iter().for_each(|&v| used[v as usize] = true));
    let mut remap = vec![u32::MAX; mesh.vertices.len()];
    let mut out = TriangleMesh::default();
    for (v, _) in used.iter().enumerate().filter(|(_, &u)| u) {
        remap[v] = out.vertices.len() as u32;
        out.vertices.push(mesh.vertices[v]);
        out.colors.push(mesh.colors[v]);
    }
    out.faces = kept.iter().map(|f| f.map(|v| remap[v as usize])).collect();
    out
}

/// Binary little-endian PLY with float positions and uchar colors.
pub fn write_mesh_ply(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    mesh.validate()?;
    let mut buf = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.faces.len()
    )
    .into_bytes();
    for (v, c) in mesh.vertices.iter().zip(&mesh.colors) {
        for x in v.iter() {
            buf.extend_from_slice(&(*x as f32).to_le_bytes());
        }
        buf.extend_from_slice(c);
    }
    for f in &mesh.faces {
        buf.push(3);
        for i in f {
            buf.extend_from_slice(&(*i as i32).to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Reads a PLY mesh or point cloud. Missing colors default to gray; missing
/// faces give a vertex-only mesh.
pub fn read_mesh_ply(path: &Path) -> Result<TriangleMesh> {
    let file = ply::read_ply(path)?;
    let bad = |m: &str| Error::format("PLY mesh", format!("{}: {m}", path.display()));
    let v = file.element("vertex").ok_or_else(|| bad("no vertex element"))?;
    let (x, y, z) = match (v.scalar("x"), v.scalar("y"), v.scalar("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(bad("vertex element lacks x/y/z")),
    };
    let mut mesh = TriangleMesh {
        vertices: (0..v.count).map(|i| Vector3::new(x[i], y[i], z[i])).collect(),
        ..Default::default()
    };
    mesh.colors = match (v.scalar("red"), v.scalar("green"), v.scalar("blue")) {
        (Some(r), Some(g), Some(b)) => (0..v.count).map(|i| [r[i] as u8, g[i] as u8, b[i] as u8]).collect(),
        _ => vec![[128; 3]; v.count],
    };
    if let Some(f) = file.element("face") {
        let lists = f
            .list("vertex_indices")
            .or_else(|| f.list("vertex_index"))
            .ok_or_else(|| bad("face element lacks vertex_indices"))?;
        for poly in lists {
            // Fan-triangulate polygons.
            for t in 1..poly.len().saturating_sub(1) {
                mesh.faces.push([poly[0] as u32, poly[t] as u32, poly[t + 1] as u32]);
            }
        }
    }
    mesh.validate().map_err(|e| bad(&e.to_string()))?;
    Ok(mesh)
}
