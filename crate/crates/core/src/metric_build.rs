//! Ground metrics from voxel grids (Euclidean) and triangulated surfaces
//! (shortest paths along mesh edges).

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{GroundMetric, SquareMatrix};
use crate::error::{Error, Result};

/// Largest number of locations for which a dense metric is built.
pub const DEFAULT_METRIC_CAP: usize = 20_000;

/// Size of triples scanned by the triangle-inequality check.
pub const TRIANGLE_CHECK_LIMIT: usize = 512;

/// A regular voxel grid, optionally restricted to a mask.
///
/// Linear voxel indices are x-fastest: `x + nx * (y + ny * z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub shape: [usize; 3],
    pub voxel_size_mm: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Vec<usize>>,
}

impl GridSpec {
    pub fn voxel_count(&self) -> usize {
        self.shape.iter().product()
    }

    /// Number of retained voxels.
    pub fn d(&self) -> usize {
        self.mask.as_ref().map_or(self.voxel_count(), Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.shape.contains(&0) {
            return Err(Error::InvalidMask(format!("grid shape {:?} has a zero extent", self.shape)));
        }
        if self.voxel_size_mm.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidMask(format!(
                "voxel sizes {:?} must be positive",
                self.voxel_size_mm
            )));
        }
        if let Some(mask) = &self.mask {
            let total = self.voxel_count();
            for (k, &idx) in mask.iter().enumerate() {
                if idx >= total {
                    return Err(Error::InvalidMask(format!(
                        "mask entry {k} = {idx} outside grid of {total} voxels"
                    )));
                }
                if k > 0 && mask[k - 1] >= idx {
                    return Err(Error::InvalidMask(format!(
                        "mask indices must be strictly increasing (position {k})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Center of the voxel with linear index `idx`, in millimetres.
    pub fn voxel_center(&self, idx: usize) -> [f64; 3] {
        let [nx, ny, _] = self.shape;
        let x = idx % nx;
        let y = (idx / nx) % ny;
        let z = idx / (nx * ny);
        let [dx, dy, dz] = self.voxel_size_mm;
        [(x as f64 + 0.5) * dx, (y as f64 + 0.5) * dy, (z as f64 + 0.5) * dz]
    }

    fn retained(&self) -> Vec<usize> {
        match &self.mask {
            Some(m) => m.clone(),
            None => (0..self.voxel_count()).collect(),
        }
    }
}

/// Triangulated surface with vertex coordinates in millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<[f64; 3]>,
    faces: Vec<[usize; 3]>,
}

impl TriMesh {
    /// Checks face indices and rejects faces with a repeated vertex.
    /// Connectivity is checked when a metric is built.
    pub fn new(vertices: Vec<[f64; 3]>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let nv = vertices.len();
        if let Some(k) = vertices.iter().position(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(Error::InvalidMesh(format!("vertex {k} has non-finite coordinates")));
        }
        for (f, face) in faces.iter().enumerate() {
            if let Some(&bad) = face.iter().find(|&&i| i >= nv) {
                return Err(Error::InvalidMesh(format!(
                    "face {f} references vertex {bad} but the mesh has {nv} vertices"
                )));
            }
            if face[0] == face[1] || face[1] == face[2] || face[0] == face[2] {
                return Err(Error::InvalidMesh(format!("face {f} is degenerate: {face:?}")));
            }
        }
        Ok(Self { vertices, faces })
    }

    pub fn vertices(&self) -> &[[f64; 3]] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    /// Unique undirected edges `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut set = BTreeSet::new();
        for f in &self.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                set.insert((a.min(b), a.max(b)));
            }
        }
        set.into_iter().collect()
    }

    /// Adjacency lists weighted by Euclidean edge length; neighbours sorted by index.
    pub fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for (i, j) in self.edges() {
            let w = euclidean(&self.vertices[i], &self.vertices[j]);
            adj[i].push((j, w));
            adj[j].push((i, w));
        }
        for list in &mut adj {
            list.sort_by_key(|&(j, _)| j);
        }
        adj
    }

    /// Sizes of the connected components of the edge graph, largest first.
    pub fn component_sizes(&self) -> Vec<usize> {
        let adj = self.adjacency();
        let mut seen = vec![false; adj.len()];
        let mut sizes = Vec::new();
        for start in 0..adj.len() {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut stack = vec![start];
            let mut size = 0;
            while let Some(v) = stack.pop() {
                size += 1;
                for &(w, _) in &adj[v] {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
            sizes.push(size);
        }
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        sizes
    }

    /// Vertices reachable from `set` in at most one edge.
    pub fn dilate(&self, set: &[usize]) -> Vec<usize> {
        let mut out: BTreeSet<usize> = set.iter().copied().collect();
        for (i, j) in self.edges() {
            if set.contains(&i) {
                out.insert(j);
            }
            if set.contains(&j) {
                out.insert(i);
            }
        }
        out.into_iter().collect()
    }

    /// Same surface with vertex `i` relabelled `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let mut vertices = vec![[0.0; 3]; self.vertices.len()];
        for (i, v) in self.vertices.iter().enumerate() {
            vertices[perm[i]] = *v;
        }
        let faces = self.faces.iter().map(|f| [perm[f[0]], perm[f[1]], perm[f[2]]]).collect();
        Self::new(vertices, faces)
    }
}

/// A named set of vertices (a region of interest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Label {
    pub name: String,
    pub vertex_ids: Vec<usize>,
}

impl Label {
    pub fn validate(&self, d: usize) -> Result<()> {
        if self.vertex_ids.is_empty() {
            return Err(Error::InvalidConfig(format!("label '{}' is empty", self.name)));
        }
        let unique: BTreeSet<_> = self.vertex_ids.iter().collect();
        if unique.len() != self.vertex_ids.len() {
            return Err(Error::InvalidConfig(format!("label '{}' has duplicate ids", self.name)));
        }
        if let Some(bad) = self.vertex_ids.iter().find(|&&v| v >= d) {
            return Err(Error::InvalidConfig(format!(
                "label '{}' references vertex {bad} >= {d}",
                self.name
            )));
        }
        Ok(())
    }
}

#[inline]
fn euclidean(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

fn check_size(d: usize, cap: usize) -> Result<()> {
    if d > cap {
        return Err(Error::MetricTooLarge { d, cap });
    }
    if d < 2 {
        return Err(Error::DegenerateMetric { d });
    }
    Ok(())
}

/// Euclidean distances between the centers of the retained voxels.
pub fn grid_metric(grid: &GridSpec, cap: usize) -> Result<GroundMetric> {
    grid.validate()?;
    check_size(grid.d(), cap)?;
    let centers: Vec<[f64; 3]> = grid.retained().into_iter().map(|i| grid.voxel_center(i)).collect();
    let d = centers.len();
    // computing each unordered pair once keeps the matrix exactly symmetric
    let mut m = SquareMatrix::zeros(d);
    for i in 0..d {
        for j in (i + 1)..d {
            let v = euclidean(&centers[i], &centers[j]);
            m.set(i, j, v);
            m.set(j, i, v);
        }
    }
    GroundMetric::new(m)
}

#[derive(Clone, Copy, PartialEq)]
struct Frontier {
    dist: f64,
    vertex: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        other.dist.total_cmp(&self.dist).then_with(|| other.vertex.cmp(&self.vertex))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source shortest path lengths over a weighted adjacency list.
pub fn dijkstra(adj: &[Vec<(usize, f64)>], source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; adj.len()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Frontier { dist: 0.0, vertex: source });
    while let Some(Frontier { dist: du, vertex: u }) = heap.pop() {
        if du > dist[u] {
            continue;
        }
        for &(v, w) in &adj[u] {
            let cand = du + w;
            if cand < dist[v] {
                dist[v] = cand;
                heap.push(Frontier { dist: cand, vertex: v });
            }
        }
    }
    dist
}

/// All-pairs edge-graph geodesic distances, one Dijkstra run per vertex.
///
/// Rows are computed in parallel; each row only depends on its source, so the
/// result does not depend on the thread count. The upper triangle is mirrored
/// into the lower one so the matrix is exactly symmetric.
pub fn mesh_geodesic_metric(mesh: &TriMesh, cap: usize) -> Result<GroundMetric> {
    let d = mesh.vertex_count();
    check_size(d, cap)?;
    let sizes = mesh.component_sizes();
    if sizes.len() > 1 {
        return Err(Error::DisconnectedMesh { component_sizes: sizes });
    }
    let adj = mesh.adjacency();
    let rows: Vec<Vec<f64>> = (0..d).into_par_iter().map(|s| dijkstra(&adj, s)).collect();
    let m = SquareMatrix::from_fn(d, |i, j| if i <= j { rows[i][j] } else { rows[j][i] });
    GroundMetric::new(m)
}

/// Diagnostics of how far a matrix is from being a metric.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub d: usize,
    pub max_symmetry_violation: f64,
    /// Magnitude of the most negative entry, 0 if there is none.
    pub max_negative_entry: f64,
    pub max_diagonal_magnitude: f64,
    pub non_finite_entries: usize,
    /// `max_{i,j,k} D[i][j] - D[i][k] - D[k][j]`, when checked.
    pub max_triangle_violation: Option<f64>,
}

impl ValidationReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.non_finite_entries == 0
            && self.max_symmetry_violation <= tol
            && self.max_negative_entry <= tol
            && self.max_diagonal_magnitude <= tol
            && self.max_triangle_violation.is_none_or(|t| t <= tol)
    }
}

/// Reports symmetry, sign, diagonal and (for `d <= 512`) triangle-inequality
/// violations. Never fails.
pub fn validate_metric(m: &SquareMatrix, check_triangle: bool) -> ValidationReport {
    let d = m.n();
    let mut non_finite = 0;
    let mut neg = 0.0f64;
    for &x in m.as_slice() {
        if !x.is_finite() {
            non_finite += 1;
        } else if x < 0.0 {
            neg = neg.max(-x);
        }
    }
    let diag = (0..d).map(|i| m.get(i, i).abs()).fold(0.0, f64::max);
    let triangle = (check_triangle && d <= TRIANGLE_CHECK_LIMIT).then(|| {
        (0..d)
            .into_par_iter()
            .map(|i| {
                let mut worst = f64::NEG_INFINITY;
                let ri = m.row(i);
                for k in 0..d {
                    let rk = m.row(k);
                    let dik = ri[k];
                    for j in 0..d {
                        worst = worst.max(ri[j] - dik - rk[j]);
                    }
                }
                worst
            })
            .reduce(|| f64::NEG_INFINITY, f64::max)
    });
    ValidationReport {
        d,
        max_symmetry_violation: m.max_asymmetry(),
        max_negative_entry: neg,
        max_diagonal_magnitude: diag,
        non_finite_entries: non_finite,
        max_triangle_violation: triangle,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(shape: [usize; 3], size: [f64; 3], mask: Option<Vec<usize>>) -> GridSpec {
        GridSpec { shape, voxel_size_mm: size, mask }
    }

    #[test]
    fn two_adjacent_voxels() {
        let m = grid_metric(&grid([2, 1, 1], [3.0; 3], None), DEFAULT_METRIC_CAP).unwrap();
        assert_eq!(m.matrix().as_slice(), &[0.0, 3.0, 3.0, 0.0]);
    }

    #[test]
    fn diagonal_neighbours() {
        let m = grid_metric(&grid([2, 2, 1], [1.0; 3], None), DEFAULT_METRIC_CAP).unwrap();
        // voxel (1,1,0) has linear index 3
        assert!((m.get(0, 3) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn masked_grid_uses_retained_voxels() {
        let m = grid_metric(&grid([3, 1, 1], [2.0; 3], Some(vec![0, 2])), DEFAULT_METRIC_CAP).unwrap();
        assert_eq!(m.matrix().as_slice(), &[0.0, 4.0, 4.0, 0.0]);
    }

    #[test]
    fn anisotropic_voxels() {
        let m = grid_metric(&grid([1, 2, 2], [1.0, 2.0, 3.0], None), DEFAULT_METRIC_CAP).unwrap();
        // (0,0,0) -> (0,1,1): dy = 2, dz = 3
        assert!((m.get(0, 3) - 13f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn grid_errors() {
        let err = grid_metric(&grid([3, 1, 1], [1.0; 3], Some(vec![2, 1])), DEFAULT_METRIC_CAP);
        assert!(matches!(err, Err(Error::InvalidMask(_))));
        let err = grid_metric(&grid([2, 2, 2], [1.0; 3], Some(vec![9])), DEFAULT_METRIC_CAP);
        assert!(matches!(err, Err(Error::InvalidMask(_))));
        let err = grid_metric(&grid([10, 10, 1], [1.0; 3], None), 50);
        assert!(matches!(err, Err(Error::MetricTooLarge { d: 100, cap: 50 })));
    }

    #[test]
    fn grid_metric_is_a_metric() {
        let m = grid_metric(&grid([3, 3, 2], [1.5, 2.0, 2.5], None), DEFAULT_METRIC_CAP).unwrap();
        let r = validate_metric(m.matrix(), true);
        assert!(r.max_triangle_violation.unwrap() <= 1e-12 * m.matrix().max());
        assert!(r.passes(1e-12));
    }

    #[test]
    fn single_triangle() {
        let h = 3f64.sqrt() / 2.0;
        let mesh = TriMesh::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, h, 0.0]], vec![[0, 1, 2]])
            .unwrap();
        let m = mesh_geodesic_metric(&mesh, DEFAULT_METRIC_CAP).unwrap();
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            assert!((m.get(i, j) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn square_with_one_diagonal() {
        let mesh = TriMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap();
        let m = mesh_geodesic_metric(&mesh, DEFAULT_METRIC_CAP).unwrap();
        assert!((m.get(0, 2) - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(m.get(1, 3), 2.0);
    }

    #[test]
    fn disconnected_mesh_reports_components() {
        let mesh = TriMesh::new(
            vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [5.0, 5.0, 5.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        match mesh_geodesic_metric(&mesh, DEFAULT_METRIC_CAP) {
            Err(Error::DisconnectedMesh { component_sizes }) => assert_eq!(component_sizes, vec![3, 1]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mesh_validation() {
        assert!(TriMesh::new(vec![[0.0; 3]; 3], vec![[0, 1, 3]]).is_err());
        assert!(TriMesh::new(vec![[0.0; 3]; 3], vec![[0, 1, 1]]).is_err());
    }

    #[test]
    fn validation_reports() {
        let ok = SquareMatrix::from_rows(&[vec![0.0, 5.0], vec![5.0, 0.0]]).unwrap();
        assert!(validate_metric(&ok, true).passes(1e-9));
        let asym = SquareMatrix::from_rows(&[vec![0.0, 1.0], vec![2.0, 0.0]]).unwrap();
        let r = validate_metric(&asym, false);
        assert_eq!(r.max_symmetry_violation, 1.0);
        assert!(r.max_triangle_violation.is_none());
        let bad = SquareMatrix::from_rows(&[
            vec![0.0, 1.0, 5.0],
            vec![1.0, 0.0, 1.0],
            vec![5.0, 1.0, 0.0],
        ])
        .unwrap();
        assert_eq!(validate_metric(&bad, true).max_triangle_violation, Some(3.0));
    }
}
