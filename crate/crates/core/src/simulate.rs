//! Synthetic group study on a sphere: every subject carries one focal
//! activation of random amplitude inside each of two cortical-like patches,
//! at a random position within the patch. The group is summarized by the
//! plain mean, the mean after Gaussian smoothing, and the Kantorovich mean.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barycenter::{kantorovich_mean, BarycenterReport};
use crate::baselines::{euclidean_mean, smoothed_mean};
use crate::domain::{rescale_collection, GroundMetric, SolverConfig};
use crate::error::{Error, Result};
use crate::metric_build::{mesh_geodesic_metric, Label, TriMesh, DEFAULT_METRIC_CAP};
use crate::numeric::neumaier_sum;

pub const MAX_SUBDIVISIONS: u32 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_subjects: usize,
    pub amp_mean: f64,
    pub amp_std: f64,
    pub fwhm_mm: f64,
    pub seed: u64,
    pub subdivisions: u32,
    pub radius_mm: f64,
    /// Vertices per label patch.
    pub cap_size: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_subjects: 20,
            amp_mean: 5.0,
            amp_std: 1.0,
            fwhm_mm: 8.0,
            seed: 42,
            subdivisions: 3,
            radius_mm: 50.0,
            cap_size: 25,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_subjects == 0 {
            return bad("n_subjects must be at least 1".into());
        }
        if !(self.amp_std > 0.0 && self.amp_std.is_finite()) {
            return bad(format!("amp_std must be positive, got {}", self.amp_std));
        }
        if !self.amp_mean.is_finite() {
            return bad(format!("amp_mean must be finite, got {}", self.amp_mean));
        }
        if !(self.fwhm_mm > 0.0 && self.fwhm_mm.is_finite()) {
            return bad(format!("fwhm_mm must be positive, got {}", self.fwhm_mm));
        }
        if !(self.radius_mm > 0.0 && self.radius_mm.is_finite()) {
            return bad(format!("radius_mm must be positive, got {}", self.radius_mm));
        }
        if self.cap_size == 0 {
            return bad("cap_size must be at least 1".into());
        }
        if self.subdivisions > MAX_SUBDIVISIONS {
            return Err(Error::SubdivisionOutOfRange(self.subdivisions));
        }
        Ok(())
    }
}

/// Icosahedron refined `subdivisions` times by edge midpoints, projected to
/// a sphere. Has `10 · 4^k + 2` vertices.
pub fn icosphere(subdivisions: u32, radius_mm: f64) -> Result<TriMesh> {
    if subdivisions > MAX_SUBDIVISIONS {
        return Err(Error::SubdivisionOutOfRange(subdivisions));
    }
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<[f64; 3]> = vec![
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
    ];
    let mut faces: Vec<[usize; 3]> = vec![
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
    for v in &mut vertices {
        *v = to_sphere(*v, radius_mm);
    }
    for _ in 0..subdivisions {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |i: usize, j: usize, vertices: &mut Vec<[f64; 3]>| {
            let key = (i.min(j), i.max(j));
            *midpoints.entry(key).or_insert_with(|| {
                let (a, b) = (vertices[i], vertices[j]);
                vertices.push(to_sphere([(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0, (a[2] + b[2]) / 2.0], radius_mm));
                vertices.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for &[a, b, c] in &faces {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    TriMesh::new(vertices, faces)
}

fn to_sphere(v: [f64; 3], r: f64) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] * r / n, v[1] * r / n, v[2] * r / n]
}

/// One draw from `N(mean, std²)` conditioned on being positive.
pub fn truncated_gaussian<R: Rng + ?Sized>(rng: &mut R, mean: f64, std: f64) -> f64 {
    let normal = Normal::new(mean, std).expect("std must be positive and finite");
    loop {
        let x = normal.sample(rng);
        if x > 0.0 {
            return x;
        }
    }
}

/// Generator for subject `index`: the seed picks the key and the subject
/// index picks the stream, so a subject's data does not depend on how many
/// subjects are drawn or in which order.
pub fn subject_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Zero vector with one positive spike at a uniformly chosen vertex of each label.
pub fn generate_subject<R: Rng + ?Sized>(labels: &[Label], rng: &mut R, amp_mean: f64, amp_std: f64, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for label in labels {
        let v = label.vertex_ids[rng.random_range(0..label.vertex_ids.len())];
        out[v] = truncated_gaussian(rng, amp_mean, amp_std);
    }
    out
}

/// The `size` vertices closest to `center`, ties broken by index.
pub fn geodesic_cap(metric: &GroundMetric, center: usize, size: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..metric.d()).collect();
    order.sort_by(|&i, &j| metric.get(center, i).total_cmp(&metric.get(center, j)).then(i.cmp(&j)));
    order.truncate(size);
    order.sort_unstable();
    order
}

/// Two disjoint patches: one around vertex 0 and one around the vertex
/// whose distance to vertex 0 is closest to half the largest such distance.
pub fn cap_labels(metric: &GroundMetric, size: usize) -> Result<Vec<Label>> {
    let d = metric.d();
    if size == 0 || 2 * size > d {
        return Err(Error::InvalidConfig(format!("cannot fit two patches of {size} vertices in {d}")));
    }
    let far = (0..d).map(|j| metric.get(0, j)).fold(0.0, f64::max);
    let half = far / 2.0;
    let second = (0..d)
        .min_by(|&i, &j| (metric.get(0, i) - half).abs().total_cmp(&(metric.get(0, j) - half).abs()).then(i.cmp(&j)))
        .expect("d >= 2");
    let a = geodesic_cap(metric, 0, size);
    let b = geodesic_cap(metric, second, size);
    if a.iter().any(|v| b.binary_search(v).is_ok()) {
        return Err(Error::InvalidConfig(format!("patches of {size} vertices overlap")));
    }
    Ok(vec![Label { name: "patch_a".into(), vertex_ids: a }, Label { name: "patch_b".into(), vertex_ids: b }])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub name: String,
    pub peak: f64,
    pub mass: f64,
    /// Share of the mass inside the union of the labels.
    pub label_fraction: f64,
    /// Same, with the labels grown by one edge ring.
    pub dilated_label_fraction: f64,
}

fn summarize(name: &str, v: &[f64], inside: &[bool], dilated: &[bool]) -> MethodSummary {
    let mass = neumaier_sum(v.iter().copied());
    let part = |mask: &[bool]| neumaier_sum(v.iter().zip(mask).filter(|(_, m)| **m).map(|(x, _)| *x)) / mass;
    MethodSummary {
        name: name.to_string(),
        peak: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mass,
        label_fraction: part(inside),
        dilated_label_fraction: part(dilated),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub config: SimConfig,
    pub d: usize,
    pub labels: Vec<Label>,
    pub mean_subject_mass: f64,
    pub methods: Vec<MethodSummary>,
    pub kantorovich: BarycenterReport,
    #[serde(skip)]
    pub subjects: Vec<Vec<f64>>,
    #[serde(skip)]
    pub euclidean: Vec<f64>,
    #[serde(skip)]
    pub smoothed: Vec<f64>,
}

impl SimulationReport {
    pub fn method(&self, name: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.name == name)
    }
}

/// Builds the sphere, its geodesic metric and the two patches, then runs the study.
pub fn run_simulation(cfg: &SimConfig) -> Result<SimulationReport> {
    cfg.validate()?;
    let mesh = icosphere(cfg.subdivisions, cfg.radius_mm)?;
    let metric = mesh_geodesic_metric(&mesh, DEFAULT_METRIC_CAP)?;
    let labels = cap_labels(&metric, cfg.cap_size)?;
    run_simulation_on(cfg, &mesh, &metric, &labels)
}

pub fn run_simulation_on(cfg: &SimConfig, mesh: &TriMesh, metric: &GroundMetric, labels: &[Label]) -> Result<SimulationReport> {
    cfg.validate()?;
    let d = metric.d();
    if mesh.vertex_count() != d {
        return Err(Error::DimensionMismatch { expected: d, found: mesh.vertex_count(), row: 0 });
    }
    if labels.is_empty() {
        return Err(Error::InvalidMask("at least one label is required".into()));
    }
    for l in labels {
        l.validate(d)?;
    }
    let mut inside = vec![false; d];
    for l in labels {
        for &v in &l.vertex_ids {
            if inside[v] {
                return Err(Error::InvalidMask(format!("labels overlap at vertex {v}")));
            }
            inside[v] = true;
        }
    }
    let union: Vec<usize> = (0..d).filter(|&v| inside[v]).collect();
    let mut dilated = vec![false; d];
    for v in mesh.dilate(&union) {
        dilated[v] = true;
    }

    let subjects: Vec<Vec<f64>> = (0..cfg.n_subjects)
        .into_par_iter()
        .map(|j| generate_subject(labels, &mut subject_rng(cfg.seed, j), cfg.amp_mean, cfg.amp_std, d))
        .collect();

    let euclidean = euclidean_mean(&subjects)?;
    let smoothed = smoothed_mean(&subjects, metric, cfg.fwhm_mm)?;
    let collection = rescale_collection(&subjects)?;
    let kantorovich = kantorovich_mean(&collection, metric, &SolverConfig::default())?;
    let mean_subject_mass = neumaier_sum(subjects.iter().map(|s| neumaier_sum(s.iter().copied()))) / subjects.len() as f64;

    let methods = vec![
        summarize("mean", &euclidean, &inside, &dilated),
        summarize("smoothed_mean", &smoothed, &inside, &dilated),
        summarize("kantorovich_mean", &kantorovich.barycenter, &inside, &dilated),
    ];
    Ok(SimulationReport {
        config: cfg.clone(),
        d,
        labels: labels.to_vec(),
        mean_subject_mass,
        methods,
        kantorovich,
        subjects,
        euclidean,
        smoothed,
    })
}
