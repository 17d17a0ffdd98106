//! Mesh-versus-reference scoring: area-weighted sampling, point-to-point ICP,
//! precision/recall/F1 at a distance threshold and the symmetric Chamfer
//! distance.

use std::collections::HashSet;
use std::path::Path;

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use nalgebra::{Isometry3, Matrix3, Rotation3, Translation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{read_mesh_ply, TriangleMesh};
use crate::stereo::DepthFrame;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self> {
        if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid("point cloud contains non-finite coordinates"));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, t: &Isometry3<f64>) -> Self {
        Self { points: self.points.iter().map(|p| t.transform_point(&(*p).into()).coords).collect() }
    }

    pub fn centroid(&self) -> Vector3<f64> {
        self.points.iter().sum::<Vector3<f64>>() / self.points.len().max(1) as f64
    }
}

/// Exact nearest-neighbor index over a fixed cloud.
pub struct NearestIndex<'a> {
    tree: ImmutableKdTree<f64, 3>,
    points: &'a [Vector3<f64>],
}

impl<'a> NearestIndex<'a> {
    pub fn new(cloud: &'a PointCloud) -> Result<Self> {
        if cloud.is_empty() {
            return Err(Error::Empty("point cloud"));
        }
        let coords: Vec<[f64; 3]> = cloud.points.iter().map(|p| [p.x, p.y, p.z]).collect();
        let tree = ImmutableKdTree::new_from_slice(&coords)
            .map_err(|e| Error::invalid(format!("cannot index point cloud: {e:?}")))?;
        Ok(Self { tree, points: &cloud.points })
    }

    /// Index and distance of the nearest indexed point.
    pub fn nearest(&self, q: &Vector3<f64>) -> (usize, f64) {
        let hit = self.tree.query(&[q.x, q.y, q.z]).nearest_one::<SquaredEuclidean<f64>>().execute();
        (hit.item as usize, hit.distance.sqrt())
    }

    pub fn point(&self, i: usize) -> &Vector3<f64> {
        &self.points[i]
    }

    /// Nearest distances for every query point, in query order.
    pub fn distances(&self, queries: &PointCloud) -> Vec<f64> {
        queries.points.par_iter().map(|q| self.nearest(q).1).collect()
    }
}

/// Area-weighted uniform samples on the mesh surface.
pub fn sample_mesh(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::invalid("sample count must be positive"));
    }
    if mesh.is_empty() {
        return Err(Error::Empty("prediction"));
    }
    mesh.validate()?;
    let mut cumulative = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        let [a, b, c] = mesh.triangle(f);
        total += 0.5 * (b - a).cross(&(c - a)).norm();
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::invalid("mesh has zero surface area"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n)
        .map(|_| {
            let r = rng.random::<f64>() * total;
            let f = cumulative.partition_point(|&c| c <= r).min(mesh.faces.len() - 1);
            let [a, b, c] = mesh.triangle(f);
            let s = rng.random::<f64>().sqrt();
            let t = rng.random::<f64>();
            a * (1.0 - s) + b * (s * (1.0 - t)) + c * (s * t)
        })
        .collect();
    PointCloud::new(points)
}

#[derive(Clone, Debug, PartialEq)]
pub struct IcpResult {
    /// Maps source points onto the destination.
    pub transform: Isometry3<f64>,
    pub rmse: f64,
    pub iterations: usize,
}

fn check_spread(cloud: &PointCloud, which: &str) -> Result<()> {
    if cloud.len() < 3 {
        return Err(Error::RankDeficient(format!("{which} cloud has {} points, need at least 3", cloud.len())));
    }
    let c = cloud.centroid();
    let cov = cloud.points.iter().fold(Matrix3::zeros(), |acc, p| acc + (p - c) * (p - c).transpose());
    let mut ev: Vec<f64> = cov.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(ev[0] > 0.0) || ev[1] <= 1e-12 * ev[0] {
        return Err(Error::RankDeficient(format!("{which} cloud is collinear or coincident")));
    }
    Ok(())
}

/// Least-squares rigid motion taking `src[i]` to `dst[i]` (Kabsch).
pub fn fit_rigid(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Isometry3<f64> {
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector3<f64>>() / n;
    let cd = dst.iter().sum::<Vector3<f64>>() / n;
    let h = src.iter().zip(dst).fold(Matrix3::zeros(), |acc, (p, q)| acc + (p - cs) * (q - cd).transpose());
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let v = v_t.transpose();
    let mut fix = Matrix3::identity();
    fix[(2, 2)] = (v * u.transpose()).determinant().signum();
    let r = v * fix * u.transpose();
    let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    let t = cd - rot * cs;
    Isometry3::from_parts(Translation3::from(t), rot)
}

/// Point-to-point ICP from a centroid-aligned start. Stops when the RMSE
/// changes by less than `tol` or after `max_iters` iterations.
pub fn icp_align(src: &PointCloud, dst: &PointCloud, max_iters: usize, tol: f64) -> Result<IcpResult> {
    check_spread(src, "source")?;
    check_spread(dst, "destination")?;
    let index = NearestIndex::new(dst)?;
    let mut transform = Isometry3::translation(0.0, 0.0, 0.0);
    transform.translation.vector = dst.centroid() - src.centroid();
    let rmse_of = |t: &Isometry3<f64>| {
        let moved = src.transformed(t);
        let d = index.distances(&moved);
        (d.iter().map(|x| x * x).sum::<f64>() / d.len() as f64).sqrt()
    };
    let mut rmse = rmse_of(&transform);
    let mut iterations = 0;
    while iterations < max_iters {
        let moved = src.transformed(&transform);
        let matches: Vec<Vector3<f64>> = moved.points.par_iter().map(|p| *index.point(index.nearest(p).0)).collect();
        transform = fit_rigid(&moved.points, &matches) * transform;
        iterations += 1;
        let next = rmse_of(&transform);
        let done = (rmse - next).abs() < tol;
        rmse = next;
        if done {
            break;
        }
    }
    Ok(IcpResult { transform, rmse, iterations })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

fn fraction_below(d: &[f64], tau: f64) -> f64 {
    d.iter().filter(|&&x| x < tau).count() as f64 / d.len() as f64
}

/// Precision: share of `pred` points closer than `tau` to `gt`. Recall: the
/// converse.
pub fn precision_recall_f1(pred: &PointCloud, gt: &PointCloud, tau: f64) -> Result<PrecisionRecall> {
    if !(tau > 0.0) {
        return Err(Error::invalid("tau must be positive"));
    }
    if pred.is_empty() {
        return Err(Error::Empty("prediction"));
    }
    if gt.is_empty() {
        return Err(Error::Empty("ground truth"));
    }
    let (dp, dg) = cross_distances(pred, gt)?;
    let (precision, recall) = (fraction_below(&dp, tau), fraction_below(&dg, tau));
    Ok(PrecisionRecall { precision, recall, f1: f1(precision, recall) })
}

fn cross_distances(pred: &PointCloud, gt: &PointCloud) -> Result<(Vec<f64>, Vec<f64>)> {
    let to_gt = NearestIndex::new(gt)?.distances(pred);
    let to_pred = NearestIndex::new(pred)?.distances(gt);
    Ok((to_gt, to_pred))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Symmetric Chamfer distance: the average of the two mean nearest-neighbor
/// distances.
pub fn chamfer(pred: &PointCloud, gt: &PointCloud) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::Empty("prediction"));
    }
    if gt.is_empty() {
        return Err(Error::Empty("ground truth"));
    }
    let (dp, dg) = cross_distances(pred, gt)?;
    Ok(0.5 * (mean(&dp) + mean(&dg)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    /// Threshold for precision/recall/F1, in scene units.
    pub tau: f64,
    pub samples: usize,
    pub seed: u64,
    pub icp: bool,
    pub icp_max_iters: usize,
    pub icp_tol: f64,
    /// Scene units to millimetres, for the fixed-radius metrics.
    pub mm_per_unit: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { tau: 0.01, samples: 100_000, seed: 0, icp: true, icp_max_iters: 50, icp_tol: 1e-9, mm_per_unit: 1000.0 }
    }
}

/// Percentages at a fixed radius.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusScores {
    pub radius_mm: f64,
    pub accuracy_pct: f64,
    pub recall_pct: f64,
    pub f1_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tau: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub radii: Vec<RadiusScores>,
    pub chamfer: f64,
    pub chamfer_mm: f64,
    pub icp_rmse: Option<f64>,
    pub icp_iterations: Option<usize>,
    pub pred_points: usize,
    pub gt_points: usize,
}

pub const RADII_MM: [f64; 2] = [2.5, 5.0];

/// Scores `pred` against `gt`, optionally after aligning `pred` to `gt`.
pub fn score_clouds(pred: &PointCloud, gt: &PointCloud, settings: &EvalSettings) -> Result<MetricsReport> {
    if pred.is_empty() {
        return Err(Error::Empty("prediction"));
    }
    if gt.is_empty() {
        return Err(Error::Empty("ground truth"));
    }
    if !(settings.mm_per_unit > 0.0) {
        return Err(Error::invalid("mm_per_unit must be positive"));
    }
    let (aligned, icp) = if settings.icp {
        let r = icp_align(pred, gt, settings.icp_max_iters, settings.icp_tol)?;
        (pred.transformed(&r.transform), Some(r))
    } else {
        (pred.clone(), None)
    };
    let (dp, dg) = cross_distances(&aligned, gt)?;
    let pr = {
        let (p, r) = (fraction_below(&dp, settings.tau), fraction_below(&dg, settings.tau));
        PrecisionRecall { precision: p, recall: r, f1: f1(p, r) }
    };
    let radii = RADII_MM
        .iter()
        .map(|&mm| {
            let tau = mm / settings.mm_per_unit;
            let (a, r) = (fraction_below(&dp, tau), fraction_below(&dg, tau));
            RadiusScores { radius_mm: mm, accuracy_pct: 100.0 * a, recall_pct: 100.0 * r, f1_pct: 100.0 * f1(a, r) }
        })
        .collect();
    let chamfer = 0.5 * (mean(&dp) + mean(&dg));
    Ok(MetricsReport {
        tau: settings.tau,
        precision: pr.precision,
        recall: pr.recall,
        f1: pr.f1,
        radii,
        chamfer,
        chamfer_mm: chamfer * settings.mm_per_unit,
        icp_rmse: icp.as_ref().map(|r| r.rmse),
        icp_iterations: icp.as_ref().map(|r| r.iterations),
        pred_points: aligned.len(),
        gt_points: gt.len(),
    })
}

pub fn evaluate_mesh(mesh: &TriangleMesh, gt: &PointCloud, settings: &EvalSettings) -> Result<MetricsReport> {
    let pred = sample_mesh(mesh, settings.samples, settings.seed)?;
    score_clouds(&pred, gt, settings)
}

/// Loads a reference cloud from PLY: meshes are sampled, point clouds are
/// taken as is.
pub fn read_ground_truth(path: &Path, samples: usize, seed: u64) -> Result<PointCloud> {
    let mesh = read_mesh_ply(path)?;
    if mesh.faces.is_empty() {
        if mesh.vertices.is_empty() {
            return Err(Error::Empty("ground truth"));
        }
        return PointCloud::new(mesh.vertices);
    }
    sample_mesh(&mesh, samples, seed)
}

/// Back-projects the final-valid pixels of every frame and keeps the first
/// point that lands in each `cell`-sized grid cell, visiting frames in order
/// and pixels row-major. With oracle depth this is the part of the surface
/// the rig can observe.
pub fn observable_surface(frames: &[DepthFrame], cell: f64) -> Result<PointCloud> {
    if !(cell > 0.0) {
        return Err(Error::invalid("cell size must be positive"));
    }
    let mut seen = HashSet::new();
    let mut points = Vec::new();
    for f in frames {
        let intr = f.camera.intrinsics;
        for (u, v) in f.final_valid().pixels() {
            let z = f.depth.data[f.depth.index(u, v)];
            let local = Vector3::new((u as f64 - intr.cx) * z / intr.fx, (v as f64 - intr.cy) * z / intr.fy, z);
            let p = f.camera.pose.camera_to_world(&local);
            let key = (p / cell).map(|c| c.floor() as i64);
            if seen.insert((key.x, key.y, key.z)) {
                points.push(p);
            }
        }
    }
    if points.is_empty() {
        return Err(Error::Empty("ground truth"));
    }
    PointCloud::new(points)
}

/// Binary little-endian PLY with float x/y/z.
pub fn write_point_cloud_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut buf = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        cloud.len()
    )
    .into_bytes();
    for p in &cloud.points {
        for c in p.iter() {
            buf.extend_from_slice(&(*c as f32).to_le_bytes());
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn write_report(path: &Path, report: &MetricsReport) -> Result<()> {
    let text = serde_json::to_string_pretty(report).map_err(|e| Error::invalid(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path) -> Result<MetricsReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format("metrics report", e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_cloud(n: usize, seed: u64, extent: Vector3<f64>) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| Vector3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()).component_mul(&extent))
                .collect(),
        )
        .unwrap()
    }

    fn unit_square() -> TriangleMesh {
        TriangleMesh {
            vertices: vec![Vector3::zeros(), Vector3::x(), Vector3::new(1.0, 1.0, 0.0), Vector3::y()],
            colors: vec![[0; 3]; 4],
            faces: vec![[0, 1, 2], [0, 2, 3]],
        }
    }

    #[test]
    fn square_samples_center_on_square() {
        let c = sample_mesh(&unit_square(), 10_000, 7).unwrap().centroid();
        assert!((c - Vector3::new(0.5, 0.5, 0.0)).norm() < 0.02, "{c}");
    }

    #[test]
    fn single_sample_lies_in_triangle() {
        let mut m = unit_square();
        m.faces.truncate(1);
        let p = sample_mesh(&m, 1, 3).unwrap().points[0];
        // Triangle (0,0)-(1,0)-(1,1): 0 <= y <= x <= 1.
        assert!(p.y >= 0.0 && p.y <= p.x && p.x <= 1.0 && p.z == 0.0);
    }

    #[test]
    fn sampling_errors() {
        assert!(sample_mesh(&unit_square(), 0, 1).is_err());
        let err = sample_mesh(&TriangleMesh::default(), 10, 1).unwrap_err();
        assert_eq!(err.to_string(), "empty prediction");
    }

    #[test]
    fn icp_recovers_small_motion() {
        let src = random_cloud(500, 1, Vector3::new(1.0, 2.0, 3.0));
        let truth = Isometry3::new(Vector3::new(0.3, -0.2, 0.5), Vector3::new(0.0, 0.0, 10f64.to_radians()));
        let dst = src.transformed(&truth);
        let r = icp_align(&src, &dst, 100, 1e-12).unwrap();
        assert!(r.transform.rotation.angle_to(&truth.rotation) < 1e-6);
        assert!((r.transform.translation.vector - truth.translation.vector).norm() < 1e-6);
        assert!(r.rmse < 1e-9);
    }

    #[test]
    fn icp_identity_and_degenerate_inputs() {
        let src = random_cloud(100, 2, Vector3::repeat(1.0));
        let r = icp_align(&src, &src, 10, 1e-12).unwrap();
        assert!(r.rmse < 1e-12);
        assert!(r.transform.rotation.angle() < 1e-9);
        let two = PointCloud::new(vec![Vector3::zeros(), Vector3::x()]).unwrap();
        assert!(matches!(icp_align(&two, &src, 10, 1e-9), Err(Error::RankDeficient(_))));
        let line = PointCloud::new((0..10).map(|i| Vector3::new(i as f64, 2.0 * i as f64, 0.0)).collect()).unwrap();
        assert!(matches!(icp_align(&line, &src, 10, 1e-9), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn fit_rigid_handles_reflection_case() {
        let src = random_cloud(20, 4, Vector3::repeat(1.0));
        let t = Isometry3::new(Vector3::new(1.0, 2.0, 3.0), Vector3::new(2.5, 0.3, -1.0));
        let fit = fit_rigid(&src.points, &src.transformed(&t).points);
        assert!(fit.rotation.angle_to(&t.rotation) < 1e-9);
        assert!(fit.rotation.to_rotation_matrix().matrix().determinant() > 0.0);
    }

    #[test]
    fn prf_examples() {
        let gt = random_cloud(400, 5, Vector3::repeat(1.0));
        let tau = 0.05;
        let r = precision_recall_f1(&gt, &gt, tau).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
        let shifted = gt.transformed(&Isometry3::translation(0.5 * tau, 0.0, 0.0));
        let r = precision_recall_f1(&shifted, &gt, tau).unwrap();
        assert_eq!((r.precision, r.recall), (1.0, 1.0));

        // Prediction covers the left half of a two-cluster reference exactly.
        let left: Vec<_> = (0..50).map(|i| Vector3::new(0.0, i as f64 * 0.01, 0.0)).collect();
        let right: Vec<_> = left.iter().map(|p| p + Vector3::new(10.0, 0.0, 0.0)).collect();
        let gt = PointCloud::new([left.clone(), right].concat()).unwrap();
        let pred = PointCloud::new(left).unwrap();
        let r = precision_recall_f1(&pred, &gt, tau).unwrap();
        assert_eq!((r.precision, r.recall), (1.0, 0.5));
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!(precision_recall_f1(&PointCloud::default(), &gt, tau).is_err());
        assert!(precision_recall_f1(&pred, &gt, 0.0).is_err());
    }

    #[test]
    fn chamfer_examples() {
        let gt = random_cloud(100, 6, Vector3::repeat(1.0));
        assert_eq!(chamfer(&gt, &gt).unwrap(), 0.0);
        let a = PointCloud::new(vec![Vector3::zeros()]).unwrap();
        let b = PointCloud::new(vec![Vector3::new(0.0, 3.0, 4.0)]).unwrap();
        assert_eq!(chamfer(&a, &b).unwrap(), 5.0);
        // Dense plane sample and a copy lifted off the plane.
        let plane = PointCloud::new(
            (0..200).flat_map(|i| (0..200).map(move |j| Vector3::new(i as f64 * 0.005, j as f64 * 0.005, 0.0))).collect(),
        )
        .unwrap();
        let lifted = plane.transformed(&Isometry3::translation(0.0, 0.0, 0.02));
        assert!((chamfer(&lifted, &plane).unwrap() - 0.02).abs() < 1e-9);
        assert!(chamfer(&PointCloud::default(), &plane).is_err());
    }

    #[test]
    fn report_round_trip_and_ranges() {
        // 2 cm lattice, so the 3 mm shift is the nearest-neighbor distance.
        let gt = PointCloud::new((0..64).map(|i| Vector3::new((i % 4) as f64, (i / 4 % 4) as f64, (i / 16) as f64) * 0.02).collect())
            .unwrap();
        let pred = gt.transformed(&Isometry3::translation(0.003, 0.0, 0.0));
        let settings = EvalSettings { tau: 0.004, icp: false, ..Default::default() };
        let report = score_clouds(&pred, &gt, &settings).unwrap();
        for r in &report.radii {
            assert!((0.0..=100.0).contains(&r.accuracy_pct));
            assert!((0.0..=100.0).contains(&r.f1_pct));
        }
        assert_eq!(report.radii[0].accuracy_pct, 0.0);
        assert_eq!(report.radii[1].accuracy_pct, 100.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        write_report(&path, &report).unwrap();
        assert_eq!(read_report(&path).unwrap(), report);
    }

    #[test]
    fn dropping_predictions_never_lowers_precision() {
        let gt = random_cloud(300, 9, Vector3::repeat(1.0));
        let mut pts = gt.transformed(&Isometry3::translation(0.02, 0.0, 0.0)).points;
        pts.extend(random_cloud(100, 10, Vector3::repeat(3.0)).points);
        let pred = PointCloud::new(pts).unwrap();
        let full = precision_recall_f1(&pred, &gt, 0.05).unwrap();
        // Drop the worst predictions.
        let index = NearestIndex::new(&gt).unwrap();
        let kept: Vec<_> = pred.points.iter().copied().filter(|p| index.nearest(p).1 < 0.05).collect();
        let part = precision_recall_f1(&PointCloud::new(kept).unwrap(), &gt, 0.05).unwrap();
        assert!(part.precision >= full.precision);
    }

    fn arb_isometry() -> impl Strategy<Value = Isometry3<f64>> {
        (prop::array::uniform3(-5.0..5.0f64), prop::array::uniform3(-3.0..3.0f64))
            .prop_map(|(t, r)| Isometry3::new(Vector3::from(t), Vector3::from(r)))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn metrics_are_rigid_invariant_and_symmetric(seed in 0u64..1000, iso in arb_isometry(), tau in 0.02..0.3f64) {
            let a = random_cloud(80, seed, Vector3::repeat(1.0));
            let b = random_cloud(60, seed + 1, Vector3::repeat(1.0));
            let r1 = precision_recall_f1(&a, &b, tau).unwrap();
            let r2 = precision_recall_f1(&b, &a, tau).unwrap();
            prop_assert_eq!(r1.precision, r2.recall);
            prop_assert_eq!(r1.recall, r2.precision);
            let c1 = chamfer(&a, &b).unwrap();
            let c2 = chamfer(&a.transformed(&iso), &b.transformed(&iso)).unwrap();
            prop_assert!((c1 - c2).abs() < 1e-9);
        }

        #[test]
        fn icp_recovers_exact_rigid_motion(seed in 0u64..1000, axis in prop::array::uniform3(-1.0..1.0f64), angle in 0.0..0.3f64) {
            let axis = Vector3::from(axis);
            prop_assume!(axis.norm() > 0.1);
            let src = random_cloud(300, seed, Vector3::new(1.0, 2.0, 3.0));
            let truth = Isometry3::new(Vector3::new(0.1, 0.2, -0.3), axis.normalize() * angle);
            let r = icp_align(&src, &src.transformed(&truth), 100, 1e-14).unwrap();
            prop_assert!(r.transform.rotation.angle_to(&truth.rotation) < 1e-6);
        }
    }
}
