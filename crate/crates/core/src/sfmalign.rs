//! Per-sapling registration of structure-from-motion reconstructions into
//! the map frame.
//!
//! A sapling's capture window is cut from the plot trajectory, SfM camera
//! positions are paired with map-frame poses by nearest timestamp, and a
//! closed-form similarity (Umeyama) resolves the unknown SfM scale. The
//! fitted transform then carries the SfM trajectory and dense cloud into
//! the map frame.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Rotation3, UnitQuaternion};

use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::model::{check_frame, FramedTransform, PointCloud, SimilarityTransform, Trajectory, Vec3};

/// Default nearest-timestamp tolerance for SfM ↔ SLAM pairing (seconds).
pub const DEFAULT_MAX_GAP: f64 = 0.05;

/// Source geometry is flagged as coplanar below this singular-value ratio.
pub const COPLANAR_RATIO: f64 = 1e-3;

/// The part of a session trajectory recorded while capturing one sapling.
#[derive(Debug, Clone, PartialEq)]
pub struct Subtrajectory {
    pub sapling_id: String,
    pub session_id: String,
    pub poses: Trajectory,
    pub source_span: (f64, f64),
}

/// All poses with timestamps in `[t_start, t_end]`, order preserved.
pub fn extract_subtrajectory(
    traj: &Trajectory,
    t_start: f64,
    t_end: f64,
    sapling_id: &str,
    session_id: &str,
) -> Result<Subtrajectory> {
    if !(t_start < t_end) {
        return Err(Error::Invalid(format!("window start {t_start} must precede end {t_end}")));
    }
    let poses: Vec<_> = traj
        .poses()
        .iter()
        .filter(|p| p.timestamp >= t_start && p.timestamp <= t_end)
        .copied()
        .collect();
    if poses.is_empty() {
        return Err(Error::EmptyWindow { start: t_start, end: t_end });
    }
    Ok(Subtrajectory {
        sapling_id: sapling_id.to_string(),
        session_id: session_id.to_string(),
        poses: Trajectory::new(traj.frame_id(), poses)?,
        source_span: (t_start, t_end),
    })
}

fn centred(points: &[Vec3]) -> (Vec3, Vec<Vec3>) {
    let mean = points.iter().sum::<Vec3>() / points.len() as f64;
    (mean, points.iter().map(|p| p - mean).collect())
}

/// Singular values of the centred point set, descending.
fn spread_singular_values(centred: &[Vec3]) -> [f64; 3] {
    let cov: Matrix3<f64> = centred.iter().map(|p| p * p.transpose()).sum();
    let mut ev: Vec<f64> = cov.symmetric_eigenvalues().iter().map(|e| e.max(0.0).sqrt()).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    [ev[0], ev[1], ev[2]]
}

/// Ratio of the smallest to the largest singular value of the centred set;
/// 0 for coplanar (or worse) geometry.
pub fn planarity_ratio(points: &[Vec3]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let s = spread_singular_values(&centred(points).1);
    if s[0] == 0.0 {
        0.0
    } else {
        s[2] / s[0]
    }
}

/// Closed-form least-squares similarity mapping `source` onto `target`.
///
/// With `with_scale == false` the scale is pinned to 1 (rigid fit).
pub fn umeyama(source: &[Vec3], target: &[Vec3], with_scale: bool) -> Result<SimilarityTransform> {
    if source.len() != target.len() {
        return Err(Error::Invalid(format!(
            "point count mismatch: {} source vs {} target",
            source.len(),
            target.len()
        )));
    }
    if source.len() < 3 {
        return Err(Error::InsufficientPairs { found: source.len(), required: 3 });
    }
    let n = source.len() as f64;
    let (mu_x, xs) = centred(source);
    let (mu_y, ys) = centred(target);

    let s = spread_singular_values(&xs);
    if s[0] <= 1e-12 * (1.0 + mu_x.norm()) {
        return Err(Error::Degenerate("source points coincide".into()));
    }
    if s[1] <= 1e-9 * s[0] {
        return Err(Error::Degenerate("source points are collinear; rotation is not unique".into()));
    }

    let var_x = xs.iter().map(|x| x.norm_squared()).sum::<f64>() / n;
    let sigma: Matrix3<f64> = xs.iter().zip(&ys).map(|(x, y)| y * x.transpose()).sum::<Matrix3<f64>>() / n;
    let svd = sigma.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::Degenerate("SVD failed".into())),
    };
    let mut d = Matrix3::identity();
    if u.determinant() * v_t.determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * v_t;
    let scale = if with_scale {
        (Matrix3::from_diagonal(&svd.singular_values) * d).trace() / var_x
    } else {
        1.0
    };
    let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    let translation = mu_y - r * mu_x * scale;
    SimilarityTransform::new(scale, rotation, translation)
}

/// Root-mean-square distance between `t(source)` and `target`.
pub fn rms_residual(t: &SimilarityTransform, source: &[Vec3], target: &[Vec3]) -> f64 {
    if source.is_empty() {
        return 0.0;
    }
    let ss: f64 = source.iter().zip(target).map(|(s, d)| (t.apply(s) - d).norm_squared()).sum();
    (ss / source.len() as f64).sqrt()
}

/// Outcome of [`register_sfm`].
#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    /// SfM frame → map frame.
    pub transform: FramedTransform,
    pub rms_residual: f64,
    pub pair_count: usize,
    /// The SfM trajectory expressed in the map frame.
    pub aligned: Trajectory,
    /// Set when matched SfM positions are (nearly) coplanar.
    pub coplanar_warning: bool,
}

impl RegistrationResult {
    pub fn record(&self) -> TransformRecord {
        TransformRecord {
            transform: self.transform.clone(),
            rms_residual: self.rms_residual,
            pair_count: self.pair_count,
            coplanar_warning: self.coplanar_warning,
        }
    }
}

/// Pairs each SfM pose with the nearest-in-time map-frame pose and fits a
/// similarity over the matched positions.
pub fn register_sfm(sfm: &Trajectory, slam_sub: &Subtrajectory, max_gap: f64) -> Result<RegistrationResult> {
    let slam = &slam_sub.poses;
    let (mut src, mut dst) = (Vec::new(), Vec::new());
    for pose in sfm.poses() {
        let (idx, gap) = slam.nearest(pose.timestamp);
        if gap <= max_gap {
            src.push(pose.translation);
            dst.push(slam.poses()[idx].translation);
        }
    }
    if src.len() < 3 {
        return Err(Error::InsufficientPairs { found: src.len(), required: 3 });
    }
    let t = umeyama(&src, &dst, true)?;
    let transform = FramedTransform::new(t, sfm.frame_id(), slam.frame_id());
    Ok(RegistrationResult {
        rms_residual: rms_residual(&t, &src, &dst),
        pair_count: src.len(),
        aligned: transform.apply_trajectory(sfm)?,
        coplanar_warning: planarity_ratio(&src) < COPLANAR_RATIO,
        transform,
    })
}

/// Maps every point of `cloud` through `t`; colours are kept.
pub fn transform_cloud(cloud: &PointCloud, t: &FramedTransform) -> Result<PointCloud> {
    check_frame(&t.source_frame, cloud.frame_id())?;
    let points = cloud.points().iter().map(|p| t.transform.apply(p)).collect();
    PointCloud::new(points, cloud.colors().map(<[_]>::to_vec), t.target_frame.clone())
}

/// A registration transform as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformRecord {
    pub transform: FramedTransform,
    pub rms_residual: f64,
    pub pair_count: usize,
    pub coplanar_warning: bool,
}

impl TransformRecord {
    pub fn to_text(&self) -> String {
        let t = &self.transform.transform;
        let [w, x, y, z] = {
            let q = t.rotation().quaternion();
            [q.w, q.i, q.j, q.k]
        };
        let mut kv = KeyValues::new();
        kv.push("scale", t.scale());
        kv.push("qw", w);
        kv.push("qx", x);
        kv.push("qy", y);
        kv.push("qz", z);
        kv.push("tx", t.translation().x);
        kv.push("ty", t.translation().y);
        kv.push("tz", t.translation().z);
        kv.push("source_frame", &self.transform.source_frame);
        kv.push("target_frame", &self.transform.target_frame);
        kv.push("rms_m", self.rms_residual);
        kv.push("pairs", self.pair_count);
        kv.push("coplanar_warning", self.coplanar_warning);
        kv.to_text(':')
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text, ':')?;
        let q = nalgebra::Quaternion::<f64>::new(
            kv.parse_value("qw")?,
            kv.parse_value("qx")?,
            kv.parse_value("qy")?,
            kv.parse_value("qz")?,
        );
        if (q.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::Invalid(format!("rotation quaternion norm {} is not unit", q.norm())));
        }
        let t = SimilarityTransform::new(
            kv.parse_value("scale")?,
            UnitQuaternion::new_unchecked(q),
            Vec3::new(kv.parse_value("tx")?, kv.parse_value("ty")?, kv.parse_value("tz")?),
        )?;
        Ok(TransformRecord {
            transform: FramedTransform::new(t, kv.require("source_frame")?, kv.require("target_frame")?),
            rms_residual: kv.parse_value("rms_m")?,
            pair_count: kv.parse_value("pairs")?,
            coplanar_warning: kv.parse_opt("coplanar_warning")?.unwrap_or(false),
        })
    }
}

/// One row of a registration manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub session_id: String,
    pub sapling_id: String,
    pub t_start: f64,
    pub t_end: f64,
    pub sfm_traj_path: PathBuf,
    pub cloud_path: PathBuf,
}

impl ManifestRow {
    /// Relative paths resolved against `base`.
    pub fn resolved(&self, base: &Path) -> ManifestRow {
        ManifestRow {
            sfm_traj_path: base.join(&self.sfm_traj_path),
            cloud_path: base.join(&self.cloud_path),
            ..self.clone()
        }
    }
}

pub const MANIFEST_HEADER: [&str; 6] = ["session_id", "sapling_id", "t_start", "t_end", "sfm_traj_path", "cloud_path"];

/// Parses `session_id,sapling_id,t_start,t_end,sfm_traj_path,cloud_path`.
/// Row numbers in errors are file line numbers.
pub fn parse_manifest(bytes: &[u8]) -> Result<Vec<ManifestRow>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    let headers = reader.headers().map_err(|e| Error::row(1, e.to_string()))?.clone();
    let cols: Vec<usize> = MANIFEST_HEADER
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h == *name)
                .ok_or_else(|| Error::row(1, format!("missing column `{name}`")))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| Error::row(row, e.to_string()))?;
        let get = |c: usize| record.get(cols[c]).unwrap_or("");
        let num = |c: usize| {
            get(c)
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::row(row, format!("bad `{}` value `{}`", MANIFEST_HEADER[c], get(c))))
        };
        let (t_start, t_end) = (num(2)?, num(3)?);
        if !(t_start < t_end) {
            return Err(Error::row(row, "t_start must precede t_end"));
        }
        for c in [0, 1, 4, 5] {
            if get(c).is_empty() {
                return Err(Error::row(row, format!("empty `{}`", MANIFEST_HEADER[c])));
            }
        }
        rows.push(ManifestRow {
            session_id: get(0).to_string(),
            sapling_id: get(1).to_string(),
            t_start,
            t_end,
            sfm_traj_path: PathBuf::from(get(4)),
            cloud_path: PathBuf::from(get(5)),
        });
    }
    Ok(rows)
}

pub fn write_manifest(rows: &[ManifestRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(MANIFEST_HEADER)?;
    for r in rows {
        w.write_record([
            r.session_id.clone(),
            r.sapling_id.clone(),
            r.t_start.to_string(),
            r.t_end.to_string(),
            r.sfm_traj_path.display().to_string(),
            r.cloud_path.display().to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}
