//! Georeferencing of the SLAM map frame.
//!
//! GNSS fixes are projected into a local East-North-Up tangent frame at an
//! anchor fix (exact WGS84 geodetic → ECEF → ENU chain). Each fix is paired
//! with the trajectory pose nearest in time, and a planar rigid transform
//! (yaw plus east/north translation) is fitted in closed form so that
//! `R·xy + t` best matches the fixes in the least-squares sense. The map
//! frame is gravity-aligned, so only the horizontal components enter the
//! fit; when the fixes carry altitude, a constant vertical offset is
//! estimated separately as the mean of `up − z`.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::model::{GeoFix, GeoTrack, Trajectory, Vec3};

/// WGS84 semi-major axis (m).
pub const WGS84_A: f64 = 6_378_137.0;
/// WGS84 inverse flattening.
pub const WGS84_INV_F: f64 = 298.257_223_563;

fn e2() -> f64 {
    let f = 1.0 / WGS84_INV_F;
    f * (2.0 - f)
}

/// Geodetic (degrees, metres) to Earth-centred Earth-fixed.
pub fn geodetic_to_ecef(lat_deg: f64, lon_deg: f64, alt: f64) -> Vec3 {
    let (lat, lon) = (lat_deg.to_radians(), lon_deg.to_radians());
    let e2 = e2();
    let n = WGS84_A / (1.0 - e2 * lat.sin().powi(2)).sqrt();
    Vec3::new(
        (n + alt) * lat.cos() * lon.cos(),
        (n + alt) * lat.cos() * lon.sin(),
        (n * (1.0 - e2) + alt) * lat.sin(),
    )
}

/// ECEF to geodetic `(lat°, lon°, alt)` by fixed-point iteration on latitude.
pub fn ecef_to_geodetic(p: &Vec3) -> (f64, f64, f64) {
    let e2 = e2();
    let lon = p.y.atan2(p.x);
    let rho = p.x.hypot(p.y);
    let mut lat = p.z.atan2(rho * (1.0 - e2));
    let mut alt = 0.0;
    for _ in 0..20 {
        let n = WGS84_A / (1.0 - e2 * lat.sin().powi(2)).sqrt();
        alt = if lat.abs() < PI / 4.0 {
            rho / lat.cos() - n
        } else {
            p.z / lat.sin() - n * (1.0 - e2)
        };
        let next = p.z.atan2(rho * (1.0 - e2 * n / (n + alt)));
        let done = (next - lat).abs() < 1e-15;
        lat = next;
        if done {
            break;
        }
    }
    (lat.to_degrees(), lon.to_degrees(), alt)
}

/// Rows of the ECEF → ENU rotation at the anchor.
fn enu_basis(anchor: &GeoFix) -> [Vec3; 3] {
    let (lat, lon) = (anchor.latitude.to_radians(), anchor.longitude.to_radians());
    let (sl, cl) = lat.sin_cos();
    let (so, co) = lon.sin_cos();
    [
        Vec3::new(-so, co, 0.0),
        Vec3::new(-sl * co, -sl * so, cl),
        Vec3::new(cl * co, cl * so, sl),
    ]
}

/// Local `(east, north, up)` of `fix` relative to `anchor`, in metres.
/// Missing altitudes count as zero.
pub fn geodetic_to_enu(fix: &GeoFix, anchor: &GeoFix) -> Vec3 {
    let d = geodetic_to_ecef(fix.latitude, fix.longitude, fix.alt())
        - geodetic_to_ecef(anchor.latitude, anchor.longitude, anchor.alt());
    let [e, n, u] = enu_basis(anchor);
    Vec3::new(e.dot(&d), n.dot(&d), u.dot(&d))
}

/// Inverse of [`geodetic_to_enu`]: `(lat°, lon°, alt)`.
pub fn enu_to_geodetic(enu: &Vec3, anchor: &GeoFix) -> (f64, f64, f64) {
    let [e, n, u] = enu_basis(anchor);
    let ecef = geodetic_to_ecef(anchor.latitude, anchor.longitude, anchor.alt())
        + e * enu.x
        + n * enu.y
        + u * enu.z;
    ecef_to_geodetic(&ecef)
}

/// One pose ↔ fix correspondence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssociatedPair {
    pub pose_xy: Vector2<f64>,
    pub enu_xy: Vector2<f64>,
    pub time_gap: f64,
    pub pose_z: f64,
    /// ENU up of the fix, when the fix carried an altitude.
    pub enu_up: Option<f64>,
}

/// Correspondences between map-frame positions and ENU fixes.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationPairs {
    pub pairs: Vec<AssociatedPair>,
    pub anchor: GeoFix,
}

/// Options for [`associate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssociationOptions {
    /// Use only the first `u` fixes; `None` uses all of them.
    pub first_u: Option<usize>,
    /// Pairs further apart in time than this are dropped (seconds).
    pub max_gap: f64,
}

impl Default for AssociationOptions {
    fn default() -> Self {
        AssociationOptions {
            first_u: None,
            max_gap: 0.1,
        }
    }
}

/// Pairs each of the first `u` fixes with the pose nearest in time.
pub fn associate(traj: &Trajectory, track: &GeoTrack, opts: AssociationOptions) -> Result<AssociationPairs> {
    if let Some(u) = opts.first_u {
        if u < 2 {
            return Err(Error::Invalid(format!("u must be at least 2, got {u}")));
        }
    }
    let anchor = *track.anchor();
    let take = opts.first_u.unwrap_or(usize::MAX);
    let pairs: Vec<AssociatedPair> = track
        .fixes()
        .iter()
        .take(take)
        .filter_map(|fix| {
            let (idx, gap) = traj.nearest(fix.timestamp);
            if gap > opts.max_gap {
                return None;
            }
            let pose = traj.poses()[idx].translation;
            let enu = geodetic_to_enu(fix, &anchor);
            Some(AssociatedPair {
                pose_xy: pose.xy(),
                enu_xy: enu.xy(),
                time_gap: gap,
                pose_z: pose.z,
                enu_up: fix.altitude.map(|_| enu.z),
            })
        })
        .collect();
    if pairs.len() < 2 {
        return Err(Error::InsufficientPairs {
            found: pairs.len(),
            required: 2,
        });
    }
    Ok(AssociationPairs { pairs, anchor })
}

/// Planar map → Earth transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarthTransform {
    /// Yaw in `(-π, π]`.
    pub rotation_z: f64,
    /// `(east, north)` in metres.
    pub translation: Vector2<f64>,
    /// Added to map `z` to obtain ENU up.
    pub up_offset: f64,
    pub anchor: GeoFix,
    pub rms_residual: f64,
}

impl EarthTransform {
    pub fn identity(anchor: GeoFix) -> Self {
        EarthTransform {
            rotation_z: 0.0,
            translation: Vector2::zeros(),
            up_offset: 0.0,
            anchor,
            rms_residual: 0.0,
        }
    }

    fn rotation(&self) -> Matrix2<f64> {
        let (s, c) = self.rotation_z.sin_cos();
        Matrix2::new(c, -s, s, c)
    }

    /// Map-frame point to ENU.
    pub fn map_to_enu(&self, p: &Vec3) -> Vec3 {
        let xy = self.rotation() * p.xy() + self.translation;
        Vec3::new(xy.x, xy.y, p.z + self.up_offset)
    }

    /// ENU point to map frame.
    pub fn enu_to_map(&self, enu: &Vec3) -> Vec3 {
        let xy = self.rotation().transpose() * (enu.xy() - self.translation);
        Vec3::new(xy.x, xy.y, enu.z - self.up_offset)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.push("rotation_z_rad", self.rotation_z);
        kv.push("east_m", self.translation.x);
        kv.push("north_m", self.translation.y);
        kv.push("up_m", self.up_offset);
        kv.push("anchor_lat", self.anchor.latitude);
        kv.push("anchor_lon", self.anchor.longitude);
        kv.push("anchor_alt", self.anchor.alt());
        kv.push("rms_m", self.rms_residual);
        kv
    }

    pub fn to_text(&self) -> String {
        self.to_kv().to_text(':')
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text, ':')?;
        let anchor = GeoFix::new(
            0.0,
            kv.parse_value("anchor_lat")?,
            kv.parse_value("anchor_lon")?,
            Some(kv.parse_value("anchor_alt")?),
        )?;
        Ok(EarthTransform {
            rotation_z: kv.parse_value("rotation_z_rad")?,
            translation: Vector2::new(kv.parse_value("east_m")?, kv.parse_value("north_m")?),
            up_offset: kv.parse_opt("up_m")?.unwrap_or(0.0),
            anchor,
            rms_residual: kv.parse_value("rms_m")?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::ingest::write_text(path.as_ref(), &self.to_text())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_text(&crate::ingest::read_text(path)?).map_err(|e| e.in_file(path))
    }
}

/// Sum of squared planar residuals `‖R·xy + t − g‖²` for a candidate.
pub fn planar_objective(pairs: &AssociationPairs, rotation_z: f64, translation: Vector2<f64>) -> f64 {
    let (s, c) = rotation_z.sin_cos();
    let r = Matrix2::new(c, -s, s, c);
    pairs
        .pairs
        .iter()
        .map(|p| (r * p.pose_xy + translation - p.enu_xy).norm_squared())
        .sum()
}

/// Closed-form planar rigid fit (2-D Kabsch with determinant correction).
pub fn fit_earth_transform(pairs: &AssociationPairs) -> Result<EarthTransform> {
    let n = pairs.pairs.len();
    if n < 2 {
        return Err(Error::InsufficientPairs { found: n, required: 2 });
    }
    let inv_n = 1.0 / n as f64;
    let src_mean: Vector2<f64> = pairs.pairs.iter().map(|p| p.pose_xy).sum::<Vector2<f64>>() * inv_n;
    let dst_mean: Vector2<f64> = pairs.pairs.iter().map(|p| p.enu_xy).sum::<Vector2<f64>>() * inv_n;

    let spread = pairs
        .pairs
        .iter()
        .map(|p| (p.pose_xy - src_mean).norm_squared())
        .sum::<f64>()
        * inv_n;
    if spread.sqrt() < 1e-9 * (1.0 + src_mean.norm()) {
        return Err(Error::Degenerate(
            "all trajectory positions coincide; rotation is unobservable".into(),
        ));
    }

    let cross: Matrix2<f64> = pairs
        .pairs
        .iter()
        .map(|p| (p.pose_xy - src_mean) * (p.enu_xy - dst_mean).transpose())
        .sum();
    let svd = cross.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::Degenerate("SVD failed".into())),
    };
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let rot = v * Matrix2::new(1.0, 0.0, 0.0, d) * u.transpose();
    let mut yaw = rot[(1, 0)].atan2(rot[(0, 0)]);
    if yaw <= -PI {
        yaw = PI;
    }
    let translation = dst_mean - rot * src_mean;
    let rms = (planar_objective(pairs, yaw, translation) * inv_n).sqrt();

    let ups: Vec<f64> = pairs
        .pairs
        .iter()
        .filter_map(|p| p.enu_up.map(|u| u - p.pose_z))
        .collect();
    let up_offset = if ups.len() == n {
        ups.iter().sum::<f64>() * inv_n
    } else {
        0.0
    };

    Ok(EarthTransform {
        rotation_z: yaw,
        translation,
        up_offset,
        anchor: pairs.anchor,
        rms_residual: rms,
    })
}

/// Map-frame point to `(lat°, lon°, alt)`.
pub fn to_earth(t: &EarthTransform, p: &Vec3) -> (f64, f64, f64) {
    enu_to_geodetic(&t.map_to_enu(p), &t.anchor)
}

/// `(lat°, lon°, alt)` to the map frame.
pub fn from_earth(t: &EarthTransform, fix: &GeoFix) -> Vec3 {
    t.enu_to_map(&geodetic_to_enu(fix, &t.anchor))
}
