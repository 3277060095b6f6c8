use std::f64::consts::{PI, TAU};
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::{UnitQuaternion, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};

use super::{write_labels, SaplingSpec, SyntheticSapling};
use crate::error::{Error, Result};
use crate::georef::{enu_to_geodetic, to_earth, EarthTransform};
use crate::ingest::{save_ply, write_gnss, write_text, write_trajectory, PlyFormat};
use crate::kv::KeyValues;
use crate::model::{FramedTransform, GeoFix, GeoTrack, PointCloud, Pose, SimilarityTransform, Trajectory, Vec3};
use crate::sfmalign::{write_manifest, ManifestRow, TransformRecord};

/// Frame of every synthetic SLAM trajectory: all sessions share one map.
pub const MAP_FRAME: &str = "M1";
const SLAM_RATE_HZ: f64 = 10.0;
const GNSS_RATE_HZ: f64 = 2.0;
const WALK_SPEED: f64 = 1.0;
const SCAN_HEIGHT: f64 = 1.5;
const DOME_RADIUS: f64 = 1.5;
const DOME_CENTRE_HEIGHT: f64 = 0.6;
const DOME_POSES: usize = 300;
const DOME_TURNS: f64 = 3.0;
/// Every n-th dome pose becomes an SfM camera.
const SFM_STRIDE: usize = 2;

/// How a sapling differs from its base spec in one session.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Unchanged,
    Defoliated,
    /// Highest-attached branch removed.
    Pruned,
}

impl Variant {
    fn name(self) -> &'static str {
        match self {
            Variant::Unchanged => "unchanged",
            Variant::Defoliated => "defoliated",
            Variant::Pruned => "pruned",
        }
    }

    fn parse(text: &str) -> Result<Variant> {
        match text {
            "unchanged" => Ok(Variant::Unchanged),
            "defoliated" => Ok(Variant::Defoliated),
            "pruned" => Ok(Variant::Pruned),
            other => Err(Error::Config(format!("unknown variant `{other}`"))),
        }
    }

    fn apply(self, spec: &SaplingSpec) -> SaplingSpec {
        match self {
            Variant::Unchanged => spec.clone(),
            Variant::Defoliated => spec.defoliated(),
            Variant::Pruned => spec.without_highest_branch(),
        }
    }
}

/// One capture session of a plot.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionSpec {
    pub id: String,
    pub date: NaiveDate,
    /// Indexed like [`PlotSpec::saplings`].
    pub variants: Vec<Variant>,
}

/// A plot of saplings on a square grid, captured in one or more sessions.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotSpec {
    pub seed: u64,
    pub saplings: Vec<SaplingSpec>,
    /// Grid spacing between saplings (metres).
    pub spacing: f64,
    /// Planted map → Earth transform.
    pub earth: EarthTransform,
    pub sessions: Vec<SessionSpec>,
    /// σ of the horizontal and vertical GNSS noise (metres).
    pub gnss_sigma: f64,
    /// σ of the noise on SfM camera positions, in map-frame metres.
    pub sfm_noise: f64,
}

impl PlotSpec {
    /// `n` random saplings captured twice; in the second session sapling
    /// `n − 1` is pruned (n ≥ 2) and sapling `n − 2` defoliated (n ≥ 3).
    pub fn two_sessions(seed: u64, n: usize) -> PlotSpec {
        let mut rng = stream(seed, 1);
        let saplings = (0..n as u64).map(|i| SaplingSpec::random(seed.wrapping_mul(1_000).wrapping_add(i))).collect();
        let anchor = GeoFix::new(0.0, rng.random_range(-60.0..60.0), rng.random_range(-180.0..180.0), Some(100.0))
            .expect("in range");
        // The walk starts at (−spacing/2, −spacing/2); mapping that point to
        // the anchor makes the GNSS log's own anchor (its first fix) share
        // the planted tangent plane.
        let rotation_z: f64 = rng.random_range(-PI..PI);
        let (s, c) = rotation_z.sin_cos();
        let earth = EarthTransform {
            rotation_z,
            translation: Vector2::new(2.0 * (c - s), 2.0 * (s + c)),
            up_offset: rng.random_range(-5.0..5.0),
            anchor,
            rms_residual: 0.0,
        };
        let mut second = vec![Variant::Unchanged; n];
        if n >= 2 {
            second[n - 1] = Variant::Pruned;
        }
        if n >= 3 {
            second[n - 2] = Variant::Defoliated;
        }
        let date = |s: &str| NaiveDate::parse_from_str(s, "%Y-%m-%d").expect("literal date");
        PlotSpec {
            seed,
            saplings,
            spacing: 4.0,
            earth,
            sessions: vec![
                SessionSpec { id: "S1".into(), date: date("2024-07-01"), variants: vec![Variant::Unchanged; n] },
                SessionSpec { id: "S2".into(), date: date("2024-12-01"), variants: second },
            ],
            gnss_sigma: 1.0,
            sfm_noise: 0.002,
        }
    }

    /// A single session of `n` saplings without any noise.
    pub fn noiseless(seed: u64, n: usize) -> PlotSpec {
        let mut spec = PlotSpec::two_sessions(seed, n);
        spec.sessions.truncate(1);
        spec.gnss_sigma = 0.0;
        spec.sfm_noise = 0.0;
        spec
    }

    pub fn sapling_id(index: usize) -> String {
        format!("T{:02}", index + 1)
    }

    /// Base of sapling `index` in the map frame.
    pub fn sapling_position(&self, index: usize) -> Vec3 {
        let cols = self.columns();
        Vec3::new((index % cols) as f64 * self.spacing, (index / cols) as f64 * self.spacing, 0.0)
    }

    fn columns(&self) -> usize {
        (self.saplings.len() as f64).sqrt().ceil().max(1.0) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.saplings.is_empty() {
            return Err(Error::Config("a plot needs at least one sapling".into()));
        }
        if self.sessions.is_empty() {
            return Err(Error::Config("a plot needs at least one session".into()));
        }
        if !(self.spacing.is_finite() && self.spacing > 0.0) {
            return Err(Error::Config(format!("spacing must be positive, got {}", self.spacing)));
        }
        for (name, v) in [("gnss_sigma", self.gnss_sigma), ("sfm_noise", self.sfm_noise)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        for s in &self.sessions {
            if s.variants.len() != self.saplings.len() {
                return Err(Error::Config(format!("session {} lists {} variants for {} saplings", s.id, s.variants.len(), self.saplings.len())));
            }
        }
        for spec in &self.saplings {
            spec.validate()?;
        }
        Ok(())
    }

    /// Generates every session.
    pub fn generate(&self) -> Result<SyntheticPlot> {
        self.validate()?;
        let sessions = self
            .sessions
            .iter()
            .enumerate()
            .map(|(k, s)| self.generate_session(k, s))
            .collect::<Result<_>>()?;
        Ok(SyntheticPlot { spec: self.clone(), sessions })
    }

    fn generate_session(&self, k: usize, session: &SessionSpec) -> Result<SyntheticSession> {
        let mut path = PathBuilder::default();
        self.lawnmower(&mut path);
        let mut windows = Vec::with_capacity(self.saplings.len());
        for i in 0..self.saplings.len() {
            let centre = self.sapling_position(i) + Vec3::new(0.0, 0.0, DOME_CENTRE_HEIGHT);
            windows.push(path.dome(centre));
        }
        let slam = path.finish()?;
        let gnss = self.gnss(k, &slam)?;
        let saplings = windows
            .into_iter()
            .enumerate()
            .map(|(i, (first, last))| self.sapling_session(k, session, i, &slam, first, last))
            .collect::<Result<_>>()?;
        Ok(SyntheticSession { id: session.id.clone(), date: session.date, slam, gnss, saplings })
    }

    /// Back-and-forth lines one spacing apart covering the grid.
    fn lawnmower(&self, path: &mut PathBuilder) {
        let cols = self.columns();
        let rows = self.saplings.len().div_ceil(cols);
        let margin = self.spacing / 2.0;
        let (x0, x1) = (-margin, (cols - 1) as f64 * self.spacing + margin);
        let lines = 2 * rows + 1;
        for line in 0..lines {
            let y = -margin + line as f64 * self.spacing / 2.0;
            let (a, b) = if line % 2 == 0 { (x0, x1) } else { (x1, x0) };
            path.walk_to(Vec3::new(a, y, SCAN_HEIGHT));
            path.walk_to(Vec3::new(b, y, SCAN_HEIGHT));
        }
    }

    fn gnss(&self, k: usize, slam: &Trajectory) -> Result<GeoTrack> {
        let mut rng = stream(self.seed, 100 + k as u64);
        let noise = Normal::new(0.0, self.gnss_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
        let draw = |rng: &mut ChaCha8Rng| if self.gnss_sigma > 0.0 { noise.sample(rng) } else { 0.0 };
        let (t0, t1) = slam.span();
        let steps = ((t1 - t0) * GNSS_RATE_HZ).floor() as usize;
        let fixes = (0..=steps)
            .map(|j| {
                let t = t0 + j as f64 / GNSS_RATE_HZ;
                let (idx, _) = slam.nearest(t);
                let enu = self.earth.map_to_enu(&slam.poses()[idx].translation)
                    + Vec3::new(draw(&mut rng), draw(&mut rng), draw(&mut rng));
                let (lat, lon, alt) = enu_to_geodetic(&enu, &self.earth.anchor);
                GeoFix::new(t, lat, lon, Some(alt))
            })
            .collect::<Result<Vec<_>>>()?;
        GeoTrack::new(fixes, None)
    }

    fn sapling_session(
        &self,
        k: usize,
        session: &SessionSpec,
        i: usize,
        slam: &Trajectory,
        first: usize,
        last: usize,
    ) -> Result<SessionSapling> {
        let id = PlotSpec::sapling_id(i);
        let spec = session.variants[i].apply(&self.saplings[i]);
        let local = spec.generate()?;
        let base = self.sapling_position(i);
        let shift = SimilarityTransform::new(1.0, UnitQuaternion::identity(), base)?;
        let map_cloud = PointCloud::new(
            local.cloud.points().iter().map(|p| shift.apply(p)).collect(),
            local.cloud.colors().map(<[_]>::to_vec),
            MAP_FRAME,
        )?;
        let skeleton = crate::model::SkeletonGraph::tree(
            local.skeleton.vertices().iter().map(|p| shift.apply(p)).collect(),
            local.skeleton.edges().to_vec(),
            local.skeleton.root(),
        )?;
        let sapling = SyntheticSapling { cloud: map_cloud, skeleton, ..local };

        let frame = sfm_frame(&session.id, &id);
        let mut rng = stream(self.seed, 1_000 + 100 * k as u64 + i as u64);
        let planted = FramedTransform::new(random_similarity(&mut rng), frame.clone(), MAP_FRAME);
        let to_sfm = planted.inverse();
        let noise = Normal::new(0.0, self.sfm_noise.max(f64::MIN_POSITIVE)).expect("valid sigma");
        let poses = slam.poses()[first..=last]
            .iter()
            .step_by(SFM_STRIDE)
            .map(|p| {
                let jitter = if self.sfm_noise > 0.0 {
                    Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng))
                } else {
                    Vec3::zeros()
                };
                let noisy = Pose::new(p.timestamp, p.rotation, p.translation + jitter)?;
                Ok(to_sfm.transform.apply_pose(&noisy))
            })
            .collect::<Result<Vec<_>>>()?;
        let sfm = Trajectory::new(frame.clone(), poses)?;
        let sfm_cloud = PointCloud::new(
            sapling.cloud.points().iter().map(|p| to_sfm.transform.apply(p)).collect(),
            sapling.cloud.colors().map(<[_]>::to_vec),
            frame,
        )?;
        let position = to_earth(&self.earth, &base);
        Ok(SessionSapling {
            id,
            variant: session.variants[i],
            spec,
            map_position: base,
            lat: position.0,
            lon: position.1,
            window: (slam.poses()[first].timestamp, slam.poses()[last].timestamp),
            sapling,
            sfm,
            sfm_cloud,
            planted,
        })
    }

    pub fn to_text(&self) -> String {
        let mut kv = KeyValues::new();
        kv.push("seed", self.seed);
        kv.push("spacing", self.spacing);
        kv.push("gnss_sigma", self.gnss_sigma);
        kv.push("sfm_noise", self.sfm_noise);
        kv.push("anchor_lat", self.earth.anchor.latitude);
        kv.push("anchor_lon", self.earth.anchor.longitude);
        kv.push("anchor_alt", self.earth.anchor.alt());
        kv.push("rotation_z_rad", self.earth.rotation_z);
        kv.push("east_m", self.earth.translation.x);
        kv.push("north_m", self.earth.translation.y);
        kv.push("up_m", self.earth.up_offset);
        for (i, s) in self.saplings.iter().enumerate() {
            kv.push(&format!("sapling.{i}.seed"), s.seed);
        }
        for s in &self.sessions {
            kv.push(&format!("session.{}", s.id), s.date.format("%Y-%m-%d"));
            for (i, v) in s.variants.iter().enumerate() {
                if *v != Variant::Unchanged {
                    kv.push(&format!("variant.{}.{i}", s.id), v.name());
                }
            }
        }
        kv.to_text('=')
    }

    /// Parses a plot description.
    ///
    /// `saplings=N` (or `sapling.<i>.seed=` lines) sets the saplings, each
    /// [`SaplingSpec::random`] of its seed; `session.<id>=YYYY-MM-DD` adds a
    /// session and `variant.<session>.<i>=defoliated|pruned` changes one
    /// sapling in it. Missing entries default to
    /// [`PlotSpec::two_sessions`] of `seed`.
    pub fn from_text(text: &str) -> Result<PlotSpec> {
        let kv = KeyValues::parse(text, '=')?;
        let seed: u64 = kv.parse_opt("seed")?.unwrap_or(0);
        let mut n: usize = kv.parse_opt("saplings")?.unwrap_or(0);
        let mut seeds: Vec<(usize, u64)> = Vec::new();
        let mut sessions: Vec<(String, NaiveDate)> = Vec::new();
        let mut variants: Vec<(String, usize, Variant)> = Vec::new();
        for key in kv.keys() {
            let value = kv.require(key)?;
            let parts: Vec<&str> = key.split('.').collect();
            match parts.as_slice() {
                ["sapling", i, "seed"] => seeds.push((parse_index(key, i)?, kv.parse_value(key)?)),
                ["session", id] => {
                    let date = NaiveDate::parse_from_str(value, "%Y-%m-%d")
                        .map_err(|e| Error::Config(format!("`{key}`: {e}")))?;
                    sessions.push((id.to_string(), date));
                }
                ["variant", id, i] => variants.push((id.to_string(), parse_index(key, i)?, Variant::parse(value)?)),
                [k] if PLOT_KEYS.contains(k) => {}
                _ => return Err(Error::Config(format!("unknown key `{key}`"))),
            }
        }
        if !seeds.is_empty() {
            n = n.max(seeds.iter().map(|(i, _)| i + 1).max().unwrap_or(0));
        }
        if n == 0 {
            return Err(Error::Config("set `saplings=N` or `sapling.<i>.seed`".into()));
        }
        let mut spec = PlotSpec::two_sessions(seed, n);
        for (i, s) in seeds {
            spec.saplings[i] = SaplingSpec::random(s);
        }
        if !sessions.is_empty() {
            spec.sessions = sessions
                .into_iter()
                .map(|(id, date)| SessionSpec { id, date, variants: vec![Variant::Unchanged; n] })
                .collect();
        } else if !variants.is_empty() {
            for s in &mut spec.sessions {
                s.variants = vec![Variant::Unchanged; n];
            }
        }
        for (id, i, v) in variants {
            let session = spec
                .sessions
                .iter_mut()
                .find(|s| s.id == id)
                .ok_or_else(|| Error::Config(format!("variant for unknown session `{id}`")))?;
            *session
                .variants
                .get_mut(i)
                .ok_or_else(|| Error::Config(format!("variant for sapling {i} of {n}")))? = v;
        }
        spec.spacing = kv.parse_opt("spacing")?.unwrap_or(spec.spacing);
        spec.gnss_sigma = kv.parse_opt("gnss_sigma")?.unwrap_or(spec.gnss_sigma);
        spec.sfm_noise = kv.parse_opt("sfm_noise")?.unwrap_or(spec.sfm_noise);
        let lat = kv.parse_opt("anchor_lat")?.unwrap_or(spec.earth.anchor.latitude);
        let lon = kv.parse_opt("anchor_lon")?.unwrap_or(spec.earth.anchor.longitude);
        let alt = kv.parse_opt("anchor_alt")?.unwrap_or(spec.earth.anchor.alt());
        spec.earth.anchor = GeoFix::new(0.0, lat, lon, Some(alt))?;
        spec.earth.rotation_z = kv.parse_opt("rotation_z_rad")?.unwrap_or(spec.earth.rotation_z);
        spec.earth.translation.x = kv.parse_opt("east_m")?.unwrap_or(spec.earth.translation.x);
        spec.earth.translation.y = kv.parse_opt("north_m")?.unwrap_or(spec.earth.translation.y);
        spec.earth.up_offset = kv.parse_opt("up_m")?.unwrap_or(spec.earth.up_offset);
        spec.validate()?;
        Ok(spec)
    }
}

const PLOT_KEYS: [&str; 12] = [
    "seed",
    "saplings",
    "spacing",
    "gnss_sigma",
    "sfm_noise",
    "anchor_lat",
    "anchor_lon",
    "anchor_alt",
    "rotation_z_rad",
    "east_m",
    "north_m",
    "up_m",
];

fn parse_index(key: &str, text: &str) -> Result<usize> {
    text.parse().map_err(|_| Error::Config(format!("bad index in `{key}`")))
}

/// Frame tag of the SfM reconstruction of one sapling in one session.
pub fn sfm_frame(session_id: &str, sapling_id: &str) -> String {
    format!("F_{session_id}_{sapling_id}")
}

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Log-uniform scale in [0.1, 10], uniform random rotation, translation
/// within ±50 m.
fn random_similarity(rng: &mut ChaCha8Rng) -> SimilarityTransform {
    let scale = rng.random_range(0.1f64.ln()..10f64.ln()).exp();
    let axis: [f64; 3] = UnitSphere.sample(rng);
    let angle = rng.random_range(-PI..PI);
    let rotation = UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(Vec3::from(axis)), angle);
    let translation = Vec3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
    SimilarityTransform::new(scale, rotation, translation).expect("positive scale")
}

/// Accumulates a 10 Hz walking trajectory.
#[derive(Default)]
struct PathBuilder {
    points: Vec<Vec3>,
    /// Point the camera looks at for each pose; `None` looks along the path.
    targets: Vec<Option<Vec3>>,
}

impl PathBuilder {
    fn walk_to(&mut self, to: Vec3) {
        let Some(&from) = self.points.last() else {
            self.points.push(to);
            self.targets.push(None);
            return;
        };
        let steps = ((to - from).norm() / WALK_SPEED * SLAM_RATE_HZ).ceil().max(1.0) as usize;
        for s in 1..=steps {
            self.points.push(from + (to - from) * (s as f64 / steps as f64));
            self.targets.push(None);
        }
    }

    /// Rising spiral on a hemisphere around `centre`, always facing it.
    /// Returns the first and last pose index of the dome.
    fn dome(&mut self, centre: Vec3) -> (usize, usize) {
        let at = |j: usize| {
            let f = j as f64 / (DOME_POSES - 1) as f64;
            let azimuth = TAU * DOME_TURNS * f;
            let elevation = (5.0 + 55.0 * f).to_radians();
            centre
                + DOME_RADIUS
                    * Vec3::new(elevation.cos() * azimuth.cos(), elevation.cos() * azimuth.sin(), elevation.sin())
        };
        self.walk_to(at(0));
        let first = self.points.len() - 1;
        self.targets[first] = Some(centre);
        for j in 1..DOME_POSES {
            self.points.push(at(j));
            self.targets.push(Some(centre));
        }
        (first, self.points.len() - 1)
    }

    fn finish(self) -> Result<Trajectory> {
        let n = self.points.len();
        let poses = (0..n)
            .map(|k| {
                let p = self.points[k];
                let look = match self.targets[k] {
                    Some(c) => c - p,
                    None if k + 1 < n => self.points[k + 1] - p,
                    None if k > 0 => p - self.points[k - 1],
                    None => Vec3::x(),
                };
                let yaw = if look.xy().norm() > 0.0 { look.y.atan2(look.x) } else { 0.0 };
                Pose::new(k as f64 / SLAM_RATE_HZ, UnitQuaternion::from_euler_angles(0.0, 0.0, yaw), p)
            })
            .collect::<Result<Vec<_>>>()?;
        Trajectory::new(MAP_FRAME, poses)
    }
}

/// One sapling as captured in one session.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionSapling {
    pub id: String,
    pub variant: Variant,
    pub spec: SaplingSpec,
    /// Stem base in the map frame.
    pub map_position: Vec3,
    /// Stem base on the planted Earth transform.
    pub lat: f64,
    pub lon: f64,
    /// Time span of the dome around this sapling.
    pub window: (f64, f64),
    /// Ground truth in the map frame.
    pub sapling: SyntheticSapling,
    /// Camera trajectory in the SfM frame.
    pub sfm: Trajectory,
    /// The reconstruction in the SfM frame.
    pub sfm_cloud: PointCloud,
    /// SfM frame → map frame.
    pub planted: FramedTransform,
}

/// One capture session: SLAM trajectory, GNSS log and per-sapling SfM data.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSession {
    pub id: String,
    pub date: NaiveDate,
    pub slam: Trajectory,
    pub gnss: GeoTrack,
    pub saplings: Vec<SessionSapling>,
}

/// A generated plot with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPlot {
    pub spec: PlotSpec,
    pub sessions: Vec<SyntheticSession>,
}

/// Registry directory written into every session's `run.cfg`, relative to
/// the session directory.
pub const PLOT_REGISTRY_DIR: &str = "../registry";

impl SyntheticPlot {
    /// Writes the plot under `dir`:
    ///
    /// ```text
    /// plot.txt, earth_truth.txt
    /// <session>/{slam.tum, gnss.csv, manifest.csv, run.cfg}
    /// <session>/sfm/<sapling>.tum, <session>/clouds/<sapling>.ply
    /// <session>/truth/<sapling>.{spec, labels, traits, transform}
    /// ```
    ///
    /// Each `run.cfg` points its output at the shared `registry/` directory.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_text(&dir.join("plot.txt"), &self.spec.to_text())?;
        write_text(&dir.join("earth_truth.txt"), &self.spec.earth.to_text())?;
        for session in &self.sessions {
            let root = dir.join(&session.id);
            write_text(&root.join("slam.tum"), &write_trajectory(&session.slam))?;
            write_text(&root.join("gnss.csv"), &write_gnss(&session.gnss))?;
            let mut rows = Vec::new();
            for s in &session.saplings {
                let sfm_path = Path::new("sfm").join(format!("{}.tum", s.id));
                let cloud_path = Path::new("clouds").join(format!("{}.ply", s.id));
                write_text(&root.join(&sfm_path), &write_trajectory(&s.sfm))?;
                std::fs::create_dir_all(root.join("clouds")).map_err(|e| Error::from(e).in_file(&root))?;
                save_ply(root.join(&cloud_path), &s.sfm_cloud, PlyFormat::BinaryLittleEndian)?;
                let truth = root.join("truth");
                write_text(&truth.join(format!("{}.spec", s.id)), &s.spec.to_text())?;
                write_text(&truth.join(format!("{}.labels", s.id)), &write_labels(&s.sapling.labels))?;
                write_text(&truth.join(format!("{}.traits", s.id)), &s.truth_text())?;
                let record = TransformRecord { transform: s.planted.clone(), rms_residual: 0.0, pair_count: s.sfm.len(), coplanar_warning: false };
                write_text(&truth.join(format!("{}.transform", s.id)), &record.to_text())?;
                rows.push(ManifestRow {
                    session_id: session.id.clone(),
                    sapling_id: s.id.clone(),
                    t_start: s.window.0,
                    t_end: s.window.1,
                    sfm_traj_path: sfm_path,
                    cloud_path,
                });
            }
            write_text(&root.join("manifest.csv"), &write_manifest(&rows)?)?;
            let mut cfg = KeyValues::new();
            cfg.push("slam", "slam.tum");
            cfg.push("gnss", "gnss.csv");
            cfg.push("manifest", "manifest.csv");
            cfg.push("out", PLOT_REGISTRY_DIR);
            cfg.push("date", session.date.format("%Y-%m-%d"));
            write_text(&root.join("run.cfg"), &cfg.to_text('='))?;
        }
        Ok(())
    }
}

impl SessionSapling {
    fn truth_text(&self) -> String {
        let t = &self.sapling.truth;
        let mut kv = KeyValues::new();
        kv.push("variant", self.variant.name());
        kv.push("height_m", t.height);
        kv.push("bifurcations", t.bifurcations);
        kv.push("n_leaf", t.n_leaf);
        kv.push("n_wood", t.n_wood);
        kv.push("lwr", t.lwr());
        kv.push("x", self.map_position.x);
        kv.push("y", self.map_position.y);
        kv.push("lat", self.lat);
        kv.push("lon", self.lon);
        kv.to_text(':')
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::georef::{associate, fit_earth_transform, AssociationOptions};
    use crate::sfmalign::{extract_subtrajectory, register_sfm, DEFAULT_MAX_GAP};

    fn small(seed: u64, n: usize) -> PlotSpec {
        let mut spec = PlotSpec::noiseless(seed, n);
        for s in &mut spec.saplings {
            s.density = 3_000.0;
        }
        spec
    }

    #[test]
    fn noiseless_plot_recovers_planted_transforms() {
        let plot = small(3, 2).generate().unwrap();
        let session = &plot.sessions[0];
        let pairs = associate(&session.slam, &session.gnss, AssociationOptions::default()).unwrap();
        let earth = fit_earth_transform(&pairs).unwrap();
        assert!(earth.rms_residual < 1e-9, "{}", earth.rms_residual);
        for s in &session.saplings {
            let sub = extract_subtrajectory(&session.slam, s.window.0, s.window.1, &s.id, &session.id).unwrap();
            let reg = register_sfm(&s.sfm, &sub, DEFAULT_MAX_GAP).unwrap();
            let planted = s.planted.transform.scale();
            assert!((reg.transform.transform.scale() / planted - 1.0).abs() < 1e-6);
            let cloud = crate::sfmalign::transform_cloud(&s.sfm_cloud, &reg.transform).unwrap();
            let worst = cloud.points().iter().zip(s.sapling.cloud.points()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(worst < 1e-9, "{worst}");
            let (lat, lon, _) = to_earth(&earth, &s.map_position);
            assert!((lat - s.lat).abs() < 1e-7 && (lon - s.lon).abs() < 1e-7);
        }
    }

    #[test]
    fn second_session_carries_variants() {
        let plot = small(1, 5).generate().unwrap();
        assert_eq!(plot.sessions.len(), 1);
        let mut spec = small(1, 5);
        spec.sessions = PlotSpec::two_sessions(1, 5).sessions;
        let plot2 = spec.generate().unwrap();
        let s2 = &plot2.sessions[1].saplings;
        assert_eq!(s2[3].variant, Variant::Defoliated);
        assert_eq!(s2[3].sapling.truth.n_leaf, 0);
        assert_eq!(s2[4].variant, Variant::Pruned);
        let before = &plot2.sessions[0].saplings[4].sapling.truth;
        assert_eq!(s2[4].sapling.truth.bifurcations + 1, before.bifurcations);
        assert_eq!(plot2.sessions[0].saplings[0].sapling, plot.sessions[0].saplings[0].sapling);
        assert_eq!(plot2.sessions[1].saplings[0].sapling, plot.sessions[0].saplings[0].sapling);
    }

    #[test]
    fn trajectories_are_valid_and_deterministic() {
        let a = small(7, 3).generate().unwrap();
        let b = small(7, 3).generate().unwrap();
        assert_eq!(a, b);
        let slam = &a.sessions[0].slam;
        assert!(slam.poses().windows(2).all(|w| w[1].timestamp > w[0].timestamp));
        let gnss = a.sessions[0].gnss.fixes();
        assert!(gnss.len() >= 200, "{}", gnss.len());
        for s in &a.sessions[0].saplings {
            assert!(s.sfm.len() >= 100);
            assert_eq!(s.sfm_cloud.len(), s.sapling.cloud.len());
        }
    }

    #[test]
    fn plot_text_roundtrip() {
        let spec = PlotSpec::two_sessions(11, 4);
        assert_eq!(PlotSpec::from_text(&spec.to_text()).unwrap(), spec);
        let custom = PlotSpec::from_text("seed=2\nsaplings=2\nsession.A=2023-05-01\nvariant.A.1=pruned\n").unwrap();
        assert_eq!(custom.sessions.len(), 1);
        assert_eq!(custom.sessions[0].variants, [Variant::Unchanged, Variant::Pruned]);
        assert!(PlotSpec::from_text("saplings=2\nbogus=1\n").is_err());
        assert!(PlotSpec::from_text("seed=2\n").is_err());
    }

    #[test]
    fn write_layout() {
        let dir = tempfile::tempdir().unwrap();
        small(5, 1).generate().unwrap().write(dir.path()).unwrap();
        for f in ["plot.txt", "earth_truth.txt", "S1/slam.tum", "S1/gnss.csv", "S1/manifest.csv", "S1/run.cfg", "S1/sfm/T01.tum", "S1/clouds/T01.ply", "S1/truth/T01.transform"] {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
    }
}
