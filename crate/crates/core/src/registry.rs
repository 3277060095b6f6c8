//! Multi-session store of per-sapling records and their artifacts.
//!
//! Layout under the registry root:
//!
//! ```text
//! index.csv
//! <sapling_id>/<session_id>/{cloud.ply, skel.txt, leaf.ply, wood.ply, report.txt, profile.csv}
//! ```
//!
//! `index.csv` has one row per record. Records are never rewritten: a
//! re-processed session is stored under a suffixed session id
//! ([`Registry::free_session_id`]). Writes must come from a single writer.

use std::cmp::Ordering;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::ingest::{save_ply, write_text, PlyFormat};
use crate::leafwood::Segmentation;
use crate::model::{PointCloud, SkeletonGraph, Vec3};
use crate::skeleton::save_skeleton;
use crate::traits::{trapezoid, LeafProfile, TraitReport, PROFILE_BINS};

pub const INDEX_FILE: &str = "index.csv";
pub const INDEX_HEADER: [&str; 11] =
    ["sapling_id", "session_id", "date", "lat", "lon", "x", "y", "z", "height_m", "bifurcations", "lwr"];
const DATE_FORMAT: &str = "%Y-%m-%d";

/// Files stored for every record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Artifact {
    Cloud,
    Skeleton,
    Leaf,
    Wood,
    Report,
    /// Absent when no point was classified as leaf.
    Profile,
}

impl Artifact {
    pub const REQUIRED: [Artifact; 5] = [Artifact::Cloud, Artifact::Skeleton, Artifact::Leaf, Artifact::Wood, Artifact::Report];

    pub fn file_name(self) -> &'static str {
        match self {
            Artifact::Cloud => "cloud.ply",
            Artifact::Skeleton => "skel.txt",
            Artifact::Leaf => "leaf.ply",
            Artifact::Wood => "wood.ply",
            Artifact::Report => "report.txt",
            Artifact::Profile => "profile.csv",
        }
    }
}

/// One sapling observed in one session.
#[derive(Debug, Clone, PartialEq)]
pub struct SaplingRecord {
    pub sapling_id: String,
    pub session_id: String,
    pub date: NaiveDate,
    pub lat: f64,
    pub lon: f64,
    /// Position in the reference map frame.
    pub map_position: Vec3,
    pub height: f64,
    pub bifurcations: usize,
    pub lwr: f64,
}

impl SaplingRecord {
    pub fn from_report(report: &TraitReport, date: NaiveDate) -> SaplingRecord {
        SaplingRecord {
            sapling_id: report.sapling_id.clone(),
            session_id: report.session_id.clone(),
            date,
            lat: report.lat,
            lon: report.lon,
            map_position: report.position,
            height: report.height,
            bifurcations: report.bifurcations,
            lwr: report.lwr,
        }
    }

    /// Directory of this record relative to the registry root.
    pub fn relative_dir(&self) -> PathBuf {
        Path::new(&self.sapling_id).join(&self.session_id)
    }

    fn key(&self) -> (&str, &str) {
        (&self.sapling_id, &self.session_id)
    }

    fn order(a: &SaplingRecord, b: &SaplingRecord) -> Ordering {
        a.sapling_id
            .cmp(&b.sapling_id)
            .then(a.date.cmp(&b.date))
            .then(a.session_id.cmp(&b.session_id))
    }
}

/// Ids become directory names, so they must be plain path components.
fn check_id(kind: &str, id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id != "."
        && id != ".."
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::Invalid(format!("{kind} `{id}` must be non-empty and use only [A-Za-z0-9._-]")))
    }
}

/// Records plus the directory they live in.
#[derive(Debug, Clone, PartialEq)]
pub struct Registry {
    root: PathBuf,
    /// Sorted by sapling, date, session.
    records: Vec<SaplingRecord>,
}

impl Registry {
    /// An empty registry rooted at `root`; nothing is written until a record
    /// is added or [`Registry::save`] is called.
    pub fn new(root: impl Into<PathBuf>) -> Registry {
        Registry { root: root.into(), records: Vec::new() }
    }

    /// Loads `root/index.csv`.
    pub fn load(root: impl Into<PathBuf>) -> Result<Registry> {
        let root = root.into();
        let path = root.join(INDEX_FILE);
        let bytes = crate::ingest::read_file(&path)?;
        let records = parse_index(&bytes).map_err(|e| e.in_file(&path))?;
        Ok(Registry { root, records })
    }

    /// Loads the registry when `root/index.csv` exists, else starts empty.
    pub fn open(root: impl Into<PathBuf>) -> Result<Registry> {
        let root = root.into();
        if root.join(INDEX_FILE).exists() {
            Registry::load(root)
        } else {
            Ok(Registry::new(root))
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn records(&self) -> &[SaplingRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, sapling_id: &str, session_id: &str) -> Option<&SaplingRecord> {
        self.records.iter().find(|r| r.key() == (sapling_id, session_id))
    }

    fn require(&self, sapling_id: &str, session_id: &str) -> Result<&SaplingRecord> {
        self.get(sapling_id, session_id).ok_or_else(|| Error::MissingRecord {
            sapling_id: sapling_id.to_string(),
            session_id: session_id.to_string(),
        })
    }

    /// Every record of one sapling, oldest first.
    pub fn by_sapling(&self, sapling_id: &str) -> Vec<&SaplingRecord> {
        self.records.iter().filter(|r| r.sapling_id == sapling_id).collect()
    }

    /// Distinct sapling ids, ascending.
    pub fn sapling_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.records.iter().map(|r| r.sapling_id.as_str()).collect();
        ids.dedup();
        ids
    }

    pub fn artifact_path(&self, record: &SaplingRecord, artifact: Artifact) -> PathBuf {
        self.root.join(record.relative_dir()).join(artifact.file_name())
    }

    /// `base` when unused for this sapling, else the first free `base-rN`
    /// with N ≥ 2.
    pub fn free_session_id(&self, sapling_id: &str, base: &str) -> String {
        if self.get(sapling_id, base).is_none() {
            return base.to_string();
        }
        (2..)
            .map(|n| format!("{base}-r{n}"))
            .find(|s| self.get(sapling_id, s).is_none())
            .expect("unbounded suffixes")
    }

    /// Adds a record whose artifacts are already in place and rewrites the
    /// index.
    pub fn add_record(&mut self, record: SaplingRecord) -> Result<()> {
        check_id("sapling id", &record.sapling_id)?;
        check_id("session id", &record.session_id)?;
        if self.get(&record.sapling_id, &record.session_id).is_some() {
            return Err(Error::DuplicateRecord {
                sapling_id: record.sapling_id,
                session_id: record.session_id,
            });
        }
        for artifact in Artifact::REQUIRED {
            let path = self.artifact_path(&record, artifact);
            if !path.is_file() {
                return Err(Error::MissingArtifact(path));
            }
        }
        let at = self.records.partition_point(|r| SaplingRecord::order(r, &record) == Ordering::Less);
        self.records.insert(at, record);
        self.save()
    }

    /// Writes every artifact of one processed sapling into its record
    /// directory, then adds the record.
    pub fn store(
        &mut self,
        report: &TraitReport,
        date: NaiveDate,
        cloud: &PointCloud,
        skeleton: &SkeletonGraph,
        segmentation: &Segmentation,
    ) -> Result<SaplingRecord> {
        let record = SaplingRecord::from_report(report, date);
        check_id("sapling id", &record.sapling_id)?;
        check_id("session id", &record.session_id)?;
        if self.get(&record.sapling_id, &record.session_id).is_some() {
            return Err(Error::DuplicateRecord {
                sapling_id: record.sapling_id,
                session_id: record.session_id,
            });
        }
        let dir = self.root.join(record.relative_dir());
        std::fs::create_dir_all(&dir).map_err(|e| Error::from(e).in_file(&dir))?;
        save_ply(dir.join(Artifact::Cloud.file_name()), cloud, PlyFormat::BinaryLittleEndian)?;
        save_skeleton(dir.join(Artifact::Skeleton.file_name()), skeleton)?;
        save_ply(dir.join(Artifact::Leaf.file_name()), &segmentation.leaf, PlyFormat::BinaryLittleEndian)?;
        save_ply(dir.join(Artifact::Wood.file_name()), &segmentation.wood, PlyFormat::BinaryLittleEndian)?;
        report.save(&dir)?;
        self.add_record(record.clone())?;
        Ok(record)
    }

    /// Writes `index.csv` through a temporary file and a rename.
    pub fn save(&self) -> Result<()> {
        std::fs::create_dir_all(&self.root).map_err(|e| Error::from(e).in_file(&self.root))?;
        let path = self.root.join(INDEX_FILE);
        let tmp = self.root.join(format!("{INDEX_FILE}.tmp"));
        write_text(&tmp, &write_index(&self.records)?)?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::from(e).in_file(&path))
    }

    pub fn load_report(&self, record: &SaplingRecord) -> Result<TraitReport> {
        TraitReport::load(self.root.join(record.relative_dir()))
    }

    /// Change of one sapling from `session_a` to `session_b` (b − a).
    pub fn change_report(&self, sapling_id: &str, session_a: &str, session_b: &str) -> Result<ChangeReport> {
        let a = self.require(sapling_id, session_a)?;
        let b = self.require(sapling_id, session_b)?;
        let pa = self.load_report(a)?.leaf_profile;
        let pb = self.load_report(b)?.leaf_profile;
        Ok(ChangeReport::between(a, b, pa.as_ref(), pb.as_ref()))
    }
}

pub fn write_index(records: &[SaplingRecord]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(INDEX_HEADER)?;
    for r in records {
        w.write_record([
            r.sapling_id.clone(),
            r.session_id.clone(),
            r.date.format(DATE_FORMAT).to_string(),
            r.lat.to_string(),
            r.lon.to_string(),
            r.map_position.x.to_string(),
            r.map_position.y.to_string(),
            r.map_position.z.to_string(),
            r.height.to_string(),
            r.bifurcations.to_string(),
            r.lwr.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
}

/// Parses `index.csv`; errors carry the 1-based file row.
pub fn parse_index(bytes: &[u8]) -> Result<Vec<SaplingRecord>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != INDEX_HEADER {
        return Err(Error::row(1, format!("index header must be `{}`", INDEX_HEADER.join(","))));
    }
    let mut records: Vec<SaplingRecord> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::row(row, e.to_string()))?;
        if rec.len() != INDEX_HEADER.len() {
            return Err(Error::row(row, format!("expected {} fields, found {}", INDEX_HEADER.len(), rec.len())));
        }
        let field = |k: usize| rec.get(k).expect("length checked");
        let num = |k: usize| -> Result<f64> {
            let v: f64 = field(k)
                .parse()
                .map_err(|_| Error::row(row, format!("{} `{}` is not a number", INDEX_HEADER[k], field(k))))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::row(row, format!("{} must be finite", INDEX_HEADER[k])))
            }
        };
        let date = NaiveDate::parse_from_str(field(2), DATE_FORMAT)
            .map_err(|e| Error::row(row, format!("date `{}`: {e}", field(2))))?;
        let bifurcations = field(9)
            .parse()
            .map_err(|_| Error::row(row, format!("bifurcations `{}` is not a count", field(9))))?;
        let record = SaplingRecord {
            sapling_id: field(0).to_string(),
            session_id: field(1).to_string(),
            date,
            lat: num(3)?,
            lon: num(4)?,
            map_position: Vec3::new(num(5)?, num(6)?, num(7)?),
            height: num(8)?,
            bifurcations,
            lwr: num(10)?,
        };
        check_id("sapling id", &record.sapling_id).map_err(|e| Error::row(row, e.to_string()))?;
        check_id("session id", &record.session_id).map_err(|e| Error::row(row, e.to_string()))?;
        if records.iter().any(|r| r.key() == record.key()) {
            return Err(Error::row(row, format!("duplicate record ({}, {})", record.sapling_id, record.session_id)));
        }
        records.push(record);
    }
    records.sort_by(SaplingRecord::order);
    Ok(records)
}

/// Differences of one sapling between two sessions, always `b − a`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangeReport {
    pub sapling_id: String,
    pub session_a: String,
    pub session_b: String,
    pub d_height: f64,
    pub d_bifurcations: i64,
    pub d_lwr: f64,
    /// `d_lwr / lwr_a`; `None` when session a has no leaf points.
    pub relative_lwr: Option<f64>,
    /// L1 distance in `[0, 2]` between the two normalised leaf profiles.
    pub profile_distance: f64,
    /// Distance between the two map positions (metres).
    pub position_drift: f64,
}

impl ChangeReport {
    pub fn between(a: &SaplingRecord, b: &SaplingRecord, pa: Option<&LeafProfile>, pb: Option<&LeafProfile>) -> ChangeReport {
        let d_lwr = b.lwr - a.lwr;
        ChangeReport {
            sapling_id: a.sapling_id.clone(),
            session_a: a.session_id.clone(),
            session_b: b.session_id.clone(),
            d_height: b.height - a.height,
            d_bifurcations: b.bifurcations as i64 - a.bifurcations as i64,
            d_lwr,
            relative_lwr: (a.lwr > 0.0).then(|| d_lwr / a.lwr),
            profile_distance: profile_distance(pa, pb),
            position_drift: (b.map_position - a.map_position).norm(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut kv = crate::kv::KeyValues::new();
        kv.push("sapling_id", &self.sapling_id);
        kv.push("session_a", &self.session_a);
        kv.push("session_b", &self.session_b);
        kv.push("d_height_m", self.d_height);
        kv.push("d_bifurcations", self.d_bifurcations);
        kv.push("d_lwr", self.d_lwr);
        match self.relative_lwr {
            Some(r) => kv.push("relative_lwr", r),
            None => kv.push("relative_lwr", "none"),
        }
        kv.push("profile_distance", self.profile_distance);
        kv.push("position_drift_m", self.position_drift);
        kv.to_text(':')
    }
}

/// L1 distance between two leaf profiles after resampling both onto a
/// common `PROFILE_BINS` grid over the union of their height ranges and
/// renormalising. Two missing profiles are identical; one missing profile
/// is maximally distant.
pub fn profile_distance(a: Option<&LeafProfile>, b: Option<&LeafProfile>) -> f64 {
    let (a, b) = match (a, b) {
        (None, None) => return 0.0,
        (Some(_), None) | (None, Some(_)) => return 2.0,
        (Some(a), Some(b)) => (a, b),
    };
    if a == b {
        return 0.0;
    }
    let lo = a.heights[0].min(b.heights[0]);
    let hi = a.heights[a.heights.len() - 1].max(b.heights[b.heights.len() - 1]);
    let grid: Vec<f64> = (0..PROFILE_BINS)
        .map(|i| lo + (hi - lo) * i as f64 / (PROFILE_BINS - 1) as f64)
        .collect();
    let resample = |p: &LeafProfile| -> Option<Vec<f64>> {
        let d: Vec<f64> = grid.iter().map(|&z| p.sample(z)).collect();
        let area = trapezoid(&grid, &d);
        (area > 0.0).then(|| d.iter().map(|v| v / area).collect())
    };
    match (resample(a), resample(b)) {
        (Some(da), Some(db)) => {
            let diff: Vec<f64> = da.iter().zip(&db).map(|(x, y)| (x - y).abs()).collect();
            trapezoid(&grid, &diff).clamp(0.0, 2.0)
        }
        // A spike narrower than the common grid spacing vanishes on it.
        (None, None) => 0.0,
        _ => 2.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Rgb;
    use crate::traits::leaf_profile;
    use proptest::prelude::*;

    fn date(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, DATE_FORMAT).unwrap()
    }

    fn record(sap: &str, sess: &str, d: &str, h: f64) -> SaplingRecord {
        SaplingRecord {
            sapling_id: sap.into(),
            session_id: sess.into(),
            date: date(d),
            lat: 47.0 + h / 1e4,
            lon: 8.0,
            map_position: Vec3::new(h, 2.0 * h, 0.1),
            height: h,
            bifurcations: 4,
            lwr: 1.5,
        }
    }

    fn touch_artifacts(root: &Path, r: &SaplingRecord) {
        let dir = root.join(r.relative_dir());
        std::fs::create_dir_all(&dir).unwrap();
        for a in Artifact::REQUIRED {
            std::fs::write(dir.join(a.file_name()), b"x").unwrap();
        }
    }

    #[test]
    fn add_and_reject_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let mut reg = Registry::new(dir.path());
        let r = record("S01", "jul", "2024-07-01", 0.9);
        touch_artifacts(dir.path(), &r);
        reg.add_record(r.clone()).unwrap();
        assert_eq!(reg.len(), 1);
        assert!(matches!(reg.add_record(r), Err(Error::DuplicateRecord { .. })));
        assert_eq!(Registry::load(dir.path()).unwrap(), reg);
    }

    #[test]
    fn missing_artifact_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut reg = Registry::new(dir.path());
        let r = record("S01", "jul", "2024-07-01", 0.9);
        touch_artifacts(dir.path(), &r);
        std::fs::remove_file(reg.artifact_path(&r, Artifact::Wood)).unwrap();
        assert!(matches!(reg.add_record(r), Err(Error::MissingArtifact(_))));
        assert!(reg.is_empty());
    }

    #[test]
    fn lookup_sorted_by_date() {
        let dir = tempfile::tempdir().unwrap();
        let mut reg = Registry::new(dir.path());
        let dates = [("c", "2024-12-01"), ("a", "2024-07-01"), ("b", "2024-08-01")];
        for sap in ["S1", "S2", "S3", "S4", "S5"] {
            for (sess, d) in dates {
                let r = record(sap, sess, d, 1.0);
                touch_artifacts(dir.path(), &r);
                reg.add_record(r).unwrap();
            }
        }
        assert_eq!(reg.len(), 15);
        let s3: Vec<&str> = reg.by_sapling("S3").iter().map(|r| r.session_id.as_str()).collect();
        assert_eq!(s3, ["a", "b", "c"]);
        assert_eq!(reg.sapling_ids(), ["S1", "S2", "S3", "S4", "S5"]);
    }

    #[test]
    fn index_roundtrip_is_lossless() {
        let records = vec![
            record("S01", "a", "2024-07-01", 0.1 + 0.2),
            record("S02", "a", "2024-07-01", 1.0 / 3.0),
        ];
        let text = write_index(&records).unwrap();
        assert!(text.starts_with("sapling_id,session_id,date,lat,lon,x,y,z,height_m,bifurcations,lwr\n"));
        assert_eq!(parse_index(text.as_bytes()).unwrap(), records);
    }

    #[test]
    fn bad_date_reports_its_row() {
        let text = "sapling_id,session_id,date,lat,lon,x,y,z,height_m,bifurcations,lwr\n\
                    S1,a,2024-07-01,47,8,0,0,0,1,2,0.5\n\
                    S1,b,2024-13-45,47,8,0,0,0,1,2,0.5\n";
        match parse_index(text.as_bytes()) {
            Err(Error::Row { row: 3, message }) => assert!(message.contains("date")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn free_session_suffixes() {
        let dir = tempfile::tempdir().unwrap();
        let mut reg = Registry::new(dir.path());
        assert_eq!(reg.free_session_id("S1", "jul"), "jul");
        let r = record("S1", "jul", "2024-07-01", 1.0);
        touch_artifacts(dir.path(), &r);
        reg.add_record(r).unwrap();
        assert_eq!(reg.free_session_id("S1", "jul"), "jul-r2");
    }

    #[test]
    fn ids_must_be_path_components() {
        let mut reg = Registry::new("/nonexistent");
        assert!(matches!(reg.add_record(record("../x", "a", "2024-01-01", 1.0)), Err(Error::Invalid(_))));
    }

    fn profile(centre: f64, spread: f64) -> LeafProfile {
        let pts = (0..400)
            .map(|i| Vec3::new(0.0, 0.0, centre + spread * ((i as f64 * 0.618).fract() - 0.5)))
            .collect();
        leaf_profile(&PointCloud::new(pts, None, "M1").unwrap()).unwrap()
    }

    #[test]
    fn profile_distance_bounds() {
        let p = profile(1.0, 0.4);
        assert_eq!(profile_distance(Some(&p), Some(&p)), 0.0);
        let far = profile(5.0, 0.4);
        let d = profile_distance(Some(&p), Some(&far));
        assert!(d > 1.99 && d <= 2.0, "{d}");
        assert_eq!(profile_distance(Some(&p), None), 2.0);
        assert_eq!(profile_distance(None, None), 0.0);
    }

    #[test]
    fn change_report_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let mut reg = Registry::new(dir.path());
        let pts: Vec<Vec3> = (0..100).map(|i| Vec3::new(0.0, 0.0, i as f64 / 100.0)).collect();
        let cloud = PointCloud::new(pts.clone(), Some(vec![[1, 2, 3] as Rgb; 100]), "M1").unwrap();
        let seg = Segmentation {
            leaf: cloud.select(&(60..100).collect::<Vec<_>>()),
            wood: cloud.select(&(0..60).collect::<Vec<_>>()),
            leaf_indices: (60..100).collect(),
            wood_indices: (0..60).collect(),
            no_terminals: false,
        };
        let skel = SkeletonGraph::tree(vec![Vec3::zeros(), Vec3::new(0.0, 0.0, 1.0)], vec![(0, 1)], 0).unwrap();
        let report = |sess: &str, h: f64, bif: usize, lwr: f64, p: Option<LeafProfile>| TraitReport {
            sapling_id: "S1".into(),
            session_id: sess.into(),
            height: h,
            bifurcations: bif,
            lwr,
            n_leaf: 40,
            n_wood: 60,
            leaf_profile: p,
            position: Vec3::new(1.0, 2.0, 0.0),
            lat: 47.0,
            lon: 8.0,
        };
        reg.store(&report("a", 0.9, 5, 1.2, Some(profile(0.7, 0.3))), date("2024-07-01"), &cloud, &skel, &seg)
            .unwrap();
        reg.store(&report("b", 0.91, 4, 0.3, Some(profile(0.8, 0.3))), date("2024-12-01"), &cloud, &skel, &seg)
            .unwrap();
        let zero = reg.change_report("S1", "a", "a").unwrap();
        assert_eq!((zero.d_height, zero.d_bifurcations, zero.d_lwr, zero.profile_distance), (0.0, 0, 0.0, 0.0));
        let ab = reg.change_report("S1", "a", "b").unwrap();
        let ba = reg.change_report("S1", "b", "a").unwrap();
        assert!((ab.d_height - 0.01).abs() < 1e-12);
        assert_eq!(ab.d_bifurcations, -1);
        assert!((ab.relative_lwr.unwrap() + 0.75).abs() < 1e-12);
        assert_eq!(ab.d_height, -ba.d_height);
        assert_eq!(ab.d_lwr, -ba.d_lwr);
        assert_eq!(ab.profile_distance, ba.profile_distance);
        assert!(ab.profile_distance > 0.0);
        assert!(matches!(reg.change_report("S1", "a", "zzz"), Err(Error::MissingRecord { .. })));
        let stored = crate::ingest::read_ply(reg.artifact_path(reg.get("S1", "a").unwrap(), Artifact::Cloud)).unwrap();
        assert_eq!(stored, cloud);
    }

    #[test]
    fn hundred_records_load_quickly() {
        let dir = tempfile::tempdir().unwrap();
        let records: Vec<SaplingRecord> =
            (0..100).map(|i| record(&format!("S{i:03}"), "a", "2024-07-01", i as f64 * 0.01)).collect();
        write_text(&dir.path().join(INDEX_FILE), &write_index(&records).unwrap()).unwrap();
        let start = std::time::Instant::now();
        let reg = Registry::load(dir.path()).unwrap();
        assert!(start.elapsed().as_millis() < 100);
        assert_eq!(reg.len(), 100);
    }

    proptest! {
        #[test]
        fn change_report_antisymmetry(
            ha in 0.1..3.0f64, hb in 0.1..3.0f64, ba in 0usize..50, bb in 0usize..50,
            la in 0.0..5.0f64, lb in 0.0..5.0f64, ca in 0.0..2.0f64, cb in 0.0..2.0f64,
        ) {
            let mut a = record("S", "a", "2024-07-01", ha);
            let mut b = record("S", "b", "2024-08-01", hb);
            (a.bifurcations, b.bifurcations, a.lwr, b.lwr) = (ba, bb, la, lb);
            let (pa, pb) = (profile(ca, 0.5), profile(cb, 0.3));
            let ab = ChangeReport::between(&a, &b, Some(&pa), Some(&pb));
            let ba_ = ChangeReport::between(&b, &a, Some(&pb), Some(&pa));
            prop_assert_eq!(ab.d_height, -ba_.d_height);
            prop_assert_eq!(ab.d_bifurcations, -ba_.d_bifurcations);
            prop_assert_eq!(ab.d_lwr, -ba_.d_lwr);
            prop_assert!((ab.profile_distance - ba_.profile_distance).abs() < 1e-12);
            prop_assert!((0.0..=2.0).contains(&ab.profile_distance));
            prop_assert!(ab.position_drift >= 0.0);
            let aa = ChangeReport::between(&a, &a, Some(&pa), Some(&pa));
            prop_assert_eq!((aa.d_height, aa.d_bifurcations, aa.d_lwr, aa.profile_distance, aa.position_drift), (0.0, 0, 0.0, 0.0, 0.0));
        }
    }
}
