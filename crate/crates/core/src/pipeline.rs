//! Manifest-driven end-to-end processing of one capture session.
//!
//! Per session: fit the map → Earth transform from SLAM and GNSS, then for
//! each manifest row register the SfM reconstruction into the map frame,
//! skeletonise a downsampled copy for topology and height, skeletonise the
//! full cloud for leaf/wood segmentation, compute traits and store the
//! record. Saplings are processed on a worker pool; a failing sapling is
//! reported and the others continue. Registry writes happen on the calling
//! thread in manifest order.

use std::fmt;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::georef::{associate, fit_earth_transform, AssociationOptions, EarthTransform};
use crate::ingest::{read_gnss, read_ply, read_text, read_trajectory, write_text, write_trajectory};
use crate::kv::KeyValues;
use crate::leafwood::{segment_leaf_wood, segment_with_assignment, LeafWoodParams, Segmentation};
use crate::model::{PointCloud, SkeletonGraph};
use crate::registry::{Registry, SaplingRecord};
use crate::sfmalign::{
    extract_subtrajectory, parse_manifest, register_sfm, transform_cloud, ManifestRow, RegistrationResult,
    DEFAULT_MAX_GAP,
};
use crate::skeleton::{skeletonize, ContractionParams, Extraction, TopologyParams};
use crate::synth::sfm_frame;
use crate::traits::{compute_traits, TraitParams, TraitReport};

/// Frame of the session SLAM trajectory; every session shares it.
pub const MAP_FRAME: &str = crate::synth::MAP_FRAME;

/// Voxel size, contraction and topology parameters of one skeletonisation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkeletonSettings {
    pub voxel: Option<f64>,
    pub contraction: ContractionParams,
    pub topology: TopologyParams,
}

impl SkeletonSettings {
    /// Downsampled and pruned: topology and bifurcations.
    pub fn topology() -> SkeletonSettings {
        SkeletonSettings {
            voxel: Some(0.005),
            contraction: ContractionParams::default(),
            topology: TopologyParams::default(),
        }
    }

    /// Full resolution, fine sampling and no pruning: leaf clusters break
    /// into many terminal branches.
    pub fn over_skeleton() -> SkeletonSettings {
        SkeletonSettings {
            voxel: None,
            contraction: ContractionParams::default(),
            topology: TopologyParams {
                sample_radius_fraction: 0.007,
                min_branch_length_factor: 0.0,
            },
        }
    }

    /// Sets `voxel` (a size or `none`) or any contraction or topology
    /// parameter; returns `false` for an unknown key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        if key == "voxel" {
            self.voxel = match value {
                "none" | "" => None,
                v => Some(v.parse().map_err(|e| Error::Config(format!("`voxel`: {e}")))?),
            };
            return Ok(true);
        }
        Ok(self.contraction.set(key, value)? || self.topology.set(key, value)?)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(v) = self.voxel {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("voxel must be positive, got {v}")));
            }
        }
        self.contraction.validate()?;
        self.topology.validate()
    }

    /// Whether the extraction's per-point assignment refers to the input
    /// cloud and to the returned skeleton.
    pub fn keeps_assignment(&self) -> bool {
        self.voxel.is_none() && self.topology.min_branch_length_factor == 0.0
    }

    pub fn run(&self, cloud: &PointCloud) -> Result<(SkeletonGraph, Extraction)> {
        skeletonize(cloud, self.voxel, &self.contraction, &self.topology)
    }
}

/// Segments `cloud` on its over-skeleton. Points follow their contracted
/// position to a vertex when the settings keep the assignment, else the
/// nearest skeleton vertex.
pub fn segment_cloud(
    cloud: &PointCloud,
    settings: &SkeletonSettings,
    params: &LeafWoodParams,
) -> Result<(SkeletonGraph, Segmentation)> {
    let (pruned, extraction) = settings.run(cloud)?;
    if settings.keeps_assignment() {
        let seg = segment_with_assignment(cloud, &extraction.graph, &extraction.assignment, params)?;
        Ok((extraction.graph, seg))
    } else {
        let seg = segment_leaf_wood(cloud, &pruned, params)?;
        Ok((pruned, seg))
    }
}

/// Per-point skeleton vertex as text: one index per line, `-` for none.
pub fn write_assignment(assignment: &[Option<usize>]) -> String {
    let mut out = String::with_capacity(assignment.len() * 4);
    for a in assignment {
        match a {
            Some(v) => out.push_str(&v.to_string()),
            None => out.push('-'),
        }
        out.push('\n');
    }
    out
}

pub fn parse_assignment(text: &str) -> Result<Vec<Option<usize>>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| match l.trim() {
            "-" => Ok(None),
            v => v.parse().map(Some).map_err(|_| Error::parse(i + 1, format!("bad vertex index `{v}`"))),
        })
        .collect()
}

/// Everything `pipeline run` needs; paths are absolute after loading.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub slam: PathBuf,
    pub gnss: PathBuf,
    pub manifest: PathBuf,
    /// Registry root.
    pub out: PathBuf,
    pub date: NaiveDate,
    pub association: AssociationOptions,
    /// Added to every GNSS timestamp before association (seconds).
    pub time_offset: f64,
    pub register_max_gap: f64,
    pub skeleton: SkeletonSettings,
    pub over_skeleton: SkeletonSettings,
    pub leafwood: LeafWoodParams,
    pub traits: TraitParams,
}

impl PipelineConfig {
    pub fn new(slam: PathBuf, gnss: PathBuf, manifest: PathBuf, out: PathBuf, date: NaiveDate) -> PipelineConfig {
        PipelineConfig {
            slam,
            gnss,
            manifest,
            out,
            date,
            association: AssociationOptions::default(),
            time_offset: 0.0,
            register_max_gap: DEFAULT_MAX_GAP,
            skeleton: SkeletonSettings::topology(),
            over_skeleton: SkeletonSettings::over_skeleton(),
            leafwood: LeafWoodParams::default(),
            traits: TraitParams::default(),
        }
    }

    /// Parses a flat `key=value` file. Paths are resolved against `base`.
    ///
    /// Required: `slam`, `gnss`, `manifest`, `out`, `date` (YYYY-MM-DD).
    /// Optional: `georef.u`, `georef.max_gap`, `georef.time_offset`,
    /// `register.max_gap`, `skeleton.<key>`, `over.<key>` (see
    /// [`SkeletonSettings::set`]), `leafwood.<key>`, `traits.<key>`.
    /// Unknown keys are rejected.
    pub fn parse(text: &str, base: &Path) -> Result<PipelineConfig> {
        let kv = KeyValues::parse(text, '=')?;
        let path = |key: &str| -> Result<PathBuf> { Ok(base.join(kv.require(key)?)) };
        let date_text = kv.require("date")?;
        let date = NaiveDate::parse_from_str(date_text, "%Y-%m-%d")
            .map_err(|e| Error::Config(format!("date `{date_text}`: {e}")))?;
        let mut cfg = PipelineConfig::new(path("slam")?, path("gnss")?, path("manifest")?, path("out")?, date);
        for key in kv.keys() {
            let value = kv.require(key)?;
            let bad = |e: &dyn fmt::Display| Error::Config(format!("`{key}`: {e}"));
            let known = match key.split_once('.') {
                None => matches!(key, "slam" | "gnss" | "manifest" | "out" | "date"),
                Some(("georef", "u")) => {
                    cfg.association.first_u = match value {
                        "all" => None,
                        v => Some(v.parse().map_err(|e| bad(&e))?),
                    };
                    true
                }
                Some(("georef", "max_gap")) => {
                    cfg.association.max_gap = value.parse().map_err(|e| bad(&e))?;
                    true
                }
                Some(("georef", "time_offset")) => {
                    cfg.time_offset = value.parse().map_err(|e| bad(&e))?;
                    true
                }
                Some(("register", "max_gap")) => {
                    cfg.register_max_gap = value.parse().map_err(|e| bad(&e))?;
                    true
                }
                Some(("skeleton", k)) => cfg.skeleton.set(k, value)?,
                Some(("over", k)) => cfg.over_skeleton.set(k, value)?,
                Some(("leafwood", k)) => cfg.leafwood.set(k, value)?,
                Some(("traits", k)) => cfg.traits.set(k, value)?,
                Some(_) => false,
            };
            if !known {
                return Err(Error::Config(format!("unknown key `{key}`")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; relative paths are taken from its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<PipelineConfig> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new("."));
        PipelineConfig::parse(&read_text(path)?, base).map_err(|e| e.in_file(path))
    }

    pub fn validate(&self) -> Result<()> {
        for (key, p) in [("slam", &self.slam), ("gnss", &self.gnss), ("manifest", &self.manifest)] {
            if !p.is_file() {
                return Err(Error::Config(format!("`{key}` file {} does not exist", p.display())));
            }
        }
        for (name, v) in [("georef.max_gap", self.association.max_gap), ("register.max_gap", self.register_max_gap)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !self.time_offset.is_finite() {
            return Err(Error::Config("georef.time_offset must be finite".into()));
        }
        self.skeleton.validate()?;
        self.over_skeleton.validate()?;
        self.leafwood.validate()
    }
}

/// Where in the per-sapling chain a failure happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Register,
    Skeletonize,
    Segment,
    Traits,
    Store,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Register => "register",
            Stage::Skeletonize => "skeletonize",
            Stage::Segment => "segment",
            Stage::Traits => "traits",
            Stage::Store => "store",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaplingFailure {
    pub sapling_id: String,
    pub session_id: String,
    pub stage: Stage,
    pub message: String,
}

impl fmt::Display for SaplingFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "sapling={} session={} stage={} error={}", self.sapling_id, self.session_id, self.stage, self.message)
    }
}

/// Outcome of [`run_pipeline`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub earth: EarthTransform,
    /// Stored records in manifest order.
    pub records: Vec<SaplingRecord>,
    pub failures: Vec<SaplingFailure>,
}

impl RunSummary {
    pub fn succeeded(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Every product of one processed sapling.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedSapling {
    pub registration: RegistrationResult,
    /// Registered cloud in the map frame.
    pub cloud: PointCloud,
    /// Pruned skeleton of the downsampled cloud.
    pub skeleton: SkeletonGraph,
    pub segmentation: Segmentation,
    pub report: TraitReport,
}

/// Runs the per-sapling chain for one manifest row (paths already resolved).
pub fn process_sapling(
    row: &ManifestRow,
    slam: &crate::model::Trajectory,
    earth: &EarthTransform,
    config: &PipelineConfig,
) -> std::result::Result<ProcessedSapling, (Stage, Error)> {
    let frame = sfm_frame(&row.session_id, &row.sapling_id);
    let at = |stage: Stage| move |e: Error| (stage, e);
    let registration = (|| {
        let sub = extract_subtrajectory(slam, row.t_start, row.t_end, &row.sapling_id, &row.session_id)?;
        let sfm = read_trajectory(&row.sfm_traj_path, &frame)?;
        register_sfm(&sfm, &sub, config.register_max_gap)
    })()
    .map_err(at(Stage::Register))?;
    let cloud = read_ply(&row.cloud_path)
        .map(|c| c.with_frame(frame.clone()))
        .and_then(|c| transform_cloud(&c, &registration.transform))
        .map_err(at(Stage::Register))?;
    let (skeleton, _) = config.skeleton.run(&cloud).map_err(at(Stage::Skeletonize))?;
    let (_, segmentation) =
        segment_cloud(&cloud, &config.over_skeleton, &config.leafwood).map_err(at(Stage::Segment))?;
    let report = compute_traits(
        &cloud,
        &skeleton,
        &segmentation,
        earth,
        &row.sapling_id,
        &row.session_id,
        &config.traits,
    )
    .map_err(at(Stage::Traits))?;
    Ok(ProcessedSapling { registration, cloud, skeleton, segmentation, report })
}

/// Runs one session end to end with `jobs` workers (at least 1).
///
/// Errors before the per-sapling stage (unreadable inputs, a failed Earth
/// fit) abort the run; per-sapling errors are collected in the summary.
pub fn run_pipeline(config: &PipelineConfig, jobs: usize) -> Result<RunSummary> {
    config.validate()?;
    let slam = read_trajectory(&config.slam, MAP_FRAME)?;
    let track = read_gnss(&config.gnss)?.shifted(config.time_offset);
    let earth = fit_earth_transform(&associate(&slam, &track, config.association)?)?;
    let base = config.manifest.parent().unwrap_or(Path::new("."));
    let rows: Vec<ManifestRow> = parse_manifest(&crate::ingest::read_file(&config.manifest)?)
        .map_err(|e| e.in_file(&config.manifest))?
        .iter()
        .map(|r| r.resolved(base))
        .collect();
    let mut registry = Registry::open(&config.out)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let results: Vec<_> = pool.install(|| {
        rows.par_iter().map(|row| process_sapling(row, &slam, &earth, config)).collect()
    });

    let mut summary = RunSummary { earth, records: Vec::new(), failures: Vec::new() };
    for (row, result) in rows.iter().zip(results) {
        let fail = |stage: Stage, e: Error| SaplingFailure {
            sapling_id: row.sapling_id.clone(),
            session_id: row.session_id.clone(),
            stage,
            message: e.to_string(),
        };
        match result {
            Ok(done) => match store(&mut registry, done, config.date, &earth) {
                Ok(record) => summary.records.push(record),
                Err(e) => summary.failures.push(fail(Stage::Store, e)),
            },
            Err((stage, e)) => summary.failures.push(fail(stage, e)),
        }
    }
    Ok(summary)
}

/// Adds one processed sapling under a free session id and writes the
/// registration products next to it.
fn store(registry: &mut Registry, mut done: ProcessedSapling, date: NaiveDate, earth: &EarthTransform) -> Result<SaplingRecord> {
    done.report.session_id = registry.free_session_id(&done.report.sapling_id, &done.report.session_id);
    let record = registry.store(&done.report, date, &done.cloud, &done.skeleton, &done.segmentation)?;
    let dir = registry.root().join(record.relative_dir());
    write_text(&dir.join("registration.txt"), &done.registration.record().to_text())?;
    write_text(&dir.join("aligned.tum"), &write_trajectory(&done.registration.aligned))?;
    earth.save(dir.join("earth.txt"))?;
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::PlotSpec;

    #[test]
    fn config_parsing() {
        let dir = tempfile::tempdir().unwrap();
        for f in ["slam.tum", "gnss.csv", "manifest.csv"] {
            std::fs::write(dir.path().join(f), "").unwrap();
        }
        let text = "slam=slam.tum\ngnss=gnss.csv\nmanifest=manifest.csv\nout=reg\ndate=2024-07-01\n\
                    georef.u=50\nskeleton.voxel=0.01\nover.sample_radius_fraction=0.01\nleafwood.terminal_hops=2\n\
                    traits.height_mode=percentile\n";
        let cfg = PipelineConfig::parse(text, dir.path()).unwrap();
        assert_eq!(cfg.out, dir.path().join("reg"));
        assert_eq!(cfg.association.first_u, Some(50));
        assert_eq!(cfg.skeleton.voxel, Some(0.01));
        assert_eq!(cfg.over_skeleton.topology.sample_radius_fraction, 0.01);
        assert_eq!(cfg.leafwood.terminal_hops, 2);
        let unknown = format!("{text}skeleton.bogus=1\n");
        assert!(matches!(PipelineConfig::parse(&unknown, dir.path()), Err(Error::Config(_))));
        let missing = text.replace("slam=slam.tum", "slam=nope.tum");
        assert!(matches!(PipelineConfig::parse(&missing, dir.path()), Err(Error::Config(_))));
        assert!(PipelineConfig::parse("slam=slam.tum\n", dir.path()).is_err());
    }

    #[test]
    fn assignment_roundtrip() {
        let a = vec![Some(0), None, Some(12)];
        assert_eq!(parse_assignment(&write_assignment(&a)).unwrap(), a);
        assert!(matches!(parse_assignment("1\nx\n"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn missing_cloud_isolated() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = PlotSpec::noiseless(4, 2);
        for s in &mut spec.saplings {
            s.density = 4_000.0;
        }
        spec.generate().unwrap().write(dir.path()).unwrap();
        std::fs::remove_file(dir.path().join("S1/clouds/T01.ply")).unwrap();
        let cfg = PipelineConfig::load(dir.path().join("S1/run.cfg")).unwrap();
        let summary = run_pipeline(&cfg, 2).unwrap();
        assert_eq!(summary.records.len(), 1);
        assert_eq!(summary.records[0].sapling_id, "T02");
        assert_eq!(summary.failures.len(), 1);
        assert_eq!(summary.failures[0].sapling_id, "T01");
        assert_eq!(summary.failures[0].stage, Stage::Register);
        assert!(!summary.succeeded());
        let again = run_pipeline(&cfg, 1).unwrap();
        assert_eq!(again.records[0].session_id, "S1-r2");
    }
}
