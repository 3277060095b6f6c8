use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};

use sapling::georef::{associate, fit_earth_transform, AssociationOptions, EarthTransform};
use sapling::ingest::{read_gnss, read_ply, read_text, read_trajectory, save_ply, write_text, write_trajectory, PlyFormat};
use sapling::kv::KeyValues;
use sapling::leafwood::{leaf_wood_ratio, segment_leaf_wood, segment_with_assignment, LeafWoodParams, Segmentation};
use sapling::pipeline::{parse_assignment, run_pipeline, write_assignment, PipelineConfig, SkeletonSettings, MAP_FRAME};
use sapling::registry::{Artifact, Registry, SaplingRecord};
use sapling::sfmalign::{extract_subtrajectory, parse_manifest, register_sfm, transform_cloud, DEFAULT_MAX_GAP};
use sapling::skeleton::{count_bifurcations, load_skeleton, save_skeleton};
use sapling::synth::{parse_labels, sfm_frame, write_labels, PlotSpec, SaplingSpec};
use sapling::traits::{compute_traits, TraitParams, TraitReport};

#[derive(Parser)]
#[command(name = "sapling", version, about = "Geo-localised sapling reconstruction and trait extraction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Map → Earth transform estimation.
    #[command(subcommand)]
    Georef(GeorefCommand),
    /// Register per-sapling SfM reconstructions into the map frame.
    Register(RegisterArgs),
    /// Extract a curve skeleton from a point cloud.
    Skeletonize(SkeletonizeArgs),
    /// Split a cloud into leaf and wood points using its over-skeleton.
    Segment(SegmentArgs),
    /// Compute height, bifurcations, LWR and the leaf profile.
    Traits(TraitsArgs),
    /// Multi-session record store.
    #[command(subcommand)]
    Registry(RegistryCommand),
    /// Synthetic saplings and plots with ground truth.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Manifest-driven end-to-end processing.
    #[command(subcommand)]
    Pipeline(PipelineCommand),
}

#[derive(Subcommand)]
enum GeorefCommand {
    /// Fit the planar map → Earth transform from a SLAM trajectory and a GNSS log.
    Fit(GeorefFitArgs),
}

#[derive(Args)]
struct GeorefFitArgs {
    /// SLAM trajectory (TUM).
    #[arg(long)]
    traj: PathBuf,
    /// GNSS log (CSV `timestamp,lat,lon[,alt]`).
    #[arg(long)]
    gnss: PathBuf,
    /// Use only the first N fixes.
    #[arg(long)]
    u: Option<usize>,
    /// Maximum pose–fix time gap in seconds.
    #[arg(long, default_value_t = AssociationOptions::default().max_gap)]
    max_gap: f64,
    /// Seconds added to every GNSS timestamp.
    #[arg(long, default_value_t = 0.0)]
    time_offset: f64,
    /// Output file; the transform goes to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RegisterArgs {
    /// Manifest CSV `session_id,sapling_id,t_start,t_end,sfm_traj_path,cloud_path`.
    #[arg(long)]
    manifest: PathBuf,
    /// SLAM trajectory (TUM) in the map frame.
    #[arg(long)]
    slam: PathBuf,
    /// Receives `<session>/<sapling>/{aligned.tum, transform.txt, cloud.ply}`.
    #[arg(long)]
    out_dir: PathBuf,
    /// Maximum SfM–SLAM time gap in seconds.
    #[arg(long, default_value_t = DEFAULT_MAX_GAP)]
    max_gap: f64,
}

#[derive(Args)]
struct SkeletonizeArgs {
    #[arg(long)]
    cloud: PathBuf,
    /// Skeleton output file.
    #[arg(long)]
    out: PathBuf,
    /// Start from the over-skeleton settings (full resolution, no pruning).
    #[arg(long)]
    over: bool,
    /// `key=value` parameter file: `voxel` and any contraction or topology key.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Voxel size in metres, or `none`; overrides the preset and `--params`.
    #[arg(long)]
    voxel: Option<String>,
    /// Also write the per-point vertex assignment (requires no voxel and no pruning).
    #[arg(long)]
    assign: Option<PathBuf>,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    cloud: PathBuf,
    /// Over-skeleton of the same cloud.
    #[arg(long)]
    skel: PathBuf,
    /// Per-point assignment written by `skeletonize --assign`; nearest vertex when omitted.
    #[arg(long)]
    assign: Option<PathBuf>,
    /// `key=value` file with `terminal_hops`, `exclude_root_chain`, `radius`.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Leaf points (PLY).
    #[arg(long)]
    out_leaf: PathBuf,
    /// Wood points (PLY).
    #[arg(long)]
    out_wood: PathBuf,
    /// Per-point labels, one `leaf` or `wood` per line.
    #[arg(long)]
    out_labels: Option<PathBuf>,
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("split").required(true).args(["labels", "leaf"]))]
struct TraitsArgs {
    /// Registered cloud in the map frame.
    #[arg(long)]
    cloud: PathBuf,
    /// Pruned skeleton of the cloud.
    #[arg(long)]
    skel: PathBuf,
    /// Leaf points written by `segment`.
    #[arg(long, requires = "wood")]
    leaf: Option<PathBuf>,
    /// Wood points written by `segment`.
    #[arg(long, requires = "leaf")]
    wood: Option<PathBuf>,
    /// Per-point labels written by `segment --out-labels`, instead of `--leaf`/`--wood`.
    #[arg(long, conflicts_with_all = ["leaf", "wood"])]
    labels: Option<PathBuf>,
    /// Map → Earth transform written by `georef fit`.
    #[arg(long)]
    earth: PathBuf,
    /// Sapling id; the cloud's file stem when omitted.
    #[arg(long)]
    sapling: Option<String>,
    #[arg(long, default_value = "S1")]
    session: String,
    /// `height_mode=filtered|percentile`.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Receives `report.txt` and `profile.csv`.
    #[arg(long, visible_alias = "out-dir")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum RegistryCommand {
    /// Copy one processed sapling into the registry and index it.
    Add(RegistryAddArgs),
    /// Change report of one sapling between two sessions (b − a).
    Diff(RegistryDiffArgs),
    /// Print the index.
    List(RegistryRootArgs),
}

#[derive(Args)]
struct RegistryRootArgs {
    #[arg(long)]
    root: PathBuf,
}

#[derive(Args)]
struct RegistryAddArgs {
    #[arg(long)]
    root: PathBuf,
    /// Directory holding cloud.ply, skel.txt, leaf.ply, wood.ply, report.txt and optionally profile.csv.
    #[arg(long)]
    dir: PathBuf,
    /// Capture date, YYYY-MM-DD.
    #[arg(long)]
    date: String,
}

#[derive(Args)]
struct RegistryDiffArgs {
    #[arg(long)]
    root: PathBuf,
    #[arg(long)]
    sapling: String,
    #[arg(long)]
    a: String,
    #[arg(long)]
    b: String,
}

#[derive(Subcommand)]
enum SynthCommand {
    /// One sapling: cloud.ply, labels.txt, skel_true.txt, truth.txt, spec.txt.
    Sapling(SynthSaplingArgs),
    /// A plot with capture sessions, ready for `pipeline run`.
    Plot(SynthPlotArgs),
}

#[derive(Args)]
struct SynthSaplingArgs {
    /// Sapling spec (`key=value`); a random sapling of `--seed` when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthPlotArgs {
    /// Plot spec (`key=value`).
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum PipelineCommand {
    /// Process every manifest row of one session into the registry.
    Run(PipelineRunArgs),
}

#[derive(Args)]
struct PipelineRunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Saplings processed in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

/// Exit 1 for bad data, 2 for bad usage or configuration.
enum Failure {
    Data(String),
    Usage(String),
}

impl From<sapling::Error> for Failure {
    fn from(e: sapling::Error) -> Self {
        match e {
            sapling::Error::Config(m) => Failure::Usage(m),
            other => Failure::Data(other.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Georef(GeorefCommand::Fit(a)) => georef_fit(a),
        Command::Register(a) => register(a),
        Command::Skeletonize(a) => skeletonize(a),
        Command::Segment(a) => segment(a),
        Command::Traits(a) => traits(a),
        Command::Registry(RegistryCommand::Add(a)) => registry_add(a),
        Command::Registry(RegistryCommand::Diff(a)) => registry_diff(a),
        Command::Registry(RegistryCommand::List(a)) => registry_list(a),
        Command::Synth(SynthCommand::Sapling(a)) => synth_sapling(a),
        Command::Synth(SynthCommand::Plot(a)) => synth_plot(a),
        Command::Pipeline(PipelineCommand::Run(a)) => pipeline_run(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Data(m)) => {
            eprintln!("error: {}", one_line(&m));
            ExitCode::from(1)
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: usage: {}", one_line(&m));
            ExitCode::from(2)
        }
    }
}

fn one_line(m: &str) -> String {
    m.replace('\n', " ")
}

fn mkdir(dir: &Path) -> Outcome {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))
}

/// Applies every `key=value` of an optional parameter file through `set`;
/// unknown keys are usage errors.
fn apply_params(path: Option<&Path>, mut set: impl FnMut(&str, &str) -> sapling::Result<bool>) -> Outcome {
    let Some(path) = path else { return Ok(()) };
    let kv = KeyValues::parse(&read_text(path)?, '=').map_err(|e| e.in_file(path))?;
    for key in kv.keys() {
        if !set(key, kv.get(key).unwrap_or_default())? {
            return Err(Failure::Usage(format!("{}: unknown parameter `{key}`", path.display())));
        }
    }
    Ok(())
}

fn georef_fit(a: GeorefFitArgs) -> Outcome {
    let traj = read_trajectory(&a.traj, MAP_FRAME)?;
    let track = read_gnss(&a.gnss)?.shifted(a.time_offset);
    let opts = AssociationOptions { first_u: a.u, max_gap: a.max_gap };
    let earth = fit_earth_transform(&associate(&traj, &track, opts)?)?;
    match a.out {
        Some(path) => earth.save(path)?,
        None => print!("{}", earth.to_text()),
    }
    Ok(())
}

fn register(a: RegisterArgs) -> Outcome {
    let slam = read_trajectory(&a.slam, MAP_FRAME)?;
    let base = a.manifest.parent().unwrap_or(Path::new("."));
    let rows = parse_manifest(&sapling::ingest::read_file(&a.manifest)?).map_err(|e| e.in_file(&a.manifest))?;
    let mut failed = 0;
    for row in rows.iter().map(|r| r.resolved(base)) {
        let frame = sfm_frame(&row.session_id, &row.sapling_id);
        let dir = a.out_dir.join(&row.session_id).join(&row.sapling_id);
        let done = (|| -> sapling::Result<f64> {
            let sub = extract_subtrajectory(&slam, row.t_start, row.t_end, &row.sapling_id, &row.session_id)?;
            let sfm = read_trajectory(&row.sfm_traj_path, &frame)?;
            let reg = register_sfm(&sfm, &sub, a.max_gap)?;
            let cloud = transform_cloud(&read_ply(&row.cloud_path)?.with_frame(frame.clone()), &reg.transform)?;
            write_text(&dir.join("aligned.tum"), &write_trajectory(&reg.aligned))?;
            write_text(&dir.join("transform.txt"), &reg.record().to_text())?;
            save_ply(dir.join("cloud.ply"), &cloud, PlyFormat::BinaryLittleEndian)?;
            Ok(reg.transform.transform.scale())
        })();
        match done {
            Ok(scale) => println!("registered sapling={} session={} scale={scale}", row.sapling_id, row.session_id),
            Err(e) => {
                failed += 1;
                eprintln!("failure sapling={} session={} stage=register error={}", row.sapling_id, row.session_id, one_line(&e.to_string()));
            }
        }
    }
    if failed > 0 {
        return Err(Failure::Data(format!("{failed} of {} saplings failed", rows.len())));
    }
    Ok(())
}

fn skeletonize(a: SkeletonizeArgs) -> Outcome {
    let mut settings = if a.over { SkeletonSettings::over_skeleton() } else { SkeletonSettings::topology() };
    apply_params(a.params.as_deref(), |k, v| settings.set(k, v))?;
    if let Some(v) = &a.voxel {
        settings.set("voxel", v)?;
    }
    settings.validate()?;
    if a.assign.is_some() && !settings.keeps_assignment() {
        return Err(Failure::Usage("--assign needs voxel=none and min_branch_length_factor=0".into()));
    }
    let cloud = read_ply(&a.cloud)?;
    let (pruned, extraction) = settings.run(&cloud)?;
    let skel = if a.assign.is_some() { &extraction.graph } else { &pruned };
    save_skeleton(&a.out, skel)?;
    if let Some(path) = &a.assign {
        write_text(path, &write_assignment(&extraction.assignment))?;
    }
    println!("vertices={} edges={} bifurcations={}", skel.vertex_count(), skel.edges().len(), count_bifurcations(skel));
    Ok(())
}

fn segment(a: SegmentArgs) -> Outcome {
    let mut params = LeafWoodParams::default();
    apply_params(a.params.as_deref(), |k, v| params.set(k, v))?;
    let cloud = read_ply(&a.cloud)?;
    let skel = load_skeleton(&a.skel)?;
    let seg = match &a.assign {
        Some(path) => {
            let assignment = parse_assignment(&read_text(path)?).map_err(|e| e.in_file(path))?;
            segment_with_assignment(&cloud, &skel, &assignment, &params)?
        }
        None => segment_leaf_wood(&cloud, &skel, &params)?,
    };
    save_ply(&a.out_leaf, &seg.leaf, PlyFormat::BinaryLittleEndian)?;
    save_ply(&a.out_wood, &seg.wood, PlyFormat::BinaryLittleEndian)?;
    if let Some(path) = &a.out_labels {
        write_text(path, &write_labels(&seg.leaf_mask()))?;
    }
    let lwr = leaf_wood_ratio(&seg).map(|r| r.to_string()).unwrap_or_else(|_| "undefined".into());
    println!("{} {} {lwr}", seg.leaf.len(), seg.wood.len());
    Ok(())
}

fn traits(a: TraitsArgs) -> Outcome {
    let mut params = TraitParams::default();
    apply_params(a.params.as_deref(), |k, v| params.set(k, v))?;
    let cloud = read_ply(&a.cloud)?.with_frame(MAP_FRAME);
    let skel = load_skeleton(&a.skel)?;
    let seg = match (&a.labels, &a.leaf, &a.wood) {
        (Some(path), _, _) => {
            let labels = parse_labels(&read_text(path)?).map_err(|e| e.in_file(path))?;
            Segmentation::from_mask(&cloud, &labels)?
        }
        (None, Some(leaf), Some(wood)) => Segmentation::from_parts(&cloud, &read_ply(leaf)?, &read_ply(wood)?)?,
        _ => return Err(Failure::Usage("give --labels or both --leaf and --wood".into())),
    };
    let earth = EarthTransform::load(&a.earth)?;
    let sapling_id = match &a.sapling {
        Some(id) => id.clone(),
        None => a.cloud.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
    };
    let report = compute_traits(&cloud, &skel, &seg, &earth, &sapling_id, &a.session, &params)?;
    report.save(&a.out)?;
    print!("{}", report.to_text());
    Ok(())
}

fn parse_date(text: &str) -> Result<NaiveDate, Failure> {
    NaiveDate::parse_from_str(text, "%Y-%m-%d").map_err(|e| Failure::Usage(format!("date `{text}`: {e}")))
}

fn registry_add(a: RegistryAddArgs) -> Outcome {
    let date = parse_date(&a.date)?;
    let report = TraitReport::load(&a.dir)?;
    let mut registry = Registry::open(&a.root)?;
    let record = SaplingRecord::from_report(&report, date);
    if registry.get(&record.sapling_id, &record.session_id).is_some() {
        return Err(Failure::Data(
            sapling::Error::DuplicateRecord { sapling_id: record.sapling_id, session_id: record.session_id }.to_string(),
        ));
    }
    let mut files = Artifact::REQUIRED.to_vec();
    if report.leaf_profile.is_some() {
        files.push(Artifact::Profile);
    }
    for artifact in &files {
        let src = a.dir.join(artifact.file_name());
        if !src.is_file() {
            return Err(Failure::Data(sapling::Error::MissingArtifact(src).to_string()));
        }
    }
    for artifact in files {
        let dst = registry.artifact_path(&record, artifact);
        mkdir(dst.parent().expect("record directory"))?;
        std::fs::copy(a.dir.join(artifact.file_name()), &dst).map_err(|e| Failure::Data(format!("{}: {e}", dst.display())))?;
    }
    registry.add_record(record.clone())?;
    println!("added sapling={} session={}", record.sapling_id, record.session_id);
    Ok(())
}

fn registry_diff(a: RegistryDiffArgs) -> Outcome {
    let registry = Registry::load(&a.root)?;
    print!("{}", registry.change_report(&a.sapling, &a.a, &a.b)?.to_text());
    Ok(())
}

fn registry_list(a: RegistryRootArgs) -> Outcome {
    let registry = Registry::load(&a.root)?;
    print!("{}", sapling::registry::write_index(registry.records())?);
    Ok(())
}

fn synth_sapling(a: SynthSaplingArgs) -> Outcome {
    let spec = match &a.spec {
        Some(path) => SaplingSpec::from_text(&read_text(path)?).map_err(|e| e.in_file(path))?,
        None => SaplingSpec::random(a.seed),
    };
    let s = spec.generate()?;
    mkdir(&a.out)?;
    save_ply(a.out.join("cloud.ply"), &s.cloud, PlyFormat::BinaryLittleEndian)?;
    write_text(&a.out.join("labels.txt"), &write_labels(&s.labels))?;
    save_skeleton(a.out.join("skel_true.txt"), &s.skeleton)?;
    write_text(&a.out.join("spec.txt"), &spec.to_text())?;
    let mut kv = KeyValues::new();
    kv.push("height_m", s.truth.height);
    kv.push("bifurcations", s.truth.bifurcations);
    kv.push("n_leaf", s.truth.n_leaf);
    kv.push("n_wood", s.truth.n_wood);
    kv.push("lwr", s.truth.lwr());
    let truth = kv.to_text(':');
    write_text(&a.out.join("truth.txt"), &truth)?;
    print!("{truth}");
    Ok(())
}

fn synth_plot(a: SynthPlotArgs) -> Outcome {
    let spec = PlotSpec::from_text(&read_text(&a.spec)?).map_err(|e| e.in_file(&a.spec))?;
    let plot = spec.generate()?;
    plot.write(&a.out)?;
    for s in &plot.sessions {
        println!("session={} date={} saplings={} config={}", s.id, s.date, s.saplings.len(), a.out.join(&s.id).join("run.cfg").display());
    }
    Ok(())
}

fn pipeline_run(a: PipelineRunArgs) -> Outcome {
    if a.jobs == 0 {
        return Err(Failure::Usage("--jobs must be at least 1".into()));
    }
    let config = PipelineConfig::load(&a.config)?;
    let summary = run_pipeline(&config, a.jobs)?;
    for r in &summary.records {
        println!(
            "record sapling={} session={} height_m={} bifurcations={} lwr={} lat={} lon={}",
            r.sapling_id, r.session_id, r.height, r.bifurcations, r.lwr, r.lat, r.lon
        );
    }
    for f in &summary.failures {
        eprintln!("failure {}", one_line(&f.to_string()));
    }
    if !summary.succeeded() {
        return Err(Failure::Data(format!(
            "{} of {} saplings failed",
            summary.failures.len(),
            summary.failures.len() + summary.records.len()
        )));
    }
    Ok(())
}
