//! Per-sapling trait report: stem height, bifurcation count, leaf-to-wood
//! ratio, vertical leaf-density profile and geographic position.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::georef::{to_earth, EarthTransform};
use crate::ingest::{read_text, write_text};
use crate::kv::KeyValues;
use crate::leafwood::{ratio, Segmentation};
use crate::model::{PointCloud, SkeletonGraph, Vec3};
use crate::skeleton::count_bifurcations;
use crate::spatial::KdTree;

/// Grid size of every leaf profile.
pub const PROFILE_BINS: usize = 200;
/// Minimum cloud size for [`stem_height`].
pub const MIN_HEIGHT_POINTS: usize = 50;
/// Neighbours used by the statistical outlier filter.
pub const OUTLIER_NEIGHBORS: usize = 10;
/// Points whose mean neighbour distance exceeds mean + this many standard
/// deviations are outliers.
pub const OUTLIER_SIGMAS: f64 = 2.0;
/// Half-width of the grid used for a profile with no vertical spread.
const SPIKE_HALF_WIDTH: f64 = 1e-3;

/// How the vertical extent of a cloud is measured.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HeightMode {
    /// Extremes after statistical outlier removal.
    Filtered,
    /// Distance between two z percentiles, each in `[0, 100]`.
    Percentile { low: f64, high: f64 },
}

impl HeightMode {
    pub const DEFAULT_PERCENTILES: (f64, f64) = (0.5, 99.5);

    pub fn parse(text: &str) -> Result<HeightMode> {
        match text {
            "filtered" => Ok(HeightMode::Filtered),
            "percentile" => {
                let (low, high) = Self::DEFAULT_PERCENTILES;
                Ok(HeightMode::Percentile { low, high })
            }
            other => Err(Error::Config(format!("unknown height mode `{other}` (filtered|percentile)"))),
        }
    }
}

/// Indices of the points kept by the statistical outlier filter: each
/// point's mean distance to its `k` nearest neighbours is compared against
/// the population mean plus `sigmas` standard deviations.
pub fn statistical_outlier_filter(points: &[Vec3], k: usize, sigmas: f64) -> Vec<usize> {
    if points.len() <= k {
        return (0..points.len()).collect();
    }
    let tree = KdTree::new(points);
    let mean_dist: Vec<f64> = points
        .par_iter()
        .map(|p| {
            let nb = tree.knn(p, k + 1);
            nb.iter().skip(1).map(|(_, d)| d).sum::<f64>() / k as f64
        })
        .collect();
    let n = mean_dist.len() as f64;
    let mu = mean_dist.iter().sum::<f64>() / n;
    let sd = (mean_dist.iter().map(|d| (d - mu).powi(2)).sum::<f64>() / n).sqrt();
    let limit = mu + sigmas * sd;
    (0..points.len()).filter(|&i| mean_dist[i] <= limit).collect()
}

/// Linear-interpolated quantile of sorted data, `q ∈ [0, 1]`.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Vertical extent of the cloud after outlier removal; 0 when every point
/// shares one height.
pub fn stem_height(cloud: &PointCloud) -> Result<f64> {
    stem_height_with(cloud, HeightMode::Filtered)
}

pub fn stem_height_with(cloud: &PointCloud, mode: HeightMode) -> Result<f64> {
    if cloud.len() < MIN_HEIGHT_POINTS {
        return Err(Error::TooFewPoints { found: cloud.len(), required: MIN_HEIGHT_POINTS });
    }
    let pts = cloud.points();
    match mode {
        HeightMode::Filtered => {
            let keep = statistical_outlier_filter(pts, OUTLIER_NEIGHBORS, OUTLIER_SIGMAS);
            let (lo, hi) = keep
                .iter()
                .map(|&i| pts[i].z)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), z| (lo.min(z), hi.max(z)));
            Ok(hi - lo)
        }
        HeightMode::Percentile { low, high } => {
            if !(0.0..=100.0).contains(&low) || !(0.0..=100.0).contains(&high) || low >= high {
                return Err(Error::Config(format!("bad height percentiles {low}/{high}")));
            }
            let mut z: Vec<f64> = pts.iter().map(|p| p.z).collect();
            z.sort_by(f64::total_cmp);
            Ok(quantile(&z, high / 100.0) - quantile(&z, low / 100.0))
        }
    }
}

/// Gaussian kernel density of leaf heights on a fixed grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafProfile {
    /// `PROFILE_BINS` ascending, evenly spaced heights (metres).
    pub heights: Vec<f64>,
    pub density: Vec<f64>,
    /// Kernel bandwidth (metres); 0 for a degenerate profile.
    pub bandwidth: f64,
    /// All leaf points shared one height and the profile is a single spike.
    pub degenerate: bool,
}

/// Trapezoidal integral of `y` over `x`.
pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / 2.0).sum()
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Silverman's rule `0.9·min(σ, IQR/1.34)·n^(−1/5)`, falling back to σ when
/// the interquartile range is zero. `values` must be sorted.
pub fn silverman_bandwidth(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let sd = (sorted.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let iqr = quantile(sorted, 0.75) - quantile(sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * n.powf(-0.2)
}

impl LeafProfile {
    pub fn integral(&self) -> f64 {
        trapezoid(&self.heights, &self.density)
    }

    /// Density at `z` by linear interpolation, 0 outside the grid.
    pub fn sample(&self, z: f64) -> f64 {
        let h = &self.heights;
        if z < h[0] || z > h[h.len() - 1] {
            return 0.0;
        }
        let i = h.partition_point(|&x| x <= z).clamp(1, h.len() - 1);
        let t = if h[i] > h[i - 1] { (z - h[i - 1]) / (h[i] - h[i - 1]) } else { 0.0 };
        self.density[i - 1] + t * (self.density[i] - self.density[i - 1])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("z,density\n");
        for (z, d) in self.heights.iter().zip(&self.density) {
            out.push_str(&format!("{z},{d}\n"));
        }
        out
    }

    /// Parses the `z,density` sidecar; bandwidth and degeneracy come from
    /// the report.
    pub fn from_csv(text: &str, bandwidth: f64, degenerate: bool) -> Result<LeafProfile> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = reader.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["z", "density"] {
            return Err(Error::row(1, "profile header must be `z,density`"));
        }
        let mut heights = Vec::new();
        let mut density = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            let row = i + 2;
            let num = |k: usize| -> Result<f64> {
                rec.get(k)
                    .ok_or_else(|| Error::row(row, "missing column"))?
                    .parse()
                    .map_err(|e| Error::row(row, format!("{e}")))
            };
            heights.push(num(0)?);
            density.push(num(1)?);
        }
        if heights.len() != PROFILE_BINS {
            return Err(Error::Invalid(format!("profile has {} rows, expected {PROFILE_BINS}", heights.len())));
        }
        Ok(LeafProfile { heights, density, bandwidth, degenerate })
    }
}

/// Vertical leaf distribution: Gaussian KDE of leaf z-values with
/// Silverman's bandwidth, evaluated on `PROFILE_BINS` points spanning the
/// leaf heights and renormalised to unit trapezoidal integral.
///
/// A single leaf point, or leaves without vertical spread, give a spike at
/// the grid point nearest their height and `degenerate` is set.
pub fn leaf_profile(leaf: &PointCloud) -> Result<LeafProfile> {
    if leaf.is_empty() {
        return Err(Error::TooFewPoints { found: 0, required: 1 });
    }
    let mut z: Vec<f64> = leaf.points().iter().map(|p| p.z).collect();
    z.sort_by(f64::total_cmp);
    let (lo, hi) = (z[0], z[z.len() - 1]);
    let bandwidth = if z.len() > 1 { silverman_bandwidth(&z) } else { 0.0 };
    if hi <= lo || !(bandwidth > 0.0) {
        let heights = linspace(lo - SPIKE_HALF_WIDTH, lo + SPIKE_HALF_WIDTH, PROFILE_BINS);
        let peak = (0..PROFILE_BINS)
            .min_by(|&a, &b| (heights[a] - lo).abs().total_cmp(&(heights[b] - lo).abs()).then(a.cmp(&b)))
            .expect("non-empty grid");
        let mut density = vec![0.0; PROFILE_BINS];
        density[peak] = 1.0;
        let area = trapezoid(&heights, &density);
        density[peak] /= area;
        return Ok(LeafProfile { heights, density, bandwidth: 0.0, degenerate: true });
    }
    let heights = linspace(lo, hi, PROFILE_BINS);
    let norm = 1.0 / (z.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    let mut density: Vec<f64> = heights
        .par_iter()
        .map(|&g| z.iter().map(|&v| (-0.5 * ((g - v) / bandwidth).powi(2)).exp()).sum::<f64>() * norm)
        .collect();
    let area = trapezoid(&heights, &density);
    for d in &mut density {
        *d /= area;
    }
    Ok(LeafProfile { heights, density, bandwidth, degenerate: false })
}

/// Options of [`compute_traits`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraitParams {
    pub height_mode: HeightMode,
}

impl Default for TraitParams {
    fn default() -> Self {
        TraitParams { height_mode: HeightMode::Filtered }
    }
}

impl TraitParams {
    pub const KEYS: [&'static str; 1] = ["height_mode"];

    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "height_mode" => self.height_mode = HeightMode::parse(value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Trait summary of one sapling in one session.
#[derive(Debug, Clone, PartialEq)]
pub struct TraitReport {
    pub sapling_id: String,
    pub session_id: String,
    pub height: f64,
    pub bifurcations: usize,
    pub lwr: f64,
    pub n_leaf: usize,
    pub n_wood: usize,
    /// Absent when no point was classified as leaf.
    pub leaf_profile: Option<LeafProfile>,
    /// Centroid of the wood points in the map frame.
    pub position: Vec3,
    pub lat: f64,
    pub lon: f64,
}

const REPORT_KEYS: [&str; 14] = [
    "sapling_id",
    "session_id",
    "height_m",
    "bifurcations",
    "lwr",
    "n_leaf",
    "n_wood",
    "lat",
    "lon",
    "x",
    "y",
    "z",
    "bandwidth_m",
    "profile",
];

impl TraitReport {
    /// `key:value` text. The profile itself goes to [`LeafProfile::to_csv`].
    pub fn to_text(&self) -> String {
        let mut kv = KeyValues::new();
        kv.push("sapling_id", &self.sapling_id);
        kv.push("session_id", &self.session_id);
        kv.push("height_m", self.height);
        kv.push("bifurcations", self.bifurcations);
        kv.push("lwr", self.lwr);
        kv.push("n_leaf", self.n_leaf);
        kv.push("n_wood", self.n_wood);
        kv.push("lat", self.lat);
        kv.push("lon", self.lon);
        kv.push("x", self.position.x);
        kv.push("y", self.position.y);
        kv.push("z", self.position.z);
        let (bandwidth, profile) = match &self.leaf_profile {
            None => (0.0, "none"),
            Some(p) if p.degenerate => (p.bandwidth, "spike"),
            Some(p) => (p.bandwidth, "kde"),
        };
        kv.push("bandwidth_m", bandwidth);
        kv.push("profile", profile);
        kv.to_text(':')
    }

    /// Parses a report; `profile_csv` is required unless the report says
    /// `profile:none`.
    pub fn from_text(text: &str, profile_csv: Option<&str>) -> Result<TraitReport> {
        let kv = KeyValues::parse(text, ':')?;
        kv.reject_unknown(&REPORT_KEYS)?;
        let bandwidth: f64 = kv.parse_value("bandwidth_m")?;
        let leaf_profile = match (kv.require("profile")?, profile_csv) {
            ("none", _) => None,
            ("kde", Some(csv)) => Some(LeafProfile::from_csv(csv, bandwidth, false)?),
            ("spike", Some(csv)) => Some(LeafProfile::from_csv(csv, bandwidth, true)?),
            ("kde" | "spike", None) => return Err(Error::Config("report needs its profile.csv".into())),
            (other, _) => return Err(Error::Config(format!("unknown profile kind `{other}`"))),
        };
        Ok(TraitReport {
            sapling_id: kv.require("sapling_id")?.to_string(),
            session_id: kv.require("session_id")?.to_string(),
            height: kv.parse_value("height_m")?,
            bifurcations: kv.parse_value("bifurcations")?,
            lwr: kv.parse_value("lwr")?,
            n_leaf: kv.parse_value("n_leaf")?,
            n_wood: kv.parse_value("n_wood")?,
            leaf_profile,
            position: Vec3::new(kv.parse_value("x")?, kv.parse_value("y")?, kv.parse_value("z")?),
            lat: kv.parse_value("lat")?,
            lon: kv.parse_value("lon")?,
        })
    }

    /// Writes `report.txt` and, when there is a profile, `profile.csv`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::from(e).in_file(dir))?;
        write_text(&dir.join("report.txt"), &self.to_text())?;
        let csv_path = dir.join("profile.csv");
        match &self.leaf_profile {
            Some(p) => write_text(&csv_path, &p.to_csv())?,
            None if csv_path.exists() => std::fs::remove_file(&csv_path).map_err(|e| Error::from(e).in_file(&csv_path))?,
            None => {}
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<TraitReport> {
        let dir = dir.as_ref();
        let report_path = dir.join("report.txt");
        let text = read_text(&report_path)?;
        let csv_path = dir.join("profile.csv");
        let csv = if csv_path.exists() { Some(read_text(&csv_path)?) } else { None };
        TraitReport::from_text(&text, csv.as_deref()).map_err(|e| e.in_file(report_path))
    }
}

/// Assembles the report of one sapling. `cloud` is the full cloud in the
/// map frame, `skeleton` the pruned skeleton and `segmentation` the split of
/// the same cloud. The geographic position is that of the wood centroid.
pub fn compute_traits(
    cloud: &PointCloud,
    skeleton: &SkeletonGraph,
    segmentation: &Segmentation,
    earth: &EarthTransform,
    sapling_id: &str,
    session_id: &str,
    params: &TraitParams,
) -> Result<TraitReport> {
    let n_leaf = segmentation.leaf.len();
    let n_wood = segmentation.wood.len();
    if n_leaf + n_wood != cloud.len() {
        return Err(Error::Invalid(format!(
            "segmentation covers {} points, cloud has {}",
            n_leaf + n_wood,
            cloud.len()
        )));
    }
    let lwr = ratio(n_leaf, n_wood)?;
    let height = stem_height_with(cloud, params.height_mode)?;
    let leaf_profile = if n_leaf > 0 { Some(leaf_profile(&segmentation.leaf)?) } else { None };
    let position = segmentation.wood.centroid().ok_or(Error::UndefinedRatio)?;
    let (lat, lon, _) = to_earth(earth, &position);
    Ok(TraitReport {
        sapling_id: sapling_id.to_string(),
        session_id: session_id.to_string(),
        height,
        bifurcations: count_bifurcations(skeleton),
        lwr,
        n_leaf,
        n_wood,
        leaf_profile,
        position,
        lat,
        lon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GeoFix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn cloud(points: Vec<Vec3>) -> PointCloud {
        PointCloud::new(points, None, "M1").unwrap()
    }

    /// Stem-like column: points on a 1 cm ring spanning z ∈ [z0, z1].
    fn column(z0: f64, z1: f64, n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts: Vec<Vec3> = (0..n)
            .map(|_| {
                let t = rng.random_range(0.0..std::f64::consts::TAU);
                Vec3::new(0.01 * t.cos(), 0.01 * t.sin(), rng.random_range(z0..z1))
            })
            .collect();
        pts[0].z = z0;
        pts[1].z = z1;
        pts
    }

    #[test]
    fn height_of_clean_column() {
        let c = cloud(column(0.10, 0.99, 3000, 1));
        // The filter trims a few of the sparser end points of a clean column.
        let h = stem_height(&c).unwrap();
        assert!(h <= 0.89 && 0.89 - h <= 0.01, "{h}");
    }

    #[test]
    fn height_ignores_floating_outliers() {
        let mut pts = column(0.10, 0.99, 3000, 2);
        let manual = {
            let z: Vec<f64> = pts.iter().map(|p| p.z).collect();
            z.iter().cloned().fold(f64::MIN, f64::max) - z.iter().cloned().fold(f64::MAX, f64::min)
        };
        pts.extend((0..5).map(|i| Vec3::new(0.3 * i as f64, 0.2, 3.0)));
        let h = stem_height(&cloud(pts)).unwrap();
        assert!((h - manual).abs() <= 0.01, "{h} vs {manual}");
    }

    #[test]
    fn flat_cloud_has_zero_height() {
        let pts = (0..60).map(|i| Vec3::new(i as f64 * 0.01, (i % 7) as f64 * 0.01, 0.4)).collect();
        assert_eq!(stem_height(&cloud(pts)).unwrap(), 0.0);
    }

    #[test]
    fn height_needs_fifty_points() {
        let pts = column(0.0, 1.0, 49, 3);
        assert!(matches!(stem_height(&cloud(pts)), Err(Error::TooFewPoints { found: 49, .. })));
    }

    #[test]
    fn percentile_height() {
        let pts: Vec<Vec3> = (0..=1000).map(|i| Vec3::new(0.0, 0.0, i as f64 / 1000.0)).collect();
        let h = stem_height_with(&cloud(pts), HeightMode::Percentile { low: 0.5, high: 99.5 }).unwrap();
        assert!((h - 0.99).abs() < 1e-12);
    }

    #[test]
    fn narrow_profile_peaks_at_its_height() {
        // Spread of 1 mm, concentrated around 1.0.
        let pts = (0..=500)
            .map(|i| {
                let u = i as f64 / 250.0 - 1.0;
                Vec3::new(0.0, 0.0, 1.0 + 0.0005 * u.powi(3))
            })
            .collect();
        let p = leaf_profile(&cloud(pts)).unwrap();
        let peak = (0..PROFILE_BINS).max_by(|&a, &b| p.density[a].total_cmp(&p.density[b])).unwrap();
        let nearest = (0..PROFILE_BINS)
            .min_by(|&a, &b| (p.heights[a] - 1.0).abs().total_cmp(&(p.heights[b] - 1.0).abs()))
            .unwrap();
        assert!(peak.abs_diff(nearest) <= 1, "peak {peak}, nearest {nearest}");
        assert!((p.integral() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn spike_profile_for_a_single_height() {
        let pts = vec![Vec3::new(0.0, 0.0, 1.0); 10];
        let p = leaf_profile(&cloud(pts)).unwrap();
        assert!(p.degenerate);
        let peak = (0..PROFILE_BINS).max_by(|&a, &b| p.density[a].total_cmp(&p.density[b])).unwrap();
        assert!((p.heights[peak] - 1.0).abs() <= (p.heights[1] - p.heights[0]) / 2.0 + 1e-15);
        assert!((p.integral() - 1.0).abs() < 1e-12);
    }

    /// Direct kernel sum at one height, normalised like the profile.
    fn kde_at(z: &[f64], h: f64, at: f64) -> f64 {
        z.iter().map(|&v| (-0.5 * ((at - v) / h).powi(2)).exp()).sum::<f64>() / (z.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt())
    }

    #[test]
    fn bimodal_profile() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let z: Vec<f64> = (0..4000).map(|i| if i % 2 == 0 { 0.5 } else { 1.5 } + noise.sample(&mut rng)).collect();
        let p = leaf_profile(&cloud(z.iter().map(|&v| Vec3::new(0.0, 0.0, v)).collect())).unwrap();
        let step = p.heights[1] - p.heights[0];
        for centre in [0.5, 1.5] {
            let window: Vec<usize> = (0..PROFILE_BINS).filter(|&i| (p.heights[i] - centre).abs() < 0.25).collect();
            let peak = *window.iter().max_by(|&&a, &&b| p.density[a].total_cmp(&p.density[b])).unwrap();
            // The oracle's own maximum over the same candidates.
            let oracle = *window
                .iter()
                .max_by(|&&a, &&b| kde_at(&z, p.bandwidth, p.heights[a]).total_cmp(&kde_at(&z, p.bandwidth, p.heights[b])))
                .unwrap();
            assert_eq!(peak, oracle);
            assert!((p.heights[peak] - centre).abs() <= step * 1.5, "peak at {}", p.heights[peak]);
        }
        let mid = 1.0;
        let lower: Vec<usize> = (0..PROFILE_BINS).filter(|&i| p.heights[i] <= mid).collect();
        let upper: Vec<usize> = (0..PROFILE_BINS).filter(|&i| p.heights[i] >= mid).collect();
        let mass = |idx: &[usize]| {
            trapezoid(&idx.iter().map(|&i| p.heights[i]).collect::<Vec<_>>(), &idx.iter().map(|&i| p.density[i]).collect::<Vec<_>>())
        };
        let (a, b) = (mass(&lower), mass(&upper));
        assert!((a - b).abs() / (a + b) < 0.02, "{a} vs {b}");
    }

    #[test]
    fn uniform_profile_is_flat() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pts = (0..10_000).map(|_| Vec3::new(0.0, 0.0, rng.random_range(0.0..1.0))).collect();
        let p = leaf_profile(&cloud(pts)).unwrap();
        for (z, d) in p.heights.iter().zip(&p.density) {
            if (0.1..=0.9).contains(z) {
                assert!((d - 1.0).abs() < 0.1, "density {d} at {z}");
            }
        }
    }

    #[test]
    fn silverman_matches_hand_computation() {
        // σ = 1.5811, IQR = 2 → min(1.5811, 1.4925) = 1.4925.
        let b = silverman_bandwidth(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let expected = 0.9 * (2.0f64 / 1.34) * 5f64.powf(-0.2);
        assert!((b - expected).abs() < 1e-12);
    }

    #[test]
    fn report_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<Vec3> = (0..300).map(|_| Vec3::new(0.0, 0.0, rng.random_range(0.2..0.9))).collect();
        let report = TraitReport {
            sapling_id: "S01".into(),
            session_id: "2024-07".into(),
            height: 0.8912345678901,
            bifurcations: 3,
            lwr: 12.54,
            n_leaf: 1254,
            n_wood: 100,
            leaf_profile: Some(leaf_profile(&cloud(pts)).unwrap()),
            position: Vec3::new(1.0 / 3.0, -2.5, 0.1),
            lat: 47.123456789,
            lon: 8.987654321,
        };
        let csv = report.leaf_profile.as_ref().unwrap().to_csv();
        assert_eq!(TraitReport::from_text(&report.to_text(), Some(&csv)).unwrap(), report);
        let dir = tempfile::tempdir().unwrap();
        report.save(dir.path()).unwrap();
        assert_eq!(TraitReport::load(dir.path()).unwrap(), report);
        let bare = TraitReport { leaf_profile: None, lwr: 0.0, n_leaf: 0, ..report };
        bare.save(dir.path()).unwrap();
        assert_eq!(TraitReport::load(dir.path()).unwrap(), bare);
    }

    #[test]
    fn compute_traits_assembles_components() {
        let wood_pts = column(0.0, 0.8, 400, 8);
        let leaf_pts: Vec<Vec3> = column(0.6, 0.9, 100, 9).iter().map(|p| p + Vec3::new(0.1, 0.0, 0.0)).collect();
        let mut all = wood_pts.clone();
        all.extend(leaf_pts.iter().copied());
        let full = cloud(all);
        let seg = Segmentation {
            leaf: cloud(leaf_pts),
            wood: cloud(wood_pts),
            leaf_indices: (400..500).collect(),
            wood_indices: (0..400).collect(),
            no_terminals: false,
        };
        let skel = SkeletonGraph::tree(
            vec![Vec3::zeros(), Vec3::new(0.0, 0.0, 0.5), Vec3::new(0.0, 0.0, 0.8), Vec3::new(0.1, 0.0, 0.7)],
            vec![(0, 1), (1, 2), (1, 3)],
            0,
        )
        .unwrap();
        let earth = EarthTransform::identity(GeoFix::new(0.0, 47.0, 8.0, Some(400.0)).unwrap());
        let r = compute_traits(&full, &skel, &seg, &earth, "S1", "A", &TraitParams::default()).unwrap();
        assert_eq!(r.bifurcations, 1);
        assert_eq!(r.lwr, 0.25);
        assert_eq!(r.height, stem_height(&full).unwrap());
        let centroid = seg.wood.centroid().unwrap();
        let (lat, lon, _) = to_earth(&earth, &centroid);
        assert_eq!((r.lat, r.lon), (lat, lon));
        assert!((r.leaf_profile.unwrap().integral() - 1.0).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn height_invariant_under_horizontal_motion(
            yaw in -3.2..3.2f64, tx in -50.0..50.0f64, ty in -50.0..50.0f64, tz in -5.0..5.0f64, seed in 0u64..1000,
        ) {
            let pts = column(0.0, 0.7, 200, seed);
            let (s, c) = yaw.sin_cos();
            let moved: Vec<Vec3> = pts.iter().map(|p| Vec3::new(c * p.x - s * p.y + tx, s * p.x + c * p.y + ty, p.z + tz)).collect();
            let a = stem_height(&cloud(pts)).unwrap();
            let b = stem_height(&cloud(moved)).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn profile_integrates_to_one(zs in proptest::collection::vec(-3.0..3.0f64, 2..300)) {
            let p = leaf_profile(&cloud(zs.iter().map(|&z| Vec3::new(0.0, 0.0, z)).collect())).unwrap();
            prop_assert!((p.integral() - 1.0).abs() < 1e-6);
            prop_assert!(p.density.iter().all(|&d| d >= 0.0));
            prop_assert_eq!(p.heights.len(), PROFILE_BINS);
        }
    }
}
