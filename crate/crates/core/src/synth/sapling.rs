use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};

use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::model::{PointCloud, Rgb, SkeletonGraph, Vec3};

const WOOD_RGB: Rgb = [112, 82, 54];
const LEAF_RGB: Rgb = [72, 142, 58];
/// Vertical semi-axis of a leaf blob relative to its horizontal radius.
const BLOB_FLATTENING: f64 = 0.8;

/// One side branch: a straight cylinder leaving the stem axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchSpec {
    pub attach_height: f64,
    /// Radians, counter-clockwise from +x.
    pub azimuth: f64,
    /// Radians above the horizontal.
    pub elevation: f64,
    pub length: f64,
    pub radius: f64,
}

impl BranchSpec {
    pub fn direction(&self) -> Vec3 {
        let (se, ce) = self.elevation.sin_cos();
        Vec3::new(ce * self.azimuth.cos(), ce * self.azimuth.sin(), se)
    }

    pub fn base(&self) -> Vec3 {
        Vec3::new(0.0, 0.0, self.attach_height)
    }

    pub fn tip(&self) -> Vec3 {
        self.base() + self.direction() * self.length
    }
}

/// Where leaf blobs are placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Foliage {
    /// Blobs only at branch and stem tips.
    Tips,
    /// Blobs at tips and at the midpoint of every branch.
    AlongBranch,
}

/// Parametric sapling: a vertical stem on the origin, straight branches and
/// ellipsoidal leaf blobs, all sampled on their surfaces.
#[derive(Debug, Clone, PartialEq)]
pub struct SaplingSpec {
    pub seed: u64,
    pub stem_height: f64,
    pub stem_radius: f64,
    pub branches: Vec<BranchSpec>,
    pub leaves_per_tip: usize,
    pub leaf_radius: f64,
    /// Surface samples per square metre.
    pub density: f64,
    /// Isotropic Gaussian noise added to every point (metres).
    pub noise: f64,
    pub foliage: Foliage,
}

/// Generator ground truth for one sapling.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueTraits {
    pub height: f64,
    pub bifurcations: usize,
    pub n_leaf: usize,
    pub n_wood: usize,
}

impl TrueTraits {
    /// `n_leaf / n_wood`.
    pub fn lwr(&self) -> f64 {
        self.n_leaf as f64 / self.n_wood as f64
    }
}

/// A generated sapling with per-point labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSapling {
    pub cloud: PointCloud,
    /// `true` for leaf points.
    pub labels: Vec<bool>,
    pub skeleton: SkeletonGraph,
    pub truth: TrueTraits,
}

#[derive(Debug, Clone, Copy)]
struct Blob {
    centre: Vec3,
    radius: f64,
}

impl Blob {
    fn semi_axes(&self) -> Vec3 {
        Vec3::new(self.radius, self.radius, self.radius * BLOB_FLATTENING)
    }

    fn contains(&self, p: &Vec3) -> bool {
        let d = (p - self.centre).component_div(&self.semi_axes());
        d.norm_squared() < 1.0
    }

    fn top(&self) -> f64 {
        self.centre.z + self.radius * BLOB_FLATTENING
    }

    /// Approximate ellipsoid surface area (Knud Thomsen).
    fn area(&self) -> f64 {
        let a = self.semi_axes();
        let p = 1.6075;
        let t = ((a.x * a.y).powf(p) + (a.x * a.z).powf(p) + (a.y * a.z).powf(p)) / 3.0;
        4.0 * PI * t.powf(1.0 / p)
    }
}

fn component_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Unit vectors spanning the plane orthogonal to `d`.
fn orthonormal_frame(d: &Vec3) -> (Vec3, Vec3) {
    let helper = if d.z.abs() < 0.9 { Vec3::z() } else { Vec3::x() };
    let e1 = d.cross(&helper).normalize();
    (e1, d.cross(&e1))
}

/// Isotropic Gaussian jitter drawn from the component's own stream.
fn jitter(points: &mut [Vec3], sigma: f64, rng: &mut ChaCha8Rng) {
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("finite sigma");
        for p in points {
            *p += Vec3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng));
        }
    }
}

fn sample_cylinder(a: &Vec3, b: &Vec3, radius: f64, density: f64, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    let axis = b - a;
    let length = axis.norm();
    let d = axis / length;
    let (e1, e2) = orthonormal_frame(&d);
    let n = (TAU * radius * length * density).round() as usize;
    (0..n)
        .map(|_| {
            let u = rng.random_range(0.0..length);
            let t = rng.random_range(0.0..TAU);
            a + d * u + (e1 * t.cos() + e2 * t.sin()) * radius
        })
        .collect()
}

fn sample_blob(blob: &Blob, density: f64, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    let n = (blob.area() * density).round() as usize;
    let axes = blob.semi_axes();
    (0..n)
        .map(|_| {
            let [x, y, z]: [f64; 3] = UnitSphere.sample(rng);
            blob.centre + Vec3::new(x, y, z).component_mul(&axes)
        })
        .collect()
}

impl SaplingSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("stem_height", self.stem_height),
            ("stem_radius", self.stem_radius),
            ("leaf_radius", self.leaf_radius),
            ("density", self.density),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::Invalid(format!("noise must be non-negative, got {}", self.noise)));
        }
        for (i, b) in self.branches.iter().enumerate() {
            if !(b.attach_height > 0.0 && b.attach_height <= self.stem_height) {
                return Err(Error::Invalid(format!("branch {i} attaches outside the stem")));
            }
            if !(b.length > 0.0 && b.radius > 0.0) {
                return Err(Error::Invalid(format!("branch {i} needs positive length and radius")));
            }
            if !(b.elevation > -PI / 2.0 && b.elevation < PI / 2.0) || !b.azimuth.is_finite() {
                return Err(Error::Invalid(format!("branch {i} has an invalid direction")));
            }
        }
        Ok(())
    }

    fn apex_is_tip(&self) -> bool {
        !self.branches.iter().any(|b| b.attach_height == self.stem_height)
    }

    fn blobs(&self) -> Vec<Blob> {
        let mut rng = component_rng(self.seed, 1_000);
        let r = self.leaf_radius;
        let mut anchors: Vec<(Vec3, Vec3)> = self.branches.iter().map(|b| (b.tip(), b.direction())).collect();
        if self.apex_is_tip() {
            anchors.push((Vec3::new(0.0, 0.0, self.stem_height), Vec3::z()));
        }
        if self.foliage == Foliage::AlongBranch {
            anchors.extend(self.branches.iter().map(|b| (b.base() + b.direction() * (0.6 * b.length), b.direction())));
        }
        let mut blobs = Vec::new();
        for (tip, dir) in anchors {
            let (e1, e2) = orthonormal_frame(&dir);
            for k in 0..self.leaves_per_tip {
                let mut centre = tip - dir * (0.5 * r);
                if k > 0 {
                    let t = rng.random_range(0.0..TAU);
                    centre += (e1 * t.cos() + e2 * t.sin()) * (0.7 * r) - dir * (0.4 * r);
                }
                blobs.push(Blob { centre, radius: r });
            }
        }
        blobs
    }

    /// Highest point of the noiseless geometry.
    fn true_top(&self, blobs: &[Blob]) -> f64 {
        let wood = self
            .branches
            .iter()
            .map(|b| b.tip().z + b.radius * b.elevation.cos())
            .fold(self.stem_height, f64::max);
        blobs.iter().map(Blob::top).fold(wood, f64::max)
    }

    fn true_skeleton(&self) -> SkeletonGraph {
        let mut heights: Vec<f64> = self.branches.iter().map(|b| b.attach_height).collect();
        heights.push(self.stem_height);
        heights.sort_by(f64::total_cmp);
        heights.dedup();
        let mut vertices = vec![Vec3::zeros()];
        vertices.extend(heights.iter().map(|&h| Vec3::new(0.0, 0.0, h)));
        let mut edges: Vec<(usize, usize)> = (1..vertices.len()).map(|i| (i - 1, i)).collect();
        for b in &self.branches {
            let node = 1 + heights.iter().position(|&h| h == b.attach_height).expect("height listed");
            vertices.push(b.tip());
            edges.push((node, vertices.len() - 1));
        }
        SkeletonGraph::tree(vertices, edges, 0).expect("generator topology is a tree")
    }

    /// Samples the sapling. Output is identical for identical specs.
    pub fn generate(&self) -> Result<SyntheticSapling> {
        self.validate()?;
        let blobs = self.blobs();
        let in_blob = |p: &Vec3| blobs.iter().any(|b| b.contains(p));
        let inside_stem = |p: &Vec3| p.xy().norm() < self.stem_radius && p.z >= 0.0 && p.z <= self.stem_height;

        let mut stem_rng = component_rng(self.seed, 0);
        let mut wood = sample_cylinder(
            &Vec3::zeros(),
            &Vec3::new(0.0, 0.0, self.stem_height),
            self.stem_radius,
            self.density,
            &mut stem_rng,
        );
        jitter(&mut wood, self.noise, &mut stem_rng);
        for (i, b) in self.branches.iter().enumerate() {
            let mut rng = component_rng(self.seed, 1 + i as u64);
            let mut pts = sample_cylinder(&b.base(), &b.tip(), b.radius, self.density, &mut rng);
            jitter(&mut pts, self.noise, &mut rng);
            wood.extend(pts.into_iter().filter(|p| !inside_stem(p)));
        }
        wood.retain(|p| !in_blob(p));

        let mut leaves = Vec::new();
        let mut leaf_rng = component_rng(self.seed, 2_000);
        for blob in &blobs {
            let mut pts = sample_blob(blob, self.density, &mut leaf_rng);
            jitter(&mut pts, self.noise, &mut leaf_rng);
            leaves.extend(pts);
        }

        let n_wood = wood.len();
        let n_leaf = leaves.len();
        let mut points = wood;
        points.extend(leaves);
        let labels: Vec<bool> = (0..points.len()).map(|i| i >= n_wood).collect();
        let colors = labels.iter().map(|&l| if l { LEAF_RGB } else { WOOD_RGB }).collect();
        let skeleton = self.true_skeleton();
        let truth = TrueTraits {
            height: self.true_top(&blobs),
            bifurcations: crate::skeleton::count_bifurcations(&skeleton),
            n_leaf,
            n_wood,
        };
        Ok(SyntheticSapling {
            cloud: PointCloud::new(points, Some(colors), "M1")?,
            labels,
            skeleton,
            truth,
        })
    }

    /// Same sapling with every leaf removed.
    pub fn defoliated(&self) -> SaplingSpec {
        SaplingSpec { leaves_per_tip: 0, ..self.clone() }
    }

    /// Same sapling without its highest-attached branch.
    pub fn without_highest_branch(&self) -> SaplingSpec {
        let mut out = self.clone();
        if let Some(i) = (0..out.branches.len()).max_by(|&a, &b| {
            out.branches[a].attach_height.total_cmp(&out.branches[b].attach_height).then(b.cmp(&a))
        }) {
            out.branches.remove(i);
        }
        out
    }

    /// A bare vertical cylinder without leaves.
    pub fn cylinder(seed: u64, radius: f64, length: f64) -> SaplingSpec {
        SaplingSpec {
            seed,
            stem_height: length,
            stem_radius: radius,
            branches: Vec::new(),
            leaves_per_tip: 0,
            leaf_radius: 0.04,
            density: 20_000.0 / (TAU * radius * length),
            noise: 0.0,
            foliage: Foliage::Tips,
        }
    }

    /// Stem with one side branch: a single fork.
    pub fn y_tree(seed: u64) -> SaplingSpec {
        let mut rng = component_rng(seed, 9_000);
        SaplingSpec {
            seed,
            stem_height: rng.random_range(0.8..1.0),
            stem_radius: 0.01,
            branches: vec![BranchSpec {
                attach_height: rng.random_range(0.4..0.5),
                azimuth: rng.random_range(0.0..TAU),
                elevation: rng.random_range(0.5..0.8),
                length: rng.random_range(0.3..0.4),
                radius: 0.007,
            }],
            leaves_per_tip: 0,
            leaf_radius: 0.04,
            density: 40_000.0,
            noise: 0.0005,
            foliage: Foliage::Tips,
        }
    }

    /// Three branches leaving the stem apex: one degree-4 vertex.
    pub fn broom(seed: u64) -> SaplingSpec {
        let mut rng = component_rng(seed, 9_001);
        let height = rng.random_range(0.6..0.75);
        let phase = rng.random_range(0.0..TAU);
        let branches = (0..3)
            .map(|i| BranchSpec {
                attach_height: height,
                azimuth: phase + i as f64 * TAU / 3.0 + rng.random_range(-0.2..0.2),
                elevation: rng.random_range(0.6..0.9),
                length: rng.random_range(0.3..0.4),
                radius: 0.007,
            })
            .collect();
        SaplingSpec {
            seed,
            stem_height: height,
            stem_radius: 0.01,
            branches,
            leaves_per_tip: 0,
            leaf_radius: 0.04,
            density: 40_000.0,
            noise: 0.0005,
            foliage: Foliage::Tips,
        }
    }

    /// A leafy sapling with 3–5 side branches; `seed` drives both the shape
    /// and the sampling.
    pub fn random(seed: u64) -> SaplingSpec {
        let mut rng = component_rng(seed, 9_002);
        let height = rng.random_range(0.7..1.3);
        let n = rng.random_range(3..=5usize);
        let phase = rng.random_range(0.0..TAU);
        let lo = 0.3 * height;
        let hi = height - 0.25;
        let branches = (0..n)
            .map(|i| {
                let frac = (i as f64 + 0.5) / n as f64;
                BranchSpec {
                    attach_height: lo + (hi - lo) * frac + rng.random_range(-0.02..0.02),
                    azimuth: phase + i as f64 * 2.4 + rng.random_range(-0.3..0.3),
                    elevation: rng.random_range(0.35..0.9),
                    length: rng.random_range(0.22..0.32) * height.sqrt(),
                    radius: rng.random_range(0.005..0.008),
                }
            })
            .collect();
        SaplingSpec {
            seed,
            stem_height: height,
            stem_radius: rng.random_range(0.009..0.014),
            branches,
            leaves_per_tip: rng.random_range(1..=2),
            leaf_radius: rng.random_range(0.035..0.05),
            density: 30_000.0,
            noise: 0.0005,
            foliage: Foliage::Tips,
        }
    }

    pub fn to_text(&self) -> String {
        let mut kv = KeyValues::new();
        kv.push("seed", self.seed);
        kv.push("stem_height", self.stem_height);
        kv.push("stem_radius", self.stem_radius);
        kv.push("leaves_per_tip", self.leaves_per_tip);
        kv.push("leaf_radius", self.leaf_radius);
        kv.push("density", self.density);
        kv.push("noise", self.noise);
        kv.push(
            "foliage",
            match self.foliage {
                Foliage::Tips => "tips",
                Foliage::AlongBranch => "along_branch",
            },
        );
        for (i, b) in self.branches.iter().enumerate() {
            kv.push(
                &format!("branch.{i}"),
                format!(
                    "{},{},{},{},{}",
                    b.attach_height,
                    b.azimuth,
                    b.elevation,
                    b.length,
                    b.radius
                ),
            );
        }
        kv.to_text('=')
    }

    /// Parses `key=value` lines; branches are `branch.<i>=height,azimuth,elevation,length,radius`
    /// with angles in radians so that written specs regenerate bit-identical clouds.
    pub fn from_text(text: &str) -> Result<SaplingSpec> {
        let kv = KeyValues::parse(text, '=')?;
        let mut branch_keys: Vec<(usize, &str)> = Vec::new();
        for key in kv.keys() {
            if let Some(idx) = key.strip_prefix("branch.") {
                let i = idx
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad branch key `{key}`")))?;
                branch_keys.push((i, key));
            } else if !SPEC_KEYS.contains(&key) {
                return Err(Error::Config(format!("unknown key `{key}`")));
            }
        }
        branch_keys.sort();
        let branches = branch_keys
            .iter()
            .map(|(_, key)| {
                let raw = kv.require(key)?;
                let v: Vec<f64> = raw
                    .split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Config(format!("`{key}`: {e}")))?;
                match v.as_slice() {
                    [h, az, el, len, r] => Ok(BranchSpec {
                        attach_height: *h,
                        azimuth: *az,
                        elevation: *el,
                        length: *len,
                        radius: *r,
                    }),
                    _ => Err(Error::Config(format!("`{key}` needs 5 comma-separated values"))),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let foliage = match kv.get("foliage").unwrap_or("tips") {
            "tips" => Foliage::Tips,
            "along_branch" => Foliage::AlongBranch,
            other => return Err(Error::Config(format!("unknown foliage mode `{other}`"))),
        };
        let spec = SaplingSpec {
            seed: kv.parse_value("seed")?,
            stem_height: kv.parse_value("stem_height")?,
            stem_radius: kv.parse_value("stem_radius")?,
            branches,
            leaves_per_tip: kv.parse_opt("leaves_per_tip")?.unwrap_or(1),
            leaf_radius: kv.parse_opt("leaf_radius")?.unwrap_or(0.04),
            density: kv.parse_opt("density")?.unwrap_or(30_000.0),
            noise: kv.parse_opt("noise")?.unwrap_or(0.0),
            foliage,
        };
        spec.validate()?;
        Ok(spec)
    }
}

const SPEC_KEYS: [&str; 8] = [
    "seed",
    "stem_height",
    "stem_radius",
    "leaves_per_tip",
    "leaf_radius",
    "density",
    "noise",
    "foliage",
];

/// Per-point labels as text, one `0` (wood) or `1` (leaf) per line.
pub fn write_labels(labels: &[bool]) -> String {
    let mut out = String::with_capacity(labels.len() * 2);
    for &l in labels {
        out.push(if l { '1' } else { '0' });
        out.push('\n');
    }
    out
}

pub fn parse_labels(text: &str) -> Result<Vec<bool>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| match l.trim() {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(Error::parse(i + 1, format!("label must be 0 or 1, got `{other}`"))),
        })
        .collect()
}
