//! Shared domain types and frame conventions.
//!
//! Conventions used throughout the crate:
//!
//! * Quaternions are written `(w, x, y, z)`. Parsers that read other
//!   orders (TUM stores `qx qy qz qw`) convert on ingest.
//! * Every trajectory, cloud and framed transform carries a string frame
//!   tag (`"M1"`, `"E"`, `"F_s1_p03"`, ...). Operations that move data
//!   between frames check the tags.
//! * `+z` is gravity-aligned up in every map frame.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Timestamped rigid pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub timestamp: f64,
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vec3,
}

impl Pose {
    pub fn new(timestamp: f64, rotation: UnitQuaternion<f64>, translation: Vec3) -> Result<Self> {
        if !timestamp.is_finite() {
            return Err(Error::Invalid(format!("non-finite timestamp {timestamp}")));
        }
        if !translation.iter().all(|c| c.is_finite()) {
            return Err(Error::Invalid("non-finite translation".into()));
        }
        Ok(Pose {
            timestamp,
            rotation,
            translation,
        })
    }

    /// Builds a pose from a `(w, x, y, z)` quaternion whose norm must be
    /// within `1e-9` of one.
    pub fn from_wxyz(timestamp: f64, wxyz: [f64; 4], translation: Vec3) -> Result<Self> {
        let q = Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        if (q.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!(
                "quaternion norm {} is not unit",
                q.norm()
            )));
        }
        Pose::new(timestamp, UnitQuaternion::new_normalize(q), translation)
    }

    pub fn identity_at(timestamp: f64) -> Self {
        Pose {
            timestamp,
            rotation: UnitQuaternion::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Quaternion as `(w, x, y, z)`.
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }
}

/// Ordered poses expressed in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    frame_id: String,
    poses: Vec<Pose>,
}

impl Trajectory {
    pub fn new(frame_id: impl Into<String>, poses: Vec<Pose>) -> Result<Self> {
        if poses.is_empty() {
            return Err(Error::Invalid("trajectory needs at least one pose".into()));
        }
        check_increasing(poses.iter().map(|p| p.timestamp))?;
        Ok(Trajectory {
            frame_id: frame_id.into(),
            poses,
        })
    }

    pub fn frame_id(&self) -> &str {
        &self.frame_id
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.poses.iter().map(|p| p.translation).collect()
    }

    /// First and last timestamps.
    pub fn span(&self) -> (f64, f64) {
        (
            self.poses[0].timestamp,
            self.poses[self.poses.len() - 1].timestamp,
        )
    }

    /// Index of the pose closest in time to `t` and the absolute gap.
    /// Ties go to the earlier pose.
    pub fn nearest(&self, t: f64) -> (usize, f64) {
        nearest_time(&self.poses, t, |p| p.timestamp)
    }

    /// Same trajectory re-tagged with another frame.
    pub fn with_frame(self, frame_id: impl Into<String>) -> Self {
        Trajectory {
            frame_id: frame_id.into(),
            poses: self.poses,
        }
    }
}

pub(crate) fn nearest_time<T>(items: &[T], t: f64, time: impl Fn(&T) -> f64) -> (usize, f64) {
    let idx = items.partition_point(|x| time(x) < t);
    let mut best = (usize::MAX, f64::INFINITY);
    for i in [idx.wrapping_sub(1), idx] {
        if let Some(item) = items.get(i) {
            let gap = (time(item) - t).abs();
            if gap < best.1 || (gap == best.1 && i < best.0) {
                best = (i, gap);
            }
        }
    }
    best
}

fn check_increasing(ts: impl Iterator<Item = f64>) -> Result<()> {
    let mut prev: Option<f64> = None;
    for (index, t) in ts.enumerate() {
        if !t.is_finite() {
            return Err(Error::Invalid(format!("non-finite timestamp at index {index}")));
        }
        if let Some(p) = prev {
            if t <= p {
                return Err(Error::NonIncreasingTimestamps {
                    index,
                    previous: p,
                    current: t,
                });
            }
        }
        prev = Some(t);
    }
    Ok(())
}

/// WGS84 fix in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoFix {
    pub timestamp: f64,
    pub latitude: f64,
    pub longitude: f64,
    /// Ellipsoidal height in metres, when the receiver reported one.
    pub altitude: Option<f64>,
}

impl GeoFix {
    pub fn new(timestamp: f64, latitude: f64, longitude: f64, altitude: Option<f64>) -> Result<Self> {
        if !latitude.is_finite() || latitude.abs() > 90.0 {
            return Err(Error::Invalid(format!("latitude {latitude} outside [-90, 90]")));
        }
        if !longitude.is_finite() || longitude.abs() > 180.0 {
            return Err(Error::Invalid(format!(
                "longitude {longitude} outside [-180, 180]"
            )));
        }
        if !timestamp.is_finite() || altitude.is_some_and(|a| !a.is_finite()) {
            return Err(Error::Invalid("non-finite fix".into()));
        }
        Ok(GeoFix {
            timestamp,
            latitude,
            longitude,
            altitude,
        })
    }

    pub fn alt(&self) -> f64 {
        self.altitude.unwrap_or(0.0)
    }
}

/// GNSS fixes plus the anchor used as the local ENU origin.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoTrack {
    fixes: Vec<GeoFix>,
    anchor: GeoFix,
}

impl GeoTrack {
    /// The anchor defaults to the first fix.
    pub fn new(fixes: Vec<GeoFix>, anchor: Option<GeoFix>) -> Result<Self> {
        let first = *fixes
            .first()
            .ok_or_else(|| Error::Invalid("GNSS track has no fixes".into()))?;
        check_increasing(fixes.iter().map(|f| f.timestamp))?;
        Ok(GeoTrack {
            anchor: anchor.unwrap_or(first),
            fixes,
        })
    }

    pub fn fixes(&self) -> &[GeoFix] {
        &self.fixes
    }

    pub fn anchor(&self) -> &GeoFix {
        &self.anchor
    }

    pub fn with_anchor(mut self, anchor: GeoFix) -> Self {
        self.anchor = anchor;
        self
    }

    /// Shifts every fix timestamp by `offset` seconds (clock alignment).
    pub fn shifted(mut self, offset: f64) -> Self {
        for f in &mut self.fixes {
            f.timestamp += offset;
        }
        self
    }
}

/// `p ↦ s·R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    scale: f64,
    rotation: UnitQuaternion<f64>,
    translation: Vec3,
}

impl Default for SimilarityTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl SimilarityTransform {
    pub fn new(scale: f64, rotation: UnitQuaternion<f64>, translation: Vec3) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Invalid(format!("scale must be positive, got {scale}")));
        }
        if !translation.iter().all(|c| c.is_finite()) {
            return Err(Error::Invalid("non-finite translation".into()));
        }
        Ok(SimilarityTransform {
            scale,
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        SimilarityTransform {
            scale: 1.0,
            rotation: UnitQuaternion::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Rigid rotation about +z followed by a translation.
    pub fn planar(yaw: f64, translation: Vec3) -> Self {
        SimilarityTransform {
            scale: 1.0,
            rotation: UnitQuaternion::from_axis_angle(&Vec3::z_axis(), yaw),
            translation,
        }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p * self.scale + self.translation
    }

    /// Maps a pose: rotation composed on the left, position transformed.
    pub fn apply_pose(&self, pose: &Pose) -> Pose {
        Pose {
            timestamp: pose.timestamp,
            rotation: self.rotation * pose.rotation,
            translation: self.apply(&pose.translation),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &SimilarityTransform) -> SimilarityTransform {
        SimilarityTransform {
            scale: self.scale * other.scale,
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation * self.scale + self.translation,
        }
    }

    pub fn inverse(&self) -> SimilarityTransform {
        let rot_inv = self.rotation.inverse();
        let scale = 1.0 / self.scale;
        SimilarityTransform {
            scale,
            rotation: rot_inv,
            translation: -(rot_inv * self.translation) * scale,
        }
    }
}

/// `a ∘ b`.
pub fn compose(a: &SimilarityTransform, b: &SimilarityTransform) -> SimilarityTransform {
    a.compose(b)
}

/// `s·R·p + t`.
pub fn apply(t: &SimilarityTransform, p: &Vec3) -> Vec3 {
    t.apply(p)
}

/// A similarity transform tagged with the frames it maps between.
#[derive(Debug, Clone, PartialEq)]
pub struct FramedTransform {
    pub transform: SimilarityTransform,
    pub source_frame: String,
    pub target_frame: String,
}

impl FramedTransform {
    pub fn new(
        transform: SimilarityTransform,
        source_frame: impl Into<String>,
        target_frame: impl Into<String>,
    ) -> Self {
        FramedTransform {
            transform,
            source_frame: source_frame.into(),
            target_frame: target_frame.into(),
        }
    }

    /// `self ∘ other`; `other` must land in this transform's source frame.
    pub fn then_after(&self, other: &FramedTransform) -> Result<FramedTransform> {
        check_frame(&self.source_frame, &other.target_frame)?;
        Ok(FramedTransform {
            transform: self.transform.compose(&other.transform),
            source_frame: other.source_frame.clone(),
            target_frame: self.target_frame.clone(),
        })
    }

    pub fn inverse(&self) -> FramedTransform {
        FramedTransform {
            transform: self.transform.inverse(),
            source_frame: self.target_frame.clone(),
            target_frame: self.source_frame.clone(),
        }
    }

    pub fn apply_trajectory(&self, traj: &Trajectory) -> Result<Trajectory> {
        check_frame(&self.source_frame, traj.frame_id())?;
        let poses = traj
            .poses()
            .iter()
            .map(|p| self.transform.apply_pose(p))
            .collect();
        Trajectory::new(self.target_frame.clone(), poses)
    }
}

pub(crate) fn check_frame(expected: &str, found: &str) -> Result<()> {
    if expected != found {
        return Err(Error::FrameMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        });
    }
    Ok(())
}

pub type Rgb = [u8; 3];

/// XYZ points with optional 8-bit colours, tagged with a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
    colors: Option<Vec<Rgb>>,
    frame_id: String,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>, colors: Option<Vec<Rgb>>, frame_id: impl Into<String>) -> Result<Self> {
        if let Some(c) = &colors {
            if c.len() != points.len() {
                return Err(Error::Invalid(format!(
                    "{} colours for {} points",
                    c.len(),
                    points.len()
                )));
            }
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::Invalid(format!("point {i} has non-finite coordinates")));
        }
        Ok(PointCloud {
            points,
            colors,
            frame_id: frame_id.into(),
        })
    }

    pub fn empty(frame_id: impl Into<String>) -> Self {
        PointCloud {
            points: Vec::new(),
            colors: None,
            frame_id: frame_id.into(),
        }
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn colors(&self) -> Option<&[Rgb]> {
        self.colors.as_deref()
    }

    pub fn frame_id(&self) -> &str {
        &self.frame_id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn with_frame(mut self, frame_id: impl Into<String>) -> Self {
        self.frame_id = frame_id.into();
        self
    }

    /// Sub-cloud made of the given indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            colors: self
                .colors
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i]).collect()),
            frame_id: self.frame_id.clone(),
        }
    }

    pub fn centroid(&self) -> Option<Vec3> {
        if self.points.is_empty() {
            return None;
        }
        let sum: Vec3 = self.points.iter().sum();
        Some(sum / self.points.len() as f64)
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        bounds(&self.points)
    }

    pub fn into_parts(self) -> (Vec<Vec3>, Option<Vec<Rgb>>, String) {
        (self.points, self.colors, self.frame_id)
    }
}

pub(crate) fn bounds(points: &[Vec3]) -> Option<(Vec3, Vec3)> {
    let first = points.first()?;
    Some(points.iter().fold((*first, *first), |(lo, hi), p| {
        (lo.inf(p), hi.sup(p))
    }))
}

/// Length of the bounding-box diagonal; zero for empty input.
pub fn bbox_diagonal(points: &[Vec3]) -> f64 {
    bounds(points).map_or(0.0, |(lo, hi)| (hi - lo).norm())
}

/// Skeleton graph: 3-D vertices, undirected edges, and a root vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonGraph {
    vertices: Vec<Vec3>,
    edges: Vec<(usize, usize)>,
    root: usize,
}

impl SkeletonGraph {
    /// Checks indices, self-loops and duplicate edges. Edges are stored
    /// with the smaller index first.
    pub fn new(vertices: Vec<Vec3>, edges: Vec<(usize, usize)>, root: usize) -> Result<Self> {
        let n = vertices.len();
        if root >= n {
            return Err(Error::Invalid(format!("root {root} out of range for {n} vertices")));
        }
        let mut seen = std::collections::HashSet::with_capacity(edges.len());
        let mut normalised = Vec::with_capacity(edges.len());
        for &(a, b) in &edges {
            if a >= n || b >= n {
                return Err(Error::Invalid(format!("edge ({a}, {b}) out of range")));
            }
            if a == b {
                return Err(Error::Invalid(format!("self-loop at vertex {a}")));
            }
            let e = (a.min(b), a.max(b));
            if !seen.insert(e) {
                return Err(Error::Invalid(format!("duplicate edge ({a}, {b})")));
            }
            normalised.push(e);
        }
        Ok(SkeletonGraph {
            vertices,
            edges: normalised,
            root,
        })
    }

    /// Like [`SkeletonGraph::new`], but also requires a tree rooted at the
    /// lowest vertex.
    pub fn tree(vertices: Vec<Vec3>, edges: Vec<(usize, usize)>, root: usize) -> Result<Self> {
        let g = SkeletonGraph::new(vertices, edges, root)?;
        if !g.is_tree() {
            return Err(Error::Invalid("skeleton is not a tree".into()));
        }
        let min_z = g.vertices.iter().map(|v| v.z).fold(f64::INFINITY, f64::min);
        if g.vertices[root].z > min_z {
            return Err(Error::Invalid("root is not the lowest vertex".into()));
        }
        Ok(g)
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.vertices.len()];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    /// Sorted neighbour lists.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Connected and acyclic.
    pub fn is_tree(&self) -> bool {
        let n = self.vertices.len();
        if self.edges.len() + 1 != n {
            return false;
        }
        let mut uf = crate::skeleton::UnionFind::new(n);
        self.edges.iter().all(|&(a, b)| uf.union(a, b))
    }

    pub fn edge_length(&self, (a, b): (usize, usize)) -> f64 {
        (self.vertices[a] - self.vertices[b]).norm()
    }

    pub fn total_length(&self) -> f64 {
        self.edges.iter().map(|&e| self.edge_length(e)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn rz(deg: f64) -> UnitQuaternion<f64> {
        UnitQuaternion::from_axis_angle(&Vec3::z_axis(), deg.to_radians())
    }

    fn random_transform(rng: &mut ChaCha8Rng) -> SimilarityTransform {
        let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let rot = UnitQuaternion::from_scaled_axis(axis * 2.0);
        let t = Vec3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
        SimilarityTransform::new(rng.random_range(0.1..10.0), rot, t).unwrap()
    }

    #[test]
    fn compose_identities() {
        let id = SimilarityTransform::identity();
        assert_eq!(compose(&id, &id), id);
    }

    #[test]
    fn compose_scalar_example() {
        let a = SimilarityTransform::new(2.0, UnitQuaternion::identity(), Vec3::zeros()).unwrap();
        let b = SimilarityTransform::new(3.0, UnitQuaternion::identity(), Vec3::new(1.0, 0.0, 0.0)).unwrap();
        let c = compose(&a, &b);
        assert_eq!(c.scale(), 6.0);
        assert_eq!(*c.translation(), Vec3::new(2.0, 0.0, 0.0));
    }

    #[test]
    fn compose_with_inverse_is_identity_on_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let t = random_transform(&mut rng);
            let id = compose(&t, &t.inverse());
            let mut worst: f64 = 0.0;
            for _ in 0..100 {
                let p = Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
                worst = worst.max((apply(&id, &p) - p).norm());
            }
            assert!(worst < 1e-12, "deviation {worst}");
            assert_relative_eq!(id.scale(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn apply_examples() {
        let p = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(apply(&SimilarityTransform::identity(), &p), p);

        let t = SimilarityTransform::new(1.0, UnitQuaternion::from_axis_angle(&Vec3::z_axis(), FRAC_PI_2), Vec3::zeros()).unwrap();
        let q = apply(&t, &Vec3::new(1.0, 0.0, 0.0));
        assert!((q - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-15);

        // Computed by hand: Rz(30°)·(1,1,1) = (cos30 − sin30, sin30 + cos30, 1)
        // = (0.3660254037844386, 1.3660254037844386, 1), times 2.5, plus (1,2,3).
        let t = SimilarityTransform::new(2.5, rz(30.0), Vec3::new(1.0, 2.0, 3.0)).unwrap();
        let q = apply(&t, &Vec3::new(1.0, 1.0, 1.0));
        let expected = Vec3::new(1.9150635094610965, 5.4150635094610965, 5.5);
        assert!((q - expected).norm() < 1e-12, "{q}");
    }

    #[test]
    fn scale_must_be_positive() {
        assert!(SimilarityTransform::new(0.0, UnitQuaternion::identity(), Vec3::zeros()).is_err());
        assert!(SimilarityTransform::new(-1.0, UnitQuaternion::identity(), Vec3::zeros()).is_err());
    }

    #[test]
    fn trajectory_rejects_non_increasing() {
        let poses = vec![Pose::identity_at(0.0), Pose::identity_at(1.0), Pose::identity_at(1.0)];
        assert!(matches!(
            Trajectory::new("M1", poses),
            Err(Error::NonIncreasingTimestamps { index: 2, .. })
        ));
        assert!(Trajectory::new("M1", vec![]).is_err());
    }

    #[test]
    fn nearest_prefers_earlier_on_tie() {
        let poses: Vec<_> = (0..4).map(|i| Pose::identity_at(i as f64)).collect();
        let traj = Trajectory::new("M1", poses).unwrap();
        assert_eq!(traj.nearest(1.5), (1, 0.5));
        assert_eq!(traj.nearest(-3.0), (0, 3.0));
        assert_eq!(traj.nearest(9.0), (3, 6.0));
        assert_eq!(traj.nearest(2.2).0, 2);
    }

    #[test]
    fn framed_transform_checks_frames() {
        let a = FramedTransform::new(SimilarityTransform::identity(), "F", "M1");
        let b = FramedTransform::new(SimilarityTransform::identity(), "M1", "E");
        assert!(b.then_after(&a).is_ok());
        assert!(matches!(a.then_after(&b), Err(Error::FrameMismatch { .. })));
    }

    #[test]
    fn skeleton_graph_validation() {
        let v = vec![Vec3::zeros(), Vec3::z(), Vec3::z() * 2.0];
        assert!(SkeletonGraph::tree(v.clone(), vec![(0, 1), (1, 2)], 0).is_ok());
        assert!(SkeletonGraph::new(v.clone(), vec![(0, 0)], 0).is_err());
        assert!(SkeletonGraph::new(v.clone(), vec![(0, 1), (1, 0)], 0).is_err());
        assert!(SkeletonGraph::tree(v.clone(), vec![(0, 1)], 0).is_err());
        assert!(SkeletonGraph::tree(v, vec![(0, 1), (1, 2)], 2).is_err());
    }

    fn arb_transform() -> impl Strategy<Value = SimilarityTransform> {
        (
            0.05f64..20.0,
            prop::array::uniform3(-3.0f64..3.0),
            prop::array::uniform3(-100.0f64..100.0),
        )
            .prop_map(|(s, axis, t)| {
                SimilarityTransform::new(s, UnitQuaternion::from_scaled_axis(Vec3::from(axis)), Vec3::from(t)).unwrap()
            })
    }

    proptest! {
        #[test]
        fn compose_matches_sequential_application(
            a in arb_transform(),
            b in arb_transform(),
            p in prop::array::uniform3(-10.0f64..10.0),
        ) {
            let p = Vec3::from(p);
            let lhs = apply(&compose(&a, &b), &p);
            let rhs = apply(&a, &apply(&b, &p));
            let tol = 1e-10 * (1.0 + rhs.norm());
            prop_assert!((lhs - rhs).norm() <= tol, "{} vs {}", lhs, rhs);
        }

        #[test]
        fn apply_scales_distances(
            t in arb_transform(),
            p in prop::array::uniform3(-10.0f64..10.0),
            q in prop::array::uniform3(-10.0f64..10.0),
        ) {
            let (p, q) = (Vec3::from(p), Vec3::from(q));
            let d = (p - q).norm();
            prop_assume!(d > 1e-6);
            let mapped = (apply(&t, &p) - apply(&t, &q)).norm();
            prop_assert!(((mapped - t.scale() * d) / (t.scale() * d)).abs() < 1e-10);
        }
    }
}
