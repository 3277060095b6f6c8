//! Curve-skeleton extraction by Laplacian contraction.
//!
//! The pipeline is: optional voxel downsampling, a fixed symmetric kNN
//! graph, iterative contraction of the points towards their medial curve
//! ([`contract`]), farthest-point sampling of the contracted set into
//! skeleton vertices joined along kNN edges and reduced to a minimum
//! spanning tree ([`extract_skeleton`]), and removal of short terminal
//! chains ([`prune`]).
//!
//! Bifurcations are counted as `Σ max(deg − 2, 0)`: an n-way fork counts as
//! n − 2 stacked binary forks.

mod contract;
mod extract;

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;

pub use contract::{contract, contract_with_graph, Contraction, SolverKind};
pub use extract::{extract_skeleton, farthest_point_sampling, Extraction};

use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::model::{PointCloud, Rgb, SkeletonGraph, Vec3};
use crate::spatial::KdTree;

/// Parameters of the contraction iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionParams {
    pub k_neighbors: usize,
    /// Initial contraction weight is this factor times `1 / (10·d̄)`, with
    /// `d̄` the mean kNN distance in metres.
    pub init_contraction_weight_factor: f64,
    pub attraction_weight: f64,
    /// Per-iteration multiplier on the contraction weight.
    pub amplification: f64,
    /// Upper bound on the contraction weight.
    pub contraction_weight_cap: f64,
    /// Upper bound on the per-point attraction growth factor.
    pub attraction_cap: f64,
    pub max_iterations: usize,
    /// Stop once the mean neighbourhood extent falls below this fraction of
    /// its initial value.
    pub convergence_ratio: f64,
    /// Relative residual target of the iterative solver.
    pub solver_tolerance: f64,
    /// Clouds larger than this use conjugate gradients instead of a sparse
    /// Cholesky factorisation.
    pub direct_solver_max_points: usize,
}

impl Default for ContractionParams {
    fn default() -> Self {
        ContractionParams {
            k_neighbors: 16,
            init_contraction_weight_factor: 1.0,
            attraction_weight: 1.0,
            amplification: 3.0,
            contraction_weight_cap: 2048.0,
            attraction_cap: 1e4,
            max_iterations: 20,
            convergence_ratio: 0.01,
            solver_tolerance: 1e-8,
            direct_solver_max_points: 200_000,
        }
    }
}

impl ContractionParams {
    pub const KEYS: [&'static str; 10] = [
        "k_neighbors",
        "init_contraction_weight_factor",
        "attraction_weight",
        "amplification",
        "contraction_weight_cap",
        "attraction_cap",
        "max_iterations",
        "convergence_ratio",
        "solver_tolerance",
        "direct_solver_max_points",
    ];

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("init_contraction_weight_factor", self.init_contraction_weight_factor),
            ("attraction_weight", self.attraction_weight),
            ("amplification", self.amplification),
            ("contraction_weight_cap", self.contraction_weight_cap),
            ("attraction_cap", self.attraction_cap),
            ("solver_tolerance", self.solver_tolerance),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.k_neighbors < 4 {
            return Err(Error::Config(format!("k_neighbors must be at least 4, got {}", self.k_neighbors)));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be positive".into()));
        }
        if !(self.convergence_ratio > 0.0 && self.convergence_ratio < 1.0) {
            return Err(Error::Config(format!(
                "convergence_ratio must lie in (0, 1), got {}",
                self.convergence_ratio
            )));
        }
        Ok(())
    }

    /// Sets one field by name; returns `false` for unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let bad = |e: &dyn std::fmt::Display| Error::Config(format!("`{key}`: {e}"));
        macro_rules! parse {
            ($field:expr) => {
                $field = value.parse().map_err(|e| bad(&e))?
            };
        }
        match key {
            "k_neighbors" => parse!(self.k_neighbors),
            "init_contraction_weight_factor" => parse!(self.init_contraction_weight_factor),
            "attraction_weight" => parse!(self.attraction_weight),
            "amplification" => parse!(self.amplification),
            "contraction_weight_cap" => parse!(self.contraction_weight_cap),
            "attraction_cap" => parse!(self.attraction_cap),
            "max_iterations" => parse!(self.max_iterations),
            "convergence_ratio" => parse!(self.convergence_ratio),
            "solver_tolerance" => parse!(self.solver_tolerance),
            "direct_solver_max_points" => parse!(self.direct_solver_max_points),
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Parameters of skeleton extraction and pruning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopologyParams {
    /// Sample radius as a fraction of the cloud's bounding-box diagonal.
    pub sample_radius_fraction: f64,
    /// Pruning threshold in multiples of the sample radius.
    pub min_branch_length_factor: f64,
}

impl Default for TopologyParams {
    fn default() -> Self {
        TopologyParams {
            sample_radius_fraction: 0.02,
            min_branch_length_factor: 3.0,
        }
    }
}

impl TopologyParams {
    pub const KEYS: [&'static str; 2] = ["sample_radius_fraction", "min_branch_length_factor"];

    pub fn validate(&self) -> Result<()> {
        let f = self.sample_radius_fraction;
        if !(f.is_finite() && f > 0.0) {
            return Err(Error::Config(format!("sample_radius_fraction must be positive, got {f}")));
        }
        let m = self.min_branch_length_factor;
        if !(m.is_finite() && m >= 0.0) {
            return Err(Error::Config(format!("min_branch_length_factor must be non-negative, got {m}")));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let slot = match key {
            "sample_radius_fraction" => &mut self.sample_radius_fraction,
            "min_branch_length_factor" => &mut self.min_branch_length_factor,
            _ => return Ok(false),
        };
        *slot = value
            .parse()
            .map_err(|e| Error::Config(format!("`{key}`: {e}")))?;
        Ok(true)
    }

    /// Sample radius for a cloud with the given bounding-box diagonal.
    pub fn sample_radius(&self, diagonal: f64) -> f64 {
        self.sample_radius_fraction * diagonal
    }

    /// Pruning length for a cloud with the given bounding-box diagonal.
    pub fn min_branch_length(&self, diagonal: f64) -> f64 {
        self.min_branch_length_factor * self.sample_radius(diagonal)
    }
}

/// Applies every `key=value` entry of a parameter file to the two parameter
/// sets. Keys may carry a `skeleton.` or `topology.` prefix; unknown keys
/// are rejected.
pub fn params_from_kv(kv: &KeyValues) -> Result<(ContractionParams, TopologyParams)> {
    let mut c = ContractionParams::default();
    let mut t = TopologyParams::default();
    for key in kv.keys() {
        let value = kv.get(key).unwrap_or_default();
        let known = match key.split_once('.') {
            Some(("skeleton", k)) => c.set(k, value)?,
            Some(("topology", k)) => t.set(k, value)?,
            Some(_) => false,
            None => c.set(key, value)? || t.set(key, value)?,
        };
        if !known {
            return Err(Error::Config(format!("unknown parameter `{key}`")));
        }
    }
    c.validate()?;
    t.validate()?;
    Ok((c, t))
}

/// One point per occupied voxel of side `voxel`, at the centroid of its
/// members; colours are averaged. Output order follows the first member of
/// each voxel.
pub fn voxel_downsample(cloud: &PointCloud, voxel: f64) -> Result<PointCloud> {
    if !(voxel.is_finite() && voxel > 0.0) {
        return Err(Error::Invalid(format!("voxel size must be positive, got {voxel}")));
    }
    let mut slots: HashMap<[i64; 3], usize> = HashMap::new();
    let mut sums: Vec<(Vec3, [u64; 3], usize)> = Vec::new();
    let colors = cloud.colors();
    for (i, p) in cloud.points().iter().enumerate() {
        let key = [
            (p.x / voxel).floor() as i64,
            (p.y / voxel).floor() as i64,
            (p.z / voxel).floor() as i64,
        ];
        let slot = *slots.entry(key).or_insert_with(|| {
            sums.push((Vec3::zeros(), [0; 3], 0));
            sums.len() - 1
        });
        let entry = &mut sums[slot];
        entry.0 += p;
        if let Some(c) = colors {
            for (acc, &v) in entry.1.iter_mut().zip(&c[i]) {
                *acc += u64::from(v);
            }
        }
        entry.2 += 1;
    }
    let points = sums.iter().map(|(s, _, n)| s / *n as f64).collect();
    let out_colors = colors.map(|_| {
        sums.iter()
            .map(|(_, c, n)| {
                let n = *n as u64;
                let avg = |v: u64| ((v + n / 2) / n) as u8;
                [avg(c[0]), avg(c[1]), avg(c[2])] as Rgb
            })
            .collect()
    });
    PointCloud::new(points, out_colors, cloud.frame_id())
}

/// Symmetric kNN adjacency: each point is linked to its `k` nearest other
/// points and the relation is closed under symmetry. Lists are sorted.
pub fn knn_graph(points: &[Vec3], k: usize) -> Result<Vec<Vec<usize>>> {
    if points.len() <= k {
        return Err(Error::TooFewPoints { found: points.len(), required: k + 1 });
    }
    let tree = KdTree::new(points);
    let directed: Vec<Vec<usize>> = points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            tree.knn(p, k + 1)
                .into_iter()
                .map(|(j, _)| j)
                .filter(|&j| j != i)
                .take(k)
                .collect()
        })
        .collect();
    let mut adj = directed.clone();
    for (i, list) in directed.iter().enumerate() {
        for &j in list {
            adj[j].push(i);
        }
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    Ok(adj)
}

/// Disjoint-set forest with union by size and path halving.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect(), size: vec![1; n] }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Merges the sets of `a` and `b`; `false` if already merged.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] || (self.size[ra] == self.size[rb] && rb < ra) {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }
}

/// Terminal chain from a degree-1 vertex up to (excluding) the first vertex
/// of degree ≥ 3. `None` when the chain contains the root or spans a whole
/// path component.
fn terminal_chain(skel: &SkeletonGraph, adj: &[Vec<usize>], leaf: usize) -> Option<(Vec<usize>, f64)> {
    let root = skel.root();
    let mut chain = vec![leaf];
    let mut length = 0.0;
    let (mut prev, mut cur) = (usize::MAX, leaf);
    loop {
        let next = adj[cur].iter().copied().find(|&v| v != prev)?;
        length += (skel.vertices()[cur] - skel.vertices()[next]).norm();
        if next == root {
            return None;
        }
        match adj[next].len() {
            2 => {
                chain.push(next);
                prev = cur;
                cur = next;
            }
            d if d >= 3 => return Some((chain, length)),
            _ => return None,
        }
    }
}

/// Repeatedly removes the shortest terminal chain shorter than
/// `min_branch_length` (ties to the lowest leaf index) until none remains.
/// Chains containing the root are never removed.
pub fn prune(skel: &SkeletonGraph, min_branch_length: f64) -> SkeletonGraph {
    let mut current = skel.clone();
    loop {
        let adj = current.adjacency();
        let root = current.root();
        let victim = (0..current.vertex_count())
            .filter(|&v| v != root && adj[v].len() == 1)
            .filter_map(|v| terminal_chain(&current, &adj, v))
            .filter(|(_, len)| *len < min_branch_length)
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0[0].cmp(&b.0[0])));
        let Some((chain, _)) = victim else {
            return current;
        };
        current = remove_vertices(&current, &chain);
    }
}

/// Drops the given vertices and their edges, renumbering the rest in order.
pub(crate) fn remove_vertices(skel: &SkeletonGraph, removed: &[usize]) -> SkeletonGraph {
    let mut keep = vec![true; skel.vertex_count()];
    for &v in removed {
        keep[v] = false;
    }
    let mut map = vec![usize::MAX; keep.len()];
    let mut vertices = Vec::new();
    for (i, &k) in keep.iter().enumerate() {
        if k {
            map[i] = vertices.len();
            vertices.push(skel.vertices()[i]);
        }
    }
    let edges = skel
        .edges()
        .iter()
        .filter(|(a, b)| keep[*a] && keep[*b])
        .map(|&(a, b)| (map[a], map[b]))
        .collect();
    SkeletonGraph::new(vertices, edges, map[skel.root()]).expect("subgraph of a valid graph")
}

/// `Σ max(deg − 2, 0)` over all vertices.
pub fn count_bifurcations(skel: &SkeletonGraph) -> usize {
    skel.degrees().iter().map(|&d| d.saturating_sub(2)).sum()
}

/// Serialises as `v x y z` lines, `e i j` lines and a `root K` footer.
pub fn write_skeleton(skel: &SkeletonGraph) -> String {
    let mut out = String::new();
    for v in skel.vertices() {
        out.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
    }
    for (a, b) in skel.edges() {
        out.push_str(&format!("e {a} {b}\n"));
    }
    out.push_str(&format!("root {}\n", skel.root()));
    out
}

pub fn parse_skeleton(text: &str) -> Result<SkeletonGraph> {
    let mut vertices = Vec::new();
    let mut edges = Vec::new();
    let mut root = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::parse(line_no, format!("bad number `{s}`")))
        };
        let idx = |s: &str| -> Result<usize> {
            s.parse::<usize>()
                .map_err(|_| Error::parse(line_no, format!("bad index `{s}`")))
        };
        if root.is_some() {
            return Err(Error::parse(line_no, "content after `root` footer"));
        }
        match fields.as_slice() {
            ["v", x, y, z] => {
                if !edges.is_empty() {
                    return Err(Error::parse(line_no, "vertex after edges"));
                }
                vertices.push(Vec3::new(num(x)?, num(y)?, num(z)?));
            }
            ["e", a, b] => edges.push((idx(a)?, idx(b)?)),
            ["root", k] => root = Some(idx(k)?),
            _ => return Err(Error::parse(line_no, format!("unrecognised line `{line}`"))),
        }
    }
    let root = root.ok_or_else(|| Error::parse(0, "missing `root` footer"))?;
    SkeletonGraph::new(vertices, edges, root)
}

pub fn save_skeleton(path: impl AsRef<Path>, skel: &SkeletonGraph) -> Result<()> {
    crate::ingest::write_text(path.as_ref(), &write_skeleton(skel))
}

pub fn load_skeleton(path: impl AsRef<Path>) -> Result<SkeletonGraph> {
    let path = path.as_ref();
    parse_skeleton(&crate::ingest::read_text(path)?).map_err(|e| e.in_file(path))
}

/// Downsample (when `voxel` is set), contract, extract and prune.
pub fn skeletonize(
    cloud: &PointCloud,
    voxel: Option<f64>,
    contraction: &ContractionParams,
    topology: &TopologyParams,
) -> Result<(SkeletonGraph, Extraction)> {
    let input = match voxel {
        Some(v) => voxel_downsample(cloud, v)?,
        None => cloud.clone(),
    };
    let contracted = contract(&input, contraction)?;
    let extraction = extract_skeleton(&contracted, input.points(), topology)?;
    let diagonal = crate::model::bbox_diagonal(input.points());
    let pruned = prune(&extraction.graph, topology.min_branch_length(diagonal));
    Ok((pruned, extraction))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn path_graph(n: usize) -> SkeletonGraph {
        let v = (0..n).map(|i| Vec3::new(0.0, 0.0, i as f64 * 0.1)).collect();
        let e = (1..n).map(|i| (i - 1, i)).collect();
        SkeletonGraph::tree(v, e, 0).unwrap()
    }

    /// Stem 0-1-2, branches 2-3-4 and 2-5-6, plus an optional stub at 1.
    fn y_graph(stub: Option<f64>) -> SkeletonGraph {
        let mut v = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(0.0, 0.0, 0.1),
            Vec3::new(0.0, 0.0, 0.2),
            Vec3::new(0.05, 0.0, 0.25),
            Vec3::new(0.1, 0.0, 0.3),
            Vec3::new(-0.05, 0.0, 0.25),
            Vec3::new(-0.1, 0.0, 0.3),
        ];
        let mut e = vec![(0, 1), (1, 2), (2, 3), (3, 4), (2, 5), (5, 6)];
        if let Some(len) = stub {
            v.push(Vec3::new(len, 0.0, 0.1));
            e.push((1, 7));
        }
        SkeletonGraph::tree(v, e, 0).unwrap()
    }

    #[test]
    fn voxel_examples() {
        let cube: Vec<Vec3> = (0..8)
            .map(|i| Vec3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64))
            .collect();
        let cloud = PointCloud::new(cube.clone(), None, "M1").unwrap();
        let same = voxel_downsample(&cloud, 0.5).unwrap();
        assert_eq!(same.points(), &cube[..]);
        let one = voxel_downsample(&cloud, 10.0).unwrap();
        assert_eq!(one.len(), 1);
        assert!((one.points()[0] - Vec3::new(0.5, 0.5, 0.5)).norm() < 1e-15);
        assert!(voxel_downsample(&cloud, 0.0).is_err());
    }

    #[test]
    fn voxel_count_matches_hash_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<Vec3> = (0..20_000)
            .map(|_| Vec3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(0.0..1.0)))
            .collect();
        let cloud = PointCloud::new(pts.clone(), None, "M1").unwrap();
        let voxel = 0.05;
        let oracle: std::collections::BTreeSet<(i64, i64, i64)> = pts
            .iter()
            .map(|p| ((p.x / voxel).floor() as i64, (p.y / voxel).floor() as i64, (p.z / voxel).floor() as i64))
            .collect();
        assert_eq!(voxel_downsample(&cloud, voxel).unwrap().len(), oracle.len());
    }

    #[test]
    fn voxel_colors_are_averaged() {
        let cloud = PointCloud::new(
            vec![Vec3::zeros(), Vec3::new(0.1, 0.0, 0.0)],
            Some(vec![[0, 10, 255], [255, 20, 255]]),
            "M1",
        )
        .unwrap();
        let out = voxel_downsample(&cloud, 1.0).unwrap();
        assert_eq!(out.colors().unwrap(), &[[128, 15, 255]]);
    }

    #[test]
    fn knn_graph_examples() {
        let line = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0)];
        let g = knn_graph(&line, 1).unwrap();
        assert!(g[0].contains(&1) && g[2].contains(&1));
        assert!(knn_graph(&line, 3).is_err());
    }

    #[test]
    fn knn_graph_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Vec3> = (0..500).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        let g = knn_graph(&pts, 8).unwrap();
        let mut oracle = vec![std::collections::BTreeSet::new(); pts.len()];
        for i in 0..pts.len() {
            let mut d: Vec<(f64, usize)> = (0..pts.len())
                .filter(|&j| j != i)
                .map(|j| ((pts[i] - pts[j]).norm_squared(), j))
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for &(_, j) in &d[..8] {
                oracle[i].insert(j);
                oracle[j].insert(i);
            }
        }
        for i in 0..pts.len() {
            assert_eq!(g[i], oracle[i].iter().copied().collect::<Vec<_>>());
        }
    }

    #[test]
    fn union_find_basics() {
        let mut uf = UnionFind::new(4);
        assert!(uf.union(0, 1));
        assert!(uf.union(2, 3));
        assert!(!uf.union(1, 0));
        assert!(uf.union(1, 3));
        assert_eq!(uf.find(0), uf.find(2));
    }

    #[test]
    fn bifurcation_examples() {
        assert_eq!(count_bifurcations(&path_graph(5)), 0);
        assert_eq!(count_bifurcations(&y_graph(None)), 1);
        // Degree-5 vertex on a stem: stem below plus four children.
        let mut v = vec![Vec3::zeros(), Vec3::new(0.0, 0.0, 1.0)];
        let mut e = vec![(0, 1)];
        for i in 0..4 {
            v.push(Vec3::new(i as f64, 1.0, 2.0));
            e.push((1, 2 + i));
        }
        assert_eq!(count_bifurcations(&SkeletonGraph::tree(v, e, 0).unwrap()), 3);
    }

    #[test]
    fn prune_examples() {
        let p = path_graph(6);
        assert_eq!(prune(&p, 10.0), p);

        let stubbed = y_graph(Some(0.001));
        assert_eq!(count_bifurcations(&stubbed), 2);
        let pruned = prune(&stubbed, 0.005);
        assert_eq!(pruned, y_graph(None));

        // With a large threshold the shorter branch goes first; the stem
        // chain holding the root always survives.
        let all = prune(&y_graph(None), 100.0);
        assert!(all.is_tree());
        assert_eq!(count_bifurcations(&all), 0);
        assert_eq!(all.vertex_count(), 5);
    }

    #[test]
    fn skeleton_file_roundtrip_and_errors() {
        let g = y_graph(Some(0.0125));
        assert_eq!(parse_skeleton(&write_skeleton(&g)).unwrap(), g);
        assert!(matches!(parse_skeleton("v 0 0 0\nv 1 0 0\ne 0 1\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse_skeleton("v 0 0 0\nx\nroot 0\n"), Err(Error::Parse { line: 2, .. })));
        assert!(parse_skeleton("v 0 0 0\ne 0 5\nroot 0\n").is_err());
    }

    #[test]
    fn params_parse_and_reject() {
        let kv = KeyValues::parse("skeleton.k_neighbors=12\ntopology.sample_radius_fraction=0.01\n", '=').unwrap();
        let (c, t) = params_from_kv(&kv).unwrap();
        assert_eq!(c.k_neighbors, 12);
        assert_eq!(t.sample_radius_fraction, 0.01);
        let bad = KeyValues::parse("skeleton.bogus=1\n", '=').unwrap();
        assert!(params_from_kv(&bad).is_err());
        let small_k = KeyValues::parse("k_neighbors=3\n", '=').unwrap();
        assert!(params_from_kv(&small_k).is_err());
    }

    fn random_tree(n: usize, seed: u64) -> SkeletonGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = vec![Vec3::zeros()];
        let mut e = Vec::new();
        for i in 1..n {
            let parent = rng.random_range(0..i);
            let p = v[parent] + Vec3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(0.01..0.1));
            v.push(p);
            e.push((parent, i));
        }
        SkeletonGraph::tree(v, e, 0).unwrap()
    }

    proptest! {
        #[test]
        fn prune_is_idempotent(n in 2usize..60, seed in 0u64..1000, threshold in 0.0f64..0.4) {
            let g = random_tree(n, seed);
            let once = prune(&g, threshold);
            prop_assert!(once.is_tree());
            prop_assert_eq!(prune(&once, threshold), once);
        }

        #[test]
        fn skeleton_text_roundtrip(n in 1usize..40, seed in 0u64..1000) {
            let g = random_tree(n, seed);
            prop_assert_eq!(parse_skeleton(&write_skeleton(&g)).unwrap(), g);
        }
    }
}
