//! Leaf/wood segmentation from an over-skeletonised cloud.
//!
//! Contracting a full-resolution cloud makes every leaf cluster sprout its
//! own short terminal branches. Points whose nearest skeleton vertex is a
//! terminal vertex, or lies within `terminal_hops` edges of one, are leaf;
//! everything else is wood.

use std::collections::{HashMap, VecDeque};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{PointCloud, SkeletonGraph};
use crate::spatial::KdTree;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafWoodParams {
    /// Graph distance from a terminal vertex still counted as leaf region.
    pub terminal_hops: usize,
    /// Never label the root or the unbranched chain above it as terminal.
    pub exclude_root_chain: bool,
    /// When set, a point is leaf iff it lies within this distance (metres)
    /// of a terminal vertex, replacing nearest-vertex assignment.
    pub radius: Option<f64>,
}

impl Default for LeafWoodParams {
    fn default() -> Self {
        LeafWoodParams {
            terminal_hops: 1,
            exclude_root_chain: true,
            radius: None,
        }
    }
}

impl LeafWoodParams {
    pub const KEYS: [&'static str; 3] = ["terminal_hops", "exclude_root_chain", "radius"];

    pub fn validate(&self) -> Result<()> {
        match self.radius {
            Some(r) if !(r.is_finite() && r > 0.0) => {
                Err(Error::Config(format!("segment radius must be positive, got {r}")))
            }
            _ => Ok(()),
        }
    }

    /// Sets one parameter by name; returns `false` for an unknown key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let bad = |e: &dyn std::fmt::Display| Error::Config(format!("`{key}`: {e}"));
        match key {
            "terminal_hops" => self.terminal_hops = value.parse().map_err(|e| bad(&e))?,
            "exclude_root_chain" => self.exclude_root_chain = value.parse().map_err(|e| bad(&e))?,
            "radius" => {
                self.radius = match value {
                    "" | "none" => None,
                    v => Some(v.parse().map_err(|e| bad(&e))?),
                }
            }
            _ => return Ok(false),
        }
        self.validate()?;
        Ok(true)
    }
}

/// Disjoint leaf and wood subsets of a source cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub leaf: PointCloud,
    pub wood: PointCloud,
    /// Ascending indices into the source cloud.
    pub leaf_indices: Vec<usize>,
    /// Ascending indices into the source cloud.
    pub wood_indices: Vec<usize>,
    /// Set when the skeleton had no terminal vertex and every point is wood.
    pub no_terminals: bool,
}

impl Segmentation {
    /// Per-point leaf mask over the source cloud.
    pub fn leaf_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.leaf_indices.len() + self.wood_indices.len()];
        for &i in &self.leaf_indices {
            mask[i] = true;
        }
        mask
    }

    /// Rebuilds a segmentation from a per-point leaf mask.
    pub fn from_mask(cloud: &PointCloud, is_leaf: &[bool]) -> Result<Segmentation> {
        if is_leaf.len() != cloud.len() {
            return Err(Error::Invalid(format!("{} labels for {} points", is_leaf.len(), cloud.len())));
        }
        Ok(split(cloud, is_leaf, false))
    }

    /// Rebuilds a segmentation from separately stored leaf and wood clouds by
    /// matching their points bit-exactly against `cloud`. Duplicated points
    /// are matched in order.
    pub fn from_parts(cloud: &PointCloud, leaf: &PointCloud, wood: &PointCloud) -> Result<Segmentation> {
        if leaf.len() + wood.len() != cloud.len() {
            return Err(Error::Invalid(format!(
                "{} leaf and {} wood points for a cloud of {}",
                leaf.len(),
                wood.len(),
                cloud.len()
            )));
        }
        let key = |p: &crate::model::Vec3| [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()];
        let mut slots: HashMap<[u64; 3], VecDeque<usize>> = HashMap::new();
        for (i, p) in cloud.points().iter().enumerate() {
            slots.entry(key(p)).or_default().push_back(i);
        }
        let mut is_leaf = vec![false; cloud.len()];
        for (part, label) in [(leaf, true), (wood, false)] {
            for p in part.points() {
                let i = slots
                    .get_mut(&key(p))
                    .and_then(VecDeque::pop_front)
                    .ok_or_else(|| Error::Invalid(format!("point ({}, {}, {}) is not in the cloud", p.x, p.y, p.z)))?;
                is_leaf[i] = label;
            }
        }
        Ok(split(cloud, &is_leaf, false))
    }
}

/// Vertices joined to the root through vertices of degree ≤ 2, stopping
/// before the first fork. On an unbranched skeleton this is every vertex.
fn root_chain(adjacency: &[Vec<usize>], root: usize) -> Vec<bool> {
    let mut in_chain = vec![false; adjacency.len()];
    in_chain[root] = true;
    let mut stack = vec![root];
    while let Some(v) = stack.pop() {
        if v != root && adjacency[v].len() > 2 {
            in_chain[v] = false;
            continue;
        }
        for &w in &adjacency[v] {
            if !in_chain[w] {
                in_chain[w] = true;
                stack.push(w);
            }
        }
    }
    in_chain
}

/// Degree-1 vertices, dilated by `terminal_hops` edges, returned ascending.
///
/// With `exclude_root_chain` the root and the unbranched chain leading from
/// it are never terminal, so a bare stem has no leaf region. Without it the
/// root counts like any other degree-1 vertex.
pub fn find_terminal_vertices(skel: &SkeletonGraph, params: &LeafWoodParams) -> Vec<usize> {
    let adjacency = skel.adjacency();
    let excluded = if params.exclude_root_chain {
        root_chain(&adjacency, skel.root())
    } else {
        vec![false; adjacency.len()]
    };
    let mut hops = vec![usize::MAX; skel.vertex_count()];
    let mut queue = VecDeque::new();
    for (v, nb) in adjacency.iter().enumerate() {
        if nb.len() == 1 && !excluded[v] {
            hops[v] = 0;
            queue.push_back(v);
        }
    }
    while let Some(v) = queue.pop_front() {
        if hops[v] == params.terminal_hops {
            continue;
        }
        for &w in &adjacency[v] {
            if hops[w] == usize::MAX && !excluded[w] {
                hops[w] = hops[v] + 1;
                queue.push_back(w);
            }
        }
    }
    (0..hops.len()).filter(|&v| hops[v] != usize::MAX).collect()
}

fn terminal_mask(skel: &SkeletonGraph, params: &LeafWoodParams) -> Result<Vec<bool>> {
    params.validate()?;
    let mut mask = vec![false; skel.vertex_count()];
    for v in find_terminal_vertices(skel, params) {
        mask[v] = true;
    }
    Ok(mask)
}

fn split(cloud: &PointCloud, is_leaf: &[bool], no_terminals: bool) -> Segmentation {
    let (leaf_indices, wood_indices): (Vec<usize>, Vec<usize>) = (0..cloud.len()).partition(|&i| is_leaf[i]);
    Segmentation {
        leaf: cloud.select(&leaf_indices),
        wood: cloud.select(&wood_indices),
        leaf_indices,
        wood_indices,
        no_terminals,
    }
}

/// Splits `cloud` into leaf and wood points using a skeleton built from the
/// same cloud at full resolution. Each point takes its Euclidean nearest
/// vertex, ties to the lowest index.
pub fn segment_leaf_wood(cloud: &PointCloud, skel: &SkeletonGraph, params: &LeafWoodParams) -> Result<Segmentation> {
    let terminal = terminal_mask(skel, params)?;
    let no_terminals = !terminal.contains(&true);
    let is_leaf: Vec<bool> = if no_terminals {
        vec![false; cloud.len()]
    } else if let Some(r) = params.radius {
        let tips: Vec<_> = (0..terminal.len()).filter(|&v| terminal[v]).map(|v| skel.vertices()[v]).collect();
        let tree = KdTree::new(&tips);
        cloud
            .points()
            .par_iter()
            .map(|p| tree.nearest(p).is_some_and(|(_, d)| d <= r))
            .collect()
    } else {
        let tree = KdTree::new(skel.vertices());
        cloud
            .points()
            .par_iter()
            .map(|p| terminal[tree.nearest(p).expect("skeleton has vertices").0])
            .collect()
    };
    Ok(split(cloud, &is_leaf, no_terminals))
}

/// Like [`segment_leaf_wood`], but each point takes the vertex its
/// contracted image was sampled into (see [`Extraction::assignment`]).
/// Points without a vertex are wood.
///
/// This follows the point through contraction: the surface of a leaf
/// cluster lies closer to the branch entering it than to the cluster's own
/// collapsed centre, so Euclidean assignment hands it to the branch.
///
/// [`Extraction::assignment`]: crate::skeleton::Extraction::assignment
pub fn segment_with_assignment(
    cloud: &PointCloud,
    skel: &SkeletonGraph,
    assignment: &[Option<usize>],
    params: &LeafWoodParams,
) -> Result<Segmentation> {
    if assignment.len() != cloud.len() {
        return Err(Error::Invalid(format!(
            "assignment covers {} points, cloud has {}",
            assignment.len(),
            cloud.len()
        )));
    }
    if let Some(v) = assignment.iter().flatten().find(|&&v| v >= skel.vertex_count()) {
        return Err(Error::Invalid(format!("assignment names vertex {v} of {}", skel.vertex_count())));
    }
    let terminal = terminal_mask(skel, params)?;
    let is_leaf: Vec<bool> = assignment.iter().map(|a| a.is_some_and(|v| terminal[v])).collect();
    Ok(split(cloud, &is_leaf, !terminal.contains(&true)))
}

/// `N_leaf / N_wood`.
pub fn leaf_wood_ratio(seg: &Segmentation) -> Result<f64> {
    ratio(seg.leaf_indices.len(), seg.wood_indices.len())
}

pub fn ratio(n_leaf: usize, n_wood: usize) -> Result<f64> {
    if n_wood == 0 {
        return Err(Error::UndefinedRatio);
    }
    Ok(n_leaf as f64 / n_wood as f64)
}

/// Point-level precision and recall of a predicted leaf mask.
pub fn precision_recall(predicted: &[bool], truth: &[bool]) -> (f64, f64) {
    let tp = predicted.iter().zip(truth).filter(|(&p, &t)| p && t).count() as f64;
    let pp = predicted.iter().filter(|&&p| p).count() as f64;
    let tt = truth.iter().filter(|&&t| t).count() as f64;
    let precision = if pp == 0.0 { 1.0 } else { tp / pp };
    let recall = if tt == 0.0 { 1.0 } else { tp / tt };
    (precision, recall)
}
