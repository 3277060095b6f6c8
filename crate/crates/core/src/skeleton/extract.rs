use std::collections::BTreeSet;

use rayon::prelude::*;

use super::{Contraction, TopologyParams, UnionFind};
use crate::error::{Error, Result};
use crate::model::{bbox_diagonal, SkeletonGraph, Vec3};
use crate::spatial::KdTree;

/// Output of [`extract_skeleton`].
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    /// Minimum spanning tree over the samples, before pruning.
    pub graph: SkeletonGraph,
    /// Vertex of each input point; `None` for points whose sample fell in a
    /// discarded component.
    pub assignment: Vec<Option<usize>>,
    pub sample_radius: f64,
    /// Set when the sample graph was disconnected and only its largest
    /// component was kept.
    pub disconnected: bool,
}

/// Greedy farthest-point sampling seeded at index 0: repeatedly adds the
/// point farthest from all chosen samples (ties to the lowest index) until
/// every point lies within `radius` of a sample.
pub fn farthest_point_sampling(points: &[Vec3], radius: f64) -> Vec<usize> {
    if points.is_empty() {
        return Vec::new();
    }
    let mut dist = vec![f64::INFINITY; points.len()];
    let mut chosen = vec![0usize];
    let mut last = 0usize;
    loop {
        let s = points[last];
        dist.par_iter_mut().zip(points.par_iter()).for_each(|(d, p)| {
            let e = (p - s).norm();
            if e < *d {
                *d = e;
            }
        });
        let (far, d) = dist
            .par_iter()
            .enumerate()
            .map(|(i, &d)| (i, d))
            .reduce(
                || (usize::MAX, f64::NEG_INFINITY),
                |a, b| if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) { b } else { a },
            );
        if d < radius {
            return chosen;
        }
        chosen.push(far);
        last = far;
    }
}

/// Builds the skeleton tree from contracted points.
///
/// Samples are drawn from the contracted points at a radius proportional to
/// the bounding-box diagonal of `original`. Each point joins its nearest
/// sample; two samples are linked when any kNN edge of the original cloud
/// crosses between their point sets. The minimum spanning tree of that
/// graph (by vertex distance) is returned, rooted at its lowest vertex.
pub fn extract_skeleton(contraction: &Contraction, original: &[Vec3], params: &TopologyParams) -> Result<Extraction> {
    params.validate()?;
    let contracted = &contraction.points;
    if contracted.is_empty() || contracted.len() != original.len() {
        return Err(Error::Invalid(format!(
            "contracted set has {} points, original has {}",
            contracted.len(),
            original.len()
        )));
    }
    let radius = params.sample_radius(bbox_diagonal(original));
    let samples = farthest_point_sampling(contracted, radius);
    let sample_pos: Vec<Vec3> = samples.iter().map(|&i| contracted[i]).collect();
    let tree = KdTree::new(&sample_pos);
    let owner: Vec<usize> = contracted
        .par_iter()
        .map(|p| tree.nearest(p).expect("at least one sample").0)
        .collect();

    let m = samples.len();
    let mut sums = vec![(Vec3::zeros(), 0usize); m];
    for (p, &o) in contracted.iter().zip(&owner) {
        sums[o].0 += p;
        sums[o].1 += 1;
    }
    let centres: Vec<Vec3> = sums.iter().map(|(s, n)| s / *n as f64).collect();

    let mut links = BTreeSet::new();
    for (i, nb) in contraction.neighbors.iter().enumerate() {
        for &j in nb {
            let (a, b) = (owner[i], owner[j]);
            if a != b {
                links.insert((a.min(b), a.max(b)));
            }
        }
    }
    let mut candidates: Vec<(f64, usize, usize)> =
        links.into_iter().map(|(a, b)| ((centres[a] - centres[b]).norm(), a, b)).collect();
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));

    let mut uf = UnionFind::new(m);
    let mut mst = Vec::new();
    for (_, a, b) in candidates {
        if uf.union(a, b) {
            mst.push((a, b));
        }
    }

    let mut comp_size = vec![0usize; m];
    let comp: Vec<usize> = (0..m).map(|v| uf.find(v)).collect();
    for &c in &comp {
        comp_size[c] += 1;
    }
    let components = comp_size.iter().filter(|&&s| s > 0).count();
    // Largest component; ties go to the one holding the lowest vertex.
    let keep = (0..m)
        .max_by(|&a, &b| comp_size[comp[a]].cmp(&comp_size[comp[b]]).then(b.cmp(&a)))
        .map(|v| comp[v])
        .expect("m ≥ 1");

    let mut map = vec![None; m];
    let mut vertices = Vec::new();
    for v in 0..m {
        if comp[v] == keep {
            map[v] = Some(vertices.len());
            vertices.push(centres[v]);
        }
    }
    let edges: Vec<(usize, usize)> = mst
        .into_iter()
        .filter_map(|(a, b)| Some((map[a]?, map[b]?)))
        .collect();
    let root = vertices
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.z.total_cmp(&b.1.z).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .expect("non-empty component");
    let graph = SkeletonGraph::tree(vertices, edges, root)?;
    Ok(Extraction {
        graph,
        assignment: owner.iter().map(|&o| map[o]).collect(),
        sample_radius: radius,
        disconnected: components > 1,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{count_bifurcations, knn_graph, SolverKind};
    use super::*;

    fn identity_contraction(points: &[Vec3], k: usize) -> Contraction {
        Contraction {
            points: points.to_vec(),
            displacement: vec![0.0; points.len()],
            neighbors: knn_graph(points, k).unwrap(),
            iterations: 0,
            extent_ratio: 1.0,
            solver: SolverKind::Cholesky,
        }
    }

    #[test]
    fn fps_covers_at_radius() {
        let pts: Vec<Vec3> = (0..101).map(|i| Vec3::new(i as f64 * 0.01, 0.0, 0.0)).collect();
        let s = farthest_point_sampling(&pts, 0.1);
        assert_eq!(s[0], 0);
        assert_eq!(s[1], 100);
        for p in &pts {
            let d = s.iter().map(|&i| (pts[i] - p).norm()).fold(f64::INFINITY, f64::min);
            assert!(d < 0.1);
        }
        for (i, &a) in s.iter().enumerate() {
            for &b in &s[i + 1..] {
                assert!((pts[a] - pts[b]).norm() >= 0.1 - 1e-12);
            }
        }
    }

    #[test]
    fn straight_line_gives_path() {
        let pts: Vec<Vec3> = (0..400).map(|i| Vec3::new(0.0, 0.0, i as f64 * 0.0025)).collect();
        let ex = extract_skeleton(&identity_contraction(&pts, 6), &pts, &TopologyParams::default()).unwrap();
        let g = &ex.graph;
        assert!(g.is_tree());
        assert_eq!(count_bifurcations(g), 0);
        assert!(g.degrees().iter().filter(|&&d| d == 1).count() == 2);
        assert_eq!(g.vertices()[g.root()].z, g.vertices().iter().map(|v| v.z).fold(f64::INFINITY, f64::min));
        assert!(!ex.disconnected);
    }

    #[test]
    fn disconnected_input_keeps_largest_component() {
        let mut pts: Vec<Vec3> = (0..300).map(|i| Vec3::new(0.0, 0.0, i as f64 * 0.003)).collect();
        pts.extend((0..50).map(|i| Vec3::new(5.0, 0.0, i as f64 * 0.003)));
        let ex = extract_skeleton(&identity_contraction(&pts, 6), &pts, &TopologyParams::default()).unwrap();
        assert!(ex.disconnected);
        assert!(ex.graph.is_tree());
        assert!(ex.assignment[299].is_some() && ex.assignment[320].is_none());
    }
}
