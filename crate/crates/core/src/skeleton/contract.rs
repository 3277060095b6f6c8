use faer::dyn_stack::{MemBuffer, MemStack, StackReq};
use faer::linalg::cholesky::llt::factor::LltRegularization;
use faer::sparse::linalg::cholesky::{
    factorize_symbolic_cholesky, CholeskySymbolicParams, SymbolicCholesky, SymmetricOrdering,
};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{Conj, Mat, Par, Side};
use rayon::prelude::*;

use super::{knn_graph, ContractionParams};
use crate::error::{Error, Result};
use crate::model::{PointCloud, Vec3};

/// Which linear solver handled the normal equations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Cholesky,
    ConjugateGradient,
}

/// Output of [`contract`]; all per-point arrays follow input order.
#[derive(Debug, Clone, PartialEq)]
pub struct Contraction {
    pub points: Vec<Vec3>,
    /// Distance each point moved.
    pub displacement: Vec<f64>,
    /// The fixed kNN adjacency of the input cloud.
    pub neighbors: Vec<Vec<usize>>,
    pub iterations: usize,
    /// Final mean neighbourhood extent relative to the initial one.
    pub extent_ratio: f64,
    pub solver: SolverKind,
}

/// Umbrella Laplacian rows: `L_ii = −1`, `L_ij = 1/deg(i)` for neighbours.
struct Laplacian<'a> {
    neighbors: &'a [Vec<usize>],
    inv_deg: Vec<f64>,
}

impl<'a> Laplacian<'a> {
    fn new(neighbors: &'a [Vec<usize>]) -> Self {
        let inv_deg = neighbors.iter().map(|n| 1.0 / n.len() as f64).collect();
        Laplacian { neighbors, inv_deg }
    }

    fn n(&self) -> usize {
        self.neighbors.len()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            let s: f64 = self.neighbors[i].iter().map(|&j| x[j]).sum();
            *o = s * self.inv_deg[i] - x[i];
        });
    }

    /// `Lᵀ z`; the adjacency is symmetric, so column `a` of `L` has entries
    /// at rows `a` and `N(a)`.
    fn apply_transpose(&self, z: &[f64], out: &mut [f64]) {
        out.par_iter_mut().enumerate().for_each(|(a, o)| {
            let s: f64 = self.neighbors[a].iter().map(|&i| z[i] * self.inv_deg[i]).sum();
            *o = s - z[a];
        });
    }

    /// Diagonal of `LᵀL`.
    fn gram_diagonal(&self) -> Vec<f64> {
        (0..self.n())
            .map(|a| 1.0 + self.neighbors[a].iter().map(|&i| self.inv_deg[i].powi(2)).sum::<f64>())
            .collect()
    }

    /// Lower triangle of `LᵀL` in compressed-column form.
    fn gram_lower(&self) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
        let n = self.n();
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        let mut acc = vec![0.0f64; n];
        let mut mark = vec![usize::MAX; n];
        let mut touched: Vec<usize> = Vec::new();
        col_ptr.push(0);
        for a in 0..n {
            touched.clear();
            // Rows i with L_ia ≠ 0: i = a (L_aa = −1) and i ∈ N(a) (L_ia = 1/deg i).
            let rows = std::iter::once((a, -1.0)).chain(self.neighbors[a].iter().map(|&i| (i, self.inv_deg[i])));
            for (i, l_ia) in rows {
                let entries = std::iter::once((i, -1.0)).chain(self.neighbors[i].iter().map(|&b| (b, self.inv_deg[i])));
                for (b, l_ib) in entries {
                    if b < a {
                        continue;
                    }
                    if mark[b] != a {
                        mark[b] = a;
                        acc[b] = 0.0;
                        touched.push(b);
                    }
                    acc[b] += l_ia * l_ib;
                }
            }
            touched.sort_unstable();
            for &b in &touched {
                row_idx.push(b);
                values.push(acc[b]);
            }
            col_ptr.push(row_idx.len());
        }
        (col_ptr, row_idx, values)
    }
}

/// `Σ_i ‖p_i − mean(N(i))‖ / n` and its per-point terms.
fn extents(points: &[Vec3], neighbors: &[Vec<usize>]) -> Vec<f64> {
    points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let n = &neighbors[i];
            let c = n.iter().map(|&j| points[j]).sum::<Vec3>() / n.len() as f64;
            (p - c).norm()
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

trait NormalSolver {
    /// Solves `(w_l² LᵀL + diag(w_h²)) X = diag(w_h²) P` column-wise,
    /// starting from `x` and writing the solution into it.
    fn solve(&mut self, w_l: f64, w_h: &[f64], rhs: &[Vec<f64>; 3], x: &mut [Vec<f64>; 3]) -> Result<()>;
}

struct CholeskySolver {
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    gram: Vec<f64>,
    diag_pos: Vec<usize>,
    symbolic: SymbolicCholesky<usize>,
    values: Vec<f64>,
    factor: Vec<f64>,
    buffer: MemBuffer,
}

impl CholeskySolver {
    fn new(lap: &Laplacian) -> Result<Self> {
        let n = lap.n();
        let (col_ptr, row_idx, gram) = lap.gram_lower();
        let diag_pos = col_ptr[..n].to_vec();
        let symbolic = {
            let pattern = SymbolicSparseColMatRef::new_checked(n, n, &col_ptr, None, &row_idx);
            factorize_symbolic_cholesky(pattern, Side::Lower, SymmetricOrdering::Amd, CholeskySymbolicParams::default())
                .map_err(|e| Error::Invalid(format!("symbolic factorisation failed: {e:?}")))?
        };
        let req = StackReq::any_of(&[
            symbolic.factorize_numeric_llt_scratch::<f64>(Par::Seq, Default::default()),
            symbolic.solve_in_place_scratch::<f64>(3, Par::Seq),
        ]);
        Ok(CholeskySolver {
            values: vec![0.0; gram.len()],
            factor: vec![0.0; symbolic.len_val()],
            buffer: MemBuffer::new(req),
            col_ptr,
            row_idx,
            gram,
            diag_pos,
            symbolic,
        })
    }
}

impl NormalSolver for CholeskySolver {
    fn solve(&mut self, w_l: f64, w_h: &[f64], rhs: &[Vec<f64>; 3], x: &mut [Vec<f64>; 3]) -> Result<()> {
        let n = w_h.len();
        let w_l2 = w_l * w_l;
        for (v, g) in self.values.iter_mut().zip(&self.gram) {
            *v = w_l2 * g;
        }
        for (a, &pos) in self.diag_pos.iter().enumerate() {
            self.values[pos] += w_h[a] * w_h[a];
        }
        let pattern = SymbolicSparseColMatRef::new_checked(n, n, &self.col_ptr, None, &self.row_idx);
        let matrix = SparseColMatRef::new(pattern, &self.values);
        let llt = self
            .symbolic
            .factorize_numeric_llt(
                &mut self.factor,
                matrix,
                Side::Lower,
                LltRegularization::default(),
                Par::Seq,
                MemStack::new(&mut self.buffer),
                Default::default(),
            )
            .map_err(|e| Error::Degenerate(format!("normal equations not positive definite: {e:?}")))?;
        let mut b = Mat::<f64>::from_fn(n, 3, |i, c| rhs[c][i]);
        llt.solve_in_place_with_conj(Conj::No, b.as_mut(), Par::Seq, MemStack::new(&mut self.buffer));
        for (c, col) in x.iter_mut().enumerate() {
            for (i, v) in col.iter_mut().enumerate() {
                *v = b[(i, c)];
            }
        }
        Ok(())
    }
}

/// Jacobi-preconditioned conjugate gradients, matrix-free over the
/// Laplacian.
struct CgSolver<'a> {
    lap: &'a Laplacian<'a>,
    gram_diag: Vec<f64>,
    tolerance: f64,
    max_iterations: usize,
}

impl CgSolver<'_> {
    fn apply(&self, w_l2: f64, w_h2: &[f64], x: &[f64], tmp: &mut [f64], out: &mut [f64]) {
        self.lap.apply(x, tmp);
        self.lap.apply_transpose(tmp, out);
        out.par_iter_mut()
            .zip(x.par_iter().zip(w_h2.par_iter()))
            .for_each(|(o, (xi, h))| *o = w_l2 * *o + h * xi);
    }

    fn solve_column(&self, w_l2: f64, w_h2: &[f64], b: &[f64], x: &mut [f64]) -> Result<()> {
        let n = b.len();
        let precond: Vec<f64> = self.gram_diag.iter().zip(w_h2).map(|(g, h)| 1.0 / (w_l2 * g + h)).collect();
        // Fixed chunks summed in order keep the result independent of the thread count.
        let dot = |a: &[f64], b: &[f64]| -> f64 {
            let parts: Vec<f64> = a
                .par_chunks(4096)
                .zip(b.par_chunks(4096))
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
                .collect();
            parts.iter().sum()
        };
        let b_norm = dot(b, b).sqrt();
        if b_norm == 0.0 {
            x.iter_mut().for_each(|v| *v = 0.0);
            return Ok(());
        }
        let mut tmp = vec![0.0; n];
        let mut ax = vec![0.0; n];
        self.apply(w_l2, w_h2, x, &mut tmp, &mut ax);
        let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let mut z: Vec<f64> = r.iter().zip(&precond).map(|(r, m)| r * m).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut ap = vec![0.0; n];
        for _ in 0..self.max_iterations {
            let res = dot(&r, &r).sqrt() / b_norm;
            if res <= self.tolerance {
                return Ok(());
            }
            self.apply(w_l2, w_h2, &p, &mut tmp, &mut ap);
            let alpha = rz / dot(&p, &ap);
            x.par_iter_mut().zip(p.par_iter()).for_each(|(x, p)| *x += alpha * p);
            r.par_iter_mut().zip(ap.par_iter()).for_each(|(r, ap)| *r -= alpha * ap);
            z.par_iter_mut()
                .zip(r.par_iter().zip(precond.par_iter()))
                .for_each(|(z, (r, m))| *z = r * m);
            let rz_next = dot(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            p.par_iter_mut().zip(z.par_iter()).for_each(|(p, z)| *p = z + beta * *p);
        }
        let res = dot(&r, &r).sqrt() / b_norm;
        if res <= self.tolerance {
            Ok(())
        } else {
            Err(Error::SolverDiverged { iterations: self.max_iterations, residual: res })
        }
    }
}

impl NormalSolver for CgSolver<'_> {
    fn solve(&mut self, w_l: f64, w_h: &[f64], rhs: &[Vec<f64>; 3], x: &mut [Vec<f64>; 3]) -> Result<()> {
        let w_h2: Vec<f64> = w_h.iter().map(|h| h * h).collect();
        for (b, col) in rhs.iter().zip(x.iter_mut()) {
            self.solve_column(w_l * w_l, &w_h2, b, col)?;
        }
        Ok(())
    }
}

/// Contracts `cloud` towards its curve skeleton.
pub fn contract(cloud: &PointCloud, params: &ContractionParams) -> Result<Contraction> {
    params.validate()?;
    let neighbors = knn_graph(cloud.points(), params.k_neighbors)?;
    let solver = if cloud.len() > params.direct_solver_max_points {
        SolverKind::ConjugateGradient
    } else {
        SolverKind::Cholesky
    };
    contract_with_graph(cloud.points(), neighbors, params, solver)
}

/// [`contract`] over a precomputed symmetric adjacency with an explicit
/// solver choice.
pub fn contract_with_graph(
    points: &[Vec3],
    neighbors: Vec<Vec<usize>>,
    params: &ContractionParams,
    solver: SolverKind,
) -> Result<Contraction> {
    params.validate()?;
    let n = points.len();
    if n <= params.k_neighbors || neighbors.len() != n {
        return Err(Error::TooFewPoints { found: n, required: params.k_neighbors + 1 });
    }
    if neighbors.iter().any(Vec::is_empty) {
        return Err(Error::Invalid("every point needs at least one neighbour".into()));
    }
    let lap = Laplacian::new(&neighbors);

    let mean_knn_dist = {
        let total: f64 = neighbors
            .iter()
            .enumerate()
            .map(|(i, nb)| nb.iter().map(|&j| (points[i] - points[j]).norm()).sum::<f64>() / nb.len() as f64)
            .sum();
        total / n as f64
    };
    if mean_knn_dist <= 0.0 {
        return Err(Error::Degenerate("all neighbourhoods have zero extent".into()));
    }

    let mut w_l = params.init_contraction_weight_factor / (10.0 * mean_knn_dist);
    w_l = w_l.min(params.contraction_weight_cap);
    let mut w_h = vec![params.attraction_weight; n];
    let extent0 = extents(points, &neighbors);
    let mean0 = mean(&extent0);

    let mut current = points.to_vec();
    let mut x: [Vec<f64>; 3] = std::array::from_fn(|c| current.iter().map(|p| p[c]).collect());
    let mut solver_impl: Box<dyn NormalSolver + '_> = match solver {
        SolverKind::Cholesky => Box::new(CholeskySolver::new(&lap)?),
        SolverKind::ConjugateGradient => Box::new(CgSolver {
            lap: &lap,
            gram_diag: lap.gram_diagonal(),
            tolerance: params.solver_tolerance,
            max_iterations: 20_000,
        }),
    };

    let mut iterations = 0;
    let mut ratio = if mean0 > 0.0 { 1.0 } else { 0.0 };
    while iterations < params.max_iterations && ratio >= params.convergence_ratio {
        let rhs: [Vec<f64>; 3] =
            std::array::from_fn(|c| current.iter().zip(&w_h).map(|(p, h)| h * h * p[c]).collect());
        solver_impl.solve(w_l, &w_h, &rhs, &mut x)?;
        let next: Vec<Vec3> = (0..n).map(|i| Vec3::new(x[0][i], x[1][i], x[2][i])).collect();
        if next.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::SolverDiverged { iterations: iterations + 1, residual: f64::NAN });
        }
        current = next;
        iterations += 1;

        let ext = extents(&current, &neighbors);
        ratio = mean(&ext) / mean0;
        w_l = (w_l * params.amplification).min(params.contraction_weight_cap);
        for ((h, e0), e) in w_h.iter_mut().zip(&extent0).zip(&ext) {
            let growth = if *e > 0.0 { (e0 / e).min(params.attraction_cap) } else { params.attraction_cap };
            *h = params.attraction_weight * growth.max(1.0);
        }
    }

    drop(solver_impl);
    drop(lap);
    let displacement = current.iter().zip(points).map(|(a, b)| (a - b).norm()).collect();
    Ok(Contraction {
        points: current,
        displacement,
        neighbors,
        iterations,
        extent_ratio: ratio,
        solver,
    })
}
