//! Dual coordinate descent for L2-regularized squared-hinge classification.
//!
//! Minimizes `sum_i max(0, 1 - y_i w.x_i)^2 + (lambda / 2) |w|^2` over the
//! given rows, with no bias term. With `C = 1 / lambda` this is the
//! L2-loss SVM primal `1/2 |w|^2 + C sum_i xi_i^2` up to a factor `lambda`,
//! whose dual is
//!
//! ```text
//! min_a  1/2 a' (Q + D) a - e'a   s.t. a >= 0,   Q_ij = y_i y_j x_i.x_j,  D_ii = lambda / 2
//! ```
//!
//! and `w = sum_i a_i y_i x_i`. Coordinates are visited in a fresh random
//! permutation every epoch.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::sparse::{SparseVector, SparseView};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverParams {
    pub lambda: f64,
    pub max_iters: usize,
    /// Stop once the largest projected-gradient magnitude of an epoch drops
    /// below `tol` times its value at the starting point (which is 1).
    pub tol: f64,
    pub seed: u64,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            max_iters: 100,
            tol: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub weights: SparseVector,
    /// Primal objective at the returned weights.
    pub objective: f64,
    pub epochs: usize,
    pub converged: bool,
}

/// Primal objective `sum max(0, 1 - y w.x)^2 + lambda/2 |w|^2` for dense `w`.
pub fn primal_objective(rows: &[SparseView<'_>], signs: &[f64], w: &[f64], lambda: f64) -> f64 {
    let loss: f64 = rows
        .iter()
        .zip(signs)
        .map(|(x, y)| {
            let slack = (1.0 - y * x.dot_dense(w)).max(0.0);
            slack * slack
        })
        .sum();
    loss + 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>()
}

/// Reusable solver state: a dense weight buffer of the full feature
/// dimension that is reset after each solve.
#[derive(Debug)]
pub struct DcdSolver {
    w: Vec<f64>,
    support: Vec<u32>,
}

impl DcdSolver {
    pub fn new(dim: usize) -> Self {
        Self {
            w: vec![0.0; dim],
            support: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    /// Solves one binary sub-problem. `signs[i]` is `+1.0` or `-1.0` for
    /// `rows[i]`. An empty problem yields the zero vector.
    pub fn solve(&mut self, rows: &[SparseView<'_>], signs: &[f64], params: &SolverParams) -> Solution {
        assert_eq!(rows.len(), signs.len());
        assert!(params.lambda > 0.0, "lambda must be positive");
        let dim = self.w.len();
        if rows.is_empty() {
            return Solution {
                weights: SparseVector::empty(dim),
                objective: 0.0,
                epochs: 0,
                converged: true,
            };
        }

        self.support.clear();
        for r in rows {
            self.support.extend_from_slice(r.indices);
        }
        self.support.sort_unstable();
        self.support.dedup();

        let diag = 0.5 * params.lambda;
        let qd: Vec<f64> = rows.iter().map(|r| r.squared_norm() + diag).collect();
        let mut alpha = vec![0.0f64; rows.len()];
        let mut order: Vec<usize> = (0..rows.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let w = &mut self.w;

        let mut epochs = 0;
        let mut converged = false;
        while epochs < params.max_iters {
            epochs += 1;
            order.shuffle(&mut rng);
            let mut max_pg = 0.0f64;
            for &i in &order {
                let x = rows[i];
                let y = signs[i];
                let g = y * x.dot_dense(w) - 1.0 + diag * alpha[i];
                let pg = if alpha[i] == 0.0 { g.min(0.0) } else { g };
                max_pg = max_pg.max(pg.abs());
                if pg.abs() > 1e-14 {
                    let old = alpha[i];
                    alpha[i] = (old - g / qd[i]).max(0.0);
                    let step = (alpha[i] - old) * y;
                    if step != 0.0 {
                        for (f, v) in x.iter() {
                            w[f as usize] += step * v;
                        }
                    }
                }
            }
            if max_pg <= params.tol {
                converged = true;
                break;
            }
        }

        let objective = primal_objective(rows, signs, w, params.lambda);
        let mut indices = Vec::with_capacity(self.support.len());
        let mut values = Vec::with_capacity(self.support.len());
        for &f in &self.support {
            let v = std::mem::take(&mut w[f as usize]);
            if v != 0.0 {
                indices.push(f);
                values.push(v);
            }
        }
        Solution {
            weights: SparseVector::new(dim, indices, values).expect("support is sorted and in range"),
            objective,
            epochs,
            converged,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tight(lambda: f64) -> SolverParams {
        SolverParams {
            lambda,
            max_iters: 10_000,
            tol: 1e-10,
            seed: 7,
        }
    }

    #[test]
    fn two_point_problem_matches_closed_form() {
        let pos = SparseVector::new(1, vec![0], vec![1.0]).unwrap();
        let neg = SparseVector::new(1, vec![0], vec![-1.0]).unwrap();
        let rows = [pos.view(), neg.view()];
        let mut solver = DcdSolver::new(1);
        for lambda in [0.1, 1.0, 4.0, 10.0] {
            let sol = solver.solve(&rows, &[1.0, -1.0], &tight(lambda));
            let w = sol.weights.values()[0];
            assert!((w - 4.0 / (4.0 + lambda)).abs() < 1e-6, "lambda={lambda} w={w}");
            assert!(sol.converged);
        }
    }

    #[test]
    fn heavy_regularization_shrinks_to_zero() {
        let pos = SparseVector::new(1, vec![0], vec![1.0]).unwrap();
        let mut solver = DcdSolver::new(1);
        let sol = solver.solve(&[pos.view()], &[1.0], &tight(1e9));
        assert!(sol.weights.values().first().map_or(0.0, |v| v.abs()) < 1e-8);
    }

    #[test]
    fn empty_problem_returns_zero() {
        let mut solver = DcdSolver::new(4);
        let sol = solver.solve(&[], &[], &SolverParams::default());
        assert!(sol.weights.is_empty());
        assert_eq!(sol.epochs, 0);
    }

    #[test]
    fn workspace_is_reset_between_solves() {
        let a = SparseVector::new(3, vec![0, 2], vec![0.6, 0.8]).unwrap();
        let b = SparseVector::new(3, vec![1], vec![1.0]).unwrap();
        let mut solver = DcdSolver::new(3);
        let first = solver.solve(&[a.view(), b.view()], &[1.0, -1.0], &tight(1.0));
        let again = solver.solve(&[a.view(), b.view()], &[1.0, -1.0], &tight(1.0));
        assert_eq!(first, again);
        let mut fresh = DcdSolver::new(3);
        assert_eq!(fresh.solve(&[a.view(), b.view()], &[1.0, -1.0], &tight(1.0)), first);
    }
}
