//! Exhaustive reference solvers used to validate the production paths.
//!
//! These are deliberately brute force: the fit oracle enumerates every
//! active set of the polytope's KKT system, and the grid-search oracle scans
//! a shrinking lattice (sound for strongly convex objectives).  Both are
//! independent of the FISTA/Dykstra implementations they check.

use crate::density::{ConstraintMode, ConstraintSet, LambdaGrid};
use crate::error::{Error, Result};
use crate::operator::OperatorMatrix;
use nalgebra::{DMatrix, DVector};

/// Linear inequality rows `G k <= h` describing the discretized set.
fn constraint_rows(cs: &ConstraintSet) -> (Vec<Vec<f64>>, Vec<f64>) {
    let m = cs.num_cells();
    let env = cs.envelope().values();
    let mut g: Vec<Vec<f64>> = Vec::new();
    let mut h: Vec<f64> = Vec::new();
    match cs.mode() {
        ConstraintMode::Monotone => {
            // k_{i+1} - k_i <= 0; k_{m-1} >= 0 implies all k_i >= 0
            for i in 0..m - 1 {
                let mut row = vec![0.0; m];
                row[i] = -1.0;
                row[i + 1] = 1.0;
                g.push(row);
                h.push(0.0);
            }
            let mut row = vec![0.0; m];
            row[m - 1] = -1.0;
            g.push(row);
            h.push(0.0);
        }
        ConstraintMode::BoundedVariation => {
            for i in 0..m {
                let mut row = vec![0.0; m];
                row[i] = -1.0;
                g.push(row);
                h.push(0.0);
            }
            // per-block TV faces: sum_j s_j (k_{j+1} - k_j) <= R
            for rg in cs.envelope().dyadic_blocks() {
                let nb = rg.len();
                if nb < 2 {
                    continue;
                }
                for signs in 0..(1u32 << (nb - 1)) {
                    let mut row = vec![0.0; m];
                    for j in 0..nb - 1 {
                        let s = if signs >> j & 1 == 1 { 1.0 } else { -1.0 };
                        row[rg.start + j] -= s;
                        row[rg.start + j + 1] += s;
                    }
                    g.push(row);
                    h.push(cs.r());
                }
            }
        }
    }
    for i in 0..m {
        let mut row = vec![0.0; m];
        row[i] = 1.0;
        g.push(row);
        h.push(env[i]);
    }
    (g, h)
}

/// Exhaustive KKT enumeration for
/// `min_k 0.5 sum_j w_j (gn_j + o_j + (A k)_j)^2` over the constraint set.
///
/// Every subset of active constraints (up to dimension) is solved as an
/// equality-constrained QP; a candidate is accepted when it is primal
/// feasible with nonnegative multipliers.  For a convex objective that is
/// the global optimum.
pub fn exhaustive_fit(
    gn: &[f64],
    op: &OperatorMatrix,
    cs: &ConstraintSet,
    lgrid: &LambdaGrid,
) -> Result<Vec<f64>> {
    let m = op.num_cells();
    if m > 6 {
        return Err(Error::InvalidParameter(
            "exhaustive_fit is intended for grids with few cells".into(),
        ));
    }
    let w = lgrid.weights();
    let jn = lgrid.len();
    // Q = A^T W A, q = A^T W (gn + o)
    let mut q_mat = DMatrix::zeros(m, m);
    let mut q_vec = DVector::zeros(m);
    let col = |i: usize| -> Vec<f64> {
        let mut e = vec![0.0; m];
        e[i] = 1.0;
        op.apply(&e)
    };
    let cols: Vec<Vec<f64>> = (0..m).map(col).collect();
    let r0: Vec<f64> = gn.iter().zip(op.offset()).map(|(g, o)| g + o).collect();
    for a in 0..m {
        for b in 0..=a {
            let s: f64 = (0..jn).map(|j| w[j] * cols[a][j] * cols[b][j]).sum();
            q_mat[(a, b)] = s;
            q_mat[(b, a)] = s;
        }
        q_vec[a] = (0..jn).map(|j| w[j] * cols[a][j] * r0[j]).sum();
    }

    let (g_rows, h_rows) = constraint_rows(cs);
    let nrows = g_rows.len();
    let feas_tol = 1e-9;

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut subset: Vec<usize> = Vec::new();
    // enumerate all subsets of size <= m via a manual stack
    fn rec(
        start: usize,
        subset: &mut Vec<usize>,
        nrows: usize,
        m: usize,
        eval: &mut dyn FnMut(&[usize]),
    ) {
        eval(subset);
        if subset.len() == m {
            return;
        }
        for r in start..nrows {
            subset.push(r);
            rec(r + 1, subset, nrows, m, eval);
            subset.pop();
        }
    }

    let objective = |k: &DVector<f64>| -> f64 {
        (0.5 * k.transpose() * &q_mat * k)[(0, 0)] + q_vec.dot(k)
    };

    let mut eval = |active: &[usize]| {
        let na = active.len();
        let dim = m + na;
        let mut kkt = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        for a in 0..m {
            for b in 0..m {
                kkt[(a, b)] = q_mat[(a, b)];
            }
            rhs[a] = -q_vec[a];
        }
        for (s, &row) in active.iter().enumerate() {
            for i in 0..m {
                kkt[(m + s, i)] = g_rows[row][i];
                kkt[(i, m + s)] = g_rows[row][i];
            }
            rhs[m + s] = h_rows[row];
        }
        let sol = match kkt.lu().solve(&rhs) {
            Some(s) => s,
            None => return,
        };
        if sol.iter().any(|v| !v.is_finite()) {
            return;
        }
        let k = DVector::from_iterator(m, (0..m).map(|i| sol[i]));
        // dual feasibility
        if (0..na).any(|s| sol[m + s] < -feas_tol) {
            return;
        }
        // primal feasibility
        for r in 0..nrows {
            let gx: f64 = (0..m).map(|i| g_rows[r][i] * k[i]).sum();
            if gx > h_rows[r] + feas_tol {
                return;
            }
        }
        let f = objective(&k);
        if best.as_ref().map_or(true, |(fb, _)| f < *fb) {
            best = Some((f, k.iter().cloned().collect()));
        }
    };
    rec(0, &mut subset, nrows, m, &mut eval);

    best.map(|(_, k)| k).ok_or_else(|| {
        Error::InvalidParameter("no KKT point found; constraints may be degenerate".into())
    })
}

/// Staged dense grid search: scans a lattice, then shrinks the window around
/// the best point.  Sound for strongly convex objectives (the next window
/// always covers the distance-to-minimizer bound of the previous lattice).
pub fn staged_grid_search<F: Fn(&[f64]) -> f64>(
    obj: F,
    lo: &[f64],
    hi: &[f64],
    stages: usize,
) -> Vec<f64> {
    let n = lo.len();
    let steps = 12i64;
    let mut center: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
    let mut span: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (b - a)).collect();
    for _ in 0..stages {
        let mut best = center.clone();
        let mut best_val = f64::INFINITY;
        let mut idx = vec![-steps; n];
        'outer: loop {
            let cand: Vec<f64> = (0..n)
                .map(|i| center[i] + span[i] * idx[i] as f64 / steps as f64)
                .collect();
            let v = obj(&cand);
            if v < best_val {
                best_val = v;
                best = cand;
            }
            for i in 0..n {
                idx[i] += 1;
                if idx[i] <= steps {
                    continue 'outer;
                }
                idx[i] = -steps;
                if i == n - 1 {
                    break 'outer;
                }
            }
        }
        center = best;
        for s in span.iter_mut() {
            *s *= 2.0 / steps as f64;
        }
    }
    center
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::GriddedDensity;
    use crate::estimator::{fit, FitOptions};
    use crate::mechanism::{BranchingMechanism, Horizon};
    use crate::operator::assemble_operator;
    use crate::quad::QuadTol;

    #[test]
    fn exhaustive_matches_fista_on_interior_and_boundary() {
        let mech = BranchingMechanism::new(1.0, 1.0).unwrap();
        let grid = GriddedDensity::dyadic(-1, 2, 1).unwrap(); // 3 cells
        let lgrid = LambdaGrid::trapezoid_uniform(2.0, 16).unwrap();
        let op = assemble_operator(&mech, 1.0, &grid, &lgrid, Horizon::Infinite, QuadTol::default())
            .unwrap();
        let env = grid.with_values(vec![1.0, 0.5, 0.25]).unwrap();
        let cs = ConstraintSet::new(env, 4.0, ConstraintMode::Monotone).unwrap();
        for target in [vec![0.6, 0.3, 0.1], vec![2.0, 1.5, 0.7], vec![0.0, 0.0, 0.0]] {
            let gn = op.model_g_values(&target);
            let brute = exhaustive_fit(&gn, &op, &cs, &lgrid).unwrap();
            let rep = fit(&gn, &op, &cs, &lgrid, FitOptions::default()).unwrap();
            for (a, b) in rep.density.values().iter().zip(&brute) {
                assert!((a - b).abs() < 2e-3, "target {target:?}: {:?} vs {brute:?}",
                    rep.density.values());
            }
        }
    }

    #[test]
    fn staged_search_finds_quadratic_minimum() {
        let target = [0.3, -0.7, 1.1];
        let obj = |x: &[f64]| -> f64 {
            x.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum()
        };
        let lo = [-2.0, -2.0, -2.0];
        let hi = [2.0, 2.0, 2.0];
        let got = staged_grid_search(obj, &lo, &hi, 8);
        for (a, b) in got.iter().zip(&target) {
            assert!((a - b).abs() < 1e-4);
        }
    }
}
