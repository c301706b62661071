//! Euclidean projection onto the discretized constraint set.
//!
//! The set is an intersection of simple pieces: the nonincreasing cone
//! (pool-adjacent-violators), the box `[0, envelope]`, and per-dyadic-block
//! total-variation balls (Condat's direct prox plus bisection on the
//! multiplier).  Dykstra's alternating scheme combines them.

use crate::density::{ConstraintMode, ConstraintSet};
use crate::error::{Error, Result};
use std::ops::Range;

/// Pool-adjacent-violators projection onto the nonincreasing cone.
pub fn pava_nonincreasing(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut vals: Vec<f64> = Vec::with_capacity(n);
    let mut wts: Vec<usize> = Vec::with_capacity(n);
    for &yi in y {
        vals.push(yi);
        wts.push(1);
        while vals.len() > 1 && vals[vals.len() - 2] < vals[vals.len() - 1] {
            let (v2, w2) = (vals.pop().unwrap(), wts.pop().unwrap());
            let (v1, w1) = (vals.pop().unwrap(), wts.pop().unwrap());
            let w = w1 + w2;
            vals.push((v1 * w1 as f64 + v2 * w2 as f64) / w as f64);
            wts.push(w);
        }
    }
    let mut out = Vec::with_capacity(n);
    for (v, w) in vals.into_iter().zip(wts) {
        out.extend(std::iter::repeat(v).take(w));
    }
    out
}

/// Condat's direct algorithm for the 1-D total-variation prox:
/// `argmin_x 0.5 ||x - y||^2 + theta * sum |x_{i+1} - x_i|`.
pub fn tv_prox(y: &[f64], theta: f64) -> Vec<f64> {
    let n = y.len();
    let mut x = vec![0.0; n];
    if n == 0 {
        return x;
    }
    if n == 1 || theta <= 0.0 {
        x.copy_from_slice(y);
        return x;
    }
    // indices follow Condat (2013), translated to 0-based
    let (mut k, mut k0, mut km, mut kp) = (0usize, 0usize, 0usize, 0usize);
    let mut vmin = y[0] - theta;
    let mut vmax = y[0] + theta;
    let mut umin = theta;
    let mut umax = -theta;
    loop {
        if k == n - 1 {
            // termination phase
            if umin < 0.0 {
                for i in k0..=km {
                    x[i] = vmin;
                }
                km += 1;
                k = km;
                k0 = km;
                vmin = y[k];
                umin = theta;
                umax = y[k] + theta - vmax;
            } else if umax > 0.0 {
                for i in k0..=kp {
                    x[i] = vmax;
                }
                kp += 1;
                k = kp;
                k0 = kp;
                vmax = y[k];
                umax = -theta;
                umin = y[k] - theta - vmin;
            } else {
                let v = vmin + umin / (k - k0 + 1) as f64;
                for i in k0..n {
                    x[i] = v;
                }
                return x;
            }
            if k == n - 1 {
                // only the last point remains: flush it
                x[k] = vmin + umin;
                return x;
            }
            continue;
        }
        if y[k + 1] + umin < vmin - theta {
            // negative jump is certain
            for i in k0..=km {
                x[i] = vmin;
            }
            km += 1;
            k = km;
            k0 = km;
            kp = km;
            vmin = y[k];
            vmax = y[k] + 2.0 * theta;
            umin = theta;
            umax = -theta;
        } else if y[k + 1] + umax > vmax + theta {
            // positive jump is certain
            for i in k0..=kp {
                x[i] = vmax;
            }
            kp += 1;
            k = kp;
            k0 = kp;
            km = kp;
            vmin = y[k] - 2.0 * theta;
            vmax = y[k];
            umin = theta;
            umax = -theta;
        } else {
            // no jump yet: extend the segment
            k += 1;
            umin += y[k] - vmin;
            umax += y[k] - vmax;
            if umin >= theta {
                vmin += (umin - theta) / (k - k0 + 1) as f64;
                umin = theta;
                km = k;
            }
            if umax <= -theta {
                vmax += (umax + theta) / (k - k0 + 1) as f64;
                umax = -theta;
                kp = k;
            }
        }
    }
}

fn tv(x: &[f64]) -> f64 {
    x.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

/// Euclidean projection onto `{x : sum |x_{i+1}-x_i| <= r}` via bisection on
/// the TV-prox multiplier.
pub fn project_tv_ball(y: &[f64], r: f64) -> Vec<f64> {
    if tv(y) <= r {
        return y.to_vec();
    }
    // bracket: tv(prox_theta) is nonincreasing in theta, 0 at large theta
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    while tv(&tv_prox(y, hi)) > r {
        hi *= 2.0;
        if hi > 1e18 {
            break;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if tv(&tv_prox(y, mid)) > r {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi.max(1.0) {
            break;
        }
    }
    tv_prox(y, hi)
}

enum Piece<'a> {
    MonotoneCone,
    EnvelopeBox(&'a [f64]),
    BlockTv { blocks: &'a [Range<usize>], r: f64 },
}

impl Piece<'_> {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Piece::MonotoneCone => pava_nonincreasing(x),
            Piece::EnvelopeBox(env) => x
                .iter()
                .zip(env.iter())
                .map(|(v, e)| v.max(0.0).min(*e))
                .collect(),
            Piece::BlockTv { blocks, r } => {
                let mut out = x.to_vec();
                for rg in blocks.iter() {
                    let proj = project_tv_ball(&x[rg.clone()], *r);
                    out[rg.clone()].copy_from_slice(&proj);
                }
                out
            }
        }
    }
}

/// Euclidean projection of `k0` onto the discretized constraint set, run to
/// fixed-point tolerance 1e-10 (at most `max_iter` Dykstra sweeps).
pub fn project_with(k0: &[f64], cs: &ConstraintSet, max_iter: usize) -> Result<Vec<f64>> {
    if k0.len() != cs.num_cells() {
        return Err(Error::GridMismatch(format!(
            "projection input has {} cells, constraint set has {}",
            k0.len(),
            cs.num_cells()
        )));
    }
    let blocks = cs.envelope().dyadic_blocks();
    let env = cs.envelope().values();
    // the TV constraint is implied in monotone mode whenever the envelope
    // stays below the budget (variation of a nonincreasing k on a block is at
    // most its leading value); include the TV piece only when it can bind
    let need_tv = match cs.mode() {
        ConstraintMode::BoundedVariation => blocks.iter().any(|rg| rg.len() > 1),
        ConstraintMode::Monotone => env.iter().any(|e| *e > cs.r()),
    };
    let mut pieces: Vec<Piece> = Vec::new();
    if cs.mode() == ConstraintMode::Monotone {
        pieces.push(Piece::MonotoneCone);
    }
    if need_tv {
        pieces.push(Piece::BlockTv { blocks: &blocks, r: cs.r() });
    }
    pieces.push(Piece::EnvelopeBox(env));

    if pieces.len() == 1 {
        return Ok(pieces[0].apply(k0));
    }

    let n = k0.len();
    let mut x = k0.to_vec();
    let mut corrections = vec![vec![0.0; n]; pieces.len()];
    for _ in 0..max_iter {
        let x_prev = x.clone();
        for (piece, corr) in pieces.iter().zip(corrections.iter_mut()) {
            let shifted: Vec<f64> = x.iter().zip(corr.iter()).map(|(a, b)| a + b).collect();
            let u = piece.apply(&shifted);
            for i in 0..n {
                corr[i] = shifted[i] - u[i];
            }
            x = u;
        }
        let delta = x
            .iter()
            .zip(&x_prev)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        if delta < 1e-10 {
            return Ok(x);
        }
    }
    Err(Error::ProjectionNonConvergence(max_iter))
}

/// [`project_with`] at the default sweep cap of 10^4.
pub fn project(k0: &[f64], cs: &ConstraintSet) -> Result<Vec<f64>> {
    project_with(k0, cs, 10_000)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::GriddedDensity;
    use proptest::prelude::*;

    #[test]
    fn pava_basic() {
        assert_eq!(pava_nonincreasing(&[3.0, 2.0, 1.0]), vec![3.0, 2.0, 1.0]);
        assert_eq!(pava_nonincreasing(&[1.0, 2.0]), vec![1.5, 1.5]);
        assert_eq!(pava_nonincreasing(&[1.0, 3.0, 2.0]), vec![2.0, 2.0, 2.0]);
        let r = pava_nonincreasing(&[5.0, 1.0, 4.0]);
        assert_eq!(r, vec![5.0, 2.5, 2.5]);
    }

    /// staged dense grid search; valid oracle because the prox objective is
    /// 1-strongly convex
    fn grid_oracle<F: Fn(&[f64]) -> f64>(obj: F, lo: &[f64], hi: &[f64], stages: usize) -> Vec<f64> {
        let n = lo.len();
        let mut center: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let mut span: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (b - a)).collect();
        for _ in 0..stages {
            let steps = 12i64;
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
                *s *= 2.0 / steps as f64; // window 2x previous step
            }
        }
        center
    }

    #[test]
    fn tv_prox_matches_grid_oracle() {
        let cases: Vec<(Vec<f64>, f64)> = vec![
            (vec![1.0, -2.0, 3.0], 0.7),
            (vec![0.0, 5.0, 0.1], 1.2),
            (vec![2.0, 2.0, 2.0], 0.5),
            (vec![1.0, 0.0, 1.0, 0.0], 0.4),
            (vec![-1.0, 4.0], 2.0),
            (vec![3.0, 1.0, 2.0, 0.0, 4.0], 0.9),
        ];
        for (y, theta) in cases {
            let got = tv_prox(&y, theta);
            let obj = |x: &[f64]| {
                0.5 * x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
                    + theta * tv(x)
            };
            let lo: Vec<f64> = y.iter().map(|v| v - 2.0 * theta - 1.0).collect();
            let hi: Vec<f64> = y.iter().map(|v| v + 2.0 * theta + 1.0).collect();
            let oracle = grid_oracle(obj, &lo, &hi, 9);
            for (a, b) in got.iter().zip(&oracle) {
                assert!((a - b).abs() < 5e-3, "y={y:?} theta={theta}: {got:?} vs {oracle:?}");
            }
            // the prox must not raise the objective below the oracle's value
            assert!(obj(&got) <= obj(&oracle) + 1e-9);
        }
    }

    proptest! {
        #[test]
        fn tv_prox_preserves_sum_and_shrinks_tv(
            y in proptest::collection::vec(-5.0f64..5.0, 1..10),
            theta in 0.01f64..3.0,
        ) {
            let x = tv_prox(&y, theta);
            let sy: f64 = y.iter().sum();
            let sx: f64 = x.iter().sum();
            prop_assert!((sx - sy).abs() < 1e-9 * (1.0 + sy.abs()));
            prop_assert!(tv(&x) <= tv(&y) + 1e-12);
        }

        #[test]
        fn tv_ball_projection_is_feasible_and_optimal_vs_feasible_points(
            y in proptest::collection::vec(-3.0f64..3.0, 2..8),
            r in 0.05f64..2.0,
        ) {
            let p = project_tv_ball(&y, r);
            prop_assert!(tv(&p) <= r * (1.0 + 1e-9) + 1e-12);
            // no feasible scaled-down candidate should be closer
            let mean = y.iter().sum::<f64>() / y.len() as f64;
            let shrink: Vec<f64> = y
                .iter()
                .map(|v| mean + (v - mean) * (r / tv(&y)).min(1.0) * 0.999)
                .collect();
            let d = |a: &[f64]| -> f64 {
                a.iter().zip(&y).map(|(u, v)| (u - v) * (u - v)).sum()
            };
            prop_assert!(d(&p) <= d(&shrink) + 1e-9);
        }
    }

    fn small_cs(mode: ConstraintMode, r: f64) -> ConstraintSet {
        let grid = GriddedDensity::dyadic(-1, 1, 2).unwrap(); // 4 cells
        let env = grid.with_values(vec![1.0, 0.8, 0.6, 0.5]).unwrap();
        ConstraintSet::new(env, r, mode).unwrap()
    }

    #[test]
    fn projection_idempotent_and_trivial_cases() {
        let cs = small_cs(ConstraintMode::Monotone, 4.0);
        // already feasible -> unchanged
        let k = vec![0.5, 0.4, 0.3, 0.2];
        let p = project(&k, &cs).unwrap();
        for (a, b) in p.iter().zip(&k) {
            assert!((a - b).abs() < 1e-12);
        }
        // all-negative input -> zero density
        let p = project(&[-1.0, -1.0, -1.0, -1.0], &cs).unwrap();
        assert!(p.iter().all(|v| *v == 0.0));
        // idempotence
        let p0 = project(&[0.9, 1.4, 0.1, 0.4], &cs).unwrap();
        let p1 = project(&p0, &cs).unwrap();
        for (a, b) in p0.iter().zip(&p1) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(cs.contains(&p0, 1e-9));
    }

    #[test]
    fn projection_matches_staged_grid_oracle() {
        // cond-1 objective: staged dense search is a sound oracle
        let mut rng_state = 12345u64;
        let mut next = move || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((rng_state >> 11) as f64 / (1u64 << 53) as f64) * 3.0 - 1.0
        };
        for mode in [ConstraintMode::Monotone, ConstraintMode::BoundedVariation] {
            let cs = small_cs(mode, 0.6);
            for _ in 0..6 {
                let k0: Vec<f64> = (0..4).map(|_| next()).collect();
                let p = project(&k0, &cs).unwrap();
                let obj = |x: &[f64]| -> f64 {
                    if !cs.contains(x, 1e-6) {
                        return f64::INFINITY;
                    }
                    x.iter().zip(&k0).map(|(a, b)| (a - b) * (a - b)).sum()
                };
                let lo = vec![0.0; 4];
                let hi = cs.envelope().values().to_vec();
                let oracle = grid_oracle(obj, &lo, &hi, 9);
                for (a, b) in p.iter().zip(&oracle) {
                    assert!(
                        (a - b).abs() < 1e-3,
                        "{mode:?} k0={k0:?}: proj {p:?} vs oracle {oracle:?}"
                    );
                }
            }
        }
    }

    proptest! {
        #[test]
        fn projection_nonexpansive(
            a in proptest::collection::vec(-2.0f64..2.0, 4),
            b in proptest::collection::vec(-2.0f64..2.0, 4),
        ) {
            let cs = small_cs(ConstraintMode::Monotone, 4.0);
            let pa = project(&a, &cs).unwrap();
            let pb = project(&b, &cs).unwrap();
            let d = |x: &[f64], y: &[f64]| -> f64 {
                x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
            };
            prop_assert!(d(&pa, &pb) <= d(&a, &b) + 1e-9);
        }
    }
}
