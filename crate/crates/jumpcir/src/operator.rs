//! The discretized linear operator mapping gridded densities to model
//! log-Laplace curves.
//!
//! For a density `k` on the z-grid and horizon `T in {finite, inf}` the model
//! curve is affine: `g(lambda_j; k) = -o_j - (A k)_j`, with
//! `A_{j,i} = int_{cell i} Phi_T(lambda_j, z) dz`,
//! `Phi_T(lambda, z) = int_0^T (1 - e^{-z v_s(lambda)}) ds`, and the drift
//! offset `o_j = beta int_0^T v_s(lambda_j) ds` in closed form.

use crate::density::{GriddedDensity, LambdaGrid};
use crate::error::{Error, Result};
use crate::mechanism::{BranchingMechanism, Horizon};
use crate::quad::{adaptive, gauss_legendre_8, QuadTol};

/// `Phi_T(lambda, z) = int_0^T (1 - e^{-z v_s(lambda)}) ds`, computed by the
/// change of variables `u = v_s(lambda)` as
/// `int_{v_T(lambda)}^{lambda} (1 - e^{-z u}) / phi(u) du`
/// (the integrand tends to `z/b` at 0, so the endpoint is benign).
pub fn feature(
    mech: &BranchingMechanism,
    lambda: f64,
    z: f64,
    horizon: Horizon,
    tol: QuadTol,
) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {lambda}")));
    }
    if !(z > 0.0) {
        return Err(Error::InvalidParameter(format!("z must be > 0, got {z}")));
    }
    if lambda == 0.0 {
        return Ok(0.0);
    }
    let lo = match horizon {
        Horizon::Finite(t) => mech.v_flow(t, lambda)?,
        Horizon::Infinite => 0.0,
    };
    adaptive(
        |u| -(-z * u).exp_m1() / mech.phi(u),
        lo,
        lambda,
        tol,
    )
}

/// Discretized operator: matrix entries, drift offset, and grid metadata.
#[derive(Debug, Clone)]
pub struct OperatorMatrix {
    horizon: Horizon,
    /// row-major J x M
    entries: Vec<f64>,
    offset: Vec<f64>,
    grid: GriddedDensity,
    lgrid: LambdaGrid,
    sigma_min: f64,
    sigma_max: f64,
}

impl OperatorMatrix {
    pub fn horizon(&self) -> Horizon {
        self.horizon
    }

    pub fn num_lambda(&self) -> usize {
        self.lgrid.len()
    }

    pub fn num_cells(&self) -> usize {
        self.grid.num_cells()
    }

    pub fn entry(&self, j: usize, i: usize) -> f64 {
        self.entries[j * self.num_cells() + i]
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    pub fn grid(&self) -> &GriddedDensity {
        &self.grid
    }

    pub fn lambda_grid(&self) -> &LambdaGrid {
        &self.lgrid
    }

    /// Smallest singular value of `A` (injectivity proxy for the discretized
    /// operator).
    pub fn sigma_min(&self) -> f64 {
        self.sigma_min
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma_max
    }

    /// `A v` for a raw values vector.
    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        let (j_n, m) = (self.num_lambda(), self.num_cells());
        assert_eq!(values.len(), m, "values length does not match operator grid");
        let mut out = vec![0.0; j_n];
        for j in 0..j_n {
            let row = &self.entries[j * m..(j + 1) * m];
            out[j] = row.iter().zip(values).map(|(a, v)| a * v).sum();
        }
        out
    }

    /// `A^T u`.
    pub fn apply_transpose(&self, u: &[f64]) -> Vec<f64> {
        let (j_n, m) = (self.num_lambda(), self.num_cells());
        assert_eq!(u.len(), j_n, "vector length does not match lambda grid");
        let mut out = vec![0.0; m];
        for j in 0..j_n {
            let row = &self.entries[j * m..(j + 1) * m];
            for i in 0..m {
                out[i] += row[i] * u[j];
            }
        }
        out
    }

    /// Model log-Laplace curve `-offset - A k` for a density on this grid.
    pub fn model_g(&self, k: &GriddedDensity) -> Result<Vec<f64>> {
        if !k.same_grid(&self.grid) {
            return Err(Error::GridMismatch(
                "density grid does not match the operator grid".into(),
            ));
        }
        Ok(self.model_g_values(k.values()))
    }

    /// Model curve from a raw values vector (assumed on this grid).
    pub fn model_g_values(&self, values: &[f64]) -> Vec<f64> {
        self.apply(values)
            .iter()
            .zip(&self.offset)
            .map(|(av, o)| -o - av)
            .collect()
    }
}

/// Assemble the operator for `mech`, drift rate `beta`, a z-grid, a lambda
/// grid, and an integration horizon.  Entries use fixed 8-point Gauss
/// quadrature per z-cell; the offset is in closed form.
pub fn assemble_operator(
    mech: &BranchingMechanism,
    beta: f64,
    grid: &GriddedDensity,
    lgrid: &LambdaGrid,
    horizon: Horizon,
    tol: QuadTol,
) -> Result<OperatorMatrix> {
    if !(beta >= 0.0) {
        return Err(Error::InvalidParameter(format!("beta must be >= 0, got {beta}")));
    }
    let (j_n, m) = (lgrid.len(), grid.num_cells());
    let mut entries = vec![0.0; j_n * m];
    for (j, &lam) in lgrid.nodes().iter().enumerate() {
        if lam == 0.0 {
            continue; // Phi(0, z) == 0
        }
        // Phi as a function of z for fixed lambda; reuse the flow lower limit
        let lo = match horizon {
            Horizon::Finite(t) => mech.v_flow(t, lam)?,
            Horizon::Infinite => 0.0,
        };
        for i in 0..m {
            let (zl, zr) = grid.cell(i);
            let phi_at = |z: f64| -> Result<f64> {
                adaptive(|u| -(-z * u).exp_m1() / mech.phi(u), lo, lam, tol)
            };
            // 8-point Gauss in z across the cell; propagate quadrature errors
            let mut err = None;
            let val = gauss_legendre_8(
                |z| match phi_at(z) {
                    Ok(v) => v,
                    Err(e) => {
                        err = Some(e);
                        f64::NAN
                    }
                },
                zl,
                zr,
            );
            if let Some(e) = err {
                return Err(e);
            }
            entries[j * m + i] = val;
        }
    }
    let offset: Vec<f64> = lgrid
        .nodes()
        .iter()
        .map(|&lam| mech.flow_time_integral(horizon, lam).map(|v| beta * v))
        .collect::<Result<_>>()?;

    // injectivity proxy via SVD
    let mat = nalgebra::DMatrix::from_fn(j_n, m, |j, i| entries[j * m + i]);
    let svs = mat.singular_values();
    let sigma_max = svs.iter().cloned().fold(0.0, f64::max);
    let sigma_min = if j_n < m {
        0.0
    } else {
        svs.iter().cloned().fold(f64::INFINITY, f64::min)
    };

    Ok(OperatorMatrix {
        horizon,
        entries,
        offset,
        grid: grid.clone(),
        lgrid: lgrid.clone(),
        sigma_min,
        sigma_max,
    })
}

/// Empirical continuity data for the operator: returns
/// `(||model_g(k1) - model_g(k2)||_w^2, ||k1 - k2||_mu)`.
pub fn lipschitz_check(
    op: &OperatorMatrix,
    k1: &GriddedDensity,
    k2: &GriddedDensity,
) -> Result<(f64, f64)> {
    let g1 = op.model_g(k1)?;
    let g2 = op.model_g(k2)?;
    let diff: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| a - b).collect();
    Ok((op.lambda_grid().weighted_norm2(&diff), k1.mu_distance(k2)?))
}
