//! Empirical log-Laplace transforms and the constrained projection
//! estimators.
//!
//! `fit` minimizes `sum_j w_j (gn_j + o_j + (A k)_j)^2` over the discretized
//! constraint set with accelerated projected gradient (step `1/L`, monotone
//! restart).  An active-set polish solves the reduced least-squares problem
//! on the face identified by the iterate and accepts the candidate only when
//! it passes feasibility and a projected-gradient optimality check, which
//! gives finite termination on the faces the iteration settles into.

use crate::density::{ConstraintMode, ConstraintSet, GriddedDensity, LambdaGrid};
use crate::error::{Error, Result};
use crate::mechanism::{psi_time_integral, BranchingMechanism, Horizon, ImmigrationSpec};
use crate::operator::OperatorMatrix;
use crate::project::project_with;
use crate::quad::QuadTol;
use std::io::{BufRead, Write};

/// Provenance metadata carried with a series.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SeriesMeta {
    pub seed: Option<u64>,
    pub stream: Option<u64>,
    pub config_hash: Option<String>,
    pub scheme: Option<String>,
}

/// Nonnegative observations `X_0, ..., X_n` at fixed spacing `delta`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ObservationSeries {
    pub values: Vec<f64>,
    pub delta: f64,
    pub meta: SeriesMeta,
}

impl ObservationSeries {
    pub fn new(values: Vec<f64>, delta: f64) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidParameter(
                "series needs at least X_0 and X_1".into(),
            ));
        }
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParameter("observations must be >= 0".into()));
        }
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::InvalidParameter(format!("delta must be > 0, got {delta}")));
        }
        Ok(ObservationSeries { values, delta, meta: SeriesMeta::default() })
    }

    /// Number of increments `n` (observations minus the initial point).
    pub fn n(&self) -> usize {
        self.values.len() - 1
    }

    /// All observations equal (the fit may sit on the constraint boundary).
    pub fn is_degenerate(&self) -> bool {
        self.values.windows(2).all(|w| w[0] == w[1])
    }

    /// One value per line, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        for v in &self.values {
            writeln!(w, "{v:.16e}")?;
        }
        Ok(())
    }

    /// Accepts one value per line or `t,value` pairs; a leading header line
    /// is skipped.
    pub fn read_csv<R: BufRead>(r: R, delta: f64) -> Result<Self> {
        let mut values = Vec::new();
        for (ln, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(|s| s.trim()).collect();
            let field = match cols.len() {
                1 => cols[0],
                2 => cols[1],
                _ => {
                    return Err(Error::Parse(format!(
                        "line {}: expected 1 or 2 columns",
                        ln + 1
                    )))
                }
            };
            match field.parse::<f64>() {
                Ok(v) => values.push(v),
                Err(e) => {
                    if ln == 0 {
                        continue; // header
                    }
                    return Err(Error::Parse(format!("line {}: {e}", ln + 1)));
                }
            }
        }
        Self::new(values, delta)
    }
}

fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `g_{1,n}(lambda_j) = ln((1/n) sum_{k=1}^n e^{-lambda_j X_k})`, with a
/// log-sum-exp reduction.
pub fn empirical_g1(series: &ObservationSeries, lgrid: &LambdaGrid) -> Vec<f64> {
    let x = &series.values[1..];
    let n = x.len() as f64;
    lgrid
        .nodes()
        .iter()
        .map(|&lam| logsumexp(x.iter().map(move |&xi| -lam * xi)) - n.ln())
        .collect()
}

/// `g_{2,n}(lambda_j) = ln((1/n) sum_k exp{-lambda_j X_k + X_{k-1} v(lambda_j)})`,
/// where `v = v_delta` from the branching mechanism.
pub fn empirical_g2(
    series: &ObservationSeries,
    lgrid: &LambdaGrid,
    mech: &BranchingMechanism,
) -> Result<Vec<f64>> {
    let xs = &series.values;
    let n = (xs.len() - 1) as f64;
    let mut out = Vec::with_capacity(lgrid.len());
    for &lam in lgrid.nodes() {
        let v = mech.v_flow(series.delta, lam)?;
        let exps = (1..xs.len()).map(|k| -lam * xs[k] + xs[k - 1] * v);
        let max = exps.clone().fold(f64::NEG_INFINITY, f64::max);
        if max > 700.0 {
            return Err(Error::OverflowGuard(max));
        }
        out.push(logsumexp(exps) - n.ln());
    }
    Ok(out)
}

/// Solver options for [`fit`].
#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    /// Projected-gradient norm (gradient scale) at which to stop.
    pub tol: f64,
    pub max_iter: usize,
    /// How often to attempt the active-set polish.
    pub polish_every: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { tol: 1e-8, max_iter: 100_000, polish_every: 200 }
    }
}

/// Diagnostic flags on a fit.
#[derive(Debug, Clone, Copy, Default, serde::Serialize, serde::Deserialize)]
pub struct FitFlags {
    /// Some constraint is active at the solution.
    pub boundary_solution: bool,
    /// The operator is rank deficient (`sigma_min < 1e-12`); the density is
    /// reported but not unique.
    pub non_unique: bool,
    /// Input series was constant.
    pub degenerate_data: bool,
}

/// Optional error norms against a known truth (filled by the harness).
#[derive(Debug, Clone, Copy, Default, serde::Serialize, serde::Deserialize)]
pub struct TruthNorms {
    pub g_err_w2: Option<f64>,
    pub k_err_mu: Option<f64>,
}

/// Result of a constrained projection fit.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EstimateReport {
    pub density: GriddedDensity,
    pub g_hat: Vec<f64>,
    /// The empirical transform that was fitted (kept for diagnostics).
    #[serde(skip)]
    pub gn: Vec<f64>,
    /// `||gn - g_hat||_w^2` at the solution.
    pub objective: f64,
    pub iterations: usize,
    /// Final projected-gradient norm (gradient scale).
    pub kkt_residual: f64,
    pub flags: FitFlags,
    pub norms: TruthNorms,
    /// Objective after each iteration (not serialized).
    #[serde(skip)]
    pub objective_trace: Vec<f64>,
}

struct Quadratic<'a> {
    op: &'a OperatorMatrix,
    w: &'a [f64],
    r0: Vec<f64>,
}

impl Quadratic<'_> {
    fn residual(&self, k: &[f64]) -> Vec<f64> {
        self.op
            .apply(k)
            .iter()
            .zip(&self.r0)
            .map(|(av, r)| r + av)
            .collect()
    }

    /// `f(k) = 0.5 sum w_j r_j^2`
    fn value(&self, k: &[f64]) -> f64 {
        self.residual(k)
            .iter()
            .zip(self.w)
            .map(|(r, w)| 0.5 * w * r * r)
            .sum()
    }

    fn grad(&self, k: &[f64]) -> Vec<f64> {
        let wr: Vec<f64> = self
            .residual(k)
            .iter()
            .zip(self.w)
            .map(|(r, w)| w * r)
            .collect();
        self.op.apply_transpose(&wr)
    }

    /// Largest eigenvalue of `A^T W A` by power iteration.
    fn lipschitz(&self) -> f64 {
        let m = self.op.num_cells();
        let mut v = vec![1.0 / (m as f64).sqrt(); m];
        let mut lam = 0.0;
        for _ in 0..300 {
            let av = self.op.apply(&v);
            let wav: Vec<f64> = av.iter().zip(self.w).map(|(a, w)| a * w).collect();
            let bv = self.op.apply_transpose(&wav);
            let norm = bv.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            lam = norm;
            v = bv.iter().map(|x| x / norm).collect();
        }
        lam
    }
}

const PROJECT_FP_TOL_ITERS: usize = 20_000;

fn proj(cs: &ConstraintSet, x: &[f64]) -> Result<Vec<f64>> {
    project_with(x, cs, PROJECT_FP_TOL_ITERS)
}

fn pg_norm(q: &Quadratic, cs: &ConstraintSet, k: &[f64], l: f64) -> Result<f64> {
    let g = q.grad(k);
    let stepped: Vec<f64> = k.iter().zip(&g).map(|(ki, gi)| ki - gi / l).collect();
    let p = proj(cs, &stepped)?;
    Ok(l * k
        .iter()
        .zip(&p)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Active-set polish: solve the reduced least squares on the face suggested
/// by `k` and accept only if feasible and optimal to `tol`.
fn try_polish(
    q: &Quadratic,
    cs: &ConstraintSet,
    k: &[f64],
    l: f64,
    tol: f64,
) -> Result<Option<(Vec<f64>, f64)>> {
    let m = k.len();
    let env = cs.envelope().values();
    let scale = 1e-7;

    // groups of equal adjacent values (active monotone ties); in
    // bounded-variation mode each cell is its own group
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in 0..m {
        let tie = cs.mode() == ConstraintMode::Monotone
            && i > 0
            && (k[i] - k[i - 1]).abs() <= scale * (1.0 + k[i].abs());
        if tie {
            groups.last_mut().unwrap().push(i);
        } else {
            groups.push(vec![i]);
        }
    }
    if cs.mode() == ConstraintMode::BoundedVariation {
        // skip when a variation budget binds; the face geometry is signed
        // and not handled here
        let tv_active = cs
            .block_variation(k)
            .iter()
            .any(|tv| *tv >= cs.r() * (1.0 - 1e-9));
        if tv_active {
            return Ok(None);
        }
    }

    let mut fixed = vec![0.0; m];
    let mut free: Vec<&Vec<usize>> = Vec::new();
    for g in &groups {
        let val = k[g[0]];
        let env_min = g.iter().map(|&i| env[i]).fold(f64::INFINITY, f64::min);
        if val <= scale {
            // pinned at zero
        } else if val >= env_min - scale * (1.0 + env_min) {
            for &i in g {
                fixed[i] = env_min;
            }
        } else {
            free.push(g);
        }
    }

    let kc = if free.is_empty() {
        fixed
    } else {
        // normal equations over free group values
        let jn = q.w.len();
        let cols: Vec<Vec<f64>> = free
            .iter()
            .map(|g| {
                let mut ind = vec![0.0; m];
                for &i in g.iter() {
                    ind[i] = 1.0;
                }
                q.op.apply(&ind)
            })
            .collect();
        let resid0 = q.residual(&fixed);
        let nf = free.len();
        let mut gmat = nalgebra::DMatrix::zeros(nf, nf);
        let mut rhs = nalgebra::DVector::zeros(nf);
        for a in 0..nf {
            for b in 0..=a {
                let mut s = 0.0;
                for j in 0..jn {
                    s += q.w[j] * cols[a][j] * cols[b][j];
                }
                gmat[(a, b)] = s;
                gmat[(b, a)] = s;
            }
            let mut s = 0.0;
            for j in 0..jn {
                s += q.w[j] * cols[a][j] * resid0[j];
            }
            rhs[a] = -s;
        }
        let theta = match gmat.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => match gmat.svd(true, true).solve(&rhs, 1e-13) {
                Ok(t) => t,
                Err(_) => return Ok(None),
            },
        };
        let mut kc = fixed;
        for (g, th) in free.iter().zip(theta.iter()) {
            for &i in g.iter() {
                kc[i] = *th;
            }
        }
        kc
    };

    if !cs.contains(&kc, 1e-9) {
        return Ok(None);
    }
    let pg = pg_norm(q, cs, &kc, l)?;
    if pg <= tol {
        Ok(Some((kc, pg)))
    } else {
        Ok(None)
    }
}

/// Constrained weighted least-squares projection of an empirical transform
/// onto the model class.
pub fn fit(
    gn: &[f64],
    op: &OperatorMatrix,
    cs: &ConstraintSet,
    lgrid: &LambdaGrid,
    opts: FitOptions,
) -> Result<EstimateReport> {
    if gn.len() != lgrid.len() || op.num_lambda() != lgrid.len() {
        return Err(Error::GridMismatch(format!(
            "transform ({}), operator ({}) and lambda grid ({}) sizes differ",
            gn.len(),
            op.num_lambda(),
            lgrid.len()
        )));
    }
    if op.num_cells() != cs.num_cells() {
        return Err(Error::GridMismatch(format!(
            "operator has {} cells, constraint set {}",
            op.num_cells(),
            cs.num_cells()
        )));
    }
    if op.lambda_grid() != lgrid {
        return Err(Error::GridMismatch(
            "operator was assembled on a different lambda grid".into(),
        ));
    }
    if gn.iter().any(|g| !g.is_finite()) {
        return Err(Error::InvalidParameter("gn must be finite".into()));
    }

    let r0: Vec<f64> = gn.iter().zip(op.offset()).map(|(g, o)| g + o).collect();
    let q = Quadratic { op, w: lgrid.weights(), r0 };
    let l = q.lipschitz() * (1.0 + 1e-6);
    let m = op.num_cells();

    let mut k = vec![0.0; m];
    let mut y = k.clone();
    let mut t = 1.0f64;
    let mut fbest = q.value(&k);
    let mut trace = Vec::new();
    let mut pg = f64::INFINITY;
    let mut iterations = 0;

    if l == 0.0 {
        // zero operator: nothing to fit
        pg = 0.0;
    } else {
        for it in 1..=opts.max_iter {
            iterations = it;
            let gy = q.grad(&y);
            let stepped: Vec<f64> = y.iter().zip(&gy).map(|(yi, gi)| yi - gi / l).collect();
            let mut k_new = proj(cs, &stepped)?;
            if q.value(&k_new) > fbest {
                // monotone restart: plain projected-gradient step from k
                y = k.clone();
                t = 1.0;
                let gk = q.grad(&y);
                let stepped: Vec<f64> = y.iter().zip(&gk).map(|(yi, gi)| yi - gi / l).collect();
                k_new = proj(cs, &stepped)?;
            }
            let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_new;
            y = k_new
                .iter()
                .zip(&k)
                .map(|(kn, ko)| kn + beta * (kn - ko))
                .collect();
            k = k_new;
            t = t_new;
            let fk = q.value(&k);
            fbest = fbest.min(fk);
            trace.push(fk);

            let check = it % 10 == 0 || it == opts.max_iter;
            if check {
                pg = pg_norm(&q, cs, &k, l)?;
                if pg <= opts.tol {
                    break;
                }
            }
            if it % opts.polish_every == 0 || (check && pg <= 100.0 * opts.tol) {
                if let Some((kc, pgc)) = try_polish(&q, cs, &k, l, opts.tol)? {
                    if q.value(&kc) <= fbest + 1e-14 * (1.0 + fbest.abs()) {
                        k = kc;
                        pg = pgc;
                        trace.push(q.value(&k));
                        break;
                    }
                }
            }
        }
    }

    if pg > opts.tol && l > 0.0 {
        return Err(Error::SolverNonConvergence { max_iter: opts.max_iter, pg_norm: pg });
    }

    let g_hat = op.model_g_values(&k);
    let diff: Vec<f64> = gn.iter().zip(&g_hat).map(|(a, b)| a - b).collect();
    let objective = lgrid.weighted_norm2(&diff);

    let env = cs.envelope().values();
    let btol = 1e-8;
    let mut boundary = k
        .iter()
        .zip(env)
        .any(|(v, e)| *v <= btol || *v >= e - btol * (1.0 + e));
    if cs.mode() == ConstraintMode::Monotone {
        boundary |= k.windows(2).any(|w| (w[0] - w[1]).abs() <= btol);
    } else {
        boundary |= cs
            .block_variation(&k)
            .iter()
            .any(|tv| *tv >= cs.r() * (1.0 - 1e-9));
    }

    Ok(EstimateReport {
        density: op.grid().with_values(k)?,
        g_hat,
        gn: gn.to_vec(),
        objective,
        iterations,
        kkt_residual: pg,
        flags: FitFlags {
            boundary_solution: boundary,
            non_unique: op.sigma_min() < 1e-12,
            degenerate_data: false,
        },
        norms: TruthNorms::default(),
        objective_trace: trace,
    })
}

/// Martingale diagnostic sequence
/// `xi_k = exp{-lambda X_k + X_{k-1} v(lambda) + int_0^delta psi(v_s(lambda)) ds} - 1`
/// and its empirical variance.
pub fn xi_diagnostics(
    series: &ObservationSeries,
    mech: &BranchingMechanism,
    imm: &ImmigrationSpec,
    lambda: f64,
    tol: QuadTol,
) -> Result<(Vec<f64>, f64)> {
    let v = mech.v_flow(series.delta, lambda)?;
    let i1 = psi_time_integral(mech, imm, Horizon::Finite(series.delta), lambda, tol)?;
    let xs = &series.values;
    let xi: Vec<f64> = (1..xs.len())
        .map(|k| (-lambda * xs[k] + xs[k - 1] * v + i1).exp_m1())
        .collect();
    let n = xi.len() as f64;
    let mean = xi.iter().sum::<f64>() / n;
    let var = xi.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Ok((xi, var))
}

/// The quantity controlled by the risk bound, plus the projection-inequality
/// pair.
#[derive(Debug, Clone, Copy)]
pub struct RiskStatistic {
    /// `n ||g_hat - g||_w^2`
    pub scaled_risk: f64,
    /// `||g_hat - g||_w^2`
    pub lhs_sq: f64,
    /// `||gn - g||_w^2`
    pub rhs_sq: f64,
}

impl RiskStatistic {
    /// The projection inequality `lhs <= 4 rhs` up to `slack`.
    pub fn projection_inequality_holds(&self, slack: f64) -> bool {
        self.lhs_sq <= 4.0 * self.rhs_sq + slack
    }
}

/// Risk statistic of a fit against a known truth curve `g` on the grid.
pub fn risk_statistic(
    report: &EstimateReport,
    g: &[f64],
    lgrid: &LambdaGrid,
    n: usize,
) -> RiskStatistic {
    let dh: Vec<f64> = report.g_hat.iter().zip(g).map(|(a, b)| a - b).collect();
    let dn: Vec<f64> = report.gn.iter().zip(g).map(|(a, b)| a - b).collect();
    let lhs = lgrid.weighted_norm2(&dh);
    RiskStatistic {
        scaled_risk: n as f64 * lhs,
        lhs_sq: lhs,
        rhs_sq: lgrid.weighted_norm2(&dn),
    }
}
