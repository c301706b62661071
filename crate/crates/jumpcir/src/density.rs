//! Candidate jump densities, the dyadic-aligned grid, the `mu`-norm, the
//! lambda quadrature grid and the constraint set.

use crate::error::{Error, Result};
use crate::quad::{adaptive, QuadTol};
use std::io::{BufRead, Write};

/// `mu`-measure of a cell: `int_l^r (z ^ 1) dz`, exactly.
pub fn mu_cell(l: f64, r: f64) -> f64 {
    if r <= 1.0 {
        0.5 * (r * r - l * l)
    } else if l >= 1.0 {
        r - l
    } else {
        0.5 * (1.0 - l * l) + (r - 1.0)
    }
}

/// Piecewise-constant candidate density on a dyadic-aligned z-grid.
///
/// `values[i]` is the density on the cell `(breakpoints[i], breakpoints[i+1]]`;
/// the density is zero outside the grid.  Every dyadic point `2^i` inside the
/// grid must be a breakpoint, so that per-block variation constraints are
/// exact unions of cells.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GriddedDensity {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl GriddedDensity {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(Error::InvalidParameter("grid needs at least one cell".into()));
        }
        if values.len() + 1 != breakpoints.len() {
            return Err(Error::GridMismatch(format!(
                "{} breakpoints vs {} values",
                breakpoints.len(),
                values.len()
            )));
        }
        if !(breakpoints[0] > 0.0) {
            return Err(Error::InvalidParameter("breakpoints must be positive".into()));
        }
        if breakpoints.windows(2).any(|w| !(w[0] < w[1])) || breakpoints.iter().any(|b| !b.is_finite())
        {
            return Err(Error::InvalidParameter("breakpoints must be strictly ascending".into()));
        }
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParameter("density values must be >= 0".into()));
        }
        let g = GriddedDensity { breakpoints, values };
        g.check_dyadic_alignment()?;
        Ok(g)
    }

    fn check_dyadic_alignment(&self) -> Result<()> {
        let z0 = self.breakpoints[0];
        let zm = *self.breakpoints.last().unwrap();
        let mut e = z0.log2().ceil() as i32;
        // tolerate rounding in ceil at exact powers of two
        if 2f64.powi(e - 1) >= z0 * (1.0 - 1e-12) {
            e -= 1;
        }
        let mut d = 2f64.powi(e);
        while d <= zm * (1.0 + 1e-12) {
            if d >= z0 * (1.0 - 1e-12)
                && !self
                    .breakpoints
                    .iter()
                    .any(|&b| (b - d).abs() <= 1e-9 * d)
            {
                return Err(Error::InvalidParameter(format!(
                    "dyadic point {d} inside [{z0}, {zm}] is not a breakpoint"
                )));
            }
            d *= 2.0;
        }
        Ok(())
    }

    /// Zero density on the dyadic grid `(2^emin, 2^emax]` with
    /// `cells_per_block` equal cells per block.
    pub fn dyadic(emin: i32, emax: i32, cells_per_block: usize) -> Result<Self> {
        let counts = vec![cells_per_block; (emax - emin).max(0) as usize];
        Self::dyadic_pattern(emin, &counts)
    }

    /// Zero density on `(2^emin, 2^{emin+counts.len()}]` with `counts[k]`
    /// equal cells in the k-th dyadic block.
    pub fn dyadic_pattern(emin: i32, counts: &[usize]) -> Result<Self> {
        if counts.is_empty() || counts.iter().any(|&c| c == 0) {
            return Err(Error::InvalidParameter("block cell counts must be positive".into()));
        }
        let mut bs = vec![2f64.powi(emin)];
        for (k, &cnt) in counts.iter().enumerate() {
            let lo = 2f64.powi(emin + k as i32);
            let hi = 2f64.powi(emin + k as i32 + 1);
            for j in 1..=cnt {
                bs.push(lo + (hi - lo) * j as f64 / cnt as f64);
            }
        }
        let n = bs.len() - 1;
        Self::new(bs, vec![0.0; n])
    }

    /// Same grid, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.breakpoints.clone(), values)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn num_cells(&self) -> usize {
        self.values.len()
    }

    pub fn cell(&self, i: usize) -> (f64, f64) {
        (self.breakpoints[i], self.breakpoints[i + 1])
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.breakpoints.len() == other.breakpoints.len()
            && self
                .breakpoints
                .iter()
                .zip(&other.breakpoints)
                .all(|(a, b)| (a - b).abs() <= 1e-12 * a.abs().max(1.0))
    }

    /// Value of the step function at `z` (cells are `(l, r]`; zero outside).
    pub fn value_at(&self, z: f64) -> f64 {
        if z <= self.breakpoints[0] || z > *self.breakpoints.last().unwrap() {
            return 0.0;
        }
        let i = self.breakpoints.partition_point(|&b| b < z);
        self.values[i - 1]
    }

    /// `int |k| (z ^ 1) dz`, exact for the step function.
    pub fn mu_norm(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| v.abs() * mu_cell(self.breakpoints[i], self.breakpoints[i + 1]))
            .sum()
    }

    /// `mu`-distance to another density on the same grid.
    pub fn mu_distance(&self, other: &Self) -> Result<f64> {
        if !self.same_grid(other) {
            return Err(Error::GridMismatch("mu_distance over different grids".into()));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .enumerate()
            .map(|(i, (a, b))| (a - b).abs() * mu_cell(self.breakpoints[i], self.breakpoints[i + 1]))
            .sum())
    }

    /// `int_0^{z_hi} |k_step(z) - truth(z)| (z ^ 1) dz`, by adaptive
    /// quadrature per segment (the step is zero outside the grid).
    pub fn mu_error_vs<F: Fn(f64) -> f64>(&self, truth: F, z_hi: f64) -> Result<f64> {
        let tol = QuadTol::default();
        let mut acc = adaptive(|z| truth(z).abs() * z.min(1.0), 0.0, self.breakpoints[0], tol)?;
        for (i, &v) in self.values.iter().enumerate() {
            let (l, r) = self.cell(i);
            acc += adaptive(|z| (v - truth(z)).abs() * z.min(1.0), l, r, tol)?;
        }
        let zm = *self.breakpoints.last().unwrap();
        if z_hi > zm {
            acc += adaptive(|z| truth(z).abs() * z.min(1.0), zm, z_hi, tol)?;
        }
        Ok(acc)
    }

    /// Write as CSV with header `z_left,z_right,value` (17 significant digits).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "z_left,z_right,value")?;
        for (i, v) in self.values.iter().enumerate() {
            let (l, r) = self.cell(i);
            writeln!(w, "{:.16e},{:.16e},{:.16e}", l, r, v)?;
        }
        Ok(())
    }

    /// Read back the `z_left,z_right,value` CSV format.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut breakpoints: Vec<f64> = Vec::new();
        let mut values = Vec::new();
        for (ln, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || (ln == 0 && line.starts_with("z_left")) {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 3 {
                return Err(Error::Parse(format!("line {}: expected 3 columns", ln + 1)));
            }
            let l: f64 = parts[0].trim().parse().map_err(|e| Error::Parse(format!("{e}")))?;
            let r_: f64 = parts[1].trim().parse().map_err(|e| Error::Parse(format!("{e}")))?;
            let v: f64 = parts[2].trim().parse().map_err(|e| Error::Parse(format!("{e}")))?;
            if breakpoints.is_empty() {
                breakpoints.push(l);
            } else if (breakpoints.last().unwrap() - l).abs() > 1e-9 * l.abs().max(1.0) {
                return Err(Error::Parse(format!("line {}: cells are not contiguous", ln + 1)));
            }
            breakpoints.push(r_);
            values.push(v);
        }
        Self::new(breakpoints, values)
    }

    /// Cell index ranges of the dyadic blocks covering this grid.
    pub fn dyadic_blocks(&self) -> Vec<std::ops::Range<usize>> {
        let is_dyadic = |z: f64| {
            let e = z.log2().round();
            (z - 2f64.powf(e)).abs() <= 1e-9 * z
        };
        let mut blocks = Vec::new();
        let mut start = 0usize;
        for i in 1..self.breakpoints.len() {
            let last = i == self.breakpoints.len() - 1;
            if last || is_dyadic(self.breakpoints[i]) {
                blocks.push(start..i);
                start = i;
            }
        }
        blocks
    }
}

/// Quadrature nodes and weights discretizing the weighted L2(w) norm on a
/// compact lambda interval; the weights fold the quadrature rule and the
/// weight function together.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LambdaGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl LambdaGrid {
    pub fn new(nodes: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 || nodes.len() != weights.len() {
            return Err(Error::InvalidParameter("lambda grid needs matching nodes/weights".into()));
        }
        if nodes[0] != 0.0 {
            return Err(Error::InvalidParameter("lambda grid must start at 0".into()));
        }
        if nodes.windows(2).any(|w| !(w[0] < w[1])) || !nodes.last().unwrap().is_finite() {
            return Err(Error::InvalidParameter("lambda nodes must be strictly ascending".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidParameter(
                "lambda weights must be nonnegative with positive total".into(),
            ));
        }
        Ok(LambdaGrid { nodes, weights })
    }

    /// Trapezoid rule on `[0, lambda_max]` against a weight function `w`.
    pub fn trapezoid<F: Fn(f64) -> f64>(lambda_max: f64, count: usize, w: F) -> Result<Self> {
        if count < 2 || !(lambda_max > 0.0) {
            return Err(Error::InvalidParameter("need count >= 2 and lambda_max > 0".into()));
        }
        let h = lambda_max / (count - 1) as f64;
        let nodes: Vec<f64> = (0..count).map(|j| j as f64 * h).collect();
        let weights = nodes
            .iter()
            .enumerate()
            .map(|(j, &x)| {
                let rule = if j == 0 || j == count - 1 { 0.5 * h } else { h };
                rule * w(x)
            })
            .collect();
        Self::new(nodes, weights)
    }

    /// Trapezoid rule with the indicator weight `w == 1` on `[0, lambda_max]`.
    pub fn trapezoid_uniform(lambda_max: f64, count: usize) -> Result<Self> {
        Self::trapezoid(lambda_max, count, |_| 1.0)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Discretized `||f||_w^2 = sum_j w_j f_j^2`.
    pub fn weighted_norm2(&self, f: &[f64]) -> f64 {
        assert_eq!(f.len(), self.nodes.len(), "vector length does not match lambda grid");
        f.iter().zip(&self.weights).map(|(x, w)| w * x * x).sum()
    }
}

/// Constraint mode for the candidate set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintMode {
    /// Nonincreasing densities below the envelope.
    Monotone,
    /// Densities below the envelope with per-dyadic-block total variation
    /// at most `R`.
    BoundedVariation,
}

/// The discretized candidate set: an envelope density, a variation budget `R`
/// per dyadic block, and the constraint mode.
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    envelope: GriddedDensity,
    r: f64,
    mode: ConstraintMode,
}

impl ConstraintSet {
    pub fn new(envelope: GriddedDensity, r: f64, mode: ConstraintMode) -> Result<Self> {
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::InvalidParameter(format!("variation budget R must be > 0, got {r}")));
        }
        let norm = envelope.mu_norm();
        if norm > r * (1.0 + 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "envelope mu-norm {norm} exceeds R = {r}"
            )));
        }
        Ok(ConstraintSet { envelope, r, mode })
    }

    /// Default envelope `R/(2 z_max) * min(1, 1/z^2)`, discretized at cell
    /// right endpoints (so the step envelope sits below the analytic one).
    pub fn with_default_envelope(grid: &GriddedDensity, r: f64, mode: ConstraintMode) -> Result<Self> {
        let z_max = *grid.breakpoints().last().unwrap();
        let scale = r / (2.0 * z_max);
        let values = (0..grid.num_cells())
            .map(|i| {
                let (_, zr) = grid.cell(i);
                scale * (1.0f64).min(1.0 / (zr * zr))
            })
            .collect();
        Self::new(grid.with_values(values)?, r, mode)
    }

    pub fn envelope(&self) -> &GriddedDensity {
        &self.envelope
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn mode(&self) -> ConstraintMode {
        self.mode
    }

    pub fn num_cells(&self) -> usize {
        self.envelope.num_cells()
    }

    /// Per-block total variation (sum over adjacent cell pairs inside each
    /// dyadic block).
    pub fn block_variation(&self, values: &[f64]) -> Vec<f64> {
        self.envelope
            .dyadic_blocks()
            .iter()
            .map(|rg| {
                values[rg.clone()]
                    .windows(2)
                    .map(|w| (w[1] - w[0]).abs())
                    .sum()
            })
            .collect()
    }

    /// Membership test with tolerance `tol`.
    pub fn contains(&self, values: &[f64], tol: f64) -> bool {
        if values.len() != self.num_cells() {
            return false;
        }
        let env = self.envelope.values();
        let in_box = values
            .iter()
            .zip(env)
            .all(|(v, e)| *v >= -tol && *v <= e + tol);
        if !in_box {
            return false;
        }
        let tv_ok = self.block_variation(values).iter().all(|tv| *tv <= self.r + tol);
        match self.mode {
            ConstraintMode::Monotone => {
                tv_ok && values.windows(2).all(|w| w[1] <= w[0] + tol)
            }
            ConstraintMode::BoundedVariation => tv_ok,
        }
    }
}
