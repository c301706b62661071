//! Stationary-regime path generation for the jump-CIR process at unit
//! observation spacing.
//!
//! The diffusion part between jump epochs is the classical CIR transition:
//! with reversion `b`, level `beta/b` and squared volatility `2c`, the exact
//! one-step law is a scaled noncentral chi-square with `2 beta / c` degrees of
//! freedom, sampled as a Poisson-mixed Gamma.  Immigration jumps are an
//! independent compound Poisson stream with rate `Lambda_eps` and sizes drawn
//! from the truncated normalized density.  An Euler full-truncation scheme is
//! provided as a cross-check.

use crate::error::{Error, Result};
use crate::estimator::{ObservationSeries, SeriesMeta};
use crate::mechanism::{BranchingMechanism, ImmigrationSpec, JumpDensity};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp, Gamma, Poisson, StandardNormal};

/// Path generation scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Exact CIR transitions between compound-Poisson jump epochs.
    ExactCirJumps,
    /// Full-truncation Euler with per-substep jumps.
    Euler,
}

/// Simulation configuration.  The RNG is ChaCha12 seeded from `seed`, with
/// `stream` selecting an independent substream for replicates.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SimConfig {
    pub mech: BranchingMechanism,
    pub imm: ImmigrationSpec,
    pub scheme: Scheme,
    /// Euler substeps per unit interval (>= 20 recommended).
    pub substeps: usize,
    /// Small-jump truncation threshold `eps`.
    pub small_jump_cutoff: f64,
    /// Samples discarded before recording; `None` means `ceil(20/b)`.
    pub burn_in: Option<usize>,
    pub seed: u64,
    pub stream: u64,
    /// Initial state; `None` means the stationary mean `(beta + int z k)/b`.
    pub x0: Option<f64>,
}

impl SimConfig {
    pub fn new(mech: BranchingMechanism, imm: ImmigrationSpec, seed: u64) -> Self {
        SimConfig {
            mech,
            imm,
            scheme: Scheme::ExactCirJumps,
            substeps: 64,
            small_jump_cutoff: 0.0,
            burn_in: None,
            seed,
            stream: 0,
            x0: None,
        }
    }

    /// Same configuration on the replicate substream `idx`.
    pub fn for_replicate(&self, idx: u64) -> Self {
        let mut c = self.clone();
        c.stream = idx;
        c
    }

    fn validate(&self) -> Result<()> {
        if self.substeps == 0 {
            return Err(Error::Config("substeps must be >= 1".into()));
        }
        if !(self.small_jump_cutoff >= 0.0) {
            return Err(Error::Config("small_jump_cutoff must be >= 0".into()));
        }
        let rate = self.imm.density.total_mass(self.small_jump_cutoff);
        if !rate.is_finite() {
            return Err(Error::Config(format!(
                "truncated jump rate is not finite at cutoff {}",
                self.small_jump_cutoff
            )));
        }
        if let Some(x0) = self.x0 {
            if !(x0 >= 0.0) {
                return Err(Error::Config(format!("x0 must be >= 0, got {x0}")));
            }
        }
        Ok(())
    }

    fn effective_burn_in(&self) -> usize {
        self.burn_in
            .unwrap_or_else(|| (20.0 / self.mech.b).ceil() as usize)
    }

    fn effective_x0(&self) -> f64 {
        self.x0
            .unwrap_or_else(|| (self.imm.beta + self.imm.density.mean()) / self.mech.b)
    }
}

/// A generated path with jump accounting.
#[derive(Debug, Clone)]
pub struct PathSample {
    pub series: ObservationSeries,
    pub jumps_emitted: u64,
    pub scheme_used: Scheme,
}

/// Sampler for truncated jump sizes.
enum JumpSizes {
    None,
    Exponential { cutoff: f64, rate: f64 },
    Gridded { cells: Vec<(f64, f64)>, cum: Vec<f64> },
}

impl JumpSizes {
    fn build(density: &JumpDensity, cutoff: f64) -> Self {
        match density {
            JumpDensity::None => JumpSizes::None,
            JumpDensity::Exponential { rate, .. } => {
                JumpSizes::Exponential { cutoff, rate: *rate }
            }
            JumpDensity::Gridded(g) => {
                let mut cells = Vec::new();
                let mut cum = Vec::new();
                let mut acc = 0.0;
                for (i, &v) in g.values().iter().enumerate() {
                    let (l, r) = g.cell(i);
                    let l = l.max(cutoff);
                    if r > l && v > 0.0 {
                        acc += v * (r - l);
                        cells.push((l, r));
                        cum.push(acc);
                    }
                }
                JumpSizes::Gridded { cells, cum }
            }
        }
    }

    fn sample(&self, rng: &mut ChaCha12Rng) -> f64 {
        match self {
            JumpSizes::None => 0.0,
            JumpSizes::Exponential { cutoff, rate } => {
                cutoff + Exp::new(*rate).expect("rate > 0").sample(rng)
            }
            JumpSizes::Gridded { cells, cum } => {
                let total = *cum.last().expect("positive jump rate");
                let u: f64 = rng.random::<f64>() * total;
                let idx = cum.partition_point(|&c| c < u).min(cells.len() - 1);
                let (l, r) = cells[idx];
                let prev = if idx == 0 { 0.0 } else { cum[idx - 1] };
                let frac = ((u - prev) / (cum[idx] - prev)).clamp(0.0, 1.0);
                l + frac * (r - l)
            }
        }
    }
}

/// Exact CIR transition over `dt` (diffusion part only).
fn exact_cir_step(
    mech: &BranchingMechanism,
    beta: f64,
    x: f64,
    dt: f64,
    rng: &mut ChaCha12Rng,
) -> f64 {
    let b = mech.b;
    let c = mech.c;
    let decay = (-b * dt).exp();
    if c == 0.0 {
        return decay * x + beta * (1.0 - decay) / b;
    }
    let cbar = c * (1.0 - decay) / (2.0 * b);
    let eta = x * decay / cbar;
    let n = if eta > 0.0 {
        Poisson::new(0.5 * eta).expect("positive mean").sample(rng)
    } else {
        0.0
    };
    let shape = beta / c + n;
    if shape <= 0.0 {
        // beta = 0 and no mixing mass: the boundary at 0 absorbs
        return 0.0;
    }
    Gamma::new(shape, 2.0 * cbar).expect("valid gamma").sample(rng)
}

fn poisson_count(rate: f64, rng: &mut ChaCha12Rng) -> u64 {
    if rate <= 0.0 {
        0
    } else {
        Poisson::new(rate).expect("positive rate").sample(rng) as u64
    }
}

/// Advance one unit interval under the exact scheme.
fn unit_step_exact(
    cfg: &SimConfig,
    sizes: &JumpSizes,
    jump_rate: f64,
    mut x: f64,
    rng: &mut ChaCha12Rng,
    jumps: &mut u64,
) -> f64 {
    let m = poisson_count(jump_rate, rng);
    let mut epochs: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
    epochs.sort_by(f64::total_cmp);
    let mut t0 = 0.0;
    for &tj in &epochs {
        if tj > t0 {
            x = exact_cir_step(&cfg.mech, cfg.imm.beta, x, tj - t0, rng);
        }
        x += sizes.sample(rng);
        *jumps += 1;
        t0 = tj;
    }
    if t0 < 1.0 {
        x = exact_cir_step(&cfg.mech, cfg.imm.beta, x, 1.0 - t0, rng);
    }
    x
}

/// Advance one unit interval under full-truncation Euler.
fn unit_step_euler(
    cfg: &SimConfig,
    sizes: &JumpSizes,
    jump_rate: f64,
    mut x: f64,
    rng: &mut ChaCha12Rng,
    jumps: &mut u64,
) -> f64 {
    let h = 1.0 / cfg.substeps as f64;
    let b = cfg.mech.b;
    let c = cfg.mech.c;
    for _ in 0..cfg.substeps {
        let z: f64 = StandardNormal.sample(rng);
        let diffused = x + (cfg.imm.beta - b * x) * h + (2.0 * c * x.max(0.0) * h).sqrt() * z;
        x = diffused.max(0.0);
        let m = poisson_count(jump_rate * h, rng);
        for _ in 0..m {
            x += sizes.sample(rng);
            *jumps += 1;
        }
    }
    x
}

/// Generate `X_0, ..., X_n` at unit spacing after discarding the burn-in.
pub fn simulate_path(cfg: &SimConfig, n: usize) -> Result<PathSample> {
    if n == 0 {
        return Err(Error::Config("need n >= 1".into()));
    }
    cfg.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    rng.set_stream(cfg.stream);
    let sizes = JumpSizes::build(&cfg.imm.density, cfg.small_jump_cutoff);
    let jump_rate = cfg.imm.density.total_mass(cfg.small_jump_cutoff);
    let burn = cfg.effective_burn_in();
    let mut x = cfg.effective_x0();
    let mut jumps = 0u64;
    let mut values = Vec::with_capacity(n + 1);
    for i in 0..burn + n + 1 {
        if i > 0 {
            x = match cfg.scheme {
                Scheme::ExactCirJumps => {
                    unit_step_exact(cfg, &sizes, jump_rate, x, &mut rng, &mut jumps)
                }
                Scheme::Euler => unit_step_euler(cfg, &sizes, jump_rate, x, &mut rng, &mut jumps),
            };
        }
        if i >= burn {
            values.push(x);
        }
    }
    let mut series = ObservationSeries::new(values, 1.0)?;
    series.meta = SeriesMeta {
        seed: Some(cfg.seed),
        stream: Some(cfg.stream),
        config_hash: None,
        scheme: Some(format!("{:?}", cfg.scheme)),
    };
    Ok(PathSample { series, jumps_emitted: jumps, scheme_used: cfg.scheme })
}

/// `count` independent draws of `X_1` given `X_0 = x` (unit spacing).
pub fn one_step_samples(cfg: &SimConfig, x: f64, count: usize) -> Result<Vec<f64>> {
    if !(x >= 0.0) {
        return Err(Error::Config(format!("x must be >= 0, got {x}")));
    }
    cfg.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    rng.set_stream(cfg.stream);
    let sizes = JumpSizes::build(&cfg.imm.density, cfg.small_jump_cutoff);
    let jump_rate = cfg.imm.density.total_mass(cfg.small_jump_cutoff);
    let mut jumps = 0u64;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let v = match cfg.scheme {
            Scheme::ExactCirJumps => {
                unit_step_exact(cfg, &sizes, jump_rate, x, &mut rng, &mut jumps)
            }
            Scheme::Euler => unit_step_euler(cfg, &sizes, jump_rate, x, &mut rng, &mut jumps),
        };
        out.push(v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cir_cfg(seed: u64) -> SimConfig {
        let mech = BranchingMechanism::new(1.0, 1.0).unwrap();
        let imm = ImmigrationSpec::new(1.0, JumpDensity::None).unwrap();
        SimConfig::new(mech, imm, seed)
    }

    fn jump_cfg(seed: u64) -> SimConfig {
        let mech = BranchingMechanism::new(1.0, 1.0).unwrap();
        let imm = ImmigrationSpec::new(
            1.0,
            JumpDensity::Exponential { coeff: 1.0, rate: 1.0 },
        )
        .unwrap();
        SimConfig::new(mech, imm, seed)
    }

    #[test]
    fn zero_is_absorbing_without_immigration() {
        let mech = BranchingMechanism::new(1.0, 1.0).unwrap();
        let mut cfg = SimConfig::new(mech, ImmigrationSpec::none(), 1);
        cfg.x0 = Some(0.0);
        for scheme in [Scheme::ExactCirJumps, Scheme::Euler] {
            cfg.scheme = scheme;
            let p = simulate_path(&cfg, 50).unwrap();
            assert!(p.series.values.iter().all(|v| *v == 0.0), "{scheme:?}");
            assert_eq!(p.jumps_emitted, 0);
        }
    }

    #[test]
    fn paths_are_nonnegative_and_deterministic() {
        for scheme in [Scheme::ExactCirJumps, Scheme::Euler] {
            let mut cfg = jump_cfg(7);
            cfg.scheme = scheme;
            let p1 = simulate_path(&cfg, 500).unwrap();
            let p2 = simulate_path(&cfg, 500).unwrap();
            assert!(p1.series.values.iter().all(|v| *v >= 0.0));
            assert_eq!(p1.series.values, p2.series.values, "determinism under {scheme:?}");
            // different stream gives a different path
            let p3 = simulate_path(&cfg.for_replicate(1), 500).unwrap();
            assert_ne!(p1.series.values, p3.series.values);
        }
    }

    #[test]
    fn cir_stationary_mean() {
        // beta=b=c=1, no jumps: stationary Gamma(1,1), mean 1.
        let cfg = cir_cfg(42);
        let n = 40_000;
        let p = simulate_path(&cfg, n).unwrap();
        let xs = &p.series.values[1..];
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        // autocorrelated series: inflate the iid standard error by the
        // integrated autocorrelation (1 + 2 rho/(1-rho)), rho = e^{-b}
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64;
        let rho = (-1.0f64).exp();
        let se = (var * (1.0 + 2.0 * rho / (1.0 - rho)) / xs.len() as f64).sqrt();
        assert!((mean - 1.0).abs() <= 3.0 * se, "mean {mean} vs 1.0 (se {se})");
    }

    #[test]
    fn jump_mean_and_accounting() {
        let cfg = jump_cfg(11);
        let n = 40_000;
        let p = simulate_path(&cfg, n).unwrap();
        let xs = &p.series.values[1..];
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64;
        let rho = (-1.0f64).exp();
        let se = (var * (1.0 + 2.0 * rho / (1.0 - rho)) / xs.len() as f64).sqrt();
        // stationary mean (beta + int z k)/b = 2
        assert!((mean - 2.0).abs() <= 3.0 * se, "mean {mean} vs 2.0 (se {se})");
        // Poisson(1) jumps per unit time over burn_in + n intervals
        let t = (n + cfg.effective_burn_in()) as f64;
        let rate = p.jumps_emitted as f64 / t;
        let se_rate = (1.0 / t).sqrt();
        assert!((rate - 1.0).abs() <= 3.0 * se_rate, "jump rate {rate}");
    }

    #[test]
    fn euler_matches_exact_on_one_step_laplace() {
        let lam = 1.0;
        let x = 1.0;
        let count = 30_000;
        let mut means = Vec::new();
        let mut ses = Vec::new();
        for scheme in [Scheme::ExactCirJumps, Scheme::Euler] {
            let mut cfg = jump_cfg(5);
            cfg.scheme = scheme;
            cfg.substeps = 200;
            let draws = one_step_samples(&cfg, x, count).unwrap();
            let e: Vec<f64> = draws.iter().map(|v| (-lam * v).exp()).collect();
            let m = e.iter().sum::<f64>() / e.len() as f64;
            let sd =
                (e.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / e.len() as f64).sqrt();
            means.push(m);
            ses.push(sd / (e.len() as f64).sqrt());
        }
        let gap = (means[0] - means[1]).abs();
        let se = (ses[0] * ses[0] + ses[1] * ses[1]).sqrt();
        assert!(gap <= 3.0 * se + 2e-3, "cross-scheme gap {gap} (se {se})");
    }

    #[test]
    fn gridded_jump_sampler_inverse_cdf() {
        use crate::density::GriddedDensity;
        let g = GriddedDensity::new(vec![1.0, 2.0, 4.0], vec![0.5, 0.25]).unwrap();
        let mech = BranchingMechanism::new(1.0, 0.0).unwrap();
        let imm = ImmigrationSpec::new(0.0, JumpDensity::Gridded(g)).unwrap();
        let mut cfg = SimConfig::new(mech, imm, 3);
        cfg.x0 = Some(0.0);
        let sizes = JumpSizes::build(&cfg.imm.density, 0.0);
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let mut in_first = 0usize;
        let total = 20_000;
        for _ in 0..total {
            let s = sizes.sample(&mut rng);
            assert!((1.0..=4.0).contains(&s));
            if s <= 2.0 {
                in_first += 1;
            }
        }
        // mass split: 0.5 vs 0.5
        let frac = in_first as f64 / total as f64;
        assert!((frac - 0.5).abs() < 0.02, "frac {frac}");
    }
}
