//! Numerical evaluation of the hash-flattening delay model.
//!
//! The per-lookup delay law f(t) is discretized on a uniform grid; the
//! flattening time of a perfect standard tree follows the bottom-up
//! recursion "own lookup plus the max over k children", composed here with
//! grid convolutions and order-statistic maxima. The fat-tree closed form
//! is one max over the middle layer plus the root lookup. A seeded Monte
//! Carlo simulator of the same recursions cross-validates the analytic
//! grids and backs the tree-shape comparison on non-perfect trees.

pub mod bench;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::dhtnet::LatencyDistribution;
use crate::error::{Error, Result};
use crate::merkle::standard_height;

/// Truncation-mass threshold beyond the grid end.
const TAIL_TOLERANCE: f64 = 1e-4;

/// Default grid resolution.
const GRID_POINTS: usize = 1 << 14;

#[derive(Clone, Debug)]
pub struct FlattenModelParams {
    /// Leaf count N.
    pub n: usize,
    /// Fanout k.
    pub k: usize,
    pub dist: LatencyDistribution,
}

impl FlattenModelParams {
    pub fn new(n: usize, k: usize, dist: LatencyDistribution) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("leaf count must be >= 1"));
        }
        if k < 2 {
            return Err(Error::invalid("fanout k must be >= 2"));
        }
        dist.validate()?;
        Ok(FlattenModelParams { n, k, dist })
    }
}

impl FlattenModelParams {
    fn dist(&self) -> &LatencyDistribution {
        &self.dist
    }
}

/// A probability density sampled on the uniform grid `t_i = i * dt`,
/// `i < len`. Bin `i` carries mass `pdf[i] * dt`; the left edge is the
/// bin's representative for moments, so delta spikes compose exactly.
#[derive(Clone, Debug)]
pub struct DistributionGrid {
    pub dt: f64,
    pub pdf: Vec<f64>,
}

impl DistributionGrid {
    pub fn t_max(&self) -> f64 {
        self.dt * self.pdf.len() as f64
    }

    pub fn total_mass(&self) -> f64 {
        self.pdf.iter().sum::<f64>() * self.dt
    }

    pub fn renormalize(&mut self) {
        let mass = self.total_mass();
        if mass > 0.0 {
            for p in &mut self.pdf {
                *p /= mass;
            }
        }
    }

    pub fn mean(&self) -> f64 {
        self.pdf
            .iter()
            .enumerate()
            .map(|(i, p)| (i as f64 * self.dt) * p * self.dt)
            .sum()
    }

    /// Cumulative distribution at the end of each bin.
    fn cdf(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.pdf.len());
        let mut acc = 0.0;
        for p in &self.pdf {
            acc += p * self.dt;
            out.push(acc.min(1.0));
        }
        out
    }

    /// Discretize a latency law. `levels` scales the grid horizon for the
    /// compositions to come: t_max = 1.5 * (levels + 1) * (mean + 6 * std).
    pub fn from_latency(dist: &LatencyDistribution, levels: usize) -> Result<Self> {
        dist.validate()?;
        let spread = dist.mean() + 6.0 * dist.std_dev();
        let horizon = (1.5 * (levels as f64 + 1.0) * spread).max(1e-9);
        let (dt, pdf) = match dist {
            LatencyDistribution::Constant { value_ms } => {
                // Snap the grid so the spike lands exactly on a bin edge.
                let mut dt = horizon / GRID_POINTS as f64;
                let mut spike = 0usize;
                if *value_ms > 0.0 {
                    spike = (value_ms / dt).round().max(1.0) as usize;
                    dt = value_ms / spike as f64;
                }
                let mut pdf = vec![0.0; GRID_POINTS];
                pdf[spike] = 1.0 / dt;
                (dt, pdf)
            }
            LatencyDistribution::Exponential { mean_ms } => {
                let dt = horizon / GRID_POINTS as f64;
                let cdf = |t: f64| 1.0 - (-t / mean_ms).exp();
                let pdf = (0..GRID_POINTS)
                    .map(|i| {
                        let lo = i as f64 * dt;
                        (cdf(lo + dt) - cdf(lo)) / dt
                    })
                    .collect();
                (dt, pdf)
            }
            LatencyDistribution::LogNormal { mu, sigma } => {
                let dt = horizon / GRID_POINTS as f64;
                let density = |t: f64| {
                    if t <= 0.0 {
                        0.0
                    } else {
                        let z = (t.ln() - mu) / sigma;
                        (-0.5 * z * z).exp() / (t * sigma * (2.0 * std::f64::consts::PI).sqrt())
                    }
                };
                let pdf = (0..GRID_POINTS)
                    .map(|i| density((i as f64 + 0.5) * dt))
                    .collect();
                (dt, pdf)
            }
            LatencyDistribution::Empirical { samples } => {
                let dt = horizon / GRID_POINTS as f64;
                let mut pdf = vec![0.0; GRID_POINTS];
                let weight = 1.0 / (samples.len() as f64 * dt);
                for sample in samples {
                    let bin = ((sample / dt) as usize).min(GRID_POINTS - 1);
                    pdf[bin] += weight;
                }
                (dt, pdf)
            }
        };
        let mut grid = DistributionGrid { dt, pdf };
        let lost = 1.0 - grid.total_mass();
        if lost > TAIL_TOLERANCE {
            return Err(Error::Resolution {
                lost,
                t_max: grid.t_max(),
            });
        }
        grid.renormalize();
        Ok(grid)
    }
}

/// Distribution of the max of `k` iid copies: bin mass F(t)^k differenced,
/// the bin-integrated form of k F^{k-1} f.
pub fn pdf_level_max(child: &DistributionGrid, k: usize) -> Result<DistributionGrid> {
    if k < 1 {
        return Err(Error::invalid("level max needs k >= 1"));
    }
    if k == 1 {
        return Ok(child.clone());
    }
    let cdf = child.cdf();
    let dt = child.dt;
    let mut prev = 0.0;
    let pdf = cdf
        .iter()
        .map(|f| {
            let fk = f.powi(k as i32);
            let mass = (fk - prev).max(0.0);
            prev = fk;
            mass / dt
        })
        .collect();
    let mut grid = DistributionGrid { dt, pdf };
    grid.renormalize();
    Ok(grid)
}

/// Distribution of the sum of two independent grid variables, discrete
/// convolution over the common grid (FFT-backed). Mass pushed past t_max is
/// tracked against the resolution tolerance.
pub fn pdf_convolve(a: &DistributionGrid, b: &DistributionGrid) -> Result<DistributionGrid> {
    if (a.dt - b.dt).abs() > 1e-12 * a.dt.max(b.dt) || a.pdf.len() != b.pdf.len() {
        return Err(Error::invalid("convolution needs a common grid"));
    }
    let n = a.pdf.len();
    let size = (2 * n).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(size);
    let ifft = planner.plan_fft_inverse(size);

    let mut fa: Vec<Complex<f64>> = a
        .pdf
        .iter()
        .map(|p| Complex::new(p * a.dt, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    let mut fb: Vec<Complex<f64>> = b
        .pdf
        .iter()
        .map(|p| Complex::new(p * b.dt, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    fft.process(&mut fa);
    fft.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= *y;
    }
    ifft.process(&mut fa);
    let scale = 1.0 / size as f64;

    let mut pdf = vec![0.0; n];
    let mut kept = 0.0;
    let mut lost = 0.0;
    for (i, value) in fa.iter().enumerate().take(2 * n - 1) {
        let mass = (value.re * scale).max(0.0);
        if i < n {
            pdf[i] = mass / a.dt;
            kept += mass;
        } else {
            lost += mass;
        }
    }
    let _ = kept;
    if lost > TAIL_TOLERANCE {
        return Err(Error::Resolution {
            lost,
            t_max: a.t_max(),
        });
    }
    let mut grid = DistributionGrid { dt: a.dt, pdf };
    grid.renormalize();
    Ok(grid)
}

/// Analytic flattening-time distribution of a perfect standard k-ary tree:
/// leaf level is f itself, each level up convolves the children's max with
/// one more lookup. Requires N to be an exact power of k.
pub fn flatten_time_std(params: &FlattenModelParams) -> Result<(DistributionGrid, f64)> {
    require_perfect(params.n, params.k)?;
    let height = standard_height(params.n, params.k);
    let base = DistributionGrid::from_latency(params.dist(), height + 1)?;
    let mut level = base.clone();
    for _ in 1..height {
        let max_of_children = pdf_level_max(&level, params.k)?;
        level = pdf_convolve(&max_of_children, &base)?;
    }
    let mean = level.mean();
    Ok((level, mean))
}

/// Analytic flattening-time distribution of a fat tree: the root lookup
/// plus the max over the ceil(N/k) middle lookups; just the root when the
/// tree is two levels.
pub fn flatten_time_fmt(params: &FlattenModelParams) -> Result<(DistributionGrid, f64)> {
    let base = DistributionGrid::from_latency(params.dist(), 3)?;
    if params.n <= params.k {
        let mean = base.mean();
        return Ok((base, mean));
    }
    let middles = params.n.div_ceil(params.k);
    let max_middle = pdf_level_max(&base, middles)?;
    let grid = pdf_convolve(&max_middle, &base)?;
    let mean = grid.mean();
    Ok((grid, mean))
}

/// Distribution of the provider round: one parallel lookup per leaf.
pub fn provider_phase(params: &FlattenModelParams) -> Result<(DistributionGrid, f64)> {
    let base = DistributionGrid::from_latency(params.dist(), 2)?;
    let grid = pdf_level_max(&base, params.n)?;
    let mean = grid.mean();
    Ok((grid, mean))
}

fn require_perfect(n: usize, k: usize) -> Result<()> {
    let mut m = n;
    while m > 1 {
        if m % k != 0 {
            return Err(Error::invalid(format!(
                "analytic recursion needs a perfect tree; N={n} is not a power of k={k}"
            )));
        }
        m /= k;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelShape {
    Standard,
    Fat,
}

#[derive(Clone, Copy, Debug)]
pub struct McEstimate {
    pub mean: f64,
    /// Half-width of the 99% confidence interval.
    pub half_width: f64,
    pub trials: u64,
}

impl McEstimate {
    pub fn low(&self) -> f64 {
        self.mean - self.half_width
    }

    pub fn high(&self) -> f64 {
        self.mean + self.half_width
    }

    pub fn overlaps(&self, other: &McEstimate) -> bool {
        self.low() <= other.high() && other.low() <= self.high()
    }
}

/// Simulate the flattening recursion by direct sampling: sum along the
/// path, max across siblings. Works for any N, perfect or not, following
/// the leftmost-greedy packing of the real trees.
pub fn monte_carlo_flatten(
    params: &FlattenModelParams,
    shape: ModelShape,
    trials: u64,
    seed: u64,
) -> Result<McEstimate> {
    if trials < 1 {
        return Err(Error::invalid("trials must be >= 1"));
    }
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for trial in 0..trials {
        // One independent stream per trial.
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ trial.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let sample = match shape {
            ModelShape::Standard => {
                let mut level: Vec<f64> = (0..params.n)
                    .map(|_| params.dist.sample(&mut rng))
                    .collect();
                while level.len() > 1 {
                    level = level
                        .chunks(params.k)
                        .map(|children| {
                            params.dist.sample(&mut rng)
                                + children.iter().cloned().fold(0.0, f64::max)
                        })
                        .collect();
                }
                level[0]
            }
            ModelShape::Fat => {
                if params.n <= params.k {
                    params.dist.sample(&mut rng)
                } else {
                    let middles = params.n.div_ceil(params.k);
                    let root = params.dist.sample(&mut rng);
                    let slowest = (0..middles)
                        .map(|_| params.dist.sample(&mut rng))
                        .fold(0.0, f64::max);
                    root + slowest
                }
            }
        };
        sum += sample;
        sum_sq += sample * sample;
    }
    let mean = sum / trials as f64;
    let variance = (sum_sq / trials as f64 - mean * mean).max(0.0);
    let half_width = 2.576 * (variance / trials as f64).sqrt();
    Ok(McEstimate {
        mean,
        half_width,
        trials,
    })
}

/// Comparison of the two tree shapes' flattening times, analytically where
/// the tree is perfect and by Monte Carlo always, plus the order-statistics
/// bound behind the proof: E[max of N] versus E[max of ceil(N/k)].
#[derive(Clone, Debug)]
pub struct Theorem1Report {
    pub params_n: usize,
    pub params_k: usize,
    pub analytic_std_mean: Option<f64>,
    pub analytic_fmt_mean: f64,
    pub mc_std: McEstimate,
    pub mc_fmt: McEstimate,
    /// E[max over all N leaf lookups].
    pub expected_max_full: f64,
    /// E[max over the ceil(N/k) middle lookups].
    pub expected_max_middle: f64,
    /// Standard flattening no faster than fat, with separated intervals or
    /// exact closed forms.
    pub holds: bool,
}

pub fn verify_theorem1(
    params: &FlattenModelParams,
    trials: u64,
    seed: u64,
) -> Result<Theorem1Report> {
    if params.n <= params.k {
        return Err(Error::invalid(
            "theorem comparison needs N > k so the shapes differ",
        ));
    }
    let analytic_std_mean = match flatten_time_std(params) {
        Ok((_, mean)) => Some(mean),
        Err(Error::InvalidArgument(_)) => None,
        Err(e) => return Err(e),
    };
    let (_, analytic_fmt_mean) = flatten_time_fmt(params)?;
    let mc_std = monte_carlo_flatten(params, ModelShape::Standard, trials, seed)?;
    let mc_fmt = monte_carlo_flatten(params, ModelShape::Fat, trials, seed.wrapping_add(1))?;

    let base = DistributionGrid::from_latency(params.dist(), 2)?;
    let expected_max_full = pdf_level_max(&base, params.n)?.mean();
    let expected_max_middle = pdf_level_max(&base, params.n.div_ceil(params.k))?.mean();

    let separated = mc_fmt.high() < mc_std.low();
    let degenerate_equal = params.dist.std_dev() == 0.0 && mc_std.mean >= mc_fmt.mean;
    let analytic_agrees = analytic_std_mean.map_or(true, |std| std >= analytic_fmt_mean);
    Ok(Theorem1Report {
        params_n: params.n,
        params_k: params.k,
        analytic_std_mean,
        analytic_fmt_mean,
        mc_std,
        mc_fmt,
        expected_max_full,
        expected_max_middle,
        holds: (separated || degenerate_equal) && analytic_agrees,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_params(n: usize, k: usize, mean: f64) -> FlattenModelParams {
        FlattenModelParams::new(n, k, LatencyDistribution::exponential(mean).unwrap()).unwrap()
    }

    fn const_params(n: usize, k: usize, c: f64) -> FlattenModelParams {
        FlattenModelParams::new(n, k, LatencyDistribution::constant(c).unwrap()).unwrap()
    }

    #[test]
    fn level_max_identity_and_delta() {
        let grid =
            DistributionGrid::from_latency(&LatencyDistribution::constant(10.0).unwrap(), 3)
                .unwrap();
        let same = pdf_level_max(&grid, 1).unwrap();
        assert_eq!(same.pdf, grid.pdf);
        // Max of constants is the same constant.
        let maxed = pdf_level_max(&grid, 7).unwrap();
        assert!((maxed.mean() - 10.0).abs() < 1e-9, "mean {}", maxed.mean());
    }

    #[test]
    fn level_max_of_uniform_pair_is_linear_density() {
        // Uniform[0,1] via the empirical constructor cannot express a
        // continuum; build the grid directly instead.
        let points = GRID_POINTS;
        let t_max = 2.0;
        let dt = t_max / points as f64;
        let pdf: Vec<f64> = (0..points)
            .map(|i| {
                let t = (i as f64 + 0.5) * dt;
                if t <= 1.0 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let mut grid = DistributionGrid { dt, pdf };
        grid.renormalize();
        let maxed = pdf_level_max(&grid, 2).unwrap();
        for i in (0..points).step_by(points / 64) {
            let t_center = (i as f64 + 0.5) * dt;
            if t_center < 1.0 - dt {
                let expected = 2.0 * t_center;
                assert!(
                    (maxed.pdf[i] - expected).abs() < 1e-3,
                    "pdf({t_center}) = {} want {expected}",
                    maxed.pdf[i]
                );
            }
        }
    }

    #[test]
    fn convolution_of_deltas_adds() {
        let grid =
            DistributionGrid::from_latency(&LatencyDistribution::constant(7.0).unwrap(), 4)
                .unwrap();
        let sum = pdf_convolve(&grid, &grid).unwrap();
        assert!((sum.mean() - 14.0).abs() < 1e-9);

        // Convolving with a delta at zero is the identity.
        let mut zero = DistributionGrid {
            dt: grid.dt,
            pdf: vec![0.0; grid.pdf.len()],
        };
        zero.pdf[0] = 1.0 / zero.dt;
        let same = pdf_convolve(&grid, &zero).unwrap();
        assert!((same.mean() - grid.mean()).abs() < 1e-9);
    }

    #[test]
    fn convolution_of_exponentials_is_gamma() {
        let grid =
            DistributionGrid::from_latency(&LatencyDistribution::exponential(40.0).unwrap(), 4)
                .unwrap();
        let sum = pdf_convolve(&grid, &grid).unwrap();
        // Gamma(2, 40): mean 80.
        assert!(
            (sum.mean() - 80.0).abs() / 80.0 < 0.01,
            "mean {}",
            sum.mean()
        );
    }

    #[test]
    fn grid_mismatch_is_invalid() {
        let a = DistributionGrid {
            dt: 1.0,
            pdf: vec![1.0],
        };
        let b = DistributionGrid {
            dt: 0.5,
            pdf: vec![2.0],
        };
        assert!(matches!(
            pdf_convolve(&a, &b),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn constant_closed_forms() {
        // H = 5 levels of lookups.
        let (_, mean) = flatten_time_std(&const_params(16, 2, 10.0)).unwrap();
        assert!((mean - 50.0).abs() < 1e-6, "std mean {mean}");

        // N = k: two levels, two lookups.
        let (_, mean) = flatten_time_std(&const_params(4, 4, 10.0)).unwrap();
        assert!((mean - 20.0).abs() < 1e-6, "two-level std mean {mean}");

        let (_, mean) = flatten_time_fmt(&const_params(64, 4, 10.0)).unwrap();
        assert!((mean - 20.0).abs() < 1e-6, "fmt mean {mean}");

        // N <= k: the fat tree is two levels, one hash lookup.
        let (_, mean) = flatten_time_fmt(&const_params(3, 4, 10.0)).unwrap();
        assert!((mean - 10.0).abs() < 1e-6, "degenerate fmt mean {mean}");
    }

    #[test]
    fn non_perfect_tree_rejected_by_analytic_recursion() {
        assert!(matches!(
            flatten_time_std(&const_params(10, 3, 1.0)),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn analytic_matches_monte_carlo_for_exponential() {
        let params = exp_params(64, 4, 50.0);
        let (_, analytic) = flatten_time_std(&params).unwrap();
        let mc = monte_carlo_flatten(&params, ModelShape::Standard, 100_000, 7).unwrap();
        let rel = (analytic - mc.mean).abs() / mc.mean;
        assert!(rel < 0.05, "analytic {analytic} vs mc {} ({rel})", mc.mean);

        let (_, analytic_fmt) = flatten_time_fmt(&params).unwrap();
        let mc_fmt = monte_carlo_flatten(&params, ModelShape::Fat, 100_000, 8).unwrap();
        let rel = (analytic_fmt - mc_fmt.mean).abs() / mc_fmt.mean;
        assert!(rel < 0.05, "fmt {analytic_fmt} vs mc {} ({rel})", mc_fmt.mean);
    }

    #[test]
    fn monte_carlo_constant_has_zero_width() {
        let est = monte_carlo_flatten(&const_params(16, 2, 10.0), ModelShape::Standard, 100, 3)
            .unwrap();
        assert_eq!(est.mean, 50.0);
        assert_eq!(est.half_width, 0.0);
        let single =
            monte_carlo_flatten(&const_params(16, 2, 10.0), ModelShape::Fat, 1, 3).unwrap();
        assert_eq!(single.mean, 20.0);
        assert_eq!(single.trials, 1);
    }

    #[test]
    fn expected_max_of_exponentials_matches_harmonic_numbers() {
        // Order-statistics closed form: E[max of n iid Exp(mean)] is
        // mean * H_n with H_n the n-th harmonic number.
        let mean = 50.0;
        let base =
            DistributionGrid::from_latency(&LatencyDistribution::exponential(mean).unwrap(), 4)
                .unwrap();
        for n in [2usize, 8, 64] {
            let grid_mean = pdf_level_max(&base, n).unwrap().mean();
            let harmonic: f64 = (1..=n).map(|i| 1.0 / i as f64).sum();
            let expected = mean * harmonic;
            let rel = (grid_mean - expected).abs() / expected;
            assert!(rel < 0.01, "n={n}: grid {grid_mean} vs closed {expected}");
        }
    }

    #[test]
    fn theorem1_constant_gap_is_two_levels() {
        // N = k^3: standard needs 4 lookup rounds, fat needs 2.
        let report = verify_theorem1(&const_params(64, 4, 10.0), 200, 5).unwrap();
        assert!(report.holds);
        assert!((report.mc_std.mean - 40.0).abs() < 1e-9);
        assert!((report.mc_fmt.mean - 20.0).abs() < 1e-9);
        assert!((report.analytic_std_mean.unwrap() - 40.0).abs() < 1e-6);
    }

    #[test]
    fn theorem1_exponential_with_separated_intervals() {
        let report = verify_theorem1(&exp_params(256, 4, 50.0), 10_000, 11).unwrap();
        assert!(report.holds, "{report:?}");
        assert!(!report.mc_std.overlaps(&report.mc_fmt));
        assert!(report.expected_max_full > report.expected_max_middle);
        let analytic = report.analytic_std_mean.unwrap();
        let rel = (analytic - report.mc_std.mean).abs() / report.mc_std.mean;
        assert!(rel < 0.05);
    }

    #[test]
    fn theorem1_needs_distinguishable_shapes() {
        assert!(verify_theorem1(&const_params(4, 4, 1.0), 10, 1).is_err());
    }

    #[test]
    fn resolution_error_when_horizon_too_small() {
        // A two-level horizon cannot hold an eight-fold convolution chain.
        let base =
            DistributionGrid::from_latency(&LatencyDistribution::exponential(50.0).unwrap(), 0)
                .unwrap();
        let mut acc = base.clone();
        let mut failed = false;
        for _ in 0..12 {
            match pdf_convolve(&acc, &base) {
                Ok(next) => acc = next,
                Err(Error::Resolution { .. }) => {
                    failed = true;
                    break;
                }
                Err(other) => panic!("unexpected error {other}"),
            }
        }
        assert!(failed, "tail mass was never flagged");
    }
}
