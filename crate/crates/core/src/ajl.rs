//! Noise-robust day-level jump test on equispaced prices.
//!
//! Returns are pre-averaged with two weight functions `g` and `h`; a
//! noise-debiased power variation `V̄` is built from each, and their ratio
//! separates days with jumps from continuous days.
//!
//! The statistic is normalised as `S_RJ = V̄(g) / (γ' V̄(h))`. Without the
//! `γ'` factor the ratio tends to `γ^{p/2}` on continuous paths and to `γ'`
//! when a jump is present; dividing by `γ'` gives the limits `γ''` and `1`
//! around which the rejection region is stated.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::lm::sigma_hat_sq;
use crate::weights::WeightFunction;

/// `E|N(0,1)|^r` for even `r`: `(r-1)!!`.
fn normal_even_moment(r: u32) -> f64 {
    (1..r).step_by(2).map(f64::from).product()
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * f64::from(n - i) / f64::from(i + 1))
}

fn check_p(p: u32) -> Result<()> {
    if p < 4 || p % 2 != 0 {
        return Err(Error::Config(format!("power p must be an even integer >= 4, got {p}")));
    }
    Ok(())
}

/// Coefficient of `ρ_l` in equation `j` of the triangular system.
pub fn rho_system_coefficient(p: u32, j: u32, l: u32) -> f64 {
    2f64.powi(l as i32) * normal_even_moment(2 * (j - l)) * binomial(p - 2 * l, p - 2 * j)
}

/// The debiasing coefficients `ρ(p)_0..=ρ(p)_{p/2}`.
pub fn solve_rho(p: u32) -> Result<Vec<f64>> {
    check_p(p)?;
    let mut rho = vec![1.0];
    for j in 1..=p / 2 {
        let partial: f64 = (0..j).map(|l| rho_system_coefficient(p, j, l) * rho[l as usize]).sum();
        rho.push(-partial / rho_system_coefficient(p, j, j));
    }
    Ok(rho)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AjlConstants {
    pub gamma: f64,
    pub gamma_prime: f64,
    pub gamma_dprime: f64,
}

pub fn ajl_constants(g: &WeightFunction, h: &WeightFunction, p: u32) -> Result<AjlConstants> {
    check_p(p)?;
    let gamma = g.moment(2) / h.moment(2);
    let gamma_prime = g.moment(p) / h.moment(p);
    let gamma_dprime = gamma.powi(p as i32 / 2) / gamma_prime;
    if !(gamma_dprime > 1.0 + 1e-9) {
        return Err(Error::Config(format!(
            "weight pair g = {}, h = {} gives gamma'' = {gamma_dprime:.6}; it must exceed 1",
            g.name(),
            h.name()
        )));
    }
    Ok(AjlConstants {
        gamma,
        gamma_prime,
        gamma_dprime,
    })
}

/// Discrete pre-averaging kernels for one weight function.
#[derive(Debug, Clone)]
struct Kernel {
    /// `g_j` for `j = 1..k_n-1`.
    bar: Vec<f64>,
    /// `(g_j - g_{j-1})^2` for `j = 1..=k_n`.
    hat: Vec<f64>,
}

impl Kernel {
    fn new(w: &WeightFunction, k_n: usize) -> Self {
        let g = w.discretize(k_n);
        Self {
            bar: g[1..k_n].to_vec(),
            hat: (1..=k_n).map(|j| (g[j] - g[j - 1]).powi(2)).collect(),
        }
    }
}

fn combine(ybar: &[f64], yhat: &[f64], p: u32, rho: &[f64]) -> f64 {
    ybar.iter()
        .zip(yhat)
        .map(|(&yb, &yh)| {
            let (a, b) = (yb.abs(), yh.abs());
            rho.iter()
                .enumerate()
                .map(|(l, r)| r * a.powi((p - 2 * l as u32) as i32) * b.powi(l as i32))
                .sum::<f64>()
        })
        .sum()
}

fn check_len(n_inc: usize, k_n: usize) -> Result<()> {
    if n_inc < k_n + 1 {
        return Err(Error::TooShort {
            what: "pre-averaging window",
            needed: k_n + 1,
            got: n_inc,
        });
    }
    Ok(())
}

/// Direct O(n k_n) evaluation of `V̄`; kept as the reference for the FFT path.
pub fn vbar_naive(returns: &[f64], w: &WeightFunction, p: u32, k_n: usize) -> Result<f64> {
    let rho = solve_rho(p)?;
    check_len(returns.len(), k_n)?;
    let g = w.discretize(k_n);
    let windows = returns.len() - k_n + 1;
    let mut ybar = vec![0.0; windows];
    let mut yhat = vec![0.0; windows];
    for i in 0..windows {
        // returns[i + j - 1] is the j-th increment after window start i
        for j in 1..k_n {
            ybar[i] += g[j] * returns[i + j - 1];
        }
        for j in 1..=k_n {
            yhat[i] += ((g[j] - g[j - 1]) * returns[i + j - 1]).powi(2);
        }
    }
    Ok(combine(&ybar, &yhat, p, &rho))
}

/// Smallest `2^a 3^b 5^c` not below `n`.
fn smooth_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for f in [2, 3, 5] {
            while r % f == 0 {
                r /= f;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// FFT engine for windowed sums over a whole day.
struct Correlator {
    planner: Mutex<FftPlanner<f64>>,
}

impl Correlator {
    fn new() -> Self {
        Self {
            planner: Mutex::new(FftPlanner::new()),
        }
    }

    fn plans(&self, n: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
        let mut p = self.planner.lock().expect("planner lock");
        (p.plan_fft_forward(n), p.plan_fft_inverse(n))
    }

    /// Splits the transform of `a + i b` (both real) into those of `a`, `b`.
    fn split(z: &[Complex64]) -> (Vec<Complex64>, Vec<Complex64>) {
        let n = z.len();
        let half = Complex64::new(0.5, 0.0);
        let minus_half_i = Complex64::new(0.0, -0.5);
        (0..n)
            .map(|k| {
                let c = z[(n - k) % n].conj();
                ((z[k] + c) * half, (z[k] - c) * minus_half_i)
            })
            .unzip()
    }

    /// `(Ȳ_i, Ŷ_i)` for every window and every kernel, via one forward
    /// transform of `d + i d^2` and one inverse per kernel.
    fn window_stats(&self, returns: &[f64], kernels: &[&Kernel], k_n: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
        let n_inc = returns.len();
        let windows = n_inc - k_n + 1;
        let size = smooth_size(n_inc);
        let (fwd, inv) = self.plans(size);

        let mut z = vec![Complex64::new(0.0, 0.0); size];
        for (zi, &d) in z.iter_mut().zip(returns) {
            *zi = Complex64::new(d, d * d);
        }
        fwd.process(&mut z);
        let (d1, d2) = Self::split(&z);

        kernels
            .iter()
            .map(|kern| {
                let mut u = vec![Complex64::new(0.0, 0.0); size];
                for (j, &b) in kern.bar.iter().enumerate() {
                    u[j].re = b;
                }
                for (j, &h) in kern.hat.iter().enumerate() {
                    u[j].im = h;
                }
                fwd.process(&mut u);
                let (kb, kh) = Self::split(&u);
                let i = Complex64::new(0.0, 1.0);
                let mut y: Vec<Complex64> = (0..size)
                    .map(|k| d1[k] * kb[k].conj() + i * d2[k] * kh[k].conj())
                    .collect();
                inv.process(&mut y);
                let scale = 1.0 / size as f64;
                let ybar = y[..windows].iter().map(|c| c.re * scale).collect();
                let yhat = y[..windows].iter().map(|c| (c.im * scale).max(0.0)).collect();
                (ybar, yhat)
            })
            .collect()
    }
}

/// Robust power variation `V̄(Y, w, p)` at the end of the day.
pub fn vbar(returns: &[f64], w: &WeightFunction, p: u32, k_n: usize) -> Result<f64> {
    let rho = solve_rho(p)?;
    check_len(returns.len(), k_n)?;
    let kern = Kernel::new(w, k_n);
    let stats = Correlator::new().window_stats(returns, &[&kern], k_n);
    Ok(combine(&stats[0].0, &stats[0].1, p, &rho))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "scope")]
pub enum AjlLevelScope {
    WithinDay,
    AcrossDays { days: usize },
}

#[derive(Debug, Clone)]
pub struct AjlParams {
    pub p: u32,
    pub k_n: usize,
    pub g: WeightFunction,
    pub h: WeightFunction,
    pub alpha: f64,
    pub scope: AjlLevelScope,
    /// Paths in the null Monte-Carlo used for the variance of `S_RJ`.
    pub mc_paths: usize,
    pub seed: u64,
}

impl Default for AjlParams {
    fn default() -> Self {
        Self {
            p: 4,
            k_n: 100,
            g: WeightFunction::parabola(),
            h: WeightFunction::triangle(),
            alpha: 0.999,
            scope: AjlLevelScope::WithinDay,
            mc_paths: 200,
            seed: 0x00A1_5EED,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AjlDayResult {
    pub s_rj: f64,
    pub gamma_dprime: f64,
    pub critical_value: f64,
    /// `sqrt(Σ_RJ)`: the null standard deviation of `S_RJ` divided by `Δ_n^{1/4}`.
    pub sigma_rj: f64,
    /// True when the null of no jumps is rejected.
    pub reject_null: bool,
    pub mc_seed: u64,
    /// Estimated noise-to-diffusion ratio `q / (σ sqrt(Δ_n))` after bucketing.
    pub noise_ratio: f64,
    pub n_increments: usize,
}

/// Noise-to-signal ratios are pooled on a quarter-octave grid.
const RATIO_BUCKETS_PER_OCTAVE: f64 = 4.0;
const MIN_RATIO_BUCKET: i32 = -40;
const MAX_RATIO_BUCKET: i32 = 40;

fn ratio_bucket(ratio: f64) -> i32 {
    if !(ratio > 0.0) {
        return MIN_RATIO_BUCKET;
    }
    if ratio.is_infinite() {
        return MAX_RATIO_BUCKET;
    }
    ((ratio.log2() * RATIO_BUCKETS_PER_OCTAVE).round() as i32).clamp(MIN_RATIO_BUCKET, MAX_RATIO_BUCKET)
}

fn bucket_ratio(bucket: i32) -> f64 {
    if bucket == MIN_RATIO_BUCKET {
        0.0
    } else {
        2f64.powf(bucket as f64 / RATIO_BUCKETS_PER_OCTAVE)
    }
}

fn mix_seed(seed: u64, n_inc: usize, bucket: i32) -> u64 {
    // splitmix64 finaliser over the key
    let mut z = seed
        ^ (n_inc as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ ((bucket as i64 as u64).wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Noise-to-diffusion ratio of an equispaced return series: noise variance
/// from the first-order autocovariance, diffusion from sparse median RV.
pub fn noise_ratio(log_prices: &[f64]) -> f64 {
    let r: Vec<f64> = log_prices.windows(2).map(|w| w[1] - w[0]).collect();
    if r.len() < 2 {
        return 0.0;
    }
    let cov1 = r.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / (r.len() - 1) as f64;
    let q2 = (-cov1).max(0.0);
    let s2 = sigma_hat_sq(log_prices, q2);
    let dn = 1.0 / log_prices.len() as f64;
    if s2 > 0.0 {
        (q2 / (s2 * dn)).sqrt()
    } else if q2 > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

/// A configured test: constants, kernels, and a cache of null Monte-Carlo
/// standard deviations shared across days.
pub struct AjlTest {
    params: AjlParams,
    constants: AjlConstants,
    rho: Vec<f64>,
    kern_g: Kernel,
    kern_h: Kernel,
    correlator: Correlator,
    null_sd: Mutex<HashMap<(usize, i32), (f64, u64)>>,
}

impl std::fmt::Debug for AjlTest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AjlTest")
            .field("params", &self.params)
            .field("constants", &self.constants)
            .finish()
    }
}

impl AjlTest {
    pub fn new(params: AjlParams) -> Result<Self> {
        let constants = ajl_constants(&params.g, &params.h, params.p)?;
        if !(params.alpha > 0.0 && params.alpha < 1.0) {
            return Err(Error::Config(format!("AJL alpha must lie in (0, 1), got {}", params.alpha)));
        }
        if params.k_n < 2 {
            return Err(Error::Config(format!("k_n must be >= 2, got {}", params.k_n)));
        }
        if params.mc_paths < 10 {
            return Err(Error::Config(format!("need at least 10 Monte-Carlo paths, got {}", params.mc_paths)));
        }
        if let AjlLevelScope::AcrossDays { days: 0 } = params.scope {
            return Err(Error::Config("AJL day count must be >= 1".into()));
        }
        Ok(Self {
            rho: solve_rho(params.p)?,
            kern_g: Kernel::new(&params.g, params.k_n),
            kern_h: Kernel::new(&params.h, params.k_n),
            correlator: Correlator::new(),
            null_sd: Mutex::new(HashMap::new()),
            constants,
            params,
        })
    }

    pub fn params(&self) -> &AjlParams {
        &self.params
    }

    pub fn constants(&self) -> AjlConstants {
        self.constants
    }

    /// `(V̄(g), V̄(h))` of a return series.
    pub fn vbars(&self, returns: &[f64]) -> Result<(f64, f64)> {
        check_len(returns.len(), self.params.k_n)?;
        // Work on returns rescaled by a power of two so that rescaling the
        // input by any power of two leaves every rounding step unchanged.
        let max = returns.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        let e = if max > 0.0 && max.is_finite() { max.log2().floor() as i32 } else { 0 };
        let unit: Vec<f64> = returns.iter().map(|r| r * 2f64.powi(-e)).collect();
        let stats = self
            .correlator
            .window_stats(&unit, &[&self.kern_g, &self.kern_h], self.params.k_n);
        let p = self.params.p;
        let back = 2f64.powi(e * p as i32);
        Ok((
            combine(&stats[0].0, &stats[0].1, p, &self.rho) * back,
            combine(&stats[1].0, &stats[1].1, p, &self.rho) * back,
        ))
    }

    /// `S_RJ` of a return series.
    pub fn statistic(&self, returns: &[f64]) -> Result<f64> {
        let (vg, vh) = self.vbars(returns)?;
        if !(vh > 0.0) {
            return Err(Error::Degenerate("AJL denominator power variation"));
        }
        Ok(vg / (self.constants.gamma_prime * vh))
    }

    fn z(&self) -> f64 {
        let tail = match self.params.scope {
            AjlLevelScope::WithinDay => 1.0 - self.params.alpha,
            AjlLevelScope::AcrossDays { days } => (1.0 - self.params.alpha) / days as f64,
        };
        Normal::standard().inverse_cdf(1.0 - tail)
    }

    /// Null standard deviation of `S_RJ` for `n_inc` increments of a
    /// Brownian path with unit step variance plus noise of relative size
    /// `ratio`. `S_RJ` is scale free, so `(n_inc, ratio)` is the whole key.
    fn null_sd(&self, n_inc: usize, bucket: i32) -> (f64, u64) {
        let key = (n_inc, bucket);
        if let Some(&hit) = self.null_sd.lock().expect("cache lock").get(&key) {
            return hit;
        }
        let seed = mix_seed(self.params.seed, n_inc, bucket);
        let lambda = bucket_ratio(bucket);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(self.params.mc_paths);
        let mut d = vec![0.0; n_inc];
        for _ in 0..self.params.mc_paths {
            let mut prev: f64 = StandardNormal.sample(&mut rng);
            for di in d.iter_mut() {
                let next: f64 = StandardNormal.sample(&mut rng);
                let w: f64 = StandardNormal.sample(&mut rng);
                *di = w + lambda * (next - prev);
                prev = next;
            }
            if let Ok(s) = self.statistic(&d) {
                values.push(s);
            }
        }
        let sd = if values.len() >= 2 {
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
        } else {
            f64::NAN
        };
        log::debug!("AJL null sd for n={n_inc}, ratio={lambda:.3}: {sd:.5} over {} paths", values.len());
        self.null_sd.lock().expect("cache lock").insert(key, (sd, seed));
        (sd, seed)
    }

    /// Tests one day of equispaced log prices.
    pub fn test(&self, log_prices: &[f64]) -> Result<AjlDayResult> {
        let returns: Vec<f64> = log_prices.windows(2).map(|w| w[1] - w[0]).collect();
        let n_inc = returns.len();
        if n_inc < 2 * self.params.k_n {
            return Err(Error::TooShort {
                what: "AJL test",
                needed: 2 * self.params.k_n,
                got: n_inc,
            });
        }
        let s_rj = self.statistic(&returns)?;
        let bucket = ratio_bucket(noise_ratio(log_prices));
        let (sd, mc_seed) = self.null_sd(n_inc, bucket);
        if !sd.is_finite() {
            return Err(Error::Degenerate("AJL null Monte-Carlo"));
        }
        let delta_n = 1.0 / log_prices.len() as f64;
        let critical_value = self.constants.gamma_dprime - self.z() * sd;
        Ok(AjlDayResult {
            s_rj,
            gamma_dprime: self.constants.gamma_dprime,
            critical_value,
            sigma_rj: sd / delta_n.powf(0.25),
            reject_null: s_rj < critical_value,
            mc_seed,
            noise_ratio: bucket_ratio(bucket),
            n_increments: n_inc,
        })
    }
}

/// Noise-sensitive ratio `B(p, kΔ) / B(p, Δ)`; diagnostic only.
pub fn s_j(log_prices: &[f64], p: f64, k: usize) -> Result<f64> {
    if k < 2 || log_prices.len() < 2 * k + 1 {
        return Err(Error::TooShort {
            what: "S_J",
            needed: 2 * k.max(2) + 1,
            got: log_prices.len(),
        });
    }
    let b = |step: usize| -> f64 {
        log_prices
            .iter()
            .step_by(step)
            .collect::<Vec<_>>()
            .windows(2)
            .map(|w| (w[1] - w[0]).abs().powf(p))
            .sum()
    };
    let fine = b(1);
    if !(fine > 0.0) {
        return Err(Error::Degenerate("S_J denominator"));
    }
    Ok(b(k) / fine)
}
