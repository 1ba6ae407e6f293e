//! Noise-robust intraday jump test on tick data.
//!
//! Prices are subsampled every `k` ticks, pre-averaged over blocks of `M`
//! subsampled points, and the returns of those averages are standardised by
//! the plug-in variance `V_n = (2/3) sigma^2 C^2 T + 2 q^2`. The maximum of
//! the standardised returns follows a Gumbel law after the usual `A_n`,
//! `B_n` normalisation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_K: usize = 3;
pub const MAX_K: usize = 51;
/// Minimum tick count for the autocorrelation-based choice of `k`.
pub const MIN_OBS_FOR_K: usize = 1_000;

/// Sparse sampling used by the volatility estimator: about five minutes of a
/// day's ticks per return.
const SPARSE_RETURNS_PER_DAY: usize = 288;
const SPARSE_OFFSETS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "scope")]
pub enum BonferroniScope {
    /// No multiple-testing correction beyond the Gumbel max law.
    None,
    /// Divide the level by the number of blocks in the day.
    WithinDay,
    /// Divide by blocks times the number of days in the run.
    AcrossDays { days: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmParams {
    /// Subsampling lag; chosen from the return autocorrelation when `None`.
    pub k: Option<usize>,
    /// Block length; `round(C sqrt(floor(n/k)))` when `None`.
    pub m: Option<usize>,
    pub c: f64,
    /// Confidence level, e.g. 0.999.
    pub alpha: f64,
    pub bonferroni: BonferroniScope,
}

impl Default for LmParams {
    fn default() -> Self {
        Self {
            k: None,
            m: None,
            c: 0.05,
            alpha: 0.999,
            bonferroni: BonferroniScope::WithinDay,
        }
    }
}

impl LmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("LM alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Config(format!("LM block constant C must be > 0, got {}", self.c)));
        }
        if let Some(k) = self.k {
            if !(MIN_K..=MAX_K).contains(&k) {
                return Err(Error::Config(format!("LM k must lie in [{MIN_K}, {MAX_K}], got {k}")));
            }
        }
        if self.m == Some(0) {
            return Err(Error::Config("LM block length M must be >= 1".into()));
        }
        if let BonferroniScope::AcrossDays { days: 0 } = self.bonferroni {
            return Err(Error::Config("Bonferroni day count must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseEstimate {
    pub q_hat_sq: f64,
    pub sigma_hat_sq: f64,
    pub v_n: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmMomentResult {
    pub block_index: usize,
    pub block_start_ns: i64,
    pub pbar: f64,
    pub chi: f64,
    pub xi: f64,
    pub is_jump: bool,
}

impl LmMomentResult {
    /// Signed jump size; the block's pre-averaged return.
    pub fn jump_size(&self) -> Option<f64> {
        self.is_jump.then_some(self.pbar)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmDayResult {
    pub k: usize,
    pub m: usize,
    pub c: f64,
    /// `floor(n / (kM))`; there are `n_blocks - 1` block returns.
    pub n_blocks: usize,
    pub noise: NoiseEstimate,
    pub a_n: f64,
    pub b_n: f64,
    /// Critical value on the `xi` scale.
    pub threshold: f64,
    pub moments: Vec<LmMomentResult>,
}

impl LmDayResult {
    pub fn flagged(&self) -> impl Iterator<Item = &LmMomentResult> {
        self.moments.iter().filter(|m| m.is_jump)
    }
}

fn acf(returns: &[f64], max_lag: usize) -> Vec<f64> {
    let n = returns.len();
    let mean = returns.iter().sum::<f64>() / n as f64;
    let d: Vec<f64> = returns.iter().map(|r| r - mean).collect();
    let c0: f64 = d.iter().map(|x| x * x).sum();
    (1..=max_lag)
        .map(|l| {
            if c0 == 0.0 || l >= n {
                0.0
            } else {
                d[..n - l].iter().zip(&d[l..]).map(|(a, b)| a * b).sum::<f64>() / c0
            }
        })
        .collect()
}

/// Picks the subsampling lag from the autocorrelation of tick returns.
///
/// `k - 1` is the first lag whose autocorrelation falls inside the
/// `+-1.96/sqrt(n)` band, clamped to `[3, 51]`.
pub fn select_k(log_prices: &[f64]) -> Result<usize> {
    if log_prices.len() < MIN_OBS_FOR_K {
        return Err(Error::TooShort {
            what: "lag selection",
            needed: MIN_OBS_FOR_K,
            got: log_prices.len(),
        });
    }
    let returns: Vec<f64> = log_prices.windows(2).map(|w| w[1] - w[0]).collect();
    let band = 1.96 / (returns.len() as f64).sqrt();
    let rho = acf(&returns, MAX_K - 1);
    let lag = rho
        .iter()
        .position(|r| r.abs() <= band)
        .map_or(MAX_K - 1, |i| i + 1);
    Ok((lag + 1).clamp(MIN_K, MAX_K))
}

pub fn block_length(n: usize, k: usize, c: f64) -> usize {
    ((c * ((n / k) as f64).sqrt()).round() as usize).max(1)
}

/// Noise variance from lag-`k` price differences.
pub fn q_hat_sq(log_prices: &[f64], k: usize) -> f64 {
    let n = log_prices.len();
    let ss: f64 = log_prices[..n - k]
        .iter()
        .zip(&log_prices[k..])
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    ss / (2.0 * (n - k) as f64)
}

fn med3(a: f64, b: f64, c: f64) -> f64 {
    a.max(b).min(a.min(b).max(c))
}

/// Median realized variance of a return series (jump-robust).
fn med_rv(returns: &[f64]) -> f64 {
    let n = returns.len();
    if n < 3 {
        return 0.0;
    }
    let scale = std::f64::consts::PI / (6.0 - 4.0 * 3f64.sqrt() + std::f64::consts::PI);
    let s: f64 = returns
        .windows(3)
        .map(|w| med3(w[0].abs(), w[1].abs(), w[2].abs()).powi(2))
        .sum();
    scale * (n as f64 / (n - 2) as f64) * s
}

/// Integrated variance from sparse (roughly five-minute) returns, using the
/// median-RV estimator averaged over several sampling offsets and corrected
/// for the noise each sparse return still carries.
pub fn sigma_hat_sq(log_prices: &[f64], q_hat_sq: f64) -> f64 {
    let n = log_prices.len();
    let stride = (n / SPARSE_RETURNS_PER_DAY).max(1);
    let offsets = stride.min(SPARSE_OFFSETS);
    let mut total = 0.0;
    for j in 0..offsets {
        let start = j * stride / offsets;
        let sparse: Vec<f64> = log_prices[start..].iter().step_by(stride).copied().collect();
        let r: Vec<f64> = sparse.windows(2).map(|w| w[1] - w[0]).collect();
        total += med_rv(&r) - 2.0 * r.len() as f64 * q_hat_sq;
    }
    (total / offsets as f64).max(0.0)
}

/// `q^2`, `sigma^2` and the plug-in block-return variance.
///
/// `V_n` uses the block constant implied by the actual (rounded) `M`,
/// `C = M / sqrt(floor(n/k))`, so that it matches the variance of the
/// statistics being standardised.
pub fn estimate_noise(log_prices: &[f64], k: usize, m: usize) -> Result<NoiseEstimate> {
    let n = log_prices.len();
    if n <= k + 1 {
        return Err(Error::TooShort {
            what: "noise estimation",
            needed: k + 2,
            got: n,
        });
    }
    let q2 = q_hat_sq(log_prices, k);
    let s2 = sigma_hat_sq(log_prices, q2);
    let c_eff_sq = (m * m) as f64 / (n / k) as f64;
    Ok(NoiseEstimate {
        q_hat_sq: q2,
        sigma_hat_sq: s2,
        v_n: 2.0 / 3.0 * s2 * c_eff_sq + 2.0 * q2,
    })
}

fn log_blocks(n_blocks: usize) -> f64 {
    (n_blocks as f64).ln()
}

pub fn a_n(n_blocks: usize) -> f64 {
    let l = log_blocks(n_blocks);
    let r = (2.0 * l).sqrt();
    r - (std::f64::consts::PI.ln() + l.ln()) / (2.0 * r)
}

pub fn b_n(n_blocks: usize) -> f64 {
    1.0 / (2.0 * log_blocks(n_blocks)).sqrt()
}

/// Upper quantile of the standard Gumbel law: `P(xi > x) = level`.
pub fn gumbel_upper_quantile(level: f64) -> f64 {
    -(-(-level).ln_1p()).ln()
}

fn tail_level(params: &LmParams, n_blocks: usize) -> f64 {
    let base = 1.0 - params.alpha;
    match params.bonferroni {
        BonferroniScope::None => base,
        BonferroniScope::WithinDay => base / n_blocks as f64,
        BonferroniScope::AcrossDays { days } => base / (n_blocks * days) as f64,
    }
}

/// Runs the test over one day of tick log prices.
pub fn lm_scan(log_prices: &[f64], timestamps_ns: &[i64], params: &LmParams) -> Result<LmDayResult> {
    params.validate()?;
    if log_prices.len() != timestamps_ns.len() {
        return Err(Error::InvalidInput(format!(
            "{} prices but {} timestamps",
            log_prices.len(),
            timestamps_ns.len()
        )));
    }
    let n = log_prices.len();
    let k = match params.k {
        Some(k) => k,
        None => select_k(log_prices)?,
    };
    if n <= k + 1 {
        return Err(Error::TooShort {
            what: "LM scan",
            needed: k + 2,
            got: n,
        });
    }
    let m = params.m.unwrap_or_else(|| block_length(n, k, params.c));
    let stride = k * m;
    let n_blocks = n / stride;
    if n_blocks < 2 {
        return Err(Error::TooShort {
            what: "LM scan (two blocks)",
            needed: 2 * stride,
            got: n,
        });
    }
    let noise = estimate_noise(log_prices, k, m)?;
    if !(noise.v_n > 0.0) {
        return Err(Error::Degenerate("LM block-return variance"));
    }
    let an = a_n(n_blocks);
    let bn = b_n(n_blocks);
    let threshold = gumbel_upper_quantile(tail_level(params, n_blocks));
    let scale = (m as f64 / noise.v_n).sqrt();

    let moments = (0..n_blocks - 1)
        .map(|b| {
            let start = b * stride;
            // Differences first so a constant shift of all prices cancels
            // exactly before any averaging.
            let pbar = (0..m)
                .map(|i| log_prices[start + stride + i * k] - log_prices[start + i * k])
                .sum::<f64>()
                / m as f64;
            let chi = scale * pbar;
            let xi = (chi.abs() - an) / bn;
            LmMomentResult {
                block_index: b,
                block_start_ns: timestamps_ns[start],
                pbar,
                chi,
                xi,
                is_jump: xi > threshold,
            }
        })
        .collect();

    Ok(LmDayResult {
        k,
        m,
        c: params.c,
        n_blocks,
        noise,
        a_n: an,
        b_n: bn,
        threshold,
        moments,
    })
}

/// Block indices of flags that start a new jump: a flag within `window`
/// blocks after an accepted one is a continuation of it.
pub fn dedup_indices(flags: &[usize], window: usize) -> Vec<usize> {
    let mut accepted: Vec<usize> = Vec::new();
    for &f in flags {
        match accepted.last() {
            Some(&last) if f <= last + window => {}
            _ => accepted.push(f),
        }
    }
    accepted
}

/// Keeps the flagged moments that survive [`dedup_indices`].
pub fn dedup_consecutive(results: &[LmMomentResult], window: usize) -> Vec<LmMomentResult> {
    let flags: Vec<usize> = results.iter().filter(|r| r.is_jump).map(|r| r.block_index).collect();
    let keep = dedup_indices(&flags, window);
    results
        .iter()
        .filter(|r| r.is_jump && keep.binary_search(&r.block_index).is_ok())
        .copied()
        .collect()
}
