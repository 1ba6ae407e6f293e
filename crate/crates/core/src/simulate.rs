//! Synthetic symbol-days with known jumps.
//!
//! The latent log price follows `dX = sigma dW + Z dJ` on a one-day horizon,
//! observed at `n` equally spaced instants `t_i = i / n` and contaminated by
//! i.i.d. mean-zero noise of standard deviation `q`. Diffusion, noise and
//! jumps draw from separate ChaCha streams of the same seed, so switching
//! jumps or noise on and off leaves the other components untouched.

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tickstore::{day_start_ns, Tick, NANOS_PER_DAY};

const DIFFUSION_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;
const JUMP_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Gaussian,
    /// `+q` or `-q` with equal probability.
    TwoPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum JumpSizeDist {
    Fixed { size: f64 },
    Normal { mean: f64, sd: f64 },
    /// Two-sided, mostly within +-2.5%, about two thirds negative, with a
    /// Pareto tail capped at 30%.
    CryptoMixture,
}

impl JumpSizeDist {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            JumpSizeDist::Fixed { size } => size,
            JumpSizeDist::Normal { mean, sd } => mean + sd * rng.sample::<f64, _>(StandardNormal),
            JumpSizeDist::CryptoMixture => {
                let sign = if rng.random::<f64>() < 2.0 / 3.0 { -1.0 } else { 1.0 };
                let magnitude = if rng.random::<f64>() < 0.9 {
                    0.004 + Exp::new(1.0 / 0.006).expect("positive rate").sample(rng)
                } else {
                    (0.025 * rng.random::<f64>().max(1e-12).powf(-0.5)).min(0.3)
                };
                sign * magnitude
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum JumpSpec {
    None,
    /// `(time in day fraction, size)` pairs.
    Explicit { jumps: Vec<(f64, f64)> },
    Poisson { intensity: f64, sizes: JumpSizeDist },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Daily volatility of the Brownian part.
    pub sigma: f64,
    /// Noise standard deviation.
    pub q: f64,
    pub jumps: JumpSpec,
    /// Observations per day.
    pub n: usize,
    pub seed: u64,
    pub noise: NoiseKind,
    pub start_log_price: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            sigma: 0.04,
            q: 0.0005,
            jumps: JumpSpec::None,
            n: 86_400,
            seed: 0,
            noise: NoiseKind::Gaussian,
            start_log_price: 10_000f64.ln(),
        }
    }
}

impl SimConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be >= 0, got {}", self.sigma));
        }
        if !(self.q >= 0.0 && self.q.is_finite()) {
            return bad(format!("q must be >= 0, got {}", self.q));
        }
        if self.n < 2 {
            return bad(format!("n must be >= 2, got {}", self.n));
        }
        match &self.jumps {
            JumpSpec::Explicit { jumps } => {
                if let Some((t, _)) = jumps.iter().find(|(t, _)| !(0.0..1.0).contains(t)) {
                    return bad(format!("jump time {t} outside [0, 1)"));
                }
            }
            JumpSpec::Poisson { intensity, .. } if !(*intensity >= 0.0) => {
                return bad(format!("jump intensity must be >= 0, got {intensity}"));
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueJump {
    /// Day fraction in [0, 1).
    pub time: f64,
    /// First observation index that includes the jump; `n` if it lands after
    /// the last observation.
    pub index: usize,
    pub size: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimDay {
    /// `latent[i] + noise[i]`.
    pub observed: Vec<f64>,
    pub latent: Vec<f64>,
    pub noise: Vec<f64>,
    pub true_jumps: Vec<TrueJump>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn simulate_day(config: &SimConfig) -> Result<SimDay> {
    config.validate()?;
    let n = config.n;

    let mut jump_rng = stream(config.seed, JUMP_STREAM);
    let mut jumps: Vec<(f64, f64)> = match &config.jumps {
        JumpSpec::None => Vec::new(),
        JumpSpec::Explicit { jumps } => jumps.clone(),
        JumpSpec::Poisson { intensity, sizes } => {
            let count = if *intensity > 0.0 {
                Poisson::new(*intensity)
                    .map_err(|e| Error::Config(e.to_string()))?
                    .sample(&mut jump_rng) as usize
            } else {
                0
            };
            (0..count)
                .map(|_| (jump_rng.random::<f64>(), sizes.sample(&mut jump_rng)))
                .collect()
        }
    };
    jumps.sort_by(|a, b| a.0.total_cmp(&b.0));
    let true_jumps: Vec<TrueJump> = jumps
        .iter()
        .map(|&(time, size)| TrueJump {
            time,
            index: ((time * n as f64).ceil() as usize).min(n),
            size,
        })
        .collect();

    let step_sd = config.sigma / (n as f64).sqrt();
    let mut diffusion = stream(config.seed, DIFFUSION_STREAM);
    let mut latent = Vec::with_capacity(n);
    let mut x = config.start_log_price;
    let mut next_jump = 0;
    for i in 0..n {
        if i > 0 {
            x += step_sd * diffusion.sample::<f64, _>(StandardNormal);
        }
        while next_jump < true_jumps.len() && true_jumps[next_jump].index == i {
            x += true_jumps[next_jump].size;
            next_jump += 1;
        }
        latent.push(x);
    }

    let noise = draw_noise(config.noise, config.q, n, &mut stream(config.seed, NOISE_STREAM));
    let observed = latent.iter().zip(&noise).map(|(x, e)| x + e).collect();
    Ok(SimDay {
        observed,
        latent,
        noise,
        true_jumps,
    })
}

fn draw_noise(kind: NoiseKind, q: f64, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if q == 0.0 {
        return vec![0.0; n];
    }
    match kind {
        NoiseKind::Gaussian => {
            let d = Normal::new(0.0, q).expect("finite q");
            (0..n).map(|_| d.sample(rng)).collect()
        }
        NoiseKind::TwoPoint => (0..n)
            .map(|_| if rng.random::<bool>() { q } else { -q })
            .collect(),
    }
}

/// Nanosecond timestamp of observation `i` of `n` on `date`.
pub fn observation_time_ns(date: NaiveDate, i: usize, n: usize) -> i64 {
    day_start_ns(date) + (i as i128 * NANOS_PER_DAY as i128 / n as i128) as i64
}

/// Renders a simulated day as ticks.
///
/// With one exchange the observed prices are used as-is. With several, every
/// exchange gets its own noise draw (seeded from `noise_seed`) on top of the
/// shared latent path.
pub fn to_ticks(
    day: &SimDay,
    symbol: &str,
    date: NaiveDate,
    exchanges: &[String],
    config: &SimConfig,
    noise_seed: u64,
) -> Vec<Tick> {
    let n = day.latent.len();
    let mut ticks = Vec::with_capacity(n * exchanges.len().max(1));
    for (e, exchange) in exchanges.iter().enumerate() {
        let prices: Vec<f64> = if e == 0 {
            day.observed.clone()
        } else {
            let mut rng = stream(noise_seed ^ (e as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15), NOISE_STREAM);
            let eps = draw_noise(config.noise, config.q, n, &mut rng);
            day.latent.iter().zip(&eps).map(|(x, e)| x + e).collect()
        };
        for (i, lp) in prices.iter().enumerate() {
            ticks.push(Tick {
                timestamp_ns: observation_time_ns(date, i, n),
                exchange: exchange.clone(),
                symbol: symbol.to_string(),
                price: lp.exp(),
            });
        }
    }
    ticks
}
