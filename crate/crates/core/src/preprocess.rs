//! Tick slice -> test-ready series.
//!
//! The chain is: cross-exchange averaging of simultaneous prices, removal of
//! bounceback outliers and over-size returns, choice of the finest sampling
//! frequency with enough populated bins, and last-observation imputation on
//! that grid.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::tickstore::{day_start_ns, SymbolDaySlice, NANOS_PER_SECOND};

pub const SECONDS_PER_DAY: u32 = 86_400;

/// Sampling frequency in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Frequency(u32);

impl Frequency {
    pub const S1: Frequency = Frequency(1);
    pub const S5: Frequency = Frequency(5);
    pub const S10: Frequency = Frequency(10);
    pub const S15: Frequency = Frequency(15);
    /// Candidate grids, finest first.
    pub const CANDIDATES: [Frequency; 4] = [Self::S1, Self::S5, Self::S10, Self::S15];

    pub fn from_seconds(s: u32) -> Option<Self> {
        Self::CANDIDATES.into_iter().find(|f| f.0 == s)
    }

    pub fn seconds(self) -> u32 {
        self.0
    }

    /// Number of bins in one UTC day.
    pub fn bins_per_day(self) -> usize {
        (SECONDS_PER_DAY / self.0) as usize
    }
}

/// Cross-exchange averaged log prices of one symbol-day.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedSeries {
    pub symbol: String,
    pub utc_date: NaiveDate,
    /// Strictly increasing.
    pub timestamps_ns: Vec<i64>,
    pub log_prices: Vec<f64>,
}

impl AggregatedSeries {
    pub fn len(&self) -> usize {
        self.log_prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_prices.is_empty()
    }

    pub fn log_returns(&self) -> Vec<f64> {
        self.log_prices.windows(2).map(|w| w[1] - w[0]).collect()
    }

    fn subset(&self, keep: &[bool]) -> Self {
        let pick = |v: &[f64]| -> Vec<f64> {
            v.iter().zip(keep).filter(|(_, &k)| k).map(|(x, _)| *x).collect()
        };
        Self {
            symbol: self.symbol.clone(),
            utc_date: self.utc_date,
            timestamps_ns: self
                .timestamps_ns
                .iter()
                .zip(keep)
                .filter(|(_, &k)| k)
                .map(|(t, _)| *t)
                .collect(),
            log_prices: pick(&self.log_prices),
        }
    }
}

/// Averages simultaneous prices across exchanges and takes logs.
///
/// Returns `None` for an empty slice. Within one timestamp the prices are
/// summed in sorted order so the result does not depend on input order.
pub fn aggregate_cross_exchange(slice: &SymbolDaySlice) -> Option<AggregatedSeries> {
    if slice.is_empty() {
        return None;
    }
    let mut ticks: Vec<(i64, f64)> = slice
        .ticks
        .iter()
        .map(|t| (t.timestamp_ns, t.price))
        .collect();
    ticks.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let mut timestamps_ns = Vec::new();
    let mut log_prices = Vec::new();
    for group in ticks.chunk_by(|a, b| a.0 == b.0) {
        let mean = group.iter().map(|(_, p)| p).sum::<f64>() / group.len() as f64;
        timestamps_ns.push(group[0].0);
        log_prices.push(mean.ln());
    }
    Some(AggregatedSeries {
        symbol: slice.symbol.clone(),
        utc_date: slice.utc_date,
        timestamps_ns,
        log_prices,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    /// Returns beyond this many same-day standard deviations are suspect.
    pub sd_cutoff: f64,
    /// Fraction of a suspect move the next return must undo to count as a
    /// bounceback.
    pub bounceback_reversal: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            sd_cutoff: 10.0,
            bounceback_reversal: 0.75,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalRule {
    Bounceback,
    SdCutoff,
}

impl RemovalRule {
    pub fn as_str(self) -> &'static str {
        match self {
            RemovalRule::Bounceback => "bounceback",
            RemovalRule::SdCutoff => "sd_cutoff",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    pub timestamp_ns: i64,
    pub rule: RemovalRule,
    /// The offending log return.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub series: AggregatedSeries,
    pub removals: Vec<Removal>,
    /// Set when the series was too short to filter and passed through.
    pub passed_through: bool,
}

fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Removes bounceback outliers, then over-size returns.
///
/// Bounceback: a point whose return from the previous kept point exceeds
/// `sd_cutoff` day-SDs and whose following return undoes at least
/// `bounceback_reversal` of that move. The pass repeats with a recomputed SD
/// until it removes nothing, so one huge print cannot mask a smaller one.
///
/// Cutoff: on what remains, a return from the previous kept point beyond
/// `sd_cutoff` SDs drops its right endpoint. A point directly after a dropped
/// one is always kept, so a genuine level shift costs one observation
/// instead of the rest of the day.
pub fn filter_returns(series: &AggregatedSeries, params: &FilterParams) -> FilterOutcome {
    let n = series.len();
    if n < 3 {
        log::warn!(
            "{} {}: {n} points, too few to filter; passing through",
            series.symbol,
            series.utc_date
        );
        return FilterOutcome {
            series: series.clone(),
            removals: Vec::new(),
            passed_through: true,
        };
    }

    let x = &series.log_prices;
    let mut removals = Vec::new();
    let mut kept: Vec<usize> = (0..n).collect();

    loop {
        let limit = params.sd_cutoff * sample_sd(&returns_of(x, &kept));
        let mut next_kept = Vec::with_capacity(kept.len());
        next_kept.push(kept[0]);
        for w in kept.windows(3) {
            let (i, after) = (w[1], w[2]);
            let prev = *next_kept.last().expect("first point always kept");
            let r = x[i] - x[prev];
            let back = x[after] - x[i];
            let bounced = r.abs() > limit
                && back.signum() == -r.signum()
                && back.abs() >= params.bounceback_reversal * r.abs();
            if bounced {
                removals.push(Removal {
                    timestamp_ns: series.timestamps_ns[i],
                    rule: RemovalRule::Bounceback,
                    value: r,
                });
            } else {
                next_kept.push(i);
            }
        }
        next_kept.push(*kept.last().expect("non-empty"));
        let removed_any = next_kept.len() < kept.len();
        kept = next_kept;
        if !removed_any || kept.len() < 3 {
            break;
        }
    }

    let limit = params.sd_cutoff * sample_sd(&returns_of(x, &kept));
    let mut survivors = Vec::with_capacity(kept.len());
    survivors.push(kept[0]);
    let mut just_dropped = false;
    for &i in &kept[1..] {
        let prev = *survivors.last().expect("first point always kept");
        let r = x[i] - x[prev];
        if r.abs() > limit && !just_dropped {
            removals.push(Removal {
                timestamp_ns: series.timestamps_ns[i],
                rule: RemovalRule::SdCutoff,
                value: r,
            });
            just_dropped = true;
        } else {
            survivors.push(i);
            just_dropped = false;
        }
    }
    removals.sort_by_key(|r| r.timestamp_ns);

    let mut keep = vec![false; n];
    for i in survivors {
        keep[i] = true;
    }
    FilterOutcome {
        series: series.subset(&keep),
        removals,
        passed_through: false,
    }
}

fn returns_of(x: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.windows(2).map(|w| x[w[1]] - x[w[0]]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageCheck {
    pub frequency_s: Frequency,
    pub populated_bins: usize,
    pub required_bins: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyDecision {
    /// `None` when no candidate grid is populated densely enough.
    pub selected: Option<Frequency>,
    pub checks: Vec<CoverageCheck>,
}

/// Bins needed for `coverage` of a day at frequency `f`; the boundary counts.
pub fn required_bins(f: Frequency, coverage: f64) -> usize {
    // 0.95 * 86_400 is 82_079.999... in binary; absorb that before ceil.
    (coverage * f.bins_per_day() as f64 - 1e-9).ceil().max(0.0) as usize
}

fn populated_bins(series: &AggregatedSeries, f: Frequency) -> usize {
    let start = day_start_ns(series.utc_date);
    let width = f.seconds() as i64 * NANOS_PER_SECOND;
    let mut count = 0;
    let mut last = None;
    for &t in &series.timestamps_ns {
        let b = (t - start).div_euclid(width);
        if last != Some(b) {
            count += 1;
            last = Some(b);
        }
    }
    count
}

/// Finest frequency whose populated-bin count reaches `coverage` of the grid.
pub fn select_frequency(series: &AggregatedSeries, coverage: f64) -> FrequencyDecision {
    let mut checks = Vec::with_capacity(Frequency::CANDIDATES.len());
    let mut selected = None;
    for f in Frequency::CANDIDATES {
        let check = CoverageCheck {
            frequency_s: f,
            populated_bins: populated_bins(series, f),
            required_bins: required_bins(f, coverage),
        };
        checks.push(check);
        if check.populated_bins >= check.required_bins {
            selected = Some(f);
            break;
        }
    }
    FrequencyDecision { selected, checks }
}

/// Log prices on a regular grid covering the whole UTC day.
#[derive(Debug, Clone, PartialEq)]
pub struct EquispacedSeries {
    pub symbol: String,
    pub utc_date: NaiveDate,
    pub frequency_s: Frequency,
    /// Exactly `86_400 / frequency_s` entries.
    pub log_prices: Vec<f64>,
    /// Leading bins filled backwards from the first observation.
    pub backfilled_bins: usize,
}

impl EquispacedSeries {
    pub fn log_returns(&self) -> Vec<f64> {
        self.log_prices.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// Last price per bin; empty bins carry the previous bin forward, bins before
/// the first observation take the first observation.
///
/// Panics if `series` is empty; callers only reach this after a frequency has
/// been accepted.
pub fn make_equispaced(series: &AggregatedSeries, f: Frequency) -> EquispacedSeries {
    assert!(!series.is_empty(), "make_equispaced on an empty series");
    let bins = f.bins_per_day();
    let start = day_start_ns(series.utc_date);
    let width = f.seconds() as i64 * NANOS_PER_SECOND;

    let mut last: Vec<Option<f64>> = vec![None; bins];
    for (&t, &p) in series.timestamps_ns.iter().zip(&series.log_prices) {
        let b = ((t - start).div_euclid(width)) as usize;
        if b < bins {
            last[b] = Some(p);
        }
    }

    let first = series.log_prices[0];
    let mut backfilled_bins = 0;
    let mut carry: Option<f64> = None;
    let log_prices = last
        .into_iter()
        .map(|slot| {
            if slot.is_some() {
                carry = slot;
            }
            carry.unwrap_or_else(|| {
                backfilled_bins += 1;
                first
            })
        })
        .collect();
    if backfilled_bins > 0 {
        log::debug!(
            "{} {}: back-filled {backfilled_bins} leading {}s bins",
            series.symbol,
            series.utc_date,
            f.seconds()
        );
    }
    EquispacedSeries {
        symbol: series.symbol.clone(),
        utc_date: series.utc_date,
        frequency_s: f,
        log_prices,
        backfilled_bins,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tickstore::Tick;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn day() -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 3, 12).unwrap()
    }

    fn series_from(seconds: &[f64], log_prices: &[f64]) -> AggregatedSeries {
        let start = day_start_ns(day());
        AggregatedSeries {
            symbol: "BTC".into(),
            utc_date: day(),
            timestamps_ns: seconds
                .iter()
                .map(|s| start + (s * 1e9) as i64)
                .collect(),
            log_prices: log_prices.to_vec(),
        }
    }

    fn one_per_second(log_prices: &[f64]) -> AggregatedSeries {
        let secs: Vec<f64> = (0..log_prices.len()).map(|i| i as f64).collect();
        series_from(&secs, log_prices)
    }

    fn tick(sec: i64, ex: &str, price: f64) -> Tick {
        Tick {
            timestamp_ns: day_start_ns(day()) + sec * NANOS_PER_SECOND,
            exchange: ex.into(),
            symbol: "BTC".into(),
            price,
        }
    }

    #[test]
    fn simultaneous_pair_is_averaged() {
        let s = SymbolDaySlice::new("BTC", day(), vec![tick(5, "a", 100.0), tick(5, "b", 102.0)])
            .unwrap();
        let agg = aggregate_cross_exchange(&s).unwrap();
        assert_eq!(agg.len(), 1);
        assert_eq!(agg.log_prices[0], 101f64.ln());
    }

    #[test]
    fn single_exchange_is_identity() {
        let prices = [10.0, 11.0, 10.5, 12.25];
        let ticks = prices
            .iter()
            .enumerate()
            .map(|(i, &p)| tick(i as i64, "a", p))
            .collect();
        let agg = aggregate_cross_exchange(&SymbolDaySlice::new("BTC", day(), ticks).unwrap())
            .unwrap();
        let expect: Vec<f64> = prices.iter().map(|p| p.ln()).collect();
        assert_eq!(agg.log_prices, expect);
    }

    #[test]
    fn empty_slice_signals_none() {
        let s = SymbolDaySlice::new("BTC", day(), vec![]).unwrap();
        assert!(aggregate_cross_exchange(&s).is_none());
    }

    #[test]
    fn staggered_exchanges_match_group_by() {
        // a: 0,3,6,9   b: 1,3,5   c: 2,6,8  -> collisions at 3 and 6
        let ticks = vec![
            tick(0, "a", 100.0),
            tick(3, "a", 101.0),
            tick(6, "a", 99.0),
            tick(9, "a", 98.0),
            tick(1, "b", 100.5),
            tick(3, "b", 103.0),
            tick(5, "b", 102.0),
            tick(2, "c", 100.2),
            tick(6, "c", 97.0),
            tick(8, "c", 97.5),
        ];
        let agg = aggregate_cross_exchange(&SymbolDaySlice::new("BTC", day(), ticks.clone()).unwrap())
            .unwrap();
        let mut groups: std::collections::BTreeMap<i64, Vec<f64>> = Default::default();
        for t in &ticks {
            groups.entry(t.timestamp_ns).or_default().push(t.price);
        }
        assert_eq!(agg.len(), groups.len());
        assert_eq!(agg.len(), 8);
        for ((t, ps), (&at, &ap)) in groups.iter().zip(agg.timestamps_ns.iter().zip(&agg.log_prices)) {
            assert_eq!(*t, at);
            let mean = ps.iter().sum::<f64>() / ps.len() as f64;
            assert!((mean.ln() - ap).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_day_filters_nothing() {
        let s = one_per_second(&[4.6; 50]);
        let out = filter_returns(&s, &FilterParams::default());
        assert!(out.removals.is_empty());
        assert_eq!(out.series, s);
    }

    fn noisy_walk(n: usize, sd: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = 100f64.ln();
        (0..n)
            .map(|_| {
                x += sd * rng.sample::<f64, _>(rand_distr::StandardNormal);
                x
            })
            .collect()
    }

    #[test]
    fn bounceback_spike_removed() {
        // ... 100, 150, 100.2 ... inside a day with per-step sigma 0.001
        let mut lp = noisy_walk(400, 0.001, 1);
        let base = lp[199];
        let shift = base + (100.2f64 / 100.0).ln() - lp[201];
        for v in lp.iter_mut().skip(201) {
            *v += shift;
        }
        lp[200] = base + 1.5f64.ln();
        let s = one_per_second(&lp);
        let out = filter_returns(&s, &FilterParams::default());
        // by hand: the move ln 1.5 = 0.405 is ~13 SDs even with the spike
        // inflating the SD to ~0.029, and ln(100.2/150) undoes 99.5% of it
        assert_eq!(out.removals.len(), 1);
        assert_eq!(out.removals[0].rule, RemovalRule::Bounceback);
        assert_eq!(out.removals[0].timestamp_ns, s.timestamps_ns[200]);
        assert!((out.removals[0].value - 1.5f64.ln()).abs() < 1e-12);
        assert_eq!(out.series.len(), s.len() - 1);
    }

    #[test]
    fn partial_reversal_is_not_a_bounceback() {
        let mut lp = noisy_walk(2000, 0.001, 3);
        let sd = sample_sd(&lp.windows(2).map(|w| w[1] - w[0]).collect::<Vec<_>>());
        // up 40 SDs, back down 20: half reversed
        for v in lp.iter_mut().skip(1000) {
            *v += 20.0 * sd;
        }
        lp[1000] += 20.0 * sd;
        let s = one_per_second(&lp);
        let out = filter_returns(&s, &FilterParams::default());
        assert_eq!(out.removals.len(), 1);
        assert_eq!(out.removals[0].rule, RemovalRule::SdCutoff);
        assert_eq!(out.removals[0].timestamp_ns, s.timestamps_ns[1000]);
    }

    #[test]
    fn unreversed_large_return_removes_right_endpoint_once() {
        let mut lp = noisy_walk(2000, 0.001, 2);
        let sd = {
            let r: Vec<f64> = lp.windows(2).map(|w| w[1] - w[0]).collect();
            sample_sd(&r)
        };
        let jump = 12.0 * sd;
        for v in lp.iter_mut().skip(1000) {
            *v += jump;
        }
        let s = one_per_second(&lp);
        let out = filter_returns(&s, &FilterParams::default());
        assert_eq!(out.removals.len(), 1);
        assert_eq!(out.removals[0].rule, RemovalRule::SdCutoff);
        assert_eq!(out.removals[0].timestamp_ns, s.timestamps_ns[1000]);
        // the shift itself survives: the series still moves by about `jump`
        let after = &out.series.log_prices;
        assert!((after[1000] - after[999] - jump).abs() < 6.0 * sd);
    }

    #[test]
    fn short_series_passes_through() {
        let s = one_per_second(&[1.0, 2.0]);
        let out = filter_returns(&s, &FilterParams::default());
        assert!(out.passed_through);
        assert_eq!(out.series, s);
    }

    fn full_coverage(step_s: i64, count: usize) -> AggregatedSeries {
        let start = day_start_ns(day());
        AggregatedSeries {
            symbol: "BTC".into(),
            utc_date: day(),
            timestamps_ns: (0..count as i64).map(|i| start + i * step_s * NANOS_PER_SECOND).collect(),
            log_prices: vec![0.0; count],
        }
    }

    #[test]
    fn every_second_selects_1s() {
        let d = select_frequency(&full_coverage(1, 86_400), 0.95);
        assert_eq!(d.selected, Some(Frequency::S1));
        assert_eq!(d.checks[0].required_bins, 82_080);
    }

    #[test]
    fn exact_boundary_accepted() {
        let d = select_frequency(&full_coverage(1, 82_080), 0.95);
        assert_eq!(d.selected, Some(Frequency::S1));
        let d = select_frequency(&full_coverage(1, 82_079), 0.95);
        assert_ne!(d.selected, Some(Frequency::S1));
    }

    #[test]
    fn sparse_day_rejected() {
        // 5,000 ticks spread uniformly: 86,400/5,000 = 17.28 s apart
        let start = day_start_ns(day());
        let ts: Vec<i64> = (0..5_000i64).map(|i| start + i * 17_280_000_000).collect();
        let s = AggregatedSeries {
            symbol: "BTC".into(),
            utc_date: day(),
            log_prices: vec![0.0; ts.len()],
            timestamps_ns: ts,
        };
        let d = select_frequency(&s, 0.95);
        assert_eq!(d.selected, None);
        let last = d.checks.last().unwrap();
        assert_eq!(last.frequency_s, Frequency::S15);
        assert_eq!(last.required_bins, 5_472);
        assert_eq!(last.populated_bins, 5_000);
    }

    #[test]
    fn every_five_seconds_selects_5s() {
        let d = select_frequency(&full_coverage(5, 17_280), 0.95);
        assert_eq!(d.selected, Some(Frequency::S5));
    }

    #[test]
    fn full_coverage_equispaced_is_identity() {
        let mut s = full_coverage(1, 86_400);
        s.log_prices = (0..86_400).map(|i| i as f64 * 1e-6).collect();
        let e = make_equispaced(&s, Frequency::S1);
        assert_eq!(e.log_prices, s.log_prices);
        assert_eq!(e.backfilled_bins, 0);
    }

    #[test]
    fn gap_is_carried_forward() {
        let s = series_from(&[0.0, 1.0, 9.0], &[1.0, 2.0, 3.0]);
        let e = make_equispaced(&s, Frequency::S1);
        assert_eq!(&e.log_prices[..10], &[1.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 3.0]);
        assert_eq!(e.log_prices.len(), 86_400);
        assert!(e.log_prices[10..].iter().all(|&v| v == 3.0));
    }

    #[test]
    fn head_gap_back_filled() {
        let s = series_from(&[30.0, 46.0], &[5.0, 6.0]);
        let e = make_equispaced(&s, Frequency::S15);
        assert_eq!(e.backfilled_bins, 2);
        assert_eq!(&e.log_prices[..4], &[5.0, 5.0, 5.0, 6.0]);
        assert_eq!(e.log_prices.len(), 5_760);
    }

    #[test]
    fn last_price_in_bin_wins() {
        let s = series_from(&[0.1, 0.5, 0.9, 5.2], &[1.0, 2.0, 3.0, 4.0]);
        let e = make_equispaced(&s, Frequency::S5);
        assert_eq!(&e.log_prices[..2], &[3.0, 4.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn aggregation_is_order_free(seed in 0u64..1000, perm_seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ticks: Vec<Tick> = (0..60)
                .map(|_| {
                    let ex = ["a", "b", "c"][rng.random_range(0..3)];
                    tick(rng.random_range(0..20), ex, rng.random_range(90.0..110.0))
                })
                .collect();
            let mut shuffled = ticks.clone();
            let mut prng = ChaCha8Rng::seed_from_u64(perm_seed);
            for i in (1..shuffled.len()).rev() {
                let j = prng.random_range(0..=i);
                shuffled.swap(i, j);
            }
            let a = aggregate_cross_exchange(&SymbolDaySlice::new("BTC", day(), ticks).unwrap()).unwrap();
            let b = aggregate_cross_exchange(&SymbolDaySlice::new("BTC", day(), shuffled).unwrap()).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn filter_is_idempotent_on_bad_prints(
            seed in 0u64..10_000,
            spikes in proptest::collection::vec((5usize..1990, 20.0f64..400.0, any::<bool>()), 0..6),
        ) {
            let mut lp = noisy_walk(2000, 0.0005, seed);
            let mut spikes = spikes;
            spikes.sort_by_key(|s| s.0);
            spikes.dedup_by(|b, a| b.0 < a.0 + 3);
            for (at, size_sd, up) in spikes {
                let sign = if up { 1.0 } else { -1.0 };
                lp[at] += sign * size_sd * 0.0005;
            }
            let s = one_per_second(&lp);
            let p = FilterParams::default();
            let once = filter_returns(&s, &p);
            let twice = filter_returns(&once.series, &p);
            prop_assert!(twice.removals.is_empty(), "{:?}", twice.removals);
            prop_assert_eq!(twice.series, once.series);
        }

        #[test]
        fn selection_monotone_in_observations(
            seconds in proptest::collection::btree_set(0i64..86_400, 1..3000),
            extra in proptest::collection::btree_set(0i64..86_400, 1..3000),
            coverage in 0.01f64..0.2,
        ) {
            let start = day_start_ns(day());
            let mk = |set: &std::collections::BTreeSet<i64>| AggregatedSeries {
                symbol: "X".into(),
                utc_date: day(),
                timestamps_ns: set.iter().map(|s| start + s * NANOS_PER_SECOND).collect(),
                log_prices: vec![0.0; set.len()],
            };
            let base = mk(&seconds);
            let union: std::collections::BTreeSet<i64> = seconds.union(&extra).copied().collect();
            let more = mk(&union);
            let a = select_frequency(&base, coverage).selected;
            let b = select_frequency(&more, coverage).selected;
            match (a, b) {
                (Some(fa), Some(fb)) => prop_assert!(fb <= fa),
                (Some(_), None) => prop_assert!(false, "accepted day became rejected"),
                _ => {}
            }
        }

        #[test]
        fn locf_matches_brute_force(seed in 0u64..500, f_idx in 0usize..4) {
            let f = Frequency::CANDIDATES[f_idx];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let start = day_start_ns(day());
            // roughly 30% of seconds missing
            let mut ts = Vec::new();
            let mut lp = Vec::new();
            for s in 0..86_400i64 {
                if rng.random::<f64>() >= 0.3 {
                    ts.push(start + s * NANOS_PER_SECOND + rng.random_range(0..NANOS_PER_SECOND));
                    lp.push(rng.random::<f64>());
                }
            }
            let series = AggregatedSeries { symbol: "X".into(), utc_date: day(), timestamps_ns: ts.clone(), log_prices: lp.clone() };
            let got = make_equispaced(&series, f);
            prop_assert_eq!(got.log_prices.len(), 86_400 / f.seconds() as usize);

            // brute force: for each bin end, scan for the latest observation before it
            let width = f.seconds() as i64 * NANOS_PER_SECOND;
            for b in (0..got.log_prices.len()).step_by(97) {
                let end = start + (b as i64 + 1) * width;
                let expect = ts.iter().zip(&lp).rev().find(|(t, _)| **t < end).map(|(_, p)| *p).unwrap_or(lp[0]);
                prop_assert_eq!(got.log_prices[b], expect);
            }
        }
    }
}
