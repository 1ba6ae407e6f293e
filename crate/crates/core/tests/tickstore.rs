use std::collections::BTreeMap;
use std::fmt::Write as _;

use hfjump::tickstore::{day_start_ns, utc_date_of, CsvSchema, TickStore, NANOS_PER_DAY};
use proptest::prelude::*;

fn count_slice_rows(store: &TickStore) -> usize {
    let mut total = 0;
    for sym in store.symbols().unwrap() {
        for d in store.dates(&sym).unwrap() {
            total += store.slice(&sym, d).unwrap().map_or(0, |s| s.len());
        }
    }
    total
}

#[test]
fn thousand_rows_with_ten_bad_timestamps() {
    let dir = tempfile::tempdir().unwrap();
    let base = day_start_ns(chrono::NaiveDate::from_ymd_opt(2021, 2, 1).unwrap());
    let mut body = String::from("time,exchange,symbol,price\n");
    for i in 0..1000i64 {
        let time = if i % 100 == 37 {
            format!("not-a-time-{i}")
        } else if i % 2 == 0 {
            (base + i * 61_000_000_123).to_string()
        } else {
            chrono::DateTime::from_timestamp_nanos(base + i * 61_000_000_123)
                .to_rfc3339_opts(chrono::SecondsFormat::Nanos, true)
        };
        writeln!(body, "{time},ex{},BTC,{}", i % 3, 30_000.0 + i as f64).unwrap();
    }
    let path = dir.path().join("ticks.csv");
    std::fs::write(&path, body).unwrap();

    let store = TickStore::open(dir.path().join("store")).unwrap();
    let first = store.ingest_csv(&path, &CsvSchema::default()).unwrap();
    assert_eq!((first.accepted, first.rejected), (990, 10));
    assert_eq!(first.rejects.len(), 10);
    assert!(first.iso_timestamps > 0 && first.epoch_timestamps > 0);
    assert_eq!(count_slice_rows(&store), 990);

    let again = store.ingest_csv(&path, &CsvSchema::default()).unwrap();
    assert!(again.already_ingested);
    assert_eq!((again.accepted, again.rejected), (990, 10));
    assert_eq!(count_slice_rows(&store), 990, "re-ingest must not duplicate rows");
}

#[derive(Debug, Clone)]
struct Row {
    ts: i64,
    exchange: String,
    symbol: String,
    price: f64,
}

fn rows() -> impl Strategy<Value = Vec<Row>> {
    let base = day_start_ns(chrono::NaiveDate::from_ymd_opt(2020, 6, 1).unwrap());
    prop::collection::vec(
        (
            0..3 * NANOS_PER_DAY,
            prop::sample::select(vec!["a", "b", "c"]),
            prop::sample::select(vec!["BTC", "ETH"]),
            1e-6f64..1e6,
        )
            .prop_map(move |(off, ex, sym, price)| Row {
                ts: base + off,
                exchange: ex.to_string(),
                symbol: sym.to_string(),
                price,
            }),
        1..200,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ingest_then_slice_returns_the_accepted_rows(rows in rows()) {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("time,exchange,symbol,price\n");
        for r in &rows {
            writeln!(body, "{},{},{},{}", r.ts, r.exchange, r.symbol, r.price).unwrap();
        }
        let path = dir.path().join("in.csv");
        std::fs::write(&path, body).unwrap();
        let store = TickStore::open(dir.path().join("store")).unwrap();
        let rep = store.ingest_csv(&path, &CsvSchema::default()).unwrap();
        prop_assert_eq!(rep.accepted, rows.len());

        let mut expected: BTreeMap<(String, chrono::NaiveDate), Vec<(i64, String, u64)>> = BTreeMap::new();
        for r in &rows {
            expected
                .entry((r.symbol.clone(), utc_date_of(r.ts)))
                .or_default()
                .push((r.ts, r.exchange.clone(), r.price.to_bits()));
        }
        let mut seen = 0;
        for sym in store.symbols().unwrap() {
            for d in store.dates(&sym).unwrap() {
                let slice = store.slice(&sym, d).unwrap().unwrap();
                let mut got: Vec<_> = slice.ticks.iter().map(|t| (t.timestamp_ns, t.exchange.clone(), t.price.to_bits())).collect();
                prop_assert!(slice.ticks.windows(2).all(|w| w[0].timestamp_ns <= w[1].timestamp_ns));
                prop_assert!(slice.ticks.iter().all(|t| utc_date_of(t.timestamp_ns) == d && t.symbol == sym));
                let mut want = expected.get(&(sym.clone(), d)).cloned().unwrap_or_default();
                got.sort();
                want.sort();
                prop_assert_eq!(got, want);
                seen += 1;
            }
        }
        prop_assert_eq!(seen, expected.len());
    }
}
