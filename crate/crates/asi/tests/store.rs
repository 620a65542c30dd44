use std::time::Duration;

use citytb_asi::{
    write_csv, Aggregate, AsiError, Filter, Grid, HistoryQuery, ObservationStore, Series,
};
use citytb_core::{GeoPoint, Observation, SimTime, Urn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn urn(id: &str) -> Urn {
    Urn::new("smartsantander", "santander", id).unwrap()
}

fn obs(id: &str, phen: &str, value: f64, at: GeoPoint, t_ms: u64) -> Observation {
    Observation {
        source: urn(id),
        phenomenon: phen.into(),
        value,
        unit: "u".into(),
        position: at,
        timestamp: SimTime(t_ms),
        motion: None,
    }
}

fn origin() -> GeoPoint {
    GeoPoint::new(43.4623, -3.8099)
}

#[test]
fn ingest_is_gated_on_service_registration() {
    let mut s = ObservationStore::new();
    s.register_source(urn("pk0001"));
    let (_, rx) = s.subscribe(Filter::phenomenon("car-presence"));
    s.ingest(obs("pk0001", "car-presence", 1.0, origin(), 10)).unwrap();
    assert_eq!(s.len(), 1);
    assert_eq!(rx.try_iter().count(), 1);

    let err = s.ingest(obs("lp0001", "temperature", 20.0, origin(), 10));
    assert_eq!(err, Err(AsiError::NotServiceRegistered(urn("lp0001"))));
    assert_eq!(s.len(), 1);
    assert_eq!(s.rejected().len(), 1);

    assert!(s.unregister_source(&urn("pk0001")));
    assert!(s.ingest(obs("pk0001", "car-presence", 0.0, origin(), 20)).is_err());
}

#[test]
fn per_source_timestamps_are_monotone() {
    let mut s = ObservationStore::new();
    s.register_source(urn("a"));
    s.register_source(urn("b"));
    s.ingest(obs("a", "x", 1.0, origin(), 100)).unwrap();
    s.ingest(obs("a", "y", 1.0, origin(), 100)).unwrap();
    s.ingest(obs("b", "x", 1.0, origin(), 50)).unwrap();
    assert!(matches!(
        s.ingest(obs("a", "x", 1.0, origin(), 99)),
        Err(AsiError::OutOfOrder { .. })
    ));
}

#[test]
fn empty_range_gives_empty_series() {
    let mut s = ObservationStore::new();
    s.register_source(urn("a"));
    s.ingest(obs("a", "x", 1.0, origin(), 100)).unwrap();
    let q = HistoryQuery::raw(Filter::default(), SimTime(100), SimTime(100));
    assert!(s.query_history(&q).unwrap().is_empty());
    let q = HistoryQuery::raw(Filter::default(), SimTime(0), SimTime(100));
    assert!(s.query_history(&q).unwrap().is_empty());
    let q = HistoryQuery::raw(Filter::default(), SimTime(0), SimTime(101));
    assert_eq!(s.query_history(&q).unwrap().len(), 1);
}

#[test]
fn query_pairs_are_validated() {
    assert!(matches!(
        HistoryQuery::from_pairs([("colour", "red")]),
        Err(AsiError::BadFilter(_))
    ));
    assert!(matches!(
        HistoryQuery::from_pairs([("from", "2h"), ("to", "1h")]),
        Err(AsiError::BadFilter(_))
    ));
    assert!(matches!(
        HistoryQuery::from_pairs([("window", "1h")]),
        Err(AsiError::BadFilter(_))
    ));
    let q = HistoryQuery::from_pairs([
        ("phenomenon", "temperature"),
        ("from", "1d"),
        ("to", "2d"),
        ("aggregate", "mean"),
        ("window", "1h"),
    ])
    .unwrap();
    assert_eq!(q.from, SimTime(86_400_000));
    assert_eq!(q.aggregate, Some(Aggregate::Mean));
    assert_eq!(q.window, Some(Duration::from_secs(3600)));
}

struct Field {
    store: ObservationStore,
    all: Vec<Observation>,
    sources: Vec<(String, GeoPoint)>,
}

fn random_field(n: usize, seed: u64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ObservationStore::new();
    let sources: Vec<(String, GeoPoint)> = (0..60)
        .map(|i| {
            let p = origin().offset_m(rng.gen_range(-3000.0..3000.0), rng.gen_range(-3000.0..3000.0));
            (format!("s{i:02}"), p)
        })
        .collect();
    for (id, _) in &sources[..50] {
        store.register_source(urn(id));
    }
    let phenomena = ["temperature", "noise", "light", "car-presence"];
    let mut clock = vec![0u64; sources.len()];
    let mut all = Vec::new();
    for _ in 0..n {
        let k = rng.gen_range(0..sources.len());
        clock[k] += rng.gen_range(0..120_000);
        let (id, p) = &sources[k];
        let o = obs(id, phenomena.choose(&mut rng).unwrap(), rng.gen_range(-10.0..40.0), *p, clock[k]);
        if store.ingest(o.clone()).is_ok() {
            all.push(o);
        }
    }
    Field { store, all, sources }
}

fn random_query(rng: &mut ChaCha8Rng, f: &Field) -> HistoryQuery {
    let mut filter = Filter::default();
    if rng.gen_bool(0.5) {
        filter.phenomena.insert(["temperature", "noise", "light", "car-presence", "co"].choose(rng).unwrap().to_string());
    }
    if rng.gen_bool(0.3) {
        for _ in 0..rng.gen_range(1..4) {
            filter.urns.insert(urn(&f.sources.choose(rng).unwrap().0));
        }
    }
    if rng.gen_bool(0.4) {
        filter = filter.near(
            origin().offset_m(rng.gen_range(-3000.0..3000.0), rng.gen_range(-3000.0..3000.0)),
            rng.gen_range(50.0..3000.0),
        );
    }
    let a = rng.gen_range(0..12_000_000u64);
    let b = rng.gen_range(0..12_000_000u64);
    let mut q = HistoryQuery::raw(filter, SimTime(a.min(b)), SimTime(a.max(b)));
    if rng.gen_bool(0.5) {
        let agg = [Aggregate::Min, Aggregate::Max, Aggregate::Mean][rng.gen_range(0..3)];
        let window = rng.gen_bool(0.7).then(|| Duration::from_millis(rng.gen_range(1..3_000_000)));
        q = q.aggregated(agg, window);
    }
    q
}

fn haversine(a: &GeoPoint, b: &GeoPoint) -> f64 {
    let (la, lb) = (a.lat.to_radians(), b.lat.to_radians());
    let h = ((lb - la) / 2.0).sin().powi(2)
        + la.cos() * lb.cos() * ((b.lon - a.lon).to_radians() / 2.0).sin().powi(2);
    2.0 * 6_371_000.0 * h.sqrt().asin()
}

/// Linear scan over everything accepted, independent of the store's indexes.
fn oracle(all: &[Observation], q: &HistoryQuery) -> Vec<(u64, u64, usize, f64)> {
    let hit: Vec<&Observation> = all
        .iter()
        .filter(|o| o.timestamp >= q.from && o.timestamp < q.to)
        .filter(|o| q.filter.phenomena.is_empty() || q.filter.phenomena.contains(&o.phenomenon))
        .filter(|o| q.filter.urns.is_empty() || q.filter.urns.contains(&o.source))
        .filter(|o| q.filter.geo.is_none_or(|g| haversine(&g.center, &o.position) <= g.radius_m))
        .collect();
    let Some(agg) = q.aggregate else {
        let mut raw: Vec<_> = hit.iter().map(|o| (o.timestamp.0, 0, 0, o.value)).collect();
        raw.sort_by_key(|r| r.0);
        return raw;
    };
    let (step, n) = match q.window {
        Some(w) => {
            let w = w.as_millis() as u64;
            (w, (q.to.0 - q.from.0).div_ceil(w))
        }
        None => (q.to.0 - q.from.0, 1),
    };
    let mut out = Vec::new();
    for k in 0..n {
        let start = q.from.0 + k * step;
        let end = (start + step).min(q.to.0);
        let vals: Vec<f64> = hit
            .iter()
            .filter(|o| o.timestamp.0 >= start && o.timestamp.0 < end)
            .map(|o| o.value)
            .collect();
        if vals.is_empty() {
            continue;
        }
        let v = match agg {
            Aggregate::Min => vals.iter().cloned().fold(f64::MAX, f64::min),
            Aggregate::Max => vals.iter().cloned().fold(f64::MIN, f64::max),
            Aggregate::Mean => vals.iter().sum::<f64>() / vals.len() as f64,
        };
        out.push((start, end, vals.len(), v));
    }
    out
}

fn check_history(f: &Field, seed: u64, rounds: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..rounds {
        let q = random_query(&mut rng, f);
        let expected = oracle(&f.all, &q);
        match f.store.query_history(&q).unwrap() {
            Series::Raw(got) => {
                assert_eq!(got.len(), expected.len(), "{q:?}");
                for (g, e) in got.iter().zip(&expected) {
                    assert_eq!(g.timestamp.0, e.0);
                }
                // Same multiset of observations.
                let mut a: Vec<_> = got.iter().map(|o| (o.timestamp, o.source.clone(), o.value.to_bits())).collect();
                let mut b: Vec<_> = f.all.iter()
                    .filter(|o| o.timestamp >= q.from && o.timestamp < q.to && q.filter.matches(o))
                    .map(|o| (o.timestamp, o.source.clone(), o.value.to_bits())).collect();
                a.sort();
                b.sort();
                assert_eq!(a, b);
            }
            Series::Aggregated(got) => {
                assert_eq!(got.len(), expected.len(), "{q:?}");
                for (g, e) in got.iter().zip(&expected) {
                    assert_eq!((g.start.0, g.end.0, g.count), (e.0, e.1, e.2));
                    assert!((g.value - e.3).abs() <= 1e-9, "{} vs {}", g.value, e.3);
                }
            }
        }
    }
}

#[test]
fn history_equals_linear_scan() {
    let f = random_field(10_000, 7);
    assert!(f.store.rejected().len() > 0);
    check_history(&f, 8, 500);
}

#[test]
fn subscriptions_deliver_exactly_the_filtered_stream() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut s = ObservationStore::new();
    let filters = [
        Filter::phenomenon("noise"),
        Filter::default().source(urn("s1")).source(urn("s4")),
        Filter::default().near(origin(), 800.0),
        Filter::phenomenon("light").near(origin(), 1500.0),
    ];
    let subs: Vec<_> = filters.iter().map(|f| s.subscribe(f.clone()).1).collect();
    for i in 0..8 {
        s.register_source(urn(&format!("s{i}")));
    }
    let mut stream = Vec::new();
    let mut clock = [0u64; 10];
    for _ in 0..3000 {
        let k = rng.gen_range(0..10);
        clock[k] += rng.gen_range(0..5000);
        let p = origin().offset_m(rng.gen_range(-2000.0..2000.0), rng.gen_range(-2000.0..2000.0));
        let o = obs(&format!("s{k}"), ["noise", "light", "co"][rng.gen_range(0..3)], rng.gen(), p, clock[k]);
        if s.ingest(o.clone()).is_ok() {
            stream.push(o);
        }
    }
    for (f, rx) in filters.iter().zip(subs) {
        let got: Vec<_> = rx.try_iter().collect();
        let want: Vec<_> = stream
            .iter()
            .filter(|o| {
                (f.phenomena.is_empty() || f.phenomena.contains(&o.phenomenon))
                    && (f.urns.is_empty() || f.urns.contains(&o.source))
                    && f.geo.is_none_or(|g| haversine(&g.center, &o.position) <= g.radius_m)
            })
            .cloned()
            .collect();
        assert!(!want.is_empty());
        assert_eq!(got, want);
    }
}

#[test]
fn store_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("obs.jsonl");
    let q = HistoryQuery::raw(Filter::default(), SimTime(0), SimTime(u64::MAX));
    let before = {
        let mut s = ObservationStore::open(&path).unwrap();
        s.register_source(urn("a"));
        s.register_source(urn("b"));
        for t in 0..50 {
            s.ingest(obs("a", "x", t as f64 * 0.1, origin(), t * 1000)).unwrap();
        }
        s.unregister_source(&urn("b"));
        s.query_history(&q).unwrap()
    };
    let mut s = ObservationStore::open(&path).unwrap();
    assert_eq!(s.query_history(&q).unwrap(), before);
    assert!(s.is_registered(&urn("a")));
    assert!(!s.is_registered(&urn("b")));
    assert!(s.ingest(obs("a", "x", 0.0, origin(), 10)).is_err());
}

#[test]
fn series_export_as_csv() {
    let mut s = ObservationStore::new();
    s.register_source(urn("a"));
    for t in 0..10u64 {
        s.ingest(obs("a", "x", t as f64, origin(), t * 1000)).unwrap();
    }
    let q = HistoryQuery::raw(Filter::default(), SimTime(0), SimTime(10_000))
        .aggregated(Aggregate::Mean, Some(Duration::from_secs(5)));
    let mut buf = Vec::new();
    write_csv(&s.query_history(&q).unwrap(), &mut buf).unwrap();
    let mut r = csv::Reader::from_reader(buf.as_slice());
    let rows: Vec<Vec<String>> = r
        .records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect();
    assert_eq!(rows, vec![vec!["0", "5000", "5", "2"], vec!["5000", "10000", "5", "7"]]);
}

#[test]
fn single_sensor_heatmap_is_flat_inside_the_cutoff() {
    let mut s = ObservationStore::new();
    s.register_source(urn("a"));
    s.ingest(obs("a", "temperature", 17.5, origin(), 1000)).unwrap();
    let sw = origin().offset_m(-400.0, -400.0);
    let ne = origin().offset_m(400.0, 400.0);
    let grid = Grid::parse(&format!("{},{},{},{}", sw.lat, sw.lon, ne.lat, ne.lon), "16").unwrap();
    let h = s.heatmap("temperature", grid, SimTime(60_000)).unwrap();
    let mut inside = 0;
    for r in 0..16 {
        for c in 0..16 {
            let d = grid.center(r, c).distance_m(&origin());
            match h.get(r, c) {
                Some(v) => {
                    assert!(d <= 250.0);
                    assert_eq!(v, 17.5);
                    inside += 1;
                }
                None => assert!(d > 250.0),
            }
        }
    }
    assert!(inside > 0 && inside < 256);
    // Ten minutes later the reading is stale.
    assert!(matches!(
        s.heatmap("temperature", grid, SimTime(1000 + 600_001)),
        Err(AsiError::NoData(_))
    ));
    assert!(matches!(s.heatmap("noise", grid, SimTime(60_000)), Err(AsiError::NoData(_))));
}

#[test]
fn two_sensor_midpoint_is_the_average() {
    let mut s = ObservationStore::new();
    s.register_source(urn("a"));
    s.register_source(urn("b"));
    // A one-cell grid centred on the origin, sensors 100 m either side.
    let sw = origin().offset_m(-10.0, -10.0);
    let ne = origin().offset_m(10.0, 10.0);
    let grid = Grid::parse(&format!("{},{},{},{}", sw.lat, sw.lon, ne.lat, ne.lon), "1").unwrap();
    let c = grid.center(0, 0);
    s.ingest(obs("a", "t", 10.0, c.offset_m(0.0, -100.0), 0)).unwrap();
    s.ingest(obs("b", "t", 30.0, c.offset_m(0.0, 100.0), 0)).unwrap();
    let h = s.heatmap("t", grid, SimTime(0)).unwrap_err();
    // Neither sensor lies inside so small a box.
    assert!(matches!(h, AsiError::NoData(_)));
    let sw = c.offset_m(-150.0, -150.0);
    let ne = c.offset_m(150.0, 150.0);
    let big = Grid::parse(&format!("{},{},{},{}", sw.lat, sw.lon, ne.lat, ne.lon), "1").unwrap();
    let v = s.heatmap("t", big, SimTime(0)).unwrap().get(0, 0).unwrap();
    assert!((v - 20.0).abs() < 1e-9, "{v}");
}

#[test]
fn random_field_heatmap_equals_direct_idw() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut s = ObservationStore::new();
    let mut field = Vec::new();
    for i in 0..20 {
        let id = format!("h{i}");
        s.register_source(urn(&id));
        let p = origin().offset_m(rng.gen_range(-500.0..500.0), rng.gen_range(-500.0..500.0));
        let v = rng.gen_range(0.0..40.0);
        // An older reading that must be superseded.
        s.ingest(obs(&id, "t", -99.0, p, 1000)).unwrap();
        s.ingest(obs(&id, "t", v, p, 2000)).unwrap();
        field.push((p, v));
    }
    let sw = origin().offset_m(-600.0, -600.0);
    let ne = origin().offset_m(600.0, 600.0);
    let grid = Grid::parse(&format!("{},{},{},{}", sw.lat, sw.lon, ne.lat, ne.lon), "30x40").unwrap();
    let h = s.heatmap("t", grid, SimTime(5000)).unwrap();
    let mut max_diff: f64 = 0.0;
    for r in 0..30 {
        for c in 0..40 {
            let lat = sw.lat + (r as f64 + 0.5) * (ne.lat - sw.lat) / 30.0;
            let lon = sw.lon + (c as f64 + 0.5) * (ne.lon - sw.lon) / 40.0;
            let at = GeoPoint::new(lat, lon);
            let near: Vec<_> = field.iter().map(|(p, v)| (haversine(p, &at), *v)).filter(|(d, _)| *d <= 250.0).collect();
            let want = (!near.is_empty()).then(|| {
                let w: f64 = near.iter().map(|(d, _)| 1.0 / (d * d)).sum();
                near.iter().map(|(d, v)| v / (d * d)).sum::<f64>() / w
            });
            match (h.get(r, c), want) {
                (Some(a), Some(b)) => max_diff = max_diff.max((a - b).abs()),
                (None, None) => {}
                other => panic!("cell {r},{c}: {other:?}"),
            }
        }
    }
    assert!(max_diff < 1e-9, "{max_diff}");
}
