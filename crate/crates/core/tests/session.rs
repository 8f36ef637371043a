mod oracles;

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, NaiveDate, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use prismatic_core::corrnet::cache::build_yearly_cache;
use prismatic_core::corrnet::ThresholdConfig;
use prismatic_core::ingest::{Basis, DailyBar, DailySeries, InstrumentId};
use prismatic_core::knowledge::{KnowledgeItem, MultiLayerNetwork};
use prismatic_core::session::{
    ordered_matrix, period_returns, Applied, ClusterSession, DateRange, Provenance, SessionError,
    SessionEvent, SessionOp, StoreCatalog,
};
use prismatic_core::store::{Store, StoreConfig};
use prismatic_core::synth::{self, SynthConfig};

fn id(s: &str) -> InstrumentId {
    InstrumentId::new(s).unwrap()
}

fn ts(sec: i64) -> DateTime<Utc> {
    DateTime::from_timestamp(1_600_000_000 + sec, 0).unwrap()
}

fn days(n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::new();
    let mut d = NaiveDate::from_ymd_opt(2020, 1, 2).unwrap();
    while out.len() < n {
        out.push(d);
        d += Duration::days(1);
    }
    out
}

fn series_from(
    name: &str,
    dates: &[NaiveDate],
    price_shocks: &[f64],
    volume_shocks: &[f64],
    base: f64,
) -> DailySeries {
    let mut close = 10.0;
    let mut logv = base;
    let bars = dates
        .iter()
        .zip(price_shocks.iter().zip(volume_shocks))
        .map(|(d, (p, v))| {
            close *= (0.02 * p).exp();
            logv += 0.2 * v;
            DailyBar {
                date: *d,
                close,
                volume: logv.exp(),
            }
        })
        .collect();
    DailySeries {
        instrument: id(name),
        bars,
    }
}

/// Two price blocks of three stocks each; `B1` and `B2` trade identically.
fn two_block_store() -> Store {
    let n = 200;
    let dates = days(n);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut normal =
        |k: usize| -> Vec<f64> { (0..k).map(|_| rng.sample(StandardNormal)).collect() };
    let fa = normal(n);
    let fb = normal(n);
    let va = normal(n);
    let vb = normal(n);
    let mut out = Vec::new();
    for (k, name) in ["A1", "A2", "A3"].iter().enumerate() {
        let e = normal(n);
        let ev = normal(n);
        let p: Vec<f64> = fa.iter().zip(&e).map(|(f, e)| f + 0.3 * e).collect();
        let v: Vec<f64> = va.iter().zip(&ev).map(|(f, e)| f + 0.3 * e).collect();
        out.push(series_from(name, &dates, &p, &v, 10.0 + k as f64));
    }
    let e = normal(n);
    let ev = normal(n);
    let p: Vec<f64> = fb.iter().zip(&e).map(|(f, e)| f + 0.3 * e).collect();
    let v: Vec<f64> = vb.iter().zip(&ev).map(|(f, e)| f + 0.3 * e).collect();
    out.push(series_from("B1", &dates, &p, &v, 12.0));
    out.push(series_from("B2", &dates, &p, &v, 12.0));
    let e = normal(n);
    let ev = normal(n);
    let p: Vec<f64> = fb.iter().zip(&e).map(|(f, e)| f + 0.3 * e).collect();
    let v: Vec<f64> = vb.iter().zip(&ev).map(|(f, e)| f + 0.3 * e).collect();
    out.push(series_from("B3", &dates, &p, &v, 9.0));
    let m: Vec<f64> = fa.iter().zip(&fb).map(|(a, b)| a + b).collect();
    out.push(series_from("IDX", &dates, &m, &va, 15.0));
    let config = StoreConfig {
        basis: Basis::Returns,
        benchmark: Some(id("IDX")),
        min_overlap: 30,
    };
    Store::new(config, out, Vec::new()).unwrap()
}

fn session_over(store: &Store, names: &[&str]) -> ClusterSession {
    let cache = build_yearly_cache(store, 2020).unwrap();
    let mut s = ClusterSession::create(
        "s1",
        "e0",
        ts(0),
        &cache,
        &ThresholdConfig::with_thresholds(2.0, 2.0),
        &[id(names[0])],
        40,
        &BTreeMap::new(),
    )
    .unwrap();
    let network = MultiLayerNetwork::build(&store.profiles);
    let catalog = StoreCatalog {
        store,
        network: &network,
    };
    for (k, name) in names[1..].iter().enumerate() {
        let ev = SessionEvent {
            id: format!("add{k}"),
            ts: ts(k as i64 + 1),
            op: SessionOp::Add {
                stock: id(name),
                provenance: Provenance::KnowledgeAdded,
            },
        };
        assert_eq!(s.apply(ev, &catalog).unwrap(), Applied::Applied);
    }
    s
}

#[test]
fn two_blocks_are_recovered() {
    let store = two_block_store();
    // interleave so the recovered order is not just insertion order
    let s = session_over(&store, &["A1", "B1", "A2", "B3", "A3", "B2"]);
    let om = ordered_matrix(&s, &store, DateRange::year(2020)).unwrap();
    assert_eq!(om.blocks, vec![(0, 3), (3, 6)]);
    let block_of = |r: usize| om.members[r].as_str().chars().next().unwrap();
    for (start, end) in &om.blocks {
        let first = block_of(*start);
        assert!((*start..*end).all(|r| block_of(r) == first));
    }
    // the permutation is a permutation
    let mut perm = om.permutation.clone();
    perm.sort_unstable();
    assert_eq!(perm, (0..6).collect::<Vec<_>>());
    // identical pair sits side by side
    let b1 = om.members.iter().position(|m| m.as_str() == "B1").unwrap();
    let b2 = om.members.iter().position(|m| m.as_str() == "B2").unwrap();
    assert_eq!(b1.abs_diff(b2), 1);
}

#[test]
fn matrix_cells_match_direct_correlations() {
    let store = two_block_store();
    let s = session_over(&store, &["A1", "B1", "A2", "B3", "A3", "B2"]);
    let om = ordered_matrix(&s, &store, DateRange::year(2020)).unwrap();
    let obs = |m: &InstrumentId| store.observations(m).unwrap().clone();
    let bench = obs(&id("IDX"));
    for r in 0..6 {
        for c in 0..6 {
            let (a, b) = (obs(&om.members[r]), obs(&om.members[c]));
            let want = match r.cmp(&c) {
                std::cmp::Ordering::Less => oracles::pearson(&a.price_returns, &b.price_returns, 2),
                std::cmp::Ordering::Greater => {
                    oracles::pearson(&a.volume_changes, &b.volume_changes, 2)
                }
                std::cmp::Ordering::Equal => {
                    oracles::pearson(&a.price_returns, &bench.price_returns, 2)
                }
            };
            let got = om.cell(r, c);
            assert!(
                (got.unwrap() - want.unwrap()).abs() < 1e-9,
                "cell ({r},{c})"
            );
        }
    }
    // members and permutation agree with the session's member list
    let ids = s.member_ids();
    for (r, &p) in om.permutation.iter().enumerate() {
        assert_eq!(om.members[r], ids[p]);
    }
}

#[test]
fn manual_order_overrides_seriation() {
    let store = two_block_store();
    let mut s = session_over(&store, &["A1", "B1", "A2"]);
    let order = vec![id("A2"), id("B1"), id("A1")];
    let ev = SessionEvent {
        id: "r".into(),
        ts: ts(50),
        op: SessionOp::Reorder {
            order: order.clone(),
        },
    };
    let network = MultiLayerNetwork::build(&[]);
    s.apply(
        ev,
        &StoreCatalog {
            store: &store,
            network: &network,
        },
    )
    .unwrap();
    let om = ordered_matrix(&s, &store, DateRange::year(2020)).unwrap();
    assert_eq!(om.members, order);
    let spans: usize = om.blocks.iter().map(|(a, b)| b - a).sum();
    assert_eq!(spans, 3);
}

#[test]
fn too_few_members_for_a_matrix() {
    let store = two_block_store();
    let s = session_over(&store, &["A1"]);
    assert_eq!(
        ordered_matrix(&s, &store, DateRange::year(2020)).unwrap_err(),
        SessionError::TooFewMembers(1)
    );
}

#[test]
fn period_return_uses_first_and_last_close() {
    let dates = days(3);
    let bars = [100.0, 120.0, 150.0]
        .iter()
        .zip(&dates)
        .map(|(c, d)| DailyBar {
            date: *d,
            close: *c,
            volume: 1.0,
        })
        .collect();
    let store = Store::new(
        StoreConfig::default(),
        vec![DailySeries {
            instrument: id("X"),
            bars,
        }],
        Vec::new(),
    )
    .unwrap();
    let r = period_returns(&[id("X"), id("Y")], &store, DateRange::year(2020));
    assert!((r[&id("X")] - 0.5).abs() < 1e-12);
    assert!(r[&id("Y")].is_nan());
}

/// Random edits on a synthetic market: after every step the UpSet table
/// agrees with item holders, and the log replays to the same state.
#[test]
fn random_edits_keep_upset_consistent_and_replayable() {
    let market = synth::generate(&SynthConfig {
        stocks: 40,
        years: 1,
        communities: 4,
        seed: 5,
        ..SynthConfig::default()
    });
    let store = Store::new(
        StoreConfig {
            benchmark: Some(market.truth.benchmark.clone()),
            ..StoreConfig::default()
        },
        market.series.clone(),
        market.profiles.clone(),
    )
    .unwrap();
    let network = MultiLayerNetwork::build(&store.profiles);
    let catalog = StoreCatalog {
        store: &store,
        network: &network,
    };
    let cache = build_yearly_cache(&store, 2010).unwrap();
    let stocks: Vec<InstrumentId> = market
        .profiles
        .iter()
        .map(|p| p.instrument.clone())
        .collect();
    let items: Vec<KnowledgeItem> = network.items().cloned().collect();
    let mut s = ClusterSession::create(
        "s9",
        "e0",
        ts(0),
        &cache,
        &ThresholdConfig::default(),
        &[stocks[0].clone()],
        40,
        &store.industry_map(),
    )
    .unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for step in 1..300 {
        let op = match rng.random_range(0..5) {
            0 => SessionOp::Add {
                stock: stocks[rng.random_range(0..stocks.len())].clone(),
                provenance: Provenance::KnowledgeAdded,
            },
            1 => SessionOp::Remove {
                stock: stocks[rng.random_range(0..stocks.len())].clone(),
                force: rng.random(),
            },
            2 | 3 => SessionOp::Pin {
                item: items[rng.random_range(0..items.len())].clone(),
            },
            _ => match s.pinned_items.first() {
                Some(item) => SessionOp::Unpin { item: item.clone() },
                None => continue,
            },
        };
        let before = s.clone();
        let ev = SessionEvent {
            id: format!("e{step}"),
            ts: ts(step),
            op,
        };
        if s.apply(ev, &catalog).is_err() {
            assert_eq!(s, before, "failed op must not change state");
        }

        let table = s.upset_table(&network);
        assert_eq!(table.members, s.member_ids());
        assert_eq!(table.items, s.pinned_items);
        for (m, row) in table.members.iter().zip(&table.membership) {
            for (item, &held) in table.items.iter().zip(row) {
                let holders = network.holders_of(item).unwrap();
                assert_eq!(held, holders.contains(m));
            }
        }
    }

    let doc = s.document();
    let replayed = ClusterSession::replay(&doc).unwrap();
    assert_eq!(replayed, s);
    assert_eq!(
        serde_json::to_string(&replayed).unwrap(),
        serde_json::to_string(&s).unwrap()
    );
    let text = serde_json::to_string(&doc).unwrap();
    let back: prismatic_core::session::SessionDocument = serde_json::from_str(&text).unwrap();
    assert_eq!(back, doc);
}
