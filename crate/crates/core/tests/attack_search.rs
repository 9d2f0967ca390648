//! The search loop against live chains: hit rates against the binomial
//! baseline, the audit log format, and the full find-then-steal path.

mod common;

use std::collections::BTreeSet;

use bfsim_core::attacker::{
    craft_stealing_tx, predicted_rate, search, AddrIndex, AttackConfig, StrategySpec,
};
use bfsim_core::crypto::{derive_address, derive_pubkey, keygen, ModelParams, SecretKey};
use bfsim_core::ledger::{ChainConfig, ChainState, OutPoint, Transaction, TxOutput};

use common::{addr_of, advance, assert_conserved};

/// Funds `n` keys with pairwise distinct addresses so the index size is
/// exactly `n`. Returns the state (past the spend timeout) and the keys.
fn fund_distinct(p: &ModelParams, n: usize) -> (ChainState, Vec<SecretKey>) {
    let mut keys = Vec::new();
    let mut seen = BTreeSet::new();
    let mut i = 0u64;
    while keys.len() < n {
        let sk = keygen(5000 + i, p);
        i += 1;
        if seen.insert(addr_of(&sk, p)) {
            keys.push(sk);
        }
    }
    let config = ChainConfig {
        subsidy: 10 * n as u64,
        ..ChainConfig::default()
    };
    let mut state = ChainState::new(*p, config);
    let outputs = keys
        .iter()
        .map(|sk| TxOutput::p2pkh(10, addr_of(sk, p)))
        .collect();
    state = state
        .append_block(vec![Transaction::coinbase(0, outputs)])
        .unwrap()
        .0;
    (advance(state, 6), keys)
}

#[test]
fn random_hit_count_matches_binomial_prediction() {
    let p = ModelParams::new(20, 8)
        .unwrap()
        .with_digest_bits(1)
        .unwrap();
    let (state, _) = fund_distinct(&p, 4);
    let index = AddrIndex::build(&state);
    assert_eq!(index.len(), 4);

    let trials: u64 = 1 << 17;
    let q = index.len() as f64 / 2f64.powi(p.b_addr() as i32);
    let expect = trials as f64 * q;
    let sigma = (trials as f64 * q * (1.0 - q)).sqrt();

    for spec in [
        StrategySpec::Random {
            seed: 11,
            count: trials,
        },
        StrategySpec::Sequential {
            start: 0,
            count: trials,
        },
    ] {
        let report = search(
            &AttackConfig {
                strategy: spec,
                workers: 4,
                stop_after_hits: None,
            },
            &index,
            &p,
        )
        .unwrap();
        assert_eq!(report.trials, trials);
        let hits = report.hits.len() as f64;
        assert!(
            (hits - expect).abs() <= 3.0 * sigma,
            "{}: {hits} hits, expected {expect:.0} +- {:.0}",
            spec.name(),
            3.0 * sigma
        );
        // The predicted throughput relation is exact by construction.
        assert_eq!(
            report.r_predicted,
            predicted_rate(index.len(), report.r0, &p)
        );
    }
}

#[test]
fn doubling_the_index_doubles_the_hit_rate() {
    let p = ModelParams::new(20, 8)
        .unwrap()
        .with_digest_bits(1)
        .unwrap();
    let trials: u64 = 1 << 17;

    let count_hits = |n: usize| -> (f64, f64) {
        let (state, _) = fund_distinct(&p, n);
        let index = AddrIndex::build(&state);
        assert_eq!(index.len(), n);
        let report = search(
            &AttackConfig {
                strategy: StrategySpec::Random {
                    seed: 77,
                    count: trials,
                },
                workers: 4,
                stop_after_hits: None,
            },
            &index,
            &p,
        )
        .unwrap();
        let q = n as f64 / 2f64.powi(p.b_addr() as i32);
        (
            report.hits.len() as f64,
            (trials as f64 * q * (1.0 - q)).sqrt(),
        )
    };

    let (h4, s4) = count_hits(4);
    let (h8, s8) = count_hits(8);
    // Each count sits within 3 sigma of its own mean, so their difference
    // from exact doubling is bounded by the combined spread.
    let combined = (4.0 * s4 * s4 + s8 * s8).sqrt();
    assert!(
        (h8 - 2.0 * h4).abs() <= 3.0 * combined,
        "h4={h4} h8={h8}, want h8 ~ 2*h4 +- {:.0}",
        3.0 * combined
    );
}

#[test]
fn hit_log_is_sorted_parseable_and_self_consistent() {
    let p = ModelParams::new(16, 8)
        .unwrap()
        .with_digest_bits(8)
        .unwrap();
    let (state, _) = fund_distinct(&p, 3);
    let index = AddrIndex::build(&state);

    let report = search(
        &AttackConfig {
            strategy: StrategySpec::Sequential {
                start: 0,
                count: 1 << 16,
            },
            workers: 3,
            stop_after_hits: None,
        },
        &index,
        &p,
    )
    .unwrap();
    assert!(!report.hits.is_empty());

    let log = report.hit_log();
    let mut prev_sk: Option<Vec<u8>> = None;
    for line in log.lines() {
        let (sk_hex, addr_hex) = line.split_once(' ').expect("two fields per line");
        let sk_bytes = hex::decode(sk_hex).unwrap();
        let sk = SecretKey::from_bytes(&sk_bytes, &p).unwrap();
        let addr = derive_address(&derive_pubkey(&sk, &p).unwrap(), &p).hash;
        assert_eq!(hex::encode(addr.as_bytes()), addr_hex);
        assert!(index.lookup(&addr).is_some(), "logged hit not in the index");
        if let Some(prev) = &prev_sk {
            assert!(prev < &sk_bytes, "log must ascend by secret key");
        }
        prev_sk = Some(sk_bytes);
    }
    assert_eq!(log.lines().count(), report.hits.len());
}

#[test]
fn found_key_drains_the_victim_through_a_block() {
    let p = ModelParams::new(16, 8)
        .unwrap()
        .with_digest_bits(8)
        .unwrap();
    let (state, keys) = fund_distinct(&p, 2);
    let victim_addr = addr_of(&keys[0], &p);
    let index = AddrIndex::build(&state);

    let report = search(
        &AttackConfig {
            strategy: StrategySpec::Sequential {
                start: 0,
                count: 1 << 16,
            },
            workers: 4,
            stop_after_hits: None,
        },
        &index,
        &p,
    )
    .unwrap();
    let hit = report
        .hits
        .iter()
        .find(|h| h.address == victim_addr)
        .expect("full keyspace scan reaches the victim's address");

    let adversary = keygen(1, &p);
    let outpoints: Vec<OutPoint> = hit.outpoints.iter().map(|(op, _)| *op).collect();
    let steal =
        craft_stealing_tx(&hit.secret_key, &outpoints, addr_of(&adversary, &p), 1, &state)
            .unwrap();

    let before = state.clone();
    let cb = Transaction::coinbase(state.next_height(), vec![]);
    let (after, receipt) = state.append_block(vec![cb, steal.clone()]).unwrap();
    assert_eq!(receipt.fees, 1);
    assert_conserved(&before, &after, &receipt);
    for op in &outpoints {
        assert!(after.utxo_get(op).is_none(), "victim output not consumed");
    }
    let landed = OutPoint::new(steal.txid(), 0);
    assert_eq!(after.utxo_get(&landed).unwrap().output.value, 9);
}
