#![allow(dead_code)]

use bfsim_core::crypto::{
    derive_address, derive_pubkey, AddrHash, AddressDeriver, ModelParams, SecretKey,
};
use bfsim_core::ledger::{BlockReceipt, ChainState, Transaction};

pub fn addr_of(sk: &SecretKey, p: &ModelParams) -> AddrHash {
    derive_address(&derive_pubkey(sk, p).unwrap(), p).hash
}

/// First key from 0 upward sharing the victim's address under a different
/// pubkey. Deterministic, and fast whenever 2^(b_sec - b_addr) is small.
pub fn find_collider(victim: &SecretKey, p: &ModelParams) -> SecretKey {
    let target = addr_of(victim, p);
    let victim_pk = derive_pubkey(victim, p).unwrap().serialize();
    let mut deriver = AddressDeriver::new(p);
    for i in 0..(1u128 << p.b_sec()) {
        let sk = SecretKey::from_uint(i, p);
        if deriver.addr_hash(&sk) == target && deriver.pubkey_bytes(&sk) != victim_pk.as_slice()
        {
            return sk;
        }
    }
    panic!("keyspace holds no second preimage of the victim's address");
}

pub fn empty_coinbase(state: &ChainState) -> Transaction {
    Transaction::coinbase(state.next_height(), vec![])
}

/// Appends `n` empty blocks.
pub fn advance(mut state: ChainState, n: usize) -> ChainState {
    for _ in 0..n {
        state = state.append_block(vec![empty_coinbase(&state)]).unwrap().0;
    }
    state
}

/// The value-conservation identity every receipt must satisfy:
/// utxo+frozen moves by coinbase - fees - removed + reverted + frozen
/// created (a frozen spend moves value without changing the sum).
pub fn assert_conserved(before: &ChainState, after: &ChainState, receipt: &BlockReceipt) {
    let pre = before.utxo_value_total() as i128 + before.frozen_value_total() as i128;
    let post = after.utxo_value_total() as i128 + after.frozen_value_total() as i128;
    let removed: i128 = receipt
        .evidence_outcomes
        .iter()
        .map(|o| o.removed_value as i128)
        .sum();
    let reverted: i128 = receipt
        .evidence_outcomes
        .iter()
        .map(|o| o.reverted_value as i128)
        .sum();
    let frozen: i128 = receipt
        .evidence_outcomes
        .iter()
        .map(|o| o.frozen_value as i128)
        .sum();
    assert_eq!(
        post - pre,
        receipt.coinbase_value as i128 - receipt.fees as i128 - removed + reverted + frozen,
        "block {} breaks value conservation",
        receipt.height
    );
}
