//! The consensus-level defense: a victim who can produce a second public key
//! hashing to a spent-from address publishes it as evidence; the chain then
//! rolls back the thief's transactions, freezes the disputed funds, and only
//! releases them toward the evidence's auxiliary address under the thief's
//! own key. Miners take a fee-median reward for including evidence.

use crate::crypto::{derive_address, derive_pubkey, derived_seed, keygen, pipeline_hash};
use crate::crypto::{AddrHash, ModelParams, PublicKey, SecretKey, Signature};
use crate::ledger::{
    sighash, ChainState, InputWitness, Lock, OutPoint, OutputStatus, Transaction, TxId, TxKind,
    TxOutput,
};
use std::collections::BTreeSet;
use thiserror::Error;

/// Points at one P2PKH input (not output) of a transaction already in the
/// chain whose revealed pubkey collides with the evidence's alt key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuspectRef {
    pub txid: TxId,
    pub input_index: u32,
}

/// The evidence payload carried by an Evidence-kind transaction. It has no
/// inputs, no outputs and no fee; its power is consensus-level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvidenceTransaction {
    pub suspect_refs: Vec<SuspectRef>,
    pub alt_pubkey: PublicKey,
    pub auxiliary_address: AddrHash,
}

/// An address with two known distinct preimage pubkeys.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DisputedAddress {
    pub address: AddrHash,
    pub published_pubkey: Vec<u8>,
    pub alt_pubkey: Vec<u8>,
}

/// Value taken out of circulation by evidence application. Spendable only by
/// a RewardSpend signed under `required_pubkey` paying the full value to
/// `destination`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrozenOutput {
    pub value: u64,
    pub disputed_address: AddrHash,
    pub required_pubkey: PublicKey,
    pub destination: AddrHash,
    pub origin_evidence: TxId,
}

/// What one evidence application did, for reports and conservation checks.
#[derive(Debug, Clone)]
pub struct EvidenceOutcome {
    pub origin_evidence: TxId,
    pub disputed_address: AddrHash,
    pub suspect_txids: Vec<TxId>,
    pub removed_outpoints: Vec<OutPoint>,
    pub reverted_outpoints: Vec<OutPoint>,
    pub removed_value: u64,
    pub reverted_value: u64,
    pub frozen_value: u64,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum EvidenceError {
    #[error("no spend from the victim's address exists")]
    NoTheftFound,
    #[error("the spender used the victim's own key; no second pubkey exists")]
    KeyMatchesThief,
    #[error("suspect ref {txid:?} input {input_index} does not resolve to a standard P2PKH input")]
    UnknownSuspectRef { txid: TxId, input_index: u32 },
    #[error("alt pubkey is identical to the published pubkey")]
    PubkeysIdentical,
    #[error("pubkeys do not hash to one common disputed address")]
    AddressMismatch,
    #[error("outputs of suspect tx {0:?} are no longer all unspent")]
    SuspectOutputsAlreadySpent(TxId),
    #[error("evidence transaction must carry no inputs, outputs or fee")]
    NonemptyFee,
    #[error("malformed evidence: {0}")]
    Malformed(&'static str),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FrozenSpendError {
    #[error("no frozen output originates from evidence {0:?}")]
    UnknownFrozen(TxId),
    #[error("signature not valid under the frozen output's required pubkey")]
    BadSignature,
    #[error("output does not pay the auxiliary address")]
    WrongDestination,
    #[error("output value {actual} differs from the frozen value {expected}")]
    PartialSpend { expected: u64, actual: u64 },
    #[error("malformed frozen spend: {0}")]
    Malformed(&'static str),
}

/// Scans the chain for Standard-tx inputs whose pubkey hashes to the
/// victim's address but differs from the victim's pubkey; returns the
/// evidence that would freeze them. The auxiliary address is derived
/// deterministically from the victim key.
pub fn make_evidence(
    victim_sk: &SecretKey,
    chain: &ChainState,
) -> Result<EvidenceTransaction, EvidenceError> {
    let params = *chain.params();
    let victim_pk = derive_pubkey(victim_sk, &params)
        .map_err(|_| EvidenceError::Malformed("victim key width does not match chain params"))?;
    let victim_pk_bytes = victim_pk.serialize();
    let victim_addr = pipeline_hash(&victim_pk_bytes, &params);

    let mut refs = Vec::new();
    let mut same_key_seen = false;
    for block in chain.blocks() {
        for tx in &block.transactions {
            if tx.kind != TxKind::Standard {
                continue;
            }
            let txid = tx.txid();
            for (i, input) in tx.inputs.iter().enumerate() {
                let Some(pubkey) = input.p2pkh_pubkey() else {
                    continue;
                };
                if pipeline_hash(pubkey, &params) != victim_addr {
                    continue;
                }
                if pubkey == victim_pk_bytes.as_slice() {
                    same_key_seen = true;
                } else {
                    refs.push(SuspectRef {
                        txid,
                        input_index: i as u32,
                    });
                }
            }
        }
    }
    if refs.is_empty() {
        return Err(if same_key_seen {
            EvidenceError::KeyMatchesThief
        } else {
            EvidenceError::NoTheftFound
        });
    }
    let aux_sk = keygen(derived_seed(victim_sk, "auxiliary-address"), &params);
    let aux_pk = derive_pubkey(&aux_sk, &params).expect("keygen width matches");
    let auxiliary_address = derive_address(&aux_pk, &params).hash;
    Ok(EvidenceTransaction {
        suspect_refs: refs,
        alt_pubkey: victim_pk,
        auxiliary_address,
    })
}

/// The key that can later sweep frozen funds to the auxiliary address of
/// evidence made from `victim_sk` (the address is derived from this key).
pub fn auxiliary_key(victim_sk: &SecretKey, params: &ModelParams) -> SecretKey {
    keygen(derived_seed(victim_sk, "auxiliary-address"), params)
}

struct ResolvedRef {
    published_pubkey: Vec<u8>,
    source_address: AddrHash,
    block_height: u64,
}

fn resolve_ref(chain: &ChainState, r: &SuspectRef) -> Result<ResolvedRef, EvidenceError> {
    let unknown = EvidenceError::UnknownSuspectRef {
        txid: r.txid,
        input_index: r.input_index,
    };
    let (tx, block_height) = chain.transaction(&r.txid).ok_or(unknown.clone())?;
    if tx.kind != TxKind::Standard {
        return Err(unknown);
    }
    let input = tx.inputs.get(r.input_index as usize).ok_or(unknown.clone())?;
    let InputWitness::P2pkh { pubkey, .. } = &input.witness else {
        return Err(unknown);
    };
    // The input was validated when its block applied, so its source record
    // exists and its lock is the disputed candidate address.
    let source = chain
        .record(&input.outpoint)
        .ok_or(EvidenceError::Malformed("suspect input source missing"))?;
    let Lock::P2pkh(source_address) = source.output.lock else {
        return Err(unknown);
    };
    Ok(ResolvedRef {
        published_pubkey: pubkey.clone(),
        source_address,
        block_height,
    })
}

/// Full validity check of an Evidence-kind transaction against a state:
/// refs resolve, keys genuinely collide, all suspect outputs are still
/// unspent, and the carrier has no economic payload of its own.
pub fn validate_evidence(chain: &ChainState, tx: &Transaction) -> Result<(), EvidenceError> {
    if tx.kind != TxKind::Evidence {
        return Err(EvidenceError::Malformed("kind is not Evidence"));
    }
    if !tx.inputs.is_empty() || !tx.outputs.is_empty() {
        return Err(EvidenceError::NonemptyFee);
    }
    let ev = tx
        .evidence
        .as_ref()
        .ok_or(EvidenceError::Malformed("missing evidence payload"))?;
    if ev.suspect_refs.is_empty() {
        return Err(EvidenceError::Malformed("no suspect refs"));
    }
    let params = chain.params();
    let alt_bytes = ev.alt_pubkey.serialize();
    let alt_addr = pipeline_hash(&alt_bytes, params);
    let mut disputed: Option<AddrHash> = None;
    let mut suspects = BTreeSet::new();
    for r in &ev.suspect_refs {
        let resolved = resolve_ref(chain, r)?;
        if resolved.published_pubkey == alt_bytes {
            return Err(EvidenceError::PubkeysIdentical);
        }
        // Both keys must hash to the address the suspect input spent from.
        if alt_addr != resolved.source_address {
            return Err(EvidenceError::AddressMismatch);
        }
        match disputed {
            None => disputed = Some(resolved.source_address),
            Some(prev) if prev == resolved.source_address => {}
            Some(_) => return Err(EvidenceError::AddressMismatch),
        }
        suspects.insert(r.txid);
    }
    for txid in suspects {
        let (suspect_tx, _) = chain.transaction(&txid).expect("resolved above");
        for j in 0..suspect_tx.outputs.len() {
            let op = OutPoint::new(txid, j as u32);
            if chain.utxo_get(&op).is_none() {
                return Err(EvidenceError::SuspectOutputsAlreadySpent(txid));
            }
        }
    }
    Ok(())
}

/// All Standard transactions at height >= `oldest_height` spending with
/// `colliding_pubkey` in any P2PKH input.
pub fn find_suspect_set(
    chain: &ChainState,
    colliding_pubkey: &PublicKey,
    oldest_height: u64,
) -> BTreeSet<TxId> {
    find_suspect_set_raw(chain, &colliding_pubkey.serialize(), oldest_height)
}

fn find_suspect_set_raw(
    chain: &ChainState,
    colliding_pubkey: &[u8],
    oldest_height: u64,
) -> BTreeSet<TxId> {
    let mut set = BTreeSet::new();
    for block in chain.blocks() {
        if block.height < oldest_height {
            continue;
        }
        for tx in &block.transactions {
            if tx.kind != TxKind::Standard {
                continue;
            }
            if tx
                .inputs
                .iter()
                .any(|i| i.p2pkh_pubkey() == Some(colliding_pubkey))
            {
                set.insert(tx.txid());
            }
        }
    }
    set
}

/// Validates and applies evidence in one step; used by block application.
/// `origin` is the txid of the carrying Evidence transaction.
pub(crate) fn validate_and_apply_evidence(
    state: &mut ChainState,
    tx: &Transaction,
    origin: TxId,
) -> Result<EvidenceOutcome, EvidenceError> {
    validate_evidence(state, tx)?;
    let ev = tx.evidence.as_ref().expect("validated");
    Ok(apply_validated(state, ev, origin))
}

/// Standalone application on a fresh state copy, for direct inspection of
/// the four rollback steps. Block-level application wraps the same logic.
pub fn apply_evidence(
    state: &ChainState,
    ev: &EvidenceTransaction,
) -> Result<(ChainState, EvidenceOutcome), EvidenceError> {
    let carrier = Transaction::evidence_carrier(ev.clone());
    validate_evidence(state, &carrier)?;
    let mut next = state.clone();
    let outcome = apply_validated(&mut next, ev, carrier.txid());
    Ok((next, outcome))
}

fn apply_validated(state: &mut ChainState, ev: &EvidenceTransaction, origin: TxId) -> EvidenceOutcome {
    let params = *state.params();
    let alt_bytes = ev.alt_pubkey.serialize();
    let disputed = pipeline_hash(&alt_bytes, &params);

    // Step 1: the suspect set, from every colliding pubkey named by the
    // refs, starting at the oldest block containing one.
    let mut colliding: BTreeSet<Vec<u8>> = BTreeSet::new();
    let mut oldest_height = u64::MAX;
    for r in &ev.suspect_refs {
        let resolved = resolve_ref(state, r).expect("validated");
        colliding.insert(resolved.published_pubkey);
        oldest_height = oldest_height.min(resolved.block_height);
    }
    let mut suspects: BTreeSet<TxId> = BTreeSet::new();
    for pk in &colliding {
        suspects.extend(find_suspect_set_raw(state, pk, oldest_height));
    }

    // Step 2: remove all unspent outputs of suspect txs, plus every utxo
    // entry locked to the disputed address.
    let mut to_remove: BTreeSet<OutPoint> = BTreeSet::new();
    for txid in &suspects {
        let (tx, _) = state.transaction(txid).expect("in suspect set");
        for j in 0..tx.outputs.len() {
            let op = OutPoint::new(*txid, j as u32);
            if state.utxo_get(&op).is_some() {
                to_remove.insert(op);
            }
        }
    }
    let disputed_utxos: Vec<OutPoint> = state
        .utxo_iter()
        .filter(|(_, rec)| rec.output.lock == Lock::P2pkh(disputed))
        .map(|(op, _)| *op)
        .collect();
    to_remove.extend(disputed_utxos);
    let mut removed_value = 0u64;
    for op in &to_remove {
        removed_value += state.record(op).expect("selected from records").output.value;
        state.set_status(op, OutputStatus::Removed);
    }

    // Step 3: suspect inputs not from the disputed address go back to
    // unspent at their original confirmation height.
    let mut reverted: Vec<OutPoint> = Vec::new();
    let mut reverted_value = 0u64;
    let mut frozen_value = 0u64;
    for txid in &suspects {
        let (tx, _) = state.transaction(txid).expect("in suspect set");
        let mut in_sum = 0u64;
        let mut out_sum = 0u64;
        let mut disputed_in = 0u64;
        let mut revert_ops: Vec<(OutPoint, u64)> = Vec::new();
        for input in &tx.inputs {
            let rec = state.record(&input.outpoint).expect("source recorded");
            in_sum += rec.output.value;
            if rec.output.lock == Lock::P2pkh(disputed) {
                disputed_in += rec.output.value;
            } else {
                revert_ops.push((input.outpoint, rec.output.value));
            }
        }
        for output in &tx.outputs {
            out_sum += output.value;
        }
        for (op, value) in revert_ops {
            state.set_status(&op, OutputStatus::Unspent);
            reverted.push(op);
            reverted_value += value;
        }
        // Step 4 accumulator: disputed input values plus the whole tx fee.
        frozen_value += disputed_in + (in_sum - out_sum);
    }

    // Step 4: one frozen output holding the stolen value, unlockable only
    // by the published colliding key, payable only to the aux address.
    let first = resolve_ref(state, &ev.suspect_refs[0]).expect("validated");
    let required_pubkey =
        PublicKey::from_bytes(&first.published_pubkey, &params).expect("published key validated");
    state.insert_frozen(
        origin,
        FrozenOutput {
            value: frozen_value,
            disputed_address: disputed,
            required_pubkey,
            destination: ev.auxiliary_address,
            origin_evidence: origin,
        },
    );

    EvidenceOutcome {
        origin_evidence: origin,
        disputed_address: disputed,
        suspect_txids: suspects.into_iter().collect(),
        removed_outpoints: to_remove.into_iter().collect(),
        reverted_outpoints: reverted,
        removed_value,
        reverted_value,
        frozen_value,
    }
}

/// Miner compensation for including evidence: the lower median of per-block
/// Standard-tx fee totals over the last up-to-six blocks.
pub fn evidence_miner_reward(chain: &ChainState) -> u64 {
    let blocks = chain.blocks();
    let n = blocks.len().min(6);
    if n == 0 {
        return 0;
    }
    let mut fees: Vec<u64> = blocks[blocks.len() - n..]
        .iter()
        .map(|b| chain.total_fees(b))
        .collect();
    fees.sort_unstable();
    fees[(n - 1) / 2]
}

/// Checks a RewardSpend: one input referencing a FrozenOutput by its origin
/// evidence txid (index 0), signed under the required pubkey, one output
/// paying the full value to the auxiliary address. Returns the origin.
pub fn validate_frozen_spend(
    state: &ChainState,
    tx: &Transaction,
) -> Result<TxId, FrozenSpendError> {
    if tx.kind != TxKind::RewardSpend {
        return Err(FrozenSpendError::Malformed("kind is not RewardSpend"));
    }
    let [input] = tx.inputs.as_slice() else {
        return Err(FrozenSpendError::Malformed("expected exactly one input"));
    };
    let [output] = tx.outputs.as_slice() else {
        return Err(FrozenSpendError::Malformed("expected exactly one output"));
    };
    let origin = input.outpoint.txid;
    if input.outpoint.index != 0 {
        return Err(FrozenSpendError::UnknownFrozen(origin));
    }
    let frozen = state
        .frozen_get(&origin)
        .ok_or(FrozenSpendError::UnknownFrozen(origin))?;
    let InputWitness::P2pkh { pubkey, signature } = &input.witness else {
        return Err(FrozenSpendError::Malformed("expected a key witness"));
    };
    let params = state.params();
    if *pubkey != frozen.required_pubkey.serialize() {
        return Err(FrozenSpendError::BadSignature);
    }
    let sig = Signature::from_bytes(signature, params)
        .map_err(|_| FrozenSpendError::BadSignature)?;
    if !crate::crypto::verify(&frozen.required_pubkey, &sighash(tx), &sig, params) {
        return Err(FrozenSpendError::BadSignature);
    }
    if output.lock != Lock::P2pkh(frozen.destination) {
        return Err(FrozenSpendError::WrongDestination);
    }
    if output.value != frozen.value {
        return Err(FrozenSpendError::PartialSpend {
            expected: frozen.value,
            actual: output.value,
        });
    }
    Ok(origin)
}

/// Builds a signed RewardSpend of the frozen output from `origin` to its
/// destination, signed with `sk`. Validation decides whether `sk` is the
/// right key.
pub fn build_frozen_spend(
    state: &ChainState,
    origin: &TxId,
    sk: &SecretKey,
) -> Result<Transaction, FrozenSpendError> {
    build_frozen_spend_to(state, origin, sk, None, None)
}

/// Same, but lets tests override the destination or amount.
pub fn build_frozen_spend_to(
    state: &ChainState,
    origin: &TxId,
    sk: &SecretKey,
    destination: Option<AddrHash>,
    value: Option<u64>,
) -> Result<Transaction, FrozenSpendError> {
    let frozen = state
        .frozen_get(origin)
        .ok_or(FrozenSpendError::UnknownFrozen(*origin))?;
    let params = state.params();
    let pk = derive_pubkey(sk, params)
        .map_err(|_| FrozenSpendError::Malformed("key width mismatch"))?;
    let output = TxOutput::p2pkh(
        value.unwrap_or(frozen.value),
        destination.unwrap_or(frozen.destination),
    );
    let mut tx = Transaction::reward_spend(
        crate::ledger::TxInput {
            outpoint: OutPoint::new(*origin, 0),
            witness: InputWitness::P2pkh {
                pubkey: pk.serialize(),
                signature: Vec::new(),
            },
        },
        output,
    );
    let msg = sighash(&tx);
    if let InputWitness::P2pkh { signature, .. } = &mut tx.inputs[0].witness {
        *signature = crate::crypto::sign(sk, &msg, params).serialize();
    }
    Ok(tx)
}
