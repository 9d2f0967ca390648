//! Minimal UTXO chain: P2PKH-style transactions, linear block application
//! (no proof-of-work, no reorgs), the six-block spend timeout, and byte-exact
//! binary serialization so chains can be written, exchanged and replayed.
//!
//! State transitions are functional: `append_block` returns a new
//! `ChainState`, leaving the input untouched on any error.

use crate::crypto::{
    pipeline_hash, sha256d, verify, AddrHash, ModelParams, PublicKey, Signature,
};
use crate::evidence::{self, EvidenceError, EvidenceOutcome, EvidenceTransaction, FrozenOutput,
    FrozenSpendError};
use crate::script::{self, ExecContext, ExecOutcome, RejectReason, Script};
use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

pub const DEFAULT_SUBSIDY: u64 = 50;
pub const DEFAULT_TIMEOUT: u64 = 6;

/// Largest value an output may carry (63 bits, so sums of realistic chains
/// stay far from u64 overflow).
pub const MAX_VALUE: u64 = i64::MAX as u64;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TxId(pub [u8; 32]);

impl TxId {
    pub const ZERO: TxId = TxId([0; 32]);

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TxId({})", self.to_hex())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockId(pub [u8; 32]);

impl BlockId {
    pub const ZERO: BlockId = BlockId([0; 32]);

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BlockId({})", self.to_hex())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OutPoint {
    pub txid: TxId,
    pub index: u32,
}

impl OutPoint {
    pub fn new(txid: TxId, index: u32) -> Self {
        OutPoint { txid, index }
    }
}

impl fmt::Display for OutPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.txid.to_hex(), self.index)
    }
}

/// What an output demands of its spender.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Lock {
    /// Standard pay-to-pubkey-hash: reveal a pubkey hashing to this address
    /// plus a valid signature.
    P2pkh(AddrHash),
    /// Arbitrary script lock (used for the collision-bounty output).
    Script(Script),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxOutput {
    pub value: u64,
    pub lock: Lock,
}

impl TxOutput {
    pub fn p2pkh(value: u64, addr: AddrHash) -> Self {
        TxOutput {
            value,
            lock: Lock::P2pkh(addr),
        }
    }
}

/// Spending authorization. P2PKH inputs carry raw pubkey/signature bytes
/// (typed checks happen at validation); script inputs carry the stack items
/// pushed before the lock script runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InputWitness {
    P2pkh { pubkey: Vec<u8>, signature: Vec<u8> },
    Script { items: Vec<Vec<u8>> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxInput {
    pub outpoint: OutPoint,
    pub witness: InputWitness,
}

impl TxInput {
    /// The P2PKH pubkey bytes, if this input is of that shape.
    pub fn p2pkh_pubkey(&self) -> Option<&[u8]> {
        match &self.witness {
            InputWitness::P2pkh { pubkey, .. } => Some(pubkey),
            InputWitness::Script { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxKind {
    Standard,
    Coinbase,
    Evidence,
    RewardSpend,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub kind: TxKind,
    /// Free uniquifier covered by the txid. Block builders set it to the
    /// height for coinbases, so equal-valued coinbases in different blocks
    /// do not collide on txid.
    pub nonce: u64,
    pub inputs: Vec<TxInput>,
    pub outputs: Vec<TxOutput>,
    pub evidence: Option<EvidenceTransaction>,
}

impl Transaction {
    pub fn standard(inputs: Vec<TxInput>, outputs: Vec<TxOutput>) -> Self {
        Transaction {
            kind: TxKind::Standard,
            nonce: 0,
            inputs,
            outputs,
            evidence: None,
        }
    }

    pub fn coinbase(height: u64, outputs: Vec<TxOutput>) -> Self {
        Transaction {
            kind: TxKind::Coinbase,
            nonce: height,
            inputs: Vec::new(),
            outputs,
            evidence: None,
        }
    }

    pub fn evidence_carrier(ev: EvidenceTransaction) -> Self {
        Transaction {
            kind: TxKind::Evidence,
            nonce: 0,
            inputs: Vec::new(),
            outputs: Vec::new(),
            evidence: Some(ev),
        }
    }

    pub fn reward_spend(input: TxInput, output: TxOutput) -> Self {
        Transaction {
            kind: TxKind::RewardSpend,
            nonce: 0,
            inputs: vec![input],
            outputs: vec![output],
            evidence: None,
        }
    }

    pub fn serialize(&self) -> Vec<u8> {
        serialize_tx(self, false)
    }

    pub fn txid(&self) -> TxId {
        TxId(sha256d(&self.serialize()))
    }
}

/// The canonical serialization with every signature-bearing witness field
/// blanked: the message that signatures commit to.
pub fn sighash(tx: &Transaction) -> Vec<u8> {
    serialize_tx(tx, true)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub height: u64,
    pub prev_id: BlockId,
    pub transactions: Vec<Transaction>,
    pub block_id: BlockId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainConfig {
    pub subsidy: u64,
    pub timeout: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            subsidy: DEFAULT_SUBSIDY,
            timeout: DEFAULT_TIMEOUT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputStatus {
    Unspent,
    Spent,
    /// Taken out of circulation by evidence application.
    Removed,
}

/// Every output ever created stays in the catalog with its confirmation
/// height; only the status changes. Evidence rollback and fee accounting
/// depend on spent/removed outputs remaining addressable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputRecord {
    pub output: TxOutput,
    pub height: u64,
    pub status: OutputStatus,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ValidationError {
    #[error("malformed transaction: {0}")]
    Malformed(&'static str),
    #[error("duplicate input {0}")]
    DuplicateInput(OutPoint),
    #[error("input {0} not in utxo")]
    MissingUtxo(OutPoint),
    #[error("input {0}: witness kind does not match the output lock")]
    WitnessKindMismatch(OutPoint),
    #[error("input {0}: pubkey does not hash to the locked address")]
    PubkeyHashMismatch(OutPoint),
    #[error("input {0}: signature check failed")]
    BadSignature(OutPoint),
    #[error("input {outpoint}: confirmed {actual} blocks ago, need {needed}")]
    TimeoutNotElapsed {
        outpoint: OutPoint,
        needed: u64,
        actual: u64,
    },
    #[error("input {0}: script rejected ({1})")]
    ScriptRejected(OutPoint, RejectReason),
    #[error("outputs {output} exceed inputs {input}")]
    ValueOverspend { input: u64, output: u64 },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BlockError {
    #[error("block has no transactions")]
    EmptyBlock,
    #[error("first transaction is not a coinbase")]
    FirstNotCoinbase,
    #[error("coinbase outside position 0")]
    NonFirstCoinbase,
    #[error("coinbase claims {claimed}, allowance {allowed}")]
    CoinbaseOverclaim { claimed: u64, allowed: u64 },
    #[error("duplicate txid {}", .0.to_hex())]
    DuplicateTxId(TxId),
    #[error("malformed block: {0}")]
    Malformed(&'static str),
    #[error("tx {index}: {source}")]
    Tx {
        index: usize,
        source: ValidationError,
    },
    #[error("evidence tx {index}: {source}")]
    Evidence { index: usize, source: EvidenceError },
    #[error("frozen spend tx {index}: {source}")]
    FrozenSpend {
        index: usize,
        source: FrozenSpendError,
    },
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("source {0} not in utxo")]
    MissingUtxo(OutPoint),
    #[error("no key provided matches the address of source {0}")]
    KeyMismatch(OutPoint),
    #[error("destinations total {output} exceed sources total {input}")]
    Overspend { input: u64, output: u64 },
}

/// Per-block application summary, enough to check value conservation
/// externally: utxo+frozen delta = coinbase_value - fees - removed_value
/// + reverted_value + frozen_created (reward spends cancel).
#[derive(Debug, Clone)]
pub struct BlockReceipt {
    pub height: u64,
    pub block_id: BlockId,
    pub coinbase_value: u64,
    pub fees: u64,
    pub evidence_outcomes: Vec<EvidenceOutcome>,
    pub frozen_spent_value: u64,
}

/// Full chain state: the block list plus the output catalog, frozen funds
/// and a txid index. Cloning is cheap at simulation scale, which keeps
/// `append_block` transactional.
#[derive(Debug, Clone)]
pub struct ChainState {
    params: ModelParams,
    config: ChainConfig,
    blocks: Vec<Block>,
    records: BTreeMap<OutPoint, OutputRecord>,
    frozen: BTreeMap<TxId, FrozenOutput>,
    tx_index: BTreeMap<TxId, (u64, u32)>,
}

impl ChainState {
    pub fn new(params: ModelParams, config: ChainConfig) -> Self {
        ChainState {
            params,
            config,
            blocks: Vec::new(),
            records: BTreeMap::new(),
            frozen: BTreeMap::new(),
            tx_index: BTreeMap::new(),
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn config(&self) -> &ChainConfig {
        &self.config
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn height(&self) -> Option<u64> {
        self.blocks.last().map(|b| b.height)
    }

    pub fn next_height(&self) -> u64 {
        self.blocks.len() as u64
    }

    pub fn tip_id(&self) -> BlockId {
        self.blocks.last().map(|b| b.block_id).unwrap_or(BlockId::ZERO)
    }

    /// The unspent output under `op`, if any.
    pub fn utxo_get(&self, op: &OutPoint) -> Option<&OutputRecord> {
        self.records
            .get(op)
            .filter(|r| r.status == OutputStatus::Unspent)
    }

    /// Every output ever recorded, regardless of status.
    pub fn record(&self, op: &OutPoint) -> Option<&OutputRecord> {
        self.records.get(op)
    }

    pub fn utxo_iter(&self) -> impl Iterator<Item = (&OutPoint, &OutputRecord)> {
        self.records
            .iter()
            .filter(|(_, r)| r.status == OutputStatus::Unspent)
    }

    pub fn utxo_value_total(&self) -> u64 {
        self.utxo_iter().map(|(_, r)| r.output.value).sum()
    }

    pub fn utxo_count(&self) -> usize {
        self.utxo_iter().count()
    }

    pub fn frozen_iter(&self) -> impl Iterator<Item = (&TxId, &FrozenOutput)> {
        self.frozen.iter()
    }

    pub fn frozen_get(&self, origin: &TxId) -> Option<&FrozenOutput> {
        self.frozen.get(origin)
    }

    pub fn frozen_value_total(&self) -> u64 {
        self.frozen.values().map(|f| f.value).sum()
    }

    pub fn transaction(&self, txid: &TxId) -> Option<(&Transaction, u64)> {
        let &(height, index) = self.tx_index.get(txid)?;
        let tx = &self.blocks[height as usize].transactions[index as usize];
        Some((tx, height))
    }

    pub(crate) fn set_status(&mut self, op: &OutPoint, status: OutputStatus) {
        if let Some(rec) = self.records.get_mut(op) {
            rec.status = status;
        }
    }

    pub(crate) fn insert_frozen(&mut self, origin: TxId, frozen: FrozenOutput) {
        self.frozen.insert(origin, frozen);
    }

    pub(crate) fn remove_frozen(&mut self, origin: &TxId) -> Option<FrozenOutput> {
        self.frozen.remove(origin)
    }

    /// Validates a Standard transaction against this state at `at_height`
    /// (the height of the block it would enter).
    pub fn validate_transaction(
        &self,
        tx: &Transaction,
        at_height: u64,
    ) -> Result<(), ValidationError> {
        self.validate_standard(tx, at_height, false)
    }

    /// Same rules, but P2PKH locks are checked by running the script engine
    /// on the equivalent P2PKH script instead of the native pubkey-hash and
    /// signature checks. Exists to cross-check the two paths.
    pub fn validate_transaction_via_script(
        &self,
        tx: &Transaction,
        at_height: u64,
    ) -> Result<(), ValidationError> {
        self.validate_standard(tx, at_height, true)
    }

    fn validate_standard(
        &self,
        tx: &Transaction,
        at_height: u64,
        p2pkh_via_script: bool,
    ) -> Result<(), ValidationError> {
        if tx.kind != TxKind::Standard {
            return Err(ValidationError::Malformed("kind is not Standard"));
        }
        if tx.inputs.is_empty() {
            return Err(ValidationError::Malformed("no inputs"));
        }
        if tx.outputs.is_empty() {
            return Err(ValidationError::Malformed("no outputs"));
        }
        check_outputs(&tx.outputs)?;
        let mut seen = std::collections::BTreeSet::new();
        for input in &tx.inputs {
            if !seen.insert(input.outpoint) {
                return Err(ValidationError::DuplicateInput(input.outpoint));
            }
        }
        let msg = sighash(tx);
        let mut in_sum: u128 = 0;
        for input in &tx.inputs {
            let rec = self
                .utxo_get(&input.outpoint)
                .ok_or(ValidationError::MissingUtxo(input.outpoint))?;
            let depth = at_height.saturating_sub(rec.height);
            if depth < self.config.timeout {
                return Err(ValidationError::TimeoutNotElapsed {
                    outpoint: input.outpoint,
                    needed: self.config.timeout,
                    actual: depth,
                });
            }
            self.check_witness(input, &rec.output.lock, &msg, p2pkh_via_script)?;
            in_sum += rec.output.value as u128;
        }
        let out_sum: u128 = tx.outputs.iter().map(|o| o.value as u128).sum();
        if out_sum > in_sum {
            return Err(ValidationError::ValueOverspend {
                input: in_sum as u64,
                output: out_sum as u64,
            });
        }
        Ok(())
    }

    fn check_witness(
        &self,
        input: &TxInput,
        lock: &Lock,
        msg: &[u8],
        p2pkh_via_script: bool,
    ) -> Result<(), ValidationError> {
        let op = input.outpoint;
        match (lock, &input.witness) {
            (Lock::P2pkh(addr), InputWitness::P2pkh { pubkey, signature }) => {
                if p2pkh_via_script {
                    let lock_script = script::p2pkh_script_template(addr);
                    let witness =
                        script::witness_script(&[signature.clone(), pubkey.clone()]);
                    return self.run_script(&op, &witness, &lock_script, msg);
                }
                if pipeline_hash(pubkey, &self.params) != *addr {
                    return Err(ValidationError::PubkeyHashMismatch(op));
                }
                let pk = PublicKey::from_bytes(pubkey, &self.params)
                    .map_err(|_| ValidationError::BadSignature(op))?;
                let sig = Signature::from_bytes(signature, &self.params)
                    .map_err(|_| ValidationError::BadSignature(op))?;
                if !verify(&pk, msg, &sig, &self.params) {
                    return Err(ValidationError::BadSignature(op));
                }
                Ok(())
            }
            (Lock::Script(lock_script), InputWitness::Script { items }) => {
                let witness = script::witness_script(items);
                self.run_script(&op, &witness, lock_script, msg)
            }
            _ => Err(ValidationError::WitnessKindMismatch(op)),
        }
    }

    fn run_script(
        &self,
        op: &OutPoint,
        witness: &Script,
        lock: &Script,
        msg: &[u8],
    ) -> Result<(), ValidationError> {
        let ctx = ExecContext {
            sighash_msg: msg,
            params: &self.params,
        };
        match script::execute(witness, lock, &ctx) {
            ExecOutcome::Accept => Ok(()),
            ExecOutcome::Reject(reason) => Err(ValidationError::ScriptRejected(*op, reason)),
        }
    }

    /// Appends a block of `txs`, returning the new state and a receipt.
    /// The coinbase must come first and claim at most subsidy + fees
    /// (+ the evidence miner reward when the block carries evidence).
    pub fn append_block(
        &self,
        txs: Vec<Transaction>,
    ) -> Result<(ChainState, BlockReceipt), BlockError> {
        let mut next = self.clone();
        let receipt = next.apply_block(txs)?;
        Ok((next, receipt))
    }

    fn apply_block(&mut self, txs: Vec<Transaction>) -> Result<BlockReceipt, BlockError> {
        if txs.is_empty() {
            return Err(BlockError::EmptyBlock);
        }
        if txs[0].kind != TxKind::Coinbase {
            return Err(BlockError::FirstNotCoinbase);
        }
        let height = self.next_height();
        let prev_id = self.tip_id();
        // The miner-reward window covers blocks strictly before this one.
        let evidence_reward = evidence::evidence_miner_reward(self);

        let mut staged: Vec<(OutPoint, TxOutput)> = Vec::new();
        let mut fees: u64 = 0;
        let mut coinbase_value: u64 = 0;
        let mut has_evidence = false;
        let mut evidence_outcomes = Vec::new();
        let mut frozen_spent_value: u64 = 0;

        for (i, tx) in txs.iter().enumerate() {
            let txid = tx.txid();
            if self.tx_index.contains_key(&txid) {
                return Err(BlockError::DuplicateTxId(txid));
            }
            match tx.kind {
                TxKind::Coinbase => {
                    if i != 0 {
                        return Err(BlockError::NonFirstCoinbase);
                    }
                    if !tx.inputs.is_empty() {
                        return Err(BlockError::Malformed("coinbase has inputs"));
                    }
                    check_outputs(&tx.outputs)
                        .map_err(|source| BlockError::Tx { index: i, source })?;
                    coinbase_value = tx.outputs.iter().map(|o| o.value).sum();
                }
                TxKind::Standard => {
                    self.validate_transaction(tx, height)
                        .map_err(|source| BlockError::Tx { index: i, source })?;
                    let mut fee: u64 = 0;
                    for input in &tx.inputs {
                        fee += self.records[&input.outpoint].output.value;
                        self.set_status(&input.outpoint, OutputStatus::Spent);
                    }
                    fee -= tx.outputs.iter().map(|o| o.value).sum::<u64>();
                    fees += fee;
                }
                TxKind::Evidence => {
                    let outcome = evidence::validate_and_apply_evidence(self, tx, txid)
                        .map_err(|source| BlockError::Evidence { index: i, source })?;
                    has_evidence = true;
                    evidence_outcomes.push(outcome);
                }
                TxKind::RewardSpend => {
                    let origin = evidence::validate_frozen_spend(self, tx)
                        .map_err(|source| BlockError::FrozenSpend { index: i, source })?;
                    let frozen = self.remove_frozen(&origin).expect("validated above");
                    frozen_spent_value += frozen.value;
                }
            }
            for (j, output) in tx.outputs.iter().enumerate() {
                staged.push((OutPoint::new(txid, j as u32), output.clone()));
            }
            self.tx_index.insert(txid, (height, i as u32));
        }

        let allowed = self.config.subsidy + fees + if has_evidence { evidence_reward } else { 0 };
        if coinbase_value > allowed {
            return Err(BlockError::CoinbaseOverclaim {
                claimed: coinbase_value,
                allowed,
            });
        }

        // New outputs become visible only after the whole block applies;
        // same-block spends of them fail above with MissingUtxo.
        for (op, output) in staged {
            self.records.insert(
                op,
                OutputRecord {
                    output,
                    height,
                    status: OutputStatus::Unspent,
                },
            );
        }

        let mut block = Block {
            height,
            prev_id,
            transactions: txs,
            block_id: BlockId::ZERO,
        };
        block.block_id = BlockId(sha256d(&serialize_block_body(&block)));
        let block_id = block.block_id;
        self.blocks.push(block);

        Ok(BlockReceipt {
            height,
            block_id,
            coinbase_value,
            fees,
            evidence_outcomes,
            frozen_spent_value,
        })
    }

    /// Sum of fees of the Standard transactions in `block` (evidence and
    /// reward-spend transactions carry no fee by construction).
    pub fn total_fees(&self, block: &Block) -> u64 {
        let mut fees: u64 = 0;
        for tx in &block.transactions {
            if tx.kind != TxKind::Standard {
                continue;
            }
            let in_sum: u64 = tx
                .inputs
                .iter()
                .map(|i| self.records[&i.outpoint].output.value)
                .sum();
            let out_sum: u64 = tx.outputs.iter().map(|o| o.value).sum();
            fees += in_sum - out_sum;
        }
        fees
    }

    /// Builds and signs a Standard transaction spending `sources` to
    /// `destinations`; each source's key must appear in `keys`.
    pub fn build_transaction(
        &self,
        keys: &[crate::crypto::SecretKey],
        sources: &[OutPoint],
        destinations: &[(AddrHash, u64)],
    ) -> Result<Transaction, BuildError> {
        let mut key_for_source = Vec::with_capacity(sources.len());
        let mut in_sum: u64 = 0;
        for op in sources {
            let rec = self.utxo_get(op).ok_or(BuildError::MissingUtxo(*op))?;
            let addr = match &rec.output.lock {
                Lock::P2pkh(addr) => *addr,
                Lock::Script(_) => return Err(BuildError::KeyMismatch(*op)),
            };
            let key = keys
                .iter()
                .find(|sk| {
                    crate::crypto::derive_pubkey(sk, &self.params)
                        .map(|pk| pipeline_hash(&pk.serialize(), &self.params) == addr)
                        .unwrap_or(false)
                })
                .ok_or(BuildError::KeyMismatch(*op))?;
            key_for_source.push(*key);
            in_sum += rec.output.value;
        }
        let out_sum: u64 = destinations.iter().map(|(_, v)| v).sum();
        if out_sum > in_sum {
            return Err(BuildError::Overspend {
                input: in_sum,
                output: out_sum,
            });
        }
        let outputs = destinations
            .iter()
            .map(|(addr, value)| TxOutput::p2pkh(*value, *addr))
            .collect();
        let inputs = sources
            .iter()
            .zip(&key_for_source)
            .map(|(op, sk)| TxInput {
                outpoint: *op,
                witness: InputWitness::P2pkh {
                    pubkey: crate::crypto::derive_pubkey(sk, &self.params)
                        .expect("width checked via address match")
                        .serialize(),
                    signature: Vec::new(),
                },
            })
            .collect();
        let mut tx = Transaction::standard(inputs, outputs);
        let msg = sighash(&tx);
        for (input, sk) in tx.inputs.iter_mut().zip(&key_for_source) {
            if let InputWitness::P2pkh { signature, .. } = &mut input.witness {
                *signature = crate::crypto::sign(sk, &msg, &self.params).serialize();
            }
        }
        Ok(tx)
    }

    /// Deterministic JSON dump of the spendable state: utxo entries, frozen
    /// entries, and the tip height.
    pub fn state_dump(&self) -> serde_json::Value {
        let utxo: Vec<serde_json::Value> = self
            .utxo_iter()
            .map(|(op, rec)| {
                serde_json::json!({
                    "txid": op.txid.to_hex(),
                    "index": op.index,
                    "value": rec.output.value,
                    "lock": lock_json(&rec.output.lock),
                    "height": rec.height,
                })
            })
            .collect();
        let frozen: Vec<serde_json::Value> = self
            .frozen
            .iter()
            .map(|(origin, f)| {
                serde_json::json!({
                    "origin_evidence": origin.to_hex(),
                    "value": f.value,
                    "disputed_address": f.disputed_address.to_hex(),
                    "destination": f.destination.to_hex(),
                })
            })
            .collect();
        serde_json::json!({
            "height": self.height(),
            "utxo": utxo,
            "frozen": frozen,
        })
    }
}

fn lock_json(lock: &Lock) -> serde_json::Value {
    match lock {
        Lock::P2pkh(addr) => serde_json::json!({ "p2pkh": addr.to_hex() }),
        Lock::Script(s) => serde_json::json!({ "script": s.to_string() }),
    }
}

fn check_outputs(outputs: &[TxOutput]) -> Result<(), ValidationError> {
    for o in outputs {
        if o.value > MAX_VALUE {
            return Err(ValidationError::Malformed("output value exceeds 63 bits"));
        }
    }
    Ok(())
}

// ---- canonical binary serialization (little-endian integers) ----

fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_bytes32(out: &mut Vec<u8>, v: &[u8; 32]) {
    out.extend_from_slice(v);
}

fn put_blob(out: &mut Vec<u8>, data: &[u8]) {
    put_u32(out, data.len() as u32);
    out.extend_from_slice(data);
}

fn kind_tag(kind: TxKind) -> u8 {
    match kind {
        TxKind::Standard => 0,
        TxKind::Coinbase => 1,
        TxKind::Evidence => 2,
        TxKind::RewardSpend => 3,
    }
}

fn serialize_tx(tx: &Transaction, blank_sigs: bool) -> Vec<u8> {
    let mut out = Vec::new();
    out.push(kind_tag(tx.kind));
    put_u64(&mut out, tx.nonce);
    put_u32(&mut out, tx.inputs.len() as u32);
    for input in &tx.inputs {
        put_bytes32(&mut out, &input.outpoint.txid.0);
        put_u32(&mut out, input.outpoint.index);
        match &input.witness {
            InputWitness::P2pkh { pubkey, signature } => {
                out.push(0);
                put_blob(&mut out, pubkey);
                if blank_sigs {
                    put_blob(&mut out, &[]);
                } else {
                    put_blob(&mut out, signature);
                }
            }
            InputWitness::Script { items } => {
                out.push(1);
                if blank_sigs {
                    put_u32(&mut out, 0);
                } else {
                    put_u32(&mut out, items.len() as u32);
                    for item in items {
                        put_blob(&mut out, item);
                    }
                }
            }
        }
    }
    put_u32(&mut out, tx.outputs.len() as u32);
    for output in &tx.outputs {
        put_u64(&mut out, output.value);
        match &output.lock {
            Lock::P2pkh(addr) => {
                out.push(0);
                let bytes = addr.as_bytes();
                put_u16(&mut out, bytes.len() as u16);
                out.extend_from_slice(bytes);
            }
            Lock::Script(script) => {
                out.push(1);
                put_blob(&mut out, &script.to_bytes());
            }
        }
    }
    match &tx.evidence {
        None => out.push(0),
        Some(ev) => {
            out.push(1);
            put_u32(&mut out, ev.suspect_refs.len() as u32);
            for r in &ev.suspect_refs {
                put_bytes32(&mut out, &r.txid.0);
                put_u32(&mut out, r.input_index);
            }
            put_blob(&mut out, &ev.alt_pubkey.serialize());
            let aux = ev.auxiliary_address.as_bytes();
            put_u16(&mut out, aux.len() as u16);
            out.extend_from_slice(aux);
        }
    }
    out
}

fn serialize_block_body(block: &Block) -> Vec<u8> {
    let mut out = Vec::new();
    put_u64(&mut out, block.height);
    put_bytes32(&mut out, &block.prev_id.0);
    put_u32(&mut out, block.transactions.len() as u32);
    for tx in &block.transactions {
        put_blob(&mut out, &tx.serialize());
    }
    out
}

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("unexpected end of data")]
    UnexpectedEof,
    #[error("trailing bytes after structure")]
    TrailingBytes,
    #[error("bad tag {0:#04x} for {1}")]
    BadTag(u8, &'static str),
    #[error("declared length {0} exceeds remaining data")]
    Oversize(u64),
    #[error("script: {0}")]
    Script(#[from] crate::script::ParseError),
    #[error("crypto: {0}")]
    Crypto(#[from] crate::crypto::CryptoError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("block {0}: stored id does not match serialized body")]
    BlockIdMismatch(u64),
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(data: &'a [u8]) -> Self {
        Reader { data, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.pos + n > self.data.len() {
            return Err(CodecError::UnexpectedEof);
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CodecError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn bytes32(&mut self) -> Result<[u8; 32], CodecError> {
        Ok(self.take(32)?.try_into().unwrap())
    }

    fn blob(&mut self) -> Result<Vec<u8>, CodecError> {
        let len = self.u32()? as usize;
        if len > self.data.len() - self.pos {
            return Err(CodecError::Oversize(len as u64));
        }
        Ok(self.take(len)?.to_vec())
    }

    fn done(&self) -> Result<(), CodecError> {
        if self.pos != self.data.len() {
            return Err(CodecError::TrailingBytes);
        }
        Ok(())
    }
}

pub fn deserialize_tx(data: &[u8], params: &ModelParams) -> Result<Transaction, CodecError> {
    let mut r = Reader::new(data);
    let tx = read_tx(&mut r, params)?;
    r.done()?;
    Ok(tx)
}

fn read_tx(r: &mut Reader, params: &ModelParams) -> Result<Transaction, CodecError> {
    let kind = match r.u8()? {
        0 => TxKind::Standard,
        1 => TxKind::Coinbase,
        2 => TxKind::Evidence,
        3 => TxKind::RewardSpend,
        t => return Err(CodecError::BadTag(t, "tx kind")),
    };
    let nonce = r.u64()?;
    let n_inputs = r.u32()? as usize;
    let mut inputs = Vec::with_capacity(n_inputs.min(1024));
    for _ in 0..n_inputs {
        let txid = TxId(r.bytes32()?);
        let index = r.u32()?;
        let witness = match r.u8()? {
            0 => InputWitness::P2pkh {
                pubkey: r.blob()?,
                signature: r.blob()?,
            },
            1 => {
                let n = r.u32()? as usize;
                let mut items = Vec::with_capacity(n.min(1024));
                for _ in 0..n {
                    items.push(r.blob()?);
                }
                InputWitness::Script { items }
            }
            t => return Err(CodecError::BadTag(t, "witness")),
        };
        inputs.push(TxInput {
            outpoint: OutPoint::new(txid, index),
            witness,
        });
    }
    let n_outputs = r.u32()? as usize;
    let mut outputs = Vec::with_capacity(n_outputs.min(1024));
    for _ in 0..n_outputs {
        let value = r.u64()?;
        let lock = match r.u8()? {
            0 => {
                let len = r.u16()? as usize;
                let bytes = r.take(len)?;
                Lock::P2pkh(AddrHash::from_bytes(bytes, params)?)
            }
            1 => Lock::Script(Script::from_bytes(&r.blob()?)?),
            t => return Err(CodecError::BadTag(t, "lock")),
        };
        outputs.push(TxOutput { value, lock });
    }
    let evidence = match r.u8()? {
        0 => None,
        1 => {
            let n_refs = r.u32()? as usize;
            let mut suspect_refs = Vec::with_capacity(n_refs.min(1024));
            for _ in 0..n_refs {
                let txid = TxId(r.bytes32()?);
                let input_index = r.u32()?;
                suspect_refs.push(evidence::SuspectRef { txid, input_index });
            }
            let alt_pubkey = PublicKey::from_bytes(&r.blob()?, params)?;
            let aux_len = r.u16()? as usize;
            let auxiliary_address = AddrHash::from_bytes(r.take(aux_len)?, params)?;
            Some(EvidenceTransaction {
                suspect_refs,
                alt_pubkey,
                auxiliary_address,
            })
        }
        t => return Err(CodecError::BadTag(t, "evidence flag")),
    };
    Ok(Transaction {
        kind,
        nonce,
        inputs,
        outputs,
        evidence,
    })
}

pub fn serialize_block(block: &Block) -> Vec<u8> {
    serialize_block_body(block)
}

pub fn deserialize_block(data: &[u8], params: &ModelParams) -> Result<Block, CodecError> {
    let mut r = Reader::new(data);
    let height = r.u64()?;
    let prev_id = BlockId(r.bytes32()?);
    let n_txs = r.u32()? as usize;
    let mut transactions = Vec::with_capacity(n_txs.min(1024));
    for _ in 0..n_txs {
        let blob = r.blob()?;
        transactions.push(deserialize_tx(&blob, params)?);
    }
    r.done()?;
    let mut block = Block {
        height,
        prev_id,
        transactions,
        block_id: BlockId::ZERO,
    };
    block.block_id = BlockId(sha256d(&serialize_block_body(&block)));
    Ok(block)
}

/// Writes the chain file: each block as a little-endian u32 length prefix
/// plus the block body.
pub fn write_chain(path: &Path, blocks: &[Block]) -> Result<(), CodecError> {
    let mut f = std::fs::File::create(path)?;
    for block in blocks {
        let body = serialize_block_body(block);
        f.write_all(&(body.len() as u32).to_le_bytes())?;
        f.write_all(&body)?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_chain(path: &Path, params: &ModelParams) -> Result<Vec<Block>, CodecError> {
    let mut data = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut data)?;
    let mut r = Reader::new(&data);
    let mut blocks = Vec::new();
    while r.pos < data.len() {
        let body = r.blob()?;
        blocks.push(deserialize_block(&body, params)?);
    }
    Ok(blocks)
}

/// Rebuilds a ChainState by re-applying every block's transactions through
/// the normal validation path, checking stored heights, parent links and ids
/// along the way.
pub fn replay(
    params: ModelParams,
    config: ChainConfig,
    blocks: &[Block],
) -> Result<ChainState, ReplayError> {
    let mut state = ChainState::new(params, config);
    for block in blocks {
        if block.height != state.next_height() {
            return Err(ReplayError::HeightMismatch {
                expected: state.next_height(),
                actual: block.height,
            });
        }
        if block.prev_id != state.tip_id() {
            return Err(ReplayError::ParentMismatch(block.height));
        }
        let (next, receipt) = state
            .append_block(block.transactions.clone())
            .map_err(|source| ReplayError::Block {
                height: block.height,
                source,
            })?;
        if receipt.block_id != block.block_id {
            return Err(ReplayError::IdMismatch(block.height));
        }
        state = next;
    }
    Ok(state)
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("block height {actual}, expected {expected}")]
    HeightMismatch { expected: u64, actual: u64 },
    #[error("block {0}: prev_id does not match tip")]
    ParentMismatch(u64),
    #[error("block {0}: recomputed id differs from stored id")]
    IdMismatch(u64),
    #[error("block {height}: {source}")]
    Block { height: u64, source: BlockError },
}
