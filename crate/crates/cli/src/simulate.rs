//! The end-to-end scenario: fund victim addresses at genesis, run the key
//! search against the live UTXO set, steal once the spend timeout passes,
//! then either punish the theft through the evidence rules or demonstrate
//! that without them the loot walks away. Optionally exercises the
//! collision-bounty contract from both sides.

use std::collections::BTreeSet;
use std::path::Path;

use bfsim_core::attacker::{
    craft_stealing_tx, random_key, search, AddrIndex, AttackConfig, AttackReport,
};
use bfsim_core::crypto::{
    derive_pubkey, encode_address, sign, AddrHash, ModelParams, SecretKey,
};
use bfsim_core::evidence::{build_frozen_spend, make_evidence, EvidenceError};
use bfsim_core::ledger::{
    read_chain, replay, sighash, write_chain, BlockReceipt, ChainState, InputWitness, Lock,
    OutPoint, Transaction, TxInput, TxOutput,
};
use bfsim_core::script::reward_script_template;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::ScenarioConfig;
use crate::{CliError, CommonArgs};

const THEFT_FEE: u64 = 1;

/// Everything a finished scenario leaves behind, before any file I/O.
pub struct ScenarioRun {
    pub run_report: Value,
    pub attack_report: Value,
    pub state: ChainState,
    /// Reward-script text and a standalone witness (signed over the empty
    /// message) for replay through the `script` subcommand.
    pub reward_artifacts: Option<(String, String)>,
}

fn scenario_rng(label: &str, seed: u64) -> ChaCha20Rng {
    let mut h = Sha256::new();
    h.update(label.as_bytes());
    h.update(seed.to_be_bytes());
    ChaCha20Rng::from_seed(h.finalize().into())
}

fn addr_of(sk: &SecretKey, p: &ModelParams) -> AddrHash {
    bfsim_core::crypto::derive_address(&derive_pubkey(sk, p).unwrap(), p).hash
}

/// Value entering minus value leaving a block must match the receipt.
fn check_conservation(
    before: &ChainState,
    after: &ChainState,
    receipt: &BlockReceipt,
) -> Result<(), CliError> {
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
    let expect = receipt.coinbase_value as i128 - receipt.fees as i128 - removed + reverted + frozen;
    if post - pre != expect {
        return Err(CliError::Invariant(format!(
            "value-conservation at height {}: moved {} but accounted {}",
            receipt.height,
            post - pre,
            expect
        )));
    }
    Ok(())
}

fn push_block(
    state: ChainState,
    txs: Vec<Transaction>,
) -> Result<(ChainState, BlockReceipt), CliError> {
    let before = state.clone();
    let (next, receipt) = state
        .append_block(txs)
        .map_err(|e| CliError::Invariant(format!("block-validation: {e}")))?;
    check_conservation(&before, &next, &receipt)?;
    Ok((next, receipt))
}

fn push_empty(state: ChainState) -> Result<ChainState, CliError> {
    let cb = Transaction::coinbase(state.next_height(), vec![]);
    Ok(push_block(state, vec![cb])?.0)
}

/// Builds the standard transaction that spends a bounty output with the
/// witness (sig, pk_signer, pk_other). The witness items are blanked from
/// the sighash, so signing the placeholder first is sound.
fn reward_claim(
    reward_op: OutPoint,
    value: u64,
    dest: AddrHash,
    signer: &SecretKey,
    pk_signer: Vec<u8>,
    pk_other: Vec<u8>,
    params: &ModelParams,
) -> Transaction {
    let mut tx = Transaction::standard(
        vec![TxInput {
            outpoint: reward_op,
            witness: InputWitness::Script { items: vec![] },
        }],
        vec![TxOutput::p2pkh(value, dest)],
    );
    let sig = sign(signer, &sighash(&tx), params).serialize();
    tx.inputs[0].witness = InputWitness::Script {
        items: vec![sig, pk_signer, pk_other],
    };
    tx
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioRun, CliError> {
    cfg.validate()?;
    let params = cfg.params()?;

    // Victim keys with pairwise distinct addresses, so the funded count is
    // exactly the index size the rate law sees.
    let mut rng = scenario_rng("simulate-victims", cfg.seed);
    let mut victims: Vec<SecretKey> = Vec::new();
    let mut victim_addrs = BTreeSet::new();
    while victims.len() < cfg.funding_count {
        let sk = random_key(&mut rng, &params);
        if victim_addrs.insert(addr_of(&sk, &params)) {
            victims.push(sk);
        }
    }
    let mut rng = scenario_rng("simulate-adversary", cfg.seed);
    let adversary = loop {
        let sk = random_key(&mut rng, &params);
        if !victim_addrs.contains(&addr_of(&sk, &params)) {
            break sk;
        }
    };
    let fence_addr = loop {
        let sk = random_key(&mut rng, &params);
        let addr = addr_of(&sk, &params);
        if !victim_addrs.contains(&addr) && addr != addr_of(&adversary, &params) {
            break addr;
        }
    };

    // Genesis block: one coinbase funding every victim, plus the optional
    // bounty output under the two-pubkey script.
    let mut outputs: Vec<TxOutput> = victims
        .iter()
        .map(|sk| TxOutput::p2pkh(cfg.funding_value, addr_of(sk, &params)))
        .collect();
    if let Some(value) = cfg.reward_output {
        outputs.push(TxOutput {
            value,
            lock: Lock::Script(reward_script_template()),
        });
    }
    let genesis_cb = Transaction::coinbase(0, outputs);
    let reward_op = cfg
        .reward_output
        .map(|_| OutPoint::new(genesis_cb.txid(), cfg.funding_count as u32));

    let mut state = ChainState::new(params, cfg.chain_config());
    state = push_block(state, vec![genesis_cb])?.0;
    for _ in 0..cfg.timeout {
        state = push_empty(state)?;
    }

    // The attack sees exactly what a real adversary would: the UTXO set.
    let index = AddrIndex::build(&state);
    let attack = search(
        &AttackConfig {
            strategy: cfg.strategy_spec()?,
            workers: cfg.workers,
            stop_after_hits: cfg.stop_after_hits,
        },
        &index,
        &params,
    )
    .map_err(|e| CliError::Config(e.to_string()))?;

    let mut theft_json = json!({ "occurred": false });
    let mut evidence_json = json!({
        "enabled": cfg.enable_evidence_consensus,
        "found": false,
        "reason": if attack.hits.is_empty() { "no-hits" } else { "no-theft" },
    });
    let mut reward_json = match cfg.reward_output {
        Some(value) => json!({ "funded": true, "value": value, "attempted": false }),
        None => json!({ "funded": false }),
    };
    let mut stolen_spent = false;
    let mut reward_artifacts = None;

    if let Some(hit) = attack.hits.first() {
        let hit_pk = derive_pubkey(&hit.secret_key, &params)
            .map_err(|e| CliError::Invariant(format!("hit-key-derivation: {e}")))?
            .serialize();
        let victim_sk = *victims
            .iter()
            .find(|sk| addr_of(sk, &params) == hit.address)
            .ok_or_else(|| CliError::Invariant("hit-outside-funded-set".to_string()))?;
        let victim_pk = derive_pubkey(&victim_sk, &params).unwrap().serialize();

        let outpoints: Vec<OutPoint> = hit.outpoints.iter().map(|(op, _)| *op).collect();
        let total: u64 = hit.outpoints.iter().map(|(_, v)| v).sum();
        let fee = if total > THEFT_FEE { THEFT_FEE } else { 0 };
        let steal = craft_stealing_tx(
            &hit.secret_key,
            &outpoints,
            addr_of(&adversary, &params),
            fee,
            &state,
        )
        .map_err(|e| CliError::Invariant(format!("steal-construction: {e}")))?;
        let steal_txid = steal.txid();
        let stolen_value = total - fee;

        let cb = Transaction::coinbase(state.next_height(), vec![]);
        state = push_block(state, vec![cb, steal])?.0;
        theft_json = json!({
            "occurred": true,
            "fee": fee,
            "stolen_value": stolen_value,
            "txid": steal_txid.to_hex(),
            "victim_address": encode_address(&hit.address, &params),
        });

        if cfg.enable_evidence_consensus {
            match make_evidence(&victim_sk, &state) {
                Ok(ev) => {
                    let carrier = Transaction::evidence_carrier(ev);
                    let carrier_txid = carrier.txid();
                    let cb = Transaction::coinbase(state.next_height(), vec![]);
                    let (next, receipt) = push_block(state, vec![cb, carrier])?;
                    state = next;
                    let outcome = receipt
                        .evidence_outcomes
                        .first()
                        .ok_or_else(|| {
                            CliError::Invariant("evidence-receipt-missing".to_string())
                        })?
                        .clone();

                    // Only the suspect's published key satisfies the frozen
                    // output's pubkey pin, and the destination is forced to
                    // the victim's auxiliary address.
                    let spend = build_frozen_spend(&state, &outcome.origin_evidence, &hit.secret_key)
                        .map_err(|e| {
                            CliError::Invariant(format!("frozen-spend-construction: {e}"))
                        })?;
                    let aux_addr = state
                        .frozen_get(&outcome.origin_evidence)
                        .map(|f| f.destination)
                        .ok_or_else(|| CliError::Invariant("frozen-output-missing".to_string()))?;
                    let cb = Transaction::coinbase(state.next_height(), vec![]);
                    state = push_block(state, vec![cb, spend])?.0;

                    evidence_json = json!({
                        "enabled": true,
                        "found": true,
                        "reason": Value::Null,
                        "txid": carrier_txid.to_hex(),
                        "auxiliary_address": encode_address(&aux_addr, &params),
                        "disputed_address": encode_address(&outcome.disputed_address, &params),
                        "frozen_value": outcome.frozen_value,
                        "frozen_spent": true,
                        "removed_value": outcome.removed_value,
                        "reverted_value": outcome.reverted_value,
                        "suspect_txids": outcome
                            .suspect_txids
                            .iter()
                            .map(|t| t.to_hex())
                            .collect::<Vec<_>>(),
                    });
                }
                Err(EvidenceError::KeyMatchesThief) => {
                    evidence_json = json!({
                        "enabled": true,
                        "found": false,
                        "reason": "key-matches-thief",
                    });
                }
                Err(e) => {
                    return Err(CliError::Invariant(format!(
                        "evidence-missing-after-theft: {e}"
                    )));
                }
            }
        } else {
            // No freeze rules: after another timeout the loot moves on.
            for _ in 0..cfg.timeout {
                state = push_empty(state)?;
            }
            let loot_op = OutPoint::new(steal_txid, 0);
            let respend = state
                .build_transaction(&[adversary], &[loot_op], &[(fence_addr, stolen_value)])
                .map_err(|e| CliError::Invariant(format!("loot-respend: {e}")))?;
            let cb = Transaction::coinbase(state.next_height(), vec![]);
            state = push_block(state, vec![cb, respend])?.0;
            stolen_spent = true;
        }

        // Bounty redemption needs a genuinely colliding pair; if the search
        // landed on the victim's own key there is nothing to present.
        if let (Some(op), Some(value)) = (reward_op, cfg.reward_output) {
            if hit_pk != victim_pk {
                let adv_claim = reward_claim(
                    op,
                    value,
                    addr_of(&adversary, &params),
                    &hit.secret_key,
                    hit_pk.clone(),
                    hit_pk.clone(),
                    &params,
                );
                let adversary_redeemed = state
                    .validate_transaction(&adv_claim, state.next_height())
                    .is_ok();

                let claim = reward_claim(
                    op,
                    value,
                    addr_of(&victim_sk, &params),
                    &victim_sk,
                    victim_pk.clone(),
                    hit_pk.clone(),
                    &params,
                );
                let victim_redeemed = state
                    .validate_transaction(&claim, state.next_height())
                    .is_ok();
                if victim_redeemed {
                    let cb = Transaction::coinbase(state.next_height(), vec![]);
                    state = push_block(state, vec![cb, claim])?.0;
                }
                reward_json = json!({
                    "funded": true,
                    "value": value,
                    "attempted": true,
                    "adversary_redeemed": adversary_redeemed,
                    "victim_redeemed": victim_redeemed,
                });

                let witness_text = format!(
                    "0x{} 0x{} 0x{}",
                    hex::encode(sign(&victim_sk, b"", &params).serialize()),
                    hex::encode(&victim_pk),
                    hex::encode(&hit_pk),
                );
                reward_artifacts =
                    Some((reward_script_template().to_string(), witness_text));
            } else {
                reward_json = json!({
                    "funded": true,
                    "value": value,
                    "attempted": false,
                    "reason": "key-matches-thief",
                });
            }
        }
    }

    let final_json = json!({
        "block_count": state.blocks().len(),
        "frozen_count": state.frozen_iter().count(),
        "frozen_value": state.frozen_value_total(),
        "utxo_count": state.utxo_count(),
        "utxo_value": state.utxo_value_total(),
    });

    let hit_keys: Vec<String> = attack.hits.iter().map(|h| h.secret_key.to_hex()).collect();
    let run_report = json!({
        "attack": {
            "hit_keys": hit_keys,
            "hits": attack.hits.len(),
            "index_size": attack.index_size,
            "strategy": cfg.strategy,
            "trials": attack.trials,
        },
        "config": cfg.to_canonical_json(),
        "config_hash": cfg.hash_hex(),
        "evidence": evidence_json,
        "final": final_json,
        "reward": reward_json,
        "stolen_spent": stolen_spent,
        "theft": theft_json,
        "version": env!("CARGO_PKG_VERSION"),
    });
    let attack_report = attack_report_json(&attack);

    Ok(ScenarioRun {
        run_report,
        attack_report,
        state,
        reward_artifacts,
    })
}

/// The attacker-facing report keeps the wall-clock rates and therefore is
/// not byte-stable across runs; everything else lives in the run report.
fn attack_report_json(report: &AttackReport) -> Value {
    json!({
        "hit_keys": report
            .hits
            .iter()
            .map(|h| h.secret_key.to_hex())
            .collect::<Vec<_>>(),
        "hits": report.hits.len(),
        "r0": report.r0,
        "r_empirical": report.r_empirical,
        "r_predicted": report.r_predicted,
        "trials": report.trials,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

pub fn cmd_simulate(args: &CommonArgs) -> Result<(), CliError> {
    let cfg = crate::load_config(args)?;
    let out = crate::out_dir(args);
    std::fs::create_dir_all(&out)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", out.display())))?;

    let run = run_scenario(&cfg)?;

    // Round-trip the chain through its binary form; the replayed state must
    // be indistinguishable from the live one.
    let chain_path = out.join("chain.bin");
    write_chain(&chain_path, run.state.blocks())
        .map_err(|e| CliError::Config(format!("cannot write chain: {e}")))?;
    let blocks = read_chain(&chain_path, run.state.params())
        .map_err(|e| CliError::Invariant(format!("chain-reread: {e}")))?;
    let replayed = replay(*run.state.params(), *run.state.config(), &blocks)
        .map_err(|e| CliError::Invariant(format!("replay-divergence: {e}")))?;
    if replayed.state_dump() != run.state.state_dump() {
        return Err(CliError::Invariant("replay-divergence: state dump differs".into()));
    }

    let mut report_text = serde_json::to_string_pretty(&run.run_report).unwrap();
    report_text.push('\n');
    write_file(&out.join("run_report.json"), &report_text)?;
    let mut attack_text = serde_json::to_string_pretty(&run.attack_report).unwrap();
    attack_text.push('\n');
    write_file(&out.join("attack_report.json"), &attack_text)?;
    if let Some((script_text, witness_text)) = &run.reward_artifacts {
        write_file(&out.join("reward_script.txt"), &format!("{script_text}\n"))?;
        write_file(&out.join("reward_witness.txt"), &format!("{witness_text}\n"))?;
    }

    let r = &run.run_report;
    println!("simulate: wrote {}", out.join("run_report.json").display());
    println!("  trials        {}", r["attack"]["trials"]);
    println!("  hits          {}", r["attack"]["hits"]);
    println!("  theft         {}", r["theft"]["occurred"]);
    println!("  evidence      {}", r["evidence"]["found"]);
    println!("  frozen_value  {}", r["evidence"]["frozen_value"]);
    println!("  stolen_spent  {}", r["stolen_spent"]);
    Ok(())
}
