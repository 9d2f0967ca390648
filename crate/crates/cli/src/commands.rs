//! The self-contained subcommands: bound evaluation, standalone script
//! execution, key derivation, and chain-file inspection.

use bfsim_core::analysis::{
    epsilon_bound, epsilon_exact, monte_carlo_evidence, optimize_k, MAX_ENUM_BITS,
};
use bfsim_core::crypto::{derive_address, derive_pubkey, keygen};
use bfsim_core::ledger::{read_chain, replay};
use bfsim_core::script::{execute_with_trace, parse_script, ExecContext, ExecOutcome};
use serde_json::{json, Value};

use crate::{AnalyzeArgs, ChainDumpArgs, CliError, CommonArgs, ScriptArgs};

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<(), CliError> {
    let cfg = crate::load_config(&args.common)?;
    let params = cfg.params()?;

    let fixed = epsilon_bound(&params, 0.36).map_err(|e| CliError::Config(e.to_string()))?;
    let (k_star, bound_at_star) = optimize_k(&params);
    let mut report = json!({
        "b_addr": params.b_addr(),
        "b_sec": params.b_sec(),
        "digest_bits": params.digest_bits(),
        "bound": fixed.to_json(),
        "k_star": k_star,
        "bound_at_k_star": bound_at_star,
    });

    println!(
        "analyze: b_sec={} b_addr={}",
        params.b_sec(),
        params.b_addr()
    );
    println!("  bound(k=0.36) = {:e}", fixed.bound_f64());
    println!("  k*            = {k_star:.6}");
    println!("  bound(k*)     = {bound_at_star:e}");

    if args.exact && params.b_sec() > MAX_ENUM_BITS {
        return Err(CliError::Config(format!(
            "exact enumeration needs b_sec <= {MAX_ENUM_BITS}, got {}",
            params.b_sec()
        )));
    }
    if params.b_sec() <= MAX_ENUM_BITS {
        let exact = epsilon_exact(&params).map_err(|e| CliError::Config(e.to_string()))?;
        println!("  exact         = {exact:e}");
        report["exact"] = json!(exact);
        if exact > fixed.bound_f64() {
            return Err(CliError::Invariant(format!(
                "exact-exceeds-bound: {exact:e} > {:e}",
                fixed.bound_f64()
            )));
        }
    }

    if let Some(trials) = args.mc_trials {
        let (evidence_ok, same_key) = monte_carlo_evidence(&params, trials, cfg.seed)
            .map_err(|e| CliError::Config(e.to_string()))?;
        println!("  mc            = {evidence_ok}/{trials} evidence, {same_key} same-key");
        report["monte_carlo"] = json!({
            "evidence_ok": evidence_ok,
            "same_key": same_key,
            "seed": cfg.seed,
            "trials": trials,
        });
    }

    if let Some(out) = &args.common.out {
        std::fs::create_dir_all(out)
            .map_err(|e| CliError::Config(format!("cannot create {}: {e}", out.display())))?;
        let path = out.join("analysis_report.json");
        let mut text = serde_json::to_string_pretty(&report).unwrap();
        text.push('\n');
        std::fs::write(&path, text)
            .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}

/// Long stack items (keys, signatures) collapse to head..tail so the trace
/// stays one line per opcode.
fn abbreviate(hex_item: &str) -> String {
    if hex_item.len() <= 16 {
        hex_item.to_string()
    } else {
        format!(
            "{}..{}",
            &hex_item[..6],
            &hex_item[hex_item.len() - 6..]
        )
    }
}

fn read_text(path: &std::path::Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))
}

/// Executes witness + lock with an empty signing message, printing one
/// trace line per lock opcode. Exit 0 on accept, 1 on reject.
pub fn cmd_script(args: &ScriptArgs) -> Result<(), CliError> {
    let cfg = crate::load_config(&args.common)?;
    let params = cfg.params()?;

    let lock = parse_script(read_text(&args.script)?.trim())
        .map_err(|e| CliError::Config(format!("script parse: {e}")))?;
    let witness = parse_script(read_text(&args.witness)?.trim())
        .map_err(|e| CliError::Config(format!("witness parse: {e}")))?;

    let ctx = ExecContext {
        sighash_msg: b"",
        params: &params,
    };
    let (outcome, trace) = execute_with_trace(&witness, &lock, &ctx);
    for (i, step) in trace.iter().enumerate() {
        let marker = if step.executed { ' ' } else { '-' };
        let stack = step
            .stack
            .iter()
            .map(|item| abbreviate(item))
            .collect::<Vec<_>>()
            .join(" ");
        println!("{:3} {marker} {:<16} [{stack}]", i + 1, step.op);
    }
    match outcome {
        ExecOutcome::Accept => {
            println!("ACCEPT");
            Ok(())
        }
        ExecOutcome::Reject(reason) => {
            println!("REJECT {reason}");
            Err(CliError::ScriptReject(reason.to_string()))
        }
    }
}

pub fn cmd_keygen(args: &CommonArgs) -> Result<(), CliError> {
    let cfg = crate::load_config(args)?;
    let params = cfg.params()?;
    let sk = keygen(cfg.seed, &params);
    let pk = derive_pubkey(&sk, &params)
        .map_err(|e| CliError::Config(format!("key derivation: {e}")))?;
    let addr = derive_address(&pk, &params);
    let report: Value = json!({
        "address": addr.encoded,
        "addr_hash": addr.hash.to_hex(),
        "b_addr": params.b_addr(),
        "b_sec": params.b_sec(),
        "digest_bits": params.digest_bits(),
        "secret_key": sk.to_hex(),
        "seed": cfg.seed,
    });
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    Ok(())
}

/// Replays a chain file under the configured parameters and prints the
/// resulting state. The config must match the one that wrote the file.
pub fn cmd_chain_dump(args: &ChainDumpArgs) -> Result<(), CliError> {
    let cfg = crate::load_config(&args.common)?;
    let params = cfg.params()?;
    let blocks = read_chain(&args.chain, &params)
        .map_err(|e| CliError::Config(format!("cannot decode {}: {e}", args.chain.display())))?;
    let state = replay(params, cfg.chain_config(), &blocks)
        .map_err(|e| CliError::Invariant(format!("replay: {e}")))?;
    println!("{}", serde_json::to_string_pretty(&state.state_dump()).unwrap());
    Ok(())
}
