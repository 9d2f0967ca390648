//! Stack-based script interpreter: just enough opcodes for P2PKH locks and
//! the two-pubkey bounty script that pays whoever can present a colliding
//! key pair. No loops, so every script terminates.

use crate::crypto::{pipeline_hash, verify, AddrHash, ModelParams, PublicKey, Signature};
use thiserror::Error;

/// Hard cap on a single PUSH payload; fits any serialized pubkey this crate
/// can produce (2 * 256 * 16 / 8 = 1024 bytes at the widest digest).
pub const MAX_PUSH: usize = 2048;

pub const MAX_STACK: usize = 1000;

pub const MAX_NESTING: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScriptOp {
    Push(Vec<u8>),
    Dup,
    Over,
    Swap,
    Equal,
    EqualVerify,
    NotIf,
    Else,
    EndIf,
    Hash160,
    CheckSig,
    Return,
}

impl ScriptOp {
    pub fn name(&self) -> &'static str {
        match self {
            ScriptOp::Push(_) => "PUSH",
            ScriptOp::Dup => "OP_DUP",
            ScriptOp::Over => "OP_OVER",
            ScriptOp::Swap => "OP_SWAP",
            ScriptOp::Equal => "OP_EQUAL",
            ScriptOp::EqualVerify => "OP_EQUALVERIFY",
            ScriptOp::NotIf => "OP_NOTIF",
            ScriptOp::Else => "OP_ELSE",
            ScriptOp::EndIf => "OP_ENDIF",
            ScriptOp::Hash160 => "OP_HASH160",
            ScriptOp::CheckSig => "OP_CHECKSIG",
            ScriptOp::Return => "OP_RETURN",
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("unknown opcode {0:?}")]
    UnknownOpcode(String),
    #[error("bad push token {0:?} (expect hex, optionally 0x-prefixed)")]
    BadPush(String),
    #[error("push payload of {0} bytes exceeds {MAX_PUSH}")]
    PushTooLarge(usize),
    #[error("unbalanced OP_NOTIF / OP_ELSE / OP_ENDIF structure")]
    UnbalancedBranch,
    #[error("branch nesting exceeds {MAX_NESTING}")]
    NestingTooDeep,
    #[error("truncated script binary")]
    Truncated,
    #[error("unknown opcode tag {0:#04x}")]
    BadTag(u8),
}

/// A validated opcode sequence: branches balanced, pushes within bounds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Script {
    ops: Vec<ScriptOp>,
}

impl Script {
    /// Validates branch structure (every NOTIF closed, at most one ELSE per
    /// frame) and push sizes.
    pub fn from_ops(ops: Vec<ScriptOp>) -> Result<Self, ParseError> {
        let mut frames: Vec<bool> = Vec::new(); // else_seen per open NOTIF
        for op in &ops {
            match op {
                ScriptOp::Push(data) => {
                    if data.len() > MAX_PUSH {
                        return Err(ParseError::PushTooLarge(data.len()));
                    }
                }
                ScriptOp::NotIf => {
                    frames.push(false);
                    if frames.len() > MAX_NESTING {
                        return Err(ParseError::NestingTooDeep);
                    }
                }
                ScriptOp::Else => match frames.last_mut() {
                    Some(else_seen) if !*else_seen => *else_seen = true,
                    _ => return Err(ParseError::UnbalancedBranch),
                },
                ScriptOp::EndIf => {
                    if frames.pop().is_none() {
                        return Err(ParseError::UnbalancedBranch);
                    }
                }
                _ => {}
            }
        }
        if !frames.is_empty() {
            return Err(ParseError::UnbalancedBranch);
        }
        Ok(Script { ops })
    }

    pub fn ops(&self) -> &[ScriptOp] {
        &self.ops
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn is_push_only(&self) -> bool {
        self.ops.iter().all(|op| matches!(op, ScriptOp::Push(_)))
    }

    /// Binary form: 1-byte tags; PUSH = 0x01, then little-endian u16 length,
    /// then the payload.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for op in &self.ops {
            match op {
                ScriptOp::Push(data) => {
                    out.push(0x01);
                    out.extend_from_slice(&(data.len() as u16).to_le_bytes());
                    out.extend_from_slice(data);
                }
                ScriptOp::Dup => out.push(0x02),
                ScriptOp::Over => out.push(0x03),
                ScriptOp::Swap => out.push(0x04),
                ScriptOp::Equal => out.push(0x05),
                ScriptOp::EqualVerify => out.push(0x06),
                ScriptOp::NotIf => out.push(0x07),
                ScriptOp::Else => out.push(0x08),
                ScriptOp::EndIf => out.push(0x09),
                ScriptOp::Hash160 => out.push(0x0a),
                ScriptOp::CheckSig => out.push(0x0b),
                ScriptOp::Return => out.push(0x0c),
            }
        }
        out
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self, ParseError> {
        let mut ops = Vec::new();
        let mut pos = 0usize;
        while pos < data.len() {
            let tag = data[pos];
            pos += 1;
            let op = match tag {
                0x01 => {
                    if pos + 2 > data.len() {
                        return Err(ParseError::Truncated);
                    }
                    let len = u16::from_le_bytes([data[pos], data[pos + 1]]) as usize;
                    pos += 2;
                    if pos + len > data.len() {
                        return Err(ParseError::Truncated);
                    }
                    let payload = data[pos..pos + len].to_vec();
                    pos += len;
                    ScriptOp::Push(payload)
                }
                0x02 => ScriptOp::Dup,
                0x03 => ScriptOp::Over,
                0x04 => ScriptOp::Swap,
                0x05 => ScriptOp::Equal,
                0x06 => ScriptOp::EqualVerify,
                0x07 => ScriptOp::NotIf,
                0x08 => ScriptOp::Else,
                0x09 => ScriptOp::EndIf,
                0x0a => ScriptOp::Hash160,
                0x0b => ScriptOp::CheckSig,
                0x0c => ScriptOp::Return,
                other => return Err(ParseError::BadTag(other)),
            };
            ops.push(op);
        }
        Script::from_ops(ops)
    }
}

impl std::fmt::Display for Script {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut first = true;
        for op in &self.ops {
            if !first {
                f.write_str(" ")?;
            }
            first = false;
            match op {
                ScriptOp::Push(data) => write!(f, "0x{}", hex::encode(data))?,
                other => f.write_str(other.name())?,
            }
        }
        Ok(())
    }
}

/// Parses the space-separated text form: `OP_*` names, pushes as hex tokens
/// (bare or 0x-prefixed). The printer always emits the 0x form.
pub fn parse_script(text: &str) -> Result<Script, ParseError> {
    let mut ops = Vec::new();
    for token in text.split_whitespace() {
        let op = match token {
            "OP_DUP" => ScriptOp::Dup,
            "OP_OVER" => ScriptOp::Over,
            "OP_SWAP" => ScriptOp::Swap,
            "OP_EQUAL" => ScriptOp::Equal,
            "OP_EQUALVERIFY" => ScriptOp::EqualVerify,
            "OP_NOTIF" => ScriptOp::NotIf,
            "OP_ELSE" => ScriptOp::Else,
            "OP_ENDIF" => ScriptOp::EndIf,
            "OP_HASH160" => ScriptOp::Hash160,
            "OP_CHECKSIG" => ScriptOp::CheckSig,
            "OP_RETURN" => ScriptOp::Return,
            other if other.starts_with("OP_") => {
                return Err(ParseError::UnknownOpcode(other.to_string()))
            }
            hex_token => {
                let digits = hex_token.strip_prefix("0x").unwrap_or(hex_token);
                let data =
                    hex::decode(digits).map_err(|_| ParseError::BadPush(hex_token.to_string()))?;
                ScriptOp::Push(data)
            }
        };
        ops.push(op);
    }
    Script::from_ops(ops)
}

/// Inputs to one execution: the message signatures are checked against, and
/// the width parameters for hashing and key decoding.
pub struct ExecContext<'a> {
    pub sighash_msg: &'a [u8],
    pub params: &'a ModelParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    StackUnderflow,
    StackOverflow,
    ReturnHit,
    VerifyFailed,
    MalformedBranch,
    NonPushWitness,
    EvalFalse,
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RejectReason::StackUnderflow => "StackUnderflow",
            RejectReason::StackOverflow => "StackOverflow",
            RejectReason::ReturnHit => "ReturnHit",
            RejectReason::VerifyFailed => "VerifyFailed",
            RejectReason::MalformedBranch => "MalformedBranch",
            RejectReason::NonPushWitness => "NonPushWitness",
            RejectReason::EvalFalse => "EvalFalse",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecOutcome {
    Accept,
    Reject(RejectReason),
}

impl ExecOutcome {
    pub fn is_accept(&self) -> bool {
        matches!(self, ExecOutcome::Accept)
    }
}

/// One line of the execution trace: the opcode, whether the branch state let
/// it run, and the stack afterwards (top last, hex).
#[derive(Debug, Clone)]
pub struct TraceStep {
    pub op: String,
    pub executed: bool,
    pub stack: Vec<String>,
}

/// Empty and all-zero byte strings are false; everything else is true.
pub fn truthy(data: &[u8]) -> bool {
    data.iter().any(|&b| b != 0)
}

struct Machine<'a> {
    ctx: &'a ExecContext<'a>,
    stack: Vec<Vec<u8>>,
    // One flag per open NOTIF: whether that branch arm executes.
    branch: Vec<bool>,
    trace: Option<Vec<TraceStep>>,
}

impl<'a> Machine<'a> {
    fn executing(&self) -> bool {
        self.branch.iter().all(|&b| b)
    }

    fn push(&mut self, item: Vec<u8>) -> Result<(), RejectReason> {
        if self.stack.len() >= MAX_STACK {
            return Err(RejectReason::StackOverflow);
        }
        self.stack.push(item);
        Ok(())
    }

    fn pop(&mut self) -> Result<Vec<u8>, RejectReason> {
        self.stack.pop().ok_or(RejectReason::StackUnderflow)
    }

    fn record(&mut self, op: &ScriptOp, executed: bool) {
        if let Some(trace) = &mut self.trace {
            trace.push(TraceStep {
                op: match op {
                    ScriptOp::Push(data) => format!("PUSH 0x{}", hex::encode(data)),
                    other => other.name().to_string(),
                },
                executed,
                stack: self.stack.iter().map(hex::encode).collect(),
            });
        }
    }

    fn step(&mut self, op: &ScriptOp) -> Result<(), RejectReason> {
        // Branch delimiters are processed even inside a skipped arm; all
        // other opcodes run only when every enclosing branch is live.
        match op {
            ScriptOp::NotIf => {
                if self.executing() {
                    let cond = self.pop()?;
                    self.branch.push(!truthy(&cond));
                } else {
                    self.branch.push(false);
                }
                if self.branch.len() > MAX_NESTING {
                    return Err(RejectReason::MalformedBranch);
                }
                self.record(op, true);
                return Ok(());
            }
            ScriptOp::Else => {
                match self.branch.last_mut() {
                    Some(live) => *live = !*live,
                    None => return Err(RejectReason::MalformedBranch),
                }
                self.record(op, true);
                return Ok(());
            }
            ScriptOp::EndIf => {
                if self.branch.pop().is_none() {
                    return Err(RejectReason::MalformedBranch);
                }
                self.record(op, true);
                return Ok(());
            }
            _ => {}
        }
        if !self.executing() {
            self.record(op, false);
            return Ok(());
        }
        match op {
            ScriptOp::Push(data) => self.push(data.clone())?,
            ScriptOp::Dup => {
                let top = self.stack.last().ok_or(RejectReason::StackUnderflow)?.clone();
                self.push(top)?;
            }
            ScriptOp::Over => {
                if self.stack.len() < 2 {
                    return Err(RejectReason::StackUnderflow);
                }
                let item = self.stack[self.stack.len() - 2].clone();
                self.push(item)?;
            }
            ScriptOp::Swap => {
                let n = self.stack.len();
                if n < 2 {
                    return Err(RejectReason::StackUnderflow);
                }
                self.stack.swap(n - 1, n - 2);
            }
            ScriptOp::Equal => {
                let a = self.pop()?;
                let b = self.pop()?;
                self.push(if a == b { vec![1] } else { vec![] })?;
            }
            ScriptOp::EqualVerify => {
                let a = self.pop()?;
                let b = self.pop()?;
                if a != b {
                    return Err(RejectReason::VerifyFailed);
                }
            }
            ScriptOp::Hash160 => {
                let data = self.pop()?;
                let h = pipeline_hash(&data, self.ctx.params);
                self.push(h.as_bytes().to_vec())?;
            }
            ScriptOp::CheckSig => {
                let pk_bytes = self.pop()?;
                let sig_bytes = self.pop()?;
                let ok = match (
                    PublicKey::from_bytes(&pk_bytes, self.ctx.params),
                    Signature::from_bytes(&sig_bytes, self.ctx.params),
                ) {
                    (Ok(pk), Ok(sig)) => verify(&pk, self.ctx.sighash_msg, &sig, self.ctx.params),
                    _ => false,
                };
                self.push(if ok { vec![1] } else { vec![] })?;
            }
            ScriptOp::Return => return Err(RejectReason::ReturnHit),
            ScriptOp::NotIf | ScriptOp::Else | ScriptOp::EndIf => unreachable!(),
        }
        self.record(op, true);
        Ok(())
    }
}

/// Runs `script_sig` (push-only) then `script_pubkey` on one stack; accepts
/// iff execution completes and the top of stack is truthy.
pub fn execute(script_sig: &Script, script_pubkey: &Script, ctx: &ExecContext) -> ExecOutcome {
    execute_inner(script_sig, script_pubkey, ctx, false).0
}

/// Same as `execute`, also returning one trace step per `script_pubkey`
/// opcode (witness pushes are not traced; they form the initial stack).
pub fn execute_with_trace(
    script_sig: &Script,
    script_pubkey: &Script,
    ctx: &ExecContext,
) -> (ExecOutcome, Vec<TraceStep>) {
    let (outcome, trace) = execute_inner(script_sig, script_pubkey, ctx, true);
    (outcome, trace.unwrap_or_default())
}

fn execute_inner(
    script_sig: &Script,
    script_pubkey: &Script,
    ctx: &ExecContext,
    want_trace: bool,
) -> (ExecOutcome, Option<Vec<TraceStep>>) {
    if !script_sig.is_push_only() {
        return (ExecOutcome::Reject(RejectReason::NonPushWitness), None);
    }
    let mut m = Machine {
        ctx,
        stack: Vec::new(),
        branch: Vec::new(),
        trace: None,
    };
    for op in script_sig.ops() {
        if let Err(reason) = m.step(op) {
            return (ExecOutcome::Reject(reason), m.trace);
        }
    }
    m.trace = want_trace.then(Vec::new);
    for op in script_pubkey.ops() {
        if let Err(reason) = m.step(op) {
            // The failing op still appears in the trace.
            m.record(op, true);
            return (ExecOutcome::Reject(reason), m.trace);
        }
    }
    if !m.branch.is_empty() {
        return (ExecOutcome::Reject(RejectReason::MalformedBranch), m.trace);
    }
    let outcome = match m.stack.last() {
        Some(top) if truthy(top) => ExecOutcome::Accept,
        _ => ExecOutcome::Reject(RejectReason::EvalFalse),
    };
    (outcome, m.trace)
}

/// The bounty lock: redeemable with (sig1, pk1, pk2) pushed in that order,
/// iff pk1 != pk2, both hash to the same address, and sig1 verifies under
/// pk1. Equal pubkeys burn via OP_RETURN.
pub fn reward_script_template() -> Script {
    Script::from_ops(vec![
        ScriptOp::Over,
        ScriptOp::Over,
        ScriptOp::Equal,
        ScriptOp::NotIf,
        ScriptOp::Over,
        ScriptOp::Hash160,
        ScriptOp::Swap,
        ScriptOp::Hash160,
        ScriptOp::EqualVerify,
        ScriptOp::CheckSig,
        ScriptOp::Else,
        ScriptOp::Return,
        ScriptOp::EndIf,
    ])
    .expect("static template is balanced")
}

/// Standard P2PKH lock for `addr`: OP_DUP OP_HASH160 PUSH(addr)
/// OP_EQUALVERIFY OP_CHECKSIG.
pub fn p2pkh_script_template(addr: &AddrHash) -> Script {
    Script::from_ops(vec![
        ScriptOp::Dup,
        ScriptOp::Hash160,
        ScriptOp::Push(addr.as_bytes().to_vec()),
        ScriptOp::EqualVerify,
        ScriptOp::CheckSig,
    ])
    .expect("static template is balanced")
}

/// Push-only witness from raw items, bottom of stack first.
pub fn witness_script(items: &[Vec<u8>]) -> Script {
    Script::from_ops(items.iter().cloned().map(ScriptOp::Push).collect())
        .expect("pushes cannot unbalance")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{derive_address, derive_pubkey, keygen, sign, ModelParams};

    fn params() -> ModelParams {
        ModelParams::new(32, 16).unwrap().with_digest_bits(8).unwrap()
    }

    fn ctx<'a>(msg: &'a [u8], p: &'a ModelParams) -> ExecContext<'a> {
        ExecContext {
            sighash_msg: msg,
            params: p,
        }
    }

    #[test]
    fn parse_print_roundtrip() {
        let text = "OP_OVER OP_OVER OP_EQUAL OP_NOTIF OP_OVER OP_HASH160 OP_SWAP OP_HASH160 OP_EQUALVERIFY OP_CHECKSIG OP_ELSE OP_RETURN OP_ENDIF";
        let script = parse_script(text).unwrap();
        assert_eq!(script, reward_script_template());
        assert_eq!(script.to_string(), text);
        assert_eq!(script.len(), 13);
    }

    #[test]
    fn parse_pushes_both_forms() {
        let s1 = parse_script("OP_DUP OP_HASH160 ab12 OP_EQUALVERIFY OP_CHECKSIG").unwrap();
        let s2 = parse_script("OP_DUP OP_HASH160 0xab12 OP_EQUALVERIFY OP_CHECKSIG").unwrap();
        assert_eq!(s1, s2);
        assert_eq!(s1.len(), 5);
        // Canonical printing uses the 0x form and round-trips.
        assert_eq!(parse_script(&s1.to_string()).unwrap(), s1);
    }

    #[test]
    fn parse_rejects_bad_tokens() {
        assert!(matches!(
            parse_script("OP_BOGUS"),
            Err(ParseError::UnknownOpcode(_))
        ));
        assert!(matches!(parse_script("zz"), Err(ParseError::BadPush(_))));
        assert!(matches!(
            parse_script("OP_NOTIF OP_RETURN"),
            Err(ParseError::UnbalancedBranch)
        ));
        assert!(matches!(
            parse_script("OP_ELSE"),
            Err(ParseError::UnbalancedBranch)
        ));
        assert!(matches!(
            parse_script("OP_ENDIF"),
            Err(ParseError::UnbalancedBranch)
        ));
        assert!(matches!(
            parse_script("OP_NOTIF OP_ELSE OP_ELSE OP_ENDIF"),
            Err(ParseError::UnbalancedBranch)
        ));
    }

    #[test]
    fn binary_roundtrip() {
        let script = parse_script("0xdeadbeef OP_DUP OP_NOTIF OP_HASH160 OP_ELSE OP_RETURN OP_ENDIF OP_EQUAL").unwrap();
        assert_eq!(Script::from_bytes(&script.to_bytes()).unwrap(), script);
        // PUSH binary layout: tag, little-endian length, payload.
        let push = witness_script(&[vec![0xaa, 0xbb]]);
        assert_eq!(push.to_bytes(), vec![0x01, 0x02, 0x00, 0xaa, 0xbb]);
        assert!(matches!(
            Script::from_bytes(&[0x01, 0x05, 0x00, 0xaa]),
            Err(ParseError::Truncated)
        ));
        assert!(matches!(Script::from_bytes(&[0x7f]), Err(ParseError::BadTag(0x7f))));
    }

    #[test]
    fn truthiness_convention() {
        assert!(!truthy(&[]));
        assert!(!truthy(&[0]));
        assert!(!truthy(&[0, 0, 0]));
        assert!(truthy(&[1]));
        assert!(truthy(&[0, 0, 1]));
    }

    #[test]
    fn p2pkh_accepts_owner_and_rejects_others() {
        let p = params();
        let sk = keygen(1, &p);
        let pk = derive_pubkey(&sk, &p).unwrap();
        let addr = derive_address(&pk, &p);
        let msg = b"spend-message";
        let lock = p2pkh_script_template(&addr.hash);

        let sig = sign(&sk, msg, &p);
        let good = witness_script(&[sig.serialize(), pk.serialize()]);
        assert!(execute(&good, &lock, &ctx(msg, &p)).is_accept());

        // Wrong key: its address differs, EQUALVERIFY fires.
        let sk2 = keygen(2, &p);
        let pk2 = derive_pubkey(&sk2, &p).unwrap();
        let sig2 = sign(&sk2, msg, &p);
        let wrong_key = witness_script(&[sig2.serialize(), pk2.serialize()]);
        assert_eq!(
            execute(&wrong_key, &lock, &ctx(msg, &p)),
            ExecOutcome::Reject(RejectReason::VerifyFailed)
        );

        // Right key, corrupted signature: CHECKSIG pushes false.
        let mut bad_sig = sig.serialize();
        bad_sig[3] ^= 0xff;
        let corrupted = witness_script(&[bad_sig, pk.serialize()]);
        assert_eq!(
            execute(&corrupted, &lock, &ctx(msg, &p)),
            ExecOutcome::Reject(RejectReason::EvalFalse)
        );

        // Signature over a different message.
        let stale = witness_script(&[sign(&sk, b"other", &p).serialize(), pk.serialize()]);
        assert_eq!(
            execute(&stale, &lock, &ctx(msg, &p)),
            ExecOutcome::Reject(RejectReason::EvalFalse)
        );
    }

    #[test]
    fn reward_script_equal_keys_burns() {
        let p = params();
        let sk = keygen(1, &p);
        let pk = derive_pubkey(&sk, &p).unwrap();
        let msg = b"claim";
        let sig = sign(&sk, msg, &p);
        let witness = witness_script(&[sig.serialize(), pk.serialize(), pk.serialize()]);
        assert_eq!(
            execute(&witness, &reward_script_template(), &ctx(msg, &p)),
            ExecOutcome::Reject(RejectReason::ReturnHit)
        );
    }

    #[test]
    fn reward_script_distinct_keys_distinct_hashes_rejects() {
        let p = params();
        let sk1 = keygen(1, &p);
        let sk2 = keygen(2, &p);
        let pk1 = derive_pubkey(&sk1, &p).unwrap();
        let pk2 = derive_pubkey(&sk2, &p).unwrap();
        assert_ne!(derive_address(&pk1, &p).hash, derive_address(&pk2, &p).hash);
        let msg = b"claim";
        let sig = sign(&sk1, msg, &p);
        let witness = witness_script(&[sig.serialize(), pk1.serialize(), pk2.serialize()]);
        assert_eq!(
            execute(&witness, &reward_script_template(), &ctx(msg, &p)),
            ExecOutcome::Reject(RejectReason::VerifyFailed)
        );
    }

    #[test]
    fn reward_script_underflow_on_missing_item() {
        let p = params();
        let sk = keygen(1, &p);
        let pk = derive_pubkey(&sk, &p).unwrap();
        let witness = witness_script(&[pk.serialize(), pk.serialize()]);
        // Two items survive OVER/OVER/EQUAL/NOTIF; the live branch then
        // underflows looking for the signature.
        let outcome = execute(&witness, &reward_script_template(), &ctx(b"m", &p));
        assert_eq!(outcome, ExecOutcome::Reject(RejectReason::ReturnHit));
        let single = witness_script(&[pk.serialize()]);
        assert_eq!(
            execute(&single, &reward_script_template(), &ctx(b"m", &p)),
            ExecOutcome::Reject(RejectReason::StackUnderflow)
        );
    }

    #[test]
    fn branch_skip_has_no_side_effects() {
        let p = params();
        // Condition true -> NOTIF arm skipped; the pushes inside must not
        // run, leaving exactly the sentinel below the condition result.
        let script =
            parse_script("OP_NOTIF 0x11 0x22 OP_ELSE 0xaa OP_ENDIF").unwrap();
        let witness = witness_script(&[vec![0x5a], vec![1]]);
        let (outcome, trace) = execute_with_trace(&witness, &script, &ctx(b"", &p));
        assert!(outcome.is_accept());
        let executed: Vec<&str> = trace
            .iter()
            .filter(|s| s.executed && s.op.starts_with("PUSH"))
            .map(|s| s.op.as_str())
            .collect();
        assert_eq!(executed, vec!["PUSH 0xaa"]);
        // Sentinel untouched beneath the branch result.
        assert_eq!(trace.last().unwrap().stack[0], "5a");
    }

    #[test]
    fn non_push_witness_rejected() {
        let p = params();
        let witness = parse_script("OP_DUP").unwrap();
        let lock = parse_script("OP_EQUAL").unwrap();
        assert_eq!(
            execute(&witness, &lock, &ctx(b"", &p)),
            ExecOutcome::Reject(RejectReason::NonPushWitness)
        );
    }

    #[test]
    fn empty_final_stack_rejects() {
        let p = params();
        let witness = witness_script(&[vec![1], vec![1]]);
        let lock = parse_script("OP_EQUALVERIFY").unwrap();
        assert_eq!(
            execute(&witness, &lock, &ctx(b"", &p)),
            ExecOutcome::Reject(RejectReason::EvalFalse)
        );
    }

    #[test]
    fn stack_limit_enforced() {
        let p = params();
        let mut ops = vec![ScriptOp::Push(vec![1])];
        for _ in 0..MAX_STACK + 1 {
            ops.push(ScriptOp::Dup);
        }
        let lock = Script::from_ops(ops).unwrap();
        let empty = witness_script(&[]);
        assert_eq!(
            execute(&empty, &lock, &ctx(b"", &p)),
            ExecOutcome::Reject(RejectReason::StackOverflow)
        );
    }

    #[test]
    fn trace_counts_lock_ops_only() {
        let p = params();
        let sk = keygen(1, &p);
        let pk = derive_pubkey(&sk, &p).unwrap();
        let msg = b"claim";
        let sig = sign(&sk, msg, &p);
        let witness = witness_script(&[sig.serialize(), pk.serialize(), pk.serialize()]);
        let (outcome, trace) =
            execute_with_trace(&witness, &reward_script_template(), &ctx(msg, &p));
        assert_eq!(outcome, ExecOutcome::Reject(RejectReason::ReturnHit));
        // 13 template ops: OVER OVER EQUAL NOTIF (skipped arm...) ELSE RETURN.
        // Execution stops at OP_RETURN, the 12th op.
        assert_eq!(trace.len(), 12);
        assert_eq!(trace.last().unwrap().op, "OP_RETURN");
    }
}
