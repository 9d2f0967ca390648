//! Reduced-width address pipeline and the hash-based one-time signature
//! scheme that stands in for ECDSA.
//!
//! Every operation here is a pure function of its inputs. The address is the
//! first `b_addr` bits of RIPEMD-160(SHA-256(pubkey)); the pubkey is a table
//! of SHA-256 commitments derived from the secret key, so the whole system
//! runs off a single hash primitive. All serializations are byte-exact
//! contracts: see `PublicKey::serialize` and the padding rule on `AddrHash`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use ripemd::Ripemd160;
use sha2::{Digest, Sha256};
use std::borrow::Borrow;
use thiserror::Error;

pub mod base58;

/// Width of each commitment / revealed preimage in bytes (128 bits).
pub const COMMITMENT_LEN: usize = 16;

/// Maximum secret-key width in bytes (b_sec <= 256).
pub const MAX_SEC_BYTES: usize = 32;

/// Maximum address-hash width in bytes (b_addr <= 160).
pub const MAX_ADDR_BYTES: usize = 20;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParamsError {
    #[error("b_sec {0} outside 8..=256")]
    SecretWidth(u32),
    #[error("b_addr {0} outside 4..=160")]
    AddressWidth(u32),
    #[error("b_addr {b_addr} must be strictly smaller than b_sec {b_sec}")]
    AddressNotSmaller { b_sec: u32, b_addr: u32 },
    #[error("digest_bits {0} outside 1..=256")]
    DigestBits(u32),
    #[error("checksum_len {0} outside 1..=32")]
    ChecksumLen(usize),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("secret key is {got} bytes, params require {want}")]
    KeyWidthMismatch { want: usize, got: usize },
    #[error("secret key has bits set above b_sec")]
    KeyPaddingViolated,
    #[error("public key length {got} does not match 2 * digest_bits * 16 = {want}")]
    PubkeyLengthMismatch { want: usize, got: usize },
    #[error("signature length {got} does not match digest_bits * 16 = {want}")]
    SignatureLengthMismatch { want: usize, got: usize },
    #[error("address hash is {got} bytes, params require {want}")]
    AddrWidthMismatch { want: usize, got: usize },
    #[error("invalid hex: {0}")]
    BadHex(String),
}

/// Errors from `decode_address`.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("character {0:?} is not in the base58 alphabet")]
    InvalidCharacter(char),
    #[error("decoded payload is {actual} bytes, expected {expected}")]
    BadLength { expected: usize, actual: usize },
    #[error("checksum mismatch")]
    ChecksumMismatch,
    #[error("version byte {actual:#04x}, expected {expected:#04x}")]
    WrongVersion { expected: u8, actual: u8 },
    #[error("padding bits below b_addr are not zero")]
    BadPadding,
}

/// The reduced-scale knobs: key width, address width, encoding bytes and the
/// signing-digest width. `b_addr < b_sec` always holds, mirroring the real
/// pipeline where the address space is far smaller than the keyspace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct ModelParams {
    b_sec: u32,
    b_addr: u32,
    version_byte: u8,
    checksum_len: usize,
    digest_bits: u32,
}

impl ModelParams {
    /// Builds params with the default version byte 0x00, 4-byte checksum and
    /// a 32-bit signing digest.
    pub fn new(b_sec: u32, b_addr: u32) -> Result<Self, ParamsError> {
        if !(8..=256).contains(&b_sec) {
            return Err(ParamsError::SecretWidth(b_sec));
        }
        if !(4..=160).contains(&b_addr) {
            return Err(ParamsError::AddressWidth(b_addr));
        }
        if b_addr >= b_sec {
            return Err(ParamsError::AddressNotSmaller { b_sec, b_addr });
        }
        Ok(ModelParams {
            b_sec,
            b_addr,
            version_byte: 0x00,
            checksum_len: 4,
            digest_bits: 32,
        })
    }

    pub fn with_digest_bits(mut self, d: u32) -> Result<Self, ParamsError> {
        if !(1..=256).contains(&d) {
            return Err(ParamsError::DigestBits(d));
        }
        self.digest_bits = d;
        Ok(self)
    }

    pub fn with_version_byte(mut self, v: u8) -> Self {
        self.version_byte = v;
        self
    }

    pub fn with_checksum_len(mut self, n: usize) -> Result<Self, ParamsError> {
        if !(1..=32).contains(&n) {
            return Err(ParamsError::ChecksumLen(n));
        }
        self.checksum_len = n;
        Ok(self)
    }

    pub fn b_sec(&self) -> u32 {
        self.b_sec
    }

    pub fn b_addr(&self) -> u32 {
        self.b_addr
    }

    pub fn version_byte(&self) -> u8 {
        self.version_byte
    }

    pub fn checksum_len(&self) -> usize {
        self.checksum_len
    }

    pub fn digest_bits(&self) -> u32 {
        self.digest_bits
    }

    /// Secret-key width in whole bytes.
    pub fn sec_bytes(&self) -> usize {
        self.b_sec.div_ceil(8) as usize
    }

    /// Address-hash width in whole bytes.
    pub fn addr_bytes(&self) -> usize {
        self.b_addr.div_ceil(8) as usize
    }

    /// Serialized public key length: 2 * d commitments of 16 bytes.
    pub fn pubkey_bytes(&self) -> usize {
        2 * self.digest_bits as usize * COMMITMENT_LEN
    }

    /// Keyspace size 2^b_sec as a float (exact for the widths allowed here).
    pub fn n_sec(&self) -> f64 {
        (self.b_sec as f64).exp2()
    }

    /// Address-space size 2^b_addr as a float.
    pub fn n_addr(&self) -> f64 {
        (self.b_addr as f64).exp2()
    }
}

pub fn sha256(data: &[u8]) -> [u8; 32] {
    let mut out = [0u8; 32];
    out.copy_from_slice(&Sha256::digest(data));
    out
}

pub fn sha256d(data: &[u8]) -> [u8; 32] {
    sha256(&sha256(data))
}

fn ripemd160(data: &[u8]) -> [u8; 20] {
    let mut out = [0u8; 20];
    out.copy_from_slice(&Ripemd160::digest(data));
    out
}

/// Zeroes every bit below the top `bits` in a big-endian buffer.
fn mask_trailing_bits(bytes: &mut [u8], bits: u32) {
    let extra = bytes.len() * 8 - bits as usize;
    if extra > 0 {
        let last = bytes.len() - 1;
        bytes[last] &= 0xffu8 << extra;
    }
}

/// A `b_sec`-bit secret key, stored right-aligned in a fixed buffer so it is
/// `Copy` and orders numerically.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SecretKey {
    bytes: [u8; MAX_SEC_BYTES],
    len: u8,
}

impl std::fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SecretKey({})", self.to_hex())
    }
}

impl SecretKey {
    /// Wraps raw big-endian bytes; rejects wrong width or stray high bits.
    pub fn from_bytes(data: &[u8], params: &ModelParams) -> Result<Self, CryptoError> {
        let want = params.sec_bytes();
        if data.len() != want {
            return Err(CryptoError::KeyWidthMismatch {
                want,
                got: data.len(),
            });
        }
        let extra = want * 8 - params.b_sec() as usize;
        if extra > 0 && data[0] >> (8 - extra) != 0 {
            return Err(CryptoError::KeyPaddingViolated);
        }
        let mut bytes = [0u8; MAX_SEC_BYTES];
        bytes[MAX_SEC_BYTES - want..].copy_from_slice(data);
        Ok(SecretKey {
            bytes,
            len: want as u8,
        })
    }

    /// The integer `v` taken modulo 2^b_sec, as a key.
    pub fn from_uint(v: u128, params: &ModelParams) -> Self {
        let mut bytes = [0u8; MAX_SEC_BYTES];
        let masked = if params.b_sec() >= 128 {
            v
        } else {
            v & ((1u128 << params.b_sec()) - 1)
        };
        bytes[MAX_SEC_BYTES - 16..].copy_from_slice(&masked.to_be_bytes());
        SecretKey {
            bytes,
            len: params.sec_bytes() as u8,
        }
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes[MAX_SEC_BYTES - self.len as usize..]
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.as_bytes())
    }

    pub fn from_hex(s: &str, params: &ModelParams) -> Result<Self, CryptoError> {
        let data = hex::decode(s.trim()).map_err(|e| CryptoError::BadHex(e.to_string()))?;
        Self::from_bytes(&data, params)
    }
}

/// Lamport-style commitment table: one pair of 128-bit hashes per digest bit,
/// pair `i` at indices `2i` (bit 0) and `2i + 1` (bit 1).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicKey {
    commitments: Vec<[u8; COMMITMENT_LEN]>,
}

impl PublicKey {
    /// Flat concatenation `commitments[0][0] || commitments[0][1] || ...`,
    /// the byte-exact wire form.
    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.commitments.len() * COMMITMENT_LEN);
        for c in &self.commitments {
            out.extend_from_slice(c);
        }
        out
    }

    pub fn from_bytes(data: &[u8], params: &ModelParams) -> Result<Self, CryptoError> {
        let want = params.pubkey_bytes();
        if data.len() != want {
            return Err(CryptoError::PubkeyLengthMismatch {
                want,
                got: data.len(),
            });
        }
        let commitments = data
            .chunks_exact(COMMITMENT_LEN)
            .map(|c| {
                let mut a = [0u8; COMMITMENT_LEN];
                a.copy_from_slice(c);
                a
            })
            .collect();
        Ok(PublicKey { commitments })
    }

    pub fn num_pairs(&self) -> usize {
        self.commitments.len() / 2
    }
}

/// One revealed 128-bit preimage per digest bit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature {
    revealed: Vec<[u8; COMMITMENT_LEN]>,
}

impl Signature {
    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.revealed.len() * COMMITMENT_LEN);
        for r in &self.revealed {
            out.extend_from_slice(r);
        }
        out
    }

    pub fn from_bytes(data: &[u8], params: &ModelParams) -> Result<Self, CryptoError> {
        let want = params.digest_bits() as usize * COMMITMENT_LEN;
        if data.len() != want {
            return Err(CryptoError::SignatureLengthMismatch {
                want,
                got: data.len(),
            });
        }
        let revealed = data
            .chunks_exact(COMMITMENT_LEN)
            .map(|c| {
                let mut a = [0u8; COMMITMENT_LEN];
                a.copy_from_slice(c);
                a
            })
            .collect();
        Ok(Signature { revealed })
    }
}

/// A `b_addr`-bit address hash. Widths not divisible by 8 are padded with
/// zero bits in the low positions of the final byte, so the byte form is the
/// exact wire representation.
#[derive(Clone, Copy)]
pub struct AddrHash {
    bytes: [u8; MAX_ADDR_BYTES],
    len: u8,
}

impl AddrHash {
    pub fn from_bytes(data: &[u8], params: &ModelParams) -> Result<Self, CryptoError> {
        let want = params.addr_bytes();
        if data.len() != want {
            return Err(CryptoError::AddrWidthMismatch {
                want,
                got: data.len(),
            });
        }
        let mut bytes = [0u8; MAX_ADDR_BYTES];
        bytes[..want].copy_from_slice(data);
        Ok(AddrHash {
            bytes,
            len: want as u8,
        })
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes[..self.len as usize]
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.as_bytes())
    }

    /// The hash bits as an integer, high bit first. Only meaningful for
    /// b_addr <= 64 (enumeration-scale work).
    pub fn to_index(&self, params: &ModelParams) -> u64 {
        debug_assert!(params.b_addr() <= 64);
        let mut v: u64 = 0;
        for &b in self.as_bytes() {
            v = v << 8 | b as u64;
        }
        v >> (self.len as u32 * 8 - params.b_addr())
    }
}

impl PartialEq for AddrHash {
    fn eq(&self, other: &Self) -> bool {
        self.as_bytes() == other.as_bytes()
    }
}

impl Eq for AddrHash {}

impl PartialOrd for AddrHash {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for AddrHash {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.as_bytes().cmp(other.as_bytes())
    }
}

impl std::hash::Hash for AddrHash {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.as_bytes().hash(state)
    }
}

impl Borrow<[u8]> for AddrHash {
    fn borrow(&self) -> &[u8] {
        self.as_bytes()
    }
}

impl std::fmt::Debug for AddrHash {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "AddrHash({})", self.to_hex())
    }
}

/// An address: the truncated pipeline hash plus its Base58Check text form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Address {
    pub hash: AddrHash,
    pub encoded: String,
}

/// Deterministic keygen: a ChaCha20 stream seeded by `seed`, truncated to
/// b_sec bits. Same seed, same key; distinct seeds are independent streams.
pub fn keygen(seed: u64, params: &ModelParams) -> SecretKey {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n = params.sec_bytes();
    let mut buf = [0u8; MAX_SEC_BYTES];
    rng.fill_bytes(&mut buf[..n]);
    let extra = n * 8 - params.b_sec() as usize;
    if extra > 0 {
        buf[0] &= 0xffu8 >> extra;
    }
    let mut bytes = [0u8; MAX_SEC_BYTES];
    bytes[MAX_SEC_BYTES - n..].copy_from_slice(&buf[..n]);
    SecretKey {
        bytes,
        len: n as u8,
    }
}

/// 128-bit pseudorandom chunk bound to (sk, pair index, bit value):
/// SHA-256(sk_bytes || i_be16 || b)[..16].
fn chunk(sk: &SecretKey, i: u16, b: u8) -> [u8; COMMITMENT_LEN] {
    let mut h = Sha256::new();
    h.update(sk.as_bytes());
    h.update(i.to_be_bytes());
    h.update([b]);
    let mut out = [0u8; COMMITMENT_LEN];
    out.copy_from_slice(&h.finalize()[..COMMITMENT_LEN]);
    out
}

fn commit(preimage: &[u8; COMMITMENT_LEN]) -> [u8; COMMITMENT_LEN] {
    let mut out = [0u8; COMMITMENT_LEN];
    out.copy_from_slice(&Sha256::digest(preimage)[..COMMITMENT_LEN]);
    out
}

fn check_key_width(sk: &SecretKey, params: &ModelParams) -> Result<(), CryptoError> {
    if sk.as_bytes().len() != params.sec_bytes() {
        return Err(CryptoError::KeyWidthMismatch {
            want: params.sec_bytes(),
            got: sk.as_bytes().len(),
        });
    }
    Ok(())
}

/// Derives the commitment table for `sk`: commitments[i][b] =
/// SHA-256(chunk(sk, i, b))[..16].
pub fn derive_pubkey(sk: &SecretKey, params: &ModelParams) -> Result<PublicKey, CryptoError> {
    check_key_width(sk, params)?;
    let d = params.digest_bits() as usize;
    let mut commitments = Vec::with_capacity(2 * d);
    for i in 0..d {
        for b in 0..2u8 {
            commitments.push(commit(&chunk(sk, i as u16, b)));
        }
    }
    Ok(PublicKey { commitments })
}

/// Writes the serialized pubkey of `sk` into `out` without intermediate
/// allocation; byte-identical to `derive_pubkey(..).serialize()`.
fn fill_pubkey_bytes(sk: &SecretKey, params: &ModelParams, out: &mut Vec<u8>) {
    out.clear();
    let d = params.digest_bits() as usize;
    for i in 0..d {
        for b in 0..2u8 {
            out.extend_from_slice(&commit(&chunk(sk, i as u16, b)));
        }
    }
}

/// First b_addr bits of RIPEMD-160(SHA-256(data)), zero-padded to bytes.
/// This is the pipeline hash applied both to pubkeys (address derivation)
/// and to raw bytes (the script engine's hash opcode).
pub fn pipeline_hash(data: &[u8], params: &ModelParams) -> AddrHash {
    let h = ripemd160(&sha256(data));
    let n = params.addr_bytes();
    let mut bytes = [0u8; MAX_ADDR_BYTES];
    bytes[..n].copy_from_slice(&h[..n]);
    mask_trailing_bits(&mut bytes[..n], params.b_addr());
    AddrHash {
        bytes,
        len: n as u8,
    }
}

/// Full address derivation: pipeline hash of the serialized pubkey plus its
/// Base58Check text.
pub fn derive_address(pk: &PublicKey, params: &ModelParams) -> Address {
    let hash = pipeline_hash(&pk.serialize(), params);
    let encoded = encode_address(&hash, params);
    Address { hash, encoded }
}

/// Scratch-buffer pipeline evaluator for brute-force loops. Produces hashes
/// byte-identical to `derive_address` but reuses one allocation.
pub struct AddressDeriver {
    params: ModelParams,
    buf: Vec<u8>,
}

impl AddressDeriver {
    pub fn new(params: &ModelParams) -> Self {
        AddressDeriver {
            params: *params,
            buf: Vec::with_capacity(params.pubkey_bytes()),
        }
    }

    pub fn addr_hash(&mut self, sk: &SecretKey) -> AddrHash {
        fill_pubkey_bytes(sk, &self.params, &mut self.buf);
        pipeline_hash(&self.buf, &self.params)
    }

    /// The serialized pubkey bytes of the last `addr_hash` call's key, or of
    /// `sk` after an explicit refill.
    pub fn pubkey_bytes(&mut self, sk: &SecretKey) -> &[u8] {
        fill_pubkey_bytes(sk, &self.params, &mut self.buf);
        &self.buf
    }
}

/// Base58Check text for an address hash: version || hash || checksum.
pub fn encode_address(hash: &AddrHash, params: &ModelParams) -> String {
    let mut payload = Vec::with_capacity(1 + hash.as_bytes().len() + params.checksum_len());
    payload.push(params.version_byte());
    payload.extend_from_slice(hash.as_bytes());
    let checksum = sha256d(&payload);
    payload.extend_from_slice(&checksum[..params.checksum_len()]);
    base58::encode(&payload)
}

/// Inverse of `encode_address`: rejects bad alphabet, bad length, bad
/// checksum, wrong version and nonzero padding bits, in that order.
pub fn decode_address(text: &str, params: &ModelParams) -> Result<(u8, AddrHash), DecodeError> {
    let raw = base58::decode(text)?;
    let expected = 1 + params.addr_bytes() + params.checksum_len();
    if raw.len() != expected {
        return Err(DecodeError::BadLength {
            expected,
            actual: raw.len(),
        });
    }
    let (body, checksum) = raw.split_at(raw.len() - params.checksum_len());
    if sha256d(body)[..params.checksum_len()] != *checksum {
        return Err(DecodeError::ChecksumMismatch);
    }
    let version = body[0];
    if version != params.version_byte() {
        return Err(DecodeError::WrongVersion {
            expected: params.version_byte(),
            actual: version,
        });
    }
    let hash_bytes = &body[1..];
    let extra = hash_bytes.len() * 8 - params.b_addr() as usize;
    if extra > 0 && hash_bytes[hash_bytes.len() - 1] & (0xffu8 >> (8 - extra)) != 0 {
        return Err(DecodeError::BadPadding);
    }
    let hash = AddrHash::from_bytes(hash_bytes, params).expect("length checked");
    Ok((version, hash))
}

fn digest_bit(digest: &[u8; 32], i: usize) -> u8 {
    digest[i / 8] >> (7 - i % 8) & 1
}

/// Signs `msg` by revealing, for each of the first d bits of SHA-256(msg),
/// the chunk preimage matching that bit. One-time: two signatures under the
/// same key leak chunks for both bit values.
pub fn sign(sk: &SecretKey, msg: &[u8], params: &ModelParams) -> Signature {
    let digest = sha256(msg);
    let d = params.digest_bits() as usize;
    let revealed = (0..d)
        .map(|i| chunk(sk, i as u16, digest_bit(&digest, i)))
        .collect();
    Signature { revealed }
}

/// Commitment check: true iff every revealed preimage hashes to the
/// commitment selected by the message digest. Uses the public key only.
pub fn verify(pk: &PublicKey, msg: &[u8], sig: &Signature, params: &ModelParams) -> bool {
    let d = params.digest_bits() as usize;
    if pk.commitments.len() != 2 * d || sig.revealed.len() != d {
        return false;
    }
    let digest = sha256(msg);
    (0..d).all(|i| {
        let b = digest_bit(&digest, i) as usize;
        commit(&sig.revealed[i]) == pk.commitments[2 * i + b]
    })
}

/// Derives a fresh seed from a secret key and a domain label, for auxiliary
/// key material (e.g. the evidence auxiliary address).
pub fn derived_seed(sk: &SecretKey, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(sk.as_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"))
}
