//! Base58 with the Bitcoin alphabet. Leading zero bytes map to leading '1's;
//! the rest is plain base conversion on the byte string as a big-endian
//! integer. Checksums live one layer up, in the address codec.

use super::DecodeError;

pub const ALPHABET: &[u8; 58] = b"123456789ABCDEFGHJKLMNPQRSTUVWXYZabcdefghijkmnopqrstuvwxyz";

/// Value of each ASCII byte in the alphabet, or 0xff.
fn digit_table() -> [u8; 128] {
    let mut t = [0xffu8; 128];
    let mut i = 0;
    while i < 58 {
        t[ALPHABET[i] as usize] = i as u8;
        i += 1;
    }
    t
}

pub fn encode(data: &[u8]) -> String {
    let zeros = data.iter().take_while(|&&b| b == 0).count();
    // Repeated division by 58 on a little-endian digit accumulator.
    let mut digits: Vec<u8> = Vec::with_capacity(data.len() * 138 / 100 + 1);
    for &byte in &data[zeros..] {
        let mut carry = byte as u32;
        for d in digits.iter_mut() {
            carry += (*d as u32) << 8;
            *d = (carry % 58) as u8;
            carry /= 58;
        }
        while carry > 0 {
            digits.push((carry % 58) as u8);
            carry /= 58;
        }
    }
    let mut out = String::with_capacity(zeros + digits.len());
    for _ in 0..zeros {
        out.push('1');
    }
    for &d in digits.iter().rev() {
        out.push(ALPHABET[d as usize] as char);
    }
    out
}

pub fn decode(text: &str) -> Result<Vec<u8>, DecodeError> {
    let table = digit_table();
    let mut zeros = 0usize;
    let mut counting_zeros = true;
    let mut bytes: Vec<u8> = Vec::with_capacity(text.len());
    for c in text.chars() {
        let v = if c.is_ascii() { table[c as usize] } else { 0xff };
        if v == 0xff {
            return Err(DecodeError::InvalidCharacter(c));
        }
        if counting_zeros {
            if c == '1' {
                zeros += 1;
                continue;
            }
            counting_zeros = false;
        }
        // bytes = bytes * 58 + v, little-endian accumulator.
        let mut carry = v as u32;
        for b in bytes.iter_mut() {
            carry += *b as u32 * 58;
            *b = carry as u8;
            carry >>= 8;
        }
        while carry > 0 {
            bytes.push(carry as u8);
            carry >>= 8;
        }
    }
    let mut out = vec![0u8; zeros];
    out.extend(bytes.iter().rev());
    Ok(out)
}
