//! Base58Check, as used for Bitcoin P2PKH addresses.

use super::AnchorError;
use crate::hash::Hash256;

const ALPHABET: &[u8; 58] = b"123456789ABCDEFGHJKLMNPQRSTUVWXYZabcdefghijkmnopqrstuvwxyz";

pub const P2PKH_VERSION: u8 = 0x00;
pub const ADDRESS_PAYLOAD_LEN: usize = 20;

pub fn encode(data: &[u8]) -> String {
    let zeros = data.iter().take_while(|b| **b == 0).count();
    // Little-endian base-58 digits.
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
    out.extend(std::iter::repeat_n('1', zeros));
    out.extend(digits.iter().rev().map(|d| ALPHABET[*d as usize] as char));
    out
}

pub fn decode(s: &str) -> Result<Vec<u8>, AnchorError> {
    let zeros = s.bytes().take_while(|b| *b == b'1').count();
    let mut bytes: Vec<u8> = Vec::with_capacity(s.len());
    for ch in s.bytes().skip(zeros) {
        let value = ALPHABET
            .iter()
            .position(|c| *c == ch)
            .ok_or(AnchorError::InvalidBase58(ch as char))? as u32;
        let mut carry = value;
        for b in bytes.iter_mut() {
            carry += (*b as u32) * 58;
            *b = (carry & 0xff) as u8;
            carry >>= 8;
        }
        while carry > 0 {
            bytes.push((carry & 0xff) as u8);
            carry >>= 8;
        }
    }
    let mut out = vec![0u8; zeros];
    out.extend(bytes.iter().rev());
    Ok(out)
}

fn checksum(data: &[u8]) -> [u8; 4] {
    let twice = Hash256::digest(Hash256::digest(data).as_bytes());
    let mut out = [0u8; 4];
    out.copy_from_slice(&twice.as_bytes()[..4]);
    out
}

pub fn encode_check(version: u8, payload: &[u8]) -> String {
    let mut buf = Vec::with_capacity(payload.len() + 5);
    buf.push(version);
    buf.extend_from_slice(payload);
    let sum = checksum(&buf);
    buf.extend_from_slice(&sum);
    encode(&buf)
}

/// Returns `(version, payload)` after validating the 4-byte checksum.
pub fn decode_check(s: &str) -> Result<(u8, Vec<u8>), AnchorError> {
    let raw = decode(s)?;
    if raw.len() < 5 {
        return Err(AnchorError::AddressTooShort(raw.len()));
    }
    let (body, sum) = raw.split_at(raw.len() - 4);
    if checksum(body) != sum {
        return Err(AnchorError::BadChecksum);
    }
    Ok((body[0], body[1..].to_vec()))
}

/// Anchor address for a Merkle root: the first 20 root bytes as a
/// version-0x00 Base58Check string.
pub fn to_base58_address(root: &Hash256) -> String {
    encode_check(P2PKH_VERSION, &root.as_bytes()[..ADDRESS_PAYLOAD_LEN])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_payload_vector() {
        assert_eq!(encode_check(0, &[0u8; 20]), "1111111111111111111114oLvT2");
    }

    #[test]
    fn known_p2pkh_address() {
        // Hash160 of the uncompressed generator-point key, a widely published vector.
        let payload = hex::decode("91b24bf9f5288532960ac687abb035127b1d28a5").unwrap();
        assert_eq!(encode_check(0, &payload), "1EHNa6Q4Jz2uvNExL497mE43ikXhwF6kZm");
    }

    #[test]
    fn flipped_checksum_byte_rejects() {
        let addr = to_base58_address(&Hash256::digest(b"root"));
        let mut raw = decode(&addr).unwrap();
        let last = raw.len() - 1;
        raw[last] ^= 0x01;
        assert!(matches!(decode_check(&encode(&raw)), Err(AnchorError::BadChecksum)));
    }

    #[test]
    fn rejects_non_alphabet_chars() {
        assert!(matches!(decode("10Il"), Err(AnchorError::InvalidBase58('0'))));
    }

    proptest! {
        #[test]
        fn matches_reference_codec(data in proptest::collection::vec(any::<u8>(), 0..64)) {
            prop_assert_eq!(encode(&data), bs58::encode(&data).into_string());
            prop_assert_eq!(decode(&encode(&data)).unwrap(), data);
        }

        #[test]
        fn address_round_trip(root in any::<[u8; 32]>()) {
            let root = Hash256::from_bytes(root);
            let addr = to_base58_address(&root);
            let (version, payload) = decode_check(&addr).unwrap();
            prop_assert_eq!(version, 0x00);
            prop_assert_eq!(&payload[..], &root.as_bytes()[..20]);
            let mut reference = vec![0u8];
            reference.extend_from_slice(&root.as_bytes()[..20]);
            prop_assert_eq!(addr, bs58::encode(reference).with_check().into_string());
        }
    }
}
