//! Deterministic authenticated symmetric stand-in.
//!
//! Ciphertext layout: `nonce (8 bytes, BE) || body || tag (16 bytes)`. The
//! body is the payload XORed with a SHA-256 counter-mode keystream and the
//! tag is a truncated SHA-256 over key, nonce and body. This is a cost
//! source for the simulation, not a vetted cryptographic construction.

use sha2::{Digest, Sha256};
use thiserror::Error;

const NONCE_LEN: usize = 8;
const TAG_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CipherError {
    #[error("ciphertext too short")]
    Truncated,
    #[error("integrity tag mismatch (wrong key or tampered ciphertext)")]
    TagMismatch,
}

#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct Key(Vec<u8>);

impl Key {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Self {
        Key(bytes.into())
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl std::fmt::Debug for Key {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Key(..)")
    }
}

fn keystream_block(key: &Key, nonce: u64, counter: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"ks");
    h.update(key.as_bytes());
    h.update(nonce.to_be_bytes());
    h.update(counter.to_be_bytes());
    h.finalize().into()
}

fn tag(key: &Key, nonce: u64, body: &[u8]) -> [u8; TAG_LEN] {
    let mut h = Sha256::new();
    h.update(b"tag");
    h.update((key.as_bytes().len() as u64).to_be_bytes());
    h.update(key.as_bytes());
    h.update(nonce.to_be_bytes());
    h.update(body);
    let full: [u8; 32] = h.finalize().into();
    let mut out = [0u8; TAG_LEN];
    out.copy_from_slice(&full[..TAG_LEN]);
    out
}

fn xor_keystream(key: &Key, nonce: u64, data: &mut [u8]) {
    for (i, chunk) in data.chunks_mut(32).enumerate() {
        let block = keystream_block(key, nonce, i as u64);
        chunk.iter_mut().zip(block).for_each(|(b, k)| *b ^= k);
    }
}

pub fn encrypt(payload: &[u8], key: &Key, nonce: u64) -> Vec<u8> {
    let mut body = payload.to_vec();
    xor_keystream(key, nonce, &mut body);
    let mut out = Vec::with_capacity(NONCE_LEN + body.len() + TAG_LEN);
    out.extend_from_slice(&nonce.to_be_bytes());
    out.extend_from_slice(&body);
    out.extend_from_slice(&tag(key, nonce, &body));
    out
}

pub fn decrypt(ciphertext: &[u8], key: &Key) -> Result<Vec<u8>, CipherError> {
    if ciphertext.len() < NONCE_LEN + TAG_LEN {
        return Err(CipherError::Truncated);
    }
    let (nonce_bytes, rest) = ciphertext.split_at(NONCE_LEN);
    let (body, got_tag) = rest.split_at(rest.len() - TAG_LEN);
    let nonce = u64::from_be_bytes(nonce_bytes.try_into().expect("length checked"));
    if tag(key, nonce, body) != got_tag {
        return Err(CipherError::TagMismatch);
    }
    let mut plain = body.to_vec();
    xor_keystream(key, nonce, &mut plain);
    Ok(plain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn round_trip_reading() {
        let key = Key::new("local-cloud-sw-key");
        let ct = encrypt(b"25", &key, 1);
        assert_ne!(ct, b"25".to_vec());
        assert_eq!(decrypt(&ct, &key).unwrap(), b"25");
    }

    #[test]
    fn wrong_key_fails() {
        let ct = encrypt(b"25", &Key::new("a"), 1);
        assert_eq!(decrypt(&ct, &Key::new("b")), Err(CipherError::TagMismatch));
    }

    #[test]
    fn tampering_fails() {
        let key = Key::new("k");
        let mut ct = encrypt(b"25", &key, 9);
        ct[NONCE_LEN] ^= 1;
        assert_eq!(decrypt(&ct, &key), Err(CipherError::TagMismatch));
        assert_eq!(decrypt(&ct[..4], &key), Err(CipherError::Truncated));
    }

    proptest! {
        #[test]
        fn decrypt_inverts_encrypt(payload in proptest::collection::vec(any::<u8>(), 0..200),
                                   key in proptest::collection::vec(any::<u8>(), 1..40),
                                   nonce in any::<u64>()) {
            let key = Key::new(key);
            let ct = encrypt(&payload, &key, nonce);
            prop_assert_ne!(&ct, &payload);
            prop_assert_eq!(decrypt(&ct, &key).unwrap(), payload);
        }
    }
}
