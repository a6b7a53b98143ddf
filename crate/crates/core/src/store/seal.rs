//! Optional at-rest sealing of stored values.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use chacha20poly1305::aead::{Aead, AeadCore, KeyInit, OsRng};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};

use super::StoreError;

/// Environment variable holding a 64-hex-digit store key.
pub const STORE_KEY_ENV: &str = "VEILGATE_STORE_KEY";
pub const SEALED_PREFIX: &str = "enc:";

/// Transforms values on their way to and from disk.
pub trait ValueSealer: Send + Sync {
    fn seal(&self, plain: &str) -> Result<String, StoreError>;
    fn open(&self, stored: &str) -> Result<String, StoreError>;
}

/// ChaCha20-Poly1305 with a random nonce per value: `enc:` + base64(nonce || ciphertext).
pub struct ChaChaSealer {
    cipher: ChaCha20Poly1305,
}

impl std::fmt::Debug for ChaChaSealer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("ChaChaSealer(..)")
    }
}

impl ChaChaSealer {
    pub fn new(key: [u8; 32]) -> Self {
        Self {
            cipher: ChaCha20Poly1305::new(Key::from_slice(&key)),
        }
    }

    pub fn from_hex(hex_key: &str) -> Result<Self, StoreError> {
        let bytes = hex::decode(hex_key.trim()).map_err(|e| StoreError::Seal(format!("bad key hex: {e}")))?;
        let key: [u8; 32] = bytes
            .try_into()
            .map_err(|_| StoreError::Seal("store key must be 32 bytes (64 hex digits)".into()))?;
        Ok(Self::new(key))
    }

    /// `None` when the variable is unset or empty.
    pub fn from_env() -> Result<Option<Self>, StoreError> {
        match std::env::var(STORE_KEY_ENV) {
            Ok(v) if !v.trim().is_empty() => Self::from_hex(&v).map(Some),
            _ => Ok(None),
        }
    }
}

impl ValueSealer for ChaChaSealer {
    fn seal(&self, plain: &str) -> Result<String, StoreError> {
        let nonce = ChaCha20Poly1305::generate_nonce(&mut OsRng);
        let ct = self
            .cipher
            .encrypt(&nonce, plain.as_bytes())
            .map_err(|_| StoreError::Seal("encryption failed".into()))?;
        let mut blob = nonce.to_vec();
        blob.extend_from_slice(&ct);
        Ok(format!("{SEALED_PREFIX}{}", B64.encode(blob)))
    }

    fn open(&self, stored: &str) -> Result<String, StoreError> {
        let body = stored
            .strip_prefix(SEALED_PREFIX)
            .ok_or_else(|| StoreError::Seal("value is not sealed".into()))?;
        let blob = B64
            .decode(body)
            .map_err(|e| StoreError::Seal(format!("bad sealed value: {e}")))?;
        if blob.len() < 12 {
            return Err(StoreError::Seal("sealed value too short".into()));
        }
        let (nonce, ct) = blob.split_at(12);
        let plain = self
            .cipher
            .decrypt(Nonce::from_slice(nonce), ct)
            .map_err(|_| StoreError::Seal("sealed value failed authentication (wrong key?)".into()))?;
        String::from_utf8(plain).map_err(|_| StoreError::Seal("sealed value is not UTF-8".into()))
    }
}
