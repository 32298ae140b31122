//! Cryptographic primitives behind the deployment channel.
//!
//! The field-digest function is pluggable per the suite byte carried in
//! every frame: `md5-compat` keeps the legacy digest for conformance,
//! `modern` swaps in SHA-256. The remaining primitives are fixed:
//! RSA-2048 with OAEP for key wrapping, PKCS#1 v1.5 / SHA-256 detached
//! signatures for the private-key authentication operation, and
//! AES-256-GCM with a random 96-bit IV for symmetric encryption.
//! Asymmetric encryption of arbitrary payloads is hybrid throughout: a
//! fresh AES key encrypts the payload and OAEP wraps that key.

use std::fmt;
use std::fs;
use std::path::Path;

use aes_gcm::aead::{Aead, KeyInit, Payload};
use aes_gcm::{Aes256Gcm, Nonce};
use md5::Md5;
use rand::RngCore;
use rsa::pkcs8::{
    DecodePrivateKey, DecodePublicKey, EncodePrivateKey, EncodePublicKey, LineEnding,
};
use rsa::sha2::Sha256;
use rsa::{Oaep, Pkcs1v15Sign, RsaPrivateKey, RsaPublicKey};
use sha2::Digest;

use super::ProtocolError;

pub const RSA_BITS: usize = 2048;
pub const SYM_KEY_LEN: usize = 32;
pub const IV_LEN: usize = 12;
pub const NONCE_LEN: usize = 16;

/// 256-bit symmetric key established by a registration exchange.
pub type SharedKey = [u8; SYM_KEY_LEN];

/// Which field-digest algorithm a message was built with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuiteId {
    Md5Compat,
    Modern,
}

impl SuiteId {
    pub fn as_byte(self) -> u8 {
        match self {
            SuiteId::Md5Compat => 0x01,
            SuiteId::Modern => 0x02,
        }
    }

    pub fn from_byte(byte: u8) -> Result<Self, ProtocolError> {
        match byte {
            0x01 => Ok(SuiteId::Md5Compat),
            0x02 => Ok(SuiteId::Modern),
            other => Err(ProtocolError::UnknownSuite(other)),
        }
    }

    /// Digest over the exact transmitted bytes of the covered fields.
    pub fn digest(self, data: &[u8]) -> Vec<u8> {
        match self {
            SuiteId::Md5Compat => Md5::digest(data).to_vec(),
            SuiteId::Modern => Sha256::digest(data).to_vec(),
        }
    }
}

impl fmt::Display for SuiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SuiteId::Md5Compat => f.write_str("md5-compat"),
            SuiteId::Modern => f.write_str("modern"),
        }
    }
}

impl std::str::FromStr for SuiteId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "md5-compat" => Ok(SuiteId::Md5Compat),
            "modern" => Ok(SuiteId::Modern),
            other => Err(format!("unknown suite `{other}` (md5-compat, modern)")),
        }
    }
}

#[derive(Clone)]
pub struct PrivateKey(RsaPrivateKey);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicKey(RsaPublicKey);

impl fmt::Debug for PrivateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("PrivateKey(..)")
    }
}

impl PrivateKey {
    pub fn generate() -> Result<Self, ProtocolError> {
        let key = RsaPrivateKey::new(&mut rand::thread_rng(), RSA_BITS)
            .map_err(|e| ProtocolError::Crypto(e.to_string()))?;
        Ok(Self(key))
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey(RsaPublicKey::from(&self.0))
    }

    pub fn to_pem(&self) -> Result<String, ProtocolError> {
        self.0
            .to_pkcs8_pem(LineEnding::LF)
            .map(|p| p.to_string())
            .map_err(|e| ProtocolError::Crypto(e.to_string()))
    }

    pub fn from_pem(pem: &str) -> Result<Self, ProtocolError> {
        RsaPrivateKey::from_pkcs8_pem(pem)
            .map(Self)
            .map_err(|e| ProtocolError::Crypto(e.to_string()))
    }

    pub fn from_pem_file(path: impl AsRef<Path>) -> Result<Self, ProtocolError> {
        let text = fs::read_to_string(path)?;
        Self::from_pem(&text)
    }

    /// Detached signature: the private-key operation of the scheme.
    pub fn sign(&self, message: &[u8]) -> Vec<u8> {
        let hashed = Sha256::digest(message);
        self.0
            .sign(Pkcs1v15Sign::new::<Sha256>(), &hashed)
            .expect("signing with a valid key cannot fail")
    }
}

impl PublicKey {
    pub fn to_der(&self) -> Vec<u8> {
        self.0
            .to_public_key_der()
            .expect("SPKI encoding cannot fail")
            .into_vec()
    }

    pub fn from_der(der: &[u8]) -> Result<Self, ProtocolError> {
        RsaPublicKey::from_public_key_der(der)
            .map(Self)
            .map_err(|e| ProtocolError::Crypto(e.to_string()))
    }

    pub fn to_pem(&self) -> Result<String, ProtocolError> {
        self.0
            .to_public_key_pem(LineEnding::LF)
            .map_err(|e| ProtocolError::Crypto(e.to_string()))
    }

    pub fn from_pem(pem: &str) -> Result<Self, ProtocolError> {
        RsaPublicKey::from_public_key_pem(pem)
            .map(Self)
            .map_err(|e| ProtocolError::Crypto(e.to_string()))
    }

    pub fn from_pem_file(path: impl AsRef<Path>) -> Result<Self, ProtocolError> {
        let text = fs::read_to_string(path)?;
        Self::from_pem(&text)
    }

    pub fn verify(&self, message: &[u8], signature: &[u8]) -> Result<(), ProtocolError> {
        let hashed = Sha256::digest(message);
        self.0
            .verify(Pkcs1v15Sign::new::<Sha256>(), &hashed, signature)
            .map_err(|_| ProtocolError::SignatureInvalid)
    }
}

pub fn random_nonce() -> [u8; NONCE_LEN] {
    let mut nonce = [0u8; NONCE_LEN];
    rand::thread_rng().fill_bytes(&mut nonce);
    nonce
}

pub fn random_shared_key() -> SharedKey {
    let mut key = [0u8; SYM_KEY_LEN];
    rand::thread_rng().fill_bytes(&mut key);
    key
}

/// AES-256-GCM under `key`: random 96-bit IV prepended to the ciphertext.
/// The frame header (message type and suite) rides along as AAD so a
/// tampered header fails authentication even without a signature.
pub fn sym_encrypt(key: &SharedKey, aad: &[u8], plaintext: &[u8]) -> Vec<u8> {
    let cipher = Aes256Gcm::new_from_slice(key).expect("32-byte key");
    let mut iv = [0u8; IV_LEN];
    rand::thread_rng().fill_bytes(&mut iv);
    let ct = cipher
        .encrypt(
            Nonce::from_slice(&iv),
            Payload {
                msg: plaintext,
                aad,
            },
        )
        .expect("encryption cannot fail");
    let mut out = Vec::with_capacity(IV_LEN + ct.len());
    out.extend_from_slice(&iv);
    out.extend_from_slice(&ct);
    out
}

pub fn sym_decrypt(key: &SharedKey, aad: &[u8], data: &[u8]) -> Result<Vec<u8>, ProtocolError> {
    if data.len() < IV_LEN {
        return Err(ProtocolError::DecryptionFailure);
    }
    let (iv, ct) = data.split_at(IV_LEN);
    let cipher = Aes256Gcm::new_from_slice(key).expect("32-byte key");
    cipher
        .decrypt(Nonce::from_slice(iv), Payload { msg: ct, aad })
        .map_err(|_| ProtocolError::DecryptionFailure)
}

/// Hybrid public-key encryption: a fresh AES key encrypts the payload,
/// OAEP wraps the key. Layout: u16 wrapped-key length, wrapped key, then
/// the symmetric IV-and-ciphertext block.
pub fn hybrid_encrypt(
    recipient: &PublicKey,
    aad: &[u8],
    plaintext: &[u8],
) -> Result<Vec<u8>, ProtocolError> {
    let session_key = random_shared_key();
    let wrapped = recipient
        .0
        .encrypt(&mut rand::thread_rng(), Oaep::new::<Sha256>(), &session_key)
        .map_err(|e| ProtocolError::Crypto(e.to_string()))?;
    let body = sym_encrypt(&session_key, aad, plaintext);
    let mut out = Vec::with_capacity(2 + wrapped.len() + body.len());
    out.extend_from_slice(&(wrapped.len() as u16).to_be_bytes());
    out.extend_from_slice(&wrapped);
    out.extend_from_slice(&body);
    Ok(out)
}

pub fn hybrid_decrypt(
    recipient: &PrivateKey,
    aad: &[u8],
    data: &[u8],
) -> Result<Vec<u8>, ProtocolError> {
    if data.len() < 2 {
        return Err(ProtocolError::DecryptionFailure);
    }
    let wrapped_len = u16::from_be_bytes([data[0], data[1]]) as usize;
    let rest = &data[2..];
    if rest.len() < wrapped_len {
        return Err(ProtocolError::DecryptionFailure);
    }
    let (wrapped, body) = rest.split_at(wrapped_len);
    let session_key: Vec<u8> = recipient
        .0
        .decrypt(Oaep::new::<Sha256>(), wrapped)
        .map_err(|_| ProtocolError::DecryptionFailure)?;
    let session_key: SharedKey = session_key
        .try_into()
        .map_err(|_| ProtocolError::DecryptionFailure)?;
    sym_decrypt(&session_key, aad, body)
}

/// Loads a PEM private key, generating and persisting one (with its
/// public half alongside) when the file does not exist yet.
pub fn load_or_generate_keypair(
    private_path: impl AsRef<Path>,
    public_path: impl AsRef<Path>,
) -> Result<PrivateKey, ProtocolError> {
    let private_path = private_path.as_ref();
    if private_path.exists() {
        return PrivateKey::from_pem_file(private_path);
    }
    let key = PrivateKey::generate()?;
    if let Some(parent) = private_path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(private_path, key.to_pem()?)?;
    fs::write(public_path, key.public_key().to_pem()?)?;
    Ok(key)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_bytes_round_trip() {
        for suite in [SuiteId::Md5Compat, SuiteId::Modern] {
            assert_eq!(SuiteId::from_byte(suite.as_byte()).unwrap(), suite);
        }
        assert!(matches!(
            SuiteId::from_byte(0x7f),
            Err(ProtocolError::UnknownSuite(0x7f))
        ));
    }

    #[test]
    fn digest_lengths_differ_by_suite() {
        assert_eq!(SuiteId::Md5Compat.digest(b"x").len(), 16);
        assert_eq!(SuiteId::Modern.digest(b"x").len(), 32);
    }

    #[test]
    fn sign_verify_round_trip_and_tamper() {
        let key = PrivateKey::generate().unwrap();
        let sig = key.sign(b"payload");
        key.public_key().verify(b"payload", &sig).unwrap();
        assert!(matches!(
            key.public_key().verify(b"payloaD", &sig),
            Err(ProtocolError::SignatureInvalid)
        ));
    }

    #[test]
    fn hybrid_round_trip_rejects_wrong_key_and_aad() {
        let alice = PrivateKey::generate().unwrap();
        let mallory = PrivateKey::generate().unwrap();
        let ct = hybrid_encrypt(&alice.public_key(), b"hdr", b"secret payload").unwrap();
        assert_eq!(
            hybrid_decrypt(&alice, b"hdr", &ct).unwrap(),
            b"secret payload"
        );
        assert!(matches!(
            hybrid_decrypt(&mallory, b"hdr", &ct),
            Err(ProtocolError::DecryptionFailure)
        ));
        assert!(matches!(
            hybrid_decrypt(&alice, b"HDR", &ct),
            Err(ProtocolError::DecryptionFailure)
        ));
    }

    #[test]
    fn sym_round_trip_rejects_any_flip() {
        let key = random_shared_key();
        let ct = sym_encrypt(&key, &[1, 2], b"hello");
        assert_eq!(sym_decrypt(&key, &[1, 2], &ct).unwrap(), b"hello");
        for i in 0..ct.len() {
            let mut bad = ct.clone();
            bad[i] ^= 0x01;
            assert!(
                sym_decrypt(&key, &[1, 2], &bad).is_err(),
                "byte {i} accepted"
            );
        }
    }

    #[test]
    fn pem_round_trips() {
        let key = PrivateKey::generate().unwrap();
        let restored = PrivateKey::from_pem(&key.to_pem().unwrap()).unwrap();
        let msg = b"check";
        restored.public_key().verify(msg, &key.sign(msg)).unwrap();

        let pub_pem = key.public_key().to_pem().unwrap();
        assert_eq!(PublicKey::from_pem(&pub_pem).unwrap(), key.public_key());
        let der = key.public_key().to_der();
        assert_eq!(PublicKey::from_der(&der).unwrap(), key.public_key());
    }
}
