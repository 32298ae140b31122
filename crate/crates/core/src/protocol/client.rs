//! Enterprise side of the deployment channel: key material, the three
//! client operations (register, verify the reply, send a strategy), and
//! a blocking TCP client wrapping them.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use crate::strategy::Strategy;

use super::messages::{
    header_aad, AckMessage, FurtherMessage, RegistrationRequest, ReplyMessage, ACK_REGISTERED,
    STATUS_SUCCESS,
};
use super::suite::{
    hybrid_decrypt, hybrid_encrypt, random_nonce, sym_encrypt, PrivateKey, PublicKey, SharedKey,
    SuiteId, NONCE_LEN,
};
use super::wire::{encode_fields, read_frame, write_frame, TYPE_FURTHER, TYPE_REPLY};
use super::ProtocolError;

/// Everything the enterprise holds for the channel. The shared key is
/// absent until a registration exchange succeeds.
#[derive(Debug)]
pub struct KeyMaterial {
    pub keypair: PrivateKey,
    pub ep_code: String,
    pub shared_key: Option<SharedKey>,
    seen_nonces: HashSet<[u8; NONCE_LEN]>,
}

impl KeyMaterial {
    pub fn new(keypair: PrivateKey, ep_code: impl Into<String>) -> Self {
        Self {
            keypair,
            ep_code: ep_code.into(),
            shared_key: None,
            seen_nonces: HashSet::new(),
        }
    }

    pub fn public_key(&self) -> PublicKey {
        self.keypair.public_key()
    }
}

/// Builds the registration request: the concatenated ep_code and
/// enterprise public key, hybrid-encrypted under the provider key.
pub fn build_registration_request(
    km: &KeyMaterial,
    provider_pub: &PublicKey,
    suite: SuiteId,
) -> Result<RegistrationRequest, ProtocolError> {
    let len = km.ep_code.len();
    if !(8..=64).contains(&len) {
        return Err(ProtocolError::Malformed("ep_code must be 8..=64 bytes"));
    }
    let plain = encode_fields(&[km.ep_code.as_bytes(), &km.public_key().to_der()]);
    let envelope = hybrid_encrypt(
        provider_pub,
        &header_aad(super::wire::TYPE_REGISTRATION_REQUEST, suite),
        &plain,
    )?;
    Ok(RegistrationRequest { suite, envelope })
}

/// Authenticates the provider's reply and installs the shared key.
/// Checks run in order: signature, digest, nonce freshness, ack token.
/// Each failure is distinct and aborts key installation.
pub fn verify_reply(
    km: &mut KeyMaterial,
    reply: &ReplyMessage,
    provider_pub: &PublicKey,
) -> Result<SharedKey, ProtocolError> {
    provider_pub.verify(&reply.signed_message(), &reply.signature)?;
    if reply.suite.digest(&reply.digest_input()) != reply.digest {
        return Err(ProtocolError::DigestMismatch);
    }
    if !km.seen_nonces.insert(reply.nonce) {
        return Err(ProtocolError::ReplayedNonce);
    }
    if reply.ack != ACK_REGISTERED {
        return Err(ProtocolError::RegistrationDenied(reply.ack.clone()));
    }
    let key = hybrid_decrypt(
        &km.keypair,
        &header_aad(TYPE_REPLY, reply.suite),
        &reply.enc_shared_key,
    )?;
    let key: SharedKey = key
        .try_into()
        .map_err(|_| ProtocolError::DecryptionFailure)?;
    km.shared_key = Some(key);
    Ok(key)
}

/// Builds the strategy message: the serialized strategy under the shared
/// key, authenticated by the enterprise signature over nonce and digest.
pub fn send_strategy(
    km: &KeyMaterial,
    strategy: &Strategy,
) -> Result<FurtherMessage, ProtocolError> {
    send_strategy_with_suite(km, strategy, SuiteId::Md5Compat)
}

pub fn send_strategy_with_suite(
    km: &KeyMaterial,
    strategy: &Strategy,
    suite: SuiteId,
) -> Result<FurtherMessage, ProtocolError> {
    let key = km.shared_key.ok_or(ProtocolError::NoSession)?;
    let plain = serde_json::to_vec(strategy).expect("strategy serializes");
    let enc_payload = sym_encrypt(&key, &header_aad(TYPE_FURTHER, suite), &plain);
    let mut msg = FurtherMessage {
        suite,
        enc_payload,
        nonce: random_nonce(),
        digest: Vec::new(),
        signature: Vec::new(),
    };
    msg.digest = suite.digest(&msg.digest_input());
    msg.signature = km.keypair.sign(&msg.signed_message());
    Ok(msg)
}

/// Outcome of one strategy request, as acknowledged by the provider.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrategyAck {
    pub success: bool,
    pub reason: String,
}

/// Authenticates a provider ack: signature, digest, nonce freshness.
pub fn verify_ack(
    km: &mut KeyMaterial,
    ack: &AckMessage,
    provider_pub: &PublicKey,
) -> Result<StrategyAck, ProtocolError> {
    provider_pub.verify(&ack.signed_message(), &ack.signature)?;
    if ack.suite.digest(&ack.digest_input()) != ack.digest {
        return Err(ProtocolError::DigestMismatch);
    }
    if !km.seen_nonces.insert(ack.nonce) {
        return Err(ProtocolError::ReplayedNonce);
    }
    Ok(StrategyAck {
        success: ack.status == STATUS_SUCCESS,
        reason: ack.reason.clone(),
    })
}

/// Blocking TCP client for the channel.
pub struct EnterpriseClient<S = TcpStream> {
    stream: S,
    pub km: KeyMaterial,
    provider_pub: PublicKey,
    suite: SuiteId,
}

impl EnterpriseClient<TcpStream> {
    pub fn connect(
        addr: impl ToSocketAddrs,
        km: KeyMaterial,
        provider_pub: PublicKey,
        suite: SuiteId,
        timeout: Duration,
    ) -> Result<Self, ProtocolError> {
        let addr = addr
            .to_socket_addrs()?
            .next()
            .ok_or(ProtocolError::Malformed("endpoint resolves to no address"))?;
        let stream = TcpStream::connect_timeout(&addr, timeout)?;
        stream.set_read_timeout(Some(timeout))?;
        stream.set_write_timeout(Some(timeout))?;
        stream.set_nodelay(true)?;
        Ok(Self {
            stream,
            km,
            provider_pub,
            suite,
        })
    }
}

impl<S: Read + Write> EnterpriseClient<S> {
    pub fn over_stream(
        stream: S,
        km: KeyMaterial,
        provider_pub: PublicKey,
        suite: SuiteId,
    ) -> Self {
        Self {
            stream,
            km,
            provider_pub,
            suite,
        }
    }

    /// Registration round trip; installs and returns the shared key.
    pub fn register(&mut self) -> Result<SharedKey, ProtocolError> {
        let request = build_registration_request(&self.km, &self.provider_pub, self.suite)?;
        write_frame(&mut self.stream, &request.to_frame())?;
        let frame = read_frame(&mut self.stream)?;
        let reply = ReplyMessage::from_frame(&frame)?;
        verify_reply(&mut self.km, &reply, &self.provider_pub)
    }

    /// Sends one strategy, registering first if no shared key is cached.
    pub fn request_strategy(&mut self, strategy: &Strategy) -> Result<StrategyAck, ProtocolError> {
        if self.km.shared_key.is_none() {
            self.register()?;
        }
        let msg = send_strategy_with_suite(&self.km, strategy, self.suite)?;
        write_frame(&mut self.stream, &msg.to_frame())?;
        let frame = read_frame(&mut self.stream)?;
        let ack = AckMessage::from_frame(&frame)?;
        verify_ack(&mut self.km, &ack, &self.provider_pub)
    }
}
