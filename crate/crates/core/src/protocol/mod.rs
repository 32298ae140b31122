//! Secure deployment channel between enterprise and cloud provider:
//! registration with key exchange, authenticated strategy requests, and
//! replay defense, over a length-prefixed TCP wire format.

pub mod client;
pub mod messages;
pub mod server;
pub mod suite;
pub mod wire;

use thiserror::Error;

pub use client::{
    build_registration_request, send_strategy, verify_ack, verify_reply, EnterpriseClient,
    KeyMaterial, StrategyAck,
};
pub use messages::{AckMessage, FurtherMessage, RegistrationRequest, ReplyMessage};
pub use server::{ProviderServer, RejectReason, SessionCtx, StrategyDecision};
pub use suite::{PrivateKey, PublicKey, SharedKey, SuiteId};
pub use wire::{Frame, MAX_FRAME};

/// Default TCP port of the provider server.
pub const DEFAULT_PORT: u16 = 7788;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("frame of {0} bytes exceeds the maximum")]
    FrameTooLarge(u32),
    #[error("malformed message: {0}")]
    Malformed(&'static str),
    #[error("unknown message type {0:#04x}")]
    UnknownMessageType(u8),
    #[error("message type {0:#04x} is not valid in this direction")]
    WrongDirection(u8),
    #[error("unknown suite id {0:#04x}")]
    UnknownSuite(u8),
    #[error("unexpected message type {got:#04x} (expected {expected:#04x})")]
    UnexpectedMessage { expected: u8, got: u8 },
    #[error("decryption failed")]
    DecryptionFailure,
    #[error("signature verification failed")]
    SignatureInvalid,
    #[error("digest mismatch")]
    DigestMismatch,
    #[error("replayed nonce")]
    ReplayedNonce,
    #[error("registration denied: {0}")]
    RegistrationDenied(String),
    #[error("no shared key established")]
    NoSession,
    #[error("crypto failure: {0}")]
    Crypto(String),
}
