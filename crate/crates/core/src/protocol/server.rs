//! Provider side of the deployment channel: enrollment-backed
//! registration, verification and execution of strategy requests against
//! the authoritative cloud state, and the blocking TCP accept loop.
//!
//! Sessions are per-connection state machines; committed state
//! transitions serialize through the single `inner` lock. Replay
//! protection is per tenant and survives re-keying, so a transcript
//! replayed on a fresh connection is still rejected by its nonce.

use std::collections::{BTreeMap, HashSet};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use log::{info, warn};

use crate::cloud::CloudState;
use crate::scenario::{dump_state, Scenario, TopologyDecl};
use crate::strategy::Strategy;

use super::messages::{
    header_aad, AckMessage, FurtherMessage, RegistrationRequest, ReplyMessage, ACK_DENIED,
    ACK_REGISTERED, STATUS_FAILURE, STATUS_SUCCESS,
};
use super::suite::{
    hybrid_decrypt, hybrid_encrypt, random_nonce, random_shared_key, sym_decrypt, PrivateKey,
    PublicKey, SharedKey,
};
use super::wire::{
    decode_fields, read_frame, write_frame, Frame, TYPE_ACK, TYPE_FURTHER,
    TYPE_REGISTRATION_REQUEST, TYPE_REPLY,
};
use super::ProtocolError;

/// Why a strategy request was not executed. Every rejection leaves the
/// cloud state untouched.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RejectReason {
    NoSession,
    SignatureInvalid,
    DigestMismatch,
    ReplayedNonce,
    DecryptionFailure,
    MalformedStrategy,
    Unauthorized,
    ExecutionFailed(String),
}

impl RejectReason {
    pub fn code(&self) -> String {
        match self {
            RejectReason::NoSession => "no_session".into(),
            RejectReason::SignatureInvalid => "signature_invalid".into(),
            RejectReason::DigestMismatch => "digest_mismatch".into(),
            RejectReason::ReplayedNonce => "replayed_nonce".into(),
            RejectReason::DecryptionFailure => "decryption_failed".into(),
            RejectReason::MalformedStrategy => "malformed_strategy".into(),
            RejectReason::Unauthorized => "unauthorized".into(),
            RejectReason::ExecutionFailed(detail) => format!("execution_failed: {detail}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StrategyDecision {
    Executed(Strategy),
    Rejected(RejectReason),
}

struct TenantChannel {
    shared_key: SharedKey,
    enterprise_pub: PublicKey,
}

struct ProviderInner {
    tenants: BTreeMap<String, TenantChannel>,
    /// Per-tenant nonces accepted so far; survives re-keying.
    seen_nonces: BTreeMap<String, HashSet<[u8; 16]>>,
    cloud: CloudState,
}

/// Per-connection session: which tenant (if any) has registered on it.
#[derive(Debug, Default)]
pub struct SessionCtx {
    pub tenant: Option<String>,
}

pub struct ProviderServer {
    keypair: PrivateKey,
    enrollment: BTreeMap<String, String>,
    topology: TopologyDecl,
    ep_code_label: String,
    inner: Mutex<ProviderInner>,
    /// When set, the cloud state is dumped here after every commit.
    pub state_dump: Option<PathBuf>,
    pub idle_timeout: Duration,
}

impl ProviderServer {
    pub fn new(
        keypair: PrivateKey,
        enrollment: BTreeMap<String, String>,
        scenario: &Scenario,
    ) -> Self {
        Self {
            keypair,
            enrollment,
            topology: scenario.topology.clone(),
            ep_code_label: scenario.ep_code.clone(),
            inner: Mutex::new(ProviderInner {
                tenants: BTreeMap::new(),
                seen_nonces: BTreeMap::new(),
                cloud: scenario.cloud.clone(),
            }),
            state_dump: None,
            idle_timeout: Duration::from_secs(300),
        }
    }

    pub fn public_key(&self) -> PublicKey {
        self.keypair.public_key()
    }

    /// Snapshot of the authoritative state.
    pub fn cloud_state(&self) -> CloudState {
        self.inner.lock().expect("provider lock").cloud.clone()
    }

    /// Shared key currently installed for a tenant, if any.
    pub fn shared_key_of(&self, tenant: &str) -> Option<SharedKey> {
        self.inner
            .lock()
            .expect("provider lock")
            .tenants
            .get(tenant)
            .map(|t| t.shared_key)
    }

    /// Authenticates a registration request. A known ep_code installs a
    /// fresh shared key (re-keying on repeat registrations) and returns
    /// the tenant; an unknown ep_code yields a signed DENIED reply. An
    /// undecryptable envelope is a protocol error and closes the session.
    pub fn process_registration(
        &self,
        req: &RegistrationRequest,
    ) -> Result<(ReplyMessage, Option<String>), ProtocolError> {
        let aad = header_aad(TYPE_REGISTRATION_REQUEST, req.suite);
        let plain = hybrid_decrypt(&self.keypair, &aad, &req.envelope)?;
        let mut fields = decode_fields(&plain, 2)?;
        let enterprise_pub = PublicKey::from_der(&fields.pop().expect("two fields"))?;
        let ep_code = String::from_utf8(fields.pop().expect("two fields"))
            .map_err(|_| ProtocolError::Malformed("ep_code is not UTF-8"))?;

        let (ack, enc_shared_key, tenant) = match self.enrollment.get(&ep_code) {
            Some(tenant) => {
                let key = random_shared_key();
                let enc =
                    hybrid_encrypt(&enterprise_pub, &header_aad(TYPE_REPLY, req.suite), &key)?;
                let mut inner = self.inner.lock().expect("provider lock");
                inner.tenants.insert(
                    tenant.clone(),
                    TenantChannel {
                        shared_key: key,
                        enterprise_pub,
                    },
                );
                info!("registered tenant {tenant}");
                (ACK_REGISTERED, enc, Some(tenant.clone()))
            }
            None => {
                warn!("registration denied for unknown ep_code");
                (ACK_DENIED, Vec::new(), None)
            }
        };

        let mut reply = ReplyMessage {
            suite: req.suite,
            enc_shared_key,
            ack: ack.to_string(),
            nonce: random_nonce(),
            digest: Vec::new(),
            signature: Vec::new(),
        };
        reply.digest = req.suite.digest(&reply.digest_input());
        reply.signature = self.keypair.sign(&reply.signed_message());
        Ok((reply, tenant))
    }

    /// Verifies and executes one strategy request, answering with a
    /// signed ack either way. Check order: session, signature, digest,
    /// nonce, decryption, authorization, execution.
    pub fn process_strategy(
        &self,
        tenant: Option<&str>,
        msg: &FurtherMessage,
    ) -> (AckMessage, StrategyDecision) {
        let decision = self.check_and_execute(tenant, msg);
        let (status, reason) = match &decision {
            StrategyDecision::Executed(strategy) => {
                info!("executed {}", strategy.describe());
                (STATUS_SUCCESS, String::new())
            }
            StrategyDecision::Rejected(reason) => {
                warn!("rejected strategy request: {}", reason.code());
                (STATUS_FAILURE, reason.code())
            }
        };
        let mut ack = AckMessage {
            suite: msg.suite,
            status: status.to_string(),
            reason,
            nonce: random_nonce(),
            digest: Vec::new(),
            signature: Vec::new(),
        };
        ack.digest = msg.suite.digest(&ack.digest_input());
        ack.signature = self.keypair.sign(&ack.signed_message());
        (ack, decision)
    }

    fn check_and_execute(&self, tenant: Option<&str>, msg: &FurtherMessage) -> StrategyDecision {
        use StrategyDecision::Rejected;

        let Some(tenant) = tenant else {
            return Rejected(RejectReason::NoSession);
        };
        let mut inner = self.inner.lock().expect("provider lock");
        let Some(channel) = inner.tenants.get(tenant) else {
            return Rejected(RejectReason::NoSession);
        };
        let enterprise_pub = channel.enterprise_pub.clone();
        let shared_key = channel.shared_key;

        if enterprise_pub
            .verify(&msg.signed_message(), &msg.signature)
            .is_err()
        {
            return Rejected(RejectReason::SignatureInvalid);
        }
        if msg.suite.digest(&msg.digest_input()) != msg.digest {
            return Rejected(RejectReason::DigestMismatch);
        }
        // The message is authentic from here on; its nonce is consumed
        // even if a later step fails.
        let seen = inner.seen_nonces.entry(tenant.to_string()).or_default();
        if !seen.insert(msg.nonce) {
            return Rejected(RejectReason::ReplayedNonce);
        }

        let plain = match sym_decrypt(
            &shared_key,
            &header_aad(TYPE_FURTHER, msg.suite),
            &msg.enc_payload,
        ) {
            Ok(p) => p,
            Err(_) => return Rejected(RejectReason::DecryptionFailure),
        };
        let strategy: Strategy = match serde_json::from_slice(&plain) {
            Ok(s) => s,
            Err(_) => return Rejected(RejectReason::MalformedStrategy),
        };

        match inner.cloud.vms().get(strategy.vm_id()) {
            Some(vm) if vm.tenant == tenant => {}
            _ => return Rejected(RejectReason::Unauthorized),
        }

        let result = match &strategy {
            Strategy::LiveMigrate { vm_id, dest_host } => {
                inner.cloud.apply_migration(vm_id, dest_host)
            }
            Strategy::Patch { vm_id, cve_id } => inner.cloud.apply_patch(vm_id, cve_id),
        };
        match result {
            Ok(next) => {
                inner.cloud = next;
                StrategyDecision::Executed(strategy)
            }
            Err(e) => Rejected(RejectReason::ExecutionFailed(e.to_string())),
        }
    }

    /// Full server-side handling of one frame: parse, dispatch, answer.
    /// Client-bound message types and unparsable frames are protocol
    /// errors that close the connection.
    pub fn handle_frame(
        &self,
        session: &mut SessionCtx,
        frame: &Frame,
    ) -> Result<(Frame, Option<Strategy>), ProtocolError> {
        match frame.msg_type {
            TYPE_REGISTRATION_REQUEST => {
                let req = RegistrationRequest::from_frame(frame)?;
                let (reply, tenant) = self.process_registration(&req)?;
                session.tenant = tenant;
                Ok((reply.to_frame(), None))
            }
            TYPE_FURTHER => {
                let msg = FurtherMessage::from_frame(frame)?;
                let (ack, decision) = self.process_strategy(session.tenant.as_deref(), &msg);
                let executed = match decision {
                    StrategyDecision::Executed(strategy) => Some(strategy),
                    StrategyDecision::Rejected(_) => None,
                };
                Ok((ack.to_frame(), executed))
            }
            TYPE_REPLY | TYPE_ACK => Err(ProtocolError::WrongDirection(frame.msg_type)),
            other => Err(ProtocolError::UnknownMessageType(other)),
        }
    }

    fn dump_if_configured(&self) {
        let Some(path) = &self.state_dump else {
            return;
        };
        let inner = self.inner.lock().expect("provider lock");
        let dump = dump_state(&inner.cloud, &self.topology, &self.ep_code_label);
        drop(inner);
        match serde_json::to_string_pretty(&dump) {
            Ok(json) => {
                if let Err(e) = std::fs::write(path, json) {
                    warn!("state dump failed: {e}");
                }
            }
            Err(e) => warn!("state dump serialization failed: {e}"),
        }
    }

    fn handle_connection(self: &Arc<Self>, stream: TcpStream) {
        let peer = stream
            .peer_addr()
            .map(|a| a.to_string())
            .unwrap_or_else(|_| "<unknown>".into());
        if let Err(e) = self.session_loop(stream) {
            match e {
                ProtocolError::Io(ref io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
                    info!("session {peer} closed");
                }
                other => warn!("session {peer} terminated: {other}"),
            }
        }
    }

    fn session_loop(self: &Arc<Self>, mut stream: TcpStream) -> Result<(), ProtocolError> {
        stream.set_read_timeout(Some(self.idle_timeout))?;
        stream.set_nodelay(true)?;
        let mut session = SessionCtx::default();
        loop {
            let frame = read_frame(&mut stream)?;
            let (response, executed) = self.handle_frame(&mut session, &frame)?;
            write_frame(&mut stream, &response)?;
            if executed.is_some() {
                self.dump_if_configured();
            }
        }
    }

    /// Accept loop: one thread per connection. Runs until the listener
    /// fails.
    pub fn serve(self: Arc<Self>, listener: TcpListener) -> std::io::Result<()> {
        info!(
            "provider listening on {}",
            listener
                .local_addr()
                .map(|a| a.to_string())
                .unwrap_or_default()
        );
        for stream in listener.incoming() {
            let stream = stream?;
            let server = Arc::clone(&self);
            std::thread::spawn(move || server.handle_connection(stream));
        }
        Ok(())
    }
}
