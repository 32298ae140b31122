//! The four wire messages of the deployment channel.
//!
//! Signed messages carry their nonce and field digest in the clear and a
//! detached signature over `nonce || digest`; the verifier recomputes the
//! digest from the transmitted bytes and compares, so tampering with a
//! covered field surfaces as a digest mismatch while tampering with the
//! authentication block surfaces as an invalid signature.

use super::suite::{SuiteId, NONCE_LEN};
use super::wire::{
    decode_fields, encode_fields, Frame, TYPE_ACK, TYPE_FURTHER, TYPE_REGISTRATION_REQUEST,
    TYPE_REPLY,
};
use super::ProtocolError;

pub const ACK_REGISTERED: &str = "REGISTERED";
pub const ACK_DENIED: &str = "DENIED";
pub const STATUS_SUCCESS: &str = "SUCCESS";
pub const STATUS_FAILURE: &str = "FAILURE";

/// AAD binding a ciphertext to the frame header that carried it.
pub fn header_aad(msg_type: u8, suite: SuiteId) -> [u8; 2] {
    [msg_type, suite.as_byte()]
}

fn nonce_from(bytes: &[u8]) -> Result<[u8; NONCE_LEN], ProtocolError> {
    bytes
        .try_into()
        .map_err(|_| ProtocolError::Malformed("nonce must be 16 bytes"))
}

fn utf8(bytes: Vec<u8>) -> Result<String, ProtocolError> {
    String::from_utf8(bytes).map_err(|_| ProtocolError::Malformed("field is not UTF-8"))
}

fn expect_type(frame: &Frame, expected: u8) -> Result<SuiteId, ProtocolError> {
    if frame.msg_type != expected {
        return Err(ProtocolError::UnexpectedMessage {
            expected,
            got: frame.msg_type,
        });
    }
    SuiteId::from_byte(frame.suite)
}

/// Registration request: hybrid encryption, under the provider's public
/// key, of `ep_code || enterprise public key`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistrationRequest {
    pub suite: SuiteId,
    pub envelope: Vec<u8>,
}

impl RegistrationRequest {
    pub fn to_frame(&self) -> Frame {
        Frame {
            msg_type: TYPE_REGISTRATION_REQUEST,
            suite: self.suite.as_byte(),
            payload: encode_fields(&[&self.envelope]),
        }
    }

    pub fn from_frame(frame: &Frame) -> Result<Self, ProtocolError> {
        let suite = expect_type(frame, TYPE_REGISTRATION_REQUEST)?;
        let mut fields = decode_fields(&frame.payload, 1)?;
        Ok(Self {
            suite,
            envelope: fields.remove(0),
        })
    }
}

/// Provider's reply: encrypted shared key, plaintext-but-signed ack
/// token, and the authentication block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplyMessage {
    pub suite: SuiteId,
    pub enc_shared_key: Vec<u8>,
    pub ack: String,
    pub nonce: [u8; NONCE_LEN],
    pub digest: Vec<u8>,
    pub signature: Vec<u8>,
}

impl ReplyMessage {
    /// Digest input: the length-prefixed fields preceding the
    /// authentication block, in wire order.
    pub fn digest_input(&self) -> Vec<u8> {
        encode_fields(&[&self.enc_shared_key, self.ack.as_bytes()])
    }

    pub fn signed_message(&self) -> Vec<u8> {
        let mut msg = self.nonce.to_vec();
        msg.extend_from_slice(&self.digest);
        msg
    }

    pub fn to_frame(&self) -> Frame {
        Frame {
            msg_type: TYPE_REPLY,
            suite: self.suite.as_byte(),
            payload: encode_fields(&[
                &self.enc_shared_key,
                self.ack.as_bytes(),
                &self.nonce,
                &self.digest,
                &self.signature,
            ]),
        }
    }

    pub fn from_frame(frame: &Frame) -> Result<Self, ProtocolError> {
        let suite = expect_type(frame, TYPE_REPLY)?;
        let mut fields = decode_fields(&frame.payload, 5)?;
        let signature = fields.pop().expect("five fields");
        let digest = fields.pop().expect("five fields");
        let nonce = nonce_from(&fields.pop().expect("five fields"))?;
        let ack = utf8(fields.pop().expect("five fields"))?;
        let enc_shared_key = fields.pop().expect("five fields");
        Ok(Self {
            suite,
            enc_shared_key,
            ack,
            nonce,
            digest,
            signature,
        })
    }
}

/// Post-registration traffic: the serialized strategy under the shared
/// key, authenticated by the enterprise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FurtherMessage {
    pub suite: SuiteId,
    pub enc_payload: Vec<u8>,
    pub nonce: [u8; NONCE_LEN],
    pub digest: Vec<u8>,
    pub signature: Vec<u8>,
}

impl FurtherMessage {
    pub fn digest_input(&self) -> Vec<u8> {
        encode_fields(&[&self.enc_payload])
    }

    pub fn signed_message(&self) -> Vec<u8> {
        let mut msg = self.nonce.to_vec();
        msg.extend_from_slice(&self.digest);
        msg
    }

    pub fn to_frame(&self) -> Frame {
        Frame {
            msg_type: TYPE_FURTHER,
            suite: self.suite.as_byte(),
            payload: encode_fields(&[
                &self.enc_payload,
                &self.nonce,
                &self.digest,
                &self.signature,
            ]),
        }
    }

    pub fn from_frame(frame: &Frame) -> Result<Self, ProtocolError> {
        let suite = expect_type(frame, TYPE_FURTHER)?;
        let mut fields = decode_fields(&frame.payload, 4)?;
        let signature = fields.pop().expect("four fields");
        let digest = fields.pop().expect("four fields");
        let nonce = nonce_from(&fields.pop().expect("four fields"))?;
        let enc_payload = fields.pop().expect("four fields");
        Ok(Self {
            suite,
            enc_payload,
            nonce,
            digest,
            signature,
        })
    }
}

/// Provider's signed outcome for one strategy request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AckMessage {
    pub suite: SuiteId,
    pub status: String,
    pub reason: String,
    pub nonce: [u8; NONCE_LEN],
    pub digest: Vec<u8>,
    pub signature: Vec<u8>,
}

impl AckMessage {
    pub fn digest_input(&self) -> Vec<u8> {
        encode_fields(&[self.status.as_bytes(), self.reason.as_bytes()])
    }

    pub fn signed_message(&self) -> Vec<u8> {
        let mut msg = self.nonce.to_vec();
        msg.extend_from_slice(&self.digest);
        msg
    }

    pub fn to_frame(&self) -> Frame {
        Frame {
            msg_type: TYPE_ACK,
            suite: self.suite.as_byte(),
            payload: encode_fields(&[
                self.status.as_bytes(),
                self.reason.as_bytes(),
                &self.nonce,
                &self.digest,
                &self.signature,
            ]),
        }
    }

    pub fn from_frame(frame: &Frame) -> Result<Self, ProtocolError> {
        let suite = expect_type(frame, TYPE_ACK)?;
        let mut fields = decode_fields(&frame.payload, 5)?;
        let signature = fields.pop().expect("five fields");
        let digest = fields.pop().expect("five fields");
        let nonce = nonce_from(&fields.pop().expect("five fields"))?;
        let reason = utf8(fields.pop().expect("five fields"))?;
        let status = utf8(fields.pop().expect("five fields"))?;
        Ok(Self {
            suite,
            status,
            reason,
            nonce,
            digest,
            signature,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reply_frame_round_trip() {
        let reply = ReplyMessage {
            suite: SuiteId::Md5Compat,
            enc_shared_key: vec![1, 2, 3],
            ack: ACK_REGISTERED.to_string(),
            nonce: [7u8; NONCE_LEN],
            digest: vec![9; 16],
            signature: vec![4; 64],
        };
        let parsed = ReplyMessage::from_frame(&reply.to_frame()).unwrap();
        assert_eq!(parsed, reply);
    }

    #[test]
    fn further_frame_round_trip() {
        let msg = FurtherMessage {
            suite: SuiteId::Modern,
            enc_payload: vec![5; 40],
            nonce: [1u8; NONCE_LEN],
            digest: vec![2; 32],
            signature: vec![3; 64],
        };
        assert_eq!(FurtherMessage::from_frame(&msg.to_frame()).unwrap(), msg);
    }

    #[test]
    fn wrong_type_is_rejected() {
        let msg = FurtherMessage {
            suite: SuiteId::Modern,
            enc_payload: vec![],
            nonce: [0u8; NONCE_LEN],
            digest: vec![],
            signature: vec![],
        };
        let frame = msg.to_frame();
        assert!(matches!(
            ReplyMessage::from_frame(&frame),
            Err(ProtocolError::UnexpectedMessage { .. })
        ));
    }

    #[test]
    fn bad_nonce_length_is_malformed() {
        let frame = Frame {
            msg_type: TYPE_FURTHER,
            suite: SuiteId::Md5Compat.as_byte(),
            payload: encode_fields(&[b"payload", b"short", b"digest", b"sig"]),
        };
        assert!(matches!(
            FurtherMessage::from_frame(&frame),
            Err(ProtocolError::Malformed(_))
        ));
    }
}
