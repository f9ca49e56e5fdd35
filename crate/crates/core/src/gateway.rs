//! The five-function application API.
//!
//! Applications reach the secure world only through [`GatewayMessage`]s on
//! the in-simulator channel. A message names an endpoint (`kind`) and carries
//! string fields; byte-valued fields are lowercase hex.
//!
//! ```text
//! request:  {"kind":"request_data","fields":{"recipient":"bob","recipient_cert":"<hex>"}}
//! response: {"kind":"result","request_id":7,"fields":{"status":"pending"}}
//! ```
//!
//! | kind                 | fields                                         |
//! |----------------------|------------------------------------------------|
//! | `request_data`       | `recipient`, `recipient_cert`?                 |
//! | `display_message`    | `sender`, `sender_cert`?, `envelope`           |
//! | `request_signature`  | `recipient`, `recipient_cert`?, `document`     |
//! | `display_signed_doc` | `sender`, `sender_cert`?, `document`           |
//! | `enable_sensor`      | `sensor`                                       |
//!
//! There is deliberately no endpoint for peer administration.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::authority::{PeerRegistry, Role};
use crate::device::Sensor;
use crate::taint::LabeledBytes;
use crate::time::SimTime;

#[derive(
    Debug,
    Clone,
    Copy,
    PartialEq,
    Eq,
    Hash,
    PartialOrd,
    Ord,
    Serialize,
    Deserialize,
    schemars::JsonSchema,
)]
#[serde(rename_all = "snake_case")]
pub enum ApiKind {
    RequestData,
    DisplayMessage,
    RequestSignature,
    DisplaySignedDoc,
    EnableSensor,
}

impl ApiKind {
    pub const ALL: [ApiKind; 5] = [
        ApiKind::RequestData,
        ApiKind::DisplayMessage,
        ApiKind::RequestSignature,
        ApiKind::DisplaySignedDoc,
        ApiKind::EnableSensor,
    ];

    pub fn endpoint(self) -> &'static str {
        match self {
            ApiKind::RequestData => "request_data",
            ApiKind::DisplayMessage => "display_message",
            ApiKind::RequestSignature => "request_signature",
            ApiKind::DisplaySignedDoc => "display_signed_doc",
            ApiKind::EnableSensor => "enable_sensor",
        }
    }

    pub fn from_endpoint(name: &str) -> Result<Self, GatewayError> {
        Self::ALL
            .into_iter()
            .find(|k| k.endpoint() == name)
            .ok_or_else(|| GatewayError::UnknownEndpoint(name.to_string()))
    }

    /// The role a peer must hold for this function, if the function involves
    /// a peer at all.
    pub fn required_role(self) -> Option<Role> {
        match self {
            ApiKind::RequestData | ApiKind::DisplayMessage => Some(Role::Contact),
            ApiKind::RequestSignature | ApiKind::DisplaySignedDoc => Some(Role::Signatory),
            ApiKind::EnableSensor => None,
        }
    }
}

impl fmt::Display for ApiKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.endpoint())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("unknown endpoint `{0}`")]
    UnknownEndpoint(String),
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("field `{0}` is not valid hex")]
    BadHex(&'static str),
    #[error("unknown sensor `{0}`")]
    UnknownSensor(String),
}

/// A call as issued by an application. Certificates, envelopes and
/// documents are raw bytes from the normal world and are parsed only inside
/// the kernel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ApiCall {
    RequestData {
        recipient: String,
        recipient_cert: Option<Vec<u8>>,
    },
    DisplayMessage {
        sender: String,
        sender_cert: Option<Vec<u8>>,
        envelope: Vec<u8>,
    },
    RequestSignature {
        recipient: String,
        recipient_cert: Option<Vec<u8>>,
        document: Vec<u8>,
    },
    DisplaySignedDoc {
        sender: String,
        sender_cert: Option<Vec<u8>>,
        document: Vec<u8>,
    },
    EnableSensor {
        sensor: Sensor,
    },
}

impl ApiCall {
    pub fn kind(&self) -> ApiKind {
        match self {
            ApiCall::RequestData { .. } => ApiKind::RequestData,
            ApiCall::DisplayMessage { .. } => ApiKind::DisplayMessage,
            ApiCall::RequestSignature { .. } => ApiKind::RequestSignature,
            ApiCall::DisplaySignedDoc { .. } => ApiKind::DisplaySignedDoc,
            ApiCall::EnableSensor { .. } => ApiKind::EnableSensor,
        }
    }

    pub fn peer(&self) -> Option<&str> {
        match self {
            ApiCall::RequestData { recipient: p, .. }
            | ApiCall::RequestSignature { recipient: p, .. }
            | ApiCall::DisplayMessage { sender: p, .. }
            | ApiCall::DisplaySignedDoc { sender: p, .. } => Some(p),
            ApiCall::EnableSensor { .. } => None,
        }
    }

    pub fn presented_cert(&self) -> Option<&[u8]> {
        match self {
            ApiCall::RequestData {
                recipient_cert: c, ..
            }
            | ApiCall::RequestSignature {
                recipient_cert: c, ..
            }
            | ApiCall::DisplayMessage { sender_cert: c, .. }
            | ApiCall::DisplaySignedDoc { sender_cert: c, .. } => c.as_deref(),
            ApiCall::EnableSensor { .. } => None,
        }
    }

    pub fn to_message(&self) -> GatewayMessage {
        let mut fields = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            fields.insert(k.to_string(), v);
        };
        match self {
            ApiCall::RequestData {
                recipient,
                recipient_cert,
            } => {
                put("recipient", recipient.clone());
                if let Some(c) = recipient_cert {
                    put("recipient_cert", hex::encode(c));
                }
            }
            ApiCall::DisplayMessage {
                sender,
                sender_cert,
                envelope,
            } => {
                put("sender", sender.clone());
                if let Some(c) = sender_cert {
                    put("sender_cert", hex::encode(c));
                }
                put("envelope", hex::encode(envelope));
            }
            ApiCall::RequestSignature {
                recipient,
                recipient_cert,
                document,
            } => {
                put("recipient", recipient.clone());
                if let Some(c) = recipient_cert {
                    put("recipient_cert", hex::encode(c));
                }
                put("document", hex::encode(document));
            }
            ApiCall::DisplaySignedDoc {
                sender,
                sender_cert,
                document,
            } => {
                put("sender", sender.clone());
                if let Some(c) = sender_cert {
                    put("sender_cert", hex::encode(c));
                }
                put("document", hex::encode(document));
            }
            ApiCall::EnableSensor { sensor } => put("sensor", sensor.as_str().to_string()),
        }
        GatewayMessage {
            kind: self.kind().endpoint().to_string(),
            request_id: None,
            fields,
        }
    }

    pub fn from_message(msg: &GatewayMessage) -> Result<Self, GatewayError> {
        let text = |k: &'static str| {
            msg.fields
                .get(k)
                .cloned()
                .ok_or(GatewayError::MissingField(k))
        };
        let bytes = |k: &'static str| -> Result<Vec<u8>, GatewayError> {
            hex::decode(text(k)?).map_err(|_| GatewayError::BadHex(k))
        };
        let opt_bytes = |k: &'static str| -> Result<Option<Vec<u8>>, GatewayError> {
            match msg.fields.get(k) {
                None => Ok(None),
                Some(v) => hex::decode(v)
                    .map(Some)
                    .map_err(|_| GatewayError::BadHex(k)),
            }
        };
        Ok(match ApiKind::from_endpoint(&msg.kind)? {
            ApiKind::RequestData => ApiCall::RequestData {
                recipient: text("recipient")?,
                recipient_cert: opt_bytes("recipient_cert")?,
            },
            ApiKind::DisplayMessage => ApiCall::DisplayMessage {
                sender: text("sender")?,
                sender_cert: opt_bytes("sender_cert")?,
                envelope: bytes("envelope")?,
            },
            ApiKind::RequestSignature => ApiCall::RequestSignature {
                recipient: text("recipient")?,
                recipient_cert: opt_bytes("recipient_cert")?,
                document: bytes("document")?,
            },
            ApiKind::DisplaySignedDoc => ApiCall::DisplaySignedDoc {
                sender: text("sender")?,
                sender_cert: opt_bytes("sender_cert")?,
                document: bytes("document")?,
            },
            ApiKind::EnableSensor => {
                let name = text("sensor")?;
                ApiCall::EnableSensor {
                    sensor: name
                        .parse()
                        .map_err(|_| GatewayError::UnknownSensor(name))?,
                }
            }
        })
    }
}

/// One frame on the application channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayMessage {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<u64>,
    #[serde(default)]
    pub fields: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ApiStatus {
    /// Validated and queued for the user.
    Pending,
    PeerRejected {
        reason: String,
    },
    SensorNotBlocked,
    QueueFull,
    UserDeclined,
    Completed {
        enabled_until: Option<SimTime>,
    },
    TimedOut,
    DiscardWindow {
        until: SimTime,
    },
}

impl ApiStatus {
    pub fn name(&self) -> &'static str {
        match self {
            ApiStatus::Pending => "pending",
            ApiStatus::PeerRejected { .. } => "peer_rejected",
            ApiStatus::SensorNotBlocked => "sensor_not_blocked",
            ApiStatus::QueueFull => "queue_full",
            ApiStatus::UserDeclined => "user_declined",
            ApiStatus::Completed { .. } => "completed",
            ApiStatus::TimedOut => "timed_out",
            ApiStatus::DiscardWindow { .. } => "discard_window",
        }
    }

    pub fn is_final(&self) -> bool {
        !matches!(self, ApiStatus::Pending)
    }
}

impl fmt::Display for ApiStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ApiStatus::PeerRejected { reason } => write!(f, "peer_rejected({reason})"),
            ApiStatus::Completed {
                enabled_until: Some(t),
            } => write!(f, "completed(until={})", t.millis()),
            ApiStatus::DiscardWindow { until } => {
                write!(f, "discard_window(until={})", until.millis())
            }
            other => f.write_str(other.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiResult {
    pub request_id: u64,
    pub app: String,
    pub kind: ApiKind,
    pub status: ApiStatus,
    /// Sealed output; present only on `Completed` data and signature requests.
    pub output: Option<LabeledBytes>,
}

impl ApiResult {
    pub fn to_message(&self) -> GatewayMessage {
        let mut fields = BTreeMap::new();
        fields.insert("status".to_string(), self.status.to_string());
        fields.insert("endpoint".to_string(), self.kind.endpoint().to_string());
        if let Some(out) = &self.output {
            fields.insert("output".to_string(), hex::encode(out.bytes()));
        }
        GatewayMessage {
            kind: "result".into(),
            request_id: Some(self.request_id),
            fields,
        }
    }
}

/// The role and document-type part of admission, without the cryptographic
/// checks on presented envelopes and documents.
pub fn rbac_check(
    registry: &PeerRegistry,
    kind: ApiKind,
    peer: &str,
    doc_type: Option<&str>,
) -> Result<(), String> {
    let Some(role) = kind.required_role() else {
        return Ok(());
    };
    let Some(cert) = registry.lookup(peer) else {
        return Err(format!("unknown peer `{peer}`"));
    };
    if cert.role != role {
        return Err(format!(
            "`{peer}` is a {} peer, {kind} requires {role}",
            cert.role
        ));
    }
    if registry.check_permission(peer, role, doc_type, None) {
        Ok(())
    } else if let Some(dt) = doc_type {
        Err(format!("`{peer}` may not present `{dt}` documents"))
    } else {
        Err(format!("`{peer}` failed chain validation"))
    }
}
