use std::collections::VecDeque;

use serde::Serialize;

use crate::authority::PeerCertificate;
use crate::crypto::SignedDocument;
use crate::device::Sensor;
use crate::gateway::ApiKind;
use crate::taint::LabeledBytes;
use crate::time::SimTime;

/// What the kernel keeps for a request awaiting the user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RequestPayload {
    Data {
        recipient: PeerCertificate,
    },
    /// Already verified and decrypted at admission; shown on approval.
    Message {
        sender: PeerCertificate,
        plaintext: LabeledBytes,
    },
    Signature {
        recipient: PeerCertificate,
        document: SignedDocument,
    },
    SignedDoc {
        sender: PeerCertificate,
        document: SignedDocument,
    },
    Sensor {
        sensor: Sensor,
    },
}

impl RequestPayload {
    pub fn kind(&self) -> ApiKind {
        match self {
            RequestPayload::Data { .. } => ApiKind::RequestData,
            RequestPayload::Message { .. } => ApiKind::DisplayMessage,
            RequestPayload::Signature { .. } => ApiKind::RequestSignature,
            RequestPayload::SignedDoc { .. } => ApiKind::DisplaySignedDoc,
            RequestPayload::Sensor { .. } => ApiKind::EnableSensor,
        }
    }

    pub fn peer(&self) -> Option<&PeerCertificate> {
        match self {
            RequestPayload::Data { recipient: p }
            | RequestPayload::Message { sender: p, .. }
            | RequestPayload::Signature { recipient: p, .. }
            | RequestPayload::SignedDoc { sender: p, .. } => Some(p),
            RequestPayload::Sensor { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiRequest {
    pub request_id: u64,
    pub origin_app: String,
    pub created_at: SimTime,
    pub payload: RequestPayload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct QueueFull;

/// Bounded FIFO of requests awaiting the user. Global insertion order is
/// kept, which makes it FIFO per origin app as well.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingQueue {
    capacity: usize,
    items: VecDeque<ApiRequest>,
}

impl PendingQueue {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: VecDeque::new(),
        }
    }

    pub fn push(&mut self, req: ApiRequest) -> Result<(), QueueFull> {
        if self.items.len() >= self.capacity {
            return Err(QueueFull);
        }
        self.items.push_back(req);
        Ok(())
    }

    pub fn get(&self, request_id: u64) -> Option<&ApiRequest> {
        self.items.iter().find(|r| r.request_id == request_id)
    }

    pub fn remove(&mut self, request_id: u64) -> Option<ApiRequest> {
        let idx = self.items.iter().position(|r| r.request_id == request_id)?;
        self.items.remove(idx)
    }

    /// An `EnableSensor` request for the same sensor from the same app.
    pub fn find_sensor_duplicate(&self, app: &str, sensor: Sensor) -> Option<u64> {
        self.items
            .iter()
            .find(|r| {
                r.origin_app == app
                    && matches!(r.payload, RequestPayload::Sensor { sensor: s } if s == sensor)
            })
            .map(|r| r.request_id)
    }

    /// Removes and returns requests created at or before `cutoff`.
    pub fn take_expired(&mut self, cutoff: SimTime) -> Vec<ApiRequest> {
        let (expired, keep): (Vec<_>, Vec<_>) =
            self.items.drain(..).partition(|r| r.created_at <= cutoff);
        self.items = keep.into();
        expired
    }

    pub fn iter(&self) -> impl Iterator<Item = &ApiRequest> {
        self.items.iter()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}
