use serde::{Deserialize, Serialize};

use super::{CryptoError, KeyPair, PublicKey};
use crate::wire::{Reader, Writer};

/// Declared format of a personal-detail placeholder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Name,
    Account,
    IdNumber,
    Text,
}

impl FieldKind {
    fn as_str(self) -> &'static str {
        match self {
            FieldKind::Name => "name",
            FieldKind::Account => "account",
            FieldKind::IdNumber => "id-number",
            FieldKind::Text => "text",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [
            FieldKind::Name,
            FieldKind::Account,
            FieldKind::IdNumber,
            FieldKind::Text,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
    }

    /// `id-number` is digits only; everything else is any non-empty string.
    pub fn accepts(self, value: &str) -> bool {
        match self {
            FieldKind::IdNumber => !value.is_empty() && value.bytes().all(|b| b.is_ascii_digit()),
            _ => !value.trim().is_empty(),
        }
    }
}

/// A personal-detail placeholder. `value` is filled in by the user during
/// counter-signing and is `None` in documents as issued.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentField {
    pub name: String,
    pub kind: FieldKind,
    pub value: Option<String>,
}

impl DocumentField {
    pub fn placeholder(name: impl Into<String>, kind: FieldKind) -> Self {
        Self {
            name: name.into(),
            kind,
            value: None,
        }
    }
}

/// A typed document signed by its originator, optionally counter-signed by
/// the user. The counter-signature chains over the originator signature.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedDocument {
    pub doc_type: String,
    pub body: Vec<u8>,
    pub personal_fields: Vec<DocumentField>,
    pub originator_name: String,
    pub originator_signature: Vec<u8>,
    pub counter_signature: Option<Vec<u8>>,
}

impl SignedDocument {
    pub fn issue(
        doc_type: impl Into<String>,
        body: impl Into<Vec<u8>>,
        fields: Vec<DocumentField>,
        originator_name: impl Into<String>,
        originator_keys: &KeyPair,
    ) -> Self {
        let mut doc = SignedDocument {
            doc_type: doc_type.into(),
            body: body.into(),
            personal_fields: fields
                .into_iter()
                .map(|f| DocumentField { value: None, ..f })
                .collect(),
            originator_name: originator_name.into(),
            originator_signature: Vec::new(),
            counter_signature: None,
        };
        doc.originator_signature = originator_keys.sign(&doc.originator_message());
        doc
    }

    fn originator_message(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.str("utcb-doc-originator")
            .str(&self.doc_type)
            .bytes(&self.body)
            .str(&self.originator_name)
            .u32(self.personal_fields.len() as u32);
        for f in &self.personal_fields {
            w.str(&f.name).str(f.kind.as_str());
        }
        w.finish()
    }

    fn counter_message(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.str("utcb-doc-counter")
            .str(&self.doc_type)
            .bytes(&self.body)
            .u32(self.personal_fields.len() as u32);
        for f in &self.personal_fields {
            w.str(&f.name).str(f.value.as_deref().unwrap_or(""));
        }
        w.bytes(&self.originator_signature);
        w.finish()
    }

    pub fn verify_originator(&self, originator: &PublicKey) -> bool {
        originator.verify(&self.originator_message(), &self.originator_signature)
    }

    pub fn field(&self, name: &str) -> Option<&DocumentField> {
        self.personal_fields.iter().find(|f| f.name == name)
    }

    /// Fills every declared field from `completed` and signs the result with
    /// the user's key. The originator signature is checked first.
    pub fn countersign(
        &self,
        user_keys: &KeyPair,
        originator: &PublicKey,
        completed: &[(String, String)],
    ) -> Result<SignedDocument, CryptoError> {
        if self.counter_signature.is_some() {
            return Err(CryptoError::AlreadyCountersigned);
        }
        if !self.verify_originator(originator) {
            return Err(CryptoError::OriginatorInvalid);
        }
        if let Some((name, _)) = completed.iter().find(|(n, _)| self.field(n).is_none()) {
            return Err(CryptoError::FieldRejected(name.clone()));
        }
        let mut out = self.clone();
        for field in &mut out.personal_fields {
            let value = completed
                .iter()
                .find(|(n, _)| *n == field.name)
                .map(|(_, v)| v)
                .filter(|v| field.kind.accepts(v))
                .ok_or_else(|| CryptoError::FieldRejected(field.name.clone()))?;
            field.value = Some(value.clone());
        }
        out.counter_signature = Some(user_keys.sign(&out.counter_message()));
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.str(&self.doc_type)
            .bytes(&self.body)
            .u32(self.personal_fields.len() as u32);
        for f in &self.personal_fields {
            w.str(&f.name).str(f.kind.as_str());
            match &f.value {
                Some(v) => w.u32(1).str(v),
                None => w.u32(0),
            };
        }
        w.str(&self.originator_name)
            .bytes(&self.originator_signature);
        match &self.counter_signature {
            Some(sig) => w.u32(1).bytes(sig),
            None => w.u32(0),
        };
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        use crate::wire::WireError;
        let mut r = Reader::new(bytes);
        let doc_type = r.string("doc_type")?;
        let body = r.vec()?;
        let count = r.u32("personal_fields")? as usize;
        if count > r.remaining() / 4 {
            return Err(WireError::Invalid {
                field: "personal_fields",
            }
            .into());
        }
        let mut personal_fields = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.string("field.name")?;
            let kind = FieldKind::parse(&r.string("field.kind")?).ok_or(WireError::Invalid {
                field: "field.kind",
            })?;
            let value = match r.u32("field.present")? {
                0 => None,
                1 => Some(r.string("field.value")?),
                _ => {
                    return Err(WireError::Invalid {
                        field: "field.present",
                    }
                    .into())
                }
            };
            personal_fields.push(DocumentField { name, kind, value });
        }
        let originator_name = r.string("originator_name")?;
        let originator_signature = r.vec()?;
        let counter_signature = match r.u32("counter.present")? {
            0 => None,
            1 => Some(r.vec()?),
            _ => {
                return Err(WireError::Invalid {
                    field: "counter.present",
                }
                .into())
            }
        };
        r.finish()?;
        Ok(SignedDocument {
            doc_type,
            body,
            personal_fields,
            originator_name,
            originator_signature,
            counter_signature,
        })
    }
}

/// True iff both the originator signature and the user's counter-signature
/// verify over the document as it stands.
pub fn verify_countersigned(
    user: &PublicKey,
    originator: &PublicKey,
    doc: &SignedDocument,
) -> bool {
    let Some(sig) = &doc.counter_signature else {
        return false;
    };
    doc.personal_fields.iter().all(|f| f.value.is_some())
        && doc.verify_originator(originator)
        && user.verify(&doc.counter_message(), sig)
}
