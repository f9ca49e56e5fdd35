use crate::crypto::CryptoError;
use crate::device::Sensor;
use crate::wire::{Reader, Writer};

/// What the user chose to send for a data request. This is the plaintext
/// inside the envelope.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataItem {
    Text(String),
    File {
        path: String,
        content: Vec<u8>,
    },
    SensorReading {
        sensor: Sensor,
        reading: Vec<u8>,
    },
    /// A counter-signed document returned to a signatory.
    SignedDocument(Vec<u8>),
}

impl DataItem {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        match self {
            DataItem::Text(t) => {
                w.str("text").str(t);
            }
            DataItem::File { path, content } => {
                w.str("file").str(path).bytes(content);
            }
            DataItem::SensorReading { sensor, reading } => {
                w.str("sensor").str(sensor.as_str()).bytes(reading);
            }
            DataItem::SignedDocument(doc) => {
                w.str("signed").bytes(doc);
            }
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CryptoError> {
        let mut r = Reader::new(bytes);
        let item = match r.string("item_kind")?.as_str() {
            "text" => DataItem::Text(r.string("text")?),
            "file" => DataItem::File {
                path: r.string("path")?,
                content: r.vec()?,
            },
            "sensor" => {
                let name = r.string("sensor")?;
                DataItem::SensorReading {
                    sensor: name.parse().map_err(|_| CryptoError::FieldRejected(name))?,
                    reading: r.vec()?,
                }
            }
            "signed" => DataItem::SignedDocument(r.vec()?),
            other => return Err(CryptoError::FieldRejected(other.to_string())),
        };
        r.finish()?;
        Ok(item)
    }

    /// How the item is shown on the secure screen.
    pub fn describe(&self) -> String {
        match self {
            DataItem::Text(t) => t.clone(),
            DataItem::File { path, content } => {
                format!("file {path}: {}", String::from_utf8_lossy(content))
            }
            DataItem::SensorReading { sensor, reading } => {
                format!("{sensor} reading: {}", String::from_utf8_lossy(reading))
            }
            DataItem::SignedDocument(doc) => format!("signed document ({} bytes)", doc.len()),
        }
    }
}
