//! Edit sessions persisted in an embedded key-value file.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use redb::{Database, ReadableDatabase, TableDefinition};
use serde::{Deserialize, Serialize};

use crate::{CliError, Result};

const SESSIONS: TableDefinition<&str, &[u8]> = TableDefinition::new("sessions");

/// PNG bytes carried as base64 in JSON.
mod b64 {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        STANDARD.decode(text).map_err(serde::de::Error::custom)
    }
}

/// One layout submission and the image it produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    #[serde(with = "b64")]
    pub layout_png: Vec<u8>,
    pub layout_hash: String,
    #[serde(with = "b64")]
    pub image_png: Vec<u8>,
    pub image_hash: String,
    pub at_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub profile: String,
    /// Generator pair the session was created with.
    pub models_fingerprint: String,
    pub source_id: String,
    pub ratio: f64,
    /// The uploaded crop.
    #[serde(with = "b64")]
    pub cropped_png: Vec<u8>,
    /// Current extended layout, a single-channel label PNG.
    #[serde(with = "b64")]
    pub layout_png: Vec<u8>,
    pub layout_hash: String,
    #[serde(with = "b64")]
    pub image_png: Vec<u8>,
    pub image_hash: String,
    pub out_of_distribution: bool,
    /// Append-only.
    pub history: Vec<HistoryEntry>,
    pub created_ms: u64,
    pub updated_ms: u64,
}

pub struct SessionStore {
    db: Database,
}

fn store_err(e: impl std::fmt::Display) -> CliError {
    CliError::Store(e.to_string())
}

impl SessionStore {
    /// Opens or creates the store file.
    pub fn open(path: &Path) -> Result<Self> {
        let db = Database::create(path).map_err(store_err)?;
        let tx = db.begin_write().map_err(store_err)?;
        tx.open_table(SESSIONS).map_err(store_err)?;
        tx.commit().map_err(store_err)?;
        Ok(Self { db })
    }

    pub fn get(&self, id: &str) -> Result<Option<Session>> {
        let tx = self.db.begin_read().map_err(store_err)?;
        let table = tx.open_table(SESSIONS).map_err(store_err)?;
        let Some(raw) = table.get(id).map_err(store_err)? else {
            return Ok(None);
        };
        serde_json::from_slice(raw.value()).map(Some).map_err(store_err)
    }

    pub fn put(&self, session: &Session) -> Result<()> {
        let bytes = serde_json::to_vec(session).map_err(store_err)?;
        let tx = self.db.begin_write().map_err(store_err)?;
        {
            let mut table = tx.open_table(SESSIONS).map_err(store_err)?;
            table.insert(session.session_id.as_str(), bytes.as_slice()).map_err(store_err)?;
        }
        tx.commit().map_err(store_err)
    }
}

pub fn now_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}
