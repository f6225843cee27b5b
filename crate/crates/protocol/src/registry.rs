//! Append-only commitment registry: one JSON record per line.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use zkml_core::argument::CircuitDescription;
use zkml_core::zoo::ModelCommitment;

use crate::ProtocolError;

/// What a provider publishes before serving. Carries the circuit
/// description and the graph text (architecture), never weights.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitmentRecord {
    pub model_id: String,
    /// Model commitment, hex.
    pub digest: String,
    /// Circuit geometry digest, hex.
    pub geometry: String,
    /// Fixed-column Merkle root, hex.
    pub fixed_root: String,
    /// Seconds since the Unix epoch.
    pub published_at: u64,
    pub graph: String,
    /// Serialized circuit description, base64.
    pub description: String,
}

impl CommitmentRecord {
    pub fn new(
        model_id: &str,
        mc: &ModelCommitment,
        desc: &CircuitDescription,
        graph: &str,
        published_at: u64,
    ) -> Self {
        Self {
            model_id: model_id.into(),
            digest: mc.to_hex(),
            geometry: hex::encode(desc.geometry_digest()),
            fixed_root: hex::encode(desc.fixed_root),
            published_at,
            graph: graph.into(),
            description: B64.encode(desc.to_bytes()),
        }
    }

    pub fn commitment(&self) -> Result<ModelCommitment, ProtocolError> {
        ModelCommitment::from_hex(&self.digest).ok_or_else(|| {
            ProtocolError::Registry(format!("{}: bad digest {:?}", self.model_id, self.digest))
        })
    }

    /// Decodes the circuit description and checks it against the digests
    /// listed beside it.
    pub fn circuit(&self) -> Result<CircuitDescription, ProtocolError> {
        let bad = |m: &str| ProtocolError::Registry(format!("{}: {}", self.model_id, m));
        let bytes = B64.decode(&self.description).map_err(|_| bad("description is not base64"))?;
        let desc = CircuitDescription::from_bytes(&bytes)?;
        if hex::encode(desc.geometry_digest()) != self.geometry {
            return Err(bad("geometry digest does not match the description"));
        }
        if hex::encode(desc.fixed_root) != self.fixed_root {
            return Err(bad("fixed root does not match the description"));
        }
        Ok(desc)
    }

    /// Same publication apart from the timestamp.
    fn same_content(&self, other: &Self) -> bool {
        Self { published_at: 0, ..self.clone() } == Self { published_at: 0, ..other.clone() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Published {
    New,
    /// An identical record was already present; nothing was written.
    AlreadyPresent,
}

#[derive(Clone, Debug)]
pub struct Registry {
    path: PathBuf,
}

impl Registry {
    pub fn open(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends `rec` unless its model id is taken. Re-publishing identical
    /// content is a no-op; anything else under the same id is refused.
    pub fn publish(&self, rec: &CommitmentRecord) -> Result<Published, ProtocolError> {
        rec.circuit()?;
        let mut f = OpenOptions::new().read(true).append(true).create(true).open(&self.path)?;
        f.lock()?;
        let existing = read_records(&f)?;
        if let Some(old) = existing.iter().find(|r| r.model_id == rec.model_id) {
            return if old.same_content(rec) {
                Ok(Published::AlreadyPresent)
            } else {
                Err(ProtocolError::Immutable(rec.model_id.clone()))
            };
        }
        let mut line = serde_json::to_string(rec)?;
        line.push('\n');
        f.seek(SeekFrom::End(0))?;
        f.write_all(line.as_bytes())?;
        f.sync_data()?;
        Ok(Published::New)
    }

    pub fn records(&self) -> Result<Vec<CommitmentRecord>, ProtocolError> {
        match File::open(&self.path) {
            Ok(f) => {
                f.lock_shared()?;
                read_records(&f)
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn get(&self, model_id: &str) -> Result<Option<CommitmentRecord>, ProtocolError> {
        Ok(self.records()?.into_iter().find(|r| r.model_id == model_id))
    }
}

fn read_records(f: &File) -> Result<Vec<CommitmentRecord>, ProtocolError> {
    let mut out = Vec::new();
    let mut r = BufReader::new(f);
    r.seek(SeekFrom::Start(0))?;
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| ProtocolError::Registry(format!("line {}: {}", i + 1, e)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}
