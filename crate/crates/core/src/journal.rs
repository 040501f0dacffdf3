//! Append-only session journal: one JSON record per line, each naming its
//! session and carrying one dialogue event.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dialogue::{apply, initial_state, ConversationState, DialogueError, Event};

#[derive(Debug, thiserror::Error)]
pub enum JournalError {
    #[error("corrupt journal record at byte offset {offset}: {message}")]
    Corrupt { offset: u64, message: String },
    #[error("journal record at byte offset {offset} does not apply: {source}")]
    Replay {
        offset: u64,
        #[source]
        source: DialogueError,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalRecord {
    pub session_id: String,
    pub event: Event,
}

/// Writes whole records with a single `write_all` followed by a flush.
pub struct JournalWriter<W: Write> {
    out: W,
}

impl JournalWriter<File> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, JournalError> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { out: file })
    }
}

impl<W: Write> JournalWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn append(&mut self, session_id: &str, event: &Event) -> Result<(), JournalError> {
        let record = JournalRecord {
            session_id: session_id.to_string(),
            event: event.clone(),
        };
        let mut line = serde_json::to_vec(&record)?;
        line.push(b'\n');
        self.out.write_all(&line)?;
        self.out.flush()?;
        Ok(())
    }

    pub fn append_all(&mut self, session_id: &str, events: &[Event]) -> Result<(), JournalError> {
        events.iter().try_for_each(|e| self.append(session_id, e))
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Rebuilds every session in the journal. A record that fails to parse,
/// including a final line cut off mid-write, is an error naming its offset.
pub fn replay_journal(reader: impl BufRead) -> Result<BTreeMap<String, ConversationState>, JournalError> {
    let mut sessions: BTreeMap<String, ConversationState> = BTreeMap::new();
    let mut offset = 0u64;
    for line in reader.split(b'\n') {
        let line = line?;
        let here = offset;
        offset += line.len() as u64 + 1;
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let record: JournalRecord = serde_json::from_slice(&line).map_err(|e| JournalError::Corrupt {
            offset: here,
            message: e.to_string(),
        })?;
        let result = match sessions.get_mut(&record.session_id) {
            Some(state) => apply(state, &record.event),
            None => initial_state(&record.event).map(|state| {
                sessions.insert(record.session_id.clone(), state);
            }),
        };
        result.map_err(|source| JournalError::Replay { offset: here, source })?;
    }
    Ok(sessions)
}

pub fn replay_file(path: impl AsRef<Path>) -> Result<BTreeMap<String, ConversationState>, JournalError> {
    let path = path.as_ref();
    if !path.exists() {
        return Ok(BTreeMap::new());
    }
    replay_journal(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::{EmoteMode, Engine, EngineConfig, Profile};
    use crate::fixtures;
    use crate::nlg::EngineVariant;
    use std::sync::Arc;

    fn three_turn_session() -> (ConversationState, Vec<u8>) {
        let engine = Engine::new(
            Arc::new(fixtures::clinic_kb()),
            Arc::new(fixtures::clinic_bank()),
            Arc::new(fixtures::emote_lexicon()),
        );
        let cfg = EngineConfig {
            variant: EngineVariant::Full,
            emote_mode: EmoteMode::None,
            margin_threshold: 1000.0,
            ..EngineConfig::default()
        };
        let mut w = JournalWriter::new(Vec::new());
        let profile = Profile {
            age_band: "adult".into(),
            gender: "female".into(),
        };
        let (mut state, step) = engine.start("a", profile, "recurrent headache", cfg).unwrap();
        w.append_all("a", &step.events).unwrap();
        for reply in ["yes", "hmm", "no", "yes"] {
            let step = engine.answer(&mut state, reply).unwrap();
            w.append_all("a", &step.events).unwrap();
        }
        (state, w.into_inner())
    }

    #[test]
    fn replay_equals_live_state() {
        let (state, bytes) = three_turn_session();
        let sessions = replay_journal(bytes.as_slice()).unwrap();
        assert_eq!(sessions.len(), 1);
        assert_eq!(sessions["a"], state);
    }

    #[test]
    fn truncated_record_is_reported() {
        let (_, mut bytes) = three_turn_session();
        bytes.truncate(bytes.len() - 10);
        let last_start = bytes[..bytes.len() - 1].iter().rposition(|b| *b == b'\n').unwrap() + 1;
        match replay_journal(bytes.as_slice()) {
            Err(JournalError::Corrupt { offset, .. }) => assert_eq!(offset, last_start as u64),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_journal() {
        assert!(replay_journal(&b""[..]).unwrap().is_empty());
    }
}
