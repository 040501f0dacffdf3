//! Paraphrased presence questions per finding.
//!
//! Every finding is seeded with its expert question. Further phrasings come
//! from a [`CandidateGenerator`] and only reach the serving pool once a human
//! validator labels them consistent with the finding.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::kb::{Finding, KnowledgeBase};
use crate::text::normalize_question;

#[derive(Debug, thiserror::Error)]
pub enum BankError {
    #[error("no paraphrase entry for finding {finding_id:?} with text {text:?}")]
    EntryNotFound { finding_id: String, text: String },
    #[error("no questions for finding {0:?}")]
    FindingNotFound(String),
    #[error("entry for {finding_id:?} already holds {text:?}")]
    Duplicate { finding_id: String, text: String },
    #[error("invalid question text {0:?}")]
    InvalidText(String),
    #[error("expert questions cannot be relabeled ({0:?})")]
    ExpertImmutable(String),
    #[error("candidate generation for {finding:?} stalled after {attempts} attempts with {found} of {wanted} new texts")]
    Generation {
        finding: String,
        attempts: usize,
        found: usize,
        wanted: usize,
    },
    #[error("generator failed: {0}")]
    Generator(String),
    #[error("bank record {line}: {message}")]
    Record { line: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Expert,
    Generated,
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Validation {
    Unknown,
    Consistent,
    Inconsistent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParaphraseEntry {
    pub finding_id: String,
    pub text: String,
    pub source: Source,
    pub validated: Validation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ParaphraseEntry {
    fn servable(&self) -> bool {
        self.source == Source::Expert || self.validated == Validation::Consistent
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParaphraseBank {
    entries: BTreeMap<String, Vec<ParaphraseEntry>>,
}

/// Share of labeled non-expert entries judged consistent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValidationReport {
    pub labeled: usize,
    pub consistent: usize,
    pub inconsistent: usize,
    pub pending: usize,
}

impl ValidationReport {
    pub fn consistency_rate(&self) -> Option<f64> {
        (self.labeled > 0).then(|| self.consistent as f64 / self.labeled as f64)
    }
}

impl ParaphraseBank {
    /// One consistent expert entry per finding.
    pub fn seed_from_kb(kb: &KnowledgeBase) -> Self {
        let mut bank = Self::default();
        for f in kb.findings() {
            bank.entries.entry(f.id.clone()).or_default().push(ParaphraseEntry {
                finding_id: f.id.clone(),
                text: normalize_question(&f.expert_question),
                source: Source::Expert,
                validated: Validation::Consistent,
                note: None,
            });
        }
        bank
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &ParaphraseEntry> {
        self.entries.values().flatten()
    }

    pub fn entries_for(&self, finding_id: &str) -> &[ParaphraseEntry] {
        self.entries.get(finding_id).map_or(&[], Vec::as_slice)
    }

    pub fn contains(&self, finding_id: &str, text: &str) -> bool {
        let text = normalize_question(text);
        self.entries_for(finding_id).iter().any(|e| e.text == text)
    }

    pub fn expert_question(&self, finding_id: &str) -> Option<&str> {
        self.entries_for(finding_id)
            .iter()
            .find(|e| e.source == Source::Expert)
            .map(|e| e.text.as_str())
    }

    /// Expert entries first, then consistent entries in insertion order.
    pub fn serving_pool(&self, finding_id: &str) -> Vec<&str> {
        let entries = self.entries_for(finding_id);
        entries
            .iter()
            .filter(|e| e.source == Source::Expert)
            .chain(entries.iter().filter(|e| e.source != Source::Expert && e.servable()))
            .map(|e| e.text.as_str())
            .collect()
    }

    pub fn add(&mut self, mut entry: ParaphraseEntry) -> Result<(), BankError> {
        if entry.text.trim().trim_end_matches('?').trim().is_empty() {
            return Err(BankError::InvalidText(entry.text));
        }
        entry.text = normalize_question(&entry.text);
        if self.contains(&entry.finding_id, &entry.text) {
            return Err(BankError::Duplicate {
                finding_id: entry.finding_id,
                text: entry.text,
            });
        }
        self.entries.entry(entry.finding_id.clone()).or_default().push(entry);
        Ok(())
    }

    pub fn record_validation(
        &mut self,
        finding_id: &str,
        text: &str,
        label: Validation,
        note: Option<String>,
    ) -> Result<(), BankError> {
        let wanted = normalize_question(text);
        let entry = self
            .entries
            .get_mut(finding_id)
            .and_then(|v| v.iter_mut().find(|e| e.text == wanted))
            .ok_or_else(|| BankError::EntryNotFound {
                finding_id: finding_id.to_string(),
                text: text.to_string(),
            })?;
        if entry.source == Source::Expert {
            return Err(BankError::ExpertImmutable(entry.text.clone()));
        }
        entry.validated = label;
        if note.is_some() {
            entry.note = note;
        }
        Ok(())
    }

    pub fn validation_report(&self) -> ValidationReport {
        let mut report = ValidationReport {
            labeled: 0,
            consistent: 0,
            inconsistent: 0,
            pending: 0,
        };
        for e in self.entries().filter(|e| e.source != Source::Expert) {
            match e.validated {
                Validation::Unknown => report.pending += 1,
                Validation::Consistent => {
                    report.labeled += 1;
                    report.consistent += 1;
                }
                Validation::Inconsistent => {
                    report.labeled += 1;
                    report.inconsistent += 1;
                }
            }
        }
        report
    }

    /// `diversity = false` always yields the expert question; otherwise a
    /// uniform draw from the serving pool.
    pub fn sample_question(
        &self,
        finding_id: &str,
        rng: &mut dyn RngCore,
        diversity: bool,
    ) -> Result<&str, BankError> {
        if !diversity {
            return self
                .expert_question(finding_id)
                .ok_or_else(|| BankError::FindingNotFound(finding_id.to_string()));
        }
        let pool = self.serving_pool(finding_id);
        pool.choose(rng)
            .copied()
            .ok_or_else(|| BankError::FindingNotFound(finding_id.to_string()))
    }

    pub fn from_reader(reader: impl BufRead) -> Result<Self, BankError> {
        let mut bank = Self::default();
        bank.merge_reader(reader)?;
        Ok(bank)
    }

    pub fn merge_str(&mut self, doc: &str) -> Result<(), BankError> {
        self.merge_reader(doc.as_bytes())
    }

    /// Adds every record of a line-delimited bank file; records already in
    /// the bank (same finding and text) are skipped.
    pub fn merge_reader(&mut self, reader: impl BufRead) -> Result<(), BankError> {
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ParaphraseEntry = serde_json::from_str(&line).map_err(|e| BankError::Record {
                line: idx + 1,
                message: e.to_string(),
            })?;
            if self.contains(&entry.finding_id, &entry.text) {
                continue;
            }
            self.add(entry).map_err(|e| BankError::Record {
                line: idx + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, BankError> {
        Self::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn write(&self, mut out: impl Write) -> Result<(), BankError> {
        for e in self.entries() {
            let line = serde_json::to_string(e).expect("entries serialize");
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), BankError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut out)?;
        out.flush()?;
        Ok(())
    }
}

/// Source of candidate paraphrases for one finding.
///
/// Implementations may return fewer or more texts than asked for;
/// [`generate_candidates`] keeps calling until enough distinct ones arrive.
pub trait CandidateGenerator {
    fn propose(
        &mut self,
        finding: &Finding,
        count: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<String>, BankError>;
}

/// Collects `k` normalized texts that are new to both the bank and each
/// other. Every call that yields nothing new uses up one retry.
pub fn generate_candidates(
    generator: &mut dyn CandidateGenerator,
    bank: &ParaphraseBank,
    finding: &Finding,
    k: usize,
    retry_budget: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<String>, BankError> {
    let mut found: Vec<String> = Vec::with_capacity(k);
    let mut misses = 0;
    let mut attempts = 0;
    while found.len() < k {
        attempts += 1;
        let proposals = generator.propose(finding, k - found.len(), rng)?;
        let mut progressed = false;
        for text in proposals {
            if found.len() == k {
                break;
            }
            if text.trim().trim_end_matches('?').trim().is_empty() {
                continue;
            }
            let text = normalize_question(&text);
            if bank.contains(&finding.id, &text) || found.contains(&text) {
                continue;
            }
            found.push(text);
            progressed = true;
        }
        if !progressed {
            misses += 1;
            if misses >= retry_budget {
                return Err(BankError::Generation {
                    finding: finding.id.clone(),
                    attempts,
                    found: found.len(),
                    wanted: k,
                });
            }
        }
    }
    Ok(found)
}

/// Generates and stores `k` fresh candidates as unvalidated entries.
pub fn extend_with_candidates(
    bank: &mut ParaphraseBank,
    generator: &mut dyn CandidateGenerator,
    finding: &Finding,
    k: usize,
    retry_budget: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<String>, BankError> {
    let texts = generate_candidates(generator, bank, finding, k, retry_budget, rng)?;
    for text in &texts {
        bank.add(ParaphraseEntry {
            finding_id: finding.id.clone(),
            text: text.clone(),
            source: Source::Generated,
            validated: Validation::Unknown,
            note: None,
        })?;
    }
    Ok(texts)
}

const BODY_PARTS: [&str; 14] = [
    "back", "head", "chest", "belly", "stomach", "neck", "knee", "shoulder", "ear", "throat",
    "leg", "arm", "foot", "eye",
];

const STATE_ADJECTIVES: [(&str, &str); 8] = [
    ("anxiety", "anxious"),
    ("weakness", "weak"),
    ("generalized weakness", "weak all over"),
    ("fatigue", "tired"),
    ("dizziness", "dizzy"),
    ("nausea", "nauseous"),
    ("sleepiness", "sleepy"),
    ("confusion", "confused"),
];

/// Offline stand-in for a language-model paraphraser: fixed rewrite
/// templates over a small body-part and symptom lexicon. Always proposes its
/// full template list in order, so results do not depend on the rng.
#[derive(Debug, Clone, Default)]
pub struct RuleBasedParaphraser;

impl RuleBasedParaphraser {
    pub fn rewrites(finding: &Finding) -> Vec<String> {
        let name = finding.name.trim().to_lowercase();
        // "vomiting, recurrent" reads as "recurrent vomiting"
        let phrase = match name.split_once(", ") {
            Some((head, qualifier)) => format!("{qualifier} {head}"),
            None => name.clone(),
        };

        if let Some(part) = phrase.strip_suffix(" pain").filter(|p| BODY_PARTS.contains(p)) {
            return vec![
                format!("Is your {part} hurting?"),
                format!("Does your {part} hurt?"),
                format!("Do you feel pain in your {part}?"),
                format!("Are you experiencing pain in your {part}?"),
            ];
        }
        if let Some((noun, adj)) = STATE_ADJECTIVES.iter().find(|(n, _)| *n == phrase) {
            return vec![
                format!("Are you {adj}?"),
                format!("Do you have {noun}?"),
                format!("Have you been experiencing any {noun}?"),
                format!("Are you feeling {adj}?"),
            ];
        }
        vec![
            format!("Do you have {phrase}?"),
            format!("Have you been experiencing any {phrase}?"),
            format!("Have you noticed any {phrase}?"),
            format!("Are you experiencing {phrase}?"),
        ]
    }
}

impl CandidateGenerator for RuleBasedParaphraser {
    fn propose(&mut self, finding: &Finding, _count: usize, _rng: &mut dyn RngCore) -> Result<Vec<String>, BankError> {
        Ok(Self::rewrites(finding))
    }
}
