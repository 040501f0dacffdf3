//! The medical knowledge base and its inference.
//!
//! Findings relate to diseases through an evoking strength (ES, 0–5: how
//! strongly the finding suggests the disease) and a term frequency (TF, 1–5:
//! how often the finding occurs with the disease). Scoring is additive:
//! a present finding adds its ES, an absent finding subtracts its TF, and
//! pairs missing from the KB contribute nothing. Raw scores become a
//! distribution through a temperature softmax.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// Default softmax temperature for [`KnowledgeBase::differential`].
pub const DEFAULT_TEMPERATURE: f64 = 5.0;

/// Relative difference below which two finding values are a tie.
const VALUE_TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum KbError {
    #[error("schema violation in record {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("integrity error in record {line}: {message}")]
    Integrity { line: usize, message: String },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub id: String,
    pub name: String,
    pub expert_question: String,
    #[serde(default)]
    pub is_demographic: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exclusion_group: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Disease {
    pub id: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Association {
    pub finding_id: String,
    pub disease_id: String,
    pub es: u8,
    pub tf: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Present,
    Absent,
}

impl Polarity {
    /// `+` for present, `-` for absent.
    pub fn suffix(self) -> char {
        match self {
            Polarity::Present => '+',
            Polarity::Absent => '-',
        }
    }

    pub fn from_suffix(ch: char) -> Option<Self> {
        match ch {
            '+' => Some(Polarity::Present),
            '-' => Some(Polarity::Absent),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Assertion {
    pub finding_id: String,
    pub polarity: Polarity,
}

impl Assertion {
    pub fn present(finding_id: impl Into<String>) -> Self {
        Self {
            finding_id: finding_id.into(),
            polarity: Polarity::Present,
        }
    }

    pub fn absent(finding_id: impl Into<String>) -> Self {
        Self {
            finding_id: finding_id.into(),
            polarity: Polarity::Absent,
        }
    }
}

/// One line of a KB document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KbRecord {
    Disease(Disease),
    Finding(Finding),
    Assoc(Association),
}

#[derive(Debug, Clone, Copy, Default)]
struct Strength {
    es: u8,
    tf: u8,
}

#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    findings: BTreeMap<String, Finding>,
    diseases: BTreeMap<String, Disease>,
    associations: Vec<Association>,
    pairs: HashMap<(String, String), Strength>,
    by_finding: BTreeMap<String, Vec<usize>>,
    by_disease: BTreeMap<String, Vec<usize>>,
    groups: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisEntry {
    pub disease_id: String,
    pub raw_score: f64,
    pub probability: f64,
}

/// Diseases ranked by raw score (descending, ties by id ascending).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferentialDiagnosis {
    pub entries: Vec<DiagnosisEntry>,
}

impl DifferentialDiagnosis {
    /// Raw-score gap between the first and second entries; `+inf` when only
    /// one disease exists.
    pub fn margin(&self) -> Result<f64, KbError> {
        match self.entries.as_slice() {
            [] => Err(KbError::Contract("margin of an empty differential".into())),
            [_] => Ok(f64::INFINITY),
            [first, second, ..] => Ok(first.raw_score - second.raw_score),
        }
    }

    pub fn probability_of(&self, disease_id: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.disease_id == disease_id)
            .map(|e| e.probability)
    }

    pub fn top(&self) -> Option<&DiagnosisEntry> {
        self.entries.first()
    }
}

impl fmt::Display for DifferentialDiagnosis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (rank, e) in self.entries.iter().enumerate() {
            writeln!(
                f,
                "{:>3}. {:<24} score {:>7.2}  p={:.3}",
                rank + 1,
                e.disease_id,
                e.raw_score,
                e.probability
            )?;
        }
        Ok(())
    }
}

/// Free-standing alias of [`DifferentialDiagnosis::margin`].
pub fn margin(dd: &DifferentialDiagnosis) -> Result<f64, KbError> {
    dd.margin()
}

impl KnowledgeBase {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, KbError> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(std::io::BufReader::new(file))
    }

    pub fn from_str(doc: &str) -> Result<Self, KbError> {
        Self::from_reader(doc.as_bytes())
    }

    /// Parses a line-delimited KB document. Blank lines and `#` comments are
    /// skipped; record numbers in errors are 1-based line numbers.
    pub fn from_reader(reader: impl BufRead) -> Result<Self, KbError> {
        let mut records = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let record: KbRecord =
                serde_json::from_str(trimmed).map_err(|e| KbError::Schema {
                    line: idx + 1,
                    message: e.to_string(),
                })?;
            records.push((idx + 1, record));
        }
        Self::build(records)
    }

    pub fn from_parts(
        diseases: Vec<Disease>,
        findings: Vec<Finding>,
        associations: Vec<Association>,
    ) -> Result<Self, KbError> {
        let records = diseases
            .into_iter()
            .map(KbRecord::Disease)
            .chain(findings.into_iter().map(KbRecord::Finding))
            .chain(associations.into_iter().map(KbRecord::Assoc))
            .enumerate()
            .map(|(i, r)| (i + 1, r))
            .collect();
        Self::build(records)
    }

    fn build(records: Vec<(usize, KbRecord)>) -> Result<Self, KbError> {
        let schema = |line: usize, message: String| KbError::Schema { line, message };
        let integrity = |line: usize, message: String| KbError::Integrity { line, message };

        let mut findings = BTreeMap::new();
        let mut diseases = BTreeMap::new();
        let mut assoc_lines = Vec::new();

        for (line, record) in records {
            match record {
                KbRecord::Disease(d) => {
                    if d.id.trim().is_empty() {
                        return Err(schema(line, "disease id is empty".into()));
                    }
                    if diseases.contains_key(&d.id) {
                        return Err(integrity(line, format!("duplicate disease id {:?}", d.id)));
                    }
                    diseases.insert(d.id.clone(), d);
                }
                KbRecord::Finding(f) => {
                    if f.id.trim().is_empty() {
                        return Err(schema(line, "finding id is empty".into()));
                    }
                    if f.expert_question.trim().is_empty() {
                        return Err(schema(
                            line,
                            format!("finding {:?} has an empty expert_question", f.id),
                        ));
                    }
                    if findings.contains_key(&f.id) {
                        return Err(integrity(line, format!("duplicate finding id {:?}", f.id)));
                    }
                    findings.insert(f.id.clone(), f);
                }
                KbRecord::Assoc(a) => {
                    if a.es > 5 {
                        return Err(schema(line, format!("es={} outside 0..=5", a.es)));
                    }
                    if !(1..=5).contains(&a.tf) {
                        return Err(schema(line, format!("tf={} outside 1..=5", a.tf)));
                    }
                    assoc_lines.push((line, a));
                }
            }
        }

        let mut pairs = HashMap::new();
        let mut associations = Vec::with_capacity(assoc_lines.len());
        let mut by_finding: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut by_disease: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (line, a) in assoc_lines {
            if !findings.contains_key(&a.finding_id) {
                return Err(integrity(line, format!("unknown finding {:?}", a.finding_id)));
            }
            if !diseases.contains_key(&a.disease_id) {
                return Err(integrity(line, format!("unknown disease {:?}", a.disease_id)));
            }
            let key = (a.finding_id.clone(), a.disease_id.clone());
            if pairs.contains_key(&key) {
                return Err(integrity(
                    line,
                    format!("duplicate association ({}, {})", a.finding_id, a.disease_id),
                ));
            }
            pairs.insert(key, Strength { es: a.es, tf: a.tf });
            let idx = associations.len();
            by_finding.entry(a.finding_id.clone()).or_default().push(idx);
            by_disease.entry(a.disease_id.clone()).or_default().push(idx);
            associations.push(a);
        }

        let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for f in findings.values() {
            if let Some(g) = &f.exclusion_group {
                groups.entry(g.clone()).or_default().push(f.id.clone());
            }
        }
        if let Some((g, _)) = groups.iter().find(|(_, members)| members.len() < 2) {
            return Err(KbError::Integrity {
                line: 0,
                message: format!("exclusion group {g:?} has fewer than two members"),
            });
        }

        Ok(Self {
            findings,
            diseases,
            associations,
            pairs,
            by_finding,
            by_disease,
            groups,
        })
    }

    /// Serializes back into the line-delimited document format.
    pub fn to_records(&self) -> Vec<KbRecord> {
        self.diseases
            .values()
            .cloned()
            .map(KbRecord::Disease)
            .chain(self.findings.values().cloned().map(KbRecord::Finding))
            .chain(self.associations.iter().cloned().map(KbRecord::Assoc))
            .collect()
    }

    pub fn findings(&self) -> impl Iterator<Item = &Finding> {
        self.findings.values()
    }

    pub fn diseases(&self) -> impl Iterator<Item = &Disease> {
        self.diseases.values()
    }

    pub fn associations(&self) -> &[Association] {
        &self.associations
    }

    pub fn finding(&self, id: &str) -> Option<&Finding> {
        self.findings.get(id)
    }

    pub fn disease(&self, id: &str) -> Option<&Disease> {
        self.diseases.get(id)
    }

    pub fn finding_count(&self) -> usize {
        self.findings.len()
    }

    pub fn disease_count(&self) -> usize {
        self.diseases.len()
    }

    pub fn exclusion_group(&self, group: &str) -> Option<&[String]> {
        self.groups.get(group).map(Vec::as_slice)
    }

    /// Evoking strength, 0 when the pair is absent.
    pub fn es(&self, finding_id: &str, disease_id: &str) -> u8 {
        self.strength(finding_id, disease_id).es
    }

    /// Term frequency, 0 when the pair is absent.
    pub fn tf(&self, finding_id: &str, disease_id: &str) -> u8 {
        self.strength(finding_id, disease_id).tf
    }

    fn strength(&self, finding_id: &str, disease_id: &str) -> Strength {
        self.pairs
            .get(&(finding_id.to_string(), disease_id.to_string()))
            .copied()
            .unwrap_or_default()
    }

    pub fn associations_of_finding(&self, finding_id: &str) -> impl Iterator<Item = &Association> {
        self.by_finding
            .get(finding_id)
            .into_iter()
            .flatten()
            .map(move |&i| &self.associations[i])
    }

    pub fn associations_of_disease(&self, disease_id: &str) -> impl Iterator<Item = &Association> {
        self.by_disease
            .get(disease_id)
            .into_iter()
            .flatten()
            .map(move |&i| &self.associations[i])
    }

    fn check_assertions(&self, assertions: &[Assertion]) -> Result<(), KbError> {
        let mut seen = BTreeSet::new();
        for a in assertions {
            if !self.findings.contains_key(&a.finding_id) {
                return Err(KbError::Contract(format!(
                    "assertion on unknown finding {:?}",
                    a.finding_id
                )));
            }
            if !seen.insert(a.finding_id.as_str()) {
                return Err(KbError::Contract(format!(
                    "finding {:?} asserted more than once",
                    a.finding_id
                )));
            }
        }
        Ok(())
    }

    /// Σ ES over present findings minus Σ TF over absent findings.
    pub fn disease_score(&self, assertions: &[Assertion], disease_id: &str) -> Result<f64, KbError> {
        self.check_assertions(assertions)?;
        if !self.diseases.contains_key(disease_id) {
            return Err(KbError::Contract(format!("unknown disease {disease_id:?}")));
        }
        Ok(self.score_unchecked(assertions, disease_id))
    }

    fn score_unchecked(&self, assertions: &[Assertion], disease_id: &str) -> f64 {
        assertions
            .iter()
            .map(|a| {
                let s = self.strength(&a.finding_id, disease_id);
                match a.polarity {
                    Polarity::Present => f64::from(s.es),
                    Polarity::Absent => -f64::from(s.tf),
                }
            })
            .sum()
    }

    pub fn differential(&self, assertions: &[Assertion]) -> Result<DifferentialDiagnosis, KbError> {
        self.differential_with(assertions, DEFAULT_TEMPERATURE)
    }

    pub fn differential_with(
        &self,
        assertions: &[Assertion],
        temperature: f64,
    ) -> Result<DifferentialDiagnosis, KbError> {
        self.check_assertions(assertions)?;
        if self.diseases.is_empty() {
            return Err(KbError::Contract("knowledge base has no diseases".into()));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(KbError::Contract(format!("temperature must be positive, got {temperature}")));
        }

        let scores: Vec<(String, f64)> = self
            .diseases
            .keys()
            .map(|d| (d.clone(), self.score_unchecked(assertions, d)))
            .collect();
        let max = scores.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|(_, s)| ((s - max) / temperature).exp()).collect();
        let total: f64 = exps.iter().sum();

        let mut entries: Vec<DiagnosisEntry> = scores
            .into_iter()
            .zip(exps)
            .map(|((disease_id, raw_score), e)| DiagnosisEntry {
                disease_id,
                raw_score,
                probability: e / total,
            })
            .collect();
        entries.sort_by(|a, b| {
            b.raw_score
                .total_cmp(&a.raw_score)
                .then_with(|| a.disease_id.cmp(&b.disease_id))
        });
        Ok(DifferentialDiagnosis { entries })
    }

    /// Exclusion-group partners of every present finding, minus findings that
    /// are already asserted.
    pub fn excluded_findings(&self, assertions: &[Assertion]) -> BTreeSet<String> {
        let asserted: BTreeSet<&str> = assertions.iter().map(|a| a.finding_id.as_str()).collect();
        let mut out = BTreeSet::new();
        for a in assertions.iter().filter(|a| a.polarity == Polarity::Present) {
            let Some(group) = self
                .findings
                .get(&a.finding_id)
                .and_then(|f| f.exclusion_group.as_ref())
            else {
                continue;
            };
            for member in &self.groups[group] {
                if !asserted.contains(member.as_str()) {
                    out.insert(member.clone());
                }
            }
        }
        out
    }

    /// Differential-weighted evoking strength of asking `finding_id` next.
    pub fn finding_value(&self, finding_id: &str, dd: &DifferentialDiagnosis) -> f64 {
        let probs: HashMap<&str, f64> = dd
            .entries
            .iter()
            .map(|e| (e.disease_id.as_str(), e.probability))
            .collect();
        self.value_with(finding_id, &probs)
    }

    fn value_with(&self, finding_id: &str, probs: &HashMap<&str, f64>) -> f64 {
        self.associations_of_finding(finding_id)
            .map(|a| probs.get(a.disease_id.as_str()).copied().unwrap_or(0.0) * f64::from(a.es))
            .sum()
    }

    /// The unasked, unexcluded, non-demographic finding with the highest
    /// [`finding_value`](Self::finding_value); ties go to the smaller id.
    pub fn next_finding(&self, assertions: &[Assertion], dd: &DifferentialDiagnosis) -> Option<String> {
        let asserted: BTreeSet<&str> = assertions.iter().map(|a| a.finding_id.as_str()).collect();
        let excluded = self.excluded_findings(assertions);
        let probs: HashMap<&str, f64> = dd
            .entries
            .iter()
            .map(|e| (e.disease_id.as_str(), e.probability))
            .collect();

        let mut best: Option<(&str, f64)> = None;
        for f in self.findings.values() {
            if f.is_demographic || asserted.contains(f.id.as_str()) || excluded.contains(&f.id) {
                continue;
            }
            let value = self.value_with(&f.id, &probs);
            // values equal up to summation order count as ties
            if best.is_none_or(|(_, v)| value > v + VALUE_TIE_TOLERANCE * v.abs().max(1.0)) {
                best = Some((&f.id, value));
            }
        }
        best.map(|(id, _)| id.to_string())
    }

    /// Looks a finding up by display name, case- and punctuation-insensitive.
    pub fn finding_by_name(&self, name: &str) -> Option<&Finding> {
        let wanted = crate::text::normalize(name);
        self.findings
            .values()
            .find(|f| crate::text::normalize(&f.name) == wanted)
    }
}
