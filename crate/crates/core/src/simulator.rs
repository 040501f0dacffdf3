//! Structured clinical case simulation.
//!
//! A case starts from sampled demographics and a chief complaint (the reason
//! for encounter, RFE) asserted present. The simulator then repeatedly asks
//! the knowledge base for the next finding and asserts it absent with
//! probability `p_absent`, otherwise present. It stops when the target length
//! is reached, the differential margin reaches the threshold, or no candidate
//! finding remains. Only cases that end with a sufficient margin are kept.
//!
//! Draw order per case (one generator per attempt, see [`crate::rng::stream`]):
//! age band index, gender index, RFE index, target length, then one
//! `gen_bool(p_absent)` per asked finding.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::kb::{Assertion, KbError, KnowledgeBase, Polarity, DEFAULT_TEMPERATURE};

/// Age bands used when none are configured.
pub const DEFAULT_AGE_BANDS: [&str; 5] = [
    "child (2 to 12 yrs)",
    "adolescent (13 to 17 yrs)",
    "young adult (18 to 40 yrs)",
    "middle-aged adult (41 to 64 yrs)",
    "older adult (65 yrs and over)",
];

pub const DEFAULT_GENDERS: [&str; 2] = ["male", "female"];

/// Upper bound on findings per case used by [`validate_case`].
pub const MAX_CASE_FINDINGS: usize = 20;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulator config: {0}")]
    Config(String),
    #[error("knowledge base has no askable findings")]
    NoComplaints,
    #[error("accepted {accepted} of {wanted} cases after {attempts} attempts")]
    Exhausted {
        accepted: usize,
        wanted: usize,
        attempts: usize,
    },
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error("case record {line}: {message}")]
    Record { line: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatorConfig {
    pub margin_threshold: f64,
    pub min_findings: usize,
    pub max_findings: usize,
    pub p_absent: f64,
    pub seed: u64,
    pub temperature: f64,
    pub age_bands: Vec<String>,
    pub genders: Vec<String>,
    /// Attempts allowed in [`simulate_dataset`] before giving up.
    pub max_attempts: usize,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        Self {
            margin_threshold: 20.0,
            min_findings: 5,
            max_findings: 20,
            p_absent: 0.6,
            seed: 0,
            temperature: DEFAULT_TEMPERATURE,
            age_bands: DEFAULT_AGE_BANDS.iter().map(|s| s.to_string()).collect(),
            genders: DEFAULT_GENDERS.iter().map(|s| s.to_string()).collect(),
            max_attempts: 100_000,
        }
    }
}

impl SimulatorConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.min_findings < 1 || self.min_findings > self.max_findings {
            return Err(SimError::Config(format!(
                "need 1 <= min_findings <= max_findings, got {}..{}",
                self.min_findings, self.max_findings
            )));
        }
        if !(self.p_absent > 0.0 && self.p_absent < 1.0) {
            return Err(SimError::Config(format!("p_absent {} outside (0, 1)", self.p_absent)));
        }
        if self.age_bands.is_empty() || self.genders.is_empty() {
            return Err(SimError::Config("age and gender vocabularies must be nonempty".into()));
        }
        if self.max_attempts == 0 {
            return Err(SimError::Config("max_attempts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalCase {
    pub id: u64,
    pub age_band: String,
    pub gender: String,
    pub rfe: String,
    pub findings: Vec<Assertion>,
    pub final_margin: f64,
}

impl ClinicalCase {
    /// RFE followed by the asked findings, in assertion order.
    pub fn all_assertions(&self) -> Vec<Assertion> {
        std::iter::once(Assertion::present(self.rfe.clone()))
            .chain(self.findings.iter().cloned())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Length,
    Margin,
    Exhausted,
}

/// Result of one simulation attempt, kept or not.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub case: ClinicalCase,
    pub target_length: usize,
    pub stop: StopReason,
    pub accepted: bool,
}

pub fn simulate_case(
    kb: &KnowledgeBase,
    config: &SimulatorConfig,
    rng: &mut impl Rng,
) -> Result<Simulation, SimError> {
    config.validate()?;
    let complaints: Vec<&str> = kb
        .findings()
        .filter(|f| !f.is_demographic)
        .map(|f| f.id.as_str())
        .collect();
    if complaints.is_empty() {
        return Err(SimError::NoComplaints);
    }

    let age_band = config.age_bands[rng.gen_range(0..config.age_bands.len())].clone();
    let gender = config.genders[rng.gen_range(0..config.genders.len())].clone();
    let rfe = complaints[rng.gen_range(0..complaints.len())].to_string();
    let target_length = rng.gen_range(config.min_findings..=config.max_findings);

    let mut assertions = vec![Assertion::present(rfe.clone())];
    let (stop, final_margin) = loop {
        let dd = kb.differential_with(&assertions, config.temperature)?;
        let margin = dd.margin()?;
        if margin >= config.margin_threshold {
            break (StopReason::Margin, margin);
        }
        if assertions.len() > target_length {
            break (StopReason::Length, margin);
        }
        let Some(next) = kb.next_finding(&assertions, &dd) else {
            break (StopReason::Exhausted, margin);
        };
        let polarity = if rng.gen_bool(config.p_absent) {
            Polarity::Absent
        } else {
            Polarity::Present
        };
        assertions.push(Assertion {
            finding_id: next,
            polarity,
        });
    };

    let findings = assertions.split_off(1);
    Ok(Simulation {
        accepted: final_margin >= config.margin_threshold,
        case: ClinicalCase {
            id: 0,
            age_band,
            gender,
            rfe,
            findings,
            final_margin,
        },
        target_length,
        stop,
    })
}

/// Counters over every attempt of a dataset run, kept or rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimulationStats {
    pub attempts: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub polarity_draws: usize,
    pub absent_draws: usize,
}

impl SimulationStats {
    pub fn acceptance_rate(&self) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            self.accepted as f64 / self.attempts as f64
        }
    }

    pub fn absent_rate(&self) -> f64 {
        if self.polarity_draws == 0 {
            0.0
        } else {
            self.absent_draws as f64 / self.polarity_draws as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedDataset {
    pub cases: Vec<ClinicalCase>,
    pub stats: SimulationStats,
}

/// Runs attempts `0, 1, 2, …` (attempt `i` on stream `i` of the configured
/// seed) until `n_accepted` cases are kept. Ids are assigned sequentially.
pub fn simulate_dataset(
    kb: &KnowledgeBase,
    config: &SimulatorConfig,
    n_accepted: usize,
) -> Result<SimulatedDataset, SimError> {
    if n_accepted == 0 {
        return Err(SimError::Config("n_accepted must be at least 1".into()));
    }
    config.validate()?;
    let mut stats = SimulationStats::default();
    let mut cases = Vec::with_capacity(n_accepted);
    while cases.len() < n_accepted {
        if stats.attempts >= config.max_attempts {
            return Err(SimError::Exhausted {
                accepted: cases.len(),
                wanted: n_accepted,
                attempts: stats.attempts,
            });
        }
        let mut rng = crate::rng::stream(config.seed, stats.attempts as u64);
        stats.attempts += 1;
        let sim = simulate_case(kb, config, &mut rng)?;
        stats.polarity_draws += sim.case.findings.len();
        stats.absent_draws += sim
            .case
            .findings
            .iter()
            .filter(|a| a.polarity == Polarity::Absent)
            .count();
        if sim.accepted {
            stats.accepted += 1;
            let mut case = sim.case;
            case.id = cases.len() as u64;
            cases.push(case);
        } else {
            stats.rejected += 1;
        }
    }
    if stats.rejected > 0 {
        log::info!(
            "simulator kept {} of {} attempts ({:.1}%)",
            stats.accepted,
            stats.attempts,
            100.0 * stats.acceptance_rate()
        );
    }
    Ok(SimulatedDataset { cases, stats })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    UnknownFinding(String),
    DemographicComplaint(String),
    Duplicate(String),
    ExclusionConflict { group: String, findings: Vec<String> },
    TooManyFindings { count: usize, max: usize },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::UnknownFinding(id) => write!(f, "unknown finding {id}"),
            Violation::DemographicComplaint(id) => write!(f, "chief complaint {id} is demographic"),
            Violation::Duplicate(id) => write!(f, "finding {id} appears more than once"),
            Violation::ExclusionConflict { group, findings } => write!(
                f,
                "exclusion group {group} has several present findings: {}",
                findings.join(", ")
            ),
            Violation::TooManyFindings { count, max } => {
                write!(f, "{count} findings exceeds the limit of {max}")
            }
        }
    }
}

pub fn validate_case(kb: &KnowledgeBase, case: &ClinicalCase) -> Vec<Violation> {
    validate_case_with(kb, case, MAX_CASE_FINDINGS)
}

pub fn validate_case_with(kb: &KnowledgeBase, case: &ClinicalCase, max_findings: usize) -> Vec<Violation> {
    let mut out = Vec::new();
    match kb.finding(&case.rfe) {
        None => out.push(Violation::UnknownFinding(case.rfe.clone())),
        Some(f) if f.is_demographic => out.push(Violation::DemographicComplaint(case.rfe.clone())),
        Some(_) => {}
    }
    if case.findings.len() > max_findings {
        out.push(Violation::TooManyFindings {
            count: case.findings.len(),
            max: max_findings,
        });
    }
    let mut seen = BTreeSet::new();
    seen.insert(case.rfe.as_str());
    let mut by_group: std::collections::BTreeMap<&str, Vec<String>> = Default::default();
    if let Some(g) = kb.finding(&case.rfe).and_then(|f| f.exclusion_group.as_deref()) {
        by_group.entry(g).or_default().push(case.rfe.clone());
    }
    for a in &case.findings {
        let Some(f) = kb.finding(&a.finding_id) else {
            out.push(Violation::UnknownFinding(a.finding_id.clone()));
            continue;
        };
        if !seen.insert(a.finding_id.as_str()) {
            out.push(Violation::Duplicate(a.finding_id.clone()));
            continue;
        }
        if a.polarity == Polarity::Present {
            if let Some(g) = f.exclusion_group.as_deref() {
                by_group.entry(g).or_default().push(f.id.clone());
            }
        }
    }
    for (group, findings) in by_group {
        if findings.len() > 1 {
            out.push(Violation::ExclusionConflict {
                group: group.to_string(),
                findings,
            });
        }
    }
    out
}

/// Margin of the differential over the case's full assertion list.
pub fn recomputed_margin(kb: &KnowledgeBase, case: &ClinicalCase, temperature: f64) -> Result<f64, KbError> {
    kb.differential_with(&case.all_assertions(), temperature)?.margin()
}

/// On-disk shape of a simulated case: display names with `+`/`-` polarity
/// suffixes, mirrored by ids so the record can be read back unambiguously.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub id: u64,
    pub age: Vec<String>,
    pub gender: Vec<String>,
    #[serde(rename = "RFE")]
    pub rfe: Vec<String>,
    pub findings: Vec<String>,
    pub rfe_id: String,
    pub finding_ids: Vec<String>,
    pub final_margin: f64,
}

fn suffixed(name: &str, polarity: Polarity) -> String {
    format!("{name}{}", polarity.suffix())
}

fn split_suffix(item: &str) -> Option<(&str, Polarity)> {
    let last = item.chars().last()?;
    let polarity = Polarity::from_suffix(last)?;
    Some((&item[..item.len() - 1], polarity))
}

impl CaseRecord {
    pub fn from_case(kb: &KnowledgeBase, case: &ClinicalCase) -> Self {
        let name = |id: &str| kb.finding(id).map_or(id.to_string(), |f| f.name.clone());
        Self {
            id: case.id,
            age: vec![case.age_band.clone()],
            gender: vec![case.gender.clone()],
            rfe: vec![suffixed(&name(&case.rfe), Polarity::Present)],
            findings: case
                .findings
                .iter()
                .map(|a| suffixed(&name(&a.finding_id), a.polarity))
                .collect(),
            rfe_id: case.rfe.clone(),
            finding_ids: case
                .findings
                .iter()
                .map(|a| suffixed(&a.finding_id, a.polarity))
                .collect(),
            final_margin: case.final_margin,
        }
    }

    pub fn into_case(self) -> Result<ClinicalCase, String> {
        let findings = self
            .finding_ids
            .iter()
            .map(|item| {
                split_suffix(item)
                    .map(|(id, polarity)| Assertion {
                        finding_id: id.to_string(),
                        polarity,
                    })
                    .ok_or_else(|| format!("finding {item:?} lacks a +/- suffix"))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ClinicalCase {
            id: self.id,
            age_band: self.age.into_iter().next().unwrap_or_default(),
            gender: self.gender.into_iter().next().unwrap_or_default(),
            rfe: self.rfe_id,
            findings,
            final_margin: self.final_margin,
        })
    }
}

pub fn write_cases(mut out: impl Write, kb: &KnowledgeBase, cases: &[ClinicalCase]) -> Result<(), SimError> {
    for case in cases {
        let line = serde_json::to_string(&CaseRecord::from_case(kb, case))
            .map_err(|e| SimError::Record { line: case.id as usize, message: e.to_string() })?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_cases(reader: impl BufRead) -> Result<Vec<ClinicalCase>, SimError> {
    let mut cases = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CaseRecord = serde_json::from_str(&line).map_err(|e| SimError::Record {
            line: idx + 1,
            message: e.to_string(),
        })?;
        cases.push(record.into_case().map_err(|message| SimError::Record {
            line: idx + 1,
            message,
        })?);
    }
    Ok(cases)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn toy_config() -> SimulatorConfig {
        SimulatorConfig {
            margin_threshold: 5.0,
            seed: 42,
            ..Default::default()
        }
    }

    #[test]
    fn unreachable_margin_rejects() {
        let kb = fixtures::toy_kb();
        let config = SimulatorConfig {
            margin_threshold: 1000.0,
            ..Default::default()
        };
        let sim = simulate_case(&kb, &config, &mut crate::rng::seeded(1)).unwrap();
        assert!(!sim.accepted);
        assert_eq!(sim.stop, StopReason::Exhausted);
    }

    #[test]
    fn exhaustion_error_after_cap() {
        let kb = fixtures::toy_kb();
        let config = SimulatorConfig {
            margin_threshold: 1000.0,
            max_attempts: 100,
            ..Default::default()
        };
        match simulate_dataset(&kb, &config, 1).unwrap_err() {
            SimError::Exhausted { accepted, attempts, .. } => {
                assert_eq!(accepted, 0);
                assert_eq!(attempts, 100);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let kb = fixtures::toy_kb();
        let mut rng = crate::rng::seeded(0);
        for bad in [
            SimulatorConfig { min_findings: 0, ..Default::default() },
            SimulatorConfig { min_findings: 9, max_findings: 3, ..Default::default() },
            SimulatorConfig { p_absent: 1.0, ..Default::default() },
            SimulatorConfig { genders: vec![], ..Default::default() },
        ] {
            assert!(matches!(simulate_case(&kb, &bad, &mut rng), Err(SimError::Config(_))));
        }
    }

    #[test]
    fn sequential_ids_and_determinism() {
        let kb = fixtures::toy_kb();
        let a = simulate_dataset(&kb, &toy_config(), 3).unwrap();
        assert_eq!(a.cases.iter().map(|c| c.id).collect::<Vec<_>>(), vec![0, 1, 2]);
        let b = simulate_dataset(&kb, &toy_config(), 3).unwrap();
        let mut out_a = Vec::new();
        let mut out_b = Vec::new();
        write_cases(&mut out_a, &kb, &a.cases).unwrap();
        write_cases(&mut out_b, &kb, &b.cases).unwrap();
        assert_eq!(out_a, out_b);
        let back = read_cases(out_a.as_slice()).unwrap();
        assert_eq!(back, a.cases);
    }

    #[test]
    fn accepted_cases_hold_postconditions() {
        let kb = fixtures::clinic_kb();
        let config = SimulatorConfig { seed: 7, ..Default::default() };
        let data = simulate_dataset(&kb, &config, 25).unwrap();
        for case in &data.cases {
            assert!(case.final_margin >= config.margin_threshold);
            assert!(case.findings.len() <= config.max_findings);
            assert!(validate_case(&kb, case).is_empty(), "{:?}", validate_case(&kb, case));
            let m = recomputed_margin(&kb, case, config.temperature).unwrap();
            assert_eq!(m, case.final_margin);
        }
    }

    #[test]
    fn validation_flags_exclusion_and_duplicates() {
        let kb = fixtures::toy_kb();
        let mut case = ClinicalCase {
            id: 0,
            age_band: "adult".into(),
            gender: "female".into(),
            rfe: "f1".into(),
            findings: vec![Assertion::present("f3"), Assertion::present("f4")],
            final_margin: 0.0,
        };
        let v = validate_case(&kb, &case);
        assert_eq!(v.len(), 1);
        assert!(v[0].to_string().contains("g1"));

        case.findings = vec![Assertion::absent("f2"), Assertion::present("f2")];
        assert_eq!(validate_case(&kb, &case), vec![Violation::Duplicate("f2".into())]);

        case.findings = vec![Assertion::absent("f1")];
        assert_eq!(validate_case(&kb, &case), vec![Violation::Duplicate("f1".into())]);
    }

    #[test]
    fn record_uses_polarity_suffixes() {
        let kb = fixtures::toy_kb();
        let case = ClinicalCase {
            id: 3,
            age_band: "young adult (18 to 40 yrs)".into(),
            gender: "male".into(),
            rfe: "f1".into(),
            findings: vec![Assertion::absent("f2"), Assertion::present("f3")],
            final_margin: 6.0,
        };
        let rec = CaseRecord::from_case(&kb, &case);
        assert_eq!(rec.rfe, vec!["symptom one+"]);
        assert_eq!(rec.findings, vec!["symptom two-", "symptom three+"]);
        let json = serde_json::to_string(&rec).unwrap();
        assert!(json.contains(r#""RFE":["symptom one+"]"#));
        assert_eq!(rec.into_case().unwrap(), case);
    }
}
