//! Question generation from control codes, the single-line prompt format,
//! and construction of the code-conditioned training dataset.

use std::io::Write;

use rand::distributions::{Distribution, WeightedIndex};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::emote::{prepend_phrase, EmoteCode, EmoteError, EmoteLexicon};
use crate::kb::{KnowledgeBase, Polarity};
use crate::paraphrase::{BankError, ParaphraseBank};
use crate::simulator::{validate_case, ClinicalCase};
use crate::text::fuzzy_score;

/// Minimum fuzzy score against the serving pool for a generated question to
/// count as asking about its finding.
pub const DEFAULT_CONSISTENCY_THRESHOLD: u8 = 90;

#[derive(Debug, thiserror::Error)]
pub enum NlgError {
    #[error("unknown finding {0:?}")]
    FindingNotFound(String),
    #[error("malformed prompt: {0}")]
    Prompt(String),
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error(transparent)]
    Emote(#[from] EmoteError),
    #[error(transparent)]
    External(#[from] ExternalError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ControlCodes {
    pub next_finding: String,
    pub emote: EmoteCode,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationContext {
    pub age_band: String,
    pub gender: String,
    /// Finding name of the reason for encounter.
    pub rfe: String,
    /// Finding names with polarity, in assertion order.
    pub prior_findings: Vec<(String, Polarity)>,
    pub previous_question: String,
    pub previous_response: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingInstance {
    pub serialized_context: String,
    pub target_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineVariant {
    /// The expert question, one fixed phrasing per finding.
    Expert,
    /// A sampled paraphrase without emote phrases.
    NoEmote,
    /// Emote phrase for the code plus a sampled paraphrase.
    Full,
    /// An out-of-process generator, validated and falling back to `Full`.
    External,
}

impl EngineVariant {
    pub const ALL: [EngineVariant; 4] = [Self::Expert, Self::NoEmote, Self::Full, Self::External];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Expert => "expert",
            Self::NoEmote => "no_emote",
            Self::Full => "full",
            Self::External => "external",
        }
    }
}

impl std::fmt::Display for EngineVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EngineVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown engine variant {s:?} (expected expert, no_emote, full or external)"))
    }
}

const PROMPT_KEYS: [&str; 8] = ["AGE", "SEX", "RFE", "FINDINGS", "PREVQ", "PREVA", "NEXT", "EMOTE"];

fn escape(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    for ch in value.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '|' => out.push_str("\\|"),
            ';' => out.push_str("\\;"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

/// Splits on separators not preceded by an escape, leaving escapes intact.
fn split_raw(text: &str, sep: char) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut start = 0;
    let mut escaped = false;
    for (i, ch) in text.char_indices() {
        if escaped {
            escaped = false;
        } else if ch == '\\' {
            escaped = true;
        } else if ch == sep {
            parts.push(&text[start..i]);
            start = i + ch.len_utf8();
        }
    }
    parts.push(&text[start..]);
    parts
}

fn unescape(text: &str) -> Result<String, NlgError> {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(ch) = chars.next() {
        if ch != '\\' {
            out.push(ch);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(c @ ('\\' | '|' | ';')) => out.push(c),
            Some(c) => return Err(NlgError::Prompt(format!("unknown escape \\{c}"))),
            None => return Err(NlgError::Prompt("dangling escape".into())),
        }
    }
    Ok(out)
}

/// Single-line fielded prompt:
/// `AGE=..|SEX=..|RFE=..|FINDINGS=name+;name-|PREVQ=..|PREVA=..|NEXT=<id>|EMOTE=<code>`.
/// Backslash, `|`, `;` and line breaks inside values are backslash-escaped.
pub fn render_prompt(context: &GenerationContext, codes: &ControlCodes) -> String {
    let findings: Vec<String> = context
        .prior_findings
        .iter()
        .map(|(name, pol)| format!("{}{}", escape(name), pol.suffix()))
        .collect();
    let values = [
        escape(&context.age_band),
        escape(&context.gender),
        escape(&context.rfe),
        findings.join(";"),
        escape(&context.previous_question),
        escape(&context.previous_response),
        escape(&codes.next_finding),
        codes.emote.as_str().to_string(),
    ];
    PROMPT_KEYS
        .iter()
        .zip(values)
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join("|")
}

pub fn parse_prompt(prompt: &str) -> Result<(GenerationContext, ControlCodes), NlgError> {
    let fields = split_raw(prompt, '|');
    if fields.len() != PROMPT_KEYS.len() {
        return Err(NlgError::Prompt(format!("expected 8 fields, found {}", fields.len())));
    }
    let mut values = Vec::with_capacity(8);
    for (field, key) in fields.iter().zip(PROMPT_KEYS) {
        let value = field
            .strip_prefix(key)
            .and_then(|rest| rest.strip_prefix('='))
            .ok_or_else(|| NlgError::Prompt(format!("expected field {key}")))?;
        values.push(value);
    }
    let mut prior_findings = Vec::new();
    if !values[3].is_empty() {
        for item in split_raw(values[3], ';') {
            let pol = item
                .chars()
                .last()
                .and_then(Polarity::from_suffix)
                .ok_or_else(|| NlgError::Prompt(format!("finding {item:?} lacks a +/- suffix")))?;
            prior_findings.push((unescape(&item[..item.len() - 1])?, pol));
        }
    }
    let emote: EmoteCode = values[7]
        .parse()
        .map_err(|_| NlgError::Prompt(format!("unknown emote code {:?}", values[7])))?;
    Ok((
        GenerationContext {
            age_band: unescape(values[0])?,
            gender: unescape(values[1])?,
            rfe: unescape(values[2])?,
            prior_findings,
            previous_question: unescape(values[4])?,
            previous_response: unescape(values[5])?,
        },
        ControlCodes {
            next_finding: unescape(values[6])?,
            emote,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalRequest {
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalResponse {
    pub text: String,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum ExternalError {
    #[error("external generator timed out")]
    Timeout,
    #[error("external generator unreachable: {0}")]
    Transport(String),
    #[error("external generator protocol error: {0}")]
    Protocol(String),
}

/// Client side of the external question-generator protocol. Implementations
/// must enforce their own per-call deadline.
pub trait ExternalGenerator: Send + Sync {
    fn generate(&self, request: &ExternalRequest) -> Result<ExternalResponse, ExternalError>;
}

pub const EXTERNAL_MAX_TOKENS: u32 = 64;
pub const EXTERNAL_TEMPERATURE: f64 = 0.7;

pub fn external_generate(client: &dyn ExternalGenerator, prompt: &str) -> Result<String, ExternalError> {
    let response = client.generate(&ExternalRequest {
        prompt: prompt.to_string(),
        max_tokens: EXTERNAL_MAX_TOKENS,
        temperature: EXTERNAL_TEMPERATURE,
    })?;
    Ok(response.text.trim().to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyCheck {
    pub passed: bool,
    pub best_score: u8,
    pub best_match: Option<String>,
}

/// Strips a leading lexicon phrase and fuzzy-matches the rest against the
/// finding's serving pool.
pub fn validate_consistency(
    question: &str,
    finding_id: &str,
    bank: &ParaphraseBank,
    lexicon: &EmoteLexicon,
    threshold: u8,
) -> ConsistencyCheck {
    let stripped = lexicon.strip_leading(question).map_or(question, |(_, rest)| rest);
    let mut best: Option<(u8, &str)> = None;
    for candidate in bank.serving_pool(finding_id) {
        let score = fuzzy_score(stripped, candidate);
        if best.is_none_or(|(s, _)| score > s) {
            best = Some((score, candidate));
        }
    }
    let best_score = best.map_or(0, |(s, _)| s);
    ConsistencyCheck {
        passed: best.is_some() && best_score >= threshold,
        best_score,
        best_match: best.map(|(_, q)| q.to_string()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub text: String,
    /// The emote phrase prepended, when one was.
    pub emote_phrase: Option<String>,
    /// Why an external generation was replaced by the local one.
    pub fallback: Option<String>,
}

/// Everything generation reads, shared read-only across sessions.
pub struct Generator<'a> {
    pub kb: &'a KnowledgeBase,
    pub bank: &'a ParaphraseBank,
    pub lexicon: &'a EmoteLexicon,
    pub external: Option<&'a dyn ExternalGenerator>,
    pub consistency_threshold: u8,
}

impl<'a> Generator<'a> {
    pub fn new(kb: &'a KnowledgeBase, bank: &'a ParaphraseBank, lexicon: &'a EmoteLexicon) -> Self {
        Self {
            kb,
            bank,
            lexicon,
            external: None,
            consistency_threshold: DEFAULT_CONSISTENCY_THRESHOLD,
        }
    }

    pub fn with_external(mut self, external: &'a dyn ExternalGenerator) -> Self {
        self.external = Some(external);
        self
    }

    pub fn generate(
        &self,
        variant: EngineVariant,
        context: &GenerationContext,
        codes: &ControlCodes,
        rng: &mut dyn RngCore,
    ) -> Result<Generated, NlgError> {
        let finding = self
            .kb
            .finding(&codes.next_finding)
            .ok_or_else(|| NlgError::FindingNotFound(codes.next_finding.clone()))?;
        match variant {
            EngineVariant::Expert => Ok(Generated {
                text: finding.expert_question.clone(),
                emote_phrase: None,
                fallback: None,
            }),
            EngineVariant::NoEmote => Ok(Generated {
                text: self.bank.sample_question(&finding.id, rng, true)?.to_string(),
                emote_phrase: None,
                fallback: None,
            }),
            EngineVariant::Full => self.full(&finding.id, codes.emote, rng),
            EngineVariant::External => {
                let reason = match self.external {
                    None => "no external generator configured".to_string(),
                    Some(client) => match external_generate(client, &render_prompt(context, codes)) {
                        Ok(text) => {
                            let check = validate_consistency(
                                &text,
                                &finding.id,
                                self.bank,
                                self.lexicon,
                                self.consistency_threshold,
                            );
                            if check.passed {
                                let emote_phrase = self
                                    .lexicon
                                    .strip_leading(&text)
                                    .map(|(_, rest)| text[..text.len() - rest.len()].trim().to_string());
                                return Ok(Generated {
                                    text,
                                    emote_phrase,
                                    fallback: None,
                                });
                            }
                            format!("external question {text:?} failed consistency (best score {})", check.best_score)
                        }
                        Err(e) => e.to_string(),
                    },
                };
                log::warn!("falling back to local generation: {reason}");
                let mut out = self.full(&finding.id, codes.emote, rng)?;
                out.fallback = Some(reason);
                Ok(out)
            }
        }
    }

    fn full(&self, finding_id: &str, emote: EmoteCode, rng: &mut dyn RngCore) -> Result<Generated, NlgError> {
        let question = self.bank.sample_question(finding_id, rng, true)?;
        if emote == EmoteCode::None {
            return Ok(Generated {
                text: question.to_string(),
                emote_phrase: None,
                fallback: None,
            });
        }
        let phrase = self.lexicon.sample_phrase(emote, rng)?;
        let text = prepend_phrase(phrase, question);
        let prefix = text[..text.len() - question.len()].trim().to_string();
        Ok(Generated {
            text,
            emote_phrase: Some(prefix),
            fallback: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetOptions {
    pub with_emotes: bool,
    /// Sampling weights over none/affirmative/empathy/apology.
    pub emote_weights: [f64; 4],
    pub seed: u64,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        Self {
            with_emotes: true,
            emote_weights: [1.0; 4],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedCase {
    pub case_id: u64,
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MedConvDataset {
    pub instances: Vec<TrainingInstance>,
    pub skipped: Vec<SkippedCase>,
}

/// One instance per consecutive pair of case findings: the earlier finding
/// becomes the previous turn (a sampled question and a Yes/No answer), the
/// later one the target. The reason for encounter is context only. Case i
/// draws from its own stream of `options.seed`, so output depends only on
/// the inputs.
pub fn build_medconv_dataset(
    cases: &[ClinicalCase],
    kb: &KnowledgeBase,
    bank: &ParaphraseBank,
    lexicon: &EmoteLexicon,
    options: &DatasetOptions,
) -> Result<MedConvDataset, NlgError> {
    let weights = WeightedIndex::new(options.emote_weights)
        .map_err(|e| NlgError::Prompt(format!("bad emote weights: {e}")))?;
    let name_of = |id: &str| kb.finding(id).map(|f| f.name.clone()).ok_or_else(|| NlgError::FindingNotFound(id.to_string()));
    let mut out = MedConvDataset::default();
    for (i, case) in cases.iter().enumerate() {
        let violations = validate_case(kb, case);
        if !violations.is_empty() {
            out.skipped.push(SkippedCase {
                case_id: case.id,
                reasons: violations.iter().map(ToString::to_string).collect(),
            });
            continue;
        }
        let mut rng = crate::rng::stream(options.seed, i as u64);
        for t in 1..case.findings.len() {
            let prev = &case.findings[t - 1];
            let target = &case.findings[t];
            let prior_findings = case.findings[..t]
                .iter()
                .map(|a| Ok((name_of(&a.finding_id)?, a.polarity)))
                .collect::<Result<Vec<_>, NlgError>>()?;
            let context = GenerationContext {
                age_band: case.age_band.clone(),
                gender: case.gender.clone(),
                rfe: name_of(&case.rfe)?,
                prior_findings,
                previous_question: bank.sample_question(&prev.finding_id, &mut rng, true)?.to_string(),
                previous_response: match prev.polarity {
                    Polarity::Present => "Yes",
                    Polarity::Absent => "No",
                }
                .to_string(),
            };
            let emote = if options.with_emotes {
                EmoteCode::ALL[weights.sample(&mut rng)]
            } else {
                EmoteCode::None
            };
            let codes = ControlCodes {
                next_finding: target.finding_id.clone(),
                emote,
            };
            let question = bank.sample_question(&target.finding_id, &mut rng, true)?;
            let target_text = if emote == EmoteCode::None {
                question.to_string()
            } else {
                prepend_phrase(lexicon.sample_phrase(emote, &mut rng)?, question)
            };
            out.instances.push(TrainingInstance {
                serialized_context: render_prompt(&context, &codes),
                target_text,
            });
        }
    }
    Ok(out)
}

pub fn write_instances(mut out: impl Write, instances: &[TrainingInstance]) -> Result<(), NlgError> {
    for inst in instances {
        serde_json::to_writer(&mut out, inst)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::kb::Assertion;
    use proptest::prelude::*;

    fn codes(id: &str, emote: EmoteCode) -> ControlCodes {
        ControlCodes {
            next_finding: id.into(),
            emote,
        }
    }

    #[test]
    fn empty_context_prompt() {
        let p = render_prompt(&GenerationContext::default(), &codes("f1", EmoteCode::None));
        assert_eq!(p, "AGE=|SEX=|RFE=|FINDINGS=|PREVQ=|PREVA=|NEXT=f1|EMOTE=none");
        let (ctx, c) = parse_prompt(&p).unwrap();
        assert!(ctx.prior_findings.is_empty());
        assert_eq!(c.next_finding, "f1");
    }

    #[test]
    fn escapes_survive() {
        let ctx = GenerationContext {
            age_band: "a|b".into(),
            gender: "x\\y".into(),
            rfe: "semi;colon".into(),
            prior_findings: vec![("odd; name|+".into(), Polarity::Present), ("plain".into(), Polarity::Absent)],
            previous_question: "line\nbreak?".into(),
            previous_response: "No".into(),
        };
        let c = codes("weird|id", EmoteCode::Apology);
        let p = render_prompt(&ctx, &c);
        assert!(!p.contains('\n'));
        assert_eq!(parse_prompt(&p).unwrap(), (ctx, c));
    }

    #[test]
    fn malformed_prompts() {
        assert!(parse_prompt("AGE=x").is_err());
        assert!(parse_prompt("AGE=|SEX=|RFE=|FINDINGS=a|PREVQ=|PREVA=|NEXT=f|EMOTE=none").is_err());
        assert!(parse_prompt("AGE=|SEX=|RFE=|FINDINGS=|PREVQ=|PREVA=|NEXT=f|EMOTE=joy").is_err());
    }

    #[test]
    fn expert_ignores_emote() {
        let kb = fixtures::clinic_kb();
        let bank = fixtures::clinic_bank();
        let lex = fixtures::emote_lexicon();
        let g = Generator::new(&kb, &bank, &lex);
        let mut rng = crate::rng::seeded(0);
        for code in EmoteCode::ALL {
            let out = g
                .generate(EngineVariant::Expert, &GenerationContext::default(), &codes("recurrent_headache", code), &mut rng)
                .unwrap();
            assert_eq!(out.text, "Do you have headaches that come and go often?");
        }
    }

    #[test]
    fn full_with_empathy() {
        let kb = fixtures::clinic_kb();
        let bank = fixtures::clinic_bank();
        let lex = fixtures::emote_lexicon();
        let g = Generator::new(&kb, &bank, &lex);
        let mut rng = crate::rng::seeded(5);
        let pool = bank.serving_pool("generalized_weakness");
        assert!(pool.contains(&"Are you weak all over?"));
        for _ in 0..50 {
            let out = g
                .generate(
                    EngineVariant::Full,
                    &GenerationContext::default(),
                    &codes("generalized_weakness", EmoteCode::Empathy),
                    &mut rng,
                )
                .unwrap();
            let (code, rest) = lex.strip_leading(&out.text).unwrap();
            assert_eq!(code, EmoteCode::Empathy);
            assert!(pool.contains(&rest), "{rest:?}");
        }
    }

    #[test]
    fn unknown_finding() {
        let kb = fixtures::toy_kb();
        let bank = ParaphraseBank::seed_from_kb(&kb);
        let lex = fixtures::emote_lexicon();
        let g = Generator::new(&kb, &bank, &lex);
        let err = g
            .generate(EngineVariant::Full, &GenerationContext::default(), &codes("nope", EmoteCode::None), &mut crate::rng::seeded(0))
            .unwrap_err();
        assert!(matches!(err, NlgError::FindingNotFound(_)));
    }

    #[test]
    fn consistency_against_pool() {
        let bank = fixtures::clinic_bank();
        let lex = fixtures::emote_lexicon();
        let check = |q: &str, f: &str| validate_consistency(q, f, &bank, &lex, DEFAULT_CONSISTENCY_THRESHOLD);
        assert!(check("Do you have anxiety?", "anxiety").passed);
        assert!(check("Sorry to know that. Are you weak all over?", "generalized_weakness").passed);
        assert!(check("do you have anxiety", "anxiety").passed);
        let off = check("Do you have flushing?", "anxiety");
        assert!(!off.passed);
        // "anxiety" vs "flushing" differ in about half the characters
        assert!(off.best_score < 70, "{}", off.best_score);
    }

    fn dataset_case() -> ClinicalCase {
        ClinicalCase {
            id: 0,
            age_band: "young adult (18 to 40 yrs)".into(),
            gender: "male".into(),
            rfe: "abdominal_fullness".into(),
            findings: vec![
                Assertion::present("diarrhea_chronic"),
                Assertion::absent("lactose_intolerance"),
                Assertion::present("vomiting_recurrent"),
            ],
            final_margin: 0.0,
        }
    }

    #[test]
    fn three_findings_two_instances() {
        let kb = fixtures::clinic_kb();
        let bank = fixtures::clinic_bank();
        let lex = fixtures::emote_lexicon();
        let ds = build_medconv_dataset(&[dataset_case()], &kb, &bank, &lex, &DatasetOptions::default()).unwrap();
        assert_eq!(ds.instances.len(), 2);
        let (ctx0, c0) = parse_prompt(&ds.instances[0].serialized_context).unwrap();
        assert_eq!(ctx0.previous_response, "Yes");
        assert_eq!(c0.next_finding, "lactose_intolerance");
        assert_eq!(ctx0.rfe, "abdominal fullness sensation");
        let (ctx1, c1) = parse_prompt(&ds.instances[1].serialized_context).unwrap();
        assert_eq!(ctx1.previous_response, "No");
        assert_eq!(c1.next_finding, "vomiting_recurrent");
        assert_eq!(ctx1.prior_findings.len(), 2);
        for inst in &ds.instances {
            assert_eq!(inst.serialized_context.matches("|NEXT=").count(), 1);
            assert_eq!(inst.serialized_context.matches("|EMOTE=").count(), 1);
        }
    }

    #[test]
    fn ablation_has_no_emotes() {
        let kb = fixtures::clinic_kb();
        let bank = fixtures::clinic_bank();
        let lex = fixtures::emote_lexicon();
        let opts = DatasetOptions {
            with_emotes: false,
            ..DatasetOptions::default()
        };
        let ds = build_medconv_dataset(&[dataset_case()], &kb, &bank, &lex, &opts).unwrap();
        for inst in &ds.instances {
            assert!(inst.serialized_context.ends_with("|EMOTE=none"));
            let (_, c) = parse_prompt(&inst.serialized_context).unwrap();
            assert!(bank.serving_pool(&c.next_finding).contains(&inst.target_text.as_str()));
        }
    }

    #[test]
    fn invalid_case_skipped() {
        let kb = fixtures::clinic_kb();
        let bank = fixtures::clinic_bank();
        let lex = fixtures::emote_lexicon();
        let mut bad = dataset_case();
        bad.findings.push(Assertion::present("productive_cough"));
        bad.findings.push(Assertion::present("dry_cough"));
        let ds = build_medconv_dataset(&[bad, dataset_case()], &kb, &bank, &lex, &DatasetOptions::default()).unwrap();
        assert_eq!(ds.skipped.len(), 1);
        assert_eq!(ds.instances.len(), 2);
    }

    proptest! {
        #[test]
        fn prompt_round_trip(
            age in "[ -~]{0,12}",
            rfe in "[ -~]{0,12}",
            names in proptest::collection::vec(("[ -~]{0,10}", any::<bool>()), 0..5),
            q in "[ -~\n]{0,20}",
            a in "[ -~]{0,10}",
            next in "[a-z_|;]{1,10}",
            code in 0usize..4,
        ) {
            let ctx = GenerationContext {
                age_band: age,
                gender: "female".into(),
                rfe,
                prior_findings: names
                    .into_iter()
                    .map(|(n, p)| (n, if p { Polarity::Present } else { Polarity::Absent }))
                    .collect(),
                previous_question: q,
                previous_response: a,
            };
            let c = ControlCodes { next_finding: next, emote: EmoteCode::ALL[code] };
            let p = render_prompt(&ctx, &c);
            prop_assert_eq!(parse_prompt(&p).unwrap(), (ctx, c));
        }
    }
}
