//! The turn loop: track what the patient has reported, pick the next
//! finding, predict an emote code, phrase the question, and stop once the
//! differential is decisive or the question budget runs out.
//!
//! Conversation state is a fold over [`Event`]s, so a journal of events
//! replays to the exact live state.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::classifier::{ClassifierError, EmotionClassifier};
use crate::emote::{ContextTriple, EmoteCode, EmoteLexicon};
use crate::kb::{Assertion, DifferentialDiagnosis, KbError, KnowledgeBase, Polarity, DEFAULT_TEMPERATURE};
use crate::nlg::{ControlCodes, EngineVariant, ExternalGenerator, GenerationContext, Generator, NlgError};
use crate::paraphrase::ParaphraseBank;
use crate::text::fuzzy_score;

/// Minimum fuzzy score for a free-text complaint to resolve to a finding.
pub const RFE_MATCH_THRESHOLD: u8 = 90;

#[derive(Debug, thiserror::Error)]
pub enum DialogueError {
    #[error("no finding matches {text:?}; closest: {}", suggestions.join(", "))]
    RfeNotFound { text: String, suggestions: Vec<String> },
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("session {0} has concluded")]
    Concluded(String),
    #[error("invalid engine configuration: {0}")]
    Config(String),
    #[error("event {event} does not apply: {message}")]
    Replay { event: &'static str, message: String },
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Nlg(#[from] NlgError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmoteMode {
    #[default]
    Classifier,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub variant: EngineVariant,
    pub max_questions: usize,
    pub margin_threshold: f64,
    pub seed: u64,
    pub emote_mode: EmoteMode,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// When set, non-none emote codes below this probability become none.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emote_threshold: Option<f64>,
}

fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            variant: EngineVariant::Full,
            max_questions: 10,
            margin_threshold: 20.0,
            seed: 0,
            emote_mode: EmoteMode::Classifier,
            temperature: DEFAULT_TEMPERATURE,
            emote_threshold: None,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), DialogueError> {
        if self.max_questions == 0 {
            return Err(DialogueError::Config("max_questions must be at least 1".into()));
        }
        if !self.margin_threshold.is_finite() {
            return Err(DialogueError::Config("margin_threshold must be finite".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(DialogueError::Config("temperature must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Profile {
    pub age_band: String,
    pub gender: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParsedAnswer {
    Present,
    Absent,
    Unknown,
}

const AFFIRMATIVE: [&str; 7] = ["yes", "y", "yeah", "yep", "i do", "correct", "definitely"];
const NEGATIVE: [&str; 7] = ["no", "n", "nope", "not really", "i don't", "never", "i do not"];
/// Hedges that would otherwise be caught by a negative prefix ("i don't know").
const UNSURE: [&str; 6] = ["i don't know", "i do not know", "not sure", "i'm not sure", "maybe", "dunno"];

fn answer_key(raw: &str) -> String {
    let cleaned: String = raw
        .trim()
        .to_lowercase()
        .chars()
        .map(|c| match c {
            '\u{2019}' => '\'',
            c if c.is_alphanumeric() || c == '\'' => c,
            _ => ' ',
        })
        .collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn leads_with(text: &str, phrase: &str) -> bool {
    text == phrase || text.strip_prefix(phrase).is_some_and(|rest| rest.starts_with(' '))
}

/// Maps a free-text reply to a polarity using fixed synonym tables matched
/// at the start of the reply on a word boundary; the longest match wins.
pub fn parse_answer(raw: &str) -> ParsedAnswer {
    let key = answer_key(raw);
    let mut best: Option<(usize, ParsedAnswer)> = None;
    let tables = [
        (&UNSURE[..], ParsedAnswer::Unknown),
        (&AFFIRMATIVE[..], ParsedAnswer::Present),
        (&NEGATIVE[..], ParsedAnswer::Absent),
    ];
    for (table, verdict) in tables {
        for phrase in table {
            if leads_with(&key, phrase) && best.is_none_or(|(len, _)| phrase.len() > len) {
                best = Some((phrase.len(), verdict));
            }
        }
    }
    best.map_or(ParsedAnswer::Unknown, |(_, v)| v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub question: String,
    pub codes: ControlCodes,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emote_phrase: Option<String>,
    /// Classifier output behind the emote code, when the classifier ran.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emote_probabilities: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<String>,
    /// Every reply given to this question, clarified ones included.
    #[serde(default)]
    pub replies: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polarity: Option<Polarity>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// The top disease leads the runner-up by at least the threshold.
    Margin,
    QuestionLimit,
    /// No askable finding remains.
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Status {
    Active,
    Concluded {
        reason: Termination,
        differential: DifferentialDiagnosis,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversationState {
    pub session_id: String,
    pub age_band: String,
    pub gender: String,
    pub rfe: String,
    /// Complaint as the patient typed it.
    pub rfe_text: String,
    pub config: EngineConfig,
    pub assertions: Vec<Assertion>,
    pub turns: Vec<Turn>,
    pub status: Status,
    pub question_count: usize,
    pub clarifications: usize,
}

impl ConversationState {
    pub fn is_active(&self) -> bool {
        matches!(self.status, Status::Active)
    }

    /// The last question, if it still awaits a yes/no reply.
    pub fn pending(&self) -> Option<&Turn> {
        self.turns.last().filter(|t| t.polarity.is_none() && self.is_active())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Started {
        session_id: String,
        profile: Profile,
        rfe: String,
        rfe_text: String,
        config: EngineConfig,
    },
    QuestionEmitted {
        turn: Turn,
    },
    AnswerReceived {
        text: String,
        parsed: ParsedAnswer,
    },
    Concluded {
        reason: Termination,
        differential: DifferentialDiagnosis,
    },
}

impl Event {
    pub fn name(&self) -> &'static str {
        match self {
            Event::Started { .. } => "started",
            Event::QuestionEmitted { .. } => "question_emitted",
            Event::AnswerReceived { .. } => "answer_received",
            Event::Concluded { .. } => "concluded",
        }
    }
}

fn replay_err(event: &Event, message: impl Into<String>) -> DialogueError {
    DialogueError::Replay {
        event: event.name(),
        message: message.into(),
    }
}

/// Creates a state from a `Started` event.
pub fn initial_state(event: &Event) -> Result<ConversationState, DialogueError> {
    let Event::Started {
        session_id,
        profile,
        rfe,
        rfe_text,
        config,
    } = event
    else {
        return Err(replay_err(event, "a session must begin with started"));
    };
    Ok(ConversationState {
        session_id: session_id.clone(),
        age_band: profile.age_band.clone(),
        gender: profile.gender.clone(),
        rfe: rfe.clone(),
        rfe_text: rfe_text.clone(),
        config: config.clone(),
        assertions: vec![Assertion::present(rfe.clone())],
        turns: Vec::new(),
        status: Status::Active,
        question_count: 0,
        clarifications: 0,
    })
}

/// Applies one event after `Started`.
pub fn apply(state: &mut ConversationState, event: &Event) -> Result<(), DialogueError> {
    if !state.is_active() {
        return Err(replay_err(event, "session already concluded"));
    }
    match event {
        Event::Started { .. } => return Err(replay_err(event, "session already started")),
        Event::QuestionEmitted { turn } => {
            if state.pending().is_some() {
                return Err(replay_err(event, "previous question is unanswered"));
            }
            state.turns.push(turn.clone());
            state.question_count += 1;
        }
        Event::AnswerReceived { text, parsed } => {
            let Some(turn) = state.turns.last_mut().filter(|t| t.polarity.is_none()) else {
                return Err(replay_err(event, "no pending question"));
            };
            turn.replies.push(text.clone());
            let polarity = match parsed {
                ParsedAnswer::Present => Polarity::Present,
                ParsedAnswer::Absent => Polarity::Absent,
                ParsedAnswer::Unknown => {
                    state.clarifications += 1;
                    return Ok(());
                }
            };
            turn.polarity = Some(polarity);
            state.assertions.push(Assertion {
                finding_id: turn.codes.next_finding.clone(),
                polarity,
            });
        }
        Event::Concluded { reason, differential } => {
            if state.pending().is_some() {
                return Err(replay_err(event, "cannot conclude with a pending question"));
            }
            state.status = Status::Concluded {
                reason: *reason,
                differential: differential.clone(),
            };
        }
    }
    Ok(())
}

pub fn replay<'e>(events: impl IntoIterator<Item = &'e Event>) -> Result<Option<ConversationState>, DialogueError> {
    let mut iter = events.into_iter();
    let Some(first) = iter.next() else {
        return Ok(None);
    };
    let mut state = initial_state(first)?;
    for e in iter {
        apply(&mut state, e)?;
    }
    Ok(Some(state))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Reply {
    Question {
        text: String,
        number: usize,
    },
    Clarification {
        text: String,
    },
    Conclusion {
        reason: Termination,
        question_count: usize,
        differential: DifferentialDiagnosis,
    },
}

/// Events produced by one engine call (already applied to the state) and
/// what to show the patient.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub events: Vec<Event>,
    pub reply: Reply,
}

/// Shared, read-only resources plus the turn logic. Sessions are plain
/// values owned by the caller.
#[derive(Clone)]
pub struct Engine {
    kb: Arc<KnowledgeBase>,
    bank: Arc<ParaphraseBank>,
    lexicon: Arc<EmoteLexicon>,
    classifier: Option<Arc<EmotionClassifier>>,
    external: Option<Arc<dyn ExternalGenerator>>,
}

impl Engine {
    pub fn new(kb: Arc<KnowledgeBase>, bank: Arc<ParaphraseBank>, lexicon: Arc<EmoteLexicon>) -> Self {
        Self {
            kb,
            bank,
            lexicon,
            classifier: None,
            external: None,
        }
    }

    pub fn with_classifier(mut self, classifier: Arc<EmotionClassifier>) -> Self {
        self.classifier = Some(classifier);
        self
    }

    pub fn with_external(mut self, external: Arc<dyn ExternalGenerator>) -> Self {
        self.external = Some(external);
        self
    }

    pub fn kb(&self) -> &KnowledgeBase {
        &self.kb
    }

    pub fn has_classifier(&self) -> bool {
        self.classifier.is_some()
    }

    /// Exact (case/punctuation-insensitive) name or id match first, then the
    /// best fuzzy match scoring at least [`RFE_MATCH_THRESHOLD`].
    pub fn resolve_rfe(&self, text: &str) -> Result<String, DialogueError> {
        let complaints = || self.kb.findings().filter(|f| !f.is_demographic);
        if let Some(f) = self.kb.finding_by_name(text).filter(|f| !f.is_demographic) {
            return Ok(f.id.clone());
        }
        if let Some(f) = self.kb.finding(text.trim()).filter(|f| !f.is_demographic) {
            return Ok(f.id.clone());
        }
        let mut scored: Vec<(u8, &str, &str)> = complaints()
            .map(|f| (fuzzy_score(text, &f.name), f.name.as_str(), f.id.as_str()))
            .collect();
        scored.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        match scored.first() {
            Some(&(score, _, id)) if score >= RFE_MATCH_THRESHOLD => Ok(id.to_string()),
            _ => Err(DialogueError::RfeNotFound {
                text: text.to_string(),
                suggestions: scored.iter().take(3).map(|s| s.1.to_string()).collect(),
            }),
        }
    }

    pub fn start(
        &self,
        session_id: impl Into<String>,
        profile: Profile,
        rfe_text: &str,
        config: EngineConfig,
    ) -> Result<(ConversationState, Step), DialogueError> {
        config.validate()?;
        if config.emote_mode == EmoteMode::Classifier && self.classifier.is_none() && config.variant != EngineVariant::Expert {
            return Err(DialogueError::Config("emote_mode classifier needs a trained model".into()));
        }
        let rfe = self.resolve_rfe(rfe_text)?;
        let started = Event::Started {
            session_id: session_id.into(),
            profile,
            rfe,
            rfe_text: rfe_text.trim().to_string(),
            config,
        };
        let mut state = initial_state(&started)?;
        let mut events = vec![started];
        let reply = self.step(&mut state, &mut events)?;
        Ok((state, Step { events, reply }))
    }

    pub fn answer(&self, state: &mut ConversationState, raw: &str) -> Result<Step, DialogueError> {
        if !state.is_active() {
            return Err(DialogueError::Concluded(state.session_id.clone()));
        }
        let Some(pending) = state.pending().cloned() else {
            return Err(DialogueError::Replay {
                event: "answer_received",
                message: "no pending question".into(),
            });
        };
        let parsed = parse_answer(raw);
        let received = Event::AnswerReceived {
            text: raw.to_string(),
            parsed,
        };
        apply(state, &received)?;
        let mut events = vec![received];
        if parsed == ParsedAnswer::Unknown {
            let reply = Reply::Clarification {
                text: format!("Sorry, I didn't catch that. Please answer yes or no: {}", pending.question),
            };
            return Ok(Step { events, reply });
        }
        let reply = self.step(state, &mut events)?;
        Ok(Step { events, reply })
    }

    pub fn differential(&self, state: &ConversationState) -> Result<DifferentialDiagnosis, DialogueError> {
        if let Status::Concluded { differential, .. } = &state.status {
            return Ok(differential.clone());
        }
        Ok(self.kb.differential_with(&state.assertions, state.config.temperature)?)
    }

    fn emit(&self, state: &mut ConversationState, events: &mut Vec<Event>, event: Event) -> Result<(), DialogueError> {
        apply(state, &event)?;
        events.push(event);
        Ok(())
    }

    fn step(&self, state: &mut ConversationState, events: &mut Vec<Event>) -> Result<Reply, DialogueError> {
        let cfg = state.config.clone();
        let dd = self.kb.differential_with(&state.assertions, cfg.temperature)?;
        let margin = dd.margin()?;
        let next = if margin >= cfg.margin_threshold {
            Err(Termination::Margin)
        } else if state.question_count >= cfg.max_questions {
            Err(Termination::QuestionLimit)
        } else {
            self.kb.next_finding(&state.assertions, &dd).ok_or(Termination::Exhausted)
        };
        let next = match next {
            Ok(id) => id,
            Err(reason) => {
                self.emit(
                    state,
                    events,
                    Event::Concluded {
                        reason,
                        differential: dd.clone(),
                    },
                )?;
                return Ok(Reply::Conclusion {
                    reason,
                    question_count: state.question_count,
                    differential: dd,
                });
            }
        };

        let name = |id: &str| self.kb.finding(id).map_or_else(|| id.to_string(), |f| f.name.clone());
        let (previous_question, previous_response) = match state.turns.last() {
            Some(t) => (t.question.clone(), t.replies.last().cloned().unwrap_or_default()),
            None => (String::new(), state.rfe_text.clone()),
        };
        let triple = ContextTriple {
            previous_question: previous_question.clone(),
            patient_response: previous_response.clone(),
            target_finding: name(&next),
        };
        let (emote, emote_probabilities) = match (&self.classifier, cfg.emote_mode, cfg.variant) {
            (_, EmoteMode::None, _) | (_, _, EngineVariant::Expert) | (None, _, _) => (EmoteCode::None, None),
            (Some(clf), EmoteMode::Classifier, _) => {
                let p = clf.predict(&triple)?;
                let code = cfg.emote_threshold.map_or(p.code, |t| p.code_at(t));
                (code, Some(p.probabilities))
            }
        };
        let context = GenerationContext {
            age_band: state.age_band.clone(),
            gender: state.gender.clone(),
            rfe: name(&state.rfe),
            prior_findings: state.assertions[1..]
                .iter()
                .map(|a| (name(&a.finding_id), a.polarity))
                .collect(),
            previous_question,
            previous_response,
        };
        let codes = ControlCodes {
            next_finding: next,
            emote,
        };
        let mut generator = Generator::new(&self.kb, &self.bank, &self.lexicon);
        if let Some(ext) = &self.external {
            generator = generator.with_external(ext.as_ref());
        }
        let mut rng = crate::rng::stream(
            cfg.seed ^ crate::rng::key_hash(&state.session_id),
            state.question_count as u64,
        );
        let generated = generator.generate(cfg.variant, &context, &codes, &mut rng)?;
        let turn = Turn {
            question: generated.text.clone(),
            codes,
            emote_phrase: generated.emote_phrase,
            emote_probabilities,
            fallback: generated.fallback,
            replies: Vec::new(),
            polarity: None,
        };
        self.emit(state, events, Event::QuestionEmitted { turn })?;
        Ok(Reply::Question {
            text: generated.text,
            number: state.question_count,
        })
    }
}
