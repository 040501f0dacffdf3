//! Emote codes and phrases, and mining them out of professional edits of
//! templated questions.
//!
//! An edited question is assumed to look like
//! `[emote phrase] <template question> [additional information]`. The edit is
//! split on sentence punctuation, the segment closest to the template is
//! located by fuzzy matching, and whatever precedes it is the emote phrase.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::text::{fuzzy_score, normalize, split_on_punctuation};

#[derive(Debug, thiserror::Error)]
pub enum EmoteError {
    #[error("the none code has no phrases")]
    NoneCode,
    #[error("no phrases registered for {0}")]
    EmptyCode(EmoteCode),
    #[error("lexicon is empty")]
    EmptyLexicon,
    #[error("record {line}: {message}")]
    Record { line: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmoteCode {
    None,
    Affirmative,
    Empathy,
    Apology,
}

impl EmoteCode {
    /// Fixed class order used by the classifier and reports.
    pub const ALL: [EmoteCode; 4] = [
        EmoteCode::None,
        EmoteCode::Affirmative,
        EmoteCode::Empathy,
        EmoteCode::Apology,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EmoteCode::None => "none",
            EmoteCode::Affirmative => "affirmative",
            EmoteCode::Empathy => "empathy",
            EmoteCode::Apology => "apology",
        }
    }
}

impl std::fmt::Display for EmoteCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EmoteCode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown emote code {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmotePhrase {
    pub code: EmoteCode,
    pub phrase: String,
}

/// Phrases per emote code, with a normalized reverse index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmoteLexicon {
    phrases: BTreeMap<EmoteCode, Vec<String>>,
    index: BTreeMap<String, EmoteCode>,
}

impl EmoteLexicon {
    pub fn from_phrases(entries: impl IntoIterator<Item = EmotePhrase>) -> Result<Self, EmoteError> {
        let mut lex = Self::default();
        for (i, e) in entries.into_iter().enumerate() {
            if e.code == EmoteCode::None {
                return Err(EmoteError::Record {
                    line: i + 1,
                    message: "phrases cannot carry the none code".into(),
                });
            }
            let phrase = e.phrase.trim().to_string();
            let key = normalize(&phrase);
            if key.is_empty() {
                return Err(EmoteError::Record {
                    line: i + 1,
                    message: "empty phrase".into(),
                });
            }
            if let Some(existing) = lex.index.get(&key) {
                if *existing != e.code {
                    return Err(EmoteError::Record {
                        line: i + 1,
                        message: format!("{phrase:?} already coded as {existing}"),
                    });
                }
                continue;
            }
            lex.index.insert(key, e.code);
            lex.phrases.entry(e.code).or_default().push(phrase);
        }
        Ok(lex)
    }

    pub fn from_str(doc: &str) -> Result<Self, EmoteError> {
        Self::from_reader(doc.as_bytes())
    }

    pub fn from_reader(reader: impl BufRead) -> Result<Self, EmoteError> {
        let mut entries = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: EmotePhrase = serde_json::from_str(&line).map_err(|e| EmoteError::Record {
                line: idx + 1,
                message: e.to_string(),
            })?;
            entries.push(e);
        }
        Self::from_phrases(entries)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, EmoteError> {
        Self::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn phrases(&self, code: EmoteCode) -> &[String] {
        self.phrases.get(&code).map_or(&[], Vec::as_slice)
    }

    pub fn entries(&self) -> impl Iterator<Item = EmotePhrase> + '_ {
        self.phrases
            .iter()
            .flat_map(|(code, v)| v.iter().map(move |p| EmotePhrase { code: *code, phrase: p.clone() }))
    }

    /// Exact lookup after normalization.
    pub fn code_of(&self, phrase: &str) -> Option<EmoteCode> {
        self.index.get(&normalize(phrase)).copied()
    }

    pub fn sample_phrase(&self, code: EmoteCode, rng: &mut dyn RngCore) -> Result<&str, EmoteError> {
        if code == EmoteCode::None {
            return Err(EmoteError::NoneCode);
        }
        self.phrases(code)
            .choose(rng)
            .map(String::as_str)
            .ok_or(EmoteError::EmptyCode(code))
    }

    /// Finds the longest lexicon phrase opening `text` on a word boundary
    /// and returns it with the remainder (leading punctuation and spaces
    /// removed).
    pub fn strip_leading<'t>(&self, text: &'t str) -> Option<(EmoteCode, &'t str)> {
        let mut best: Option<(usize, EmoteCode, &'t str)> = None;
        for (code, phrases) in &self.phrases {
            for phrase in phrases {
                let Some(rest) = strip_prefix_ci(text, phrase) else {
                    continue;
                };
                if !rest.is_empty() && !rest.starts_with(|c: char| c.is_whitespace() || c.is_ascii_punctuation()) {
                    continue;
                }
                if best.is_none_or(|(len, _, _)| phrase.len() > len) {
                    let rest = rest.trim_start_matches(|c: char| c.is_whitespace() || matches!(c, '.' | '!' | ',' | ';'));
                    best = Some((phrase.len(), *code, rest));
                }
            }
        }
        best.map(|(_, code, rest)| (code, rest))
    }

    pub fn write(&self, mut out: impl Write) -> Result<(), EmoteError> {
        for e in self.entries() {
            writeln!(out, "{}", serde_json::to_string(&e).expect("phrases serialize"))?;
        }
        Ok(())
    }
}

fn strip_prefix_ci<'t>(text: &'t str, prefix: &str) -> Option<&'t str> {
    let mut t = text.char_indices();
    for pc in prefix.chars() {
        let (_, tc) = t.next()?;
        if !tc.to_lowercase().eq(pc.to_lowercase()) {
            return None;
        }
    }
    Some(match t.next() {
        Some((i, _)) => &text[i..],
        None => "",
    })
}

/// Joins an emote phrase and a question, adding a full stop when the phrase
/// has no closing punctuation.
pub fn prepend_phrase(phrase: &str, question: &str) -> String {
    let phrase = phrase.trim();
    if phrase.is_empty() {
        return question.to_string();
    }
    if phrase.ends_with(['.', '!', '?']) {
        format!("{phrase} {question}")
    } else {
        format!("{phrase}. {question}")
    }
}

/// Everything in `edited` before the segment that best matches `default_q`,
/// trimmed. Ties go to the earliest segment.
pub fn extract_emote_phrase(default_q: &str, edited: &str) -> String {
    split_emote(default_q, edited).0.trim().to_string()
}

/// Splits `edited` at the start of the segment that best matches
/// `default_q`: the untrimmed emote prefix and the rest, which concatenate
/// back to `edited`.
pub fn split_emote<'e>(default_q: &str, edited: &'e str) -> (&'e str, &'e str) {
    let mut best: Option<(u8, usize)> = None;
    for seg in split_on_punctuation(edited) {
        let score = fuzzy_score(seg.text, default_q);
        if best.is_none_or(|(s, _)| score > s) {
            best = Some((score, seg.start));
        }
    }
    edited.split_at(best.map_or(0, |(_, start)| start))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditedQuestionRecord {
    pub previous_question: String,
    pub patient_response: String,
    pub default_question: String,
    pub edited_question: String,
    /// Finding name the template asks about; the template text stands in
    /// when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_finding: Option<String>,
}

/// Classifier input: what was just asked, how the patient answered, and
/// what will be asked next.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContextTriple {
    pub previous_question: String,
    pub patient_response: String,
    pub target_finding: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmoteDatasetRow {
    pub context: ContextTriple,
    pub emote_phrase: String,
    pub code: EmoteCode,
}

/// A mined phrase the lexicon could not code; left for a human.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub record_index: usize,
    pub emote_phrase: String,
    pub context: ContextTriple,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmoteMining {
    pub rows: Vec<EmoteDatasetRow>,
    pub review: Vec<ReviewItem>,
}

pub fn build_emote_dataset(
    records: &[EditedQuestionRecord],
    lexicon: &EmoteLexicon,
) -> Result<EmoteMining, EmoteError> {
    if lexicon.is_empty() {
        return Err(EmoteError::EmptyLexicon);
    }
    let mut out = EmoteMining::default();
    for (i, r) in records.iter().enumerate() {
        let context = ContextTriple {
            previous_question: r.previous_question.clone(),
            patient_response: r.patient_response.clone(),
            target_finding: r.target_finding.clone().unwrap_or_else(|| r.default_question.clone()),
        };
        let phrase = extract_emote_phrase(&r.default_question, &r.edited_question);
        if phrase.is_empty() {
            out.rows.push(EmoteDatasetRow {
                context,
                emote_phrase: phrase,
                code: EmoteCode::None,
            });
            continue;
        }
        match lexicon.code_of(&phrase) {
            Some(code) => out.rows.push(EmoteDatasetRow {
                context,
                emote_phrase: phrase,
                code,
            }),
            None => out.review.push(ReviewItem {
                record_index: i,
                emote_phrase: phrase,
                context,
            }),
        }
    }
    Ok(out)
}

/// Seeded split, stratified by code: each class contributes
/// `round(test_fraction * n_class)` rows to the test side.
pub fn split_stratified(
    rows: &[EmoteDatasetRow],
    test_fraction: f64,
    seed: u64,
) -> (Vec<EmoteDatasetRow>, Vec<EmoteDatasetRow>) {
    let mut rng = crate::rng::seeded(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for code in EmoteCode::ALL {
        let mut idx: Vec<usize> = rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.code == code)
            .map(|(i, _)| i)
            .collect();
        idx.shuffle(&mut rng);
        let n_test = (test_fraction * idx.len() as f64).round() as usize;
        let (t, tr) = idx.split_at(n_test);
        test.extend(t.iter().copied());
        train.extend(tr.iter().copied());
    }
    train.sort_unstable();
    test.sort_unstable();
    (
        train.into_iter().map(|i| rows[i].clone()).collect(),
        test.into_iter().map(|i| rows[i].clone()).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use proptest::prelude::*;

    #[test]
    fn worked_example() {
        let got = extract_emote_phrase(
            "Do you have flushing?",
            "Oh I'm sorry to hear that. Do you have flushing? That is, do your arms feel warmer than usual?",
        );
        assert_eq!(got, "Oh I'm sorry to hear that.");
    }

    #[test]
    fn identity_edit_yields_empty() {
        assert_eq!(extract_emote_phrase("Do you smoke?", "Do you smoke?"), "");
    }

    #[test]
    fn multi_segment_prefix() {
        let default_q = "Is your back hurting?";
        let edited = "Got it. Thanks. Is your back hurting?";
        // brute-force argmax over the three segments
        let segs = split_on_punctuation(edited);
        let scores: Vec<u8> = segs.iter().map(|s| fuzzy_score(s.text, default_q)).collect();
        let best = scores.iter().enumerate().max_by_key(|(i, s)| (**s, std::cmp::Reverse(*i))).unwrap().0;
        assert_eq!(best, 2);
        assert_eq!(extract_emote_phrase(default_q, edited), "Got it. Thanks.");
    }

    #[test]
    fn lexicon_codes() {
        let lex = fixtures::emote_lexicon();
        assert_eq!(lex.code_of("Thanks for the input"), Some(EmoteCode::Affirmative));
        assert_eq!(lex.code_of("thanks for the input."), Some(EmoteCode::Affirmative));
        assert_eq!(lex.code_of("Sorry about that"), Some(EmoteCode::Empathy));
        assert_eq!(lex.code_of("I apologise if this is personal"), Some(EmoteCode::Apology));
        assert_eq!(lex.code_of("Lovely weather"), None);
        assert_eq!(lex.phrases(EmoteCode::Affirmative).len(), 4);
    }

    #[test]
    fn lexicon_rejects_none_and_conflicts() {
        assert!(EmoteLexicon::from_str(r#"{"code":"none","phrase":"hm"}"#).is_err());
        let doc = "{\"code\":\"empathy\",\"phrase\":\"Okay\"}\n{\"code\":\"affirmative\",\"phrase\":\"okay.\"}\n";
        assert!(EmoteLexicon::from_str(doc).is_err());
    }

    #[test]
    fn sampling_phrases() {
        let lex = fixtures::emote_lexicon();
        let mut rng = crate::rng::seeded(5);
        for _ in 0..50 {
            let p = lex.sample_phrase(EmoteCode::Affirmative, &mut rng).unwrap();
            assert!(lex.phrases(EmoteCode::Affirmative).iter().any(|x| x == p));
            let p = lex.sample_phrase(EmoteCode::Apology, &mut rng).unwrap();
            assert_eq!(lex.code_of(p), Some(EmoteCode::Apology));
        }
        assert!(matches!(lex.sample_phrase(EmoteCode::None, &mut rng), Err(EmoteError::NoneCode)));
    }

    #[test]
    fn dataset_coding() {
        let lex = fixtures::emote_lexicon();
        let rec = |edited: &str| EditedQuestionRecord {
            previous_question: "Do you have a fever?".into(),
            patient_response: "Yes, since Monday".into(),
            default_question: "Do you have a cough?".into(),
            edited_question: edited.into(),
            target_finding: Some("cough".into()),
        };
        let mined = build_emote_dataset(
            &[
                rec("Do you have a cough?"),
                rec("Thanks for the input. Do you have a cough?"),
                rec("Sorry about that. Do you have a cough?"),
                rec("Lovely weather. Do you have a cough?"),
            ],
            &lex,
        )
        .unwrap();
        let codes: Vec<_> = mined.rows.iter().map(|r| r.code).collect();
        assert_eq!(codes, vec![EmoteCode::None, EmoteCode::Affirmative, EmoteCode::Empathy]);
        assert_eq!(mined.review.len(), 1);
        assert_eq!(mined.review[0].record_index, 3);
        assert!(mined.rows.iter().all(|r| r.emote_phrase.is_empty() == (r.code == EmoteCode::None)));
        assert!(build_emote_dataset(&[], &EmoteLexicon::default()).is_err());
    }

    #[test]
    fn strip_leading_phrase() {
        let lex = fixtures::emote_lexicon();
        assert_eq!(
            lex.strip_leading("Okay, I'm sorry to hear. Do you smoke?"),
            Some((EmoteCode::Empathy, "Do you smoke?"))
        );
        assert_eq!(lex.strip_leading("Okay. Do you smoke?"), Some((EmoteCode::Affirmative, "Do you smoke?")));
        assert_eq!(lex.strip_leading("Okayish question?"), None);
        assert_eq!(lex.strip_leading("Do you smoke?"), None);
    }

    #[test]
    fn stratified_split_sizes() {
        let rows: Vec<EmoteDatasetRow> = (0..50)
            .map(|i| EmoteDatasetRow {
                context: ContextTriple {
                    previous_question: format!("q{i}"),
                    patient_response: String::new(),
                    target_finding: "x".into(),
                },
                emote_phrase: if i % 5 == 0 { "Okay".into() } else { String::new() },
                code: if i % 5 == 0 { EmoteCode::Affirmative } else { EmoteCode::None },
            })
            .collect();
        let (train, test) = split_stratified(&rows, 0.2, 9);
        assert_eq!(train.len() + test.len(), 50);
        assert_eq!(test.iter().filter(|r| r.code == EmoteCode::Affirmative).count(), 2);
        assert_eq!(test.iter().filter(|r| r.code == EmoteCode::None).count(), 8);
        assert_eq!(split_stratified(&rows, 0.2, 9).1, test);
    }

    proptest! {
        #[test]
        fn phrase_and_rest_reconstruct(edited in "[A-Za-z ,']{0,12}[.!?]{0,1}[A-Za-z ,']{0,12}[.?]{0,1}[A-Za-z ]{0,8}",
                                        default_q in "[A-Za-z ]{1,15}\\?") {
            let (prefix, rest) = split_emote(&default_q, &edited);
            prop_assert_eq!(format!("{prefix}{rest}"), edited.clone());
            prop_assert_eq!(prefix.trim(), extract_emote_phrase(&default_q, &edited));
            let segs = split_on_punctuation(&edited);
            prop_assert!(prefix.is_empty() || segs.iter().any(|s| s.start == prefix.len()));
        }
    }
}
