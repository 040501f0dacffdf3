//! Seeded synthetic data with known structure: random knowledge bases for
//! simulator checks, keyword-coded emote corpora for the classifier and
//! edited-question corpora for emote extraction.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::emote::{prepend_phrase, ContextTriple, EditedQuestionRecord, EmoteCode, EmoteDatasetRow, EmoteLexicon};
use crate::kb::{Association, Disease, Finding, KbError, KnowledgeBase};

/// Random KB with `n_diseases` diseases and `n_findings` non-demographic
/// findings. Finding i belongs to disease `i mod n_diseases` (high ES, low
/// TF) and is weakly tied to each other disease with probability one half
/// (low ES, high TF), so answers tend to push towards one disease. One pair
/// of findings in eight shares an exclusion group.
pub fn random_kb(seed: u64, n_diseases: usize, n_findings: usize) -> Result<KnowledgeBase, KbError> {
    let mut rng = crate::rng::seeded(seed);
    let diseases: Vec<Disease> = (0..n_diseases)
        .map(|i| Disease {
            id: format!("d{i:02}"),
            name: format!("disease {i}"),
        })
        .collect();
    let mut findings: Vec<Finding> = (0..n_findings)
        .map(|i| Finding {
            id: format!("s{i:02}"),
            name: format!("symptom {i}"),
            expert_question: format!("Do you have symptom {i}?"),
            is_demographic: false,
            exclusion_group: None,
        })
        .collect();
    let mut order: Vec<usize> = (0..n_findings).collect();
    order.shuffle(&mut rng);
    for (g, pair) in order.chunks(2).take(n_findings / 8).enumerate() {
        if let [a, b] = pair {
            findings[*a].exclusion_group = Some(format!("g{g}"));
            findings[*b].exclusion_group = Some(format!("g{g}"));
        }
    }
    let mut associations = Vec::new();
    for (i, f) in findings.iter().enumerate() {
        for (j, d) in diseases.iter().enumerate() {
            let (es, tf) = if i % n_diseases == j {
                (rng.gen_range(3..=5), rng.gen_range(1..=2))
            } else if rng.gen_bool(0.5) {
                (rng.gen_range(0..=2), rng.gen_range(2..=5))
            } else {
                continue;
            };
            associations.push(Association {
                finding_id: f.id.clone(),
                disease_id: d.id.clone(),
                es,
                tf,
            });
        }
    }
    KnowledgeBase::from_parts(diseases, findings, associations)
}

const PREVIOUS_QUESTIONS: [&str; 8] = [
    "Do you have a fever?",
    "Have you been coughing?",
    "Do you feel tired during the day?",
    "Do you have any allergies?",
    "Have you lost weight recently?",
    "Do you sleep well at night?",
    "Do you take any medication?",
    "Have you had this before?",
];

const ORDINARY_FINDINGS: [&str; 10] = [
    "dizziness",
    "nausea",
    "back pain",
    "sore throat",
    "joint stiffness",
    "blurred vision",
    "chest tightness",
    "ear ache",
    "skin rash",
    "loss of appetite",
];

const SENSITIVE_FINDINGS: [&str; 5] = [
    "multiple sexual partners",
    "recreational drug use",
    "history of sexually transmitted infection",
    "heavy alcohol intake",
    "urinary incontinence",
];

const NEUTRAL_RESPONSES: [&str; 8] = [
    "no",
    "yes",
    "not really",
    "no I don't",
    "I don't think so",
    "nope",
    "yes I do",
    "not that I know of",
];

const INFORMATIVE_RESPONSES: [&str; 6] = [
    "yes I started noticing it since last week",
    "I have been keeping a diary of it since monday",
    "my doctor prescribed tablets and they helped",
    "I started walking every morning since then",
    "I noticed it mostly after dinner lately",
    "I already checked with the pharmacist yesterday",
];

const DISTRESSED_RESPONSES: [&str; 6] = [
    "yes and it is terrible",
    "it is awful and I am really worried",
    "the pain is unbearable",
    "I am scared it is getting worse",
    "yes it is horrible and exhausting",
    "I feel miserable and frightened",
];

/// Which rule generates each class:
/// none: neutral answer, ordinary target;
/// affirmative: informative answer, ordinary target;
/// empathy: distressed answer, ordinary target;
/// apology: neutral answer, sensitive target.
/// The previous question is noise for every class.
pub fn keyword_triple(code: EmoteCode, rng: &mut impl Rng) -> ContextTriple {
    let pick = |pool: &[&str], rng: &mut dyn rand::RngCore| pool.choose(rng).unwrap().to_string();
    let response_pool: &[&str] = match code {
        EmoteCode::None | EmoteCode::Apology => &NEUTRAL_RESPONSES,
        EmoteCode::Affirmative => &INFORMATIVE_RESPONSES,
        EmoteCode::Empathy => &DISTRESSED_RESPONSES,
    };
    let target_pool: &[&str] = if code == EmoteCode::Apology {
        &SENSITIVE_FINDINGS
    } else {
        &ORDINARY_FINDINGS
    };
    ContextTriple {
        previous_question: pick(&PREVIOUS_QUESTIONS, rng),
        patient_response: pick(response_pool, rng),
        target_finding: pick(target_pool, rng),
    }
}

fn row(code: EmoteCode, context: ContextTriple) -> EmoteDatasetRow {
    EmoteDatasetRow {
        context,
        emote_phrase: String::new(),
        code,
    }
}

/// Keyword-coded corpus with `counts[c]` rows of class `c`, interleaved in
/// a seeded order. Classes are separable by construction (see
/// [`keyword_triple`]).
pub fn separable_emote_corpus(counts: [usize; 4], seed: u64) -> Vec<EmoteDatasetRow> {
    let mut rng = crate::rng::seeded(seed);
    let mut rows: Vec<EmoteDatasetRow> = EmoteCode::ALL
        .iter()
        .flat_map(|&code| std::iter::repeat_n(code, counts[code.index()]))
        .collect::<Vec<_>>()
        .into_iter()
        .map(|code| row(code, keyword_triple(code, &mut rng)))
        .collect();
    rows.shuffle(&mut rng);
    rows
}

/// Skewed corpus where a fraction `overlap` of every minority class is
/// generated by the none rule, so minority rows are only partly separable.
pub fn imbalanced_emote_corpus(counts: [usize; 4], overlap: f64, seed: u64) -> Vec<EmoteDatasetRow> {
    let mut rng = crate::rng::seeded(seed);
    let mut rows = Vec::new();
    for code in EmoteCode::ALL {
        for _ in 0..counts[code.index()] {
            let rule = if code != EmoteCode::None && rng.gen_bool(overlap) {
                EmoteCode::None
            } else {
                code
            };
            rows.push(row(code, keyword_triple(rule, &mut rng)));
        }
    }
    rows.shuffle(&mut rng);
    rows
}

const FOLLOW_UPS: [&str; 4] = [
    " That is, has it happened more than once?",
    " Please take your time.",
    " For example, during the last month?",
    " Thanks.",
];

/// One edited question: a lexicon phrase prepended to an expert question,
/// sometimes followed by a clarifying sentence. The second value is the
/// exact prefix that was inserted (trimmed), which extraction should
/// return.
#[derive(Debug, Clone, PartialEq)]
pub struct EditedQuestionSample {
    pub record: EditedQuestionRecord,
    pub inserted_prefix: String,
    pub code: EmoteCode,
}

pub fn edited_question_corpus(
    kb: &KnowledgeBase,
    lexicon: &EmoteLexicon,
    n: usize,
    seed: u64,
) -> Vec<EditedQuestionSample> {
    let mut rng = crate::rng::seeded(seed);
    let questions: Vec<(&str, &str)> = kb
        .findings()
        .filter(|f| !f.is_demographic)
        .map(|f| (f.name.as_str(), f.expert_question.as_str()))
        .collect();
    let phrases: Vec<(EmoteCode, String)> = lexicon.entries().map(|e| (e.code, e.phrase)).collect();
    (0..n)
        .map(|_| {
            let (name, question) = *questions.choose(&mut rng).unwrap();
            let (code, phrase) = phrases.choose(&mut rng).unwrap().clone();
            let mut edited = prepend_phrase(&phrase, question);
            let inserted_prefix = edited[..edited.len() - question.len()].trim().to_string();
            if rng.gen_bool(0.5) {
                edited.push_str(FOLLOW_UPS.choose(&mut rng).unwrap());
            }
            EditedQuestionSample {
                record: EditedQuestionRecord {
                    previous_question: PREVIOUS_QUESTIONS.choose(&mut rng).unwrap().to_string(),
                    patient_response: NEUTRAL_RESPONSES.choose(&mut rng).unwrap().to_string(),
                    default_question: question.to_string(),
                    edited_question: edited,
                    target_finding: Some(name.to_string()),
                },
                inserted_prefix,
                code,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpora_are_seed_stable() {
        assert_eq!(separable_emote_corpus([5, 5, 5, 5], 3), separable_emote_corpus([5, 5, 5, 5], 3));
        let rows = separable_emote_corpus([4, 3, 2, 1], 0);
        let count = |c: EmoteCode| rows.iter().filter(|r| r.code == c).count();
        assert_eq!([count(EmoteCode::None), count(EmoteCode::Affirmative), count(EmoteCode::Empathy), count(EmoteCode::Apology)], [4, 3, 2, 1]);
    }

    #[test]
    fn apology_rows_carry_sensitive_targets() {
        for r in separable_emote_corpus([0, 0, 0, 20], 1) {
            assert!(SENSITIVE_FINDINGS.contains(&r.context.target_finding.as_str()));
            assert!(NEUTRAL_RESPONSES.contains(&r.context.patient_response.as_str()));
        }
    }

    #[test]
    fn random_kb_is_valid() {
        let kb = random_kb(1, 6, 24).unwrap();
        assert_eq!(kb.disease_count(), 6);
        assert_eq!(kb.finding_count(), 24);
    }

    #[test]
    fn edited_samples_start_with_prefix() {
        let kb = crate::fixtures::clinic_kb();
        let lex = crate::fixtures::emote_lexicon();
        for s in edited_question_corpus(&kb, &lex, 30, 9) {
            assert!(s.record.edited_question.starts_with(&s.inserted_prefix));
            assert_eq!(lex.code_of(&s.inserted_prefix), Some(s.code));
        }
    }
}
