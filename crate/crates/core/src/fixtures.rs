//! Small bundled fixtures: the two-disease toy KB, a demo clinic KB, the
//! default emote lexicon and a handful of validated paraphrases.

use crate::emote::EmoteLexicon;
use crate::kb::KnowledgeBase;
use crate::paraphrase::ParaphraseBank;

pub const TOY_KB: &str = include_str!("../fixtures/toy.kb");
pub const CLINIC_KB: &str = include_str!("../fixtures/clinic.kb");
pub const EMOTE_LEXICON: &str = include_str!("../fixtures/emote_lexicon.jsonl");
pub const CLINIC_PARAPHRASES: &str = include_str!("../fixtures/clinic_paraphrases.jsonl");

pub fn toy_kb() -> KnowledgeBase {
    KnowledgeBase::from_str(TOY_KB).expect("bundled toy KB is valid")
}

pub fn clinic_kb() -> KnowledgeBase {
    KnowledgeBase::from_str(CLINIC_KB).expect("bundled clinic KB is valid")
}

pub fn emote_lexicon() -> EmoteLexicon {
    EmoteLexicon::from_str(EMOTE_LEXICON).expect("bundled lexicon is valid")
}

/// Expert questions of the clinic KB plus the bundled paraphrases.
pub fn clinic_bank() -> ParaphraseBank {
    let kb = clinic_kb();
    let mut bank = ParaphraseBank::seed_from_kb(&kb);
    bank.merge_str(CLINIC_PARAPHRASES)
        .expect("bundled paraphrases are valid");
    bank
}

/// Test-set confusion counts (rows truth, columns prediction, classes in
/// none/affirmative/empathy/apology order) for a 708-row evaluation with
/// supports 557/127/18/6. Used to check report arithmetic against a known
/// per-class table: accuracy 0.90, macro F1 0.80, weighted F1 0.89.
pub const REFERENCE_CONFUSION: [[usize; 4]; 4] = [
    [549, 4, 3, 1],
    [54, 71, 2, 0],
    [4, 1, 13, 0],
    [1, 0, 0, 5],
];
