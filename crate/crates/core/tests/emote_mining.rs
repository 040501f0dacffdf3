use anamnesis_core::emote::{build_emote_dataset, extract_emote_phrase, EmoteCode};
use anamnesis_core::fixtures;
use anamnesis_core::synth::edited_question_corpus;

#[test]
fn inserted_prefixes_are_recovered() {
    let (kb, lex) = (fixtures::clinic_kb(), fixtures::emote_lexicon());
    let corpus = edited_question_corpus(&kb, &lex, 300, 17);
    for s in &corpus {
        let got = extract_emote_phrase(&s.record.default_question, &s.record.edited_question);
        assert_eq!(got, s.inserted_prefix, "{:?}", s.record.edited_question);
    }
}

#[test]
fn mined_rows_carry_lexicon_codes() {
    let (kb, lex) = (fixtures::clinic_kb(), fixtures::emote_lexicon());
    let corpus = edited_question_corpus(&kb, &lex, 200, 3);
    let records: Vec<_> = corpus.iter().map(|s| s.record.clone()).collect();
    let mined = build_emote_dataset(&records, &lex).unwrap();
    assert!(mined.review.is_empty());
    assert_eq!(mined.rows.len(), corpus.len());
    for (row, sample) in mined.rows.iter().zip(&corpus) {
        assert_eq!(row.code, sample.code);
        assert_ne!(row.code, EmoteCode::None);
    }
}

#[test]
fn phrase_outside_lexicon_goes_to_review() {
    let lex = fixtures::emote_lexicon();
    let record = anamnesis_core::emote::EditedQuestionRecord {
        previous_question: "Do you smoke?".into(),
        patient_response: "No".into(),
        default_question: "Do you have a fever?".into(),
        edited_question: "Hmm, interesting. Do you have a fever?".into(),
        target_finding: None,
    };
    let mined = build_emote_dataset(&[record], &lex).unwrap();
    assert!(mined.rows.is_empty());
    assert_eq!(mined.review[0].emote_phrase, "Hmm, interesting.");
    assert_eq!(mined.review[0].context.target_finding, "Do you have a fever?");
}
