mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use anamnesis_core::dialogue::{ConversationState, Status, Termination};
use anamnesis_core::eval::aggregate_ratings;
use anamnesis_core::journal::replay_file;
use anamnesis_core::kb::{Assertion, DifferentialDiagnosis};
use anamnesis_service::api::{AppState, StartRequest};
use common::*;
use serde_json::{json, Value};

fn start_body(seed: u64) -> Value {
    json!({
        "age_band": "young adult (18 to 40 yrs)",
        "gender": "female",
        "rfe": "abdominal fullness sensation",
        "variant": "full",
        "seed": seed,
    })
}

#[test]
fn scripted_conversation_is_reproducible_and_replayable() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = scripted_run(d1.path(), engine(true), &start_body(7));
    let second = scripted_run(d2.path(), engine(true), &start_body(7));
    assert_eq!(first.transcript, second.transcript);
    assert_eq!(first.journal, second.journal);
    assert_eq!(first.final_state, second.final_state);

    let live: ConversationState = serde_json::from_str(&first.final_state).unwrap();
    let replayed = replay_file(d1.path().join("journal.jsonl")).unwrap();
    assert_eq!(replayed.get(&first.session_id), Some(&live));

    match &live.status {
        Status::Concluded { reason, differential } => match reason {
            Termination::Margin => assert!(differential.margin().unwrap() >= 20.0),
            Termination::QuestionLimit => assert_eq!(live.question_count, 10),
            Termination::Exhausted => panic!("clinic KB should not run out of findings"),
        },
        Status::Active => panic!("conversation still active after the script"),
    }
}

#[test]
fn different_seeds_change_wording_not_findings() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let a = scripted_run(d1.path(), engine(true), &start_body(1));
    let b = scripted_run(d2.path(), engine(true), &start_body(2));
    let sa: ConversationState = serde_json::from_str(&a.final_state).unwrap();
    let sb: ConversationState = serde_json::from_str(&b.final_state).unwrap();
    let asked = |s: &ConversationState| s.turns.iter().map(|t| t.codes.next_finding.clone()).collect::<Vec<_>>();
    assert_eq!(asked(&sa), asked(&sb));
}

#[test]
fn complaint_resolution() {
    let server = TestServer::start(engine(false), None, None);
    let c = client();
    let mut body = start_body(0);
    body["rfe"] = json!("abdominal fullnes sensation");
    let (status, text) = post(&c, &server.url("/conversations"), &body);
    assert_eq!(status, 200, "{text}");
    let v: Value = serde_json::from_str(&text).unwrap();
    let (_, state) = get(&c, &server.url(&format!("/conversations/{}", v["session_id"].as_str().unwrap())));
    let state: ConversationState = serde_json::from_str(&state).unwrap();
    assert_eq!(state.rfe, "abdominal_fullness");
    assert_eq!(state.assertions[0], Assertion::present("abdominal_fullness"));

    body["rfe"] = json!("xyzzy");
    let (status, text) = post(&c, &server.url("/conversations"), &body);
    assert_eq!(status, 404);
    let v: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["suggestions"].as_array().unwrap().len(), 3);
}

#[test]
fn variant_needing_a_model_is_rejected_without_one() {
    let server = TestServer::start(engine(false), None, None);
    let mut body = start_body(0);
    body["emote_mode"] = json!("classifier");
    let (status, _) = post(&client(), &server.url("/conversations"), &body);
    assert_eq!(status, 400);
}

#[test]
fn unclear_answer_asks_again_without_using_budget() {
    let server = TestServer::start(engine(true), None, None);
    let c = client();
    let (_, text) = post(&c, &server.url("/conversations"), &start_body(3));
    let id = serde_json::from_str::<Value>(&text).unwrap()["session_id"].as_str().unwrap().to_string();
    let (status, text) = post(&c, &server.url(&format!("/conversations/{id}/answers")), &json!({"text": "maybe??"}));
    assert_eq!(status, 200);
    let reply: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(reply["type"], "clarification");
    let (_, state) = get(&c, &server.url(&format!("/conversations/{id}")));
    let state: ConversationState = serde_json::from_str(&state).unwrap();
    assert_eq!(state.question_count, 1);
    assert_eq!(state.clarifications, 1);
    assert_eq!(state.assertions.len(), 1);
}

#[test]
fn session_errors() {
    let server = TestServer::start(engine(false), None, None);
    let c = client();
    let (status, _) = get(&c, &server.url("/conversations/c999999"));
    assert_eq!(status, 404);
    let (status, _) = post(&c, &server.url("/conversations/c999999/answers"), &json!({"text": "yes"}));
    assert_eq!(status, 404);

    let mut body = start_body(0);
    body["max_questions"] = json!(1);
    let (_, text) = post(&c, &server.url("/conversations"), &body);
    let id = serde_json::from_str::<Value>(&text).unwrap()["session_id"].as_str().unwrap().to_string();
    let (_, text) = post(&c, &server.url(&format!("/conversations/{id}/answers")), &json!({"text": "no"}));
    assert_eq!(serde_json::from_str::<Value>(&text).unwrap()["type"], "conclusion");
    let (status, _) = post(&c, &server.url(&format!("/conversations/{id}/answers")), &json!({"text": "no"}));
    assert_eq!(status, 409);
    let (status, _) = get(&c, &server.url("/healthz"));
    assert_eq!(status, 200);
}

#[test]
fn differential_endpoint() {
    let eng = engine(false);
    let expected = eng
        .kb()
        .differential(&[Assertion::present("abdominal_fullness")])
        .unwrap();
    let server = TestServer::start(eng, None, None);
    let c = client();
    let (_, text) = post(&c, &server.url("/conversations"), &start_body(0));
    let id = serde_json::from_str::<Value>(&text).unwrap()["session_id"].as_str().unwrap().to_string();
    let (status, text) = get(&c, &server.url(&format!("/conversations/{id}/differential")));
    assert_eq!(status, 200);
    let dd: DifferentialDiagnosis = serde_json::from_str(&text).unwrap();
    assert_eq!(dd, expected);

    let mut body = start_body(0);
    body["max_questions"] = json!(1);
    let (_, text) = post(&c, &server.url("/conversations"), &body);
    let id = serde_json::from_str::<Value>(&text).unwrap()["session_id"].as_str().unwrap().to_string();
    let (_, text) = post(&c, &server.url(&format!("/conversations/{id}/answers")), &json!({"text": "yes"}));
    let concluded: Value = serde_json::from_str(&text).unwrap();
    let (_, text) = get(&c, &server.url(&format!("/conversations/{id}/differential")));
    let after: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(after, concluded["differential"]);
}

#[test]
fn journal_restores_sessions_on_restart() {
    let dir = tempfile::tempdir().unwrap();
    let journal = dir.path().join("j.jsonl");
    let c = client();
    let first_id;
    let before;
    {
        let server = TestServer::start(engine(false), Some(&journal), None);
        let (_, text) = post(&c, &server.url("/conversations"), &start_body(0));
        first_id = serde_json::from_str::<Value>(&text).unwrap()["session_id"].as_str().unwrap().to_string();
        post(&c, &server.url(&format!("/conversations/{first_id}/answers")), &json!({"text": "yes"}));
        before = get(&c, &server.url(&format!("/conversations/{first_id}"))).1;
    }
    let server = TestServer::start(engine(false), Some(&journal), None);
    assert_eq!(get(&c, &server.url(&format!("/conversations/{first_id}"))).1, before);
    let (_, text) = post(&c, &server.url("/conversations"), &start_body(0));
    let next = serde_json::from_str::<Value>(&text).unwrap()["session_id"].as_str().unwrap().to_string();
    assert_ne!(next, first_id);
    let (status, _) = post(&c, &server.url(&format!("/conversations/{first_id}/answers")), &json!({"text": "no"}));
    assert_eq!(status, 200);
}

#[test]
fn parallel_sessions_stay_consistent_with_journal() {
    let dir = tempfile::tempdir().unwrap();
    let journal = dir.path().join("j.jsonl");
    let server = TestServer::start(engine(true), Some(&journal), None);
    let base = server.base.clone();
    let handles: Vec<_> = (0..6)
        .map(|i| {
            let base = base.clone();
            std::thread::spawn(move || {
                let c = client();
                let (_, text) = post(&c, &format!("{base}/conversations"), &start_body(i));
                let id = serde_json::from_str::<Value>(&text).unwrap()["session_id"].as_str().unwrap().to_string();
                for answer in SCRIPT {
                    let url = format!("{base}/conversations/{id}/answers");
                    let (status, _) = post(&c, &url, &json!({ "text": answer }));
                    if status == 409 {
                        break;
                    }
                    // reads during other sessions' turns see whole states
                    let (_, state) = get(&c, &format!("{base}/conversations/{id}"));
                    let state: ConversationState = serde_json::from_str(&state).unwrap();
                    assert_eq!(state.question_count, state.turns.len());
                }
                id
            })
        })
        .collect();
    let ids: Vec<String> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    let c = client();
    let live: BTreeMap<String, ConversationState> = ids
        .iter()
        .map(|id| {
            let (_, s) = get(&c, &server.url(&format!("/conversations/{id}")));
            (id.clone(), serde_json::from_str(&s).unwrap())
        })
        .collect();
    drop(server);
    assert_eq!(replay_file(&journal).unwrap(), live);
    for s in live.values() {
        assert!(s.question_count <= 10);
    }
}

#[test]
fn paired_run_and_rating_flow() {
    let dir = tempfile::tempdir().unwrap();
    let ratings = dir.path().join("ratings.jsonl");
    let server = TestServer::start(engine(true), None, Some(&ratings));
    let c = client();
    let (status, text) = post(
        &c,
        &server.url("/pairs"),
        &json!({
            "age_band": "adult", "gender": "male", "rfe": "abdominal fullness sensation",
            "models": ["expert", "full"], "seed": 5, "case_ref": "case-1"
        }),
    );
    assert_eq!(status, 200, "{text}");
    let pair: Value = serde_json::from_str(&text).unwrap();
    let pair_id = pair["pair_id"].as_str().unwrap().to_string();
    let session_a = pair["a"]["session_id"].as_str().unwrap().to_string();

    // identities stay hidden until rated
    let (_, view) = get(&c, &server.url(&format!("/pairs/{pair_id}")));
    let view: Value = serde_json::from_str(&view).unwrap();
    assert!(view.get("models").is_none());
    assert!(view["a"].get("config").is_none());
    let (_, state) = get(&c, &server.url(&format!("/conversations/{session_a}")));
    assert!(serde_json::from_str::<Value>(&state).unwrap().get("config").is_none());

    let early = json!({"rater_id": "r1", "pair_id": pair_id, "points_a": 1, "points_b": 0});
    assert_eq!(post(&c, &server.url("/ratings"), &early).0, 409);

    for answer in SCRIPT {
        let (status, text) = post(&c, &server.url(&format!("/pairs/{pair_id}/answers")), &json!({ "text": answer }));
        assert_eq!(status, 200, "{text}");
    }
    let (_, view) = get(&c, &server.url(&format!("/pairs/{pair_id}")));
    let view: Value = serde_json::from_str(&view).unwrap();
    assert_eq!(view["concluded"], true);
    // both sides saw the same answers in the same order
    let replies = |side: &str| -> Vec<String> {
        view[side]["turns"]
            .as_array()
            .unwrap()
            .iter()
            .flat_map(|t| t["replies"].as_array().unwrap().iter().map(|r| r.as_str().unwrap().to_string()))
            .collect()
    };
    let (ra, rb) = (replies("a"), replies("b"));
    let shared = ra.len().min(rb.len());
    assert_eq!(ra[..shared], rb[..shared]);

    let equal_no_comment = json!({"rater_id": "r1", "pair_id": pair_id, "points_a": 1, "points_b": 1, "comment": " "});
    assert_eq!(post(&c, &server.url("/ratings"), &equal_no_comment).0, 422);
    let (status, text) = post(&c, &server.url("/ratings"), &early);
    assert_eq!(status, 200, "{text}");
    let rated: Value = serde_json::from_str(&text).unwrap();
    let mut models = vec![rated["models"]["a"].as_str().unwrap(), rated["models"]["b"].as_str().unwrap()];
    models.sort();
    assert_eq!(models, ["expert", "full"]);
    assert_eq!(rated["record"]["case_ref"], "case-1");

    let (_, text) = get(&c, &server.url("/ratings"));
    let all: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(all["aggregate"]["exclusive"]["a"], 1);
    let line = std::fs::read_to_string(&ratings).unwrap();
    let record = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(aggregate_ratings(&[record]).unwrap().total_a, 1);

    let (_, view) = get(&c, &server.url(&format!("/pairs/{pair_id}")));
    assert!(serde_json::from_str::<Value>(&view).unwrap().get("models").is_some());
}

#[test]
fn ratings_without_pair_need_case_ref() {
    let server = TestServer::start(engine(false), None, None);
    let c = client();
    let (status, _) = post(&c, &server.url("/ratings"), &json!({"rater_id": "r", "points_a": 0, "points_b": 1}));
    assert_eq!(status, 422);
    let (status, _) = post(
        &c,
        &server.url("/ratings"),
        &json!({"rater_id": "r", "case_ref": "x", "points_a": 0, "points_b": 1}),
    );
    assert_eq!(status, 200);
}

#[test]
fn expert_sessions_never_carry_emotes() {
    let state = Arc::new(AppState::new(engine(true), defaults(), None, None).unwrap());
    let lexicon = anamnesis_core::fixtures::emote_lexicon();
    for seed in 0..5 {
        let started = state
            .start(&StartRequest {
                age_band: "adult".into(),
                gender: "female".into(),
                rfe: "abdominal fullness sensation".into(),
                variant: Some(anamnesis_core::nlg::EngineVariant::Expert),
                seed: Some(seed),
                emote_mode: None,
                max_questions: None,
                margin_threshold: None,
            })
            .unwrap();
        for answer in SCRIPT {
            if state.answer(&started.session_id, answer).is_err() {
                break;
            }
        }
        let s = state.state(&started.session_id).unwrap();
        for t in &s.turns {
            assert!(lexicon.strip_leading(&t.question).is_none(), "{}", t.question);
        }
    }
}
