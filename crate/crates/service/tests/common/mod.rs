#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use std::thread::JoinHandle;

use anamnesis_core::classifier::embed::HashingEmbedder;
use anamnesis_core::classifier::{EmotionClassifier, TrainConfig};
use anamnesis_core::dialogue::Engine;
use anamnesis_core::fixtures;
use anamnesis_core::nlg::EngineVariant;
use anamnesis_core::synth::separable_emote_corpus;
use anamnesis_service::api::{router, AppState, SessionDefaults};

pub fn classifier() -> EmotionClassifier {
    let rows = separable_emote_corpus([40, 40, 40, 40], 11);
    let config = TrainConfig {
        k: 20,
        ..TrainConfig::default()
    };
    EmotionClassifier::train(&rows, Arc::new(HashingEmbedder::default()), &config)
        .expect("training on the keyword corpus")
        .0
}

pub fn engine(with_classifier: bool) -> Engine {
    let engine = Engine::new(
        Arc::new(fixtures::clinic_kb()),
        Arc::new(fixtures::clinic_bank()),
        Arc::new(fixtures::emote_lexicon()),
    );
    if with_classifier {
        engine.with_classifier(Arc::new(classifier()))
    } else {
        engine
    }
}

pub fn defaults() -> SessionDefaults {
    SessionDefaults {
        variant: EngineVariant::Full,
        seed: 0,
        max_questions: 10,
        margin_threshold: 20.0,
    }
}

/// An API server on an ephemeral port, stopped on drop.
pub struct TestServer {
    pub base: String,
    pub state: Arc<AppState>,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl TestServer {
    pub fn start(engine: Engine, journal: Option<&Path>, ratings: Option<&Path>) -> Self {
        let state = Arc::new(AppState::new(engine, defaults(), journal, ratings).expect("app state"));
        let (addr_tx, addr_rx) = std::sync::mpsc::channel::<SocketAddr>();
        let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
        let app = router(state.clone());
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Runtime::new().expect("runtime");
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.expect("bind");
                addr_tx.send(listener.local_addr().unwrap()).unwrap();
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = stop_rx.await;
                    })
                    .await
                    .expect("serve");
            });
        });
        let addr = addr_rx.recv().expect("server address");
        Self {
            base: format!("http://{addr}"),
            state,
            shutdown: Some(stop_tx),
            thread: Some(thread),
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

pub fn client() -> reqwest::blocking::Client {
    reqwest::blocking::Client::new()
}

/// POSTs JSON and returns status plus the raw body.
pub fn post(client: &reqwest::blocking::Client, url: &str, body: &serde_json::Value) -> (u16, String) {
    let r = client.post(url).json(body).send().expect("request");
    (r.status().as_u16(), r.text().expect("body"))
}

pub fn get(client: &reqwest::blocking::Client, url: &str) -> (u16, String) {
    let r = client.get(url).send().expect("request");
    (r.status().as_u16(), r.text().expect("body"))
}

pub const SCRIPT: [&str; 10] = ["Yes", "No", "Yes", "No", "No", "Yes", "No", "Yes", "No", "No"];

/// Everything observable from one scripted HTTP conversation.
pub struct ScriptedRun {
    pub session_id: String,
    /// Raw response bodies in order.
    pub transcript: Vec<String>,
    pub final_state: String,
    pub journal: Vec<u8>,
}

/// Runs the scripted conversation against a fresh server with a journal in
/// `dir`.
pub fn scripted_run(dir: &Path, engine: Engine, start: &serde_json::Value) -> ScriptedRun {
    let journal = dir.join("journal.jsonl");
    let server = TestServer::start(engine, Some(&journal), None);
    let c = client();
    let (status, body) = post(&c, &server.url("/conversations"), start);
    assert_eq!(status, 200, "{body}");
    let started: serde_json::Value = serde_json::from_str(&body).unwrap();
    let id = started["session_id"].as_str().unwrap().to_string();
    let mut transcript = vec![body];
    let mut reply = started["reply"].clone();
    for answer in SCRIPT {
        if reply["type"] == "conclusion" {
            break;
        }
        let (status, body) = post(
            &c,
            &server.url(&format!("/conversations/{id}/answers")),
            &serde_json::json!({ "text": answer }),
        );
        assert_eq!(status, 200, "{body}");
        reply = serde_json::from_str(&body).unwrap();
        transcript.push(body);
    }
    let (_, final_state) = get(&c, &server.url(&format!("/conversations/{id}")));
    drop(server);
    ScriptedRun {
        session_id: id,
        transcript,
        final_state,
        journal: std::fs::read(&journal).unwrap(),
    }
}
