//! Loading the knowledge base, paraphrase bank, emote lexicon and classifier
//! named in the configuration. Unset paths fall back to the bundled clinic
//! fixtures.

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use anamnesis_core::classifier::embed::HashingEmbedder;
use anamnesis_core::classifier::{ClassifierModel, EmotionClassifier};
use anamnesis_core::dialogue::Engine;
use anamnesis_core::emote::EmoteLexicon;
use anamnesis_core::fixtures;
use anamnesis_core::kb::KnowledgeBase;
use anamnesis_core::paraphrase::ParaphraseBank;
use anyhow::Context;

use crate::config::ServiceConfig;
use crate::external::HttpGenerator;

pub struct Resources {
    pub kb: KnowledgeBase,
    pub bank: ParaphraseBank,
    pub lexicon: EmoteLexicon,
    pub classifier: Option<EmotionClassifier>,
}

/// Reads a classifier file, pairing it with a hashing embedder of the
/// dimension the model was trained with.
pub fn load_classifier(path: &Path) -> anyhow::Result<EmotionClassifier> {
    let doc = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let model: ClassifierModel = serde_json::from_str(&doc).with_context(|| format!("parsing {}", path.display()))?;
    let embedder = Arc::new(HashingEmbedder::new(model.embedder_dim));
    Ok(EmotionClassifier::new(model, embedder)?)
}

pub fn load_kb(path: Option<&Path>) -> anyhow::Result<KnowledgeBase> {
    match path {
        Some(p) => KnowledgeBase::load(p).with_context(|| format!("loading KB {}", p.display())),
        None => Ok(fixtures::clinic_kb()),
    }
}

impl Resources {
    pub fn load(config: &ServiceConfig) -> anyhow::Result<Self> {
        let kb = load_kb(config.kb.as_deref())?;
        let bank = match (&config.bank, &config.kb) {
            (Some(p), _) => ParaphraseBank::load(p).with_context(|| format!("loading bank {}", p.display()))?,
            (None, None) => fixtures::clinic_bank(),
            (None, Some(_)) => ParaphraseBank::seed_from_kb(&kb),
        };
        let lexicon = match &config.lexicon {
            Some(p) => EmoteLexicon::load(p).with_context(|| format!("loading lexicon {}", p.display()))?,
            None => fixtures::emote_lexicon(),
        };
        let classifier = config.model.as_deref().map(load_classifier).transpose()?;
        Ok(Self {
            kb,
            bank,
            lexicon,
            classifier,
        })
    }

    /// Builds the engine. Creates a blocking HTTP client when an external
    /// endpoint is configured, so call this outside any async runtime.
    pub fn into_engine(self, config: &ServiceConfig) -> anyhow::Result<Engine> {
        let mut engine = Engine::new(Arc::new(self.kb), Arc::new(self.bank), Arc::new(self.lexicon));
        if let Some(c) = self.classifier {
            engine = engine.with_classifier(Arc::new(c));
        }
        if let Some(endpoint) = &config.external.endpoint {
            let client = HttpGenerator::new(endpoint.clone(), Duration::from_millis(config.external.timeout_ms))?;
            engine = engine.with_external(Arc::new(client));
        }
        Ok(engine)
    }
}
