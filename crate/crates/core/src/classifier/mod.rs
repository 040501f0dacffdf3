//! Emote-code prediction from conversational context.
//!
//! Each of the three context sources is embedded, reduced by PCA and the
//! reduced vectors are concatenated into the input of a four-class
//! logistic regression. Because the final layer is linear, every logit
//! splits exactly into a bias plus one contribution per source.

pub mod embed;
pub mod logreg;
pub mod metrics;
pub mod pca;

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::emote::{ContextTriple, EmoteCode, EmoteDatasetRow};
use embed::Embedder;
use logreg::{ClassWeighting, FitOptions, FitSummary, LogRegError, LogRegModel};
use metrics::{ClassificationReport, MetricsError};
use pca::{PcaError, PcaModel};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Context sources in featurization order.
pub const SOURCES: [&str; 3] = ["previous_question", "patient_response", "target_finding"];

/// Top-probability cutoff of the optional high-precision mode.
pub const HIGH_PRECISION_THRESHOLD: f64 = 0.8;

#[derive(Debug, thiserror::Error)]
pub enum ClassifierError {
    #[error("embedder returned {got} values for {source_name}, expected {expected}")]
    Dimension {
        source_name: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("model was trained with embedder {expected}, got {got}")]
    EmbedderMismatch { expected: String, got: String },
    #[error("training data has no rows")]
    EmptyDataset,
    #[error("training data has no {0} rows")]
    MissingClass(EmoteCode),
    #[error("unsupported model format version {0}")]
    Version(u32),
    #[error("malformed model: {0}")]
    Model(String),
    #[error(transparent)]
    Pca(#[from] PcaError),
    #[error(transparent)]
    LogReg(#[from] LogRegError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Where dimensionality reduction happens.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// One PCA per source with `k` components each.
    #[default]
    PerSource,
    /// One PCA over the concatenated embeddings with `k` components total.
    Concatenated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub k: usize,
    pub c: f64,
    pub seed: u64,
    pub weighting: ClassWeighting,
    pub reduction: Reduction,
    pub fit: FitOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 70,
            c: 10.0,
            seed: 0,
            weighting: ClassWeighting::Balanced,
            reduction: Reduction::PerSource,
            fit: FitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ReductionModel {
    PerSource { pcas: Vec<PcaModel> },
    Concatenated { pca: PcaModel },
}

/// Everything needed to rebuild a classifier except the embedder itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub format_version: u32,
    pub embedder_id: String,
    pub embedder_dim: usize,
    pub reduction: ReductionModel,
    pub logreg: LogRegModel,
    pub class_order: Vec<EmoteCode>,
    pub config: TrainConfig,
}

impl ClassifierModel {
    fn check(&self) -> Result<(), ClassifierError> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(ClassifierError::Version(self.format_version));
        }
        if self.class_order != EmoteCode::ALL {
            return Err(ClassifierError::Model("class order differs from none/affirmative/empathy/apology".into()));
        }
        let input = match &self.reduction {
            ReductionModel::PerSource { pcas } => {
                if pcas.len() != SOURCES.len() {
                    return Err(ClassifierError::Model(format!("{} PCA blocks, expected 3", pcas.len())));
                }
                if pcas.iter().any(|p| p.dim() != self.embedder_dim) {
                    return Err(ClassifierError::Model("PCA dimension differs from embedder".into()));
                }
                pcas.iter().map(PcaModel::k).sum::<usize>()
            }
            ReductionModel::Concatenated { pca } => {
                if pca.dim() != SOURCES.len() * self.embedder_dim {
                    return Err(ClassifierError::Model("PCA dimension differs from embedder".into()));
                }
                pca.k()
            }
        };
        let lr = &self.logreg;
        if lr.biases.len() != EmoteCode::ALL.len()
            || lr.weights.len() != lr.biases.len()
            || lr.weights.iter().any(|w| w.len() != input)
        {
            return Err(ClassifierError::Model("weight matrix shape mismatch".into()));
        }
        let finite = lr.biases.iter().chain(lr.weights.iter().flatten()).all(|v| v.is_finite());
        if !finite {
            return Err(ClassifierError::Model("non-finite weights".into()));
        }
        Ok(())
    }
}

/// Classifier input for one triple.
///
/// `parts[j]` has the length of `combined` and holds only source j's share,
/// so `combined = Σ_j parts[j]`. In per-source mode `parts[j]` is `x_j`
/// placed at its offset with zeros elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub combined: Vec<f64>,
    pub parts: [Vec<f64>; 3],
}

impl Features {
    /// The reduced block of source `j` (per-source mode), or its full-length
    /// share otherwise.
    pub fn block(&self, j: usize, model: &ClassifierModel) -> Vec<f64> {
        match &model.reduction {
            ReductionModel::PerSource { pcas } => {
                let start: usize = pcas[..j].iter().map(PcaModel::k).sum();
                self.combined[start..start + pcas[j].k()].to_vec()
            }
            ReductionModel::Concatenated { .. } => self.parts[j].clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub code: EmoteCode,
    /// Ordered as [`EmoteCode::ALL`].
    pub probabilities: Vec<f64>,
}

impl Prediction {
    /// High-precision mode: emit a non-none code only when its probability
    /// reaches `threshold`.
    pub fn code_at(&self, threshold: f64) -> EmoteCode {
        if self.probabilities[self.code.index()] >= threshold {
            self.code
        } else {
            EmoteCode::None
        }
    }

    pub fn top_probability(&self) -> f64 {
        self.probabilities[self.code.index()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attribution {
    pub logits: Vec<f64>,
    pub biases: Vec<f64>,
    /// `contributions[i][j]`: share of class i's logit coming from source j.
    pub contributions: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub warnings: Vec<String>,
    /// Components kept per PCA (three entries in per-source mode, one otherwise).
    pub components: Vec<usize>,
    pub fit: FitSummary,
    pub class_counts: [usize; 4],
}

/// Index of the largest value; ties go to the earliest position.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn texts(triple: &ContextTriple) -> [&str; 3] {
    [&triple.previous_question, &triple.patient_response, &triple.target_finding]
}

#[derive(Clone)]
pub struct EmotionClassifier {
    model: ClassifierModel,
    embedder: Arc<dyn Embedder>,
}

impl std::fmt::Debug for EmotionClassifier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EmotionClassifier")
            .field("embedder", &self.model.embedder_id)
            .field("input_dim", &self.input_dim())
            .finish()
    }
}

impl EmotionClassifier {
    pub fn new(model: ClassifierModel, embedder: Arc<dyn Embedder>) -> Result<Self, ClassifierError> {
        model.check()?;
        if model.embedder_id != embedder.id() || model.embedder_dim != embedder.dim() {
            return Err(ClassifierError::EmbedderMismatch {
                expected: format!("{}/{}", model.embedder_id, model.embedder_dim),
                got: format!("{}/{}", embedder.id(), embedder.dim()),
            });
        }
        Ok(Self { model, embedder })
    }

    pub fn model(&self) -> &ClassifierModel {
        &self.model
    }

    pub fn input_dim(&self) -> usize {
        self.model.logreg.weights.first().map_or(0, Vec::len)
    }

    fn embed_sources(&self, triple: &ContextTriple) -> Result<[Vec<f64>; 3], ClassifierError> {
        embed_triple(self.embedder.as_ref(), triple)
    }

    pub fn featurize(&self, triple: &ContextTriple) -> Result<Features, ClassifierError> {
        let embeddings = self.embed_sources(triple)?;
        Ok(reduce(&self.model.reduction, &embeddings))
    }

    pub fn predict(&self, triple: &ContextTriple) -> Result<Prediction, ClassifierError> {
        let features = self.featurize(triple)?;
        Ok(self.predict_features(&features.combined))
    }

    pub fn predict_features(&self, combined: &[f64]) -> Prediction {
        let probabilities = self.model.logreg.predict_proba(combined);
        let code = EmoteCode::from_index(argmax(&probabilities)).expect("four classes");
        Prediction { code, probabilities }
    }

    pub fn attribute(&self, triple: &ContextTriple) -> Result<Attribution, ClassifierError> {
        let features = self.featurize(triple)?;
        Ok(self.attribute_features(&features))
    }

    pub fn attribute_features(&self, features: &Features) -> Attribution {
        let lr = &self.model.logreg;
        Attribution {
            logits: lr.logits(&features.combined),
            biases: lr.biases.clone(),
            contributions: lr
                .weights
                .iter()
                .map(|w| [dot(w, &features.parts[0]), dot(w, &features.parts[1]), dot(w, &features.parts[2])])
                .collect(),
        }
    }

    pub fn evaluate(&self, rows: &[EmoteDatasetRow]) -> Result<ClassificationReport, ClassifierError> {
        if rows.is_empty() {
            return Err(MetricsError::Empty.into());
        }
        let mut truth = Vec::with_capacity(rows.len());
        let mut pred = Vec::with_capacity(rows.len());
        let mut scores = Vec::with_capacity(rows.len());
        for row in rows {
            let p = self.predict(&row.context)?;
            truth.push(row.code.index());
            pred.push(p.code.index());
            scores.push(p.probabilities);
        }
        let labels: Vec<&str> = EmoteCode::ALL.iter().map(|c| c.as_str()).collect();
        Ok(ClassificationReport::from_predictions(&labels, &truth, &pred)?.with_scores(&truth, &scores))
    }

    pub fn train(
        rows: &[EmoteDatasetRow],
        embedder: Arc<dyn Embedder>,
        config: &TrainConfig,
    ) -> Result<(Self, TrainReport), ClassifierError> {
        if rows.is_empty() {
            return Err(ClassifierError::EmptyDataset);
        }
        let mut class_counts = [0usize; 4];
        for row in rows {
            class_counts[row.code.index()] += 1;
        }
        for code in EmoteCode::ALL {
            if class_counts[code.index()] == 0 {
                return Err(ClassifierError::MissingClass(code));
            }
        }
        let embedded: Vec<[Vec<f64>; 3]> = rows
            .iter()
            .map(|r| embed_triple(embedder.as_ref(), &r.context))
            .collect::<Result<_, _>>()?;
        let mut warnings = Vec::new();
        let mut clamp_note = |what: &str, rank: usize| {
            let msg = format!("{what}: k={} exceeds data rank, keeping {rank} components", config.k);
            log::warn!("{msg}");
            warnings.push(msg);
        };
        let reduction = match config.reduction {
            Reduction::PerSource => {
                let mut pcas = Vec::with_capacity(3);
                for (j, name) in SOURCES.iter().enumerate() {
                    let samples: Vec<Vec<f64>> = embedded.iter().map(|e| e[j].clone()).collect();
                    let (pca, clamped) = pca::fit_pca_clamped(&samples, config.k)?;
                    if let Some(rank) = clamped {
                        clamp_note(name, rank);
                    }
                    pcas.push(pca);
                }
                ReductionModel::PerSource { pcas }
            }
            Reduction::Concatenated => {
                let samples: Vec<Vec<f64>> = embedded.iter().map(|e| e.concat()).collect();
                let (pca, clamped) = pca::fit_pca_clamped(&samples, config.k)?;
                if let Some(rank) = clamped {
                    clamp_note("concatenated sources", rank);
                }
                ReductionModel::Concatenated { pca }
            }
        };
        let components = match &reduction {
            ReductionModel::PerSource { pcas } => pcas.iter().map(PcaModel::k).collect(),
            ReductionModel::Concatenated { pca } => vec![pca.k()],
        };
        let x: Vec<Vec<f64>> = embedded.iter().map(|e| reduce(&reduction, e).combined).collect();
        let y: Vec<usize> = rows.iter().map(|r| r.code.index()).collect();
        let (logreg, fit) = logreg::fit(&x, &y, EmoteCode::ALL.len(), config.c, &config.weighting, config.fit)?;
        if !fit.converged {
            let msg = format!(
                "optimizer stopped after {} iterations with gradient {:.3e}",
                fit.iterations, fit.gradient_max_abs
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
        let model = ClassifierModel {
            format_version: MODEL_FORMAT_VERSION,
            embedder_id: embedder.id().to_string(),
            embedder_dim: embedder.dim(),
            reduction,
            logreg,
            class_order: EmoteCode::ALL.to_vec(),
            config: config.clone(),
        };
        let report = TrainReport {
            warnings,
            components,
            fit,
            class_counts,
        };
        Ok((Self::new(model, embedder)?, report))
    }

    pub fn to_json(&self) -> Result<String, ClassifierError> {
        Ok(serde_json::to_string(&self.model)?)
    }

    pub fn from_json(doc: &str, embedder: Arc<dyn Embedder>) -> Result<Self, ClassifierError> {
        Self::new(serde_json::from_str(doc)?, embedder)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ClassifierError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, embedder: Arc<dyn Embedder>) -> Result<Self, ClassifierError> {
        Self::from_json(&std::fs::read_to_string(path)?, embedder)
    }
}

fn embed_triple(embedder: &dyn Embedder, triple: &ContextTriple) -> Result<[Vec<f64>; 3], ClassifierError> {
    let t = texts(triple);
    let mut out: [Vec<f64>; 3] = Default::default();
    for j in 0..3 {
        let v = embedder.embed(t[j]);
        if v.len() != embedder.dim() {
            return Err(ClassifierError::Dimension {
                source_name: SOURCES[j],
                got: v.len(),
                expected: embedder.dim(),
            });
        }
        out[j] = v;
    }
    Ok(out)
}

fn reduce(reduction: &ReductionModel, embeddings: &[Vec<f64>; 3]) -> Features {
    match reduction {
        ReductionModel::PerSource { pcas } => {
            let blocks: Vec<Vec<f64>> = pcas.iter().zip(embeddings).map(|(p, e)| p.transform(e)).collect();
            let combined = blocks.concat();
            let mut parts: [Vec<f64>; 3] = Default::default();
            let mut offset = 0;
            for (j, block) in blocks.iter().enumerate() {
                let mut part = vec![0.0; combined.len()];
                part[offset..offset + block.len()].copy_from_slice(block);
                offset += block.len();
                parts[j] = part;
            }
            Features { combined, parts }
        }
        ReductionModel::Concatenated { pca } => {
            let dim = embeddings[0].len();
            let mut parts: [Vec<f64>; 3] = Default::default();
            for (j, e) in embeddings.iter().enumerate() {
                let cols = j * dim..(j + 1) * dim;
                parts[j] = pca
                    .components
                    .iter()
                    .map(|row| row[cols.clone()].iter().zip(e).zip(&pca.mean[cols.clone()]).map(|((w, x), m)| w * (x - m)).sum())
                    .collect();
            }
            let combined = (0..pca.k()).map(|i| parts.iter().map(|p| p[i]).sum()).collect();
            Features { combined, parts }
        }
    }
}
