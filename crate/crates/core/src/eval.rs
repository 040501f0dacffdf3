//! Evaluation mechanics: paired conversations driven by one answer script,
//! A/B preference aggregation, three-axis rating sheets and their summary.
//! Ratings are always supplied by people; nothing here synthesizes them.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::classifier::{EmotionClassifier, Prediction};
use crate::dialogue::{ConversationState, DialogueError, Engine, EngineConfig, Profile, Reply};
use crate::emote::{ContextTriple, EmoteCode, EmoteDatasetRow};
use crate::kb::KnowledgeBase;
use crate::nlg::{ControlCodes, EngineVariant, GenerationContext, Generator, NlgError};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("answer script has {got} answers but up to {needed} questions may be asked")]
    ShortScript { got: usize, needed: usize },
    #[error("rating record {index} rejected: {reason}")]
    InvalidRecord { index: usize, reason: String },
    #[error("no rating records")]
    NoRecords,
    #[error("sheet row {row}, column {column}: score {score} outside 1..=5")]
    Score { row: usize, column: String, score: u8 },
    #[error("unknown column {0}")]
    Column(String),
    #[error(transparent)]
    Dialogue(#[from] DialogueError),
    #[error(transparent)]
    Nlg(#[from] NlgError),
}

// ---------------------------------------------------------------- paired runs

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseRef {
    pub id: String,
    pub profile: Profile,
    pub rfe: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptTurn {
    pub question: String,
    pub answer: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub label: String,
    pub turns: Vec<TranscriptTurn>,
    pub conclusion: Option<Reply>,
    pub state: ConversationState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedTranscript {
    pub case: CaseRef,
    pub a: Transcript,
    pub b: Transcript,
    /// The two sides asked a different number of questions.
    pub diverged: bool,
}

fn push_reply(t: &mut Transcript, reply: Reply) {
    match reply {
        Reply::Question { text, .. } | Reply::Clarification { text } => t.turns.push(TranscriptTurn {
            question: text,
            answer: None,
        }),
        conclusion @ Reply::Conclusion { .. } => t.conclusion = Some(conclusion),
    }
}

/// Drives two sessions with the same answer stream. Both sessions are keyed by
/// the case id, so each side's random stream depends only on its config seed
/// and the same engine on both sides yields the same transcript.
pub fn run_paired(
    engine_a: (&Engine, &EngineConfig),
    engine_b: (&Engine, &EngineConfig),
    script: &[String],
    case: &CaseRef,
) -> Result<PairedTranscript, EvalError> {
    let needed = engine_a.1.max_questions.max(engine_b.1.max_questions);
    if script.len() < needed {
        return Err(EvalError::ShortScript {
            got: script.len(),
            needed,
        });
    }
    let mut sides = Vec::with_capacity(2);
    for (label, (engine, cfg)) in [("a", engine_a), ("b", engine_b)] {
        let (state, step) = engine.start(case.id.clone(), case.profile.clone(), &case.rfe, cfg.clone())?;
        let mut t = Transcript {
            label: label.to_string(),
            turns: Vec::new(),
            conclusion: None,
            state,
        };
        push_reply(&mut t, step.reply);
        sides.push((engine, t));
    }
    for answer in script {
        let mut any_active = false;
        for (engine, t) in sides.iter_mut() {
            if !t.state.is_active() {
                continue;
            }
            any_active = true;
            if let Some(last) = t.turns.last_mut() {
                last.answer = Some(answer.clone());
            }
            let step = engine.answer(&mut t.state, answer)?;
            push_reply(t, step.reply);
        }
        if !any_active {
            break;
        }
    }
    let b = sides.pop().expect("two sides").1;
    let a = sides.pop().expect("two sides").1;
    let diverged = a.state.question_count != b.state.question_count;
    if diverged {
        log::info!(
            "paired run {} diverged: {} vs {} questions",
            case.id,
            a.state.question_count,
            b.state.question_count
        );
    }
    Ok(PairedTranscript {
        case: case.clone(),
        a,
        b,
        diverged,
    })
}

/// Seeded assignment of two models to the anonymous labels A and B.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anonymization {
    pub seed: u64,
    pub a: String,
    pub b: String,
}

impl Anonymization {
    pub fn assign(first: &str, second: &str, seed: u64) -> Self {
        let mut pair = [first.to_string(), second.to_string()];
        pair.shuffle(&mut crate::rng::seeded(seed));
        let [a, b] = pair;
        Self { seed, a, b }
    }

    pub fn model_of(&self, label: &str) -> Option<&str> {
        match label {
            "A" | "a" => Some(&self.a),
            "B" | "b" => Some(&self.b),
            _ => None,
        }
    }

    pub fn label_of(&self, model: &str) -> Option<&'static str> {
        if model == self.a {
            Some("A")
        } else if model == self.b {
            Some("B")
        } else {
            None
        }
    }
}

// ---------------------------------------------------------------- A/B ratings

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub rater_id: String,
    pub case_ref: String,
    pub points_a: u8,
    pub points_b: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
}

impl RatingRecord {
    /// Exactly one point, or equal points with a nonempty comment.
    pub fn validate(&self) -> Result<(), String> {
        if self.points_a > 1 || self.points_b > 1 {
            return Err(format!("points must be 0 or 1, got ({}, {})", self.points_a, self.points_b));
        }
        if self.rater_id.trim().is_empty() || self.case_ref.trim().is_empty() {
            return Err("rater_id and case_ref are required".into());
        }
        let has_comment = self.comment.as_deref().is_some_and(|c| !c.trim().is_empty());
        if self.points_a == self.points_b && !has_comment {
            return Err("equal ratings require a comment".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preference {
    A,
    B,
    Equal,
}

impl Preference {
    fn of(points_a: u8, points_b: u8) -> Self {
        match (points_a, points_b) {
            (1, 0) => Self::A,
            (0, 1) => Self::B,
            _ => Self::Equal,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub a: usize,
    pub b: usize,
    pub equal: usize,
}

impl Split {
    pub fn total(&self) -> usize {
        self.a + self.b + self.equal
    }

    fn add(&mut self, p: Preference) {
        match p {
            Preference::A => self.a += 1,
            Preference::B => self.b += 1,
            Preference::Equal => self.equal += 1,
        }
    }

    /// Shares in percent, rounded to one decimal so they sum to exactly 100.
    pub fn percentages(&self) -> [f64; 3] {
        let tenths = largest_remainder(&[self.a, self.b, self.equal], 1000);
        tenths.map(|t| t as f64 / 10.0)
    }
}

/// Apportions `units` in proportion to `counts`: floors first, then one
/// extra unit to the largest remainders, ties to the larger count, then to
/// the earlier position.
pub fn largest_remainder<const N: usize>(counts: &[usize; N], units: u64) -> [u64; N] {
    let total: u64 = counts.iter().map(|&c| c as u64).sum();
    if total == 0 {
        return [0; N];
    }
    let mut out = [0u64; N];
    let mut rems = Vec::with_capacity(N);
    for (i, &c) in counts.iter().enumerate() {
        let scaled = c as u64 * units;
        out[i] = scaled / total;
        rems.push((scaled % total, c, i));
    }
    let mut left = units - out.iter().sum::<u64>();
    rems.sort_by(|x, y| y.0.cmp(&x.0).then(y.1.cmp(&x.1)).then(x.2.cmp(&y.2)));
    for (_, _, i) in rems {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseVote {
    pub raters: usize,
    pub majority_a: u8,
    pub majority_b: u8,
    pub preference: Preference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingAggregate {
    pub records: usize,
    pub total_a: usize,
    pub total_b: usize,
    pub exclusive: Split,
    pub majority_total_a: usize,
    pub majority_total_b: usize,
    pub majority: Split,
    pub per_case: BTreeMap<String, CaseVote>,
}

/// Column sums, the A/B/Equal split of individual records, and the same
/// after a per-case vote where each column gets a point when more than half
/// of that case's raters gave it one.
pub fn aggregate_ratings(records: &[RatingRecord]) -> Result<RatingAggregate, EvalError> {
    if records.is_empty() {
        return Err(EvalError::NoRecords);
    }
    let mut agg = RatingAggregate {
        records: records.len(),
        total_a: 0,
        total_b: 0,
        exclusive: Split::default(),
        majority_total_a: 0,
        majority_total_b: 0,
        majority: Split::default(),
        per_case: BTreeMap::new(),
    };
    let mut by_case: BTreeMap<&str, (usize, usize, usize)> = BTreeMap::new();
    for (index, r) in records.iter().enumerate() {
        r.validate().map_err(|reason| EvalError::InvalidRecord { index, reason })?;
        agg.total_a += usize::from(r.points_a);
        agg.total_b += usize::from(r.points_b);
        agg.exclusive.add(Preference::of(r.points_a, r.points_b));
        let entry = by_case.entry(&r.case_ref).or_default();
        entry.0 += 1;
        entry.1 += usize::from(r.points_a);
        entry.2 += usize::from(r.points_b);
    }
    for (case, (n, a, b)) in by_case {
        let majority_a = u8::from(2 * a > n);
        let majority_b = u8::from(2 * b > n);
        let preference = Preference::of(majority_a, majority_b);
        agg.majority_total_a += usize::from(majority_a);
        agg.majority_total_b += usize::from(majority_b);
        agg.majority.add(preference);
        agg.per_case.insert(
            case.to_string(),
            CaseVote {
                raters: n,
                majority_a,
                majority_b,
                preference,
            },
        );
    }
    Ok(agg)
}

impl RatingAggregate {
    /// Text table: totals and exclusive splits, raw and after voting.
    pub fn render(&self, name_a: &str, name_b: &str) -> String {
        let mut out = String::new();
        let pct = |s: &Split| s.percentages().map(|p| format!("({p:.1}%)"));
        let _ = writeln!(out, "A = {name_a}, B = {name_b}");
        let _ = writeln!(out, "{:<26}{:>10}{:>10}{:>10}", "", "A", "B", "Equal");
        let _ = writeln!(out, "{:<26}{:>10}{:>10}{:>10}", "total points", self.total_a, self.total_b, "-");
        let e = &self.exclusive;
        let _ = writeln!(out, "{:<26}{:>10}{:>10}{:>10}", "exclusive points", e.a, e.b, e.equal);
        let [pa, pb, pe] = pct(e);
        let _ = writeln!(out, "{:<26}{pa:>10}{pb:>10}{pe:>10}", "");
        let _ = writeln!(out, "majority vote per case");
        let _ = writeln!(out, "{:<26}{:>10}{:>10}{:>10}", "total points", self.majority_total_a, self.majority_total_b, "-");
        let m = &self.majority;
        let _ = writeln!(out, "{:<26}{:>10}{:>10}{:>10}", "exclusive points", m.a, m.b, m.equal);
        let [pa, pb, pe] = pct(m);
        let _ = writeln!(out, "{:<26}{pa:>10}{pb:>10}{pe:>10}", "");
        out
    }
}

/// Thirty cases rated by three raters each whose tallies match the
/// published end-to-end comparison: 63 and 30 total points, an exclusive
/// 49/16/25 split, and 20/2/8 after per-case voting.
pub fn reference_ratings() -> Vec<RatingRecord> {
    // (number of cases, ratings given by the three raters)
    let groups: [(usize, [(u8, u8); 3]); 7] = [
        (2, [(0, 1), (0, 1), (0, 1)]),
        (4, [(1, 1), (1, 1), (1, 1)]),
        (3, [(0, 0), (0, 0), (0, 0)]),
        (1, [(0, 0), (0, 0), (1, 1)]),
        (10, [(1, 0), (1, 0), (0, 1)]),
        (9, [(1, 0), (1, 0), (1, 0)]),
        (1, [(1, 0), (1, 0), (1, 1)]),
    ];
    let mut out = Vec::new();
    let mut case = 0;
    for (n, ratings) in groups {
        for _ in 0..n {
            for (rater, (a, b)) in ratings.iter().enumerate() {
                out.push(RatingRecord {
                    rater_id: format!("rater{rater}"),
                    case_ref: format!("case{case:02}"),
                    points_a: *a,
                    points_b: *b,
                    comment: (a == b).then(|| "both equally good or bad".to_string()),
                });
            }
            case += 1;
        }
    }
    out
}

// ------------------------------------------------------------ rating sheets

/// A conversational instance with the classifier's prediction attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedInstance {
    pub id: String,
    pub context: ContextTriple,
    pub next_finding: String,
    pub code: EmoteCode,
    pub probabilities: Vec<f64>,
}

impl PredictedInstance {
    pub fn top_probability(&self) -> f64 {
        self.probabilities.get(self.code.index()).copied().unwrap_or(0.0)
    }
}

/// Attaches predictions to dataset rows whose target finding name resolves
/// in the KB; other rows are skipped.
pub fn predict_instances(
    rows: &[EmoteDatasetRow],
    kb: &KnowledgeBase,
    classifier: &EmotionClassifier,
) -> Result<Vec<PredictedInstance>, EvalError> {
    let mut out = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let Some(finding) = kb.finding_by_name(&row.context.target_finding) else {
            continue;
        };
        let Prediction { code, probabilities } = classifier
            .predict(&row.context)
            .map_err(|e| EvalError::Dialogue(DialogueError::Classifier(e)))?;
        out.push(PredictedInstance {
            id: format!("row{i}"),
            context: row.context.clone(),
            next_finding: finding.id.clone(),
            code,
            probabilities,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SheetOptions {
    /// Keep instances whose predicted-class probability exceeds this.
    pub threshold: f64,
    pub per_class: usize,
    pub seed: u64,
}

impl Default for SheetOptions {
    fn default() -> Self {
        Self {
            threshold: 0.8,
            per_class: 25,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SheetCell {
    pub column: String,
    pub question: String,
    pub medical: Option<u8>,
    pub fluency: Option<u8>,
    pub empathy: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SheetRow {
    pub instance_id: String,
    pub context: ContextTriple,
    pub emote: EmoteCode,
    pub cells: Vec<SheetCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingSheet {
    pub rows: Vec<SheetRow>,
    /// Anonymous column name to model name.
    pub columns: BTreeMap<String, String>,
    /// Model names in the order they were requested.
    pub models: Vec<String>,
    pub shuffle_seed: u64,
    pub warnings: Vec<String>,
}

impl RatingSheet {
    pub fn model_of(&self, column: &str) -> Option<&str> {
        self.columns.get(column).map(String::as_str)
    }
}

/// Filters confident instances, samples `per_class` of each predicted code,
/// and asks every variant for a candidate question. Model columns are
/// shuffled under `options.seed` and named `model_1`, `model_2`, ...
pub fn build_rating_sheet(
    instances: &[PredictedInstance],
    variants: &[EngineVariant],
    generator: &Generator<'_>,
    options: &SheetOptions,
) -> Result<RatingSheet, EvalError> {
    let mut rng = crate::rng::seeded(options.seed);
    let mut warnings = Vec::new();
    let mut chosen = Vec::new();
    for code in EmoteCode::ALL {
        let mut pool: Vec<&PredictedInstance> = instances
            .iter()
            .filter(|i| i.code == code && i.top_probability() > options.threshold)
            .collect();
        if pool.len() < options.per_class {
            let msg = format!("{code}: only {} qualifying instances for {} slots", pool.len(), options.per_class);
            log::warn!("{msg}");
            warnings.push(msg);
        }
        pool.shuffle(&mut rng);
        chosen.extend(pool.into_iter().take(options.per_class));
    }
    let mut order: Vec<usize> = (0..variants.len()).collect();
    order.shuffle(&mut rng);
    let columns: BTreeMap<String, String> = order
        .iter()
        .enumerate()
        .map(|(col, &v)| (format!("model_{}", col + 1), variants[v].to_string()))
        .collect();
    let mut rows = Vec::with_capacity(chosen.len());
    for (r, inst) in chosen.iter().enumerate() {
        let context = GenerationContext {
            previous_question: inst.context.previous_question.clone(),
            previous_response: inst.context.patient_response.clone(),
            ..GenerationContext::default()
        };
        let codes = ControlCodes {
            next_finding: inst.next_finding.clone(),
            emote: inst.code,
        };
        let mut cells = Vec::with_capacity(order.len());
        for (col, &v) in order.iter().enumerate() {
            let mut cell_rng = crate::rng::stream(options.seed, (r * variants.len() + v) as u64 + 1);
            let generated = generator.generate(variants[v], &context, &codes, &mut cell_rng)?;
            cells.push(SheetCell {
                column: format!("model_{}", col + 1),
                question: generated.text,
                medical: None,
                fluency: None,
                empathy: None,
            });
        }
        rows.push(SheetRow {
            instance_id: inst.id.clone(),
            context: inst.context.clone(),
            emote: inst.code,
            cells,
        });
    }
    Ok(RatingSheet {
        rows,
        columns,
        models: variants.iter().map(ToString::to_string).collect(),
        shuffle_seed: options.seed,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisMeans {
    pub model: String,
    pub medical: Option<f64>,
    pub fluency: Option<f64>,
    pub empathy: Option<f64>,
    pub rated_cells: usize,
}

/// Per-model means over filled scores, de-anonymized, in request order.
pub fn summarize_sheet(sheet: &RatingSheet) -> Result<Vec<AxisMeans>, EvalError> {
    let mut sums: BTreeMap<&str, [(u32, usize); 3]> = BTreeMap::new();
    for (r, row) in sheet.rows.iter().enumerate() {
        for cell in &row.cells {
            let model = sheet.model_of(&cell.column).ok_or_else(|| EvalError::Column(cell.column.clone()))?;
            let entry = sums.entry(model).or_default();
            for (slot, score) in [cell.medical, cell.fluency, cell.empathy].into_iter().enumerate() {
                let Some(score) = score else { continue };
                if !(1..=5).contains(&score) {
                    return Err(EvalError::Score {
                        row: r,
                        column: cell.column.clone(),
                        score,
                    });
                }
                entry[slot].0 += u32::from(score);
                entry[slot].1 += 1;
            }
        }
    }
    Ok(sheet
        .models
        .iter()
        .map(|m| {
            let s = sums.get(m.as_str()).copied().unwrap_or_default();
            let mean = |(total, n): (u32, usize)| (n > 0).then(|| f64::from(total) / n as f64);
            AxisMeans {
                model: m.clone(),
                medical: mean(s[0]),
                fluency: mean(s[1]),
                empathy: mean(s[2]),
                rated_cells: s.iter().map(|x| x.1).max().unwrap_or(0),
            }
        })
        .collect())
}

/// Mean scores per model and axis, three decimals. No significance test is
/// applied.
pub fn render_axis_means(means: &[AxisMeans]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<12}{:>10}{:>10}{:>10}", "model", "medical", "fluency", "empathy");
    let f = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
    for m in means {
        let _ = writeln!(out, "{:<12}{:>10}{:>10}{:>10}", m.model, f(m.medical), f(m.fluency), f(m.empathy));
    }
    out
}
