use std::io::{BufRead, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anamnesis_core::classifier::embed::HashingEmbedder;
use anamnesis_core::classifier::logreg::ClassWeighting;
use anamnesis_core::classifier::{EmotionClassifier, Reduction, TrainConfig};
use anamnesis_core::dialogue::{DialogueError, EmoteMode, EngineConfig, Profile, Reply};
use anamnesis_core::emote::{build_emote_dataset, split_stratified, EditedQuestionRecord, EmoteDatasetRow};
use anamnesis_core::eval::{
    aggregate_ratings, build_rating_sheet, predict_instances, render_axis_means, summarize_sheet, RatingRecord,
    RatingSheet, SheetOptions,
};
use anamnesis_core::nlg::{build_medconv_dataset, write_instances, DatasetOptions, EngineVariant, Generator};
use anamnesis_core::simulator::{read_cases, simulate_dataset, write_cases, SimulatorConfig};
use anamnesis_service::api::{router, AppState, SessionDefaults};
use anamnesis_service::config::ServiceConfig;
use anamnesis_service::resources::{load_classifier, load_kb, Resources};
use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "anamnesis", version, about = "Controllable history-taking dialogue engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ResourceArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    kb: Option<PathBuf>,
    #[arg(long)]
    bank: Option<PathBuf>,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Trained emotion classifier.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ResourceArgs {
    fn resolve(&self) -> anyhow::Result<ServiceConfig> {
        let mut cfg = match &self.config {
            Some(p) => ServiceConfig::from_file(p)?,
            None => ServiceConfig::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        for (flag, slot) in [
            (&self.kb, &mut cfg.kb),
            (&self.bank, &mut cfg.bank),
            (&self.lexicon, &mut cfg.lexicon),
            (&self.model, &mut cfg.model),
        ] {
            if flag.is_some() {
                slot.clone_from(flag);
            }
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP API.
    Serve {
        #[command(flatten)]
        res: ResourceArgs,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        journal: Option<PathBuf>,
        #[arg(long)]
        ratings: Option<PathBuf>,
    },
    /// Terminal conversation with the engine.
    Chat {
        #[command(flatten)]
        res: ResourceArgs,
        #[arg(long, default_value = "adult")]
        age_band: String,
        #[arg(long, default_value = "female")]
        gender: String,
        /// Reason for encounter; prompted for when omitted.
        #[arg(long)]
        rfe: Option<String>,
        #[arg(long)]
        variant: Option<EngineVariant>,
    },
    /// Generate synthetic clinical cases from a knowledge base.
    Simulate {
        #[arg(long)]
        kb: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20.0)]
        margin: f64,
        #[arg(long, default_value_t = 0.6)]
        p_absent: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn simulated cases into generation training instances.
    BuildDataset {
        #[command(flatten)]
        res: ResourceArgs,
        #[arg(long)]
        cases: PathBuf,
        #[arg(long)]
        no_emotes: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract and code emote phrases from edited-question records.
    MineEmotes {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Phrases the lexicon could not code.
        #[arg(long)]
        review_out: Option<PathBuf>,
    },
    /// Train the emotion classifier on mined rows.
    TrainEmotion {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 70)]
        k: usize,
        #[arg(long, default_value_t = 10.0)]
        c: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        #[arg(long, default_value_t = 384)]
        dim: usize,
        /// Unweighted loss instead of balanced class weights.
        #[arg(long)]
        uniform: bool,
        /// One PCA over the concatenated embeddings instead of one per source.
        #[arg(long)]
        concatenated: bool,
    },
    /// Classification report for a trained model.
    EvalEmotion {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Preference table from A/B rating records.
    AggregateRatings {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, default_value = "model A")]
        name_a: String,
        #[arg(long, default_value = "model B")]
        name_b: String,
    },
    /// Build an anonymized three-axis rating sheet.
    RatingSheet {
        #[command(flatten)]
        res: ResourceArgs,
        /// Mined emote rows to draw instances from.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "expert,no_emote,full")]
        variants: Vec<EngineVariant>,
        #[arg(long, default_value_t = 25)]
        per_class: usize,
        #[arg(long, default_value_t = 0.8)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean scores per model from a filled rating sheet.
    SummarizeSheet {
        #[arg(long)]
        sheet: PathBuf,
    },
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{} line {}", path.display(), i + 1))?);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> anyhow::Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Serve {
            res,
            port,
            bind,
            journal,
            ratings,
        } => {
            let mut cfg = res.resolve()?;
            if let Some(p) = port {
                cfg.port = p;
            }
            if let Some(b) = bind {
                cfg.bind = b;
            }
            if journal.is_some() {
                cfg.journal = journal;
            }
            if ratings.is_some() {
                cfg.ratings = ratings;
            }
            serve(cfg)
        }
        Command::Chat {
            res,
            age_band,
            gender,
            rfe,
            variant,
        } => {
            let cfg = res.resolve()?;
            chat(&cfg, Profile { age_band, gender }, rfe, variant)
        }
        Command::Simulate {
            kb,
            n,
            seed,
            margin,
            p_absent,
            out,
        } => {
            let kb = load_kb(kb.as_deref())?;
            let config = SimulatorConfig {
                margin_threshold: margin,
                p_absent,
                seed,
                ..SimulatorConfig::default()
            };
            let data = simulate_dataset(&kb, &config, n)?;
            write_cases(BufWriter::new(std::fs::File::create(&out)?), &kb, &data.cases)?;
            let s = &data.stats;
            println!(
                "accepted {} of {} attempts ({:.3}); absent rate {:.3}",
                s.accepted,
                s.attempts,
                s.acceptance_rate(),
                s.absent_rate()
            );
            Ok(())
        }
        Command::BuildDataset {
            res,
            cases,
            no_emotes,
            out,
        } => {
            let cfg = res.resolve()?;
            let r = Resources::load(&cfg)?;
            let cases = read_cases(std::io::BufReader::new(std::fs::File::open(&cases)?))?;
            let options = DatasetOptions {
                with_emotes: !no_emotes,
                seed: cfg.seed,
                ..DatasetOptions::default()
            };
            let data = build_medconv_dataset(&cases, &r.kb, &r.bank, &r.lexicon, &options)?;
            for s in &data.skipped {
                log::warn!("skipped case {}: {}", s.case_id, s.reasons.join("; "));
            }
            write_instances(BufWriter::new(std::fs::File::create(&out)?), &data.instances)?;
            println!("{} instances, {} cases skipped", data.instances.len(), data.skipped.len());
            Ok(())
        }
        Command::MineEmotes {
            records,
            lexicon,
            out,
            review_out,
        } => {
            let cfg = ResourceArgs {
                lexicon,
                ..ResourceArgs::default()
            }
            .resolve()?;
            let lexicon = Resources::load(&cfg)?.lexicon;
            let records: Vec<EditedQuestionRecord> = read_jsonl(&records)?;
            let mined = build_emote_dataset(&records, &lexicon)?;
            write_jsonl(&out, &mined.rows)?;
            if let Some(p) = review_out {
                write_jsonl(&p, &mined.review)?;
            }
            println!("{} rows coded, {} phrases for review", mined.rows.len(), mined.review.len());
            Ok(())
        }
        Command::TrainEmotion {
            data,
            out,
            k,
            c,
            seed,
            test_fraction,
            dim,
            uniform,
            concatenated,
        } => {
            let rows: Vec<EmoteDatasetRow> = read_jsonl(&data)?;
            let (train, test) = split_stratified(&rows, test_fraction, seed);
            let config = TrainConfig {
                k,
                c,
                seed,
                weighting: if uniform {
                    ClassWeighting::Uniform
                } else {
                    ClassWeighting::Balanced
                },
                reduction: if concatenated {
                    Reduction::Concatenated
                } else {
                    Reduction::PerSource
                },
                ..TrainConfig::default()
            };
            let (model, report) = EmotionClassifier::train(&train, Arc::new(HashingEmbedder::new(dim)), &config)?;
            for w in &report.warnings {
                log::warn!("{w}");
            }
            println!(
                "trained on {} rows; components {:?}; {} iterations, converged {}",
                train.len(),
                report.components,
                report.fit.iterations,
                report.fit.converged
            );
            if !test.is_empty() {
                println!("held-out ({} rows):\n{}", test.len(), model.evaluate(&test)?);
            }
            model.save(&out)?;
            Ok(())
        }
        Command::EvalEmotion { model, data } => {
            let model = load_classifier(&model)?;
            let rows: Vec<EmoteDatasetRow> = read_jsonl(&data)?;
            println!("{}", model.evaluate(&rows)?);
            Ok(())
        }
        Command::AggregateRatings { records, name_a, name_b } => {
            let records: Vec<RatingRecord> = read_jsonl(&records)?;
            print!("{}", aggregate_ratings(&records)?.render(&name_a, &name_b));
            Ok(())
        }
        Command::RatingSheet {
            res,
            data,
            variants,
            per_class,
            threshold,
            out,
        } => {
            let cfg = res.resolve()?;
            let r = Resources::load(&cfg)?;
            let classifier = r.classifier.as_ref().context("--model is required to predict emote codes")?;
            let rows: Vec<EmoteDatasetRow> = read_jsonl(&data)?;
            let instances = predict_instances(&rows, &r.kb, classifier)?;
            let generator = Generator::new(&r.kb, &r.bank, &r.lexicon);
            let options = SheetOptions {
                threshold,
                per_class,
                seed: cfg.seed,
            };
            let sheet = build_rating_sheet(&instances, &variants, &generator, &options)?;
            std::fs::write(&out, serde_json::to_string_pretty(&sheet)?)?;
            println!("{} rows written; shuffle seed {}", sheet.rows.len(), sheet.shuffle_seed);
            Ok(())
        }
        Command::SummarizeSheet { sheet } => {
            let sheet: RatingSheet = serde_json::from_str(&std::fs::read_to_string(&sheet)?)?;
            print!("{}", render_axis_means(&summarize_sheet(&sheet)?));
            println!("(no significance test applied)");
            Ok(())
        }
    }
}

fn serve(cfg: ServiceConfig) -> anyhow::Result<()> {
    // The blocking HTTP client for an external generator must be built
    // before the async runtime starts.
    let engine = Resources::load(&cfg)?.into_engine(&cfg)?;
    let state = AppState::new(engine, SessionDefaults::from(&cfg), cfg.journal.as_deref(), cfg.ratings.as_deref())?;
    let addr: SocketAddr = format!("{}:{}", cfg.bind, cfg.port).parse()?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        log::info!("listening on {}", listener.local_addr()?);
        axum::serve(listener, router(Arc::new(state))).await?;
        Ok(())
    })
}

fn chat(cfg: &ServiceConfig, profile: Profile, rfe: Option<String>, variant: Option<EngineVariant>) -> anyhow::Result<()> {
    let engine = Resources::load(cfg)?.into_engine(cfg)?;
    let stdin = std::io::stdin();
    let mut lines = stdin.lock().lines();
    let mut rfe = match rfe {
        Some(r) => r,
        None => {
            println!("What brings you in today?");
            lines.next().transpose()?.unwrap_or_default()
        }
    };
    let config = EngineConfig {
        variant: variant.unwrap_or(cfg.variant),
        max_questions: cfg.max_questions,
        margin_threshold: cfg.margin_threshold,
        seed: cfg.seed,
        emote_mode: if engine.has_classifier() {
            EmoteMode::Classifier
        } else {
            EmoteMode::None
        },
        ..EngineConfig::default()
    };
    let (mut state, mut step) = loop {
        match engine.start("chat", profile.clone(), &rfe, config.clone()) {
            Err(DialogueError::RfeNotFound { suggestions, .. }) => {
                println!("I didn't catch that. Did you mean one of: {}?", suggestions.join("; "));
                match lines.next().transpose()? {
                    Some(line) => rfe = line,
                    None => return Ok(()),
                }
            }
            other => break other?,
        }
    };
    loop {
        match &step.reply {
            Reply::Question { text, .. } | Reply::Clarification { text } => println!("{text}"),
            Reply::Conclusion {
                reason,
                question_count,
                differential,
            } => {
                println!("Thank you. ({reason:?} after {question_count} questions)\n{differential}");
                return Ok(());
            }
        }
        let Some(line) = lines.next().transpose()? else {
            return Ok(());
        };
        step = engine.answer(&mut state, &line)?;
    }
}
