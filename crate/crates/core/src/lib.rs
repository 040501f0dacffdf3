//! Knowledge-base driven history-taking: diagnosis scoring, case simulation,
//! paraphrase and emote handling, the emotion classifier and the turn engine.

pub mod classifier;
pub mod dialogue;
pub mod emote;
pub mod eval;
pub mod fixtures;
pub mod journal;
pub mod kb;
pub mod nlg;
pub mod paraphrase;
pub mod rng;
pub mod simulator;
pub mod synth;
pub mod text;
