//! Gamification core: catalog, staged sessions, quizzes, awards, ranking.
//!
//! [`Game`] owns user profiles, sessions and feedback for one catalog.
//! Every mutating call returns the [`GameEvent`]s it produced so callers
//! can fan them out or replay them.

mod catalog;
mod game;

pub use catalog::{
    localize, Adventure, AdventureCard, Badge, BadgeKind, BeaconDecl, Catalog, CatalogDocument,
    EasterEgg, Localized, QuizQuestion, Scoring, Stage, ValidationIssue, DEFAULT_LANGUAGES,
    LANGUAGE_COUNT,
};
pub use game::*;

use thiserror::Error;

pub const MAX_FEEDBACK_CHARS: usize = 4000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GameError {
    #[error("catalog validation failed: {}", summarize(.0))]
    Validation(Vec<ValidationIssue>),
    #[error("language {0:?} is not configured")]
    UnknownLanguage(String),
    #[error("unknown adventure {0:?}")]
    UnknownAdventure(String),
    #[error("adventure {0:?} is not available")]
    UnavailableAdventure(String),
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("unknown user {0:?}")]
    UnknownUser(String),
    #[error("user {0:?} already exists")]
    DuplicateUser(String),
    #[error("unknown easter egg {0:?}")]
    UnknownEgg(String),
    #[error("session is already complete")]
    SessionComplete,
    #[error("adventure {0:?} has not been completed yet")]
    NotCompleted(String),
    #[error("beacon gate is locked: beacon not in range")]
    GateLocked,
    #[error("stage expects {expected} input, got {got}")]
    WrongInputKind {
        expected: &'static str,
        got: &'static str,
    },
    #[error("quiz incomplete: {answered} of {total} questions answered")]
    IncompleteQuiz { answered: usize, total: usize },
    #[error("question {0} was already answered")]
    AlreadyAnswered(usize),
    #[error("current stage is not a quiz")]
    NotAQuizStage,
    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("feedback is empty")]
    EmptyFeedback,
    #[error("feedback has {0} characters, limit is {MAX_FEEDBACK_CHARS}")]
    TooLong(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

fn summarize(issues: &[ValidationIssue]) -> String {
    issues
        .iter()
        .map(|i| format!("{}: {}", i.path, i.message))
        .collect::<Vec<_>>()
        .join("; ")
}

impl GameError {
    /// Stable machine-readable name.
    pub fn code(&self) -> &'static str {
        match self {
            GameError::Validation(_) => "ValidationError",
            GameError::UnknownLanguage(_) => "UnknownLanguage",
            GameError::UnknownAdventure(_) => "UnknownAdventure",
            GameError::UnavailableAdventure(_) => "UnavailableAdventure",
            GameError::UnknownSession(_) => "UnknownSession",
            GameError::UnknownUser(_) => "UnknownUser",
            GameError::DuplicateUser(_) => "DuplicateUser",
            GameError::UnknownEgg(_) => "UnknownEgg",
            GameError::SessionComplete => "SessionComplete",
            GameError::NotCompleted(_) => "NotCompleted",
            GameError::GateLocked => "GateLocked",
            GameError::WrongInputKind { .. } => "WrongInputKind",
            GameError::IncompleteQuiz { .. } => "IncompleteQuiz",
            GameError::AlreadyAnswered(_) => "AlreadyAnswered",
            GameError::NotAQuizStage => "NotAQuizStage",
            GameError::IndexOutOfRange { .. } => "IndexOutOfRange",
            GameError::EmptyFeedback => "EmptyFeedback",
            GameError::TooLong(_) => "TooLong",
            GameError::InvalidArgument(_) => "InvalidArgument",
        }
    }
}

/// The example catalog shipped with the crate: two adventures covering all
/// four stage variants in four languages.
pub const SEED_CATALOG_JSON: &str = include_str!("../../assets/catalog.json");

pub fn seed_catalog() -> Catalog {
    Catalog::from_json_str(SEED_CATALOG_JSON).expect("seed catalog is valid")
}
