//! Catalog document: languages, badges, easter eggs, beacons and adventures.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::GameError;
use crate::beacon::{BeaconId, BeaconKind};
use crate::proximity::{ProximityConfig, DEFAULT_GATE_MIN_RSSI};
use crate::Scalar;

pub const DEFAULT_LANGUAGES: [&str; 4] = ["en", "pt", "de", "fr"];
pub const LANGUAGE_COUNT: usize = 4;

/// Text keyed by language code.
pub type Localized = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scoring {
    #[serde(default = "Scoring::default_quiz_points")]
    pub quiz_points: u64,
    #[serde(default = "Scoring::default_completion_points")]
    pub completion_points: u64,
    #[serde(default = "Scoring::default_easter_egg_points")]
    pub easter_egg_points: u64,
    /// Points per level; level = total_points / level_points.
    #[serde(default = "Scoring::default_level_points")]
    pub level_points: u64,
}

impl Scoring {
    fn default_quiz_points() -> u64 {
        10
    }
    fn default_completion_points() -> u64 {
        100
    }
    fn default_easter_egg_points() -> u64 {
        25
    }
    fn default_level_points() -> u64 {
        500
    }
}

impl Default for Scoring {
    fn default() -> Self {
        Self {
            quiz_points: Self::default_quiz_points(),
            completion_points: Self::default_completion_points(),
            easter_egg_points: Self::default_easter_egg_points(),
            level_points: Self::default_level_points(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BadgeKind {
    Adventure,
    PerfectQuiz,
    EasterEgg,
    Usage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Badge {
    pub id: String,
    pub kind: BadgeKind,
    pub name: Localized,
    pub hint: Localized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EasterEgg {
    pub id: String,
    pub badge_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeaconDecl {
    #[serde(flatten)]
    pub beacon: BeaconId,
    #[serde(default)]
    pub kind: BeaconKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuizQuestion {
    pub text: Localized,
    pub choices: Vec<Localized>,
    pub correct_index: usize,
    /// Falls back to the catalog's quiz_points.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Stage {
    Info {
        text: Localized,
        #[serde(default)]
        images: Vec<String>,
    },
    BeaconGate {
        beacon: BeaconId,
        #[serde(default = "default_min_rssi")]
        min_rssi: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        text: Option<Localized>,
    },
    Quiz {
        questions: Vec<QuizQuestion>,
    },
    NumberedSteps {
        steps: Vec<Localized>,
    },
}

fn default_min_rssi() -> f64 {
    DEFAULT_GATE_MIN_RSSI
}

impl Stage {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Stage::Info { .. } => "info",
            Stage::BeaconGate { .. } => "beacon_gate",
            Stage::Quiz { .. } => "quiz",
            Stage::NumberedSteps { .. } => "numbered_steps",
        }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Adventure {
    pub id: String,
    #[serde(default = "default_true")]
    pub available: bool,
    pub award_id: String,
    /// Badge granted when every quiz answer of the completing run is right.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perfect_badge_id: Option<String>,
    #[serde(default)]
    pub bus_lines: Vec<String>,
    #[serde(default)]
    pub image: String,
    pub name: Localized,
    pub short_description: Localized,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub details: Option<Localized>,
    #[serde(default)]
    pub distance_km: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_points: Option<u64>,
    pub stages: Vec<Stage>,
}

/// Serialized form of a catalog file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogDocument {
    pub languages: Vec<String>,
    pub badges: Vec<Badge>,
    #[serde(default)]
    pub easter_eggs: Vec<EasterEgg>,
    #[serde(default)]
    pub beacons: Vec<BeaconDecl>,
    #[serde(default)]
    pub scoring: Scoring,
    pub adventures: Vec<Adventure>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationIssue {
    /// JSON-pointer-like location, e.g. `adventures[1].award_id`.
    pub path: String,
    pub message: String,
}

/// Validated, immutable catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    doc: CatalogDocument,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdventureCard {
    pub id: String,
    pub name: String,
    pub short_description: String,
    pub award_id: String,
    pub award_name: String,
    pub image: String,
    pub bus_lines: Vec<String>,
    pub distance_km: f64,
    pub stage_count: usize,
    pub available: bool,
    /// Set when the adventure cannot be started.
    pub alert: bool,
}

impl Catalog {
    pub fn from_json_str(text: &str) -> Result<Self, GameError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| {
            GameError::Validation(vec![ValidationIssue {
                path: String::new(),
                message: format!("not valid JSON: {e}"),
            }])
        })?;
        Self::load(value)
    }

    /// Deserializes and validates a catalog document, collecting every
    /// problem found.
    pub fn load(document: serde_json::Value) -> Result<Self, GameError> {
        let doc: CatalogDocument = serde_json::from_value(document).map_err(|e| {
            GameError::Validation(vec![ValidationIssue {
                path: String::new(),
                message: e.to_string(),
            }])
        })?;
        Self::from_document(doc)
    }

    pub fn from_document(doc: CatalogDocument) -> Result<Self, GameError> {
        let issues = validate(&doc);
        if issues.is_empty() {
            Ok(Self { doc })
        } else {
            Err(GameError::Validation(issues))
        }
    }

    pub fn document(&self) -> &CatalogDocument {
        &self.doc
    }

    pub fn languages(&self) -> &[String] {
        &self.doc.languages
    }

    pub fn has_language(&self, lang: &str) -> bool {
        self.doc.languages.iter().any(|l| l == lang)
    }

    pub fn check_language(&self, lang: &str) -> Result<(), GameError> {
        if self.has_language(lang) {
            Ok(())
        } else {
            Err(GameError::UnknownLanguage(lang.to_string()))
        }
    }

    pub fn scoring(&self) -> &Scoring {
        &self.doc.scoring
    }

    pub fn adventures(&self) -> &[Adventure] {
        &self.doc.adventures
    }

    pub fn adventure(&self, id: &str) -> Option<&Adventure> {
        self.doc.adventures.iter().find(|a| a.id == id)
    }

    pub fn badges(&self) -> &[Badge] {
        &self.doc.badges
    }

    pub fn badge(&self, id: &str) -> Option<&Badge> {
        self.doc.badges.iter().find(|b| b.id == id)
    }

    pub fn easter_egg(&self, id: &str) -> Option<&EasterEgg> {
        self.doc.easter_eggs.iter().find(|e| e.id == id)
    }

    pub fn beacons(&self) -> &[BeaconDecl] {
        &self.doc.beacons
    }

    pub fn available_count(&self) -> usize {
        self.doc.adventures.iter().filter(|a| a.available).count()
    }

    pub fn completion_points(&self, adventure: &Adventure) -> u64 {
        adventure
            .completion_points
            .unwrap_or(self.doc.scoring.completion_points)
    }

    pub fn question_points(&self, q: &QuizQuestion) -> u64 {
        q.points.unwrap_or(self.doc.scoring.quiz_points)
    }

    pub fn egg_points(&self, egg: &EasterEgg) -> u64 {
        egg.points.unwrap_or(self.doc.scoring.easter_egg_points)
    }

    /// Proximity configuration carrying the declared beacon kinds.
    pub fn proximity_config<T: Scalar>(&self) -> ProximityConfig<T> {
        ProximityConfig::default().with_kinds(self.doc.beacons.iter().map(|b| (b.beacon, b.kind)))
    }

    pub fn list_adventures(&self, language: &str) -> Result<Vec<AdventureCard>, GameError> {
        self.check_language(language)?;
        Ok(self
            .doc
            .adventures
            .iter()
            .map(|a| {
                let award_name = self
                    .badge(&a.award_id)
                    .map(|b| localize(&b.name, language))
                    .unwrap_or_default();
                AdventureCard {
                    id: a.id.clone(),
                    name: localize(&a.name, language),
                    short_description: localize(&a.short_description, language),
                    award_id: a.award_id.clone(),
                    award_name,
                    image: a.image.clone(),
                    bus_lines: a.bus_lines.clone(),
                    distance_km: a.distance_km,
                    stage_count: a.stages.len(),
                    available: a.available,
                    alert: !a.available,
                }
            })
            .collect())
    }
}

pub fn localize(text: &Localized, language: &str) -> String {
    text.get(language).cloned().unwrap_or_default()
}

struct Checker<'a> {
    languages: &'a [String],
    issues: Vec<ValidationIssue>,
}

impl Checker<'_> {
    fn issue(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.issues.push(ValidationIssue {
            path: path.into(),
            message: message.into(),
        });
    }

    fn localized(&mut self, path: &str, text: &Localized) {
        for lang in self.languages {
            if text.get(lang).is_none_or(|s| s.trim().is_empty()) {
                self.issue(format!("{path}.{lang}"), "missing translation");
            }
        }
        for key in text.keys() {
            if !self.languages.contains(key) {
                self.issue(format!("{path}.{key}"), "language not configured");
            }
        }
    }
}

fn validate(doc: &CatalogDocument) -> Vec<ValidationIssue> {
    let mut c = Checker {
        languages: &doc.languages,
        issues: Vec::new(),
    };

    if doc.languages.len() != LANGUAGE_COUNT {
        c.issue(
            "languages",
            format!("expected {LANGUAGE_COUNT} languages, got {}", doc.languages.len()),
        );
    }
    let mut seen = BTreeSet::new();
    for (i, l) in doc.languages.iter().enumerate() {
        if l.trim().is_empty() || !seen.insert(l) {
            c.issue(format!("languages[{i}]"), "empty or duplicate language code");
        }
    }

    let mut badge_ids = BTreeMap::new();
    for (i, b) in doc.badges.iter().enumerate() {
        let p = format!("badges[{i}]");
        if badge_ids.insert(b.id.as_str(), b.kind).is_some() {
            c.issue(format!("{p}.id"), format!("duplicate badge id {:?}", b.id));
        }
        c.localized(&format!("{p}.name"), &b.name);
        c.localized(&format!("{p}.hint"), &b.hint);
    }

    let expect_badge = |c: &mut Checker, path: String, id: &str, kind: BadgeKind| match badge_ids.get(id) {
        None => c.issue(path, format!("badge {id:?} is not defined")),
        Some(k) if *k != kind => c.issue(path, format!("badge {id:?} has kind {k:?}, expected {kind:?}")),
        Some(_) => {}
    };

    let mut egg_ids = BTreeSet::new();
    for (i, e) in doc.easter_eggs.iter().enumerate() {
        let p = format!("easter_eggs[{i}]");
        if !egg_ids.insert(e.id.as_str()) {
            c.issue(format!("{p}.id"), format!("duplicate easter egg id {:?}", e.id));
        }
        expect_badge(&mut c, format!("{p}.badge_id"), &e.badge_id, BadgeKind::EasterEgg);
    }

    let mut beacons = BTreeSet::new();
    for (i, b) in doc.beacons.iter().enumerate() {
        if !beacons.insert(b.beacon) {
            c.issue(format!("beacons[{i}]"), format!("duplicate beacon {}", b.beacon));
        }
    }

    if doc.adventures.is_empty() {
        c.issue("adventures", "catalog has no adventures");
    }
    let mut adventure_ids = BTreeSet::new();
    for (i, a) in doc.adventures.iter().enumerate() {
        let p = format!("adventures[{i}]");
        if a.id.trim().is_empty() || !adventure_ids.insert(a.id.as_str()) {
            c.issue(format!("{p}.id"), format!("empty or duplicate adventure id {:?}", a.id));
        }
        expect_badge(&mut c, format!("{p}.award_id"), &a.award_id, BadgeKind::Adventure);
        if let Some(pb) = &a.perfect_badge_id {
            expect_badge(&mut c, format!("{p}.perfect_badge_id"), pb, BadgeKind::PerfectQuiz);
        }
        c.localized(&format!("{p}.name"), &a.name);
        c.localized(&format!("{p}.short_description"), &a.short_description);
        if let Some(d) = &a.details {
            c.localized(&format!("{p}.details"), d);
        }
        if !(a.distance_km >= 0.0) {
            c.issue(format!("{p}.distance_km"), "must be non-negative");
        }
        if a.stages.is_empty() {
            c.issue(format!("{p}.stages"), "adventure has no stages");
        }
        for (j, s) in a.stages.iter().enumerate() {
            let sp = format!("{p}.stages[{j}]");
            match s {
                Stage::Info { text, .. } => c.localized(&format!("{sp}.text"), text),
                Stage::BeaconGate { beacon, min_rssi, text } => {
                    if !beacons.contains(beacon) {
                        c.issue(format!("{sp}.beacon"), format!("beacon {beacon} is not declared"));
                    }
                    if !(-127.0..=0.0).contains(min_rssi) {
                        c.issue(format!("{sp}.min_rssi"), "must lie in [-127, 0]");
                    }
                    if let Some(t) = text {
                        c.localized(&format!("{sp}.text"), t);
                    }
                }
                Stage::Quiz { questions } => {
                    if questions.is_empty() {
                        c.issue(format!("{sp}.questions"), "quiz has no questions");
                    }
                    for (k, q) in questions.iter().enumerate() {
                        let qp = format!("{sp}.questions[{k}]");
                        c.localized(&format!("{qp}.text"), &q.text);
                        if q.choices.len() < 2 {
                            c.issue(format!("{qp}.choices"), "need at least two choices");
                        }
                        for (m, ch) in q.choices.iter().enumerate() {
                            c.localized(&format!("{qp}.choices[{m}]"), ch);
                        }
                        if q.correct_index >= q.choices.len() {
                            c.issue(format!("{qp}.correct_index"), "out of range");
                        }
                        if q.points == Some(0) {
                            c.issue(format!("{qp}.points"), "must be positive");
                        }
                    }
                }
                Stage::NumberedSteps { steps } => {
                    if steps.is_empty() {
                        c.issue(format!("{sp}.steps"), "no steps");
                    }
                    for (k, st) in steps.iter().enumerate() {
                        c.localized(&format!("{sp}.steps[{k}]"), st);
                    }
                }
            }
        }
    }
    if doc.scoring.quiz_points == 0 {
        c.issue("scoring.quiz_points", "must be positive");
    }
    if doc.scoring.level_points == 0 {
        c.issue("scoring.level_points", "must be positive");
    }
    c.issues
}
