use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use uuid::Uuid;

use super::catalog::{localize, BadgeKind, Catalog, Stage};
use super::{GameError, MAX_FEEDBACK_CHARS};
use crate::proximity::RegionState;
use crate::Scalar;

/// Milliseconds since the Unix epoch.
pub type Timestamp = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Active,
    Complete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuizAnswer {
    pub stage_index: usize,
    pub question_index: usize,
    pub choice_index: usize,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub user_id: String,
    pub adventure_id: String,
    pub stage_index: usize,
    pub quiz_answers: Vec<QuizAnswer>,
    pub score: u64,
    pub status: SessionStatus,
    /// Replays of a completed adventure earn no points or badges.
    #[serde(default)]
    pub replay: bool,
    pub started_at: Timestamp,
    pub updated_at: Timestamp,
}

impl Session {
    pub fn is_active(&self) -> bool {
        self.status == SessionStatus::Active
    }

    fn answer(&self, stage_index: usize, question_index: usize) -> Option<&QuizAnswer> {
        self.quiz_answers
            .iter()
            .find(|a| a.stage_index == stage_index && a.question_index == question_index)
    }

    /// True when at least one question was answered and none wrongly.
    pub fn perfect_quiz(&self) -> bool {
        !self.quiz_answers.is_empty() && self.quiz_answers.iter().all(|a| a.correct)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BadgeGrant {
    pub badge_id: String,
    pub granted_at: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AwardReason {
    Completion,
    Quiz,
    EasterEgg,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointAward {
    pub points: u64,
    pub reason: AwardReason,
    /// Adventure or easter egg id.
    pub source: String,
    pub at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    pub language: String,
    pub total_points: u64,
    pub badges: Vec<BadgeGrant>,
    pub completed_adventures: BTreeSet<String>,
    pub found_eggs: BTreeSet<String>,
    pub awards: Vec<PointAward>,
    pub last_award_at: Option<Timestamp>,
}

impl UserProfile {
    pub fn new(user_id: impl Into<String>, language: impl Into<String>) -> Self {
        Self {
            user_id: user_id.into(),
            language: language.into(),
            total_points: 0,
            badges: Vec::new(),
            completed_adventures: BTreeSet::new(),
            found_eggs: BTreeSet::new(),
            awards: Vec::new(),
            last_award_at: None,
        }
    }

    pub fn has_badge(&self, badge_id: &str) -> bool {
        self.badges.iter().any(|b| b.badge_id == badge_id)
    }

    fn grant_badge(&mut self, badge_id: &str, at: Timestamp) -> bool {
        if self.has_badge(badge_id) {
            return false;
        }
        self.badges.push(BadgeGrant {
            badge_id: badge_id.to_string(),
            granted_at: at,
        });
        true
    }

    fn award(&mut self, award: PointAward) {
        self.total_points += award.points;
        self.last_award_at = Some(award.at);
        self.awards.push(award);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GameEvent {
    SessionStarted { session_id: String, user_id: String, adventure_id: String },
    SessionRestarted { session_id: String },
    StageEntered { session_id: String, stage_index: usize },
    ScoreChanged { session_id: String, delta: i64, score: u64 },
    PointsAwarded { user_id: String, points: u64, reason: AwardReason, source: String },
    BadgeGranted { user_id: String, badge_id: String },
    SessionCompleted { session_id: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", content = "session", rename_all = "snake_case")]
pub enum StartOutcome {
    New(Session),
    ResumePrompt(Session),
    CompletedPrompt(Option<Session>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResumeChoice {
    Resume,
    Restart,
}

/// Client input for the current stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageInput {
    /// Info and numbered-steps stages.
    Ack,
    /// Request to pass a beacon gate.
    Gate,
    /// Submit a fully answered quiz.
    Quiz,
}

impl StageInput {
    fn name(self) -> &'static str {
        match self {
            StageInput::Ack => "ack",
            StageInput::Gate => "gate",
            StageInput::Quiz => "quiz",
        }
    }

    fn expected_for(stage: &Stage) -> Self {
        match stage {
            Stage::Info { .. } | Stage::NumberedSteps { .. } => StageInput::Ack,
            Stage::BeaconGate { .. } => StageInput::Gate,
            Stage::Quiz { .. } => StageInput::Quiz,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuizOutcome {
    pub correct: bool,
    /// Revealed only on a wrong answer.
    pub correct_index: Option<usize>,
    pub delta: i64,
    pub score: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BadgeStatus {
    pub badge_id: String,
    pub kind: BadgeKind,
    pub name: String,
    pub earned: bool,
    pub granted_at: Option<Timestamp>,
    /// Shown for badges not yet earned.
    pub hint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub user_id: String,
    pub percentage: u32,
    pub total_points: u64,
    pub level: u64,
    pub completed: usize,
    pub available: usize,
    pub badges: Vec<BadgeStatus>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub user_id: String,
    pub total_points: u64,
    pub last_award_at: Option<Timestamp>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum EggOutcome {
    Granted { badge_id: String, points: u64 },
    AlreadyFound,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feedback {
    pub user_id: String,
    pub text: String,
    pub at: Timestamp,
}

/// `round_half_up(100 * completed / available)`, 0 when nothing is available.
pub fn completion_percentage(completed: usize, available: usize) -> u32 {
    if available == 0 {
        return 0;
    }
    ((200 * completed + available) / (2 * available)) as u32
}

/// Game state for one catalog.
#[derive(Debug, Clone)]
pub struct Game {
    catalog: Arc<Catalog>,
    users: BTreeMap<String, UserProfile>,
    sessions: BTreeMap<String, Session>,
    feedback: BTreeMap<String, Vec<Feedback>>,
}

impl Game {
    pub fn new(catalog: Arc<Catalog>) -> Self {
        Self {
            catalog,
            users: BTreeMap::new(),
            sessions: BTreeMap::new(),
            feedback: BTreeMap::new(),
        }
    }

    /// Rebuilds state from persisted documents.
    pub fn restore(
        catalog: Arc<Catalog>,
        users: impl IntoIterator<Item = UserProfile>,
        sessions: impl IntoIterator<Item = Session>,
        feedback: impl IntoIterator<Item = Feedback>,
    ) -> Self {
        let mut g = Self::new(catalog);
        g.users = users.into_iter().map(|u| (u.user_id.clone(), u)).collect();
        g.sessions = sessions.into_iter().map(|s| (s.session_id.clone(), s)).collect();
        let mut fb: Vec<Feedback> = feedback.into_iter().collect();
        fb.sort_by_key(|f| f.at);
        for f in fb {
            g.feedback.entry(f.user_id.clone()).or_default().push(f);
        }
        g
    }

    pub fn catalog(&self) -> &Arc<Catalog> {
        &self.catalog
    }

    pub fn users(&self) -> impl Iterator<Item = &UserProfile> {
        self.users.values()
    }

    pub fn user(&self, user_id: &str) -> Result<&UserProfile, GameError> {
        self.users
            .get(user_id)
            .ok_or_else(|| GameError::UnknownUser(user_id.to_string()))
    }

    pub fn sessions(&self) -> impl Iterator<Item = &Session> {
        self.sessions.values()
    }

    pub fn session(&self, session_id: &str) -> Result<&Session, GameError> {
        self.sessions
            .get(session_id)
            .ok_or_else(|| GameError::UnknownSession(session_id.to_string()))
    }

    pub fn feedback(&self, user_id: &str) -> &[Feedback] {
        self.feedback.get(user_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn add_user(&mut self, user_id: &str, language: &str) -> Result<&UserProfile, GameError> {
        self.catalog.check_language(language)?;
        if self.users.contains_key(user_id) {
            return Err(GameError::DuplicateUser(user_id.to_string()));
        }
        Ok(self
            .users
            .entry(user_id.to_string())
            .or_insert_with(|| UserProfile::new(user_id, language)))
    }

    pub fn set_language(&mut self, user_id: &str, language: &str) -> Result<&UserProfile, GameError> {
        self.catalog.check_language(language)?;
        let u = self
            .users
            .get_mut(user_id)
            .ok_or_else(|| GameError::UnknownUser(user_id.to_string()))?;
        u.language = language.to_string();
        Ok(u)
    }

    fn latest_session(&self, user_id: &str, adventure_id: &str) -> Option<&Session> {
        self.sessions
            .values()
            .filter(|s| s.user_id == user_id && s.adventure_id == adventure_id)
            .max_by_key(|s| (s.started_at, s.is_active()))
    }

    fn new_session(&mut self, user_id: &str, adventure_id: &str, replay: bool, now: Timestamp) -> Session {
        let s = Session {
            session_id: Uuid::new_v4().simple().to_string(),
            user_id: user_id.to_string(),
            adventure_id: adventure_id.to_string(),
            stage_index: 0,
            quiz_answers: Vec::new(),
            score: 0,
            status: SessionStatus::Active,
            replay,
            started_at: now,
            updated_at: now,
        };
        self.sessions.insert(s.session_id.clone(), s.clone());
        s
    }

    fn check_startable(&self, user_id: &str, adventure_id: &str) -> Result<(), GameError> {
        self.user(user_id)?;
        let adv = self
            .catalog
            .adventure(adventure_id)
            .ok_or_else(|| GameError::UnknownAdventure(adventure_id.to_string()))?;
        if !adv.available {
            return Err(GameError::UnavailableAdventure(adventure_id.to_string()));
        }
        Ok(())
    }

    /// Starts an adventure, or prompts to resume an active run or to pick
    /// another adventure when this one is already completed.
    pub fn start_session(
        &mut self,
        user_id: &str,
        adventure_id: &str,
        now: Timestamp,
    ) -> Result<(StartOutcome, Vec<GameEvent>), GameError> {
        self.check_startable(user_id, adventure_id)?;
        if let Some(s) = self.latest_session(user_id, adventure_id) {
            if s.is_active() {
                return Ok((StartOutcome::ResumePrompt(s.clone()), vec![]));
            }
        }
        if self.users[user_id].completed_adventures.contains(adventure_id) {
            let last = self.latest_session(user_id, adventure_id).cloned();
            return Ok((StartOutcome::CompletedPrompt(last), vec![]));
        }
        let s = self.new_session(user_id, adventure_id, false, now);
        let events = vec![GameEvent::SessionStarted {
            session_id: s.session_id.clone(),
            user_id: user_id.to_string(),
            adventure_id: adventure_id.to_string(),
        }];
        Ok((StartOutcome::New(s), events))
    }

    /// Plays a completed adventure again, without rewards.
    pub fn start_replay(
        &mut self,
        user_id: &str,
        adventure_id: &str,
        now: Timestamp,
    ) -> Result<(StartOutcome, Vec<GameEvent>), GameError> {
        self.check_startable(user_id, adventure_id)?;
        if let Some(s) = self.latest_session(user_id, adventure_id) {
            if s.is_active() {
                return Ok((StartOutcome::ResumePrompt(s.clone()), vec![]));
            }
        }
        if !self.users[user_id].completed_adventures.contains(adventure_id) {
            return Err(GameError::NotCompleted(adventure_id.to_string()));
        }
        let s = self.new_session(user_id, adventure_id, true, now);
        let events = vec![GameEvent::SessionStarted {
            session_id: s.session_id.clone(),
            user_id: user_id.to_string(),
            adventure_id: adventure_id.to_string(),
        }];
        Ok((StartOutcome::New(s), events))
    }

    fn active_session_mut(&mut self, session_id: &str) -> Result<&mut Session, GameError> {
        let s = self
            .sessions
            .get_mut(session_id)
            .ok_or_else(|| GameError::UnknownSession(session_id.to_string()))?;
        if !s.is_active() {
            return Err(GameError::SessionComplete);
        }
        Ok(s)
    }

    pub fn resume_or_restart(
        &mut self,
        session_id: &str,
        choice: ResumeChoice,
        now: Timestamp,
    ) -> Result<(Session, Vec<GameEvent>), GameError> {
        let s = self.active_session_mut(session_id)?;
        let mut events = Vec::new();
        if choice == ResumeChoice::Restart {
            let delta = -(s.score as i64);
            s.stage_index = 0;
            s.quiz_answers.clear();
            s.updated_at = now;
            events.push(GameEvent::SessionRestarted {
                session_id: session_id.to_string(),
            });
            if s.score != 0 {
                s.score = 0;
                events.push(GameEvent::ScoreChanged {
                    session_id: session_id.to_string(),
                    delta,
                    score: 0,
                });
            }
        }
        Ok((s.clone(), events))
    }

    /// Moves the session one stage forward. Beacon gates consult `region`
    /// at `stream_now_ms` (the scan stream's clock); `now` stamps the
    /// session and any awards.
    pub fn advance_stage<T: Scalar>(
        &mut self,
        session_id: &str,
        input: StageInput,
        region: &RegionState<T>,
        stream_now_ms: u64,
        now: Timestamp,
    ) -> Result<(Session, Vec<GameEvent>), GameError> {
        let catalog = Arc::clone(&self.catalog);
        let s = self.active_session_mut(session_id)?;
        let adventure = catalog
            .adventure(&s.adventure_id)
            .ok_or_else(|| GameError::UnknownAdventure(s.adventure_id.clone()))?;
        let stage = &adventure.stages[s.stage_index];
        let expected = StageInput::expected_for(stage);
        if input != expected {
            return Err(GameError::WrongInputKind {
                expected: expected.name(),
                got: input.name(),
            });
        }
        match stage {
            Stage::BeaconGate { beacon, min_rssi, .. } => {
                if !region.gate_unlocked(beacon, stream_now_ms, T::of(*min_rssi)) {
                    return Err(GameError::GateLocked);
                }
            }
            Stage::Quiz { questions } => {
                let answered = s
                    .quiz_answers
                    .iter()
                    .filter(|a| a.stage_index == s.stage_index)
                    .count();
                if answered < questions.len() {
                    return Err(GameError::IncompleteQuiz {
                        answered,
                        total: questions.len(),
                    });
                }
            }
            Stage::Info { .. } | Stage::NumberedSteps { .. } => {}
        }

        s.stage_index += 1;
        s.updated_at = now;
        let mut events = Vec::new();
        if s.stage_index < adventure.stages.len() {
            events.push(GameEvent::StageEntered {
                session_id: session_id.to_string(),
                stage_index: s.stage_index,
            });
            return Ok((s.clone(), events));
        }

        s.status = SessionStatus::Complete;
        let session = s.clone();
        let user = self
            .users
            .get_mut(&session.user_id)
            .ok_or_else(|| GameError::UnknownUser(session.user_id.clone()))?;
        let first_completion = !session.replay && user.completed_adventures.insert(adventure.id.clone());
        if first_completion {
            let mut badges = vec![adventure.award_id.as_str()];
            if session.perfect_quiz() {
                badges.extend(adventure.perfect_badge_id.as_deref());
            }
            for b in badges {
                if user.grant_badge(b, now) {
                    events.push(GameEvent::BadgeGranted {
                        user_id: user.user_id.clone(),
                        badge_id: b.to_string(),
                    });
                }
            }
            let mut awards = vec![(catalog.completion_points(adventure), AwardReason::Completion)];
            if session.score > 0 {
                awards.push((session.score, AwardReason::Quiz));
            }
            for (points, reason) in awards {
                user.award(PointAward {
                    points,
                    reason,
                    source: adventure.id.clone(),
                    at: now,
                });
                events.push(GameEvent::PointsAwarded {
                    user_id: user.user_id.clone(),
                    points,
                    reason,
                    source: adventure.id.clone(),
                });
            }
        }
        events.push(GameEvent::SessionCompleted {
            session_id: session_id.to_string(),
        });
        Ok((session, events))
    }

    pub fn answer_quiz(
        &mut self,
        session_id: &str,
        question_index: usize,
        choice_index: usize,
        now: Timestamp,
    ) -> Result<(QuizOutcome, Vec<GameEvent>), GameError> {
        let catalog = Arc::clone(&self.catalog);
        let s = self.active_session_mut(session_id)?;
        let adventure = catalog
            .adventure(&s.adventure_id)
            .ok_or_else(|| GameError::UnknownAdventure(s.adventure_id.clone()))?;
        let Stage::Quiz { questions } = &adventure.stages[s.stage_index] else {
            return Err(GameError::NotAQuizStage);
        };
        let q = questions.get(question_index).ok_or(GameError::IndexOutOfRange {
            index: question_index,
            len: questions.len(),
        })?;
        if choice_index >= q.choices.len() {
            return Err(GameError::IndexOutOfRange {
                index: choice_index,
                len: q.choices.len(),
            });
        }
        if s.answer(s.stage_index, question_index).is_some() {
            return Err(GameError::AlreadyAnswered(question_index));
        }
        let correct = choice_index == q.correct_index;
        let points = catalog.question_points(q);
        let before = s.score;
        s.score = if correct {
            before + points
        } else {
            before.saturating_sub(points)
        };
        s.quiz_answers.push(QuizAnswer {
            stage_index: s.stage_index,
            question_index,
            choice_index,
            correct,
        });
        s.updated_at = now;
        let delta = s.score as i64 - before as i64;
        let events = if delta != 0 {
            vec![GameEvent::ScoreChanged {
                session_id: session_id.to_string(),
                delta,
                score: s.score,
            }]
        } else {
            vec![]
        };
        Ok((
            QuizOutcome {
                correct,
                correct_index: (!correct).then_some(q.correct_index),
                delta,
                score: s.score,
            },
            events,
        ))
    }

    pub fn user_progress(&self, user_id: &str) -> Result<Progress, GameError> {
        let user = self.user(user_id)?;
        let lang = user.language.as_str();
        let available: Vec<&str> = self
            .catalog
            .adventures()
            .iter()
            .filter(|a| a.available)
            .map(|a| a.id.as_str())
            .collect();
        let completed = available
            .iter()
            .filter(|a| user.completed_adventures.contains(**a))
            .count();
        let badges = self
            .catalog
            .badges()
            .iter()
            .map(|b| {
                let grant = user.badges.iter().find(|g| g.badge_id == b.id);
                BadgeStatus {
                    badge_id: b.id.clone(),
                    kind: b.kind,
                    name: localize(&b.name, lang),
                    earned: grant.is_some(),
                    granted_at: grant.map(|g| g.granted_at),
                    hint: grant.is_none().then(|| localize(&b.hint, lang)),
                }
            })
            .collect();
        Ok(Progress {
            user_id: user_id.to_string(),
            percentage: completion_percentage(completed, available.len()),
            total_points: user.total_points,
            level: user.total_points / self.catalog.scoring().level_points,
            completed,
            available: available.len(),
            badges,
        })
    }

    /// Users ordered by points (desc), time of last award (asc, never-awarded
    /// last) and id (asc).
    pub fn leaderboard_top(&self, n: usize) -> Result<Vec<LeaderboardEntry>, GameError> {
        if n == 0 {
            return Err(GameError::InvalidArgument("n must be at least 1".into()));
        }
        let mut entries: Vec<LeaderboardEntry> = self
            .users
            .values()
            .map(|u| LeaderboardEntry {
                user_id: u.user_id.clone(),
                total_points: u.total_points,
                last_award_at: u.last_award_at,
            })
            .collect();
        entries.sort_by(|a, b| {
            b.total_points
                .cmp(&a.total_points)
                .then(a.last_award_at.unwrap_or(u64::MAX).cmp(&b.last_award_at.unwrap_or(u64::MAX)))
                .then_with(|| a.user_id.cmp(&b.user_id))
        });
        entries.truncate(n);
        Ok(entries)
    }

    pub fn trigger_easter_egg(
        &mut self,
        user_id: &str,
        egg_id: &str,
        now: Timestamp,
    ) -> Result<(EggOutcome, Vec<GameEvent>), GameError> {
        let egg = self
            .catalog
            .easter_egg(egg_id)
            .ok_or_else(|| GameError::UnknownEgg(egg_id.to_string()))?;
        let points = self.catalog.egg_points(egg);
        let badge_id = egg.badge_id.clone();
        let user = self
            .users
            .get_mut(user_id)
            .ok_or_else(|| GameError::UnknownUser(user_id.to_string()))?;
        if !user.found_eggs.insert(egg_id.to_string()) {
            return Ok((EggOutcome::AlreadyFound, vec![]));
        }
        let mut events = Vec::new();
        if user.grant_badge(&badge_id, now) {
            events.push(GameEvent::BadgeGranted {
                user_id: user_id.to_string(),
                badge_id: badge_id.clone(),
            });
        }
        if points > 0 {
            user.award(PointAward {
                points,
                reason: AwardReason::EasterEgg,
                source: egg_id.to_string(),
                at: now,
            });
            events.push(GameEvent::PointsAwarded {
                user_id: user_id.to_string(),
                points,
                reason: AwardReason::EasterEgg,
                source: egg_id.to_string(),
            });
        }
        Ok((EggOutcome::Granted { badge_id, points }, events))
    }

    pub fn record_feedback(&mut self, user_id: &str, text: &str, now: Timestamp) -> Result<Feedback, GameError> {
        self.user(user_id)?;
        if text.trim().is_empty() {
            return Err(GameError::EmptyFeedback);
        }
        let len = text.chars().count();
        if len > MAX_FEEDBACK_CHARS {
            return Err(GameError::TooLong(len));
        }
        let f = Feedback {
            user_id: user_id.to_string(),
            text: text.to_string(),
            at: now,
        };
        self.feedback.entry(user_id.to_string()).or_default().push(f.clone());
        Ok(f)
    }
}
