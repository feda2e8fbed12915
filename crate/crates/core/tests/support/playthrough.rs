//! Randomized playthrough driver over the seeded catalog. Checks every
//! engine invariant after each operation and returns the first violation.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use marge_core::adventure::{
    seed_catalog, AwardReason, Game, GameError, GameEvent, ResumeChoice, Session, Stage, StageInput,
    StartOutcome,
};
use marge_core::beacon::BeaconId;
use marge_core::proximity::ScanEvent;
use marge_core::RegionState;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Default)]
pub struct FuzzStats {
    pub playthroughs: usize,
    pub operations: usize,
    pub completions: usize,
    pub first_completions: usize,
    pub gate_blocks: usize,
    pub gate_passes: usize,
    pub wrong_answers: usize,
    pub restarts: usize,
}

#[derive(Default)]
struct UserModel {
    completion_awards: BTreeMap<String, usize>,
    perfect_first_runs: BTreeSet<String>,
    first_runs: BTreeSet<String>,
}

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

const USERS: [&str; 4] = ["ana", "bruno", "carla", "duarte"];

pub fn run_playthroughs(n: usize, seed: u64) -> Result<FuzzStats, String> {
    let catalog = Arc::new(seed_catalog());
    let mut game = Game::new(Arc::clone(&catalog));
    for (i, u) in USERS.iter().enumerate() {
        game.add_user(u, &catalog.languages()[i % 4]).map_err(|e| e.to_string())?;
    }
    let beacons: Vec<BeaconId> = catalog.beacons().iter().map(|b| b.beacon).collect();
    let eggs: Vec<String> = catalog.document().easter_eggs.iter().map(|e| e.id.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = FuzzStats::default();
    let mut events: Vec<GameEvent> = Vec::new();
    let mut models: BTreeMap<String, UserModel> = BTreeMap::new();
    let mut clock: u64 = 1_000;

    for _ in 0..n {
        stats.playthroughs += 1;
        let user = USERS[rng.random_range(0..USERS.len())];
        let adv_id = catalog.adventures()[rng.random_range(0..catalog.adventures().len())].id.clone();
        clock += 1;

        // Random radio environment: each beacon seen or not, strong or weak.
        let mut region = RegionState::new(catalog.proximity_config());
        let mut ever_seen = BTreeSet::new();
        let stream_now = 100_000u64;
        for b in &beacons {
            if rng.random_bool(0.6) {
                let t = stream_now - rng.random_range(0..30_000);
                let rssi = rng.random_range(-127..=-40);
                let _ = t;
                ever_seen.insert(*b);
                region.ingest(&ScanEvent::new(stream_now - 1, *b, rssi)).map_err(|e| e.to_string())?;
            }
        }
        let query_now = stream_now + rng.random_range(0..20_000);

        let (outcome, ev) = match game.start_session(user, &adv_id, clock) {
            Ok(x) => x,
            Err(e) => return Err(format!("start failed: {e}")),
        };
        events.extend(ev);
        let session: Session = match outcome {
            StartOutcome::New(s) => s,
            StartOutcome::ResumePrompt(s) => {
                let choice = if rng.random_bool(0.3) { ResumeChoice::Restart } else { ResumeChoice::Resume };
                let (s2, ev) = game.resume_or_restart(&s.session_id, choice, clock).map_err(|e| e.to_string())?;
                events.extend(ev);
                if choice == ResumeChoice::Restart {
                    stats.restarts += 1;
                    ensure!(s2.stage_index == 0 && s2.score == 0 && s2.quiz_answers.is_empty(), "restart did not reset");
                } else {
                    ensure!(s2 == s, "resume changed the session");
                }
                s2
            }
            StartOutcome::CompletedPrompt(_) => {
                ensure!(game.user(user).unwrap().completed_adventures.contains(&adv_id), "completed prompt without completion");
                let (o, ev) = game.start_replay(user, &adv_id, clock).map_err(|e| e.to_string())?;
                events.extend(ev);
                match o {
                    StartOutcome::New(s) => s,
                    other => return Err(format!("replay start gave {other:?}")),
                }
            }
        };
        let sid = session.session_id.clone();
        let adventure = catalog.adventure(&adv_id).unwrap().clone();
        let mut model_score = session.score;
        let mut last_stage = session.stage_index;
        let steps = rng.random_range(1..25);

        for _ in 0..steps {
            stats.operations += 1;
            clock += 1;
            let s = game.session(&sid).unwrap().clone();
            if !s.is_active() {
                break;
            }
            let stage = &adventure.stages[s.stage_index];
            let action = rng.random_range(0..10);
            if action < 4 {
                // Answer a (possibly already answered, possibly invalid) question.
                let (qlen, correct_of) = match stage {
                    Stage::Quiz { questions } => (questions.len(), Some(questions.clone())),
                    _ => (2, None),
                };
                let qi = rng.random_range(0..qlen + 1);
                let ci = rng.random_range(0..5);
                match game.answer_quiz(&sid, qi, ci, clock) {
                    Ok((o, ev)) => {
                        let qs = correct_of.ok_or("answered a non-quiz stage")?;
                        let q = &qs[qi];
                        let pts = catalog.question_points(q);
                        ensure!(o.correct == (ci == q.correct_index), "correctness mismatch");
                        if o.correct {
                            model_score += pts;
                            ensure!(o.correct_index.is_none(), "revealed on correct");
                        } else {
                            stats.wrong_answers += 1;
                            model_score = model_score.saturating_sub(pts);
                            ensure!(o.correct_index == Some(q.correct_index), "no reveal on wrong answer");
                        }
                        ensure!(o.score == model_score, "score {} != model {}", o.score, model_score);
                        events.extend(ev);
                    }
                    Err(GameError::NotAQuizStage) => ensure!(!matches!(stage, Stage::Quiz { .. }), "bogus NotAQuizStage"),
                    Err(GameError::AlreadyAnswered(_)) | Err(GameError::IndexOutOfRange { .. }) => {}
                    Err(e) => return Err(format!("unexpected answer error {e}")),
                }
            } else if action < 9 {
                let input = match rng.random_range(0..6) {
                    0 => StageInput::Ack,
                    1 => StageInput::Gate,
                    2 => StageInput::Quiz,
                    _ => match stage {
                        Stage::Info { .. } | Stage::NumberedSteps { .. } => StageInput::Ack,
                        Stage::BeaconGate { .. } => StageInput::Gate,
                        Stage::Quiz { questions } => {
                            for (qi, q) in questions.iter().enumerate() {
                                let ci = if rng.random_bool(0.7) { q.correct_index } else { rng.random_range(0..q.choices.len()) };
                                if let Ok((o, ev)) = game.answer_quiz(&sid, qi, ci, clock) {
                                    let pts = catalog.question_points(q);
                                    model_score = if o.correct { model_score + pts } else { stats.wrong_answers += 1; model_score.saturating_sub(pts) };
                                    events.extend(ev);
                                }
                            }
                            StageInput::Quiz
                        }
                    },
                };
                let before = game.user(user).unwrap().clone();
                match game.advance_stage(&sid, input, &region, query_now, clock) {
                    Ok((s2, ev)) => {
                        ensure!(s2.stage_index == s.stage_index + 1, "advance moved by != 1");
                        if let Stage::BeaconGate { beacon, min_rssi, .. } = stage {
                            ensure!(ever_seen.contains(beacon), "gate passed without beacon ever observed");
                            ensure!(region.gate_unlocked(beacon, query_now, *min_rssi), "gate passed while locked");
                            stats.gate_passes += 1;
                        }
                        let completed = ev.iter().any(|e| matches!(e, GameEvent::SessionCompleted { .. }));
                        ensure!(completed == !s2.is_active(), "completion event mismatch");
                        ensure!(s2.is_active() == (s2.stage_index < adventure.stages.len()), "status/index mismatch");
                        if completed {
                            stats.completions += 1;
                            let after = game.user(user).unwrap();
                            let first = !before.completed_adventures.contains(&adv_id) && !s2.replay;
                            let m = models.entry(user.to_string()).or_default();
                            if first {
                                stats.first_completions += 1;
                                m.first_runs.insert(adv_id.clone());
                                if s2.perfect_quiz() {
                                    m.perfect_first_runs.insert(adv_id.clone());
                                }
                                *m.completion_awards.entry(adv_id.clone()).or_default() += 1;
                                let gained = after.total_points - before.total_points;
                                ensure!(gained == catalog.completion_points(&adventure) + s2.score, "completion credited {gained}");
                                ensure!(after.has_badge(&adventure.award_id), "award badge missing");
                                let pos_badge = ev.iter().position(|e| matches!(e, GameEvent::BadgeGranted { .. }));
                                ensure!(pos_badge.is_some_and(|p| p < ev.len() - 1), "badge event must precede completion");
                            } else {
                                ensure!(after.total_points == before.total_points, "repeat completion changed points");
                                ensure!(after.badges == before.badges, "repeat completion changed badges");
                            }
                        }
                        events.extend(ev);
                    }
                    Err(GameError::GateLocked) => {
                        let Stage::BeaconGate { beacon, min_rssi, .. } = stage else {
                            return Err("GateLocked on non-gate stage".into());
                        };
                        ensure!(!region.gate_unlocked(beacon, query_now, *min_rssi), "gate locked while unlocked");
                        stats.gate_blocks += 1;
                    }
                    Err(GameError::WrongInputKind { .. }) | Err(GameError::IncompleteQuiz { .. }) => {}
                    Err(e) => return Err(format!("unexpected advance error {e}")),
                }
            } else {
                let egg = &eggs[rng.random_range(0..eggs.len())];
                let (_, ev) = game.trigger_easter_egg(user, egg, clock).map_err(|e| e.to_string())?;
                events.extend(ev);
            }

            let s2 = game.session(&sid).unwrap();
            ensure!(s2.stage_index >= last_stage, "stage index went backwards");
            ensure!(s2.score == model_score, "session score {} != model {}", s2.score, model_score);
            last_stage = s2.stage_index;
        }
    }

    // Replay the event log against the profiles.
    let mut replayed: BTreeMap<String, u64> = BTreeMap::new();
    let mut badge_events: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for e in &events {
        match e {
            GameEvent::PointsAwarded { user_id, points, .. } => *replayed.entry(user_id.clone()).or_default() += points,
            GameEvent::BadgeGranted { user_id, badge_id } => badge_events.entry(user_id.clone()).or_default().push(badge_id.clone()),
            _ => {}
        }
    }
    for u in game.users() {
        ensure!(replayed.get(&u.user_id).copied().unwrap_or(0) == u.total_points, "points conservation broken for {}", u.user_id);
        ensure!(u.awards.iter().map(|a| a.points).sum::<u64>() == u.total_points, "award ledger mismatch for {}", u.user_id);
        let ids: BTreeSet<&String> = u.badges.iter().map(|b| &b.badge_id).collect();
        ensure!(ids.len() == u.badges.len(), "duplicate badge for {}", u.user_id);
        let evs = badge_events.get(&u.user_id).cloned().unwrap_or_default();
        ensure!(evs.len() == u.badges.len(), "badge events vs badges mismatch for {}", u.user_id);
        let m = models.remove(&u.user_id).unwrap_or_default();
        ensure!(m.completion_awards.values().all(|&c| c == 1), "completion awarded more than once");
        let completions = u.awards.iter().filter(|a| a.reason == AwardReason::Completion).count();
        ensure!(completions == u.completed_adventures.len(), "completion awards != completed adventures");
        for adv in catalog.adventures() {
            if let Some(pb) = &adv.perfect_badge_id {
                let has = u.has_badge(pb);
                ensure!(has == m.perfect_first_runs.contains(&adv.id), "perfect badge for {} disagrees with first run", adv.id);
            }
            ensure!(u.has_badge(&adv.award_id) == m.first_runs.contains(&adv.id), "award badge disagrees with completion");
        }
    }
    Ok(stats)
}
