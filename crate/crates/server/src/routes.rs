use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use futures::{Stream, StreamExt};
use marge_core::adventure::{
    Adventure, AdventureCard, ResumeChoice, Session, Stage, StageInput, StartOutcome,
};
use marge_core::proximity::{RegionEvent, ScanEvent};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;
use tokio_stream::wrappers::BroadcastStream;

use crate::auth::{ApiJson, AuthUser};
use crate::error::ApiError;
use crate::state::{now_ms, AppState, StreamMessage};

type ApiResult<T> = Result<T, ApiError>;
type AppStateRef = State<Arc<AppState>>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/auth/register", post(register))
        .route("/auth/login", post(login))
        .route("/auth/forgot-password", post(forgot_password))
        .route("/catalog", get(catalog))
        .route("/catalog/adventures/{id}", get(adventure))
        .route("/sessions", post(start_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/resume", post(resume))
        .route("/sessions/{id}/advance", post(advance))
        .route("/sessions/{id}/answer", post(answer))
        .route("/sessions/{id}/scan-events", post(scan_events))
        .route("/sessions/{id}/events", get(session_events))
        .route("/leaderboard", get(leaderboard))
        .route("/leaderboard/events", get(leaderboard_events))
        .route("/users/{id}", get(get_user))
        .route("/users/{id}/language", put(set_language))
        .route("/users/{id}/progress", get(progress))
        .route("/users/{id}/feedback", post(feedback))
        .route("/easter-eggs/{id}/trigger", post(trigger_egg))
        .fallback(|| async { ApiError::route_not_found() })
        .method_not_allowed_fallback(|| async {
            ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "MethodNotAllowed", "method not allowed")
        })
        .with_state(state)
}

#[derive(Deserialize)]
struct RegisterBody {
    login: String,
    password: String,
    #[serde(default)]
    language: Option<String>,
}

async fn register(State(st): AppStateRef, ApiJson(body): ApiJson<RegisterBody>) -> ApiResult<Response> {
    let catalog = st.catalog();
    let language = body.language.unwrap_or_else(|| catalog.languages()[0].clone());
    catalog.check_language(&language)?;
    let user_id = st.store().register_user(&body.login, &body.password)?;
    st.with_engine(|e, store| {
        e.game.add_user(&user_id, &language)?;
        e.persist_user(store, &user_id)
    })?;
    let token = st.issue_token(&user_id)?;
    Ok((StatusCode::CREATED, Json(token)).into_response())
}

#[derive(Deserialize)]
struct LoginBody {
    login: String,
    password: String,
}

async fn login(State(st): AppStateRef, ApiJson(body): ApiJson<LoginBody>) -> ApiResult<Response> {
    let user_id = st
        .store()
        .verify(&body.login, &body.password)
        .ok_or_else(|| ApiError::unauthorized("unknown login or wrong password"))?;
    Ok(Json(st.issue_token(&user_id)?).into_response())
}

async fn forgot_password() -> ApiError {
    ApiError::not_implemented("password recovery needs an email channel, which this service does not have")
}

#[derive(Deserialize)]
struct LangQuery {
    lang: Option<String>,
}

#[derive(Serialize)]
struct CatalogView {
    language: String,
    adventures: Vec<AdventureCard>,
}

async fn catalog(State(st): AppStateRef, q: Result<Query<LangQuery>, axum::extract::rejection::QueryRejection>) -> ApiResult<Json<CatalogView>> {
    let Query(q) = q?;
    let catalog = st.catalog();
    let language = q.lang.unwrap_or_else(|| catalog.languages()[0].clone());
    let adventures = catalog.list_adventures(&language)?;
    Ok(Json(CatalogView { language, adventures }))
}

async fn adventure(State(st): AppStateRef, Path(id): Path<String>) -> ApiResult<Json<Adventure>> {
    let catalog = st.catalog();
    let adv = catalog
        .adventure(&id)
        .ok_or_else(|| marge_core::adventure::GameError::UnknownAdventure(id.clone()))?;
    Ok(Json(adv.clone()))
}

#[derive(Deserialize)]
struct StartBody {
    adventure_id: String,
    #[serde(default)]
    replay: bool,
}

async fn start_session(State(st): AppStateRef, user: AuthUser, ApiJson(body): ApiJson<StartBody>) -> ApiResult<Response> {
    let now = now_ms();
    let outcome = st.with_engine(|e, store| {
        let (outcome, events) = if body.replay {
            e.game.start_replay(&user.0, &body.adventure_id, now)?
        } else {
            e.game.start_session(&user.0, &body.adventure_id, now)?
        };
        if let StartOutcome::New(s) = &outcome {
            e.region_mut(&s.session_id);
            e.persist_session(store, &s.session_id)?;
            e.publish_events(Some(&s.session_id), &events);
        }
        Ok(outcome)
    })?;
    let status = if matches!(outcome, StartOutcome::New(_)) {
        StatusCode::CREATED
    } else {
        StatusCode::OK
    };
    Ok((status, Json(outcome)).into_response())
}

#[derive(Serialize)]
struct SessionView {
    session: Session,
    stage: Option<Stage>,
    stage_count: usize,
    /// Present when the current stage is a beacon gate.
    gate_unlocked: Option<bool>,
}

fn owned_session(e: &crate::state::Engine, user: &AuthUser, sid: &str) -> ApiResult<Session> {
    let s = e.game.session(sid)?.clone();
    user.require(&s.user_id)?;
    Ok(s)
}

fn session_view(e: &crate::state::Engine, session: Session) -> SessionView {
    let adv = e.game.catalog().adventure(&session.adventure_id);
    let stage_count = adv.map_or(0, |a| a.stages.len());
    let stage = if session.is_active() {
        adv.and_then(|a| a.stages.get(session.stage_index)).cloned()
    } else {
        None
    };
    let gate_unlocked = e.gate_status(&session.session_id, e.stream_now(&session.session_id));
    SessionView {
        session,
        stage,
        stage_count,
        gate_unlocked,
    }
}

async fn get_session(State(st): AppStateRef, user: AuthUser, Path(sid): Path<String>) -> ApiResult<Json<SessionView>> {
    st.with_engine(|e, _| {
        let s = owned_session(e, &user, &sid)?;
        Ok(Json(session_view(e, s)))
    })
}

#[derive(Deserialize)]
struct ResumeBody {
    choice: ResumeChoice,
}

async fn resume(
    State(st): AppStateRef,
    user: AuthUser,
    Path(sid): Path<String>,
    ApiJson(body): ApiJson<ResumeBody>,
) -> ApiResult<Json<SessionView>> {
    st.with_engine(|e, store| {
        owned_session(e, &user, &sid)?;
        let (s, events) = e.game.resume_or_restart(&sid, body.choice, now_ms())?;
        e.persist_session(store, &sid)?;
        e.publish_events(Some(&sid), &events);
        let now = e.stream_now(&sid);
        e.refresh_gate(&sid, now);
        Ok(Json(session_view(e, s)))
    })
}

#[derive(Deserialize)]
struct AdvanceBody {
    input: StageInput,
    /// Scan-stream time at which to judge a gate; defaults to the last
    /// ingested event time.
    #[serde(default)]
    now_ms: Option<u64>,
}

async fn advance(
    State(st): AppStateRef,
    user: AuthUser,
    Path(sid): Path<String>,
    ApiJson(body): ApiJson<AdvanceBody>,
) -> ApiResult<Json<SessionView>> {
    st.with_engine(|e, store| {
        let owner = owned_session(e, &user, &sid)?.user_id;
        let stream_now = body.now_ms.unwrap_or_else(|| e.stream_now(&sid));
        let region = e.region_mut(&sid).clone();
        let (s, events) = e.game.advance_stage(&sid, body.input, &region, stream_now, now_ms())?;
        e.persist_session(store, &sid)?;
        e.persist_user(store, &owner)?;
        e.publish_events(Some(&sid), &events);
        e.refresh_gate(&sid, stream_now);
        Ok(Json(session_view(e, s)))
    })
}

#[derive(Deserialize)]
struct AnswerBody {
    question_index: usize,
    choice_index: usize,
}

async fn answer(
    State(st): AppStateRef,
    user: AuthUser,
    Path(sid): Path<String>,
    ApiJson(body): ApiJson<AnswerBody>,
) -> ApiResult<Json<marge_core::adventure::QuizOutcome>> {
    st.with_engine(|e, store| {
        owned_session(e, &user, &sid)?;
        let (outcome, events) = e.game.answer_quiz(&sid, body.question_index, body.choice_index, now_ms())?;
        e.persist_session(store, &sid)?;
        e.publish_events(Some(&sid), &events);
        Ok(Json(outcome))
    })
}

#[derive(Deserialize)]
struct ScanBody {
    events: Vec<ScanEvent>,
}

#[derive(Serialize)]
struct ScanAccepted {
    accepted: usize,
    region_events: Vec<RegionEvent>,
    gate_unlocked: Option<bool>,
}

async fn scan_events(
    State(st): AppStateRef,
    user: AuthUser,
    Path(sid): Path<String>,
    ApiJson(body): ApiJson<ScanBody>,
) -> ApiResult<Json<ScanAccepted>> {
    st.with_engine(|e, store| {
        let s = owned_session(e, &user, &sid)?;
        if !s.is_active() {
            return Err(marge_core::adventure::GameError::SessionComplete.into());
        }
        let region_events = e.region_mut(&sid).ingest_batch(&body.events)?;
        e.persist_session(store, &sid)?;
        for re in &region_events {
            let (kind, beacon) = match re {
                RegionEvent::Entered(b) => ("region_entered", b),
                RegionEvent::Exited(b) => ("region_exited", b),
            };
            e.publish(&sid, serde_json::json!({"type": kind, "session_id": sid, "beacon": beacon}));
        }
        let now = e.stream_now(&sid);
        let gate_unlocked = e.refresh_gate(&sid, now);
        Ok(Json(ScanAccepted {
            accepted: body.events.len(),
            region_events,
            gate_unlocked,
        }))
    })
}

fn sse_stream(
    rx: broadcast::Receiver<StreamMessage>,
    mut shutdown: tokio::sync::watch::Receiver<bool>,
) -> impl Stream<Item = Result<Event, Infallible>> {
    let stopped = async move {
        let _ = shutdown.wait_for(|down| *down).await;
    };
    // A lagging subscriber has lost messages; end its stream rather than
    // deliver a gapped sequence.
    BroadcastStream::new(rx)
        .take_while(|m| std::future::ready(m.is_ok()))
        .filter_map(|m| std::future::ready(m.ok()))
        .map(|m| {
            Ok(Event::default()
                .event(m.event)
                .id(m.seq.to_string())
                .data(m.data.to_string()))
        })
        .take_until(stopped)
}

async fn session_events(State(st): AppStateRef, user: AuthUser, Path(sid): Path<String>) -> ApiResult<Response> {
    st.with_engine(|e, _| owned_session(e, &user, &sid).map(drop))?;
    let rx = st.subscribe_session(&sid);
    let stream = sse_stream(rx, st.shutdown_signal());
    Ok(Sse::new(stream)
        .keep_alive(KeepAlive::new().interval(Duration::from_secs(15)))
        .into_response())
}

#[derive(Deserialize)]
struct TopQuery {
    n: Option<usize>,
}

async fn leaderboard(
    State(st): AppStateRef,
    q: Result<Query<TopQuery>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<Response> {
    let Query(q) = q?;
    let top = st.with_engine(|e, _| Ok(e.game.leaderboard_top(q.n.unwrap_or(10))?))?;
    Ok(Json(serde_json::json!({ "entries": top })).into_response())
}

async fn leaderboard_events(State(st): AppStateRef) -> Response {
    let stream = sse_stream(st.subscribe_leaderboard(), st.shutdown_signal());
    Sse::new(stream)
        .keep_alive(KeepAlive::new().interval(Duration::from_secs(15)))
        .into_response()
}

async fn get_user(State(st): AppStateRef, user: AuthUser, Path(uid): Path<String>) -> ApiResult<Response> {
    user.require(&uid)?;
    st.with_engine(|e, _| Ok(Json(e.game.user(&uid)?.clone()).into_response()))
}

#[derive(Deserialize)]
struct LanguageBody {
    language: String,
}

async fn set_language(
    State(st): AppStateRef,
    user: AuthUser,
    Path(uid): Path<String>,
    ApiJson(body): ApiJson<LanguageBody>,
) -> ApiResult<Response> {
    user.require(&uid)?;
    st.with_engine(|e, store| {
        let profile = e.game.set_language(&uid, &body.language)?.clone();
        e.persist_user(store, &uid)?;
        Ok(Json(profile).into_response())
    })
}

async fn progress(State(st): AppStateRef, user: AuthUser, Path(uid): Path<String>) -> ApiResult<Response> {
    user.require(&uid)?;
    st.with_engine(|e, _| Ok(Json(e.game.user_progress(&uid)?).into_response()))
}

#[derive(Deserialize)]
struct FeedbackBody {
    text: String,
}

async fn feedback(
    State(st): AppStateRef,
    user: AuthUser,
    Path(uid): Path<String>,
    ApiJson(body): ApiJson<FeedbackBody>,
) -> ApiResult<Response> {
    user.require(&uid)?;
    st.with_engine(|e, store| {
        let f = e.game.record_feedback(&uid, &body.text, now_ms())?;
        let index = e.game.feedback(&uid).len() - 1;
        e.persist_feedback(store, &f, index)?;
        Ok((StatusCode::CREATED, Json(f)).into_response())
    })
}

async fn trigger_egg(State(st): AppStateRef, user: AuthUser, Path(egg): Path<String>) -> ApiResult<Response> {
    st.with_engine(|e, store| {
        let (outcome, events) = e.game.trigger_easter_egg(&user.0, &egg, now_ms())?;
        e.persist_user(store, &user.0)?;
        e.publish_events(None, &events);
        Ok(Json(outcome).into_response())
    })
}
