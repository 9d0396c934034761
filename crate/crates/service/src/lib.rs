//! HTTP teaching sessions. A human (or script) submits demonstrations one at
//! a time; after each one the session refreshes its reward posterior and
//! reports whether the demonstrations suffice.
//!
//! Every mutation is appended to a JSON-lines store and replayed on start.

pub mod api;
pub mod error;
pub mod session;
pub mod store;

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Path as UrlPath, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use suffice_core::sufficiency::Assessment;

pub use api::*;
pub use error::{ApiError, ApiResult, ErrorBody};
pub use session::Session;
pub use store::{Event, Record, Store};

#[derive(Debug, Default)]
struct ProgressCell {
    in_flight: AtomicBool,
    iteration: AtomicUsize,
    total: AtomicUsize,
}

impl ProgressCell {
    fn read(&self) -> Progress {
        Progress {
            in_flight: self.in_flight.load(Ordering::Relaxed),
            iteration: self.iteration.load(Ordering::Relaxed),
            total: self.total.load(Ordering::Relaxed),
        }
    }
}

#[derive(Debug)]
struct Handle {
    session: Arc<tokio::sync::Mutex<Session>>,
    progress: ProgressCell,
    snapshot: std::sync::Mutex<SessionState>,
}

impl Handle {
    fn new(session: Session) -> Arc<Self> {
        let snapshot = snapshot(&session);
        Arc::new(Self {
            session: Arc::new(tokio::sync::Mutex::new(session)),
            progress: ProgressCell::default(),
            snapshot: std::sync::Mutex::new(snapshot),
        })
    }

    fn refresh(&self, session: &Session) {
        *self.snapshot.lock().unwrap_or_else(|e| e.into_inner()) = snapshot(session);
    }

    fn state(&self) -> SessionState {
        let mut state = self.snapshot.lock().unwrap_or_else(|e| e.into_inner()).clone();
        state.progress = self.progress.read();
        state
    }
}

fn snapshot(session: &Session) -> SessionState {
    SessionState {
        id: session.id().to_string(),
        status: session.status(),
        demos: session.assessments().len(),
        rating: session.rating(),
        progress: Progress::default(),
        latest: session.assessments().last().cloned(),
    }
}

#[derive(Debug, Default)]
struct Shared {
    sessions: RwLock<HashMap<String, Arc<Handle>>>,
    store: Option<Store>,
}

/// Shared server state: live sessions plus the optional on-disk log.
#[derive(Debug, Clone, Default)]
pub struct AppState(Arc<Shared>);

impl AppState {
    /// Sessions kept in memory only.
    pub fn ephemeral() -> Self {
        Self::default()
    }

    /// Opens the store at `path` and rebuilds every session in it by
    /// re-running its recorded rounds.
    pub fn open(path: impl AsRef<Path>) -> ApiResult<Self> {
        let (store, records) = Store::open(path)?;
        let mut sessions: HashMap<String, Session> = HashMap::new();
        for Record { session: id, event } in records {
            match event {
                Event::Created { request } => {
                    sessions.insert(id.clone(), Session::create(id, request)?);
                }
                Event::Demo {
                    state,
                    action,
                    token,
                    assessment,
                } => {
                    let Some(session) = sessions.get_mut(&id) else {
                        tracing::warn!(%id, "demo for unknown session in store");
                        continue;
                    };
                    let replayed = session.submit(state, action, token.as_deref(), &|_, _| {})?;
                    if replayed.assessment != assessment {
                        tracing::warn!(%id, round = assessment.round, "replayed round differs from the stored one");
                    }
                }
                Event::Rated { rating } => {
                    if let Some(session) = sessions.get_mut(&id) {
                        session.rate(rating.into())?;
                    }
                }
            }
        }
        tracing::info!(sessions = sessions.len(), path = %store.path().display(), "store replayed");
        let handles = sessions.into_iter().map(|(id, s)| (id, Handle::new(s))).collect();
        Ok(Self(Arc::new(Shared {
            sessions: RwLock::new(handles),
            store: Some(store),
        })))
    }

    fn handle(&self, id: &str) -> ApiResult<Arc<Handle>> {
        self.0
            .sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(id.to_string()))
    }

    fn record(&self, session: &str, event: Event) -> ApiResult<()> {
        if let Some(store) = &self.0.store {
            store.append(&Record {
                session: session.to_string(),
                event,
            })?;
        }
        Ok(())
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.0.sessions.read().unwrap_or_else(|e| e.into_inner()).keys().cloned().collect()
    }

    /// Runs `f` on a session with exclusive access.
    pub async fn with_session<R>(&self, id: &str, f: impl FnOnce(&Session) -> R) -> ApiResult<R> {
        let handle = self.handle(id)?;
        let session = handle.session.lock().await;
        Ok(f(&session))
    }
}

/// JSON body whose parse failures become validation errors.
pub struct ApiJson<T>(pub T);

impl<S, T> FromRequest<S> for ApiJson<T>
where
    Json<T>: FromRequest<S, Rejection = JsonRejection>,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(value)) => Ok(ApiJson(value)),
            Err(rejection) => Err(ApiError::Validation {
                message: rejection.body_text(),
                field: None,
            }),
        }
    }
}

pub fn router(state: AppState) -> Router {
    let v1 = Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_state))
        .route("/sessions/{id}/environment", get(environment))
        .route("/sessions/{id}/demos", post(submit_demo))
        .route("/sessions/{id}/assessments", get(assessments))
        .route("/sessions/{id}/policy", get(policy))
        .route("/sessions/{id}/rating", post(rate))
        .route("/sessions/{id}/trace", get(trace));
    Router::new()
        .route("/healthz", get(healthz))
        .nest("/v1", v1)
        .with_state(state)
}

async fn healthz() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn create_session(
    State(state): State<AppState>,
    ApiJson(request): ApiJson<CreateSession>,
) -> ApiResult<(StatusCode, Json<SessionDescriptor>)> {
    let id = uuid::Uuid::new_v4().simple().to_string();
    let session = Session::create(id.clone(), request)?;
    state.record(
        &id,
        Event::Created {
            request: session.request().clone(),
        },
    )?;
    let descriptor = session.descriptor();
    state
        .0
        .sessions
        .write()
        .unwrap_or_else(|e| e.into_inner())
        .insert(id.clone(), Handle::new(session));
    tracing::info!(%id, "session created");
    Ok((StatusCode::CREATED, Json(descriptor)))
}

async fn session_state(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SessionState>> {
    Ok(Json(state.handle(&id)?.state()))
}

async fn environment(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<SessionDescriptor>> {
    Ok(Json(state.with_session(&id, Session::descriptor).await?))
}

async fn submit_demo(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    ApiJson(demo): ApiJson<DemoRequest>,
) -> ApiResult<Json<DemoResponse>> {
    let handle = state.handle(&id)?;
    let mut session = handle.session.clone().lock_owned().await;
    let response = tokio::task::spawn_blocking(move || {
        let progress = &handle.progress;
        progress.iteration.store(0, Ordering::Relaxed);
        progress.in_flight.store(true, Ordering::Relaxed);
        let result = session.submit(demo.state, demo.action, demo.token.as_deref(), &|i, total| {
            progress.iteration.store(i, Ordering::Relaxed);
            progress.total.store(total, Ordering::Relaxed);
        });
        progress.in_flight.store(false, Ordering::Relaxed);
        let response = result?;
        if !response.replayed {
            state.record(
                &id,
                Event::Demo {
                    state: demo.state,
                    action: demo.action,
                    token: demo.token,
                    assessment: response.assessment.clone(),
                },
            )?;
            handle.refresh(&session);
        }
        Ok::<_, ApiError>(response)
    })
    .await
    .map_err(|e| ApiError::Internal(format!("round panicked: {e}")))??;
    Ok(Json(response))
}

async fn assessments(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Vec<Assessment>>> {
    Ok(Json(state.with_session(&id, |s| s.assessments().to_vec()).await?))
}

async fn policy(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<PolicyPayload>> {
    Ok(Json(state.with_session(&id, Session::policy).await??))
}

async fn rate(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    ApiJson(request): ApiJson<RatingRequest>,
) -> ApiResult<Json<RatingResponse>> {
    let handle = state.handle(&id)?;
    let mut session = handle.session.lock().await;
    let rating = session.rate(request.rating)?;
    state.record(&id, Event::Rated { rating })?;
    handle.refresh(&session);
    Ok(Json(RatingResponse { id, rating }))
}

#[derive(Debug, Deserialize)]
struct TraceQuery {
    #[serde(default)]
    format: Option<String>,
}

async fn trace(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(query): Query<TraceQuery>,
) -> ApiResult<Response> {
    let json = match query.format.as_deref() {
        None | Some("csv") => false,
        Some("json") => true,
        Some(other) => return Err(ApiError::validation("format", format!("unknown trace format {other}"))),
    };
    let body = state.with_session(&id, |s| s.trace(json)).await??;
    let content_type = if json { "application/json" } else { "text/csv" };
    Ok(([(header::CONTENT_TYPE, content_type)], body).into_response())
}

/// Serves `router(state)` on `listener` until Ctrl-C.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
