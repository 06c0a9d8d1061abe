//! REST API over the engine. Handlers run the synchronous core on the
//! blocking pool.

pub mod auth;
mod error;

pub use error::ApiError;

use std::net::SocketAddr;
use std::sync::Arc;

use axum::async_trait;
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{ConnectInfo, FromRef, FromRequest, FromRequestParts, Path, Query, Request, State};
use axum::http::request::Parts;
use axum::http::{header, StatusCode};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use self::auth::{check_password_policy, hash_password, verify_password, Purpose, TokenSigner, TOKEN_LIFETIME_SECS};
use crate::engine::{CompareTarget, Engine};
use crate::hash::Hash256;
use crate::monitor::{Notification, NotificationKind, NotificationRefs};
use crate::store::{permissions, NewSchedule, RecordId, SearchFilter, UserAccount};
use crate::time::{self, Instant};

pub struct AppState {
    engine: Arc<Engine>,
    signer: TokenSigner,
    admin_email: Option<String>,
    /// Digest checked for unknown logins so both paths cost the same.
    dummy_digest: String,
}

impl AppState {
    pub fn new(engine: Arc<Engine>, secret: impl AsRef<[u8]>, admin_email: Option<String>) -> Self {
        Self {
            engine,
            signer: TokenSigner::new(secret),
            admin_email: admin_email.map(|e| e.trim().to_ascii_lowercase()),
            dummy_digest: hash_password("not-a-real-password"),
        }
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }

    pub fn signer(&self) -> &TokenSigner {
        &self.signer
    }
}

type Shared = State<Arc<AppState>>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/auth/register", post(register))
        .route("/api/auth/confirm", post(confirm))
        .route("/api/auth/login", post(login))
        .route("/api/stamps", post(submit_stamp).get(search))
        .route("/api/stamps/:id", get(get_stamp))
        .route("/api/stamps/:id/verify", get(verify))
        .route("/api/versions", get(versions))
        .route("/api/domains", get(domains))
        .route("/api/compare", get(compare))
        .route("/api/schedules", post(create_schedule).get(list_schedules))
        .route("/api/schedules/:id", get(get_schedule).delete(delete_schedule))
        .route("/api/block-check", post(block_check))
        .route("/api/block-map", get(block_map))
        .route("/api/stats/countries", get(stats))
        .route("/api/admin/seal", post(seal))
        .with_state(state)
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

// ---- extractors ----

/// JSON body whose rejections use the error envelope.
pub struct ApiJson<T>(pub T);

#[async_trait]
impl<T, S> FromRequest<S> for ApiJson<T>
where
    T: DeserializeOwned,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        Json::<T>::from_request(req, state)
            .await
            .map(|Json(v)| ApiJson(v))
            .map_err(|r: JsonRejection| ApiError::validation(r.body_text()))
    }
}

pub struct ApiQuery<T>(pub T);

#[async_trait]
impl<T, S> FromRequestParts<S> for ApiQuery<T>
where
    T: DeserializeOwned,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, ApiError> {
        Query::<T>::from_request_parts(parts, state)
            .await
            .map(|Query(v)| ApiQuery(v))
            .map_err(|r: QueryRejection| ApiError::validation(r.body_text()))
    }
}

/// Peer address of the connection, when the server recorded it.
pub struct ClientIp(pub Option<String>);

#[async_trait]
impl<S: Send + Sync> FromRequestParts<S> for ClientIp {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, _state: &S) -> Result<Self, ApiError> {
        Ok(ClientIp(
            parts
                .extensions
                .get::<ConnectInfo<SocketAddr>>()
                .map(|ConnectInfo(addr)| addr.ip().to_string()),
        ))
    }
}

/// A confirmed user holding a live session token from this address.
pub struct AuthUser(pub UserAccount);

#[async_trait]
impl<S> FromRequestParts<S> for AuthUser
where
    Arc<AppState>: FromRef<S>,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, ApiError> {
        let state = Arc::<AppState>::from_ref(state);
        let ClientIp(ip) = ClientIp::from_request_parts(parts, &()).await?;
        let token = parts
            .headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer ").or_else(|| v.strip_prefix("bearer ")))
            .ok_or_else(|| ApiError::unauthorized("a bearer token is required"))?
            .to_string();
        blocking(move || {
            let now = state.engine.now();
            let claims = state.signer.verify(&token, Purpose::Session, Some(ip.as_deref().unwrap_or("")), now)?;
            let user = state
                .engine
                .store()
                .get_user(claims.uid)?
                .ok_or_else(|| ApiError::unauthorized("account no longer exists"))?;
            if !user.confirmed {
                return Err(ApiError::new(StatusCode::FORBIDDEN, "confirm_first", "confirm your account first"));
            }
            Ok(AuthUser(user))
        })
        .await
    }
}

fn require(user: &UserAccount, permission: u32) -> Result<(), ApiError> {
    if permissions::allows(user.permissions, permission) {
        Ok(())
    } else {
        Err(ApiError::forbidden("insufficient permissions"))
    }
}

// ---- handlers ----

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

#[derive(Deserialize)]
struct RegisterBody {
    username: String,
    email: String,
    password: String,
}

async fn register(State(state): Shared, ApiJson(body): ApiJson<RegisterBody>) -> Result<impl IntoResponse, ApiError> {
    check_password_policy(&body.password).map_err(|e| ApiError::validation(e.to_string()))?;
    blocking(move || {
        let now = state.engine.now();
        let role = match &state.admin_email {
            Some(admin) if *admin == body.email.trim().to_ascii_lowercase() => permissions::ADMINISTRATOR,
            _ => permissions::USER,
        };
        let digest = hash_password(&body.password);
        let user = state.engine.store().create_user(&body.username, &body.email, &digest, role, now)?;
        let token = state.signer.issue(user.id, Purpose::Confirm, None, now);
        let link = format!("{}/confirm/{token}", state.engine.server_url());
        let notification = Notification::new(
            state.engine.subject_prefix(),
            user.email.clone(),
            "Confirm your account",
            format!("Hello {},\n\nconfirm your account within one hour:\n{link}\n", user.username),
            NotificationKind::AccountConfirmation,
            NotificationRefs { user: Some(user.id), ..Default::default() },
            now,
        );
        state.engine.store().enqueue_notification(&notification)?;
        Ok((StatusCode::CREATED, Json(json!({ "user": user, "confirmation_token": token }))))
    })
    .await
}

#[derive(Deserialize)]
struct ConfirmBody {
    token: String,
}

async fn confirm(State(state): Shared, ApiJson(body): ApiJson<ConfirmBody>) -> Result<Json<Value>, ApiError> {
    blocking(move || {
        let claims = state.signer.verify(&body.token, Purpose::Confirm, None, state.engine.now())?;
        let changed = state.engine.store().confirm_user(claims.uid)?;
        Ok(Json(json!({ "confirmed": true, "changed": changed })))
    })
    .await
}

#[derive(Deserialize)]
struct LoginBody {
    login: String,
    password: String,
}

async fn login(
    State(state): Shared,
    ClientIp(ip): ClientIp,
    ApiJson(body): ApiJson<LoginBody>,
) -> Result<Json<Value>, ApiError> {
    blocking(move || {
        let bad = || ApiError::unauthorized("invalid credentials");
        let user = state.engine.store().find_user(&body.login)?;
        let Some(user) = user else {
            verify_password(&body.password, &state.dummy_digest);
            return Err(bad());
        };
        if !verify_password(&body.password, &user.password_digest) {
            return Err(bad());
        }
        if !user.confirmed {
            return Err(ApiError::new(StatusCode::FORBIDDEN, "confirm_first", "confirm your account first"));
        }
        let now = state.engine.now();
        state.engine.store().touch_user(user.id, now)?;
        let token = state.signer.issue(user.id, Purpose::Session, Some(ip.as_deref().unwrap_or("")), now);
        Ok(Json(json!({ "token": token, "expires_in": TOKEN_LIFETIME_SECS, "user": user })))
    })
    .await
}

#[derive(Deserialize)]
struct StampBody {
    url: String,
    #[serde(default)]
    post_title: Option<String>,
}

#[derive(Serialize)]
struct StampReceipt {
    id: RecordId,
    duplicate: bool,
    url: String,
    content_hash: Hash256,
    stamp_hash: Hash256,
    chain_hash: Hash256,
    #[serde(with = "time::serde_secs")]
    stamped_at: Instant,
    tsa_key_id: Option<String>,
    verify_url: String,
}

async fn submit_stamp(
    State(state): Shared,
    AuthUser(user): AuthUser,
    ApiJson(body): ApiJson<StampBody>,
) -> Result<impl IntoResponse, ApiError> {
    require(&user, permissions::WRITE)?;
    blocking(move || {
        let outcome = state.engine.stamp_url(&body.url, user.id, body.post_title)?;
        let r = outcome.record;
        let receipt = StampReceipt {
            id: r.id,
            duplicate: !outcome.created,
            verify_url: format!("{}/api/stamps/{}/verify", state.engine.server_url(), r.id),
            url: r.url,
            content_hash: r.core.content_hash,
            stamp_hash: r.core.stamp_hash,
            chain_hash: r.core.chain_hash,
            stamped_at: r.core.stamped_at,
            tsa_key_id: r.core.tsa_key_id,
        };
        let status = if outcome.created { StatusCode::CREATED } else { StatusCode::OK };
        Ok((status, Json(receipt)))
    })
    .await
}

#[derive(Deserialize)]
struct SearchQuery {
    #[serde(default)]
    query: Option<String>,
    #[serde(default)]
    domain: Option<String>,
    #[serde(default)]
    page: Option<u32>,
}

async fn search(State(state): Shared, ApiQuery(q): ApiQuery<SearchQuery>) -> Result<Json<Value>, ApiError> {
    blocking(move || {
        let filter = SearchFilter { query: q.query, domain: q.domain };
        let page = state.engine.store().search(&filter, q.page.unwrap_or(1))?;
        Ok(Json(serde_json::to_value(page).map_err(|e| ApiError::internal(e.to_string()))?))
    })
    .await
}

async fn get_stamp(State(state): Shared, Path(id): Path<RecordId>) -> Result<Json<Value>, ApiError> {
    blocking(move || Ok(Json(json!(state.engine.record(id)?)))).await
}

async fn verify(State(state): Shared, Path(id): Path<RecordId>) -> Result<Json<Value>, ApiError> {
    blocking(move || {
        let (report, receipt) = state.engine.verify_record(id)?;
        Ok(Json(json!({ "report": report, "failed_checks": report.failed_checks(), "receipt": receipt })))
    })
    .await
}

#[derive(Deserialize)]
struct UrlQuery {
    url: String,
}

async fn versions(State(state): Shared, ApiQuery(q): ApiQuery<UrlQuery>) -> Result<Json<Value>, ApiError> {
    blocking(move || Ok(Json(json!({ "url": q.url, "versions": state.engine.store().versions_of(&q.url)? })))).await
}

async fn domains(State(state): Shared) -> Result<Json<Value>, ApiError> {
    blocking(move || Ok(Json(json!({ "domains": state.engine.store().list_domains()? })))).await
}

#[derive(Deserialize)]
struct CompareQuery {
    old: RecordId,
    #[serde(default)]
    new: Option<RecordId>,
    #[serde(default)]
    current: Option<bool>,
    #[serde(default)]
    country: Option<String>,
}

async fn compare(State(state): Shared, ApiQuery(q): ApiQuery<CompareQuery>) -> Result<Json<Value>, ApiError> {
    let target = match (q.new, q.current.unwrap_or(false), q.country) {
        (Some(id), false, None) => CompareTarget::Record(id),
        (None, true, None) => CompareTarget::Current,
        (None, false, Some(cc)) => CompareTarget::Country(cc),
        _ => return Err(ApiError::validation("give exactly one of new, current=true, country")),
    };
    blocking(move || Ok(Json(json!(state.engine.compare(q.old, &target)?)))).await
}

async fn create_schedule(
    State(state): Shared,
    AuthUser(user): AuthUser,
    ApiJson(body): ApiJson<NewSchedule>,
) -> Result<impl IntoResponse, ApiError> {
    require(&user, permissions::WRITE)?;
    blocking(move || Ok((StatusCode::CREATED, Json(state.engine.create_schedule(&body, user.id)?)))).await
}

async fn list_schedules(State(state): Shared, AuthUser(user): AuthUser) -> Result<Json<Value>, ApiError> {
    blocking(move || {
        let all = state.engine.store().list_schedules()?;
        let moderator = permissions::allows(user.permissions, permissions::MODERATE);
        let mine: Vec<_> = all.into_iter().filter(|t| moderator || t.owner == user.id).collect();
        Ok(Json(json!({ "schedules": mine })))
    })
    .await
}

fn owned_schedule(state: &AppState, user: &UserAccount, id: i64) -> Result<crate::store::ScheduleTask, ApiError> {
    let task = state
        .engine
        .store()
        .get_schedule(id)?
        .ok_or_else(|| ApiError::not_found(format!("schedule {id}")))?;
    if task.owner != user.id && !permissions::allows(user.permissions, permissions::MODERATE) {
        // Do not reveal other users' schedules.
        return Err(ApiError::not_found(format!("schedule {id}")));
    }
    Ok(task)
}

async fn get_schedule(State(state): Shared, AuthUser(user): AuthUser, Path(id): Path<i64>) -> Result<Json<Value>, ApiError> {
    blocking(move || Ok(Json(json!(owned_schedule(&state, &user, id)?)))).await
}

async fn delete_schedule(
    State(state): Shared,
    AuthUser(user): AuthUser,
    Path(id): Path<i64>,
) -> Result<StatusCode, ApiError> {
    blocking(move || {
        owned_schedule(&state, &user, id)?;
        state.engine.store().delete_schedule(id)?;
        Ok(StatusCode::NO_CONTENT)
    })
    .await
}

#[derive(Deserialize)]
struct BlockCheckBody {
    url: String,
    #[serde(default)]
    countries: Option<Vec<String>>,
}

async fn block_check(
    State(state): Shared,
    AuthUser(user): AuthUser,
    ApiJson(body): ApiJson<BlockCheckBody>,
) -> Result<Json<Value>, ApiError> {
    require(&user, permissions::WRITE)?;
    blocking(move || {
        let countries = body
            .countries
            .unwrap_or_else(|| state.engine.registry().countries().map(str::to_string).collect());
        let results = state.engine.block_check(&body.url, &countries)?;
        Ok(Json(json!({ "url": body.url, "results": results })))
    })
    .await
}

async fn block_map(State(state): Shared, ApiQuery(q): ApiQuery<UrlQuery>) -> Result<Json<Value>, ApiError> {
    blocking(move || {
        let rows = state.engine.store().block_map(&q.url)?;
        let countries: Vec<Value> = rows
            .iter()
            .map(|r| json!({ "country": r.country, "blocked": r.blocked, "checked_at": time::rfc3339(r.checked_at) }))
            .collect();
        Ok(Json(json!({ "url": q.url, "countries": countries })))
    })
    .await
}

async fn stats(State(state): Shared) -> Result<Json<Value>, ApiError> {
    blocking(move || Ok(Json(json!({ "countries": state.engine.store().stats_by_country()? })))).await
}

async fn seal(State(state): Shared, AuthUser(user): AuthUser) -> Result<Json<Value>, ApiError> {
    require(&user, permissions::ADMINISTER)?;
    blocking(move || {
        let outcome = state.engine.seal_pending()?;
        Ok(Json(json!({
            "batch": outcome.sealed,
            "retried": outcome.retried.iter().map(|(id, ok)| json!({ "batch_id": id, "anchored": ok })).collect::<Vec<_>>(),
        })))
    })
    .await
}

/// Serves the API on `bind` until Ctrl-C. A background loop runs the
/// scheduler every `tick` and drains the outbox into `sink`.
pub async fn serve(
    state: Arc<AppState>,
    bind: &str,
    monitor: Arc<crate::monitor::Monitor>,
    sink: Arc<dyn crate::monitor::NotificationSink>,
    tick: std::time::Duration,
) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    let background = tokio::spawn(async move {
        let mut interval = tokio::time::interval(tick);
        loop {
            interval.tick().await;
            let monitor = monitor.clone();
            let sink = sink.clone();
            let result = tokio::task::spawn_blocking(move || -> anyhow::Result<()> {
                monitor.tick()?;
                crate::monitor::drain_outbox(monitor.engine().store(), sink.as_ref())?;
                Ok(())
            })
            .await;
            match result {
                Ok(Err(err)) => tracing::warn!(%err, "scheduler tick failed"),
                Err(err) => tracing::warn!(%err, "scheduler tick panicked"),
                Ok(Ok(())) => {}
            }
        }
    });
    axum::serve(listener, router(state).into_make_service_with_connect_info::<SocketAddr>())
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    background.abort();
    Ok(())
}
