//! HTTP endpoints over a shared testbed. Field tables are in
//! `docs/endpoints.md`.

use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use axum::body::{Body, Bytes};
use axum::extract::{Path, Query as UrlQuery, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use citytb_asi::{write_csv, AsiError, Grid, HistoryQuery};
use citytb_bus::{tags, AuditEntry};
use citytb_core::{NodeImage, SimTime, Urn};
use citytb_exp::{ControllerEvent, Direction, ExpError, TraceEntry};
use citytb_rd::{doc, Change, Notification, Query, RdError, Update};
use serde::{Deserialize, Serialize};

use crate::bed::{parse_instant, Testbed};
use crate::error::TestbedError;
use crate::ops::{parse_fault, parse_mode};

pub type Shared = Arc<Mutex<Testbed>>;

/// Every route with the CLI command that reaches it.
pub const ENDPOINTS: &[(&str, &str, &str)] = &[
    ("GET", "/admin/health", "health"),
    ("GET", "/admin/resources-summary", "resources summary"),
    ("GET", "/admin/timeouts", "timeouts"),
    ("POST", "/admin/timeouts", "timeouts"),
    ("GET", "/admin/events", "events"),
    ("POST", "/admin/faults", "fault inject"),
    ("GET", "/rd/resources", "resources list"),
    ("POST", "/rd/resources", "resources put"),
    ("GET", "/rd/resources/{urn}", "resources get"),
    ("PUT", "/rd/resources/{urn}", "resources update"),
    ("DELETE", "/rd/resources/{urn}", "resources delete"),
    ("POST", "/rd/subscriptions", "resources watch"),
    ("GET", "/rd/subscriptions/{id}", "resources watch"),
    ("POST", "/rs/reservations", "reserve"),
    ("POST", "/rs/reservations/{id}/cancel", "cancel"),
    ("GET", "/rs/availability", "availability"),
    ("GET", "/rs/nodes", "nodes"),
    ("POST", "/rs/sessions", "session open"),
    ("POST", "/rs/sessions/{id}/send", "session send"),
    ("POST", "/rs/sessions/{id}/flash", "session flash"),
    ("POST", "/rs/sessions/{id}/reset", "session reset"),
    ("GET", "/rs/sessions/{id}/trace", "session trace"),
    ("GET", "/rs/sessions/{id}/events", "session events"),
    ("GET", "/asi/observations", "asi query"),
    ("POST", "/asi/subscriptions", "asi subscribe"),
    ("GET", "/asi/subscriptions/{id}", "asi subscribe"),
    ("GET", "/asi/heatmap", "asi heatmap"),
];

/// Header carrying the reservation key on session-scoped calls.
pub const KEY_HEADER: &str = "x-reservation-key";

const POLL: Duration = Duration::from_millis(200);

pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    detail: String,
}

#[derive(Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub detail: String,
}

impl From<TestbedError> for ApiError {
    fn from(e: TestbedError) -> Self {
        use StatusCode as S;
        let status = match &e {
            TestbedError::Exp(x) => match x {
                ExpError::Unauthorized => S::UNAUTHORIZED,
                ExpError::Conflict { .. } => S::CONFLICT,
                ExpError::UnknownUrn(_) | ExpError::UnknownReservation(_) | ExpError::UnknownSession(_) => {
                    S::NOT_FOUND
                }
                ExpError::NotReservable(_) => S::UNPROCESSABLE_ENTITY,
                ExpError::NotOwner | ExpError::InvalidKey | ExpError::NotInReservation(_) => S::FORBIDDEN,
                ExpError::NotStartedYet(_) => S::TOO_EARLY,
                ExpError::Expired => S::GONE,
                ExpError::NodeUnreachable(_) | ExpError::PartialFailure(_) => S::BAD_GATEWAY,
                ExpError::ImageTooLarge { .. } => S::PAYLOAD_TOO_LARGE,
                ExpError::Overlay(_) => S::INTERNAL_SERVER_ERROR,
                _ => S::BAD_REQUEST,
            },
            TestbedError::Rd(x) => match x {
                RdError::Validation(_) => S::UNPROCESSABLE_ENTITY,
                RdError::Conflict { .. } => S::CONFLICT,
                RdError::NotFound(_) => S::NOT_FOUND,
                RdError::BadQuery(_) | RdError::Doc(_) => S::BAD_REQUEST,
                RdError::Io(_) => S::INTERNAL_SERVER_ERROR,
            },
            TestbedError::Asi(x) => match x {
                AsiError::NotServiceRegistered(_) => S::FORBIDDEN,
                AsiError::OutOfOrder { .. } => S::CONFLICT,
                AsiError::BadFilter(_) => S::BAD_REQUEST,
                AsiError::NoData(_) => S::NOT_FOUND,
                AsiError::Io(_) => S::INTERNAL_SERVER_ERROR,
            },
            TestbedError::BadRequest(_) | TestbedError::Topology(_) => S::BAD_REQUEST,
            TestbedError::NotFound(_) => S::NOT_FOUND,
            TestbedError::Bus(_) | TestbedError::NotReady { .. } => S::SERVICE_UNAVAILABLE,
            TestbedError::Io(_) => S::INTERNAL_SERVER_ERROR,
        };
        ApiError {
            status,
            kind: e.kind(),
            detail: e.to_string(),
        }
    }
}

impl From<ExpError> for ApiError {
    fn from(e: ExpError) -> Self {
        TestbedError::from(e).into()
    }
}

impl From<RdError> for ApiError {
    fn from(e: RdError) -> Self {
        TestbedError::from(e).into()
    }
}

impl From<AsiError> for ApiError {
    fn from(e: AsiError) -> Self {
        TestbedError::from(e).into()
    }
}

fn bad(msg: impl Into<String>) -> ApiError {
    TestbedError::BadRequest(msg.into()).into()
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.kind.to_string(),
            detail: self.detail,
        };
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn lock(s: &Shared) -> MutexGuard<'_, Testbed> {
    s.lock().unwrap_or_else(|p| p.into_inner())
}

fn ndjson<T: Serialize>(items: &[T]) -> Response {
    let mut out = String::new();
    for i in items {
        out.push_str(&serde_json::to_string(i).expect("serializable"));
        out.push('\n');
    }
    ([(header::CONTENT_TYPE, "application/x-ndjson")], out).into_response()
}

fn text(body: String) -> Response {
    ([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], body).into_response()
}

fn pairs(q: &[(String, String)]) -> impl Iterator<Item = (&str, &str)> {
    q.iter().map(|(k, v)| (k.as_str(), v.as_str()))
}

fn get_pair<'a>(q: &'a [(String, String)], key: &str) -> Option<&'a str> {
    q.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

pub fn router(shared: Shared) -> Router {
    Router::new()
        .route("/admin/health", get(health))
        .route("/admin/resources-summary", get(summary))
        .route("/admin/timeouts", post(set_timeouts).get(get_timeouts))
        .route("/admin/events", get(admin_events))
        .route("/admin/faults", post(inject_fault))
        .route("/rd/resources", get(rd_list).post(rd_register))
        .route("/rd/resources/{urn}", get(rd_get).put(rd_update).delete(rd_delete))
        .route("/rd/subscriptions", post(rd_subscribe))
        .route("/rd/subscriptions/{id}", get(rd_poll))
        .route("/rs/reservations", post(reserve))
        .route("/rs/reservations/{id}/cancel", post(cancel))
        .route("/rs/availability", get(availability))
        .route("/rs/nodes", get(nodes))
        .route("/rs/sessions", post(open_session))
        .route("/rs/sessions/{id}/send", post(send))
        .route("/rs/sessions/{id}/flash", post(flash))
        .route("/rs/sessions/{id}/reset", post(reset))
        .route("/rs/sessions/{id}/trace", get(trace))
        .route("/rs/sessions/{id}/events", get(controller_events))
        .route("/asi/observations", get(observations))
        .route("/asi/subscriptions", post(asi_subscribe))
        .route("/asi/subscriptions/{id}", get(asi_poll))
        .route("/asi/heatmap", get(heatmap))
        .with_state(shared)
}

// --- admin ---

#[derive(Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub now: SimTime,
    pub devices: usize,
    pub registered: usize,
    pub bus_available: bool,
}

async fn health(State(s): State<Shared>) -> Json<Health> {
    let bed = lock(&s);
    Json(Health {
        status: "ok".into(),
        now: bed.now(),
        devices: bed.device_count(),
        registered: bed.portal.rd().len(),
        bus_available: bed.broker.is_available(),
    })
}

async fn summary(State(s): State<Shared>) -> Response {
    ndjson(&lock(&s).summary())
}

#[derive(Deserialize)]
struct TimeoutPatch {
    invalidation_ms: Option<u64>,
    deletion_ms: Option<u64>,
    configurator_ms: Option<u64>,
}

async fn get_timeouts(State(s): State<Shared>) -> Json<citytb_mgmt::Timeouts> {
    Json(lock(&s).portal.timeouts())
}

async fn set_timeouts(State(s): State<Shared>, Json(p): Json<TimeoutPatch>) -> ApiResult<Json<citytb_mgmt::Timeouts>> {
    let mut bed = lock(&s);
    let mut t = bed.portal.timeouts();
    for (slot, v) in [
        (&mut t.invalidation_ms, p.invalidation_ms),
        (&mut t.deletion_ms, p.deletion_ms),
        (&mut t.configurator_ms, p.configurator_ms),
    ] {
        if let Some(v) = v {
            if v == 0 {
                return Err(bad("timeouts must be positive"));
            }
            *slot = v;
        }
    }
    bed.set_timeouts(t);
    tracing::info!(?t, "timeouts updated");
    Ok(Json(t))
}

/// One bus event as shown on the admin feed. Descriptions are left out.
#[derive(Serialize, Deserialize)]
pub struct FeedEvent {
    pub seq: u64,
    pub topic: String,
    pub event_type: String,
    pub correlation_id: String,
    pub at: SimTime,
    pub urn: Option<String>,
    pub gateway: Option<String>,
    pub ok: Option<bool>,
    pub cause: Option<String>,
}

impl From<&AuditEntry> for FeedEvent {
    fn from(e: &AuditEntry) -> Self {
        let p = &e.event.payload;
        let s = |t| p.str(t).map(str::to_string);
        FeedEvent {
            seq: e.global_seq,
            topic: e.topic.to_string(),
            event_type: e.event.event_type.clone(),
            correlation_id: e.event.correlation_id.to_hex(),
            at: e.event.published_at,
            urn: s(tags::URN),
            gateway: s(tags::GATEWAY),
            ok: p.bool(tags::OK),
            cause: s(tags::CAUSE).filter(|c| !c.is_empty()),
        }
    }
}

async fn admin_events(State(s): State<Shared>, UrlQuery(q): UrlQuery<Vec<(String, String)>>) -> ApiResult<Response> {
    let since: u64 = match get_pair(&q, "since") {
        Some(v) => v.parse().map_err(|_| bad(format!("bad since {v:?}")))?,
        None => 0,
    };
    let bed = lock(&s);
    let feed: Vec<FeedEvent> = bed
        .broker
        .audit_log()
        .iter()
        .filter(|e| e.global_seq >= since)
        .map(FeedEvent::from)
        .collect();
    Ok(ndjson(&feed))
}

#[derive(Serialize, Deserialize)]
pub struct FaultRequest {
    pub target: String,
    pub kind: String,
    #[serde(default)]
    pub loss: Option<f64>,
}

async fn inject_fault(State(s): State<Shared>, Json(f): Json<FaultRequest>) -> ApiResult<StatusCode> {
    let kind = parse_fault(&f.kind, f.loss)?;
    lock(&s).inject_fault(&f.target, kind)?;
    Ok(StatusCode::NO_CONTENT)
}

// --- resource directory ---

fn parse_urn(bed: &Testbed, text: &str) -> ApiResult<Urn> {
    Ok(bed.resolve(text)?)
}

async fn rd_list(State(s): State<Shared>, UrlQuery(q): UrlQuery<Vec<(String, String)>>) -> ApiResult<Response> {
    let query = Query::from_pairs(pairs(&q))?;
    let bed = lock(&s);
    let docs: Vec<String> = bed.portal.rd().lookup(&query).iter().map(doc::encode).collect();
    Ok(text(docs.join("\n")))
}

async fn rd_get(State(s): State<Shared>, Path(urn): Path<String>) -> ApiResult<Response> {
    let bed = lock(&s);
    let urn = parse_urn(&bed, &urn)?;
    let d = bed.portal.rd().get(&urn).ok_or(RdError::NotFound(urn))?;
    Ok(text(doc::encode(d)))
}

async fn rd_register(State(s): State<Shared>, body: String) -> ApiResult<Response> {
    let d = doc::decode(&body).map_err(RdError::from)?;
    let mut bed = lock(&s);
    let r = bed.portal.rd_mut().register(d)?;
    let status = if r.created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, [(header::LOCATION, r.uri.clone())], r.uri).into_response())
}

async fn rd_update(State(s): State<Shared>, Path(urn): Path<String>, body: String) -> ApiResult<StatusCode> {
    let update = Update::decode(&body).map_err(RdError::from)?;
    let mut bed = lock(&s);
    let urn = parse_urn(&bed, &urn)?;
    bed.portal.rd_mut().update(&urn, &update)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn rd_delete(State(s): State<Shared>, Path(urn): Path<String>) -> ApiResult<StatusCode> {
    let mut bed = lock(&s);
    let urn = parse_urn(&bed, &urn)?;
    bed.portal.rd_mut().delete(&urn)?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Serialize, Deserialize)]
pub struct Created {
    pub id: u64,
}

fn form_pairs(body: &str) -> Vec<(String, String)> {
    body.split(['&', '\n'])
        .filter(|p| !p.trim().is_empty())
        .map(|p| match p.split_once('=') {
            Some((k, v)) => (k.trim().to_string(), v.trim().to_string()),
            None => (p.trim().to_string(), String::new()),
        })
        .collect()
}

async fn rd_subscribe(State(s): State<Shared>, body: String) -> ApiResult<Json<Created>> {
    let q = form_pairs(&body);
    let query = Query::from_pairs(pairs(&q))?;
    let id = lock(&s).subscribe_rd(query);
    Ok(Json(Created { id }))
}

#[derive(Serialize, Deserialize)]
pub struct ChangeLine {
    pub subscription: u64,
    pub change: String,
    pub urn: Urn,
}

impl From<Notification> for ChangeLine {
    fn from(n: Notification) -> Self {
        let change = match n.change {
            Change::Appeared => "appeared",
            Change::Disappeared => "disappeared",
        };
        ChangeLine {
            subscription: n.subscription,
            change: change.into(),
            urn: n.urn,
        }
    }
}

async fn rd_poll(State(s): State<Shared>, Path(id): Path<u64>) -> ApiResult<Response> {
    let got = lock(&s)
        .poll_rd(id)
        .ok_or_else(|| TestbedError::NotFound(format!("subscription {id}")))?;
    let lines: Vec<ChangeLine> = got.into_iter().map(ChangeLine::from).collect();
    Ok(ndjson(&lines))
}

// --- reservations and sessions ---

#[derive(Serialize, Deserialize)]
pub struct ReserveRequest {
    pub user: String,
    pub credential: String,
    pub urns: Vec<String>,
    /// `+30s` relative to now, or a duration since the start of the run.
    #[serde(default = "plus_zero")]
    pub from: String,
    pub dur: String,
}

fn plus_zero() -> String {
    "+0s".into()
}

fn duration(text: &str) -> ApiResult<Duration> {
    citytb_core::parse_duration(text).map_err(|e| bad(format!("bad duration {text:?}: {e}")))
}

async fn reserve(State(s): State<Shared>, Json(r): Json<ReserveRequest>) -> ApiResult<Response> {
    let dur = duration(&r.dur)?;
    let g = lock(&s).reserve(&r.user, &r.credential, &r.urns, &r.from, dur)?;
    Ok((StatusCode::CREATED, Json(g)).into_response())
}

#[derive(Serialize, Deserialize)]
pub struct CancelRequest {
    pub user: String,
    pub credential: String,
}

async fn cancel(State(s): State<Shared>, Path(id): Path<u64>, Json(r): Json<CancelRequest>) -> ApiResult<StatusCode> {
    lock(&s).cancel(&r.user, &r.credential, id)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn availability(State(s): State<Shared>, UrlQuery(q): UrlQuery<Vec<(String, String)>>) -> ApiResult<Response> {
    let bed = lock(&s);
    let now = bed.now();
    let from = parse_instant(get_pair(&q, "from").unwrap_or("+0s"), now)?;
    let to = match get_pair(&q, "to") {
        Some(t) => parse_instant(t, now)?,
        None => from + Duration::from_secs(24 * 3600),
    };
    if to < from {
        return Err(bad("to is before from"));
    }
    Ok(ndjson(&bed.availability(from, to)))
}

async fn nodes(State(s): State<Shared>) -> Response {
    Json(lock(&s).node_set()).into_response()
}

#[derive(Serialize, Deserialize)]
pub struct OpenRequest {
    pub key: String,
    #[serde(default)]
    pub controller_url: Option<String>,
}

#[derive(Serialize, Deserialize)]
pub struct Opened {
    pub session: u32,
    pub endpoint: String,
}

async fn open_session(State(s): State<Shared>, Json(r): Json<OpenRequest>) -> ApiResult<Response> {
    let mut bed = lock(&s);
    let id = bed.open_session(&r.key, r.controller_url)?;
    let endpoint = format!("/rs{}", bed.runtime.session(id).expect("just opened").endpoint());
    Ok((StatusCode::CREATED, Json(Opened { session: id, endpoint })).into_response())
}

fn key_of(h: &HeaderMap) -> ApiResult<String> {
    h.get(KEY_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::to_string)
        .ok_or_else(|| ExpError::Unauthorized.into())
}

#[derive(Serialize, Deserialize)]
pub struct SendRequest {
    pub urn: String,
    #[serde(default)]
    pub payload: Option<String>,
    #[serde(default)]
    pub payload_hex: Option<String>,
}

async fn send(
    State(s): State<Shared>,
    Path(id): Path<u32>,
    headers: HeaderMap,
    Json(r): Json<SendRequest>,
) -> ApiResult<StatusCode> {
    let bytes = match (r.payload, r.payload_hex) {
        (Some(p), None) => p.into_bytes(),
        (None, Some(h)) => hex::decode(&h).map_err(|e| bad(format!("payload_hex: {e}")))?,
        _ => return Err(bad("give exactly one of payload and payload_hex")),
    };
    let mut bed = lock(&s);
    bed.authorize(id, &key_of(&headers)?)?;
    bed.send(id, &r.urn, &bytes)?;
    Ok(StatusCode::ACCEPTED)
}

#[derive(Serialize, Deserialize)]
pub struct ResetRequest {
    pub urn: String,
}

async fn reset(
    State(s): State<Shared>,
    Path(id): Path<u32>,
    headers: HeaderMap,
    Json(r): Json<ResetRequest>,
) -> ApiResult<StatusCode> {
    let mut bed = lock(&s);
    bed.authorize(id, &key_of(&headers)?)?;
    bed.reset(id, &r.urn)?;
    Ok(StatusCode::ACCEPTED)
}

async fn flash(
    State(s): State<Shared>,
    Path(id): Path<u32>,
    UrlQuery(q): UrlQuery<Vec<(String, String)>>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let behavior = get_pair(&q, "behavior").ok_or_else(|| bad("behavior is required"))?;
    let mode = parse_mode(get_pair(&q, "mode").unwrap_or("broadcast"))?;
    let targets: Vec<String> = get_pair(&q, "targets")
        .map(|t| t.split(',').filter(|s| !s.is_empty()).map(str::to_string).collect())
        .unwrap_or_default();
    let version: u32 = match get_pair(&q, "version") {
        Some(v) => v.parse().map_err(|_| bad(format!("bad version {v:?}")))?,
        None => 1,
    };
    let image_id = get_pair(&q, "image_id").unwrap_or("image");
    let image = NodeImage::new(image_id, version, behavior, body.to_vec());
    let mut bed = lock(&s);
    bed.authorize(id, &key_of(&headers)?)?;
    Ok(Json(bed.flash(id, mode, &targets, &image)?).into_response())
}

/// A trace or controller line with the payload both as text and as hex.
#[derive(Serialize, Deserialize)]
pub struct TraceLine {
    pub at: SimTime,
    pub direction: String,
    pub urn: Option<Urn>,
    pub text: String,
    pub hex: String,
}

impl From<&TraceEntry> for TraceLine {
    fn from(e: &TraceEntry) -> Self {
        let direction = match e.direction {
            Direction::Down => "down",
            Direction::Up => "up",
            Direction::Status => "status",
        };
        TraceLine {
            at: e.at,
            direction: direction.into(),
            urn: e.urn.clone(),
            text: String::from_utf8_lossy(&e.payload).into_owned(),
            hex: hex::encode(&e.payload),
        }
    }
}

impl From<&ControllerEvent> for TraceLine {
    fn from(e: &ControllerEvent) -> Self {
        match e {
            ControllerEvent::Output { at, source, payload } => TraceLine {
                at: *at,
                direction: "up".into(),
                urn: Some(source.clone()),
                text: String::from_utf8_lossy(payload).into_owned(),
                hex: hex::encode(payload),
            },
            ControllerEvent::Status { at, urn, message } => TraceLine {
                at: *at,
                direction: "status".into(),
                urn: urn.clone(),
                text: message.clone(),
                hex: hex::encode(message.as_bytes()),
            },
        }
    }
}

#[derive(Clone, Copy)]
enum Feed {
    Trace,
    Controller,
}

/// Lines from position `since` on, and whether the session is closed.
fn read_feed(s: &Shared, id: u32, feed: Feed, since: usize) -> ApiResult<(Vec<String>, bool)> {
    let mut bed = lock(s);
    let closed = bed
        .runtime
        .session(id)
        .map(|x| x.closed)
        .ok_or(ExpError::UnknownSession(id))?;
    let lines: Vec<TraceLine> = match feed {
        Feed::Trace => {
            let sess = bed.runtime.session(id).expect("checked");
            sess.trace.get(since..).unwrap_or_default().iter().map(TraceLine::from).collect()
        }
        Feed::Controller => bed.controller_events(id, since).iter().map(TraceLine::from).collect(),
    };
    let lines = lines
        .iter()
        .map(|l| serde_json::to_string(l).expect("serializable") + "\n")
        .collect();
    Ok((lines, closed))
}

async fn stream_feed(
    s: Shared,
    id: u32,
    headers: HeaderMap,
    q: Vec<(String, String)>,
    feed: Feed,
) -> ApiResult<Response> {
    lock(&s).authorize(id, &key_of(&headers)?)?;
    let since: usize = match get_pair(&q, "since") {
        Some(v) => v.parse().map_err(|_| bad(format!("bad since {v:?}")))?,
        None => 0,
    };
    let follow = matches!(get_pair(&q, "follow"), Some("1" | "true"));
    let (first, closed) = read_feed(&s, id, feed, since)?;
    if !follow || closed {
        return Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], first.concat()).into_response());
    }
    // Server push: keep the response open and flush new lines as they
    // appear, until the session closes or the client goes away.
    let start = since + first.len();
    let stream = futures::stream::unfold((s, start, Some(first), false), move |(s, pos, pending, done)| async move {
        if let Some(p) = pending {
            return Some((Ok::<_, std::io::Error>(p.concat()), (s, pos, None, false)));
        }
        if done {
            return None;
        }
        loop {
            tokio::time::sleep(POLL).await;
            let Ok((lines, closed)) = read_feed(&s, id, feed, pos) else { return None };
            if !lines.is_empty() || closed {
                let n = lines.len();
                return Some((Ok(lines.concat()), (s, pos + n, None, closed)));
            }
        }
    });
    Ok((
        [(header::CONTENT_TYPE, "application/x-ndjson")],
        Body::from_stream(stream),
    )
        .into_response())
}

async fn trace(
    State(s): State<Shared>,
    Path(id): Path<u32>,
    headers: HeaderMap,
    UrlQuery(q): UrlQuery<Vec<(String, String)>>,
) -> ApiResult<Response> {
    stream_feed(s, id, headers, q, Feed::Trace).await
}

async fn controller_events(
    State(s): State<Shared>,
    Path(id): Path<u32>,
    headers: HeaderMap,
    UrlQuery(q): UrlQuery<Vec<(String, String)>>,
) -> ApiResult<Response> {
    stream_feed(s, id, headers, q, Feed::Controller).await
}

// --- application support ---

async fn observations(State(s): State<Shared>, UrlQuery(q): UrlQuery<Vec<(String, String)>>) -> ApiResult<Response> {
    let csv = get_pair(&q, "format") == Some("csv");
    let hq = HistoryQuery::from_pairs(pairs(&q).filter(|(k, _)| *k != "format"))?;
    let series = lock(&s).store.query_history(&hq)?;
    if csv {
        let mut out = Vec::new();
        write_csv(&series, &mut out).map_err(|e| bad(format!("csv: {e}")))?;
        return Ok(([(header::CONTENT_TYPE, "text/csv")], out).into_response());
    }
    Ok(Json(series).into_response())
}

async fn asi_subscribe(State(s): State<Shared>, body: String) -> ApiResult<Json<Created>> {
    let q = form_pairs(&body);
    let hq = HistoryQuery::from_pairs(pairs(&q))?;
    let id = lock(&s).subscribe_asi(hq.filter);
    Ok(Json(Created { id }))
}

async fn asi_poll(State(s): State<Shared>, Path(id): Path<u64>) -> ApiResult<Response> {
    let got = lock(&s)
        .poll_asi(id)
        .ok_or_else(|| TestbedError::NotFound(format!("subscription {id}")))?;
    Ok(ndjson(&got))
}

async fn heatmap(State(s): State<Shared>, UrlQuery(q): UrlQuery<Vec<(String, String)>>) -> ApiResult<Response> {
    let phen = get_pair(&q, "phenomenon").ok_or_else(|| bad("phenomenon is required"))?;
    let bbox = get_pair(&q, "bbox").ok_or_else(|| bad("bbox is required"))?;
    let grid = Grid::parse(bbox, get_pair(&q, "cells").unwrap_or("10x10"))?;
    let bed = lock(&s);
    let at = match get_pair(&q, "at") {
        Some(t) => parse_instant(t, bed.now())?,
        None => bed.now(),
    };
    Ok(Json(bed.store.heatmap(phen, grid, at)?).into_response())
}
