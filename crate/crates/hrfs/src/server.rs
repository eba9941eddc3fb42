//! Network front ends for a [`Board`]: the NDJSON stream protocol over TCP
//! and an HTTP facade with a server-sent event stream for browser clients.
//!
//! Both run on a private tokio runtime in a background thread so that
//! synchronous callers (the simulator, tests) can host a server without
//! becoming async themselves.

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::io;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::{Deserialize, Serialize};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, oneshot};

use crate::board::{AgentKind, Board, ClaimOutcome, Event, Profile, Session, UpdateRequest};
use crate::error::HrfsError;
use crate::task::{Payload, Preference, TaskFilter, TaskSpec, TaskStatus};
use crate::wire::{
    ClaimBody, ClaimReply, Envelope, ErrorBody, JoinBody, JoinReply, MsgType, PingReply, PostBody,
    SnapshotBody, SubscribeBody, SubscribeReply, UpdateBody,
};

#[derive(Debug, Clone, Default)]
pub struct ServerConfig {
    /// Address for the NDJSON stream protocol.
    pub tcp: Option<SocketAddr>,
    /// Address for the HTTP facade.
    pub http: Option<SocketAddr>,
    /// How often to sweep expired sessions. `None` leaves it to the owner.
    pub reap_every: Option<Duration>,
}

/// A running server. Dropping it stops both listeners and closes every
/// open connection.
pub struct Server {
    tcp_addr: Option<SocketAddr>,
    http_addr: Option<SocketAddr>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl Server {
    pub fn start(board: Arc<Board>, config: ServerConfig) -> io::Result<Server> {
        let tcp = config.tcp.map(std::net::TcpListener::bind).transpose()?;
        let http = config.http.map(std::net::TcpListener::bind).transpose()?;
        let tcp_addr = tcp.as_ref().map(|l| l.local_addr()).transpose()?;
        let http_addr = http.as_ref().map(|l| l.local_addr()).transpose()?;
        for l in tcp.iter().chain(http.iter()) {
            l.set_nonblocking(true)?;
        }
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        let (stop_tx, stop_rx) = oneshot::channel::<()>();
        let thread = std::thread::Builder::new()
            .name("hrfs-server".into())
            .spawn(move || {
                runtime.block_on(run(board, tcp, http, config.reap_every, stop_rx));
                runtime.shutdown_background();
            })?;
        Ok(Server {
            tcp_addr,
            http_addr,
            shutdown: Some(stop_tx),
            thread: Some(thread),
        })
    }

    pub fn tcp_addr(&self) -> Option<SocketAddr> {
        self.tcp_addr
    }

    pub fn http_addr(&self) -> Option<SocketAddr> {
        self.http_addr
    }

    pub fn stop(mut self) {
        self.halt();
    }

    fn halt(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.halt();
    }
}

async fn run(
    board: Arc<Board>,
    tcp: Option<std::net::TcpListener>,
    http: Option<std::net::TcpListener>,
    reap_every: Option<Duration>,
    stop: oneshot::Receiver<()>,
) {
    let tcp_task = {
        let board = board.clone();
        async move {
            match tcp.map(TcpListener::from_std) {
                Some(Ok(l)) => accept_loop(board, l).await,
                Some(Err(e)) => log::error!("tcp listener: {e}"),
                None => futures::future::pending().await,
            }
        }
    };
    let http_task = {
        let board = board.clone();
        async move {
            match http.map(TcpListener::from_std) {
                Some(Ok(l)) => {
                    if let Err(e) = axum::serve(l, router(board)).await {
                        log::error!("http server: {e}");
                    }
                }
                Some(Err(e)) => log::error!("http listener: {e}"),
                None => futures::future::pending().await,
            }
        }
    };
    let reaper = {
        let board = board.clone();
        async move {
            let Some(every) = reap_every else {
                return futures::future::pending().await;
            };
            let mut tick = tokio::time::interval(every);
            loop {
                tick.tick().await;
                for agent in board.expire_sessions() {
                    log::info!("session expired: {agent}");
                }
            }
        }
    };
    tokio::select! {
        _ = tcp_task => {}
        _ = http_task => {}
        _ = reaper => {}
        _ = stop => {}
    }
}

async fn accept_loop(board: Arc<Board>, listener: TcpListener) {
    loop {
        match listener.accept().await {
            Ok((stream, peer)) => {
                log::debug!("connection from {peer}");
                tokio::spawn(serve_connection(board.clone(), stream));
            }
            Err(e) => {
                log::warn!("accept failed: {e}");
                tokio::time::sleep(Duration::from_millis(50)).await;
            }
        }
    }
}

struct Connection {
    session: Option<Session>,
    subscriptions: Vec<u64>,
    out: mpsc::UnboundedSender<String>,
}

async fn serve_connection(board: Arc<Board>, stream: TcpStream) {
    let _ = stream.set_nodelay(true);
    let (rd, mut wr) = stream.into_split();
    let (tx, mut rx) = mpsc::unbounded_channel::<String>();
    let writer = tokio::spawn(async move {
        while let Some(line) = rx.recv().await {
            if wr.write_all(line.as_bytes()).await.is_err() {
                break;
            }
        }
    });
    let mut conn = Connection {
        session: None,
        subscriptions: Vec::new(),
        out: tx,
    };
    let mut lines = BufReader::new(rd).lines();
    while let Ok(Some(line)) = lines.next_line().await {
        if line.trim().is_empty() {
            continue;
        }
        let reply = match Envelope::parse(&line) {
            Ok(env) => {
                let rid = env.request_id;
                dispatch(&board, &mut conn, env).unwrap_or_else(|e| Envelope::error(rid, &e))
            }
            Err(e) => Envelope::error(None, &e),
        };
        if conn.out.send(reply.to_line()).is_err() {
            break;
        }
    }
    for id in conn.subscriptions.drain(..) {
        board.unsubscribe(id);
    }
    drop(conn);
    let _ = writer.await;
}

fn dispatch(board: &Board, conn: &mut Connection, env: Envelope) -> Result<Envelope, HrfsError> {
    let rid = env.request_id;
    if env.kind == MsgType::Join {
        let body: JoinBody = env.body_as()?;
        let (session, snapshot) = match body.token {
            Some(token) => {
                let session = Session {
                    agent_id: body.agent_id,
                    kind: body.kind,
                    token,
                };
                let snapshot = board.resume(&session)?;
                (session, snapshot)
            }
            None => board.join(Profile::new(body.agent_id, body.kind))?,
        };
        conn.session = Some(session.clone());
        return Ok(Envelope::new(MsgType::Snapshot, rid, JoinReply { session, snapshot }));
    }
    if env.kind == MsgType::Ping {
        if let Some(s) = &conn.session {
            board.heartbeat(s)?;
        }
        return Ok(Envelope::new(MsgType::Ping, rid, PingReply { now: board.now() }));
    }
    let session = conn
        .session
        .clone()
        .ok_or_else(|| HrfsError::InvalidSession("<not joined>".into()))?;
    match env.kind {
        MsgType::Post => {
            let body: PostBody = env.body_as()?;
            let task = board.post_task(&session, body.spec)?;
            Ok(Envelope::new(MsgType::Post, rid, task))
        }
        MsgType::Claim => {
            let body: ClaimBody = env.body_as()?;
            let outcome =
                board.claim_task(&session, &body.task_id, body.expected_version, body.override_preference)?;
            Ok(Envelope::new(MsgType::Claim, rid, claim_reply(outcome)))
        }
        MsgType::Update => {
            let body: UpdateBody = env.body_as()?;
            let task = board.update_task(&session, &body.task_id, body.update)?;
            Ok(Envelope::new(MsgType::Update, rid, task))
        }
        MsgType::Subscribe => {
            let body: SubscribeBody = env.body_as()?;
            let out = conn.out.clone();
            let id = board.subscribe_with(&session, body.filter, body.cursor, move |e| {
                out.send(Envelope::event(e).to_line()).is_ok()
            })?;
            conn.subscriptions.push(id);
            Ok(Envelope::new(MsgType::Subscribe, rid, SubscribeReply { subscription: id }))
        }
        MsgType::Snapshot => {
            let body: SnapshotBody = env.body_as()?;
            board.heartbeat(&session)?;
            Ok(Envelope::new(MsgType::Snapshot, rid, board.snapshot(&body.filter)))
        }
        MsgType::Event | MsgType::Error | MsgType::Join | MsgType::Ping => Err(HrfsError::Malformed(format!(
            "{:?} is not a request",
            env.kind
        ))),
    }
}

fn claim_reply(outcome: ClaimOutcome) -> ClaimReply {
    match outcome {
        ClaimOutcome::Ok(task) => ClaimReply {
            outcome: "ok".into(),
            task,
        },
        ClaimOutcome::Conflict(task) => ClaimReply {
            outcome: "conflict".into(),
            task,
        },
    }
}

// HTTP facade

struct ApiError(HrfsError);

impl From<HrfsError> for ApiError {
    fn from(e: HrfsError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            HrfsError::AlreadyJoined(_) | HrfsError::Rejected { .. } => StatusCode::CONFLICT,
            HrfsError::InvalidSession(_) => StatusCode::UNAUTHORIZED,
            HrfsError::UnknownTask(_) => StatusCode::NOT_FOUND,
            HrfsError::Malformed(_) => StatusCode::BAD_REQUEST,
            HrfsError::Unreachable => StatusCode::SERVICE_UNAVAILABLE,
        };
        let task = match &self.0 {
            HrfsError::Rejected { task, .. } => Some((**task).clone()),
            _ => None,
        };
        let body = ErrorBody {
            code: self.0.code().to_string(),
            message: self.0.to_string(),
            task,
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Session credentials come from `x-agent-id`/`x-session-token` headers or,
/// for clients that cannot set headers, `agent_id`/`token` query parameters.
fn session_from(board: &Board, headers: &HeaderMap, query: &BTreeMap<String, String>) -> Result<Session, HrfsError> {
    let header_str = |name: &str| headers.get(name).and_then(|v| v.to_str().ok()).map(str::to_string);
    let agent_id = header_str("x-agent-id")
        .or_else(|| query.get("agent_id").cloned())
        .ok_or_else(|| HrfsError::InvalidSession("<anonymous>".into()))?;
    let token = header_str("x-session-token")
        .or_else(|| query.get("token").cloned())
        .and_then(|t| t.parse::<u64>().ok())
        .ok_or_else(|| HrfsError::InvalidSession(agent_id.clone()))?;
    let kind = header_str("x-agent-kind")
        .or_else(|| query.get("kind").cloned())
        .and_then(|k| serde_json::from_value::<AgentKind>(serde_json::Value::String(k)).ok())
        .unwrap_or(AgentKind::Console);
    let session = Session { agent_id, kind, token };
    board.heartbeat(&session)?;
    Ok(session)
}

fn list<T: std::str::FromStr>(raw: Option<&String>) -> Result<Option<Vec<T>>, HrfsError>
where
    T::Err: std::fmt::Display,
{
    raw.map(|s| {
        s.split(',')
            .filter(|p| !p.is_empty())
            .map(|p| p.parse::<T>().map_err(|e| HrfsError::Malformed(e.to_string())))
            .collect()
    })
    .transpose()
}

fn filter_from(query: &BTreeMap<String, String>) -> Result<TaskFilter, HrfsError> {
    Ok(TaskFilter {
        preference: list::<Preference>(query.get("preference"))?,
        status: list::<TaskStatus>(query.get("status"))?,
        poster: query.get("poster").cloned(),
        task_id: query.get("task_id").cloned(),
    })
}

fn parse_body<T: for<'de> Deserialize<'de> + Default>(bytes: &Bytes) -> Result<T, HrfsError> {
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(bytes).map_err(|e| HrfsError::Malformed(e.to_string()))
}

pub fn router(board: Arc<Board>) -> Router {
    Router::new()
        .route("/join", post(http_join))
        .route("/heartbeat", post(http_heartbeat))
        .route("/tasks", get(http_list).post(http_post))
        .route("/tasks/{id}", get(http_get).patch(http_patch))
        .route("/tasks/{id}/claim", post(http_claim))
        .route("/tasks/{id}/start", post(http_start))
        .route("/tasks/{id}/complete", post(http_complete))
        .route("/tasks/{id}/return", post(http_return))
        .route("/tasks/{id}/fail", post(http_fail))
        .route("/events", get(http_events))
        .layer(middleware::from_fn(cors))
        .with_state(board)
}

async fn cors(req: Request, next: Next) -> Response {
    let preflight = req.method() == Method::OPTIONS;
    let mut resp = if preflight {
        StatusCode::NO_CONTENT.into_response()
    } else {
        next.run(req).await
    };
    let h = resp.headers_mut();
    h.insert(header::ACCESS_CONTROL_ALLOW_ORIGIN, HeaderValue::from_static("*"));
    h.insert(
        header::ACCESS_CONTROL_ALLOW_HEADERS,
        HeaderValue::from_static("content-type, x-agent-id, x-session-token, x-agent-kind, last-event-id"),
    );
    h.insert(
        header::ACCESS_CONTROL_ALLOW_METHODS,
        HeaderValue::from_static("GET, POST, PATCH, OPTIONS"),
    );
    resp
}

async fn http_join(State(board): State<Arc<Board>>, Json(body): Json<JoinBody>) -> ApiResult<Json<JoinReply>> {
    let (session, snapshot) = match body.token {
        Some(token) => {
            let session = Session {
                agent_id: body.agent_id,
                kind: body.kind,
                token,
            };
            let snapshot = board.resume(&session)?;
            (session, snapshot)
        }
        None => board.join(Profile::new(body.agent_id, body.kind))?,
    };
    Ok(Json(JoinReply { session, snapshot }))
}

async fn http_heartbeat(
    State(board): State<Arc<Board>>,
    headers: HeaderMap,
    Query(q): Query<BTreeMap<String, String>>,
) -> ApiResult<Json<PingReply>> {
    session_from(&board, &headers, &q)?;
    Ok(Json(PingReply { now: board.now() }))
}

async fn http_list(
    State(board): State<Arc<Board>>,
    headers: HeaderMap,
    Query(q): Query<BTreeMap<String, String>>,
) -> ApiResult<impl IntoResponse> {
    session_from(&board, &headers, &q)?;
    Ok(Json(board.snapshot(&filter_from(&q)?)))
}

async fn http_get(
    State(board): State<Arc<Board>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Query(q): Query<BTreeMap<String, String>>,
) -> ApiResult<impl IntoResponse> {
    session_from(&board, &headers, &q)?;
    Ok(Json(board.task(&id).ok_or(HrfsError::UnknownTask(id))?))
}

async fn http_post(
    State(board): State<Arc<Board>>,
    headers: HeaderMap,
    Query(q): Query<BTreeMap<String, String>>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let session = session_from(&board, &headers, &q)?;
    let spec: TaskSpec = serde_json::from_slice(&body).map_err(|e| HrfsError::Malformed(e.to_string()))?;
    Ok((StatusCode::CREATED, Json(board.post_task(&session, spec)?)))
}

async fn http_patch(
    State(board): State<Arc<Board>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Query(q): Query<BTreeMap<String, String>>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let session = session_from(&board, &headers, &q)?;
    let update: UpdateRequest = parse_body(&body)?;
    Ok(Json(board.update_task(&session, &id, update)?))
}

#[derive(Debug, Default, Deserialize, Serialize)]
struct HttpClaim {
    #[serde(default)]
    expected_version: Option<u64>,
    #[serde(default, rename = "override")]
    override_preference: bool,
}

async fn http_claim(
    State(board): State<Arc<Board>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Query(q): Query<BTreeMap<String, String>>,
    body: Bytes,
) -> ApiResult<Response> {
    let session = session_from(&board, &headers, &q)?;
    let claim: HttpClaim = parse_body(&body)?;
    let expected = claim
        .expected_version
        .ok_or_else(|| HrfsError::Malformed("expected_version is required".into()))?;
    let outcome = board.claim_task(&session, &id, expected, claim.override_preference)?;
    let status = if outcome.is_ok() {
        StatusCode::OK
    } else {
        StatusCode::CONFLICT
    };
    Ok((status, Json(claim_reply(outcome))).into_response())
}

#[derive(Debug, Default, Deserialize)]
struct HttpTransition {
    #[serde(default)]
    payload: Option<Payload>,
    #[serde(default)]
    expected_version: Option<u64>,
}

fn transition(
    board: &Board,
    id: &str,
    headers: &HeaderMap,
    q: &BTreeMap<String, String>,
    body: &Bytes,
    to: TaskStatus,
) -> ApiResult<Json<crate::task::Task>> {
    let session = session_from(board, headers, q)?;
    let t: HttpTransition = parse_body(body)?;
    let req = UpdateRequest {
        status: Some(to),
        payload: t.payload,
        executor_preference: None,
        expected_version: t.expected_version,
    };
    Ok(Json(board.update_task(&session, id, req)?))
}

async fn http_start(
    State(board): State<Arc<Board>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Query(q): Query<BTreeMap<String, String>>,
    body: Bytes,
) -> ApiResult<Json<crate::task::Task>> {
    transition(&board, &id, &headers, &q, &body, TaskStatus::InProgress)
}

async fn http_complete(
    State(board): State<Arc<Board>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Query(q): Query<BTreeMap<String, String>>,
    body: Bytes,
) -> ApiResult<Json<crate::task::Task>> {
    transition(&board, &id, &headers, &q, &body, TaskStatus::Done)
}

async fn http_return(
    State(board): State<Arc<Board>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Query(q): Query<BTreeMap<String, String>>,
    body: Bytes,
) -> ApiResult<Json<crate::task::Task>> {
    transition(&board, &id, &headers, &q, &body, TaskStatus::Returned)
}

async fn http_fail(
    State(board): State<Arc<Board>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Query(q): Query<BTreeMap<String, String>>,
    body: Bytes,
) -> ApiResult<Json<crate::task::Task>> {
    transition(&board, &id, &headers, &q, &body, TaskStatus::Failed)
}

fn sse_event(e: &Event) -> SseEvent {
    let name = match e {
        Event::Task { .. } => "task",
        Event::Presence { .. } => "presence",
    };
    SseEvent::default()
        .id(e.seq().to_string())
        .event(name)
        .data(serde_json::to_string(e).expect("event serializes"))
}

/// Server-push stream. Resumes after `cursor` (query) or `Last-Event-ID`
/// (header), replaying what the client missed before going live.
async fn http_events(
    State(board): State<Arc<Board>>,
    headers: HeaderMap,
    Query(q): Query<BTreeMap<String, String>>,
) -> ApiResult<Sse<impl Stream<Item = Result<SseEvent, Infallible>>>> {
    let session = session_from(&board, &headers, &q)?;
    let filter = filter_from(&q)?;
    let cursor = q
        .get("cursor")
        .cloned()
        .or_else(|| {
            headers
                .get("last-event-id")
                .and_then(|v| v.to_str().ok())
                .map(str::to_string)
        })
        .map(|c| c.parse::<u64>().map_err(|e| HrfsError::Malformed(e.to_string())))
        .transpose()?;
    let (tx, rx) = mpsc::unbounded_channel::<SseEvent>();
    board.subscribe_with(&session, filter, cursor, move |e| tx.send(sse_event(e)).is_ok())?;
    let stream = futures::stream::unfold(rx, |mut rx| async move {
        rx.recv().await.map(|e| (Ok::<_, Infallible>(e), rx))
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::new().interval(Duration::from_secs(10))))
}
