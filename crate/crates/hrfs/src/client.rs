//! Blocking client for the NDJSON stream protocol.
//!
//! Events pushed by the server may arrive between a request and its reply;
//! they are buffered and handed out by [`Client::next_event`].

use std::collections::{BTreeMap, VecDeque};
use std::io::{self, BufRead, BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpStream};
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::board::{ClaimOutcome, Event, Profile, Session, Snapshot, UpdateRequest};
use crate::error::HrfsError;
use crate::task::{Task, TaskFilter, TaskSpec};
use crate::wire::{
    ClaimBody, ClaimReply, Envelope, ErrorBody, JoinBody, JoinReply, MsgType, PingReply, SnapshotBody,
    SubscribeBody, SubscribeReply, UpdateBody,
};

const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);

pub struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    next_id: u64,
    pending_events: VecDeque<Event>,
    session: Option<Session>,
    timeout: Duration,
}

fn io_err(e: io::Error) -> HrfsError {
    log::debug!("transport error: {e}");
    HrfsError::Unreachable
}

impl Client {
    pub fn connect(addr: SocketAddr) -> Result<Self, HrfsError> {
        let stream = TcpStream::connect_timeout(&addr, DEFAULT_TIMEOUT).map_err(io_err)?;
        stream.set_nodelay(true).map_err(io_err)?;
        let writer = stream.try_clone().map_err(io_err)?;
        Ok(Client {
            reader: BufReader::new(stream),
            writer,
            next_id: 1,
            pending_events: VecDeque::new(),
            session: None,
            timeout: DEFAULT_TIMEOUT,
        })
    }

    pub fn session(&self) -> Option<&Session> {
        self.session.as_ref()
    }

    /// Sever the transport abruptly, as a network fault would.
    pub fn kill(&self) {
        let _ = self.writer.shutdown(Shutdown::Both);
    }

    fn send(&mut self, kind: MsgType, body: impl Serialize) -> Result<u64, HrfsError> {
        let id = self.next_id;
        self.next_id += 1;
        let line = Envelope::new(kind, Some(id), body).to_line();
        self.writer.write_all(line.as_bytes()).map_err(io_err)?;
        Ok(id)
    }

    fn read_envelope(&mut self, deadline: Instant) -> Result<Option<Envelope>, HrfsError> {
        let left = deadline.saturating_duration_since(Instant::now());
        if left.is_zero() {
            return Ok(None);
        }
        self.reader.get_ref().set_read_timeout(Some(left)).map_err(io_err)?;
        let mut line = String::new();
        match self.reader.read_line(&mut line) {
            Ok(0) => Err(HrfsError::Unreachable),
            Ok(_) => Envelope::parse(line.trim_end()).map(Some),
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => Ok(None),
            Err(e) => Err(io_err(e)),
        }
    }

    fn request(&mut self, kind: MsgType, body: impl Serialize) -> Result<Envelope, HrfsError> {
        let id = self.send(kind, body)?;
        let deadline = Instant::now() + self.timeout;
        loop {
            let env = self.read_envelope(deadline)?.ok_or(HrfsError::Unreachable)?;
            if env.kind == MsgType::Event {
                self.pending_events.push_back(env.body_as()?);
                continue;
            }
            if env.request_id != Some(id) {
                continue;
            }
            if env.kind == MsgType::Error {
                return Err(env.body_as::<ErrorBody>()?.into_error());
            }
            return Ok(env);
        }
    }

    pub fn join(&mut self, profile: Profile) -> Result<Snapshot, HrfsError> {
        let env = self.request(
            MsgType::Join,
            JoinBody {
                agent_id: profile.agent_id,
                kind: profile.kind,
                token: None,
            },
        )?;
        let reply: JoinReply = env.body_as()?;
        self.session = Some(reply.session);
        Ok(reply.snapshot)
    }

    /// Reattach this connection to an existing live session.
    pub fn resume(&mut self, session: &Session) -> Result<Snapshot, HrfsError> {
        let env = self.request(
            MsgType::Join,
            JoinBody {
                agent_id: session.agent_id.clone(),
                kind: session.kind,
                token: Some(session.token),
            },
        )?;
        let reply: JoinReply = env.body_as()?;
        self.session = Some(reply.session);
        Ok(reply.snapshot)
    }

    pub fn post(&mut self, spec: TaskSpec) -> Result<Task, HrfsError> {
        self.request(MsgType::Post, spec)?.body_as()
    }

    pub fn claim(&mut self, task_id: &str, expected_version: u64, override_preference: bool) -> Result<ClaimOutcome, HrfsError> {
        let reply: ClaimReply = self
            .request(
                MsgType::Claim,
                ClaimBody {
                    task_id: task_id.to_string(),
                    expected_version,
                    override_preference,
                },
            )?
            .body_as()?;
        Ok(if reply.outcome == "ok" {
            ClaimOutcome::Ok(reply.task)
        } else {
            ClaimOutcome::Conflict(reply.task)
        })
    }

    pub fn update(&mut self, task_id: &str, update: UpdateRequest) -> Result<Task, HrfsError> {
        self.request(
            MsgType::Update,
            UpdateBody {
                task_id: task_id.to_string(),
                update,
            },
        )?
        .body_as()
    }

    pub fn subscribe(&mut self, filter: TaskFilter, cursor: Option<u64>) -> Result<u64, HrfsError> {
        let reply: SubscribeReply = self.request(MsgType::Subscribe, SubscribeBody { filter, cursor })?.body_as()?;
        Ok(reply.subscription)
    }

    pub fn snapshot(&mut self, filter: TaskFilter) -> Result<Snapshot, HrfsError> {
        self.request(MsgType::Snapshot, SnapshotBody { filter })?.body_as()
    }

    pub fn ping(&mut self) -> Result<f64, HrfsError> {
        let reply: PingReply = self.request(MsgType::Ping, serde_json::json!({}))?.body_as()?;
        Ok(reply.now)
    }

    /// Next pushed event, waiting at most `timeout`.
    pub fn next_event(&mut self, timeout: Duration) -> Result<Option<Event>, HrfsError> {
        if let Some(e) = self.pending_events.pop_front() {
            return Ok(Some(e));
        }
        let deadline = Instant::now() + timeout;
        loop {
            match self.read_envelope(deadline)? {
                None => return Ok(None),
                Some(env) if env.kind == MsgType::Event => return Ok(Some(env.body_as()?)),
                Some(_) => continue,
            }
        }
    }
}

/// A subscriber that survives transport loss. It remembers the last log
/// position it saw and, after reconnecting, asks the server to replay from
/// there. Duplicate deliveries are dropped by (task id, version).
pub struct ResilientSubscriber {
    addr: SocketAddr,
    filter: TaskFilter,
    session: Session,
    client: Option<Client>,
    cursor: u64,
    seen: BTreeMap<String, u64>,
}

impl ResilientSubscriber {
    /// Subscribe on an already-joined client.
    pub fn new(addr: SocketAddr, mut client: Client, filter: TaskFilter, cursor: u64) -> Result<Self, HrfsError> {
        let session = client
            .session()
            .cloned()
            .ok_or_else(|| HrfsError::InvalidSession("<not joined>".into()))?;
        client.subscribe(filter.clone(), Some(cursor))?;
        Ok(ResilientSubscriber {
            addr,
            filter,
            session,
            client: Some(client),
            cursor,
            seen: BTreeMap::new(),
        })
    }

    pub fn cursor(&self) -> u64 {
        self.cursor
    }

    pub fn client(&mut self) -> Option<&mut Client> {
        self.client.as_mut()
    }

    /// Drop the transport without telling the server.
    pub fn kill(&mut self) {
        if let Some(c) = self.client.take() {
            c.kill();
        }
    }

    pub fn is_connected(&self) -> bool {
        self.client.is_some()
    }

    pub fn reconnect(&mut self) -> Result<(), HrfsError> {
        let mut client = Client::connect(self.addr)?;
        client.resume(&self.session)?;
        client.subscribe(self.filter.clone(), Some(self.cursor))?;
        self.client = Some(client);
        Ok(())
    }

    /// Next task version not seen before. Presence events advance the
    /// cursor but are not returned.
    pub fn next_task(&mut self, timeout: Duration) -> Result<Option<Task>, HrfsError> {
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            let client = self.client.as_mut().ok_or(HrfsError::Unreachable)?;
            let event = match client.next_event(left) {
                Ok(Some(e)) => e,
                Ok(None) => return Ok(None),
                Err(e) => {
                    self.client = None;
                    return Err(e);
                }
            };
            self.cursor = self.cursor.max(event.seq());
            if let Event::Task { task, .. } = event {
                let last = self.seen.entry(task.id.clone()).or_insert(0);
                if task.version > *last {
                    *last = task.version;
                    return Ok(Some(task));
                }
            }
        }
    }
}
