use std::collections::BTreeSet;

use thiserror::Error;

use crate::model::MetricSample;

use super::{Frame, Message, Role};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("protocol violation: {0}")]
pub struct ProtocolViolation(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionState {
    AwaitHello,
    Open,
    Closed,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SessionStats {
    pub requests_sent: u64,
    pub answers_received: u64,
    pub requests_received: u64,
    pub answers_sent: u64,
    pub samples_sent: u64,
    pub samples_received: u64,
}

/// Classified inbound frame, after state-machine checks.
#[derive(Debug, Clone, PartialEq)]
pub enum Inbound {
    Hello { role: Role, node: String },
    Sample(MetricSample),
    Request(Message),
    /// A REPLY or ERROR that matched an outstanding request.
    Answer(Message),
}

/// Per-connection protocol state machine.
///
/// Both sides open with HELLO. The producer side answers requests and
/// emits samples; the consumer side issues requests and receives samples.
/// Every request is answered by exactly one REPLY or ERROR carrying its
/// correlation id. Any violation closes the session.
#[derive(Debug)]
pub struct Session {
    role: Option<Role>,
    node: String,
    peer: Option<String>,
    state: SessionState,
    hello_sent: bool,
    next_cid: u64,
    pending: BTreeSet<u64>,
    owed: BTreeSet<u64>,
    seen_cids: BTreeSet<u64>,
    stats: SessionStats,
}

impl Session {
    /// Initiating side with a fixed role.
    pub fn connect(role: Role, node: &str) -> Self {
        Session {
            role: Some(role),
            ..Session::accept(node)
        }
    }

    /// Accepting side; the role is the opposite of whatever the peer declares.
    pub fn accept(node: &str) -> Self {
        Session {
            role: None,
            node: node.to_string(),
            peer: None,
            state: SessionState::AwaitHello,
            hello_sent: false,
            next_cid: 1,
            pending: BTreeSet::new(),
            owed: BTreeSet::new(),
            seen_cids: BTreeSet::new(),
            stats: SessionStats::default(),
        }
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn role(&self) -> Option<Role> {
        self.role
    }

    pub fn peer(&self) -> Option<&str> {
        self.peer.as_deref()
    }

    pub fn stats(&self) -> SessionStats {
        self.stats
    }

    pub fn outstanding(&self) -> usize {
        self.pending.len()
    }

    pub fn is_open(&self) -> bool {
        self.state == SessionState::Open
    }

    pub fn close(&mut self) {
        self.state = SessionState::Closed;
    }

    fn violation(&mut self, msg: String) -> ProtocolViolation {
        self.state = SessionState::Closed;
        ProtocolViolation(msg)
    }

    /// Our HELLO. Must be the first thing sent.
    pub fn hello(&mut self) -> Result<Message, ProtocolViolation> {
        let role = match self.role {
            Some(r) if !self.hello_sent && self.state != SessionState::Closed => r,
            _ => return Err(self.violation("HELLO not allowed now".into())),
        };
        self.hello_sent = true;
        if self.peer.is_some() {
            self.state = SessionState::Open;
        }
        Ok(Message::Hello {
            cid: 0,
            role,
            node: self.node.clone(),
        })
    }

    pub fn on_frame(&mut self, frame: Frame) -> Result<Inbound, ProtocolViolation> {
        match self.state {
            SessionState::Closed => Err(ProtocolViolation("session closed".into())),
            SessionState::AwaitHello => match frame {
                Frame::Control(Message::Hello { role, node, .. }) if self.peer.is_none() => {
                    match self.role {
                        Some(ours) if ours == role => {
                            return Err(self.violation(format!(
                                "peer {node} declared the same role as us"
                            )))
                        }
                        Some(_) => {}
                        None => self.role = Some(role.opposite()),
                    }
                    self.peer = Some(node.clone());
                    if self.hello_sent {
                        self.state = SessionState::Open;
                    }
                    Ok(Inbound::Hello { role, node })
                }
                other => Err(self.violation(format!("{} before HELLO", frame_kind(&other)))),
            },
            SessionState::Open => self.on_open_frame(frame),
        }
    }

    fn on_open_frame(&mut self, frame: Frame) -> Result<Inbound, ProtocolViolation> {
        let role = self.role.expect("open session has a role");
        match frame {
            Frame::Sample(s) => {
                if role == Role::Consumer {
                    self.stats.samples_received += 1;
                    Ok(Inbound::Sample(s))
                } else {
                    Err(self.violation("SAMPLE sent to a producer".into()))
                }
            }
            Frame::Control(Message::Hello { .. }) => Err(self.violation("duplicate HELLO".into())),
            Frame::Control(msg @ (Message::Reply(_) | Message::Error(_))) => {
                let cid = msg.cid();
                if self.pending.remove(&cid) {
                    self.stats.answers_received += 1;
                    Ok(Inbound::Answer(msg))
                } else {
                    Err(self.violation(format!("{} with unknown cid {cid}", msg.kind())))
                }
            }
            Frame::Control(msg) => {
                if role != Role::Producer {
                    return Err(self.violation(format!("{} sent to a consumer", msg.kind())));
                }
                let cid = msg.cid();
                if !self.seen_cids.insert(cid) {
                    return Err(self.violation(format!("reused cid {cid}")));
                }
                self.owed.insert(cid);
                self.stats.requests_received += 1;
                Ok(Inbound::Request(msg))
            }
        }
    }

    /// Stamp and record an outbound request.
    pub fn request(&mut self, msg: Message) -> Result<Message, ProtocolViolation> {
        if !self.is_open() || self.role != Some(Role::Consumer) || !msg.is_request() {
            return Err(ProtocolViolation(format!(
                "cannot send {} in this session state",
                msg.kind()
            )));
        }
        let cid = self.next_cid;
        self.next_cid += 1;
        self.pending.insert(cid);
        self.stats.requests_sent += 1;
        Ok(msg.with_cid(cid))
    }

    /// Record an outbound REPLY/ERROR for a request we received.
    pub fn answer(&mut self, msg: Message) -> Result<Message, ProtocolViolation> {
        if !matches!(msg, Message::Reply(_) | Message::Error(_)) {
            return Err(ProtocolViolation(format!("{} is not an answer", msg.kind())));
        }
        if !self.owed.remove(&msg.cid()) {
            return Err(ProtocolViolation(format!("no request with cid {}", msg.cid())));
        }
        self.stats.answers_sent += 1;
        Ok(msg)
    }

    /// Check that we may emit a sample now.
    pub fn sample_out(&mut self) -> Result<(), ProtocolViolation> {
        if self.is_open() && self.role == Some(Role::Producer) {
            self.stats.samples_sent += 1;
            Ok(())
        } else {
            Err(ProtocolViolation("SAMPLE not allowed in this session state".into()))
        }
    }
}

fn frame_kind(frame: &Frame) -> &'static str {
    match frame {
        Frame::Sample(_) => "SAMPLE",
        Frame::Control(m) => m.kind(),
    }
}
