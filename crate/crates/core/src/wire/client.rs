use std::collections::VecDeque;
use std::io;

use thiserror::Error;

use crate::model::MetricSample;

use super::session::Session;
use super::{
    decode_frame, encode_message, encode_sample, ErrorCode, Inbound, Message, ProtocolViolation,
    Reply, Role, Transport, WireError,
};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Protocol(#[from] ProtocolViolation),
    #[error(transparent)]
    Decode(#[from] WireError),
    #[error("peer closed the session")]
    Closed,
    #[error("{code:?}: {msg}")]
    Remote { code: ErrorCode, msg: String },
}

/// Initiating side of a session over any [`Transport`].
pub struct WireClient<T> {
    transport: T,
    session: Session,
    inbox: VecDeque<MetricSample>,
}

impl<T: Transport> WireClient<T> {
    /// Exchange HELLOs; returns once the peer's HELLO has arrived.
    pub fn connect(mut transport: T, role: Role, node: &str) -> Result<Self, ClientError> {
        let mut session = Session::connect(role, node);
        let hello = session.hello()?;
        transport.send_line(&encode_message(&hello))?;
        let mut client = WireClient {
            transport,
            session,
            inbox: VecDeque::new(),
        };
        while !client.session.is_open() {
            client.pump_one()?;
        }
        Ok(client)
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn transport_mut(&mut self) -> &mut T {
        &mut self.transport
    }

    fn pump_one(&mut self) -> Result<Option<Message>, ClientError> {
        let line = self.transport.recv_line()?.ok_or(ClientError::Closed)?;
        let frame = decode_frame(line.as_bytes())?;
        match self.session.on_frame(frame)? {
            Inbound::Hello { .. } => Ok(None),
            Inbound::Sample(s) => {
                self.inbox.push_back(s);
                Ok(None)
            }
            Inbound::Answer(m) => Ok(Some(m)),
            Inbound::Request(m) => Err(ProtocolViolation(format!(
                "unexpected {} from producer",
                m.kind()
            ))
            .into()),
        }
    }

    /// Send one request and wait for its REPLY. Samples arriving meanwhile
    /// are queued for [`recv_sample`](Self::recv_sample).
    pub fn call(&mut self, request: Message) -> Result<Reply, ClientError> {
        let request = self.session.request(request)?;
        let cid = request.cid();
        self.transport.send_line(&encode_message(&request))?;
        loop {
            if let Some(answer) = self.pump_one()? {
                debug_assert_eq!(answer.cid(), cid);
                return match answer {
                    Message::Reply(r) => Ok(r),
                    Message::Error(e) => Err(ClientError::Remote {
                        code: e.code,
                        msg: e.msg,
                    }),
                    _ => unreachable!("answers are REPLY or ERROR"),
                };
            }
        }
    }

    pub fn send_sample(&mut self, sample: &MetricSample) -> Result<(), ClientError> {
        self.session.sample_out()?;
        self.transport.send_line(&encode_sample(sample))?;
        Ok(())
    }

    /// Next streamed sample; `None` when nothing is available.
    pub fn recv_sample(&mut self) -> Result<Option<MetricSample>, ClientError> {
        loop {
            if let Some(s) = self.inbox.pop_front() {
                return Ok(Some(s));
            }
            match self.pump_one() {
                Ok(Some(m)) => {
                    return Err(ProtocolViolation(format!("unsolicited {}", m.kind())).into())
                }
                Ok(None) => continue,
                Err(ClientError::Io(e))
                    if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) =>
                {
                    return Ok(None)
                }
                Err(ClientError::Closed) => return Ok(None),
                Err(e) => return Err(e),
            }
        }
    }
}
