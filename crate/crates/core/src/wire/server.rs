use std::collections::VecDeque;
use std::io::{self, BufRead, BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use tracing::{debug, warn};

use crate::model::MetricSample;

use super::session::Session;
use super::{
    decode_frame, encode_message, encode_sample, ErrorCode, ErrorReply, Inbound, Message,
    ProtocolViolation, Reply, Subscription, Transport, WireError,
};

/// Service logic behind a wire endpoint. One handler serves many sessions.
pub trait WireHandler: Send + Sync {
    fn node(&self) -> String;

    fn now_ms(&self) -> u64;

    /// Whether SUBSCRIBE is honoured on this endpoint.
    fn streams(&self) -> bool {
        false
    }

    /// A sample pushed by a producer peer.
    fn on_sample(&self, _sample: MetricSample) {}

    /// A line that could not be decoded. The session stays open.
    fn on_bad_line(&self, _err: &WireError) {}

    fn on_request(&self, req: &Message) -> Result<Reply, ErrorReply> {
        Err(ErrorReply::new(
            ErrorCode::Unsupported,
            format!("{} not supported by {}", req.kind(), self.node()),
        ))
    }
}

/// Server half of one session: state machine, subscriptions, dispatch.
pub struct ServerConn<H: ?Sized> {
    session: Session,
    handler: Arc<H>,
    subs: Vec<Subscription>,
}

impl<H: WireHandler + ?Sized> ServerConn<H> {
    pub fn new(handler: Arc<H>) -> Self {
        let node = handler.node();
        ServerConn {
            session: Session::accept(&node),
            handler,
            subs: Vec::new(),
        }
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn handler(&self) -> &Arc<H> {
        &self.handler
    }

    /// Feed one inbound line; outbound lines are appended to `out`. A
    /// violation closes the session after queueing an ERROR for the peer.
    pub fn on_line(&mut self, line: &str, out: &mut Vec<String>) -> Result<(), ProtocolViolation> {
        let frame = match decode_frame(line.as_bytes()) {
            Ok(f) => f,
            Err(e) => {
                self.handler.on_bad_line(&e);
                return Ok(());
            }
        };
        let inbound = match self.session.on_frame(frame) {
            Ok(i) => i,
            Err(v) => {
                out.push(encode_message(&Message::Error(ErrorReply::new(
                    ErrorCode::ProtocolViolation,
                    v.0.clone(),
                ))));
                return Err(v);
            }
        };
        match inbound {
            Inbound::Hello { .. } => {
                let hello = self.session.hello()?;
                out.push(encode_message(&hello));
            }
            Inbound::Sample(s) => self.handler.on_sample(s),
            Inbound::Request(req) => {
                let cid = req.cid();
                let answer = match self.dispatch(&req) {
                    Ok(reply) => Message::Reply(Reply { cid, ..reply }),
                    Err(err) => Message::Error(ErrorReply { cid, ..err }),
                };
                let answer = self.session.answer(answer)?;
                out.push(encode_message(&answer));
            }
            Inbound::Answer(_) => unreachable!("accepting side never has pending requests"),
        }
        Ok(())
    }

    fn dispatch(&mut self, req: &Message) -> Result<Reply, ErrorReply> {
        match req {
            Message::Subscribe {
                prefix,
                metric,
                expiry,
                ..
            } => {
                if !self.handler.streams() {
                    return Err(ErrorReply::new(
                        ErrorCode::Unsupported,
                        "this endpoint does not stream samples",
                    ));
                }
                self.subs.retain(|s| !(s.path_prefix == *prefix && s.metric_filter == *metric));
                self.subs.push(Subscription {
                    path_prefix: prefix.clone(),
                    metric_filter: metric.clone(),
                    expiry: *expiry,
                });
                Ok(Reply {
                    expires_at: Some(*expiry),
                    ..Reply::ok()
                })
            }
            Message::Unsubscribe { prefix, metric, .. } => {
                self.subs.retain(|s| !(s.path_prefix == *prefix && s.metric_filter == *metric));
                Ok(Reply::ok())
            }
            other => self.handler.on_request(other),
        }
    }

    /// Stream a sample to this peer if any active subscription matches.
    pub fn publish(&mut self, sample: &MetricSample, out: &mut Vec<String>) -> bool {
        let now = self.handler.now_ms();
        self.subs.retain(|s| s.is_active(now));
        if !self.subs.iter().any(|s| s.matches(sample, now)) {
            return false;
        }
        if self.session.sample_out().is_err() {
            return false;
        }
        out.push(encode_sample(sample));
        true
    }
}

/// In-process transport straight into a server connection. Each sent line
/// is handled synchronously, so replies are ready as soon as `send_line`
/// returns.
pub struct DirectLink<H: ?Sized> {
    conn: ServerConn<H>,
    inbox: VecDeque<String>,
    closed: bool,
}

impl<H: WireHandler + ?Sized> DirectLink<H> {
    pub fn new(handler: Arc<H>) -> Self {
        DirectLink {
            conn: ServerConn::new(handler),
            inbox: VecDeque::new(),
            closed: false,
        }
    }

    pub fn conn(&self) -> &ServerConn<H> {
        &self.conn
    }

    pub fn publish(&mut self, sample: &MetricSample) -> bool {
        let mut out = Vec::new();
        let sent = self.conn.publish(sample, &mut out);
        self.inbox.extend(out);
        sent
    }
}

impl<H: WireHandler + ?Sized> Transport for DirectLink<H> {
    fn send_line(&mut self, line: &str) -> io::Result<()> {
        if self.closed {
            return Err(io::Error::new(io::ErrorKind::BrokenPipe, "session closed"));
        }
        let mut out = Vec::new();
        let result = self.conn.on_line(line, &mut out);
        self.inbox.extend(out);
        if result.is_err() {
            self.closed = true;
        }
        Ok(())
    }

    fn recv_line(&mut self) -> io::Result<Option<String>> {
        match self.inbox.pop_front() {
            Some(line) => Ok(Some(line)),
            None if self.closed => Ok(None),
            None => Err(io::Error::new(io::ErrorKind::WouldBlock, "no pending lines")),
        }
    }
}

struct ConnSlot<H: ?Sized> {
    conn: Mutex<ServerConn<H>>,
    writer: Mutex<TcpStream>,
    alive: AtomicBool,
}

impl<H: WireHandler + ?Sized> ConnSlot<H> {
    fn write_lines(&self, lines: &[String]) -> io::Result<()> {
        if lines.is_empty() {
            return Ok(());
        }
        let mut w = self.writer.lock().expect("writer lock");
        for l in lines {
            w.write_all(l.as_bytes())?;
        }
        Ok(())
    }
}

/// Running TCP endpoint. Dropping the handle stops accepting and closes all
/// sessions.
pub struct ServerHandle<H: ?Sized + 'static> {
    addr: SocketAddr,
    slots: Arc<Mutex<Vec<Arc<ConnSlot<H>>>>>,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
}

impl<H: WireHandler + ?Sized + 'static> ServerHandle<H> {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stream a sample to every session with a matching subscription.
    pub fn publish(&self, sample: &MetricSample) -> usize {
        let slots: Vec<_> = self.slots.lock().expect("slots lock").clone();
        let mut sent = 0;
        for slot in slots {
            if !slot.alive.load(Ordering::Acquire) {
                continue;
            }
            let mut out = Vec::new();
            let delivered = slot.conn.lock().expect("conn lock").publish(sample, &mut out);
            if delivered && slot.write_lines(&out).is_ok() {
                sent += 1;
            }
        }
        sent
    }

    pub fn session_count(&self) -> usize {
        self.slots
            .lock()
            .expect("slots lock")
            .iter()
            .filter(|s| s.alive.load(Ordering::Acquire))
            .count()
    }

    pub fn shutdown(&mut self) {
        if self.stop.swap(true, Ordering::AcqRel) {
            return;
        }
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
        for slot in self.slots.lock().expect("slots lock").drain(..) {
            slot.alive.store(false, Ordering::Release);
            let _ = slot.writer.lock().expect("writer lock").shutdown(Shutdown::Both);
        }
    }
}

impl<H: ?Sized + 'static> Drop for ServerHandle<H> {
    fn drop(&mut self) {
        if !self.stop.swap(true, Ordering::AcqRel) {
            let _ = TcpStream::connect(self.addr);
            if let Some(h) = self.acceptor.take() {
                let _ = h.join();
            }
            if let Ok(mut slots) = self.slots.lock() {
                for slot in slots.drain(..) {
                    slot.alive.store(false, Ordering::Release);
                    if let Ok(w) = slot.writer.lock() {
                        let _ = w.shutdown(Shutdown::Both);
                    }
                }
            }
        }
    }
}

/// Serve `handler` on `listener`, one thread per session.
pub fn serve_tcp<H>(listener: TcpListener, handler: Arc<H>) -> io::Result<ServerHandle<H>>
where
    H: WireHandler + ?Sized + 'static,
{
    let addr = listener.local_addr()?;
    let slots: Arc<Mutex<Vec<Arc<ConnSlot<H>>>>> = Arc::new(Mutex::new(Vec::new()));
    let stop = Arc::new(AtomicBool::new(false));
    let acceptor = {
        let slots = Arc::clone(&slots);
        let stop = Arc::clone(&stop);
        std::thread::Builder::new()
            .name(format!("wire-accept-{}", addr.port()))
            .spawn(move || {
                for stream in listener.incoming() {
                    if stop.load(Ordering::Acquire) {
                        break;
                    }
                    let stream = match stream {
                        Ok(s) => s,
                        Err(e) => {
                            warn!(error = %e, "accept failed");
                            continue;
                        }
                    };
                    if let Err(e) = spawn_session(stream, Arc::clone(&handler), &slots) {
                        warn!(error = %e, "could not start session");
                    }
                }
            })?
    };
    Ok(ServerHandle {
        addr,
        slots,
        stop,
        acceptor: Some(acceptor),
    })
}

fn spawn_session<H>(
    stream: TcpStream,
    handler: Arc<H>,
    slots: &Arc<Mutex<Vec<Arc<ConnSlot<H>>>>>,
) -> io::Result<()>
where
    H: WireHandler + ?Sized + 'static,
{
    stream.set_nodelay(true)?;
    let peer = stream.peer_addr()?;
    let reader = BufReader::new(stream.try_clone()?);
    let slot = Arc::new(ConnSlot {
        conn: Mutex::new(ServerConn::new(handler)),
        writer: Mutex::new(stream),
        alive: AtomicBool::new(true),
    });
    {
        let mut all = slots.lock().expect("slots lock");
        all.retain(|s| s.alive.load(Ordering::Acquire));
        all.push(Arc::clone(&slot));
    }
    std::thread::Builder::new()
        .name(format!("wire-session-{peer}"))
        .spawn(move || {
            for line in reader.lines() {
                let Ok(mut line) = line else { break };
                line.push('\n');
                let mut out = Vec::new();
                let result = slot.conn.lock().expect("conn lock").on_line(&line, &mut out);
                if slot.write_lines(&out).is_err() {
                    break;
                }
                if let Err(v) = result {
                    debug!(%peer, violation = %v, "closing session");
                    break;
                }
            }
            slot.alive.store(false, Ordering::Release);
            let _ = slot.writer.lock().expect("writer lock").shutdown(Shutdown::Both);
        })?;
    Ok(())
}
