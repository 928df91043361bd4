use std::collections::HashMap;
use std::sync::{Arc, RwLock};
use std::time::Duration;

use crate::wire::{ClientError, DirectLink, Message, Reply, Role, TcpTransport, WireClient, WireHandler};

/// How a directory reaches providers. One call is one request/answer.
pub trait Upstream: Send + Sync {
    fn call(&self, endpoint: &str, request: Message) -> Result<Reply, ClientError>;
}

/// Fresh TCP session per call.
#[derive(Debug, Clone)]
pub struct TcpUpstream {
    node: String,
    timeout: Duration,
}

impl TcpUpstream {
    pub fn new(node: impl Into<String>, timeout: Duration) -> Self {
        TcpUpstream {
            node: node.into(),
            timeout,
        }
    }
}

impl Upstream for TcpUpstream {
    fn call(&self, endpoint: &str, request: Message) -> Result<Reply, ClientError> {
        let transport = TcpTransport::connect(endpoint, self.timeout)?;
        let mut client = WireClient::connect(transport, Role::Consumer, &self.node)?;
        client.call(request)
    }
}

/// In-process routing table from endpoint names to handlers. Endpoints can
/// be marked down to simulate outages.
#[derive(Default)]
pub struct LocalUpstream {
    handlers: RwLock<HashMap<String, Arc<dyn WireHandler>>>,
    down: RwLock<HashMap<String, bool>>,
}

impl LocalUpstream {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&self, endpoint: &str, handler: Arc<dyn WireHandler>) {
        self.handlers
            .write()
            .expect("handlers lock")
            .insert(endpoint.to_string(), handler);
    }

    pub fn set_down(&self, endpoint: &str, down: bool) {
        self.down.write().expect("down lock").insert(endpoint.to_string(), down);
    }

    pub fn contains(&self, endpoint: &str) -> bool {
        self.handlers.read().expect("handlers lock").contains_key(endpoint)
    }

    pub fn is_down(&self, endpoint: &str) -> bool {
        self.down
            .read()
            .expect("down lock")
            .get(endpoint)
            .copied()
            .unwrap_or(false)
    }
}

impl Upstream for LocalUpstream {
    fn call(&self, endpoint: &str, request: Message) -> Result<Reply, ClientError> {
        if self.is_down(endpoint) {
            return Err(ClientError::Io(std::io::Error::new(
                std::io::ErrorKind::ConnectionRefused,
                format!("{endpoint} is down"),
            )));
        }
        let handler = self
            .handlers
            .read()
            .expect("handlers lock")
            .get(endpoint)
            .cloned()
            .ok_or_else(|| {
                ClientError::Io(std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("no route to {endpoint}"),
                ))
            })?;
        // A new link per call, so nested calls never share a session.
        let link = DirectLink::new(handler);
        let mut client = WireClient::connect(link, Role::Consumer, "local")?;
        client.call(request)
    }
}
