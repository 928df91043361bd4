use std::io;
use std::net::{SocketAddr, TcpListener};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde_json::{json, Value as Json};
use tracing::{debug, warn};

use crate::clock::Clock;
use crate::directory::Upstream;
use crate::model::{parse_path, MetricName};
use crate::probe::{Snapshot, SNAPSHOT_FILE, SNAPSHOT_SCHEMA};
use crate::wire::{ClientError, ErrorCode, Message};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub status: u16,
    pub content_type: &'static str,
    pub body: Vec<u8>,
}

impl Response {
    fn json(status: u16, mut value: Json) -> Self {
        if let Json::Object(map) = &mut value {
            map.insert("schema".into(), json!(SNAPSHOT_SCHEMA));
        }
        let mut body = serde_json::to_vec(&value).expect("json value serializes");
        body.push(b'\n');
        Response {
            status,
            content_type: "application/json",
            body,
        }
    }

    fn error(status: u16, msg: impl Into<String>) -> Self {
        Self::json(status, json!({ "error": msg.into() }))
    }

    pub fn body_json(&self) -> Option<Json> {
        serde_json::from_slice(&self.body).ok()
    }
}

/// Request router. Reads the published snapshot and asks the directory;
/// never writes anything.
pub struct Surface {
    snapshot_dir: PathBuf,
    directory: String,
    upstream: Arc<dyn Upstream>,
    clock: Arc<dyn Clock>,
}

impl Surface {
    pub fn new(snapshot_dir: PathBuf, directory: impl Into<String>, upstream: Arc<dyn Upstream>, clock: Arc<dyn Clock>) -> Self {
        Surface {
            snapshot_dir,
            directory: directory.into(),
            upstream,
            clock,
        }
    }

    fn snapshot_bytes(&self) -> Result<Vec<u8>, Response> {
        match std::fs::read(self.snapshot_dir.join(SNAPSHOT_FILE)) {
            Ok(bytes) => Ok(bytes),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(Response::error(503, "no snapshot published yet")),
            Err(e) => Err(Response::error(500, format!("reading snapshot: {e}"))),
        }
    }

    fn snapshot(&self) -> Result<Snapshot, Response> {
        let bytes = self.snapshot_bytes()?;
        serde_json::from_slice(&bytes).map_err(|e| Response::error(500, format!("snapshot unreadable: {e}")))
    }

    pub fn handle(&self, method: &str, url: &str) -> Response {
        if method != "GET" {
            return Response::error(405, "only GET is served");
        }
        let (path, query) = url.split_once('?').unwrap_or((url, ""));
        let parts: Vec<&str> = path.split('/').filter(|s| !s.is_empty()).collect();
        match parts.as_slice() {
            ["healthz"] => Response::json(200, json!({ "status": "ok" })),
            ["snapshot"] => match self.snapshot_bytes() {
                Ok(body) => Response {
                    status: 200,
                    content_type: "application/json",
                    body,
                },
                Err(r) => r,
            },
            ["sites"] => self.sites(),
            ["sites", site] => self.site(site),
            ["registry"] => self.registry(),
            ["metrics", rest @ ..] if rest.len() >= 2 => self.metrics(rest, query),
            _ => Response::error(404, format!("no such resource: {path}")),
        }
    }

    fn sites(&self) -> Response {
        let snap = match self.snapshot() {
            Ok(s) => s,
            Err(r) => return r,
        };
        let sites: Vec<Json> = snap
            .sites
            .iter()
            .map(|s| {
                json!({
                    "site": s.site,
                    "combined": s.combined,
                    "hosts": s.hosts.iter().map(|h| json!({"host": h.host, "combined": h.combined})).collect::<Vec<_>>(),
                })
            })
            .collect();
        Response::json(200, json!({ "cycle": snap.cycle, "sites": sites }))
    }

    fn site(&self, name: &str) -> Response {
        let snap = match self.snapshot() {
            Ok(s) => s,
            Err(r) => return r,
        };
        match snap.site(name) {
            Some(site) => Response::json(200, json!({ "cycle": snap.cycle, "site": site })),
            None => Response::error(404, format!("unknown site {name}")),
        }
    }

    fn registry(&self) -> Response {
        match self.upstream.call(&self.directory, Message::QueryRegistry { cid: 0 }) {
            Ok(reply) => Response::json(
                200,
                json!({ "directory": self.directory, "entries": reply.entries.unwrap_or_default() }),
            ),
            Err(e) => Response::error(502, format!("directory {}: {e}", self.directory)),
        }
    }

    fn metrics(&self, parts: &[&str], query: &str) -> Response {
        let (metric, path) = parts.split_last().expect("at least two parts");
        let Ok(path) = parse_path(&path.join("/")) else {
            return Response::error(400, "malformed resource path");
        };
        let Ok(metric) = MetricName::new(metric) else {
            return Response::error(400, "malformed metric name");
        };
        let mut from = 0u64;
        let mut to = self.clock.now_ms();
        for pair in query.split('&').filter(|s| !s.is_empty()) {
            let (k, v) = pair.split_once('=').unwrap_or((pair, ""));
            let Ok(n) = v.parse::<u64>() else {
                return Response::error(400, format!("{k} must be unix milliseconds"));
            };
            match k {
                "from" => from = n,
                "to" => to = n,
                _ => return Response::error(400, format!("unknown parameter {k}")),
            }
        }
        let req = Message::QueryRange {
            cid: 0,
            p: path.clone(),
            m: metric.clone(),
            from,
            to,
            hops: 0,
        };
        match self.upstream.call(&self.directory, req) {
            Ok(reply) => Response::json(
                200,
                json!({
                    "path": path,
                    "metric": metric,
                    "from": from,
                    "to": to,
                    "samples": reply.samples.unwrap_or_default(),
                }),
            ),
            Err(ClientError::Remote { code, msg }) => {
                let status = match code {
                    ErrorCode::NoProvider => 404,
                    ErrorCode::InvalidRange | ErrorCode::BadRequest => 400,
                    _ => 502,
                };
                Response::error(status, msg)
            }
            Err(e) => Response::error(502, format!("directory {}: {e}", self.directory)),
        }
    }
}

/// Running HTTP server. Dropping it stops the workers.
pub struct SurfaceHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
}

impl SurfaceHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(&mut self) {
        self.stop.store(true, Ordering::Release);
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    /// Block until the server stops.
    pub fn wait(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for SurfaceHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn respond(surface: &Surface, request: tiny_http::Request) {
    let method = request.method().as_str().to_string();
    let url = request.url().to_string();
    let r = surface.handle(&method, &url);
    debug!(%method, %url, status = r.status, "http");
    let header = tiny_http::Header::from_bytes("Content-Type", r.content_type).expect("static header");
    let response = tiny_http::Response::from_data(r.body)
        .with_status_code(r.status)
        .with_header(header);
    if let Err(e) = request.respond(response) {
        warn!(error = %e, "http response failed");
    }
}

/// Serve `surface` on `listener` with `workers` handler threads.
pub fn serve_http(listener: TcpListener, surface: Arc<Surface>, workers: usize) -> io::Result<SurfaceHandle> {
    let addr = listener.local_addr()?;
    let server = Arc::new(tiny_http::Server::from_listener(listener, None).map_err(io::Error::other)?);
    let stop = Arc::new(AtomicBool::new(false));
    let workers = (0..workers.max(1))
        .map(|i| {
            let server = Arc::clone(&server);
            let surface = Arc::clone(&surface);
            let stop = Arc::clone(&stop);
            std::thread::Builder::new()
                .name(format!("http-{i}"))
                .spawn(move || {
                    while !stop.load(Ordering::Acquire) {
                        match server.recv_timeout(Duration::from_millis(100)) {
                            Ok(Some(req)) => respond(&surface, req),
                            Ok(None) => {}
                            Err(e) => warn!(error = %e, "http accept failed"),
                        }
                    }
                })
        })
        .collect::<io::Result<Vec<_>>>()?;
    Ok(SurfaceHandle { addr, stop, workers })
}
