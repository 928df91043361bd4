use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

/// Ordered, reliable line transport.
pub trait Transport {
    fn send_line(&mut self, line: &str) -> io::Result<()>;
    /// Next line including its terminator; `None` at end of stream.
    fn recv_line(&mut self) -> io::Result<Option<String>>;
}

impl<T: Transport + ?Sized> Transport for &mut T {
    fn send_line(&mut self, line: &str) -> io::Result<()> {
        (**self).send_line(line)
    }
    fn recv_line(&mut self) -> io::Result<Option<String>> {
        (**self).recv_line()
    }
}

pub struct TcpTransport {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl TcpTransport {
    pub fn connect(addr: &str, timeout: Duration) -> io::Result<Self> {
        let addrs: Vec<SocketAddr> = addr.to_socket_addrs()?.collect();
        let mut last = io::Error::new(io::ErrorKind::NotFound, format!("no address for {addr}"));
        for a in addrs {
            match TcpStream::connect_timeout(&a, timeout) {
                Ok(stream) => {
                    stream.set_read_timeout(Some(timeout))?;
                    stream.set_write_timeout(Some(timeout))?;
                    return Self::from_stream(stream);
                }
                Err(e) => last = e,
            }
        }
        Err(last)
    }

    pub fn from_stream(stream: TcpStream) -> io::Result<Self> {
        stream.set_nodelay(true)?;
        let writer = stream.try_clone()?;
        Ok(TcpTransport {
            reader: BufReader::new(stream),
            writer,
        })
    }
}

impl Transport for TcpTransport {
    fn send_line(&mut self, line: &str) -> io::Result<()> {
        self.writer.write_all(line.as_bytes())
    }

    fn recv_line(&mut self) -> io::Result<Option<String>> {
        let mut line = String::new();
        let n = self.reader.read_line(&mut line)?;
        if n == 0 {
            Ok(None)
        } else {
            Ok(Some(line))
        }
    }
}

/// One end of an in-memory pipe.
pub struct MemTransport {
    tx: Sender<String>,
    rx: Receiver<String>,
    timeout: Option<Duration>,
}

/// Connected pair of in-memory transports.
pub fn mem_pipe() -> (MemTransport, MemTransport) {
    let (a_tx, b_rx) = channel();
    let (b_tx, a_rx) = channel();
    (
        MemTransport {
            tx: a_tx,
            rx: a_rx,
            timeout: None,
        },
        MemTransport {
            tx: b_tx,
            rx: b_rx,
            timeout: None,
        },
    )
}

impl MemTransport {
    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = Some(timeout);
        self
    }

    /// Non-blocking receive, for draining in tests.
    pub fn try_recv_line(&mut self) -> Option<String> {
        self.rx.try_recv().ok()
    }
}

impl Transport for MemTransport {
    fn send_line(&mut self, line: &str) -> io::Result<()> {
        self.tx
            .send(line.to_string())
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "peer dropped"))
    }

    fn recv_line(&mut self) -> io::Result<Option<String>> {
        match self.timeout {
            None => Ok(self.rx.recv().ok()),
            Some(t) => match self.rx.recv_timeout(t) {
                Ok(line) => Ok(Some(line)),
                Err(RecvTimeoutError::Disconnected) => Ok(None),
                Err(RecvTimeoutError::Timeout) => {
                    Err(io::Error::new(io::ErrorKind::TimedOut, "recv timed out"))
                }
            },
        }
    }
}
