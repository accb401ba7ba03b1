use std::fmt;
use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::frame::{read_frame, Frame, FrameKind};
use super::BridgeError;
use crate::denoise::Denoiser;
use crate::error::Result;
use crate::image::Image;

/// Where the denoiser server lives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transport {
    /// Program and arguments; frames go over the child's stdin/stdout.
    Command(Vec<String>),
    /// `host:port`.
    Tcp(String),
}

impl fmt::Display for Transport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transport::Command(argv) => write!(f, "cmd:{}", argv.join(" ")),
            Transport::Tcp(addr) => write!(f, "tcp:{addr}"),
        }
    }
}

impl Transport {
    /// Parses `tcp:HOST:PORT` or `cmd:PROGRAM ARGS...` (split on whitespace).
    pub fn parse(s: &str) -> Result<Transport, BridgeError> {
        if let Some(addr) = s.strip_prefix("tcp:") {
            return Ok(Transport::Tcp(addr.to_string()));
        }
        if let Some(cmd) = s.strip_prefix("cmd:") {
            let argv: Vec<String> = cmd.split_whitespace().map(String::from).collect();
            if !argv.is_empty() {
                return Ok(Transport::Command(argv));
            }
        }
        Err(BridgeError::Io(format!(
            "bad transport `{s}`; expected tcp:HOST:PORT or cmd:PROGRAM ..."
        )))
    }
}

enum Outgoing {
    Bytes(Vec<u8>),
    Close,
}

/// One open session with a server. Strictly one request in flight.
pub struct Connection {
    tx: Option<Sender<Outgoing>>,
    rx: Receiver<Result<Frame, BridgeError>>,
    timeout: Duration,
    child: Option<Child>,
    tcp: Option<TcpStream>,
    /// Set after a timeout or framing error, when the stream may be out of step.
    broken: Option<BridgeError>,
}

impl Connection {
    /// Connects and completes the handshake.
    pub fn open(transport: &Transport, timeout: Duration) -> Result<Connection, BridgeError> {
        let mut conn = Self::connect(transport, timeout)?;
        conn.handshake()?;
        Ok(conn)
    }

    /// Connects without handshaking.
    pub fn connect(transport: &Transport, timeout: Duration) -> Result<Connection, BridgeError> {
        match transport {
            Transport::Tcp(addr) => {
                let addrs: Vec<_> = addr
                    .to_socket_addrs()
                    .map_err(|e| BridgeError::Io(format!("{addr}: {e}")))?
                    .collect();
                let mut last = BridgeError::Io(format!("{addr}: no addresses"));
                for a in addrs {
                    match TcpStream::connect_timeout(&a, timeout) {
                        Ok(stream) => {
                            stream.set_nodelay(true).ok();
                            let reader = stream.try_clone()?;
                            let writer = stream.try_clone()?;
                            let half = stream.try_clone()?;
                            let mut conn = Self::spawn_io(reader, writer, timeout, move || {
                                let _ = half.shutdown(Shutdown::Write);
                            });
                            conn.tcp = Some(stream);
                            return Ok(conn);
                        }
                        Err(e) if e.kind() == std::io::ErrorKind::TimedOut => {
                            last = BridgeError::Timeout {
                                seconds: timeout.as_secs_f64(),
                            }
                        }
                        Err(e) => last = BridgeError::Io(format!("{addr}: {e}")),
                    }
                }
                Err(last)
            }
            Transport::Command(argv) => {
                let (program, args) = argv
                    .split_first()
                    .ok_or_else(|| BridgeError::Io("empty command".into()))?;
                let mut child = Command::new(program)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| BridgeError::Io(format!("spawning {program}: {e}")))?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                // Dropping stdin is enough to signal end of stream.
                let mut conn = Self::spawn_io(stdout, stdin, timeout, || {});
                conn.child = Some(child);
                Ok(conn)
            }
        }
    }

    /// `on_close` runs on the writer thread once everything queued before
    /// a close request has been flushed.
    fn spawn_io<R, W>(reader: R, writer: W, timeout: Duration, on_close: impl FnOnce() + Send + 'static) -> Connection
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        let (in_tx, in_rx) = mpsc::channel();
        let (out_tx, out_rx) = mpsc::channel::<Outgoing>();
        let err_tx = in_tx.clone();
        thread::spawn(move || {
            let mut reader = BufReader::new(reader);
            loop {
                let item = match read_frame(&mut reader) {
                    Ok(Some(f)) => Ok(f),
                    Ok(None) => Err(BridgeError::Io("server closed the connection".into())),
                    Err(e) => Err(e),
                };
                let stop = item.is_err();
                if in_tx.send(item).is_err() || stop {
                    break;
                }
            }
        });
        thread::spawn(move || {
            let mut writer = BufWriter::new(writer);
            while let Ok(msg) = out_rx.recv() {
                match msg {
                    Outgoing::Bytes(b) => {
                        if let Err(e) = writer.write_all(&b).and_then(|_| writer.flush()) {
                            let _ = err_tx.send(Err(e.into()));
                            break;
                        }
                    }
                    Outgoing::Close => {
                        drop(writer);
                        on_close();
                        return;
                    }
                }
            }
        });
        Connection {
            tx: Some(out_tx),
            rx: in_rx,
            timeout,
            child: None,
            tcp: None,
            broken: None,
        }
    }

    fn usable(&self) -> Result<(), BridgeError> {
        match &self.broken {
            Some(e) => Err(BridgeError::Io(format!(
                "connection unusable after earlier failure ({e})"
            ))),
            None => Ok(()),
        }
    }

    fn fail(&mut self, e: BridgeError) -> BridgeError {
        if !matches!(e, BridgeError::DimMismatch { .. } | BridgeError::Server(_)) {
            self.broken = Some(e.clone());
        }
        e
    }

    pub fn send_raw(&mut self, bytes: Vec<u8>) -> Result<(), BridgeError> {
        self.usable()?;
        let tx = self
            .tx
            .as_ref()
            .ok_or_else(|| BridgeError::Io("write side closed".into()))?;
        tx.send(Outgoing::Bytes(bytes))
            .map_err(|_| BridgeError::Io("writer thread stopped".into()))
    }

    pub fn send(&mut self, frame: &Frame) -> Result<(), BridgeError> {
        self.send_raw(frame.encode())
    }

    /// Closes our sending direction after pending writes; the server sees
    /// end of stream.
    pub fn close_write(&mut self) {
        if let Some(tx) = self.tx.take() {
            let _ = tx.send(Outgoing::Close);
        }
    }

    /// Next frame from the server, waiting at most the configured timeout.
    pub fn receive(&mut self) -> Result<Frame, BridgeError> {
        match self.rx.recv_timeout(self.timeout) {
            Ok(Ok(f)) => Ok(f),
            Ok(Err(e)) => Err(self.fail(e)),
            Err(RecvTimeoutError::Timeout) => Err(self.fail(BridgeError::Timeout {
                seconds: self.timeout.as_secs_f64(),
            })),
            Err(RecvTimeoutError::Disconnected) => Err(self.fail(BridgeError::Io("connection closed".into()))),
        }
    }

    pub fn handshake(&mut self) -> Result<(), BridgeError> {
        let hello = Frame::handshake();
        self.send(&hello)?;
        let reply = self.receive()?;
        if reply != hello {
            let e = match reply.kind {
                FrameKind::Error => BridgeError::Server(reply.message),
                kind => BridgeError::Malformed(format!("handshake answered with {kind:?} frame")),
            };
            return Err(self.fail(e));
        }
        Ok(())
    }

    pub fn denoise(&mut self, x: &Image) -> Result<Image, BridgeError> {
        let request = Frame::request(x)?;
        self.send(&request)?;
        let reply = self.receive()?;
        match reply.kind {
            FrameKind::Response if reply.dims == request.dims => reply.to_image(),
            FrameKind::Response => Err(self.fail(BridgeError::DimMismatch {
                expected: request.dims,
                actual: reply.dims,
            })),
            FrameKind::Error => Err(self.fail(BridgeError::Server(reply.message))),
            kind => Err(self.fail(BridgeError::Malformed(format!("expected a response, got {kind:?}")))),
        }
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        self.close_write();
        if let Some(s) = &self.tcp {
            let _ = s.shutdown(Shutdown::Both);
        }
        if let Some(mut child) = self.child.take() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// A denoiser served by another process.
pub struct BridgeDenoiser {
    conn: Mutex<Connection>,
    transport: Transport,
}

impl fmt::Debug for BridgeDenoiser {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BridgeDenoiser")
            .field("transport", &self.transport)
            .finish()
    }
}

/// Opens a connection and handshakes within `timeout`.
pub fn bridge_denoiser(transport: Transport, timeout: Duration) -> Result<BridgeDenoiser> {
    let conn = Connection::open(&transport, timeout)?;
    Ok(BridgeDenoiser {
        conn: Mutex::new(conn),
        transport,
    })
}

impl Denoiser for BridgeDenoiser {
    fn denoise(&self, x: &Image) -> Result<Image> {
        let mut conn = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        Ok(conn.denoise(x)?)
    }

    fn descriptor(&self) -> String {
        format!("bridge({})", self.transport)
    }
}
