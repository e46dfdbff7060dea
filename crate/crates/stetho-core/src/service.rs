//! Live distribution of the packet stream to any number of listeners.
//!
//! Stream protocol: a reliable byte stream of `[2-byte big-endian length]
//! [encoded packet]` frames. Control protocol, on a separate port: one text
//! command per line (`SET VOLUME 0.5`, `SET CUTOFF 1000`, `GET STATUS`),
//! answered with `OK`, `ERR <reason>`, or a `STATUS ...` line.
//!
//! One broadcaster owns the listener set. Every listener is fed from its
//! own bounded queue by its own writer thread, so a stalled listener never
//! delays the rest; once its queue tops the configured limit the listener
//! is disconnected instead.

use crate::dsp::{ChainConfig, Cutoff};
use crate::transport::{decode_packet, encode_packet, DecodeError, EncodeError, Packet, MAX_ENCODED_LEN};
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{Receiver, SyncSender, TrySendError};
use std::sync::{mpsc, Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};
use thiserror::Error;

/// Longest frame a listener will accept: one maximally loaded packet.
pub const MAX_FRAME_LEN: usize = MAX_ENCODED_LEN;
/// Listener queue limit before a slow listener is cut off.
pub const DEFAULT_QUEUE_CAPACITY: usize = 256;

const ACCEPT_POLL: Duration = Duration::from_millis(5);

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("frame length {0} outside 1..={MAX_FRAME_LEN}")]
    FrameLength(usize),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
}

#[derive(Debug, Error, PartialEq)]
pub enum ControlError {
    #[error("unknown command")]
    UnknownCommand,
    #[error("malformed command")]
    Malformed,
    #[error("volume must be a number in [0, 1]")]
    VolumeOutOfRange,
    #[error("cutoff must be 100 or 1000")]
    CutoffNotAllowed,
}

/// A validated runtime command.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ControlCommand {
    SetVolume(f64),
    SetCutoff(Cutoff),
    GetStatus,
}

impl ControlCommand {
    /// Parses one line of the control protocol.
    pub fn parse(line: &str) -> Result<Self, ControlError> {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["SET", "VOLUME", value] => {
                let v: f64 = value.parse().map_err(|_| ControlError::VolumeOutOfRange)?;
                Ok(ControlCommand::SetVolume(v))
            }
            ["SET", "CUTOFF", value] => {
                let hz: u32 = value.parse().map_err(|_| ControlError::CutoffNotAllowed)?;
                let cutoff = Cutoff::from_hz(hz).ok_or(ControlError::CutoffNotAllowed)?;
                Ok(ControlCommand::SetCutoff(cutoff))
            }
            ["GET", "STATUS"] => Ok(ControlCommand::GetStatus),
            ["SET", ..] => Err(ControlError::Malformed),
            [] => Err(ControlError::Malformed),
            _ => Err(ControlError::UnknownCommand),
        }
    }
}

/// Applies a command to a configuration, returning the updated copy.
///
/// Rejected commands leave the input untouched. A cutoff change takes effect
/// when the processing loop picks up the new snapshot at its next block
/// boundary; the loop resets its filter state and flips the packet cutoff
/// flag from then on.
pub fn apply_control(cmd: ControlCommand, cfg: &ChainConfig) -> Result<ChainConfig, ControlError> {
    match cmd {
        ControlCommand::SetVolume(v) => {
            if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
                return Err(ControlError::VolumeOutOfRange);
            }
            Ok(ChainConfig { volume: v, ..*cfg })
        }
        ControlCommand::SetCutoff(cutoff) => Ok(ChainConfig { cutoff, ..*cfg }),
        ControlCommand::GetStatus => Ok(*cfg),
    }
}

/// Configuration snapshot shared between control sessions and the
/// processing loop. `generation` bumps on every applied command, so the
/// loop can cheaply detect changes between blocks.
#[derive(Debug, Clone, Copy)]
pub struct ControlState {
    pub config: ChainConfig,
    pub generation: u64,
}

#[derive(Debug, Clone)]
pub struct ServeConfig {
    /// Address for the packet stream listener, e.g. "127.0.0.1:7400".
    pub stream_bind: String,
    /// Address for the control listener.
    pub control_bind: String,
    /// Per-listener queue limit before forced disconnect.
    pub queue_capacity: usize,
    /// Optional SO_SNDBUF override for listener sockets; small values bound
    /// kernel-side buffering so the queue limit governs slow listeners.
    pub send_buffer_bytes: Option<usize>,
    /// Initial chain configuration exposed over the control port.
    pub initial_config: ChainConfig,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            stream_bind: "127.0.0.1:0".into(),
            control_bind: "127.0.0.1:0".into(),
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            send_buffer_bytes: None,
            initial_config: ChainConfig::default(),
        }
    }
}

struct Session {
    id: u64,
    subscribed_at: Instant,
    packets_sent: u64,
    tx: SyncSender<Arc<[u8]>>,
    stream: TcpStream,
    handle: Option<JoinHandle<()>>,
}

/// Snapshot of one live listener session.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionInfo {
    pub id: u64,
    /// Frames queued to this listener since it subscribed.
    pub packets_sent: u64,
    /// Seconds since the listener subscribed.
    pub subscribed_secs: f64,
}

struct ServerInner {
    sessions: Mutex<Vec<Session>>,
    control: Mutex<ControlState>,
    next_session_id: AtomicU64,
    shutdown: AtomicBool,
    queue_capacity: usize,
    send_buffer_bytes: Option<usize>,
}

/// Broadcast server: accepts listeners on the stream port, fans published
/// frames out to all of them, and serves the control protocol.
pub struct StreamServer {
    inner: Arc<ServerInner>,
    stream_addr: SocketAddr,
    control_addr: SocketAddr,
    accept_handles: Vec<JoinHandle<()>>,
}

impl StreamServer {
    pub fn bind(cfg: ServeConfig) -> Result<Self, ServiceError> {
        let stream_listener = TcpListener::bind(&cfg.stream_bind)?;
        let control_listener = TcpListener::bind(&cfg.control_bind)?;
        let stream_addr = stream_listener.local_addr()?;
        let control_addr = control_listener.local_addr()?;
        stream_listener.set_nonblocking(true)?;
        control_listener.set_nonblocking(true)?;

        let inner = Arc::new(ServerInner {
            sessions: Mutex::new(Vec::new()),
            control: Mutex::new(ControlState {
                config: cfg.initial_config,
                generation: 0,
            }),
            next_session_id: AtomicU64::new(0),
            shutdown: AtomicBool::new(false),
            queue_capacity: cfg.queue_capacity,
            send_buffer_bytes: cfg.send_buffer_bytes,
        });

        let accept_inner = Arc::clone(&inner);
        let stream_accept = thread::spawn(move || accept_stream_loop(stream_listener, accept_inner));
        let control_inner = Arc::clone(&inner);
        let control_accept =
            thread::spawn(move || accept_control_loop(control_listener, control_inner));

        Ok(Self {
            inner,
            stream_addr,
            control_addr,
            accept_handles: vec![stream_accept, control_accept],
        })
    }

    pub fn stream_addr(&self) -> SocketAddr {
        self.stream_addr
    }

    pub fn control_addr(&self) -> SocketAddr {
        self.control_addr
    }

    /// Number of currently connected listeners.
    pub fn session_count(&self) -> usize {
        self.inner.sessions.lock().unwrap().len()
    }

    /// Per-listener bookkeeping for the currently live sessions.
    pub fn sessions(&self) -> Vec<SessionInfo> {
        self.inner
            .sessions
            .lock()
            .unwrap()
            .iter()
            .map(|s| SessionInfo {
                id: s.id,
                packets_sent: s.packets_sent,
                subscribed_secs: s.subscribed_at.elapsed().as_secs_f64(),
            })
            .collect()
    }

    /// Current control snapshot.
    pub fn control_state(&self) -> ControlState {
        *self.inner.control.lock().unwrap()
    }

    /// Encodes and broadcasts one packet.
    pub fn publish_packet(&self, packet: &Packet) -> Result<(), ServiceError> {
        let frame = encode_packet(packet)?;
        self.publish_frame(&frame)
    }

    /// Broadcasts one pre-encoded frame to every connected listener.
    ///
    /// Never blocks on a listener: a full queue disconnects that listener.
    pub fn publish_frame(&self, frame: &[u8]) -> Result<(), ServiceError> {
        if frame.is_empty() || frame.len() > MAX_FRAME_LEN {
            return Err(ServiceError::FrameLength(frame.len()));
        }
        let mut chunk = Vec::with_capacity(frame.len() + 2);
        chunk.extend_from_slice(&(frame.len() as u16).to_be_bytes());
        chunk.extend_from_slice(frame);
        let chunk: Arc<[u8]> = chunk.into();

        let mut sessions = self.inner.sessions.lock().unwrap();
        sessions.retain_mut(|session| match session.tx.try_send(Arc::clone(&chunk)) {
            Ok(()) => true,
            Err(TrySendError::Full(_)) | Err(TrySendError::Disconnected(_)) => {
                let _ = session.stream.shutdown(Shutdown::Both);
                detach_writer(session);
                false
            }
        });
        Ok(())
    }

    /// Stops accepting, flushes every listener queue, and closes all
    /// connections. Listeners observe a clean end of stream.
    pub fn shutdown(&self) {
        self.inner.shutdown.store(true, Ordering::SeqCst);
        let sessions = {
            let mut guard = self.inner.sessions.lock().unwrap();
            std::mem::take(&mut *guard)
        };
        for mut session in sessions {
            drop(session.tx);
            if let Some(handle) = session.handle.take() {
                let _ = handle.join();
            }
        }
    }
}

impl Drop for StreamServer {
    fn drop(&mut self) {
        self.shutdown();
        for handle in self.accept_handles.drain(..) {
            let _ = handle.join();
        }
    }
}

/// Detaches a session's writer thread; it exits on its own once the socket
/// shutdown makes its pending write fail.
fn detach_writer(session: &mut Session) {
    drop(session.handle.take());
}

fn set_send_buffer(stream: &TcpStream, bytes: usize) -> io::Result<()> {
    use std::os::fd::AsRawFd;
    let value = bytes as libc::c_int;
    let rc = unsafe {
        libc::setsockopt(
            stream.as_raw_fd(),
            libc::SOL_SOCKET,
            libc::SO_SNDBUF,
            &value as *const libc::c_int as *const libc::c_void,
            std::mem::size_of::<libc::c_int>() as libc::socklen_t,
        )
    };
    if rc != 0 {
        return Err(io::Error::last_os_error());
    }
    Ok(())
}

fn accept_stream_loop(listener: TcpListener, inner: Arc<ServerInner>) {
    loop {
        if inner.shutdown.load(Ordering::SeqCst) {
            return;
        }
        match listener.accept() {
            Ok((stream, _)) => {
                let _ = stream.set_nodelay(true);
                if let Some(bytes) = inner.send_buffer_bytes {
                    let _ = set_send_buffer(&stream, bytes);
                }
                let (tx, rx) = mpsc::sync_channel::<Arc<[u8]>>(inner.queue_capacity);
                let writer = match stream.try_clone() {
                    Ok(w) => w,
                    Err(_) => continue,
                };
                let handle = thread::spawn(move || session_loop(rx, writer));
                inner.sessions.lock().unwrap().push(Session {
                    tx,
                    stream,
                    handle: Some(handle),
                });
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(ACCEPT_POLL),
            Err(_) => return,
        }
    }
}

fn session_loop(rx: Receiver<Arc<[u8]>>, mut stream: TcpStream) {
    for chunk in rx {
        if stream.write_all(&chunk).is_err() {
            return;
        }
    }
    // Channel closed by shutdown: everything queued has been written.
    let _ = stream.shutdown(Shutdown::Write);
}

fn accept_control_loop(listener: TcpListener, inner: Arc<ServerInner>) {
    loop {
        if inner.shutdown.load(Ordering::SeqCst) {
            return;
        }
        match listener.accept() {
            Ok((stream, _)) => {
                let session_inner = Arc::clone(&inner);
                thread::spawn(move || control_session(stream, session_inner));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(ACCEPT_POLL),
            Err(_) => return,
        }
    }
}

fn control_session(stream: TcpStream, inner: Arc<ServerInner>) {
    let reader = match stream.try_clone() {
        Ok(r) => BufReader::new(r),
        Err(_) => return,
    };
    let mut writer = stream;
    for line in reader.lines() {
        let line = match line {
            Ok(l) => l,
            Err(_) => return,
        };
        let reply = handle_control_line(&line, &inner);
        if writer.write_all(reply.as_bytes()).is_err() || writer.write_all(b"\n").is_err() {
            return;
        }
    }
}

fn handle_control_line(line: &str, inner: &ServerInner) -> String {
    let cmd = match ControlCommand::parse(line) {
        Ok(cmd) => cmd,
        Err(e) => return format!("ERR {e}"),
    };
    let mut state = inner.control.lock().unwrap();
    match cmd {
        ControlCommand::GetStatus => format!(
            "STATUS cutoff={} volume={:.3}",
            state.config.cutoff, state.config.volume
        ),
        _ => match apply_control(cmd, &state.config) {
            Ok(updated) => {
                state.config = updated;
                state.generation += 1;
                "OK".to_string()
            }
            Err(e) => format!("ERR {e}"),
        },
    }
}

/// Reads one length-prefixed frame. `Ok(None)` is a clean end of stream at
/// a frame boundary; truncation inside a frame is an error.
pub fn read_frame<R: Read>(reader: &mut R) -> Result<Option<Vec<u8>>, ServiceError> {
    let mut len_buf = [0u8; 2];
    let mut filled = 0;
    while filled < 2 {
        match reader.read(&mut len_buf[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => {
                return Err(ServiceError::Io(io::Error::new(
                    io::ErrorKind::UnexpectedEof,
                    "stream ended inside a frame header",
                )))
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        }
    }
    let len = u16::from_be_bytes(len_buf) as usize;
    if len == 0 || len > MAX_FRAME_LEN {
        return Err(ServiceError::FrameLength(len));
    }
    let mut frame = vec![0u8; len];
    reader.read_exact(&mut frame)?;
    Ok(Some(frame))
}

/// Receives decoded packets from a client connection, in arrival order.
pub trait PacketSink {
    fn on_packet(&mut self, packet: Packet) -> Result<(), ServiceError>;
    /// Called once on clean end of stream so buffered output can be flushed.
    fn on_close(&mut self) -> Result<(), ServiceError> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ListenStats {
    pub packets: u64,
    pub bytes: u64,
}

/// Connects to a broadcast server and forwards every packet to `sink` until
/// the server closes the stream.
pub fn listen_client<A: ToSocketAddrs>(
    addr: A,
    sink: &mut dyn PacketSink,
) -> Result<ListenStats, ServiceError> {
    let stream = TcpStream::connect(addr)?;
    listen_on(stream, sink)
}

/// Same as [`listen_client`] over an established connection.
pub fn listen_on(stream: TcpStream, sink: &mut dyn PacketSink) -> Result<ListenStats, ServiceError> {
    let mut reader = BufReader::new(stream);
    let mut stats = ListenStats::default();
    loop {
        match read_frame(&mut reader)? {
            None => {
                sink.on_close()?;
                return Ok(stats);
            }
            Some(frame) => {
                stats.packets += 1;
                stats.bytes += frame.len() as u64 + 2;
                let packet = decode_packet(&frame)?;
                sink.on_packet(packet)?;
            }
        }
    }
}
