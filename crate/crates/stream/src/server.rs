//! Frame server: one acceptor thread hands connections to a fixed worker
//! pool. Frames are read and checksummed once at startup and served from
//! memory.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{self, BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use sha2::{Digest, Sha256};

use crate::http::{parse_request, read_head};
use crate::StreamError;

pub const DEFAULT_WORKERS: usize = 16;
const IDLE_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone)]
pub struct ServeOptions {
    /// Worker threads, each serving one connection at a time.
    pub workers: usize,
    /// Frame names that must be present, e.g. one per resolution level.
    pub required: Vec<String>,
    /// Bind address; port 0 picks a free port.
    pub host: String,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            workers: DEFAULT_WORKERS,
            required: Vec::new(),
            host: "127.0.0.1".into(),
        }
    }
}

/// Stops the server from another thread, e.g. a signal handler.
#[derive(Clone)]
pub struct ShutdownTrigger {
    stop: Arc<AtomicBool>,
    addr: SocketAddr,
}

impl ShutdownTrigger {
    pub fn trigger(&self) {
        if !self.stop.swap(true, Ordering::SeqCst) {
            // Wake the blocking accept so it observes the flag.
            let _ = TcpStream::connect_timeout(&self.addr, Duration::from_secs(1));
        }
    }

    pub fn is_triggered(&self) -> bool {
        self.stop.load(Ordering::SeqCst)
    }
}

pub struct ServerHandle {
    addr: SocketAddr,
    trigger: ShutdownTrigger,
    checksums: BTreeMap<String, [u8; 32]>,
    open: Arc<Mutex<HashMap<u64, TcpStream>>>,
    acceptor: Option<JoinHandle<()>>,
    workers: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn port(&self) -> u16 {
        self.addr.port()
    }

    /// URL of a served frame, e.g. `http://127.0.0.1:8080/frames/a.ply`.
    pub fn frame_url(&self, name: &str) -> String {
        format!("http://{}/frames/{name}", self.addr)
    }

    /// SHA-256 of every served frame, computed when the file was loaded.
    pub fn checksums(&self) -> &BTreeMap<String, [u8; 32]> {
        &self.checksums
    }

    pub fn shutdown_trigger(&self) -> ShutdownTrigger {
        self.trigger.clone()
    }

    /// Blocks until the trigger fires, then shuts down.
    pub fn wait(mut self) {
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
        self.shutdown();
    }

    /// Stops accepting, closes open connections and joins all threads.
    pub fn shutdown(&mut self) {
        self.trigger.trigger();
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
        for (_, s) in self.open.lock().unwrap().drain() {
            let _ = s.shutdown(Shutdown::Both);
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Serves every `*.ply` file in `frame_dir` at `/frames/<file name>`.
pub fn serve(frame_dir: &Path, port: u16) -> Result<ServerHandle, StreamError> {
    serve_with(frame_dir, port, &ServeOptions::default())
}

pub fn serve_with(frame_dir: &Path, port: u16, opts: &ServeOptions) -> Result<ServerHandle, StreamError> {
    let missing = |detail: String| StreamError::MissingFrames {
        dir: frame_dir.to_path_buf(),
        detail,
    };
    let entries = fs::read_dir(frame_dir).map_err(|e| missing(e.to_string()))?;
    let mut frames = HashMap::new();
    let mut checksums = BTreeMap::new();
    for entry in entries {
        let path = entry?.path();
        if !path.is_file() || path.extension().and_then(|e| e.to_str()) != Some("ply") {
            continue;
        }
        let Some(name) = path.file_name().and_then(|n| n.to_str()).map(str::to_string) else {
            continue;
        };
        let bytes = fs::read(&path)?;
        checksums.insert(name.clone(), Sha256::digest(&bytes).into());
        frames.insert(name, bytes);
    }
    if frames.is_empty() {
        return Err(missing("no .ply files".into()));
    }
    let absent: Vec<&str> = opts
        .required
        .iter()
        .filter(|n| !frames.contains_key(n.as_str()))
        .map(String::as_str)
        .collect();
    if !absent.is_empty() {
        return Err(missing(format!("required frames absent: {}", absent.join(", "))));
    }

    let listener = TcpListener::bind((opts.host.as_str(), port)).map_err(|e| match e.kind() {
        io::ErrorKind::AddrInUse => StreamError::PortInUse(port),
        _ => StreamError::Io(e),
    })?;
    let addr = listener.local_addr()?;
    let trigger = ShutdownTrigger {
        stop: Arc::new(AtomicBool::new(false)),
        addr,
    };
    let frames = Arc::new(frames);
    let open = Arc::new(Mutex::new(HashMap::new()));
    let (tx, rx) = crossbeam_channel::bounded::<TcpStream>(opts.workers.max(1) * 4);

    let workers = (0..opts.workers.max(1))
        .map(|_| {
            let rx = rx.clone();
            let frames = Arc::clone(&frames);
            let open = Arc::clone(&open);
            let stop = Arc::clone(&trigger.stop);
            thread::spawn(move || {
                static NEXT_ID: AtomicU64 = AtomicU64::new(0);
                for stream in rx.iter() {
                    if stop.load(Ordering::SeqCst) {
                        continue;
                    }
                    let id = NEXT_ID.fetch_add(1, Ordering::Relaxed);
                    if let Ok(clone) = stream.try_clone() {
                        open.lock().unwrap().insert(id, clone);
                    }
                    let _ = handle_connection(stream, &frames, &stop);
                    open.lock().unwrap().remove(&id);
                }
            })
        })
        .collect();

    let stop = Arc::clone(&trigger.stop);
    let acceptor = thread::spawn(move || {
        for stream in listener.incoming() {
            if stop.load(Ordering::SeqCst) {
                break;
            }
            if let Ok(s) = stream {
                if tx.send(s).is_err() {
                    break;
                }
            }
        }
    });

    Ok(ServerHandle {
        addr,
        trigger,
        checksums,
        open,
        acceptor: Some(acceptor),
        workers,
    })
}

fn handle_connection(stream: TcpStream, frames: &HashMap<String, Vec<u8>>, stop: &AtomicBool) -> io::Result<()> {
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(IDLE_TIMEOUT))?;
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    while !stop.load(Ordering::SeqCst) {
        let Some(head) = read_head(&mut reader)? else {
            return Ok(());
        };
        let Some(req) = parse_request(&head) else {
            respond(&mut writer, 400, "Bad Request", b"bad request\n", false)?;
            return Ok(());
        };
        let keep = req.keep_alive;
        if req.method != "GET" {
            respond(&mut writer, 405, "Method Not Allowed", b"only GET\n", keep)?;
        } else if let Some(frame) = req.path.strip_prefix("/frames/").and_then(|name| frames.get(name)) {
            respond(&mut writer, 200, "OK", frame, keep)?;
        } else {
            respond(&mut writer, 404, "Not Found", b"not found\n", keep)?;
        }
        if !keep {
            return Ok(());
        }
    }
    Ok(())
}

fn respond(w: &mut TcpStream, code: u16, reason: &str, body: &[u8], keep: bool) -> io::Result<()> {
    let conn = if keep { "keep-alive" } else { "close" };
    let head = format!(
        "HTTP/1.1 {code} {reason}\r\nContent-Type: application/octet-stream\r\nContent-Length: {}\r\nConnection: {conn}\r\n\r\n",
        body.len()
    );
    w.write_all(head.as_bytes())?;
    w.write_all(body)?;
    w.flush()
}
