//! Just enough HTTP/1.1 for fixed-length GET exchanges.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use crate::StreamError;

pub(crate) const MAX_HEAD_BYTES: usize = 16 * 1024;
const MAX_HEADERS: usize = 32;

/// Reads one request or response head, up to and including the blank line.
/// Returns `Ok(None)` on a clean EOF before any byte arrives.
pub(crate) fn read_head<R: BufRead>(r: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut head = Vec::with_capacity(256);
    loop {
        let before = head.len();
        let n = r.read_until(b'\n', &mut head)?;
        if n == 0 {
            if head.is_empty() {
                return Ok(None);
            }
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "truncated HTTP head"));
        }
        let line = &head[before..];
        if line == b"\r\n" || line == b"\n" {
            if before == 0 {
                // Tolerate stray blank lines between messages.
                head.clear();
                continue;
            }
            return Ok(Some(head));
        }
        if head.len() > MAX_HEAD_BYTES {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "HTTP head too large"));
        }
    }
}

pub(crate) struct RequestHead {
    pub method: String,
    pub path: String,
    pub keep_alive: bool,
}

pub(crate) fn parse_request(head: &[u8]) -> Option<RequestHead> {
    let mut headers = [httparse::EMPTY_HEADER; MAX_HEADERS];
    let mut req = httparse::Request::new(&mut headers);
    match req.parse(head) {
        Ok(httparse::Status::Complete(_)) => {}
        _ => return None,
    }
    let version = req.version?;
    let connection = header(req.headers, "connection").map(|v| v.to_ascii_lowercase());
    let keep_alive = match connection.as_deref() {
        Some(v) if v.contains("close") => false,
        Some(v) if v.contains("keep-alive") => true,
        _ => version >= 1,
    };
    Some(RequestHead {
        method: req.method?.to_string(),
        path: req.path?.to_string(),
        keep_alive,
    })
}

fn header(headers: &[httparse::Header<'_>], name: &str) -> Option<String> {
    headers
        .iter()
        .find(|h| h.name.eq_ignore_ascii_case(name))
        .and_then(|h| std::str::from_utf8(h.value).ok())
        .map(|s| s.trim().to_string())
}

/// A client connection that issues sequential GETs, reusing the socket while
/// the server keeps it open.
pub struct HttpConnection {
    host: String,
    reader: BufReader<TcpStream>,
}

impl HttpConnection {
    pub fn connect(host_port: &str, timeout: Duration) -> Result<Self, StreamError> {
        let fail = |reason: String| StreamError::ConnectionFailed {
            target: host_port.to_string(),
            reason,
        };
        let addr = host_port
            .to_socket_addrs()
            .map_err(|e| fail(e.to_string()))?
            .next()
            .ok_or_else(|| fail("no address".into()))?;
        let stream = TcpStream::connect_timeout(&addr, timeout).map_err(|e| fail(e.to_string()))?;
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(timeout))?;
        stream.set_write_timeout(Some(timeout))?;
        Ok(Self {
            host: host_port.to_string(),
            reader: BufReader::with_capacity(64 * 1024, stream),
        })
    }

    /// Fetches `path`. Returns the status code, the body, and whether the
    /// server will keep the connection open.
    pub fn get(&mut self, path: &str, close: bool) -> Result<(u16, Vec<u8>, bool), StreamError> {
        let conn = if close { "close" } else { "keep-alive" };
        let req = format!(
            "GET {path} HTTP/1.1\r\nHost: {}\r\nConnection: {conn}\r\n\r\n",
            self.host
        );
        self.reader.get_mut().write_all(req.as_bytes())?;

        let head = read_head(&mut self.reader)?
            .ok_or_else(|| StreamError::HttpError("connection closed before response".into()))?;
        let mut headers = [httparse::EMPTY_HEADER; MAX_HEADERS];
        let mut resp = httparse::Response::new(&mut headers);
        match resp.parse(&head) {
            Ok(httparse::Status::Complete(_)) => {}
            _ => return Err(StreamError::HttpError("malformed response head".into())),
        }
        let status = resp.code.unwrap_or(0);
        let len: usize = header(resp.headers, "content-length")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| StreamError::HttpError("response without Content-Length".into()))?;
        let keep = !close
            && !header(resp.headers, "connection")
                .map(|v| v.eq_ignore_ascii_case("close"))
                .unwrap_or(false);
        let mut body = vec![0u8; len];
        self.reader.read_exact(&mut body)?;
        Ok((status, body, keep))
    }
}
