//! One-thread HTTP/1.1 server that answers requests from a fixed script.

#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::thread::JoinHandle;

pub enum Reply {
    Full { status: u16, body: String },
    /// Declares `declared` bytes but sends only `body`, then hangs up.
    Truncated { declared: usize, body: String },
}

impl Reply {
    pub fn ok(body: impl Into<String>) -> Reply {
        Reply::Full { status: 200, body: body.into() }
    }

    pub fn status(status: u16, body: impl Into<String>) -> Reply {
        Reply::Full { status, body: body.into() }
    }
}

/// Serves `script` in order, one reply per request, and returns the request
/// bodies it saw once the script is exhausted.
pub fn serve(script: Vec<Reply>) -> (String, JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/generate", listener.local_addr().unwrap());
    let handle = std::thread::spawn(move || {
        let mut seen = Vec::new();
        for reply in script {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let l = line.trim_end();
                if l.is_empty() {
                    break;
                }
                if let Some((k, v)) = l.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        len = v.trim().parse().unwrap();
                    }
                }
            }
            let mut body = vec![0u8; len];
            reader.read_exact(&mut body).unwrap();
            seen.push(String::from_utf8(body).unwrap());
            let mut out = stream;
            let (status, declared, body) = match reply {
                Reply::Full { status, body } => (status, body.len(), body),
                Reply::Truncated { declared, body } => (200, declared, body),
            };
            let head = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {declared}\r\nconnection: close\r\n\r\n"
            );
            let _ = out.write_all(head.as_bytes());
            let _ = out.write_all(body.as_bytes());
            let _ = out.flush();
        }
        seen
    });
    (url, handle)
}
