#![allow(dead_code)]

//! A tiny static HTTP server over a directory that logs request times.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Instant;

#[derive(Debug, Clone)]
pub struct Hit {
    pub at: Instant,
    pub path: String,
}

type Overrides = Arc<Mutex<HashMap<String, (u16, Vec<u8>)>>>;

pub struct FixtureServer {
    pub base_url: String,
    hits: Arc<Mutex<Vec<Hit>>>,
    overrides: Overrides,
}

impl FixtureServer {
    pub fn serve(root: &Path) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base_url = format!("http://{}/", listener.local_addr().unwrap());
        let hits = Arc::new(Mutex::new(Vec::new()));
        let overrides: Overrides = Arc::default();
        let root = root.to_path_buf();
        let (h, o) = (hits.clone(), overrides.clone());
        thread::spawn(move || {
            for stream in listener.incoming().flatten() {
                let (root, h, o) = (root.clone(), h.clone(), o.clone());
                thread::spawn(move || handle(stream, &root, &h, &o));
            }
        });
        Self {
            base_url,
            hits,
            overrides,
        }
    }

    /// Answers `path` (e.g. "/img/x.jpg") with a fixed status and body.
    pub fn set_override(&self, path: &str, status: u16, body: &[u8]) {
        self.overrides
            .lock()
            .unwrap()
            .insert(path.to_string(), (status, body.to_vec()));
    }

    pub fn hits(&self) -> Vec<Hit> {
        self.hits.lock().unwrap().clone()
    }

    pub fn clear_hits(&self) {
        self.hits.lock().unwrap().clear();
    }
}

fn handle(stream: TcpStream, root: &Path, hits: &Mutex<Vec<Hit>>, overrides: &Overrides) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut request_line = String::new();
    if reader.read_line(&mut request_line).is_err() {
        return;
    }
    let at = Instant::now();
    loop {
        let mut line = String::new();
        match reader.read_line(&mut line) {
            Ok(0) => break,
            Ok(_) if line == "\r\n" || line == "\n" => break,
            Ok(_) => {}
            Err(_) => return,
        }
    }
    let path = request_line.split_whitespace().nth(1).unwrap_or("/").to_string();
    hits.lock().unwrap().push(Hit { at, path: path.clone() });
    let (status, body) = match overrides.lock().unwrap().get(&path) {
        Some(o) => o.clone(),
        None => match std::fs::read(root.join(path.trim_start_matches('/'))) {
            Ok(bytes) => (200, bytes),
            Err(_) => (404, b"not found".to_vec()),
        },
    };
    let reason = if status == 200 { "OK" } else { "Error" };
    let mut out = stream;
    let _ = write!(
        out,
        "HTTP/1.1 {status} {reason}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        body.len()
    );
    let _ = out.write_all(&body);
    let _ = out.flush();
}

/// Every file under `dir` with its bytes, keyed by relative path.
pub fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
