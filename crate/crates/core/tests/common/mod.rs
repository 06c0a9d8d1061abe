//! Shared fixtures: a tiny threaded HTTP server that doubles as a forward
//! proxy, dead endpoints, an engine wired to temp dirs, and the page corpus.

#![allow(dead_code)]

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use chrono::{TimeZone, Utc};

use stw_core::anchor::JournalLedger;
use stw_core::clock::{Clock, FakeClock};
use stw_core::engine::Engine;
use stw_core::ingest::{Fetcher, ProxyEndpoint, ProxyRegistry};
use stw_core::stampcore::TsaKeyPair;
use stw_core::store::Store;
use stw_core::time::Instant;

#[derive(Clone)]
pub struct Page {
    pub status: u16,
    pub content_type: String,
    pub body: Vec<u8>,
}

impl Page {
    pub fn html(body: impl Into<Vec<u8>>) -> Self {
        Self { status: 200, content_type: "text/html; charset=utf-8".into(), body: body.into() }
    }
}

type Routes = Arc<Mutex<HashMap<String, Page>>>;

/// Serves `routes` by path. Absolute-form request targets are accepted too,
/// so the same server works as an HTTP proxy; a proxy consults its own
/// routes first and then the origin's.
pub struct HttpFixture {
    addr: SocketAddr,
    routes: Routes,
    fallback: Option<Routes>,
    hits: Arc<AtomicUsize>,
    stop: Arc<AtomicBool>,
}

impl HttpFixture {
    pub fn origin() -> Self {
        Self::start(None)
    }

    /// A proxy in front of `origin`.
    pub fn proxy_for(origin: &HttpFixture) -> Self {
        Self::start(Some(origin.routes.clone()))
    }

    fn start(fallback: Option<Routes>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind fixture");
        let addr = listener.local_addr().unwrap();
        let routes: Routes = Arc::default();
        let hits = Arc::new(AtomicUsize::new(0));
        let stop = Arc::new(AtomicBool::new(false));
        {
            let routes = routes.clone();
            let fallback = fallback.clone();
            let hits = hits.clone();
            let stop = stop.clone();
            thread::spawn(move || {
                for conn in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(conn) = conn else { continue };
                    let routes = routes.clone();
                    let fallback = fallback.clone();
                    let hits = hits.clone();
                    thread::spawn(move || {
                        hits.fetch_add(1, Ordering::SeqCst);
                        let _ = handle(conn, &routes, fallback.as_ref());
                    });
                }
            });
        }
        Self { addr, routes, fallback, hits, stop }
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// `host:port`, the form proxy registries take.
    pub fn endpoint(&self) -> String {
        self.addr.to_string()
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }

    pub fn set(&self, path: &str, page: Page) {
        self.routes.lock().unwrap().insert(path.to_string(), page);
    }

    pub fn set_html(&self, path: &str, html: &str) {
        self.set(path, Page::html(html.as_bytes().to_vec()));
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

impl Drop for HttpFixture {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the accept loop so it sees the flag.
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_millis(200));
    }
}

fn handle(conn: TcpStream, routes: &Routes, fallback: Option<&Routes>) -> std::io::Result<()> {
    conn.set_read_timeout(Some(Duration::from_secs(5)))?;
    let mut reader = BufReader::new(conn.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" || line == "\n" {
            break;
        }
    }
    let target = request_line.split_whitespace().nth(1).unwrap_or("/").to_string();
    let path = match target.strip_prefix("http://") {
        Some(rest) => rest.find('/').map_or("/".to_string(), |i| rest[i..].to_string()),
        None => target,
    };
    let page = routes
        .lock()
        .unwrap()
        .get(&path)
        .cloned()
        .or_else(|| fallback.and_then(|f| f.lock().unwrap().get(&path).cloned()));
    let page = page.unwrap_or(Page { status: 404, content_type: "text/plain".into(), body: b"not found".to_vec() });
    let mut conn = conn;
    write!(
        conn,
        "HTTP/1.1 {} X\r\nContent-Type: {}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        page.status,
        page.content_type,
        page.body.len()
    )?;
    conn.write_all(&page.body)?;
    conn.flush()
}

/// An address nothing listens on: connections are refused at once.
pub fn dead_endpoint() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    addr.to_string()
}

pub fn t0() -> Instant {
    Utc.with_ymd_and_hms(2016, 7, 1, 9, 0, 0).unwrap()
}

pub fn registry_with(entries: &[(&str, Vec<String>)]) -> ProxyRegistry {
    let mut registry = ProxyRegistry::default();
    for (country, endpoints) in entries {
        let endpoints = endpoints.iter().map(|e| ProxyEndpoint::parse(e).unwrap()).collect();
        registry.set(country, endpoints).unwrap();
    }
    registry
}

/// Engine over a temp dir with a fake clock and a journal ledger.
pub struct TestEngine {
    pub dir: tempfile::TempDir,
    pub clock: Arc<FakeClock>,
    pub engine: Arc<Engine>,
}

impl TestEngine {
    pub fn new(registry: ProxyRegistry) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let clock = Arc::new(FakeClock::new(t0()));
        let store = Store::open(dir.path().join("stw.db"), dir.path().join("snapshots")).unwrap();
        let ledger = JournalLedger::open(dir.path().join("ledger.log")).unwrap();
        let dyn_clock: Arc<dyn Clock> = clock.clone();
        let fetcher = Fetcher::new(Duration::from_secs(5), dyn_clock.clone());
        let engine = Engine::new(
            Arc::new(store),
            fetcher,
            registry,
            TsaKeyPair::generate(),
            Arc::new(ledger),
            dyn_clock,
        )
        .with_server_url("http://stw.test");
        Self { dir, clock, engine: Arc::new(engine) }
    }

    pub fn ledger_path(&self) -> PathBuf {
        self.dir.path().join("ledger.log")
    }
}

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// The stored HTML corpus, sorted by file name.
pub fn corpus() -> Vec<(String, Vec<u8>)> {
    let mut pages: Vec<_> = std::fs::read_dir(fixtures_dir().join("pages"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "html"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    pages.sort();
    pages
}

/// A long-enough article body built from `sentences`.
pub fn article(title: &str, sentences: &[&str]) -> String {
    let paragraphs: String = sentences.iter().map(|s| format!("<p>{s}</p>\n")).collect();
    format!(
        "<html><head><title>{title} | Fixture Times</title></head><body>\
         <nav><a href=\"/\">Home</a> <a href=\"/world\">World</a></nav>\
         <article><h1>{title}</h1>\n{paragraphs}</article>\
         <footer class=\"footer\">Copyright Fixture Times</footer></body></html>"
    )
}
