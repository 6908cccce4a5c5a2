//! Rate-limited fetching over HTTP(S) or from a local `file://` mirror.

use std::collections::HashMap;
use std::io::Read;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use url::Url;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FetchError {
    #[error("HTTP {status} for {url}")]
    Status { url: String, status: u16 },
    #[error("network failure for {url}: {message}")]
    Network { url: String, message: String },
    #[error("unsupported URL scheme in {0}")]
    Scheme(String),
}

impl FetchError {
    /// Transport failures and 5xx/429 responses are worth retrying.
    pub fn is_retryable(&self) -> bool {
        match self {
            FetchError::Network { .. } => true,
            FetchError::Status { status, .. } => *status >= 500 || *status == 429,
            FetchError::Scheme(_) => false,
        }
    }
}

/// Source of bytes for the scraper.
pub trait Fetch: Send + Sync {
    fn get(&self, url: &Url) -> Result<Vec<u8>, FetchError>;

    /// Number of requests issued so far.
    fn request_count(&self) -> usize;
}

/// Keeps request start times on the same host at least `interval` apart.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next_slot: Mutex<HashMap<String, Instant>>,
}

impl RateLimiter {
    pub fn new(interval: Duration) -> Self {
        Self {
            interval,
            next_slot: Mutex::new(HashMap::new()),
        }
    }

    /// Blocks until the caller may start a request on `host`.
    pub fn acquire(&self, host: &str) {
        if self.interval.is_zero() {
            return;
        }
        let slot = {
            let mut slots = self.next_slot.lock().unwrap();
            let now = Instant::now();
            let slot = slots.get(host).map_or(now, |&next| next.max(now));
            slots.insert(host.to_string(), slot + self.interval);
            slot
        };
        let now = Instant::now();
        if slot > now {
            thread::sleep(slot - now);
        }
    }
}

/// Default fetcher: `http`/`https` through `ureq`, `file` from disk.
pub struct WebFetcher {
    agent: ureq::Agent,
    limiter: RateLimiter,
    max_retries: u32,
    requests: AtomicUsize,
}

impl WebFetcher {
    pub fn new(min_request_interval: Duration, max_retries: u32) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .http_status_as_error(false)
            .user_agent(concat!("welfare-vision/", env!("CARGO_PKG_VERSION")))
            .build()
            .new_agent();
        Self {
            agent,
            limiter: RateLimiter::new(min_request_interval),
            max_retries,
            requests: AtomicUsize::new(0),
        }
    }

    fn get_once(&self, url: &Url) -> Result<Vec<u8>, FetchError> {
        self.requests.fetch_add(1, Ordering::SeqCst);
        match url.scheme() {
            "file" => {
                let path = url.to_file_path().map_err(|_| FetchError::Scheme(url.to_string()))?;
                std::fs::read(&path).map_err(|e| match e.kind() {
                    std::io::ErrorKind::NotFound => FetchError::Status {
                        url: url.to_string(),
                        status: 404,
                    },
                    _ => FetchError::Network {
                        url: url.to_string(),
                        message: e.to_string(),
                    },
                })
            }
            "http" | "https" => {
                self.limiter.acquire(url.host_str().unwrap_or_default());
                let network = |e: ureq::Error| FetchError::Network {
                    url: url.to_string(),
                    message: e.to_string(),
                };
                let response = self.agent.get(url.as_str()).call().map_err(network)?;
                let status = response.status().as_u16();
                if !(200..300).contains(&status) {
                    return Err(FetchError::Status {
                        url: url.to_string(),
                        status,
                    });
                }
                let mut bytes = Vec::new();
                response
                    .into_body()
                    .into_reader()
                    .read_to_end(&mut bytes)
                    .map_err(|e| FetchError::Network {
                        url: url.to_string(),
                        message: e.to_string(),
                    })?;
                Ok(bytes)
            }
            _ => Err(FetchError::Scheme(url.to_string())),
        }
    }
}

impl Fetch for WebFetcher {
    fn get(&self, url: &Url) -> Result<Vec<u8>, FetchError> {
        let mut attempt = 0;
        loop {
            match self.get_once(url) {
                Err(e) if e.is_retryable() && attempt < self.max_retries => {
                    attempt += 1;
                    log::debug!("retry {attempt}/{} after: {e}", self.max_retries);
                    thread::sleep(Duration::from_millis(50 << attempt.min(6)));
                }
                other => return other,
            }
        }
    }

    fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn limiter_spaces_requests_per_host() {
        let limiter = RateLimiter::new(Duration::from_millis(20));
        let start = Instant::now();
        let mut times = Vec::new();
        for _ in 0..4 {
            limiter.acquire("a");
            times.push(Instant::now());
        }
        for w in times.windows(2) {
            assert!(w[1] - w[0] >= Duration::from_millis(19));
        }
        // A different host is not delayed by the first one.
        let before = Instant::now();
        limiter.acquire("b");
        assert!(before.elapsed() < Duration::from_millis(15));
        assert!(start.elapsed() >= Duration::from_millis(60));
    }

    #[test]
    fn file_urls_read_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.txt");
        std::fs::write(&path, b"hello").unwrap();
        let f = WebFetcher::new(Duration::ZERO, 0);
        let url = Url::from_file_path(&path).unwrap();
        assert_eq!(f.get(&url).unwrap(), b"hello");
        let missing = Url::from_file_path(dir.path().join("nope")).unwrap();
        assert!(matches!(f.get(&missing), Err(FetchError::Status { status: 404, .. })));
        assert_eq!(f.request_count(), 2);
    }

    #[test]
    fn retry_classification() {
        let s = |status| FetchError::Status {
            url: String::new(),
            status,
        };
        assert!(s(503).is_retryable());
        assert!(s(429).is_retryable());
        assert!(!s(404).is_retryable());
    }
}
