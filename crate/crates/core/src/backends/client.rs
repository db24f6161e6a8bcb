use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{BackendEndpoint, BackendError, Result};

pub const REQUEST_ID_HEADER: &str = "x-request-id";

/// Counting semaphore bounding concurrent requests to one endpoint.
struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

enum Attempt<T> {
    Done(T),
    Transient(BackendError),
    Fatal(BackendError),
}

pub(crate) struct HttpClient {
    agent: ureq::Agent,
    base: String,
    max_batch: usize,
    max_retries: u32,
    backoff: Duration,
    in_flight: Semaphore,
    sent: AtomicUsize,
}

impl HttpClient {
    pub(crate) fn new(ep: &BackendEndpoint) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(ep.timeout_ms)))
            .http_status_as_error(false)
            .build();
        HttpClient {
            agent: ureq::Agent::new_with_config(config),
            base: ep.url.trim_end_matches('/').to_owned(),
            max_batch: ep.max_batch,
            max_retries: ep.max_retries,
            backoff: Duration::from_millis(ep.backoff_ms),
            in_flight: Semaphore::new(ep.max_in_flight),
            sent: AtomicUsize::new(0),
        }
    }

    pub(crate) fn requests_sent(&self) -> usize {
        self.sent.load(Ordering::SeqCst)
    }

    /// Splits `items` at `max_batch`, runs the chunks concurrently and
    /// concatenates the results in input order. Each chunk must yield
    /// exactly one output per input.
    pub(crate) fn chunked<I, O, F>(&self, items: &[I], call: F) -> Result<Vec<O>>
    where
        I: Sync,
        O: Send,
        F: Fn(&[I]) -> Result<Vec<O>> + Sync,
    {
        if items.is_empty() {
            return Ok(Vec::new());
        }
        let chunks: Vec<&[I]> = items.chunks(self.max_batch).collect();
        let results: Vec<Result<Vec<O>>> = if chunks.len() == 1 {
            vec![call(chunks[0])]
        } else {
            std::thread::scope(|scope| {
                let handles: Vec<_> = chunks
                    .iter()
                    .map(|chunk| {
                        let call = &call;
                        scope.spawn(move || call(chunk))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("backend worker panicked"))
                    .collect()
            })
        };
        let mut out = Vec::with_capacity(items.len());
        for (chunk, result) in chunks.iter().zip(results) {
            let outputs = result?;
            if outputs.len() != chunk.len() {
                return Err(BackendError::LengthMismatch {
                    expected: chunk.len(),
                    got: outputs.len(),
                });
            }
            out.extend(outputs);
        }
        Ok(out)
    }

    /// POST with a fresh request id that is reused across retries.
    pub(crate) fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        let url = format!("{}{}", self.base, path);
        let request_id = uuid::Uuid::new_v4().to_string();
        self.with_retries(&url, || {
            self.agent
                .post(&url)
                .header(REQUEST_ID_HEADER, &request_id)
                .send_json(body)
        })
    }

    pub(crate) fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        let url = format!("{}{}", self.base, path);
        self.with_retries(&url, || self.agent.get(&url).call())
    }

    pub(crate) fn get_ok(&self, path: &str) -> Result<()> {
        let url = format!("{}{}", self.base, path);
        let _permit = self.in_flight.acquire();
        self.sent.fetch_add(1, Ordering::SeqCst);
        match self.agent.get(&url).call() {
            Ok(resp) if resp.status().is_success() => Ok(()),
            Ok(resp) => Err(BackendError::Protocol {
                url,
                status: resp.status().as_u16(),
                message: "health check failed".into(),
                ids: Vec::new(),
            }),
            Err(e) => Err(BackendError::Transport {
                url,
                message: e.to_string(),
                ids: Vec::new(),
            }),
        }
    }

    fn with_retries<T, S>(&self, url: &str, send: S) -> Result<T>
    where
        T: DeserializeOwned,
        S: Fn() -> std::result::Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    {
        let mut attempt = 0u32;
        loop {
            let outcome = {
                let _permit = self.in_flight.acquire();
                self.sent.fetch_add(1, Ordering::SeqCst);
                self.attempt(url, send())
            };
            match outcome {
                Attempt::Done(v) => return Ok(v),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Transient(e) if attempt >= self.max_retries => return Err(e),
                Attempt::Transient(e) => {
                    log::debug!("retrying {url} after transient failure: {e}");
                    std::thread::sleep(self.backoff * 2u32.saturating_pow(attempt));
                    attempt += 1;
                }
            }
        }
    }

    fn attempt<T: DeserializeOwned>(
        &self,
        url: &str,
        sent: std::result::Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    ) -> Attempt<T> {
        let mut resp = match sent {
            Ok(r) => r,
            Err(e) => {
                let err = BackendError::Transport {
                    url: url.to_owned(),
                    message: e.to_string(),
                    ids: Vec::new(),
                };
                return match e {
                    ureq::Error::Io(_) | ureq::Error::Timeout(_) | ureq::Error::ConnectionFailed => {
                        Attempt::Transient(err)
                    }
                    _ => Attempt::Fatal(err),
                };
            }
        };
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            let message = resp
                .body_mut()
                .read_to_string()
                .unwrap_or_default()
                .chars()
                .take(500)
                .collect();
            let err = BackendError::Protocol {
                url: url.to_owned(),
                status,
                message,
                ids: Vec::new(),
            };
            return if status == 429 || status >= 500 {
                Attempt::Transient(err)
            } else {
                Attempt::Fatal(err)
            };
        }
        match resp.body_mut().read_json::<T>() {
            Ok(v) => Attempt::Done(v),
            Err(e) => Attempt::Fatal(BackendError::Decode {
                url: url.to_owned(),
                message: e.to_string(),
            }),
        }
    }
}
