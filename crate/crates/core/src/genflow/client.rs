use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{decode_response, GenOutput, Generator, WireRequest, WireResponse};
use crate::error::{Error, Result};
use crate::imgcore::ImageBuffer;

/// Extra attempts after the first on connection errors and 5xx replies.
pub const DEFAULT_RETRIES: u32 = 2;

const MAX_BODY_BYTES: u64 = 1 << 30;

/// One HTTP exchange as written to a replay log (one JSON object per line).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub request: WireRequest,
    pub status: u16,
    pub response: String,
}

/// Maps a status and raw body to images or the matching error.
fn interpret(status: u16, body: &str, count: u32) -> Result<Vec<ImageBuffer>> {
    if status >= 400 {
        let detail = serde_json::from_str::<WireResponse>(body)
            .ok()
            .and_then(|r| r.error)
            .unwrap_or_else(|| body.chars().take(200).collect());
        return Err(Error::GenerationFailed(format!("HTTP {status}: {detail}")));
    }
    let resp: WireResponse =
        serde_json::from_str(body).map_err(|e| Error::Protocol(format!("malformed generator response: {e}")))?;
    decode_response(&resp, count)
}

/// Client for a generation service at `url` (POST, JSON body).
pub struct HttpGenerator {
    url: String,
    agent: ureq::Agent,
    retries: u32,
    backoff: Duration,
    log: Option<Mutex<File>>,
}

impl HttpGenerator {
    pub fn new(url: &str, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpGenerator {
            url: url.to_owned(),
            agent,
            retries: DEFAULT_RETRIES,
            backoff: Duration::from_millis(200),
            log: None,
        }
    }

    pub fn with_retries(mut self, retries: u32) -> Self {
        self.retries = retries;
        self
    }

    /// Pause before retry `n` is `n * backoff`.
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    /// Appends every exchange that produced a status line to `path`.
    pub fn with_replay_log(mut self, path: &Path) -> Result<Self> {
        let f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        self.log = Some(Mutex::new(f));
        Ok(self)
    }

    fn record(&self, entry: &ReplayEntry) {
        if let Some(log) = &self.log {
            let mut f = log.lock().unwrap_or_else(|p| p.into_inner());
            let line = serde_json::to_string(entry).expect("replay entry serializes");
            if let Err(e) = writeln!(f, "{line}") {
                log::warn!("could not write replay log: {e}");
            }
        }
    }
}

impl Generator for HttpGenerator {
    fn generate(&self, req: &WireRequest) -> Result<GenOutput> {
        let body = serde_json::to_string(req)?;
        let mut last = Error::GeneratorUnreachable(self.url.clone());
        for attempt in 1..=self.retries + 1 {
            if attempt > 1 {
                log::info!("generator retry {} of {} ({last})", attempt - 1, self.retries);
                std::thread::sleep(self.backoff * (attempt - 1));
            }
            let sent = self
                .agent
                .post(&self.url)
                .header("content-type", "application/json")
                .send(body.as_str());
            let mut resp = match sent {
                Ok(r) => r,
                Err(ureq::Error::BadUri(u)) => return Err(Error::invalid(format!("bad generator URL {u}"))),
                Err(e) => {
                    last = Error::GeneratorUnreachable(format!("{}: {e}", self.url));
                    continue;
                }
            };
            let status = resp.status().as_u16();
            let text = resp
                .body_mut()
                .with_config()
                .limit(MAX_BODY_BYTES)
                .read_to_string()
                .map_err(|e| Error::Protocol(format!("unreadable generator response: {e}")))?;
            self.record(&ReplayEntry {
                request: req.clone(),
                status,
                response: text.clone(),
            });
            if status >= 500 {
                last = Error::GenerationFailed(format!("HTTP {status}: {}", text.chars().take(200).collect::<String>()));
                continue;
            }
            let images = interpret(status, &text, req.count)?;
            if attempt > 1 {
                log::info!("generator succeeded after {} retries", attempt - 1);
            }
            return Ok(GenOutput { images, attempts: attempt });
        }
        Err(last)
    }

    fn endpoint(&self) -> Option<String> {
        Some(self.url.clone())
    }
}

/// Answers requests from a replay log; the last recorded exchange for an
/// identical request wins.
pub struct ReplayGenerator {
    entries: Vec<ReplayEntry>,
}

impl ReplayGenerator {
    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for line in BufReader::new(f).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(&line)?);
        }
        Ok(ReplayGenerator { entries })
    }

    pub fn entries(&self) -> &[ReplayEntry] {
        &self.entries
    }
}

impl Generator for ReplayGenerator {
    fn generate(&self, req: &WireRequest) -> Result<GenOutput> {
        let e = self
            .entries
            .iter()
            .rev()
            .find(|e| &e.request == req)
            .ok_or_else(|| Error::GeneratorUnreachable("request not present in replay log".into()))?;
        Ok(GenOutput {
            images: interpret(e.status, &e.response, req.count)?,
            attempts: 1,
        })
    }
}
