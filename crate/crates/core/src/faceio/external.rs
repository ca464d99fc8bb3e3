use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::Duration;

use super::protocol::{Request, Response};
use super::{FaceBackend, FaceRecord, Landmarks};
use crate::error::{Error, Result};
use crate::imgcore::ImageBuffer;

struct Worker {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
}

impl Worker {
    fn spawn(program: &str, args: &[String]) -> Result<Worker> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Backend(format!("cannot start {program}: {e}")))?;
        let stdin = child.stdin.take().expect("stdin piped");
        let stdout = child.stdout.take().expect("stdout piped");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Worker {
            child,
            stdin,
            lines: rx,
            next_id: 1,
        })
    }

    fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Face backend served by child processes speaking the JSON-lines protocol.
///
/// Requests on one process are strictly serialized; `pool_size` processes
/// are started lazily and used round-robin. A process that times out, exits
/// or emits an unparseable line is killed and replaced on next use.
pub struct ExternalProcessBackend {
    program: String,
    args: Vec<String>,
    timeout: Duration,
    slots: Vec<Mutex<Option<Worker>>>,
    next: AtomicUsize,
}

impl ExternalProcessBackend {
    pub fn new(program: &str, args: &[String], pool_size: usize, timeout: Duration) -> Self {
        ExternalProcessBackend {
            program: program.to_owned(),
            args: args.to_vec(),
            timeout,
            slots: (0..pool_size.max(1)).map(|_| Mutex::new(None)).collect(),
            next: AtomicUsize::new(0),
        }
    }

    fn call(&self, build: impl FnOnce(u64) -> Result<Request>) -> Result<Response> {
        let slot = &self.slots[self.next.fetch_add(1, Ordering::Relaxed) % self.slots.len()];
        let mut guard = slot.lock().unwrap_or_else(|p| p.into_inner());
        if guard.is_none() {
            *guard = Some(Worker::spawn(&self.program, &self.args)?);
        }
        let worker = guard.as_mut().expect("worker present");
        let id = worker.next_id;
        worker.next_id += 1;
        let line = build(id)?.encode();

        let outcome = (|| {
            writeln!(worker.stdin, "{line}")
                .and_then(|_| worker.stdin.flush())
                .map_err(|e| Error::Backend(format!("write to backend failed: {e}")))?;
            let reply = match worker.lines.recv_timeout(self.timeout) {
                Ok(Ok(reply)) => reply,
                Ok(Err(e)) => return Err(Error::Backend(format!("read from backend failed: {e}"))),
                Err(RecvTimeoutError::Timeout) => {
                    return Err(Error::Backend(format!(
                        "backend timed out after {:?}",
                        self.timeout
                    )))
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(Error::Backend("backend process exited".into()))
                }
            };
            let resp = Response::decode(&reply)
                .map_err(|e| Error::Backend(format!("protocol violation: {e}")))?;
            if resp.id != id {
                return Err(Error::Backend(format!(
                    "protocol violation: response id {} for request {id}",
                    resp.id
                )));
            }
            Ok(resp)
        })();

        match outcome {
            Ok(resp) if resp.ok => Ok(resp),
            Ok(resp) => Err(Error::Backend(
                resp.error.unwrap_or_else(|| "backend reported failure".into()),
            )),
            Err(e) => {
                if let Some(w) = guard.take() {
                    w.kill();
                }
                Err(e)
            }
        }
    }
}

impl FaceBackend for ExternalProcessBackend {
    fn detect(&self, img: &ImageBuffer) -> Result<Vec<FaceRecord>> {
        let resp = self.call(|id| Request::detect(id, img))?;
        resp.faces
            .ok_or_else(|| Error::Backend("protocol violation: detect reply without faces".into()))
    }

    fn embed_aligned(&self, crop: &ImageBuffer, landmarks: &Landmarks) -> Result<Vec<f64>> {
        let resp = self.call(|id| Request::embed(id, crop, landmarks))?;
        resp.embedding.ok_or_else(|| {
            Error::Backend("protocol violation: embed reply without embedding".into())
        })
    }
}

impl Drop for ExternalProcessBackend {
    fn drop(&mut self) {
        for slot in &self.slots {
            if let Some(w) = slot.lock().unwrap_or_else(|p| p.into_inner()).take() {
                w.kill();
            }
        }
    }
}
