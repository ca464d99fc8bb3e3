//! Shared fixtures: a scripted face backend, an in-process server and a
//! small JSON client.

#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::Path;
use std::process::{Command, Output};
use std::sync::{mpsc, Arc};

use portrait_forge::server::{self, AppState};
use portrait_forge_core::faceio::protocol::encode_png_b64;
use portrait_forge_core::faceio::{landmark, stub_embedding, FaceBackend, FaceRecord, Landmarks, StubBackend};
use portrait_forge_core::{Error, ImageBuffer, Result};
use serde_json::Value;

/// Marker colour of pixel (0, 0) that tells [`ScriptedBackend`] what to do.
pub const NO_FACE: [u8; 3] = [255, 0, 0];
pub const BACKEND_DOWN: [u8; 3] = [0, 255, 0];
/// With red = `YAW_TAG`, the blue channel is the yaw in degrees.
pub const YAW_TAG: u8 = 7;

/// Stub geometry, driven by the colour of the top-left pixel.
pub struct ScriptedBackend;

impl FaceBackend for ScriptedBackend {
    fn detect(&self, img: &ImageBuffer) -> Result<Vec<FaceRecord>> {
        let px: [u8; 3] = img.pixel(0, 0)[..3].try_into().unwrap();
        if px == NO_FACE {
            return Ok(vec![]);
        }
        if px == BACKEND_DOWN {
            return Err(Error::Backend("scripted outage".into()));
        }
        let mut face = StubBackend::face_for(img.width(), img.height());
        face.yaw_deg = None;
        if px[0] == YAW_TAG {
            let lm = &mut face.landmarks;
            let l = lm[landmark::LEFT_EYE];
            let r = lm[landmark::RIGHT_EYE];
            let iod = (r.x - l.x).hypot(r.y - l.y);
            let yaw = (px[2] as f64).to_radians();
            lm[landmark::NOSE].x = (l.x + r.x) / 2.0 + yaw.sin() / 2.0 * iod;
        }
        Ok(vec![face])
    }

    fn embed_aligned(&self, crop: &ImageBuffer, _lm: &Landmarks) -> Result<Vec<f64>> {
        Ok(stub_embedding(crop))
    }
}

/// A 96x96 test picture; `k` varies the content, `marker` sets pixel (0, 0).
pub fn picture(k: u32, marker: Option<[u8; 3]>) -> ImageBuffer {
    ImageBuffer::from_fn(96, 96, |x, y| {
        if (x, y) == (0, 0) {
            if let Some(m) = marker {
                return m;
            }
        }
        let v = ((x * (k + 1) + y * (k * 3 + 2)) % 251) as u8;
        [v, v.wrapping_mul(3), 40 + (k * 17 % 200) as u8]
    })
    .unwrap()
}

pub fn b64(img: &ImageBuffer) -> String {
    encode_png_b64(img).unwrap()
}

/// Runs the API on an ephemeral port on its own runtime thread.
pub fn start_server(backend: Arc<dyn FaceBackend>, data_dir: &Path) -> Api {
    let state = Arc::new(AppState::load(data_dir, backend).unwrap());
    let (tx, rx) = mpsc::channel::<SocketAddr>();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap();
        rt.block_on(async move {
            let l = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(l.local_addr().unwrap()).unwrap();
            server::serve(l, state, None).await.unwrap();
        });
    });
    Api::new(&format!("http://{}/api/v1", rx.recv().unwrap()))
}

pub struct Api {
    pub base: String,
    agent: ureq::Agent,
}

impl Api {
    pub fn new(base: &str) -> Api {
        let agent = ureq::Agent::new_with_config(ureq::Agent::config_builder().http_status_as_error(false).build());
        Api {
            base: base.to_owned(),
            agent,
        }
    }

    fn finish(resp: std::result::Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> (u16, Value) {
        let mut resp = resp.expect("request reached the server");
        let status = resp.status().as_u16();
        let text = resp.body_mut().with_config().limit(256 << 20).read_to_string().unwrap();
        (status, serde_json::from_str(&text).unwrap_or(Value::String(text)))
    }

    pub fn post(&self, path: &str, body: &Value, key: Option<&str>) -> (u16, Value) {
        let mut req = self.agent.post(format!("{}{path}", self.base)).content_type("application/json");
        if let Some(k) = key {
            req = req.header("Idempotency-Key", k);
        }
        Api::finish(req.send(body.to_string()))
    }

    pub fn get(&self, path: &str) -> (u16, Value) {
        Api::finish(self.agent.get(format!("{}{path}", self.base)).call())
    }
}

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_portrait-forge"));
    c.env_remove("PORTRAIT_FORGE_CONFIG");
    c
}

pub fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

pub fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&o.stdout),
            String::from_utf8_lossy(&o.stderr)
        )
    })
}
