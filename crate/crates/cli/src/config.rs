//! TOML configuration.
//!
//! Looked up from `--config`, then `$PORTRAIT_FORGE_CONFIG`; every key is
//! optional. Documented keys:
//!
//! ```toml
//! seed = 0                      # default seed for seeded commands
//!
//! [face_backend]
//! kind = "stub"                 # stub | external_process | neural_model_file
//! location = "/path/to/server"  # executable or model file
//! args = []
//! timeout_ms = 30000
//! pool_size = 1
//!
//! [generator]
//! kind = "mock"                 # mock | http | replay
//! url = "http://127.0.0.1:7860/generate"
//! timeout_ms = 120000
//! retries = 2
//! replay_log = "gen.jsonl"      # http: append exchanges; replay: read them
//!
//! [filter]                      # FaceDistance filtering
//! mode = "top_k_percent"        # or "quantile"
//! k_percent = 15.0
//! quantile = 0.8
//! min_n = 8
//!
//! [mix]
//! max_concept_share = 0.25
//! min_real_fraction = 0.5
//!
//! [build]
//! confidence_threshold = 0.95
//! level_eyes_above_deg = 1.0
//!
//! buckets = "buckets.txt"       # custom aspect buckets (WxH per line)
//! keypoint_canvas = [1024, 1024]
//!
//! [server]
//! bind = "127.0.0.1:8080"
//! data_dir = "sessions"
//! static_dir = "webui/dist"
//! ```

use std::path::{Path, PathBuf};
use std::time::Duration;

use portrait_forge_core::cropkit::BucketSet;
use portrait_forge_core::datasetkit::{BuildConfig, MixPolicy};
use portrait_forge_core::faceio::BackendConfig;
use portrait_forge_core::genflow::{Generator, HttpGenerator, MockGenerator, ReplayGenerator};
use portrait_forge_core::identity::FilterPolicy;
use portrait_forge_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const CONFIG_ENV: &str = "PORTRAIT_FORGE_CONFIG";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    #[default]
    Mock,
    Http,
    Replay,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub kind: GeneratorKind,
    pub url: Option<String>,
    pub timeout_ms: u64,
    pub retries: u32,
    pub replay_log: Option<PathBuf>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            kind: GeneratorKind::Mock,
            url: None,
            timeout_ms: 120_000,
            retries: portrait_forge_core::genflow::DEFAULT_RETRIES,
            replay_log: None,
        }
    }
}

impl GeneratorConfig {
    pub fn build(&self) -> Result<Box<dyn Generator>> {
        match self.kind {
            GeneratorKind::Mock => Ok(Box::new(MockGenerator)),
            GeneratorKind::Http => {
                let url = self
                    .url
                    .as_deref()
                    .ok_or_else(|| Error::InvalidArgument("generator.url is required for kind = \"http\"".into()))?;
                let mut g = HttpGenerator::new(url, Duration::from_millis(self.timeout_ms)).with_retries(self.retries);
                if let Some(log) = &self.replay_log {
                    g = g.with_replay_log(log)?;
                }
                Ok(Box::new(g))
            }
            GeneratorKind::Replay => {
                let log = self.replay_log.as_deref().ok_or_else(|| {
                    Error::InvalidArgument("generator.replay_log is required for kind = \"replay\"".into())
                })?;
                Ok(Box::new(ReplayGenerator::load(log)?))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub bind: String,
    pub data_dir: PathBuf,
    pub static_dir: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            bind: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("sessions"),
            static_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub face_backend: BackendConfig,
    pub generator: GeneratorConfig,
    pub filter: FilterPolicy,
    pub mix: MixPolicy,
    pub build: BuildConfig,
    pub buckets: Option<PathBuf>,
    pub keypoint_canvas: [u32; 2],
    pub server: ServerConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            face_backend: BackendConfig::default(),
            generator: GeneratorConfig::default(),
            filter: FilterPolicy::default(),
            mix: MixPolicy::default(),
            build: BuildConfig::default(),
            buckets: None,
            keypoint_canvas: [1024, 1024],
            server: ServerConfig::default(),
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidArgument(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Config::parse(&text)?;
        // relative paths in the file are relative to the file
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = cfg.buckets.as_mut() {
            fix(p);
        }
        if let Some(p) = cfg.generator.replay_log.as_mut() {
            fix(p);
        }
        fix(&mut cfg.server.data_dir);
        if let Some(p) = cfg.server.static_dir.as_mut() {
            fix(p);
        }
        Ok(cfg)
    }

    /// `--config` wins over the environment; no file means defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Config> {
        match explicit {
            Some(p) => Config::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Config::load(Path::new(&p)),
                _ => Ok(Config::default()),
            },
        }
    }

    pub fn bucket_set(&self) -> Result<BucketSet> {
        match &self.buckets {
            None => Ok(BucketSet::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::InvalidArgument(format!("cannot read buckets {}: {e}", p.display())))?;
                BucketSet::parse(&text)
            }
        }
    }
}
