use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::model::DEFAULT_REPORT_THRESHOLDS;

/// Service settings, read from a JSON file. Relative paths resolve
/// against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_bind")]
    pub bind: SocketAddr,
    pub data_dir: PathBuf,
    /// Detector backend plugin config.
    pub detector: PathBuf,
    /// Classifier backend plugin config.
    pub classifier: PathBuf,
    /// Extra KB files; the first one is the default for new cases.
    #[serde(default)]
    pub kb: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<String>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub static_dir: Option<PathBuf>,
    #[serde(default = "default_thresholds")]
    pub report_thresholds: Vec<f64>,
    #[serde(default = "default_upload")]
    pub max_upload_bytes: usize,
}

fn default_bind() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8080))
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(2).min(8)
}

fn default_thresholds() -> Vec<f64> {
    DEFAULT_REPORT_THRESHOLDS.to_vec()
}

fn default_upload() -> usize {
    256 * 1024 * 1024
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>, detector: impl Into<PathBuf>, classifier: impl Into<PathBuf>) -> Self {
        Self {
            bind: default_bind(),
            data_dir: data_dir.into(),
            detector: detector.into(),
            classifier: classifier.into(),
            kb: Vec::new(),
            token: None,
            workers: default_workers(),
            static_dir: None,
            report_thresholds: default_thresholds(),
            max_upload_bytes: default_upload(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, String> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut cfg: ServiceConfig = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        if let Some(dir) = path.parent() {
            let fix = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            };
            fix(&mut cfg.data_dir);
            fix(&mut cfg.detector);
            fix(&mut cfg.classifier);
            cfg.kb.iter_mut().for_each(fix);
            cfg.static_dir.as_mut().map(fix);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.workers == 0 {
            return Err("workers must be at least 1".into());
        }
        if let Some(t) = self.report_thresholds.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(format!("report threshold {t} outside [0, 1]"));
        }
        if self.token.as_deref() == Some("") {
            return Err("token must not be empty".into());
        }
        Ok(())
    }
}
