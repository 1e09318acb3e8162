use std::path::PathBuf;

use stereoscope_core::scoring::RemoteConfig;

pub const DEFAULT_PORT: u16 = 8617;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub port: u16,
    /// Projects are written here after every change and reloaded at start.
    pub data_dir: Option<PathBuf>,
    /// Origins allowed to call the API from a browser.
    pub cors_origins: Vec<String>,
    /// Scoring jobs allowed to run at once.
    pub workers: usize,
    /// Batch size, timeout and retry policy for remote providers.
    pub remote: RemoteConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            port: DEFAULT_PORT,
            data_dir: None,
            cors_origins: Vec::new(),
            workers: 2,
            remote: RemoteConfig::new(""),
        }
    }
}
