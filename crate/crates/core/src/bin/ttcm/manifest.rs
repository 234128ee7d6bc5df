use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use ttcm::io::write_atomic;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: &'static str,
    pub version: &'static str,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub options: serde_json::Value,
    pub seed: Option<u64>,
    pub exit_code: i32,
    pub error: Option<String>,
    pub wall_time_s: f64,
}

pub struct Recorder {
    started: Instant,
    pub manifest: RunManifest,
}

impl Recorder {
    pub fn new(command: &'static str, options: impl Serialize, seed: Option<u64>) -> Self {
        Self {
            started: Instant::now(),
            manifest: RunManifest {
                command,
                version: env!("CARGO_PKG_VERSION"),
                inputs: Vec::new(),
                outputs: Vec::new(),
                options: serde_json::to_value(options).unwrap_or(serde_json::Value::Null),
                seed,
                exit_code: 0,
                error: None,
                wall_time_s: 0.0,
            },
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.manifest.inputs.push(path.to_path_buf());
    }

    pub fn output(&mut self, path: &Path) {
        self.manifest.outputs.push(path.to_path_buf());
    }

    pub fn finish(mut self, path: &Path, exit_code: i32, error: Option<String>) {
        self.manifest.exit_code = exit_code;
        self.manifest.error = error;
        self.manifest.wall_time_s = self.started.elapsed().as_secs_f64();
        let mut bytes = serde_json::to_vec_pretty(&self.manifest).expect("manifest serializes");
        bytes.push(b'\n');
        if let Err(e) = write_atomic(path, &bytes) {
            eprintln!("warning: could not write manifest {}: {e}", path.display());
        }
    }
}
