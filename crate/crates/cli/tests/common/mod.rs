#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use carbon_tables::catalog::SHIPPED_MATERIAL_BASE;
use carbon_tables::fixtures::HOLLOW_FIBER_DOCUMENT;
use carbon_tables_service::{spawn_server, AppState, JobHooks, ServiceConfig};
use sha2::{Digest, Sha256};
use tempfile::TempDir;
use tokio::runtime::Runtime;

/// A service running on its own runtime for the lifetime of the value.
pub struct Server {
    pub base: String,
    pub state: AppState,
    pub dir: TempDir,
    _runtime: Runtime,
}

pub fn start_server(config: ServiceConfig, hooks: JobHooks) -> Server {
    let dir = tempfile::tempdir().unwrap();
    let config = ServiceConfig {
        listen_addr: SocketAddr::from(([127, 0, 0, 1], 0)),
        data_dir: dir.path().join("data"),
        ..config
    };
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .unwrap();
    let (addr, state) = runtime.block_on(spawn_server(config, hooks)).unwrap();
    Server {
        base: format!("http://{addr}"),
        state,
        dir,
        _runtime: runtime,
    }
}

pub fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_carbon-tables"))
        .args(args)
        .env_remove("CARBON_TABLES_SERVER")
        .output()
        .expect("cli binary runs")
}

pub fn stdout_json(output: &Output) -> serde_json::Value {
    serde_json::from_slice(&output.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&output.stdout),
            String::from_utf8_lossy(&output.stderr)
        )
    })
}

/// Writes the hollow-fiber document and the shipped material base into `dir`.
pub fn hollow_fiber_inputs(dir: &Path) -> (PathBuf, PathBuf) {
    let doc = dir.join("hollow-fiber.json");
    let mb = dir.join("mb.json");
    std::fs::write(&doc, HOLLOW_FIBER_DOCUMENT).unwrap();
    std::fs::write(&mb, SHIPPED_MATERIAL_BASE).unwrap();
    (doc, mb)
}

pub fn sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}
