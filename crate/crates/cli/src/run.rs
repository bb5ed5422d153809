//! Output directory handling and the run manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use lossforge::par::Execution;

use crate::error::{CliError, Result};
use crate::GlobalArgs;

pub const MANIFEST: &str = "manifest.json";
const DEFAULT_OUT: &str = "lossforge-out";

pub struct Run {
    command: &'static str,
    out: PathBuf,
    pub exec: Execution,
    pub plot: bool,
    settings: BTreeMap<&'static str, Value>,
    inputs: BTreeMap<String, String>,
    outputs: BTreeSet<String>,
}

#[derive(Serialize)]
struct InputDigest<'a> {
    path: &'a str,
    sha256: &'a str,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    tool_version: &'a str,
    config_digest: String,
    settings: &'a BTreeMap<&'static str, Value>,
    inputs: Vec<InputDigest<'a>>,
    outputs: &'a BTreeSet<String>,
    /// Unix seconds; the only line that differs between identical runs.
    timestamp: u64,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(64);
    for b in Sha256::digest(bytes) {
        let _ = write!(s, "{b:02x}");
    }
    s
}

fn execution(jobs: Option<usize>) -> Result<Execution> {
    match jobs {
        Some(0) => Err(CliError::Usage("--jobs must be at least 1".into())),
        Some(1) => Ok(Execution::Sequential),
        #[cfg(feature = "parallel")]
        Some(n) => {
            // A second build_global in the same process is harmless; keep the first pool.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            Ok(Execution::Parallel)
        }
        #[cfg(not(feature = "parallel"))]
        Some(_) => Ok(Execution::Sequential),
        None => Ok(Execution::default()),
    }
}

impl Run {
    pub fn start(command: &'static str, global: &GlobalArgs) -> Result<Run> {
        let out = global.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
        let mut settings = BTreeMap::new();
        settings.insert("global", serde_json::to_value(global).expect("plain data"));
        Ok(Run {
            command,
            out,
            exec: execution(global.jobs)?,
            plot: global.plot,
            settings,
            inputs: BTreeMap::new(),
            outputs: BTreeSet::new(),
        })
    }

    /// Records the effective options of the subcommand.
    pub fn settings<T: Serialize>(&mut self, args: &T) {
        self.settings.insert("command", serde_json::to_value(args).expect("plain data"));
    }

    pub fn track(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path).map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        self.inputs.insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(bytes)
    }

    pub fn read_json<T: DeserializeOwned>(&mut self, path: &Path) -> Result<T> {
        let bytes = self.track(path)?;
        serde_json::from_slice(&bytes)
            .map_err(|e| lossforge::Error::Parse(e.to_string()))
            .map_err(CliError::within(path.display()))
    }

    pub fn read_text(&mut self, path: &Path) -> Result<String> {
        let bytes = self.track(path)?;
        String::from_utf8(bytes).map_err(|_| CliError::Validation(format!("{} is not UTF-8 text", path.display())))
    }

    /// The output directory is only created once there is something to write,
    /// so a run that fails validation leaves nothing behind.
    fn ensure_out(&self) -> Result<()> {
        fs::create_dir_all(&self.out)
            .map_err(|e| CliError::Validation(format!("cannot create output directory {}: {e}", self.out.display())))
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        if name == MANIFEST {
            return Err(CliError::Validation(format!("'{MANIFEST}' is reserved for the run manifest")));
        }
        self.ensure_out()?;
        let path = self.out.join(name);
        fs::write(&path, contents).map_err(|e| CliError::Validation(format!("cannot write {}: {e}", path.display())))?;
        self.outputs.insert(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value).expect("plain data");
        s.push('\n');
        self.write(name, s)
    }

    pub fn finish(self) -> Result<()> {
        let canonical = serde_json::to_string(&self.settings).expect("plain data");
        let manifest = Manifest {
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION"),
            config_digest: format!("sha256:{}", sha256_hex(canonical.as_bytes())),
            settings: &self.settings,
            inputs: self
                .inputs
                .iter()
                .map(|(path, sha256)| InputDigest { path, sha256 })
                .collect(),
            outputs: &self.outputs,
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        };
        let mut s = serde_json::to_string_pretty(&manifest).expect("plain data");
        s.push('\n');
        self.ensure_out()?;
        let path = self.out.join(MANIFEST);
        fs::write(&path, s).map_err(|e| CliError::Validation(format!("cannot write {}: {e}", path.display())))?;
        println!("wrote {} files and {MANIFEST} to {}", self.outputs.len(), self.out.display());
        Ok(())
    }
}
