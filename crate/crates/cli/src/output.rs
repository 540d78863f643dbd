//! Report files with a provenance header.

use std::fs;
use std::path::PathBuf;

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{Format, RunConfig};
use crate::error::CliError;

pub const TOOL: &str = env!("CARGO_PKG_NAME");
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// The resolved configuration minus output location, its hash and the seed.
pub struct Header {
    echo: Value,
    hash: String,
    seed: u64,
}

impl Header {
    pub fn new(cfg: &RunConfig) -> Self {
        let mut echo = serde_json::to_value(cfg).expect("config serializes");
        if let Value::Object(map) = &mut echo {
            map.remove("output");
        }
        let text = serde_json::to_string(&echo).expect("config serializes");
        let hash = hex::encode(Sha256::digest(text.as_bytes()));
        Self { echo, hash, seed: cfg.plan.seed }
    }

    fn csv_block(&self) -> String {
        format!(
            "# tool: {TOOL} {VERSION}\n# config_sha256: {}\n# seed: {}\n# config: {}\n",
            self.hash, self.seed, self.echo
        )
    }

    fn json_meta(&self) -> Value {
        json!({
            "tool": TOOL,
            "version": VERSION,
            "config_sha256": self.hash,
            "seed": self.seed,
            "config": self.echo,
        })
    }
}

pub struct Writer<'a> {
    cfg: &'a RunConfig,
    header: Header,
    pub written: Vec<PathBuf>,
}

impl<'a> Writer<'a> {
    pub fn new(cfg: &'a RunConfig) -> Result<Self, CliError> {
        fs::create_dir_all(&cfg.output.dir)?;
        Ok(Self { cfg, header: Header::new(cfg), written: Vec::new() })
    }

    /// Writes `name` if CSV output is enabled; `body` may carry its own
    /// leading comment lines.
    pub fn csv(&mut self, name: &str, body: &str) -> Result<(), CliError> {
        if !self.cfg.wants(Format::Csv) {
            return Ok(());
        }
        let path = self.cfg.output.dir.join(name);
        fs::write(&path, format!("{}{body}", self.header.csv_block()))?;
        self.written.push(path);
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, result: &T) -> Result<(), CliError> {
        if !self.cfg.wants(Format::Json) {
            return Ok(());
        }
        let doc = json!({ "meta": self.header.json_meta(), "result": result });
        let path = self.cfg.output.dir.join(name);
        let mut text = serde_json::to_string_pretty(&doc).expect("report serializes");
        text.push('\n');
        fs::write(&path, text)?;
        self.written.push(path);
        Ok(())
    }
}
