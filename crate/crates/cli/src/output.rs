//! CSV files headed by the config hash, and the per-run manifest.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::config::Settings;
use crate::CliError;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Usage(format!("{}: {e}", path.display()))
}

pub struct OutDir {
    pub dir: PathBuf,
    hash: String,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(dir: PathBuf, settings: &Settings) -> Result<Self, CliError> {
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        Ok(Self {
            dir,
            hash: settings.hash(),
            written: Vec::new(),
        })
    }

    pub fn csv(&mut self, name: &str, columns: &[&str]) -> Result<Csv, CliError> {
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(|e| io_err(&path, e))?;
        let mut csv = Csv {
            out: BufWriter::new(file),
            path,
            width: columns.len(),
        };
        csv.line(&format!("# config_hash={}", self.hash))?;
        csv.line(&columns.join(","))?;
        self.written.push(name.to_string());
        Ok(csv)
    }

    pub fn path(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_string());
        self.dir.join(name)
    }

    /// Writes `manifest.txt`: timestamp, command, hash, resolved settings and outputs.
    pub fn finish(self, settings: &Settings) -> Result<(), CliError> {
        let stamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let mut text = format!(
            "timestamp = {stamp}\ncommand = {}\nconfig_hash = {}\n\n# resolved configuration\n{}\n# outputs\n",
            settings.command(),
            self.hash,
            settings.render()
        );
        for name in &self.written {
            text.push_str(name);
            text.push('\n');
        }
        let path = self.dir.join("manifest.txt");
        fs::write(&path, text).map_err(|e| io_err(&path, e))
    }
}

pub struct Csv {
    out: BufWriter<File>,
    path: PathBuf,
    width: usize,
}

impl Csv {
    fn line(&mut self, s: &str) -> Result<(), CliError> {
        writeln!(self.out, "{s}").map_err(|e| io_err(&self.path, e))
    }

    pub fn row(&mut self, fields: &[String]) -> Result<(), CliError> {
        debug_assert_eq!(fields.len(), self.width);
        debug_assert!(fields.iter().all(|f| !f.contains(',') && !f.contains('\n')));
        self.line(&fields.join(","))
    }

    pub fn close(mut self) -> Result<(), CliError> {
        self.out.flush().map_err(|e| io_err(&self.path, e))
    }
}

/// Shortest round-trip formatting.
pub fn num(v: f64) -> String {
    format!("{v}")
}
