//! Run manifests: a key-value text file written atomically next to each
//! command's primary output, carrying everything needed to reproduce the run.

use std::fmt::Display;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ride_core::hash::Fnv1a64;

pub struct Manifest {
    entries: Vec<(String, String)>,
    started: Instant,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        let mut m = Manifest {
            entries: Vec::new(),
            started: Instant::now(),
        };
        m.add("command", command);
        m
    }

    pub fn add(&mut self, key: &str, value: impl Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn add_path(&mut self, key: &str, path: &Path) {
        self.add(key, path.display());
    }

    /// Records the file's FNV-1a 64 content hash, e.g. for model files.
    pub fn add_file_hash(&mut self, key: &str, path: &Path) -> io::Result<()> {
        let mut hasher = Fnv1a64::new();
        hasher.update(&fs::read(path)?);
        self.add(key, format!("{:016x}", hasher.finish()));
        Ok(())
    }

    /// Appends the wall-clock duration and writes atomically (temp file in
    /// the same directory, then rename).
    pub fn write(mut self, path: &Path) -> io::Result<()> {
        self.add("duration_ms", self.started.elapsed().as_millis());
        let mut text = String::new();
        for (k, v) in &self.entries {
            text.push_str(k);
            text.push(' ');
            text.push_str(v);
            text.push('\n');
        }
        let tmp = tmp_path(path);
        fs::write(&tmp, text)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Manifest location for a command whose primary output is `primary`.
pub fn manifest_path(primary: &Path) -> PathBuf {
    let mut name = primary.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest");
    primary.with_file_name(name)
}
