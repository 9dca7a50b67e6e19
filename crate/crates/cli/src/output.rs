//! Artifact writing with removal of partial output on failure.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

#[derive(Debug)]
pub struct Artifacts {
    dir: PathBuf,
    written: Vec<PathBuf>,
    preamble: Vec<String>,
}

impl Artifacts {
    pub fn new(dir: &Path, preamble: Vec<String>) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new(), preamble })
    }

    pub fn preamble(&self) -> &[String] {
        &self.preamble
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    pub fn write(&mut self, name: &str, contents: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        if !self.written.contains(&path) {
            self.written.push(path.clone());
        }
        Ok(path)
    }

    /// `text` prefixed with the preamble as `# ` comment lines.
    pub fn write_commented(&mut self, name: &str, text: &str) -> Result<PathBuf> {
        let mut s = String::new();
        for line in &self.preamble {
            s.push_str("# ");
            s.push_str(line);
            s.push('\n');
        }
        s.push_str(text);
        self.write(name, s.as_bytes())
    }

    pub fn cleanup(&mut self) {
        for p in self.written.drain(..) {
            let _ = fs::remove_file(p);
        }
    }
}

/// Runs `body`, deleting everything it wrote when it fails.
pub fn with_cleanup<T>(art: &mut Artifacts, body: impl FnOnce(&mut Artifacts) -> Result<T>) -> Result<T> {
    let result = body(art);
    if result.is_err() {
        art.cleanup();
    }
    result
}

/// File-name friendly form of a curve label.
pub fn slug(label: &str) -> String {
    let chars: Vec<char> = label.chars().collect();
    let digit = |i: Option<usize>| i.and_then(|i| chars.get(i)).is_some_and(|c| c.is_ascii_digit());
    let mut s: String = chars
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let decimal_point = c == '.' && digit(i.checked_sub(1)) && digit(Some(i + 1));
            if c.is_ascii_alphanumeric() || decimal_point {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect();
    while s.contains("__") {
        s = s.replace("__", "_");
    }
    s.trim_matches('_').to_string()
}
