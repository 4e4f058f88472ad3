use std::fmt::Display;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};

/// `run.txt`: the command, every parameter, and headline results, one
/// `key = value` per line.
pub struct RunSummary {
    lines: Vec<(String, String)>,
}

impl RunSummary {
    pub fn new(command: &str, seed: u64) -> Self {
        RunSummary {
            lines: vec![
                ("command".into(), command.into()),
                ("seed".into(), seed.to_string()),
            ],
        }
    }

    pub fn param(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.lines.push((key.into(), value.to_string()));
        self
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let text: String = self
            .lines
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        let path = dir.join("run.txt");
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}
