//! Flat `key=value` record of every resolved parameter of a run.

use std::io::Write;
use std::path::Path;

pub const FILE_NAME: &str = "manifest.txt";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        let mut m = Self::default();
        m.set("command", command);
        m
    }

    /// Sets `key`, keeping the position of an existing entry.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut m = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| format!("line {}: expected key=value", i + 1))?;
            m.set(k.trim(), v.trim());
        }
        if m.get("command").is_none() {
            return Err("manifest has no command entry".into());
        }
        Ok(m)
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Command line that reproduces the run.
    pub fn to_args(&self) -> Result<Vec<String>, String> {
        let command = self.get("command").ok_or("manifest has no command entry")?;
        let mut args = vec!["permcmc".to_string(), command.to_string()];
        for (k, v) in &self.entries {
            if k == "command" || k == "version" {
                continue;
            }
            args.push(format!("--{k}"));
            args.push(v.clone());
        }
        Ok(args)
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        let mut f = std::fs::File::create(dir.join(FILE_NAME))?;
        f.write_all(self.to_text().as_bytes())
    }
}
