use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::Result;

/// Plain-text and key-value summary of one command.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Summary {
    pub title: String,
    entries: Vec<(String, String)>,
    notes: Vec<String>,
    pub pass: Option<bool>,
}

impl Summary {
    pub fn new(title: impl Into<String>) -> Self {
        Summary {
            title: title.into(),
            ..Default::default()
        }
    }

    /// Keys use `[a-z0-9_.]`; values must not contain newlines.
    pub fn set(&mut self, key: impl Into<String>, value: impl Display) -> &mut Self {
        let key = key.into();
        debug_assert!(key.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' || c == '.'));
        let value = value.to_string().replace('\n', " ");
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key, value)),
        }
        self
    }

    pub fn note(&mut self, line: impl Into<String>) -> &mut Self {
        self.notes.push(line.into());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn verdict(&self) -> &'static str {
        match self.pass {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "n/a",
        }
    }

    pub fn to_text(&self) -> String {
        let width = self.entries.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut s = format!("{}\n", self.title);
        for (k, v) in &self.entries {
            s.push_str(&format!("  {k:<width$}  {v}\n"));
        }
        for n in &self.notes {
            s.push_str(&format!("  note: {n}\n"));
        }
        if self.pass.is_some() {
            s.push_str(&format!("verdict: {}\n", self.verdict()));
        }
        s
    }

    /// `key=value` lines, with `verdict` last when set.
    pub fn to_kv(&self) -> String {
        let mut s = format!("command={}\n", self.title);
        for (k, v) in &self.entries {
            s.push_str(&format!("{k}={v}\n"));
        }
        if self.pass.is_some() {
            s.push_str(&format!("verdict={}\n", self.verdict()));
        }
        s
    }

    /// Writes `summary.txt` and `summary.kv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join("summary.txt"), self.to_text())?;
        fs::write(dir.join("summary.kv"), self.to_kv())?;
        Ok(())
    }
}

/// Trajectory CSV with columns `t,x1..xd`.
pub fn write_path_csv<W: Write>(mut out: W, times: &[f64], points: &[Vec<f64>]) -> Result<()> {
    let d = points.first().map_or(0, Vec::len);
    let cols: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    writeln!(out, "t,{}", cols.join(","))?;
    for (t, p) in times.iter().zip(points) {
        let row: Vec<String> = p.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(out, "{t:.16e},{}", row.join(","))?;
    }
    Ok(())
}
