//! Line-oriented `key=value` run summaries.

use std::fmt::Display;

use anyhow::{bail, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary {
    entries: Vec<(String, String)>,
}

impl Summary {
    pub fn push(&mut self, key: &str, value: impl Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    /// Appends every line of a `key = value` config document under `config.`.
    pub fn push_config(&mut self, config_text: &str) {
        for line in config_text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                self.push(&format!("config.{}", k.trim()), v.trim());
            }
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Summary::default();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else { bail!("summary line {}: expected key=value", n + 1) };
            if k.is_empty() || k.contains(char::is_whitespace) {
                bail!("summary line {}: bad key {k:?}", n + 1);
            }
            s.push(k, v);
        }
        Ok(s)
    }

    /// The embedded config as a document `PipelineConfig::from_text` accepts.
    pub fn config_text(&self) -> String {
        self.entries
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("config.").map(|k| format!("{k} = {v}\n")))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use hmdepth_core::PipelineConfig;

    #[test]
    fn round_trip_and_config_recovery() {
        let mut cfg = PipelineConfig::default();
        cfg.training.seed = 42;
        let mut s = Summary::default();
        s.push("clusters", 17);
        s.push("valid_fraction", 0.25);
        s.push_config(&cfg.to_text());
        let back = Summary::parse(&s.to_text()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.get("clusters"), Some("17"));
        assert_eq!(PipelineConfig::from_text(&back.config_text()).unwrap(), cfg);
    }

    #[test]
    fn rejects_garbage() {
        assert!(Summary::parse("no equals sign").is_err());
        assert!(Summary::parse("bad key=1").is_err());
    }
}
