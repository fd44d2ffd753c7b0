//! `key = value` text used for checkpoint configs.

use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default)]
pub struct KvWriter {
    lines: Vec<String>,
}

impl KvWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(mut self, key: &str, value: impl Display) -> Self {
        self.lines.push(format!("{key} = {value}"));
        self
    }

    pub fn finish(self) -> String {
        let mut s = self.lines.join("\n");
        s.push('\n');
        s
    }
}

pub fn get<T: FromStr>(text: &str, key: &str) -> Result<T> {
    let raw = text
        .lines()
        .find_map(|l| {
            let (k, v) = l.split_once('=')?;
            (k.trim() == key).then(|| v.trim())
        })
        .ok_or_else(|| Error::format("checkpoint config", format!("missing key `{key}`")))?;
    raw.parse()
        .map_err(|_| Error::format("checkpoint config", format!("bad value `{raw}` for `{key}`")))
}
