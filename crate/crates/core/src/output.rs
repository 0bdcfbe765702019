//! Provenance blocks shared by every CSV and JSON artifact.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::Result;

/// Who produced an artifact and with which resolved settings.
///
/// Parameters are kept sorted so that headers are byte-stable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub params: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new(command: &str) -> Self {
        Provenance {
            tool: "smcurve".to_string(),
            version: crate::VERSION.to_string(),
            command: command.to_string(),
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.params.insert(key.to_string(), value.to_string());
        self
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.params.insert(key.to_string(), value.to_string());
    }

    /// `# key: value` lines preceding a CSV table.
    pub fn write_csv_header<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# {} {} {}", self.tool, self.version, self.command)?;
        for (k, v) in &self.params {
            writeln!(w, "# {k}: {}", v.replace('\n', " "))?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Value {
        json!({
            "tool": self.tool,
            "version": self.version,
            "command": self.command,
            "params": self.params,
        })
    }
}

/// `{"provenance": ..., "<key>": payload}` as pretty JSON with a trailing newline.
pub fn json_envelope<T: Serialize>(provenance: &Provenance, key: &str, payload: &T) -> Result<String> {
    let mut map = serde_json::Map::new();
    map.insert("provenance".to_string(), provenance.to_json());
    map.insert(key.to_string(), serde_json::to_value(payload)?);
    let mut s = serde_json::to_string_pretty(&Value::Object(map))?;
    s.push('\n');
    Ok(s)
}
