//! Optional JSON configuration file.
//!
//! The file is an object with optional top-level `jobs` and `seed` keys and
//! one object per subcommand, keyed by the subcommand name, whose keys are
//! the long flag names in snake case. Flags given on the command line win.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

#[derive(Debug, Default, Clone)]
pub struct FileConfig {
    root: Map<String, Value>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        match serde_json::from_str(text)? {
            Value::Object(root) => Ok(Self { root }),
            _ => bail!("config must be a JSON object"),
        }
    }

    pub fn get<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>> {
        self.root
            .get(key)
            .map(|v| {
                serde_json::from_value(v.clone()).with_context(|| format!("config key `{key}`"))
            })
            .transpose()
    }

    /// Overlays the flags that were actually given onto the `section`
    /// object. Unset options, false switches and empty lists count as not
    /// given.
    pub fn merge<T: Serialize + DeserializeOwned>(&self, section: &str, cli: &T) -> Result<T> {
        let mut merged = match self.root.get(section) {
            None => Map::new(),
            Some(Value::Object(m)) => m.clone(),
            Some(_) => bail!("config section `{section}` must be an object"),
        };
        let Value::Object(given) = serde_json::to_value(cli)? else {
            bail!("flags for `{section}` are not a struct");
        };
        for (k, v) in given {
            let unset = match &v {
                Value::Null | Value::Bool(false) => true,
                Value::Array(a) => a.is_empty(),
                _ => false,
            };
            if !unset || !merged.contains_key(&k) {
                merged.insert(k, v);
            }
        }
        serde_json::from_value(Value::Object(merged))
            .with_context(|| format!("config section `{section}`"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Opts {
        size: Option<usize>,
        name: Option<String>,
        #[serde(default)]
        fast: bool,
        #[serde(default)]
        tags: Vec<String>,
    }

    #[test]
    fn flags_win() {
        let cfg = FileConfig::parse(
            r#"{"jobs": 3, "x": {"size": 8, "name": "cfg", "fast": true, "tags": ["a"]}}"#,
        )
        .unwrap();
        let cli = Opts {
            size: Some(16),
            ..Opts::default()
        };
        let m = cfg.merge("x", &cli).unwrap();
        assert_eq!(m.size, Some(16));
        assert_eq!(m.name.as_deref(), Some("cfg"));
        assert!(m.fast);
        assert_eq!(m.tags, ["a"]);
        assert_eq!(cfg.get::<usize>("jobs").unwrap(), Some(3));
        assert_eq!(cfg.merge("missing", &cli).unwrap(), cli);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(FileConfig::parse("[1]").is_err());
        let cfg = FileConfig::parse(r#"{"x": 1, "y": {"nope": 1}}"#).unwrap();
        assert!(cfg.merge("x", &Opts::default()).is_err());
        assert!(cfg.merge("y", &Opts::default()).is_err());
    }
}
