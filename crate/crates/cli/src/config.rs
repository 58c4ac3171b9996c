//! TOML config file support. Each subcommand reads its own table; values
//! given on the command line win.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use std::path::Path;

#[derive(Debug, Default)]
pub struct ConfigFile {
    root: toml::Table,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let root: toml::Table = text.parse().map_err(|e| format!("{}: {e}", path.display()))?;
        Ok(ConfigFile { root })
    }

    /// Top-level scalar such as `seed` or `model_dir`.
    pub fn top<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>, String> {
        match self.root.get(key) {
            None => Ok(None),
            Some(v) => v.clone().try_into().map(Some).map_err(|e| format!("config `{key}`: {e}")),
        }
    }

    /// `args` with unset fields filled from the `[section]` table.
    pub fn merge<T: Serialize + DeserializeOwned>(&self, section: &str, args: &T) -> Result<T, String> {
        let mut merged = match self.root.get(section) {
            Some(t) => serde_json::to_value(t).map_err(|e| e.to_string())?,
            None => Value::Object(Default::default()),
        };
        let Value::Object(ref mut base) = merged else {
            return Err(format!("config `{section}` must be a table"));
        };
        let Value::Object(cli) = serde_json::to_value(args).map_err(|e| e.to_string())? else {
            unreachable!("argument structs serialize to objects");
        };
        for (k, v) in cli {
            if !v.is_null() || !base.contains_key(&k) {
                base.insert(k, v);
            }
        }
        serde_json::from_value(merged).map_err(|e| format!("config `{section}`: {e}"))
    }
}
