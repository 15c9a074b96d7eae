//! Flat `key = value` run files. Flags given on the command line win.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

pub const KEYS: &[&str] = &[
    "lambda", "mu", "c", "p1", "pi", "seed", "grid", "tol", "paths", "horizon", "out", "threads",
];

#[derive(Debug, Default, Clone, PartialEq)]
pub struct FileConfig(BTreeMap<String, String>);

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut map = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("config line {}: expected key=value, got {raw:?}", n + 1))?;
            let k = k.trim().trim_start_matches("--").to_string();
            if !KEYS.contains(&k.as_str()) {
                return Err(format!("config line {}: unknown key {k:?}", n + 1));
            }
            map.insert(k, v.trim().to_string());
        }
        Ok(Self(map))
    }

    pub fn load(path: &PathBuf) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        Self::parse(&text)
    }

    /// The flag if present, else the file entry parsed as `T`.
    pub fn pick<T: FromStr>(&self, key: &str, flag: Option<T>) -> Result<Option<T>, String> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| format!("config key {key}: cannot parse {v:?}")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_entries() {
        let f = FileConfig::parse("# unit case\nlambda = 2\n--mu=1.5  # trailing\n\nseed=7\n").unwrap();
        assert_eq!(f.pick::<f64>("lambda", None).unwrap(), Some(2.0));
        assert_eq!(f.pick("lambda", Some(3.0)).unwrap(), Some(3.0));
        assert_eq!(f.pick::<f64>("mu", None).unwrap(), Some(1.5));
        assert_eq!(f.pick::<u64>("seed", None).unwrap(), Some(7));
        assert_eq!(f.pick::<f64>("c", None).unwrap(), None);
    }

    #[test]
    fn bad_lines_are_rejected() {
        assert!(FileConfig::parse("lambda 2").is_err());
        assert!(FileConfig::parse("colour = red").is_err());
        let f = FileConfig::parse("paths = many").unwrap();
        assert!(f.pick::<usize>("paths", None).is_err());
    }
}
