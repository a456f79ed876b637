//! Dotted-key overrides applied to a config document before it is typed,
//! so `sweep --vary mn.fifo.pfc_threshold=30,50` goes through the same
//! validation as a config file.

use crate::config::{ConfigError, ScenarioConfig};

fn invalid(key: &str, msg: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        msg: msg.to_string(),
    }
}

/// Parses a scalar the way it would appear on the right of `=` in a config
/// file; bare words become strings.
fn scalar(v: &str) -> toml::Value {
    let doc = format!("v = {v}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(v.to_string()),
    }
}

pub fn set(doc: &mut toml::Table, key: &str, value: &str) -> Result<(), ConfigError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(invalid(key, "empty key segment"));
    }
    let mut t = doc;
    for p in &parts[..parts.len() - 1] {
        let entry = t
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        t = entry
            .as_table_mut()
            .ok_or_else(|| invalid(key, format!("{p} is not a section")))?;
    }
    t.insert(parts[parts.len() - 1].to_string(), scalar(value));
    Ok(())
}

/// Builds a config from file text plus `key=value` overrides.
pub fn with_overrides(text: &str, overrides: &[(String, String)]) -> Result<ScenarioConfig, ConfigError> {
    let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    for (k, v) in overrides {
        set(&mut doc, k, v)?;
    }
    ScenarioConfig::from_toml(&toml::to_string(&doc).expect("table serializes"))
}

/// Splits `key=v1,v2,...` into the key and its values.
pub fn parse_vary(spec: &str) -> Result<(String, Vec<String>), ConfigError> {
    let (k, vs) = spec
        .split_once('=')
        .ok_or_else(|| invalid(spec, "expected key=v1,v2,..."))?;
    let vals: Vec<String> = vs.split(',').map(|s| s.trim().to_string()).collect();
    if vals.iter().any(String::is_empty) {
        return Err(invalid(k, "empty value in list"));
    }
    Ok((k.trim().to_string(), vals))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn override_nested_key() {
        let c = with_overrides(
            "[mn.fifo]\ndepth = 256\n",
            &[("mn.fifo.pfc_threshold".into(), "30".into())],
        )
        .unwrap();
        assert_eq!(c.mn.fifo.depth, 256);
        assert_eq!(c.mn.fifo.pfc_threshold, 30);
    }

    #[test]
    fn strings_and_bools() {
        let c = with_overrides(
            "",
            &[
                ("arq.mode".into(), "go_back_n".into()),
                ("cn.cache_enabled".into(), "true".into()),
            ],
        )
        .unwrap();
        assert_eq!(c.arq.mode, crate::endpoint::ArqMode::GoBackN);
        assert!(c.cn.cache_enabled);
    }

    #[test]
    fn unknown_override_rejected() {
        let e = with_overrides("", &[("mn.fifo.bogus".into(), "1".into())]).unwrap_err();
        assert!(e.to_string().contains("bogus"));
    }

    #[test]
    fn vary_spec() {
        let (k, v) = parse_vary("mn.fifo.pfc_threshold=30,50, 70").unwrap();
        assert_eq!(k, "mn.fifo.pfc_threshold");
        assert_eq!(v, ["30", "50", "70"]);
        assert!(parse_vary("nokey").is_err());
        assert!(parse_vary("a=1,,2").is_err());
    }
}
