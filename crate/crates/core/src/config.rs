//! Plain-text `key=value` configuration.
//!
//! One pair per line; blank lines and lines starting with `#` are ignored.
//! Keys are case-sensitive, later duplicates override earlier ones.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::depthcodec::{ColorScheme, ColorizationParams, DEFAULT_LUT_BINS};
use crate::geometry::{intrinsics_from_fov, Intrinsics};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected key=value, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("missing key {0:?}")]
    Missing(String),
    #[error("key {key:?}: cannot parse {value:?}")]
    BadValue { key: String, value: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl FromStr for Config {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line: i + 1, text: raw.to_string() })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1, text: raw.to_string() });
            }
            entries.insert(k.to_string(), v.trim().to_string());
        }
        Ok(Self { entries })
    }
}

impl fmt::Display for Config {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

impl Config {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| ConfigError::BadValue { key: key.to_string(), value: v.clone() }),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T, ConfigError> {
        self.get(key)?.ok_or_else(|| ConfigError::Missing(key.to_string()))
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

/// Parses a comma-separated list of `N` floats.
pub fn parse_floats<const N: usize>(text: &str) -> Option<[f64; N]> {
    let parts: Vec<f64> = text.split(',').map(|p| p.trim().parse().ok()).collect::<Option<_>>()?;
    parts.try_into().ok()
}

fn parse_rgb(text: &str) -> Option<[u8; 3]> {
    let parts: Vec<u8> = text.split(',').map(|p| p.trim().parse().ok()).collect::<Option<_>>()?;
    parts.try_into().ok()
}

/// Keys: `scheme` (turbo|gray), `d_max_m`, `lut_bins`, `invalid_color` (`r,g,b`).
/// `profile=self|env` seeds the defaults.
pub fn colorization_params(cfg: &Config) -> Result<ColorizationParams, ConfigError> {
    let mut params = match cfg.get_str("profile") {
        None | Some("env") => ColorizationParams::env_profile(),
        Some("self") => ColorizationParams::self_profile(),
        Some(other) => return Err(ConfigError::BadValue { key: "profile".into(), value: other.into() }),
    };
    if let Some(s) = cfg.get_str("scheme") {
        params.scheme =
            ColorScheme::parse(s).ok_or_else(|| ConfigError::BadValue { key: "scheme".into(), value: s.into() })?;
        params.invalid_color = params.scheme.default_invalid_color();
    }
    params.d_max = cfg.get_or("d_max_m", params.d_max)?;
    params.lut_bins = cfg.get_or("lut_bins", DEFAULT_LUT_BINS)?;
    if let Some(s) = cfg.get_str("invalid_color") {
        params.invalid_color =
            parse_rgb(s).ok_or_else(|| ConfigError::BadValue { key: "invalid_color".into(), value: s.into() })?;
    }
    params.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(params)
}

pub fn colorization_config(p: &ColorizationParams) -> Config {
    let mut cfg = Config::default();
    cfg.set("scheme", p.scheme.name());
    cfg.set("d_max_m", p.d_max);
    cfg.set("lut_bins", p.lut_bins);
    let [r, g, b] = p.invalid_color;
    cfg.set("invalid_color", format!("{r},{g},{b}"));
    cfg
}

/// Either `fx, fy, cx, cy, width, height` or `hfov_deg, vfov_deg, width, height`.
pub fn intrinsics(cfg: &Config) -> Result<Intrinsics, ConfigError> {
    let width: u32 = cfg.require("width")?;
    let height: u32 = cfg.require("height")?;
    let k = if cfg.contains("fx") {
        Intrinsics::new(
            cfg.require("fx")?,
            cfg.require("fy")?,
            cfg.get_or("cx", width as f64 / 2.0)?,
            cfg.get_or("cy", height as f64 / 2.0)?,
            width,
            height,
        )
    } else {
        intrinsics_from_fov(cfg.require("hfov_deg")?, cfg.require("vfov_deg")?, width, height)
    };
    k.map_err(|e| ConfigError::Invalid(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_pairs_and_comments() {
        let cfg: Config = "# codec\nscheme = turbo\n\nd_max_m=0.8\nlut_bins=128\ninvalid_color=0,0,0\n".parse().unwrap();
        let p = colorization_params(&cfg).unwrap();
        assert_eq!(p.scheme, ColorScheme::TurboHue);
        assert_eq!(p.d_max, 0.8);
        assert_eq!(p.lut_bins, 128);
        let again: Config = colorization_config(&p).to_string().parse().unwrap();
        assert_eq!(colorization_params(&again).unwrap(), p);
    }

    #[test]
    fn reports_errors() {
        assert!(matches!("novalue".parse::<Config>(), Err(ConfigError::Syntax { line: 1, .. })));
        let cfg: Config = "d_max_m=abc".parse().unwrap();
        assert!(matches!(colorization_params(&cfg), Err(ConfigError::BadValue { .. })));
        let cfg: Config = "d_max_m=-1".parse().unwrap();
        assert!(matches!(colorization_params(&cfg), Err(ConfigError::Invalid(_))));
        assert!(matches!(intrinsics(&Config::default()), Err(ConfigError::Missing(_))));
    }

    #[test]
    fn gray_scheme_gets_off_curve_invalid_color() {
        let cfg: Config = "scheme=gray\nd_max_m=1".parse().unwrap();
        assert_eq!(colorization_params(&cfg).unwrap().invalid_color, [255, 0, 255]);
    }

    #[test]
    fn intrinsics_both_forms() {
        let k = intrinsics(&"hfov_deg=90\nvfov_deg=90\nwidth=640\nheight=480".parse().unwrap()).unwrap();
        assert!((k.fx - 320.0).abs() < 1e-9);
        let k = intrinsics(&"fx=500\nfy=500\nwidth=640\nheight=480".parse().unwrap()).unwrap();
        assert_eq!((k.cx, k.cy), (320.0, 240.0));
        assert_eq!(parse_floats::<3>("1, 2,3"), Some([1.0, 2.0, 3.0]));
        assert_eq!(parse_floats::<3>("1,2"), None);
    }
}
