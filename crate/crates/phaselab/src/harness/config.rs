//! Plain-text experiment configuration: one `key = value` per line, `#`
//! starts a comment. Unknown keys, duplicates, and malformed values are
//! rejected with the offending line number.
//!
//! Phase-valued entries accept pi fractions (`pi/3`, `-3pi/16`) as well as
//! plain floats. Grid keys accept either a comma list (`1,2,5`) or a range
//! `lo:hi:count[:log]`.

use crate::model::{ExperimentConfig, SamplingMode};
use std::fmt;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigFileError {
    #[error("{path}:{line}: unknown key `{key}`")]
    UnknownKey {
        path: String,
        line: usize,
        key: String,
    },
    #[error("{path}:{line}: duplicate key `{key}`")]
    DuplicateKey {
        path: String,
        line: usize,
        key: String,
    },
    #[error("{path}:{line}: malformed line, expected `key = value`")]
    Malformed { path: String, line: usize },
    #[error("{path}:{line}: bad value for `{key}`: {reason}")]
    BadValue {
        path: String,
        line: usize,
        key: String,
        reason: String,
    },
    #[error("{path}: missing required key `{key}`")]
    MissingKey { path: String, key: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Invalid(#[from] crate::model::ConfigError),
}

/// A one-dimensional parameter grid.
#[derive(Debug, Clone, PartialEq)]
pub enum GridSpec {
    List(Vec<f64>),
    Range {
        lo: f64,
        hi: f64,
        count: usize,
        log: bool,
    },
}

impl GridSpec {
    pub fn points(&self) -> Vec<f64> {
        match self {
            GridSpec::List(v) => v.clone(),
            GridSpec::Range { lo, hi, count, log } => {
                if *count == 1 {
                    return vec![*lo];
                }
                let n = (*count - 1) as f64;
                (0..*count)
                    .map(|i| {
                        let t = i as f64 / n;
                        if *log {
                            (lo.ln() * (1.0 - t) + hi.ln() * t).exp()
                        } else {
                            lo * (1.0 - t) + hi * t
                        }
                    })
                    .collect()
            }
        }
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let text = text.trim();
        if text.contains(',') {
            let values = text
                .split(',')
                .map(|p| parse_number(p.trim()))
                .collect::<Result<Vec<_>, _>>()?;
            if values.is_empty() {
                return Err("empty grid".into());
            }
            return Ok(GridSpec::List(values));
        }
        if text.contains(':') {
            let parts: Vec<&str> = text.split(':').collect();
            if parts.len() != 3 && parts.len() != 4 {
                return Err("range needs `lo:hi:count[:log]`".into());
            }
            let lo = parse_number(parts[0].trim())?;
            let hi = parse_number(parts[1].trim())?;
            let count: usize = parts[2]
                .trim()
                .parse()
                .map_err(|_| format!("bad count `{}`", parts[2].trim()))?;
            if count == 0 {
                return Err("count must be at least 1".into());
            }
            let log = match parts.get(3).map(|s| s.trim()) {
                None => false,
                Some("log") => true,
                Some("lin") => false,
                Some(other) => return Err(format!("bad scale `{other}` (log or lin)")),
            };
            if log && !(lo > 0.0 && hi > 0.0) {
                return Err("log range needs positive endpoints".into());
            }
            return Ok(GridSpec::Range { lo, hi, count, log });
        }
        Ok(GridSpec::List(vec![parse_number(text)?]))
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridSpec::List(v) => {
                let parts: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
                write!(f, "{}", parts.join(","))
            }
            GridSpec::Range { lo, hi, count, log } => {
                write!(f, "{lo}:{hi}:{count}{}", if *log { ":log" } else { "" })
            }
        }
    }
}

/// Parse a number, allowing pi fractions: `pi`, `-pi/4`, `3pi/16`, `2pi`.
pub fn parse_number(text: &str) -> Result<f64, String> {
    let text = text.trim();
    if let Ok(v) = text.parse::<f64>() {
        return Ok(v);
    }
    if let Some(pos) = text.find("pi") {
        let (coef_s, rest) = (&text[..pos], &text[pos + 2..]);
        let coef = match coef_s.trim() {
            "" | "+" => 1.0,
            "-" => -1.0,
            s => s.parse::<f64>().map_err(|_| format!("bad number `{text}`"))?,
        };
        let div = match rest.trim() {
            "" => 1.0,
            s => {
                let s = s
                    .strip_prefix('/')
                    .ok_or_else(|| format!("bad number `{text}`"))?;
                let d: f64 = s
                    .trim()
                    .parse()
                    .map_err(|_| format!("bad number `{text}`"))?;
                if d == 0.0 {
                    return Err(format!("division by zero in `{text}`"));
                }
                d
            }
        };
        return Ok(coef * std::f64::consts::PI / div);
    }
    Err(format!("bad number `{text}`"))
}

/// Parsed configuration file; every key optional so the CLI can layer flag
/// and environment overrides before finalizing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    pub intensity: Option<f64>,
    pub visibility: Option<f64>,
    pub true_phase: Option<f64>,
    pub frames: Option<u64>,
    pub seed: Option<u64>,
    pub jitter_sigma: Option<f64>,
    pub sampling_mode: Option<SamplingMode>,
    pub pulses_per_frame: Option<u64>,
    pub grid_intensity: Option<GridSpec>,
    pub grid_window: Option<GridSpec>,
    pub grid_phase: Option<GridSpec>,
    pub grid_visibility: Option<GridSpec>,
}

impl ConfigFile {
    pub fn read(path: &Path) -> Result<Self, ConfigFileError> {
        let display = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigFileError::Io {
            path: display.clone(),
            source,
        })?;
        Self::parse_str(&text, &display)
    }

    pub fn parse_str(text: &str, path: &str) -> Result<Self, ConfigFileError> {
        let mut cfg = ConfigFile::default();
        let mut seen: Vec<String> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or(ConfigFileError::Malformed {
                path: path.to_string(),
                line,
            })?;
            let key = key.trim();
            let value = value.trim();
            if value.is_empty() {
                return Err(ConfigFileError::Malformed {
                    path: path.to_string(),
                    line,
                });
            }
            if seen.iter().any(|k| k == key) {
                return Err(ConfigFileError::DuplicateKey {
                    path: path.to_string(),
                    line,
                    key: key.to_string(),
                });
            }
            seen.push(key.to_string());
            let bad = |reason: String| ConfigFileError::BadValue {
                path: path.to_string(),
                line,
                key: key.to_string(),
                reason,
            };
            match key {
                "intensity" => cfg.intensity = Some(parse_number(value).map_err(bad)?),
                "visibility" => cfg.visibility = Some(parse_number(value).map_err(bad)?),
                "true_phase" => cfg.true_phase = Some(parse_number(value).map_err(bad)?),
                "frames" => {
                    cfg.frames = Some(value.parse().map_err(|_| bad("not an integer".into()))?)
                }
                "seed" => {
                    cfg.seed = Some(value.parse().map_err(|_| bad("not an integer".into()))?)
                }
                "jitter_sigma" => cfg.jitter_sigma = Some(parse_number(value).map_err(bad)?),
                "sampling_mode" => {
                    cfg.sampling_mode = Some(match value {
                        "direct_poisson" => SamplingMode::DirectPoisson,
                        "weak_pulse" => SamplingMode::WeakPulse,
                        other => {
                            return Err(bad(format!(
                                "`{other}` is not `direct_poisson` or `weak_pulse`"
                            )))
                        }
                    })
                }
                "pulses_per_frame" => {
                    cfg.pulses_per_frame =
                        Some(value.parse().map_err(|_| bad("not an integer".into()))?)
                }
                "grid_intensity" => cfg.grid_intensity = Some(GridSpec::parse(value).map_err(bad)?),
                "grid_window" => cfg.grid_window = Some(GridSpec::parse(value).map_err(bad)?),
                "grid_phase" => cfg.grid_phase = Some(GridSpec::parse(value).map_err(bad)?),
                "grid_visibility" => {
                    cfg.grid_visibility = Some(GridSpec::parse(value).map_err(bad)?)
                }
                _ => {
                    return Err(ConfigFileError::UnknownKey {
                        path: path.to_string(),
                        line,
                        key: key.to_string(),
                    })
                }
            }
        }
        Ok(cfg)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        if let Some(v) = self.intensity {
            out.push_str(&format!("intensity = {v}\n"));
        }
        if let Some(v) = self.visibility {
            out.push_str(&format!("visibility = {v}\n"));
        }
        if let Some(v) = self.true_phase {
            out.push_str(&format!("true_phase = {v}\n"));
        }
        if let Some(v) = self.frames {
            out.push_str(&format!("frames = {v}\n"));
        }
        if let Some(v) = self.seed {
            out.push_str(&format!("seed = {v}\n"));
        }
        if let Some(v) = self.jitter_sigma {
            out.push_str(&format!("jitter_sigma = {v}\n"));
        }
        if let Some(v) = self.sampling_mode {
            let tag = match v {
                SamplingMode::DirectPoisson => "direct_poisson",
                SamplingMode::WeakPulse => "weak_pulse",
            };
            out.push_str(&format!("sampling_mode = {tag}\n"));
        }
        if let Some(v) = self.pulses_per_frame {
            out.push_str(&format!("pulses_per_frame = {v}\n"));
        }
        if let Some(v) = &self.grid_intensity {
            out.push_str(&format!("grid_intensity = {v}\n"));
        }
        if let Some(v) = &self.grid_window {
            out.push_str(&format!("grid_window = {v}\n"));
        }
        if let Some(v) = &self.grid_phase {
            out.push_str(&format!("grid_phase = {v}\n"));
        }
        if let Some(v) = &self.grid_visibility {
            out.push_str(&format!("grid_visibility = {v}\n"));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), ConfigFileError> {
        std::fs::write(path, self.render()).map_err(|source| ConfigFileError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Finalize into an experiment configuration. `path` only labels error
    /// messages.
    pub fn experiment(&self, path: &str) -> Result<ExperimentConfig, ConfigFileError> {
        let missing = |key: &'static str| ConfigFileError::MissingKey {
            path: path.to_string(),
            key: key.to_string(),
        };
        let cfg = ExperimentConfig {
            intensity: self.intensity.ok_or_else(|| missing("intensity"))?,
            visibility: self.visibility.ok_or_else(|| missing("visibility"))?,
            true_phase: self.true_phase.ok_or_else(|| missing("true_phase"))?,
            frames: self.frames.ok_or_else(|| missing("frames"))?,
            seed: self.seed.ok_or_else(|| missing("seed"))?,
            jitter_sigma: self.jitter_sigma.unwrap_or(0.0),
            sampling_mode: self.sampling_mode.unwrap_or(SamplingMode::DirectPoisson),
            pulses_per_frame: self.pulses_per_frame.unwrap_or(1),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Snapshot of an experiment configuration, for exact write/read
    /// round-trips.
    pub fn from_experiment(cfg: &ExperimentConfig) -> Self {
        ConfigFile {
            intensity: Some(cfg.intensity),
            visibility: Some(cfg.visibility),
            true_phase: Some(cfg.true_phase),
            frames: Some(cfg.frames),
            seed: Some(cfg.seed),
            jitter_sigma: Some(cfg.jitter_sigma),
            sampling_mode: Some(cfg.sampling_mode),
            pulses_per_frame: Some(cfg.pulses_per_frame),
            ..Default::default()
        }
    }
}

/// Read a configuration file and finalize it, requiring every experiment
/// key to be present (the CLI layers flag and environment fallbacks on top
/// before finalizing instead).
pub fn read_config(path: &Path) -> Result<ExperimentConfig, ConfigFileError> {
    ConfigFile::read(path)?.experiment(&path.display().to_string())
}

/// Default grids for the sweep scenarios when the configuration does not
/// pin them.
pub fn default_intensity_grid() -> GridSpec {
    GridSpec::Range {
        lo: 0.1,
        hi: 60.0,
        count: 16,
        log: true,
    }
}

pub fn default_window_grid() -> GridSpec {
    GridSpec::Range {
        lo: 0.05,
        hi: std::f64::consts::PI,
        count: 32,
        log: false,
    }
}

/// Phases `k pi/16` for `k = 0..=8`.
pub fn default_phase_grid() -> GridSpec {
    GridSpec::Range {
        lo: 0.0,
        hi: std::f64::consts::PI / 2.0,
        count: 9,
        log: false,
    }
}

pub fn default_visibility_grid() -> GridSpec {
    GridSpec::Range {
        lo: 0.1,
        hi: 1.0,
        count: 10,
        log: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn parses_minimal_config() {
        let text = "\
# an experiment
intensity = 10
visibility = 0.996   # fringe contrast
true_phase = pi/3
frames = 7500
seed = 42
";
        let cfg = ConfigFile::parse_str(text, "test.cfg").unwrap();
        let exp = cfg.experiment("test.cfg").unwrap();
        assert_eq!(exp.intensity, 10.0);
        assert_eq!(exp.visibility, 0.996);
        assert!((exp.true_phase - PI / 3.0).abs() < 1e-15);
        assert_eq!(exp.frames, 7500);
        assert_eq!(exp.seed, 42);
        assert_eq!(exp.jitter_sigma, 0.0);
        assert_eq!(exp.sampling_mode, SamplingMode::DirectPoisson);
    }

    #[test]
    fn unknown_key_names_line() {
        let err = ConfigFile::parse_str("intensity = 1\nbogus = 2\n", "x.cfg").unwrap_err();
        match err {
            ConfigFileError::UnknownKey { line, key, .. } => {
                assert_eq!(line, 2);
                assert_eq!(key, "bogus");
            }
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn missing_intensity_names_key() {
        let cfg = ConfigFile::parse_str("visibility = 1\n", "x.cfg").unwrap();
        let err = cfg.experiment("x.cfg").unwrap_err();
        assert!(err.to_string().contains("`intensity`"));
    }

    #[test]
    fn duplicate_and_malformed_lines() {
        let err = ConfigFile::parse_str("seed = 1\nseed = 2\n", "x.cfg").unwrap_err();
        assert!(matches!(err, ConfigFileError::DuplicateKey { line: 2, .. }));
        let err = ConfigFile::parse_str("intensity\n", "x.cfg").unwrap_err();
        assert!(matches!(err, ConfigFileError::Malformed { line: 1, .. }));
        let err = ConfigFile::parse_str("frames = plenty\n", "x.cfg").unwrap_err();
        assert!(matches!(err, ConfigFileError::BadValue { line: 1, .. }));
    }

    #[test]
    fn pi_fraction_forms() {
        assert_eq!(parse_number("pi").unwrap(), PI);
        assert_eq!(parse_number("-pi").unwrap(), -PI);
        assert!((parse_number("pi/3").unwrap() - PI / 3.0).abs() < 1e-15);
        assert!((parse_number("3pi/16").unwrap() - 3.0 * PI / 16.0).abs() < 1e-15);
        assert!((parse_number("2pi").unwrap() - 2.0 * PI).abs() < 1e-15);
        assert!((parse_number("-3pi/4").unwrap() + 3.0 * PI / 4.0).abs() < 1e-15);
        assert_eq!(parse_number("0.25").unwrap(), 0.25);
        assert!(parse_number("pie").is_err());
        assert!(parse_number("pi/0").is_err());
    }

    #[test]
    fn grid_forms() {
        let g = GridSpec::parse("1,2,5").unwrap();
        assert_eq!(g.points(), vec![1.0, 2.0, 5.0]);
        let g = GridSpec::parse("0:pi:5").unwrap();
        let p = g.points();
        assert_eq!(p.len(), 5);
        assert_eq!(p[0], 0.0);
        assert!((p[4] - PI).abs() < 1e-15);
        assert!((p[1] - PI / 4.0).abs() < 1e-15);
        let g = GridSpec::parse("0.1:60:16:log").unwrap();
        let p = g.points();
        assert_eq!(p.len(), 16);
        assert!((p[0] - 0.1).abs() < 1e-12);
        assert!((p[15] - 60.0).abs() < 1e-12);
        let ratio0 = p[1] / p[0];
        let ratio1 = p[2] / p[1];
        assert!((ratio0 - ratio1).abs() < 1e-9, "log spacing");
        assert!(GridSpec::parse("0:60:16:log").is_err());
        assert!(GridSpec::parse("1:2").is_err());
        assert!(GridSpec::parse("1:2:0").is_err());
    }

    #[test]
    fn write_read_round_trip_is_exact() {
        let exp = ExperimentConfig {
            intensity: 7.512345678901234,
            visibility: 0.9963,
            true_phase: PI / 3.0,
            frames: 7500,
            seed: 987654321,
            jitter_sigma: 0.019,
            sampling_mode: SamplingMode::WeakPulse,
            pulses_per_frame: 10_000,
        };
        let rendered = ConfigFile::from_experiment(&exp).render();
        let parsed = ConfigFile::parse_str(&rendered, "round.cfg").unwrap();
        let back = parsed.experiment("round.cfg").unwrap();
        assert_eq!(back, exp);
    }

    #[test]
    fn default_phase_grid_is_sixteenths() {
        let p = default_phase_grid().points();
        assert_eq!(p.len(), 9);
        for (k, v) in p.iter().enumerate() {
            assert!((v - k as f64 * PI / 16.0).abs() < 1e-12);
        }
    }
}
