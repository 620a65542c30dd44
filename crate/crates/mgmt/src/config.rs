use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use citytb_core::{parse_duration, GeoPoint, Urn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}:{line}: {msg}")]
    Syntax { path: String, line: usize, msg: String },
    #[error("reading {0}: {1}")]
    Io(String, std::io::Error),
}

/// Per-gateway agent settings.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub heartbeat: Duration,
    pub probe_period: Duration,
    /// Consecutive failed probe rounds before a node is reported gone.
    pub failure_threshold: u32,
    /// How long a registration request may stay unanswered before the next
    /// frame from that node triggers a fresh one.
    pub registration_timeout: Duration,
    /// Tries per Node API call before the node counts as unreachable. The
    /// mesh has no link-layer retransmission, so a lossy multi-hop path
    /// needs several.
    pub query_attempts: u32,
    pub manifest: Option<PathBuf>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            heartbeat: Duration::from_secs(30),
            probe_period: Duration::from_secs(60),
            failure_threshold: 3,
            registration_timeout: Duration::from_secs(30),
            query_attempts: 16,
            manifest: None,
        }
    }
}

impl AgentConfig {
    /// Reads `key = value` lines. Unknown keys are errors; `#` starts a
    /// comment.
    pub fn load(path: impl AsRef<Path>) -> Result<AgentConfig, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(path.display().to_string(), e))?;
        AgentConfig::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, origin: &str) -> Result<AgentConfig, ConfigError> {
        let mut cfg = AgentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| ConfigError::Syntax {
                path: origin.to_string(),
                line: i + 1,
                msg,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let dur = || parse_duration(value).map_err(|e| err(e.to_string()));
            match key {
                "heartbeat" => cfg.heartbeat = dur()?,
                "probe-period" => cfg.probe_period = dur()?,
                "registration-timeout" => cfg.registration_timeout = dur()?,
                "failure-threshold" => {
                    cfg.failure_threshold = value
                        .parse()
                        .ok()
                        .filter(|n| *n > 0)
                        .ok_or_else(|| err(format!("bad threshold {value:?}")))?
                }
                "query-attempts" => {
                    cfg.query_attempts = value
                        .parse()
                        .ok()
                        .filter(|n| *n > 0)
                        .ok_or_else(|| err(format!("bad attempt count {value:?}")))?
                }
                "manifest" => cfg.manifest = Some(PathBuf::from(value)),
                _ => return Err(err(format!("unknown key {key:?}"))),
            }
        }
        Ok(cfg)
    }
}

/// Reads a static manifest: one `urn lat lon` per line.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<BTreeMap<Urn, GeoPoint>, ConfigError> {
    let path = path.as_ref();
    let origin = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(origin.clone(), e))?;
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| ConfigError::Syntax {
            path: origin.clone(),
            line: i + 1,
            msg,
        };
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [urn, lat, lon] = parts[..] else {
            return Err(err("expected: urn lat lon".into()));
        };
        let urn = Urn::parse(urn).map_err(|e| err(e.to_string()))?;
        let lat: f64 = lat.parse().map_err(|_| err(format!("bad latitude {lat:?}")))?;
        let lon: f64 = lon.parse().map_err(|_| err(format!("bad longitude {lon:?}")))?;
        out.insert(urn, GeoPoint::new(lat, lon));
    }
    Ok(out)
}

/// Portal-side deadlines. Tunable at run time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timeouts {
    /// Silence after which an Active resource is Disabled.
    pub invalidation_ms: u64,
    /// Silence after which a Disabled resource is Deleted.
    pub deletion_ms: u64,
    /// How long a registration waits for each configurator reply.
    pub configurator_ms: u64,
}

impl Default for Timeouts {
    fn default() -> Self {
        Timeouts {
            invalidation_ms: 90_000,
            deletion_ms: 24 * 3600 * 1000,
            configurator_ms: 10_000,
        }
    }
}

impl Timeouts {
    pub fn invalidation(&self) -> Duration {
        Duration::from_millis(self.invalidation_ms)
    }

    pub fn deletion(&self) -> Duration {
        Duration::from_millis(self.deletion_ms)
    }

    pub fn configurator(&self) -> Duration {
        Duration::from_millis(self.configurator_ms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_and_rejects_unknown() {
        let cfg = AgentConfig::parse(
            "heartbeat = 10s # fast\nfailure-threshold=5\nmanifest = m.txt\n",
            "t",
        )
        .unwrap();
        assert_eq!(cfg.heartbeat, Duration::from_secs(10));
        assert_eq!(cfg.failure_threshold, 5);
        assert_eq!(cfg.probe_period, Duration::from_secs(60));
        assert_eq!(cfg.manifest, Some(PathBuf::from("m.txt")));
        assert!(AgentConfig::parse("beat = 1s", "t").is_err());
        assert!(AgentConfig::parse("failure-threshold = 0", "t").is_err());
    }
}
