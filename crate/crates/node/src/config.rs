//! Node configuration: flat `key = value` lines, `#` starts a comment.
//!
//! ```text
//! company = acme
//! listen  = 127.0.0.1:7471
//! http    = 127.0.0.1:8080
//! peer    = globex@127.0.0.1:7472
//! store   = ./store
//! clock   = wall
//! ```
//!
//! `peer` may repeat. `SUBJEKTIV_STORE` overrides `store`.

use std::fmt;
use std::path::{Path, PathBuf};

use subjektiv_core::bus::{Peer, DEFAULT_BUS_PORT};
use subjektiv_core::clock::ClockMode;
use subjektiv_core::engine::DEFAULT_POOL_CAPACITY;
use subjektiv_core::host::HostConfig;
use thiserror::Error;

pub const STORE_ENV: &str = "SUBJEKTIV_STORE";
pub const DEFAULT_HTTP_PORT: u16 = 8471;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Address {
    pub host: String,
    pub port: u16,
}

impl Address {
    pub fn new(host: impl Into<String>, port: u16) -> Self {
        Self {
            host: host.into(),
            port,
        }
    }

    fn parse(s: &str) -> Option<Self> {
        let (host, port) = s.rsplit_once(':')?;
        if host.is_empty() {
            return None;
        }
        Some(Self::new(host, port.parse().ok()?))
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.host, self.port)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeConfig {
    pub company: String,
    pub listen: Address,
    pub http: Address,
    pub peers: Vec<Peer>,
    pub store_dir: PathBuf,
    pub clock: ClockMode,
    pub pool_capacity: usize,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("missing `{0}`")]
    Missing(&'static str),
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

impl NodeConfig {
    pub fn new(company: impl Into<String>, store_dir: impl Into<PathBuf>) -> Self {
        Self {
            company: company.into(),
            listen: Address::new("127.0.0.1", DEFAULT_BUS_PORT),
            http: Address::new("127.0.0.1", DEFAULT_HTTP_PORT),
            peers: Vec::new(),
            store_dir: store_dir.into(),
            clock: ClockMode::Wall,
            pool_capacity: DEFAULT_POOL_CAPACITY,
        }
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut company = None;
        let mut cfg = NodeConfig::new("", "store");
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let syntax = |message: String| ConfigError::Syntax {
                line: i + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| syntax(format!("expected `key = value`, found `{line}`")))?;
            let bad = |what: &str| syntax(format!("bad {what} `{value}`"));
            match key {
                "company" => company = Some(value.to_string()),
                "listen" => cfg.listen = Address::parse(value).ok_or_else(|| bad("address"))?,
                "http" => cfg.http = Address::parse(value).ok_or_else(|| bad("address"))?,
                "peer" => {
                    let (c, addr) = value.split_once('@').ok_or_else(|| bad("peer"))?;
                    let addr = Address::parse(addr).ok_or_else(|| bad("peer"))?;
                    cfg.peers.push(Peer {
                        company: c.trim().to_string(),
                        host: addr.host,
                        port: addr.port,
                    });
                }
                "store" => cfg.store_dir = PathBuf::from(value),
                "clock" => {
                    cfg.clock = match value {
                        "virtual" => ClockMode::Virtual,
                        "wall" => ClockMode::Wall,
                        _ => return Err(bad("clock")),
                    }
                }
                "pool_capacity" => {
                    cfg.pool_capacity = value
                        .parse()
                        .ok()
                        .filter(|n| *n > 0)
                        .ok_or_else(|| bad("capacity"))?
                }
                other => return Err(syntax(format!("unknown key `{other}`"))),
            }
        }
        cfg.company = company.ok_or(ConfigError::Missing("company"))?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Reads `path` and applies the environment override.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut cfg = Self::parse(&text)?;
        if let Some(dir) = std::env::var_os(STORE_ENV) {
            cfg.store_dir = PathBuf::from(dir);
        }
        Ok(cfg)
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        if self.company.trim().is_empty() {
            return Err(ConfigError::Invalid("company must not be empty".into()));
        }
        if self.listen.port != 0 && self.listen.port == self.http.port {
            return Err(ConfigError::Invalid(format!(
                "bus and http ports must differ (both {})",
                self.http.port
            )));
        }
        Ok(())
    }

    pub fn host_config(&self) -> HostConfig {
        HostConfig {
            company: Some(self.company.clone()),
            pool_capacity: self.pool_capacity,
            clock: self.clock,
            peers: self.peers.clone(),
        }
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "company = {}\nlisten = {}\nhttp = {}\nstore = {}\nclock = {}\npool_capacity = {}\n",
            self.company,
            self.listen,
            self.http,
            self.store_dir.display(),
            match self.clock {
                ClockMode::Virtual => "virtual",
                ClockMode::Wall => "wall",
            },
            self.pool_capacity
        );
        for p in &self.peers {
            out.push_str(&format!("peer = {}@{}:{}\n", p.company, p.host, p.port));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_key() {
        let cfg = NodeConfig::parse(
            "# node a\ncompany = acme\nlisten = 0.0.0.0:7000\nhttp=localhost:7001\n\
             peer = globex@10.0.0.2:7471\nstore = /tmp/s\nclock = virtual # test\npool_capacity = 4\n",
        )
        .unwrap();
        assert_eq!(cfg.company, "acme");
        assert_eq!(cfg.listen, Address::new("0.0.0.0", 7000));
        assert_eq!(cfg.http, Address::new("localhost", 7001));
        assert_eq!(cfg.peers[0].company, "globex");
        assert_eq!(cfg.clock, ClockMode::Virtual);
        assert_eq!(cfg.pool_capacity, 4);
        assert_eq!(NodeConfig::parse(&cfg.render()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(
            NodeConfig::parse("listen = a:1"),
            Err(ConfigError::Missing("company"))
        );
        assert!(matches!(
            NodeConfig::parse("company = a\nfoo = 1"),
            Err(ConfigError::Syntax { line: 2, .. })
        ));
        assert!(matches!(
            NodeConfig::parse("company = a\nlisten = x:1\nhttp = y:1"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(NodeConfig::parse("company = ").is_err());
        assert!(NodeConfig::parse("company = a\nclock = sundial").is_err());
    }
}
