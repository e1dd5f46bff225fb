//! Scenario files: TOML, every table closed to unknown keys.
//!
//! ```toml
//! seed = 7
//! n = 5
//! lans = 2
//! max_ticks = 20000
//! detect_delay = 20
//!
//! [learners]
//! colocated = true
//! extra = 1
//!
//! [[clients]]
//! count = 2
//! policy = "random-coordinator"
//! requests = 10
//! payload = 1024
//! start = 10
//! interval = 3
//!
//! [protocol]
//! pipeline_depth = 4
//!
//! [faults]
//! loss = 0.1
//! ```

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::membership::majority;
use crate::protocol::{ProtocolConfig, TargetPolicy};
use crate::simnet::{ClientSpec, FaultProfile, SimSetup};
use crate::types::Tick;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Syntax(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Learners {
    /// Host a learner on every acceptor site.
    pub colocated: bool,
    /// Additional learner-only sites.
    pub extra: usize,
}

impl Default for Learners {
    fn default() -> Self {
        Learners {
            colocated: true,
            extra: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClientGroup {
    pub count: usize,
    pub policy: TargetPolicy,
    /// Requests per client.
    pub requests: usize,
    /// Payload bytes per request.
    pub payload: usize,
    pub start: Tick,
    /// Ticks between consecutive requests of one client.
    pub interval: Tick,
}

impl Default for ClientGroup {
    fn default() -> Self {
        ClientGroup {
            count: 1,
            policy: TargetPolicy::RandomCoordinator,
            requests: 1,
            payload: 1024,
            start: 10,
            interval: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    Requests,
    Payload,
    RingSize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub seed: u64,
    pub n: usize,
    pub lans: u32,
    pub max_ticks: Tick,
    pub detect_delay: Tick,
    pub learners: Learners,
    pub clients: Vec<ClientGroup>,
    pub protocol: ProtocolConfig,
    pub faults: FaultProfile,
    pub sweep: Option<SweepSpec>,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            seed: 1,
            n: 5,
            lans: 1,
            max_ticks: 100_000,
            detect_delay: 20,
            learners: Learners::default(),
            clients: vec![ClientGroup::default()],
            protocol: ProtocolConfig::default(),
            faults: FaultProfile::default(),
            sweep: None,
        }
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Syntax(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if self.n < 3 {
            return bad(format!("n must be at least 3, got {}", self.n));
        }
        if self.lans < 1 {
            return bad("lans must be at least 1".into());
        }
        if self.max_ticks == 0 {
            return bad("max_ticks must be positive".into());
        }
        if !self.learners.colocated && self.learners.extra == 0 {
            return bad("learners: at least one learner is required".into());
        }
        for (i, c) in self.clients.iter().enumerate() {
            if c.count == 0 {
                return bad(format!("clients[{i}].count must be positive"));
            }
            if c.interval == 0 && c.requests > 1 {
                return bad(format!("clients[{i}].interval must be positive"));
            }
            if let TargetPolicy::Fixed(node) = c.policy {
                if node.0 == 0 || node.0 as usize > self.n {
                    return bad(format!("clients[{i}].policy names unknown acceptor {node}"));
                }
            }
        }
        let p = &self.protocol;
        for (name, v) in [
            ("max_batch_size", p.max_batch_size as u64),
            ("max_batch_delay", p.max_batch_delay),
            ("pipeline_depth", p.pipeline_depth as u64),
            ("fetch_retry", p.fetch_retry),
            ("timeout", p.timeout),
            ("retransmit_cap", p.retransmit_cap as u64),
            ("ack_timeout", p.ack_timeout),
            ("client_retry", p.client_retry),
        ] {
            if v == 0 {
                return bad(format!("protocol.{name} must be positive"));
            }
        }
        self.faults.validate().map_err(ScenarioError::Invalid)?;
        let total_nodes = self.n + self.learners.extra;
        for c in &self.faults.crashes {
            if c.node == 0 || c.node as usize > total_nodes {
                return bad(format!("faults.crashes names unknown node {}", c.node));
            }
            if c.restart_at.is_some_and(|r| r <= c.at) {
                return bad(format!("faults.crashes: node {} restarts before it crashes", c.node));
            }
        }
        for iso in &self.faults.isolations {
            if iso.node == 0 || iso.node as usize > total_nodes {
                return bad(format!("faults.isolations names unknown node {}", iso.node));
            }
            if iso.until <= iso.from {
                return bad(format!("faults.isolations: empty window for node {}", iso.node));
            }
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return bad("sweep.values must not be empty".into());
            }
            if s.axis == SweepAxis::RingSize && s.values.iter().any(|m| *m < 2) {
                return bad("sweep: ring sizes must be at least 2".into());
            }
        }
        let down_at_start: BTreeSet<u32> = self
            .faults
            .crashes
            .iter()
            .filter(|c| c.at == 0 && c.node as usize <= self.n)
            .map(|c| c.node)
            .collect();
        let alive = self.n - down_at_start.len();
        if alive < majority(self.n) {
            return bad(format!(
                "ring size {} exceeds the {alive} acceptors alive at tick 0",
                majority(self.n)
            ));
        }
        Ok(())
    }

    pub fn total_requests(&self) -> usize {
        self.clients.iter().map(|c| c.count * c.requests).sum()
    }

    pub fn to_setup(&self) -> SimSetup {
        let mut clients = Vec::new();
        for g in &self.clients {
            for _ in 0..g.count {
                clients.push(ClientSpec {
                    policy: g.policy,
                    requests: (0..g.requests as u64)
                        .map(|k| (g.start + k * g.interval, g.payload))
                        .collect(),
                });
            }
        }
        SimSetup {
            seed: self.seed,
            n: self.n,
            lans: self.lans,
            learners_only: self.learners.extra,
            colocated_learners: self.learners.colocated,
            clients,
            protocol: self.protocol.clone(),
            faults: self.faults.clone(),
            detect_delay: self.detect_delay,
            max_ticks: self.max_ticks,
            record_crash: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doc_example_parses() {
        let text = r#"
seed = 7
n = 5
lans = 2
max_ticks = 20000
detect_delay = 20

[learners]
colocated = true
extra = 1

[[clients]]
count = 2
policy = "random-coordinator"
requests = 10
payload = 1024
start = 10
interval = 3

[protocol]
pipeline_depth = 4

[faults]
loss = 0.1
"#;
        let s = Scenario::from_toml(text).unwrap();
        assert_eq!(s.total_requests(), 20);
        assert_eq!(s.protocol.pipeline_depth, 4);
        assert_eq!(s.protocol.timeout, 50);
        assert_eq!(s.to_setup().clients[1].requests[2], (16, 1024));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(
            Scenario::from_toml("n = 5\nbogus = 1\n"),
            Err(ScenarioError::Syntax(_))
        ));
        assert!(Scenario::from_toml("[protocol]\nmystery = true\n").is_err());
        assert!(Scenario::from_toml("[faults]\nlos = 0.1\n").is_err());
    }

    #[test]
    fn constraints_are_named() {
        let e = Scenario::from_toml("n = 2\n").unwrap_err().to_string();
        assert!(e.contains("n must be at least 3"), "{e}");
        let e = Scenario::from_toml("[faults]\nloss = 1.5\n").unwrap_err().to_string();
        assert!(e.contains("faults.loss"), "{e}");
        let e = Scenario::from_toml("[sweep]\naxis = \"payload\"\nvalues = []\n")
            .unwrap_err()
            .to_string();
        assert!(e.contains("sweep.values"), "{e}");
        let down = "n = 3\n[[faults.crashes]]\nnode = 1\nat = 0\n[[faults.crashes]]\nnode = 2\nat = 0\n";
        let e = Scenario::from_toml(down).unwrap_err().to_string();
        assert!(e.contains("alive at tick 0"), "{e}");
        assert!(Scenario::from_toml(&down.replace("node = 2\nat = 0", "node = 2\nat = 1")).is_ok());
    }

    #[test]
    fn policies_parse_including_fixed_target() {
        let s = Scenario::from_toml("[[clients]]\npolicy = { fixed = 3 }\n").unwrap();
        assert_eq!(s.clients[0].policy, TargetPolicy::Fixed(crate::types::NodeId(3)));
        let s = Scenario::from_toml("[[clients]]\npolicy = \"leader\"\n").unwrap();
        assert_eq!(s.clients[0].policy, TargetPolicy::Leader);
    }

    #[test]
    fn round_trips_through_toml() {
        let s = Scenario::default();
        assert_eq!(Scenario::from_toml(&s.to_toml()).unwrap(), s);
    }
}
