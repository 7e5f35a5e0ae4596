//! Default-deny topic access control.
//!
//! Rule file format, one rule per line:
//!
//! ```text
//! # principal action filter
//! rupert publish agents/inbox/+
//! monitor subscribe agents/mirror
//! ```

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BrokerError, Topic, TopicFilter};
use crate::envelope::AgentId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AclAction {
    Publish,
    Subscribe,
}

impl fmt::Display for AclAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AclAction::Publish => "publish",
            AclAction::Subscribe => "subscribe",
        })
    }
}

/// An allow rule. There are no deny rules: anything unmatched is denied.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AclRule {
    pub principal: AgentId,
    pub action: AclAction,
    pub filter: TopicFilter,
}

impl AclRule {
    pub fn new(principal: AgentId, action: AclAction, filter: TopicFilter) -> Self {
        Self {
            principal,
            action,
            filter,
        }
    }
}

impl fmt::Display for AclRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.principal, self.action, self.filter)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Acl {
    rules: Vec<AclRule>,
}

impl Acl {
    pub fn new(rules: Vec<AclRule>) -> Self {
        Self { rules }
    }

    pub fn push(&mut self, rule: AclRule) {
        if !self.rules.contains(&rule) {
            self.rules.push(rule);
        }
    }

    pub fn rules(&self) -> &[AclRule] {
        &self.rules
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn allows_publish(&self, principal: &AgentId, topic: &Topic) -> bool {
        self.rules.iter().any(|r| {
            r.action == AclAction::Publish && &r.principal == principal && r.filter.matches(topic)
        })
    }

    /// A subscription is allowed only if a single rule covers the whole filter.
    pub fn allows_subscribe(&self, principal: &AgentId, filter: &TopicFilter) -> bool {
        self.rules.iter().any(|r| {
            r.action == AclAction::Subscribe && &r.principal == principal && r.filter.covers(filter)
        })
    }

    pub fn parse(text: &str) -> Result<Self, BrokerError> {
        let mut acl = Acl::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            // principals cannot contain '#', so a leading '#' is always a comment
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| BrokerError::AclParse { line: i + 1, message };
            let parts: Vec<&str> = line.split_whitespace().collect();
            let [principal, action, filter] = parts[..] else {
                return Err(err(format!("expected `principal action filter`, got {line:?}")));
            };
            let principal = AgentId::new(principal).map_err(|e| err(e.to_string()))?;
            let action = match action {
                "publish" => AclAction::Publish,
                "subscribe" => AclAction::Subscribe,
                other => return Err(err(format!("unknown action {other:?}"))),
            };
            let filter = TopicFilter::new(filter).map_err(|e| err(e.to_string()))?;
            acl.push(AclRule::new(principal, action, filter));
        }
        Ok(acl)
    }

    pub fn load(path: &Path) -> Result<Self, BrokerError> {
        let text = std::fs::read_to_string(path).map_err(|e| BrokerError::Io(e.to_string()))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        self.rules.iter().map(|r| format!("{r}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> AgentId {
        AgentId::new(s).unwrap()
    }

    #[test]
    fn parse_and_evaluate() {
        let acl = Acl::parse(
            "# swarm\nrupert publish agents/inbox/+\n\nmonitor subscribe agents/#\n",
        )
        .unwrap();
        assert_eq!(acl.rules().len(), 2);
        assert!(acl.allows_publish(&id("rupert"), &Topic::inbox("jeeves")));
        assert!(!acl.allows_publish(&id("rupert"), &Topic::actuate("lock")));
        assert!(!acl.allows_publish(&id("mallory"), &Topic::inbox("jeeves")));
        assert!(acl.allows_subscribe(&id("monitor"), &TopicFilter::new("agents/mirror").unwrap()));
        assert!(!acl.allows_subscribe(&id("monitor"), &TopicFilter::new("#").unwrap()));
        assert!(!acl.allows_subscribe(&id("rupert"), &TopicFilter::new("agents/inbox/+").unwrap()));
    }

    #[test]
    fn empty_acl_denies_everything() {
        let acl = Acl::default();
        assert!(!acl.allows_publish(&id("rupert"), &Topic::broadcast()));
        assert!(!acl.allows_subscribe(&id("rupert"), &TopicFilter::new("#").unwrap()));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let e = Acl::parse("rupert publish agents/inbox/+\nrupert delete x\n").unwrap_err();
        assert!(matches!(e, BrokerError::AclParse { line: 2, .. }));
        assert!(Acl::parse("rupert publish a/#/b\n").is_err());
        assert!(Acl::parse("rupert publish\n").is_err());
    }

    #[test]
    fn text_roundtrip() {
        let acl = Acl::parse("a publish x/+\nb subscribe y/#\n").unwrap();
        assert_eq!(Acl::parse(&acl.to_text()).unwrap(), acl);
    }
}
