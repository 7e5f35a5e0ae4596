use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::BrokerError;

pub const INBOX_PREFIX: &str = "agents/inbox";
pub const BROADCAST: &str = "agents/broadcast";
pub const MIRROR: &str = "agents/mirror";
pub const AUDIT: &str = "agents/audit";
pub const ACTUATE_PREFIX: &str = "iot/actuate";
pub const SENSOR_PREFIX: &str = "iot/sensor";

/// A concrete topic: non-empty `/`-separated segments without wildcards.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Topic(String);

impl Topic {
    pub fn new(path: impl Into<String>) -> Result<Self, BrokerError> {
        let path = path.into();
        let ok = !path.is_empty()
            && path
                .split('/')
                .all(|s| !s.is_empty() && !s.contains(['+', '#']));
        if ok {
            Ok(Self(path))
        } else {
            Err(BrokerError::InvalidTopic(path))
        }
    }

    pub fn inbox(agent: &str) -> Self {
        Self::new(format!("{INBOX_PREFIX}/{agent}")).expect("agent ids contain no separators")
    }

    pub fn actuate(device: &str) -> Self {
        Self::new(format!("{ACTUATE_PREFIX}/{device}")).expect("device ids contain no separators")
    }

    pub fn sensor(device: &str) -> Self {
        Self::new(format!("{SENSOR_PREFIX}/{device}")).expect("device ids contain no separators")
    }

    pub fn broadcast() -> Self {
        Self(BROADCAST.into())
    }

    pub fn mirror() -> Self {
        Self(MIRROR.into())
    }

    pub fn audit() -> Self {
        Self(AUDIT.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn segments(&self) -> impl Iterator<Item = &str> {
        self.0.split('/')
    }

    /// Last segment, e.g. the agent id of an inbox topic.
    pub fn leaf(&self) -> &str {
        self.0.rsplit('/').next().unwrap_or(&self.0)
    }

    pub fn starts_with(&self, prefix: &str) -> bool {
        self.0
            .strip_prefix(prefix)
            .is_some_and(|rest| rest.starts_with('/'))
    }
}

impl TryFrom<String> for Topic {
    type Error = BrokerError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Self::new(s)
    }
}

impl From<Topic> for String {
    fn from(t: Topic) -> Self {
        t.0
    }
}

impl FromStr for Topic {
    type Err = BrokerError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Segment {
    Level(String),
    /// `+`
    Single,
    /// `#`, final segment only
    Multi,
}

/// Subscription / ACL filter with `+` and trailing `#` wildcards.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TopicFilter {
    raw: String,
    segments: Vec<Segment>,
}

impl TopicFilter {
    pub fn new(raw: impl Into<String>) -> Result<Self, BrokerError> {
        let raw = raw.into();
        let err = || BrokerError::InvalidFilter(raw.clone());
        if raw.is_empty() {
            return Err(err());
        }
        let parts: Vec<&str> = raw.split('/').collect();
        let mut segments = Vec::with_capacity(parts.len());
        for (i, p) in parts.iter().enumerate() {
            let seg = match *p {
                "+" => Segment::Single,
                "#" if i + 1 == parts.len() => Segment::Multi,
                "" => return Err(err()),
                s if s.contains(['+', '#']) => return Err(err()),
                s => Segment::Level(s.to_string()),
            };
            segments.push(seg);
        }
        Ok(Self { raw, segments })
    }

    pub fn as_str(&self) -> &str {
        &self.raw
    }

    pub fn matches(&self, topic: &Topic) -> bool {
        topic_matches(self, topic)
    }

    /// True iff every topic matched by `other` is also matched by `self`.
    pub fn covers(&self, other: &TopicFilter) -> bool {
        let mut i = 0;
        loop {
            match (self.segments.get(i), other.segments.get(i)) {
                (Some(Segment::Multi), _) => return true,
                (None, None) => return true,
                (Some(Segment::Single), Some(Segment::Level(_) | Segment::Single)) => {}
                (Some(Segment::Level(a)), Some(Segment::Level(b))) if a == b => {}
                _ => return false,
            }
            i += 1;
        }
    }
}

impl From<&Topic> for TopicFilter {
    fn from(t: &Topic) -> Self {
        TopicFilter::new(t.as_str()).expect("topics are valid filters")
    }
}

impl FromStr for TopicFilter {
    type Err = BrokerError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

impl fmt::Display for TopicFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

impl Serialize for TopicFilter {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.raw)
    }
}

impl<'de> Deserialize<'de> for TopicFilter {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        TopicFilter::new(s).map_err(serde::de::Error::custom)
    }
}

/// Standard single-level (`+`) / multi-level (`#`) matching. `a/#` also
/// matches the parent level `a`.
pub fn topic_matches(filter: &TopicFilter, topic: &Topic) -> bool {
    let mut levels = topic.segments();
    for seg in &filter.segments {
        match seg {
            Segment::Multi => return true,
            Segment::Single => {
                if levels.next().is_none() {
                    return false;
                }
            }
            Segment::Level(l) => {
                if levels.next() != Some(l.as_str()) {
                    return false;
                }
            }
        }
    }
    levels.next().is_none()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f(s: &str) -> TopicFilter {
        TopicFilter::new(s).unwrap()
    }
    fn t(s: &str) -> Topic {
        Topic::new(s).unwrap()
    }

    #[test]
    fn wildcard_examples() {
        assert!(topic_matches(&f("agents/inbox/+"), &t("agents/inbox/percy")));
        assert!(topic_matches(&f("#"), &t("agents/mirror")));
        assert!(!topic_matches(&f("agents/+"), &t("agents/inbox/percy")));
    }

    #[test]
    fn more_matching_cases() {
        assert!(topic_matches(&f("agents/#"), &t("agents")));
        assert!(topic_matches(&f("agents/#"), &t("agents/inbox/percy")));
        assert!(!topic_matches(&f("agents/inbox"), &t("agents/inbox/percy")));
        assert!(!topic_matches(&f("agents/inbox/+/x"), &t("agents/inbox/percy")));
        assert!(topic_matches(&f("+/+/+"), &t("iot/actuate/lock")));
        assert!(!topic_matches(&f("iot/sensor/+"), &t("iot/actuate/lock")));
    }

    #[test]
    fn invalid_topics_and_filters() {
        for bad in ["", "a//b", "/a", "a/", "a/+", "a/#"] {
            assert!(Topic::new(bad).is_err(), "{bad:?}");
        }
        for bad in ["", "a/#/b", "a+/b", "a//b", "#a"] {
            assert!(TopicFilter::new(bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn coverage() {
        assert!(f("agents/#").covers(&f("agents/inbox/+")));
        assert!(f("agents/inbox/+").covers(&f("agents/inbox/percy")));
        assert!(!f("agents/inbox/percy").covers(&f("agents/inbox/+")));
        assert!(!f("agents/+").covers(&f("agents/#")));
        assert!(f("#").covers(&f("#")));
        assert!(f("agents/mirror").covers(&f("agents/mirror")));
    }

    #[test]
    fn topic_helpers() {
        assert_eq!(Topic::inbox("percy").leaf(), "percy");
        assert!(Topic::actuate("lock").starts_with(ACTUATE_PREFIX));
        assert!(!t("iot/actuatex/a").starts_with(ACTUATE_PREFIX));
    }
}
