//! Identifiers, scalar values and graph element types shared by every module.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveDateTime, TimeZone, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::text::canonicalize;

/// Longest display name kept verbatim, in code points.
pub const MAX_DISPLAY_NAME: usize = 1024;

/// Canonical key of the single `User` root.
pub const USER_KEY: &str = "user";

macro_rules! hex_id {
    ($name:ident, $len:expr, $what:literal) => {
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub [u8; $len]);

        impl $name {
            pub fn as_bytes(&self) -> &[u8; $len] {
                &self.0
            }

            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.to_hex())
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), self.to_hex())
            }
        }

        impl FromStr for $name {
            type Err = ParseIdError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let mut out = [0u8; $len];
                hex::decode_to_slice(s.trim(), &mut out).map_err(|_| ParseIdError {
                    kind: $what,
                    input: s.chars().take(80).collect(),
                })?;
                Ok(Self(out))
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_hex())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

hex_id!(NodeId, 16, "node id");
hex_id!(EdgeId, 16, "edge id");
hex_id!(RecordId, 32, "record id");

#[derive(Debug, Clone, thiserror::Error)]
#[error("invalid {kind}: {input:?}")]
pub struct ParseIdError {
    kind: &'static str,
    input: String,
}

impl NodeId {
    /// First 16 bytes of SHA-256 over `label || 0x1F || canonical_key`.
    pub fn derive(label: Label, canonical_key: &str) -> Self {
        let mut h = Sha256::new();
        h.update(label.as_str().as_bytes());
        h.update([0x1F]);
        h.update(canonical_key.as_bytes());
        let digest = h.finalize();
        let mut out = [0u8; 16];
        out.copy_from_slice(&digest[..16]);
        NodeId(out)
    }

    pub fn user_root() -> Self {
        Self::derive(Label::User, USER_KEY)
    }
}

impl EdgeId {
    pub fn derive(src: NodeId, predicate: &str, dst: NodeId) -> Self {
        let mut h = Sha256::new();
        h.update(src.0);
        h.update([0x1F]);
        h.update(predicate.as_bytes());
        h.update([0x1F]);
        h.update(dst.0);
        let digest = h.finalize();
        let mut out = [0u8; 16];
        out.copy_from_slice(&digest[..16]);
        EdgeId(out)
    }
}

impl RecordId {
    pub fn of_bytes(payload: &[u8]) -> Self {
        RecordId(Sha256::digest(payload).into())
    }
}

/// UTC instant with millisecond precision. Renders as `YYYY-MM-DDTHH:MM:SS.mmmZ`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(DateTime<Utc>);

impl Timestamp {
    pub fn now() -> Self {
        Self::from_millis(Utc::now().timestamp_millis())
    }

    pub fn from_millis(ms: i64) -> Self {
        Timestamp(
            Utc.timestamp_millis_opt(ms)
                .single()
                .unwrap_or(DateTime::<Utc>::UNIX_EPOCH),
        )
    }

    pub fn millis(&self) -> i64 {
        self.0.timestamp_millis()
    }

    pub fn datetime(&self) -> DateTime<Utc> {
        self.0
    }

    /// Accepts RFC 3339, `YYYY-MM-DD[ T]HH:MM[:SS]` (taken as UTC), compact
    /// calendar form `YYYYMMDDTHHMMSS[Z]`, and bare dates.
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        if s.is_empty() {
            return None;
        }
        if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
            return Some(Self::from_millis(dt.with_timezone(&Utc).timestamp_millis()));
        }
        let naive = s.trim_end_matches('Z');
        for fmt in [
            "%Y-%m-%dT%H:%M:%S%.f",
            "%Y-%m-%dT%H:%M:%S",
            "%Y-%m-%d %H:%M:%S",
            "%Y-%m-%dT%H:%M",
            "%Y-%m-%d %H:%M",
            "%Y%m%dT%H%M%S",
        ] {
            if let Ok(ndt) = NaiveDateTime::parse_from_str(naive, fmt) {
                return Some(Self::from_millis(ndt.and_utc().timestamp_millis()));
            }
        }
        for fmt in ["%Y-%m-%d", "%Y%m%d"] {
            if let Ok(d) = NaiveDate::parse_from_str(naive, fmt) {
                let ndt = d.and_hms_opt(0, 0, 0)?;
                return Some(Self::from_millis(ndt.and_utc().timestamp_millis()));
            }
        }
        None
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.format("%Y-%m-%dT%H:%M:%S%.3fZ"))
    }
}

impl fmt::Debug for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Timestamp({self})")
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Timestamp::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("bad instant {s:?}")))
    }
}

/// Property value. Exactly five kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scalar {
    Text(String),
    Integer(i64),
    Decimal(f64),
    Boolean(bool),
    Instant(Timestamp),
}

impl Scalar {
    /// Infers the narrowest kind for a raw textual value.
    pub fn infer(raw: &str) -> Scalar {
        let t = raw.trim();
        if let Ok(i) = t.parse::<i64>() {
            return Scalar::Integer(i);
        }
        if t.contains('.') && t.chars().all(|c| c.is_ascii_digit() || c == '.' || c == '-') {
            if let Ok(f) = t.parse::<f64>() {
                if f.is_finite() {
                    return Scalar::Decimal(f);
                }
            }
        }
        match t.to_ascii_lowercase().as_str() {
            "true" | "yes" => return Scalar::Boolean(true),
            "false" | "no" => return Scalar::Boolean(false),
            _ => {}
        }
        if t.len() >= 10 && t.as_bytes()[0].is_ascii_digit() {
            if let Some(ts) = Timestamp::parse(t) {
                return Scalar::Instant(ts);
            }
        }
        Scalar::Text(t.to_string())
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Scalar::Integer(i) => Some(*i as f64),
            Scalar::Decimal(d) => Some(*d),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Scalar::Text(t) => Some(t),
            _ => None,
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Text(t) => f.write_str(t),
            Scalar::Integer(i) => write!(f, "{i}"),
            Scalar::Decimal(d) => write!(f, "{d}"),
            Scalar::Boolean(b) => write!(f, "{b}"),
            Scalar::Instant(t) => write!(f, "{t}"),
        }
    }
}

/// Closed ontology of node labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    User,
    Person,
    Event,
    Location,
    Photo,
    Receipt,
    Message,
    Note,
    Call,
    Alarm,
    Contact,
    Organization,
    Document,
    Entity,
}

impl Label {
    pub const ALL: [Label; 14] = [
        Label::User,
        Label::Person,
        Label::Event,
        Label::Location,
        Label::Photo,
        Label::Receipt,
        Label::Message,
        Label::Note,
        Label::Call,
        Label::Alarm,
        Label::Contact,
        Label::Organization,
        Label::Document,
        Label::Entity,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Label::User => "User",
            Label::Person => "Person",
            Label::Event => "Event",
            Label::Location => "Location",
            Label::Photo => "Photo",
            Label::Receipt => "Receipt",
            Label::Message => "Message",
            Label::Note => "Note",
            Label::Call => "Call",
            Label::Alarm => "Alarm",
            Label::Contact => "Contact",
            Label::Organization => "Organization",
            Label::Document => "Document",
            Label::Entity => "Entity",
        }
    }

    /// Labels eligible for the initial-expansion name rule.
    pub fn is_personal_name(&self) -> bool {
        matches!(self, Label::Person | Label::Contact)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, thiserror::Error)]
#[error("invalid label {0:?}")]
pub struct InvalidLabel(pub String);

impl FromStr for Label {
    type Err = InvalidLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Label::ALL
            .iter()
            .copied()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| InvalidLabel(s.to_string()))
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub type Properties = BTreeMap<String, Scalar>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub label: Label,
    pub display_name: String,
    pub canonical_key: String,
    #[serde(default)]
    pub properties: Properties,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid_start: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid_end: Option<Timestamp>,
    #[serde(default)]
    pub provenance: BTreeSet<RecordId>,
    #[serde(default)]
    pub has_vector: bool,
    pub created_at: Timestamp,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub display_name_truncated: bool,
}

impl Node {
    /// Builds a node whose canonical key and id are derived from `display_name`.
    pub fn new(label: Label, display_name: impl Into<String>) -> Self {
        let display_name = display_name.into();
        let key = canonicalize(&display_name);
        Self::with_key(label, display_name, key)
    }

    pub fn with_key(label: Label, display_name: impl Into<String>, key: impl Into<String>) -> Self {
        let canonical_key = key.into();
        let (display_name, display_name_truncated) = truncate_display(display_name.into());
        Node {
            id: NodeId::derive(label, &canonical_key),
            label,
            display_name,
            canonical_key,
            properties: Properties::new(),
            valid_start: None,
            valid_end: None,
            provenance: BTreeSet::new(),
            has_vector: false,
            created_at: Timestamp::now(),
            display_name_truncated,
        }
    }

    /// The root is timeless: its `created_at` is the epoch in every store.
    pub fn user_root() -> Self {
        let mut n = Node::with_key(Label::User, "Me", USER_KEY);
        n.created_at = Timestamp::from_millis(0);
        n
    }

    pub fn property(mut self, key: impl Into<String>, value: Scalar) -> Self {
        self.properties.insert(key.into(), value);
        self
    }

    pub fn interval(mut self, start: Timestamp, end: Option<Timestamp>) -> Self {
        self.valid_start = Some(start);
        self.valid_end = Some(end.unwrap_or(start));
        self
    }

    pub fn source(mut self, record: RecordId) -> Self {
        self.provenance.insert(record);
        self
    }

    pub fn time_interval(&self) -> Option<TimeInterval> {
        let start = self.valid_start?;
        let end = self.valid_end.unwrap_or(start);
        Some(TimeInterval { start, end })
    }
}

fn truncate_display(name: String) -> (String, bool) {
    if name.chars().count() <= MAX_DISPLAY_NAME {
        (name, false)
    } else {
        (name.chars().take(MAX_DISPLAY_NAME).collect(), true)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub id: EdgeId,
    pub src: NodeId,
    pub dst: NodeId,
    pub predicate: String,
    #[serde(default)]
    pub properties: Properties,
    #[serde(default)]
    pub provenance: BTreeSet<RecordId>,
}

impl Edge {
    pub fn new(src: NodeId, predicate: impl Into<String>, dst: NodeId) -> Self {
        let predicate = predicate.into();
        Edge {
            id: EdgeId::derive(src, &predicate, dst),
            src,
            dst,
            predicate,
            properties: Properties::new(),
            provenance: BTreeSet::new(),
        }
    }

    pub fn source(mut self, record: RecordId) -> Self {
        self.provenance.insert(record);
        self
    }

    pub fn sources(mut self, records: impl IntoIterator<Item = RecordId>) -> Self {
        self.provenance.extend(records);
        self
    }

    /// The endpoint that is not `id`, or `None` if `id` is not an endpoint.
    pub fn other(&self, id: NodeId) -> Option<NodeId> {
        if self.src == id {
            Some(self.dst)
        } else if self.dst == id {
            Some(self.src)
        } else {
            None
        }
    }
}

/// Closed interval; point events have `end == start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeInterval {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl TimeInterval {
    pub fn overlaps(&self, other: &TimeInterval) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

impl fmt::Display for TimeInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.start, self.end)
    }
}

/// Inventory of everything a cascade deletion removed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeletionReceipt {
    pub root: NodeId,
    pub deleted_nodes: Vec<NodeId>,
    pub deleted_edges: Vec<EdgeId>,
    pub removed_vectors: Vec<NodeId>,
    #[serde(default)]
    pub removed_records: Vec<RecordId>,
    pub executed_at: Timestamp,
}
