//! Turning source records into triples.
//!
//! The [`ReferenceExtractor`] is a deterministic rule set: one typed head
//! node per record, `key: value` lines as literals or typed mentions,
//! currency amounts, capitalized name sequences, and a link from the User
//! root to the head. Model-backed extractors return the same [`Triple`]
//! shape through the [`Extractor`] trait.

pub mod caption;
pub mod loader;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::model::{Label, RecordId, Scalar, Timestamp};
use crate::text::{canonicalize, snake_case};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Calendar,
    Image,
    Note,
    Message,
    Call,
    Alarm,
    Contact,
    Document,
}

impl Modality {
    pub const ALL: [Modality; 8] = [
        Modality::Calendar,
        Modality::Image,
        Modality::Note,
        Modality::Message,
        Modality::Call,
        Modality::Alarm,
        Modality::Contact,
        Modality::Document,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Modality::Calendar => "calendar",
            Modality::Image => "image",
            Modality::Note => "note",
            Modality::Message => "message",
            Modality::Call => "call",
            Modality::Alarm => "alarm",
            Modality::Contact => "contact",
            Modality::Document => "document",
        }
    }

    fn requires_start(&self) -> bool {
        matches!(self, Modality::Calendar | Modality::Call)
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = ExtractError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Modality::ALL
            .iter()
            .copied()
            .find(|m| m.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| ExtractError::Malformed(format!("unknown modality {s:?}")))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExtractError {
    #[error("record payload is empty")]
    EmptyPayload,
    #[error("{0} records must carry a start instant")]
    MissingStart(Modality),
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("extractor failed: {0}")]
    Extractor(String),
    #[error(transparent)]
    Caption(#[from] caption::CaptionError),
}

/// A raw shard of personal data. `id` is the SHA-256 of the canonical payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub id: RecordId,
    pub modality: Modality,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<Timestamp>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct CanonicalPayload<'a> {
    modality: Modality,
    text: &'a str,
    start: Option<Timestamp>,
    end: Option<Timestamp>,
    metadata: &'a BTreeMap<String, String>,
}

/// Wire form of a record submitted for ingestion; the id is computed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordDraft {
    pub modality: Modality,
    pub text: String,
    #[serde(default)]
    pub start: Option<Timestamp>,
    #[serde(default)]
    pub end: Option<Timestamp>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl SourceRecord {
    pub fn new(
        modality: Modality,
        text: impl Into<String>,
        start: Option<Timestamp>,
        end: Option<Timestamp>,
        metadata: BTreeMap<String, String>,
    ) -> Result<Self, ExtractError> {
        let text = text.into();
        if modality.requires_start() && start.is_none() {
            return Err(ExtractError::MissingStart(modality));
        }
        if let (Some(s), Some(e)) = (start, end) {
            if s > e {
                return Err(ExtractError::Malformed("start is after end".into()));
            }
        }
        let mut r = SourceRecord { id: RecordId([0; 32]), modality, text, start, end, metadata };
        r.id = RecordId::of_bytes(&r.canonical_payload());
        Ok(r)
    }

    pub fn from_draft(d: RecordDraft) -> Result<Self, ExtractError> {
        SourceRecord::new(d.modality, d.text, d.start, d.end, d.metadata)
    }

    pub fn canonical_payload(&self) -> Vec<u8> {
        serde_json::to_vec(&CanonicalPayload {
            modality: self.modality,
            text: &self.text,
            start: self.start,
            end: self.end,
            metadata: &self.metadata,
        })
        .expect("payload serializes")
    }

    pub fn id_is_valid(&self) -> bool {
        RecordId::of_bytes(&self.canonical_payload()) == self.id
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Mention {
    pub surface: String,
    pub type_hint: Label,
    pub key: String,
}

impl Mention {
    pub fn new(surface: impl Into<String>, type_hint: Label) -> Self {
        let surface = surface.into().trim().to_string();
        let key = canonicalize(&surface);
        Mention { surface, type_hint, key }
    }

    pub fn user() -> Self {
        Mention { surface: "Me".into(), type_hint: Label::User, key: crate::model::USER_KEY.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripleObject {
    Mention(Mention),
    Literal(Scalar),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triple {
    pub subject: Mention,
    pub predicate: String,
    pub object: TripleObject,
    pub source: RecordId,
    #[serde(default = "full_confidence")]
    pub confidence: f64,
}

fn full_confidence() -> f64 {
    1.0
}

pub trait Extractor: Send + Sync {
    fn extract(&self, record: &SourceRecord) -> Result<Vec<Triple>, ExtractError>;
}

/// Runs `extractor` on `record` and checks the result shape.
pub fn extract_triples(record: &SourceRecord, extractor: &dyn Extractor) -> Result<Vec<Triple>, ExtractError> {
    if record.text.trim().is_empty() {
        return Err(ExtractError::EmptyPayload);
    }
    let triples = extractor.extract(record)?;
    for t in &triples {
        if t.predicate.trim().is_empty() {
            return Err(ExtractError::Extractor("triple with empty predicate".into()));
        }
        if t.source != record.id {
            return Err(ExtractError::Extractor("triple attributed to another record".into()));
        }
        if !(0.0..=1.0).contains(&t.confidence) {
            return Err(ExtractError::Extractor(format!("confidence {} out of range", t.confidence)));
        }
    }
    Ok(triples)
}

/// Returns the head mention: the object of the User root's triple.
pub fn head_of(triples: &[Triple]) -> Option<&Mention> {
    triples.iter().find_map(|t| match (&t.subject.type_hint, &t.object) {
        (Label::User, TripleObject::Mention(m)) => Some(m),
        _ => None,
    })
}

const RECEIPT_WORDS: &[&str] = &["receipt", "ticket", "invoice", "bill", "booking", "fare"];

/// Ontology label of a record's head node. Images whose caption reads like
/// a purchase become `Receipt`, other images `Photo`.
pub fn classify_head_label(record: &SourceRecord, caption_triples: &[Triple]) -> Label {
    match record.modality {
        Modality::Calendar => Label::Event,
        Modality::Note => Label::Note,
        Modality::Message => Label::Message,
        Modality::Call => Label::Call,
        Modality::Alarm => Label::Alarm,
        Modality::Contact => Label::Contact,
        Modality::Document => Label::Document,
        Modality::Image => {
            let mut text = record.text.clone();
            for t in caption_triples {
                if let TripleObject::Literal(Scalar::Text(s)) = &t.object {
                    text.push(' ');
                    text.push_str(s);
                }
            }
            let words: BTreeSet<String> = canonicalize(&text)
                .split(|c: char| !c.is_alphanumeric())
                .map(|w| w.trim_end_matches('s').to_string())
                .collect();
            if RECEIPT_WORDS.iter().any(|w| words.contains(*w)) {
                Label::Receipt
            } else {
                Label::Photo
            }
        }
    }
}

/// Normalized currency amount, e.g. `"95 EUR"` / 95.0 / `"EUR"`.
#[derive(Debug, Clone, PartialEq)]
pub struct Amount {
    pub literal: String,
    pub value: f64,
    pub currency: String,
}

const ISO_CODES: &[&str] = &[
    "EUR", "USD", "GBP", "CHF", "JPY", "CAD", "AUD", "SEK", "NOK", "DKK", "PLN", "CZK", "HUF", "CNY", "INR",
];

static AMOUNT_RE: LazyLock<Regex> = LazyLock::new(|| {
    let codes = ISO_CODES.join("|");
    Regex::new(&format!(
        r"(?i)(?:(?P<num>\d+(?:[.,]\d{{1,2}})?)\s?(?P<cur>€|\$|£|\b(?:{codes})\b))|(?:(?P<sym>€|\$|£)\s?(?P<num2>\d+(?:[.,]\d{{1,2}})?))"
    ))
    .expect("amount regex")
});

fn symbol_code(s: &str) -> String {
    match s {
        "€" => "EUR".into(),
        "$" => "USD".into(),
        "£" => "GBP".into(),
        other => other.to_ascii_uppercase(),
    }
}

/// Finds the salient currency amount in `text`: one preceded by "total" if
/// any, otherwise the first. Decimal commas are accepted.
pub fn parse_amount(text: &str) -> Option<Amount> {
    let mut found: Vec<(usize, Amount)> = Vec::new();
    for caps in AMOUNT_RE.captures_iter(text) {
        let whole = caps.get(0)?;
        let (num, cur) = match (caps.name("num"), caps.name("cur"), caps.name("sym"), caps.name("num2")) {
            (Some(n), Some(c), _, _) => (n.as_str(), c.as_str()),
            (_, _, Some(s), Some(n)) => (n.as_str(), s.as_str()),
            _ => continue,
        };
        let normalized = num.replace(',', ".");
        let Ok(value) = normalized.parse::<f64>() else { continue };
        let currency = symbol_code(cur);
        found.push((
            whole.start(),
            Amount { literal: format!("{normalized} {currency}"), value, currency },
        ));
    }
    let lower = text.to_lowercase();
    found
        .iter()
        .find(|(pos, _)| {
            let before = &lower[..*pos];
            let tail: String = before.chars().rev().take(12).collect::<String>().chars().rev().collect();
            tail.contains("total")
        })
        .or_else(|| found.first())
        .map(|(_, a)| a.clone())
}

static KV_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*([A-Za-z][A-Za-z0-9 _\-]{0,40}?)\s*:\s*(\S.*?)\s*$").expect("kv regex"));

static NAME_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\b(?:(?:[A-Z][a-z]+|[A-Z]\.)\s+){1,3}[A-Z][a-z]+\b").expect("name regex")
});

/// Capitalized words that start sentences or titles but never names.
const NOT_NAME_WORDS: &[&str] = &[
    "The", "A", "An", "I", "We", "My", "Our", "Dear", "Hi", "Hello", "Thanks", "Call", "Meet", "Meeting",
    "Lunch", "Dinner", "Ask", "Remind", "Pick", "Buy", "Bring", "Monday", "Tuesday", "Wednesday", "Thursday",
    "Friday", "Saturday", "Sunday", "January", "February", "March", "April", "May", "June", "July", "August",
    "September", "October", "November", "December", "Also", "Then", "Today", "Tomorrow", "Yesterday", "With",
    "From", "To", "And", "For", "At", "On", "In", "Met", "Saw", "Told", "See", "Notes", "Note", "Trip",
];

const TITLE_KEYS: &[&str] = &["title", "summary", "subject", "name", "label"];
const FROM_KEYS: &[&str] = &["from", "sender"];
const WITH_KEYS: &[&str] = &["with", "attendee", "attendees", "to", "contact", "participants", "organizer", "caller"];
const LOCATION_KEYS: &[&str] = &["location", "where", "place", "venue"];
const ORG_KEYS: &[&str] = &["company", "organization", "employer"];
const START_KEYS: &[&str] = &["start", "date", "time", "when", "taken_at", "sent", "at"];
const END_KEYS: &[&str] = &["end", "until"];
const AMOUNT_KEYS: &[&str] = &["amount", "total", "cost", "price"];

/// Deterministic rule-based extractor.
#[derive(Debug, Default, Clone, Copy)]
pub struct ReferenceExtractor;

struct Collector {
    source: RecordId,
    head: Mention,
    triples: Vec<Triple>,
    seen: BTreeSet<(String, String)>,
}

impl Collector {
    fn push(&mut self, predicate: &str, object: TripleObject) {
        let key = match &object {
            TripleObject::Mention(m) => format!("m:{}:{}", m.type_hint, m.key),
            TripleObject::Literal(_) => format!("l:{predicate}"),
        };
        if !self.seen.insert((predicate.to_string(), key)) {
            return;
        }
        self.triples.push(Triple {
            subject: self.head.clone(),
            predicate: predicate.to_string(),
            object,
            source: self.source,
            confidence: 1.0,
        });
    }

    fn mention(&mut self, predicate: &str, surface: &str, label: Label) {
        let m = Mention::new(surface, label);
        if m.key.is_empty() || (m.key == self.head.key && label == self.head.type_hint) {
            return;
        }
        self.push(predicate, TripleObject::Mention(m));
    }
}

fn split_people(value: &str) -> Vec<String> {
    value
        .split([',', ';'])
        .flat_map(|part| part.split(" and "))
        .map(|p| {
            let p = match p.find('<') {
                Some(i) => &p[..i],
                None => p,
            };
            p.trim().trim_start_matches("mailto:").trim().trim_matches('"').to_string()
        })
        .filter(|p| p.chars().next().is_some_and(|c| c.is_uppercase()))
        .collect()
}

fn first_clause(text: &str) -> String {
    let clause = text.split([',', '.', ';', '\n']).map(str::trim).find(|s| !s.is_empty()).unwrap_or(text);
    clause.chars().take(80).collect::<String>().trim().to_string()
}

fn strip_name_noise(candidate: &str) -> Option<String> {
    let mut tokens: Vec<&str> = candidate.split_whitespace().collect();
    while tokens.first().is_some_and(|t| NOT_NAME_WORDS.contains(t)) {
        tokens.remove(0);
    }
    while tokens.last().is_some_and(|t| NOT_NAME_WORDS.contains(t)) {
        tokens.pop();
    }
    if tokens.len() < 2 || tokens.iter().any(|t| NOT_NAME_WORDS.contains(t)) {
        return None;
    }
    if tokens.last().is_some_and(|t| t.ends_with('.')) {
        return None;
    }
    Some(tokens.join(" "))
}

impl Extractor for ReferenceExtractor {
    fn extract(&self, record: &SourceRecord) -> Result<Vec<Triple>, ExtractError> {
        if record.text.trim().is_empty() {
            return Err(ExtractError::EmptyPayload);
        }
        let mut kv: Vec<(String, String)> = Vec::new();
        let mut free: Vec<&str> = Vec::new();
        for line in record.text.lines() {
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            match KV_RE.captures(trimmed) {
                Some(c) if !c[2].starts_with("//") => {
                    if let Some(k) = snake_case(&c[1]) {
                        kv.push((k, c[2].to_string()));
                        continue;
                    }
                    free.push(trimmed);
                }
                _ => free.push(trimmed),
            }
        }
        let kv_get = |keys: &[&str]| kv.iter().find(|(k, _)| keys.contains(&k.as_str())).map(|(_, v)| v.clone());

        let label = classify_head_label(record, &[]);
        let title = kv_get(TITLE_KEYS).or_else(|| record.metadata.get("title").cloned());
        let people_hint = kv_get(WITH_KEYS)
            .or_else(|| kv_get(FROM_KEYS))
            .and_then(|v| split_people(&v).into_iter().next());
        let display = match (title, record.modality) {
            (Some(t), _) => t,
            (None, Modality::Image) => first_clause(&record.text),
            (None, Modality::Call) => match &people_hint {
                Some(p) => format!("Call with {p}"),
                None => "Call".to_string(),
            },
            (None, Modality::Message) => match kv_get(FROM_KEYS).or_else(|| record.metadata.get("sender").cloned()) {
                Some(f) => format!("Message from {f}"),
                None => free.first().map(|l| first_clause(l)).unwrap_or_else(|| "Message".into()),
            },
            (None, Modality::Alarm) => match record.start.or_else(|| kv_get(START_KEYS).and_then(|v| Timestamp::parse(&v))) {
                Some(t) => format!("Alarm {}", t.datetime().format("%Y-%m-%d %H:%M")),
                None => "Alarm".into(),
            },
            (None, _) => free
                .first()
                .map(|l| l.trim_start_matches('#').trim().chars().take(80).collect())
                .unwrap_or_else(|| label.to_string()),
        };
        let head = Mention::new(display.clone(), label);
        let mut c = Collector { source: record.id, head: head.clone(), triples: Vec::new(), seen: BTreeSet::new() };

        let user_pred = match label {
            Label::Event | Label::Call | Label::Alarm => "experienced",
            _ => "owns",
        };
        c.triples.push(Triple {
            subject: Mention::user(),
            predicate: user_pred.into(),
            object: TripleObject::Mention(head.clone()),
            source: record.id,
            confidence: 1.0,
        });

        // Interval: record fields first, then textual keys, then photo metadata.
        let start = record
            .start
            .or_else(|| kv_get(START_KEYS).and_then(|v| Timestamp::parse(&v)))
            .or_else(|| record.metadata.get("taken_at").and_then(|v| Timestamp::parse(v)));
        let end = record.end.or_else(|| kv_get(END_KEYS).and_then(|v| Timestamp::parse(&v)));
        if let Some(s) = start {
            c.push("start", TripleObject::Literal(Scalar::Instant(s)));
            let e = end.filter(|e| *e >= s).unwrap_or(s);
            c.push("end", TripleObject::Literal(Scalar::Instant(e)));
        }

        if record.modality == Modality::Image {
            c.push("caption", TripleObject::Literal(Scalar::Text(record.text.trim().to_string())));
        }

        for (k, v) in &kv {
            let k = k.as_str();
            if TITLE_KEYS.contains(&k) {
                if k == "name" && record.modality == Modality::Contact {
                    c.mention("represents", v, Label::Person);
                }
                continue;
            }
            if START_KEYS.contains(&k) || END_KEYS.contains(&k) {
                continue;
            }
            if FROM_KEYS.contains(&k) {
                for p in split_people(v) {
                    c.mention("from", &p, Label::Person);
                }
            } else if WITH_KEYS.contains(&k) {
                for p in split_people(v) {
                    c.mention("with", &p, Label::Person);
                }
            } else if LOCATION_KEYS.contains(&k) {
                c.mention("located_at", v, Label::Location);
            } else if ORG_KEYS.contains(&k) {
                c.mention("affiliated_with", v, Label::Organization);
            } else if AMOUNT_KEYS.contains(&k) && parse_amount(v).is_some() {
                // emitted once below from the whole text
            } else {
                c.push(k, TripleObject::Literal(Scalar::infer(v)));
            }
        }

        for (key, pred) in [("sender", "from"), ("from", "from"), ("attendee", "with"), ("with", "with")] {
            if let Some(v) = record.metadata.get(key) {
                for p in split_people(v) {
                    c.mention(pred, &p, Label::Person);
                }
            }
        }

        if !free.is_empty() && record.modality != Modality::Image {
            let body = free.join(" ");
            let body = if body.chars().count() > 500 { body.chars().take(500).collect() } else { body };
            c.push("text", TripleObject::Literal(Scalar::Text(body)));
        }
        let scan_free = if record.modality == Modality::Image { vec![record.text.as_str()] } else { free.clone() };
        for line in &scan_free {
            for m in NAME_RE.find_iter(line) {
                if let Some(name) = strip_name_noise(m.as_str()) {
                    if canonicalize(&name) != head.key {
                        c.mention("mentions", &name, Label::Person);
                    }
                }
            }
        }

        if let Some(a) = parse_amount(&record.text) {
            c.push("amount", TripleObject::Literal(Scalar::Text(a.literal)));
            c.push("amount_value", TripleObject::Literal(Scalar::Decimal(a.value)));
            c.push("amount_currency", TripleObject::Literal(Scalar::Text(a.currency)));
        }
        Ok(c.triples)
    }
}
