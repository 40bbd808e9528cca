//! Reads an ingestion source directory: one file per record.
//!
//! | extension                   | modality   | format                                        |
//! |-----------------------------|------------|-----------------------------------------------|
//! | `.ics`                      | calendar   | `KEY[;PARAMS]:VALUE` lines of one VEVENT      |
//! | `.txt`                      | note       | UTF-8 text                                    |
//! | `.md`                       | document   | UTF-8 text; first heading is the title        |
//! | `.eml` `.msg`                | message    | `Header: value` lines, blank line, body       |
//! | `.json`                     | per `type` | flat object, see [`parse_json_record`]        |
//! | `.jpg .jpeg .png .gif .webp`| image      | caption from the caption client (sidecar      |
//! |                             |            | `<file>.caption.txt`), optional `<file>.meta.json` |
//!
//! Sidecar files and dotfiles are skipped. Files are visited in name order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::Value;
use sha2::{Digest, Sha256};

use super::caption::{caption_image, CaptionClient, ImageInput};
use super::{ExtractError, Modality, SourceRecord};
use crate::model::Timestamp;

pub const IMAGE_EXTENSIONS: &[&str] = &["jpg", "jpeg", "png", "gif", "webp"];

#[derive(Debug, Clone)]
pub struct LoadedRecord {
    pub record: SourceRecord,
    pub origin: String,
}

#[derive(Debug)]
pub struct LoadFailure {
    pub origin: String,
    pub error: ExtractError,
}

#[derive(Debug, Default)]
pub struct LoadOutcome {
    pub records: Vec<LoadedRecord>,
    pub failures: Vec<LoadFailure>,
}

fn is_sidecar(name: &str) -> bool {
    name.ends_with(".caption.txt") || name.ends_with(".meta.json")
}

/// Loads every record file directly inside `dir`.
pub fn load_dir(dir: &Path, captioner: &dyn CaptionClient) -> std::io::Result<LoadOutcome> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    let mut out = LoadOutcome::default();
    for path in paths {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        if name.starts_with('.') || is_sidecar(&name) {
            continue;
        }
        match load_file(&path, captioner) {
            Ok(Some(record)) => out.records.push(LoadedRecord { record, origin: name }),
            Ok(None) => tracing::debug!(file = %name, "skipping unsupported file"),
            Err(error) => out.failures.push(LoadFailure { origin: name, error }),
        }
    }
    Ok(out)
}

/// Parses a single file; `Ok(None)` for unsupported extensions.
pub fn load_file(path: &Path, captioner: &dyn CaptionClient) -> Result<Option<SourceRecord>, ExtractError> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or_default().to_ascii_lowercase();
    let io = |e: std::io::Error| ExtractError::Malformed(format!("{}: {e}", path.display()));
    if IMAGE_EXTENSIONS.contains(&ext.as_str()) {
        let bytes = std::fs::read(path).map_err(io)?;
        let caption = caption_image(&ImageInput { bytes: &bytes, path: Some(path) }, captioner)?;
        let mut meta_path = path.as_os_str().to_os_string();
        meta_path.push(".meta.json");
        let meta = match std::fs::read_to_string(&meta_path) {
            Ok(s) => Some(s),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(io(e)),
        };
        return image_record(&bytes, &caption, meta.as_deref()).map(Some);
    }
    let read = || std::fs::read_to_string(path).map_err(io);
    let record = match ext.as_str() {
        "ics" => parse_ics(&read()?)?,
        "txt" => plain_record(Modality::Note, &read()?)?,
        "md" => plain_record(Modality::Document, &read()?)?,
        "eml" | "msg" => parse_eml(&read()?)?,
        "json" => parse_json_record(&read()?)?,
        _ => return Ok(None),
    };
    Ok(Some(record))
}

pub fn image_record(bytes: &[u8], caption: &str, meta_json: Option<&str>) -> Result<SourceRecord, ExtractError> {
    let mut metadata = BTreeMap::new();
    if let Some(meta) = meta_json {
        let v: Value = serde_json::from_str(meta).map_err(|e| ExtractError::Malformed(format!("meta sidecar: {e}")))?;
        let obj = v.as_object().ok_or_else(|| ExtractError::Malformed("meta sidecar must be an object".into()))?;
        for (k, v) in obj {
            metadata.insert(k.clone(), scalar_string(v));
        }
    }
    metadata.insert("image_sha256".into(), hex::encode(Sha256::digest(bytes)));
    let start = metadata.get("taken_at").and_then(|t| Timestamp::parse(t));
    SourceRecord::new(Modality::Image, caption.trim(), start, None, metadata)
}

fn plain_record(modality: Modality, text: &str) -> Result<SourceRecord, ExtractError> {
    if text.trim().is_empty() {
        return Err(ExtractError::EmptyPayload);
    }
    SourceRecord::new(modality, text.trim(), None, None, BTreeMap::new())
}

fn unescape_ics(v: &str) -> String {
    v.replace("\\n", "\n").replace("\\N", "\n").replace("\\,", ",").replace("\\;", ";").replace("\\\\", "\\")
}

/// Minimal iCalendar subset: SUMMARY, DTSTART, DTEND, LOCATION, ATTENDEE,
/// ORGANIZER, DESCRIPTION. Folded continuation lines are joined.
pub fn parse_ics(src: &str) -> Result<SourceRecord, ExtractError> {
    let mut lines: Vec<String> = Vec::new();
    for raw in src.lines() {
        if (raw.starts_with(' ') || raw.starts_with('\t')) && !lines.is_empty() {
            let last = lines.last_mut().expect("non-empty");
            last.push_str(&raw[1..]);
        } else {
            lines.push(raw.trim_end().to_string());
        }
    }
    let mut title = None;
    let mut start = None;
    let mut end = None;
    let mut location = None;
    let mut people: Vec<String> = Vec::new();
    let mut description = None;
    for line in &lines {
        let Some((head, value)) = line.split_once(':') else { continue };
        let mut parts = head.split(';');
        let name = parts.next().unwrap_or_default().trim().to_ascii_uppercase();
        let params: BTreeMap<String, String> = parts
            .filter_map(|p| p.split_once('='))
            .map(|(k, v)| (k.trim().to_ascii_uppercase(), v.trim().trim_matches('"').to_string()))
            .collect();
        let value = unescape_ics(value.trim());
        match name.as_str() {
            "SUMMARY" => title = Some(value),
            "DTSTART" => start = Some(ics_time(&value)?),
            "DTEND" => end = Some(ics_time(&value)?),
            "LOCATION" => location = Some(value),
            "ATTENDEE" | "ORGANIZER" => {
                let who = params.get("CN").cloned().unwrap_or_else(|| value.trim_start_matches("mailto:").to_string());
                if !who.is_empty() {
                    people.push(who);
                }
            }
            "DESCRIPTION" => description = Some(value),
            _ => {}
        }
    }
    let title = title.ok_or_else(|| ExtractError::Malformed("calendar entry without SUMMARY".into()))?;
    let mut text = format!("title: {title}\n");
    if let Some(l) = location {
        text.push_str(&format!("location: {l}\n"));
    }
    if !people.is_empty() {
        text.push_str(&format!("with: {}\n", people.join(", ")));
    }
    if let Some(d) = description {
        text.push_str(d.trim());
        text.push('\n');
    }
    SourceRecord::new(Modality::Calendar, text.trim_end(), start, end, BTreeMap::new())
}

fn ics_time(v: &str) -> Result<Timestamp, ExtractError> {
    Timestamp::parse(v).ok_or_else(|| ExtractError::Malformed(format!("bad calendar time {v:?}")))
}

/// Email-like message: headers (From, To, Subject, Date) then the body.
pub fn parse_eml(src: &str) -> Result<SourceRecord, ExtractError> {
    let mut lines = src.lines();
    let mut headers: Vec<(String, String)> = Vec::new();
    for line in lines.by_ref() {
        if line.trim().is_empty() {
            break;
        }
        let Some((k, v)) = line.split_once(':') else {
            return Err(ExtractError::Malformed(format!("bad header line {line:?}")));
        };
        headers.push((k.trim().to_ascii_lowercase(), v.trim().to_string()));
    }
    let body: Vec<&str> = lines.collect();
    let mut text = String::new();
    let mut start = None;
    let mut metadata = BTreeMap::new();
    for (k, v) in &headers {
        match k.as_str() {
            "from" => {
                text.push_str(&format!("from: {v}\n"));
                metadata.insert("sender".into(), v.clone());
            }
            "to" | "cc" => text.push_str(&format!("to: {v}\n")),
            "subject" => text.push_str(&format!("title: {v}\n")),
            "date" => start = Some(Timestamp::parse(v).ok_or_else(|| ExtractError::Malformed(format!("bad date {v:?}")))?),
            _ => {}
        }
    }
    text.push_str(body.join("\n").trim());
    if text.trim().is_empty() {
        return Err(ExtractError::EmptyPayload);
    }
    SourceRecord::new(Modality::Message, text.trim_end(), start, None, metadata)
}

fn scalar_string(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Array(items) => items.iter().map(scalar_string).collect::<Vec<_>>().join(", "),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

/// Flat JSON object with a `"type"` naming the modality. `title`, `start`
/// (alias `time`), `end` and `text` (alias `body`) are structural; every
/// other field becomes a `key: value` line in key order.
///
/// ```json
/// {"type": "call", "title": "Call with Sarah Green", "contact": "Sarah Green",
///  "start": "2025-03-14T08:45:00Z", "duration_s": 120}
/// ```
pub fn parse_json_record(src: &str) -> Result<SourceRecord, ExtractError> {
    let v: Value = serde_json::from_str(src).map_err(|e| ExtractError::Malformed(e.to_string()))?;
    let obj = v.as_object().ok_or_else(|| ExtractError::Malformed("record must be a JSON object".into()))?;
    let kind = obj
        .get("type")
        .and_then(Value::as_str)
        .ok_or_else(|| ExtractError::Malformed("missing \"type\"".into()))?;
    let modality: Modality = kind.parse()?;
    if modality == Modality::Image {
        return Err(ExtractError::Malformed("images are loaded from image files".into()));
    }
    let time = |keys: &[&str]| -> Result<Option<Timestamp>, ExtractError> {
        for k in keys {
            if let Some(v) = obj.get(*k) {
                let s = scalar_string(v);
                return Timestamp::parse(&s)
                    .map(Some)
                    .ok_or_else(|| ExtractError::Malformed(format!("bad instant in {k}: {s:?}")));
            }
        }
        Ok(None)
    };
    let start = time(&["start", "time"])?;
    let end = time(&["end"])?;
    let mut text = String::new();
    if let Some(t) = obj.get("title") {
        text.push_str(&format!("title: {}\n", scalar_string(t)));
    }
    for (k, v) in obj {
        if matches!(k.as_str(), "type" | "title" | "start" | "time" | "end" | "text" | "body") {
            continue;
        }
        let s = scalar_string(v);
        if !s.trim().is_empty() {
            text.push_str(&format!("{k}: {}\n", s.replace('\n', " ")));
        }
    }
    if let Some(body) = obj.get("text").or_else(|| obj.get("body")) {
        text.push_str(scalar_string(body).trim());
    }
    if text.trim().is_empty() {
        return Err(ExtractError::EmptyPayload);
    }
    SourceRecord::new(modality, text.trim_end(), start, end, BTreeMap::new())
}
