//! Small hand-written record sets used by tests, demos and the service's
//! self-check. Each builder parses the same file formats the loader reads.

use crate::extract::loader::{image_record, parse_eml, parse_ics, parse_json_record};
use crate::extract::SourceRecord;

pub const WEEKEND_TRIP_ICS: &str = "BEGIN:VEVENT\r\nSUMMARY:Weekend Trip\r\nDTSTART:20250314T080000Z\r\nDTEND:20250316T200000Z\r\nLOCATION:Florence\r\nEND:VEVENT\r\n";
pub const TICKET_CAPTION: &str = "Train ticket, Rome to Florence, total 95 EUR";
pub const TICKET_META: &str = r#"{"taken_at": "2025-03-15T10:00:00Z"}"#;
pub const TICKET_BYTES: &[u8] = b"\xff\xd8\xff\xe0 ticket photo";

pub const SPEND_QUESTION: &str = "How much have I spent on the trip so far?";
pub const CALL_QUESTION: &str = "Did Sarah call before I arrived at work?";

/// Calendar event plus the photographed train ticket taken during it.
pub fn scenario_one() -> Vec<SourceRecord> {
    vec![
        parse_ics(WEEKEND_TRIP_ICS).expect("fixture"),
        image_record(TICKET_BYTES, TICKET_CAPTION, Some(TICKET_META)).expect("fixture"),
    ]
}

/// A call from Sarah at 08:45 and the work day starting at 09:00.
pub fn morning_call() -> Vec<SourceRecord> {
    vec![
        parse_json_record(
            r#"{"type": "call", "contact": "Sarah Green", "start": "2025-03-17T08:45:00Z", "duration_s": 180}"#,
        )
        .expect("fixture"),
        parse_ics("BEGIN:VEVENT\nSUMMARY:Arrived at work\nDTSTART:20250317T090000Z\nDTEND:20250317T170000Z\nLOCATION:Office\nEND:VEVENT\n")
            .expect("fixture"),
    ]
}

/// An email from "Sarah Green" and a calendar invite from "S. Green".
pub fn two_greens() -> Vec<SourceRecord> {
    vec![
        parse_eml("From: Sarah Green <sarah@example.com>\nTo: me@example.com\nSubject: Lunch on Friday\nDate: 2025-03-10T12:00:00Z\n\nShall we meet at noon?\n")
            .expect("fixture"),
        parse_ics("BEGIN:VEVENT\nSUMMARY:Project sync\nDTSTART:20250312T150000Z\nDTEND:20250312T160000Z\nORGANIZER;CN=S. Green:mailto:sarah@example.com\nEND:VEVENT\n")
            .expect("fixture"),
    ]
}

/// Writes the Scenario-1 records as loader input files into `dir`.
pub fn write_scenario_one(dir: &std::path::Path) -> std::io::Result<()> {
    std::fs::write(dir.join("weekend_trip.ics"), WEEKEND_TRIP_ICS)?;
    std::fs::write(dir.join("ticket.jpg"), TICKET_BYTES)?;
    std::fs::write(dir.join("ticket.jpg.caption.txt"), TICKET_CAPTION)?;
    std::fs::write(dir.join("ticket.jpg.meta.json"), TICKET_META)
}
