use std::path::Path;

use super::EngagementRecord;
use crate::error::Result;
use crate::util::{read_jsonl, write_jsonl};

/// Writes one JSON record per line, in order.
pub fn write_log<'a>(records: impl IntoIterator<Item = &'a EngagementRecord>, path: &Path) -> Result<()> {
    write_jsonl(path, records)
}

/// Reads a JSON-lines log. Blank lines are skipped; a malformed line, a
/// negative count or an unknown action type fails with the line number.
pub fn read_log(path: &Path) -> Result<Vec<EngagementRecord>> {
    read_jsonl(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthlog::Action;
    use crate::Error;
    use std::collections::BTreeMap;

    fn record(pin: u64, counts: &[(Action, u64)]) -> EngagementRecord {
        EngagementRecord {
            query_id: 1,
            segment_id: 2,
            pin_id: pin,
            action_counts: counts.iter().copied().collect::<BTreeMap<_, _>>(),
            position: pin as u32,
            age_days_at_impression: 12.5,
        }
    }

    #[test]
    fn round_trip_preserves_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let records = vec![
            record(3, &[(Action::Repin, 2)]),
            record(1, &[]),
            record(2, &[(Action::Closeup, 1), (Action::Hide, 4)]),
        ];
        write_log(&records, &path).unwrap();
        assert_eq!(read_log(&path).unwrap(), records);
    }

    #[test]
    fn field_names_match_schema() {
        let line = serde_json::to_string(&record(5, &[(Action::Click, 1)])).unwrap();
        assert_eq!(
            line,
            r#"{"query_id":1,"segment_id":2,"pin_id":5,"action_counts":{"click":1},"position":5,"age_days_at_impression":12.5}"#
        );
    }

    #[test]
    fn negative_count_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let good = serde_json::to_string(&record(1, &[])).unwrap();
        let bad = r#"{"query_id":1,"segment_id":2,"pin_id":5,"action_counts":{"click":-1},"position":0,"age_days_at_impression":1.0}"#;
        std::fs::write(&path, format!("{good}\n{bad}\n")).unwrap();
        match read_log(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_action_lists_valid_set() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let bad = r#"{"query_id":1,"segment_id":2,"pin_id":5,"action_counts":{"like":1},"position":0,"age_days_at_impression":1.0}"#;
        std::fs::write(&path, format!("{bad}\n")).unwrap();
        let err = read_log(&path).unwrap_err().to_string();
        assert!(err.contains(":1:"), "{err}");
        for name in ["repin", "click", "closeup", "longclick", "hide"] {
            assert!(err.contains(name), "{err}");
        }
    }

    #[test]
    fn empty_file_is_empty_log() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(read_log(&path).unwrap().is_empty());
    }
}
