//! Cohort files: UTF-8 JSON Lines with a schema header, plus the synthetic
//! ground-truth sidecar.
//!
//! Line 1 is a header object `{"schema":"inpatient2vec-cohort","version":1}`
//! (extra keys such as `provenance` are permitted). Every following line is
//! one visit: `{"visit_id":…,"diagnosis":…,"days":[[codes]…]}`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::synthetic::GroundTruth;
use super::{CodeVisit, Cohort, CorpusError};

pub const COHORT_SCHEMA: &str = "inpatient2vec-cohort";
pub const COHORT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    schema: String,
    version: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    provenance: Option<String>,
}

pub fn load_cohort(path: &Path) -> Result<Cohort, CorpusError> {
    let file = File::open(path)?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let (_, header_line) = lines.next().ok_or(CorpusError::EmptyFile)?;
    let header_line = header_line?;
    let header: Header =
        serde_json::from_str(&header_line).map_err(|e| CorpusError::MalformedLine {
            line: 1,
            message: format!("invalid header: {e}"),
        })?;
    if header.schema != COHORT_SCHEMA || header.version != COHORT_VERSION {
        return Err(CorpusError::UnknownSchema {
            found: format!("{} v{}", header.schema, header.version),
        });
    }

    let mut raw = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let visit: CodeVisit =
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedLine {
                line: line_no,
                message: e.to_string(),
            })?;
        for (day_idx, day) in visit.days.iter().enumerate() {
            if day.is_empty() {
                return Err(CorpusError::MalformedLine {
                    line: line_no,
                    message: format!("day {} has no activities", day_idx + 1),
                });
            }
        }
        raw.push(visit);
    }
    if raw.is_empty() {
        return Err(CorpusError::EmptyCohort);
    }

    let provenance =
        header.provenance.unwrap_or_else(|| format!("file:{}", path.display()));
    Cohort::from_code_visits(raw, provenance)
}

pub fn save_cohort(cohort: &Cohort, path: &Path) -> Result<(), CorpusError> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    let header = Header {
        schema: COHORT_SCHEMA.to_string(),
        version: COHORT_VERSION,
        provenance: Some(cohort.provenance.clone()),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for visit in cohort.to_code_visits() {
        serde_json::to_writer(&mut w, &visit)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_ground_truth(truth: &GroundTruth, path: &Path) -> Result<(), CorpusError> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, truth)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_ground_truth(path: &Path) -> Result<GroundTruth, CorpusError> {
    let file = File::open(path)?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn minimal_valid_file_loads() {
        let f = write_temp(concat!(
            "{\"schema\":\"inpatient2vec-cohort\",\"version\":1}\n",
            "{\"visit_id\":\"v1\",\"diagnosis\":\"D0\",\"days\":[[\"A\",\"B\"],[\"A\"]]}\n",
        ));
        let cohort = load_cohort(f.path()).unwrap();
        assert_eq!(cohort.visits.len(), 1);
        assert_eq!(cohort.visits[0].los(), 2);
        assert_eq!(cohort.vocabulary.n_activities(), 2);
    }

    #[test]
    fn one_day_visit_is_retained_at_load() {
        let f = write_temp(concat!(
            "{\"schema\":\"inpatient2vec-cohort\",\"version\":1}\n",
            "{\"visit_id\":\"v1\",\"diagnosis\":\"D0\",\"days\":[[\"A\"]]}\n",
        ));
        let cohort = load_cohort(f.path()).unwrap();
        assert_eq!(cohort.visits[0].los(), 1);
    }

    #[test]
    fn empty_file_is_an_error() {
        let f = write_temp("");
        assert!(matches!(load_cohort(f.path()), Err(CorpusError::EmptyFile)));
    }

    #[test]
    fn wrong_schema_is_rejected() {
        let f = write_temp("{\"schema\":\"something-else\",\"version\":1}\n");
        assert!(matches!(load_cohort(f.path()), Err(CorpusError::UnknownSchema { .. })));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let f = write_temp(concat!(
            "{\"schema\":\"inpatient2vec-cohort\",\"version\":1}\n",
            "{\"visit_id\":\"v1\",\"diagnosis\":\"D0\",\"days\":[[\"A\"]]}\n",
            "{not json}\n",
        ));
        match load_cohort(f.path()) {
            Err(CorpusError::MalformedLine { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected malformed-line error, got {other:?}"),
        }
    }

    #[test]
    fn empty_day_is_rejected() {
        let f = write_temp(concat!(
            "{\"schema\":\"inpatient2vec-cohort\",\"version\":1}\n",
            "{\"visit_id\":\"v1\",\"diagnosis\":\"D0\",\"days\":[[\"A\"],[]]}\n",
        ));
        match load_cohort(f.path()) {
            Err(CorpusError::MalformedLine { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("day 2"));
            }
            other => panic!("expected malformed-line error, got {other:?}"),
        }
    }

    #[test]
    fn save_load_round_trip_is_structurally_identical() {
        let f = write_temp(concat!(
            "{\"schema\":\"inpatient2vec-cohort\",\"version\":1}\n",
            "{\"visit_id\":\"v1\",\"diagnosis\":\"D1\",\"days\":[[\"B\",\"A\"],[\"C\"]]}\n",
            "{\"visit_id\":\"v2\",\"diagnosis\":\"D0\",\"days\":[[\"C\",\"A\"]]}\n",
        ));
        let original = load_cohort(f.path()).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        save_cohort(&original, out.path()).unwrap();
        let reloaded = load_cohort(out.path()).unwrap();
        assert!(original.structurally_eq(&reloaded));
        assert_eq!(original.provenance, reloaded.provenance);
    }
}
