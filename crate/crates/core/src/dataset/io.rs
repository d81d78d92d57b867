use std::io::{Read, Write};

use super::QosRecord;
use crate::error::{Error, Result};

pub const RECORD_CSV_HEADER: [&str; 7] = [
    "user_id",
    "service_id",
    "value",
    "user_city",
    "user_as",
    "service_city",
    "service_as",
];

/// Canonical record interchange: CSV with a header. Values are written in
/// shortest round-trip form, so reading back is lossless.
pub fn write_records_csv<W: Write>(out: W, records: &[QosRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RECORD_CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.user_id.to_string(),
            r.service_id.to_string(),
            r.value.to_string(),
            r.user_city.to_string(),
            r.user_as.to_string(),
            r.service_city.to_string(),
            r.service_as.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<records>", e))?;
    Ok(())
}

pub fn read_records_csv<R: Read>(input: R) -> Result<Vec<QosRecord>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != RECORD_CSV_HEADER {
        return Err(Error::Parse {
            path: "<records>".into(),
            line: 1,
            msg: format!("unexpected header {header:?}"),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |msg: String| Error::Parse {
            path: "<records>".into(),
            line,
            msg,
        };
        if rec.len() != 7 {
            return Err(bad(format!("expected 7 fields, got {}", rec.len())));
        }
        let int = |k: usize| -> Result<usize> {
            rec[k].trim().parse().map_err(|_| bad(format!("bad {} `{}`", RECORD_CSV_HEADER[k], &rec[k])))
        };
        let value: f64 = rec[2].trim().parse().map_err(|_| bad(format!("bad value `{}`", &rec[2])))?;
        out.push(QosRecord {
            user_id: int(0)?,
            service_id: int(1)?,
            value,
            user_city: int(3)?,
            user_as: int(4)?,
            service_city: int(5)?,
            service_as: int(6)?,
        });
    }
    Ok(out)
}
