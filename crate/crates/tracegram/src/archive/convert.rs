//! Converters from an archive to interchange formats: a Chrome trace
//! JSON timeline and a flat columnar CSV.

use std::io::Write;

use serde_json::{json, Map, Value};

use crate::model::ArgValue;

use super::{corrupt, ArchiveError, ArchiveReader, META_FILE};

fn arg_value_json(arg: &ArgValue) -> Value {
    match arg {
        ArgValue::Int(v) => json!(v),
        ArgValue::Str(s) => json!(s),
        ArgValue::Handle(h) => json!(format!("h{h}")),
        ArgValue::UniqueHandle(u) => json!(format!("g{u}")),
        // Offsets are decoded to integers before conversion.
        ArgValue::Offset(_) => json!(null),
    }
}

fn arg_value_cell(arg: &ArgValue) -> String {
    match arg {
        ArgValue::Int(v) => v.to_string(),
        ArgValue::Str(s) => s.clone(),
        ArgValue::Handle(h) => format!("h{h}"),
        ArgValue::UniqueHandle(u) => format!("g{u}"),
        ArgValue::Offset(_) => String::new(),
    }
}

/// Emit every rank as Chrome trace-event JSON (one complete `X` event per
/// call, timestamps in microseconds).
pub fn to_chrome_timeline<W: Write>(reader: &ArchiveReader, mut out: W) -> Result<(), ArchiveError> {
    let ticks_to_us = reader.meta().time_resolution * 1e6;
    out.write_all(b"[")?;
    let mut first = true;
    for rank in 0..reader.rank_count() {
        for rec in reader.read_records(rank)? {
            let info = reader.registry().info(rec.func).map_err(|_| {
                corrupt(
                    META_FILE,
                    0,
                    format!("record references unregistered function {}", rec.func.0),
                )
            })?;
            let mut args = Map::new();
            for (i, arg) in rec.args.iter().enumerate() {
                args.insert(format!("arg{}", i + 1), arg_value_json(arg));
            }
            args.insert("call_depth".into(), json!(rec.call_depth));
            let event = json!({
                "name": info.name,
                "cat": info.layer,
                "ph": "X",
                "pid": rank,
                "tid": rec.thread_id,
                "ts": rec.t_entry as f64 * ticks_to_us,
                "dur": (rec.t_exit - rec.t_entry) as f64 * ticks_to_us,
                "args": Value::Object(args),
            });
            if !first {
                out.write_all(b",\n")?;
            }
            first = false;
            serde_json::to_writer(&mut out, &event).map_err(std::io::Error::from)?;
        }
    }
    out.write_all(b"]")?;
    out.flush()?;
    Ok(())
}

/// Emit every rank as CSV with one row per call. Header:
/// `rank,tid,depth,func,t_entry,t_exit,arg1..argN` where `N` is the
/// largest registered arity. Ticks stay integral.
pub fn to_columnar<W: Write>(reader: &ArchiveReader, out: W) -> Result<(), ArchiveError> {
    let max_arity = reader
        .meta()
        .functions
        .iter()
        .map(|f| f.arity as usize)
        .max()
        .unwrap_or(0);
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(out);
    let mut header = vec![
        "rank".to_string(),
        "tid".to_string(),
        "depth".to_string(),
        "func".to_string(),
        "t_entry".to_string(),
        "t_exit".to_string(),
    ];
    for i in 1..=max_arity {
        header.push(format!("arg{i}"));
    }
    w.write_record(&header).map_err(csv_io)?;
    let mut row = Vec::with_capacity(header.len());
    for rank in 0..reader.rank_count() {
        for rec in reader.read_records(rank)? {
            let info = reader.registry().info(rec.func).map_err(|_| {
                corrupt(
                    META_FILE,
                    0,
                    format!("record references unregistered function {}", rec.func.0),
                )
            })?;
            row.clear();
            row.push(rank.to_string());
            row.push(rec.thread_id.to_string());
            row.push(rec.call_depth.to_string());
            row.push(info.name.clone());
            row.push(rec.t_entry.to_string());
            row.push(rec.t_exit.to_string());
            for arg in &rec.args {
                row.push(arg_value_cell(arg));
            }
            row.resize(header.len(), String::new());
            w.write_record(&row).map_err(csv_io)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> ArchiveError {
    ArchiveError::Io(std::io::Error::new(std::io::ErrorKind::Other, e))
}

#[cfg(test)]
mod tests {
    use super::super::tests_support::strided_archive;
    use super::*;
    use crate::archive::ArchiveReader;

    #[test]
    fn chrome_timeline_is_valid_json_with_one_event_per_call() {
        let dir = tempfile::tempdir().unwrap();
        strided_archive(dir.path(), 2, 2, 10);
        let reader = ArchiveReader::open(dir.path()).unwrap();
        let mut buf = Vec::new();
        to_chrome_timeline(&reader, &mut buf).unwrap();
        let events: Vec<serde_json::Value> = serde_json::from_slice(&buf).unwrap();
        assert_eq!(events.len(), 8);
        let e = &events[0];
        assert_eq!(e["ph"], "X");
        assert_eq!(e["pid"], 0);
        assert_eq!(e["name"], "lseek");
        assert_eq!(e["cat"], "posix");
        // Default clock: entry tick 0, exit tick 1; 1e-7 s/tick -> 0.1 us.
        assert_eq!(e["ts"], 0.0);
        assert!((e["dur"].as_f64().unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(e["args"]["arg1"], "h3");
        assert_eq!(e["args"]["arg2"], 0);
        assert_eq!(e["args"]["call_depth"], 0);
        // Rank 1's first seek lands at its own stripe.
        let r1 = events.iter().find(|e| e["pid"] == 1).unwrap();
        assert_eq!(r1["args"]["arg2"], 10);
    }

    #[test]
    fn empty_timeline_is_an_empty_array() {
        let dir = tempfile::tempdir().unwrap();
        strided_archive(dir.path(), 1, 0, 10);
        let reader = ArchiveReader::open(dir.path()).unwrap();
        let mut buf = Vec::new();
        to_chrome_timeline(&reader, &mut buf).unwrap();
        assert_eq!(buf, b"[]");
    }

    #[test]
    fn columnar_rows_match_records() {
        let dir = tempfile::tempdir().unwrap();
        strided_archive(dir.path(), 2, 2, 10);
        let reader = ArchiveReader::open(dir.path()).unwrap();
        let mut buf = Vec::new();
        to_columnar(&reader, &mut buf).unwrap();
        let mut r = csv::Reader::from_reader(&buf[..]);
        assert_eq!(
            r.headers().unwrap(),
            &csv::StringRecord::from(vec![
                "rank", "tid", "depth", "func", "t_entry", "t_exit", "arg1", "arg2"
            ])
        );
        let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
        assert_eq!(rows.len(), 8);
        assert_eq!(
            rows[0],
            csv::StringRecord::from(vec!["0", "0", "0", "lseek", "0", "1", "h3", "0"])
        );
        assert_eq!(
            rows[1],
            csv::StringRecord::from(vec!["0", "0", "0", "write", "2", "3", "h3", "10"])
        );
        // Rank 1 second iteration seeks to 30.
        assert_eq!(rows[6][3], *"lseek");
        assert_eq!(rows[6][7], *"30");
    }
}
