use std::path::Path;

use crate::error::{Error, Result};
use crate::Tensor;

use super::{BandManifest, SampleSet};

fn parse_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => parse_error(path, line, format!("{other:?}")),
    }
}

/// Reads `sample_id,t,<bands…>,label` rows. Band columns must match `manifest` by name
/// and order; reflectance-role columns are clamped to `[0, 1]`.
pub fn load_csv(path: &Path, manifest: &BandManifest) -> Result<SampleSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut records = reader.records();

    let header = match records.next() {
        Some(r) => r.map_err(|e| csv_error(path, e))?,
        None => return Err(parse_error(path, 1, "empty file, header required")),
    };
    let names = manifest.names();
    let mut expected = vec!["sample_id".to_string(), "t".to_string()];
    expected.extend(names.iter().cloned());
    expected.push("label".to_string());
    let found: Vec<&str> = header.iter().map(str::trim).collect();
    if found != expected {
        return Err(parse_error(
            path,
            1,
            format!("header {:?} does not match expected {:?}", found.join(","), expected.join(",")),
        ));
    }

    let c = names.len();
    let clamp: Vec<bool> = manifest.bands().iter().map(|b| b.role.is_some()).collect();
    let mut ids: Vec<String> = Vec::new();
    let mut labels: Vec<u8> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut steps: Option<usize> = None;
    let mut current_len = 0usize;

    let close_sample = |len: usize, steps: &mut Option<usize>, line: u64, id: &str| -> Result<()> {
        match *steps {
            None => *steps = Some(len),
            Some(t) if t != len => {
                return Err(parse_error(
                    path,
                    line,
                    format!("sample {id:?} has {len} time steps, earlier samples have {t}"),
                ))
            }
            _ => {}
        }
        Ok(())
    };

    let mut last_line = 1;
    for record in records {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        last_line = line;
        if record.len() != c + 3 {
            return Err(parse_error(
                path,
                line,
                format!("expected {} fields, found {}", c + 3, record.len()),
            ));
        }
        let id = record[0].trim();
        let t: usize = record[1]
            .trim()
            .parse()
            .map_err(|_| parse_error(path, line, format!("time index {:?} is not an integer", &record[1])))?;
        let label: u8 = match record[c + 2].trim() {
            "0" => 0,
            "1" => 1,
            other => return Err(parse_error(path, line, format!("label {other:?} is not 0 or 1"))),
        };

        let continuing = ids.last().is_some_and(|last| last == id);
        if continuing {
            if labels.last() != Some(&label) {
                return Err(parse_error(path, line, format!("label changes within sample {id:?}")));
            }
        } else {
            if let Some(prev) = ids.last() {
                close_sample(current_len, &mut steps, line, prev)?;
            }
            if ids.iter().any(|seen| seen == id) {
                return Err(parse_error(path, line, format!("rows of sample {id:?} are not contiguous")));
            }
            ids.push(id.to_string());
            labels.push(label);
            current_len = 0;
        }
        if t != current_len {
            return Err(parse_error(
                path,
                line,
                format!("sample {id:?}: expected t = {current_len}, found {t}"),
            ));
        }
        current_len += 1;

        for (j, cell) in record.iter().skip(2).take(c).enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| parse_error(path, line, format!("column {:?}: {cell:?} is not a number", names[j])))?;
            if !v.is_finite() {
                return Err(parse_error(path, line, format!("column {:?}: non-finite value", names[j])));
            }
            values.push(if clamp[j] { v.clamp(0.0, 1.0) } else { v });
        }
    }
    let Some(last) = ids.last() else {
        return Err(parse_error(path, last_line, "no data rows"));
    };
    close_sample(current_len, &mut steps, last_line, last)?;
    let t = steps.unwrap_or(0);
    SampleSet::new(Tensor::new(vec![ids.len(), t, c], values)?, labels, manifest.clone(), ids)
}

/// Loads a file whose band columns carry no roles, taking their names from the header.
pub fn load_csv_unassigned(path: &Path) -> Result<SampleSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header = match reader.records().next() {
        Some(r) => r.map_err(|e| csv_error(path, e))?,
        None => return Err(parse_error(path, 1, "empty file, header required")),
    };
    let fields: Vec<&str> = header.iter().map(str::trim).collect();
    if fields.len() < 4 || fields[0] != "sample_id" || fields[1] != "t" || fields[fields.len() - 1] != "label" {
        return Err(parse_error(
            path,
            1,
            format!("header {:?} is not sample_id,t,<bands…>,label", fields.join(",")),
        ));
    }
    let names: Vec<String> = fields[2..fields.len() - 1].iter().map(|s| s.to_string()).collect();
    let manifest = BandManifest::unassigned(&names).map_err(|e| parse_error(path, 1, e.to_string()))?;
    load_csv(path, &manifest)
}

/// Writes `s` in the format [`load_csv`] reads. Values use the shortest representation
/// that parses back to the same `f64`.
pub fn save_csv(s: &SampleSet, path: &Path) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut header = vec!["sample_id".to_string(), "t".to_string()];
    header.extend(s.manifest.names());
    header.push("label".to_string());
    writer.write_record(&header).map_err(|e| csv_error(path, e))?;
    let c = s.channels();
    for (i, sample) in s.values.data().chunks(s.steps() * c).enumerate() {
        for (t, row) in sample.chunks(c).enumerate() {
            let mut record = Vec::with_capacity(c + 3);
            record.push(s.ids[i].clone());
            record.push(t.to_string());
            record.extend(row.iter().map(|v| v.to_string()));
            record.push(s.labels[i].to_string());
            writer.write_record(&record).map_err(|e| csv_error(path, e))?;
        }
    }
    writer.flush()?;
    Ok(())
}
