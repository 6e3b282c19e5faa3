use std::path::Path;

use super::{DatasetManifest, TrialKey, TrialRecord};
use crate::error::{Error, Result};
use crate::sigproc::{Modality, MultichannelSeries};

fn parse_cell(cell: &str) -> Option<f32> {
    let cell = cell.trim();
    // typeset minus signs show up in exported spreadsheets
    if cell.contains('\u{2212}') {
        cell.replace('\u{2212}', "-").parse().ok()
    } else {
        cell.parse().ok()
    }
}

/// Parses comma-separated numeric rows. A first line with any non-numeric
/// cell is taken as a header. Returns `(values, channels)`.
pub fn parse_csv(text: &str) -> Result<(Vec<f32>, usize)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut values = Vec::new();
    let mut channels = 0;
    for (i, record) in reader.records().enumerate() {
        let line = i + 1;
        let record = record.map_err(|e| Error::Csv {
            line,
            detail: e.to_string(),
        })?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        let parsed: Vec<Option<f32>> = record.iter().map(parse_cell).collect();
        if line == 1 && parsed.iter().any(Option::is_none) {
            continue;
        }
        if channels == 0 {
            channels = parsed.len();
        } else if parsed.len() != channels {
            return Err(Error::Csv {
                line,
                detail: format!("{} columns, expected {channels}", parsed.len()),
            });
        }
        for (col, v) in parsed.into_iter().enumerate() {
            match v {
                Some(v) if v.is_finite() => values.push(v),
                _ => {
                    return Err(Error::Csv {
                        line,
                        detail: format!("column {} is not a finite number: {:?}", col + 1, &record[col]),
                    })
                }
            }
        }
    }
    if channels == 0 {
        return Err(Error::Csv {
            line: 0,
            detail: "no data rows".into(),
        });
    }
    Ok((values, channels))
}

fn read_series(path: &Path, expected: usize, modality: Modality, rate: f64) -> Result<MultichannelSeries<f32>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (values, channels) = parse_csv(&text)?;
    if channels != expected {
        return Err(Error::ChannelMismatch {
            modality: modality.to_string(),
            expected,
            actual: channels,
        });
    }
    MultichannelSeries::new(values, channels, rate, modality)
}

/// Imports one trial exported as CSV (one row per frame, one column per
/// channel), checking channel counts against the manifest.
pub fn import_csv(semg_csv: &Path, imu_csv: Option<&Path>, manifest: &DatasetManifest, key: TrialKey) -> Result<TrialRecord> {
    let rate = manifest.sample_rate_hz;
    let semg = read_series(semg_csv, manifest.semg_channels, Modality::Semg, rate)?;
    let imu = match (imu_csv, manifest.imu_kind) {
        (Some(p), Some(kind)) => Some(read_series(p, manifest.imu_channels, kind, rate)?),
        (Some(_), None) => return Err(Error::Manifest(format!("{} declares no IMU", manifest.name))),
        (None, _) => None,
    };
    let rec = TrialRecord::new(key, semg, imu)?;
    manifest.check_record(&rec)?;
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{DatabaseProfile, GestureSet, GST_VERSION};

    fn db2_manifest() -> DatasetManifest {
        let p = DatabaseProfile::ninapro_db2();
        DatasetManifest {
            gst_version: GST_VERSION,
            name: p.name.clone(),
            subjects: vec![1],
            gestures: GestureSet {
                count: p.action_gestures(),
                labels: (0..p.action_gestures()).map(|g| format!("g{g}")).collect(),
            },
            trials_per_gesture: p.trials_total,
            sample_rate_hz: p.sample_rate_hz,
            semg_channels: p.semg_channels,
            imu_channels: p.imu_channels,
            imu_kind: Some(p.imu_kind),
            files: vec![],
        }
    }

    fn rows(cols: usize, n: usize) -> String {
        (0..n)
            .map(|r| (0..cols).map(|c| format!("{}", r * cols + c)).collect::<Vec<_>>().join(","))
            .collect::<Vec<_>>()
            .join("\n")
    }

    const KEY: TrialKey = TrialKey {
        subject: 1,
        gesture: 0,
        trial: 1,
    };

    #[test]
    fn twelve_columns_accepted_eleven_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = db2_manifest();
        let good = dir.path().join("semg.csv");
        let header: Vec<String> = (1..=12).map(|c| format!("ch{c}")).collect();
        std::fs::write(&good, format!("{}\n{}\n", header.join(","), rows(12, 5))).unwrap();
        let acc = dir.path().join("acc.csv");
        std::fs::write(&acc, rows(36, 5)).unwrap();
        let t = import_csv(&good, Some(&acc), &m, KEY).unwrap();
        assert_eq!((t.frames(), t.semg.channels()), (5, 12));
        assert_eq!(t.semg.at(1, 0), 12.0);
        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, rows(11, 5)).unwrap();
        assert!(matches!(
            import_csv(&bad, None, &m, KEY),
            Err(Error::ChannelMismatch {
                expected: 12,
                actual: 11,
                ..
            })
        ));
    }

    #[test]
    fn number_forms() {
        let (v, c) = parse_csv("3.0e\u{2212}1, -2.5e-1 ,4\n").unwrap();
        assert_eq!(c, 3);
        assert_eq!(v, vec![0.3, -0.25, 4.0]);
        assert_eq!(parse_csv("3.0e-1").unwrap().0, vec![0.3]);
    }

    #[test]
    fn ragged_and_non_numeric_rows() {
        assert!(matches!(parse_csv("1,2\n3\n"), Err(Error::Csv { line: 2, .. })));
        assert!(matches!(parse_csv("1,2\n3,x\n"), Err(Error::Csv { line: 2, .. })));
        assert!(matches!(parse_csv("a,b\n"), Err(Error::Csv { .. })));
        assert!(matches!(parse_csv("1,nan\n"), Err(Error::Csv { line: 1, .. })));
    }
}
