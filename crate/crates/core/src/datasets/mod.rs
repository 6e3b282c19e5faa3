//! Dataset manifests, binary trial files, CSV import, trial trimming,
//! train/test splits and the synthetic generator.

mod csv_import;
mod profile;
mod storage;
mod synth;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sigproc::{Modality, MultichannelSeries};

pub use csv_import::{import_csv, parse_csv};
pub use profile::{make_split, make_split_for_subjects, DatabaseProfile, Experiment, SplitPlan, TrainingRole, WindowTag};
pub use storage::{decode_trial, encode_trial, read_trial, write_trial, DatasetLock, TRIAL_MAGIC};
pub use synth::{synth_generate, synth_trials, SynthConfig};

pub const GST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Identifies one recorded trial. Subjects and trials are 1-based, gestures
/// are 0-based class indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TrialKey {
    pub subject: u32,
    pub gesture: u32,
    pub trial: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    #[serde(flatten)]
    pub key: TrialKey,
    /// Relative to the dataset directory.
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GestureSet {
    pub count: usize,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub gst_version: u32,
    pub name: String,
    pub subjects: Vec<u32>,
    pub gestures: GestureSet,
    pub trials_per_gesture: u32,
    pub sample_rate_hz: f64,
    pub semg_channels: usize,
    pub imu_channels: usize,
    /// `None` for sEMG-only datasets.
    pub imu_kind: Option<Modality>,
    pub files: Vec<FileEntry>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.gst_version != GST_VERSION {
            return Err(Error::Manifest(format!("unsupported gst_version {}", self.gst_version)));
        }
        if self.semg_channels == 0 || (self.imu_kind.is_some() && self.imu_channels == 0) {
            return Err(Error::Manifest("channel counts must be at least 1".into()));
        }
        if let Some(kind) = self.imu_kind {
            if !kind.is_imu() {
                return Err(Error::Manifest(format!("{kind} is not an IMU modality")));
            }
        }
        if self.gestures.labels.len() != self.gestures.count {
            return Err(Error::Manifest(format!(
                "{} gesture labels for {} gestures",
                self.gestures.labels.len(),
                self.gestures.count
            )));
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::Manifest(format!("sample rate {}", self.sample_rate_hz)));
        }
        let subjects: BTreeSet<u32> = self.subjects.iter().copied().collect();
        if subjects.len() != self.subjects.len() {
            return Err(Error::Manifest("duplicate subject ids".into()));
        }
        let mut seen = BTreeSet::new();
        for f in &self.files {
            let k = f.key;
            if !seen.insert(k) {
                return Err(Error::Manifest(format!("duplicate entry for {k:?}")));
            }
            if !subjects.contains(&k.subject) || k.gesture as usize >= self.gestures.count || k.trial == 0 || k.trial > self.trials_per_gesture {
                return Err(Error::Manifest(format!("entry {k:?} outside the declared ranges")));
            }
            if Path::new(&f.path).is_absolute() || f.path.contains("..") {
                return Err(Error::Manifest(format!("path {} must be relative to the dataset", f.path)));
            }
        }
        Ok(())
    }

    pub fn entry(&self, key: TrialKey) -> Option<&FileEntry> {
        self.files.iter().find(|f| f.key == key)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: DatasetManifest = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }

    /// Every entry resolves to a file and every trial file is indexed.
    pub fn verify_files(&self, dir: &Path) -> Result<()> {
        let indexed: BTreeSet<PathBuf> = self.files.iter().map(|f| dir.join(&f.path)).collect();
        for p in &indexed {
            if !p.is_file() {
                return Err(Error::Manifest(format!("{} is indexed but missing", p.display())));
            }
        }
        let mut pending = vec![dir.to_path_buf()];
        while let Some(d) = pending.pop() {
            for item in std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
                let p = item.map_err(|e| Error::io(&d, e))?.path();
                if p.is_dir() {
                    pending.push(p);
                } else if p.extension().is_some_and(|e| e == "gst") && !indexed.contains(&p) {
                    return Err(Error::Manifest(format!("orphan trial file {}", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn load_trial(&self, dir: &Path, key: TrialKey) -> Result<TrialRecord> {
        let entry = self
            .entry(key)
            .ok_or_else(|| Error::MissingData(format!("no file for {key:?}")))?;
        let rec = read_trial(&dir.join(&entry.path), key, self.sample_rate_hz)?;
        self.check_record(&rec)?;
        Ok(rec)
    }

    /// Channel counts of a record against the declared ones.
    pub fn check_record(&self, rec: &TrialRecord) -> Result<()> {
        if rec.semg.channels() != self.semg_channels {
            return Err(Error::ChannelMismatch {
                modality: "semg".into(),
                expected: self.semg_channels,
                actual: rec.semg.channels(),
            });
        }
        match (&rec.imu, self.imu_kind) {
            (Some(imu), Some(kind)) => {
                if imu.modality() != kind {
                    return Err(Error::ModalityMismatch {
                        expected: kind.to_string(),
                        actual: imu.modality().to_string(),
                    });
                }
                if imu.channels() != self.imu_channels {
                    return Err(Error::ChannelMismatch {
                        modality: kind.to_string(),
                        expected: self.imu_channels,
                        actual: imu.channels(),
                    });
                }
            }
            (Some(imu), None) => {
                return Err(Error::ModalityMismatch {
                    expected: "no IMU".into(),
                    actual: imu.modality().to_string(),
                })
            }
            _ => {}
        }
        Ok(())
    }
}

/// Relative path used for a trial inside a dataset directory.
pub fn trial_path(key: TrialKey) -> String {
    format!("trials/s{:03}_g{:03}_t{:02}.gst", key.subject, key.gesture, key.trial)
}

/// One trial with synchronously recorded sEMG and, optionally, IMU.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub key: TrialKey,
    pub semg: MultichannelSeries<f32>,
    pub imu: Option<MultichannelSeries<f32>>,
}

impl TrialRecord {
    pub fn new(key: TrialKey, semg: MultichannelSeries<f32>, imu: Option<MultichannelSeries<f32>>) -> Result<Self> {
        if semg.modality() != Modality::Semg {
            return Err(Error::ModalityMismatch {
                expected: "semg".into(),
                actual: semg.modality().to_string(),
            });
        }
        if let Some(imu) = &imu {
            if !imu.modality().is_imu() {
                return Err(Error::ModalityMismatch {
                    expected: "an IMU modality".into(),
                    actual: imu.modality().to_string(),
                });
            }
            if imu.frames() != semg.frames() || imu.sample_rate_hz() != semg.sample_rate_hz() {
                return Err(Error::InvalidSeries(format!(
                    "IMU ({} frames at {} Hz) and sEMG ({} frames at {} Hz) are not synchronous",
                    imu.frames(),
                    imu.sample_rate_hz(),
                    semg.frames(),
                    semg.sample_rate_hz()
                )));
            }
        }
        Ok(TrialRecord { key, semg, imu })
    }

    pub fn frames(&self) -> usize {
        self.semg.frames()
    }

    fn slice(&self, start: usize, end: usize, gesture: u32) -> Result<Self> {
        Ok(TrialRecord {
            key: TrialKey { gesture, ..self.key },
            semg: self.semg.slice_frames(start, end)?,
            imu: self.imu.as_ref().map(|s| s.slice_frames(start, end)).transpose()?,
        })
    }
}

/// Segment timing within a recorded trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrimConfig {
    /// Rest before the gesture starts.
    pub rest_lead_s: f64,
    pub action_s: f64,
    /// Length of the kept rest slice.
    pub rest_keep_s: f64,
    /// Start of the kept rest slice.
    pub rest_offset_s: f64,
}

impl Default for TrimConfig {
    fn default() -> Self {
        TrimConfig {
            rest_lead_s: 1.0,
            action_s: 3.0,
            rest_keep_s: 0.5,
            rest_offset_s: 0.0,
        }
    }
}

fn seconds_to_frames(s: f64, rate: f64) -> usize {
    (s * rate + 1e-9).floor() as usize
}

/// Splits a trial into its action segment and a rest slice labelled
/// `rest_gesture`.
pub fn trim_trial(t: &TrialRecord, cfg: &TrimConfig, rest_gesture: u32) -> Result<(TrialRecord, TrialRecord)> {
    let rate = t.semg.sample_rate_hz();
    let lead = seconds_to_frames(cfg.rest_lead_s, rate);
    let action = seconds_to_frames(cfg.action_s, rate);
    let rest_start = seconds_to_frames(cfg.rest_offset_s, rate);
    let rest_len = seconds_to_frames(cfg.rest_keep_s, rate);
    if action == 0 || rest_len == 0 {
        return Err(Error::Trim(format!("action and rest segments must cover at least one frame at {rate} Hz")));
    }
    if lead + action > t.frames() {
        return Err(Error::Trim(format!(
            "{} frames, need {} for the lead rest and action",
            t.frames(),
            lead + action
        )));
    }
    if rest_start + rest_len > lead {
        return Err(Error::Trim(format!(
            "rest slice [{rest_start}, {}) overlaps the action onset at frame {lead}",
            rest_start + rest_len
        )));
    }
    let act = t.slice(lead, lead + action, t.key.gesture)?;
    let rest = t.slice(rest_start, rest_start + rest_len, rest_gesture)?;
    Ok((act, rest))
}

/// Joins rest slices end to end.
pub fn splice(parts: &[TrialRecord]) -> Result<TrialRecord> {
    let (first, rest) = parts
        .split_first()
        .ok_or_else(|| Error::InsufficientData("nothing to splice".into()))?;
    let mut out = first.clone();
    for p in rest {
        out.semg = out.semg.concat(&p.semg)?;
        out.imu = match (&out.imu, &p.imu) {
            (Some(a), Some(b)) => Some(a.concat(b)?),
            (None, None) => None,
            _ => return Err(Error::InvalidSeries("cannot splice trials with and without IMU".into())),
        };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(frames: usize, rate: f64) -> TrialRecord {
        let semg = MultichannelSeries::new((0..frames * 2).map(|v| v as f32).collect(), 2, rate, Modality::Semg).unwrap();
        let imu = MultichannelSeries::new((0..frames).map(|v| -(v as f32)).collect(), 1, rate, Modality::Euler).unwrap();
        TrialRecord::new(
            TrialKey {
                subject: 1,
                gesture: 3,
                trial: 2,
            },
            semg,
            Some(imu),
        )
        .unwrap()
    }

    #[test]
    fn trims_six_second_trial() {
        let t = record(6 * 2040, 2040.0);
        let (act, rest) = trim_trial(&t, &TrimConfig::default(), 18).unwrap();
        assert_eq!(act.frames(), 6120);
        assert_eq!(act.semg.frame(0), &[4080.0, 4081.0]);
        assert_eq!(act.imu.as_ref().unwrap().at(0, 0), -2040.0);
        assert_eq!(rest.frames(), 1020);
        assert_eq!(rest.key.gesture, 18);
        assert_eq!(act.key.gesture, 3);
        let spliced = splice(&vec![rest; 18]).unwrap();
        assert_eq!(spliced.frames() as f64 / 2040.0, 9.0);
    }

    #[test]
    fn trim_lengths_exact_at_odd_rates() {
        for rate in [200.0, 1000.0, 1111.0, 2000.0] {
            let t = record(6 * rate as usize, rate);
            let (act, rest) = trim_trial(&t, &TrimConfig::default(), 0).unwrap();
            assert_eq!(act.frames(), (3.0 * rate) as usize);
            assert_eq!(rest.frames(), (0.5 * rate).floor() as usize);
        }
    }

    #[test]
    fn short_trial_rejected() {
        let t = record(3 * 200, 200.0);
        assert!(matches!(trim_trial(&t, &TrimConfig::default(), 0), Err(Error::Trim(_))));
    }

    #[test]
    fn asynchronous_modalities_rejected() {
        let semg = MultichannelSeries::new(vec![0.0f32; 20], 2, 100.0, Modality::Semg).unwrap();
        let imu = MultichannelSeries::new(vec![0.0f32; 9], 1, 100.0, Modality::Acc).unwrap();
        let key = TrialKey {
            subject: 1,
            gesture: 0,
            trial: 1,
        };
        assert!(TrialRecord::new(key, semg, Some(imu)).is_err());
    }

    fn manifest() -> DatasetManifest {
        DatasetManifest {
            gst_version: 1,
            name: "t".into(),
            subjects: vec![1, 2],
            gestures: GestureSet {
                count: 2,
                labels: vec!["a".into(), "b".into()],
            },
            trials_per_gesture: 2,
            sample_rate_hz: 100.0,
            semg_channels: 2,
            imu_channels: 1,
            imu_kind: Some(Modality::Euler),
            files: vec![],
        }
    }

    #[test]
    fn manifest_rejects_duplicates_and_bad_ranges() {
        let mut m = manifest();
        let key = TrialKey {
            subject: 1,
            gesture: 1,
            trial: 2,
        };
        m.files.push(FileEntry { key, path: trial_path(key) });
        m.validate().unwrap();
        m.files.push(FileEntry { key, path: "other.gst".into() });
        assert!(matches!(m.validate(), Err(Error::Manifest(_))));
        m.files.pop();
        m.files.push(FileEntry {
            key: TrialKey { trial: 3, ..key },
            path: "x.gst".into(),
        });
        assert!(m.validate().is_err());
        let mut m = manifest();
        m.gst_version = 2;
        assert!(m.validate().is_err());
    }

    #[test]
    fn manifest_json_has_version_key() {
        let json = serde_json::to_value(manifest()).unwrap();
        assert_eq!(json["gst_version"], 1);
        assert_eq!(json["imu_kind"], "euler");
    }

    #[test]
    fn file_consistency() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = manifest();
        let t = record(10, 100.0);
        let key = t.key;
        m.subjects = vec![1];
        m.gestures = GestureSet {
            count: 4,
            labels: (0..4).map(|g| g.to_string()).collect(),
        };
        m.files.push(FileEntry { key, path: trial_path(key) });
        std::fs::create_dir_all(dir.path().join("trials")).unwrap();
        assert!(m.verify_files(dir.path()).is_err());
        write_trial(&dir.path().join(trial_path(key)), &t).unwrap();
        m.verify_files(dir.path()).unwrap();
        assert_eq!(m.load_trial(dir.path(), key).unwrap(), t);
        std::fs::write(dir.path().join("trials/stray.gst"), b"").unwrap();
        assert!(m.verify_files(dir.path()).is_err());
    }
}
