use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{trial_path, DatasetLock, DatasetManifest, FileEntry, GestureSet, TrialKey, TrialRecord, GST_VERSION};
use crate::diffnet::rng_from_seed;
use crate::error::{Error, Result};
use crate::sigproc::{Modality, MultichannelSeries};

/// Correlated sEMG/IMU generator.
///
/// Each gesture has a latent envelope `e_g(t)` of `latent_dims` non-negative
/// components: zero at rest, and during the action a gesture-specific level
/// times a squared gesture-specific oscillation (skewed, so that the map from
/// envelope to IMU is not mirror symmetric). Shared maps turn the envelope into
/// sEMG amplitudes (`M e`) and IMU channels (`A e` + orientation offset), so
/// the IMU is a linear function of the sEMG envelope up to noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub name: String,
    pub subjects: usize,
    pub gestures: usize,
    pub trials: usize,
    pub sample_rate_hz: f64,
    pub semg_channels: usize,
    pub imu_channels: usize,
    pub imu_kind: Modality,
    pub trial_s: f64,
    pub onset_s: f64,
    pub action_s: f64,
    pub latent_dims: usize,
    /// Spread of the per-gesture mean levels around a common level.
    pub level_spread: f64,
    /// Relative depth of the per-gesture oscillation.
    pub modulation_depth: f64,
    /// Oscillation frequency range in Hz.
    pub modulation_hz: [f64; 2],
    /// Additive sEMG noise standard deviation.
    pub semg_noise: f64,
    /// Additive IMU noise standard deviation.
    pub imu_noise: f64,
    /// Relative per-subject, per-channel sEMG gain jitter.
    pub subject_gain_jitter: f64,
    /// Relative per-trial, per-channel sEMG gain jitter.
    pub trial_gain_jitter: f64,
    /// Relative per-trial effort variation, shared by both modalities.
    pub effort_jitter: f64,
    /// Amplitude of the constant per-channel IMU offset.
    pub orientation_offset: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            name: "synthetic".into(),
            subjects: 4,
            gestures: 4,
            trials: 4,
            sample_rate_hz: 200.0,
            semg_channels: 8,
            imu_channels: 3,
            imu_kind: Modality::Euler,
            trial_s: 6.0,
            onset_s: 1.0,
            action_s: 3.0,
            latent_dims: 1,
            level_spread: 0.5,
            modulation_depth: 1.0,
            modulation_hz: [1.0, 4.0],
            semg_noise: 0.05,
            imu_noise: 0.02,
            subject_gain_jitter: 0.2,
            trial_gain_jitter: 0.1,
            effort_jitter: 0.1,
            orientation_offset: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.subjects,
            self.gestures,
            self.trials,
            self.semg_channels,
            self.imu_channels,
            self.latent_dims,
        ];
        if counts.contains(&0) {
            return Err(Error::Config("synthetic counts must be at least 1".into()));
        }
        if !self.imu_kind.is_imu() {
            return Err(Error::Config(format!("{} is not an IMU modality", self.imu_kind)));
        }
        if !(self.sample_rate_hz > 0.0 && self.onset_s >= 0.0 && self.action_s > 0.0 && self.onset_s + self.action_s <= self.trial_s) {
            return Err(Error::Config("action must fit inside the trial".into()));
        }
        let frames = (self.trial_s * self.sample_rate_hz).round();
        if !(1.0..=u32::MAX as f64).contains(&frames) {
            return Err(Error::Config(format!("{frames} frames per trial")));
        }
        let noise = [
            self.level_spread,
            self.modulation_depth,
            self.semg_noise,
            self.imu_noise,
            self.subject_gain_jitter,
            self.trial_gain_jitter,
            self.effort_jitter,
            self.orientation_offset,
        ];
        if noise.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("noise levels must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest {
            gst_version: GST_VERSION,
            name: self.name.clone(),
            subjects: (1..=self.subjects as u32).collect(),
            gestures: GestureSet {
                count: self.gestures,
                labels: (0..self.gestures).map(|g| format!("gesture_{g}")).collect(),
            },
            trials_per_gesture: self.trials as u32,
            sample_rate_hz: self.sample_rate_hz,
            semg_channels: self.semg_channels,
            imu_channels: self.imu_channels,
            imu_kind: Some(self.imu_kind),
            files: Vec::new(),
        }
    }
}

struct GestureShape {
    level: Vec<f64>,
    freq: Vec<f64>,
    phase: Vec<f64>,
}

/// Smooth 0→1→0 activation with 0.2 s ramps.
fn activation(t: f64, onset: f64, end: f64) -> f64 {
    let ramp = 0.2;
    let up = ((t - onset) / ramp).clamp(0.0, 1.0);
    let down = ((end - t) / ramp).clamp(0.0, 1.0);
    let s = |x: f64| x * x * (3.0 - 2.0 * x);
    s(up) * s(down)
}

/// Generates all trials in memory, ordered by subject, gesture, trial.
pub fn synth_trials(cfg: &SynthConfig) -> Result<(DatasetManifest, Vec<TrialRecord>)> {
    cfg.validate()?;
    let mut rng = rng_from_seed(cfg.seed);
    let d = cfg.latent_dims;
    let semg_map: Vec<f64> = (0..cfg.semg_channels * d).map(|_| rng.random_range(0.2..1.0)).collect();
    let imu_map: Vec<f64> = (0..cfg.imu_channels * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let offsets: Vec<f64> = (0..cfg.imu_channels)
        .map(|_| cfg.orientation_offset * rng.random_range(-1.0..1.0))
        .collect();
    let shapes: Vec<GestureShape> = (0..cfg.gestures)
        .map(|g| GestureShape {
            // distinct by construction even with zero spread
            level: (0..d)
                .map(|j| 1.0 + cfg.level_spread * rng.random_range(-1.0..1.0) + 1e-3 * ((g * d + j) as f64))
                .collect(),
            freq: (0..d)
                .map(|j| {
                    let span = cfg.modulation_hz[1] - cfg.modulation_hz[0];
                    let slot = (g as f64 + j as f64 / d as f64) / cfg.gestures as f64;
                    cfg.modulation_hz[0] + span * slot
                })
                .collect(),
            phase: (0..d).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect(),
        })
        .collect();
    let frames = (cfg.trial_s * cfg.sample_rate_hz).round() as usize;
    let end = cfg.onset_s + cfg.action_s;
    // mean of the squared modulation over a cycle, for depths up to 1
    let norm = 1.0 + cfg.modulation_depth.min(1.0).powi(2) / 2.0;
    let gauss = |sd: f64| Normal::new(0.0, sd).expect("validated non-negative");
    let mut manifest = cfg.manifest();
    let mut records = Vec::new();
    for subject in 1..=cfg.subjects as u32 {
        let subject_gain: Vec<f64> = (0..cfg.semg_channels)
            .map(|_| (1.0 + gauss(cfg.subject_gain_jitter).sample(&mut rng)).max(0.2))
            .collect();
        for (g, shape) in shapes.iter().enumerate() {
            for trial in 1..=cfg.trials as u32 {
                let effort = (1.0 + gauss(cfg.effort_jitter).sample(&mut rng)).max(0.2);
                let trial_gain: Vec<f64> = (0..cfg.semg_channels)
                    .map(|c| subject_gain[c] * (1.0 + gauss(cfg.trial_gain_jitter).sample(&mut rng)).max(0.2))
                    .collect();
                let phase_shift = rng.random_range(0.0..std::f64::consts::TAU);
                let mut semg = Vec::with_capacity(frames * cfg.semg_channels);
                let mut imu = Vec::with_capacity(frames * cfg.imu_channels);
                let mut e = vec![0.0; d];
                for i in 0..frames {
                    let t = i as f64 / cfg.sample_rate_hz;
                    let a = activation(t, cfg.onset_s, end) * effort;
                    for j in 0..d {
                        let osc = (std::f64::consts::TAU * shape.freq[j] * t + shape.phase[j] + phase_shift).sin();
                        e[j] = a * shape.level[j] * (1.0 + cfg.modulation_depth * osc).max(0.0).powi(2) / norm;
                    }
                    for c in 0..cfg.semg_channels {
                        let env: f64 = (0..d).map(|j| semg_map[c * d + j] * e[j]).sum();
                        let carrier: f64 = rng.sample(StandardNormal);
                        semg.push((trial_gain[c] * env * carrier.abs() + gauss(cfg.semg_noise).sample(&mut rng)) as f32);
                    }
                    for c in 0..cfg.imu_channels {
                        let v: f64 = (0..d).map(|j| imu_map[c * d + j] * e[j]).sum();
                        imu.push((v + offsets[c] + gauss(cfg.imu_noise).sample(&mut rng)) as f32);
                    }
                }
                let key = TrialKey {
                    subject,
                    gesture: g as u32,
                    trial,
                };
                let semg = MultichannelSeries::new(semg, cfg.semg_channels, cfg.sample_rate_hz, Modality::Semg)?;
                let imu = MultichannelSeries::new(imu, cfg.imu_channels, cfg.sample_rate_hz, cfg.imu_kind)?;
                manifest.files.push(FileEntry { key, path: trial_path(key) });
                records.push(TrialRecord::new(key, semg, Some(imu))?);
            }
        }
    }
    Ok((manifest, records))
}

/// Writes a synthetic dataset (manifest and trial files) into `dir`.
pub fn synth_generate(cfg: &SynthConfig, dir: &Path) -> Result<DatasetManifest> {
    let _lock = DatasetLock::acquire(dir)?;
    let (manifest, records) = synth_trials(cfg)?;
    for (entry, rec) in manifest.files.iter().zip(&records) {
        super::write_trial(&dir.join(&entry.path), rec)?;
    }
    manifest.save(dir)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_has_64_trials() {
        let (m, recs) = synth_trials(&SynthConfig::default()).unwrap();
        assert_eq!(m.files.len(), 64);
        assert_eq!(recs.len(), 64);
        assert_eq!(recs[0].frames(), 1200);
        m.validate().unwrap();
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            subjects: 2,
            trials: 2,
            seed: 9,
            ..Default::default()
        };
        synth_generate(&cfg, a.path()).unwrap();
        synth_generate(&cfg, b.path()).unwrap();
        let m = DatasetManifest::load(a.path()).unwrap();
        m.verify_files(a.path()).unwrap();
        for p in m.files.iter().map(|f| f.path.as_str()).chain([crate::datasets::MANIFEST_FILE]) {
            assert_eq!(std::fs::read(a.path().join(p)).unwrap(), std::fs::read(b.path().join(p)).unwrap(), "{p}");
        }
        let other = synth_trials(&SynthConfig { seed: 10, ..cfg }).unwrap().1;
        assert_ne!(other[0], synth_trials(&SynthConfig { seed: 9, ..Default::default() }).unwrap().1[0]);
    }

    #[test]
    fn rest_is_offset_plus_noise() {
        let cfg = SynthConfig {
            imu_noise: 0.0,
            ..Default::default()
        };
        let (_, recs) = synth_trials(&cfg).unwrap();
        let imu = recs[0].imu.as_ref().unwrap();
        // the first frame is at rest: IMU equals the orientation offset
        for r in &recs[1..] {
            assert_eq!(r.imu.as_ref().unwrap().frame(0), imu.frame(0));
        }
    }

    #[test]
    fn gesture_imu_means_differ() {
        let (_, recs) = synth_trials(&SynthConfig::default()).unwrap();
        let mean = |g: u32| {
            let r = recs.iter().find(|r| r.key.gesture == g && r.key.subject == 1).unwrap();
            let imu = r.imu.as_ref().unwrap();
            (0..imu.channels()).map(|c| imu.channel(c).map(f64::from).sum::<f64>() / imu.frames() as f64).collect::<Vec<_>>()
        };
        let means: Vec<_> = (0..4).map(mean).collect();
        for i in 0..4 {
            for j in i + 1..4 {
                let d: f64 = means[i].iter().zip(&means[j]).map(|(a, b)| (a - b).powi(2)).sum();
                assert!(d > 0.0);
            }
        }
    }

    #[test]
    fn invalid_configs() {
        assert!(synth_trials(&SynthConfig {
            gestures: 0,
            ..Default::default()
        })
        .is_err());
        assert!(synth_trials(&SynthConfig {
            imu_noise: -1.0,
            ..Default::default()
        })
        .is_err());
    }
}
