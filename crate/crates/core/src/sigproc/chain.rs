use serde::{Deserialize, Serialize};

use super::{butter_lowpass1, decimate, moving_average, moving_rms, rectify, Modality, MultichannelSeries};
use crate::error::Result;
use crate::scalar::Scalar;

use super::window::ms_to_samples;

/// Parameters shared by the preprocessing presets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    /// RMS (sEMG) and mean (IMU) smoothing window.
    pub smoothing_ms: f64,
    /// Cut-off of the first-order low-pass applied to rectified sEMG.
    pub cutoff_hz: f64,
    pub decimation: usize,
    pub window_ms: f64,
    pub step_ms: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            smoothing_ms: 100.0,
            cutoff_hz: 1.0,
            decimation: 20,
            window_ms: 200.0,
            step_ms: 10.0,
        }
    }
}

impl ChainConfig {
    /// Sample rate after decimation.
    pub fn effective_rate(&self, raw_rate_hz: f64) -> f64 {
        raw_rate_hz / self.decimation.max(1) as f64
    }

    /// `(window, step)` in frames at the decimated rate.
    pub fn window_frames(&self, raw_rate_hz: f64) -> (usize, usize) {
        let rate = self.effective_rate(raw_rate_hz);
        (ms_to_samples(self.window_ms, rate), ms_to_samples(self.step_ms, rate))
    }
}

/// Processed series of one trial, aligned frame by frame.
#[derive(Debug, Clone)]
pub struct ChainOutput<T> {
    /// Input of the recognition streams.
    pub hgr_semg: MultichannelSeries<T>,
    /// Input of the generator.
    pub gan_semg: MultichannelSeries<T>,
    pub imu: Option<MultichannelSeries<T>>,
}

/// sEMG preset used for generator training: moving RMS, then decimation.
pub fn gan_chain<T: Scalar>(semg: &MultichannelSeries<T>, cfg: &ChainConfig) -> Result<MultichannelSeries<T>> {
    semg.require(Modality::Semg)?;
    decimate(&moving_rms(semg, cfg.smoothing_ms)?, cfg.decimation)
}

/// sEMG preset used for recognition: rectification, first-order low-pass, decimation.
pub fn hgr_chain<T: Scalar>(semg: &MultichannelSeries<T>, cfg: &ChainConfig) -> Result<MultichannelSeries<T>> {
    decimate(&butter_lowpass1(&rectify(semg)?, cfg.cutoff_hz)?, cfg.decimation)
}

/// IMU preset: moving average, then decimation.
pub fn imu_chain<T: Scalar>(imu: &MultichannelSeries<T>, cfg: &ChainConfig) -> Result<MultichannelSeries<T>> {
    decimate(&moving_average(imu, cfg.smoothing_ms)?, cfg.decimation)
}

impl<T: Scalar> ChainOutput<T> {
    pub fn run(semg: &MultichannelSeries<T>, imu: Option<&MultichannelSeries<T>>, cfg: &ChainConfig) -> Result<Self> {
        Ok(ChainOutput {
            hgr_semg: hgr_chain(semg, cfg)?,
            gan_semg: gan_chain(semg, cfg)?,
            imu: imu.map(|m| imu_chain(m, cfg)).transpose()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_keep_channels_and_align_frames() {
        let semg = MultichannelSeries::new(
            (0..2040 * 8).map(|i| ((i * 31) % 17) as f32 - 8.0).collect(),
            8,
            2040.0,
            Modality::Semg,
        )
        .unwrap();
        let imu = MultichannelSeries::new(vec![0.3f32; 2040 * 3], 3, 2040.0, Modality::Euler).unwrap();
        let cfg = ChainConfig::default();
        let out = ChainOutput::run(&semg, Some(&imu), &cfg).unwrap();
        assert_eq!(out.hgr_semg.frames(), 102);
        assert_eq!(out.gan_semg.frames(), 102);
        assert_eq!(out.imu.as_ref().unwrap().frames(), 102);
        assert_eq!(out.hgr_semg.channels(), 8);
        assert_eq!(out.imu.unwrap().channels(), 3);
        assert!(out.gan_semg.data().iter().all(|v| *v >= 0.0));
        assert_eq!(cfg.window_frames(2040.0), (20, 1));
        assert_eq!(cfg.window_frames(2000.0), (20, 1));
    }
}
