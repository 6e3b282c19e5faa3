//! Preprocessing of raw multichannel recordings into normalized windows.
//!
//! Every operation is a pure function of its inputs. Channel count is
//! preserved everywhere; only [`decimate`] changes the frame count and
//! sample rate, and only [`segment`] changes the container type.

mod chain;
mod filters;
mod norm;
mod window;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use chain::{gan_chain, hgr_chain, imu_chain, ChainConfig, ChainOutput};
pub use filters::{butter_lowpass1, butter_lowpass1_coefficients, decimate, moving_average, moving_rms, rectify};
pub use norm::{apply_norm, denormalize, fit_stats, ChannelStats, NormMode};
pub use window::{ms_to_samples, segment, segment_frames, SignalWindow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Semg,
    Acc,
    Euler,
}

impl Modality {
    pub fn is_imu(self) -> bool {
        !matches!(self, Modality::Semg)
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Semg => "semg",
            Modality::Acc => "acc",
            Modality::Euler => "euler",
        })
    }
}

/// Uniformly sampled `frames x channels` signal, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelSeries<T> {
    data: Vec<T>,
    frames: usize,
    channels: usize,
    sample_rate_hz: f64,
    modality: Modality,
}

impl<T: Scalar> MultichannelSeries<T> {
    /// Builds a series from row-major samples, validating shape, rate and finiteness.
    pub fn new(data: Vec<T>, channels: usize, sample_rate_hz: f64, modality: Modality) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidSeries("channel count must be positive".into()));
        }
        if data.is_empty() || !data.len().is_multiple_of(channels) {
            return Err(Error::InvalidSeries(format!(
                "{} samples do not form whole frames of {channels} channels",
                data.len()
            )));
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::InvalidSeries(format!("sample rate {sample_rate_hz} Hz")));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSeries(format!(
                "non-finite sample at frame {}, channel {}",
                i / channels,
                i % channels
            )));
        }
        let frames = data.len() / channels;
        Ok(MultichannelSeries {
            data,
            frames,
            channels,
            sample_rate_hz,
            modality,
        })
    }

    /// Builds a series from a list of frames.
    pub fn from_rows(rows: &[Vec<T>], sample_rate_hz: f64, modality: Modality) -> Result<Self> {
        let channels = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != channels) {
            return Err(Error::InvalidSeries("ragged rows".into()));
        }
        Self::new(rows.concat(), channels, sample_rate_hz, modality)
    }

    /// Same shape, rate and modality with new samples. Used by filters whose
    /// outputs are finite whenever their inputs are.
    pub(crate) fn with_data(&self, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        MultichannelSeries {
            data,
            frames: self.frames,
            channels: self.channels,
            sample_rate_hz: self.sample_rate_hz,
            modality: self.modality,
        }
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn frame(&self, i: usize) -> &[T] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    #[inline]
    pub fn at(&self, frame: usize, channel: usize) -> T {
        self.data[frame * self.channels + channel]
    }

    pub fn channel(&self, c: usize) -> impl Iterator<Item = T> + '_ {
        self.data.iter().skip(c).step_by(self.channels).copied()
    }

    /// Frames `[start, end)` as a new series.
    pub fn slice_frames(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.frames {
            return Err(Error::InvalidSeries(format!(
                "frame range {start}..{end} outside 0..{}",
                self.frames
            )));
        }
        Ok(MultichannelSeries {
            data: self.data[start * self.channels..end * self.channels].to_vec(),
            frames: end - start,
            channels: self.channels,
            sample_rate_hz: self.sample_rate_hz,
            modality: self.modality,
        })
    }

    /// Appends `other` along the time axis.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if other.channels != self.channels || other.modality != self.modality {
            return Err(Error::InvalidSeries("cannot concatenate series of different layout".into()));
        }
        if other.sample_rate_hz != self.sample_rate_hz {
            return Err(Error::InvalidSeries("cannot concatenate series of different rate".into()));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(MultichannelSeries {
            frames: self.frames + other.frames,
            data,
            ..*self
        })
    }

    /// Converts to another scalar precision.
    pub fn cast<U: Scalar>(&self) -> MultichannelSeries<U> {
        MultichannelSeries {
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
            frames: self.frames,
            channels: self.channels,
            sample_rate_hz: self.sample_rate_hz,
            modality: self.modality,
        }
    }

    pub(crate) fn require(&self, modality: Modality) -> Result<()> {
        if self.modality == modality {
            Ok(())
        } else {
            Err(Error::ModalityMismatch {
                expected: modality.to_string(),
                actual: self.modality.to_string(),
            })
        }
    }
}
