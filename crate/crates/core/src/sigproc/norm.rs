use serde::{Deserialize, Serialize};

use super::MultichannelSeries;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// Training min to -1, training max to +1.
    MinmaxPm1,
    /// Zero mean, unit population standard deviation.
    Zscore,
}

/// Per-channel statistics fitted on training data. Stored in `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn channels(&self) -> usize {
        self.min.len()
    }

    fn check(&self, channels: usize) -> Result<()> {
        if self.channels() != channels {
            return Err(Error::StatsMismatch {
                expected: self.channels(),
                actual: channels,
            });
        }
        Ok(())
    }

    /// Normalizes one value of channel `c`. Degenerate channels map to 0.
    #[inline]
    pub fn normalize_value(&self, c: usize, v: f64, mode: NormMode) -> f64 {
        match mode {
            NormMode::MinmaxPm1 => {
                let range = self.max[c] - self.min[c];
                if range > 0.0 {
                    2.0 * (v - self.min[c]) / range - 1.0
                } else {
                    0.0
                }
            }
            NormMode::Zscore => {
                if self.std[c] > 0.0 {
                    (v - self.mean[c]) / self.std[c]
                } else {
                    0.0
                }
            }
        }
    }

    /// Inverse of [`normalize_value`](Self::normalize_value). Degenerate
    /// channels map back to their constant training value.
    #[inline]
    pub fn denormalize_value(&self, c: usize, v: f64, mode: NormMode) -> f64 {
        match mode {
            NormMode::MinmaxPm1 => (v + 1.0) / 2.0 * (self.max[c] - self.min[c]) + self.min[c],
            NormMode::Zscore => v * self.std[c] + self.mean[c],
        }
    }

    /// Normalizes a row-major `frames x channels` buffer in place.
    pub fn normalize_in_place<T: Scalar>(&self, data: &mut [T], channels: usize, mode: NormMode) -> Result<()> {
        self.check(channels)?;
        for (i, v) in data.iter_mut().enumerate() {
            *v = T::from_f64_lossy(self.normalize_value(i % channels, v.to_f64_lossy(), mode));
        }
        Ok(())
    }

    pub fn denormalize_in_place<T: Scalar>(&self, data: &mut [T], channels: usize, mode: NormMode) -> Result<()> {
        self.check(channels)?;
        for (i, v) in data.iter_mut().enumerate() {
            *v = T::from_f64_lossy(self.denormalize_value(i % channels, v.to_f64_lossy(), mode));
        }
        Ok(())
    }
}

/// Fits min, max, mean and population standard deviation per channel over
/// every frame of every training series.
pub fn fit_stats<'a, T: Scalar + 'a>(train: impl IntoIterator<Item = &'a MultichannelSeries<T>>) -> Result<ChannelStats> {
    let mut channels = None;
    let mut min = Vec::new();
    let mut max = Vec::new();
    let mut sum = Vec::new();
    let mut count = 0usize;
    let series: Vec<&MultichannelSeries<T>> = train.into_iter().collect();
    for s in &series {
        let c = *channels.get_or_insert(s.channels());
        if c != s.channels() {
            return Err(Error::StatsMismatch {
                expected: c,
                actual: s.channels(),
            });
        }
        if min.is_empty() {
            min = vec![f64::INFINITY; c];
            max = vec![f64::NEG_INFINITY; c];
            sum = vec![0.0; c];
        }
        for f in 0..s.frames() {
            for (ch, v) in s.frame(f).iter().enumerate() {
                let v = v.to_f64_lossy();
                min[ch] = min[ch].min(v);
                max[ch] = max[ch].max(v);
                sum[ch] += v;
            }
        }
        count += s.frames();
    }
    if count == 0 {
        return Err(Error::InsufficientData("no training frames to fit statistics".into()));
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let mut sq = vec![0.0; mean.len()];
    for s in &series {
        for f in 0..s.frames() {
            for (ch, v) in s.frame(f).iter().enumerate() {
                let d = v.to_f64_lossy() - mean[ch];
                sq[ch] += d * d;
            }
        }
    }
    let std = sq.iter().map(|q| (q / count as f64).sqrt()).collect();
    Ok(ChannelStats { min, max, mean, std })
}

/// Applies fitted statistics to a series.
pub fn apply_norm<T: Scalar>(s: &MultichannelSeries<T>, stats: &ChannelStats, mode: NormMode) -> Result<MultichannelSeries<T>> {
    let mut data = s.data().to_vec();
    stats.normalize_in_place(&mut data, s.channels(), mode)?;
    Ok(s.with_data(data))
}

/// Maps normalized values back to physical units.
pub fn denormalize<T: Scalar>(s: &MultichannelSeries<T>, stats: &ChannelStats, mode: NormMode) -> Result<MultichannelSeries<T>> {
    let mut data = s.data().to_vec();
    stats.denormalize_in_place(&mut data, s.channels(), mode)?;
    Ok(s.with_data(data))
}
