use super::{Modality, MultichannelSeries};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `floor(ms * rate / 1000)`, tolerant of representation error just below an integer.
pub fn ms_to_samples(ms: f64, sample_rate_hz: f64) -> usize {
    let exact = ms * sample_rate_hz / 1000.0;
    (exact + 1e-9).floor().max(0.0) as usize
}

/// Fixed-length `frames x channels` segment cut from a series.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalWindow<T> {
    pub data: Vec<T>,
    pub frames: usize,
    pub channels: usize,
    pub origin_frame: usize,
    pub modality: Modality,
}

impl<T: Scalar> SignalWindow<T> {
    pub fn new(data: Vec<T>, frames: usize, channels: usize, origin_frame: usize, modality: Modality) -> Result<Self> {
        if frames == 0 || channels == 0 || data.len() != frames * channels {
            return Err(Error::Shape(format!(
                "window of {} samples is not {frames} x {channels}",
                data.len()
            )));
        }
        Ok(SignalWindow {
            data,
            frames,
            channels,
            origin_frame,
            modality,
        })
    }

    #[inline]
    pub fn at(&self, frame: usize, channel: usize) -> T {
        self.data[frame * self.channels + channel]
    }
}

/// Sliding windows of `k` frames every `step` frames, starting at frame 0.
pub fn segment_frames<T: Scalar>(s: &MultichannelSeries<T>, k: usize, step: usize) -> Result<Vec<SignalWindow<T>>> {
    if k == 0 || step == 0 {
        return Err(Error::InvalidWindow(format!("window {k} frames, step {step} frames")));
    }
    if s.frames() < k {
        return Err(Error::EmptySegmentation {
            frames: s.frames(),
            window: k,
        });
    }
    let c = s.channels();
    let count = (s.frames() - k) / step + 1;
    Ok((0..count)
        .map(|w| {
            let origin = w * step;
            SignalWindow {
                data: s.data()[origin * c..(origin + k) * c].to_vec(),
                frames: k,
                channels: c,
                origin_frame: origin,
                modality: s.modality(),
            }
        })
        .collect())
}

/// Segments with window and step given in milliseconds, converted with
/// [`ms_to_samples`] at the series' sample rate.
pub fn segment<T: Scalar>(s: &MultichannelSeries<T>, window_ms: f64, step_ms: f64) -> Result<Vec<SignalWindow<T>>> {
    let k = ms_to_samples(window_ms, s.sample_rate_hz());
    let step = ms_to_samples(step_ms, s.sample_rate_hz());
    segment_frames(s, k, step)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(frames: usize, channels: usize, rate: f64) -> MultichannelSeries<f32> {
        let data = (0..frames * channels).map(|v| v as f32).collect();
        MultichannelSeries::new(data, channels, rate, Modality::Semg).unwrap()
    }

    #[test]
    fn window_count_formula() {
        let s = ramp(600, 1, 100.0);
        assert_eq!(segment_frames(&s, 20, 1).unwrap().len(), 581);
        for (frames, k, st) in [(600, 20, 3), (21, 20, 2), (100, 7, 5)] {
            let s = ramp(frames, 2, 100.0);
            assert_eq!(segment_frames(&s, k, st).unwrap().len(), (frames - k) / st + 1);
        }
    }

    #[test]
    fn full_geometry_in_samples() {
        // 2000 Hz decimated by 20
        assert_eq!(ms_to_samples(200.0, 2000.0 / 20.0), 20);
        assert_eq!(ms_to_samples(10.0, 2000.0 / 20.0), 1);
        // 2040 Hz decimated by 20
        assert_eq!(ms_to_samples(200.0, 102.0), 20);
        assert_eq!(ms_to_samples(10.0, 102.0), 1);
        let s = ramp(300, 3, 100.0);
        let w = segment(&s, 200.0, 10.0).unwrap();
        assert_eq!(w[0].frames, 20);
        assert_eq!(w[1].origin_frame, 1);
    }

    #[test]
    fn exact_fit_gives_one_window() {
        let s = ramp(20, 2, 100.0);
        let w = segment_frames(&s, 20, 1).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].origin_frame, 0);
        assert!(matches!(segment_frames(&ramp(19, 2, 100.0), 20, 1), Err(Error::EmptySegmentation { .. })));
    }

    #[test]
    fn windows_hold_their_source_frames() {
        let s = ramp(50, 3, 100.0);
        for w in segment_frames(&s, 8, 3).unwrap() {
            for f in 0..8 {
                for c in 0..3 {
                    assert_eq!(w.at(f, c), s.at(w.origin_frame + f, c));
                }
            }
        }
    }
}
