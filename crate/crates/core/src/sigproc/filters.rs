use super::{Modality, MultichannelSeries};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::window::ms_to_samples;

/// Elementwise absolute value of a sEMG series.
pub fn rectify<T: Scalar>(s: &MultichannelSeries<T>) -> Result<MultichannelSeries<T>> {
    s.require(Modality::Semg)?;
    Ok(s.with_data(s.data().iter().map(|v| v.abs()).collect()))
}

fn smoothing_window<T: Scalar>(s: &MultichannelSeries<T>, window_ms: f64) -> Result<usize> {
    if !(window_ms.is_finite() && window_ms > 0.0) {
        return Err(Error::InvalidWindow(format!("window of {window_ms} ms")));
    }
    let w = ms_to_samples(window_ms, s.sample_rate_hz());
    if w == 0 {
        return Err(Error::InvalidWindow(format!(
            "{window_ms} ms at {} Hz is shorter than one sample",
            s.sample_rate_hz()
        )));
    }
    Ok(w)
}

/// Causal trailing-window mean of `f(x)` per channel. The first `w - 1`
/// outputs average over the shorter available prefix.
fn trailing_mean<T: Scalar>(s: &MultichannelSeries<T>, w: usize, f: impl Fn(f64) -> f64) -> Vec<f64> {
    let (frames, channels) = (s.frames(), s.channels());
    let mut out = vec![0.0; frames * channels];
    let mut acc = vec![0.0f64; channels];
    for i in 0..frames {
        for (c, a) in acc.iter_mut().enumerate() {
            *a += f(s.at(i, c).to_f64_lossy());
            if i >= w {
                *a -= f(s.at(i - w, c).to_f64_lossy());
            }
            let n = (i + 1).min(w) as f64;
            out[i * channels + c] = *a / n;
        }
    }
    out
}

/// Moving RMS over a causal window of `floor(window_ms * rate / 1000)` samples.
pub fn moving_rms<T: Scalar>(s: &MultichannelSeries<T>, window_ms: f64) -> Result<MultichannelSeries<T>> {
    let w = smoothing_window(s, window_ms)?;
    if w == 1 {
        return Ok(s.with_data(s.data().iter().map(|v| v.abs()).collect()));
    }
    let means = trailing_mean(s, w, |x| x * x);
    // running subtraction can leave a tiny negative residue
    Ok(s.with_data(
        means
            .into_iter()
            .map(|m| T::from_f64_lossy(m.max(0.0).sqrt()))
            .collect(),
    ))
}

/// Moving arithmetic mean over a causal window, same conventions as [`moving_rms`].
pub fn moving_average<T: Scalar>(s: &MultichannelSeries<T>, window_ms: f64) -> Result<MultichannelSeries<T>> {
    let w = smoothing_window(s, window_ms)?;
    if w == 1 {
        return Ok(s.clone());
    }
    let means = trailing_mean(s, w, |x| x);
    Ok(s.with_data(means.into_iter().map(T::from_f64_lossy).collect()))
}

/// `(b0, b1, a1)` of the first-order Butterworth low-pass obtained by the
/// bilinear transform of `wc / (s + wc)`, with `K = tan(pi * fc / fs)`.
pub fn butter_lowpass1_coefficients(cutoff_hz: f64, sample_rate_hz: f64) -> Result<(f64, f64, f64)> {
    if !(cutoff_hz.is_finite() && cutoff_hz > 0.0 && cutoff_hz < sample_rate_hz / 2.0) {
        return Err(Error::InvalidCutoff {
            cutoff_hz,
            sample_rate_hz,
        });
    }
    let k = (std::f64::consts::PI * cutoff_hz / sample_rate_hz).tan();
    let b = k / (k + 1.0);
    Ok((b, b, (k - 1.0) / (k + 1.0)))
}

/// Single-pass causal first-order Butterworth low-pass, zero initial state.
pub fn butter_lowpass1<T: Scalar>(s: &MultichannelSeries<T>, cutoff_hz: f64) -> Result<MultichannelSeries<T>> {
    let (b0, b1, a1) = butter_lowpass1_coefficients(cutoff_hz, s.sample_rate_hz())?;
    let channels = s.channels();
    let mut out = vec![T::zero(); s.data().len()];
    let mut prev_x = vec![0.0f64; channels];
    let mut prev_y = vec![0.0f64; channels];
    for i in 0..s.frames() {
        for c in 0..channels {
            let x = s.at(i, c).to_f64_lossy();
            let y = b0 * x + b1 * prev_x[c] - a1 * prev_y[c];
            prev_x[c] = x;
            prev_y[c] = y;
            out[i * channels + c] = T::from_f64_lossy(y);
        }
    }
    Ok(s.with_data(out))
}

/// Keeps frames `0, factor, 2*factor, ...` and divides the sample rate by `factor`.
pub fn decimate<T: Scalar>(s: &MultichannelSeries<T>, factor: usize) -> Result<MultichannelSeries<T>> {
    if factor == 0 {
        return Err(Error::InvalidFactor(factor));
    }
    if factor == 1 {
        return Ok(s.clone());
    }
    let data: Vec<T> = (0..s.frames())
        .step_by(factor)
        .flat_map(|i| s.frame(i).iter().copied())
        .collect();
    MultichannelSeries::new(data, s.channels(), s.sample_rate_hz() / factor as f64, s.modality())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn series(rows: &[&[f64]], rate: f64, m: Modality) -> MultichannelSeries<f64> {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        MultichannelSeries::from_rows(&rows, rate, m).unwrap()
    }

    fn single(values: &[f64], rate: f64) -> MultichannelSeries<f64> {
        MultichannelSeries::new(values.to_vec(), 1, rate, Modality::Semg).unwrap()
    }

    #[test]
    fn rectify_examples() {
        let s = series(&[&[-1.0, 2.0], &[3.0, -4.0]], 100.0, Modality::Semg);
        assert_eq!(rectify(&s).unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);
        let z = single(&[0.0; 5], 100.0);
        assert_eq!(rectify(&z).unwrap(), z);
        let c = single(&[2.5; 5], 100.0);
        assert_eq!(rectify(&c).unwrap(), c);
    }

    #[test]
    fn rectify_rejects_imu() {
        let s = series(&[&[1.0]], 100.0, Modality::Acc);
        assert!(matches!(rectify(&s), Err(Error::ModalityMismatch { .. })));
    }

    #[test]
    fn moving_rms_examples() {
        let c = single(&[5.0; 50], 1000.0);
        for ms in [1.0, 7.0, 30.0, 100.0] {
            for v in moving_rms(&c, ms).unwrap().data() {
                assert_relative_eq!(*v, 5.0, epsilon = 1e-12);
            }
        }
        // W = 2 at 1 kHz
        let s = single(&[3.0, -4.0], 1000.0);
        let out = moving_rms(&s, 2.0).unwrap();
        assert_relative_eq!(out.data()[0], 3.0, epsilon = 1e-12);
        assert_relative_eq!(out.data()[1], 3.5355339059327378, epsilon = 1e-12);
        let w1 = moving_rms(&s, 1.0).unwrap();
        assert_eq!(w1.data(), &[3.0, 4.0]);
    }

    #[test]
    fn moving_average_examples() {
        let c = single(&[-1.5; 20], 1000.0);
        for v in moving_average(&c, 5.0).unwrap().data() {
            assert_relative_eq!(*v, -1.5, epsilon = 1e-12);
        }
        let s = single(&[0.0, 10.0], 1000.0);
        assert_eq!(moving_average(&s, 2.0).unwrap().data()[1], 5.0);
        assert_eq!(moving_average(&s, 1.0).unwrap(), s);
    }

    #[test]
    fn window_shorter_than_a_sample_is_rejected() {
        let s = single(&[1.0; 4], 100.0);
        assert!(matches!(moving_rms(&s, 5.0), Err(Error::InvalidWindow(_))));
        assert!(matches!(moving_average(&s, 0.0), Err(Error::InvalidWindow(_))));
    }

    #[test]
    fn moving_rms_matches_direct_definition() {
        let values: Vec<f64> = (0..40).map(|i| ((i * 7919) % 23) as f64 - 11.0).collect();
        let s = single(&values, 1000.0);
        let w = 6;
        let out = moving_rms(&s, w as f64).unwrap();
        for i in 0..values.len() {
            let lo = (i + 1).saturating_sub(w);
            let seg = &values[lo..=i];
            let want = (seg.iter().map(|v| v * v).sum::<f64>() / seg.len() as f64).sqrt();
            assert_relative_eq!(out.data()[i], want, epsilon = 1e-9);
        }
    }

    #[test]
    fn butterworth_unity_dc_gain() {
        let s = single(&[1.0; 4000], 200.0);
        let out = butter_lowpass1(&s, 1.0).unwrap();
        assert!((out.data()[3999] - 1.0).abs() < 1e-6);
        let z = single(&[0.0; 100], 200.0);
        assert!(butter_lowpass1(&z, 1.0).unwrap().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn butterworth_impulse_first_sample() {
        let mut x = vec![0.0; 10];
        x[0] = 1.0;
        let out = butter_lowpass1(&single(&x, 200.0), 1.0).unwrap();
        let k = (std::f64::consts::PI / 200.0).tan();
        assert_relative_eq!(out.data()[0], k / (k + 1.0), epsilon = 1e-15);
        // numerically: K = 0.015709255323664916
        assert_relative_eq!(out.data()[0], 0.015466291, epsilon = 1e-8);
    }

    #[test]
    fn butterworth_rejects_cutoff_at_or_above_nyquist() {
        let s = single(&[1.0; 4], 200.0);
        assert!(matches!(butter_lowpass1(&s, 100.0), Err(Error::InvalidCutoff { .. })));
        assert!(matches!(butter_lowpass1(&s, 0.0), Err(Error::InvalidCutoff { .. })));
    }

    #[test]
    fn decimate_examples() {
        let s = MultichannelSeries::new(vec![0.5f64; 2040 * 2], 2, 2040.0, Modality::Semg).unwrap();
        let d = decimate(&s, 20).unwrap();
        assert_eq!(d.frames(), 102);
        assert_eq!(d.sample_rate_hz(), 102.0);
        assert_eq!(decimate(&s, 1).unwrap(), s);
        let r = single(&(0..10).map(f64::from).collect::<Vec<_>>(), 30.0);
        assert_eq!(decimate(&r, 3).unwrap().data(), &[0.0, 3.0, 6.0, 9.0]);
        assert!(matches!(decimate(&r, 0), Err(Error::InvalidFactor(0))));
    }
}
