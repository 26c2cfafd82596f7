use num_complex::Complex64;

use super::Waveform;
use crate::error::{Error, Result};
use crate::features::FeatureArray;

/// Floor applied to mel power before taking decibels.
pub const POWER_FLOOR: f64 = 1e-10;

/// In-place iterative radix-2 FFT. The length must be a power of two.
pub fn fft(buf: &mut [Complex64]) -> Result<()> {
    let n = buf.len();
    if !n.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "FFT length {n} is not a power of two"
        )));
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = if bits == 0 {
            0
        } else {
            i.reverse_bits() >> (usize::BITS - bits)
        };
        if j > i {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let angle = -2.0 * std::f64::consts::PI / len as f64;
        let half = len / 2;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let twiddle = Complex64::from_polar(1.0, angle * k as f64);
                let a = buf[start + k];
                let b = buf[start + k + half] * twiddle;
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
    Ok(())
}

/// Number of analysis frames without centering. Signals shorter than
/// `n_fft` are right-padded to one full frame.
pub fn frame_count(length: usize, n_fft: usize, hop: usize) -> usize {
    (length.max(n_fft) - n_fft) / hop + 1
}

/// Periodic Hann window `0.5 * (1 - cos(2 pi n / N))`.
pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()))
        .collect()
}

/// Power spectrogram `[n_fft/2 + 1, frames]` with a periodic Hann window.
pub fn stft_power(w: &Waveform, n_fft: usize, hop: usize) -> Result<FeatureArray> {
    if !n_fft.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "n_fft {n_fft} is not a power of two"
        )));
    }
    stft_power_with_window(&w.samples, n_fft, hop, &hann_periodic(n_fft))
}

/// Power spectrogram with an explicit analysis window of length `n_fft`.
pub fn stft_power_with_window(
    samples: &[f32],
    n_fft: usize,
    hop: usize,
    window: &[f64],
) -> Result<FeatureArray> {
    if !n_fft.is_power_of_two() || window.len() != n_fft || hop == 0 || samples.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "stft needs power-of-two n_fft matching the window, hop >= 1 and samples (n_fft {n_fft}, window {}, hop {hop})",
            window.len()
        )));
    }
    let frames = frame_count(samples.len(), n_fft, hop);
    let bins = n_fft / 2 + 1;
    let mut out = vec![0f32; bins * frames];
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for t in 0..frames {
        let start = t * hop;
        for (n, slot) in buf.iter_mut().enumerate() {
            let x = samples.get(start + n).copied().unwrap_or(0.0);
            *slot = Complex64::new(f64::from(x) * window[n], 0.0);
        }
        fft(&mut buf)?;
        for k in 0..bins {
            out[k * frames + t] = buf[k].norm_sqr() as f32;
        }
    }
    FeatureArray::new(vec![bins, frames], out)
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters on the mel scale with unit peak height.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub n_mels: usize,
    pub n_fft: usize,
    pub sample_rate: u32,
    /// Row-major `[n_mels, n_fft/2 + 1]`.
    pub weights: Vec<f64>,
    /// Peak (center) frequency of each filter in Hz.
    pub centers: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, n_fft: usize, sample_rate: u32, f_min: f64, f_max: f64) -> Result<Self> {
        let nyquist = f64::from(sample_rate) / 2.0;
        if n_mels < 2 || !(0.0 <= f_min && f_min < f_max && f_max <= nyquist) || n_fft < 2 {
            return Err(Error::InvalidArgument(format!(
                "mel filterbank needs n_mels >= 2 and 0 <= f_min < f_max <= {nyquist} (got n_mels {n_mels}, f_min {f_min}, f_max {f_max})"
            )));
        }
        let bins = n_fft / 2 + 1;
        let (lo, hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
        let points: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = f64::from(sample_rate) / n_fft as f64;
        let mut weights = vec![0.0; n_mels * bins];
        for m in 0..n_mels {
            let (left, center, right) = (points[m], points[m + 1], points[m + 2]);
            for k in 0..bins {
                let f = k as f64 * bin_hz;
                let rising = (f - left) / (center - left);
                let falling = (right - f) / (right - center);
                weights[m * bins + k] = rising.min(falling).max(0.0);
            }
        }
        Ok(MelFilterbank {
            n_mels,
            n_fft,
            sample_rate,
            weights,
            centers: points[1..=n_mels].to_vec(),
        })
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn row(&self, m: usize) -> &[f64] {
        let bins = self.bins();
        &self.weights[m * bins..(m + 1) * bins]
    }
}

/// `10 log10(max(W p, 1e-10))` for a power spectrogram `p`.
pub fn log_mel(power: &FeatureArray, fb: &MelFilterbank) -> Result<FeatureArray> {
    let (rows, frames) = power.shape2()?;
    if rows != fb.bins() {
        return Err(Error::Shape(format!(
            "power spectrogram has {rows} rows, filterbank expects {}",
            fb.bins()
        )));
    }
    let p = power.data();
    let mut out = vec![0f32; fb.n_mels * frames];
    for m in 0..fb.n_mels {
        let row = fb.row(m);
        let support: Vec<(usize, f64)> = row
            .iter()
            .copied()
            .enumerate()
            .filter(|&(_, w)| w > 0.0)
            .collect();
        for t in 0..frames {
            let energy: f64 = support
                .iter()
                .map(|&(k, w)| w * f64::from(p[k * frames + t]))
                .sum();
            out[m * frames + t] = (10.0 * energy.max(POWER_FLOOR).log10()) as f32;
        }
    }
    FeatureArray::new(vec![fb.n_mels, frames], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(t, &v)| {
                        let angle = -2.0 * std::f64::consts::PI * (k * t % n) as f64 / n as f64;
                        v * Complex64::from_polar(1.0, angle)
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn fft_matches_naive_dft() {
        let mut rng = Rng::new(1);
        for n in [1, 2, 8, 64, 512] {
            let x: Vec<Complex64> = (0..n)
                .map(|_| Complex64::new(rng.next_f64() * 2.0 - 1.0, 0.0))
                .collect();
            let mut y = x.clone();
            fft(&mut y).unwrap();
            for (a, b) in y.iter().zip(naive_dft(&x)) {
                assert!((a - b).norm() < 1e-9, "n={n}");
            }
        }
        assert!(fft(&mut [Complex64::new(0.0, 0.0); 6]).is_err());
    }

    #[test]
    fn frame_count_examples() {
        assert_eq!(frame_count(16000, 512, 160), 97);
        assert_eq!(frame_count(512, 512, 160), 1);
        assert_eq!(frame_count(100, 512, 160), 1);
    }

    #[test]
    fn zero_input_zero_power() {
        let w = Waveform::new(vec![0.0; 2000], 16000).unwrap();
        let p = stft_power(&w, 512, 160).unwrap();
        assert_eq!(p.dims(), &[257, frame_count(2000, 512, 160)]);
        assert!(p.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let mut x = vec![0.0f32; 64];
        x[0] = 1.0;
        let p = stft_power_with_window(&x, 64, 64, &vec![1.0; 64]).unwrap();
        assert!(p.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn parseval_with_rectangular_window() {
        let mut rng = Rng::new(2);
        let x: Vec<f32> = (0..256).map(|_| rng.next_f64() as f32 - 0.5).collect();
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v.into(), 0.0)).collect();
        fft(&mut buf).unwrap();
        let time: f64 = x.iter().map(|&v| f64::from(v).powi(2)).sum();
        let freq: f64 = buf.iter().map(|c| c.norm_sqr()).sum::<f64>() / 256.0;
        assert!((time - freq).abs() / time < 1e-5);
    }

    #[test]
    fn non_power_of_two_rejected() {
        let w = Waveform::new(vec![0.0; 1000], 16000).unwrap();
        assert!(stft_power(&w, 500, 160).is_err());
    }

    #[test]
    fn mel_scale_points() {
        assert_eq!(hz_to_mel(0.0), 0.0);
        let m = hz_to_mel(1000.0);
        assert!((999.9..=1000.1).contains(&m), "{m}");
        assert!((mel_to_hz(hz_to_mel(440.0)) - 440.0).abs() < 1e-9);
    }

    #[test]
    fn filterbank_covers_passband() {
        let fb = MelFilterbank::new(64, 512, 16000, 50.0, 8000.0).unwrap();
        let bin_hz = 16000.0 / 512.0;
        for k in 0..fb.bins() {
            let f = k as f64 * bin_hz;
            if f > 50.0 && f < 8000.0 {
                let covered = (0..64).any(|m| fb.row(m)[k] > 0.0);
                assert!(covered, "bin {k} ({f} Hz) uncovered");
            }
        }
    }

    fn argmax(row: &[f64]) -> usize {
        row.iter()
            .enumerate()
            .fold((0, f64::MIN), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
            .0
    }

    #[test]
    fn filterbank_rows_are_contiguous_triangles() {
        let fb = MelFilterbank::new(64, 512, 16000, 50.0, 8000.0).unwrap();
        for m in 0..64 {
            let row = fb.row(m);
            assert!(row.iter().all(|&w| (0.0..=1.0).contains(&w)));
            let support: Vec<usize> = (0..row.len()).filter(|&k| row[k] > 0.0).collect();
            assert!(!support.is_empty());
            assert_eq!(support.last().unwrap() - support[0] + 1, support.len());
        }
        assert!(fb.centers.windows(2).all(|w| w[0] < w[1]));
        // Narrow low filters can share a peak bin at this resolution.
        let peaks: Vec<usize> = (0..64).map(|m| argmax(fb.row(m))).collect();
        assert!(peaks.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn filterbank_peaks_strictly_increase_when_resolved() {
        let fb = MelFilterbank::new(40, 2048, 16000, 0.0, 8000.0).unwrap();
        let peaks: Vec<usize> = (0..40).map(|m| argmax(fb.row(m))).collect();
        assert!(peaks.windows(2).all(|w| w[0] < w[1]), "{peaks:?}");
    }

    #[test]
    fn filterbank_rejects_bad_ranges() {
        assert!(MelFilterbank::new(1, 512, 16000, 0.0, 8000.0).is_err());
        assert!(MelFilterbank::new(64, 512, 16000, 100.0, 50.0).is_err());
        assert!(MelFilterbank::new(64, 512, 16000, 0.0, 9000.0).is_err());
    }

    #[test]
    fn log_mel_floor_and_scaling() {
        let fb = MelFilterbank::new(8, 64, 8000, 0.0, 4000.0).unwrap();
        let zero = FeatureArray::zeros(vec![33, 3]);
        let out = log_mel(&zero, &fb).unwrap();
        assert!(out.data().iter().all(|&v| v == -100.0));

        let mut rng = Rng::new(4);
        let p = FeatureArray::new(vec![33, 3], (0..99).map(|_| rng.next_f64() as f32 + 0.1).collect()).unwrap();
        let scaled = FeatureArray::new(vec![33, 3], p.data().iter().map(|v| v * 10.0).collect()).unwrap();
        let a = log_mel(&p, &fb).unwrap();
        let b = log_mel(&scaled, &fb).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((y - x - 10.0).abs() < 1e-4);
        }
        assert!(log_mel(&FeatureArray::zeros(vec![32, 3]), &fb).is_err());
    }

    #[test]
    fn log_mel_is_monotone() {
        let fb = MelFilterbank::new(8, 64, 8000, 0.0, 4000.0).unwrap();
        let mut rng = Rng::new(6);
        let lo: Vec<f32> = (0..33 * 4).map(|_| rng.next_f64() as f32).collect();
        let hi: Vec<f32> = lo.iter().map(|&v| v + rng.next_f64() as f32).collect();
        let a = log_mel(&FeatureArray::new(vec![33, 4], lo).unwrap(), &fb).unwrap();
        let b = log_mel(&FeatureArray::new(vec![33, 4], hi).unwrap(), &fb).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| y >= x));
    }
}
