//! Audio decoding, resampling and feature extraction.
//!
//! Spectral defaults at 16 kHz: `n_fft = 512`, `hop = 160`, `n_mels = 64`,
//! `f_min = 50`, `f_max = 8000`. Frames are not centered: frame `t` covers
//! samples `[t * hop, t * hop + n_fft)`, zero-padded past the end.

mod spectral;
mod wav;

use crate::error::{Error, Result};
use crate::features::FeatureArray;

pub use spectral::{
    fft, frame_count, hann_periodic, hz_to_mel, log_mel, mel_to_hz, stft_power,
    stft_power_with_window, MelFilterbank, POWER_FLOOR,
};
pub use wav::{decode_wav, encode_wav_pcm16, read_wav, write_wav};

/// Mono audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("waveform has no samples".into()));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite sample at {i}")));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

const RESAMPLE_TAPS: usize = 63;

/// Hann-windowed sinc low-pass with unit DC gain. `cutoff` is a fraction of
/// the sample rate.
fn lowpass_taps(cutoff: f64) -> Vec<f64> {
    let mid = (RESAMPLE_TAPS / 2) as f64;
    let taps: Vec<f64> = (0..RESAMPLE_TAPS)
        .map(|n| {
            let t = n as f64 - mid;
            let sinc = if t == 0.0 {
                2.0 * cutoff
            } else {
                (2.0 * std::f64::consts::PI * cutoff * t).sin() / (std::f64::consts::PI * t)
            };
            let window = 0.5
                * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / (RESAMPLE_TAPS - 1) as f64).cos());
            sinc * window
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|h| h / sum).collect()
}

/// Resamples by linear interpolation at positions `i * src / target`.
/// Downsampling first applies a 63-tap low-pass at `0.45 * target`.
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(Error::InvalidArgument("target rate must be positive".into()));
    }
    if target_rate == w.sample_rate {
        return Ok(w.clone());
    }
    let src = f64::from(w.sample_rate);
    let dst = f64::from(target_rate);
    let input: Vec<f64> = if target_rate < w.sample_rate {
        let taps = lowpass_taps(0.45 * dst / src);
        let half = (RESAMPLE_TAPS / 2) as isize;
        let n = w.samples.len() as isize;
        (0..n)
            .map(|i| {
                taps.iter()
                    .enumerate()
                    .filter_map(|(k, &h)| {
                        let j = i + k as isize - half;
                        (0..n).contains(&j).then(|| h * f64::from(w.samples[j as usize]))
                    })
                    .sum()
            })
            .collect()
    } else {
        w.samples.iter().map(|&s| f64::from(s)).collect()
    };
    let out_len = ((w.samples.len() as u64 * u64::from(target_rate)) / u64::from(w.sample_rate))
        .max(1) as usize;
    let step = src / dst;
    let last = input.len() - 1;
    let samples = (0..out_len)
        .map(|i| {
            let pos = i as f64 * step;
            let idx = (pos.floor() as usize).min(last);
            let frac = pos - idx as f64;
            let next = input[(idx + 1).min(last)];
            (input[idx] * (1.0 - frac) + next * frac) as f32
        })
        .collect();
    Waveform::new(samples, target_rate)
}

/// Per-row mean followed by per-row population standard deviation:
/// `[bins, frames] -> [2 * bins]`.
pub fn temporal_functionals(x: &FeatureArray) -> Result<FeatureArray> {
    let (bins, frames) = x.shape2()?;
    let mut means = Vec::with_capacity(bins);
    let mut stds = Vec::with_capacity(bins);
    for row in x.data().chunks(frames) {
        let mean = row.iter().map(|&v| f64::from(v)).sum::<f64>() / frames as f64;
        let var = row
            .iter()
            .map(|&v| (f64::from(v) - mean).powi(2))
            .sum::<f64>()
            / frames as f64;
        means.push(mean as f32);
        stds.push(var.sqrt() as f32);
    }
    means.extend(stds);
    FeatureArray::new(vec![2 * bins], means)
}

/// Min-max scales to `[0, 1]` (constant input maps to 0.5), resizes
/// bilinearly with corner alignment and replicates into 3 channels.
pub fn spec_to_image(x: &FeatureArray, height: usize, width: usize) -> Result<FeatureArray> {
    let (rows, cols) = x.shape2()?;
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument("image size must be positive".into()));
    }
    let (lo, hi) = x
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = f64::from(hi) - f64::from(lo);
    let scaled: Vec<f64> = x
        .data()
        .iter()
        .map(|&v| {
            if range > 0.0 {
                (f64::from(v) - f64::from(lo)) / range
            } else {
                0.5
            }
        })
        .collect();
    let coord = |i: usize, out: usize, inp: usize| -> (usize, usize, f64) {
        if out == 1 || inp == 1 {
            return (0, 0, 0.0);
        }
        let pos = i as f64 * (inp - 1) as f64 / (out - 1) as f64;
        let i0 = (pos.floor() as usize).min(inp - 1);
        let i1 = (i0 + 1).min(inp - 1);
        (i0, i1, pos - i0 as f64)
    };
    let mut plane = Vec::with_capacity(height * width);
    for r in 0..height {
        let (r0, r1, fr) = coord(r, height, rows);
        for c in 0..width {
            let (c0, c1, fc) = coord(c, width, cols);
            let at = |rr: usize, cc: usize| scaled[rr * cols + cc];
            let top = at(r0, c0) * (1.0 - fc) + at(r0, c1) * fc;
            let bottom = at(r1, c0) * (1.0 - fc) + at(r1, c1) * fc;
            plane.push((top * (1.0 - fr) + bottom * fr).clamp(0.0, 1.0) as f32);
        }
    }
    let mut data = Vec::with_capacity(3 * plane.len());
    for _ in 0..3 {
        data.extend_from_slice(&plane);
    }
    FeatureArray::new(vec![3, height, width], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn sine(freq: f64, rate: u32, seconds: f64) -> Waveform {
        let n = (f64::from(rate) * seconds) as usize;
        let samples = (0..n)
            .map(|i| (0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / f64::from(rate)).sin()) as f32)
            .collect();
        Waveform::new(samples, rate).unwrap()
    }

    #[test]
    fn resample_identity_is_bit_exact() {
        let w = sine(440.0, 16000, 0.1);
        assert_eq!(resample(&w, 16000).unwrap(), w);
    }

    #[test]
    fn resample_length_formula() {
        let w = sine(440.0, 48000, 1.0);
        let r = resample(&w, 16000).unwrap();
        assert_eq!(r.samples.len(), 16000);
        assert_eq!(r.sample_rate, 16000);
        let up = resample(&sine(440.0, 8000, 0.5), 16000).unwrap();
        assert_eq!(up.samples.len(), 8000);
    }

    #[test]
    fn resampled_tone_keeps_its_frequency() {
        let r = resample(&sine(2000.0, 48000, 1.0), 16000).unwrap();
        let p = stft_power(&r, 512, 160).unwrap();
        let (bins, frames) = p.shape2().unwrap();
        let energy: Vec<f64> = (0..bins)
            .map(|k| (0..frames).map(|t| f64::from(p.at2(k, t))).sum())
            .collect();
        let peak = energy
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let expected = 2000.0 / (16000.0 / 512.0);
        assert!((peak as f64 - expected).abs() <= 1.0, "peak bin {peak}");
    }

    #[test]
    fn downsampling_attenuates_above_cutoff() {
        // 12 kHz aliases to 4 kHz at 16 kHz without filtering.
        let r = resample(&sine(12000.0, 48000, 0.5), 16000).unwrap();
        let rms = (r.samples.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>() / r.samples.len() as f64).sqrt();
        assert!(rms < 0.05, "rms {rms}");
    }

    #[test]
    fn functionals_basics() {
        let x = FeatureArray::new(vec![2, 2], vec![0.0, 2.0, 5.0, 5.0]).unwrap();
        let f = temporal_functionals(&x).unwrap();
        assert_eq!(f.data(), &[1.0, 5.0, 1.0, 0.0]);
    }

    #[test]
    fn functionals_match_two_pass_oracle() {
        let mut rng = Rng::new(8);
        let (bins, frames) = (5, 37);
        let data: Vec<f32> = (0..bins * frames).map(|_| (rng.next_gaussian() * 3.0 + 1.0) as f32).collect();
        let x = FeatureArray::new(vec![bins, frames], data.clone()).unwrap();
        let f = temporal_functionals(&x).unwrap();
        for b in 0..bins {
            let row: Vec<f64> = data[b * frames..(b + 1) * frames].iter().map(|&v| v.into()).collect();
            let mean = row.iter().sum::<f64>() / frames as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / frames as f64;
            assert!((f64::from(f.data()[b]) - mean).abs() < 1e-5);
            assert!((f64::from(f.data()[bins + b]) - var.sqrt()).abs() < 1e-5);
        }
    }

    #[test]
    fn image_of_constant_is_half() {
        let x = FeatureArray::new(vec![3, 4], vec![7.0; 12]).unwrap();
        let img = spec_to_image(&x, 3, 4).unwrap();
        assert_eq!(img.dims(), &[3, 3, 4]);
        assert!(img.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn bilinear_upsample_oracle() {
        let x = FeatureArray::new(vec![2, 2], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let img = spec_to_image(&x, 4, 4).unwrap();
        // Corner-aligned sampling positions are 0, 1/3, 2/3, 1.
        let expected = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for c in 0..3 {
            for r in 0..4 {
                for col in 0..4 {
                    let v = img.data()[c * 16 + r * 4 + col];
                    assert!((v - expected[col] as f32).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn image_range_is_unit_interval() {
        let mut rng = Rng::new(12);
        let x = FeatureArray::new(vec![7, 9], (0..63).map(|_| (rng.next_gaussian() * 50.0) as f32).collect()).unwrap();
        let img = spec_to_image(&x, 5, 11).unwrap();
        assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn waveform_validation() {
        assert!(Waveform::new(vec![], 16000).is_err());
        assert!(Waveform::new(vec![f32::NAN], 16000).is_err());
        assert!(Waveform::new(vec![0.0], 0).is_err());
    }
}
