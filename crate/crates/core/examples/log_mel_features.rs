//! Computes a log-Mel spectrogram of a synthetic chirp, checks the frame
//! count law and writes the result as an `.atnr` feature file.
//!
//! ```text
//! cargo run --example log_mel_features
//! ```

use audpipe::dsp::{frame_count, hz_to_mel, log_mel, mel_to_hz, stft_power, temporal_functionals, MelFilterbank, Waveform};
use audpipe::FeatureArray;

fn main() -> audpipe::Result<()> {
    let rate = 16000;
    let samples: Vec<f32> = (0..rate)
        .map(|i| {
            let t = i as f64 / f64::from(rate);
            // 200 Hz rising to 4 kHz over one second.
            (2.0 * std::f64::consts::PI * (200.0 * t + 1900.0 * t * t)).sin() as f32 * 0.5
        })
        .collect();
    let w = Waveform::new(samples, rate)?;

    let (n_fft, hop, n_mels) = (512, 160, 64);
    let power = stft_power(&w, n_fft, hop)?;
    println!("power spectrogram {:?}", power.dims());
    assert_eq!(power.dims()[1], frame_count(w.samples.len(), n_fft, hop));

    let fb = MelFilterbank::new(n_mels, n_fft, rate, 0.0, f64::from(rate) / 2.0)?;
    let mel = log_mel(&power, &fb)?;
    println!("log-Mel {:?}, mel(1000 Hz) = {:.3}, mel_to_hz(1000) = {:.3}", mel.dims(), hz_to_mel(1000.0), mel_to_hz(1000.0));

    // The loudest band should climb as the chirp rises.
    let (bins, frames) = mel.shape2()?;
    let peak_band = |t: usize| (0..bins).max_by(|&a, &b| mel.at2(a, t).total_cmp(&mel.at2(b, t))).unwrap();
    for t in [5, frames / 2, frames - 5] {
        println!("  frame {t:>3}: loudest band {}", peak_band(t));
    }

    let functionals = temporal_functionals(&mel)?;
    println!("temporal functionals {:?}", functionals.dims());

    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("chirp.atnr");
    mel.write(&path)?;
    assert_eq!(FeatureArray::read(&path)?, mel);
    println!("round-tripped {} bytes", std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0));
    Ok(())
}
