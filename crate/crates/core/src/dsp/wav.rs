//! RIFF/WAVE reading (PCM16 and IEEE float32) and PCM16 writing.

use std::path::Path;

use super::Waveform;
use crate::error::{Error, IoContext, Result};

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Decodes a mono or stereo WAV file. Stereo frames are averaged.
pub fn decode_wav(bytes: &[u8]) -> Result<Waveform> {
    let bad = |m: &str| Error::MalformedWav(m.to_string());
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(bad("missing RIFF/WAVE header"));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("chunk extends past end of file"))?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(bad("fmt chunk too short"));
                }
                let mut tag = u16_at(body, 0);
                if tag == FORMAT_EXTENSIBLE {
                    if body.len() < 26 {
                        return Err(bad("extensible fmt chunk too short"));
                    }
                    tag = u16_at(body, 24);
                }
                fmt = Some((tag, u16_at(body, 2), u32_at(body, 4), u16_at(body, 14)));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // Chunks are padded to even length.
        pos = body_end + (size & 1);
    }
    let (tag, channels, sample_rate, bits) = fmt.ok_or_else(|| bad("missing fmt chunk"))?;
    let data = data.ok_or_else(|| bad("missing data chunk"))?;
    match (tag, bits) {
        (FORMAT_PCM, 16) | (FORMAT_FLOAT, 32) => {}
        (FORMAT_PCM, _) | (FORMAT_FLOAT, _) => {
            return Err(bad(&format!("unsupported bit depth {bits} for format {tag}")))
        }
        _ => return Err(Error::UnsupportedCodec(tag)),
    }
    if !(1..=2).contains(&channels) {
        return Err(bad(&format!("unsupported channel count {channels}")));
    }
    if sample_rate == 0 {
        return Err(bad("sample rate is zero"));
    }
    let width = usize::from(bits / 8);
    let frame = width * usize::from(channels);
    let frames = data.len() / frame;
    if frames == 0 {
        return Err(bad("no audio frames"));
    }
    let sample = |at: usize| -> f32 {
        if tag == FORMAT_PCM {
            f32::from(i16::from_le_bytes([data[at], data[at + 1]])) / 32768.0
        } else {
            f32::from_le_bytes([data[at], data[at + 1], data[at + 2], data[at + 3]])
        }
    };
    let samples = (0..frames)
        .map(|i| {
            let base = i * frame;
            if channels == 1 {
                sample(base)
            } else {
                (sample(base) + sample(base + width)) / 2.0
            }
        })
        .collect();
    Waveform::new(samples, sample_rate)
}

/// Encodes mono samples as 16-bit PCM. Values are scaled by 32768, rounded
/// and clamped to the i16 range.
pub fn encode_wav_pcm16(samples: &[f32], sample_rate: u32) -> Vec<u8> {
    let data_len = samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in samples {
        let q = (f64::from(s) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let bytes = std::fs::read(path).at(path)?;
    decode_wav(&bytes)
}

pub fn write_wav(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).at(parent)?;
    }
    std::fs::write(path, encode_wav_pcm16(samples, sample_rate)).at(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(tag: u16, channels: u16, bits: u16, data: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&((36 + data.len()) as u32).to_le_bytes());
        out.extend_from_slice(b"WAVEfmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&tag.to_le_bytes());
        out.extend_from_slice(&channels.to_le_bytes());
        out.extend_from_slice(&8000u32.to_le_bytes());
        let block = channels * bits / 8;
        out.extend_from_slice(&(8000 * u32::from(block)).to_le_bytes());
        out.extend_from_slice(&block.to_le_bytes());
        out.extend_from_slice(&bits.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&(data.len() as u32).to_le_bytes());
        out.extend_from_slice(data);
        out
    }

    #[test]
    fn pcm16_scaling() {
        let bytes = header(1, 1, 16, &16384i16.to_le_bytes());
        let w = decode_wav(&bytes).unwrap();
        assert_eq!(w.samples, vec![0.5]);
        assert_eq!(w.sample_rate, 8000);
    }

    #[test]
    fn stereo_float_mixdown() {
        let mut data = Vec::new();
        data.extend_from_slice(&0.2f32.to_le_bytes());
        data.extend_from_slice(&0.4f32.to_le_bytes());
        let w = decode_wav(&header(3, 2, 32, &data)).unwrap();
        assert!((w.samples[0] - 0.3).abs() < 1e-7);
    }

    #[test]
    fn mulaw_is_unsupported() {
        let err = decode_wav(&header(7, 1, 8, &[0, 1, 2])).unwrap_err();
        assert_eq!(err.to_string(), "unsupported codec: 7");
    }

    #[test]
    fn malformed_headers() {
        assert!(matches!(decode_wav(b"RIFF"), Err(Error::MalformedWav(_))));
        let mut bytes = header(1, 1, 16, &[0, 0]);
        bytes.truncate(30);
        assert!(matches!(decode_wav(&bytes), Err(Error::MalformedWav(_))));
        assert!(matches!(
            decode_wav(&header(1, 3, 16, &[0; 6])),
            Err(Error::MalformedWav(_))
        ));
    }

    #[test]
    fn skips_unknown_and_odd_chunks() {
        let mut bytes = header(1, 1, 16, &1000i16.to_le_bytes());
        // Splice a 3-byte LIST chunk (plus pad byte) before fmt.
        let extra = [b'L', b'I', b'S', b'T', 3, 0, 0, 0, 1, 2, 3, 0];
        bytes.splice(12..12, extra);
        let w = decode_wav(&bytes).unwrap();
        assert_eq!(w.samples, vec![1000.0 / 32768.0]);
    }

    #[test]
    fn encode_decode_round_trip() {
        let samples: Vec<f32> = (-4..4).map(|i| i as f32 / 4.0).collect();
        let w = decode_wav(&encode_wav_pcm16(&samples, 16000)).unwrap();
        assert_eq!(w.sample_rate, 16000);
        for (a, b) in samples.iter().zip(&w.samples) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }
}
