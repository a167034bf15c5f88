//! RIFF/WAVE reader and writer restricted to 16-bit PCM mono at 16 kHz.

use std::fs;
use std::path::Path;

use super::{WaveBuffer, SAMPLE_RATE_HZ};
use crate::error::{Error, Result};
use crate::scalar::Real;

const FORMAT_PCM: u16 = 1;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Parse a WAV file held in memory.
pub fn decode_wav<T: Real>(bytes: &[u8]) -> Result<WaveBuffer<T>> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::MalformedContainer("missing RIFF/WAVE header".into()));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start.checked_add(size).filter(|&e| e <= bytes.len()).ok_or_else(|| {
            Error::MalformedContainer(format!("chunk {:?} overruns file", String::from_utf8_lossy(id)))
        })?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(Error::MalformedContainer("fmt chunk shorter than 16 bytes".into()));
                }
                let mut tag = u16_at(body, 0);
                if tag == FORMAT_EXTENSIBLE && body.len() >= 26 {
                    tag = u16_at(body, 24);
                }
                fmt = Some((tag, u16_at(body, 2), u32_at(body, 4), u16_at(body, 14)));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // chunks are word aligned
        pos = body_end + (size & 1);
    }
    let (tag, channels, rate, bits) = fmt.ok_or_else(|| Error::MalformedContainer("no fmt chunk".into()))?;
    let data = data.ok_or_else(|| Error::MalformedContainer("no data chunk".into()))?;
    if tag != FORMAT_PCM {
        return Err(Error::UnsupportedEncoding(format!("format tag {tag}, only PCM is supported")));
    }
    if bits != 16 {
        return Err(Error::UnsupportedEncoding(format!("{bits}-bit samples, only 16-bit is supported")));
    }
    if channels != 1 {
        return Err(Error::UnsupportedEncoding(format!("{channels} channels, only mono is supported")));
    }
    if rate != SAMPLE_RATE_HZ {
        return Err(Error::UnsupportedEncoding(format!("{rate} Hz, only {SAMPLE_RATE_HZ} Hz is supported")));
    }
    if data.len() % 2 != 0 {
        return Err(Error::MalformedContainer("odd-length 16-bit data chunk".into()));
    }
    if data.is_empty() {
        return Err(Error::EmptyAudio);
    }
    let scale = T::lit(1.0 / 32768.0);
    let samples = data.chunks_exact(2).map(|c| T::lit(i16::from_le_bytes([c[0], c[1]]) as f64) * scale).collect();
    WaveBuffer::new(samples, rate)
}

pub fn read_wav<T: Real>(path: impl AsRef<Path>) -> Result<WaveBuffer<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes)
}

/// Serialize to 16-bit PCM. Returns the encoded bytes and the number of
/// samples that had to be clipped to full scale.
pub fn encode_wav<T: Real>(wave: &WaveBuffer<T>) -> Result<(Vec<u8>, usize)> {
    if let Some(i) = wave.samples.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFiniteSample(i));
    }
    let data_len = wave.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&wave.sample_rate_hz.to_le_bytes());
    out.extend_from_slice(&(wave.sample_rate_hz * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    let mut clipped = 0;
    for s in &wave.samples {
        let mut v = s.as_f64();
        if v.abs() > 1.0 {
            clipped += 1;
            v = v.signum();
        }
        let q = (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    Ok((out, clipped))
}

/// Write a WAV file. Non-finite samples are rejected before anything is
/// written; out-of-range samples are clipped and counted.
pub fn write_wav<T: Real>(path: impl AsRef<Path>, wave: &WaveBuffer<T>) -> Result<usize> {
    let path = path.as_ref();
    let (bytes, clipped) = encode_wav(wave)?;
    if clipped > 0 {
        log::warn!("{}: clipped {clipped} samples", path.display());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(clipped)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(channels: u16, rate: u32, bits: u16, payload: &[i16]) -> Vec<u8> {
        let block = channels * bits / 8;
        let mut v = Vec::new();
        v.extend_from_slice(b"RIFF");
        v.extend_from_slice(&(36 + payload.len() as u32 * 2).to_le_bytes());
        v.extend_from_slice(b"WAVEfmt ");
        v.extend_from_slice(&16u32.to_le_bytes());
        v.extend_from_slice(&1u16.to_le_bytes());
        v.extend_from_slice(&channels.to_le_bytes());
        v.extend_from_slice(&rate.to_le_bytes());
        v.extend_from_slice(&(rate * block as u32).to_le_bytes());
        v.extend_from_slice(&block.to_le_bytes());
        v.extend_from_slice(&bits.to_le_bytes());
        v.extend_from_slice(b"data");
        v.extend_from_slice(&(payload.len() as u32 * 2).to_le_bytes());
        for s in payload {
            v.extend_from_slice(&s.to_le_bytes());
        }
        v
    }

    #[test]
    fn decodes_fixed_point_scaling() {
        let w: WaveBuffer<f64> = decode_wav(&header(1, 16000, 16, &[0, 16384, -16384, 32767])).unwrap();
        assert_eq!(w.samples, vec![0.0, 0.5, -0.5, 32767.0 / 32768.0]);
    }

    #[test]
    fn rejects_stereo_and_other_rates() {
        assert!(matches!(decode_wav::<f64>(&header(2, 16000, 16, &[0, 0])), Err(Error::UnsupportedEncoding(_))));
        assert!(matches!(decode_wav::<f64>(&header(1, 8000, 16, &[0, 0])), Err(Error::UnsupportedEncoding(_))));
    }

    #[test]
    fn rejects_empty_and_garbage() {
        assert!(matches!(decode_wav::<f64>(&header(1, 16000, 16, &[])), Err(Error::EmptyAudio)));
        assert!(matches!(decode_wav::<f64>(b"RIFX1234WAVE"), Err(Error::MalformedContainer(_))));
        let mut truncated = header(1, 16000, 16, &[1, 2, 3]);
        truncated.truncate(truncated.len() - 3);
        assert!(matches!(decode_wav::<f64>(&truncated), Err(Error::MalformedContainer(_))));
    }

    #[test]
    fn skips_unknown_chunks() {
        let mut v = header(1, 16000, 16, &[100]);
        let tail = v.split_off(36);
        v.extend_from_slice(b"LIST");
        v.extend_from_slice(&3u32.to_le_bytes());
        v.extend_from_slice(&[1, 2, 3, 0]);
        v.extend_from_slice(&tail);
        let w: WaveBuffer<f32> = decode_wav(&v).unwrap();
        assert_eq!(w.samples.len(), 1);
    }

    #[test]
    fn sine_round_trip_within_one_lsb() {
        let src: Vec<f64> =
            (0..16000).map(|i| 0.9 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 16000.0).sin()).collect();
        let wave = WaveBuffer::from_samples(src).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sine.wav");
        assert_eq!(write_wav(&p, &wave).unwrap(), 0);
        let back: WaveBuffer<f64> = read_wav(&p).unwrap();
        let err = wave.samples.iter().zip(&back.samples).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1.0 / 32768.0);
    }

    #[test]
    fn clips_and_counts_overrange() {
        let wave = WaveBuffer::from_samples(vec![1.5, -0.25]).unwrap();
        let (bytes, clipped) = encode_wav(&wave).unwrap();
        assert_eq!(clipped, 1);
        let back: WaveBuffer<f64> = decode_wav(&bytes).unwrap();
        assert_eq!(back.samples[0], 32767.0 / 32768.0);
    }

    #[test]
    fn nan_rejected_before_write() {
        let wave = WaveBuffer { samples: vec![0.0, f64::NAN], sample_rate_hz: 16000, clipped: 0 };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nan.wav");
        assert!(matches!(write_wav(&p, &wave), Err(Error::NonFiniteSample(1))));
        assert!(!p.exists());
    }
}
