//! RIFF/WAVE reader and writer for 16-bit PCM mono.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::dsp::{DspError, Signal};

#[derive(Debug, Error)]
pub enum WavError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("RIFF header: {0}")]
    Riff(String),
    #[error("'{chunk}' chunk: {message}")]
    Chunk { chunk: String, message: String },
    #[error("missing '{0}' chunk")]
    MissingChunk(&'static str),
    #[error("'fmt ' chunk: unsupported codec tag {0:#06x} (only PCM is accepted)")]
    UnsupportedCodec(u16),
    #[error("'fmt ' chunk: unsupported bit depth {0} (only 16-bit is accepted)")]
    UnsupportedBitDepth(u16),
    #[error("'fmt ' chunk: unsupported channel count {0} (only mono is accepted)")]
    UnsupportedChannels(u16),
    #[error("'data' chunk: {0}")]
    Samples(#[from] DspError),
}

fn chunk_err(chunk: &[u8], message: impl Into<String>) -> WavError {
    WavError::Chunk {
        chunk: String::from_utf8_lossy(chunk).into_owned(),
        message: message.into(),
    }
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

pub fn load_wav(path: impl AsRef<Path>) -> Result<Signal, WavError> {
    parse_wav(&fs::read(path)?)
}

/// Decodes a whole file image. Samples are scaled by `1 / 32768`.
pub fn parse_wav(bytes: &[u8]) -> Result<Signal, WavError> {
    if bytes.len() < 12 {
        return Err(WavError::Riff(format!("file is only {} bytes", bytes.len())));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(WavError::Riff("missing 'RIFF' magic".into()));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(WavError::Riff("form type is not 'WAVE'".into()));
    }

    let mut fmt: Option<(u32, u16)> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| chunk_err(id, format!("declares {size} bytes, file ends first")))?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(chunk_err(id, format!("{} bytes, need at least 16", body.len())));
                }
                let mut tag = u16_at(body, 0);
                if tag == 0xFFFE {
                    // WAVE_FORMAT_EXTENSIBLE: the real codec is the first two bytes of the sub-format GUID
                    if body.len() < 26 {
                        return Err(chunk_err(id, "extensible format without sub-format"));
                    }
                    tag = u16_at(body, 24);
                }
                if tag != 1 {
                    return Err(WavError::UnsupportedCodec(tag));
                }
                let channels = u16_at(body, 2);
                if channels != 1 {
                    return Err(WavError::UnsupportedChannels(channels));
                }
                let rate = u32_at(body, 4);
                if rate == 0 {
                    return Err(chunk_err(id, "sample rate is zero"));
                }
                let bits = u16_at(body, 14);
                if bits != 16 {
                    return Err(WavError::UnsupportedBitDepth(bits));
                }
                fmt = Some((rate, bits));
            }
            b"data" => {
                let (rate, _) = fmt.ok_or_else(|| chunk_err(id, "appears before the 'fmt ' chunk"))?;
                if body.len() % 2 != 0 {
                    return Err(chunk_err(id, "odd byte count for 16-bit samples"));
                }
                if body.is_empty() {
                    return Err(chunk_err(id, "contains no samples"));
                }
                let samples = body
                    .chunks_exact(2)
                    .map(|s| f64::from(i16::from_le_bytes([s[0], s[1]])) / 32768.0)
                    .collect();
                return Ok(Signal::new(samples, rate)?);
            }
            _ => {}
        }
        pos = body_end + (size & 1);
    }
    Err(if fmt.is_none() {
        WavError::MissingChunk("fmt ")
    } else {
        WavError::MissingChunk("data")
    })
}

/// Encodes `signal` as 16-bit PCM mono; samples are rounded and clipped to the i16 range.
pub fn encode_wav(signal: &Signal) -> Vec<u8> {
    let n = signal.len();
    let data_len = (2 * n) as u32;
    let rate = signal.sample_rate();
    let mut out = Vec::with_capacity(44 + 2 * n);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&rate.to_le_bytes());
    out.extend_from_slice(&(rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in signal.samples() {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn write_wav(path: impl AsRef<Path>, signal: &Signal) -> Result<(), WavError> {
    fs::write(path, encode_wav(signal))?;
    Ok(())
}
