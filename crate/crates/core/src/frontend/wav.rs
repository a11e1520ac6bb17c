//! RIFF/WAVE ingest restricted to 16-bit PCM mono.

use crate::error::WavError;

/// Mono PCM audio with samples scaled to `[-1, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PcmAudio {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

const PCM_FORMAT: u16 = 1;

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

pub fn parse_wav(bytes: &[u8]) -> Result<PcmAudio, WavError> {
    if bytes.len() < 12 {
        return Err(if bytes.len() >= 4 && &bytes[..4] != b"RIFF" { WavError::BadMagic } else { WavError::Truncated("RIFF header") });
    }
    if &bytes[..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(WavError::BadMagic);
    }

    let mut pos = 12;
    let mut format: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        match id {
            b"fmt " => {
                if size < 16 || body + 16 > bytes.len() {
                    return Err(WavError::Truncated("fmt chunk"));
                }
                let tag = u16_at(bytes, body);
                let channels = u16_at(bytes, body + 2);
                let rate = u32_at(bytes, body + 4);
                let bits = u16_at(bytes, body + 14);
                format = Some((tag, channels, rate, bits));
            }
            b"data" => {
                let (tag, channels, rate, bits) = format.ok_or(WavError::Truncated("data chunk before fmt chunk"))?;
                if tag != PCM_FORMAT || bits != 16 {
                    return Err(WavError::UnsupportedCodec(tag, bits));
                }
                if channels != 1 {
                    return Err(WavError::UnsupportedChannels(channels));
                }
                if body + size > bytes.len() || size % 2 != 0 {
                    return Err(WavError::Truncated("data chunk"));
                }
                let samples = bytes[body..body + size]
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / 32768.0)
                    .collect();
                return Ok(PcmAudio { samples, sample_rate: rate });
            }
            _ => {}
        }
        // chunks are word aligned
        pos = body + size + (size & 1);
    }
    match format {
        Some((tag, _, _, bits)) if tag != PCM_FORMAT || bits != 16 => Err(WavError::UnsupportedCodec(tag, bits)),
        Some((_, ch, _, _)) if ch != 1 => Err(WavError::UnsupportedChannels(ch)),
        Some(_) => Err(WavError::Truncated("missing data chunk")),
        None => Err(WavError::Truncated("missing fmt chunk")),
    }
}

/// Canonical 44-byte-header PCM16 mono file. Samples are clamped and
/// rounded to the nearest 16-bit code.
pub fn write_wav(audio: &PcmAudio) -> Vec<u8> {
    let data_len = audio.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&PCM_FORMAT.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&audio.sample_rate.to_le_bytes());
    out.extend_from_slice(&(audio.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &audio.samples {
        let code = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&code.to_le_bytes());
    }
    out
}
