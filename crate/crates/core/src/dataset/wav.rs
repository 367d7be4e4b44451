//! RIFF/WAVE reader for PCM 16/24/32-bit and IEEE float 32/64-bit, and a
//! 16-bit PCM writer.

use std::path::Path;

use crate::dsp::AudioClip;
use crate::{Error, Result, WavError};

const FORMAT_PCM: u16 = 0x0001;
const FORMAT_FLOAT: u16 = 0x0003;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Encoding {
    Pcm,
    Float,
}

#[derive(Debug, Clone, Copy)]
struct Format {
    encoding: Encoding,
    channels: u16,
    sample_rate: u32,
    bits: u16,
    block_align: u16,
}

fn le_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn parse_fmt(body: &[u8]) -> Result<Format, WavError> {
    if body.len() < 16 {
        return Err(WavError::MalformedHeader(format!(
            "fmt chunk is {} bytes, need 16",
            body.len()
        )));
    }
    let mut tag = le_u16(body, 0);
    let channels = le_u16(body, 2);
    let sample_rate = le_u32(body, 4);
    let block_align = le_u16(body, 12);
    let bits = le_u16(body, 14);

    if tag == FORMAT_EXTENSIBLE {
        if body.len() < 40 {
            return Err(WavError::MalformedHeader(
                "extensible fmt chunk shorter than 40 bytes".into(),
            ));
        }
        // first two bytes of the sub-format GUID carry the real tag
        tag = le_u16(body, 24);
    }
    let encoding = match (tag, bits) {
        (FORMAT_PCM, 16 | 24 | 32) => Encoding::Pcm,
        (FORMAT_FLOAT, 32 | 64) => Encoding::Float,
        _ => return Err(WavError::UnsupportedCodec { format_tag: tag, bits }),
    };
    if channels == 0 || channels > 2 {
        return Err(WavError::UnsupportedChannels(channels));
    }
    if sample_rate == 0 {
        return Err(WavError::MalformedHeader("sample rate is zero".into()));
    }
    if u32::from(block_align) != u32::from(channels) * u32::from(bits / 8) {
        return Err(WavError::MalformedHeader(format!(
            "block align {block_align} does not match {channels} x {bits}-bit samples"
        )));
    }
    Ok(Format {
        encoding,
        channels,
        sample_rate,
        bits,
        block_align,
    })
}

/// Decodes a WAV byte stream into a clip with samples normalized to `[-1, 1]`.
pub fn parse_wav(bytes: &[u8]) -> Result<AudioClip, WavError> {
    if bytes.len() < 12 || &bytes[..4] != b"RIFF" {
        return Err(WavError::NotRiff);
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(WavError::NotWave);
    }

    let mut format = None;
    let mut data = None;
    let mut at = 12;
    while at + 8 <= bytes.len() {
        let id = &bytes[at..at + 4];
        let size = le_u32(bytes, at + 4) as usize;
        let body_start = at + 8;
        let available = bytes.len() - body_start;
        if id == b"data" {
            if size > available {
                return Err(WavError::Truncated(format!(
                    "data chunk declares {size} bytes, {available} present"
                )));
            }
            data = Some(&bytes[body_start..body_start + size]);
        } else if size > available {
            return Err(WavError::Truncated(format!(
                "{} chunk declares {size} bytes, {available} present",
                String::from_utf8_lossy(id)
            )));
        } else if id == b"fmt " {
            format = Some(parse_fmt(&bytes[body_start..body_start + size])?);
        }
        if data.is_some() && format.is_some() {
            break;
        }
        // chunks are word aligned
        at = body_start.saturating_add(size).saturating_add(size & 1);
    }

    let format = format.ok_or(WavError::MissingChunk("fmt "))?;
    let data = data.ok_or(WavError::MissingChunk("data"))?;
    let frame_bytes = format.block_align as usize;
    if data.len() % frame_bytes != 0 {
        return Err(WavError::Truncated(format!(
            "data length {} is not a multiple of the {frame_bytes}-byte frame",
            data.len()
        )));
    }

    let channels = format.channels as usize;
    let width = (format.bits / 8) as usize;
    let frames = data.len() / frame_bytes;
    let mut out = vec![Vec::with_capacity(frames); channels];
    for frame in data.chunks_exact(frame_bytes) {
        for (ch, sample) in frame.chunks_exact(width).enumerate() {
            out[ch].push(decode_sample(sample, format.encoding));
        }
    }
    AudioClip::new(out, format.sample_rate)
        .map_err(|e| WavError::MalformedHeader(e.to_string()))
}

fn decode_sample(b: &[u8], encoding: Encoding) -> f64 {
    match (encoding, b.len()) {
        (Encoding::Pcm, 2) => f64::from(i16::from_le_bytes([b[0], b[1]])) / 32_768.0,
        (Encoding::Pcm, 3) => {
            let v = i32::from_le_bytes([0, b[0], b[1], b[2]]) >> 8;
            f64::from(v) / 8_388_608.0
        }
        (Encoding::Pcm, 4) => f64::from(i32::from_le_bytes([b[0], b[1], b[2], b[3]])) / 2_147_483_648.0,
        (Encoding::Float, 4) => {
            let v = f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
            sanitize(v)
        }
        (Encoding::Float, 8) => sanitize(f64::from_le_bytes(b.try_into().unwrap())),
        _ => unreachable!("sample width validated in parse_fmt"),
    }
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(-1.0, 1.0)
    }
}

pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let bytes = std::fs::read(path).map_err(|e| Error::from(e).in_file(path))?;
    parse_wav(&bytes).map_err(|e| Error::from(e).in_file(path))
}

/// Quantizes `x` to a 16-bit PCM code.
pub fn quantize_pcm16(x: f64) -> i16 {
    (x * 32_768.0).round().clamp(-32_768.0, 32_767.0) as i16
}

/// Encodes the clip as 16-bit PCM.
pub fn encode_wav_pcm16(clip: &AudioClip) -> Vec<u8> {
    let channels = clip.channel_count() as u16;
    let block_align = channels * 2;
    let data_len = (clip.len() * block_align as usize) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate().to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate() * u32::from(block_align)).to_le_bytes());
    out.extend_from_slice(&block_align.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for i in 0..clip.len() {
        for ch in clip.channels() {
            out.extend_from_slice(&quantize_pcm16(ch[i]).to_le_bytes());
        }
    }
    out
}

pub fn write_wav_pcm16(path: &Path, clip: &AudioClip) -> Result<()> {
    std::fs::write(path, encode_wav_pcm16(clip)).map_err(|e| Error::from(e).in_file(path))
}
