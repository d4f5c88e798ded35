//! Mono RIFF/WAVE reading and writing (PCM16 and IEEE float32).

use std::path::Path;

use crate::error::{Error, Result};
use crate::signal::Signal;

const WHAT: &str = "WAV file";

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

/// PCM16 sample values are `k / 32768`.
pub const PCM16_SCALE: f64 = 32768.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFormat {
    /// 16-bit integer PCM. Values outside `[-1, 1 - 2^-15]` are clamped.
    Pcm16,
    /// 32-bit IEEE float; lossless for `f32`-representable samples.
    Float32,
}

impl SampleFormat {
    fn bits(self) -> u16 {
        match self {
            SampleFormat::Pcm16 => 16,
            SampleFormat::Float32 => 32,
        }
    }

    fn tag(self) -> u16 {
        match self {
            SampleFormat::Pcm16 => FORMAT_PCM,
            SampleFormat::Float32 => FORMAT_FLOAT,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WavData {
    pub signal: Signal,
    pub format: SampleFormat,
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Signal> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_wav(&bytes)?.signal)
}

pub fn write_wav(path: impl AsRef<Path>, signal: &Signal, format: SampleFormat) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_wav(signal, format)?).map_err(|e| Error::io(path, e))
}

fn u16_at(bytes: &[u8], offset: usize) -> Result<u16> {
    bytes
        .get(offset..offset + 2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .ok_or_else(|| Error::format(WHAT, offset, "unexpected end of file"))
}

fn u32_at(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(WHAT, offset, "unexpected end of file"))
}

fn tag_at(bytes: &[u8], offset: usize) -> Result<&[u8]> {
    bytes
        .get(offset..offset + 4)
        .ok_or_else(|| Error::format(WHAT, offset, "unexpected end of file"))
}

struct Fmt {
    format: SampleFormat,
    sample_rate: u32,
}

fn parse_fmt(bytes: &[u8], start: usize, size: usize) -> Result<Fmt> {
    if size < 16 {
        return Err(Error::format(
            WHAT,
            start - 4,
            format!("fmt chunk of {size} bytes is too short"),
        ));
    }
    let mut tag = u16_at(bytes, start)?;
    let channels = u16_at(bytes, start + 2)?;
    let sample_rate = u32_at(bytes, start + 4)?;
    let block_align = u16_at(bytes, start + 12)?;
    let bits = u16_at(bytes, start + 14)?;
    if tag == FORMAT_EXTENSIBLE {
        // cbSize, valid bits, channel mask, then the sub-format GUID whose
        // first two bytes carry the plain format tag
        if size < 40 {
            return Err(Error::format(
                WHAT,
                start - 4,
                "extensible fmt chunk is too short",
            ));
        }
        tag = u16_at(bytes, start + 24)?;
    }
    if channels != 1 {
        return Err(Error::format(
            WHAT,
            start + 2,
            format!("{channels} channels; only mono is supported"),
        ));
    }
    if sample_rate == 0 {
        return Err(Error::format(WHAT, start + 4, "sample rate is zero"));
    }
    let format = match (tag, bits) {
        (FORMAT_PCM, 16) => SampleFormat::Pcm16,
        (FORMAT_FLOAT, 32) => SampleFormat::Float32,
        (FORMAT_PCM | FORMAT_FLOAT, _) => {
            return Err(Error::format(
                WHAT,
                start + 14,
                format!("unsupported sample width of {bits} bits"),
            ))
        }
        _ => {
            return Err(Error::format(
                WHAT,
                start,
                format!("unsupported codec tag {tag:#06x}"),
            ))
        }
    };
    if usize::from(block_align) != usize::from(bits / 8) {
        return Err(Error::format(
            WHAT,
            start + 12,
            format!("block align {block_align} does not match {bits}-bit mono"),
        ));
    }
    Ok(Fmt {
        format,
        sample_rate,
    })
}

pub fn parse_wav(bytes: &[u8]) -> Result<WavData> {
    if tag_at(bytes, 0)? != b"RIFF" {
        return Err(Error::format(WHAT, 0, "missing RIFF tag"));
    }
    if tag_at(bytes, 8)? != b"WAVE" {
        return Err(Error::format(WHAT, 8, "missing WAVE tag"));
    }
    let mut fmt: Option<Fmt> = None;
    let mut offset = 12;
    while offset < bytes.len() {
        let id = tag_at(bytes, offset)?;
        let size = u32_at(bytes, offset + 4)? as usize;
        let start = offset + 8;
        let end = start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| {
                Error::format(
                    WHAT,
                    offset + 4,
                    format!(
                        "chunk claims {size} bytes but the file ends at {}",
                        bytes.len()
                    ),
                )
            })?;
        match id {
            b"fmt " => fmt = Some(parse_fmt(bytes, start, size)?),
            b"data" => {
                let fmt =
                    fmt.ok_or_else(|| Error::format(WHAT, offset, "data chunk before fmt chunk"))?;
                let width = usize::from(fmt.format.bits() / 8);
                if !size.is_multiple_of(width) {
                    return Err(Error::format(
                        WHAT,
                        offset + 4,
                        format!("data size {size} is not a multiple of {width}"),
                    ));
                }
                let data = &bytes[start..end];
                let samples: Vec<f64> = match fmt.format {
                    SampleFormat::Pcm16 => data
                        .chunks_exact(2)
                        .map(|b| f64::from(i16::from_le_bytes([b[0], b[1]])) / PCM16_SCALE)
                        .collect(),
                    SampleFormat::Float32 => data
                        .chunks_exact(4)
                        .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
                        .collect(),
                };
                if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
                    return Err(Error::format(WHAT, start + i * width, "non-finite sample"));
                }
                if samples.is_empty() {
                    return Err(Error::format(WHAT, offset, "data chunk is empty"));
                }
                let signal = Signal::new(samples, fmt.sample_rate)?;
                return Ok(WavData {
                    signal,
                    format: fmt.format,
                });
            }
            _ => {}
        }
        // chunks are padded to even length
        offset = end + (size & 1);
    }
    Err(Error::format(WHAT, bytes.len(), "no data chunk"))
}

pub fn encode_wav(signal: &Signal, format: SampleFormat) -> Result<Vec<u8>> {
    let width = usize::from(format.bits() / 8);
    let data_len = signal.len() * width;
    let riff_len = u32::try_from(36 + data_len).map_err(|_| {
        Error::InvalidArgument(format!("{} samples do not fit in a WAV file", signal.len()))
    })?;
    let rate = signal.sample_rate();
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&riff_len.to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&format.tag().to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&rate.to_le_bytes());
    out.extend_from_slice(&(rate * width as u32).to_le_bytes());
    out.extend_from_slice(&(width as u16).to_le_bytes());
    out.extend_from_slice(&format.bits().to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &v in signal.samples() {
        match format {
            SampleFormat::Pcm16 => {
                let q = (v * PCM16_SCALE).round().clamp(-32768.0, 32767.0) as i16;
                out.extend_from_slice(&q.to_le_bytes());
            }
            SampleFormat::Float32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
        }
    }
    Ok(out)
}
