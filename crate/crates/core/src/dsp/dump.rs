//! Spectrogram dump files.
//!
//! Text form: a header line `emoser-spec v1 <T> <n_mels>` followed by `T`
//! lines of `n_mels` space-separated decimal floats. Values are printed in
//! shortest round-trip form, so text dumps reload bit-exactly.
//!
//! Binary form: 16-byte header (`EMSP`, version u32, T u32, n_mels u32, all
//! little-endian) followed by row-major little-endian f32 values.
//!
//! Neither form records the normalization flag; readers state it.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};

const TEXT_TAG: &str = "emoser-spec";
const BINARY_MAGIC: &[u8; 4] = b"EMSP";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DumpFormat {
    Text,
    Binary,
}

impl std::str::FromStr for DumpFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(DumpFormat::Text),
            "binary" => Ok(DumpFormat::Binary),
            other => Err(Error::Config(format!(
                "unknown dump format {other:?} (expected text or binary)"
            ))),
        }
    }
}

pub fn encode_text(spec: &MelSpectrogram) -> String {
    let mut out = format!("{TEXT_TAG} v{VERSION} {} {}\n", spec.n_frames(), spec.n_mels());
    for t in 0..spec.n_frames() {
        for (i, v) in spec.frame(t).iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            write!(out, "{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn encode_binary(spec: &MelSpectrogram) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + spec.frames().len() * 4);
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(spec.n_frames() as u32).to_le_bytes());
    out.extend_from_slice(&(spec.n_mels() as u32).to_le_bytes());
    for v in spec.frames() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], normalized: bool) -> Result<MelSpectrogram> {
    if bytes.starts_with(BINARY_MAGIC) {
        decode_binary(bytes, normalized)
    } else {
        let text = std::str::from_utf8(bytes)
            .map_err(|_| Error::Dump("neither binary magic nor UTF-8 text".into()))?;
        decode_text(text, normalized)
    }
}

fn decode_text(text: &str, normalized: bool) -> Result<MelSpectrogram> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Dump("empty file".into()))?
        .split_whitespace()
        .collect();
    if header.len() != 4 || header[0] != TEXT_TAG {
        return Err(Error::Dump(format!("bad header {:?}", header.join(" "))));
    }
    if header[1] != format!("v{VERSION}") {
        return Err(Error::Dump(format!("unsupported version {}", header[1])));
    }
    let parse_dim = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Dump(format!("bad dimension {s:?}")))
    };
    let (n_frames, n_mels) = (parse_dim(header[2])?, parse_dim(header[3])?);
    let mut frames = Vec::with_capacity(n_frames * n_mels);
    for (row, line) in lines.take(n_frames).enumerate() {
        let before = frames.len();
        for tok in line.split_whitespace() {
            frames.push(
                tok.parse::<f32>()
                    .map_err(|_| Error::Dump(format!("row {row}: bad value {tok:?}")))?,
            );
        }
        if frames.len() - before != n_mels {
            return Err(Error::Dump(format!(
                "row {row} has {} values, expected {n_mels}",
                frames.len() - before
            )));
        }
    }
    if frames.len() != n_frames * n_mels {
        return Err(Error::Dump(format!(
            "expected {n_frames} rows, found {}",
            frames.len() / n_mels.max(1)
        )));
    }
    MelSpectrogram::from_frames(frames, n_mels, normalized)
}

fn decode_binary(bytes: &[u8], normalized: bool) -> Result<MelSpectrogram> {
    if bytes.len() < 16 {
        return Err(Error::Dump("binary header truncated".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    if word(4) != VERSION {
        return Err(Error::Dump(format!("unsupported version {}", word(4))));
    }
    let (n_frames, n_mels) = (word(8) as usize, word(12) as usize);
    let body = &bytes[16..];
    if body.len() != n_frames * n_mels * 4 {
        return Err(Error::Dump(format!(
            "payload is {} bytes, header implies {}",
            body.len(),
            n_frames * n_mels * 4
        )));
    }
    let frames = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    MelSpectrogram::from_frames(frames, n_mels, normalized)
}

pub fn write_dump(path: impl AsRef<Path>, spec: &MelSpectrogram, format: DumpFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = match format {
        DumpFormat::Text => encode_text(spec).into_bytes(),
        DumpFormat::Binary => encode_binary(spec),
    };
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| Error::io(path, e))
}

pub fn read_dump(path: impl AsRef<Path>, normalized: bool) -> Result<MelSpectrogram> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, normalized)
}
