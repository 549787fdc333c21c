//! Minimal 16-bit PCM mono WAV read/write.

use std::fs;
use std::path::Path;

use super::{DspError, Waveform};

fn err(path: &Path, what: impl Into<String>) -> DspError {
    DspError::Wav { path: path.display().to_string(), what: what.into() }
}

/// Write a waveform as 16-bit PCM mono, clamping samples to [-1, 1].
pub fn write_wav(path: &Path, w: &Waveform) -> Result<(), DspError> {
    let data_len = (w.samples.len() * 2) as u32;
    let byte_rate = w.sample_rate * 2;
    let mut bytes = Vec::with_capacity(44 + data_len as usize);
    bytes.extend_from_slice(b"RIFF");
    bytes.extend_from_slice(&(36 + data_len).to_le_bytes());
    bytes.extend_from_slice(b"WAVE");
    bytes.extend_from_slice(b"fmt ");
    bytes.extend_from_slice(&16u32.to_le_bytes()); // PCM fmt chunk size
    bytes.extend_from_slice(&1u16.to_le_bytes()); // PCM
    bytes.extend_from_slice(&1u16.to_le_bytes()); // mono
    bytes.extend_from_slice(&w.sample_rate.to_le_bytes());
    bytes.extend_from_slice(&byte_rate.to_le_bytes());
    bytes.extend_from_slice(&2u16.to_le_bytes()); // block align
    bytes.extend_from_slice(&16u16.to_le_bytes()); // bits per sample
    bytes.extend_from_slice(b"data");
    bytes.extend_from_slice(&data_len.to_le_bytes());
    for &s in &w.samples {
        // same 32768 scale as the reader, clamped into i16 range
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| err(path, e.to_string()))
}

/// Read a 16-bit PCM mono WAV file. Skips unknown chunks; rejects other
/// encodings, channel counts, and bit depths.
pub fn read_wav(path: &Path) -> Result<Waveform, DspError> {
    let bytes = fs::read(path).map_err(|e| err(path, e.to_string()))?;
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(err(path, "not a RIFF/WAVE file"));
    }
    let mut pos = 12;
    let mut sample_rate = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_end = pos + 8 + size;
        if body_end > bytes.len() {
            return Err(err(path, format!("chunk {:?} overruns file", String::from_utf8_lossy(id))));
        }
        let body = &bytes[pos + 8..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(err(path, "fmt chunk too short"));
                }
                let format = u16::from_le_bytes(body[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
                if format != 1 {
                    return Err(err(path, format!("unsupported format {format} (want PCM)")));
                }
                if channels != 1 {
                    return Err(err(path, format!("{channels} channels (want mono)")));
                }
                if bits != 16 {
                    return Err(err(path, format!("{bits}-bit samples (want 16)")));
                }
                sample_rate = Some(rate);
            }
            b"data" => data = Some(body),
            _ => {} // skip ancillary chunks
        }
        pos = body_end + (size & 1); // chunks are word-aligned
    }
    let sample_rate = sample_rate.ok_or_else(|| err(path, "missing fmt chunk"))?;
    let data = data.ok_or_else(|| err(path, "missing data chunk"))?;
    if data.len() % 2 != 0 {
        return Err(err(path, "odd data chunk length"));
    }
    let samples = data
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0)
        .collect();
    Waveform::new(samples, sample_rate)
}
