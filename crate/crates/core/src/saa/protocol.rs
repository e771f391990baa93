//! Subprocess vocoder protocol.
//!
//! The parent writes `MELS`, then little-endian `u32` version (1), `n_mels`,
//! `T` and sample rate, then `n_mels * T` `f32` log-mel values, mel-major, to
//! the child's stdin. The child answers on stdout with a complete PCM16 mono
//! WAV file and exits with status 0.

use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::thread;

use super::{LogMel, Result, SaaError};
use crate::dsp::{decode_wav, Waveform};

pub const MELS_MAGIC: &[u8; 4] = b"MELS";
pub const MELS_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

pub fn encode_mels(mel: &LogMel) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * mel.data.len());
    out.extend_from_slice(MELS_MAGIC);
    for v in [MELS_VERSION, mel.n_mels as u32, mel.n_frames as u32, mel.sample_rate] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in &mel.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_mels(bytes: &[u8]) -> Result<LogMel> {
    let bad = |msg: &str| SaaError::ProtocolError(msg.to_string());
    if bytes.len() < HEADER_LEN || &bytes[..4] != MELS_MAGIC {
        return Err(bad("missing MELS magic"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes"));
    if word(0) != MELS_VERSION {
        return Err(SaaError::ProtocolError(format!("unsupported MELS version {}", word(0))));
    }
    let (n_mels, n_frames, sample_rate) = (word(1) as usize, word(2) as usize, word(3));
    let body = &bytes[HEADER_LEN..];
    if n_mels == 0 || n_frames == 0 || body.len() != 4 * n_mels * n_frames {
        return Err(SaaError::ProtocolError(format!(
            "{} payload bytes for {n_mels} x {n_frames} values",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(LogMel {
        data,
        n_mels,
        n_frames,
        sample_rate,
    })
}

/// Runs `command` through `sh -c`, feeding it `mel` and decoding its WAV reply.
pub fn external_vocoder_call(mel: &LogMel, command: &str) -> Result<Waveform> {
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(command)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| SaaError::SpawnFailed(format!("{command}: {e}")))?;
    let payload = encode_mels(mel);
    let mut stdin = child.stdin.take().expect("piped stdin");
    // A child that exits without reading closes the pipe; its exit status is
    // the error worth reporting, so write failures are ignored here.
    let writer = thread::spawn(move || {
        let _ = stdin.write_all(&payload);
    });
    let mut stderr = child.stderr.take().expect("piped stderr");
    let err_reader = thread::spawn(move || {
        let mut s = Vec::new();
        let _ = stderr.read_to_end(&mut s);
        s
    });
    let mut stdout = Vec::new();
    child
        .stdout
        .take()
        .expect("piped stdout")
        .read_to_end(&mut stdout)?;
    let status = child.wait()?;
    let _ = writer.join();
    let stderr = err_reader.join().unwrap_or_default();
    if !status.success() {
        return Err(SaaError::ChildNonzeroExit {
            code: status.code(),
            stderr: String::from_utf8_lossy(&stderr).trim().to_string(),
        });
    }
    if stdout.len() < 12 || &stdout[..4] != b"RIFF" || &stdout[8..12] != b"WAVE" {
        return Err(SaaError::ProtocolError("child output is not a RIFF/WAVE file".into()));
    }
    let wave = decode_wav(&stdout).map_err(|e| SaaError::ProtocolError(e.to_string()))?;
    if wave.sample_rate != mel.sample_rate {
        return Err(SaaError::ProtocolError(format!(
            "child replied at {} Hz, expected {}",
            wave.sample_rate, mel.sample_rate
        )));
    }
    Ok(wave)
}
