//! `FBNK` feature files: magic, u32 version (1), u32 frames, u32 dims, then
//! frame-major little-endian float32 values.

use std::path::Path;

use super::{DspError, FeatureMatrix, FrameSpec, Result};

const MAGIC: &[u8; 4] = b"FBNK";
const VERSION: u32 = 1;

pub fn encode_fbank(features: &FeatureMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + features.data.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(features.n_frames as u32).to_le_bytes());
    out.extend_from_slice(&(features.n_mels as u32).to_le_bytes());
    for &v in &features.data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .ok_or(DspError::BadMagic("FBNK"))
}

/// Decodes an `FBNK` payload. The frame spec is not stored and is set to the default.
pub fn decode_fbank(bytes: &[u8]) -> Result<FeatureMatrix> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(DspError::BadMagic("FBNK"));
    }
    let version = read_u32(bytes, 4)?;
    if version != VERSION {
        return Err(DspError::VersionMismatch {
            format: "FBNK",
            version,
        });
    }
    let t = read_u32(bytes, 8)? as usize;
    let f = read_u32(bytes, 12)? as usize;
    let body = &bytes[16..];
    if body.len() != t * f * 4 {
        return Err(DspError::DimMismatch(format!(
            "FBNK body has {} bytes, header says {t}x{f}",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    Ok(FeatureMatrix {
        data,
        n_frames: t,
        n_mels: f,
        frame_spec: FrameSpec::default(),
    })
}

pub fn write_fbank(path: impl AsRef<Path>, features: &FeatureMatrix) -> Result<()> {
    std::fs::write(path, encode_fbank(features))?;
    Ok(())
}

pub fn read_fbank(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    decode_fbank(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FeatureMatrix {
        FeatureMatrix {
            data: (0..6).map(|i| i as f64 * 0.25 - 1.0).collect(),
            n_frames: 2,
            n_mels: 3,
            frame_spec: FrameSpec::default(),
        }
    }

    #[test]
    fn layout_is_bit_exact() {
        let bytes = encode_fbank(&sample());
        assert_eq!(&bytes[..4], b"FBNK");
        assert_eq!(&bytes[4..16], &[1, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(&bytes[16..20], &(-1.0f32).to_le_bytes());
        assert_eq!(bytes.len(), 16 + 6 * 4);
        assert_eq!(decode_fbank(&bytes).unwrap(), sample());
    }

    #[test]
    fn rejects_bad_headers() {
        let mut bytes = encode_fbank(&sample());
        bytes[4] = 9;
        assert!(matches!(
            decode_fbank(&bytes),
            Err(DspError::VersionMismatch { version: 9, .. })
        ));
        assert!(matches!(decode_fbank(b"NOPE"), Err(DspError::BadMagic(_))));
        let bytes = encode_fbank(&sample());
        assert!(decode_fbank(&bytes[..bytes.len() - 1]).is_err());
    }
}
