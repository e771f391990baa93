use std::io::{Cursor, Read, Seek, Write};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{DspError, Result, Waveform};

const PCM_SCALE: f64 = 32768.0;

fn map_hound(e: hound::Error) -> DspError {
    match e {
        hound::Error::IoError(io) => DspError::Io(io),
        other => DspError::Wav(other.to_string()),
    }
}

fn decode_from<R: Read>(reader: WavReader<R>) -> Result<Waveform> {
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(DspError::UnsupportedChannels(spec.channels));
    }
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(DspError::UnsupportedEncoding(format!(
            "{:?} {}-bit",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / PCM_SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(map_hound)?;
    Ok(Waveform::new(samples, spec.sample_rate))
}

/// Reads a mono PCM16 RIFF/WAVE file into samples scaled by 1/32768.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(DspError::NotFound(path.to_path_buf()));
    }
    decode_from(WavReader::open(path).map_err(map_hound)?)
}

pub fn decode_wav(bytes: &[u8]) -> Result<Waveform> {
    decode_from(WavReader::new(Cursor::new(bytes)).map_err(map_hound)?)
}

fn to_pcm16(x: f64) -> i16 {
    let clamped = x.clamp(-1.0, 1.0 - 1.0 / PCM_SCALE);
    (clamped * PCM_SCALE).round() as i16
}

/// Rounds samples onto the PCM16 grid, i.e. what a write/read roundtrip yields.
pub fn quantize_pcm16(wave: &Waveform) -> Waveform {
    Waveform::new(
        wave.samples
            .iter()
            .map(|&x| f64::from(to_pcm16(x)) / PCM_SCALE)
            .collect(),
        wave.sample_rate,
    )
}

fn encode_into<W: Write + Seek>(writer: W, wave: &Waveform) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut w = WavWriter::new(writer, spec).map_err(map_hound)?;
    {
        let mut i16w = w.get_i16_writer(wave.samples.len() as u32);
        for &x in &wave.samples {
            i16w.write_sample(to_pcm16(x));
        }
        i16w.flush().map_err(map_hound)?;
    }
    w.finalize().map_err(map_hound)
}

/// Writes mono PCM16, clamping to `[-1, 1 - 2^-15]` before quantization.
pub fn write_wav(path: impl AsRef<Path>, wave: &Waveform) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    encode_into(file, wave)
}

pub fn encode_wav(wave: &Waveform) -> Result<Vec<u8>> {
    let mut cursor = Cursor::new(Vec::new());
    encode_into(&mut cursor, wave)?;
    Ok(cursor.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zeros_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.wav");
        write_wav(&p, &Waveform::zeros(16000, 16000)).unwrap();
        let w = read_wav(&p).unwrap();
        assert_eq!(w.sample_rate, 16000);
        assert_eq!(w.samples.len(), 16000);
        assert!(w.samples.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn full_scale_sample_scaling() {
        let bytes = encode_wav(&Waveform::new(vec![32767.0 / 32768.0], 16000)).unwrap();
        let w = decode_wav(&bytes).unwrap();
        assert_eq!(w.samples[0], 32767.0 / 32768.0);
        assert!((w.samples[0] - 0.999969).abs() < 1e-6);
    }

    #[test]
    fn out_of_range_is_clamped() {
        let w = decode_wav(&encode_wav(&Waveform::new(vec![2.0, -3.0], 16000)).unwrap()).unwrap();
        assert_eq!(w.samples, vec![32767.0 / 32768.0, -1.0]);
    }

    #[test]
    fn stereo_is_rejected() {
        let spec = WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut cursor = Cursor::new(Vec::new());
        {
            let mut w = WavWriter::new(&mut cursor, spec).unwrap();
            for _ in 0..8 {
                w.write_sample(0i16).unwrap();
            }
            w.finalize().unwrap();
        }
        assert!(matches!(
            decode_wav(cursor.get_ref()),
            Err(DspError::UnsupportedChannels(2))
        ));
    }

    #[test]
    fn float_encoding_is_rejected() {
        let spec = WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        };
        let mut cursor = Cursor::new(Vec::new());
        {
            let mut w = WavWriter::new(&mut cursor, spec).unwrap();
            w.write_sample(0.5f32).unwrap();
            w.finalize().unwrap();
        }
        assert!(matches!(
            decode_wav(cursor.get_ref()),
            Err(DspError::UnsupportedEncoding(_))
        ));
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            read_wav("/definitely/not/here.wav"),
            Err(DspError::NotFound(_))
        ));
    }

    proptest! {
        #[test]
        fn roundtrip_error_is_below_one_lsb(samples in prop::collection::vec(-1.0f64..1.0, 1..512)) {
            let wave = Waveform::new(samples, 16000);
            let back = decode_wav(&encode_wav(&wave).unwrap()).unwrap();
            for (a, b) in wave.samples.iter().zip(&back.samples) {
                prop_assert!((a - b).abs() <= 1.0 / 32768.0);
            }
            prop_assert_eq!(back, quantize_pcm16(&wave));
        }
    }
}
