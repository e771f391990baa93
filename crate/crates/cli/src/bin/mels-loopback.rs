//! Reference child for the external vocoder protocol: reads a `MELS` message
//! on stdin, vocodes it with the in-repo Griffin-Lim backend and writes the
//! WAV reply on stdout.
//!
//! Usage: `mels-loopback [--iterations N] [--fmin HZ] [--fmax HZ]`

use std::io::{Read, Write};
use std::process::ExitCode;

use longsv::dsp::{encode_wav, mel_filterbank_matrix};
use longsv::saa::{decode_mels, vocode_griffin_lim};
use longsv::FrameSpec;

struct Options {
    iterations: usize,
    fmin: f64,
    fmax: Option<f64>,
}

fn parse<T: std::str::FromStr>(flag: &str, value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("bad value '{value}' for {flag}"))
}

fn parse_args() -> Result<Options, String> {
    let mut opts = Options {
        iterations: 32,
        fmin: 0.0,
        fmax: None,
    };
    let mut args = std::env::args().skip(1);
    while let Some(flag) = args.next() {
        let value = args.next().ok_or_else(|| format!("{flag} needs a value"))?;
        match flag.as_str() {
            "--iterations" => opts.iterations = parse(&flag, &value)?,
            "--fmin" => opts.fmin = parse(&flag, &value)?,
            "--fmax" => opts.fmax = Some(parse(&flag, &value)?),
            _ => return Err(format!("unknown flag {flag}")),
        }
    }
    Ok(opts)
}

fn run() -> Result<(), String> {
    let opts = parse_args()?;
    let mut input = Vec::new();
    std::io::stdin().read_to_end(&mut input).map_err(|e| e.to_string())?;
    let logmel = decode_mels(&input).map_err(|e| e.to_string())?;
    let spec = FrameSpec::default();
    let fmax = opts.fmax.unwrap_or(f64::from(logmel.sample_rate) / 2.0);
    let mel = mel_filterbank_matrix(logmel.n_mels, spec.fft_size, logmel.sample_rate, opts.fmin, fmax)
        .map_err(|e| e.to_string())?;
    let wave = vocode_griffin_lim(&logmel, opts.iterations, &spec, &mel).map_err(|e| e.to_string())?;
    let bytes = encode_wav(&wave).map_err(|e| e.to_string())?;
    std::io::stdout().write_all(&bytes).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mels-loopback: {e}");
            ExitCode::FAILURE
        }
    }
}
