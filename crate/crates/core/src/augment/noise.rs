use rand::Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::{AugmentError, Result};
use crate::dsp::Waveform;

/// Adds `noise` to `clean` so that `10 log10(P_clean / P_added) = snr_db`.
///
/// The noise segment starts at a random offset and wraps around when the
/// noise is shorter than the clean signal.
pub fn mix_noise<R: Rng + ?Sized>(
    clean: &Waveform,
    noise: &Waveform,
    snr_db: f64,
    rng: &mut R,
) -> Result<Waveform> {
    if clean.sample_rate != noise.sample_rate {
        return Err(AugmentError::RateMismatch(clean.sample_rate, noise.sample_rate));
    }
    if !snr_db.is_finite() {
        return Err(AugmentError::InvalidConfig(format!("snr {snr_db} dB")));
    }
    if noise.is_empty() || noise.power() == 0.0 {
        return Err(AugmentError::DegenerateNoise);
    }
    let p_clean = clean.power();
    if p_clean == 0.0 {
        return Err(AugmentError::DegenerateClean);
    }
    let offset = rng.gen_range(0..noise.len());
    let segment: Vec<f64> = (0..clean.len())
        .map(|i| noise.samples[(offset + i) % noise.len()])
        .collect();
    let p_seg = segment.iter().map(|x| x * x).sum::<f64>() / segment.len() as f64;
    if p_seg == 0.0 {
        return Err(AugmentError::DegenerateNoise);
    }
    let alpha = (p_clean / (p_seg * 10f64.powf(snr_db / 10.0))).sqrt();
    Ok(Waveform::new(
        clean
            .samples
            .iter()
            .zip(&segment)
            .map(|(c, n)| c + alpha * n)
            .collect(),
        clean.sample_rate,
    ))
}

const DIRECT_MAX_TAPS: usize = 64;

/// Full linear convolution of `x` with `h`, truncated to `x.len()` samples.
/// Short kernels are convolved directly, long ones through the FFT.
pub fn convolve_truncated(x: &[f64], h: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 || h.is_empty() {
        return vec![0.0; n];
    }
    if h.len() <= DIRECT_MAX_TAPS {
        let mut out = vec![0.0; n];
        for (k, &hk) in h.iter().enumerate() {
            if hk == 0.0 || k >= n {
                continue;
            }
            for (o, &xv) in out[k..].iter_mut().zip(x) {
                *o += hk * xv;
            }
        }
        return out;
    }
    let size = (n + h.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let mut a: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    a.resize(size, Complex64::new(0.0, 0.0));
    let mut b: Vec<Complex64> = h.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    b.resize(size, Complex64::new(0.0, 0.0));
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    inv.process(&mut a);
    let scale = 1.0 / size as f64;
    a[..n].iter().map(|c| c.re * scale).collect()
}

/// Reverberates `clean` with `rir` and rescales the result to the input peak.
pub fn apply_rir(clean: &Waveform, rir: &Waveform) -> Result<Waveform> {
    if clean.sample_rate != rir.sample_rate {
        return Err(AugmentError::RateMismatch(clean.sample_rate, rir.sample_rate));
    }
    if rir.is_empty() {
        return Err(AugmentError::InvalidConfig("empty impulse response".into()));
    }
    let mut out = convolve_truncated(&clean.samples, &rir.samples);
    let peak_in = clean.peak();
    let peak_out = out.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if peak_out > 0.0 {
        let scale = peak_in / peak_out;
        if scale != 1.0 {
            out.iter_mut().for_each(|v| *v *= scale);
        }
    }
    Ok(Waveform::new(out, clean.sample_rate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    fn random_wave(rng: &mut impl Rng, n: usize, amp: f64) -> Waveform {
        Waveform::new((0..n).map(|_| rng.gen_range(-amp..amp)).collect(), 16000)
    }

    fn measured_snr(clean: &Waveform, mixed: &Waveform) -> f64 {
        let added: f64 = clean
            .samples
            .iter()
            .zip(&mixed.samples)
            .map(|(c, m)| (m - c) * (m - c))
            .sum();
        10.0 * (clean.energy() / added).log10()
    }

    #[test]
    fn snr_zero_and_fifteen() {
        let mut rng = seeded_rng(8);
        let clean = random_wave(&mut rng, 16000, 0.3);
        let noise = random_wave(&mut rng, 5000, 0.9);
        for snr in [0.0, 15.0] {
            let mixed = mix_noise(&clean, &noise, snr, &mut rng).unwrap();
            assert!((measured_snr(&clean, &mixed) - snr).abs() < 0.01);
        }
    }

    #[test]
    fn snr_contract_over_many_draws() {
        let mut rng = seeded_rng(21);
        for _ in 0..200 {
            let n = rng.gen_range(400..6000);
            let amp = rng.gen_range(0.01..1.0);
            let clean = random_wave(&mut rng, n, amp);
            let (m, amp) = (rng.gen_range(50..8000), rng.gen_range(0.01..1.0));
            let noise = random_wave(&mut rng, m, amp);
            let snr = rng.gen_range(-5.0..30.0);
            let mixed = mix_noise(&clean, &noise, snr, &mut rng).unwrap();
            assert!((measured_snr(&clean, &mixed) - snr).abs() < 0.01);
        }
    }

    #[test]
    fn degenerate_inputs() {
        let mut rng = seeded_rng(1);
        let clean = random_wave(&mut rng, 1000, 0.5);
        assert!(matches!(
            mix_noise(&clean, &Waveform::zeros(100, 16000), 5.0, &mut rng),
            Err(AugmentError::DegenerateNoise)
        ));
        assert!(matches!(
            mix_noise(&Waveform::zeros(100, 16000), &clean, 5.0, &mut rng),
            Err(AugmentError::DegenerateClean)
        ));
    }

    #[test]
    fn unit_impulse_is_identity() {
        let mut rng = seeded_rng(2);
        let clean = random_wave(&mut rng, 3000, 0.7);
        let out = apply_rir(&clean, &Waveform::new(vec![1.0], 16000)).unwrap();
        assert_eq!(out, clean);
    }

    #[test]
    fn delayed_impulse_shifts() {
        let mut rng = seeded_rng(3);
        let clean = random_wave(&mut rng, 3000, 0.7);
        let d = 25;
        let mut h = vec![0.0; d + 1];
        h[d] = 0.5;
        let out = apply_rir(&clean, &Waveform::new(h, 16000)).unwrap();
        assert_eq!(out.len(), clean.len());
        assert!(out.samples[..d].iter().all(|&v| v == 0.0));
        let scale = clean.peak() / (0.5 * clean.samples[..3000 - d].iter().fold(0.0f64, |m, x| m.max(x.abs())));
        for i in d..3000 {
            let expected = 0.5 * clean.samples[i - d] * scale;
            assert!((out.samples[i] - expected).abs() < 1e-12);
        }
        assert!((out.peak() - clean.peak()).abs() < 1e-12);
    }

    #[test]
    fn long_kernel_matches_direct_sum() {
        let mut rng = seeded_rng(4);
        let x = random_wave(&mut rng, 700, 1.0).samples;
        let h = random_wave(&mut rng, 300, 1.0).samples;
        let fast = convolve_truncated(&x, &h);
        for (n, v) in fast.iter().enumerate() {
            let direct: f64 = (0..=n.min(h.len() - 1)).map(|k| h[k] * x[n - k]).sum();
            assert!((v - direct).abs() < 1e-9);
        }
        let out = apply_rir(&Waveform::new(x, 16000), &Waveform::new(h, 16000)).unwrap();
        assert_eq!(out.len(), 700);
    }
}
