use crate::dsp::Waveform;

/// Frame energy threshold relative to the 95th-percentile frame energy.
const THRESHOLD_RATIO: f64 = 0.05;
/// Speech runs separated by less than this are merged.
const MERGE_GAP_S: f64 = 0.3;

/// Half-open sample range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn duration_s(&self, sample_rate: u32) -> f64 {
        (self.end - self.start) as f64 / f64::from(sample_rate)
    }

    pub fn slice(&self, wave: &Waveform) -> Waveform {
        Waveform::new(wave.samples[self.start..self.end].to_vec(), wave.sample_rate)
    }
}

/// Linear-interpolated percentile of unsorted data, `q` in `[0, 1]`.
fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Energy-based speech segments of at least `min_dur_s` seconds.
///
/// Frames are 25 ms long every 10 ms. A frame is speech when its energy
/// exceeds 5% of the 95th-percentile frame energy; speech runs closer than
/// 0.3 s are merged. A run of frames `a..=b` covers the samples from the
/// middle of the first hop-overlap to the middle of the last, i.e.
/// `[a*hop + (win-hop)/2, b*hop + (win+hop)/2)`.
pub fn energy_vad_segments(wave: &Waveform, min_dur_s: f64) -> Vec<Segment> {
    let sr = wave.sample_rate as usize;
    let win = sr * 25 / 1000;
    let hop = sr / 100;
    if win == 0 || hop == 0 || wave.len() < win {
        return Vec::new();
    }
    let n_frames = (wave.len() - win) / hop + 1;
    let energy: Vec<f64> = (0..n_frames)
        .map(|t| wave.samples[t * hop..t * hop + win].iter().map(|x| x * x).sum())
        .collect();
    let p95 = percentile(&energy, 0.95);
    if p95 <= 0.0 {
        return Vec::new();
    }
    let threshold = THRESHOLD_RATIO * p95;
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut t = 0;
    while t < n_frames {
        if energy[t] > threshold {
            let start = t;
            while t + 1 < n_frames && energy[t + 1] > threshold {
                t += 1;
            }
            runs.push((start, t));
        }
        t += 1;
    }
    let to_segment = |(a, b): (usize, usize)| Segment {
        start: a * hop + (win - hop) / 2,
        end: (b * hop + (win + hop) / 2).min(wave.len()),
    };
    let max_gap = (MERGE_GAP_S * sr as f64).round() as usize;
    let mut merged: Vec<Segment> = Vec::new();
    for seg in runs.into_iter().map(to_segment) {
        match merged.last_mut() {
            Some(last) if seg.start - last.end < max_gap => last.end = seg.end,
            _ => merged.push(seg),
        }
    }
    merged
        .into_iter()
        .filter(|s| s.duration_s(wave.sample_rate) >= min_dur_s)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * 300.0 * i as f64 / 16000.0).sin())
            .collect()
    }

    fn padded(speech_s: f64, pad_s: f64) -> Waveform {
        let pad = vec![0.0; (pad_s * 16000.0) as usize];
        let mut s = pad.clone();
        s.extend(tone((speech_s * 16000.0) as usize));
        s.extend(pad);
        Waveform::new(s, 16000)
    }

    #[test]
    fn silence_has_no_segments() {
        assert!(energy_vad_segments(&Waveform::zeros(48000, 16000), 2.0).is_empty());
    }

    #[test]
    fn tone_between_silences() {
        let wave = padded(3.0, 1.0);
        let segs = energy_vad_segments(&wave, 2.0);
        assert_eq!(segs.len(), 1);
        let s = segs[0];
        // Two 10 ms hops of slack.
        assert!(((s.end - s.start) as i64 - 48000).abs() <= 320, "{s:?}");
        assert!((s.start as i64 - 16000).abs() <= 320, "{s:?}");
    }

    #[test]
    fn short_speech_is_dropped() {
        assert!(energy_vad_segments(&padded(1.5, 0.5), 2.0).is_empty());
        assert_eq!(energy_vad_segments(&padded(1.5, 0.5), 1.0).len(), 1);
    }

    #[test]
    fn short_gaps_merge_long_gaps_split() {
        let mut s = tone(20000);
        s.extend(vec![0.0; 3200]); // 0.2 s
        s.extend(tone(20000));
        let merged = energy_vad_segments(&Waveform::new(s, 16000), 2.0);
        assert_eq!(merged.len(), 1);

        let mut s = tone(40000);
        s.extend(vec![0.0; 8000]); // 0.5 s
        s.extend(tone(40000));
        let split = energy_vad_segments(&Waveform::new(s, 16000), 2.0);
        assert_eq!(split.len(), 2);
    }
}
