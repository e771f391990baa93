//! Reference EER by exhaustive threshold sweep, and a randomized comparison
//! of [`compute_eer`] against it.

use rand::Rng;

use super::metrics::compute_eer;
use super::Result;
use crate::seeded_rng;

/// Min over thresholds at every midpoint and +-inf of max(FAR, FRR), counted
/// directly from the raw scores. Quadratic; meant for checking.
pub fn brute_force_eer(scores: &[f64], labels: &[bool]) -> f64 {
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut cands = vec![f64::NEG_INFINITY, f64::INFINITY];
    cands.extend(sorted.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    let n_t = labels.iter().filter(|&&l| l).count() as f64;
    let n_n = labels.len() as f64 - n_t;
    cands
        .iter()
        .map(|&t| {
            let far = scores.iter().zip(labels).filter(|(s, l)| !**l && **s >= t).count() as f64 / n_n;
            let frr = scores.iter().zip(labels).filter(|(s, l)| **l && **s < t).count() as f64 / n_t;
            far.max(frr)
        })
        .fold(f64::INFINITY, f64::min)
        * 100.0
}

/// Outcome of [`eer_oracle_suite`].
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub sets: usize,
    /// Sets where |EER - oracle| exceeded 100 / min(#targets, #nontargets).
    pub failures: usize,
    /// Largest |EER - oracle| as a fraction of the allowed gap.
    pub worst_ratio: f64,
    /// Sets whose EER changed under an affine, exp or cube transform.
    pub transform_failures: usize,
    /// EER of targets {0.8, 0.6, 0.4} against nontargets {0.7, 0.5, 0.3}.
    pub hand_case: f64,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.transform_failures == 0 && (self.hand_case - 33.33).abs() < 0.01
    }
}

/// Compares [`compute_eer`] with [`brute_force_eer`] on `n_sets` random score
/// sets of 10 to 2000 trials with varying overlap.
pub fn eer_oracle_suite(seed: u64, n_sets: usize) -> Result<OracleReport> {
    let mut rng = seeded_rng(seed);
    let mut failures = 0;
    let mut transform_failures = 0;
    let mut worst_ratio: f64 = 0.0;
    for _ in 0..n_sets {
        let n = rng.gen_range(10..=2000);
        let n_t = rng.gen_range(1..n);
        let shift: f64 = rng.gen_range(0.0..3.0);
        let spread: f64 = rng.gen_range(0.2..2.0);
        let labels: Vec<bool> = (0..n).map(|i| i < n_t).collect();
        let scores: Vec<f64> = labels
            .iter()
            .map(|&l| rng.gen_range(-1.0..1.0) * spread + if l { shift } else { 0.0 })
            .collect();
        let (eer, _) = compute_eer(&scores, &labels)?;
        let gap = 100.0 / n_t.min(n - n_t) as f64;
        let ratio = (eer - brute_force_eer(&scores, &labels)).abs() / gap;
        worst_ratio = worst_ratio.max(ratio);
        if ratio > 1.0 {
            failures += 1;
        }
        let transforms: [fn(f64) -> f64; 3] = [|x| 2.5 * x - 1.0, f64::exp, |x| x * x * x];
        for f in transforms {
            let t: Vec<f64> = scores.iter().map(|&x| f(x)).collect();
            if compute_eer(&t, &labels)?.0 != eer {
                transform_failures += 1;
                break;
            }
        }
    }
    let scores = [0.8, 0.6, 0.4, 0.7, 0.5, 0.3];
    let labels = [true, true, true, false, false, false];
    let hand_case = compute_eer(&scores, &labels)?.0;
    Ok(OracleReport {
        sets: n_sets,
        failures,
        worst_ratio,
        transform_failures,
        hand_case,
    })
}
