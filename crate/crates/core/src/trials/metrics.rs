use super::{Result, TrialsError};

/// Target prior of the detection cost function.
pub const MIN_DCF_P_TARGET: f64 = 0.01;

/// One operating point: acceptance at `score >= threshold`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

/// FAR/FRR at every distinct score and at `+inf`, thresholds ascending.
pub fn det_points(scores: &[f64], labels: &[bool]) -> Result<Vec<DetPoint>> {
    let n_tgt = labels.iter().filter(|&&l| l).count();
    let n_non = labels.len() - n_tgt;
    if scores.len() != labels.len() || n_tgt == 0 || n_non == 0 || scores.iter().any(|s| s.is_nan()) {
        return Err(TrialsError::DegenerateLabels);
    }
    let mut pairs: Vec<(f64, bool)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut points = Vec::new();
    // Counts of scores strictly below the current threshold.
    let (mut tgt_below, mut non_below) = (0usize, 0usize);
    let mut i = 0;
    while i < pairs.len() {
        let t = pairs[i].0;
        points.push(DetPoint {
            threshold: t,
            far: (n_non - non_below) as f64 / n_non as f64,
            frr: tgt_below as f64 / n_tgt as f64,
        });
        while i < pairs.len() && pairs[i].0 == t {
            if pairs[i].1 {
                tgt_below += 1;
            } else {
                non_below += 1;
            }
            i += 1;
        }
    }
    points.push(DetPoint {
        threshold: f64::INFINITY,
        far: 0.0,
        frr: 1.0,
    });
    Ok(points)
}

/// Equal error rate in percent and its threshold.
///
/// The sweep stops at the first operating point where FRR reaches FAR; the
/// crossing is located by linear interpolation between that point and the
/// previous one, and the threshold is interpolated the same way (or taken
/// from the lower point when the upper one is `+inf`).
pub fn compute_eer(scores: &[f64], labels: &[bool]) -> Result<(f64, f64)> {
    let pts = det_points(scores, labels)?;
    let k = pts
        .iter()
        .position(|p| p.frr >= p.far)
        .expect("the +inf point has frr 1 >= far 0");
    let p2 = pts[k];
    if k == 0 || p2.frr == p2.far {
        return Ok((100.0 * p2.far, p2.threshold));
    }
    let p1 = pts[k - 1];
    let d1 = p1.far - p1.frr;
    let d2 = p2.frr - p2.far;
    let a = d1 / (d1 + d2);
    let eer = p1.frr + a * (p2.frr - p1.frr);
    let threshold = if p2.threshold.is_finite() {
        p1.threshold + a * (p2.threshold - p1.threshold)
    } else {
        p1.threshold
    };
    Ok((100.0 * eer, threshold))
}

/// Normalized minimum detection cost over all thresholds.
pub fn compute_min_dcf(scores: &[f64], labels: &[bool], p_target: f64, c_miss: f64, c_fa: f64) -> Result<f64> {
    let pts = det_points(scores, labels)?;
    let norm = (c_miss * p_target).min(c_fa * (1.0 - p_target));
    let best = pts
        .iter()
        .map(|p| c_miss * p_target * p.frr + c_fa * (1.0 - p_target) * p.far)
        .fold(f64::INFINITY, f64::min);
    Ok(best / norm)
}
