//! Biometric classification metrics and the disparity planarity probe.
//!
//! Scores are probabilities of the positive (real face) class; a sample is
//! accepted as positive when `score >= threshold`.

use std::fmt::Write;

use crate::map::Map;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("score set is empty")]
    Empty,
    #[error("score set needs both classes")]
    SingleClass,
}

/// `(score, is_positive)`.
pub type Scored = (f64, bool);

fn class_counts(s: &[Scored]) -> Result<(usize, usize), MetricError> {
    if s.is_empty() {
        return Err(MetricError::Empty);
    }
    let pos = s.iter().filter(|x| x.1).count();
    let neg = s.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricError::SingleClass);
    }
    Ok((pos, neg))
}

/// ROC operating points `(fpr, tpr)` from the strictest threshold (nothing
/// accepted) to the loosest (everything accepted), one per distinct score.
pub fn roc_points(s: &[Scored]) -> Result<Vec<(f64, f64)>, MetricError> {
    let (pos, neg) = class_counts(s)?;
    let mut sorted: Vec<Scored> = s.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut pts = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        pts.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(pts)
}

/// Mann-Whitney AUC: the fraction of positive/negative pairs ranked
/// correctly, ties counting one half.
pub fn auc(s: &[Scored]) -> Result<f64, MetricError> {
    let (pos, neg) = class_counts(s)?;
    let mut sorted: Vec<Scored> = s.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    // negatives strictly below plus half of tied negatives, per positive
    let mut wins = 0.0;
    let mut neg_below = 0usize;
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        let (mut p, mut n) = (0usize, 0usize);
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1 {
                p += 1;
            } else {
                n += 1;
            }
            i += 1;
        }
        wins += p as f64 * (neg_below as f64 + 0.5 * n as f64);
        neg_below += n;
    }
    Ok(wins / (pos as f64 * neg as f64))
}

/// Equal error rate: the threshold sweep is walked from accept-all to
/// reject-all and the first crossing of FPR and FNR is linearly
/// interpolated between the two operating points that bracket it.
pub fn eer(s: &[Scored]) -> Result<f64, MetricError> {
    let pts = roc_points(s)?;
    // (fpr, fnr) from loosest to strictest threshold
    let rates: Vec<(f64, f64)> = pts.iter().rev().map(|&(f, t)| (f, 1.0 - t)).collect();
    for w in rates.windows(2) {
        let (f0, n0) = w[0];
        let (f1, n1) = w[1];
        let d0 = f0 - n0;
        let d1 = f1 - n1;
        if d0 == 0.0 {
            return Ok(f0);
        }
        if d0 > 0.0 && d1 <= 0.0 {
            let a = d0 / (d0 - d1);
            return Ok(f0 + a * (f1 - f0));
        }
    }
    // the last point is (0, 1), so a crossing always exists
    unreachable!("ROC sweep ends with fpr - fnr = -1")
}

/// Largest TPR reachable with FPR not above each target (step ROC).
pub fn tpr_at_fpr(s: &[Scored], targets: &[f64]) -> Result<Vec<f64>, MetricError> {
    let pts = roc_points(s)?;
    Ok(targets
        .iter()
        .map(|&target| {
            pts.iter()
                .filter(|p| p.0 <= target)
                .map(|p| p.1)
                .fold(0.0, f64::max)
        })
        .collect())
}

pub fn acc(s: &[Scored], threshold: f64) -> Result<f64, MetricError> {
    if s.is_empty() {
        return Err(MetricError::Empty);
    }
    let correct = s.iter().filter(|&&(score, pos)| (score >= threshold) == pos).count();
    Ok(correct as f64 / s.len() as f64)
}

/// `fpr,tpr` rows from `(0,0)` to `(1,1)`.
pub fn export_roc(s: &[Scored]) -> Result<String, MetricError> {
    let mut out = String::from("fpr,tpr\n");
    for (f, t) in roc_points(s)? {
        writeln!(out, "{f},{t}").unwrap();
    }
    Ok(out)
}

/// Per-class counts over `bins` equal bins on `[0, 1]` (the last bin closed).
pub fn export_histogram(s: &[Scored], bins: usize) -> String {
    let bins = bins.max(1);
    let mut counts = vec![(0usize, 0usize); bins];
    for &(score, pos) in s {
        let b = ((score.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        if pos {
            counts[b].1 += 1;
        } else {
            counts[b].0 += 1;
        }
    }
    let mut out = String::from("bin_lo,bin_hi,attack,real\n");
    for (b, (a, r)) in counts.iter().enumerate() {
        let lo = b as f64 / bins as f64;
        let hi = (b + 1) as f64 / bins as f64;
        writeln!(out, "{lo},{hi},{a},{r}").unwrap();
    }
    out
}

/// Least-squares plane `a + b x + c y` over the masked pixels (mask > 0.5,
/// or all pixels) and the residuals `d - plane` in mask order.
pub fn plane_fit(d: &Map, mask: Option<&Map>) -> ([f64; 3], Vec<f64>) {
    let pts: Vec<(f64, f64, f64)> = (0..d.height)
        .flat_map(|y| (0..d.width).map(move |x| (x, y)))
        .filter(|&(x, y)| mask.map_or(true, |m| m.get(x, y) > 0.5))
        .map(|(x, y)| (x as f64, y as f64, d.get(x, y) as f64))
        .collect();
    assert!(pts.len() >= 3, "plane fit needs at least three points");
    let n = pts.len() as f64;
    let (mx, my, mz) = pts.iter().fold((0.0, 0.0, 0.0), |a, p| (a.0 + p.0 / n, a.1 + p.1 / n, a.2 + p.2 / n));
    let (mut sxx, mut sxy, mut syy, mut sxz, mut syz) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(x, y, z) in &pts {
        let (u, v, w) = (x - mx, y - my, z - mz);
        sxx += u * u;
        sxy += u * v;
        syy += v * v;
        sxz += u * w;
        syz += v * w;
    }
    let det = sxx * syy - sxy * sxy;
    let (b, c) = if det.abs() > 1e-12 {
        ((sxz * syy - syz * sxy) / det, (syz * sxx - sxz * sxy) / det)
    } else if sxx > 1e-12 {
        (sxz / sxx, 0.0)
    } else if syy > 1e-12 {
        (0.0, syz / syy)
    } else {
        (0.0, 0.0)
    };
    let a = mz - b * mx - c * my;
    let res = pts.iter().map(|&(x, y, z)| z - (a + b * x + c * y)).collect();
    ([a, b, c], res)
}

/// Maximum absolute residual of the least-squares plane fit.
pub fn plane_fit_residual(d: &Map, mask: Option<&Map>) -> f64 {
    plane_fit(d, mask).1.iter().fold(0.0, |m, r| m.max(r.abs()))
}

/// Planarity probe of a disparity map: large for curved surfaces, near zero
/// for flat ones.
pub fn planarity_probe(d: &Map, mask: Option<&Map>) -> f64 {
    plane_fit_residual(d, mask)
}
