//! Detection scores: EER, AUC, accuracy and ROC/DET curves.
//!
//! Higher scores mean "more likely manipulated". A threshold `t` fires on every
//! score `≥ t`.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataio::Label;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreSet {
    entries: Vec<(f64, Label)>,
}

impl ScoreSet {
    pub fn new(entries: Vec<(f64, Label)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Metric("empty score set".into()));
        }
        if let Some((s, _)) = entries.iter().find(|(s, _)| !s.is_finite()) {
            return Err(Error::Metric(format!("non-finite score {s}")));
        }
        Ok(Self { entries })
    }

    pub fn from_parts(scores: &[f64], labels: &[Label]) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Metric(format!(
                "{} scores for {} labels",
                scores.len(),
                labels.len()
            )));
        }
        Self::new(scores.iter().copied().zip(labels.iter().copied()).collect())
    }

    pub fn entries(&self) -> &[(f64, Label)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.entries.iter().filter(|(_, l)| *l == label).count()
    }

    fn require_both(&self) -> Result<(usize, usize)> {
        let real = self.count(Label::Authentic);
        let fake = self.count(Label::Manipulated);
        if real == 0 || fake == 0 {
            return Err(Error::Metric(format!(
                "need both labels, got {real} authentic and {fake} manipulated"
            )));
        }
        Ok((real, fake))
    }

    /// `(threshold, authentic ≥ t, manipulated ≥ t)` for each distinct score,
    /// in descending threshold order.
    fn sweep(&self) -> Vec<(f64, usize, usize)> {
        let mut sorted = self.entries.clone();
        sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));
        let mut out: Vec<(f64, usize, usize)> = Vec::new();
        let (mut real, mut fake) = (0, 0);
        for (i, &(score, label)) in sorted.iter().enumerate() {
            match label {
                Label::Authentic => real += 1,
                Label::Manipulated => fake += 1,
            }
            if sorted.get(i + 1).map_or(true, |next| next.0 != score) {
                out.push((score, real, fake));
            }
        }
        out
    }
}

/// Equal error rate, linearly interpolated between adjacent thresholds.
pub fn eer(scores: &ScoreSet) -> Result<f64> {
    let (real, fake) = scores.require_both()?;
    let (nr, nf) = (real as f64, fake as f64);
    // Ascending thresholds, then +∞ where nothing fires.
    let mut rates: Vec<(f64, f64)> = scores
        .sweep()
        .iter()
        .rev()
        .map(|&(_, r, f)| (r as f64 / nr, (fake - f) as f64 / nf))
        .collect();
    rates.push((0.0, 1.0));
    let diff = |(fpr, fnr): (f64, f64)| fpr - fnr;
    let i = rates
        .iter()
        .position(|&p| diff(p) <= 0.0)
        .expect("the +∞ threshold has FPR − FNR = −1");
    let cur = rates[i];
    if diff(cur) == 0.0 || i == 0 {
        return Ok(cur.0);
    }
    let prev = rates[i - 1];
    let alpha = diff(prev) / (diff(prev) - diff(cur));
    Ok(prev.0 + alpha * (cur.0 - prev.0))
}

/// Mann–Whitney AUC with ties counted as one half.
pub fn auc(scores: &ScoreSet) -> Result<f64> {
    let (real, fake) = scores.require_both()?;
    Ok(auc_doubled_wins(scores) as f64 / (2 * real * fake) as f64)
}

/// `2·#(manipulated > authentic) + #(ties)` over all cross-label pairs.
pub fn auc_doubled_wins(scores: &ScoreSet) -> u64 {
    let mut sorted = scores.entries.clone();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));
    let (mut wins, mut real_below) = (0u64, 0u64);
    for group in sorted.chunk_by(|a, b| a.0 == b.0) {
        let real_eq = group.iter().filter(|(_, l)| *l == Label::Authentic).count() as u64;
        let fake_eq = group.len() as u64 - real_eq;
        wins += fake_eq * (2 * real_below + real_eq);
        real_below += real_eq;
    }
    wins
}

/// Fraction of samples where `score ≥ threshold` agrees with `label == manipulated`.
pub fn accuracy(scores: &ScoreSet, threshold: f64) -> f64 {
    let correct = scores
        .entries
        .iter()
        .filter(|(s, l)| (*s >= threshold) == (*l == Label::Manipulated))
        .count();
    correct as f64 / scores.len().max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

impl CurvePoint {
    pub fn fnr(&self) -> f64 {
        1.0 - self.tpr
    }
}

/// ROC points from `(0,0)` through every distinct threshold (descending) to `(1,1)`.
pub fn roc_points(scores: &ScoreSet) -> Result<Vec<CurvePoint>> {
    let (real, fake) = scores.require_both()?;
    let mut out = vec![CurvePoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    out.extend(scores.sweep().into_iter().map(|(t, r, f)| CurvePoint {
        threshold: t,
        fpr: r as f64 / real as f64,
        tpr: f as f64 / fake as f64,
    }));
    Ok(out)
}

/// `(FPR, FNR)` at the same thresholds as [`roc_points`].
pub fn det_points(scores: &ScoreSet) -> Result<Vec<(f64, f64)>> {
    Ok(roc_points(scores)?.iter().map(|p| (p.fpr, p.fnr())).collect())
}

/// Trapezoidal area under a ROC curve.
pub fn trapezoid(points: &[CurvePoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub eer: f64,
    pub auc: f64,
    pub acc: f64,
    pub n_real: usize,
    pub n_fake: usize,
    pub config_hash: String,
}

impl MetricsReport {
    pub fn compute(scores: &ScoreSet, config_hash: impl Into<String>) -> Result<Self> {
        Ok(Self {
            eer: eer(scores)?,
            auc: auc(scores)?,
            acc: accuracy(scores, 0.5),
            n_real: scores.count(Label::Authentic),
            n_fake: scores.count(Label::Manipulated),
            config_hash: config_hash.into(),
        })
    }
}

/// `threshold,fpr,tpr,fnr` rows.
pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("threshold,fpr,tpr,fnr\n");
    for p in points {
        let _ = writeln!(out, "{},{},{},{}", p.threshold, p.fpr, p.tpr, p.fnr());
    }
    out
}
