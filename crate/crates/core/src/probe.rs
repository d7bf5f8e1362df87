//! Per-modality logistic-regression probes on raw embeddings.
//!
//! A probe that cannot separate the labels from one modality alone shows that
//! the signal lives only in cross-modal structure.

use serde::{Deserialize, Serialize};

use crate::dataio::{EmbeddingBundle, Label, ModalityKind};
use crate::error::{Error, Result};
use crate::metrics::{auc, ScoreSet};
use crate::tensor::kernels;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub iterations: usize,
    pub lr: f64,
    pub l2: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            iterations: 300,
            lr: 0.5,
            l2: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub modality: ModalityKind,
    mean: Vec<f64>,
    inv_std: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: f64,
}

fn features(bundle: &EmbeddingBundle, m: ModalityKind) -> Result<(Vec<Vec<f64>>, Vec<Label>)> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for s in &bundle.samples {
        if let Some(z) = s.embedding(m) {
            xs.push(z.iter().map(|&v| f64::from(v)).collect());
            ys.push(s.label);
        }
    }
    if xs.is_empty() {
        return Err(Error::param(format!("no sample carries the {m} modality")));
    }
    Ok((xs, ys))
}

impl LinearProbe {
    /// Full-batch gradient descent on standardized features.
    pub fn fit(bundle: &EmbeddingBundle, modality: ModalityKind, cfg: &ProbeConfig) -> Result<Self> {
        let (xs, ys) = features(bundle, modality)?;
        if !ys.contains(&Label::Authentic) || !ys.contains(&Label::Manipulated) {
            return Err(Error::param("probe training data must contain both labels"));
        }
        let (n, d) = (xs.len(), xs[0].len());
        let mean: Vec<f64> = (0..d).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / n as f64).collect();
        let inv_std: Vec<f64> = (0..d)
            .map(|j| {
                let var = xs.iter().map(|x| (x[j] - mean[j]).powi(2)).sum::<f64>() / n as f64;
                if var > 0.0 {
                    1.0 / var.sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        let mut probe = Self {
            modality,
            mean,
            inv_std,
            weights: vec![0.0; d],
            bias: 0.0,
        };
        let std_xs: Vec<Vec<f64>> = xs.iter().map(|x| probe.standardize(x)).collect();
        let targets: Vec<f64> = ys.iter().map(|y| y.as_f64()).collect();
        for _ in 0..cfg.iterations {
            let mut gw = vec![0.0; d];
            let mut gb = 0.0;
            for (x, &y) in std_xs.iter().zip(&targets) {
                let r = kernels::sigmoid(probe.logit_std(x)) - y;
                gw.iter_mut().zip(x).for_each(|(g, xi)| *g += r * xi);
                gb += r;
            }
            for (w, g) in probe.weights.iter_mut().zip(&gw) {
                *w -= cfg.lr * (g / n as f64 + cfg.l2 * *w);
            }
            probe.bias -= cfg.lr * gb / n as f64;
        }
        Ok(probe)
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.inv_std)
            .map(|((v, m), s)| (v - m) * s)
            .collect()
    }

    fn logit_std(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    pub fn score(&self, z: &[f64]) -> f64 {
        kernels::sigmoid(self.logit_std(&self.standardize(z)))
    }

    /// AUC of the probe on every sample of `bundle` that carries its modality.
    pub fn auc(&self, bundle: &EmbeddingBundle) -> Result<f64> {
        let (xs, ys) = features(bundle, self.modality)?;
        let scores: Vec<f64> = xs.iter().map(|x| self.score(x)).collect();
        auc(&ScoreSet::from_parts(&scores, &ys)?)
    }
}

/// Held-out AUC of a probe per modality, in `(audio, video, audio-visual)` order.
pub fn probe_aucs(train: &EmbeddingBundle, eval: &EmbeddingBundle, cfg: &ProbeConfig) -> Result<[f64; 3]> {
    let mut out = [0.0; 3];
    for m in ModalityKind::ALL {
        out[m.index()] = LinearProbe::fit(train, m, cfg)?.auc(eval)?;
    }
    Ok(out)
}
