//! Fusion of the refined modality tokens and the sigmoid classification head.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::{xavier_uniform, zeros_param};
use crate::refiner::TOKENS;
use crate::rng::rng_for;
use crate::tensor::{kernels, Graph, Tensor, Var};

pub const HIDDEN_WIDTH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionStrategy {
    /// `[h_a ‖ h_v ‖ h_av]`
    Concat,
    /// Elementwise average.
    Mean,
    /// `Σ w_m·h_m`; weights are non-negative and sum to 1.
    Weighted([f64; 3]),
}

impl FusionStrategy {
    pub fn validate(&self) -> Result<()> {
        if let Self::Weighted(w) = self {
            let sum: f64 = w.iter().sum();
            if w.iter().any(|v| !(*v >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::param(format!(
                    "fusion weights {w:?} must be non-negative and sum to 1"
                )));
            }
        }
        Ok(())
    }

    pub fn output_dim(&self, d_s: usize) -> usize {
        match self {
            Self::Concat => TOKENS * d_s,
            Self::Mean | Self::Weighted(_) => d_s,
        }
    }

    fn weights(&self) -> Option<[f64; 3]> {
        match self {
            Self::Concat => None,
            Self::Mean => Some([1.0 / 3.0; 3]),
            Self::Weighted(w) => Some(*w),
        }
    }
}

/// Fuses `refined` tokens (`[3·B, d_s]`, sample-major) into `[B, d_out]`.
pub fn fuse(g: &mut Graph, refined: Var, strategy: FusionStrategy) -> Result<Var> {
    strategy.validate()?;
    let (rows, d_s) = match g.shape(refined) {
        [r, d] if r % TOKENS == 0 && *r > 0 => (*r, *d),
        s => {
            return Err(Error::contract(format!(
                "fusion expects [3·B, d_s] refined tokens, got {s:?}"
            )))
        }
    };
    let batch = rows / TOKENS;
    let Some(weights) = strategy.weights() else {
        return g.reshape(refined, &[batch, TOKENS * d_s]);
    };
    let mut acc: Option<Var> = None;
    for (m, &w) in weights.iter().enumerate() {
        let idx: Vec<usize> = (0..batch).map(|b| b * TOKENS + m).collect();
        let part = g.gather_rows(refined, &idx)?;
        let part = g.scale(part, w);
        acc = Some(match acc {
            None => part,
            Some(a) => g.add(a, part)?,
        });
    }
    Ok(acc.expect("three modalities"))
}

/// Eager fusion of one sample's three refined vectors.
pub fn fuse_vectors(refined: &[Vec<f64>; 3], strategy: FusionStrategy) -> Result<Vec<f64>> {
    let d = refined[0].len();
    if refined.iter().any(|r| r.len() != d) {
        return Err(Error::shape("refined tokens differ in length"));
    }
    let mut g = Graph::new();
    let x = g.constant(vec![TOKENS, d], refined.concat())?;
    let out = fuse(&mut g, x, strategy)?;
    Ok(g.value(out).to_vec())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    /// `[64, d_in]`
    pub hidden_w: Tensor,
    pub hidden_b: Tensor,
    /// `[1, 64]`
    pub out_w: Tensor,
    pub out_b: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct ClassifierVars {
    pub hidden_w: Var,
    pub hidden_b: Var,
    pub out_w: Var,
    pub out_b: Var,
}

impl ClassifierHead {
    pub fn init(d_in: usize, seed: u64) -> Self {
        let mut rng = rng_for(seed, "init/classifier");
        Self {
            hidden_w: xavier_uniform(&mut rng, HIDDEN_WIDTH, d_in),
            hidden_b: zeros_param(&[HIDDEN_WIDTH]),
            out_w: xavier_uniform(&mut rng, 1, HIDDEN_WIDTH),
            out_b: zeros_param(&[1]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden_w.shape()[1]
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("classifier.hidden.w".into(), &self.hidden_w),
            ("classifier.hidden.b".into(), &self.hidden_b),
            ("classifier.out.w".into(), &self.out_w),
            ("classifier.out.b".into(), &self.out_b),
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.hidden_w,
            &mut self.hidden_b,
            &mut self.out_w,
            &mut self.out_b,
        ]
    }

    pub fn bind(&self, g: &mut Graph) -> ClassifierVars {
        ClassifierVars {
            hidden_w: g.leaf(&self.hidden_w),
            hidden_b: g.leaf(&self.hidden_b),
            out_w: g.leaf(&self.out_w),
            out_b: g.leaf(&self.out_b),
        }
    }

    /// Pre-sigmoid logits `[B, 1]`.
    pub fn logits(&self, g: &mut Graph, vars: ClassifierVars, fused: Var, dropout: f64) -> Result<Var> {
        let d_in = *g.shape(fused).last().unwrap_or(&0);
        if d_in != self.input_dim() {
            return Err(Error::contract(format!(
                "classifier expects {} features, got {d_in}",
                self.input_dim()
            )));
        }
        let h = g.linear(fused, vars.hidden_w, vars.hidden_b)?;
        let h = g.relu(h);
        let h = g.dropout(h, dropout)?;
        g.linear(h, vars.out_w, vars.out_b)
    }

    /// `ŷ ∈ (0, 1)` for one fused vector in evaluation mode.
    pub fn classify(&self, fused: &[f64]) -> Result<f64> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g);
        let x = g.constant(vec![1, fused.len()], fused.to_vec())?;
        let logit = self.logits(&mut g, vars, x, 0.0)?;
        let p = g.sigmoid(logit);
        Ok(g.scalar(p))
    }
}

/// Binary cross-entropy of one prediction, evaluated from its logit.
pub fn bce_from_logit(logit: f64, label: f64) -> f64 {
    kernels::softplus(logit) - logit * label
}

/// Binary cross-entropy of one probability `ŷ ∈ (0,1)`.
pub fn bce_loss(prob: f64, label: f64) -> Result<f64> {
    if !(prob > 0.0 && prob < 1.0) {
        return Err(Error::Domain(format!("prediction {prob} outside (0, 1)")));
    }
    if label != 0.0 && label != 1.0 {
        return Err(Error::Domain(format!("label {label} is not 0 or 1")));
    }
    Ok(bce_from_logit((prob / (1.0 - prob)).ln(), label))
}

pub fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::param(format!("loss weight λ = {lambda} outside [0, 1]")));
    }
    Ok(())
}

/// `λ·L_contrast + (1−λ)·L_cls`
pub fn total_loss_value(contrast: f64, cls: f64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(lambda * contrast + (1.0 - lambda) * cls)
}

pub fn total_loss(g: &mut Graph, contrast: Var, cls: Var, lambda: f64) -> Result<Var> {
    check_lambda(lambda)?;
    let a = g.scale(contrast, lambda);
    let b = g.scale(cls, 1.0 - lambda);
    g.add(a, b)
}
